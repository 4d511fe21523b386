use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, VideoSample, DEFAULT_CROP_SIZE};
use crate::error::{Error, Result};
use crate::export::write_atomic;
use crate::model::EmotionLabel;
use crate::tensor::Tensor;

pub const MANIFEST_VERSION: u32 = 1;
pub const SAMPLE_MAGIC: &[u8; 4] = b"LMKT";
pub const SAMPLE_VERSION: u32 = 1;

/// JSON manifest describing a dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub frames: usize,
    pub landmarks: usize,
    #[serde(default = "default_crop")]
    pub crop_size: f64,
    pub samples: Vec<SampleRecord>,
}

fn default_crop() -> f64 {
    DEFAULT_CROP_SIZE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: u64,
    pub label: EmotionLabel,
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    #[serde(default)]
    pub augmented: bool,
}

fn load_err(id: u64, reason: impl Into<String>) -> Error {
    Error::SampleLoad {
        sample_id: id,
        reason: reason.into(),
    }
}

/// Reads one sample file. `.csv` files hold rows `frame,coord,v_0,…,v_{L-1}`
/// with `coord` 0 for x and 1 for y; anything else is the binary format:
/// `"LMKT"`, `u32` version, `u32 P`, `u32 L`, then `P·2·L` little-endian
/// `f64` in frame, coordinate, landmark order.
pub fn read_sample_file(path: &Path, id: u64) -> Result<Tensor> {
    let is_csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        read_sample_csv(path, id)
    } else {
        let bytes = fs::read(path).map_err(|e| load_err(id, format!("{}: {e}", path.display())))?;
        decode_sample(&bytes, id)
    }
}

fn decode_sample(bytes: &[u8], id: u64) -> Result<Tensor> {
    if bytes.len() < 16 || &bytes[..4] != SAMPLE_MAGIC {
        return Err(load_err(id, "bad magic"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    if word(4) != SAMPLE_VERSION as usize {
        return Err(load_err(
            id,
            format!("unsupported sample version {}", word(4)),
        ));
    }
    let (p, l) = (word(8), word(12));
    if p == 0 || l == 0 {
        return Err(load_err(id, "empty frame or landmark count"));
    }
    let n = p * 2 * l;
    if bytes.len() != 16 + 8 * n {
        return Err(load_err(
            id,
            format!(
                "expected {} payload bytes, found {}",
                8 * n,
                bytes.len() - 16
            ),
        ));
    }
    let values = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(&[p, 2, l], values)
}

fn encode_sample(frames: &Tensor) -> Vec<u8> {
    let s = frames.shape();
    let mut out = Vec::with_capacity(16 + 8 * frames.len());
    out.extend_from_slice(SAMPLE_MAGIC);
    for w in [SAMPLE_VERSION, s[0] as u32, s[2] as u32] {
        out.extend_from_slice(&w.to_le_bytes());
    }
    for v in frames.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn read_sample_csv(path: &Path, id: u64) -> Result<Tensor> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| load_err(id, format!("{}: {e}", path.display())))?;
    let mut rows: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| load_err(id, e.to_string()))?;
        let num = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| load_err(id, format!("{s:?}: {e}")))
        };
        if rec.len() < 3 {
            return Err(load_err(
                id,
                "csv rows need frame, coord and at least one value",
            ));
        }
        let frame = rec[0]
            .trim()
            .parse::<usize>()
            .map_err(|e| load_err(id, e.to_string()))?;
        let coord = rec[1]
            .trim()
            .parse::<usize>()
            .map_err(|e| load_err(id, e.to_string()))?;
        let vals = rec.iter().skip(2).map(num).collect::<Result<Vec<_>>>()?;
        rows.push((frame, coord, vals));
    }
    if rows.is_empty() || !rows.len().is_multiple_of(2) {
        return Err(load_err(id, "csv sample needs an x and a y row per frame"));
    }
    let p = rows.len() / 2;
    let l = rows[0].2.len();
    rows.sort_by_key(|r| (r.0, r.1));
    let mut values = Vec::with_capacity(p * 2 * l);
    for (i, (frame, coord, vals)) in rows.into_iter().enumerate() {
        if frame != i / 2 || coord != i % 2 || vals.len() != l {
            return Err(load_err(
                id,
                format!("csv row {i} is out of place or ragged"),
            ));
        }
        values.extend(vals);
    }
    Tensor::new(&[p, 2, l], values)
}

pub fn write_sample_file(path: &Path, frames: &Tensor) -> Result<()> {
    if frames.rank() != 3 || frames.shape()[1] != 2 {
        return Err(Error::Argument(format!(
            "expected P×2×L, got {:?}",
            frames.shape()
        )));
    }
    write_atomic(path, &encode_sample(frames))
}

/// Loads a dataset from its manifest, checking every sample against the
/// declared frame and landmark counts.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::format(manifest_path, e.to_string()))?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(Error::format(
            manifest_path,
            format!("unsupported manifest version {}", manifest.format_version),
        ));
    }
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for rec in &manifest.samples {
        let frames = read_sample_file(&root.join(&rec.path), rec.id)?;
        let mut s = VideoSample::new(rec.id, frames, rec.label)?;
        s.augmented = rec.augmented;
        samples.push(s);
    }
    let ds = Dataset {
        frames: manifest.frames,
        landmarks: manifest.landmarks,
        crop_size: manifest.crop_size,
        samples,
    };
    ds.validate()?;
    log::info!(
        "loaded {} samples from {}",
        ds.len(),
        manifest_path.display()
    );
    Ok(ds)
}

/// Writes `manifest.json` plus one binary file per sample under `dir`.
/// Returns the manifest path.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<PathBuf> {
    ds.validate()?;
    let sample_dir = dir.join("samples");
    fs::create_dir_all(&sample_dir).map_err(|e| Error::io(&sample_dir, e))?;
    let mut records = Vec::with_capacity(ds.len());
    for s in &ds.samples {
        let rel = PathBuf::from("samples").join(format!("{}.lmk", s.id));
        write_sample_file(&dir.join(&rel), &s.frames)?;
        records.push(SampleRecord {
            id: s.id,
            label: s.label,
            path: rel,
            augmented: s.augmented,
        });
    }
    let manifest = DatasetManifest {
        format_version: MANIFEST_VERSION,
        frames: ds.frames,
        landmarks: ds.landmarks,
        crop_size: ds.crop_size,
        samples: records,
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    write_atomic(&path, &json)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: u64) -> VideoSample {
        VideoSample::new(
            id,
            Tensor::from_fn(&[3, 2, 4], |i| (i as f64 * 0.37 + id as f64).fract()),
            EmotionLabel::Sadness,
        )
        .unwrap()
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = Dataset::new(3, 4, vec![sample(3), sample(11)]).unwrap();
        ds.samples[1].augmented = true;
        let path = save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn binary_errors_name_the_sample() {
        let bytes = encode_sample(&sample(0).frames);
        assert!(decode_sample(&bytes, 5).is_ok());
        let err = decode_sample(&bytes[..bytes.len() - 8], 5).unwrap_err();
        assert!(matches!(err, Error::SampleLoad { sample_id: 5, .. }));
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(decode_sample(&bad, 5).is_err());
    }

    #[test]
    fn manifest_shape_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::new(3, 4, vec![sample(1)]).unwrap();
        let path = save_dataset(&ds, dir.path()).unwrap();
        let text = fs::read_to_string(&path)
            .unwrap()
            .replace("\"landmarks\": 4", "\"landmarks\": 5");
        fs::write(&path, text).unwrap();
        assert!(matches!(
            load_dataset(&path),
            Err(Error::SampleLoad { sample_id: 1, .. })
        ));
    }

    #[test]
    fn csv_samples() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        fs::write(
            &p,
            "frame,coord,l0,l1\n0,0,0.1,0.2\n0,1,0.3,0.4\n1,0,0.5,0.6\n1,1,0.7,0.8\n",
        )
        .unwrap();
        let t = read_sample_file(&p, 0).unwrap();
        assert_eq!(t.shape(), &[2, 2, 2]);
        assert_eq!(t.at(&[1, 1, 0]), 0.7);
        fs::write(&p, "frame,coord,l0,l1\n0,0,0.1,0.2\n0,1,0.3\n").unwrap();
        assert!(read_sample_file(&p, 9).is_err());
    }
}
