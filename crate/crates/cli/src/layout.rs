use std::path::Path;

use anyhow::{bail, Result};

use emo_ig::data::Dataset;
use emo_ig::export::{fmt_f64, parse_f64, read_csv, CsvTable};
use emo_ig::Tensor;

/// Reference landmark positions, `2×L`, as a `landmark,x,y` table.
pub struct Layout(pub Tensor);

impl CsvTable for Layout {
    fn header(&self) -> Vec<String> {
        ["landmark", "x", "y"].map(String::from).to_vec()
    }

    fn rows(&self) -> Vec<Vec<String>> {
        let l = self.0.shape()[1];
        (0..l)
            .map(|n| {
                vec![
                    n.to_string(),
                    fmt_f64(self.0.at(&[0, n])),
                    fmt_f64(self.0.at(&[1, n])),
                ]
            })
            .collect()
    }
}

pub fn read_layout(path: &Path) -> Result<Tensor> {
    let (header, rows) = read_csv(path)?;
    if header != ["landmark", "x", "y"] {
        bail!("{}: expected landmark,x,y columns", path.display());
    }
    let l = rows.len();
    let mut t = Tensor::zeros(&[2, l.max(1)]);
    for (i, r) in rows.iter().enumerate() {
        if r[0].parse::<usize>().ok() != Some(i) {
            bail!("{}: row {i} is out of order", path.display());
        }
        t.set(&[0, i], parse_f64(&r[1])?);
        t.set(&[1, i], parse_f64(&r[2])?);
    }
    Ok(t)
}

/// Mean first-frame coordinates over the dataset.
pub fn mean_first_frame(ds: &Dataset) -> Result<Tensor> {
    if ds.is_empty() {
        bail!("cannot derive a reference layout from an empty dataset");
    }
    let l = ds.landmarks;
    let mut t = Tensor::zeros(&[2, l]);
    for s in &ds.samples {
        for a in 0..2 {
            for n in 0..l {
                t.set(&[a, n], t.at(&[a, n]) + s.coord(0, a, n));
            }
        }
    }
    Ok(t.map(|v| v / ds.len() as f64))
}
