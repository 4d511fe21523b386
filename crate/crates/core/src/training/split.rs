use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::EmotionLabel;

const MIN_PER_CLASS: usize = 3;

/// Sorted sample indices of each partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DataSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

fn classes(ds: &Dataset, target: EmotionLabel) -> Result<[Vec<usize>; 2]> {
    let (pos, neg): (Vec<usize>, Vec<usize>) =
        (0..ds.len()).partition(|&i| ds.samples[i].label == target);
    for (name, c) in [("positive", &pos), ("negative", &neg)] {
        if c.len() < MIN_PER_CLASS {
            return Err(Error::Stratification(format!(
                "{name} class for {target} has {} samples, need at least {MIN_PER_CLASS}",
                c.len()
            )));
        }
    }
    Ok([pos, neg])
}

/// Splits `total` into per-class shares proportional to `sizes`
/// (largest remainder), giving every class at least one where possible.
fn allocate(sizes: [usize; 2], fraction: f64) -> [usize; 2] {
    let n: usize = sizes.iter().sum();
    let total = ((n as f64) * fraction).round() as usize;
    let exact = sizes.map(|s| s as f64 * total as f64 / n as f64);
    let mut out = exact.map(|e| e.floor() as usize);
    let mut left = total - out.iter().sum::<usize>();
    let mut by_rem = [0, 1];
    by_rem.sort_by(|&a, &b| {
        (exact[b] - exact[b].floor())
            .total_cmp(&(exact[a] - exact[a].floor()))
            .then(a.cmp(&b))
    });
    for &c in by_rem.iter().cycle() {
        if left == 0 {
            break;
        }
        out[c] += 1;
        left -= 1;
    }
    for c in 0..2 {
        let other = 1 - c;
        if out[c] == 0 && total >= 2 && out[other] > 1 {
            out[c] = 1;
            out[other] -= 1;
        }
        out[c] = out[c].min(sizes[c].saturating_sub(1));
    }
    out
}

fn sizes(classes: &[Vec<usize>; 2]) -> [usize; 2] {
    [classes[0].len(), classes[1].len()]
}

fn take(classes: &mut [Vec<usize>; 2], counts: [usize; 2]) -> Vec<usize> {
    let mut out = Vec::new();
    for (c, k) in classes.iter_mut().zip(counts) {
        out.extend(c.drain(..k));
    }
    out.sort_unstable();
    out
}

fn shuffled(ds: &Dataset, target: EmotionLabel, seed: u64) -> Result<[Vec<usize>; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cls = classes(ds, target)?;
    for c in cls.iter_mut() {
        c.shuffle(&mut rng);
    }
    Ok(cls)
}

/// Stratified train/validation/test partition. The test share is taken
/// first; validation is then `val_fraction` of what remains.
pub fn split_dataset(
    ds: &Dataset,
    target: EmotionLabel,
    seed: u64,
    val_fraction: f64,
    test_fraction: f64,
) -> Result<DataSplit> {
    for (name, f) in [
        ("val_fraction", val_fraction),
        ("test_fraction", test_fraction),
    ] {
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Config(format!("{name} must be in (0, 1), got {f}")));
        }
    }
    let mut cls = shuffled(ds, target, seed)?;
    let test = {
        let n = sizes(&cls);
        take(&mut cls, allocate(n, test_fraction))
    };
    let val = {
        let n = sizes(&cls);
        take(&mut cls, allocate(n, val_fraction))
    };
    let train = {
        let n = sizes(&cls);
        take(&mut cls, n)
    };
    Ok(DataSplit { train, val, test })
}

/// Stratified train/validation partition with an empty test set, for data
/// that is already a training pool.
pub fn split_train_val(
    ds: &Dataset,
    target: EmotionLabel,
    seed: u64,
    val_fraction: f64,
) -> Result<DataSplit> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Config(format!(
            "val_fraction must be in (0, 1), got {val_fraction}"
        )));
    }
    let mut cls = shuffled(ds, target, seed)?;
    let val = {
        let n = sizes(&cls);
        take(&mut cls, allocate(n, val_fraction))
    };
    let train = {
        let n = sizes(&cls);
        take(&mut cls, n)
    };
    Ok(DataSplit {
        train,
        val,
        test: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::VideoSample;
    use crate::model::EmotionLabel::*;
    use crate::tensor::Tensor;

    fn ds(pos: usize, neg: usize) -> Dataset {
        let samples = (0..pos + neg)
            .map(|i| {
                let label = if i < pos { Fear } else { Sadness };
                VideoSample::new(i as u64, Tensor::filled(&[1, 2, 2], 0.5), label).unwrap()
            })
            .collect();
        Dataset::new(1, 2, samples).unwrap()
    }

    #[test]
    fn ninety_ten() {
        let s = split_train_val(&ds(50, 50), Fear, 0, 0.1).unwrap();
        assert_eq!((s.train.len(), s.val.len()), (90, 10));
        let s = split_train_val(&ds(17, 83), Fear, 0, 0.1).unwrap();
        assert_eq!((s.train.len(), s.val.len()), (90, 10));
    }

    #[test]
    fn ckplus_sizes() {
        let d = ds(83, 491);
        let s = split_dataset(&d, Fear, 4, 0.1, 87.0 / 574.0).unwrap();
        assert_eq!(s.test.len(), 87);
        assert_eq!(s.train.len() + s.val.len(), 487);
    }

    #[test]
    fn partition_properties() {
        let d = ds(12, 40);
        let a = split_dataset(&d, Fear, 9, 0.1, 0.15).unwrap();
        assert_eq!(a, split_dataset(&d, Fear, 9, 0.1, 0.15).unwrap());
        let mut all: Vec<usize> = a
            .train
            .iter()
            .chain(&a.val)
            .chain(&a.test)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..52).collect::<Vec<_>>());
        for part in [&a.train, &a.val, &a.test] {
            assert!(part.iter().any(|&i| d.samples[i].label == Fear));
            assert!(part.iter().any(|&i| d.samples[i].label != Fear));
        }
        assert_ne!(a, split_dataset(&d, Fear, 10, 0.1, 0.15).unwrap());
    }

    #[test]
    fn too_few_of_a_class() {
        assert!(matches!(
            split_dataset(&ds(2, 40), Fear, 0, 0.1, 0.15),
            Err(Error::Stratification(_))
        ));
    }
}
