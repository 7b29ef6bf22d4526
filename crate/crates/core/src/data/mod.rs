//! Datasets, seeded splits and generators.

mod idx;
mod synth;

pub use idx::{encode_idx_images, encode_idx_labels, load_idx, parse_idx};
pub use synth::{gen_blobs, gen_two_spirals};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Train/validation/test fractions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.15,
            test: 0.15,
        }
    }
}

/// Disjoint, exhaustive index sets over a dataset.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Shuffles `0..n` with `seed` and cuts it by `fractions`.
    pub fn new(n: usize, fractions: SplitFractions, seed: u64) -> Result<Self> {
        let SplitFractions { train, val, test } = fractions;
        let ok =
            [train, val, test].iter().all(|f| (0.0..=1.0).contains(f)) && ((train + val + test) - 1.0).abs() < 1e-9;
        if !ok {
            return Err(Error::Config(format!(
                "split fractions {train}/{val}/{test} must be in [0, 1] and sum to 1"
            )));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng::rng(seed));
        let n_train = ((n as f64) * train).round() as usize;
        let n_val = (((n as f64) * val).round() as usize).min(n - n_train);
        let test = idx.split_off(n_train + n_val);
        let val = idx.split_off(n_train);
        Ok(Self { train: idx, val, test })
    }
}

/// Features with one-hot targets, ready for training.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet {
    pub x: Tensor,
    pub targets: Tensor,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    pub fn new(x: Tensor, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if x.rank() != 2 || x.rows() != labels.len() {
            return Err(Error::Data(format!(
                "{} labels for features {:?}",
                labels.len(),
                x.shape()
            )));
        }
        let mut one_hot = vec![0.0; labels.len() * n_classes];
        for (i, &l) in labels.iter().enumerate() {
            if l >= n_classes {
                return Err(Error::Data(format!("label {l} outside {n_classes} classes")));
            }
            one_hot[i * n_classes + l] = 1.0;
        }
        Ok(Self {
            targets: Tensor::new(vec![labels.len(), n_classes], one_hot)?,
            x,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, rows: &[usize]) -> Result<LabeledSet> {
        Ok(LabeledSet {
            x: self.x.select_rows(rows)?,
            targets: self.targets.select_rows(rows)?,
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
        })
    }
}

/// Fraction of rows whose argmax matches the label.
pub fn accuracy(output: &Tensor, labels: &[usize]) -> f64 {
    let hits = (0..output.rows())
        .filter(|&r| {
            let row = output.row(r);
            let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            best == labels[r]
        })
        .count();
    hits as f64 / output.rows() as f64
}

/// A labelled dataset with its seeded split.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    /// Shape of one sample: `[features]` or `[h, w, c]`.
    pub sample_shape: Vec<usize>,
    pub split: Split,
}

impl Dataset {
    /// Wraps raw features and assigns the default 0.7/0.15/0.15 split.
    pub fn new(
        features: Tensor,
        labels: Vec<usize>,
        n_classes: usize,
        sample_shape: Vec<usize>,
        split_seed: u64,
    ) -> Result<Self> {
        if features.rank() != 2 || features.rows() != labels.len() {
            return Err(Error::Data(format!(
                "{} labels for features {:?}",
                labels.len(),
                features.shape()
            )));
        }
        if sample_shape.iter().product::<usize>() != features.cols() {
            return Err(Error::Data(format!(
                "sample shape {sample_shape:?} does not cover {} features",
                features.cols()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::Data(format!("label {bad} outside {n_classes} classes")));
        }
        let split = Split::new(labels.len(), SplitFractions::default(), split_seed)?;
        Ok(Self {
            features,
            labels,
            n_classes,
            sample_shape,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn resplit(&mut self, fractions: SplitFractions, seed: u64) -> Result<()> {
        self.split = Split::new(self.len(), fractions, seed)?;
        Ok(())
    }

    pub fn subset(&self, rows: &[usize]) -> Result<LabeledSet> {
        if rows.is_empty() {
            return Err(Error::Config("empty dataset split".into()));
        }
        LabeledSet::new(
            self.features.select_rows(rows)?,
            rows.iter().map(|&r| self.labels[r]).collect(),
            self.n_classes,
        )
    }

    pub fn train(&self) -> Result<LabeledSet> {
        self.subset(&self.split.train)
    }

    pub fn val(&self) -> Result<LabeledSet> {
        self.subset(&self.split.val)
    }

    pub fn test(&self) -> Result<LabeledSet> {
        self.subset(&self.split.test)
    }

    /// Writes `x0,x1,...,label` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let cols: Vec<String> = (0..self.features.cols()).map(|i| format!("x{i}")).collect();
        out.push_str(&cols.join(","));
        out.push_str(",label\n");
        for r in 0..self.len() {
            for v in self.features.row(r) {
                out.push_str(&format!("{v},"));
            }
            out.push_str(&format!("{}\n", self.labels[r]));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn splits_partition_indices(n in 3usize..400, seed: u64, a in 0.1f64..0.8, b in 0.0f64..0.2) {
            let f = SplitFractions { train: a, val: b, test: 1.0 - a - b };
            let s = Split::new(n, f, seed).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            prop_assert_eq!(Split::new(n, f, seed).unwrap(), s);
        }
    }

    #[test]
    fn rejects_bad_fractions() {
        let f = SplitFractions {
            train: 0.5,
            val: 0.5,
            test: 0.5,
        };
        assert!(Split::new(10, f, 0).is_err());
    }

    #[test]
    fn accuracy_counts_argmax() {
        let out = Tensor::from_rows(&[vec![0.1, 0.9], vec![2.0, -1.0], vec![0.0, 1.0]]).unwrap();
        assert!((accuracy(&out, &[1, 0, 0]) - 2.0 / 3.0).abs() < 1e-12);
    }
}
