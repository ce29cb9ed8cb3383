//! Dataset handling: storage format, chronological splits, per-node
//! normalization, sliding-window batching, and synthetic series.

mod io;
mod synth;
mod windows;

pub use io::{load_series, save_series, series_from_csv};
pub use synth::{synth_generate, SynthConfig};
pub use windows::{window_count, windows, TimeAnchor, WindowBatch, WindowSpec, Windows};

use crate::tensor::Tensor;
use crate::{Error, Result};
use std::ops::Range;

/// An N-node measurement matrix with its sampling metadata.
#[derive(Clone, Debug)]
pub struct SeriesDataset {
    /// Measurements, [N, T_total], node-major.
    pub values: Tensor,
    pub granularity_minutes: usize,
    /// Time-of-day index of step 0.
    pub tod0: usize,
    /// Day-of-week index of step 0.
    pub dow0: usize,
}

impl SeriesDataset {
    pub fn new(values: Tensor, granularity_minutes: usize, tod0: usize, dow0: usize) -> Result<Self> {
        if values.ndim() != 2 {
            return Err(Error::contract(format!(
                "series values must be [nodes, steps], got {:?}",
                values.shape
            )));
        }
        if granularity_minutes == 0 || 1440 % granularity_minutes != 0 {
            return Err(Error::config(format!(
                "granularity {granularity_minutes} min does not divide a day"
            )));
        }
        let spd = 1440 / granularity_minutes;
        if tod0 >= spd || dow0 >= 7 {
            return Err(Error::config(format!("start offset ({tod0}, {dow0}) out of range")));
        }
        if !values.is_finite() {
            return Err(Error::contract("series contains non-finite values"));
        }
        Ok(SeriesDataset { values, granularity_minutes, tod0, dow0 })
    }

    pub fn nodes(&self) -> usize {
        self.values.shape[0]
    }

    /// Total number of time steps.
    pub fn len(&self) -> usize {
        self.values.shape[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn steps_per_day(&self) -> usize {
        1440 / self.granularity_minutes
    }

    pub fn value(&self, node: usize, step: usize) -> f64 {
        self.values.data[node * self.len() + step]
    }

    /// Time-of-day index of an absolute step.
    pub fn tod_of(&self, step: usize) -> usize {
        (self.tod0 + step) % self.steps_per_day()
    }

    /// Day-of-week index of an absolute step.
    pub fn dow_of(&self, step: usize) -> usize {
        (self.dow0 + (self.tod0 + step) / self.steps_per_day()) % 7
    }
}

/// Contiguous, ordered, non-overlapping step ranges covering the series.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl SplitRanges {
    pub fn get(&self, which: SplitKind) -> Range<usize> {
        match which {
            SplitKind::Train => self.train.clone(),
            SplitKind::Val => self.val.clone(),
            SplitKind::Test => self.test.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitKind {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for SplitKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitKind::Train),
            "val" | "validation" => Ok(SplitKind::Val),
            "test" => Ok(SplitKind::Test),
            other => Err(Error::config(format!("unknown split '{other}'"))),
        }
    }
}

/// Splits `[0, len)` chronologically at floor(r_train·len) and
/// floor((r_train+r_val)·len).
pub fn chronological_split(len: usize, ratios: (f64, f64, f64)) -> Result<SplitRanges> {
    let (a, b, c) = ratios;
    if a < 0.0 || b < 0.0 || c < 0.0 || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let b1 = (a * len as f64).floor() as usize;
    let b2 = ((a + b) * len as f64).floor() as usize;
    Ok(SplitRanges { train: 0..b1, val: b1..b2, test: b2..len })
}

/// Normalization mode for [`Normalizer::fit`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    PerNode,
    Global,
}

impl std::str::FromStr for NormMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_node" => Ok(NormMode::PerNode),
            "global" => Ok(NormMode::Global),
            other => Err(Error::config(format!("unknown normalization mode '{other}'"))),
        }
    }
}

/// Z-score transform fit on the training range only (population standard
/// deviation; zero-variance nodes get std 1).
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub mode: NormMode,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit(ds: &SeriesDataset, train: Range<usize>, mode: NormMode) -> Result<Self> {
        if train.is_empty() || train.end > ds.len() {
            return Err(Error::config(format!(
                "cannot fit normalizer on range {train:?} of a {}-step series",
                ds.len()
            )));
        }
        let n = ds.nodes();
        let count = train.len() as f64;
        let stats = |vals: &mut dyn Iterator<Item = f64>| -> (f64, f64) {
            let v: Vec<f64> = vals.collect();
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / v.len() as f64;
            let std = var.sqrt();
            (mean, if std < 1e-12 { 1.0 } else { std })
        };
        let (mean, std) = match mode {
            NormMode::PerNode => {
                let mut mean = Vec::with_capacity(n);
                let mut std = Vec::with_capacity(n);
                for node in 0..n {
                    let m = train.clone().map(|s| ds.value(node, s)).sum::<f64>() / count;
                    let var = train
                        .clone()
                        .map(|s| {
                            let d = ds.value(node, s) - m;
                            d * d
                        })
                        .sum::<f64>()
                        / count;
                    let s = var.sqrt();
                    mean.push(m);
                    std.push(if s < 1e-12 { 1.0 } else { s });
                }
                (mean, std)
            }
            NormMode::Global => {
                let mut all = (0..n).flat_map(|node| {
                    let ds = &ds;
                    train.clone().map(move |s| ds.value(node, s))
                });
                let (m, s) = stats(&mut all);
                (vec![m; n], vec![s; n])
            }
        };
        Ok(Normalizer { mode, mean, std })
    }

    pub fn apply_value(&self, node: usize, v: f64) -> f64 {
        (v - self.mean[node]) / self.std[node]
    }

    pub fn invert_value(&self, node: usize, v: f64) -> f64 {
        v * self.std[node] + self.mean[node]
    }

    /// Normalized copy of the dataset (metadata unchanged).
    pub fn apply_dataset(&self, ds: &SeriesDataset) -> SeriesDataset {
        let mut out = ds.clone();
        let steps = ds.len();
        for node in 0..ds.nodes() {
            for s in 0..steps {
                out.values.data[node * steps + s] = self.apply_value(node, ds.value(node, s));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_ds(values: Vec<f64>, nodes: usize) -> SeriesDataset {
        let steps = values.len() / nodes;
        SeriesDataset::new(
            Tensor::from_vec(vec![nodes, steps], values).unwrap(),
            15,
            0,
            0,
        )
        .unwrap()
    }

    #[test]
    fn split_examples() {
        let s = chronological_split(10, (0.6, 0.2, 0.2)).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (6, 2, 2));

        let s7 = chronological_split(7, (0.6, 0.2, 0.2)).unwrap();
        assert_eq!((s7.train.len(), s7.val.len(), s7.test.len()), (4, 1, 2));
    }

    #[test]
    fn split_is_a_partition() {
        for len in [1usize, 7, 10, 96, 1343] {
            let s = chronological_split(len, (0.6, 0.2, 0.2)).unwrap();
            assert_eq!(s.train.start, 0);
            assert_eq!(s.train.end, s.val.start);
            assert_eq!(s.val.end, s.test.start);
            assert_eq!(s.test.end, len);
        }
        assert!(chronological_split(10, (0.5, 0.2, 0.2)).is_err());
    }

    #[test]
    fn time_indices_wrap_days_and_weeks() {
        let ds = toy_ds(vec![0.0; 2 * 200], 2);
        assert_eq!(ds.steps_per_day(), 96);
        assert_eq!(ds.tod_of(100), 4);
        assert_eq!(ds.dow_of(100), 1);
        let shifted = SeriesDataset::new(Tensor::zeros(vec![1, 800]), 15, 90, 6).unwrap();
        assert_eq!(shifted.tod_of(6), 0);
        assert_eq!(shifted.dow_of(6), 0); // wrapped into the next day and week
    }

    #[test]
    fn normalizer_zero_variance_and_forced_values() {
        let ds = toy_ds(vec![5.0, 5.0, 5.0, 5.0, 0.0, 2.0, 0.0, 2.0], 2);
        let norm = Normalizer::fit(&ds, 0..4, NormMode::PerNode).unwrap();
        assert_eq!(norm.mean[0], 5.0);
        assert_eq!(norm.std[0], 1.0);
        assert_eq!(norm.mean[1], 1.0);
        assert_eq!(norm.std[1], 1.0); // population std of {0,2,0,2}
        assert_eq!(norm.apply_value(0, 5.0), 0.0);
        assert_eq!(norm.apply_value(1, 0.0), -1.0);
        assert_eq!(norm.apply_value(1, 2.0), 1.0);
    }

    #[test]
    fn normalizer_round_trips() {
        let vals: Vec<f64> = (0..40).map(|i| (i as f64 * 0.731).sin() * 25.0 + 3.0).collect();
        let ds = toy_ds(vals, 2);
        let norm = Normalizer::fit(&ds, 0..12, NormMode::PerNode).unwrap();
        for node in 0..2 {
            for s in 0..20 {
                let v = ds.value(node, s);
                let rt = norm.invert_value(node, norm.apply_value(node, v));
                assert!((rt - v).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn normalizer_ignores_non_training_steps() {
        let base: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let ds = toy_ds(base.clone(), 1);
        let mut tampered = base;
        for v in tampered.iter_mut().skip(18) {
            *v = 1e6;
        }
        let ds2 = toy_ds(tampered, 1);
        let a = Normalizer::fit(&ds, 0..18, NormMode::PerNode).unwrap();
        let b = Normalizer::fit(&ds2, 0..18, NormMode::PerNode).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn global_mode_shares_statistics() {
        let ds = toy_ds(vec![0.0, 2.0, 4.0, 6.0], 2);
        let norm = Normalizer::fit(&ds, 0..2, NormMode::Global).unwrap();
        assert_eq!(norm.mean[0], norm.mean[1]);
        assert_eq!(norm.std[0], norm.std[1]);
        assert_eq!(norm.mean[0], 3.0);
    }
}
