//! Sliding-window batching over a step range of a series.
//!
//! A window is addressed by its anchor: the absolute index of the last
//! input step. The input covers [anchor-T+1, anchor] and the target
//! [anchor+1, anchor+P], so windows never leave the range they were
//! enumerated from and never straddle a split boundary.

use super::SeriesDataset;
use crate::tensor::Tensor;
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::ops::Range;

/// Which step of a window supplies its time-of-day / day-of-week indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum TimeAnchor {
    #[default]
    LastInput,
    FirstInput,
    TargetStart,
}

impl std::str::FromStr for TimeAnchor {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last_input" => Ok(TimeAnchor::LastInput),
            "first_input" => Ok(TimeAnchor::FirstInput),
            "target_start" => Ok(TimeAnchor::TargetStart),
            other => Err(Error::config(format!("unknown time anchor '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct WindowSpec {
    pub input_steps: usize,
    pub horizon: usize,
    pub batch: usize,
    pub anchor: TimeAnchor,
}

/// One batch of samples: inputs [B,N,T], targets [B,N,P], per-sample time
/// indices, and the absolute anchors the samples came from.
#[derive(Clone, Debug)]
pub struct WindowBatch {
    pub x: Tensor,
    pub y: Tensor,
    pub tod: Vec<usize>,
    pub dow: Vec<usize>,
    pub anchors: Vec<usize>,
}

/// Number of valid windows in a range of the given length.
pub fn window_count(range_len: usize, input_steps: usize, horizon: usize) -> usize {
    (range_len + 1).saturating_sub(input_steps + horizon)
}

/// Deterministic batch stream over every valid window of `range`.
/// `shuffle_seed` permutes the anchors (training); `None` keeps them in
/// chronological order.
pub fn windows<'a>(
    ds: &'a SeriesDataset,
    range: Range<usize>,
    spec: WindowSpec,
    shuffle_seed: Option<u64>,
) -> Result<Windows<'a>> {
    if spec.batch == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    if range.end > ds.len() {
        return Err(Error::config(format!(
            "window range {range:?} exceeds series length {}",
            ds.len()
        )));
    }
    let need = spec.input_steps + spec.horizon;
    if range.len() < need {
        return Err(Error::config(format!(
            "range of {} steps cannot fit one window of input {} + horizon {}",
            range.len(),
            spec.input_steps,
            spec.horizon
        )));
    }
    let mut anchors: Vec<usize> =
        (range.start + spec.input_steps - 1..range.end - spec.horizon).collect();
    if let Some(seed) = shuffle_seed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        anchors.shuffle(&mut rng);
    }
    Ok(Windows { ds, spec, anchors, pos: 0 })
}

pub struct Windows<'a> {
    ds: &'a SeriesDataset,
    spec: WindowSpec,
    anchors: Vec<usize>,
    pos: usize,
}

impl Windows<'_> {
    pub fn num_windows(&self) -> usize {
        self.anchors.len()
    }
}

impl Iterator for Windows<'_> {
    type Item = WindowBatch;

    fn next(&mut self) -> Option<WindowBatch> {
        if self.pos >= self.anchors.len() {
            return None;
        }
        let end = (self.pos + self.spec.batch).min(self.anchors.len());
        let anchors = self.anchors[self.pos..end].to_vec();
        self.pos = end;

        let (t, p) = (self.spec.input_steps, self.spec.horizon);
        let (b, n, steps) = (anchors.len(), self.ds.nodes(), self.ds.len());
        let mut x = Tensor::zeros(vec![b, n, t]);
        let mut y = Tensor::zeros(vec![b, n, p]);
        let mut tod = Vec::with_capacity(b);
        let mut dow = Vec::with_capacity(b);
        for (bi, &anchor) in anchors.iter().enumerate() {
            let x_start = anchor + 1 - t;
            for node in 0..n {
                let row = node * steps;
                x.data[(bi * n + node) * t..(bi * n + node + 1) * t]
                    .copy_from_slice(&self.ds.values.data[row + x_start..row + anchor + 1]);
                y.data[(bi * n + node) * p..(bi * n + node + 1) * p]
                    .copy_from_slice(&self.ds.values.data[row + anchor + 1..row + anchor + 1 + p]);
            }
            let time_step = match self.spec.anchor {
                TimeAnchor::LastInput => anchor,
                TimeAnchor::FirstInput => x_start,
                TimeAnchor::TargetStart => anchor + 1,
            };
            tod.push(self.ds.tod_of(time_step));
            dow.push(self.ds.dow_of(time_step));
        }
        Some(WindowBatch { x, y, tod, dow, anchors })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_ds(nodes: usize, steps: usize) -> SeriesDataset {
        // value(node, step) = 1000*node + step, easy to index-check
        let mut data = Vec::with_capacity(nodes * steps);
        for n in 0..nodes {
            for s in 0..steps {
                data.push((1000 * n + s) as f64);
            }
        }
        SeriesDataset::new(Tensor::from_vec(vec![nodes, steps], data).unwrap(), 15, 0, 0).unwrap()
    }

    fn spec(t: usize, p: usize, b: usize) -> WindowSpec {
        WindowSpec { input_steps: t, horizon: p, batch: b, anchor: TimeAnchor::LastInput }
    }

    #[test]
    fn window_count_matches_enumeration() {
        assert_eq!(window_count(10, 3, 2), 6);
        let ds = ramp_ds(2, 10);
        let it = windows(&ds, 0..10, spec(3, 2, 1), None).unwrap();
        // brute-force enumeration of anchors whose input and target fit
        let mut expect = 0;
        for anchor in 0..10usize {
            let fits_x = anchor + 1 >= 3;
            let fits_y = anchor + 2 < 10;
            if fits_x && fits_y {
                expect += 1;
            }
        }
        assert_eq!(expect, 6);
        assert_eq!(it.num_windows(), 6);
        assert_eq!(it.count(), 6);
    }

    #[test]
    fn windows_align_inputs_and_targets() {
        let ds = ramp_ds(3, 20);
        for batch in windows(&ds, 4..17, spec(4, 3, 2), None).unwrap() {
            for (bi, &anchor) in batch.anchors.iter().enumerate() {
                assert!(anchor >= 4 + 3 && anchor + 3 < 17);
                for node in 0..3 {
                    // X ends at the anchor step
                    assert_eq!(batch.x.at(&[bi, node, 3]), ds.value(node, anchor));
                    // Y starts at anchor + 1
                    assert_eq!(batch.y.at(&[bi, node, 0]), ds.value(node, anchor + 1));
                    assert_eq!(batch.y.at(&[bi, node, 2]), ds.value(node, anchor + 3));
                }
            }
        }
    }

    #[test]
    fn time_indices_follow_the_anchor() {
        let ds = ramp_ds(1, 300);
        let batch = windows(&ds, 0..300, spec(13, 4, 512), None).unwrap().next().unwrap();
        let i = batch.anchors.iter().position(|&a| a == 100).unwrap();
        assert_eq!(batch.tod[i], 4); // spd = 96
        assert_eq!(batch.dow[i], 1);

        let mut s = spec(13, 4, 512);
        s.anchor = TimeAnchor::FirstInput;
        let batch2 = windows(&ds, 0..300, s, None).unwrap().next().unwrap();
        assert_eq!(batch2.tod[i], 100 - 12);
    }

    #[test]
    fn shuffle_is_deterministic_per_seed() {
        let ds = ramp_ds(1, 64);
        let collect = |seed: Option<u64>| -> Vec<usize> {
            windows(&ds, 0..64, spec(8, 4, 7), seed)
                .unwrap()
                .flat_map(|b| b.anchors)
                .collect()
        };
        let a = collect(Some(9));
        let b = collect(Some(9));
        let c = collect(Some(10));
        let plain = collect(None);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, plain);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, plain);
    }

    #[test]
    fn too_small_range_is_a_config_error() {
        let ds = ramp_ds(1, 30);
        assert!(windows(&ds, 0..6, spec(4, 3, 1), None).is_err());
        assert!(windows(&ds, 0..7, spec(4, 3, 1), None).is_ok());
    }
}
