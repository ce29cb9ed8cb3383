//! Training: Huber objective on normalized targets, Adam with a halve-every
//! 10-epochs schedule, early stopping on validation MAE, and evaluation on
//! de-normalized predictions.

mod adam;
mod checkpoint;

pub use adam::AdamState;
pub use checkpoint::Checkpoint;

use crate::analysis::{MetricsAccum, MetricsReport};
use crate::data::{
    chronological_split, windows, NormMode, Normalizer, SeriesDataset, TimeAnchor, WindowSpec,
};
use crate::ioutil::{atomic_write, fmt_float};
use crate::model::{FastModel, ModelConfig, TraceMode};
use crate::tensor::{Graph, Tensor};
use crate::{Error, Result};
use std::ops::Range;
use std::path::Path;
use std::time::Instant;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub lr0: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub max_epochs: usize,
    pub batch: usize,
    pub huber_delta: f64,
    /// Early-stopping patience on validation MAE, in epochs.
    pub patience: usize,
    pub seed: u64,
    /// Optional global gradient-norm clip.
    pub clip_norm: Option<f64>,
    /// Compute the loss on de-normalized predictions instead of the
    /// normalized scale.
    pub loss_on_raw: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.002,
            decay_factor: 0.5,
            decay_every: 10,
            max_epochs: 50,
            batch: 64,
            huber_delta: 1.0,
            patience: 10,
            seed: 42,
            clip_norm: None,
            loss_on_raw: false,
        }
    }
}

/// Step-decay schedule: lr0 · factor^⌊epoch / every⌋ (epochs are 0-based).
pub fn lr_schedule(cfg: &TrainConfig, epoch: usize) -> f64 {
    cfg.lr0 * cfg.decay_factor.powi((epoch / cfg.decay_every) as i32)
}

/// Tracks the best validation value; stops once more than `patience`
/// evaluations have passed without improvement.
#[derive(Clone, Debug)]
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    since_best: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper { patience, best: f64::INFINITY, since_best: 0 }
    }

    /// Feeds one evaluation; returns true when it improved on the best.
    pub fn observe(&mut self, value: f64) -> bool {
        if value < self.best {
            self.best = value;
            self.since_best = 0;
            true
        } else {
            self.since_best += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.since_best > self.patience
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

#[derive(Clone, Debug)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mae: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Model state at the best validation epoch.
    pub model: FastModel,
    pub normalizer: Normalizer,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mae: f64,
}

/// Full training run: chronological 6:2:2 split, normalizer fit on the
/// training range only, Adam over shuffled batches, per-epoch validation,
/// and the best-MAE model kept as the outcome.
pub fn train(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    ds: &SeriesDataset,
    norm_mode: NormMode,
    anchor: TimeAnchor,
) -> Result<TrainOutcome> {
    model_cfg.validate()?;
    check_dataset_compat(model_cfg, ds)?;
    let splits = chronological_split(ds.len(), (0.6, 0.2, 0.2))?;
    let norm = Normalizer::fit(ds, splits.train.clone(), norm_mode)?;
    let ds_norm = norm.apply_dataset(ds);

    let mut model = FastModel::init(model_cfg.clone(), train_cfg.seed)?;
    let mut opt = AdamState::new(&model.params);
    let spec = WindowSpec {
        input_steps: model_cfg.input_steps,
        horizon: model_cfg.horizon,
        batch: train_cfg.batch,
        anchor,
    };
    // fail early if any split cannot hold a single window
    windows(&ds_norm, splits.train.clone(), spec, None)?;
    windows(&ds_norm, splits.val.clone(), spec, None)?;
    windows(&ds_norm, splits.test.clone(), spec, None)?;

    let mut stopper = EarlyStopper::new(train_cfg.patience);
    let mut history = Vec::new();
    let mut best_params = model.params.clone();
    let mut best_epoch = 0usize;

    for epoch in 0..train_cfg.max_epochs {
        let t0 = Instant::now();
        let lr = lr_schedule(train_cfg, epoch);
        let shuffle_seed =
            train_cfg.seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut loss_sum = 0.0;
        let mut sample_count = 0usize;
        for batch in windows(&ds_norm, splits.train.clone(), spec, Some(shuffle_seed))? {
            let b = batch.tod.len();
            model.params.zero_grads();
            let mut g = Graph::new();
            let pass = model.forward_batch(&mut g, &batch.x, &batch.tod, &batch.dow, TraceMode::Counters)?;
            let loss = if train_cfg.loss_on_raw {
                let pred_raw = denormalize_on_graph(&mut g, pass.output, &norm, model_cfg)?;
                let y_raw = raw_targets(ds, &batch.anchors, model_cfg);
                g.huber_vs(pred_raw, &y_raw, train_cfg.huber_delta)?
            } else {
                g.huber_vs(pass.output, &batch.y, train_cfg.huber_delta)?
            };
            let loss_value = g.scalar_value(loss);
            g.backward(loss)?;
            model.pull_grads(&g, &pass.bound);
            if let Some(c) = train_cfg.clip_norm {
                clip_grad_norm(&mut model, c);
            }
            opt.step(&mut model.params, lr)?;
            loss_sum += loss_value * b as f64;
            sample_count += b;
        }
        let train_loss = loss_sum / sample_count as f64;

        let val = evaluate_model(
            &model,
            ds,
            &ds_norm,
            &norm,
            splits.val.clone(),
            anchor,
            train_cfg.batch,
        )?;
        let val_mae = val.overall.mae;
        if stopper.observe(val_mae) {
            best_params = model.params.clone();
            best_epoch = epoch;
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_mae,
            lr,
            seconds: t0.elapsed().as_secs_f64(),
        });
        log::info!(
            "epoch {epoch}: train_loss {train_loss:.6}, val_mae {val_mae:.6}, lr {lr:.6}"
        );
        if stopper.should_stop() {
            log::info!("early stop after epoch {epoch} (best at {best_epoch})");
            break;
        }
    }

    let best_model = FastModel::from_parts(model_cfg.clone(), best_params)?;
    Ok(TrainOutcome {
        model: best_model,
        normalizer: norm,
        history,
        best_epoch,
        best_val_mae: stopper.best(),
    })
}

fn check_dataset_compat(cfg: &ModelConfig, ds: &SeriesDataset) -> Result<()> {
    if cfg.nodes != ds.nodes() {
        return Err(Error::config(format!(
            "model expects {} nodes, dataset has {}",
            cfg.nodes,
            ds.nodes()
        )));
    }
    if cfg.steps_per_day != ds.steps_per_day() {
        return Err(Error::config(format!(
            "model expects {} steps/day, dataset has {}",
            cfg.steps_per_day,
            ds.steps_per_day()
        )));
    }
    Ok(())
}

/// Applies the per-node inverse transform to a [B,N,P] prediction inside
/// the graph (constant scale and shift do not affect gradients' shape).
fn denormalize_on_graph(
    g: &mut Graph,
    pred: crate::tensor::TensorId,
    norm: &Normalizer,
    cfg: &ModelConfig,
) -> Result<crate::tensor::TensorId> {
    let std_col = Tensor::from_vec(vec![cfg.nodes, 1], norm.std.clone())?;
    let mean_col = Tensor::from_vec(vec![cfg.nodes, 1], norm.mean.clone())?;
    let s = g.input(&std_col);
    let m = g.input(&mean_col);
    let scaled = g.mul(pred, s)?;
    g.add(scaled, m)
}

fn raw_targets(ds: &SeriesDataset, anchors: &[usize], cfg: &ModelConfig) -> Tensor {
    let (n, p) = (cfg.nodes, cfg.horizon);
    let mut y = Tensor::zeros(vec![anchors.len(), n, p]);
    for (bi, &anchor) in anchors.iter().enumerate() {
        for node in 0..n {
            for step in 0..p {
                y.data[(bi * n + node) * p + step] = ds.value(node, anchor + 1 + step);
            }
        }
    }
    y
}

fn clip_grad_norm(model: &mut FastModel, max_norm: f64) {
    let mut total = 0.0;
    for (_, t) in model.params.entries() {
        if let Some(g) = &t.grad {
            total += g.iter().map(|v| v * v).sum::<f64>();
        }
    }
    let norm = total.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for (_, t) in model.params.entries_mut() {
            if let Some(g) = t.grad.as_mut() {
                g.iter_mut().for_each(|v| *v *= scale);
            }
        }
    }
}

/// Metrics of a model over every window of `range`: predictions are made
/// on the normalized series, de-normalized, and compared against the raw
/// targets, overall and per horizon step.
pub fn evaluate_model(
    model: &FastModel,
    raw: &SeriesDataset,
    normalized: &SeriesDataset,
    norm: &Normalizer,
    range: Range<usize>,
    anchor: TimeAnchor,
    batch: usize,
) -> Result<MetricsReport> {
    let cfg = &model.config;
    let spec =
        WindowSpec { input_steps: cfg.input_steps, horizon: cfg.horizon, batch, anchor };
    let mut acc = MetricsAccum::new(cfg.horizon);
    for wb in windows(normalized, range, spec, None)? {
        let mut g = Graph::new();
        let pass = model.forward_batch(&mut g, &wb.x, &wb.tod, &wb.dow, TraceMode::Counters)?;
        let pred = g.data(pass.output);
        let (n, p) = (cfg.nodes, cfg.horizon);
        for (bi, &a) in wb.anchors.iter().enumerate() {
            for node in 0..n {
                for step in 0..p {
                    let yhat = norm.invert_value(node, pred[(bi * n + node) * p + step]);
                    let y = raw.value(node, a + 1 + step);
                    acc.add(step, y, yhat);
                }
            }
        }
    }
    acc.finish()
}

/// Evaluates a checkpoint on one chronological split of a dataset,
/// refitting the normalizer on the dataset's training range.
pub fn evaluate_checkpoint(
    ckpt: &Checkpoint,
    ds: &SeriesDataset,
    split: crate::data::SplitKind,
    norm_mode: NormMode,
    anchor: TimeAnchor,
    batch: usize,
) -> Result<MetricsReport> {
    let model = ckpt.clone().into_model()?;
    check_dataset_compat(&model.config, ds)?;
    let splits = chronological_split(ds.len(), (0.6, 0.2, 0.2))?;
    let norm = Normalizer::fit(ds, splits.train.clone(), norm_mode)?;
    let ds_norm = norm.apply_dataset(ds);
    evaluate_model(&model, ds, &ds_norm, &norm, splits.get(split), anchor, batch)
}

/// MAE/RMSE of the persistence forecast (repeat the last observed value
/// across the horizon) over every window of `range`.
pub fn persistence_metrics(
    ds: &SeriesDataset,
    range: Range<usize>,
    input_steps: usize,
    horizon: usize,
) -> Result<MetricsReport> {
    let spec = WindowSpec { input_steps, horizon, batch: 256, anchor: TimeAnchor::LastInput };
    let mut acc = MetricsAccum::new(horizon);
    for wb in windows(ds, range, spec, None)? {
        for (bi, &a) in wb.anchors.iter().enumerate() {
            for node in 0..ds.nodes() {
                let last = wb.x.at(&[bi, node, input_steps - 1]);
                for step in 0..horizon {
                    acc.add(step, ds.value(node, a + 1 + step), last);
                }
            }
        }
    }
    acc.finish()
}

/// History CSV: epoch, train_loss, val_mae, lr, seconds.
pub fn write_history_csv(history: &[EpochRecord], path: &Path) -> Result<()> {
    let mut out = String::from("epoch,train_loss,val_mae,lr,seconds\n");
    for r in history {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch,
            fmt_float(r.train_loss),
            fmt_float(r.val_mae),
            fmt_float(r.lr),
            fmt_float(r.seconds)
        ));
    }
    atomic_write(path, out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthConfig};
    use crate::tensor::Graph;

    fn small_setup() -> (ModelConfig, TrainConfig, SeriesDataset) {
        let ds = synth_generate(&SynthConfig::new(6, 6, 60, 11)).unwrap();
        let mcfg = ModelConfig {
            nodes: 6,
            input_steps: 8,
            horizon: 4,
            dim: 8,
            experts: 2,
            agents: 3,
            layers: 2,
            steps_per_day: ds.steps_per_day(),
            days_per_week: 7,
            ha_router: true,
        };
        let tcfg = TrainConfig { max_epochs: 3, batch: 16, patience: 10, seed: 3, ..Default::default() };
        (mcfg, tcfg, ds)
    }

    #[test]
    fn huber_point_checks() {
        let mut g = Graph::new();
        let target = Tensor::zeros(vec![1, 1]);
        let half = g.input(&Tensor::from_vec(vec![1, 1], vec![0.5]).unwrap());
        let three = g.input(&Tensor::from_vec(vec![1, 1], vec![3.0]).unwrap());
        let l1 = g.huber_vs(half, &target, 1.0).unwrap();
        let l2 = g.huber_vs(three, &target, 1.0).unwrap();
        assert!((g.scalar_value(l1) - 0.125).abs() < 1e-15);
        assert!((g.scalar_value(l2) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn schedule_point_checks_and_shape() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_schedule(&cfg, 0), 0.002);
        assert_eq!(lr_schedule(&cfg, 9), 0.002);
        assert_eq!(lr_schedule(&cfg, 10), 0.001);
        assert_eq!(lr_schedule(&cfg, 25), 0.0005);
        // non-increasing, breakpoints only at multiples of decay_every
        let mut last = f64::INFINITY;
        for e in 0..60 {
            let lr = lr_schedule(&cfg, e);
            assert!(lr <= last);
            if e % 10 != 0 {
                assert_eq!(lr, lr_schedule(&cfg, e - 1));
            }
            last = lr;
        }
    }

    #[test]
    fn early_stopper_counts_evaluations_past_best() {
        let mut s = EarlyStopper::new(2);
        assert!(s.observe(1.0));
        assert!(!s.should_stop());
        assert!(!s.observe(1.1));
        assert!(!s.should_stop());
        assert!(!s.observe(1.2));
        assert!(!s.should_stop());
        assert!(!s.observe(1.05)); // third evaluation past the best
        assert!(s.should_stop());
    }

    #[test]
    fn training_runs_and_is_seed_deterministic() {
        let (mcfg, tcfg, ds) = small_setup();
        let a = train(&mcfg, &tcfg, &ds, NormMode::PerNode, TimeAnchor::LastInput).unwrap();
        let b = train(&mcfg, &tcfg, &ds, NormMode::PerNode, TimeAnchor::LastInput).unwrap();
        assert_eq!(a.history.len(), b.history.len());
        for (ra, rb) in a.history.iter().zip(&b.history) {
            assert_eq!(ra.train_loss.to_bits(), rb.train_loss.to_bits());
            assert_eq!(ra.val_mae.to_bits(), rb.val_mae.to_bits());
        }
        for ((_, ta), (_, tb)) in a.model.params.entries().into_iter().zip(b.model.params.entries())
        {
            assert_eq!(ta.data, tb.data);
        }

        let mut tcfg2 = tcfg;
        tcfg2.seed = 4;
        let c = train(&mcfg, &tcfg2, &ds, NormMode::PerNode, TimeAnchor::LastInput).unwrap();
        assert_ne!(
            a.history[0].train_loss.to_bits(),
            c.history[0].train_loss.to_bits()
        );
    }

    #[test]
    fn tiny_lr_step_rarely_increases_batch_loss() {
        let (mcfg, _, ds) = small_setup();
        let splits = chronological_split(ds.len(), (0.6, 0.2, 0.2)).unwrap();
        let norm = Normalizer::fit(&ds, splits.train.clone(), NormMode::PerNode).unwrap();
        let ds_norm = norm.apply_dataset(&ds);
        let spec = WindowSpec {
            input_steps: mcfg.input_steps,
            horizon: mcfg.horizon,
            batch: 4,
            anchor: TimeAnchor::LastInput,
        };
        let mut violations = 0;
        let mut checked = 0;
        let mut seed = 100u64;
        'outer: loop {
            for batch in windows(&ds_norm, splits.train.clone(), spec, Some(seed)).unwrap() {
                if checked == 20 {
                    break 'outer;
                }
                let mut model = FastModel::init(mcfg.clone(), seed).unwrap();
                let mut opt = AdamState::new(&model.params);
                let loss_of = |m: &FastModel| {
                    let mut g = Graph::new();
                    let pass =
                        m.forward_batch(&mut g, &batch.x, &batch.tod, &batch.dow, TraceMode::Counters)
                            .unwrap();
                    let l = g.huber_vs(pass.output, &batch.y, 1.0).unwrap();
                    g.scalar_value(l)
                };
                let before = loss_of(&model);
                let mut g = Graph::new();
                let pass = model
                    .forward_batch(&mut g, &batch.x, &batch.tod, &batch.dow, TraceMode::Counters)
                    .unwrap();
                let l = g.huber_vs(pass.output, &batch.y, 1.0).unwrap();
                g.backward(l).unwrap();
                model.params.zero_grads();
                model.pull_grads(&g, &pass.bound);
                opt.step(&mut model.params, 1e-5).unwrap();
                if loss_of(&model) > before {
                    violations += 1;
                }
                checked += 1;
            }
            seed += 1;
        }
        assert!(violations <= 1, "{violations} of {checked} tiny steps increased the loss");
    }

    #[test]
    fn checkpoint_round_trip_reproduces_metrics_exactly() {
        let (mcfg, tcfg, ds) = small_setup();
        let out = train(&mcfg, &tcfg, &ds, NormMode::PerNode, TimeAnchor::LastInput).unwrap();
        let ckpt = Checkpoint::of(&out.model);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.fstc");
        ckpt.save(&path).unwrap();
        let direct = evaluate_checkpoint(
            &ckpt,
            &ds,
            crate::data::SplitKind::Test,
            NormMode::PerNode,
            TimeAnchor::LastInput,
            16,
        )
        .unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        let reloaded = evaluate_checkpoint(
            &loaded,
            &ds,
            crate::data::SplitKind::Test,
            NormMode::PerNode,
            TimeAnchor::LastInput,
            16,
        )
        .unwrap();
        assert_eq!(direct.overall.mae.to_bits(), reloaded.overall.mae.to_bits());
        assert_eq!(direct.overall.rmse.to_bits(), reloaded.overall.rmse.to_bits());
    }

    #[test]
    fn history_csv_shape() {
        let history = vec![EpochRecord {
            epoch: 0,
            train_loss: 1.5,
            val_mae: 2.5,
            lr: 0.002,
            seconds: 0.25,
        }];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("history.csv");
        write_history_csv(&history, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "epoch,train_loss,val_mae,lr,seconds");
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row[0], "0");
        assert_eq!(row[1].parse::<f64>().unwrap(), 1.5);
        assert_eq!(row[3].parse::<f64>().unwrap(), 0.002);
    }

    #[test]
    fn raw_scale_loss_trains_and_differs() {
        let (mcfg, mut tcfg, ds) = small_setup();
        tcfg.max_epochs = 2;
        let normed = train(&mcfg, &tcfg, &ds, NormMode::PerNode, TimeAnchor::LastInput).unwrap();
        tcfg.loss_on_raw = true;
        let raw = train(&mcfg, &tcfg, &ds, NormMode::PerNode, TimeAnchor::LastInput).unwrap();
        // raw targets are orders of magnitude larger than z-scores
        assert!(raw.history[0].train_loss > 4.0 * normed.history[0].train_loss);
        assert!(raw.model.params.all_finite());
    }

    #[test]
    fn evaluation_rejects_mismatched_dataset() {
        let (mcfg, _, _) = small_setup();
        let other = synth_generate(&SynthConfig::new(4, 6, 60, 1)).unwrap();
        let model = FastModel::init(mcfg, 1).unwrap();
        let ckpt = Checkpoint::of(&model);
        assert!(evaluate_checkpoint(
            &ckpt,
            &other,
            crate::data::SplitKind::Test,
            NormMode::PerNode,
            TimeAnchor::LastInput,
            8,
        )
        .is_err());
    }
}
