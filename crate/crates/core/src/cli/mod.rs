//! Command implementations behind the `fast-stg` binary, plus the CSV
//! writers for every report the commands emit. All file outputs go through
//! atomic temp-and-rename writes; CSVs use '.' decimals, ',' separators,
//! and a header row.

mod bench;
mod config;

pub use bench::{loglog_slope, run_bench, BenchRow, BenchSpec};
pub use config::{parse_override, RunConfig};

use crate::analysis::{fidelity_sweep, ExpertProfile, FidelityCell, MetricsReport};
use crate::data::{chronological_split, synth_generate, Normalizer, SplitKind, SynthConfig};
use crate::ioutil::{atomic_write, fmt_float};
use crate::model::TraceMode;
use crate::tensor::Tensor;
use crate::train::{evaluate_checkpoint, train, write_history_csv, Checkpoint};
use crate::{Error, Result};
use std::path::{Path, PathBuf};

fn echo_config(rc: &RunConfig) -> Result<()> {
    atomic_write(&rc.out_dir.join("config.effective"), rc.echo().as_bytes())
}

/// Trains per the run configuration; leaves `checkpoint.fstc`,
/// `history.csv`, and the effective config in the output directory.
pub fn cmd_train(rc: &RunConfig) -> Result<()> {
    let ds = rc.load_dataset()?;
    let mcfg = rc.model_config(&ds)?;
    echo_config(rc)?;
    let outcome = train(&mcfg, &rc.train, &ds, rc.norm_mode, rc.time_anchor)?;
    Checkpoint::of(&outcome.model).save(&rc.out_dir.join("checkpoint.fstc"))?;
    write_history_csv(&outcome.history, &rc.out_dir.join("history.csv"))?;
    log::info!(
        "best epoch {} with validation MAE {:.6}",
        outcome.best_epoch,
        outcome.best_val_mae
    );
    println!(
        "trained {} epochs; best val MAE {:.6} at epoch {}",
        outcome.history.len(),
        outcome.best_val_mae,
        outcome.best_epoch
    );
    Ok(())
}

/// De-normalized P-step forecast from the window ending at `anchor`;
/// one CSV row per node.
pub fn cmd_predict(
    rc: &RunConfig,
    checkpoint: &Path,
    anchor: usize,
    output: Option<&Path>,
) -> Result<()> {
    let ds = rc.load_dataset()?;
    let model = Checkpoint::load(checkpoint)?.into_model()?;
    let cfg = model.config.clone();
    if cfg.nodes != ds.nodes() || cfg.steps_per_day != ds.steps_per_day() {
        return Err(Error::config(format!(
            "checkpoint expects {} nodes at {} steps/day, dataset has {} at {}",
            cfg.nodes,
            cfg.steps_per_day,
            ds.nodes(),
            ds.steps_per_day()
        )));
    }
    if anchor + 1 < cfg.input_steps || anchor >= ds.len() {
        return Err(Error::config(format!(
            "anchor {anchor} does not leave room for a {}-step input window in 0..{}",
            cfg.input_steps,
            ds.len()
        )));
    }
    echo_config(rc)?;
    let splits = chronological_split(ds.len(), (0.6, 0.2, 0.2))?;
    let norm = Normalizer::fit(&ds, splits.train, rc.norm_mode)?;
    let ds_norm = norm.apply_dataset(&ds);

    let start = anchor + 1 - cfg.input_steps;
    let mut x = Tensor::zeros(vec![cfg.nodes, cfg.input_steps]);
    for node in 0..cfg.nodes {
        for (i, step) in (start..=anchor).enumerate() {
            x.data[node * cfg.input_steps + i] = ds_norm.value(node, step);
        }
    }
    let time_step = match rc.time_anchor {
        crate::data::TimeAnchor::LastInput => anchor,
        crate::data::TimeAnchor::FirstInput => start,
        crate::data::TimeAnchor::TargetStart => anchor + 1,
    };
    let (pred, _) =
        model.predict(&x, ds.tod_of(time_step), ds.dow_of(time_step), TraceMode::Counters)?;

    let mut out = String::from("node");
    for p in 1..=cfg.horizon {
        out.push_str(&format!(",h{p}"));
    }
    out.push('\n');
    for node in 0..cfg.nodes {
        out.push_str(&node.to_string());
        for p in 0..cfg.horizon {
            let v = norm.invert_value(node, pred.at(&[node, p]));
            out.push(',');
            out.push_str(&fmt_float(v));
        }
        out.push('\n');
    }
    let path = output.map(PathBuf::from).unwrap_or_else(|| rc.out_dir.join("forecast.csv"));
    atomic_write(&path, out.as_bytes())?;
    println!("forecast for anchor {anchor} written to {}", path.display());
    Ok(())
}

/// Metrics of a checkpoint on one chronological split.
pub fn cmd_eval(rc: &RunConfig, checkpoint: &Path, split: SplitKind) -> Result<()> {
    let ds = rc.load_dataset()?;
    let ckpt = Checkpoint::load(checkpoint)?;
    echo_config(rc)?;
    let report =
        evaluate_checkpoint(&ckpt, &ds, split, rc.norm_mode, rc.time_anchor, rc.train.batch)?;
    let name = match split {
        SplitKind::Train => "train",
        SplitKind::Val => "val",
        SplitKind::Test => "test",
    };
    write_metrics_csv(&report, &rc.out_dir.join(format!("metrics_{name}.csv")))?;
    let o = report.overall;
    println!(
        "{name}: mae {} rmse {} mape {} r2 {}",
        fmt_float(o.mae),
        fmt_float(o.rmse),
        o.mape.map(fmt_float).unwrap_or_else(|| "undefined".into()),
        fmt_float(o.r2)
    );
    Ok(())
}

/// Reconstruction-fidelity table over several checkpoints (typically one
/// per agent count). Missing checkpoint files are skipped with a warning.
pub fn cmd_fidelity(rc: &RunConfig, checkpoints: &[PathBuf]) -> Result<()> {
    let ds = rc.load_dataset()?;
    echo_config(rc)?;
    let mut models = Vec::new();
    for path in checkpoints {
        if !path.exists() {
            log::warn!("skipping missing checkpoint {}", path.display());
            continue;
        }
        models.push(Checkpoint::load(path)?.into_model()?);
    }
    if models.is_empty() {
        return Err(Error::config("no usable checkpoints given"));
    }
    let cells = fidelity_sweep(&models, &ds, 64, rc.time_anchor)?;
    write_fidelity_csv(&cells, &rc.out_dir.join("fidelity.csv"))?;
    write_fidelity_bounds_csv(&cells, &rc.out_dir.join("fidelity_bounds.csv"))?;
    println!(
        "fidelity table over agent counts {:?} written to {}",
        cells.iter().map(|c| c.agents).collect::<Vec<_>>(),
        rc.out_dir.join("fidelity.csv").display()
    );
    Ok(())
}

/// Scaling benchmark; also logs the fitted node-count exponents.
pub fn cmd_bench(rc: &RunConfig, spec: &BenchSpec) -> Result<()> {
    echo_config(rc)?;
    let rows = run_bench(spec)?;
    write_bench_csv(&rows, &rc.out_dir.join("bench.csv"))?;
    // exponent summary over node count at the first horizon/agent setting
    let (p0, a0) = (spec.horizons[0], spec.agents[0]);
    let fixed: Vec<&BenchRow> = rows.iter().filter(|r| r.horizon == p0 && r.agents == a0).collect();
    if fixed.len() >= 2 {
        let ns: Vec<f64> = fixed.iter().map(|r| r.nodes as f64).collect();
        let fwd: Vec<f64> = fixed.iter().map(|r| r.forward_ms).collect();
        let peak: Vec<f64> = fixed.iter().map(|r| r.peak_intermediate_elements as f64).collect();
        println!(
            "forward-time exponent vs nodes: {:.3}; intermediate-counter exponent: {:.3}",
            loglog_slope(&ns, &fwd),
            loglog_slope(&ns, &peak)
        );
    }
    println!("bench table written to {}", rc.out_dir.join("bench.csv").display());
    Ok(())
}

/// Generates a synthetic dataset file.
pub fn cmd_synth(synth: &SynthConfig, output: &Path) -> Result<()> {
    let ds = synth_generate(synth)?;
    crate::data::save_series(&ds, output)?;
    println!(
        "synthetic dataset: {} nodes x {} steps ({} days at {} min) -> {}",
        ds.nodes(),
        ds.len(),
        synth.days,
        synth.granularity_minutes,
        output.display()
    );
    Ok(())
}

// ── CSV writers ───────────────────────────────────────────────────────

pub fn write_metrics_csv(report: &MetricsReport, path: &Path) -> Result<()> {
    let mut out = String::from("scope,mae,rmse,mape,r2\n");
    let cell = |m: &crate::analysis::Metrics| {
        format!(
            "{},{},{},{}",
            fmt_float(m.mae),
            fmt_float(m.rmse),
            m.mape.map(fmt_float).unwrap_or_else(|| "undefined".into()),
            fmt_float(m.r2)
        )
    };
    out.push_str(&format!("overall,{}\n", cell(&report.overall)));
    for (i, m) in report.per_step.iter().enumerate() {
        out.push_str(&format!("step_{},{}\n", i + 1, cell(m)));
    }
    atomic_write(path, out.as_bytes())
}

/// Fidelity table in the layout of the reconstruction-error table: one row
/// per layer, then eps_avg / mae / rmse rows, one column per agent count.
pub fn write_fidelity_csv(cells: &[FidelityCell], path: &Path) -> Result<()> {
    let layers = cells.first().map(|c| c.epsilon.len()).unwrap_or(0);
    let mut out = String::from("row");
    for c in cells {
        out.push_str(&format!(",a={}", c.agents));
    }
    out.push('\n');
    for l in 0..layers {
        out.push_str(&format!("epsilon_l{}", l + 1));
        for c in cells {
            out.push(',');
            out.push_str(&fmt_float(c.epsilon[l]));
        }
        out.push('\n');
    }
    for (label, get) in [
        ("epsilon_avg", &(|c: &FidelityCell| c.eps_avg) as &dyn Fn(&FidelityCell) -> f64),
        ("mae", &|c: &FidelityCell| c.mae),
        ("rmse", &|c: &FidelityCell| c.rmse),
    ] {
        out.push_str(label);
        for c in cells {
            out.push(',');
            out.push_str(&fmt_float(get(c)));
        }
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

/// Per-layer bounds that accompany the fidelity table.
pub fn write_fidelity_bounds_csv(cells: &[FidelityCell], path: &Path) -> Result<()> {
    let mut out = String::from("agents,layer,epsilon,lower_bound,upper_first_term\n");
    for c in cells {
        for l in 0..c.epsilon.len() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                c.agents,
                l + 1,
                fmt_float(c.epsilon[l]),
                fmt_float(c.lower_bound[l]),
                fmt_float(c.upper_first_term[l])
            ));
        }
    }
    atomic_write(path, out.as_bytes())
}

pub fn write_bench_csv(rows: &[BenchRow], path: &Path) -> Result<()> {
    let mut out = String::from(
        "nodes,input_steps,horizon,agents,forward_ms,train_step_ms,attn_mix_ms,peak_intermediate_elements\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.nodes,
            r.input_steps,
            r.horizon,
            r.agents,
            fmt_float(r.forward_ms),
            fmt_float(r.train_step_ms),
            fmt_float(r.attn_mix_ms),
            r.peak_intermediate_elements
        ));
    }
    atomic_write(path, out.as_bytes())
}

/// Mean router weights per (layer, node) plus the usage marginal.
pub fn write_expert_profile_csv(profile: &ExpertProfile, path: &Path) -> Result<()> {
    let e = profile.marginal.len();
    let mut out = String::from("scope,node");
    for i in 0..e {
        out.push_str(&format!(",w{i}"));
    }
    out.push('\n');
    for (l, t) in profile.per_layer_node_mean.iter().enumerate() {
        let nodes = t.shape[0];
        for node in 0..nodes {
            out.push_str(&format!("layer{l},{node}"));
            for i in 0..e {
                out.push(',');
                out.push_str(&fmt_float(t.at(&[node, i])));
            }
            out.push('\n');
        }
    }
    out.push_str("marginal,");
    for v in &profile.marginal {
        out.push(',');
        out.push_str(&fmt_float(*v));
    }
    out.push('\n');
    atomic_write(path, out.as_bytes())
}
