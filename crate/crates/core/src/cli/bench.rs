//! Scaling benchmark: wall-clock medians for forward and training steps
//! over a sweep of node counts / horizons / agent counts, plus the
//! deterministic attention-allocation counter.

use crate::model::{FastModel, ModelConfig, TraceMode};
use crate::tensor::{Graph, Tensor};
use crate::train::AdamState;
use crate::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

#[derive(Clone, Debug)]
pub struct BenchSpec {
    pub nodes: Vec<usize>,
    pub horizons: Vec<usize>,
    pub agents: Vec<usize>,
    pub input_steps: usize,
    pub dim: usize,
    pub experts: usize,
    pub layers: usize,
    /// Timed repetitions per row (the median is reported).
    pub reps: usize,
    pub warmup: usize,
    pub seed: u64,
}

impl Default for BenchSpec {
    fn default() -> Self {
        BenchSpec {
            nodes: vec![256, 512, 1024, 2048, 4096],
            horizons: vec![48],
            agents: vec![32],
            input_steps: 96,
            dim: 64,
            experts: 8,
            layers: 3,
            reps: 5,
            warmup: 2,
            seed: 17,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BenchRow {
    pub nodes: usize,
    pub input_steps: usize,
    pub horizon: usize,
    pub agents: usize,
    pub forward_ms: f64,
    pub train_step_ms: f64,
    /// Median share of forward time spent in the agent-score/mix stage.
    pub attn_mix_ms: f64,
    /// Peak elements allocated inside one attention call (deterministic).
    pub peak_intermediate_elements: usize,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Least-squares slope of ln(y) against ln(x).
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in lx.iter().zip(&ly) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}

pub fn run_bench(spec: &BenchSpec) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &n in &spec.nodes {
        for &p in &spec.horizons {
            for &a in &spec.agents {
                rows.push(bench_row(spec, n, p, a)?);
            }
        }
    }
    Ok(rows)
}

fn bench_row(spec: &BenchSpec, nodes: usize, horizon: usize, agents: usize) -> Result<BenchRow> {
    let cfg = ModelConfig {
        nodes,
        input_steps: spec.input_steps,
        horizon,
        dim: spec.dim,
        experts: spec.experts,
        agents,
        layers: spec.layers,
        steps_per_day: 96,
        days_per_week: 7,
        ha_router: true,
    };
    let model = FastModel::init(cfg.clone(), spec.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0xbeef);
    let x = Tensor::from_vec(
        vec![nodes, spec.input_steps],
        (0..nodes * spec.input_steps).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )?;
    let target = Tensor::zeros(vec![1, nodes, horizon]);

    let forward_once = |m: &FastModel| -> Result<(f64, f64, usize)> {
        let t0 = Instant::now();
        let mut g = Graph::new();
        let pass = m.forward_batch(&mut g, &x, &[0], &[0], TraceMode::Counters)?;
        let elapsed = t0.elapsed().as_secs_f64() * 1e3;
        let mix_ms = pass.trace.stages.attn_mix as f64 / 1e6;
        let peak = pass.trace.attn_alloc_elems.iter().copied().max().unwrap_or(0);
        Ok((elapsed, mix_ms, peak))
    };

    for _ in 0..spec.warmup {
        forward_once(&model)?;
    }
    let mut fwd = Vec::with_capacity(spec.reps);
    let mut mix = Vec::with_capacity(spec.reps);
    let mut peak = 0usize;
    for _ in 0..spec.reps {
        let (ms, mix_ms, pk) = forward_once(&model)?;
        fwd.push(ms);
        mix.push(mix_ms);
        peak = peak.max(pk);
    }

    let mut train_model = model.clone();
    let mut opt = AdamState::new(&train_model.params);
    let mut step_once = |m: &mut FastModel| -> Result<f64> {
        let t0 = Instant::now();
        m.params.zero_grads();
        let mut g = Graph::new();
        let pass = m.forward_batch(&mut g, &x, &[0], &[0], TraceMode::Counters)?;
        let loss = g.huber_vs(pass.output, &target, 1.0)?;
        g.backward(loss)?;
        m.pull_grads(&g, &pass.bound);
        opt.step(&mut m.params, 1e-3)?;
        Ok(t0.elapsed().as_secs_f64() * 1e3)
    };
    for _ in 0..spec.warmup.min(1) {
        step_once(&mut train_model)?;
    }
    let mut steps = Vec::with_capacity(spec.reps);
    for _ in 0..spec.reps {
        steps.push(step_once(&mut train_model)?);
    }

    Ok(BenchRow {
        nodes,
        input_steps: spec.input_steps,
        horizon,
        agents,
        forward_ms: median(fwd),
        train_step_ms: median(steps),
        attn_mix_ms: median(mix),
        peak_intermediate_elements: peak,
    })
}
