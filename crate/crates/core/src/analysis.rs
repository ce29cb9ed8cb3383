//! Forecast metrics and the spatial-fidelity toolkit: reconstruction error
//! of the attention bottleneck, its spectral lower bound, the first term of
//! the kernel-approximation upper bound, and correlation statistics.

use crate::data::{chronological_split, Normalizer, SeriesDataset, TimeAnchor, WindowSpec};
use crate::model::{FastModel, TraceMode};
use crate::tensor::{Graph, Tensor};
use crate::{Error, Result};
use nalgebra::DMatrix;

/// Error metrics over one prediction set. `mape` is None when every target
/// is masked (|y| below the mask threshold).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    /// Percent, masked where |y| < 1e-6.
    pub mape: Option<f64>,
    pub r2: f64,
}

/// Overall metrics plus one entry per horizon step.
#[derive(Clone, Debug)]
pub struct MetricsReport {
    pub overall: Metrics,
    pub per_step: Vec<Metrics>,
}

const MAPE_MASK: f64 = 1e-6;

/// Streaming accumulator so evaluation never materializes all predictions.
#[derive(Clone, Debug)]
pub struct MetricsAccum {
    buckets: Vec<Bucket>, // horizon buckets followed by the overall bucket
}

#[derive(Clone, Copy, Debug, Default)]
struct Bucket {
    n: f64,
    abs: f64,
    sq: f64,
    y_sum: f64,
    y_sq: f64,
    mape_sum: f64,
    mape_n: f64,
}

impl Bucket {
    fn add(&mut self, y: f64, yhat: f64) {
        let e = y - yhat;
        self.n += 1.0;
        self.abs += e.abs();
        self.sq += e * e;
        self.y_sum += y;
        self.y_sq += y * y;
        if y.abs() >= MAPE_MASK {
            self.mape_sum += (e / y).abs();
            self.mape_n += 1.0;
        }
    }

    fn finish(&self) -> Metrics {
        let mae = self.abs / self.n;
        let rmse = (self.sq / self.n).sqrt();
        let mape = (self.mape_n > 0.0).then(|| 100.0 * self.mape_sum / self.mape_n);
        // Σ(y-ȳ)² = Σy² − n·ȳ²
        let mean = self.y_sum / self.n;
        let ss_tot = self.y_sq - self.n * mean * mean;
        let r2 = if ss_tot > 0.0 { 1.0 - self.sq / ss_tot } else { 1.0 - self.sq };
        Metrics { mae, rmse, mape, r2 }
    }
}

impl MetricsAccum {
    pub fn new(horizon: usize) -> Self {
        MetricsAccum { buckets: vec![Bucket::default(); horizon + 1] }
    }

    pub fn add(&mut self, step: usize, y: f64, yhat: f64) {
        self.buckets[step].add(y, yhat);
        self.buckets.last_mut().unwrap().add(y, yhat);
    }

    pub fn finish(&self) -> Result<MetricsReport> {
        let overall = self.buckets.last().unwrap();
        if overall.n == 0.0 {
            return Err(Error::contract("metrics over an empty prediction set"));
        }
        Ok(MetricsReport {
            overall: overall.finish(),
            per_step: self.buckets[..self.buckets.len() - 1].iter().map(Bucket::finish).collect(),
        })
    }
}

/// Metrics of `yhat` against `y`; the last dimension indexes horizon steps.
pub fn metrics(y: &Tensor, yhat: &Tensor) -> Result<MetricsReport> {
    if y.shape != yhat.shape {
        return Err(Error::Shape { op: "metrics", lhs: y.shape.clone(), rhs: yhat.shape.clone() });
    }
    let p = *y.shape.last().unwrap();
    let mut acc = MetricsAccum::new(p);
    for (i, (&yv, &yh)) in y.data.iter().zip(&yhat.data).enumerate() {
        acc.add(i % p, yv, yh);
    }
    acc.finish()
}

// ── Spatial fidelity ──────────────────────────────────────────────────

/// Effective projection of one attention pass: P = A_dist · A_agg (N×N).
/// Analysis-only; the model itself never forms this product.
pub fn projection_matrix(a_dist: &Tensor, a_agg: &Tensor) -> Result<Tensor> {
    a_dist.matmul(a_agg)
}

/// Normalized reconstruction error ‖H − P·H‖_F / ‖H‖_F.
pub fn reconstruction_error(h: &Tensor, p: &Tensor) -> Result<f64> {
    let denom = h.frobenius_norm();
    if denom == 0.0 {
        return Err(Error::contract("reconstruction error of a zero-norm feature matrix"));
    }
    let ph = p.matmul(h)?;
    let diff: f64 = h.data.iter().zip(&ph.data).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(diff.sqrt() / denom)
}

fn as_dmatrix(t: &Tensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.shape[0], t.shape[1], &t.data)
}

/// Singular values of a 2-D tensor, descending.
pub fn singular_values(t: &Tensor) -> Vec<f64> {
    let mut sv: Vec<f64> = as_dmatrix(t).singular_values().iter().cloned().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sv
}

/// Count of singular values above `rel_tol` times the largest.
pub fn numerical_rank(t: &Tensor, rel_tol: f64) -> usize {
    let sv = singular_values(t);
    match sv.first() {
        Some(&s0) if s0 > 0.0 => sv.iter().filter(|&&s| s > rel_tol * s0).count(),
        _ => 0,
    }
}

/// Best achievable normalized residual of any rank-`a` approximation:
/// sqrt(Σ_{i>a} σ_i²) / ‖H‖_F.
pub fn eckart_young_lower_bound(h: &Tensor, a: usize) -> f64 {
    let sv = singular_values(h);
    let total: f64 = sv.iter().map(|s| s * s).sum();
    if total == 0.0 {
        return 0.0;
    }
    let tail: f64 = sv.iter().skip(a).map(|s| s * s).sum();
    (tail / total).sqrt()
}

/// Spectral first term of the kernel-approximation upper bound:
/// sqrt(Σ_{i>a} λ_i²) / ‖H‖_F with λ the eigenvalues of H·Hᵀ. The
/// additive O(1/√a) sampling term has no stated constant and is omitted.
pub fn nystrom_upper_first_term(h: &Tensor, a: usize) -> f64 {
    let m = as_dmatrix(h);
    let gram = &m * m.transpose();
    let mut eig: Vec<f64> =
        gram.symmetric_eigen().eigenvalues.iter().map(|&l: &f64| l.max(0.0)).collect();
    eig.sort_by(|x, y| y.partial_cmp(x).unwrap());
    let denom = h.frobenius_norm();
    if denom == 0.0 {
        return 0.0;
    }
    let tail: f64 = eig.iter().skip(a).map(|l| l * l).sum();
    tail.sqrt() / denom
}

/// Top-`a` orthogonal projector U_a·U_aᵀ of H's column space (oracle for
/// bound-tightness checks).
pub fn top_a_projector(h: &Tensor, a: usize) -> Result<Tensor> {
    let m = as_dmatrix(h);
    let n = m.nrows();
    let svd = m.svd(true, false);
    let u = svd.u.as_ref().expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].partial_cmp(&svd.singular_values[i]).unwrap());
    let mut p = DMatrix::zeros(n, n);
    for &i in order.iter().take(a) {
        let col = u.column(i);
        for r in 0..n {
            for c in 0..n {
                p[(r, c)] += col[r] * col[c];
            }
        }
    }
    // symmetric, so row-major export needs no transpose fixup
    Tensor::from_vec(vec![n, n], p.as_slice().to_vec())
}

// ── Correlation & routing statistics ──────────────────────────────────

/// Sample Pearson correlation; undefined (error) when either variance is
/// zero or fewer than two points are given.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::contract("pearson needs two equally long series of length >= 2"));
    }
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::contract("pearson undefined for zero-variance input"));
    }
    Ok(cov / (vx * vy).sqrt())
}

/// Natural-log entropy of a probability vector (zero entries contribute 0).
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

// ── Fidelity sweep over trained models ────────────────────────────────

/// One column of the fidelity table: per-layer reconstruction errors with
/// their bounds, plus forecast errors of the same model.
#[derive(Clone, Debug)]
pub struct FidelityCell {
    pub agents: usize,
    pub epsilon: Vec<f64>,
    pub lower_bound: Vec<f64>,
    pub upper_first_term: Vec<f64>,
    pub eps_avg: f64,
    pub mae: f64,
    pub rmse: f64,
}

/// Per-layer reconstruction errors of one trained model, averaged over the
/// first `batch_samples` test windows, plus its test MAE/RMSE.
pub fn fidelity_cell(
    model: &FastModel,
    ds: &SeriesDataset,
    batch_samples: usize,
    anchor: TimeAnchor,
) -> Result<FidelityCell> {
    let cfg = &model.config;
    let splits = chronological_split(ds.len(), (0.6, 0.2, 0.2))?;
    let norm = Normalizer::fit(ds, splits.train.clone(), crate::data::NormMode::PerNode)?;
    let ds_norm = norm.apply_dataset(ds);

    let report =
        crate::train::evaluate_model(model, ds, &ds_norm, &norm, splits.test.clone(), anchor, 64)?;

    let spec = WindowSpec {
        input_steps: cfg.input_steps,
        horizon: cfg.horizon,
        batch: batch_samples,
        anchor,
    };
    let batch = crate::data::windows(&ds_norm, splits.test, spec, None)?
        .next()
        .ok_or_else(|| Error::contract("test split yields no fidelity batch"))?;
    let mut g = Graph::new();
    let pass = model.forward_batch(&mut g, &batch.x, &batch.tod, &batch.dow, TraceMode::Full)?;
    let trace = pass.trace;

    let b = batch.tod.len();
    let (n, d, a) = (cfg.nodes, cfg.dim, cfg.agents);
    let mut epsilon = Vec::with_capacity(cfg.layers);
    let mut lower = Vec::with_capacity(cfg.layers);
    let mut upper = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        let mut eps_sum = 0.0;
        let mut low_sum = 0.0;
        let mut up_sum = 0.0;
        for bi in 0..b {
            let h = slice_sample(&trace.hidden[l], bi, n, d);
            let dist = slice_sample(&trace.dist[l], bi, n, a);
            let agg = slice_sample(&trace.agg[l], bi, a, n);
            let p = projection_matrix(&dist, &agg)?;
            eps_sum += reconstruction_error(&h, &p)?;
            low_sum += eckart_young_lower_bound(&h, a);
            up_sum += nystrom_upper_first_term(&h, a);
        }
        epsilon.push(eps_sum / b as f64);
        lower.push(low_sum / b as f64);
        upper.push(up_sum / b as f64);
    }
    let eps_avg = epsilon.iter().sum::<f64>() / epsilon.len() as f64;
    Ok(FidelityCell {
        agents: a,
        epsilon,
        lower_bound: lower,
        upper_first_term: upper,
        eps_avg,
        mae: report.overall.mae,
        rmse: report.overall.rmse,
    })
}

/// Fidelity cells for several trained models (typically one per agent
/// count), in input order.
pub fn fidelity_sweep(
    models: &[FastModel],
    ds: &SeriesDataset,
    batch_samples: usize,
    anchor: TimeAnchor,
) -> Result<Vec<FidelityCell>> {
    models.iter().map(|m| fidelity_cell(m, ds, batch_samples, anchor)).collect()
}

fn slice_sample(t: &Tensor, b: usize, rows: usize, cols: usize) -> Tensor {
    let size = rows * cols;
    Tensor::from_vec(vec![rows, cols], t.data[b * size..(b + 1) * size].to_vec()).unwrap()
}

// ── Expert usage profile ──────────────────────────────────────────────

/// Mean router weights per (layer, node) over evaluation windows, and the
/// entropy of the overall expert-usage marginal.
#[derive(Clone, Debug)]
pub struct ExpertProfile {
    /// One [N,e] tensor per router layer (index 0 = input layer).
    pub per_layer_node_mean: Vec<Tensor>,
    /// Mean router weight per expert over all layers, nodes, and windows.
    pub marginal: Vec<f64>,
    pub entropy: f64,
}

pub fn expert_weight_profile(
    model: &FastModel,
    ds_norm: &SeriesDataset,
    range: std::ops::Range<usize>,
    anchor: TimeAnchor,
    max_windows: usize,
) -> Result<ExpertProfile> {
    let cfg = &model.config;
    let (n, e) = (cfg.nodes, cfg.experts);
    let spec =
        WindowSpec { input_steps: cfg.input_steps, horizon: cfg.horizon, batch: 16, anchor };
    let mut sums = vec![Tensor::zeros(vec![n, e]); cfg.layers + 1];
    let mut samples = 0usize;
    for batch in crate::data::windows(ds_norm, range, spec, None)? {
        let mut g = Graph::new();
        let pass = model.forward_batch(&mut g, &batch.x, &batch.tod, &batch.dow, TraceMode::Full)?;
        let b = batch.tod.len();
        for (l, gate) in pass.trace.gates.iter().enumerate() {
            for bi in 0..b {
                for i in 0..n * e {
                    sums[l].data[i] += gate.data[bi * n * e + i];
                }
            }
        }
        samples += b;
        if samples >= max_windows {
            break;
        }
    }
    if samples == 0 {
        return Err(Error::contract("no windows available for the expert profile"));
    }
    for s in sums.iter_mut() {
        for v in s.data.iter_mut() {
            *v /= samples as f64;
        }
    }
    let mut marginal = vec![0.0; e];
    for s in &sums {
        for node in 0..n {
            for (k, m) in marginal.iter_mut().enumerate() {
                *m += s.data[node * e + k];
            }
        }
    }
    let total: f64 = marginal.iter().sum();
    for v in marginal.iter_mut() {
        *v /= total;
    }
    let h = entropy(&marginal);
    Ok(ExpertProfile { per_layer_node_mean: sums, marginal, entropy: h })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(shape.to_vec(), data).unwrap()
    }

    /// Random rank-<=a projection built from row-stochastic factors.
    fn random_stochastic_projection(rng: &mut ChaCha8Rng, n: usize, a: usize) -> Tensor {
        let softmax_rows = |t: &Tensor| {
            let mut g = Graph::new();
            let id = g.input(t);
            let s = g.softmax_rows(id);
            g.value(s)
        };
        let dist = softmax_rows(&rand_tensor(rng, &[n, a]));
        let agg = softmax_rows(&rand_tensor(rng, &[a, n]));
        projection_matrix(&dist, &agg).unwrap()
    }

    #[test]
    fn metrics_exact_prediction() {
        let y = Tensor::from_vec(vec![2, 3], vec![1.0, -2.0, 3.0, 4.0, 5.0, -6.0]).unwrap();
        let r = metrics(&y, &y).unwrap();
        assert_eq!(r.overall.mae, 0.0);
        assert_eq!(r.overall.rmse, 0.0);
        assert_eq!(r.overall.mape, Some(0.0));
        assert_eq!(r.overall.r2, 1.0);
        assert_eq!(r.per_step.len(), 3);
    }

    #[test]
    fn metrics_mean_predictor_has_zero_r2() {
        let y = Tensor::from_vec(vec![1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let yhat = Tensor::filled(vec![1, 4], 2.5);
        let r = metrics(&y, &yhat).unwrap();
        assert!(r.overall.r2.abs() < 1e-12);
    }

    #[test]
    fn metrics_point_example() {
        let y = Tensor::from_vec(vec![1, 1], vec![100.0]).unwrap();
        let yhat = Tensor::from_vec(vec![1, 1], vec![90.0]).unwrap();
        let r = metrics(&y, &yhat).unwrap();
        assert_eq!(r.overall.mae, 10.0);
        assert_eq!(r.overall.rmse, 10.0);
        assert_eq!(r.overall.mape, Some(10.0));
    }

    #[test]
    fn metrics_masks_tiny_targets() {
        let y = Tensor::from_vec(vec![1, 2], vec![0.0, 0.0]).unwrap();
        let yhat = Tensor::from_vec(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let r = metrics(&y, &yhat).unwrap();
        assert_eq!(r.overall.mape, None);
    }

    #[test]
    fn mae_never_exceeds_rmse() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let y = rand_tensor(&mut rng, &[4, 6]);
            let yhat = rand_tensor(&mut rng, &[4, 6]);
            let r = metrics(&y, &yhat).unwrap();
            assert!(r.overall.mae <= r.overall.rmse + 1e-12);
            for m in &r.per_step {
                assert!(m.mae <= m.rmse + 1e-12);
            }
        }
    }

    #[test]
    fn projection_identity_and_stochasticity() {
        let eye = Tensor::from_vec(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let p = projection_matrix(&eye, &eye).unwrap();
        assert_eq!(p.data, eye.data);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_stochastic_projection(&mut rng, 6, 3);
        for row in p.data.chunks(6) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
        assert!(numerical_rank(&p, 1e-10) <= 3);
    }

    #[test]
    fn reconstruction_error_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = rand_tensor(&mut rng, &[5, 4]);
        let eye_data: Vec<f64> = (0..25).map(|i| if i % 6 == 0 { 1.0 } else { 0.0 }).collect();
        let eye = Tensor::from_vec(vec![5, 5], eye_data).unwrap();
        assert!(reconstruction_error(&h, &eye).unwrap() < 1e-15);
        let zero = Tensor::zeros(vec![5, 5]);
        assert!((reconstruction_error(&h, &zero).unwrap() - 1.0).abs() < 1e-15);
        let hzero = Tensor::zeros(vec![5, 4]);
        assert!(reconstruction_error(&hzero, &eye).is_err());
    }

    #[test]
    fn top_a_projector_attains_the_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for a in [1usize, 2, 3] {
            let h = rand_tensor(&mut rng, &[6, 4]);
            let p = top_a_projector(&h, a).unwrap();
            let eps = reconstruction_error(&h, &p).unwrap();
            let bound = eckart_young_lower_bound(&h, a);
            assert!((eps - bound).abs() < 1e-9, "a={a}: eps {eps} vs bound {bound}");
        }
    }

    #[test]
    fn eckart_young_examples() {
        // σ = (2,1,0) via a diagonal matrix
        let h =
            Tensor::from_vec(vec![3, 3], vec![2.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let b = eckart_young_lower_bound(&h, 1);
        assert!((b - 1.0 / 5.0_f64.sqrt()).abs() < 1e-12);
        assert_eq!(eckart_young_lower_bound(&h, 2), 0.0);
        assert_eq!(eckart_young_lower_bound(&h, 5), 0.0);
    }

    #[test]
    fn bound_holds_for_random_projections() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..60 {
            let n = 8;
            let a = rng.gen_range(1..=4);
            let h = rand_tensor(&mut rng, &[n, 5]);
            let p = random_stochastic_projection(&mut rng, n, a);
            let eps = reconstruction_error(&h, &p).unwrap();
            let bound = eckart_young_lower_bound(&h, a);
            assert!(eps >= bound - 1e-9, "eps {eps} < bound {bound}");
        }
    }

    #[test]
    fn nystrom_first_term_matches_singular_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let h = rand_tensor(&mut rng, &[5, 3]);
        let sv = singular_values(&h);
        for a in 0..4 {
            let direct = nystrom_upper_first_term(&h, a);
            let tail: f64 = sv.iter().skip(a).map(|s| s.powi(4)).sum();
            let total: f64 = sv.iter().map(|s| s * s).sum();
            let expect = tail.sqrt() / total.sqrt();
            assert!((direct - expect).abs() < 1e-9, "a={a}: {direct} vs {expect}");
        }
        // forced: σ = (2,1), a=1 → sqrt(1)/sqrt(5)
        let h2 = Tensor::from_vec(vec![2, 2], vec![2.0, 0.0, 0.0, 1.0]).unwrap();
        assert!((nystrom_upper_first_term(&h2, 1) - 1.0 / 5.0_f64.sqrt()).abs() < 1e-12);
        assert_eq!(nystrom_upper_first_term(&h2, 2), 0.0);
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
        assert!((pearson(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-12);
        assert!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn pearson_affine_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let base = pearson(&x, &y).unwrap();
        let xs: Vec<f64> = x.iter().map(|v| 3.5 * v + 7.0).collect();
        let ys: Vec<f64> = y.iter().map(|v| 0.25 * v - 2.0).collect();
        assert!((pearson(&xs, &y).unwrap() - base).abs() < 1e-10);
        assert!((pearson(&x, &ys).unwrap() - base).abs() < 1e-10);
    }

    #[test]
    fn entropy_examples() {
        let e = 8usize;
        let uniform = vec![1.0 / e as f64; e];
        assert!((entropy(&uniform) - (e as f64).ln()).abs() < 1e-12);
        let mut onehot = vec![0.0; e];
        onehot[3] = 1.0;
        assert_eq!(entropy(&onehot), 0.0);
    }
}
