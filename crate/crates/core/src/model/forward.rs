//! Recorded forward pass of the model and the reference expert used as a
//! test oracle for the fused expert path.
//!
//! All activations carry an explicit leading batch dimension: inputs are
//! [B,N,T], hidden states [B,N,d], router weights [B,N,e]. Time-of-day and
//! day-of-week indices are per-sample scalars. The attention stage never
//! materializes anything of size N×N; its intermediates are counted per
//! call so the bound can be asserted.

use std::time::Instant;

use super::params::{pull_grads, BoundMoe, BoundParams};
use super::{ModelConfig, ModelParams};
use crate::tensor::{Graph, Tensor, TensorId};
use crate::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// How much of the forward pass to retain in the [`ForwardTrace`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceMode {
    /// Allocation counters and stage timers only (training / benchmarks).
    Counters,
    /// Also keep detached copies of per-layer states (analysis paths).
    Full,
}

/// Wall-clock nanoseconds per forward stage. `attn_mix` covers the score,
/// softmax, and two-sided mixing work that scales with the agent count;
/// `attn_proj` the d×d feature projections.
#[derive(Clone, Copy, Debug, Default)]
pub struct StageNanos {
    pub embed: u64,
    pub attn_proj: u64,
    pub attn_mix: u64,
    pub moe: u64,
    pub head: u64,
}

/// Per-layer states captured during a forward pass.
#[derive(Debug, Default)]
pub struct ForwardTrace {
    /// Hidden states; index 0 is the embedded input, 1..=L the block outputs.
    pub hidden: Vec<Tensor>,
    /// Post-attention states Z (one per block).
    pub pre_moe: Vec<Tensor>,
    /// Router weights; index 0 is the input layer, 1..=L the blocks.
    pub gates: Vec<Tensor>,
    /// Agent-over-node attention, [B,a,N], one per block.
    pub agg: Vec<Tensor>,
    /// Node-over-agent attention, [B,N,a], one per block.
    pub dist: Vec<Tensor>,
    /// Elements allocated inside each attention call.
    pub attn_alloc_elems: Vec<usize>,
    pub stages: StageNanos,
}

/// Result of one attention call.
#[derive(Debug)]
pub struct AttnOut {
    pub out: TensorId,
    pub agg: TensorId,
    pub dist: TensorId,
    pub alloc_elems: usize,
    pub proj_ns: u64,
    pub mix_ns: u64,
}

/// One recorded forward pass: the prediction node, the parameter bindings
/// (for gradient extraction), and the trace.
#[derive(Debug)]
pub struct ForwardPass {
    pub output: TensorId,
    pub bound: BoundParams,
    pub trace: ForwardTrace,
}

/// Architecture plus its parameters.
#[derive(Clone, Debug)]
pub struct FastModel {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl FastModel {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ModelParams::init(&config, &mut rng);
        Ok(FastModel { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        Ok(FastModel { config, params })
    }

    /// Enters every parameter into the graph as a trainable leaf.
    pub fn bind(&self, g: &mut Graph) -> BoundParams {
        BoundParams::bind(g, &self.params)
    }

    fn moe_of<'a>(&self, bound: &'a BoundParams, layer: usize) -> &'a BoundMoe {
        if layer == 0 {
            &bound.input_moe
        } else {
            &bound.blocks[layer - 1].moe
        }
    }

    /// Router weights, [B,N,e] with rows summing to 1. With the
    /// heterogeneity-aware router (the default), scores are
    /// softmax(X·W ⊕ R_S ⊕ R_T[tod] ⊕ R_W[dow]) — the raw series is scored
    /// at every layer. The ablated variant scores the layer input `z`
    /// instead and carries no biases.
    #[allow(clippy::too_many_arguments)]
    pub fn ha_router(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        x: TensorId,
        z: TensorId,
        tod: &[usize],
        dow: &[usize],
        layer: usize,
    ) -> Result<TensorId> {
        let m = self.moe_of(bound, layer);
        if !self.config.ha_router {
            let scores = g.matmul(z, m.router.score)?;
            return Ok(g.softmax_rows(scores));
        }
        let mut scores = g.matmul(x, m.router.score)?;
        scores = g.add(scores, m.router.bias_spatial)?;
        let bt = g.gather_rows(m.router.bias_tod, tod)?;
        scores = g.add(scores, bt)?;
        let bw = g.gather_rows(m.router.bias_dow, dow)?;
        scores = g.add(scores, bw)?;
        Ok(g.softmax_rows(scores))
    }

    /// All expert outputs at once: split the fused projection into gate and
    /// linear halves, gate, and reshape to [B,N,e,d]. Slice [..,i,..] equals
    /// [`glu_expert`] applied with expert i's unpacked weights.
    pub fn parallel_glu_experts(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        z: TensorId,
        layer: usize,
    ) -> Result<TensorId> {
        let m = self.moe_of(bound, layer);
        let (e, d) = (self.config.experts, self.config.dim);
        let f = g.matmul(z, m.fused_weight)?;
        let f = g.add(f, m.fused_bias)?;
        let (gate_pre, linear) = g.split_half_last(f)?;
        let gate = g.sigmoid(gate_pre);
        let mixed = g.mul(gate, linear)?;
        let mut shape = g.shape(mixed)[..g.shape(mixed).len() - 1].to_vec();
        shape.push(e);
        shape.push(d);
        g.reshape(mixed, &shape)
    }

    /// Dense mixture: every expert contributes, weighted per node by the
    /// router. Returns (output [B,N,d], router weights [B,N,e]).
    #[allow(clippy::too_many_arguments)]
    pub fn ha_moe(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        z: TensorId,
        x: TensorId,
        tod: &[usize],
        dow: &[usize],
        layer: usize,
    ) -> Result<(TensorId, TensorId)> {
        let gate = self.ha_router(g, bound, x, z, tod, dow, layer)?;
        let experts = self.parallel_glu_experts(g, bound, z, layer)?;
        let mut gshape = g.shape(gate).to_vec();
        gshape.push(1);
        let gate4 = g.reshape(gate, &gshape)?;
        let weighted = g.mul(experts, gate4)?;
        let out = g.sum_axis(weighted, g.shape(weighted).len() - 2)?;
        Ok((out, gate))
    }

    /// Two-stage agent attention. Agents first attend over all nodes, then
    /// nodes read the agent summaries back; the value contraction happens on
    /// the agent side first so no N×N product ever exists.
    pub fn aga_attention(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        layer: usize,
        h: TensorId,
    ) -> Result<AttnOut> {
        let at = &bound.blocks[layer - 1].attn;
        let inv_sqrt_d = 1.0 / (self.config.dim as f64).sqrt();
        g.begin_alloc_scope();
        let t0 = Instant::now();
        let agent_q = g.matmul(at.agents, at.agg_query)?;
        let node_k = g.matmul(h, at.agg_key)?;
        let node_q = g.matmul(h, at.dist_query)?;
        let agent_k = g.matmul(at.agents, at.dist_key)?;
        let values = g.matmul(h, at.value)?;
        let proj_ns = t0.elapsed().as_nanos() as u64;

        let t1 = Instant::now();
        let node_k_t = g.transpose_last(node_k)?;
        let agg_scores = g.matmul(agent_q, node_k_t)?;
        let agg_scores = g.scale(agg_scores, inv_sqrt_d);
        let agg = g.softmax_rows(agg_scores);

        let agent_k_t = g.transpose_last(agent_k)?;
        let dist_scores = g.matmul(node_q, agent_k_t)?;
        let dist_scores = g.scale(dist_scores, inv_sqrt_d);
        let dist = g.softmax_rows(dist_scores);

        let summary = g.matmul(agg, values)?;
        let out = g.matmul(dist, summary)?;
        let mix_ns = t1.elapsed().as_nanos() as u64;
        let alloc_elems = g.end_alloc_scope();
        Ok(AttnOut { out, agg, dist, alloc_elems, proj_ns, mix_ns })
    }

    /// Input layer: mixture-compressed history plus spatial and temporal
    /// embeddings. Returns (H0 [B,N,d], router weights).
    pub fn embed_input(
        &self,
        g: &mut Graph,
        bound: &BoundParams,
        x: TensorId,
        tod: &[usize],
        dow: &[usize],
    ) -> Result<(TensorId, TensorId)> {
        let (compressed, gate) = self.ha_moe(g, bound, x, x, tod, dow, 0)?;
        let h = g.add(compressed, bound.spatial_embed)?;
        let tod_e = g.gather_rows(bound.tod_embed, tod)?;
        let h = g.add(h, tod_e)?;
        let dow_e = g.gather_rows(bound.dow_embed, dow)?;
        let h = g.add(h, dow_e)?;
        Ok((h, gate))
    }

    /// Full forward pass over a batch; `x` is [B,N,T] (or [N,T] for B=1),
    /// `tod`/`dow` hold one index per sample.
    pub fn forward_batch(
        &self,
        g: &mut Graph,
        x: &Tensor,
        tod: &[usize],
        dow: &[usize],
        mode: TraceMode,
    ) -> Result<ForwardPass> {
        let cfg = &self.config;
        let (b, n, t) = match x.shape.as_slice() {
            [n, t] => (1, *n, *t),
            [b, n, t] => (*b, *n, *t),
            other => {
                return Err(Error::Shape { op: "forward", lhs: other.to_vec(), rhs: vec![0, cfg.nodes, cfg.input_steps] })
            }
        };
        if n != cfg.nodes || t != cfg.input_steps {
            return Err(Error::Shape {
                op: "forward",
                lhs: vec![b, n, t],
                rhs: vec![b, cfg.nodes, cfg.input_steps],
            });
        }
        if tod.len() != b || dow.len() != b {
            return Err(Error::contract(format!(
                "expected {b} time indices, got {} tod / {} dow",
                tod.len(),
                dow.len()
            )));
        }
        if let Some(&i) = tod.iter().find(|&&i| i >= cfg.steps_per_day) {
            return Err(Error::contract(format!(
                "time-of-day index {i} out of range 0..{}",
                cfg.steps_per_day
            )));
        }
        if let Some(&i) = dow.iter().find(|&&i| i >= cfg.days_per_week) {
            return Err(Error::contract(format!("day-of-week index {i} out of range 0..7")));
        }
        if !x.is_finite() {
            return Err(Error::NonFinite { stage: "input".into() });
        }

        let bound = self.bind(g);
        let mut trace = ForwardTrace::default();
        let x_id = if x.ndim() == 2 {
            let x3 = x.reshaped(vec![1, n, t])?;
            g.input(&x3)
        } else {
            g.input(x)
        };

        let t0 = Instant::now();
        let (h0, gate0) = self.embed_input(g, &bound, x_id, tod, dow)?;
        trace.stages.embed += t0.elapsed().as_nanos() as u64;
        check_stage(g, h0, "embed")?;
        if mode == TraceMode::Full {
            trace.hidden.push(g.value(h0));
            trace.gates.push(g.value(gate0));
        }

        let mut h = h0;
        let mut block_outputs = Vec::with_capacity(cfg.layers);
        for l in 1..=cfg.layers {
            let attn = self.aga_attention(g, &bound, l, h)?;
            trace.stages.attn_proj += attn.proj_ns;
            trace.stages.attn_mix += attn.mix_ns;
            trace.attn_alloc_elems.push(attn.alloc_elems);

            let t1 = Instant::now();
            let res = g.add(attn.out, h)?;
            let z = g.rmsnorm(res, bound.blocks[l - 1].attn_norm_gain)?;
            check_stage(g, z, &format!("block.{l}.attention"))?;

            let (moe, gate) = self.ha_moe(g, &bound, z, x_id, tod, dow, l)?;
            let res2 = g.add(moe, z)?;
            let hn = g.rmsnorm(res2, bound.blocks[l - 1].moe_norm_gain)?;
            trace.stages.moe += t1.elapsed().as_nanos() as u64;
            check_stage(g, hn, &format!("block.{l}.moe"))?;

            if mode == TraceMode::Full {
                trace.pre_moe.push(g.value(z));
                trace.gates.push(g.value(gate));
                trace.agg.push(g.value(attn.agg));
                trace.dist.push(g.value(attn.dist));
                trace.hidden.push(g.value(hn));
            }
            block_outputs.push(hn);
            h = hn;
        }

        let t2 = Instant::now();
        let u = g.concat_last(&block_outputs)?;
        let pre = g.matmul(u, bound.head_w1)?;
        let pre = g.add(pre, bound.head_b1)?;
        let act = g.relu(pre);
        let out = g.matmul(act, bound.head_w2)?;
        let y = g.add(out, bound.head_b2)?;
        trace.stages.head += t2.elapsed().as_nanos() as u64;
        check_stage(g, y, "head")?;

        Ok(ForwardPass { output: y, bound, trace })
    }

    /// Single-sample forecast; returns the [N,P] prediction and the trace.
    pub fn predict(
        &self,
        x: &Tensor,
        tod: usize,
        dow: usize,
        mode: TraceMode,
    ) -> Result<(Tensor, ForwardTrace)> {
        let mut g = Graph::new();
        let pass = self.forward_batch(&mut g, x, &[tod], &[dow], mode)?;
        let y = g.value(pass.output).reshaped(vec![self.config.nodes, self.config.horizon])?;
        Ok((y, pass.trace))
    }

    /// Accumulates this pass's parameter gradients into `self.params`
    /// (call after `Graph::backward`).
    pub fn pull_grads(&mut self, g: &Graph, bound: &BoundParams) {
        pull_grads(g, bound, &mut self.params);
    }
}

fn check_stage(g: &Graph, id: TensorId, stage: &str) -> Result<()> {
    if g.data(id).iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { stage: stage.to_string() })
    }
}

// ── Reference expert (oracle path) ────────────────────────────────────

/// Unpacks expert `i`'s (gate weight, gate bias, linear weight, linear
/// bias) from the fused matrices under the canonical column layout: the
/// first e·d columns hold the gate blocks, the second half the linear
/// blocks, each grouped by expert.
pub fn unpack_expert(
    fused_weight: &Tensor,
    fused_bias: &Tensor,
    experts: usize,
    dim: usize,
    expert: usize,
) -> (Tensor, Tensor, Tensor, Tensor) {
    let din = fused_weight.shape[0];
    let cols = fused_weight.shape[1];
    debug_assert_eq!(cols, 2 * experts * dim);
    let half = experts * dim;
    let slice_w = |start: usize| {
        let mut data = Vec::with_capacity(din * dim);
        for r in 0..din {
            data.extend_from_slice(&fused_weight.data[r * cols + start..r * cols + start + dim]);
        }
        Tensor::from_vec(vec![din, dim], data).unwrap()
    };
    let slice_b =
        |start: usize| Tensor::from_vec(vec![dim], fused_bias.data[start..start + dim].to_vec()).unwrap();
    (
        slice_w(expert * dim),
        slice_b(expert * dim),
        slice_w(half + expert * dim),
        slice_b(half + expert * dim),
    )
}

/// Reference single expert: sigmoid(z·Wg + bg) ⊙ (z·Wl + bl), computed with
/// plain tensor math. Used only as the oracle for the fused path.
pub fn glu_expert(
    z: &Tensor,
    gate_w: &Tensor,
    gate_b: &Tensor,
    lin_w: &Tensor,
    lin_b: &Tensor,
) -> Result<Tensor> {
    let gate = z.matmul(gate_w)?.add_b(gate_b)?.map(crate::tensor::sigmoid);
    let lin = z.matmul(lin_w)?.add_b(lin_b)?;
    gate.mul_b(&lin)
}
