//! Trainable parameters, their initialization, and the name registry used
//! for gradient checking, checkpoints, and the optimizer.

use super::ModelConfig;
use crate::tensor::{Graph, Tensor, TensorId};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[derive(Clone, Debug)]
pub struct RouterParams {
    /// Score projection of the raw series, T×e.
    pub score: Tensor,
    /// Per-node expert bias, N×e.
    pub bias_spatial: Tensor,
    /// Time-of-day expert bias table, steps_per_day×e.
    pub bias_tod: Tensor,
    /// Day-of-week expert bias table, 7×e.
    pub bias_dow: Tensor,
}

#[derive(Clone, Debug)]
pub struct MoeParams {
    pub router: RouterParams,
    /// Fused expert weights, din×2ed: all e gate blocks, then all e linear
    /// blocks, each half grouped by expert (expert i's gate occupies
    /// columns [i·d, (i+1)·d) of the first half).
    pub fused_weight: Tensor,
    /// Fused expert bias, 2ed, same column layout.
    pub fused_bias: Tensor,
}

#[derive(Clone, Debug)]
pub struct AttnParams {
    /// Agent token embeddings, a×d.
    pub agents: Tensor,
    /// Query projection applied to the agents in the aggregation step, d×d.
    pub agg_query: Tensor,
    /// Key projection applied to the nodes in the aggregation step, d×d.
    pub agg_key: Tensor,
    /// Query projection applied to the nodes in the distribution step, d×d.
    pub dist_query: Tensor,
    /// Key projection applied to the agents in the distribution step, d×d.
    pub dist_key: Tensor,
    /// Value projection, d×d.
    pub value: Tensor,
}

#[derive(Clone, Debug)]
pub struct BlockParams {
    pub attn: AttnParams,
    pub attn_norm_gain: Tensor,
    pub moe: MoeParams,
    pub moe_norm_gain: Tensor,
}

#[derive(Clone, Debug)]
pub struct HeadParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

/// All trainable state, addressable by dotted name via [`ModelParams::entries`].
#[derive(Clone, Debug)]
pub struct ModelParams {
    /// Node embedding table, N×d.
    pub spatial_embed: Tensor,
    /// Time-of-day embedding table, steps_per_day×d.
    pub tod_embed: Tensor,
    /// Day-of-week embedding table, 7×d.
    pub dow_embed: Tensor,
    /// Input compression mixture (layer 0); experts map T→d.
    pub input_moe: MoeParams,
    /// Backbone blocks 1..=L; their experts map d→d.
    pub blocks: Vec<BlockParams>,
    pub head: HeadParams,
}

fn uniform_fanin(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let bound = 1.0 / (rows as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::from_vec(vec![rows, cols], data).unwrap().with_grad()
}

fn normal_embed(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let dist = Normal::new(0.0, 0.02).unwrap();
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Tensor::from_vec(vec![rows, cols], data).unwrap().with_grad()
}

fn zeros_vec(len: usize) -> Tensor {
    Tensor::zeros(vec![len]).with_grad()
}

fn ones_vec(len: usize) -> Tensor {
    Tensor::ones(vec![len]).with_grad()
}

fn init_moe(rng: &mut ChaCha8Rng, cfg: &ModelConfig, din: usize) -> MoeParams {
    let (e, d) = (cfg.experts, cfg.dim);
    // the ablated router scores the layer input instead of the raw series
    let score_rows = if cfg.ha_router { cfg.input_steps } else { din };
    MoeParams {
        router: RouterParams {
            score: uniform_fanin(rng, score_rows, e),
            bias_spatial: normal_embed(rng, cfg.nodes, e),
            bias_tod: normal_embed(rng, cfg.steps_per_day, e),
            bias_dow: normal_embed(rng, cfg.days_per_week, e),
        },
        fused_weight: uniform_fanin(rng, din, 2 * e * d),
        fused_bias: zeros_vec(2 * e * d),
    }
}

impl ModelParams {
    /// Draws fresh parameters; the draw order is fixed so a seed pins every
    /// value. Weight matrices are Uniform(±1/√fan_in); embedding tables and
    /// router biases are Normal(0, 0.02²); additive biases start at zero and
    /// norm gains at one.
    pub fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let (d, ld) = (cfg.dim, cfg.layers * cfg.dim);
        let spatial_embed = normal_embed(rng, cfg.nodes, d);
        let tod_embed = normal_embed(rng, cfg.steps_per_day, d);
        let dow_embed = normal_embed(rng, cfg.days_per_week, d);
        let input_moe = init_moe(rng, cfg, cfg.input_steps);
        let blocks = (0..cfg.layers)
            .map(|_| BlockParams {
                attn: AttnParams {
                    agents: normal_embed(rng, cfg.agents, d),
                    agg_query: uniform_fanin(rng, d, d),
                    agg_key: uniform_fanin(rng, d, d),
                    dist_query: uniform_fanin(rng, d, d),
                    dist_key: uniform_fanin(rng, d, d),
                    value: uniform_fanin(rng, d, d),
                },
                attn_norm_gain: ones_vec(d),
                moe: init_moe(rng, cfg, d),
                moe_norm_gain: ones_vec(d),
            })
            .collect();
        let head = HeadParams {
            w1: uniform_fanin(rng, ld, ld),
            b1: zeros_vec(ld),
            w2: uniform_fanin(rng, ld, cfg.horizon),
            b2: zeros_vec(cfg.horizon),
        };
        ModelParams { spatial_embed, tod_embed, dow_embed, input_moe, blocks, head }
    }

    /// Registry of (dotted name, tensor) pairs in a stable order.
    pub fn entries(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("embed.spatial".into(), &self.spatial_embed),
            ("embed.tod".into(), &self.tod_embed),
            ("embed.dow".into(), &self.dow_embed),
        ];
        push_moe(&mut out, 0, &self.input_moe);
        for (i, b) in self.blocks.iter().enumerate() {
            let l = i + 1;
            out.push((format!("block.{l}.attn.agents"), &b.attn.agents));
            out.push((format!("block.{l}.attn.agg_query"), &b.attn.agg_query));
            out.push((format!("block.{l}.attn.agg_key"), &b.attn.agg_key));
            out.push((format!("block.{l}.attn.dist_query"), &b.attn.dist_query));
            out.push((format!("block.{l}.attn.dist_key"), &b.attn.dist_key));
            out.push((format!("block.{l}.attn.value"), &b.attn.value));
            out.push((format!("block.{l}.attn_norm.gain"), &b.attn_norm_gain));
            push_moe(&mut out, l, &b.moe);
            out.push((format!("block.{l}.moe_norm.gain"), &b.moe_norm_gain));
        }
        out.push(("head.w1".into(), &self.head.w1));
        out.push(("head.b1".into(), &self.head.b1));
        out.push(("head.w2".into(), &self.head.w2));
        out.push(("head.b2".into(), &self.head.b2));
        out
    }

    /// Mutable registry; same names and order as [`ModelParams::entries`].
    pub fn entries_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![
            ("embed.spatial".into(), &mut self.spatial_embed),
            ("embed.tod".into(), &mut self.tod_embed),
            ("embed.dow".into(), &mut self.dow_embed),
        ];
        push_moe_mut(&mut out, 0, &mut self.input_moe);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let l = i + 1;
            out.push((format!("block.{l}.attn.agents"), &mut b.attn.agents));
            out.push((format!("block.{l}.attn.agg_query"), &mut b.attn.agg_query));
            out.push((format!("block.{l}.attn.agg_key"), &mut b.attn.agg_key));
            out.push((format!("block.{l}.attn.dist_query"), &mut b.attn.dist_query));
            out.push((format!("block.{l}.attn.dist_key"), &mut b.attn.dist_key));
            out.push((format!("block.{l}.attn.value"), &mut b.attn.value));
            out.push((format!("block.{l}.attn_norm.gain"), &mut b.attn_norm_gain));
            push_moe_mut(&mut out, l, &mut b.moe);
            out.push((format!("block.{l}.moe_norm.gain"), &mut b.moe_norm_gain));
        }
        out.push(("head.w1".into(), &mut self.head.w1));
        out.push(("head.b1".into(), &mut self.head.b1));
        out.push(("head.w2".into(), &mut self.head.w2));
        out.push(("head.b2".into(), &mut self.head.b2));
        out
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries().into_iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries_mut().into_iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn num_values(&self) -> usize {
        self.entries().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.entries().iter().all(|(_, t)| t.is_finite())
    }

    pub fn zero_grads(&mut self) {
        for (_, t) in self.entries_mut() {
            t.zero_grad();
        }
    }

    /// Rebuilds parameters from named tensors (checkpoint load). Every
    /// registered name must be present with the right shape; extras are
    /// rejected.
    pub fn from_named(cfg: &ModelConfig, mut named: Vec<(String, Tensor)>) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = ModelParams::init(cfg, &mut rng);
        for (name, slot) in params.entries_mut() {
            let pos = named.iter().position(|(n, _)| *n == name).ok_or_else(|| {
                Error::contract(format!("checkpoint is missing parameter '{name}'"))
            })?;
            let (_, tensor) = named.swap_remove(pos);
            if tensor.shape != slot.shape {
                return Err(Error::Shape {
                    op: "checkpoint",
                    lhs: slot.shape.clone(),
                    rhs: tensor.shape,
                });
            }
            *slot = tensor.with_grad();
        }
        if let Some((name, _)) = named.first() {
            return Err(Error::contract(format!("checkpoint has unknown parameter '{name}'")));
        }
        Ok(params)
    }
}

fn push_moe<'a>(out: &mut Vec<(String, &'a Tensor)>, l: usize, m: &'a MoeParams) {
    out.push((format!("moe.{l}.router.score"), &m.router.score));
    out.push((format!("moe.{l}.router.bias_spatial"), &m.router.bias_spatial));
    out.push((format!("moe.{l}.router.bias_tod"), &m.router.bias_tod));
    out.push((format!("moe.{l}.router.bias_dow"), &m.router.bias_dow));
    out.push((format!("moe.{l}.experts.weight"), &m.fused_weight));
    out.push((format!("moe.{l}.experts.bias"), &m.fused_bias));
}

fn push_moe_mut<'a>(out: &mut Vec<(String, &'a mut Tensor)>, l: usize, m: &'a mut MoeParams) {
    out.push((format!("moe.{l}.router.score"), &mut m.router.score));
    out.push((format!("moe.{l}.router.bias_spatial"), &mut m.router.bias_spatial));
    out.push((format!("moe.{l}.router.bias_tod"), &mut m.router.bias_tod));
    out.push((format!("moe.{l}.router.bias_dow"), &mut m.router.bias_dow));
    out.push((format!("moe.{l}.experts.weight"), &mut m.fused_weight));
    out.push((format!("moe.{l}.experts.bias"), &mut m.fused_bias));
}

// ── Graph bindings ────────────────────────────────────────────────────

#[derive(Debug)]
pub(crate) struct BoundRouter {
    pub score: TensorId,
    pub bias_spatial: TensorId,
    pub bias_tod: TensorId,
    pub bias_dow: TensorId,
}

#[derive(Debug)]
pub(crate) struct BoundMoe {
    pub router: BoundRouter,
    pub fused_weight: TensorId,
    pub fused_bias: TensorId,
}

#[derive(Debug)]
pub(crate) struct BoundAttn {
    pub agents: TensorId,
    pub agg_query: TensorId,
    pub agg_key: TensorId,
    pub dist_query: TensorId,
    pub dist_key: TensorId,
    pub value: TensorId,
}

#[derive(Debug)]
pub(crate) struct BoundBlock {
    pub attn: BoundAttn,
    pub attn_norm_gain: TensorId,
    pub moe: BoundMoe,
    pub moe_norm_gain: TensorId,
}

/// Parameter leaves of one recorded forward pass.
#[derive(Debug)]
pub struct BoundParams {
    pub(crate) spatial_embed: TensorId,
    pub(crate) tod_embed: TensorId,
    pub(crate) dow_embed: TensorId,
    pub(crate) input_moe: BoundMoe,
    pub(crate) blocks: Vec<BoundBlock>,
    pub(crate) head_w1: TensorId,
    pub(crate) head_b1: TensorId,
    pub(crate) head_w2: TensorId,
    pub(crate) head_b2: TensorId,
}

fn bind_moe(g: &mut Graph, m: &MoeParams) -> BoundMoe {
    BoundMoe {
        router: BoundRouter {
            score: g.param(&m.router.score),
            bias_spatial: g.param(&m.router.bias_spatial),
            bias_tod: g.param(&m.router.bias_tod),
            bias_dow: g.param(&m.router.bias_dow),
        },
        fused_weight: g.param(&m.fused_weight),
        fused_bias: g.param(&m.fused_bias),
    }
}

impl BoundParams {
    pub fn bind(g: &mut Graph, p: &ModelParams) -> BoundParams {
        BoundParams {
            spatial_embed: g.param(&p.spatial_embed),
            tod_embed: g.param(&p.tod_embed),
            dow_embed: g.param(&p.dow_embed),
            input_moe: bind_moe(g, &p.input_moe),
            blocks: p
                .blocks
                .iter()
                .map(|b| BoundBlock {
                    attn: BoundAttn {
                        agents: g.param(&b.attn.agents),
                        agg_query: g.param(&b.attn.agg_query),
                        agg_key: g.param(&b.attn.agg_key),
                        dist_query: g.param(&b.attn.dist_query),
                        dist_key: g.param(&b.attn.dist_key),
                        value: g.param(&b.attn.value),
                    },
                    attn_norm_gain: g.param(&b.attn_norm_gain),
                    moe: bind_moe(g, &b.moe),
                    moe_norm_gain: g.param(&b.moe_norm_gain),
                })
                .collect(),
            head_w1: g.param(&p.head.w1),
            head_b1: g.param(&p.head.b1),
            head_w2: g.param(&p.head.w2),
            head_b2: g.param(&p.head.b2),
        }
    }

    /// (name, id) pairs in registry order.
    pub fn ids(&self) -> Vec<(String, TensorId)> {
        let mut out: Vec<(String, TensorId)> = vec![
            ("embed.spatial".into(), self.spatial_embed),
            ("embed.tod".into(), self.tod_embed),
            ("embed.dow".into(), self.dow_embed),
        ];
        push_bound_moe(&mut out, 0, &self.input_moe);
        for (i, b) in self.blocks.iter().enumerate() {
            let l = i + 1;
            out.push((format!("block.{l}.attn.agents"), b.attn.agents));
            out.push((format!("block.{l}.attn.agg_query"), b.attn.agg_query));
            out.push((format!("block.{l}.attn.agg_key"), b.attn.agg_key));
            out.push((format!("block.{l}.attn.dist_query"), b.attn.dist_query));
            out.push((format!("block.{l}.attn.dist_key"), b.attn.dist_key));
            out.push((format!("block.{l}.attn.value"), b.attn.value));
            out.push((format!("block.{l}.attn_norm.gain"), b.attn_norm_gain));
            push_bound_moe(&mut out, l, &b.moe);
            out.push((format!("block.{l}.moe_norm.gain"), b.moe_norm_gain));
        }
        out.push(("head.w1".into(), self.head_w1));
        out.push(("head.b1".into(), self.head_b1));
        out.push(("head.w2".into(), self.head_w2));
        out.push(("head.b2".into(), self.head_b2));
        out
    }
}

fn push_bound_moe(out: &mut Vec<(String, TensorId)>, l: usize, m: &BoundMoe) {
    out.push((format!("moe.{l}.router.score"), m.router.score));
    out.push((format!("moe.{l}.router.bias_spatial"), m.router.bias_spatial));
    out.push((format!("moe.{l}.router.bias_tod"), m.router.bias_tod));
    out.push((format!("moe.{l}.router.bias_dow"), m.router.bias_dow));
    out.push((format!("moe.{l}.experts.weight"), m.fused_weight));
    out.push((format!("moe.{l}.experts.bias"), m.fused_bias));
}

/// Accumulates the gradients computed on a graph back into the parameter
/// tensors. Parameters the loss never touched keep a zero gradient.
pub(crate) fn pull_grads(g: &Graph, bound: &BoundParams, params: &mut ModelParams) {
    let ids = bound.ids();
    for ((name, slot), (bname, id)) in params.entries_mut().into_iter().zip(ids) {
        debug_assert_eq!(name, bname);
        match g.grad(id) {
            Some(grad) => slot.accumulate_grad(grad),
            None => slot.accumulate_grad(&vec![0.0; slot.numel()]),
        }
    }
}
