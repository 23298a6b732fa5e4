//! Heterogeneous graph encoder and action-scoring heads.
//!
//! Machine nodes aggregate messages from their connected operations through
//! additive attention over the remaining disjunctive arcs (edge processing
//! times enter both the attention logits and the messages); operation nodes
//! aggregate their predecessor, successor, connected machines and themselves
//! through four relation MLPs plus a projection MLP. Mean-pooled operation
//! and machine embeddings form the graph vector. A two-layer tanh head turns
//! `[op || machine || graph]` vectors into per-action scores: policy logits,
//! q-values, or a categorical return distribution per action.
//!
//! The same parameters evaluate any instance size; nothing in the parameter
//! shapes depends on the number of jobs or machines.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{FeatureTensors, ScheduleState};
use crate::tape::{MapKind, NodeId, ParamSet, Tape};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("no feasible action to select from")]
    NoFeasibleAction,
    #[error("empty action list")]
    EmptyActions,
}

/// Width / depth of the graph encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Embedding width `d`.
    pub dim: usize,
    /// Number of message-passing layers `L`.
    pub layers: usize,
    /// Attention heads; must divide `dim`.
    pub heads: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            layers: 2,
            heads: 1,
        }
    }
}

/// What the scoring head emits per action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputMode {
    /// Logits for a masked softmax policy.
    Policy,
    /// Scalar q-values.
    Q,
    /// `atoms` logits per action over a fixed return grid.
    Distributional { atoms: usize },
}

impl OutputMode {
    pub fn out_dim(self) -> usize {
        match self {
            OutputMode::Policy | OutputMode::Q => 1,
            OutputMode::Distributional { atoms } => atoms,
        }
    }
}

/// Complete description of a model's parameter layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub encoder: EncoderConfig,
    pub mode: OutputMode,
    /// Split the head into state-value and advantage streams.
    pub dueling: bool,
    /// Noisy head layers (factorized Gaussian) instead of plain affine.
    pub noisy: bool,
    /// Include a state-value (critic) head on the graph embedding.
    pub critic: bool,
    /// Include V-MPO temperature and trust-region multipliers.
    pub vmpo_multipliers: bool,
}

pub const OP_FEATURES: usize = 6;
pub const MACHINE_FEATURES: usize = 3;
pub const EDGE_FEATURES: usize = 1;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct LinearIdx {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct NoisyIdx {
    w_mu: usize,
    w_sigma: usize,
    b_mu: usize,
    b_sigma: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
enum HeadLinearIdx {
    Plain(LinearIdx),
    Noisy(NoisyIdx),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MlpIdx {
    layers: Vec<LinearIdx>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayerIdx {
    w_op: usize,
    w_mach: usize,
    w_edge: usize,
    a_op: usize,
    a_mach: usize,
    a_edge: usize,
    mlp_pred: MlpIdx,
    mlp_succ: MlpIdx,
    mlp_mach: MlpIdx,
    mlp_self: MlpIdx,
    mlp_proj: MlpIdx,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct HeadIdx {
    l1: HeadLinearIdx,
    l2: HeadLinearIdx,
}

/// All learnables plus the index map into the flat [`ParamSet`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelParams {
    pub spec: ModelSpec,
    pub set: ParamSet,
    layers: Vec<LayerIdx>,
    score_head: HeadIdx,
    value_stream: Option<HeadIdx>,
    critic_head: Option<HeadIdx>,
    eta: Option<usize>,
    alpha: Option<usize>,
}

struct ParamBuilder<'r> {
    set: ParamSet,
    rng: &'r mut ChaCha8Rng,
}

impl ParamBuilder<'_> {
    fn uniform(&mut self, name: String, rows: usize, cols: usize, bound: f64) -> usize {
        let a = Array2::from_shape_fn((rows, cols), |_| self.rng.random_range(-bound..bound));
        self.set.push(name, a)
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> LinearIdx {
        let bound = 1.0 / (fan_in as f64).sqrt();
        LinearIdx {
            w: self.uniform(format!("{name}.w"), fan_in, fan_out, bound),
            b: self.uniform(format!("{name}.b"), 1, fan_out, bound),
        }
    }

    fn noisy(&mut self, name: &str, fan_in: usize, fan_out: usize) -> NoisyIdx {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let sigma0 = 0.5 / (fan_in as f64).sqrt();
        NoisyIdx {
            w_mu: self.uniform(format!("{name}.w_mu"), fan_in, fan_out, bound),
            w_sigma: self
                .set
                .push(format!("{name}.w_sigma"), Array2::from_elem((fan_in, fan_out), sigma0)),
            b_mu: self.uniform(format!("{name}.b_mu"), 1, fan_out, bound),
            b_sigma: self
                .set
                .push(format!("{name}.b_sigma"), Array2::from_elem((1, fan_out), sigma0)),
        }
    }

    fn head_linear(&mut self, name: &str, fan_in: usize, fan_out: usize, noisy: bool) -> HeadLinearIdx {
        if noisy {
            HeadLinearIdx::Noisy(self.noisy(name, fan_in, fan_out))
        } else {
            HeadLinearIdx::Plain(self.linear(name, fan_in, fan_out))
        }
    }

    /// Two ELU hidden layers plus a linear output.
    fn mlp(&mut self, name: &str, fan_in: usize, hidden: usize, fan_out: usize) -> MlpIdx {
        MlpIdx {
            layers: vec![
                self.linear(&format!("{name}.0"), fan_in, hidden),
                self.linear(&format!("{name}.1"), hidden, hidden),
                self.linear(&format!("{name}.2"), hidden, fan_out),
            ],
        }
    }

    fn head(&mut self, name: &str, fan_in: usize, hidden: usize, out: usize, noisy: bool) -> HeadIdx {
        HeadIdx {
            l1: self.head_linear(&format!("{name}.l1"), fan_in, hidden, noisy),
            l2: self.head_linear(&format!("{name}.l2"), hidden, out, noisy),
        }
    }
}

impl ModelParams {
    /// Fresh parameters with uniform fan-in initialization.
    pub fn init(spec: ModelSpec, seed: u64) -> Self {
        let mut rng = crate::rng::stream(seed, crate::rng::streams::INIT);
        let d = spec.encoder.dim;
        let heads = spec.encoder.heads;
        assert!(heads >= 1 && d % heads == 0, "heads must divide dim");
        let dh = d / heads;
        let mut b = ParamBuilder {
            set: ParamSet::new(),
            rng: &mut rng,
        };

        let mut layers = Vec::with_capacity(spec.encoder.layers);
        for l in 0..spec.encoder.layers {
            let (op_in, mach_in) = if l == 0 {
                (OP_FEATURES, MACHINE_FEATURES)
            } else {
                (d, d)
            };
            let att_bound = 1.0 / (dh as f64).sqrt();
            let name = format!("layer{l}");
            layers.push(LayerIdx {
                w_op: b.uniform(
                    format!("{name}.w_op"),
                    op_in,
                    d,
                    1.0 / (op_in as f64).sqrt(),
                ),
                w_mach: b.uniform(
                    format!("{name}.w_mach"),
                    mach_in,
                    d,
                    1.0 / (mach_in as f64).sqrt(),
                ),
                w_edge: b.uniform(format!("{name}.w_edge"), EDGE_FEATURES, d, 1.0),
                a_op: b.uniform(format!("{name}.a_op"), heads, dh, att_bound),
                a_mach: b.uniform(format!("{name}.a_mach"), heads, dh, att_bound),
                a_edge: b.uniform(format!("{name}.a_edge"), heads, dh, att_bound),
                mlp_pred: b.mlp(&format!("{name}.mlp_pred"), op_in, d, d),
                mlp_succ: b.mlp(&format!("{name}.mlp_succ"), op_in, d, d),
                mlp_mach: b.mlp(&format!("{name}.mlp_mach"), d, d, d),
                mlp_self: b.mlp(&format!("{name}.mlp_self"), op_in, d, d),
                mlp_proj: b.mlp(&format!("{name}.mlp_proj"), 4 * d, d, d),
            });
        }

        let out = spec.mode.out_dim();
        let score_head = b.head("head", 4 * d, 2 * d, out, spec.noisy);
        let value_stream = spec
            .dueling
            .then(|| b.head("value_stream", 2 * d, 2 * d, out, spec.noisy));
        let critic_head = spec.critic.then(|| b.head("critic", 2 * d, 2 * d, 1, false));
        let eta = spec
            .vmpo_multipliers
            .then(|| b.set.push("vmpo.eta", Array2::from_elem((1, 1), 1.0)));
        let alpha = spec
            .vmpo_multipliers
            .then(|| b.set.push("vmpo.alpha", Array2::from_elem((1, 1), 1.0)));

        Self {
            spec,
            set: b.set,
            layers,
            score_head,
            value_stream,
            critic_head,
            eta,
            alpha,
        }
    }

    pub fn vmpo_eta(&self) -> Option<usize> {
        self.eta
    }

    pub fn vmpo_alpha(&self) -> Option<usize> {
        self.alpha
    }
}

/// Per-feature mean and standard deviation of one state's nodes.
#[derive(Debug, Clone)]
pub struct FeatureStats {
    pub op: Vec<(f64, f64)>,
    pub machine: Vec<(f64, f64)>,
    pub edge: Vec<(f64, f64)>,
}

fn column_stats(a: &Array2<f64>) -> Vec<(f64, f64)> {
    let n = a.nrows() as f64;
    (0..a.ncols())
        .map(|j| {
            let col = a.column(j);
            let mean = col.sum() / n;
            let var = col.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let std = var.sqrt();
            (mean, if std > 1e-12 { std } else { 1.0 })
        })
        .collect()
}

impl FeatureStats {
    pub fn compute(raw: &FeatureTensors) -> Self {
        Self {
            op: column_stats(&raw.op_features),
            machine: column_stats(&raw.machine_features),
            edge: if raw.edge_features.nrows() > 0 {
                column_stats(&raw.edge_features)
            } else {
                vec![(0.0, 1.0)]
            },
        }
    }
}

fn apply_stats(a: &Array2<f64>, stats: &[(f64, f64)]) -> Array2<f64> {
    Array2::from_shape_fn(a.raw_dim(), |(i, j)| {
        let (mean, std) = stats[j];
        (a[(i, j)] - mean) / std
    })
}

/// Z-score each feature column with the given statistics.
pub fn normalize_features(raw: &FeatureTensors, stats: &FeatureStats) -> FeatureTensors {
    FeatureTensors {
        op_features: apply_stats(&raw.op_features, &stats.op),
        machine_features: apply_stats(&raw.machine_features, &stats.machine),
        edges: raw.edges.clone(),
        edge_features: apply_stats(&raw.edge_features, &stats.edge),
    }
}

/// Normalized features plus the index structure the encoder consumes.
#[derive(Debug, Clone)]
pub struct GraphInput {
    pub op_feats: Array2<f64>,
    pub mach_feats: Array2<f64>,
    pub edge_feats: Array2<f64>,
    /// Flat operation index per edge, `(op, machine)` sorted.
    pub edge_op: Vec<usize>,
    pub edge_mach: Vec<usize>,
    /// Predecessor / successor flat index per op; `num_ops` is the dummy slot.
    pub pred_idx: Vec<usize>,
    pub succ_idx: Vec<usize>,
    pub num_ops: usize,
    pub num_machines: usize,
}

impl GraphInput {
    /// Features are z-scored per state over that state's own nodes.
    pub fn from_state(state: &ScheduleState) -> Self {
        let raw = state.extract_features();
        let stats = FeatureStats::compute(&raw);
        let feats = normalize_features(&raw, &stats);
        Self::from_features(state, &feats)
    }

    pub fn from_features(state: &ScheduleState, feats: &FeatureTensors) -> Self {
        let num_ops = feats.op_features.nrows();
        let num_machines = feats.machine_features.nrows();
        let instance = state.instance();
        let mut pred_idx = Vec::with_capacity(num_ops);
        let mut succ_idx = Vec::with_capacity(num_ops);
        for job in 0..instance.num_jobs() {
            let len = instance.job(job).len();
            for op in 0..len {
                let idx = state.op_index(job, op);
                pred_idx.push(if op == 0 { num_ops } else { idx - 1 });
                succ_idx.push(if op + 1 == len { num_ops } else { idx + 1 });
            }
        }
        let (edge_op, edge_mach) = feats.edges.iter().copied().unzip();
        Self {
            op_feats: feats.op_features.clone(),
            mach_feats: feats.machine_features.clone(),
            edge_feats: feats.edge_features.clone(),
            edge_op,
            edge_mach,
            pred_idx,
            succ_idx,
            num_ops,
            num_machines,
        }
    }
}

/// Noise handling for noisy head layers.
pub enum NoiseMode<'r> {
    /// Evaluation: noise contributions are exactly zero.
    Zero,
    /// Training: fresh factorized Gaussian noise per bind.
    Sampled(&'r mut ChaCha8Rng),
}

struct BoundLinear {
    w: NodeId,
    b: NodeId,
}

struct BoundLayer {
    w_op: NodeId,
    w_mach: NodeId,
    w_edge: NodeId,
    a_op: NodeId,
    a_mach: NodeId,
    a_edge: NodeId,
    mlp_pred: Vec<BoundLinear>,
    mlp_succ: Vec<BoundLinear>,
    mlp_mach: Vec<BoundLinear>,
    mlp_self: Vec<BoundLinear>,
    mlp_proj: Vec<BoundLinear>,
}

/// Parameter nodes bound on one tape; reused by every forward on that tape.
pub struct BoundModel {
    pub spec: ModelSpec,
    layers: Vec<BoundLayer>,
    score_head: Vec<BoundLinear>,
    value_stream: Option<Vec<BoundLinear>>,
    critic_head: Option<Vec<BoundLinear>>,
    eta: Option<NodeId>,
    alpha: Option<NodeId>,
}

fn scaled_noise(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    // f(x) = sign(x) sqrt(|x|) of a standard normal draw.
    (0..len)
        .map(|_| {
            let x: f64 = rand_distr::StandardNormal.sample(rng);
            x.signum() * x.abs().sqrt()
        })
        .collect()
}

fn bind_mlp(tape: &mut Tape, params: &ModelParams, mlp: &MlpIdx) -> Vec<BoundLinear> {
    mlp.layers
        .iter()
        .map(|l| BoundLinear {
            w: tape.param(&params.set, l.w),
            b: tape.param(&params.set, l.b),
        })
        .collect()
}

fn bind_head_linear(
    tape: &mut Tape,
    params: &ModelParams,
    idx: HeadLinearIdx,
    noise: &mut NoiseMode,
) -> BoundLinear {
    match idx {
        HeadLinearIdx::Plain(l) => BoundLinear {
            w: tape.param(&params.set, l.w),
            b: tape.param(&params.set, l.b),
        },
        HeadLinearIdx::Noisy(n) => {
            let w_mu = tape.param(&params.set, n.w_mu);
            let w_sigma = tape.param(&params.set, n.w_sigma);
            let b_mu = tape.param(&params.set, n.b_mu);
            let b_sigma = tape.param(&params.set, n.b_sigma);
            match noise {
                NoiseMode::Zero => BoundLinear { w: w_mu, b: b_mu },
                NoiseMode::Sampled(rng) => {
                    let (fan_in, fan_out) = params.set.value(n.w_mu).dim();
                    let f_in = scaled_noise(rng, fan_in);
                    let f_out = scaled_noise(rng, fan_out);
                    let eps_w = Array2::from_shape_fn((fan_in, fan_out), |(i, j)| {
                        f_in[i] * f_out[j]
                    });
                    let eps_b =
                        Array2::from_shape_fn((1, fan_out), |(_, j)| f_out[j]);
                    let eps_w = tape.constant(eps_w);
                    let eps_b = tape.constant(eps_b);
                    let dw = tape.mul(w_sigma, eps_w);
                    let db = tape.mul(b_sigma, eps_b);
                    BoundLinear {
                        w: tape.add(w_mu, dw),
                        b: tape.add(b_mu, db),
                    }
                }
            }
        }
    }
}

fn bind_head(
    tape: &mut Tape,
    params: &ModelParams,
    head: &HeadIdx,
    noise: &mut NoiseMode,
) -> Vec<BoundLinear> {
    vec![
        bind_head_linear(tape, params, head.l1, noise),
        bind_head_linear(tape, params, head.l2, noise),
    ]
}

/// Bind every parameter of `params` on `tape`.
pub fn bind(tape: &mut Tape, params: &ModelParams, mut noise: NoiseMode) -> BoundModel {
    let layers = params
        .layers
        .iter()
        .map(|l| BoundLayer {
            w_op: tape.param(&params.set, l.w_op),
            w_mach: tape.param(&params.set, l.w_mach),
            w_edge: tape.param(&params.set, l.w_edge),
            a_op: tape.param(&params.set, l.a_op),
            a_mach: tape.param(&params.set, l.a_mach),
            a_edge: tape.param(&params.set, l.a_edge),
            mlp_pred: bind_mlp(tape, params, &l.mlp_pred),
            mlp_succ: bind_mlp(tape, params, &l.mlp_succ),
            mlp_mach: bind_mlp(tape, params, &l.mlp_mach),
            mlp_self: bind_mlp(tape, params, &l.mlp_self),
            mlp_proj: bind_mlp(tape, params, &l.mlp_proj),
        })
        .collect();
    let score_head = bind_head(tape, params, &params.score_head, &mut noise);
    let value_stream = params
        .value_stream
        .as_ref()
        .map(|h| bind_head(tape, params, h, &mut noise));
    let critic_head = params
        .critic_head
        .as_ref()
        .map(|h| bind_head(tape, params, h, &mut NoiseMode::Zero));
    BoundModel {
        spec: params.spec,
        layers,
        score_head,
        value_stream,
        critic_head,
        eta: params.eta.map(|i| tape.param(&params.set, i)),
        alpha: params.alpha.map(|i| tape.param(&params.set, i)),
    }
}

/// Final node embeddings and the pooled graph vector.
pub struct Embeddings {
    pub ops: NodeId,
    pub machines: NodeId,
    /// `1 x 2d`: mean op embedding concatenated with mean machine embedding.
    pub graph: NodeId,
}

fn linear(tape: &mut Tape, x: NodeId, l: &BoundLinear) -> NodeId {
    let y = tape.matmul(x, l.w);
    tape.add(y, l.b)
}

/// Two ELU hidden layers, linear output.
fn mlp_forward(tape: &mut Tape, x: NodeId, layers: &[BoundLinear]) -> NodeId {
    let mut h = x;
    for (i, l) in layers.iter().enumerate() {
        h = linear(tape, h, l);
        if i + 1 < layers.len() {
            h = tape.map(MapKind::Elu, h);
        }
    }
    h
}

/// Two-layer head: tanh after the first layer, linear output.
fn head_forward(tape: &mut Tape, x: NodeId, layers: &[BoundLinear]) -> NodeId {
    let h = linear(tape, x, &layers[0]);
    let h = tape.map(MapKind::Tanh, h);
    linear(tape, h, &layers[1])
}

/// Per-head additive attention score: `rowsum(chunk(x) * a_head)` per row.
fn head_scores(tape: &mut Tape, x: NodeId, a: NodeId, head: usize, dh: usize) -> NodeId {
    let chunk = tape.slice_cols(x, head * dh, dh);
    let a_row = tape.gather_rows(a, &[head]);
    let prod = tape.mul(chunk, a_row);
    tape.row_sum(prod)
}

/// Full encoder forward: `layers` rounds of machine and operation updates,
/// then mean pooling.
pub fn encode(tape: &mut Tape, model: &BoundModel, g: &GraphInput) -> Embeddings {
    let spec = model.spec.encoder;
    let dh = spec.dim / spec.heads;
    let e = g.edge_op.len();
    let m = g.num_machines;

    let mut op_emb = tape.constant(g.op_feats.clone());
    let mut mach_emb = tape.constant(g.mach_feats.clone());
    let edge_feats = tape.constant(g.edge_feats.clone());

    // Attention softmax segments: all edge rows then the m self rows.
    let mut att_segments = g.edge_mach.clone();
    att_segments.extend(0..m);
    // Aggregation of nu_bar per op.
    let op_segments = g.edge_op.clone();

    for layer in &model.layers {
        // --- machine update -------------------------------------------------
        let proj_op = tape.matmul(op_emb, layer.w_op);
        let proj_mach = tape.matmul(mach_emb, layer.w_mach);
        let proj_edge = tape.matmul(edge_feats, layer.w_edge);
        let edge_po = tape.gather_rows(proj_op, &g.edge_op);
        let edge_pm = tape.gather_rows(proj_mach, &g.edge_mach);

        let mut new_mach_chunks = Vec::with_capacity(spec.heads);
        for h in 0..spec.heads {
            // e_ijk = LeakyReLU(a_O . W_O mu + a_M . W_M nu + a_E . W_E p)
            let s_op = head_scores(tape, edge_po, layer.a_op, h, dh);
            let s_mach = head_scores(tape, edge_pm, layer.a_mach, h, dh);
            let s_edge = head_scores(tape, proj_edge, layer.a_edge, h, dh);
            let sum = tape.add(s_op, s_mach);
            let edge_logits = tape.add(sum, s_edge);
            let edge_logits = tape.map(MapKind::LeakyRelu(0.2), edge_logits);
            // e_kk = LeakyReLU(2 a_M . W_M nu)
            let self_dot = head_scores(tape, proj_mach, layer.a_mach, h, dh);
            let self_logits = tape.scale(self_dot, 2.0);
            let self_logits = tape.map(MapKind::LeakyRelu(0.2), self_logits);

            let logits = tape.concat_rows(&[edge_logits, self_logits]);
            let weights = tape.segment_softmax(logits, &att_segments);
            let edge_w = tape.gather_rows(weights, &(0..e).collect::<Vec<_>>());
            let self_w = tape.gather_rows(weights, &(e..e + m).collect::<Vec<_>>());

            // messages: W_O mu + W_E p from neighbors, W_M nu from self.
            let msg_chunk = {
                let po = tape.slice_cols(edge_po, h * dh, dh);
                let pe_full = tape.slice_cols(proj_edge, h * dh, dh);
                tape.add(po, pe_full)
            };
            let weighted = tape.mul(msg_chunk, edge_w);
            let neighbor_sum = tape.segment_sum_rows(weighted, &g.edge_mach, m);
            let self_chunk = tape.slice_cols(proj_mach, h * dh, dh);
            let self_term = tape.mul(self_chunk, self_w);
            let combined = tape.add(neighbor_sum, self_term);
            new_mach_chunks.push(combined);
        }
        let pre_act = if new_mach_chunks.len() == 1 {
            new_mach_chunks[0]
        } else {
            tape.concat_cols(&new_mach_chunks)
        };
        let new_mach = tape.map(MapKind::Sigmoid, pre_act);

        // --- operation update ------------------------------------------------
        // nu_bar: sum of current-layer machine embeddings over candidates.
        let edge_mach_rows = tape.gather_rows(new_mach, &g.edge_mach);
        let nu_bar = tape.segment_sum_rows(edge_mach_rows, &op_segments, g.num_ops);

        // Extend ops with a zero dummy row for missing pred/succ.
        let zero_row = tape.constant(Array2::zeros((1, tape.value(op_emb).ncols())));
        let op_ext = tape.concat_rows(&[op_emb, zero_row]);
        let pred = tape.gather_rows(op_ext, &g.pred_idx);
        let succ = tape.gather_rows(op_ext, &g.succ_idx);

        let f_pred = mlp_forward(tape, pred, &layer.mlp_pred);
        let f_succ = mlp_forward(tape, succ, &layer.mlp_succ);
        let f_mach = mlp_forward(tape, nu_bar, &layer.mlp_mach);
        let f_self = mlp_forward(tape, op_emb, &layer.mlp_self);
        let cat = tape.concat_cols(&[f_pred, f_succ, f_mach, f_self]);
        let cat = tape.map(MapKind::Elu, cat);
        let new_op = mlp_forward(tape, cat, &layer.mlp_proj);

        op_emb = new_op;
        mach_emb = new_mach;
    }

    let graph = pool_graph(tape, op_emb, mach_emb);
    Embeddings {
        ops: op_emb,
        machines: mach_emb,
        graph,
    }
}

/// `h_t = [mean ops || mean machines]`, `1 x 2d`.
pub fn pool_graph(tape: &mut Tape, ops: NodeId, machines: NodeId) -> NodeId {
    let mo = tape.mean_rows(ops);
    let mm = tape.mean_rows(machines);
    tape.concat_cols(&[mo, mm])
}

/// Score feasible actions: rows follow `actions` order; columns are 1
/// (policy/q) or `atoms` (distributional).
pub fn score_actions(
    tape: &mut Tape,
    model: &BoundModel,
    emb: &Embeddings,
    actions: &[(usize, usize)],
) -> Result<NodeId, EncoderError> {
    if actions.is_empty() {
        return Err(EncoderError::EmptyActions);
    }
    let op_idx: Vec<usize> = actions.iter().map(|&(o, _)| o).collect();
    let mach_idx: Vec<usize> = actions.iter().map(|&(_, k)| k).collect();
    let mu = tape.gather_rows(emb.ops, &op_idx);
    let nu = tape.gather_rows(emb.machines, &mach_idx);
    let h_rep = tape.gather_rows(emb.graph, &vec![0; actions.len()]);
    let x = tape.concat_cols(&[mu, nu, h_rep]);

    let advantage = head_forward(tape, x, &model.score_head);
    match &model.value_stream {
        None => Ok(advantage),
        Some(value_head) => {
            let value = head_forward(tape, emb.graph, value_head);
            Ok(dueling_combine(tape, value, advantage))
        }
    }
}

/// `Q(s, a) = V(s) + A(s, a) - mean_a' A(s, a')`, column-wise over actions.
pub fn dueling_combine(tape: &mut Tape, value: NodeId, advantages: NodeId) -> NodeId {
    let mean_adv = tape.mean_rows(advantages);
    let centered = tape.sub(advantages, mean_adv);
    tape.add(centered, value)
}

/// State-value estimate from the critic head, `1 x 1`.
pub fn critic_value(tape: &mut Tape, model: &BoundModel, emb: &Embeddings) -> NodeId {
    let head = model
        .critic_head
        .as_ref()
        .expect("model was built without a critic head");
    head_forward(tape, emb.graph, head)
}

pub fn vmpo_eta(model: &BoundModel) -> NodeId {
    model.eta.expect("model has no V-MPO multipliers")
}

pub fn vmpo_alpha(model: &BoundModel) -> NodeId {
    model.alpha.expect("model has no V-MPO multipliers")
}

/// How [`masked_select`] chooses among unmasked entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectMode {
    /// Draw from the masked softmax distribution.
    Sample,
    /// Highest score; ties resolve to the lowest index.
    Argmax,
}

/// Probabilities of a masked softmax: zero on masked entries, summing to 1
/// over the rest.
pub fn masked_softmax(scores: &[f64], mask: &[bool]) -> Vec<f64> {
    let max = scores
        .iter()
        .zip(mask)
        .filter(|&(_, &m)| m)
        .map(|(&s, _)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut probs = vec![0.0; scores.len()];
    let mut sum = 0.0;
    for i in 0..scores.len() {
        if mask[i] {
            probs[i] = (scores[i] - max).exp();
            sum += probs[i];
        }
    }
    for p in &mut probs {
        *p /= sum;
    }
    probs
}

/// Select an index among the unmasked entries of `scores`.
pub fn masked_select(
    scores: &[f64],
    mask: &[bool],
    mode: SelectMode,
    rng: &mut ChaCha8Rng,
) -> Result<usize, EncoderError> {
    if scores.is_empty() || !mask.iter().any(|&m| m) {
        return Err(EncoderError::NoFeasibleAction);
    }
    match mode {
        SelectMode::Argmax => {
            let mut best = None;
            for i in 0..scores.len() {
                if !mask[i] {
                    continue;
                }
                match best {
                    None => best = Some(i),
                    Some(b) if scores[i] > scores[b] => best = Some(i),
                    _ => {}
                }
            }
            Ok(best.expect("at least one unmasked entry"))
        }
        SelectMode::Sample => {
            let probs = masked_softmax(scores, mask);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut last_unmasked = 0;
            for i in 0..probs.len() {
                if mask[i] {
                    last_unmasked = i;
                    acc += probs[i];
                    if u < acc {
                        return Ok(i);
                    }
                }
            }
            // Rounding left u at the very top of the cdf.
            Ok(last_unmasked)
        }
    }
}

/// Single noisy affine layer as a standalone operation:
/// `y = (mu_w + sigma_w . eps_w) x + (mu_b + sigma_b . eps_b)`.
pub fn noisy_linear(
    tape: &mut Tape,
    x: NodeId,
    w_mu: NodeId,
    w_sigma: NodeId,
    b_mu: NodeId,
    b_sigma: NodeId,
    noise: &mut NoiseMode,
) -> NodeId {
    let (w, b) = match noise {
        NoiseMode::Zero => (w_mu, b_mu),
        NoiseMode::Sampled(rng) => {
            let (fan_in, fan_out) = tape.value(w_mu).dim();
            let f_in = scaled_noise(rng, fan_in);
            let f_out = scaled_noise(rng, fan_out);
            let eps_w =
                Array2::from_shape_fn((fan_in, fan_out), |(i, j)| f_in[i] * f_out[j]);
            let eps_b = Array2::from_shape_fn((1, fan_out), |(_, j)| f_out[j]);
            let eps_w = tape.constant(eps_w);
            let eps_b = tape.constant(eps_b);
            let dw = tape.mul(w_sigma, eps_w);
            let db = tape.mul(b_sigma, eps_b);
            (tape.add(w_mu, dw), tape.add(b_mu, db))
        }
    };
    let y = tape.matmul(x, w);
    tape.add(y, b)
}

/// Flat (operation index, machine index) pairs for `score_actions`.
pub fn action_indices(state: &ScheduleState, actions: &[crate::env::Action]) -> Vec<(usize, usize)> {
    actions
        .iter()
        .map(|a| (state.op_index(a.job, a.op), a.machine))
        .collect()
}

/// One no-grad forward: raw head outputs for the given actions
/// (`|A| x 1` for policy/q mode, `|A| x atoms` for distributional).
pub fn evaluate_actions(
    params: &ModelParams,
    g: &GraphInput,
    action_ix: &[(usize, usize)],
    noise: NoiseMode,
) -> Result<Array2<f64>, EncoderError> {
    let mut tape = Tape::new();
    let model = bind(&mut tape, params, noise);
    let emb = encode(&mut tape, &model, g);
    let scores = score_actions(&mut tape, &model, &emb, action_ix)?;
    Ok(tape.value(scores).clone())
}
