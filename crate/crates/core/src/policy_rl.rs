//! On-policy learners: REINFORCE, A2C, PPO and V-MPO.
//!
//! All four share trajectory collection (masked categorical sampling from
//! the policy head) and the critic head on the graph embedding. They differ
//! in the loss assembled from a collected batch: plain return-weighted score
//! function, advantage actor-critic, the clipped surrogate, or V-MPO's
//! weighted maximum-likelihood target with learned temperature and a
//! KL trust region against the collection-time policy snapshot.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

use crate::encoder::{
    self, action_indices, bind, critic_value, encode, score_actions, EncoderConfig, GraphInput,
    ModelParams, ModelSpec, NoiseMode, OutputMode,
};
use crate::env::ScheduleState;
use crate::instances::ProblemInstance;
use crate::optim::Adam;
use crate::rng::{stream, streams};
use crate::tape::{MapKind, NodeId, Tape};

#[derive(Debug, Error)]
pub enum PGError {
    #[error("non-finite loss {loss} in {algorithm} update")]
    NonFiniteLoss { loss: f64, algorithm: String },
    #[error(transparent)]
    Encoder(#[from] encoder::EncoderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PGAlgorithm {
    Reinforce,
    A2c,
    Ppo,
    Vmpo,
}

impl std::fmt::Display for PGAlgorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            PGAlgorithm::Reinforce => "reinforce",
            PGAlgorithm::A2c => "a2c",
            PGAlgorithm::Ppo => "ppo",
            PGAlgorithm::Vmpo => "vmpo",
        };
        write!(f, "{name}")
    }
}

impl std::str::FromStr for PGAlgorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "reinforce" => Ok(PGAlgorithm::Reinforce),
            "a2c" => Ok(PGAlgorithm::A2c),
            "ppo" => Ok(PGAlgorithm::Ppo),
            "vmpo" | "v-mpo" => Ok(PGAlgorithm::Vmpo),
            other => Err(format!("unknown policy-gradient algorithm `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PGConfig {
    pub algorithm: PGAlgorithm,
    pub gamma: f64,
    pub lr: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    /// PPO clipping threshold.
    pub clip: f64,
    /// Gradient passes over each collected batch.
    pub epochs: usize,
    /// Instances collected in parallel per episode.
    pub parallel: usize,
    /// V-MPO temperature constraint.
    pub eps_eta: f64,
    /// V-MPO trust-region bound, drawn log-uniformly per update.
    pub eps_alpha_range: (f64, f64),
    /// Optional batch-wise advantage normalization (off by default).
    pub normalize_advantages: bool,
}

impl PGConfig {
    pub fn defaults(algorithm: PGAlgorithm) -> Self {
        let (epochs, parallel) = match algorithm {
            PGAlgorithm::Ppo | PGAlgorithm::Vmpo => (3, 20),
            PGAlgorithm::Reinforce | PGAlgorithm::A2c => (1, 32),
        };
        Self {
            algorithm,
            gamma: 1.0,
            lr: 2e-4,
            value_coef: 0.5,
            entropy_coef: 0.01,
            clip: 0.2,
            epochs,
            parallel,
            eps_eta: 0.01,
            eps_alpha_range: (0.001, 0.01),
            normalize_advantages: false,
        }
    }
}

/// One collected decision point.
#[derive(Debug, Clone)]
pub struct TrajStep {
    pub state: ScheduleState,
    /// Index into `state.feasible_actions()`.
    pub action_index: usize,
    /// Log-probability of the chosen action at collection time.
    pub logp: f64,
    /// Critic estimate at collection time (0 without a critic).
    pub value: f64,
    pub reward: f64,
}

/// One full episode; its length equals the instance's operation count.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub steps: Vec<TrajStep>,
}

/// Suffix-discounted returns `G_t`.
pub fn returns(traj: &Trajectory, gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; traj.steps.len()];
    let mut acc = 0.0;
    for (i, step) in traj.steps.iter().enumerate().rev() {
        acc = step.reward + gamma * acc;
        out[i] = acc;
    }
    out
}

/// Policy logits and critic value of one state, without gradients.
fn policy_eval(params: &ModelParams, state: &ScheduleState) -> (Vec<f64>, f64) {
    let actions = state.feasible_actions();
    let g = GraphInput::from_state(state);
    let ix = action_indices(state, &actions);
    let mut tape = Tape::new();
    let model = bind(&mut tape, params, NoiseMode::Zero);
    let emb = encode(&mut tape, &model, &g);
    let logits = score_actions(&mut tape, &model, &emb, &ix).expect("non-empty feasible set");
    let logits: Vec<f64> = tape.value(logits).column(0).to_vec();
    let value = if params.spec.critic {
        let v = critic_value(&mut tape, &model, &emb);
        tape.scalar(v)
    } else {
        0.0
    };
    (logits, value)
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|&l| l - log_sum).collect()
}

/// Roll out one episode, sampling from the masked categorical policy.
pub fn collect_one(
    params: &ModelParams,
    instance: Arc<ProblemInstance>,
    rng: &mut ChaCha8Rng,
) -> Trajectory {
    let mut state = ScheduleState::reset(instance);
    let mut steps = Vec::with_capacity(state.total_ops());
    while !state.is_terminal() {
        let actions = state.feasible_actions();
        let (logits, value) = policy_eval(params, &state);
        let logp = log_softmax(&logits);
        let probs: Vec<f64> = logp.iter().map(|&l| l.exp()).collect();
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = probs.len() - 1;
        for (i, &p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                chosen = i;
                break;
            }
        }
        let pre = state.clone();
        let reward = state.step(actions[chosen]).expect("masked action feasible");
        steps.push(TrajStep {
            state: pre,
            action_index: chosen,
            logp: logp[chosen],
            value,
            reward,
        });
    }
    Trajectory { steps }
}

/// Collect one trajectory per instance; stream `i` of `seed` drives the
/// sampling of instance `i`, so results are independent of scheduling order.
pub fn collect(
    params: &ModelParams,
    instances: &[Arc<ProblemInstance>],
    seed: u64,
    episode: u64,
) -> Vec<Trajectory> {
    instances
        .iter()
        .enumerate()
        .map(|(i, inst)| {
            let mut rng = stream(seed, streams::collect(episode, i as u64));
            collect_one(params, inst.clone(), &mut rng)
        })
        .collect()
}

/// Scalar components of one assembled loss, for inspection and metrics.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossParts {
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    /// V-MPO only: temperature loss, trust-region loss and the mean KL.
    pub eta: f64,
    pub alpha: f64,
    pub kl: f64,
}

/// Per-step graph nodes shared by all four losses.
struct StepNodes {
    /// `1 x |A|` log-softmax over feasible actions.
    log_probs: NodeId,
    /// `1 x 1` chosen-action log-probability.
    chosen_logp: NodeId,
    /// `1 x 1` policy entropy.
    entropy: NodeId,
    /// `1 x 1` critic value (when the model has a critic).
    value: Option<NodeId>,
}

fn forward_step(
    tape: &mut Tape,
    model: &encoder::BoundModel,
    step: &TrajStep,
    with_value: bool,
) -> StepNodes {
    let actions = step.state.feasible_actions();
    let g = GraphInput::from_state(&step.state);
    let ix = action_indices(&step.state, &actions);
    let emb = encode(tape, model, &g);
    let logits = score_actions(tape, model, &emb, &ix).expect("non-empty feasible set");
    let row = tape.transpose(logits);
    let log_probs = tape.row_log_softmax(row);
    let chosen_logp = tape.slice_cols(log_probs, step.action_index, 1);
    let probs = tape.map(MapKind::Exp, log_probs);
    let plogp = tape.mul(probs, log_probs);
    let sum = tape.sum_all(plogp);
    let entropy = tape.neg(sum);
    let value = with_value.then(|| critic_value(tape, model, &emb));
    StepNodes {
        log_probs,
        chosen_logp,
        entropy,
        value,
    }
}

fn flat_steps(trajs: &[Trajectory]) -> Vec<&TrajStep> {
    trajs.iter().flat_map(|t| t.steps.iter()).collect()
}

fn flat_returns(trajs: &[Trajectory], gamma: f64) -> Vec<f64> {
    trajs
        .iter()
        .flat_map(|t| returns(t, gamma))
        .collect()
}

fn normalized(mut adv: Vec<f64>, enabled: bool) -> Vec<f64> {
    if !enabled || adv.len() < 2 {
        return adv;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    for a in &mut adv {
        *a = (*a - mean) / std;
    }
    adv
}

fn column(tape: &mut Tape, values: &[f64]) -> NodeId {
    tape.constant(Array2::from_shape_vec((values.len(), 1), values.to_vec()).expect("shape"))
}

fn mean_of(tape: &mut Tape, nodes: &[NodeId]) -> NodeId {
    let col = tape.concat_rows(nodes);
    tape.mean_all(col)
}

/// `-mean(logp * G) - c_H * mean(entropy)`: no critic term.
pub fn loss_reinforce(
    tape: &mut Tape,
    model: &encoder::BoundModel,
    trajs: &[Trajectory],
    cfg: &PGConfig,
) -> (NodeId, LossParts) {
    let steps = flat_steps(trajs);
    let g_t = flat_returns(trajs, cfg.gamma);
    let mut weighted = Vec::with_capacity(steps.len());
    let mut entropies = Vec::with_capacity(steps.len());
    for (step, &g) in steps.iter().zip(&g_t) {
        let nodes = forward_step(tape, model, step, false);
        weighted.push(tape.scale(nodes.chosen_logp, g));
        entropies.push(nodes.entropy);
    }
    let mean_w = mean_of(tape, &weighted);
    let policy = tape.neg(mean_w);
    let entropy = mean_of(tape, &entropies);
    let bonus = tape.scale(entropy, -cfg.entropy_coef);
    let total = tape.add(policy, bonus);
    let parts = LossParts {
        total: tape.scalar(total),
        policy: tape.scalar(policy),
        entropy: tape.scalar(entropy),
        ..LossParts::default()
    };
    (total, parts)
}

/// Policy term with detached-critic advantages, value MSE and entropy bonus.
pub fn loss_a2c(
    tape: &mut Tape,
    model: &encoder::BoundModel,
    trajs: &[Trajectory],
    cfg: &PGConfig,
) -> (NodeId, LossParts) {
    let steps = flat_steps(trajs);
    let g_t = flat_returns(trajs, cfg.gamma);
    // Advantages use the detached critic: collection-time values, which the
    // single-epoch update schedule keeps equal to the current critic.
    let advantages: Vec<f64> = g_t
        .iter()
        .zip(steps.iter())
        .map(|(&g, s)| g - s.value)
        .collect();
    let advantages = normalized(advantages, cfg.normalize_advantages);
    let mut value_nodes = Vec::with_capacity(steps.len());
    let mut logp_nodes = Vec::with_capacity(steps.len());
    let mut entropies = Vec::with_capacity(steps.len());
    for step in &steps {
        let nodes = forward_step(tape, model, step, true);
        value_nodes.push(nodes.value.expect("a2c critic"));
        logp_nodes.push(nodes.chosen_logp);
        entropies.push(nodes.entropy);
    }

    let logp_col = tape.concat_rows(&logp_nodes);
    let adv_col = column(tape, &advantages);
    let weighted = tape.mul(logp_col, adv_col);
    let mean_w = tape.mean_all(weighted);
    let policy = tape.neg(mean_w);

    let v_col = tape.concat_rows(&value_nodes);
    let g_col = column(tape, &g_t);
    let diff = tape.sub(g_col, v_col);
    let sq = tape.mul(diff, diff);
    let value_loss = tape.mean_all(sq);

    let entropy = mean_of(tape, &entropies);

    let v_term = tape.scale(value_loss, cfg.value_coef);
    let h_term = tape.scale(entropy, -cfg.entropy_coef);
    let pv = tape.add(policy, v_term);
    let total = tape.add(pv, h_term);
    let parts = LossParts {
        total: tape.scalar(total),
        policy: tape.scalar(policy),
        value: tape.scalar(value_loss),
        entropy: tape.scalar(entropy),
        ..LossParts::default()
    };
    (total, parts)
}

/// Clipped-surrogate loss against collection-time log-probabilities and
/// collection-time advantages.
pub fn loss_ppo(
    tape: &mut Tape,
    model: &encoder::BoundModel,
    trajs: &[Trajectory],
    cfg: &PGConfig,
) -> (NodeId, LossParts) {
    let steps = flat_steps(trajs);
    let g_t = flat_returns(trajs, cfg.gamma);
    let old_logp: Vec<f64> = steps.iter().map(|s| s.logp).collect();
    let advantages: Vec<f64> = g_t
        .iter()
        .zip(steps.iter())
        .map(|(&g, s)| g - s.value)
        .collect();
    let advantages = normalized(advantages, cfg.normalize_advantages);

    let mut logp_nodes = Vec::with_capacity(steps.len());
    let mut value_nodes = Vec::with_capacity(steps.len());
    let mut entropies = Vec::with_capacity(steps.len());
    for step in &steps {
        let nodes = forward_step(tape, model, step, true);
        logp_nodes.push(nodes.chosen_logp);
        value_nodes.push(nodes.value.expect("ppo critic"));
        entropies.push(nodes.entropy);
    }

    let logp_col = tape.concat_rows(&logp_nodes);
    let old_col = column(tape, &old_logp);
    let log_ratio = tape.sub(logp_col, old_col);
    let ratio = tape.map(MapKind::Exp, log_ratio);
    let adv_col = column(tape, &advantages);
    let unclipped = tape.mul(ratio, adv_col);
    let clipped_ratio = tape.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
    let clipped = tape.mul(clipped_ratio, adv_col);
    let surrogate = tape.min(unclipped, clipped);
    let mean_s = tape.mean_all(surrogate);
    let policy = tape.neg(mean_s);

    let v_col = tape.concat_rows(&value_nodes);
    let g_col = column(tape, &g_t);
    let diff = tape.sub(g_col, v_col);
    let sq = tape.mul(diff, diff);
    let value_loss = tape.mean_all(sq);

    let entropy = mean_of(tape, &entropies);

    let v_term = tape.scale(value_loss, cfg.value_coef);
    let h_term = tape.scale(entropy, -cfg.entropy_coef);
    let pv = tape.add(policy, v_term);
    let total = tape.add(pv, h_term);
    let parts = LossParts {
        total: tape.scalar(total),
        policy: tape.scalar(policy),
        value: tape.scalar(value_loss),
        entropy: tape.scalar(entropy),
        ..LossParts::default()
    };
    (total, parts)
}

/// Indices whose advantage is at least the batch median (ties kept); the
/// median is the `n/2`-th order statistic.
pub fn top_half(advantages: &[f64]) -> Vec<usize> {
    let mut sorted: Vec<f64> = advantages.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = sorted[advantages.len() / 2];
    (0..advantages.len())
        .filter(|&i| advantages[i] >= median)
        .collect()
}

/// Normalized exponential weights `psi = softmax(A / eta)` over the kept set.
pub fn vmpo_psi(advantages: &[f64], eta: f64) -> Vec<f64> {
    let scaled: Vec<f64> = advantages.iter().map(|&a| a / eta).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|&s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// V-MPO policy-improvement loss: weighted maximum likelihood over the top
/// half, the temperature loss, the trust-region loss against the target
/// policy, and the critic MSE.
#[allow(clippy::too_many_arguments)]
pub fn loss_vmpo(
    tape: &mut Tape,
    model: &encoder::BoundModel,
    target_params: &ModelParams,
    trajs: &[Trajectory],
    cfg: &PGConfig,
    eps_alpha: f64,
) -> Option<(NodeId, LossParts)> {
    let steps = flat_steps(trajs);
    let g_t = flat_returns(trajs, cfg.gamma);
    if steps.len() < 2 {
        return None;
    }

    // Advantages and reference policies come from the collection snapshot.
    let mut target_logp: Vec<Vec<f64>> = Vec::with_capacity(steps.len());
    let mut advantages: Vec<f64> = Vec::with_capacity(steps.len());
    for (step, &g) in steps.iter().zip(&g_t) {
        let (logits, value) = policy_eval(target_params, &step.state);
        target_logp.push(log_softmax(&logits));
        advantages.push(g - value);
    }
    let advantages = normalized(advantages, cfg.normalize_advantages);

    let kept = top_half(&advantages);
    if kept.len() < 2 {
        return None;
    }
    let eta_value = tape.value(encoder::vmpo_eta(model))[(0, 0)];
    let kept_adv: Vec<f64> = kept.iter().map(|&i| advantages[i]).collect();
    let psi = vmpo_psi(&kept_adv, eta_value);

    let mut logp_nodes = Vec::with_capacity(steps.len());
    let mut value_nodes = Vec::with_capacity(steps.len());
    let mut kl_nodes = Vec::with_capacity(steps.len());
    for (i, step) in steps.iter().enumerate() {
        let nodes = forward_step(tape, model, step, true);
        logp_nodes.push(nodes.chosen_logp);
        value_nodes.push(nodes.value.expect("vmpo critic"));
        // KL(pi_target || pi_theta) = sum p_t (log p_t - log p_theta).
        let p_t: Vec<f64> = target_logp[i].iter().map(|&l| l.exp()).collect();
        let const_plogp: f64 = target_logp[i]
            .iter()
            .zip(&p_t)
            .map(|(&l, &p)| p * l)
            .sum();
        let p_row = tape.constant(
            Array2::from_shape_vec((1, p_t.len()), p_t).expect("shape"),
        );
        let cross = tape.mul(nodes.log_probs, p_row);
        let cross_sum = tape.sum_all(cross);
        let neg_cross = tape.neg(cross_sum);
        kl_nodes.push(tape.add_const(neg_cross, const_plogp));
    }

    // L_pi = -sum psi log pi over the kept half.
    let kept_logp: Vec<NodeId> = kept.iter().map(|&i| logp_nodes[i]).collect();
    let kept_col = tape.concat_rows(&kept_logp);
    let psi_col = column(tape, &psi);
    let weighted = tape.mul(kept_col, psi_col);
    let sum_w = tape.sum_all(weighted);
    let l_pi = tape.neg(sum_w);

    // L_eta = eta eps_eta + eta log mean exp(A / eta), through the eta node.
    let eta_node = encoder::vmpo_eta(model);
    let adv_col = column(tape, &kept_adv);
    let scaled = tape.div(adv_col, eta_node);
    let exps = tape.map(MapKind::Exp, scaled);
    let mean_exp = tape.mean_all(exps);
    let log_mean = tape.map(MapKind::Ln, mean_exp);
    let eta_log = tape.mul(eta_node, log_mean);
    let eta_eps = tape.scale(eta_node, cfg.eps_eta);
    let l_eta = tape.add(eta_eps, eta_log);

    // L_alpha = sg(alpha) mean KL + alpha (eps_alpha - sg(mean KL)).
    let alpha_node = encoder::vmpo_alpha(model);
    let alpha_value = tape.value(alpha_node)[(0, 0)];
    let kl_mean = mean_of(tape, &kl_nodes);
    let kl_value = tape.scalar(kl_mean);
    let kl_term = tape.scale(kl_mean, alpha_value);
    let alpha_term = tape.scale(alpha_node, eps_alpha - kl_value);
    let l_alpha = tape.add(kl_term, alpha_term);

    let v_col = tape.concat_rows(&value_nodes);
    let g_col = column(tape, &g_t);
    let diff = tape.sub(g_col, v_col);
    let sq = tape.mul(diff, diff);
    let value_loss = tape.mean_all(sq);
    let v_term = tape.scale(value_loss, cfg.value_coef);

    let a = tape.add(l_pi, l_eta);
    let b = tape.add(a, l_alpha);
    let total = tape.add(b, v_term);
    let parts = LossParts {
        total: tape.scalar(total),
        policy: tape.scalar(l_pi),
        value: tape.scalar(value_loss),
        entropy: 0.0,
        eta: tape.scalar(l_eta),
        alpha: tape.scalar(l_alpha),
        kl: kl_value,
    };
    Some((total, parts))
}

/// Owns the policy/critic parameters, the optimizer, and the V-MPO target
/// snapshot.
pub struct PGLearner {
    pub cfg: PGConfig,
    pub model: ModelParams,
    /// Collection-time snapshot anchoring the V-MPO trust region.
    pub target: Option<ModelParams>,
    opt: Adam,
    algo_rng: ChaCha8Rng,
}

impl PGLearner {
    pub fn model_spec(cfg: &PGConfig, enc: EncoderConfig) -> ModelSpec {
        ModelSpec {
            encoder: enc,
            mode: OutputMode::Policy,
            dueling: false,
            noisy: false,
            critic: cfg.algorithm != PGAlgorithm::Reinforce,
            vmpo_multipliers: cfg.algorithm == PGAlgorithm::Vmpo,
        }
    }

    pub fn new(cfg: PGConfig, enc: EncoderConfig, seed: u64) -> Self {
        let model = ModelParams::init(Self::model_spec(&cfg, enc), seed);
        let opt = Adam::new(cfg.lr, &model.set);
        let target = (cfg.algorithm == PGAlgorithm::Vmpo).then(|| model.clone());
        Self {
            cfg,
            model,
            target,
            opt,
            algo_rng: stream(seed, streams::ALGO),
        }
    }

    pub fn gradient_steps(&self) -> u64 {
        self.opt.step_count()
    }

    /// Collect one trajectory per instance with the current policy.
    pub fn collect(
        &mut self,
        instances: &[Arc<ProblemInstance>],
        seed: u64,
        episode: u64,
    ) -> Vec<Trajectory> {
        if self.target.is_some() {
            // Trust-region anchor: the policy that generated this batch.
            self.target = Some(self.model.clone());
        }
        collect(&self.model, instances, seed, episode)
    }

    /// Run the configured number of gradient passes over one batch; returns
    /// the loss parts of the final pass.
    pub fn update(&mut self, trajs: &[Trajectory]) -> Result<LossParts, PGError> {
        let mut last = LossParts::default();
        let eps_alpha = {
            let (lo, hi) = self.cfg.eps_alpha_range;
            let u: f64 = self.algo_rng.random();
            (lo.ln() + u * (hi.ln() - lo.ln())).exp()
        };
        for _ in 0..self.cfg.epochs {
            let mut tape = Tape::new();
            let model = bind(&mut tape, &self.model, NoiseMode::Zero);
            let built = match self.cfg.algorithm {
                PGAlgorithm::Reinforce => Some(loss_reinforce(&mut tape, &model, trajs, &self.cfg)),
                PGAlgorithm::A2c => Some(loss_a2c(&mut tape, &model, trajs, &self.cfg)),
                PGAlgorithm::Ppo => Some(loss_ppo(&mut tape, &model, trajs, &self.cfg)),
                PGAlgorithm::Vmpo => loss_vmpo(
                    &mut tape,
                    &model,
                    self.target.as_ref().expect("vmpo target"),
                    trajs,
                    &self.cfg,
                    eps_alpha,
                ),
            };
            let Some((total, parts)) = built else {
                // Documented skip: fewer than two usable samples.
                return Ok(last);
            };
            if !parts.total.is_finite() {
                return Err(PGError::NonFiniteLoss {
                    loss: parts.total,
                    algorithm: self.cfg.algorithm.to_string(),
                });
            }
            let grads = tape.backward(total, &self.model.set);
            self.opt.apply(&mut self.model.set, &grads);
            self.project_multipliers();
            last = parts;
        }
        Ok(last)
    }

    /// Keep the V-MPO Lagrange multipliers strictly positive.
    fn project_multipliers(&mut self) {
        for idx in [self.model.vmpo_eta(), self.model.vmpo_alpha()]
            .into_iter()
            .flatten()
        {
            let v = &mut self.model.set.value_mut(idx)[(0, 0)];
            if *v < 1e-8 {
                *v = 1e-8;
            }
        }
    }

    /// Greedy evaluation action (highest policy probability).
    pub fn greedy_action(params: &ModelParams, state: &ScheduleState) -> crate::env::Action {
        let actions = state.feasible_actions();
        let (logits, _) = policy_eval(params, state);
        let mut best = 0;
        for i in 1..logits.len() {
            if logits[i] > logits[best] {
                best = i;
            }
        }
        actions[best]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{generate_fjsp, parse_jssp, FjspParams};
    use crate::tape::{finite_differences, gradient_agreement, ParamSet};

    fn tiny_encoder() -> EncoderConfig {
        EncoderConfig {
            dim: 2,
            layers: 1,
            heads: 1,
        }
    }

    fn tiny_instances(n: usize) -> Vec<Arc<ProblemInstance>> {
        let params = FjspParams::defaults_for_machines(5).unwrap();
        (0..n)
            .map(|i| Arc::new(generate_fjsp(2, 5, 50 + i as u64, &params).unwrap()))
            .collect()
    }

    fn traj(algorithm: PGAlgorithm, seed: u64) -> (PGLearner, Vec<Trajectory>) {
        let cfg = PGConfig::defaults(algorithm);
        let mut learner = PGLearner::new(cfg, tiny_encoder(), seed);
        let trajs = learner.collect(&tiny_instances(2), seed, 0);
        (learner, trajs)
    }

    #[test]
    fn returns_cases() {
        let t = Trajectory {
            steps: [-1.0, -2.0, -3.0]
                .iter()
                .map(|&r| TrajStep {
                    state: ScheduleState::reset(Arc::new(parse_jssp("1 1\n0 5\n").unwrap())),
                    action_index: 0,
                    logp: 0.0,
                    value: 0.0,
                    reward: r,
                })
                .collect(),
        };
        assert_eq!(returns(&t, 1.0), vec![-6.0, -5.0, -3.0]);
        let t2 = Trajectory {
            steps: t.steps[..2].to_vec(),
        };
        assert_eq!(returns(&t2, 0.5), vec![-2.0, -2.0]);
        let zero = Trajectory {
            steps: t
                .steps
                .iter()
                .map(|s| TrajStep {
                    reward: 0.0,
                    ..s.clone()
                })
                .collect(),
        };
        assert_eq!(returns(&zero, 1.0), vec![0.0; 3]);
    }

    #[test]
    fn collection_invariants() {
        let (learner, trajs) = traj(PGAlgorithm::Ppo, 1);
        for (traj, inst) in trajs.iter().zip(tiny_instances(2)) {
            assert_eq!(traj.steps.len(), inst.total_ops());
            for step in &traj.steps {
                let n_actions = step.state.feasible_actions().len();
                // Masked policy entropy bounds.
                assert!(step.logp <= 1e-12);
                if n_actions == 1 {
                    assert!(step.logp.abs() < 1e-12, "certain step has logp 0");
                }
                // Replaying the evaluation reproduces the stored numbers.
                let (logits, value) = policy_eval(&learner.model, &step.state);
                let logp = log_softmax(&logits);
                assert!((logp[step.action_index] - step.logp).abs() < 1e-6);
                assert!((value - step.value).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn collected_return_telescopes_to_makespan_difference() {
        let (_, trajs) = traj(PGAlgorithm::A2c, 2);
        for traj in &trajs {
            let g = returns(traj, 1.0);
            let first = &traj.steps[0];
            let initial = first.state.partial_makespan();
            // Replay the episode to terminal to read the final makespan.
            let mut s = first.state.clone();
            for step in &traj.steps {
                let actions = s.feasible_actions();
                s.step(actions[step.action_index]).unwrap();
            }
            assert!(s.is_terminal());
            assert!((g[0] - (initial - s.makespan())).abs() < 1e-9);
        }
    }

    #[test]
    fn entropy_within_masked_bounds() {
        let (learner, trajs) = traj(PGAlgorithm::Ppo, 3);
        let mut tape = Tape::new();
        let model = bind(&mut tape, &learner.model, NoiseMode::Zero);
        for step in flat_steps(&trajs) {
            let n = step.state.feasible_actions().len() as f64;
            let nodes = forward_step(&mut tape, &model, step, false);
            let h = tape.scalar(nodes.entropy);
            assert!(h >= -1e-12 && h <= n.ln() + 1e-12, "H = {h}, |A| = {n}");
        }
    }

    #[test]
    fn reinforce_zero_returns_zero_policy_term() {
        let (learner, mut trajs) = traj(PGAlgorithm::Reinforce, 4);
        for t in &mut trajs {
            for s in &mut t.steps {
                s.reward = 0.0;
            }
        }
        let mut tape = Tape::new();
        let model = bind(&mut tape, &learner.model, NoiseMode::Zero);
        let (_, parts) = loss_reinforce(&mut tape, &model, &trajs, &learner.cfg);
        assert_eq!(parts.policy, 0.0);
        assert!((parts.total - (-learner.cfg.entropy_coef * parts.entropy)).abs() < 1e-12);
    }

    #[test]
    fn reinforce_single_action_chain_has_zero_loss_and_zero_grads() {
        // Every state of a single-job job-shop chain admits one action:
        // log pi = 0 everywhere, entropy 0, so nothing moves.
        let cfg = PGConfig::defaults(PGAlgorithm::Reinforce);
        let mut learner = PGLearner::new(cfg, tiny_encoder(), 5);
        let inst = Arc::new(parse_jssp("1 3\n0 3 1 4 2 2\n").unwrap());
        let trajs = learner.collect(&[inst], 5, 0);
        assert!(trajs[0].steps.iter().all(|s| s.logp == 0.0));
        let before = learner.model.set.clone();
        learner.update(&trajs).unwrap();
        assert_eq!(learner.model.set, before);
    }

    #[test]
    fn reinforce_gradient_pushes_toward_higher_return_action() {
        // Two-action bandit: after one ascent step on -logp * G with G > 0,
        // the chosen action must become more probable.
        let cfg = PGConfig {
            entropy_coef: 0.0,
            lr: 0.05,
            ..PGConfig::defaults(PGAlgorithm::Reinforce)
        };
        let mut learner = PGLearner::new(cfg, tiny_encoder(), 6);
        let inst = Arc::new(parse_jssp("2 1\n0 3\n0 5\n").unwrap());
        let state = ScheduleState::reset(inst);
        let (logits, _) = policy_eval(&learner.model, &state);
        let p_before = log_softmax(&logits)[0].exp();
        let trajs = vec![Trajectory {
            steps: vec![TrajStep {
                state: state.clone(),
                action_index: 0,
                logp: log_softmax(&logits)[0],
                value: 0.0,
                reward: 3.0,
            }],
        }];
        learner.update(&trajs).unwrap();
        let (logits, _) = policy_eval(&learner.model, &state);
        let p_after = log_softmax(&logits)[0].exp();
        assert!(
            p_after > p_before,
            "probability did not increase: {p_before} -> {p_after}"
        );
    }

    #[test]
    fn a2c_perfect_critic_zeroes_policy_and_value_terms() {
        let (learner, mut trajs) = traj(PGAlgorithm::A2c, 7);
        // Overwrite rewards so that G_t equals the critic value everywhere:
        // set all rewards such that suffix sums replicate stored values.
        for t in &mut trajs {
            let values: Vec<f64> = t.steps.iter().map(|s| s.value).collect();
            for (i, s) in t.steps.iter_mut().enumerate() {
                let next = values.get(i + 1).copied().unwrap_or(0.0);
                s.reward = values[i] - next;
            }
        }
        let mut tape = Tape::new();
        let model = bind(&mut tape, &learner.model, NoiseMode::Zero);
        let (_, parts) = loss_a2c(&mut tape, &model, &trajs, &learner.cfg);
        assert!(parts.policy.abs() < 1e-9, "policy {}", parts.policy);
        assert!(parts.value.abs() < 1e-9, "value {}", parts.value);
    }

    #[test]
    fn a2c_total_is_weighted_component_sum() {
        let (learner, trajs) = traj(PGAlgorithm::A2c, 8);
        let mut tape = Tape::new();
        let model = bind(&mut tape, &learner.model, NoiseMode::Zero);
        let (_, parts) = loss_a2c(&mut tape, &model, &trajs, &learner.cfg);
        let expected = parts.policy + 0.5 * parts.value - 0.01 * parts.entropy;
        assert!((parts.total - expected).abs() < 1e-12);
        // Advantage arithmetic: G = -4 with V = -6 gives A = +2.
        assert_eq!(-4.0f64 - (-6.0), 2.0);
    }

    #[test]
    fn ppo_first_epoch_ratios_are_one() {
        let (learner, trajs) = traj(PGAlgorithm::Ppo, 9);
        let g_t = flat_returns(&trajs, 1.0);
        let steps = flat_steps(&trajs);
        let advantages: Vec<f64> = g_t
            .iter()
            .zip(steps.iter())
            .map(|(&g, s)| g - s.value)
            .collect();
        let mut tape = Tape::new();
        let model = bind(&mut tape, &learner.model, NoiseMode::Zero);
        let (_, parts) = loss_ppo(&mut tape, &model, &trajs, &learner.cfg);
        // Unchanged policy: surrogate reduces to the mean advantage.
        let mean_adv = advantages.iter().sum::<f64>() / advantages.len() as f64;
        assert!(
            (parts.policy + mean_adv).abs() < 1e-6,
            "policy {} vs mean advantage {mean_adv}",
            parts.policy
        );
    }

    #[test]
    fn ppo_clip_arithmetic() {
        // rho = 1.5, A = 2, delta = 0.2: min(3.0, 2.4) = 2.4.
        // rho = 0.5, A = -1: min(-0.5, -0.8) = -0.8.
        let mut tape = Tape::new();
        let ratio = tape.constant(ndarray::array![[1.5], [0.5]]);
        let adv = tape.constant(ndarray::array![[2.0], [-1.0]]);
        let unclipped = tape.mul(ratio, adv);
        let clipped_ratio = tape.clamp(ratio, 0.8, 1.2);
        let clipped = tape.mul(clipped_ratio, adv);
        let surrogate = tape.min(unclipped, clipped);
        assert_eq!(tape.value(surrogate)[(0, 0)], 2.4);
        assert_eq!(tape.value(surrogate)[(1, 0)], -0.8);
    }

    #[test]
    fn ppo_runs_three_epochs_per_batch() {
        let (mut learner, trajs) = traj(PGAlgorithm::Ppo, 10);
        assert_eq!(learner.gradient_steps(), 0);
        learner.update(&trajs).unwrap();
        assert_eq!(learner.gradient_steps(), 3);
    }

    #[test]
    fn vmpo_median_filter_and_psi() {
        assert_eq!(top_half(&[1.0, 2.0, 3.0, 4.0]), vec![2, 3]);
        // Equal advantages keep everything with uniform weights.
        let kept = top_half(&[2.0, 2.0, 2.0]);
        assert_eq!(kept, vec![0, 1, 2]);
        let psi = vmpo_psi(&[2.0, 2.0, 2.0], 1.7);
        assert!(psi.iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-12));
        // eta = 1 with A = [0, ln 3]: softmax = [1/4, 3/4].
        let psi = vmpo_psi(&[0.0, 3.0f64.ln()], 1.0);
        assert!((psi[0] - 0.25).abs() < 1e-12);
        assert!((psi[1] - 0.75).abs() < 1e-12);
        let total: f64 = psi.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn vmpo_kl_zero_against_identical_target() {
        let (learner, trajs) = traj(PGAlgorithm::Vmpo, 11);
        let mut tape = Tape::new();
        let model = bind(&mut tape, &learner.model, NoiseMode::Zero);
        // Target still equals the online model right after collection.
        let (_, parts) = loss_vmpo(
            &mut tape,
            &model,
            learner.target.as_ref().unwrap(),
            &trajs,
            &learner.cfg,
            0.005,
        )
        .unwrap();
        assert!(parts.kl.abs() < 1e-9, "kl {}", parts.kl);
        // With zero KL the trust-region term reduces to alpha * eps_alpha.
        assert!((parts.alpha - 0.005).abs() < 1e-9);
    }

    #[test]
    fn vmpo_eta_loss_hand_value() {
        // eta = 1 with kept advantages [0, ln 3]:
        // L_eta = eps_eta + ln((1 + 3) / 2) = 0.01 + ln 2.
        let (learner, mut trajs) = traj(PGAlgorithm::Vmpo, 12);
        // Craft four steps whose advantages are [-5, -5, 0, ln 3]; the
        // median filter then keeps exactly the last two.
        trajs.truncate(1);
        trajs[0].steps.truncate(4);
        assert_eq!(trajs[0].steps.len(), 4);
        let target = learner.target.as_ref().unwrap();
        let wanted = [-5.0, -5.0, 0.0, 3.0f64.ln()];
        let values: Vec<f64> = trajs[0]
            .steps
            .iter()
            .map(|s| policy_eval(target, &s.state).1)
            .collect();
        let g: Vec<f64> = wanted.iter().zip(&values).map(|(a, v)| a + v).collect();
        for i in 0..4 {
            let next = g.get(i + 1).copied().unwrap_or(0.0);
            trajs[0].steps[i].reward = g[i] - next;
        }
        let mut tape = Tape::new();
        let model = bind(&mut tape, &learner.model, NoiseMode::Zero);
        let (_, parts) = loss_vmpo(
            &mut tape,
            &model,
            target,
            &trajs,
            &learner.cfg,
            0.005,
        )
        .unwrap();
        let expected = 0.01 + 2.0f64.ln();
        assert!((parts.eta - expected).abs() < 1e-9, "eta loss {}", parts.eta);
    }

    #[test]
    fn vmpo_skips_underfilled_batches() {
        let (mut learner, mut trajs) = traj(PGAlgorithm::Vmpo, 13);
        trajs.truncate(1);
        trajs[0].steps.truncate(1);
        let before = learner.model.set.clone();
        learner.update(&trajs).unwrap();
        assert_eq!(learner.model.set, before);
    }

    #[test]
    fn multipliers_stay_positive() {
        let (mut learner, trajs) = traj(PGAlgorithm::Vmpo, 14);
        for _ in 0..5 {
            learner.update(&trajs).unwrap();
        }
        let eta = learner.model.set.value(learner.model.vmpo_eta().unwrap())[(0, 0)];
        let alpha = learner.model.set.value(learner.model.vmpo_alpha().unwrap())[(0, 0)];
        assert!(eta >= 1e-8);
        assert!(alpha >= 1e-8);
    }

    /// Finite-difference gradient agreement for each algorithm's loss.
    #[test]
    fn pg_losses_match_finite_differences() {
        for algorithm in [
            PGAlgorithm::Reinforce,
            PGAlgorithm::A2c,
            PGAlgorithm::Ppo,
            PGAlgorithm::Vmpo,
        ] {
            let (learner, trajs) = traj(algorithm, 15);
            let target = learner.target.clone();
            let cfg = learner.cfg;
            let build = |tape: &mut Tape, set: &ParamSet| {
                let mut p = learner.model.clone();
                p.set = set.clone();
                let bound = bind(tape, &p, NoiseMode::Zero);
                match algorithm {
                    PGAlgorithm::Reinforce => loss_reinforce(tape, &bound, &trajs, &cfg).0,
                    PGAlgorithm::A2c => loss_a2c(tape, &bound, &trajs, &cfg).0,
                    PGAlgorithm::Ppo => loss_ppo(tape, &bound, &trajs, &cfg).0,
                    PGAlgorithm::Vmpo => {
                        loss_vmpo(tape, &bound, target.as_ref().unwrap(), &trajs, &cfg, 0.005)
                            .unwrap()
                            .0
                    }
                }
            };
            let mut set = learner.model.set.clone();
            let mut tape = Tape::new();
            let loss = build(&mut tape, &set);
            let analytic = tape.backward(loss, &set);
            let numeric = finite_differences(&mut set, 1e-4, |s| {
                let mut t = Tape::new();
                let l = build(&mut t, s);
                t.scalar(l)
            });
            let agreement = gradient_agreement(&analytic, &numeric, 1e-4);
            assert!(
                agreement >= 0.99,
                "{algorithm}: FD agreement {agreement}"
            );
        }
    }
}
