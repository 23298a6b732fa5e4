//! Target computation and the gradient step.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{epsilon, NStepWindow, RainbowConfig, ReplayBuffer, Transition};
use crate::encoder::{
    self, action_indices, bind, encode, score_actions, EncoderConfig, GraphInput, ModelParams,
    ModelSpec, NoiseMode, OutputMode,
};
use crate::env::{Action, ScheduleState};
use crate::optim::Adam;
use crate::rng::{stream, streams};
use crate::tape::Tape;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss {loss} at gradient step {step}")]
    NonFiniteLoss { loss: f64, step: u64 },
    #[error(transparent)]
    Encoder(#[from] encoder::EncoderError),
}

/// Categorical return grid `z_i = v_min + i * dz`.
#[derive(Debug, Clone)]
pub struct AtomGrid {
    pub v_min: f64,
    pub v_max: f64,
    pub z: Vec<f64>,
    pub dz: f64,
}

impl AtomGrid {
    pub fn new(v_min: f64, v_max: f64, atoms: usize) -> Self {
        assert!(atoms >= 2 && v_min < v_max);
        let dz = (v_max - v_min) / (atoms - 1) as f64;
        let z = (0..atoms).map(|i| v_min + i as f64 * dz).collect();
        Self { v_min, v_max, z, dz }
    }

    pub fn atoms(&self) -> usize {
        self.z.len()
    }

    /// Expected value of a probability vector on this grid.
    pub fn expectation(&self, probs: &[f64]) -> f64 {
        probs.iter().zip(&self.z).map(|(&p, &z)| p * z).sum()
    }
}

/// Weighted MSE on `Q(s, a)` against fixed targets.
fn scalar_step(
    online: &mut ModelParams,
    opt: &mut Adam,
    noise_rng: Option<&mut ChaCha8Rng>,
    batch: &[&Transition],
    targets: &[f64],
    weights: &[f64],
) -> Result<(f64, Vec<f64>), TrainError> {
    let mut tape = Tape::new();
    let noise = match noise_rng {
        Some(rng) => NoiseMode::Sampled(rng),
        None => NoiseMode::Zero,
    };
    let model = bind(&mut tape, online, noise);
    let mut q_nodes = Vec::with_capacity(batch.len());
    for t in batch {
        let g = GraphInput::from_state(&t.state);
        let emb = encode(&mut tape, &model, &g);
        let ix = action_indices(&t.state, &[t.action]);
        let q = score_actions(&mut tape, &model, &emb, &ix)?;
        q_nodes.push(q);
    }
    let q_col = tape.concat_rows(&q_nodes);
    let y_col = tape.constant(
        Array2::from_shape_vec((targets.len(), 1), targets.to_vec()).expect("shape"),
    );
    let diff = tape.sub(y_col, q_col);
    let td_errors: Vec<f64> = tape.value(diff).column(0).iter().map(|d| d.abs()).collect();
    let sq = tape.mul(diff, diff);
    let w_col = tape.constant(
        Array2::from_shape_vec((weights.len(), 1), weights.to_vec()).expect("shape"),
    );
    let weighted = tape.mul(sq, w_col);
    let loss = tape.mean_all(weighted);
    let loss_value = tape.scalar(loss);
    let grads = tape.backward(loss, &online.set);
    opt.apply(&mut online.set, &grads);
    Ok((loss_value, td_errors))
}

/// Weighted cross-entropy between the projected target mass and the online
/// distribution at `(s, a)`; the cross-entropy doubles as the priority
/// signal.
fn distributional_step(
    online: &mut ModelParams,
    opt: &mut Adam,
    noise_rng: Option<&mut ChaCha8Rng>,
    batch: &[&Transition],
    targets: &[Vec<f64>],
    weights: &[f64],
) -> Result<(f64, Vec<f64>), TrainError> {
    let mut tape = Tape::new();
    let noise = match noise_rng {
        Some(rng) => NoiseMode::Sampled(rng),
        None => NoiseMode::Zero,
    };
    let model = bind(&mut tape, online, noise);
    let mut ce_nodes = Vec::with_capacity(batch.len());
    for (t, m) in batch.iter().zip(targets) {
        let g = GraphInput::from_state(&t.state);
        let emb = encode(&mut tape, &model, &g);
        let ix = action_indices(&t.state, &[t.action]);
        let logits = score_actions(&mut tape, &model, &emb, &ix)?;
        let log_p = tape.row_log_softmax(logits);
        let m_row =
            tape.constant(Array2::from_shape_vec((1, m.len()), m.clone()).expect("shape"));
        let prod = tape.mul(log_p, m_row);
        let ce = tape.sum_all(prod);
        let ce = tape.neg(ce);
        ce_nodes.push(ce);
    }
    let ce_col = tape.concat_rows(&ce_nodes);
    let priorities: Vec<f64> = tape.value(ce_col).column(0).to_vec();
    let w_col = tape.constant(
        Array2::from_shape_vec((weights.len(), 1), weights.to_vec()).expect("shape"),
    );
    let weighted = tape.mul(ce_col, w_col);
    let loss = tape.mean_all(weighted);
    let loss_value = tape.scalar(loss);
    let grads = tape.backward(loss, &online.set);
    opt.apply(&mut online.set, &grads);
    Ok((loss_value, priorities))
}

/// Scalar bootstrap target: `r` when done, else `r + discount * q_next`.
pub fn scalar_target(reward: f64, discount: f64, done: bool, q_next: f64) -> f64 {
    if done {
        reward
    } else {
        reward + discount * q_next
    }
}

/// Next-state value under the (D)DQN rule: plain DQN takes the target
/// network's maximum; double DQN evaluates the online argmax on the target
/// network, decoupling selection from evaluation.
pub fn select_and_eval(q_online_next: &[f64], q_target_next: &[f64], ddqn: bool) -> f64 {
    if ddqn {
        let mut best = 0;
        for i in 1..q_online_next.len() {
            if q_online_next[i] > q_online_next[best] {
                best = i;
            }
        }
        q_target_next[best]
    } else {
        q_target_next
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Distribute the mass of `probs` onto the grid after the affine map
/// `z -> clamp(r + discount_eff * z)`, splitting each image between its two
/// neighboring atoms. Pass `discount_eff = 0` for terminal transitions.
pub fn project_mass(reward: f64, discount_eff: f64, probs: &[f64], grid: &AtomGrid) -> Vec<f64> {
    let atoms = grid.atoms();
    let mut m = vec![0.0; atoms];
    for (j, &p) in probs.iter().enumerate() {
        let tz = (reward + discount_eff * grid.z[j]).clamp(grid.v_min, grid.v_max);
        let b = (tz - grid.v_min) / grid.dz;
        let l = b.floor();
        let u = b.ceil();
        let li = l as usize;
        let ui = u as usize;
        if li == ui {
            m[li] += p;
        } else {
            m[li] += p * (u - b);
            m[ui] += p * (b - l);
        }
    }
    m
}

fn reborrow_noise<'a>(rng: &'a mut Option<&mut ChaCha8Rng>) -> NoiseMode<'a> {
    match rng.as_deref_mut() {
        Some(r) => NoiseMode::Sampled(r),
        None => NoiseMode::Zero,
    }
}

fn forward_values(
    params: &ModelParams,
    g: &GraphInput,
    action_ix: &[(usize, usize)],
    noise: NoiseMode,
) -> Array2<f64> {
    encoder::evaluate_actions(params, g, action_ix, noise).expect("non-empty feasible set")
}

/// Per-action scalar scores of a state under `params`: raw q-values, or
/// expected values of the categorical distribution in distributional mode.
pub fn action_scores(
    params: &ModelParams,
    state: &ScheduleState,
    grid: Option<&AtomGrid>,
    noise: NoiseMode,
) -> (Vec<Action>, Vec<f64>) {
    let actions = state.feasible_actions();
    let g = GraphInput::from_state(state);
    let ix = action_indices(state, &actions);
    let out = forward_values(params, &g, &ix, noise);
    let scores = match grid {
        None => out.column(0).to_vec(),
        Some(grid) => (0..out.nrows())
            .map(|i| {
                let row: Vec<f64> = out.row(i).to_vec();
                grid.expectation(&softmax(&row))
            })
            .collect(),
    };
    (actions, scores)
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..values.len() {
        if values[i] > values[best] {
            best = i;
        }
    }
    best
}

/// Scalar TD targets for a batch (terminal entries never bootstrap).
pub fn td_targets(
    batch: &[&Transition],
    online: &ModelParams,
    target: &ModelParams,
    cfg: &RainbowConfig,
    mut noise_rng: Option<&mut ChaCha8Rng>,
) -> Vec<f64> {
    batch
        .iter()
        .map(|t| {
            if t.done {
                return t.reward;
            }
            let next = t.next_state();
            let actions = next.feasible_actions();
            let g = GraphInput::from_state(&next);
            let ix = action_indices(&next, &actions);
            let q_target: Vec<f64> =
                forward_values(target, &g, &ix, reborrow_noise(&mut noise_rng))
                    .column(0)
                    .to_vec();
            let q_next = if cfg.ddqn {
                let q_online: Vec<f64> =
                    forward_values(online, &g, &ix, reborrow_noise(&mut noise_rng))
                        .column(0)
                        .to_vec();
                select_and_eval(&q_online, &q_target, true)
            } else {
                select_and_eval(&[], &q_target, false)
            };
            scalar_target(t.reward, t.discount, false, q_next)
        })
        .collect()
}

/// Projected categorical targets for a batch, one mass vector per sample.
pub fn categorical_targets(
    batch: &[&Transition],
    online: &ModelParams,
    target: &ModelParams,
    cfg: &RainbowConfig,
    grid: &AtomGrid,
    mut noise_rng: Option<&mut ChaCha8Rng>,
) -> Vec<Vec<f64>> {
    batch
        .iter()
        .map(|t| {
            if t.done {
                // All mass collapses onto clamp(r).
                return project_mass(t.reward, 0.0, &uniform_probs(grid.atoms()), grid);
            }
            let next = t.next_state();
            let actions = next.feasible_actions();
            let g = GraphInput::from_state(&next);
            let ix = action_indices(&next, &actions);
            let target_logits =
                forward_values(target, &g, &ix, reborrow_noise(&mut noise_rng));
            let target_probs: Vec<Vec<f64>> = (0..target_logits.nrows())
                .map(|i| softmax(&target_logits.row(i).to_vec()))
                .collect();
            let best = if cfg.ddqn {
                let online_logits =
                    forward_values(online, &g, &ix, reborrow_noise(&mut noise_rng));
                let online_ev: Vec<f64> = (0..online_logits.nrows())
                    .map(|i| grid.expectation(&softmax(&online_logits.row(i).to_vec())))
                    .collect();
                argmax(&online_ev)
            } else {
                let target_ev: Vec<f64> =
                    target_probs.iter().map(|p| grid.expectation(p)).collect();
                argmax(&target_ev)
            };
            project_mass(t.reward, t.discount, &target_probs[best], grid)
        })
        .collect()
}

fn uniform_probs(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// Owns the online/target networks, the replay buffer and the optimizer.
pub struct ValueLearner {
    pub cfg: RainbowConfig,
    pub online: ModelParams,
    pub target: ModelParams,
    pub buffer: ReplayBuffer,
    opt: Adam,
    window: NStepWindow,
    grid: Option<AtomGrid>,
    beta: f64,
    action_rng: ChaCha8Rng,
    sample_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
}

impl ValueLearner {
    pub fn model_spec(cfg: &RainbowConfig, enc: EncoderConfig) -> ModelSpec {
        ModelSpec {
            encoder: enc,
            mode: if cfg.distributional {
                OutputMode::Distributional { atoms: cfg.atoms }
            } else {
                OutputMode::Q
            },
            dueling: cfg.dueling,
            noisy: cfg.noisy,
            critic: false,
            vmpo_multipliers: false,
        }
    }

    pub fn new(cfg: RainbowConfig, enc: EncoderConfig, seed: u64) -> Self {
        let spec = Self::model_spec(&cfg, enc);
        let online = ModelParams::init(spec, seed);
        let target = online.clone();
        let buffer = if cfg.per {
            ReplayBuffer::prioritized(cfg.buffer_capacity, cfg.per_alpha, cfg.per_eps)
        } else {
            ReplayBuffer::uniform(cfg.buffer_capacity)
        };
        let grid = cfg
            .distributional
            .then(|| AtomGrid::new(cfg.v_min, cfg.v_max, cfg.atoms));
        let opt = Adam::new(cfg.lr, &online.set);
        Self {
            cfg,
            online,
            target,
            buffer,
            opt,
            window: NStepWindow::new(cfg.effective_n(), cfg.gamma),
            grid,
            beta: cfg.per_beta0,
            action_rng: stream(seed, streams::ACTION),
            sample_rng: stream(seed, streams::REPLAY),
            noise_rng: stream(seed, streams::NOISE),
        }
    }

    pub fn grid(&self) -> Option<&AtomGrid> {
        self.grid.as_ref()
    }

    /// Anneal the importance-sampling exponent: `beta0 -> 1` linearly over
    /// training progress in `[0, 1]`.
    pub fn set_progress(&mut self, progress: f64) {
        self.beta = self.cfg.per_beta0 + (1.0 - self.cfg.per_beta0) * progress.clamp(0.0, 1.0);
    }

    /// Training-time action choice: epsilon-greedy, or greedy under sampled
    /// noise when noisy layers drive exploration.
    pub fn select_action(&mut self, state: &ScheduleState, episode: usize) -> Action {
        let actions = state.feasible_actions();
        if self.cfg.noisy {
            let (_, scores) = action_scores(
                &self.online,
                state,
                self.grid.as_ref(),
                NoiseMode::Sampled(&mut self.noise_rng),
            );
            return actions[argmax(&scores)];
        }
        let eps = epsilon(&self.cfg, episode);
        let u: f64 = self.action_rng.random();
        if u < eps {
            let i = self.action_rng.random_range(0..actions.len());
            actions[i]
        } else {
            let (_, scores) =
                action_scores(&self.online, state, self.grid.as_ref(), NoiseMode::Zero);
            actions[argmax(&scores)]
        }
    }

    /// Greedy evaluation action: argmax, zero noise.
    pub fn greedy_action(params: &ModelParams, state: &ScheduleState, grid: Option<&AtomGrid>) -> Action {
        let (actions, scores) = action_scores(params, state, grid, NoiseMode::Zero);
        actions[argmax(&scores)]
    }

    /// Record a step; matured transitions enter the replay buffer.
    pub fn observe(
        &mut self,
        state_before: ScheduleState,
        action: Action,
        reward: f64,
        terminal_after: bool,
    ) {
        let matured = self.window.push(state_before, action, reward);
        if terminal_after {
            // A window that filled on the episode's last step bootstraps
            // from the terminal state: mark it done (oldest first).
            if let Some(mut t) = matured {
                t.done = true;
                self.buffer.push(t);
            }
            for t in self.window.flush_terminal() {
                self.buffer.push(t);
            }
        } else if let Some(t) = matured {
            self.buffer.push(t);
        }
    }

    /// One minibatch gradient step. Returns `None` while the buffer is still
    /// below one batch (warm-up).
    pub fn train_step(&mut self) -> Result<Option<f64>, TrainError> {
        if self.buffer.len() < self.cfg.batch {
            return Ok(None);
        }
        let (indices, weights) = if self.cfg.per {
            self.buffer
                .sample_prioritized(&mut self.sample_rng, self.cfg.batch, self.beta)
        } else {
            let idx = self.buffer.sample_uniform(&mut self.sample_rng, self.cfg.batch);
            let w = vec![1.0; self.cfg.batch];
            (idx, w)
        };
        let batch: Vec<&Transition> = indices.iter().map(|&i| self.buffer.get(i)).collect();

        let noisy = self.cfg.noisy;
        let (loss, td_errors) = if self.cfg.distributional {
            let grid = self.grid.as_ref().expect("distributional grid");
            let targets = categorical_targets(
                &batch,
                &self.online,
                &self.target,
                &self.cfg,
                grid,
                noisy.then_some(&mut self.noise_rng),
            );
            distributional_step(
                &mut self.online,
                &mut self.opt,
                noisy.then_some(&mut self.noise_rng),
                &batch,
                &targets,
                &weights,
            )?
        } else {
            let targets = td_targets(
                &batch,
                &self.online,
                &self.target,
                &self.cfg,
                noisy.then_some(&mut self.noise_rng),
            );
            scalar_step(
                &mut self.online,
                &mut self.opt,
                noisy.then_some(&mut self.noise_rng),
                &batch,
                &targets,
                &weights,
            )?
        };

        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                loss,
                step: self.opt.step_count(),
            });
        }
        if self.cfg.per {
            self.buffer.update_priorities(&indices, &td_errors);
        }
        Ok(Some(loss))
    }

    /// Hard copy of the online parameters into the target network.
    pub fn sync_target(&mut self) {
        self.target = self.online.clone();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{generate_fjsp, FjspParams, Problem};
    use std::sync::Arc;

    fn tiny_encoder() -> EncoderConfig {
        EncoderConfig {
            dim: 4,
            layers: 1,
            heads: 1,
        }
    }

    #[test]
    fn scalar_target_cases() {
        // Terminal transitions never bootstrap.
        assert_eq!(scalar_target(-7.0, 0.99, true, 123.0), -7.0);
        // Plain DQN: r + gamma * max target-q.
        let y = scalar_target(0.0, 0.99, false, select_and_eval(&[], &[1.0, 2.0], false));
        assert!((y - 1.98).abs() < 1e-12);
    }

    #[test]
    fn ddqn_decouples_selection_from_evaluation() {
        // Online argmax is index 0; evaluation takes the target's value
        // there (5), not the target's own maximum (100).
        let v = select_and_eval(&[10.0, 1.0], &[5.0, 100.0], true);
        assert_eq!(v, 5.0);
        let v = select_and_eval(&[10.0, 1.0], &[5.0, 100.0], false);
        assert_eq!(v, 100.0);
    }

    #[test]
    fn projection_exact_atom_hit() {
        let grid = AtomGrid::new(-10.0, 0.0, 11);
        let m = project_mass(-3.0, 0.0, &uniform_probs(11), &grid);
        for (i, &v) in m.iter().enumerate() {
            if i == 7 {
                assert!((v - 1.0).abs() < 1e-12);
            } else {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn projection_hand_case_on_the_jssp_grid() {
        let grid = AtomGrid::new(-600.0, -50.0, 51);
        assert!((grid.dz - 11.0).abs() < 1e-12);
        let m = project_mass(-60.0, 0.0, &uniform_probs(51), &grid);
        // b = 540/11 = 49.0909...: mass 0.9091 on atom 49 (z = -61) and
        // 0.0909 on atom 50 (z = -50).
        assert!((m[49] - 0.9091).abs() < 1e-4);
        assert!((m[50] - 0.0909).abs() < 1e-4);
        assert!((grid.z[49] - (-61.0)).abs() < 1e-12);
        assert!((grid.z[50] - (-50.0)).abs() < 1e-12);
        let sum: f64 = m.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }

    /// Independent projection oracle: triangular-kernel formulation
    /// `m_i = sum_j p_j (1 - |Tz_j - z_i| / dz)_+`.
    fn project_triangle(reward: f64, discount_eff: f64, probs: &[f64], grid: &AtomGrid) -> Vec<f64> {
        let mut m = vec![0.0; grid.atoms()];
        for (i, &z_i) in grid.z.iter().enumerate() {
            for (j, &p) in probs.iter().enumerate() {
                let tz = (reward + discount_eff * grid.z[j]).clamp(grid.v_min, grid.v_max);
                let w = 1.0 - (tz - z_i).abs() / grid.dz;
                if w > 0.0 {
                    m[i] += p * w;
                }
            }
        }
        m
    }

    #[test]
    fn projection_matches_triangle_kernel_oracle() {
        use rand::Rng;
        let mut rng = crate::rng::stream(8, 0);
        for grid in [AtomGrid::new(-600.0, -50.0, 51), AtomGrid::new(-50.0, 0.0, 51)] {
            for _ in 0..200 {
                let reward = rng.random_range(2.0 * grid.v_min..-2.0 * grid.v_min);
                let done = rng.random::<f64>() < 0.3;
                let discount_eff = if done { 0.0 } else { rng.random_range(0.9..1.0) };
                let mut probs: Vec<f64> =
                    (0..grid.atoms()).map(|_| rng.random_range(0.0..1.0)).collect();
                let total: f64 = probs.iter().sum();
                probs.iter_mut().for_each(|p| *p /= total);
                let fast = project_mass(reward, discount_eff, &probs, &grid);
                let slow = project_triangle(reward, discount_eff, &probs, &grid);
                for (a, b) in fast.iter().zip(&slow) {
                    assert!((a - b).abs() < 1e-9, "{a} vs {b}");
                }
                let sum: f64 = fast.iter().sum();
                assert!((sum - 1.0).abs() < 1e-6);
            }
        }
    }

    fn fill_buffer(learner: &mut ValueLearner, seed: u64, episodes: usize) {
        let params = FjspParams::defaults_for_machines(5).unwrap();
        for e in 0..episodes {
            let inst = Arc::new(generate_fjsp(3, 5, seed + e as u64, &params).unwrap());
            let mut state = ScheduleState::reset(inst);
            while !state.is_terminal() {
                let a = learner.select_action(&state, e);
                let pre = state.clone();
                let r = state.step(a).unwrap();
                learner.observe(pre, a, r, state.is_terminal());
            }
        }
    }

    #[test]
    fn warm_up_returns_none() {
        let cfg = RainbowConfig::defaults(Problem::Fjsp);
        let mut learner = ValueLearner::new(cfg, tiny_encoder(), 3);
        assert!(learner.train_step().unwrap().is_none());
    }

    /// Mean squared TD error over the whole buffer against the frozen
    /// target network (deterministic, unlike per-minibatch losses).
    fn full_buffer_mse(learner: &ValueLearner) -> f64 {
        let batch: Vec<&Transition> =
            (0..learner.buffer.len()).map(|i| learner.buffer.get(i)).collect();
        let targets = td_targets(&batch, &learner.online, &learner.target, &learner.cfg, None);
        let mut total = 0.0;
        for (t, y) in batch.iter().zip(&targets) {
            let (actions, scores) =
                action_scores(&learner.online, &t.state, None, NoiseMode::Zero);
            let pos = actions.iter().position(|a| *a == t.action).unwrap();
            total += (y - scores[pos]) * (y - scores[pos]);
        }
        total / batch.len() as f64
    }

    #[test]
    fn td_error_reduces_on_a_frozen_buffer() {
        let mut cfg = RainbowConfig::defaults(Problem::Fjsp);
        cfg.lr = 1e-3;
        let mut learner = ValueLearner::new(cfg, tiny_encoder(), 4);
        fill_buffer(&mut learner, 100, 8);
        assert!(learner.buffer.len() >= 100);
        let before = full_buffer_mse(&learner);
        for _ in 0..200 {
            learner.train_step().unwrap().unwrap();
        }
        let after = full_buffer_mse(&learner);
        assert!(
            after < 0.95 * before,
            "TD error failed to decrease: before {before}, after {after}"
        );
    }

    #[test]
    fn every_toggle_combination_trains_briefly() {
        // One gradient step per combination on a small buffer; the full
        // five-episode matrix lives in the acceptance suite.
        for bits in 0..64u32 {
            let mut cfg = RainbowConfig::defaults(Problem::Fjsp);
            cfg.ddqn = bits & 1 != 0;
            cfg.per = bits & 2 != 0;
            cfg.dueling = bits & 4 != 0;
            cfg.noisy = bits & 8 != 0;
            cfg.distributional = bits & 16 != 0;
            cfg.multistep = bits & 32 != 0;
            cfg.batch = 8;
            let mut learner = ValueLearner::new(cfg, EncoderConfig { dim: 2, layers: 1, heads: 1 }, 5);
            fill_buffer(&mut learner, 200, 1);
            let loss = learner.train_step().unwrap();
            assert!(loss.is_some(), "combination {bits} failed to train");
            assert!(loss.unwrap().is_finite());
        }
    }

    #[test]
    fn sync_target_copies_and_is_idempotent() {
        let cfg = RainbowConfig::defaults(Problem::Fjsp);
        let mut learner = ValueLearner::new(cfg, tiny_encoder(), 6);
        fill_buffer(&mut learner, 300, 4);
        for _ in 0..3 {
            learner.train_step().unwrap();
        }
        assert_ne!(learner.online.set, learner.target.set);
        learner.sync_target();
        assert_eq!(learner.online.set, learner.target.set);
        learner.sync_target();
        assert_eq!(learner.online.set, learner.target.set);
    }

    #[test]
    fn greedy_action_is_deterministic() {
        let cfg = RainbowConfig::defaults(Problem::Fjsp);
        let learner = ValueLearner::new(cfg, tiny_encoder(), 7);
        let params = FjspParams::defaults_for_machines(5).unwrap();
        let inst = Arc::new(generate_fjsp(3, 5, 17, &params).unwrap());
        let state = ScheduleState::reset(inst);
        let a = ValueLearner::greedy_action(&learner.online, &state, learner.grid());
        let b = ValueLearner::greedy_action(&learner.online, &state, learner.grid());
        assert_eq!(a, b);
    }
}
