//! Training orchestration, evaluation and reporting.
//!
//! `train` runs the episode loop for either trainer family: a fresh instance
//! (or a parallel batch of them) per episode, periodic validation on a fixed
//! generated set, and checkpoint selection by the lowest mean validation
//! makespan. `evaluate_greedy` and `evaluate_multistart` decode schedules
//! with a checkpoint and verify every schedule against the independent
//! feasibility checker before reporting it.

pub mod report;
pub mod stats;
pub mod verify;

pub use report::{emit_report, RunArtifacts};
pub use stats::{gap, wilcoxon, WilcoxonOutcome};

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{Checkpoint, CheckpointError, CheckpointKind, CHECKPOINT_VERSION};
use crate::encoder::EncoderConfig;
use crate::env::ScheduleState;
use crate::instances::{
    generate_fjsp, generate_jssp, FjspParams, InstanceError, Problem, ProblemInstance,
};
use crate::policy_rl::{PGConfig, PGLearner};
use crate::rng::streams;
use crate::value_rl::{epsilon, RainbowConfig, ValueLearner};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("training failed: {0}")]
    Train(String),
    #[error("evaluated schedule is infeasible: {0}")]
    InfeasibleSchedule(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Instance generation settings for one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub problem: Problem,
    pub n: usize,
    pub m: usize,
    /// Job-shop processing-time range.
    pub ptime_range: (u32, u32),
    /// Flexible-job-shop parameters.
    pub fjsp: FjspParams,
}

impl GenConfig {
    pub fn new(problem: Problem, n: usize, m: usize) -> Result<Self, HarnessError> {
        let fjsp = match problem {
            Problem::Fjsp => FjspParams::defaults_for_machines(m).ok_or_else(|| {
                HarnessError::Parameter(format!(
                    "no default operations-per-job range for {m} machines; pass one explicitly"
                ))
            })?,
            // Placeholder ranges; unused for the job shop.
            Problem::Jssp => FjspParams {
                ops_range: (1, 1),
                pbar_range: (1, 20),
                spread: 0.2,
            },
        };
        Ok(Self {
            problem,
            n,
            m,
            ptime_range: (1, 99),
            fjsp,
        })
    }

    /// One instance from `(seed, stream)`.
    pub fn generate(&self, seed: u64, stream: u64) -> Result<ProblemInstance, HarnessError> {
        // Mix the stream into the seed so every stream is an independent
        // draw of the generator's own stream 0.
        let mixed = crate::rng::stream(seed, stream);
        use rand::Rng;
        let mut mixed = mixed;
        let inst_seed: u64 = mixed.random();
        let inst = match self.problem {
            Problem::Jssp => generate_jssp(
                self.n,
                self.m,
                inst_seed,
                self.ptime_range.0,
                self.ptime_range.1,
            )?,
            Problem::Fjsp => generate_fjsp(self.n, self.m, inst_seed, &self.fjsp)?,
        };
        Ok(inst)
    }
}

/// Which trainer to run, with its configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum AlgorithmConfig {
    Value(RainbowConfig),
    Policy(PGConfig),
}

impl AlgorithmConfig {
    pub fn name(&self) -> String {
        match self {
            AlgorithmConfig::Value(cfg) => cfg.tag(),
            AlgorithmConfig::Policy(cfg) => cfg.algorithm.to_string(),
        }
    }
}

/// A complete training-run specification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub gen: GenConfig,
    pub algorithm: AlgorithmConfig,
    pub encoder: EncoderConfig,
    pub episodes: usize,
    pub validation_period: usize,
    pub validation_size: usize,
    pub seed: u64,
    /// Output directory for the checkpoint, metrics and validation files.
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.episodes == 0 {
            return Err(HarnessError::Parameter("episodes must be >= 1".into()));
        }
        if self.validation_period == 0 {
            return Err(HarnessError::Parameter(
                "validation period must be >= 1".into(),
            ));
        }
        if self.validation_size == 0 {
            return Err(HarnessError::Parameter(
                "validation size must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// One row of the training metrics stream.
#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub episode: usize,
    pub loss: Option<f64>,
    pub epsilon: f64,
    pub validation_makespan: Option<f64>,
    pub seconds: f64,
    /// Present for policy-gradient runs.
    pub algorithm: Option<String>,
}

/// Training result: selected checkpoint plus the full metrics trace.
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<MetricsRow>,
    pub validation: Vec<(usize, f64)>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `episode,loss,epsilon,validation_makespan,seconds` rows; policy-gradient
/// runs append an `algorithm` column.
pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let policy = rows.iter().any(|r| r.algorithm.is_some());
    let mut out = String::from(if policy {
        "episode,loss,epsilon,validation_makespan,seconds,algorithm\n"
    } else {
        "episode,loss,epsilon,validation_makespan,seconds\n"
    });
    for r in rows {
        let _ = write!(
            out,
            "{},{},{},{},{}",
            r.episode,
            fmt_opt(r.loss),
            r.epsilon,
            fmt_opt(r.validation_makespan),
            r.seconds
        );
        if policy {
            let _ = write!(out, ",{}", r.algorithm.clone().unwrap_or_default());
        }
        out.push('\n');
    }
    out
}

pub fn validation_csv(points: &[(usize, f64)]) -> String {
    let mut out = String::from("episode,mean_makespan\n");
    for &(episode, makespan) in points {
        let _ = writeln!(out, "{episode},{makespan}");
    }
    out
}

/// Greedy rollout of `action_of` from reset to terminal; returns the final
/// state (callers read the makespan or the schedule).
fn rollout<F>(instance: Arc<ProblemInstance>, mut action_of: F) -> ScheduleState
where
    F: FnMut(&ScheduleState) -> crate::env::Action,
{
    let mut state = ScheduleState::reset(instance);
    while !state.is_terminal() {
        let a = action_of(&state);
        state.step(a).expect("policy actions are feasible");
    }
    state
}

fn validation_set(cfg: &RunConfig) -> Result<Vec<Arc<ProblemInstance>>, HarnessError> {
    (0..cfg.validation_size)
        .map(|i| {
            cfg.gen
                .generate(cfg.seed, streams::validation_instance(i as u64))
                .map(Arc::new)
        })
        .collect()
}

struct BestTracker {
    best: Option<Checkpoint>,
    out_path: Option<PathBuf>,
}

impl BestTracker {
    fn new(cfg: &RunConfig) -> Result<Self, HarnessError> {
        let out_path = match &cfg.out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
                    path: dir.display().to_string(),
                    source,
                })?;
                Some(dir.join("checkpoint_best.json"))
            }
            None => None,
        };
        Ok(Self {
            best: None,
            out_path,
        })
    }

    fn offer(&mut self, candidate: Checkpoint) -> Result<(), HarnessError> {
        let improved = self
            .best
            .as_ref()
            .is_none_or(|b| candidate.validation_makespan < b.validation_makespan);
        if improved {
            if let Some(path) = &self.out_path {
                candidate.save(path)?;
            }
            self.best = Some(candidate);
        }
        Ok(())
    }

    fn into_best(self) -> Checkpoint {
        self.best.expect("at least one validation ran")
    }
}

fn write_run_files(cfg: &RunConfig, metrics: &[MetricsRow], validation: &[(usize, f64)]) -> Result<(), HarnessError> {
    if let Some(dir) = &cfg.out_dir {
        for (name, contents) in [
            ("metrics.csv", metrics_csv(metrics)),
            ("validation.csv", validation_csv(validation)),
        ] {
            let path = dir.join(name);
            std::fs::write(&path, contents).map_err(|source| HarnessError::Io {
                path: path.display().to_string(),
                source,
            })?;
        }
    }
    Ok(())
}

/// Run one full training loop and return the checkpoint with the lowest
/// mean validation makespan, together with the metrics trace.
///
/// Fresh training instances are generated at the start of every episode.
/// Validation runs after episode 1 (the improvement baseline) and then every
/// `validation_period` episodes, always on the same generated set, with
/// greedy decoding.
pub fn train(cfg: &RunConfig) -> Result<TrainOutput, HarnessError> {
    cfg.validate()?;
    match &cfg.algorithm {
        AlgorithmConfig::Value(rainbow) => train_value(cfg, *rainbow),
        AlgorithmConfig::Policy(pg) => train_policy(cfg, *pg),
    }
}

fn should_validate(episode: usize, period: usize) -> bool {
    episode == 1 || episode % period == 0
}

fn train_value(cfg: &RunConfig, rainbow: RainbowConfig) -> Result<TrainOutput, HarnessError> {
    let val_set = validation_set(cfg)?;
    let mut learner = ValueLearner::new(rainbow, cfg.encoder, cfg.seed);
    let mut tracker = BestTracker::new(cfg)?;
    let mut metrics = Vec::with_capacity(cfg.episodes);
    let mut validation = Vec::new();

    for episode in 1..=cfg.episodes {
        let started = Instant::now();
        learner.set_progress(episode as f64 / cfg.episodes as f64);
        let instance = Arc::new(cfg.gen.generate(cfg.seed, streams::train_instance(episode as u64))?);
        let mut state = ScheduleState::reset(instance);
        let mut losses = Vec::new();
        while !state.is_terminal() {
            let action = learner.select_action(&state, episode);
            let pre = state.clone();
            let reward = state.step(action).expect("selected action is feasible");
            learner.observe(pre, action, reward, state.is_terminal());
            for _ in 0..rainbow.update_every {
                match learner.train_step() {
                    Ok(Some(loss)) => losses.push(loss),
                    Ok(None) => {}
                    Err(e) => {
                        // The best checkpoint so far stays on disk.
                        write_run_files(cfg, &metrics, &validation)?;
                        return Err(HarnessError::Train(e.to_string()));
                    }
                }
            }
        }
        if episode % rainbow.target_period == 0 {
            learner.sync_target();
        }

        let val = if should_validate(episode, cfg.validation_period) {
            let mean = validate_value(&learner, &val_set);
            validation.push((episode, mean));
            tracker.offer(Checkpoint {
                version: CHECKPOINT_VERSION,
                problem: cfg.gen.problem,
                algorithm: rainbow.tag(),
                kind: CheckpointKind::Value { rainbow },
                model: learner.online.clone(),
                episode,
                validation_makespan: mean,
            })?;
            Some(mean)
        } else {
            None
        };

        let mean_loss = (!losses.is_empty())
            .then(|| losses.iter().sum::<f64>() / losses.len() as f64);
        metrics.push(MetricsRow {
            episode,
            loss: mean_loss,
            epsilon: epsilon(&rainbow, episode),
            validation_makespan: val,
            seconds: started.elapsed().as_secs_f64(),
            algorithm: None,
        });
    }

    write_run_files(cfg, &metrics, &validation)?;
    Ok(TrainOutput {
        checkpoint: tracker.into_best(),
        metrics,
        validation,
    })
}

fn validate_value(learner: &ValueLearner, set: &[Arc<ProblemInstance>]) -> f64 {
    let total: f64 = set
        .iter()
        .map(|inst| {
            rollout(inst.clone(), |s| {
                ValueLearner::greedy_action(&learner.online, s, learner.grid())
            })
            .makespan()
        })
        .sum();
    total / set.len() as f64
}

fn train_policy(cfg: &RunConfig, pg: PGConfig) -> Result<TrainOutput, HarnessError> {
    let val_set = validation_set(cfg)?;
    let mut learner = PGLearner::new(pg, cfg.encoder, cfg.seed);
    let mut tracker = BestTracker::new(cfg)?;
    let mut metrics = Vec::with_capacity(cfg.episodes);
    let mut validation = Vec::new();

    for episode in 1..=cfg.episodes {
        let started = Instant::now();
        let instances: Vec<Arc<ProblemInstance>> = (0..pg.parallel)
            .map(|i| {
                let stream = streams::train_instance((episode * pg.parallel + i) as u64);
                cfg.gen.generate(cfg.seed, stream).map(Arc::new)
            })
            .collect::<Result<_, _>>()?;
        let trajs = learner.collect(&instances, cfg.seed, episode as u64);
        let parts = match learner.update(&trajs) {
            Ok(parts) => parts,
            Err(e) => {
                write_run_files(cfg, &metrics, &validation)?;
                return Err(HarnessError::Train(e.to_string()));
            }
        };

        let val = if should_validate(episode, cfg.validation_period) {
            let mean = validate_policy(&learner, &val_set);
            validation.push((episode, mean));
            tracker.offer(Checkpoint {
                version: CHECKPOINT_VERSION,
                problem: cfg.gen.problem,
                algorithm: pg.algorithm.to_string(),
                kind: CheckpointKind::Policy { pg },
                model: learner.model.clone(),
                episode,
                validation_makespan: mean,
            })?;
            Some(mean)
        } else {
            None
        };

        metrics.push(MetricsRow {
            episode,
            loss: Some(parts.total),
            epsilon: 0.0,
            validation_makespan: val,
            seconds: started.elapsed().as_secs_f64(),
            algorithm: Some(pg.algorithm.to_string()),
        });
    }

    write_run_files(cfg, &metrics, &validation)?;
    Ok(TrainOutput {
        checkpoint: tracker.into_best(),
        metrics,
        validation,
    })
}

fn validate_policy(learner: &PGLearner, set: &[Arc<ProblemInstance>]) -> f64 {
    let total: f64 = set
        .iter()
        .map(|inst| {
            rollout(inst.clone(), |s| PGLearner::greedy_action(&learner.model, s)).makespan()
        })
        .sum();
    total / set.len() as f64
}

/// A named instance queued for evaluation.
#[derive(Debug, Clone)]
pub struct EvalInstance {
    pub name: String,
    pub instance: Arc<ProblemInstance>,
}

#[derive(Debug, Clone)]
pub struct EvalRow {
    pub name: String,
    pub makespan: f64,
    pub reference: Option<f64>,
    pub gap_pct: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub mean_makespan: f64,
    pub mean_gap_pct: Option<f64>,
}

impl EvalReport {
    pub fn from_rows(rows: Vec<EvalRow>) -> Self {
        let n = rows.len() as f64;
        let mean_makespan = if rows.is_empty() {
            0.0
        } else {
            rows.iter().map(|r| r.makespan).sum::<f64>() / n
        };
        let gaps: Vec<f64> = rows.iter().filter_map(|r| r.gap_pct).collect();
        let mean_gap_pct = (!gaps.is_empty() && gaps.len() == rows.len())
            .then(|| gaps.iter().sum::<f64>() / n);
        Self {
            rows,
            mean_makespan,
            mean_gap_pct,
        }
    }
}

/// `instance_name,reference_makespan` rows, optional header line.
pub fn parse_reference_csv(text: &str) -> Result<HashMap<String, f64>, HarnessError> {
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let name = parts.next().unwrap_or_default().trim();
        let value = parts.next().map(str::trim).unwrap_or_default();
        match value.parse::<f64>() {
            Ok(v) => {
                out.insert(name.to_string(), v);
            }
            Err(_) if i == 0 => {} // header
            Err(_) => {
                return Err(HarnessError::Parameter(format!(
                    "reference file line {}: `{value}` is not a number",
                    i + 1
                )));
            }
        }
    }
    Ok(out)
}

fn evaluate_with<F>(
    instances: &[EvalInstance],
    refs: Option<&HashMap<String, f64>>,
    mut solve: F,
) -> Result<EvalReport, HarnessError>
where
    F: FnMut(&EvalInstance) -> Result<f64, HarnessError>,
{
    let mut rows = Vec::with_capacity(instances.len());
    for item in instances {
        let started = Instant::now();
        let makespan = solve(item)?;
        let seconds = started.elapsed().as_secs_f64();
        let reference = refs.and_then(|r| r.get(&item.name).copied());
        let gap_pct = match reference {
            Some(r) => Some(gap(makespan, r)?),
            None => None,
        };
        rows.push(EvalRow {
            name: item.name.clone(),
            makespan,
            reference,
            gap_pct,
            seconds,
        });
    }
    Ok(EvalReport::from_rows(rows))
}

/// Greedy decoding per instance; every schedule passes the independent
/// feasibility checker or evaluation aborts.
pub fn evaluate_greedy(
    ckpt: &Checkpoint,
    instances: &[EvalInstance],
    refs: Option<&HashMap<String, f64>>,
) -> Result<EvalReport, HarnessError> {
    evaluate_with(instances, refs, |item| {
        let state = rollout(item.instance.clone(), |s| ckpt.greedy_action(s));
        let rows = state.final_schedule().expect("rollout reached terminal");
        verify::check_schedule(&item.instance, &rows)
            .map_err(HarnessError::InfeasibleSchedule)?;
        Ok(state.makespan())
    })
}

/// Makespan of each forced-first-action greedy rollout, in the order of
/// `feasible_actions` at reset.
pub fn multistart_rollouts(
    ckpt: &Checkpoint,
    instance: &Arc<ProblemInstance>,
) -> Result<Vec<(crate::env::Action, f64)>, HarnessError> {
    let initial = ScheduleState::reset(instance.clone());
    let mut out = Vec::new();
    for first in initial.feasible_actions() {
        let mut state = ScheduleState::reset(instance.clone());
        state.step(first).expect("initial action is feasible");
        while !state.is_terminal() {
            let a = ckpt.greedy_action(&state);
            state.step(a).expect("greedy action is feasible");
        }
        let rows = state.final_schedule().expect("terminal");
        verify::check_schedule(instance, &rows).map_err(HarnessError::InfeasibleSchedule)?;
        out.push((first, state.makespan()));
    }
    Ok(out)
}

/// Multi-start greedy decoding: one copy per initial action, keep the best.
pub fn evaluate_multistart(
    ckpt: &Checkpoint,
    instances: &[EvalInstance],
    refs: Option<&HashMap<String, f64>>,
) -> Result<EvalReport, HarnessError> {
    evaluate_with(instances, refs, |item| {
        let rollouts = multistart_rollouts(ckpt, &item.instance)?;
        Ok(rollouts
            .iter()
            .map(|&(_, makespan)| makespan)
            .fold(f64::INFINITY, f64::min))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy_rl::PGAlgorithm;

    fn quick_cfg(problem: Problem, algorithm: AlgorithmConfig) -> RunConfig {
        RunConfig {
            gen: GenConfig::new(problem, 2, 5).unwrap(),
            algorithm,
            encoder: EncoderConfig {
                dim: 2,
                layers: 1,
                heads: 1,
            },
            episodes: 3,
            validation_period: 2,
            validation_size: 3,
            seed: 99,
            out_dir: None,
        }
    }

    fn small_value_cfg() -> RunConfig {
        let mut rainbow = RainbowConfig::defaults(Problem::Fjsp);
        rainbow.batch = 8;
        quick_cfg(Problem::Fjsp, AlgorithmConfig::Value(rainbow))
    }

    #[test]
    fn generation_is_deterministic_per_stream() {
        let gen = GenConfig::new(Problem::Fjsp, 3, 5).unwrap();
        let a = gen.generate(7, 1).unwrap();
        let b = gen.generate(7, 1).unwrap();
        let c = gen.generate(7, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn one_episode_run_validates_once_and_returns_a_checkpoint() {
        let mut cfg = small_value_cfg();
        cfg.episodes = 1;
        let out = train(&cfg).unwrap();
        assert_eq!(out.validation.len(), 1);
        assert_eq!(out.checkpoint.episode, 1);
        assert_eq!(out.metrics.len(), 1);
    }

    #[test]
    fn value_run_selects_minimum_validation_mean() {
        let mut cfg = small_value_cfg();
        cfg.episodes = 6;
        let out = train(&cfg).unwrap();
        let min = out
            .validation
            .iter()
            .map(|&(_, m)| m)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(out.checkpoint.validation_makespan, min);
        // Cadence: episode 1 baseline plus every second episode.
        let episodes: Vec<usize> = out.validation.iter().map(|&(e, _)| e).collect();
        assert_eq!(episodes, vec![1, 2, 4, 6]);
    }

    #[test]
    fn value_runs_are_deterministic() {
        let cfg = small_value_cfg();
        let a = train(&cfg).unwrap();
        let b = train(&cfg).unwrap();
        assert_eq!(a.validation, b.validation);
        let losses_a: Vec<Option<f64>> = a.metrics.iter().map(|m| m.loss).collect();
        let losses_b: Vec<Option<f64>> = b.metrics.iter().map(|m| m.loss).collect();
        assert_eq!(losses_a, losses_b);
        assert_eq!(a.checkpoint.model.set, b.checkpoint.model.set);
    }

    #[test]
    fn policy_run_trains_and_validates() {
        let mut pg = PGConfig::defaults(PGAlgorithm::Ppo);
        pg.parallel = 2;
        let cfg = quick_cfg(Problem::Fjsp, AlgorithmConfig::Policy(pg));
        let out = train(&cfg).unwrap();
        assert_eq!(out.metrics.len(), 3);
        assert!(out.metrics.iter().all(|m| m.algorithm.as_deref() == Some("ppo")));
        assert!(out.checkpoint.validation_makespan.is_finite());
    }

    #[test]
    fn metrics_csv_schema() {
        let rows = vec![MetricsRow {
            episode: 1,
            loss: Some(2.5),
            epsilon: 1.0,
            validation_makespan: None,
            seconds: 0.5,
            algorithm: None,
        }];
        let csv = metrics_csv(&rows);
        assert_eq!(csv, "episode,loss,epsilon,validation_makespan,seconds\n1,2.5,1,,0.5\n");
        let rows = vec![MetricsRow {
            algorithm: Some("ppo".into()),
            ..rows[0].clone()
        }];
        let csv = metrics_csv(&rows);
        assert!(csv.starts_with("episode,loss,epsilon,validation_makespan,seconds,algorithm\n"));
        assert!(csv.ends_with(",ppo\n"));
    }

    #[test]
    fn evaluation_reports_and_multistart_dominance() {
        let cfg = small_value_cfg();
        let out = train(&cfg).unwrap();
        let instances: Vec<EvalInstance> = (0..5)
            .map(|i| EvalInstance {
                name: format!("gen_{i:03}"),
                instance: Arc::new(
                    cfg.gen.generate(cfg.seed, streams::test_instance(i)).unwrap(),
                ),
            })
            .collect();
        let refs: HashMap<String, f64> = instances
            .iter()
            .map(|e| (e.name.clone(), 40.0))
            .collect();
        let greedy = evaluate_greedy(&out.checkpoint, &instances, Some(&refs)).unwrap();
        let multi = evaluate_multistart(&out.checkpoint, &instances, Some(&refs)).unwrap();
        assert_eq!(greedy.rows.len(), 5);
        for (g, m) in greedy.rows.iter().zip(&multi.rows) {
            assert!(m.makespan <= g.makespan + 1e-9, "multistart dominance");
            let expected = 100.0 * (g.makespan - 40.0) / 40.0;
            assert!((g.gap_pct.unwrap() - expected).abs() < 1e-9);
        }
        // Determinism of greedy evaluation.
        let again = evaluate_greedy(&out.checkpoint, &instances, Some(&refs)).unwrap();
        for (a, b) in greedy.rows.iter().zip(&again.rows) {
            assert_eq!(a.makespan, b.makespan);
        }
        // Copy count equals the size of the initial action set.
        let rollouts = multistart_rollouts(&out.checkpoint, &instances[0].instance).unwrap();
        let initial = ScheduleState::reset(instances[0].instance.clone());
        assert_eq!(rollouts.len(), initial.feasible_actions().len());
    }

    #[test]
    fn single_start_multistart_equals_greedy() {
        // A single-job chain admits exactly one initial action.
        let cfg = small_value_cfg();
        let out = train(&cfg).unwrap();
        let inst = Arc::new(crate::instances::parse_jssp("1 2\n0 3 1 4\n").unwrap());
        let item = vec![EvalInstance {
            name: "chain".into(),
            instance: inst,
        }];
        let greedy = evaluate_greedy(&out.checkpoint, &item, None).unwrap();
        let multi = evaluate_multistart(&out.checkpoint, &item, None).unwrap();
        assert_eq!(greedy.rows[0].makespan, multi.rows[0].makespan);
        assert_eq!(greedy.rows[0].makespan, 7.0);
    }

    #[test]
    fn reference_csv_parsing() {
        let refs = parse_reference_csv(
            "instance_name,reference_makespan\ninst_000,499.72\ninst_001,622.45\n",
        )
        .unwrap();
        assert_eq!(refs.len(), 2);
        assert_eq!(refs["inst_000"], 499.72);
        // No header is fine too.
        let refs = parse_reference_csv("a,1.5\nb,2.5\n").unwrap();
        assert_eq!(refs["b"], 2.5);
        // Garbage in a data row is an error.
        assert!(parse_reference_csv("a,1.5\nb,x\n").is_err());
    }

    #[test]
    fn run_files_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_value_cfg();
        cfg.out_dir = Some(dir.path().to_path_buf());
        let out = train(&cfg).unwrap();
        assert!(dir.path().join("checkpoint_best.json").exists());
        let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(metrics.lines().count(), 1 + out.metrics.len());
        let validation = std::fs::read_to_string(dir.path().join("validation.csv")).unwrap();
        assert_eq!(validation.lines().count(), 1 + out.validation.len());
        let best = Checkpoint::load(&dir.path().join("checkpoint_best.json")).unwrap();
        assert_eq!(best.validation_makespan, out.checkpoint.validation_makespan);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = small_value_cfg();
        cfg.episodes = 0;
        assert!(train(&cfg).is_err());
        assert!(GenConfig::new(Problem::Fjsp, 3, 7).is_err());
    }
}
