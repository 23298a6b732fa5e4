//! Problem data model and random instance generation.
//!
//! A [`ProblemInstance`] is a list of jobs, each an ordered chain of
//! operations; every operation carries a non-empty map from eligible machine
//! to processing time. The pure job shop is the special case where every map
//! has exactly one entry. Machine indices are 0-based everywhere inside the
//! crate; file formats that use 1-based ids are converted at the boundary.

mod io;

pub use io::{parse_fjsp, parse_jssp, serialize_fjsp, serialize_jssp};

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::rng;

/// Which problem family an instance, generator or run targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Problem {
    Jssp,
    Fjsp,
}

impl std::fmt::Display for Problem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Problem::Jssp => write!(f, "jssp"),
            Problem::Fjsp => write!(f, "fjsp"),
        }
    }
}

impl std::str::FromStr for Problem {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jssp" => Ok(Problem::Jssp),
            "fjsp" => Ok(Problem::Fjsp),
            other => Err(format!("unknown problem `{other}` (expected jssp or fjsp)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("instance is not a pure job shop (an operation has multiple eligible machines)")]
    NotJssp,
}

/// One operation: eligible machines and per-machine processing times.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OperationSpec {
    eligible: BTreeMap<usize, u32>,
}

impl OperationSpec {
    pub fn new(eligible: BTreeMap<usize, u32>) -> Result<Self, InstanceError> {
        if eligible.is_empty() {
            return Err(InstanceError::Parameter(
                "operation has no eligible machine".into(),
            ));
        }
        if eligible.values().any(|&p| p == 0) {
            return Err(InstanceError::Parameter(
                "processing times must be >= 1".into(),
            ));
        }
        Ok(Self { eligible })
    }

    /// Single (machine, time) pair for job-shop operations.
    pub fn fixed(machine: usize, ptime: u32) -> Result<Self, InstanceError> {
        Self::new(BTreeMap::from([(machine, ptime)]))
    }

    /// Eligible machines in ascending machine order.
    pub fn eligible(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.eligible.iter().map(|(&m, &p)| (m, p))
    }

    pub fn num_candidates(&self) -> usize {
        self.eligible.len()
    }

    pub fn ptime_on(&self, machine: usize) -> Option<u32> {
        self.eligible.get(&machine).copied()
    }

    /// Average processing time across all candidate machines.
    pub fn mean_ptime(&self) -> f64 {
        let sum: f64 = self.eligible.values().map(|&p| f64::from(p)).sum();
        sum / self.eligible.len() as f64
    }
}

/// A JSSP/FJSP instance: `m` machines and `n` jobs of ordered operations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProblemInstance {
    num_machines: usize,
    jobs: Vec<Vec<OperationSpec>>,
}

impl ProblemInstance {
    pub fn new(num_machines: usize, jobs: Vec<Vec<OperationSpec>>) -> Result<Self, InstanceError> {
        if num_machines == 0 {
            return Err(InstanceError::Parameter("need at least one machine".into()));
        }
        if jobs.is_empty() {
            return Err(InstanceError::Parameter("need at least one job".into()));
        }
        for (i, job) in jobs.iter().enumerate() {
            if job.is_empty() {
                return Err(InstanceError::Parameter(format!(
                    "job {i} has no operations"
                )));
            }
            for op in job {
                if let Some((&machine, _)) = op.eligible.last_key_value() {
                    if machine >= num_machines {
                        return Err(InstanceError::Parameter(format!(
                            "job {i} references machine {machine} but instance has {num_machines}"
                        )));
                    }
                }
            }
        }
        Ok(Self { num_machines, jobs })
    }

    pub fn num_jobs(&self) -> usize {
        self.jobs.len()
    }

    pub fn num_machines(&self) -> usize {
        self.num_machines
    }

    pub fn jobs(&self) -> &[Vec<OperationSpec>] {
        &self.jobs
    }

    pub fn job(&self, i: usize) -> &[OperationSpec] {
        &self.jobs[i]
    }

    pub fn op(&self, job: usize, op: usize) -> &OperationSpec {
        &self.jobs[job][op]
    }

    pub fn total_ops(&self) -> usize {
        self.jobs.iter().map(Vec::len).sum()
    }

    /// True iff every operation has exactly one eligible machine.
    pub fn is_jssp(&self) -> bool {
        self.jobs
            .iter()
            .flatten()
            .all(|op| op.eligible.len() == 1)
    }
}

/// Random job-shop instance: each job visits every machine exactly once in a
/// random order, with processing times uniform in `[ptime_lo, ptime_hi]`.
pub fn generate_jssp(
    n: usize,
    m: usize,
    seed: u64,
    ptime_lo: u32,
    ptime_hi: u32,
) -> Result<ProblemInstance, InstanceError> {
    if n == 0 || m == 0 {
        return Err(InstanceError::Parameter("n and m must be >= 1".into()));
    }
    if ptime_lo == 0 || ptime_lo > ptime_hi {
        return Err(InstanceError::Parameter(format!(
            "invalid processing-time range [{ptime_lo}, {ptime_hi}]"
        )));
    }
    let mut rng = rng::stream(seed, 0);
    let mut jobs = Vec::with_capacity(n);
    for _ in 0..n {
        let mut order: Vec<usize> = (0..m).collect();
        order.shuffle(&mut rng);
        let mut ops = Vec::with_capacity(m);
        for &machine in &order {
            let p = rng.random_range(ptime_lo..=ptime_hi);
            ops.push(OperationSpec::fixed(machine, p)?);
        }
        jobs.push(ops);
    }
    ProblemInstance::new(m, jobs)
}

/// Flexible-job-shop generation parameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FjspParams {
    /// Inclusive range for the number of operations per job.
    pub ops_range: (usize, usize),
    /// Inclusive range the per-operation mean processing time is drawn from.
    pub pbar_range: (u32, u32),
    /// Half-width of the per-machine time band around the mean (default 0.2).
    pub spread: f64,
}

impl FjspParams {
    /// Operation-count ranges defined for 5, 6 and 10 machines; any other
    /// machine count requires an explicit range.
    pub fn defaults_for_machines(m: usize) -> Option<Self> {
        let ops_range = match m {
            5 => (4, 6),
            6 => (5, 7),
            10 => (8, 12),
            _ => return None,
        };
        Some(Self {
            ops_range,
            pbar_range: (1, 20),
            spread: 0.2,
        })
    }
}

/// Random flexible instance: per job a uniform operation count, per operation
/// a uniform candidate-machine subset, a uniform integer mean time `pbar`,
/// and per-machine times uniform in `[(1-spread)*pbar, (1+spread)*pbar]`
/// rounded to the nearest integer with a floor of 1.
pub fn generate_fjsp(
    n: usize,
    m: usize,
    seed: u64,
    params: &FjspParams,
) -> Result<ProblemInstance, InstanceError> {
    if n == 0 || m == 0 {
        return Err(InstanceError::Parameter("n and m must be >= 1".into()));
    }
    let (ops_lo, ops_hi) = params.ops_range;
    if ops_lo == 0 || ops_lo > ops_hi {
        return Err(InstanceError::Parameter(format!(
            "invalid operations-per-job range [{ops_lo}, {ops_hi}]"
        )));
    }
    let (pbar_lo, pbar_hi) = params.pbar_range;
    if pbar_lo == 0 || pbar_lo > pbar_hi {
        return Err(InstanceError::Parameter(format!(
            "invalid mean-time range [{pbar_lo}, {pbar_hi}]"
        )));
    }
    if !(0.0..1.0).contains(&params.spread) {
        return Err(InstanceError::Parameter(format!(
            "spread {} outside [0, 1)",
            params.spread
        )));
    }
    let mut rng = rng::stream(seed, 0);
    let mut jobs = Vec::with_capacity(n);
    for _ in 0..n {
        let n_ops = rng.random_range(ops_lo..=ops_hi);
        let mut ops = Vec::with_capacity(n_ops);
        for _ in 0..n_ops {
            let k = rng.random_range(1..=m);
            let candidates = sample_subset(&mut rng, m, k);
            let pbar = f64::from(rng.random_range(pbar_lo..=pbar_hi));
            let lo = (1.0 - params.spread) * pbar;
            let hi = (1.0 + params.spread) * pbar;
            let mut eligible = BTreeMap::new();
            for machine in candidates {
                let p = rng.random_range(lo..=hi).round().max(1.0) as u32;
                eligible.insert(machine, p);
            }
            ops.push(OperationSpec::new(eligible)?);
        }
        jobs.push(ops);
    }
    ProblemInstance::new(m, jobs)
}

/// Uniform `k`-subset of `0..m`, returned in ascending order.
fn sample_subset<R: Rng>(rng: &mut R, m: usize, k: usize) -> Vec<usize> {
    let mut picked = rand::seq::index::sample(rng, m, k).into_vec();
    picked.sort_unstable();
    picked
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jssp_degenerate_size() {
        let inst = generate_jssp(1, 1, 42, 1, 99).unwrap();
        assert_eq!(inst.num_jobs(), 1);
        assert_eq!(inst.job(0).len(), 1);
        let (machine, p) = inst.op(0, 0).eligible().next().unwrap();
        assert_eq!(machine, 0);
        assert!((1..=99).contains(&p));
        assert!(inst.is_jssp());
    }

    #[test]
    fn jssp_machine_sequence_is_permutation() {
        for seed in 0..20 {
            let inst = generate_jssp(3, 3, seed, 1, 99).unwrap();
            for job in inst.jobs() {
                let mut machines: Vec<usize> =
                    job.iter().map(|op| op.eligible().next().unwrap().0).collect();
                machines.sort_unstable();
                assert_eq!(machines, vec![0, 1, 2]);
            }
        }
    }

    #[test]
    fn jssp_ptime_distribution() {
        // Monte-Carlo check on the uniform [1, 99] draw: mean within 3 sigma.
        let mut sum = 0.0;
        let mut count = 0usize;
        let mut min = u32::MAX;
        let mut max = 0u32;
        for seed in 0..278 {
            let inst = generate_jssp(6, 6, seed, 1, 99).unwrap();
            for job in inst.jobs() {
                for op in job {
                    let (_, p) = op.eligible().next().unwrap();
                    sum += f64::from(p);
                    count += 1;
                    min = min.min(p);
                    max = max.max(p);
                }
            }
        }
        assert!(count >= 10_000);
        let mean = sum / count as f64;
        // Var of U{1..99} = (99^2 - 1) / 12.
        let sigma = ((99.0f64 * 99.0 - 1.0) / 12.0).sqrt() / (count as f64).sqrt();
        assert!((mean - 50.0).abs() < 3.0 * sigma, "mean {mean}");
        assert!(min >= 1);
        assert!(max <= 99);
    }

    #[test]
    fn fjsp_degenerate_size() {
        let params = FjspParams {
            ops_range: (1, 1),
            pbar_range: (1, 20),
            spread: 0.2,
        };
        let inst = generate_fjsp(1, 1, 9, &params).unwrap();
        assert_eq!(inst.total_ops(), 1);
        let (machine, p) = inst.op(0, 0).eligible().next().unwrap();
        assert_eq!(machine, 0);
        assert!((1..=24).contains(&p));
    }

    #[test]
    fn fjsp_ranges_match_generation_contract() {
        let params = FjspParams::defaults_for_machines(5).unwrap();
        for seed in 0..20 {
            let inst = generate_fjsp(10, 5, seed, &params).unwrap();
            for job in inst.jobs() {
                assert!((4..=6).contains(&job.len()));
                for op in job {
                    assert!((1..=5).contains(&op.num_candidates()));
                }
            }
        }
    }

    #[test]
    fn fjsp_ptime_band_around_mean() {
        // spread 0.2 and pbar in [1, 20]: every time lies in the rounded band
        // [max(1, round(0.8 pbar)), round(1.2 pbar)]. Checked over >10k draws
        // via the per-op min/max bound implied by pbar <= 20.
        let params = FjspParams {
            ops_range: (4, 6),
            pbar_range: (10, 10),
            spread: 0.2,
        };
        let mut seen = 0usize;
        for seed in 0..300 {
            let inst = generate_fjsp(10, 5, seed, &params).unwrap();
            for job in inst.jobs() {
                for op in job {
                    for (_, p) in op.eligible() {
                        assert!((8..=12).contains(&p), "p={p} outside [8, 12]");
                        seen += 1;
                    }
                }
            }
        }
        assert!(seen >= 10_000);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_jssp(6, 6, 123, 1, 99).unwrap();
        let b = generate_jssp(6, 6, 123, 1, 99).unwrap();
        assert_eq!(a, b);
        let params = FjspParams::defaults_for_machines(10).unwrap();
        let c = generate_fjsp(10, 10, 123, &params).unwrap();
        let d = generate_fjsp(10, 10, 123, &params).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn parameter_errors() {
        assert!(generate_jssp(0, 3, 1, 1, 99).is_err());
        assert!(generate_jssp(3, 3, 1, 5, 4).is_err());
        assert!(generate_jssp(3, 3, 1, 0, 4).is_err());
        let bad = FjspParams {
            ops_range: (6, 4),
            pbar_range: (1, 20),
            spread: 0.2,
        };
        assert!(generate_fjsp(3, 3, 1, &bad).is_err());
        assert!(FjspParams::defaults_for_machines(7).is_none());
    }

    #[test]
    fn operation_spec_invariants() {
        assert!(OperationSpec::new(BTreeMap::new()).is_err());
        assert!(OperationSpec::fixed(0, 0).is_err());
        let jobs = vec![vec![OperationSpec::fixed(5, 3).unwrap()]];
        assert!(ProblemInstance::new(3, jobs).is_err());
    }
}
