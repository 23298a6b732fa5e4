//! The dispatching MDP.
//!
//! A state is a partial schedule. Each step dispatches one feasible
//! operation-machine pair; the operation starts at the later of its machine's
//! available time and its predecessor's completion. The reward is the
//! negative increase of the partial-schedule makespan `C(S(t))`, defined as
//! the maximum over jobs of the actual-or-estimated job completion time, so
//! that episode returns telescope to `C(S(0)) - C_max`.
//!
//! Completion estimates for unscheduled operations follow the precedence
//! recursion only: an unscheduled operation is assumed to start when its
//! predecessor finishes (actually or by estimate) and to take its mean
//! processing time across candidates. Machine contention never enters the
//! estimate; it surfaces through actual start times once dispatched.

use std::fmt::Write as _;
use std::sync::Arc;

use ndarray::Array2;
use thiserror::Error;

use crate::instances::ProblemInstance;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("infeasible action (job {job}, op {op}, machine {machine})")]
    Infeasible { job: usize, op: usize, machine: usize },
    #[error("operation requires a terminal state")]
    NotTerminal,
}

/// One dispatch decision: run operation `op` of `job` on `machine`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Action {
    pub job: usize,
    pub op: usize,
    pub machine: usize,
}

/// A line of the final schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleRow {
    pub job: usize,
    pub op: usize,
    pub machine: usize,
    pub start: f64,
    pub end: f64,
}

/// Raw node and edge features for one state.
///
/// Operation rows (6 columns): scheduled flag, number of connected machines,
/// actual-or-mean processing time, actual-or-estimated start, remaining
/// unscheduled operations in the job, actual-or-estimated job completion.
/// Machine rows (3 columns): available time, number of connected operations,
/// utilization rate. Edges are the remaining disjunctive arcs in
/// (operation, machine) order, each carrying its processing time.
#[derive(Debug, Clone)]
pub struct FeatureTensors {
    pub op_features: Array2<f64>,
    pub machine_features: Array2<f64>,
    pub edges: Vec<(usize, usize)>,
    pub edge_features: Array2<f64>,
}

/// A partial schedule over one instance.
#[derive(Debug, Clone)]
pub struct ScheduleState {
    instance: Arc<ProblemInstance>,
    job_offsets: Vec<usize>,
    scheduled: Vec<bool>,
    assigned_machine: Vec<usize>,
    actual_start: Vec<f64>,
    /// Actual-or-estimated start and completion, kept current for every op.
    est_start: Vec<f64>,
    est_completion: Vec<f64>,
    machine_available: Vec<f64>,
    machine_busy: Vec<f64>,
    machine_degree: Vec<usize>,
    /// Next unscheduled operation index per job (== job length when done).
    frontier: Vec<usize>,
    steps: usize,
    partial_makespan: f64,
}

impl ScheduleState {
    /// Fresh episode state: nothing scheduled, all disjunctive edges present,
    /// completion estimates initialized by the precedence recursion.
    pub fn reset(instance: Arc<ProblemInstance>) -> Self {
        let total = instance.total_ops();
        let n = instance.num_jobs();
        let m = instance.num_machines();
        let mut job_offsets = Vec::with_capacity(n + 1);
        let mut offset = 0;
        for job in instance.jobs() {
            job_offsets.push(offset);
            offset += job.len();
        }
        job_offsets.push(offset);

        let mut machine_degree = vec![0usize; m];
        for job in instance.jobs() {
            for op in job {
                for (k, _) in op.eligible() {
                    machine_degree[k] += 1;
                }
            }
        }

        let mut state = Self {
            instance,
            job_offsets,
            scheduled: vec![false; total],
            assigned_machine: vec![usize::MAX; total],
            actual_start: vec![0.0; total],
            est_start: vec![0.0; total],
            est_completion: vec![0.0; total],
            machine_available: vec![0.0; m],
            machine_busy: vec![0.0; m],
            machine_degree,
            frontier: vec![0; n],
            steps: 0,
            partial_makespan: 0.0,
        };
        for job in 0..n {
            state.repropagate_job(job, 0);
        }
        state.partial_makespan = state.max_job_completion();
        state
    }

    pub fn instance(&self) -> &Arc<ProblemInstance> {
        &self.instance
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn total_ops(&self) -> usize {
        *self.job_offsets.last().unwrap()
    }

    pub fn op_index(&self, job: usize, op: usize) -> usize {
        self.job_offsets[job] + op
    }

    /// Recompute actual-or-estimated start/completion for `job` from
    /// operation `from` onward.
    fn repropagate_job(&mut self, job: usize, from: usize) {
        let ops = self.instance.job(job);
        for j in from..ops.len() {
            let idx = self.job_offsets[job] + j;
            if self.scheduled[idx] {
                // Actual values are already final.
                continue;
            }
            let start = if j == 0 {
                0.0
            } else {
                self.est_completion[idx - 1]
            };
            self.est_start[idx] = start;
            self.est_completion[idx] = start + ops[j].mean_ptime();
        }
    }

    fn max_job_completion(&self) -> f64 {
        (0..self.instance.num_jobs())
            .map(|i| self.est_completion[self.job_offsets[i + 1] - 1])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Makespan of the partial schedule: max actual-or-estimated job
    /// completion. Equals the true makespan once the state is terminal.
    pub fn partial_makespan(&self) -> f64 {
        self.partial_makespan
    }

    pub fn is_terminal(&self) -> bool {
        self.steps == self.total_ops()
    }

    /// All feasible (operation, machine) pairs, sorted by (job, op, machine).
    ///
    /// An operation is assignable when all its job predecessors are
    /// scheduled; any of its candidate machines may be chosen, a busy machine
    /// merely delays the start time.
    pub fn feasible_actions(&self) -> Vec<Action> {
        let mut actions = Vec::new();
        for (job, &next) in self.frontier.iter().enumerate() {
            let ops = self.instance.job(job);
            if next >= ops.len() {
                continue;
            }
            for (machine, _) in ops[next].eligible() {
                actions.push(Action {
                    job,
                    op: next,
                    machine,
                });
            }
        }
        actions
    }

    pub fn is_feasible(&self, action: Action) -> bool {
        action.job < self.instance.num_jobs()
            && action.op < self.instance.job(action.job).len()
            && self.frontier[action.job] == action.op
            && self
                .instance
                .op(action.job, action.op)
                .ptime_on(action.machine)
                .is_some()
    }

    /// Dispatch `action`, returning the reward `C(S(t)) - C(S(t+1))`.
    pub fn step(&mut self, action: Action) -> Result<f64, EnvError> {
        if !self.is_feasible(action) {
            return Err(EnvError::Infeasible {
                job: action.job,
                op: action.op,
                machine: action.machine,
            });
        }
        let idx = self.op_index(action.job, action.op);
        let ptime = f64::from(
            self.instance
                .op(action.job, action.op)
                .ptime_on(action.machine)
                .expect("feasibility checked"),
        );
        let pred_completion = if action.op == 0 {
            0.0
        } else {
            self.est_completion[idx - 1]
        };
        let start = self.machine_available[action.machine].max(pred_completion);

        self.scheduled[idx] = true;
        self.assigned_machine[idx] = action.machine;
        self.actual_start[idx] = start;
        self.est_start[idx] = start;
        self.est_completion[idx] = start + ptime;
        self.machine_available[action.machine] = start + ptime;
        self.machine_busy[action.machine] += ptime;
        for (k, _) in self.instance.op(action.job, action.op).eligible() {
            if k != action.machine {
                self.machine_degree[k] -= 1;
            }
        }
        self.frontier[action.job] += 1;
        self.steps += 1;
        self.repropagate_job(action.job, action.op + 1);

        let new_makespan = self.max_job_completion();
        let reward = self.partial_makespan - new_makespan;
        self.partial_makespan = new_makespan;
        Ok(reward)
    }

    /// Remaining disjunctive degree of one operation: its candidate count
    /// while unscheduled, 1 (the assignment arc) afterwards.
    pub fn op_degree(&self, job: usize, op: usize) -> usize {
        let idx = self.op_index(job, op);
        if self.scheduled[idx] {
            1
        } else {
            self.instance.op(job, op).num_candidates()
        }
    }

    pub fn extract_features(&self) -> FeatureTensors {
        let total = self.total_ops();
        let m = self.instance.num_machines();
        let mut op_features = Array2::zeros((total, 6));
        let mut edges = Vec::new();
        let mut edge_p = Vec::new();

        for job in 0..self.instance.num_jobs() {
            let ops = self.instance.job(job);
            let unscheduled_in_job = ops.len() - self.frontier[job];
            let job_completion = self.est_completion[self.job_offsets[job + 1] - 1];
            for (j, op) in ops.iter().enumerate() {
                let idx = self.op_index(job, j);
                let scheduled = self.scheduled[idx];
                let ptime = if scheduled {
                    f64::from(op.ptime_on(self.assigned_machine[idx]).unwrap())
                } else {
                    op.mean_ptime()
                };
                op_features[(idx, 0)] = f64::from(u8::from(scheduled));
                op_features[(idx, 1)] = self.op_degree(job, j) as f64;
                op_features[(idx, 2)] = ptime;
                op_features[(idx, 3)] = self.est_start[idx];
                op_features[(idx, 4)] = unscheduled_in_job as f64;
                op_features[(idx, 5)] = job_completion;

                if scheduled {
                    let k = self.assigned_machine[idx];
                    edges.push((idx, k));
                    edge_p.push(f64::from(op.ptime_on(k).unwrap()));
                } else {
                    for (k, p) in op.eligible() {
                        edges.push((idx, k));
                        edge_p.push(f64::from(p));
                    }
                }
            }
        }

        let mut machine_features = Array2::zeros((m, 3));
        for k in 0..m {
            machine_features[(k, 0)] = self.machine_available[k];
            machine_features[(k, 1)] = self.machine_degree[k] as f64;
            machine_features[(k, 2)] = if self.partial_makespan > 0.0 {
                self.machine_busy[k] / self.partial_makespan
            } else {
                0.0
            };
        }

        let edge_features =
            Array2::from_shape_vec((edge_p.len(), 1), edge_p).expect("edge count matches");
        FeatureTensors {
            op_features,
            machine_features,
            edges,
            edge_features,
        }
    }

    /// Complete schedule rows in (job, op) order. Requires a terminal state.
    pub fn final_schedule(&self) -> Result<Vec<ScheduleRow>, EnvError> {
        if !self.is_terminal() {
            return Err(EnvError::NotTerminal);
        }
        let mut rows = Vec::with_capacity(self.total_ops());
        for job in 0..self.instance.num_jobs() {
            for op in 0..self.instance.job(job).len() {
                let idx = self.op_index(job, op);
                rows.push(ScheduleRow {
                    job,
                    op,
                    machine: self.assigned_machine[idx],
                    start: self.actual_start[idx],
                    end: self.est_completion[idx],
                });
            }
        }
        Ok(rows)
    }

    /// True makespan; meaningful once terminal.
    pub fn makespan(&self) -> f64 {
        self.partial_makespan
    }
}

/// Schedule export: `job,op,machine,start,end` rows plus a trailing
/// `makespan,<value>` line.
pub fn schedule_to_csv(rows: &[ScheduleRow], makespan: f64) -> String {
    let mut out = String::from("job,op,machine,start,end\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.job, r.op, r.machine, r.start, r.end);
    }
    let _ = writeln!(out, "makespan,{makespan}");
    out
}
