//! Schedule feasibility checking, written directly against the schedule
//! rows so it stays independent of how the environment builds them.

use crate::env::ScheduleRow;
use crate::instances::ProblemInstance;

/// Check completeness, machine eligibility, processing times, job
/// precedence and machine exclusivity of a complete schedule.
pub fn check_schedule(inst: &ProblemInstance, rows: &[ScheduleRow]) -> Result<(), String> {
    if rows.len() != inst.total_ops() {
        return Err(format!(
            "schedule has {} rows but the instance has {} operations",
            rows.len(),
            inst.total_ops()
        ));
    }
    let mut seen = vec![false; inst.total_ops()];
    let mut flat = 0usize;
    let mut op_offset = vec![0usize; inst.num_jobs()];
    for (job, ops) in inst.jobs().iter().enumerate() {
        op_offset[job] = flat;
        flat += ops.len();
    }
    for r in rows {
        if r.job >= inst.num_jobs() || r.op >= inst.job(r.job).len() {
            return Err(format!("row references unknown operation ({}, {})", r.job, r.op));
        }
        let idx = op_offset[r.job] + r.op;
        if seen[idx] {
            return Err(format!("operation ({}, {}) scheduled twice", r.job, r.op));
        }
        seen[idx] = true;
        let Some(p) = inst.op(r.job, r.op).ptime_on(r.machine) else {
            return Err(format!(
                "operation ({}, {}) ran on ineligible machine {}",
                r.job, r.op, r.machine
            ));
        };
        if (r.end - r.start - f64::from(p)).abs() > 1e-9 {
            return Err(format!(
                "operation ({}, {}) has duration {} instead of {p}",
                r.job,
                r.op,
                r.end - r.start
            ));
        }
        if r.start < 0.0 {
            return Err(format!("operation ({}, {}) starts before time 0", r.job, r.op));
        }
    }

    // Job precedence: each operation starts after its predecessor ends.
    let mut by_op: Vec<&ScheduleRow> = rows.iter().collect();
    by_op.sort_by_key(|r| (r.job, r.op));
    for pair in by_op.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if a.job == b.job && b.start < a.end - 1e-9 {
            return Err(format!(
                "precedence violation: ({}, {}) starts at {} before ({}, {}) ends at {}",
                b.job, b.op, b.start, a.job, a.op, a.end
            ));
        }
    }

    // Machine exclusivity: no two operations overlap on one machine.
    let mut by_machine: Vec<&ScheduleRow> = rows.iter().collect();
    by_machine.sort_by(|a, b| {
        (a.machine, a.start)
            .partial_cmp(&(b.machine, b.start))
            .unwrap()
    });
    for pair in by_machine.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if a.machine == b.machine && b.start < a.end - 1e-9 {
            return Err(format!(
                "overlap on machine {}: ({}, {}) [{}, {}] and ({}, {}) [{}, {}]",
                a.machine, a.job, a.op, a.start, a.end, b.job, b.op, b.start, b.end
            ));
        }
    }
    Ok(())
}
