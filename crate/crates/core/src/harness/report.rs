//! CSV emission: evaluation tables, run summaries, validation plot data and
//! the pairwise significance matrix.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::stats::{wilcoxon, WilcoxonOutcome};
use super::{EvalReport, HarnessError};

/// Everything one training/evaluation run contributes to a report.
#[derive(Debug, Clone, Default)]
pub struct RunArtifacts {
    pub algorithm: String,
    /// Validation curve: (episode, mean makespan).
    pub validation: Vec<(usize, f64)>,
    /// Evaluation reports keyed by instance-set name.
    pub eval_sets: Vec<(String, EvalReport)>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_file(out_dir: &Path, name: &str, contents: &str) -> Result<PathBuf, HarnessError> {
    let path = out_dir.join(name);
    std::fs::write(&path, contents).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(path)
}

/// Per-instance rows of one evaluation report.
pub fn eval_csv(report: &EvalReport) -> String {
    let mut out = String::from("instance,makespan,reference,gap_pct,seconds\n");
    for row in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            row.name,
            row.makespan,
            fmt_opt(row.reference),
            fmt_opt(row.gap_pct),
            row.seconds
        );
    }
    out
}

/// Write `eval_<set>.csv` per evaluation set, `summary.csv`,
/// `validation_curves.csv` and `significance.csv` under `out_dir`.
/// Empty input produces header-only files.
pub fn emit_report(
    runs: &[RunArtifacts],
    level: f64,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(out_dir).map_err(|source| HarnessError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    let mut files = Vec::new();

    let mut summary = String::from("algorithm,set,instances,mean_makespan,mean_gap_pct,mean_seconds\n");
    for run in runs {
        for (set, report) in &run.eval_sets {
            let name = if runs.len() == 1 {
                format!("eval_{set}.csv")
            } else {
                format!("eval_{}_{set}.csv", run.algorithm)
            };
            files.push(write_file(out_dir, &name, &eval_csv(report))?);
            let mean_seconds = if report.rows.is_empty() {
                0.0
            } else {
                report.rows.iter().map(|r| r.seconds).sum::<f64>() / report.rows.len() as f64
            };
            let _ = writeln!(
                summary,
                "{},{},{},{},{},{}",
                run.algorithm,
                set,
                report.rows.len(),
                report.mean_makespan,
                fmt_opt(report.mean_gap_pct),
                mean_seconds
            );
        }
    }
    files.push(write_file(out_dir, "summary.csv", &summary)?);

    let mut curves = String::from("algorithm,episode,mean_makespan\n");
    for run in runs {
        for &(episode, makespan) in &run.validation {
            let _ = writeln!(curves, "{},{episode},{makespan}", run.algorithm);
        }
    }
    files.push(write_file(out_dir, "validation_curves.csv", &curves)?);

    // Pairwise significance on per-instance makespans, paired by instance
    // name within each shared set name. Both orders are emitted, so the
    // matrix is symmetric; the diagonal is omitted.
    let mut sig = String::from("alg_a,alg_b,set,p_value,significant\n");
    for (i, run_a) in runs.iter().enumerate() {
        for (j, run_b) in runs.iter().enumerate() {
            if i == j {
                continue;
            }
            for (set, report_a) in &run_a.eval_sets {
                let Some((_, report_b)) =
                    run_b.eval_sets.iter().find(|(s, _)| s == set)
                else {
                    continue;
                };
                let by_name: HashMap<&str, f64> = report_b
                    .rows
                    .iter()
                    .map(|r| (r.name.as_str(), r.makespan))
                    .collect();
                let mut a = Vec::new();
                let mut b = Vec::new();
                for row in &report_a.rows {
                    if let Some(&mb) = by_name.get(row.name.as_str()) {
                        a.push(row.makespan);
                        b.push(mb);
                    }
                }
                let outcome = wilcoxon(&a, &b, level)?;
                let (p, s) = match outcome {
                    WilcoxonOutcome::Indeterminate => (String::new(), false),
                    WilcoxonOutcome::Result { p_value, significant, .. } => {
                        (p_value.to_string(), significant)
                    }
                };
                let _ = writeln!(sig, "{},{},{set},{p},{s}", run_a.algorithm, run_b.algorithm);
            }
        }
    }
    files.push(write_file(out_dir, "significance.csv", &sig)?);
    Ok(files)
}
