//! Benchmark file formats.
//!
//! Job-shop files use the ORLib layout: an optional block of `#` comment
//! lines, a header `n m`, then one line per job holding `m` pairs
//! `machine_id processing_time` with 0-based machine ids. Flexible files use
//! the Brandimarte layout: header `n m [avg_flex]`, then one line per job:
//! the operation count, followed per operation by the candidate count and
//! that many `machine_id processing_time` pairs, machine ids 1-based.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{InstanceError, OperationSpec, ProblemInstance};

struct Line<'a> {
    number: usize,
    tokens: std::str::SplitWhitespace<'a>,
}

impl Line<'_> {
    fn parse_err(&self, msg: impl Into<String>) -> InstanceError {
        InstanceError::Parse {
            line: self.number,
            msg: msg.into(),
        }
    }

    fn next_usize(&mut self, what: &str) -> Result<usize, InstanceError> {
        let tok = self
            .tokens
            .next()
            .ok_or_else(|| self.parse_err(format!("missing {what}")))?;
        tok.parse()
            .map_err(|_| self.parse_err(format!("invalid {what} `{tok}`")))
    }

    fn next_u32(&mut self, what: &str) -> Result<u32, InstanceError> {
        let tok = self
            .tokens
            .next()
            .ok_or_else(|| self.parse_err(format!("missing {what}")))?;
        tok.parse()
            .map_err(|_| self.parse_err(format!("invalid {what} `{tok}`")))
    }

    fn expect_end(mut self) -> Result<(), InstanceError> {
        match self.tokens.next() {
            Some(tok) => Err(self.parse_err(format!("unexpected trailing token `{tok}`"))),
            None => Ok(()),
        }
    }
}

/// Data lines with their 1-based line numbers; comments and blanks skipped.
fn data_lines(text: &str) -> impl Iterator<Item = Line<'_>> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let trimmed = l.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            None
        } else {
            Some(Line {
                number: i + 1,
                tokens: trimmed.split_whitespace(),
            })
        }
    })
}

fn missing_line(what: &str, after: usize) -> InstanceError {
    InstanceError::Parse {
        line: after,
        msg: format!("missing {what}"),
    }
}

pub fn parse_jssp(text: &str) -> Result<ProblemInstance, InstanceError> {
    let mut lines = data_lines(text);
    let mut header = lines.next().ok_or_else(|| missing_line("header", 1))?;
    let n = header.next_usize("job count")?;
    let m = header.next_usize("machine count")?;
    let header_line = header.number;
    header.expect_end()?;

    let mut jobs = Vec::with_capacity(n);
    let mut last_line = header_line;
    for job_idx in 0..n {
        let mut line = lines
            .next()
            .ok_or_else(|| missing_line(&format!("line for job {job_idx}"), last_line))?;
        last_line = line.number;
        let mut ops = Vec::with_capacity(m);
        for _ in 0..m {
            let machine = line.next_usize("machine id")?;
            if machine >= m {
                return Err(line.parse_err(format!(
                    "machine id {machine} out of range (instance has {m} machines)"
                )));
            }
            let ptime = line.next_u32("processing time")?;
            if ptime == 0 {
                return Err(line.parse_err("processing time must be >= 1"));
            }
            ops.push(OperationSpec::fixed(machine, ptime)?);
        }
        line.expect_end()?;
        jobs.push(ops);
    }
    if let Some(extra) = lines.next() {
        return Err(extra.parse_err("unexpected extra data line"));
    }
    ProblemInstance::new(m, jobs)
}

pub fn parse_fjsp(text: &str) -> Result<ProblemInstance, InstanceError> {
    let mut lines = data_lines(text);
    let mut header = lines.next().ok_or_else(|| missing_line("header", 1))?;
    let n = header.next_usize("job count")?;
    let m = header.next_usize("machine count")?;
    let header_line = header.number;
    // Optional average-flexibility token; some files write it as a float.
    let _ = header.tokens.next();
    header.expect_end()?;

    let mut jobs = Vec::with_capacity(n);
    let mut last_line = header_line;
    for job_idx in 0..n {
        let mut line = lines
            .next()
            .ok_or_else(|| missing_line(&format!("line for job {job_idx}"), last_line))?;
        last_line = line.number;
        let n_ops = line.next_usize("operation count")?;
        if n_ops == 0 {
            return Err(line.parse_err(format!("job {job_idx} has no operations")));
        }
        let mut ops = Vec::with_capacity(n_ops);
        for op_idx in 0..n_ops {
            let k = line.next_usize("candidate count")?;
            if k == 0 || k > m {
                return Err(line.parse_err(format!(
                    "candidate count {k} out of range for operation {op_idx}"
                )));
            }
            let mut eligible = BTreeMap::new();
            for _ in 0..k {
                let machine = line.next_usize("machine id")?;
                if machine == 0 || machine > m {
                    return Err(line.parse_err(format!(
                        "machine id {machine} out of range (ids are 1-based, instance has {m})"
                    )));
                }
                let ptime = line.next_u32("processing time")?;
                if ptime == 0 {
                    return Err(line.parse_err("processing time must be >= 1"));
                }
                if eligible.insert(machine - 1, ptime).is_some() {
                    return Err(
                        line.parse_err(format!("duplicate machine id {machine} in candidate set"))
                    );
                }
            }
            ops.push(OperationSpec::new(eligible)?);
        }
        line.expect_end()?;
        jobs.push(ops);
    }
    if let Some(extra) = lines.next() {
        return Err(extra.parse_err("unexpected extra data line"));
    }
    ProblemInstance::new(m, jobs)
}

/// Canonical ORLib text. Fails on flexible instances.
pub fn serialize_jssp(inst: &ProblemInstance) -> Result<String, InstanceError> {
    if !inst.is_jssp() {
        return Err(InstanceError::NotJssp);
    }
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", inst.num_jobs(), inst.num_machines());
    for job in inst.jobs() {
        let line: Vec<String> = job
            .iter()
            .map(|op| {
                let (machine, p) = op.eligible().next().expect("non-empty eligible set");
                format!("{machine} {p}")
            })
            .collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    Ok(out)
}

/// Canonical Brandimarte text with 1-based machine ids.
pub fn serialize_fjsp(inst: &ProblemInstance) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", inst.num_jobs(), inst.num_machines());
    for job in inst.jobs() {
        let mut parts = vec![job.len().to_string()];
        for op in job {
            parts.push(op.num_candidates().to_string());
            for (machine, p) in op.eligible() {
                parts.push((machine + 1).to_string());
                parts.push(p.to_string());
            }
        }
        let _ = writeln!(out, "{}", parts.join(" "));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{generate_fjsp, generate_jssp, FjspParams};
    use proptest::prelude::*;

    #[test]
    fn jssp_minimal() {
        let inst = parse_jssp("1 1\n0 5\n").unwrap();
        assert_eq!(inst.num_jobs(), 1);
        assert_eq!(inst.num_machines(), 1);
        assert_eq!(inst.op(0, 0).ptime_on(0), Some(5));
        assert!(inst.is_jssp());
    }

    #[test]
    fn jssp_two_by_two_oracle_instance() {
        let inst = parse_jssp("2 2\n0 3 1 2\n1 2 0 4\n").unwrap();
        assert_eq!(inst.op(0, 0).ptime_on(0), Some(3));
        assert_eq!(inst.op(0, 1).ptime_on(1), Some(2));
        assert_eq!(inst.op(1, 0).ptime_on(1), Some(2));
        assert_eq!(inst.op(1, 1).ptime_on(0), Some(4));
    }

    #[test]
    fn jssp_comments_and_canonical_roundtrip() {
        let text = "# generated fixture\n\n2 2\n0 3 1 2\n1 2 0 4\n";
        let canonical = "2 2\n0 3 1 2\n1 2 0 4\n";
        let inst = parse_jssp(text).unwrap();
        assert_eq!(serialize_jssp(&inst).unwrap(), canonical);
    }

    #[test]
    fn jssp_parse_errors_carry_line_numbers() {
        match parse_jssp("2 2\n0 3 1 2\n1 2 9 4\n") {
            Err(InstanceError::Parse { line, msg }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("machine id 9"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        match parse_jssp("1 x\n0 5\n") {
            Err(InstanceError::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
        match parse_jssp("2 1\n0 5\n") {
            Err(InstanceError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(parse_jssp("1 1\n0 5 7\n").is_err());
        assert!(parse_jssp("1 1\n0 0\n").is_err());
    }

    #[test]
    fn fjsp_minimal() {
        let inst = parse_fjsp("1 1 1\n1 1 1 7\n").unwrap();
        assert_eq!(inst.total_ops(), 1);
        assert_eq!(inst.op(0, 0).ptime_on(0), Some(7));
    }

    #[test]
    fn fjsp_flexible_candidate_sets() {
        // Two jobs; the first op of job 0 can run on machines 1 and 2.
        let inst = parse_fjsp("2 2\n1 2 1 4 2 6\n2 1 1 3 1 2 5\n").unwrap();
        assert_eq!(inst.op(0, 0).num_candidates(), 2);
        assert_eq!(inst.op(0, 0).ptime_on(0), Some(4));
        assert_eq!(inst.op(0, 0).ptime_on(1), Some(6));
        assert_eq!(inst.op(1, 1).ptime_on(1), Some(5));
        assert!(!inst.is_jssp());
    }

    #[test]
    fn fjsp_parse_errors() {
        // Candidate count says 2 but only one pair given.
        match parse_fjsp("1 2\n1 2 1 4\n") {
            Err(InstanceError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        // Machine id 0 invalid in 1-based format.
        assert!(parse_fjsp("1 2\n1 1 0 4\n").is_err());
        // Machine id above m.
        assert!(parse_fjsp("1 2\n1 1 3 4\n").is_err());
        // Duplicate machine in a candidate set.
        assert!(parse_fjsp("1 2\n1 2 1 4 1 5\n").is_err());
    }

    #[test]
    fn fjsp_serializer_emits_one_based_ids() {
        let inst = parse_fjsp("1 2\n1 1 2 9\n").unwrap();
        let text = serialize_fjsp(&inst);
        assert_eq!(text, "1 2\n1 1 2 9\n");
    }

    #[test]
    fn serialize_jssp_rejects_flexible() {
        let inst = parse_fjsp("1 2\n1 2 1 4 2 6\n").unwrap();
        assert!(matches!(serialize_jssp(&inst), Err(InstanceError::NotJssp)));
    }

    #[test]
    fn generated_instances_roundtrip_bit_exactly() {
        for seed in 0..100 {
            let inst = generate_jssp(4, 3, seed, 1, 99).unwrap();
            let text = serialize_jssp(&inst).unwrap();
            let back = parse_jssp(&text).unwrap();
            assert_eq!(back, inst);
            assert_eq!(serialize_jssp(&back).unwrap(), text);

            let params = FjspParams::defaults_for_machines(5).unwrap();
            let inst = generate_fjsp(4, 5, seed, &params).unwrap();
            let text = serialize_fjsp(&inst);
            let back = parse_fjsp(&text).unwrap();
            assert_eq!(back, inst);
            assert_eq!(serialize_fjsp(&back), text);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn prop_fjsp_roundtrip(n in 1usize..6, m in 1usize..7, seed in 0u64..1_000_000) {
            let params = FjspParams { ops_range: (1, 4), pbar_range: (1, 20), spread: 0.2 };
            let inst = generate_fjsp(n, m, seed, &params).unwrap();
            let back = parse_fjsp(&serialize_fjsp(&inst)).unwrap();
            prop_assert_eq!(back, inst);
        }

        #[test]
        fn prop_jssp_roundtrip(n in 1usize..6, m in 1usize..7, seed in 0u64..1_000_000) {
            let inst = generate_jssp(n, m, seed, 1, 99).unwrap();
            let back = parse_jssp(&serialize_jssp(&inst).unwrap()).unwrap();
            prop_assert_eq!(back, inst);
        }
    }
}
