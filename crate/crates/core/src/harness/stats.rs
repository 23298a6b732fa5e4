//! Gap computation and the Wilcoxon signed-rank test.

use statrs::distribution::{ContinuousCDF, Normal};

use super::HarnessError;

/// Percentage excess of `makespan` over `reference`; negative when the
/// model beats the reference.
pub fn gap(makespan: f64, reference: f64) -> Result<f64, HarnessError> {
    if reference <= 0.0 {
        return Err(HarnessError::Parameter(format!(
            "reference makespan must be positive, got {reference}"
        )));
    }
    Ok(100.0 * (makespan - reference) / reference)
}

/// Outcome of a paired two-sided signed-rank test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WilcoxonOutcome {
    /// Too few nonzero differences to decide anything.
    Indeterminate,
    Result {
        /// `min(W+, W-)` over signed ranks.
        statistic: f64,
        p_value: f64,
        significant: bool,
    },
}

impl WilcoxonOutcome {
    pub fn is_significant(&self) -> bool {
        matches!(self, WilcoxonOutcome::Result { significant: true, .. })
    }

    pub fn p_value(&self) -> Option<f64> {
        match self {
            WilcoxonOutcome::Indeterminate => None,
            WilcoxonOutcome::Result { p_value, .. } => Some(*p_value),
        }
    }
}

/// Two-sided Wilcoxon signed-rank test on paired samples. Zero differences
/// are dropped; tied magnitudes receive average ranks. With 25 or fewer
/// nonzero pairs the exact conditional permutation distribution is used,
/// above that a normal approximation with continuity and tie correction.
pub fn wilcoxon(a: &[f64], b: &[f64], level: f64) -> Result<WilcoxonOutcome, HarnessError> {
    if a.len() != b.len() {
        return Err(HarnessError::Parameter(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    let n = diffs.len();
    if n < 6 {
        // No two-sided p below 0.05 is attainable.
        return Ok(WilcoxonOutcome::Indeterminate);
    }

    // Average ranks of |d|, doubled so ties stay integral.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| diffs[i].abs().partial_cmp(&diffs[j].abs()).unwrap());
    let mut ranks2 = vec![0u64; n];
    let mut tie_sizes = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && diffs[order[j + 1]].abs() == diffs[order[i]].abs() {
            j += 1;
        }
        // Positions i..=j share the average rank (i+1 + ... + j+1) / (j-i+1).
        let avg2 = (i + 1 + j + 1) as u64;
        for &k in &order[i..=j] {
            ranks2[k] = avg2;
        }
        tie_sizes.push((j - i + 1) as f64);
        i = j + 1;
    }

    let w_plus2: u64 = diffs
        .iter()
        .zip(&ranks2)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, &r)| r)
        .sum();
    let total2 = (n as u64) * (n as u64 + 1);
    let w_minus2 = total2 - w_plus2;
    let w2 = w_plus2.min(w_minus2);
    let statistic = w2 as f64 / 2.0;

    let p_value = if n <= 25 {
        exact_p(&ranks2, w2)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let tie_term: f64 = tie_sizes.iter().map(|&t| t * t * t - t).sum();
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
        let w = w2 as f64 / 2.0;
        // Continuity correction toward the mean.
        let z = (w - mean + 0.5) / var.sqrt();
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        (2.0 * normal.cdf(z)).min(1.0)
    };

    Ok(WilcoxonOutcome::Result {
        statistic,
        p_value,
        significant: p_value < level,
    })
}

/// Exact two-sided p-value: enumerate the null distribution of `W+` over all
/// sign assignments of the observed (possibly tied) ranks via dynamic
/// programming on doubled-rank sums.
fn exact_p(ranks2: &[u64], w2: u64) -> f64 {
    let total: u64 = ranks2.iter().sum();
    let mut counts = vec![0.0f64; total as usize + 1];
    counts[0] = 1.0;
    let mut reachable = 0usize;
    for &r in ranks2 {
        reachable += r as usize;
        for s in (r as usize..=reachable).rev() {
            counts[s] += counts[s - r as usize];
        }
    }
    let assignments = 2.0f64.powi(ranks2.len() as i32);
    let tail: f64 = counts[..=(w2 as usize).min(total as usize)].iter().sum();
    (2.0 * tail / assignments).min(1.0)
}
