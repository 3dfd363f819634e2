/// One-sided exact sign test: probability of at least `wins` successes out
/// of `n` fair coin flips.
pub fn sign_test_p_value(wins: usize, n: usize) -> f64 {
    if wins > n {
        return 0.0;
    }
    let mut log_choose = 0.0;
    let mut total = 0.0;
    for k in 0..=n {
        if k > 0 {
            log_choose += ((n - k + 1) as f64).ln() - (k as f64).ln();
        }
        if k >= wins {
            total += (log_choose - n as f64 * std::f64::consts::LN_2).exp();
        }
    }
    total.min(1.0)
}

/// Paired comparison of a candidate against a reference, lower is better.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedComparison {
    pub mean_candidate: f64,
    pub mean_reference: f64,
    /// `1 - mean_candidate / mean_reference`.
    pub reduction: f64,
    pub wins: usize,
    pub n: usize,
    pub p_value: f64,
}

pub fn paired_comparison(candidate: &[f64], reference: &[f64]) -> PairedComparison {
    assert_eq!(candidate.len(), reference.len(), "paired samples must have equal length");
    let n = candidate.len();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let (mc, mr) = (mean(candidate), mean(reference));
    let wins = candidate.iter().zip(reference).filter(|(c, r)| c < r).count();
    PairedComparison {
        mean_candidate: mc,
        mean_reference: mr,
        reduction: 1.0 - mc / mr,
        wins,
        n,
        p_value: sign_test_p_value(wins, n),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_test_values() {
        assert!((sign_test_p_value(10, 10) - 1.0 / 1024.0).abs() < 1e-15);
        assert!((sign_test_p_value(9, 10) - 11.0 / 1024.0).abs() < 1e-15);
        assert!((sign_test_p_value(0, 10) - 1.0).abs() < 1e-12);
        assert!((sign_test_p_value(8, 10) - 56.0 / 1024.0).abs() < 1e-15);
    }
}
