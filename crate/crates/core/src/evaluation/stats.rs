use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// p-values are floored here before taking logs.
pub const P_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FisherResult {
    /// `-2 Σ ln p_i`.
    pub statistic: f64,
    /// Upper tail of chi-square with `2k` degrees of freedom.
    pub p_value: f64,
    pub k: usize,
}

/// Fisher's combination of `k` independent p-values.
pub fn fisher_combined(p: &[f64]) -> Result<FisherResult> {
    if p.is_empty() {
        return Err(Error::Value("no p-values to combine".into()));
    }
    if let Some(bad) = p.iter().find(|&&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::Value(format!("p-value {bad} outside [0, 1]")));
    }
    let statistic = -2.0 * p.iter().map(|&v| v.max(P_FLOOR).ln()).sum::<f64>() + 0.0;
    Ok(FisherResult { statistic, p_value: chi2_even_survival(statistic, p.len()), k: p.len() })
}

/// `P(X > x)` for chi-square with `2k` degrees of freedom:
/// `exp(-x/2) Σ_{i<k} (x/2)^i / i!`.
pub fn chi2_even_survival(x: f64, k: usize) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for i in 1..k {
        term *= half / i as f64;
        sum += term;
    }
    (sum * (-half).exp()).min(1.0)
}

/// Sample mean and standard deviation (`n - 1` denominator; 0 for one value).
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, var.sqrt()))
}

/// Two-sided Welch t-test p-value for a difference in means. Two samples
/// with no spread give 1 when their means agree and 0 otherwise.
pub fn welch_p_value(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Value(format!("Welch test needs two values per group, got {} and {}", a.len(), b.len())));
    }
    let (ma, sa) = mean_std(a).expect("non-empty");
    let (mb, sb) = mean_std(b).expect("non-empty");
    let (va, vb) = (sa * sa / a.len() as f64, sb * sb / b.len() as f64);
    let se2 = va + vb;
    if se2 == 0.0 {
        return Ok(if ma == mb { 1.0 } else { 0.0 });
    }
    let t = (ma - mb) / se2.sqrt();
    let dof = se2 * se2 / (va * va / (a.len() as f64 - 1.0) + vb * vb / (b.len() as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, dof).map_err(|e| Error::Value(format!("Welch distribution: {e}")))?;
    Ok((2.0 * dist.sf(t.abs())).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fisher_examples() {
        let ones = fisher_combined(&[1.0; 6]).unwrap();
        assert_eq!((ones.statistic, ones.p_value), (0.0, 1.0));
        assert!(ones.statistic.is_sign_positive());
        let f = fisher_combined(&[0.05; 6]).unwrap();
        assert!((f.statistic - 35.9488).abs() < 1e-3);
        assert!((f.statistic + 12.0 * 0.05f64.ln()).abs() < 1e-12);
        for p in [0.9, 0.3, 0.05, 1e-6] {
            assert!((fisher_combined(&[p]).unwrap().p_value - p).abs() < 1e-9);
        }
        assert!(fisher_combined(&[0.0, 0.5]).unwrap().statistic.is_finite());
        assert!(matches!(fisher_combined(&[1.2]), Err(Error::Value(_))));
        assert!(matches!(fisher_combined(&[-0.1]), Err(Error::Value(_))));
        assert!(matches!(fisher_combined(&[]), Err(Error::Value(_))));
    }

    #[test]
    fn chi2_survival_against_statrs() {
        use statrs::distribution::ChiSquared;
        for k in 1..10 {
            let dist = ChiSquared::new(2.0 * k as f64).unwrap();
            for x in [0.1, 1.0, 5.0, 12.5, 40.0] {
                assert!((chi2_even_survival(x, k) - dist.sf(x)).abs() < 1e-10, "k={k} x={x}");
            }
        }
    }

    #[test]
    fn welch_reference_values() {
        // Textbook case: equal sizes reduce the statistic to Student's form.
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [2.0, 4.0, 6.0, 8.0, 10.0];
        // t = -3 / sqrt(2.5/5 + 10/5) = -1.8974, dof = 6.25/(0.0625 + 1) = 5.8824.
        let t = -3.0 / 2.5f64.sqrt();
        let dof = 6.25 / (0.25 / 4.0 + 4.0 / 4.0);
        let want = 2.0 * StudentsT::new(0.0, 1.0, dof).unwrap().cdf(t);
        assert!((welch_p_value(&a, &b).unwrap() - want).abs() < 1e-12);
        assert_eq!(welch_p_value(&a, &a).unwrap(), 1.0);
        assert_eq!(welch_p_value(&[1.0, 1.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(welch_p_value(&[1.0, 1.0], &[2.0, 2.0]).unwrap(), 0.0);
        assert!(welch_p_value(&[1.0], &a).is_err());
        let (m, s) = mean_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]).unwrap();
        assert_eq!(m, 5.0);
        assert!((s - (32.0f64 / 7.0).sqrt()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn fisher_permutation_invariant(mut p in prop::collection::vec(1e-6f64..1.0, 1..8)) {
            let a = fisher_combined(&p).unwrap();
            p.reverse();
            let b = fisher_combined(&p).unwrap();
            prop_assert!((a.statistic - b.statistic).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&a.p_value));
        }
    }
}
