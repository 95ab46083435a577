//! Regional consistency test, pooled global estimate, and confidence
//! intervals.

use crate::error::{Error, Result};
use crate::numerics::mat::{Cholesky, Mat};
use crate::numerics::special::{norm_quantile_level, reg_upper_gamma};
use crate::survival::{ArmOrContrast, EstimatorTag, RmstEstimate};
use crate::weights::Weighting;

/// Wald chi-square test of equal treatment effects across regions.
#[derive(Clone, Debug)]
pub struct ConsistencyTestResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub estimator: EstimatorTag,
    pub weighting: Weighting,
    /// The `(M-1) x M` contrast matrix used.
    pub contrast: Mat,
}

fn validate_family(estimates: &[RmstEstimate], operation: &str) -> Result<()> {
    if estimates.len() < 2 {
        return Err(Error::TooFewEstimates {
            got: estimates.len(),
        });
    }
    let first = &estimates[0];
    for e in estimates {
        if e.estimator != first.estimator || e.t_star != first.t_star {
            return Err(Error::MixedEstimates {
                operation: operation.to_string(),
            });
        }
    }
    Ok(())
}

fn check_variances(estimates: &[RmstEstimate]) -> Result<()> {
    for e in estimates {
        if !(e.variance > 0.0) {
            return Err(Error::DegenerateVariance {
                region: e.region.unwrap_or(0),
                variance: e.variance,
            });
        }
    }
    Ok(())
}

/// First-region-referenced contrast matrix: row k is `e_{k+1} - e_1`.
fn contrast_matrix(m: usize) -> Mat {
    let mut e = Mat::zeros(m - 1, m);
    for k in 0..m - 1 {
        e[(k, 0)] = -1.0;
        e[(k, k + 1)] = 1.0;
    }
    e
}

/// Tests `H0: Δ₁ = … = Δ_M` with the Wald statistic
/// `(EΔ)ᵀ (E V Eᵀ)⁻¹ (EΔ)`, which under H0 is chi-square with `M-1`
/// degrees of freedom. Regions are treated as independent (diagonal V).
pub fn consistency_test(estimates: &[RmstEstimate]) -> Result<ConsistencyTestResult> {
    validate_family(estimates, "consistency_test")?;
    check_variances(estimates)?;
    let m = estimates.len();
    let e = contrast_matrix(m);
    let deltas: Vec<f64> = estimates.iter().map(|r| r.estimate).collect();
    let ed = e.matvec(&deltas);
    // E V Eᵀ for diagonal V: v₁ everywhere plus diag(v₂..v_M)
    let mut evet = Mat::zeros(m - 1, m - 1);
    for r in 0..m - 1 {
        for c in 0..m - 1 {
            evet[(r, c)] = estimates[0].variance;
        }
        evet[(r, r)] += estimates[r + 1].variance;
    }
    let chol = Cholesky::new(&evet).ok_or(Error::DegenerateVariance {
        region: estimates[0].region.unwrap_or(0),
        variance: estimates[0].variance,
    })?;
    let solved = chol.solve(&ed);
    let statistic: f64 = ed.iter().zip(&solved).map(|(a, b)| a * b).sum();
    let statistic = statistic.max(0.0);
    let df = m - 1;
    let p_value = chi_square_upper_tail(statistic, df);
    Ok(ConsistencyTestResult {
        statistic,
        df,
        p_value,
        estimator: estimates[0].estimator,
        weighting: estimates[0].weighting,
        contrast: e,
    })
}

/// Inverse-variance pooled estimate across regions, with variance
/// `1 / Σ (1/Var_r)`.
pub fn global_estimate(estimates: &[RmstEstimate]) -> Result<RmstEstimate> {
    if estimates.is_empty() {
        return Err(Error::TooFewEstimates { got: 0 });
    }
    if estimates.len() == 1 {
        return Ok(estimates[0].clone());
    }
    validate_family(estimates, "global_estimate")?;
    check_variances(estimates)?;
    let mut num = 0.0;
    let mut denom = 0.0;
    for e in estimates {
        num += e.estimate / e.variance;
        denom += 1.0 / e.variance;
    }
    Ok(RmstEstimate {
        estimate: num / denom,
        variance: 1.0 / denom,
        t_star: estimates[0].t_star,
        region: None,
        contrast: ArmOrContrast::Difference,
        estimator: estimates[0].estimator,
        weighting: estimates[0].weighting,
    })
}

/// Normal-theory confidence interval `estimate ± z sqrt(variance)`.
pub fn confidence_interval(estimate: &RmstEstimate, level: f64) -> (f64, f64) {
    assert!(level > 0.0 && level < 1.0);
    assert!(estimate.variance >= 0.0);
    if estimate.variance == 0.0 {
        return (estimate.estimate, estimate.estimate);
    }
    let half = norm_quantile_level(level) * estimate.variance.sqrt();
    (estimate.estimate - half, estimate.estimate + half)
}

/// Upper-tail probability of a chi-square variate: Q(df/2, x/2).
pub fn chi_square_upper_tail(x: f64, df: usize) -> f64 {
    assert!(df > 0, "degrees of freedom must be positive");
    if x <= 0.0 {
        return 1.0;
    }
    reg_upper_gamma(df as f64 / 2.0, x / 2.0)
}
