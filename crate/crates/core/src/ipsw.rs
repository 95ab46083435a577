//! Inverse-probability-of-sampling weights and inverse-propensity factors.
//!
//! Two routes produce the region-to-target sampling weights γ:
//!
//! - **known score** (simulation mode): γᵢ ∝ 1/ρ_r(xᵢ) with ρ_r given in
//!   parametric form;
//! - **estimated region membership** (data mode): a multinomial logistic
//!   model of region on covariates among enrolled subjects gives
//!   P(R = r | x, enrolled), and γᵢ ∝ (n_r/N) / P̂(R = r | xᵢ), which
//!   standardizes each region to the pooled trial population.
//!
//! Only weight ratios within a region matter downstream, so every set is
//! normalized to sum to one per region.

use crate::data::{Dataset, RegionPanel};
use crate::error::{Error, Result};
use crate::numerics::mat::{first_dependent_column, solve_spd, Mat};
use crate::weights::{WeightKind, WeightSet};

/// Parametric or fitted model for the trial-participation sampling score.
#[derive(Clone, Debug)]
pub enum SamplingScoreModel {
    /// `log ρ_r(x) = η_{r0} + η_{r1} x₁ + … + η_{rp} x_p`, capped at 1.
    KnownLogLinear { eta: Vec<Vec<f64>> },
    /// `logit ρ_r(x) = η*_{r0} + η*_{r1}·x₁x₂ + η*_{r2}·exp(x₂/10)`;
    /// requires exactly two covariates.
    KnownLogisticNonlinear { eta: Vec<Vec<f64>> },
    /// Multinomial logistic region-membership model fitted on enrolled
    /// subjects.
    EstimatedMembership(MembershipModel),
}

impl SamplingScoreModel {
    fn known_coefficients(&self, region_id: u32) -> Result<&[f64]> {
        let table = match self {
            SamplingScoreModel::KnownLogLinear { eta }
            | SamplingScoreModel::KnownLogisticNonlinear { eta } => eta,
            SamplingScoreModel::EstimatedMembership(_) => {
                return Err(Error::Config(
                    "known-score weights need a parametric sampling model".into(),
                ))
            }
        };
        table
            .get((region_id - 1) as usize)
            .map(|v| v.as_slice())
            .ok_or(Error::MissingRegionCoefficients { region: region_id })
    }

    /// Sampling score ρ_r(x) for a known parametric kind.
    pub fn score(&self, region_id: u32, x: &[f64]) -> Result<f64> {
        match self {
            SamplingScoreModel::KnownLogLinear { .. } => {
                let eta = self.known_coefficients(region_id)?;
                let lp = eta[0] + eta[1..].iter().zip(x).map(|(c, v)| c * v).sum::<f64>();
                Ok(lp.exp().min(1.0))
            }
            SamplingScoreModel::KnownLogisticNonlinear { .. } => {
                if x.len() < 2 {
                    return Err(Error::ScoreModelArity {
                        kind: "logistic-nonlinear".into(),
                        needed: 2,
                        got: x.len(),
                    });
                }
                let eta = self.known_coefficients(region_id)?;
                let x_star = [x[0] * x[1], (x[1] / 10.0).exp()];
                let t = eta[0] + eta[1] * x_star[0] + eta[2] * x_star[1];
                Ok(1.0 / (1.0 + (-t).exp()))
            }
            SamplingScoreModel::EstimatedMembership(_) => Err(Error::Config(
                "estimated membership model has no per-region sampling score".into(),
            )),
        }
    }
}

/// Sampling weights from a known score: γᵢ ∝ 1/ρ_r(xᵢ), normalized.
pub fn ipsw_from_known_score(panel: &RegionPanel, model: &SamplingScoreModel) -> Result<WeightSet> {
    let mut raw = Vec::with_capacity(panel.n());
    for (i, rec) in panel.records().iter().enumerate() {
        let rho = model.score(panel.region_id, &rec.covariates)?;
        if rho < 1e-300 {
            return Err(Error::ScorePositivity {
                region: panel.region_id,
                subject: i,
            });
        }
        raw.push(1.0 / rho);
    }
    Ok(WeightSet::normalized(
        panel.region_id,
        WeightKind::IpswKnown,
        raw,
    ))
}

/// Fitted multinomial logistic model of region membership given
/// covariates, with region M as the reference class.
#[derive(Clone, Debug)]
pub struct MembershipModel {
    /// `(M-1) x (p+1)` coefficients, row r for region r+1 vs region M;
    /// column 0 is the intercept.
    pub coef: Mat,
    pub n_regions: usize,
    /// True when the separation fallback ridge was applied.
    pub ridged: bool,
}

impl MembershipModel {
    /// Membership probabilities (P(R=1|x), …, P(R=M|x)); sums to 1.
    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        let m = self.n_regions;
        let mut lp = vec![0.0; m];
        for r in 0..m - 1 {
            let row = self.coef.row(r);
            lp[r] = row[0] + row[1..].iter().zip(x).map(|(c, v)| c * v).sum::<f64>();
        }
        let max = lp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        let mut probs: Vec<f64> = lp
            .iter()
            .map(|v| {
                let e = (v - max).exp();
                total += e;
                e
            })
            .collect();
        for p in probs.iter_mut() {
            *p /= total;
        }
        probs
    }
}

/// A fitted membership model plus any fitting warnings.
#[derive(Clone, Debug)]
pub struct MembershipFit {
    pub model: MembershipModel,
    pub warnings: Vec<String>,
}

const SEPARATION_BOUND: f64 = 30.0;
const MEMBERSHIP_MAX_ITER: usize = 100;

fn multinomial_log_likelihood(
    rows: &[(Vec<f64>, usize)],
    theta: &[f64],
    m: usize,
    p1: usize,
    ridge: f64,
) -> f64 {
    let mut ll = 0.0;
    for (x, class) in rows {
        let mut lp = vec![0.0; m];
        for r in 0..m - 1 {
            lp[r] = theta[r * p1..(r + 1) * p1]
                .iter()
                .zip(x)
                .map(|(c, v)| c * v)
                .sum();
        }
        let max = lp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + lp.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        ll += lp[*class] - lse;
    }
    ll - 0.5 * ridge * theta.iter().map(|t| t * t).sum::<f64>()
}

fn fit_multinomial(
    rows: &[(Vec<f64>, usize)],
    m: usize,
    p1: usize,
    ridge: f64,
) -> Result<Vec<f64>> {
    let dim = (m - 1) * p1;
    let mut theta = vec![0.0; dim];
    let mut ll = multinomial_log_likelihood(rows, &theta, m, p1, ridge);
    let scale = rows.len() as f64;

    for _ in 0..MEMBERSHIP_MAX_ITER {
        // score and negated Hessian of the (penalized) log-likelihood
        let mut score = vec![0.0; dim];
        let mut neg_hess = Mat::zeros(dim, dim);
        for (x, class) in rows {
            let mut lp = vec![0.0; m];
            for r in 0..m - 1 {
                lp[r] = theta[r * p1..(r + 1) * p1]
                    .iter()
                    .zip(x)
                    .map(|(c, v)| c * v)
                    .sum();
            }
            let max = lp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut tot = 0.0;
            let probs: Vec<f64> = lp
                .iter()
                .map(|v| {
                    let e = (v - max).exp();
                    tot += e;
                    e
                })
                .collect();
            let probs: Vec<f64> = probs.iter().map(|e| e / tot).collect();
            for r in 0..m - 1 {
                let resid = (if *class == r { 1.0 } else { 0.0 }) - probs[r];
                for (j, xv) in x.iter().enumerate() {
                    score[r * p1 + j] += resid * xv;
                }
                for s in 0..m - 1 {
                    let w = probs[r] * ((if r == s { 1.0 } else { 0.0 }) - probs[s]);
                    if w == 0.0 {
                        continue;
                    }
                    for j in 0..p1 {
                        for k in 0..p1 {
                            neg_hess[(r * p1 + j, s * p1 + k)] += w * x[j] * x[k];
                        }
                    }
                }
            }
        }
        if ridge > 0.0 {
            for (s, t) in score.iter_mut().zip(&theta) {
                *s -= ridge * t;
            }
            neg_hess.add_diagonal(ridge);
        }
        let grad_norm = score.iter().fold(0.0f64, |a, s| a.max(s.abs()));
        if grad_norm <= 1e-8 * scale.max(1.0) {
            return Ok(theta);
        }
        let mut step_hess = neg_hess;
        let delta = match solve_spd(&step_hess, &score) {
            Ok(d) => d,
            Err(_) => {
                step_hess.add_diagonal(1e-10 * step_hess.trace() / dim as f64 + 1e-12);
                solve_spd(&step_hess, &score)?
            }
        };
        // Newton ascent with step halving
        let mut step = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let trial: Vec<f64> = theta
                .iter()
                .zip(&delta)
                .map(|(t, d)| t + step * d)
                .collect();
            let trial_ll = multinomial_log_likelihood(rows, &trial, m, p1, ridge);
            if trial_ll >= ll - 1e-12 {
                theta = trial;
                ll = trial_ll;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            return Ok(theta);
        }
        if ridge == 0.0 {
            let norm = theta.iter().fold(0.0f64, |a, t| a.max(t.abs()));
            if norm > SEPARATION_BOUND {
                return Err(Error::MembershipNonConvergence {
                    max_iter: MEMBERSHIP_MAX_ITER,
                });
            }
        }
    }
    Err(Error::MembershipNonConvergence {
        max_iter: MEMBERSHIP_MAX_ITER,
    })
}

/// Fits the multinomial logistic region-membership model
/// P(R = r | x, enrolled) by maximum likelihood.
///
/// Diverging coefficients (complete or quasi-separation) trigger a refit
/// with a small ridge penalty (1e-4) and a warning rather than an error,
/// since the membership probabilities stay usable.
pub fn fit_region_membership(dataset: &Dataset) -> Result<MembershipFit> {
    let m = dataset.n_regions();
    if m < 2 {
        return Err(Error::TooFewRegions {
            needed: 2,
            found: m,
        });
    }
    let p = dataset.covariate_count();
    let p1 = p + 1;

    // rank check on the pooled [1, X] design, naming the offender
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); p1];
    for rec in dataset.all_records() {
        columns[0].push(1.0);
        for j in 0..p {
            columns[j + 1].push(rec.covariates[j]);
        }
    }
    if let Some(j) = first_dependent_column(&columns, 1e-10) {
        let column = if j == 0 {
            "(intercept)".to_string()
        } else {
            dataset.covariate_names[j - 1].clone()
        };
        return Err(Error::RankDeficient { column });
    }

    let rows: Vec<(Vec<f64>, usize)> = dataset
        .panels
        .iter()
        .flat_map(|panel| {
            let class = (panel.region_id - 1) as usize;
            panel.records().iter().map(move |rec| {
                let mut x = Vec::with_capacity(p1);
                x.push(1.0);
                x.extend_from_slice(&rec.covariates);
                (x, class)
            })
        })
        .collect();

    let mut warnings = Vec::new();
    let (theta, ridged) = match fit_multinomial(&rows, m, p1, 0.0) {
        Ok(t) => (t, false),
        Err(Error::MembershipNonConvergence { .. }) => {
            warnings.push(
                "separation detected in region-membership model; refit with ridge 1e-4".into(),
            );
            (fit_multinomial(&rows, m, p1, 1e-4)?, true)
        }
        Err(e) => return Err(e),
    };

    let mut coef = Mat::zeros(m - 1, p1);
    for r in 0..m - 1 {
        for j in 0..p1 {
            coef[(r, j)] = theta[r * p1 + j];
        }
    }
    Ok(MembershipFit {
        model: MembershipModel {
            coef,
            n_regions: m,
            ridged,
        },
        warnings,
    })
}

/// Mixture-target sampling weights and overlap warnings.
#[derive(Clone, Debug)]
pub struct MixtureIpsw {
    pub sets: Vec<WeightSet>,
    pub warnings: Vec<String>,
}

/// Sampling weights that standardize every region to the pooled trial
/// population: γᵢ ∝ (n_r/N) / P̂(R = r | xᵢ, enrolled).
pub fn ipsw_mixture_target(dataset: &Dataset, membership: &MembershipModel) -> Result<MixtureIpsw> {
    let total: usize = dataset.panels.iter().map(|p| p.n()).sum();
    let mut sets = Vec::with_capacity(dataset.n_regions());
    let mut warnings = Vec::new();
    for panel in &dataset.panels {
        let share = panel.n() as f64 / total as f64;
        let r_idx = (panel.region_id - 1) as usize;
        let mut raw = Vec::with_capacity(panel.n());
        let mut low: Vec<usize> = Vec::new();
        for (i, rec) in panel.records().iter().enumerate() {
            let prob = membership.probabilities(&rec.covariates)[r_idx];
            if prob < 1e-6 {
                low.push(i);
            }
            raw.push(share / prob.max(1e-300));
        }
        if !low.is_empty() {
            warnings.push(format!(
                "region {} has membership probability < 1e-6 for subjects {:?}; covariate overlap with the target is nearly violated",
                panel.region_id, low
            ));
        }
        sets.push(WeightSet::normalized(
            panel.region_id,
            WeightKind::IpswEstimated,
            raw,
        ));
    }
    Ok(MixtureIpsw { sets, warnings })
}

/// Per-subject inverse treatment-propensity factor at the subject's own
/// arm: `1/π` if treated, `1/(1-π)` if control.
pub fn inverse_propensity_factors(panel: &RegionPanel) -> Vec<f64> {
    panel
        .records()
        .iter()
        .zip(panel.propensity())
        .map(|(rec, &pi)| {
            if rec.treatment == 1 {
                1.0 / pi
            } else {
                1.0 / (1.0 - pi)
            }
        })
        .collect()
}
