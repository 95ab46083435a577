//! IPCW RMST regression and the weighted G-formula estimator.
//!
//! The outcome model regresses the truncated time `Y = min(U, t*)` on
//! `[1, Z, g(X), Z·g(X)]` under inverse-probability-of-censoring weights,
//! so only subjects whose truncated time is fully observed contribute.
//! The G-formula estimator then standardizes the fitted arm surfaces over
//! a weighted covariate distribution; its variance comes from the Delta
//! method around the coefficient sandwich, with the censoring curve
//! treated as fixed.

use crate::data::{evaluate_g, GSpec, RegionPanel};
use crate::error::{Error, Result};
use crate::numerics::mat::{first_dependent_column, sandwich, Cholesky, Mat};
use crate::survival::{censoring_survival, ipc_weights, ArmOrContrast, EstimatorTag, RmstEstimate};
use crate::weights::{WeightSet, Weighting};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Link {
    Identity,
    Log,
}

impl Link {
    fn inverse(&self, eta: f64) -> f64 {
        match self {
            Link::Identity => eta,
            Link::Log => eta.exp(),
        }
    }
}

/// A fitted outcome model for one region.
#[derive(Clone, Debug)]
pub struct RmstRegressionFit {
    pub link: Link,
    /// `[β₀, β₁, β₂ (len L), β₃ (len L)]`.
    pub beta: Vec<f64>,
    /// Sandwich covariance of `beta`, `(2L+2) x (2L+2)`.
    pub covariance: Mat,
    pub g_spec: GSpec,
    pub t_star: f64,
}

impl RmstRegressionFit {
    fn dim(&self) -> usize {
        self.beta.len()
    }

    fn l(&self) -> usize {
        self.g_spec.len()
    }

    /// Linear predictor for the given arm at covariate functions `g`.
    fn eta(&self, g: &[f64], arm: u8) -> f64 {
        let l = self.l();
        let mut eta = self.beta[0];
        if arm == 1 {
            eta += self.beta[1];
        }
        for (j, &gj) in g.iter().enumerate() {
            eta += self.beta[2 + j] * gj;
            if arm == 1 {
                eta += self.beta[2 + l + j] * gj;
            }
        }
        eta
    }

    /// Model RMST `m_z(x)` for arm `z` at covariates `x`.
    pub fn predict_arm(&self, x: &[f64], arm: u8) -> Result<f64> {
        let g = evaluate_g(&self.g_spec, x)?;
        Ok(self.link.inverse(self.eta(&g, arm)))
    }
}

fn design_row(g: &[f64], z: u8, out: &mut Vec<f64>) {
    out.clear();
    out.push(1.0);
    out.push(z as f64);
    out.extend_from_slice(g);
    let zf = z as f64;
    out.extend(g.iter().map(|v| zf * v));
}

fn design_labels(spec: &GSpec) -> Vec<String> {
    let mut labels = vec!["(intercept)".to_string(), "treatment".to_string()];
    labels.extend(spec.labels.iter().cloned());
    labels.extend(spec.labels.iter().map(|l| format!("treatment:{l}")));
    labels
}

fn check_rank(rows: &[Vec<f64>], weights: &[f64], spec: &GSpec) -> Result<()> {
    let dim = rows[0].len();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); dim];
    for (row, &w) in rows.iter().zip(weights) {
        if w <= 0.0 {
            continue;
        }
        for (j, &v) in row.iter().enumerate() {
            columns[j].push(v);
        }
    }
    if let Some(j) = first_dependent_column(&columns, 1e-10) {
        return Err(Error::RankDeficient {
            column: design_labels(spec)[j].clone(),
        });
    }
    Ok(())
}

fn gram_solve(rows: &[Vec<f64>], weights: &[f64], y: &[f64], spec: &GSpec) -> Result<Vec<f64>> {
    let dim = rows[0].len();
    let mut gram = Mat::zeros(dim, dim);
    let mut rhs = vec![0.0; dim];
    for ((row, &w), &yi) in rows.iter().zip(weights).zip(y) {
        if w == 0.0 {
            continue;
        }
        gram.add_outer(row, w);
        for (r, &v) in rhs.iter_mut().zip(row) {
            *r += w * yi * v;
        }
    }
    match Cholesky::new(&gram) {
        Some(chol) => Ok(chol.solve(&rhs)),
        None => Err(Error::RankDeficient {
            column: first_dependent_column(
                &(0..dim)
                    .map(|j| rows.iter().map(|r| r[j]).collect())
                    .collect::<Vec<Vec<f64>>>(),
                1e-8,
            )
            .map(|j| design_labels(spec)[j].clone())
            .unwrap_or_else(|| "(design)".to_string()),
        }),
    }
}

const LOG_LINK_MAX_ITER: usize = 100;

/// Fits the IPCW RMST regression with caller-supplied censoring weights.
pub fn fit_ipcw_rmst_regression_with_weights(
    panel: &RegionPanel,
    g_spec: &GSpec,
    t_star: f64,
    link: Link,
    ipc_w: &[f64],
) -> Result<RmstRegressionFit> {
    assert_eq!(ipc_w.len(), panel.n());
    g_spec.validate(panel.covariate_count())?;
    let n = panel.n();
    let mut rows = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut row_buf = Vec::new();
    for rec in panel.records() {
        let g = evaluate_g(g_spec, &rec.covariates)?;
        design_row(&g, rec.treatment, &mut row_buf);
        rows.push(row_buf.clone());
        y.push(rec.time.min(t_star));
    }
    check_rank(&rows, ipc_w, g_spec)?;

    let beta = match link {
        Link::Identity => gram_solve(&rows, ipc_w, &y, g_spec)?,
        Link::Log => fit_log_link(&rows, ipc_w, &y, g_spec, t_star)?,
    };

    // sandwich pieces at the solution
    let dim = rows[0].len();
    let mut a = Mat::zeros(dim, dim);
    let mut b = Mat::zeros(dim, dim);
    for ((row, &w), &yi) in rows.iter().zip(ipc_w).zip(&y) {
        if w == 0.0 {
            continue;
        }
        let eta: f64 = row.iter().zip(&beta).map(|(d, c)| d * c).sum();
        let mu = link.inverse(eta);
        let dmu = match link {
            Link::Identity => 1.0,
            Link::Log => mu,
        };
        let resid = yi - mu;
        a.add_outer(row, w * dmu);
        b.add_outer(row, w * w * resid * resid);
    }
    let covariance = sandwich(&a, &b).map_err(|_| Error::RankDeficient {
        column: "(design)".to_string(),
    })?;

    Ok(RmstRegressionFit {
        link,
        beta,
        covariance,
        g_spec: g_spec.clone(),
        t_star,
    })
}

/// Fits the IPCW RMST regression, deriving the censoring weights from the
/// panel's own censoring-survival curve.
pub fn fit_ipcw_rmst_regression(
    panel: &RegionPanel,
    g_spec: &GSpec,
    t_star: f64,
    link: Link,
) -> Result<RmstRegressionFit> {
    let g = censoring_survival(panel);
    let w = ipc_weights(panel, &g, t_star)?;
    fit_ipcw_rmst_regression_with_weights(panel, g_spec, t_star, link, &w)
}

fn fit_log_link(
    rows: &[Vec<f64>],
    w: &[f64],
    y: &[f64],
    spec: &GSpec,
    t_star: f64,
) -> Result<Vec<f64>> {
    let dim = rows[0].len();
    // start from WLS on log(y) clamped away from zero; if that fails to
    // produce finite values, fall back to an intercept at log(mean y)
    let floor = 1e-8 * t_star.max(1.0);
    let log_y: Vec<f64> = y.iter().map(|&v| v.max(floor).ln()).collect();
    let mut beta = match gram_solve(rows, w, &log_y, spec) {
        Ok(b) if b.iter().all(|v| v.is_finite()) => b,
        _ => {
            let (mut sw, mut swy) = (0.0, 0.0);
            for (&wi, &yi) in w.iter().zip(y) {
                sw += wi;
                swy += wi * yi;
            }
            let mut b = vec![0.0; dim];
            b[0] = (swy / sw).max(floor).ln();
            b
        }
    };

    let score_norm = |beta: &[f64]| -> (Vec<f64>, f64) {
        let mut s = vec![0.0; dim];
        for ((row, &wi), &yi) in rows.iter().zip(w).zip(y) {
            if wi == 0.0 {
                continue;
            }
            let eta: f64 = row.iter().zip(beta).map(|(d, c)| d * c).sum();
            let resid = yi - eta.exp();
            for (sj, &dj) in s.iter_mut().zip(row) {
                *sj += wi * resid * dj;
            }
        }
        let norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        (s, norm)
    };

    let (mut score, mut norm) = score_norm(&beta);
    let n_scale: f64 = w.iter().sum::<f64>().max(1.0);
    for _ in 0..LOG_LINK_MAX_ITER {
        if norm <= 1e-10 * n_scale {
            return Ok(beta);
        }
        let mut info = Mat::zeros(dim, dim);
        for (row, &wi) in rows.iter().zip(w) {
            if wi == 0.0 {
                continue;
            }
            let eta: f64 = row.iter().zip(&beta).map(|(d, c)| d * c).sum();
            info.add_outer(row, wi * eta.exp());
        }
        let delta = match Cholesky::new(&info) {
            Some(c) => c.solve(&score),
            None => {
                info.add_diagonal(1e-10 * info.trace() / dim as f64 + 1e-300);
                Cholesky::new(&info)
                    .ok_or(Error::RegressionNonConvergence {
                        max_iter: LOG_LINK_MAX_ITER,
                    })?
                    .solve(&score)
            }
        };
        let mut step = 1.0;
        let mut advanced = false;
        for _ in 0..30 {
            let trial: Vec<f64> = beta.iter().zip(&delta).map(|(b, d)| b + step * d).collect();
            let (ts, tn) = score_norm(&trial);
            if tn < norm {
                beta = trial;
                score = ts;
                norm = tn;
                advanced = true;
                break;
            }
            step *= 0.5;
        }
        if !advanced {
            break;
        }
    }
    if norm <= 1e-8 * n_scale {
        Ok(beta)
    } else {
        Err(Error::RegressionNonConvergence {
            max_iter: LOG_LINK_MAX_ITER,
        })
    }
}

/// The standardized contrast `Σ ξᵢ (m₁(xᵢ) - m₀(xᵢ)) / Σ ξᵢ` and its
/// gradient in β, both as functions of the coefficient vector.
fn contrast_and_jacobian(
    fit: &RmstRegressionFit,
    beta: &[f64],
    g_rows: &[Vec<f64>],
    xi: &[f64],
) -> (f64, Vec<f64>) {
    let l = fit.l();
    let dim = fit.dim();
    let mut total_w = 0.0;
    let mut contrast = 0.0;
    let mut jac = vec![0.0; dim];
    for (g, &w) in g_rows.iter().zip(xi) {
        let mut eta0 = beta[0];
        let mut eta1 = beta[0] + beta[1];
        for (j, &gj) in g.iter().enumerate() {
            eta0 += beta[2 + j] * gj;
            eta1 += (beta[2 + j] + beta[2 + l + j]) * gj;
        }
        let m0 = fit.link.inverse(eta0);
        let m1 = fit.link.inverse(eta1);
        contrast += w * (m1 - m0);
        total_w += w;
        let (d0, d1) = match fit.link {
            Link::Identity => (1.0, 1.0),
            Link::Log => (m0, m1),
        };
        jac[0] += w * (d1 - d0);
        jac[1] += w * d1;
        for (j, &gj) in g.iter().enumerate() {
            jac[2 + j] += w * (d1 - d0) * gj;
            jac[2 + l + j] += w * d1 * gj;
        }
    }
    contrast /= total_w;
    for v in jac.iter_mut() {
        *v /= total_w;
    }
    (contrast, jac)
}

/// Weighted G-formula RMST difference with Delta-method variance.
pub fn g_formula_estimate(
    fit: &RmstRegressionFit,
    panel: &RegionPanel,
    xi: &WeightSet,
    weighting: Weighting,
) -> Result<RmstEstimate> {
    assert_eq!(xi.len(), panel.n());
    let mut g_rows = Vec::with_capacity(panel.n());
    for rec in panel.records() {
        g_rows.push(evaluate_g(&fit.g_spec, &rec.covariates)?);
    }
    let (estimate, jac) = contrast_and_jacobian(fit, &fit.beta, &g_rows, xi.values());
    let variance = fit.covariance.quadratic_form(&jac);
    Ok(RmstEstimate {
        estimate,
        variance,
        t_star: fit.t_star,
        region: Some(panel.region_id),
        contrast: ArmOrContrast::Difference,
        estimator: EstimatorTag::Gf,
        weighting,
    })
}
