//! Entropy-balancing calibration weights.
//!
//! Per region we look for weights `p_i > 0`, `Σ p_i = 1`, minimizing
//! `Σ p_i log p_i` subject to `Σ p_i g(x_i) = g̃`. The minimizer has the
//! exponential-tilt form `p_i ∝ exp(λᵀ g(x_i))`, where `λ` is a root of
//! the moment condition. We find it by minimizing the strictly convex dual
//!
//! ```text
//! φ(λ) = log Σ_i exp{ λᵀ (g(x_i) − g̃) }
//! ```
//!
//! whose gradient is exactly the constraint violation `Σ p_i g(x_i) − g̃`,
//! so the solver's convergence criterion doubles as the exact-balance
//! check. Working with centered columns `g(x_i) − g̃` keeps the
//! exponentials bounded near the optimum; a running max-subtraction guards
//! the rest.
//!
//! If `g̃` lies outside the convex hull of the observed `g(x_i)` the dual
//! has no stationary point and the iteration runs out of budget with a
//! stubbornly nonzero gradient; that is reported as an infeasibility error
//! naming the worst-violated moment, which in practice signals a target
//! population the region's covariate support cannot represent.

use crate::data::{evaluate_g, CalibrationTarget, RegionPanel};
use crate::error::{Error, Result};
use crate::numerics::mat::{Cholesky, Mat};
use crate::weights::{WeightKind, WeightSet};

/// Options for the dual Newton solver.
#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    /// Stop when the gradient (= constraint violation) infinity norm is
    /// at or below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-9,
            max_iter: 200,
        }
    }
}

/// Converged calibration weights for one region.
#[derive(Clone, Debug)]
pub struct CalibrationSolution {
    pub lambda: Vec<f64>,
    pub weights: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub max_constraint_violation: f64,
}

impl CalibrationSolution {
    pub fn weight_set(&self, region_id: u32) -> WeightSet {
        WeightSet::normalized(region_id, WeightKind::Calibration, self.weights.clone())
    }
}

struct DualState {
    /// Normalized weights at the current λ.
    p: Vec<f64>,
    /// log Σ exp(λᵀ gc_i), up to the additive max-shift.
    objective: f64,
    /// Σ p_i gc_i = constraint violation.
    gradient: Vec<f64>,
}

fn dual_state(gc: &[Vec<f64>], lambda: &[f64]) -> DualState {
    let n = gc.len();
    let l = lambda.len();
    let mut scores = Vec::with_capacity(n);
    let mut max_s = f64::NEG_INFINITY;
    for row in gc {
        let s: f64 = row.iter().zip(lambda).map(|(a, b)| a * b).sum();
        max_s = max_s.max(s);
        scores.push(s);
    }
    let mut total = 0.0;
    let mut p: Vec<f64> = scores
        .iter()
        .map(|s| {
            let e = (s - max_s).exp();
            total += e;
            e
        })
        .collect();
    for w in p.iter_mut() {
        *w /= total;
    }
    let mut gradient = vec![0.0; l];
    for (wi, row) in p.iter().zip(gc) {
        for (g, v) in gradient.iter_mut().zip(row) {
            *g += wi * v;
        }
    }
    DualState {
        p,
        objective: max_s + total.ln(),
        gradient,
    }
}

/// Solves for the calibration weights of one region.
pub fn calibrate_region(
    panel: &RegionPanel,
    target: &CalibrationTarget,
    opts: &SolverOptions,
) -> Result<CalibrationSolution> {
    let n = panel.n();
    let l = target.g_tilde.len();
    if l >= n {
        return Err(Error::TooManyConstraints {
            region: panel.region_id,
            l,
            n,
        });
    }

    // centered rows g(x_i) − g̃
    let mut gc = Vec::with_capacity(n);
    for rec in panel.records() {
        let mut row = evaluate_g(&target.spec, &rec.covariates)?;
        for (v, t) in row.iter_mut().zip(&target.g_tilde) {
            *v -= t;
        }
        gc.push(row);
    }

    let mut lambda = vec![0.0; l];
    let mut state = dual_state(&gc, &lambda);

    for iter in 0..opts.max_iter {
        let viol = state
            .gradient
            .iter()
            .fold(0.0f64, |acc, g| acc.max(g.abs()));
        if viol <= opts.tol {
            return Ok(CalibrationSolution {
                lambda,
                weights: state.p,
                converged: true,
                iterations: iter,
                max_constraint_violation: viol,
            });
        }

        // Newton direction from the dual Hessian, the weighted covariance
        // of the centered moments: H = Σ p_i (gc_i − ḡ)(gc_i − ḡ)ᵀ.
        let mut hess = Mat::zeros(l, l);
        let mut centered = vec![0.0; l];
        for (wi, row) in state.p.iter().zip(&gc) {
            for (c, (v, m)) in centered.iter_mut().zip(row.iter().zip(&state.gradient)) {
                *c = v - m;
            }
            hess.add_outer(&centered, *wi);
        }
        let chol = match Cholesky::new(&hess) {
            Some(c) => Some(c),
            None => {
                let ridge = 1e-12 * hess.trace() / l as f64;
                hess.add_diagonal(ridge);
                Cholesky::new(&hess)
            }
        };
        let Some(chol) = chol else {
            if iter == 0 {
                // singular at the uniform-weight start: the moment
                // functions themselves are collinear on this sample
                return Err(Error::DegenerateMoments {
                    region: panel.region_id,
                });
            }
            // concentration drove the Hessian singular mid-run, which is
            // how an unreachable target manifests; report infeasibility
            break;
        };
        let mut direction = chol.solve(&state.gradient);
        for d in direction.iter_mut() {
            *d = -*d;
        }
        let slope: f64 = state
            .gradient
            .iter()
            .zip(&direction)
            .map(|(g, d)| g * d)
            .sum();

        // backtracking line search on the dual objective; the absolute
        // slack keeps the Armijo test meaningful once the decrease falls
        // below floating-point resolution of the objective
        let slack = 1e-14 * state.objective.abs().max(1.0);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = lambda
                .iter()
                .zip(&direction)
                .map(|(x, d)| x + step * d)
                .collect();
            let trial_state = dual_state(&gc, &trial);
            if trial_state.objective <= state.objective + 1e-4 * step * slope + slack {
                lambda = trial;
                state = trial_state;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    let viol = state
        .gradient
        .iter()
        .fold(0.0f64, |acc, g| acc.max(g.abs()));
    if viol <= opts.tol {
        return Ok(CalibrationSolution {
            lambda,
            weights: state.p,
            converged: true,
            iterations: opts.max_iter,
            max_constraint_violation: viol,
        });
    }
    let worst = state
        .gradient
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(i, _)| target.spec.labels[i].clone())
        .unwrap_or_default();
    Err(Error::CalibrationInfeasible {
        region: panel.region_id,
        violation: viol,
        worst,
        iterations: opts.max_iter,
    })
}

/// Kish effective sample size `1 / Σ wᵢ²` of a normalized weight vector.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let ss: f64 = weights.iter().map(|w| w * w).sum();
    1.0 / ss
}
