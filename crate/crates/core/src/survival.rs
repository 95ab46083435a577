//! Weighted product-limit machinery: survival curves, restricted mean
//! survival time, martingale-based variances, and the censoring-curve
//! weights used by the regression-style estimators.
//!
//! Subjects enter every process with mass `ξᵢ qᵢ`, the product of the
//! sampling weight and the inverse treatment-propensity factor. All
//! quantities below are ratios of such masses, so rescaling the weight
//! vector by any positive constant leaves curves, RMSTs, and variances
//! unchanged.

use serde::{Deserialize, Serialize};

use crate::data::RegionPanel;
use crate::error::{Error, Result};
use crate::weights::{WeightSet, Weighting};

/// Right-continuous step function, flat after the last jump.
#[derive(Clone, Debug, PartialEq)]
pub struct StepCurve {
    pub value_at_0: f64,
    times: Vec<f64>,
    values: Vec<f64>,
}

impl StepCurve {
    /// Builds a curve from strictly increasing jump times and the value
    /// that holds from each time (inclusive) onward.
    pub fn new(value_at_0: f64, times: Vec<f64>, values: Vec<f64>) -> Self {
        assert_eq!(times.len(), values.len());
        assert!(
            times.windows(2).all(|w| w[0] < w[1]),
            "jump times must be strictly increasing"
        );
        StepCurve {
            value_at_0,
            times,
            values,
        }
    }

    pub fn constant(value: f64) -> Self {
        StepCurve {
            value_at_0: value,
            times: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value at `t` (right-continuous: the jump at `t` has happened).
    pub fn value_at(&self, t: f64) -> f64 {
        match self.times.partition_point(|&u| u <= t) {
            0 => self.value_at_0,
            k => self.values[k - 1],
        }
    }

    /// Left limit at `t`: the value just before any jump at `t`.
    pub fn value_before(&self, t: f64) -> f64 {
        match self.times.partition_point(|&u| u < t) {
            0 => self.value_at_0,
            k => self.values[k - 1],
        }
    }

    /// Exact integral over `[a, b]`, extending flat beyond the last jump.
    pub fn integrate(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let mut total = 0.0;
        let mut left = a;
        let mut value = self.value_at(a);
        for (&t, &v) in self.times.iter().zip(&self.values) {
            if t <= a {
                continue;
            }
            if t >= b {
                break;
            }
            total += value * (t - left);
            left = t;
            value = v;
        }
        total += value * (b - left);
        total
    }
}

/// Weighted counting-process summaries at the retained event times of one
/// arm, truncated at `t_star`.
#[derive(Clone, Debug)]
pub struct WeightedRiskSet {
    /// Distinct event times with positive event mass, ascending.
    pub event_times: Vec<f64>,
    /// Weighted event mass at each time (jump of the counting process).
    pub dn: Vec<f64>,
    /// Weighted at-risk mass at each time.
    pub y: Vec<f64>,
    /// Stabilized at-risk mass Ỹ² / Σ (ξq)² Yᵢ.
    pub w_stab: Vec<f64>,
    /// Jump of the weighted counting process at each time (equals `dn`).
    pub dn_jump: Vec<f64>,
}

impl WeightedRiskSet {
    /// Event times where the variance term is dropped because the jump
    /// takes the whole remaining risk mass.
    pub fn degenerate_terms(&self) -> usize {
        self.y
            .iter()
            .zip(&self.dn_jump)
            .filter(|(y, dn)| *y - *dn <= 0.0)
            .count()
    }
}

fn arm_masses(panel: &RegionPanel, arm: u8, xi: &WeightSet, q: &[f64]) -> Vec<(f64, u8, f64)> {
    assert_eq!(xi.len(), panel.n(), "weights must align with panel rows");
    assert_eq!(q.len(), panel.n(), "q factors must align with panel rows");
    let mut rows: Vec<(f64, u8, f64)> = panel
        .records()
        .iter()
        .zip(xi.values().iter().zip(q))
        .filter(|(rec, _)| rec.treatment == arm)
        .map(|(rec, (&w, &qi))| (rec.time, rec.event, w * qi))
        .collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    rows
}

fn build_processes(
    panel: &RegionPanel,
    arm: u8,
    xi: &WeightSet,
    q: &[f64],
    t_star: f64,
) -> Result<(StepCurve, WeightedRiskSet)> {
    let rows = arm_masses(panel, arm, xi, q);
    let total_mass: f64 = rows.iter().map(|r| r.2).sum();
    if rows.is_empty() || total_mass <= 0.0 {
        return Err(Error::EmptyArm {
            region: panel.region_id,
            arm,
        });
    }
    let total_sq: f64 = rows.iter().map(|r| r.2 * r.2).sum();

    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut riskset = WeightedRiskSet {
        event_times: Vec::new(),
        dn: Vec::new(),
        y: Vec::new(),
        w_stab: Vec::new(),
        dn_jump: Vec::new(),
    };

    let mut surv = 1.0;
    let mut at_risk = total_mass;
    let mut at_risk_sq = total_sq;
    let mut i = 0;
    while i < rows.len() {
        let t = rows[i].0;
        if t > t_star {
            break;
        }
        // pool all subjects tied at time t
        let mut event_mass = 0.0;
        let mut leaving_mass = 0.0;
        let mut leaving_sq = 0.0;
        let mut j = i;
        while j < rows.len() && rows[j].0 == t {
            let (_, event, m) = rows[j];
            if event == 1 {
                event_mass += m;
            }
            leaving_mass += m;
            leaving_sq += m * m;
            j += 1;
        }
        if event_mass > 0.0 {
            // at-risk mass uses the left limit: everyone with U >= t
            let y = at_risk;
            let w = y * y / at_risk_sq;
            surv *= (1.0 - event_mass / y).max(0.0);
            times.push(t);
            values.push(surv);
            riskset.event_times.push(t);
            riskset.dn.push(event_mass);
            riskset.y.push(y);
            riskset.w_stab.push(w);
            riskset.dn_jump.push(event_mass);
        }
        at_risk -= leaving_mass;
        at_risk_sq -= leaving_sq;
        i = j;
    }

    Ok((StepCurve::new(1.0, times, values), riskset))
}

/// Weighted Kaplan-Meier curve for one arm: the product over event times
/// `u <= t` of `1 - dÑ(u)/Ỹ(u)`, built over distinct event times up to
/// `t_star` with ties pooled, flat after the last event.
pub fn weighted_km_curve(
    panel: &RegionPanel,
    arm: u8,
    xi: &WeightSet,
    q: &[f64],
    t_star: f64,
) -> Result<StepCurve> {
    Ok(build_processes(panel, arm, xi, q, t_star)?.0)
}

/// Weighted risk-set summaries matching [`weighted_km_curve`].
pub fn weighted_risk_set(
    panel: &RegionPanel,
    arm: u8,
    xi: &WeightSet,
    q: &[f64],
    t_star: f64,
) -> Result<WeightedRiskSet> {
    Ok(build_processes(panel, arm, xi, q, t_star)?.1)
}

/// Area under the survival curve from 0 to `t_star`.
pub fn weighted_km_rmst(curve: &StepCurve, t_star: f64) -> f64 {
    curve.integrate(0.0, t_star)
}

/// Variance of the weighted KM RMST for one arm: the sum over event times
/// of `(tail area)² dN / (W (Y - ΔN))`, where the tail area is the curve
/// integral from the event time to `t_star`. Terms whose jump absorbs the
/// whole risk mass are dropped (see [`WeightedRiskSet::degenerate_terms`]).
pub fn km_rmst_variance(riskset: &WeightedRiskSet, curve: &StepCurve, t_star: f64) -> f64 {
    let mut var = 0.0;
    for k in 0..riskset.event_times.len() {
        let denom = riskset.w_stab[k] * (riskset.y[k] - riskset.dn_jump[k]);
        if denom <= 0.0 {
            continue;
        }
        let tail = curve.integrate(riskset.event_times[k], t_star);
        var += tail * tail * riskset.dn[k] / denom;
    }
    var
}

/// Pointwise variance of the weighted KM survival estimate at time `t`:
/// `S̃²(t) Σ_{u <= t} dN / (W (Y - ΔN))`. With unit weights this is the
/// Greenwood formula.
pub fn km_curve_variance(riskset: &WeightedRiskSet, curve: &StepCurve, t: f64) -> f64 {
    let s = curve.value_at(t);
    let mut acc = 0.0;
    for k in 0..riskset.event_times.len() {
        if riskset.event_times[k] > t {
            break;
        }
        let denom = riskset.w_stab[k] * (riskset.y[k] - riskset.dn_jump[k]);
        if denom <= 0.0 {
            continue;
        }
        acc += riskset.dn[k] / denom;
    }
    s * s * acc
}

/// Unweighted Kaplan-Meier estimate of the censoring survival function
/// `G(t) = P(C > t)`, pooled over both arms: censorings act as events and
/// events as censorings.
pub fn censoring_survival(panel: &RegionPanel) -> StepCurve {
    censoring_curve_from(
        panel
            .records()
            .iter()
            .map(|rec| (rec.time, rec.event))
            .collect(),
    )
}

/// Censoring survival estimated within one treatment arm only.
pub fn censoring_survival_for_arm(panel: &RegionPanel, arm: u8) -> StepCurve {
    censoring_curve_from(
        panel
            .records()
            .iter()
            .filter(|rec| rec.treatment == arm)
            .map(|rec| (rec.time, rec.event))
            .collect(),
    )
}

/// IPC weights where each subject is reweighted by its own arm's
/// censoring curve instead of the pooled one.
pub fn ipc_weights_per_arm(panel: &RegionPanel, t_star: f64) -> Result<Vec<f64>> {
    let curves = [
        censoring_survival_for_arm(panel, 0),
        censoring_survival_for_arm(panel, 1),
    ];
    let mut out = Vec::with_capacity(panel.n());
    for (i, rec) in panel.records().iter().enumerate() {
        let y = rec.time.min(t_star);
        let observed = (rec.event == 1 && rec.time <= t_star) || rec.time >= t_star;
        if !observed {
            out.push(0.0);
            continue;
        }
        let g_left = curves[rec.treatment as usize].value_before(y);
        if g_left <= 0.0 {
            return Err(Error::CensoringSupport {
                region: panel.region_id,
                subject: i,
            });
        }
        out.push(1.0 / g_left);
    }
    Ok(out)
}

fn censoring_curve_from(rows: Vec<(f64, u8)>) -> StepCurve {
    let mut rows = rows;
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = rows.len();
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut g = 1.0;
    let mut at_risk = n as f64;
    let mut i = 0;
    while i < n {
        let t = rows[i].0;
        let mut censored = 0.0;
        let mut leaving = 0.0;
        let mut j = i;
        while j < n && rows[j].0 == t {
            if rows[j].1 == 0 {
                censored += 1.0;
            }
            leaving += 1.0;
            j += 1;
        }
        if censored > 0.0 {
            g *= (1.0 - censored / at_risk).max(0.0);
            times.push(t);
            values.push(g);
        }
        at_risk -= leaving;
        i = j;
    }
    StepCurve::new(1.0, times, values)
}

/// Inverse-probability-of-censoring weights at truncation time `t_star`.
///
/// With `Y = min(U, t*)`, the truncated time is fully observed when the
/// event happened by `t*` or follow-up reached `t*`; such subjects get
/// weight `1/G(Y-)` and everyone else weight 0. The left limit keeps a
/// subject's own censoring mass out of its denominator.
pub fn ipc_weights(panel: &RegionPanel, g: &StepCurve, t_star: f64) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(panel.n());
    for (i, rec) in panel.records().iter().enumerate() {
        let y = rec.time.min(t_star);
        let observed = (rec.event == 1 && rec.time <= t_star) || rec.time >= t_star;
        if !observed {
            out.push(0.0);
            continue;
        }
        let g_left = g.value_before(y);
        if g_left <= 0.0 {
            return Err(Error::CensoringSupport {
                region: panel.region_id,
                subject: i,
            });
        }
        out.push(1.0 / g_left);
    }
    Ok(out)
}

/// Which quantity an [`RmstEstimate`] describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArmOrContrast {
    Arm0,
    Arm1,
    Difference,
}

/// Which estimator produced an [`RmstEstimate`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstimatorTag {
    Naive,
    Km,
    Gf,
    GfMis,
    Hj,
    Ag,
    AgMis,
    Global,
}

impl std::fmt::Display for EstimatorTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            EstimatorTag::Naive => "Naive",
            EstimatorTag::Km => "KM",
            EstimatorTag::Gf => "GF",
            EstimatorTag::GfMis => "GFmis",
            EstimatorTag::Hj => "HJ",
            EstimatorTag::Ag => "AG",
            EstimatorTag::AgMis => "AGmis",
            EstimatorTag::Global => "global",
        };
        write!(f, "{s}")
    }
}

/// A point estimate with its variance on the estimate scale.
#[derive(Clone, Debug)]
pub struct RmstEstimate {
    pub estimate: f64,
    pub variance: f64,
    pub t_star: f64,
    /// Region id; `None` for the pooled global estimate.
    pub region: Option<u32>,
    pub contrast: ArmOrContrast,
    pub estimator: EstimatorTag,
    pub weighting: Weighting,
}

/// Weighted KM RMST difference between the arms with its variance (the
/// sum of the per-arm variances).
pub fn km_difference_estimate(
    panel: &RegionPanel,
    xi: &WeightSet,
    q: &[f64],
    t_star: f64,
    estimator: EstimatorTag,
    weighting: Weighting,
) -> Result<RmstEstimate> {
    let mut estimate = 0.0;
    let mut variance = 0.0;
    for arm in [1u8, 0u8] {
        let (curve, riskset) = build_processes(panel, arm, xi, q, t_star)?;
        let mu = weighted_km_rmst(&curve, t_star);
        let var = km_rmst_variance(&riskset, &curve, t_star);
        if arm == 1 {
            estimate += mu;
        } else {
            estimate -= mu;
        }
        variance += var;
    }
    Ok(RmstEstimate {
        estimate,
        variance,
        t_star,
        region: Some(panel.region_id),
        contrast: ArmOrContrast::Difference,
        estimator,
        weighting,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SubjectRecord;
    use crate::numerics::RngStream;
    use crate::weights::WeightKind;

    fn subject(time: f64, event: u8, z: u8) -> SubjectRecord {
        SubjectRecord {
            time,
            event,
            treatment: z,
            region: 1,
            covariates: vec![0.0],
        }
    }

    /// Panel whose control arm is inert filler so single-arm toys can
    /// exercise arm 1 alone.
    fn arm1_panel(rows: &[(f64, u8)]) -> (RegionPanel, WeightSet, Vec<f64>) {
        let mut records: Vec<SubjectRecord> = rows.iter().map(|&(t, e)| subject(t, e, 1)).collect();
        records.push(subject(1.0, 1, 0));
        records.push(subject(2.0, 0, 0));
        let n = records.len();
        let panel = RegionPanel::new(1, records).unwrap();
        let xi = WeightSet::uniform(1, n);
        let q = vec![1.0; n];
        (panel, xi, q)
    }

    fn weighted_arm1_panel(rows: &[(f64, u8, f64)]) -> (RegionPanel, WeightSet, Vec<f64>) {
        let mut records: Vec<SubjectRecord> =
            rows.iter().map(|&(t, e, _)| subject(t, e, 1)).collect();
        records.push(subject(1.0, 1, 0));
        records.push(subject(2.0, 0, 0));
        let n = records.len();
        let mut weights: Vec<f64> = rows.iter().map(|r| r.2).collect();
        weights.push(0.5);
        weights.push(0.5);
        let panel = RegionPanel::new(1, records).unwrap();
        let xi = WeightSet::normalized(1, WeightKind::Calibration, weights);
        let q = vec![1.0; n];
        (panel, xi, q)
    }

    #[test]
    fn single_event_step() {
        let (panel, xi, q) = arm1_panel(&[(2.0, 1)]);
        let curve = weighted_km_curve(&panel, 1, &xi, &q, 10.0).unwrap();
        assert_eq!(curve.value_at(1.9), 1.0);
        assert_eq!(curve.value_at(2.0), 0.0);
        assert_eq!(curve.value_at(5.0), 0.0);
        assert!((weighted_km_rmst(&curve, 4.0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn textbook_two_event_km() {
        let (panel, xi, q) = arm1_panel(&[(1.0, 1), (3.0, 1)]);
        let curve = weighted_km_curve(&panel, 1, &xi, &q, 10.0).unwrap();
        assert_eq!(curve.value_at(0.5), 1.0);
        assert!((curve.value_at(1.0) - 0.5).abs() < 1e-15);
        assert_eq!(curve.value_at(3.0), 0.0);
        // RMST to 4: 1·1 + 0.5·2 + 0·1 = 2
        assert!((weighted_km_rmst(&curve, 4.0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn weighted_masses_hand_curve() {
        // event at 1 with weight 0.75, censoring at 2 with weight 0.25:
        // S(1) = 1 - 0.75/1 = 0.25, flat after
        let (panel, xi, q) = weighted_arm1_panel(&[(1.0, 1, 0.75), (2.0, 0, 0.25)]);
        let curve = weighted_km_curve(&panel, 1, &xi, &q, 10.0).unwrap();
        assert!((curve.value_at(1.0) - 0.25).abs() < 1e-12);
        assert!((curve.value_at(3.0) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn empty_arm_rejected() {
        let (panel, xi, _) = arm1_panel(&[(2.0, 1)]);
        // zero out every arm-1 subject through q
        let q: Vec<f64> = panel
            .records()
            .iter()
            .map(|r| if r.treatment == 1 { 0.0 } else { 1.0 })
            .collect();
        assert!(matches!(
            weighted_km_curve(&panel, 1, &xi, &q, 4.0),
            Err(Error::EmptyArm { arm: 1, .. })
        ));
    }

    #[test]
    fn rmst_variance_hand_sum_and_bootstrap() {
        // two unit-weight events at 1 and 3, t* = 4:
        // tail(1) = 2, tail(3) = 0; dN=1, Y=2, W=2, Y-ΔN=1 at the first
        // time, so the variance is 2²·1/(2·1) / ... = 0.5 exactly.
        let (panel, xi, q) = arm1_panel(&[(1.0, 1), (3.0, 1)]);
        let curve = weighted_km_curve(&panel, 1, &xi, &q, 4.0).unwrap();
        let riskset = weighted_risk_set(&panel, 1, &xi, &q, 4.0).unwrap();
        let var = km_rmst_variance(&riskset, &curve, 4.0);
        assert!((var - 0.5).abs() < 1e-12, "var {var}");

        // nonparametric bootstrap of the same toy
        let mut rng = RngStream::new(3, 0);
        let data = [1.0f64, 3.0];
        let b = 20_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..b {
            let m = (0..2)
                .map(|_| data[rng.next_index(2)].min(4.0))
                .sum::<f64>()
                / 2.0;
            sum += m;
            sumsq += m * m;
        }
        let boot_var = sumsq / b as f64 - (sum / b as f64).powi(2);
        assert!(
            (var - boot_var).abs() / boot_var < 0.25,
            "eq-4.2 {var} vs bootstrap {boot_var}"
        );
    }

    #[test]
    fn variance_zero_without_events() {
        let (panel, xi, q) = arm1_panel(&[(9.0, 1), (8.0, 0)]);
        let curve = weighted_km_curve(&panel, 1, &xi, &q, 4.0).unwrap();
        let riskset = weighted_risk_set(&panel, 1, &xi, &q, 4.0).unwrap();
        assert_eq!(km_rmst_variance(&riskset, &curve, 4.0), 0.0);
        assert_eq!(km_curve_variance(&riskset, &curve, 0.5), 0.0);
    }

    #[test]
    fn weight_scale_invariance() {
        let rows = [(0.5, 1, 0.3), (1.0, 0, 0.8), (2.0, 1, 0.2), (3.0, 1, 0.7)];
        let (panel, xi, q) = weighted_arm1_panel(&rows);
        let scaled = WeightSet::normalized(
            1,
            WeightKind::Calibration,
            xi.values().iter().map(|w| w * 37.5).collect(),
        );
        for (a, b) in xi.values().iter().zip(scaled.values()) {
            assert!((a - b).abs() < 1e-15); // normalization absorbs the scale
        }
        // and q rescaling is absorbed by the ratio structure
        let q2: Vec<f64> = q.iter().map(|v| v * 4.0).collect();
        let c1 = weighted_km_curve(&panel, 1, &xi, &q, 4.0).unwrap();
        let c2 = weighted_km_curve(&panel, 1, &xi, &q2, 4.0).unwrap();
        for t in [0.5, 1.0, 2.5, 3.9] {
            assert!((c1.value_at(t) - c2.value_at(t)).abs() < 1e-12);
        }
        let r1 = weighted_risk_set(&panel, 1, &xi, &q, 4.0).unwrap();
        let r2 = weighted_risk_set(&panel, 1, &xi, &q2, 4.0).unwrap();
        let v1 = km_rmst_variance(&r1, &c1, 4.0);
        let v2 = km_rmst_variance(&r2, &c2, 4.0);
        assert!((v1 - v2).abs() < 1e-12 * v1.max(1.0));
    }

    #[test]
    fn greenwood_equivalence_unweighted() {
        // 20-subject unweighted instance: the stabilized mass equals the
        // at-risk count, so the curve variance must match Greenwood.
        let mut rng = RngStream::new(8, 1);
        let rows: Vec<(f64, u8)> = (0..20)
            .map(|_| {
                (
                    (rng.next_f64() * 5.0 * 8.0).round() / 8.0,
                    u8::from(rng.next_f64() < 0.7),
                )
            })
            .collect();
        let (panel, xi, q) = arm1_panel(&rows);
        let curve = weighted_km_curve(&panel, 1, &xi, &q, 6.0).unwrap();
        let riskset = weighted_risk_set(&panel, 1, &xi, &q, 6.0).unwrap();

        // classical Greenwood on the same data
        let mut sorted = rows.clone();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        for t in [0.5, 1.0, 2.0, 3.0, 4.5] {
            let mut acc = 0.0;
            let mut s = 1.0;
            let mut i = 0;
            while i < sorted.len() {
                let u = sorted[i].0;
                if u > t {
                    break;
                }
                let at_risk = sorted.iter().filter(|r| r.0 >= u).count() as f64;
                let deaths = sorted.iter().filter(|r| r.0 == u && r.1 == 1).count() as f64;
                if deaths > 0.0 {
                    s *= 1.0 - deaths / at_risk;
                    if at_risk > deaths {
                        acc += deaths / (at_risk * (at_risk - deaths));
                    }
                }
                while i < sorted.len() && sorted[i].0 == u {
                    i += 1;
                }
            }
            let greenwood = s * s * acc;
            let got = km_curve_variance(&riskset, &curve, t);
            assert!(
                (got - greenwood).abs() < 1e-10,
                "t={t}: {got} vs {greenwood}"
            );
        }
    }

    #[test]
    fn curve_variance_weighted_hand_sum() {
        // events at 1 (mass .75) and 2 (mass .25):
        // at u=1: Y=1, W=1/(0.5625+0.0625)=1.6, Y-dN=.25
        //   term = .75/(1.6·.25) = 1.875
        // S(1) = .25, so Var(S̃(1)) = .0625·1.875 = 0.1171875
        let (panel, xi, q) = weighted_arm1_panel(&[(1.0, 1, 0.75), (2.0, 1, 0.25)]);
        let curve = weighted_km_curve(&panel, 1, &xi, &q, 4.0).unwrap();
        let riskset = weighted_risk_set(&panel, 1, &xi, &q, 4.0).unwrap();
        let got = km_curve_variance(&riskset, &curve, 1.5);
        assert!((got - 0.1171875).abs() < 1e-12, "got {got}");
    }

    #[test]
    fn censoring_curve_cases() {
        // no censoring: G ≡ 1
        let records = vec![subject(1.0, 1, 1), subject(2.0, 1, 0)];
        let panel = RegionPanel::new(1, records).unwrap();
        let g = censoring_survival(&panel);
        assert_eq!(g.value_at(100.0), 1.0);

        // all censored at 5: G = 1 on [0,5), 0 after
        let records = vec![subject(5.0, 0, 1), subject(5.0, 0, 0)];
        let panel = RegionPanel::new(1, records).unwrap();
        let g = censoring_survival(&panel);
        assert_eq!(g.value_before(5.0), 1.0);
        assert_eq!(g.value_at(5.0), 0.0);

        // mixed toy {(1,δ=1),(2,δ=0),(3,δ=1)}: G steps only at 2, to 0.5
        let records = vec![subject(1.0, 1, 1), subject(2.0, 0, 0), subject(3.0, 1, 1)];
        let panel = RegionPanel::new(1, records).unwrap();
        let g = censoring_survival(&panel);
        assert_eq!(g.times(), &[2.0]);
        assert!((g.value_at(2.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn per_arm_censoring_curve() {
        // arm 1 censored at 2, arm 0 censored at 3: the per-arm curves
        // step independently and the pooled one sees both
        let records = vec![
            subject(2.0, 0, 1),
            subject(4.0, 1, 1),
            subject(3.0, 0, 0),
            subject(5.0, 1, 0),
        ];
        let panel = RegionPanel::new(1, records).unwrap();
        let g1 = censoring_survival_for_arm(&panel, 1);
        let g0 = censoring_survival_for_arm(&panel, 0);
        assert_eq!(g1.times(), &[2.0]);
        assert!((g1.value_at(2.0) - 0.5).abs() < 1e-15);
        assert_eq!(g0.times(), &[3.0]);
        let pooled = censoring_survival(&panel);
        assert_eq!(pooled.times(), &[2.0, 3.0]);

        let w = ipc_weights_per_arm(&panel, 6.0).unwrap();
        assert_eq!(w[0], 0.0); // censored before t*
        assert!((w[1] - 2.0).abs() < 1e-12); // 1 / G1(4-) = 1/0.5
        assert_eq!(w[2], 0.0);
        assert!((w[3] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ipc_weight_cases() {
        // no censoring: weight 1 for an event at 2
        let records = vec![subject(2.0, 1, 1), subject(3.0, 1, 0)];
        let panel = RegionPanel::new(1, records).unwrap();
        let g = censoring_survival(&panel);
        let w = ipc_weights(&panel, &g, 4.0).unwrap();
        assert_eq!(w, vec![1.0, 1.0]);

        // censored before t*: weight 0
        let records = vec![subject(1.0, 0, 1), subject(3.0, 1, 0)];
        let panel = RegionPanel::new(1, records).unwrap();
        let g = censoring_survival(&panel);
        let w = ipc_weights(&panel, &g, 4.0).unwrap();
        assert_eq!(w[0], 0.0);

        // follow-up past t* with G(t*-) = 0.8: weight 1.25 via the left
        // limit on a handmade curve
        let records = vec![subject(6.0, 0, 1), subject(5.0, 1, 0)];
        let panel = RegionPanel::new(1, records).unwrap();
        let g = StepCurve::new(1.0, vec![2.0, 4.0], vec![0.8, 0.64]);
        let w = ipc_weights(&panel, &g, 4.0).unwrap();
        assert!((w[0] - 1.25).abs() < 1e-12);
    }

    #[test]
    fn ipc_positivity_error() {
        // a censoring curve that dies before t* (for instance from an
        // external cohort) cannot reweight an observed later time
        let records = vec![subject(6.0, 0, 1), subject(2.0, 1, 0)];
        let panel = RegionPanel::new(1, records).unwrap();
        let g = StepCurve::new(1.0, vec![1.0], vec![0.0]);
        assert!(matches!(
            ipc_weights(&panel, &g, 4.0),
            Err(Error::CensoringSupport { subject: 0, .. })
        ));
    }

    #[test]
    fn uncensored_rmst_equals_truncated_mean() {
        let mut rng = RngStream::new(21, 0);
        for _ in 0..100 {
            let n = 2 + rng.next_index(48);
            let rows: Vec<(f64, u8)> = (0..n).map(|_| (rng.next_exponential(0.4), 1u8)).collect();
            let t_star = 0.5 + 3.0 * rng.next_f64();
            let (panel, xi, q) = arm1_panel(&rows);
            let curve = weighted_km_curve(&panel, 1, &xi, &q, t_star).unwrap();
            let rmst = weighted_km_rmst(&curve, t_star);
            let mean: f64 = rows.iter().map(|r| r.0.min(t_star)).sum::<f64>() / n as f64;
            assert!((rmst - mean).abs() < 1e-12, "{rmst} vs {mean}");
            assert!(rmst >= 0.0 && rmst <= t_star);
        }
    }

    #[test]
    fn q_omission_matches_inclusion_under_constant_propensity() {
        // with a constant propensity the q factor is constant within each
        // arm, so dropping it entirely must not move the estimate or the
        // variance
        let rows = [(0.5, 1, 0.3), (1.5, 1, 0.8), (2.5, 0, 0.4), (3.0, 1, 0.6)];
        let (panel, xi, _) = weighted_arm1_panel(&rows);
        let q_real = crate::ipsw::inverse_propensity_factors(&panel);
        let q_unit = vec![1.0; panel.n()];
        let e1 = km_difference_estimate(&panel, &xi, &q_real, 4.0, EstimatorTag::Km, Weighting::Cw)
            .unwrap();
        let e2 = km_difference_estimate(&panel, &xi, &q_unit, 4.0, EstimatorTag::Km, Weighting::Cw)
            .unwrap();
        assert!((e1.estimate - e2.estimate).abs() < 1e-12);
        assert!((e1.variance - e2.variance).abs() < 1e-12);
    }

    #[test]
    fn ipcw_identity_by_simulation() {
        // E[w Y] should match E[Y] when censoring weights come from the
        // true censoring distribution's KM estimate
        let mut rng = RngStream::new(99, 5);
        let n = 100_000;
        let t_star = 4.0;
        let mut records = Vec::with_capacity(n);
        let mut truth_sum = 0.0;
        for i in 0..n {
            let t = rng.next_exponential(0.5);
            let c = rng.next_exponential(0.1);
            truth_sum += t.min(t_star);
            records.push(subject(t.min(c), u8::from(t <= c), (i % 2) as u8));
        }
        let panel = RegionPanel::new(1, records).unwrap();
        let g = censoring_survival(&panel);
        let w = ipc_weights(&panel, &g, t_star).unwrap();
        let wy: f64 = panel
            .records()
            .iter()
            .zip(&w)
            .map(|(r, &wi)| wi * r.time.min(t_star))
            .sum::<f64>()
            / n as f64;
        let truth = truth_sum / n as f64;
        // 3 standard errors of the truncated mean
        let se = 3.0 * t_star / (n as f64).sqrt();
        assert!((wy - truth).abs() < se, "{wy} vs {truth}");
    }
}
