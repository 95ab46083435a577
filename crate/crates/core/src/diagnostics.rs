//! Weighted absolute standardized mean differences between each region
//! and the target population.

use crate::data::Dataset;
use crate::error::Result;
use crate::weights::{WeightSet, Weighting};

/// Weighted mean and Galassi-corrected weighted variance of one sample.
/// Returns `(mean, Some(variance))`, with `None` when the weights are too
/// degenerate for the variance correction ((Σξ)² <= Σξ²).
pub fn weighted_moments(x: &[f64], w: &[f64]) -> (f64, Option<f64>) {
    assert_eq!(x.len(), w.len());
    let sw: f64 = w.iter().sum();
    let sw2: f64 = w.iter().map(|v| v * v).sum();
    let mean = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let denom = sw * sw - sw2;
    if x.len() < 2 || denom <= 0.0 {
        return (mean, None);
    }
    let ss: f64 = x
        .iter()
        .zip(w)
        .map(|(a, b)| b * (a - mean) * (a - mean))
        .sum();
    (mean, Some(sw / denom * ss))
}

/// Absolute SMD for a continuous covariate from precomputed means and
/// variances of the two sides.
pub fn smd_continuous_from_moments(m1: f64, v1: f64, m2: f64, v2: f64) -> Option<f64> {
    let num = (m1 - m2).abs();
    if num == 0.0 {
        return Some(0.0);
    }
    let denom = (v1 / 2.0 + v2 / 2.0).sqrt();
    if denom > 0.0 {
        Some(num / denom)
    } else {
        None
    }
}

/// Weighted absolute SMD for a continuous covariate:
/// `|x̄₁ - x̄₂| / sqrt(s₁²/2 + s₂²/2)` with weighted sample variances.
/// Returns `None` (undefined) when the pooled scale collapses while the
/// means differ, or when either side's weights are degenerate.
pub fn weighted_smd_continuous(x1: &[f64], w1: &[f64], x2: &[f64], w2: &[f64]) -> Option<f64> {
    let (m1, v1) = weighted_moments(x1, w1);
    let (m2, v2) = weighted_moments(x2, w2);
    if (m1 - m2).abs() == 0.0 {
        return Some(0.0);
    }
    match (v1, v2) {
        (Some(v1), Some(v2)) => smd_continuous_from_moments(m1, v1, m2, v2),
        _ => None,
    }
}

/// Absolute SMD for a binary covariate from the two prevalences.
pub fn smd_binary_from_prevalences(p1: f64, p2: f64) -> Option<f64> {
    let num = (p1 - p2).abs();
    if num == 0.0 {
        return Some(0.0);
    }
    let denom = (p1 * (1.0 - p1) / 2.0 + p2 * (1.0 - p2) / 2.0).sqrt();
    if denom > 0.0 {
        Some(num / denom)
    } else {
        None
    }
}

/// Weighted absolute SMD for a binary covariate:
/// `|p₁ - p₂| / sqrt(p₁(1-p₁)/2 + p₂(1-p₂)/2)` with weighted prevalences.
pub fn weighted_smd_binary(x1: &[f64], w1: &[f64], x2: &[f64], w2: &[f64]) -> Option<f64> {
    let (p1, _) = weighted_moments(x1, w1);
    let (p2, _) = weighted_moments(x2, w2);
    smd_binary_from_prevalences(p1, p2)
}

/// Individual-level target sample with unit weights.
#[derive(Clone, Debug)]
pub struct TargetSample {
    /// One row of covariates per target subject.
    pub covariates: Vec<Vec<f64>>,
}

/// The pooled trial population as the target sample.
pub fn pooled_target(dataset: &Dataset) -> TargetSample {
    TargetSample {
        covariates: dataset
            .all_records()
            .map(|r| r.covariates.clone())
            .collect(),
    }
}

/// One row of a balance report.
#[derive(Clone, Debug)]
pub struct BalanceRow {
    pub covariate: String,
    pub region: u32,
    pub weighting: Weighting,
    /// `None` marks an undefined SMD (degenerate scale).
    pub smd: Option<f64>,
}

fn is_binary_support(values: impl Iterator<Item = f64>) -> bool {
    let mut any = false;
    for v in values {
        if v != 0.0 && v != 1.0 {
            return false;
        }
        any = true;
    }
    any
}

/// Weighted absolute SMDs of every covariate, comparing each region
/// (unweighted, then under each supplied weight family) to the target
/// sample with unit weights. Covariates whose support is {0, 1} use the
/// prevalence formula; `binary_override` can force the classification
/// per covariate.
pub fn balance_report(
    dataset: &Dataset,
    target: &TargetSample,
    weighted: &[(Weighting, &[WeightSet])],
    binary_override: Option<&[bool]>,
) -> Result<Vec<BalanceRow>> {
    let p = dataset.covariate_count();
    let mut rows = Vec::new();
    for j in 0..p {
        let target_col: Vec<f64> = target.covariates.iter().map(|r| r[j]).collect();
        let target_w = vec![1.0; target_col.len()];
        let binary = match binary_override {
            Some(flags) => flags[j],
            None => is_binary_support(
                dataset
                    .all_records()
                    .map(|r| r.covariates[j])
                    .chain(target_col.iter().copied()),
            ),
        };
        for panel in &dataset.panels {
            let col: Vec<f64> = panel.records().iter().map(|r| r.covariates[j]).collect();
            let mut families: Vec<(Weighting, Vec<f64>)> =
                vec![(Weighting::None, vec![1.0; col.len()])];
            for (tag, sets) in weighted {
                let set = sets
                    .iter()
                    .find(|s| s.region_id == panel.region_id)
                    .unwrap_or_else(|| panic!("no weight set for region {}", panel.region_id));
                families.push((*tag, set.values().to_vec()));
            }
            for (tag, w) in families {
                let smd = if binary {
                    weighted_smd_binary(&col, &w, &target_col, &target_w)
                } else {
                    weighted_smd_continuous(&col, &w, &target_col, &target_w)
                };
                rows.push(BalanceRow {
                    covariate: dataset.covariate_names[j].clone(),
                    region: panel.region_id,
                    weighting: tag,
                    smd,
                });
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibrate::{calibrate_region, SolverOptions};
    use crate::data::{load_dataset_str, target_from_pooled, GFunction, GSpec, SchemaMapping};
    use crate::numerics::RngStream;

    #[test]
    fn identical_distributions_give_zero() {
        let x = [0.3, 0.9, 1.4];
        let w = [1.0, 1.0, 1.0];
        assert_eq!(weighted_smd_continuous(&x, &w, &x, &w), Some(0.0));
    }

    #[test]
    fn continuous_hand_arithmetic() {
        // unit weights, {0,2} vs {1,3}: means 1 and 2, s² = 2 each
        let d =
            weighted_smd_continuous(&[0.0, 2.0], &[1.0, 1.0], &[1.0, 3.0], &[1.0, 1.0]).unwrap();
        assert!((d - 1.0 / 2.0f64.sqrt()).abs() < 1e-12, "{d}");
    }

    #[test]
    fn unit_weights_reduce_to_classical_smd() {
        let mut rng = RngStream::new(7, 0);
        for _ in 0..20 {
            let n1 = 5 + rng.next_index(20);
            let n2 = 5 + rng.next_index(20);
            let x1: Vec<f64> = (0..n1).map(|_| rng.next_normal(0.0, 1.0)).collect();
            let x2: Vec<f64> = (0..n2).map(|_| rng.next_normal(0.4, 1.3)).collect();
            let w1 = vec![1.0; n1];
            let w2 = vec![1.0; n2];
            let d = weighted_smd_continuous(&x1, &w1, &x2, &w2).unwrap();
            // classical: sample means and n-1 variances
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            let var = |v: &[f64]| {
                let m = mean(v);
                v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)
            };
            let classic = (mean(&x1) - mean(&x2)).abs() / ((var(&x1) + var(&x2)) / 2.0).sqrt();
            assert!((d - classic).abs() < 1e-12);
        }
    }

    #[test]
    fn binary_hand_arithmetic() {
        // prevalences 0.5 vs 0.3
        let x1 = [1.0, 0.0, 1.0, 0.0];
        let x2 = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        let w1 = vec![1.0; 4];
        let w2 = vec![1.0; 10];
        let d = weighted_smd_binary(&x1, &w1, &x2, &w2).unwrap();
        assert!((d - 0.2 / (0.125f64 + 0.105).sqrt()).abs() < 1e-12);
        assert!((d - 0.4170).abs() < 1e-4);
    }

    #[test]
    fn binary_weighted_prevalence() {
        let (p, _) = weighted_moments(&[1.0, 0.0], &[1.0, 3.0]);
        assert!((p - 0.25).abs() < 1e-15);
    }

    #[test]
    fn binary_degenerate_cases() {
        let w = [1.0, 1.0];
        assert_eq!(
            weighted_smd_binary(&[1.0, 1.0], &w, &[1.0, 1.0], &w),
            Some(0.0)
        );
        assert_eq!(weighted_smd_binary(&[1.0, 1.0], &w, &[0.0, 0.0], &w), None);
    }

    #[test]
    fn symmetry_and_scale_invariance() {
        let mut rng = RngStream::new(8, 0);
        let x1: Vec<f64> = (0..15).map(|_| rng.next_normal(0.0, 2.0)).collect();
        let x2: Vec<f64> = (0..12).map(|_| rng.next_normal(1.0, 1.0)).collect();
        let w1: Vec<f64> = (0..15).map(|_| 0.5 + rng.next_f64()).collect();
        let w2: Vec<f64> = (0..12).map(|_| 0.5 + rng.next_f64()).collect();
        let d12 = weighted_smd_continuous(&x1, &w1, &x2, &w2).unwrap();
        let d21 = weighted_smd_continuous(&x2, &w2, &x1, &w1).unwrap();
        assert!((d12 - d21).abs() < 1e-14);
        // affine rescale applied to both sides
        let ax1: Vec<f64> = x1.iter().map(|v| 3.0 * v - 7.0).collect();
        let ax2: Vec<f64> = x2.iter().map(|v| 3.0 * v - 7.0).collect();
        let da = weighted_smd_continuous(&ax1, &w1, &ax2, &w2).unwrap();
        assert!((d12 - da).abs() < 1e-12);
    }

    #[test]
    fn calibration_zeroes_first_moment_balance() {
        // after calibrating on first moments, the weighted SMD of every
        // calibrated binary covariate against the target is ~0
        let mut rng = RngStream::new(9, 0);
        let mut csv = String::from("t,e,z,r,b1,b2\n");
        for i in 0..200 {
            let r = if i % 2 == 0 { "A" } else { "B" };
            let skew = if r == "A" { 0.7 } else { 0.3 };
            let b1 = u8::from(rng.next_f64() < skew);
            let b2 = u8::from(rng.next_f64() < 1.0 - skew);
            csv.push_str(&format!(
                "{},1,{},{},{},{}\n",
                1.0 + rng.next_f64(),
                (i / 2) % 2,
                r,
                b1,
                b2
            ));
        }
        let schema = SchemaMapping {
            time: "t".into(),
            event: "e".into(),
            treatment: "z".into(),
            region: "r".into(),
            covariates: vec!["b1".into(), "b2".into()],
        };
        let ds = load_dataset_str(&csv, &schema).unwrap();
        let spec = GSpec::new(
            vec![GFunction::Identity(0), GFunction::Identity(1)],
            &ds.covariate_names,
        );
        let target = target_from_pooled(&ds, &spec).unwrap();
        let sets: Vec<_> = ds
            .panels
            .iter()
            .map(|p| {
                calibrate_region(p, &target, &SolverOptions::default())
                    .unwrap()
                    .weight_set(p.region_id)
            })
            .collect();
        let report = balance_report(
            &ds,
            &pooled_target(&ds),
            &[(Weighting::Cw, sets.as_slice())],
            None,
        )
        .unwrap();
        for row in &report {
            if row.weighting == Weighting::Cw {
                let smd = row.smd.unwrap();
                assert!(
                    smd <= 1e-8,
                    "{} region {}: {smd}",
                    row.covariate,
                    row.region
                );
            }
        }
        // and the unweighted rows show the imbalance we built in
        let unweighted_max = report
            .iter()
            .filter(|r| r.weighting == Weighting::None)
            .map(|r| r.smd.unwrap())
            .fold(0.0f64, f64::max);
        assert!(unweighted_max > 0.2, "max unweighted {unweighted_max}");
    }

    #[test]
    fn identical_region_and_target_all_zero() {
        let csv = "t,e,z,r,x\n1,1,0,A,0.5\n2,1,1,A,0.7\n1,1,0,B,0.5\n2,0,1,B,0.7\n";
        let schema = SchemaMapping {
            time: "t".into(),
            event: "e".into(),
            treatment: "z".into(),
            region: "r".into(),
            covariates: vec!["x".into()],
        };
        let ds = load_dataset_str(csv, &schema).unwrap();
        let report = balance_report(&ds, &pooled_target(&ds), &[], None).unwrap();
        for row in report {
            assert_eq!(row.smd, Some(0.0));
        }
    }
}
