//! The `analyze` command: weighted region-specific and global RMST
//! differences, consistency tests, balance diagnostics, and survival
//! curves on a user dataset.

use std::collections::BTreeMap;

use rayon::prelude::*;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use mrct_rmst::calibrate::{calibrate_region, SolverOptions};
use mrct_rmst::data::{
    load_dataset, target_from_pooled, target_from_region, CalibrationTarget, Dataset, GSpec,
};
use mrct_rmst::diagnostics::{balance_report, pooled_target, TargetSample};
use mrct_rmst::estimators::{augmented_estimate, hajek_estimate, AugmentedNormalization};
use mrct_rmst::inference::{confidence_interval, consistency_test, global_estimate};
use mrct_rmst::ipsw::{
    fit_region_membership, inverse_propensity_factors, ipsw_from_known_score, ipsw_mixture_target,
    SamplingScoreModel,
};
use mrct_rmst::regression::{
    fit_ipcw_rmst_regression_with_weights, g_formula_estimate, Link, RmstRegressionFit,
};
use mrct_rmst::survival::{
    censoring_survival, ipc_weights, ipc_weights_per_arm, km_difference_estimate,
    weighted_km_curve, EstimatorTag, RmstEstimate,
};
use mrct_rmst::weights::{WeightSet, Weighting};

use crate::config::{
    load_file_config, parse_link, parse_schema, write_manifest, FileConfig, MomentsFile,
    TargetSpec, WeightingChoice,
};
use crate::output::{csv_line, num17, write_file};
use crate::AnalyzeArgs;

#[derive(Serialize)]
pub struct ResolvedAnalyze {
    input: String,
    schema: mrct_rmst::data::SchemaMapping,
    t_star: f64,
    weighting: WeightingChoice,
    gspec: String,
    link: String,
    target: String,
    outcome_gspec: Option<String>,
    outcome_misspecify: Option<String>,
    ipsw_mode: String,
    censoring: String,
    augmented: String,
    solver_tolerance: f64,
    solver_max_iterations: usize,
}

pub struct AnalysisInputs {
    pub dataset: Dataset,
    pub t_star: f64,
    pub weighting: WeightingChoice,
    pub link: Link,
    pub target: CalibrationTarget,
    pub target_sample: Option<TargetSample>,
    pub target_moments: Option<MomentsFile>,
    pub outcome_spec: GSpec,
    pub ipsw_model: Option<SamplingScoreModel>,
    pub solver: SolverOptions,
    pub per_arm_censoring: bool,
    pub augmented_norm: AugmentedNormalization,
}

/// Detects binary covariates by support {0, 1}.
pub fn binary_flags(dataset: &Dataset) -> Vec<bool> {
    (0..dataset.covariate_count())
        .map(|j| {
            dataset
                .all_records()
                .all(|r| r.covariates[j] == 0.0 || r.covariates[j] == 1.0)
        })
        .collect()
}

pub fn resolve_gspec(raw: Option<&str>, dataset: &Dataset) -> Result<GSpec> {
    match raw {
        None | Some("auto") => {
            let flags = binary_flags(dataset);
            Ok(GSpec::default_moments(
                dataset.covariate_count(),
                &flags,
                &dataset.covariate_names,
            ))
        }
        Some(spec) => Ok(GSpec::parse(spec, &dataset.covariate_names)?),
    }
}

fn resolve_outcome_spec(
    file: &FileConfig,
    dataset: &Dataset,
) -> Result<(GSpec, Option<String>, Option<String>)> {
    let outcome = file.outcome.clone().unwrap_or_default();
    let base = match outcome.gspec.as_deref() {
        None => {
            // identity terms for every covariate
            let terms = (0..dataset.covariate_count())
                .map(mrct_rmst::data::GFunction::Identity)
                .collect();
            GSpec::new(terms, &dataset.covariate_names)
        }
        Some(spec) => GSpec::parse(spec, &dataset.covariate_names)?,
    };
    let spec = match outcome.misspecify.as_deref() {
        None => base,
        Some(directive) => {
            let Some(name) = directive.strip_prefix("drop:") else {
                bail!("outcome.misspecify must look like 'drop:<covariate>'");
            };
            let idx = dataset
                .covariate_names
                .iter()
                .position(|c| c == name)
                .with_context(|| format!("misspecify references unknown covariate '{name}'"))?;
            let (terms, labels): (Vec<_>, Vec<_>) = base
                .terms
                .iter()
                .cloned()
                .zip(base.labels.iter().cloned())
                .filter(|(t, _)| {
                    use mrct_rmst::data::GFunction::*;
                    !matches!(t, Identity(j) | Power(j, _) | Indicator(j, _) if *j == idx)
                        && !matches!(t, Product(a, b) if *a == idx || *b == idx)
                })
                .unzip();
            if terms.is_empty() {
                bail!("misspecification removed every outcome term");
            }
            GSpec { terms, labels }
        }
    };
    Ok((spec, outcome.gspec, outcome.misspecify))
}

fn resolve_target(
    spec: &TargetSpec,
    dataset: &Dataset,
    gspec: &GSpec,
) -> Result<(CalibrationTarget, Option<TargetSample>, Option<MomentsFile>)> {
    match spec {
        TargetSpec::Pooled => Ok((
            target_from_pooled(dataset, gspec)?,
            Some(pooled_target(dataset)),
            None,
        )),
        TargetSpec::Region(label) => {
            let region_id = dataset
                .region_labels
                .iter()
                .position(|l| l == label)
                .map(|i| i as u32 + 1)
                .with_context(|| format!("no region labeled '{label}' in the dataset"))?;
            let sample = TargetSample {
                covariates: dataset.panels[(region_id - 1) as usize]
                    .records()
                    .iter()
                    .map(|r| r.covariates.clone())
                    .collect(),
            };
            Ok((
                target_from_region(dataset, region_id, gspec)?,
                Some(sample),
                None,
            ))
        }
        TargetSpec::Moments(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read moments file {}", path.display()))?;
            let moments: MomentsFile = serde_json::from_str(&text)
                .with_context(|| format!("cannot parse moments file {}", path.display()))?;
            if moments.terms.len() != moments.values.len() {
                bail!("moments file terms and values differ in length");
            }
            let spec = GSpec::parse(&moments.terms.join(","), &dataset.covariate_names)?;
            Ok((
                CalibrationTarget::new(spec, moments.values.clone()),
                None,
                Some(moments),
            ))
        }
    }
}

pub fn resolve_inputs(args: &AnalyzeArgs) -> Result<(AnalysisInputs, ResolvedAnalyze)> {
    let file = load_file_config(args.config.as_deref())?;
    let input = args
        .input
        .clone()
        .or(file.input.clone())
        .context("no --input file given")?;
    let schema = match &args.schema {
        Some(s) => parse_schema(s)?,
        None => file.schema.clone().context("no --schema given")?,
    };
    let dataset = load_dataset(&input, &schema)?;
    let t_star = args.tstar.or(file.t_star).context("no --tstar given")?;
    if !(t_star > 0.0) {
        bail!("t_star must be positive");
    }
    let weighting = match &args.weighting {
        Some(s) => s.parse()?,
        None => file.weighting.unwrap_or(WeightingChoice::Both),
    };
    let link = parse_link(
        args.link
            .as_deref()
            .or(file.link.as_deref())
            .unwrap_or("identity"),
    )?;
    let gspec_raw = args.gspec.clone().or(file.gspec.clone());
    let calibration_spec = resolve_gspec(gspec_raw.as_deref(), &dataset)?;
    let target_raw = args
        .target
        .clone()
        .or(file.target.clone())
        .unwrap_or_else(|| "pooled".to_string());
    let target_spec = TargetSpec::parse(&target_raw)?;
    let (target, target_sample, target_moments) =
        resolve_target(&target_spec, &dataset, &calibration_spec)?;
    let (outcome_spec, outcome_gspec, outcome_mis) = resolve_outcome_spec(&file, &dataset)?;

    let ipsw_model = match &file.ipsw {
        Some(cfg) if cfg.mode == "known" => {
            let eta = cfg
                .eta
                .clone()
                .context("ipsw.mode=known needs per-region 'eta' rows")?;
            let kind = cfg.kind.as_deref().unwrap_or("log-linear");
            Some(match kind {
                "log-linear" => SamplingScoreModel::KnownLogLinear { eta },
                "logistic-nonlinear" => SamplingScoreModel::KnownLogisticNonlinear { eta },
                other => bail!("unknown ipsw.kind '{other}'"),
            })
        }
        _ => None,
    };
    let per_arm_censoring = match file.censoring.as_deref().unwrap_or("pooled") {
        "pooled" => false,
        "per-arm" => true,
        other => bail!("unknown censoring mode '{other}' (expected pooled|per-arm)"),
    };
    let augmented_norm = match file.augmented.as_deref().unwrap_or("main") {
        "main" => AugmentedNormalization::MainText,
        "arm0-weighted" => AugmentedNormalization::ArmZeroWeighted,
        other => bail!("unknown augmented normalization '{other}' (expected main|arm0-weighted)"),
    };
    let solver_cfg = file.solver.clone().unwrap_or_default();
    let defaults = SolverOptions::default();
    let solver = SolverOptions {
        tol: solver_cfg.tolerance.unwrap_or(defaults.tol),
        max_iter: solver_cfg.max_iterations.unwrap_or(defaults.max_iter),
    };

    let resolved = ResolvedAnalyze {
        input: input.display().to_string(),
        schema,
        t_star,
        weighting,
        gspec: calibration_spec.labels.join(","),
        link: format!("{link:?}").to_lowercase(),
        target: target_raw,
        outcome_gspec,
        outcome_misspecify: outcome_mis,
        ipsw_mode: match &ipsw_model {
            Some(_) => "known".into(),
            None => "estimated".into(),
        },
        censoring: if per_arm_censoring {
            "per-arm".into()
        } else {
            "pooled".into()
        },
        augmented: match augmented_norm {
            AugmentedNormalization::MainText => "main".into(),
            AugmentedNormalization::ArmZeroWeighted => "arm0-weighted".into(),
        },
        solver_tolerance: solver.tol,
        solver_max_iterations: solver.max_iter,
    };
    Ok((
        AnalysisInputs {
            dataset,
            t_star,
            weighting,
            link,
            target,
            target_sample,
            target_moments,
            outcome_spec,
            ipsw_model,
            solver,
            per_arm_censoring,
            augmented_norm,
        },
        resolved,
    ))
}

type RegionResult<T> = Vec<Result<T, String>>;

fn stringify<T>(r: mrct_rmst::error::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

struct EstimateRow {
    estimator: EstimatorTag,
    region_label: String,
    weighting: Weighting,
    outcome: Result<RmstEstimate, String>,
}

pub fn run(args: &AnalyzeArgs) -> Result<bool> {
    let (inputs, resolved) = resolve_inputs(args)?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("cannot create output directory {}", args.out.display()))?;
    let seed = args.seed.unwrap_or(0);

    let dataset = &inputs.dataset;
    let m = dataset.n_regions();
    let t_star = inputs.t_star;

    // shared per-region machinery; regions are independent, so the
    // per-region preprocessing fans out
    let q: Vec<Vec<f64>> = dataset
        .panels
        .iter()
        .map(inverse_propensity_factors)
        .collect();
    let ipc: RegionResult<Vec<f64>> = dataset
        .panels
        .par_iter()
        .map(|p| {
            stringify(if inputs.per_arm_censoring {
                ipc_weights_per_arm(p, t_star)
            } else {
                ipc_weights(p, &censoring_survival(p), t_star)
            })
        })
        .collect();

    // weight families
    let mut families: Vec<(Weighting, RegionResult<WeightSet>)> = Vec::new();
    if inputs.weighting.wants_cw() {
        let sets: RegionResult<WeightSet> = dataset
            .panels
            .par_iter()
            .map(|p| {
                stringify(
                    calibrate_region(p, &inputs.target, &inputs.solver)
                        .map(|s| s.weight_set(p.region_id)),
                )
            })
            .collect();
        families.push((Weighting::Cw, sets));
    }
    if inputs.weighting.wants_ipsw() {
        let sets: RegionResult<WeightSet> = match &inputs.ipsw_model {
            Some(model) => dataset
                .panels
                .iter()
                .map(|p| stringify(ipsw_from_known_score(p, model)))
                .collect(),
            None => match fit_region_membership(dataset).and_then(|fit| {
                for w in &fit.warnings {
                    eprintln!("warning: {w}");
                }
                ipsw_mixture_target(dataset, &fit.model)
            }) {
                Ok(mix) => {
                    for w in &mix.warnings {
                        eprintln!("warning: {w}");
                    }
                    mix.sets.into_iter().map(Ok).collect()
                }
                Err(e) => (0..m).map(|_| Err(e.to_string())).collect(),
            },
        };
        families.push((Weighting::Ipsw, sets));
    }

    // outcome fits (shared by GF and AG)
    let fits: RegionResult<RmstRegressionFit> = dataset
        .panels
        .par_iter()
        .enumerate()
        .map(|(r, p)| {
            ipc[r].as_ref().map_err(|e| e.clone()).and_then(|w| {
                stringify(fit_ipcw_rmst_regression_with_weights(
                    p,
                    &inputs.outcome_spec,
                    t_star,
                    inputs.link,
                    w,
                ))
            })
        })
        .collect();

    // estimator rows
    let mut rows: Vec<EstimateRow> = Vec::new();
    for (r, panel) in dataset.panels.iter().enumerate() {
        let label = dataset.region_labels[r].clone();
        let uniform = WeightSet::uniform(panel.region_id, panel.n());
        rows.push(EstimateRow {
            estimator: EstimatorTag::Naive,
            region_label: label.clone(),
            weighting: Weighting::None,
            outcome: stringify(km_difference_estimate(
                panel,
                &uniform,
                &q[r],
                t_star,
                EstimatorTag::Naive,
                Weighting::None,
            )),
        });
        for (wtag, sets) in &families {
            let xi = &sets[r];
            for estimator in [
                EstimatorTag::Km,
                EstimatorTag::Gf,
                EstimatorTag::Hj,
                EstimatorTag::Ag,
            ] {
                let outcome = xi
                    .as_ref()
                    .map_err(|e| e.clone())
                    .and_then(|xi| match estimator {
                        EstimatorTag::Km => stringify(km_difference_estimate(
                            panel,
                            xi,
                            &q[r],
                            t_star,
                            EstimatorTag::Km,
                            *wtag,
                        )),
                        EstimatorTag::Gf => fits[r]
                            .as_ref()
                            .map_err(|e| e.clone())
                            .and_then(|fit| stringify(g_formula_estimate(fit, panel, xi, *wtag))),
                        EstimatorTag::Hj => ipc[r].as_ref().map_err(|e| e.clone()).and_then(|w| {
                            stringify(hajek_estimate(panel, xi, &q[r], w, t_star, *wtag))
                        }),
                        EstimatorTag::Ag => {
                            let pieces = ipc[r].as_ref().map_err(|e| e.clone()).and_then(|w| {
                                fits[r].as_ref().map_err(|e| e.clone()).map(|fit| (w, fit))
                            });
                            pieces.and_then(|(w, fit)| {
                                stringify(augmented_estimate(
                                    panel,
                                    xi,
                                    &q[r],
                                    w,
                                    fit,
                                    t_star,
                                    *wtag,
                                    inputs.augmented_norm,
                                ))
                            })
                        }
                        _ => unreachable!(),
                    });
                rows.push(EstimateRow {
                    estimator,
                    region_label: label.clone(),
                    weighting: *wtag,
                    outcome,
                });
            }
        }
    }

    // estimates.csv
    let mut csv =
        String::from("estimator,region,estimate,variance,ci_low,ci_high,weighting,status\n");
    let mut all_ok = true;
    for row in &rows {
        match &row.outcome {
            Ok(est) => {
                let (lo, hi) = confidence_interval(est, 0.95);
                csv.push_str(&csv_line(&[
                    row.estimator.to_string(),
                    row.region_label.clone(),
                    num17(est.estimate),
                    num17(est.variance),
                    num17(lo),
                    num17(hi),
                    row.weighting.to_string(),
                    "ok".to_string(),
                ]));
            }
            Err(msg) => {
                all_ok = false;
                csv.push_str(&csv_line(&[
                    row.estimator.to_string(),
                    row.region_label.clone(),
                    "NA".into(),
                    "NA".into(),
                    "NA".into(),
                    "NA".into(),
                    row.weighting.to_string(),
                    format!("error: {}", msg.replace(',', ";")),
                ]));
            }
        }
    }
    write_file(&args.out.join("estimates.csv"), &csv)?;

    // consistency.csv: one row per estimator x weighting with the global
    // pooled estimate
    let mut groups: BTreeMap<(String, String), Vec<RmstEstimate>> = BTreeMap::new();
    for row in &rows {
        if let Ok(est) = &row.outcome {
            groups
                .entry((row.estimator.to_string(), row.weighting.to_string()))
                .or_default()
                .push(est.clone());
        }
    }
    let mut consistency_csv = String::from(
        "estimator,weighting,statistic,df,p_value,global_estimate,global_variance,global_ci_low,global_ci_high,status\n",
    );
    for ((estimator, weighting), ests) in &groups {
        let status_row = |status: String| {
            csv_line(&[
                estimator.clone(),
                weighting.clone(),
                "NA".into(),
                "NA".into(),
                "NA".into(),
                "NA".into(),
                "NA".into(),
                "NA".into(),
                "NA".into(),
                status,
            ])
        };
        if ests.len() != m {
            consistency_csv.push_str(&status_row(format!(
                "error: only {} of {m} regions estimable",
                ests.len()
            )));
            continue;
        }
        match (consistency_test(ests), global_estimate(ests)) {
            (Ok(test), Ok(global)) => {
                let (lo, hi) = confidence_interval(&global, 0.95);
                consistency_csv.push_str(&csv_line(&[
                    estimator.clone(),
                    weighting.clone(),
                    num17(test.statistic),
                    test.df.to_string(),
                    num17(test.p_value),
                    num17(global.estimate),
                    num17(global.variance),
                    num17(lo),
                    num17(hi),
                    "ok".to_string(),
                ]));
            }
            (Err(e), _) | (_, Err(e)) => {
                all_ok = false;
                consistency_csv.push_str(&status_row(format!(
                    "error: {}",
                    e.to_string().replace(',', ";")
                )));
            }
        }
    }
    write_file(&args.out.join("consistency.csv"), &consistency_csv)?;

    // balance.csv
    let weighted_refs: Vec<(Weighting, Vec<WeightSet>)> = families
        .iter()
        .filter_map(|(tag, sets)| {
            let ok: Vec<WeightSet> = sets.iter().filter_map(|s| s.clone().ok()).collect();
            (ok.len() == m).then_some((*tag, ok))
        })
        .collect();
    let balance_csv = match (&inputs.target_sample, &inputs.target_moments) {
        (Some(sample), _) => {
            let refs: Vec<(Weighting, &[WeightSet])> = weighted_refs
                .iter()
                .map(|(t, s)| (*t, s.as_slice()))
                .collect();
            let report = balance_report(dataset, sample, &refs, None)?;
            crate::diagnose::balance_rows_to_csv(&report, &dataset.region_labels)
        }
        (None, Some(moments)) => crate::diagnose::balance_vs_moments_csv(
            dataset,
            moments,
            &weighted_refs,
            &dataset.region_labels,
        )?,
        (None, None) => unreachable!("target always yields a sample or moments"),
    };
    write_file(&args.out.join("balance.csv"), &balance_csv)?;

    // survival curves per region x arm x weighting family
    for (r, panel) in dataset.panels.iter().enumerate() {
        let mut curve_families: Vec<(Weighting, WeightSet)> = vec![(
            Weighting::None,
            WeightSet::uniform(panel.region_id, panel.n()),
        )];
        for (tag, sets) in &families {
            if let Ok(set) = &sets[r] {
                curve_families.push((*tag, set.clone()));
            }
        }
        for (tag, xi) in &curve_families {
            for arm in [0u8, 1] {
                if let Ok(riskset) =
                    mrct_rmst::survival::weighted_risk_set(panel, arm, xi, &q[r], t_star)
                {
                    let dropped = riskset.degenerate_terms();
                    if dropped > 0 {
                        eprintln!(
                            "warning: region {} arm {arm} ({tag}): {dropped} terminal event time(s) take the whole risk mass and are dropped from the variance",
                            dataset.region_labels[r]
                        );
                    }
                }
                match weighted_km_curve(panel, arm, xi, &q[r], t_star) {
                    Ok(curve) => {
                        let mut text = String::from("time,value\n");
                        text.push_str(&csv_line(&[num17(0.0), num17(1.0)]));
                        for (t, v) in curve.times().iter().zip(curve.values()) {
                            text.push_str(&csv_line(&[num17(*t), num17(*v)]));
                        }
                        let name = format!(
                            "survival_region{}_arm{arm}_{}.csv",
                            panel.region_id,
                            tag.to_string().to_lowercase()
                        );
                        write_file(&args.out.join(name), &text)?;
                    }
                    Err(e) => eprintln!(
                        "warning: no survival curve for region {} arm {arm}: {e}",
                        dataset.region_labels[r]
                    ),
                }
            }
        }
    }

    write_manifest(&args.out, "analyze", seed, args.workers, resolved)?;
    Ok(all_ok)
}
