//! The `diagnose` command: weighted absolute standardized mean
//! differences of every covariate against the target population, plus
//! effective sample sizes of the weight sets.

use anyhow::{bail, Context, Result};
use serde::Serialize;

use mrct_rmst::calibrate::{calibrate_region, effective_sample_size, SolverOptions};
use mrct_rmst::data::{load_panels_str, CalibrationTarget, Dataset, GFunction, GSpec};
use mrct_rmst::diagnostics::{
    balance_report, pooled_target, smd_binary_from_prevalences, smd_continuous_from_moments,
    weighted_moments, BalanceRow,
};
use mrct_rmst::ipsw::{fit_region_membership, ipsw_mixture_target};
use mrct_rmst::weights::{WeightSet, Weighting};

use crate::config::{
    load_file_config, parse_schema, write_manifest, MomentsFile, TargetSpec, WeightingChoice,
};
use crate::output::{csv_line, num17, write_file};
use crate::DiagnoseArgs;

#[derive(Serialize)]
struct ResolvedDiagnose {
    input: String,
    t_star: Option<f64>,
    weighting: WeightingChoice,
    gspec: String,
    target: String,
}

pub fn balance_rows_to_csv(rows: &[BalanceRow], labels: &[String]) -> String {
    let mut csv = String::from("covariate,region,weighting,smd\n");
    for row in rows {
        csv.push_str(&csv_line(&[
            row.covariate.clone(),
            labels[(row.region - 1) as usize].clone(),
            row.weighting.to_string(),
            row.smd.map(num17).unwrap_or_else(|| "NA".to_string()),
        ]));
    }
    csv
}

/// Balance against moment targets only: the target mean comes from each
/// covariate's identity term, its variance from a matching square term
/// (or p(1-p) for binary covariates).
pub fn balance_vs_moments_csv(
    dataset: &Dataset,
    moments: &MomentsFile,
    weighted: &[(Weighting, Vec<WeightSet>)],
    labels: &[String],
) -> Result<String> {
    let spec = GSpec::parse(&moments.terms.join(","), &dataset.covariate_names)?;
    let mut csv = String::from("covariate,region,weighting,smd\n");
    for (j, name) in dataset.covariate_names.iter().enumerate() {
        let mean_idx = spec
            .terms
            .iter()
            .position(|t| matches!(t, GFunction::Identity(k) if *k == j));
        let Some(mean_idx) = mean_idx else {
            continue; // no first-moment target for this covariate
        };
        let t_mean = moments.values[mean_idx];
        let sq_idx = spec
            .terms
            .iter()
            .position(|t| matches!(t, GFunction::Power(k, 2) if *k == j));
        let binary = dataset
            .all_records()
            .all(|r| r.covariates[j] == 0.0 || r.covariates[j] == 1.0);
        let t_var = match sq_idx {
            Some(k) => Some(moments.values[k] - t_mean * t_mean),
            None if binary => Some(t_mean * (1.0 - t_mean)),
            None => None,
        };
        for panel in &dataset.panels {
            let col: Vec<f64> = panel.records().iter().map(|r| r.covariates[j]).collect();
            let mut families: Vec<(Weighting, Vec<f64>)> =
                vec![(Weighting::None, vec![1.0; col.len()])];
            for (tag, sets) in weighted {
                if let Some(set) = sets.iter().find(|s| s.region_id == panel.region_id) {
                    families.push((*tag, set.values().to_vec()));
                }
            }
            for (tag, w) in families {
                let (mean, var) = weighted_moments(&col, &w);
                let smd = if binary {
                    smd_binary_from_prevalences(mean, t_mean)
                } else {
                    match (var, t_var) {
                        (Some(v), Some(tv)) => smd_continuous_from_moments(mean, v, t_mean, tv),
                        _ => None,
                    }
                };
                csv.push_str(&csv_line(&[
                    name.clone(),
                    labels[(panel.region_id - 1) as usize].clone(),
                    tag.to_string(),
                    smd.map(num17).unwrap_or_else(|| "NA".to_string()),
                ]));
            }
        }
    }
    Ok(csv)
}

pub fn run(args: &DiagnoseArgs) -> Result<bool> {
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
    let text = std::fs::read_to_string(&input)
        .with_context(|| format!("cannot read input file {}", input.display()))?;
    let loaded = load_panels_str(&text, &schema)?;
    let weighting = match &args.weighting {
        Some(s) => s.parse()?,
        None => file.weighting.unwrap_or(WeightingChoice::Cw),
    };
    let target_raw = args
        .target
        .clone()
        .or(file.target.clone())
        .unwrap_or_else(|| "pooled".to_string());
    let target_spec = TargetSpec::parse(&target_raw)?;

    // single-region data can only be diagnosed against external moments
    if loaded.panels.len() < 2 && !matches!(target_spec, TargetSpec::Moments(_)) {
        bail!(
            "dataset has a single region; balance needs a contrast, so pass target=moments:<file>"
        );
    }
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("cannot create output directory {}", args.out.display()))?;

    let csv;
    let mut ess_rows: Vec<(String, Weighting, f64)> = Vec::new();
    match &target_spec {
        TargetSpec::Moments(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read moments file {}", path.display()))?;
            let moments: MomentsFile = serde_json::from_str(&text)
                .with_context(|| format!("cannot parse moments file {}", path.display()))?;
            if moments.terms.len() != moments.values.len() {
                bail!("moments file terms and values differ in length");
            }
            let spec = GSpec::parse(&moments.terms.join(","), &loaded.covariate_names)?;
            let target = CalibrationTarget::new(spec, moments.values.clone());
            let mut families: Vec<(Weighting, Vec<WeightSet>)> = Vec::new();
            if weighting.wants_cw() {
                let mut sets = Vec::new();
                for panel in &loaded.panels {
                    let sol = calibrate_region(panel, &target, &SolverOptions::default())?;
                    let set = sol.weight_set(panel.region_id);
                    ess_rows.push((
                        loaded.region_labels[(panel.region_id - 1) as usize].clone(),
                        Weighting::Cw,
                        effective_sample_size(set.values()),
                    ));
                    sets.push(set);
                }
                families.push((Weighting::Cw, sets));
            }
            if weighting.wants_ipsw() {
                eprintln!("warning: estimated IPSW needs multi-region individual data; skipped under a moments target");
            }
            // moments mode works on the raw panels without the M>=2 gate
            let dataset = Dataset {
                panels: loaded.panels.clone(),
                covariate_names: loaded.covariate_names.clone(),
                region_labels: loaded.region_labels.clone(),
            };
            csv = balance_vs_moments_csv(&dataset, &moments, &families, &loaded.region_labels)?;
        }
        _ => {
            let dataset =
                Dataset::from_panels(loaded.panels.clone(), loaded.covariate_names.clone()).map(
                    |mut ds| {
                        ds.region_labels = loaded.region_labels.clone();
                        ds
                    },
                )?;
            let gspec_raw = args.gspec.clone().or(file.gspec.clone());
            let gspec = crate::analyze::resolve_gspec(gspec_raw.as_deref(), &dataset)?;
            let target = match &target_spec {
                TargetSpec::Pooled => mrct_rmst::data::target_from_pooled(&dataset, &gspec)?,
                TargetSpec::Region(label) => {
                    let region_id = dataset
                        .region_labels
                        .iter()
                        .position(|l| l == label)
                        .map(|i| i as u32 + 1)
                        .with_context(|| format!("no region labeled '{label}'"))?;
                    mrct_rmst::data::target_from_region(&dataset, region_id, &gspec)?
                }
                TargetSpec::Moments(_) => unreachable!(),
            };
            let sample = match &target_spec {
                TargetSpec::Region(label) => {
                    let idx = dataset
                        .region_labels
                        .iter()
                        .position(|l| l == label)
                        .unwrap();
                    mrct_rmst::diagnostics::TargetSample {
                        covariates: dataset.panels[idx]
                            .records()
                            .iter()
                            .map(|r| r.covariates.clone())
                            .collect(),
                    }
                }
                _ => pooled_target(&dataset),
            };
            let mut families: Vec<(Weighting, Vec<WeightSet>)> = Vec::new();
            if weighting.wants_cw() {
                let mut sets = Vec::new();
                for panel in &dataset.panels {
                    let sol = calibrate_region(panel, &target, &SolverOptions::default())?;
                    let set = sol.weight_set(panel.region_id);
                    ess_rows.push((
                        dataset.region_labels[(panel.region_id - 1) as usize].clone(),
                        Weighting::Cw,
                        effective_sample_size(set.values()),
                    ));
                    sets.push(set);
                }
                families.push((Weighting::Cw, sets));
            }
            if weighting.wants_ipsw() {
                let fit = fit_region_membership(&dataset)?;
                for w in &fit.warnings {
                    eprintln!("warning: {w}");
                }
                let mix = ipsw_mixture_target(&dataset, &fit.model)?;
                for w in &mix.warnings {
                    eprintln!("warning: {w}");
                }
                for set in &mix.sets {
                    ess_rows.push((
                        dataset.region_labels[(set.region_id - 1) as usize].clone(),
                        Weighting::Ipsw,
                        effective_sample_size(set.values()),
                    ));
                }
                families.push((Weighting::Ipsw, mix.sets));
            }
            let refs: Vec<(Weighting, &[WeightSet])> =
                families.iter().map(|(t, s)| (*t, s.as_slice())).collect();
            let report = balance_report(&dataset, &sample, &refs, None)?;
            csv = balance_rows_to_csv(&report, &dataset.region_labels);
        }
    }
    write_file(&args.out.join("balance.csv"), &csv)?;

    let mut ess_csv = String::from("region,weighting,effective_sample_size\n");
    for (label, tag, ess) in &ess_rows {
        ess_csv.push_str(&csv_line(&[label.clone(), tag.to_string(), num17(*ess)]));
    }
    write_file(&args.out.join("ess.csv"), &ess_csv)?;

    let resolved = ResolvedDiagnose {
        input: input.display().to_string(),
        t_star: None,
        weighting,
        gspec: args
            .gspec
            .clone()
            .or(file.gspec)
            .unwrap_or_else(|| "auto".into()),
        target: target_raw,
    };
    write_manifest(&args.out, "diagnose", 0, None, resolved)?;
    Ok(true)
}
