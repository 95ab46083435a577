//! The `simulate` command: Monte Carlo evaluation of the estimator menu
//! with reproducible parallel replication.

use anyhow::{bail, Context, Result};
use serde::Serialize;

use mrct_rmst::simulate::{full_menu, run_monte_carlo, Arm, ScenarioConfig};

use crate::config::write_manifest;
use crate::output::{csv_line, num17, write_file};
use crate::SimulateArgs;

#[derive(Serialize)]
struct ResolvedSimulate {
    scenario: ScenarioConfig,
    estimators: Vec<String>,
}

pub fn run(args: &SimulateArgs) -> Result<bool> {
    let mut cfg = match (&args.scenario, &args.scenario_file) {
        (Some(id), None) => ScenarioConfig::preset(*id, 0, 0)?,
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read scenario file {}", path.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("cannot parse scenario file {}", path.display()))?
        }
        (None, None) => bail!("pass --scenario <1-4> or --scenario-file <path>"),
        (Some(_), Some(_)) => unreachable!("clap forbids both"),
    };
    if let Some(reps) = args.reps {
        cfg.replications = reps;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if cfg.replications == 0 {
        bail!("need --reps (or a scenario file with replications > 0)");
    }
    let menu: Vec<Arm> = match &args.estimators {
        None => full_menu(),
        Some(list) => list
            .split(',')
            .map(|s| s.parse::<Arm>().map_err(anyhow::Error::from))
            .collect::<Result<_>>()?,
    };

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("cannot create output directory {}", args.out.display()))?;

    let output = run_monte_carlo(&cfg, &menu, args.workers)?;
    for warning in &output.warnings {
        eprintln!("warning: {warning}");
    }

    let mut summary = String::from(
        "arm,region,truth,n_ok,n_fail,mean_estimate,mean_bias,empirical_sd,mean_se,coverage95\n",
    );
    for row in &output.rows {
        summary.push_str(&csv_line(&[
            row.arm.to_string(),
            row.region.to_string(),
            num17(row.truth),
            row.n_ok.to_string(),
            row.n_fail.to_string(),
            num17(row.mean_estimate),
            num17(row.mean_bias),
            num17(row.empirical_sd),
            num17(row.mean_se),
            num17(row.coverage95),
        ]));
    }
    write_file(&args.out.join("summary.csv"), &summary)?;

    let mut estimates = String::from("rep,arm,region,estimate,variance\n");
    for est in &output.estimates {
        estimates.push_str(&csv_line(&[
            est.rep.to_string(),
            est.arm.to_string(),
            est.region.to_string(),
            num17(est.estimate),
            num17(est.variance),
        ]));
    }
    write_file(&args.out.join("estimates.csv"), &estimates)?;

    if !output.failures.is_empty() {
        let mut failures = String::from("rep,arm,region,message\n");
        for f in &output.failures {
            failures.push_str(&csv_line(&[
                f.rep.to_string(),
                f.arm.to_string(),
                f.region.to_string(),
                f.message.replace(',', ";"),
            ]));
        }
        write_file(&args.out.join("failures.csv"), &failures)?;
    }

    let resolved = ResolvedSimulate {
        scenario: cfg.clone(),
        estimators: menu.iter().map(|a| a.to_string()).collect(),
    };
    write_manifest(&args.out, "simulate", cfg.seed, args.workers, resolved)?;
    Ok(true)
}
