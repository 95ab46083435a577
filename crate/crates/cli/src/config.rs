//! Run configuration: CLI flags merged over an optional JSON config file
//! (flags win), plus the reproducibility manifest.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use mrct_rmst::data::SchemaMapping;
use mrct_rmst::regression::Link;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightingChoice {
    Cw,
    Ipsw,
    Both,
}

impl WeightingChoice {
    pub fn wants_cw(self) -> bool {
        matches!(self, WeightingChoice::Cw | WeightingChoice::Both)
    }

    pub fn wants_ipsw(self) -> bool {
        matches!(self, WeightingChoice::Ipsw | WeightingChoice::Both)
    }
}

impl std::str::FromStr for WeightingChoice {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cw" => Ok(WeightingChoice::Cw),
            "ipsw" => Ok(WeightingChoice::Ipsw),
            "both" => Ok(WeightingChoice::Both),
            other => bail!("unknown weighting '{other}' (expected cw|ipsw|both)"),
        }
    }
}

/// Which population the regions are standardized to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "value")]
pub enum TargetSpec {
    /// Pooled trial population (all regions, unit weights).
    Pooled,
    /// One region of the dataset, by its file label.
    Region(String),
    /// Moment targets from a JSON file (no individual-level data needed).
    Moments(PathBuf),
}

impl TargetSpec {
    pub fn parse(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("pooled") {
            return Ok(TargetSpec::Pooled);
        }
        if let Some(label) = s.strip_prefix("region:") {
            return Ok(TargetSpec::Region(label.to_string()));
        }
        if let Some(path) = s.strip_prefix("moments:") {
            return Ok(TargetSpec::Moments(PathBuf::from(path)));
        }
        bail!("unknown target '{s}' (expected pooled | region:<label> | moments:<file>)")
    }
}

/// Moment-target file: named covariate-function terms with their target
/// values, e.g. `{"terms": ["age", "age^2"], "values": [61.2, 3900.1]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MomentsFile {
    pub terms: Vec<String>,
    pub values: Vec<f64>,
}

/// Known sampling-score coefficients for IPSW, as config-file input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IpswConfig {
    /// `known` or `estimated`.
    pub mode: String,
    /// For known mode: `log-linear` or `logistic-nonlinear`.
    #[serde(default)]
    pub kind: Option<String>,
    /// For known mode: per-region `[eta0, eta1, ...]` rows, in region
    /// first-appearance order.
    #[serde(default)]
    pub eta: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct OutcomeConfig {
    #[serde(default)]
    pub link: Option<String>,
    #[serde(default)]
    pub gspec: Option<String>,
    /// `drop:<covariate>` deliberately removes a covariate's terms from
    /// the outcome model.
    #[serde(default)]
    pub misspecify: Option<String>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SolverConfig {
    #[serde(default)]
    pub tolerance: Option<f64>,
    #[serde(default)]
    pub max_iterations: Option<usize>,
}

/// JSON config file contents; every field optional, flags take
/// precedence.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct FileConfig {
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default)]
    pub schema: Option<SchemaMapping>,
    #[serde(default)]
    pub t_star: Option<f64>,
    #[serde(default)]
    pub weighting: Option<WeightingChoice>,
    #[serde(default)]
    pub gspec: Option<String>,
    #[serde(default)]
    pub link: Option<String>,
    #[serde(default)]
    pub target: Option<String>,
    #[serde(default)]
    pub ipsw: Option<IpswConfig>,
    #[serde(default)]
    pub outcome: Option<OutcomeConfig>,
    #[serde(default)]
    pub solver: Option<SolverConfig>,
    /// `pooled` (default) or `per-arm` censoring-survival estimation for
    /// the IPC weights.
    #[serde(default)]
    pub censoring: Option<String>,
    /// `main` (default) or `arm0-weighted` normalization of the
    /// Augmented estimator's model-mean term.
    #[serde(default)]
    pub augmented: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub workers: Option<usize>,
}

pub fn load_file_config(path: Option<&Path>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("cannot read config file {}", p.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("cannot parse config file {}", p.display()))
        }
    }
}

/// Parses `time=t,event=e,treatment=z,region=r,covariates=x1+x2`.
pub fn parse_schema(s: &str) -> Result<SchemaMapping> {
    let mut time = None;
    let mut event = None;
    let mut treatment = None;
    let mut region = None;
    let mut covariates = Vec::new();
    for part in s.split(',') {
        let (key, value) = part
            .split_once('=')
            .with_context(|| format!("schema entry '{part}' is not key=value"))?;
        match key.trim() {
            "time" => time = Some(value.trim().to_string()),
            "event" => event = Some(value.trim().to_string()),
            "treatment" => treatment = Some(value.trim().to_string()),
            "region" => region = Some(value.trim().to_string()),
            "covariates" => {
                covariates = value
                    .split('+')
                    .map(|c| c.trim().to_string())
                    .filter(|c| !c.is_empty())
                    .collect();
            }
            other => bail!("unknown schema key '{other}'"),
        }
    }
    let missing = |what: &str| format!("schema is missing '{what}='");
    Ok(SchemaMapping {
        time: time.context(missing("time"))?,
        event: event.context(missing("event"))?,
        treatment: treatment.context(missing("treatment"))?,
        region: region.context(missing("region"))?,
        covariates: if covariates.is_empty() {
            bail!("schema needs at least one covariate (covariates=a+b)")
        } else {
            covariates
        },
    })
}

pub fn parse_link(s: &str) -> Result<Link> {
    match s.to_ascii_lowercase().as_str() {
        "identity" => Ok(Link::Identity),
        "log" => Ok(Link::Log),
        other => bail!("unknown link '{other}' (expected identity|log)"),
    }
}

/// 64-bit FNV-1a over the canonical config serialization.
pub fn config_hash(canonical: &str) -> String {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in canonical.as_bytes() {
        hash ^= *byte as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{hash:016x}")
}

/// Reproducibility manifest written next to every command's outputs.
#[derive(Serialize)]
pub struct Manifest<'a, C: Serialize> {
    pub command: &'a str,
    pub version: &'a str,
    pub rng: &'a str,
    pub seed: u64,
    pub workers: Option<usize>,
    pub config: C,
    pub config_hash: String,
}

pub fn write_manifest<C: Serialize>(
    out_dir: &Path,
    command: &str,
    seed: u64,
    workers: Option<usize>,
    config: C,
) -> Result<()> {
    let canonical = serde_json::to_string(&config)?;
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        rng: "philox2x64-10",
        seed,
        workers,
        config,
        config_hash: config_hash(&canonical),
    };
    let path = out_dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}
