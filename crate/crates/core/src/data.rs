//! Trial data structures, input validation, and CSV ingestion.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One enrolled patient.
#[derive(Clone, Debug, PartialEq)]
pub struct SubjectRecord {
    /// Observed follow-up time (event or censoring), `min(T, C)`.
    pub time: f64,
    /// 1 if the event was observed, 0 if censored.
    pub event: u8,
    /// 1 for the experimental arm, 0 for control.
    pub treatment: u8,
    /// Region id in `1..=M`.
    pub region: u32,
    /// Covariate vector, same length for every record in a dataset.
    pub covariates: Vec<f64>,
}

/// All records of one region plus the treatment propensity.
#[derive(Clone, Debug)]
pub struct RegionPanel {
    pub region_id: u32,
    records: Vec<SubjectRecord>,
    propensity: Vec<f64>,
}

impl RegionPanel {
    /// Builds a panel, enforcing the invariants: at least two subjects,
    /// both treatment arms present, valid times and indicators, equal
    /// covariate lengths. The propensity defaults to the observed treated
    /// fraction, constant across subjects.
    pub fn new(region_id: u32, records: Vec<SubjectRecord>) -> Result<Self> {
        Self::validate(region_id, &records, &region_id.to_string())?;
        let treated = records.iter().filter(|r| r.treatment == 1).count();
        let pi = treated as f64 / records.len() as f64;
        let propensity = vec![pi; records.len()];
        Ok(RegionPanel {
            region_id,
            records,
            propensity,
        })
    }

    /// As [`RegionPanel::new`] but error messages cite `label`, the
    /// region name as it appeared in the input file.
    pub fn with_label(region_id: u32, records: Vec<SubjectRecord>, label: &str) -> Result<Self> {
        Self::validate(region_id, &records, label)?;
        let treated = records.iter().filter(|r| r.treatment == 1).count();
        let pi = treated as f64 / records.len() as f64;
        let propensity = vec![pi; records.len()];
        Ok(RegionPanel {
            region_id,
            records,
            propensity,
        })
    }

    fn validate(region_id: u32, records: &[SubjectRecord], label: &str) -> Result<()> {
        if records.len() < 2 {
            return Err(Error::RegionTooSmall {
                label: label.to_string(),
            });
        }
        let p = records[0].covariates.len();
        let mut arms = [false, false];
        for (i, r) in records.iter().enumerate() {
            if !(r.time.is_finite() && r.time >= 0.0) {
                return Err(Error::InvalidTime {
                    value: r.time,
                    row: i + 1,
                });
            }
            if r.event > 1 {
                return Err(Error::NonBinary {
                    field: "event".into(),
                    value: r.event as f64,
                    row: i + 1,
                });
            }
            if r.treatment > 1 {
                return Err(Error::NonBinary {
                    field: "treatment".into(),
                    value: r.treatment as f64,
                    row: i + 1,
                });
            }
            if r.covariates.len() != p {
                return Err(Error::CovariateLength {
                    expected: p,
                    got: r.covariates.len(),
                });
            }
            debug_assert_eq!(r.region, region_id);
            arms[r.treatment as usize] = true;
        }
        if !(arms[0] && arms[1]) {
            return Err(Error::SingleArmRegion {
                label: label.to_string(),
            });
        }
        Ok(())
    }

    /// Replaces the per-subject treatment propensity.
    pub fn set_propensity(&mut self, propensity: Vec<f64>) -> Result<()> {
        assert_eq!(propensity.len(), self.records.len());
        for (i, &p) in propensity.iter().enumerate() {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::InvalidPropensity {
                    value: p,
                    subject: i,
                });
            }
        }
        self.propensity = propensity;
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    pub fn records(&self) -> &[SubjectRecord] {
        &self.records
    }

    pub fn propensity(&self) -> &[f64] {
        &self.propensity
    }

    /// Number of covariates per subject.
    pub fn covariate_count(&self) -> usize {
        self.records[0].covariates.len()
    }
}

/// One covariate function `g_l` from the closed declarative algebra.
///
/// The algebra (identity, powers up to 3, pairwise products, level
/// indicators) keeps moment-constraint specifications serializable in
/// config files while covering the moment matching used in practice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum GFunction {
    /// `X_j`
    Identity(usize),
    /// `X_j^k` for k in 2..=3
    Power(usize, u32),
    /// `X_j * X_k`
    Product(usize, usize),
    /// `I[X_j == level]`
    Indicator(usize, f64),
}

impl GFunction {
    fn max_index(&self) -> usize {
        match *self {
            GFunction::Identity(j) | GFunction::Power(j, _) | GFunction::Indicator(j, _) => j,
            GFunction::Product(j, k) => j.max(k),
        }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            GFunction::Identity(j) => x[j],
            GFunction::Power(j, k) => x[j].powi(k as i32),
            GFunction::Product(j, k) => x[j] * x[k],
            GFunction::Indicator(j, level) => {
                if x[j] == level {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn label(&self, names: &[String]) -> String {
        let name = |j: usize| {
            names
                .get(j)
                .cloned()
                .unwrap_or_else(|| format!("X{}", j + 1))
        };
        match *self {
            GFunction::Identity(j) => name(j),
            GFunction::Power(j, k) => format!("{}^{}", name(j), k),
            GFunction::Product(j, k) => format!("{}*{}", name(j), name(k)),
            GFunction::Indicator(j, level) => format!("{}=={}", name(j), level),
        }
    }
}

/// An ordered list of covariate functions with display labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GSpec {
    pub terms: Vec<GFunction>,
    pub labels: Vec<String>,
}

impl GSpec {
    pub fn new(terms: Vec<GFunction>, names: &[String]) -> Self {
        let labels = terms.iter().map(|t| t.label(names)).collect();
        GSpec { terms, labels }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Checks every term against a covariate vector of length `p`.
    pub fn validate(&self, p: usize) -> Result<()> {
        for (term, label) in self.terms.iter().zip(&self.labels) {
            let idx = term.max_index();
            if idx >= p {
                return Err(Error::GSpecIndex {
                    term: label.clone(),
                    index: idx,
                    p,
                });
            }
            if let GFunction::Power(_, k) = term {
                if !(2..=3).contains(k) {
                    return Err(Error::GSpecParse {
                        term: label.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// First and second moments of every covariate: `[X, X²]` layout.
    pub fn moments_k2(p: usize, names: &[String]) -> Self {
        let mut terms = Vec::with_capacity(2 * p);
        for j in 0..p {
            terms.push(GFunction::Identity(j));
        }
        for j in 0..p {
            terms.push(GFunction::Power(j, 2));
        }
        GSpec::new(terms, names)
    }

    /// First moments for binary covariates, first and second for the rest.
    /// `binary[j]` marks covariate `j` as binary.
    pub fn default_moments(p: usize, binary: &[bool], names: &[String]) -> Self {
        let mut terms = Vec::with_capacity(2 * p);
        for j in 0..p {
            terms.push(GFunction::Identity(j));
        }
        for j in 0..p {
            if !binary[j] {
                terms.push(GFunction::Power(j, 2));
            }
        }
        GSpec::new(terms, names)
    }

    /// Parses a comma-separated term list such as
    /// `"age, age^2, sex, age*sex, killip==1"` against covariate names.
    pub fn parse(spec: &str, names: &[String]) -> Result<Self> {
        let find = |token: &str| -> Result<usize> {
            names
                .iter()
                .position(|n| n == token.trim())
                .ok_or_else(|| Error::GSpecParse {
                    term: token.trim().to_string(),
                })
        };
        let mut terms = Vec::new();
        for raw in spec.split(',') {
            let term = raw.trim();
            if term.is_empty() {
                continue;
            }
            if let Some((lhs, rhs)) = term.split_once("==") {
                let level: f64 = rhs.trim().parse().map_err(|_| Error::GSpecParse {
                    term: term.to_string(),
                })?;
                terms.push(GFunction::Indicator(find(lhs)?, level));
            } else if let Some((lhs, rhs)) = term.split_once('^') {
                let k: u32 = rhs.trim().parse().map_err(|_| Error::GSpecParse {
                    term: term.to_string(),
                })?;
                if !(2..=3).contains(&k) {
                    return Err(Error::GSpecParse {
                        term: term.to_string(),
                    });
                }
                terms.push(GFunction::Power(find(lhs)?, k));
            } else if let Some((lhs, rhs)) = term.split_once('*') {
                terms.push(GFunction::Product(find(lhs)?, find(rhs)?));
            } else {
                terms.push(GFunction::Identity(find(term)?));
            }
        }
        if terms.is_empty() {
            return Err(Error::GSpecParse {
                term: spec.to_string(),
            });
        }
        Ok(GSpec::new(terms, names))
    }
}

/// Evaluates a [`GSpec`] on one covariate vector.
pub fn evaluate_g(spec: &GSpec, covariates: &[f64]) -> Result<Vec<f64>> {
    spec.validate(covariates.len())?;
    Ok(spec.terms.iter().map(|t| t.eval(covariates)).collect())
}

/// Target moments the calibration weights must reproduce.
#[derive(Clone, Debug)]
pub struct CalibrationTarget {
    pub spec: GSpec,
    pub g_tilde: Vec<f64>,
}

impl CalibrationTarget {
    pub fn new(spec: GSpec, g_tilde: Vec<f64>) -> Self {
        assert_eq!(spec.len(), g_tilde.len());
        assert!(!g_tilde.is_empty(), "need at least one moment");
        assert!(g_tilde.iter().all(|v| v.is_finite()));
        CalibrationTarget { spec, g_tilde }
    }
}

/// A multi-regional trial dataset: one panel per region.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub panels: Vec<RegionPanel>,
    pub covariate_names: Vec<String>,
    /// Original region labels, indexed by `region_id - 1`.
    pub region_labels: Vec<String>,
}

impl Dataset {
    pub fn from_panels(panels: Vec<RegionPanel>, covariate_names: Vec<String>) -> Result<Self> {
        if panels.len() < 2 {
            return Err(Error::TooFewRegions {
                needed: 2,
                found: panels.len(),
            });
        }
        for (i, panel) in panels.iter().enumerate() {
            if panel.region_id as usize != i + 1 {
                return Err(Error::Config(format!(
                    "region ids must cover 1..=M in order; panel {} has id {}",
                    i + 1,
                    panel.region_id
                )));
            }
        }
        let region_labels = panels.iter().map(|p| p.region_id.to_string()).collect();
        Ok(Dataset {
            panels,
            covariate_names,
            region_labels,
        })
    }

    pub fn n_regions(&self) -> usize {
        self.panels.len()
    }

    pub fn n_total(&self) -> usize {
        self.panels.iter().map(|p| p.n()).sum()
    }

    pub fn covariate_count(&self) -> usize {
        self.covariate_names.len()
    }

    /// Iterates over every record in region order.
    pub fn all_records(&self) -> impl Iterator<Item = &SubjectRecord> {
        self.panels.iter().flat_map(|p| p.records().iter())
    }
}

/// Column-name mapping from a CSV file to the data model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SchemaMapping {
    pub time: String,
    pub event: String,
    pub treatment: String,
    pub region: String,
    pub covariates: Vec<String>,
}

fn parse_f64(value: &str, column: &str, row: usize) -> Result<f64> {
    if value.is_empty() {
        return Err(Error::MissingValue {
            column: column.to_string(),
            row,
        });
    }
    let v: f64 = value.parse().map_err(|_| Error::ParseNumber {
        column: column.to_string(),
        row,
        value: value.to_string(),
    })?;
    if !v.is_finite() {
        return Err(Error::ParseNumber {
            column: column.to_string(),
            row,
            value: value.to_string(),
        });
    }
    Ok(v)
}

fn parse_binary(value: &str, column: &str, field: &str, row: usize) -> Result<u8> {
    let v = parse_f64(value, column, row)?;
    if v == 0.0 {
        Ok(0)
    } else if v == 1.0 {
        Ok(1)
    } else {
        Err(Error::NonBinary {
            field: field.to_string(),
            value: v,
            row,
        })
    }
}

/// Region panels as parsed from a file, before the multi-region dataset
/// invariants are imposed.
#[derive(Clone, Debug)]
pub struct LoadedPanels {
    pub panels: Vec<RegionPanel>,
    pub covariate_names: Vec<String>,
    pub region_labels: Vec<String>,
}

/// Loads a dataset from a headered CSV file.
///
/// Region labels may be arbitrary strings; they are mapped to ids
/// `1..=M` in order of first appearance and the mapping is preserved in
/// [`Dataset::region_labels`]. Row order within a region is preserved.
pub fn load_dataset(path: &Path, schema: &SchemaMapping) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    load_dataset_str(&text, schema)
}

/// [`load_dataset`] on in-memory CSV text.
pub fn load_dataset_str(text: &str, schema: &SchemaMapping) -> Result<Dataset> {
    let loaded = load_panels_str(text, schema)?;
    if loaded.panels.len() < 2 {
        return Err(Error::TooFewRegions {
            needed: 2,
            found: loaded.panels.len(),
        });
    }
    Ok(Dataset {
        panels: loaded.panels,
        covariate_names: loaded.covariate_names,
        region_labels: loaded.region_labels,
    })
}

/// Parses panels from CSV text without requiring two or more regions
/// (single-region files are valid for moment-target diagnostics).
pub fn load_panels_str(text: &str, schema: &SchemaMapping) -> Result<LoadedPanels> {
    let mut lines = text.lines();
    let header_line = lines.next().ok_or(Error::EmptyDataset)?;
    let header: Vec<&str> = header_line
        .trim_start_matches('\u{feff}')
        .trim_end_matches('\r')
        .split(',')
        .map(|h| h.trim())
        .collect();
    let col = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| Error::MissingColumn {
                column: name.to_string(),
            })
    };
    let time_idx = col(&schema.time)?;
    let event_idx = col(&schema.event)?;
    let treat_idx = col(&schema.treatment)?;
    let region_idx = col(&schema.region)?;
    let cov_idx: Vec<usize> = schema
        .covariates
        .iter()
        .map(|c| col(c))
        .collect::<Result<_>>()?;

    let mut label_to_id: HashMap<String, u32> = HashMap::new();
    let mut labels: Vec<String> = Vec::new();
    let mut groups: Vec<Vec<SubjectRecord>> = Vec::new();

    for (data_row, line) in lines.enumerate() {
        let row = data_row + 1; // 1-based data-row index reported in errors
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(|f| f.trim()).collect();
        let get = |idx: usize, column: &str| -> Result<&str> {
            fields.get(idx).copied().ok_or_else(|| Error::MissingValue {
                column: column.to_string(),
                row,
            })
        };
        let time = parse_f64(get(time_idx, &schema.time)?, &schema.time, row)?;
        if !(time.is_finite() && time >= 0.0) {
            return Err(Error::InvalidTime { value: time, row });
        }
        let event = parse_binary(get(event_idx, &schema.event)?, &schema.event, "event", row)?;
        let treatment = parse_binary(
            get(treat_idx, &schema.treatment)?,
            &schema.treatment,
            "treatment",
            row,
        )?;
        let region_label = get(region_idx, &schema.region)?;
        if region_label.is_empty() {
            return Err(Error::MissingValue {
                column: schema.region.clone(),
                row,
            });
        }
        let mut covariates = Vec::with_capacity(cov_idx.len());
        for (&idx, name) in cov_idx.iter().zip(&schema.covariates) {
            covariates.push(parse_f64(get(idx, name)?, name, row)?);
        }
        let next_id = labels.len() as u32 + 1;
        let id = *label_to_id
            .entry(region_label.to_string())
            .or_insert_with(|| {
                labels.push(region_label.to_string());
                groups.push(Vec::new());
                next_id
            });
        groups[(id - 1) as usize].push(SubjectRecord {
            time,
            event,
            treatment,
            region: id,
            covariates,
        });
    }

    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut panels = Vec::with_capacity(groups.len());
    for (i, records) in groups.into_iter().enumerate() {
        panels.push(RegionPanel::with_label(i as u32 + 1, records, &labels[i])?);
    }
    Ok(LoadedPanels {
        panels,
        covariate_names: schema.covariates.clone(),
        region_labels: labels,
    })
}

/// Writes the mapped columns back to CSV. Numeric values use the shortest
/// representation that round-trips, so a load/write cycle is idempotent on
/// its own output.
pub fn write_dataset(path: &Path, dataset: &Dataset, schema: &SchemaMapping) -> Result<()> {
    let mut out = String::new();
    out.push_str(&schema.time);
    out.push(',');
    out.push_str(&schema.event);
    out.push(',');
    out.push_str(&schema.treatment);
    out.push(',');
    out.push_str(&schema.region);
    for c in &schema.covariates {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for panel in &dataset.panels {
        let label = &dataset.region_labels[(panel.region_id - 1) as usize];
        for r in panel.records() {
            out.push_str(&format!("{},{},{},{}", r.time, r.event, r.treatment, label));
            for v in &r.covariates {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes())
        .map_err(|e| Error::io(path, e))
}

/// Target moments from the pooled trial population: the unweighted mean of
/// `g` over every subject in every region.
pub fn target_from_pooled(dataset: &Dataset, spec: &GSpec) -> Result<CalibrationTarget> {
    spec.validate(dataset.covariate_count())?;
    let mut sum = vec![0.0; spec.len()];
    let mut n = 0usize;
    for rec in dataset.all_records() {
        let g = evaluate_g(spec, &rec.covariates)?;
        for (s, v) in sum.iter_mut().zip(&g) {
            *s += v;
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    for s in sum.iter_mut() {
        *s /= n as f64;
    }
    Ok(CalibrationTarget::new(spec.clone(), sum))
}

/// Target moments from a single region of the dataset.
pub fn target_from_region(
    dataset: &Dataset,
    region_id: u32,
    spec: &GSpec,
) -> Result<CalibrationTarget> {
    spec.validate(dataset.covariate_count())?;
    let panel = dataset
        .panels
        .iter()
        .find(|p| p.region_id == region_id)
        .ok_or_else(|| Error::Config(format!("no region with id {region_id}")))?;
    let mut sum = vec![0.0; spec.len()];
    for rec in panel.records() {
        let g = evaluate_g(spec, &rec.covariates)?;
        for (s, v) in sum.iter_mut().zip(&g) {
            *s += v;
        }
    }
    for s in sum.iter_mut() {
        *s /= panel.n() as f64;
    }
    Ok(CalibrationTarget::new(spec.clone(), sum))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    fn names(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    fn schema2() -> SchemaMapping {
        SchemaMapping {
            time: "time".into(),
            event: "event".into(),
            treatment: "arm".into(),
            region: "region".into(),
            covariates: vec!["x1".into(), "x2".into()],
        }
    }

    const SIX_ROWS: &str = "time,event,arm,region,x1,x2\n\
        1.5,1,0,A,0.1,2\n\
        2.5,0,1,A,0.4,1\n\
        0.5,1,1,A,0.9,0\n\
        1.0,1,0,B,0.2,1\n\
        3.25,0,1,B,0.3,5\n\
        2.0,1,0,B,0.8,2\n";

    #[test]
    fn load_groups_by_region() {
        let ds = load_dataset_str(SIX_ROWS, &schema2()).unwrap();
        assert_eq!(ds.n_regions(), 2);
        assert_eq!(ds.panels[0].n(), 3);
        assert_eq!(ds.panels[1].n(), 3);
        assert_eq!(ds.region_labels, vec!["A", "B"]);
        // row order preserved within region
        assert_eq!(ds.panels[1].records()[1].time, 3.25);
        // default propensity = treated fraction
        assert!((ds.panels[0].propensity()[0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn non_binary_treatment_cites_row() {
        let text = SIX_ROWS.replace("1.0,1,0,B", "1.0,1,2,B");
        let err = load_dataset_str(&text, &schema2()).unwrap_err();
        match err {
            Error::NonBinary { field, row, value } => {
                assert_eq!(field, "treatment");
                assert_eq!(row, 4);
                assert_eq!(value, 2.0);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn single_arm_region_named() {
        let text = "time,event,arm,region,x1,x2\n\
            1,1,0,A,0,0\n\
            2,1,1,A,0,0\n\
            1,1,1,B,0,0\n\
            2,0,1,B,0,0\n";
        let err = load_dataset_str(text, &schema2()).unwrap_err();
        match err {
            Error::SingleArmRegion { label } => assert_eq!(label, "B"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn missing_column_named() {
        let err = load_dataset_str("time,event,arm,x1,x2\n", &schema2()).unwrap_err();
        match err {
            Error::MissingColumn { column } => assert_eq!(column, "region"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn missing_value_cites_row_and_column() {
        let text = SIX_ROWS.replace("3.25,0,1,B,0.3,5", "3.25,0,1,B,,5");
        let err = load_dataset_str(&text, &schema2()).unwrap_err();
        match err {
            Error::MissingValue { column, row } => {
                assert_eq!(column, "x1");
                assert_eq!(row, 5);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn evaluate_g_examples() {
        let ns = names(&["X1", "X2"]);
        let spec = GSpec::new(
            vec![
                GFunction::Identity(0),
                GFunction::Identity(1),
                GFunction::Power(0, 2),
                GFunction::Power(1, 2),
            ],
            &ns,
        );
        assert_eq!(
            evaluate_g(&spec, &[0.5, 2.0]).unwrap(),
            vec![0.5, 2.0, 0.25, 4.0]
        );
        let single = GSpec::new(vec![GFunction::Identity(0)], &ns);
        assert_eq!(evaluate_g(&single, &[0.3, 9.9]).unwrap(), vec![0.3]);
        let prod = GSpec::new(vec![GFunction::Product(0, 1)], &ns);
        assert_eq!(evaluate_g(&prod, &[2.0, 3.0]).unwrap(), vec![6.0]);
    }

    #[test]
    fn evaluate_g_out_of_range() {
        let spec = GSpec::new(vec![GFunction::Identity(3)], &names(&["X1"]));
        assert!(matches!(
            evaluate_g(&spec, &[1.0]),
            Err(Error::GSpecIndex { index: 3, p: 1, .. })
        ));
    }

    #[test]
    fn gspec_parse_round() {
        let ns = names(&["age", "sex"]);
        let spec = GSpec::parse("age, sex, age^2, age*sex, sex==1", &ns).unwrap();
        assert_eq!(spec.len(), 5);
        assert_eq!(spec.labels[3], "age*sex");
        assert_eq!(
            evaluate_g(&spec, &[2.0, 1.0]).unwrap(),
            vec![2.0, 1.0, 4.0, 2.0, 1.0]
        );
        assert!(GSpec::parse("height", &ns).is_err());
        assert!(GSpec::parse("age^9", &ns).is_err());
    }

    #[test]
    fn pooled_target_examples() {
        // region-1 values {0,1}, region-2 values {1,1} on a single covariate
        let text = "time,event,arm,region,x1\n\
            1,1,0,A,0\n\
            1,1,1,A,1\n\
            1,1,0,B,1\n\
            1,0,1,B,1\n";
        let schema = SchemaMapping {
            covariates: vec!["x1".into()],
            ..schema2()
        };
        let ds = load_dataset_str(text, &schema).unwrap();
        let spec = GSpec::new(vec![GFunction::Identity(0)], &ds.covariate_names);
        let target = target_from_pooled(&ds, &spec).unwrap();
        assert!((target.g_tilde[0] - 0.75).abs() < 1e-15);

        // constant covariate 5 with g = [X, X²]
        let text5 = text.replace(",0\n", ",5\n").replace(",1\n", ",5\n");
        let ds5 = load_dataset_str(&text5, &schema).unwrap();
        let spec2 = GSpec::new(
            vec![GFunction::Identity(0), GFunction::Power(0, 2)],
            &ds5.covariate_names,
        );
        let t5 = target_from_pooled(&ds5, &spec2).unwrap();
        assert_eq!(t5.g_tilde, vec![5.0, 25.0]);
    }

    #[test]
    fn pooled_target_matches_analytic_simulated_moments() {
        // For X1 ~ Unif(0,1), X2 ~ N(1,1):
        // E[X1, X2, X1², X2²] = (0.5, 1, 1/3, 2); checked on 10⁶ draws.
        let mut rng = RngStream::new(2024, 0);
        let n = 1_000_000;
        let mut sums = [0.0f64; 4];
        for _ in 0..n {
            let x1 = rng.next_f64();
            let x2 = rng.next_normal(1.0, 1.0);
            sums[0] += x1;
            sums[1] += x2;
            sums[2] += x1 * x1;
            sums[3] += x2 * x2;
        }
        let means: Vec<f64> = sums.iter().map(|s| s / n as f64).collect();
        let expect = [0.5, 1.0, 1.0 / 3.0, 2.0];
        // generous 5-sigma-ish bounds for the Monte Carlo check
        let tol = [0.002, 0.005, 0.002, 0.02];
        for i in 0..4 {
            assert!(
                (means[i] - expect[i]).abs() < tol[i],
                "moment {i}: {} vs {}",
                means[i],
                expect[i]
            );
        }
    }

    #[test]
    fn pooled_equals_size_weighted_region_means() {
        let ds = load_dataset_str(SIX_ROWS, &schema2()).unwrap();
        let spec = GSpec::moments_k2(2, &ds.covariate_names);
        let pooled = target_from_pooled(&ds, &spec).unwrap();
        let total: usize = ds.panels.iter().map(|p| p.n()).sum();
        let mut combo = vec![0.0; spec.len()];
        for panel in &ds.panels {
            let mut mean = vec![0.0; spec.len()];
            for rec in panel.records() {
                let g = evaluate_g(&spec, &rec.covariates).unwrap();
                for (m, v) in mean.iter_mut().zip(&g) {
                    *m += v / panel.n() as f64;
                }
            }
            let share = panel.n() as f64 / total as f64;
            for (c, m) in combo.iter_mut().zip(&mean) {
                *c += share * m;
            }
        }
        for (a, b) in pooled.g_tilde.iter().zip(&combo) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn write_load_round_trip() {
        let dir = std::env::temp_dir().join("mrct_rmst_data_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("round.csv");
        let ds = load_dataset_str(SIX_ROWS, &schema2()).unwrap();
        write_dataset(&path, &ds, &schema2()).unwrap();
        let written = std::fs::read_to_string(&path).unwrap();
        let ds2 = load_dataset_str(&written, &schema2()).unwrap();
        write_dataset(&path, &ds2, &schema2()).unwrap();
        let written2 = std::fs::read_to_string(&path).unwrap();
        assert_eq!(written, written2);
        // values identical to the original parse
        for (a, b) in ds.all_records().zip(ds2.all_records()) {
            assert_eq!(a, b);
        }
    }
}
