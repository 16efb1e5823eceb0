//! File formats: CSV score inputs and the JSON report shapes.
//!
//! Calibration CSV: header `label,score`, one labeled example per row,
//! labels 0-based. Test CSV: header `s1,...,sK`, one row of K scores per
//! batch item. Reports round-trip through serde so downstream tooling can
//! reparse them with this crate.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::enumeration::{
    class_count_bounds, individual_sets, reconstruct_cardinality, AppliedRule,
    BatchPredictionSet, CountBounds, SetMember,
};
use crate::error::{Error, Result};
use crate::pvalues::{CalibrationMode, PValuePanel, ScorePanel};

fn csv_error(row: usize, message: impl Into<String>) -> Error {
    Error::Csv {
        row,
        message: message.into(),
    }
}

/// Parse `label,score` rows. Row indices in errors count the header as row 0.
pub fn parse_calibration_csv<R: Read>(reader: R) -> Result<Vec<(usize, f64)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| csv_error(0, e.to_string()))?
        .clone();
    if headers.len() != 2 || &headers[0] != "label" || &headers[1] != "score" {
        return Err(csv_error(
            0,
            format!("expected header `label,score`, found {headers:?}"),
        ));
    }
    let mut entries = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| csv_error(row, e.to_string()))?;
        if record.len() != 2 {
            return Err(csv_error(
                row,
                format!("expected 2 columns, found {}", record.len()),
            ));
        }
        let label: usize = record[0]
            .parse()
            .map_err(|_| csv_error(row, format!("column 0: invalid label {:?}", &record[0])))?;
        let score: f64 = record[1]
            .parse()
            .map_err(|_| csv_error(row, format!("column 1: invalid score {:?}", &record[1])))?;
        if !score.is_finite() {
            return Err(Error::NonFiniteScore { row, column: 1 });
        }
        entries.push((label, score));
    }
    if entries.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    Ok(entries)
}

pub fn read_calibration_csv(path: &Path) -> Result<Vec<(usize, f64)>> {
    parse_calibration_csv(File::open(path)?)
}

/// Parse an `s1,...,sK` score matrix into a panel.
pub fn parse_scores_csv<R: Read>(reader: R) -> Result<ScorePanel> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| csv_error(0, e.to_string()))?
        .clone();
    let k = headers.len();
    for (j, name) in headers.iter().enumerate() {
        let expected = format!("s{}", j + 1);
        if name != expected {
            return Err(csv_error(
                0,
                format!("column {j}: expected header {expected:?}, found {name:?}"),
            ));
        }
    }
    let mut rows = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| csv_error(row, e.to_string()))?;
        if record.len() != k {
            return Err(csv_error(
                row,
                format!("expected {k} columns, found {}", record.len()),
            ));
        }
        let mut scores = Vec::with_capacity(k);
        for (column, field) in record.iter().enumerate() {
            let value: f64 = field.parse().map_err(|_| {
                csv_error(row, format!("column {column}: invalid score {field:?}"))
            })?;
            if !value.is_finite() {
                return Err(Error::NonFiniteScore { row, column });
            }
            scores.push(value);
        }
        rows.push(scores);
    }
    ScorePanel::from_rows(rows)
}

pub fn read_scores_csv(path: &Path) -> Result<ScorePanel> {
    parse_scores_csv(File::open(path)?)
}

/// The p-value grid with its exact numerators, reparseable into a panel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PValueReport {
    pub mode: CalibrationMode,
    pub m: usize,
    pub classes: usize,
    pub denominators: Vec<u32>,
    pub numerators: Vec<Vec<u32>>,
    pub values: Vec<Vec<f64>>,
}

impl PValueReport {
    pub fn from_panel(panel: &PValuePanel) -> Self {
        let m = panel.batch_size();
        let classes = panel.num_classes();
        let numerators: Vec<Vec<u32>> = (0..m)
            .map(|i| (0..classes).map(|k| panel.get(i, k).numerator()).collect())
            .collect();
        let values = (0..m)
            .map(|i| (0..classes).map(|k| panel.get(i, k).value()).collect())
            .collect();
        PValueReport {
            mode: panel.mode(),
            m,
            classes,
            denominators: panel.denominators().to_vec(),
            numerators,
            values,
        }
    }

    pub fn to_panel(&self) -> Result<PValuePanel> {
        PValuePanel::from_parts(self.mode, &self.numerators, &self.denominators)
    }
}

/// JSON report for a batch prediction set or for count bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetReport {
    pub alpha: Option<f64>,
    pub combiner: String,
    pub mode: CalibrationMode,
    pub rule: AppliedRule,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub members: Option<Vec<SetMember>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub individual_sets: Option<Vec<Vec<usize>>>,
    pub empty: bool,
    pub bounds: Option<Vec<(usize, usize)>>,
    pub set_size: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reconstructed_cardinality: Option<String>,
}

fn rule_alpha(rule: &AppliedRule) -> Option<f64> {
    match rule {
        AppliedRule::Alpha { alpha } | AppliedRule::Table { alpha, .. } => Some(*alpha),
        AppliedRule::FixedThreshold { .. } => None,
    }
}

impl SetReport {
    /// Report an enumerated set, optionally listing its members.
    pub fn from_set(set: &BatchPredictionSet, include_members: bool) -> Self {
        let bounds = class_count_bounds(set);
        let projection = individual_sets(set);
        let cardinality = bounds
            .intervals()
            .map(|_| reconstruct_cardinality(&bounds, set.m).expect("nonempty bounds"))
            .map(|c| c.to_string());
        SetReport {
            alpha: rule_alpha(&set.rule),
            combiner: set.combiner.clone(),
            mode: set.mode,
            rule: set.rule.clone(),
            members: include_members.then(|| set.members.clone()),
            individual_sets: Some(projection.per_item),
            empty: set.is_empty(),
            bounds: bounds.intervals().map(<[(usize, usize)]>::to_vec),
            set_size: Some(set.len() as u64),
            reconstructed_cardinality: cardinality,
        }
    }

    /// Report shortcut bounds, where no member list exists.
    pub fn from_bounds(
        bounds: &CountBounds,
        m: usize,
        mode: CalibrationMode,
        combiner: &str,
        rule: AppliedRule,
    ) -> Self {
        let cardinality = bounds
            .intervals()
            .map(|_| reconstruct_cardinality(bounds, m).expect("nonempty bounds"))
            .map(|c| c.to_string());
        SetReport {
            alpha: rule_alpha(&rule),
            combiner: combiner.to_string(),
            mode,
            rule,
            members: None,
            individual_sets: None,
            empty: bounds.is_empty(),
            bounds: bounds.intervals().map(<[(usize, usize)]>::to_vec),
            set_size: None,
            reconstructed_cardinality: cardinality,
        }
    }
}
