//! Calibration data and rank-based conformal p-values.
//!
//! A test score for class `k` is ranked against the calibration scores —
//! all of them in full (iid) mode, only those of class `k` in
//! class-conditional mode. The resulting p-value is the exact fraction
//! `(1 + #{calibration >= test}) / (d + 1)` and is stored as numerator and
//! denominator so no grid information is lost. Ties count on the `>=` side,
//! which can only make the p-value larger (conservative).

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frac::Frac;

/// Which calibration examples a test score is ranked against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CalibrationMode {
    /// Rank against all n calibration scores (iid model).
    #[serde(rename = "iid")]
    Full,
    /// Rank against the n_k scores of the candidate class (conditional model).
    #[serde(rename = "conditional")]
    ClassConditional,
}

impl std::fmt::Display for CalibrationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CalibrationMode::Full => write!(f, "iid"),
            CalibrationMode::ClassConditional => write!(f, "conditional"),
        }
    }
}

/// Labeled calibration scores, one `(label, score)` pair per example.
///
/// Entries are kept in input order; p-value computation sorts internally.
#[derive(Clone, Debug)]
pub struct CalibrationSet {
    entries: Vec<(usize, f64)>,
    mode: CalibrationMode,
    class_counts: Vec<usize>,
}

/// Tally labeled scores into a [`CalibrationSet`].
///
/// Class counts are sized by the largest label seen; consistency with a
/// score panel's class count is checked in [`conformal_pvalues`].
pub fn build_calibration(
    entries: Vec<(usize, f64)>,
    mode: CalibrationMode,
) -> Result<CalibrationSet> {
    if entries.is_empty() {
        return Err(Error::EmptyCalibration);
    }
    let mut class_counts = Vec::new();
    for (row, &(label, score)) in entries.iter().enumerate() {
        if !score.is_finite() {
            return Err(Error::NonFiniteScore { row, column: 1 });
        }
        if label >= class_counts.len() {
            class_counts.resize(label + 1, 0);
        }
        class_counts[label] += 1;
    }
    Ok(CalibrationSet {
        entries,
        mode,
        class_counts,
    })
}

impl CalibrationSet {
    pub fn mode(&self) -> CalibrationMode {
        self.mode
    }

    /// Total number of calibration examples.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Per-class example counts, indexed by label.
    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    pub fn class_count(&self, class: usize) -> usize {
        self.class_counts.get(class).copied().unwrap_or(0)
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }
}

/// Non-conformity scores for a batch: entry `(i, k)` scores class `k`
/// for test item `i`.
#[derive(Clone, Debug)]
pub struct ScorePanel {
    m: usize,
    num_classes: usize,
    scores: Vec<f64>,
}

impl ScorePanel {
    /// Build from row-major per-item score vectors.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = rows.len();
        let num_classes = rows.first().map_or(0, Vec::len);
        if m < 1 || num_classes < 2 {
            return Err(Error::DegeneratePanel {
                rows: m,
                columns: num_classes,
            });
        }
        let mut scores = Vec::with_capacity(m * num_classes);
        for (row, r) in rows.iter().enumerate() {
            if r.len() != num_classes {
                return Err(Error::LengthMismatch {
                    expected: num_classes,
                    found: r.len(),
                });
            }
            for (column, &s) in r.iter().enumerate() {
                if !s.is_finite() {
                    return Err(Error::NonFiniteScore { row, column });
                }
                scores.push(s);
            }
        }
        Ok(ScorePanel {
            m,
            num_classes,
            scores,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.m
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn score(&self, item: usize, class: usize) -> f64 {
        self.scores[item * self.num_classes + class]
    }
}

/// A conformal p-value as the exact rank fraction a/(d+1).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RankPValue {
    numerator: u32,
    denominator: u32,
}

impl PartialEq for RankPValue {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for RankPValue {}

impl RankPValue {
    pub fn new(numerator: u32, denominator: u32) -> Result<Self> {
        if numerator == 0 || numerator > denominator {
            return Err(Error::InvalidPValue {
                numerator,
                denominator,
            });
        }
        Ok(RankPValue {
            numerator,
            denominator,
        })
    }

    pub fn numerator(&self) -> u32 {
        self.numerator
    }

    pub fn denominator(&self) -> u32 {
        self.denominator
    }

    pub fn value(&self) -> f64 {
        f64::from(self.numerator) / f64::from(self.denominator)
    }

    pub fn is_one(&self) -> bool {
        self.numerator == self.denominator
    }

    pub fn as_frac(&self) -> Frac {
        Frac::new(u128::from(self.numerator), u128::from(self.denominator))
    }
}

impl PartialOrd for RankPValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for RankPValue {
    fn cmp(&self, other: &Self) -> Ordering {
        let lhs = u64::from(self.numerator) * u64::from(other.denominator);
        let rhs = u64::from(other.numerator) * u64::from(self.denominator);
        lhs.cmp(&rhs)
    }
}

/// The m x K grid of conformal p-values plus the per-class denominators.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PValuePanel {
    m: usize,
    num_classes: usize,
    mode: CalibrationMode,
    values: Vec<RankPValue>,
    denominators: Vec<u32>,
}

impl PValuePanel {
    /// Reassemble a panel from raw numerators, validating the grid invariants.
    pub fn from_parts(
        mode: CalibrationMode,
        numerators: &[Vec<u32>],
        denominators: &[u32],
    ) -> Result<Self> {
        let m = numerators.len();
        let num_classes = denominators.len();
        if m < 1 || num_classes < 2 {
            return Err(Error::DegeneratePanel {
                rows: m,
                columns: num_classes,
            });
        }
        let mut values = Vec::with_capacity(m * num_classes);
        for row in numerators {
            if row.len() != num_classes {
                return Err(Error::LengthMismatch {
                    expected: num_classes,
                    found: row.len(),
                });
            }
            for (k, &a) in row.iter().enumerate() {
                values.push(RankPValue::new(a, denominators[k])?);
            }
        }
        Ok(PValuePanel {
            m,
            num_classes,
            mode,
            values,
            denominators: denominators.to_vec(),
        })
    }

    pub fn batch_size(&self) -> usize {
        self.m
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn mode(&self) -> CalibrationMode {
        self.mode
    }

    pub fn get(&self, item: usize, class: usize) -> RankPValue {
        self.values[item * self.num_classes + class]
    }

    /// Per-class denominators d+1 (all equal to n+1 in full mode).
    pub fn denominators(&self) -> &[u32] {
        &self.denominators
    }

    /// Per-class calibration sizes implied by the denominators.
    pub fn class_sizes(&self) -> Vec<usize> {
        self.denominators.iter().map(|&d| d as usize - 1).collect()
    }
}

/// Count calibration scores at or above `s` in an ascending sorted slice.
fn count_geq(sorted: &[f64], s: f64) -> usize {
    sorted.len() - sorted.partition_point(|&x| x < s)
}

/// Compute the full m x K grid of conformal p-values.
///
/// In class-conditional mode every class of the panel must have at least
/// one calibration example.
pub fn conformal_pvalues(cal: &CalibrationSet, panel: &ScorePanel) -> Result<PValuePanel> {
    let num_classes = panel.num_classes();
    if cal.class_counts().len() > num_classes {
        return Err(Error::LabelOutOfRange {
            label: cal.class_counts().len() - 1,
            num_classes,
        });
    }
    let m = panel.batch_size();
    let mut values = vec![RankPValue::new(1, 1).unwrap(); m * num_classes];
    let mut denominators = vec![0u32; num_classes];

    match cal.mode() {
        CalibrationMode::Full => {
            let mut sorted: Vec<f64> = cal.entries().iter().map(|&(_, s)| s).collect();
            sorted.sort_unstable_by(f64::total_cmp);
            let den = u32::try_from(sorted.len() + 1).expect("calibration size fits u32");
            denominators.fill(den);
            for i in 0..m {
                for k in 0..num_classes {
                    let a = 1 + count_geq(&sorted, panel.score(i, k));
                    values[i * num_classes + k] = RankPValue::new(a as u32, den)?;
                }
            }
        }
        CalibrationMode::ClassConditional => {
            let mut per_class: Vec<Vec<f64>> = vec![Vec::new(); num_classes];
            for &(label, score) in cal.entries() {
                per_class[label].push(score);
            }
            for (k, scores) in per_class.iter_mut().enumerate() {
                if scores.is_empty() {
                    return Err(Error::EmptyClass { class: k });
                }
                scores.sort_unstable_by(f64::total_cmp);
                denominators[k] = u32::try_from(scores.len() + 1).expect("class size fits u32");
            }
            for i in 0..m {
                for k in 0..num_classes {
                    let a = 1 + count_geq(&per_class[k], panel.score(i, k));
                    values[i * num_classes + k] = RankPValue::new(a as u32, denominators[k])?;
                }
            }
        }
    }

    Ok(PValuePanel {
        m,
        num_classes,
        mode: cal.mode(),
        values,
        denominators,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel_1x2(s0: f64, s1: f64) -> ScorePanel {
        ScorePanel::from_rows(vec![vec![s0, s1]]).unwrap()
    }

    #[test]
    fn tallies_class_counts() {
        let cal = build_calibration(vec![(0, 0.3), (1, 0.7)], CalibrationMode::Full).unwrap();
        assert_eq!(cal.len(), 2);
        assert_eq!(cal.class_counts(), &[1, 1]);
    }

    #[test]
    fn rejects_empty_calibration() {
        assert!(matches!(
            build_calibration(vec![], CalibrationMode::Full),
            Err(Error::EmptyCalibration)
        ));
    }

    #[test]
    fn large_balanced_calibration() {
        let mut entries = Vec::new();
        for k in 0..3 {
            for j in 0..400 {
                entries.push((k, j as f64 / 400.0));
            }
        }
        let cal = build_calibration(entries, CalibrationMode::ClassConditional).unwrap();
        assert_eq!(cal.len(), 1200);
        assert_eq!(cal.class_counts(), &[400, 400, 400]);
    }

    #[test]
    fn rank_count_example() {
        // Calibration scores {0.9, 0.7, 0.5, 0.3}, test score 0.6:
        // two calibration scores are >= 0.6 so p = 3/5.
        let cal = build_calibration(
            vec![(0, 0.9), (0, 0.7), (1, 0.5), (1, 0.3)],
            CalibrationMode::Full,
        )
        .unwrap();
        let panel = panel_1x2(0.6, 0.6);
        let pv = conformal_pvalues(&cal, &panel).unwrap();
        assert_eq!(pv.get(0, 0), RankPValue::new(3, 5).unwrap());
        assert_eq!(pv.get(0, 1), RankPValue::new(3, 5).unwrap());
    }

    #[test]
    fn extreme_scores_hit_the_grid_ends() {
        let cal = build_calibration(
            vec![(0, 0.1), (0, 0.2), (1, 0.3), (1, 0.4)],
            CalibrationMode::Full,
        )
        .unwrap();
        let pv = conformal_pvalues(&cal, &panel_1x2(0.9, 0.05)).unwrap();
        // Above every calibration score: minimal rank 1/(n+1).
        assert_eq!(pv.get(0, 0), RankPValue::new(1, 5).unwrap());
        // Below every calibration score: p = 1.
        assert_eq!(pv.get(0, 1), RankPValue::new(5, 5).unwrap());
    }

    #[test]
    fn ties_count_on_the_geq_side() {
        let cal =
            build_calibration(vec![(0, 0.5), (0, 0.5), (1, 0.2)], CalibrationMode::Full).unwrap();
        let pv = conformal_pvalues(&cal, &panel_1x2(0.5, 0.5)).unwrap();
        assert_eq!(pv.get(0, 0), RankPValue::new(3, 4).unwrap());
    }

    #[test]
    fn conditional_mode_uses_per_class_denominators() {
        let cal = build_calibration(
            vec![(0, 0.1), (0, 0.6), (0, 0.8), (1, 0.5)],
            CalibrationMode::ClassConditional,
        )
        .unwrap();
        let pv = conformal_pvalues(&cal, &panel_1x2(0.7, 0.7)).unwrap();
        assert_eq!(pv.denominators(), &[4, 2]);
        assert_eq!(pv.get(0, 0), RankPValue::new(2, 4).unwrap());
        assert_eq!(pv.get(0, 1), RankPValue::new(1, 2).unwrap());
    }

    #[test]
    fn conditional_mode_rejects_empty_class() {
        let cal = build_calibration(vec![(0, 0.1)], CalibrationMode::ClassConditional).unwrap();
        let err = conformal_pvalues(&cal, &panel_1x2(0.7, 0.7)).unwrap_err();
        assert!(matches!(err, Error::EmptyClass { class: 1 }));
    }

    #[test]
    fn label_beyond_panel_classes_is_rejected() {
        let cal = build_calibration(vec![(2, 0.1), (0, 0.2)], CalibrationMode::Full).unwrap();
        let err = conformal_pvalues(&cal, &panel_1x2(0.7, 0.7)).unwrap_err();
        assert!(matches!(err, Error::LabelOutOfRange { label: 2, .. }));
    }

    #[test]
    fn pvalue_ordering_is_exact() {
        let a = RankPValue::new(1, 3).unwrap();
        let b = RankPValue::new(2, 6).unwrap();
        let c = RankPValue::new(3, 8).unwrap();
        assert_eq!(a.cmp(&b), Ordering::Equal);
        assert!(c > a);
    }
}
