//! Candidate enumeration over [K]^m and the artifacts read off a batch
//! prediction set: per-item label sets, class-count bounds, and the
//! conservative reconstruction from bounds.
//!
//! Candidates are visited in lexicographic order so member lists are
//! deterministic. Exhaustive enumeration is K^m work and is refused above
//! a configurable budget.

use std::collections::{BTreeSet, HashMap};

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::combiners::{batch_p, exact_alpha, CombinerContext, CombinerSpec, ExactAlpha};
use crate::error::{Error, Result};
use crate::pvalues::{CalibrationMode, PValuePanel, RankPValue};
use crate::thresholds::{Threshold, ThresholdTable};

/// Default cap on the number of candidate vectors an exhaustive call may visit.
pub const DEFAULT_ENUMERATION_BUDGET: u64 = 10_000_000;

/// Membership rule for a candidate's batch p-value.
#[derive(Clone, Copy, Debug)]
pub enum InclusionRule<'a> {
    /// Keep candidates with F strictly above alpha.
    Alpha(f64),
    /// Keep candidates with F at or above a fixed empirical threshold.
    Threshold(Threshold),
    /// Empirical thresholds looked up by the candidate's class counts.
    Table(&'a ThresholdTable),
}

/// Provenance of the rule actually applied, for reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AppliedRule {
    Alpha { alpha: f64 },
    FixedThreshold { t: Threshold },
    Table { alpha: f64, b: u32, seed: u64 },
}

/// One retained candidate. `batch_p` is absent for members of sets
/// reconstructed from bounds, where no statistic was evaluated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetMember {
    pub labels: Vec<usize>,
    #[serde(rename = "p")]
    pub batch_p: Option<f64>,
}

/// A batch prediction set: the retained label vectors in lexicographic
/// order plus the rule and combiner that produced them.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BatchPredictionSet {
    pub m: usize,
    pub num_classes: usize,
    pub mode: CalibrationMode,
    pub combiner: String,
    pub rule: AppliedRule,
    pub members: Vec<SetMember>,
}

impl BatchPredictionSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Membership test; relies on the lexicographic member order.
    pub fn contains(&self, labels: &[usize]) -> bool {
        self.members
            .binary_search_by(|m| m.labels.as_slice().cmp(labels))
            .is_ok()
    }
}

/// Per-item label sets extracted from a batch prediction set, with an
/// explicit marker for the empty set (all items then get empty sets).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndividualSets {
    pub per_item: Vec<Vec<usize>>,
    pub set_empty: bool,
}

/// Per-class intervals for the class counts, or an explicit empty marker
/// when the generating prediction set was empty.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountBounds {
    bounds: Option<Vec<(usize, usize)>>,
}

impl CountBounds {
    pub fn empty() -> Self {
        CountBounds { bounds: None }
    }

    pub fn from_intervals(intervals: Vec<(usize, usize)>) -> Self {
        assert!(intervals.iter().all(|&(l, u)| l <= u), "inverted interval");
        CountBounds {
            bounds: Some(intervals),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.bounds.is_none()
    }

    pub fn intervals(&self) -> Option<&[(usize, usize)]> {
        self.bounds.as_deref()
    }
}

/// Class counts m_k(y) of a label vector.
pub fn count_vector(labels: &[usize], num_classes: usize) -> Vec<usize> {
    let mut counts = vec![0usize; num_classes];
    for &label in labels {
        assert!(label < num_classes, "label out of range");
        counts[label] += 1;
    }
    counts
}

/// Per-item admissible labels {k : p_i^(k) > alpha/m}.
///
/// Restricting Bonferroni or Simes enumeration to the product of these
/// sets loses no member: a p-value at or below alpha/m already forces the
/// batch statistic to alpha or below.
pub fn bonferroni_prefilter(panel: &PValuePanel, alpha: f64) -> Result<Vec<Vec<usize>>> {
    let alpha = exact_alpha(alpha, true)?;
    let m = panel.batch_size() as u128;
    let mut admissible = Vec::with_capacity(panel.batch_size());
    for i in 0..panel.batch_size() {
        let mut labels = Vec::new();
        for k in 0..panel.num_classes() {
            let scaled = panel
                .get(i, k)
                .as_frac()
                .checked_mul_int(m)
                .expect("p-value times batch size fits");
            if scaled > alpha.frac {
                labels.push(k);
            }
        }
        admissible.push(labels);
    }
    Ok(admissible)
}

enum RuleEval {
    Alpha(ExactAlpha),
    Fixed(Threshold),
    Table(HashMap<Vec<usize>, Threshold>),
}

impl RuleEval {
    fn new(rule: &InclusionRule<'_>, panel: &PValuePanel) -> Result<(Self, AppliedRule)> {
        match rule {
            InclusionRule::Alpha(alpha) => {
                let exact = exact_alpha(*alpha, true)?;
                Ok((RuleEval::Alpha(exact), AppliedRule::Alpha { alpha: *alpha }))
            }
            InclusionRule::Threshold(t) => {
                Ok((RuleEval::Fixed(*t), AppliedRule::FixedThreshold { t: *t }))
            }
            InclusionRule::Table(table) => {
                if table.m != panel.batch_size() {
                    return Err(Error::InvalidConfig(format!(
                        "threshold table was calibrated for m={}, panel has m={}",
                        table.m,
                        panel.batch_size()
                    )));
                }
                let applied = AppliedRule::Table {
                    alpha: table.alpha,
                    b: table.b,
                    seed: table.seed,
                };
                match table.mode {
                    CalibrationMode::Full => Ok((RuleEval::Fixed(table.entries[0].t), applied)),
                    CalibrationMode::ClassConditional => {
                        Ok((RuleEval::Table(table.index()), applied))
                    }
                }
            }
        }
    }
}

/// Visit every label vector in the product of `admissible` lists in
/// lexicographic order.
fn for_each_candidate<F: FnMut(&[usize]) -> Result<()>>(
    admissible: &[Vec<usize>],
    mut body: F,
) -> Result<()> {
    if admissible.iter().any(Vec::is_empty) {
        return Ok(());
    }
    let m = admissible.len();
    let mut cursor = vec![0usize; m];
    let mut labels: Vec<usize> = admissible.iter().map(|a| a[0]).collect();
    loop {
        body(&labels)?;
        let mut pos = m;
        loop {
            if pos == 0 {
                return Ok(());
            }
            pos -= 1;
            cursor[pos] += 1;
            if cursor[pos] < admissible[pos].len() {
                labels[pos] = admissible[pos][cursor[pos]];
                break;
            }
            cursor[pos] = 0;
            labels[pos] = admissible[pos][0];
        }
    }
}

fn candidate_total(admissible: &[Vec<usize>]) -> u128 {
    let mut total: u128 = 1;
    for a in admissible {
        total = total.saturating_mul(a.len() as u128);
    }
    total
}

/// Exhaustively build the batch prediction set for one combiner and rule.
///
/// With `prefilter` set (alpha rule, Bonferroni or Simes only) the
/// candidate space is first cut down per item; the resulting set is
/// provably identical. Refuses to run when the candidate count exceeds
/// `budget`.
pub fn enumerate_set(
    panel: &PValuePanel,
    combiner: &CombinerSpec,
    rule: &InclusionRule<'_>,
    prefilter: bool,
    budget: u64,
) -> Result<BatchPredictionSet> {
    let m = panel.batch_size();
    let num_classes = panel.num_classes();
    let (eval, applied) = RuleEval::new(rule, panel)?;

    let admissible: Vec<Vec<usize>> = if prefilter {
        if !matches!(combiner, CombinerSpec::Bonferroni | CombinerSpec::Simes) {
            return Err(Error::PrefilterUnsupported {
                combiner: combiner.id(),
            });
        }
        let InclusionRule::Alpha(alpha) = rule else {
            return Err(Error::PrefilterUnsupported {
                combiner: "empirical-threshold rules".into(),
            });
        };
        bonferroni_prefilter(panel, *alpha)?
    } else {
        vec![(0..num_classes).collect(); m]
    };

    let total = candidate_total(&admissible);
    if total > u128::from(budget) {
        return Err(Error::BudgetExceeded {
            candidates: total,
            budget,
        });
    }

    let ctx = CombinerContext::from_panel(panel);
    let mut members = Vec::new();
    let mut pvec: Vec<RankPValue> = Vec::with_capacity(m);
    for_each_candidate(&admissible, |labels| {
        pvec.clear();
        pvec.extend((0..m).map(|i| panel.get(i, labels[i])));
        let p = batch_p(combiner, &pvec, labels, &ctx)?;
        let included = match &eval {
            RuleEval::Alpha(alpha) => p.stat().exceeds(alpha),
            RuleEval::Fixed(t) => p.stat().at_least(t),
            RuleEval::Table(map) => {
                let counts = count_vector(labels, num_classes);
                let t = map
                    .get(&counts)
                    .ok_or(Error::MissingThreshold {
                        composition: counts.clone(),
                    })?;
                p.stat().at_least(t)
            }
        };
        if included {
            members.push(SetMember {
                labels: labels.to_vec(),
                batch_p: Some(p.value()),
            });
        }
        Ok(())
    })?;

    Ok(BatchPredictionSet {
        m,
        num_classes,
        mode: panel.mode(),
        combiner: combiner.id(),
        rule: applied,
        members,
    })
}

/// Project a batch prediction set onto each item.
pub fn individual_sets(set: &BatchPredictionSet) -> IndividualSets {
    let mut per_item: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); set.m];
    for member in &set.members {
        for (i, &label) in member.labels.iter().enumerate() {
            per_item[i].insert(label);
        }
    }
    IndividualSets {
        per_item: per_item.into_iter().map(|s| s.into_iter().collect()).collect(),
        set_empty: set.members.is_empty(),
    }
}

/// Tightest per-class intervals containing every member's class counts.
pub fn class_count_bounds(set: &BatchPredictionSet) -> CountBounds {
    if set.members.is_empty() {
        return CountBounds::empty();
    }
    let mut intervals = vec![(usize::MAX, 0usize); set.num_classes];
    for member in &set.members {
        for (k, &count) in count_vector(&member.labels, set.num_classes).iter().enumerate() {
            intervals[k].0 = intervals[k].0.min(count);
            intervals[k].1 = intervals[k].1.max(count);
        }
    }
    CountBounds::from_intervals(intervals)
}

/// Number of label vectors whose class counts respect the bounds: the sum
/// of multinomial coefficients over the admissible compositions of m.
pub fn reconstruct_cardinality(bounds: &CountBounds, m: usize) -> Result<BigUint> {
    let intervals = bounds.intervals().ok_or(Error::EmptyBounds)?;
    let mut factorials = Vec::with_capacity(m + 1);
    factorials.push(BigUint::from(1u32));
    for i in 1..=m {
        let prev = factorials[i - 1].clone();
        factorials.push(prev * BigUint::from(i as u32));
    }

    // Suffix sums of the interval ends let us prune infeasible branches.
    let k = intervals.len();
    let mut min_suffix = vec![0usize; k + 1];
    let mut max_suffix = vec![0usize; k + 1];
    for i in (0..k).rev() {
        min_suffix[i] = min_suffix[i + 1] + intervals[i].0;
        max_suffix[i] = max_suffix[i + 1].saturating_add(intervals[i].1);
    }

    #[allow(clippy::too_many_arguments)]
    fn rec(
        intervals: &[(usize, usize)],
        class: usize,
        remaining: usize,
        denom: BigUint,
        factorials: &[BigUint],
        min_suffix: &[usize],
        max_suffix: &[usize],
        total: &mut BigUint,
    ) {
        if class == intervals.len() {
            if remaining == 0 {
                *total += &factorials[factorials.len() - 1] / &denom;
            }
            return;
        }
        let (lo, hi) = intervals[class];
        let hi = hi.min(remaining);
        for count in lo..=hi {
            let rest = remaining - count;
            if rest < min_suffix[class + 1] || rest > max_suffix[class + 1] {
                continue;
            }
            rec(
                intervals,
                class + 1,
                rest,
                denom.clone() * &factorials[count],
                factorials,
                min_suffix,
                max_suffix,
                total,
            );
        }
    }

    let mut total = BigUint::from(0u32);
    if m >= min_suffix[0] && m <= max_suffix[0] {
        rec(
            intervals,
            0,
            m,
            BigUint::from(1u32),
            &factorials,
            &min_suffix,
            &max_suffix,
            &mut total,
        );
    }
    Ok(total)
}

/// All vectors in the product of per-item label sets whose class counts
/// respect the bounds: a superset of the exact prediction set, and a
/// subset of the Bonferroni set when fed its per-item sets.
pub fn conservative_set_filter(
    bounds: &CountBounds,
    individual: &[Vec<usize>],
    mode: CalibrationMode,
    combiner: &str,
    rule: AppliedRule,
    budget: u64,
) -> Result<BatchPredictionSet> {
    let intervals = bounds.intervals().ok_or(Error::EmptyBounds)?;
    let num_classes = intervals.len();
    let m = individual.len();

    let total = candidate_total(individual);
    if total > u128::from(budget) {
        return Err(Error::BudgetExceeded {
            candidates: total,
            budget,
        });
    }

    let mut members = Vec::new();
    for_each_candidate(individual, |labels| {
        let counts = count_vector(labels, num_classes);
        let ok = counts
            .iter()
            .zip(intervals)
            .all(|(&c, &(lo, hi))| c >= lo && c <= hi);
        if ok {
            members.push(SetMember {
                labels: labels.to_vec(),
                batch_p: None,
            });
        }
        Ok(())
    })?;

    Ok(BatchPredictionSet {
        m,
        num_classes,
        mode,
        combiner: combiner.to_string(),
        rule,
        members,
    })
}
