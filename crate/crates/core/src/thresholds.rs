//! Monte-Carlo calibration of empirical thresholds.
//!
//! For an arbitrary combining function the level-alpha cut is replaced by
//! the order statistic xi_((B+1)alpha) of B simulated null statistics, with
//! xi_(0) = -infinity. Rank p-values are distribution-free, so the nulls are
//! simulated from uniforms. In the conditional model the threshold depends
//! on the candidate's class composition, so a table holds one entry per
//! composition; it can be built once, before any data are observed.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combiners::{batch_p, exact_alpha, CombinerContext, CombinerSpec, M0Estimator};
use crate::error::{Error, Result};
use crate::pvalues::{CalibrationMode, RankPValue};
use crate::rng::{derive_seed, seeded_rng, GENERATOR_NAME};
use rand::Rng;

/// An empirical threshold; the sentinel is the order statistic of index 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Threshold {
    NegInf,
    Value(f64),
}

impl Threshold {
    pub fn as_f64(&self) -> f64 {
        match self {
            Threshold::NegInf => f64::NEG_INFINITY,
            Threshold::Value(v) => *v,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ThresholdRepr {
    Num(f64),
    Str(String),
}

impl Serialize for Threshold {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Threshold::NegInf => serializer.serialize_str("-inf"),
            Threshold::Value(v) if v.is_infinite() => serializer.serialize_str("inf"),
            Threshold::Value(v) => serializer.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        match ThresholdRepr::deserialize(deserializer)? {
            ThresholdRepr::Num(v) => Ok(Threshold::Value(v)),
            ThresholdRepr::Str(s) => match s.as_str() {
                "-inf" => Ok(Threshold::NegInf),
                "inf" => Ok(Threshold::Value(f64::INFINITY)),
                other => Err(serde::de::Error::custom(format!(
                    "unrecognized threshold string {other:?}"
                ))),
            },
        }
    }
}

/// One calibrated threshold, keyed by class composition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub composition: Vec<usize>,
    pub t: Threshold,
}

/// Calibrated thresholds plus everything needed to rebuild them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTable {
    pub mode: CalibrationMode,
    pub alpha: f64,
    #[serde(rename = "B")]
    pub b: u32,
    pub seed: u64,
    pub generator: String,
    pub combiner: String,
    pub m: usize,
    pub class_sizes: Vec<usize>,
    pub entries: Vec<TableEntry>,
}

impl ThresholdTable {
    /// Threshold for a candidate with the given class counts.
    pub fn threshold_for(&self, counts: &[usize]) -> Result<Threshold> {
        match self.mode {
            CalibrationMode::Full => Ok(self.entries[0].t),
            CalibrationMode::ClassConditional => self
                .entries
                .iter()
                .find(|e| e.composition == counts)
                .map(|e| e.t)
                .ok_or_else(|| Error::MissingThreshold {
                    composition: counts.to_vec(),
                }),
        }
    }

    /// Composition-keyed lookup map for enumeration-scale access.
    pub fn index(&self) -> HashMap<Vec<usize>, Threshold> {
        self.entries
            .iter()
            .map(|e| (e.composition.clone(), e.t))
            .collect()
    }
}

/// floor((B+1) * alpha) computed exactly from the f64 level.
fn order_index(b: u32, alpha: f64) -> Result<usize> {
    let alpha = exact_alpha(alpha, false)?;
    Ok(alpha.frac.floor_mul(u128::from(b) + 1) as usize)
}

/// The oracle count equals m at the true labels, which is what a
/// calibration run simulates.
fn calibration_estimator(est: &M0Estimator) -> M0Estimator {
    match est {
        M0Estimator::Oracle { .. } => M0Estimator::Constant,
        M0Estimator::MinOf(parts) => {
            M0Estimator::MinOf(parts.iter().map(calibration_estimator).collect())
        }
        other => other.clone(),
    }
}

fn calibration_combiner(combiner: &CombinerSpec) -> CombinerSpec {
    match combiner {
        CombinerSpec::AdaptiveSimes(est) => {
            CombinerSpec::AdaptiveSimes(calibration_estimator(est))
        }
        other => other.clone(),
    }
}

/// Rank p-values of test scores against calibration scores (sorted in place).
pub(crate) fn rank_pvalues(calibration: &mut [f64], tests: &[f64]) -> Vec<RankPValue> {
    calibration.sort_unstable_by(f64::total_cmp);
    let den = (calibration.len() + 1) as u32;
    tests
        .iter()
        .map(|&s| {
            let below = calibration.partition_point(|&x| x < s);
            let geq = calibration.len() - below;
            RankPValue::new(geq as u32 + 1, den).expect("rank in range")
        })
        .collect()
}

fn simulated_statistic_iid(
    n: usize,
    m: usize,
    combiner: &CombinerSpec,
    ctx: &CombinerContext,
    labels: &[usize],
    seed: u64,
    iteration: u64,
) -> Result<f64> {
    let mut rng = seeded_rng(seed, &[0x11D, iteration]);
    let mut cal: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let tests: Vec<f64> = (0..m).map(|_| rng.random()).collect();
    let pvec = rank_pvalues(&mut cal, &tests);
    Ok(batch_p(combiner, &pvec, labels, ctx)?.raw_statistic())
}

#[allow(clippy::too_many_arguments)]
fn simulated_statistic_conditional(
    class_sizes: &[usize],
    composition: &[usize],
    combiner: &CombinerSpec,
    ctx: &CombinerContext,
    labels: &[usize],
    seed: u64,
    comp_tag: u64,
    iteration: u64,
) -> Result<f64> {
    let mut rng = seeded_rng(seed, &[comp_tag, iteration]);
    let mut pvec = Vec::with_capacity(labels.len());
    for (k, &mk) in composition.iter().enumerate() {
        if mk == 0 {
            continue;
        }
        let nk = class_sizes[k];
        let mut cal: Vec<f64> = (0..nk).map(|_| rng.random()).collect();
        let tests: Vec<f64> = (0..mk).map(|_| rng.random()).collect();
        // Rank p-values share the class denominator n_k + 1.
        pvec.extend(rank_pvalues(&mut cal, &tests));
    }
    Ok(batch_p(combiner, &pvec, labels, ctx)?.raw_statistic())
}

fn threshold_from_stats(mut stats: Vec<f64>, idx: usize) -> Threshold {
    stats.sort_unstable_by(f64::total_cmp);
    Threshold::Value(stats[idx - 1])
}

/// Calibrate the full-calibration (iid) threshold for any combiner.
///
/// Deterministic given the seed; returns the -infinity sentinel whenever
/// floor((B+1)*alpha) is zero.
pub fn calibrate_iid(
    n: usize,
    m: usize,
    combiner: &CombinerSpec,
    alpha: f64,
    b: u32,
    seed: u64,
) -> Result<Threshold> {
    if n == 0 {
        return Err(Error::EmptyCalibration);
    }
    if m == 0 || b == 0 {
        return Err(Error::InvalidConfig(
            "calibration needs m >= 1 and B >= 1".into(),
        ));
    }
    let idx = order_index(b, alpha)?;
    if idx == 0 {
        return Ok(Threshold::NegInf);
    }
    let combiner = calibration_combiner(combiner);
    let ctx = CombinerContext::full(n, 1);
    let labels = vec![0usize; m];
    let stats = (1..=u64::from(b))
        .into_par_iter()
        .map(|it| simulated_statistic_iid(n, m, &combiner, &ctx, &labels, seed, it))
        .collect::<Result<Vec<f64>>>()?;
    Ok(threshold_from_stats(stats, idx))
}

/// Calibrate the class-conditional threshold for one composition.
///
/// Each class draws its own n_k calibration and m_k test uniforms; the
/// per-class p-value blocks are independent given the labels, so this
/// matches designating n of n+m draws as calibration.
pub fn calibrate_conditional(
    class_sizes: &[usize],
    composition: &[usize],
    combiner: &CombinerSpec,
    alpha: f64,
    b: u32,
    seed: u64,
) -> Result<Threshold> {
    if class_sizes.len() != composition.len() {
        return Err(Error::InvalidConfig(format!(
            "{} class sizes but {} composition entries",
            class_sizes.len(),
            composition.len()
        )));
    }
    let m: usize = composition.iter().sum();
    if m == 0 || b == 0 {
        return Err(Error::InvalidConfig(
            "calibration needs m >= 1 and B >= 1".into(),
        ));
    }
    for (k, (&nk, &mk)) in class_sizes.iter().zip(composition).enumerate() {
        if mk > 0 && nk == 0 {
            return Err(Error::EmptyClass { class: k });
        }
    }
    let idx = order_index(b, alpha)?;
    if idx == 0 {
        return Ok(Threshold::NegInf);
    }
    let combiner = calibration_combiner(combiner);
    let ctx = CombinerContext::conditional(class_sizes);
    let mut labels = Vec::with_capacity(m);
    for (k, &mk) in composition.iter().enumerate() {
        labels.extend(std::iter::repeat_n(k, mk));
    }
    let comp_tag = derive_seed(0xC0DE, &composition.iter().map(|&c| c as u64).collect::<Vec<_>>());
    let stats = (1..=u64::from(b))
        .into_par_iter()
        .map(|it| {
            simulated_statistic_conditional(
                class_sizes,
                composition,
                &combiner,
                &ctx,
                &labels,
                seed,
                comp_tag,
                it,
            )
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(threshold_from_stats(stats, idx))
}

/// All compositions of `m` into `k` nonnegative parts, lexicographic.
pub fn compositions(m: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(parts_left: usize, remaining: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if parts_left == 1 {
            prefix.push(remaining);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for v in 0..=remaining {
            prefix.push(v);
            rec(parts_left - 1, remaining - v, prefix, out);
            prefix.pop();
        }
    }
    assert!(k >= 1);
    let mut out = Vec::new();
    rec(k, m, &mut Vec::new(), &mut out);
    out
}

/// Number of compositions C(m+k-1, k-1), saturating on overflow.
pub fn composition_count(m: usize, k: usize) -> u128 {
    assert!(k >= 1);
    let n = (m + k - 1) as u128;
    let r = (k - 1) as u128;
    let r = r.min(n - r);
    let mut result: u128 = 1;
    for i in 0..r {
        result = match result.checked_mul(n - i) {
            Some(v) => v / (i + 1),
            None => return u128::MAX,
        };
    }
    result
}

/// Calibrate thresholds for every composition and package them as a table.
#[allow(clippy::too_many_arguments)]
pub fn build_table(
    class_sizes: &[usize],
    m: usize,
    mode: CalibrationMode,
    combiner: &CombinerSpec,
    alpha: f64,
    b: u32,
    seed: u64,
    composition_budget: u64,
) -> Result<ThresholdTable> {
    let entries = match mode {
        CalibrationMode::Full => {
            if class_sizes.len() != 1 {
                return Err(Error::InvalidConfig(
                    "full-calibration tables take a single calibration size".into(),
                ));
            }
            vec![TableEntry {
                composition: vec![m],
                t: calibrate_iid(class_sizes[0], m, combiner, alpha, b, seed)?,
            }]
        }
        CalibrationMode::ClassConditional => {
            let k = class_sizes.len();
            if k < 2 {
                return Err(Error::InvalidConfig(
                    "class-conditional tables need at least two classes".into(),
                ));
            }
            let count = composition_count(m, k);
            if count > u128::from(composition_budget) {
                return Err(Error::CompositionBudgetExceeded {
                    count,
                    budget: composition_budget,
                });
            }
            compositions(m, k)
                .into_iter()
                .map(|composition| {
                    let t =
                        calibrate_conditional(class_sizes, &composition, combiner, alpha, b, seed)?;
                    Ok(TableEntry { composition, t })
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    Ok(ThresholdTable {
        mode,
        alpha,
        b,
        seed,
        generator: GENERATOR_NAME.into(),
        combiner: combiner.id(),
        m,
        class_sizes: class_sizes.to_vec(),
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frac::Frac;

    #[test]
    fn sentinel_when_order_index_is_zero() {
        // B = 9, alpha = 0.05: floor(10 * 0.05) = 0.
        let t = calibrate_iid(19, 2, &CombinerSpec::Simes, 0.05, 9, 7).unwrap();
        assert_eq!(t, Threshold::NegInf);
    }

    #[test]
    fn deterministic_given_seed() {
        let a = calibrate_iid(19, 2, &CombinerSpec::Simes, 0.1, 499, 42).unwrap();
        let b = calibrate_iid(19, 2, &CombinerSpec::Simes, 0.1, 499, 42).unwrap();
        assert_eq!(a, b);
        let c = calibrate_iid(19, 2, &CombinerSpec::Simes, 0.1, 499, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn thresholds_nondecreasing_in_alpha() {
        // Same seed means the same simulated statistics, so a larger alpha
        // selects a later order statistic.
        let low = calibrate_iid(19, 3, &CombinerSpec::Fisher, 0.05, 999, 11).unwrap();
        let high = calibrate_iid(19, 3, &CombinerSpec::Fisher, 0.2, 999, 11).unwrap();
        assert!(low.as_f64() <= high.as_f64());
    }

    #[test]
    fn conditional_threshold_matches_exact_discrete_distribution() {
        // K=2, n_k=10 each, one test item per class, Bonferroni.
        // Each p-value is uniform on {1/11, ..., 11/11}, independently, so
        // xi = 2*min(p1, p2) has an exactly computable distribution. The
        // selected order statistic sits deep inside the atom containing the
        // alpha-quantile, so it equals that atom almost surely.
        let alpha = 0.1;
        let b = 9_999;
        let t = calibrate_conditional(
            &[10, 10],
            &[1, 1],
            &CombinerSpec::Bonferroni,
            alpha,
            b,
            5,
        )
        .unwrap();

        // Exhaustive distribution over the 11 x 11 grid.
        let atoms: Vec<(f64, f64)> = (1..=11u32)
            .map(|a| {
                let xi = Frac::new(2 * u128::from(a), 11).to_f64();
                let more = 11 - a; // outcomes with min strictly above a
                let prob_le = 1.0 - f64::from(more * more) / 121.0;
                (xi, prob_le)
            })
            .collect();
        let idx = Frac::from_f64_exact(alpha).unwrap().floor_mul(u128::from(b) + 1) as f64;
        let target = idx / f64::from(b);
        let expected = atoms
            .iter()
            .find(|&&(_, p)| p >= target)
            .map(|&(xi, _)| xi)
            .unwrap();
        assert_eq!(t, Threshold::Value(expected));
        assert_eq!(expected, 2.0 / 11.0);
    }

    #[test]
    fn empty_composition_blocks_contribute_nothing() {
        // Composition (1, 0): class 1 draws nothing, the statistic is a
        // single Bonferroni p-value uniform on {1/11, ..., 11/11}.
        let alpha = 0.2;
        let b = 19_999;
        let t = calibrate_conditional(
            &[10, 10],
            &[1, 0],
            &CombinerSpec::Bonferroni,
            alpha,
            b,
            9,
        )
        .unwrap();
        // Exact quantile atom: smallest a with a/11 >= idx/B.
        assert_eq!(t, Threshold::Value(3.0 / 11.0));
    }

    #[test]
    fn composition_enumeration() {
        assert_eq!(composition_count(5, 10), 2002);
        assert_eq!(compositions(5, 10).len(), 2002);
        assert_eq!(compositions(1, 2), vec![vec![0, 1], vec![1, 0]]);
        let all = compositions(2, 2);
        assert_eq!(all, vec![vec![0, 2], vec![1, 1], vec![2, 0]]);
    }

    #[test]
    fn table_covers_every_count_vector() {
        let table = build_table(
            &[5, 5],
            2,
            CalibrationMode::ClassConditional,
            &CombinerSpec::Simes,
            0.2,
            99,
            1,
            1_000,
        )
        .unwrap();
        assert_eq!(table.entries.len(), 3);
        for y0 in 0..2usize {
            for y1 in 0..2usize {
                let mut counts = vec![0usize; 2];
                counts[y0] += 1;
                counts[y1] += 1;
                assert!(table.threshold_for(&counts).is_ok());
            }
        }
        assert!(table.threshold_for(&[3, 0]).is_err());
    }

    #[test]
    fn table_json_round_trips() {
        let table = build_table(
            &[7],
            2,
            CalibrationMode::Full,
            &CombinerSpec::Fisher,
            0.3,
            49,
            3,
            1_000,
        )
        .unwrap();
        let json = serde_json::to_string(&table).unwrap();
        let back: ThresholdTable = serde_json::from_str(&json).unwrap();
        assert_eq!(table, back);

        let sentinel = build_table(
            &[7],
            2,
            CalibrationMode::Full,
            &CombinerSpec::Simes,
            0.05,
            9,
            3,
            1_000,
        )
        .unwrap();
        let json = serde_json::to_string(&sentinel).unwrap();
        assert!(json.contains("\"-inf\""));
        let back: ThresholdTable = serde_json::from_str(&json).unwrap();
        assert_eq!(back.entries[0].t, Threshold::NegInf);
    }

    #[test]
    fn composition_budget_is_enforced() {
        let err = build_table(
            &[5; 10],
            5,
            CalibrationMode::ClassConditional,
            &CombinerSpec::Simes,
            0.1,
            9,
            1,
            100,
        )
        .unwrap_err();
        assert!(matches!(err, Error::CompositionBudgetExceeded { count: 2002, .. }));
    }
}
