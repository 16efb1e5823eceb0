//! Conservative class-count bounds in O(K * m^2) without enumerating [K]^m.
//!
//! For class k and target count v, a single dominating p-vector q is built
//! from the v largest class-k p-values and the m-v largest per-item maxima
//! over the other classes. q dominates p(y) coordinatewise (after sorting)
//! for every candidate y with m_k(y) = v, so a statistic that is monotone
//! in the p-values can rule out the count v for the whole class at once.
//! The resulting interval contains the exact one; with two classes and
//! complementary probability scores it is exact.

use crate::combiners::{
    batch_p, class_lambdas, exact_alpha, simes_scan, CombinerContext, CombinerSpec, M0Estimator,
    M0Value, StatValue,
};
use crate::enumeration::CountBounds;
use crate::error::{Error, Result};
use crate::frac::Frac;
use crate::pvalues::{CalibrationMode, PValuePanel, RankPValue};
use crate::thresholds::{Threshold, ThresholdTable};

/// Sorted inputs for one class: its own column and the per-item maxima
/// over the other classes, both descending.
struct ClassColumns {
    own_desc: Vec<RankPValue>,
    other_max_desc: Vec<RankPValue>,
}

fn class_columns(panel: &PValuePanel, class: usize) -> ClassColumns {
    let m = panel.batch_size();
    let mut own: Vec<RankPValue> = (0..m).map(|i| panel.get(i, class)).collect();
    let mut other: Vec<RankPValue> = (0..m)
        .map(|i| {
            (0..panel.num_classes())
                .filter(|&j| j != class)
                .map(|j| panel.get(i, j))
                .max()
                .expect("at least two classes")
        })
        .collect();
    own.sort_unstable_by(|a, b| b.cmp(a));
    other.sort_unstable_by(|a, b| b.cmp(a));
    ClassColumns {
        own_desc: own,
        other_max_desc: other,
    }
}

/// Two-pointer merge of the top `v` own values with the top `m - v` other
/// maxima, ascending. Linear in m.
fn merged_ascending(cols: &ClassColumns, v: usize, out: &mut Vec<RankPValue>) {
    let m = cols.own_desc.len();
    out.clear();
    let a = &cols.own_desc[..v];
    let b = &cols.other_max_desc[..m - v];
    let mut ai = a.len();
    let mut bi = b.len();
    // Both slices are descending, so walk them from the back.
    while ai > 0 && bi > 0 {
        if a[ai - 1] <= b[bi - 1] {
            out.push(a[ai - 1]);
            ai -= 1;
        } else {
            out.push(b[bi - 1]);
            bi -= 1;
        }
    }
    while ai > 0 {
        out.push(a[ai - 1]);
        ai -= 1;
    }
    while bi > 0 {
        out.push(b[bi - 1]);
        bi -= 1;
    }
}

/// Evaluate an estimator on the merged vector, as a function of the
/// p-values alone.
///
/// In conditional mode the Storey estimator is majorized: exceedances are
/// counted against the smallest per-class threshold and kappa is maximized
/// over the compositions compatible with m_k = v. This keeps the estimate
/// at or above the one of any dominated candidate, so the bounds stay
/// conservative; when all rounded lambdas agree it reduces to the exact
/// 1/(1-lambda) scaling.
fn shortcut_m0(
    estimator: &M0Estimator,
    q: &[RankPValue],
    ctx: &CombinerContext,
    class: usize,
    v: usize,
) -> Result<M0Value> {
    let m = q.len();
    match estimator {
        M0Estimator::Constant => Ok(M0Value::Exact(Frac::integer(m as u128))),
        M0Estimator::Quantile { ell } => crate::combiners::quantile_m0(q, *ell),
        M0Estimator::Storey { lambda } => {
            if !(*lambda > 0.0 && *lambda < 1.0) {
                return Err(Error::InvalidLambda(*lambda));
            }
            let lambda_frac =
                Frac::from_f64_exact(*lambda).ok_or(Error::InvalidLambda(*lambda))?;
            match ctx.mode() {
                CalibrationMode::Full => {
                    let labels = vec![0usize; m];
                    crate::combiners::storey_m0(q, *lambda, ctx, &labels)
                }
                CalibrationMode::ClassConditional => {
                    if m < 2 {
                        return Err(Error::BatchTooSmall { m });
                    }
                    let lambdas = class_lambdas(&lambda_frac, ctx.denominators());
                    let lambda_min = *lambdas.iter().min().expect("classes present");
                    let count =
                        q.iter().filter(|p| p.as_frac() >= lambda_min).count() as u128;
                    let all_equal = lambdas.windows(2).all(|w| w[0] == w[1]);
                    if all_equal {
                        let scale = lambdas[0]
                            .one_minus()
                            .and_then(|f| f.recip())
                            .expect("lambda below one");
                        return Ok(match scale.checked_mul_int(1 + count) {
                            Some(f) => M0Value::Exact(f),
                            None => M0Value::Approx(scale.to_f64() * (1.0 + count as f64)),
                        });
                    }
                    let exponent = 1.0 / (m as f64 - 1.0);
                    let lambda_other = lambdas
                        .iter()
                        .enumerate()
                        .filter(|&(j, _)| j != class)
                        .map(|(_, l)| *l)
                        .max()
                        .expect("at least two classes");
                    let kappa = (1.0 - lambda_min.to_f64()).powf(exponent)
                        * (1.0 - lambdas[class].to_f64()).powf(-(v as f64) * exponent)
                        * (1.0 - lambda_other.to_f64()).powf(-((m - v) as f64) * exponent);
                    Ok(M0Value::Approx(kappa * (1.0 + count as f64)))
                }
            }
        }
        M0Estimator::MinOf(parts) => {
            if parts.is_empty() {
                return Err(Error::InvalidConfig(
                    "min-of estimator needs at least one component".into(),
                ));
            }
            let mut best: Option<M0Value> = None;
            for part in parts {
                let candidate = shortcut_m0(part, q, ctx, class, v)?;
                best = Some(match best {
                    None => candidate,
                    Some(b) if candidate.value() < b.value() => candidate,
                    Some(b) => b,
                });
            }
            Ok(best.expect("nonempty estimator list"))
        }
        M0Estimator::Oracle { .. } => Err(Error::NonMonotoneEstimator {
            estimator: estimator.id(),
        }),
    }
}

fn bounds_from_qualifying(per_class: Vec<Option<(usize, usize)>>) -> CountBounds {
    let mut intervals = Vec::with_capacity(per_class.len());
    for entry in per_class {
        match entry {
            Some(interval) => intervals.push(interval),
            None => return CountBounds::empty(),
        }
    }
    CountBounds::from_intervals(intervals)
}

/// Class-count bounds for the (adaptive) Simes prediction set.
///
/// The estimator must be monotone in the p-values; the oracle is rejected
/// because it depends on the candidate labels themselves.
pub fn simes_shortcut_bounds(
    panel: &PValuePanel,
    alpha: f64,
    estimator: &M0Estimator,
) -> Result<CountBounds> {
    if !estimator.is_monotone() {
        return Err(Error::NonMonotoneEstimator {
            estimator: estimator.id(),
        });
    }
    let alpha = exact_alpha(alpha, true)?;
    let ctx = CombinerContext::from_panel(panel);
    let m = panel.batch_size();
    let mut per_class = Vec::with_capacity(panel.num_classes());
    let mut q = Vec::with_capacity(m);
    for k in 0..panel.num_classes() {
        let cols = class_columns(panel, k);
        let mut lo = None;
        let mut hi = None;
        for v in 0..=m {
            merged_ascending(&cols, v, &mut q);
            let m0 = shortcut_m0(estimator, &q, &ctx, k, v)?;
            let h = simes_scan(&q, &m0);
            if h.exceeds(&alpha) {
                lo.get_or_insert(v);
                hi = Some(v);
            }
        }
        per_class.push(lo.zip(hi));
    }
    Ok(bounds_from_qualifying(per_class))
}

/// Class-count bounds for any symmetric monotone combiner under empirical
/// thresholds.
///
/// The cut for (k, v) is the smallest table threshold among compositions
/// whose class-k count is v; candidates are kept when F(q) reaches it.
pub fn general_shortcut_bounds(
    panel: &PValuePanel,
    combiner: &CombinerSpec,
    table: &ThresholdTable,
) -> Result<CountBounds> {
    if !combiner.is_monotone() {
        return Err(Error::NonMonotoneEstimator {
            estimator: combiner.id(),
        });
    }
    if table.m != panel.batch_size() {
        return Err(Error::InvalidConfig(format!(
            "threshold table was calibrated for m={}, panel has m={}",
            table.m,
            panel.batch_size()
        )));
    }
    let m = panel.batch_size();
    let num_classes = panel.num_classes();
    let ctx = CombinerContext::from_panel(panel);

    // min over table entries with composition[k] = v, one scan per class.
    let min_threshold: Vec<Vec<Option<Threshold>>> = match table.mode {
        CalibrationMode::Full => {
            let t = table.entries[0].t;
            vec![vec![Some(t); m + 1]; num_classes]
        }
        CalibrationMode::ClassConditional => {
            let mut grid = vec![vec![None::<Threshold>; m + 1]; num_classes];
            for entry in &table.entries {
                if entry.composition.len() != num_classes {
                    return Err(Error::MissingThreshold {
                        composition: entry.composition.clone(),
                    });
                }
                for (k, &v) in entry.composition.iter().enumerate() {
                    let slot = &mut grid[k][v];
                    let better = match slot {
                        None => true,
                        Some(current) => entry.t.as_f64() < current.as_f64(),
                    };
                    if better {
                        *slot = Some(entry.t);
                    }
                }
            }
            grid
        }
    };

    let mut per_class = Vec::with_capacity(num_classes);
    let mut q = Vec::with_capacity(m);
    for (k, class_thresholds) in min_threshold.iter().enumerate() {
        let cols = class_columns(panel, k);
        let mut lo = None;
        let mut hi = None;
        for (v, slot) in class_thresholds.iter().enumerate() {
            let t = slot.ok_or_else(|| Error::MissingThreshold {
                composition: vec![v],
            })?;
            merged_ascending(&cols, v, &mut q);
            let stat = general_statistic(combiner, &q, &ctx, k, v)?;
            if stat.at_least(&t) {
                lo.get_or_insert(v);
                hi = Some(v);
            }
        }
        per_class.push(lo.zip(hi));
    }
    Ok(bounds_from_qualifying(per_class))
}

fn general_statistic(
    combiner: &CombinerSpec,
    q: &[RankPValue],
    ctx: &CombinerContext,
    class: usize,
    v: usize,
) -> Result<StatValue> {
    match combiner {
        CombinerSpec::AdaptiveSimes(est) => {
            let m0 = shortcut_m0(est, q, ctx, class, v)?;
            Ok(simes_scan(q, &m0))
        }
        other => {
            // Symmetric statistics that ignore the labels entirely.
            let labels = vec![0usize; q.len()];
            Ok(*batch_p(other, q, &labels, ctx)?.stat())
        }
    }
}
