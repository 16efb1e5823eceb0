//! Batch p-value combiners and the m0 estimators for their adaptive forms.
//!
//! Every combiner maps the m per-item p-values of a candidate label vector
//! to one batch p-value. The Simes-family statistics stay rational, so the
//! comparisons that decide set membership are carried out exactly; Fisher
//! goes through the chi-square survival function and is evaluated in f64.

use crate::error::{Error, Result};
use crate::frac::Frac;
use crate::pvalues::{CalibrationMode, PValuePanel, RankPValue};
use crate::thresholds::Threshold;

/// Combining rule for batch p-values.
#[derive(Clone, Debug, PartialEq)]
pub enum CombinerSpec {
    /// m times the smallest p-value.
    Bonferroni,
    /// min over l of m * p_(l) / l.
    Simes,
    /// Simes with m replaced by an estimate of the number of correct labels.
    AdaptiveSimes(M0Estimator),
    /// Chi-square(2m) survival of -2 * sum(log p).
    Fisher,
}

impl CombinerSpec {
    /// True when the batch statistic is coordinatewise monotone in the
    /// p-values alone, a requirement of the shortcut algorithms.
    pub fn is_monotone(&self) -> bool {
        match self {
            CombinerSpec::AdaptiveSimes(est) => est.is_monotone(),
            _ => true,
        }
    }

    /// Stable identifier used in reports and the CLI.
    pub fn id(&self) -> String {
        match self {
            CombinerSpec::Bonferroni => "bonferroni".into(),
            CombinerSpec::Simes | CombinerSpec::AdaptiveSimes(M0Estimator::Constant) => {
                "simes".into()
            }
            CombinerSpec::AdaptiveSimes(est) => est.id(),
            CombinerSpec::Fisher => "fisher".into(),
        }
    }
}

impl std::fmt::Display for CombinerSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.id())
    }
}

/// Estimator of m0(y), the number of coordinates of a candidate equal to
/// the true label vector.
#[derive(Clone, Debug, PartialEq)]
pub enum M0Estimator {
    /// The constant m; recovers plain Simes.
    Constant,
    /// Storey-type exceedance count above a rounded lambda threshold.
    Storey { lambda: f64 },
    /// Quantile estimator (m - l + 1) / (1 - p_(l)).
    Quantile { ell: usize },
    /// The true m0(y); usable only when the true labels are known.
    Oracle { truth: Vec<usize> },
    /// Smallest of several estimates.
    MinOf(Vec<M0Estimator>),
}

impl M0Estimator {
    pub fn is_monotone(&self) -> bool {
        match self {
            M0Estimator::Oracle { .. } => false,
            M0Estimator::MinOf(parts) => parts.iter().all(M0Estimator::is_monotone),
            _ => true,
        }
    }

    pub fn id(&self) -> String {
        match self {
            M0Estimator::Constant => "simes".into(),
            M0Estimator::Storey { lambda } => format!("storey-simes:{lambda}"),
            M0Estimator::Quantile { ell } => format!("quantile-simes:{ell}"),
            M0Estimator::Oracle { .. } => "oracle-simes".into(),
            M0Estimator::MinOf(parts) => {
                let inner: Vec<String> = parts.iter().map(M0Estimator::id).collect();
                format!("min-simes[{}]", inner.join("+"))
            }
        }
    }
}

/// An m0 estimate: exact rational, floating approximation, or saturated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum M0Value {
    Exact(Frac),
    Approx(f64),
    Infinite,
}

impl M0Value {
    pub fn value(&self) -> f64 {
        match self {
            M0Value::Exact(f) => f.to_f64(),
            M0Value::Approx(v) => *v,
            M0Value::Infinite => f64::INFINITY,
        }
    }

    fn is_zero(&self) -> bool {
        match self {
            M0Value::Exact(f) => f.is_zero(),
            M0Value::Approx(v) => *v == 0.0,
            M0Value::Infinite => false,
        }
    }
}

/// A raw batch statistic: exact when the arithmetic stayed rational.
#[derive(Clone, Copy, Debug)]
pub(crate) enum StatValue {
    Exact(Frac),
    Approx(f64),
    Infinite,
}

impl StatValue {
    pub(crate) fn to_f64(self) -> f64 {
        match self {
            StatValue::Exact(f) => f.to_f64(),
            StatValue::Approx(v) => v,
            StatValue::Infinite => f64::INFINITY,
        }
    }

    /// Strict comparison against a level, exact on the rational path.
    pub(crate) fn exceeds(&self, alpha: &ExactAlpha) -> bool {
        match self {
            StatValue::Exact(f) => *f > alpha.frac,
            StatValue::Approx(v) => *v > alpha.value,
            StatValue::Infinite => true,
        }
    }

    /// Weak comparison against an empirical threshold.
    pub(crate) fn at_least(&self, t: &Threshold) -> bool {
        match t {
            Threshold::NegInf => true,
            Threshold::Value(tv) => match self {
                StatValue::Exact(f) => match Frac::from_f64_exact(*tv) {
                    Some(tf) => *f >= tf,
                    None => f.to_f64() >= *tv,
                },
                StatValue::Approx(v) => v >= tv,
                StatValue::Infinite => true,
            },
        }
    }
}

/// A level alpha carried both as its f64 value and its exact rational.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ExactAlpha {
    pub(crate) value: f64,
    pub(crate) frac: Frac,
}

pub(crate) fn exact_alpha(alpha: f64, allow_zero: bool) -> Result<ExactAlpha> {
    let lower_ok = if allow_zero { alpha >= 0.0 } else { alpha > 0.0 };
    if !alpha.is_finite() || !lower_ok || alpha >= 1.0 {
        return Err(Error::InvalidAlpha(alpha));
    }
    let frac = Frac::from_f64_exact(alpha).ok_or(Error::InvalidAlpha(alpha))?;
    Ok(ExactAlpha { value: alpha, frac })
}

/// Batch p-value: the reported value is capped at one, the raw statistic
/// (which exceeds one e.g. for Bonferroni) is kept alongside.
#[derive(Clone, Copy, Debug)]
pub struct BatchPValue {
    stat: StatValue,
}

impl BatchPValue {
    pub(crate) fn from_stat(stat: StatValue) -> Self {
        BatchPValue { stat }
    }

    /// min(raw statistic, 1).
    pub fn value(&self) -> f64 {
        self.stat.to_f64().min(1.0)
    }

    /// Uncapped combining-function output; may be infinite.
    pub fn raw_statistic(&self) -> f64 {
        self.stat.to_f64()
    }

    pub(crate) fn stat(&self) -> &StatValue {
        &self.stat
    }
}

/// Denominator layout the estimators need: the calibration mode plus the
/// per-class d+1 values.
#[derive(Clone, Debug)]
pub struct CombinerContext {
    mode: CalibrationMode,
    denominators: Vec<u32>,
}

impl CombinerContext {
    pub fn from_panel(panel: &PValuePanel) -> Self {
        CombinerContext {
            mode: panel.mode(),
            denominators: panel.denominators().to_vec(),
        }
    }

    /// Full-calibration context with n shared calibration examples.
    pub fn full(n: usize, num_classes: usize) -> Self {
        CombinerContext {
            mode: CalibrationMode::Full,
            denominators: vec![(n + 1) as u32; num_classes.max(1)],
        }
    }

    /// Class-conditional context from per-class calibration sizes.
    pub fn conditional(class_sizes: &[usize]) -> Self {
        CombinerContext {
            mode: CalibrationMode::ClassConditional,
            denominators: class_sizes.iter().map(|&n| (n + 1) as u32).collect(),
        }
    }

    pub fn mode(&self) -> CalibrationMode {
        self.mode
    }

    pub fn denominators(&self) -> &[u32] {
        &self.denominators
    }

    fn shared_n(&self) -> usize {
        self.denominators[0] as usize - 1
    }
}

fn require_nonempty(pvec: &[RankPValue]) -> Result<()> {
    if pvec.is_empty() {
        return Err(Error::EmptyPValueVector);
    }
    Ok(())
}

fn validate_lambda(lambda: f64) -> Result<Frac> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::InvalidLambda(lambda));
    }
    Frac::from_f64_exact(lambda).ok_or(Error::InvalidLambda(lambda))
}

pub(crate) fn sorted_ascending(pvec: &[RankPValue]) -> Vec<RankPValue> {
    let mut sorted = pvec.to_vec();
    sorted.sort_unstable();
    sorted
}

/// min over l of m0 * p_(l) / l for an ascending-sorted p-vector.
pub(crate) fn simes_scan(sorted: &[RankPValue], m0: &M0Value) -> StatValue {
    match m0 {
        M0Value::Infinite => StatValue::Infinite,
        M0Value::Exact(f) => {
            if f.is_zero() {
                return StatValue::Exact(Frac::ZERO);
            }
            let mut best: Option<Frac> = None;
            for (idx, p) in sorted.iter().enumerate() {
                let ell = idx as u128 + 1;
                let term = f
                    .checked_mul(&p.as_frac())
                    .and_then(|t| t.checked_div_int(ell));
                match term {
                    Some(t) => {
                        if best.is_none_or(|b| t < b) {
                            best = Some(t);
                        }
                    }
                    None => return simes_scan(sorted, &M0Value::Approx(f.to_f64())),
                }
            }
            StatValue::Exact(best.expect("nonempty p-vector"))
        }
        M0Value::Approx(v) => {
            let mut best = f64::INFINITY;
            for (idx, p) in sorted.iter().enumerate() {
                let term = v * p.value() / (idx as f64 + 1.0);
                if term < best {
                    best = term;
                }
            }
            StatValue::Approx(best)
        }
    }
}

/// Bonferroni batch p-value: min(1, m * min p).
pub fn bonferroni_p(pvec: &[RankPValue]) -> Result<BatchPValue> {
    require_nonempty(pvec)?;
    let smallest = pvec.iter().min().expect("nonempty");
    let m = pvec.len() as u128;
    let stat = match smallest.as_frac().checked_mul_int(m) {
        Some(f) => StatValue::Exact(f),
        None => StatValue::Approx(smallest.value() * m as f64),
    };
    Ok(BatchPValue::from_stat(stat))
}

/// Simes batch p-value: min(1, min over l of m * p_(l) / l).
pub fn simes_p(pvec: &[RankPValue]) -> Result<BatchPValue> {
    require_nonempty(pvec)?;
    let sorted = sorted_ascending(pvec);
    let m0 = M0Value::Exact(Frac::integer(pvec.len() as u128));
    Ok(BatchPValue::from_stat(simes_scan(&sorted, &m0)))
}

/// Adaptive Simes batch p-value with a precomputed m0 estimate.
///
/// A saturated (infinite) estimate yields the conservative value one; a
/// nonpositive finite estimate is rejected.
pub fn adaptive_simes_p(pvec: &[RankPValue], m0: &M0Value) -> Result<BatchPValue> {
    require_nonempty(pvec)?;
    if m0.is_zero() || m0.value() < 0.0 {
        return Err(Error::NonPositiveM0(m0.value()));
    }
    let sorted = sorted_ascending(pvec);
    Ok(BatchPValue::from_stat(simes_scan(&sorted, m0)))
}

/// Survival function of a chi-square distribution with 2*half_df degrees
/// of freedom, via the closed-form Erlang sum
/// exp(-x/2) * sum_{j<half_df} (x/2)^j / j!.
pub fn chi_square_even_survival(x: f64, half_df: usize) -> f64 {
    assert!(half_df >= 1, "degrees of freedom must be positive");
    let h = x.max(0.0) / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for j in 1..half_df {
        term *= h / j as f64;
        sum += term;
    }
    (-h).exp() * sum
}

/// Fisher batch p-value: chi-square(2m) survival of -2 * sum(log p).
///
/// The logs are summed in sorted order so the statistic is invariant
/// under permutations of the input, not just up to rounding.
pub fn fisher_p(pvec: &[RankPValue]) -> Result<BatchPValue> {
    require_nonempty(pvec)?;
    let sorted = sorted_ascending(pvec);
    let x: f64 = sorted.iter().map(|p| -2.0 * p.value().ln()).sum();
    let stat = chi_square_even_survival(x, pvec.len());
    Ok(BatchPValue::from_stat(StatValue::Approx(stat)))
}

/// Storey-type m0 estimator.
///
/// Full mode counts exceedances of floor((n+1)*lambda)/(n+1) and rescales
/// by 1/(1-lambda). Class-conditional mode rounds lambda on each class and
/// rescales by kappa(y), which depends on the candidate's class counts;
/// kappa is rational exactly when all per-class rounded lambdas agree.
pub fn storey_m0(
    pvec: &[RankPValue],
    lambda: f64,
    ctx: &CombinerContext,
    labels: &[usize],
) -> Result<M0Value> {
    require_nonempty(pvec)?;
    let lambda_frac = validate_lambda(lambda)?;
    let m = pvec.len();
    match ctx.mode() {
        CalibrationMode::Full => {
            let n_plus_1 = ctx.shared_n() as u128 + 1;
            let threshold = Frac::new(lambda_frac.floor_mul(n_plus_1), n_plus_1);
            let count = pvec
                .iter()
                .filter(|p| p.as_frac() >= threshold)
                .count() as u128;
            let scale = lambda_frac
                .one_minus()
                .and_then(|f| f.recip())
                .expect("lambda inside (0,1)");
            match scale.checked_mul_int(1 + count) {
                Some(f) => Ok(M0Value::Exact(f)),
                None => Ok(M0Value::Approx(
                    (1.0 + count as f64) / (1.0 - lambda),
                )),
            }
        }
        CalibrationMode::ClassConditional => {
            if m < 2 {
                return Err(Error::BatchTooSmall { m });
            }
            if labels.len() != m {
                return Err(Error::LengthMismatch {
                    expected: m,
                    found: labels.len(),
                });
            }
            let num_classes = ctx.denominators().len();
            if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
                return Err(Error::LabelOutOfRange {
                    label: bad,
                    num_classes,
                });
            }
            let lambdas = class_lambdas(&lambda_frac, ctx.denominators());
            let count = pvec
                .iter()
                .zip(labels)
                .filter(|(p, &label)| p.as_frac() >= lambdas[label])
                .count() as u128;
            let kappa = conditional_kappa(&lambdas, labels, m);
            Ok(match kappa {
                M0Value::Exact(k) => match k.checked_mul_int(1 + count) {
                    Some(f) => M0Value::Exact(f),
                    None => M0Value::Approx(k.to_f64() * (1.0 + count as f64)),
                },
                M0Value::Approx(k) => M0Value::Approx(k * (1.0 + count as f64)),
                M0Value::Infinite => M0Value::Infinite,
            })
        }
    }
}

/// Per-class rounded thresholds floor(lambda*(n_k+1))/(n_k+1).
pub(crate) fn class_lambdas(lambda: &Frac, denominators: &[u32]) -> Vec<Frac> {
    denominators
        .iter()
        .map(|&d| Frac::new(lambda.floor_mul(u128::from(d)), u128::from(d)))
        .collect()
}

/// kappa(y) = (1 - min_k lambda_k)^{1/(m-1)} * prod_k (1-lambda_k)^{-m_k/(m-1)}.
///
/// Exact (and equal to 1/(1-lambda)) when all rounded lambdas agree,
/// irrational in general.
fn conditional_kappa(lambdas: &[Frac], labels: &[usize], m: usize) -> M0Value {
    let all_equal = lambdas.windows(2).all(|w| w[0] == w[1]);
    if all_equal {
        let scale = lambdas[0]
            .one_minus()
            .and_then(|f| f.recip())
            .expect("lambda_k below one");
        return M0Value::Exact(scale);
    }
    let exponent = 1.0 / (m as f64 - 1.0);
    let min_lambda = lambdas.iter().min().expect("nonempty classes").to_f64();
    let mut kappa = (1.0 - min_lambda).powf(exponent);
    let mut class_counts = vec![0usize; lambdas.len()];
    for &label in labels {
        class_counts[label] += 1;
    }
    for (k, &count) in class_counts.iter().enumerate() {
        if count > 0 {
            kappa *= (1.0 - lambdas[k].to_f64()).powf(-(count as f64) * exponent);
        }
    }
    M0Value::Approx(kappa)
}

/// Quantile m0 estimator (m - ell + 1) / (1 - p_(ell)), saturating to
/// infinity when p_(ell) = 1.
pub fn quantile_m0(pvec: &[RankPValue], ell: usize) -> Result<M0Value> {
    require_nonempty(pvec)?;
    let m = pvec.len();
    if ell < 1 || ell > m {
        return Err(Error::InvalidQuantileIndex { ell, m });
    }
    let sorted = sorted_ascending(pvec);
    let p = sorted[ell - 1];
    if p.is_one() {
        return Ok(M0Value::Infinite);
    }
    let den = u128::from(p.denominator());
    let num = u128::from(p.numerator());
    Ok(M0Value::Exact(Frac::new(
        (m - ell + 1) as u128 * den,
        den - num,
    )))
}

fn cmp_m0(a: &M0Value, b: &M0Value) -> std::cmp::Ordering {
    match (a, b) {
        (M0Value::Infinite, M0Value::Infinite) => std::cmp::Ordering::Equal,
        (M0Value::Infinite, _) => std::cmp::Ordering::Greater,
        (_, M0Value::Infinite) => std::cmp::Ordering::Less,
        (M0Value::Exact(x), M0Value::Exact(y)) => x.cmp(y),
        _ => a.value().total_cmp(&b.value()),
    }
}

/// Evaluate an estimator for a candidate label vector.
pub(crate) fn evaluate_m0(
    estimator: &M0Estimator,
    pvec: &[RankPValue],
    labels: &[usize],
    ctx: &CombinerContext,
) -> Result<M0Value> {
    match estimator {
        M0Estimator::Constant => Ok(M0Value::Exact(Frac::integer(pvec.len() as u128))),
        M0Estimator::Storey { lambda } => storey_m0(pvec, *lambda, ctx, labels),
        M0Estimator::Quantile { ell } => quantile_m0(pvec, *ell),
        M0Estimator::Oracle { truth } => {
            if truth.len() != labels.len() {
                return Err(Error::LengthMismatch {
                    expected: labels.len(),
                    found: truth.len(),
                });
            }
            let matches = labels.iter().zip(truth).filter(|(a, b)| a == b).count();
            Ok(M0Value::Exact(Frac::integer(matches as u128)))
        }
        M0Estimator::MinOf(parts) => {
            if parts.is_empty() {
                return Err(Error::InvalidConfig(
                    "min-of estimator needs at least one component".into(),
                ));
            }
            let mut best: Option<M0Value> = None;
            for part in parts {
                let v = evaluate_m0(part, pvec, labels, ctx)?;
                best = Some(match best {
                    None => v,
                    Some(b) => {
                        if cmp_m0(&v, &b) == std::cmp::Ordering::Less {
                            v
                        } else {
                            b
                        }
                    }
                });
            }
            Ok(best.expect("nonempty estimator list"))
        }
    }
}

/// Dispatch a combiner over one candidate's p-values.
///
/// `labels` is the candidate label vector; it matters only for estimators
/// that depend on the candidate's classes (Storey in conditional mode and
/// the oracle). An oracle estimate of zero simply yields a zero batch
/// p-value, so the candidate is excluded at any level.
pub fn batch_p(
    combiner: &CombinerSpec,
    pvec: &[RankPValue],
    labels: &[usize],
    ctx: &CombinerContext,
) -> Result<BatchPValue> {
    match combiner {
        CombinerSpec::Bonferroni => bonferroni_p(pvec),
        CombinerSpec::Simes => simes_p(pvec),
        CombinerSpec::Fisher => fisher_p(pvec),
        CombinerSpec::AdaptiveSimes(est) => {
            require_nonempty(pvec)?;
            let m0 = evaluate_m0(est, pvec, labels, ctx)?;
            if m0.is_zero() {
                return Ok(BatchPValue::from_stat(StatValue::Exact(Frac::ZERO)));
            }
            let sorted = sorted_ascending(pvec);
            Ok(BatchPValue::from_stat(simes_scan(&sorted, &m0)))
        }
    }
}
