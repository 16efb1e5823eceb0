//! Independent reference implementations used by the integration tests.
//!
//! The statistics here are recomputed with `num_rational::Ratio<i128>`
//! arithmetic and the candidate loop decodes label vectors from integers,
//! so none of the crate's fraction type, sorting or odometer code is on
//! the reference path. Fisher's transcendental statistic is the one
//! exception: its survival function is checked separately against the
//! incomplete-gamma routine below, and set membership reuses it to keep
//! boundary decisions comparable.
#![allow(dead_code)] // shared by several integration-test binaries

use batch_conformal::{
    fisher_p, CalibrationMode, PValuePanel, RankPValue, Threshold, ThresholdTable,
};
use num_rational::{BigRational, Ratio};
use num_traits::{One, ToPrimitive};
use rand::Rng;

pub type Rat = Ratio<i128>;

pub fn rat(num: i128, den: i128) -> Rat {
    Ratio::new(num, den)
}

/// Exact rational value of a finite f64.
pub fn rat_from_f64(x: f64) -> Rat {
    let big = BigRational::from_float(x).expect("finite");
    let num = big.numer().to_i128().expect("fits i128");
    let den = big.denom().to_i128().expect("fits i128");
    Ratio::new(num, den)
}

fn pvalue_rat(p: RankPValue) -> Rat {
    rat(i128::from(p.numerator()), i128::from(p.denominator()))
}

#[derive(Clone, Debug)]
pub enum OracleCombiner {
    Bonferroni,
    Simes,
    Storey { lambda: f64 },
    Quantile { ell: usize },
    Fisher,
}

/// A reference statistic: exact rational where possible.
#[derive(Clone, Debug)]
pub enum OracleStat {
    Rational(Rat),
    Real(f64),
    PlusInf,
}

impl OracleStat {
    pub fn exceeds_alpha(&self, alpha: f64) -> bool {
        match self {
            OracleStat::Rational(r) => *r > rat_from_f64(alpha),
            OracleStat::Real(v) => *v > alpha,
            OracleStat::PlusInf => true,
        }
    }

    pub fn at_least(&self, t: Threshold) -> bool {
        match t {
            Threshold::NegInf => true,
            Threshold::Value(tv) => match self {
                OracleStat::Rational(r) => *r >= rat_from_f64(tv),
                OracleStat::Real(v) => *v >= tv,
                OracleStat::PlusInf => true,
            },
        }
    }
}

fn sorted_rationals(pvals: &[RankPValue]) -> Vec<Rat> {
    let mut v: Vec<Rat> = pvals.iter().map(|&p| pvalue_rat(p)).collect();
    v.sort();
    v
}

fn adaptive_stat(sorted: &[Rat], m0: &OracleStat) -> OracleStat {
    match m0 {
        OracleStat::PlusInf => OracleStat::PlusInf,
        OracleStat::Rational(m0) => {
            let mut best: Option<Rat> = None;
            for (idx, p) in sorted.iter().enumerate() {
                let term = m0 * p / rat(idx as i128 + 1, 1);
                if best.as_ref().is_none_or(|b| term < *b) {
                    best = Some(term);
                }
            }
            OracleStat::Rational(best.expect("nonempty"))
        }
        OracleStat::Real(m0) => {
            let mut best = f64::INFINITY;
            for (idx, p) in sorted.iter().enumerate() {
                let term = m0 * p.to_f64().unwrap() / (idx as f64 + 1.0);
                best = best.min(term);
            }
            OracleStat::Real(best)
        }
    }
}

/// floor(lambda * d) / d with lambda taken as the exact f64 rational.
fn rounded_lambda(lambda: f64, d: i128) -> Rat {
    let l = rat_from_f64(lambda);
    let scaled = l * rat(d, 1);
    rat(scaled.floor().to_integer(), d)
}

fn storey_m0_oracle(
    pvals: &[RankPValue],
    labels: &[usize],
    lambda: f64,
    mode: CalibrationMode,
    denominators: &[u32],
) -> OracleStat {
    let m = pvals.len() as i128;
    match mode {
        CalibrationMode::Full => {
            let d = i128::from(denominators[0]);
            let threshold = rounded_lambda(lambda, d);
            let count = pvals
                .iter()
                .filter(|&&p| pvalue_rat(p) >= threshold)
                .count() as i128;
            let lam = rat_from_f64(lambda);
            OracleStat::Rational((Rat::one() - lam).recip() * rat(1 + count, 1))
        }
        CalibrationMode::ClassConditional => {
            let lambdas: Vec<Rat> = denominators
                .iter()
                .map(|&d| rounded_lambda(lambda, i128::from(d)))
                .collect();
            let count = pvals
                .iter()
                .zip(labels)
                .filter(|&(&p, &y)| pvalue_rat(p) >= lambdas[y])
                .count() as i128;
            if lambdas.windows(2).all(|w| w[0] == w[1]) {
                let scale = (Rat::one() - lambdas[0]).recip();
                return OracleStat::Rational(scale * rat(1 + count, 1));
            }
            let exponent = 1.0 / (m as f64 - 1.0);
            let lam_min = lambdas.iter().min().unwrap().to_f64().unwrap();
            let mut kappa = (1.0 - lam_min).powf(exponent);
            for (k, lam) in lambdas.iter().enumerate() {
                let mk = labels.iter().filter(|&&y| y == k).count();
                if mk > 0 {
                    kappa *= (1.0 - lam.to_f64().unwrap()).powf(-(mk as f64) * exponent);
                }
            }
            OracleStat::Real(kappa * (1.0 + count as f64))
        }
    }
}

/// Reference batch statistic for one candidate.
pub fn oracle_statistic(
    combiner: &OracleCombiner,
    pvals: &[RankPValue],
    labels: &[usize],
    mode: CalibrationMode,
    denominators: &[u32],
) -> OracleStat {
    let m = pvals.len();
    match combiner {
        OracleCombiner::Bonferroni => {
            let min = pvals
                .iter()
                .map(|&p| pvalue_rat(p))
                .min()
                .expect("nonempty");
            OracleStat::Rational(min * rat(m as i128, 1))
        }
        OracleCombiner::Simes => {
            let sorted = sorted_rationals(pvals);
            adaptive_stat(&sorted, &OracleStat::Rational(rat(m as i128, 1)))
        }
        OracleCombiner::Storey { lambda } => {
            let m0 = storey_m0_oracle(pvals, labels, *lambda, mode, denominators);
            adaptive_stat(&sorted_rationals(pvals), &m0)
        }
        OracleCombiner::Quantile { ell } => {
            let sorted = sorted_rationals(pvals);
            let p = &sorted[*ell - 1];
            let m0 = if p.is_one() {
                OracleStat::PlusInf
            } else {
                OracleStat::Rational(rat((m - ell + 1) as i128, 1) / (Rat::one() - p))
            };
            adaptive_stat(&sorted, &m0)
        }
        OracleCombiner::Fisher => OracleStat::Real(fisher_p(pvals).unwrap().raw_statistic()),
    }
}

#[derive(Clone, Copy, Debug)]
pub enum OracleRule<'a> {
    Alpha(f64),
    Table(&'a ThresholdTable),
}

/// Exhaustive reference enumeration, decoding candidates from integers
/// (most-significant digit first, so the order is lexicographic).
pub fn brute_force_members(
    panel: &PValuePanel,
    combiner: &OracleCombiner,
    rule: OracleRule<'_>,
) -> Vec<Vec<usize>> {
    let m = panel.batch_size();
    let k = panel.num_classes();
    let total = (k as u128).pow(m as u32);
    let mut members = Vec::new();
    for code in 0..total {
        let mut labels = vec![0usize; m];
        let mut rest = code;
        for slot in (0..m).rev() {
            labels[slot] = (rest % k as u128) as usize;
            rest /= k as u128;
        }
        let pvals: Vec<RankPValue> = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| panel.get(i, y))
            .collect();
        let stat = oracle_statistic(combiner, &pvals, &labels, panel.mode(), panel.denominators());
        let included = match rule {
            OracleRule::Alpha(alpha) => stat.exceeds_alpha(alpha),
            OracleRule::Table(table) => {
                let mut counts = vec![0usize; k];
                for &y in &labels {
                    counts[y] += 1;
                }
                let t = match table.mode {
                    CalibrationMode::Full => table.entries[0].t,
                    CalibrationMode::ClassConditional => {
                        table
                            .entries
                            .iter()
                            .find(|e| e.composition == counts)
                            .expect("table covers all compositions")
                            .t
                    }
                };
                stat.at_least(t)
            }
        };
        if included {
            members.push(labels);
        }
    }
    members
}

/// Min/max class counts over a member list; None when it is empty.
pub fn brute_force_bounds(members: &[Vec<usize>], k: usize) -> Option<Vec<(usize, usize)>> {
    if members.is_empty() {
        return None;
    }
    let mut intervals = vec![(usize::MAX, 0usize); k];
    for labels in members {
        let mut counts = vec![0usize; k];
        for &y in labels {
            counts[y] += 1;
        }
        for (slot, &c) in intervals.iter_mut().zip(&counts) {
            slot.0 = slot.0.min(c);
            slot.1 = slot.1.max(c);
        }
    }
    Some(intervals)
}

/// Random rank-p-value panel on per-class grids.
pub fn random_panel(
    rng: &mut impl Rng,
    m: usize,
    k: usize,
    mode: CalibrationMode,
) -> PValuePanel {
    let denominators: Vec<u32> = match mode {
        CalibrationMode::Full => vec![rng.random_range(8..=24); k],
        CalibrationMode::ClassConditional => (0..k).map(|_| rng.random_range(8..=24)).collect(),
    };
    let rows: Vec<Vec<u32>> = (0..m)
        .map(|_| {
            (0..k)
                .map(|j| rng.random_range(1..=denominators[j]))
                .collect()
        })
        .collect();
    PValuePanel::from_parts(mode, &rows, &denominators).unwrap()
}

/// Regularized upper incomplete gamma Q(a, x) for integer a >= 1, via the
/// series for P when x < a + 1 and a Lentz continued fraction otherwise.
pub fn reg_upper_gamma_int(a: usize, x: f64) -> f64 {
    assert!(a >= 1);
    let a_f = a as f64;
    if x <= 0.0 {
        return 1.0;
    }
    // ln Gamma(a) = ln (a-1)!
    let ln_gamma: f64 = (1..a).map(|j| (j as f64).ln()).sum();
    let log_prefactor = -x + a_f * x.ln() - ln_gamma;
    if x < a_f + 1.0 {
        // Series for P(a, x).
        let mut term = 1.0 / a_f;
        let mut sum = term;
        let mut denom = a_f;
        for _ in 0..500 {
            denom += 1.0;
            term *= x / denom;
            sum += term;
            if term.abs() < sum.abs() * f64::EPSILON {
                break;
            }
        }
        1.0 - sum * log_prefactor.exp()
    } else {
        // Lentz continued fraction for Q(a, x).
        let tiny = 1e-300;
        let mut b = x + 1.0 - a_f;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let an = -(i as f64) * (i as f64 - a_f);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < f64::EPSILON {
                break;
            }
        }
        log_prefactor.exp() * h
    }
}

/// 3-sigma binomial Monte-Carlo margin around probability p.
#[allow(dead_code)]
pub fn mc_margin(p: f64, replications: usize) -> f64 {
    3.0 * (p * (1.0 - p) / replications as f64).sqrt()
}
