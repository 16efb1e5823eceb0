//! Simulation studies: a three-class Gaussian-mixture benchmark and
//! distribution-free coverage checks.
//!
//! Coverage runs exploit that rank p-values are distribution-free: scores
//! are simulated as iid uniforms and only the true label vector's batch
//! statistic is needed to decide coverage. Methods with empirical
//! thresholds recalibrate on fresh draws inside every replication, so the
//! measured rate estimates the unconditional guarantee.

use std::collections::HashMap;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combiners::{batch_p, exact_alpha, CombinerContext, CombinerSpec, M0Estimator};
use crate::enumeration::{
    class_count_bounds, enumerate_set, BatchPredictionSet, InclusionRule,
    DEFAULT_ENUMERATION_BUDGET,
};
use crate::error::{Error, Result};
use crate::pvalues::{
    build_calibration, conformal_pvalues, CalibrationMode, CalibrationSet, RankPValue, ScorePanel,
};
use crate::rng::{derive_seed, seeded_rng};
use crate::thresholds::{calibrate_conditional, calibrate_iid, rank_pvalues, Threshold};

/// The Gaussian benchmark always uses three classes.
pub const GAUSSIAN_NUM_CLASSES: usize = 3;

/// Three bivariate normal classes centered at (0,0), (snr,0) and (snr,snr)
/// with identity covariance; fixed per-class calibration and batch counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianConfig {
    pub snr: f64,
    pub n_per_class: usize,
    pub m_per_class: usize,
    pub seed: u64,
    pub replications: usize,
}

impl GaussianConfig {
    pub fn batch_size(&self) -> usize {
        self.m_per_class * GAUSSIAN_NUM_CLASSES
    }

    fn centers(&self) -> [(f64, f64); GAUSSIAN_NUM_CLASSES] {
        [(0.0, 0.0), (self.snr, 0.0), (self.snr, self.snr)]
    }
}

fn posterior_scores(point: (f64, f64), centers: &[(f64, f64)]) -> Vec<f64> {
    let sq_dists: Vec<f64> = centers
        .iter()
        .map(|&(cx, cy)| {
            let dx = point.0 - cx;
            let dy = point.1 - cy;
            dx * dx + dy * dy
        })
        .collect();
    let dmin = sq_dists.iter().cloned().fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = sq_dists.iter().map(|&d| (-(d - dmin) / 2.0).exp()).collect();
    let total: f64 = weights.iter().sum();
    // Score for class k is one minus its posterior under equal priors.
    weights.iter().map(|&w| 1.0 - w / total).collect()
}

/// Draw one replication of the Gaussian benchmark: a class-conditional
/// calibration set, the batch score panel, and the true batch labels.
pub fn generate_gaussian(
    config: &GaussianConfig,
    replication: usize,
) -> (CalibrationSet, ScorePanel, Vec<usize>) {
    assert!(config.snr >= 0.0, "snr must be nonnegative");
    assert!(config.n_per_class >= 1 && config.m_per_class >= 1);
    let centers = config.centers();
    let mut rng = seeded_rng(config.seed, &[0x6A55, replication as u64]);
    let mut draw_point = |center: (f64, f64)| -> (f64, f64) {
        let dx: f64 = rng.sample(StandardNormal);
        let dy: f64 = rng.sample(StandardNormal);
        (center.0 + dx, center.1 + dy)
    };

    let mut entries = Vec::with_capacity(config.n_per_class * GAUSSIAN_NUM_CLASSES);
    for (k, &center) in centers.iter().enumerate() {
        for _ in 0..config.n_per_class {
            let point = draw_point(center);
            let scores = posterior_scores(point, &centers);
            entries.push((k, scores[k]));
        }
    }

    let mut rows = Vec::with_capacity(config.batch_size());
    let mut truth = Vec::with_capacity(config.batch_size());
    for (k, &center) in centers.iter().enumerate() {
        for _ in 0..config.m_per_class {
            let point = draw_point(center);
            rows.push(posterior_scores(point, &centers));
            truth.push(k);
        }
    }

    let cal = build_calibration(entries, CalibrationMode::ClassConditional)
        .expect("nonempty calibration");
    let panel = ScorePanel::from_rows(rows).expect("valid score panel");
    (cal, panel, truth)
}

/// A batch prediction method: a combiner plus its membership rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum BatchMethod {
    Bonferroni,
    Simes,
    StoreySimes { lambda: f64 },
    QuantileSimes { ell: usize },
    OracleSimes,
    Fisher { calib_b: u32 },
    EmpiricalSimes { calib_b: u32 },
    EmpiricalMinSimes { lambda: f64, ell: usize, calib_b: u32 },
}

impl BatchMethod {
    pub fn id(&self) -> String {
        match self {
            BatchMethod::Bonferroni => "bonferroni".into(),
            BatchMethod::Simes => "simes".into(),
            BatchMethod::StoreySimes { lambda } => format!("storey-simes:{lambda}"),
            BatchMethod::QuantileSimes { ell } => format!("quantile-simes:{ell}"),
            BatchMethod::OracleSimes => "oracle-simes".into(),
            BatchMethod::Fisher { .. } => "fisher".into(),
            BatchMethod::EmpiricalSimes { .. } => "empirical-simes".into(),
            BatchMethod::EmpiricalMinSimes { .. } => "empirical-min-simes".into(),
        }
    }

    /// The default benchmark lineup at batch size m.
    pub fn standard_set(m: usize, calib_b: u32) -> Vec<BatchMethod> {
        vec![
            BatchMethod::Bonferroni,
            BatchMethod::Simes,
            BatchMethod::StoreySimes { lambda: 0.5 },
            BatchMethod::QuantileSimes { ell: m.div_ceil(2) },
            BatchMethod::OracleSimes,
            BatchMethod::Fisher { calib_b },
        ]
    }

    /// Combiner evaluated at candidates; the oracle needs the true labels.
    fn combiner(&self, truth: &[usize]) -> CombinerSpec {
        match self {
            BatchMethod::Bonferroni => CombinerSpec::Bonferroni,
            BatchMethod::Simes | BatchMethod::EmpiricalSimes { .. } => CombinerSpec::Simes,
            BatchMethod::StoreySimes { lambda } => {
                CombinerSpec::AdaptiveSimes(M0Estimator::Storey { lambda: *lambda })
            }
            BatchMethod::QuantileSimes { ell } => {
                CombinerSpec::AdaptiveSimes(M0Estimator::Quantile { ell: *ell })
            }
            BatchMethod::OracleSimes => CombinerSpec::AdaptiveSimes(M0Estimator::Oracle {
                truth: truth.to_vec(),
            }),
            BatchMethod::Fisher { .. } => CombinerSpec::Fisher,
            BatchMethod::EmpiricalMinSimes { lambda, ell, .. } => {
                CombinerSpec::AdaptiveSimes(M0Estimator::MinOf(vec![
                    M0Estimator::Storey { lambda: *lambda },
                    M0Estimator::Quantile { ell: *ell },
                ]))
            }
        }
    }

    fn empirical_b(&self) -> Option<u32> {
        match self {
            BatchMethod::Fisher { calib_b }
            | BatchMethod::EmpiricalSimes { calib_b }
            | BatchMethod::EmpiricalMinSimes { calib_b, .. } => Some(*calib_b),
            _ => None,
        }
    }
}

/// Per-method aggregates of a size experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub mean_set_size: f64,
    pub non_coverage: f64,
    /// Mean class-count bounds over replications with a nonempty set.
    pub mean_lower_bounds: Vec<f64>,
    pub mean_upper_bounds: Vec<f64>,
    pub empty_sets: usize,
}

/// Everything a size experiment reports, with enough metadata to re-run it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: GaussianConfig,
    pub alpha: f64,
    pub methods: Vec<MethodSummary>,
    pub runtime_seconds: f64,
}

struct RepOutcome {
    size: usize,
    covered: bool,
    bounds: Option<Vec<(usize, usize)>>,
}

/// Per-replication set sizes, one row per method; the raw material for
/// distribution plots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSizes {
    pub method: String,
    pub sizes: Vec<usize>,
}

fn evaluate_method(
    method: &BatchMethod,
    panel: &crate::pvalues::PValuePanel,
    truth: &[usize],
    alpha: f64,
    tables: &HashMap<String, crate::thresholds::ThresholdTable>,
) -> Result<RepOutcome> {
    let combiner = method.combiner(truth);
    let set: BatchPredictionSet = if method.empirical_b().is_some() {
        let table = tables.get(&method.id()).expect("table prebuilt");
        enumerate_set(
            panel,
            &combiner,
            &InclusionRule::Table(table),
            false,
            DEFAULT_ENUMERATION_BUDGET,
        )?
    } else {
        enumerate_set(
            panel,
            &combiner,
            &InclusionRule::Alpha(alpha),
            false,
            DEFAULT_ENUMERATION_BUDGET,
        )?
    };
    let bounds = class_count_bounds(&set);
    Ok(RepOutcome {
        size: set.len(),
        covered: set.contains(truth),
        bounds: bounds.intervals().map(<[(usize, usize)]>::to_vec),
    })
}

/// Run the Gaussian benchmark and aggregate set sizes, non-coverage and
/// class-count bounds per method.
pub fn run_size_experiment(
    config: &GaussianConfig,
    methods: &[BatchMethod],
    alpha: f64,
) -> Result<ExperimentReport> {
    run_size_experiment_detailed(config, methods, alpha).map(|(report, _)| report)
}

/// Like [`run_size_experiment`] but also returns every replication's set
/// size per method.
pub fn run_size_experiment_detailed(
    config: &GaussianConfig,
    methods: &[BatchMethod],
    alpha: f64,
) -> Result<(ExperimentReport, Vec<ReplicationSizes>)> {
    exact_alpha(alpha, false)?;
    if config.replications == 0 {
        return Err(Error::InvalidConfig("replications must be >= 1".into()));
    }
    let start = Instant::now();
    let class_sizes = vec![config.n_per_class; GAUSSIAN_NUM_CLASSES];
    let m = config.batch_size();

    // Threshold tables depend only on the calibration sizes, so they are
    // built once and shared by every replication.
    let mut tables = HashMap::new();
    for method in methods {
        if let Some(b) = method.empirical_b() {
            let table = crate::thresholds::build_table(
                &class_sizes,
                m,
                CalibrationMode::ClassConditional,
                &method.combiner(&vec![0; m]),
                alpha,
                b,
                derive_seed(config.seed, &[0x7AB1E]),
                1_000_000,
            )?;
            tables.insert(method.id(), table);
        }
    }

    let outcomes: Vec<Vec<RepOutcome>> = (0..config.replications)
        .into_par_iter()
        .map(|rep| {
            let (cal, scores, truth) = generate_gaussian(config, rep);
            let panel = conformal_pvalues(&cal, &scores)?;
            methods
                .iter()
                .map(|method| evaluate_method(method, &panel, &truth, alpha, &tables))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let reps = config.replications as f64;
    let replication_sizes = methods
        .iter()
        .enumerate()
        .map(|(j, method)| ReplicationSizes {
            method: method.id(),
            sizes: outcomes.iter().map(|rep| rep[j].size).collect(),
        })
        .collect();
    let methods_summary = methods
        .iter()
        .enumerate()
        .map(|(j, method)| {
            let mut size_sum = 0usize;
            let mut misses = 0usize;
            let mut empty = 0usize;
            let mut lower = [0.0f64; GAUSSIAN_NUM_CLASSES];
            let mut upper = [0.0f64; GAUSSIAN_NUM_CLASSES];
            let mut with_bounds = 0usize;
            for rep in &outcomes {
                let outcome = &rep[j];
                size_sum += outcome.size;
                if !outcome.covered {
                    misses += 1;
                }
                match &outcome.bounds {
                    Some(intervals) => {
                        with_bounds += 1;
                        for (k, &(lo, hi)) in intervals.iter().enumerate() {
                            lower[k] += lo as f64;
                            upper[k] += hi as f64;
                        }
                    }
                    None => empty += 1,
                }
            }
            let denom = with_bounds.max(1) as f64;
            MethodSummary {
                method: method.id(),
                mean_set_size: size_sum as f64 / reps,
                non_coverage: misses as f64 / reps,
                mean_lower_bounds: lower.iter().map(|v| v / denom).collect(),
                mean_upper_bounds: upper.iter().map(|v| v / denom).collect(),
                empty_sets: empty,
            }
        })
        .collect();

    let report = ExperimentReport {
        config: config.clone(),
        alpha,
        methods: methods_summary,
        runtime_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((report, replication_sizes))
}

/// Score-generation model for coverage simulations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum CoverageModel {
    Iid { n: usize, m: usize },
    Conditional {
        class_sizes: Vec<usize>,
        composition: Vec<usize>,
    },
}

fn simulate_truth_pvalues(
    model: &CoverageModel,
    rng: &mut impl Rng,
) -> (Vec<RankPValue>, Vec<usize>, CombinerContext) {
    match model {
        CoverageModel::Iid { n, m } => {
            let mut cal: Vec<f64> = (0..*n).map(|_| rng.random()).collect();
            let tests: Vec<f64> = (0..*m).map(|_| rng.random()).collect();
            let pvec = rank_pvalues(&mut cal, &tests);
            (pvec, vec![0; *m], CombinerContext::full(*n, 1))
        }
        CoverageModel::Conditional {
            class_sizes,
            composition,
        } => {
            let mut pvec = Vec::new();
            let mut labels = Vec::new();
            for (k, &mk) in composition.iter().enumerate() {
                if mk == 0 {
                    continue;
                }
                let mut cal: Vec<f64> = (0..class_sizes[k]).map(|_| rng.random()).collect();
                let tests: Vec<f64> = (0..mk).map(|_| rng.random()).collect();
                pvec.extend(rank_pvalues(&mut cal, &tests));
                labels.extend(std::iter::repeat_n(k, mk));
            }
            (pvec, labels, CombinerContext::conditional(class_sizes))
        }
    }
}

fn coverage_threshold(
    model: &CoverageModel,
    method: &BatchMethod,
    alpha: f64,
    b: u32,
    seed: u64,
) -> Result<Threshold> {
    let combiner = method.combiner(&[]);
    match model {
        CoverageModel::Iid { n, m } => calibrate_iid(*n, *m, &combiner, alpha, b, seed),
        CoverageModel::Conditional {
            class_sizes,
            composition,
        } => calibrate_conditional(class_sizes, composition, &combiner, alpha, b, seed),
    }
}

/// Estimate the non-coverage frequency of one method by simulation.
///
/// Scores are iid uniform, which matches any continuous score distribution
/// because only ranks enter the p-values. Methods with empirical rules get
/// a freshly calibrated threshold inside every replication.
pub fn run_coverage_experiment(
    model: &CoverageModel,
    method: &BatchMethod,
    alpha: f64,
    replications: usize,
    seed: u64,
) -> Result<f64> {
    let exact = exact_alpha(alpha, false)?;
    if replications == 0 {
        return Err(Error::InvalidConfig("replications must be >= 1".into()));
    }
    if let CoverageModel::Conditional {
        class_sizes,
        composition,
    } = model
    {
        if class_sizes.len() != composition.len() {
            return Err(Error::InvalidConfig(
                "class sizes and composition lengths differ".into(),
            ));
        }
    }

    let misses: usize = (0..replications as u64)
        .into_par_iter()
        .map(|rep| -> Result<usize> {
            let mut rng = seeded_rng(seed, &[0xC0F, rep]);
            let (pvec, labels, ctx) = simulate_truth_pvalues(model, &mut rng);
            let combiner = method.combiner(&labels);
            let stat = batch_p(&combiner, &pvec, &labels, &ctx)?;
            let included = match method.empirical_b() {
                None => stat.stat().exceeds(&exact),
                Some(b) => {
                    let t = coverage_threshold(
                        model,
                        method,
                        alpha,
                        b,
                        derive_seed(seed, &[0x7E57, rep]),
                    )?;
                    stat.stat().at_least(&t)
                }
            };
            Ok(usize::from(!included))
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;

    Ok(misses as f64 / replications as f64)
}
