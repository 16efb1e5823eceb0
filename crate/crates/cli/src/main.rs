//! Command-line entry point.
//!
//! Subcommands: `pvalues`, `set`, `bounds`, `calibrate`, `simulate`,
//! `coverage`. Every command is deterministic given its inputs and
//! `--seed`. Exit codes: 0 success, 2 input error, 3 budget exceeded.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use batch_conformal::{
    build_calibration, build_table, conformal_pvalues, enumerate_set, general_shortcut_bounds,
    io::{read_calibration_csv, read_scores_csv, PValueReport, SetReport},
    run_coverage_experiment, run_size_experiment_detailed, simes_shortcut_bounds, AppliedRule,
    BatchMethod, CalibrationMode, CombinerSpec, CoverageModel, Error, ExperimentReport,
    GaussianConfig, InclusionRule, M0Estimator, PValuePanel, ThresholdTable,
    DEFAULT_ENUMERATION_BUDGET,
};

#[derive(Parser)]
#[command(
    name = "batch-conformal",
    version,
    about = "Batch prediction sets, count bounds and calibrated thresholds from conformal p-values"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum ModeArg {
    /// Full calibration: rank against all calibration examples.
    #[value(alias = "full")]
    Iid,
    /// Class calibration: rank against the candidate class only.
    #[value(alias = "class-conditional")]
    Conditional,
}

impl From<ModeArg> for CalibrationMode {
    fn from(mode: ModeArg) -> Self {
        match mode {
            ModeArg::Iid => CalibrationMode::Full,
            ModeArg::Conditional => CalibrationMode::ClassConditional,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum PValueFormat {
    Json,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum ReportFormat {
    Json,
    Table,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum BoundsMode {
    Exact,
    Shortcut,
}

#[derive(Subcommand)]
enum Command {
    /// Conformal p-values for every item and class.
    Pvalues {
        #[arg(long)]
        calibration: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Conditional)]
        mode: ModeArg,
        #[arg(long, value_enum, default_value_t = PValueFormat::Json)]
        format: PValueFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Enumerate the batch prediction set for one combiner and rule.
    Set {
        #[arg(long)]
        calibration: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Conditional)]
        mode: ModeArg,
        #[arg(long)]
        combiner: String,
        #[arg(long)]
        alpha: Option<f64>,
        /// Storey lambda when the combiner string carries none.
        #[arg(long)]
        lambda: Option<f64>,
        /// Quantile index when the combiner string carries none.
        #[arg(long)]
        ell: Option<usize>,
        /// Threshold table JSON produced by `calibrate`.
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_ENUMERATION_BUDGET)]
        budget: u64,
        /// Prune per-item labels at alpha/m first (bonferroni and simes only).
        #[arg(long)]
        prefilter: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Class-count bounds, exactly or via the quadratic shortcut.
    Bounds {
        #[arg(long)]
        calibration: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Conditional)]
        mode: ModeArg,
        #[arg(long)]
        combiner: String,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        ell: Option<usize>,
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = BoundsMode::Exact)]
        bounds_mode: BoundsMode,
        #[arg(long, default_value_t = DEFAULT_ENUMERATION_BUDGET)]
        budget: u64,
        /// List the members of the exact set in the report.
        #[arg(long)]
        emit_members: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo calibration of empirical thresholds.
    Calibrate {
        #[arg(long, value_enum)]
        mode: ModeArg,
        /// One size for iid mode, one per class for conditional mode.
        #[arg(long, value_delimiter = ',', required = true)]
        class_sizes: Vec<usize>,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        combiner: String,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        ell: Option<usize>,
        #[arg(long)]
        alpha: f64,
        /// Number of Monte-Carlo iterations B.
        #[arg(long, default_value_t = 1999)]
        reps: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Cap on the number of compositions calibrated.
        #[arg(long, default_value_t = 100_000)]
        budget: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Gaussian-mixture benchmark: set sizes, coverage and bounds.
    Simulate {
        #[arg(long)]
        snr: f64,
        #[arg(long, default_value_t = 400)]
        n_per_class: usize,
        #[arg(long, default_value_t = 2)]
        m_per_class: usize,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long, default_value_t = 1000)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma list of combiner ids; defaults to the standard lineup.
        #[arg(long)]
        methods: Option<String>,
        /// Monte-Carlo iterations for empirical-threshold methods.
        #[arg(long, default_value_t = 1999)]
        calib_b: u32,
        #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
        format: ReportFormat,
        /// Write per-replication set sizes (plot data) to this CSV file.
        #[arg(long)]
        plot_data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo non-coverage of one method under uniform scores.
    Coverage {
        #[arg(long, value_enum)]
        model: ModeArg,
        /// Calibration size (iid model).
        #[arg(long)]
        n: Option<usize>,
        /// Batch size (iid model).
        #[arg(long)]
        m: Option<usize>,
        /// Per-class calibration sizes (conditional model).
        #[arg(long, value_delimiter = ',')]
        class_sizes: Vec<usize>,
        /// True class counts of the batch (conditional model).
        #[arg(long, value_delimiter = ',')]
        composition: Vec<usize>,
        #[arg(long)]
        combiner: String,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        ell: Option<usize>,
        /// Use an empirical threshold instead of the alpha cut.
        #[arg(long)]
        empirical: bool,
        #[arg(long, default_value_t = 1999)]
        calib_b: u32,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long, default_value_t = 10_000)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn invalid(message: impl Into<String>) -> Error {
    Error::InvalidConfig(message.into())
}

/// Parse a combiner id: `bonferroni | simes | storey-simes[:<lambda>] |
/// quantile-simes[:<ell>] | oracle-simes | fisher`.
fn parse_combiner(
    spec: &str,
    lambda: Option<f64>,
    ell: Option<usize>,
    m: usize,
) -> Result<CombinerSpec, Error> {
    let (name, inline) = match spec.split_once(':') {
        Some((name, arg)) => (name, Some(arg)),
        None => (spec, None),
    };
    match name {
        "bonferroni" => Ok(CombinerSpec::Bonferroni),
        "simes" => Ok(CombinerSpec::Simes),
        "fisher" => Ok(CombinerSpec::Fisher),
        "oracle-simes" => Ok(CombinerSpec::AdaptiveSimes(M0Estimator::Oracle {
            truth: Vec::new(),
        })),
        "storey-simes" => {
            let lambda = match inline {
                Some(arg) => arg
                    .parse::<f64>()
                    .map_err(|_| invalid(format!("invalid lambda {arg:?}")))?,
                None => lambda.unwrap_or(0.5),
            };
            Ok(CombinerSpec::AdaptiveSimes(M0Estimator::Storey { lambda }))
        }
        "quantile-simes" => {
            let ell = match inline {
                Some(arg) => arg
                    .parse::<usize>()
                    .map_err(|_| invalid(format!("invalid quantile index {arg:?}")))?,
                None => ell.unwrap_or(m.div_ceil(2)),
            };
            Ok(CombinerSpec::AdaptiveSimes(M0Estimator::Quantile { ell }))
        }
        other => Err(invalid(format!("unknown combiner {other:?}"))),
    }
}

fn parse_method(
    spec: &str,
    lambda: Option<f64>,
    ell: Option<usize>,
    m: usize,
    empirical: bool,
    calib_b: u32,
) -> Result<BatchMethod, Error> {
    let combiner = parse_combiner(spec, lambda, ell, m)?;
    let method = match combiner {
        CombinerSpec::Bonferroni => BatchMethod::Bonferroni,
        CombinerSpec::Simes if empirical => BatchMethod::EmpiricalSimes { calib_b },
        CombinerSpec::Simes => BatchMethod::Simes,
        CombinerSpec::Fisher => BatchMethod::Fisher { calib_b },
        CombinerSpec::AdaptiveSimes(M0Estimator::Storey { lambda }) => {
            BatchMethod::StoreySimes { lambda }
        }
        CombinerSpec::AdaptiveSimes(M0Estimator::Quantile { ell }) => {
            BatchMethod::QuantileSimes { ell }
        }
        CombinerSpec::AdaptiveSimes(M0Estimator::Oracle { .. }) => BatchMethod::OracleSimes,
        CombinerSpec::AdaptiveSimes(_) => {
            return Err(invalid(format!("combiner {spec:?} is not a method id")))
        }
    };
    if empirical
        && !matches!(
            method,
            BatchMethod::EmpiricalSimes { .. } | BatchMethod::Fisher { .. }
        )
    {
        return Err(invalid(
            "--empirical currently applies to the simes and fisher combiners",
        ));
    }
    Ok(method)
}

fn is_oracle(combiner: &CombinerSpec) -> bool {
    matches!(
        combiner,
        CombinerSpec::AdaptiveSimes(M0Estimator::Oracle { .. })
    )
}

fn load_panel(
    calibration: &Path,
    test: &Path,
    mode: ModeArg,
) -> Result<PValuePanel, Error> {
    let entries = read_calibration_csv(calibration)?;
    let cal = build_calibration(entries, mode.into())?;
    let scores = read_scores_csv(test)?;
    conformal_pvalues(&cal, &scores)
}

fn load_table(path: &Path, mode: ModeArg, combiner: &CombinerSpec) -> Result<ThresholdTable, Error> {
    let table: ThresholdTable = serde_json::from_str(&fs::read_to_string(path)?)?;
    if table.mode != mode.into() {
        return Err(invalid(format!(
            "threshold table was calibrated for mode {}, requested {}",
            table.mode,
            CalibrationMode::from(mode)
        )));
    }
    if table.combiner != combiner.id() {
        return Err(invalid(format!(
            "threshold table was calibrated for combiner {:?}, requested {:?}",
            table.combiner,
            combiner.id()
        )));
    }
    Ok(table)
}

fn emit(out: Option<&PathBuf>, contents: &str) -> Result<(), Error> {
    match out {
        Some(path) => fs::write(path, contents)?,
        None => println!("{contents}"),
    }
    Ok(())
}

fn emit_json<T: Serialize>(out: Option<&PathBuf>, value: &T) -> Result<(), Error> {
    emit(out, &serde_json::to_string_pretty(value)?)
}

fn format_experiment_table(report: &ExperimentReport) -> String {
    let mut lines = vec![format!(
        "snr={} n_per_class={} m={} alpha={} replications={} seed={}",
        report.config.snr,
        report.config.n_per_class,
        report.config.batch_size(),
        report.alpha,
        report.config.replications,
        report.config.seed
    )];
    lines.push(format!(
        "{:<24} {:>12} {:>14} {:>12}",
        "method", "mean size", "non-coverage", "empty sets"
    ));
    for m in &report.methods {
        lines.push(format!(
            "{:<24} {:>12.3} {:>14.4} {:>12}",
            m.method, m.mean_set_size, m.non_coverage, m.empty_sets
        ));
    }
    lines.push(format!("runtime: {:.2}s", report.runtime_seconds));
    lines.join("\n")
}

fn pvalue_csv(report: &PValueReport) -> String {
    let mut out = String::from("item,class,numerator,denominator,value\n");
    for i in 0..report.m {
        for k in 0..report.classes {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                i, k, report.numerators[i][k], report.denominators[k], report.values[i][k]
            ));
        }
    }
    out
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Pvalues {
            calibration,
            test,
            mode,
            format,
            out,
        } => {
            let panel = load_panel(&calibration, &test, mode)?;
            let report = PValueReport::from_panel(&panel);
            match format {
                PValueFormat::Json => emit_json(out.as_ref(), &report),
                PValueFormat::Csv => emit(out.as_ref(), &pvalue_csv(&report)),
            }
        }
        Command::Set {
            calibration,
            test,
            mode,
            combiner,
            alpha,
            lambda,
            ell,
            table,
            budget,
            prefilter,
            out,
        } => {
            let panel = load_panel(&calibration, &test, mode)?;
            let combiner = parse_combiner(&combiner, lambda, ell, panel.batch_size())?;
            if is_oracle(&combiner) {
                return Err(invalid(
                    "oracle-simes needs the true labels; it is available in simulate and coverage only",
                ));
            }
            let set = match (alpha, table) {
                (Some(alpha), None) => enumerate_set(
                    &panel,
                    &combiner,
                    &InclusionRule::Alpha(alpha),
                    prefilter,
                    budget,
                )?,
                (None, Some(path)) => {
                    let table = load_table(&path, mode, &combiner)?;
                    enumerate_set(
                        &panel,
                        &combiner,
                        &InclusionRule::Table(&table),
                        prefilter,
                        budget,
                    )?
                }
                _ => {
                    return Err(invalid(
                        "exactly one of --alpha or --table must be given",
                    ))
                }
            };
            emit_json(out.as_ref(), &SetReport::from_set(&set, true))
        }
        Command::Bounds {
            calibration,
            test,
            mode,
            combiner,
            alpha,
            lambda,
            ell,
            table,
            bounds_mode,
            budget,
            emit_members,
            out,
        } => {
            let panel = load_panel(&calibration, &test, mode)?;
            let combiner = parse_combiner(&combiner, lambda, ell, panel.batch_size())?;
            let report = match bounds_mode {
                BoundsMode::Exact => {
                    if is_oracle(&combiner) {
                        return Err(invalid(
                            "oracle-simes needs the true labels; it is available in simulate and coverage only",
                        ));
                    }
                    let set = match (alpha, table) {
                        (Some(alpha), None) => enumerate_set(
                            &panel,
                            &combiner,
                            &InclusionRule::Alpha(alpha),
                            false,
                            budget,
                        )?,
                        (None, Some(path)) => {
                            let table = load_table(&path, mode, &combiner)?;
                            enumerate_set(
                                &panel,
                                &combiner,
                                &InclusionRule::Table(&table),
                                false,
                                budget,
                            )?
                        }
                        _ => {
                            return Err(invalid(
                                "exactly one of --alpha or --table must be given",
                            ))
                        }
                    };
                    SetReport::from_set(&set, emit_members)
                }
                BoundsMode::Shortcut => match (alpha, table) {
                    (Some(alpha), None) => {
                        let estimator = match &combiner {
                            CombinerSpec::Bonferroni | CombinerSpec::Fisher => {
                                return Err(invalid(
                                    "shortcut bounds with --alpha support the simes family; \
                                     use --table for other combiners",
                                ))
                            }
                            CombinerSpec::Simes => M0Estimator::Constant,
                            CombinerSpec::AdaptiveSimes(est) => est.clone(),
                        };
                        let bounds = simes_shortcut_bounds(&panel, alpha, &estimator)?;
                        SetReport::from_bounds(
                            &bounds,
                            panel.batch_size(),
                            panel.mode(),
                            &combiner.id(),
                            AppliedRule::Alpha { alpha },
                        )
                    }
                    (None, Some(path)) => {
                        let table = load_table(&path, mode, &combiner)?;
                        let bounds = general_shortcut_bounds(&panel, &combiner, &table)?;
                        SetReport::from_bounds(
                            &bounds,
                            panel.batch_size(),
                            panel.mode(),
                            &combiner.id(),
                            AppliedRule::Table {
                                alpha: table.alpha,
                                b: table.b,
                                seed: table.seed,
                            },
                        )
                    }
                    _ => {
                        return Err(invalid(
                            "exactly one of --alpha or --table must be given",
                        ))
                    }
                },
            };
            emit_json(out.as_ref(), &report)
        }
        Command::Calibrate {
            mode,
            class_sizes,
            m,
            combiner,
            lambda,
            ell,
            alpha,
            reps,
            seed,
            budget,
            out,
        } => {
            let combiner = parse_combiner(&combiner, lambda, ell, m)?;
            let table = build_table(
                &class_sizes,
                m,
                mode.into(),
                &combiner,
                alpha,
                reps,
                seed,
                budget,
            )?;
            emit_json(out.as_ref(), &table)
        }
        Command::Simulate {
            snr,
            n_per_class,
            m_per_class,
            alpha,
            reps,
            seed,
            methods,
            calib_b,
            format,
            plot_data,
            out,
        } => {
            let config = GaussianConfig {
                snr,
                n_per_class,
                m_per_class,
                seed,
                replications: reps,
            };
            let m = config.batch_size();
            let methods = match methods {
                None => BatchMethod::standard_set(m, calib_b),
                Some(list) => list
                    .split(',')
                    .map(|s| parse_method(s.trim(), None, None, m, false, calib_b))
                    .collect::<Result<Vec<_>, Error>>()?,
            };
            let (report, sizes) = run_size_experiment_detailed(&config, &methods, alpha)?;
            if let Some(path) = plot_data {
                let mut csv = String::from("replication,method,size\n");
                for row in &sizes {
                    for (rep, size) in row.sizes.iter().enumerate() {
                        csv.push_str(&format!("{rep},{},{size}\n", row.method));
                    }
                }
                fs::write(path, csv)?;
            }
            match format {
                ReportFormat::Json => emit_json(out.as_ref(), &report),
                ReportFormat::Table => emit(out.as_ref(), &format_experiment_table(&report)),
            }
        }
        Command::Coverage {
            model,
            n,
            m,
            class_sizes,
            composition,
            combiner,
            lambda,
            ell,
            empirical,
            calib_b,
            alpha,
            reps,
            seed,
            out,
        } => {
            let coverage_model = match model {
                ModeArg::Iid => {
                    let n = n.ok_or_else(|| invalid("--n is required for the iid model"))?;
                    let m = m.ok_or_else(|| invalid("--m is required for the iid model"))?;
                    CoverageModel::Iid { n, m }
                }
                ModeArg::Conditional => {
                    if class_sizes.is_empty() || composition.is_empty() {
                        return Err(invalid(
                            "--class-sizes and --composition are required for the conditional model",
                        ));
                    }
                    CoverageModel::Conditional {
                        class_sizes,
                        composition,
                    }
                }
            };
            let batch_size = match &coverage_model {
                CoverageModel::Iid { m, .. } => *m,
                CoverageModel::Conditional { composition, .. } => composition.iter().sum(),
            };
            let method = parse_method(&combiner, lambda, ell, batch_size, empirical, calib_b)?;
            let non_coverage =
                run_coverage_experiment(&coverage_model, &method, alpha, reps, seed)?;
            #[derive(Serialize)]
            struct CoverageReport {
                model: CoverageModel,
                method: String,
                alpha: f64,
                replications: usize,
                seed: u64,
                non_coverage: f64,
            }
            emit_json(
                out.as_ref(),
                &CoverageReport {
                    model: coverage_model,
                    method: method.id(),
                    alpha,
                    replications: reps,
                    seed,
                    non_coverage,
                },
            )
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
