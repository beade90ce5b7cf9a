//! Named experiment suites driven by a JSON configuration.
//!
//! A run writes `results.csv` (one row per check), `report.json` (verdicts,
//! margins and constants) and `plotdata/<experiment>_<name>.csv` into the
//! output directory. All randomness flows from the configured seed, so equal
//! configurations give byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::duhamel::{
    compute_yf, solve_forward_duhamel, stepper_convergence, uniform_grid, verify_gronwall_bound, QuadratureOptions,
    Scheme,
};
use crate::fvp::{
    check_compatibility, homeomorphism_roundtrip, random_cauchy_data, FvpData, FvpOptions, RoundTripOptions,
};
use crate::linalg::{c, real_matrix, CMatrix, CVector};
use crate::neumann::{build_model, instability_experiment, weyl_check, Geometry, NeumannModel};
use crate::output::fmt_f64;
use crate::sampling;
use crate::semigroup::{
    domain_chain_probe, log_height_second_difference, logconv_criterion, DomainTolerances, DomainVerdict,
    SemigroupEvaluator,
};
use crate::triple::{Backend, CoerciveOperator, GelfandTriple, OperatorDescriptor};

pub const DEFAULT_SEED: u64 = 7;
pub const DEFAULT_OUTPUT_DIR: &str = "fvpkit-output";
/// Runs every registered experiment.
pub const ALL: &str = "all";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("config error: {0}")]
    Config(String),
    #[error("cannot write {}: {source}", path.display())]
    Output { path: PathBuf, source: std::io::Error },
    #[error("experiment {experiment} failed: {source}")]
    Numerics {
        experiment: &'static str,
        source: crate::error::Error,
    },
}

impl BenchError {
    /// Process exit status: 3 for configuration and output-directory
    /// problems, 1 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) | BenchError::Output { .. } => 3,
            BenchError::Numerics { .. } => 1,
        }
    }
}

pub type BenchResult<T> = std::result::Result<T, BenchError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExperimentInfo {
    pub name: &'static str,
    pub description: &'static str,
    /// The property the experiment exercises; copied into `report.json`.
    pub anchor: &'static str,
}

/// Sorted by name.
pub const REGISTRY: [ExperimentInfo; 8] = [
    ExperimentInfo {
        name: "compatibility",
        description: "classify constructed and white-noise final states by the domain test",
        anchor: "solvability criterion u_T - y_f in D(e^{TA})",
    },
    ExperimentInfo {
        name: "domain_chain",
        description: "probe vector lies in D(e^{tA}) but not in D(e^{2tA})",
        anchor: "strict inclusion of the domains D(e^{t'A}) in D(e^{tA}) for t' > t",
    },
    ExperimentInfo {
        name: "duhamel_vs_stepper",
        description: "Crank-Nicolson gap to the Duhamel solution decays at second order",
        anchor: "variation of constants formula for u' + Au = f",
    },
    ExperimentInfo {
        name: "gronwall",
        description: "energy estimate with prefactor 2 + (2C3^2 + C4 + 1)/C4^2 e^{2kt}",
        anchor: "a priori energy estimate for the Cauchy problem",
    },
    ExperimentInfo {
        name: "instability",
        description: "growth e^{T lambda_j} of initial states recovered from unit final data",
        anchor: "instability of the backward heat equation in the H norm",
    },
    ExperimentInfo {
        name: "logconvexity",
        description: "log-convexity of |e^{-tA}u0| for self-adjoint and normal operators",
        anchor: "log-convexity of the height function",
    },
    ExperimentInfo {
        name: "roundtrip",
        description: "solve-then-invert errors in the X and Y norms",
        anchor: "final value problem is well posed between X and Y",
    },
    ExperimentInfo {
        name: "weyl",
        description: "eigenvalue growth exponent 2/n of the Neumann Laplacian",
        anchor: "Weyl asymptotics lambda_j = O(j^{2/n})",
    },
];

pub fn list_experiments() -> &'static [ExperimentInfo] {
    &REGISTRY
}

fn lookup(name: &str) -> Option<&'static ExperimentInfo> {
    REGISTRY.iter().find(|e| e.name == name)
}

/// Model section of the config: a Neumann model or a raw operator descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Neumann { geometry: Geometry, modes: usize },
    Operator(OperatorDescriptor),
}

#[derive(Debug, Clone)]
pub enum Model {
    Neumann(NeumannModel),
    Operator(CoerciveOperator),
}

impl Model {
    pub fn operator(&self) -> &CoerciveOperator {
        match self {
            Model::Neumann(m) => m.operator(),
            Model::Operator(op) => op,
        }
    }

    fn label(&self) -> &'static str {
        match self {
            Model::Neumann(m) => match m.geometry() {
                Geometry::Interval { .. } => "interval",
                Geometry::Rectangle { .. } => "rectangle",
            },
            Model::Operator(op) => match op.backend() {
                Backend::Spectral { .. } => "spectral",
                Backend::Matrix { .. } => "matrix",
            },
        }
    }
}

impl ModelConfig {
    pub fn build(&self) -> crate::error::Result<Model> {
        match self {
            ModelConfig::Neumann { geometry, modes } => Ok(Model::Neumann(build_model(*geometry, *modes)?)),
            ModelConfig::Operator(d) => Ok(Model::Operator(d.build()?)),
        }
    }
}

/// Acceptance thresholds; every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Largest relative round-trip error in either norm.
    pub roundtrip: f64,
    /// Target order of the Crank-Nicolson gap.
    pub order: f64,
    /// Accepted distance from `order`.
    pub order_band: f64,
    /// Smallest accepted energy-estimate margin is `-gronwall`.
    pub gronwall: f64,
    /// Relative error of the instability table against `e^{Tλ_j}`.
    pub instability: f64,
    /// Smallest accepted finite-difference `(log h)''` is `-logconv_fd`.
    pub logconv_fd: f64,
    /// Fraction of samples on which criterion and finite differences agree.
    pub logconv_agreement: f64,
    /// Fraction of correctly classified compatibility cases.
    pub compatibility_accuracy: f64,
    pub domain: DomainTolerances,
    pub quadrature: QuadratureOptions,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            roundtrip: 1e-6,
            order: 2.0,
            order_band: 0.5,
            gronwall: 1e-9,
            instability: 1e-8,
            logconv_fd: 1e-6,
            logconv_agreement: 0.99,
            compatibility_accuracy: 1.0,
            domain: DomainTolerances::default(),
            quadrature: QuadratureOptions::default(),
        }
    }
}

/// One experiment (or `"all"`) with optional overrides of the per-experiment defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    /// Final time `T`.
    #[serde(default)]
    pub horizon: Option<f64>,
    /// Number of time intervals of the solution grid.
    #[serde(default)]
    pub grid: Option<usize>,
    /// Truncation levels of the domain probes.
    #[serde(default)]
    pub levels: Option<Vec<usize>>,
    #[serde(default)]
    pub trials: Option<usize>,
    /// Mode indices of the instability table.
    #[serde(default)]
    pub modes: Option<Vec<usize>>,
    /// Step counts of the stepper comparison.
    #[serde(default)]
    pub steps: Option<Vec<usize>>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

impl ExperimentConfig {
    pub fn new(experiment: &str) -> Self {
        ExperimentConfig {
            experiment: experiment.to_string(),
            model: None,
            horizon: None,
            grid: None,
            levels: None,
            trials: None,
            modes: None,
            steps: None,
            tolerances: Tolerances::default(),
            seed: DEFAULT_SEED,
            output_dir: None,
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
    }

    /// Experiments selected by the `experiment` field.
    pub fn selected(&self) -> BenchResult<Vec<&'static ExperimentInfo>> {
        if self.experiment == ALL {
            return Ok(REGISTRY.iter().collect());
        }
        lookup(&self.experiment).map(|e| vec![e]).ok_or_else(|| {
            let known: Vec<&str> = REGISTRY.iter().map(|e| e.name).collect();
            BenchError::Config(format!(
                "field `experiment`: unknown experiment `{}` (expected `all` or one of {})",
                self.experiment,
                known.join(", ")
            ))
        })
    }

    pub fn validate(&self) -> BenchResult<()> {
        let bad = |field: &str, msg: String| Err(BenchError::Config(format!("field `{field}`: {msg}")));
        let selected = self.selected()?;
        if let Some(t) = self.horizon {
            if !(t > 0.0 && t.is_finite()) {
                return bad("horizon", format!("must be positive, got {t}"));
            }
        }
        if let Some(g) = self.grid {
            if g < 2 {
                return bad("grid", format!("needs at least 2 intervals, got {g}"));
            }
        }
        if self.trials == Some(0) {
            return bad("trials", "must be at least 1".into());
        }
        if let Some(levels) = &self.levels {
            if levels.is_empty() || levels[0] == 0 || levels.windows(2).any(|w| w[0] >= w[1]) {
                return bad("levels", "must be positive and strictly increasing".into());
            }
        }
        if let Some(steps) = &self.steps {
            let finest = steps.iter().copied().max().unwrap_or(0);
            if steps.len() < 2 || steps.iter().any(|s| *s == 0 || finest % s != 0) {
                return bad("steps", "needs at least 2 positive counts dividing the largest".into());
            }
        }
        let t = &self.tolerances;
        for (name, v) in [
            ("tolerances.roundtrip", t.roundtrip),
            ("tolerances.order_band", t.order_band),
            ("tolerances.gronwall", t.gronwall),
            ("tolerances.instability", t.instability),
            ("tolerances.logconv_fd", t.logconv_fd),
            ("tolerances.quadrature.quad_tol", t.quadrature.quad_tol),
            ("tolerances.domain.domain_tol", t.domain.domain_tol),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(name, format!("must be nonnegative and finite, got {v}"));
            }
        }
        for (name, v) in [
            ("tolerances.logconv_agreement", t.logconv_agreement),
            ("tolerances.compatibility_accuracy", t.compatibility_accuracy),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(name, format!("must lie in [0, 1], got {v}"));
            }
        }
        if !(t.domain.growth_threshold > 1.0 && t.domain.kappa_max > 1.0) {
            return bad(
                "tolerances.domain",
                "growth_threshold and kappa_max must exceed 1".into(),
            );
        }
        if t.quadrature.panels == 0 || t.quadrature.subdivisions == 0 {
            return bad(
                "tolerances.quadrature",
                "panels and subdivisions must be positive".into(),
            );
        }
        if let Some(model) = &self.model {
            if self.experiment == ALL {
                return bad("model", "cannot override the model of the full suite".into());
            }
            let info = selected[0];
            if info.name == "logconvexity" {
                return bad("model", "logconvexity draws its own random operators".into());
            }
            let built = model
                .build()
                .map_err(|e| BenchError::Config(format!("field `model`: {e}")))?;
            if matches!(info.name, "weyl" | "instability") && !matches!(built, Model::Neumann(_)) {
                return bad("model", format!("{} needs a neumann model", info.name));
            }
        }
        Ok(())
    }
}

/// Parses a config; errors carry the line, column and offending field.
pub fn parse_config(text: &str) -> BenchResult<ExperimentConfig> {
    let config: ExperimentConfig = serde_json::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> BenchResult<ExperimentConfig> {
    let text =
        fs::read_to_string(path).map_err(|e| BenchError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| match e {
        BenchError::Config(msg) => BenchError::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// A single pass/fail comparison of a metric against closed bounds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub metric: String,
    pub value: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub passed: bool,
}

impl Check {
    pub fn new(metric: impl Into<String>, value: f64, lower: Option<f64>, upper: Option<f64>) -> Self {
        let passed = !value.is_nan() && lower.is_none_or(|l| value >= l) && upper.is_none_or(|u| value <= u);
        Check {
            metric: metric.into(),
            value,
            lower,
            upper,
            passed,
        }
    }

    pub fn at_most(metric: impl Into<String>, value: f64, upper: f64) -> Self {
        Check::new(metric, value, None, Some(upper))
    }

    pub fn at_least(metric: impl Into<String>, value: f64, lower: f64) -> Self {
        Check::new(metric, value, Some(lower), None)
    }

    pub fn within(metric: impl Into<String>, value: f64, target: f64, band: f64) -> Self {
        Check::new(metric, value, Some(target - band), Some(target + band))
    }

    pub fn holds(metric: impl Into<String>, ok: bool) -> Self {
        Check::at_least(metric, if ok { 1.0 } else { 0.0 }, 1.0)
    }
}

/// Rows of a plot-ready CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotData {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl PlotData {
    fn new(name: &str, header: &[&str]) -> Self {
        PlotData {
            name: name.to_string(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentOutcome {
    pub experiment: &'static str,
    pub anchor: &'static str,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub details: serde_json::Value,
    #[serde(skip)]
    pub plots: Vec<PlotData>,
}

impl ExperimentOutcome {
    fn new(info: &ExperimentInfo, checks: Vec<Check>, details: serde_json::Value, plots: Vec<PlotData>) -> Self {
        ExperimentOutcome {
            experiment: info.name,
            anchor: info.anchor,
            passed: checks.iter().all(|c| c.passed),
            checks,
            details,
            plots,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub passed: bool,
    pub experiments: Vec<ExperimentOutcome>,
}

impl RunSummary {
    /// 0 when every check passed, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            2
        }
    }

    pub fn results_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["experiment", "metric", "value", "lower", "upper", "passed"])
            .expect("in-memory write");
        let bound = |b: Option<f64>| b.map(fmt_f64).unwrap_or_default();
        for e in &self.experiments {
            for c in &e.checks {
                w.write_record([
                    e.experiment.to_string(),
                    c.metric.clone(),
                    fmt_f64(c.value),
                    bound(c.lower),
                    bound(c.upper),
                    c.passed.to_string(),
                ])
                .expect("in-memory write");
            }
        }
        w.into_inner().expect("in-memory flush")
    }

    pub fn report_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Writes `results.csv`, `report.json` and `plotdata/*.csv` under `dir`.
    pub fn write(&self, dir: &Path) -> BenchResult<()> {
        let out = |path: PathBuf| move |source| BenchError::Output { path, source };
        let plot_dir = dir.join("plotdata");
        fs::create_dir_all(&plot_dir).map_err(out(plot_dir.clone()))?;
        let results = dir.join("results.csv");
        fs::write(&results, self.results_csv()).map_err(out(results.clone()))?;
        let report = dir.join("report.json");
        fs::write(&report, self.report_json()).map_err(out(report.clone()))?;
        for e in &self.experiments {
            for p in &e.plots {
                let path = plot_dir.join(format!("{}_{}.csv", e.experiment, p.name));
                fs::write(&path, p.to_csv()).map_err(out(path.clone()))?;
            }
        }
        Ok(())
    }
}

/// Runs the selected experiments concurrently; nothing is written to disk.
pub fn execute(config: &ExperimentConfig) -> BenchResult<RunSummary> {
    config.validate()?;
    let experiments = config
        .selected()?
        .par_iter()
        .map(|info| {
            run_experiment(info, config).map_err(|source| BenchError::Numerics {
                experiment: info.name,
                source,
            })
        })
        .collect::<BenchResult<Vec<_>>>()?;
    Ok(RunSummary {
        seed: config.seed,
        passed: experiments.iter().all(|e| e.passed),
        experiments,
    })
}

/// [`execute`] and write the artifacts to the configured output directory.
pub fn run(config: &ExperimentConfig) -> BenchResult<RunSummary> {
    let summary = execute(config)?;
    summary.write(&config.output_dir())?;
    Ok(summary)
}

type Outcome = crate::error::Result<ExperimentOutcome>;

fn run_experiment(info: &ExperimentInfo, cfg: &ExperimentConfig) -> Outcome {
    match info.name {
        "compatibility" => compatibility(info, cfg),
        "domain_chain" => domain_chain(info, cfg),
        "duhamel_vs_stepper" => duhamel_vs_stepper(info, cfg),
        "gronwall" => gronwall(info, cfg),
        "instability" => instability(info, cfg),
        "logconvexity" => logconvexity(info, cfg),
        "roundtrip" => roundtrip(info, cfg),
        "weyl" => weyl(info, cfg),
        _ => unreachable!("registry and dispatch disagree"),
    }
}

fn interval(n: usize) -> ModelConfig {
    ModelConfig::Neumann {
        geometry: Geometry::Interval {
            length: std::f64::consts::PI,
        },
        modes: n,
    }
}

fn model_or(cfg: &ExperimentConfig, default: ModelConfig) -> crate::error::Result<Model> {
    cfg.model.as_ref().unwrap_or(&default).build()
}

fn fvp_options(cfg: &ExperimentConfig, levels: Option<Vec<usize>>) -> FvpOptions {
    FvpOptions {
        quadrature: cfg.tolerances.quadrature,
        domain: cfg.tolerances.domain,
        levels: cfg.levels.clone().or(levels),
    }
}

fn seeds(seed: u64, count: usize) -> Vec<u64> {
    let mut master = sampling::rng(seed);
    (0..count).map(|_| rand::Rng::random(&mut master)).collect()
}

/// The non-normal operator `[[1, 1], [0, 2]]` on Euclidean `C²`.
pub fn nonnormal_2x2() -> crate::error::Result<CoerciveOperator> {
    let a = real_matrix(&[vec![1.0, 1.0], vec![0.0, 2.0]])?;
    CoerciveOperator::with_estimated_constants(Backend::Matrix { matrix: a }, GelfandTriple::euclidean(2))
}

fn roundtrip(info: &ExperimentInfo, cfg: &ExperimentConfig) -> Outcome {
    let model = model_or(cfg, interval(16))?;
    let horizon = cfg.horizon.unwrap_or(0.5);
    let grid = uniform_grid(horizon, cfg.grid.unwrap_or(64));
    let opts = RoundTripOptions {
        fvp: fvp_options(cfg, None),
        ..RoundTripOptions::default()
    };
    let ev = SemigroupEvaluator::new(model.operator().clone());
    let report = homeomorphism_roundtrip(&ev, &grid, cfg.trials.unwrap_or(100), cfg.seed, &opts)?;
    let tol = cfg.tolerances.roundtrip;
    let checks = vec![
        Check::at_most("worst_x_error", report.worst_x_error, tol),
        Check::at_most("worst_y_error", report.worst_y_error, tol),
        Check::at_most("worst_sobolev_violation", report.worst_sobolev_violation, 0.0),
    ];
    let mut plot = PlotData::new("errors", &["trial", "x_error", "y_error"]);
    for (i, (x, y)) in report.x_errors.iter().zip(&report.y_errors).enumerate() {
        plot.push(vec![i.to_string(), fmt_f64(*x), fmt_f64(*y)]);
    }
    let details = json!({
        "model": model.label(),
        "modes": ev.dim(),
        "horizon": horizon,
        "report": report,
    });
    Ok(ExperimentOutcome::new(info, checks, details, vec![plot]))
}

fn compatibility(info: &ExperimentInfo, cfg: &ExperimentConfig) -> Outcome {
    let model = model_or(cfg, interval(32))?;
    let ev = SemigroupEvaluator::new(model.operator().clone());
    let n = ev.dim();
    let horizon = cfg.horizon.unwrap_or(0.5);
    let default_levels = [8, 16, 32].iter().copied().filter(|l| *l <= n).collect::<Vec<_>>();
    let opts = fvp_options(cfg, Some(default_levels).filter(|l| l.len() > 1));
    let rt = RoundTripOptions {
        fvp: opts.clone(),
        ..RoundTripOptions::default()
    };
    let cases = cfg.trials.unwrap_or(50);
    let rows = seeds(cfg.seed, cases)
        .par_iter()
        .enumerate()
        .map(|(i, &s)| {
            let mut rng = sampling::rng(s);
            let constructed = i % 2 == 0;
            let (u0, f) = random_cauchy_data(&ev, horizon, &rt, &mut rng)?;
            let u_t = if constructed {
                ev.evolve(horizon, &u0)? + compute_yf(&ev, &f, horizon, &opts.quadrature)?.value
            } else {
                sampling::real_normal_vector(&mut rng, n)
            };
            let report = check_compatibility(&ev, &FvpData::new(f, u_t, horizon)?, &opts)?;
            Ok((constructed, report))
        })
        .collect::<crate::error::Result<Vec<_>>>()?;

    let mut plot = PlotData::new(
        "cases",
        &["case", "constructed", "verdict", "log_graph_norm_finest", "correct"],
    );
    let mut correct = 0usize;
    for (i, (constructed, report)) in rows.iter().enumerate() {
        let expected = if *constructed {
            DomainVerdict::InDomain
        } else {
            DomainVerdict::Diverging
        };
        let ok = report.verdict == expected;
        correct += ok as usize;
        let finest = report.log_graph_norms.last().copied().unwrap_or(f64::NAN);
        plot.push(vec![
            i.to_string(),
            constructed.to_string(),
            report.verdict.to_string(),
            fmt_f64(finest),
            ok.to_string(),
        ]);
    }
    let accuracy = correct as f64 / cases as f64;
    let checks = vec![Check::at_least(
        "accuracy",
        accuracy,
        cfg.tolerances.compatibility_accuracy,
    )];
    let details = json!({
        "model": model.label(),
        "modes": n,
        "horizon": horizon,
        "cases": cases,
        "correct": correct,
        "log_kappa": rows.first().map(|r| r.1.log_kappa),
    });
    Ok(ExperimentOutcome::new(info, checks, details, vec![plot]))
}

fn domain_chain(info: &ExperimentInfo, cfg: &ExperimentConfig) -> Outcome {
    let model = model_or(cfg, interval(32))?;
    let ev = SemigroupEvaluator::new(model.operator().clone());
    let t = cfg.horizon.unwrap_or(1.0);
    let levels = cfg.levels.clone().unwrap_or_else(|| {
        let n = ev.dim();
        let mut l = vec![(n / 4).max(1), (n / 2).max(1), n];
        l.dedup();
        l
    });
    let (at_t, at_2t) = domain_chain_probe(
        &ev,
        t,
        2.0 * t,
        &levels,
        |j, l| (-t * l).exp() / (1.0 + j as f64),
        &cfg.tolerances.domain,
    )?;
    let checks = vec![
        Check::holds("in_domain_at_t", at_t.verdict == DomainVerdict::InDomain),
        Check::holds("diverging_at_2t", at_2t.verdict == DomainVerdict::Diverging),
    ];
    let mut plot = PlotData::new("graph_norms", &["level", "log_graph_norm_t", "log_graph_norm_2t"]);
    for (i, level) in at_t.levels.iter().enumerate() {
        let get =
            |d: &crate::semigroup::DomainDiagnostic| d.log_graph_norms.get(i).copied().map(fmt_f64).unwrap_or_default();
        plot.push(vec![level.to_string(), get(&at_t), get(&at_2t)]);
    }
    let details = json!({ "model": model.label(), "t": t, "at_t": at_t, "at_2t": at_2t });
    Ok(ExperimentOutcome::new(info, checks, details, vec![plot]))
}

fn duhamel_vs_stepper(info: &ExperimentInfo, cfg: &ExperimentConfig) -> Outcome {
    let horizon = cfg.horizon.unwrap_or(1.0);
    let steps = cfg.steps.clone().unwrap_or_else(|| vec![256, 512, 1024, 2048]);
    let models: Vec<Model> = match &cfg.model {
        Some(m) => vec![m.build()?],
        None => vec![interval(8).build()?, Model::Operator(nonnormal_2x2()?)],
    };
    let rt = RoundTripOptions::default();
    let tol = &cfg.tolerances;
    let mut checks = Vec::new();
    let mut plot = PlotData::new("gaps", &["model", "steps", "x_gap"]);
    let mut orders = Vec::new();
    for (model, &s) in models.iter().zip(&seeds(cfg.seed, models.len())) {
        let ev = SemigroupEvaluator::new(model.operator().clone());
        let mut rng = sampling::rng(s);
        let (u0, f) = random_cauchy_data(&ev, horizon, &rt, &mut rng)?;
        let (gaps, order) = stepper_convergence(&ev, &u0, &f, &steps, Scheme::CrankNicolson, &tol.quadrature)?;
        checks.push(Check::within(
            format!("order_{}", model.label()),
            order,
            tol.order,
            tol.order_band,
        ));
        for g in &gaps {
            plot.push(vec![model.label().to_string(), g.steps.to_string(), fmt_f64(g.x_gap)]);
        }
        orders.push(json!({ "model": model.label(), "order": order, "gaps": gaps }));
    }
    let details = json!({ "horizon": horizon, "scheme": "crank-nicolson", "runs": orders });
    Ok(ExperimentOutcome::new(info, checks, details, vec![plot]))
}

fn gronwall(info: &ExperimentInfo, cfg: &ExperimentConfig) -> Outcome {
    let model = model_or(cfg, interval(16))?;
    let op = model.operator();
    let ev = SemigroupEvaluator::new(op.clone());
    let horizon = cfg.horizon.unwrap_or(1.0);
    let grid = uniform_grid(horizon, cfg.grid.unwrap_or(128));
    let rt = RoundTripOptions::default();
    let (c1, c2) = (op.triple().c1(), op.triple().c2());
    let cases = seeds(cfg.seed, cfg.trials.unwrap_or(100))
        .par_iter()
        .map(|&s| {
            let mut rng = sampling::rng(s);
            let (u0, f) = random_cauchy_data(&ev, horizon, &rt, &mut rng)?;
            let u = solve_forward_duhamel(&ev, &u0, &f, &grid, &cfg.tolerances.quadrature)?;
            let report = verify_gronwall_bound(op, &u0, &f, &u)?;
            Ok((report, u.sobolev_margin(c1, c2)))
        })
        .collect::<crate::error::Result<Vec<_>>>()?;

    let worst = cases.iter().map(|c| c.0.min_margin).fold(f64::INFINITY, f64::min);
    let violations = cases.iter().filter(|c| !(c.1 >= 0.0)).count();
    let checks = vec![
        Check::at_least("min_margin", worst, -cfg.tolerances.gronwall),
        Check::at_most("sobolev_violations", violations as f64, 0.0),
    ];
    let mut margins = PlotData::new("margins", &["case", "min_margin", "sobolev_margin"]);
    for (i, (r, s)) in cases.iter().enumerate() {
        margins.push(vec![i.to_string(), fmt_f64(r.min_margin), fmt_f64(*s)]);
    }
    let mut curve = PlotData::new("first_case", &["t", "lhs", "rhs"]);
    let first = &cases[0].0;
    for i in 0..first.times.len() {
        curve.push(vec![
            fmt_f64(first.times[i]),
            fmt_f64(first.lhs[i]),
            fmt_f64(first.rhs[i]),
        ]);
    }
    let details = json!({
        "model": model.label(),
        "constants": op.constants(),
        "horizon": horizon,
        "cases": cases.len(),
        "min_margin": worst,
        "sobolev_violations": violations,
    });
    Ok(ExperimentOutcome::new(info, checks, details, vec![margins, curve]))
}

fn instability(info: &ExperimentInfo, cfg: &ExperimentConfig) -> Outcome {
    let model = match model_or(cfg, interval(32))? {
        Model::Neumann(m) => m,
        Model::Operator(_) => unreachable!("validated"),
    };
    let horizon = cfg.horizon.unwrap_or(1.0);
    let modes = cfg.modes.clone().unwrap_or_else(|| (0..model.dim()).collect());
    let rows = instability_experiment(&model, horizon, &modes)?;
    let worst = rows
        .iter()
        .filter_map(|r| r.norm.map(|n| (n - r.expected).abs() / r.expected))
        .fold(0.0, f64::max);
    let checks = vec![Check::at_most(
        "worst_relative_error",
        worst,
        cfg.tolerances.instability,
    )];
    let mut plot = PlotData::new("table", &["j", "lambda", "norm", "expected", "overflowed"]);
    for r in &rows {
        plot.push(vec![
            r.j.to_string(),
            fmt_f64(r.lambda),
            r.norm.map(fmt_f64).unwrap_or_default(),
            fmt_f64(r.expected),
            r.overflowed.to_string(),
        ]);
    }
    let details = json!({
        "horizon": horizon,
        "overflowed": rows.iter().filter(|r| r.overflowed).map(|r| r.j).collect::<Vec<_>>(),
        "rows": rows,
    });
    Ok(ExperimentOutcome::new(info, checks, details, vec![plot]))
}

/// Random operator families of the log-convexity experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorFamily {
    SelfAdjoint,
    Normal,
}

/// `Q diag(λ) Q^*` with real `λ ∈ [0, 5]` and orthogonal `Q`, or complex
/// `μ` with `Re μ ∈ [0.1, 5]`, `Im μ ∈ [-5, 5]` and unitary `Q`.
pub fn random_operator(
    family: OperatorFamily,
    n: usize,
    rng: &mut sampling::SeededRng,
) -> crate::error::Result<CoerciveOperator> {
    use rand::Rng;
    let (q, values): (CMatrix, Vec<_>) = match family {
        OperatorFamily::SelfAdjoint => (
            sampling::random_orthogonal(rng, n),
            (0..n).map(|_| c(rng.random_range(0.0..5.0))).collect(),
        ),
        OperatorFamily::Normal => (
            sampling::random_unitary(rng, n),
            (0..n)
                .map(|_| crate::linalg::C64::new(rng.random_range(0.1..5.0), rng.random_range(-5.0..5.0)))
                .collect(),
        ),
    };
    let d = CMatrix::from_diagonal(&CVector::from_vec(values));
    let matrix = &q * d * q.adjoint();
    CoerciveOperator::with_estimated_constants(Backend::Matrix { matrix }, GelfandTriple::euclidean(n))
}

/// Per-sample signals of the log-convexity experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogConvexitySample {
    /// Criterion at `u(s) = e^{-sA}x`.
    pub criterion: f64,
    /// Criterion divided by `|u(s)|⁴`, which equals `(log h)''(s)`.
    pub curvature: f64,
    /// Central second difference of `log h` at `s`.
    pub finite_difference: f64,
}

/// `samples` random `x` per operator, each probed at time `s` with difference step `step`.
pub fn logconvexity_samples(
    op: &CoerciveOperator,
    samples: usize,
    s: f64,
    step: f64,
    rng: &mut sampling::SeededRng,
) -> crate::error::Result<Vec<LogConvexitySample>> {
    let ev = SemigroupEvaluator::new(op.clone());
    (0..samples)
        .map(|_| {
            let x = sampling::complex_vector(rng, op.dim());
            let u = ev.evolve(s, &x)?;
            let criterion = logconv_criterion(op, &u)?;
            let h2 = op.triple().h_norm(&u).powi(2);
            let fd = log_height_second_difference(&ev, &x, &[s], step)?[0];
            Ok(LogConvexitySample {
                criterion,
                curvature: criterion / (h2 * h2),
                finite_difference: fd,
            })
        })
        .collect()
}

fn logconvexity(info: &ExperimentInfo, cfg: &ExperimentConfig) -> Outcome {
    const DIM: usize = 6;
    const SAMPLES: usize = 100;
    const STEP: f64 = 1e-3;
    let per_family = cfg.trials.unwrap_or(20);
    let s = 0.5 * cfg.horizon.unwrap_or(0.5);
    let fd_tol = cfg.tolerances.logconv_fd;
    let jobs: Vec<(OperatorFamily, usize)> = [OperatorFamily::SelfAdjoint, OperatorFamily::Normal]
        .iter()
        .flat_map(|&f| (0..per_family).map(move |i| (f, i)))
        .collect();
    let results = jobs
        .par_iter()
        .zip(seeds(cfg.seed, jobs.len()))
        .map(|(&(family, i), seed)| {
            let mut rng = sampling::rng(seed);
            let op = random_operator(family, DIM, &mut rng)?;
            Ok((family, i, logconvexity_samples(&op, SAMPLES, s, STEP, &mut rng)?))
        })
        .collect::<crate::error::Result<Vec<_>>>()?;

    let all = || results.iter().flat_map(|r| r.2.iter());
    let total = all().count();
    let min_criterion = all().map(|x| x.criterion).fold(f64::INFINITY, f64::min);
    let min_fd = all().map(|x| x.finite_difference).fold(f64::INFINITY, f64::min);
    let agree = all()
        .filter(|x| (x.criterion >= 0.0) == (x.finite_difference >= -fd_tol))
        .count();
    let worst_gap = all()
        .map(|x| (x.curvature - x.finite_difference).abs() / x.curvature.abs().max(1.0))
        .fold(0.0, f64::max);
    let checks = vec![
        Check::at_least("min_criterion", min_criterion, 0.0),
        Check::at_least("min_finite_difference", min_fd, -fd_tol),
        Check::at_least(
            "agreement",
            agree as f64 / total as f64,
            cfg.tolerances.logconv_agreement,
        ),
    ];
    let mut plot = PlotData::new(
        "samples",
        &[
            "family",
            "operator",
            "sample",
            "criterion",
            "curvature",
            "finite_difference",
        ],
    );
    for (family, i, samples) in &results {
        let family = match family {
            OperatorFamily::SelfAdjoint => "self_adjoint",
            OperatorFamily::Normal => "normal",
        };
        for (k, x) in samples.iter().enumerate() {
            plot.push(vec![
                family.to_string(),
                i.to_string(),
                k.to_string(),
                fmt_f64(x.criterion),
                fmt_f64(x.curvature),
                fmt_f64(x.finite_difference),
            ]);
        }
    }
    let details = json!({
        "dimension": DIM,
        "operators_per_family": per_family,
        "samples_per_operator": SAMPLES,
        "time": s,
        "step": STEP,
        "agreeing_samples": agree,
        "total_samples": total,
        "worst_curvature_gap": worst_gap,
    });
    Ok(ExperimentOutcome::new(info, checks, details, vec![plot]))
}

fn weyl(info: &ExperimentInfo, cfg: &ExperimentConfig) -> Outcome {
    let models: Vec<NeumannModel> = match &cfg.model {
        Some(m) => match m.build()? {
            Model::Neumann(m) => vec![m],
            Model::Operator(_) => unreachable!("validated"),
        },
        None => vec![
            build_model(
                Geometry::Interval {
                    length: std::f64::consts::PI,
                },
                64,
            )?,
            build_model(
                Geometry::Rectangle {
                    lx: std::f64::consts::PI,
                    ly: std::f64::consts::PI,
                },
                256,
            )?,
        ],
    };
    let mut checks = Vec::new();
    let mut fits = Vec::new();
    let mut plot = PlotData::new("spectrum", &["geometry", "j", "lambda"]);
    for m in &models {
        let label = Model::Neumann(m.clone()).label();
        let fit = weyl_check(m)?;
        checks.push(Check::within(
            format!("exponent_{label}"),
            fit.exponent,
            fit.expected,
            fit.band,
        ));
        for (j, l) in m.eigenvalues().iter().enumerate() {
            plot.push(vec![label.to_string(), j.to_string(), fmt_f64(*l)]);
        }
        fits.push(json!({ "geometry": m.geometry(), "modes": m.dim(), "fit": fit }));
    }
    Ok(ExperimentOutcome::new(
        info,
        checks,
        json!({ "fits": fits }),
        vec![plot],
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_is_sorted_and_dispatchable() {
        let names: Vec<&str> = REGISTRY.iter().map(|e| e.name).collect();
        let mut sorted = names.clone();
        sorted.sort();
        assert_eq!(names, sorted);
        for n in [
            "compatibility",
            "roundtrip",
            "gronwall",
            "weyl",
            "instability",
            "logconvexity",
            "domain_chain",
            "duhamel_vs_stepper",
        ] {
            assert!(lookup(n).is_some(), "{n}");
        }
    }

    #[test]
    fn config_defaults_and_overrides() {
        let cfg = parse_config(r#"{"experiment": "roundtrip", "model": {"neumann": {"geometry": {"kind": "interval"}, "modes": 16}}, "horizon": 0.5}"#).unwrap();
        assert_eq!(cfg.seed, DEFAULT_SEED);
        assert_eq!(cfg.tolerances, Tolerances::default());
        assert!(matches!(cfg.model.unwrap().build().unwrap(), Model::Neumann(m) if m.dim() == 16));
    }

    #[test]
    fn config_errors_name_line_and_field() {
        let err = parse_config("{\n  \"experiment\": \"roundtrip\",\n  \"horizn\": 1\n}").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("horizn") && msg.contains("line 3"), "{msg}");
        assert_eq!(err.exit_code(), 3);

        let err = parse_config(r#"{"experiment": "nope"}"#).unwrap_err();
        assert!(err.to_string().contains("nope"));
        let err = parse_config(r#"{"experiment": "weyl", "horizon": -1}"#).unwrap_err();
        assert!(err.to_string().contains("`horizon`"));
        let err = parse_config(
            r#"{"experiment": "all", "model": {"neumann": {"geometry": {"kind": "interval"}, "modes": 4}}}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("`model`"));
        let err = parse_config(
            r#"{"experiment": "instability", "model": {"operator": {"backend": "spectral", "eigenvalues": [0, 1]}}}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("neumann"));
    }

    #[test]
    fn check_bounds() {
        assert!(Check::at_most("a", 1.0, 1.0).passed);
        assert!(!Check::at_least("a", f64::NAN, 0.0).passed);
        assert!(Check::within("a", 2.4, 2.0, 0.5).passed);
        assert!(!Check::holds("a", false).passed);
    }

    #[test]
    fn instability_table_matches_closed_form() {
        let mut cfg = ExperimentConfig::new("instability");
        cfg.modes = Some((0..7).collect());
        let out = execute(&cfg).unwrap();
        assert!(out.passed);
        let plot = &out.experiments[0].plots[0];
        assert_eq!(plot.rows.len(), 7);
        let norm3: f64 = plot.rows[3][2].parse().unwrap();
        assert!((norm3 - 8103.08).abs() < 0.01);
    }
}
