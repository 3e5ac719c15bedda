//! Command-line front end. Every run reads an optional JSON [`RunConfig`],
//! applies flag overrides, writes its artifacts into the output directory and
//! maps the outcome to an exit status (see [`ExitStatus`]).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dyson::{Direction, DysonEngine, EngineOptions, SeriesReport, DEFAULT_MAX_ORDER};
use crate::error::{Error, Result};
use crate::evolution::{
    default_observable_shift_limit, heisenberg_residual_order, observable_apply, schrodinger_residual_order,
    schrodinger_trajectory, split_form_residual,
};
use crate::graded::{vector_from_pairs, vector_to_pairs, GradeCert, LinOp, LinOpDoc};
use crate::linalg::{inner, random_unit_vector, vec_norm, CMat, CVec, C64};
use crate::models::{fleet, random_model, Coupling, ModelSpec, RandomModel};
use crate::qed::{self, build_model, QedConfig, QedModel};
use crate::report::{junit_xml, Report};
use crate::suite::{appendix_convergence, engine_reports, model_reports, IdentityParams};
use crate::VERSION;

#[derive(Debug, Parser)]
#[command(
    name = "dysonprop",
    version,
    about = "Certified Dyson-series propagators and an indefinite-metric QED toy"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Schrödinger trajectory `W(t)ξ` on a uniform grid.
    Evolve(RunArgs),
    /// Heisenberg observable track and residual-order checks.
    Heisenberg(RunArgs),
    /// Identity, oracle and bound-audit suites with JUnit output.
    Verify(RunArgs),
    /// Structure, η-unitarity and residual checks of the QED toy model.
    QedDemo(RunArgs),
    /// Grade-weighted convergence table of the partial sums.
    Convergence(RunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Evolve(_) => "evolve",
            Command::Heisenberg(_) => "heisenberg",
            Command::Verify(_) => "verify",
            Command::QedDemo(_) => "qed-demo",
            Command::Convergence(_) => "convergence",
        }
    }

    pub fn args(&self) -> &RunArgs {
        match self {
            Command::Evolve(a)
            | Command::Heisenberg(a)
            | Command::Verify(a)
            | Command::QedDemo(a)
            | Command::Convergence(a) => a,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Series tolerance (overrides `tol`).
    #[arg(long)]
    pub tol: Option<f64>,
    /// Final time (overrides `t_end`).
    #[arg(long = "t-end", allow_negative_numbers = true)]
    pub t_end: Option<f64>,
    /// Seed for random models and vectors (overrides `seed`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Ok = 0,
    /// A check failed, or an I/O or numerical failure occurred.
    Failed = 1,
    /// The configuration does not match the schema or is inconsistent.
    Schema = 2,
    /// A model violates a structural assumption.
    Assumption = 3,
    /// The series could not reach the tolerance within the order cap.
    Truncation = 4,
}

impl ExitStatus {
    pub fn of_error(e: &Error) -> Self {
        match e {
            Error::Assumption { .. } => ExitStatus::Assumption,
            Error::Truncation { .. } => ExitStatus::Truncation,
            Error::Malformed(_)
            | Error::Config(_)
            | Error::Json(_)
            | Error::UnknownMode(_)
            | Error::DimensionMismatch { .. }
            | Error::Domain(_) => ExitStatus::Schema,
            Error::Io(_) | Error::Csv(_) | Error::Overflow(_) | Error::Stiffness { .. } => ExitStatus::Failed,
        }
    }
}

/// Model document: explicit operators, a seeded random model or fleet, the
/// QED toy, or a path to a file holding one of these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelDoc {
    Operators {
        h0: LinOpDoc,
        h1: LinOpDoc,
    },
    Random(RandomDoc),
    Fleet(FleetDoc),
    Qed(QedConfig),
    /// Relative paths resolve against the directory of the run configuration.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomDoc {
    /// Falls back to the run seed.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_shift")]
    pub shift: u32,
    #[serde(default = "default_coupling")]
    pub coupling: Coupling,
    #[serde(default = "default_rel_bound")]
    pub rel_bound: f64,
    #[serde(default = "one")]
    pub free_scale: f64,
}

impl Default for RandomDoc {
    fn default() -> Self {
        RandomDoc {
            seed: None,
            dim: default_dim(),
            shift: default_shift(),
            coupling: default_coupling(),
            rel_bound: default_rel_bound(),
            free_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetDoc {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_count")]
    pub count: usize,
    /// Alternates non-normal and Hermitian interactions when omitted.
    #[serde(default)]
    pub coupling: Option<Coupling>,
}

impl Default for FleetDoc {
    fn default() -> Self {
        FleetDoc {
            seed: None,
            count: default_count(),
            coupling: None,
        }
    }
}

/// Observable for the Heisenberg pipelines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservableDoc {
    Matrix(LinOpDoc),
    /// Smeared gauge field `A_μ` at a lattice position of the QED model.
    Field {
        position: usize,
        component: usize,
    },
}

/// The run configuration. Every field has a default, so `{}` is valid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Defaults to a fleet for `verify`, the QED toy for `qed-demo`, and a
    /// single random model otherwise.
    #[serde(default)]
    pub model: Option<ModelDoc>,
    #[serde(default = "one")]
    pub t_end: f64,
    /// Number of uniform time steps between 0 and `t_end`.
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_order")]
    pub max_order: usize,
    /// `[[re, im], ...]`; a seeded random vector when omitted.
    #[serde(default)]
    pub initial_state: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub observable: Option<ObservableDoc>,
    /// Finite-difference steps `h` and `h/2` of the residual-order checks.
    #[serde(default = "default_steps")]
    pub steps: [f64; 2],
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
}

fn one() -> f64 {
    1.0
}
fn default_dim() -> usize {
    16
}
fn default_shift() -> u32 {
    2
}
fn default_coupling() -> Coupling {
    Coupling::NonNormal
}
fn default_rel_bound() -> f64 {
    0.5
}
fn default_count() -> usize {
    20
}
fn default_samples() -> usize {
    8
}
fn default_tol() -> f64 {
    1e-10
}
fn default_max_order() -> usize {
    DEFAULT_MAX_ORDER
}
fn default_steps() -> [f64; 2] {
    [1e-3, 5e-4]
}
fn default_alphas() -> Vec<f64> {
    vec![0.0, 1.0, 2.0]
}
fn default_n_max() -> usize {
    12
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

fn config_error(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str, path: &Path) -> Result<T> {
    serde_json::from_str(text).map_err(|e| config_error(format!("{}: {e}", path.display())))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))
}

impl RunConfig {
    /// Reads `path` (or starts from defaults), applies flag overrides, inlines
    /// model files and fills command-dependent defaults and seeds.
    pub fn resolve(command: &str, args: &RunArgs) -> Result<Self> {
        let (mut cfg, base) = match &args.config {
            Some(path) => {
                let cfg: RunConfig = parse_json(&read_file(path)?, path)?;
                (cfg, path.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (RunConfig::default(), PathBuf::new()),
        };
        if let Some(t) = args.tol {
            cfg.tol = t;
        }
        if let Some(t) = args.t_end {
            cfg.t_end = t;
        }
        if let Some(s) = args.seed {
            cfg.seed = s;
        }
        let mut model = cfg.model.take().unwrap_or_else(|| match command {
            "verify" => ModelDoc::Fleet(FleetDoc::default()),
            "qed-demo" => ModelDoc::Qed(QedConfig::default()),
            _ => ModelDoc::Random(RandomDoc::default()),
        });
        if let ModelDoc::File(p) = &model {
            let path = base.join(p);
            model = parse_json(&read_file(&path)?, &path)?;
            if matches!(model, ModelDoc::File(_)) {
                return Err(config_error(format!(
                    "{}: model files may not reference further files",
                    path.display()
                )));
            }
        }
        match &mut model {
            ModelDoc::Random(r) => {
                r.seed.get_or_insert(cfg.seed);
            }
            ModelDoc::Fleet(f) => {
                f.seed.get_or_insert(cfg.seed);
            }
            _ => {}
        }
        cfg.model = Some(model);
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            return Err(config_error(format!(
                "field `t_end`: {} must be finite and > 0",
                self.t_end
            )));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(config_error(format!(
                "field `tol`: {} must be finite and > 0",
                self.tol
            )));
        }
        if self.samples < 2 {
            return Err(config_error("field `samples`: must be at least 2"));
        }
        if self.n_max < 2 {
            return Err(config_error("field `n_max`: must be at least 2"));
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(config_error("field `alphas`: needs at least one finite value >= 0"));
        }
        if !(self.steps[0] > self.steps[1] && self.steps[1] > 0.0 && self.steps[0] < self.t_end / 2.0) {
            return Err(config_error("field `steps`: needs h > h/2 > 0 with h < t_end / 2"));
        }
        match &self.model {
            Some(ModelDoc::Random(r)) => {
                if r.dim < 2 {
                    return Err(config_error("field `model.random.dim`: must be at least 2"));
                }
                if !(r.rel_bound.is_finite() && r.rel_bound >= 0.0) {
                    return Err(config_error("field `model.random.rel_bound`: must be finite and >= 0"));
                }
                if !(r.free_scale.is_finite() && r.free_scale > 0.0) {
                    return Err(config_error("field `model.random.free_scale`: must be finite and > 0"));
                }
            }
            Some(ModelDoc::Fleet(f)) if f.count == 0 => {
                return Err(config_error("field `model.fleet.count`: must be at least 1"));
            }
            _ => {}
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the resolved configuration.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("configuration serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    fn times(&self) -> Vec<f64> {
        (0..=self.samples)
            .map(|k| self.t_end * k as f64 / self.samples as f64)
            .collect()
    }

    fn engine_options(&self) -> EngineOptions {
        EngineOptions {
            max_order: self.max_order,
            ..EngineOptions::default()
        }
    }
}

enum Loaded {
    Single {
        engine: DysonEngine,
        qed: Option<Box<QedModel>>,
    },
    Fleet(Vec<RandomModel>),
}

fn load(cfg: &RunConfig) -> Result<Loaded> {
    let opts = cfg.engine_options();
    let single = |h0: &LinOp, h1: &LinOp| DysonEngine::with_options(h0, h1, opts);
    match cfg.model.as_ref().expect("resolved") {
        ModelDoc::Operators { h0, h1 } => {
            let h0 = h0.to_linop()?;
            let h1 = h1.to_linop_on(h0.space())?;
            Ok(Loaded::Single {
                engine: single(&h0, &h1)?,
                qed: None,
            })
        }
        ModelDoc::Random(r) => {
            let m = random_model(
                r.seed.unwrap_or(cfg.seed),
                ModelSpec {
                    dim: r.dim,
                    shift: r.shift,
                    coupling: r.coupling,
                    rel_bound: r.rel_bound,
                    free_scale: r.free_scale,
                },
            )?;
            Ok(Loaded::Single {
                engine: single(&m.h0, &m.h1)?,
                qed: None,
            })
        }
        ModelDoc::Fleet(f) => Ok(Loaded::Fleet(fleet(f.seed.unwrap_or(cfg.seed), f.count, f.coupling)?)),
        ModelDoc::Qed(q) => {
            let m = build_model(q)?;
            Ok(Loaded::Single {
                engine: single(m.h_fr(), m.h_int())?,
                qed: Some(Box::new(m)),
            })
        }
        ModelDoc::File(_) => unreachable!("files are inlined by resolve"),
    }
}

fn single(loaded: Loaded, command: &str) -> Result<(DysonEngine, Option<Box<QedModel>>)> {
    match loaded {
        Loaded::Single { engine, qed } => Ok((engine, qed)),
        Loaded::Fleet(_) => Err(config_error(format!(
            "field `model`: `{command}` needs a single model, not a fleet"
        ))),
    }
}

fn initial_state(cfg: &RunConfig, engine: &DysonEngine, qed: Option<&QedModel>) -> Result<CVec> {
    let n = engine.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let xi = match (&cfg.initial_state, qed) {
        (Some(pairs), _) => {
            if pairs.len() != n {
                return Err(config_error(format!(
                    "field `initial_state`: {} entries for a model of dimension {n}",
                    pairs.len()
                )));
            }
            vector_from_pairs(pairs)
        }
        (None, Some(m)) => qed::random_low_sector_vector(m, &mut rng, 1),
        (None, None) => random_unit_vector(&mut rng, n),
    };
    if !(vec_norm(&xi) > 0.0 && vec_norm(&xi).is_finite()) {
        return Err(config_error("field `initial_state`: must be finite and nonzero"));
    }
    Ok(xi)
}

/// Seeded Gaussian observable with the largest admissible grade shift.
fn default_observable(engine: &DysonEngine, seed: u64) -> Result<LinOp> {
    let limit = default_observable_shift_limit(engine);
    let g = engine.space().grades();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0b5e_7ab1e);
    let n = engine.dim();
    let mut m = CMat::zeros(n, n);
    for j in 0..n {
        for k in 0..n {
            if (g[j] - g[k]).abs() <= limit {
                m[(j, k)] = C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
            }
        }
    }
    LinOp::new(engine.space().clone(), m)
}

fn observable(cfg: &RunConfig, engine: &DysonEngine, qed: Option<&QedModel>) -> Result<(LinOp, String)> {
    match (&cfg.observable, qed) {
        (Some(ObservableDoc::Matrix(doc)), _) => Ok((doc.to_linop_on(engine.space())?, "matrix".into())),
        (Some(ObservableDoc::Field { position, component }), Some(m)) => field_observable(m, *position, *component),
        (Some(ObservableDoc::Field { .. }), None) => Err(config_error("field `observable.field`: needs a `qed` model")),
        (None, Some(m)) => field_observable(m, 0, 0),
        (None, None) => Ok((default_observable(engine, cfg.seed)?, "seeded gaussian".into())),
    }
}

fn field_observable(m: &QedModel, position: usize, component: usize) -> Result<(LinOp, String)> {
    if position >= m.positions().len() || component > 3 {
        return Err(config_error(format!(
            "field `observable.field`: position {position} or component {component} out of range"
        )));
    }
    Ok((
        m.lift(Some(m.field(position, component)), None)?,
        format!("A_{component}(x_{position})"),
    ))
}

/// Version and digest stamped into every artifact.
#[derive(Debug, Clone, Serialize)]
struct Stamp {
    version: &'static str,
    config_digest: String,
    command: &'static str,
}

#[derive(Serialize)]
struct Document<'a, T: Serialize> {
    #[serde(flatten)]
    stamp: &'a Stamp,
    config: &'a RunConfig,
    passed: bool,
    reports: &'a [Report],
    #[serde(flatten)]
    body: T,
}

struct Output<'a> {
    dir: &'a Path,
    stamp: Stamp,
    cfg: &'a RunConfig,
    written: Vec<PathBuf>,
}

impl Output<'_> {
    fn json<T: Serialize>(&mut self, name: &str, reports: &[Report], body: T) -> Result<()> {
        let doc = Document {
            stamp: &self.stamp,
            config: self.cfg,
            passed: reports.iter().all(|r| r.passed),
            reports,
            body,
        };
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// RFC-4180 table with `version` and `config_digest` columns appended.
    fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut head: Vec<&str> = header.to_vec();
        head.extend(["version", "config_digest"]);
        w.write_record(&head)?;
        for mut row in rows {
            row.push(self.stamp.version.to_string());
            row.push(self.stamp.config_digest.clone());
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        self.write(name, &bytes)
    }

    fn junit(&mut self, reports: &[Report]) -> Result<()> {
        let props = BTreeMap::from([
            ("command".to_string(), self.stamp.command.to_string()),
            ("config_digest".to_string(), self.stamp.config_digest.clone()),
            ("version".to_string(), self.stamp.version.to_string()),
        ]);
        let xml = junit_xml(&format!("dysonprop.{}", self.stamp.command), reports, &props);
        self.write("junit.xml", xml.as_bytes())
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes)?;
        self.written.push(path);
        Ok(())
    }
}

/// What a finished run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub status: ExitStatus,
    pub reports: Vec<Report>,
    pub written: Vec<PathBuf>,
    pub config_digest: String,
}

/// Runs one command. Errors carry their exit status via [`ExitStatus::of_error`].
pub fn run(command: &Command) -> Result<RunOutcome> {
    let name = command.name();
    let args = command.args();
    let cfg = RunConfig::resolve(name, args)?;
    fs::create_dir_all(&args.out)?;
    let mut out = Output {
        dir: &args.out,
        stamp: Stamp {
            version: VERSION,
            config_digest: cfg.digest(),
            command: name,
        },
        cfg: &cfg,
        written: Vec::new(),
    };
    let loaded = load(&cfg)?;
    let reports = match command {
        Command::Evolve(_) => run_evolve(&cfg, loaded, &mut out)?,
        Command::Heisenberg(_) => run_heisenberg(&cfg, loaded, &mut out)?,
        Command::Verify(_) => run_verify(&cfg, loaded, &mut out)?,
        Command::QedDemo(_) => run_qed_demo(&cfg, loaded, &mut out)?,
        Command::Convergence(_) => run_convergence(&cfg, loaded, &mut out)?,
    };
    let status = if reports.iter().all(|r| r.passed) {
        ExitStatus::Ok
    } else {
        ExitStatus::Failed
    };
    Ok(RunOutcome {
        status,
        reports,
        written: out.written,
        config_digest: out.stamp.config_digest,
    })
}

fn fmt_e(x: f64) -> String {
    format!("{x:e}")
}

#[derive(Serialize)]
struct EvolveBody {
    dim: usize,
    cert: GradeCert,
    cert_adjoint: GradeCert,
    times: Vec<f64>,
    states: Vec<Vec<[f64; 2]>>,
    schrodinger_residuals: Vec<Option<f64>>,
    final_series: SeriesReport,
}

fn run_evolve(cfg: &RunConfig, loaded: Loaded, out: &mut Output) -> Result<Vec<Report>> {
    let (engine, qed) = single(loaded, "evolve")?;
    let xi = initial_state(cfg, &engine, qed.as_deref())?;
    let times = cfg.times();
    let traj = schrodinger_trajectory(&engine, &xi, &times, cfg.tol)?;
    let grid = engine.auto_grid(Direction::Forward, 0.0, cfg.t_end, &xi, cfg.tol)?;
    let series = engine.evolve_vector(&xi, &grid, cfg.tol)?;
    let reports = vec![Report::new("series_truncation", series.tail_bound, cfg.tol)
        .with("achieved_order", series.achieved_order)
        .with("quadrature_estimate", series.quadrature_estimate)];

    out.csv(
        "trajectory.csv",
        &["time", "norm", "residual"],
        traj.times
            .iter()
            .zip(&traj.states)
            .zip(&traj.residuals)
            .map(|((t, s), r)| vec![format!("{t}"), fmt_e(vec_norm(s)), r.map(fmt_e).unwrap_or_default()]),
    )?;
    out.csv(
        "states.csv",
        &["time", "component", "re", "im"],
        traj.times.iter().zip(&traj.states).flat_map(|(t, s)| {
            s.iter()
                .enumerate()
                .map(|(j, z)| vec![format!("{t}"), j.to_string(), fmt_e(z.re), fmt_e(z.im)])
                .collect::<Vec<_>>()
        }),
    )?;
    out.json(
        "evolve.json",
        &reports,
        EvolveBody {
            dim: engine.dim(),
            cert: engine.cert(),
            cert_adjoint: engine.cert_adjoint(),
            times: traj.times.clone(),
            states: traj.states.iter().map(vector_to_pairs).collect(),
            schrodinger_residuals: traj.residuals.clone(),
            final_series: series.report(),
        },
    )?;
    Ok(reports)
}

#[derive(Serialize)]
struct HeisenbergBody {
    observable: String,
    times: Vec<f64>,
    expectations: Vec<[f64; 2]>,
    norms: Vec<f64>,
}

fn run_heisenberg(cfg: &RunConfig, loaded: Loaded, out: &mut Output) -> Result<Vec<Report>> {
    let (engine, qed) = single(loaded, "heisenberg")?;
    let xi = initial_state(cfg, &engine, qed.as_deref())?;
    let (b, label) = observable(cfg, &engine, qed.as_deref())?;
    let times = cfg.times();
    let mut expectations = Vec::with_capacity(times.len());
    let mut norms = Vec::with_capacity(times.len());
    for t in &times {
        let bt_xi = observable_apply(&engine, &b, *t, &xi, cfg.tol)?;
        let e = inner(&xi, &bt_xi);
        expectations.push([e.re, e.im]);
        norms.push(vec_norm(&bt_xi));
    }
    let t_mid = cfg.t_end / 2.0;
    let mut reports = vec![
        heisenberg_residual_order(&engine, &b, &xi, t_mid, cfg.steps, cfg.tol)?,
        schrodinger_residual_order(&engine, &xi, t_mid, cfg.steps, cfg.tol)?,
    ];
    if qed.is_none() {
        let r = split_form_residual(&engine, &b, t_mid, cfg.tol)?;
        reports.push(Report::new("split_form_agreement", r, 1e-8).with("t", t_mid));
    }
    out.csv(
        "heisenberg.csv",
        &["time", "expectation_re", "expectation_im", "norm"],
        times
            .iter()
            .zip(&expectations)
            .zip(&norms)
            .map(|((t, e), n)| vec![format!("{t}"), fmt_e(e[0]), fmt_e(e[1]), fmt_e(*n)]),
    )?;
    out.json(
        "heisenberg.json",
        &reports,
        HeisenbergBody {
            observable: label,
            times,
            expectations,
            norms,
        },
    )?;
    Ok(reports)
}

#[derive(Serialize)]
struct VerifyBody {
    models: usize,
    failed: usize,
}

fn identity_params(cfg: &RunConfig) -> IdentityParams {
    IdentityParams {
        seed: cfg.seed,
        tol: cfg.tol,
        time_range: cfg.t_end,
        ..IdentityParams::default()
    }
}

fn run_verify(cfg: &RunConfig, loaded: Loaded, out: &mut Output) -> Result<Vec<Report>> {
    let params = identity_params(cfg);
    let oracle_times = [cfg.t_end / 4.0, cfg.t_end / 2.0, cfg.t_end];
    let (reports, models) = match loaded {
        Loaded::Fleet(models) => {
            let mut all = Vec::new();
            for (k, m) in models.iter().enumerate() {
                all.extend(model_reports(m, &params, &oracle_times)?.into_iter().map(|r| {
                    let name = format!("model_{k:02}.{}", r.check_name);
                    Report { check_name: name, ..r }
                }));
            }
            (all, models.len())
        }
        Loaded::Single { qed: Some(m), engine } => (qed_reports(cfg, &m, &engine)?, 1),
        Loaded::Single { engine, qed: None } => (engine_reports(&engine, &params, &oracle_times)?, 1),
    };
    out.junit(&reports)?;
    let failed = reports.iter().filter(|r| !r.passed).count();
    out.json("verify.json", &reports, VerifyBody { models, failed })?;
    Ok(reports)
}

/// Structure checks, η-unitarity at `t_end` and the residual-order checks.
fn qed_reports(cfg: &RunConfig, m: &QedModel, engine: &DysonEngine) -> Result<Vec<Report>> {
    let mut reports = qed::structure_reports(m)?;
    reports.extend(qed::ladder_reports(m)?);
    reports.extend([
        qed::grade_shift_check(m)?,
        qed::eta_symmetry_check(m),
        qed::relative_bound_check(m),
        qed::field_commutators(m)?,
        qed::annihilator_estimate_check(m, 20, cfg.seed)?,
        qed::dirac_field_norm_check(m),
        qed::current_hermiticity_check(m),
    ]);
    reports.extend(qed::eta_unitarity_check_with(
        m,
        engine,
        cfg.t_end,
        cfg.tol,
        qed::ETA_PAIRS,
        cfg.seed ^ qed::ETA_PAIR_SEED,
        qed::default_pair_sector(m),
    )?);
    Ok(reports)
}

#[derive(Serialize)]
struct QedBody {
    dim: usize,
    constants: qed::QedConstants,
    cert: GradeCert,
    observable: String,
}

fn run_qed_demo(cfg: &RunConfig, loaded: Loaded, out: &mut Output) -> Result<Vec<Report>> {
    let (engine, qed) = single(loaded, "qed-demo")?;
    let m = qed.ok_or_else(|| config_error("field `model`: `qed-demo` needs a `qed` model"))?;
    let mut reports = qed_reports(cfg, &m, &engine)?;
    let xi = initial_state(cfg, &engine, Some(&m))?;
    let (b, label) = observable(cfg, &engine, Some(&m))?;
    let t_mid = cfg.t_end / 2.0;
    reports.push(heisenberg_residual_order(&engine, &b, &xi, t_mid, cfg.steps, cfg.tol)?);
    reports.push(schrodinger_residual_order(&engine, &xi, t_mid, cfg.steps, cfg.tol)?);
    out.junit(&reports)?;
    out.json(
        "qed.json",
        &reports,
        QedBody {
            dim: m.dim(),
            constants: m.constants(),
            cert: engine.cert(),
            observable: label,
        },
    )?;
    Ok(reports)
}

#[derive(Serialize)]
struct ConvergenceBody<'a> {
    table: &'a crate::suite::ConvergenceTable,
}

fn run_convergence(cfg: &RunConfig, loaded: Loaded, out: &mut Output) -> Result<Vec<Report>> {
    let (engine, qed) = single(loaded, "convergence")?;
    let xi = initial_state(cfg, &engine, qed.as_deref())?;
    let grid = engine.auto_grid(Direction::Forward, 0.0, cfg.t_end, &xi, cfg.tol.min(1e-12))?;
    let table = appendix_convergence(&engine, &xi, &grid, &cfg.alphas, cfg.n_max)?;
    let reports = table.reports();
    let mut header = vec!["order".to_string()];
    header.extend(table.alphas.iter().map(|a| format!("observed_alpha_{a}")));
    header.extend(table.alphas.iter().map(|a| format!("bound_alpha_{a}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    out.csv(
        "convergence.csv",
        &header,
        table.orders.iter().enumerate().map(|(i, n)| {
            let mut row = vec![n.to_string()];
            row.extend(table.observed.iter().map(|c| fmt_e(c[i])));
            row.extend(table.bounds.iter().map(|c| fmt_e(c[i])));
            row
        }),
    )?;
    out.json("convergence.json", &reports, ConvergenceBody { table: &table })?;
    Ok(reports)
}

/// Sizes the global worker pool from `DYSONPROP_THREADS`.
pub fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("DYSONPROP_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| config_error(format!("DYSONPROP_THREADS={value:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| config_error(format!("cannot size worker pool: {e}")))
}

/// Parses `argv`, runs and reports; returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitStatus::Schema as i32 } else { 0 };
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitStatus::of_error(&e) as i32;
    }
    match run(&cli.command) {
        Ok(outcome) => {
            for r in &outcome.reports {
                println!("{}", r.summary_line());
            }
            for p in &outcome.written {
                println!("wrote {}", p.display());
            }
            outcome.status as i32
        }
        Err(e) => {
            let status = ExitStatus::of_error(&e);
            match (&e, status) {
                (_, ExitStatus::Schema) => eprintln!("schema error: {e}"),
                (Error::Truncation { tail_bound, .. }, _) => {
                    eprintln!("error: {e}");
                    eprintln!("last tail bound: {tail_bound:e}");
                }
                _ => eprintln!("error: {e}"),
            }
            status as i32
        }
    }
}
