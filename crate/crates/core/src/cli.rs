//! Command-line surface: argument parsing, JSON config files, and writing
//! results with the fully resolved configuration alongside them.
//!
//! Flags override the config file; the file overrides built-in defaults.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::analysis::{
    run_fock_distance_experiment, run_gain_variance_experiment, run_pacs_marker_experiment,
    run_svs_crossover_experiment, ExperimentReport, FockDistanceParams, GainVarianceParams, PacsMarkerParams,
    Reference, SvsCrossoverParams,
};
use crate::error::Error;
use crate::markers::{marker_at, slice_averaged_many, MarkerKind, MarkerRecord, DEFAULT_SLICES};
use crate::moments::MomentTable;
use crate::states::{build_state, FockVector, StateSpec, DEFAULT_EPSILON};
use crate::tomogram::{full_tomogram, QuadratureGrid, Tomogram, DEFAULT_MAX_STEP, DEFAULT_POINTS};

pub const DEFAULT_N_THETA: usize = 16;
pub const DEFAULT_MAX_ORDER: usize = 4;

#[derive(Debug, Parser)]
#[command(name = "tomolab", version, about = "Optical homodyne tomograms, distance markers and moments")]
pub struct Cli {
    /// JSON config file; command-line flags take precedence
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Write the tomogram of a state as CSV (or JSON)
    Tomogram(TomogramArgs),
    /// Distance markers between the tomograms of two states
    Markers(MarkersArgs),
    /// Normal-ordered moments read from tomogram slices
    Moments(MomentsArgs),
    /// Run a named experiment and check its claims
    Experiment(ExperimentArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct GridArgs {
    /// Truncation tolerance on the discarded Fock weight
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Half-width of the symmetric quadrature grid
    #[arg(long)]
    pub x_max: Option<f64>,
    /// Number of grid points
    #[arg(long)]
    pub n_points: Option<usize>,
    /// Output file (stdout when absent)
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Defaults to csv for tomograms, json otherwise
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
}

#[derive(Debug, Clone, Args)]
pub struct TomogramArgs {
    /// State spec, e.g. `pacs:alpha=0.7,m=2`
    #[arg(long)]
    pub state: Option<StateSpec>,
    /// Number of equally spaced angles in [0, pi)
    #[arg(long)]
    pub n_theta: Option<usize>,
    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Debug, Clone, Args)]
pub struct MarkersArgs {
    /// Reference state (first argument of DKL)
    #[arg(long)]
    pub state: Option<StateSpec>,
    /// Compared state
    #[arg(long)]
    pub state_b: Option<StateSpec>,
    #[arg(long, value_enum)]
    pub marker: Option<MarkerSelection>,
    /// Single slice angle; slice-averaged when absent
    #[arg(long)]
    pub theta: Option<f64>,
    /// Slices averaged over when no angle is given
    #[arg(long)]
    pub n_slices: Option<usize>,
    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Debug, Clone, Args)]
pub struct MomentsArgs {
    /// State spec, e.g. `svs:r=0.5,phi=0`
    #[arg(long)]
    pub state: Option<StateSpec>,
    /// Largest k + l
    #[arg(long)]
    pub max_order: Option<usize>,
    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ExperimentArgs {
    #[arg(value_enum)]
    pub name: Option<ExperimentName>,
    /// Highest Fock level (fock-distances)
    #[arg(long)]
    pub n_max: Option<usize>,
    /// Reference coherent state for the trend checks (pacs-markers)
    #[arg(long, value_enum)]
    pub reference: Option<ReferenceArg>,
    /// Slices averaged over by the marker sweeps
    #[arg(long)]
    pub n_slices: Option<usize>,
    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CommandKind {
    Tomogram,
    Markers,
    Moments,
    Experiment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MarkerSelection {
    W1,
    Dkl,
    Db,
    All,
}

impl MarkerSelection {
    fn kinds(self) -> Vec<MarkerKind> {
        match self {
            MarkerSelection::W1 => vec![MarkerKind::W1],
            MarkerSelection::Dkl => vec![MarkerKind::Dkl],
            MarkerSelection::Db => vec![MarkerKind::Db],
            MarkerSelection::All => MarkerKind::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentName {
    FockDistances,
    PacsMarkers,
    GainVariance,
    SvsCrossover,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum ReferenceArg {
    BetaOpt,
    GainAmplified,
}

impl From<ReferenceArg> for Reference {
    fn from(r: ReferenceArg) -> Self {
        match r {
            ReferenceArg::BetaOpt => Reference::BetaOpt,
            ReferenceArg::GainAmplified => Reference::GainAmplified,
        }
    }
}

/// Everything a run can be configured with; also the config-file schema.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<CommandKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<StateSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_b: Option<StateSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_theta: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_slices: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub marker: Option<MarkerSelection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_order: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceArg>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<OutputFormat>,
}

macro_rules! overlay_fields {
    ($base:ident, $over:ident; $($f:ident),*) => {
        RunConfig { $($f: $over.$f.or($base.$f)),* }
    };
}

impl RunConfig {
    /// Fields set in `over` win.
    pub fn overlay(self, over: RunConfig) -> RunConfig {
        let base = self;
        overlay_fields!(base, over; command, state, state_b, epsilon, x_max, n_points, n_theta,
            n_slices, marker, theta, max_order, experiment, n_max, reference, output, format)
    }

    pub fn from_file(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    fn with_grid(mut self, g: GridArgs) -> Self {
        self.epsilon = g.epsilon;
        self.x_max = g.x_max;
        self.n_points = g.n_points;
        self.output = g.output;
        self.format = g.format;
        self
    }
}

impl Command {
    pub fn kind(&self) -> CommandKind {
        match self {
            Command::Tomogram(_) => CommandKind::Tomogram,
            Command::Markers(_) => CommandKind::Markers,
            Command::Moments(_) => CommandKind::Moments,
            Command::Experiment(_) => CommandKind::Experiment,
        }
    }

    /// The flags given on the command line, as a partial config.
    pub fn to_config(&self) -> RunConfig {
        let base = RunConfig {
            command: Some(self.kind()),
            ..Default::default()
        };
        match self.clone() {
            Command::Tomogram(a) => RunConfig {
                state: a.state,
                n_theta: a.n_theta,
                ..base
            }
            .with_grid(a.grid),
            Command::Markers(a) => RunConfig {
                state: a.state,
                state_b: a.state_b,
                marker: a.marker,
                theta: a.theta,
                n_slices: a.n_slices,
                ..base
            }
            .with_grid(a.grid),
            Command::Moments(a) => RunConfig {
                state: a.state,
                max_order: a.max_order,
                ..base
            }
            .with_grid(a.grid),
            Command::Experiment(a) => RunConfig {
                experiment: a.name,
                n_max: a.n_max,
                reference: a.reference,
                n_slices: a.n_slices,
                ..base
            }
            .with_grid(a.grid),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// bad flags, config or parameters: exit code 2
    #[error("{0}")]
    Usage(String),
    /// numerical or I/O failure: exit code 1
    #[error(transparent)]
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::StateParse { .. } | Error::InvalidParameter { .. } | Error::OrderTooLarge { .. } => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Run(other),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Run(Error::Io(e))
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}

/// What a finished run reports back to `main`.
#[derive(Debug)]
pub struct Outcome {
    pub checks_passed: bool,
}

/// The config after merging file, flags and defaults, as recorded in outputs.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub tool_version: &'static str,
    #[serde(flatten)]
    pub config: RunConfig,
    /// `None` when an experiment sizes its own grid
    pub grid: Option<QuadratureGrid>,
}

fn require_state(value: Option<StateSpec>, flag: &str) -> Result<StateSpec, CliError> {
    value.ok_or_else(|| CliError::Usage(format!("missing --{flag} (or `{}` in the config file)", flag.replace('-', "_"))))
}

fn explicit_grid(cfg: &RunConfig, states: &[&FockVector]) -> Result<QuadratureGrid, CliError> {
    let auto = QuadratureGrid::for_states(states);
    let grid = match (cfg.x_max, cfg.n_points) {
        (None, None) => auto,
        (Some(x), None) => {
            let mut n = ((2.0 * x / DEFAULT_MAX_STEP).ceil() as usize + 1).max(DEFAULT_POINTS);
            if n.is_multiple_of(2) {
                n += 1;
            }
            QuadratureGrid::symmetric(x, n)?
        }
        (x, Some(n)) => QuadratureGrid::symmetric(x.unwrap_or(auto.x_max()), n)?,
    };
    Ok(grid)
}

/// Opens `path`, or stdout when absent.
fn sink(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// `<output>.run.json`, holding the resolved config next to a CSV artifact.
fn sidecar(path: &Path, resolved: &Resolved, extra: serde_json::Value) -> Result<(), CliError> {
    let mut name = path.as_os_str().to_owned();
    name.push(".run.json");
    let file = BufWriter::new(File::create(PathBuf::from(name))?);
    serde_json::to_writer_pretty(file, &json!({ "config": resolved, "diagnostics": extra })).map_err(Error::from)?;
    Ok(())
}

fn write_json_doc(out: Option<&Path>, doc: serde_json::Value) -> Result<(), CliError> {
    let mut w = sink(out)?;
    serde_json::to_writer_pretty(&mut w, &doc).map_err(Error::from)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Writes a CSV artifact; without an output file the config goes to stderr.
fn finish_csv(out: Option<&Path>, resolved: &Resolved, extra: serde_json::Value) -> Result<(), CliError> {
    match out {
        Some(p) => sidecar(p, resolved, extra),
        None => {
            let text = serde_json::to_string(&json!({ "config": resolved, "diagnostics": extra })).map_err(Error::from)?;
            eprintln!("{text}");
            Ok(())
        }
    }
}

pub fn execute(cli: Cli) -> Result<Outcome, CliError> {
    let from_flags = cli.command.to_config();
    let cfg = match &cli.config {
        Some(path) => {
            let file = RunConfig::from_file(path)?;
            if let (Some(a), Some(b)) = (file.command, from_flags.command) {
                if a != b {
                    return Err(CliError::Usage(format!(
                        "config file is for the {a:?} command, not {b:?}"
                    )));
                }
            }
            file.overlay(from_flags)
        }
        None => from_flags,
    };
    match cli.command.kind() {
        CommandKind::Tomogram => cmd_tomogram(cfg),
        CommandKind::Markers => cmd_markers(cfg),
        CommandKind::Moments => cmd_moments(cfg),
        CommandKind::Experiment => cmd_experiment(cfg),
    }
}

fn fill_epsilon(cfg: &mut RunConfig) -> f64 {
    *cfg.epsilon.get_or_insert(DEFAULT_EPSILON)
}

pub fn cmd_tomogram(mut cfg: RunConfig) -> Result<Outcome, CliError> {
    let spec = require_state(cfg.state, "state")?;
    let eps = fill_epsilon(&mut cfg);
    let n_theta = *cfg.n_theta.get_or_insert(DEFAULT_N_THETA);
    let format = *cfg.format.get_or_insert(OutputFormat::Csv);
    if n_theta == 0 {
        return Err(CliError::Usage("--n-theta must be at least 1".into()));
    }
    let state = build_state(&spec, eps)?;
    let grid = explicit_grid(&cfg, &[&state])?;
    let tomo = full_tomogram(&state, n_theta, &grid)?;
    let worst = tomo
        .slices()
        .iter()
        .map(|s| (s.integral() - 1.0).abs())
        .fold(0.0, f64::max);
    eprintln!(
        "{n_theta} slices of {spec} on [{}, {}] x {} points; truncation {}; worst |integral - 1| = {worst:.3e}",
        grid.x_min(),
        grid.x_max(),
        grid.n_points(),
        state.truncation()
    );
    let resolved = Resolved {
        tool_version: env!("CARGO_PKG_VERSION"),
        config: cfg.clone(),
        grid: Some(grid),
    };
    let diagnostics = json!({ "truncation": state.truncation(), "max_normalization_error": worst });
    let out = cfg.output.as_deref();
    match format {
        OutputFormat::Csv => {
            let mut w = sink(out)?;
            tomo.write_csv(&mut w)?;
            w.flush()?;
            finish_csv(out, &resolved, diagnostics)
        }
        OutputFormat::Json => write_json_doc(
            out,
            json!({ "config": resolved, "diagnostics": diagnostics, "tomogram": tomogram_json(&tomo) }),
        ),
    }?;
    Ok(Outcome { checks_passed: true })
}

fn tomogram_json(tomo: &Tomogram) -> serde_json::Value {
    let slices: Vec<_> = tomo
        .slices()
        .iter()
        .map(|s| json!({ "theta": s.theta(), "pdf": s.pdf() }))
        .collect();
    json!({ "grid": tomo.grid(), "slices": slices })
}

pub fn cmd_markers(mut cfg: RunConfig) -> Result<Outcome, CliError> {
    let spec_a = require_state(cfg.state, "state")?;
    let spec_b = require_state(cfg.state_b, "state-b")?;
    let eps = fill_epsilon(&mut cfg);
    let selection = *cfg.marker.get_or_insert(MarkerSelection::All);
    let format = *cfg.format.get_or_insert(OutputFormat::Json);
    let (a, b) = (build_state(&spec_a, eps)?, build_state(&spec_b, eps)?);
    let grid = explicit_grid(&cfg, &[&a, &b])?;
    let kinds = selection.kinds();
    let values = match cfg.theta {
        Some(theta) => kinds
            .iter()
            .map(|&k| marker_at(&a, &b, k, theta, &grid))
            .collect::<crate::Result<Vec<_>>>()?,
        None => {
            let n = *cfg.n_slices.get_or_insert(DEFAULT_SLICES);
            slice_averaged_many(&a, &b, &kinds, n, &grid)?
        }
    };
    let records: Vec<MarkerRecord> = values
        .into_iter()
        .map(|v| MarkerRecord::new(v, spec_a, spec_b))
        .collect();
    let resolved = Resolved {
        tool_version: env!("CARGO_PKG_VERSION"),
        config: cfg.clone(),
        grid: Some(grid),
    };
    let out = cfg.output.as_deref();
    match format {
        OutputFormat::Json => write_json_doc(out, json!({ "config": resolved, "records": records }))?,
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(sink(out)?);
            let mut buf = ryu::Buffer::new();
            let csv_err = |e: csv::Error| CliError::Run(Error::Csv(e.to_string()));
            w.write_record(["kind", "theta", "n_slices", "value", "stateA", "stateB"])
                .map_err(csv_err)?;
            for r in &records {
                let theta = match r.theta {
                    crate::markers::SliceSelector::Theta(t) => buf.format(t).to_owned(),
                    crate::markers::SliceSelector::Averaged => "avg".to_owned(),
                };
                let value = buf.format(r.value).to_owned();
                w.write_record([
                    r.kind.to_string(),
                    theta,
                    r.n_slices.to_string(),
                    value,
                    r.state_a.to_string(),
                    r.state_b.to_string(),
                ])
                .map_err(csv_err)?;
            }
            w.flush()?;
            finish_csv(out, &resolved, json!({}))?;
        }
    }
    Ok(Outcome { checks_passed: true })
}

pub fn cmd_moments(mut cfg: RunConfig) -> Result<Outcome, CliError> {
    let spec = require_state(cfg.state, "state")?;
    let eps = fill_epsilon(&mut cfg);
    let max_order = *cfg.max_order.get_or_insert(DEFAULT_MAX_ORDER);
    let format = *cfg.format.get_or_insert(OutputFormat::Json);
    let state = build_state(&spec, eps)?;
    let grid = explicit_grid(&cfg, &[&state])?;
    let table = MomentTable::compute(&state, Some(spec), max_order, &grid)?;
    for w in &table.warnings {
        eprintln!("warning: {w}");
    }
    let resolved = Resolved {
        tool_version: env!("CARGO_PKG_VERSION"),
        config: cfg.clone(),
        grid: Some(grid),
    };
    let out = cfg.output.as_deref();
    match format {
        OutputFormat::Json => write_json_doc(out, json!({ "config": resolved, "moments": table }))?,
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(sink(out)?);
            let csv_err = |e: csv::Error| CliError::Run(Error::Csv(e.to_string()));
            w.write_record(["k", "l", "re", "im"]).map_err(csv_err)?;
            let mut buf = ryu::Buffer::new();
            for (&(k, l), v) in &table.entries {
                let re = buf.format(v.re).to_owned();
                let im = buf.format(v.im).to_owned();
                w.write_record([k.to_string(), l.to_string(), re, im]).map_err(csv_err)?;
            }
            w.flush()?;
            finish_csv(out, &resolved, json!({ "warnings": table.warnings }))?;
        }
    }
    Ok(Outcome { checks_passed: true })
}

pub fn cmd_experiment(mut cfg: RunConfig) -> Result<Outcome, CliError> {
    let name = cfg
        .experiment
        .ok_or_else(|| CliError::Usage("missing experiment name (fock-distances, pacs-markers, gain-variance, svs-crossover)".into()))?;
    let format = *cfg.format.get_or_insert(OutputFormat::Json);
    if cfg.epsilon.is_some_and(|e| e != DEFAULT_EPSILON) {
        return Err(CliError::Usage("experiments run at the default epsilon".into()));
    }
    cfg.epsilon = Some(DEFAULT_EPSILON);
    let grid = match (cfg.x_max, cfg.n_points) {
        (None, None) => None,
        _ => Some(explicit_grid(&cfg, &[])?),
    };
    let report = match name {
        ExperimentName::FockDistances => {
            let n_max = *cfg.n_max.get_or_insert(FockDistanceParams::default().n_max);
            run_fock_distance_experiment(&FockDistanceParams { n_max, grid })?
        }
        ExperimentName::PacsMarkers => {
            let reference = *cfg.reference.get_or_insert(ReferenceArg::BetaOpt);
            let n_slices = *cfg.n_slices.get_or_insert(DEFAULT_SLICES);
            run_pacs_marker_experiment(&PacsMarkerParams {
                reference: reference.into(),
                n_slices,
                grid,
                ..Default::default()
            })?
        }
        ExperimentName::GainVariance => run_gain_variance_experiment(&GainVarianceParams {
            grid,
            ..Default::default()
        })?,
        ExperimentName::SvsCrossover => run_svs_crossover_experiment(&SvsCrossoverParams {
            grid,
            ..Default::default()
        })?,
    };
    let resolved = Resolved {
        tool_version: env!("CARGO_PKG_VERSION"),
        config: cfg.clone(),
        grid,
    };
    write_experiment(&report, &resolved, cfg.output.as_deref(), format)?;
    eprint!("{}", report.render_checks());
    let failed: Vec<_> = report.failed_checks().collect();
    if !failed.is_empty() {
        eprintln!("{} of {} checks failed", failed.len(), report.checks.len());
    }
    Ok(Outcome {
        checks_passed: failed.is_empty(),
    })
}

/// JSON report to `out` (or stdout); with an output file the curves are
/// also written as `<stem>.<label>.csv` next to it.
fn write_experiment(
    report: &ExperimentReport,
    resolved: &Resolved,
    out: Option<&Path>,
    format: OutputFormat,
) -> Result<(), CliError> {
    match (format, out) {
        (OutputFormat::Json, _) => write_json_doc(out, json!({ "config": resolved, "report": report }))?,
        (OutputFormat::Csv, None) => {
            return Err(CliError::Usage("csv output of an experiment needs --output".into()));
        }
        (OutputFormat::Csv, Some(_)) => {}
    }
    if let Some(path) = out {
        let stem = path.with_extension("");
        report.write_curves_csv(&stem)?;
        if format == OutputFormat::Csv {
            sidecar(path, resolved, serde_json::to_value(report).map_err(Error::from)?)?;
        }
    }
    Ok(())
}
