//! Experiment runners: parameter sweeps over markers, moments and variances,
//! with curve fits and pass/fail checks collected into one report.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::markers::{marker_at, slice_averaged_many, MarkerKind, DEFAULT_SLICES};
use crate::moments::{gain, quadrature_variance};
use crate::states::{build_state, fidelity_with_coherent, FockVector, StateSpec, DEFAULT_EPSILON};
use crate::tomogram::{quadrature_amplitude, QuadratureGrid, TomogramSlice};

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Amplitude of the coherent state closest (in fidelity) to `|alpha, m>`.
pub fn beta_opt(alpha_mod: f64, m: usize) -> f64 {
    let a = alpha_mod;
    if a == 0.0 {
        return (m as f64).sqrt();
    }
    0.5 * a * (1.0 + (1.0 + 4.0 * m as f64 / (a * a)).sqrt())
}

/// Maximizer of `|<beta|alpha,m>|^2` over real `beta` on `[0, beta_max]`
/// sampled with `step`; `alpha` real and non-negative.
pub fn fidelity_argmax(alpha: f64, m: usize, step: f64, beta_max: f64) -> Result<f64> {
    let state = build_state(&StateSpec::pacs(alpha, m), DEFAULT_EPSILON)?;
    let n = (beta_max / step).ceil() as usize;
    let (best, _) = (0..=n)
        .into_par_iter()
        .map(|i| {
            let beta = i as f64 * step;
            (beta, fidelity_with_coherent(&state, Complex64::new(beta, 0.0)))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((0.0, f64::NEG_INFINITY), |acc, (b, f)| if f > acc.1 { (b, f) } else { acc });
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitModel {
    /// `c1 ln(x) + c2`
    LogLinear,
    /// `c x^p`, coefficients `[c, p]`
    PowerLaw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: FitModel,
    pub coefficients: Vec<f64>,
    /// in the units of `y`, over the fitted points only
    pub rms_residual: f64,
    pub x_range: (f64, f64),
}

impl FitResult {
    pub fn eval(&self, x: f64) -> f64 {
        let c = &self.coefficients;
        match self.model {
            FitModel::LogLinear => c[0] * x.ln() + c[1],
            FitModel::PowerLaw => c[0] * x.powf(c[1]),
        }
    }
}

/// Least squares in transformed coordinates: semilog-x for `LogLinear`,
/// log-log for `PowerLaw`.
pub fn fit_curve(xs: &[f64], ys: &[f64], model: FitModel) -> Result<FitResult> {
    if xs.len() != ys.len() {
        return Err(Error::DegenerateDesign(format!("{} x values, {} y values", xs.len(), ys.len())));
    }
    if xs.len() < 4 {
        return Err(Error::TooFewPoints { needed: 4, got: xs.len() });
    }
    if !xs.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::DegenerateDesign("x values must be strictly increasing".into()));
    }
    if xs[0] <= 0.0 {
        return Err(Error::DegenerateDesign("x values must be positive".into()));
    }
    let u: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let v: Vec<f64> = match model {
        FitModel::LogLinear => ys.to_vec(),
        FitModel::PowerLaw => {
            if ys.iter().any(|y| *y <= 0.0) {
                return Err(Error::DegenerateDesign("power-law fit needs positive y".into()));
            }
            ys.iter().map(|y| y.ln()).collect()
        }
    };
    let n = u.len() as f64;
    let (mu, mv) = (u.iter().sum::<f64>() / n, v.iter().sum::<f64>() / n);
    let suu: f64 = u.iter().map(|a| (a - mu) * (a - mu)).sum();
    let suv: f64 = u.iter().zip(&v).map(|(a, b)| (a - mu) * (b - mv)).sum();
    let slope = suv / suu;
    let intercept = mv - slope * mu;
    let coefficients = match model {
        FitModel::LogLinear => vec![slope, intercept],
        FitModel::PowerLaw => vec![intercept.exp(), slope],
    };
    let mut fit = FitResult {
        model,
        coefficients,
        rms_residual: 0.0,
        x_range: (xs[0], xs[xs.len() - 1]),
    };
    let ss: f64 = xs.iter().zip(ys).map(|(x, y)| (fit.eval(*x) - y).powi(2)).sum();
    fit.rms_residual = (ss / n).sqrt();
    Ok(fit)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelledFit {
    pub label: String,
    #[serde(flatten)]
    pub fit: FitResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub description: String,
    pub passed: bool,
    pub measured: f64,
    pub expected: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub parameters: BTreeMap<String, Value>,
    pub curves: Vec<Curve>,
    pub fits: Vec<LabelledFit>,
    pub checks: Vec<Check>,
}

impl ExperimentReport {
    fn new(name: &str) -> Self {
        ExperimentReport {
            name: name.into(),
            parameters: BTreeMap::new(),
            curves: Vec::new(),
            fits: Vec::new(),
            checks: Vec::new(),
        }
    }

    fn param(&mut self, key: &str, value: impl Serialize) {
        self.parameters
            .insert(key.into(), serde_json::to_value(value).expect("parameter serializes"));
    }

    fn curve(&mut self, label: impl Into<String>, x: Vec<f64>, y: Vec<f64>) {
        self.curves.push(Curve { label: label.into(), x, y });
    }

    fn fit(&mut self, label: impl Into<String>, fit: FitResult) {
        self.fits.push(LabelledFit { label: label.into(), fit });
    }

    /// `|measured - expected| <= tolerance`
    fn check_close(&mut self, description: impl Into<String>, measured: f64, expected: f64, tolerance: f64) {
        self.checks.push(Check {
            description: description.into(),
            passed: (measured - expected).abs() <= tolerance,
            measured,
            expected,
            tolerance,
        });
    }

    /// A boolean claim; `measured` carries the deciding number.
    fn check_that(&mut self, description: impl Into<String>, passed: bool, measured: f64, expected: f64) {
        self.checks.push(Check {
            description: description.into(),
            passed,
            measured,
            expected,
            tolerance: 0.0,
        });
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed_checks(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn find_check(&self, prefix: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.description.starts_with(prefix))
    }

    pub fn find_curve(&self, label: &str) -> Option<&Curve> {
        self.curves.iter().find(|c| c.label == label)
    }

    pub fn find_fit(&self, label: &str) -> Option<&FitResult> {
        self.fits.iter().find(|f| f.label == label).map(|f| &f.fit)
    }

    /// Plain-text table of the checks.
    pub fn render_checks(&self) -> String {
        let width = self.checks.iter().map(|c| c.description.len()).max().unwrap_or(0);
        let mut out = String::new();
        for c in &self.checks {
            let _ = writeln!(
                out,
                "{}  {:<width$}  measured={:<14.8} expected={:<14.8} tol={:e}",
                if c.passed { "PASS" } else { "FAIL" },
                c.description,
                c.measured,
                c.expected,
                c.tolerance,
            );
        }
        out
    }

    /// One `x,<label>` CSV per curve, named `<stem>.<label>.csv` next to `stem`.
    pub fn write_curves_csv(&self, stem: &Path) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        for curve in &self.curves {
            let safe: String = curve
                .label
                .chars()
                .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
                .collect();
            let mut name = stem.as_os_str().to_owned();
            name.push(format!(".{safe}.csv"));
            let path = PathBuf::from(name);
            let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Csv(e.to_string()))?;
            w.write_record(["x", curve.label.as_str()])
                .map_err(|e| Error::Csv(e.to_string()))?;
            let mut buf = ryu::Buffer::new();
            for (x, y) in curve.x.iter().zip(&curve.y) {
                let xs = buf.format(*x).to_owned();
                w.write_record([xs.as_str(), buf.format(*y)])
                    .map_err(|e| Error::Csv(e.to_string()))?;
            }
            w.flush()?;
            written.push(path);
        }
        Ok(written)
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }
}

fn strictly_decreasing(ys: &[f64]) -> bool {
    ys.windows(2).all(|w| w[1] < w[0])
}

fn relative_difference(a: f64, b: f64) -> f64 {
    (b - a) / (b + a)
}

fn state(spec: StateSpec) -> Result<FockVector> {
    build_state(&spec, DEFAULT_EPSILON)
}

// ---------------------------------------------------------------- Fock

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FockDistanceParams {
    pub n_max: usize,
    /// defaults to a grid wide enough for `|n_max>`
    pub grid: Option<QuadratureGrid>,
}

impl Default for FockDistanceParams {
    fn default() -> Self {
        FockDistanceParams { n_max: 100, grid: None }
    }
}

/// Markers between the vacuum and `|n>`, `n = 1..=n_max`, at `theta = 0`.
/// W1 gets a power fit over `[n_max/2, n_max]`; DKL and DB get log fits over
/// `[10, min(n_max, 50)]`.
pub fn run_fock_distance_experiment(params: &FockDistanceParams) -> Result<ExperimentReport> {
    let n_max = params.n_max;
    if !(2..=200).contains(&n_max) {
        return Err(Error::InvalidParameter {
            name: "n_max",
            reason: format!("{n_max} outside 2..=200"),
        });
    }
    let vacuum = state(StateSpec::fock(0))?;
    let top = state(StateSpec::fock(n_max))?;
    let grid = params.grid.unwrap_or_else(|| QuadratureGrid::for_states(&[&top]));

    let ns: Vec<usize> = (1..=n_max).collect();
    let rows = ns
        .par_iter()
        .map(|&n| {
            let fock = state(StateSpec::fock(n))?;
            MarkerKind::ALL
                .iter()
                .map(|&k| marker_at(&vacuum, &fock, k, 0.0, &grid).map(|v| v.value))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut report = ExperimentReport::new("fock-distances");
    report.param("n_max", n_max);
    report.param("theta", 0.0);
    report.param("grid", grid);
    let xs: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    for (k, kind) in MarkerKind::ALL.iter().enumerate() {
        report.curve(kind.to_string(), xs.clone(), rows.iter().map(|r| r[k]).collect());
    }

    let w1 = &report.curves[0].y.clone();
    let lo = n_max / 2;
    let power = if n_max - lo + 1 >= 4 {
        Some(fit_curve(&xs[lo - 1..], &w1[lo - 1..], FitModel::PowerLaw)?)
    } else {
        None
    };
    let log_hi = n_max.min(50);
    let log_fits = if log_hi >= 13 {
        let dkl = fit_curve(&xs[9..log_hi], &report.curves[1].y[9..log_hi], FitModel::LogLinear)?;
        let db = fit_curve(&xs[9..log_hi], &report.curves[2].y[9..log_hi], FitModel::LogLinear)?;
        Some((dkl, db))
    } else {
        None
    };

    let one = &rows[0];
    report.check_close("W1(vacuum, |1>) = 1/sqrt(pi)", one[0], 1.0 / PI.sqrt(), 1e-5);
    report.check_close("DKL(vacuum, |1>) = ln 2 + gamma", one[1], 2f64.ln() + EULER_GAMMA, 1e-5);
    report.check_close("DB(vacuum, |1>) = ln(pi/2)/2", one[2], 0.5 * (PI / 2.0).ln(), 1e-5);
    if let Some(power) = power {
        report.check_close("W1 grows as n^(1/2) for large n: exponent", power.coefficients[1], 0.5, 0.05);
        report.fit("W1", power);
    }
    if let Some((dkl, db)) = log_fits {
        report.check_close("DKL log-fit slope near 0.478", dkl.coefficients[0], 0.478, 0.15 * 0.478);
        report.check_close("DB log-fit slope near 0.251", db.coefficients[0], 0.251, 0.15 * 0.251);
        report.fit("DKL", dkl);
        report.fit("DB", db);
    }
    Ok(report)
}

// ---------------------------------------------------------------- PACS markers

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    /// `|beta_opt>`
    BetaOpt,
    /// `|g_m(alpha) alpha>`
    GainAmplified,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PacsMarkerParams {
    pub alphas: Vec<f64>,
    pub m_values: Vec<usize>,
    pub reference: Reference,
    pub n_slices: usize,
    pub grid: Option<QuadratureGrid>,
}

impl Default for PacsMarkerParams {
    fn default() -> Self {
        PacsMarkerParams {
            alphas: (0..7).map(|i| 0.5 + 0.25 * i as f64).collect(),
            m_values: vec![1, 2],
            reference: Reference::BetaOpt,
            n_slices: DEFAULT_SLICES,
            grid: None,
        }
    }
}

fn check_alphas(alphas: &[f64]) -> Result<()> {
    if alphas.is_empty() || !alphas.iter().all(|a| *a > 0.0) || !alphas.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::InvalidParameter {
            name: "alphas",
            reason: "need a non-empty, strictly ascending list of positive amplitudes".into(),
        });
    }
    Ok(())
}

fn check_m_values(m_values: &[usize]) -> Result<()> {
    if m_values.is_empty() || m_values.iter().any(|m| !(1..=2).contains(m)) {
        return Err(Error::InvalidParameter {
            name: "m_values",
            reason: "photon additions must be drawn from {1, 2}".into(),
        });
    }
    Ok(())
}

/// Slice-averaged markers between `|alpha, m>` and a reference coherent
/// state. The reference plays `f` in the Kullback-Leibler divergence.
///
/// Both references are always evaluated; `reference` selects which one
/// the trend checks run on.
pub fn run_pacs_marker_experiment(params: &PacsMarkerParams) -> Result<ExperimentReport> {
    check_alphas(&params.alphas)?;
    check_m_values(&params.m_values)?;
    let mut report = ExperimentReport::new("pacs-markers");
    report.param("alphas", &params.alphas);
    report.param("m_values", &params.m_values);
    report.param("reference", params.reference);
    report.param("n_slices", params.n_slices);

    struct Point {
        beta_opt: f64,
        gain_amp: f64,
        vs_opt: Vec<f64>,
        vs_gain: Vec<f64>,
    }

    // one grid for the whole sweep, sized for its widest member
    let grid = match &params.grid {
        Some(g) => *g,
        None => {
            let a_max = *params.alphas.last().unwrap();
            let m_max = *params.m_values.iter().max().unwrap();
            let widest = [
                state(StateSpec::pacs(a_max, m_max))?,
                state(StateSpec::coherent(beta_opt(a_max, m_max)))?,
            ];
            QuadratureGrid::for_states(&[&widest[0], &widest[1]])
        }
    };
    report.param("grid", grid);

    let jobs: Vec<(usize, f64)> = params
        .m_values
        .iter()
        .flat_map(|&m| params.alphas.iter().map(move |&a| (m, a)))
        .collect();
    let points = jobs
        .par_iter()
        .map(|&(m, a)| -> Result<Point> {
            let pacs = state(StateSpec::pacs(a, m))?;
            let b_opt = beta_opt(a, m);
            let gain_amp = gain(Complex64::new(a, 0.0), m, &grid)? * a;
            let opt = state(StateSpec::coherent(b_opt))?;
            let amp = state(StateSpec::coherent(gain_amp))?;
            let values = |reference: &FockVector| -> Result<Vec<f64>> {
                Ok(slice_averaged_many(reference, &pacs, &MarkerKind::ALL, params.n_slices, &grid)?
                    .iter()
                    .map(|v| v.value)
                    .collect())
            };
            Ok(Point {
                beta_opt: b_opt,
                gain_amp,
                vs_opt: values(&opt)?,
                vs_gain: values(&amp)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let n_a = params.alphas.len();
    let mut by_m: BTreeMap<usize, &[Point]> = BTreeMap::new();
    for (i, &m) in params.m_values.iter().enumerate() {
        by_m.insert(m, &points[i * n_a..(i + 1) * n_a]);
    }

    for (&m, pts) in &by_m {
        report.curve(format!("beta_opt m={m}"), params.alphas.clone(), pts.iter().map(|p| p.beta_opt).collect());
        report.curve(
            format!("gain_amplified m={m}"),
            params.alphas.clone(),
            pts.iter().map(|p| p.gain_amp).collect(),
        );
        for (k, kind) in MarkerKind::ALL.iter().enumerate() {
            report.curve(
                format!("{kind} vs beta_opt m={m}"),
                params.alphas.clone(),
                pts.iter().map(|p| p.vs_opt[k]).collect(),
            );
            report.curve(
                format!("{kind} vs gain_amplified m={m}"),
                params.alphas.clone(),
                pts.iter().map(|p| p.vs_gain[k]).collect(),
            );
        }
    }

    let chosen = |p: &Point, k: usize| match params.reference {
        Reference::BetaOpt => p.vs_opt[k],
        Reference::GainAmplified => p.vs_gain[k],
    };
    let ref_name = match params.reference {
        Reference::BetaOpt => "beta_opt",
        Reference::GainAmplified => "gain_amplified",
    };

    if let (Some(m1), Some(m2)) = (by_m.get(&1), by_m.get(&2)) {
        for (k, kind) in MarkerKind::ALL.iter().enumerate() {
            let rel: Vec<f64> = m1
                .iter()
                .zip(m2.iter())
                .map(|(a, b)| relative_difference(chosen(a, k), chosen(b, k)))
                .collect();
            report.curve(format!("{kind} relative difference vs {ref_name}"), params.alphas.clone(), rel);
            let gap = m1
                .iter()
                .zip(m2.iter())
                .map(|(a, b)| chosen(b, k) - chosen(a, k))
                .fold(f64::INFINITY, f64::min);
            report.check_that(
                format!("{kind} vs {ref_name} increases from m=1 to m=2 at every |alpha|: smallest gap"),
                gap > 0.0,
                gap,
                0.0,
            );
        }
        let last = n_a - 1;
        let rel = |k: usize| relative_difference(chosen(&m1[last], k), chosen(&m2[last], k));
        let (dkl_rel, w1_rel) = (rel(1), rel(0));
        report.check_that(
            format!(
                "at |alpha|={} DKL relative difference exceeds W1's: DKL minus W1",
                params.alphas[last]
            ),
            dkl_rel > w1_rel,
            dkl_rel - w1_rel,
            0.0,
        );
    }

    for (&m, pts) in &by_m {
        for (k, kind) in MarkerKind::ALL.iter().enumerate() {
            let ys: Vec<f64> = pts.iter().map(|p| chosen(p, k)).collect();
            let worst = ys.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
            report.check_that(
                format!("{kind} vs {ref_name} decreases in |alpha| for m={m}: largest step"),
                strictly_decreasing(&ys),
                worst,
                0.0,
            );
        }
        let first = &pts[0];
        let a0 = params.alphas[0];
        if a0 <= 1.0 {
            report.check_that(
                format!("at |alpha|={a0}, m={m}: DKL vs beta_opt below DKL vs gain_amplified: difference"),
                first.vs_opt[1] < first.vs_gain[1],
                first.vs_opt[1] - first.vs_gain[1],
                0.0,
            );
        }
        let last = &pts[n_a - 1];
        let a_last = params.alphas[n_a - 1];
        if a_last >= 2.0 {
            let rel = (last.vs_opt[1] - last.vs_gain[1]).abs() / last.vs_opt[1].max(last.vs_gain[1]);
            report.check_close(
                format!("at |alpha|={a_last}, m={m}: both references give DKL within 10%"),
                rel,
                0.0,
                0.1,
            );
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------- gain & variance

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GainVarianceParams {
    pub alphas: Vec<f64>,
    pub m_values: Vec<usize>,
    pub grid: Option<QuadratureGrid>,
}

impl Default for GainVarianceParams {
    fn default() -> Self {
        GainVarianceParams {
            alphas: (0..=15).map(|i| 0.5 + 0.1 * i as f64).collect(),
            m_values: vec![1, 2],
            grid: None,
        }
    }
}

/// Normalized `X` variance of `|alpha, 1>` minus one.
fn x_excess(alpha: f64, grid: &QuadratureGrid) -> Result<f64> {
    let s = state(StateSpec::pacs(alpha, 1))?;
    Ok(quadrature_variance(&s, 0.0, grid)?.normalized_variance - 1.0)
}

/// Amplitude where `|alpha, 1>` starts to squeeze along `X`, by bisection on `[lo, hi]`.
pub fn squeezing_onset(lo: f64, hi: f64, grid: &QuadratureGrid) -> Result<f64> {
    let (mut lo, mut hi) = (lo, hi);
    let mut f_lo = x_excess(lo, grid)?;
    if f_lo * x_excess(hi, grid)? > 0.0 {
        return Err(Error::InvalidParameter {
            name: "bracket",
            reason: format!("variance does not cross 1 on [{lo}, {hi}]"),
        });
    }
    while hi - lo > 1e-6 {
        let mid = 0.5 * (lo + hi);
        let f_mid = x_excess(mid, grid)?;
        if f_mid * f_lo <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
            f_lo = f_mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Gain `g_m(|alpha|)` and normalized `X`/`P` variances of `|alpha, m>`,
/// all read from tomogram slices; the gain is cross-checked against the
/// Fock-basis expectation value.
pub fn run_gain_variance_experiment(params: &GainVarianceParams) -> Result<ExperimentReport> {
    check_alphas(&params.alphas)?;
    check_m_values(&params.m_values)?;
    let grid = match &params.grid {
        Some(g) => *g,
        None => {
            let a_max = *params.alphas.last().unwrap();
            let m_max = *params.m_values.iter().max().unwrap();
            QuadratureGrid::for_states(&[&state(StateSpec::pacs(a_max, m_max))?])
        }
    };
    let mut report = ExperimentReport::new("gain-variance");
    report.param("alphas", &params.alphas);
    report.param("m_values", &params.m_values);
    report.param("grid", grid);

    for &m in &params.m_values {
        let rows = params
            .alphas
            .par_iter()
            .map(|&a| -> Result<[f64; 4]> {
                let s = state(StateSpec::pacs(a, m))?;
                let g = gain(Complex64::new(a, 0.0), m, &grid)?;
                let oracle = s.normal_ordered(0, 1).norm() / a;
                let vx = quadrature_variance(&s, 0.0, &grid)?.normalized_variance;
                let vp = quadrature_variance(&s, PI / 2.0, &grid)?.normalized_variance;
                Ok([g, oracle, vx, vp])
            })
            .collect::<Result<Vec<_>>>()?;
        let col = |i: usize| rows.iter().map(|r| r[i]).collect::<Vec<_>>();
        let (gains, oracle, vx, vp) = (col(0), col(1), col(2), col(3));

        let worst_step = gains.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
        report.check_that(
            format!("gain g_{m} strictly decreasing in |alpha|: largest step"),
            strictly_decreasing(&gains),
            worst_step,
            0.0,
        );
        let worst_oracle = gains.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        report.check_close(format!("gain g_{m} matches Fock-basis <a>: worst deviation"), worst_oracle, 0.0, 1e-6);
        let min_p = vp.iter().copied().fold(f64::INFINITY, f64::min);
        report.check_that(format!("no squeezing along P for m={m}: smallest variance"), min_p > 1.0, min_p, 1.0);
        for &target in &[1.5, 2.0] {
            if let Some(i) = params.alphas.iter().position(|a| (a - target).abs() < 1e-9) {
                report.check_that(
                    format!("X squeezed at |alpha|={target}, m={m}: variance"),
                    vx[i] < 1.0,
                    vx[i],
                    1.0,
                );
            }
        }
        if m == 1 {
            if let Some(i) = params.alphas.iter().position(|a| (a - 1.0).abs() < 1e-9) {
                report.check_close("X variance of |1,1> equals the coherent value", vx[i], 1.0, 1e-3);
            }
        }

        report.curve(format!("gain m={m}"), params.alphas.clone(), gains);
        report.curve(format!("gain oracle m={m}"), params.alphas.clone(), oracle);
        report.curve(format!("var_x m={m}"), params.alphas.clone(), vx);
        report.curve(format!("var_p m={m}"), params.alphas.clone(), vp);
    }

    if params.m_values.contains(&1) {
        let small = gain(Complex64::new(0.05, 0.0), 1, &grid)?;
        report.check_close("g_1(0.05) approaches 2 (relative)", (small - 2.0).abs() / 2.0, 0.0, 0.02);
        let onset = squeezing_onset(0.5, 1.5, &grid)?;
        report.check_close("X squeezing of |alpha,1> sets in at |alpha| = 1", onset, 1.0, 0.02);
    }
    Ok(report)
}

// ---------------------------------------------------------------- SVS crossover

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SvsCrossoverParams {
    pub r_values: Vec<f64>,
    /// lower end of the flatness window
    pub flat_from: f64,
    pub grid: Option<QuadratureGrid>,
}

impl Default for SvsCrossoverParams {
    fn default() -> Self {
        SvsCrossoverParams {
            r_values: (0..=75).map(|i| 0.05 + 0.01 * i as f64).collect(),
            flat_from: 0.35,
            grid: None,
        }
    }
}

/// First sign change of `a - b`, linearly interpolated.
pub fn crossing(xs: &[f64], a: &[f64], b: &[f64]) -> Option<f64> {
    let d: Vec<f64> = a.iter().zip(b).map(|(p, q)| p - q).collect();
    for i in 0..d.len().saturating_sub(1) {
        if d[i] == 0.0 {
            return Some(xs[i]);
        }
        if d[i] * d[i + 1] < 0.0 {
            return Some(xs[i] + (xs[i + 1] - xs[i]) * d[i] / (d[i] - d[i + 1]));
        }
    }
    None
}

/// `(max - min) / mean`.
pub fn flatness(ys: &[f64]) -> f64 {
    let max = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    (max - min) / mean
}

/// DKL between squeezed vacuum (as `f`) and its one- and two-photon-added
/// versions at `theta = 0`, swept over `r`.
pub fn run_svs_crossover_experiment(params: &SvsCrossoverParams) -> Result<ExperimentReport> {
    let rs = &params.r_values;
    if rs.len() < 2 || !rs.windows(2).all(|w| w[0] < w[1]) || rs[0] <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "r_values",
            reason: "need at least two strictly ascending positive values".into(),
        });
    }
    let r_max = *rs.last().unwrap();
    let grid = match &params.grid {
        Some(g) => *g,
        None => QuadratureGrid::for_states(&[&state(StateSpec::pasvs(r_max, 0.0, 2))?]),
    };
    let mut report = ExperimentReport::new("svs-crossover");
    report.param("r_values", rs);
    report.param("flat_from", params.flat_from);
    report.param("theta", 0.0);
    report.param("grid", grid);

    let rows = rs
        .par_iter()
        .map(|&r| -> Result<[f64; 4]> {
            let svs = state(StateSpec::svs(r, 0.0))?;
            let mut out = [0.0; 4];
            for (i, m) in [1usize, 2].into_iter().enumerate() {
                let added = state(StateSpec::pasvs(r, 0.0, m))?;
                out[i] = marker_at(&svs, &added, MarkerKind::Dkl, 0.0, &grid)?.value;
                out[2 + i] = marker_at(&svs, &added, MarkerKind::Db, 0.0, &grid)?.value;
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let col = |i: usize| rows.iter().map(|r| r[i]).collect::<Vec<_>>();
    let (dkl1, dkl2) = (col(0), col(1));

    match crossing(rs, &dkl1, &dkl2) {
        Some(r) => report.check_close("DKL curves for m=1 and m=2 cross near r = 0.24", r, 0.24, 0.05),
        None => report.check_that("DKL curves for m=1 and m=2 cross near r = 0.24", false, f64::NAN, 0.24),
    }
    let window: Vec<usize> = (0..rs.len()).filter(|&i| rs[i] >= params.flat_from - 1e-12).collect();
    if window.len() >= 2 {
        let pick = |ys: &[f64]| window.iter().map(|&i| ys[i]).collect::<Vec<_>>();
        let (f1, f2) = (flatness(&pick(&dkl1)), flatness(&pick(&dkl2)));
        report.check_that(
            format!("m=1 DKL flatter than m=2 on r >= {}: m=1 minus m=2 flatness", params.flat_from),
            f1 < f2,
            f1 - f2,
            0.0,
        );
    }
    report.check_close("small-r limit of m=1 DKL is ln 2 + gamma", dkl1[0], 2f64.ln() + EULER_GAMMA, 1e-3);

    report.curve("DKL m=1", rs.clone(), dkl1);
    report.curve("DKL m=2", rs.clone(), dkl2);
    report.curve("DB m=1", rs.clone(), col(2));
    report.curve("DB m=2", rs.clone(), col(3));
    Ok(report)
}

// ---------------------------------------------------------------- structure

/// Interior zero-intensity lines of a slice: strict local minima below
/// `1e-4` of the peak with at least 1% of the peak on either side.
pub fn dark_cuts(slice: &TomogramSlice) -> usize {
    let pdf = slice.pdf();
    let n = pdf.len();
    let peak = pdf.iter().copied().fold(0.0, f64::max);
    let bright = 1e-2 * peak;
    let mut right_max = vec![0.0_f64; n + 1];
    for i in (0..n).rev() {
        right_max[i] = right_max[i + 1].max(pdf[i]);
    }
    let mut left_max = 0.0_f64;
    let mut count = 0;
    for i in 1..n.saturating_sub(1) {
        left_max = left_max.max(pdf[i - 1]);
        let is_min = pdf[i] <= pdf[i - 1] && pdf[i] < pdf[i + 1];
        if is_min && pdf[i] < 1e-4 * peak && left_max >= bright && right_max[i + 1] >= bright {
            count += 1;
        }
    }
    count
}

/// Wigner function with `x + i p = sqrt(2) alpha`, from the position
/// amplitude: `W = (1/pi) int psi*(x + y) psi(x - y) e^{2ipy} dy`.
pub fn wigner_eval(state: &FockVector, x: f64, p: f64) -> f64 {
    let grid = QuadratureGrid::for_states(&[state]);
    let half = grid.x_max();
    let h = grid.step();
    let n = (half / h).ceil() as usize;
    let mut total = 0.0;
    for i in 0..=2 * n {
        let y = -half + i as f64 * h;
        let a = quadrature_amplitude(state, x + y, 0.0).conj();
        let b = quadrature_amplitude(state, x - y, 0.0);
        let weight = if i == 0 || i == 2 * n { 0.5 } else { 1.0 };
        total += weight * (a * b * Complex64::from_polar(1.0, 2.0 * p * y)).re;
    }
    total * h / PI
}

/// Sign changes of `W(r, 0)` over `r` in `(0, r_max]`, ignoring values
/// below `1e-12` in magnitude.
pub fn radial_sign_changes(state: &FockVector, r_max: f64, n_samples: usize) -> usize {
    let values: Vec<f64> = (1..=n_samples)
        .into_par_iter()
        .map(|i| wigner_eval(state, r_max * i as f64 / n_samples as f64, 0.0))
        .collect();
    let mut last = 0.0_f64;
    let mut changes = 0;
    for v in values.into_iter().filter(|v| v.abs() > 1e-12) {
        if last != 0.0 && v.signum() != last.signum() {
            changes += 1;
        }
        last = v;
    }
    changes
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tomogram::slice;

    #[test]
    fn beta_opt_values() {
        assert!((beta_opt(1.0, 1) - (1.0 + 5f64.sqrt()) / 2.0).abs() < 1e-12);
        assert!((beta_opt(0.5, 2) - 0.25 * (1.0 + 33f64.sqrt())).abs() < 1e-12);
        assert!((beta_opt(1e4, 1) / 1e4 - 1.0).abs() < 1e-7);
        assert!((beta_opt(1e-9, 2) - 2f64.sqrt()).abs() < 1e-8);
        assert_eq!(beta_opt(0.0, 3), 3f64.sqrt());
    }

    #[test]
    fn beta_opt_maximizes_fidelity() {
        for &a in &[0.5, 1.0] {
            for m in 1..=2 {
                let best = fidelity_argmax(a, m, 1e-3, 4.0).unwrap();
                assert!((best - beta_opt(a, m)).abs() <= 1e-3 + 1e-12, "a={a} m={m}: {best}");
            }
        }
    }

    #[test]
    fn exact_fits() {
        let xs: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 0.5 * x.ln() + 1.0).collect();
        let f = fit_curve(&xs, &ys, FitModel::LogLinear).unwrap();
        assert!((f.coefficients[0] - 0.5).abs() < 1e-10 && (f.coefficients[1] - 1.0).abs() < 1e-10);
        assert!(f.rms_residual < 1e-12);
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x.sqrt()).collect();
        let f = fit_curve(&xs, &ys, FitModel::PowerLaw).unwrap();
        assert!((f.coefficients[0] - 2.0).abs() < 1e-10 && (f.coefficients[1] - 0.5).abs() < 1e-10);
        assert_eq!(f.x_range, (1.0, 10.0));
    }

    #[test]
    fn fit_rejects_bad_designs() {
        assert!(matches!(
            fit_curve(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], FitModel::LogLinear),
            Err(Error::TooFewPoints { .. })
        ));
        assert!(matches!(
            fit_curve(&[1.0, 2.0, 2.0, 3.0], &[1.0; 4], FitModel::LogLinear),
            Err(Error::DegenerateDesign(_))
        ));
        assert!(matches!(
            fit_curve(&[1.0, 2.0, 3.0, 4.0], &[1.0, -1.0, 1.0, 1.0], FitModel::PowerLaw),
            Err(Error::DegenerateDesign(_))
        ));
    }

    #[test]
    fn crossing_and_flatness() {
        let xs = [0.0, 1.0, 2.0];
        assert_eq!(crossing(&xs, &[0.0, 1.0, 2.0], &[1.0, 1.5, 1.0]), Some(1.0 + 0.5 / 1.5));
        assert_eq!(crossing(&xs, &[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0]), None);
        assert_eq!(flatness(&[2.0, 2.0, 2.0]), 0.0);
        assert!((flatness(&[1.0, 2.0, 3.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn wigner_spot_values() {
        let vac = build_state(&StateSpec::fock(0), 1e-12).unwrap();
        assert!((wigner_eval(&vac, 0.0, 0.0) - 1.0 / PI).abs() < 1e-10);
        let one = build_state(&StateSpec::fock(1), 1e-12).unwrap();
        assert!((wigner_eval(&one, 0.0, 0.0) + 1.0 / PI).abs() < 1e-10);
        // displaced vacuum: Gaussian centred at (sqrt(2) Re alpha, sqrt(2) Im alpha)
        let cs = build_state(&StateSpec::coherent(Complex64::new(0.5, -0.3)), 1e-14).unwrap();
        let (x0, p0) = (0.5 * 2f64.sqrt(), -0.3 * 2f64.sqrt());
        let (x, p) = (0.2, 0.1);
        let expected = (-(x - x0) * (x - x0) - (p - p0) * (p - p0)).exp() / PI;
        assert!((wigner_eval(&cs, x, p) - expected).abs() < 1e-7);
    }

    #[test]
    fn fock_five_has_five_rings() {
        let s = build_state(&StateSpec::fock(5), 1e-12).unwrap();
        assert_eq!(radial_sign_changes(&s, 5.0, 250), 5);
    }

    #[test]
    fn dark_cut_counts() {
        let g = QuadratureGrid::symmetric(10.0, 5001).unwrap();
        for m in 0..=2 {
            let s = build_state(&StateSpec::pacs(0.7, m), 1e-12).unwrap();
            assert_eq!(dark_cuts(&slice(&s, 0.0, &g).unwrap()), m);
        }
    }

    #[test]
    fn parameter_validation() {
        let bad = PacsMarkerParams {
            alphas: vec![1.0, 0.5],
            ..Default::default()
        };
        assert!(run_pacs_marker_experiment(&bad).is_err());
        let bad = PacsMarkerParams {
            m_values: vec![3],
            ..Default::default()
        };
        assert!(run_pacs_marker_experiment(&bad).is_err());
        assert!(run_fock_distance_experiment(&FockDistanceParams { n_max: 1, grid: None }).is_err());
    }

    #[test]
    fn small_fock_experiment() {
        let r = run_fock_distance_experiment(&FockDistanceParams { n_max: 4, grid: None }).unwrap();
        assert_eq!(r.curves.len(), 3);
        assert!(r.find_check("W1(vacuum, |1>)").unwrap().passed);
        assert!(r.find_check("DKL(vacuum, |1>)").unwrap().passed);
        assert!(r.find_check("DB(vacuum, |1>)").unwrap().passed);
        let text = serde_json::to_string(&r).unwrap();
        let back: ExperimentReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn curves_written_as_csv() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = ExperimentReport::new("t");
        r.curve("DKL m=1", vec![0.1, 0.2], vec![1.0, 2.5]);
        let paths = r.write_curves_csv(&dir.path().join("out")).unwrap();
        assert_eq!(paths[0].file_name().unwrap(), "out.DKL_m_1.csv");
        let text = std::fs::read_to_string(&paths[0]).unwrap();
        assert_eq!(text, "x,DKL m=1\n0.1,1.0\n0.2,2.5\n");
    }
}
