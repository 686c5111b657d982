//! Distances between quadrature distributions: 1-Wasserstein,
//! Kullback-Leibler and Bhattacharyya, per slice or averaged over slices.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::states::{FockVector, StateSpec};
use crate::tomogram::{cdf_of, equispaced_angles, slice, QuadratureGrid};

/// Densities below this are treated as zero.
pub const DENSITY_FLOOR: f64 = 1e-300;
/// Reference mass at which a vanishing second density is a support violation.
pub const SUPPORT_TOL: f64 = 1e-6;
/// Slices averaged by default.
pub const DEFAULT_SLICES: usize = 5;

const NEGATIVE_TOL: f64 = 1e-9;
/// Squared width (in grid steps) given to an exact node so its logarithm stays finite.
const NODE_WIDTH_SQR: f64 = 1e-16;
/// Dips wider than this (squared, in steps) are left to the trapezoid rule.
const BROAD_DIP_SQR: f64 = 100.0;
/// Nodes of the two densities closer than this (in steps) count as one.
const SHARED_NODE_STEPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MarkerKind {
    #[serde(rename = "W1")]
    W1,
    #[serde(rename = "DKL")]
    Dkl,
    #[serde(rename = "DB")]
    Db,
}

impl MarkerKind {
    pub const ALL: [MarkerKind; 3] = [MarkerKind::W1, MarkerKind::Dkl, MarkerKind::Db];
}

impl fmt::Display for MarkerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MarkerKind::W1 => "W1",
            MarkerKind::Dkl => "DKL",
            MarkerKind::Db => "DB",
        })
    }
}

impl FromStr for MarkerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "w1" => Ok(MarkerKind::W1),
            "dkl" | "kl" => Ok(MarkerKind::Dkl),
            "db" => Ok(MarkerKind::Db),
            other => Err(Error::InvalidParameter {
                name: "marker",
                reason: format!("unknown marker `{other}` (expected w1, dkl, db)"),
            }),
        }
    }
}

/// Where a marker value was taken: one angle, or the slice average.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SliceSelector {
    Theta(f64),
    Averaged,
}

impl Serialize for SliceSelector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            SliceSelector::Theta(t) => s.serialize_f64(*t),
            SliceSelector::Averaged => s.serialize_str("avg"),
        }
    }
}

impl<'de> Deserialize<'de> for SliceSelector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(t) => Ok(SliceSelector::Theta(t)),
            Raw::Text(t) if t == "avg" => Ok(SliceSelector::Averaged),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("expected number or \"avg\", got {t}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkerValue {
    pub kind: MarkerKind,
    pub value: f64,
    pub theta: SliceSelector,
    pub n_slices: usize,
}

/// JSON record of a marker evaluated between two named states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerRecord {
    pub kind: MarkerKind,
    pub theta: SliceSelector,
    pub n_slices: usize,
    pub value: f64,
    #[serde(rename = "stateA")]
    pub state_a: StateSpec,
    #[serde(rename = "stateB")]
    pub state_b: StateSpec,
}

impl MarkerRecord {
    pub fn new(value: MarkerValue, state_a: StateSpec, state_b: StateSpec) -> Self {
        MarkerRecord {
            kind: value.kind,
            theta: value.theta,
            n_slices: value.n_slices,
            value: value.value,
            state_a,
            state_b,
        }
    }
}

fn same_grid(grid: &QuadratureGrid, f: &[f64], g: &[f64]) -> Result<()> {
    grid.ensure_len("first distribution", f.len())?;
    grid.ensure_len("second distribution", g.len())
}

/// `int |F - G| dx` for two CDFs on one grid.
pub fn w1(f_cdf: &[f64], g_cdf: &[f64], grid: &QuadratureGrid) -> Result<f64> {
    same_grid(grid, f_cdf, g_cdf)?;
    let d: Vec<f64> = f_cdf.iter().zip(g_cdf).map(|(a, b)| a - b).collect();
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let h = grid.step();
    let mut total = grid.integrate(&abs);
    // kinks of |F - G| where the CDFs cross
    for i in 1..d.len().saturating_sub(1) {
        let frac = if d[i] == 0.0 && d[i - 1] * d[i + 1] < 0.0 {
            0.0
        } else if d[i] * d[i + 1] < 0.0 {
            d[i] / (d[i] - d[i + 1])
        } else {
            continue;
        };
        let slope_jump = 2.0 * ((d[i + 1] - d[i]) / h).abs();
        total += 0.5 * slope_jump * h * h * (frac * frac - frac + 1.0 / 6.0);
    }
    Ok(total)
}

/// `-ln int sqrt(f g) dx`.
///
/// `sqrt(f g)` has a kink wherever one density has a simple node of its
/// amplitude; the trapezoid sum gets the matching Euler-Maclaurin correction.
pub fn db(f: &[f64], g: &[f64], grid: &QuadratureGrid) -> Result<f64> {
    same_grid(grid, f, g)?;
    let root: Vec<f64> = f.iter().zip(g).map(|(a, b)| (a * b).max(0.0).sqrt()).collect();
    let h = grid.step();
    let mut coefficient = grid.integrate(&root);
    let nodes = |other: &[f64], nodal: &[f64]| -> Vec<Dip> { find_dips(other, nodal).into_iter().filter(|d| d.node).collect() };
    let (f_nodes, g_nodes) = (nodes(g, f), nodes(f, g));
    for (other, own, theirs) in [(f, &g_nodes, &f_nodes), (g, &f_nodes, &g_nodes)] {
        for d in own {
            // a node shared by both amplitudes leaves sqrt(f g) smooth
            if theirs.iter().any(|e| (e.position() - d.position()).abs() < SHARED_NODE_STEPS) {
                continue;
            }
            coefficient += kink_correction(other, d, h);
        }
    }
    Ok((-coefficient.ln()).max(0.0))
}

/// Trapezoid defect of `sqrt(other) * |amplitude|` across a node of the amplitude.
fn kink_correction(other: &[f64], dip: &Dip, h: f64) -> f64 {
    let frac = dip.t0.abs();
    // cubic, not linear: when `other` vanishes at the same node a linear
    // estimate is O(h^2) and fakes a kink
    let left = if dip.t0 >= 0.0 { dip.index } else { dip.index - 1 };
    let u = dip.index as f64 + dip.t0 - left as f64;
    let c = cubic_coefficients([other[left - 1], other[left], other[left + 1], other[left + 2]]);
    let other_at_node = (c[0] + u * (c[1] + u * (c[2] + u * c[3]))).max(0.0);
    let slope_jump = 2.0 * (dip.curvature * other_at_node).sqrt() / h;
    let bernoulli2 = frac * frac - frac + 1.0 / 6.0;
    0.5 * slope_jump * h * h * bernoulli2
}

/// Quadratic model `g ~ a ((t - t0)^2 + s2)` of a dip of `g`, in grid-step
/// units `t` measured from the dip's grid index.
#[derive(Debug, Clone, Copy)]
struct Dip {
    index: usize,
    t0: f64,
    s2: f64,
    /// curvature `a` of the model, in density units per step^2
    curvature: f64,
    node: bool,
}

impl Dip {
    /// Node position in grid steps from the first point.
    fn position(&self) -> f64 {
        self.index as f64 + self.t0
    }

    /// `ln((t - t0)^2 + s2)` at grid index `j`.
    fn log_model(&self, j: usize) -> f64 {
        let u = j as f64 - self.index as f64 - self.t0;
        (u * u + self.s2).ln()
    }
}

/// Finds interior local minima of `g` and fits each with a shifted parabola;
/// minima that reach (near) zero get their node located on the signed
/// square-root amplitude instead.
fn find_dips(f: &[f64], g: &[f64]) -> Vec<Dip> {
    let n = g.len();
    let mut dips = Vec::new();
    for i in 2..n.saturating_sub(2) {
        let (gm, g0, gp) = (g[i - 1], g[i], g[i + 1]);
        if !(g0 <= gm && g0 < gp) || gm < DENSITY_FLOOR || gp < DENSITY_FLOOR {
            continue;
        }
        if f[i - 1].max(f[i]).max(f[i + 1]) < DENSITY_FLOOR {
            continue;
        }
        let a = 0.5 * (gm + gp - 2.0 * g0);
        if a <= 0.0 {
            continue;
        }
        let b = 0.5 * (gp - gm);
        let mut t0 = -b / (2.0 * a);
        let floor_value = g0 - b * b / (4.0 * a);
        let mut s2 = (floor_value / a).max(0.0);
        if s2 > BROAD_DIP_SQR {
            // smooth on the grid scale; the trapezoid rule copes
            continue;
        }
        let node = s2 < 1e-4;
        if node {
            if let Some(root) = refine_node(g, i, t0) {
                t0 = root;
            }
            s2 = 0.0;
        }
        dips.push(Dip {
            index: i,
            t0,
            s2: s2.max(NODE_WIDTH_SQR),
            curvature: a,
            node,
        });
    }
    dips
}

/// Root of the cubic through four signed square roots of `g` around a node.
#[allow(clippy::needless_range_loop)]
fn refine_node(g: &[f64], i: usize, t0: f64) -> Option<f64> {
    let start = if t0 >= 0.0 { i - 1 } else { i - 2 };
    if start + 3 >= g.len() {
        return None;
    }
    let ts: Vec<f64> = (0..4).map(|k| (start + k) as f64 - i as f64).collect();
    let us: Vec<f64> = ts
        .iter()
        .zip(&g[start..start + 4])
        .map(|(t, v)| {
            let mag = v.max(0.0).sqrt();
            if *t < t0 {
                -mag
            } else {
                mag
            }
        })
        .collect();
    let eval = |t: f64| -> (f64, f64) {
        // Lagrange form with derivative
        let mut value = 0.0;
        let mut deriv = 0.0;
        for k in 0..4 {
            let mut basis = 1.0;
            let mut denom = 1.0;
            let mut dbasis = 0.0;
            for m in 0..4 {
                if m == k {
                    continue;
                }
                denom *= ts[k] - ts[m];
                let mut term = 1.0;
                for q in 0..4 {
                    if q != k && q != m {
                        term *= t - ts[q];
                    }
                }
                dbasis += term;
                basis *= t - ts[m];
            }
            value += us[k] * basis / denom;
            deriv += us[k] * dbasis / denom;
        }
        (value, deriv)
    };
    let mut t = t0;
    for _ in 0..20 {
        let (v, d) = eval(t);
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        let step = v / d;
        t -= step;
        if step.abs() < 1e-14 {
            break;
        }
    }
    ((t - t0).abs() <= 0.5 && t.abs() <= 1.0).then_some(t)
}

/// `int_{u0}^{u0+1} u^k ln(u^2 + s2) du` for `k = 0..=3`.
fn log_moments(s2: f64, u0: f64) -> [f64; 4] {
    let s = s2.sqrt();
    let anti = |u: f64| -> [f64; 4] {
        let q = u * u + s2;
        let lq = q.ln();
        let at = s * (u / s).atan();
        [
            u * lq - 2.0 * u + 2.0 * at,
            0.5 * (q * lq - u * u),
            u * u * u / 3.0 * lq - 2.0 / 3.0 * (u * u * u / 3.0 - s2 * u + s2 * at),
            0.5 * (0.5 * q * q * lq - 0.25 * q * q - s2 * (q * lq - q)),
        ]
    };
    let (a, b) = (anti(u0), anti(u0 + 1.0));
    [b[0] - a[0], b[1] - a[1], b[2] - a[2], b[3] - a[3]]
}

/// Cubic through `(-1, y[0]), (0, y[1]), (1, y[2]), (2, y[3])`, as power coefficients.
fn cubic_coefficients(y: [f64; 4]) -> [f64; 4] {
    [
        y[1],
        -y[0] / 3.0 - y[1] / 2.0 + y[2] - y[3] / 6.0,
        0.5 * y[0] - y[1] + 0.5 * y[2],
        (y[3] - y[0]) / 6.0 + 0.5 * (y[1] - y[2]),
    ]
}

const GAUSS_NODES: [f64; 4] = [
    0.069_431_844_202_973_71,
    0.330_009_478_207_571_9,
    0.669_990_521_792_428_1,
    0.930_568_155_797_026_3,
];
const GAUSS_WEIGHTS: [f64; 4] = [
    0.173_927_422_568_726_9,
    0.326_072_577_431_273_1,
    0.326_072_577_431_273_1,
    0.173_927_422_568_726_9,
];
/// Cells closer than this (in steps) to a dip use closed-form moments.
const NEAR_CELLS: f64 = 16.0;

/// `int f(x) ln((t - t0)^2 + s2) dx` over the grid, with `t` in steps
/// from the dip and `f` interpolated by local cubics.
fn dip_log_integral(f: &[f64], dip: &Dip, h: f64) -> f64 {
    let n = f.len();
    let mut acc = 0.0;
    for j in 0..n - 1 {
        let y = if j == 0 || j + 2 >= n {
            // linear at the edges, where f is negligible anyway
            let (a, b) = (f[j], f[j + 1]);
            [2.0 * a - b, a, b, 2.0 * b - a]
        } else {
            [f[j - 1], f[j], f[j + 1], f[j + 2]]
        };
        if y.iter().all(|v| v.abs() < DENSITY_FLOOR) {
            continue;
        }
        let c = cubic_coefficients(y);
        let u0 = j as f64 - dip.index as f64 - dip.t0;
        if (u0 + 0.5).abs() <= NEAR_CELLS {
            // p(v) with v = u - u0; expand in powers of u
            let m = log_moments(dip.s2, u0);
            let (a, a2, a3) = (u0, u0 * u0, u0 * u0 * u0);
            acc += c[0] * m[0]
                + c[1] * (m[1] - a * m[0])
                + c[2] * (m[2] - 2.0 * a * m[1] + a2 * m[0])
                + c[3] * (m[3] - 3.0 * a * m[2] + 3.0 * a2 * m[1] - a3 * m[0]);
        } else {
            for (v, w) in GAUSS_NODES.iter().zip(&GAUSS_WEIGHTS) {
                let u = u0 + v;
                let p = c[0] + v * (c[1] + v * (c[2] + v * c[3]));
                acc += w * p * (u * u + dip.s2).ln();
            }
        }
    }
    h * acc
}

/// `int f ln g dx` with the dip models of `g` split off and integrated exactly.
fn weighted_log_integral(f: &[f64], g: &[f64], dips: &[Dip], grid: &QuadratureGrid) -> f64 {
    let n = f.len();
    // smooth remainder of ln g after the dip models are removed
    let mut remainder: Vec<f64> = (0..n)
        .map(|i| {
            if f[i] < DENSITY_FLOOR {
                return 0.0;
            }
            let singular: f64 = dips.iter().map(|d| d.log_model(i)).sum();
            g[i].max(DENSITY_FLOOR).ln() - singular
        })
        .collect();
    for d in dips {
        let i = d.index;
        if g[i] < DENSITY_FLOOR {
            remainder[i] = 0.5 * (remainder[i - 1] + remainder[i + 1]);
        }
    }
    let smooth: Vec<f64> = f
        .iter()
        .zip(&remainder)
        .map(|(fv, r)| if *fv < DENSITY_FLOOR { 0.0 } else { fv * r })
        .collect();
    let h = grid.step();
    let singular: Vec<f64> = dips.par_iter().map(|d| dip_log_integral(f, d, h)).collect();
    grid.integrate(&smooth) + singular.iter().sum::<f64>()
}

/// `int f ln(f/g) dx`.
///
/// Zeros of `g` give integrable logarithmic singularities. Each dip of `g`
/// (and likewise of `f` in the `f ln f` term) is modelled as `ln((x - x0)^2 + s^2)`; that part is integrated exactly
/// against the piecewise-linear `f`, and the smooth remainder by the
/// trapezoid rule. Points with `f < 1e-300` contribute nothing; elsewhere `g`
/// is floored at `1e-300`, and a vanishing `g` where `f >= 1e-6` is an error
/// unless it is an isolated node.
pub fn dkl(f: &[f64], g: &[f64], grid: &QuadratureGrid) -> Result<f64> {
    same_grid(grid, f, g)?;
    let n = f.len();
    let dips = find_dips(f, g);
    let dip_at: std::collections::HashSet<usize> = dips.iter().map(|d| d.index).collect();

    for i in 0..n {
        if g[i] < DENSITY_FLOOR && f[i] >= SUPPORT_TOL && !dip_at.contains(&i) {
            return Err(Error::SupportViolation {
                x: grid.point(i),
                f: f[i],
            });
        }
    }

    let self_term = weighted_log_integral(f, f, &find_dips(f, f), grid);
    let cross_term = weighted_log_integral(f, g, &dips, grid);

    let value = self_term - cross_term;
    if value < -NEGATIVE_TOL {
        log::warn!("Kullback-Leibler divergence came out negative ({value:e}); clamping to 0");
    }
    Ok(value.max(0.0))
}

/// Marker between two pdfs sampled on `grid`.
pub fn marker_between(kind: MarkerKind, f: &[f64], g: &[f64], grid: &QuadratureGrid) -> Result<f64> {
    match kind {
        MarkerKind::W1 => w1(&cdf_of(f, grid), &cdf_of(g, grid), grid),
        MarkerKind::Dkl => dkl(f, g, grid),
        MarkerKind::Db => db(f, g, grid),
    }
}

fn markers_at(
    state_a: &FockVector,
    state_b: &FockVector,
    kinds: &[MarkerKind],
    theta: f64,
    grid: &QuadratureGrid,
) -> Result<Vec<f64>> {
    let f = slice(state_a, theta, grid)?;
    let g = slice(state_b, theta, grid)?;
    kinds
        .iter()
        .map(|&k| {
            marker_between(k, f.pdf(), g.pdf(), grid).map_err(|e| match e {
                e @ Error::SupportViolation { .. } => Error::SliceSupportViolation {
                    theta,
                    source: Box::new(e),
                },
                other => other,
            })
        })
        .collect()
}

/// Marker between the `theta` slices of two states. The first state plays
/// the role of `f` in the Kullback-Leibler divergence.
pub fn marker_at(
    state_a: &FockVector,
    state_b: &FockVector,
    kind: MarkerKind,
    theta: f64,
    grid: &QuadratureGrid,
) -> Result<MarkerValue> {
    let value = markers_at(state_a, state_b, &[kind], theta, grid)?[0];
    Ok(MarkerValue {
        kind,
        value,
        theta: SliceSelector::Theta(theta),
        n_slices: 1,
    })
}

/// Several markers averaged over `theta_j = j pi / n_slices`; slices are
/// built once and shared between the requested kinds.
pub fn slice_averaged_many(
    state_a: &FockVector,
    state_b: &FockVector,
    kinds: &[MarkerKind],
    n_slices: usize,
    grid: &QuadratureGrid,
) -> Result<Vec<MarkerValue>> {
    if n_slices == 0 {
        return Err(Error::InvalidParameter {
            name: "n_slices",
            reason: "must be at least 1".into(),
        });
    }
    let per_slice = equispaced_angles(n_slices)
        .into_par_iter()
        .map(|theta| markers_at(state_a, state_b, kinds, theta, grid))
        .collect::<Result<Vec<_>>>()?;
    Ok(kinds
        .iter()
        .enumerate()
        .map(|(k, &kind)| {
            let total: f64 = per_slice.iter().map(|v| v[k]).sum();
            MarkerValue {
                kind,
                value: total / n_slices as f64,
                theta: SliceSelector::Averaged,
                n_slices,
            }
        })
        .collect())
}

pub fn slice_averaged(
    state_a: &FockVector,
    state_b: &FockVector,
    kind: MarkerKind,
    n_slices: usize,
    grid: &QuadratureGrid,
) -> Result<MarkerValue> {
    Ok(slice_averaged_many(state_a, state_b, &[kind], n_slices, grid)?[0])
}
