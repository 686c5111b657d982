//! Quadrature distributions `w(X, theta)` on uniform grids.
//!
//! Phase convention: `<X_theta, theta | n> = psi_n(X) e^{-i n theta}`, so
//! `theta = 0` is the x quadrature and `theta = pi/2` the p quadrature.

use std::f64::consts::{PI, SQRT_2};
use std::io::{Read, Write};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::hermite_functions_into;
use crate::states::FockVector;

/// Default (and minimum) number of grid points.
pub const DEFAULT_POINTS: usize = 4001;
/// Largest grid step the default grid allows.
pub const DEFAULT_MAX_STEP: f64 = 0.004;
/// Half-width floor of the default grid.
pub const DEFAULT_HALF_WIDTH: f64 = 8.0;

/// Slice normalization tolerance.
pub const NORMALIZATION_TOL: f64 = 1e-8;
/// Largest pdf value tolerated at either grid edge.
pub const BOUNDARY_TOL: f64 = 1e-14;

/// Uniform abscissa grid with inclusive endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureGrid {
    x_min: f64,
    x_max: f64,
    n_points: usize,
}

impl QuadratureGrid {
    pub fn new(x_min: f64, x_max: f64, n_points: usize) -> Result<Self> {
        if !(x_min.is_finite() && x_max.is_finite() && x_min < x_max) {
            return Err(Error::InvalidParameter {
                name: "grid",
                reason: format!("need finite x_min < x_max, got [{x_min}, {x_max}]"),
            });
        }
        if n_points < 2 {
            return Err(Error::InvalidParameter {
                name: "n_points",
                reason: format!("{n_points} < 2"),
            });
        }
        Ok(QuadratureGrid {
            x_min,
            x_max,
            n_points,
        })
    }

    pub fn symmetric(half_width: f64, n_points: usize) -> Result<Self> {
        Self::new(-half_width, half_width, n_points)
    }

    /// Default grid wide enough for every given state.
    ///
    /// Half-width is the largest of 8, `sqrt(2)|<a>| + 8` and
    /// `sqrt(2N+1) + 6` (classical turning point of the highest retained
    /// Fock level plus margin), rounded up; the step never exceeds 0.004.
    pub fn for_states(states: &[&FockVector]) -> Self {
        let mut half_width = DEFAULT_HALF_WIDTH;
        for state in states {
            let shift = SQRT_2 * state.normal_ordered(0, 1).norm() + DEFAULT_HALF_WIDTH;
            let turning = (2.0 * state.truncation() as f64 + 1.0).sqrt() + 6.0;
            half_width = half_width.max(shift).max(turning);
        }
        let half_width = half_width.ceil();
        let mut n_points = ((2.0 * half_width / DEFAULT_MAX_STEP).ceil() as usize + 1).max(DEFAULT_POINTS);
        if n_points.is_multiple_of(2) {
            n_points += 1;
        }
        QuadratureGrid {
            x_min: -half_width,
            x_max: half_width,
            n_points,
        }
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn step(&self) -> f64 {
        (self.x_max - self.x_min) / (self.n_points - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        if i + 1 == self.n_points {
            self.x_max
        } else {
            self.x_min + i as f64 * self.step()
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.point(i)).collect()
    }

    /// Composite trapezoid rule.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.n_points);
        let n = values.len();
        let interior: f64 = values[1..n - 1].iter().sum();
        self.step() * (interior + 0.5 * (values[0] + values[n - 1]))
    }

    /// Running trapezoid integral starting at 0 on the left edge.
    pub fn cumulative(&self, values: &[f64]) -> Vec<f64> {
        let h = self.step();
        let mut out = Vec::with_capacity(values.len());
        let mut acc = 0.0;
        out.push(0.0);
        for w in values.windows(2) {
            acc += 0.5 * h * (w[0] + w[1]);
            out.push(acc);
        }
        out
    }

    pub(crate) fn ensure_len(&self, what: &str, len: usize) -> Result<()> {
        if len != self.n_points {
            return Err(Error::GridMismatch(format!(
                "{what} has {len} samples, grid has {}",
                self.n_points
            )));
        }
        Ok(())
    }
}

/// Quadrature PDF at one local-oscillator phase.
#[derive(Debug, Clone, PartialEq)]
pub struct TomogramSlice {
    theta: f64,
    grid: QuadratureGrid,
    pdf: Vec<f64>,
}

impl TomogramSlice {
    /// Wraps externally produced samples; checks shape and sign only.
    pub fn new(theta: f64, grid: QuadratureGrid, pdf: Vec<f64>) -> Result<Self> {
        grid.ensure_len("pdf", pdf.len())?;
        if let Some((i, v)) = pdf.iter().enumerate().find(|(_, v)| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter {
                name: "pdf",
                reason: format!("sample {i} is {v}"),
            });
        }
        Ok(TomogramSlice { theta, grid, pdf })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn grid(&self) -> &QuadratureGrid {
        &self.grid
    }

    pub fn pdf(&self) -> &[f64] {
        &self.pdf
    }

    pub fn integral(&self) -> f64 {
        self.grid.integrate(&self.pdf)
    }
}

/// Slices over `theta in [0, pi)` sharing one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Tomogram {
    grid: QuadratureGrid,
    slices: Vec<TomogramSlice>,
}

impl Tomogram {
    pub fn new(slices: Vec<TomogramSlice>) -> Result<Self> {
        let Some(first) = slices.first() else {
            return Err(Error::InvalidParameter {
                name: "slices",
                reason: "tomogram needs at least one slice".into(),
            });
        };
        let grid = first.grid;
        let mut last = f64::NEG_INFINITY;
        for s in &slices {
            if s.grid != grid {
                return Err(Error::GridMismatch("slices use different grids".into()));
            }
            if !(s.theta >= 0.0 && s.theta < PI) || s.theta <= last {
                return Err(Error::InvalidParameter {
                    name: "theta",
                    reason: format!("angles must increase strictly within [0, pi), got {}", s.theta),
                });
            }
            last = s.theta;
        }
        Ok(Tomogram { grid, slices })
    }

    pub fn grid(&self) -> &QuadratureGrid {
        &self.grid
    }

    pub fn slices(&self) -> &[TomogramSlice] {
        &self.slices
    }

    /// Writes the CSV layout: header `x,<theta_0>,<theta_1>,...`, then one
    /// row per grid point. Samples use the shortest round-trip decimal form.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let mut header = vec!["x".to_string()];
        header.extend(self.slices.iter().map(|s| fmt_sig9(s.theta)));
        out.write_record(&header).map_err(csv_err)?;
        let mut buf = ryu::Buffer::new();
        let mut row: Vec<String> = Vec::with_capacity(self.slices.len() + 1);
        for i in 0..self.grid.n_points {
            row.clear();
            row.push(buf.format(self.grid.point(i)).to_string());
            for s in &self.slices {
                row.push(buf.format(s.pdf[i]).to_string());
            }
            out.write_record(&row).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut input = csv::Reader::from_reader(reader);
        let header = input.headers().map_err(csv_err)?.clone();
        if header.get(0) != Some("x") || header.len() < 2 {
            return Err(Error::Csv("header must be `x,<theta>,...`".into()));
        }
        let thetas = header
            .iter()
            .skip(1)
            .map(|t| t.parse::<f64>().map_err(|e| Error::Csv(format!("theta `{t}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let mut xs = Vec::new();
        let mut columns = vec![Vec::new(); thetas.len()];
        for (row_no, record) in input.records().enumerate() {
            let record = record.map_err(csv_err)?;
            if record.len() != thetas.len() + 1 {
                return Err(Error::Csv(format!("row {} has {} fields", row_no + 2, record.len())));
            }
            let mut fields = record.iter().map(|f| {
                f.parse::<f64>()
                    .map_err(|e| Error::Csv(format!("row {}: `{f}`: {e}", row_no + 2)))
            });
            xs.push(fields.next().unwrap()?);
            for col in columns.iter_mut() {
                col.push(fields.next().unwrap()?);
            }
        }
        if xs.len() < 2 {
            return Err(Error::Csv("need at least two grid rows".into()));
        }
        let grid = QuadratureGrid::new(xs[0], xs[xs.len() - 1], xs.len())?;
        let tol = 1e-9 * grid.x_max.abs().max(grid.x_min.abs());
        if let Some(i) = (0..xs.len()).find(|&i| (xs[i] - grid.point(i)).abs() > tol) {
            return Err(Error::Csv(format!("grid not uniform at row {}", i + 2)));
        }
        let slices = thetas
            .into_iter()
            .zip(columns)
            .map(|(theta, pdf)| TomogramSlice::new(theta, grid, pdf))
            .collect::<Result<Vec<_>>>()?;
        Tomogram::new(slices)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Csv(e.to_string())
}

/// Nine significant digits, then the shortest form of the rounded value.
fn fmt_sig9(v: f64) -> String {
    let rounded: f64 = format!("{v:.8e}").parse().unwrap_or(v);
    ryu::Buffer::new().format(rounded).to_string()
}

fn phased_amplitudes(state: &FockVector, theta: f64) -> Vec<Complex64> {
    state
        .amps()
        .iter()
        .enumerate()
        .map(|(n, c)| c * Complex64::from_polar(1.0, -(n as f64) * theta))
        .collect()
}

fn amplitude_with(phased: &[Complex64], x: f64, psi: &mut Vec<f64>) -> Complex64 {
    hermite_functions_into(phased.len() - 1, x, psi);
    phased.iter().zip(psi.iter()).map(|(c, p)| c * p).sum()
}

/// `<X_theta, theta | psi>`.
pub fn quadrature_amplitude(state: &FockVector, x: f64, theta: f64) -> Complex64 {
    let phased = phased_amplitudes(state, theta);
    amplitude_with(&phased, x, &mut Vec::with_capacity(phased.len()))
}

/// Amplitudes `<X_theta, theta | psi>` on every grid point.
pub fn slice_amplitudes(state: &FockVector, theta: f64, grid: &QuadratureGrid) -> Vec<Complex64> {
    let phased = phased_amplitudes(state, theta);
    (0..grid.n_points)
        .into_par_iter()
        .map_init(
            || Vec::with_capacity(phased.len()),
            |psi, i| amplitude_with(&phased, grid.point(i), psi),
        )
        .collect()
}

/// Tomogram slice `w(X, theta) = |<X_theta, theta | psi>|^2`, checked for
/// edge mass and unit normalization.
pub fn slice(state: &FockVector, theta: f64, grid: &QuadratureGrid) -> Result<TomogramSlice> {
    let pdf: Vec<f64> = slice_amplitudes(state, theta, grid)
        .into_iter()
        .map(|a| a.norm_sqr())
        .collect();
    let edge = pdf[0].max(pdf[pdf.len() - 1]);
    if edge >= BOUNDARY_TOL {
        return Err(Error::GridTooNarrow {
            theta,
            x_min: grid.x_min,
            x_max: grid.x_max,
            detail: format!("edge pdf {edge:e}"),
        });
    }
    let integral = grid.integrate(&pdf);
    if (integral - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::GridTooNarrow {
            theta,
            x_min: grid.x_min,
            x_max: grid.x_max,
            detail: format!("integral {integral:.12}"),
        });
    }
    Ok(TomogramSlice {
        theta,
        grid: *grid,
        pdf,
    })
}

/// Angles `j pi / n`, `j = 0..n`.
pub fn equispaced_angles(n: usize) -> Vec<f64> {
    (0..n).map(|j| j as f64 * PI / n as f64).collect()
}

/// Slices at `theta_j = j pi / n_theta`.
pub fn full_tomogram(state: &FockVector, n_theta: usize, grid: &QuadratureGrid) -> Result<Tomogram> {
    if n_theta == 0 {
        return Err(Error::InvalidParameter {
            name: "n_theta",
            reason: "must be at least 1".into(),
        });
    }
    let slices = equispaced_angles(n_theta)
        .into_par_iter()
        .map(|theta| slice(state, theta, grid))
        .collect::<Result<Vec<_>>>()?;
    Tomogram::new(slices)
}

/// Cumulative distribution of a pdf sampled on `grid`.
pub fn cdf_of(pdf: &[f64], grid: &QuadratureGrid) -> Vec<f64> {
    let mut out = grid.cumulative(pdf);
    // Euler-Maclaurin end correction lifts the running trapezoid to fourth order
    let n = pdf.len();
    if n >= 3 {
        let h = grid.step();
        let slope = |i: usize| {
            if i == 0 {
                (-3.0 * pdf[0] + 4.0 * pdf[1] - pdf[2]) / (2.0 * h)
            } else if i == n - 1 {
                (3.0 * pdf[n - 1] - 4.0 * pdf[n - 2] + pdf[n - 3]) / (2.0 * h)
            } else {
                (pdf[i + 1] - pdf[i - 1]) / (2.0 * h)
            }
        };
        let start = slope(0);
        for (i, v) in out.iter_mut().enumerate().skip(1) {
            *v -= h * h / 12.0 * (slope(i) - start);
        }
    }
    let mut running = 0.0_f64;
    for v in out.iter_mut() {
        running = running.max(*v);
        *v = running;
    }
    out
}

pub fn cdf(slice: &TomogramSlice) -> Vec<f64> {
    cdf_of(&slice.pdf, &slice.grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::weighted_hermite;
    use crate::states::{build_state, StateSpec};

    fn state(spec: StateSpec) -> FockVector {
        build_state(&spec, 1e-12).unwrap()
    }

    fn default_grid() -> QuadratureGrid {
        QuadratureGrid::symmetric(8.0, 4001).unwrap()
    }

    #[test]
    fn vacuum_amplitude_is_gaussian() {
        let vac = state(StateSpec::fock(0));
        for &x in &[-2.0, 0.0, 0.4, 3.1] {
            for &th in &[0.0, 0.7, 2.9] {
                let a = quadrature_amplitude(&vac, x, th);
                let expected = PI.powf(-0.25) * (-x * x / 2.0).exp();
                assert!((a.norm() - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn coherent_amplitude_closed_form() {
        let expected = (-(1.0 - SQRT_2 * 0.7_f64).powi(2)).exp() / PI.sqrt();
        // pointwise error of a truncated state scales like sqrt(epsilon)
        let cs = state(StateSpec::coherent(0.7));
        let a = quadrature_amplitude(&cs, 1.0, 0.0);
        assert!((a.norm_sqr() - expected).abs() < 1e-6);
        let cs = build_state(&StateSpec::coherent(0.7), 1e-26).unwrap();
        let a = quadrature_amplitude(&cs, 1.0, 0.0);
        assert!((a.norm_sqr() - expected).abs() < 1e-13);
    }

    #[test]
    fn fock_pdf_is_theta_independent() {
        let f = state(StateSpec::fock(5));
        let grid = default_grid();
        let tomo = full_tomogram(&f, 64, &grid).unwrap();
        let base = tomo.slices()[0].pdf();
        for s in tomo.slices() {
            for (p, q) in s.pdf().iter().zip(base) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fock_one_slice_matches_closed_form() {
        let grid = default_grid();
        let s = slice(&state(StateSpec::fock(1)), 0.0, &grid).unwrap();
        for (i, p) in s.pdf().iter().enumerate() {
            let x = grid.point(i);
            let expected = 2.0 * x * x * (-x * x).exp() / PI.sqrt();
            assert!((p - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn fock_slices_match_oscillator_densities() {
        let grid = QuadratureGrid::symmetric(14.0, 7001).unwrap();
        for n in 0..=30 {
            let s = slice(&state(StateSpec::fock(n)), 0.0, &grid).unwrap();
            for (i, p) in s.pdf().iter().enumerate().step_by(7) {
                let x = grid.point(i);
                let g = weighted_hermite(n, x).powi(2);
                assert!((p - g).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn coherent_slice_centered_with_unit_mass() {
        let grid = default_grid();
        let s = slice(&state(StateSpec::coherent(0.7)), 0.0, &grid).unwrap();
        assert!((s.integral() - 1.0).abs() < 1e-12);
        let xs = grid.points();
        let mean = grid.integrate(&xs.iter().zip(s.pdf()).map(|(x, p)| x * p).collect::<Vec<_>>());
        assert!((mean - SQRT_2 * 0.7).abs() < 1e-10);
    }

    #[test]
    fn coherent_ridge_follows_cosine() {
        let grid = default_grid();
        let tomo = full_tomogram(&state(StateSpec::coherent(0.7)), 128, &grid).unwrap();
        let xs = grid.points();
        for s in tomo.slices() {
            let mean = grid.integrate(&xs.iter().zip(s.pdf()).map(|(x, p)| x * p).collect::<Vec<_>>());
            assert!((mean - SQRT_2 * 0.7 * s.theta().cos()).abs() < 1e-10);
        }
    }

    #[test]
    fn single_angle_tomogram() {
        let tomo = full_tomogram(&state(StateSpec::coherent(0.3)), 1, &default_grid()).unwrap();
        assert_eq!(tomo.slices().len(), 1);
        assert_eq!(tomo.slices()[0].theta(), 0.0);
        assert!(full_tomogram(&state(StateSpec::fock(0)), 0, &default_grid()).is_err());
    }

    #[test]
    fn narrow_grid_is_rejected() {
        let narrow = QuadratureGrid::symmetric(2.0, 401).unwrap();
        assert!(matches!(
            slice(&state(StateSpec::fock(3)), 0.0, &narrow),
            Err(Error::GridTooNarrow { .. })
        ));
    }

    #[test]
    fn cdf_medians() {
        let grid = default_grid();
        let mid = grid.n_points() / 2;
        for spec in [StateSpec::fock(0), StateSpec::fock(1)] {
            let c = cdf(&slice(&state(spec), 0.0, &grid).unwrap());
            assert!((c[mid] - 0.5).abs() < 1e-12);
            assert!((c[c.len() - 1] - 1.0).abs() < 1e-8);
            assert!(c.windows(2).all(|w| w[1] >= w[0]));
        }
        // Gaussian median sits at its mean: sample the closed form at sqrt(2) * 0.7
        let center = SQRT_2 * 0.7;
        let shifted = QuadratureGrid::new(center - 8.0, center + 8.0, 4001).unwrap();
        let c = cdf(&slice(&state(StateSpec::coherent(0.7)), 0.0, &shifted).unwrap());
        assert!((c[2000] - 0.5).abs() < 1e-6);
        let tight = build_state(&StateSpec::coherent(0.7), 1e-26).unwrap();
        let c = cdf(&slice(&tight, 0.0, &shifted).unwrap());
        assert!((c[2000] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn symmetry_under_half_turn() {
        let s = state(StateSpec::pacs(Complex64::new(0.8, 0.3), 2));
        for &th in &[0.0, 0.4, 1.9] {
            for &x in &[-1.5, 0.2, 2.3] {
                let a = quadrature_amplitude(&s, x, th + PI).norm_sqr();
                let b = quadrature_amplitude(&s, -x, th).norm_sqr();
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let grid = QuadratureGrid::symmetric(8.0, 801).unwrap();
        let tomo = full_tomogram(&state(StateSpec::pacs(0.7, 1)), 5, &grid).unwrap();
        let mut buf = Vec::new();
        tomo.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x,0.0,0.628318531,1.25663706,"));
        let back = Tomogram::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.grid(), tomo.grid());
        for (a, b) in back.slices().iter().zip(tomo.slices()) {
            assert_eq!(a.pdf(), b.pdf());
            assert!((a.theta() - b.theta()).abs() <= 5e-9 * b.theta().max(1.0));
        }
    }

    #[test]
    fn csv_rejects_garbage() {
        assert!(Tomogram::read_csv("y,0\n1,2\n".as_bytes()).is_err());
        assert!(Tomogram::read_csv("x,0\n0,0.1\n1,abc\n".as_bytes()).is_err());
        assert!(Tomogram::read_csv("x,0\n0,0.1\n1,0.2\n5,0.1\n".as_bytes()).is_err());
    }

    #[test]
    fn default_grid_covers_high_fock_levels() {
        let f = state(StateSpec::fock(100));
        let grid = QuadratureGrid::for_states(&[&f]);
        assert!(grid.step() <= DEFAULT_MAX_STEP + 1e-15);
        assert!(slice(&f, 0.0, &grid).is_ok());
        let vac = state(StateSpec::fock(0));
        assert_eq!(QuadratureGrid::for_states(&[&vac]), default_grid());
    }
}
