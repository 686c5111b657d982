//! Normal-ordered moments read straight off tomogram slices, and the
//! quantities built from them: gain, quadrature variances, photon number.
//!
//! For `n = k + l`, the moment `<a^+k a^l>` is
//! `C_kl sum_j exp(-i (k-l) theta_j) int H_n(X) w(X, theta_j) dX` with
//! `theta_j = j pi / (n + 1)`, `j = 0..=n`, and
//! `C_kl = k! l! / ((n + 1)! 2^{n/2})`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{log_factorial, raw_hermite};
use crate::states::{build_state, FockVector, StateSpec, DEFAULT_EPSILON};
use crate::tomogram::{slice, QuadratureGrid};

/// Highest `k + l` accepted.
pub const MAX_MOMENT_ORDER: usize = 12;
/// Above this order the raw Hermite kernel starts to cost accuracy.
pub const PRECISION_WARNING_ORDER: usize = 8;
/// Imaginary part tolerated in moments that must be real.
pub const REALITY_TOL: f64 = 1e-8;
const SQUEEZE_TOL: f64 = 1e-9;
const MIN_GAIN_ALPHA: f64 = 1e-12;

fn check_order(order: usize) -> Result<()> {
    if order > MAX_MOMENT_ORDER {
        return Err(Error::OrderTooLarge {
            what: "moment k+l",
            order,
            max: MAX_MOMENT_ORDER,
        });
    }
    Ok(())
}

/// `int H_n(X) w(X, theta_j) dX` for the `n + 1` angles `theta_j = j pi / (n + 1)`.
fn kernel_integrals(state: &FockVector, order: usize, grid: &QuadratureGrid) -> Result<Vec<f64>> {
    check_order(order)?;
    let kernel: Vec<f64> = grid
        .points()
        .iter()
        .map(|&x| raw_hermite(order, x))
        .collect::<Result<_>>()?;
    (0..=order)
        .into_par_iter()
        .map(|j| {
            let theta = j as f64 * PI / (order + 1) as f64;
            let s = slice(state, theta, grid)?;
            let weighted: Vec<f64> = s.pdf().iter().zip(&kernel).map(|(w, h)| w * h).collect();
            Ok(grid.integrate(&weighted))
        })
        .collect()
}

fn combine(k: usize, l: usize, integrals: &[f64]) -> Complex64 {
    let n = k + l;
    let log_c = log_factorial(k) + log_factorial(l) - log_factorial(n + 1) - 0.5 * n as f64 * 2f64.ln();
    let c = log_c.exp();
    let step = -(k as f64 - l as f64) * PI / (n + 1) as f64;
    let sum: Complex64 = integrals
        .iter()
        .enumerate()
        .map(|(j, v)| Complex64::from_polar(*v, step * j as f64))
        .sum();
    sum * c
}

/// `<a^+k a^l>` from `k + l + 1` exact slices of the state's tomogram.
pub fn wunsche_moment(state: &FockVector, k: usize, l: usize, grid: &QuadratureGrid) -> Result<Complex64> {
    let order = k + l;
    check_order(order)?;
    if order > PRECISION_WARNING_ORDER {
        log::warn!("moment order k+l={order} > {PRECISION_WARNING_ORDER}: raw Hermite kernel limits precision");
    }
    Ok(combine(k, l, &kernel_integrals(state, order, grid)?))
}

/// All moments with `k + l <= max_order`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentTable {
    pub entries: BTreeMap<(usize, usize), Complex64>,
    pub source: Option<StateSpec>,
    pub grid: QuadratureGrid,
    pub warnings: Vec<String>,
}

impl MomentTable {
    pub fn compute(
        state: &FockVector,
        source: Option<StateSpec>,
        max_order: usize,
        grid: &QuadratureGrid,
    ) -> Result<Self> {
        check_order(max_order)?;
        let mut entries = BTreeMap::new();
        let mut warnings = Vec::new();
        for order in 0..=max_order {
            if order > PRECISION_WARNING_ORDER {
                let msg = format!("order k+l={order} exceeds {PRECISION_WARNING_ORDER}; expect reduced precision");
                log::warn!("{msg}");
                warnings.push(msg);
            }
            let integrals = kernel_integrals(state, order, grid)?;
            for k in 0..=order {
                entries.insert((k, order - k), combine(k, order - k, &integrals));
            }
        }
        Ok(MomentTable {
            entries,
            source,
            grid: *grid,
            warnings,
        })
    }

    pub fn get(&self, k: usize, l: usize) -> Option<Complex64> {
        self.entries.get(&(k, l)).copied()
    }
}

#[derive(Serialize, Deserialize)]
struct MomentTableJson {
    source: Option<StateSpec>,
    grid: QuadratureGrid,
    entries: Vec<(usize, usize, f64, f64)>,
    #[serde(default)]
    warnings: Vec<String>,
}

impl Serialize for MomentTable {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MomentTableJson {
            source: self.source,
            grid: self.grid,
            entries: self.entries.iter().map(|(&(k, l), v)| (k, l, v.re, v.im)).collect(),
            warnings: self.warnings.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for MomentTable {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = MomentTableJson::deserialize(d)?;
        Ok(MomentTable {
            entries: raw
                .entries
                .into_iter()
                .map(|(k, l, re, im)| ((k, l), Complex64::new(re, im)))
                .collect(),
            source: raw.source,
            grid: raw.grid,
            warnings: raw.warnings,
        })
    }
}

/// `g_m(|alpha|) = |<alpha,m| a |alpha,m>| / |alpha|` from the tomogram.
pub fn gain(alpha: Complex64, m: usize, grid: &QuadratureGrid) -> Result<f64> {
    if alpha.norm() < MIN_GAIN_ALPHA {
        return Err(Error::VanishingAmplitude(alpha.norm()));
    }
    let state = build_state(&StateSpec::pacs(alpha, m), DEFAULT_EPSILON)?;
    Ok(wunsche_moment(&state, 0, 1, grid)?.norm() / alpha.norm())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub state: Option<StateSpec>,
    pub theta: f64,
    /// in units where the vacuum gives 1/2
    pub raw_variance: f64,
    /// vacuum gives 1
    pub normalized_variance: f64,
    pub squeezed: bool,
}

impl VarianceReport {
    fn from_raw(theta: f64, raw: f64) -> Self {
        let normalized = 2.0 * raw;
        VarianceReport {
            state: None,
            theta,
            raw_variance: raw,
            normalized_variance: normalized,
            squeezed: normalized < 1.0 - SQUEEZE_TOL,
        }
    }

    pub fn with_state(mut self, spec: StateSpec) -> Self {
        self.state = Some(spec);
        self
    }
}

/// Variance of `X_theta` straight from the slice.
pub fn quadrature_variance(state: &FockVector, theta: f64, grid: &QuadratureGrid) -> Result<VarianceReport> {
    let s = slice(state, theta, grid)?;
    let xs = grid.points();
    let first: Vec<f64> = s.pdf().iter().zip(&xs).map(|(w, x)| w * x).collect();
    let second: Vec<f64> = s.pdf().iter().zip(&xs).map(|(w, x)| w * x * x).collect();
    let mean = grid.integrate(&first);
    Ok(VarianceReport::from_raw(theta, grid.integrate(&second) - mean * mean))
}

/// The same variance assembled from moments with `k + l <= 2`:
/// `2 Re(<a^2> e^{-2i theta}) + 2 <a^+a> + 1 - 4 Re(<a> e^{-i theta})^2`, halved.
pub fn quadrature_variance_from_moments(
    state: &FockVector,
    theta: f64,
    grid: &QuadratureGrid,
) -> Result<VarianceReport> {
    let a = wunsche_moment(state, 0, 1, grid)?;
    let a2 = wunsche_moment(state, 0, 2, grid)?;
    let n = wunsche_moment(state, 1, 1, grid)?;
    let rot = Complex64::from_polar(1.0, -theta);
    let shift = (a * rot).re;
    let normalized = 2.0 * (a2 * rot * rot).re + 2.0 * n.re + 1.0 - 4.0 * shift * shift;
    Ok(VarianceReport::from_raw(theta, 0.5 * normalized))
}

/// `<a^+ a>` from the tomogram.
pub fn mean_photon(state: &FockVector, grid: &QuadratureGrid) -> Result<f64> {
    let n = wunsche_moment(state, 1, 1, grid)?;
    if n.im.abs() >= REALITY_TOL {
        return Err(Error::NonRealMoment { k: 1, l: 1, imag: n.im });
    }
    Ok(n.re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::states::build_state;
    use std::f64::consts::FRAC_PI_2;

    fn st(spec: StateSpec) -> FockVector {
        build_state(&spec, 1e-12).unwrap()
    }

    fn grid_for(s: &FockVector) -> QuadratureGrid {
        QuadratureGrid::for_states(&[s])
    }

    #[test]
    fn fock_photon_number() {
        for n in 0..=10 {
            let s = st(StateSpec::fock(n));
            let g = grid_for(&s);
            let v = wunsche_moment(&s, 1, 1, &g).unwrap();
            assert!((v.re - n as f64).abs() < 1e-8 && v.im.abs() < 1e-8, "n={n}: {v}");
        }
    }

    #[test]
    fn coherent_amplitude() {
        let s = st(StateSpec::coherent(0.7));
        let g = grid_for(&s);
        let a = wunsche_moment(&s, 0, 1, &g).unwrap();
        assert!((a - Complex64::new(0.7, 0.0)).norm() < 1e-8, "{a}");
        let direct = s.normal_ordered(0, 1);
        assert!((a - direct).norm() < 1e-8);
        let s = st(StateSpec::coherent(Complex64::new(0.3, -0.8)));
        let a = wunsche_moment(&s, 0, 1, &grid_for(&s)).unwrap();
        assert!((a - Complex64::new(0.3, -0.8)).norm() < 1e-8, "{a}");
    }

    #[test]
    fn matches_fock_sum_oracle() {
        for spec in [
            StateSpec::pacs(1.0, 1),
            StateSpec::pacs(Complex64::new(0.4, 0.6), 2),
            StateSpec::pasvs(0.5, 0.7, 1),
            StateSpec::even_cat(1.1),
        ] {
            let s = st(spec);
            let g = grid_for(&s);
            let table = MomentTable::compute(&s, Some(spec), 4, &g).unwrap();
            for (&(k, l), v) in &table.entries {
                let direct = s.normal_ordered(k, l);
                assert!((v - direct).norm() < 1e-7, "{spec} ({k},{l}): {v} vs {direct}");
            }
        }
    }

    #[test]
    fn table_is_hermitian_and_normalized() {
        let s = st(StateSpec::pacs(Complex64::new(0.8, 0.5), 1));
        let t = MomentTable::compute(&s, None, 4, &grid_for(&s)).unwrap();
        assert!((t.get(0, 0).unwrap() - 1.0).norm() < 1e-8);
        for (&(k, l), v) in &t.entries {
            assert!((v - t.get(l, k).unwrap().conj()).norm() < 1e-8);
        }
        assert!(t.warnings.is_empty());
    }

    #[test]
    fn order_limits() {
        let s = st(StateSpec::fock(1));
        let g = grid_for(&s);
        assert!(matches!(
            wunsche_moment(&s, 7, 6, &g),
            Err(Error::OrderTooLarge { order: 13, .. })
        ));
        let t = MomentTable::compute(&s, None, 9, &g).unwrap();
        assert_eq!(t.warnings.len(), 1);
    }

    #[test]
    fn table_json_round_trip() {
        let s = st(StateSpec::coherent(0.5));
        let t = MomentTable::compute(&s, Some(StateSpec::coherent(0.5)), 2, &grid_for(&s)).unwrap();
        let text = serde_json::to_string(&t).unwrap();
        assert!(text.contains("\"entries\":[[0,0,"));
        let back: MomentTable = serde_json::from_str(&text).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn gain_values() {
        let g = QuadratureGrid::symmetric(10.0, 5001).unwrap();
        let small = gain(Complex64::new(0.05, 0.0), 1, &g).unwrap();
        assert!((small - 2.0).abs() / 2.0 < 0.02, "{small}");
        let mut last = f64::INFINITY;
        for i in 0..=6 {
            let a = 0.5 + 0.25 * i as f64;
            let v = gain(Complex64::new(a, 0.0), 1, &g).unwrap();
            assert!(v < last);
            last = v;
        }
        let s = st(StateSpec::pacs(2.0, 1));
        let direct = s.normal_ordered(0, 1).norm() / 2.0;
        assert!((gain(Complex64::new(2.0, 0.0), 1, &g).unwrap() - direct).abs() < 1e-6);
        assert!(matches!(gain(Complex64::new(0.0, 0.0), 1, &g), Err(Error::VanishingAmplitude(_))));
    }

    #[test]
    fn variances() {
        for &(alpha, theta) in &[(0.0, 0.0), (0.7, 0.4), (2.0, 1.9)] {
            let s = st(StateSpec::coherent(alpha));
            let r = quadrature_variance(&s, theta, &grid_for(&s)).unwrap();
            assert!((r.normalized_variance - 1.0).abs() < 1e-8);
            assert!(!r.squeezed);
            assert_eq!(r.normalized_variance, 2.0 * r.raw_variance);
        }
        let s = st(StateSpec::pacs(1.0, 1));
        let r = quadrature_variance(&s, 0.0, &grid_for(&s)).unwrap();
        assert!((r.normalized_variance - 1.0).abs() < 1e-3);
        let s = st(StateSpec::pacs(1.5, 1));
        let g = grid_for(&s);
        assert!(quadrature_variance(&s, 0.0, &g).unwrap().squeezed);
        let p = quadrature_variance(&s, FRAC_PI_2, &g).unwrap();
        assert!(p.normalized_variance > 1.0 && !p.squeezed);
    }

    #[test]
    fn variance_routes_agree() {
        for spec in [StateSpec::pacs(1.2, 1), StateSpec::svs(0.5, 0.3), StateSpec::pasvs(0.4, 0.0, 2)] {
            let s = st(spec);
            let g = grid_for(&s);
            for &theta in &[0.0, 0.7, FRAC_PI_2] {
                let a = quadrature_variance(&s, theta, &g).unwrap();
                let b = quadrature_variance_from_moments(&s, theta, &g).unwrap();
                assert!((a.normalized_variance - b.normalized_variance).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn uncertainty_products() {
        let s = st(StateSpec::coherent(Complex64::new(0.9, 0.4)));
        let g = grid_for(&s);
        let product = quadrature_variance(&s, 0.0, &g).unwrap().normalized_variance
            * quadrature_variance(&s, FRAC_PI_2, &g).unwrap().normalized_variance;
        assert!((product - 1.0).abs() < 1e-6);
        let s = st(StateSpec::pacs(2.0, 1));
        let g = grid_for(&s);
        let product = quadrature_variance(&s, 0.0, &g).unwrap().normalized_variance
            * quadrature_variance(&s, FRAC_PI_2, &g).unwrap().normalized_variance;
        assert!(product > 1.0 + 1e-6);
    }

    #[test]
    fn mean_photon_examples() {
        let s = st(StateSpec::fock(5));
        assert!((mean_photon(&s, &grid_for(&s)).unwrap() - 5.0).abs() < 1e-8);
        let s = st(StateSpec::coherent(0.7));
        assert!((mean_photon(&s, &grid_for(&s)).unwrap() - 0.49).abs() < 1e-8);
        let s = st(StateSpec::svs(0.5, 0.0));
        let expected = 0.5f64.sinh().powi(2);
        assert!((mean_photon(&s, &grid_for(&s)).unwrap() - expected).abs() < 1e-6);
    }
}
