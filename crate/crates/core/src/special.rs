//! Orthogonal polynomials and factorial helpers.
//!
//! Everything that feeds a tomogram goes through the Gaussian-weighted,
//! orthonormal Hermite functions `psi_n(x)`; the raw physicists' Hermite
//! polynomial is only used as the (low order) kernel of moment extraction.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Largest order accepted by [`raw_hermite`].
pub const RAW_HERMITE_MAX_ORDER: usize = 60;

const LOG_FACTORIAL_TABLE_LEN: usize = 10_001;
const RESCALE_THRESHOLD: f64 = 1e200;
const RESCALE_FACTOR: f64 = 1e-200;

/// `pi^{-1/4}`, the value of `psi_0(0)`.
pub fn psi0_peak() -> f64 {
    PI.powf(-0.25)
}

/// Orthonormal Hermite function `psi_n(x) = H_n(x) e^{-x^2/2} / (2^n n! sqrt(pi))^{1/2}`.
pub fn weighted_hermite(n: usize, x: f64) -> f64 {
    hermite_functions(n, x)[n]
}

/// All Hermite functions `psi_0(x) ..= psi_{n_max}(x)` at one abscissa.
///
/// The recurrence runs on an unweighted seed and carries a separate log
/// scale, so orders in the thousands and `|x|` up to ~40 neither overflow
/// nor lose the Gaussian tail to premature underflow.
pub fn hermite_functions(n_max: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n_max + 1);
    hermite_functions_into(n_max, x, &mut out);
    out
}

/// Buffer-reusing form of [`hermite_functions`]; `out` is cleared first.
pub fn hermite_functions_into(n_max: usize, x: f64, out: &mut Vec<f64>) {
    out.clear();
    let gauss_log = -0.5 * x * x;

    let mut prev = 0.0_f64;
    let mut cur = psi0_peak();
    let mut log_scale = 0.0_f64;
    let mut factor = gauss_log.exp();
    out.push(cur * factor);

    for n in 0..n_max {
        let nf = n as f64;
        let next = x * (2.0 / (nf + 1.0)).sqrt() * cur - (nf / (nf + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
        if cur.abs() > RESCALE_THRESHOLD {
            cur *= RESCALE_FACTOR;
            prev *= RESCALE_FACTOR;
            log_scale -= RESCALE_FACTOR.ln();
            factor = (log_scale + gauss_log).exp();
        }
        out.push(cur * factor);
    }
}

/// Physicists' Hermite polynomial `H_n(x)`.
pub fn raw_hermite(n: usize, x: f64) -> Result<f64> {
    if n > RAW_HERMITE_MAX_ORDER {
        return Err(Error::OrderTooLarge {
            what: "raw Hermite",
            order: n,
            max: RAW_HERMITE_MAX_ORDER,
        });
    }
    let mut prev = 0.0;
    let mut cur = 1.0;
    for k in 0..n {
        let next = 2.0 * x * cur - 2.0 * k as f64 * prev;
        prev = cur;
        cur = next;
    }
    Ok(cur)
}

/// Laguerre polynomial `L_m(x)`.
pub fn laguerre(m: usize, x: f64) -> f64 {
    let mut prev = 0.0;
    let mut cur = 1.0;
    for k in 0..m {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0 - x) * cur - kf * prev) / (kf + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// Legendre polynomial `P_m(x)`.
pub fn legendre(m: usize, x: f64) -> f64 {
    let mut prev = 0.0;
    let mut cur = 1.0;
    for k in 0..m {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0) * x * cur - kf * prev) / (kf + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

fn log_factorial_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = Vec::with_capacity(LOG_FACTORIAL_TABLE_LEN);
        let mut acc = 0.0_f64;
        table.push(0.0);
        for k in 1..LOG_FACTORIAL_TABLE_LEN {
            acc += (k as f64).ln();
            table.push(acc);
        }
        table
    })
}

/// `ln(n!)`. Tabulated up to 10^4, Stirling series beyond.
pub fn log_factorial(n: usize) -> f64 {
    let table = log_factorial_table();
    if n < table.len() {
        return table[n];
    }
    let x = n as f64 + 1.0;
    // ln Gamma(x) for large x
    (x - 0.5) * x.ln() - x + 0.5 * (2.0 * PI).ln() + 1.0 / (12.0 * x) - 1.0 / (360.0 * x.powi(3))
        + 1.0 / (1260.0 * x.powi(5))
}
