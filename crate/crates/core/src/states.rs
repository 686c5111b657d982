//! Truncated Fock-basis state vectors for the state families used in the
//! tomography experiments, and their canonical textual descriptors.

use std::f64::consts::{LN_2, PI};
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::special::{laguerre, legendre, log_factorial};

/// Default tail probability left out of a truncated state.
pub const DEFAULT_EPSILON: f64 = 1e-12;

/// Largest admissible Fock cutoff.
pub const TRUNCATION_CAP: usize = 4096;

/// Photon numbers scanned past the cap before declaring overflow.
const SCAN_MARGIN: usize = 1024;

/// `exp(-80)`: log-weight gap below the peak at which the scan stops.
const NEGLIGIBLE_LOG_GAP: f64 = 80.0;

/// Symbolic descriptor of a single-mode pure state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StateSpec {
    Fock { n: usize },
    Coherent { alpha: Complex64 },
    /// `m`-photon-added coherent state `|alpha, m>`.
    Pacs { alpha: Complex64, m: usize },
    /// Squeezed vacuum with `xi = r e^{i phi}`.
    Svs { r: f64, phi: f64 },
    /// `m`-photon-added squeezed vacuum `|xi, m>`.
    Pasvs { r: f64, phi: f64, m: usize },
    /// Even coherent state `(|alpha> + |-alpha>)/norm`.
    EvenCat { alpha: Complex64 },
}

impl StateSpec {
    pub fn fock(n: usize) -> Self {
        StateSpec::Fock { n }
    }

    pub fn coherent(alpha: impl Into<Complex64>) -> Self {
        StateSpec::Coherent {
            alpha: alpha.into(),
        }
    }

    pub fn pacs(alpha: impl Into<Complex64>, m: usize) -> Self {
        StateSpec::Pacs {
            alpha: alpha.into(),
            m,
        }
    }

    pub fn svs(r: f64, phi: f64) -> Self {
        StateSpec::Svs { r, phi }
    }

    pub fn pasvs(r: f64, phi: f64, m: usize) -> Self {
        StateSpec::Pasvs { r, phi, m }
    }

    pub fn even_cat(alpha: impl Into<Complex64>) -> Self {
        StateSpec::EvenCat {
            alpha: alpha.into(),
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            StateSpec::Fock { .. } => "fock",
            StateSpec::Coherent { .. } => "cs",
            StateSpec::Pacs { .. } => "pacs",
            StateSpec::Svs { .. } => "svs",
            StateSpec::Pasvs { .. } => "pasvs",
            StateSpec::EvenCat { .. } => "cat",
        }
    }

    fn validate(&self) -> Result<()> {
        let check_alpha = |alpha: &Complex64| {
            if alpha.re.is_finite() && alpha.im.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter {
                    name: "alpha",
                    reason: format!("{alpha} is not finite"),
                })
            }
        };
        let check_squeeze = |r: f64, phi: f64| {
            if !(r.is_finite() && r >= 0.0) {
                return Err(Error::InvalidParameter {
                    name: "r",
                    reason: format!("{r} must be finite and non-negative"),
                });
            }
            if !phi.is_finite() {
                return Err(Error::InvalidParameter {
                    name: "phi",
                    reason: format!("{phi} is not finite"),
                });
            }
            Ok(())
        };
        match self {
            StateSpec::Fock { .. } => Ok(()),
            StateSpec::Coherent { alpha }
            | StateSpec::Pacs { alpha, .. }
            | StateSpec::EvenCat { alpha } => check_alpha(alpha),
            StateSpec::Svs { r, phi } | StateSpec::Pasvs { r, phi, .. } => check_squeeze(*r, *phi),
        }
    }

    /// Unnormalized log photon-number weight `ln P(k)`, `-inf` off support.
    fn log_weight(&self, k: usize) -> f64 {
        match *self {
            StateSpec::Fock { n } => {
                if k == n {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            StateSpec::Coherent { alpha } => k_log(k, alpha.norm_sqr().ln()) - log_factorial(k),
            StateSpec::Pacs { alpha, m } => {
                if k < m {
                    return f64::NEG_INFINITY;
                }
                let n = k - m;
                log_factorial(k) - 2.0 * log_factorial(n) + k_log(n, alpha.norm_sqr().ln())
            }
            StateSpec::Svs { r, .. } => squeezed_log_weight(r, 0, k),
            StateSpec::Pasvs { r, m, .. } => squeezed_log_weight(r, m, k),
            StateSpec::EvenCat { alpha } => {
                if k % 2 == 1 {
                    f64::NEG_INFINITY
                } else {
                    k_log(k, alpha.norm_sqr().ln()) - log_factorial(k)
                }
            }
        }
    }

    /// Log magnitude and phase of the (pre-normalization) amplitude `c_k`.
    fn amplitude(&self, k: usize) -> Complex64 {
        match *self {
            StateSpec::Fock { n } => {
                if k == n {
                    Complex64::new(1.0, 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            }
            StateSpec::Coherent { alpha } => coherent_amplitude(alpha, k),
            StateSpec::Pacs { alpha, m } => {
                if k < m {
                    return Complex64::new(0.0, 0.0);
                }
                let n = k - m;
                let mu = alpha.norm_sqr();
                let log_norm = 0.5 * (log_factorial(m) + laguerre(m, -mu).ln());
                let log_mag = -0.5 * mu + 0.5 * log_factorial(k) - log_factorial(n)
                    + k_log(n, alpha.norm().ln())
                    - log_norm;
                Complex64::from_polar(log_mag.exp(), n as f64 * alpha.arg())
            }
            StateSpec::Svs { r, phi } => squeezed_amplitude(r, phi, 0, k),
            StateSpec::Pasvs { r, phi, m } => squeezed_amplitude(r, phi, m, k),
            StateSpec::EvenCat { alpha } => {
                if k % 2 == 1 {
                    return Complex64::new(0.0, 0.0);
                }
                let mu = alpha.norm_sqr();
                let norm = (2.0 * (1.0 + (-2.0 * mu).exp())).sqrt();
                coherent_amplitude(alpha, k) * (2.0 / norm)
            }
        }
    }
}

/// `k * ln_x` with the convention `0 * ln 0 = 0`.
fn k_log(k: usize, ln_x: f64) -> f64 {
    if k == 0 {
        0.0
    } else {
        k as f64 * ln_x
    }
}

fn coherent_amplitude(alpha: Complex64, k: usize) -> Complex64 {
    let mu = alpha.norm_sqr();
    let log_mag = -0.5 * mu + k_log(k, alpha.norm().ln()) - 0.5 * log_factorial(k);
    Complex64::from_polar(log_mag.exp(), k as f64 * alpha.arg())
}

fn squeezed_log_weight(r: f64, m: usize, k: usize) -> f64 {
    if k < m || (k - m) % 2 == 1 {
        return f64::NEG_INFINITY;
    }
    let n = (k - m) / 2;
    log_factorial(k) - 2.0 * n as f64 * LN_2 - 2.0 * log_factorial(n) + k_log(2 * n, r.tanh().ln())
}

fn squeezed_amplitude(r: f64, phi: f64, m: usize, k: usize) -> Complex64 {
    if k < m || (k - m) % 2 == 1 {
        return Complex64::new(0.0, 0.0);
    }
    let n = (k - m) / 2;
    let cosh = r.cosh();
    let log_norm = log_factorial(m) + (m as f64 + 1.0) * cosh.ln() + legendre(m, cosh).ln();
    let log_mag = 0.5 * log_factorial(k) - n as f64 * LN_2 - log_factorial(n)
        + k_log(n, r.tanh().ln())
        - 0.5 * log_norm;
    let sign = if n.is_multiple_of(2) { 1.0 } else { -1.0 };
    Complex64::from_polar(sign * log_mag.exp(), n as f64 * phi)
}

/// Smallest Fock cutoff `N` whose discarded tail probability is below `epsilon`.
pub fn auto_truncate(spec: &StateSpec, epsilon: f64) -> Result<usize> {
    if !(epsilon > 0.0 && epsilon <= 1e-6) {
        return Err(Error::InvalidParameter {
            name: "epsilon",
            reason: format!("{epsilon} outside (0, 1e-6]"),
        });
    }
    spec.validate()?;
    if let StateSpec::Fock { n } = *spec {
        if n > TRUNCATION_CAP {
            return Err(Error::TruncationOverflow {
                needed: n,
                cap: TRUNCATION_CAP,
            });
        }
        return Ok(n);
    }

    let limit = TRUNCATION_CAP + SCAN_MARGIN;
    let mut log_weights = Vec::new();
    let mut peak = f64::NEG_INFINITY;
    let mut peak_at = 0;
    let mut decayed = false;
    for k in 0..=limit {
        let lw = spec.log_weight(k);
        log_weights.push(lw);
        if lw > peak {
            peak = lw;
            peak_at = k;
        }
        // two consecutive negligible points past the peak covers parity-restricted support
        if k > peak_at + 1
            && lw < peak - NEGLIGIBLE_LOG_GAP
            && log_weights[k - 1] < peak - NEGLIGIBLE_LOG_GAP
        {
            decayed = true;
            break;
        }
    }
    if !decayed {
        return Err(Error::TruncationOverflow {
            needed: limit,
            cap: TRUNCATION_CAP,
        });
    }

    let probs: Vec<f64> = log_weights.iter().map(|lw| (lw - peak).exp()).collect();
    let total: f64 = probs.iter().sum();
    let threshold = epsilon * total;
    let mut tail = 0.0;
    let mut cutoff = 0;
    for k in (0..probs.len()).rev() {
        // tail now holds the mass strictly above k
        if tail >= threshold {
            cutoff = k + 1;
            break;
        }
        tail += probs[k];
    }
    if cutoff > TRUNCATION_CAP {
        return Err(Error::TruncationOverflow {
            needed: cutoff,
            cap: TRUNCATION_CAP,
        });
    }
    Ok(cutoff)
}

/// Normalized amplitudes `c_0 ..= c_N` of a pure state in the photon-number basis.
#[derive(Debug, Clone, PartialEq)]
pub struct FockVector {
    amps: Vec<Complex64>,
}

impl FockVector {
    /// Wraps arbitrary amplitudes, renormalizing them.
    pub fn from_amplitudes(amps: Vec<Complex64>) -> Result<Self> {
        if amps.is_empty() {
            return Err(Error::InvalidParameter {
                name: "amps",
                reason: "empty amplitude vector".into(),
            });
        }
        let norm = amps.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::InvalidParameter {
                name: "amps",
                reason: format!("norm {norm} not positive and finite"),
            });
        }
        Ok(FockVector {
            amps: amps.into_iter().map(|c| c / norm).collect(),
        })
    }

    pub fn amps(&self) -> &[Complex64] {
        &self.amps
    }

    /// Highest retained photon number.
    pub fn truncation(&self) -> usize {
        self.amps.len() - 1
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|c| c.norm_sqr()).sum()
    }

    /// Normal-ordered expectation `<a^+k a^l>` summed directly over amplitudes.
    pub fn normal_ordered(&self, k: usize, l: usize) -> Complex64 {
        let n_max = self.truncation();
        let mut acc = Complex64::new(0.0, 0.0);
        for j in 0.. {
            if j + k > n_max || j + l > n_max {
                break;
            }
            let log_coef = 0.5 * (log_factorial(j + k) + log_factorial(j + l)) - log_factorial(j);
            acc += self.amps[j + k].conj() * self.amps[j + l] * log_coef.exp();
        }
        acc
    }

    pub fn mean_photon_number(&self) -> f64 {
        self.amps
            .iter()
            .enumerate()
            .map(|(n, c)| n as f64 * c.norm_sqr())
            .sum()
    }
}

/// Builds the truncated, normalized state described by `spec`.
pub fn build_state(spec: &StateSpec, epsilon: f64) -> Result<FockVector> {
    let cutoff = auto_truncate(spec, epsilon)?;
    let amps = (0..=cutoff).map(|k| spec.amplitude(k)).collect();
    FockVector::from_amplitudes(amps)
}

/// `|<beta|psi>|^2` for a coherent state `|beta>`.
pub fn fidelity_with_coherent(state: &FockVector, beta: Complex64) -> f64 {
    let overlap: Complex64 = state
        .amps()
        .iter()
        .enumerate()
        .map(|(n, c)| coherent_amplitude(beta, n).conj() * c)
        .sum();
    overlap.norm_sqr().min(1.0)
}

impl fmt::Display for StateSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StateSpec::Fock { n } => write!(f, "fock:n={n}"),
            StateSpec::Coherent { alpha } => write!(f, "cs:alpha={}", fmt_complex(*alpha)),
            StateSpec::Pacs { alpha, m } => {
                write!(f, "pacs:alpha={},m={m}", fmt_complex(*alpha))
            }
            StateSpec::Svs { r, phi } => write!(f, "svs:r={r},phi={phi}"),
            StateSpec::Pasvs { r, phi, m } => write!(f, "pasvs:r={r},phi={phi},m={m}"),
            StateSpec::EvenCat { alpha } => write!(f, "cat:alpha={}", fmt_complex(*alpha)),
        }
    }
}

fn fmt_complex(z: Complex64) -> String {
    if z.im < 0.0 || (z.im == 0.0 && z.im.is_sign_negative()) {
        format!("{}-{}i", z.re, -z.im)
    } else {
        format!("{}+{}i", z.re, z.im)
    }
}

/// Parses `1.5`, `0.7+0i`, `-0.2i`, `1e-3-2.5i`.
fn parse_complex(text: &str) -> std::result::Result<Complex64, String> {
    let text = text.trim();
    if text.is_empty() {
        return Err("empty value".into());
    }
    let Some(body) = text.strip_suffix('i') else {
        return text
            .parse::<f64>()
            .map(|re| Complex64::new(re, 0.0))
            .map_err(|e| format!("`{text}` is not a number ({e})"));
    };
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&i| (bytes[i] == b'+' || bytes[i] == b'-') && !matches!(bytes[i - 1], b'e' | b'E'));
    let (re_txt, im_txt) = match split {
        Some(i) => (&body[..i], &body[i..]),
        None => ("0", body),
    };
    let im_txt = match im_txt {
        "" | "+" => "1",
        "-" => "-1",
        other => other,
    };
    let re = re_txt
        .parse::<f64>()
        .map_err(|e| format!("real part `{re_txt}` ({e})"))?;
    let im = im_txt
        .trim_start_matches('+')
        .parse::<f64>()
        .map_err(|e| format!("imaginary part `{im_txt}` ({e})"))?;
    Ok(Complex64::new(re, im))
}

impl FromStr for StateSpec {
    type Err = Error;

    fn from_str(input: &str) -> Result<Self> {
        let fail = |field: &str, position: usize, reason: String| Error::StateParse {
            input: input.to_string(),
            field: field.to_string(),
            position,
            reason,
        };
        let (family, params) = match input.split_once(':') {
            Some((fam, rest)) => (fam.trim(), Some((fam.len() + 1, rest))),
            None => (input.trim(), None),
        };
        let allowed: &[&str] = match family {
            "fock" => &["n"],
            "cs" | "coherent" => &["alpha"],
            "pacs" => &["alpha", "m"],
            "svs" => &["r", "phi"],
            "pasvs" => &["r", "phi", "m"],
            "cat" | "evencat" => &["alpha"],
            other => {
                return Err(fail(
                    "family",
                    0,
                    format!("unknown family `{other}` (expected fock, cs, pacs, svs, pasvs, cat)"),
                ))
            }
        };

        let mut alpha: Option<Complex64> = None;
        let mut n: Option<usize> = None;
        let mut m: Option<usize> = None;
        let mut r: Option<f64> = None;
        let mut phi: Option<f64> = None;
        if let Some((offset, rest)) = params {
            let mut pos = offset;
            for item in rest.split(',') {
                let item_pos = pos;
                pos += item.len() + 1;
                if item.trim().is_empty() {
                    continue;
                }
                let Some((key, value)) = item.split_once('=') else {
                    return Err(fail(item.trim(), item_pos, "expected key=value".into()));
                };
                let key = key.trim();
                let value_pos = item_pos + item.find('=').unwrap_or(0) + 1;
                if !allowed.contains(&key) {
                    return Err(fail(
                        key,
                        item_pos,
                        format!("not a parameter of `{family}` (allowed: {})", allowed.join(", ")),
                    ));
                }
                let dup = || fail(key, item_pos, "given more than once".into());
                let value = value.trim();
                match key {
                    "alpha" => {
                        let v = parse_complex(value).map_err(|e| fail(key, value_pos, e))?;
                        if alpha.replace(v).is_some() {
                            return Err(dup());
                        }
                    }
                    "n" | "m" => {
                        let v = value
                            .parse::<usize>()
                            .map_err(|e| fail(key, value_pos, format!("`{value}` ({e})")))?;
                        let slot = if key == "n" { &mut n } else { &mut m };
                        if slot.replace(v).is_some() {
                            return Err(dup());
                        }
                    }
                    _ => {
                        let v = value
                            .parse::<f64>()
                            .map_err(|e| fail(key, value_pos, format!("`{value}` ({e})")))?;
                        if !v.is_finite() {
                            return Err(fail(key, value_pos, "must be finite".into()));
                        }
                        if key == "r" && v < 0.0 {
                            return Err(fail(key, value_pos, "must be non-negative".into()));
                        }
                        let slot = if key == "r" { &mut r } else { &mut phi };
                        if slot.replace(v).is_some() {
                            return Err(dup());
                        }
                    }
                }
            }
        }

        let end = input.len();
        let need = |name: &str| fail(name, end, "missing".into());
        let spec = match family {
            "fock" => StateSpec::Fock {
                n: n.ok_or_else(|| need("n"))?,
            },
            "cs" | "coherent" => StateSpec::Coherent {
                alpha: alpha.ok_or_else(|| need("alpha"))?,
            },
            "pacs" => StateSpec::Pacs {
                alpha: alpha.ok_or_else(|| need("alpha"))?,
                m: m.ok_or_else(|| need("m"))?,
            },
            "svs" => StateSpec::Svs {
                r: r.ok_or_else(|| need("r"))?,
                phi: phi.unwrap_or(0.0).rem_euclid(2.0 * PI),
            },
            "pasvs" => StateSpec::Pasvs {
                r: r.ok_or_else(|| need("r"))?,
                phi: phi.unwrap_or(0.0).rem_euclid(2.0 * PI),
                m: m.ok_or_else(|| need("m"))?,
            },
            _ => StateSpec::EvenCat {
                alpha: alpha.ok_or_else(|| need("alpha"))?,
            },
        };
        Ok(spec)
    }
}

impl Serialize for StateSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for StateSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}
