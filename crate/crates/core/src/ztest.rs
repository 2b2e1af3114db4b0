//! Sequential Z-test: an in-group count compared against an
//! iterated-logarithm boundary above the mean under the alternative.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Constant inside the square root of the boundary.
pub const DEFAULT_LIL_CONSTANT: f64 = 2.07;

/// Constant used by the power analysis, `½·√2.06`.
pub fn power_constant() -> f64 {
    0.5 * 2.06f64.sqrt()
}

/// Scale of the boundary correction term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// `C = 1/2`: valid in finite samples.
    FiniteSample,
    /// `C = sqrt(βμ⁰(1−βμ⁰))`: valid only asymptotically.
    Asymptotic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ZTestState {
    pub t: u64,
    pub omega: u64,
}

impl ZTestState {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn update(self, in_group: bool) -> Self {
        Self {
            t: self.t + 1,
            omega: self.omega + u64::from(in_group),
        }
    }
}

impl fmt::Display for ZTestState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.t, self.omega)
    }
}

impl FromStr for ZTestState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let fields = parse_tuple(s, 2)?;
        let parse = |v: &str| {
            v.parse::<u64>()
                .map_err(|e| Error::Snapshot(format!("bad z-test field '{v}': {e}")))
        };
        let state = Self {
            t: parse(fields[0])?,
            omega: parse(fields[1])?,
        };
        if state.omega > state.t {
            return Err(Error::Snapshot(format!("omega exceeds t in '{s}'")));
        }
        Ok(state)
    }
}

pub(crate) fn parse_tuple(s: &str, n: usize) -> Result<Vec<&str>> {
    let inner = s
        .trim()
        .strip_prefix('(')
        .and_then(|r| r.strip_suffix(')'))
        .ok_or_else(|| Error::Snapshot(format!("expected parenthesised tuple, got '{s}'")))?;
    let fields: Vec<&str> = inner.split(',').map(str::trim).collect();
    if fields.len() != n {
        return Err(Error::Snapshot(format!(
            "expected {n} fields, got {} in '{s}'",
            fields.len()
        )));
    }
    Ok(fields)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZTestParams {
    pub beta_mu0: f64,
    /// Per-test level, already divided by the number of groups.
    pub alpha_eff: f64,
    pub variant: Variant,
    pub min_t: u64,
    pub lil_constant: f64,
}

impl ZTestParams {
    pub fn new(beta_mu0: f64, alpha_eff: f64, variant: Variant, min_t: u64) -> Result<Self> {
        let p = Self {
            beta_mu0,
            alpha_eff,
            variant,
            min_t,
            lil_constant: DEFAULT_LIL_CONSTANT,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta_mu0 > 0.0 && self.beta_mu0 < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "beta*mu0 must lie in (0, 1), got {}",
                self.beta_mu0
            )));
        }
        if !(self.alpha_eff > 0.0 && self.alpha_eff < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "per-test level must lie in (0, 1), got {}",
                self.alpha_eff
            )));
        }
        if !(self.lil_constant > 0.0 && self.lil_constant.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "boundary constant must be positive, got {}",
                self.lil_constant
            )));
        }
        Ok(())
    }

    /// The correction scale `C`.
    pub fn scale(&self) -> f64 {
        match self.variant {
            Variant::FiniteSample => 0.5,
            Variant::Asymptotic => (self.beta_mu0 * (1.0 - self.beta_mu0)).sqrt(),
        }
    }
}

/// Rejection boundary
/// `θ_t = t·βμ⁰ + C·sqrt(k·t·ln((2 + log₂t)² / α_eff))`.
pub fn zt_threshold(t: u64, p: &ZTestParams) -> Result<f64> {
    if t == 0 {
        return Err(Error::InvalidParameter("threshold needs t >= 1".into()));
    }
    p.validate()?;
    Ok(threshold_unchecked(t, p))
}

#[inline]
pub(crate) fn threshold_unchecked(t: u64, p: &ZTestParams) -> f64 {
    let t = t as f64;
    let log2t = t.ln() / std::f64::consts::LN_2;
    let iter_log = (2.0 + log2t).powi(2) / p.alpha_eff;
    t * p.beta_mu0 + p.scale() * (p.lil_constant * t * iter_log.ln()).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Reject,
    Continue,
}

pub fn zt_decide(s: &ZTestState, p: &ZTestParams) -> Result<Decision> {
    let theta = zt_threshold(s.t, p)?;
    Ok(if s.t >= p.min_t && s.omega as f64 >= theta {
        Decision::Reject
    } else {
        Decision::Continue
    })
}

/// Advisory high-probability stopping-time bound for the finite-sample test:
/// the smallest `t` with
/// `t / (1 + ln((2 + log₂t)²)) ≥ 4·C₁·ln(max(|𝒢|/α, 1/δ)) / Δ²`.
pub fn zt_power_bound(delta_max: f64, n_groups: usize, alpha: f64, delta: f64) -> Result<u64> {
    if !(delta_max > 0.0) {
        return Err(Error::NoFiniteBound(format!(
            "gap must be positive, got {delta_max}"
        )));
    }
    if delta_max >= 1.0 || n_groups == 0 || !(alpha > 0.0) || !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "need gap in (0,1), groups >= 1, alpha > 0, delta in (0,1); got {delta_max}, {n_groups}, {alpha}, {delta}"
        )));
    }
    let target = 4.0 * power_constant() * (n_groups as f64 / alpha).max(1.0 / delta).ln()
        / (delta_max * delta_max);
    let lhs = |t: u64| {
        let t = t as f64;
        t / (1.0 + (2.0 + t.log2()).powi(2).ln())
    };
    if lhs(1) >= target {
        return Ok(1);
    }
    let mut hi = 2u64;
    while lhs(hi) < target {
        hi = hi
            .checked_mul(2)
            .ok_or_else(|| Error::NoFiniteBound("bound overflows u64".into()))?;
    }
    let mut lo = hi / 2;
    // lhs(lo) < target <= lhs(hi)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if lhs(mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
