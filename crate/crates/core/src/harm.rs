//! Converting a rejection at overrepresentation factor β into bounds on
//! real-world harm, and choosing β from harm thresholds.
//!
//! The population-average reporting rate cancels in every conversion, so it
//! never appears as an input.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Assumptions about how a group reports relative to the population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportingAssumptions {
    /// Bound on the group's report-to-incidence ratio relative to the
    /// population's.
    #[serde(default = "one")]
    pub b: f64,
    /// Relative true-report rate.
    pub gamma_tr: f64,
    /// Relative false-report rate.
    pub gamma_fr: f64,
}

fn one() -> f64 {
    1.0
}

impl ReportingAssumptions {
    pub fn new(b: f64, gamma_tr: f64, gamma_fr: f64) -> Result<Self> {
        let a = Self {
            b,
            gamma_tr,
            gamma_fr,
        };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b >= 1.0) {
            return Err(Error::AssumptionViolation(format!(
                "b must be >= 1, got {}",
                self.b
            )));
        }
        if !(self.gamma_fr >= 0.0) {
            return Err(Error::AssumptionViolation(format!(
                "false-report rate must be >= 0, got {}",
                self.gamma_fr
            )));
        }
        check_gammas(self.gamma_tr, self.gamma_fr)
    }
}

fn check_gammas(gamma_tr: f64, gamma_fr: f64) -> Result<()> {
    if gamma_tr > gamma_fr {
        Ok(())
    } else {
        Err(Error::AssumptionViolation(format!(
            "true-report rate ({gamma_tr}) must exceed false-report rate ({gamma_fr})"
        )))
    }
}

/// Relative risk lower bound `β / b`.
pub fn rr_lower_bound(beta: f64, b: f64) -> f64 {
    beta / b
}

/// Incidence-rate lower bound before clamping to `[0, 1]`.
pub fn ir_lower_bound_raw(beta: f64, gamma_tr: f64, gamma_fr: f64) -> Result<f64> {
    check_gammas(gamma_tr, gamma_fr)?;
    Ok((beta - gamma_fr) / (gamma_tr - gamma_fr))
}

/// Incidence-rate lower bound `(β − γ^FR)/(γ^TR − γ^FR)`, clamped to `[0, 1]`.
pub fn ir_lower_bound(beta: f64, a: &ReportingAssumptions) -> Result<f64> {
    let raw = ir_lower_bound_raw(beta, a.gamma_tr, a.gamma_fr)?;
    if !(0.0..=1.0).contains(&raw) {
        log::warn!("incidence-rate bound {raw} outside [0, 1]; clamping");
    }
    Ok(raw.clamp(0.0, 1.0))
}

/// Lower bound on the incidence gap to some other group when reporting rates
/// do not vary by group: `(β − 1)/(γ^TR − γ^FR)`.
pub fn ir_gap_bound(beta: f64, gamma_tr: f64, gamma_fr: f64) -> Result<f64> {
    check_gammas(gamma_tr, gamma_fr)?;
    if !(beta >= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "gap bound needs beta >= 1, got {beta}"
        )));
    }
    Ok((beta - 1.0) / (gamma_tr - gamma_fr))
}

/// Smallest β whose rejection certifies incidence above `ir_threshold` for
/// every group: `max_G((γ^TR_G − γ^FR_G)·IR + γ^FR_G)`.
pub fn choose_beta(ir_threshold: f64, assumptions: &[ReportingAssumptions]) -> Result<f64> {
    if !(0.0..=1.0).contains(&ir_threshold) {
        return Err(Error::InvalidParameter(format!(
            "incidence threshold must lie in [0, 1], got {ir_threshold}"
        )));
    }
    assumptions
        .iter()
        .map(|a| (a.gamma_tr - a.gamma_fr) * ir_threshold + a.gamma_fr)
        .reduce(f64::max)
        .ok_or_else(|| Error::InvalidParameter("choose_beta needs at least one group".into()))
}

/// β certifying relative risk `rr_threshold` under RIR bound `b`.
pub fn choose_beta_rr(rr_threshold: f64, b: f64) -> f64 {
    rr_threshold * b
}
