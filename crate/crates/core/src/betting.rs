//! Betting-style e-process for a single group.
//!
//! Log-wealth grows by `ln(1 + λ_t(1[X_t∈G] − βμ⁰))` each report, with the
//! bet `λ_t ∈ [0, 1]` chosen by Online Newton Step. Under the null
//! `μ_G ≤ βμ⁰_G` the wealth is a nonnegative supermartingale, so Ville's
//! inequality turns the constant threshold `ln(|𝒢|/α)` into a valid test.

use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ztest::parse_tuple;

static ONS_GAIN: LazyLock<f64> = LazyLock::new(|| 2.0 / (2.0 - 3f64.ln()));

/// Step-size constant `2/(2 − ln 3)` of the Online Newton Step update.
pub fn ons_gain() -> f64 {
    *ONS_GAIN
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BetState {
    pub t: u64,
    pub log_wealth: f64,
    pub lambda: f64,
    pub z_sq_sum: f64,
}

impl BetState {
    /// `λ₀ = 0`, zero wealth, empty accumulator.
    pub fn new() -> Self {
        Self::default()
    }

    /// Applies one report: wealth update with the current bet, then the ONS
    /// step that produces the next bet.
    #[inline]
    pub fn step(self, in_group: bool, beta_mu0: f64) -> Self {
        let excess = f64::from(u8::from(in_group)) - beta_mu0;
        let growth = 1.0 + self.lambda * excess;
        let z = excess / growth;
        let z_sq_sum = self.z_sq_sum + z * z;
        let lambda = (self.lambda + ons_gain() * z / (1.0 + z_sq_sum)).clamp(0.0, 1.0);
        Self {
            t: self.t + 1,
            log_wealth: self.log_wealth + growth.ln(),
            lambda,
            z_sq_sum,
        }
    }
}

/// Free-function form of [`BetState::step`].
pub fn bet_step(s: BetState, in_group: bool, beta_mu0: f64) -> BetState {
    s.step(in_group, beta_mu0)
}

impl fmt::Display for BetState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // `{:?}` on f64 is the shortest round-trip representation.
        write!(
            f,
            "({}, {:?}, {:?}, {:?})",
            self.t, self.log_wealth, self.lambda, self.z_sq_sum
        )
    }
}

impl FromStr for BetState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let f = parse_tuple(s, 4)?;
        let real = |v: &str| {
            v.parse::<f64>()
                .map_err(|e| Error::Snapshot(format!("bad betting field '{v}': {e}")))
        };
        let state = BetState {
            t: f[0]
                .parse()
                .map_err(|e| Error::Snapshot(format!("bad betting field '{}': {e}", f[0])))?,
            log_wealth: real(f[1])?,
            lambda: real(f[2])?,
            z_sq_sum: real(f[3])?,
        };
        if !(0.0..=1.0).contains(&state.lambda) || !(state.z_sq_sum >= 0.0) {
            return Err(Error::Snapshot(format!(
                "betting state out of domain: '{s}'"
            )));
        }
        Ok(state)
    }
}

/// Ville threshold `ln(|𝒢|/α)`, constant in time.
pub fn bet_threshold(n_groups: usize, alpha: f64) -> f64 {
    (n_groups as f64 / alpha).ln()
}

/// Bet maximising expected log-wealth:
/// `Proj_[0,1]((μ − βμ⁰) / (βμ⁰(1 − βμ⁰)))`.
pub fn lambda_star(mu: f64, beta_mu0: f64) -> f64 {
    ((mu - beta_mu0) / (beta_mu0 * (1.0 - beta_mu0))).clamp(0.0, 1.0)
}

/// `E[ω_T(λ)] = T·[μ ln(1 + λ(1 − βμ⁰)) + (1 − μ) ln(1 − λβμ⁰)]` for a
/// constant bet.
pub fn expected_log_wealth(mu: f64, beta_mu0: f64, lambda: f64, horizon: u64) -> f64 {
    let up = (1.0 + lambda * (1.0 - beta_mu0)).ln();
    let down = (1.0 - lambda * beta_mu0).ln();
    // Avoid 0·(-inf) when μ ∈ {0, 1}.
    let per_step = if mu == 0.0 {
        down
    } else if mu == 1.0 {
        up
    } else {
        mu * up + (1.0 - mu) * down
    };
    horizon as f64 * per_step
}

/// Largest expected one-step log-wealth gain over groups and bets. Returns
/// the value and the index of the maximising group.
pub fn omega_star(group_params: &[(f64, f64)]) -> Result<(f64, usize)> {
    group_params
        .iter()
        .enumerate()
        .map(|(i, &(mu, bm))| (expected_log_wealth(mu, bm, lambda_star(mu, bm), 1), i))
        .fold(None, |best: Option<(f64, usize)>, cur| match best {
            Some(b) if b.0 >= cur.0 => Some(b),
            _ => Some(cur),
        })
        .ok_or_else(|| Error::InvalidParameter("omega_star needs at least one group".into()))
}

/// Advisory expected-stopping-time bound
/// `max{16/ω⋆², 4 ln(|𝒢|/α)/ω⋆} + 2/((1 − βμ⁰⋆)² ω⋆²)`.
pub fn bet_stopping_bound(
    omega_star: f64,
    n_groups: usize,
    alpha: f64,
    beta_mu0_star: f64,
) -> Result<f64> {
    if !(omega_star > 0.0) {
        return Err(Error::NoFiniteBound(format!(
            "omega_star must be positive, got {omega_star}"
        )));
    }
    if !(beta_mu0_star > 0.0 && beta_mu0_star < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "beta*mu0 must lie in (0, 1), got {beta_mu0_star}"
        )));
    }
    let w2 = omega_star * omega_star;
    let head = (16.0 / w2).max(4.0 * bet_threshold(n_groups, alpha) / omega_star);
    Ok(head + 2.0 / ((1.0 - beta_mu0_star).powi(2) * w2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn first_step_from_zero_bet() {
        let s = BetState::new().step(true, 0.2);
        assert_eq!(s.log_wealth, 0.0);
        assert_eq!(s.z_sq_sum, 0.8f64 * 0.8);
        // Unclamped: 2/(2 - ln 3) * 0.8 / 1.64 ≈ 1.082 > 1.
        let unclamped = 2.0 / (2.0 - 3f64.ln()) * 0.8 / (1.0 + 0.64);
        assert!(unclamped > 1.08 && unclamped < 1.09, "{unclamped}");
        assert_eq!(s.lambda, 1.0);
    }

    #[test]
    fn zero_bet_keeps_wealth() {
        let s = BetState {
            t: 3,
            log_wealth: 0.7,
            lambda: 0.0,
            z_sq_sum: 2.0,
        };
        assert_eq!(s.step(true, 0.3).log_wealth, 0.7);
        assert_eq!(s.step(false, 0.3).log_wealth, 0.7);
    }

    #[test]
    fn matches_straight_line_recomputation() {
        let bits = [
            true, false, false, true, true, false, true, false, false, false, true, true, true,
            false, false, true, false, true, false, false,
        ];
        let bm = 0.25;
        let mut w = 0.0f64;
        let mut lam = 0.0f64;
        let mut acc = 0.0f64;
        for &b in &bits {
            let x = if b { 1.0 } else { 0.0 };
            w += (1.0 + lam * (x - bm)).ln();
            let z = (x - bm) / (1.0 + lam * (x - bm));
            acc += z * z;
            lam += 2.0 / (2.0 - 3f64.ln()) * z / (1.0 + acc);
            lam = lam.clamp(0.0, 1.0);
        }
        let s = bits.iter().fold(BetState::new(), |s, &b| s.step(b, bm));
        assert_eq!(s.t, 20);
        assert!((s.log_wealth - w).abs() < 1e-12);
        assert!((s.lambda - lam).abs() < 1e-12);
        assert!((s.z_sq_sum - acc).abs() < 1e-12);
    }

    #[test]
    fn threshold_values() {
        assert_eq!(bet_threshold(1, 1.0), 0.0);
        assert!((bet_threshold(29, 0.1) - 5.669_880_8).abs() < 1e-6);
        assert!((bet_threshold(115, 0.1) - 7.047_517_2).abs() < 1e-6);
    }

    #[test]
    fn lambda_star_examples() {
        assert_eq!(lambda_star(0.2, 0.2), 0.0);
        assert!((lambda_star(0.3, 0.2) - 0.625).abs() < 1e-12);
        assert_eq!(lambda_star(0.9, 0.2), 1.0);
        assert_eq!(lambda_star(0.05, 0.2), 0.0);

        // Grid search on expected log-wealth agrees.
        let best = (0..=10_000)
            .map(|i| i as f64 / 10_000.0)
            .max_by(|a, b| {
                expected_log_wealth(0.3, 0.2, *a, 1)
                    .partial_cmp(&expected_log_wealth(0.3, 0.2, *b, 1))
                    .unwrap()
            })
            .unwrap();
        assert!((best - 0.625).abs() <= 1e-4);
    }

    #[test]
    fn expected_log_wealth_examples() {
        assert_eq!(expected_log_wealth(0.4, 0.2, 0.0, 1000), 0.0);
        for lam in [0.0, 0.3, 0.7, 1.0] {
            assert!(expected_log_wealth(0.15, 0.2, lam, 1) <= 0.0);
        }
        let one = expected_log_wealth(0.3, 0.2, 0.625, 1);
        assert!((expected_log_wealth(0.3, 0.2, 0.625, 7) - 7.0 * one).abs() < 1e-12);
    }

    #[test]
    fn expected_log_wealth_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let (lam, bm, mu) = (0.625, 0.2, 0.3);
        let sum: f64 = (0..n)
            .map(|_| {
                let x = if rng.gen_bool(mu) { 1.0 } else { 0.0 };
                (1.0f64 + lam * (x - bm)).ln()
            })
            .sum();
        let mc = sum / n as f64;
        // Per-draw std is below 0.5, so 5σ ≈ 2.5e-3.
        assert!(
            (mc - expected_log_wealth(mu, bm, lam, 1)).abs() < 2.5e-3,
            "{mc}"
        );
    }

    #[test]
    fn omega_star_examples() {
        assert_eq!(omega_star(&[(0.2, 0.2), (0.1, 0.1)]).unwrap().0, 0.0);
        let single = omega_star(&[(0.3, 0.2)]).unwrap().0;
        assert!((single - expected_log_wealth(0.3, 0.2, 0.625, 1)).abs() < 1e-15);

        let groups = [(0.3, 0.2), (0.5, 0.1)];
        let (w, idx) = omega_star(&groups).unwrap();
        let grid_best = groups
            .iter()
            .flat_map(|&(mu, bm)| {
                (0..=10_000).map(move |i| expected_log_wealth(mu, bm, i as f64 / 10_000.0, 1))
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(idx, 1);
        assert!((w - grid_best).abs() < 1e-8);
        assert!(omega_star(&[]).is_err());
    }

    #[test]
    fn stopping_bound_examples() {
        let a = bet_stopping_bound(0.05, 29, 0.1, 0.2).unwrap();
        let direct = (16.0 / 0.0025f64).max(4.0 * 290f64.ln() / 0.05) + 2.0 / (0.64 * 0.0025);
        assert!((a - direct).abs() < 1e-9);

        let b = bet_stopping_bound(0.1, 1, 1.0, 0.2).unwrap();
        assert!((b - (16.0 / 0.01 + 2.0 / (0.64 * 0.01))).abs() < 1e-9);

        // Doubling ω⋆ quarters the 1/ω⋆² terms.
        let c = bet_stopping_bound(0.2, 1, 1.0, 0.2).unwrap();
        assert!((b / c - 4.0).abs() < 1e-12);

        assert!(matches!(
            bet_stopping_bound(0.0, 29, 0.1, 0.2),
            Err(Error::NoFiniteBound(_))
        ));
    }

    #[test]
    fn state_text_round_trip() {
        let s = (0..37).fold(BetState::new(), |s, i| s.step(i % 3 == 0, 0.17));
        let text = s.to_string();
        assert_eq!(text.parse::<BetState>().unwrap(), s);
        assert!("(1, 0.0, 1.5, 0.0)".parse::<BetState>().is_err());
        assert!("(1, 0.0)".parse::<BetState>().is_err());
    }

    proptest! {
        #[test]
        fn bet_stays_in_unit_interval_and_increments_bounded(
            bits in prop::collection::vec(any::<bool>(), 1..300),
            bm in 0.01f64..0.95,
        ) {
            let mut s = BetState::new();
            for b in bits {
                let next = s.step(b, bm);
                let inc = next.log_wealth - s.log_wealth;
                prop_assert!((0.0..=1.0).contains(&next.lambda));
                prop_assert!(next.z_sq_sum >= s.z_sq_sum);
                prop_assert!(inc >= (1.0 - bm).ln() - 1e-12);
                prop_assert!(inc <= (2.0 - bm).ln() + 1e-12);
                prop_assert!(next.log_wealth.is_finite());
                s = next;
            }
        }

        #[test]
        fn lambda_star_is_grid_optimal(mu in 0.0f64..1.0, bm in 0.01f64..0.99) {
            let best = expected_log_wealth(mu, bm, lambda_star(mu, bm), 1);
            for i in 0..=1000 {
                prop_assert!(best >= expected_log_wealth(mu, bm, i as f64 / 1000.0, 1) - 1e-12);
            }
        }

        #[test]
        fn text_round_trip(bits in prop::collection::vec(any::<bool>(), 0..50), bm in 0.01f64..0.99) {
            let s = bits.iter().fold(BetState::new(), |s, &b| s.step(b, bm));
            prop_assert_eq!(s.to_string().parse::<BetState>().unwrap(), s);
        }
    }
}
