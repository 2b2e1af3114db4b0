//! Streaming orchestration: one sequential test per (group, β) pair.
//!
//! Each β-layer is Bonferroni-corrected on its own, testing every group at
//! `α/|𝒢|` where `|𝒢|` counts the groups valid in that layer. Flagged pairs
//! are frozen and never revisited.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::betting::{bet_threshold, BetState};
use crate::error::{Error, Result};
use crate::group::{Assignment, GroupSet};
use crate::ztest::{threshold_unchecked, Variant, ZTestParams, ZTestState, DEFAULT_LIL_CONSTANT};

const SNAPSHOT_FORMAT: &str = "repwatch-monitor";
const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    FiniteZ,
    AsymptoticZ,
    Betting,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [
        Algorithm::AsymptoticZ,
        Algorithm::FiniteZ,
        Algorithm::Betting,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::FiniteZ => "finite-z",
            Algorithm::AsymptoticZ => "asymptotic-z",
            Algorithm::Betting => "betting",
        }
    }

    /// Minimum stopping time used when the config leaves it unset.
    pub fn default_min_t(self) -> u64 {
        match self {
            Algorithm::AsymptoticZ => 25,
            Algorithm::FiniteZ | Algorithm::Betting => 0,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "finite-z" => Ok(Algorithm::FiniteZ),
            "asymptotic-z" => Ok(Algorithm::AsymptoticZ),
            "betting" => Ok(Algorithm::Betting),
            other => Err(Error::Config(format!(
                "unknown algorithm '{other}' (expected finite-z, asymptotic-z or betting)"
            ))),
        }
    }
}

fn default_lil_constant() -> f64 {
    DEFAULT_LIL_CONSTANT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorConfig {
    pub alpha: f64,
    pub betas: Vec<f64>,
    pub algorithm: Algorithm,
    /// Defaults to [`Algorithm::default_min_t`].
    #[serde(default)]
    pub min_t: Option<u64>,
    #[serde(default)]
    pub stop_at_first: bool,
    /// Constant inside the Z-test boundary.
    #[serde(default = "default_lil_constant")]
    pub lil_constant: f64,
}

impl MonitorConfig {
    pub fn new(alpha: f64, betas: Vec<f64>, algorithm: Algorithm) -> Self {
        Self {
            alpha,
            betas,
            algorithm,
            min_t: None,
            stop_at_first: false,
            lil_constant: DEFAULT_LIL_CONSTANT,
        }
    }

    pub fn with_min_t(mut self, min_t: u64) -> Self {
        self.min_t = Some(min_t);
        self
    }

    pub fn stopping_at_first(mut self) -> Self {
        self.stop_at_first = true;
        self
    }

    pub fn effective_min_t(&self) -> u64 {
        self.min_t.unwrap_or_else(|| self.algorithm.default_min_t())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.betas.is_empty() {
            return Err(Error::Config("at least one beta is required".into()));
        }
        if let Some(b) = self.betas.iter().find(|b| !(b.is_finite() && **b > 1.0)) {
            return Err(Error::Config(format!("every beta must be > 1, got {b}")));
        }
        if self.betas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("betas must be strictly increasing".into()));
        }
        if !(self.lil_constant > 0.0 && self.lil_constant.is_finite()) {
            return Err(Error::Config(format!(
                "boundary constant must be positive, got {}",
                self.lil_constant
            )));
        }
        Ok(())
    }
}

/// A rejected null: group `group` is overrepresented by at least `beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlagEvent {
    pub t: u64,
    pub group: String,
    pub beta: f64,
    pub statistic: f64,
    pub threshold: f64,
    pub algorithm: Algorithm,
}

/// Writes events as JSON lines.
pub fn write_events_jsonl<W: Write>(events: &[FlagEvent], mut out: W) -> std::io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TestState {
    Z(ZTestState),
    Bet(BetState),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Pair {
    group: usize,
    beta_mu0: f64,
    state: TestState,
    flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Layer {
    beta: f64,
    /// Bonferroni denominator for this β.
    n_groups: usize,
    alpha_eff: f64,
    pairs: Vec<Pair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monitor {
    groups: GroupSet,
    config: MonitorConfig,
    layers: Vec<Layer>,
    t: u64,
    events: Vec<FlagEvent>,
    stopped: bool,
    excluded: Vec<(String, f64)>,
    #[serde(skip)]
    scratch: Vec<bool>,
}

#[derive(Serialize)]
struct SnapshotOut<'a> {
    format: &'a str,
    version: u32,
    monitor: &'a Monitor,
}

#[derive(Deserialize)]
struct SnapshotIn {
    format: String,
    version: u32,
    monitor: Monitor,
}

impl Monitor {
    pub fn new(groups: GroupSet, config: MonitorConfig) -> Result<Self> {
        config.validate()?;
        if groups.is_empty() {
            return Err(Error::Config("group set is empty".into()));
        }
        let mut layers = Vec::with_capacity(config.betas.len());
        let mut excluded = Vec::new();
        for &beta in &config.betas {
            let mut pairs = Vec::new();
            for (i, (g, &mu0)) in groups
                .groups()
                .iter()
                .zip(groups.base_preponderances())
                .enumerate()
            {
                let beta_mu0 = beta * mu0;
                if g.is_whole_population() {
                    log::warn!("excluding whole-population group at beta={beta}: test is vacuous");
                    excluded.push((groups.id(i), beta));
                    continue;
                }
                if beta_mu0 >= 1.0 {
                    log::warn!(
                        "excluding {} at beta={beta}: beta*mu0={beta_mu0} >= 1 makes the alternative vacuous",
                        groups.id(i)
                    );
                    excluded.push((groups.id(i), beta));
                    continue;
                }
                let state = match config.algorithm {
                    Algorithm::Betting => TestState::Bet(BetState::new()),
                    _ => TestState::Z(ZTestState::new()),
                };
                pairs.push(Pair {
                    group: i,
                    beta_mu0,
                    state,
                    flagged: false,
                });
            }
            if pairs.is_empty() {
                log::warn!("no testable group at beta={beta}; layer skipped");
                continue;
            }
            let n_groups = pairs.len();
            layers.push(Layer {
                beta,
                n_groups,
                alpha_eff: config.alpha / n_groups as f64,
                pairs,
            });
        }
        if layers.is_empty() {
            return Err(Error::Config(
                "no (group, beta) pair is testable: every beta*mu0 >= 1".into(),
            ));
        }
        Ok(Self {
            groups,
            config,
            layers,
            t: 0,
            events: Vec::new(),
            stopped: false,
            excluded,
            scratch: Vec::new(),
        })
    }

    pub fn groups(&self) -> &GroupSet {
        &self.groups
    }

    pub fn config(&self) -> &MonitorConfig {
        &self.config
    }

    /// Number of reports ingested so far.
    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn events(&self) -> &[FlagEvent] {
        &self.events
    }

    pub fn is_stopped(&self) -> bool {
        self.stopped
    }

    /// `(group id, β)` pairs dropped at construction.
    pub fn excluded(&self) -> &[(String, f64)] {
        &self.excluded
    }

    /// Number of live test states.
    pub fn n_tests(&self) -> usize {
        self.layers.iter().map(|l| l.pairs.len()).sum()
    }

    /// Bonferroni denominator used at `beta`, if that layer exists.
    pub fn bonferroni_denominator(&self, beta: f64) -> Option<usize> {
        self.layers
            .iter()
            .find(|l| l.beta == beta)
            .map(|l| l.n_groups)
    }

    /// Flag registry as `(group index, β)`, in layer then group order.
    pub fn flagged(&self) -> Vec<(usize, f64)> {
        self.layers
            .iter()
            .flat_map(|l| {
                l.pairs
                    .iter()
                    .filter(|p| p.flagged)
                    .map(move |p| (p.group, l.beta))
            })
            .collect()
    }

    pub fn state(&self, group: usize, beta: f64) -> Option<&TestState> {
        self.layers
            .iter()
            .find(|l| l.beta == beta)?
            .pairs
            .iter()
            .find(|p| p.group == group)
            .map(|p| &p.state)
    }

    /// Ingests one report and returns the pairs it newly flagged.
    pub fn ingest(&mut self, x: &Assignment) -> Result<Vec<FlagEvent>> {
        if self.stopped {
            return Err(Error::MonitorStopped { t: self.t });
        }
        self.groups.schema().validate(x)?;
        let mut scratch = std::mem::take(&mut self.scratch);
        self.groups.membership_into(x, &mut scratch);
        let out = self.ingest_membership(&scratch);
        self.scratch = scratch;
        out
    }

    /// Ingests one report given as a precomputed membership vector, one
    /// entry per group of the group set.
    pub fn ingest_membership(&mut self, in_group: &[bool]) -> Result<Vec<FlagEvent>> {
        if self.stopped {
            return Err(Error::MonitorStopped { t: self.t });
        }
        if in_group.len() != self.groups.len() {
            return Err(Error::SchemaViolation(format!(
                "membership vector has {} entries, group set has {}",
                in_group.len(),
                self.groups.len()
            )));
        }
        self.t += 1;
        let t = self.t;
        let min_t = self.config.effective_min_t();
        let algorithm = self.config.algorithm;
        let lil = self.config.lil_constant;
        let registry_was_empty = self.events.is_empty();
        let mut fresh: Vec<(usize, FlagEvent)> = Vec::new();

        for layer in &mut self.layers {
            let bet_theta = bet_threshold(layer.n_groups, self.config.alpha);
            for pair in layer.pairs.iter_mut().filter(|p| !p.flagged) {
                let hit = in_group[pair.group];
                let (statistic, threshold) = match &mut pair.state {
                    TestState::Z(s) => {
                        *s = s.update(hit);
                        let variant = if algorithm == Algorithm::AsymptoticZ {
                            Variant::Asymptotic
                        } else {
                            Variant::FiniteSample
                        };
                        let params = ZTestParams {
                            beta_mu0: pair.beta_mu0,
                            alpha_eff: layer.alpha_eff,
                            variant,
                            min_t,
                            lil_constant: lil,
                        };
                        (s.omega as f64, threshold_unchecked(t, &params))
                    }
                    TestState::Bet(s) => {
                        *s = s.step(hit, pair.beta_mu0);
                        (s.log_wealth, bet_theta)
                    }
                };
                if t >= min_t && statistic >= threshold {
                    pair.flagged = true;
                    fresh.push((
                        pair.group,
                        FlagEvent {
                            t,
                            group: self.groups.id(pair.group),
                            beta: layer.beta,
                            statistic,
                            threshold,
                            algorithm,
                        },
                    ));
                }
            }
        }
        // Layers are already in β order; a stable sort makes groups primary.
        fresh.sort_by_key(|(g, _)| *g);
        let fresh: Vec<FlagEvent> = fresh.into_iter().map(|(_, e)| e).collect();
        if self.config.stop_at_first && registry_was_empty && !fresh.is_empty() {
            self.stopped = true;
        }
        self.events.extend(fresh.iter().cloned());
        Ok(fresh)
    }

    /// Versioned JSON snapshot. Floats are written in shortest round-trip
    /// form, so a restored monitor continues bit-for-bit.
    pub fn snapshot(&self) -> Vec<u8> {
        serde_json::to_vec(&SnapshotOut {
            format: SNAPSHOT_FORMAT,
            version: SNAPSHOT_VERSION,
            monitor: self,
        })
        .expect("monitor state is always serialisable")
    }

    pub fn restore(bytes: &[u8]) -> Result<Self> {
        let snap: SnapshotIn = serde_json::from_slice(bytes)
            .map_err(|e| Error::Snapshot(format!("malformed snapshot: {e}")))?;
        if snap.format != SNAPSHOT_FORMAT {
            return Err(Error::Snapshot(format!(
                "unexpected snapshot format '{}'",
                snap.format
            )));
        }
        if snap.version != SNAPSHOT_VERSION {
            return Err(Error::Snapshot(format!(
                "snapshot version {} not supported (expected {SNAPSHOT_VERSION})",
                snap.version
            )));
        }
        let m = snap.monitor;
        m.config
            .validate()
            .map_err(|e| Error::Snapshot(e.to_string()))?;
        if m.layers
            .iter()
            .flat_map(|l| &l.pairs)
            .any(|p| p.group >= m.groups.len())
        {
            return Err(Error::Snapshot("snapshot references unknown group".into()));
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::{enumerate_groups, CovariateSchema, GroupSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn groups() -> GroupSet {
        let schema =
            CovariateSchema::from_pairs(&[("sex", &["M", "F"]), ("age", &["young", "old"])])
                .unwrap();
        let gs = enumerate_groups(&schema, 2).unwrap();
        GroupSet::new(schema, gs, vec![0.5, 0.5, 0.3, 0.7, 0.15, 0.35, 0.15, 0.35]).unwrap()
    }

    fn stream(n: usize, seed: u64) -> Vec<Assignment> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                // (M, young) heavily overrepresented
                if rng.gen_bool(0.5) {
                    Assignment(vec![0, 0])
                } else {
                    Assignment(vec![rng.gen_range(0..2), rng.gen_range(0..2)])
                }
            })
            .collect()
    }

    #[test]
    fn state_count_and_bonferroni() {
        let m = Monitor::new(
            groups(),
            MonitorConfig::new(0.1, vec![1.2, 1.5], Algorithm::Betting),
        )
        .unwrap();
        // β=1.5 drops the μ⁰=0.7 group.
        assert_eq!(m.n_tests(), 8 + 7);
        assert_eq!(m.bonferroni_denominator(1.2), Some(8));
        assert_eq!(m.bonferroni_denominator(1.5), Some(7));
        assert_eq!(m.excluded(), &[("age=old".to_string(), 1.5)]);
    }

    #[test]
    fn single_group_single_beta_uses_full_alpha() {
        let schema = CovariateSchema::from_pairs(&[("k", &["a", "b"])]).unwrap();
        let g = GroupSpec::new(&schema, &[("k", "a")]).unwrap();
        let gs = GroupSet::new(schema, vec![g], vec![0.2]).unwrap();
        let mut m =
            Monitor::new(gs, MonitorConfig::new(0.1, vec![2.0], Algorithm::Betting)).unwrap();
        assert_eq!(m.bonferroni_denominator(2.0), Some(1));
        let mut ev = Vec::new();
        while ev.is_empty() {
            ev = m.ingest(&Assignment(vec![0])).unwrap();
        }
        assert_eq!(ev[0].threshold, (1.0f64 / 0.1).ln());
    }

    #[test]
    fn all_pairs_invalid_is_config_error() {
        let r = Monitor::new(
            groups(),
            MonitorConfig::new(0.1, vec![50.0], Algorithm::FiniteZ),
        );
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn config_validation() {
        for cfg in [
            MonitorConfig::new(0.0, vec![2.0], Algorithm::FiniteZ),
            MonitorConfig::new(0.1, vec![], Algorithm::FiniteZ),
            MonitorConfig::new(0.1, vec![1.0], Algorithm::FiniteZ),
            MonitorConfig::new(0.1, vec![2.0, 1.5], Algorithm::FiniteZ),
        ] {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn never_flags_group_without_reports() {
        for alg in Algorithm::ALL {
            let mut m = Monitor::new(groups(), MonitorConfig::new(0.1, vec![1.5], alg)).unwrap();
            for _ in 0..3000 {
                for e in m.ingest(&Assignment(vec![1, 1])).unwrap() {
                    assert!(
                        !e.group.contains("sex=M") && !e.group.contains("age=young"),
                        "{e:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn stop_at_first_blocks_further_ingest() {
        let cfg = MonitorConfig::new(0.1, vec![1.5], Algorithm::AsymptoticZ).stopping_at_first();
        let mut m = Monitor::new(groups(), cfg).unwrap();
        let s = stream(2000, 3);
        let mut stopped_at = None;
        for x in &s {
            match m.ingest(x) {
                Ok(ev) if !ev.is_empty() => stopped_at = Some(m.t()),
                Ok(_) => {}
                Err(Error::MonitorStopped { t }) => {
                    assert_eq!(Some(t), stopped_at);
                    return;
                }
                Err(e) => panic!("{e}"),
            }
        }
        panic!("never stopped");
    }

    #[test]
    fn flags_are_monotone_and_events_ordered() {
        let mut m = Monitor::new(
            groups(),
            MonitorConfig::new(0.1, vec![1.2, 1.5, 1.8], Algorithm::FiniteZ),
        )
        .unwrap();
        let mut prev = Vec::new();
        for x in stream(3000, 5) {
            m.ingest(&x).unwrap();
            let now = m.flagged();
            assert!(prev.iter().all(|p| now.contains(p)));
            prev = now;
        }
        assert!(m.events().windows(2).all(|w| w[0].t <= w[1].t));
        assert!(m.events().iter().all(|e| e.statistic >= e.threshold));
        assert!(!m.events().is_empty());
    }

    #[test]
    fn min_t_respected() {
        let cfg = MonitorConfig::new(0.1, vec![1.2], Algorithm::AsymptoticZ).with_min_t(40);
        let mut m = Monitor::new(groups(), cfg).unwrap();
        for _ in 0..200 {
            m.ingest(&Assignment(vec![0, 0])).unwrap();
        }
        assert!(m.events().iter().all(|e| e.t >= 40));
        assert_eq!(m.events()[0].t, 40);
    }

    #[test]
    fn z_tests_are_beta_monotone() {
        for alg in [Algorithm::FiniteZ, Algorithm::AsymptoticZ] {
            let betas = vec![1.1, 1.3, 1.6];
            let mut m =
                Monitor::new(groups(), MonitorConfig::new(0.1, betas.clone(), alg)).unwrap();
            for x in stream(1500, 9) {
                m.ingest(&x).unwrap();
                let f = m.flagged();
                for w in betas.windows(2) {
                    for &(g, b) in &f {
                        if b == w[1] {
                            assert!(
                                f.contains(&(g, w[0])),
                                "{alg} group {g} flagged at {} but not {}",
                                w[1],
                                w[0]
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn snapshot_round_trip_and_resume() {
        for alg in Algorithm::ALL {
            let s = stream(100, 21);
            let cfg = MonitorConfig::new(0.1, vec![1.2, 1.4], alg);
            let fresh = Monitor::new(groups(), cfg.clone()).unwrap();
            assert_eq!(Monitor::restore(&fresh.snapshot()).unwrap(), fresh);

            let mut whole = fresh.clone();
            for x in &s {
                whole.ingest(x).unwrap();
            }
            let mut half = fresh.clone();
            for x in &s[..50] {
                half.ingest(x).unwrap();
            }
            let mut resumed = Monitor::restore(&half.snapshot()).unwrap();
            for x in &s[50..] {
                resumed.ingest(x).unwrap();
            }
            assert_eq!(resumed, whole);
            assert_eq!(resumed.snapshot(), whole.snapshot());
        }
    }

    #[test]
    fn bad_snapshots_rejected() {
        let m = Monitor::new(
            groups(),
            MonitorConfig::new(0.1, vec![1.2], Algorithm::Betting),
        )
        .unwrap();
        let bytes = m.snapshot();
        assert!(matches!(
            Monitor::restore(&bytes[..bytes.len() / 2]),
            Err(Error::Snapshot(_))
        ));
        let text = String::from_utf8(bytes)
            .unwrap()
            .replace("\"version\":1", "\"version\":9");
        assert!(matches!(
            Monitor::restore(text.as_bytes()),
            Err(Error::Snapshot(_))
        ));
    }

    #[test]
    fn invalid_report_rejected() {
        let mut m = Monitor::new(
            groups(),
            MonitorConfig::new(0.1, vec![1.2], Algorithm::Betting),
        )
        .unwrap();
        assert!(matches!(
            m.ingest(&Assignment(vec![0, 5])),
            Err(Error::SchemaViolation(_))
        ));
        assert_eq!(m.t(), 0);
    }

    #[test]
    fn event_jsonl_fields() {
        let e = FlagEvent {
            t: 34,
            group: "age=18-29&sex=M".into(),
            beta: 2.0,
            statistic: 17.0,
            threshold: 16.5,
            algorithm: Algorithm::AsymptoticZ,
        };
        let mut buf = Vec::new();
        write_events_jsonl(&[e], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "{\"t\":34,\"group\":\"age=18-29&sex=M\",\"beta\":2.0,\"statistic\":17.0,\"threshold\":16.5,\"algorithm\":\"asymptotic-z\"}\n"
        );
    }
}
