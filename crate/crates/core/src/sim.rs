//! Experiment harness: reporting models, permutation trials, ground-truth
//! diagnostics and null calibration.
//!
//! All randomness comes from ChaCha8 seeded with `seed + k` for trial `k`, so
//! runs reproduce across platforms and are paired across algorithms.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::{Assignment, Constraint, CovariateSchema, GroupSet, GroupSpec};
use crate::monitor::{Monitor, MonitorConfig};

/// Generator for trial `k` of a run seeded with `seed`.
pub fn trial_rng(seed: u64, k: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64))
}

/// In-place Fisher–Yates shuffle.
pub fn fisher_yates<T, R: Rng + ?Sized>(items: &mut [T], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

/// One member of a labelled population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationRecord {
    pub covariates: Assignment,
    /// Whether the member experienced the harm of interest.
    pub harmed: bool,
    /// Category the reporting model keys on.
    pub stratum: String,
}

/// Per-stratum probability that a member files a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportingModel {
    pub name: String,
    pub probabilities: BTreeMap<String, f64>,
}

impl ReportingModel {
    pub fn new(name: impl Into<String>, probabilities: BTreeMap<String, f64>) -> Result<Self> {
        let m = Self {
            name: name.into(),
            probabilities,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        match self
            .probabilities
            .iter()
            .find(|(_, p)| !(0.0..=1.0).contains(*p))
        {
            Some((s, p)) => Err(Error::Config(format!(
                "model '{}': probability for stratum '{s}' must lie in [0, 1], got {p}",
                self.name
            ))),
            None => Ok(()),
        }
    }

    fn preset(
        name: &str,
        healthy: f64,
        manageable: f64,
        unmanageable: f64,
        struggling: f64,
    ) -> Self {
        let probabilities = [
            ("approved", 0.0),
            ("healthy", healthy),
            ("manageable", manageable),
            ("unmanageable", unmanageable),
            ("struggling", struggling),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        Self {
            name: name.to_string(),
            probabilities,
        }
    }

    /// Denials report more often the healthier the applicant's finances.
    /// Strata: `approved` (never reports) and the four debt-to-income levels
    /// of denied applicants.
    pub fn correlated() -> Self {
        Self::preset("correlated", 0.9, 0.5, 0.3, 0.1)
    }

    /// Every denial reports.
    pub fn all_denials() -> Self {
        Self::preset("all-denials", 1.0, 1.0, 1.0, 1.0)
    }

    /// Denials report more often the weaker the applicant's finances.
    pub fn anti_correlated() -> Self {
        Self::preset("anti-correlated", 0.1, 0.5, 0.7, 0.9)
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "correlated" => Ok(Self::correlated()),
            "all-denials" => Ok(Self::all_denials()),
            "anti-correlated" => Ok(Self::anti_correlated()),
            other => Err(Error::Config(format!("unknown reporting model '{other}'"))),
        }
    }

    pub fn probability(&self, stratum: &str) -> Result<f64> {
        self.probabilities.get(stratum).copied().ok_or_else(|| {
            Error::Config(format!(
                "reporting model '{}' has no probability for stratum '{stratum}'",
                self.name
            ))
        })
    }

    fn record_probabilities(&self, pop: &[PopulationRecord]) -> Result<Vec<f64>> {
        pop.iter().map(|r| self.probability(&r.stratum)).collect()
    }
}

fn draw_reporters<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> Vec<usize> {
    probs
        .iter()
        .enumerate()
        .filter(|(_, &p)| rng.gen::<f64>() < p)
        .map(|(i, _)| i)
        .collect()
}

/// Independently includes each member with its stratum's probability.
/// The stream keeps population order.
pub fn apply_reporting_model(
    pop: &[PopulationRecord],
    model: &ReportingModel,
    seed: u64,
) -> Result<Vec<Assignment>> {
    let probs = model.record_probabilities(pop)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(draw_reporters(&probs, &mut rng)
        .into_iter()
        .map(|i| pop[i].covariates.clone())
        .collect())
}

/// `Pr[harm | G] / Pr[harm]` over the full population.
pub fn ground_truth_rr(pop: &[PopulationRecord], g: &GroupSpec) -> Result<f64> {
    let overall = pop.iter().filter(|r| r.harmed).count() as f64 / pop.len() as f64;
    if !(overall > 0.0) {
        return Err(Error::UndefinedRr(
            "population has no harmed members".into(),
        ));
    }
    let (n, harmed) = pop
        .iter()
        .filter(|r| g.contains(&r.covariates))
        .fold((0usize, 0usize), |(n, h), r| {
            (n + 1, h + usize::from(r.harmed))
        });
    if n == 0 {
        return Err(Error::UndefinedRr("group has no members".into()));
    }
    Ok(harmed as f64 / n as f64 / overall)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RirReport {
    /// `(group id, ρ_G/ρ)` for groups with a nonzero harm rate.
    pub ratios: Vec<(String, f64)>,
    pub max: f64,
    /// Nearest-rank 95th percentile over groups.
    pub p95: f64,
}

/// Exact report-to-incidence ratios `ρ_G/ρ` implied by a reporting model.
pub fn rir_ratios(
    pop: &[PopulationRecord],
    model: &ReportingModel,
    gs: &GroupSet,
) -> Result<RirReport> {
    let probs = model.record_probabilities(pop)?;
    let rho = |members: &mut dyn Iterator<Item = usize>| -> Option<f64> {
        let (n, report, harm) = members.fold((0usize, 0.0f64, 0usize), |(n, r, h), i| {
            (n + 1, r + probs[i], h + usize::from(pop[i].harmed))
        });
        (harm > 0).then(|| (report / n as f64) / (harm as f64 / n as f64))
    };
    let rho_all = rho(&mut (0..pop.len()))
        .ok_or_else(|| Error::UndefinedRr("population has no harmed members".into()))?;
    let mut ratios = Vec::new();
    for (gi, g) in gs.groups().iter().enumerate() {
        match rho(&mut (0..pop.len()).filter(|&i| g.contains(&pop[i].covariates))) {
            Some(r) => ratios.push((gs.id(gi), r / rho_all)),
            None => log::warn!(
                "group {} has no harmed members; excluded from ratios",
                gs.id(gi)
            ),
        }
    }
    if ratios.is_empty() {
        return Err(Error::UndefinedRr("no group has harmed members".into()));
    }
    let mut sorted: Vec<f64> = ratios.iter().map(|r| r.1).collect();
    sorted.sort_by(f64::total_cmp);
    let rank = ((0.95 * sorted.len() as f64).ceil() as usize).max(1);
    Ok(RirReport {
        max: *sorted.last().unwrap(),
        p95: sorted[rank - 1],
        ratios,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial: usize,
    pub seed: u64,
    /// `None` when censored at the horizon.
    pub stopping_time: Option<u64>,
    pub first_group: Option<String>,
    pub first_beta: Option<f64>,
    /// Ground-truth relative risk of `first_group`, when a labelled
    /// population is available.
    pub first_group_rr: Option<f64>,
}

/// Where trial report streams come from.
#[derive(Debug, Clone)]
pub enum TrialSource {
    /// A fixed report stream, permuted per trial.
    Stream(Vec<Assignment>),
    /// A labelled population; the reporting model is re-applied per trial
    /// before shuffling.
    Population {
        population: Vec<PopulationRecord>,
        model: ReportingModel,
    },
}

/// Runs `n_trials` stop-at-first monitors over permuted report streams.
pub fn run_permutation_trials(
    source: &TrialSource,
    gs: &GroupSet,
    cfg: &MonitorConfig,
    n_trials: usize,
    horizon: u64,
    seed: u64,
) -> Result<Vec<TrialOutcome>> {
    if n_trials == 0 || horizon == 0 {
        return Err(Error::Config(
            "n_trials and horizon must be at least 1".into(),
        ));
    }
    let cfg = MonitorConfig {
        stop_at_first: true,
        ..cfg.clone()
    };
    // Surface configuration errors before spawning trials.
    let template = Monitor::new(gs.clone(), cfg)?;

    let items: Vec<&Assignment> = match source {
        TrialSource::Stream(s) => s.iter().collect(),
        TrialSource::Population { population, .. } => {
            population.iter().map(|r| &r.covariates).collect()
        }
    };
    for x in &items {
        gs.schema().validate(x)?;
    }
    let membership: Vec<Vec<bool>> = items
        .iter()
        .map(|x| gs.groups().iter().map(|g| g.contains(x)).collect())
        .collect();

    let (probs, rr) = match source {
        TrialSource::Stream(_) => (None, vec![None; gs.len()]),
        TrialSource::Population { population, model } => {
            let rr = gs
                .groups()
                .iter()
                .map(|g| ground_truth_rr(population, g).ok())
                .collect();
            (Some(model.record_probabilities(population)?), rr)
        }
    };

    let outcomes = (0..n_trials)
        .into_par_iter()
        .map(|k| {
            let mut rng = trial_rng(seed, k);
            let mut order: Vec<usize> = match &probs {
                Some(p) => draw_reporters(p, &mut rng),
                None => (0..membership.len()).collect(),
            };
            fisher_yates(&mut order, &mut rng);
            let mut monitor = template.clone();
            let mut outcome = TrialOutcome {
                trial: k,
                seed: seed.wrapping_add(k as u64),
                stopping_time: None,
                first_group: None,
                first_beta: None,
                first_group_rr: None,
            };
            for &i in order.iter().take(horizon.min(usize::MAX as u64) as usize) {
                let events = monitor
                    .ingest_membership(&membership[i])
                    .expect("membership vectors match the group set");
                if let Some(first) = events.first() {
                    let gi = (0..gs.len()).find(|&g| gs.id(g) == first.group);
                    outcome.stopping_time = Some(first.t);
                    outcome.first_group = Some(first.group.clone());
                    outcome.first_beta = Some(first.beta);
                    outcome.first_group_rr = gi.and_then(|g| rr[g]);
                    break;
                }
            }
            outcome
        })
        .collect();
    Ok(outcomes)
}

/// Disjoint groups with known base preponderances and i.i.d. reports drawn
/// at chosen group frequencies; all remaining mass goes to an untested
/// "rest" category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisjointScenario {
    pub base_preponderances: Vec<f64>,
    pub report_frequencies: Vec<f64>,
}

impl DisjointScenario {
    /// Every group at `null_fraction · βμ⁰_G`.
    pub fn null(base_preponderances: Vec<f64>, beta: f64, null_fraction: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&null_fraction) {
            return Err(Error::Config(format!(
                "null fraction must lie in [0, 1], got {null_fraction}"
            )));
        }
        let report_frequencies = base_preponderances
            .iter()
            .map(|m| null_fraction * beta * m)
            .collect();
        let s = Self {
            base_preponderances,
            report_frequencies,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.base_preponderances.len();
        if k == 0 || k != self.report_frequencies.len() {
            return Err(Error::Config(
                "scenario needs matching, nonempty group lists".into(),
            ));
        }
        if self.base_preponderances.iter().sum::<f64>() > 1.0 + 1e-12 {
            return Err(Error::Config(
                "disjoint base preponderances sum above 1".into(),
            ));
        }
        if self
            .report_frequencies
            .iter()
            .any(|f| !(0.0..=1.0).contains(f))
            || self.report_frequencies.iter().sum::<f64>() > 1.0 + 1e-12
        {
            return Err(Error::Config(
                "infeasible scenario: report frequencies of disjoint groups must sum to at most 1"
                    .into(),
            ));
        }
        Ok(())
    }

    /// Single covariate `group` with categories `g0..g{k-1}` and `rest`;
    /// one tested group per `g_i`.
    pub fn group_set(&self) -> Result<GroupSet> {
        let k = self.base_preponderances.len();
        let mut cats: Vec<String> = (0..k).map(|i| format!("g{i}")).collect();
        cats.push("rest".into());
        let schema = CovariateSchema::new(vec![crate::group::Covariate {
            name: "group".into(),
            categories: cats,
        }])?;
        let groups = (0..k)
            .map(|i| {
                GroupSpec::from_constraints(vec![Constraint {
                    covariate: 0,
                    category: i as u32,
                }])
            })
            .collect::<Result<Vec<_>>>()?;
        GroupSet::new(schema, groups, self.base_preponderances.clone())
    }

    /// Category index of one i.i.d. report; `k` means "rest".
    fn draw<R: Rng + ?Sized>(&self, cumulative: &[f64], rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        cumulative.partition_point(|&c| c <= u)
    }
}

/// Trials over i.i.d. reports from a [`DisjointScenario`].
pub fn run_disjoint_trials(
    scenario: &DisjointScenario,
    cfg: &MonitorConfig,
    n_trials: usize,
    horizon: u64,
    seed: u64,
) -> Result<Vec<TrialOutcome>> {
    scenario.validate()?;
    if n_trials == 0 || horizon == 0 {
        return Err(Error::Config(
            "n_trials and horizon must be at least 1".into(),
        ));
    }
    let gs = scenario.group_set()?;
    let cfg = MonitorConfig {
        stop_at_first: true,
        ..cfg.clone()
    };
    let template = Monitor::new(gs.clone(), cfg)?;
    let k = scenario.report_frequencies.len();
    let cumulative: Vec<f64> = scenario
        .report_frequencies
        .iter()
        .scan(0.0, |acc, f| {
            *acc += f;
            Some(*acc)
        })
        .collect();
    let rows: Vec<Vec<bool>> = (0..=k).map(|c| (0..k).map(|g| g == c).collect()).collect();

    Ok((0..n_trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = trial_rng(seed, trial);
            let mut monitor = template.clone();
            let mut outcome = TrialOutcome {
                trial,
                seed: seed.wrapping_add(trial as u64),
                stopping_time: None,
                first_group: None,
                first_beta: None,
                first_group_rr: None,
            };
            for _ in 0..horizon {
                let c = scenario.draw(&cumulative, &mut rng);
                let events = monitor
                    .ingest_membership(&rows[c])
                    .expect("rows match group set");
                if let Some(first) = events.first() {
                    outcome.stopping_time = Some(first.t);
                    outcome.first_group = Some(first.group.clone());
                    outcome.first_beta = Some(first.beta);
                    break;
                }
            }
            outcome
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub n_trials: usize,
    pub n_false_alarms: usize,
    pub false_alarm_rate: f64,
}

/// Empirical family-wise false-alarm rate with every group at
/// `null_fraction · βμ⁰_G`.
pub fn null_calibration(
    base_preponderances: &[f64],
    beta: f64,
    null_fraction: f64,
    cfg: &MonitorConfig,
    n_trials: usize,
    horizon: u64,
    seed: u64,
) -> Result<CalibrationResult> {
    let scenario = DisjointScenario::null(base_preponderances.to_vec(), beta, null_fraction)?;
    let cfg = MonitorConfig {
        betas: vec![beta],
        ..cfg.clone()
    };
    let outcomes = run_disjoint_trials(&scenario, &cfg, n_trials, horizon, seed)?;
    let alarms = outcomes
        .iter()
        .filter(|o| o.stopping_time.is_some())
        .count();
    Ok(CalibrationResult {
        n_trials,
        n_false_alarms: alarms,
        false_alarm_rate: alarms as f64 / n_trials as f64,
    })
}

/// Aggregate of a batch of trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub n_trials: usize,
    pub n_stopped: usize,
    pub stop_fraction: f64,
    /// Mean over stopped trials only.
    pub mean_stopping_time: Option<f64>,
    /// Median over all trials with censored runs counted as +∞; `None` when
    /// half or more are censored.
    pub median_stopping_time: Option<f64>,
    pub mean_first_group_rr: Option<f64>,
}

pub fn summarize(outcomes: &[TrialOutcome]) -> TrialSummary {
    let mut times: Vec<u64> = outcomes.iter().filter_map(|o| o.stopping_time).collect();
    times.sort_unstable();
    let n = outcomes.len();
    let mean = |xs: &[f64]| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    let stopped_f: Vec<f64> = times.iter().map(|&t| t as f64).collect();
    let rrs: Vec<f64> = outcomes.iter().filter_map(|o| o.first_group_rr).collect();
    let median = if n == 0 {
        None
    } else if n % 2 == 1 {
        times.get(n / 2).map(|&t| t as f64)
    } else {
        match (times.get(n / 2 - 1), times.get(n / 2)) {
            (Some(&a), Some(&b)) => Some((a + b) as f64 / 2.0),
            _ => None,
        }
    };
    TrialSummary {
        n_trials: n,
        n_stopped: times.len(),
        stop_fraction: if n == 0 {
            0.0
        } else {
            times.len() as f64 / n as f64
        },
        mean_stopping_time: mean(&stopped_f),
        median_stopping_time: median,
        mean_first_group_rr: mean(&rrs),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::monitor::Algorithm;

    fn strata_population(n_per: usize) -> Vec<PopulationRecord> {
        ["healthy", "manageable", "unmanageable", "struggling"]
            .iter()
            .enumerate()
            .flat_map(|(s, name)| {
                (0..n_per).map(move |_| PopulationRecord {
                    covariates: Assignment(vec![s as u32]),
                    harmed: s == 0,
                    stratum: name.to_string(),
                })
            })
            .collect()
    }

    #[test]
    fn all_or_nothing_models() {
        let pop = strata_population(50);
        let all = apply_reporting_model(&pop, &ReportingModel::all_denials(), 1).unwrap();
        assert_eq!(all.len(), pop.len());
        assert!(all.iter().zip(&pop).all(|(a, r)| *a == r.covariates));

        let none = ReportingModel::new(
            "silent",
            pop.iter().map(|r| (r.stratum.clone(), 0.0)).collect(),
        )
        .unwrap();
        assert!(apply_reporting_model(&pop, &none, 1).unwrap().is_empty());
    }

    #[test]
    fn correlated_inclusion_within_binomial_bands() {
        let n_per = 25_000;
        let pop = strata_population(n_per);
        let stream = apply_reporting_model(&pop, &ReportingModel::correlated(), 2024).unwrap();
        for (s, p) in [0.9, 0.5, 0.3, 0.1].iter().enumerate() {
            let k = stream.iter().filter(|a| a.0[0] == s as u32).count() as f64;
            let sd = (n_per as f64 * p * (1.0 - p)).sqrt();
            assert!((k - n_per as f64 * p).abs() < 3.0 * sd, "stratum {s}: {k}");
        }
    }

    #[test]
    fn unknown_stratum_is_config_error() {
        let mut pop = strata_population(2);
        pop[0].stratum = "mystery".into();
        assert!(matches!(
            apply_reporting_model(&pop, &ReportingModel::correlated(), 0),
            Err(Error::Config(_))
        ));
        let mut bad = BTreeMap::new();
        bad.insert("x".to_string(), 1.5);
        assert!(ReportingModel::new("bad", bad).is_err());
    }

    #[test]
    fn inclusion_pairs_look_independent() {
        // Chi-square on adjacent-record inclusion pairs at p = 0.5.
        let n = 20_000;
        let pop: Vec<PopulationRecord> = (0..n)
            .map(|_| PopulationRecord {
                covariates: Assignment(vec![0]),
                harmed: false,
                stratum: "manageable".into(),
            })
            .collect();
        let probs = ReportingModel::correlated()
            .record_probabilities(&pop)
            .unwrap();
        let picked = draw_reporters(&probs, &mut ChaCha8Rng::seed_from_u64(77));
        let mut inc = vec![false; n];
        for i in picked {
            inc[i] = true;
        }
        let mut table = [[0f64; 2]; 2];
        for w in inc.chunks_exact(2) {
            table[usize::from(w[0])][usize::from(w[1])] += 1.0;
        }
        let total: f64 = table.iter().flatten().sum();
        let row = [table[0][0] + table[0][1], table[1][0] + table[1][1]];
        let col = [table[0][0] + table[1][0], table[0][1] + table[1][1]];
        let chi2: f64 = (0..2)
            .flat_map(|i| (0..2).map(move |j| (i, j)))
            .map(|(i, j)| {
                let e = row[i] * col[j] / total;
                (table[i][j] - e).powi(2) / e
            })
            .sum();
        // 99.9% quantile of chi-square with one degree of freedom.
        assert!(chi2 < 10.83, "{chi2}");
    }

    #[test]
    fn ground_truth_rr_examples() {
        let schema = CovariateSchema::from_pairs(&[("g", &["a", "b"])]).unwrap();
        let mk = |g: u32, harmed: bool| PopulationRecord {
            covariates: Assignment(vec![g]),
            harmed,
            stratum: "healthy".into(),
        };
        let uniform: Vec<_> = (0..100).map(|i| mk(i % 2, i % 4 < 2)).collect();
        let a = GroupSpec::new(&schema, &[("g", "a")]).unwrap();
        assert!((ground_truth_rr(&uniform, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!(
            (ground_truth_rr(&uniform, &GroupSpec::whole_population()).unwrap() - 1.0).abs()
                < 1e-12
        );

        // a: 20/50 harmed, b: 10/50 harmed → overall 0.3, rr(a)=0.4/0.3.
        let skewed: Vec<_> = (0..50)
            .map(|i| mk(0, i < 20))
            .chain((0..50).map(|i| mk(1, i < 10)))
            .collect();
        let b = GroupSpec::new(&schema, &[("g", "b")]).unwrap();
        assert!((ground_truth_rr(&skewed, &a).unwrap() - 0.4 / 0.3).abs() < 1e-12);
        assert!(
            (ground_truth_rr(&skewed, &a).unwrap() / ground_truth_rr(&skewed, &b).unwrap() - 2.0)
                .abs()
                < 1e-12
        );

        let unharmed: Vec<_> = (0..10).map(|i| mk(i % 2, false)).collect();
        assert!(matches!(
            ground_truth_rr(&unharmed, &a),
            Err(Error::UndefinedRr(_))
        ));
    }

    #[test]
    fn rir_ratios_hand_computed() {
        let schema = CovariateSchema::from_pairs(&[("g", &["a", "b"])]).unwrap();
        // a: 10 members, 5 harmed, strata healthy (p=.9) ×4 and struggling (p=.1) ×6.
        // b: 10 members, 2 harmed, all manageable (p=.5).
        let mut pop = Vec::new();
        for i in 0..10 {
            pop.push(PopulationRecord {
                covariates: Assignment(vec![0]),
                harmed: i < 5,
                stratum: if i < 4 { "healthy" } else { "struggling" }.into(),
            });
        }
        for i in 0..10 {
            pop.push(PopulationRecord {
                covariates: Assignment(vec![1]),
                harmed: i < 2,
                stratum: "manageable".into(),
            });
        }
        let gs = GroupSet::new(
            schema.clone(),
            vec![
                GroupSpec::new(&schema, &[("g", "a")]).unwrap(),
                GroupSpec::new(&schema, &[("g", "b")]).unwrap(),
            ],
            vec![0.5, 0.5],
        )
        .unwrap();
        let rep = rir_ratios(&pop, &ReportingModel::correlated(), &gs).unwrap();
        // Pr[R|a] = (4*.9+6*.1)/10 = .42, Pr[Y|a] = .5 → ρ_a = .84
        // Pr[R|b] = .5, Pr[Y|b] = .2 → ρ_b = 2.5
        // Pr[R] = (4.2+5)/20 = .46, Pr[Y] = 7/20 → ρ = .46/.35
        let rho = 0.46 / 0.35;
        assert!((rep.ratios[0].1 - 0.84 / rho).abs() < 1e-12);
        assert!((rep.ratios[1].1 - 2.5 / rho).abs() < 1e-12);
        assert_eq!(rep.max, rep.ratios[1].1);
        assert_eq!(rep.p95, rep.ratios[1].1);

        let all: Vec<_> = pop
            .iter()
            .cloned()
            .map(|mut r| {
                r.harmed = true;
                r
            })
            .collect();
        let ones = rir_ratios(&all, &ReportingModel::all_denials(), &gs).unwrap();
        assert!(ones.ratios.iter().all(|r| (r.1 - 1.0).abs() < 1e-12));
    }

    #[test]
    fn all_in_group_stream_stops_identically() {
        let schema = CovariateSchema::from_pairs(&[("g", &["a", "b"])]).unwrap();
        let gs = GroupSet::new(
            schema.clone(),
            vec![GroupSpec::new(&schema, &[("g", "a")]).unwrap()],
            vec![0.25],
        )
        .unwrap();
        let stream = vec![Assignment(vec![0]); 500];
        let cfg = MonitorConfig::new(0.1, vec![2.0], Algorithm::FiniteZ);
        let out =
            run_permutation_trials(&TrialSource::Stream(stream), &gs, &cfg, 10, 1000, 3).unwrap();
        let t0 = out[0].stopping_time.unwrap();
        assert!(out.iter().all(|o| o.stopping_time == Some(t0)));
        assert!(out.iter().all(|o| o.first_group.as_deref() == Some("g=a")));
    }

    #[test]
    fn trials_are_reproducible_and_censoring_consistent() {
        let scenario = DisjointScenario {
            base_preponderances: vec![0.1, 0.2],
            report_frequencies: vec![0.22, 0.3],
        };
        let cfg = MonitorConfig::new(0.1, vec![2.0], Algorithm::Betting);
        let a = run_disjoint_trials(&scenario, &cfg, 20, 300, 9).unwrap();
        let b = run_disjoint_trials(&scenario, &cfg, 20, 300, 9).unwrap();
        assert_eq!(a, b);
        let longer = run_disjoint_trials(&scenario, &cfg, 20, 3000, 9).unwrap();
        let stopped = |o: &[TrialOutcome]| o.iter().filter(|x| x.stopping_time.is_some()).count();
        assert!(stopped(&longer) >= stopped(&a));
        for (s, l) in a.iter().zip(&longer) {
            if s.stopping_time.is_some() {
                assert_eq!(s, l);
            }
        }
    }

    #[test]
    fn null_with_empty_groups_never_alarms_for_betting() {
        let cfg = MonitorConfig::new(0.1, vec![2.0], Algorithm::Betting);
        let r = null_calibration(&[0.1, 0.2, 0.05], 2.0, 0.0, &cfg, 50, 2000, 1).unwrap();
        assert_eq!(r.n_false_alarms, 0);
    }

    #[test]
    fn infeasible_null_rejected() {
        let cfg = MonitorConfig::new(0.1, vec![2.0], Algorithm::Betting);
        assert!(matches!(
            null_calibration(&[0.3, 0.3], 2.0, 0.99, &cfg, 5, 10, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn summary_statistics() {
        let mk = |t: Option<u64>, rr: Option<f64>| TrialOutcome {
            trial: 0,
            seed: 0,
            stopping_time: t,
            first_group: t.map(|_| "g".into()),
            first_beta: t.map(|_| 2.0),
            first_group_rr: rr,
        };
        let s = summarize(&[
            mk(Some(10), Some(1.5)),
            mk(Some(30), Some(2.5)),
            mk(None, None),
        ]);
        assert_eq!(s.n_stopped, 2);
        assert_eq!(s.mean_stopping_time, Some(20.0));
        assert_eq!(s.median_stopping_time, Some(30.0));
        assert_eq!(s.mean_first_group_rr, Some(2.0));
        let s = summarize(&[mk(Some(10), None), mk(None, None)]);
        assert_eq!(s.median_stopping_time, None);
    }

    #[test]
    fn fisher_yates_is_a_permutation() {
        let mut v: Vec<u32> = (0..1000).collect();
        fisher_yates(&mut v, &mut trial_rng(5, 0));
        assert_ne!(v, (0..1000).collect::<Vec<_>>());
        v.sort_unstable();
        assert_eq!(v, (0..1000).collect::<Vec<_>>());
    }
}
