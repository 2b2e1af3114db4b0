use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use repwatch::betting::{bet_stopping_bound, bet_threshold, omega_star};
use repwatch::harm::{ir_gap_bound, ir_lower_bound, rr_lower_bound, ReportingAssumptions};
use repwatch::ingest::{ModelSpec, RunConfig};
use repwatch::monitor::write_events_jsonl;
use repwatch::sim::{null_calibration, run_permutation_trials, summarize, TrialSource};
use repwatch::ztest::zt_power_bound;
use repwatch::{Algorithm, Error, FlagEvent, Monitor, Result};

#[derive(Parser)]
#[command(
    name = "repwatch",
    version,
    about = "Anytime-valid monitoring of subgroup overrepresentation in incident reports"
)]
struct Cli {
    /// Config file (JSON). Defaults to $REPWATCH_CONFIG when set.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List tested groups with their base preponderances as CSV.
    EnumerateGroups {
        #[command(flatten)]
        groups: GroupArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay a report stream through a monitor and write the flag log.
    Run {
        #[command(flatten)]
        groups: GroupArgs,
        #[command(flatten)]
        monitor: MonitorArgs,
        #[arg(long)]
        reports: Option<PathBuf>,
        /// Sort reports by their `timestamp` column.
        #[arg(long)]
        timestamp_order: bool,
        /// Flag log (JSON lines); stdout when omitted.
        #[arg(long)]
        events: Option<PathBuf>,
        /// Write the final monitor state here.
        #[arg(long)]
        snapshot: Option<PathBuf>,
        /// Continue from a saved monitor state instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Permutation trials over a report stream or a labelled population.
    Simulate {
        #[command(flatten)]
        groups: GroupArgs,
        #[command(flatten)]
        monitor: MonitorArgs,
        #[command(flatten)]
        trials: TrialArgs,
        /// Fixed report stream to permute.
        #[arg(long)]
        reports: Option<PathBuf>,
        /// Labelled population (covariates, `harmed`, `stratum`).
        #[arg(long)]
        population: Option<PathBuf>,
        /// Reporting model preset: correlated, all-denials or anti-correlated.
        #[arg(long)]
        model: Option<String>,
        /// Per-trial outcomes (JSON lines); stdout when omitted.
        #[arg(long)]
        outcomes: Option<PathBuf>,
        /// Summary table (CSV).
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Empirical false-alarm rate on disjoint groups just below the null boundary.
    Calibrate {
        #[command(flatten)]
        monitor: MonitorArgs,
        #[command(flatten)]
        trials: TrialArgs,
        /// Base preponderances of the disjoint groups.
        #[arg(long, value_delimiter = ',', required = true)]
        base_preponderances: Vec<f64>,
        /// Report frequency as a fraction of βμ⁰.
        #[arg(long, default_value_t = 0.99)]
        null_fraction: f64,
    },
    /// Convert a flag log into harm bounds (JSON lines).
    Infer {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        b: Option<f64>,
        #[arg(long)]
        gamma_tr: Option<f64>,
        #[arg(long)]
        gamma_fr: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Worst-case stopping-time guarantees.
    Bounds {
        #[command(subcommand)]
        which: BoundsCommand,
    },
}

#[derive(Subcommand)]
enum BoundsCommand {
    /// Stopping time by which the Z-test rejects with probability 1 − δ.
    Ztest {
        /// Largest overrepresentation gap μ − βμ⁰ over groups.
        #[arg(long)]
        delta_max: f64,
        #[arg(long)]
        n_groups: usize,
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        delta: f64,
    },
    /// Expected stopping-time bound for the betting test.
    Betting {
        /// Groups as `mu:beta_mu0`, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        groups: Vec<String>,
        /// Size of the tested family; defaults to the number of groups given.
        #[arg(long)]
        n_groups: Option<usize>,
        #[arg(long)]
        alpha: f64,
    },
}

#[derive(Args)]
struct GroupArgs {
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Joint reference table (covariate columns plus `count`).
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Marginal table for one covariate, as `covariate=path`; repeatable.
    #[arg(long = "marginal", value_parser = parse_marginal)]
    marginals: Vec<(String, PathBuf)>,
    /// Approximate intersections by the product of marginals.
    #[arg(long)]
    impute: bool,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    min_preponderance: Option<f64>,
    /// Bucket mapping (JSON) applied to raw columns.
    #[arg(long)]
    bucket: Option<PathBuf>,
}

#[derive(Args)]
struct MonitorArgs {
    #[arg(long)]
    algorithm: Option<Algorithm>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    betas: Option<Vec<f64>>,
    #[arg(long)]
    min_t: Option<u64>,
    #[arg(long)]
    stop_at_first: bool,
    #[arg(long)]
    lil_constant: Option<f64>,
}

#[derive(Args)]
struct TrialArgs {
    #[arg(long)]
    n_trials: Option<usize>,
    #[arg(long)]
    horizon: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_marginal(s: &str) -> std::result::Result<(String, PathBuf), String> {
    s.split_once('=')
        .map(|(k, v)| (k.to_string(), PathBuf::from(v)))
        .ok_or_else(|| format!("expected covariate=path, got '{s}'"))
}

impl GroupArgs {
    fn apply(self, cfg: &mut RunConfig) {
        cfg.overlay(RunConfig {
            schema: self.schema,
            reference: self.reference,
            marginals: self.marginals.into_iter().collect(),
            impute: self.impute.then_some(true),
            depth: self.depth,
            min_preponderance: self.min_preponderance,
            buckets: self.bucket,
            ..Default::default()
        });
    }
}

impl MonitorArgs {
    fn apply(self, cfg: &mut RunConfig) {
        cfg.overlay(RunConfig {
            algorithm: self.algorithm,
            alpha: self.alpha,
            betas: self.betas,
            min_t: self.min_t,
            stop_at_first: self.stop_at_first.then_some(true),
            lil_constant: self.lil_constant,
            ..Default::default()
        });
    }
}

impl TrialArgs {
    fn apply(self, cfg: &mut RunConfig) {
        cfg.overlay(RunConfig {
            n_trials: self.n_trials,
            horizon: self.horizon,
            seed: self.seed,
            ..Default::default()
        });
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|source| {
            Error::Io {
                path: p.to_path_buf(),
                source,
            }
        })?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_err(path: Option<&Path>) -> impl Fn(io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.map_or_else(|| PathBuf::from("<stdout>"), Path::to_path_buf),
        source,
    }
}

fn write_jsonl<T: Serialize>(items: &[T], path: Option<&Path>) -> Result<()> {
    let mut out = output(path)?;
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(|e| write_err(path)(e.into()))?;
        out.write_all(b"\n").map_err(write_err(path))?;
    }
    out.flush().map_err(write_err(path))
}

fn setting<T: Copy>(v: Option<T>, name: &str) -> Result<T> {
    v.ok_or_else(|| Error::Config(format!("missing required setting '{name}'")))
}

#[derive(Serialize)]
struct GroupRow<'a> {
    group: &'a str,
    base_preponderance: f64,
}

#[derive(Serialize)]
struct HarmBounds<'a> {
    t: u64,
    group: &'a str,
    beta: f64,
    algorithm: Algorithm,
    rr_lower_bound: f64,
    ir_lower_bound: f64,
    ir_gap_bound: f64,
}

#[derive(Serialize)]
struct SummaryRow {
    algorithm: Algorithm,
    alpha: f64,
    betas: String,
    n_trials: usize,
    n_stopped: usize,
    stop_fraction: f64,
    mean_stopping_time: Option<f64>,
    median_stopping_time: Option<f64>,
    mean_first_group_rr: Option<f64>,
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load_default(cli.config.as_deref())?;
    match cli.command {
        Command::EnumerateGroups { groups, out } => {
            groups.apply(&mut cfg);
            let gs = cfg.group_set()?;
            let mut w = csv::Writer::from_writer(output(out.as_deref())?);
            for (i, &mu0) in gs.base_preponderances().iter().enumerate() {
                let id = gs.id(i);
                w.serialize(GroupRow {
                    group: &id,
                    base_preponderance: mu0,
                })
                .map_err(|e| write_err(out.as_deref())(e.into()))?;
            }
            w.flush().map_err(write_err(out.as_deref()))?;
            log::info!("{} groups", gs.len());
        }
        Command::Run {
            groups,
            monitor,
            reports,
            timestamp_order,
            events,
            snapshot,
            resume,
        } => {
            groups.apply(&mut cfg);
            monitor.apply(&mut cfg);
            cfg.overlay(RunConfig {
                reports,
                timestamp_order: timestamp_order.then_some(true),
                ..Default::default()
            });
            let mut m = match &resume {
                Some(p) => {
                    let bytes = std::fs::read(p).map_err(|source| Error::Io {
                        path: p.clone(),
                        source,
                    })?;
                    Monitor::restore(&bytes)?
                }
                None => Monitor::new(cfg.group_set()?, cfg.monitor_config()?)?,
            };
            let stream = cfg.reports(m.groups().schema())?;
            let mut fresh: Vec<FlagEvent> = Vec::new();
            for x in &stream {
                if m.is_stopped() {
                    log::info!("stopped at t={}; ignoring remaining reports", m.t());
                    break;
                }
                fresh.extend(m.ingest(x)?);
            }
            let mut out = output(events.as_deref())?;
            write_events_jsonl(&fresh, &mut out)
                .and_then(|()| out.flush())
                .map_err(write_err(events.as_deref()))?;
            if let Some(p) = &snapshot {
                std::fs::write(p, m.snapshot()).map_err(|source| Error::Io {
                    path: p.clone(),
                    source,
                })?;
            }
            log::info!("{} reports, {} flags", m.t(), m.events().len());
        }
        Command::Simulate {
            groups,
            monitor,
            trials,
            reports,
            population,
            model,
            outcomes,
            summary,
        } => {
            groups.apply(&mut cfg);
            monitor.apply(&mut cfg);
            trials.apply(&mut cfg);
            cfg.overlay(RunConfig {
                reports,
                population,
                model: model.map(ModelSpec::Preset),
                ..Default::default()
            });
            let gs = cfg.group_set()?;
            let mcfg = cfg.monitor_config()?;
            let source = match (&cfg.reports, &cfg.population) {
                (Some(_), None) => TrialSource::Stream(cfg.reports(gs.schema())?),
                (None, Some(_)) => {
                    let (population, model) = cfg.population(gs.schema())?;
                    TrialSource::Population { population, model }
                }
                _ => {
                    return Err(Error::Config(
                        "simulate needs exactly one of 'reports' or 'population'".into(),
                    ))
                }
            };
            let results = run_permutation_trials(
                &source,
                &gs,
                &mcfg,
                setting(cfg.n_trials, "n_trials")?,
                setting(cfg.horizon, "horizon")?,
                cfg.seed.unwrap_or(0),
            )?;
            write_jsonl(&results, outcomes.as_deref())?;
            if let Some(p) = summary.as_deref() {
                let s = summarize(&results);
                let mut w = csv::Writer::from_writer(output(Some(p))?);
                w.serialize(SummaryRow {
                    algorithm: mcfg.algorithm,
                    alpha: mcfg.alpha,
                    betas: mcfg
                        .betas
                        .iter()
                        .map(f64::to_string)
                        .collect::<Vec<_>>()
                        .join(";"),
                    n_trials: s.n_trials,
                    n_stopped: s.n_stopped,
                    stop_fraction: s.stop_fraction,
                    mean_stopping_time: s.mean_stopping_time,
                    median_stopping_time: s.median_stopping_time,
                    mean_first_group_rr: s.mean_first_group_rr,
                })
                .map_err(|e| write_err(Some(p))(e.into()))?;
                w.flush().map_err(write_err(Some(p)))?;
            }
        }
        Command::Calibrate {
            monitor,
            trials,
            base_preponderances,
            null_fraction,
        } => {
            monitor.apply(&mut cfg);
            trials.apply(&mut cfg);
            let mcfg = cfg.monitor_config()?;
            let beta = match mcfg.betas.as_slice() {
                [b] => *b,
                _ => return Err(Error::Config("calibrate takes exactly one beta".into())),
            };
            let r = null_calibration(
                &base_preponderances,
                beta,
                null_fraction,
                &mcfg,
                setting(cfg.n_trials, "n_trials")?,
                setting(cfg.horizon, "horizon")?,
                cfg.seed.unwrap_or(0),
            )?;
            write_jsonl(&[r], None)?;
        }
        Command::Infer {
            events,
            b,
            gamma_tr,
            gamma_fr,
            out,
        } => {
            let base = cfg.assumptions;
            let a = ReportingAssumptions::new(
                b.or(base.map(|a| a.b)).unwrap_or(1.0),
                setting(gamma_tr.or(base.map(|a| a.gamma_tr)), "gamma_tr")?,
                setting(gamma_fr.or(base.map(|a| a.gamma_fr)), "gamma_fr")?,
            )?;
            let flags = read_events(&events)?;
            let bounds = flags
                .iter()
                .map(|e| {
                    Ok(HarmBounds {
                        t: e.t,
                        group: &e.group,
                        beta: e.beta,
                        algorithm: e.algorithm,
                        rr_lower_bound: rr_lower_bound(e.beta, a.b),
                        ir_lower_bound: ir_lower_bound(e.beta, &a)?,
                        ir_gap_bound: ir_gap_bound(e.beta, a.gamma_tr, a.gamma_fr)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            write_jsonl(&bounds, out.as_deref())?;
        }
        Command::Bounds { which } => match which {
            BoundsCommand::Ztest {
                delta_max,
                n_groups,
                alpha,
                delta,
            } => {
                let t = zt_power_bound(delta_max, n_groups, alpha, delta)?;
                let mut row = BTreeMap::new();
                row.insert("stopping_time_bound", t as f64);
                write_jsonl(&[row], None)?;
            }
            BoundsCommand::Betting {
                groups,
                n_groups,
                alpha,
            } => {
                let params = groups
                    .iter()
                    .map(|s| parse_group_params(s))
                    .collect::<Result<Vec<_>>>()?;
                let n = n_groups.unwrap_or(params.len());
                let (w, idx) = omega_star(&params)?;
                let bound = bet_stopping_bound(w, n, alpha, params[idx].1)?;
                let mut row = BTreeMap::new();
                row.insert("omega_star", w);
                row.insert("best_group_index", idx as f64);
                row.insert("threshold", bet_threshold(n, alpha));
                row.insert("expected_stopping_time_bound", bound);
                write_jsonl(&[row], None)?;
            }
        },
    }
    Ok(())
}

fn parse_group_params(s: &str) -> Result<(f64, f64)> {
    let bad = || Error::InvalidParameter(format!("expected mu:beta_mu0, got '{s}'"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    Ok((
        a.trim().parse().map_err(|_| bad())?,
        b.trim().parse().map_err(|_| bad())?,
    ))
}

fn read_events(path: &Path) -> Result<Vec<FlagEvent>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Data {
                path: path.to_path_buf(),
                line: i as u64 + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
