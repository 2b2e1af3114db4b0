//! File formats: schema and configuration JSON, reference tables, report
//! streams and labelled populations as CSV, and bucket mappings that
//! discretize raw columns into schema categories.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::{enumerate_groups, Assignment, CovariateSchema, GroupSet, ReferenceTable};
use crate::harm::ReportingAssumptions;
use crate::monitor::{Algorithm, MonitorConfig};
use crate::sim::{PopulationRecord, ReportingModel};
use crate::ztest::DEFAULT_LIL_CONSTANT;

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "REPWATCH_CONFIG";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| Error::Data {
        path: path.to_path_buf(),
        line: e.line() as u64,
        message: e.to_string(),
    })
}

pub fn load_schema(path: &Path) -> Result<CovariateSchema> {
    read_json(path)
}

/// Rule turning a raw cell into a category label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BucketRule {
    /// Half-open numeric ranges `[lo, hi)`; a missing bound is unbounded.
    Ranges(Vec<RangeBucket>),
    /// Exact raw value to label.
    Values(BTreeMap<String, String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeBucket {
    pub label: String,
    #[serde(default)]
    pub lo: Option<f64>,
    #[serde(default)]
    pub hi: Option<f64>,
}

/// Per-column discretization applied before category lookup. Columns
/// without a rule pass through unchanged.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BucketMap(pub BTreeMap<String, BucketRule>);

impl BucketMap {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn apply<'a>(&'a self, column: &str, raw: &'a str) -> std::result::Result<&'a str, String> {
        match self.0.get(column) {
            None => Ok(raw),
            Some(BucketRule::Values(m)) => m
                .get(raw)
                .map(String::as_str)
                .ok_or_else(|| format!("no bucket for value '{raw}'")),
            Some(BucketRule::Ranges(ranges)) => {
                let v: f64 = raw
                    .trim()
                    .parse()
                    .map_err(|_| format!("'{raw}' is not numeric"))?;
                ranges
                    .iter()
                    .find(|r| r.lo.is_none_or(|lo| v >= lo) && r.hi.is_none_or(|hi| v < hi))
                    .map(|r| r.label.as_str())
                    .ok_or_else(|| format!("no bucket covers {v}"))
            }
        }
    }
}

struct Table {
    path: PathBuf,
    headers: Vec<String>,
    rows: Vec<(u64, csv::StringRecord)>,
}

fn read_csv(path: &Path) -> Result<Table> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);
    let csv_err = |e: csv::Error| Error::Data {
        path: path.to_path_buf(),
        line: e.position().map_or(0, |p| p.line()),
        message: e.to_string(),
    };
    let headers: Vec<String> = rdr
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        rows.push((line, rec));
    }
    Ok(Table {
        path: path.to_path_buf(),
        headers,
        rows,
    })
}

impl Table {
    fn column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    fn require(&self, name: &str) -> Result<usize> {
        self.column(name).ok_or_else(|| {
            Error::SchemaViolation(format!(
                "{}: missing required column '{name}'",
                self.path.display()
            ))
        })
    }

    fn row_err(&self, line: u64, message: String) -> Error {
        Error::Data {
            path: self.path.clone(),
            line,
            message,
        }
    }

    /// Column positions of every schema covariate.
    fn covariate_columns(&self, schema: &CovariateSchema) -> Result<Vec<usize>> {
        schema
            .covariates()
            .iter()
            .map(|c| self.require(&c.name))
            .collect()
    }

    fn assignment(
        &self,
        schema: &CovariateSchema,
        cols: &[usize],
        buckets: &BucketMap,
        line: u64,
        rec: &csv::StringRecord,
    ) -> Result<Assignment> {
        let mut cats = Vec::with_capacity(cols.len());
        for (ci, (&col, cov)) in cols.iter().zip(schema.covariates()).enumerate() {
            let raw = rec.get(col).unwrap_or("").trim();
            let label = buckets
                .apply(&cov.name, raw)
                .map_err(|m| self.row_err(line, format!("column '{}': {m}", cov.name)))?;
            let idx = schema.category_index(ci, label).ok_or_else(|| {
                self.row_err(
                    line,
                    format!("column '{}': unknown category '{label}'", cov.name),
                )
            })?;
            cats.push(idx as u32);
        }
        Ok(Assignment(cats))
    }

    fn number(&self, col: usize, name: &str, line: u64, rec: &csv::StringRecord) -> Result<f64> {
        let raw = rec.get(col).unwrap_or("").trim();
        match raw.parse::<f64>() {
            Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
            _ => Err(self.row_err(
                line,
                format!("column '{name}': expected a nonnegative number, got '{raw}'"),
            )),
        }
    }
}

/// Reads a report stream. Every header must be a schema covariate or
/// `timestamp`; with `order_by_timestamp` rows are stably sorted by that
/// column (compared numerically when all values parse, else as text).
pub fn parse_reports(
    path: &Path,
    schema: &CovariateSchema,
    buckets: &BucketMap,
    order_by_timestamp: bool,
) -> Result<Vec<Assignment>> {
    let table = read_csv(path)?;
    if let Some(h) = table
        .headers
        .iter()
        .find(|h| *h != "timestamp" && schema.covariate_index(h).is_none())
    {
        return Err(Error::SchemaViolation(format!(
            "{}: column '{h}' is not a schema covariate",
            path.display()
        )));
    }
    let cols = table.covariate_columns(schema)?;
    let mut out = Vec::with_capacity(table.rows.len());
    for (line, rec) in &table.rows {
        out.push(table.assignment(schema, &cols, buckets, *line, rec)?);
    }
    if order_by_timestamp {
        let ts = table.require("timestamp")?;
        let keys: Vec<&str> = table
            .rows
            .iter()
            .map(|(_, r)| r.get(ts).unwrap_or("").trim())
            .collect();
        let numeric: Option<Vec<f64>> = keys.iter().map(|k| k.parse().ok()).collect();
        let mut order: Vec<usize> = (0..out.len()).collect();
        match numeric {
            Some(n) => order.sort_by(|&a, &b| n[a].total_cmp(&n[b])),
            None => order.sort_by(|&a, &b| keys[a].cmp(keys[b])),
        }
        out = order.into_iter().map(|i| out[i].clone()).collect();
    }
    Ok(out)
}

/// Joint reference counts: one column per covariate plus `count`. Repeated
/// cells accumulate.
pub fn load_joint_reference(
    path: &Path,
    schema: &CovariateSchema,
    buckets: &BucketMap,
) -> Result<ReferenceTable> {
    let table = read_csv(path)?;
    let cols = table.covariate_columns(schema)?;
    let count = table.require("count")?;
    let mut cells: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
    for (line, rec) in &table.rows {
        let x = table.assignment(schema, &cols, buckets, *line, rec)?;
        *cells.entry(x.0).or_default() += table.number(count, "count", *line, rec)?;
    }
    ReferenceTable::joint(
        schema,
        cells.into_iter().map(|(k, v)| (Assignment(k), v)).collect(),
    )
}

/// Marginal reference counts: one `category,count` file per covariate.
/// Categories missing from a file count as zero.
pub fn load_marginal_reference(
    files: &BTreeMap<String, PathBuf>,
    schema: &CovariateSchema,
) -> Result<ReferenceTable> {
    let mut counts = Vec::with_capacity(schema.len());
    for (ci, cov) in schema.covariates().iter().enumerate() {
        let path = files.get(&cov.name).ok_or_else(|| {
            Error::Config(format!("no marginal table for covariate '{}'", cov.name))
        })?;
        let table = read_csv(path)?;
        let cat = table.require("category")?;
        let count = table.require("count")?;
        let mut row = vec![0.0; cov.categories.len()];
        for (line, rec) in &table.rows {
            let label = rec.get(cat).unwrap_or("").trim();
            let idx = schema.category_index(ci, label).ok_or_else(|| {
                table.row_err(
                    *line,
                    format!("column 'category': unknown category '{label}'"),
                )
            })?;
            row[idx] += table.number(count, "count", *line, rec)?;
        }
        counts.push(row);
    }
    if let Some(extra) = files.keys().find(|k| schema.covariate_index(k).is_none()) {
        return Err(Error::Config(format!(
            "marginal table for unknown covariate '{extra}'"
        )));
    }
    ReferenceTable::marginals(schema, counts)
}

fn parse_bool(raw: &str) -> Option<bool> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Some(true),
        "0" | "false" | "no" => Some(false),
        _ => None,
    }
}

/// Labelled population: covariate columns plus `harmed` and `stratum`.
pub fn parse_population(
    path: &Path,
    schema: &CovariateSchema,
    buckets: &BucketMap,
) -> Result<Vec<PopulationRecord>> {
    let table = read_csv(path)?;
    let cols = table.covariate_columns(schema)?;
    let harmed = table.require("harmed")?;
    let stratum = table.require("stratum")?;
    table
        .rows
        .iter()
        .map(|(line, rec)| {
            let covariates = table.assignment(schema, &cols, buckets, *line, rec)?;
            let raw = rec.get(harmed).unwrap_or("");
            let harmed = parse_bool(raw).ok_or_else(|| {
                table.row_err(
                    *line,
                    format!("column 'harmed': expected a boolean, got '{raw}'"),
                )
            })?;
            Ok(PopulationRecord {
                covariates,
                harmed,
                stratum: rec.get(stratum).unwrap_or("").trim().to_string(),
            })
        })
        .collect()
}

/// A reporting model given by preset name or explicit stratum table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSpec {
    Preset(String),
    Table(BTreeMap<String, f64>),
}

impl ModelSpec {
    pub fn resolve(&self) -> Result<ReportingModel> {
        match self {
            ModelSpec::Preset(name) => ReportingModel::by_name(name),
            ModelSpec::Table(t) => ReportingModel::new("custom", t.clone()),
        }
    }
}

/// Everything a CLI run reads. Relative paths resolve against the config
/// file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema: Option<PathBuf>,
    /// Joint reference table.
    pub reference: Option<PathBuf>,
    /// Per-covariate marginal tables, used when `reference` is absent.
    pub marginals: BTreeMap<String, PathBuf>,
    /// Approximate intersections by the product of marginals.
    pub impute: Option<bool>,
    /// Maximum number of constrained covariates per group.
    pub depth: Option<usize>,
    /// Drop groups whose base preponderance is below this.
    pub min_preponderance: Option<f64>,
    pub buckets: Option<PathBuf>,

    pub reports: Option<PathBuf>,
    pub timestamp_order: Option<bool>,
    pub population: Option<PathBuf>,
    pub model: Option<ModelSpec>,

    pub alpha: Option<f64>,
    pub betas: Option<Vec<f64>>,
    pub algorithm: Option<Algorithm>,
    pub min_t: Option<u64>,
    pub stop_at_first: Option<bool>,
    pub lil_constant: Option<f64>,

    pub n_trials: Option<usize>,
    pub horizon: Option<u64>,
    pub seed: Option<u64>,

    /// Harm assumptions for `infer`.
    pub assumptions: Option<ReportingAssumptions>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: RunConfig = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    /// Loads `explicit`, else the file named by `REPWATCH_CONFIG`, else an
    /// empty config.
    pub fn load_default(explicit: Option<&Path>) -> Result<Self> {
        match explicit {
            Some(p) => Self::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Self::load(Path::new(&p)),
                _ => Ok(Self::default()),
            },
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.schema,
            &mut self.reference,
            &mut self.buckets,
            &mut self.reports,
            &mut self.population,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        self.marginals.values_mut().for_each(fix);
    }

    /// Fields set in `other` replace those here.
    pub fn overlay(&mut self, other: RunConfig) {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f; } )* };
        }
        take!(
            schema,
            reference,
            impute,
            depth,
            min_preponderance,
            buckets,
            reports,
            timestamp_order,
            population,
            model,
            alpha,
            betas,
            algorithm,
            min_t,
            stop_at_first,
            lil_constant,
            n_trials,
            horizon,
            seed,
            assumptions
        );
        if !other.marginals.is_empty() {
            self.marginals = other.marginals;
        }
    }

    fn need<'a, T>(field: &'a Option<T>, name: &str) -> Result<&'a T> {
        field
            .as_ref()
            .ok_or_else(|| Error::Config(format!("missing required setting '{name}'")))
    }

    pub fn load_schema(&self) -> Result<CovariateSchema> {
        load_schema(Self::need(&self.schema, "schema")?)
    }

    pub fn load_buckets(&self) -> Result<BucketMap> {
        self.buckets
            .as_deref()
            .map_or_else(|| Ok(BucketMap::default()), BucketMap::load)
    }

    pub fn load_reference(&self, schema: &CovariateSchema) -> Result<ReferenceTable> {
        match (&self.reference, self.marginals.is_empty()) {
            (Some(p), true) => load_joint_reference(p, schema, &self.load_buckets()?),
            (None, false) => load_marginal_reference(&self.marginals, schema),
            (Some(_), false) => Err(Error::Config(
                "give either a joint reference table or marginal tables, not both".into(),
            )),
            (None, true) => Err(Error::Config(
                "missing required setting 'reference' (or 'marginals')".into(),
            )),
        }
    }

    /// Schema, reference table and depth-limited enumeration combined into
    /// the tested group set.
    pub fn group_set(&self) -> Result<GroupSet> {
        let schema = self.load_schema()?;
        let table = self.load_reference(&schema)?;
        let depth = self.depth.unwrap_or(schema.len());
        let candidates = enumerate_groups(&schema, depth)?;
        let gs =
            GroupSet::from_reference(schema, candidates, &table, self.impute.unwrap_or(false))?;
        match self.min_preponderance {
            Some(m) => gs.filter_groups(m),
            None => Ok(gs),
        }
    }

    pub fn monitor_config(&self) -> Result<MonitorConfig> {
        let cfg = MonitorConfig {
            alpha: *Self::need(&self.alpha, "alpha")?,
            betas: Self::need(&self.betas, "betas")?.clone(),
            algorithm: *Self::need(&self.algorithm, "algorithm")?,
            min_t: self.min_t,
            stop_at_first: self.stop_at_first.unwrap_or(false),
            lil_constant: self.lil_constant.unwrap_or(DEFAULT_LIL_CONSTANT),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn reports(&self, schema: &CovariateSchema) -> Result<Vec<Assignment>> {
        if self.population.is_some() && self.reports.is_some() {
            return Err(Error::Config(
                "give either 'reports' or 'population', not both".into(),
            ));
        }
        parse_reports(
            Self::need(&self.reports, "reports")?,
            schema,
            &self.load_buckets()?,
            self.timestamp_order.unwrap_or(false),
        )
    }

    pub fn population(
        &self,
        schema: &CovariateSchema,
    ) -> Result<(Vec<PopulationRecord>, ReportingModel)> {
        let pop = parse_population(
            Self::need(&self.population, "population")?,
            schema,
            &self.load_buckets()?,
        )?;
        let model = Self::need(&self.model, "model")?.resolve()?;
        Ok((pop, model))
    }
}
