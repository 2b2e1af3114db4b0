//! Covariate schema, subgroup enumeration and base preponderances.
//!
//! A subgroup is a conjunction of categorical equality constraints, one
//! category per constrained covariate. Numeric covariates are expected to be
//! bucketed before they reach this module.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One categorical covariate and its admissible categories.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Covariate {
    pub name: String,
    pub categories: Vec<String>,
}

/// Ordered list of categorical covariates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSchema", into = "RawSchema")]
pub struct CovariateSchema {
    covariates: Vec<Covariate>,
}

#[derive(Serialize, Deserialize)]
struct RawSchema {
    covariates: Vec<Covariate>,
}

impl TryFrom<RawSchema> for CovariateSchema {
    type Error = Error;

    fn try_from(raw: RawSchema) -> Result<Self> {
        CovariateSchema::new(raw.covariates)
    }
}

impl From<CovariateSchema> for RawSchema {
    fn from(s: CovariateSchema) -> Self {
        RawSchema {
            covariates: s.covariates,
        }
    }
}

impl CovariateSchema {
    pub fn new(covariates: Vec<Covariate>) -> Result<Self> {
        if covariates.is_empty() {
            return Err(Error::SchemaViolation("schema has no covariates".into()));
        }
        let mut names = BTreeSet::new();
        for cov in &covariates {
            if !names.insert(cov.name.as_str()) {
                return Err(Error::SchemaViolation(format!(
                    "duplicate covariate '{}'",
                    cov.name
                )));
            }
            if cov.categories.is_empty() {
                return Err(Error::SchemaViolation(format!(
                    "covariate '{}' has no categories",
                    cov.name
                )));
            }
            let mut cats = BTreeSet::new();
            for c in &cov.categories {
                if !cats.insert(c.as_str()) {
                    return Err(Error::SchemaViolation(format!(
                        "duplicate category '{c}' in covariate '{}'",
                        cov.name
                    )));
                }
            }
        }
        Ok(Self { covariates })
    }

    /// Convenience constructor from `(name, [categories])` literals.
    pub fn from_pairs(pairs: &[(&str, &[&str])]) -> Result<Self> {
        Self::new(
            pairs
                .iter()
                .map(|(name, cats)| Covariate {
                    name: (*name).to_string(),
                    categories: cats.iter().map(|c| (*c).to_string()).collect(),
                })
                .collect(),
        )
    }

    pub fn covariates(&self) -> &[Covariate] {
        &self.covariates
    }

    pub fn len(&self) -> usize {
        self.covariates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.covariates.is_empty()
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariates.iter().position(|c| c.name == name)
    }

    pub fn category_index(&self, covariate: usize, category: &str) -> Option<usize> {
        self.covariates
            .get(covariate)?
            .categories
            .iter()
            .position(|c| c == category)
    }

    fn lookup(&self, covariate: &str, category: &str) -> Result<(usize, usize)> {
        let ci = self
            .covariate_index(covariate)
            .ok_or_else(|| Error::SchemaViolation(format!("unknown covariate '{covariate}'")))?;
        let ki = self.category_index(ci, category).ok_or_else(|| {
            Error::SchemaViolation(format!(
                "unknown category '{category}' for covariate '{covariate}'"
            ))
        })?;
        Ok((ci, ki))
    }

    /// Builds an assignment from `(covariate, category)` pairs. Every
    /// covariate must be assigned exactly once.
    pub fn assignment(&self, pairs: &[(&str, &str)]) -> Result<Assignment> {
        let mut cats: Vec<Option<u32>> = vec![None; self.len()];
        for (cov, cat) in pairs {
            let (ci, ki) = self.lookup(cov, cat)?;
            if cats[ci].replace(ki as u32).is_some() {
                return Err(Error::SchemaViolation(format!(
                    "covariate '{cov}' assigned twice"
                )));
            }
        }
        let cats = cats
            .into_iter()
            .enumerate()
            .map(|(i, c)| {
                c.ok_or_else(|| {
                    Error::SchemaViolation(format!(
                        "covariate '{}' not assigned",
                        self.covariates[i].name
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Assignment(cats))
    }

    /// Builds an assignment from category names given in schema order.
    pub fn assignment_from_values<S: AsRef<str>>(&self, values: &[S]) -> Result<Assignment> {
        if values.len() != self.len() {
            return Err(Error::SchemaViolation(format!(
                "expected {} covariate values, got {}",
                self.len(),
                values.len()
            )));
        }
        values
            .iter()
            .enumerate()
            .map(|(ci, v)| {
                self.category_index(ci, v.as_ref())
                    .map(|k| k as u32)
                    .ok_or_else(|| {
                        Error::SchemaViolation(format!(
                            "unknown category '{}' for covariate '{}'",
                            v.as_ref(),
                            self.covariates[ci].name
                        ))
                    })
            })
            .collect::<Result<Vec<_>>>()
            .map(Assignment)
    }

    /// Checks that every index of `x` is in range for this schema.
    pub fn validate(&self, x: &Assignment) -> Result<()> {
        if x.0.len() != self.len() {
            return Err(Error::SchemaViolation(format!(
                "assignment has {} covariates, schema has {}",
                x.0.len(),
                self.len()
            )));
        }
        for (ci, &k) in x.0.iter().enumerate() {
            if k as usize >= self.covariates[ci].categories.len() {
                return Err(Error::SchemaViolation(format!(
                    "category index {k} out of range for covariate '{}'",
                    self.covariates[ci].name
                )));
            }
        }
        Ok(())
    }

    pub fn validate_group(&self, g: &GroupSpec) -> Result<()> {
        for c in &g.constraints {
            let cov = self.covariates.get(c.covariate as usize).ok_or_else(|| {
                Error::SchemaViolation(format!("covariate index {} out of range", c.covariate))
            })?;
            if c.category as usize >= cov.categories.len() {
                return Err(Error::SchemaViolation(format!(
                    "category index {} out of range for covariate '{}'",
                    c.category, cov.name
                )));
            }
        }
        Ok(())
    }

    /// Stable textual identity `cov1=cat1&cov2=cat2`, sorted by covariate
    /// name. The whole population is written `*`.
    pub fn group_id(&self, g: &GroupSpec) -> String {
        if g.constraints.is_empty() {
            return "*".to_string();
        }
        let mut parts: Vec<(&str, &str)> = g
            .constraints
            .iter()
            .map(|c| {
                let cov = &self.covariates[c.covariate as usize];
                (
                    cov.name.as_str(),
                    cov.categories[c.category as usize].as_str(),
                )
            })
            .collect();
        parts.sort_unstable();
        parts
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join("&")
    }

    /// Inverse of [`CovariateSchema::group_id`].
    pub fn parse_group_id(&self, id: &str) -> Result<GroupSpec> {
        if id == "*" {
            return Ok(GroupSpec::whole_population());
        }
        let pairs = id
            .split('&')
            .map(|part| {
                part.split_once('=')
                    .ok_or_else(|| Error::SchemaViolation(format!("malformed group id '{id}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        GroupSpec::new(self, &pairs)
    }
}

/// A full covariate assignment: one category index per schema covariate.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Assignment(pub Vec<u32>);

impl Assignment {
    pub fn category(&self, covariate: usize) -> u32 {
        self.0[covariate]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Constraint {
    pub covariate: u32,
    pub category: u32,
}

/// A conjunction of covariate constraints. No constraints denotes the whole
/// population.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupSpec {
    constraints: Vec<Constraint>,
}

impl GroupSpec {
    pub fn whole_population() -> Self {
        Self {
            constraints: Vec::new(),
        }
    }

    pub fn new(schema: &CovariateSchema, pairs: &[(&str, &str)]) -> Result<Self> {
        let mut constraints = Vec::with_capacity(pairs.len());
        for (cov, cat) in pairs {
            let (ci, ki) = schema.lookup(cov, cat)?;
            constraints.push(Constraint {
                covariate: ci as u32,
                category: ki as u32,
            });
        }
        Self::from_constraints(constraints)
    }

    /// Builds a group from raw index constraints. Constraints are sorted by
    /// covariate; a covariate may be constrained at most once.
    pub fn from_constraints(mut constraints: Vec<Constraint>) -> Result<Self> {
        constraints.sort_unstable();
        if constraints
            .windows(2)
            .any(|w| w[0].covariate == w[1].covariate)
        {
            return Err(Error::SchemaViolation(
                "covariate constrained more than once".into(),
            ));
        }
        Ok(Self { constraints })
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn is_whole_population(&self) -> bool {
        self.constraints.is_empty()
    }

    /// Membership for an assignment already validated against the schema.
    #[inline]
    pub fn contains(&self, x: &Assignment) -> bool {
        self.constraints
            .iter()
            .all(|c| x.0[c.covariate as usize] == c.category)
    }

    /// True when every constraint of `self` also appears in `other`.
    pub fn is_relaxation_of(&self, other: &GroupSpec) -> bool {
        self.constraints
            .iter()
            .all(|c| other.constraints.contains(c))
    }
}

/// `1[x ∈ g]`, validating `x` against the schema first.
pub fn membership(schema: &CovariateSchema, x: &Assignment, g: &GroupSpec) -> Result<bool> {
    schema.validate(x)?;
    Ok(g.contains(x))
}

/// Every conjunction of between 1 and `depth` constraints.
///
/// Order: by number of constraints, then covariate subsets in lexicographic
/// schema order, then categories in schema order.
pub fn enumerate_groups(schema: &CovariateSchema, depth: usize) -> Result<Vec<GroupSpec>> {
    if depth == 0 || depth > schema.len() {
        return Err(Error::InvalidParameter(format!(
            "depth must be in 1..={}, got {depth}",
            schema.len()
        )));
    }
    let mut out = Vec::new();
    for k in 1..=depth {
        for subset in combinations(schema.len(), k) {
            let sizes: Vec<usize> = subset
                .iter()
                .map(|&ci| schema.covariates[ci].categories.len())
                .collect();
            let mut cats = vec![0usize; k];
            loop {
                out.push(GroupSpec {
                    constraints: subset
                        .iter()
                        .zip(&cats)
                        .map(|(&ci, &ki)| Constraint {
                            covariate: ci as u32,
                            category: ki as u32,
                        })
                        .collect(),
                });
                if !advance(&mut cats, &sizes) {
                    break;
                }
            }
        }
    }
    Ok(out)
}

/// Odometer increment, last position fastest. Returns false on wrap-around.
fn advance(digits: &mut [usize], radix: &[usize]) -> bool {
    for pos in (0..digits.len()).rev() {
        digits[pos] += 1;
        if digits[pos] < radix[pos] {
            return true;
        }
        digits[pos] = 0;
    }
    false
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Reference-population counts: either a joint table over full assignments
/// or one marginal count vector per covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ReferenceTable {
    Joint(Vec<(Assignment, f64)>),
    Marginals(Vec<Vec<f64>>),
}

impl ReferenceTable {
    pub fn joint(schema: &CovariateSchema, rows: Vec<(Assignment, f64)>) -> Result<Self> {
        for (x, count) in &rows {
            schema.validate(x)?;
            check_count(*count)?;
        }
        let table = ReferenceTable::Joint(rows);
        table.check_total()?;
        Ok(table)
    }

    /// `counts[i][k]` is the population count of category `k` of covariate `i`.
    pub fn marginals(schema: &CovariateSchema, counts: Vec<Vec<f64>>) -> Result<Self> {
        if counts.len() != schema.len() {
            return Err(Error::SchemaViolation(format!(
                "expected {} marginal tables, got {}",
                schema.len(),
                counts.len()
            )));
        }
        for (ci, cov) in counts.iter().enumerate() {
            let name = &schema.covariates()[ci].name;
            if cov.len() != schema.covariates()[ci].categories.len() {
                return Err(Error::SchemaViolation(format!(
                    "marginal table for '{name}' has {} entries, expected {}",
                    cov.len(),
                    schema.covariates()[ci].categories.len()
                )));
            }
            cov.iter().try_for_each(|c| check_count(*c))?;
            if cov.iter().sum::<f64>() <= 0.0 {
                return Err(Error::SchemaViolation(format!(
                    "marginal table for '{name}' has zero total"
                )));
            }
        }
        Ok(ReferenceTable::Marginals(counts))
    }

    fn check_total(&self) -> Result<()> {
        if self.total() > 0.0 {
            Ok(())
        } else {
            Err(Error::SchemaViolation(
                "reference table total is zero".into(),
            ))
        }
    }

    pub fn total(&self) -> f64 {
        match self {
            ReferenceTable::Joint(rows) => rows.iter().map(|(_, c)| c).sum(),
            ReferenceTable::Marginals(m) => m[0].iter().sum(),
        }
    }

    /// Fraction of the population in `category` of `covariate`.
    pub fn marginal_fraction(&self, covariate: usize, category: usize) -> f64 {
        match self {
            ReferenceTable::Joint(rows) => {
                let hit: f64 = rows
                    .iter()
                    .filter(|(x, _)| x.0[covariate] as usize == category)
                    .map(|(_, c)| c)
                    .sum();
                hit / self.total()
            }
            ReferenceTable::Marginals(m) => {
                m[covariate][category] / m[covariate].iter().sum::<f64>()
            }
        }
    }
}

fn check_count(c: f64) -> Result<()> {
    if c.is_finite() && c >= 0.0 {
        Ok(())
    } else {
        Err(Error::SchemaViolation(format!(
            "population count must be finite and nonnegative, got {c}"
        )))
    }
}

/// `μ⁰_G`, either by exact row counting or as a product of marginals.
pub fn base_preponderance(
    schema: &CovariateSchema,
    table: &ReferenceTable,
    g: &GroupSpec,
    impute_product: bool,
) -> Result<f64> {
    schema.validate_group(g)?;
    let mu0 = if impute_product || g.constraints.len() <= 1 {
        g.constraints
            .iter()
            .map(|c| table.marginal_fraction(c.covariate as usize, c.category as usize))
            .product()
    } else {
        match table {
            ReferenceTable::Joint(rows) => {
                let hit: f64 = rows
                    .iter()
                    .filter(|(x, _)| g.contains(x))
                    .map(|(_, c)| c)
                    .sum();
                hit / table.total()
            }
            ReferenceTable::Marginals(_) => {
                return Err(Error::Config(format!(
                    "group {} needs a joint reference table or product imputation",
                    schema.group_id(g)
                )))
            }
        }
    };
    if mu0 <= 0.0 {
        return Err(Error::DegenerateGroup {
            group: schema.group_id(g),
        });
    }
    Ok(mu0)
}

/// The tested universe of groups together with their base preponderances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGroupSet", into = "RawGroupSet")]
pub struct GroupSet {
    schema: CovariateSchema,
    groups: Vec<GroupSpec>,
    base_preponderances: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawGroupSet {
    schema: CovariateSchema,
    groups: Vec<GroupSpec>,
    base_preponderances: Vec<f64>,
}

impl TryFrom<RawGroupSet> for GroupSet {
    type Error = Error;

    fn try_from(raw: RawGroupSet) -> Result<Self> {
        GroupSet::new(raw.schema, raw.groups, raw.base_preponderances)
    }
}

impl From<GroupSet> for RawGroupSet {
    fn from(g: GroupSet) -> Self {
        RawGroupSet {
            schema: g.schema,
            groups: g.groups,
            base_preponderances: g.base_preponderances,
        }
    }
}

impl GroupSet {
    pub fn new(
        schema: CovariateSchema,
        groups: Vec<GroupSpec>,
        base_preponderances: Vec<f64>,
    ) -> Result<Self> {
        if groups.len() != base_preponderances.len() {
            return Err(Error::Config(format!(
                "{} groups but {} base preponderances",
                groups.len(),
                base_preponderances.len()
            )));
        }
        for (g, &mu0) in groups.iter().zip(&base_preponderances) {
            schema.validate_group(g)?;
            if !(mu0 > 0.0 && mu0 <= 1.0) {
                return Err(Error::Config(format!(
                    "base preponderance of {} must lie in (0, 1], got {mu0}",
                    schema.group_id(g)
                )));
            }
        }
        Ok(Self {
            schema,
            groups,
            base_preponderances,
        })
    }

    /// Computes `μ⁰_G` for every candidate, silently dropping groups with zero
    /// reference population.
    pub fn from_reference(
        schema: CovariateSchema,
        candidates: Vec<GroupSpec>,
        table: &ReferenceTable,
        impute_product: bool,
    ) -> Result<Self> {
        let mut groups = Vec::with_capacity(candidates.len());
        let mut mu0s = Vec::with_capacity(candidates.len());
        for g in candidates {
            match base_preponderance(&schema, table, &g, impute_product) {
                Ok(mu0) => {
                    groups.push(g);
                    mu0s.push(mu0);
                }
                Err(Error::DegenerateGroup { group }) => {
                    log::debug!("dropping zero-population group {group}");
                }
                Err(e) => return Err(e),
            }
        }
        Self::new(schema, groups, mu0s)
    }

    /// Keeps groups with `μ⁰_G ≥ min_preponderance`, preserving order.
    pub fn filter_groups(&self, min_preponderance: f64) -> Result<GroupSet> {
        if !(0.0..1.0).contains(&min_preponderance) {
            return Err(Error::InvalidParameter(format!(
                "min_preponderance must lie in [0, 1), got {min_preponderance}"
            )));
        }
        let (groups, mu0s): (Vec<_>, Vec<_>) = self
            .groups
            .iter()
            .zip(&self.base_preponderances)
            .filter(|(_, &mu0)| mu0 >= min_preponderance)
            .map(|(g, &mu0)| (g.clone(), mu0))
            .unzip();
        if groups.is_empty() {
            return Err(Error::Config(format!(
                "no group has base preponderance ≥ {min_preponderance}"
            )));
        }
        Ok(GroupSet {
            schema: self.schema.clone(),
            groups,
            base_preponderances: mu0s,
        })
    }

    pub fn schema(&self) -> &CovariateSchema {
        &self.schema
    }

    pub fn groups(&self) -> &[GroupSpec] {
        &self.groups
    }

    pub fn base_preponderances(&self) -> &[f64] {
        &self.base_preponderances
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn id(&self, i: usize) -> String {
        self.schema.group_id(&self.groups[i])
    }

    /// Writes `1[x ∈ G]` for every group into `out`.
    pub fn membership_into(&self, x: &Assignment, out: &mut Vec<bool>) {
        out.clear();
        out.extend(self.groups.iter().map(|g| g.contains(x)));
    }
}

impl fmt::Display for GroupSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, mu0) in self.base_preponderances.iter().enumerate() {
            writeln!(f, "{}\t{mu0}", self.id(i))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sex_age() -> CovariateSchema {
        CovariateSchema::from_pairs(&[("sex", &["M", "F"]), ("age", &["young", "old"])]).unwrap()
    }

    fn uniform_table(schema: &CovariateSchema) -> ReferenceTable {
        let rows = [("M", "young"), ("M", "old"), ("F", "young"), ("F", "old")]
            .iter()
            .map(|(s, a)| (schema.assignment(&[("sex", s), ("age", a)]).unwrap(), 25.0))
            .collect();
        ReferenceTable::joint(schema, rows).unwrap()
    }

    #[test]
    fn enumerates_two_by_two() {
        let schema = sex_age();
        let ids: Vec<String> = enumerate_groups(&schema, 2)
            .unwrap()
            .iter()
            .map(|g| schema.group_id(g))
            .collect();
        assert_eq!(
            ids,
            [
                "sex=M",
                "sex=F",
                "age=young",
                "age=old",
                "age=young&sex=M",
                "age=old&sex=M",
                "age=young&sex=F",
                "age=old&sex=F",
            ]
        );
    }

    #[test]
    fn vaers_and_hmda_group_counts() {
        let ages = [
            "0-4", "5-11", "12-17", "18-29", "30-39", "40-49", "50-64", "65-74", "75+",
        ];
        let vaers = CovariateSchema::from_pairs(&[("sex", &["M", "F"]), ("age", &ages)]).unwrap();
        assert_eq!(enumerate_groups(&vaers, 2).unwrap().len(), 2 + 9 + 18);

        let hmda = CovariateSchema::from_pairs(&[
            ("sex", &["F", "M", "U"]),
            (
                "race",
                &["native", "asian", "black", "pacific", "white", "latino"],
            ),
            ("age", &["<25", "25-34", "35-44", "45-54", "55-64", "65+"]),
        ])
        .unwrap();
        // 3+6+6 + 18+18+36 + 108
        assert_eq!(enumerate_groups(&hmda, 3).unwrap().len(), 195);
    }

    #[test]
    fn depth_out_of_range() {
        assert!(enumerate_groups(&sex_age(), 0).is_err());
        assert!(enumerate_groups(&sex_age(), 3).is_err());
    }

    #[test]
    fn membership_examples() {
        let schema = sex_age();
        let x = schema
            .assignment(&[("sex", "M"), ("age", "young")])
            .unwrap();
        let m = GroupSpec::new(&schema, &[("sex", "M")]).unwrap();
        assert!(membership(&schema, &x, &m).unwrap());

        let y = schema
            .assignment(&[("sex", "F"), ("age", "young")])
            .unwrap();
        let my = GroupSpec::new(&schema, &[("sex", "M"), ("age", "young")]).unwrap();
        assert!(!membership(&schema, &y, &my).unwrap());
        assert!(membership(&schema, &y, &GroupSpec::whole_population()).unwrap());

        assert!(membership(&schema, &Assignment(vec![0, 7]), &m).is_err());
        assert!(schema.assignment(&[("sex", "X"), ("age", "old")]).is_err());
        assert!(schema.assignment(&[("sex", "M")]).is_err());
    }

    #[test]
    fn base_preponderance_examples() {
        let schema = sex_age();
        let table = uniform_table(&schema);
        let m = GroupSpec::new(&schema, &[("sex", "M")]).unwrap();
        assert_eq!(base_preponderance(&schema, &table, &m, false).unwrap(), 0.5);
        let my = GroupSpec::new(&schema, &[("sex", "M"), ("age", "young")]).unwrap();
        assert_eq!(
            base_preponderance(&schema, &table, &my, true).unwrap(),
            0.25
        );
        assert_eq!(
            base_preponderance(&schema, &table, &my, false).unwrap(),
            0.25
        );
    }

    #[test]
    fn exact_and_imputed_differ_on_skewed_table() {
        let schema = CovariateSchema::from_pairs(&[
            ("a", &["0", "1"]),
            ("b", &["0", "1", "2"]),
            ("c", &["0", "1"]),
        ])
        .unwrap();
        let mut rows = Vec::new();
        let mut count = 1.0;
        for a in 0..2u32 {
            for b in 0..3u32 {
                for c in 0..2u32 {
                    rows.push((Assignment(vec![a, b, c]), count));
                    count = (count * 3.0) % 17.0 + 1.0;
                }
            }
        }
        let table = ReferenceTable::joint(&schema, rows.clone()).unwrap();
        let g = GroupSpec::new(&schema, &[("a", "1"), ("b", "2"), ("c", "0")]).unwrap();

        // Oracle: enumerate rows directly.
        let total: f64 = rows.iter().map(|r| r.1).sum();
        let frac = |pred: &dyn Fn(&Assignment) -> bool| {
            rows.iter().filter(|r| pred(&r.0)).map(|r| r.1).sum::<f64>() / total
        };
        let exact = frac(&|x| x.0 == [1, 2, 0]);
        let imputed = frac(&|x| x.0[0] == 1) * frac(&|x| x.0[1] == 2) * frac(&|x| x.0[2] == 0);

        let got_exact = base_preponderance(&schema, &table, &g, false).unwrap();
        let got_imputed = base_preponderance(&schema, &table, &g, true).unwrap();
        assert!((got_exact - exact).abs() < 1e-15);
        assert!((got_imputed - imputed).abs() < 1e-15);
        assert!((got_exact - got_imputed).abs() > 1e-3);
    }

    #[test]
    fn zero_population_group_is_degenerate_and_dropped() {
        let schema = sex_age();
        let rows = vec![
            (
                schema
                    .assignment(&[("sex", "M"), ("age", "young")])
                    .unwrap(),
                10.0,
            ),
            (
                schema.assignment(&[("sex", "F"), ("age", "old")]).unwrap(),
                10.0,
            ),
        ];
        let table = ReferenceTable::joint(&schema, rows).unwrap();
        let mo = GroupSpec::new(&schema, &[("sex", "M"), ("age", "old")]).unwrap();
        assert!(matches!(
            base_preponderance(&schema, &table, &mo, false),
            Err(Error::DegenerateGroup { .. })
        ));
        let gs = GroupSet::from_reference(
            schema.clone(),
            enumerate_groups(&schema, 2).unwrap(),
            &table,
            false,
        )
        .unwrap();
        assert_eq!(gs.len(), 6);
    }

    #[test]
    fn filter_groups_examples() {
        let schema = CovariateSchema::from_pairs(&[("k", &["a", "b", "c", "d"])]).unwrap();
        let groups = enumerate_groups(&schema, 1).unwrap();
        let gs = GroupSet::new(schema, groups, vec![0.5, 0.3, 0.15, 0.0005]).unwrap();
        let kept = gs.filter_groups(0.001).unwrap();
        assert_eq!(kept.base_preponderances(), &[0.5, 0.3, 0.15]);
        assert_eq!(gs.filter_groups(0.0).unwrap(), gs);
        assert!(gs.filter_groups(0.9).is_err());
        assert!(gs.filter_groups(1.0).is_err());
    }

    #[test]
    fn group_id_round_trip() {
        let schema = sex_age();
        for g in enumerate_groups(&schema, 2).unwrap() {
            assert_eq!(schema.parse_group_id(&schema.group_id(&g)).unwrap(), g);
        }
        assert!(schema.parse_group_id("sex").is_err());
        assert!(schema.parse_group_id("sex=Q").is_err());
    }

    #[test]
    fn schema_rejects_duplicates() {
        assert!(CovariateSchema::from_pairs(&[("a", &["x"]), ("a", &["y"])]).is_err());
        assert!(CovariateSchema::from_pairs(&[("a", &["x", "x"])]).is_err());
        assert!(CovariateSchema::from_pairs(&[("a", &[])]).is_err());
    }

    fn schema_strategy() -> impl Strategy<Value = CovariateSchema> {
        prop::collection::vec(1usize..5, 1..5).prop_map(|sizes| {
            CovariateSchema::new(
                sizes
                    .iter()
                    .enumerate()
                    .map(|(i, &n)| Covariate {
                        name: format!("c{i}"),
                        categories: (0..n).map(|k| format!("k{k}")).collect(),
                    })
                    .collect(),
            )
            .unwrap()
        })
    }

    proptest! {
        #[test]
        fn enumeration_size_matches_combinatorial_count(schema in schema_strategy(), d in 1usize..5) {
            let depth = d.min(schema.len());
            let sizes: Vec<usize> = schema.covariates().iter().map(|c| c.categories.len()).collect();
            // Σ over nonempty subsets of size ≤ depth of ∏ sizes, by bitmask.
            let mut expected = 0usize;
            for mask in 1u32..(1 << sizes.len()) {
                if mask.count_ones() as usize <= depth {
                    expected += (0..sizes.len()).filter(|i| mask >> i & 1 == 1).map(|i| sizes[i]).product::<usize>();
                }
            }
            let groups = enumerate_groups(&schema, depth).unwrap();
            prop_assert_eq!(groups.len(), expected);
            let distinct: BTreeSet<_> = groups.iter().collect();
            prop_assert_eq!(distinct.len(), expected);
        }

        #[test]
        fn membership_closed_under_relaxation(schema in schema_strategy(), seed in any::<u64>()) {
            let x = Assignment(schema.covariates().iter().enumerate()
                .map(|(i, c)| ((seed >> (i * 8)) % c.categories.len() as u64) as u32).collect());
            let groups = enumerate_groups(&schema, schema.len()).unwrap();
            for g in groups.iter().filter(|g| g.contains(&x)) {
                for h in groups.iter().filter(|h| h.is_relaxation_of(g)) {
                    prop_assert!(h.contains(&x));
                }
            }
        }

        #[test]
        fn single_covariate_fractions_sum_to_one(counts in prop::collection::vec(0u32..50, 6)) {
            prop_assume!(counts.iter().any(|&c| c > 0));
            let schema = CovariateSchema::from_pairs(&[("a", &["0", "1"]), ("b", &["0", "1", "2"])]).unwrap();
            let rows = counts.iter().enumerate()
                .map(|(i, &c)| (Assignment(vec![(i / 3) as u32, (i % 3) as u32]), c as f64)).collect();
            let table = ReferenceTable::joint(&schema, rows).unwrap();
            for (ci, cov) in schema.covariates().iter().enumerate() {
                let total: f64 = (0..cov.categories.len()).map(|k| {
                    let g = GroupSpec::from_constraints(vec![Constraint { covariate: ci as u32, category: k as u32 }]).unwrap();
                    base_preponderance(&schema, &table, &g, false).unwrap_or(0.0)
                }).sum();
                prop_assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }
}
