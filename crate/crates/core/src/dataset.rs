//! Confidential input data: ingest, validation and random partitioning.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

/// Rows of `(y, z, x)` with binary outcome and treatment.
///
/// Covariates are stored row-major: record `i` occupies
/// `covariates[i * p..(i + 1) * p]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalDataset {
    outcomes: Vec<u8>,
    treatments: Vec<u8>,
    covariates: Vec<f64>,
    p: usize,
    covariate_names: Vec<String>,
}

impl CausalDataset {
    pub fn new(outcomes: Vec<u8>, treatments: Vec<u8>, covariates: Vec<f64>, p: usize) -> Result<Self> {
        let names = (1..=p).map(|j| format!("x{j}")).collect();
        Self::with_names(outcomes, treatments, covariates, names)
    }

    pub fn with_names(
        outcomes: Vec<u8>,
        treatments: Vec<u8>,
        covariates: Vec<f64>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        let n = outcomes.len();
        let p = covariate_names.len();
        if treatments.len() != n {
            return param(format!("{} outcomes but {} treatments", n, treatments.len()));
        }
        if covariates.len() != n * p {
            return param(format!("covariate buffer has {} values, expected {n} x {p}", covariates.len()));
        }
        for (i, (&y, &z)) in outcomes.iter().zip(&treatments).enumerate() {
            if y > 1 || z > 1 {
                return Err(Error::Validation { row: i + 1, message: format!("non-binary value (y={y}, z={z})") });
            }
        }
        if let Some(pos) = covariates.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation { row: pos / p.max(1) + 1, message: "non-finite covariate".into() });
        }
        Ok(Self { outcomes, treatments, covariates, p, covariate_names })
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn outcomes(&self) -> &[u8] {
        &self.outcomes
    }

    pub fn treatments(&self) -> &[u8] {
        &self.treatments
    }

    pub fn covariates(&self) -> &[f64] {
        &self.covariates
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.covariates[i * self.p..(i + 1) * self.p]
    }

    pub fn treated_count(&self) -> usize {
        self.treatments.iter().filter(|&&z| z == 1).count()
    }

    pub fn control_count(&self) -> usize {
        self.len() - self.treated_count()
    }

    /// Checks the estimation precondition: both arms are non-empty.
    pub fn require_both_arms(&self) -> Result<()> {
        let treated = self.treated_count();
        let control = self.len() - treated;
        if treated == 0 || control == 0 {
            return Err(Error::DegenerateSubset { treated, control });
        }
        Ok(())
    }

    /// Copies the given rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> CausalDataset {
        let mut covariates = Vec::with_capacity(rows.len() * self.p);
        for &i in rows {
            covariates.extend_from_slice(self.x(i));
        }
        CausalDataset {
            outcomes: rows.iter().map(|&i| self.outcomes[i]).collect(),
            treatments: rows.iter().map(|&i| self.treatments[i]).collect(),
            covariates,
            p: self.p,
            covariate_names: self.covariate_names.clone(),
        }
    }

    /// Restricts the covariates to the named columns, in the given order.
    pub fn select_covariates(&self, names: &[String]) -> Result<CausalDataset> {
        let idx = names
            .iter()
            .map(|name| {
                self.covariate_names
                    .iter()
                    .position(|c| c == name)
                    .ok_or_else(|| Error::Schema(format!("unknown covariate `{name}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.keep_columns(&idx))
    }

    /// Drops covariates that take a single value across all rows. Their
    /// effect is absorbed by the intercept, and keeping them would make the
    /// design matrix rank deficient.
    pub fn drop_constant_covariates(&self) -> CausalDataset {
        let keep: Vec<usize> = (0..self.p)
            .filter(|&j| {
                let first = self.covariates.get(j).copied();
                (0..self.len()).any(|i| Some(self.covariates[i * self.p + j]) != first)
            })
            .collect();
        if keep.len() == self.p {
            return self.clone();
        }
        self.keep_columns(&keep)
    }

    fn keep_columns(&self, idx: &[usize]) -> CausalDataset {
        let mut covariates = Vec::with_capacity(self.len() * idx.len());
        for i in 0..self.len() {
            let row = self.x(i);
            covariates.extend(idx.iter().map(|&j| row[j]));
        }
        CausalDataset {
            outcomes: self.outcomes.clone(),
            treatments: self.treatments.clone(),
            covariates,
            p: idx.len(),
            covariate_names: idx.iter().map(|&j| self.covariate_names[j].clone()).collect(),
        }
    }

    /// Writes `y,z,<covariates>` with shortest round-trip float formatting.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["y".to_string(), "z".to_string()];
        header.extend(self.covariate_names.iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![self.outcomes[i].to_string(), self.treatments[i].to_string()];
            rec.extend(self.x(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// How a raw CSV column becomes a binary indicator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BinaryColumn {
    /// Column already holds 0/1.
    Plain(String),
    /// `value >= threshold` maps to 1.
    Threshold { column: String, threshold: f64 },
    /// Membership in `positive` (after trimming) maps to 1.
    Categories { column: String, positive: Vec<String> },
}

impl BinaryColumn {
    fn column(&self) -> &str {
        match self {
            BinaryColumn::Plain(c) => c,
            BinaryColumn::Threshold { column, .. } | BinaryColumn::Categories { column, .. } => column,
        }
    }

    fn apply(&self, raw: &str, row: usize) -> Result<u8> {
        match self {
            BinaryColumn::Plain(col) => match raw.parse::<f64>() {
                Ok(0.0) => Ok(0),
                Ok(1.0) => Ok(1),
                _ => Err(Error::Validation { row, message: format!("column `{col}` has non-binary value `{raw}`") }),
            },
            BinaryColumn::Threshold { column, threshold } => {
                let v: f64 = raw.parse().map_err(|_| Error::Validation {
                    row,
                    message: format!("column `{column}` has non-numeric value `{raw}`"),
                })?;
                Ok(u8::from(v >= *threshold))
            }
            BinaryColumn::Categories { positive, .. } => Ok(u8::from(positive.iter().any(|c| c == raw))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CovariateColumn {
    Numeric(String),
    /// Indicator columns for every level except the reference level
    /// (the first level in sorted order unless given).
    OneHot {
        column: String,
        one_hot: bool,
        #[serde(default)]
        reference: Option<String>,
    },
    /// One 0/1 column: membership of the value in `positive`.
    Indicator {
        column: String,
        positive: Vec<String>,
    },
}

impl CovariateColumn {
    fn column(&self) -> &str {
        match self {
            CovariateColumn::Numeric(c) => c,
            CovariateColumn::OneHot { column, .. } | CovariateColumn::Indicator { column, .. } => column,
        }
    }
}

fn default_missing() -> Vec<String> {
    vec![String::new(), "?".into(), "NA".into()]
}

/// Column-name mapping from a CSV file to a [`CausalDataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub outcome: BinaryColumn,
    pub treatment: BinaryColumn,
    /// `None` means every other column, as numeric.
    #[serde(default)]
    pub covariates: Option<Vec<CovariateColumn>>,
    /// Tokens treated as missing; rows containing them are dropped.
    #[serde(default = "default_missing")]
    pub missing: Vec<String>,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            outcome: BinaryColumn::Plain("y".into()),
            treatment: BinaryColumn::Plain("z".into()),
            covariates: None,
            missing: default_missing(),
        }
    }
}

impl Schema {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LoadSummary {
    pub rows_read: usize,
    pub rows_dropped_missing: usize,
}

pub fn load_csv(path: &Path, schema: &Schema) -> Result<CausalDataset> {
    Ok(read_csv(File::open(path)?, schema)?.0)
}

/// Counts data records without interpreting any values.
pub fn count_csv_records(path: &Path) -> Result<usize> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(BufReader::new(File::open(path)?));
    let mut record = csv::ByteRecord::new();
    let mut n = 0usize;
    while rdr.read_byte_record(&mut record)? {
        if !(record.len() == 1 && record[0].iter().all(u8::is_ascii_whitespace)) {
            n += 1;
        }
    }
    Ok(n)
}

pub fn read_csv<R: Read>(reader: R, schema: &Schema) -> Result<(CausalDataset, LoadSummary)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(Error::Input("missing header row".into()));
    }
    let col = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
    };
    let y_col = col(schema.outcome.column())?;
    let z_col = col(schema.treatment.column())?;
    let covs: Vec<CovariateColumn> = match &schema.covariates {
        Some(c) => c.clone(),
        None => header
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != y_col && *j != z_col)
            .map(|(_, h)| CovariateColumn::Numeric(h.clone()))
            .collect(),
    };
    let cov_cols = covs.iter().map(|c| col(c.column())).collect::<Result<Vec<_>>>()?;

    // (1-based data row number, record)
    let mut rows: Vec<(usize, csv::StringRecord)> = Vec::new();
    let mut dropped = 0usize;
    let mut read = 0usize;
    for rec in rdr.records() {
        let rec = rec?;
        read += 1;
        let used = std::iter::once(y_col).chain(std::iter::once(z_col)).chain(cov_cols.iter().copied());
        let missing = used.clone().any(|j| rec.get(j).is_none_or(|v| schema.missing.iter().any(|m| m == v)));
        if missing {
            dropped += 1;
            continue;
        }
        rows.push((read, rec));
    }
    if rows.is_empty() {
        return Err(Error::Input(format!("no complete data rows ({read} read, {dropped} with missing values)")));
    }

    // Levels for one-hot columns, collected over the retained rows.
    let mut levels: HashMap<usize, Vec<String>> = HashMap::new();
    let mut names = Vec::new();
    for (c, &j) in covs.iter().zip(&cov_cols) {
        match c {
            CovariateColumn::Numeric(name) => names.push(name.clone()),
            CovariateColumn::Indicator { column, .. } => names.push(column.clone()),
            CovariateColumn::OneHot { column, one_hot, reference } => {
                if !one_hot {
                    names.push(column.clone());
                    continue;
                }
                let set: BTreeSet<&str> = rows.iter().map(|(_, r)| &r[j]).collect();
                let mut all: Vec<String> = set.into_iter().map(str::to_string).collect();
                let reference = match reference {
                    Some(r) if all.contains(r) => r.clone(),
                    Some(r) => return Err(Error::Schema(format!("reference level `{r}` not found in `{column}`"))),
                    None => all[0].clone(),
                };
                all.retain(|l| *l != reference);
                names.extend(all.iter().map(|l| format!("{column}={l}")));
                levels.insert(j, all);
            }
        }
    }

    let mut outcomes = Vec::with_capacity(rows.len());
    let mut treatments = Vec::with_capacity(rows.len());
    let mut covariates = Vec::with_capacity(rows.len() * names.len());
    for &(row, ref rec) in &rows {
        outcomes.push(schema.outcome.apply(&rec[y_col], row)?);
        treatments.push(schema.treatment.apply(&rec[z_col], row)?);
        for (c, &j) in covs.iter().zip(&cov_cols) {
            match (c, levels.get(&j)) {
                (CovariateColumn::OneHot { .. }, Some(lv)) => {
                    covariates.extend(lv.iter().map(|l| if rec[j] == *l { 1.0 } else { 0.0 }));
                }
                (CovariateColumn::Indicator { positive, .. }, _) => {
                    covariates.push(if positive.iter().any(|v| *v == rec[j]) { 1.0 } else { 0.0 });
                }
                _ => {
                    let v: f64 = rec[j].parse().map_err(|_| Error::Validation {
                        row,
                        message: format!("covariate `{}` has non-numeric value `{}`", c.column(), &rec[j]),
                    })?;
                    covariates.push(v);
                }
            }
        }
    }
    let data = CausalDataset::with_names(outcomes, treatments, covariates, names)?;
    Ok((data, LoadSummary { rows_read: read, rows_dropped_missing: dropped }))
}

/// Balanced disjoint assignment of rows to `m` partitions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partitioning {
    assignments: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl Partitioning {
    pub fn m(&self) -> usize {
        self.members.len()
    }

    /// Zero-based partition index of each row.
    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    /// Row indices of partition `k`, ascending.
    pub fn members(&self, k: usize) -> &[usize] {
        &self.members[k]
    }

    pub fn partition_sizes(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }

    /// Audit export: `row_index,partition_index` with 0-based rows and
    /// 1-based partitions.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["row_index", "partition_index"])?;
        for (i, &k) in self.assignments.iter().enumerate() {
            w.write_record([i.to_string(), (k + 1).to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Shuffles row indices (Fisher-Yates) and cuts them into `m` contiguous
/// chunks whose sizes differ by at most one.
pub fn random_partition<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Result<Partitioning> {
    if m < 1 {
        return param("number of partitions must be at least 1");
    }
    if m > n {
        return param(format!("number of partitions M={m} exceeds record count n={n}"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let base = n / m;
    let extra = n % m;
    let mut assignments = vec![0; n];
    let mut members = Vec::with_capacity(m);
    let mut start = 0;
    for k in 0..m {
        let size = base + usize::from(k < extra);
        let mut chunk = order[start..start + size].to_vec();
        chunk.sort_unstable();
        for &i in &chunk {
            assignments[i] = k;
        }
        members.push(chunk);
        start += size;
    }
    Ok(Partitioning { assignments, members })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PartitionHealth {
    pub treated: Vec<usize>,
    pub control: Vec<usize>,
    pub degenerate: Vec<bool>,
}

impl PartitionHealth {
    pub fn degenerate_count(&self) -> usize {
        self.degenerate.iter().filter(|&&d| d).count()
    }
}

/// A partition is degenerate when it has fewer than two treated or fewer
/// than two control records.
pub fn partition_health(data: &CausalDataset, parts: &Partitioning) -> PartitionHealth {
    let m = parts.m();
    let mut treated = vec![0; m];
    let mut control = vec![0; m];
    for (i, &k) in parts.assignments().iter().enumerate() {
        if data.treatments()[i] == 1 {
            treated[k] += 1;
        } else {
            control[k] += 1;
        }
    }
    let degenerate = treated.iter().zip(&control).map(|(&t, &c)| t < 2 || c < 2).collect();
    PartitionHealth { treated, control, degenerate }
}
