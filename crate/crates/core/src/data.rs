//! MRT panel data in long format: one row per (individual, decision point).

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};

use serde::Serialize;

use crate::error::{Error, Result};

/// Opaque individual identifier. Ordering is numeric when both ids parse as
/// integers, so `"2" < "10"`; otherwise lexicographic.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct IndividualId(String);

impl IndividualId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    fn numeric(&self) -> Option<i128> {
        self.0.trim().parse().ok()
    }
}

impl Ord for IndividualId {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self.numeric(), other.numeric()) {
            (Some(a), Some(b)) => a.cmp(&b).then_with(|| self.0.cmp(&other.0)),
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (None, None) => self.0.cmp(&other.0),
        }
    }
}

impl PartialOrd for IndividualId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for IndividualId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Maps column roles to CSV column names. Shared by every individual of a
/// dataset, and determines the column order written by [`write_csv`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub id: String,
    pub time: String,
    pub availability: String,
    /// One treatment indicator column per arm.
    pub treatments: Vec<String>,
    /// Optional per-arm randomization probability column, parallel to `treatments`.
    pub rand_probs: Vec<Option<String>>,
    pub outcome: String,
    pub covariates: Vec<String>,
}

impl Schema {
    pub fn new(
        id: impl Into<String>,
        time: impl Into<String>,
        availability: impl Into<String>,
        outcome: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            time: time.into(),
            availability: availability.into(),
            treatments: Vec::new(),
            rand_probs: Vec::new(),
            outcome: outcome.into(),
            covariates: Vec::new(),
        }
    }

    pub fn treatment(mut self, column: impl Into<String>) -> Self {
        self.treatments.push(column.into());
        self.rand_probs.push(None);
        self
    }

    pub fn treatment_with_prob(mut self, column: impl Into<String>, prob: impl Into<String>) -> Self {
        self.treatments.push(column.into());
        self.rand_probs.push(Some(prob.into()));
        self
    }

    pub fn covariate(mut self, column: impl Into<String>) -> Self {
        let column = column.into();
        if !self.covariates.contains(&column) {
            self.covariates.push(column);
        }
        self
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariates.iter().position(|c| c == name)
    }

    pub fn treatment_index(&self, name: &str) -> Option<usize> {
        self.treatments.iter().position(|c| c == name)
    }

    fn columns(&self) -> Vec<&str> {
        let mut cols = vec![self.id.as_str(), self.time.as_str(), self.availability.as_str()];
        cols.extend(self.treatments.iter().map(String::as_str));
        cols.extend(self.rand_probs.iter().flatten().map(String::as_str));
        cols.push(self.outcome.as_str());
        cols.extend(self.covariates.iter().map(String::as_str));
        cols
    }

    fn validate(&self) -> Result<()> {
        if self.treatments.is_empty() {
            return Err(Error::spec("schema needs at least one treatment column"));
        }
        if self.treatments.len() != self.rand_probs.len() {
            return Err(Error::spec("rand_probs must parallel treatments"));
        }
        let cols = self.columns();
        for (i, c) in cols.iter().enumerate() {
            if cols[..i].contains(c) {
                return Err(Error::spec(format!("column `{c}` mapped to more than one role")));
            }
        }
        Ok(())
    }
}

/// One decision point of one individual.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecisionRecord {
    pub time_index: u32,
    pub available: bool,
    /// One indicator per arm, parallel to [`Schema::treatments`].
    pub treatments: Vec<bool>,
    /// Proximal outcome; may be absent only at unavailable decision points.
    pub outcome: Option<f64>,
    /// Parallel to [`Schema::covariates`].
    pub covariates: Vec<Option<f64>>,
    /// Per-arm randomization probability, when the schema maps a column for it.
    pub rand_prob: Vec<Option<f64>>,
}

impl DecisionRecord {
    pub fn treated_arm(&self) -> Option<usize> {
        self.treatments.iter().position(|&a| a)
    }

    fn check(&self, schema: &Schema) -> std::result::Result<(), String> {
        if self.treatments.len() != schema.treatments.len()
            || self.rand_prob.len() != schema.treatments.len()
            || self.covariates.len() != schema.covariates.len()
        {
            return Err("record shape does not match schema".into());
        }
        if self.treatments.iter().filter(|&&a| a).count() > 1 {
            return Err("more than one treatment arm indicator is 1".into());
        }
        if !self.available {
            if self.treated_arm().is_some() {
                return Err("treatment delivered at an unavailable decision point".into());
            }
            return Ok(());
        }
        match self.outcome {
            None => return Err(format!("missing outcome `{}` at an available decision point", schema.outcome)),
            Some(y) if !y.is_finite() => return Err("non-finite outcome".into()),
            Some(_) => {}
        }
        for (k, p) in self.rand_prob.iter().enumerate() {
            match (p, &schema.rand_probs[k]) {
                (Some(p), _) if !(*p > 0.0 && *p < 1.0) => {
                    return Err(format!("randomization probability {p} outside (0, 1)"));
                }
                (None, Some(col)) => {
                    return Err(format!("missing randomization probability `{col}`"));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Individual {
    pub id: IndividualId,
    /// Strictly increasing in `time_index`.
    pub records: Vec<DecisionRecord>,
}

/// Validated, immutable MRT dataset. Individuals are kept sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct MrtDataset {
    schema: Schema,
    individuals: Vec<Individual>,
}

impl MrtDataset {
    /// Validates every record, sorts individuals by id and records by time.
    pub fn new(schema: Schema, mut individuals: Vec<Individual>) -> Result<Self> {
        schema.validate()?;
        if individuals.is_empty() {
            return Err(Error::Format("dataset has no individuals".into()));
        }
        individuals.sort_by(|a, b| a.id.cmp(&b.id));
        for w in individuals.windows(2) {
            if w[0].id == w[1].id {
                return Err(Error::Format(format!("individual `{}` appears twice", w[0].id)));
            }
        }
        for ind in &mut individuals {
            ind.records.sort_by_key(|r| r.time_index);
            for w in ind.records.windows(2) {
                if w[0].time_index == w[1].time_index {
                    return Err(Error::Record {
                        individual: ind.id.to_string(),
                        time: w[0].time_index,
                        message: "duplicate time index".into(),
                    });
                }
            }
            for r in &ind.records {
                if r.time_index == 0 {
                    return Err(Error::Record {
                        individual: ind.id.to_string(),
                        time: 0,
                        message: "time index must be >= 1".into(),
                    });
                }
                r.check(&schema).map_err(|message| Error::Record {
                    individual: ind.id.to_string(),
                    time: r.time_index,
                    message,
                })?;
            }
        }
        Ok(Self { schema, individuals })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn individuals(&self) -> &[Individual] {
        &self.individuals
    }

    /// Number of individuals.
    pub fn n(&self) -> usize {
        self.individuals.len()
    }

    /// Largest time index in the dataset.
    pub fn max_time(&self) -> u32 {
        self.individuals
            .iter()
            .filter_map(|i| i.records.last())
            .map(|r| r.time_index)
            .max()
            .unwrap_or(0)
    }

    pub fn n_records(&self) -> usize {
        self.individuals.iter().map(|i| i.records.len()).sum()
    }

    /// Rebuilds the dataset after mapping every record. Used by tests and
    /// sensitivity checks that perturb a copy.
    pub fn map_records(&self, mut f: impl FnMut(&IndividualId, &mut DecisionRecord)) -> Result<Self> {
        let mut individuals = self.individuals.clone();
        for ind in &mut individuals {
            for r in &mut ind.records {
                f(&ind.id, r);
            }
        }
        Self::new(self.schema.clone(), individuals)
    }
}

/// `log(count + 0.5)`, the step-count transform that keeps zero counts finite.
pub fn log_transform(count: f64) -> Result<f64> {
    if !(count >= 0.0) || !count.is_finite() {
        return Err(Error::domain(format!("log_transform needs a finite count >= 0, got {count}")));
    }
    Ok((count + 0.5).ln())
}

fn parse_binary(raw: &str, column: &str, row: usize) -> Result<bool> {
    match raw.trim().parse::<f64>() {
        Ok(v) if v == 0.0 => Ok(false),
        Ok(v) if v == 1.0 => Ok(true),
        _ => Err(Error::Validation {
            row,
            message: format!("non-binary value `{raw}` in column `{column}`"),
        }),
    }
}

fn parse_optional(raw: &str, column: &str, row: usize) -> Result<Option<f64>> {
    let raw = raw.trim();
    if raw.is_empty() || raw == "NA" {
        return Ok(None);
    }
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(Error::Validation {
            row,
            message: format!("non-numeric value `{raw}` in column `{column}`"),
        }),
    }
}

/// Reads a long-format CSV. Rows of one individual need not be contiguous.
///
/// Row numbers in errors are 1-based file lines, so the first data row is row 2.
pub fn ingest_csv<R: Read>(source: R, schema: &Schema) -> Result<MrtDataset> {
    schema.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| Error::Format(e.to_string()))?
        .clone();
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(Error::Format("empty input: no header row".into()));
    }
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema { column: name.to_string() })
    };
    let id_col = col(&schema.id)?;
    let time_col = col(&schema.time)?;
    let avail_col = col(&schema.availability)?;
    let outcome_col = col(&schema.outcome)?;
    let treat_cols = schema.treatments.iter().map(|c| col(c)).collect::<Result<Vec<_>>>()?;
    let prob_cols = schema
        .rand_probs
        .iter()
        .map(|c| c.as_deref().map(col).transpose())
        .collect::<Result<Vec<_>>>()?;
    let cov_cols = schema.covariates.iter().map(|c| col(c)).collect::<Result<Vec<_>>>()?;

    let mut groups: BTreeMap<String, Vec<DecisionRecord>> = BTreeMap::new();
    let mut rows = 0usize;
    for (idx, result) in reader.records().enumerate() {
        let row = idx + 2;
        let rec = result.map_err(|e| Error::Format(format!("row {row}: {e}")))?;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let id = field(id_col);
        if id.is_empty() {
            return Err(Error::Validation { row, message: format!("empty `{}`", schema.id) });
        }
        let time_index: u32 = field(time_col).parse().ok().filter(|&t| t >= 1).ok_or_else(|| {
            Error::Validation {
                row,
                message: format!("`{}` must be an integer >= 1, got `{}`", schema.time, field(time_col)),
            }
        })?;
        let available = parse_binary(field(avail_col), &schema.availability, row)?;
        let treatments = treat_cols
            .iter()
            .zip(&schema.treatments)
            .map(|(&c, name)| parse_binary(field(c), name, row))
            .collect::<Result<Vec<_>>>()?;
        let rand_prob = prob_cols
            .iter()
            .zip(&schema.rand_probs)
            .map(|(c, name)| match (c, name) {
                (Some(c), Some(name)) => parse_optional(field(*c), name, row),
                _ => Ok(None),
            })
            .collect::<Result<Vec<_>>>()?;
        let outcome = parse_optional(field(outcome_col), &schema.outcome, row)?;
        let covariates = cov_cols
            .iter()
            .zip(&schema.covariates)
            .map(|(&c, name)| parse_optional(field(c), name, row))
            .collect::<Result<Vec<_>>>()?;
        let record = DecisionRecord {
            time_index,
            available,
            treatments,
            outcome,
            covariates,
            rand_prob,
        };
        record
            .check(schema)
            .map_err(|message| Error::Validation { row, message })?;
        groups.entry(id.to_string()).or_default().push(record);
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Format("no data rows".into()));
    }
    let individuals = groups
        .into_iter()
        .map(|(id, records)| Individual { id: IndividualId::new(id), records })
        .collect();
    MrtDataset::new(schema.clone(), individuals)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn fmt_bin(v: bool) -> &'static str {
    if v {
        "1"
    } else {
        "0"
    }
}

/// Writes the long format [`ingest_csv`] reads. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_csv<W: Write>(data: &MrtDataset, sink: W) -> Result<()> {
    let schema = &data.schema;
    let mut writer = csv::Writer::from_writer(sink);
    writer
        .write_record(schema.columns())
        .map_err(|e| Error::Io(e.into()))?;
    let mut fields: Vec<String> = Vec::new();
    for ind in &data.individuals {
        for r in &ind.records {
            fields.clear();
            fields.push(ind.id.to_string());
            fields.push(r.time_index.to_string());
            fields.push(fmt_bin(r.available).into());
            fields.extend(r.treatments.iter().map(|&a| fmt_bin(a).to_string()));
            for (k, col) in schema.rand_probs.iter().enumerate() {
                if col.is_some() {
                    fields.push(fmt_opt(r.rand_prob[k]));
                }
            }
            fields.push(fmt_opt(r.outcome));
            fields.extend(r.covariates.iter().map(|&c| fmt_opt(c)));
            writer.write_record(&fields).map_err(|e| Error::Io(e.into()))?;
        }
    }
    writer.flush()?;
    Ok(())
}

pub fn to_csv_string(data: &MrtDataset) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(data, &mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
}
