//! CSV ingestion.
//!
//! Expected header: `set_id,treated,outcome` plus an optional `delta` column.
//! Any other columns are carried through as covariates. Rows may come in any
//! order; sets keep the order of their first appearance.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use indexmap::IndexMap;
use sensq_core::{validate_study, MatchedStudy, RawSet, SensError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("missing required column `{0}`")]
    MissingColumn(&'static str),
    #[error("line {line}: column `{column}` has invalid value `{value}`")]
    BadValue {
        line: u64,
        column: &'static str,
        value: String,
    },
    #[error("input has no data rows")]
    Empty,
    #[error(transparent)]
    Study(#[from] SensError),
}

/// A validated study plus its per-unit hypothesized effects, if given.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedStudy {
    pub study: MatchedStudy,
    /// Values of the `delta` column in study unit order.
    pub delta: Option<Vec<f64>>,
    pub covariate_names: Vec<String>,
}

pub fn read_study_file(path: &Path) -> Result<LoadedStudy, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_study(file)
}

fn parse_treated(raw: &str, line: u64) -> Result<bool, IngestError> {
    match raw.trim() {
        "1" => Ok(true),
        "0" => Ok(false),
        other => Err(IngestError::BadValue {
            line,
            column: "treated",
            value: other.to_string(),
        }),
    }
}

fn parse_number(raw: &str, line: u64, column: &'static str) -> Result<f64, IngestError> {
    let v: f64 = raw.trim().parse().map_err(|_| IngestError::BadValue {
        line,
        column,
        value: raw.to_string(),
    })?;
    if !v.is_finite() {
        return Err(IngestError::BadValue {
            line,
            column,
            value: raw.to_string(),
        });
    }
    Ok(v)
}

#[derive(Default)]
struct Group {
    raw: RawSet,
    delta: Vec<f64>,
}

pub fn read_study(input: impl Read) -> Result<LoadedStudy, IngestError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::Headers).from_reader(input);
    let headers = reader
        .headers()
        .map_err(|e| IngestError::Csv {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let find = |name: &'static str| headers.iter().position(|h| h == name);
    let set_col = find("set_id").ok_or(IngestError::MissingColumn("set_id"))?;
    let treated_col = find("treated").ok_or(IngestError::MissingColumn("treated"))?;
    let outcome_col = find("outcome").ok_or(IngestError::MissingColumn("outcome"))?;
    let delta_col = find("delta");
    let extra: Vec<usize> = (0..headers.len())
        .filter(|&c| c != set_col && c != treated_col && c != outcome_col && Some(c) != delta_col)
        .collect();

    let mut groups: IndexMap<String, Group> = IndexMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| IngestError::Csv {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let set_id = record[set_col].trim().to_string();
        let treated = parse_treated(&record[treated_col], line)?;
        let outcome = parse_number(&record[outcome_col], line, "outcome")?;
        let group = groups.entry(set_id.clone()).or_default();
        group.raw.set_id = set_id;
        group.raw.treated.push(treated);
        group.raw.outcomes.push(outcome);
        if let Some(c) = delta_col {
            group.delta.push(parse_number(&record[c], line, "delta")?);
        }
        if !extra.is_empty() {
            group
                .raw
                .covariates
                .push(extra.iter().map(|&c| record[c].to_string()).collect());
        }
    }
    if groups.is_empty() {
        return Err(IngestError::Empty);
    }
    let mut delta = delta_col.map(|_| Vec::new());
    let mut raw = Vec::with_capacity(groups.len());
    for (_, g) in groups {
        if let Some(d) = delta.as_mut() {
            d.extend(g.delta);
        }
        raw.push(g.raw);
    }
    Ok(LoadedStudy {
        study: validate_study(raw)?,
        delta,
        covariate_names: extra.iter().map(|&c| headers[c].to_string()).collect(),
    })
}
