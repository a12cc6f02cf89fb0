//! Curve and summary files.

use std::fs;
use std::io::Write;
use std::path::Path;

use sensq_core::{average_bias_limit, count_exceeding_limit, BiasTransform, ConfidenceCurve, SearchStatus};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exceedance {
    pub gamma0: f64,
    /// Lower confidence limit for the number of sets with bias above `gamma0`.
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageBias {
    pub identity: f64,
    pub log: f64,
    pub odds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n_sets: usize,
    pub alpha: f64,
    pub entries: usize,
    pub exceedance: Vec<Exceedance>,
    /// Present only when the curve covers every `k`.
    pub average_bias: Option<AverageBias>,
}

pub fn summarize(curve: &ConfidenceCurve, gamma_grid: &[f64]) -> Summary {
    let full = curve.entries.len() == curve.n_sets;
    Summary {
        n_sets: curve.n_sets,
        alpha: curve.alpha,
        entries: curve.entries.len(),
        exceedance: gamma_grid
            .iter()
            .map(|&g| Exceedance {
                gamma0: g,
                count: count_exceeding_limit(curve, g),
            })
            .collect(),
        average_bias: full.then(|| AverageBias {
            identity: average_bias_limit(curve, BiasTransform::Identity),
            log: average_bias_limit(curve, BiasTransform::Log),
            odds: average_bias_limit(curve, BiasTransform::Odds),
        }),
    }
}

pub fn status_name(status: SearchStatus) -> &'static str {
    match status {
        SearchStatus::Converged => "converged",
        SearchStatus::BracketCapped => "bracket_capped",
        SearchStatus::Noninformative => "noninformative",
    }
}

/// `k,quantile_fraction,lower_limit,achieved_p,status`, floats in shortest
/// round-trip form.
pub fn curve_csv(curve: &ConfidenceCurve) -> String {
    let mut out = String::from("k,quantile_fraction,lower_limit,achieved_p,status\n");
    for e in &curve.entries {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            e.k,
            e.quantile_fraction,
            e.lower_limit,
            e.achieved_p,
            status_name(e.status)
        ));
    }
    out
}

pub fn write_file(path: &Path, contents: &str) -> std::io::Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(contents.as_bytes())
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

/// CSV with a header row and numeric rows.
pub fn table_csv(header: &[String], rows: &[Vec<f64>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}
