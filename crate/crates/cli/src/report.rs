//! Aggregation of result CSV files.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use anyhow::{bail, Context, Result};

use crate::experiment::{COVERAGE_HEADER, SELECTION_HEADER};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schema {
    Coverage,
    Selection,
}

/// Aggregated rows, one per group, in order of first appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub schema: Schema,
    pub groups: Vec<Group>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    /// Values of the grouping columns.
    pub key: Vec<String>,
    pub trials: usize,
    /// Coverage: fraction covered. Selection: mean value.
    pub primary: f64,
    /// Coverage: median of `ln(hi - lo)`. Selection: standard error of the mean.
    pub secondary: f64,
}

impl Summary {
    pub fn header(&self) -> Vec<&'static str> {
        match self.schema {
            Schema::Coverage => vec!["method", "target", "n", "confidence", "trials", "coverage", "median_log_width"],
            Schema::Selection => vec!["method", "score_kind", "k", "n", "trials", "mean", "stderr"],
        }
    }

    /// Whitespace-aligned table with a header line.
    pub fn render(&self) -> String {
        let mut table: Vec<Vec<String>> = vec![self.header().iter().map(|s| s.to_string()).collect()];
        for g in &self.groups {
            let mut line = g.key.clone();
            line.push(g.trials.to_string());
            line.push(format!("{:.6}", g.primary));
            line.push(format!("{:.6}", g.secondary));
            table.push(line);
        }
        let widths: Vec<usize> =
            (0..table[0].len()).map(|c| table.iter().map(|row| row[c].len()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for row in &table {
            let cells: Vec<String> = row.iter().zip(&widths).map(|(cell, w)| format!("{cell:<w$}")).collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        (xs[m - 1] + xs[m]) / 2.0
    }
}

fn parse<T: std::str::FromStr>(field: &str, column: &str, line: u64) -> Result<T> {
    field.parse().map_err(|_| anyhow::anyhow!("line {line}: bad {column} value {field:?}"))
}

pub fn summarize_reader<R: Read>(r: R) -> Result<Summary> {
    let mut reader = csv::Reader::from_reader(r);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let schema = if header == COVERAGE_HEADER {
        Schema::Coverage
    } else if header == SELECTION_HEADER {
        Schema::Selection
    } else {
        bail!("schema mismatch: unrecognised header {header:?}");
    };
    let mut index: HashMap<Vec<String>, usize> = HashMap::new();
    let mut keys: Vec<Vec<String>> = Vec::new();
    let mut values: Vec<Vec<(f64, f64)>> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            bail!("line {line}: expected {} fields, found {}", header.len(), record.len());
        }
        let (key, value) = match schema {
            Schema::Coverage => {
                let lo: f64 = parse(&record[5], "lo", line)?;
                let hi: f64 = parse(&record[6], "hi", line)?;
                let covered: u8 = parse(&record[8], "covered", line)?;
                parse::<usize>(&record[2], "n", line)?;
                parse::<f64>(&record[3], "confidence", line)?;
                let key = vec![record[0].into(), record[1].into(), record[2].into(), record[3].into()];
                (key, (f64::from(covered), (hi - lo).ln()))
            }
            Schema::Selection => {
                parse::<usize>(&record[2], "k", line)?;
                parse::<usize>(&record[3], "n", line)?;
                let value: f64 = parse(&record[5], "value", line)?;
                (vec![record[0].into(), record[1].into(), record[2].into(), record[3].into()], (value, 0.0))
            }
        };
        let i = *index.entry(key.clone()).or_insert_with(|| {
            keys.push(key);
            values.push(Vec::new());
            keys.len() - 1
        });
        values[i].push(value);
    }
    let groups = keys
        .into_iter()
        .zip(values)
        .map(|(key, vals)| {
            let n = vals.len() as f64;
            let mean = vals.iter().map(|v| v.0).sum::<f64>() / n;
            let secondary = match schema {
                Schema::Coverage => median(vals.iter().map(|v| v.1).collect()),
                Schema::Selection if vals.len() > 1 => {
                    let var = vals.iter().map(|v| (v.0 - mean).powi(2)).sum::<f64>() / (n - 1.0);
                    (var / n).sqrt()
                }
                Schema::Selection => 0.0,
            };
            Group { key, trials: vals.len(), primary: mean, secondary }
        })
        .collect();
    Ok(Summary { schema, groups })
}

pub fn summarize(path: impl AsRef<Path>) -> Result<Summary> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    summarize_reader(file).with_context(|| format!("summarising {}", path.display()))
}
