//! Cost-value requirements prioritization from reciprocal pairwise-comparison
//! matrices.
//!
//! Priorities use column normalization followed by row averaging. The
//! principal eigenvalue is only used for the consistency ratio.

use std::fmt;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

/// Relative tolerance for `a[j][i] * a[i][j] == 1`.
pub const RECIPROCITY_TOLERANCE: f64 = 1e-9;

/// Random-index values for n = 3..=10.
pub const RANDOM_INDEX: [f64; 8] = [0.58, 0.90, 1.12, 1.24, 1.32, 1.41, 1.45, 1.49];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AhpError {
    #[error("cannot read matrix {path}: {message}")]
    Io { path: String, message: String },
    #[error("matrix shape error: {0}")]
    Shape(String),
    #[error("entry ({row}, {col}) is not a number: `{text}`")]
    Syntax { row: usize, col: usize, text: String },
    #[error("entry ({row}, {col}) must be > 0, got {value}")]
    Domain { row: usize, col: usize, value: f64 },
    #[error("reciprocity violated at ({row}, {col}): {value} vs 1/{mirror}")]
    Reciprocity {
        row: usize,
        col: usize,
        value: f64,
        mirror: f64,
    },
    #[error("consistency ratio needs 3 <= n <= 10, got n = {0}")]
    UnsupportedSize(usize),
}

/// Reciprocal positive matrix of pairwise judgments. Positions in errors are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseMatrix {
    labels: Vec<String>,
    entries: Vec<Vec<f64>>,
}

impl PairwiseMatrix {
    pub fn new(labels: Vec<String>, entries: Vec<Vec<f64>>) -> Result<Self, AhpError> {
        let n = labels.len();
        if n < 2 {
            return Err(AhpError::Shape(format!("need at least 2 labels, got {n}")));
        }
        if entries.len() != n {
            return Err(AhpError::Shape(format!(
                "{n} labels but {} rows",
                entries.len()
            )));
        }
        for (i, row) in entries.iter().enumerate() {
            if row.len() != n {
                return Err(AhpError::Shape(format!(
                    "row {} has {} entries, expected {n}",
                    i + 1,
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(AhpError::Domain {
                        row: i + 1,
                        col: j + 1,
                        value: v,
                    });
                }
            }
        }
        for i in 0..n {
            for j in 0..=i {
                let value = entries[i][j];
                let mirror = entries[j][i];
                if (value * mirror - 1.0).abs() > RECIPROCITY_TOLERANCE {
                    return Err(AhpError::Reciprocity {
                        row: i + 1,
                        col: j + 1,
                        value,
                        mirror,
                    });
                }
            }
        }
        Ok(Self { labels, entries })
    }

    /// Matrix with `entries[i][j] = w[i] / w[j]`.
    pub fn consistent(labels: Vec<String>, weights: &[f64]) -> Result<Self, AhpError> {
        let entries = weights
            .iter()
            .map(|wi| weights.iter().map(|wj| wi / wj).collect())
            .collect();
        Self::new(labels, entries)
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn entries(&self) -> &[Vec<f64>] {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i][j]
    }
}

/// Parses `"3"`, `"0.25"` or `"1/7"`.
pub fn parse_entry(text: &str) -> Option<f64> {
    let t = text.trim();
    match t.split_once('/') {
        Some((num, den)) => {
            let num: f64 = num.trim().parse().ok()?;
            let den: f64 = den.trim().parse().ok()?;
            Some(num / den)
        }
        None => t.parse().ok(),
    }
}

/// Reads a matrix CSV: a header row of labels, then one row of entries per
/// label. A leading label column (and an empty top-left cell) is accepted.
pub fn parse_matrix_str(text: &str) -> Result<PairwiseMatrix, AhpError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<String>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| AhpError::Shape(e.to_string()))?;
        if rec.iter().all(|c| c.is_empty()) {
            continue;
        }
        rows.push(rec.iter().map(str::to_string).collect());
    }
    let Some((header, data)) = rows.split_first() else {
        return Err(AhpError::Shape("empty matrix file".into()));
    };
    let labels: Vec<String> = match header.first() {
        Some(first) if first.is_empty() => header[1..].to_vec(),
        _ => header.clone(),
    };
    let n = labels.len();
    let mut entries = Vec::with_capacity(data.len());
    for (i, row) in data.iter().enumerate() {
        let cells: &[String] = if row.len() == n + 1 && parse_entry(&row[0]).is_none() {
            &row[1..]
        } else {
            row
        };
        let parsed = cells
            .iter()
            .enumerate()
            .map(|(j, c)| {
                parse_entry(c).ok_or_else(|| AhpError::Syntax {
                    row: i + 1,
                    col: j + 1,
                    text: c.clone(),
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        entries.push(parsed);
    }
    PairwiseMatrix::new(labels, entries)
}

pub fn parse_matrix(path: impl AsRef<Path>) -> Result<PairwiseMatrix, AhpError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| AhpError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_matrix_str(&text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorityVector {
    pub weights: Vec<f64>,
}

/// Normalizes every column to sum 1, then averages each row.
pub fn priority_vector(m: &PairwiseMatrix) -> PriorityVector {
    let n = m.n();
    let col_sums: Vec<f64> = (0..n).map(|j| (0..n).map(|i| m.get(i, j)).sum()).collect();
    let weights = (0..n)
        .map(|i| (0..n).map(|j| m.get(i, j) / col_sums[j]).sum::<f64>() / n as f64)
        .collect();
    PriorityVector { weights }
}

/// The column-normalized matrix (each column sums to 1).
pub fn normalized(m: &PairwiseMatrix) -> Vec<Vec<f64>> {
    let n = m.n();
    let col_sums: Vec<f64> = (0..n).map(|j| (0..n).map(|i| m.get(i, j)).sum()).collect();
    (0..n)
        .map(|i| (0..n).map(|j| m.get(i, j) / col_sums[j]).collect())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueClass {
    High,
    Medium,
    Low,
}

impl fmt::Display for ValueClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ValueClass::High => "high",
            ValueClass::Medium => "medium",
            ValueClass::Low => "low",
        })
    }
}

/// Value-to-cost ratio at or above which a requirement is "high".
pub const HIGH_RATIO: f64 = 2.0;
/// Value-to-cost ratio at or below which a requirement is "low".
pub const LOW_RATIO: f64 = 0.5;

pub fn classify(ratio: f64) -> ValueClass {
    if ratio >= HIGH_RATIO {
        ValueClass::High
    } else if ratio <= LOW_RATIO {
        ValueClass::Low
    } else {
        ValueClass::Medium
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostValuePoint {
    pub label: String,
    pub value_pct: f64,
    pub cost_pct: f64,
    pub ratio: f64,
    pub class: ValueClass,
}

pub fn cost_value_points(
    value: &PriorityVector,
    cost: &PriorityVector,
    labels: &[String],
) -> Result<Vec<CostValuePoint>, AhpError> {
    let n = labels.len();
    if value.weights.len() != n || cost.weights.len() != n {
        return Err(AhpError::Shape(format!(
            "value has {} weights, cost has {}, labels {n}",
            value.weights.len(),
            cost.weights.len()
        )));
    }
    Ok(labels
        .iter()
        .zip(value.weights.iter().zip(&cost.weights))
        .map(|(label, (&v, &c))| {
            let value_pct = 100.0 * v;
            let cost_pct = 100.0 * c;
            let ratio = value_pct / cost_pct;
            CostValuePoint {
                label: label.clone(),
                value_pct,
                cost_pct,
                ratio,
                class: classify(ratio),
            }
        })
        .collect())
}

/// Principal eigenvalue by power iteration, stopping when successive
/// estimates differ by less than `tol`.
pub fn principal_eigenvalue(m: &PairwiseMatrix, tol: f64) -> f64 {
    let n = m.n();
    let mut v = vec![1.0 / n as f64; n];
    let mut lambda = 0.0;
    for _ in 0..100_000 {
        let w: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| m.get(i, j) * v[j]).sum())
            .collect();
        let sum: f64 = w.iter().sum();
        // v sums to 1, so the growth of the sum estimates lambda
        let next = sum;
        v = w.into_iter().map(|x| x / sum).collect();
        if (next - lambda).abs() < tol {
            return next;
        }
        lambda = next;
    }
    lambda
}

/// CI / RI with CI = (lambda_max - n) / (n - 1).
pub fn consistency_ratio(m: &PairwiseMatrix) -> Result<f64, AhpError> {
    let n = m.n();
    if !(3..=10).contains(&n) {
        return Err(AhpError::UnsupportedSize(n));
    }
    let lambda = principal_eigenvalue(m, 1e-9 * 1e-3);
    let ci = (lambda - n as f64) / (n as f64 - 1.0);
    Ok(ci / RANDOM_INDEX[n - 3])
}

/// Full cost-value analysis of a value matrix and a cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CostValueReport {
    pub points: Vec<CostValuePoint>,
    pub value_cr: Option<f64>,
    pub cost_cr: Option<f64>,
}

pub fn analyze(value: &PairwiseMatrix, cost: &PairwiseMatrix) -> Result<CostValueReport, AhpError> {
    if value.n() != cost.n() {
        return Err(AhpError::Shape(format!(
            "value matrix is {0}x{0}, cost matrix is {1}x{1}",
            value.n(),
            cost.n()
        )));
    }
    if value.labels() != cost.labels() {
        return Err(AhpError::Shape(
            "value and cost matrices have different labels".into(),
        ));
    }
    let points = cost_value_points(&priority_vector(value), &priority_vector(cost), value.labels())?;
    Ok(CostValueReport {
        points,
        value_cr: consistency_ratio(value).ok(),
        cost_cr: consistency_ratio(cost).ok(),
    })
}

/// Writes `label,value_pct,cost_pct,ratio,class` rows and a CR footer line.
pub fn write_report<W: io::Write>(report: &CostValueReport, out: W) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["label", "value_pct", "cost_pct", "ratio", "class"])?;
    for p in &report.points {
        w.write_record([
            p.label.clone(),
            format!("{:.4}", p.value_pct),
            format!("{:.4}", p.cost_pct),
            format!("{:.4}", p.ratio),
            p.class.to_string(),
        ])?;
    }
    w.flush()?;
    let mut out = w.into_inner().map_err(|e| e.into_error())?;
    let cr = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.6}"));
    writeln!(
        out,
        "# consistency_ratio value={} cost={}",
        cr(report.value_cr),
        cr(report.cost_cr)
    )?;
    Ok(())
}
