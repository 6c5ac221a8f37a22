//! Evaluation records, aggregates and their file formats.
//!
//! | file          | columns                                                                 |
//! |---------------|-------------------------------------------------------------------------|
//! | `report.csv`  | trial, seed, m, n, d, alpha, method, family_id, model_id, prediction, truth, abs_error |
//! | `summary.csv` | method, then one `m=<m>` MAE column per query budget                     |
//! | `deltas.csv`  | kind (`model` or `query_set`), m, key, delta                             |
//! | `sweep.csv`   | n, d, alpha, method, m, mae                                              |
//!
//! Each JSON mirror is an object with `schema_version` and the same rows.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::cache::{FamilyId, ModelId, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::predictors::{Method, Regressor};
use crate::stats::{compensated_sum, five_number, FiveNumber};

use super::{AlphaPolicy, ReferenceCount};

/// One prediction of one held-out model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellRecord {
    pub trial: usize,
    pub seed: u64,
    pub m: usize,
    /// Number of references actually used.
    pub n: usize,
    #[serde(rename = "d")]
    pub dim: usize,
    pub alpha: f64,
    pub method: Method,
    #[serde(rename = "family_id")]
    pub family: FamilyId,
    #[serde(rename = "model_id")]
    pub model: ModelId,
    pub prediction: f64,
    pub truth: f64,
    pub abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: Method,
    pub m: usize,
    pub mae: f64,
    pub cells: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub methods: Vec<Method>,
    pub m_values: Vec<usize>,
    /// Ordered by trial, then `m`, then method, then model.
    pub records: Vec<CellRecord>,
}

fn csv_err(what: &str) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Parse {
        location: what.to_string(),
        message: e.to_string(),
    }
}

fn write_json<W: Write, T: Serialize>(writer: W, key: &str, rows: &T) -> Result<()> {
    let mut map = serde_json::Map::new();
    map.insert("schema_version".into(), SCHEMA_VERSION.into());
    map.insert(
        key.into(),
        serde_json::to_value(rows).map_err(|e| Error::invalid(e.to_string()))?,
    );
    let mut writer = writer;
    serde_json::to_writer_pretty(&mut writer, &serde_json::Value::Object(map))
        .map_err(|e| Error::invalid(e.to_string()))?;
    writer.write_all(b"\n").map_err(|e| Error::io(key, e))
}

impl EvaluationReport {
    /// Mean absolute error of `method` at budget `m`; `None` without cells.
    pub fn mae(&self, method: Method, m: usize) -> Option<f64> {
        let mut count = 0usize;
        let sum = compensated_sum(
            self.records
                .iter()
                .filter(|r| r.method == method && r.m == m)
                .inspect(|_| count += 1)
                .map(|r| r.abs_error),
        );
        (count > 0).then(|| sum / count as f64)
    }

    /// MAE per trial for `method` at budget `m`, in trial order.
    pub fn trial_maes(&self, method: Method, m: usize) -> Vec<(usize, f64)> {
        let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for r in self
            .records
            .iter()
            .filter(|r| r.method == method && r.m == m)
        {
            groups.entry(r.trial).or_default().push(r.abs_error);
        }
        groups
            .into_iter()
            .map(|(t, e)| (t, compensated_sum(e.iter().copied()) / e.len() as f64))
            .collect()
    }

    /// MAE per model (averaged over the trials that held it out).
    pub fn model_maes(&self, method: Method, m: usize) -> Vec<(ModelId, f64)> {
        let mut groups: BTreeMap<&ModelId, Vec<f64>> = BTreeMap::new();
        for r in self
            .records
            .iter()
            .filter(|r| r.method == method && r.m == m)
        {
            groups.entry(&r.model).or_default().push(r.abs_error);
        }
        groups
            .into_iter()
            .map(|(id, e)| {
                (
                    id.clone(),
                    compensated_sum(e.iter().copied()) / e.len() as f64,
                )
            })
            .collect()
    }

    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut out = Vec::new();
        for &method in &self.methods {
            for &m in &self.m_values {
                let cells = self
                    .records
                    .iter()
                    .filter(|r| r.method == method && r.m == m)
                    .count();
                if let Some(mae) = self.mae(method, m) {
                    out.push(SummaryRow {
                        method,
                        m,
                        mae,
                        cells,
                    });
                }
            }
        }
        out
    }

    pub fn write_report_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        for r in &self.records {
            out.serialize(r).map_err(csv_err("report.csv"))?;
        }
        out.flush().map_err(|e| Error::io("report.csv", e))
    }

    pub fn write_report_json<W: Write>(&self, writer: W) -> Result<()> {
        write_json(writer, "records", &self.records)
    }

    /// Methods as rows, one MAE column per query budget.
    pub fn write_summary_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let mut header = vec!["method".to_string()];
        header.extend(self.m_values.iter().map(|m| format!("m={m}")));
        out.write_record(&header).map_err(csv_err("summary.csv"))?;
        for &method in &self.methods {
            let mut row = vec![method.to_string()];
            row.extend(self.m_values.iter().map(|&m| {
                self.mae(method, m)
                    .map_or_else(String::new, |v| v.to_string())
            }));
            out.write_record(&row).map_err(csv_err("summary.csv"))?;
        }
        out.flush().map_err(|e| Error::io("summary.csv", e))
    }

    pub fn write_summary_json<W: Write>(&self, writer: W) -> Result<()> {
        write_json(writer, "summary", &self.summary())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelDelta {
    pub m: usize,
    pub model: ModelId,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuerySetDelta {
    pub m: usize,
    pub trial: usize,
    pub delta: f64,
}

/// Error of `baseline` minus error of `contender`: positive means the
/// contender did better.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaReport {
    pub baseline: Method,
    pub contender: Method,
    pub per_model: Vec<ModelDelta>,
    pub per_query_set: Vec<QuerySetDelta>,
}

/// Sample score against the OLS ensemble.
pub fn delta_report(report: &EvaluationReport) -> Result<DeltaReport> {
    delta_report_between(
        report,
        Method::SampleScore,
        Method::Ensemble(Regressor::Ols),
    )
}

pub fn delta_report_between(
    report: &EvaluationReport,
    baseline: Method,
    contender: Method,
) -> Result<DeltaReport> {
    for method in [baseline, contender] {
        if !report.methods.contains(&method) {
            return Err(Error::invalid(format!("report has no '{method}' records")));
        }
    }
    // (m, trial, model) -> baseline error
    let base: BTreeMap<(usize, usize, &ModelId), f64> = report
        .records
        .iter()
        .filter(|r| r.method == baseline)
        .map(|r| ((r.m, r.trial, &r.model), r.abs_error))
        .collect();
    let mut by_model: BTreeMap<(usize, &ModelId), Vec<f64>> = BTreeMap::new();
    let mut by_trial: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for r in report.records.iter().filter(|r| r.method == contender) {
        let b = base.get(&(r.m, r.trial, &r.model)).ok_or_else(|| {
            Error::invalid(format!(
                "no '{baseline}' record for model '{}' in trial {}",
                r.model, r.trial
            ))
        })?;
        let delta = b - r.abs_error;
        by_model.entry((r.m, &r.model)).or_default().push(delta);
        by_trial.entry((r.m, r.trial)).or_default().push(delta);
    }
    let avg = |v: &[f64]| compensated_sum(v.iter().copied()) / v.len() as f64;
    Ok(DeltaReport {
        baseline,
        contender,
        per_model: by_model
            .into_iter()
            .map(|((m, model), d)| ModelDelta {
                m,
                model: model.clone(),
                delta: avg(&d),
            })
            .collect(),
        per_query_set: by_trial
            .into_iter()
            .map(|((m, trial), d)| QuerySetDelta {
                m,
                trial,
                delta: avg(&d),
            })
            .collect(),
    })
}

impl DeltaReport {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["kind", "m", "key", "delta"])
            .map_err(csv_err("deltas.csv"))?;
        for d in &self.per_model {
            out.write_record([
                "model",
                &d.m.to_string(),
                d.model.as_str(),
                &d.delta.to_string(),
            ])
            .map_err(csv_err("deltas.csv"))?;
        }
        for d in &self.per_query_set {
            out.write_record([
                "query_set",
                &d.m.to_string(),
                &d.trial.to_string(),
                &d.delta.to_string(),
            ])
            .map_err(csv_err("deltas.csv"))?;
        }
        out.flush().map_err(|e| Error::io("deltas.csv", e))
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        write_json(writer, "deltas", self)
    }
}

/// One cell of a parameter sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub n: ReferenceCount,
    pub dim: usize,
    pub alpha: AlphaPolicy,
    pub report: EvaluationReport,
}

#[derive(Serialize)]
struct SweepRow {
    n: ReferenceCount,
    d: usize,
    alpha: String,
    method: Method,
    m: usize,
    mae: f64,
}

fn sweep_rows(cells: &[SweepCell]) -> Vec<SweepRow> {
    cells
        .iter()
        .flat_map(|c| {
            c.report.summary().into_iter().map(move |s| SweepRow {
                n: c.n,
                d: c.dim,
                alpha: c.alpha.to_string(),
                method: s.method,
                m: s.m,
                mae: s.mae,
            })
        })
        .collect()
}

/// Long-format sweep table, one MAE per cell, method and budget.
pub fn write_sweep_csv<W: Write>(cells: &[SweepCell], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    for row in sweep_rows(cells) {
        out.serialize(row).map_err(csv_err("sweep.csv"))?;
    }
    out.flush().map_err(|e| Error::io("sweep.csv", e))
}

pub fn write_sweep_json<W: Write>(cells: &[SweepCell], writer: W) -> Result<()> {
    write_json(writer, "sweep", &sweep_rows(cells))
}

/// MAE distribution over reference collections.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollectionStats {
    pub method: Method,
    pub m: usize,
    pub n: ReferenceCount,
    pub maes: Vec<f64>,
    pub summary: FiveNumber,
}

impl CollectionStats {
    pub(crate) fn new(method: Method, m: usize, n: ReferenceCount, maes: Vec<f64>) -> Result<Self> {
        let summary = five_number(&maes)?;
        Ok(CollectionStats {
            method,
            m,
            n,
            maes,
            summary,
        })
    }

    pub fn write_csv<W: Write>(stats: &[CollectionStats], writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record([
            "method",
            "m",
            "n",
            "collections",
            "min",
            "q25",
            "median",
            "q75",
            "max",
        ])
        .map_err(csv_err("collections.csv"))?;
        for s in stats {
            let f = s.summary;
            out.write_record([
                s.method.to_string(),
                s.m.to_string(),
                s.n.to_string(),
                s.maes.len().to_string(),
                f.min.to_string(),
                f.q25.to_string(),
                f.median.to_string(),
                f.q75.to_string(),
                f.max.to_string(),
            ])
            .map_err(csv_err("collections.csv"))?;
        }
        out.flush().map_err(|e| Error::io("collections.csv", e))
    }
}
