//! Rasch (one-parameter logistic) item response model.
//!
//! `P(correct | theta, b) = 1 / (1 + exp(-(theta - b)))`.
//!
//! Item difficulties are fitted offline by joint maximum likelihood over a
//! reference correctness matrix. A target's ability is then fitted on its
//! answers to the query subset with difficulties held fixed, and the score
//! estimate is the mean predicted correctness over all items. That mapping is
//! this crate's interpretation; other ability-to-score maps are possible.

use std::io::{Read, Write};

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::cache::{BenchmarkDataset, QueryId};
use crate::error::{Error, Result};
use crate::predictors::clip_unit;

/// Bound for parameters whose maximum-likelihood estimate diverges.
pub const PARAMETER_CLAMP: f64 = 30.0;
pub const MAX_ITERATIONS: usize = 500;
pub const CONVERGENCE_TOLERANCE: f64 = 1e-8;
/// Default cut-off for turning graded response scores into 0/1 outcomes.
pub const DEFAULT_BINARIZE_THRESHOLD: f64 = 0.5;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log P(x | logit)` for a Bernoulli outcome with the given logit.
fn log_lik(correct: bool, logit: f64) -> f64 {
    // log sigmoid(z) = -log(1 + e^{-z})
    let z = if correct { logit } else { -logit };
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

/// Dense `models x items` matrix of optional binary outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectnessMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Option<bool>>,
}

impl CorrectnessMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<Option<bool>>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "{} outcomes cannot form a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(CorrectnessMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<bool>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged correctness rows"));
        }
        CorrectnessMatrix::new(
            rows.len(),
            cols,
            rows.iter().flatten().map(|&b| Some(b)).collect(),
        )
    }

    /// Outcomes of `models` on every query of `dataset`, using stored
    /// correctness or response scores binarized at `threshold`.
    pub fn from_dataset(
        dataset: &BenchmarkDataset,
        models: &[usize],
        threshold: f64,
    ) -> Result<Self> {
        if !dataset.has_correctness() && !dataset.has_response_scores() {
            return Err(Error::invalid(
                "IRT needs correctness.csv or response_scores.csv",
            ));
        }
        let m = dataset.num_queries();
        let mut data = Vec::with_capacity(models.len() * m);
        for &i in models {
            for j in 0..m {
                data.push(dataset.binary_outcome(i, j, threshold));
            }
        }
        CorrectnessMatrix::new(models.len(), m, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> Option<bool> {
        self.data[i * self.cols + j]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub log_likelihood: f64,
    /// Log-likelihood after each iteration, starting with the initial value.
    pub log_likelihood_trace: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Fitted item difficulties, one per query.
#[derive(Debug, Clone, PartialEq)]
pub struct RaschItemBank {
    pub queries: Vec<QueryId>,
    pub difficulties: Vec<f64>,
    pub diagnostics: FitDiagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AbilityEstimate {
    pub theta: f64,
    /// `1 / sqrt(observed information)` at the estimate.
    pub standard_error: f64,
    /// The estimate hit [`PARAMETER_CLAMP`] because every answer agreed.
    pub clamped: bool,
}

/// Maximises the concave 1-D log-likelihood `f` from `start` with damped
/// Newton steps inside `[-PARAMETER_CLAMP, PARAMETER_CLAMP]`.
///
/// `grad_info(x)` returns the gradient and the (positive) information. A step
/// is accepted only if it does not lower `f`, so the objective never
/// decreases.
fn newton_1d(start: f64, f: impl Fn(f64) -> f64, grad_info: impl Fn(f64) -> (f64, f64)) -> f64 {
    let (g, info) = grad_info(start);
    if g == 0.0 || info <= 0.0 {
        return start;
    }
    let base = f(start);
    let mut step = g / info;
    for _ in 0..40 {
        let cand = (start + step).clamp(-PARAMETER_CLAMP, PARAMETER_CLAMP);
        if f(cand) >= base {
            return cand;
        }
        step *= 0.5;
    }
    start
}

fn total_log_likelihood(x: &CorrectnessMatrix, theta: &[f64], b: &[f64]) -> f64 {
    let mut ll = 0.0;
    for (i, &t) in theta.iter().enumerate().take(x.rows) {
        for (j, &bj) in b.iter().enumerate().take(x.cols) {
            if let Some(c) = x.get(i, j) {
                ll += log_lik(c, t - bj);
            }
        }
    }
    ll
}

#[derive(Clone, Copy, PartialEq)]
enum Extreme {
    None,
    AllCorrect,
    AllWrong,
}

fn classify<I: Iterator<Item = Option<bool>>>(outcomes: I) -> (usize, Extreme) {
    let (mut n, mut correct) = (0usize, 0usize);
    for c in outcomes.flatten() {
        n += 1;
        correct += c as usize;
    }
    let kind = if n > 0 && correct == n {
        Extreme::AllCorrect
    } else if n > 0 && correct == 0 {
        Extreme::AllWrong
    } else {
        Extreme::None
    };
    (n, kind)
}

/// Joint maximum-likelihood fit of abilities and difficulties.
///
/// Alternates damped Newton updates of every ability and every difficulty
/// until the largest parameter change is below [`CONVERGENCE_TOLERANCE`] or
/// [`MAX_ITERATIONS`] is reached. Difficulties are shifted to mean zero over
/// the non-degenerate items. Items answered correctly (incorrectly) by every
/// model have no finite estimate and are clamped to `-30` (`+30`).
pub fn fit_difficulties(
    matrix: &CorrectnessMatrix,
    queries: Vec<QueryId>,
) -> Result<RaschItemBank> {
    let (n, m) = (matrix.rows, matrix.cols);
    if queries.len() != m {
        return Err(Error::invalid(format!(
            "{} query ids for {m} items",
            queries.len()
        )));
    }
    if n == 0 || m == 0 {
        return Err(Error::invalid("empty correctness matrix"));
    }

    let mut warnings = Vec::new();
    let mut theta = vec![0.0; n];
    let mut b = vec![0.0; m];
    let mut item_fixed = vec![false; m];
    let mut person_fixed = vec![false; n];

    for j in 0..m {
        let (answered, kind) = classify((0..n).map(|i| matrix.get(i, j)));
        if answered == 0 {
            return Err(Error::invalid(format!(
                "item '{}' was answered by no model",
                queries[j]
            )));
        }
        match kind {
            Extreme::AllCorrect => {
                b[j] = -PARAMETER_CLAMP;
                item_fixed[j] = true;
                warnings.push(format!(
                    "item '{}' answered correctly by every model; difficulty clamped to -{PARAMETER_CLAMP}",
                    queries[j]
                ));
            }
            Extreme::AllWrong => {
                b[j] = PARAMETER_CLAMP;
                item_fixed[j] = true;
                warnings.push(format!(
                    "item '{}' answered incorrectly by every model; difficulty clamped to {PARAMETER_CLAMP}",
                    queries[j]
                ));
            }
            Extreme::None => {}
        }
    }
    for i in 0..n {
        match classify((0..m).map(|j| matrix.get(i, j))) {
            (_, Extreme::AllCorrect) => {
                theta[i] = PARAMETER_CLAMP;
                person_fixed[i] = true;
            }
            (_, Extreme::AllWrong) => {
                theta[i] = -PARAMETER_CLAMP;
                person_fixed[i] = true;
            }
            _ => {}
        }
    }
    if person_fixed.iter().any(|&f| f) {
        warnings.push(format!(
            "{} models with all-correct or all-incorrect answers have abilities clamped to +/-{PARAMETER_CLAMP}",
            person_fixed.iter().filter(|&&f| f).count()
        ));
    }
    for w in &warnings {
        warn!("{w}");
    }

    let mut trace = vec![total_log_likelihood(matrix, &theta, &b)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut max_change = 0.0f64;

        for i in (0..n).filter(|&i| !person_fixed[i]) {
            let row = |t: f64| {
                (0..m)
                    .filter_map(|j| matrix.get(i, j).map(|c| log_lik(c, t - b[j])))
                    .sum::<f64>()
            };
            let grad = |t: f64| {
                (0..m).fold((0.0, 0.0), |(g, h), j| match matrix.get(i, j) {
                    Some(c) => {
                        let p = sigmoid(t - b[j]);
                        (g + c as u8 as f64 - p, h + p * (1.0 - p))
                    }
                    None => (g, h),
                })
            };
            let next = newton_1d(theta[i], row, grad);
            max_change = max_change.max((next - theta[i]).abs());
            theta[i] = next;
        }

        for j in (0..m).filter(|&j| !item_fixed[j]) {
            let col = |d: f64| {
                (0..n)
                    .filter_map(|i| matrix.get(i, j).map(|c| log_lik(c, theta[i] - d)))
                    .sum::<f64>()
            };
            let grad = |d: f64| {
                (0..n).fold((0.0, 0.0), |(g, h), i| match matrix.get(i, j) {
                    Some(c) => {
                        let p = sigmoid(theta[i] - d);
                        (g + p - c as u8 as f64, h + p * (1.0 - p))
                    }
                    None => (g, h),
                })
            };
            let next = newton_1d(b[j], col, grad);
            max_change = max_change.max((next - b[j]).abs());
            b[j] = next;
        }

        trace.push(total_log_likelihood(matrix, &theta, &b));
        if max_change < CONVERGENCE_TOLERANCE {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!("Rasch fit stopped after {MAX_ITERATIONS} iterations without converging");
    }

    // Identify the scale: mean difficulty of the free items is zero.
    let free: Vec<usize> = (0..m).filter(|&j| !item_fixed[j]).collect();
    if !free.is_empty() {
        let shift = free.iter().map(|&j| b[j]).sum::<f64>() / free.len() as f64;
        for &j in &free {
            b[j] -= shift;
        }
    }

    Ok(RaschItemBank {
        queries,
        difficulties: b,
        diagnostics: FitDiagnostics {
            iterations,
            converged,
            log_likelihood: *trace.last().expect("trace starts non-empty"),
            log_likelihood_trace: trace,
            warnings,
        },
    })
}

/// Maximum-likelihood ability from answers to items with known
/// `difficulties`. All-correct / all-incorrect answers clamp to ±30.
pub fn fit_ability(responses: &[bool], difficulties: &[f64]) -> Result<AbilityEstimate> {
    if responses.is_empty() {
        return Err(Error::invalid("ability fit needs at least one response"));
    }
    if responses.len() != difficulties.len() {
        return Err(Error::invalid(
            "responses and difficulties differ in length",
        ));
    }
    if difficulties.iter().any(|b| !b.is_finite()) {
        return Err(Error::invalid("non-finite difficulty"));
    }
    let info_at = |t: f64| {
        difficulties
            .iter()
            .map(|&b| {
                let p = sigmoid(t - b);
                p * (1.0 - p)
            })
            .sum::<f64>()
    };
    let se = |t: f64| 1.0 / info_at(t).sqrt();

    let correct = responses.iter().filter(|&&c| c).count();
    if correct == responses.len() || correct == 0 {
        let theta = if correct == 0 {
            -PARAMETER_CLAMP
        } else {
            PARAMETER_CLAMP
        };
        debug!(
            "all {} answers agree; ability clamped to {theta}",
            responses.len()
        );
        return Ok(AbilityEstimate {
            theta,
            standard_error: se(theta),
            clamped: true,
        });
    }

    let ll = |t: f64| {
        responses
            .iter()
            .zip(difficulties)
            .map(|(&c, &b)| log_lik(c, t - b))
            .sum::<f64>()
    };
    let grad = |t: f64| {
        responses
            .iter()
            .zip(difficulties)
            .fold((0.0, 0.0), |(g, h), (&c, &b)| {
                let p = sigmoid(t - b);
                (g + c as u8 as f64 - p, h + p * (1.0 - p))
            })
    };
    let mut theta = 0.0;
    for _ in 0..MAX_ITERATIONS {
        let next = newton_1d(theta, ll, grad);
        let change = (next - theta).abs();
        theta = next;
        if change < CONVERGENCE_TOLERANCE {
            break;
        }
    }
    Ok(AbilityEstimate {
        theta,
        standard_error: se(theta),
        clamped: theta.abs() >= PARAMETER_CLAMP,
    })
}

/// Mean predicted correctness over every item in the bank, clipped.
pub fn irt_predict_score(theta: f64, bank: &RaschItemBank) -> f64 {
    predict_from_difficulties(theta, &bank.difficulties)
}

pub(crate) fn predict_from_difficulties(theta: f64, difficulties: &[f64]) -> f64 {
    let total: f64 = difficulties.iter().map(|&b| sigmoid(theta - b)).sum();
    clip_unit(total / difficulties.len() as f64)
}

impl RaschItemBank {
    /// Ability of a model answering `items` (indices into the bank) with
    /// `responses`.
    pub fn fit_ability(&self, items: &[usize], responses: &[bool]) -> Result<AbilityEstimate> {
        let b: Vec<f64> = items
            .iter()
            .map(|&j| {
                self.difficulties
                    .get(j)
                    .copied()
                    .ok_or_else(|| Error::invalid(format!("item index {j} outside the bank")))
            })
            .collect::<Result<_>>()?;
        fit_ability(responses, &b)
    }

    /// `query_id,difficulty` CSV.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let err = |e: csv::Error| Error::Parse {
            location: "item bank csv".into(),
            message: e.to_string(),
        };
        out.write_record(["query_id", "difficulty"]).map_err(err)?;
        for (q, b) in self.queries.iter().zip(&self.difficulties) {
            out.write_record([q.to_string(), b.to_string()])
                .map_err(err)?;
        }
        out.flush().map_err(|e| Error::io("item bank csv", e))
    }

    /// Reads a bank written by [`RaschItemBank::write_csv`]. Fit diagnostics
    /// are not stored and come back empty.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            query_id: String,
            difficulty: f64,
        }
        let mut queries = Vec::new();
        let mut difficulties = Vec::new();
        for (i, row) in csv::Reader::from_reader(reader)
            .deserialize::<Row>()
            .enumerate()
        {
            let row = row.map_err(|e| Error::Parse {
                location: format!("item bank csv:{}", i + 2),
                message: e.to_string(),
            })?;
            if !row.difficulty.is_finite() {
                return Err(Error::Parse {
                    location: format!("item bank csv:{}", i + 2),
                    message: "non-finite difficulty".into(),
                });
            }
            queries.push(QueryId::from(row.query_id));
            difficulties.push(row.difficulty);
        }
        Ok(RaschItemBank {
            queries,
            difficulties,
            diagnostics: FitDiagnostics {
                iterations: 0,
                converged: true,
                log_likelihood: f64::NAN,
                log_likelihood_trace: Vec::new(),
                warnings: Vec::new(),
            },
        })
    }

    /// Reorders the bank to `queries` (the dataset's canonical order).
    pub fn aligned_to(&self, queries: &[QueryId]) -> Result<Vec<f64>> {
        let index: std::collections::HashMap<&QueryId, f64> = self
            .queries
            .iter()
            .zip(self.difficulties.iter().copied())
            .collect();
        queries
            .iter()
            .map(|q| {
                index.get(q).copied().ok_or_else(|| Error::UnknownId {
                    kind: "query (item bank)",
                    id: q.to_string(),
                })
            })
            .collect()
    }
}
