//! Offline query-set selection.
//!
//! `B` random query subsets of size `m` are scored by how well an OLS
//! regression of reference scores on reference-only perspectives fits, and
//! the best-fitting subset is kept. No target model is involved.

use std::io::Write;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cache::{BenchmarkDataset, FamilyId, QueryId};
use crate::error::{Error, Result};
use crate::geometry::{build_dkps_indexed, DEFAULT_DIM};
use crate::harness::{split_trial, BankCache, PredictionTask, ReferenceCount, ReferenceSampling};
use crate::irt::DEFAULT_BINARIZE_THRESHOLD;
use crate::pool::with_workers;
use crate::predictors::{fit_ols, Method, Regressor};
use crate::stats::{compensated_sum, median};

pub const DEFAULT_CANDIDATES: usize = 512;

/// `1 - SS_res / SS_tot`.
pub fn r_squared(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    if predicted.is_empty() || predicted.len() != actual.len() {
        return Err(Error::invalid("R^2 needs equal nonempty lengths"));
    }
    let mean = actual.iter().sum::<f64>() / actual.len() as f64;
    let ss_tot: f64 = actual.iter().map(|a| (a - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::invalid(
            "R^2 is undefined for constant actual values",
        ));
    }
    let ss_res: f64 = predicted
        .iter()
        .zip(actual)
        .map(|(p, a)| (a - p).powi(2))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// How a candidate's fit is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitCriterion {
    /// Fit and evaluate on the same references.
    #[default]
    InSample,
    /// Predict each reference from a fit on all the others.
    LeaveOneOut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub m: usize,
    pub candidates: usize,
    pub dim: usize,
    pub seed: u64,
    pub criterion: FitCriterion,
    #[serde(skip)]
    pub workers: Option<usize>,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            m: 8,
            candidates: DEFAULT_CANDIDATES,
            dim: DEFAULT_DIM,
            seed: 0,
            criterion: FitCriterion::InSample,
            workers: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuerySetCandidate {
    /// Position in the sampling order; ties in R^2 go to the lowest index.
    pub index: usize,
    /// Seed from which this candidate's queries were drawn.
    pub seed: u64,
    /// Query indices into the dataset, ascending.
    pub queries: Vec<usize>,
    pub r2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub best: QuerySetCandidate,
    /// Every candidate that could be scored, in index order.
    pub candidates: Vec<QuerySetCandidate>,
    pub failures: usize,
}

/// Candidate subsets in sampling order: `(seed, sorted query indices)`.
pub fn sample_candidates(
    total: usize,
    m: usize,
    count: usize,
    seed: u64,
) -> Vec<(u64, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let s: u64 = rng.random();
            let mut q = index::sample(&mut ChaCha8Rng::seed_from_u64(s), total, m).into_vec();
            q.sort_unstable();
            (s, q)
        })
        .collect()
}

/// Goodness of fit of DKPS-OLS on `references` using `queries`.
pub fn candidate_fit(
    dataset: &BenchmarkDataset,
    references: &[usize],
    queries: &[usize],
    dim: usize,
    criterion: FitCriterion,
) -> Result<f64> {
    let space = build_dkps_indexed(dataset, references, references.len(), queries, dim)?;
    let features: Vec<Vec<f64>> = (0..space.len())
        .map(|i| space.coordinate(i).to_vec())
        .collect();
    let scores: Vec<f64> = references
        .iter()
        .map(|&i| dataset.benchmark_score(i))
        .collect();
    let predicted = match criterion {
        FitCriterion::InSample => {
            let model = fit_ols(&features, &scores)?;
            features
                .iter()
                .map(|f| model.evaluate(f))
                .collect::<Result<Vec<_>>>()?
        }
        FitCriterion::LeaveOneOut => (0..features.len())
            .map(|i| {
                let (f, y): (Vec<Vec<f64>>, Vec<f64>) = features
                    .iter()
                    .zip(&scores)
                    .enumerate()
                    .filter(|(k, _)| *k != i)
                    .map(|(_, (f, y))| (f.clone(), *y))
                    .unzip();
                fit_ols(&f, &y)?.evaluate(&features[i])
            })
            .collect::<Result<Vec<_>>>()?,
    };
    r_squared(&predicted, &scores)
}

/// Picks the candidate subset with the highest reference R^2.
pub fn select_query_set(
    dataset: &BenchmarkDataset,
    references: &[usize],
    config: &SelectionConfig,
) -> Result<SelectionResult> {
    let total = dataset.num_queries();
    if config.m == 0 || config.m > total {
        return Err(Error::invalid(format!(
            "m = {} outside 1..={total}",
            config.m
        )));
    }
    if config.candidates == 0 {
        return Err(Error::invalid("need at least one candidate query set"));
    }
    if references.is_empty() {
        return Err(Error::invalid("selection needs reference models"));
    }
    let drawn = sample_candidates(total, config.m, config.candidates, config.seed);
    let scored: Vec<Result<f64>> = with_workers(config.workers, || {
        drawn
            .par_iter()
            .map(|(_, q)| candidate_fit(dataset, references, q, config.dim, config.criterion))
            .collect()
    })?;

    let mut candidates = Vec::new();
    let mut last_error = None;
    for (index, ((seed, queries), r2)) in drawn.into_iter().zip(scored).enumerate() {
        match r2 {
            Ok(r2) if r2.is_finite() => candidates.push(QuerySetCandidate {
                index,
                seed,
                queries,
                r2,
            }),
            Ok(_) => last_error = Some(Error::Numerical("non-finite R^2".into())),
            Err(e) => {
                log::debug!("candidate {index} failed: {e}");
                last_error = Some(e);
            }
        }
    }
    let failures = config.candidates - candidates.len();
    let best = candidates
        .iter()
        .fold(None::<&QuerySetCandidate>, |best, c| match best {
            Some(b) if b.r2 >= c.r2 => Some(b),
            _ => Some(c),
        })
        .cloned()
        .ok_or_else(|| {
            let reason = last_error.map_or_else(String::new, |e| format!(": {e}"));
            Error::Numerical(format!("every candidate query set failed{reason}"))
        })?;
    Ok(SelectionResult {
        best,
        candidates,
        failures,
    })
}

impl SelectionResult {
    /// `index,seed,r2,selected,query_ids` rows; query ids are `;`-joined.
    pub fn write_candidates_csv<W: Write>(&self, queries: &[QueryId], writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let err = |e: csv::Error| Error::Parse {
            location: "candidates.csv".into(),
            message: e.to_string(),
        };
        out.write_record(["index", "seed", "r2", "selected", "query_ids"])
            .map_err(err)?;
        for c in &self.candidates {
            let ids: Vec<&str> = c.queries.iter().map(|&j| queries[j].as_str()).collect();
            out.write_record([
                c.index.to_string(),
                c.seed.to_string(),
                c.r2.to_string(),
                (c.index == self.best.index).to_string(),
                ids.join(";"),
            ])
            .map_err(err)?;
        }
        out.flush().map_err(|e| Error::io("candidates.csv", e))
    }
}

/// Outcome of one held-out split in [`selection_experiment`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionTrial {
    pub seed: u64,
    pub family: FamilyId,
    pub selected: QuerySetCandidate,
    /// Held-out DKPS-OLS MAE using the selected queries.
    pub selected_mae: f64,
    /// Held-out MAE of the first [`COMPARISON_POOL`] scored candidates.
    pub candidate_maes: Vec<f64>,
    pub median_candidate_mae: f64,
}

/// Random candidates whose held-out MAE forms the comparison pool in
/// [`selection_experiment`].
pub const COMPARISON_POOL: usize = 64;

/// For each seed: hold out a family as in the LOFO harness, select a query
/// set on the remaining references, and compare the held-out DKPS-OLS MAE of
/// the selected set against that of the first [`COMPARISON_POOL`] random
/// candidates.
pub fn selection_experiment(
    dataset: &BenchmarkDataset,
    seeds: &[u64],
    config: &SelectionConfig,
) -> Result<Vec<SelectionTrial>> {
    let families = dataset.families();
    if families.len() < 2 {
        return Err(Error::invalid(
            "selection experiment needs at least two families",
        ));
    }
    let banks = BankCache::default();
    let method = [Method::Dkps(Regressor::Ols)];
    let mut out = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let split = split_trial(
            dataset,
            &families,
            ReferenceCount::All,
            seed,
            ReferenceSampling::PerTrial,
        )?;
        let result = select_query_set(
            dataset,
            &split.references,
            &SelectionConfig {
                seed,
                ..config.clone()
            },
        )?;
        let held_out_mae = |queries: &[usize]| -> Result<f64> {
            let task = PredictionTask {
                dataset,
                references: &split.references,
                targets: &split.targets,
                queries,
                dim: config.dim,
                alpha: 0.0,
                clip_order: Default::default(),
                irt_threshold: DEFAULT_BINARIZE_THRESHOLD,
                banks: &banks,
            };
            let predictions = task.run(&method)?.remove(0);
            let errors = split
                .targets
                .iter()
                .zip(predictions)
                .map(|(&t, p)| (p - dataset.benchmark_score(t)).abs());
            Ok(compensated_sum(errors) / split.targets.len() as f64)
        };
        let pool = &result.candidates[..result.candidates.len().min(COMPARISON_POOL)];
        let candidate_maes: Vec<f64> = with_workers(config.workers, || {
            pool.par_iter()
                .map(|c| held_out_mae(&c.queries))
                .collect::<Result<Vec<_>>>()
        })??;
        let selected_mae = held_out_mae(&result.best.queries)?;
        log::info!("selection seed {seed}: selected MAE {selected_mae:.5}");
        out.push(SelectionTrial {
            seed,
            family: split.family,
            selected: result.best,
            selected_mae,
            median_candidate_mae: median(&candidate_maes)?,
            candidate_maes,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::tests::toy_records;
    use crate::cache::{BenchmarkDataset, EmbeddedResponse};

    #[test]
    fn r_squared_cases() {
        assert_eq!(r_squared(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(r_squared(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(r_squared(&[0.5, 0.5], &[0.0, 1.0]).unwrap(), 0.0);
        assert!(r_squared(&[0.5, 0.5], &[0.5, 0.5]).is_err());
        assert!(r_squared(&[], &[]).is_err());
    }

    /// Query `planted` embeds score information; all others are pure noise
    /// unrelated to score.
    fn planted(n: usize, m: usize, planted: usize) -> BenchmarkDataset {
        let mut rec = toy_records(n, m, 1, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for model in rec.models.iter_mut() {
            model.benchmark_score = rng.random_range(0.05..0.95);
        }
        let scores: Vec<f64> = rec.models.iter().map(|m| m.benchmark_score).collect();
        let idx = |e: &EmbeddedResponse| {
            (
                e.model.as_str()[1..].parse::<usize>().unwrap(),
                e.query.as_str()[1..].parse::<usize>().unwrap(),
            )
        };
        for e in rec.embeddings.iter_mut() {
            let (i, j) = idx(e);
            e.vector = if j == planted {
                vec![scores[i] as f32 * 10.0, 0.0]
            } else {
                vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]
            };
        }
        BenchmarkDataset::from_records(rec).unwrap()
    }

    #[test]
    fn planted_query_is_recovered() {
        let ds = planted(30, 6, 4);
        let refs: Vec<usize> = (0..30).collect();
        let config = SelectionConfig {
            m: 1,
            candidates: 40,
            dim: 1,
            ..Default::default()
        };
        let result = select_query_set(&ds, &refs, &config).unwrap();
        assert_eq!(result.best.queries, vec![4]);
        assert!((result.best.r2 - 1.0).abs() < 1e-9);
        let max = result
            .candidates
            .iter()
            .map(|c| c.r2)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(result.best.r2, max);
        let first = result.candidates.iter().find(|c| c.r2 == max).unwrap();
        assert_eq!(first.index, result.best.index);
    }

    #[test]
    fn single_candidate_and_full_set() {
        let ds = planted(12, 5, 0);
        let refs: Vec<usize> = (0..12).collect();
        let one = SelectionConfig {
            m: 2,
            candidates: 1,
            dim: 2,
            ..Default::default()
        };
        let r = select_query_set(&ds, &refs, &one).unwrap();
        assert_eq!(r.best.index, 0);
        assert_eq!(r.best.queries, sample_candidates(5, 2, 1, 0)[0].1);

        let full = SelectionConfig {
            m: 5,
            candidates: 3,
            dim: 2,
            ..Default::default()
        };
        let r = select_query_set(&ds, &refs, &full).unwrap();
        assert_eq!(r.best.queries, vec![0, 1, 2, 3, 4]);
        let direct =
            candidate_fit(&ds, &refs, &[0, 1, 2, 3, 4], 2, FitCriterion::InSample).unwrap();
        assert_eq!(r.best.r2, direct);
    }

    #[test]
    fn deterministic_across_workers() {
        let ds = planted(20, 8, 3);
        let refs: Vec<usize> = (0..20).collect();
        let mut config = SelectionConfig {
            m: 3,
            candidates: 16,
            dim: 2,
            seed: 5,
            ..Default::default()
        };
        config.workers = Some(1);
        let a = select_query_set(&ds, &refs, &config).unwrap();
        config.workers = Some(4);
        let b = select_query_set(&ds, &refs, &config).unwrap();
        assert_eq!(a, b);
        config.criterion = FitCriterion::LeaveOneOut;
        let loo = select_query_set(&ds, &refs, &config).unwrap();
        assert!(loo.best.r2 <= a.best.r2 + 1e-12);
    }

    #[test]
    fn all_failures_is_an_error() {
        let mut rec = toy_records(6, 4, 1, 2);
        for m in rec.models.iter_mut() {
            m.benchmark_score = 0.3;
        }
        let ds = BenchmarkDataset::from_records(rec).unwrap();
        let refs: Vec<usize> = (0..6).collect();
        let config = SelectionConfig {
            m: 2,
            candidates: 4,
            dim: 2,
            ..Default::default()
        };
        assert!(select_query_set(&ds, &refs, &config).is_err());
    }
}
