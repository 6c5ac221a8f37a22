//! Cached evaluations: identifiers, record types, the validated
//! [`BenchmarkDataset`] and cheap restricted views over it.
//!
//! Embeddings are inputs to this crate; nothing here computes them. The
//! on-disk layout lives in [`io`].

mod ids;
pub mod io;

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ids::{FamilyId, ModelId, QueryId};
pub use io::{load_dataset, read_records, save_dataset, EmbeddingFormat, DATASET_FILES};

/// Current version of every file schema written by this crate.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub benchmark: String,
    pub embedding: String,
}

impl Default for Metadata {
    fn default() -> Self {
        Metadata {
            benchmark: "unknown".into(),
            embedding: "unknown".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelRecord {
    pub id: ModelId,
    pub family: FamilyId,
    /// Full-benchmark score in `[0, 1]`.
    pub benchmark_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedResponse {
    pub model: ModelId,
    pub query: QueryId,
    pub replicate: u32,
    pub vector: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseScore {
    pub model: ModelId,
    pub query: QueryId,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectnessRecord {
    pub model: ModelId,
    pub query: QueryId,
    pub correct: bool,
}

/// Unvalidated dataset contents, exactly as parsed from disk.
///
/// [`BenchmarkDataset::from_records`] turns this into a validated dataset;
/// [`validate_common_query_set`] reports coverage problems without failing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetRecords {
    pub metadata: Metadata,
    pub models: Vec<ModelRecord>,
    pub queries: Vec<QueryId>,
    pub embeddings: Vec<EmbeddedResponse>,
    pub response_scores: Option<Vec<ResponseScore>>,
    pub correctness: Option<Vec<CorrectnessRecord>>,
}

/// Outcome of the common-query-set check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub passed: bool,
    /// `(model, query)` pairs with no embedded response at all.
    pub missing_pairs: Vec<(ModelId, QueryId)>,
    /// `(model, query, replicates found)` where the count differs from the
    /// dataset-wide replicate count or the replicate indices have gaps.
    pub replicate_mismatches: Vec<(ModelId, QueryId, usize)>,
    pub messages: Vec<String>,
}

/// Checks that every model covers every query with the same replicate count.
pub fn validate_common_query_set(records: &DatasetRecords) -> ValidationReport {
    let mut report = ValidationReport {
        passed: true,
        missing_pairs: Vec::new(),
        replicate_mismatches: Vec::new(),
        messages: Vec::new(),
    };
    if records.models.is_empty() {
        report.passed = false;
        report.messages.push("no models".into());
        return report;
    }
    if records.queries.is_empty() {
        report.passed = false;
        report.messages.push("no queries".into());
        return report;
    }

    let mut seen: HashMap<(&str, &str), Vec<u32>> = HashMap::new();
    for e in &records.embeddings {
        seen.entry((e.model.as_str(), e.query.as_str()))
            .or_default()
            .push(e.replicate);
    }

    // Modal replicate count is the reference; everything else is a mismatch.
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for reps in seen.values() {
        *counts.entry(reps.len()).or_default() += 1;
    }
    let expected = counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(r, _)| *r)
        .unwrap_or(0);

    for model in &records.models {
        for query in &records.queries {
            match seen.get(&(model.id.as_str(), query.as_str())) {
                None => report.missing_pairs.push((model.id.clone(), query.clone())),
                Some(reps) => {
                    let mut sorted = reps.clone();
                    sorted.sort_unstable();
                    let contiguous = sorted.iter().enumerate().all(|(i, &r)| r as usize == i);
                    if sorted.len() != expected || !contiguous {
                        report.replicate_mismatches.push((
                            model.id.clone(),
                            query.clone(),
                            sorted.len(),
                        ));
                    }
                }
            }
        }
    }
    if !report.missing_pairs.is_empty() {
        report.passed = false;
        report.messages.push(format!(
            "{} missing (model,query) pairs",
            report.missing_pairs.len()
        ));
    }
    if !report.replicate_mismatches.is_empty() {
        report.passed = false;
        report.messages.push(format!(
            "{} (model,query) pairs deviate from replicate count {expected}",
            report.replicate_mismatches.len()
        ));
    }
    report
}

/// Returns the one-hot encoding of a multiple-choice answer.
pub fn one_hot_embedding(choice_index: usize, num_choices: usize) -> Result<Vec<f32>> {
    if choice_index >= num_choices {
        return Err(Error::invalid(format!(
            "choice index {choice_index} out of range for {num_choices} choices"
        )));
    }
    let mut v = vec![0.0; num_choices];
    v[choice_index] = 1.0;
    Ok(v)
}

/// A validated, immutable benchmark dataset with dense storage.
///
/// Embeddings are stored as `f32` in `[model][query][replicate][dim]` order;
/// models and queries keep the order of their source files.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkDataset {
    metadata: Metadata,
    models: Vec<ModelRecord>,
    queries: Vec<QueryId>,
    dim: usize,
    replicates: usize,
    embeddings: Vec<f32>,
    response_scores: Option<Vec<Option<f64>>>,
    correctness: Option<Vec<Option<bool>>>,
    model_index: HashMap<ModelId, usize>,
    query_index: HashMap<QueryId, usize>,
}

fn check_unit_score(what: &str, value: f64) -> Result<()> {
    if !value.is_finite() || !(0.0..=1.0).contains(&value) {
        return Err(Error::Dataset(format!("{what} {value} outside [0,1]")));
    }
    Ok(())
}

impl BenchmarkDataset {
    /// Validates `records` and packs them into dense storage.
    pub fn from_records(records: DatasetRecords) -> Result<Self> {
        let DatasetRecords {
            metadata,
            models,
            queries,
            embeddings,
            response_scores,
            correctness,
        } = records;

        if models.is_empty() {
            return Err(Error::Dataset("no models".into()));
        }
        if queries.is_empty() {
            return Err(Error::Dataset("no queries".into()));
        }

        let mut model_index = HashMap::with_capacity(models.len());
        for (i, m) in models.iter().enumerate() {
            if model_index.insert(m.id.clone(), i).is_some() {
                return Err(Error::Dataset(format!("duplicate model id '{}'", m.id)));
            }
            check_unit_score(
                &format!("benchmark score of model '{}'", m.id),
                m.benchmark_score,
            )?;
        }
        let mut query_index = HashMap::with_capacity(queries.len());
        for (j, q) in queries.iter().enumerate() {
            if query_index.insert(q.clone(), j).is_some() {
                return Err(Error::Dataset(format!("duplicate query id '{q}'")));
            }
        }

        let lookup = |m: &ModelId, q: &QueryId| -> Result<(usize, usize)> {
            let i = *model_index.get(m).ok_or_else(|| Error::UnknownId {
                kind: "model",
                id: m.to_string(),
            })?;
            let j = *query_index.get(q).ok_or_else(|| Error::UnknownId {
                kind: "query",
                id: q.to_string(),
            })?;
            Ok((i, j))
        };

        let n = models.len();
        let nq = queries.len();
        let dim = match embeddings.first() {
            Some(e) => e.vector.len(),
            None => return Err(Error::Dataset("no embedded responses".into())),
        };
        if dim == 0 {
            return Err(Error::Dataset("embedding dimension is zero".into()));
        }

        // First pass: shape checks, duplicates and per-pair replicate sets.
        let mut reps_per_pair: Vec<Vec<u32>> = vec![Vec::new(); n * nq];
        for e in &embeddings {
            if e.vector.len() != dim {
                return Err(Error::Dataset(format!(
                    "dimension mismatch: record ({}, {}, replicate {}) has length {}, expected {dim}",
                    e.model,
                    e.query,
                    e.replicate,
                    e.vector.len()
                )));
            }
            if let Some(x) = e.vector.iter().find(|x| !x.is_finite()) {
                return Err(Error::Dataset(format!(
                    "non-finite value {x} in record ({}, {}, replicate {})",
                    e.model, e.query, e.replicate
                )));
            }
            let (i, j) = lookup(&e.model, &e.query)?;
            let reps = &mut reps_per_pair[i * nq + j];
            if reps.contains(&e.replicate) {
                return Err(Error::Dataset(format!(
                    "duplicate record ({}, {}, replicate {})",
                    e.model, e.query, e.replicate
                )));
            }
            reps.push(e.replicate);
        }

        let replicates = reps_per_pair[0].len();
        for (idx, reps) in reps_per_pair.iter().enumerate() {
            let (i, j) = (idx / nq, idx % nq);
            if reps.is_empty() {
                return Err(Error::Dataset(format!(
                    "missing (model,query) pair ({}, {})",
                    models[i].id, queries[j]
                )));
            }
            if reps.len() != replicates {
                return Err(Error::Dataset(format!(
                    "pair ({}, {}) has {} replicates, expected {replicates}",
                    models[i].id,
                    queries[j],
                    reps.len()
                )));
            }
            if let Some(&r) = reps.iter().find(|&&r| r as usize >= replicates) {
                return Err(Error::Dataset(format!(
                    "replicate indices for ({}, {}) have a gap (found index {r} with {replicates} replicates)",
                    models[i].id, queries[j]
                )));
            }
        }
        drop(reps_per_pair);

        let mut dense = vec![0.0f32; n * nq * replicates * dim];
        for e in embeddings {
            let (i, j) = lookup(&e.model, &e.query)?;
            let offset = ((i * nq + j) * replicates + e.replicate as usize) * dim;
            dense[offset..offset + dim].copy_from_slice(&e.vector);
        }

        let response_scores = match response_scores {
            None => None,
            Some(list) => {
                let mut dense = vec![None; n * nq];
                for s in list {
                    let (i, j) = lookup(&s.model, &s.query)?;
                    check_unit_score(
                        &format!("response score for ({}, {})", s.model, s.query),
                        s.score,
                    )?;
                    if dense[i * nq + j].replace(s.score).is_some() {
                        return Err(Error::Dataset(format!(
                            "duplicate response score for ({}, {})",
                            s.model, s.query
                        )));
                    }
                }
                Some(dense)
            }
        };

        let correctness = match correctness {
            None => None,
            Some(list) => {
                let mut dense = vec![None; n * nq];
                for c in list {
                    let (i, j) = lookup(&c.model, &c.query)?;
                    if dense[i * nq + j].replace(c.correct).is_some() {
                        return Err(Error::Dataset(format!(
                            "duplicate correctness record for ({}, {})",
                            c.model, c.query
                        )));
                    }
                }
                Some(dense)
            }
        };

        Ok(BenchmarkDataset {
            metadata,
            models,
            queries,
            dim,
            replicates,
            embeddings: dense,
            response_scores,
            correctness,
            model_index,
            query_index,
        })
    }

    /// Expands the dataset back into records, in canonical order.
    pub fn to_records(&self) -> DatasetRecords {
        let nq = self.queries.len();
        let mut embeddings = Vec::with_capacity(self.models.len() * nq * self.replicates);
        for (i, m) in self.models.iter().enumerate() {
            for (j, q) in self.queries.iter().enumerate() {
                for r in 0..self.replicates {
                    embeddings.push(EmbeddedResponse {
                        model: m.id.clone(),
                        query: q.clone(),
                        replicate: r as u32,
                        vector: self.embedding(i, j, r).to_vec(),
                    });
                }
            }
        }
        let pairs = |i: usize, j: usize| (self.models[i].id.clone(), self.queries[j].clone());
        let response_scores = self.response_scores.as_ref().map(|dense| {
            dense
                .iter()
                .enumerate()
                .filter_map(|(idx, s)| {
                    s.map(|score| {
                        let (model, query) = pairs(idx / nq, idx % nq);
                        ResponseScore {
                            model,
                            query,
                            score,
                        }
                    })
                })
                .collect()
        });
        let correctness = self.correctness.as_ref().map(|dense| {
            dense
                .iter()
                .enumerate()
                .filter_map(|(idx, c)| {
                    c.map(|correct| {
                        let (model, query) = pairs(idx / nq, idx % nq);
                        CorrectnessRecord {
                            model,
                            query,
                            correct,
                        }
                    })
                })
                .collect()
        });
        DatasetRecords {
            metadata: self.metadata.clone(),
            models: self.models.clone(),
            queries: self.queries.clone(),
            embeddings,
            response_scores,
            correctness,
        }
    }

    pub fn metadata(&self) -> &Metadata {
        &self.metadata
    }

    pub fn models(&self) -> &[ModelRecord] {
        &self.models
    }

    pub fn model(&self, i: usize) -> &ModelRecord {
        &self.models[i]
    }

    pub fn queries(&self) -> &[QueryId] {
        &self.queries
    }

    pub fn num_models(&self) -> usize {
        self.models.len()
    }

    /// `M`, the size of the full query set.
    pub fn num_queries(&self) -> usize {
        self.queries.len()
    }

    pub fn embedding_dim(&self) -> usize {
        self.dim
    }

    pub fn replicates(&self) -> usize {
        self.replicates
    }

    pub fn model_index(&self, id: &ModelId) -> Result<usize> {
        self.model_index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownId {
                kind: "model",
                id: id.to_string(),
            })
    }

    pub fn query_index(&self, id: &QueryId) -> Result<usize> {
        self.query_index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownId {
                kind: "query",
                id: id.to_string(),
            })
    }

    pub fn benchmark_score(&self, model: usize) -> f64 {
        self.models[model].benchmark_score
    }

    pub fn embedding(&self, model: usize, query: usize, replicate: usize) -> &[f32] {
        let offset =
            ((model * self.queries.len() + query) * self.replicates + replicate) * self.dim;
        &self.embeddings[offset..offset + self.dim]
    }

    pub fn has_response_scores(&self) -> bool {
        self.response_scores.is_some()
    }

    pub fn has_correctness(&self) -> bool {
        self.correctness.is_some()
    }

    pub fn response_score(&self, model: usize, query: usize) -> Option<f64> {
        self.response_scores
            .as_ref()
            .and_then(|d| d[model * self.queries.len() + query])
    }

    pub fn correctness(&self, model: usize, query: usize) -> Option<bool> {
        self.correctness
            .as_ref()
            .and_then(|d| d[model * self.queries.len() + query])
    }

    /// Binary correctness for IRT: the stored 0/1 record when present,
    /// otherwise the response score binarized at `threshold`.
    pub fn binary_outcome(&self, model: usize, query: usize, threshold: f64) -> Option<bool> {
        if self.correctness.is_some() {
            return self.correctness(model, query);
        }
        self.response_score(model, query).map(|s| s >= threshold)
    }

    /// Families in ascending id order, each with its member model indices.
    pub fn families(&self) -> Vec<(FamilyId, Vec<usize>)> {
        let mut groups: BTreeMap<&FamilyId, Vec<usize>> = BTreeMap::new();
        for (i, m) in self.models.iter().enumerate() {
            groups.entry(&m.family).or_default().push(i);
        }
        groups
            .into_iter()
            .map(|(f, members)| (f.clone(), members))
            .collect()
    }

    /// Replaces benchmark scores; used to build perturbed copies in tests and
    /// leakage checks. Scores must stay in `[0, 1]`.
    pub fn with_benchmark_scores(&self, scores: &[(ModelId, f64)]) -> Result<Self> {
        let mut out = self.clone();
        for (id, score) in scores {
            let i = self.model_index(id)?;
            check_unit_score(&format!("benchmark score of model '{id}'"), *score)?;
            out.models[i].benchmark_score = *score;
        }
        Ok(out)
    }

    /// A view over every model and query.
    pub fn view(&self) -> DatasetView<'_> {
        DatasetView {
            dataset: self,
            models: (0..self.models.len()).collect(),
            queries: (0..self.queries.len()).collect(),
        }
    }
}

/// A restriction of a dataset to a model set and a query subset.
///
/// Holds indices only; the underlying dataset is never copied. Models and
/// queries are kept in canonical dataset order.
#[derive(Debug, Clone)]
pub struct DatasetView<'a> {
    dataset: &'a BenchmarkDataset,
    models: Vec<usize>,
    queries: Vec<usize>,
}

impl<'a> DatasetView<'a> {
    pub fn dataset(&self) -> &'a BenchmarkDataset {
        self.dataset
    }

    pub fn model_indices(&self) -> &[usize] {
        &self.models
    }

    pub fn query_indices(&self) -> &[usize] {
        &self.queries
    }

    pub fn num_models(&self) -> usize {
        self.models.len()
    }

    pub fn num_queries(&self) -> usize {
        self.queries.len()
    }

    pub fn model_ids(&self) -> impl Iterator<Item = &'a ModelId> + '_ {
        self.models.iter().map(|&i| &self.dataset.models[i].id)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &'a QueryId> + '_ {
        self.queries.iter().map(|&j| &self.dataset.queries[j])
    }

    pub fn contains_model(&self, idx: usize) -> bool {
        self.models.binary_search(&idx).is_ok()
    }

    pub fn contains_query(&self, idx: usize) -> bool {
        self.queries.binary_search(&idx).is_ok()
    }

    /// Restricts this view further. Ids must exist in the dataset; the result
    /// is the intersection of this view with the requested sets.
    pub fn subset(&self, models: &[ModelId], queries: &[QueryId]) -> Result<DatasetView<'a>> {
        let mut model_set = HashSet::with_capacity(models.len());
        for id in models {
            model_set.insert(self.dataset.model_index(id)?);
        }
        let mut query_set = HashSet::with_capacity(queries.len());
        for id in queries {
            query_set.insert(self.dataset.query_index(id)?);
        }
        Ok(DatasetView {
            dataset: self.dataset,
            models: self
                .models
                .iter()
                .copied()
                .filter(|i| model_set.contains(i))
                .collect(),
            queries: self
                .queries
                .iter()
                .copied()
                .filter(|j| query_set.contains(j))
                .collect(),
        })
    }
}

/// View of `dataset` restricted to `models` × `queries`.
pub fn subset_view<'a>(
    dataset: &'a BenchmarkDataset,
    models: &[ModelId],
    queries: &[QueryId],
) -> Result<DatasetView<'a>> {
    dataset.view().subset(models, queries)
}
