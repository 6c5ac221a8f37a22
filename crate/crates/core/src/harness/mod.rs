//! Leave-one-family-out (LOFO) evaluation.
//!
//! Each trial draws, from its own seed `base_seed + trial`:
//!
//! 1. a held-out family (stream 0),
//! 2. the reference models from the remaining families (stream 1),
//! 3. one uniform query subset per query budget `m` (stream 2).
//!
//! The streams are independent, so two configurations that differ only in
//! `n`, `d` or `alpha` see the same held-out family and the same query
//! subsets. Held-out models are embedded together with the references;
//! every decision function is trained on the references alone.

mod report;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use log::{debug, info};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::cache::{BenchmarkDataset, FamilyId, ModelId, QueryId};
use crate::error::{Error, Result};
use crate::geometry::{build_dkps_indexed, PerspectiveSpace, DEFAULT_DIM};
use crate::irt::{self, CorrectnessMatrix, DEFAULT_BINARIZE_THRESHOLD};
use crate::pool::with_workers;
use crate::predictors::{
    clip_unit, dkps_irt_features, ensemble, ensemble_raw, fit_ols, knn_predict, population_mean,
    ClipOrder, Method, Prediction, Regressor,
};

pub use report::{
    delta_report, delta_report_between, write_sweep_csv, write_sweep_json, CellRecord,
    CollectionStats, DeltaReport, EvaluationReport, ModelDelta, QuerySetDelta, SummaryRow,
    SweepCell,
};

/// Trials per configuration unless overridden.
pub const DEFAULT_TRIALS: usize = 1024;

/// Number of reference models per trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ReferenceCount {
    /// Every model outside the held-out family.
    #[default]
    All,
    Count(usize),
}

impl fmt::Display for ReferenceCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReferenceCount::All => f.write_str("all"),
            ReferenceCount::Count(n) => write!(f, "{n}"),
        }
    }
}

impl FromStr for ReferenceCount {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(ReferenceCount::All);
        }
        match s.parse::<usize>() {
            Ok(n) if n > 0 => Ok(ReferenceCount::Count(n)),
            _ => Err(Error::invalid(format!(
                "reference count must be a positive integer or 'all', got '{s}'"
            ))),
        }
    }
}

impl Serialize for ReferenceCount {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ReferenceCount::All => s.serialize_str("all"),
            ReferenceCount::Count(n) => s.serialize_u64(*n as u64),
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CountOrWord {
    Count(u64),
    Word(String),
}

impl<'de> Deserialize<'de> for ReferenceCount {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match CountOrWord::deserialize(d)? {
            CountOrWord::Count(0) => {
                Err(serde::de::Error::custom("reference count must be positive"))
            }
            CountOrWord::Count(n) => Ok(ReferenceCount::Count(n as usize)),
            CountOrWord::Word(w) => w.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Weight of the sample score in ensembles.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum AlphaPolicy {
    /// `alpha = m / M`.
    #[default]
    MOverM,
    Fixed(f64),
}

impl AlphaPolicy {
    pub fn resolve(self, m: usize, total: usize) -> f64 {
        match self {
            AlphaPolicy::MOverM => m as f64 / total as f64,
            AlphaPolicy::Fixed(a) => a,
        }
    }
}

impl fmt::Display for AlphaPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AlphaPolicy::MOverM => f.write_str("m_over_M"),
            AlphaPolicy::Fixed(a) => write!(f, "{a}"),
        }
    }
}

impl FromStr for AlphaPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "m_over_M" || s == "m/M" {
            return Ok(AlphaPolicy::MOverM);
        }
        let a: f64 = s.parse().map_err(|_| {
            Error::invalid(format!("alpha must be 'm_over_M' or a number, got '{s}'"))
        })?;
        if !(0.0..=1.0).contains(&a) {
            return Err(Error::invalid(format!("alpha {a} outside [0,1]")));
        }
        Ok(AlphaPolicy::Fixed(a))
    }
}

impl Serialize for AlphaPolicy {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            AlphaPolicy::MOverM => s.serialize_str("m_over_M"),
            AlphaPolicy::Fixed(a) => s.serialize_f64(*a),
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum NumberOrWord {
    Number(f64),
    Word(String),
}

impl<'de> Deserialize<'de> for AlphaPolicy {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match NumberOrWord::deserialize(d)? {
            NumberOrWord::Number(a) => a.to_string().parse().map_err(serde::de::Error::custom),
            NumberOrWord::Word(w) => w.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// One LOFO experiment: every method is evaluated at every query budget in
/// `m`, on the same trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    pub n: ReferenceCount,
    pub m: Vec<usize>,
    pub dim: usize,
    pub alpha: AlphaPolicy,
    pub trials: usize,
    pub base_seed: u64,
    pub clip_order: ClipOrder,
    /// Response scores at or above this count as correct for IRT methods
    /// when the dataset has no correctness file.
    pub irt_threshold: f64,
    /// Worker threads; `None` uses every logical core. Results do not depend
    /// on this value.
    #[serde(skip)]
    pub workers: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            methods: vec![
                Method::PopulationMean,
                Method::SampleScore,
                Method::Dkps(Regressor::Ols),
                Method::Ensemble(Regressor::Ols),
            ],
            n: ReferenceCount::All,
            m: vec![1, 2, 4, 8, 16],
            dim: DEFAULT_DIM,
            alpha: AlphaPolicy::MOverM,
            trials: DEFAULT_TRIALS,
            base_seed: 0,
            clip_order: ClipOrder::default(),
            irt_threshold: DEFAULT_BINARIZE_THRESHOLD,
            workers: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self, dataset: &BenchmarkDataset) -> Result<()> {
        let total = dataset.num_queries();
        if self.methods.is_empty() {
            return Err(Error::invalid("no methods to evaluate"));
        }
        if self.m.is_empty() {
            return Err(Error::invalid("no query budgets (m) to evaluate"));
        }
        if let Some(&m) = self.m.iter().find(|&&m| m == 0 || m > total) {
            return Err(Error::invalid(format!("m = {m} outside 1..={total}")));
        }
        if self.trials == 0 {
            return Err(Error::invalid("trials must be at least 1"));
        }
        if self.dim == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        if let AlphaPolicy::Fixed(a) = self.alpha {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::invalid(format!("alpha {a} outside [0,1]")));
            }
        }
        if self.methods.iter().any(|m| m.needs_response_scores()) && !dataset.has_response_scores()
        {
            return Err(Error::invalid(
                "sample-score and ensemble methods need response_scores.csv",
            ));
        }
        if self.methods.iter().any(|m| m.needs_irt())
            && !dataset.has_correctness()
            && !dataset.has_response_scores()
        {
            return Err(Error::invalid(
                "IRT methods need correctness.csv or response_scores.csv",
            ));
        }
        if dataset.families().len() < 2 {
            return Err(Error::invalid("LOFO needs at least two model families"));
        }
        Ok(())
    }
}

/// How each trial picks its references.
#[derive(Debug, Clone, Copy)]
pub(crate) enum ReferenceSampling {
    /// A fresh uniform sample per trial.
    PerTrial,
    /// A fixed random ordering of all models; each trial takes the first
    /// `n` that are outside its held-out family.
    Collection(u64),
}

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Held-out family and references for one trial.
#[derive(Debug, Clone)]
pub(crate) struct TrialSplit {
    pub family: FamilyId,
    pub targets: Vec<usize>,
    pub references: Vec<usize>,
}

pub(crate) fn split_trial(
    dataset: &BenchmarkDataset,
    families: &[(FamilyId, Vec<usize>)],
    n: ReferenceCount,
    seed: u64,
    sampling: ReferenceSampling,
) -> Result<TrialSplit> {
    let pick = stream_rng(seed, 0).random_range(0..families.len());
    let (family, targets) = families[pick].clone();
    let pool: Vec<usize> = (0..dataset.num_models())
        .filter(|i| dataset.model(*i).family != family)
        .collect();
    let want = match n {
        ReferenceCount::All => pool.len(),
        ReferenceCount::Count(k) if k > pool.len() => {
            return Err(Error::invalid(format!(
                "n = {k} exceeds the {} references available when family '{family}' is held out",
                pool.len()
            )))
        }
        ReferenceCount::Count(k) => k,
    };
    let mut references: Vec<usize> = match sampling {
        _ if want == pool.len() => pool,
        ReferenceSampling::PerTrial => {
            let mut rng = stream_rng(seed, 1);
            index::sample(&mut rng, pool.len(), want)
                .into_iter()
                .map(|i| pool[i])
                .collect()
        }
        ReferenceSampling::Collection(collection_seed) => {
            let mut order: Vec<usize> = (0..dataset.num_models()).collect();
            order.shuffle(&mut stream_rng(collection_seed, 3));
            order
                .into_iter()
                .filter(|i| dataset.model(*i).family != family)
                .take(want)
                .collect()
        }
    };
    references.sort_unstable();
    Ok(TrialSplit {
        family,
        targets,
        references,
    })
}

/// Uniform query subset of size `m` for the trial seeded with `seed`, in
/// ascending order.
pub(crate) fn sample_queries(seed: u64, total: usize, m: usize) -> Vec<usize> {
    let mut rng = stream_rng(seed, 2);
    let mut q = index::sample(&mut rng, total, m).into_vec();
    q.sort_unstable();
    q
}

/// Item difficulties fitted on a reference set, shared between trials with
/// the same references.
#[derive(Default)]
pub(crate) struct BankCache {
    banks: Mutex<HashMap<Vec<usize>, Arc<Vec<f64>>>>,
}

impl BankCache {
    pub fn get(
        &self,
        dataset: &BenchmarkDataset,
        references: &[usize],
        threshold: f64,
    ) -> Result<Arc<Vec<f64>>> {
        if let Some(b) = self
            .banks
            .lock()
            .expect("bank cache poisoned")
            .get(references)
        {
            return Ok(Arc::clone(b));
        }
        let matrix = CorrectnessMatrix::from_dataset(dataset, references, threshold)?;
        let bank = irt::fit_difficulties(&matrix, dataset.queries().to_vec())?;
        let b = Arc::new(bank.difficulties);
        self.banks
            .lock()
            .expect("bank cache poisoned")
            .insert(references.to_vec(), Arc::clone(&b));
        Ok(b)
    }
}

/// Everything needed to predict the targets of one trial at one budget.
pub(crate) struct PredictionTask<'a> {
    pub dataset: &'a BenchmarkDataset,
    pub references: &'a [usize],
    pub targets: &'a [usize],
    pub queries: &'a [usize],
    pub dim: usize,
    pub alpha: f64,
    pub clip_order: ClipOrder,
    pub irt_threshold: f64,
    pub banks: &'a BankCache,
}

/// Lazily computed components shared between methods.
struct Components {
    space: Option<PerspectiveSpace>,
    sample: Option<Vec<f64>>,
    /// Unclipped regressor outputs per target.
    raw: HashMap<Regressor, Vec<f64>>,
    bank: Option<Arc<Vec<f64>>>,
    abilities: Option<(Vec<f64>, Vec<f64>)>,
    dkps_irt_raw: Option<Vec<f64>>,
}

impl PredictionTask<'_> {
    /// Predictions for every target, one vector per method in order.
    pub fn run(&self, methods: &[Method]) -> Result<Vec<Vec<f64>>> {
        let mut c = Components {
            space: None,
            sample: None,
            raw: HashMap::new(),
            bank: None,
            abilities: None,
            dkps_irt_raw: None,
        };
        if methods.iter().any(|m| m.needs_perspectives()) {
            let mut models = self.references.to_vec();
            models.extend_from_slice(self.targets);
            c.space = Some(build_dkps_indexed(
                self.dataset,
                &models,
                self.references.len(),
                self.queries,
                self.dim,
            )?);
        }
        methods.iter().map(|&m| self.method(m, &mut c)).collect()
    }

    fn method(&self, method: Method, c: &mut Components) -> Result<Vec<f64>> {
        let ensemble_with = |sample: &[f64], raw: &[f64]| -> Result<Vec<f64>> {
            sample
                .iter()
                .zip(raw)
                .map(|(&s, &r)| match self.clip_order {
                    ClipOrder::ComponentsThenEnsemble => {
                        ensemble(clip_unit(s), clip_unit(r), self.alpha)
                    }
                    ClipOrder::EnsembleOnly => ensemble_raw(s, r, self.alpha),
                })
                .collect()
        };
        match method {
            Method::PopulationMean => {
                let scores: Vec<f64> = self
                    .references
                    .iter()
                    .map(|&i| self.dataset.benchmark_score(i))
                    .collect();
                let v = population_mean(&scores)?;
                Ok(vec![v; self.targets.len()])
            }
            Method::SampleScore => Ok(self.sample(c)?.iter().map(|&s| clip_unit(s)).collect()),
            Method::Dkps(reg) => Ok(self
                .regressor(reg, c)?
                .iter()
                .map(|&r| clip_unit(r))
                .collect()),
            Method::Ensemble(reg) => {
                let raw = self.regressor(reg, c)?;
                let sample = self.sample(c)?;
                ensemble_with(&sample, &raw)
            }
            Method::Irt => {
                let bank = self.bank(c)?;
                let (_, targets) = self.abilities(c)?;
                Ok(targets
                    .iter()
                    .map(|&t| irt::predict_from_difficulties(t, &bank))
                    .collect())
            }
            Method::DkpsIrt => Ok(self.dkps_irt(c)?.iter().map(|&r| clip_unit(r)).collect()),
            Method::EnsDkpsIrt => {
                let raw = self.dkps_irt(c)?;
                let sample = self.sample(c)?;
                ensemble_with(&sample, &raw)
            }
        }
    }

    /// Unclipped mean response score of each target on the subset.
    fn sample(&self, c: &mut Components) -> Result<Vec<f64>> {
        if let Some(s) = &c.sample {
            return Ok(s.clone());
        }
        let mut out = Vec::with_capacity(self.targets.len());
        for &t in self.targets {
            let mut sum = 0.0;
            for &j in self.queries {
                sum += self.dataset.response_score(t, j).ok_or_else(|| {
                    Error::invalid(format!(
                        "model '{}' has no response score for query '{}'",
                        self.dataset.model(t).id,
                        self.dataset.queries()[j]
                    ))
                })?;
            }
            out.push(sum / self.queries.len() as f64);
        }
        c.sample = Some(out.clone());
        Ok(out)
    }

    fn space<'c>(&self, c: &'c Components) -> &'c PerspectiveSpace {
        c.space
            .as_ref()
            .expect("perspectives built for methods that need them")
    }

    fn reference_scores(&self) -> Vec<f64> {
        self.references
            .iter()
            .map(|&i| self.dataset.benchmark_score(i))
            .collect()
    }

    fn regressor(&self, reg: Regressor, c: &mut Components) -> Result<Vec<f64>> {
        if let Some(v) = c.raw.get(&reg) {
            return Ok(v.clone());
        }
        let space = self.space(c);
        let n = self.references.len();
        let scores = self.reference_scores();
        let out: Vec<f64> = match reg {
            Regressor::Ols => {
                let features: Vec<Vec<f64>> =
                    (0..n).map(|i| space.coordinate(i).to_vec()).collect();
                let model = fit_ols(&features, &scores)?;
                (n..space.len())
                    .map(|i| model.evaluate(space.coordinate(i)))
                    .collect::<Result<_>>()?
            }
            Regressor::Knn(k) => {
                let refs: Vec<&[f64]> = (0..n).map(|i| space.coordinate(i)).collect();
                let keys = &space.models()[..n];
                let k = k.resolve(n).min(n);
                (n..space.len())
                    .map(|i| knn_predict(&refs, &scores, keys, space.coordinate(i), k))
                    .collect::<Result<_>>()?
            }
        };
        c.raw.insert(reg, out.clone());
        Ok(out)
    }

    fn bank(&self, c: &mut Components) -> Result<Arc<Vec<f64>>> {
        if c.bank.is_none() {
            c.bank = Some(
                self.banks
                    .get(self.dataset, self.references, self.irt_threshold)?,
            );
        }
        Ok(Arc::clone(c.bank.as_ref().expect("set above")))
    }

    /// Abilities of references and targets from their answers on the subset.
    fn abilities(&self, c: &mut Components) -> Result<(Vec<f64>, Vec<f64>)> {
        if let Some(a) = &c.abilities {
            return Ok(a.clone());
        }
        let bank = self.bank(c)?;
        let ability = |model: usize| -> Result<f64> {
            let mut responses = Vec::with_capacity(self.queries.len());
            let mut b = Vec::with_capacity(self.queries.len());
            for &j in self.queries {
                if let Some(x) = self.dataset.binary_outcome(model, j, self.irt_threshold) {
                    responses.push(x);
                    b.push(bank[j]);
                }
            }
            irt::fit_ability(&responses, &b).map(|a| a.theta)
        };
        let refs = self
            .references
            .iter()
            .map(|&i| ability(i))
            .collect::<Result<Vec<_>>>()?;
        let targets = self
            .targets
            .iter()
            .map(|&i| ability(i))
            .collect::<Result<Vec<_>>>()?;
        c.abilities = Some((refs.clone(), targets.clone()));
        Ok((refs, targets))
    }

    fn dkps_irt(&self, c: &mut Components) -> Result<Vec<f64>> {
        if let Some(v) = &c.dkps_irt_raw {
            return Ok(v.clone());
        }
        let (ref_theta, target_theta) = self.abilities(c)?;
        let space = self.space(c);
        let n = self.references.len();
        let features: Vec<Vec<f64>> = (0..n)
            .map(|i| dkps_irt_features(space.coordinate(i), ref_theta[i]))
            .collect();
        let model = fit_ols(&features, &self.reference_scores())?;
        let out = target_theta
            .iter()
            .enumerate()
            .map(|(t, &theta)| model.evaluate(&dkps_irt_features(space.coordinate(n + t), theta)))
            .collect::<Result<Vec<_>>>()?;
        c.dkps_irt_raw = Some(out.clone());
        Ok(out)
    }
}

/// Settings for [`predict_targets`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictOptions {
    pub dim: usize,
    /// Ensemble weight; `None` uses `m / M`.
    pub alpha: Option<f64>,
    pub clip_order: ClipOrder,
    pub irt_threshold: f64,
}

impl Default for PredictOptions {
    fn default() -> Self {
        PredictOptions {
            dim: DEFAULT_DIM,
            alpha: None,
            clip_order: ClipOrder::default(),
            irt_threshold: DEFAULT_BINARIZE_THRESHOLD,
        }
    }
}

/// Predicts `targets` from their responses to `queries`, with decision
/// functions trained on `references`. Results are ordered by method, then
/// target.
pub fn predict_targets(
    dataset: &BenchmarkDataset,
    references: &[ModelId],
    targets: &[ModelId],
    queries: &[QueryId],
    methods: &[Method],
    options: &PredictOptions,
) -> Result<Vec<Prediction>> {
    if references.is_empty() || targets.is_empty() || queries.is_empty() {
        return Err(Error::invalid("need references, targets and queries"));
    }
    let to_index = |ids: &[ModelId]| {
        ids.iter()
            .map(|id| dataset.model_index(id))
            .collect::<Result<Vec<_>>>()
    };
    let refs = to_index(references)?;
    let tgts = to_index(targets)?;
    if let Some(t) = tgts.iter().find(|t| refs.contains(t)) {
        return Err(Error::invalid(format!(
            "model '{}' is both a reference and a target",
            dataset.model(*t).id
        )));
    }
    let mut query_idx = queries
        .iter()
        .map(|q| dataset.query_index(q))
        .collect::<Result<Vec<_>>>()?;
    query_idx.sort_unstable();
    query_idx.dedup();
    let alpha = options
        .alpha
        .unwrap_or_else(|| AlphaPolicy::MOverM.resolve(query_idx.len(), dataset.num_queries()));
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha {alpha} outside [0,1]")));
    }
    let banks = BankCache::default();
    let task = PredictionTask {
        dataset,
        references: &refs,
        targets: &tgts,
        queries: &query_idx,
        dim: options.dim,
        alpha,
        clip_order: options.clip_order,
        irt_threshold: options.irt_threshold,
        banks: &banks,
    };
    let values = task.run(methods)?;
    Ok(methods
        .iter()
        .zip(values)
        .flat_map(|(&method, v)| {
            targets.iter().zip(v).map(move |(model, value)| Prediction {
                model: model.clone(),
                method,
                value,
            })
        })
        .collect())
}

fn run_trials(
    dataset: &BenchmarkDataset,
    config: &ExperimentConfig,
    sampling: ReferenceSampling,
    banks: &BankCache,
) -> Result<EvaluationReport> {
    config.validate(dataset)?;
    let families = dataset.families();
    let total = dataset.num_queries();

    let trial = |t: usize| -> Result<Vec<CellRecord>> {
        let seed = config.base_seed.wrapping_add(t as u64);
        let split = split_trial(dataset, &families, config.n, seed, sampling)?;
        debug!(
            "trial {t}: holding out '{}' ({} models) against {} references",
            split.family,
            split.targets.len(),
            split.references.len()
        );
        let mut records = Vec::new();
        for &m in &config.m {
            let queries = sample_queries(seed, total, m);
            let task = PredictionTask {
                dataset,
                references: &split.references,
                targets: &split.targets,
                queries: &queries,
                dim: config.dim,
                alpha: config.alpha.resolve(m, total),
                clip_order: config.clip_order,
                irt_threshold: config.irt_threshold,
                banks,
            };
            let predictions = task.run(&config.methods)?;
            for (method, values) in config.methods.iter().zip(predictions) {
                for (&target, prediction) in split.targets.iter().zip(values) {
                    let record = dataset.model(target);
                    records.push(CellRecord {
                        trial: t,
                        seed,
                        m,
                        n: split.references.len(),
                        dim: config.dim,
                        alpha: task.alpha,
                        method: *method,
                        family: split.family.clone(),
                        model: record.id.clone(),
                        prediction,
                        truth: record.benchmark_score,
                        abs_error: (prediction - record.benchmark_score).abs(),
                    });
                }
            }
        }
        info!("trial {}/{} done", t + 1, config.trials);
        Ok(records)
    };

    let per_trial: Vec<Result<Vec<CellRecord>>> = with_workers(config.workers, || {
        (0..config.trials).into_par_iter().map(trial).collect()
    })?;
    let mut records = Vec::new();
    for r in per_trial {
        records.extend(r?);
    }
    Ok(EvaluationReport {
        methods: config.methods.clone(),
        m_values: config.m.clone(),
        records,
    })
}

/// Runs the LOFO protocol for every trial, method and query budget in
/// `config`.
///
/// The output is bit-identical for a given dataset and configuration,
/// whatever the worker count.
pub fn lofo_evaluate(
    dataset: &BenchmarkDataset,
    config: &ExperimentConfig,
) -> Result<EvaluationReport> {
    run_trials(
        dataset,
        config,
        ReferenceSampling::PerTrial,
        &BankCache::default(),
    )
}

/// A grid of LOFO configurations sharing methods, budgets, trials and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub base: ExperimentConfig,
    pub n: Vec<ReferenceCount>,
    pub dim: Vec<usize>,
    pub alpha: Vec<AlphaPolicy>,
}

/// Runs one LOFO evaluation per `(n, d, alpha)` cell of `grid`. All cells use
/// the same base seed, so they are paired trial by trial.
pub fn sweep(dataset: &BenchmarkDataset, grid: &SweepGrid) -> Result<Vec<SweepCell>> {
    if grid.n.is_empty() || grid.dim.is_empty() || grid.alpha.is_empty() {
        return Err(Error::invalid("sweep grid has an empty axis"));
    }
    let banks = BankCache::default();
    let mut cells = Vec::new();
    for &n in &grid.n {
        for &dim in &grid.dim {
            for &alpha in &grid.alpha {
                info!("sweep cell n={n} d={dim} alpha={alpha}");
                let config = ExperimentConfig {
                    n,
                    dim,
                    alpha,
                    ..grid.base.clone()
                };
                let report = run_trials(dataset, &config, ReferenceSampling::PerTrial, &banks)?;
                cells.push(SweepCell {
                    n,
                    dim,
                    alpha,
                    report,
                });
            }
        }
    }
    Ok(cells)
}

/// Spread of LOFO MAE over `collections` random reference collections of
/// size `n`, per method and query budget.
///
/// Collection `c` is a fixed random ordering of the models; in each trial its
/// first `n` members outside the held-out family are the references. Trials
/// and query subsets are shared between collections.
pub fn reference_collection_stats(
    dataset: &BenchmarkDataset,
    n: ReferenceCount,
    collections: usize,
    config: &ExperimentConfig,
) -> Result<Vec<CollectionStats>> {
    if collections == 0 {
        return Err(Error::invalid("collections must be at least 1"));
    }
    let config = ExperimentConfig {
        n,
        ..config.clone()
    };
    let banks = BankCache::default();
    let mut maes: HashMap<(Method, usize), Vec<f64>> = HashMap::new();
    for c in 0..collections {
        let collection_seed =
            stream_rng(config.base_seed.wrapping_add(c as u64), 3).random::<u64>();
        let report = run_trials(
            dataset,
            &config,
            ReferenceSampling::Collection(collection_seed),
            &banks,
        )?;
        for row in report.summary() {
            maes.entry((row.method, row.m)).or_default().push(row.mae);
        }
    }
    let mut out = Vec::new();
    for &method in &config.methods {
        for &m in &config.m {
            let values = maes.remove(&(method, m)).unwrap_or_default();
            out.push(CollectionStats::new(method, m, n, values)?);
        }
    }
    Ok(out)
}
