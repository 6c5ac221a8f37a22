//! Synthetic model populations with known ground truth.
//!
//! Model `i` has a latent position `z_i` drawn uniformly from `[-1, 1]^L`.
//! Query `j` owns a random affine map `z -> A_j z + c_j` into the embedding
//! space (entries of `A_j` are `N(0, s_j^2/p)` with a log-normal strength
//! `s_j`), and every replicate response adds
//! isotropic `N(0, sigma^2)` noise. Benchmark scores are linear in the latent
//! position, `y_i = clip(0.5 + gamma * w . z_i)` with a unit vector `w`, so
//! scores are Lipschitz in the noiseless perspective space with constant
//! `gamma / sigma_min(A)` where `A` stacks every `A_j`.
//!
//! Response-level scores scatter around `y_i` with a query-specific
//! direction and offset plus a deviation private to each (model, query)
//! pair. The scatter is centred per model so the mean over
//! all queries is exactly `y_i`, and it scales with `gamma`, so `gamma = 0`
//! gives constant scores. Binary correctness follows a Rasch model with
//! known difficulties and abilities matched to `y_i`.
//!
//! Families are the Voronoi cells of the first `n_families` latent positions.
//!
//! Independent random streams drive the latent positions, query maps,
//! score construction, Rasch outcomes and replicate noise, so changing
//! `noise` or `replicates` leaves everything else unchanged.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cache::{
    BenchmarkDataset, CorrectnessRecord, DatasetRecords, EmbeddedResponse, FamilyId, Metadata,
    ModelId, ModelRecord, QueryId, ResponseScore,
};
use crate::error::{Error, Result};
use crate::geometry::{build_dkps_indexed, max_row_distance, procrustes_align};
use crate::harness::{lofo_evaluate, ExperimentConfig, ReferenceCount};
use crate::predictors::{KChoice, Method, Regressor};
use crate::stats::median;

const SCORE_OFFSET: f64 = 0.5;
/// Log-scale spread of per-query map strength: some queries separate models
/// better than others.
const QUERY_SCALE_SD: f64 = 0.5;
/// Spread of per-query score directions around `w`.
const QUERY_DIRECTION_SD: f64 = 0.5;
/// Spread of per-query score offsets shared by every model.
const QUERY_OFFSET_SD: f64 = 0.4;
/// Spread of the per-(model, query) score deviation.
const RESPONSE_SD: f64 = 1.0;
/// Range the Rasch abilities are matched into.
const ABILITY_TARGET_RANGE: (f64, f64) = (0.02, 0.98);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticPopulationSpec {
    pub n_models: usize,
    pub latent_dim: usize,
    pub n_queries: usize,
    pub embedding_dim: usize,
    pub replicates: usize,
    /// Score units per latent unit along the score direction.
    pub lipschitz: f64,
    /// Per-coordinate standard deviation of replicate noise.
    pub noise: f64,
    pub n_families: usize,
    pub seed: u64,
}

impl Default for SyntheticPopulationSpec {
    fn default() -> Self {
        SyntheticPopulationSpec {
            n_models: 300,
            latent_dim: 2,
            n_queries: 200,
            embedding_dim: 16,
            replicates: 1,
            lipschitz: 0.3,
            noise: 0.05,
            n_families: 10,
            seed: 0,
        }
    }
}

impl SyntheticPopulationSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_models", self.n_models),
            ("latent_dim", self.latent_dim),
            ("n_queries", self.n_queries),
            ("embedding_dim", self.embedding_dim),
            ("replicates", self.replicates),
            ("n_families", self.n_families),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be positive")));
        }
        if self.n_families > self.n_models {
            return Err(Error::invalid("more families than models"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::invalid("noise must be finite and nonnegative"));
        }
        if !(self.lipschitz >= 0.0 && self.lipschitz.is_finite()) {
            return Err(Error::invalid("lipschitz must be finite and nonnegative"));
        }
        Ok(())
    }
}

/// Generating parameters kept alongside a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticTruth {
    pub latent: Vec<Vec<f64>>,
    pub scores: Vec<f64>,
    pub score_direction: Vec<f64>,
    pub difficulties: Vec<f64>,
    pub abilities: Vec<f64>,
    /// Lipschitz constant of score against noiseless perspective distance.
    pub gamma_eff: f64,
    /// `A^T A` for the stacked query maps, row-major `L x L`.
    pub embedding_gram: Vec<f64>,
}

impl SyntheticTruth {
    /// Noiseless Frobenius distance between the mean embeddings of `i` and
    /// `k`.
    pub fn noiseless_distance(&self, i: usize, k: usize) -> f64 {
        let l = self.latent[i].len();
        let dz: Vec<f64> = self.latent[i]
            .iter()
            .zip(&self.latent[k])
            .map(|(a, b)| a - b)
            .collect();
        let mut q = 0.0;
        for a in 0..l {
            for b in 0..l {
                q += dz[a] * self.embedding_gram[a * l + b] * dz[b];
            }
        }
        q.max(0.0).sqrt()
    }

    /// Pairs `(i, k)` whose score gap exceeds `gamma_eff` times their
    /// noiseless distance, beyond rounding.
    pub fn lipschitz_violations(&self) -> Vec<(usize, usize)> {
        let n = self.scores.len();
        let mut out = Vec::new();
        for i in 0..n {
            for k in i + 1..n {
                let gap = (self.scores[i] - self.scores[k]).abs();
                let bound = self.gamma_eff * self.noiseless_distance(i, k);
                if gap > bound * (1.0 + 1e-9) + 1e-12 {
                    out.push((i, k));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticPopulation {
    pub spec: SyntheticPopulationSpec,
    pub dataset: BenchmarkDataset,
    pub truth: SyntheticTruth,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Ability whose mean Rasch success probability over `difficulties` equals
/// `target`.
fn matched_ability(target: f64, difficulties: &[f64]) -> f64 {
    let mean_p = |t: f64| {
        difficulties.iter().map(|&b| sigmoid(t - b)).sum::<f64>() / difficulties.len() as f64
    };
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_p(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn generate_population(spec: &SyntheticPopulationSpec) -> Result<SyntheticPopulation> {
    spec.validate()?;
    let (n, l, m, p, r) = (
        spec.n_models,
        spec.latent_dim,
        spec.n_queries,
        spec.embedding_dim,
        spec.replicates,
    );

    let mut latent_rng = stream(spec.seed, 0);
    let latent: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..l)
                .map(|_| latent_rng.random_range(-1.0..=1.0))
                .collect()
        })
        .collect();

    // maps[j] is p x L row-major, offsets[j] has length p.
    let mut map_rng = stream(spec.seed, 1);
    let entry = Normal::new(0.0, 1.0 / (p as f64).sqrt()).expect("positive sd");
    let log_scale = Normal::new(0.0, QUERY_SCALE_SD).expect("positive sd");
    let mut maps = Vec::with_capacity(m);
    let mut offsets = Vec::with_capacity(m);
    for _ in 0..m {
        let scale = log_scale.sample(&mut map_rng).exp();
        maps.push(
            (0..p * l)
                .map(|_| scale * entry.sample(&mut map_rng))
                .collect::<Vec<f64>>(),
        );
        offsets.push(
            (0..p)
                .map(|_| entry.sample(&mut map_rng))
                .collect::<Vec<f64>>(),
        );
    }

    let mut score_rng = stream(spec.seed, 2);
    let mut w: Vec<f64> = (0..l)
        .map(|_| StandardNormal.sample(&mut score_rng))
        .collect();
    let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    w.iter_mut().for_each(|x| *x /= norm);
    let direction = Normal::new(0.0, QUERY_DIRECTION_SD).expect("positive sd");
    let offset = Normal::new(0.0, QUERY_OFFSET_SD).expect("positive sd");
    let query_dev: Vec<(Vec<f64>, f64)> = (0..m)
        .map(|_| {
            let dw = (0..l).map(|_| direction.sample(&mut score_rng)).collect();
            (dw, offset.sample(&mut score_rng))
        })
        .collect();

    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let gamma = spec.lipschitz;
    let scores: Vec<f64> = latent
        .iter()
        .map(|z| (SCORE_OFFSET + gamma * dot(&w, z)).clamp(0.0, 1.0))
        .collect();

    let idiosyncratic = Normal::new(0.0, RESPONSE_SD).expect("positive sd");
    let mut response = vec![0.0; n * m];
    for i in 0..n {
        let dev: Vec<f64> = query_dev
            .iter()
            .map(|(dw, c)| dot(dw, &latent[i]) + c + idiosyncratic.sample(&mut score_rng))
            .collect();
        let centre = dev.iter().sum::<f64>() / m as f64;
        let y = scores[i];
        let mut lambda = 1.0f64;
        for d in &dev {
            let e = gamma * (d - centre);
            if e > 0.0 {
                lambda = lambda.min((1.0 - y) / e);
            } else if e < 0.0 {
                lambda = lambda.min(y / -e);
            }
        }
        for (j, d) in dev.iter().enumerate() {
            response[i * m + j] = (y + lambda * gamma * (d - centre)).clamp(0.0, 1.0);
        }
    }

    let mut rasch_rng = stream(spec.seed, 3);
    let difficulties: Vec<f64> = (0..m)
        .map(|_| StandardNormal.sample(&mut rasch_rng))
        .collect();
    let abilities: Vec<f64> = scores
        .iter()
        .map(|&y| {
            matched_ability(
                y.clamp(ABILITY_TARGET_RANGE.0, ABILITY_TARGET_RANGE.1),
                &difficulties,
            )
        })
        .collect();
    let correct: Vec<bool> = (0..n * m)
        .map(|c| {
            let (i, j) = (c / m, c % m);
            rasch_rng.random_bool(sigmoid(abilities[i] - difficulties[j]))
        })
        .collect();

    let mut gram = vec![0.0; l * l];
    for a_j in &maps {
        for row in a_j.chunks_exact(l) {
            for a in 0..l {
                for b in 0..l {
                    gram[a * l + b] += row[a] * row[b];
                }
            }
        }
    }
    let sigma_min = DMatrix::from_row_slice(l, l, &gram)
        .symmetric_eigenvalues()
        .iter()
        .fold(f64::INFINITY, |acc, &v| acc.min(v))
        .max(0.0)
        .sqrt();
    let gamma_eff = if gamma == 0.0 {
        0.0
    } else if sigma_min > 0.0 {
        gamma / sigma_min
    } else {
        return Err(Error::Numerical("query maps are rank deficient".into()));
    };

    let model_ids: Vec<ModelId> = (0..n).map(|i| ModelId::from(format!("m{i:04}"))).collect();
    let query_ids: Vec<QueryId> = (0..m).map(|j| QueryId::from(format!("q{j:04}"))).collect();
    let families: Vec<FamilyId> = latent
        .iter()
        .map(|z| {
            let nearest = (0..spec.n_families)
                .min_by(|&a, &b| {
                    let da: f64 = z.iter().zip(&latent[a]).map(|(x, y)| (x - y).powi(2)).sum();
                    let db: f64 = z.iter().zip(&latent[b]).map(|(x, y)| (x - y).powi(2)).sum();
                    da.total_cmp(&db)
                })
                .expect("at least one family");
            FamilyId::from(format!("f{nearest:02}"))
        })
        .collect();

    let mut noise_rng = stream(spec.seed, 4);
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::invalid(e.to_string()))?;
    let mut embeddings = Vec::with_capacity(n * m * r);
    let mut mean = vec![0.0; p];
    for i in 0..n {
        for j in 0..m {
            for (k, row) in maps[j].chunks_exact(l).enumerate() {
                mean[k] = dot(row, &latent[i]) + offsets[j][k];
            }
            for rep in 0..r {
                let vector = mean
                    .iter()
                    .map(|&mu| {
                        let eps = if spec.noise > 0.0 {
                            noise.sample(&mut noise_rng)
                        } else {
                            0.0
                        };
                        (mu + eps) as f32
                    })
                    .collect();
                embeddings.push(EmbeddedResponse {
                    model: model_ids[i].clone(),
                    query: query_ids[j].clone(),
                    replicate: rep as u32,
                    vector,
                });
            }
        }
    }

    let records = DatasetRecords {
        metadata: Metadata {
            benchmark: "synthetic".into(),
            embedding: format!("affine-gaussian-p{p}"),
        },
        models: (0..n)
            .map(|i| ModelRecord {
                id: model_ids[i].clone(),
                family: families[i].clone(),
                benchmark_score: scores[i],
            })
            .collect(),
        queries: query_ids.clone(),
        embeddings,
        response_scores: Some(
            (0..n * m)
                .map(|c| ResponseScore {
                    model: model_ids[c / m].clone(),
                    query: query_ids[c % m].clone(),
                    score: response[c],
                })
                .collect(),
        ),
        correctness: Some(
            (0..n * m)
                .map(|c| CorrectnessRecord {
                    model: model_ids[c / m].clone(),
                    query: query_ids[c % m].clone(),
                    correct: correct[c],
                })
                .collect(),
        ),
    };
    let dataset = BenchmarkDataset::from_records(records)?;

    let truth = SyntheticTruth {
        latent,
        scores,
        score_direction: w,
        difficulties,
        abilities,
        gamma_eff,
        embedding_gram: gram,
    };
    let violations = truth.lipschitz_violations();
    if let Some(&(i, k)) = violations.first() {
        return Err(Error::Numerical(format!(
            "score gap between models {i} and {k} exceeds the recorded Lipschitz bound"
        )));
    }
    Ok(SyntheticPopulation {
        spec: spec.clone(),
        dataset,
        truth,
    })
}

/// Perspective error at one `(n, r)` grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationCell {
    pub n_models: usize,
    pub replicates: usize,
    pub noise: f64,
    /// Largest Procrustes-aligned row error, one per seed.
    pub max_errors: Vec<f64>,
    pub median_max_error: f64,
}

/// Largest row error between the noisy and noiseless perspectives of one
/// population, after orthogonal Procrustes alignment. Both use every query
/// and `d = latent_dim`.
pub fn perspective_error(spec: &SyntheticPopulationSpec) -> Result<f64> {
    let noisy = generate_population(spec)?;
    let clean = generate_population(&SyntheticPopulationSpec {
        noise: 0.0,
        replicates: 1,
        ..spec.clone()
    })?;
    let n = spec.n_models;
    let models: Vec<usize> = (0..n).collect();
    let queries: Vec<usize> = (0..spec.n_queries).collect();
    let dim = spec.latent_dim.min(n);
    let psi_hat =
        build_dkps_indexed(&noisy.dataset, &models, n, &queries, dim)?.coordinate_matrix();
    let psi = build_dkps_indexed(&clean.dataset, &models, n, &queries, dim)?.coordinate_matrix();
    let aligned = procrustes_align(&psi_hat, &psi)?;
    Ok(max_row_distance(&aligned, &psi))
}

/// Perspective error against the noiseless construction over a grid of
/// model counts and replicate counts, with `seeds` paired across cells.
pub fn concentration_experiment(
    base: &SyntheticPopulationSpec,
    n_grid: &[usize],
    r_grid: &[usize],
    seeds: &[u64],
) -> Result<Vec<ConcentrationCell>> {
    if n_grid.len() * r_grid.len() < 2 {
        return Err(Error::invalid(
            "concentration grid needs at least two points",
        ));
    }
    if seeds.is_empty() {
        return Err(Error::invalid(
            "concentration experiment needs at least one seed",
        ));
    }
    let mut cells = Vec::new();
    for &n_models in n_grid {
        for &replicates in r_grid {
            let max_errors = seeds
                .par_iter()
                .map(|&seed| {
                    perspective_error(&SyntheticPopulationSpec {
                        n_models,
                        replicates,
                        seed,
                        ..base.clone()
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            cells.push(ConcentrationCell {
                n_models,
                replicates,
                noise: base.noise,
                median_max_error: median(&max_errors)?,
                max_errors,
            });
        }
    }
    Ok(cells)
}

/// LOFO settings for [`efficiency_experiment`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EfficiencySettings {
    pub m: Vec<usize>,
    pub n: Vec<ReferenceCount>,
    pub trials: usize,
    pub base_seed: u64,
    pub dim: usize,
}

impl Default for EfficiencySettings {
    fn default() -> Self {
        EfficiencySettings {
            m: vec![1, 2, 4, 8, 16, 32, 64],
            n: vec![
                ReferenceCount::Count(10),
                ReferenceCount::Count(50),
                ReferenceCount::All,
            ],
            trials: 100,
            base_seed: 0,
            dim: crate::geometry::DEFAULT_DIM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EfficiencyRow {
    pub n: ReferenceCount,
    pub method: Method,
    pub m: usize,
    pub mae: f64,
}

/// Smallest budget at which the sample score beats `method`, per `n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Crossover {
    pub n: ReferenceCount,
    pub method: Method,
    /// `None` if the sample score never has strictly lower MAE on the grid.
    pub m: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EfficiencyReport {
    pub rows: Vec<EfficiencyRow>,
    pub crossovers: Vec<Crossover>,
}

pub const EFFICIENCY_METHODS: [Method; 3] = [
    Method::SampleScore,
    Method::Dkps(Regressor::Knn(KChoice::Fixed(1))),
    Method::Dkps(Regressor::Ols),
];

/// Sample score against 1-NN and OLS in perspective space over a grid of
/// query budgets and reference counts.
pub fn efficiency_experiment(
    spec: &SyntheticPopulationSpec,
    settings: &EfficiencySettings,
    workers: Option<usize>,
) -> Result<EfficiencyReport> {
    if settings.m.is_empty() || settings.n.is_empty() {
        return Err(Error::invalid("efficiency grid has an empty axis"));
    }
    let population = generate_population(spec)?;
    let mut rows = Vec::new();
    let mut crossovers = Vec::new();
    for &n in &settings.n {
        let config = ExperimentConfig {
            methods: EFFICIENCY_METHODS.to_vec(),
            n,
            m: settings.m.clone(),
            dim: settings.dim,
            trials: settings.trials,
            base_seed: settings.base_seed,
            workers,
            ..ExperimentConfig::default()
        };
        let report = lofo_evaluate(&population.dataset, &config)?;
        for s in report.summary() {
            rows.push(EfficiencyRow {
                n,
                method: s.method,
                m: s.m,
                mae: s.mae,
            });
        }
        for &method in &EFFICIENCY_METHODS[1..] {
            let m = settings.m.iter().copied().find(|&m| {
                match (report.mae(Method::SampleScore, m), report.mae(method, m)) {
                    (Some(sample), Some(dkps)) => sample < dkps,
                    _ => false,
                }
            });
            crossovers.push(Crossover { n, method, m });
        }
    }
    Ok(EfficiencyReport { rows, crossovers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::{save_dataset, EmbeddingFormat};
    use crate::geometry::mean_embeddings;

    fn small() -> SyntheticPopulationSpec {
        SyntheticPopulationSpec {
            n_models: 40,
            n_queries: 30,
            embedding_dim: 4,
            n_families: 4,
            ..Default::default()
        }
    }

    #[test]
    fn response_scores_average_to_benchmark_score() {
        let pop = generate_population(&small()).unwrap();
        let ds = &pop.dataset;
        for i in 0..ds.num_models() {
            let mean = (0..ds.num_queries())
                .map(|j| ds.response_score(i, j).unwrap())
                .sum::<f64>()
                / ds.num_queries() as f64;
            assert!((mean - ds.benchmark_score(i)).abs() <= 1e-12);
        }
        assert!(pop.truth.lipschitz_violations().is_empty());
    }

    #[test]
    fn noiseless_single_replicate_mean_is_the_embedding() {
        let pop = generate_population(&SyntheticPopulationSpec {
            noise: 0.0,
            ..small()
        })
        .unwrap();
        let ds = &pop.dataset;
        let id = ds.model(3).id.clone();
        let means = mean_embeddings(&ds.view(), &id).unwrap();
        for j in 0..ds.num_queries() {
            let stored: Vec<f64> = ds.embedding(3, j, 0).iter().map(|&v| v as f64).collect();
            assert_eq!(means.row(j), stored.as_slice());
        }
    }

    #[test]
    fn zero_lipschitz_gives_constant_scores() {
        let pop = generate_population(&SyntheticPopulationSpec {
            lipschitz: 0.0,
            ..small()
        })
        .unwrap();
        for i in 0..pop.dataset.num_models() {
            assert_eq!(pop.dataset.benchmark_score(i), 0.5);
            assert_eq!(pop.dataset.response_score(i, 7), Some(0.5));
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = generate_population(&small()).unwrap();
        let b = generate_population(&small()).unwrap();
        let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        save_dataset(&a.dataset, da.path(), EmbeddingFormat::Columnar).unwrap();
        save_dataset(&b.dataset, db.path(), EmbeddingFormat::Columnar).unwrap();
        for f in [
            "models.csv",
            "embeddings.bin",
            "response_scores.csv",
            "correctness.csv",
        ] {
            assert_eq!(
                std::fs::read(da.path().join(f)).unwrap(),
                std::fs::read(db.path().join(f)).unwrap(),
                "{f}"
            );
        }
    }

    #[test]
    fn noise_stream_is_separate() {
        let noisy = generate_population(&small()).unwrap();
        let clean = generate_population(&SyntheticPopulationSpec {
            noise: 0.0,
            ..small()
        })
        .unwrap();
        assert_eq!(noisy.truth, clean.truth);
        assert_ne!(
            noisy.dataset.embedding(0, 0, 0),
            clean.dataset.embedding(0, 0, 0)
        );
    }

    #[test]
    fn concentration_noiseless_is_exact() {
        let cells = concentration_experiment(
            &SyntheticPopulationSpec {
                noise: 0.0,
                ..small()
            },
            &[20, 30],
            &[1],
            &[1, 2],
        )
        .unwrap();
        for c in cells {
            assert!(c.median_max_error <= 1e-9, "{c:?}");
        }
        assert!(concentration_experiment(&small(), &[20], &[1], &[1]).is_err());
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(generate_population(&SyntheticPopulationSpec {
            n_models: 0,
            ..small()
        })
        .is_err());
        assert!(generate_population(&SyntheticPopulationSpec {
            noise: -1.0,
            ..small()
        })
        .is_err());
        assert!(generate_population(&SyntheticPopulationSpec {
            n_families: 41,
            ..small()
        })
        .is_err());
    }
}
