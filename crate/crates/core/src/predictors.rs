//! Benchmark-score estimators.
//!
//! Every value returned to callers is clipped to `[0, 1]`. Regressors train on
//! reference perspectives only; targets are never part of a fit.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cache::ModelId;
use crate::error::{Error, Result};
use crate::geometry::euclidean;

/// Singular values below this fraction of the largest are treated as zero.
pub const OLS_RANK_TOLERANCE: f64 = 1e-10;

pub fn clip_unit(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// Neighbourhood size for k-NN regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum KChoice {
    Fixed(usize),
    /// `k = round(sqrt(n))` for `n` references.
    SqrtN,
}

impl KChoice {
    pub fn resolve(self, n: usize) -> usize {
        match self {
            KChoice::Fixed(k) => k,
            KChoice::SqrtN => ((n as f64).sqrt().round() as usize).max(1),
        }
    }
}

/// Decision function trained on reference perspectives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Regressor {
    Ols,
    Knn(KChoice),
}

/// Prediction methods, named as in reports and on the command line.
///
/// | name                 | method                                            |
/// |----------------------|---------------------------------------------------|
/// | `population_mean`    | mean reference score                              |
/// | `sample_score`       | mean response-level score on the subset           |
/// | `dkps_ols`           | OLS on perspectives                               |
/// | `dkps_knn<k>`        | k-NN on perspectives (`dkps_knn_sqrt` for √n)     |
/// | `ensemble`           | α·sample + (1−α)·dkps_ols                          |
/// | `ensemble_knn<k>`    | α·sample + (1−α)·dkps_knn<k>                       |
/// | `irt`                | Rasch ability → mean predicted correctness        |
/// | `dkps_irt`           | OLS on `[ψ, θ]`                                    |
/// | `ens_dkps_irt`       | α·sample + (1−α)·dkps_irt                          |
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Method {
    PopulationMean,
    SampleScore,
    Dkps(Regressor),
    Ensemble(Regressor),
    Irt,
    DkpsIrt,
    EnsDkpsIrt,
}

impl Method {
    pub fn needs_response_scores(self) -> bool {
        matches!(
            self,
            Method::SampleScore | Method::Ensemble(_) | Method::EnsDkpsIrt
        )
    }

    pub fn needs_irt(self) -> bool {
        matches!(self, Method::Irt | Method::DkpsIrt | Method::EnsDkpsIrt)
    }

    pub fn needs_perspectives(self) -> bool {
        matches!(
            self,
            Method::Dkps(_) | Method::Ensemble(_) | Method::DkpsIrt | Method::EnsDkpsIrt
        )
    }

    pub fn is_ensemble(self) -> bool {
        matches!(self, Method::Ensemble(_) | Method::EnsDkpsIrt)
    }
}

fn knn_suffix(k: KChoice) -> String {
    match k {
        KChoice::Fixed(k) => k.to_string(),
        KChoice::SqrtN => "_sqrt".into(),
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::PopulationMean => f.write_str("population_mean"),
            Method::SampleScore => f.write_str("sample_score"),
            Method::Dkps(Regressor::Ols) => f.write_str("dkps_ols"),
            Method::Dkps(Regressor::Knn(k)) => write!(f, "dkps_knn{}", knn_suffix(*k)),
            Method::Ensemble(Regressor::Ols) => f.write_str("ensemble"),
            Method::Ensemble(Regressor::Knn(k)) => write!(f, "ensemble_knn{}", knn_suffix(*k)),
            Method::Irt => f.write_str("irt"),
            Method::DkpsIrt => f.write_str("dkps_irt"),
            Method::EnsDkpsIrt => f.write_str("ens_dkps_irt"),
        }
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

fn parse_knn(rest: &str) -> Option<KChoice> {
    if rest == "_sqrt" {
        return Some(KChoice::SqrtN);
    }
    rest.parse::<usize>()
        .ok()
        .filter(|&k| k > 0)
        .map(KChoice::Fixed)
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let m = match s {
            "population_mean" => Method::PopulationMean,
            "sample_score" => Method::SampleScore,
            "dkps" | "dkps_ols" => Method::Dkps(Regressor::Ols),
            "ensemble" | "ensemble_ols" => Method::Ensemble(Regressor::Ols),
            "irt" => Method::Irt,
            "dkps_irt" => Method::DkpsIrt,
            "ens_dkps_irt" => Method::EnsDkpsIrt,
            other => {
                let knn = other
                    .strip_prefix("dkps_knn")
                    .and_then(parse_knn)
                    .map(|k| Method::Dkps(Regressor::Knn(k)))
                    .or_else(|| {
                        other
                            .strip_prefix("ensemble_knn")
                            .and_then(parse_knn)
                            .map(|k| Method::Ensemble(Regressor::Knn(k)))
                    });
                return knn.ok_or_else(|| Error::invalid(format!("unknown method '{other}'")));
            }
        };
        Ok(m)
    }
}

/// Where clipping happens for ensemble methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipOrder {
    /// Clip each component, combine, clip again.
    #[default]
    ComponentsThenEnsemble,
    /// Combine raw components and clip once.
    EnsembleOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub model: ModelId,
    pub method: Method,
    pub value: f64,
}

/// Mean reference score.
pub fn population_mean(reference_scores: &[f64]) -> Result<f64> {
    if reference_scores.is_empty() {
        return Err(Error::invalid("population mean of zero references"));
    }
    Ok(clip_unit(
        reference_scores.iter().sum::<f64>() / reference_scores.len() as f64,
    ))
}

/// Mean response-level score over the query subset. `None` entries are
/// queries with no recorded score.
pub fn sample_score(response_scores: &[Option<f64>]) -> Result<f64> {
    if response_scores.is_empty() {
        return Err(Error::invalid("sample score over an empty query subset"));
    }
    let mut sum = 0.0;
    for (j, s) in response_scores.iter().enumerate() {
        sum += s.ok_or_else(|| {
            Error::invalid(format!(
                "missing response score for query {j} of the subset"
            ))
        })?;
    }
    Ok(clip_unit(sum / response_scores.len() as f64))
}

/// Affine decision function `intercept + weights · features`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub intercept: f64,
    pub weights: Vec<f64>,
}

impl LinearModel {
    /// Unclipped affine value.
    pub fn evaluate(&self, features: &[f64]) -> Result<f64> {
        if features.len() != self.weights.len() {
            return Err(Error::invalid(format!(
                "feature length {} does not match model length {}",
                features.len(),
                self.weights.len()
            )));
        }
        Ok(self.intercept
            + self
                .weights
                .iter()
                .zip(features)
                .map(|(w, x)| w * x)
                .sum::<f64>())
    }
}

/// Ordinary least squares with an unpenalised intercept.
///
/// Features and targets are centred, the slope is the minimum-norm
/// least-squares solution (SVD, singular values below
/// [`OLS_RANK_TOLERANCE`] relative dropped) and the intercept restores the
/// means. Rank-deficient designs, including `n <= k`, are therefore fine.
pub fn fit_ols(features: &[Vec<f64>], scores: &[f64]) -> Result<LinearModel> {
    let n = features.len();
    if n == 0 || scores.len() != n {
        return Err(Error::invalid(format!(
            "OLS needs matching nonempty features ({n}) and scores ({})",
            scores.len()
        )));
    }
    let k = features[0].len();
    if features.iter().any(|f| f.len() != k) {
        return Err(Error::invalid("ragged feature rows"));
    }
    if features
        .iter()
        .flatten()
        .chain(scores)
        .any(|x| !x.is_finite())
    {
        return Err(Error::invalid("non-finite OLS inputs"));
    }

    let y_mean = scores.iter().sum::<f64>() / n as f64;
    let x_mean: Vec<f64> = (0..k)
        .map(|c| features.iter().map(|f| f[c]).sum::<f64>() / n as f64)
        .collect();
    if k == 0 {
        return Ok(LinearModel {
            intercept: y_mean,
            weights: Vec::new(),
        });
    }

    let x = DMatrix::from_fn(n, k, |r, c| features[r][c] - x_mean[c]);
    let y = DVector::from_iterator(n, scores.iter().map(|s| s - y_mean));
    let svd = x.svd(true, true);
    let (u, v_t) = match (&svd.u, &svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::Numerical("SVD failed in OLS".into())),
    };
    let s_max = svd.singular_values.iter().fold(0.0f64, |a, &s| a.max(s));
    let tol = OLS_RANK_TOLERANCE * s_max;
    let uty = u.tr_mul(&y);
    let mut beta = DVector::zeros(k);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > tol && s > 0.0 {
            beta += v_t.row(i).transpose() * (uty[i] / s);
        }
    }
    let weights: Vec<f64> = beta.iter().copied().collect();
    let intercept = y_mean - weights.iter().zip(&x_mean).map(|(w, m)| w * m).sum::<f64>();
    Ok(LinearModel { intercept, weights })
}

/// Clipped prediction of a fitted linear model.
pub fn predict_linear(model: &LinearModel, features: &[f64]) -> Result<f64> {
    model.evaluate(features).map(clip_unit)
}

/// k-nearest-neighbour regression in perspective space.
///
/// With `k == 1` the prediction is the mean score of *every* reference at the
/// minimal distance. With `k > 1` the `k` nearest are averaged and ties at the
/// boundary are broken by ascending `tie_keys` (model ids).
pub fn knn_predict<K: Ord>(
    perspectives: &[&[f64]],
    scores: &[f64],
    tie_keys: &[K],
    target: &[f64],
    k: usize,
) -> Result<f64> {
    let n = perspectives.len();
    if n == 0 {
        return Err(Error::invalid("k-NN with no references"));
    }
    if scores.len() != n || tie_keys.len() != n {
        return Err(Error::invalid("k-NN inputs differ in length"));
    }
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k = {k} outside 1..={n}")));
    }
    let dist: Vec<f64> = perspectives.iter().map(|p| euclidean(p, target)).collect();
    if k == 1 {
        let nearest = dist.iter().copied().fold(f64::INFINITY, f64::min);
        let (sum, count) = dist
            .iter()
            .zip(scores)
            .filter(|(d, _)| **d == nearest)
            .fold((0.0, 0usize), |(s, c), (_, y)| (s + y, c + 1));
        return Ok(clip_unit(sum / count as f64));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        dist[a]
            .total_cmp(&dist[b])
            .then_with(|| tie_keys[a].cmp(&tie_keys[b]))
    });
    let sum: f64 = order[..k].iter().map(|&i| scores[i]).sum();
    Ok(clip_unit(sum / k as f64))
}

/// Convex combination `alpha * sample + (1 - alpha) * dkps`, clipped.
pub fn ensemble(sample: f64, dkps: f64, alpha: f64) -> Result<f64> {
    for (name, v) in [("sample", sample), ("dkps", dkps)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::invalid(format!(
                "{name} prediction {v} outside [0,1]"
            )));
        }
    }
    ensemble_raw(sample, dkps, alpha)
}

/// Like [`ensemble`] but accepts unclipped components
/// ([`ClipOrder::EnsembleOnly`]).
pub fn ensemble_raw(sample: f64, dkps: f64, alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha {alpha} outside [0,1]")));
    }
    Ok(clip_unit(alpha * sample + (1.0 - alpha) * dkps))
}

/// `[psi, theta]`: a perspective with the IRT ability appended.
pub fn dkps_irt_features(perspective: &[f64], ability: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(perspective.len() + 1);
    out.extend_from_slice(perspective);
    out.push(ability);
    out
}
