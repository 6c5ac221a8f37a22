//! Mean embeddings, Frobenius distance matrices and classical MDS.
//!
//! A model's perspective is its row in the classical (Torgerson) MDS
//! embedding of the distance matrix `D[i][k] = ||X_i - X_k||_F`, where `X_i`
//! stacks the replicate-averaged embedded responses of model `i` over the
//! active query subset.
//!
//! MDS coordinates are only defined up to rigid motion. Outputs here are made
//! deterministic by ordering eigenvalues descending and flipping each axis so
//! that its largest-magnitude entry is nonnegative (first such entry on ties).

use std::collections::HashSet;
use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::cache::BenchmarkDataset;
use crate::cache::{DatasetView, FamilyId, ModelId, QueryId};
use crate::error::{Error, Result};

/// Default perspective-space dimension.
pub const DEFAULT_DIM: usize = 8;

/// Eigenvalues with magnitude below this fraction of the largest one are zero.
pub const EIGEN_TOLERANCE: f64 = 1e-10;

/// Replicate-averaged embedded responses of one model, one row per query.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanEmbeddingMatrix {
    pub model: ModelId,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl MeanEmbeddingMatrix {
    pub fn new(model: ModelId, rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "{} values cannot form a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("mean embedding has non-finite entries"));
        }
        Ok(MeanEmbeddingMatrix {
            model,
            rows,
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.data[j * self.cols..(j + 1) * self.cols]
    }

    /// Row-major entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Writes the replicate means of `model` over `queries` into `out`
/// (row-major, `queries.len() x p`).
pub(crate) fn fill_mean_rows(
    ds: &BenchmarkDataset,
    model: usize,
    queries: &[usize],
    out: &mut [f64],
) {
    let p = ds.embedding_dim();
    let r = ds.replicates();
    let inv = 1.0 / r as f64;
    for (row, &q) in queries.iter().enumerate() {
        let dst = &mut out[row * p..(row + 1) * p];
        dst.fill(0.0);
        for rep in 0..r {
            for (d, &x) in dst.iter_mut().zip(ds.embedding(model, q, rep)) {
                *d += x as f64;
            }
        }
        if r > 1 {
            dst.iter_mut().for_each(|d| *d *= inv);
        }
    }
}

/// Mean embedding matrix of `model` over the queries of `view`.
pub fn mean_embeddings(view: &DatasetView<'_>, model: &ModelId) -> Result<MeanEmbeddingMatrix> {
    let ds = view.dataset();
    let idx = ds.model_index(model)?;
    if !view.contains_model(idx) {
        return Err(Error::invalid(format!(
            "model '{model}' is not part of the view"
        )));
    }
    if view.num_queries() == 0 {
        return Err(Error::invalid("empty query subset"));
    }
    let p = ds.embedding_dim();
    let mut data = vec![0.0; view.num_queries() * p];
    fill_mean_rows(ds, idx, view.query_indices(), &mut data);
    Ok(MeanEmbeddingMatrix {
        model: model.clone(),
        rows: view.num_queries(),
        cols: p,
        data,
    })
}

/// Symmetric matrix of pairwise distances with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    size: usize,
    entries: Vec<f64>,
}

impl DistanceMatrix {
    /// Builds a distance matrix from row-major `entries`, checking that it is
    /// finite, nonnegative, symmetric and zero on the diagonal.
    pub fn new(size: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != size * size {
            return Err(Error::invalid(format!(
                "{} entries cannot form a {size}x{size} distance matrix",
                entries.len()
            )));
        }
        for i in 0..size {
            if entries[i * size + i] != 0.0 {
                return Err(Error::invalid(format!("nonzero diagonal entry at {i}")));
            }
            for k in 0..size {
                let v = entries[i * size + k];
                if !v.is_finite() {
                    return Err(Error::invalid(format!("non-finite distance at ({i}, {k})")));
                }
                if v < 0.0 {
                    return Err(Error::invalid(format!("negative distance at ({i}, {k})")));
                }
                let w = entries[k * size + i];
                if (v - w).abs() > 1e-12 * v.abs().max(w.abs()).max(1.0) {
                    return Err(Error::invalid(format!(
                        "asymmetric distances at ({i}, {k})"
                    )));
                }
            }
        }
        Ok(DistanceMatrix { size, entries })
    }

    /// Euclidean distances between the rows of `points`.
    pub fn euclidean(points: &[Vec<f64>]) -> Result<Self> {
        let n = points.len();
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            for k in (i + 1)..n {
                if points[i].len() != points[k].len() {
                    return Err(Error::invalid("points have different dimensions"));
                }
                let d = euclidean(&points[i], &points[k]);
                entries[i * n + k] = d;
                entries[k * n + i] = d;
            }
        }
        DistanceMatrix::new(n, entries)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.entries[i * self.size + k]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.entries
    }
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Pairwise Frobenius distances between mean embedding matrices.
pub fn distance_matrix(means: &[MeanEmbeddingMatrix]) -> Result<DistanceMatrix> {
    if let Some(first) = means.first() {
        if let Some(bad) = means
            .iter()
            .find(|m| m.rows != first.rows || m.cols != first.cols)
        {
            return Err(Error::invalid(format!(
                "shape mismatch: '{}' is {}x{}, '{}' is {}x{}",
                first.model, first.rows, first.cols, bad.model, bad.rows, bad.cols
            )));
        }
    }
    let n = means.len();
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        for k in (i + 1)..n {
            let d = euclidean(&means[i].data, &means[k].data);
            entries[i * n + k] = d;
            entries[k * n + i] = d;
        }
    }
    Ok(DistanceMatrix { size: n, entries })
}

/// Output of classical MDS.
#[derive(Debug, Clone, PartialEq)]
pub struct MdsSolution {
    n: usize,
    dim: usize,
    /// Row-major `n x dim`.
    coordinates: Vec<f64>,
    /// Full spectrum of the double-centred matrix, descending; values within
    /// tolerance of zero are reported as zero.
    pub eigenvalues: Vec<f64>,
    /// Number of eigenvalues that were negative beyond tolerance (the input
    /// was not a Euclidean distance matrix).
    pub clamped: usize,
}

impl MdsSolution {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coordinate(&self, i: usize) -> &[f64] {
        &self.coordinates[i * self.dim..(i + 1) * self.dim]
    }

    pub fn coordinates(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.coordinate(i).to_vec()).collect()
    }
}

/// Eigenpairs of a symmetric matrix sorted by descending eigenvalue.
fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (values, vectors)
}

/// Snaps near-zero eigenvalues to zero and counts the clamped negatives.
fn snap_spectrum(values: &mut [f64]) -> usize {
    let scale = values.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let tol = EIGEN_TOLERANCE * scale;
    let mut clamped = 0;
    for v in values.iter_mut() {
        if v.abs() <= tol {
            *v = 0.0;
        } else if *v < 0.0 {
            clamped += 1;
        }
    }
    clamped
}

/// Flips the column so its largest-magnitude entry is nonnegative.
fn fix_sign(column: &mut [f64]) {
    let mut best = 0;
    for (i, v) in column.iter().enumerate() {
        if v.abs() > column[best].abs() {
            best = i;
        }
    }
    if column.get(best).is_some_and(|v| *v < 0.0) {
        column.iter_mut().for_each(|v| *v = -*v);
    }
}

/// Assembles row-major coordinates from per-axis columns.
fn finish(
    n: usize,
    dim: usize,
    mut columns: Vec<Vec<f64>>,
    eigenvalues: Vec<f64>,
    clamped: usize,
) -> MdsSolution {
    let mut coordinates = vec![0.0; n * dim];
    for (k, col) in columns.iter_mut().enumerate() {
        fix_sign(col);
        for (i, v) in col.iter().enumerate() {
            coordinates[i * dim + k] = *v;
        }
    }
    MdsSolution {
        n,
        dim,
        coordinates,
        eigenvalues,
        clamped,
    }
}

/// Classical (Torgerson) multidimensional scaling.
///
/// Double-centres the squared distances, `B = -1/2 J (D∘D) J`, and scales the
/// top `dim` eigenvectors of `B` by the square roots of their eigenvalues.
/// Negative eigenvalues are clamped to zero; axes without a positive
/// eigenvalue come out as zero columns.
pub fn classical_mds(distances: &DistanceMatrix, dim: usize) -> Result<MdsSolution> {
    let n = distances.size;
    if dim == 0 {
        return Err(Error::invalid("MDS dimension must be at least 1"));
    }
    if dim > n {
        return Err(Error::invalid(format!(
            "MDS dimension {dim} exceeds the number of points {n}"
        )));
    }
    if distances.entries.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("distance matrix has non-finite entries"));
    }

    let sq: Vec<f64> = distances.entries.iter().map(|d| d * d).collect();
    let row_means: Vec<f64> = (0..n)
        .map(|i| sq[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64)
        .collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    let b = DMatrix::from_fn(n, n, |i, k| {
        -0.5 * (sq[i * n + k] - row_means[i] - row_means[k] + grand)
    });

    let (mut values, vectors) = sorted_eigen(b);
    let clamped = snap_spectrum(&mut values);
    let columns = (0..dim)
        .map(|k| {
            let scale = values[k].max(0.0).sqrt();
            (0..n).map(|i| vectors[(i, k)] * scale).collect()
        })
        .collect();
    Ok(finish(n, dim, columns, values, clamped))
}

/// Classical MDS of the Euclidean distances between the rows of `features`
/// (`n x k`, row-major).
///
/// Equivalent to `classical_mds(distance_matrix(..))`, since the
/// double-centred squared distances equal the Gram matrix of the centred
/// rows. When `k < n` the `k x k` covariance form is decomposed instead of
/// the `n x n` Gram matrix, and coordinates are the centred rows projected on
/// its eigenvectors.
pub(crate) fn mds_from_features(
    features: &[f64],
    n: usize,
    k: usize,
    dim: usize,
) -> Result<MdsSolution> {
    if dim == 0 || dim > n {
        return Err(Error::invalid(format!(
            "MDS dimension {dim} must be in 1..={n}"
        )));
    }
    if k >= n {
        let rows: Vec<Vec<f64>> = features.chunks_exact(k).map(<[f64]>::to_vec).collect();
        return classical_mds(&DistanceMatrix::euclidean(&rows)?, dim);
    }

    let mut centred = DMatrix::from_row_slice(n, k, features);
    for c in 0..k {
        let mut col = centred.column_mut(c);
        let mean = col.sum() / n as f64;
        col.add_scalar_mut(-mean);
    }
    let cov = centred.transpose() * &centred;
    let (mut values, vectors) = sorted_eigen(cov);
    values.resize(n, 0.0);
    let clamped = snap_spectrum(&mut values);
    let columns = (0..dim)
        .map(|a| {
            if a < k && values[a] > 0.0 {
                (&centred * vectors.column(a)).iter().copied().collect()
            } else {
                vec![0.0; n]
            }
        })
        .collect();
    Ok(finish(n, dim, columns, values, clamped))
}

/// Perspective coordinates for a set of reference and target models.
#[derive(Debug, Clone, PartialEq)]
pub struct PerspectiveSpace {
    dim: usize,
    models: Vec<ModelId>,
    families: Vec<FamilyId>,
    is_target: Vec<bool>,
    coordinates: Vec<f64>,
    /// Descending spectrum of the MDS solution.
    pub eigenvalues: Vec<f64>,
    pub clamped_eigenvalues: usize,
}

impl PerspectiveSpace {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn models(&self) -> &[ModelId] {
        &self.models
    }

    pub fn is_target(&self, i: usize) -> bool {
        self.is_target[i]
    }

    pub fn coordinate(&self, i: usize) -> &[f64] {
        &self.coordinates[i * self.dim..(i + 1) * self.dim]
    }

    pub fn coordinate_of(&self, model: &ModelId) -> Option<&[f64]> {
        self.models
            .iter()
            .position(|m| m == model)
            .map(|i| self.coordinate(i))
    }

    pub fn reference_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| !self.is_target[i])
    }

    pub fn target_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| self.is_target[i])
    }

    /// Suggested dimension from the profile-likelihood elbow of the spectrum.
    /// Diagnostic only.
    pub fn scree_elbow(&self) -> usize {
        scree_elbow(&self.eigenvalues)
    }

    /// `model_id,family_id,psi_1..psi_d,is_target` rows for external plotting.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let mut header = vec!["model_id".to_string(), "family_id".to_string()];
        header.extend((1..=self.dim).map(|k| format!("psi_{k}")));
        header.push("is_target".into());
        let to_err = |e: csv::Error| Error::Parse {
            location: "perspective csv".into(),
            message: e.to_string(),
        };
        out.write_record(&header).map_err(to_err)?;
        for i in 0..self.len() {
            let mut row = vec![self.models[i].to_string(), self.families[i].to_string()];
            row.extend(self.coordinate(i).iter().map(|v| v.to_string()));
            row.push(self.is_target[i].to_string());
            out.write_record(&row).map_err(to_err)?;
        }
        out.flush().map_err(|e| Error::io("perspective csv", e))
    }
}

/// Builds the perspective space of `references` followed by `targets`
/// using their responses to `queries`.
///
/// Targets take part in the embedding but are tagged so that downstream
/// regressors train on references only.
pub fn build_dkps(
    view: &DatasetView<'_>,
    references: &[ModelId],
    targets: &[ModelId],
    queries: &[QueryId],
    dim: usize,
) -> Result<PerspectiveSpace> {
    let ds = view.dataset();
    let mut models = Vec::with_capacity(references.len() + targets.len());
    let mut seen = HashSet::new();
    for id in references.iter().chain(targets) {
        let idx = ds.model_index(id)?;
        if !view.contains_model(idx) {
            return Err(Error::invalid(format!(
                "model '{id}' is not part of the view"
            )));
        }
        if !seen.insert(idx) {
            return Err(Error::invalid(format!("model '{id}' listed twice")));
        }
        models.push(idx);
    }
    let mut query_idx = Vec::with_capacity(queries.len());
    for q in queries {
        let j = ds.query_index(q)?;
        if !view.contains_query(j) {
            return Err(Error::invalid(format!(
                "query '{q}' is not part of the view"
            )));
        }
        query_idx.push(j);
    }
    query_idx.sort_unstable();
    query_idx.dedup();
    build_dkps_indexed(ds, &models, references.len(), &query_idx, dim)
}

/// Index-based core of [`build_dkps`]: the first `n_refs` entries of
/// `models` are references, the rest targets.
pub(crate) fn build_dkps_indexed(
    ds: &BenchmarkDataset,
    models: &[usize],
    n_refs: usize,
    queries: &[usize],
    dim: usize,
) -> Result<PerspectiveSpace> {
    if queries.is_empty() {
        return Err(Error::invalid("empty query subset"));
    }
    if models.is_empty() {
        return Err(Error::invalid("no models to embed"));
    }
    let n = models.len();
    if dim > n {
        return Err(Error::invalid(format!(
            "dimension {dim} exceeds the {n} embedded models"
        )));
    }
    let width = queries.len() * ds.embedding_dim();
    let mut features = vec![0.0; n * width];
    for (row, &m) in features.chunks_exact_mut(width).zip(models) {
        fill_mean_rows(ds, m, queries, row);
    }
    let mds = mds_from_features(&features, n, width, dim)?;
    Ok(PerspectiveSpace {
        dim,
        models: models.iter().map(|&m| ds.model(m).id.clone()).collect(),
        families: models.iter().map(|&m| ds.model(m).family.clone()).collect(),
        is_target: (0..n).map(|i| i >= n_refs).collect(),
        coordinates: mds.coordinates,
        eigenvalues: mds.eigenvalues,
        clamped_eigenvalues: mds.clamped,
    })
}

/// Profile-likelihood elbow of a descending spectrum: the split point `q`
/// maximising the likelihood of two Gaussian groups with a pooled variance.
pub fn scree_elbow(eigenvalues: &[f64]) -> usize {
    let values: Vec<f64> = eigenvalues.iter().copied().filter(|v| *v > 0.0).collect();
    let p = values.len();
    if p < 3 {
        return p.max(1);
    }
    let mut best = (1, f64::NEG_INFINITY);
    for q in 1..p {
        let (a, b) = values.split_at(q);
        let mean_a = a.iter().sum::<f64>() / a.len() as f64;
        let mean_b = b.iter().sum::<f64>() / b.len() as f64;
        let ss = a.iter().map(|v| (v - mean_a).powi(2)).sum::<f64>()
            + b.iter().map(|v| (v - mean_b).powi(2)).sum::<f64>();
        let var = (ss / (p - 2) as f64).max(f64::MIN_POSITIVE);
        let ll = -0.5 * p as f64 * (2.0 * std::f64::consts::PI * var).ln() - ss / (2.0 * var);
        if ll > best.1 {
            best = (q, ll);
        }
    }
    best.0
}

/// Rotates (or reflects) the rows of `source` onto `target` with the
/// orthogonal matrix minimising the Frobenius residual. Both are `n x d`.
pub fn procrustes_align(source: &DMatrix<f64>, target: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if source.shape() != target.shape() {
        return Err(Error::invalid("procrustes inputs differ in shape"));
    }
    let cross = source.tr_mul(target);
    let svd = cross.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => {
            return Err(Error::Numerical(
                "SVD failed in procrustes alignment".into(),
            ))
        }
    };
    Ok(source * (u * v_t))
}

/// Largest Euclidean distance between corresponding rows.
pub fn max_row_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).row_iter().map(|r| r.norm()).fold(0.0, f64::max)
}

impl PerspectiveSpace {
    /// Coordinates as an `n x d` matrix.
    pub fn coordinate_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.len(), self.dim, &self.coordinates)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::tests::toy_records;
    use crate::cache::{BenchmarkDataset, EmbeddedResponse};

    fn max_relative_error(coords: &[Vec<f64>], d: &DistanceMatrix) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..coords.len() {
            for k in (i + 1)..coords.len() {
                let got = euclidean(&coords[i], &coords[k]);
                let want = d.get(i, k);
                worst = worst.max((got - want).abs() / want.max(f64::MIN_POSITIVE));
            }
        }
        worst
    }

    #[test]
    fn mean_over_replicates() {
        let mut rec = toy_records(1, 1, 2, 2);
        rec.embeddings[0].vector = vec![0.0, 0.0];
        rec.embeddings[1].vector = vec![2.0, 4.0];
        let ds = BenchmarkDataset::from_records(rec).unwrap();
        let m = mean_embeddings(&ds.view(), &"m0".into()).unwrap();
        assert_eq!(m.row(0), &[1.0, 2.0]);
    }

    #[test]
    fn single_replicate_rows_equal_embeddings() {
        let ds = BenchmarkDataset::from_records(toy_records(2, 3, 1, 4)).unwrap();
        let m = mean_embeddings(&ds.view(), &"m1".into()).unwrap();
        for j in 0..3 {
            let want: Vec<f64> = ds.embedding(1, j, 0).iter().map(|&x| x as f64).collect();
            assert_eq!(m.row(j), want.as_slice());
        }
    }

    #[test]
    fn empty_query_subset_rejected() {
        let ds = BenchmarkDataset::from_records(toy_records(2, 3, 1, 4)).unwrap();
        let view = ds.view().subset(&["m0".into()], &[]).unwrap();
        let err = mean_embeddings(&view, &"m0".into()).unwrap_err();
        assert!(err.to_string().contains("empty query subset"));
    }

    #[test]
    fn frobenius_distances() {
        let zeros = MeanEmbeddingMatrix::new("a".into(), 2, 2, vec![0.0; 4]).unwrap();
        let ones = MeanEmbeddingMatrix::new("b".into(), 2, 2, vec![1.0; 4]).unwrap();
        let d = distance_matrix(&[zeros.clone(), ones.clone()]).unwrap();
        assert_eq!(d.get(0, 1), 2.0);
        assert_eq!(d.get(1, 0), 2.0);
        let same = distance_matrix(&[zeros.clone(), zeros.clone()]).unwrap();
        assert!(same.as_slice().iter().all(|&x| x == 0.0));

        let wide = MeanEmbeddingMatrix::new("c".into(), 1, 4, vec![0.0; 4]).unwrap();
        assert!(distance_matrix(&[zeros, wide]).is_err());
    }

    #[test]
    fn mds_of_zero_distances_is_zero() {
        let d = DistanceMatrix::new(3, vec![0.0; 9]).unwrap();
        for dim in 1..=3 {
            let mds = classical_mds(&d, dim).unwrap();
            assert!(mds.coordinates.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn mds_of_two_points() {
        let delta = 3.5;
        let d = DistanceMatrix::new(2, vec![0.0, delta, delta, 0.0]).unwrap();
        let mds = classical_mds(&d, 1).unwrap();
        let mut c = [mds.coordinate(0)[0], mds.coordinate(1)[0]];
        c.sort_by(f64::total_cmp);
        assert!((c[0] + delta / 2.0).abs() < 1e-12);
        assert!((c[1] - delta / 2.0).abs() < 1e-12);
    }

    #[test]
    fn mds_recovers_unit_square() {
        let square = vec![
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![1.0, 1.0],
            vec![0.0, 1.0],
        ];
        let d = DistanceMatrix::euclidean(&square).unwrap();
        let mds = classical_mds(&d, 2).unwrap();
        assert!(max_relative_error(&mds.coordinates(), &d) < 1e-9);
        // Centred output.
        for k in 0..2 {
            let mean: f64 = (0..4).map(|i| mds.coordinate(i)[k]).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-9);
        }
    }

    #[test]
    fn mds_pads_missing_axes_with_zeros() {
        let line = vec![vec![0.0], vec![1.0], vec![3.0]];
        let d = DistanceMatrix::euclidean(&line).unwrap();
        let mds = classical_mds(&d, 3).unwrap();
        for i in 0..3 {
            assert_eq!(&mds.coordinate(i)[1..], &[0.0, 0.0]);
        }
        assert_eq!(mds.clamped, 0);
    }

    #[test]
    fn non_euclidean_input_reports_clamping() {
        // Violates the triangle inequality.
        let d = DistanceMatrix::new(3, vec![0.0, 1.0, 5.0, 1.0, 0.0, 1.0, 5.0, 1.0, 0.0]).unwrap();
        let mds = classical_mds(&d, 3).unwrap();
        assert!(mds.clamped >= 1);
        assert!(mds.coordinates.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn mds_errors() {
        let d = DistanceMatrix::new(2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert!(classical_mds(&d, 3).is_err());
        assert!(classical_mds(&d, 0).is_err());
        assert!(DistanceMatrix::new(2, vec![0.0, f64::NAN, f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn sign_convention_is_deterministic() {
        let pts = vec![
            vec![0.0, 2.0],
            vec![-3.0, 0.5],
            vec![1.0, -1.0],
            vec![2.5, 0.0],
        ];
        let d = DistanceMatrix::euclidean(&pts).unwrap();
        let a = classical_mds(&d, 2).unwrap();
        let b = classical_mds(&d, 2).unwrap();
        assert_eq!(a, b);
        for k in 0..2 {
            let col: Vec<f64> = (0..4).map(|i| a.coordinate(i)[k]).collect();
            let arg =
                col.iter().enumerate().fold(
                    0,
                    |best, (i, v)| if v.abs() > col[best].abs() { i } else { best },
                );
            assert!(col[arg] >= 0.0);
        }
    }

    #[test]
    fn covariance_route_matches_distance_route() {
        let n = 12;
        let k = 5;
        let features: Vec<f64> = (0..n * k)
            .map(|i| ((i * 37 % 101) as f64 * 0.173).sin())
            .collect();
        let rows: Vec<Vec<f64>> = features.chunks(k).map(<[f64]>::to_vec).collect();
        let d = DistanceMatrix::euclidean(&rows).unwrap();
        let direct = classical_mds(&d, 4).unwrap();
        let fast = mds_from_features(&features, n, k, 4).unwrap();
        for i in 0..n {
            for a in 0..4 {
                assert!((direct.coordinate(i)[a] - fast.coordinate(i)[a]).abs() < 1e-9);
            }
        }
        for a in 0..k {
            assert!((direct.eigenvalues[a] - fast.eigenvalues[a]).abs() < 1e-9);
        }
    }

    fn line_dataset() -> BenchmarkDataset {
        let mut rec = toy_records(3, 2, 1, 2);
        for (idx, e) in rec.embeddings.iter_mut().enumerate() {
            let model = idx / 2;
            *e = EmbeddedResponse {
                vector: vec![model as f32, 0.0],
                ..e.clone()
            };
        }
        BenchmarkDataset::from_records(rec).unwrap()
    }

    #[test]
    fn dkps_pair_is_symmetric_about_origin() {
        let ds = line_dataset();
        let space =
            build_dkps(&ds.view(), &["m0".into()], &["m2".into()], ds.queries(), 1).unwrap();
        // Each model sits at (i, 0) for both queries, so D = 2 * sqrt(2).
        let d12 = 2.0 * 2f64.sqrt();
        let a = space.coordinate(0)[0];
        let b = space.coordinate(1)[0];
        assert!((a.abs() - d12 / 2.0).abs() < 1e-12);
        assert!((a + b).abs() < 1e-12);
        assert!(!space.is_target(0));
        assert!(space.is_target(1));
    }

    #[test]
    fn dkps_without_targets() {
        let ds = line_dataset();
        let refs: Vec<ModelId> = vec!["m0".into(), "m1".into(), "m2".into()];
        let space = build_dkps(&ds.view(), &refs, &[], ds.queries(), 2).unwrap();
        assert_eq!(space.len(), 3);
        assert_eq!(space.target_indices().count(), 0);
        assert!(build_dkps(&ds.view(), &refs, &["m0".into()], ds.queries(), 1).is_err());
    }

    #[test]
    fn perspective_csv_layout() {
        let ds = line_dataset();
        let space = build_dkps(
            &ds.view(),
            &["m0".into(), "m1".into()],
            &["m2".into()],
            ds.queries(),
            2,
        )
        .unwrap();
        let mut buf = Vec::new();
        space.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next(),
            Some("model_id,family_id,psi_1,psi_2,is_target")
        );
        assert!(lines.last().unwrap().ends_with(",true"));
    }

    #[test]
    fn elbow_of_two_level_spectrum() {
        let spectrum = [10.0, 9.5, 9.0, 0.3, 0.2, 0.2, 0.1];
        assert_eq!(scree_elbow(&spectrum), 3);
    }

    #[test]
    fn procrustes_undoes_rotation() {
        let pts = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 2.0, -1.0, 0.5, 0.0, -2.5]);
        let (s, c) = (0.3f64.sin(), 0.3f64.cos());
        let rot = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let reflected = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let moved = &pts * rot * reflected;
        let aligned = procrustes_align(&moved, &pts).unwrap();
        assert!(max_row_distance(&aligned, &pts) < 1e-12);
    }
}
