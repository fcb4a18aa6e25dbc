//! k-means communities and 2-D PCA geometry.
//!
//! The k-means model is fit on the C per-client mean encodings but applied to
//! individual example encodings: a client contributes one point to fitting,
//! while each of its examples is assigned to a community on its own.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;

use crate::autoencoder::{encode_features, EncoderModel};
use crate::nn::Features;
use crate::{seed, Error, Result, Scalar};

pub const MAX_LLOYD_ITERATIONS: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansModel<T> {
    /// `[K × dim]`
    pub centroids: Array2<T>,
    pub iterations_run: usize,
    /// Sum of squared distances of the fitting points to their centroids.
    pub inertia: T,
}

/// A fitted model with the per-point labels and the inertia after each
/// assignment step.
#[derive(Debug, Clone)]
pub struct KMeansFit<T> {
    pub model: KMeansModel<T>,
    pub labels: Vec<usize>,
    pub inertia_history: Vec<T>,
}

impl<T: Scalar> KMeansModel<T> {
    pub fn from_centroids(centroids: Array2<T>) -> Result<Self> {
        if centroids.nrows() == 0 || centroids.ncols() == 0 {
            return Err(Error::Empty("k-means model without centroids".into()));
        }
        if centroids.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("centroids".into()));
        }
        Ok(KMeansModel {
            centroids,
            iterations_run: 0,
            inertia: T::zero(),
        })
    }

    pub fn k(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.ncols()
    }
}

#[inline]
fn sq_dist<T: Scalar>(a: ArrayView1<'_, T>, b: ArrayView1<'_, T>) -> T {
    a.iter().zip(b.iter()).fold(T::zero(), |acc, (&x, &y)| {
        let d = x - y;
        acc + d * d
    })
}

/// Nearest centroid and its squared distance; ties go to the lowest index.
fn nearest<T: Scalar>(centroids: &Array2<T>, point: ArrayView1<'_, T>) -> (usize, T) {
    let mut best = (0, T::infinity());
    for (j, c) in centroids.outer_iter().enumerate() {
        let d = sq_dist(c, point);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// k-means++ seeding over the fitting points themselves.
fn seed_centroids<T: Scalar>(points: &Array2<T>, k: usize, rng: &mut seed::Rng) -> Array2<T> {
    let n = points.nrows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<T> = points
        .outer_iter()
        .map(|p| sq_dist(p, points.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total = d2.iter().fold(T::zero(), |a, &b| a + b);
        let next = if total > T::zero() {
            let target = T::lit(rng.random::<f64>()) * total;
            let mut acc = T::zero();
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if d > T::zero() && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave the target just above the running sum
            pick.unwrap_or_else(|| d2.iter().rposition(|&d| d > T::zero()).expect("positive total"))
        } else {
            // every point coincides with a chosen centroid
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (i, p) in points.outer_iter().enumerate() {
            let d = sq_dist(p, points.row(next));
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    points.select(Axis(0), &chosen)
}

/// k-means++ seeding from the points, then Lloyd iterations until the
/// assignment stops changing or [`MAX_LLOYD_ITERATIONS`] is reached.
pub fn fit_kmeans<T: Scalar>(points: &Array2<T>, k: usize, seed: u64) -> Result<KMeansModel<T>> {
    fit_kmeans_detailed(points, k, seed).map(|f| f.model)
}

pub fn fit_kmeans_detailed<T: Scalar>(points: &Array2<T>, k: usize, seed: u64) -> Result<KMeansFit<T>> {
    let n = points.nrows();
    if n == 0 || points.ncols() == 0 {
        return Err(Error::Empty("k-means needs at least one point".into()));
    }
    if k == 0 || k > n {
        return Err(Error::Config(format!("k-means K = {k} must be in 1..={n}")));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("k-means input".into()));
    }
    let mut rng = seed::rng(seed);
    let mut centroids = seed_centroids(points, k, &mut rng);
    let mut labels: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    let mut iterations = 0;

    loop {
        let mut new_labels = Vec::with_capacity(n);
        let mut dists = Vec::with_capacity(n);
        for p in points.outer_iter() {
            let (j, d) = nearest(&centroids, p);
            new_labels.push(j);
            dists.push(d);
        }
        history.push(dists.iter().fold(T::zero(), |a, &b| a + b));
        let converged = new_labels == labels;
        labels = new_labels;
        if converged || iterations == MAX_LLOYD_ITERATIONS {
            break;
        }
        iterations += 1;

        // update step
        let mut sums = Array2::<T>::zeros(centroids.dim());
        let mut counts = vec![0usize; k];
        for (p, &j) in points.outer_iter().zip(&labels) {
            let mut row = sums.row_mut(j);
            row += &p;
            counts[j] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                let mean = &sums.row(j) / T::lit(counts[j] as f64);
                centroids.row_mut(j).assign(&mean);
            }
        }
        // empty clusters take the point farthest from its own centroid
        for j in 0..k {
            if counts[j] > 0 {
                continue;
            }
            let mut far = None;
            let mut far_d = -T::one();
            for (i, p) in points.outer_iter().enumerate() {
                if counts[labels[i]] < 2 {
                    continue;
                }
                let d = sq_dist(p, centroids.row(labels[i]));
                if d > far_d {
                    far_d = d;
                    far = Some(i);
                }
            }
            if let Some(i) = far {
                log::debug!("k-means: re-seeding empty cluster {j} at point {i}");
                counts[labels[i]] -= 1;
                counts[j] = 1;
                labels[i] = j;
                centroids.row_mut(j).assign(&points.row(i));
            }
        }
    }

    let inertia = *history.last().expect("at least one assignment");
    Ok(KMeansFit {
        model: KMeansModel {
            centroids,
            iterations_run: iterations,
            inertia,
        },
        labels,
        inertia_history: history,
    })
}

/// Index of the nearest centroid (Euclidean); ties resolve to the lowest index.
pub fn assign<T: Scalar>(model: &KMeansModel<T>, encoding: ArrayView1<'_, T>) -> Result<usize> {
    if encoding.len() != model.dim() {
        return Err(Error::dim("k-means assignment", model.dim(), encoding.len()));
    }
    Ok(nearest(&model.centroids, encoding).0)
}

pub fn assign_rows<T: Scalar>(model: &KMeansModel<T>, encodings: &Array2<T>) -> Result<Vec<usize>> {
    encodings.outer_iter().map(|e| assign(model, e)).collect()
}

/// Community sizes `m_1 … m_K` of one client's examples.
pub fn count_communities<T: Scalar>(
    model: &KMeansModel<T>,
    encoder: &EncoderModel<T>,
    client_features: &Features<T>,
) -> Result<Vec<usize>> {
    if client_features.nrows() == 0 {
        return Err(Error::Empty("client has no examples".into()));
    }
    let encodings = encode_features(encoder, client_features)?;
    let mut counts = vec![0usize; model.k()];
    for c in assign_rows(model, &encodings)? {
        counts[c] += 1;
    }
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pca2D<T> {
    /// `[2 × dim]`, orthonormal rows.
    pub components: Array2<T>,
    /// Descending.
    pub explained_variance: [T; 2],
    pub mean: Array1<T>,
}

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix.
/// Returns eigenvalues and eigenvectors as columns.
fn symmetric_eigen<T: Scalar>(matrix: &Array2<T>) -> (Vec<T>, Array2<T>) {
    let n = matrix.nrows();
    let mut a = matrix.clone();
    let mut v = Array2::<T>::eye(n);
    let two = T::lit(2.0);
    for _sweep in 0..100 {
        let mut off = T::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[[p, q]] * a[[p, q]];
            }
        }
        let scale = a.iter().fold(T::zero(), |m, x| m.max(x.abs()));
        if off.sqrt() <= T::epsilon() * scale.max(T::min_positive_value()) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq == T::zero() {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (two * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[[i, i]]).collect(), v)
}

/// Top-2 principal directions of the centered points (covariance divisor C − 1).
/// Each component's first non-negligible entry is made positive.
pub fn fit_pca2d<T: Scalar>(points: &Array2<T>) -> Result<Pca2D<T>> {
    let c = points.nrows();
    if c < 2 {
        return Err(Error::Config(format!("PCA needs at least 2 points, got {c}")));
    }
    if points.ncols() < 2 {
        return Err(Error::Config("PCA to 2 dimensions needs at least 2 input dimensions".into()));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("PCA input".into()));
    }
    let mean = points.mean_axis(Axis(0)).expect("nonempty");
    let centered = points - &mean;
    let cov = centered.t().dot(&centered) / T::lit((c - 1) as f64);
    let (values, vectors) = symmetric_eigen(&cov);
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    let mut components = Array2::zeros((2, points.ncols()));
    for (row, &idx) in order.iter().take(2).enumerate() {
        let mut col = vectors.column(idx).to_owned();
        let norm = col.dot(&col).sqrt();
        col.mapv_inplace(|x| x / norm);
        let tol = T::lit(1e-12);
        if let Some(first) = col.iter().find(|x| x.abs() > tol) {
            if *first < T::zero() {
                col.mapv_inplace(|x| -x);
            }
        }
        components.row_mut(row).assign(&col);
    }
    let clamp = |v: T| if v < T::zero() { T::zero() } else { v };
    Ok(Pca2D {
        components,
        explained_variance: [clamp(values[order[0]]), clamp(values[order[1]])],
        mean,
    })
}

pub fn project<T: Scalar>(pca: &Pca2D<T>, point: ArrayView1<'_, T>) -> Result<[T; 2]> {
    if point.len() != pca.mean.len() {
        return Err(Error::dim("PCA projection", pca.mean.len(), point.len()));
    }
    let centered = &point - &pca.mean;
    Ok([pca.components.row(0).dot(&centered), pca.components.row(1).dot(&centered)])
}

/// Mean 2-D distance from each projected centroid to the other K − 1.
pub fn community_distances<T: Scalar>(model: &KMeansModel<T>, pca: &Pca2D<T>) -> Result<Vec<T>> {
    let k = model.k();
    if k < 2 {
        return Err(Error::Config("community distances need K ≥ 2".into()));
    }
    let coords: Vec<[T; 2]> = model
        .centroids
        .outer_iter()
        .map(|c| project(pca, c))
        .collect::<Result<_>>()?;
    Ok(average_pairwise_distances(&coords))
}

/// For each 2-D point, the mean Euclidean distance to all other points.
pub fn average_pairwise_distances<T: Scalar>(coords: &[[T; 2]]) -> Vec<T> {
    let k = coords.len();
    (0..k)
        .map(|i| {
            let total = (0..k).filter(|&j| j != i).fold(T::zero(), |acc, j| {
                let dx = coords[i][0] - coords[j][0];
                let dy = coords[i][1] - coords[j][1];
                acc + (dx * dx + dy * dy).sqrt()
            });
            total / T::lit((k - 1) as f64)
        })
        .collect()
}
