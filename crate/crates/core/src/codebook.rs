//! k-means visual vocabulary used to partition local-feature space.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::binio::{read_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::DescriptorSet;
use crate::scalar::{all_finite, squared_distance, Scalar};

pub const CODEBOOK_MAGIC: &[u8; 8] = b"RSIRCDBK";

/// Visual words per codebook in the reference configuration.
pub const DEFAULT_K: usize = 16;
/// Most attentive features per image used to train the codebook.
pub const DEFAULT_TRAINING_PER_IMAGE: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainingMeta {
    pub seed: u64,
    /// Lloyd update passes actually run.
    pub iterations: u32,
    pub inertia: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Codebook<T> {
    centroids: Matrix<T>,
    pub meta: TrainingMeta,
}

impl<T: Scalar> Codebook<T> {
    /// Wraps a `k × d` centroid matrix.
    pub fn new(centroids: Matrix<T>, meta: TrainingMeta) -> Result<Self> {
        if centroids.rows() == 0 || centroids.cols() == 0 {
            return Err(Error::Data("codebook needs k ≥ 1 and d ≥ 1".into()));
        }
        if !centroids.is_finite() {
            return Err(Error::Data("non-finite centroid entry".into()));
        }
        Ok(Codebook { centroids, meta })
    }

    pub fn k(&self) -> usize {
        self.centroids.rows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.cols()
    }

    pub fn centroid(&self, word: usize) -> &[T] {
        self.centroids.row(word)
    }

    pub fn centroids(&self) -> &Matrix<T> {
        &self.centroids
    }

    /// Nearest visual word and its squared distance. Ties go to the lowest
    /// index. The caller guarantees `feature.len() == self.dim()`.
    #[inline]
    pub(crate) fn nearest(&self, feature: &[T]) -> (usize, f64) {
        nearest_row(&self.centroids, feature)
    }

    /// Index of the closest visual word.
    pub fn assign(&self, feature: &[T]) -> Result<usize> {
        if feature.len() != self.dim() {
            return Err(Error::dim(self.dim(), feature.len()));
        }
        Ok(self.nearest(feature).0)
    }

    /// Sum of squared distances from each row of `features` to its word.
    pub fn inertia(&self, features: &Matrix<T>) -> Result<f64> {
        if features.cols() != self.dim() {
            return Err(Error::dim(self.dim(), features.cols()));
        }
        Ok(features.row_iter().map(|f| self.nearest(f).1).sum())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::new(CODEBOOK_MAGIC);
        w.len_u32(self.k())?;
        w.len_u32(self.dim())?;
        w.scalars(self.centroids.as_slice());
        w.u64(self.meta.seed);
        w.u32(self.meta.iterations);
        w.f64(self.meta.inertia);
        Ok(w.into_bytes())
    }

    pub fn from_bytes(bytes: &[u8], source: &str) -> Result<Self> {
        let mut r = Reader::open(bytes, CODEBOOK_MAGIC, source)?;
        let at = r.pos();
        let k = r.u32()? as usize;
        let d = r.u32()? as usize;
        if k == 0 || d == 0 {
            return Err(r.error_at(at, format!("invalid shape k={k}, d={d}")));
        }
        let data = r.scalars(k * d)?;
        let meta = TrainingMeta {
            seed: r.u64()?,
            iterations: r.u32()?,
            inertia: r.f64()?,
        };
        r.finish()?;
        Codebook::new(Matrix::from_vec(k, d, data)?, meta)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?, &path.display().to_string())
    }
}

#[inline]
fn nearest_row<T: Scalar>(rows: &Matrix<T>, feature: &[T]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in rows.row_iter().enumerate() {
        let d = squared_distance(feature, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Takes the `n_per_image` most attentive descriptors of every set and
/// stacks them (manifest order, then attention order) into one matrix.
pub fn select_codebook_training_features<T: Scalar>(
    sets: &[DescriptorSet<T>],
    n_per_image: usize,
) -> Result<Matrix<T>> {
    let dim = match sets.first() {
        Some(s) => s.dim,
        None => return Err(Error::EmptyCollection("dataset has no images".into())),
    };
    let mut data = Vec::new();
    let mut rows = 0;
    for set in sets {
        if set.dim != dim {
            return Err(Error::dim(dim, set.dim));
        }
        for desc in set.descriptors.iter().take(n_per_image) {
            data.extend_from_slice(&desc.vector);
            rows += 1;
        }
    }
    if rows == 0 {
        return Err(Error::EmptyCollection("no descriptors selected".into()));
    }
    Matrix::from_vec(rows, dim, data)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Stop once a Lloyd pass improves inertia by less than this fraction.
    pub tol: f64,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansConfig {
            k,
            seed,
            max_iters: 100,
            tol: 1e-4,
        }
    }
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self::new(DEFAULT_K, 0)
    }
}

/// Trains a codebook with k-means++ seeding and Lloyd iterations.
pub fn train_codebook<T: Scalar>(
    features: &Matrix<T>,
    config: &KMeansConfig,
) -> Result<Codebook<T>> {
    train_codebook_traced(features, config).map(|(cb, _)| cb)
}

/// Like [`train_codebook`], also returning the inertia after seeding and
/// after every Lloyd pass.
pub fn train_codebook_traced<T: Scalar>(
    features: &Matrix<T>,
    config: &KMeansConfig,
) -> Result<(Codebook<T>, Vec<f64>)> {
    let n = features.rows();
    let d = features.cols();
    let k = config.k;
    if k == 0 {
        return Err(Error::Data("k must be at least 1".into()));
    }
    if config.max_iters == 0 || config.tol.is_nan() || config.tol <= 0.0 {
        return Err(Error::Data("max_iters and tol must be positive".into()));
    }
    if n < k {
        return Err(Error::InsufficientData { needed: k, got: n });
    }
    if d == 0 {
        return Err(Error::Data("zero-dimensional features".into()));
    }
    if !all_finite(features.as_slice()) {
        return Err(Error::Data("non-finite feature entry".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut centroids = seed_plus_plus(features, k, &mut rng);
    let mut assignment = vec![0usize; n];
    let mut dist = vec![0.0f64; n];

    assign_all(features, &centroids, &mut assignment, &mut dist);
    fill_empty_clusters(features, &mut centroids, &mut assignment, &mut dist);
    let mut inertia: f64 = dist.iter().sum();
    let mut history = vec![inertia];
    let mut iterations = 0u32;

    for _ in 0..config.max_iters {
        update_means(features, &assignment, &mut centroids);
        let before = assignment.clone();
        assign_all(features, &centroids, &mut assignment, &mut dist);
        fill_empty_clusters(features, &mut centroids, &mut assignment, &mut dist);
        let next: f64 = dist.iter().sum();
        iterations += 1;
        history.push(next);
        let rel = if inertia > 0.0 {
            (inertia - next) / inertia
        } else {
            0.0
        };
        inertia = next;
        log::debug!("k-means pass {iterations}: inertia {inertia:.6e}");
        if before == assignment || rel < config.tol {
            break;
        }
    }

    let meta = TrainingMeta {
        seed: config.seed,
        iterations,
        inertia,
    };
    Ok((Codebook::new(centroids, meta)?, history))
}

/// Distance-weighted (k-means++) seeding.
fn seed_plus_plus<T: Scalar>(features: &Matrix<T>, k: usize, rng: &mut ChaCha8Rng) -> Matrix<T> {
    let n = features.rows();
    let mut centroids = Matrix::zeros(k, features.cols());
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from_slice(features.row(first));
    let mut best: Vec<f64> = features
        .row_iter()
        .map(|f| squared_distance(f, centroids.row(0)))
        .collect();
    for c in 1..k {
        let total: f64 = best.iter().sum();
        let pick = if total > 0.0 {
            let threshold = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &w) in best.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc >= threshold {
                    chosen = Some(i);
                    break;
                }
            }
            // rounding can leave the threshold just past the last weight
            chosen.unwrap_or_else(|| best.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).copy_from_slice(features.row(pick));
        for (i, f) in features.row_iter().enumerate() {
            let d = squared_distance(f, centroids.row(c));
            if d < best[i] {
                best[i] = d;
            }
        }
    }
    centroids
}

fn assign_all<T: Scalar>(
    features: &Matrix<T>,
    centroids: &Matrix<T>,
    assignment: &mut [usize],
    dist: &mut [f64],
) {
    let d = features.cols();
    assignment
        .par_iter_mut()
        .zip(dist.par_iter_mut())
        .zip(features.as_slice().par_chunks_exact(d))
        .for_each(|((a, dd), f)| {
            let (idx, best) = nearest_row(centroids, f);
            *a = idx;
            *dd = best;
        });
}

/// Moves each empty centroid onto the point farthest from its current
/// centroid, taken from a cluster that keeps at least one other member.
fn fill_empty_clusters<T: Scalar>(
    features: &Matrix<T>,
    centroids: &mut Matrix<T>,
    assignment: &mut [usize],
    dist: &mut [f64],
) {
    let k = centroids.rows();
    let mut counts = vec![0usize; k];
    for &a in assignment.iter() {
        counts[a] += 1;
    }
    for word in 0..k {
        if counts[word] > 0 {
            continue;
        }
        let mut victim: Option<usize> = None;
        for i in 0..assignment.len() {
            if counts[assignment[i]] < 2 {
                continue;
            }
            if victim.is_none_or(|v| dist[i] > dist[v]) {
                victim = Some(i);
            }
        }
        let Some(i) = victim else { break };
        counts[assignment[i]] -= 1;
        counts[word] += 1;
        centroids.row_mut(word).copy_from_slice(features.row(i));
        assignment[i] = word;
        dist[i] = 0.0;
    }
}

fn update_means<T: Scalar>(features: &Matrix<T>, assignment: &[usize], centroids: &mut Matrix<T>) {
    let (k, d) = (centroids.rows(), centroids.cols());
    let mut sums = vec![0.0f64; k * d];
    let mut counts = vec![0usize; k];
    for (f, &a) in features.row_iter().zip(assignment) {
        counts[a] += 1;
        for (s, &x) in sums[a * d..(a + 1) * d].iter_mut().zip(f) {
            *s += x.as_f64();
        }
    }
    for word in 0..k {
        if counts[word] == 0 {
            continue;
        }
        let inv = counts[word] as f64;
        for (c, &s) in centroids
            .row_mut(word)
            .iter_mut()
            .zip(&sums[word * d..(word + 1) * d])
        {
            *c = T::of(s / inv);
        }
    }
}
