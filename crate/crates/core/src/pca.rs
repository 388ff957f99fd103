//! Principal component analysis at the local-feature level (before
//! codebook training and aggregation) or at the global-descriptor level
//! (after aggregation).
//!
//! Components are the leading eigenvectors of the sample covariance
//! (`1/(n-1)` normalization), without whitening. Each component's sign is
//! fixed so that its largest-magnitude entry is positive.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::{read_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigen, Matrix};
use crate::model::{DescriptorSet, LocalDescriptor};
use crate::scalar::{dot, Scalar};
use crate::vlad::GlobalDescriptor;

pub const PCA_MAGIC: &[u8; 8] = b"RSIRPCA0";

/// Where the projection is applied in the pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PcaLevel {
    /// Project local features; the codebook must be trained in the
    /// reduced space.
    Feature,
    /// Project finished VLAD vectors, then re-normalize them.
    Global,
}

impl fmt::Display for PcaLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PcaLevel::Feature => "feature",
            PcaLevel::Global => "global",
        })
    }
}

impl FromStr for PcaLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "feature" => Ok(PcaLevel::Feature),
            "global" => Ok(PcaLevel::Global),
            other => Err(Error::Data(format!("unknown PCA level `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel<T> {
    mean: Vec<T>,
    /// `d_out × d_in`, orthonormal rows.
    components: Matrix<T>,
    explained_variance: Vec<T>,
}

impl<T: Scalar> PcaModel<T> {
    pub fn new(mean: Vec<T>, components: Matrix<T>, explained_variance: Vec<T>) -> Result<Self> {
        if components.cols() != mean.len() {
            return Err(Error::dim(mean.len(), components.cols()));
        }
        if explained_variance.len() != components.rows() {
            return Err(Error::dim(components.rows(), explained_variance.len()));
        }
        if components.rows() == 0 || components.rows() > components.cols() {
            return Err(Error::Data(format!(
                "invalid PCA shape {} → {}",
                components.cols(),
                components.rows()
            )));
        }
        Ok(PcaModel {
            mean,
            components,
            explained_variance,
        })
    }

    pub fn d_in(&self) -> usize {
        self.mean.len()
    }

    pub fn d_out(&self) -> usize {
        self.components.rows()
    }

    pub fn mean(&self) -> &[T] {
        &self.mean
    }

    pub fn components(&self) -> &Matrix<T> {
        &self.components
    }

    pub fn explained_variance(&self) -> &[T] {
        &self.explained_variance
    }

    /// `components · (v − mean)`.
    pub fn project(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.d_in() {
            return Err(Error::dim(self.d_in(), v.len()));
        }
        Ok(self
            .components
            .row_iter()
            .map(|c| {
                let mut acc = 0.0f64;
                for ((&x, &m), &w) in v.iter().zip(&self.mean).zip(c) {
                    acc += (x - m).as_f64() * w.as_f64();
                }
                T::of(acc)
            })
            .collect())
    }

    /// Maps a projected vector back into the input space.
    pub fn reconstruct(&self, y: &[T]) -> Result<Vec<T>> {
        if y.len() != self.d_out() {
            return Err(Error::dim(self.d_out(), y.len()));
        }
        let mut out: Vec<f64> = self.mean.iter().map(|m| m.as_f64()).collect();
        for (c, &w) in self.components.row_iter().zip(y) {
            let w = w.as_f64();
            for (o, &x) in out.iter_mut().zip(c) {
                *o += w * x.as_f64();
            }
        }
        Ok(out.into_iter().map(T::of).collect())
    }

    /// Projects every descriptor of a set; attention, scale and location
    /// carry over unchanged and vectors are not re-normalized.
    pub fn project_set(&self, set: &DescriptorSet<T>) -> Result<DescriptorSet<T>> {
        if set.dim != self.d_in() {
            return Err(Error::dim(self.d_in(), set.dim));
        }
        let descriptors = set
            .descriptors
            .iter()
            .map(|d| {
                Ok(LocalDescriptor::new(
                    self.project(&d.vector)?,
                    d.x,
                    d.y,
                    d.scale,
                    d.attention,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DescriptorSet {
            image_id: set.image_id.clone(),
            class_label: set.class_label.clone(),
            dim: self.d_out(),
            descriptors,
        })
    }

    /// Projects a global descriptor and re-normalizes it.
    pub fn project_global(&self, g: &GlobalDescriptor<T>) -> Result<GlobalDescriptor<T>> {
        let values = self.project(&g.values)?;
        Ok(GlobalDescriptor::new(g.image_id.clone(), values, false).normalized())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::new(PCA_MAGIC);
        w.len_u32(self.d_in())?;
        w.len_u32(self.d_out())?;
        w.scalars(&self.mean);
        w.scalars(self.components.as_slice());
        w.scalars(&self.explained_variance);
        Ok(w.into_bytes())
    }

    pub fn from_bytes(bytes: &[u8], source: &str) -> Result<Self> {
        let mut r = Reader::open(bytes, PCA_MAGIC, source)?;
        let at = r.pos();
        let d_in = r.u32()? as usize;
        let d_out = r.u32()? as usize;
        if d_out == 0 || d_out > d_in {
            return Err(r.error_at(at, format!("invalid shape {d_in} → {d_out}")));
        }
        let mean = r.scalars(d_in)?;
        let components = Matrix::from_vec(d_out, d_in, r.scalars(d_out * d_in)?)?;
        let variance = r.scalars(d_out)?;
        r.finish()?;
        PcaModel::new(mean, components, variance)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?, &path.display().to_string())
    }
}

/// Learns a `d_out`-component PCA from the rows of `vectors`.
pub fn fit_pca<T: Scalar>(vectors: &Matrix<T>, d_out: usize) -> Result<PcaModel<T>> {
    let n = vectors.rows();
    let d_in = vectors.cols();
    if d_out == 0 || d_out > d_in {
        return Err(Error::Data(format!(
            "output dimension {d_out} must be in 1..={d_in}"
        )));
    }
    let needed = d_out.max(2);
    if n < needed {
        return Err(Error::InsufficientData { needed, got: n });
    }
    if !vectors.is_finite() {
        return Err(Error::Data("non-finite input entry".into()));
    }

    let mut mean = vec![0.0f64; d_in];
    for row in vectors.row_iter() {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += x.as_f64();
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mean_t: Vec<T> = mean.iter().map(|&m| T::of(m)).collect();
    let denom = (n - 1) as f64;

    let (components, variance) = if d_in <= n {
        covariance_route(vectors, &mean_t, d_out, denom)?
    } else {
        gram_route(vectors, &mean_t, d_out, denom)?
    };
    let mut components = components;
    for r in 0..components.rows() {
        fix_sign(components.row_mut(r));
    }
    PcaModel::new(mean_t, components, variance)
}

/// Eigen-decomposition of the `d_in × d_in` sample covariance.
fn covariance_route<T: Scalar>(
    vectors: &Matrix<T>,
    mean: &[T],
    d_out: usize,
    denom: f64,
) -> Result<(Matrix<T>, Vec<T>)> {
    let d_in = vectors.cols();
    // centered columns, so each covariance entry is one dot product
    let columns: Vec<Vec<T>> = (0..d_in)
        .into_par_iter()
        .map(|j| vectors.row_iter().map(|r| r[j] - mean[j]).collect())
        .collect();
    let lower: Vec<Vec<f64>> = (0..d_in)
        .into_par_iter()
        .map(|i| {
            (0..=i)
                .map(|j| dot(&columns[i], &columns[j]) / denom)
                .collect()
        })
        .collect();
    let mut cov = Matrix::zeros(d_in, d_in);
    for (i, row) in lower.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            cov[(i, j)] = T::of(c);
            cov[(j, i)] = T::of(c);
        }
    }
    let eig = symmetric_eigen(&cov)?;
    let mut comps = Matrix::zeros(d_out, d_in);
    for r in 0..d_out {
        comps.row_mut(r).copy_from_slice(eig.vectors.row(r));
    }
    let variance = eig.values[..d_out]
        .iter()
        .map(|&v| v.max(T::zero()))
        .collect();
    Ok((comps, variance))
}

/// For `d_in > n`: eigen-decompose the `n × n` Gram matrix and map its
/// eigenvectors back into input space.
fn gram_route<T: Scalar>(
    vectors: &Matrix<T>,
    mean: &[T],
    d_out: usize,
    denom: f64,
) -> Result<(Matrix<T>, Vec<T>)> {
    let n = vectors.rows();
    let d_in = vectors.cols();
    let centered: Vec<Vec<T>> = vectors
        .row_iter()
        .map(|r| r.iter().zip(mean).map(|(&x, &m)| x - m).collect())
        .collect();
    let lower: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..=i)
                .map(|j| dot(&centered[i], &centered[j]) / denom)
                .collect()
        })
        .collect();
    let mut gram = Matrix::zeros(n, n);
    for (i, row) in lower.iter().enumerate() {
        for (j, &g) in row.iter().enumerate() {
            gram[(i, j)] = T::of(g);
            gram[(j, i)] = T::of(g);
        }
    }
    let eig = symmetric_eigen(&gram)?;
    let lambda_max = eig
        .values
        .first()
        .copied()
        .unwrap_or(T::zero())
        .max(T::zero());
    let cutoff = lambda_max * T::of(n as f64) * T::epsilon();

    let mut comps: Vec<Vec<f64>> = Vec::with_capacity(d_out);
    let mut variance = Vec::with_capacity(d_out);
    for r in 0..d_out {
        let lambda = eig.values[r];
        if lambda.is_nan() || lambda <= cutoff {
            break;
        }
        let scale = 1.0 / (lambda.as_f64() * denom).sqrt();
        let mut v = vec![0.0f64; d_in];
        for (i, row) in centered.iter().enumerate() {
            let w = eig.vectors[(r, i)].as_f64() * scale;
            for (o, &x) in v.iter_mut().zip(row) {
                *o += w * x.as_f64();
            }
        }
        comps.push(v);
        variance.push(lambda);
    }
    // rank-deficient sample: complete with an orthonormal basis of the
    // null directions, which carry zero variance
    let mut axis = 0;
    while comps.len() < d_out && axis < d_in {
        let mut v = vec![0.0f64; d_in];
        v[axis] = 1.0;
        axis += 1;
        for _ in 0..2 {
            for c in &comps {
                let p: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                for (x, &y) in v.iter_mut().zip(c) {
                    *x -= p * y;
                }
            }
        }
        let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nrm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= nrm);
            comps.push(v);
            variance.push(T::zero());
        }
    }
    let data = comps.into_iter().flatten().map(T::of).collect();
    Ok((Matrix::from_vec(d_out, d_in, data)?, variance))
}

fn fix_sign<T: Scalar>(row: &mut [T]) {
    let mut best = 0;
    for (i, x) in row.iter().enumerate() {
        if x.abs() > row[best].abs() {
            best = i;
        }
    }
    if row.get(best).is_some_and(|&x| x < T::zero()) {
        row.iter_mut().for_each(|x| *x = -*x);
    }
}
