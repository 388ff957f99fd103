//! VLAD aggregation of the most attentive local descriptors of an image.
//!
//! Each local feature is assigned to its nearest visual word `c_i` and the
//! residuals `f - c_i` are summed per word. The `k` per-word sums are
//! concatenated in word order into a `k × d` vector, which is finally
//! L2-normalized. No intra-normalization or power-law step is applied.

use crate::codebook::Codebook;
use crate::error::{Error, Result};
use crate::model::DescriptorSet;
use crate::scalar::{norm, Scalar};

/// Descriptors per image kept for aggregation in the reference setup.
pub const DEFAULT_TOP_ATTENTIVE: usize = 300;

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalDescriptor<T> {
    pub image_id: String,
    pub values: Vec<T>,
    /// True when `values` has unit L2 norm. A zero vector is never
    /// marked normalized.
    pub normalized: bool,
}

impl<T: Scalar> GlobalDescriptor<T> {
    pub fn new(image_id: impl Into<String>, values: Vec<T>, normalized: bool) -> Self {
        GlobalDescriptor {
            image_id: image_id.into(),
            values,
            normalized,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == T::zero())
    }

    /// Rescales to unit norm; a zero vector stays zero and unflagged.
    pub fn normalize(&mut self) {
        self.normalized = crate::scalar::l2_normalize(&mut self.values);
    }

    pub fn normalized(mut self) -> Self {
        self.normalize();
        self
    }
}

/// Keeps the `n` most attentive descriptors (the set is already ordered).
pub fn select_top_attentive<T: Scalar>(set: &DescriptorSet<T>, n: usize) -> DescriptorSet<T> {
    DescriptorSet {
        image_id: set.image_id.clone(),
        class_label: set.class_label.clone(),
        dim: set.dim,
        descriptors: set.descriptors.iter().take(n).cloned().collect(),
    }
}

/// Builds the VLAD vector of `set` against `codebook`.
///
/// An empty set yields the zero vector with `normalized == false`.
pub fn aggregate_vlad<T: Scalar>(
    set: &DescriptorSet<T>,
    codebook: &Codebook<T>,
    normalize: bool,
) -> Result<GlobalDescriptor<T>> {
    if set.dim != codebook.dim() {
        return Err(Error::dim(codebook.dim(), set.dim));
    }
    let features = set.descriptors.iter().map(|d| d.vector.as_slice());
    let values = aggregate_features(features, codebook)?;
    let mut out = GlobalDescriptor::new(set.image_id.clone(), values, false);
    if normalize {
        out.normalize();
    }
    Ok(out)
}

/// Unnormalized VLAD of an arbitrary feature sequence.
pub fn aggregate_features<'a, T: Scalar>(
    features: impl IntoIterator<Item = &'a [T]>,
    codebook: &Codebook<T>,
) -> Result<Vec<T>> {
    let d = codebook.dim();
    let mut acc = vec![0.0f64; codebook.k() * d];
    for f in features {
        if f.len() != d {
            return Err(Error::dim(d, f.len()));
        }
        let (word, _) = codebook.nearest(f);
        let centroid = codebook.centroid(word);
        let block = &mut acc[word * d..(word + 1) * d];
        for ((a, &x), &c) in block.iter_mut().zip(f).zip(centroid) {
            *a += (x - c).as_f64();
        }
    }
    Ok(acc.into_iter().map(T::of).collect())
}

/// L2 norm of a global descriptor's values.
pub fn vlad_norm<T: Scalar>(g: &GlobalDescriptor<T>) -> f64 {
    norm(&g.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::TrainingMeta;
    use crate::linalg::Matrix;
    use crate::model::LocalDescriptor;

    fn meta() -> TrainingMeta {
        TrainingMeta {
            seed: 0,
            iterations: 0,
            inertia: 0.0,
        }
    }

    fn set_of(features: &[Vec<f64>], attention: &[f64]) -> DescriptorSet<f64> {
        let d = features[0].len();
        let descs = features
            .iter()
            .zip(attention)
            .map(|(f, &a)| LocalDescriptor::new(f.clone(), 0.5, 0.5, 1.0, a))
            .collect();
        DescriptorSet::new("q", "c", d, descs).unwrap()
    }

    #[test]
    fn one_word_one_feature() {
        let cb = Codebook::new(Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap(), meta()).unwrap();
        let set = set_of(&[vec![4.0, 5.0]], &[1.0]);
        let g = aggregate_vlad(&set, &cb, true).unwrap();
        assert!(g.normalized);
        assert!((g.values[0] - 0.6).abs() < 1e-12);
        assert!((g.values[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn output_length_is_k_times_d() {
        let k = 16;
        let d = 1024;
        let cents: Vec<Vec<f32>> = (0..k).map(|i| vec![i as f32; d]).collect();
        let cb = Codebook::new(Matrix::from_rows(&cents).unwrap(), meta()).unwrap();
        let descs = (0..5)
            .map(|i| LocalDescriptor::new(vec![i as f32 * 0.3; d], 0.0, 0.0, 1.0, 1.0))
            .collect();
        let set = DescriptorSet::new("q", "c", d, descs).unwrap();
        let g = aggregate_vlad(&set, &cb, true).unwrap();
        assert_eq!(g.len(), 16_384);
    }

    #[test]
    fn empty_set_stays_zero() {
        let cb = Codebook::new(Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap(), meta()).unwrap();
        let set = DescriptorSet::<f64>::new("e", "c", 2, vec![]).unwrap();
        let g = aggregate_vlad(&set, &cb, true).unwrap();
        assert!(g.is_zero());
        assert!(!g.normalized);
    }

    #[test]
    fn zero_residual_stays_unnormalized() {
        let cb = Codebook::new(Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap(), meta()).unwrap();
        let set = set_of(&[vec![1.0, 1.0]], &[1.0]);
        let g = aggregate_vlad(&set, &cb, true).unwrap();
        assert!(g.is_zero() && !g.normalized);
    }

    #[test]
    fn dimension_mismatch() {
        let cb = Codebook::new(Matrix::from_rows(&[vec![1.0, 1.0, 1.0]]).unwrap(), meta()).unwrap();
        let set = set_of(&[vec![1.0, 1.0]], &[1.0]);
        assert!(matches!(
            aggregate_vlad(&set, &cb, true),
            Err(Error::Dimension {
                expected: 3,
                found: 2
            })
        ));
    }

    #[test]
    fn top_attentive_truncates_and_saturates() {
        let feats: Vec<Vec<f64>> = (0..700).map(|i| vec![i as f64]).collect();
        let att: Vec<f64> = (0..700).map(|i| ((i * 7919) % 700) as f64).collect();
        let set = set_of(&feats, &att);
        let top = select_top_attentive(&set, 300);
        assert_eq!(top.len(), 300);
        let min_kept = top
            .descriptors
            .iter()
            .map(|d| d.attention)
            .fold(f64::INFINITY, f64::min);
        let max_dropped = set.descriptors[300..]
            .iter()
            .map(|d| d.attention)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(min_kept >= max_dropped);

        let small = set_of(&feats[..50], &att[..50]);
        assert_eq!(select_top_attentive(&small, 300).len(), 50);
    }
}
