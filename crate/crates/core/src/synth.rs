//! Deterministic synthetic descriptor datasets with planted class
//! structure.
//!
//! Every class owns a few latent prototypes. An image shifts each of its
//! class's prototypes by an image-level offset, mixes them with random
//! weights and draws descriptors around the shifted prototypes, plus a
//! fraction of distractors from a background pool shared by all classes.
//! Both the offsets and the per-descriptor noise scale with
//! `within_noise`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    scale_ladder, Dataset, DatasetManifest, DescriptorSet, ImageEntry, LocalDescriptor,
    DESCRIPTOR_EXT,
};
use crate::scalar::{squared_distance, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: usize,
    pub images_per_class: usize,
    pub descriptors_per_image: usize,
    pub d: usize,
    /// Expected norm of a prototype.
    pub class_separation: f64,
    /// Expected norm of an image-level prototype offset.
    pub within_noise: f64,
    pub prototypes_per_class: usize,
    pub background_pool: usize,
    /// Attention scale of class-relevant descriptors.
    pub signal_boost: f64,
    /// Fraction of descriptors drawn from the background pool.
    pub distractor_rate: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            classes: 10,
            images_per_class: 50,
            descriptors_per_image: 300,
            d: 64,
            class_separation: 1.0,
            within_noise: 1.0,
            prototypes_per_class: 8,
            background_pool: 32,
            signal_boost: 1.0,
            distractor_rate: 0.2,
            seed: 7,
        }
    }
}

/// Per-descriptor noise relative to the image-level offset.
const LOCAL_NOISE_RATIO: f64 = 0.5;

/// Distractor attention as a fraction of `signal_boost`.
const DISTRACTOR_ATTENTION: f64 = 0.05;

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("classes", self.classes),
            ("images_per_class", self.images_per_class),
            ("descriptors_per_image", self.descriptors_per_image),
            ("d", self.d),
            ("prototypes_per_class", self.prototypes_per_class),
            ("background_pool", self.background_pool),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Data(format!("{name} must be at least 1")));
            }
        }
        let positive = [
            ("class_separation", self.class_separation),
            ("signal_boost", self.signal_boost),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Data(format!("{name} must be finite and positive")));
            }
        }
        // zero noise is the collapsed limit and is allowed
        if !(self.within_noise.is_finite() && self.within_noise >= 0.0) {
            return Err(Error::Data(
                "within_noise must be finite and non-negative".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.distractor_rate) {
            return Err(Error::Data("distractor_rate must be in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn class_name(c: usize) -> String {
        format!("class_{c:02}")
    }

    pub fn image_id(c: usize, i: usize) -> String {
        format!("{}_{i:03}", Self::class_name(c))
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, d: usize, sigma: f64) -> Vec<f64> {
    (0..d)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            sigma * z
        })
        .collect()
}

/// Builds the dataset in memory.
pub fn generate_synthetic_dataset<T: Scalar>(spec: &SynthSpec) -> Result<Dataset<T>> {
    spec.validate()?;
    let d = spec.d;
    let per_dim = 1.0 / (d as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let prototypes: Vec<Vec<Vec<f64>>> = (0..spec.classes)
        .map(|_| {
            (0..spec.prototypes_per_class)
                .map(|_| gaussian_vec(&mut rng, d, spec.class_separation * per_dim))
                .collect()
        })
        .collect();
    let background: Vec<Vec<f64>> = (0..spec.background_pool)
        .map(|_| gaussian_vec(&mut rng, d, spec.class_separation * per_dim))
        .collect();
    let ladder = scale_ladder();

    let total = spec.classes * spec.images_per_class;
    let sets = (0..total)
        .into_par_iter()
        .map(|n| {
            let class = n / spec.images_per_class;
            let image = n % spec.images_per_class;
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(n as u64 + 1);

            let protos = &prototypes[class];
            let offset_sigma = spec.within_noise * per_dim;
            let local_sigma = LOCAL_NOISE_RATIO * offset_sigma;
            let shifted: Vec<Vec<f64>> = protos
                .iter()
                .map(|p| {
                    let o = gaussian_vec(&mut rng, d, offset_sigma);
                    p.iter().zip(o).map(|(a, b)| a + b).collect()
                })
                .collect();
            let weights: Vec<f64> = (0..protos.len()).map(|_| Exp1.sample(&mut rng)).collect();
            let total_w: f64 = weights.iter().sum();

            let mut descriptors = Vec::with_capacity(spec.descriptors_per_image);
            for _ in 0..spec.descriptors_per_image {
                let distractor = rng.random::<f64>() < spec.distractor_rate;
                let (center, is_signal) = if distractor {
                    (&background[rng.random_range(0..background.len())], false)
                } else {
                    let mut u = rng.random::<f64>() * total_w;
                    let mut pick = protos.len() - 1;
                    for (j, w) in weights.iter().enumerate() {
                        if u < *w {
                            pick = j;
                            break;
                        }
                        u -= w;
                    }
                    (&shifted[pick], true)
                };
                let noise = gaussian_vec(&mut rng, d, local_sigma);
                let raw: Vec<f64> = center.iter().zip(&noise).map(|(c, e)| c + e).collect();
                let attention = if is_signal {
                    let nearest = protos
                        .iter()
                        .map(|p| squared_distance(&raw, p))
                        .fold(f64::INFINITY, f64::min)
                        .sqrt();
                    spec.signal_boost / (1.0 + nearest)
                } else {
                    spec.signal_boost * DISTRACTOR_ATTENTION * rng.random::<f64>()
                };
                let vector: Vec<T> = raw.into_iter().map(T::of).collect();
                let scale = ladder[rng.random_range(0..ladder.len())];
                descriptors.push(LocalDescriptor::new(
                    vector,
                    T::of(rng.random::<f64>()),
                    T::of(rng.random::<f64>()),
                    T::of(scale),
                    T::of(attention),
                ));
            }
            DescriptorSet::new(
                SynthSpec::image_id(class, image),
                SynthSpec::class_name(class),
                d,
                descriptors,
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let images = sets
        .iter()
        .map(|s| ImageEntry {
            id: s.image_id.clone(),
            class: s.class_label.clone(),
            path: format!("{}.{DESCRIPTOR_EXT}", s.image_id).into(),
        })
        .collect();
    let manifest = DatasetManifest {
        name: format!("synthetic-seed{}", spec.seed),
        d,
        scales: ladder.to_vec(),
        classes: (0..spec.classes).map(SynthSpec::class_name).collect(),
        images,
    };
    Ok(Dataset { manifest, sets })
}

/// Generates the dataset and writes the manifest and descriptor files
/// under `root`.
pub fn write_synthetic_dataset(spec: &SynthSpec, root: &Path) -> Result<DatasetManifest> {
    let dataset = generate_synthetic_dataset::<f32>(spec)?;
    dataset.save(root)?;
    Ok(dataset.manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_manifest;

    fn small() -> SynthSpec {
        SynthSpec {
            classes: 3,
            images_per_class: 4,
            descriptors_per_image: 20,
            d: 8,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn deterministic_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let m = write_synthetic_dataset(&small(), a.path()).unwrap();
        write_synthetic_dataset(&small(), b.path()).unwrap();
        assert!(validate_manifest(&m, a.path()).is_clean());
        for e in &m.images {
            let x = std::fs::read(a.path().join(&e.path)).unwrap();
            let y = std::fs::read(b.path().join(&e.path)).unwrap();
            assert_eq!(x, y);
        }
    }

    #[test]
    fn shapes_and_ordering() {
        let ds = generate_synthetic_dataset::<f64>(&small()).unwrap();
        assert_eq!(ds.len(), 12);
        assert_eq!(ds.manifest.classes.len(), 3);
        for s in &ds.sets {
            assert_eq!(s.len(), 20);
            assert!(s.is_attention_ordered());
        }
    }

    #[test]
    fn zero_noise_collapses_onto_prototypes() {
        let spec = SynthSpec {
            within_noise: 0.0,
            distractor_rate: 0.0,
            ..small()
        };
        let ds = generate_synthetic_dataset::<f64>(&spec).unwrap();
        for s in &ds.sets {
            // every descriptor sits exactly on a prototype, so attention is maximal
            assert!(s
                .descriptors
                .iter()
                .all(|d| d.attention == spec.signal_boost));
        }
    }

    #[test]
    fn distractors_rank_last() {
        let spec = SynthSpec {
            distractor_rate: 0.5,
            ..small()
        };
        let ds = generate_synthetic_dataset::<f64>(&spec).unwrap();
        let s = &ds.sets[0];
        let top = s.descriptors[0].attention;
        let bottom = s.descriptors.last().unwrap().attention;
        assert!(bottom <= DISTRACTOR_ATTENTION * spec.signal_boost);
        assert!(top > 0.5 * spec.signal_boost);
    }

    #[test]
    fn rejects_bad_specs() {
        for spec in [
            SynthSpec {
                classes: 0,
                ..small()
            },
            SynthSpec {
                within_noise: f64::NAN,
                ..small()
            },
            SynthSpec {
                distractor_rate: 1.5,
                ..small()
            },
        ] {
            assert!(spec.validate().is_err());
        }
    }
}
