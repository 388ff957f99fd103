//! End-to-end wiring: codebook and PCA training on a dataset, then global
//! descriptors and an index for every image.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codebook::{
    select_codebook_training_features, train_codebook, Codebook, KMeansConfig, DEFAULT_K,
    DEFAULT_TRAINING_PER_IMAGE,
};
use crate::engine::{build_index, Index};
use crate::error::{Error, Result};
use crate::eval::RunDescription;
use crate::linalg::Matrix;
use crate::model::{Dataset, DescriptorSet};
use crate::pca::{fit_pca, PcaLevel, PcaModel};
use crate::scalar::Scalar;
use crate::vlad::{aggregate_vlad, select_top_attentive, GlobalDescriptor, DEFAULT_TOP_ATTENTIVE};

/// Optional projection stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PcaSetting {
    pub level: PcaLevel,
    pub dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub k: usize,
    /// Descriptors per image used to train the codebook (and a
    /// feature-level PCA).
    pub per_image: usize,
    /// Descriptors per image aggregated into the global descriptor.
    pub top_n: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub tol: f64,
    pub pca: Option<PcaSetting>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let km = KMeansConfig::default();
        PipelineConfig {
            k: DEFAULT_K,
            per_image: DEFAULT_TRAINING_PER_IMAGE,
            top_n: DEFAULT_TOP_ATTENTIVE,
            seed: km.seed,
            max_iters: km.max_iters,
            tol: km.tol,
            pca: None,
        }
    }
}

impl PipelineConfig {
    pub fn kmeans(&self) -> KMeansConfig {
        KMeansConfig {
            k: self.k,
            seed: self.seed,
            max_iters: self.max_iters,
            tol: self.tol,
        }
    }
}

/// Trained models applied to every image.
#[derive(Clone, Debug)]
pub struct Pipeline<T> {
    pub codebook: Codebook<T>,
    pub feature_pca: Option<PcaModel<T>>,
    pub global_pca: Option<PcaModel<T>>,
    pub top_n: usize,
    pub seed: u64,
}

/// Training features, projected when a feature-level model is given.
pub fn training_features<T: Scalar>(
    sets: &[DescriptorSet<T>],
    per_image: usize,
    feature_pca: Option<&PcaModel<T>>,
) -> Result<Matrix<T>> {
    let raw = select_codebook_training_features(sets, per_image)?;
    match feature_pca {
        None => Ok(raw),
        Some(model) => {
            let rows = raw
                .row_iter()
                .collect::<Vec<_>>()
                .par_iter()
                .map(|r| model.project(r))
                .collect::<Result<Vec<_>>>()?;
            Matrix::from_rows(&rows)
        }
    }
}

impl<T: Scalar> Pipeline<T> {
    /// Checks that the models chain: feature PCA output matches the
    /// codebook dimension and global PCA input matches `k·d`.
    pub fn new(
        codebook: Codebook<T>,
        feature_pca: Option<PcaModel<T>>,
        global_pca: Option<PcaModel<T>>,
        top_n: usize,
        seed: u64,
    ) -> Result<Self> {
        if let Some(p) = &feature_pca {
            if p.d_out() != codebook.dim() {
                return Err(Error::dim(codebook.dim(), p.d_out()));
            }
        }
        if let Some(p) = &global_pca {
            let len = codebook.k() * codebook.dim();
            if p.d_in() != len {
                return Err(Error::dim(len, p.d_in()));
            }
        }
        Ok(Pipeline {
            codebook,
            feature_pca,
            global_pca,
            top_n,
            seed,
        })
    }

    /// Trains every model of `config` on `dataset`.
    pub fn fit(dataset: &Dataset<T>, config: &PipelineConfig) -> Result<Self> {
        let feature_pca = match config.pca {
            Some(PcaSetting {
                level: PcaLevel::Feature,
                dim,
            }) => {
                let raw = select_codebook_training_features(&dataset.sets, config.per_image)?;
                Some(fit_pca(&raw, dim)?)
            }
            _ => None,
        };
        let features = training_features(&dataset.sets, config.per_image, feature_pca.as_ref())?;
        let codebook = train_codebook(&features, &config.kmeans())?;
        let mut pipeline = Pipeline::new(codebook, feature_pca, None, config.top_n, config.seed)?;
        if let Some(PcaSetting {
            level: PcaLevel::Global,
            dim,
        }) = config.pca
        {
            let globals = pipeline.globals(&dataset.sets)?;
            pipeline.global_pca = Some(fit_global_pca(&globals, dim)?);
        }
        Ok(pipeline)
    }

    /// Global descriptor of one image.
    pub fn global(&self, set: &DescriptorSet<T>) -> Result<GlobalDescriptor<T>> {
        let top = select_top_attentive(set, self.top_n);
        let local = match &self.feature_pca {
            Some(p) => p.project_set(&top)?,
            None => top,
        };
        let g = aggregate_vlad(&local, &self.codebook, true)?;
        match &self.global_pca {
            Some(p) => p.project_global(&g),
            None => Ok(g),
        }
    }

    pub fn globals(&self, sets: &[DescriptorSet<T>]) -> Result<Vec<GlobalDescriptor<T>>> {
        sets.par_iter().map(|s| self.global(s)).collect()
    }

    /// `(k, d)` recorded in the index file.
    pub fn layout(&self) -> (usize, usize) {
        match &self.global_pca {
            Some(p) => (1, p.d_out()),
            None => (self.codebook.k(), self.codebook.dim()),
        }
    }

    /// Indexes every image of `dataset`, labelled from its manifest.
    pub fn index(&self, dataset: &Dataset<T>) -> Result<Index<T>> {
        let globals = self.globals(&dataset.sets)?;
        let labels: Vec<String> = dataset.sets.iter().map(|s| s.class_label.clone()).collect();
        let (k, d) = self.layout();
        build_index(&globals, &labels)?.with_layout(k, d)
    }

    pub fn describe(&self) -> RunDescription {
        let (level, dim) = match (&self.feature_pca, &self.global_pca) {
            (Some(p), _) => (Some(PcaLevel::Feature), Some(p.d_out())),
            (None, Some(p)) => (Some(PcaLevel::Global), Some(p.d_out())),
            (None, None) => (None, None),
        };
        RunDescription {
            k: self.codebook.k(),
            d: self.codebook.dim(),
            top_n: self.top_n,
            pca_level: level,
            pca_dim: dim,
            seed: self.seed,
        }
    }
}

/// PCA over finished global descriptors.
pub fn fit_global_pca<T: Scalar>(
    globals: &[GlobalDescriptor<T>],
    dim: usize,
) -> Result<PcaModel<T>> {
    let rows: Vec<&[T]> = globals.iter().map(|g| g.values.as_slice()).collect();
    if rows.is_empty() {
        return Err(Error::EmptyCollection("no global descriptors".into()));
    }
    fit_pca(&Matrix::from_rows(&rows)?, dim)
}
