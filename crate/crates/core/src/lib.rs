//! Image retrieval over attentive local descriptors.
//!
//! Local descriptors are aggregated into VLAD global descriptors against a
//! k-means codebook, optionally compressed with PCA, and matched by
//! exhaustive Euclidean search. Memory-vector query expansion (p-sum and
//! p-inv) refines a query with its top candidates. Evaluation reports
//! per-class precision@N, and a synthetic generator provides datasets with
//! planted class structure.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root name the common instantiations. On-disk
//! formats always store `f32`.

mod binio;
pub mod codebook;
pub mod engine;
pub mod error;
pub mod eval;
pub mod expansion;
pub mod linalg;
pub mod model;
pub mod pca;
pub mod pipeline;
pub mod scalar;
pub mod synth;
pub mod vlad;

pub use binio::FORMAT_VERSION;
pub use codebook::{
    select_codebook_training_features, train_codebook, train_codebook_traced, Codebook,
    KMeansConfig, TrainingMeta,
};
pub use engine::{
    benchmark_search, build_index, Index, RankedEntry, RankedList, TimingCell, TimingReport,
};
pub use error::{Error, Result};
pub use eval::{
    evaluate_dataset, precision_at_n, ClassPrecision, EvalConfig, EvaluationReport, RunDescription,
};
pub use expansion::{
    expand_query, pinv_mv, pseudo_inverse, psum, query_with_expansion, DescriptorGroup,
    ExpansionConfig, ExpansionMethod,
};
pub use linalg::Matrix;
pub use model::{
    load_descriptor_set, save_descriptor_set, validate_manifest, Dataset, DatasetManifest,
    DescriptorSet, ImageEntry, LocalDescriptor, ValidationIssue, ValidationReport,
};
pub use pca::{fit_pca, PcaLevel, PcaModel};
pub use pipeline::{PcaSetting, Pipeline, PipelineConfig};
pub use scalar::Scalar;
pub use synth::{generate_synthetic_dataset, write_synthetic_dataset, SynthSpec};
pub use vlad::{aggregate_vlad, select_top_attentive, GlobalDescriptor};

pub type LocalDescriptorF32 = LocalDescriptor<f32>;
pub type LocalDescriptorF64 = LocalDescriptor<f64>;
pub type DescriptorSetF32 = DescriptorSet<f32>;
pub type DescriptorSetF64 = DescriptorSet<f64>;
pub type DatasetF32 = Dataset<f32>;
pub type DatasetF64 = Dataset<f64>;
pub type CodebookF32 = Codebook<f32>;
pub type CodebookF64 = Codebook<f64>;
pub type GlobalDescriptorF32 = GlobalDescriptor<f32>;
pub type GlobalDescriptorF64 = GlobalDescriptor<f64>;
pub type PcaModelF32 = PcaModel<f32>;
pub type PcaModelF64 = PcaModel<f64>;
pub type IndexF32 = Index<f32>;
pub type IndexF64 = Index<f64>;
pub type MatrixF32 = Matrix<f32>;
pub type MatrixF64 = Matrix<f64>;
pub type PipelineF32 = Pipeline<f32>;
pub type PipelineF64 = Pipeline<f64>;
