use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rsir_core::model::MANIFEST_FILE;
use rsir_core::pipeline::{fit_global_pca, training_features};
use rsir_core::{
    benchmark_search, evaluate_dataset, fit_pca, load_descriptor_set, query_with_expansion,
    select_codebook_training_features, train_codebook, validate_manifest, write_synthetic_dataset,
    Codebook, Dataset, DatasetManifest, EvalConfig, ExpansionConfig, Index, KMeansConfig, PcaLevel,
    PcaModel, Pipeline, RunDescription, SynthSpec,
};
use serde::{Deserialize, Serialize};

use crate::args::*;
use crate::exit::{CliError, CliResult};

pub const CODEBOOK_FILE: &str = "codebook.bin";
pub const INDEX_FILE: &str = "index.bin";
pub const INDEX_META_FILE: &str = "index.meta.json";
pub const EVALUATION_TEXT: &str = "evaluation.txt";
pub const EVALUATION_JSON: &str = "evaluation.json";
pub const BENCHMARK_TEXT: &str = "benchmark.txt";
pub const BENCHMARK_JSON: &str = "benchmark.json";
pub const QUERY_JSON: &str = "query.json";
pub const VALIDATION_JSON: &str = "validation.json";

/// Visual-word counts used without a warning.
const USUAL_K: [usize; 4] = [2, 4, 8, 16];

type F = f32;

pub fn pca_file(level: PcaLevel) -> String {
    format!("pca-{level}.bin")
}

/// Everything needed to turn a descriptor file into a query against the
/// index it describes. Paths are absolute.
#[derive(Debug, Serialize, Deserialize)]
pub struct IndexMeta {
    pub dataset: PathBuf,
    pub codebook: PathBuf,
    pub feature_pca: Option<PathBuf>,
    pub global_pca: Option<PathBuf>,
    pub count: usize,
    pub layout: (usize, usize),
    pub run: RunDescription,
}

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Core(rsir_core::Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn create_out(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn absolute(path: &Path) -> CliResult<PathBuf> {
    fs::canonicalize(path).map_err(|e| io_err(path, e))
}

fn to_json<S: Serialize>(value: &S) -> String {
    serde_json::to_string_pretty(value).expect("plain data serializes")
}

/// Logs the run configuration and records it as `<command>.config.json`
/// under `out`, when there is one.
pub fn record_config<A: Serialize>(command: &str, args: &A, out: Option<&Path>) -> CliResult<()> {
    let record = serde_json::json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "args": args,
    });
    let text = to_json(&record);
    info!(
        "{command} config: {}",
        serde_json::to_string(&record).expect("json")
    );
    if let Some(dir) = out {
        create_out(dir)?;
        write_text(&dir.join(format!("{command}.config.json")), &text)?;
    }
    Ok(())
}

pub fn synth(args: &SynthArgs) -> CliResult<()> {
    let spec = SynthSpec {
        classes: args.classes,
        images_per_class: args.images,
        descriptors_per_image: args.per_image,
        d: args.dim,
        class_separation: args.separation,
        within_noise: args.noise,
        seed: args.seed,
        ..SynthSpec::default()
    };
    let manifest = write_synthetic_dataset(&spec, &args.out)?;
    println!(
        "wrote {} images in {} classes (d={}) to {}",
        manifest.images.len(),
        manifest.classes.len(),
        manifest.d,
        args.out.display()
    );
    Ok(())
}

pub fn validate(args: &ValidateArgs) -> CliResult<()> {
    let manifest = DatasetManifest::load(&args.dataset.join(MANIFEST_FILE))?;
    let report = validate_manifest(&manifest, &args.dataset);
    if let Some(dir) = &args.out {
        write_text(&dir.join(VALIDATION_JSON), &to_json(&report))?;
    }
    if report.is_clean() {
        println!(
            "{}: {} images, no issues",
            args.dataset.display(),
            manifest.images.len()
        );
        Ok(())
    } else {
        for issue in &report.issues {
            println!("{issue}");
        }
        Err(CliError::ValidationFailed(report.issues.len()))
    }
}

fn warn_unusual_k(k: usize) {
    if !USUAL_K.contains(&k) {
        warn!("k={k} is outside the usual grid {USUAL_K:?}; continuing");
    }
}

pub fn train_codebook_cmd(args: &TrainCodebookArgs) -> CliResult<()> {
    warn_unusual_k(args.k);
    let dataset = Dataset::<F>::load(&args.dataset)?;
    let feature_pca = args
        .feature_pca
        .as_deref()
        .map(PcaModel::<F>::load)
        .transpose()?;
    let features = training_features(&dataset.sets, args.per_image, feature_pca.as_ref())?;
    let config = KMeansConfig {
        max_iters: args.max_iters,
        tol: args.tol,
        ..KMeansConfig::new(args.k, args.seed)
    };
    info!(
        "clustering {} features of d={}",
        features.rows(),
        features.cols()
    );
    let codebook = train_codebook(&features, &config)?;
    let path = args.out.join(CODEBOOK_FILE);
    codebook.save(&path)?;
    println!(
        "codebook k={} d={} after {} iterations (inertia {:.6}) -> {}",
        codebook.k(),
        codebook.dim(),
        codebook.meta.iterations,
        codebook.meta.inertia,
        path.display()
    );
    Ok(())
}

pub fn train_pca(args: &TrainPcaArgs) -> CliResult<()> {
    let dataset = Dataset::<F>::load(&args.dataset)?;
    let level = PcaLevel::from(args.level);
    let model = match level {
        PcaLevel::Feature => {
            let raw = select_codebook_training_features(&dataset.sets, args.per_image)?;
            fit_pca(&raw, args.dim)?
        }
        PcaLevel::Global => {
            let codebook_path = args
                .codebook
                .as_deref()
                .ok_or_else(|| CliError::Usage("--level global needs --codebook".into()))?;
            let codebook = Codebook::<F>::load(codebook_path)?;
            let feature_pca = args
                .feature_pca
                .as_deref()
                .map(PcaModel::<F>::load)
                .transpose()?;
            let pipeline = Pipeline::new(codebook, feature_pca, None, args.top, 0)?;
            fit_global_pca(&pipeline.globals(&dataset.sets)?, args.dim)?
        }
    };
    let path = args.out.join(pca_file(level));
    model.save(&path)?;
    let kept: f64 = model.explained_variance().iter().map(|&v| v as f64).sum();
    println!(
        "{level} PCA {} -> {} (retained variance {kept:.6}) -> {}",
        model.d_in(),
        model.d_out(),
        path.display()
    );
    Ok(())
}

pub fn build_index_cmd(args: &BuildIndexArgs) -> CliResult<()> {
    let dataset = Dataset::<F>::load(&args.dataset)?;
    let codebook = Codebook::<F>::load(&args.codebook)?;
    warn_unusual_k(codebook.k());
    let feature_pca = args
        .feature_pca
        .as_deref()
        .map(PcaModel::<F>::load)
        .transpose()?;
    let global_pca = args
        .global_pca
        .as_deref()
        .map(PcaModel::<F>::load)
        .transpose()?;
    let seed = codebook.meta.seed;
    let pipeline = Pipeline::new(codebook, feature_pca, global_pca, args.top, seed)?;
    let index = pipeline.index(&dataset)?;
    let path = args.out.join(INDEX_FILE);
    index.save(&path)?;
    let meta = IndexMeta {
        dataset: absolute(&args.dataset)?,
        codebook: absolute(&args.codebook)?,
        feature_pca: args.feature_pca.as_deref().map(absolute).transpose()?,
        global_pca: args.global_pca.as_deref().map(absolute).transpose()?,
        count: index.len(),
        layout: index.layout(),
        run: pipeline.describe(),
    };
    write_text(&args.out.join(INDEX_META_FILE), &to_json(&meta))?;
    println!(
        "indexed {} images, {} values each -> {}",
        index.len(),
        index.dim(),
        path.display()
    );
    Ok(())
}

/// Loads an index and its metadata, labelling rows from the dataset
/// manifest.
fn open_index(
    index_path: &Path,
    dataset: Option<&Path>,
) -> CliResult<(Index<F>, IndexMeta, PathBuf, DatasetManifest)> {
    if !index_path.is_file() {
        return Err(CliError::IndexMissing(index_path.to_path_buf()));
    }
    let meta_path = index_path.with_file_name(INDEX_META_FILE);
    let text = fs::read_to_string(&meta_path).map_err(|e| io_err(&meta_path, e))?;
    let meta: IndexMeta = serde_json::from_str(&text).map_err(|e| {
        CliError::Core(rsir_core::Error::Format {
            source_name: meta_path.display().to_string(),
            offset: 0,
            reason: e.to_string(),
        })
    })?;
    let root = dataset.map_or_else(|| meta.dataset.clone(), Path::to_path_buf);
    let manifest = DatasetManifest::load(&root.join(MANIFEST_FILE))?;
    let labels = manifest.label_map();
    let index = Index::<F>::load(index_path)?.with_labels(|id| labels.get(id).copied())?;
    drop(labels);
    Ok((index, meta, root, manifest))
}

pub fn query(args: &QueryArgs) -> CliResult<()> {
    let (index, meta, root, manifest) = open_index(&args.index, args.dataset.as_deref())?;
    let codebook = Codebook::<F>::load(&meta.codebook)?;
    let feature_pca = meta
        .feature_pca
        .as_deref()
        .map(PcaModel::<F>::load)
        .transpose()?;
    let global_pca = meta
        .global_pca
        .as_deref()
        .map(PcaModel::<F>::load)
        .transpose()?;
    let local_dim = feature_pca.as_ref().map_or(codebook.dim(), PcaModel::d_in);
    let pipeline = Pipeline::new(
        codebook,
        feature_pca,
        global_pca,
        meta.run.top_n,
        meta.run.seed,
    )?;

    let (set, label) = match (&args.image, &args.descriptors) {
        (Some(id), _) => {
            let entry = manifest
                .images
                .iter()
                .find(|e| &e.id == id)
                .ok_or_else(|| CliError::Usage(format!("image `{id}` is not in the dataset")))?;
            let mut set = load_descriptor_set::<F>(&root.join(&entry.path), manifest.d)?;
            set.image_id = entry.id.clone();
            (set, entry.id.clone())
        }
        (None, Some(path)) => (
            load_descriptor_set::<F>(path, local_dim)?,
            path.display().to_string(),
        ),
        (None, None) => return Err(CliError::Usage("give --image or --descriptors".into())),
    };
    let exclude = if args.leave_one_out {
        index.position(&set.image_id)
    } else {
        None
    };
    let global = pipeline.global(&set)?;
    let config = ExpansionConfig {
        method: args.expansion.into(),
        top: args.expansion_top,
    };
    let ranked = query_with_expansion(&index, &global, &config, args.top_k, exclude)?;
    println!("query {label} (expansion {})", config.method);
    print!("{ranked}");
    if let Some(dir) = &args.out {
        let record = serde_json::json!({
            "query": label,
            "expansion": config,
            "top_k": args.top_k,
            "leave_one_out": args.leave_one_out,
            "results": ranked,
        });
        write_text(&dir.join(QUERY_JSON), &to_json(&record))?;
    }
    Ok(())
}

pub fn evaluate(args: &EvaluateArgs) -> CliResult<()> {
    let (index, meta, _, manifest) = open_index(&args.index, args.dataset.as_deref())?;
    let config = EvalConfig {
        ns: args.n.clone(),
        expansion: ExpansionConfig {
            method: args.expansion.into(),
            top: args.expansion_top,
        },
        leave_one_out: !args.include_self,
        run: meta.run,
    };
    let report = evaluate_dataset(&index, &manifest, &config)?;
    for w in &report.warnings {
        warn!("{w}");
    }
    let text = report.to_string();
    write_text(&args.out.join(EVALUATION_TEXT), &text)?;
    write_text(&args.out.join(EVALUATION_JSON), &report.to_json())?;
    if let Some(path) = &args.report {
        write_text(path, &text)?;
    }
    print!("{text}");
    Ok(())
}

pub fn benchmark(args: &BenchmarkArgs) -> CliResult<()> {
    let report = benchmark_search::<F>(
        &args.sizes,
        &args.dims,
        args.repetitions,
        args.top_k,
        args.seed,
    )?;
    let text = report.to_string();
    write_text(&args.out.join(BENCHMARK_TEXT), &text)?;
    write_text(&args.out.join(BENCHMARK_JSON), &report.to_json())?;
    print!("{text}");
    Ok(())
}
