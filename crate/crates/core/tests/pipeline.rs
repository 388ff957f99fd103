use rsir_core::*;

const JITTER: f64 = 0.01;

fn average_precision(spec: &SynthSpec, config: &PipelineConfig, method: ExpansionMethod) -> f64 {
    let ds = generate_synthetic_dataset::<f32>(spec).unwrap();
    let pipeline = Pipeline::fit(&ds, config).unwrap();
    let index = pipeline.index(&ds).unwrap();
    let eval = EvalConfig::default().with_expansion(method);
    evaluate_dataset(&index, &ds.manifest, &eval)
        .unwrap()
        .average
}

fn small(noise: f64) -> SynthSpec {
    SynthSpec {
        classes: 6,
        images_per_class: 30,
        descriptors_per_image: 150,
        d: 32,
        within_noise: noise,
        ..SynthSpec::default()
    }
}

fn config() -> PipelineConfig {
    PipelineConfig {
        k: 16,
        top_n: 150,
        seed: 1,
        ..PipelineConfig::default()
    }
}

#[test]
fn more_noise_never_helps() {
    let ladder = [0.8, 1.3, 1.8];
    let aps: Vec<f64> = ladder
        .iter()
        .map(|&n| average_precision(&small(n), &config(), ExpansionMethod::None))
        .collect();
    for w in aps.windows(2) {
        assert!(w[1] <= w[0] + JITTER, "{ladder:?} -> {aps:?}");
    }
    assert!(aps[0] - aps[2] > 0.05, "ladder too flat: {aps:?}");
}

#[test]
fn noise_free_limit_is_near_perfect() {
    let ap = average_precision(&small(0.0), &config(), ExpansionMethod::None);
    assert!(ap > 0.99, "{ap}");
}

#[test]
fn psum_expansion_not_worse_on_degraded_data() {
    let spec = small(1.6);
    let base = average_precision(&spec, &config(), ExpansionMethod::None);
    let qe = average_precision(&spec, &config(), ExpansionMethod::Psum);
    assert!(qe >= base, "QE-S {qe} < baseline {base}");
}

#[test]
fn global_reduction_keeps_unit_norm_and_ranking_quality() {
    let spec = small(1.0);
    let full = average_precision(&spec, &config(), ExpansionMethod::None);
    let reduced_config = PipelineConfig {
        pca: Some(PcaSetting {
            level: PcaLevel::Global,
            dim: 64,
        }),
        ..config()
    };
    let ds = generate_synthetic_dataset::<f32>(&spec).unwrap();
    let pipeline = Pipeline::fit(&ds, &reduced_config).unwrap();
    let index = pipeline.index(&ds).unwrap();
    assert_eq!(index.layout(), (1, 64));
    for row in 0..index.len() {
        let norm: f64 = index
            .row(row)
            .iter()
            .map(|&x| (x as f64).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!((norm - 1.0).abs() < 1e-4, "row {row} norm {norm}");
    }
    let reduced = evaluate_dataset(&index, &ds.manifest, &EvalConfig::default())
        .unwrap()
        .average;
    assert!(reduced >= full - 0.05, "reduced {reduced} vs full {full}");
}

#[test]
fn generation_is_deterministic() {
    let a = generate_synthetic_dataset::<f32>(&small(1.0)).unwrap();
    let b = generate_synthetic_dataset::<f32>(&small(1.0)).unwrap();
    assert_eq!(a.sets, b.sets);
    let c = generate_synthetic_dataset::<f32>(&SynthSpec {
        seed: 8,
        ..small(1.0)
    })
    .unwrap();
    assert_ne!(a.sets, c.sets);
}
