//! Independent reference computations checked against the library.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rsir_core::linalg::{svd, symmetric_eigen};
use rsir_core::model::{validate_manifest, ValidationIssue};
use rsir_core::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<f64> {
    Matrix::from_vec(rows, cols, gaussian(rng, rows * cols)).unwrap()
}

fn to_na(m: &Matrix<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn meta() -> TrainingMeta {
    TrainingMeta {
        seed: 0,
        iterations: 0,
        inertia: 0.0,
    }
}

fn naive_vlad(features: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<f64> {
    let d = centroids[0].len();
    let mut out = vec![0.0; centroids.len() * d];
    for f in features {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, c) in centroids.iter().enumerate() {
            let dist: f64 = f.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
            if dist < best_d {
                best_d = dist;
                best = i;
            }
        }
        for j in 0..d {
            out[best * d + j] += f[j] - centroids[best][j];
        }
    }
    out
}

#[test]
fn vlad_matches_double_loop() {
    let mut r = rng(1);
    let d = 6;
    let centroids: Vec<Vec<f64>> = (0..4).map(|_| gaussian(&mut r, d)).collect();
    let features: Vec<Vec<f64>> = (0..40).map(|_| gaussian(&mut r, d)).collect();
    let cb = Codebook::new(Matrix::from_rows(&centroids).unwrap(), meta()).unwrap();
    let descs = features
        .iter()
        .map(|f| LocalDescriptor::new(f.clone(), 0.5, 0.5, 1.0, 1.0))
        .collect();
    let set = DescriptorSet::new("q", "c", d, descs).unwrap();
    let got = aggregate_vlad(&set, &cb, false).unwrap();
    let want = naive_vlad(&features, &centroids);
    assert_eq!(got.len(), 24);
    for (a, b) in got.values.iter().zip(&want) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn top_attentive_equals_full_sort() {
    let mut r = rng(2);
    let attention: Vec<f64> = (0..80).map(|_| r.random::<f64>()).collect();
    let descs = attention
        .iter()
        .enumerate()
        .map(|(i, &a)| LocalDescriptor::new(vec![i as f64], 0.0, 0.0, 1.0, a))
        .collect();
    let set = DescriptorSet::new("q", "c", 1, descs).unwrap();
    let top = select_top_attentive(&set, 10);
    let mut order: Vec<usize> = (0..80).collect();
    order.sort_by(|&a, &b| attention[b].partial_cmp(&attention[a]).unwrap());
    let want: Vec<f64> = order[..10].iter().map(|&i| i as f64).collect();
    let got: Vec<f64> = top.descriptors.iter().map(|d| d.vector[0]).collect();
    assert_eq!(got, want);
}

#[test]
fn assign_matches_exhaustive_scan() {
    let mut r = rng(3);
    let d = 5;
    let centroids: Vec<Vec<f64>> = (0..7).map(|_| gaussian(&mut r, d)).collect();
    let cb = Codebook::new(Matrix::from_rows(&centroids).unwrap(), meta()).unwrap();
    for _ in 0..1000 {
        let f = gaussian(&mut r, d);
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, c) in centroids.iter().enumerate() {
            let dist: f64 = f.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
            if dist < best_d {
                best_d = dist;
                best = i;
            }
        }
        assert_eq!(cb.assign(&f).unwrap(), best);
    }
}

#[test]
fn two_means_match_best_partition() {
    let mut r = rng(4);
    let planted = [vec![-3.0, 0.0, 1.0], vec![3.0, 1.0, -1.0]];
    let points: Vec<Vec<f64>> = (0..20)
        .map(|i| {
            let c = &planted[i % 2];
            c.iter()
                .map(|x| {
                    let z: f64 = StandardNormal.sample(&mut r);
                    x + 0.4 * z
                })
                .collect::<Vec<f64>>()
        })
        .collect();
    // exhaustive search over all 2-partitions (point 0 fixed in part A)
    let mean_of = |mask: u32, side: bool| -> Vec<f64> {
        let members: Vec<&Vec<f64>> = points
            .iter()
            .enumerate()
            .filter(|(i, _)| ((mask >> i) & 1 == 1) == side)
            .map(|(_, p)| p)
            .collect();
        (0..3)
            .map(|j| members.iter().map(|p| p[j]).sum::<f64>() / members.len() as f64)
            .collect()
    };
    let cost = |mask: u32| -> f64 {
        let (a, b) = (mean_of(mask, true), mean_of(mask, false));
        points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let c = if (mask >> i) & 1 == 1 { &a } else { &b };
                p.iter().zip(c).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
            })
            .sum()
    };
    let mut best = (f64::INFINITY, 0u32);
    for mask in (1u32..(1 << 20)).filter(|m| m & 1 == 1 && *m != (1 << 20) - 1) {
        let c = cost(mask);
        if c < best.0 {
            best = (c, mask);
        }
    }
    let want = [mean_of(best.1, true), mean_of(best.1, false)];

    let cb = train_codebook(
        &Matrix::from_rows(&points).unwrap(),
        &KMeansConfig::new(2, 9),
    )
    .unwrap();
    let got: Vec<&[f64]> = (0..2).map(|i| cb.centroid(i)).collect();
    let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-6);
    assert!(
        (close(got[0], &want[0]) && close(got[1], &want[1]))
            || (close(got[0], &want[1]) && close(got[1], &want[0]))
    );
}

#[test]
fn training_selection_counts_by_enumeration() {
    let sets: Vec<DescriptorSet<f64>> = (0..5)
        .map(|i| {
            let descs = (0..12)
                .map(|j| {
                    LocalDescriptor::new(vec![j as f64], 0.0, 0.0, 1.0, 1.0 / (1.0 + j as f64))
                })
                .collect();
            DescriptorSet::new(format!("i{i}"), "c", 1, descs).unwrap()
        })
        .collect();
    let m = select_codebook_training_features(&sets, 10).unwrap();
    let expected: usize = sets.iter().map(|s| s.len().min(10)).sum();
    assert_eq!(m.rows(), expected);
    assert_eq!(m.rows(), 50);
}

#[test]
fn eigen_matches_nalgebra() {
    let mut r = rng(5);
    for n in [2, 5, 8, 13] {
        let a = random_matrix(&mut r, n + 3, n);
        let s = a.transpose().matmul(&a).unwrap();
        let ours = symmetric_eigen(&s).unwrap();
        let mut theirs: Vec<f64> = to_na(&s)
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .collect();
        theirs.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for (x, y) in ours.values.iter().zip(&theirs) {
            assert!((x - y).abs() < 1e-9 * theirs[0].max(1.0));
        }
    }
}

#[test]
fn svd_matches_nalgebra() {
    let mut r = rng(6);
    for (rows, cols) in [(6, 3), (3, 6), (64, 8), (5, 5)] {
        let a = random_matrix(&mut r, rows, cols);
        let ours = svd(&a).unwrap();
        let mut theirs: Vec<f64> = to_na(&a)
            .svd(false, false)
            .singular_values
            .iter()
            .copied()
            .collect();
        theirs.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for (x, y) in ours.s.iter().zip(&theirs) {
            assert!((x - y).abs() < 1e-10 * theirs[0]);
        }
    }
}

#[test]
fn pinv_matches_svd_reconstruction() {
    let mut r = rng(7);
    let g = random_matrix(&mut r, 6, 3);
    let ours = pseudo_inverse(&g, None).unwrap();
    let theirs = to_na(&g).pseudo_inverse(1e-12).unwrap();
    for i in 0..3 {
        for j in 0..6 {
            assert!((ours[(i, j)] - theirs[(i, j)]).abs() < 1e-10);
        }
    }
    let gn = g.frobenius_norm();
    let gp = &ours;
    let g_gp = g.matmul(gp).unwrap();
    let gp_g = gp.matmul(&g).unwrap();
    assert!(g_gp.matmul(&g).unwrap().sub(&g).unwrap().frobenius_norm() <= 1e-6 * gn);
    assert!(gp_g.matmul(gp).unwrap().sub(gp).unwrap().frobenius_norm() <= 1e-6 * gn);
    assert!(g_gp.sub(&g_gp.transpose()).unwrap().frobenius_norm() <= 1e-6 * gn);
    assert!(gp_g.sub(&gp_g.transpose()).unwrap().frobenius_norm() <= 1e-6 * gn);
}

#[test]
fn pinv_mv_repeat_matches_svd_oracle() {
    let mut r = rng(8);
    let mut v = gaussian(&mut r, 9);
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    let group = DescriptorGroup::new(&[v.clone(), v.clone()]).unwrap();
    let got = pinv_mv(&group).unwrap();
    let g = DMatrix::from_columns(&[
        nalgebra::DVector::from_vec(v.clone()),
        nalgebra::DVector::from_vec(v.clone()),
    ]);
    let want =
        g.pseudo_inverse(1e-12).unwrap().transpose() * nalgebra::DVector::from_element(2, 1.0);
    for (a, b) in got.iter().zip(want.iter()) {
        assert!((a - b).abs() < 1e-10);
    }
    let ps = psum(&group);
    let norm = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!((norm(&got) - norm(&ps) / 2.0).abs() < 1e-10);
}

#[test]
fn pca_matches_covariance_eigen_oracle() {
    let mut r = rng(9);
    // anisotropic 8-dim sample
    let scales = [3.0, 2.5, 2.0, 1.5, 1.0, 0.7, 0.4, 0.2];
    let rows: Vec<Vec<f64>> = (0..200)
        .map(|_| {
            gaussian(&mut r, 8)
                .iter()
                .zip(scales)
                .map(|(x, s)| x * s + 1.0)
                .collect()
        })
        .collect();
    let x = Matrix::from_rows(&rows).unwrap();
    let model = fit_pca(&x, 3).unwrap();

    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..8)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n)
        .collect();
    let mut cov = DMatrix::<f64>::zeros(8, 8);
    for row in &rows {
        for i in 0..8 {
            for j in 0..8 {
                cov[(i, j)] += (row[i] - mean[i]) * (row[j] - mean[j]) / (n - 1.0);
            }
        }
    }
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..8).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    for (r_, &k) in order[..3].iter().enumerate() {
        let oracle = eig.eigenvectors.column(k);
        let ours = model.components().row(r_);
        let dot: f64 = ours.iter().zip(oracle.iter()).map(|(a, b)| a * b).sum();
        assert!((dot.abs() - 1.0).abs() < 1e-6);
        assert!((model.explained_variance()[r_] - eig.eigenvalues[k]).abs() < 1e-9);
    }
    for (a, b) in model.mean().iter().zip(&mean) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn pca_projection_inner_products() {
    let mut r = rng(10);
    let x = random_matrix(&mut r, 30, 6);
    let model = fit_pca(&x, 4).unwrap();
    let w = to_na(model.components());
    let mean = nalgebra::DVector::from_column_slice(model.mean());
    let projected: Vec<Vec<f64>> = x
        .row_iter()
        .map(|row| model.project(row).unwrap())
        .collect();
    for i in 0..5 {
        for j in 0..5 {
            let a = &w * (nalgebra::DVector::from_column_slice(x.row(i)) - &mean);
            let b = &w * (nalgebra::DVector::from_column_slice(x.row(j)) - &mean);
            let ours: f64 = projected[i]
                .iter()
                .zip(&projected[j])
                .map(|(p, q)| p * q)
                .sum();
            assert!((ours - a.dot(&b)).abs() < 1e-6);
        }
    }
}

#[test]
fn search_matches_full_sort() {
    let mut r = rng(11);
    let rows: Vec<GlobalDescriptor<f64>> = (0..500)
        .map(|i| GlobalDescriptor::new(format!("r{i}"), gaussian(&mut r, 16), false))
        .collect();
    let index = build_index(&rows, &[]).unwrap();
    for _ in 0..50 {
        let q = gaussian(&mut r, 16);
        let mut all: Vec<(f64, usize)> = rows
            .iter()
            .enumerate()
            .map(|(i, g)| {
                (
                    g.values
                        .iter()
                        .zip(&q)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum(),
                    i,
                )
            })
            .collect();
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let got: Vec<usize> = index.search(&q, 25).unwrap().rows().collect();
        let want: Vec<usize> = all[..25].iter().map(|x| x.1).collect();
        assert_eq!(got, want);
    }
}

#[test]
fn precision_matches_recount() {
    let mut r = rng(12);
    let labels = ["a", "b", "c"];
    for _ in 0..20 {
        let entries: Vec<RankedEntry> = (0..30)
            .map(|i| RankedEntry {
                row: i,
                image_id: format!("i{i}"),
                class_label: labels[r.random_range(0..3)].to_string(),
                distance: i as f64,
            })
            .collect();
        let ranked = RankedList { entries };
        let mut hits = 0;
        for e in &ranked.entries[..20] {
            if e.class_label == "b" {
                hits += 1;
            }
        }
        assert_eq!(
            precision_at_n(&ranked, "b", 20).unwrap(),
            hits as f64 / 20.0
        );
    }
}

#[test]
fn synthetic_reference_dataset_validates() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        seed: 3,
        ..SynthSpec::default()
    };
    let manifest = write_synthetic_dataset(&spec, dir.path()).unwrap();
    assert_eq!(manifest.images.len(), 500);
    let files = std::fs::read_dir(dir.path())
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "rdesc")
        })
        .count();
    assert_eq!(files, 500);
    assert!(validate_manifest(&manifest, dir.path()).is_clean());
    let ds = Dataset::<f32>::load(dir.path()).unwrap();
    assert!(ds.sets.iter().all(|s| s.len() == 300 && s.dim == 64));
}

#[test]
fn duplicate_ids_counted_per_extra_occurrence() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        classes: 2,
        images_per_class: 3,
        descriptors_per_image: 5,
        d: 4,
        ..SynthSpec::default()
    };
    let mut manifest = write_synthetic_dataset(&spec, dir.path()).unwrap();
    let first = manifest.images[0].clone();
    manifest.images.push(first.clone());
    manifest.images.push(first);
    let second = manifest.images[1].clone();
    manifest.images.push(second);
    let mut seen = std::collections::HashSet::new();
    let extras = manifest
        .images
        .iter()
        .filter(|e| !seen.insert(e.id.clone()))
        .count();
    let report = validate_manifest(&manifest, dir.path());
    let dups = report
        .issues
        .iter()
        .filter(|i| matches!(i, ValidationIssue::DuplicateId { .. }))
        .count();
    assert_eq!(dups, extras);
    assert_eq!(dups, 3);
}
