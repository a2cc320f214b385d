mod common;

use std::fs;

use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use siblingshift::{
    distance, fit_distribution, kl_divergence, repair_psd, sample_siblings, score_word, spearman,
    write_archive, Archive, CloudSource, CovMode, Covariance, CovarianceRep, Error, Estimator,
    LayerMode, MeasureKind, SampleConfig, ScoreConfig, SiblingDistribution, SiblingSet, Variant,
};
use tempfile::TempDir;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-10.0f64..10.0, cols), rows)
}

fn distance_kind() -> impl Strategy<Value = MeasureKind> {
    prop::sample::select(MeasureKind::DISTANCES.to_vec())
}

fn diag_dist(mean: Vec<f64>, var: Vec<f64>) -> SiblingDistribution {
    SiblingDistribution::new(
        "w",
        "c",
        DVector::from_vec(mean),
        CovarianceRep {
            values: Covariance::Diag(DVector::from_vec(var)),
            estimator: Estimator::Centered,
        },
        2,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn archive_round_trip_is_bitwise(
        data in prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 1..60),
        dim in 1usize..6,
    ) {
        let n = data.len() / dim;
        prop_assume!(n >= 1);
        let data = data[..n * dim].to_vec();
        let set = SiblingSet::new("word", "corpus", LayerMode::MeanLastFour, dim, data.clone()).unwrap();
        let dir = TempDir::new().unwrap();
        write_archive(std::slice::from_ref(&set), dir.path()).unwrap();
        let back = Archive::open(dir.path()).unwrap().read("word").unwrap();
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(back.as_slice()), bits(&data));
        prop_assert_eq!(back.count(), n);
        prop_assert_eq!(back.layer_mode(), &LayerMode::MeanLastFour);
    }

    #[test]
    fn corrupted_payload_is_rejected(rows in matrix(3, 4), at in 0usize..48) {
        let dir = TempDir::new().unwrap();
        write_archive(&[sibling_set("w", "c", &rows)], dir.path()).unwrap();
        let path = dir.path().join("w.f32");
        let mut bytes = fs::read(&path).unwrap();
        bytes[at] ^= 0x40;
        fs::write(&path, &bytes).unwrap();
        let err = Archive::open(dir.path()).unwrap().read("w").unwrap_err();
        prop_assert!(matches!(err, Error::ChecksumMismatch { .. }), "{err}");
    }

    #[test]
    fn fit_is_invariant_under_row_permutation(rows in matrix(6, 3), perm in Just((0..6).collect::<Vec<usize>>()).prop_shuffle()) {
        let permuted: Vec<Vec<f64>> = perm.iter().map(|&i| rows[i].clone()).collect();
        let a = fit_distribution(&sibling_set("w", "c", &rows), CovMode::Full, Estimator::Centered).unwrap();
        let b = fit_distribution(&sibling_set("w", "c", &permuted), CovMode::Full, Estimator::Centered).unwrap();
        prop_assert!((a.mean() - b.mean()).amax() <= 1e-12);
        let diff = a.covariance().values.to_full() - b.covariance().values.to_full();
        prop_assert!(diff.amax() <= 1e-11);
    }

    #[test]
    fn angular_measures_ignore_positive_scaling(
        v in matrix(2, 8),
        s in 0.01f64..100.0,
    ) {
        for kind in [MeasureKind::Cosine, MeasureKind::Correlation] {
            let scaled: Vec<f64> = v[0].iter().map(|x| x * s).collect();
            let a = distance(kind, &v[0], &v[1]).unwrap();
            let b = distance(kind, &scaled, &v[1]).unwrap();
            prop_assert!((a - b).abs() <= 1e-9, "{kind}: {a} vs {b}");
        }
    }

    #[test]
    fn distances_are_nonnegative_and_symmetric(kind in distance_kind(), v in matrix(2, 5)) {
        let ab = distance(kind, &v[0], &v[1]).unwrap();
        let ba = distance(kind, &v[1], &v[0]).unwrap();
        prop_assert!(ab >= 0.0 && ab.is_finite());
        prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1.0));
        prop_assert!((ab - naive_distance(kind, &v[0], &v[1])).abs() <= 1e-9 * ab.max(1.0));
    }

    #[test]
    fn spearman_ignores_monotone_transforms(
        x in prop::collection::vec(-50.0f64..50.0, 3..30),
        seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        let y: Vec<f64> = x.iter().map(|_| normal_vec(&mut r, 1, 1.0)[0]).collect();
        let base = spearman(&x, &y).unwrap();
        let cubed: Vec<f64> = x.iter().map(|v| v.powi(3) + 2.0).collect();
        let exp: Vec<f64> = y.iter().map(|v| v.exp()).collect();
        prop_assert!((spearman(&cubed, &exp).unwrap() - base).abs() <= 1e-12);
        prop_assert!((spearman(&y, &x).unwrap() - base).abs() <= 1e-12);
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        prop_assert!((spearman(&x, &neg).unwrap() + base).abs() <= 1e-12);
        prop_assert!((base - naive_spearman(&x, &y)).abs() <= 1e-12);
    }

    #[test]
    fn kl_is_nonnegative_and_zero_on_itself(
        m1 in prop::collection::vec(-3.0f64..3.0, 4),
        m2 in prop::collection::vec(-3.0f64..3.0, 4),
        v1 in prop::collection::vec(0.05f64..5.0, 4),
        v2 in prop::collection::vec(0.05f64..5.0, 4),
    ) {
        let p = diag_dist(m1, v1);
        let q = diag_dist(m2, v2);
        prop_assert!(kl_divergence(&p, &q, 1e-8).unwrap() >= 0.0);
        prop_assert!(kl_divergence(&p, &p, 1e-8).unwrap() <= 1e-10);
        let full = |d: &SiblingDistribution| {
            d.with_covariance(Covariance::Full(d.covariance().values.to_full())).unwrap()
        };
        let diag = kl_divergence(&p, &q, 1e-8).unwrap();
        let dense = kl_divergence(&full(&p), &full(&q), 1e-8).unwrap();
        prop_assert!((diag - dense).abs() <= 1e-9 * diag.max(1.0));
    }

    #[test]
    fn psd_repair_is_idempotent(rows in matrix(3, 5)) {
        let d = fit_distribution(&sibling_set("w", "c", &rows), CovMode::Full, Estimator::Centered).unwrap();
        let once = repair_psd(&d.covariance().values, 1e-6).unwrap().covariance;
        let twice = repair_psd(&once, 1e-6).unwrap().covariance;
        let diff = once.to_full() - twice.to_full();
        prop_assert!(diff.amax() <= 1e-12 * once.to_full().amax().max(1.0));
    }

    #[test]
    fn raw_clouds_score_symmetrically(kind in distance_kind(), a in matrix(4, 3), b in matrix(5, 3)) {
        let s1 = sibling_set("w", "c1", &a);
        let s2 = sibling_set("w", "c2", &b);
        let cfg = ScoreConfig { measure: kind, cloud_source: CloudSource::RawApd, ..Default::default() };
        let ab = score_word(&s1, &s2, &cfg).unwrap().scores[0];
        let ba = score_word(&s2, &s1, &cfg).unwrap().scores[0];
        prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1.0));
    }
}

#[test]
fn kl_directions_swap_with_the_corpora() {
    let mut r = rng(8);
    let a = normal_rows(&mut r, 30, 4);
    let b: Vec<Vec<f64>> = normal_rows(&mut r, 30, 4).into_iter().map(|v| v.iter().map(|x| 2.0 * x + 1.0).collect()).collect();
    let s1 = sibling_set("w", "c1", &a);
    let s2 = sibling_set("w", "c2", &b);
    let cfg = |m| ScoreConfig { measure: m, ..Default::default() };
    let kl12 = score_word(&s1, &s2, &cfg(MeasureKind::Kl12)).unwrap().scores[0];
    let kl21_swapped = score_word(&s2, &s1, &cfg(MeasureKind::Kl21)).unwrap().scores[0];
    assert_eq!(kl12.to_bits(), kl21_swapped.to_bits());
}

#[test]
fn identity_covariance_ignores_spread() {
    let mut r = rng(9);
    let centre = normal_vec(&mut r, 6, 1.0);
    let base = normal_rows(&mut r, 40, 6);
    let spread = |k: f64| -> Vec<Vec<f64>> {
        base.iter().map(|row| row.iter().zip(&centre).map(|(x, c)| c + k * x).collect()).collect()
    };
    let other = sibling_set("w", "c2", &normal_rows(&mut r, 40, 6));
    let cfg = ScoreConfig { variant: Variant::IdentityCov, ..Default::default() };
    // the mean moves by k · mean(base) so pin it back before comparing
    let pinned = |k: f64| {
        let rows = spread(k);
        let n = rows.len() as f64;
        let m: Vec<f64> = (0..6).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| (0..6).map(|j| r[j] - m[j] + centre[j]).collect()).collect();
        sibling_set("w", "c1", &rows)
    };
    let narrow = score_word(&pinned(0.5), &other, &cfg).unwrap().scores[0];
    let wide = score_word(&pinned(4.0), &other, &cfg).unwrap().scores[0];
    assert!((narrow - wide).abs() <= 1e-5 * narrow, "{narrow} vs {wide}");
    let full = ScoreConfig::default();
    let narrow = score_word(&pinned(0.5), &other, &full).unwrap().scores[0];
    let wide = score_word(&pinned(4.0), &other, &full).unwrap().scores[0];
    assert!(wide > narrow);
}

#[test]
fn samples_follow_the_fitted_gaussian() {
    let mean = DVector::from_vec(vec![2.0 / 3.0, 2.0 / 3.0]);
    let cov = DMatrix::from_row_slice(2, 2, &[4.0 / 3.0, -2.0 / 3.0, -2.0 / 3.0, 4.0 / 3.0]);
    let dist = SiblingDistribution::new(
        "cell",
        "c",
        mean.clone(),
        CovarianceRep { values: Covariance::Full(cov.clone()), estimator: Estimator::Centered },
        3,
    )
    .unwrap();
    let cloud = sample_siblings(&dist, &SampleConfig { num_samples: 100_000, seed: 5, ..Default::default() }).unwrap();
    let n = cloud.len() as f64;
    let mut m = [0.0; 2];
    for row in cloud.rows() {
        m[0] += row[0] / n;
        m[1] += row[1] / n;
    }
    let mut c = [[0.0; 2]; 2];
    for row in cloud.rows() {
        for i in 0..2 {
            for j in 0..2 {
                c[i][j] += (row[i] - m[i]) * (row[j] - m[j]) / (n - 1.0);
            }
        }
    }
    for i in 0..2 {
        assert!((m[i] - mean[i]).abs() < 0.05, "mean {m:?}");
        for j in 0..2 {
            assert!((c[i][j] - cov[(i, j)]).abs() < 0.05, "cov {c:?}");
        }
    }
}

#[test]
fn sample_squared_norms_match_the_trace() {
    let d = 64;
    let scale = 2.5;
    let dist = diag_dist(vec![0.0; d], vec![scale; d]);
    let cloud = sample_siblings(&dist, &SampleConfig { num_samples: 2000, seed: 1, ..Default::default() }).unwrap();
    let avg = cloud.rows().map(|r| r.iter().map(|x| x * x).sum::<f64>()).sum::<f64>() / cloud.len() as f64;
    assert!(rel_err(avg, scale * d as f64) < 0.05, "{avg}");
}

#[test]
fn degenerate_covariance_samples_collapse_to_the_mean() {
    let rows = vec![vec![1.0, -2.0, 0.5]; 4];
    let dist = fit_distribution(&sibling_set("w", "c", &rows), CovMode::Full, Estimator::Centered).unwrap();
    let cloud = sample_siblings(&dist, &SampleConfig { num_samples: 3, ..Default::default() }).unwrap();
    for row in cloud.rows() {
        for (x, m) in row.iter().zip(dist.mean().iter()) {
            assert!((x - m).abs() <= 10.0 * 1e-8f64.sqrt());
        }
    }
}

#[test]
fn truncated_payload_is_reported() {
    let dir = TempDir::new().unwrap();
    let rows = normal_rows(&mut rng(2), 5, 3);
    write_archive(&[sibling_set("w", "c", &rows)], dir.path()).unwrap();
    let path = dir.path().join("w.f32");
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
    let err = Archive::open(dir.path()).unwrap().read("w").unwrap_err();
    assert!(matches!(err, Error::Truncated { expected: 60, found: 56, .. }), "{err}");
}
