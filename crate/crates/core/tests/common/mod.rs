#![allow(dead_code)]

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use siblingshift::{write_archive, LayerMode, MeasureKind, SiblingSet};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn normal_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| normal_vec(rng, d, 1.0)).collect()
}

/// Textbook formulas, written independently of the library kernels.
pub fn naive_distance(kind: MeasureKind, a: &[f64], b: &[f64]) -> f64 {
    let diffs = a.iter().zip(b).map(|(x, y)| (x - y).abs());
    match kind {
        MeasureKind::BrayCurtis => {
            let num: f64 = diffs.sum();
            let den: f64 = a.iter().zip(b).map(|(x, y)| (x + y).abs()).sum();
            num / den
        }
        MeasureKind::Canberra => a
            .iter()
            .zip(b)
            .map(|(x, y)| {
                let den = x.abs() + y.abs();
                if den == 0.0 {
                    0.0
                } else {
                    (x - y).abs() / den
                }
            })
            .sum(),
        MeasureKind::Chebyshev => diffs.fold(0.0, f64::max),
        MeasureKind::CityBlock => diffs.sum(),
        MeasureKind::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
        MeasureKind::Cosine => naive_cosine(a, b),
        MeasureKind::Correlation => {
            let ma = a.iter().sum::<f64>() / a.len() as f64;
            let mb = b.iter().sum::<f64>() / b.len() as f64;
            let ca: Vec<f64> = a.iter().map(|x| x - ma).collect();
            let cb: Vec<f64> = b.iter().map(|x| x - mb).collect();
            naive_cosine(&ca, &cb)
        }
        other => panic!("{other} is not a distance"),
    }
}

fn naive_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    1.0 - dot / (na * nb)
}

pub fn naive_apd(kind: MeasureKind, c1: &[Vec<f64>], c2: &[Vec<f64>]) -> f64 {
    let mut sum = 0.0;
    for a in c1 {
        for b in c2 {
            sum += naive_distance(kind, a, b);
        }
    }
    sum / (c1.len() * c2.len()) as f64
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    if want == 0.0 {
        got.abs()
    } else {
        ((got - want) / want).abs()
    }
}

pub fn to_f32_rows(rows: &[Vec<f64>]) -> Vec<Vec<f32>> {
    rows.iter().map(|r| r.iter().map(|&v| v as f32).collect()).collect()
}

pub fn sibling_set(word: &str, corpus: &str, rows: &[Vec<f64>]) -> SiblingSet {
    SiblingSet::from_rows(word, corpus, LayerMode::Last, &to_f32_rows(rows)).unwrap()
}

/// Writes `(word, rows)` pairs as an archive under `dir`.
pub fn archive_from(dir: &Path, corpus: &str, words: &[(String, Vec<Vec<f64>>)]) {
    let sets: Vec<SiblingSet> = words.iter().map(|(w, rows)| sibling_set(w, corpus, rows)).collect();
    write_archive(&sets, dir).unwrap();
}

/// Average ranks (1 = smallest), by direct counting.
pub fn naive_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|x| {
            let less = v.iter().filter(|y| *y < x).count() as f64;
            let equal = v.iter().filter(|y| *y == x).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn naive_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    sxy / (sxx * syy).sqrt()
}

pub fn naive_spearman(x: &[f64], y: &[f64]) -> f64 {
    naive_pearson(&naive_ranks(x), &naive_ranks(y))
}
