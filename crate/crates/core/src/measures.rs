//! Closed-form Gaussian divergences and vector distances.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::distribution::{repair_psd, Covariance, SiblingDistribution};
use crate::error::{Error, Result};

/// A semantic-variation measure: two divergences (three directions) and
/// seven point distances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasureKind {
    /// KL(corpus 1 ‖ corpus 2)
    Kl12,
    /// KL(corpus 2 ‖ corpus 1)
    Kl21,
    Jeffreys,
    BrayCurtis,
    Canberra,
    Chebyshev,
    CityBlock,
    Correlation,
    Cosine,
    Euclidean,
}

impl MeasureKind {
    pub const ALL: [MeasureKind; 10] = [
        MeasureKind::Kl12,
        MeasureKind::Kl21,
        MeasureKind::Jeffreys,
        MeasureKind::BrayCurtis,
        MeasureKind::Canberra,
        MeasureKind::Chebyshev,
        MeasureKind::CityBlock,
        MeasureKind::Correlation,
        MeasureKind::Cosine,
        MeasureKind::Euclidean,
    ];

    pub const DISTANCES: [MeasureKind; 7] = [
        MeasureKind::BrayCurtis,
        MeasureKind::Canberra,
        MeasureKind::Chebyshev,
        MeasureKind::CityBlock,
        MeasureKind::Correlation,
        MeasureKind::Cosine,
        MeasureKind::Euclidean,
    ];

    pub fn is_divergence(self) -> bool {
        matches!(self, MeasureKind::Kl12 | MeasureKind::Kl21 | MeasureKind::Jeffreys)
    }

    /// Lowercase command-line token.
    pub fn token(self) -> &'static str {
        match self {
            MeasureKind::Kl12 => "kl12",
            MeasureKind::Kl21 => "kl21",
            MeasureKind::Jeffreys => "jeffreys",
            MeasureKind::BrayCurtis => "braycurtis",
            MeasureKind::Canberra => "canberra",
            MeasureKind::Chebyshev => "chebyshev",
            MeasureKind::CityBlock => "cityblock",
            MeasureKind::Correlation => "correlation",
            MeasureKind::Cosine => "cosine",
            MeasureKind::Euclidean => "euclidean",
        }
    }

    /// Human-readable name used in result tables.
    pub fn label(self) -> &'static str {
        match self {
            MeasureKind::Kl12 => "KL(C1||C2)",
            MeasureKind::Kl21 => "KL(C2||C1)",
            MeasureKind::Jeffreys => "Jeff(C1||C2)",
            MeasureKind::BrayCurtis => "Bray-Curtis",
            MeasureKind::Canberra => "Canberra",
            MeasureKind::Chebyshev => "Chebyshev",
            MeasureKind::CityBlock => "City Block",
            MeasureKind::Correlation => "Correlation",
            MeasureKind::Cosine => "Cosine",
            MeasureKind::Euclidean => "Euclidean",
        }
    }
}

impl fmt::Display for MeasureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for MeasureKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        MeasureKind::ALL
            .into_iter()
            .find(|m| m.token() == s)
            .ok_or_else(|| Error::UnknownMeasure(s.to_string()))
    }
}

/// Distance between two vectors. Divergence kinds are rejected.
pub fn distance(kind: MeasureKind, w1: &[f64], w2: &[f64]) -> Result<f64> {
    if kind.is_divergence() {
        return Err(Error::Incompatible(format!("{kind} is a divergence, not a point distance")));
    }
    if w1.len() != w2.len() {
        return Err(Error::DimensionMismatch {
            expected: w1.len(),
            found: w2.len(),
        });
    }
    if let Some(index) = w1.iter().chain(w2).position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "distance input".into(),
            index: index % w1.len().max(1),
        });
    }
    Ok(distance_unchecked(kind, w1, w2))
}

/// Same as [`distance`] without argument checks. `kind` must be a distance.
pub(crate) fn distance_unchecked(kind: MeasureKind, w1: &[f64], w2: &[f64]) -> f64 {
    match kind {
        MeasureKind::BrayCurtis => bray_curtis(w1, w2),
        MeasureKind::Canberra => canberra(w1, w2),
        MeasureKind::Chebyshev => chebyshev(w1, w2),
        MeasureKind::CityBlock => city_block(w1, w2),
        MeasureKind::Correlation => {
            let (c1, n1) = centred(w1);
            let (c2, n2) = centred(w2);
            angular(dot(&c1, &c2), n1, n2)
        }
        MeasureKind::Cosine => angular(dot(w1, w2), norm(w1), norm(w2)),
        MeasureKind::Euclidean => euclidean(w1, w2),
        MeasureKind::Kl12 | MeasureKind::Kl21 | MeasureKind::Jeffreys => {
            unreachable!("divergence passed as point distance")
        }
    }
}

const LANES: usize = 4;

/// Σ f(a_i, b_i) with `LANES` interleaved accumulators; the summation order
/// is fixed, so results are reproducible.
#[inline(always)]
fn lane_sum(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> f64 {
    let mut acc = [0.0; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..LANES {
            acc[k] += f(x[k], y[k]);
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += f(*x, *y);
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn bray_curtis(a: &[f64], b: &[f64]) -> f64 {
    let num = lane_sum(a, b, |x, y| (x - y).abs());
    let den = lane_sum(a, b, |x, y| (x + y).abs());
    if den == 0.0 {
        return if num == 0.0 { 0.0 } else { 1.0 };
    }
    num / den
}

fn canberra(a: &[f64], b: &[f64]) -> f64 {
    lane_sum(a, b, |x, y| {
        let den = x.abs() + y.abs();
        if den == 0.0 {
            0.0
        } else {
            (x - y).abs() / den
        }
    })
}

fn chebyshev(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..LANES {
            let d = (x[k] - y[k]).abs();
            acc[k] = if d > acc[k] { d } else { acc[k] };
        }
    }
    ra.iter()
        .zip(rb)
        .map(|(x, y)| (x - y).abs())
        .chain(acc)
        .fold(0.0, f64::max)
}

fn city_block(a: &[f64], b: &[f64]) -> f64 {
    lane_sum(a, b, |x, y| (x - y).abs())
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    lane_sum(a, b, |x, y| (x - y) * (x - y)).sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    lane_sum(a, b, |x, y| x * y)
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Subtracts the mean over coordinates; returns the centred vector and its norm.
pub(crate) fn centred(a: &[f64]) -> (Vec<f64>, f64) {
    let mean = a.iter().sum::<f64>() / a.len() as f64;
    let c: Vec<f64> = a.iter().map(|x| x - mean).collect();
    let n = norm(&c);
    (c, n)
}

/// `1 − dot / (n1 n2)` with zero-norm conventions: one zero norm gives 1,
/// both give 0.
pub(crate) fn angular(dot: f64, n1: f64, n2: f64) -> f64 {
    match (n1 == 0.0, n2 == 0.0) {
        (true, true) => 0.0,
        (true, false) | (false, true) => 1.0,
        (false, false) => (1.0 - dot / (n1 * n2)).clamp(0.0, 2.0),
    }
}

/// KL(p ‖ q) between two Gaussians in closed form.
///
/// Both covariances are PSD-repaired at `psd_floor` first. Two diagonal
/// inputs use the O(d) path; otherwise the full matrices are factorized and
/// every inverse is applied through triangular solves.
pub fn kl_divergence(
    p: &SiblingDistribution,
    q: &SiblingDistribution,
    psd_floor: f64,
) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            found: q.dim(),
        });
    }
    let d = p.dim() as f64;
    let delta: DVector<f64> = q.mean() - p.mean();
    let v1 = repair_psd(&p.covariance().values, psd_floor)?.covariance;
    let v2 = repair_psd(&q.covariance().values, psd_floor)?.covariance;

    let kl = match (&v1, &v2) {
        (Covariance::Diag(a), Covariance::Diag(b)) => {
            let mut trace = 0.0;
            let mut log_ratio = 0.0;
            let mut quad = 0.0;
            for i in 0..a.len() {
                trace += a[i] / b[i];
                log_ratio += a[i].ln() - b[i].ln();
                quad += delta[i] * delta[i] / b[i];
            }
            0.5 * (trace - d - log_ratio + quad)
        }
        _ => {
            let a = v1.to_full();
            let b = v2.to_full();
            let chol_a = cholesky(&a, "first covariance")?;
            let chol_b = cholesky(&b, "second covariance")?;
            let trace = chol_b.solve(&a).trace();
            let log_ratio = log_det(&chol_a) - log_det(&chol_b);
            let y = chol_b
                .l_dirty()
                .solve_lower_triangular(&delta)
                .ok_or_else(|| Error::NotInvertible("second covariance".into()))?;
            0.5 * (trace - d - log_ratio + y.norm_squared())
        }
    };
    if !kl.is_finite() {
        return Err(Error::NotInvertible(format!("KL evaluated to {kl}")));
    }
    Ok(kl.max(0.0))
}

/// Jeffrey's divergence `½ KL(p‖q) + ½ KL(q‖p)`.
pub fn jeffreys_divergence(
    p: &SiblingDistribution,
    q: &SiblingDistribution,
    psd_floor: f64,
) -> Result<f64> {
    Ok(0.5 * kl_divergence(p, q, psd_floor)? + 0.5 * kl_divergence(q, p, psd_floor)?)
}

/// Evaluates a divergence kind on the pair (corpus 1, corpus 2).
pub fn divergence(
    kind: MeasureKind,
    p: &SiblingDistribution,
    q: &SiblingDistribution,
    psd_floor: f64,
) -> Result<f64> {
    match kind {
        MeasureKind::Kl12 => kl_divergence(p, q, psd_floor),
        MeasureKind::Kl21 => kl_divergence(q, p, psd_floor),
        MeasureKind::Jeffreys => jeffreys_divergence(p, q, psd_floor),
        other => Err(Error::Incompatible(format!("{other} is not a divergence"))),
    }
}

fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    Cholesky::new(m.clone()).ok_or_else(|| Error::NotInvertible(what.to_string()))
}

fn log_det(c: &Cholesky<f64, nalgebra::Dyn>) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>()
}
