//! Gaussian sibling distributions: fitting, PSD repair, sampling and rank.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::archive::SiblingSet;
use crate::cloud::Cloud;
use crate::error::{Error, Result};

pub const DEFAULT_NUM_SAMPLES: usize = 1000;
pub const DEFAULT_PSD_FLOOR: f64 = 1e-8;
pub const DEFAULT_RANK_TOL: f64 = 1e-10;
const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovMode {
    Diag,
    Full,
}

/// How the second moment is estimated from the siblings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Estimator {
    /// Sample covariance of mean-centred rows, divisor `N − 1`.
    #[serde(rename = "centered")]
    Centered,
    /// `Σ f fᵀ / (N (N − 1))` over the raw, uncentred rows.
    #[serde(rename = "literal")]
    Literal,
}

impl FromStr for CovMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diag" => Ok(CovMode::Diag),
            "full" => Ok(CovMode::Full),
            _ => Err(Error::InvalidArgument(format!("covariance mode {s:?}"))),
        }
    }
}

impl fmt::Display for CovMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CovMode::Diag => "diag",
            CovMode::Full => "full",
        })
    }
}

impl FromStr for Estimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "centered" => Ok(Estimator::Centered),
            "literal" => Ok(Estimator::Literal),
            _ => Err(Error::InvalidArgument(format!("estimator {s:?}"))),
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::Centered => "centered",
            Estimator::Literal => "literal",
        })
    }
}

/// Covariance values, either the diagonal only or the full matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    Diag(DVector<f64>),
    Full(DMatrix<f64>),
}

impl Covariance {
    pub fn mode(&self) -> CovMode {
        match self {
            Covariance::Diag(_) => CovMode::Diag,
            Covariance::Full(_) => CovMode::Full,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Covariance::Diag(v) => v.len(),
            Covariance::Full(m) => m.nrows(),
        }
    }

    pub fn identity(dim: usize, mode: CovMode) -> Self {
        Self::scaled_identity(dim, 1.0, mode)
    }

    pub fn scaled_identity(dim: usize, scale: f64, mode: CovMode) -> Self {
        match mode {
            CovMode::Diag => Covariance::Diag(DVector::from_element(dim, scale)),
            CovMode::Full => Covariance::Full(DMatrix::from_diagonal_element(dim, dim, scale)),
        }
    }

    pub fn diagonal(&self) -> DVector<f64> {
        match self {
            Covariance::Diag(v) => v.clone(),
            Covariance::Full(m) => m.diagonal(),
        }
    }

    pub fn to_full(&self) -> DMatrix<f64> {
        match self {
            Covariance::Diag(v) => DMatrix::from_diagonal(v),
            Covariance::Full(m) => m.clone(),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        match self {
            Covariance::Diag(v) => Covariance::Diag(v * factor),
            Covariance::Full(m) => Covariance::Full(m * factor),
        }
    }

    fn validate(&self) -> Result<()> {
        let values = match self {
            Covariance::Diag(v) => v.as_slice(),
            Covariance::Full(m) => m.as_slice(),
        };
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "covariance".into(),
                index,
            });
        }
        match self {
            Covariance::Diag(v) => {
                if let Some(i) = v.iter().position(|&x| x < 0.0) {
                    return Err(Error::Shape(format!("negative variance at {i}")));
                }
            }
            Covariance::Full(m) => {
                if !m.is_square() {
                    return Err(Error::Shape(format!("covariance is {}×{}", m.nrows(), m.ncols())));
                }
                let scale = m.amax();
                let n = m.nrows();
                for i in 0..n {
                    if m[(i, i)] < 0.0 {
                        return Err(Error::Shape(format!("negative variance at {i}")));
                    }
                    for j in 0..i {
                        if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL * scale {
                            return Err(Error::Shape(format!("covariance not symmetric at ({i}, {j})")));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceRep {
    pub values: Covariance,
    pub estimator: Estimator,
}

impl CovarianceRep {
    pub fn mode(&self) -> CovMode {
        self.values.mode()
    }
}

/// Gaussian summary `N(mean, covariance)` of one word in one corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SiblingDistribution {
    word: String,
    corpus_id: String,
    mean: DVector<f64>,
    covariance: CovarianceRep,
    count: usize,
}

impl SiblingDistribution {
    pub fn new(
        word: impl Into<String>,
        corpus_id: impl Into<String>,
        mean: DVector<f64>,
        covariance: CovarianceRep,
        count: usize,
    ) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::Shape("empty mean vector".into()));
        }
        if covariance.values.dim() != mean.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                found: covariance.values.dim(),
            });
        }
        if let Some(index) = mean.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "mean".into(),
                index,
            });
        }
        covariance.values.validate()?;
        Ok(Self {
            word: word.into(),
            corpus_id: corpus_id.into(),
            mean,
            covariance,
            count,
        })
    }

    pub fn word(&self) -> &str {
        &self.word
    }

    pub fn corpus_id(&self) -> &str {
        &self.corpus_id
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &CovarianceRep {
        &self.covariance
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Same distribution with only the diagonal of the covariance kept.
    pub fn to_diag(&self) -> Self {
        Self {
            covariance: CovarianceRep {
                values: Covariance::Diag(self.covariance.values.diagonal()),
                estimator: self.covariance.estimator,
            },
            ..self.clone()
        }
    }

    /// Same mean, covariance replaced by `values`.
    pub fn with_covariance(&self, values: Covariance) -> Result<Self> {
        Self::new(
            self.word.clone(),
            self.corpus_id.clone(),
            self.mean.clone(),
            CovarianceRep {
                values,
                estimator: self.covariance.estimator,
            },
            self.count,
        )
    }
}

/// Arithmetic mean of the sibling rows, accumulated in `f64`.
pub fn sibling_mean(set: &SiblingSet) -> DVector<f64> {
    let mut mean = DVector::zeros(set.dim());
    for row in set.rows() {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += f64::from(v);
        }
    }
    mean / set.count() as f64
}

/// Fits `N(μ, V)` to a sibling set.
pub fn fit_distribution(
    set: &SiblingSet,
    mode: CovMode,
    estimator: Estimator,
) -> Result<SiblingDistribution> {
    let n = set.count();
    if n < 2 {
        return Err(Error::DegenerateCount {
            word: set.word().to_string(),
            count: n,
        });
    }
    let d = set.dim();
    let mean = sibling_mean(set);

    // Rows of the (optionally centred) design matrix.
    let centre = match estimator {
        Estimator::Centered => Some(&mean),
        Estimator::Literal => None,
    };
    let divisor = match estimator {
        Estimator::Centered => (n - 1) as f64,
        Estimator::Literal => (n * (n - 1)) as f64,
    };
    let shifted = |i: usize, j: usize| -> f64 {
        let v = f64::from(set.row(i)[j]);
        centre.map_or(v, |m| v - m[j])
    };

    let values = match mode {
        CovMode::Diag => {
            let mut diag = DVector::zeros(d);
            for i in 0..n {
                for j in 0..d {
                    let f = shifted(i, j);
                    diag[j] += f * f;
                }
            }
            Covariance::Diag(diag / divisor)
        }
        CovMode::Full => {
            let design = DMatrix::from_fn(n, d, shifted);
            let gram = (design.transpose() * &design) / divisor;
            Covariance::Full(symmetrize(&gram))
        }
    };

    SiblingDistribution::new(
        set.word(),
        set.corpus_id(),
        mean,
        CovarianceRep { values, estimator },
        n,
    )
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// A covariance made PSD together with a square-root factor `L` (`L Lᵀ = V`).
#[derive(Debug, Clone)]
pub struct RepairedCovariance {
    pub covariance: Covariance,
    factor: Factor,
}

#[derive(Debug, Clone)]
enum Factor {
    /// Per-coordinate standard deviations.
    Diag(DVector<f64>),
    Full(DMatrix<f64>),
}

impl RepairedCovariance {
    /// Applies the factor to a row of standard-normal draws, writing `L z`.
    fn transform(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.factor {
            Factor::Diag(sd) => {
                let mut out = z.clone();
                for (mut col, &s) in out.column_iter_mut().zip(sd.iter()) {
                    col *= s;
                }
                out
            }
            Factor::Full(l) => z * l.transpose(),
        }
    }
}

/// Symmetrizes and floors eigenvalues (or diagonal entries) at `floor`.
///
/// A matrix whose spectrum already sits at or above `floor` is returned as
/// its symmetrization, which makes the repair idempotent.
pub fn repair_psd(cov: &Covariance, floor: f64) -> Result<RepairedCovariance> {
    if !(floor > 0.0 && floor.is_finite()) {
        return Err(Error::InvalidArgument(format!("psd floor must be positive, got {floor}")));
    }
    let repaired = match cov {
        Covariance::Diag(v) => {
            let floored = v.map(|x| x.max(floor));
            RepairedCovariance {
                factor: Factor::Diag(floored.map(f64::sqrt)),
                covariance: Covariance::Diag(floored),
            }
        }
        Covariance::Full(m) => {
            let sym = symmetrize(m);
            let dim = sym.nrows();
            // V − floor·I positive definite ⇒ every eigenvalue exceeds the
            // floor, so V is kept and its Cholesky factor suffices.
            let shifted = &sym - DMatrix::from_diagonal_element(dim, dim, floor);
            if Cholesky::new(shifted).is_some() {
                if let Some(chol) = Cholesky::new(sym.clone()) {
                    return Ok(RepairedCovariance {
                        factor: Factor::Full(chol.unpack()),
                        covariance: Covariance::Full(sym),
                    });
                }
            }
            let eig = SymmetricEigen::new(sym.clone());
            let lambda_max = eig.eigenvalues.amax();
            let lambda_min = eig.eigenvalues.min();
            let slack = floor * 1e-3 + 64.0 * f64::EPSILON * dim as f64 * lambda_max;
            let floored = eig.eigenvalues.map(|l| l.max(floor));
            let mut factor = eig.eigenvectors.clone();
            for (mut col, &l) in factor.column_iter_mut().zip(floored.iter()) {
                col *= l.sqrt();
            }
            let covariance = if lambda_min >= floor - slack {
                sym
            } else {
                symmetrize(&(&factor * factor.transpose()))
            };
            RepairedCovariance {
                covariance: Covariance::Full(covariance),
                factor: Factor::Full(factor),
            }
        }
    };
    let values = match &repaired.covariance {
        Covariance::Diag(v) => v.as_slice(),
        Covariance::Full(m) => m.as_slice(),
    };
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "repaired covariance".into(),
            index,
        });
    }
    Ok(repaired)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub num_samples: usize,
    pub seed: u64,
    pub psd_floor: f64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            num_samples: DEFAULT_NUM_SAMPLES,
            seed: 0,
            psd_floor: DEFAULT_PSD_FLOOR,
        }
    }
}

/// RNG stream seed for one word in one corpus: `seed ⊕ hash(word, corpus)`.
///
/// Independent of scheduling order. Two corpora sharing an id draw the
/// same standard-normal stream for a word.
pub fn stream_seed(seed: u64, word: &str, corpus_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(word.as_bytes());
    h.update([0u8]);
    h.update(corpus_id.as_bytes());
    let digest = h.finalize();
    seed ^ u64::from_be_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Draws `cfg.num_samples` i.i.d. rows from the PSD-repaired distribution.
pub fn sample_siblings(dist: &SiblingDistribution, cfg: &SampleConfig) -> Result<Cloud> {
    let repaired = repair_psd(&dist.covariance.values, cfg.psd_floor)?;
    sample_with(dist, &repaired, cfg)
}

pub(crate) fn sample_with(
    dist: &SiblingDistribution,
    repaired: &RepairedCovariance,
    cfg: &SampleConfig,
) -> Result<Cloud> {
    if cfg.num_samples == 0 {
        return Err(Error::InvalidArgument("num_samples must be at least 1".into()));
    }
    let d = dist.dim();
    let m = cfg.num_samples;
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, &dist.word, &dist.corpus_id));
    let mut draws = Vec::with_capacity(m * d);
    draws.extend((0..m * d).map(|_| -> f64 { StandardNormal.sample(&mut rng) }));
    let z = DMatrix::from_row_slice(m, d, &draws);
    let mut x = repaired.transform(&z);
    for (mut col, &mu) in x.column_iter_mut().zip(dist.mean.iter()) {
        col.add_scalar_mut(mu);
    }
    Ok(Cloud::from_matrix(&x))
}

/// Numerical rank: singular values above `tol × largest`.
///
/// For a diagonal covariance the singular values are the entries themselves.
pub fn covariance_rank(dist: &SiblingDistribution, tol: f64) -> usize {
    let singular: Vec<f64> = match &dist.covariance.values {
        Covariance::Diag(v) => v.iter().map(|x| x.abs()).collect(),
        Covariance::Full(m) => SymmetricEigen::new(symmetrize(m))
            .eigenvalues
            .iter()
            .map(|x| x.abs())
            .collect(),
    };
    let largest = singular.iter().cloned().fold(0.0, f64::max);
    if largest == 0.0 {
        return 0;
    }
    singular.iter().filter(|&&s| s > tol * largest).count()
}
