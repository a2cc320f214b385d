//! Per-word semantic-variation scores between two corpora.
//!
//! Distance measures average ψ over the full cross product of two clouds
//! (sampled from the fitted Gaussians, or the raw siblings). Divergence
//! measures are evaluated in closed form on the fitted pair.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::archive::{Archive, SiblingSet};
use crate::cloud::Cloud;
use crate::distribution::{
    fit_distribution, repair_psd, sample_with, sibling_mean, CovMode, Covariance, CovarianceRep,
    Estimator, SampleConfig, SiblingDistribution,
};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::measures::{angular, centred, distance_unchecked, divergence, dot, norm, MeasureKind};

/// Where the point clouds for distance measures come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CloudSource {
    /// `num_samples` draws from each fitted Gaussian.
    #[serde(rename = "sampled")]
    Sampled,
    /// The actual sibling embeddings (average pairwise distance).
    #[serde(rename = "raw-apd")]
    RawApd,
}

/// Ablation variants of the scoring pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "full")]
    FullPipeline,
    /// ψ(μ₁, μ₂) on the mean vectors only.
    #[serde(rename = "mean-only")]
    MeanOnly,
    /// Sample from `N(μ, I)` instead of `N(μ, V)`.
    #[serde(rename = "identity-cov")]
    IdentityCov,
}

/// Summation order for the pairwise average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Accumulation {
    /// Each row of the first cloud is summed independently (possibly in
    /// parallel); row sums are then added in row order.
    RowBlocked,
    /// One running sum in row-major pair order, on the calling thread.
    Sequential,
}

macro_rules! token_enum {
    ($ty:ty, $what:literal, { $($variant:path => $tok:literal),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($tok => Ok($variant),)+
                    _ => Err(Error::InvalidArgument(format!(concat!($what, " {:?}"), s))),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self {
                    $($variant => $tok,)+
                })
            }
        }
    };
}

token_enum!(CloudSource, "cloud source", {
    CloudSource::Sampled => "sampled",
    CloudSource::RawApd => "raw-apd",
});

token_enum!(Variant, "variant", {
    Variant::FullPipeline => "full",
    Variant::MeanOnly => "mean-only",
    Variant::IdentityCov => "identity-cov",
});

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub measure: MeasureKind,
    pub cloud_source: CloudSource,
    pub sample: SampleConfig,
    pub cov_mode: CovMode,
    pub estimator: Estimator,
    pub variant: Variant,
    /// Evaluate divergences on the full covariance instead of its diagonal.
    #[serde(default)]
    pub full_divergence: bool,
    pub accumulation: Accumulation,
    /// Does not affect results.
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            measure: MeasureKind::Chebyshev,
            cloud_source: CloudSource::Sampled,
            sample: SampleConfig::default(),
            cov_mode: CovMode::Full,
            estimator: Estimator::Centered,
            variant: Variant::FullPipeline,
            full_divergence: false,
            accumulation: Accumulation::RowBlocked,
            execution: Execution::default(),
        }
    }
}

/// Average of ψ over every pair in `c1 × c2`.
pub fn average_pairwise_distance(
    kind: MeasureKind,
    c1: &Cloud,
    c2: &Cloud,
    accumulation: Accumulation,
    execution: Execution,
) -> Result<f64> {
    if kind.is_divergence() {
        return Err(Error::Incompatible(format!("{kind} has no pairwise form")));
    }
    if c1.dim() != c2.dim() {
        return Err(Error::DimensionMismatch {
            expected: c1.dim(),
            found: c2.dim(),
        });
    }
    if c1.is_empty() || c2.is_empty() {
        return Err(Error::Shape("pairwise average over an empty cloud".into()));
    }

    let left = Prepared::new(kind, c1);
    let right = Prepared::new(kind, c2);
    let pairs = (c1.len() * c2.len()) as f64;

    let total = match accumulation {
        Accumulation::Sequential => {
            let mut sum = 0.0;
            for i in 0..c1.len() {
                for j in 0..c2.len() {
                    sum += left.distance(kind, i, &right, j);
                }
            }
            sum
        }
        Accumulation::RowBlocked => execution
            .map_range(c1.len(), |i| {
                let mut row = 0.0;
                for j in 0..c2.len() {
                    row += left.distance(kind, i, &right, j);
                }
                row
            })
            .into_iter()
            .sum(),
    };
    Ok(total / pairs)
}

/// A cloud with per-row quantities cached for the angular measures.
struct Prepared<'a> {
    cloud: &'a Cloud,
    centred: Option<Vec<f64>>,
    norms: Vec<f64>,
}

impl<'a> Prepared<'a> {
    fn new(kind: MeasureKind, cloud: &'a Cloud) -> Self {
        match kind {
            MeasureKind::Cosine => Self {
                cloud,
                centred: None,
                norms: cloud.rows().map(norm).collect(),
            },
            MeasureKind::Correlation => {
                let mut data = Vec::with_capacity(cloud.as_slice().len());
                let mut norms = Vec::with_capacity(cloud.len());
                for row in cloud.rows() {
                    let (c, n) = centred(row);
                    data.extend(c);
                    norms.push(n);
                }
                Self {
                    cloud,
                    centred: Some(data),
                    norms,
                }
            }
            _ => Self {
                cloud,
                centred: None,
                norms: Vec::new(),
            },
        }
    }

    fn row(&self, i: usize) -> &[f64] {
        match &self.centred {
            Some(c) => {
                let d = self.cloud.dim();
                &c[i * d..(i + 1) * d]
            }
            None => self.cloud.row(i),
        }
    }

    #[inline]
    fn distance(&self, kind: MeasureKind, i: usize, other: &Prepared<'_>, j: usize) -> f64 {
        match kind {
            MeasureKind::Cosine | MeasureKind::Correlation => {
                angular(dot(self.row(i), other.row(j)), self.norms[i], other.norms[j])
            }
            _ => distance_unchecked(kind, self.cloud.row(i), other.cloud.row(j)),
        }
    }
}

/// Scores of one word under one or more measures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordScore {
    pub scores: Vec<f64>,
    pub n1: usize,
    pub n2: usize,
    pub warnings: Vec<String>,
}

/// Scores a word from its two sibling sets under `cfg.measure`.
pub fn score_word(s1: &SiblingSet, s2: &SiblingSet, cfg: &ScoreConfig) -> Result<WordScore> {
    score_word_measures(s1, s2, &[cfg.measure], cfg)
}

/// Scores a word under several measures, sharing the fitted distributions
/// and sampled clouds between them.
pub fn score_word_measures(
    s1: &SiblingSet,
    s2: &SiblingSet,
    measures: &[MeasureKind],
    cfg: &ScoreConfig,
) -> Result<WordScore> {
    if s1.dim() != s2.dim() {
        return Err(Error::DimensionMismatch {
            expected: s1.dim(),
            found: s2.dim(),
        });
    }
    check_compatible(measures, cfg)?;

    let mut warnings = Vec::new();
    let scores = match cfg.variant {
        Variant::MeanOnly => {
            let m1 = sibling_mean(s1);
            let m2 = sibling_mean(s2);
            measures
                .iter()
                .map(|&k| Ok(distance_unchecked(k, m1.as_slice(), m2.as_slice())))
                .collect::<Result<Vec<_>>>()?
        }
        Variant::FullPipeline | Variant::IdentityCov => {
            let needs_fit = cfg.cloud_source == CloudSource::Sampled
                || measures.iter().any(|m| m.is_divergence());
            let fitted = if needs_fit {
                Some((
                    fit_or_floor(s1, cfg, &mut warnings)?,
                    fit_or_floor(s2, cfg, &mut warnings)?,
                ))
            } else {
                None
            };

            let clouds = match (cfg.cloud_source, &fitted) {
                (_, _) if measures.iter().all(|m| m.is_divergence()) => None,
                (CloudSource::RawApd, _) => Some((Cloud::from(s1), Cloud::from(s2))),
                (CloudSource::Sampled, Some((d1, d2))) => Some((sample(d1, cfg)?, sample(d2, cfg)?)),
                (CloudSource::Sampled, None) => unreachable!("sampling requires fitted distributions"),
            };

            let mut scores = Vec::with_capacity(measures.len());
            for &kind in measures {
                let score = if kind.is_divergence() {
                    let (d1, d2) = fitted.as_ref().expect("divergences require fitted distributions");
                    let (d1, d2) = if cfg.full_divergence {
                        (d1.clone(), d2.clone())
                    } else {
                        (d1.to_diag(), d2.to_diag())
                    };
                    divergence(kind, &d1, &d2, cfg.sample.psd_floor)?
                } else {
                    let (c1, c2) = clouds.as_ref().expect("distance measures have clouds");
                    average_pairwise_distance(kind, c1, c2, cfg.accumulation, cfg.execution)?
                };
                scores.push(score);
            }
            scores
        }
    };

    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("score of {:?} under {}", s1.word(), measures[i]),
            index: i,
        });
    }
    Ok(WordScore {
        scores,
        n1: s1.count(),
        n2: s2.count(),
        warnings,
    })
}

/// Scores a pair of already-fitted distributions (no raw clouds available).
pub fn score_distributions(
    d1: &SiblingDistribution,
    d2: &SiblingDistribution,
    cfg: &ScoreConfig,
) -> Result<f64> {
    if d1.dim() != d2.dim() {
        return Err(Error::DimensionMismatch {
            expected: d1.dim(),
            found: d2.dim(),
        });
    }
    check_compatible(&[cfg.measure], cfg)?;
    let kind = cfg.measure;
    match cfg.variant {
        Variant::MeanOnly => Ok(distance_unchecked(kind, d1.mean().as_slice(), d2.mean().as_slice())),
        Variant::FullPipeline | Variant::IdentityCov => {
            let (d1, d2) = match cfg.variant {
                Variant::IdentityCov => (identity_like(d1, cfg)?, identity_like(d2, cfg)?),
                _ => (d1.clone(), d2.clone()),
            };
            if kind.is_divergence() {
                let (d1, d2) = if cfg.full_divergence {
                    (d1, d2)
                } else {
                    (d1.to_diag(), d2.to_diag())
                };
                return divergence(kind, &d1, &d2, cfg.sample.psd_floor);
            }
            if cfg.cloud_source == CloudSource::RawApd {
                return Err(Error::Incompatible("raw-apd needs sibling sets, not distributions".into()));
            }
            let c1 = sample(&d1, cfg)?;
            let c2 = sample(&d2, cfg)?;
            average_pairwise_distance(kind, &c1, &c2, cfg.accumulation, cfg.execution)
        }
    }
}

fn check_compatible(measures: &[MeasureKind], cfg: &ScoreConfig) -> Result<()> {
    if measures.is_empty() {
        return Err(Error::InvalidArgument("no measures requested".into()));
    }
    if cfg.variant == Variant::MeanOnly {
        if let Some(m) = measures.iter().find(|m| m.is_divergence()) {
            return Err(Error::Incompatible(format!(
                "the mean-only variant has no covariance for divergence {m}"
            )));
        }
    }
    if cfg.variant == Variant::IdentityCov && cfg.cloud_source == CloudSource::RawApd {
        return Err(Error::Incompatible("identity-cov samples clouds; it cannot use raw-apd".into()));
    }
    if cfg.sample.num_samples == 0 {
        return Err(Error::InvalidArgument("num_samples must be at least 1".into()));
    }
    Ok(())
}

fn identity_like(d: &SiblingDistribution, cfg: &ScoreConfig) -> Result<SiblingDistribution> {
    d.with_covariance(Covariance::identity(d.dim(), cfg.cov_mode))
}

/// Fits the configured distribution; a single sibling falls back to
/// `psd_floor · I` around that sibling, with a warning.
fn fit_or_floor(
    set: &SiblingSet,
    cfg: &ScoreConfig,
    warnings: &mut Vec<String>,
) -> Result<SiblingDistribution> {
    let dist = match fit_distribution(set, cfg.cov_mode, cfg.estimator) {
        Ok(d) => d,
        Err(Error::DegenerateCount { count, .. }) => {
            warnings.push(format!(
                "{}: {count} sibling, covariance replaced by {:e}·I",
                set.corpus_id(),
                cfg.sample.psd_floor
            ));
            SiblingDistribution::new(
                set.word(),
                set.corpus_id(),
                sibling_mean(set),
                CovarianceRep {
                    values: Covariance::scaled_identity(set.dim(), cfg.sample.psd_floor, cfg.cov_mode),
                    estimator: cfg.estimator,
                },
                count,
            )?
        }
        Err(e) => return Err(e),
    };
    match cfg.variant {
        Variant::IdentityCov => identity_like(&dist, cfg),
        _ => Ok(dist),
    }
}

fn sample(dist: &SiblingDistribution, cfg: &ScoreConfig) -> Result<Cloud> {
    let repaired = repair_psd(&dist.covariance().values, cfg.sample.psd_floor)?;
    sample_with(dist, &repaired, &cfg.sample)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub word: String,
    pub scores: Vec<f64>,
    pub n1: usize,
    pub n2: usize,
    pub warnings: Vec<String>,
}

impl ScoreRow {
    /// Score under the report's first measure.
    pub fn score(&self) -> f64 {
        self.scores[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordFailure {
    pub word: String,
    pub error: String,
}

/// Scores for a word list, sorted by descending first-measure score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub fingerprint: String,
    pub config: ScoreConfig,
    pub measures: Vec<MeasureKind>,
    pub rows: Vec<ScoreRow>,
    #[serde(default)]
    pub failures: Vec<WordFailure>,
}

/// Scores `words` between two archives under `cfg.measure`.
pub fn score_corpus_pair(
    a1: &Archive,
    a2: &Archive,
    words: &[String],
    cfg: &ScoreConfig,
) -> Result<ScoreReport> {
    score_corpus_pair_measures(a1, a2, words, &[cfg.measure], cfg)
}

/// Scores `words` under every measure in `measures` in one pass.
///
/// A word missing from either archive, or failing to score, becomes a
/// failure entry; the rest of the run continues.
pub fn score_corpus_pair_measures(
    a1: &Archive,
    a2: &Archive,
    words: &[String],
    measures: &[MeasureKind],
    cfg: &ScoreConfig,
) -> Result<ScoreReport> {
    if a1.dim() != a2.dim() && !a1.manifest().words.is_empty() && !a2.manifest().words.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: a1.dim(),
            found: a2.dim(),
        });
    }
    check_compatible(measures, cfg)?;

    let outcomes = cfg.execution.map(words, |word| -> Result<ScoreRow> {
        let s1 = a1.read(word)?;
        let s2 = a2.read(word)?;
        let ws = score_word_measures(&s1, &s2, measures, cfg)?;
        Ok(ScoreRow {
            word: word.clone(),
            scores: ws.scores,
            n1: ws.n1,
            n2: ws.n2,
            warnings: ws.warnings,
        })
    });

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (word, outcome) in words.iter().zip(outcomes) {
        match outcome {
            Ok(row) => {
                for w in &row.warnings {
                    log::warn!("{word}: {w}");
                }
                rows.push(row);
            }
            Err(e) => {
                log::warn!("{word}: {e}");
                failures.push(WordFailure {
                    word: word.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    sort_rows(&mut rows);

    Ok(ScoreReport {
        fingerprint: fingerprint(cfg, measures, a1, a2),
        config: cfg.clone(),
        measures: measures.to_vec(),
        rows,
        failures,
    })
}

fn sort_rows(rows: &mut [ScoreRow]) {
    rows.sort_by(|a, b| b.score().total_cmp(&a.score()).then_with(|| a.word.cmp(&b.word)));
}

/// Hash of the configuration, measure list and both archives' payloads.
pub fn fingerprint(cfg: &ScoreConfig, measures: &[MeasureKind], a1: &Archive, a2: &Archive) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(cfg).expect("config serializes"));
    h.update(serde_json::to_vec(measures).expect("measures serialize"));
    for a in [a1, a2] {
        h.update(a.corpus_id().as_bytes());
        h.update([0u8]);
        for c in a.checksums() {
            h.update(c.to_be_bytes());
        }
    }
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

impl ScoreReport {
    /// Index of `kind` among the report's measures.
    pub fn column(&self, kind: MeasureKind) -> Option<usize> {
        self.measures.iter().position(|&m| m == kind)
    }

    /// `(word, score)` pairs for one measure column.
    pub fn scores_for(&self, column: usize) -> Vec<(String, f64)> {
        self.rows.iter().map(|r| (r.word.clone(), r.scores[column])).collect()
    }

    /// TSV with `#`-prefixed header lines carrying the fingerprint and the
    /// resolved configuration.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# fingerprint: {}", self.fingerprint).unwrap();
        writeln!(
            out,
            "# config: {}",
            serde_json::to_string(&self.config).expect("config serializes")
        )
        .unwrap();
        out.push_str("word");
        if self.measures.len() == 1 {
            out.push_str("\tscore");
        } else {
            for m in &self.measures {
                write!(out, "\t{}", m.token()).unwrap();
            }
        }
        out.push_str("\tn1\tn2\twarnings\n");
        for row in &self.rows {
            out.push_str(&row.word);
            for s in &row.scores {
                write!(out, "\t{s:?}").unwrap();
            }
            writeln!(out, "\t{}\t{}\t{}", row.n1, row.n2, row.warnings.join("; ")).unwrap();
        }
        for f in &self.failures {
            writeln!(out, "# failed\t{}\t{}", f.word, f.error.replace(['\t', '\n'], " ")).unwrap();
        }
        out
    }

    /// Parses the output of [`ScoreReport::to_tsv`].
    pub fn from_tsv(text: &str) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            location: format!("report line {line}"),
            message,
        };
        let mut fingerprint = String::new();
        let mut config = None;
        let mut measures = None;
        let mut rows = Vec::new();
        let mut failures = Vec::new();

        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let rest = rest.trim_start();
                if let Some(fp) = rest.strip_prefix("fingerprint:") {
                    fingerprint = fp.trim().to_string();
                } else if let Some(json) = rest.strip_prefix("config:") {
                    config = Some(
                        serde_json::from_str::<ScoreConfig>(json.trim())
                            .map_err(|e| parse_err(lineno, e.to_string()))?,
                    );
                } else if let Some(f) = rest.strip_prefix("failed\t") {
                    let (word, error) = f.split_once('\t').unwrap_or((f, ""));
                    failures.push(WordFailure {
                        word: word.to_string(),
                        error: error.to_string(),
                    });
                }
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let Some(ms) = &measures else {
                // header row
                if fields.first() != Some(&"word") || fields.len() < 5 {
                    return Err(parse_err(lineno, "expected a header starting with 'word'".into()));
                }
                let cols = &fields[1..fields.len() - 3];
                let parsed = if cols == ["score"] {
                    let cfg: &ScoreConfig = config
                        .as_ref()
                        .ok_or_else(|| parse_err(lineno, "single-score report without config".into()))?;
                    vec![cfg.measure]
                } else {
                    cols.iter()
                        .map(|c| c.parse::<MeasureKind>())
                        .collect::<Result<Vec<_>>>()?
                };
                measures = Some(parsed);
                continue;
            };
            let k = ms.len();
            if fields.len() < k + 3 {
                return Err(parse_err(lineno, format!("expected {} fields", k + 4)));
            }
            let scores = fields[1..=k]
                .iter()
                .map(|s| s.parse::<f64>().map_err(|e| parse_err(lineno, e.to_string())))
                .collect::<Result<Vec<_>>>()?;
            let count = |s: &str| s.parse::<usize>().map_err(|e| parse_err(lineno, e.to_string()));
            let warnings = fields
                .get(k + 3)
                .filter(|w| !w.is_empty())
                .map(|w| w.split("; ").map(str::to_string).collect())
                .unwrap_or_default();
            rows.push(ScoreRow {
                word: fields[0].to_string(),
                scores,
                n1: count(fields[k + 1])?,
                n2: count(fields[k + 2])?,
                warnings,
            });
        }

        let measures = measures.ok_or_else(|| parse_err(0, "missing header row".into()))?;
        let mut config = config.unwrap_or_default();
        config.measure = measures[0];
        Ok(ScoreReport {
            fingerprint,
            config,
            measures,
            rows,
            failures,
        })
    }
}
