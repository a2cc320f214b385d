use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use siblingshift::{
    distribution::DEFAULT_PSD_FLOOR, Accumulation, CloudSource, CovMode, Estimator, MeasureKind,
    SampleConfig, ScoreConfig, Variant,
};

#[derive(Debug, Parser)]
#[command(name = "siblingshift", version, about = "Score semantic change from sibling-embedding archives")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit per-word Gaussians and write a distribution cache.
    Fit(FitArgs),
    /// Score words between two archives.
    Score(ScoreArgs),
    /// Evaluate a score report against gold graded scores.
    Eval(EvalArgs),
    /// Compare mean-only, identity-covariance and full-pipeline rankings.
    Ablate(AblateArgs),
    /// Word frequency versus numerical rank of the full covariance.
    RankAnalysis(RankArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CovArg {
    Diag,
    Full,
}

impl From<CovArg> for CovMode {
    fn from(c: CovArg) -> Self {
        match c {
            CovArg::Diag => CovMode::Diag,
            CovArg::Full => CovMode::Full,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorArg {
    Centered,
    Literal,
}

impl From<EstimatorArg> for Estimator {
    fn from(e: EstimatorArg) -> Self {
        match e {
            EstimatorArg::Centered => Estimator::Centered,
            EstimatorArg::Literal => Estimator::Literal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantArg {
    Full,
    MeanOnly,
    IdentityCov,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Full => Variant::FullPipeline,
            VariantArg::MeanOnly => Variant::MeanOnly,
            VariantArg::IdentityCov => Variant::IdentityCov,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CloudArg {
    Sampled,
    RawApd,
}

impl From<CloudArg> for CloudSource {
    fn from(c: CloudArg) -> Self {
        match c {
            CloudArg::Sampled => CloudSource::Sampled,
            CloudArg::RawApd => CloudSource::RawApd,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FormatArg {
    Tsv,
    Json,
}

/// Parses a measure token, or `all` for every measure.
pub fn parse_measures(token: &str) -> anyhow::Result<Vec<MeasureKind>> {
    if token == "all" {
        return Ok(MeasureKind::ALL.to_vec());
    }
    token
        .split(',')
        .map(|t| t.trim().parse::<MeasureKind>().map_err(anyhow::Error::from))
        .collect()
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ScoringOpts {
    /// Measure token (kl12, kl21, jeffreys, braycurtis, canberra, chebyshev,
    /// cityblock, correlation, cosine, euclidean), a comma list, or `all`.
    #[arg(long, default_value = "chebyshev")]
    pub measure: String,
    #[arg(long, value_enum, default_value = "full")]
    pub cov: CovArg,
    #[arg(long, value_enum, default_value = "centered")]
    pub estimator: EstimatorArg,
    /// Samples drawn per corpus and word.
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "full")]
    pub variant: VariantArg,
    #[arg(long, value_enum, default_value = "sampled")]
    pub cloud: CloudArg,
    #[arg(long, default_value_t = DEFAULT_PSD_FLOOR)]
    pub psd_floor: f64,
    /// Evaluate divergences on the full covariance rather than its diagonal.
    #[arg(long)]
    pub full_divergence: bool,
    /// Sum pairwise distances in a single fixed sequential order.
    #[arg(long)]
    pub exact_order: bool,
}

impl ScoringOpts {
    pub fn measures(&self) -> anyhow::Result<Vec<MeasureKind>> {
        parse_measures(&self.measure)
    }

    pub fn score_config(&self, measure: MeasureKind) -> ScoreConfig {
        ScoreConfig {
            measure,
            cloud_source: self.cloud.into(),
            sample: SampleConfig {
                num_samples: self.samples,
                seed: self.seed,
                psd_floor: self.psd_floor,
            },
            cov_mode: self.cov.into(),
            estimator: self.estimator.into(),
            variant: self.variant.into(),
            full_divergence: self.full_divergence,
            accumulation: if self.exact_order {
                Accumulation::Sequential
            } else {
                Accumulation::RowBlocked
            },
            execution: Default::default(),
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[arg(long, alias = "archive")]
    pub archive1: PathBuf,
    /// Word list (one per line, first TSV column); defaults to every word.
    #[arg(long)]
    pub words: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "full")]
    pub cov: CovArg,
    #[arg(long, value_enum, default_value = "centered")]
    pub estimator: EstimatorArg,
    /// Output cache directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ScoreArgs {
    #[arg(long)]
    pub archive1: PathBuf,
    #[arg(long)]
    pub archive2: PathBuf,
    /// Word list; defaults to words present in both archives.
    #[arg(long)]
    pub words: Option<PathBuf>,
    #[command(flatten)]
    pub scoring: ScoringOpts,
    #[arg(long, value_enum, default_value = "tsv")]
    pub format: FormatArg,
    /// Output path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Score report (TSV written by `score`).
    #[arg(long)]
    pub report: PathBuf,
    /// Second report; adds a Fisher significance line.
    #[arg(long)]
    pub report2: Option<PathBuf>,
    #[arg(long)]
    pub gold: PathBuf,
    /// Measure column to evaluate in a multi-measure report.
    #[arg(long)]
    pub measure: Option<String>,
    /// Per-word rank table output; stdout summary is always printed.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct AblateArgs {
    #[arg(long, required_unless_present = "replay")]
    pub archive1: Option<PathBuf>,
    #[arg(long, required_unless_present = "replay")]
    pub archive2: Option<PathBuf>,
    #[arg(long, required_unless_present = "replay")]
    pub gold: Option<PathBuf>,
    #[arg(long)]
    pub words: Option<PathBuf>,
    #[command(flatten)]
    pub scoring: ScoringOpts,
    /// Re-emit a precomputed rank table instead of scoring.
    #[arg(long, conflicts_with_all = ["archive1", "archive2", "gold"])]
    pub replay: Option<PathBuf>,
    /// Keep only the top-K changed and bottom-K stable words in the table.
    #[arg(long)]
    pub top: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct RankArgs {
    #[arg(long, alias = "archive")]
    pub archive1: PathBuf,
    #[arg(long)]
    pub words: Option<PathBuf>,
    /// Relative singular-value tolerance.
    #[arg(long, default_value_t = siblingshift::distribution::DEFAULT_RANK_TOL)]
    pub tol: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Whitespace-separated `frequency rank` pairs for external plotting.
    #[arg(long)]
    pub plot_data: Option<PathBuf>,
}
