use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use siblingshift::{
    cache::write_distribution_cache,
    covariance_rank,
    evaluation::{evaluate_scores, fisher_significance, AblationTable, GoldRanking},
    fit_distribution, score_corpus_pair_measures, Archive, CovMode, Error, Estimator, Execution,
    ScoreReport, Variant,
};

use crate::args::{AblateArgs, EvalArgs, FitArgs, FormatArg, RankArgs, ScoreArgs};

/// Reads a word list: one word per line (first tab-separated field),
/// ignoring blank lines and `#` comments.
pub fn read_word_list(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading word list {}", path.display()))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.split('\t').next().unwrap_or(l).trim().to_string())
        .collect())
}

fn open_archive(path: &Path) -> Result<Archive> {
    Archive::open(path).with_context(|| format!("opening archive {}", path.display()))
}

fn common_words(a1: &Archive, a2: &Archive) -> Vec<String> {
    a1.manifest()
        .surfaces()
        .filter(|w| a2.contains(w))
        .map(str::to_string)
        .collect()
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn fit(args: &FitArgs) -> Result<()> {
    let archive = open_archive(&args.archive1)?;
    let words = match &args.words {
        Some(p) => read_word_list(p)?,
        None => archive.manifest().surfaces().map(str::to_string).collect(),
    };
    let mode: CovMode = args.cov.into();
    let estimator: Estimator = args.estimator.into();
    let fitted = Execution::default().map(&words, |w| {
        archive.read(w).and_then(|set| fit_distribution(&set, mode, estimator))
    });
    let mut dists = Vec::new();
    for (word, d) in words.iter().zip(fitted) {
        match d {
            Ok(d) => dists.push(d),
            Err(e) => log::warn!("{word}: skipped: {e}"),
        }
    }
    let manifest = write_distribution_cache(&dists, &args.out)?;
    log::info!("wrote {} distributions to {}", manifest.entries.len(), args.out.display());
    Ok(())
}

pub fn score(args: &ScoreArgs) -> Result<ScoreReport> {
    let a1 = open_archive(&args.archive1)?;
    let a2 = open_archive(&args.archive2)?;
    let measures = args.scoring.measures()?;
    let cfg = args.scoring.score_config(measures[0]);
    let words = match &args.words {
        Some(p) => read_word_list(p)?,
        None => common_words(&a1, &a2),
    };
    let report = score_corpus_pair_measures(&a1, &a2, &words, &measures, &cfg)?;
    for f in &report.failures {
        eprintln!("warning: {}: {}", f.word, f.error);
    }
    let text = match args.format {
        FormatArg::Tsv => report.to_tsv(),
        FormatArg::Json => serde_json::to_string_pretty(&report)? + "\n",
    };
    emit(args.out.as_deref(), &text)?;
    Ok(report)
}

fn load_report(path: &Path) -> Result<ScoreReport> {
    let text = fs::read_to_string(path).with_context(|| format!("reading report {}", path.display()))?;
    if text.trim_start().starts_with('{') {
        return serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()));
    }
    ScoreReport::from_tsv(&text).with_context(|| format!("parsing {}", path.display()))
}

fn report_column(report: &ScoreReport, measure: Option<&str>) -> Result<usize> {
    match measure {
        None => Ok(0),
        Some(tok) => {
            let kind = tok.parse()?;
            report
                .column(kind)
                .with_context(|| format!("report has no {tok} column"))
        }
    }
}

pub fn eval(args: &EvalArgs) -> Result<String> {
    let gold_text = fs::read_to_string(&args.gold).with_context(|| format!("reading gold {}", args.gold.display()))?;
    let gold = GoldRanking::from_tsv(&gold_text)?;
    let report = load_report(&args.report)?;
    let col = report_column(&report, args.measure.as_deref())?;
    let result = evaluate_scores(&report.scores_for(col), &gold)?;
    let mut summary = result.summary();
    if let Some(p) = &args.report2 {
        let other = load_report(p)?;
        let col2 = report_column(&other, args.measure.as_deref())?;
        let second = evaluate_scores(&other.scores_for(col2), &gold)?;
        let t = fisher_significance(result.spearman, second.spearman, result.n, second.n)?;
        writeln!(summary, "spearman2\t{:.3}\nn2\t{}", second.spearman, second.n)?;
        writeln!(
            summary,
            "fisher\tz={:.4}\tp={:.4}\t{}",
            t.z,
            t.p,
            if t.p < 0.05 { "significant at 0.05" } else { "not significant at 0.05" }
        )?;
    }
    if let Some(out) = &args.out {
        fs::write(out, result.to_tsv()).with_context(|| format!("writing {}", out.display()))?;
    }
    print!("{summary}");
    Ok(summary)
}

pub fn ablate(args: &AblateArgs) -> Result<AblationTable> {
    let table = if let Some(path) = &args.replay {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        AblationTable::from_rank_rows(AblationTable::parse_rank_rows(&text)?)?
    } else {
        let (Some(p1), Some(p2), Some(gp)) = (&args.archive1, &args.archive2, &args.gold) else {
            bail!("--archive1, --archive2 and --gold are required without --replay");
        };
        let a1 = open_archive(p1)?;
        let a2 = open_archive(p2)?;
        let gold = GoldRanking::from_tsv(&fs::read_to_string(gp).with_context(|| format!("reading gold {}", gp.display()))?)?;
        let measures = args.scoring.measures()?;
        if measures.len() != 1 {
            bail!("ablation compares variants under a single measure");
        }
        let words = match &args.words {
            Some(p) => read_word_list(p)?,
            None => gold.entries().iter().map(|e| e.word.clone()).collect(),
        };
        let mut columns = Vec::new();
        for variant in [Variant::MeanOnly, Variant::IdentityCov, Variant::FullPipeline] {
            let cfg = siblingshift::ScoreConfig {
                variant,
                ..args.scoring.score_config(measures[0])
            };
            let report = score_corpus_pair_measures(&a1, &a2, &words, &measures, &cfg)?;
            for f in &report.failures {
                eprintln!("warning: {variant}: {}: {}", f.word, f.error);
            }
            columns.push(report.scores_for(0));
        }
        AblationTable::from_scores(&gold, [&columns[0], &columns[1], &columns[2]])?
    };
    let shown = match args.top {
        Some(k) => table.top_bottom(k),
        None => table.clone(),
    };
    emit(args.out.as_deref(), &shown.to_tsv())?;
    Ok(table)
}

/// One row of the frequency/rank analysis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankRow {
    pub word: String,
    pub frequency: usize,
    pub rank: usize,
}

pub fn rank_analysis(args: &RankArgs) -> Result<Vec<RankRow>> {
    let archive = open_archive(&args.archive1)?;
    let words = match &args.words {
        Some(p) => read_word_list(p)?,
        None => archive.manifest().surfaces().map(str::to_string).collect(),
    };
    let outcomes = Execution::default().map(&words, |w| -> siblingshift::Result<RankRow> {
        let set = archive.read(w)?;
        let rank = match fit_distribution(&set, CovMode::Full, Estimator::Centered) {
            Ok(d) => covariance_rank(&d, args.tol),
            Err(Error::DegenerateCount { .. }) => 0,
            Err(e) => return Err(e),
        };
        Ok(RankRow {
            word: w.clone(),
            frequency: set.count(),
            rank,
        })
    });
    let mut rows = Vec::new();
    for (w, r) in words.iter().zip(outcomes) {
        match r {
            Ok(r) => rows.push(r),
            Err(e) => eprintln!("warning: {w}: {e}"),
        }
    }
    let mut tsv = String::from("word\tfrequency\trank\n");
    for r in &rows {
        writeln!(tsv, "{}\t{}\t{}", r.word, r.frequency, r.rank)?;
    }
    emit(args.out.as_deref(), &tsv)?;
    if let Some(p) = &args.plot_data {
        let mut plot = String::from("# frequency rank\n");
        for r in &rows {
            writeln!(plot, "{} {}", r.frequency, r.rank)?;
        }
        fs::write(p, plot).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(rows)
}
