//! Ranking evaluation against graded gold scores.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::scoring::ScoreReport;

/// Average ranks (1-based, ascending); tied values share their mean rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Ranks with 1 for the largest value.
pub fn descending_ranks(values: &[f64]) -> Vec<f64> {
    let negated: Vec<f64> = values.iter().map(|v| -v).collect();
    average_ranks(&negated)
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rank correlation: Pearson correlation of average ranks.
pub fn spearman(gold: &[f64], predicted: &[f64]) -> Result<f64> {
    if gold.len() != predicted.len() {
        return Err(Error::DimensionMismatch {
            expected: gold.len(),
            found: predicted.len(),
        });
    }
    if gold.len() < 2 {
        return Err(Error::InvalidArgument("Spearman needs at least two pairs".into()));
    }
    if let Some(index) = gold.iter().chain(predicted).position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "Spearman input".into(),
            index,
        });
    }
    pearson(&average_ranks(gold), &average_ranks(predicted))
        .ok_or_else(|| Error::InvalidArgument("Spearman is undefined for a constant input".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FisherTest {
    pub z: f64,
    /// Two-sided p-value under the standard normal.
    pub p: f64,
}

/// Compares two correlation coefficients via the Fisher z-transformation.
pub fn fisher_significance(r1: f64, r2: f64, n1: usize, n2: usize) -> Result<FisherTest> {
    for r in [r1, r2] {
        if r.is_nan() || r.abs() >= 1.0 {
            return Err(Error::InvalidArgument(format!("|r| must be below 1, got {r}")));
        }
    }
    for n in [n1, n2] {
        if n <= 3 {
            return Err(Error::InvalidArgument(format!("sample size must exceed 3, got {n}")));
        }
    }
    let se = (1.0 / (n1 - 3) as f64 + 1.0 / (n2 - 3) as f64).sqrt();
    let z = (r1.atanh() - r2.atanh()) / se;
    let p = if z == 0.0 {
        1.0
    } else {
        erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0)
    };
    Ok(FisherTest { z, p })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldEntry {
    pub word: String,
    pub graded_score: f64,
    pub changed: Option<bool>,
}

/// Graded gold change scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldRanking {
    entries: Vec<GoldEntry>,
}

fn parse_flag(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "✓" => Some(true),
        "0" | "false" | "no" | "✗" => Some(false),
        _ => None,
    }
}

impl GoldRanking {
    pub fn new(entries: Vec<GoldEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.word.as_str()) {
                return Err(Error::DuplicateWord(e.word.clone()));
            }
            if !e.graded_score.is_finite() {
                return Err(Error::InvalidArgument(format!("gold score of {:?} is not finite", e.word)));
            }
        }
        Ok(Self { entries })
    }

    /// Parses `word<TAB>graded_score[<TAB>changed]`, skipping blank and `#` lines.
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Parse {
                location: format!("gold line {}", idx + 1),
                message,
            };
            let fields: Vec<&str> = trimmed.split('\t').map(str::trim).collect();
            if fields.len() < 2 {
                return Err(err("expected word and graded score".into()));
            }
            let graded_score = fields[1]
                .parse::<f64>()
                .map_err(|e| err(format!("score {:?}: {e}", fields[1])))?;
            let changed = match fields.get(2) {
                None | Some(&"") => None,
                Some(s) => Some(parse_flag(s).ok_or_else(|| err(format!("flag {s:?}")))?),
            };
            entries.push(GoldEntry {
                word: fields[0].to_string(),
                graded_score,
                changed,
            });
        }
        Self::new(entries)
    }

    pub fn entries(&self) -> &[GoldEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordRank {
    pub word: String,
    pub gold_rank: f64,
    pub predicted_rank: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub spearman: f64,
    pub n: usize,
    /// Ordered by gold rank; rank 1 is the most changed word.
    pub ranks: Vec<WordRank>,
    /// Gold words absent from the scores.
    pub missing: Vec<String>,
}

/// Evaluates the report's first measure against `gold`.
pub fn evaluate(report: &ScoreReport, gold: &GoldRanking) -> Result<EvalResult> {
    evaluate_scores(&report.scores_for(0), gold)
}

/// Evaluates `(word, score)` pairs over their intersection with `gold`.
pub fn evaluate_scores(scores: &[(String, f64)], gold: &GoldRanking) -> Result<EvalResult> {
    let predicted: HashMap<&str, f64> = scores.iter().map(|(w, s)| (w.as_str(), *s)).collect();
    let mut words = Vec::new();
    let mut gold_values = Vec::new();
    let mut pred_values = Vec::new();
    let mut missing = Vec::new();
    for e in gold.entries() {
        match predicted.get(e.word.as_str()) {
            Some(&s) => {
                words.push(e.word.clone());
                gold_values.push(e.graded_score);
                pred_values.push(s);
            }
            None => missing.push(e.word.clone()),
        }
    }
    if words.is_empty() {
        return Err(Error::InvalidArgument("no gold word has a score".into()));
    }
    let rho = spearman(&gold_values, &pred_values)?;
    let gold_ranks = descending_ranks(&gold_values);
    let pred_ranks = descending_ranks(&pred_values);
    let mut ranks: Vec<WordRank> = words
        .into_iter()
        .zip(gold_ranks.into_iter().zip(pred_ranks))
        .map(|(word, (g, p))| WordRank {
            word,
            gold_rank: g,
            predicted_rank: p,
        })
        .collect();
    ranks.sort_by(|a, b| a.gold_rank.total_cmp(&b.gold_rank).then_with(|| a.word.cmp(&b.word)));
    Ok(EvalResult {
        spearman: rho,
        n: ranks.len(),
        ranks,
        missing,
    })
}

pub(crate) fn fmt_rank(r: f64) -> String {
    if r.fract() == 0.0 {
        format!("{}", r as i64)
    } else {
        format!("{r}")
    }
}

impl EvalResult {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("word\tgold_rank\tpredicted_rank\n");
        for r in &self.ranks {
            writeln!(out, "{}\t{}\t{}", r.word, fmt_rank(r.gold_rank), fmt_rank(r.predicted_rank)).unwrap();
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut s = format!("spearman\t{:.3}\nn\t{}\n", self.spearman, self.n);
        if !self.missing.is_empty() {
            writeln!(s, "missing\t{}", self.missing.join(",")).unwrap();
        }
        s
    }
}

/// Number of ablation variants compared side by side.
pub const ABLATION_COLUMNS: [&str; 3] = ["w/o V", "V=I", "proposed"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub word: String,
    pub gold_rank: f64,
    pub changed: Option<bool>,
    /// Predicted ranks under mean-only, identity-covariance and full pipeline.
    pub ranks: [f64; 3],
}

/// Gold rank alongside the three variants' predicted ranks, with one
/// Spearman coefficient per variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub spearman: [f64; 3],
}

impl AblationTable {
    /// Builds the table from per-variant scores over the gold words scored by
    /// every variant.
    pub fn from_scores(gold: &GoldRanking, variants: [&[(String, f64)]; 3]) -> Result<Self> {
        let maps: Vec<HashMap<&str, f64>> = variants
            .iter()
            .map(|v| v.iter().map(|(w, s)| (w.as_str(), *s)).collect())
            .collect();
        let kept: Vec<&GoldEntry> = gold
            .entries()
            .iter()
            .filter(|e| maps.iter().all(|m| m.contains_key(e.word.as_str())))
            .collect();
        if kept.is_empty() {
            return Err(Error::InvalidArgument("no gold word was scored by every variant".into()));
        }
        let gold_values: Vec<f64> = kept.iter().map(|e| e.graded_score).collect();
        let gold_ranks = descending_ranks(&gold_values);
        let mut spearman_row = [0.0; 3];
        let mut variant_ranks = Vec::new();
        for (k, m) in maps.iter().enumerate() {
            let values: Vec<f64> = kept.iter().map(|e| m[e.word.as_str()]).collect();
            spearman_row[k] = spearman(&gold_values, &values)?;
            variant_ranks.push(descending_ranks(&values));
        }
        let mut rows: Vec<AblationRow> = kept
            .iter()
            .enumerate()
            .map(|(i, e)| AblationRow {
                word: e.word.clone(),
                gold_rank: gold_ranks[i],
                changed: e.changed,
                ranks: [variant_ranks[0][i], variant_ranks[1][i], variant_ranks[2][i]],
            })
            .collect();
        rows.sort_by(|a, b| a.gold_rank.total_cmp(&b.gold_rank).then_with(|| a.word.cmp(&b.word)));
        Ok(Self {
            rows,
            spearman: spearman_row,
        })
    }

    /// Replays a precomputed rank table; each variant's Spearman is computed
    /// between its rank column and the gold ranks over the listed rows.
    pub fn from_rank_rows(rows: Vec<AblationRow>) -> Result<Self> {
        let gold: Vec<f64> = rows.iter().map(|r| -r.gold_rank).collect();
        let mut spearman_row = [0.0; 3];
        for (k, slot) in spearman_row.iter_mut().enumerate() {
            let pred: Vec<f64> = rows.iter().map(|r| -r.ranks[k]).collect();
            *slot = spearman(&gold, &pred)?;
        }
        Ok(Self {
            rows,
            spearman: spearman_row,
        })
    }

    /// Parses a rank table in the layout written by [`AblationTable::to_tsv`];
    /// the `Spearman` footer, if present, is ignored.
    pub fn parse_rank_rows(text: &str) -> Result<Vec<AblationRow>> {
        let mut rows = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') || t.starts_with("word\t") || t.starts_with("Spearman") {
                continue;
            }
            let err = |message: String| Error::Parse {
                location: format!("rank table line {}", idx + 1),
                message,
            };
            let f: Vec<&str> = t.split('\t').map(str::trim).collect();
            if f.len() != 6 {
                return Err(err(format!("expected 6 fields, found {}", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| err(format!("{s:?}: {e}")));
            rows.push(AblationRow {
                word: f[0].to_string(),
                gold_rank: num(f[1])?,
                changed: if f[2].is_empty() { None } else { parse_flag(f[2]) },
                ranks: [num(f[3])?, num(f[4])?, num(f[5])?],
            });
        }
        Ok(rows)
    }

    /// Keeps the `k` best-ranked changed words and the `k` worst-ranked
    /// stable words; Spearman values are left as computed over all rows.
    pub fn top_bottom(&self, k: usize) -> Self {
        let changed: Vec<&AblationRow> = self.rows.iter().filter(|r| r.changed == Some(true)).take(k).collect();
        let stable: Vec<&AblationRow> = self.rows.iter().filter(|r| r.changed == Some(false)).collect();
        let stable = &stable[stable.len().saturating_sub(k)..];
        Self {
            rows: changed.into_iter().chain(stable.iter().copied()).cloned().collect(),
            spearman: self.spearman,
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("word\tgold_rank\tchanged\t{}\n", ABLATION_COLUMNS.join("\t"));
        for r in &self.rows {
            let flag = match r.changed {
                Some(true) => "✓",
                Some(false) => "✗",
                None => "",
            };
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                r.word,
                fmt_rank(r.gold_rank),
                flag,
                fmt_rank(r.ranks[0]),
                fmt_rank(r.ranks[1]),
                fmt_rank(r.ranks[2])
            )
            .unwrap();
        }
        writeln!(
            out,
            "Spearman\t1.000\t\t{:.3}\t{:.3}\t{:.3}",
            self.spearman[0], self.spearman[1], self.spearman[2]
        )
        .unwrap();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn perfect_and_reversed_orderings() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let rev = [5.0, 4.0, 3.0, 2.0, 1.0];
        assert_eq!(spearman(&x, &x).unwrap(), 1.0);
        assert_eq!(spearman(&x, &rev).unwrap(), -1.0);
    }

    #[test]
    fn one_swap_in_four() {
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert_abs_diff_eq!(r, 0.8, epsilon = 1e-15);
    }

    #[test]
    fn ties_get_average_ranks() {
        assert_eq!(average_ranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
        assert_eq!(descending_ranks(&[10.0, 20.0, 20.0, 5.0]), vec![3.0, 1.5, 1.5, 4.0]);
        // frozen from an external statistics package
        let r = spearman(&[1.0, 2.0, 2.0, 3.0, 5.0], &[2.0, 1.0, 4.0, 4.0, 3.0]).unwrap();
        assert_abs_diff_eq!(r, 0.3947368421052632, epsilon = 1e-12);
    }

    #[test]
    fn spearman_errors() {
        assert!(spearman(&[1.0, 2.0], &[1.0]).is_err());
        assert!(spearman(&[1.0], &[1.0]).is_err());
        assert!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn fisher_identical_correlations() {
        let t = fisher_significance(0.4, 0.4, 37, 37).unwrap();
        assert_eq!((t.z, t.p), (0.0, 1.0));
    }

    #[test]
    fn fisher_known_values() {
        let t = fisher_significance(0.548, 0.529, 37, 37).unwrap();
        assert_abs_diff_eq!(t.z, 0.11034618604334573, epsilon = 1e-9);
        assert_abs_diff_eq!(t.p, 0.9121348297140286, epsilon = 1e-9);
        let t = fisher_significance(0.9, 0.0, 37, 37).unwrap();
        assert!(t.p < 1e-3);
    }

    #[test]
    fn fisher_rejects_bad_input() {
        assert!(fisher_significance(1.0, 0.2, 37, 37).is_err());
        assert!(fisher_significance(0.1, 0.2, 3, 37).is_err());
    }

    #[test]
    fn gold_tsv_parsing() {
        let g = GoldRanking::from_tsv("# comment\nplane\t0.88\t1\n\ntree\t0.07\t0\nbit\t0.5\n").unwrap();
        assert_eq!(g.len(), 3);
        assert_eq!(g.entries()[0].changed, Some(true));
        assert_eq!(g.entries()[2].changed, None);
        assert!(GoldRanking::from_tsv("a\t1\na\t2\n").is_err());
        assert!(GoldRanking::from_tsv("a\tnope\n").is_err());
        assert!(GoldRanking::from_tsv("a\tNaN\n").is_err());
    }

    #[test]
    fn evaluate_matching_scores() {
        let g = GoldRanking::from_tsv("a\t0.9\nb\t0.5\nc\t0.1\nz\t0.3\n").unwrap();
        let scores = vec![("a".to_string(), 0.9), ("b".to_string(), 0.5), ("c".to_string(), 0.1)];
        let r = evaluate_scores(&scores, &g).unwrap();
        assert_eq!(r.spearman, 1.0);
        assert_eq!(r.n, 3);
        assert_eq!(r.missing, vec!["z".to_string()]);
        assert_eq!(r.ranks[0].word, "a");
        assert_eq!(r.ranks[0].gold_rank, 1.0);
        assert!(evaluate_scores(&[], &g).is_err());
    }

    #[test]
    fn ablation_table_from_scores() {
        let g = GoldRanking::from_tsv("a\t0.9\t1\nb\t0.5\t1\nc\t0.1\t0\n").unwrap();
        let s: Vec<(String, f64)> = vec![("a".into(), 3.0), ("b".into(), 2.0), ("c".into(), 1.0)];
        let t = AblationTable::from_scores(&g, [&s, &s, &s]).unwrap();
        assert_eq!(t.spearman, [1.0, 1.0, 1.0]);
        let text = t.to_tsv();
        assert!(text.ends_with("Spearman\t1.000\t\t1.000\t1.000\t1.000\n"), "{text}");
        assert_eq!(AblationTable::parse_rank_rows(&text).unwrap(), t.rows);
    }
}
