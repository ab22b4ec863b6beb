//! Aggregates evaluation records into success-rate summaries with 95%
//! error margins, pairwise Yates-corrected chi-square tests, score
//! histograms, and SQL-to-question token-ratio curves, plus the CSV writers
//! for each report.
//!
//! Everything here is pure arithmetic over already-collected records; the
//! only IO is the explicit `write_*_csv` helpers. All groupings iterate in
//! sorted order so report bytes are stable across runs.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Difficulty;
use crate::gate::tokenize;
use crate::judge::{is_success, EvaluationRecord, Metric};

/// z-value for a two-sided 95% interval.
const Z_95: f64 = 1.96;

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("degenerate contingency table: a row total is zero")]
    DegenerateTable,
    #[error("score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("pair {0}: text has no tokens")]
    EmptyText(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl AnalyticsError {
    pub fn kind(&self) -> &'static str {
        match self {
            AnalyticsError::DegenerateTable => "degenerate_table",
            AnalyticsError::ScoreOutOfRange(_) => "score_out_of_range",
            AnalyticsError::EmptyText(_) => "empty_text",
            AnalyticsError::Io(_) => "io",
            AnalyticsError::Csv(_) => "csv",
        }
    }
}

/// How the 95% half-width of a success rate is computed. Wald is the
/// default; Wilson is available for small-n cells where Wald collapses to
/// zero at the boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginMethod {
    #[default]
    Wald,
    Wilson,
}

/// One (system, difficulty, metric) cell of the summary report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryRow {
    pub system_id: String,
    pub difficulty: Difficulty,
    pub metric: String,
    pub n: u64,
    pub successes: u64,
    /// `None` when the cell is empty (n = 0): the rate is undefined, not 0.
    pub rate: Option<f64>,
    pub error_margin: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContingencyTable2x2 {
    pub a_success: u64,
    pub a_failure: u64,
    pub b_success: u64,
    pub b_failure: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquareResult {
    pub chi2: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub significant: bool,
}

/// One pairwise test in the chi-square report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChiSquareRow {
    pub difficulty: Difficulty,
    pub comparison: String,
    pub chi2: f64,
    pub p_value: f64,
    pub significant: bool,
}

/// Ten equal-width bins over [0, 1]; every interval is half-open except the
/// last, which includes 1.0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Histogram {
    pub system_id: String,
    pub difficulty: Difficulty,
    pub metric: String,
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
}

/// Input pair for the token-ratio curve: a natural-language question and the
/// SQL that answers it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenPair {
    pub pair_id: String,
    pub question_text: String,
    pub sql_text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatioPoint {
    pub pair_id: String,
    pub question_tokens: u64,
    pub sql_tokens: u64,
    pub ratio: f64,
}

/// Counts boundary-inclusive successes in one cell and attaches the margin.
pub fn success_rate(
    system_id: &str,
    difficulty: Difficulty,
    metric: &str,
    scores: &[f64],
    tau: f64,
    method: MarginMethod,
) -> SummaryRow {
    let n = scores.len() as u64;
    let successes = scores.iter().filter(|s| is_success(metric, **s, tau)).count() as u64;
    let rate = (n > 0).then(|| successes as f64 / n as f64);
    SummaryRow {
        system_id: system_id.to_string(),
        difficulty,
        metric: metric.to_string(),
        n,
        successes,
        rate,
        error_margin: rate.map(|r| error_margin(n, r, method)),
    }
}

/// 95% half-width of a binomial proportion.
pub fn error_margin(n: u64, rate: f64, method: MarginMethod) -> f64 {
    let n = n as f64;
    match method {
        MarginMethod::Wald => Z_95 * (rate * (1.0 - rate) / n).sqrt(),
        MarginMethod::Wilson => {
            let z2 = Z_95 * Z_95;
            Z_95 * (rate * (1.0 - rate) / n + z2 / (4.0 * n * n)).sqrt() / (1.0 + z2 / n)
        }
    }
}

/// Complementary error function for x >= 0, via the rational Chebyshev
/// fit (absolute error below 1.3e-7 everywhere, well under the 1e-6 budget
/// for 4-decimal p-values).
fn erfc_positive(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    let t = 1.0 / (1.0 + 0.5 * x);
    t * (-x * x - 1.26551223
        + t * (1.00002368
            + t * (0.37409196
                + t * (0.09678418
                    + t * (-0.18628806
                        + t * (0.27886807
                            + t * (-1.13520398
                                + t * (1.48851587
                                    + t * (-0.82215223 + t * 0.17087277)))))))))
    .exp()
}

/// Survival function of the chi-square distribution with one degree of
/// freedom: P(X > x) = 2(1 - Phi(sqrt(x))) = erfc(sqrt(x / 2)).
pub fn chi2_survival_df1(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    erfc_positive((x / 2.0).sqrt()).clamp(0.0, 1.0)
}

/// Yates-corrected chi-square test on a 2x2 success/failure table. Each
/// |O - E| deviation is reduced by 0.5 and clamped at zero, so tables whose
/// deviations are all below the correction yield chi2 = 0 and p = 1 rather
/// than a negative correction overshooting. A zero column total (all
/// successes or all failures) is reported as chi2 = 0, p = 1 by convention;
/// a zero row total (an empty group) is an error.
pub fn chi_square_yates(
    table: &ContingencyTable2x2,
    alpha: f64,
) -> Result<ChiSquareResult, AnalyticsError> {
    let row_a = table.a_success + table.a_failure;
    let row_b = table.b_success + table.b_failure;
    if row_a == 0 || row_b == 0 {
        return Err(AnalyticsError::DegenerateTable);
    }
    let col_s = table.a_success + table.b_success;
    let col_f = table.a_failure + table.b_failure;
    let total = (row_a + row_b) as f64;

    let chi2 = if col_s == 0 || col_f == 0 {
        0.0
    } else {
        let cells = [
            (table.a_success, row_a, col_s),
            (table.a_failure, row_a, col_f),
            (table.b_success, row_b, col_s),
            (table.b_failure, row_b, col_f),
        ];
        cells
            .iter()
            .map(|&(observed, row, col)| {
                let expected = row as f64 * col as f64 / total;
                let deviation = ((observed as f64 - expected).abs() - 0.5).max(0.0);
                deviation * deviation / expected
            })
            .sum()
    };

    let p_value = chi2_survival_df1(chi2);
    Ok(ChiSquareResult { chi2, p_value, alpha, significant: p_value < alpha })
}

/// Records that count toward statistics: judged successfully, with the
/// derived safety entry standing in for the raw bias scale.
fn countable_scores(
    records: &[EvaluationRecord],
) -> impl Iterator<Item = (&EvaluationRecord, &crate::judge::MetricScore)> {
    records
        .iter()
        .filter(|r| !r.judge_failed)
        .flat_map(|r| r.scores.iter().map(move |s| (r, s)))
        .filter(|(_, s)| s.metric != Metric::Bias.name())
}

/// Success-rate rows for every populated (system, difficulty, metric) cell,
/// sorted by system, then difficulty, then metric. Bias rows are omitted —
/// the derived safety metric reports that dimension on the
/// higher-is-better scale.
pub fn summarize(
    records: &[EvaluationRecord],
    tau: f64,
    method: MarginMethod,
) -> Vec<SummaryRow> {
    let mut cells: BTreeMap<(String, Difficulty, String), Vec<f64>> = BTreeMap::new();
    for (record, score) in countable_scores(records) {
        cells
            .entry((record.system_id.clone(), record.difficulty, score.metric.clone()))
            .or_default()
            .push(score.score);
    }
    cells
        .into_iter()
        .map(|((system_id, difficulty, metric), scores)| {
            success_rate(&system_id, difficulty, &metric, &scores, tau, method)
        })
        .collect()
}

/// Pairwise chi-square tests of `subject` against every other system, per
/// difficulty, on one metric's success/failure counts. Cells with no
/// evaluated records are skipped (a test against an empty group is
/// undefined, not insignificant).
pub fn chi_square_report(
    records: &[EvaluationRecord],
    subject: &str,
    metric: &str,
    tau: f64,
    alpha: f64,
) -> Result<Vec<ChiSquareRow>, AnalyticsError> {
    let mut counts: BTreeMap<(Difficulty, String), (u64, u64)> = BTreeMap::new();
    for (record, score) in countable_scores(records) {
        if score.metric != metric {
            continue;
        }
        let entry = counts.entry((record.difficulty, record.system_id.clone())).or_default();
        if is_success(metric, score.score, tau) {
            entry.0 += 1;
        } else {
            entry.1 += 1;
        }
    }

    let mut rows = Vec::new();
    for difficulty in Difficulty::ALL {
        let Some(&(subject_s, subject_f)) =
            counts.get(&(difficulty, subject.to_string()))
        else {
            continue;
        };
        for ((cell_difficulty, system_id), &(other_s, other_f)) in &counts {
            if *cell_difficulty != difficulty || system_id == subject {
                continue;
            }
            let table = ContingencyTable2x2 {
                a_success: subject_s,
                a_failure: subject_f,
                b_success: other_s,
                b_failure: other_f,
            };
            let result = chi_square_yates(&table, alpha)?;
            rows.push(ChiSquareRow {
                difficulty,
                comparison: format!("{subject} vs {system_id}"),
                chi2: result.chi2,
                p_value: result.p_value,
                significant: result.significant,
            });
        }
    }
    Ok(rows)
}

/// Bins scores into ten equal-width intervals over [0, 1]; the last bin is
/// closed so 1.0 lands in [0.9, 1.0].
pub fn histogram(
    system_id: &str,
    difficulty: Difficulty,
    metric: &str,
    scores: &[f64],
) -> Result<Histogram, AnalyticsError> {
    let mut counts = vec![0u64; 10];
    for &score in scores {
        if !(0.0..=1.0).contains(&score) {
            return Err(AnalyticsError::ScoreOutOfRange(score));
        }
        let bin = ((score * 10.0).floor() as usize).min(9);
        counts[bin] += 1;
    }
    Ok(Histogram {
        system_id: system_id.to_string(),
        difficulty,
        metric: metric.to_string(),
        bin_edges: (0..=10).map(|i| i as f64 / 10.0).collect(),
        counts,
    })
}

/// One histogram per populated (system, difficulty, metric) cell, same
/// grouping and ordering as [`summarize`].
pub fn build_histograms(records: &[EvaluationRecord]) -> Result<Vec<Histogram>, AnalyticsError> {
    let mut cells: BTreeMap<(String, Difficulty, String), Vec<f64>> = BTreeMap::new();
    for (record, score) in countable_scores(records) {
        cells
            .entry((record.system_id.clone(), record.difficulty, score.metric.clone()))
            .or_default()
            .push(score.score);
    }
    cells
        .into_iter()
        .map(|((system_id, difficulty, metric), scores)| {
            histogram(&system_id, difficulty, &metric, &scores)
        })
        .collect()
}

/// Token-length ratio (SQL tokens / question tokens) per pair, sorted
/// ascending by ratio with pair_id as the tiebreak.
pub fn token_ratio_series(pairs: &[TokenPair]) -> Result<Vec<RatioPoint>, AnalyticsError> {
    let mut points = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let question_tokens = tokenize(&pair.question_text).len() as u64;
        let sql_tokens = tokenize(&pair.sql_text).len() as u64;
        if question_tokens == 0 || sql_tokens == 0 {
            return Err(AnalyticsError::EmptyText(pair.pair_id.clone()));
        }
        points.push(RatioPoint {
            pair_id: pair.pair_id.clone(),
            question_tokens,
            sql_tokens,
            ratio: sql_tokens as f64 / question_tokens as f64,
        });
    }
    points.sort_by(|a, b| {
        a.ratio.total_cmp(&b.ratio).then_with(|| a.pair_id.cmp(&b.pair_id))
    });
    Ok(points)
}

fn fmt4(x: f64) -> String {
    format!("{x:.4}")
}

fn new_csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, AnalyticsError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?)
}

pub fn write_summary_csv(rows: &[SummaryRow], path: &Path) -> Result<(), AnalyticsError> {
    let mut writer = new_csv_writer(path)?;
    writer.write_record(["system", "difficulty", "metric", "n", "successes", "rate", "error_margin"])?;
    for row in rows {
        writer.write_record([
            row.system_id.as_str(),
            row.difficulty.name(),
            row.metric.as_str(),
            &row.n.to_string(),
            &row.successes.to_string(),
            &row.rate.map(fmt4).unwrap_or_default(),
            &row.error_margin.map(fmt4).unwrap_or_default(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_chi_square_csv(rows: &[ChiSquareRow], path: &Path) -> Result<(), AnalyticsError> {
    let mut writer = new_csv_writer(path)?;
    writer.write_record(["difficulty", "comparison", "chi2", "p_value", "significant"])?;
    for row in rows {
        writer.write_record([
            row.difficulty.name(),
            row.comparison.as_str(),
            &fmt4(row.chi2),
            &fmt4(row.p_value),
            &row.significant.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Long format: one row per (cell, bin) so plotting tools can facet without
/// reshaping.
pub fn write_histograms_csv(histograms: &[Histogram], path: &Path) -> Result<(), AnalyticsError> {
    let mut writer = new_csv_writer(path)?;
    writer.write_record(["system", "difficulty", "metric", "bin_start", "bin_end", "count"])?;
    for histogram in histograms {
        for (bin, count) in histogram.counts.iter().enumerate() {
            writer.write_record([
                histogram.system_id.as_str(),
                histogram.difficulty.name(),
                histogram.metric.as_str(),
                &format!("{:.1}", histogram.bin_edges[bin]),
                &format!("{:.1}", histogram.bin_edges[bin + 1]),
                &count.to_string(),
            ])?;
        }
    }
    writer.flush()?;
    Ok(())
}

pub fn write_token_ratio_csv(points: &[RatioPoint], path: &Path) -> Result<(), AnalyticsError> {
    let mut writer = new_csv_writer(path)?;
    writer.write_record(["pair_id", "question_tokens", "sql_tokens", "ratio"])?;
    for point in points {
        writer.write_record([
            point.pair_id.as_str(),
            &point.question_tokens.to_string(),
            &point.sql_tokens.to_string(),
            &fmt4(point.ratio),
        ])?;
    }
    writer.flush()?;
    Ok(())
}
