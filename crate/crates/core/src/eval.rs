//! ROC analysis, threshold selection and the normal/anomaly rate grid.
//!
//! A clip is predicted anomalous when `score >= threshold`.

use std::cmp::Ordering;
use std::fmt::Write as _;

use crate::dataset::{assign_clip_label, ClipLabel, Rate, RateConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredClip {
    pub clip_id: String,
    pub score: f64,
    pub anomalous: bool,
}

impl ScoredClip {
    pub fn new(clip_id: impl Into<String>, score: f64, anomalous: bool) -> Self {
        Self {
            clip_id: clip_id.into(),
            score,
            anomalous,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    /// Scores at or above this value are predicted anomalous. The first point
    /// uses `+inf`.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

fn class_counts(scored: &[ScoredClip]) -> Result<(usize, usize)> {
    let positives = scored.iter().filter(|s| s.anomalous).count();
    let negatives = scored.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClassInput {
            positives,
            negatives,
        });
    }
    Ok((positives, negatives))
}

/// Cumulative `(threshold, tp, fp)` after each group of tied scores, from the
/// highest score down.
fn sweep(scored: &[ScoredClip]) -> Vec<(f64, usize, usize)> {
    let mut sorted: Vec<&ScoredClip> = scored.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut out: Vec<(f64, usize, usize)> = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    for (i, s) in sorted.iter().enumerate() {
        if s.anomalous {
            tp += 1;
        } else {
            fp += 1;
        }
        let group_ends = sorted.get(i + 1).is_none_or(|next| next.score != s.score);
        if group_ends {
            out.push((s.score, tp, fp));
        }
    }
    out
}

/// ROC points from `(0, 0)` to `(1, 1)`, one per distinct score.
pub fn roc_curve(scored: &[ScoredClip]) -> Result<Vec<RocPoint>> {
    let (p, n) = class_counts(scored)?;
    let mut roc = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    roc.extend(
        sweep(scored)
            .into_iter()
            .map(|(threshold, tp, fp)| RocPoint {
                threshold,
                fpr: fp as f64 / n as f64,
                tpr: tp as f64 / p as f64,
            }),
    );
    Ok(roc)
}

/// Trapezoidal area under an ROC curve.
pub fn auc(roc: &[RocPoint]) -> f64 {
    roc.windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
        .sum()
}

/// The score threshold maximizing Youden's J = tpr - fpr. Among equal J the
/// lowest threshold wins.
pub fn select_threshold(scored: &[ScoredClip]) -> Result<f64> {
    let (p, n) = class_counts(scored)?;
    // J * p * n = tp * n - fp * p, compared exactly in integers.
    let mut best: Option<(i128, f64)> = None;
    for (threshold, tp, fp) in sweep(scored) {
        let j = tp as i128 * n as i128 - fp as i128 * p as i128;
        if best.is_none_or(|(b, _)| j >= b) {
            best = Some((j, threshold));
        }
    }
    Ok(best.expect("non-empty input").1)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn at(scored: &[ScoredClip], threshold: f64) -> Self {
        let mut c = Confusion::default();
        for s in scored {
            match (s.score >= threshold, s.anomalous) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    /// Set when a ratio had a zero denominator and was reported as 0.
    pub undefined: bool,
}

fn ratio(num: usize, den: usize, undefined: &mut bool) -> f64 {
    if den == 0 {
        *undefined = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Metrics {
    pub fn from_confusion(c: &Confusion) -> Self {
        let mut undefined = false;
        let accuracy = ratio(c.tp + c.tn, c.total(), &mut undefined);
        let recall = ratio(c.tp, c.tp + c.fn_, &mut undefined);
        let precision = ratio(c.tp, c.tp + c.fp, &mut undefined);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            undefined = true;
            0.0
        };
        Self {
            accuracy,
            recall,
            precision,
            f1,
            undefined,
        }
    }
}

pub fn confusion_metrics(scored: &[ScoredClip], threshold: f64) -> Metrics {
    Metrics::from_confusion(&Confusion::at(scored, threshold))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreHistogram {
    /// `n_bins + 1` bin edges.
    pub edges: Vec<f64>,
    pub normal: Vec<usize>,
    pub anomalous: Vec<usize>,
}

/// Equal-width bins over `range`; scores outside the range land in the end bins.
pub fn score_histogram(scored: &[ScoredClip], n_bins: usize, range: (f64, f64)) -> ScoreHistogram {
    let n_bins = n_bins.max(1);
    let (lo, hi) = range;
    let width = (hi - lo) / n_bins as f64;
    let edges = (0..=n_bins).map(|i| lo + width * i as f64).collect();
    let mut normal = vec![0; n_bins];
    let mut anomalous = vec![0; n_bins];
    for s in scored {
        let bin = if hi > lo {
            let pos = ((s.score - lo) / (hi - lo) * n_bins as f64).floor();
            pos.clamp(0.0, (n_bins - 1) as f64) as usize
        } else {
            0
        };
        if s.anomalous {
            anomalous[bin] += 1;
        } else {
            normal[bin] += 1;
        }
    }
    ScoreHistogram {
        edges,
        normal,
        anomalous,
    }
}

pub fn score_range(scored: &[ScoredClip]) -> (f64, f64) {
    scored
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
            (lo.min(s.score), hi.max(s.score))
        })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub roc: Vec<RocPoint>,
    pub auc: f64,
    pub threshold: f64,
    pub confusion: Confusion,
    pub metrics: Metrics,
    pub histogram: ScoreHistogram,
}

/// Evaluates `test`, picking the threshold on `calibration` when given and on
/// `test` itself otherwise.
pub fn evaluate(
    test: &[ScoredClip],
    calibration: Option<&[ScoredClip]>,
    n_bins: usize,
) -> Result<EvalReport> {
    let roc = roc_curve(test)?;
    let threshold = select_threshold(calibration.unwrap_or(test))?;
    let confusion = Confusion::at(test, threshold);
    Ok(EvalReport {
        auc: auc(&roc),
        roc,
        threshold,
        metrics: Metrics::from_confusion(&confusion),
        confusion,
        histogram: score_histogram(test, n_bins, score_range(test)),
    })
}

/// A scored clip that still carries its per-frame labels, so it can be
/// relabeled under any pair of confidence rates.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameScoredClip {
    pub clip_id: String,
    pub score: f64,
    pub frame_labels: Vec<bool>,
}

impl FrameScoredClip {
    pub fn labeled(&self, rates: &RateConfig) -> Option<ScoredClip> {
        match assign_clip_label(&self.frame_labels, rates) {
            ClipLabel::Normal => Some(ScoredClip::new(self.clip_id.clone(), self.score, false)),
            ClipLabel::Anomalous => Some(ScoredClip::new(self.clip_id.clone(), self.score, true)),
            ClipLabel::Unassigned => None,
        }
    }
}

pub fn relabel(clips: &[FrameScoredClip], rates: &RateConfig) -> Vec<ScoredClip> {
    clips.iter().filter_map(|c| c.labeled(rates)).collect()
}

/// Scores of one model (trained at `normal_rate`).
#[derive(Debug, Clone)]
pub struct GridColumn {
    pub normal_rate: Rate,
    pub test: Vec<FrameScoredClip>,
    /// Clips used to pick the threshold; `None` picks it on `test`.
    pub calibration: Option<Vec<FrameScoredClip>>,
}

#[derive(Debug)]
pub struct GridCell {
    pub rates: RateConfig,
    /// Test clips that received a label under `rates`.
    pub n_clips: usize,
    pub n_anomalous: usize,
    pub report: Result<EvalReport>,
}

#[derive(Debug)]
pub struct RateGrid {
    pub normal_rates: Vec<Rate>,
    pub anomaly_rates: Vec<Rate>,
    /// Row-major over anomaly rates, then normal rates.
    pub cells: Vec<GridCell>,
}

/// Evaluates every (normal rate, anomaly rate) cell. Each column's clips are
/// relabeled with the cell's rates; clips left unassigned drop out of that cell.
/// Cells whose calibration clips end up single-class threshold on test instead.
pub fn rate_grid_report(columns: &[GridColumn], anomaly_rates: &[Rate], n_bins: usize) -> RateGrid {
    let mut cells = Vec::with_capacity(columns.len() * anomaly_rates.len());
    for &anomaly in anomaly_rates {
        for col in columns {
            let rates = RateConfig::new(col.normal_rate, anomaly);
            let test = relabel(&col.test, &rates);
            // A calibration set lacking either class cannot place a threshold.
            let calibration = col
                .calibration
                .as_ref()
                .map(|c| relabel(c, &rates))
                .filter(|c| {
                    let both = c.iter().any(|s| s.anomalous) && c.iter().any(|s| !s.anomalous);
                    if !both {
                        log::warn!(
                            "{rates:?}: calibration clips are single-class; using test clips"
                        );
                    }
                    both
                });
            cells.push(GridCell {
                rates,
                n_clips: test.len(),
                n_anomalous: test.iter().filter(|s| s.anomalous).count(),
                report: evaluate(&test, calibration.as_deref(), n_bins),
            });
        }
    }
    RateGrid {
        normal_rates: columns.iter().map(|c| c.normal_rate).collect(),
        anomaly_rates: anomaly_rates.to_vec(),
        cells,
    }
}

/// The headline metrics of one evaluated cell; any of them may be absent when
/// values come from elsewhere.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MetricSummary {
    pub auc: Option<f64>,
    pub accuracy: Option<f64>,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
}

impl From<&EvalReport> for MetricSummary {
    fn from(r: &EvalReport) -> Self {
        Self {
            auc: Some(r.auc),
            accuracy: Some(r.metrics.accuracy),
            recall: Some(r.metrics.recall),
            precision: Some(r.metrics.precision),
            f1: Some(r.metrics.f1),
        }
    }
}

fn fmt_auc(v: Option<f64>) -> String {
    v.map_or("-".into(), |v| format!("{v:.4}"))
}

fn fmt_pct(v: Option<f64>) -> String {
    v.map_or("-".into(), |v| format!("{:.2}", v * 100.0))
}

fn fmt_raw(v: Option<f64>) -> String {
    v.map_or("NA".into(), |v| format!("{v:.17e}"))
}

impl RateGrid {
    pub fn cell(&self, normal: Rate, anomaly: Rate) -> Option<&GridCell> {
        self.cells
            .iter()
            .find(|c| c.rates.normal == normal && c.rates.anomaly == anomaly)
    }

    fn summary(&self, normal: Rate, anomaly: Rate) -> MetricSummary {
        self.cell(normal, anomaly)
            .and_then(|c| c.report.as_ref().ok())
            .map(MetricSummary::from)
            .unwrap_or_default()
    }

    /// Metric blocks side by side, rows = anomaly rates, columns = normal rates
    /// within each block. AUC is a fraction, the rest are percentages.
    pub fn to_table(&self) -> String {
        type Pick = fn(&MetricSummary) -> String;
        let blocks: [(&str, Pick); 5] = [
            ("AUC", |m| fmt_auc(m.auc)),
            ("Accuracy (%)", |m| fmt_pct(m.accuracy)),
            ("Recall (%)", |m| fmt_pct(m.recall)),
            ("Precision (%)", |m| fmt_pct(m.precision)),
            ("F1 (%)", |m| fmt_pct(m.f1)),
        ];
        let w = 8;
        let block_width = self.normal_rates.len() * w;
        let mut out = String::new();
        write!(out, "{:<16}", "").unwrap();
        for (name, _) in &blocks {
            write!(out, "| {name:^block_width$} ").unwrap();
        }
        out.push('\n');
        write!(out, "{:<16}", "normal rate").unwrap();
        for _ in &blocks {
            out.push_str("| ");
            for r in &self.normal_rates {
                write!(out, "{:>w$}", r.to_string()).unwrap();
            }
            out.push(' ');
        }
        out.push('\n');
        for &a in &self.anomaly_rates {
            write!(out, "{:<16}", format!("anomaly {a}")).unwrap();
            for (_, pick) in &blocks {
                out.push_str("| ");
                for &n in &self.normal_rates {
                    write!(out, "{:>w$}", pick(&self.summary(n, a))).unwrap();
                }
                out.push(' ');
            }
            out.push('\n');
        }
        out
    }

    /// One tab-separated line per cell; failed cells carry `NA`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("normal_rate\tanomaly_rate\tclips\tanomalous\tauc\taccuracy\trecall\tprecision\tf1\tthreshold\n");
        for c in &self.cells {
            let m = c
                .report
                .as_ref()
                .ok()
                .map(MetricSummary::from)
                .unwrap_or_default();
            let threshold = c.report.as_ref().ok().map(|r| r.threshold);
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                c.rates.normal,
                c.rates.anomaly,
                c.n_clips,
                c.n_anomalous,
                fmt_raw(m.auc),
                fmt_raw(m.accuracy),
                fmt_raw(m.recall),
                fmt_raw(m.precision),
                fmt_raw(m.f1),
                fmt_raw(threshold),
            )
            .unwrap();
        }
        out
    }

    /// Per-cell score histograms: `normal_rate anomaly_rate bin_lo bin_hi normal anomalous`.
    pub fn histogram_tsv(&self) -> String {
        let mut out =
            String::from("normal_rate\tanomaly_rate\tbin_lo\tbin_hi\tnormal\tanomalous\n");
        for c in &self.cells {
            let Ok(r) = &c.report else { continue };
            let h = &r.histogram;
            for i in 0..h.normal.len() {
                writeln!(
                    out,
                    "{}\t{}\t{:.17e}\t{:.17e}\t{}\t{}",
                    c.rates.normal,
                    c.rates.anomaly,
                    h.edges[i],
                    h.edges[i + 1],
                    h.normal[i],
                    h.anomalous[i]
                )
                .unwrap();
            }
        }
        out
    }
}

/// One row of a grid TSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub rates: RateConfig,
    pub clips: usize,
    pub metrics: MetricSummary,
}

pub fn parse_grid_tsv(text: &str) -> Result<Vec<GridRow>> {
    let origin = std::path::Path::new("grid");
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 10 {
            return Err(Error::parse(
                origin,
                i + 1,
                format!("expected 10 columns, got {}", f.len()),
            ));
        }
        let num = |s: &str| -> Result<Option<f64>> {
            if s == "NA" {
                Ok(None)
            } else {
                s.parse()
                    .map(Some)
                    .map_err(|_| Error::parse(origin, i + 1, format!("bad number {s:?}")))
            }
        };
        rows.push(GridRow {
            rates: RateConfig::new(f[0].parse()?, f[1].parse()?),
            clips: f[2]
                .parse()
                .map_err(|_| Error::parse(origin, i + 1, "bad clip count"))?,
            metrics: MetricSummary {
                auc: num(f[4])?,
                accuracy: num(f[5])?,
                recall: num(f[6])?,
                precision: num(f[7])?,
                f1: num(f[8])?,
            },
        });
    }
    Ok(rows)
}

/// Side-by-side metric table, one column per labeled result.
pub fn compare_table(columns: &[(String, MetricSummary)]) -> String {
    let width = columns
        .iter()
        .map(|(l, _)| l.len())
        .max()
        .unwrap_or(0)
        .max(8)
        + 2;
    let mut out = format!("{:<14}", "metric");
    for (label, _) in columns {
        write!(out, "{label:>width$}").unwrap();
    }
    out.push('\n');
    type Pick = fn(&MetricSummary) -> String;
    let rows: [(&str, Pick); 5] = [
        ("AUC", |m| fmt_auc(m.auc)),
        ("Accuracy (%)", |m| fmt_pct(m.accuracy)),
        ("Recall (%)", |m| fmt_pct(m.recall)),
        ("Precision (%)", |m| fmt_pct(m.precision)),
        ("F1 (%)", |m| fmt_pct(m.f1)),
    ];
    for (name, pick) in rows {
        write!(out, "{name:<14}").unwrap();
        for (_, m) in columns {
            write!(out, "{:>width$}", pick(m)).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Mann-Whitney form of the AUC: the fraction of (anomalous, normal) pairs
/// ranked correctly, ties counting one half. Quadratic; meant for checks.
pub fn pairwise_auc(scored: &[ScoredClip]) -> Result<f64> {
    let (p, n) = class_counts(scored)?;
    let mut wins = 0.0;
    for a in scored.iter().filter(|s| s.anomalous) {
        for b in scored.iter().filter(|s| !s.anomalous) {
            wins += match a.score.partial_cmp(&b.score) {
                Some(Ordering::Greater) => 1.0,
                Some(Ordering::Equal) => 0.5,
                _ => 0.0,
            };
        }
    }
    Ok(wins / (p * n) as f64)
}
