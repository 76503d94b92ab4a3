//! Per-method result statistics, overall and by initial-IOU bucket.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::Method;
use super::experiment::TrialRow;
use super::io::derive_seed;
use crate::stats::{median, sample_variance};

pub const LOCALIZED_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "iou")]
pub enum Bucket {
    All,
    InitialBelow(f64),
    InitialAbove(f64),
}

impl Bucket {
    pub fn standard() -> [Bucket; 4] {
        [
            Bucket::All,
            Bucket::InitialBelow(0.3),
            Bucket::InitialAbove(0.4),
            Bucket::InitialAbove(0.5),
        ]
    }

    pub fn contains(&self, initial_iou: f64) -> bool {
        match *self {
            Bucket::All => true,
            Bucket::InitialBelow(t) => initial_iou < t,
            Bucket::InitialAbove(t) => initial_iou > t,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Bucket::All => "all".into(),
            Bucket::InitialBelow(t) => format!("initial<{t}"),
            Bucket::InitialAbove(t) => format!("initial>{t}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketStats {
    pub bucket: Bucket,
    pub trials: usize,
    /// Median of `final − initial`; NaN for an empty bucket.
    pub median_iou_diff: f64,
    /// Bootstrap standard error of that median.
    pub median_iou_diff_bootstrap_se: f64,
    /// Median of `(final − initial) / initial` over rows with nonzero initial IOU.
    pub median_relative_improvement: f64,
    /// Rows left out of the relative statistic because initial IOU is zero.
    pub relative_excluded: usize,
    pub pct_improved: f64,
    pub pct_localized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub failed_rows: usize,
    pub buckets: Vec<BucketStats>,
}

impl MethodSummary {
    pub fn bucket(&self, b: Bucket) -> Option<&BucketStats> {
        self.buckets.iter().find(|s| s.bucket == b)
    }

    pub fn overall(&self) -> &BucketStats {
        self.bucket(Bucket::All).expect("overall bucket is always present")
    }
}

pub fn pct(count: usize, total: usize) -> f64 {
    if total == 0 {
        f64::NAN
    } else {
        100.0 * count as f64 / total as f64
    }
}

/// Percentage of successful rows with final IOU at least `threshold`.
pub fn pct_localized(rows: &[&TrialRow], threshold: f64) -> f64 {
    pct(rows.iter().filter(|r| r.final_iou >= threshold).count(), rows.len())
}

/// Standard deviation of the median over `resamples` bootstrap resamples.
pub fn bootstrap_median_se(values: &[f64], resamples: usize, seed: u64) -> f64 {
    if values.len() < 2 || resamples < 2 {
        return f64::NAN;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = vec![0.0; values.len()];
    let medians: Vec<f64> = (0..resamples)
        .map(|_| {
            for slot in buf.iter_mut() {
                *slot = values[rng.random_range(0..values.len())];
            }
            median(&buf).expect("non-empty resample")
        })
        .collect();
    sample_variance(&medians).expect("at least two resamples").sqrt()
}

fn bucket_stats(rows: &[&TrialRow], bucket: Bucket, resamples: usize, seed: u64) -> BucketStats {
    let rows: Vec<&TrialRow> = rows.iter().copied().filter(|r| bucket.contains(r.initial_iou)).collect();
    let diffs: Vec<f64> = rows.iter().map(|r| r.final_iou - r.initial_iou).collect();
    let relative: Vec<f64> = rows
        .iter()
        .filter(|r| r.initial_iou > 0.0)
        .map(|r| (r.final_iou - r.initial_iou) / r.initial_iou)
        .collect();
    BucketStats {
        bucket,
        trials: rows.len(),
        median_iou_diff: median(&diffs).unwrap_or(f64::NAN),
        median_iou_diff_bootstrap_se: bootstrap_median_se(&diffs, resamples, seed),
        median_relative_improvement: median(&relative).unwrap_or(f64::NAN),
        relative_excluded: rows.len() - relative.len(),
        pct_improved: pct(diffs.iter().filter(|d| **d > 0.0).count(), rows.len()),
        pct_localized: pct_localized(&rows, LOCALIZED_IOU),
    }
}

/// One summary per method, in order of first appearance. Failed rows are
/// counted and otherwise ignored.
pub fn summarize(rows: &[TrialRow], resamples: usize, seed: u64) -> Vec<MethodSummary> {
    let mut methods: Vec<Method> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
    }
    methods
        .into_iter()
        .map(|m| {
            let all: Vec<&TrialRow> = rows.iter().filter(|r| r.method == m).collect();
            let ok: Vec<&TrialRow> = all.iter().copied().filter(|r| r.is_ok()).collect();
            let buckets = Bucket::standard()
                .iter()
                .enumerate()
                .map(|(i, b)| bucket_stats(&ok, *b, resamples, derive_seed(seed, m.stream() << 8 | i as u64)))
                .collect();
            MethodSummary {
                method: m,
                failed_rows: all.len() - ok.len(),
                buckets,
            }
        })
        .collect()
}

/// Plain-text table of every method and bucket.
pub fn render_table(summaries: &[MethodSummary]) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{:<10} {:<12} {:>6} {:>10} {:>12} {:>10} {:>8} {:>10} {:>11}",
        "method", "bucket", "n", "med_diff", "bootstrap_se", "med_rel", "rel_excl", "%improved", "%localized"
    )
    .unwrap();
    for s in summaries {
        for b in &s.buckets {
            writeln!(
                out,
                "{:<10} {:<12} {:>6} {:>10.4} {:>12.4} {:>10.4} {:>8} {:>10.1} {:>11.1}",
                s.method.to_string(),
                b.bucket.label(),
                b.trials,
                b.median_iou_diff,
                b.median_iou_diff_bootstrap_se,
                b.median_relative_improvement,
                b.relative_excluded,
                b.pct_improved,
                b.pct_localized
            )
            .unwrap();
        }
        if s.failed_rows > 0 {
            writeln!(out, "{:<10} failed rows excluded: {}", s.method.to_string(), s.failed_rows).unwrap();
        }
    }
    out
}
