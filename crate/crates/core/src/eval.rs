//! Counting metrics, per-range breakdowns and report files.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Prediction, PreparedVideo, SkimFocusNet};

/// Fraction of items with `|ĉ - c| ≤ 1`, on raw (unrounded) predictions.
pub fn obo(preds: &[f64], gts: &[f64]) -> Result<f64> {
    check_lengths(preds, gts)?;
    let hits = preds
        .iter()
        .zip(gts)
        .filter(|(p, g)| (*p - *g).abs() <= 1.0)
        .count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Mean of `|ĉ - c| / c` over items with `c > 0`.
///
/// Items with a zero ground truth are left out and their positions returned
/// alongside the value. If every item is excluded the result is `NaN`.
pub fn mae(preds: &[f64], gts: &[f64]) -> Result<(f64, Vec<usize>)> {
    check_lengths(preds, gts)?;
    let mut excluded = Vec::new();
    let mut total = 0.0;
    let mut n = 0usize;
    for (i, (&p, &g)) in preds.iter().zip(gts).enumerate() {
        if g > 0.0 {
            total += (p - g).abs() / g;
            n += 1;
        } else {
            excluded.push(i);
        }
    }
    let value = if n == 0 { f64::NAN } else { total / n as f64 };
    Ok((value, excluded))
}

fn check_lengths(preds: &[f64], gts: &[f64]) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::EmptyInput);
    }
    if preds.len() != gts.len() {
        return Err(Error::Shape {
            op: "metric inputs",
            left: vec![preds.len()],
            right: vec![gts.len()],
        });
    }
    if let Some(g) = gts.iter().find(|g| !(g.is_finite() && **g >= 0.0)) {
        return Err(Error::Config(format!(
            "ground-truth counts must be >= 0, got {g}"
        )));
    }
    Ok(())
}

/// Ground-truth count ranges. A bucket `(lo, hi)` holds counts with
/// `lo <= c <= hi`; `hi = None` is unbounded.
pub const DEFAULT_BUCKETS: &[(usize, Option<usize>)] = &[
    (0, Some(0)),
    (1, Some(5)),
    (6, Some(10)),
    (11, Some(20)),
    (21, None),
];

pub fn bucket_label(lo: usize, hi: Option<usize>) -> String {
    match hi {
        Some(h) if h == lo => format!("{lo}"),
        Some(h) => format!("{lo}-{h}"),
        None => format!("{lo}+"),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VideoResult {
    pub id: String,
    pub class: String,
    pub gt: f64,
    pub pred: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BucketStats {
    pub label: String,
    pub n: usize,
    /// `None` when the bucket is empty or holds only zero counts.
    pub mae: Option<f64>,
    pub obo: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub per_video: Vec<VideoResult>,
    pub mae: f64,
    pub obo: f64,
    pub mae_excluded: Vec<String>,
    pub range_buckets: Vec<BucketStats>,
}

impl MetricsReport {
    pub fn from_results(per_video: Vec<VideoResult>) -> Result<Self> {
        Self::with_buckets(per_video, DEFAULT_BUCKETS)
    }

    pub fn with_buckets(per_video: Vec<VideoResult>, buckets: &[(usize, Option<usize>)]) -> Result<Self> {
        let preds: Vec<f64> = per_video.iter().map(|r| r.pred).collect();
        let gts: Vec<f64> = per_video.iter().map(|r| r.gt).collect();
        let obo_all = obo(&preds, &gts)?;
        let (mae_all, excluded) = mae(&preds, &gts)?;
        let mae_excluded: Vec<String> = excluded.iter().map(|&i| per_video[i].id.clone()).collect();
        if !mae_excluded.is_empty() {
            log::warn!(
                "{} zero-count video(s) left out of MAE: {}",
                mae_excluded.len(),
                mae_excluded.join(", ")
            );
        }
        let mut range_buckets = Vec::with_capacity(buckets.len());
        for &(lo, hi) in buckets {
            let inside = |g: f64| g >= lo as f64 && hi.is_none_or(|h| g <= h as f64);
            let (p, g): (Vec<f64>, Vec<f64>) = preds
                .iter()
                .zip(&gts)
                .filter(|(_, g)| inside(**g))
                .map(|(p, g)| (*p, *g))
                .unzip();
            let (mae, obo) = if p.is_empty() {
                (None, None)
            } else {
                let m = mae(&p, &g)?.0;
                (Some(m).filter(|m| !m.is_nan()), Some(obo(&p, &g)?))
            };
            range_buckets.push(BucketStats {
                label: bucket_label(lo, hi),
                n: p.len(),
                mae,
                obo,
            });
        }
        Ok(MetricsReport {
            per_video,
            mae: mae_all,
            obo: obo_all,
            mae_excluded,
            range_buckets,
        })
    }

    /// Columns: `id,class,gt,pred,abs_err,rel_err,obo_hit`. `rel_err` is
    /// empty for zero-count videos.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,class,gt,pred,abs_err,rel_err,obo_hit\n");
        for r in &self.per_video {
            let abs = (r.pred - r.gt).abs();
            let rel = if r.gt > 0.0 {
                format!("{:.6}", abs / r.gt)
            } else {
                String::new()
            };
            writeln!(
                out,
                "{},{},{},{:.6},{:.6},{},{}",
                r.id,
                r.class,
                r.gt,
                r.pred,
                abs,
                rel,
                u8::from(abs <= 1.0)
            )
            .unwrap();
        }
        out
    }

    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{stem}.csv")), self.to_csv())?;
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(dir.join(format!("{stem}.json")), json + "\n")?;
        Ok(())
    }
}

/// Runs the model over every video. Returns the report and the raw
/// predictions (for plotting).
pub fn evaluate(net: &SkimFocusNet, videos: &[PreparedVideo]) -> Result<(MetricsReport, Vec<Prediction>)> {
    let mut results = Vec::with_capacity(videos.len());
    let mut preds = Vec::with_capacity(videos.len());
    for v in videos {
        let p = net.count_video(v)?;
        results.push(VideoResult {
            id: v.id.clone(),
            class: v.class_label.clone(),
            gt: v.count as f64,
            pred: p.count,
        });
        preds.push(p);
    }
    Ok((MetricsReport::from_results(results)?, preds))
}
