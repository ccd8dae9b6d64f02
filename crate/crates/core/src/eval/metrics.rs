//! Overlap and centre-error metrics, and the JSON evaluation report.

use serde::{Deserialize, Serialize};

use crate::bbox::BBox;
use crate::error::{Error, Result};

/// Number of overlap thresholds in the success curve: `k / 100` for
/// `k = 0..=100`.
pub const SUCCESS_THRESHOLDS: usize = 101;
/// Centre-error radius for precision, in pixels.
pub const PRECISION_RADIUS: f64 = 20.0;
/// Normalized centre-error threshold.
pub const NORM_PRECISION_THRESHOLD: f64 = 0.2;

/// Threshold `k` of the success curve.
pub fn success_threshold(k: usize) -> f64 {
    k as f64 / 100.0
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub success_auc: f64,
    pub precision: f64,
    pub norm_precision: f64,
    /// Mean IoU.
    pub ao: f64,
    pub sr50: f64,
    pub sr75: f64,
}

/// Metrics of `preds` against `gts`, frame by frame.
pub fn compute_metrics(preds: &[BBox], gts: &[BBox]) -> Result<Metrics> {
    if preds.len() != gts.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} ground-truth boxes",
            preds.len(),
            gts.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::invalid("metrics of an empty sequence"));
    }
    let n = preds.len() as f64;
    let ious: Vec<f64> = preds.iter().zip(gts).map(|(p, g)| p.iou(g)).collect();
    let mut sorted = ious.clone();
    sorted.sort_by(f64::total_cmp);
    // Fraction of frames with IoU strictly above `tau`.
    let above = |tau: f64| (sorted.len() - sorted.partition_point(|&v| v <= tau)) as f64 / n;

    let mut auc = 0.0;
    for k in 0..SUCCESS_THRESHOLDS {
        auc += above(success_threshold(k));
    }
    let mut ao = 0.0;
    for v in &ious {
        ao += v;
    }
    let mut near = 0usize;
    let mut norm_near = 0usize;
    for (p, g) in preds.iter().zip(gts) {
        let d = p.center_distance(g);
        near += usize::from(d <= PRECISION_RADIUS);
        norm_near += usize::from(d / (g.w * g.h).sqrt() <= NORM_PRECISION_THRESHOLD);
    }
    Ok(Metrics {
        success_auc: auc / SUCCESS_THRESHOLDS as f64,
        precision: near as f64 / n,
        norm_precision: norm_near as f64 / n,
        ao: ao / n,
        sr50: above(0.5),
        sr75: above(0.75),
    })
}

impl Metrics {
    /// Unweighted mean over sequences.
    pub fn mean(rows: &[Metrics]) -> Result<Metrics> {
        if rows.is_empty() {
            return Err(Error::invalid("no rows to aggregate"));
        }
        let n = rows.len() as f64;
        let mut m = Metrics::default();
        for r in rows {
            m.success_auc += r.success_auc;
            m.precision += r.precision;
            m.norm_precision += r.norm_precision;
            m.ao += r.ao;
            m.sr50 += r.sr50;
            m.sr75 += r.sr75;
        }
        m.success_auc /= n;
        m.precision /= n;
        m.norm_precision /= n;
        m.ao /= n;
        m.sr50 /= n;
        m.sr75 /= n;
        Ok(m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceRow {
    pub name: String,
    pub frames: usize,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub seed: Option<u64>,
    /// FNV-1a of the tracker configuration text.
    pub config_hash: String,
    pub wall_seconds: Option<f64>,
    /// Names the suite so numbers are not mistaken for benchmark results.
    pub suite: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// How each metric is defined.
    pub definitions: Vec<String>,
    pub meta: RunMeta,
    pub sequences: Vec<SequenceRow>,
    /// Mean of the rows above.
    pub aggregate: Metrics,
}

pub fn metric_definitions() -> Vec<String> {
    vec![
        "ao: mean IoU over frames".into(),
        "sr50, sr75: fraction of frames with IoU > 0.5, > 0.75".into(),
        "success_auc: mean over thresholds k/100, k = 0..100, of the fraction of frames with IoU > threshold".into(),
        "precision: fraction of frames with centre distance <= 20 px".into(),
        "norm_precision: fraction of frames with centre distance / sqrt(gt_w * gt_h) <= 0.2".into(),
        "aggregate: unweighted mean over sequences".into(),
    ]
}

impl EvalReport {
    pub fn new(meta: RunMeta, sequences: Vec<SequenceRow>) -> Result<Self> {
        let rows: Vec<Metrics> = sequences.iter().map(|r| r.metrics).collect();
        Ok(EvalReport {
            definitions: metric_definitions(),
            meta,
            aggregate: Metrics::mean(&rows)?,
            sequences,
        })
    }

    /// Recomputes the aggregate from the rows and compares exactly.
    pub fn is_consistent(&self) -> bool {
        let rows: Vec<Metrics> = self.sequences.iter().map(|r| r.metrics).collect();
        Metrics::mean(&rows).map(|m| m == self.aggregate).unwrap_or(false)
    }
}

/// 64-bit FNV-1a, used to fingerprint configuration text.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
