//! Frame-by-frame reference for the evaluation metrics, written from the
//! definitions with plain loops over corners and thresholds.

use memtrack::eval::Metrics;
use memtrack::BBox;
use rand::Rng;

pub fn brute_iou(a: &BBox, b: &BBox) -> f64 {
    let (ax1, ay1, ax2, ay2) = (a.x, a.y, a.x + a.w, a.y + a.h);
    let (bx1, by1, bx2, by2) = (b.x, b.y, b.x + b.w, b.y + b.h);
    let left = if ax1 > bx1 { ax1 } else { bx1 };
    let right = if ax2 < bx2 { ax2 } else { bx2 };
    let top = if ay1 > by1 { ay1 } else { by1 };
    let bottom = if ay2 < by2 { ay2 } else { by2 };
    let iw = right - left;
    let ih = bottom - top;
    let inter = if iw > 0.0 && ih > 0.0 { iw * ih } else { 0.0 };
    let union = a.w * a.h + b.w * b.h - inter;
    if union > 0.0 {
        (inter / union).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

pub fn brute_metrics(preds: &[BBox], gts: &[BBox]) -> Metrics {
    let n = preds.len() as f64;
    let ious: Vec<f64> = preds.iter().zip(gts).map(|(p, g)| brute_iou(p, g)).collect();
    let frac_above = |tau: f64| ious.iter().filter(|&&v| v > tau).count() as f64 / n;
    let mut auc = 0.0;
    for k in 0..=100 {
        auc += frac_above(k as f64 / 100.0);
    }
    let mut ao = 0.0;
    for v in &ious {
        ao += v;
    }
    let (mut near, mut norm_near) = (0usize, 0usize);
    for (p, g) in preds.iter().zip(gts) {
        let dx = (p.x + p.w / 2.0) - (g.x + g.w / 2.0);
        let dy = (p.y + p.h / 2.0) - (g.y + g.h / 2.0);
        let d = dx.hypot(dy);
        if d <= 20.0 {
            near += 1;
        }
        if d / (g.w * g.h).sqrt() <= 0.2 {
            norm_near += 1;
        }
    }
    Metrics {
        success_auc: auc / 101.0,
        precision: near as f64 / n,
        norm_precision: norm_near as f64 / n,
        ao: ao / n,
        sr50: frac_above(0.5),
        sr75: frac_above(0.75),
    }
}

/// A random prediction/ground-truth pair. About a quarter are built to sit
/// exactly on an IoU threshold or to coincide.
pub fn random_pair(rng: &mut impl Rng) -> (BBox, BBox) {
    let g = BBox::new(rng.gen_range(0.0..300.0), rng.gen_range(0.0..300.0), rng.gen_range(1.0..120.0), rng.gen_range(1.0..120.0)).unwrap();
    let p = match rng.gen_range(0..8) {
        0 => g,
        // Same origin and height, width scaled: IoU exactly w'/w.
        1 => {
            let k = [0.5, 0.75, 0.25, 0.2][rng.gen_range(0..4)];
            BBox::new(g.x, g.y, g.w * k, g.h).unwrap()
        }
        _ => BBox::new(
            g.x + rng.gen_range(-1.0..1.0) * g.w,
            g.y + rng.gen_range(-1.0..1.0) * g.h,
            g.w * rng.gen_range(0.3..2.0),
            g.h * rng.gen_range(0.3..2.0),
        )
        .unwrap(),
    };
    (p, g)
}
