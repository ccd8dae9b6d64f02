//! Training objectives over head outputs.
//!
//! * classification: sigmoid focal loss over every cell, normalized by
//!   `max(num_pos, 1)`;
//! * center-ness: binary cross-entropy on positives minus the entropy of
//!   the soft label, so a perfect prediction scores 0;
//! * regression: `-ln IoU` of the `(l, t, r, b)` boxes on positives.
//!
//! Each is a custom graph op with a hand-written backward pass.

use crate::error::Result;
use crate::head::{HeadOutputs, HeadVars, Targets};
use crate::tensor::ops::{log_sigmoid, sigmoid};
use crate::tensor::{Function, Graph, Scalar, Tensor, Var};

pub const FOCAL_GAMMA: f64 = 2.0;
pub const FOCAL_ALPHA: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub ctr: f64,
    pub reg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { ctr: 1.0, reg: 3.0 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub cls: f64,
    pub ctr: f64,
    pub reg: f64,
    pub num_pos: usize,
}

impl LossBreakdown {
    /// True when the sample had no positive cell and only the
    /// classification term contributed.
    pub fn no_positives(&self) -> bool {
        self.num_pos == 0
    }
}

fn norm(num_pos: usize) -> f64 {
    num_pos.max(1) as f64
}

/// Focal loss of one logit against a `{0, 1}` label and its derivative.
fn focal(x: f64, y: f64) -> (f64, f64) {
    let p = sigmoid(x);
    if y > 0.5 {
        let q = 1.0 - p;
        let lp = log_sigmoid(x);
        let v = -FOCAL_ALPHA * q.powf(FOCAL_GAMMA) * lp;
        let d = FOCAL_ALPHA * q.powf(FOCAL_GAMMA) * (FOCAL_GAMMA * p * lp - q);
        (v, d)
    } else {
        let lq = log_sigmoid(-x);
        let v = -(1.0 - FOCAL_ALPHA) * p.powf(FOCAL_GAMMA) * lq;
        let d = (1.0 - FOCAL_ALPHA) * p.powf(FOCAL_GAMMA) * (p - FOCAL_GAMMA * (1.0 - p) * lq);
        (v, d)
    }
}

fn entropy(c: f64) -> f64 {
    let term = |v: f64| if v > 0.0 { -v * v.ln() } else { 0.0 };
    term(c) + term(1.0 - c)
}

/// Cross-entropy minus label entropy (>= 0) and its derivative.
fn centerness(x: f64, c: f64) -> (f64, f64) {
    let bce = -c * log_sigmoid(x) - (1.0 - c) * log_sigmoid(-x);
    ((bce - entropy(c)).max(0.0), sigmoid(x) - c)
}

/// `-ln IoU` of two `(l, t, r, b)` boxes sharing an anchor point, with its
/// gradient in the predicted distances.
fn iou_loss(p: [f64; 4], t: [f64; 4]) -> (f64, [f64; 4]) {
    let [l, tp, r, b] = p;
    let [lt, tt, rt, bt] = t;
    let wi = l.min(lt) + r.min(rt);
    let hi = tp.min(tt) + b.min(bt);
    let inter = wi * hi;
    let area_p = (l + r) * (tp + b);
    let area_t = (lt + rt) * (tt + bt);
    let union = area_p + area_t - inter;
    let v = -(inter / union).ln();
    let di = [
        if l < lt { hi } else { 0.0 },
        if tp < tt { wi } else { 0.0 },
        if r < rt { hi } else { 0.0 },
        if b < bt { wi } else { 0.0 },
    ];
    let da = [tp + b, l + r, tp + b, l + r];
    let mut g = [0.0; 4];
    for k in 0..4 {
        g[k] = -di[k] / inter + (da[k] - di[k]) / union;
    }
    (v, g)
}

fn cls_value<F: Scalar>(logits: &[F], t: &Targets) -> f64 {
    let y = t.cls.data();
    logits.iter().zip(y).map(|(x, y)| focal(x.f64(), *y).0).sum::<f64>() / norm(t.num_pos)
}

fn ctr_value<F: Scalar>(logits: &[F], t: &Targets) -> f64 {
    let (y, c) = (t.cls.data(), t.ctr.data());
    let mut s = 0.0;
    for i in 0..y.len() {
        if y[i] > 0.5 {
            s += centerness(logits[i].f64(), c[i]).0;
        }
    }
    s / norm(t.num_pos)
}

fn gather4<T: Copy>(data: &[T], n: usize, i: usize) -> [T; 4] {
    [data[i], data[n + i], data[2 * n + i], data[3 * n + i]]
}

fn reg_value<F: Scalar>(reg: &[F], t: &Targets) -> f64 {
    let y = t.cls.data();
    let n = y.len();
    let mut s = 0.0;
    for i in 0..n {
        if y[i] > 0.5 {
            let p = gather4(reg, n, i).map(|v| v.f64());
            s += iou_loss(p, gather4(t.reg.data(), n, i)).0;
        }
    }
    s / norm(t.num_pos)
}

struct FocalLoss {
    targets: Targets,
}

impl<F: Scalar> Function<F> for FocalLoss {
    fn name(&self) -> &'static str {
        "focal_loss"
    }

    fn backward(&self, inputs: &[&Tensor<F>], _: &Tensor<F>, grad: &Tensor<F>) -> Vec<Option<Vec<F>>> {
        let k = grad.item().f64() / norm(self.targets.num_pos);
        let d = inputs[0]
            .data()
            .iter()
            .zip(self.targets.cls.data())
            .map(|(x, y)| F::c(k * focal(x.f64(), *y).1))
            .collect();
        vec![Some(d)]
    }
}

struct CenternessLoss {
    targets: Targets,
}

impl<F: Scalar> Function<F> for CenternessLoss {
    fn name(&self) -> &'static str {
        "centerness_loss"
    }

    fn backward(&self, inputs: &[&Tensor<F>], _: &Tensor<F>, grad: &Tensor<F>) -> Vec<Option<Vec<F>>> {
        let k = grad.item().f64() / norm(self.targets.num_pos);
        let (y, c) = (self.targets.cls.data(), self.targets.ctr.data());
        let d = inputs[0]
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| {
                if y[i] > 0.5 {
                    F::c(k * centerness(x.f64(), c[i]).1)
                } else {
                    F::zero()
                }
            })
            .collect();
        vec![Some(d)]
    }
}

struct IouLoss {
    targets: Targets,
}

impl<F: Scalar> Function<F> for IouLoss {
    fn name(&self) -> &'static str {
        "iou_loss"
    }

    fn backward(&self, inputs: &[&Tensor<F>], _: &Tensor<F>, grad: &Tensor<F>) -> Vec<Option<Vec<F>>> {
        let k = grad.item().f64() / norm(self.targets.num_pos);
        let y = self.targets.cls.data();
        let n = y.len();
        let reg = inputs[0].data();
        let mut d = vec![F::zero(); 4 * n];
        for i in 0..n {
            if y[i] > 0.5 {
                let p = gather4(reg, n, i).map(|v| v.f64());
                let (_, g) = iou_loss(p, gather4(self.targets.reg.data(), n, i));
                for (j, gj) in g.iter().enumerate() {
                    d[j * n + i] = F::c(k * gj);
                }
            }
        }
        vec![Some(d)]
    }
}

/// Graph nodes of the loss terms.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub cls: Var,
    pub ctr: Var,
    pub reg: Var,
}

/// Appends the weighted loss to `g`.
pub fn loss_graph<F: Scalar>(g: &mut Graph<F>, head: &HeadVars, targets: &Targets, w: &LossWeights) -> Result<LossVars> {
    let n = targets.cls.numel();
    for (v, expect) in [(head.cls, n), (head.ctr, n), (head.reg, 4 * n)] {
        if g.value(v).numel() != expect {
            return Err(crate::Error::invalid(format!(
                "head output has {} cells, targets have {n}",
                g.value(v).numel()
            )));
        }
    }
    let cls_v = cls_value(g.value(head.cls).data(), targets);
    let ctr_v = ctr_value(g.value(head.ctr).data(), targets);
    let reg_v = reg_value(g.value(head.reg).data(), targets);
    let cls = g.custom(
        &[head.cls],
        Tensor::scalar(F::c(cls_v)),
        Box::new(FocalLoss { targets: targets.clone() }),
    );
    let ctr = g.custom(
        &[head.ctr],
        Tensor::scalar(F::c(ctr_v)),
        Box::new(CenternessLoss { targets: targets.clone() }),
    );
    let reg = g.custom(
        &[head.reg],
        Tensor::scalar(F::c(reg_v)),
        Box::new(IouLoss { targets: targets.clone() }),
    );
    let a = g.scale(ctr, F::c(w.ctr));
    let b = g.scale(reg, F::c(w.reg));
    let s = g.add(cls, a)?;
    let total = g.add(s, b)?;
    Ok(LossVars { total, cls, ctr, reg })
}

impl LossVars {
    pub fn breakdown<F: Scalar>(&self, g: &Graph<F>, num_pos: usize) -> LossBreakdown {
        LossBreakdown {
            total: g.value(self.total).item().f64(),
            cls: g.value(self.cls).item().f64(),
            ctr: g.value(self.ctr).item().f64(),
            reg: g.value(self.reg).item().f64(),
            num_pos,
        }
    }
}

/// Loss of materialized outputs, without a graph.
pub fn compute_loss<F: Scalar>(out: &HeadOutputs<F>, targets: &Targets, w: &LossWeights) -> LossBreakdown {
    let cls = cls_value(out.cls.data(), targets);
    let ctr = ctr_value(out.ctr.data(), targets);
    let reg = reg_value(out.reg.data(), targets);
    LossBreakdown {
        total: cls + w.ctr * ctr + w.reg * reg,
        cls,
        ctr,
        reg,
        num_pos: targets.num_pos,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bbox::BBox;
    use crate::head::{encode_targets, GridGeometry};
    use crate::tensor::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn targets(gt: BBox) -> Targets {
        encode_targets(&gt, &GridGeometry::centered(33, 5, 8), 33).unwrap()
    }

    fn logit(c: f64) -> f64 {
        (c / (1.0 - c)).ln().clamp(-10.0, 10.0)
    }

    fn perfect(t: &Targets) -> HeadOutputs<f64> {
        HeadOutputs {
            cls: t.cls.map(|y| if y > 0.5 { 10.0 } else { -10.0 }),
            ctr: t.ctr.map(logit),
            reg: t.reg.map(|v| v.max(1e-3)),
        }
    }

    #[test]
    fn perfect_predictions_have_tiny_loss() {
        let t = targets(BBox::new(6.0, 5.0, 21.0, 17.0).unwrap());
        assert!(t.num_pos > 0);
        let l = compute_loss(&perfect(&t), &t, &LossWeights::default());
        assert!(l.total < 1e-3, "{l:?}");
        assert_eq!(l.reg, 0.0);
    }

    #[test]
    fn iou_loss_of_exact_box_is_zero() {
        assert_eq!(iou_loss([1.0, 2.0, 3.0, 4.0], [1.0, 2.0, 3.0, 4.0]).0, 0.0);
    }

    #[test]
    fn all_negative_frame_is_focal_only() {
        let t = targets(BBox::new(1.0, 1.0, 2.0, 2.0).unwrap());
        assert_eq!(t.num_pos, 0);
        let out = HeadOutputs {
            cls: Tensor::full(&[1, 5, 5], 0.3),
            ctr: Tensor::full(&[1, 5, 5], 0.1),
            reg: Tensor::full(&[4, 5, 5], 5.0),
        };
        let l = compute_loss(&out, &t, &LossWeights::default());
        assert!(l.no_positives() && l.cls > 0.0 && l.cls.is_finite());
        assert_eq!((l.ctr, l.reg, l.total), (0.0, 0.0, l.cls));
    }

    #[test]
    fn components_are_non_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let gt = BBox::new(rng.gen_range(0.0..20.0), rng.gen_range(0.0..20.0), rng.gen_range(4.0..20.0), rng.gen_range(4.0..20.0)).unwrap();
            let t = targets(gt);
            let out = HeadOutputs {
                cls: Tensor::from_fn(&[1, 5, 5], |_| rng.gen_range(-20.0..20.0)),
                ctr: Tensor::from_fn(&[1, 5, 5], |_| rng.gen_range(-20.0..20.0)),
                reg: Tensor::from_fn(&[4, 5, 5], |_| rng.gen_range(0.01..40.0)),
            };
            let l = compute_loss(&out, &t, &LossWeights::default());
            assert!(l.cls >= 0.0 && l.ctr >= 0.0 && l.reg >= 0.0, "{l:?}");
        }
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = targets(BBox::new(4.3, 3.1, 22.0, 19.0).unwrap());
        let cls = Tensor::from_fn(&[1, 5, 5], |_| rng.gen_range(-3.0..3.0));
        let ctr = Tensor::from_fn(&[1, 5, 5], |_| rng.gen_range(-3.0..3.0));
        let reg = Tensor::from_fn(&[4, 5, 5], |_| rng.gen_range(2.0..30.0));
        let report = grad_check(
            |g, x| {
                let h = HeadVars { cls: x[0], ctr: x[1], reg: x[2] };
                Ok(loss_graph(g, &h, &t, &LossWeights::default())?.total)
            },
            &[cls, ctr, reg],
            1e-5,
        )
        .unwrap();
        assert!(report.max_relative_error < 1e-4, "{report:?}");
    }
}
