//! Two-term detection loss over the sampled anchors: softmax cross-entropy
//! on the class logits, averaged over every sampled anchor, plus smooth-L1
//! on the box deltas of sampled positives, averaged over those positives.
//!
//! Head channel layout for anchor `k` of a cell: regression channels
//! `4k..4k+4` in `(tx, ty, tw, th)` order, class channels `2k..2k+2` in
//! `(background, head)` order.

use crate::anchors::{AnchorLabel, LabeledAnchorSet};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub cls_term: f64,
    pub reg_term: f64,
    pub n_cls: usize,
    pub n_reg: usize,
}

/// Numerically stable `-ln softmax(logits)[label]` and its gradient
/// `softmax - one_hot(label)`.
pub fn softmax_cross_entropy(logits: [f64; 2], label: usize) -> (f64, [f64; 2]) {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let z = e0 + e1;
    let loss = z.ln() - (logits[label] - m);
    let mut grad = [e0 / z, e1 / z];
    grad[label] -= 1.0;
    (loss, grad)
}

/// Probability of the head class under a two-way softmax.
pub fn head_probability(logits: [f64; 2]) -> f64 {
    1.0 / (1.0 + (logits[0] - logits[1]).exp())
}

/// `(value, derivative)` of the Huber-style smooth L1 with unit transition.
pub fn smooth_l1(x: f64) -> (f64, f64) {
    if x.abs() < 1.0 {
        (0.5 * x * x, x)
    } else {
        (x.abs() - 0.5, x.signum())
    }
}

pub struct LossOutput<T> {
    pub breakdown: LossBreakdown,
    pub d_cls: Tensor3<T>,
    pub d_reg: Tensor3<T>,
}

pub fn multitask_loss<T: Real>(
    cls_out: &Tensor3<T>,
    reg_out: &Tensor3<T>,
    labeled: &LabeledAnchorSet,
) -> Result<LossOutput<T>> {
    if !cls_out.channels.is_multiple_of(2)
        || reg_out.channels != 2 * cls_out.channels
        || cls_out.height != reg_out.height
        || cls_out.width != reg_out.width
    {
        return Err(Error::Shape(format!(
            "head shapes {:?} (cls) and {:?} (reg) are inconsistent",
            cls_out.shape(),
            reg_out.shape()
        )));
    }
    let n_anchors = cls_out.height * cls_out.width * cls_out.channels / 2;
    if n_anchors != labeled.len() {
        return Err(Error::Shape(format!(
            "heads cover {n_anchors} anchors, labels cover {}",
            labeled.len()
        )));
    }

    let sampled: Vec<usize> = (0..labeled.len())
        .filter(|&a| labeled.sample_mask[a] && labeled.labels[a] != AnchorLabel::Ignore)
        .collect();
    if sampled.is_empty() {
        return Err(Error::EmptySample);
    }
    let positives: Vec<usize> = sampled
        .iter()
        .copied()
        .filter(|&a| labeled.labels[a] == AnchorLabel::Positive)
        .collect();
    let n_cls = sampled.len();
    let n_reg = positives.len();

    let mut d_cls = Tensor3::zeros(cls_out.height, cls_out.width, cls_out.channels);
    let mut d_reg = Tensor3::zeros(reg_out.height, reg_out.width, reg_out.channels);

    let inv_cls = 1.0 / n_cls as f64;
    let mut cls_sum = 0.0;
    for &a in &sampled {
        let label = usize::from(labeled.labels[a] == AnchorLabel::Positive);
        let logits = [cls_out.data[2 * a].widen(), cls_out.data[2 * a + 1].widen()];
        let (l, g) = softmax_cross_entropy(logits, label);
        cls_sum += l;
        d_cls.data[2 * a] = T::cast(g[0] * inv_cls);
        d_cls.data[2 * a + 1] = T::cast(g[1] * inv_cls);
    }

    let mut reg_sum = 0.0;
    if n_reg > 0 {
        let inv_reg = 1.0 / n_reg as f64;
        for &a in &positives {
            let target = labeled.targets[a]
                .ok_or_else(|| Error::Shape(format!("positive anchor {a} has no target")))?
                .to_array();
            for c in 0..4 {
                let (v, d) = smooth_l1(reg_out.data[4 * a + c].widen() - target[c]);
                reg_sum += v;
                d_reg.data[4 * a + c] = T::cast(d * inv_reg);
            }
        }
        reg_sum *= inv_reg;
    }

    let cls_term = cls_sum * inv_cls;
    let breakdown = LossBreakdown {
        total: cls_term + reg_sum,
        cls_term,
        reg_term: reg_sum,
        n_cls,
        n_reg,
    };
    if !breakdown.total.is_finite() {
        return Err(Error::Divergence(format!("loss is {}", breakdown.total)));
    }
    Ok(LossOutput { breakdown, d_cls, d_reg })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoxDelta;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cross_entropy_examples() {
        let (l, g) = softmax_cross_entropy([0.0, 0.0], 1);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(g, [0.5, -0.5]);
        let (l, _) = softmax_cross_entropy([-20.0, 20.0], 1);
        assert!(l < 1e-15);
        let (l, _) = softmax_cross_entropy([1e4, -1e4], 1);
        assert!((l - 2e4).abs() < 1e-9);
    }

    #[test]
    fn smooth_l1_examples() {
        assert_eq!(smooth_l1(0.0), (0.0, 0.0));
        assert_eq!(smooth_l1(0.5), (0.125, 0.5));
        assert_eq!(smooth_l1(3.0), (2.5, 1.0));
        assert_eq!(smooth_l1(-3.0), (2.5, -1.0));
    }

    /// One cell row of `n` anchors (N = n, 1x1 spatial).
    fn scene(labels: Vec<AnchorLabel>, sampled: Vec<bool>) -> LabeledAnchorSet {
        let n = labels.len();
        let targets = labels
            .iter()
            .map(|l| (*l == AnchorLabel::Positive).then(|| BoxDelta::new(0.1, -0.2, 0.3, 0.05)))
            .collect();
        LabeledAnchorSet { labels, matched_gt: vec![None; n], targets, sample_mask: sampled }
    }

    fn heads(n: usize, logits: impl Fn(usize) -> [f64; 2], reg: impl Fn(usize) -> [f64; 4]) -> (Tensor3<f64>, Tensor3<f64>) {
        let mut cls = Tensor3::zeros(1, 1, 2 * n);
        let mut r = Tensor3::zeros(1, 1, 4 * n);
        for a in 0..n {
            cls.data[2 * a..2 * a + 2].copy_from_slice(&logits(a));
            r.data[4 * a..4 * a + 4].copy_from_slice(&reg(a));
        }
        (cls, r)
    }

    #[test]
    fn perfect_predictions_near_zero() {
        let mut labels = vec![AnchorLabel::Positive; 3];
        labels.extend([AnchorLabel::Negative; 3]);
        let l = scene(labels.clone(), vec![true; 6]);
        let (cls, reg) = heads(
            6,
            |a| if a < 3 { [-20.0, 20.0] } else { [20.0, -20.0] },
            |_| [0.1, -0.2, 0.3, 0.05],
        );
        let out = multitask_loss(&cls, &reg, &l).unwrap();
        assert!(out.breakdown.total < 1e-6);
    }

    #[test]
    fn uniform_logits_give_ln2() {
        let mut labels = vec![AnchorLabel::Positive; 16];
        labels.extend([AnchorLabel::Negative; 16]);
        let l = scene(labels, vec![true; 32]);
        let (cls, reg) = heads(32, |_| [0.0, 0.0], |_| [0.1, -0.2, 0.3, 0.05]);
        let b = multitask_loss(&cls, &reg, &l).unwrap().breakdown;
        assert!((b.total - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((b.cls_term - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(b.reg_term, 0.0);
        assert_eq!((b.n_cls, b.n_reg), (32, 16));
    }

    #[test]
    fn single_positive_regression_term() {
        let l = scene(vec![AnchorLabel::Positive], vec![true]);
        let (cls, reg) = heads(1, |_| [-20.0, 20.0], |_| [0.6, -0.2, 0.3, 0.05]);
        let b = multitask_loss(&cls, &reg, &l).unwrap().breakdown;
        assert!((b.reg_term - 0.125).abs() < 1e-12);
        assert_eq!(b.n_reg, 1);
    }

    #[test]
    fn no_positives_means_zero_reg_term() {
        let l = scene(vec![AnchorLabel::Negative; 4], vec![true; 4]);
        let (cls, reg) = heads(4, |_| [0.3, -0.1], |a| [a as f64, 2.0, -3.0, 0.5]);
        let out = multitask_loss(&cls, &reg, &l).unwrap();
        assert_eq!(out.breakdown.reg_term, 0.0);
        assert!(out.d_reg.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn nothing_sampled_is_an_error() {
        let l = scene(vec![AnchorLabel::Negative; 2], vec![false; 2]);
        let (cls, reg) = heads(2, |_| [0.0, 0.0], |_| [0.0; 4]);
        assert!(matches!(multitask_loss(&cls, &reg, &l), Err(Error::EmptySample)));
    }

    fn random_setup(seed: u64) -> (Tensor3<f64>, Tensor3<f64>, LabeledAnchorSet) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w, n) = (3, 4, 2);
        let count = h * w * n;
        let labels: Vec<AnchorLabel> = (0..count)
            .map(|_| match rng.random_range(0..3) {
                0 => AnchorLabel::Positive,
                1 => AnchorLabel::Negative,
                _ => AnchorLabel::Ignore,
            })
            .collect();
        let sample_mask = labels.iter().map(|l| *l != AnchorLabel::Ignore && rng.random_bool(0.8)).collect();
        let targets = labels
            .iter()
            .map(|l| {
                (*l == AnchorLabel::Positive).then(|| {
                    BoxDelta::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    )
                })
            })
            .collect();
        let l = LabeledAnchorSet { labels, matched_gt: vec![None; count], targets, sample_mask };
        let cls = Tensor3::from_vec(h, w, 2 * n, (0..count * 2).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
        let reg = Tensor3::from_vec(h, w, 4 * n, (0..count * 4).map(|_| rng.random_range(-2.5..2.5)).collect()).unwrap();
        (cls, reg, l)
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..8 {
            let (cls, reg, l) = random_setup(seed);
            if multitask_loss(&cls, &reg, &l).is_err() {
                continue;
            }
            let out = multitask_loss(&cls, &reg, &l).unwrap();
            let f = |c: &Tensor3<f64>, r: &Tensor3<f64>| multitask_loss(c, r, &l).unwrap().breakdown.total;
            let eps = 1e-6;
            for i in 0..cls.data.len() {
                let mut p = cls.clone();
                p.data[i] += eps;
                let mut m = cls.clone();
                m.data[i] -= eps;
                let fd = (f(&p, &reg) - f(&m, &reg)) / (2.0 * eps);
                let an = out.d_cls.data[i];
                assert!((fd - an).abs() <= 1e-5 * an.abs().max(fd.abs()).max(1e-6), "cls {i}: {an} vs {fd}");
            }
            for i in 0..reg.data.len() {
                let mut p = reg.clone();
                p.data[i] += eps;
                let mut m = reg.clone();
                m.data[i] -= eps;
                let fd = (f(&cls, &p) - f(&cls, &m)) / (2.0 * eps);
                let an = out.d_reg.data[i];
                assert!((fd - an).abs() <= 1e-5 * an.abs().max(fd.abs()).max(1e-6), "reg {i}: {an} vs {fd}");
            }
        }
    }

    #[test]
    fn regression_gate_and_unsampled_invariance() {
        for seed in 0..8 {
            let (cls, reg, l) = random_setup(seed);
            let Ok(out) = multitask_loss(&cls, &reg, &l) else { continue };
            for a in 0..l.len() {
                let is_sampled_pos = l.sample_mask[a] && l.labels[a] == AnchorLabel::Positive;
                if !is_sampled_pos {
                    assert!(out.d_reg.data[4 * a..4 * a + 4].iter().all(|&v| v == 0.0));
                }
                if !l.sample_mask[a] {
                    assert!(out.d_cls.data[2 * a..2 * a + 2].iter().all(|&v| v == 0.0));
                }
            }
            let mut cls2 = cls.clone();
            let mut reg2 = reg.clone();
            for a in (0..l.len()).filter(|&a| !l.sample_mask[a]) {
                cls2.data[2 * a] += 7.0;
                reg2.data[4 * a + 2] -= 5.0;
            }
            let again = multitask_loss(&cls2, &reg2, &l).unwrap().breakdown;
            assert_eq!(again, out.breakdown);
            assert!(out.breakdown.total >= 0.0 && out.breakdown.cls_term >= 0.0 && out.breakdown.reg_term >= 0.0);
        }
    }
}
