//! Anchor grid generation, IoU-based label assignment and the balanced
//! positive/negative minibatch sampler.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{encode, inside_image, iou, BBox, BoxDelta};

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorConfig {
    pub stride: usize,
    /// Side lengths of the square anchors placed at every cell.
    pub sizes: Vec<f64>,
    pub image_w: usize,
    pub image_h: usize,
}

impl AnchorConfig {
    pub fn new(stride: usize, sizes: Vec<f64>, image_w: usize, image_h: usize) -> Self {
        Self { stride, sizes, image_w, image_h }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::Config("anchor stride must be >= 1".into()));
        }
        if self.sizes.is_empty() {
            return Err(Error::Config("at least one anchor size is required".into()));
        }
        if let Some(s) = self.sizes.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::Config(format!("anchor size {s} must be positive")));
        }
        if self.image_w == 0 || self.image_h == 0 {
            return Err(Error::Config("image dimensions must be positive".into()));
        }
        if !self.image_w.is_multiple_of(self.stride) || !self.image_h.is_multiple_of(self.stride) {
            return Err(Error::Config(format!(
                "image {}x{} is not a whole number of {}-pixel cells",
                self.image_w, self.image_h, self.stride
            )));
        }
        Ok(())
    }

    pub fn feat_w(&self) -> usize {
        self.image_w / self.stride
    }

    pub fn feat_h(&self) -> usize {
        self.image_h / self.stride
    }

    pub fn anchors_per_cell(&self) -> usize {
        self.sizes.len()
    }
}

/// Anchors in row-major cell order, then size order within a cell.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGrid {
    pub boxes: Vec<BBox>,
    pub config: AnchorConfig,
}

impl AnchorGrid {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// Flat index of size `k` at cell row `i`, column `j`.
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.config.feat_w() + j) * self.config.anchors_per_cell() + k
    }

    pub fn in_image(&self, idx: usize) -> bool {
        inside_image(
            &self.boxes[idx],
            self.config.image_w as f64,
            self.config.image_h as f64,
        )
    }
}

pub fn generate_anchor_grid(cfg: &AnchorConfig) -> Result<AnchorGrid> {
    cfg.validate()?;
    let s = cfg.stride as f64;
    let mut boxes = Vec::with_capacity(cfg.feat_w() * cfg.feat_h() * cfg.anchors_per_cell());
    for i in 0..cfg.feat_h() {
        let cy = (i as f64 + 0.5) * s;
        for j in 0..cfg.feat_w() {
            let cx = (j as f64 + 0.5) * s;
            for &size in &cfg.sizes {
                boxes.push(BBox::from_center(cx, cy, size, size));
            }
        }
    }
    Ok(AnchorGrid { boxes, config: cfg.clone() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentConfig {
    pub pos_iou: f64,
    pub neg_iou: f64,
    pub batch_size: usize,
    pub pos_fraction: f64,
}

impl Default for AssignmentConfig {
    fn default() -> Self {
        Self { pos_iou: 0.7, neg_iou: 0.3, batch_size: 32, pos_fraction: 0.5 }
    }
}

impl AssignmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.neg_iou && self.neg_iou < self.pos_iou && self.pos_iou <= 1.0) {
            return Err(Error::Config(format!(
                "need 0 <= neg_iou < pos_iou <= 1 (got {} / {})",
                self.neg_iou, self.pos_iou
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.pos_fraction) {
            return Err(Error::Config(format!(
                "pos_fraction {} outside [0, 1]",
                self.pos_fraction
            )));
        }
        Ok(())
    }

    fn positive_quota(&self) -> usize {
        (self.batch_size as f64 * self.pos_fraction).floor() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorLabel {
    Positive,
    Negative,
    Ignore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledAnchorSet {
    pub labels: Vec<AnchorLabel>,
    /// Ground-truth index each positive regresses to.
    pub matched_gt: Vec<Option<usize>>,
    /// Regression targets, present exactly for positives.
    pub targets: Vec<Option<BoxDelta>>,
    pub sample_mask: Vec<bool>,
}

impl LabeledAnchorSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn count(&self, label: AnchorLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// `(sampled positives, sampled negatives)`.
    pub fn sampled_counts(&self) -> (usize, usize) {
        let mut pos = 0;
        let mut neg = 0;
        for (l, &m) in self.labels.iter().zip(&self.sample_mask) {
            match (m, l) {
                (true, AnchorLabel::Positive) => pos += 1,
                (true, AnchorLabel::Negative) => neg += 1,
                _ => {}
            }
        }
        (pos, neg)
    }
}

/// Label every anchor against the ground truth.
///
/// Anchors crossing the image border are ignored. Among the rest, an anchor
/// is positive if its best IoU reaches `pos_iou`, or if it attains the
/// highest IoU any in-image anchor has with some ground truth (all ties
/// included, and even when that IoU is below `neg_iou`). Remaining anchors
/// whose best IoU is at most `neg_iou` are negative; everything else is
/// ignored.
pub fn assign_labels(grid: &AnchorGrid, gts: &[BBox], cfg: &AssignmentConfig) -> LabeledAnchorSet {
    let n = grid.len();
    let mut labels = vec![AnchorLabel::Ignore; n];
    let mut matched_gt = vec![None; n];
    let mut targets = vec![None; n];

    let inside: Vec<usize> = (0..n).filter(|&a| grid.in_image(a)).collect();

    // best[a] = (max IoU, argmax gt) over ground truths, lowest gt index on ties
    let mut best: Vec<(f64, Option<usize>)> = vec![(0.0, None); n];
    let mut gt_best = vec![0.0f64; gts.len()];
    let mut overlaps = vec![0.0f64; inside.len() * gts.len()];
    for (r, &a) in inside.iter().enumerate() {
        for (g, gt) in gts.iter().enumerate() {
            let v = iou(&grid.boxes[a], gt);
            overlaps[r * gts.len() + g] = v;
            if best[a].1.is_none() || v > best[a].0 {
                best[a] = (v, Some(g));
            }
            if v > gt_best[g] {
                gt_best[g] = v;
            }
        }
    }

    for &a in &inside {
        let (v, _) = best[a];
        labels[a] = if !gts.is_empty() && v >= cfg.pos_iou {
            AnchorLabel::Positive
        } else if v <= cfg.neg_iou {
            AnchorLabel::Negative
        } else {
            AnchorLabel::Ignore
        };
    }

    for (r, &a) in inside.iter().enumerate() {
        for g in 0..gts.len() {
            if gt_best[g] > 0.0 && overlaps[r * gts.len() + g] == gt_best[g] {
                labels[a] = AnchorLabel::Positive;
            }
        }
    }

    for &a in &inside {
        if labels[a] == AnchorLabel::Positive {
            let g = best[a].1.expect("positive anchor has a ground truth");
            matched_gt[a] = Some(g);
            // both boxes are proper: anchors by construction, gts by ingestion
            targets[a] = encode(&grid.boxes[a], &gts[g]).ok();
        }
    }

    LabeledAnchorSet { labels, matched_gt, targets, sample_mask: vec![false; n] }
}

/// Choose the anchors that enter the loss for one training step.
///
/// Up to `batch_size * pos_fraction` positives are drawn uniformly without
/// replacement; negatives fill the remainder of the batch.
pub fn sample_minibatch(
    labeled: &LabeledAnchorSet,
    cfg: &AssignmentConfig,
    rng_seed: u64,
) -> Result<LabeledAnchorSet> {
    let positives: Vec<usize> = indices_of(&labeled.labels, AnchorLabel::Positive);
    let negatives: Vec<usize> = indices_of(&labeled.labels, AnchorLabel::Negative);
    if positives.is_empty() && negatives.is_empty() {
        return Err(Error::EmptySample);
    }
    let n_pos = positives.len().min(cfg.positive_quota());
    let n_neg = negatives.len().min(cfg.batch_size - n_pos);
    // top up with positives when negatives run short
    let n_pos = positives.len().min(cfg.batch_size - n_neg);

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out = labeled.clone();
    out.sample_mask = vec![false; labeled.len()];
    for i in index::sample(&mut rng, positives.len(), n_pos) {
        out.sample_mask[positives[i]] = true;
    }
    for i in index::sample(&mut rng, negatives.len(), n_neg) {
        out.sample_mask[negatives[i]] = true;
    }
    Ok(out)
}

fn indices_of(labels: &[AnchorLabel], which: AnchorLabel) -> Vec<usize> {
    labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == which)
        .map(|(i, _)| i)
        .collect()
}
