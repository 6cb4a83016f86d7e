//! PASCAL-style detection evaluation: greedy matching at an IoU threshold,
//! a globally pooled precision/recall curve, and all-points interpolated AP.

use crate::dataio::Sample;
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::postprocess::{Detection, PostprocessConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedMatch {
    pub score: f64,
    pub tp: bool,
}

/// Per-detection outcomes in descending score order, plus the number of
/// ground-truth boxes they were matched against.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchResult {
    pub ranked: Vec<RankedMatch>,
    pub n_gt: usize,
}

impl MatchResult {
    pub fn n_tp(&self) -> usize {
        self.ranked.iter().filter(|m| m.tp).count()
    }

    /// Pool per-image results into one list ordered by descending score.
    /// Equal scores keep image order.
    pub fn merge<'a>(parts: impl IntoIterator<Item = &'a MatchResult>) -> MatchResult {
        let mut out = MatchResult::default();
        for p in parts {
            out.ranked.extend_from_slice(&p.ranked);
            out.n_gt += p.n_gt;
        }
        out.ranked.sort_by(|a, b| b.score.total_cmp(&a.score));
        out
    }
}

/// Match detections of one image. Detections are taken by descending score
/// and claim the unmatched gt they overlap most (lowest index on ties); the
/// claim counts as a true positive when that IoU reaches `iou_threshold`.
pub fn match_detections(dets: &[Detection], gts: &[BBox], iou_threshold: f64) -> MatchResult {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    let mut taken = vec![false; gts.len()];
    let ranked = order
        .into_iter()
        .map(|i| {
            let d = &dets[i];
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if taken[g] {
                    continue;
                }
                let v = iou(&d.bbox, gt);
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((g, v));
                }
            }
            let tp = match best {
                Some((g, v)) if v >= iou_threshold => {
                    taken[g] = true;
                    true
                }
                _ => false,
            };
            RankedMatch { score: d.score, tp }
        })
        .collect();
    MatchResult { ranked, n_gt: gts.len() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    /// `(recall, precision)` after each ranked detection.
    pub points: Vec<(f64, f64)>,
    pub ap: f64,
}

impl PrCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("recall,precision\n");
        for (r, p) in &self.points {
            s.push_str(&format!("{r},{p}\n"));
        }
        s
    }
}

/// Cumulative precision/recall down the ranked list and the area under the
/// precision envelope (precision made non-increasing in recall).
pub fn pr_curve(matches: &MatchResult) -> Result<PrCurve> {
    if matches.n_gt == 0 {
        return Err(Error::NoGroundTruth);
    }
    let n_gt = matches.n_gt as f64;
    let mut tp = 0usize;
    let points: Vec<(f64, f64)> = matches
        .ranked
        .iter()
        .enumerate()
        .map(|(k, m)| {
            tp += usize::from(m.tp);
            (tp as f64 / n_gt, tp as f64 / (k + 1) as f64)
        })
        .collect();

    let mut envelope: Vec<f64> = points.iter().map(|p| p.1).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (&(r, _), &p) in points.iter().zip(&envelope) {
        if r > prev_recall {
            ap += (r - prev_recall) * p;
            prev_recall = r;
        }
    }
    Ok(PrCurve { points, ap })
}

/// Anything that produces detections for a preprocessed sample.
pub trait Detector {
    fn detect(&self, sample: &Sample, cfg: &PostprocessConfig) -> Result<Vec<Detection>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageCounts {
    pub n_det: usize,
    pub n_tp: usize,
    pub n_gt: usize,
}

/// Run `model` over the dataset with no score cut-off and evaluate the
/// pooled ranking.
pub fn evaluate_dataset<D: Detector + ?Sized>(
    model: &D,
    dataset: &[Sample],
    post_cfg: &PostprocessConfig,
    eval_iou: f64,
) -> Result<(PrCurve, Vec<ImageCounts>)> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let cfg = PostprocessConfig { score_threshold: 0.0, ..post_cfg.clone() };
    let mut per_image = Vec::with_capacity(dataset.len());
    let mut counts = Vec::with_capacity(dataset.len());
    for sample in dataset {
        let dets = model.detect(sample, &cfg)?;
        let m = match_detections(&dets, &sample.gts, eval_iou);
        counts.push(ImageCounts { n_det: m.ranked.len(), n_tp: m.n_tp(), n_gt: m.n_gt });
        per_image.push(m);
    }
    let pooled = MatchResult::merge(&per_image);
    Ok((pr_curve(&pooled)?, counts))
}
