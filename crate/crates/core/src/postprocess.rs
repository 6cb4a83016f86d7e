//! Turning head outputs into scored boxes, and greedy non-maximum suppression.

use crate::anchors::AnchorGrid;
use crate::error::{Error, Result};
use crate::geometry::{area, clip_to_image, decode, iou, BBox, BoxDelta};
use crate::loss::head_probability;
use crate::net::{forward, NetParams};
use crate::tensor::{Real, Tensor3};

/// Largest log-scale applied when decoding raw predictions; keeps `exp`
/// finite for untrained or diverging networks.
pub const MAX_LOG_SCALE: f64 = 4.135_166_556_742_356; // ln(1000 / 16)

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PostprocessConfig {
    pub nms_iou: f64,
    /// Detections must score strictly above this.
    pub score_threshold: f64,
    pub max_detections: usize,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self { nms_iou: 0.3, score_threshold: 0.5, max_detections: 300 }
    }
}

impl PostprocessConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("nms_iou", self.nms_iou), ("score_threshold", self.score_threshold)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// One detection per anchor, in anchor order: decoded, clipped box and
/// head-class probability.
pub fn decode_predictions<T: Real>(
    grid: &AnchorGrid,
    reg_out: &Tensor3<T>,
    cls_out: &Tensor3<T>,
) -> Result<Vec<Detection>> {
    let cfg = &grid.config;
    let n = cfg.anchors_per_cell();
    let want_reg = (cfg.feat_h(), cfg.feat_w(), 4 * n);
    let want_cls = (cfg.feat_h(), cfg.feat_w(), 2 * n);
    if reg_out.shape() != want_reg || cls_out.shape() != want_cls {
        return Err(Error::Shape(format!(
            "heads {:?}/{:?} do not match grid {want_reg:?}/{want_cls:?}",
            reg_out.shape(),
            cls_out.shape()
        )));
    }
    let (w, h) = (cfg.image_w as f64, cfg.image_h as f64);
    grid.boxes
        .iter()
        .enumerate()
        .map(|(a, anchor)| {
            let r = &reg_out.data[4 * a..4 * a + 4];
            let delta = BoxDelta::new(
                r[0].widen(),
                r[1].widen(),
                r[2].widen().min(MAX_LOG_SCALE),
                r[3].widen().min(MAX_LOG_SCALE),
            );
            let bbox = clip_to_image(&decode(anchor, &delta)?, w, h);
            let score = head_probability([cls_out.data[2 * a].widen(), cls_out.data[2 * a + 1].widen()]);
            if !score.is_finite() {
                return Err(Error::InvalidDelta(format!("anchor {a} has a non-finite score")));
            }
            Ok(Detection { bbox, score })
        })
        .collect()
}

/// Greedy NMS. Detections are visited by descending score (earlier input
/// position first on ties) and kept when their IoU with every detection kept
/// so far is at most `iou_threshold`.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    let mut kept: Vec<Detection> = Vec::new();
    for i in order {
        let d = dets[i];
        if kept.iter().all(|k| iou(&k.bbox, &d.bbox) <= iou_threshold) {
            kept.push(d);
        }
    }
    kept
}

/// Full inference on one preprocessed image.
pub fn detect<T: Real>(
    params: &NetParams<T>,
    image: &Tensor3<T>,
    grid: &AnchorGrid,
    cfg: &PostprocessConfig,
) -> Result<Vec<Detection>> {
    let out = forward(params, image)?;
    let candidates: Vec<Detection> = decode_predictions(grid, &out.reg, &out.cls)?
        .into_iter()
        .filter(|d| d.score > cfg.score_threshold && area(&d.bbox) > 0.0)
        .collect();
    let mut kept = nms(&candidates, cfg.nms_iou);
    kept.truncate(cfg.max_detections);
    Ok(kept)
}
