//! Theoretical receptive field of sequential conv/pool stacks, and anchor
//! sizing from a shrunken (effective) receptive field.
//!
//! The recursion starts from a single input pixel (`rf = 1`, `jump = 1`);
//! each layer grows the field by `(kernel - 1) * jump` and multiplies the
//! jump by its stride. Padding only shifts the field, it never widens it.
//!
//! For reference, VGG16 up to `conv5_3` gives `rf = 196`, `jump = 16`
//! under this recursion (see [`vgg16_conv5_stack`]).

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Pool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl LayerSpec {
    pub const fn conv(kernel: usize, stride: usize, padding: usize) -> Self {
        Self { kind: LayerKind::Conv, kernel, stride, padding }
    }

    pub const fn pool(kernel: usize, stride: usize) -> Self {
        Self { kind: LayerKind::Pool, kernel, stride, padding: 0 }
    }
}

/// Receptive field size and cumulative stride after some prefix of a stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RfState {
    pub rf: usize,
    pub jump: usize,
}

impl RfState {
    pub const INPUT: RfState = RfState { rf: 1, jump: 1 };

    pub fn push(self, layer: &LayerSpec) -> RfState {
        RfState {
            rf: self.rf + (layer.kernel - 1) * self.jump,
            jump: self.jump * layer.stride,
        }
    }
}

pub fn rf_of_stack(layers: &[LayerSpec]) -> Result<RfState> {
    if layers.is_empty() {
        return Err(Error::EmptyStack);
    }
    for (i, l) in layers.iter().enumerate() {
        if l.kernel == 0 || l.stride == 0 {
            return Err(Error::Config(format!(
                "layer {i}: kernel and stride must be >= 1 (got {l:?})"
            )));
        }
    }
    Ok(layers.iter().fold(RfState::INPUT, |s, l| s.push(l)))
}

/// `stride * aspect_ratio * scale`.
pub fn anchor_size(stride: usize, aspect_ratio: f64, scale: u32) -> f64 {
    stride as f64 * aspect_ratio * scale as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorDesign {
    /// Ascending.
    pub scales: Vec<u32>,
    /// Ascending; `sizes[i] == anchor_size(stride, aspect_ratio, scales[i])`.
    pub sizes: Vec<f64>,
    pub stride: usize,
    pub aspect_ratio: f64,
    /// The target the largest anchor must not exceed, `rf / shrink`.
    pub effective_rf: f64,
}

/// Square-anchor design: see [`design_anchor_scales_with_aspect`].
pub fn design_anchor_scales(rf: RfState, shrink: f64, n_scales: usize) -> Result<AnchorDesign> {
    design_anchor_scales_with_aspect(rf, shrink, n_scales, 1.0)
}

/// Pick `n_scales` anchor scales for a layer with receptive field `rf`.
///
/// The effective field is estimated as `rf.rf / shrink`. The largest scale is
/// the largest power of two whose anchor still fits inside that estimate;
/// every further scale halves the previous one. With a power-of-two stride
/// this makes the largest size the largest power of two `<= rf / shrink`.
pub fn design_anchor_scales_with_aspect(
    rf: RfState,
    shrink: f64,
    n_scales: usize,
    aspect_ratio: f64,
) -> Result<AnchorDesign> {
    if !(shrink >= 1.0) || !shrink.is_finite() {
        return Err(Error::Config(format!("shrink must be >= 1, got {shrink}")));
    }
    if n_scales == 0 {
        return Err(Error::Config("n_scales must be >= 1".into()));
    }
    if !(aspect_ratio > 0.0) || !aspect_ratio.is_finite() {
        return Err(Error::Config(format!("aspect ratio must be positive, got {aspect_ratio}")));
    }
    let effective = rf.rf as f64 / shrink;
    let unit = rf.jump as f64 * aspect_ratio;
    if effective < unit {
        return Err(Error::NoValidScale(format!(
            "effective field {effective:.2} px is smaller than one stride unit ({unit} px)"
        )));
    }

    let mut top: u32 = 1;
    while top < (1 << 30) && unit * f64::from(top * 2) <= effective {
        top *= 2;
    }
    let shift = n_scales - 1;
    if shift >= 32 || top >> shift == 0 {
        return Err(Error::NoValidScale(format!(
            "cannot halve the largest scale {top} into {n_scales} integer scales"
        )));
    }
    let scales: Vec<u32> = (0..n_scales).rev().map(|i| top >> i).collect();
    let sizes = scales
        .iter()
        .map(|&s| anchor_size(rf.jump, aspect_ratio, s))
        .collect();
    Ok(AnchorDesign { scales, sizes, stride: rf.jump, aspect_ratio, effective_rf: effective })
}

/// VGG16 convolutional trunk up to `conv5_3` (pool5 excluded).
pub fn vgg16_conv5_stack() -> Vec<LayerSpec> {
    let mut v = Vec::new();
    for (i, n_conv) in [2, 2, 3, 3, 3].into_iter().enumerate() {
        v.extend(std::iter::repeat_n(LayerSpec::conv(3, 1, 1), n_conv));
        if i < 4 {
            v.push(LayerSpec::pool(2, 2));
        }
    }
    v
}

/// The layer stack of [`crate::net`]'s backbone through the detection layer.
pub fn tinynet_stack() -> Vec<LayerSpec> {
    let mut v = Vec::new();
    for _ in 0..4 {
        v.push(LayerSpec::conv(3, 1, 1));
        v.push(LayerSpec::pool(2, 2));
    }
    v.push(LayerSpec::conv(3, 1, 1));
    v
}
