use crate::error::{Error, Result};
use crate::geometry::{area, clip_to_image, BBox};
use crate::net::NET_STRIDE;
use crate::tensor::Tensor3;

use super::Sample;

/// Per-channel standardization `(v - mean) / std`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Normalization {
    /// Conventional ImageNet statistics for `[0, 1]` RGB input.
    pub const IMAGENET: Normalization = Normalization {
        mean: [0.485, 0.456, 0.406],
        std: [0.229, 0.224, 0.225],
    };

    pub const IDENTITY: Normalization = Normalization { mean: [0.0; 3], std: [1.0; 3] };

    /// Pooled per-channel mean and standard deviation of a set of images.
    pub fn from_images<'a>(images: impl IntoIterator<Item = &'a Tensor3<f32>>) -> Result<Self> {
        let mut sum = [0f64; 3];
        let mut sq = [0f64; 3];
        let mut n = 0usize;
        for img in images {
            if img.channels != 3 {
                return Err(Error::Shape(format!("expected 3 channels, got {}", img.channels)));
            }
            for px in img.data.chunks_exact(3) {
                for c in 0..3 {
                    let v = f64::from(px[c]);
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
            n += img.height * img.width;
        }
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let mut out = Normalization::IDENTITY;
        for c in 0..3 {
            let m = sum[c] / n as f64;
            let var = (sq[c] / n as f64 - m * m).max(0.0);
            out.mean[c] = m as f32;
            out.std[c] = (var.sqrt() as f32).max(1e-6);
        }
        Ok(out)
    }

    pub fn apply(&self, img: &mut Tensor3<f32>) {
        for px in img.data.chunks_exact_mut(3) {
            for c in 0..3 {
                px[c] = (px[c] - self.mean[c]) / self.std[c];
            }
        }
    }
}

/// Bilinear resampling with corner-aligned grids: output pixel `x` samples
/// source position `x * (src_w - 1) / (dst_w - 1)`.
pub fn resize_bilinear(img: &Tensor3<f32>, dst_w: usize, dst_h: usize) -> Result<Tensor3<f32>> {
    if img.width == 0 || img.height == 0 || dst_w == 0 || dst_h == 0 {
        return Err(Error::Shape(format!(
            "cannot resize {}x{} to {dst_w}x{dst_h}",
            img.width, img.height
        )));
    }
    if img.width == dst_w && img.height == dst_h {
        return Ok(img.clone());
    }
    let c = img.channels;
    let axis = |dst: usize, src: usize| -> Vec<(usize, usize, f32)> {
        (0..dst)
            .map(|i| {
                let pos = if dst == 1 { 0.0 } else { i as f64 * (src - 1) as f64 / (dst - 1) as f64 };
                let i0 = (pos.floor() as usize).min(src - 1);
                let i1 = (i0 + 1).min(src - 1);
                (i0, i1, (pos - i0 as f64) as f32)
            })
            .collect()
    };
    let xs = axis(dst_w, img.width);
    let ys = axis(dst_h, img.height);
    let mut out = Tensor3::zeros(dst_h, dst_w, c);
    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            for ch in 0..c {
                let top = img.get(y0, x0, ch) * (1.0 - fx) + img.get(y0, x1, ch) * fx;
                let bot = img.get(y1, x0, ch) * (1.0 - fx) + img.get(y1, x1, ch) * fx;
                out.set(oy, ox, ch, top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Ok(out)
}

/// Resize to the network resolution, standardize, and bring the boxes into
/// the resized frame. Boxes that end up with no area inside the image are
/// dropped (and logged).
pub fn preprocess(
    image: &Tensor3<f32>,
    gts: &[BBox],
    target_w: usize,
    target_h: usize,
    norm: &Normalization,
    id: &str,
) -> Result<Sample> {
    if !target_w.is_multiple_of(NET_STRIDE) || !target_h.is_multiple_of(NET_STRIDE) {
        return Err(Error::Config(format!(
            "target size {target_w}x{target_h} is not a multiple of {NET_STRIDE}"
        )));
    }
    if image.width == 0 || image.height == 0 {
        return Err(Error::Shape(format!("{id}: image has zero size")));
    }
    let mut resized = resize_bilinear(image, target_w, target_h)?;
    norm.apply(&mut resized);

    let sx = target_w as f64 / image.width as f64;
    let sy = target_h as f64 / image.height as f64;
    let mut kept = Vec::with_capacity(gts.len());
    for b in gts {
        let c = clip_to_image(&b.scale(sx, sy), target_w as f64, target_h as f64);
        if area(&c) > 0.0 {
            kept.push(c);
        } else {
            log::warn!("{id}: dropping box {b:?}, empty after resize and clipping");
        }
    }
    Ok(Sample { image: resized, gts: kept, id: id.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Tensor3<f32> {
        let data = (0..h * w * 3).map(|i| (i % 251) as f32 / 251.0).collect();
        Tensor3::from_vec(h, w, 3, data).unwrap()
    }

    #[test]
    fn identity_preprocess() {
        let img = ramp(48, 64);
        let gts = [BBox::new(3.0, 4.0, 20.0, 30.0)];
        let s = preprocess(&img, &gts, 64, 48, &Normalization::IDENTITY, "x").unwrap();
        assert_eq!(s.image, img);
        assert_eq!(s.gts, gts.to_vec());
    }

    #[test]
    fn downscale_boxes() {
        let img = Tensor3::zeros(960, 1280, 3);
        let s = preprocess(&img, &[BBox::new(100.0, 100.0, 200.0, 200.0)], 640, 480, &Normalization::IDENTITY, "x")
            .unwrap();
        assert_eq!(s.gts, vec![BBox::new(50.0, 50.0, 100.0, 100.0)]);
        assert_eq!(s.image.shape(), (480, 640, 3));
    }

    #[test]
    fn constant_image_standardizes_to_zero() {
        let img = Tensor3::from_vec(32, 32, 3, vec![0.4f32; 32 * 32 * 3]).unwrap();
        let norm = Normalization { mean: [0.4; 3], std: [0.2; 3] };
        let s = preprocess(&img, &[], 32, 32, &norm, "x").unwrap();
        assert!(s.image.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn boxes_clipped_and_dropped() {
        let img = Tensor3::zeros(32, 32, 3);
        let gts = [BBox::new(-4.0, 2.0, 10.0, 40.0), BBox::new(40.0, 0.0, 50.0, 10.0)];
        let s = preprocess(&img, &gts, 32, 32, &Normalization::IDENTITY, "x").unwrap();
        assert_eq!(s.gts, vec![BBox::new(0.0, 2.0, 10.0, 32.0)]);
    }

    #[test]
    fn rejects_bad_sizes() {
        let img = Tensor3::zeros(32, 32, 3);
        assert!(preprocess(&img, &[], 40, 32, &Normalization::IDENTITY, "x").is_err());
        let empty = Tensor3::zeros(0, 0, 3);
        assert!(preprocess(&empty, &[], 32, 32, &Normalization::IDENTITY, "x").is_err());
    }

    #[test]
    fn resize_preserves_corners() {
        let img = ramp(10, 14);
        let r = resize_bilinear(&img, 27, 19).unwrap();
        assert_eq!(r.pixel(0, 0), img.pixel(0, 0));
        assert_eq!(r.pixel(18, 26), img.pixel(9, 13));
    }

    #[test]
    fn dataset_statistics() {
        let a = Tensor3::from_vec(1, 2, 3, vec![0.0, 0.5, 1.0, 1.0, 0.5, 1.0]).unwrap();
        let n = Normalization::from_images([&a]).unwrap();
        assert_eq!(n.mean, [0.5, 0.5, 1.0]);
        assert_eq!(n.std[0], 0.5);
        assert_eq!(n.std[1], 1e-6);
    }
}
