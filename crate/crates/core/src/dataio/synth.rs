//! Synthetic "crowd" scenes: bright filled ellipses on a dark noisy
//! background, with the ellipses' bounding boxes as ground truth.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::annotations::{format_annotations, AnnotationRecord};
use super::netpbm::{encode_ppm, RgbImage};
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

/// Subsamples per pixel axis when rasterizing ellipses.
const SUPERSAMPLE: usize = 4;
const PLACEMENT_ATTEMPTS: usize = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub image_w: usize,
    pub image_h: usize,
    /// Heads per image, inclusive range.
    pub count_min: usize,
    pub count_max: usize,
    /// Head width in pixels, inclusive range. Heights vary by up to 15%.
    pub size_min: usize,
    pub size_max: usize,
    /// Standard deviation of additive pixel noise (in `[0, 1]` intensity units).
    pub noise: f64,
    /// Largest IoU allowed between two heads of one image.
    pub max_overlap_iou: f64,
    pub rng_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            image_w: 128,
            image_h: 128,
            count_min: 1,
            count_max: 5,
            size_min: 16,
            size_max: 48,
            noise: 0.05,
            max_overlap_iou: 0.3,
            rng_seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count_min > self.count_max || self.size_min > self.size_max {
            return Err(Error::Config("synthetic count/size ranges are empty".into()));
        }
        if self.size_min == 0 || self.size_max > self.image_w.min(self.image_h) {
            return Err(Error::Config(format!(
                "head sizes {}..={} do not fit a {}x{} image",
                self.size_min, self.size_max, self.image_w, self.image_h
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("noise level {} is invalid", self.noise)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthImage {
    pub id: String,
    pub image: RgbImage,
    pub gts: Vec<BBox>,
}

/// Fraction of the pixel `(px, py)` covered by the ellipse inscribed in `b`.
fn coverage(b: &BBox, px: usize, py: usize) -> f64 {
    let (cx, cy) = b.center();
    let (rx, ry) = (0.5 * b.width(), 0.5 * b.height());
    let mut hits = 0;
    for sy in 0..SUPERSAMPLE {
        let y = py as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64;
        for sx in 0..SUPERSAMPLE {
            let x = px as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64;
            let u = (x - cx) / rx;
            let v = (y - cy) / ry;
            if u * u + v * v <= 1.0 {
                hits += 1;
            }
        }
    }
    hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64
}

fn pixel_span(lo: f64, hi: f64) -> std::ops::Range<usize> {
    (lo.floor().max(0.0) as usize)..(hi.ceil().max(0.0) as usize)
}

/// Bounding box of the pixels the rasterized ellipse for `gt` touches.
pub fn head_extent(gt: &BBox) -> BBox {
    let mut ext: Option<BBox> = None;
    for py in pixel_span(gt.y1, gt.y2) {
        for px in pixel_span(gt.x1, gt.x2) {
            if coverage(gt, px, py) > 0.0 {
                let p = BBox::new(px as f64, py as f64, px as f64 + 1.0, py as f64 + 1.0);
                ext = Some(match ext {
                    None => p,
                    Some(e) => BBox::new(e.x1.min(p.x1), e.y1.min(p.y1), e.x2.max(p.x2), e.y2.max(p.y2)),
                });
            }
        }
    }
    ext.unwrap_or_default()
}

fn place_heads(cfg: &SynthConfig, rng: &mut ChaCha8Rng, k: usize) -> Result<Vec<BBox>> {
    let mut placed: Vec<BBox> = Vec::with_capacity(k);
    for _ in 0..k {
        let mut ok = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let w = rng.random_range(cfg.size_min..=cfg.size_max);
            let stretch: f64 = rng.random_range(0.85..1.15);
            let h = ((w as f64 * stretch).round() as usize).clamp(cfg.size_min, cfg.size_max);
            let x = rng.random_range(0..=cfg.image_w - w);
            let y = rng.random_range(0..=cfg.image_h - h);
            let b = BBox::new(x as f64, y as f64, (x + w) as f64, (y + h) as f64);
            if placed.iter().all(|p| iou(p, &b) <= cfg.max_overlap_iou) {
                placed.push(b);
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(Error::Placement(format!(
                "gave up on head {} of {k} after {PLACEMENT_ATTEMPTS} attempts",
                placed.len() + 1
            )));
        }
    }
    Ok(placed)
}

fn render(cfg: &SynthConfig, rng: &mut ChaCha8Rng, heads: &[BBox]) -> RgbImage {
    let (w, h) = (cfg.image_w, cfg.image_h);
    let base: f64 = rng.random_range(0.05..0.25);
    let mut canvas = vec![base; w * h * 3];
    for b in heads {
        let color: [f64; 3] = [
            rng.random_range(0.6..1.0),
            rng.random_range(0.6..1.0),
            rng.random_range(0.6..1.0),
        ];
        for py in pixel_span(b.y1, b.y2) {
            for px in pixel_span(b.x1, b.x2) {
                let a = coverage(b, px, py);
                if a > 0.0 {
                    let o = (py * w + px) * 3;
                    for c in 0..3 {
                        canvas[o + c] = canvas[o + c] * (1.0 - a) + color[c] * a;
                    }
                }
            }
        }
    }
    if cfg.noise > 0.0 {
        let dist = Normal::new(0.0, cfg.noise).expect("validated noise level");
        for v in canvas.iter_mut() {
            *v += dist.sample(rng);
        }
    }
    let data = canvas
        .into_iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    RgbImage { width: w, height: h, data }
}

/// Generate `n` scenes from one seeded stream.
pub fn synth_generate(cfg: &SynthConfig, n: usize) -> Result<Vec<SynthImage>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    (0..n)
        .map(|i| {
            let k = rng.random_range(cfg.count_min..=cfg.count_max);
            let gts = place_heads(cfg, &mut rng, k)?;
            let image = render(cfg, &mut rng, &gts);
            Ok(SynthImage { id: format!("synth_{i:05}.ppm"), image, gts })
        })
        .collect()
}

/// Write every image as a PPM under `dir` and an annotation list referencing
/// them by file name. Returns the annotation file path.
pub fn write_synth_dataset(dir: &Path, images: &[SynthImage], annotation_name: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut records = Vec::with_capacity(images.len());
    for img in images {
        fs::write(dir.join(&img.id), encode_ppm(&img.image))?;
        records.push(AnnotationRecord { path: img.id.clone(), boxes: img.gts.clone() });
    }
    let path = dir.join(annotation_name);
    fs::write(&path, format_annotations(&records))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::inside_image;

    #[test]
    fn single_head_scenes() {
        let cfg = SynthConfig { count_min: 1, count_max: 1, ..Default::default() };
        let imgs = synth_generate(&cfg, 20).unwrap();
        assert!(imgs.iter().all(|i| i.gts.len() == 1));
    }

    #[test]
    fn seeded() {
        let cfg = SynthConfig { rng_seed: 9, ..Default::default() };
        assert_eq!(synth_generate(&cfg, 5).unwrap(), synth_generate(&cfg, 5).unwrap());
        let other = SynthConfig { rng_seed: 10, ..Default::default() };
        assert_ne!(synth_generate(&cfg, 5).unwrap(), synth_generate(&other, 5).unwrap());
    }

    #[test]
    fn mean_head_count() {
        let imgs = synth_generate(&SynthConfig::default(), 500).unwrap();
        let mean = imgs.iter().map(|i| i.gts.len()).sum::<usize>() as f64 / 500.0;
        assert!((2.6..=3.4).contains(&mean), "{mean}");
    }

    #[test]
    fn boxes_valid_and_separated() {
        let cfg = SynthConfig::default();
        for img in synth_generate(&cfg, 100).unwrap() {
            for (i, a) in img.gts.iter().enumerate() {
                assert!(a.is_proper());
                assert!(inside_image(a, 128.0, 128.0));
                assert!(iou(a, &head_extent(a)) >= 0.9);
                for b in &img.gts[i + 1..] {
                    assert!(iou(a, b) <= cfg.max_overlap_iou);
                }
            }
        }
    }

    #[test]
    fn heads_are_brighter_than_background() {
        let cfg = SynthConfig { count_min: 1, count_max: 1, noise: 0.0, ..Default::default() };
        let img = &synth_generate(&cfg, 1).unwrap()[0];
        let (cx, cy) = img.gts[0].center();
        let center = img.image.data[(cy as usize * 128 + cx as usize) * 3];
        let corner_gt = img.gts[0];
        // some corner of the image lies outside the head
        let corner = if corner_gt.x1 > 2.0 || corner_gt.y1 > 2.0 { 0 } else { (127 * 128 + 127) * 3 };
        assert!(center > img.image.data[corner] + 80);
    }

    #[test]
    fn impossible_placement_errors() {
        let cfg = SynthConfig {
            image_w: 32,
            image_h: 32,
            count_min: 20,
            count_max: 20,
            size_min: 30,
            size_max: 32,
            max_overlap_iou: 0.0,
            ..Default::default()
        };
        assert!(matches!(synth_generate(&cfg, 1), Err(Error::Placement(_))));
    }

    #[test]
    fn bad_config() {
        let cfg = SynthConfig { size_max: 200, ..Default::default() };
        assert!(matches!(synth_generate(&cfg, 1), Err(Error::Config(_))));
    }
}
