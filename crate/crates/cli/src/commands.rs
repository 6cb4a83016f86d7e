//! Subcommand bodies. Each takes a resolved [`RunConfig`] and writes its
//! outputs under `out_dir`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use headdet::anchors::AnchorConfig;
use headdet::checkpoint::{load_checkpoint, save_checkpoint};
use headdet::dataio::{
    format_detections, load_image, parse_annotations, parse_detections, preprocess, synth_generate,
    write_synth_dataset, AnnotationRecord, DetectionRecord, Normalization, Sample,
};
use headdet::evaluation::{match_detections, pr_curve, Detector, MatchResult, PrCurve};
use headdet::net::{init_params, NET_STRIDE};
use headdet::postprocess::Detection;
use headdet::receptive_field::{design_anchor_scales_with_aspect, AnchorDesign, RfState};
use headdet::tensor::Tensor3;
use headdet::train::{train as run_training, Model};

use crate::config::{NormalizationMode, RunConfig};

pub fn design_anchors(rf: usize, stride: usize, shrink: f64, n: usize, aspect: f64) -> Result<String> {
    let d: AnchorDesign = design_anchor_scales_with_aspect(RfState { rf, jump: stride }, shrink, n, aspect)?;
    let join = |v: Vec<String>| v.join(" ");
    Ok(format!(
        "receptive field {rf} px, stride {stride}, effective field {:.2} px\nscales {}\nsizes {}\n",
        d.effective_rf,
        join(d.scales.iter().map(|s| s.to_string()).collect()),
        join(d.sizes.iter().map(|s| s.to_string()).collect()),
    ))
}

/// Generate `synth_count` scenes into `out_dir/<name>/`; returns the
/// annotation file path.
pub fn make_synth(cfg: &RunConfig, name: &str) -> Result<PathBuf> {
    let images = synth_generate(&cfg.synth_config(), cfg.synth_count)?;
    let dir = cfg.out_dir.join(name);
    let path = write_synth_dataset(&dir, &images, "annotations.txt")
        .with_context(|| format!("writing synthetic set to {}", dir.display()))?;
    Ok(path)
}

struct Loaded {
    record: AnnotationRecord,
    image: Tensor3<f32>,
}

fn image_root(cfg: &RunConfig, annotations: &Path) -> PathBuf {
    cfg.image_root
        .clone()
        .unwrap_or_else(|| annotations.parent().map(Path::to_path_buf).unwrap_or_default())
}

fn load_split(cfg: &RunConfig, annotations: &Path) -> Result<Vec<Loaded>> {
    let text = fs::read_to_string(annotations).with_context(|| format!("reading {}", annotations.display()))?;
    let records = parse_annotations(&text).with_context(|| format!("parsing {}", annotations.display()))?;
    if records.is_empty() {
        bail!("{} lists no images", annotations.display());
    }
    let root = image_root(cfg, annotations);
    records
        .into_iter()
        .map(|record| {
            let p = root.join(&record.path);
            let bytes = fs::read(&p).with_context(|| format!("reading image {}", p.display()))?;
            let image = load_image(&bytes).with_context(|| format!("decoding {}", p.display()))?;
            Ok(Loaded { record, image })
        })
        .collect()
}

fn to_samples(cfg: &RunConfig, data: &[Loaded], norm: &Normalization) -> Result<Vec<Sample>> {
    data.iter()
        .map(|l| Ok(preprocess(&l.image, &l.record.boxes, cfg.image_w, cfg.image_h, norm, &l.record.path)?))
        .collect()
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a PathBuf> {
    p.as_ref().with_context(|| format!("no {key} given (set it in the config or on the command line)"))
}

pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub iterations: usize,
    pub final_loss: f64,
}

/// Train from `train_annotations`. Writes `epoch_NNN.ckpt` after every
/// epoch, `model.ckpt` at the end and `loss.csv` with one row per step.
pub fn train(cfg: &RunConfig) -> Result<TrainSummary> {
    let data = load_split(cfg, required(&cfg.train_annotations, "train_annotations")?)?;
    let norm = match cfg.normalization {
        NormalizationMode::Imagenet => Normalization::IMAGENET,
        NormalizationMode::Identity => Normalization::IDENTITY,
        NormalizationMode::Dataset => Normalization::from_images(data.iter().map(|l| &l.image))?,
    };
    let samples = to_samples(cfg, &data, &norm)?;
    let net = cfg.net_config(norm);
    let mut params = init_params::<f32>(&net)?;
    fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;

    let log = run_training(&mut params, &cfg.anchor_sizes, &samples, &cfg.train_config(), &cfg.assign, |e, p| {
        save_checkpoint(&cfg.out_dir.join(format!("epoch_{:03}.ckpt", e + 1)), &net, p)
    })?;

    let mut csv = String::from("iteration,total,cls_term,reg_term,lr\n");
    for r in &log {
        let _ = writeln!(csv, "{},{},{},{},{}", r.iteration, r.total, r.cls_term, r.reg_term, r.lr);
    }
    fs::write(cfg.out_dir.join("loss.csv"), csv)?;
    let checkpoint = cfg.out_dir.join("model.ckpt");
    save_checkpoint(&checkpoint, &net, &params)?;
    Ok(TrainSummary { checkpoint, iterations: log.len(), final_loss: log.last().map_or(f64::NAN, |r| r.total) })
}

fn load_model(cfg: &RunConfig) -> Result<Model> {
    let path = required(&cfg.checkpoint, "checkpoint")?;
    let (net, params) = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    if net.n_anchors != cfg.anchor_sizes.len() {
        bail!(
            "checkpoint has {} anchors per cell but anchor_sizes lists {}",
            net.n_anchors,
            cfg.anchor_sizes.len()
        );
    }
    AnchorConfig::new(NET_STRIDE, cfg.anchor_sizes.clone(), cfg.image_w, cfg.image_h).validate()?;
    Ok(Model { net, params, anchor_sizes: cfg.anchor_sizes.clone() })
}

/// Run the model over every image listed in `input` and return detections
/// in original image coordinates.
fn run_detector(cfg: &RunConfig, model: &Model, input: &Path, score_threshold: f64) -> Result<Vec<DetectionRecord>> {
    let data = load_split(cfg, input)?;
    let norm = Normalization { mean: model.net.input_mean, std: model.net.input_std };
    let samples = to_samples(cfg, &data, &norm)?;
    let post = headdet::postprocess::PostprocessConfig { score_threshold, ..cfg.post.clone() };
    post.validate()?;
    data.iter()
        .zip(&samples)
        .map(|(l, s)| {
            let sx = l.image.width as f64 / cfg.image_w as f64;
            let sy = l.image.height as f64 / cfg.image_h as f64;
            let detections = model
                .detect(s, &post)?
                .into_iter()
                .map(|d| Detection { bbox: d.bbox.scale(sx, sy), score: d.score })
                .collect();
            Ok(DetectionRecord { path: l.record.path.clone(), detections })
        })
        .collect()
}

/// Detect on `input` (default `test_annotations`) and write
/// `out_dir/detections.txt`.
pub fn detect(cfg: &RunConfig, input: Option<&Path>) -> Result<PathBuf> {
    let model = load_model(cfg)?;
    let input = match input {
        Some(p) => p.to_path_buf(),
        None => required(&cfg.test_annotations, "test_annotations")?.clone(),
    };
    let records = run_detector(cfg, &model, &input, cfg.post.score_threshold)?;
    fs::create_dir_all(&cfg.out_dir)?;
    let path = cfg.out_dir.join("detections.txt");
    fs::write(&path, format_detections(&records))?;
    Ok(path)
}

/// Pool matches over all images of the ground-truth list. Images absent from
/// the detection list count as having no detections.
pub fn evaluate_records(gts: &[AnnotationRecord], dets: &[DetectionRecord], iou_threshold: f64) -> Result<PrCurve> {
    let per_image: Vec<MatchResult> = gts
        .iter()
        .map(|g| {
            let d: &[Detection] = dets.iter().find(|r| r.path == g.path).map_or(&[], |r| &r.detections);
            match_detections(d, &g.boxes, iou_threshold)
        })
        .collect();
    Ok(pr_curve(&MatchResult::merge(&per_image))?)
}

/// Evaluate either a detection file or, without one, the checkpoint on
/// `test_annotations`. Writes `out_dir/pr.csv` and returns the curve.
pub fn eval(cfg: &RunConfig, detections: Option<&Path>) -> Result<PrCurve> {
    let test = required(&cfg.test_annotations, "test_annotations")?;
    let text = fs::read_to_string(test).with_context(|| format!("reading {}", test.display()))?;
    let gts = parse_annotations(&text).with_context(|| format!("parsing {}", test.display()))?;
    let dets = match detections {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            parse_detections(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => run_detector(cfg, &load_model(cfg)?, test, 0.0)?,
    };
    let curve = evaluate_records(&gts, &dets, cfg.eval_iou)?;
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("pr.csv"), curve.to_csv())?;
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use headdet::BBox;

    #[test]
    fn design_output() {
        let s = design_anchors(228, 16, 3.5, 2, 1.0).unwrap();
        assert!(s.contains("\nscales 2 4\n"), "{s}");
        assert!(s.contains("\nsizes 32 64\n"), "{s}");
    }

    #[test]
    fn missing_images_have_no_detections() {
        let gts = vec![
            AnnotationRecord { path: "a".into(), boxes: vec![BBox::new(0.0, 0.0, 4.0, 4.0)] },
            AnnotationRecord { path: "b".into(), boxes: vec![BBox::new(0.0, 0.0, 4.0, 4.0)] },
        ];
        let dets = vec![DetectionRecord {
            path: "a".into(),
            detections: vec![Detection { bbox: BBox::new(0.0, 0.0, 4.0, 4.0), score: 0.9 }],
        }];
        assert_eq!(evaluate_records(&gts, &dets, 0.5).unwrap().ap, 0.5);
    }
}
