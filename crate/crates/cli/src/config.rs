//! Flat run configuration: `key = value` lines, `#` starts a comment.

use std::path::PathBuf;
use std::str::FromStr;

use headdet::anchors::AssignmentConfig;
use headdet::dataio::{Normalization, SynthConfig};
use headdet::net::{BackboneInit, NetConfig};
use headdet::postprocess::PostprocessConfig;
use headdet::train::TrainConfig;
use headdet::{Error, Result};

/// How input images are standardized before the network sees them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalizationMode {
    /// Conventional ImageNet channel statistics.
    Imagenet,
    /// Statistics of the training images, stored in the checkpoint.
    Dataset,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub image_w: usize,
    pub image_h: usize,
    pub anchor_sizes: Vec<f64>,
    pub assign: AssignmentConfig,
    pub widths: Vec<usize>,
    pub conv6_channels: usize,
    pub init_sigma: f64,
    pub backbone_init: BackboneInit,
    pub normalization: NormalizationMode,
    pub train: TrainConfig,
    pub post: PostprocessConfig,
    pub eval_iou: f64,
    pub synth: SynthConfig,
    pub synth_count: usize,
    pub train_annotations: Option<PathBuf>,
    pub test_annotations: Option<PathBuf>,
    /// Image paths in annotation files are relative to this directory, or to
    /// the annotation file's own directory when unset.
    pub image_root: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub rng_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let net = NetConfig::default();
        Self {
            image_w: 640,
            image_h: 480,
            anchor_sizes: vec![16.0, 32.0],
            assign: AssignmentConfig::default(),
            widths: net.widths,
            conv6_channels: net.conv6_channels,
            init_sigma: net.init_sigma,
            backbone_init: net.backbone_init,
            normalization: NormalizationMode::Imagenet,
            train: TrainConfig::default(),
            post: PostprocessConfig::default(),
            eval_iou: 0.5,
            synth: SynthConfig::default(),
            synth_count: 100,
            train_annotations: None,
            test_annotations: None,
            image_root: None,
            checkpoint: None,
            out_dir: PathBuf::from("out"),
            rng_seed: 0,
        }
    }
}

pub const KEYS: &[&str] = &[
    "image_w",
    "image_h",
    "anchor_sizes",
    "pos_iou",
    "neg_iou",
    "batch_size",
    "pos_fraction",
    "widths",
    "conv6_channels",
    "init_sigma",
    "backbone_init",
    "normalization",
    "lr",
    "lr_decay",
    "decay_after_epochs",
    "epochs",
    "weight_decay",
    "nms_iou",
    "score_threshold",
    "max_detections",
    "eval_iou",
    "synth_w",
    "synth_h",
    "synth_count",
    "synth_heads_min",
    "synth_heads_max",
    "synth_size_min",
    "synth_size_max",
    "synth_noise",
    "synth_max_overlap",
    "train_annotations",
    "test_annotations",
    "image_root",
    "checkpoint",
    "out_dir",
    "rng_seed",
];

fn scalar<T: FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("expected a {}, got \"{v}\"", short_type::<T>()))
}

fn short_type<T>() -> &'static str {
    let name = std::any::type_name::<T>();
    match name {
        "f64" => "number",
        "usize" | "u64" => "non-negative integer",
        _ => name,
    }
}

fn list<T: FromStr>(v: &str) -> std::result::Result<Vec<T>, String> {
    let items: Vec<&str> = v.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        return Err("expected a non-empty list".into());
    }
    items.into_iter().map(scalar).collect()
}

impl RunConfig {
    /// Set one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value.trim();
        match key {
            "image_w" => self.image_w = scalar(v)?,
            "image_h" => self.image_h = scalar(v)?,
            "anchor_sizes" => self.anchor_sizes = list(v)?,
            "pos_iou" => self.assign.pos_iou = scalar(v)?,
            "neg_iou" => self.assign.neg_iou = scalar(v)?,
            "batch_size" => self.assign.batch_size = scalar(v)?,
            "pos_fraction" => self.assign.pos_fraction = scalar(v)?,
            "widths" => self.widths = list(v)?,
            "conv6_channels" => self.conv6_channels = scalar(v)?,
            "init_sigma" => self.init_sigma = scalar(v)?,
            "backbone_init" => {
                self.backbone_init = match v {
                    "he" => BackboneInit::He,
                    "gaussian" => BackboneInit::Gaussian,
                    _ => return Err(format!("expected he or gaussian, got \"{v}\"")),
                }
            }
            "normalization" => {
                self.normalization = match v {
                    "imagenet" => NormalizationMode::Imagenet,
                    "dataset" => NormalizationMode::Dataset,
                    "identity" => NormalizationMode::Identity,
                    _ => return Err(format!("expected imagenet, dataset or identity, got \"{v}\"")),
                }
            }
            "lr" => self.train.lr = scalar(v)?,
            "lr_decay" => self.train.lr_decay = scalar(v)?,
            "decay_after_epochs" => self.train.decay_after_epochs = scalar(v)?,
            "epochs" => self.train.epochs = scalar(v)?,
            "weight_decay" => self.train.weight_decay = scalar(v)?,
            "nms_iou" => self.post.nms_iou = scalar(v)?,
            "score_threshold" => self.post.score_threshold = scalar(v)?,
            "max_detections" => self.post.max_detections = scalar(v)?,
            "eval_iou" => self.eval_iou = scalar(v)?,
            "synth_w" => self.synth.image_w = scalar(v)?,
            "synth_h" => self.synth.image_h = scalar(v)?,
            "synth_count" => self.synth_count = scalar(v)?,
            "synth_heads_min" => self.synth.count_min = scalar(v)?,
            "synth_heads_max" => self.synth.count_max = scalar(v)?,
            "synth_size_min" => self.synth.size_min = scalar(v)?,
            "synth_size_max" => self.synth.size_max = scalar(v)?,
            "synth_noise" => self.synth.noise = scalar(v)?,
            "synth_max_overlap" => self.synth.max_overlap_iou = scalar(v)?,
            "train_annotations" => self.train_annotations = Some(PathBuf::from(v)),
            "test_annotations" => self.test_annotations = Some(PathBuf::from(v)),
            "image_root" => self.image_root = Some(PathBuf::from(v)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(v)),
            "out_dir" => self.out_dir = PathBuf::from(v),
            "rng_seed" => self.rng_seed = scalar(v)?,
            _ => return Err(format!("unknown key \"{key}\"")),
        }
        Ok(())
    }

    /// Apply `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(Error::Parse { line, msg: format!("expected key = value, got \"{content}\"") });
            };
            self.set(key.trim(), value).map_err(|msg| Error::Parse { line, msg })?;
        }
        Ok(())
    }

    /// Apply a `key=value` override given on the command line.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override \"{kv}\" is not key=value")))?;
        self.set(key.trim(), value).map_err(|m| Error::Config(format!("{}: {m}", key.trim())))
    }

    pub fn net_config(&self, norm: Normalization) -> NetConfig {
        NetConfig {
            widths: self.widths.clone(),
            conv6_channels: self.conv6_channels,
            n_anchors: self.anchor_sizes.len(),
            init_sigma: self.init_sigma,
            backbone_init: self.backbone_init,
            rng_seed: self.rng_seed,
            input_mean: norm.mean,
            input_std: norm.std,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.rng_seed, ..self.train.clone() }
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig { rng_seed: self.rng_seed, ..self.synth.clone() }
    }
}

/// Defaults overlaid with the contents of a config file.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    cfg.apply_text(text)?;
    Ok(cfg)
}
