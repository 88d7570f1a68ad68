//! Flat `section.key = value` pipeline configuration.

use std::fmt::Display;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::augment::PerturbMode;
use crate::error::{Error, Result};
use crate::features::UpsampleMode;
use crate::generator::{GeneratorSpec, RareLabel};
use crate::pipeline::KMeansBaselineConfig;
use crate::segmenter::{InputMode, OneShotConfig, SegmenterKind, SegmenterSpec};
use crate::swav::{AssignmentMarginal, SwavTrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub test_images: usize,
    pub thresholds: Vec<f64>,
    /// Foreground labels for FG-IoU; every non-background label when `None`.
    pub fg_labels: Option<Vec<u8>>,
    pub iou_threshold: f64,
    pub throughput_images: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            test_images: 200,
            thresholds: (0..=20).map(|i| i as f64 / 20.0).collect(),
            fg_labels: None,
            iou_threshold: 0.5,
            throughput_images: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathsConfig {
    pub workdir: String,
    pub checkpoint: String,
    pub segmenter: String,
    pub one_shot_sample: String,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            workdir: "work".into(),
            checkpoint: "swav.ckpt".into(),
            segmenter: "segmenter.ckpt".into(),
            one_shot_sample: "one_shot".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub generator: GeneratorSpec,
    /// Rare-label parameters, applied to `generator` when `rare_enabled`.
    pub rare: RareLabel,
    pub rare_enabled: bool,
    pub swav: SwavTrainConfig,
    /// Keeps `swav.sinkhorn.epsilon` at `20/K` as `K` changes.
    pub epsilon_auto: bool,
    pub segmenter: SegmenterSpec,
    pub one_shot: OneShotConfig,
    pub kmeans: KMeansBaselineConfig,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let generator = GeneratorSpec::default();
        let segmenter = SegmenterSpec {
            class_count: generator.class_count(),
            ..Default::default()
        };
        Self {
            rare: generator.rare_label.unwrap_or_default(),
            rare_enabled: generator.rare_label.is_some(),
            generator,
            swav: SwavTrainConfig::default(),
            epsilon_auto: false,
            segmenter,
            one_shot: OneShotConfig::default(),
            kmeans: KMeansBaselineConfig::default(),
            eval: EvalConfig::default(),
            paths: PathsConfig::default(),
            seed: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::config(format!(
            "{key}: expected a boolean, got {value:?}"
        ))),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn parse_optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value == "none" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn join<T: Display>(values: &[T]) -> String {
    values
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn optional<T: Display>(v: &Option<T>) -> String {
    v.as_ref().map_or("none".into(), ToString::to_string)
}

fn choice<'a, T: Copy>(key: &str, value: &str, options: &[(&'a str, T)]) -> Result<T> {
    options
        .iter()
        .find(|(name, _)| *name == value)
        .map(|(_, v)| *v)
        .ok_or_else(|| {
            let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
            Error::config(format!("{key}: expected one of {names:?}, got {value:?}"))
        })
}

fn name_of<T: PartialEq>(v: T, options: &[(&'static str, T)]) -> &'static str {
    options
        .iter()
        .find(|(_, o)| *o == v)
        .map(|(n, _)| *n)
        .expect("every variant is named")
}

const PERTURB: [(&str, PerturbMode); 2] = [
    ("interpolate", PerturbMode::Interpolate),
    ("additive", PerturbMode::Additive),
];
const UPSAMPLE: [(&str, UpsampleMode); 2] = [
    ("nearest", UpsampleMode::Nearest),
    ("bilinear", UpsampleMode::Bilinear),
];
const MARGINAL: [(&str, AssignmentMarginal); 2] = [
    ("uniform", AssignmentMarginal::Uniform),
    ("pixel", AssignmentMarginal::PixelDistribution),
];
const KIND: [(&str, SegmenterKind); 2] = [("mlp", SegmenterKind::Mlp), ("fcn", SegmenterKind::Fcn)];
const INPUT: [(&str, InputMode); 3] = [
    ("projected", InputMode::Projected),
    ("raw", InputMode::Raw),
    ("assignment", InputMode::Assignment),
];

impl PipelineConfig {
    /// Every key with its current value, in serialization order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let g = &self.generator;
        let rare = self.rare;
        let s = &self.swav;
        let seg = &self.segmenter;
        vec![
            ("run.seed", self.seed.to_string()),
            ("generator.layer_count", g.layer_count.to_string()),
            ("generator.base_resolution", g.base_resolution.to_string()),
            ("generator.latent_dim", g.latent_dim.to_string()),
            ("generator.channels", join(&g.channels_per_layer)),
            ("generator.labels", g.semantic_label_count.to_string()),
            ("generator.rare_label", self.rare_enabled.to_string()),
            ("generator.rare_trigger", rare.trigger_component.to_string()),
            ("generator.rare_threshold", rare.threshold.to_string()),
            ("generator.seed", g.seed.to_string()),
            ("augment.mode", name_of(s.augment.mode, &PERTURB).into()),
            ("augment.tau_p", s.augment.tau_p.to_string()),
            ("augment.sigma_d", s.augment.sigma_d.to_string()),
            ("augment.max_layer", optional(&s.augment.max_layer)),
            ("swav.temperature", s.temperature.to_string()),
            ("swav.epochs", s.epochs.to_string()),
            ("swav.images_per_epoch", s.images_per_epoch.to_string()),
            ("swav.prototypes", s.prototypes.to_string()),
            ("swav.feature_dim", s.feature_dim.to_string()),
            (
                "swav.epsilon",
                if self.epsilon_auto {
                    "auto".into()
                } else {
                    s.sinkhorn.epsilon.to_string()
                },
            ),
            (
                "swav.sinkhorn_iterations",
                s.sinkhorn.iterations.to_string(),
            ),
            ("swav.sinkhorn_tolerance", optional(&s.sinkhorn.tolerance)),
            ("swav.marginal", name_of(s.marginal, &MARGINAL).into()),
            ("swav.local_loss_enabled", s.local_loss_enabled.to_string()),
            ("swav.learning_rate", s.learning_rate.to_string()),
            ("swav.momentum", s.momentum.to_string()),
            ("swav.lars_coefficient", s.lars_coefficient.to_string()),
            ("swav.patch_size", s.patch_size.to_string()),
            ("swav.patches_per_image", s.patches_per_image.to_string()),
            ("swav.upsample", name_of(s.upsample, &UPSAMPLE).into()),
            ("swav.leaky_slope", s.leaky_slope.to_string()),
            ("segmenter.kind", name_of(seg.kind, &KIND).into()),
            ("segmenter.layers", seg.layer_count.to_string()),
            ("segmenter.input", name_of(seg.input_mode, &INPUT).into()),
            ("segmenter.hidden_width", seg.hidden_width.to_string()),
            ("segmenter.leaky_slope", seg.leaky_slope.to_string()),
            ("segmenter.epochs", self.one_shot.epochs.to_string()),
            (
                "segmenter.learning_rate",
                self.one_shot.learning_rate.to_string(),
            ),
            ("segmenter.beta1", self.one_shot.beta1.to_string()),
            ("segmenter.beta2", self.one_shot.beta2.to_string()),
            ("kmeans.k", self.kmeans.k.to_string()),
            ("kmeans.iterations", self.kmeans.iterations.to_string()),
            ("kmeans.images", self.kmeans.images.to_string()),
            (
                "kmeans.pixels_per_image",
                self.kmeans.pixels_per_image.to_string(),
            ),
            ("eval.test_images", self.eval.test_images.to_string()),
            ("eval.thresholds", join(&self.eval.thresholds)),
            (
                "eval.fg_labels",
                self.eval
                    .fg_labels
                    .as_ref()
                    .map_or("auto".into(), |v| join(v)),
            ),
            ("eval.iou_threshold", self.eval.iou_threshold.to_string()),
            (
                "eval.throughput_images",
                self.eval.throughput_images.to_string(),
            ),
            ("paths.workdir", self.paths.workdir.clone()),
            ("paths.checkpoint", self.paths.checkpoint.clone()),
            ("paths.segmenter", self.paths.segmenter.clone()),
            ("paths.one_shot_sample", self.paths.one_shot_sample.clone()),
        ]
    }

    pub fn keys() -> Vec<&'static str> {
        Self::default()
            .entries()
            .into_iter()
            .map(|(k, _)| k)
            .collect()
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.entries()
            .into_iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| v)
    }

    /// Assigns one key. Unknown keys and unparsable values are config errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let g = &mut self.generator;
        let s = &mut self.swav;
        match key {
            "run.seed" => self.seed = parse(key, v)?,
            "generator.layer_count" => g.layer_count = parse(key, v)?,
            "generator.base_resolution" => g.base_resolution = parse(key, v)?,
            "generator.latent_dim" => g.latent_dim = parse(key, v)?,
            "generator.channels" => g.channels_per_layer = parse_list(key, v)?,
            "generator.labels" => g.semantic_label_count = parse(key, v)?,
            "generator.rare_label" => self.rare_enabled = parse_bool(key, v)?,
            "generator.rare_trigger" => self.rare.trigger_component = parse(key, v)?,
            "generator.rare_threshold" => self.rare.threshold = parse(key, v)?,
            "generator.seed" => g.seed = parse(key, v)?,
            "augment.mode" => s.augment.mode = choice(key, v, &PERTURB)?,
            "augment.tau_p" => s.augment.tau_p = parse(key, v)?,
            "augment.sigma_d" => s.augment.sigma_d = parse(key, v)?,
            "augment.max_layer" => s.augment.max_layer = parse_optional(key, v)?,
            "swav.temperature" => s.temperature = parse(key, v)?,
            "swav.epochs" => s.epochs = parse(key, v)?,
            "swav.images_per_epoch" => s.images_per_epoch = parse(key, v)?,
            "swav.prototypes" => s.prototypes = parse(key, v)?,
            "swav.feature_dim" => s.feature_dim = parse(key, v)?,
            "swav.epsilon" => {
                if v == "auto" {
                    self.epsilon_auto = true;
                } else {
                    s.sinkhorn.epsilon = parse(key, v)?;
                    self.epsilon_auto = false;
                }
            }
            "swav.sinkhorn_iterations" => s.sinkhorn.iterations = parse(key, v)?,
            "swav.sinkhorn_tolerance" => s.sinkhorn.tolerance = parse_optional(key, v)?,
            "swav.marginal" => s.marginal = choice(key, v, &MARGINAL)?,
            "swav.local_loss_enabled" => s.local_loss_enabled = parse_bool(key, v)?,
            "swav.learning_rate" => s.learning_rate = parse(key, v)?,
            "swav.momentum" => s.momentum = parse(key, v)?,
            "swav.lars_coefficient" => s.lars_coefficient = parse(key, v)?,
            "swav.patch_size" => s.patch_size = parse(key, v)?,
            "swav.patches_per_image" => s.patches_per_image = parse(key, v)?,
            "swav.upsample" => s.upsample = choice(key, v, &UPSAMPLE)?,
            "swav.leaky_slope" => s.leaky_slope = parse(key, v)?,
            "segmenter.kind" => self.segmenter.kind = choice(key, v, &KIND)?,
            "segmenter.layers" => self.segmenter.layer_count = parse(key, v)?,
            "segmenter.input" => self.segmenter.input_mode = choice(key, v, &INPUT)?,
            "segmenter.hidden_width" => self.segmenter.hidden_width = parse(key, v)?,
            "segmenter.leaky_slope" => self.segmenter.leaky_slope = parse(key, v)?,
            "segmenter.epochs" => self.one_shot.epochs = parse(key, v)?,
            "segmenter.learning_rate" => self.one_shot.learning_rate = parse(key, v)?,
            "segmenter.beta1" => self.one_shot.beta1 = parse(key, v)?,
            "segmenter.beta2" => self.one_shot.beta2 = parse(key, v)?,
            "kmeans.k" => self.kmeans.k = parse(key, v)?,
            "kmeans.iterations" => self.kmeans.iterations = parse(key, v)?,
            "kmeans.images" => self.kmeans.images = parse(key, v)?,
            "kmeans.pixels_per_image" => self.kmeans.pixels_per_image = parse(key, v)?,
            "eval.test_images" => self.eval.test_images = parse(key, v)?,
            "eval.thresholds" => self.eval.thresholds = parse_list(key, v)?,
            "eval.fg_labels" => {
                self.eval.fg_labels = if v == "auto" {
                    None
                } else {
                    Some(parse_list(key, v)?)
                }
            }
            "eval.iou_threshold" => self.eval.iou_threshold = parse(key, v)?,
            "eval.throughput_images" => self.eval.throughput_images = parse(key, v)?,
            "paths.workdir" => self.paths.workdir = v.to_string(),
            "paths.checkpoint" => self.paths.checkpoint = v.to_string(),
            "paths.segmenter" => self.paths.segmenter = v.to_string(),
            "paths.one_shot_sample" => self.paths.one_shot_sample = v.to_string(),
            _ => return Err(Error::config(format!("unknown config key {key:?}"))),
        }
        self.sync();
        Ok(())
    }

    fn sync(&mut self) {
        self.generator.rare_label = self.rare_enabled.then_some(self.rare);
        if self.epsilon_auto {
            self.swav.sinkhorn.epsilon = 20.0 / self.swav.prototypes.max(1) as f64;
        }
        self.segmenter.class_count = self.generator.class_count();
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override {assignment:?} is not key=value")))?;
        self.set(k.trim(), v)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::config(format!(
                    "line {}: expected `section.key = value`",
                    lineno + 1
                ))
            })?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// First 16 hex digits of the SHA-256 of [`to_text`](Self::to_text).
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.swav.validate()?;
        self.segmenter.validate()?;
        if self.one_shot.epochs == 0 || !(self.one_shot.learning_rate > 0.0) {
            return Err(Error::config(
                "segmenter epochs and learning rate must be positive",
            ));
        }
        if self.kmeans.k == 0 || self.kmeans.k > self.kmeans.images * self.kmeans.pixels_per_image {
            return Err(Error::config(
                "kmeans.k must be in 1..=images·pixels_per_image",
            ));
        }
        if !(self.eval.iou_threshold > 0.0 && self.eval.iou_threshold < 1.0) {
            return Err(Error::config("eval.iou_threshold must lie in (0, 1)"));
        }
        if let Some(fg) = &self.eval.fg_labels {
            let k = self.generator.class_count();
            if fg.iter().any(|&l| l as usize >= k) {
                return Err(Error::config(format!("eval.fg_labels must be below {k}")));
            }
        }
        if self.swav.patch_size > self.generator.output_resolution() {
            return Err(Error::config("swav.patch_size exceeds the image size"));
        }
        Ok(())
    }

    /// Foreground labels, defaulting to every label except background.
    pub fn fg_labels(&self) -> Vec<u8> {
        self.eval
            .fg_labels
            .clone()
            .unwrap_or_else(|| (1..self.generator.class_count() as u8).collect())
    }
}
