//! End-to-end stages: clustering, one-shot training, on-the-fly inference and
//! evaluation, plus the K-means clustering baseline.

use rand::Rng;

use crate::cluster::{assign_nearest, kmeans_cluster};
use crate::error::{Error, Result};
use crate::features::{assemble_pixel_features, PixelFeatureMatrix, UpsampleMode};
use crate::generator::{GeneratedSample, Generator, GeneratorSpec, LatentMode};
use crate::mask::LabelMask;
use crate::metrics::{weighted_iou, SegReport};
use crate::rng::{derive_seed, rng_from, streams};
use crate::segmenter::{
    build_segmenter, predict_mask, segmenter_input, train_one_shot, InputMode, OneShotConfig,
    Segmenter, SegmenterSpec,
};
use crate::swav::{self, SwavModel, SwavTrainConfig, SwavTrainReport};
use crate::tensor::Tensor;

/// Turns generator features into segmenter input.
#[derive(Debug, Clone, PartialEq)]
pub enum Featurizer {
    Raw,
    Projected(SwavModel),
    Assignment(SwavModel),
    KMeans(KMeansFeaturizer),
}

impl Featurizer {
    pub fn for_mode(mode: InputMode, model: &SwavModel) -> Self {
        match mode {
            InputMode::Raw => Featurizer::Raw,
            InputMode::Projected => Featurizer::Projected(model.clone()),
            InputMode::Assignment => Featurizer::Assignment(model.clone()),
        }
    }

    pub fn width(&self, hidden_channels: usize) -> usize {
        match self {
            Featurizer::Raw => hidden_channels,
            Featurizer::Projected(m) => m.head.output_dim(),
            Featurizer::Assignment(m) => m.prototypes.k(),
            Featurizer::KMeans(k) => k.centroids.dims()[0],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Featurizer::Raw => "raw",
            Featurizer::Projected(_) => "projected",
            Featurizer::Assignment(_) => "assignment",
            Featurizer::KMeans(_) => "kmeans",
        }
    }

    pub fn input(&self, pf: &PixelFeatureMatrix) -> Result<Tensor> {
        match self {
            Featurizer::Raw => segmenter_input(InputMode::Raw, pf, None),
            Featurizer::Projected(m) => segmenter_input(InputMode::Projected, pf, Some(m)),
            Featurizer::Assignment(m) => segmenter_input(InputMode::Assignment, pf, Some(m)),
            Featurizer::KMeans(k) => k.one_hot(pf),
        }
    }
}

/// Hard K-means cluster memberships as one-hot channels.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFeaturizer {
    /// `k × C_hidden`.
    pub centroids: Tensor,
}

impl KMeansFeaturizer {
    pub fn one_hot(&self, pf: &PixelFeatureMatrix) -> Result<Tensor> {
        let k = self.centroids.dims()[0];
        let (h, w) = (pf.height(), pf.width());
        let plane = h * w;
        let mut out = vec![0.0; k * plane];
        for (p, (c, _)) in assign_nearest(&pf.pixel_rows(), &self.centroids)?
            .into_iter()
            .enumerate()
        {
            out[c * plane + p] = 1.0;
        }
        Tensor::new(vec![k, h, w], out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansBaselineConfig {
    pub k: usize,
    pub iterations: usize,
    pub images: usize,
    pub pixels_per_image: usize,
}

impl Default for KMeansBaselineConfig {
    fn default() -> Self {
        Self {
            k: 64,
            iterations: 20,
            images: 8,
            pixels_per_image: 512,
        }
    }
}

/// Clusters hidden features of randomly placed pixels from fresh samples.
pub fn fit_kmeans(
    generator: &Generator,
    cfg: &KMeansBaselineConfig,
    upsample: UpsampleMode,
    seed: u64,
) -> Result<KMeansFeaturizer> {
    let mut rng = rng_from(derive_seed(seed, streams::KMEANS, 0));
    let c = generator.spec().hidden_channels();
    let mut rows = Vec::with_capacity(cfg.images * cfg.pixels_per_image * c);
    for _ in 0..cfg.images {
        let latents = generator.sample_latents(rng.random(), LatentMode::Broadcast);
        let pf = pixel_features(generator, &latents, upsample)?;
        let all = pf.pixel_rows();
        for _ in 0..cfg.pixels_per_image {
            rows.extend_from_slice(all.row(rng.random_range(0..all.rows())));
        }
    }
    let points = Tensor::new(vec![cfg.images * cfg.pixels_per_image, c], rows)?;
    let result = kmeans_cluster(&points, cfg.k, cfg.iterations, &mut rng)?;
    Ok(KMeansFeaturizer {
        centroids: result.centroids,
    })
}

pub fn pixel_features(
    generator: &Generator,
    latents: &crate::generator::LatentStack,
    upsample: UpsampleMode,
) -> Result<PixelFeatureMatrix> {
    assemble_pixel_features(&generator.features(latents)?, upsample)
}

/// Deterministically picks the annotated sample: the first draw whose mask
/// holds every semantic label (and `require`, when given).
pub fn select_one_shot(
    generator: &Generator,
    seed: u64,
    require: Option<u8>,
) -> Result<GeneratedSample> {
    let labels = generator.spec().semantic_label_count;
    let mut first = None;
    for i in 0..1000 {
        let latents = generator.sample_latents(
            derive_seed(seed, streams::ONE_SHOT, i),
            LatentMode::Broadcast,
        );
        let sample = generator.generate(&latents)?;
        let hist = sample.gt_mask.histogram();
        let full = hist[..labels].iter().all(|&c| c > 0);
        let has_required = require.is_none_or(|l| hist.get(l as usize).is_some_and(|&c| c > 0));
        if full && has_required {
            return Ok(sample);
        }
        if first.is_none() && has_required {
            first = Some(sample);
        }
    }
    first.ok_or_else(|| Error::Training("no sample carries the required label".into()))
}

/// Latent seed of test image `i`.
pub fn test_latent_seed(seed: u64, i: usize) -> u64 {
    derive_seed(seed, streams::TEST_SET, i as u64)
}

pub fn train_segmenter(
    generator: &Generator,
    featurizer: &Featurizer,
    spec: &SegmenterSpec,
    one_shot: &OneShotConfig,
    sample: &GeneratedSample,
    upsample: UpsampleMode,
    seed: u64,
) -> Result<(Segmenter, Vec<f64>)> {
    let pf = assemble_pixel_features(&sample.features, upsample)?;
    let input = featurizer.input(&pf)?;
    let mut rng = rng_from(derive_seed(seed, streams::SEGMENTER, 0));
    let mut seg = build_segmenter(
        spec,
        featurizer.width(generator.spec().hidden_channels()),
        &mut rng,
    )?;
    let history = train_one_shot(&mut seg, &input, &sample.gt_mask, one_shot)?;
    Ok((seg, history))
}

/// Generates, featurizes and segments one image.
pub fn infer(
    generator: &Generator,
    featurizer: &Featurizer,
    seg: &Segmenter,
    latents: &crate::generator::LatentStack,
    upsample: UpsampleMode,
) -> Result<(LabelMask, LabelMask)> {
    let sample = generator.generate(latents)?;
    let pf = assemble_pixel_features(&sample.features, upsample)?;
    let pred = predict_mask(seg, &featurizer.input(&pf)?, sample.gt_mask.label_table())?;
    Ok((pred, sample.gt_mask))
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub reports: Vec<SegReport>,
    pub predictions: Vec<LabelMask>,
    pub ground_truth: Vec<LabelMask>,
}

impl Evaluation {
    pub fn mean_wiou(&self) -> f64 {
        self.reports.iter().map(|r| r.wiou).sum::<f64>() / self.reports.len().max(1) as f64
    }

    pub fn mean_fg_iou(&self) -> f64 {
        self.reports.iter().map(|r| r.fg_iou).sum::<f64>() / self.reports.len().max(1) as f64
    }
}

pub fn evaluate(
    generator: &Generator,
    featurizer: &Featurizer,
    seg: &Segmenter,
    test_images: usize,
    upsample: UpsampleMode,
    seed: u64,
) -> Result<Evaluation> {
    let fg: Vec<u8> = (1..generator.spec().class_count() as u8).collect();
    evaluate_with_labels(generator, featurizer, seg, test_images, upsample, seed, &fg)
}

/// [`evaluate`] with an explicit foreground label set.
pub fn evaluate_with_labels(
    generator: &Generator,
    featurizer: &Featurizer,
    seg: &Segmenter,
    test_images: usize,
    upsample: UpsampleMode,
    seed: u64,
    fg: &[u8],
) -> Result<Evaluation> {
    let mut eval = Evaluation {
        reports: Vec::with_capacity(test_images),
        predictions: Vec::with_capacity(test_images),
        ground_truth: Vec::with_capacity(test_images),
    };
    for i in 0..test_images {
        let latents = generator.sample_latents(test_latent_seed(seed, i), LatentMode::Broadcast);
        let (pred, gt) = infer(generator, featurizer, seg, &latents, upsample)?;
        eval.reports.push(weighted_iou(&pred, &gt, fg)?);
        eval.predictions.push(pred);
        eval.ground_truth.push(gt);
    }
    Ok(eval)
}

/// Runs stage one from the experiment seed.
pub fn train_clustering(
    generator: &Generator,
    cfg: &SwavTrainConfig,
    seed: u64,
) -> Result<SwavTrainReport> {
    train_clustering_with_progress(generator, cfg, seed, |_| {})
}

pub fn train_clustering_with_progress(
    generator: &Generator,
    cfg: &SwavTrainConfig,
    seed: u64,
    on_epoch: impl FnMut(&swav::EpochLoss),
) -> Result<SwavTrainReport> {
    let mut rng = rng_from(derive_seed(seed, streams::SWAV, 0));
    swav::train_with_progress(generator, cfg, &mut rng, on_epoch)
}

/// Everything one experiment needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub generator: GeneratorSpec,
    pub swav: SwavTrainConfig,
    pub segmenter: SegmenterSpec,
    pub one_shot: OneShotConfig,
    pub kmeans: KMeansBaselineConfig,
    pub test_images: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let generator = GeneratorSpec::default();
        let segmenter = SegmenterSpec {
            class_count: generator.class_count(),
            ..Default::default()
        };
        Self {
            generator,
            swav: SwavTrainConfig::default(),
            segmenter,
            one_shot: OneShotConfig::default(),
            kmeans: KMeansBaselineConfig::default(),
            test_images: 200,
            seed: 0,
        }
    }
}
