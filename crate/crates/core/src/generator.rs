//! Deterministic layered style generator.
//!
//! Each layer `l` holds a feature map `H_l` at resolution `base·2^(l-1)`:
//!
//! ```text
//! H_1 = tanh(A_1 · B_1(w_1))
//! H_l = tanh(A_l · up2(H_{l-1}) + B_l(w_l))
//! ```
//!
//! `A_l` is a frozen 3×3 convolution and `B_l` maps `w_l` affinely onto the
//! coefficients of a fixed band-limited cosine basis. Label semantics are read
//! from layer 2 and appearance is rendered from the last layer, so a change to
//! `w_l` can only influence layers `l..L`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::mask::LabelMask;
use crate::nn::{Activation, LayerKind, LayerParams};
use crate::resample::{upsample_bilinear, upsample_nearest};
use crate::rng::{derive_seed, rng_from, streams};
use crate::tensor::Tensor;

/// Layer (1-based) whose features determine the semantic mask.
pub const SEMANTIC_LAYER: usize = 2;
const BASIS_COUNT: usize = 6;
const MIXING_GAIN: f64 = 1.2;
const STYLE_GAIN: f64 = 1.0;
const RARE_GAIN: f64 = 8.0;
/// Pull of semantic-layer features towards their part's signature.
const PART_GAIN: f64 = 1.5;
const PART_SHARPNESS: f64 = 4.0;
/// Per-sample channel modulation of the appearance layers.
const MODULATION_GAIN: f64 = 1.5;
/// How sharply appearance layers react to their latent: a small move of
/// `w_l` re-rolls the layer's texture, much like stochastic detail.
const APPEARANCE_SENSITIVITY: f64 = 32.0;
const RARE_RADIUS: f64 = 0.15;

/// Emulates a low-frequency object: when `w_1[trigger_component]` exceeds
/// `threshold`, a disc-shaped region gets an extra label and a matching
/// feature signature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RareLabel {
    pub trigger_component: usize,
    pub threshold: f64,
}

impl Default for RareLabel {
    fn default() -> Self {
        // upper quartile of a standard normal component
        Self {
            trigger_component: 0,
            threshold: 0.674_489_750_196_081_7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub layer_count: usize,
    pub base_resolution: usize,
    pub latent_dim: usize,
    pub channels_per_layer: Vec<usize>,
    pub semantic_label_count: usize,
    pub rare_label: Option<RareLabel>,
    /// Explicit per-layer resolutions; must double from `base_resolution`.
    pub resolutions: Option<Vec<usize>>,
    pub seed: u64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            layer_count: 5,
            base_resolution: 4,
            latent_dim: 32,
            channels_per_layer: vec![32, 32, 16, 16, 8],
            semantic_label_count: 5,
            rare_label: None,
            resolutions: None,
            seed: 0,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.layer_count < SEMANTIC_LAYER {
            return Err(Error::config(format!(
                "layer_count must be at least {SEMANTIC_LAYER}"
            )));
        }
        if self.channels_per_layer.len() != self.layer_count {
            return Err(Error::config(format!(
                "{} channel counts for {} layers",
                self.channels_per_layer.len(),
                self.layer_count
            )));
        }
        if self.channels_per_layer.contains(&0) {
            return Err(Error::config("channel counts must be positive"));
        }
        if self.base_resolution == 0 || self.latent_dim == 0 {
            return Err(Error::config(
                "base_resolution and latent_dim must be positive",
            ));
        }
        if !(2..=16).contains(&self.semantic_label_count) {
            return Err(Error::config("semantic_label_count must lie in 2..=16"));
        }
        if let Some(res) = &self.resolutions {
            let expected: Vec<usize> = (0..self.layer_count)
                .map(|l| self.base_resolution << l)
                .collect();
            if *res != expected {
                return Err(Error::config(format!(
                    "resolutions {res:?} must double from {} (expected {expected:?})",
                    self.base_resolution
                )));
            }
        }
        if let Some(rare) = &self.rare_label {
            if rare.trigger_component >= self.latent_dim || !rare.threshold.is_finite() {
                return Err(Error::config("rare label trigger out of range"));
            }
        }
        Ok(())
    }

    pub fn resolution(&self, layer: usize) -> usize {
        self.base_resolution << (layer - 1)
    }

    pub fn output_resolution(&self) -> usize {
        self.resolution(self.layer_count)
    }

    /// Sum of all layer channel counts.
    pub fn hidden_channels(&self) -> usize {
        self.channels_per_layer.iter().sum()
    }

    /// Semantic labels plus the rare label, when enabled.
    pub fn class_count(&self) -> usize {
        self.semantic_label_count + usize::from(self.rare_label.is_some())
    }

    pub fn rare_label_id(&self) -> Option<u8> {
        self.rare_label.map(|_| self.semantic_label_count as u8)
    }

    pub fn label_table(&self) -> Vec<String> {
        let mut t = LabelMask::default_table(self.semantic_label_count);
        if self.rare_label.is_some() {
            t.push("rare".to_string());
        }
        t
    }
}

/// Per-layer latent vectors `w_1..w_L`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentStack {
    vectors: Vec<Vec<f64>>,
}

impl LatentStack {
    pub fn new(vectors: Vec<Vec<f64>>) -> Result<Self> {
        let dim = vectors.first().map_or(0, Vec::len);
        if vectors.is_empty() || dim == 0 || vectors.iter().any(|v| v.len() != dim) {
            return Err(Error::shape("latent stack needs equal, non-empty layers"));
        }
        if vectors.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::contract("latent values must be finite"));
        }
        Ok(Self { vectors })
    }

    pub fn zeros(layers: usize, dim: usize) -> Self {
        Self {
            vectors: vec![vec![0.0; dim]; layers],
        }
    }

    pub fn layer_count(&self) -> usize {
        self.vectors.len()
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }

    /// Latent of layer `l` (1-based).
    pub fn layer(&self, l: usize) -> &[f64] {
        &self.vectors[l - 1]
    }

    pub fn layer_mut(&mut self, l: usize) -> &mut Vec<f64> {
        &mut self.vectors[l - 1]
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LatentMode {
    /// One `w` shared by every layer.
    #[default]
    Broadcast,
    PerLayer,
}

/// Hidden activations `H_1..H_L`, each `c_l × r_l × r_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVolume {
    pub layers: Vec<Tensor>,
}

impl FeatureVolume {
    pub fn channels(&self) -> Vec<usize> {
        self.layers.iter().map(|t| t.dims()[0]).collect()
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedSample {
    /// `3 × R × R`, values in `[0, 1]`.
    pub image: Tensor,
    pub features: FeatureVolume,
    pub gt_mask: LabelMask,
    pub latents: LatentStack,
}

#[derive(Debug, Clone)]
struct StyleLayer {
    mixing: LayerParams,
    /// `(c_l·J) × latent_dim`.
    style: Tensor,
    style_bias: Vec<f64>,
    /// `J × r × r`.
    basis: Tensor,
    /// Appearance layers only.
    appearance: Option<Appearance>,
}

#[derive(Debug, Clone)]
struct Appearance {
    /// `latent_dim × latent_dim`, feeds `sin(κ·A·w)` to the layer.
    scramble: Tensor,
    /// `c_l × latent_dim`.
    modulation: Tensor,
}

#[derive(Debug, Clone)]
pub struct Generator {
    spec: GeneratorSpec,
    layers: Vec<StyleLayer>,
    /// `labels × c_semantic`.
    mask_readout: Tensor,
    mask_bias: Vec<f64>,
    /// `3 × c_L`.
    image_readout: Tensor,
    label_colors: Vec<[f64; 3]>,
    /// Sign pattern of the rare object per layer, from the semantic layer up.
    rare_signatures: Vec<Vec<f64>>,
}

fn normal_vec<R: Rng>(rng: &mut R, n: usize, std: f64) -> Vec<f64> {
    (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * std)
        .collect()
}

/// Band-limited cosine basis sampled at pixel centers of an `r × r` grid.
/// Frequencies scale with the resolution so that every layer sees detail at
/// its own scale.
fn cosine_basis<R: Rng>(rng: &mut R, r: usize) -> Tensor {
    let band = r as f64 / 4.0;
    let mut data = Vec::with_capacity(BASIS_COUNT * r * r);
    for _ in 0..BASIS_COUNT {
        let freq = rng.random_range(0.25..1.0) * band;
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let (fx, fy) = (freq * angle.cos(), freq * angle.sin());
        for y in 0..r {
            for x in 0..r {
                let (u, v) = ((x as f64 + 0.5) / r as f64, (y as f64 + 0.5) / r as f64);
                data.push((std::f64::consts::TAU * (fx * u + fy * v) + phase).cos());
            }
        }
    }
    Tensor::new(vec![BASIS_COUNT, r, r], data).expect("basis dims")
}

impl Generator {
    pub fn new(spec: GeneratorSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng_from(derive_seed(spec.seed, streams::GENERATOR, 0));
        let mut layers = Vec::with_capacity(spec.layer_count);
        for l in 1..=spec.layer_count {
            let c = spec.channels_per_layer[l - 1];
            let c_in = if l == 1 {
                c
            } else {
                spec.channels_per_layer[l - 2]
            };
            let r = spec.resolution(l);
            let gain = if l == 1 { 1.0 } else { MIXING_GAIN };
            let std = gain / ((9 * c_in) as f64).sqrt();
            let mixing = LayerParams::conv3x3(
                Tensor::new(vec![c, c_in, 3, 3], normal_vec(&mut rng, c * c_in * 9, std))?,
                Tensor::zeros(&[c]),
                Activation::None,
            )?;
            debug_assert_eq!(mixing.kind, LayerKind::Conv3x3);
            let style_std = STYLE_GAIN / ((spec.latent_dim * BASIS_COUNT) as f64).sqrt();
            let style = Tensor::new(
                vec![c * BASIS_COUNT, spec.latent_dim],
                normal_vec(&mut rng, c * BASIS_COUNT * spec.latent_dim, style_std),
            )?;
            let style_bias =
                normal_vec(&mut rng, c * BASIS_COUNT, 0.3 / (BASIS_COUNT as f64).sqrt());
            let basis = cosine_basis(&mut rng, r);
            let appearance = (l > SEMANTIC_LAYER).then(|| {
                let d = spec.latent_dim;
                let std = 1.0 / (d as f64).sqrt();
                let modulation = Tensor::new(vec![c, d], normal_vec(&mut rng, c * d, std))
                    .expect("modulation dims");
                let scramble = Tensor::new(vec![d, d], normal_vec(&mut rng, d * d, std))
                    .expect("scramble dims");
                Appearance {
                    scramble,
                    modulation,
                }
            });
            layers.push(StyleLayer {
                mixing,
                style,
                style_bias,
                basis,
                appearance,
            });
        }
        let c_sem = spec.channels_per_layer[SEMANTIC_LAYER - 1];
        let labels = spec.semantic_label_count;
        let mask_readout = Tensor::new(
            vec![labels, c_sem],
            normal_vec(&mut rng, labels * c_sem, 1.0 / (c_sem as f64).sqrt()),
        )?;
        let mask_bias = normal_vec(&mut rng, labels, 0.05);
        let c_last = spec.channels_per_layer[spec.layer_count - 1];
        let image_readout = Tensor::new(
            vec![3, c_last],
            normal_vec(&mut rng, 3 * c_last, 1.5 / (c_last as f64).sqrt()),
        )?;
        let label_colors = (0..spec.class_count())
            .map(|_| {
                [
                    rng.random_range(0.0..1.0),
                    rng.random_range(0.0..1.0),
                    rng.random_range(0.0..1.0),
                ]
            })
            .collect();
        let rare_signatures = spec.channels_per_layer[SEMANTIC_LAYER - 1..]
            .iter()
            .map(|&c| {
                (0..c)
                    .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                    .collect()
            })
            .collect();
        Ok(Self {
            spec,
            layers,
            mask_readout,
            mask_bias,
            image_readout,
            label_colors,
            rare_signatures,
        })
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    /// Draws a latent stack with i.i.d. standard-normal components.
    pub fn sample_latents(&self, rng_seed: u64, mode: LatentMode) -> LatentStack {
        let mut rng = rng_from(rng_seed);
        let dim = self.spec.latent_dim;
        let vectors = match mode {
            LatentMode::Broadcast => {
                let w = normal_vec(&mut rng, dim, 1.0);
                vec![w; self.spec.layer_count]
            }
            LatentMode::PerLayer => (0..self.spec.layer_count)
                .map(|_| normal_vec(&mut rng, dim, 1.0))
                .collect(),
        };
        LatentStack { vectors }
    }

    /// `B_l(w_l)`: the latent's affine coefficients spread over the basis.
    fn style_map(&self, l: usize, w: &[f64]) -> Tensor {
        let layer = &self.layers[l - 1];
        let c = self.spec.channels_per_layer[l - 1];
        let r = self.spec.resolution(l);
        let plane = r * r;
        let mut out = vec![0.0; c * plane];
        for ch in 0..c {
            let dst = &mut out[ch * plane..(ch + 1) * plane];
            for j in 0..BASIS_COUNT {
                let row = ch * BASIS_COUNT + j;
                let coef = layer.style_bias[row]
                    + layer
                        .style
                        .row(row)
                        .iter()
                        .zip(w)
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
                let phi = &layer.basis.data()[j * plane..(j + 1) * plane];
                for (d, &p) in dst.iter_mut().zip(phi) {
                    *d += coef * p;
                }
            }
        }
        Tensor::new(vec![c, r, r], out).expect("style dims")
    }

    fn rare_disc(&self, latents: &LatentStack) -> Option<(f64, f64)> {
        let rare = self.spec.rare_label?;
        let w1 = latents.layer(1);
        if w1[rare.trigger_component] <= rare.threshold {
            return None;
        }
        let dim = self.spec.latent_dim;
        let a = w1[(rare.trigger_component + 1) % dim];
        let b = w1[(rare.trigger_component + 2) % dim];
        Some((0.5 + 0.3 * a.tanh(), 0.5 + 0.3 * b.tanh()))
    }

    /// Computes `H_1..H_L` only.
    pub fn features(&self, latents: &LatentStack) -> Result<FeatureVolume> {
        self.check_latents(latents)?;
        let disc = self.rare_disc(latents);
        let mut out: Vec<Tensor> = Vec::with_capacity(self.spec.layer_count);
        for l in 1..=self.spec.layer_count {
            let appearance = self.layers[l - 1].appearance.as_ref();
            let w = match appearance {
                Some(a) => (0..a.scramble.dims()[0])
                    .map(|i| {
                        let v: f64 = a
                            .scramble
                            .row(i)
                            .iter()
                            .zip(latents.layer(l))
                            .map(|(x, y)| x * y)
                            .sum();
                        (APPEARANCE_SENSITIVITY * v).sin()
                    })
                    .collect(),
                None => latents.layer(l).to_vec(),
            };
            let style = self.style_map(l, &w);
            let mixing = &self.layers[l - 1].mixing;
            let mut pre = if l == 1 {
                mixing.apply(&style)?
            } else {
                let r = self.spec.resolution(l);
                let up = upsample_nearest(&out[l - 2], r, r);
                let mut m = mixing.apply(&up)?;
                if let Some(a) = appearance {
                    self.modulate(&mut m, &a.modulation, &w);
                }
                for (a, b) in m.data_mut().iter_mut().zip(style.data()) {
                    *a += b;
                }
                m
            };
            if l == SEMANTIC_LAYER {
                self.attract_parts(&mut pre);
            }
            if let (Some((cx, cy)), true) = (disc, l >= SEMANTIC_LAYER) {
                self.inject_rare(&mut pre, l, cx, cy);
            }
            out.push(pre.map(f64::tanh));
        }
        Ok(FeatureVolume { layers: out })
    }

    /// Scales each channel by `MODULATION_GAIN·tanh(M·w)`, a per-sample style.
    fn modulate(&self, t: &mut Tensor, modulation: &Tensor, w: &[f64]) {
        let plane = t.dims()[1] * t.dims()[2];
        for (ch, chunk) in t.data_mut().chunks_mut(plane).enumerate() {
            let m: f64 = modulation.row(ch).iter().zip(w).map(|(a, b)| a * b).sum();
            let scale = MODULATION_GAIN * m.tanh();
            chunk.iter_mut().for_each(|v| *v *= scale);
        }
    }

    /// Adds `PART_GAIN·Σ_k softmax(β·ℓ)_k·sig_k` where `ℓ` are the mask
    /// readouts of the pre-activation and `sig_k` the unit-scaled readout
    /// rows, so semantic features cluster around their part.
    fn attract_parts(&self, pre: &mut Tensor) {
        let (c, r) = (pre.dims()[0], pre.dims()[1]);
        let plane = r * r;
        let k = self.spec.semantic_label_count;
        let sig: Vec<Vec<f64>> = (0..k)
            .map(|i| {
                let row = self.mask_readout.row(i);
                let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                row.iter().map(|v| v / n * (c as f64).sqrt()).collect()
            })
            .collect();
        let data = pre.data_mut();
        let mut logits = vec![0.0; k];
        for p in 0..plane {
            for (i, l) in logits.iter_mut().enumerate() {
                *l = self.mask_bias[i]
                    + (0..c)
                        .map(|ch| self.mask_readout.get2(i, ch) * data[ch * plane + p])
                        .sum::<f64>();
            }
            let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = logits
                .iter()
                .map(|l| (PART_SHARPNESS * (l - top)).exp())
                .collect();
            let z: f64 = weights.iter().sum();
            for ch in 0..c {
                let pull: f64 = weights
                    .iter()
                    .zip(&sig)
                    .map(|(wk, s)| wk * s[ch])
                    .sum::<f64>()
                    / z;
                data[ch * plane + p] += PART_GAIN * pull;
            }
        }
    }

    /// Adds the layer's rare signature inside a soft-edged disc, so finer
    /// layers resolve the object boundary.
    fn inject_rare(&self, pre: &mut Tensor, layer: usize, cx: f64, cy: f64) {
        let (c, r) = (pre.dims()[0], pre.dims()[1]);
        let sig = &self.rare_signatures[layer - SEMANTIC_LAYER];
        let edge = 0.5 / r as f64;
        for y in 0..r {
            for x in 0..r {
                let (u, v) = ((x as f64 + 0.5) / r as f64, (y as f64 + 0.5) / r as f64);
                let d = ((u - cx).powi(2) + (v - cy).powi(2)).sqrt();
                let bump = RARE_GAIN / (1.0 + ((d - RARE_RADIUS) / edge).exp());
                for ch in 0..c {
                    pre.data_mut()[(ch * r + y) * r + x] += bump * sig[ch];
                }
            }
        }
    }

    /// Semantic mask from the semantic-layer features alone (rare label excluded).
    pub fn mask_from_semantic(&self, h_sem: &Tensor) -> Result<Vec<u8>> {
        let c_sem = self.spec.channels_per_layer[SEMANTIC_LAYER - 1];
        let r = self.spec.resolution(SEMANTIC_LAYER);
        if h_sem.dims() != [c_sem, r, r] {
            return Err(Error::shape(format!(
                "semantic features {:?}, expected {:?}",
                h_sem.dims(),
                [c_sem, r, r]
            )));
        }
        let out_r = self.spec.output_resolution();
        let up = upsample_bilinear(h_sem, out_r, out_r);
        let plane = out_r * out_r;
        let labels = self.spec.semantic_label_count;
        let mut best = vec![0u8; plane];
        let mut best_score = vec![f64::NEG_INFINITY; plane];
        for k in 0..labels {
            let mut score = vec![self.mask_bias[k]; plane];
            for (ch, &wk) in self.mask_readout.row(k).iter().enumerate() {
                for (s, &v) in score
                    .iter_mut()
                    .zip(&up.data()[ch * plane..(ch + 1) * plane])
                {
                    *s += wk * v;
                }
            }
            for p in 0..plane {
                if score[p] > best_score[p] {
                    best_score[p] = score[p];
                    best[p] = k as u8;
                }
            }
        }
        Ok(best)
    }

    pub fn generate(&self, latents: &LatentStack) -> Result<GeneratedSample> {
        let features = self.features(latents)?;
        let out_r = self.spec.output_resolution();
        let mut labels = self.mask_from_semantic(&features.layers[SEMANTIC_LAYER - 1])?;
        if let (Some((cx, cy)), Some(id)) = (self.rare_disc(latents), self.spec.rare_label_id()) {
            for y in 0..out_r {
                for x in 0..out_r {
                    let (u, v) = (
                        (x as f64 + 0.5) / out_r as f64,
                        (y as f64 + 0.5) / out_r as f64,
                    );
                    if (u - cx).powi(2) + (v - cy).powi(2) < RARE_RADIUS * RARE_RADIUS {
                        labels[y * out_r + x] = id;
                    }
                }
            }
        }
        let gt_mask = LabelMask::new(out_r, out_r, labels, self.spec.label_table())?;
        let image = self.render(&features, &gt_mask);
        Ok(GeneratedSample {
            image,
            features,
            gt_mask,
            latents: latents.clone(),
        })
    }

    fn render(&self, features: &FeatureVolume, mask: &LabelMask) -> Tensor {
        let last = features.layers.last().expect("at least one layer");
        let plane = mask.height() * mask.width();
        let c_last = last.dims()[0];
        let mut img = vec![0.0; 3 * plane];
        for ch in 0..3 {
            let wr = self.image_readout.row(ch);
            for p in 0..plane {
                let mut s = 0.0;
                for (c, &wv) in wr.iter().enumerate().take(c_last) {
                    s += wv * last.data()[c * plane + p];
                }
                let texture = 1.0 / (1.0 + (-s).exp());
                let base = self.label_colors[mask.labels()[p] as usize][ch];
                img[ch * plane + p] = 0.5 * base + 0.5 * texture;
            }
        }
        Tensor::new(vec![3, mask.height(), mask.width()], img).expect("image dims")
    }

    fn check_latents(&self, latents: &LatentStack) -> Result<()> {
        if latents.layer_count() != self.spec.layer_count || latents.dim() != self.spec.latent_dim {
            return Err(Error::shape(format!(
                "latents {}×{} for a generator expecting {}×{}",
                latents.layer_count(),
                latents.dim(),
                self.spec.layer_count,
                self.spec.latent_dim
            )));
        }
        Ok(())
    }
}
