//! One-shot segmenters trained on a single annotated sample.

use rand::Rng;

use crate::error::{Error, Result};
use crate::features::PixelFeatureMatrix;
use crate::mask::LabelMask;
use crate::nn::{
    softmax_scaled, Activation, LayerKind, LayerParams, Optimizer, OptimizerKind, ParamSlot,
    DEFAULT_LEAKY_SLOPE,
};
use crate::swav::SwavModel;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SegmenterKind {
    Mlp,
    #[default]
    Fcn,
}

/// What the segmenter sees at each pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InputMode {
    /// Unit embeddings `z` from the frozen projection head.
    #[default]
    Projected,
    /// Concatenated generator features `H`.
    Raw,
    /// Prototype assignment probabilities `p`.
    Assignment,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmenterSpec {
    pub kind: SegmenterKind,
    pub layer_count: usize,
    pub input_mode: InputMode,
    pub class_count: usize,
    pub hidden_width: usize,
    pub leaky_slope: f64,
}

impl Default for SegmenterSpec {
    fn default() -> Self {
        Self {
            kind: SegmenterKind::Fcn,
            layer_count: 3,
            input_mode: InputMode::Projected,
            class_count: 5,
            hidden_width: 16,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        }
    }
}

impl SegmenterSpec {
    pub fn validate(&self) -> Result<()> {
        let depths: &[usize] = match self.kind {
            SegmenterKind::Mlp => &[1, 3],
            SegmenterKind::Fcn => &[3, 5, 7, 9],
        };
        if !depths.contains(&self.layer_count) {
            return Err(Error::config(format!(
                "{:?} segmenter supports depths {depths:?}, got {}",
                self.kind, self.layer_count
            )));
        }
        if self.class_count < 2 {
            return Err(Error::config("segmenter needs at least 2 classes"));
        }
        if self.hidden_width == 0 {
            return Err(Error::config("hidden width must be >= 1"));
        }
        Ok(())
    }
}

/// Per-pixel input for a segmenter: `C × H × W`.
/// Head projection and column L2 normalization on a `C × (H·W)` view, so
/// inference never transposes the feature map.
fn project_channel_major(features: &PixelFeatureMatrix, head: &LayerParams) -> Result<Tensor> {
    let c = features.data.dims()[0];
    let n = features.height() * features.width();
    let h = features.data.clone().reshape(&[c, n])?;
    let mut pre = crate::tensor::matmul(&head.weights, &h)?;
    let d = pre.dims()[0];
    for (row, &b) in pre.data_mut().chunks_mut(n).zip(head.bias.data()) {
        for v in row.iter_mut() {
            *v += b;
        }
    }
    let mut z = head.activate(&pre);
    let mut norms = vec![0.0; n];
    for row in z.data().chunks(n) {
        for (s, &v) in norms.iter_mut().zip(row) {
            *s += v * v;
        }
    }
    for s in norms.iter_mut() {
        if *s == 0.0 || !s.is_finite() {
            return Err(Error::ZeroNorm);
        }
        *s = 1.0 / s.sqrt();
    }
    for row in z.data_mut().chunks_mut(n) {
        for (v, &r) in row.iter_mut().zip(&norms) {
            *v *= r;
        }
    }
    debug_assert_eq!(z.dims(), [d, n]);
    Ok(z)
}

pub fn segmenter_input(
    mode: InputMode,
    features: &PixelFeatureMatrix,
    model: Option<&SwavModel>,
) -> Result<Tensor> {
    let (h, w) = (features.height(), features.width());
    if mode == InputMode::Raw {
        return Ok(features.data.clone());
    }
    let model = model.ok_or_else(|| {
        Error::contract(format!("{mode:?} input needs a trained clustering model"))
    })?;
    let z = project_channel_major(features, &model.head.layer)?;
    let out = match mode {
        InputMode::Projected => z,
        _ => softmax_scaled(
            &crate::tensor::matmul_tn(&model.prototypes.c, &z)?,
            model.temperature,
            0,
        )?,
    };
    let c = out.dims()[0];
    out.reshape(&[c, h, w])
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmenter {
    pub spec: SegmenterSpec,
    pub layers: Vec<LayerParams>,
}

pub fn build_segmenter<R: Rng + ?Sized>(
    spec: &SegmenterSpec,
    input_width: usize,
    rng: &mut R,
) -> Result<Segmenter> {
    spec.validate()?;
    if input_width == 0 {
        return Err(Error::config("segmenter input width must be >= 1"));
    }
    let kind = match spec.kind {
        SegmenterKind::Mlp => LayerKind::Dense,
        SegmenterKind::Fcn => LayerKind::Conv3x3,
    };
    let n = spec.layer_count;
    let layers = (0..n)
        .map(|i| {
            let fan_in = if i == 0 {
                input_width
            } else {
                spec.hidden_width
            };
            let (out, act) = if i + 1 == n {
                (spec.class_count, Activation::Softmax)
            } else {
                (spec.hidden_width, Activation::LeakyRelu(spec.leaky_slope))
            };
            LayerParams::init(kind, fan_in, out, act, rng)
        })
        .collect();
    Ok(Segmenter {
        spec: spec.clone(),
        layers,
    })
}

impl Segmenter {
    pub fn input_width(&self) -> usize {
        self.layers[0].in_width()
    }

    fn to_layout(&self, input: &Tensor) -> Result<Tensor> {
        let d = input.dims();
        if d.len() != 3 || d[0] != self.input_width() {
            return Err(Error::shape(format!(
                "segmenter expects {}×H×W input, got {d:?}",
                self.input_width()
            )));
        }
        match self.spec.kind {
            SegmenterKind::Fcn => Ok(input.clone()),
            SegmenterKind::Mlp => input.clone().reshape(&[d[0], d[1] * d[2]])?.transpose(),
        }
    }

    /// Class probabilities, `class_count × H × W`.
    pub fn probabilities(&self, input: &Tensor) -> Result<Tensor> {
        let mut x = self.to_layout(input)?;
        for layer in &self.layers {
            x = layer.apply(&x)?;
        }
        let (h, w) = (input.dims()[1], input.dims()[2]);
        match self.spec.kind {
            SegmenterKind::Fcn => Ok(x),
            SegmenterKind::Mlp => x.transpose()?.reshape(&[self.spec.class_count, h, w]),
        }
    }
}

pub fn predict_mask(seg: &Segmenter, input: &Tensor, label_table: &[String]) -> Result<LabelMask> {
    let probs = seg.probabilities(input)?;
    let d = probs.dims();
    let (k, h, w) = (d[0], d[1], d[2]);
    let plane = h * w;
    let p = probs.data();
    let labels = (0..plane)
        .map(|i| {
            let mut best = 0;
            for c in 1..k {
                if p[c * plane + i] > p[best * plane + i] {
                    best = c;
                }
            }
            best as u8
        })
        .collect();
    LabelMask::new(h, w, labels, label_table.to_vec())
}

#[derive(Debug, Clone, PartialEq)]
pub struct OneShotConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for OneShotConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.99,
        }
    }
}

/// Full-image Adam on the mean per-pixel cross-entropy against `annotation`.
/// Returns the loss before each epoch's update.
pub fn train_one_shot(
    seg: &mut Segmenter,
    input: &Tensor,
    annotation: &LabelMask,
    cfg: &OneShotConfig,
) -> Result<Vec<f64>> {
    let k = seg.spec.class_count;
    if let Some(&bad) = annotation.labels().iter().find(|&&l| l as usize >= k) {
        return Err(Error::contract(format!(
            "annotation label {bad} outside 0..{k}"
        )));
    }
    let d = input.dims();
    if d.len() != 3 || d[1] != annotation.height() || d[2] != annotation.width() {
        return Err(Error::shape(format!(
            "input {d:?} vs annotation {}×{}",
            annotation.height(),
            annotation.width()
        )));
    }
    let x0 = seg.to_layout(input)?;
    let plane = d[1] * d[2];
    let labels = annotation.labels();
    let mut optimizer =
        Optimizer::new(OptimizerKind::adam(cfg.beta1, cfg.beta2), cfg.learning_rate)?;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut tapes = Vec::with_capacity(seg.layers.len());
        let mut x = x0.clone();
        for layer in &seg.layers {
            let (out, tape) = layer.forward(&x)?;
            tapes.push(tape);
            x = out;
        }
        // fused softmax + cross-entropy: dL/dpre = (p - onehot) / N
        let probs = x.data();
        let mut grad = x.data().to_vec();
        let mut loss = 0.0;
        for (i, &l) in labels.iter().enumerate() {
            let idx = match seg.spec.kind {
                SegmenterKind::Fcn => l as usize * plane + i,
                SegmenterKind::Mlp => i * k + l as usize,
            };
            loss -= probs[idx].max(1e-300).ln();
            grad[idx] -= 1.0;
        }
        let n = plane as f64;
        history.push(loss / n);
        if !loss.is_finite() {
            return Err(Error::Training(format!(
                "non-finite segmenter loss at epoch {epoch}"
            )));
        }
        let mut g = Tensor::new(x.dims().to_vec(), grad.iter().map(|v| v / n).collect())?;
        let mut grads = Vec::with_capacity(seg.layers.len());
        for (i, layer) in seg.layers.iter().enumerate().rev() {
            let (lg, gin) = if i + 1 == seg.layers.len() {
                layer.backward_from_pre(&tapes[i], &g)?
            } else {
                layer.backward(&tapes[i], &g)?
            };
            grads.push(lg);
            g = gin;
        }
        grads.reverse();
        let names: Vec<(String, String)> = (0..seg.layers.len())
            .map(|i| (format!("seg.{i}.weights"), format!("seg.{i}.bias")))
            .collect();
        let mut slots: Vec<ParamSlot<'_>> = Vec::with_capacity(2 * seg.layers.len());
        for ((layer, lg), (wn, bn)) in seg.layers.iter_mut().zip(&grads).zip(&names) {
            slots.push(ParamSlot {
                name: wn,
                value: &mut layer.weights,
                grad: &lg.weights,
            });
            slots.push(ParamSlot {
                name: bn,
                value: &mut layer.bias,
                grad: &lg.bias,
            });
        }
        optimizer.step(&mut slots)?;
    }
    Ok(history)
}
