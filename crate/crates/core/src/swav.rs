//! Swapped-assignment contrastive clustering of per-pixel generator features.
//!
//! Two latent views are rendered, their pixel features projected by a dense
//! head onto unit vectors and scored against `K` unit prototypes. Each view's
//! optimal-transport assignment is the cross-entropy target for the other
//! view's softmax prediction. A second, local term repeats this on features
//! whose channels from layers before the perturbed one are zeroed.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::augment::{make_view_pair, AugmentConfig};
use crate::cluster::{sinkhorn_assign, MarginalMode, SinkhornConfig};
use crate::error::{Error, Result};
use crate::features::{assemble_pixel_features, masked_channels, sample_patches, UpsampleMode};
use crate::generator::{Generator, LatentMode};
use crate::nn::{
    l2_normalize, l2_normalize_backward, log_softmax_scaled, softmax_scaled, Activation,
    LayerGrads, LayerKind, LayerParams, Optimizer, OptimizerKind, ParamSlot, Tape,
};
use crate::rng::Rng as StageRng;
use crate::tensor::{matmul, matmul_tn, Tensor};

/// Dense layer with leaky ReLU mapping `C_hidden` features to `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    pub layer: LayerParams,
}

impl ProjectionHead {
    pub fn new<R: Rng + ?Sized>(
        input_width: usize,
        output_dim: usize,
        slope: f64,
        rng: &mut R,
    ) -> Self {
        Self {
            layer: LayerParams::init(
                LayerKind::Dense,
                input_width,
                output_dim,
                Activation::LeakyRelu(slope),
                rng,
            ),
        }
    }

    pub fn input_width(&self) -> usize {
        self.layer.in_width()
    }

    pub fn output_dim(&self) -> usize {
        self.layer.out_width()
    }

    /// Unit-norm embeddings of pixel rows (`N × C` → `N × D`).
    pub fn embed_rows(&self, rows: &Tensor) -> Result<Tensor> {
        l2_normalize(&self.layer.apply(rows)?, 1)
    }
}

/// `D × K` matrix of unit-norm prototype columns.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank {
    pub c: Tensor,
}

impl PrototypeBank {
    pub fn new<R: Rng + ?Sized>(dim: usize, k: usize, rng: &mut R) -> Self {
        let data = (0..dim * k).map(|_| rng.sample(StandardNormal)).collect();
        let mut bank = Self {
            c: Tensor::new(vec![dim, k], data).expect("prototype dims"),
        };
        bank.normalize();
        bank
    }

    pub fn k(&self) -> usize {
        self.c.dims()[1]
    }

    pub fn dim(&self) -> usize {
        self.c.dims()[0]
    }

    pub fn normalize(&mut self) {
        if let Ok(n) = l2_normalize(&self.c, 0) {
            self.c = n;
        }
    }

    pub fn max_norm_deviation(&self) -> f64 {
        let (d, k) = (self.dim(), self.k());
        (0..k)
            .map(|j| {
                let n = (0..d)
                    .map(|i| self.c.get2(i, j).powi(2))
                    .sum::<f64>()
                    .sqrt();
                (n - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Which row marginal the transport assignment enforces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AssignmentMarginal {
    #[default]
    Uniform,
    /// Row marginal follows the batch's own prototype usage, half-mixed with
    /// uniform to stay strictly positive.
    PixelDistribution,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwavTrainConfig {
    pub temperature: f64,
    pub epochs: usize,
    pub images_per_epoch: usize,
    pub prototypes: usize,
    pub feature_dim: usize,
    pub sinkhorn: SinkhornConfig,
    pub marginal: AssignmentMarginal,
    pub local_loss_enabled: bool,
    pub learning_rate: f64,
    pub momentum: f64,
    pub lars_coefficient: f64,
    pub patch_size: usize,
    pub patches_per_image: usize,
    pub upsample: UpsampleMode,
    pub leaky_slope: f64,
    pub augment: AugmentConfig,
}

/// Desk-scale softmax temperature. Targets stay twice as sharp as the
/// predictions (`ε/τ = 0.5`).
pub const DEFAULT_TEMPERATURE: f64 = 0.1;
pub const DEFAULT_EPSILON: f64 = 0.05;
/// Head slope. A wider negative branch keeps more of the input rank through
/// the single dense layer.
pub const HEAD_LEAKY_SLOPE: f64 = 0.2;

impl Default for SwavTrainConfig {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            epochs: 100,
            images_per_epoch: 4,
            prototypes: 16,
            feature_dim: 32,
            sinkhorn: SinkhornConfig {
                epsilon: DEFAULT_EPSILON,
                ..Default::default()
            },
            marginal: AssignmentMarginal::Uniform,
            local_loss_enabled: true,
            learning_rate: 1.0,
            momentum: 0.9,
            lars_coefficient: 0.01,
            patch_size: 16,
            patches_per_image: 5,
            upsample: UpsampleMode::Nearest,
            leaky_slope: HEAD_LEAKY_SLOPE,
            augment: AugmentConfig::default(),
        }
    }
}

impl SwavTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::config("swav temperature must be > 0"));
        }
        if self.prototypes < 2 || self.feature_dim < 1 {
            return Err(Error::config("need K >= 2 prototypes and D >= 1"));
        }
        if self.epochs == 0 || self.images_per_epoch == 0 {
            return Err(Error::config("epochs and images_per_epoch must be >= 1"));
        }
        if self.patch_size == 0 || self.patches_per_image == 0 {
            return Err(Error::config("patch size and count must be >= 1"));
        }
        self.sinkhorn.validate()?;
        self.augment.validate()
    }
}

/// Trained stage-one parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SwavModel {
    pub head: ProjectionHead,
    pub prototypes: PrototypeBank,
    pub temperature: f64,
}

/// Output of [`project`]: all `D × N` / `K × N`, one column per pixel.
#[derive(Debug, Clone)]
pub struct Projection {
    pub z: Tensor,
    pub scores: Tensor,
    pub p: Tensor,
}

/// Projects `C_hidden × N` features: `Z = normalize(f(H))`, `scores = CᵀZ`,
/// `p = softmax(scores/τ)` per column.
pub fn project(
    head: &ProjectionHead,
    prototypes: &PrototypeBank,
    features: &Tensor,
    temperature: f64,
) -> Result<Projection> {
    if features.rank() != 2 || features.dims()[0] != head.input_width() {
        return Err(Error::shape(format!(
            "features {:?} for a head of width {}",
            features.dims(),
            head.input_width()
        )));
    }
    let arm = arm_forward(head, prototypes, &features.transpose()?, temperature)?;
    let p = softmax_scaled(&arm.scores, temperature, 0)?;
    Ok(Projection {
        z: arm.z,
        scores: arm.scores,
        p,
    })
}

struct Arm {
    head_tape: Tape,
    /// `N × D` normalized rows.
    z_rows: Tensor,
    /// `D × N`.
    z: Tensor,
    /// `K × N`.
    scores: Tensor,
    log_p: Tensor,
}

fn arm_forward(
    head: &ProjectionHead,
    prototypes: &PrototypeBank,
    rows: &Tensor,
    temperature: f64,
) -> Result<Arm> {
    if head.output_dim() != prototypes.dim() {
        return Err(Error::shape(format!(
            "head emits {} dims, prototypes have {}",
            head.output_dim(),
            prototypes.dim()
        )));
    }
    let (a, head_tape) = head.layer.forward(rows)?;
    let z_rows = l2_normalize(&a, 1)?;
    let z = z_rows.transpose()?;
    let scores = matmul_tn(&prototypes.c, &z)?;
    let log_p = log_softmax_scaled(&scores, temperature, 0)?;
    Ok(Arm {
        head_tape,
        z_rows,
        z,
        scores,
        log_p,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwavGrads {
    pub head: LayerGrads,
    pub prototypes: Tensor,
}

impl SwavGrads {
    fn accumulate(&mut self, other: &SwavGrads) {
        let pairs = [
            (self.head.weights.data_mut(), other.head.weights.data()),
            (self.head.bias.data_mut(), other.head.bias.data()),
            (self.prototypes.data_mut(), other.prototypes.data()),
        ];
        for (dst, src) in pairs {
            for (a, b) in dst.iter_mut().zip(src) {
                *a += b;
            }
        }
    }
}

fn arm_backward(
    head: &ProjectionHead,
    prototypes: &PrototypeBank,
    arm: &Arm,
    d_scores: &Tensor,
) -> Result<SwavGrads> {
    let d_proto = matmul(&arm.z, &d_scores.transpose()?)?;
    let d_z = matmul(&prototypes.c, d_scores)?.transpose()?;
    let d_a = l2_normalize_backward(&arm.head_tape.output, &arm.z_rows, &d_z, 1)?;
    let (head_grads, _) = head.layer.backward(&arm.head_tape, &d_a)?;
    Ok(SwavGrads {
        head: head_grads,
        prototypes: d_proto,
    })
}

/// Cluster-assignment targets: transport plan columns rescaled to sum to one.
pub fn assignment_targets(
    scores: &Tensor,
    sinkhorn: &SinkhornConfig,
    marginal: AssignmentMarginal,
) -> Result<Tensor> {
    let cfg = match marginal {
        AssignmentMarginal::Uniform => sinkhorn.clone(),
        AssignmentMarginal::PixelDistribution => {
            let (k, n) = (scores.dims()[0], scores.dims()[1]);
            let soft = softmax_scaled(scores, sinkhorn.epsilon, 0)?;
            let usage: Vec<f64> = (0..k)
                .map(|i| 0.5 * soft.row(i).iter().sum::<f64>() / n as f64 + 0.5 / k as f64)
                .collect();
            let total: f64 = usage.iter().sum();
            SinkhornConfig {
                marginal_mode: MarginalMode::Custom(usage.iter().map(|u| u / total).collect()),
                ..sinkhorn.clone()
            }
        }
    };
    Ok(sinkhorn_assign(scores, &cfg)?.column_distributions())
}

/// Swapped cross-entropy `ℓ(p_s, q_t) + ℓ(p_t, q_s)`, each averaged over
/// columns. Probabilities are clamped at `1e-12`; the second value counts
/// clamped entries that carried target mass.
pub fn swapped_loss(
    p_s: &Tensor,
    p_t: &Tensor,
    q_s: &Tensor,
    q_t: &Tensor,
) -> Result<(f64, usize)> {
    let d = p_s.dims();
    if d.len() != 2 || [p_t.dims(), q_s.dims(), q_t.dims()].iter().any(|x| *x != d) {
        return Err(Error::shape("swapped_loss needs four K×N matrices"));
    }
    let n = d[1] as f64;
    let mut clamped = 0;
    let mut term = |p: &Tensor, q: &Tensor| -> f64 {
        let mut s = 0.0;
        for (&pv, &qv) in p.data().iter().zip(q.data()) {
            if qv > 0.0 {
                if pv < 1e-12 {
                    clamped += 1;
                }
                s -= qv * pv.max(1e-12).ln();
            }
        }
        s / n
    };
    let loss = term(p_s, q_t) + term(p_t, q_s);
    Ok((loss, clamped))
}

/// Loss and gradients of one swapped term pair given fixed targets.
fn swapped_term(
    head: &ProjectionHead,
    prototypes: &PrototypeBank,
    arm_s: &Arm,
    arm_t: &Arm,
    q_s: &Tensor,
    q_t: &Tensor,
    temperature: f64,
) -> Result<(f64, SwavGrads)> {
    let n = arm_s.scores.dims()[1] as f64;
    let xent = |log_p: &Tensor, q: &Tensor| -> f64 {
        -log_p
            .data()
            .iter()
            .zip(q.data())
            .map(|(l, q)| if *q > 0.0 { q * l } else { 0.0 })
            .sum::<f64>()
            / n
    };
    let loss = xent(&arm_s.log_p, q_t) + xent(&arm_t.log_p, q_s);
    let d_scores = |log_p: &Tensor, q: &Tensor| -> Tensor {
        let mut g = log_p.map(f64::exp);
        for (gv, qv) in g.data_mut().iter_mut().zip(q.data()) {
            *gv = (*gv - qv) / (temperature * n);
        }
        g
    };
    let mut grads = arm_backward(head, prototypes, arm_s, &d_scores(&arm_s.log_p, q_t))?;
    grads.accumulate(&arm_backward(
        head,
        prototypes,
        arm_t,
        &d_scores(&arm_t.log_p, q_s),
    )?);
    Ok((loss, grads))
}

/// Per-step loss breakdown.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompositeLoss {
    pub global: f64,
    pub local: f64,
    pub total: f64,
}

/// Assignment targets for each arm of both loss terms, `[global_s, global_t,
/// local_s, local_t]`. Computed once and held fixed for differentiation.
#[derive(Debug, Clone)]
pub struct CompositeTargets(pub Vec<Tensor>);

/// Zeroes the first `cut` columns of pixel rows.
pub fn mask_rows(rows: &Tensor, cut: usize) -> Tensor {
    let mut out = rows.clone();
    let w = rows.last_dim();
    for r in out.data_mut().chunks_mut(w) {
        r[..cut.min(w)].fill(0.0);
    }
    out
}

/// Inputs of one composite-loss evaluation: patch rows of both views and the
/// channel count masked for the local term.
pub struct ViewRows<'a> {
    pub rows_s: &'a Tensor,
    pub rows_t: &'a Tensor,
    pub local_cut: usize,
}

/// Global + local swapped loss. When `targets` is `None` they are computed
/// from the current scores and returned for reuse.
pub fn composite_loss(
    views: &ViewRows<'_>,
    head: &ProjectionHead,
    prototypes: &PrototypeBank,
    cfg: &SwavTrainConfig,
    targets: Option<&CompositeTargets>,
) -> Result<(CompositeLoss, SwavGrads, CompositeTargets)> {
    let tau = cfg.temperature;
    let gs = arm_forward(head, prototypes, views.rows_s, tau)?;
    let gt = arm_forward(head, prototypes, views.rows_t, tau)?;
    let mut fresh = Vec::new();
    let mut target = |idx: usize, scores: &Tensor| -> Result<Tensor> {
        match targets {
            Some(t) => Ok(t.0[idx].clone()),
            None => {
                let q = assignment_targets(scores, &cfg.sinkhorn, cfg.marginal)?;
                fresh.push(q.clone());
                Ok(q)
            }
        }
    };
    let q_gs = target(0, &gs.scores)?;
    let q_gt = target(1, &gt.scores)?;
    let (global, mut grads) = swapped_term(head, prototypes, &gs, &gt, &q_gs, &q_gt, tau)?;
    let mut local = 0.0;
    if cfg.local_loss_enabled {
        let ls = arm_forward(
            head,
            prototypes,
            &mask_rows(views.rows_s, views.local_cut),
            tau,
        )?;
        let lt = arm_forward(
            head,
            prototypes,
            &mask_rows(views.rows_t, views.local_cut),
            tau,
        )?;
        let q_ls = target(2, &ls.scores)?;
        let q_lt = target(3, &lt.scores)?;
        let (l, g) = swapped_term(head, prototypes, &ls, &lt, &q_ls, &q_lt, tau)?;
        local = l;
        grads.accumulate(&g);
    }
    let used = match targets {
        Some(t) => t.clone(),
        None => CompositeTargets(fresh),
    };
    Ok((
        CompositeLoss {
            global,
            local,
            total: global + local,
        },
        grads,
        used,
    ))
}

/// Mean losses of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub global: f64,
    pub local: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct SwavTrainReport {
    pub model: SwavModel,
    pub history: Vec<EpochLoss>,
    /// Set when training stopped on a non-finite loss; `model` then holds the
    /// last finite parameters.
    pub aborted: Option<String>,
}

pub fn init_model<R: Rng + ?Sized>(
    input_width: usize,
    cfg: &SwavTrainConfig,
    rng: &mut R,
) -> SwavModel {
    SwavModel {
        head: ProjectionHead::new(input_width, cfg.feature_dim, cfg.leaky_slope, rng),
        prototypes: PrototypeBank::new(cfg.feature_dim, cfg.prototypes, rng),
        temperature: cfg.temperature,
    }
}

/// Stage one: trains the projection head and prototypes on generated views.
pub fn train(
    generator: &Generator,
    cfg: &SwavTrainConfig,
    rng: &mut StageRng,
) -> Result<SwavTrainReport> {
    train_with_progress(generator, cfg, rng, |_| {})
}

/// [`train`], calling `on_epoch` after every epoch.
pub fn train_with_progress(
    generator: &Generator,
    cfg: &SwavTrainConfig,
    rng: &mut StageRng,
    mut on_epoch: impl FnMut(&EpochLoss),
) -> Result<SwavTrainReport> {
    cfg.validate()?;
    let spec = generator.spec();
    let out_r = spec.output_resolution();
    let mut model = init_model(spec.hidden_channels(), cfg, rng);
    let mut optimizer = Optimizer::new(
        OptimizerKind::sgd_lars(cfg.momentum, cfg.lars_coefficient),
        cfg.learning_rate,
    )?;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut sums = (0.0, 0.0, 0.0);
        for _ in 0..cfg.images_per_epoch {
            let base = generator.sample_latents(rng.random(), LatentMode::Broadcast);
            let pair = make_view_pair(generator, &base, &cfg.augment, rng)?;
            let fs = assemble_pixel_features(&generator.features(&pair.view_s)?, cfg.upsample)?;
            let ft = assemble_pixel_features(&generator.features(&pair.view_t)?, cfg.upsample)?;
            let sel = sample_patches(out_r, out_r, cfg.patch_size, cfg.patches_per_image, rng)?;
            let rows_s = fs.gather(&sel);
            let rows_t = ft.gather(&sel);
            let views = ViewRows {
                rows_s: &rows_s,
                rows_t: &rows_t,
                local_cut: masked_channels(&fs, pair.layer_s.min(pair.layer_t)),
            };
            let (loss, grads, _) =
                composite_loss(&views, &model.head, &model.prototypes, cfg, None)?;
            if !loss.total.is_finite() {
                return Ok(SwavTrainReport {
                    model,
                    history,
                    aborted: Some(format!("non-finite loss at epoch {epoch}")),
                });
            }
            let before = model.clone();
            let step = optimizer.step(&mut [
                ParamSlot {
                    name: "head.weights",
                    value: &mut model.head.layer.weights,
                    grad: &grads.head.weights,
                },
                ParamSlot {
                    name: "head.bias",
                    value: &mut model.head.layer.bias,
                    grad: &grads.head.bias,
                },
                ParamSlot {
                    name: "prototypes",
                    value: &mut model.prototypes.c,
                    grad: &grads.prototypes,
                },
            ]);
            if let Err(e) = step {
                return Ok(SwavTrainReport {
                    model: before,
                    history,
                    aborted: Some(e.to_string()),
                });
            }
            model.prototypes.normalize();
            sums.0 += loss.global;
            sums.1 += loss.local;
            sums.2 += loss.total;
        }
        let n = cfg.images_per_epoch as f64;
        let record = EpochLoss {
            epoch,
            global: sums.0 / n,
            local: sums.1 / n,
            total: sums.2 / n,
        };
        on_epoch(&record);
        history.push(record);
    }
    Ok(SwavTrainReport {
        model,
        history,
        aborted: None,
    })
}
