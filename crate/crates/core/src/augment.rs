//! Latent-space views for contrastive training.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::generator::{Generator, LatentMode, LatentStack};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PerturbMode {
    #[default]
    Interpolate,
    Additive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub mode: PerturbMode,
    /// Weight of the base latent in an interpolated view.
    pub tau_p: f64,
    pub sigma_d: f64,
    /// Restricts the perturbed layer to `1..=max_layer` when set.
    pub max_layer: Option<usize>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            mode: PerturbMode::Interpolate,
            tau_p: 0.9,
            sigma_d: 0.5,
            max_layer: None,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau_p) {
            return Err(Error::config(format!(
                "tau_p {} outside [0, 1]",
                self.tau_p
            )));
        }
        if !(self.sigma_d >= 0.0) {
            return Err(Error::config("sigma_d must be >= 0"));
        }
        if self.max_layer == Some(0) {
            return Err(Error::config("max_layer must be >= 1"));
        }
        Ok(())
    }
}

/// Two views of one base latent, each perturbed at a single layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewPair {
    pub base: LatentStack,
    pub view_s: LatentStack,
    pub view_t: LatentStack,
    pub layer_s: usize,
    pub layer_t: usize,
}

fn check_layer(w: &LatentStack, layer: usize) -> Result<()> {
    if layer == 0 || layer > w.layer_count() {
        return Err(Error::param(format!(
            "layer {layer} outside 1..={}",
            w.layer_count()
        )));
    }
    Ok(())
}

/// `w'_i = w_i + n`, `n ~ N(0, σ_d² I)`.
pub fn perturb_additive<R: Rng + ?Sized>(
    w: &LatentStack,
    layer: usize,
    sigma_d: f64,
    rng: &mut R,
) -> Result<LatentStack> {
    check_layer(w, layer)?;
    if !(sigma_d >= 0.0) {
        return Err(Error::param(format!("sigma_d must be >= 0, got {sigma_d}")));
    }
    let mut out = w.clone();
    if sigma_d == 0.0 {
        return Ok(out);
    }
    let noise = Normal::new(0.0, sigma_d).map_err(|e| Error::param(e.to_string()))?;
    for v in out.layer_mut(layer).iter_mut() {
        *v += noise.sample(rng);
    }
    Ok(out)
}

/// `w'_i = τ_p·w_i + (1 − τ_p)·donor_i`.
pub fn perturb_interpolate(
    w: &LatentStack,
    layer: usize,
    tau_p: f64,
    donor: &LatentStack,
) -> Result<LatentStack> {
    check_layer(w, layer)?;
    if !(0.0..=1.0).contains(&tau_p) {
        return Err(Error::param(format!("tau_p {tau_p} outside [0, 1]")));
    }
    if donor.layer_count() != w.layer_count() || donor.dim() != w.dim() {
        return Err(Error::shape("donor latent dims differ from base"));
    }
    let mut out = w.clone();
    if tau_p == 1.0 {
        return Ok(out);
    }
    for (o, &d) in out.layer_mut(layer).iter_mut().zip(donor.layer(layer)) {
        *o = if tau_p == 0.0 {
            d
        } else {
            tau_p * *o + (1.0 - tau_p) * d
        };
    }
    Ok(out)
}

/// Interpolates towards a freshly sampled latent.
pub fn perturb_interpolate_sampled<R: Rng + ?Sized>(
    g: &Generator,
    w: &LatentStack,
    layer: usize,
    tau_p: f64,
    rng: &mut R,
) -> Result<LatentStack> {
    let donor = g.sample_latents(rng.random(), LatentMode::Broadcast);
    perturb_interpolate(w, layer, tau_p, &donor)
}

fn perturb_view<R: Rng + ?Sized>(
    g: &Generator,
    w: &LatentStack,
    layer: usize,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<LatentStack> {
    match cfg.mode {
        PerturbMode::Interpolate => perturb_interpolate_sampled(g, w, layer, cfg.tau_p, rng),
        PerturbMode::Additive => perturb_additive(w, layer, cfg.sigma_d, rng),
    }
}

/// Draws the two perturbed layers independently and uniformly, then perturbs
/// the shared base once per view.
pub fn make_view_pair<R: Rng + ?Sized>(
    g: &Generator,
    w: &LatentStack,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<ViewPair> {
    let top = cfg
        .max_layer
        .unwrap_or(w.layer_count())
        .min(w.layer_count());
    let layer_s = rng.random_range(1..=top);
    let layer_t = rng.random_range(1..=top);
    let view_s = perturb_view(g, w, layer_s, cfg, rng)?;
    let view_t = perturb_view(g, w, layer_t, cfg, rng)?;
    Ok(ViewPair {
        base: w.clone(),
        view_s,
        view_t,
        layer_s,
        layer_t,
    })
}
