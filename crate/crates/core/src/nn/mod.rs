//! Dense and 3×3 convolution layers with hand-written backward passes,
//! loss kernels, and the SGD+LARS / Adam optimizers.

mod conv;
mod dense;
pub mod gradcheck;
mod loss;
mod optim;

pub use conv::conv3x3_apply;
pub use dense::dense_apply;
pub use gradcheck::{grad_check, relative_error};
pub use loss::{
    l2_normalize, l2_normalize_backward, log_softmax_scaled, softmax_scaled, softmax_xent,
};
pub use optim::{Optimizer, OptimizerKind, ParamSlot};

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    /// Softmax over the feature axis: the last axis for dense layers, the
    /// channel axis for convolutions.
    Softmax,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Dense,
    Conv3x3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub kind: LayerKind,
    pub activation: Activation,
    /// Dense: `out × in`. Conv: `out × in × 3 × 3`.
    pub weights: Tensor,
    pub bias: Tensor,
}

/// Values recorded by a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    pub input: Tensor,
    pub pre: Tensor,
    pub output: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl LayerParams {
    pub fn dense(weights: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        if weights.rank() != 2 || bias.dims() != [weights.dims()[0]] {
            return Err(Error::shape(format!(
                "dense weights {:?} with bias {:?}",
                weights.dims(),
                bias.dims()
            )));
        }
        Ok(Self {
            kind: LayerKind::Dense,
            activation,
            weights,
            bias,
        })
    }

    pub fn conv3x3(weights: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        let d = weights.dims();
        if d.len() != 4 || d[2] != 3 || d[3] != 3 || bias.dims() != [d[0]] {
            return Err(Error::shape(format!(
                "conv weights {:?} with bias {:?}",
                d,
                bias.dims()
            )));
        }
        Ok(Self {
            kind: LayerKind::Conv3x3,
            activation,
            weights,
            bias,
        })
    }

    /// Uniform initialization in `±1/√fan_in`, zero bias.
    pub fn init<R: Rng + ?Sized>(
        kind: LayerKind,
        in_width: usize,
        out_width: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let (dims, fan_in) = match kind {
            LayerKind::Dense => (vec![out_width, in_width], in_width),
            LayerKind::Conv3x3 => (vec![out_width, in_width, 3, 3], in_width * 9),
        };
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = dims.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        Self {
            kind,
            activation,
            weights: Tensor::new(dims, data).expect("init dims"),
            bias: Tensor::zeros(&[out_width]),
        }
    }

    pub fn in_width(&self) -> usize {
        self.weights.dims()[1]
    }

    pub fn out_width(&self) -> usize {
        self.weights.dims()[0]
    }

    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, Tape)> {
        let (out, tape) = match self.kind {
            LayerKind::Dense => dense_apply(self, input, true)?,
            LayerKind::Conv3x3 => conv3x3_apply(self, input, true)?,
        };
        Ok((out, tape.expect("captured")))
    }

    pub fn apply(&self, input: &Tensor) -> Result<Tensor> {
        Ok(match self.kind {
            LayerKind::Dense => dense_apply(self, input, false)?.0,
            LayerKind::Conv3x3 => conv3x3_apply(self, input, false)?.0,
        })
    }

    /// Backward pass from the gradient w.r.t. the layer output.
    pub fn backward(&self, tape: &Tape, grad_out: &Tensor) -> Result<(LayerGrads, Tensor)> {
        if grad_out.dims() != tape.output.dims() {
            return Err(Error::shape(format!(
                "grad {:?} vs output {:?}",
                grad_out.dims(),
                tape.output.dims()
            )));
        }
        let grad_pre = self.activation_backward(tape, grad_out);
        self.backward_from_pre(tape, &grad_pre)
    }

    /// Backward pass from the gradient w.r.t. the pre-activation, used when a
    /// loss is fused with the final softmax.
    pub fn backward_from_pre(
        &self,
        tape: &Tape,
        grad_pre: &Tensor,
    ) -> Result<(LayerGrads, Tensor)> {
        match self.kind {
            LayerKind::Dense => dense::backward(self, tape, grad_pre),
            LayerKind::Conv3x3 => conv::backward(self, tape, grad_pre),
        }
    }

    fn feature_layout(&self, t: &Tensor) -> (usize, usize) {
        // (groups, stride): softmax runs over `groups` values spaced `stride` apart
        match self.kind {
            LayerKind::Dense => (t.last_dim(), 1),
            LayerKind::Conv3x3 => {
                let d = t.dims();
                (d[0], d[1] * d[2])
            }
        }
    }

    pub(crate) fn activate(&self, pre: &Tensor) -> Tensor {
        match self.activation {
            Activation::None => pre.clone(),
            Activation::LeakyRelu(slope) => pre.map(|v| if v > 0.0 { v } else { slope * v }),
            Activation::Softmax => {
                let (k, stride) = self.feature_layout(pre);
                let mut out = pre.clone();
                for_each_group(out.data_mut(), k, stride, |vals| {
                    let m = vals.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                    let mut s = 0.0;
                    for v in vals.iter_mut() {
                        *v = (*v - m).exp();
                        s += *v;
                    }
                    for v in vals.iter_mut() {
                        *v /= s;
                    }
                });
                out
            }
        }
    }

    fn activation_backward(&self, tape: &Tape, grad_out: &Tensor) -> Tensor {
        match self.activation {
            Activation::None => grad_out.clone(),
            Activation::LeakyRelu(slope) => {
                let mut g = grad_out.clone();
                for (gv, &p) in g.data_mut().iter_mut().zip(tape.pre.data()) {
                    if p <= 0.0 {
                        *gv *= slope;
                    }
                }
                g
            }
            Activation::Softmax => {
                let (k, stride) = self.feature_layout(&tape.output);
                let s = tape.output.data();
                let g = grad_out.data();
                let mut out = vec![0.0; s.len()];
                let groups = s.len() / k;
                for gi in 0..groups {
                    let base = (gi / stride) * k * stride + gi % stride;
                    let dot: f64 = (0..k)
                        .map(|j| s[base + j * stride] * g[base + j * stride])
                        .sum();
                    for j in 0..k {
                        let idx = base + j * stride;
                        out[idx] = s[idx] * (g[idx] - dot);
                    }
                }
                Tensor::new(tape.output.dims().to_vec(), out).expect("same dims")
            }
        }
    }
}

/// Calls `f` on each softmax group, gathered into a scratch buffer when strided.
fn for_each_group(data: &mut [f64], k: usize, stride: usize, mut f: impl FnMut(&mut [f64])) {
    if k == 0 {
        return;
    }
    if stride == 1 {
        for chunk in data.chunks_mut(k) {
            f(chunk);
        }
        return;
    }
    let mut buf = vec![0.0; k];
    let blocks = data.len() / (k * stride);
    for b in 0..blocks {
        for p in 0..stride {
            let base = b * k * stride + p;
            for j in 0..k {
                buf[j] = data[base + j * stride];
            }
            f(&mut buf);
            for j in 0..k {
                data[base + j * stride] = buf[j];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn conv_softmax_is_per_pixel_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let layer = LayerParams::init(LayerKind::Conv3x3, 2, 4, Activation::Softmax, &mut rng);
        let x = Tensor::new(
            vec![2, 3, 5],
            (0..30).map(|i| (i as f64 * 0.37).sin()).collect(),
        )
        .unwrap();
        let y = layer.apply(&x).unwrap();
        for p in 0..15 {
            let s: f64 = (0..4).map(|c| y.data()[c * 15 + p]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
