use super::{LayerGrads, LayerKind, LayerParams, Tape};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `activation(W·x + b)` applied to every row of `input` (shape `(..., in)`).
pub fn dense_apply(
    params: &LayerParams,
    input: &Tensor,
    capture: bool,
) -> Result<(Tensor, Option<Tape>)> {
    if params.kind != LayerKind::Dense {
        return Err(Error::contract("dense_apply on a conv layer"));
    }
    let (out_w, in_w) = (params.weights.dims()[0], params.weights.dims()[1]);
    if input.rank() == 0 || input.last_dim() != in_w {
        return Err(Error::shape(format!(
            "dense layer expects last dim {in_w}, got {:?}",
            input.dims()
        )));
    }
    let rows = input.rows();
    let w = params.weights.data();
    let b = params.bias.data();
    let mut pre = vec![0.0; rows * out_w];
    for n in 0..rows {
        let x = input.row(n);
        let dst = &mut pre[n * out_w..(n + 1) * out_w];
        for (o, d) in dst.iter_mut().enumerate() {
            let wr = &w[o * in_w..(o + 1) * in_w];
            *d = b[o] + wr.iter().zip(x).map(|(a, c)| a * c).sum::<f64>();
        }
    }
    let mut dims = input.dims().to_vec();
    *dims.last_mut().unwrap() = out_w;
    let pre = Tensor::new(dims, pre)?;
    let out = params.activate(&pre);
    let tape = capture.then(|| Tape {
        input: input.clone(),
        pre,
        output: out.clone(),
    });
    Ok((out, tape))
}

pub(super) fn backward(
    params: &LayerParams,
    tape: &Tape,
    grad_pre: &Tensor,
) -> Result<(LayerGrads, Tensor)> {
    let (out_w, in_w) = (params.weights.dims()[0], params.weights.dims()[1]);
    if grad_pre.dims() != tape.pre.dims() {
        return Err(Error::shape("dense backward gradient dims"));
    }
    let rows = tape.input.rows();
    let w = params.weights.data();
    let mut gw = vec![0.0; out_w * in_w];
    let mut gb = vec![0.0; out_w];
    let mut gx = vec![0.0; rows * in_w];
    for n in 0..rows {
        let x = tape.input.row(n);
        let g = grad_pre.row(n);
        let gxr = &mut gx[n * in_w..(n + 1) * in_w];
        for (o, &go) in g.iter().enumerate() {
            if go == 0.0 {
                continue;
            }
            gb[o] += go;
            let gwr = &mut gw[o * in_w..(o + 1) * in_w];
            for (a, &xv) in gwr.iter_mut().zip(x) {
                *a += go * xv;
            }
            let wr = &w[o * in_w..(o + 1) * in_w];
            for (a, &wv) in gxr.iter_mut().zip(wr) {
                *a += go * wv;
            }
        }
    }
    Ok((
        LayerGrads {
            weights: Tensor::new(vec![out_w, in_w], gw)?,
            bias: Tensor::new(vec![out_w], gb)?,
        },
        Tensor::new(tape.input.dims().to_vec(), gx)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, Activation};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_weights_with_leaky_relu() {
        let w = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let layer =
            LayerParams::dense(w, Tensor::zeros(&[2]), Activation::LeakyRelu(0.01)).unwrap();
        let (y, _) = dense_apply(&layer, &Tensor::from_vec(vec![3.0, -2.0]), false).unwrap();
        assert_eq!(y.data()[0], 3.0);
        assert!((y.data()[1] + 0.02).abs() < 1e-15);
    }

    #[test]
    fn zero_weights_give_bias() {
        let layer = LayerParams::dense(
            Tensor::zeros(&[1, 3]),
            Tensor::from_vec(vec![5.0]),
            Activation::None,
        )
        .unwrap();
        let (y, _) = dense_apply(&layer, &Tensor::from_vec(vec![1.0, -7.0, 2.5]), false).unwrap();
        assert_eq!(y.data(), &[5.0]);
    }

    #[test]
    fn dimension_mismatch_is_shape_error() {
        let layer = LayerParams::dense(
            Tensor::zeros(&[2, 3]),
            Tensor::zeros(&[2]),
            Activation::None,
        )
        .unwrap();
        let err = dense_apply(&layer, &Tensor::zeros(&[4, 2]), false).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn weight_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let layer = LayerParams::init(
            LayerKind::Dense,
            3,
            4,
            Activation::LeakyRelu(0.01),
            &mut rng,
        );
        let x = Tensor::new(
            vec![5, 3],
            (0..15).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let (y, tape) = layer.forward(&x).unwrap();
        let (grads, _) = layer
            .backward(&tape, &Tensor::filled(y.dims(), 1.0))
            .unwrap();
        let err = grad_check(layer.weights.data(), grads.weights.data(), 1e-3, |w| {
            let mut l = layer.clone();
            l.weights.data_mut().copy_from_slice(w);
            l.apply(&x).unwrap().sum()
        });
        assert!(err <= 1e-4, "relative error {err}");
    }
}
