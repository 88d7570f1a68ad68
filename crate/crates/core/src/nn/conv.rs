use super::{LayerGrads, LayerKind, LayerParams, Tape};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Range of output coordinates whose source `o + k - 1` falls inside `[0, n)`.
#[inline]
fn valid_range(k: usize, n: usize) -> (usize, usize) {
    match k {
        0 => (1.min(n), n),
        1 => (0, n),
        _ => (0, n.saturating_sub(1)),
    }
}

/// Same-padded, unit-stride 3×3 convolution over a `C × H × W` input.
pub fn conv3x3_apply(
    params: &LayerParams,
    input: &Tensor,
    capture: bool,
) -> Result<(Tensor, Option<Tape>)> {
    if params.kind != LayerKind::Conv3x3 {
        return Err(Error::contract("conv3x3_apply on a dense layer"));
    }
    let wd = params.weights.dims();
    let (out_c, in_c) = (wd[0], wd[1]);
    let d = input.dims();
    if d.len() != 3 || d[0] != in_c || d[1] == 0 || d[2] == 0 {
        return Err(Error::shape(format!(
            "conv expects {in_c}×H×W input, got {d:?}"
        )));
    }
    let (h, w) = (d[1], d[2]);
    let plane = h * w;
    let x = input.data();
    let k = params.weights.data();
    let mut pre = vec![0.0; out_c * plane];
    for o in 0..out_c {
        let dst = &mut pre[o * plane..(o + 1) * plane];
        dst.fill(params.bias.data()[o]);
        for c in 0..in_c {
            let src = &x[c * plane..(c + 1) * plane];
            let kern = &k[(o * in_c + c) * 9..(o * in_c + c + 1) * 9];
            for ky in 0..3 {
                let (y0, y1) = valid_range(ky, h);
                for kx in 0..3 {
                    let kv = kern[ky * 3 + kx];
                    if kv == 0.0 {
                        continue;
                    }
                    let (x0, x1) = valid_range(kx, w);
                    for y in y0..y1 {
                        let sy = y + ky - 1;
                        let drow = &mut dst[y * w + x0..y * w + x1];
                        let srow = &src[sy * w + x0 + kx - 1..sy * w + x1 + kx - 1];
                        for (a, &b) in drow.iter_mut().zip(srow) {
                            *a += kv * b;
                        }
                    }
                }
            }
        }
    }
    let pre = Tensor::new(vec![out_c, h, w], pre)?;
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
    if grad_pre.dims() != tape.pre.dims() {
        return Err(Error::shape("conv backward gradient dims"));
    }
    let wd = params.weights.dims();
    let (out_c, in_c) = (wd[0], wd[1]);
    let (h, w) = (tape.input.dims()[1], tape.input.dims()[2]);
    let plane = h * w;
    let x = tape.input.data();
    let g = grad_pre.data();
    let k = params.weights.data();
    let mut gk = vec![0.0; k.len()];
    let mut gx = vec![0.0; x.len()];
    let mut gb = vec![0.0; out_c];
    for o in 0..out_c {
        let go = &g[o * plane..(o + 1) * plane];
        gb[o] = go.iter().sum();
        for c in 0..in_c {
            let src = &x[c * plane..(c + 1) * plane];
            let gsrc = &mut gx[c * plane..(c + 1) * plane];
            let base = (o * in_c + c) * 9;
            for ky in 0..3 {
                let (y0, y1) = valid_range(ky, h);
                for kx in 0..3 {
                    let (x0, x1) = valid_range(kx, w);
                    let kv = k[base + ky * 3 + kx];
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = y + ky - 1;
                        let grow = &go[y * w + x0..y * w + x1];
                        let s0 = sy * w + x0 + kx - 1;
                        let srow = &src[s0..s0 + (x1 - x0)];
                        acc += grow.iter().zip(srow).map(|(a, b)| a * b).sum::<f64>();
                        let gsrow = &mut gsrc[s0..s0 + (x1 - x0)];
                        for (a, &b) in gsrow.iter_mut().zip(grow) {
                            *a += kv * b;
                        }
                    }
                    gk[base + ky * 3 + kx] = acc;
                }
            }
        }
    }
    Ok((
        LayerGrads {
            weights: Tensor::new(wd.to_vec(), gk)?,
            bias: Tensor::new(vec![out_c], gb)?,
        },
        Tensor::new(tape.input.dims().to_vec(), gx)?,
    ))
}
