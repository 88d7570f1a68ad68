use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Splits `dims` around `axis` into `(outer, len, inner)` extents.
fn split_axis(dims: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= dims.len() {
        return Err(Error::param(format!(
            "axis {axis} out of range for {dims:?}"
        )));
    }
    Ok((
        dims[..axis].iter().product(),
        dims[axis],
        dims[axis + 1..].iter().product(),
    ))
}

fn for_each_lane(
    dims: &[usize],
    axis: usize,
    mut f: impl FnMut(&mut dyn Iterator<Item = usize>),
) -> Result<()> {
    let (outer, len, inner) = split_axis(dims, axis)?;
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            f(&mut (0..len).map(|j| base + j * inner));
        }
    }
    Ok(())
}

/// Softmax of `t / temperature` along `axis`.
pub fn softmax_scaled(t: &Tensor, temperature: f64, axis: usize) -> Result<Tensor> {
    let mut out = t.clone();
    let src = t.data();
    let dst = out.data_mut();
    for_each_lane(t.dims(), axis, |lane| {
        let idx: Vec<usize> = lane.collect();
        let m = idx
            .iter()
            .map(|&i| src[i])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for &i in &idx {
            dst[i] = ((src[i] - m) / temperature).exp();
            s += dst[i];
        }
        for &i in &idx {
            dst[i] /= s;
        }
    })?;
    Ok(out)
}

/// Log-softmax of `t / temperature` along `axis`.
pub fn log_softmax_scaled(t: &Tensor, temperature: f64, axis: usize) -> Result<Tensor> {
    let mut out = t.clone();
    let src = t.data();
    let dst = out.data_mut();
    for_each_lane(t.dims(), axis, |lane| {
        let idx: Vec<usize> = lane.collect();
        let m = idx
            .iter()
            .map(|&i| src[i])
            .fold(f64::NEG_INFINITY, f64::max);
        let lse = idx
            .iter()
            .map(|&i| ((src[i] - m) / temperature).exp())
            .sum::<f64>()
            .ln();
        for &i in &idx {
            dst[i] = (src[i] - m) / temperature - lse;
        }
    })?;
    Ok(out)
}

/// Cross-entropy `−Σ_k q_k log softmax(logits/τ)_k`, averaged over rows.
///
/// Rows run along the last axis. Returns the loss and its exact gradient
/// with respect to `logits`.
pub fn softmax_xent(logits: &Tensor, target: &Tensor, temperature: f64) -> Result<(f64, Tensor)> {
    if !(temperature > 0.0) {
        return Err(Error::param(format!(
            "temperature must be > 0, got {temperature}"
        )));
    }
    if logits.dims() != target.dims() || logits.rank() == 0 {
        return Err(Error::shape(format!(
            "logits {:?} vs target {:?}",
            logits.dims(),
            target.dims()
        )));
    }
    let axis = logits.rank() - 1;
    let k = logits.last_dim();
    let rows = logits.rows();
    for r in 0..rows {
        let q = target.row(r);
        let s: f64 = q.iter().sum();
        if q.iter().any(|&v| v < 0.0 || !v.is_finite()) || (s - 1.0).abs() > 1e-9 {
            return Err(Error::contract(format!(
                "target row {r} is not a distribution (sum {s})"
            )));
        }
    }
    let logp = log_softmax_scaled(logits, temperature, axis)?;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(logits.dims());
    let scale = 1.0 / (rows as f64 * temperature);
    for r in 0..rows {
        for j in 0..k {
            let i = r * k + j;
            let q = target.data()[i];
            let lp = logp.data()[i];
            if q > 0.0 {
                loss -= q * lp;
            }
            grad.data_mut()[i] = (lp.exp() - q) * scale;
        }
    }
    Ok((loss / rows as f64, grad))
}

/// Scales every lane along `axis` to unit Euclidean norm.
pub fn l2_normalize(v: &Tensor, axis: usize) -> Result<Tensor> {
    let mut out = v.clone();
    let src = v.data();
    let dst = out.data_mut();
    let mut zero = false;
    for_each_lane(v.dims(), axis, |lane| {
        let idx: Vec<usize> = lane.collect();
        let n = idx.iter().map(|&i| src[i] * src[i]).sum::<f64>().sqrt();
        if n == 0.0 || !n.is_finite() {
            zero = true;
            return;
        }
        for &i in &idx {
            dst[i] = src[i] / n;
        }
    })?;
    if zero {
        return Err(Error::ZeroNorm);
    }
    Ok(out)
}

/// Gradient of [`l2_normalize`]: `(g − y·⟨y, g⟩) / ‖x‖` per lane.
pub fn l2_normalize_backward(
    input: &Tensor,
    output: &Tensor,
    grad_out: &Tensor,
    axis: usize,
) -> Result<Tensor> {
    if input.dims() != output.dims() || input.dims() != grad_out.dims() {
        return Err(Error::shape("l2_normalize_backward dims"));
    }
    let mut grad = Tensor::zeros(input.dims());
    let (x, y, g) = (input.data(), output.data(), grad_out.data());
    let dst = grad.data_mut();
    for_each_lane(input.dims(), axis, |lane| {
        let idx: Vec<usize> = lane.collect();
        let n = idx.iter().map(|&i| x[i] * x[i]).sum::<f64>().sqrt();
        let dot: f64 = idx.iter().map(|&i| y[i] * g[i]).sum();
        for &i in &idx {
            dst[i] = (g[i] - y[i] * dot) / n;
        }
    })?;
    Ok(grad)
}
