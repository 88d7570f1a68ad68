//! Spatial resampling of `C × h × w` maps.

use crate::tensor::Tensor;

/// Nearest-neighbour resize of every channel to `out_h × out_w`.
pub fn upsample_nearest(t: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let d = t.dims();
    let (c, h, w) = (d[0], d[1], d[2]);
    let src = t.data();
    let mut out = vec![0.0; c * out_h * out_w];
    let xs: Vec<usize> = (0..out_w).map(|x| x * w / out_w).collect();
    for ch in 0..c {
        for y in 0..out_h {
            let sy = y * h / out_h;
            let srow = &src[(ch * h + sy) * w..(ch * h + sy + 1) * w];
            let drow = &mut out[(ch * out_h + y) * out_w..(ch * out_h + y + 1) * out_w];
            for (dv, &sx) in drow.iter_mut().zip(&xs) {
                *dv = srow[sx];
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out).expect("resize dims")
}

fn bilinear_taps(out: usize, inp: usize) -> Vec<(usize, usize, f64)> {
    (0..out)
        .map(|o| {
            let pos = ((o as f64 + 0.5) * inp as f64 / out as f64 - 0.5).max(0.0);
            let i0 = (pos.floor() as usize).min(inp - 1);
            let i1 = (i0 + 1).min(inp - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

/// Bilinear resize with half-pixel centers and edge clamping.
pub fn upsample_bilinear(t: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let d = t.dims();
    let (c, h, w) = (d[0], d[1], d[2]);
    let src = t.data();
    let ty = bilinear_taps(out_h, h);
    let tx = bilinear_taps(out_w, w);
    let mut out = vec![0.0; c * out_h * out_w];
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for (y, &(y0, y1, fy)) in ty.iter().enumerate() {
            let drow = &mut out[(ch * out_h + y) * out_w..(ch * out_h + y + 1) * out_w];
            for (dv, &(x0, x1, fx)) in drow.iter_mut().zip(&tx) {
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                *dv = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out).expect("resize dims")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_replicates_blocks() {
        let t = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let u = upsample_nearest(&t, 4, 4);
        assert_eq!(
            u.data(),
            &[
                1.0, 1.0, 2.0, 2.0, //
                1.0, 1.0, 2.0, 2.0, //
                3.0, 3.0, 4.0, 4.0, //
                3.0, 3.0, 4.0, 4.0
            ]
        );
    }

    #[test]
    fn bilinear_preserves_constants_and_range() {
        let t = Tensor::filled(&[2, 3, 3], 0.25);
        assert!(upsample_bilinear(&t, 12, 12)
            .data()
            .iter()
            .all(|&v| (v - 0.25).abs() < 1e-15));
        let t = Tensor::new(vec![1, 2, 2], vec![0.0, 1.0, -1.0, 0.5]).unwrap();
        let u = upsample_bilinear(&t, 8, 8);
        assert!(u.data().iter().all(|&v| (-1.0..=1.0).contains(&v)));
    }
}
