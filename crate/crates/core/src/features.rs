//! Per-pixel hidden feature matrices, layer masking and patch sampling.

use rand::Rng;

use crate::error::{Error, Result};
use crate::generator::FeatureVolume;
use crate::resample::{upsample_bilinear, upsample_nearest};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpsampleMode {
    #[default]
    Nearest,
    Bilinear,
}

/// Upsampled, channel-concatenated generator features (`C_hidden × H × W`).
#[derive(Debug, Clone, PartialEq)]
pub struct PixelFeatureMatrix {
    pub data: Tensor,
    /// `(layer, start, end)` per generator layer, 1-based layers.
    pub layer_channel_ranges: Vec<(usize, usize, usize)>,
}

impl PixelFeatureMatrix {
    pub fn channels(&self) -> usize {
        self.data.dims()[0]
    }

    pub fn height(&self) -> usize {
        self.data.dims()[1]
    }

    pub fn width(&self) -> usize {
        self.data.dims()[2]
    }

    pub fn layer_count(&self) -> usize {
        self.layer_channel_ranges.len()
    }

    /// Every pixel as a row: `(H·W) × C`.
    pub fn pixel_rows(&self) -> Tensor {
        self.data
            .clone()
            .reshape(&[self.channels(), self.height() * self.width()])
            .and_then(|t| t.transpose())
            .expect("feature matrix is rank 3")
    }

    /// Feature rows at the selected pixels: `N × C`.
    pub fn gather(&self, sel: &PatchSelection) -> Tensor {
        let (c, w) = (self.channels(), self.width());
        let plane = self.height() * w;
        let mut out = Vec::with_capacity(sel.coords.len() * c);
        for &(x, y) in &sel.coords {
            let p = y * w + x;
            out.extend((0..c).map(|ch| self.data.data()[ch * plane + p]));
        }
        Tensor::new(vec![sel.coords.len(), c], out).expect("gather dims")
    }

    /// Inverse of [`gather`](Self::gather): writes rows back at their pixels.
    pub fn scatter(&mut self, sel: &PatchSelection, rows: &Tensor) -> Result<()> {
        let (c, w) = (self.channels(), self.width());
        if rows.dims() != [sel.coords.len(), c] {
            return Err(Error::shape("scatter rows do not match the selection"));
        }
        let plane = self.height() * w;
        for (i, &(x, y)) in sel.coords.iter().enumerate() {
            for ch in 0..c {
                self.data.data_mut()[ch * plane + y * w + x] = rows.get2(i, ch);
            }
        }
        Ok(())
    }
}

/// Upsamples each `H_l` to the final resolution and concatenates along
/// channels in layer order.
pub fn assemble_pixel_features(
    fv: &FeatureVolume,
    mode: UpsampleMode,
) -> Result<PixelFeatureMatrix> {
    let last = fv
        .layers
        .last()
        .ok_or_else(|| Error::contract("empty feature volume"))?;
    let (h, w) = (last.dims()[1], last.dims()[2]);
    let total: usize = fv.channels().iter().sum();
    let mut data = Vec::with_capacity(total * h * w);
    let mut ranges = Vec::with_capacity(fv.layers.len());
    let mut start = 0;
    for (i, layer) in fv.layers.iter().enumerate() {
        let up = if layer.dims()[1] == h && layer.dims()[2] == w {
            layer.clone()
        } else {
            match mode {
                UpsampleMode::Nearest => upsample_nearest(layer, h, w),
                UpsampleMode::Bilinear => upsample_bilinear(layer, h, w),
            }
        };
        let c = layer.dims()[0];
        data.extend_from_slice(up.data());
        ranges.push((i + 1, start, start + c));
        start += c;
    }
    Ok(PixelFeatureMatrix {
        data: Tensor::new(vec![total, h, w], data)?,
        layer_channel_ranges: ranges,
    })
}

/// Zeroes the channels of layers `1..s-1`, keeping the channel count.
pub fn local_mask(pf: &PixelFeatureMatrix, perturbed_layer: usize) -> Result<PixelFeatureMatrix> {
    if perturbed_layer == 0 || perturbed_layer > pf.layer_count() {
        return Err(Error::param(format!(
            "perturbed layer {perturbed_layer} outside 1..={}",
            pf.layer_count()
        )));
    }
    let mut out = pf.clone();
    let plane = pf.height() * pf.width();
    let cut = masked_channels(pf, perturbed_layer);
    out.data.data_mut()[..cut * plane].fill(0.0);
    Ok(out)
}

/// Number of leading channels removed by [`local_mask`] at layer `s`.
pub fn masked_channels(pf: &PixelFeatureMatrix, perturbed_layer: usize) -> usize {
    pf.layer_channel_ranges
        .iter()
        .filter(|(l, _, _)| *l < perturbed_layer)
        .map(|&(_, _, end)| end)
        .max()
        .unwrap_or(0)
}

/// Pixel coordinates `(x, y)` of square patches, each enumerated row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchSelection {
    pub coords: Vec<(usize, usize)>,
    pub patch_size: usize,
    pub patches_per_image: usize,
}

impl PatchSelection {
    pub fn corners(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.coords
            .chunks(self.patch_size * self.patch_size)
            .map(|c| c[0])
    }
}

pub fn sample_patches<R: Rng + ?Sized>(
    height: usize,
    width: usize,
    patch_size: usize,
    patches_per_image: usize,
    rng: &mut R,
) -> Result<PatchSelection> {
    if patch_size == 0 || patch_size > height.min(width) {
        return Err(Error::param(format!(
            "patch size {patch_size} does not fit a {height}×{width} image"
        )));
    }
    let mut coords = Vec::with_capacity(patches_per_image * patch_size * patch_size);
    for _ in 0..patches_per_image {
        let x0 = rng.random_range(0..=width - patch_size);
        let y0 = rng.random_range(0..=height - patch_size);
        for y in y0..y0 + patch_size {
            for x in x0..x0 + patch_size {
                coords.push((x, y));
            }
        }
    }
    Ok(PatchSelection {
        coords,
        patch_size,
        patches_per_image,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{Generator, GeneratorSpec, LatentMode};
    use crate::rng::rng_from;

    fn volume() -> FeatureVolume {
        let g = Generator::new(GeneratorSpec::default()).unwrap();
        g.features(&g.sample_latents(1, LatentMode::PerLayer))
            .unwrap()
    }

    #[test]
    fn default_generator_gives_104_channels() {
        let pf = assemble_pixel_features(&volume(), UpsampleMode::Nearest).unwrap();
        assert_eq!(pf.data.dims(), &[104, 64, 64]);
        assert_eq!(
            pf.layer_channel_ranges,
            vec![
                (1, 0, 32),
                (2, 32, 64),
                (3, 64, 80),
                (4, 80, 96),
                (5, 96, 104)
            ]
        );
    }

    #[test]
    fn single_layer_volume_is_its_own_upsample() {
        let h = Tensor::new(vec![2, 4, 4], (0..32).map(|v| v as f64).collect()).unwrap();
        let pf = assemble_pixel_features(
            &FeatureVolume {
                layers: vec![h.clone()],
            },
            UpsampleMode::Bilinear,
        )
        .unwrap();
        assert_eq!(pf.data, h);
        assert!(
            assemble_pixel_features(&FeatureVolume { layers: vec![] }, UpsampleMode::Nearest)
                .is_err()
        );
    }

    #[test]
    fn local_mask_boundaries() {
        let pf = assemble_pixel_features(&volume(), UpsampleMode::Nearest).unwrap();
        assert_eq!(local_mask(&pf, 1).unwrap(), pf);
        let last = local_mask(&pf, 5).unwrap();
        let plane = 64 * 64;
        for ch in 0..104 {
            let chan = &last.data.data()[ch * plane..(ch + 1) * plane];
            let orig = &pf.data.data()[ch * plane..(ch + 1) * plane];
            if ch < 96 {
                assert!(chan.iter().all(|&v| v == 0.0), "channel {ch}");
            } else {
                assert_eq!(chan, orig);
            }
        }
        for s in 1..=5 {
            let m = local_mask(&pf, s).unwrap();
            let cut = masked_channels(&pf, s);
            assert_eq!(cut, [0, 32, 64, 80, 96][s - 1]);
            assert_eq!(
                &m.data.data()[cut * plane..],
                &pf.data.data()[cut * plane..]
            );
        }
        assert!(matches!(local_mask(&pf, 0), Err(Error::Parameter(_))));
        assert!(matches!(local_mask(&pf, 6), Err(Error::Parameter(_))));
    }

    #[test]
    fn full_patch_covers_every_pixel_once() {
        let sel = sample_patches(8, 8, 8, 1, &mut rng_from(0)).unwrap();
        let mut seen = vec![0; 64];
        for (x, y) in &sel.coords {
            seen[y * 8 + x] += 1;
        }
        assert!(seen.iter().all(|&c| c == 1));
        assert!(sample_patches(8, 8, 9, 1, &mut rng_from(0)).is_err());
        assert_eq!(
            sample_patches(64, 64, 16, 5, &mut rng_from(4)).unwrap(),
            sample_patches(64, 64, 16, 5, &mut rng_from(4)).unwrap()
        );
    }

    #[test]
    fn corners_are_uniform() {
        let mut rng = rng_from(12);
        let (size, n) = (16, 10_000);
        let positions = 64 - size + 1;
        let sel = sample_patches(64, 64, size, n, &mut rng).unwrap();
        // bucket corner x into 7 equal bins of 7 positions each
        let mut bins = [0usize; 7];
        for (x, y) in sel.corners() {
            assert!(x < positions && y < positions);
            bins[x / 7] += 1;
        }
        for b in bins {
            assert!((b as f64 / n as f64 - 1.0 / 7.0).abs() < 0.03, "{bins:?}");
        }
    }

    #[test]
    fn gather_scatter_round_trip() {
        let pf = assemble_pixel_features(&volume(), UpsampleMode::Nearest).unwrap();
        let sel = sample_patches(64, 64, 16, 3, &mut rng_from(2)).unwrap();
        let rows = pf.gather(&sel);
        let mut blank = PixelFeatureMatrix {
            data: Tensor::zeros(pf.data.dims()),
            layer_channel_ranges: pf.layer_channel_ranges.clone(),
        };
        blank.scatter(&sel, &rows).unwrap();
        assert_eq!(blank.gather(&sel), rows);
    }
}
