//! Fixtures shared by the criterion benches in `benches/`.

use hfcseg::features::{assemble_pixel_features, PixelFeatureMatrix, UpsampleMode};
use hfcseg::generator::{Generator, GeneratorSpec, LatentMode};
use hfcseg::rng::rng_from;
use hfcseg::Tensor;
use rand::Rng;

/// Uniform `[-1, 1)` entries.
pub fn random_tensor(dims: &[usize], seed: u64) -> Tensor {
    let mut rng = rng_from(seed);
    let n = dims.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(dims.to_vec(), data).expect("fixture dims")
}

pub fn default_generator() -> Generator {
    Generator::new(GeneratorSpec::default()).expect("default generator")
}

/// Pixel features of one default-generator sample.
pub fn sample_features(g: &Generator, seed: u64) -> PixelFeatureMatrix {
    let latents = g.sample_latents(seed, LatentMode::Broadcast);
    let fv = g.features(&latents).expect("features");
    assemble_pixel_features(&fv, UpsampleMode::Nearest).expect("assembly")
}
