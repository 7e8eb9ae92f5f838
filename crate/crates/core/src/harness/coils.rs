use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mri::CoilSensitivities;
use crate::tensor::ComplexTensor;

/// Smooth Gaussian-lobe coil profiles placed around the field of view,
/// each with a gentle linear phase, normalised so `Σ_i |S_i|^2 = 1`.
/// A single coil is the unit map.
pub fn simulate_coil_maps(coils: usize, height: usize, width: usize, seed: u64) -> Result<CoilSensitivities> {
    if coils == 0 || height == 0 || width == 0 {
        return Err(Error::arg("coil count and image size must be positive"));
    }
    if coils == 1 {
        return Ok(CoilSensitivities::unit(height, width));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut maps = ComplexTensor::zeros(vec![coils, height, width]);
    let sigma = 0.9;
    for c in 0..coils {
        let theta = 2.0 * std::f64::consts::PI * c as f64 / coils as f64 + rng.random_range(-0.2..0.2);
        let radius = 1.3;
        let (cu, cv) = (radius * theta.cos(), radius * theta.sin());
        let phase0: f64 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let tilt: f64 = rng.random_range(-0.5..0.5);
        for y in 0..height {
            let v = (2 * y + 1) as f64 / height as f64 - 1.0;
            for x in 0..width {
                let u = (2 * x + 1) as f64 / width as f64 - 1.0;
                let d2 = (u - cu).powi(2) + (v - cv).powi(2);
                let amp = (-d2 / (2.0 * sigma * sigma)).exp();
                let phase = phase0 + tilt * (u * theta.cos() + v * theta.sin());
                maps.set((c * height + y) * width + x, (amp * phase.cos(), amp * phase.sin()));
            }
        }
    }
    CoilSensitivities::normalized(maps)
}
