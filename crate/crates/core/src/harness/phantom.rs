use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ComplexTensor;

/// Random-ellipse phantom description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    /// Image side length; must be a power of two.
    pub size: usize,
    pub ellipses: usize,
    pub intensity_min: f64,
    pub intensity_max: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            size: 32,
            ellipses: 8,
            intensity_min: 0.15,
            intensity_max: 0.5,
            seed: 0,
        }
    }
}

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
    intensity: f64,
}

impl Ellipse {
    fn contains(&self, u: f64, v: f64) -> bool {
        let (du, dv) = (u - self.cx, v - self.cy);
        let (ru, rv) = (du * self.cos + dv * self.sin, -du * self.sin + dv * self.cos);
        (ru / self.a).powi(2) + (rv / self.b).powi(2) <= 1.0
    }
}

/// Sum of random ellipses with a smooth linear phase ramp; magnitude is
/// clipped to `[0, 1]`.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<ComplexTensor> {
    if !spec.size.is_power_of_two() {
        return Err(Error::arg(format!(
            "phantom size {} is not a power of two",
            spec.size
        )));
    }
    if !(0.0..=spec.intensity_max).contains(&spec.intensity_min) {
        return Err(Error::arg(format!(
            "intensity range [{}, {}] is invalid",
            spec.intensity_min, spec.intensity_max
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let ellipses: Vec<Ellipse> = (0..spec.ellipses)
        .map(|_| {
            let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
            Ellipse {
                cx: rng.random_range(-0.4..0.4),
                cy: rng.random_range(-0.4..0.4),
                a: rng.random_range(0.1..0.55),
                b: rng.random_range(0.1..0.55),
                cos: angle.cos(),
                sin: angle.sin(),
                intensity: if spec.intensity_max > spec.intensity_min {
                    rng.random_range(spec.intensity_min..spec.intensity_max)
                } else {
                    spec.intensity_max
                },
            }
        })
        .collect();
    let (ramp_u, ramp_v, offset): (f64, f64, f64) = (
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
    );
    let n = spec.size;
    let mut image = ComplexTensor::zeros(vec![n, n]);
    for y in 0..n {
        let v = (2 * y + 1) as f64 / n as f64 - 1.0;
        for x in 0..n {
            let u = (2 * x + 1) as f64 / n as f64 - 1.0;
            let mag: f64 = ellipses
                .iter()
                .filter(|e| e.contains(u, v))
                .map(|e| e.intensity)
                .sum::<f64>()
                .clamp(0.0, 1.0);
            let phase = ramp_u * u + ramp_v * v + offset;
            image.set(y * n + x, (mag * phase.cos(), mag * phase.sin()));
        }
    }
    Ok(image)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_ellipses_gives_zero_image() {
        let spec = PhantomSpec {
            ellipses: 0,
            ..Default::default()
        };
        let img = generate_phantom(&spec).unwrap();
        assert!(img.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = generate_phantom(&PhantomSpec::default()).unwrap();
        let b = generate_phantom(&PhantomSpec::default()).unwrap();
        assert_eq!(a, b);
        let c = generate_phantom(&PhantomSpec {
            seed: 1,
            ..Default::default()
        })
        .unwrap();
        let (ma, mc) = (a.abs(), c.abs());
        let differing = ma
            .data()
            .iter()
            .zip(mc.data())
            .filter(|(x, y)| (*x - *y).abs() > 1e-12)
            .count();
        assert!(differing * 10 >= ma.len(), "only {differing} pixels differ");
    }

    #[test]
    fn magnitude_is_bounded() {
        for seed in 0..5 {
            let img = generate_phantom(&PhantomSpec {
                seed,
                ellipses: 20,
                intensity_max: 0.9,
                ..Default::default()
            })
            .unwrap();
            assert!(img.abs().data().iter().all(|&m| (0.0..=1.0 + 1e-12).contains(&m)));
        }
    }

    #[test]
    fn rejects_non_power_of_two() {
        let spec = PhantomSpec {
            size: 24,
            ..Default::default()
        };
        assert!(generate_phantom(&spec).is_err());
    }
}
