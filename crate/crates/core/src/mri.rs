//! Multi-coil Cartesian acquisition physics.
//!
//! `y_i = M ⊙ F(S_i x) + ε_i`, with sensitivity maps normalised so that
//! `Σ_i conj(S_i) S_i = 1` at every pixel. Reduce (`Σ_i conj(S_i) x̂_i`)
//! combines coil images into one image and Expand (`S_i x`) splits an image
//! back into coil images; data consistency swaps the measured samples into
//! the k-space of the expanded estimate.
//!
//! Every operation comes in two forms: a traced function taking [`Var`]s,
//! used inside the network, and a plain function on [`ComplexTensor`]s that
//! evaluates the same traced operation on a scratch trace.

use std::ops::Range;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{ComplexTensor, RealTensor, Trace, Var};

/// Column-wise Cartesian undersampling pattern, broadcast over rows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SamplingMask {
    columns: Vec<bool>,
    acs: Range<usize>,
}

/// Fully sampled centre fraction used when none is given.
pub fn default_center_fraction(af: usize) -> f64 {
    match af {
        6 => 0.06,
        _ => 0.08,
    }
}

impl SamplingMask {
    /// Random Cartesian mask: a fully sampled block of
    /// `ceil(center_fraction * width)` centre columns plus columns drawn
    /// uniformly without replacement until `round(width / af)` are sampled.
    ///
    /// `af = 1` yields a fully sampled mask whose ACS band spans all columns.
    pub fn cartesian(width: usize, af: usize, center_fraction: f64, seed: u64) -> Result<Self> {
        if width == 0 {
            return Err(Error::arg("mask width must be positive"));
        }
        if af == 1 {
            return Ok(Self::full(width));
        }
        if af == 0 {
            return Err(Error::arg("acceleration factor must be positive"));
        }
        if !(center_fraction > 0.0 && center_fraction < 1.0 / af as f64) {
            return Err(Error::arg(format!(
                "center fraction {center_fraction} must lie in (0, 1/{af})"
            )));
        }
        let n_acs = (center_fraction * width as f64).ceil() as usize;
        let total = (width as f64 / af as f64).round() as usize;
        if n_acs == 0 || n_acs > total {
            return Err(Error::arg(format!(
                "{n_acs} ACS columns do not fit into {total} sampled columns (width {width}, af {af})"
            )));
        }
        let start = width / 2 - n_acs / 2;
        let acs = start..start + n_acs;
        let mut columns = vec![false; width];
        columns[acs.clone()].fill(true);
        let outer: Vec<usize> = (0..width).filter(|c| !acs.contains(c)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in index::sample(&mut rng, outer.len(), total - n_acs) {
            columns[outer[i]] = true;
        }
        Ok(Self { columns, acs })
    }

    pub fn full(width: usize) -> Self {
        Self {
            columns: vec![true; width],
            acs: 0..width,
        }
    }

    /// Builds a mask from explicit columns; every ACS column must be sampled.
    pub fn from_parts(columns: Vec<bool>, acs: Range<usize>) -> Result<Self> {
        if acs.end > columns.len() || acs.start > acs.end {
            return Err(Error::arg(format!(
                "ACS range {acs:?} outside mask of width {}",
                columns.len()
            )));
        }
        if !columns[acs.clone()].iter().all(|&c| c) {
            return Err(Error::arg("ACS columns must all be sampled"));
        }
        Ok(Self { columns, acs })
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[bool] {
        &self.columns
    }

    pub fn acs_range(&self) -> Range<usize> {
        self.acs.clone()
    }

    pub fn sampled_count(&self) -> usize {
        self.columns.iter().filter(|&&c| c).count()
    }

    /// Mask as 0/1 weights per column.
    pub fn weights(&self) -> Vec<f64> {
        self.columns
            .iter()
            .map(|&c| if c { 1.0 } else { 0.0 })
            .collect()
    }

    /// 0/1 weights keeping only the ACS band.
    pub fn acs_weights(&self) -> Vec<f64> {
        (0..self.width())
            .map(|c| if self.acs.contains(&c) { 1.0 } else { 0.0 })
            .collect()
    }
}

/// Per-coil complex sensitivity maps `[nc, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoilSensitivities {
    maps: ComplexTensor,
}

impl CoilSensitivities {
    /// Tolerance on `Σ_i |S_i|^2 = 1` accepted by [`CoilSensitivities::new`].
    pub const NORMALIZATION_TOL: f64 = 1e-6;

    /// Wraps maps that already satisfy the normalisation.
    pub fn new(maps: ComplexTensor) -> Result<Self> {
        if maps.shape().len() != 3 || maps.shape()[0] == 0 {
            return Err(Error::shape(format!(
                "coil maps must be [nc, H, W], got {:?}",
                maps.shape()
            )));
        }
        let s = Self { maps };
        let err = s.normalization_error();
        if err > Self::NORMALIZATION_TOL {
            return Err(Error::arg(format!(
                "coil maps violate sum |S_i|^2 = 1 by {err:e}"
            )));
        }
        Ok(s)
    }

    /// Rescales arbitrary maps to satisfy the normalisation.
    pub fn normalized(maps: ComplexTensor) -> Result<Self> {
        if maps.shape().len() != 3 || maps.shape()[0] == 0 {
            return Err(Error::shape(format!(
                "coil maps must be [nc, H, W], got {:?}",
                maps.shape()
            )));
        }
        let mut t = Trace::new();
        let m = t.constant(maps.into_interleaved());
        let n = t.normalize_coils(m)?;
        let maps = ComplexTensor::from_interleaved(t.value(n).clone())?;
        Ok(Self { maps })
    }

    /// Single coil with unit sensitivity.
    pub fn unit(height: usize, width: usize) -> Self {
        let mut maps = ComplexTensor::zeros(vec![1, height, width]);
        for p in 0..height * width {
            maps.set(p, (1.0, 0.0));
        }
        Self { maps }
    }

    pub fn maps(&self) -> &ComplexTensor {
        &self.maps
    }

    pub fn into_maps(self) -> ComplexTensor {
        self.maps
    }

    pub fn coils(&self) -> usize {
        self.maps.shape()[0]
    }

    pub fn image_shape(&self) -> (usize, usize) {
        (self.maps.shape()[1], self.maps.shape()[2])
    }

    /// `max_p |Σ_i |S_i(p)|^2 - 1|`.
    pub fn normalization_error(&self) -> f64 {
        let (h, w) = self.image_shape();
        let px = h * w;
        (0..px)
            .map(|p| {
                let s: f64 = (0..self.coils())
                    .map(|c| {
                        let (re, im) = self.maps.get(c * px + p);
                        re * re + im * im
                    })
                    .sum();
                (s - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// One training example.
#[derive(Clone, Debug, PartialEq)]
pub struct KSpaceSample {
    /// Undersampled multi-coil k-space `[nc, H, W]`, zero off the mask.
    pub y: ComplexTensor,
    pub mask: SamplingMask,
    pub x_gt: ComplexTensor,
    /// Ground-truth edge map `[H, W]` in `[0, 1]`.
    pub edge_gt: RealTensor,
    /// Sensitivities used to simulate `y`, when known.
    pub coil_maps: Option<CoilSensitivities>,
}

impl KSpaceSample {
    pub fn image_shape(&self) -> (usize, usize) {
        (self.x_gt.shape()[0], self.x_gt.shape()[1])
    }

    pub fn coils(&self) -> usize {
        self.y.shape()[0]
    }
}

fn check_image(op: &str, x: &ComplexTensor, maps: &CoilSensitivities) -> Result<()> {
    let (h, w) = maps.image_shape();
    if x.shape() != [h, w] {
        return Err(Error::shape(format!(
            "{op}: image {:?} does not match coil maps {:?}",
            x.shape(),
            maps.maps().shape()
        )));
    }
    Ok(())
}

fn check_coils(op: &str, coils: &ComplexTensor, maps: &CoilSensitivities) -> Result<()> {
    if coils.shape() != maps.maps().shape() {
        return Err(Error::shape(format!(
            "{op}: coil data {:?} does not match coil maps {:?}",
            coils.shape(),
            maps.maps().shape()
        )));
    }
    Ok(())
}

fn check_mask(op: &str, mask: &SamplingMask, width: usize) -> Result<()> {
    if mask.width() != width {
        return Err(Error::shape(format!(
            "{op}: mask width {} does not match image width {width}",
            mask.width()
        )));
    }
    Ok(())
}

fn run_complex(
    f: impl FnOnce(&mut Trace) -> Result<Var>,
) -> Result<ComplexTensor> {
    let mut t = Trace::new();
    let out = f(&mut t)?;
    ComplexTensor::from_interleaved(t.value(out).clone())
}

/// Noiseless or noisy simulated acquisition of image `x` (`[H, W]`).
///
/// Complex Gaussian noise with per-component standard deviation
/// `noise_sigma` is added on sampled locations only, drawn from `seed`.
pub fn forward_model(
    x: &ComplexTensor,
    maps: &CoilSensitivities,
    mask: &SamplingMask,
    noise_sigma: f64,
    seed: u64,
) -> Result<ComplexTensor> {
    check_image("forward_model", x, maps)?;
    check_mask("forward_model", mask, maps.image_shape().1)?;
    if noise_sigma < 0.0 || !noise_sigma.is_finite() {
        return Err(Error::arg(format!("noise sigma {noise_sigma} is invalid")));
    }
    let weights = mask.weights();
    let mut y = run_complex(|t| {
        let s = t.constant(maps.maps().clone().into_interleaved());
        let xv = t.constant(x.clone().into_interleaved());
        let coils = t.expand(s, xv)?;
        let k = t.fft2c(coils)?;
        let zero = t.constant(RealTensor::zeros(t.shape(k).to_vec()));
        // keep sampled entries of k, zero elsewhere: (1-M)*0 + M*k
        t.masked_replace(zero, &weights, k)
    })?;
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma).map_err(|e| Error::arg(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = mask.width();
        for (i, v) in y.data_mut().iter_mut().enumerate() {
            if weights[(i / 2) % w] > 0.0 {
                *v += normal.sample(&mut rng);
            }
        }
    }
    Ok(y)
}

/// `Σ_i conj(S_i) x̂_i`.
pub fn reduce(maps: &CoilSensitivities, coils: &ComplexTensor) -> Result<ComplexTensor> {
    check_coils("reduce", coils, maps)?;
    run_complex(|t| {
        let s = t.constant(maps.maps().clone().into_interleaved());
        let c = t.constant(coils.clone().into_interleaved());
        t.reduce(s, c)
    })
}

/// `(S_1 x, ..., S_nc x)`.
pub fn expand(maps: &CoilSensitivities, x: &ComplexTensor) -> Result<ComplexTensor> {
    check_image("expand", x, maps)?;
    run_complex(|t| {
        let s = t.constant(maps.maps().clone().into_interleaved());
        let xv = t.constant(x.clone().into_interleaved());
        t.expand(s, xv)
    })
}

/// Pixelwise `sqrt(Σ_i |x̂_i|^2)` of coil images `[nc, H, W]`.
pub fn rss(coils: &ComplexTensor) -> Result<RealTensor> {
    if coils.shape().len() != 3 {
        return Err(Error::shape(format!(
            "rss: expected [nc, H, W], got {:?}",
            coils.shape()
        )));
    }
    let mut t = Trace::new();
    let c = t.constant(coils.clone().into_interleaved());
    let r = t.rss(c)?;
    Ok(t.value(r).clone())
}

/// Sensitivity-weighted zero-filled image `R(S, F* y)`.
pub fn zero_filled(y: &ComplexTensor, maps: &CoilSensitivities) -> Result<ComplexTensor> {
    check_coils("zero_filled", y, maps)?;
    run_complex(|t| {
        let yv = t.constant(y.clone().into_interleaved());
        let s = t.constant(maps.maps().clone().into_interleaved());
        zero_filled_traced(t, yv, s)
    })
}

/// `R(S, F*((1 - M) ⊙ F(E(x)) + M ⊙ y))`.
pub fn data_consistency(
    x: &ComplexTensor,
    y: &ComplexTensor,
    mask: &SamplingMask,
    maps: &CoilSensitivities,
) -> Result<ComplexTensor> {
    check_image("data_consistency", x, maps)?;
    check_coils("data_consistency", y, maps)?;
    check_mask("data_consistency", mask, maps.image_shape().1)?;
    run_complex(|t| {
        let xv = t.constant(x.clone().into_interleaved());
        let yv = t.constant(y.clone().into_interleaved());
        let s = t.constant(maps.maps().clone().into_interleaved());
        data_consistency_traced(t, xv, yv, &mask.weights(), s)
    })
}

/// Multi-coil k-space `[nc, H, W]` of `x` before masking: `F(E(x))`.
pub fn coil_kspace(x: &ComplexTensor, maps: &CoilSensitivities) -> Result<ComplexTensor> {
    check_image("coil_kspace", x, maps)?;
    run_complex(|t| {
        let s = t.constant(maps.maps().clone().into_interleaved());
        let xv = t.constant(x.clone().into_interleaved());
        let c = t.expand(s, xv)?;
        t.fft2c(c)
    })
}

/// Largest deviation between the sampled entries of `F(E(x))` and `y`.
pub fn sampled_residual(
    x: &ComplexTensor,
    y: &ComplexTensor,
    mask: &SamplingMask,
    maps: &CoilSensitivities,
) -> Result<f64> {
    check_coils("sampled_residual", y, maps)?;
    let k = coil_kspace(x, maps)?;
    let w = mask.width();
    let mut worst: f64 = 0.0;
    for flat in 0..k.len() {
        if mask.columns()[flat % w] {
            let (a, b) = (k.get(flat), y.get(flat));
            worst = worst.max((a.0 - b.0).hypot(a.1 - b.1));
        }
    }
    Ok(worst)
}

/// Traced zero-filled image from k-space `y [nc, H, W, 2]` and maps of the
/// same shape.
pub fn zero_filled_traced(t: &mut Trace, y: Var, maps: Var) -> Result<Var> {
    let coils = t.ifft2c(y)?;
    t.reduce(maps, coils)
}

/// Traced data-consistency projection. `x` is `[H, W, 2]`, `y` and `maps`
/// are `[nc, H, W, 2]`, `mask` holds one 0/1 weight per column.
pub fn data_consistency_traced(
    t: &mut Trace,
    x: Var,
    y: Var,
    mask: &[f64],
    maps: Var,
) -> Result<Var> {
    let coils = t.expand(maps, x)?;
    let k = t.fft2c(coils)?;
    let mixed = t.masked_replace(k, mask, y)?;
    let back = t.ifft2c(mixed)?;
    t.reduce(maps, back)
}
