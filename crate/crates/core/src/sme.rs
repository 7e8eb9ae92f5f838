//! Learned coil-sensitivity estimation from the auto-calibration band.
//!
//! The ACS columns of each coil's k-space are inverse transformed into
//! low-resolution coil images. A small residual network refines them, the
//! result is divided by their root sum of squares and finally rescaled so
//! that `Σ_i |S_i|^2 = 1` at every pixel.

use rand::Rng;

use crate::error::{Error, Result};
use crate::mri::{CoilSensitivities, SamplingMask};
use crate::recon::RdcnBlock;
use crate::tensor::{ComplexTensor, ParamStore, RealTensor, Trace, Var};

/// Lower bound applied to the RSS denominator.
pub const RSS_FLOOR: f64 = 1e-8;

/// Sensitivity refiner: a narrow [`RdcnBlock`] applied to every coil image
/// as a batch, without data consistency. Its projection starts at zero, so
/// an untrained refiner passes coil images through unchanged.
#[derive(Clone, Debug)]
pub struct SmeNet {
    block: RdcnBlock,
}

impl SmeNet {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        recursions: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            block: RdcnBlock::new(store, name, channels, recursions, rng)?,
        })
    }

    pub fn block(&self) -> &RdcnBlock {
        &self.block
    }

    /// Traced estimate from k-space `y [nc, H, W, 2]`; returns maps of the
    /// same shape.
    pub fn estimate(&self, t: &mut Trace, store: &ParamStore, y: Var, mask: &SamplingMask) -> Result<Var> {
        let ys = t.shape(y).to_vec();
        if ys.len() != 4 || ys[3] != 2 || ys[2] != mask.width() {
            return Err(Error::shape(format!(
                "sensitivity estimation: k-space {ys:?} does not fit a mask of width {}",
                mask.width()
            )));
        }
        if mask.acs_range().is_empty() {
            return Err(Error::arg("sensitivity estimation needs a nonempty ACS band"));
        }
        let zero = t.constant(RealTensor::zeros(ys));
        let acs = t.masked_replace(zero, &mask.acs_weights(), y)?;
        let coils = t.ifft2c(acs)?;
        let rss = t.rss(coils)?;
        let rss = t.clamp_min(rss, RSS_FLOOR);
        let channels = t.to_channels(coils)?;
        let refined = self.block.refine(t, store, channels)?;
        let refined = t.to_complex(refined)?;
        let ratio = t.div_real(refined, rss)?;
        t.normalize_coils(ratio)
    }

    /// Untraced estimate.
    pub fn estimate_maps(&self, store: &ParamStore, y: &ComplexTensor, mask: &SamplingMask) -> Result<CoilSensitivities> {
        let mut t = Trace::new();
        let yv = t.constant(y.clone().into_interleaved());
        let maps = self.estimate(&mut t, store, yv, mask)?;
        CoilSensitivities::new(ComplexTensor::from_interleaved(t.value(maps).clone())?)
    }
}
