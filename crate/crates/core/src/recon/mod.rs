//! The unrolled reconstruction network and its building blocks.

mod eam;
mod model;
mod rdcn;

pub use eam::{EamBlock, EamOutput};
pub use model::{EamriModel, ModelOutput, Reconstruction};
pub use rdcn::{Dcb, RdcnBlock};

use crate::error::{Error, Result};
use crate::mri::data_consistency_traced;
use crate::tensor::{Trace, Var};

/// Measured data a data-consistency layer projects onto.
#[derive(Clone, Copy, Debug)]
pub struct DcContext<'a> {
    /// Undersampled k-space `[nc, H, W, 2]`.
    pub y: Var,
    /// Sensitivity maps `[nc, H, W, 2]`.
    pub maps: Var,
    /// One 0/1 weight per k-space column.
    pub mask: &'a [f64],
}

impl DcContext<'_> {
    /// Data consistency of an image `[H, W, 2]`.
    pub fn apply(&self, t: &mut Trace, x: Var) -> Result<Var> {
        data_consistency_traced(t, x, self.y, self.mask, self.maps)
    }
}

/// Complex image `[H, W, 2]` to a one-sample two-channel batch `[1, 2, H, W]`.
pub fn image_to_channels(t: &mut Trace, x: Var) -> Result<Var> {
    let s = t.shape(x).to_vec();
    if s.len() != 3 || s[2] != 2 {
        return Err(Error::shape(format!("expected image [H, W, 2], got {s:?}")));
    }
    let b = t.reshape(x, &[1, s[0], s[1], 2])?;
    t.to_channels(b)
}

/// Inverse of [`image_to_channels`].
pub fn channels_to_image(t: &mut Trace, x: Var) -> Result<Var> {
    let s = t.shape(x).to_vec();
    if s.len() != 4 || s[0] != 1 || s[1] != 2 {
        return Err(Error::shape(format!("expected [1, 2, H, W], got {s:?}")));
    }
    let z = t.to_complex(x)?;
    t.reshape(z, &[s[2], s[3], 2])
}
