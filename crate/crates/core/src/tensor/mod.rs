//! Dense tensors and the recorded trace that differentiates them.

pub(crate) mod conv;
mod dense;
pub mod layers;
pub(crate) mod fft;
mod params;
mod trace;

pub use dense::{ComplexTensor, RealTensor};
pub(crate) use dense::numel;
pub use params::{ParamId, ParamStore, Parameter};
pub use trace::{Gradients, Trace, Var, COIL_NORM_FLOOR};

/// Centered orthonormal 2-D DFT over the last two axes of `x`.
pub fn fft2c(x: &ComplexTensor) -> crate::Result<ComplexTensor> {
    transform(x, false)
}

/// Inverse of [`fft2c`] (also its adjoint).
pub fn ifft2c(k: &ComplexTensor) -> crate::Result<ComplexTensor> {
    transform(k, true)
}

fn transform(x: &ComplexTensor, inverse: bool) -> crate::Result<ComplexTensor> {
    let s = x.shape();
    if s.len() < 2 {
        return Err(crate::Error::Shape(format!(
            "fft2c needs at least two axes, got {s:?}"
        )));
    }
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let mut out = x.clone();
    if h * w > 0 {
        fft::fft2c_inplace(out.data_mut(), h, w, inverse);
    }
    Ok(out)
}
