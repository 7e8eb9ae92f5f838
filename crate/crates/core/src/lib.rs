//! Edge-guided unrolled reconstruction of undersampled multi-coil MRI.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense real/complex arrays and a recorded trace that
//!   supplies reverse-mode gradients for every operation the network uses.
//! - [`mri`]: Cartesian masks, the multi-coil forward operator, Reduce and
//!   Expand, root-sum-of-squares and the data-consistency projection.
//! - [`sme`]: learnable coil-sensitivity estimation from the ACS band.
//! - [`edge`]: Sobel/Canny ground-truth edges and the edge prediction network.
//! - [`recon`]: dilated recursive de-aliasing blocks, the edge attention
//!   module and the assembled model with its ablation variants.
//! - [`training`]: losses, Adam, image-quality metrics and the training loop.
//! - [`harness`]: phantoms, simulated coils, dataset/checkpoint containers,
//!   image emission and the command implementations behind the `eamri` binary.

pub mod edge;
pub mod error;
pub mod harness;
pub mod mri;
pub mod recon;
pub mod sme;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
