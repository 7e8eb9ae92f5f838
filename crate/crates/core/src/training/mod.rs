//! Losses, the optimiser, image-quality metrics and the training loop.

mod adam;
mod loss;
mod metrics;
mod trainer;

pub use adam::{AdamConfig, AdamState};
pub use loss::{edge_loss, image_loss, total_loss};
pub use metrics::{nmse, psnr, ssim, MetricReport, PSNR_EXACT, SSIM_WINDOW};
pub use trainer::{evaluate, split_indices, EvalReport, StepStats, Trainer};
