//! Synthetic data, file formats and the command implementations.

pub mod checkpoint;
pub mod coils;
pub mod commands;
pub mod config;
pub mod container;
pub mod dataset;
pub mod gradcheck;
pub mod image;
pub mod phantom;

pub use checkpoint::{checkpoint_container, load_checkpoint, model_from_container, save_checkpoint};
pub use coils::simulate_coil_maps;
pub use config::{EdgeOperator, ReconConfig, VariantKind};
pub use container::Container;
pub use dataset::{build_dataset, read_dataset, write_dataset, DatasetSpec};
pub use phantom::{generate_phantom, PhantomSpec};
