//! Convex score matching for two-layer networks.

pub mod baseline;
pub mod data;
pub mod dsm1d;
pub mod dsmnd;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod network;
pub mod prox;
pub mod samplers;
pub mod sm1d;
pub mod smnd;

pub use data::{
    make_dataset_1d, make_dataset_nd, Activation, ArchitectureConfig, Dataset1D, DatasetND,
    NoiseSchedule,
};
pub use error::{Error, Result};
pub use network::{evaluate_network, evaluate_network_nd, TwoLayerParams};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
