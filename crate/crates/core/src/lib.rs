//! Simulator for sparse ANN and SNN convolutional optical-flow networks
//! running under event-driven depth-first convolution on a cascade of
//! neuromorphic cores.
//!
//! * [`tensorcore`]: BFloat16 tensors and the dense reference operators.
//! * [`netspec`]: the FireNet topology, neuron models and weight file format.
//! * [`evio`]: camera spike ingestion, event frames and ground-truth flow.
//! * [`dfengine`]: the per-core event-driven convolution engine and codec.
//! * [`reference`]: dense layer-by-layer composition used as the engine oracle.
//! * [`costsim`]: time and energy accounting over the engine's cost trace.
//! * [`metrics`]: densities, endpoint error and density-map images.
//! * [`sparsetrain`]: toy-scale sparsification-aware trainer.
//! * [`experiments`]: controlled sweeps and density-profile fixtures.

pub mod costsim;
pub mod dfengine;
pub mod error;
pub mod evio;
pub mod experiments;
pub mod metrics;
pub mod netspec;
pub mod reference;
pub mod sparsetrain;
pub mod tensorcore;

pub use error::{Error, Result};
