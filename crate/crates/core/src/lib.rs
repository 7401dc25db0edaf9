//! Training-dynamics simulator for two-layer convolutional ReLU networks on
//! patch-based signal-plus-noise data.
//!
//! The crate covers the whole pipeline: data generation ([`data`]), the
//! network with exact gradients ([`network`]), minibatch SGD and SAM
//! ([`optim`]), the signal-noise coefficient tracker and its least-squares
//! oracle ([`decomposition`]), empirical checks of the structural facts
//! behind the analysis ([`theory`]), the phase-transition grid runner
//! ([`experiments`]) and on-disk run directories ([`run`]).

pub mod config;
pub mod data;
pub mod decomposition;
pub mod error;
pub mod experiments;
pub mod io;
pub mod network;
pub mod optim;
pub mod rng;
pub mod run;
pub mod theory;

pub use error::{Error, Result};
