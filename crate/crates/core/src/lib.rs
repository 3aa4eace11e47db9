//! Microbial decomposition of organic matter in 3D soil pore space.
//!
//! The pipeline goes from a segmented binary volume ([`image_io`]) to a
//! network of maximal inscribed balls ([`network`]), on which the
//! five-compound carbon dynamics ([`kinetics`], [`diffusion`]) are integrated
//! with an implicit split scheme ([`integrator`]). Initial conditions come from
//! [`scenario`]; [`analysis`] reduces trajectories to aggregate observables and
//! attractor diagnostics. [`oracle`] is a small voxel finite-volume solver of
//! the continuum equations used to cross-check the network model.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod config;
pub mod diffusion;
pub mod error;
pub mod fixtures;
pub mod image_io;
pub mod integrator;
pub mod kinetics;
pub mod network;
pub mod oracle;
pub mod scenario;

pub use error::{Error, Result};
