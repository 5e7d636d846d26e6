//! Volumetric super-resolution data pipeline and benchmark harness.

pub mod error;
pub mod gap;
pub mod intensity;
pub mod io;
pub mod linear_sr;
pub mod metrics;
pub mod phantom;
pub mod pyramid;
pub mod registration;
pub mod sampler;
pub mod scalar;
pub mod store;
pub mod tiled;
pub mod upsample;
pub mod volume;

pub use error::{Error, Result};
pub use scalar::Real;
pub use store::{Group, PyramidStore};
pub use volume::{Dims, Field3, Spacing, Volume};

pub type Affine = registration::AffineTransform3D<f64>;
pub type LinearSr = linear_sr::LinearSrModel<f64>;
