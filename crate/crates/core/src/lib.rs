pub mod birkhoff;
pub mod closed;
pub mod csf;
pub mod curve;
pub mod error;
pub mod geodesic;
pub mod knots;
pub mod ode;
pub mod profile;
pub mod spectrum;
pub mod surface;
pub mod variational;

pub use error::{GeoError, Result};
