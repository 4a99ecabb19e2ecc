//! Fibered optimal transport, free energies and gradient-flow solvers for
//! local mean-field spin systems on the torus.

pub mod analysis;
pub mod curve;
pub mod functionals;
pub mod error;
pub mod grid;
pub mod io;
pub mod isotonic;
pub mod jko;
pub mod lp;
pub mod measure;
pub mod model;
pub mod particles;
pub mod pde;
pub mod rng;
pub mod transport;

pub use curve::MeasureCurve;
pub use error::{Error, Result};
pub use grid::{Grid, ThetaGrid, TorusGrid};
pub use measure::{DiscreteFiber, FiberMeasure, GridMeasure};
pub use model::{default_model, Kernel, ModelConstants, ModelParams, Polynomial};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
