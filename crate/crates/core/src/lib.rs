//! Fixed-effects logit models: differencing, sufficiency, moment
//! construction, estimation and simulation.

pub mod differencing;
pub mod error;
pub mod estimation;
pub mod io;
pub mod model;
pub mod moments;
pub mod par;
pub mod simulation;
pub mod sufficiency;

pub use error::{Error, Result};
