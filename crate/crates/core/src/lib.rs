//! Consistency-regularised unsupervised domain adaptation for monocular
//! depth estimation at desk scale.

pub mod augment;
pub mod dataset;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod trainer;
pub mod uncertainty;

pub use error::{Error, Result};
