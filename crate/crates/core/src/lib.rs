//! Secure precoding under exposure constraints.

pub mod error;
pub mod linalg;
pub mod model;
pub mod montecarlo;
pub mod quadform;
pub mod sca;
pub mod subproblem;

#[cfg(test)]
mod testing;

pub use error::{Error, Result};
pub use linalg::{ComplexMatrix, HermitianMatrix, C64};
pub use model::{
    ChannelDescription, ChannelModel, CovarianceSet, Dimensions, FenchelPoint, OutageSpec, TaylorCoefficients,
};
pub use montecarlo::{Estimate, SampleSpec};
pub use quadform::{SpectralProfile, TailResult};
