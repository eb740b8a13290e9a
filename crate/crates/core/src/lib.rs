//! Locally optimal approximate designs for Poisson count regression with
//! a Gamma-distributed block effect (the Poisson-Gamma model).

pub mod cli;
pub mod closedform;
pub mod criteria;
pub mod error;
pub mod model;
pub mod numerics;
pub mod optimize;
pub mod sim;
pub mod verify;

pub use criteria::CriterionSpec;
pub use error::{Error, Result};
pub use model::{Design, DesignRegion, ModelKind, ModelSpec, Point, PopulationDesign};
pub use numerics::SymMatrix;
