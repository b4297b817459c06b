//! Galton-Watson systems whose offspring law alternates between two mechanisms
//! `a` and `b` generation by generation.

pub mod deviation;
pub mod error;
pub mod iterate;
pub mod limits;
pub mod mechanism;
pub mod montecarlo;
pub mod moments;
pub mod numerics;
pub mod series;
pub mod verify;

pub use error::{Error, Result};
pub use mechanism::{Criticality, MechanismSchedule, MomentSummary, OffspringDistribution};
pub use iterate::{ExtinctionResult, IterationContext, Order};
pub use moments::NormalizerTable;
pub use montecarlo::{PathEnsemble, SimConfig};
pub use series::TruncatedSeries;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    mod overview {}
    #[doc = include_str!("../../../book/src/mechanisms.md")]
    mod mechanisms {}
    #[doc = include_str!("../../../book/src/extinction.md")]
    mod extinction {}
    #[doc = include_str!("../../../book/src/moments.md")]
    mod moments {}
    #[doc = include_str!("../../../book/src/limits.md")]
    mod limits {}
    #[doc = include_str!("../../../book/src/deviations.md")]
    mod deviations {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
