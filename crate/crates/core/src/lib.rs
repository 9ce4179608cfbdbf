//! Small-area estimation of income inequality indices from complex survey
//! microdata.
//!
//! The pipeline runs: direct design-weighted estimation with small-sample
//! bias corrections ([`survey`]), bootstrap variance estimation under the
//! sampling design ([`design`]), variance smoothing through index-specific
//! variance functions ([`gvf`]), and hierarchical Beta / Flexible Beta
//! area-level models fitted by MCMC ([`hb`], [`mcmc`]) with fit diagnostics
//! ([`diagnostics`]). A design-based simulation harness ([`sim`]) evaluates
//! the frequentist properties of the resulting estimators.

pub mod design;
pub mod diagnostics;
pub mod error;
pub mod gvf;
pub mod hb;
pub mod indices;
pub mod mcmc;
pub mod num;
pub mod rng;
pub mod sim;
pub mod survey;

pub use error::{Error, Result};
