//! Linear ensemble transform smoothers for sequential data assimilation.
//!
//! Every analysis step implemented here is a right-multiplication of the
//! forecast trajectory ensemble by an `M × M` transform matrix `D` whose
//! columns sum to one: the posterior members are convex-ish recombinations of
//! the forecast members, applied over a fixed-lag window of past states. The
//! crate provides the transform constructions (square-root, moment-matching,
//! optimal-transport, and hybrids of those), second-order spread corrections,
//! spatial and temporal localisation, the forward models of the standard twin
//! experiments, and the scoring metrics used to compare the schemes.

pub mod ensemble;
pub mod error;
pub mod localisation;
pub mod metrics;
pub mod models;
pub mod observation;
pub mod rng;
pub mod smoothers;
pub mod transport;

pub use ensemble::{Scheme, Stats, Transform, Weights, Window};
pub use error::{Error, Result};
pub use models::{Dynamics, ModelEnsemble, ModelSpec};
pub use observation::ObsModel;
