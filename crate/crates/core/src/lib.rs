pub mod chi2;
pub mod detector;
pub mod error;
pub mod linalg;
pub mod montecarlo;
pub mod powergrid;
pub mod privacy;
pub mod scenarios;
pub mod system;
pub mod tradeoff;
pub use error::{Error, Result};
