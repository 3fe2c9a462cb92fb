//! Online learning under multinomial-logit demand.
//!
//! * [`mnl`]: choice probabilities, log loss, gradients and Hessians.
//! * [`price`]: revenue-optimal prices through the fixed-point characterization.
//! * [`projection`]: projections onto the feasible parameter set in an SPD norm.
//! * [`ons`]: the online Newton pricing policy with random price shocks, and an
//!   exp-concavity-based Online Newton Step baseline.
//! * [`ofu`]: the optimistic OFU-MNL assortment policy.
//! * [`env`]: synthetic environments.
//! * [`harness`]: the regret simulation harness behind the `mnl-sim` CLI.

pub mod env;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod mnl;
pub mod ofu;
pub mod ons;
pub mod price;
pub mod projection;

pub use error::{Error, Result};
