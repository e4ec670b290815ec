//! Calibration of constitutive models against finite element residuals.
//!
//! The pieces fit together as: [`ad`] provides reverse-mode derivatives,
//! [`surrogate`] the trainable material models, [`fem1d`], [`plate`] and
//! [`membrane`] the three physics setups, [`calibrate`] the residual-based
//! loss and its L-BFGS minimizer, [`predict`] the forward Newton solver that
//! embeds a trained model, and [`uq`] the sensitivity-based confidence bands
//! around those predictions.

pub mod ad;
pub mod calibrate;
pub mod error;
pub mod fem1d;
pub mod membrane;
pub mod plate;
pub mod predict;
pub mod uq;
pub mod surrogate;

pub use error::{Error, Result};
