//! Univariate traffic-volume forecasting.
//!
//! A series flows through [`series`] (counter conversion, gap filling),
//! optional [`emd`] denoising and [`outlier`] mitigation, [`lagsel`] ARIMA
//! order selection for the lag count, then a recurrent model from
//! [`seqmodels`] built on the [`autodiff`] tape. [`pipeline`] wires the
//! stages together and [`eval`] scores the forecasts.

// NaN-rejecting `!(x > 0.0)` checks are intended; tape ops return Result.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::should_implement_trait)]

pub mod autodiff;
pub mod emd;
pub mod error;
pub mod eval;
pub mod exec;
pub mod io;
pub mod lagsel;
pub mod outlier;
pub mod pipeline;
pub mod seqmodels;
pub mod series;
pub mod synth;

pub use error::{Error, Result};
pub use exec::Exec;
