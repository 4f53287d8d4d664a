//! Estimation of the time point at which a feature of a locally stationary
//! series starts to vary.
//!
//! ```no_run
//! use gradwatch::{detect, Direction, FeatureFamily, Mode, PipelineConfig, TimeSeries};
//!
//! let x = TimeSeries::univariate((0..500).map(|t| if t < 250 { 0.0 } else { 1.0 }).collect())?;
//! let est = detect(&x, &FeatureFamily::mean(), Mode::Setting1, Direction::FromLeft, &PipelineConfig::default())?;
//! println!("{}", est.u0);
//! # Ok::<(), gradwatch::Error>(())
//! ```

pub mod cusum;
pub mod error;
pub mod estimator;
pub mod features;
pub mod harness;
pub mod longrun;
pub mod quantiles;
pub mod series;

pub use cusum::{cusum_field, CusumField, Grid};
pub use error::{Error, Result, Stage};
pub use estimator::{detect, AlphaSpec, ChangeEstimate, Direction, Mode, PipelineConfig, VarianceEstimator};
pub use features::{evaluate, FeatureFamily, FeatureMatrix, FeatureSpec};
pub use harness::{emit, generate, run_mc, Design, DesignKind, McReport, McSetup};
pub use quantiles::QuantileCurve;
pub use series::TimeSeries;
