//! Reconstruction of the initial source of a nonlinear wave equation from
//! lateral Cauchy data by a Carleman-weighted quasi-reversibility fixed
//! point iteration, together with the forward solver that produces the data.

pub mod carleman;
pub mod error;
pub mod experiment;
pub mod expr;
pub mod forward;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod model;
pub mod qrm;
pub mod sparse;

pub use carleman::CarlemanParams;
pub use error::{Error, Result};
pub use experiment::{run_pipeline, Experiment, ExperimentConfig, GridPreset, PipelineResult, Simulation};
pub use forward::{extract_cauchy, solve_forward, CauchyData, Face};
pub use grid::{NodeClass, Rect, ScalarField, SpaceTimeGrid};
pub use metrics::ErrorReport;
pub use model::{NodeState, Nonlinearity, NonlinearitySpec, SourceSpec, TestId, WaveSpeed};
pub use qrm::{run_algorithm, IterationHistory, QrmConfig, QrmOutcome, RunFailure};
pub use sparse::{CsrMatrix, LsqMethod, LsqOptions, LsqReport};
