//! Flat experiment description and the simulate → noise → invert pipeline.

use serde::{Deserialize, Serialize};

use crate::carleman::CarlemanParams;
use crate::error::{Error, Result};
use crate::forward::{extract_cauchy, solve_forward, CauchyData};
use crate::grid::{Rect, ScalarField, SpaceTimeGrid};
use crate::metrics::ErrorReport;
use crate::model::{NonlinearitySpec, SourceSpec, TestId, WaveSpeed};
use crate::qrm::{run_algorithm, QrmConfig, QrmOutcome, RunFailure};
use crate::sparse::{LsqMethod, LsqOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridPreset {
    /// `dx = 0.05`, `dt / dx = 0.44`.
    Desk,
    /// `dx = 0.03`, `dt = 0.0132`.
    Paper,
    /// `dx` and `cfl` taken from the config.
    Custom,
}

impl std::str::FromStr for GridPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Self::Desk),
            "paper" => Ok(Self::Paper),
            "custom" => Ok(Self::Custom),
            _ => Err(Error::InvalidParameter(format!("unknown grid preset {s:?}"))),
        }
    }
}

/// Every knob of one experiment. Unset keys take the defaults of
/// [`ExperimentConfig::default`], which is the desk preset of test 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Benchmark 1 to 4; ignored for the parts given by `source` and
    /// `nonlinearity`.
    pub test: u8,
    /// Custom `p(x, y)` expression.
    pub source: Option<String>,
    /// Custom `F(x, t, u, ut, ux, uy)` expression, or `"linear"`.
    pub nonlinearity: Option<String>,
    /// Truncation bound of the nonlinearity, off when absent.
    pub cutoff: Option<f64>,
    /// Constant wave speed.
    pub speed: f64,
    /// Half-width of the padded square.
    pub padding: f64,
    /// Half-width of the inner square.
    pub half_width: f64,
    pub grid: GridPreset,
    pub dx: f64,
    pub cfl: f64,
    pub t_final: f64,
    pub delta: f64,
    pub seed: u64,
    pub lambda: f64,
    pub eta: f64,
    pub x0: [f64; 2],
    pub eps_domain: f64,
    pub epsilon: f64,
    pub iterations: usize,
    pub kappa: f64,
    pub solver: LsqMethod,
    pub tol: f64,
    pub out: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            test: 1,
            source: None,
            nonlinearity: None,
            cutoff: None,
            speed: 1.0,
            padding: 4.0,
            half_width: 1.0,
            grid: GridPreset::Desk,
            dx: 0.05,
            cfl: 0.44,
            t_final: 2.0,
            delta: 0.1,
            seed: 1,
            lambda: 2.1,
            eta: 0.5,
            x0: [0.0, -2.5],
            eps_domain: 0.1,
            epsilon: 1e-14,
            iterations: 7,
            kappa: 1e3,
            solver: LsqMethod::Cholesky,
            tol: 1e-10,
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn desk(test: TestId) -> Self {
        Self {
            test: test.number(),
            ..Self::default()
        }
    }

    pub fn paper(test: TestId) -> Self {
        Self {
            test: test.number(),
            grid: GridPreset::Paper,
            dx: 0.03,
            cfl: 0.44,
            ..Self::default()
        }
    }

    /// `(dx, cfl)` after applying the preset.
    pub fn spacing(&self) -> (f64, f64) {
        match self.grid {
            GridPreset::Desk => (0.05, 0.44),
            GridPreset::Paper => (0.03, 0.0132 / 0.03),
            GridPreset::Custom => (self.dx, self.cfl),
        }
    }

    pub fn prepare(&self) -> Result<Experiment> {
        let id = TestId::from_number(self.test)
            .ok_or_else(|| Error::InvalidParameter(format!("test must be 1 to 4, got {}", self.test)))?;
        let source = match &self.source {
            Some(s) => SourceSpec::custom(s)?,
            None => SourceSpec::Test(id),
        };
        let mut nonlinearity = match self.nonlinearity.as_deref() {
            Some("linear") => NonlinearitySpec::linear(),
            Some(s) => NonlinearitySpec::custom(s)?,
            None => NonlinearitySpec::test(id),
        };
        if let Some(c) = self.cutoff {
            nonlinearity = nonlinearity.with_cutoff(c)?;
        }
        if !(self.padding > self.half_width && self.half_width > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < half_width < padding, got {} and {}",
                self.half_width, self.padding
            )));
        }
        let (dx, cfl) = self.spacing();
        let outer = SpaceTimeGrid::with_spacing(Rect::square(self.padding), dx, cfl, self.t_final)?;
        let inner = SpaceTimeGrid::with_spacing(Rect::square(self.half_width), dx, cfl, self.t_final)?;
        let qrm = QrmConfig {
            carleman: CarlemanParams::new(self.x0, self.lambda, self.eta, self.eps_domain)?,
            epsilon: self.epsilon,
            iterations: self.iterations,
            kappa: self.kappa,
            solver: LsqOptions {
                method: self.solver,
                tol: self.tol,
                ..LsqOptions::default()
            },
            ..QrmConfig::default()
        };
        qrm.validate()?;
        qrm.carleman.validate_for(&inner)?;
        Ok(Experiment {
            test: id,
            source,
            nonlinearity,
            speed: WaveSpeed::constant(self.speed)?,
            outer,
            inner,
            delta: self.delta,
            seed: self.seed,
            qrm,
        })
    }
}

/// A validated configuration.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub test: TestId,
    pub source: SourceSpec,
    pub nonlinearity: NonlinearitySpec,
    pub speed: WaveSpeed,
    /// Padded grid the forward problem runs on.
    pub outer: SpaceTimeGrid,
    /// Grid of the inner domain the inversion runs on.
    pub inner: SpaceTimeGrid,
    pub delta: f64,
    pub seed: u64,
    pub qrm: QrmConfig,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub clean: CauchyData,
    pub noisy: CauchyData,
    /// Source restricted to the inner grid.
    pub p_star: ScalarField,
}

impl Experiment {
    /// Forward solve on the padded grid, then traces on the inner boundary
    /// with noise of level `delta`.
    pub fn simulate(&self) -> Result<Simulation> {
        let p = self.source.sample(&self.outer);
        let u = solve_forward(&self.nonlinearity, &self.speed, &self.outer, &p)?;
        let clean = extract_cauchy(&u, &self.inner)?;
        let noisy = clean.add_noise(self.delta, self.seed)?;
        Ok(Simulation {
            clean,
            noisy,
            p_star: self.source.sample(&self.inner),
        })
    }

    pub fn invert(&self, data: &CauchyData, p_star: Option<&ScalarField>) -> std::result::Result<QrmOutcome, RunFailure> {
        run_algorithm(&self.qrm, &self.nonlinearity, &self.speed, data, p_star)
    }
}

/// Outcome of [`run_pipeline`].
#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub simulation: Simulation,
    pub outcome: QrmOutcome,
    pub report: ErrorReport,
}

/// Simulate, invert the noisy traces and score the result.
pub fn run_pipeline(experiment: &Experiment) -> std::result::Result<PipelineResult, RunFailure> {
    let simulation = experiment.simulate().map_err(|error| RunFailure {
        error,
        history: Default::default(),
    })?;
    let outcome = experiment.invert(&simulation.noisy, Some(&simulation.p_star))?;
    let report = ErrorReport::new(&outcome.p, &simulation.p_star, &outcome.history.consecutive_differences())
        .map_err(|error| RunFailure {
            error,
            history: outcome.history.clone(),
        })?;
    Ok(PipelineResult {
        simulation,
        outcome,
        report,
    })
}

/// Figures quoted for the benchmarks at the fine grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReferenceFigures {
    pub rel_l2: Option<f64>,
    pub peak: Option<f64>,
    pub peak_error: Option<f64>,
}

pub fn reference_figures(id: TestId) -> ReferenceFigures {
    match id {
        TestId::Test1 => ReferenceFigures {
            rel_l2: Some(0.054),
            peak: None,
            peak_error: None,
        },
        TestId::Test2 => ReferenceFigures {
            rel_l2: Some(0.0707),
            peak: None,
            peak_error: None,
        },
        TestId::Test3 => ReferenceFigures {
            rel_l2: Some(0.345),
            peak: Some(15.8),
            peak_error: Some(0.053),
        },
        TestId::Test4 => ReferenceFigures {
            rel_l2: Some(0.360),
            peak: Some(25.087),
            peak_error: Some(0.004),
        },
    }
}
