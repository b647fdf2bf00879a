//! Fixtures shared by the benchmarks.

use qrm_core::{CauchyData, ExperimentConfig, GridPreset, Simulation, TestId};

/// Benchmark `test` on a custom grid of spacing `dx`, noiseless.
pub fn config(test: TestId, dx: f64) -> ExperimentConfig {
    ExperimentConfig {
        grid: GridPreset::Custom,
        dx,
        delta: 0.0,
        iterations: 1,
        ..ExperimentConfig::desk(test)
    }
}

pub fn simulation(test: TestId, dx: f64) -> Simulation {
    config(test, dx).prepare().unwrap().simulate().unwrap()
}

pub fn traces(test: TestId, dx: f64) -> CauchyData {
    simulation(test, dx).noisy
}
