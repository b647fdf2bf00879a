//! Benchmark sources, nonlinearities, the smooth cutoff and the wave speed.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Bindings, Expr};
use crate::grid::{ScalarField, SpaceTimeGrid};

/// The four benchmark problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TestId {
    Test1,
    Test2,
    Test3,
    Test4,
}

impl TestId {
    pub const ALL: [TestId; 4] = [TestId::Test1, TestId::Test2, TestId::Test3, TestId::Test4];

    pub fn number(self) -> u8 {
        match self {
            TestId::Test1 => 1,
            TestId::Test2 => 2,
            TestId::Test3 => 3,
            TestId::Test4 => 4,
        }
    }

    pub fn from_number(n: u8) -> Option<Self> {
        Some(match n {
            1 => TestId::Test1,
            2 => TestId::Test2,
            3 => TestId::Test3,
            4 => TestId::Test4,
            _ => return None,
        })
    }
}

impl fmt::Display for TestId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "test{}", self.number())
    }
}

impl FromStr for TestId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let digits = s.trim().trim_start_matches("test");
        digits
            .parse::<u8>()
            .ok()
            .and_then(TestId::from_number)
            .ok_or_else(|| Error::Parse(format!("unknown test id {s:?}")))
    }
}

/// Initial source `p(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub enum SourceSpec {
    Test(TestId),
    Zero,
    Custom(Expr),
}

impl SourceSpec {
    pub fn custom(source: &str) -> Result<Self> {
        Ok(SourceSpec::Custom(Expr::parse(source)?))
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            SourceSpec::Zero => 0.0,
            SourceSpec::Test(TestId::Test1) => {
                let r = x * x / 0.25 + y * y / 0.64;
                if r < 1.0 {
                    15.0 * (r * r / (r * r - 1.0)).exp()
                } else {
                    0.0
                }
            }
            SourceSpec::Test(TestId::Test2) => {
                use std::f64::consts::PI;
                (PI * (x + y)).sin() + (2.0 * PI * (x - y)).sin()
            }
            SourceSpec::Test(TestId::Test3) => {
                let rect = ((x - 0.4).abs() / 0.15).max(y.abs() / 0.7) < 1.0;
                let disk = (x + 0.4) * (x + 0.4) + y * y < 0.04;
                if rect || disk {
                    15.0
                } else {
                    0.0
                }
            }
            SourceSpec::Test(TestId::Test4) => {
                let disk = x * x + y * y < 0.65 * 0.65;
                let outside_void = x.abs().max(y.abs()) > 0.35;
                if disk && outside_void {
                    25.0
                } else {
                    0.0
                }
            }
            SourceSpec::Custom(e) => e.eval(&Bindings {
                x,
                y,
                ..Default::default()
            }),
        }
    }

    /// The source sampled on the spatial nodes of `grid`.
    pub fn sample(&self, grid: &SpaceTimeGrid) -> ScalarField {
        ScalarField::spatial_from_fn(*grid, |x, y| self.eval(x, y))
    }
}

/// Pointwise arguments of `F(x, t, u, u_t, grad u)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NodeState {
    pub x: f64,
    pub y: f64,
    pub t: f64,
    pub u: f64,
    pub ut: f64,
    pub grad: [f64; 2],
}

impl NodeState {
    fn grad_norm(&self) -> f64 {
        self.grad[0].hypot(self.grad[1])
    }
}

/// Anything that evaluates the lower-order term of the wave equation.
pub trait Nonlinearity {
    fn eval(&self, s: &NodeState) -> f64;
}

impl<F: Fn(&NodeState) -> f64> Nonlinearity for F {
    fn eval(&self, s: &NodeState) -> f64 {
        self(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NonlinearityKind {
    Test(TestId),
    /// `F = 0`.
    Linear,
    Custom(Expr),
}

/// A nonlinearity with an optional smooth truncation `chi * F`.
#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearitySpec {
    pub kind: NonlinearityKind,
    /// The bound `C3 * M` of the cutoff, when truncation is enabled.
    pub cutoff: Option<f64>,
}

impl NonlinearitySpec {
    pub fn test(id: TestId) -> Self {
        Self {
            kind: NonlinearityKind::Test(id),
            cutoff: None,
        }
    }

    pub fn linear() -> Self {
        Self {
            kind: NonlinearityKind::Linear,
            cutoff: None,
        }
    }

    pub fn custom(source: &str) -> Result<Self> {
        Ok(Self {
            kind: NonlinearityKind::Custom(Expr::parse(source)?),
            cutoff: None,
        })
    }

    pub fn with_cutoff(mut self, c3m: f64) -> Result<Self> {
        if !(c3m > 0.0 && c3m.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "cutoff bound must be positive, got {c3m}"
            )));
        }
        self.cutoff = Some(c3m);
        Ok(self)
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.kind, NonlinearityKind::Linear)
    }

    /// `F` without truncation.
    pub fn eval_raw(&self, s: &NodeState) -> f64 {
        match &self.kind {
            NonlinearityKind::Linear => 0.0,
            NonlinearityKind::Test(TestId::Test1) => (s.u * s.u + 1.0).sqrt() + s.grad_norm(),
            NonlinearityKind::Test(TestId::Test2) => {
                (clamped_exp(s.u, 10.0) + s.grad_norm()).min(10.0)
            }
            NonlinearityKind::Test(TestId::Test3) => (s.u * s.u + 1.0).min(10.0) + s.grad_norm(),
            NonlinearityKind::Test(TestId::Test4) => clamped_exp(s.u, 100.0) + s.grad_norm(),
            NonlinearityKind::Custom(e) => e.eval(&Bindings {
                x: s.x,
                y: s.y,
                t: s.t,
                u: s.u,
                ut: s.ut,
                ux: s.grad[0],
                uy: s.grad[1],
            }),
        }
    }
}

impl Nonlinearity for NonlinearitySpec {
    fn eval(&self, s: &NodeState) -> f64 {
        let f = self.eval_raw(s);
        match self.cutoff {
            None => f,
            Some(c3m) => {
                let rho = (s.u * s.u + s.ut * s.ut + s.grad[0] * s.grad[0] + s.grad[1] * s.grad[1])
                    .sqrt();
                let chi = chi_profile(rho, c3m);
                if chi == 0.0 {
                    0.0
                } else {
                    chi * f
                }
            }
        }
    }
}

/// `min(e^u, clamp)` without overflowing for large `u`.
fn clamped_exp(u: f64, clamp: f64) -> f64 {
    if u > clamp.ln() {
        clamp
    } else {
        u.exp()
    }
}

/// Smooth cutoff: 1 for `rho <= C3M`, 0 for `rho >= 2 C3M`, and a quintic
/// smoothstep in between (its first and second derivatives vanish at both
/// thresholds).
pub fn cutoff_chi(s1: f64, s2: f64, p: [f64; 2], c3m: f64) -> Result<f64> {
    if !(c3m > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "cutoff bound must be positive, got {c3m}"
        )));
    }
    let rho = (s1 * s1 + s2 * s2 + p[0] * p[0] + p[1] * p[1]).sqrt();
    Ok(chi_profile(rho, c3m))
}

fn chi_profile(rho: f64, c3m: f64) -> f64 {
    if rho <= c3m {
        1.0
    } else if rho >= 2.0 * c3m {
        0.0
    } else {
        let tau = (rho - c3m) / c3m;
        let smooth = tau * tau * tau * (10.0 - 15.0 * tau + 6.0 * tau * tau);
        1.0 - smooth
    }
}

/// Wave speed `c(x) in [1, c_bar]`.
#[derive(Debug, Clone, PartialEq)]
pub enum WaveSpeed {
    Constant(f64),
    /// Nodal values; evaluated by bilinear interpolation, clamped to the
    /// field's extent.
    Grid(ScalarField),
}

impl Default for WaveSpeed {
    fn default() -> Self {
        WaveSpeed::Constant(1.0)
    }
}

impl WaveSpeed {
    pub fn constant(value: f64) -> Result<Self> {
        if !(value >= 1.0 && value.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "wave speed must lie in [1, inf), got {value}"
            )));
        }
        Ok(WaveSpeed::Constant(value))
    }

    pub fn from_field(field: ScalarField) -> Result<Self> {
        if !field.is_spatial() {
            return Err(Error::ShapeMismatch("wave speed must be a spatial field".into()));
        }
        if field.values().iter().any(|&v| !(v >= 1.0 && v.is_finite())) {
            return Err(Error::InvalidParameter(
                "wave speed values must lie in [1, inf)".into(),
            ));
        }
        Ok(WaveSpeed::Grid(field))
    }

    /// `c_bar`.
    pub fn upper_bound(&self) -> f64 {
        match self {
            WaveSpeed::Constant(c) => *c,
            WaveSpeed::Grid(f) => f.max(),
        }
    }

    pub fn value(&self, x: f64, y: f64) -> f64 {
        match self {
            WaveSpeed::Constant(c) => *c,
            WaveSpeed::Grid(f) => {
                let g = f.grid();
                let fx = ((x - g.bounds.x_min) / g.dx).clamp(0.0, (g.nx - 1) as f64);
                let fy = ((y - g.bounds.y_min) / g.dx).clamp(0.0, (g.ny - 1) as f64);
                let i = (fx.floor() as usize).min(g.nx - 2);
                let j = (fy.floor() as usize).min(g.ny - 2);
                let (a, b) = (fx - i as f64, fy - j as f64);
                let v = |i, j| f.at(i, j, 0);
                (1.0 - a) * (1.0 - b) * v(i, j)
                    + a * (1.0 - b) * v(i + 1, j)
                    + (1.0 - a) * b * v(i, j + 1)
                    + a * b * v(i + 1, j + 1)
            }
        }
    }

    /// `c` at the spatial nodes of `grid`.
    pub fn sample(&self, grid: &SpaceTimeGrid) -> Vec<f64> {
        let mut out = Vec::with_capacity(grid.spatial_len());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                out.push(self.value(grid.x(i), grid.y(j)));
            }
        }
        out
    }
}

/// Checks `<x - x0, grad c(x)> >= 0` at the interior nodes of `grid`, with
/// `grad c` by centered differences.
pub fn check_speed_condition(c: &WaveSpeed, x0: [f64; 2], grid: &SpaceTimeGrid) -> bool {
    if let WaveSpeed::Constant(_) = c {
        return true;
    }
    let values = c.sample(grid);
    let h = grid.dx;
    for j in 1..grid.ny - 1 {
        for i in 1..grid.nx - 1 {
            let at = |i: usize, j: usize| values[i + grid.nx * j];
            let cx = (at(i + 1, j) - at(i - 1, j)) / (2.0 * h);
            let cy = (at(i, j + 1) - at(i, j - 1)) / (2.0 * h);
            let inner = (grid.x(i) - x0[0]) * cx + (grid.y(j) - x0[1]) * cy;
            if inner < -1e-12 {
                return false;
            }
        }
    }
    true
}
