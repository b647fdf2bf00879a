//! Carleman-weighted quasi-reversibility: the initial guess, the step
//! minimizing `J_n`, and the fixed-point loop around it.
//!
//! Unknowns are the values of `v` at the nodes of `Ω_T` off the spatial
//! boundary; the Dirichlet trace is substituted exactly. Every other part of
//! the functional becomes a row of one sparse least-squares system:
//!
//! * residual rows `W_{λ,η} (c v_tt - Δv) = W_{λ,η} s` for spatial-interior
//!   nodes with `1 <= k <= nt - 2`,
//! * regularization rows `√ε W_{λ,0} D_α v = 0` for all `|α| <= 2` at every
//!   node,
//! * Neumann rows `κ W_{λ,η} ∂_ν v = κ W_{λ,η} g` (one-sided, from inside
//!   `Ω`),
//! * initial-velocity rows `κ W_{λ,η} (v¹ - v⁰) / dt = 0`; the step system
//!   replaces them by `κ W_{λ,η} [(v¹ - v⁰) / dt - dt/(2c) (Δv⁰ + s⁰)] = 0`.
//!
//! All rows carry the factor `√(dx² dt)`, so `‖Ax - b‖²` is the discrete
//! functional. The matrix does not depend on `u_n`; one assembly serves a
//! whole run and only the residual part of `b` is refreshed per step.

use serde::{Deserialize, Serialize};

use crate::carleman::{derivative_stencil, multi_indices, weight, CarlemanParams, StencilScratch};
use crate::error::{Error, Result};
use crate::forward::{CauchyData, Face};
use crate::grid::{first_derivative, gradient, ScalarField, SpaceTimeGrid};
use crate::metrics::{max_abs_diff, rel_l2_error};
use crate::model::{NodeState, Nonlinearity, WaveSpeed};
use crate::sparse::{nested_dissection, CsrBuilder, LeastSquares, LsqMethod, LsqOptions, LsqReport};

#[derive(Debug, Clone, PartialEq)]
pub struct QrmConfig {
    pub carleman: CarlemanParams,
    /// Weight `ε` of the `H²_{λ,0}` regularizer.
    pub epsilon: f64,
    /// Number of fixed-point steps `n₀`; 0 returns the initial guess.
    pub iterations: usize,
    /// Constraint weight relative to the Carleman weight at the constrained
    /// node.
    pub kappa: f64,
    pub solver: LsqOptions,
    /// Start each solve from the previous iterate.
    pub warm_start: bool,
    /// Keep iterates whose solve hit the iteration cap instead of failing.
    pub accept_unconverged: bool,
}

impl Default for QrmConfig {
    fn default() -> Self {
        Self {
            carleman: CarlemanParams::default(),
            epsilon: 1e-14,
            iterations: 7,
            kappa: 1e3,
            solver: LsqOptions {
                method: LsqMethod::Cholesky,
                ..LsqOptions::default()
            },
            warm_start: true,
            accept_unconverged: false,
        }
    }
}

impl QrmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "kappa must be positive, got {}",
                self.kappa
            )));
        }
        if !(self.solver.tol > 0.0) {
            return Err(Error::InvalidParameter("solver tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Which principal operator the residual rows carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemKind {
    /// `c ∂_tt - Δ` on interior time layers.
    Step,
    /// `-Δ` on every time layer, zero right-hand side.
    InitialGuess,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowBlock {
    Residual = 0,
    Regularization = 1,
    Neumann = 2,
    InitialVelocity = 3,
}

/// Column numbering of the unknowns and the substituted Dirichlet values.
#[derive(Debug, Clone, PartialEq)]
pub struct DofMap {
    grid: SpaceTimeGrid,
    column: Vec<Option<usize>>,
    nodes: Vec<usize>,
    known: Vec<f64>,
}

impl DofMap {
    /// Eliminates every node on `∂Ω × [0, T]`. Corner nodes, which sit on
    /// two faces, take the mean of the two Dirichlet samples.
    pub fn new(data: &CauchyData) -> Result<Self> {
        let grid = data.grid;
        let n = CauchyData::sample_count(&grid);
        if data.f.len() != n || data.g.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "traces of length {}/{} for {} samples",
                data.f.len(),
                data.g.len(),
                n
            )));
        }
        let mut known = vec![0.0; grid.len()];
        let mut count = vec![0u8; grid.len()];
        for face in Face::ALL {
            for k in 0..grid.nt {
                for pos in 0..face.len(&grid) {
                    let (i, j) = face.node(&grid, pos);
                    let idx = grid.index(i, j, k);
                    known[idx] += data.f[data.index(face, pos, k)];
                    count[idx] += 1;
                }
            }
        }
        let mut column = vec![None; grid.len()];
        let mut nodes = Vec::new();
        for idx in 0..grid.len() {
            let (i, j, _) = grid.unindex(idx);
            if grid.is_spatial_boundary(i, j) {
                known[idx] /= f64::from(count[idx].max(1));
            } else {
                column[idx] = Some(nodes.len());
                nodes.push(idx);
            }
        }
        Ok(Self {
            grid,
            column,
            nodes,
            known,
        })
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn n_unknowns(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_eliminated(&self) -> usize {
        self.grid.len() - self.nodes.len()
    }

    pub fn column(&self, node: usize) -> Option<usize> {
        self.column[node]
    }

    /// Full field from unknown values plus the substituted boundary.
    pub fn expand(&self, x: &[f64]) -> Result<ScalarField> {
        if x.len() != self.nodes.len() {
            return Err(Error::ShapeMismatch("unknown vector length".into()));
        }
        let mut v = self.known.clone();
        for (&node, &xi) in self.nodes.iter().zip(x) {
            v[node] = xi;
        }
        ScalarField::from_values(self.grid, v)
    }

    /// Interior values of a field, in column order.
    pub fn restrict(&self, u: &ScalarField) -> Result<Vec<f64>> {
        check_space_time(u, &self.grid)?;
        Ok(self.nodes.iter().map(|&n| u.values()[n]).collect())
    }
}

/// An assembled least-squares problem for one trace set.
#[derive(Debug)]
pub struct QrmSystem {
    kind: SystemKind,
    dofs: DofMap,
    solver: LeastSquares,
    /// Right-hand side with the data terms and without any source.
    base_rhs: Vec<f64>,
    /// `(row, node, factor)`: the source adds `factor * s[node]` to `b[row]`.
    source_rows: Vec<(usize, usize, f64)>,
    kappa: f64,
    accept_unconverged: bool,
    /// Row offsets of the residual, regularization, Neumann and
    /// initial-velocity blocks.
    groups: [usize; 5],
}

impl QrmSystem {
    pub fn assemble(
        kind: SystemKind,
        config: &QrmConfig,
        speed: &WaveSpeed,
        data: &CauchyData,
    ) -> Result<Self> {
        config.validate()?;
        let grid = data.grid;
        config.carleman.validate_for(&grid)?;
        let dofs = DofMap::new(data)?;
        let (nx, ny, nt) = (grid.nx, grid.ny, grid.nt);
        let sv = grid.cell_volume().sqrt();
        let c = speed.sample(&grid);
        let no_damping = config.carleman.without_time_damping();
        let t_range = match kind {
            SystemKind::Step => 1..nt - 1,
            SystemKind::InitialGuess => 0..nt,
        };

        let mut rows = RowSink::new(&dofs);
        let mut source_rows = Vec::new();
        let (h2, dt2) = (grid.dx * grid.dx, grid.dt * grid.dt);

        for k in t_range {
            for j in 1..ny - 1 {
                for i in 1..nx - 1 {
                    let idx = grid.index(i, j, k);
                    let w = weight(&config.carleman, grid.x(i), grid.y(j), grid.t(k))? * sv;
                    let a = w / h2;
                    let mut st = vec![
                        (idx, 4.0 * a),
                        (idx - 1, -a),
                        (idx + 1, -a),
                        (idx - nx, -a),
                        (idx + nx, -a),
                    ];
                    if kind == SystemKind::Step {
                        let b = w * c[i + nx * j] / dt2;
                        let n = grid.spatial_len();
                        st[0].1 -= 2.0 * b;
                        st.push((idx - n, b));
                        st.push((idx + n, b));
                    }
                    if let Some(row) = rows.push(&st, 0.0)? {
                        if kind == SystemKind::Step {
                            source_rows.push((row, idx, w));
                        }
                    }
                }
            }
        }

        let eps = config.epsilon.sqrt();
        let mut scratch = StencilScratch::default();
        let mut stencil = Vec::with_capacity(9);
        let mut groups = [0usize; 5];
        groups[1] = rows.len();
        for alpha in multi_indices(2) {
            for idx in 0..grid.len() {
                let (i, j, k) = grid.unindex(idx);
                let w = eps * weight(&no_damping, grid.x(i), grid.y(j), 0.0)? * sv;
                derivative_stencil(&grid, alpha, (i, j, k), &mut scratch, &mut stencil);
                for e in stencil.iter_mut() {
                    e.1 *= w;
                }
                rows.push(&stencil, 0.0)?;
            }
        }

        groups[2] = rows.len();
        let kappa = config.kappa;
        for face in Face::ALL {
            let (di, dj) = face.outward();
            for k in 0..nt {
                for pos in 0..face.len(&grid) {
                    let (i, j) = face.node(&grid, pos);
                    let inward = |s: isize| {
                        grid.index(
                            (i as isize - s * di) as usize,
                            (j as isize - s * dj) as usize,
                            k,
                        )
                    };
                    let w = kappa * weight(&config.carleman, grid.x(i), grid.y(j), grid.t(k))? * sv;
                    let a = w / (2.0 * grid.dx);
                    let st = [(inward(0), 3.0 * a), (inward(1), -4.0 * a), (inward(2), a)];
                    let g = data.g[data.index(face, pos, k)];
                    rows.push(&st, w * g)?;
                }
            }
        }

        groups[3] = rows.len();
        // The step system uses the second-order form of u_t(., 0) = 0: the
        // ghost layer u⁻¹ = u¹ is eliminated with the equation at t = 0,
        // which matches the first step of the forward scheme.
        let n = grid.spatial_len();
        for s in 0..n {
            let (i, j) = (s % nx, s / nx);
            let w = kappa * weight(&config.carleman, grid.x(i), grid.y(j), 0.0)? * sv;
            let a = w / grid.dt;
            let interior = !grid.is_spatial_boundary(i, j);
            if kind == SystemKind::Step && interior {
                let b = w * grid.dt / (2.0 * c[s] * h2);
                let st = [
                    (s + n, a),
                    (s, -a + 4.0 * b),
                    (s - 1, -b),
                    (s + 1, -b),
                    (s - nx, -b),
                    (s + nx, -b),
                ];
                if let Some(row) = rows.push(&st, 0.0)? {
                    source_rows.push((row, s, w * grid.dt / (2.0 * c[s])));
                }
            } else {
                rows.push(&[(s + n, a), (s, -a)], 0.0)?;
            }
        }

        groups[4] = rows.len();
        let (matrix, base_rhs) = rows.finish();
        // unknowns are the lexicographic interior box; the normal equations
        // couple nodes two apart
        let g = dofs.grid();
        let order = nested_dissection([g.nx - 2, g.ny - 2, g.nt], 2);
        Ok(Self {
            kind,
            solver: LeastSquares::with_ordering(matrix, config.solver.clone(), Some(&order))?,
            dofs,
            base_rhs,
            source_rows,
            kappa,
            accept_unconverged: config.accept_unconverged,
            groups,
        })
    }

    pub fn kind(&self) -> SystemKind {
        self.kind
    }

    pub fn dofs(&self) -> &DofMap {
        &self.dofs
    }

    pub fn matrix(&self) -> &crate::sparse::CsrMatrix {
        self.solver.matrix()
    }

    /// Relative constraint weight.
    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Right-hand side for source term `s` (ignored by the initial guess).
    pub fn rhs(&self, s: Option<&ScalarField>) -> Result<Vec<f64>> {
        let mut b = self.base_rhs.clone();
        if let Some(s) = s {
            check_space_time(s, &self.dofs.grid)?;
            let s = s.values();
            for &(row, node, factor) in &self.source_rows {
                b[row] += factor * s[node];
            }
        }
        Ok(b)
    }

    /// Minimizes the functional; `start` warm-starts the solver.
    pub fn solve(
        &self,
        s: Option<&ScalarField>,
        start: Option<&ScalarField>,
    ) -> Result<(ScalarField, LsqReport)> {
        let b = self.rhs(s)?;
        let x0 = start.map(|u| self.dofs.restrict(u)).transpose()?;
        let (x, report) = self.solver.solve(&b, x0.as_deref())?;
        if !report.converged && !self.accept_unconverged {
            return Err(Error::NotConverged {
                iterations: report.iterations,
                relative_residual: report.relative_residual,
            });
        }
        Ok((self.dofs.expand(&x)?, report))
    }

    /// Rows of one block of the system.
    pub fn block(&self, block: RowBlock) -> std::ops::Range<usize> {
        let b = block as usize;
        self.groups[b]..self.groups[b + 1]
    }

    /// `Av - b` for a field whose boundary values are replaced by the
    /// Dirichlet data.
    pub fn residual(&self, v: &ScalarField, s: Option<&ScalarField>) -> Result<Vec<f64>> {
        let x = self.dofs.restrict(v)?;
        let b = self.rhs(s)?;
        let mut r = self.matrix().matvec(&x)?;
        for (ri, bi) in r.iter_mut().zip(&b) {
            *ri -= bi;
        }
        Ok(r)
    }

    /// Discrete functional `‖Av - b‖²` at a field whose boundary values are
    /// replaced by the Dirichlet data.
    pub fn objective(&self, v: &ScalarField, s: Option<&ScalarField>) -> Result<f64> {
        Ok(self.residual(v, s)?.iter().map(|v| v * v).sum())
    }
}

/// Accumulates rows, moving known columns to the right-hand side and
/// skipping rows without unknowns.
struct RowSink<'a> {
    dofs: &'a DofMap,
    builder: CsrBuilder,
    rhs: Vec<f64>,
    entries: Vec<(usize, f64)>,
}

impl<'a> RowSink<'a> {
    fn new(dofs: &'a DofMap) -> Self {
        Self {
            dofs,
            builder: CsrBuilder::new(dofs.n_unknowns()),
            rhs: Vec::new(),
            entries: Vec::with_capacity(16),
        }
    }

    fn push(&mut self, stencil: &[(usize, f64)], target: f64) -> Result<Option<usize>> {
        self.entries.clear();
        let mut b = target;
        for &(node, coef) in stencil {
            match self.dofs.column[node] {
                Some(col) => self.entries.push((col, coef)),
                None => b -= coef * self.dofs.known[node],
            }
        }
        if self.entries.is_empty() {
            return Ok(None);
        }
        let row = self.builder.push_row(&self.entries)?;
        self.rhs.push(b);
        Ok(Some(row))
    }

    fn len(&self) -> usize {
        self.rhs.len()
    }

    fn finish(self) -> (crate::sparse::CsrMatrix, Vec<f64>) {
        (self.builder.build(), self.rhs)
    }
}

fn check_space_time(u: &ScalarField, grid: &SpaceTimeGrid) -> Result<()> {
    let g = u.grid();
    if u.is_spatial() || g.nx != grid.nx || g.ny != grid.ny || g.nt != grid.nt {
        return Err(Error::ShapeMismatch(format!(
            "expected a {}x{}x{} space-time field",
            grid.nx, grid.ny, grid.nt
        )));
    }
    Ok(())
}

/// `F(u)` at every node; `u_t` and `∇u` by centered differences, one-sided
/// on the edges of the box.
pub fn evaluate_source_term<N: Nonlinearity + ?Sized>(
    u: &ScalarField,
    nonlinearity: &N,
) -> Result<ScalarField> {
    if u.is_spatial() {
        return Err(Error::ShapeMismatch("source term needs a space-time field".into()));
    }
    let grid = *u.grid();
    let v = u.values();
    let n = grid.spatial_len();
    let mut out = Vec::with_capacity(grid.len());
    for idx in 0..grid.len() {
        let (i, j, k) = grid.unindex(idx);
        let state = NodeState {
            x: grid.x(i),
            y: grid.y(j),
            t: grid.t(k),
            u: v[idx],
            ut: first_derivative(v, idx, n, k, grid.nt, grid.dt),
            grad: gradient(v, &grid, i, j, k),
        };
        let f = nonlinearity.eval(&state);
        if !f.is_finite() {
            return Err(Error::NonFinite("nonlinearity evaluated at the iterate"));
        }
        out.push(f);
    }
    ScalarField::from_values(grid, out)
}

/// Minimizer of `∫ W²|Δu|² + ε‖u‖²` under the data constraints.
pub fn initial_guess(
    config: &QrmConfig,
    speed: &WaveSpeed,
    data: &CauchyData,
) -> Result<(ScalarField, LsqReport)> {
    QrmSystem::assemble(SystemKind::InitialGuess, config, speed, data)?.solve(None, None)
}

/// One step: `u_{n+1} = argmin J_n` with `s = F(u_n)`. Assembles a fresh
/// system; [`run_algorithm`] reuses one instead.
pub fn iterate_step<N: Nonlinearity + ?Sized>(
    u_n: &ScalarField,
    config: &QrmConfig,
    nonlinearity: &N,
    speed: &WaveSpeed,
    data: &CauchyData,
) -> Result<(ScalarField, LsqReport)> {
    let system = QrmSystem::assemble(SystemKind::Step, config, speed, data)?;
    step_with(&system, u_n, config, nonlinearity)
}

fn step_with<N: Nonlinearity + ?Sized>(
    system: &QrmSystem,
    u_n: &ScalarField,
    config: &QrmConfig,
    nonlinearity: &N,
) -> Result<(ScalarField, LsqReport)> {
    let s = evaluate_source_term(u_n, nonlinearity)?;
    let start = config.warm_start.then_some(u_n);
    system.solve(Some(&s), start)
}

/// `p(x) = u(x, 0)`.
pub fn extract_initial_slice(u: &ScalarField) -> ScalarField {
    if u.is_spatial() {
        return u.clone();
    }
    u.layer(0).expect("layer 0 exists on every grid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 0 for the initial guess.
    pub n: usize,
    #[serde(skip)]
    pub p: Option<ScalarField>,
    /// `‖p_n - p_{n-1}‖_∞`, absent for `n = 0`.
    pub consec_diff_inf: Option<f64>,
    pub rel_l2_err: Option<f64>,
    /// `‖Ax - b‖` of the solved system.
    pub residual: f64,
    pub solver: LsqReport,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationHistory {
    pub records: Vec<IterationRecord>,
}

impl IterationHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `‖p_n - p_{n-1}‖_∞` for `n = 1, 2, ...`.
    pub fn consecutive_differences(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.consec_diff_inf).collect()
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    fn push(&mut self, n: usize, u: &ScalarField, report: LsqReport, p_star: Option<&ScalarField>) {
        let p = extract_initial_slice(u);
        let consec = self
            .records
            .last()
            .and_then(|r| r.p.as_ref())
            .map(|prev| max_abs_diff(&p, prev));
        let rel = p_star.and_then(|ps| rel_l2_error(&p, ps).ok());
        self.records.push(IterationRecord {
            n,
            p: Some(p),
            consec_diff_inf: consec,
            rel_l2_err: rel,
            residual: report.residual_norm,
            solver: report,
        });
    }
}

#[derive(Debug, Clone)]
pub struct QrmOutcome {
    pub u: ScalarField,
    pub p: ScalarField,
    pub history: IterationHistory,
}

/// A failed run together with the steps completed before the failure.
#[derive(Debug)]
pub struct RunFailure {
    pub error: Error,
    pub history: IterationHistory,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (after {} recorded steps)", self.error, self.history.len())
    }
}

impl std::error::Error for RunFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Initial guess followed by `config.iterations` fixed-point steps.
pub fn run_algorithm<N: Nonlinearity + ?Sized>(
    config: &QrmConfig,
    nonlinearity: &N,
    speed: &WaveSpeed,
    data: &CauchyData,
    p_star: Option<&ScalarField>,
) -> std::result::Result<QrmOutcome, RunFailure> {
    let mut history = IterationHistory::default();
    macro_rules! attempt {
        ($e:expr) => {
            match $e {
                Ok(v) => v,
                Err(error) => return Err(RunFailure { error, history }),
            }
        };
    }
    if let Some(ps) = p_star {
        let g = ps.grid();
        if g.nx != data.grid.nx || g.ny != data.grid.ny {
            return Err(RunFailure {
                error: Error::ShapeMismatch("true source does not match the data grid".into()),
                history,
            });
        }
    }
    let (mut u, report) = attempt!(initial_guess(config, speed, data));
    history.push(0, &u, report, p_star);
    if config.iterations > 0 {
        let system = attempt!(QrmSystem::assemble(SystemKind::Step, config, speed, data));
        for n in 1..=config.iterations {
            let (next, report) = attempt!(step_with(&system, &u, config, nonlinearity));
            u = next;
            history.push(n, &u, report, p_star);
        }
    }
    let p = extract_initial_slice(&u);
    Ok(QrmOutcome { u, p, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Rect;

    fn grid(n: usize, nt: usize) -> SpaceTimeGrid {
        SpaceTimeGrid::new(Rect::square(1.0), n, n, nt, 2.0).unwrap()
    }

    fn xy_data(g: SpaceTimeGrid) -> CauchyData {
        CauchyData::from_fn(
            g,
            |x, y, _| x * y,
            |face, x, y, _| {
                let (dx, dy) = face.outward();
                dx as f64 * y + dy as f64 * x
            },
        )
    }

    fn direct() -> QrmConfig {
        QrmConfig {
            solver: LsqOptions {
                method: LsqMethod::Cholesky,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn harmonic_data_reproduced_by_initial_guess() {
        let g = grid(11, 12);
        let (u0, rep) = initial_guess(&direct(), &WaveSpeed::default(), &xy_data(g)).unwrap();
        assert!(rep.converged, "{rep:?}");
        let exact = ScalarField::from_fn(g, |x, y, _| x * y);
        let err = max_abs_diff(&u0, &exact);
        assert!(err < 1e-2, "max error {err}");
    }
}
