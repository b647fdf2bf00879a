//! Explicit leapfrog solver for `c u_tt = Δu + F(x, t, u, u_t, ∇u)` on a
//! padded square, extraction of the lateral Cauchy data on the boundary of
//! the inner domain, and multiplicative noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{gradient, laplacian_unchecked, ScalarField, SpaceTimeGrid};
use crate::model::{NodeState, Nonlinearity, WaveSpeed};

/// Stability bound enforced on `dt / dx`.
pub const CFL_LIMIT: f64 = 0.5;

/// Solves the initial value problem `u(., 0) = p`, `u_t(., 0) = 0` with
/// homogeneous Dirichlet conditions on the boundary of `grid`.
///
/// The first layer uses `u¹ = u⁰ + dt²/(2c) (Δu⁰ + F⁰)`; later layers use the
/// leapfrog update with `u_t ≈ (u^k - u^{k-1}) / dt` inside `F`. Values of
/// `p` on the outer boundary are overwritten by the Dirichlet condition.
pub fn solve_forward<N: Nonlinearity + ?Sized>(
    nonlinearity: &N,
    speed: &WaveSpeed,
    grid: &SpaceTimeGrid,
    p: &ScalarField,
) -> Result<ScalarField> {
    let ratio = grid.cfl_ratio();
    if ratio >= CFL_LIMIT {
        return Err(Error::CflViolation {
            ratio,
            bound: CFL_LIMIT,
        });
    }
    let pg = p.grid();
    if !p.is_spatial() || pg.nx != grid.nx || pg.ny != grid.ny {
        return Err(Error::ShapeMismatch(format!(
            "initial source must be a {}x{} spatial field",
            grid.nx, grid.ny
        )));
    }
    let (nx, ny, nt) = (grid.nx, grid.ny, grid.nt);
    let n = grid.spatial_len();
    let dt2 = grid.dt * grid.dt;
    let c = speed.sample(grid);

    let mut u = vec![0.0; grid.len()];
    for j in 1..ny - 1 {
        for i in 1..nx - 1 {
            u[i + nx * j] = p.values()[i + nx * j];
        }
    }

    let state = |u: &[f64], i: usize, j: usize, k: usize, ut: f64| NodeState {
        x: grid.x(i),
        y: grid.y(j),
        t: grid.t(k),
        u: u[grid.index(i, j, k)],
        ut,
        grad: gradient(u, grid, i, j, k),
    };

    for k in 0..nt - 1 {
        for j in 1..ny - 1 {
            for i in 1..nx - 1 {
                let s = i + nx * j;
                let cur = s + k * n;
                let lap = laplacian_unchecked(&u, grid, i, j, k);
                let next = if k == 0 {
                    let f = nonlinearity.eval(&state(&u, i, j, 0, 0.0));
                    u[cur] + 0.5 * dt2 / c[s] * (lap + f)
                } else {
                    let ut = (u[cur] - u[cur - n]) / grid.dt;
                    let f = nonlinearity.eval(&state(&u, i, j, k, ut));
                    2.0 * u[cur] - u[cur - n] + dt2 / c[s] * (lap + f)
                };
                u[cur + n] = next;
            }
        }
        if u[(k + 1) * n..(k + 2) * n].iter().any(|v| !v.is_finite()) {
            return Err(Error::Instability { layer: k + 1 });
        }
    }
    ScalarField::from_values(*grid, u)
}

/// Side of the rectangular inner domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Face {
    South,
    East,
    North,
    West,
}

impl Face {
    pub const ALL: [Face; 4] = [Face::South, Face::East, Face::North, Face::West];

    pub fn name(self) -> &'static str {
        match self {
            Face::South => "south",
            Face::East => "east",
            Face::North => "north",
            Face::West => "west",
        }
    }

    pub fn from_name(s: &str) -> Option<Face> {
        Face::ALL.into_iter().find(|f| f.name() == s)
    }

    /// Outward unit step in lattice coordinates.
    pub fn outward(self) -> (isize, isize) {
        match self {
            Face::South => (0, -1),
            Face::East => (1, 0),
            Face::North => (0, 1),
            Face::West => (-1, 0),
        }
    }

    /// Number of nodes along this face.
    pub fn len(self, grid: &SpaceTimeGrid) -> usize {
        match self {
            Face::South | Face::North => grid.nx,
            Face::East | Face::West => grid.ny,
        }
    }

    /// Lattice node `(i, j)` of position `pos` along the face.
    pub fn node(self, grid: &SpaceTimeGrid, pos: usize) -> (usize, usize) {
        match self {
            Face::South => (pos, 0),
            Face::North => (pos, grid.ny - 1),
            Face::East => (grid.nx - 1, pos),
            Face::West => (0, pos),
        }
    }
}

/// Dirichlet (`f`) and Neumann (`g`) traces on the four faces of the inner
/// domain over all time layers.
///
/// Sample order is face-major (`South, East, North, West`), then time
/// layer, then position along the face. Corner nodes appear once on each
/// of their two faces.
#[derive(Debug, Clone, PartialEq)]
pub struct CauchyData {
    pub grid: SpaceTimeGrid,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub noise_level: f64,
    pub seed: Option<u64>,
}

impl CauchyData {
    /// Number of trace samples for an inner-domain grid.
    pub fn sample_count(grid: &SpaceTimeGrid) -> usize {
        2 * (grid.nx + grid.ny) * grid.nt
    }

    pub fn face_offset(grid: &SpaceTimeGrid, face: Face) -> usize {
        Face::ALL
            .iter()
            .take_while(|&&f| f != face)
            .map(|f| f.len(grid) * grid.nt)
            .sum()
    }

    #[inline]
    pub fn index(&self, face: Face, pos: usize, k: usize) -> usize {
        Self::face_offset(&self.grid, face) + k * face.len(&self.grid) + pos
    }

    /// Zero traces on `grid`.
    pub fn zeros(grid: SpaceTimeGrid) -> Self {
        let n = Self::sample_count(&grid);
        Self {
            grid,
            f: vec![0.0; n],
            g: vec![0.0; n],
            noise_level: 0.0,
            seed: None,
        }
    }

    /// Traces of an analytic function and its outward normal derivative.
    pub fn from_fn(
        grid: SpaceTimeGrid,
        u: impl Fn(f64, f64, f64) -> f64,
        normal_derivative: impl Fn(Face, f64, f64, f64) -> f64,
    ) -> Self {
        let mut data = Self::zeros(grid);
        for face in Face::ALL {
            for k in 0..grid.nt {
                for pos in 0..face.len(&grid) {
                    let (i, j) = face.node(&grid, pos);
                    let (x, y, t) = (grid.x(i), grid.y(j), grid.t(k));
                    let idx = data.index(face, pos, k);
                    data.f[idx] = u(x, y, t);
                    data.g[idx] = normal_derivative(face, x, y, t);
                }
            }
        }
        data
    }

    /// `f = f*(1 + δ r)` and `g = g*(1 + δ r')` with independent uniform
    /// `r, r' ∈ [-1, 1]` per sample, reproducible from `seed`.
    pub fn add_noise(&self, delta: f64, seed: u64) -> Result<CauchyData> {
        if !(0.0..1.0).contains(&delta) {
            return Err(Error::InvalidParameter(format!(
                "noise level must lie in [0, 1), got {delta}"
            )));
        }
        let mut out = self.clone();
        out.noise_level = delta;
        out.seed = Some(seed);
        if delta == 0.0 {
            return Ok(out);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (f, g) in out.f.iter_mut().zip(out.g.iter_mut()) {
            let rf: f64 = rng.random_range(-1.0..=1.0);
            let rg: f64 = rng.random_range(-1.0..=1.0);
            *f *= 1.0 + delta * rf;
            *g *= 1.0 + delta * rg;
        }
        Ok(out)
    }
}

/// Restricts the forward field to the inner domain's boundary: `f = u` and
/// `g = ∂_ν u` by the outward one-sided three-point difference, which uses
/// nodes of the padded grid outside the inner domain.
pub fn extract_cauchy(u: &ScalarField, omega: &SpaceTimeGrid) -> Result<CauchyData> {
    let outer = u.grid();
    if u.is_spatial() {
        return Err(Error::ShapeMismatch("forward field must be space-time".into()));
    }
    let offset = inner_offset(outer, omega)?;
    let mut data = CauchyData::zeros(*omega);
    let h = outer.dx;
    for face in Face::ALL {
        let (di, dj) = face.outward();
        for k in 0..omega.nt {
            for pos in 0..face.len(omega) {
                let (i, j) = face.node(omega, pos);
                let (gi, gj) = (i + offset.0, j + offset.1);
                let at = |s: isize| {
                    u.at(
                        (gi as isize + s * di) as usize,
                        (gj as isize + s * dj) as usize,
                        k,
                    )
                };
                let idx = data.index(face, pos, k);
                data.f[idx] = at(0);
                data.g[idx] = (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h);
            }
        }
    }
    Ok(data)
}

/// Values of a padded-domain field on the nodes of the inner grid.
pub fn restrict_to(u: &ScalarField, inner: &SpaceTimeGrid) -> Result<ScalarField> {
    let (i0, j0) = inner_offset(u.grid(), inner)?;
    Ok(ScalarField::from_fn(*inner, |_, _, _| 0.0)).map(|mut out| {
        for k in 0..inner.nt {
            for j in 0..inner.ny {
                for i in 0..inner.nx {
                    out.set(i, j, k, u.at(i + i0, j + j0, k));
                }
            }
        }
        out
    })
}

/// Lattice offset of the inner grid's origin inside the outer grid, after
/// checking spacing, time axis and a two-node margin.
pub fn inner_offset(outer: &SpaceTimeGrid, inner: &SpaceTimeGrid) -> Result<(usize, usize)> {
    let rel = |a: f64, b: f64| ((a - b) / b).abs();
    if rel(outer.dx, inner.dx) > 1e-9 || rel(outer.dt, inner.dt) > 1e-9 || outer.nt != inner.nt {
        return Err(Error::Misaligned(format!(
            "spacings (dx {}, dt {}, nt {}) vs (dx {}, dt {}, nt {})",
            outer.dx, outer.dt, outer.nt, inner.dx, inner.dt, inner.nt
        )));
    }
    let (i0, j0) = outer
        .locate(inner.bounds.x_min, inner.bounds.y_min)
        .ok_or_else(|| Error::Misaligned("inner corner is not an outer lattice node".into()))?;
    if i0 < 2 || j0 < 2 || i0 + inner.nx + 2 > outer.nx || j0 + inner.ny + 2 > outer.ny {
        return Err(Error::Misaligned(
            "inner domain needs two outer nodes of margin on every side".into(),
        ));
    }
    Ok((i0, j0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Rect;
    use crate::model::{NonlinearitySpec, SourceSpec, TestId};

    fn bump(x: f64, y: f64) -> f64 {
        let r2 = (x * x + y * y) / 0.25;
        if r2 < 1.0 {
            (1.0 - r2).powi(4)
        } else {
            0.0
        }
    }

    #[test]
    fn zero_stays_zero() {
        let g = SpaceTimeGrid::with_spacing(Rect::square(2.0), 0.1, 0.4, 1.0).unwrap();
        let p = ScalarField::zeros_spatial(g);
        let u = solve_forward(&NonlinearitySpec::linear(), &WaveSpeed::default(), &g, &p).unwrap();
        assert!(u.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_cfl_violation() {
        let g = SpaceTimeGrid::new(Rect::square(1.0), 11, 11, 5, 1.0).unwrap();
        let p = ScalarField::zeros_spatial(g);
        let err = solve_forward(&NonlinearitySpec::linear(), &WaveSpeed::default(), &g, &p);
        assert!(matches!(err, Err(Error::CflViolation { .. })));
    }

    #[test]
    fn reports_blow_up_layer() {
        let g = SpaceTimeGrid::with_spacing(Rect::square(1.0), 0.1, 0.4, 1.0).unwrap();
        let p = ScalarField::spatial_from_fn(g, |_, _| 1.0);
        let explode = |s: &NodeState| if s.t > 0.3 { f64::INFINITY } else { 0.0 };
        match solve_forward(&explode, &WaveSpeed::default(), &g, &p) {
            Err(Error::Instability { layer }) => assert!(layer > 1 && layer < g.nt),
            other => panic!("expected instability, got {other:?}"),
        }
    }

    /// Staggered leapfrog energy, conserved exactly by the scheme for
    /// `F = 0`, `c = 1` with Dirichlet boundaries.
    fn energy(u: &ScalarField, k: usize) -> f64 {
        let g = u.grid();
        let mut e = 0.0;
        for j in 0..g.ny {
            for i in 0..g.nx {
                let vt = (u.at(i, j, k + 1) - u.at(i, j, k)) / g.dt;
                e += vt * vt;
            }
        }
        for j in 0..g.ny {
            for i in 0..g.nx - 1 {
                let a = (u.at(i + 1, j, k) - u.at(i, j, k)) / g.dx;
                let b = (u.at(i + 1, j, k + 1) - u.at(i, j, k + 1)) / g.dx;
                e += a * b;
            }
        }
        for j in 0..g.ny - 1 {
            for i in 0..g.nx {
                let a = (u.at(i, j + 1, k) - u.at(i, j, k)) / g.dx;
                let b = (u.at(i, j + 1, k + 1) - u.at(i, j, k + 1)) / g.dx;
                e += a * b;
            }
        }
        e * g.dx * g.dx
    }

    #[test]
    fn linear_energy_bounded() {
        let g = SpaceTimeGrid::with_spacing(Rect::square(2.0), 0.04, 0.44, 2.0).unwrap();
        let p = ScalarField::spatial_from_fn(g, bump);
        let u = solve_forward(&NonlinearitySpec::linear(), &WaveSpeed::default(), &g, &p).unwrap();
        let energies: Vec<f64> = (0..g.nt - 1).map(|k| energy(&u, k)).collect();
        let e0 = energies[0];
        assert!(e0 > 0.0);
        for e in &energies {
            assert!(((e - e0) / e0).abs() < 0.01, "{e} vs {e0}");
        }
    }

    #[test]
    fn deterministic() {
        let g = SpaceTimeGrid::with_spacing(Rect::square(2.0), 0.1, 0.44, 1.0).unwrap();
        let p = SourceSpec::Test(TestId::Test1).sample(&g);
        let f = NonlinearitySpec::test(TestId::Test1);
        let a = solve_forward(&f, &WaveSpeed::default(), &g, &p).unwrap();
        let b = solve_forward(&f, &WaveSpeed::default(), &g, &p).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn point_symmetric_source_gives_symmetric_field() {
        // Test 1's source is even in x and y; Test 2's F only sees |grad u|.
        let g = SpaceTimeGrid::with_spacing(Rect::square(4.0), 0.1, 0.44, 2.0).unwrap();
        let p = SourceSpec::Test(TestId::Test1).sample(&g);
        let f = NonlinearitySpec::test(TestId::Test2);
        let u = solve_forward(&f, &WaveSpeed::default(), &g, &p).unwrap();
        let (nx, ny) = (g.nx, g.ny);
        let mut worst = 0.0_f64;
        for k in 0..g.nt {
            for j in 0..ny {
                for i in 0..nx {
                    worst = worst.max((u.at(i, j, k) - u.at(nx - 1 - i, ny - 1 - j, k)).abs());
                }
            }
        }
        assert!(worst < 1e-12, "asymmetry {worst}");
    }

    #[test]
    fn finite_propagation_to_padding() {
        // Noise-free Test 1 on the padded square at a coarse spacing: the
        // source's influence does not reach the ring next to the outer boundary.
        let g = SpaceTimeGrid::with_spacing(Rect::square(4.0), 0.05, 0.44, 2.0).unwrap();
        let f = NonlinearitySpec::test(TestId::Test1);
        let p = SourceSpec::Test(TestId::Test1).sample(&g);
        let u = solve_forward(&f, &WaveSpeed::default(), &g, &p).unwrap();
        let background = solve_forward(&f, &WaveSpeed::default(), &g, &ScalarField::zeros_spatial(g)).unwrap();
        assert!(u.values().iter().all(|v| v.is_finite()));
        let mut worst = 0.0_f64;
        for k in 0..g.nt {
            for j in 0..g.ny {
                for i in 0..g.nx {
                    let ring = i <= 1 || j <= 1 || i >= g.nx - 2 || j >= g.ny - 2;
                    if ring {
                        worst = worst.max((u.at(i, j, k) - background.at(i, j, k)).abs());
                    }
                }
            }
        }
        assert!(worst < 1e-10, "perturbation {worst} reached the padding");
    }

    fn aligned_pair() -> (SpaceTimeGrid, SpaceTimeGrid) {
        let outer = SpaceTimeGrid::with_spacing(Rect::square(2.0), 0.1, 0.4, 1.0).unwrap();
        let inner = SpaceTimeGrid::new(Rect::square(1.0), 21, 21, outer.nt, 1.0).unwrap();
        (outer, inner)
    }

    #[test]
    fn traces_of_simple_fields() {
        let (outer, inner) = aligned_pair();
        let constant = ScalarField::from_fn(outer, |_, _, _| 2.5);
        let data = extract_cauchy(&constant, &inner).unwrap();
        assert_eq!(data.f.len(), CauchyData::sample_count(&inner));
        assert!(data.f.iter().all(|&v| v == 2.5));
        assert!(data.g.iter().all(|&v| v.abs() < 1e-12));

        let ux = ScalarField::from_fn(outer, |x, _, _| x);
        let uy = ScalarField::from_fn(outer, |_, y, _| y);
        let dx = extract_cauchy(&ux, &inner).unwrap();
        let dy = extract_cauchy(&uy, &inner).unwrap();
        for k in [0, 3, inner.nt - 1] {
            for pos in 0..inner.ny {
                let e = dx.index(Face::East, pos, k);
                assert!((dx.g[e] - 1.0).abs() < 1e-10);
                assert!(dy.g[e].abs() < 1e-10);
                let w = dx.index(Face::West, pos, k);
                assert!((dx.g[w] + 1.0).abs() < 1e-10);
            }
            for pos in 0..inner.nx {
                let n = dy.index(Face::North, pos, k);
                assert!((dy.g[n] - 1.0).abs() < 1e-10);
                let s = dy.index(Face::South, pos, k);
                assert!((dy.g[s] + 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn traces_of_quadratic_are_exact() {
        let (outer, inner) = aligned_pair();
        let u = ScalarField::from_fn(outer, |x, y, t| x * x + x * y + t * y * y);
        let data = extract_cauchy(&u, &inner).unwrap();
        for k in 0..inner.nt {
            let t = inner.t(k);
            for pos in 0..inner.ny {
                let y = inner.y(pos);
                let idx = data.index(Face::East, pos, k);
                assert!((data.g[idx] - (2.0 + y)).abs() < 1e-10);
                assert!((data.f[idx] - (1.0 + y + t * y * y)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn misaligned_grids_rejected() {
        let outer = SpaceTimeGrid::with_spacing(Rect::square(2.0), 0.1, 0.4, 1.0).unwrap();
        let u = ScalarField::zeros(outer);
        let shifted = SpaceTimeGrid::new(Rect::new(-1.05, 0.95, -1.0, 1.0), 21, 21, outer.nt, 1.0).unwrap();
        assert!(extract_cauchy(&u, &shifted).is_err());
        let coarse = SpaceTimeGrid::new(Rect::square(1.0), 11, 11, outer.nt, 1.0).unwrap();
        assert!(extract_cauchy(&u, &coarse).is_err());
        let no_margin = SpaceTimeGrid::new(Rect::square(1.95), 40, 40, outer.nt, 1.0);
        if let Ok(g) = no_margin {
            assert!(extract_cauchy(&u, &g).is_err());
        }
    }

    #[test]
    fn noise_model() {
        let (outer, inner) = aligned_pair();
        let u = ScalarField::from_fn(outer, |x, y, t| 1.0 + x * x + y + t);
        let clean = extract_cauchy(&u, &inner).unwrap();

        let same = clean.add_noise(0.0, 7).unwrap();
        assert_eq!(same.f, clean.f);
        assert_eq!(same.g, clean.g);

        let noisy = clean.add_noise(0.1, 7).unwrap();
        assert_eq!(noisy.noise_level, 0.1);
        assert_eq!(noisy.seed, Some(7));
        let mut changed = 0;
        for (a, b) in noisy.f.iter().zip(&clean.f).chain(noisy.g.iter().zip(&clean.g)) {
            assert!((a - b).abs() <= 0.1 * b.abs() * (1.0 + 1e-12));
            if a != b {
                changed += 1;
            }
        }
        assert!(changed > clean.f.len());
        assert_eq!(clean.add_noise(0.1, 7).unwrap(), noisy);
        assert_ne!(clean.add_noise(0.1, 8).unwrap().f, noisy.f);
        assert!(clean.add_noise(-0.1, 1).is_err());
        assert!(clean.add_noise(1.0, 1).is_err());
    }

    #[test]
    fn full_rand_scales_by_one_plus_delta() {
        let delta: f64 = 0.1;
        let r: f64 = 1.0;
        assert!((3.0 * (1.0 + delta * r) - 3.3).abs() < 1e-15);
    }
}
