//! Carleman weight `W(x, t) = exp(λ(|x - x0|² - η t²))`, the weighted
//! discrete Sobolev norms built on it, and the admissibility checks on the
//! weight parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ScalarField, SpaceTimeGrid};

/// Largest exponent accepted before `exp` is considered an overflow.
pub const MAX_EXPONENT: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarlemanParams {
    /// Pole of the weight, outside the closed inner domain.
    pub x0: [f64; 2],
    pub lambda: f64,
    pub eta: f64,
    /// Lower bound required of `|x - x0|² - η t²` on the space-time box.
    pub eps_domain: f64,
}

impl Default for CarlemanParams {
    fn default() -> Self {
        Self {
            x0: [0.0, -2.5],
            lambda: 2.1,
            eta: 0.5,
            eps_domain: 0.1,
        }
    }
}

impl CarlemanParams {
    /// `λ = 0` is accepted as the unweighted limit.
    pub fn new(x0: [f64; 2], lambda: f64, eta: f64, eps_domain: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda must be >= 0, got {lambda}")));
        }
        if !(0.0..1.0).contains(&eta) {
            return Err(Error::InvalidParameter(format!("eta must lie in [0, 1), got {eta}")));
        }
        if !(eps_domain > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "domain epsilon must be positive, got {eps_domain}"
            )));
        }
        if !(x0[0].is_finite() && x0[1].is_finite()) {
            return Err(Error::InvalidParameter("x0 must be finite".into()));
        }
        Ok(Self {
            x0,
            lambda,
            eta,
            eps_domain,
        })
    }

    /// Checks `x0` lies outside the closed domain of `grid` and that the
    /// domain condition holds on every node.
    pub fn validate_for(&self, grid: &SpaceTimeGrid) -> Result<()> {
        if grid.bounds.contains(self.x0[0], self.x0[1]) {
            return Err(Error::InvalidParameter(format!(
                "x0 = {:?} lies in the closed domain",
                self.x0
            )));
        }
        if !check_domain_condition(self, grid) {
            return Err(Error::InvalidParameter(format!(
                "|x - x0|^2 - eta t^2 > {} fails on the grid",
                self.eps_domain
            )));
        }
        Ok(())
    }

    /// Same pole and exponent without time damping, `W_{λ,0}`.
    pub fn without_time_damping(&self) -> Self {
        Self { eta: 0.0, ..*self }
    }

    #[inline]
    pub fn exponent(&self, x: f64, y: f64, t: f64) -> f64 {
        let (ax, ay) = (x - self.x0[0], y - self.x0[1]);
        self.lambda * (ax * ax + ay * ay - self.eta * t * t)
    }
}

pub fn weight(params: &CarlemanParams, x: f64, y: f64, t: f64) -> Result<f64> {
    let exponent = params.exponent(x, y, t);
    if exponent > MAX_EXPONENT {
        return Err(Error::WeightOverflow { exponent, x, y, t });
    }
    Ok(exponent.exp())
}

/// Weight at every node of `grid`.
pub fn weight_field(params: &CarlemanParams, grid: &SpaceTimeGrid) -> Result<ScalarField> {
    let mut values = Vec::with_capacity(grid.len());
    for k in 0..grid.nt {
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                values.push(weight(params, grid.x(i), grid.y(j), grid.t(k))?);
            }
        }
    }
    ScalarField::from_values(*grid, values)
}

/// `min (|x - x0|² - η t²) > eps_domain` over all nodes.
pub fn check_domain_condition(params: &CarlemanParams, grid: &SpaceTimeGrid) -> bool {
    let t = grid.t_final;
    let mut worst = f64::INFINITY;
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let (ax, ay) = (grid.x(i) - params.x0[0], grid.y(j) - params.x0[1]);
            worst = worst.min(ax * ax + ay * ay);
        }
    }
    worst - params.eta * t * t > params.eps_domain
}

/// Derivative orders `(∂x, ∂y, ∂t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MultiIndex(pub u8, pub u8, pub u8);

impl MultiIndex {
    pub fn order(&self) -> u8 {
        self.0 + self.1 + self.2
    }
}

/// All multi-indices with `|α| <= s`.
pub fn multi_indices(s: u8) -> Vec<MultiIndex> {
    let mut out = Vec::new();
    for total in 0..=s {
        for a in (0..=total).rev() {
            for b in (0..=total - a).rev() {
                out.push(MultiIndex(a, b, total - a - b));
            }
        }
    }
    out
}

/// One-dimensional stencil `(offset, coefficient)` of a first or second
/// derivative at position `pos` of `n` nodes. Centered in the interior,
/// shifted inward at the ends.
fn axis_stencil(order: u8, pos: usize, n: usize, h: f64, out: &mut Vec<(isize, f64)>) {
    out.clear();
    match order {
        0 => out.push((0, 1.0)),
        1 => {
            let s = 1.0 / (2.0 * h);
            if pos == 0 {
                out.extend([(0, -3.0 * s), (1, 4.0 * s), (2, -s)]);
            } else if pos == n - 1 {
                out.extend([(0, 3.0 * s), (-1, -4.0 * s), (-2, s)]);
            } else {
                out.extend([(-1, -s), (1, s)]);
            }
        }
        2 => {
            let s = 1.0 / (h * h);
            let centre: isize = if pos == 0 {
                1
            } else if pos == n - 1 {
                -1
            } else {
                0
            };
            out.extend([(centre - 1, s), (centre, -2.0 * s), (centre + 1, s)]);
        }
        _ => unreachable!("derivative orders above two are not used"),
    }
}

/// Scratch space for [`derivative_stencil`].
#[derive(Debug, Default)]
pub struct StencilScratch {
    axes: [Vec<(isize, f64)>; 3],
}

/// Linear stencil of `D_α` at node `(i, j, k)` as `(flat index, coefficient)`.
/// Mixed derivatives are tensor products of first-derivative stencils.
pub fn derivative_stencil(
    grid: &SpaceTimeGrid,
    alpha: MultiIndex,
    (i, j, k): (usize, usize, usize),
    scratch: &mut StencilScratch,
    out: &mut Vec<(usize, f64)>,
) {
    let [sx, sy, st] = &mut scratch.axes;
    axis_stencil(alpha.0, i, grid.nx, grid.dx, sx);
    axis_stencil(alpha.1, j, grid.ny, grid.dx, sy);
    axis_stencil(alpha.2, k, grid.nt, grid.dt, st);
    out.clear();
    for &(ot, ct) in st.iter() {
        for &(oy, cy) in sy.iter() {
            for &(ox, cx) in sx.iter() {
                let idx = grid.index(
                    (i as isize + ox) as usize,
                    (j as isize + oy) as usize,
                    (k as isize + ot) as usize,
                );
                out.push((idx, cx * cy * ct));
            }
        }
    }
}

/// Discrete `H^s_{λ,η}` norm on the space-time box:
/// `[Σ_{|α|<=s} Σ_nodes W² (D_α v)² dx² dt]^{1/2}`.
pub fn weighted_sobolev_norm(field: &ScalarField, s: u8, params: &CarlemanParams) -> Result<f64> {
    if s > 2 {
        return Err(Error::InvalidParameter(format!(
            "Sobolev order {s} not supported (0, 1 or 2)"
        )));
    }
    if field.is_spatial() {
        return Err(Error::ShapeMismatch("Sobolev norm needs a space-time field".into()));
    }
    let grid = *field.grid();
    let w = weight_field(params, &grid)?;
    let v = field.values();
    let mut scratch = StencilScratch::default();
    let mut stencil = Vec::with_capacity(9);
    let mut sum = 0.0;
    for alpha in multi_indices(s) {
        for idx in 0..grid.len() {
            derivative_stencil(&grid, alpha, grid.unindex(idx), &mut scratch, &mut stencil);
            let d: f64 = stencil.iter().map(|&(n, c)| c * v[n]).sum();
            let wd = w.values()[idx] * d;
            sum += wd * wd;
        }
    }
    let norm = (sum * grid.cell_volume()).sqrt();
    if !norm.is_finite() {
        return Err(Error::NonFinite("weighted Sobolev norm"));
    }
    Ok(norm)
}

/// `[∫_Ω e^{2λ|x - x0|²} p² dx]^{1/2}` on the spatial nodes.
pub fn weighted_l2_source_norm(p: &ScalarField, params: &CarlemanParams) -> Result<f64> {
    let grid = p.grid();
    let spatial = params.without_time_damping();
    let mut sum = 0.0;
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let w = weight(&spatial, grid.x(i), grid.y(j), 0.0)?;
            let wp = w * p.at(i, j, 0);
            sum += wp * wp;
        }
    }
    let norm = (sum * grid.dx * grid.dx).sqrt();
    if !norm.is_finite() {
        return Err(Error::NonFinite("weighted source norm"));
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Rect;
    use proptest::prelude::*;

    fn omega(n: usize, nt: usize) -> SpaceTimeGrid {
        SpaceTimeGrid::new(Rect::square(1.0), n, n, nt, 2.0).unwrap()
    }

    #[test]
    fn weight_values() {
        let p = CarlemanParams::default();
        // |x - x0|^2 = 1 = η t^2 at t = sqrt 2
        assert!((weight(&p, 0.0, -1.5, 2f64.sqrt()).unwrap() - 1.0).abs() < 1e-12);
        let w = weight(&p, 0.0, -1.5, 0.0).unwrap();
        assert!((w - 2.1f64.exp()).abs() < 1e-12);
        assert!((w - 8.1662).abs() < 1e-4);
        let flat = p.without_time_damping();
        assert_eq!(
            weight(&flat, 0.3, 0.2, 0.0).unwrap(),
            weight(&flat, 0.3, 0.2, 1.7).unwrap()
        );
    }

    #[test]
    fn weight_overflow_is_an_error() {
        let p = CarlemanParams::new([0.0, -2.5], 100.0, 0.5, 0.1).unwrap();
        assert!(matches!(
            weight(&p, 0.0, 1.0, 0.0),
            Err(Error::WeightOverflow { .. })
        ));
    }

    #[test]
    fn parameter_validation() {
        assert!(CarlemanParams::new([0.0, -2.5], -1.0, 0.5, 0.1).is_err());
        assert!(CarlemanParams::new([0.0, -2.5], 1.0, 1.0, 0.1).is_err());
        assert!(CarlemanParams::new([0.0, -2.5], 1.0, 0.5, 0.0).is_err());
        let g = omega(5, 5);
        assert!(CarlemanParams::default().validate_for(&g).is_ok());
        let inside = CarlemanParams::new([0.0, 0.0], 1.0, 0.5, 0.1).unwrap();
        assert!(inside.validate_for(&g).is_err());
    }

    #[test]
    fn domain_condition() {
        let g = omega(11, 5);
        // min |x - x0|^2 = 2.25 at (0, -1); 2.25 - 0.5 * 4 = 0.25
        assert!(check_domain_condition(&CarlemanParams::default(), &g));
        let strict = CarlemanParams::new([0.0, -2.5], 2.1, 0.5, 0.3).unwrap();
        assert!(!check_domain_condition(&strict, &g));
        let inside = CarlemanParams::new([0.0, 0.0], 1.0, 0.0, 0.01).unwrap();
        assert!(!check_domain_condition(&inside, &g));
        let no_damping = CarlemanParams::new([0.0, -2.5], 1.0, 0.0, 2.2).unwrap();
        assert!(check_domain_condition(&no_damping, &g));
    }

    #[test]
    fn multi_index_sets() {
        assert_eq!(multi_indices(0).len(), 1);
        assert_eq!(multi_indices(1).len(), 4);
        let two = multi_indices(2);
        assert_eq!(two.len(), 10);
        assert!(two.contains(&MultiIndex(1, 0, 1)));
        assert!(two.contains(&MultiIndex(0, 0, 2)));
    }

    #[test]
    fn derivative_stencils_exact_on_quadratics() {
        let g = SpaceTimeGrid::new(Rect::new(0.0, 1.0, 0.0, 1.0), 6, 6, 7, 1.5).unwrap();
        let f = ScalarField::from_fn(g, |x, y, t| 1.0 + x + 2.0 * y * y + 3.0 * x * t - t * t + x * y);
        let exact = |a: MultiIndex, x: f64, y: f64, t: f64| match (a.0, a.1, a.2) {
            (0, 0, 0) => 1.0 + x + 2.0 * y * y + 3.0 * x * t - t * t + x * y,
            (1, 0, 0) => 1.0 + 3.0 * t + y,
            (0, 1, 0) => 4.0 * y + x,
            (0, 0, 1) => 3.0 * x - 2.0 * t,
            (2, 0, 0) => 0.0,
            (0, 2, 0) => 4.0,
            (0, 0, 2) => -2.0,
            (1, 1, 0) => 1.0,
            (1, 0, 1) => 3.0,
            (0, 1, 1) => 0.0,
            _ => unreachable!(),
        };
        let mut scratch = StencilScratch::default();
        let mut st = Vec::new();
        for a in multi_indices(2) {
            for idx in 0..g.len() {
                let (i, j, k) = g.unindex(idx);
                derivative_stencil(&g, a, (i, j, k), &mut scratch, &mut st);
                let d: f64 = st.iter().map(|&(n, c)| c * f.values()[n]).sum();
                let e = exact(a, g.x(i), g.y(j), g.t(k));
                assert!((d - e).abs() < 1e-9, "{a:?} at {:?}: {d} vs {e}", (i, j, k));
            }
        }
    }

    #[test]
    fn sobolev_norm_basics() {
        let g = omega(7, 6);
        let p = CarlemanParams::default();
        assert_eq!(weighted_sobolev_norm(&ScalarField::zeros(g), 2, &p).unwrap(), 0.0);
        assert!(weighted_sobolev_norm(&ScalarField::zeros(g), 3, &p).is_err());
        assert!(weighted_sobolev_norm(&ScalarField::zeros_spatial(g), 0, &p).is_err());
    }

    #[test]
    fn unweighted_volume() {
        // Plain node sums over-count the box by (1 + 1/(n-1))^2 (1 + 1/(nt-1)).
        let g = SpaceTimeGrid::new(Rect::square(1.0), 101, 101, 201, 2.0).unwrap();
        let ones = ScalarField::from_fn(g, |_, _, _| 1.0);
        let p = CarlemanParams::new([0.0, -2.5], 0.0, 0.0, 0.1).unwrap();
        let n = weighted_sobolev_norm(&ones, 0, &p).unwrap();
        assert!((n - 8f64.sqrt()).abs() / 8f64.sqrt() < 0.02, "{n}");
    }

    #[test]
    fn zero_lambda_matches_unweighted_sum() {
        let g = omega(6, 5);
        let f = ScalarField::from_fn(g, |x, y, t| (x * 3.0).sin() + y * t);
        let p = CarlemanParams::new([0.0, -2.5], 0.0, 0.0, 0.1).unwrap();
        let direct = {
            let mut sum = 0.0;
            let mut scratch = StencilScratch::default();
            let mut st = Vec::new();
            for a in multi_indices(1) {
                for idx in 0..g.len() {
                    derivative_stencil(&g, a, g.unindex(idx), &mut scratch, &mut st);
                    let d: f64 = st.iter().map(|&(n, c)| c * f.values()[n]).sum();
                    sum += d * d;
                }
            }
            (sum * g.cell_volume()).sqrt()
        };
        let n = weighted_sobolev_norm(&f, 1, &p).unwrap();
        assert!((n - direct).abs() <= 1e-14 * direct);
    }

    #[test]
    fn source_norm() {
        let g = SpaceTimeGrid::new(Rect::square(1.0), 201, 201, 3, 1.0).unwrap();
        let p0 = CarlemanParams::new([0.0, -2.5], 0.0, 0.0, 0.1).unwrap();
        assert_eq!(weighted_l2_source_norm(&ScalarField::zeros_spatial(g), &p0).unwrap(), 0.0);
        let ones = ScalarField::spatial_from_fn(g, |_, _| 1.0);
        let n = weighted_l2_source_norm(&ones, &p0).unwrap();
        assert!((n - 2.0).abs() < 0.02, "{n}");
        let p = CarlemanParams::default();
        let f = ScalarField::spatial_from_fn(g, |x, y| x - y * y);
        let twice = ScalarField::spatial_from_fn(g, |x, y| 2.0 * (x - y * y));
        let a = weighted_l2_source_norm(&f, &p).unwrap();
        let b = weighted_l2_source_norm(&twice, &p).unwrap();
        assert_eq!(b, 2.0 * a);
    }

    proptest! {
        #[test]
        fn weight_monotonicity(x in -1.0..1.0f64, y in -1.0..1.0f64,
                               t1 in 0.0..2.0f64, t2 in 0.0..2.0f64, d in 0.01..1.0f64) {
            let p = CarlemanParams::default();
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            prop_assume!(hi - lo > 1e-6);
            prop_assert!(weight(&p, x, y, hi).unwrap() < weight(&p, x, y, lo).unwrap());
            // moving away from x0 along the ray increases the weight
            let (rx, ry) = (x - p.x0[0], y - p.x0[1]);
            let r = rx.hypot(ry);
            let (fx, fy) = (x + d * rx / r, y + d * ry / r);
            prop_assert!(weight(&p, fx, fy, lo).unwrap() > weight(&p, x, y, lo).unwrap());
        }

        #[test]
        fn norms_nest(seed in 0u64..500) {
            let g = omega(5, 5);
            let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let f = ScalarField::from_fn(g, |_, _, _| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            });
            let p = CarlemanParams::default();
            let n0 = weighted_sobolev_norm(&f, 0, &p).unwrap();
            let n1 = weighted_sobolev_norm(&f, 1, &p).unwrap();
            let n2 = weighted_sobolev_norm(&f, 2, &p).unwrap();
            prop_assert!(n0 <= n1 && n1 <= n2);
        }
    }
}
