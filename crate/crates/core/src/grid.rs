//! Uniform space-time grids, node classification and the second-order
//! stencils shared by the forward solver and the inverse assembler.
//!
//! Flat storage is row-major with `x` fastest, then `y`, then `t`:
//! `index = i + nx * (j + ny * k)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle `[x_min, x_max] x [y_min, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    pub const fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Self {
        Self {
            x_min,
            x_max,
            y_min,
            y_max,
        }
    }

    /// The square `(-half, half)^2`.
    pub const fn square(half: f64) -> Self {
        Self::new(-half, half, -half, half)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Closed-set membership.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
}

/// Tag of a node in the space-time box.
///
/// Spatial boundary wins over the time layers, so the four tags partition
/// the node set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeClass {
    Interior,
    SpatialBoundary,
    InitialLayer,
    FinalLayer,
}

/// Uniform tensor grid over a rectangle times `[0, T]` with square cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeGrid {
    pub bounds: Rect,
    pub t_final: f64,
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
    pub dx: f64,
    pub dt: f64,
}

const SQUARE_CELL_RTOL: f64 = 1e-12;

impl SpaceTimeGrid {
    pub fn new(bounds: Rect, nx: usize, ny: usize, nt: usize, t_final: f64) -> Result<Self> {
        if nx < 3 || ny < 3 || nt < 3 {
            return Err(Error::InvalidGrid(format!(
                "need at least 3 nodes per axis, got {nx}x{ny}x{nt}"
            )));
        }
        let finite = [bounds.x_min, bounds.x_max, bounds.y_min, bounds.y_max, t_final]
            .iter()
            .all(|v| v.is_finite());
        if !finite || bounds.width() <= 0.0 || bounds.height() <= 0.0 || t_final <= 0.0 {
            return Err(Error::InvalidGrid(format!(
                "degenerate extents {bounds:?}, T = {t_final}"
            )));
        }
        let dx = bounds.width() / (nx - 1) as f64;
        let dy = bounds.height() / (ny - 1) as f64;
        if ((dx - dy) / dx).abs() > SQUARE_CELL_RTOL {
            return Err(Error::InvalidGrid(format!(
                "non-square cells: dx = {dx}, dy = {dy}"
            )));
        }
        Ok(Self {
            bounds,
            t_final,
            nx,
            ny,
            nt,
            dx,
            dt: t_final / (nt - 1) as f64,
        })
    }

    /// Grid with spacing as close as possible to `dx` and the fewest time
    /// layers keeping `dt / dx <= cfl`.
    pub fn with_spacing(bounds: Rect, dx: f64, cfl: f64, t_final: f64) -> Result<Self> {
        if !(dx > 0.0 && cfl > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "spacing {dx} and CFL target {cfl} must be positive"
            )));
        }
        let nx = (bounds.width() / dx).round() as usize + 1;
        let ny = (bounds.height() / dx).round() as usize + 1;
        let actual_dx = bounds.width() / (nx.max(2) - 1) as f64;
        // Slack keeps exact ratios (e.g. 0.44 * 0.05) from gaining a layer.
        let layers = (t_final / (cfl * actual_dx) - 1e-9).ceil().max(2.0) as usize;
        Self::new(bounds, nx, ny, layers + 1, t_final)
    }

    pub fn cfl_ratio(&self) -> f64 {
        self.dt / self.dx
    }

    pub fn spatial_len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nt
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.nx * (j + self.ny * k)
    }

    /// Inverse of [`SpaceTimeGrid::index`].
    #[inline]
    pub fn unindex(&self, idx: usize) -> (usize, usize, usize) {
        let i = idx % self.nx;
        let rest = idx / self.nx;
        (i, rest % self.ny, rest / self.ny)
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        self.bounds.x_min + i as f64 * self.dx
    }

    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        self.bounds.y_min + j as f64 * self.dx
    }

    #[inline]
    pub fn t(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn cell_volume(&self) -> f64 {
        self.dx * self.dx * self.dt
    }

    fn check_index(&self, i: usize, j: usize, k: usize) -> Result<()> {
        if i >= self.nx || j >= self.ny || k >= self.nt {
            return Err(Error::IndexOutOfRange {
                i,
                j,
                k,
                nx: self.nx,
                ny: self.ny,
                nt: self.nt,
            });
        }
        Ok(())
    }

    #[inline]
    pub fn is_spatial_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i == self.nx - 1 || j == self.ny - 1
    }

    pub fn classify(&self, i: usize, j: usize, k: usize) -> Result<NodeClass> {
        self.check_index(i, j, k)?;
        Ok(if self.is_spatial_boundary(i, j) {
            NodeClass::SpatialBoundary
        } else if k == 0 {
            NodeClass::InitialLayer
        } else if k == self.nt - 1 {
            NodeClass::FinalLayer
        } else {
            NodeClass::Interior
        })
    }

    /// Node index `(i, j)` of the point `(x, y)` when it sits on the lattice.
    pub fn locate(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fi = (x - self.bounds.x_min) / self.dx;
        let fj = (y - self.bounds.y_min) / self.dx;
        let (ri, rj) = (fi.round(), fj.round());
        if (fi - ri).abs() > 1e-6 || (fj - rj).abs() > 1e-6 {
            return None;
        }
        if ri < 0.0 || rj < 0.0 || ri as usize >= self.nx || rj as usize >= self.ny {
            return None;
        }
        Some((ri as usize, rj as usize))
    }
}

/// Values of a function on a grid: either all `nt` layers or a single
/// spatial slice.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: SpaceTimeGrid,
    layers: usize,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: SpaceTimeGrid) -> Self {
        Self {
            grid,
            layers: grid.nt,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn zeros_spatial(grid: SpaceTimeGrid) -> Self {
        Self {
            grid,
            layers: 1,
            values: vec![0.0; grid.spatial_len()],
        }
    }

    pub fn from_values(grid: SpaceTimeGrid, values: Vec<f64>) -> Result<Self> {
        let layers = if values.len() == grid.len() {
            grid.nt
        } else if values.len() == grid.spatial_len() {
            1
        } else {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {}x{}x{} grid",
                values.len(),
                grid.nx,
                grid.ny,
                grid.nt
            )));
        };
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("field values"));
        }
        Ok(Self {
            grid,
            layers,
            values,
        })
    }

    pub fn from_fn(grid: SpaceTimeGrid, mut f: impl FnMut(f64, f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for k in 0..grid.nt {
            for j in 0..grid.ny {
                for i in 0..grid.nx {
                    values.push(f(grid.x(i), grid.y(j), grid.t(k)));
                }
            }
        }
        Self {
            grid,
            layers: grid.nt,
            values,
        }
    }

    pub fn spatial_from_fn(grid: SpaceTimeGrid, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.spatial_len());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                values.push(f(grid.x(i), grid.y(j)));
            }
        }
        Self {
            grid,
            layers: 1,
            values,
        }
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn is_spatial(&self) -> bool {
        self.layers == 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.grid.index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, value: f64) {
        let idx = self.grid.index(i, j, k);
        self.values[idx] = value;
    }

    /// Copy of time layer `k` as a spatial field.
    pub fn layer(&self, k: usize) -> Result<ScalarField> {
        if k >= self.layers {
            return Err(Error::IndexOutOfRange {
                i: 0,
                j: 0,
                k,
                nx: self.grid.nx,
                ny: self.grid.ny,
                nt: self.layers,
            });
        }
        let n = self.grid.spatial_len();
        Ok(Self {
            grid: self.grid,
            layers: 1,
            values: self.values[k * n..(k + 1) * n].to_vec(),
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn check_finite(&self, what: &'static str) -> Result<()> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what))
        }
    }
}

/// Five-point Laplacian at `(i, j, k)`.
pub fn laplacian_stencil(field: &ScalarField, i: usize, j: usize, k: usize) -> Result<f64> {
    let g = field.grid();
    g.check_index(i, j, k.min(g.nt - 1))?;
    if k >= field.layers() {
        return Err(Error::StencilUnavailable {
            i,
            j,
            k,
            reason: "time layer not stored",
        });
    }
    if g.is_spatial_boundary(i, j) {
        return Err(Error::StencilUnavailable {
            i,
            j,
            k,
            reason: "spatial boundary node lacks neighbours",
        });
    }
    Ok(laplacian_unchecked(field.values(), g, i, j, k))
}

/// Centered second time difference at `(i, j, k)`.
pub fn dtt_stencil(field: &ScalarField, i: usize, j: usize, k: usize) -> Result<f64> {
    let g = field.grid();
    g.check_index(i, j, k)?;
    if field.is_spatial() || k == 0 || k == g.nt - 1 {
        return Err(Error::StencilUnavailable {
            i,
            j,
            k,
            reason: "first or last time layer",
        });
    }
    let v = field.values();
    let c = g.index(i, j, k);
    let n = g.spatial_len();
    Ok((v[c + n] - 2.0 * v[c] + v[c - n]) / (g.dt * g.dt))
}

#[inline]
pub(crate) fn laplacian_unchecked(v: &[f64], g: &SpaceTimeGrid, i: usize, j: usize, k: usize) -> f64 {
    let c = g.index(i, j, k);
    let nx = g.nx;
    (v[c + 1] + v[c - 1] + v[c + nx] + v[c - nx] - 4.0 * v[c]) / (g.dx * g.dx)
}

/// Spatial gradient by centered differences, one-sided (second order) on
/// the spatial boundary.
#[inline]
pub(crate) fn gradient(v: &[f64], g: &SpaceTimeGrid, i: usize, j: usize, k: usize) -> [f64; 2] {
    let c = g.index(i, j, k);
    [
        first_derivative(v, c, 1, i, g.nx, g.dx),
        first_derivative(v, c, g.nx, j, g.ny, g.dx),
    ]
}

/// First derivative along an axis with stride `stride`, position `pos` of
/// `n` nodes and spacing `h`.
#[inline]
pub(crate) fn first_derivative(v: &[f64], c: usize, stride: usize, pos: usize, n: usize, h: f64) -> f64 {
    if pos == 0 {
        (-3.0 * v[c] + 4.0 * v[c + stride] - v[c + 2 * stride]) / (2.0 * h)
    } else if pos == n - 1 {
        (3.0 * v[c] - 4.0 * v[c - stride] + v[c - 2 * stride]) / (2.0 * h)
    } else {
        (v[c + stride] - v[c - stride]) / (2.0 * h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_grid(n: usize, nt: usize) -> SpaceTimeGrid {
        SpaceTimeGrid::new(Rect::square(1.0), n, n, nt, 2.0).unwrap()
    }

    #[test]
    fn paper_spacing() {
        let g = SpaceTimeGrid::with_spacing(Rect::square(1.0), 0.03, 0.44, 2.0).unwrap();
        assert_eq!(g.nx, 68);
        assert!((g.dx - 0.03).abs() < 5e-4);
        assert!((g.dt - 0.0132).abs() < 2e-4);
        assert!(g.cfl_ratio() <= 0.44 + 1e-12);
    }

    #[test]
    fn smallest_legal_grid() {
        let g = unit_grid(3, 3);
        assert_eq!(g.dx, 1.0);
        assert_eq!(g.dt, 1.0);
        assert_eq!(g.cfl_ratio(), 1.0);
    }

    #[test]
    fn padded_domain_accepted() {
        let g = SpaceTimeGrid::new(Rect::square(4.0), 268, 268, 152, 2.0).unwrap();
        assert!((g.dx - 0.03).abs() < 1e-3);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(SpaceTimeGrid::new(Rect::square(1.0), 2, 3, 3, 1.0).is_err());
        assert!(SpaceTimeGrid::new(Rect::new(-1.0, 1.0, -1.0, 2.0), 5, 5, 5, 1.0).is_err());
        assert!(SpaceTimeGrid::new(Rect::new(1.0, 1.0, 0.0, 0.0), 5, 5, 5, 1.0).is_err());
        assert!(SpaceTimeGrid::new(Rect::square(1.0), 5, 5, 5, 0.0).is_err());
    }

    #[test]
    fn cfl_quotient() {
        // 0.05 -> 41 nodes on [-1, 1]; 0.022 -> T = 0.022 * 10
        let g = SpaceTimeGrid::new(Rect::square(1.0), 41, 41, 11, 0.22).unwrap();
        assert!((g.cfl_ratio() - 0.44).abs() < 1e-12);
    }

    #[test]
    fn cfl_invariant_under_joint_refinement() {
        let a = SpaceTimeGrid::new(Rect::square(1.0), 11, 11, 6, 0.8).unwrap();
        let b = SpaceTimeGrid::new(Rect::square(1.0), 21, 21, 11, 0.8).unwrap();
        assert!((a.cfl_ratio() - b.cfl_ratio()).abs() < 1e-12);
    }

    #[test]
    fn classification() {
        let g = unit_grid(5, 6);
        assert_eq!(g.classify(0, 2, 3).unwrap(), NodeClass::SpatialBoundary);
        assert_eq!(g.classify(2, 2, 0).unwrap(), NodeClass::InitialLayer);
        assert_eq!(g.classify(2, 2, 5).unwrap(), NodeClass::FinalLayer);
        assert_eq!(g.classify(2, 2, 3).unwrap(), NodeClass::Interior);
        assert_eq!(g.classify(0, 0, 0).unwrap(), NodeClass::SpatialBoundary);
        assert!(g.classify(5, 0, 0).is_err());
        assert!(g.classify(0, 0, 6).is_err());
    }

    #[test]
    fn classification_counts() {
        for (nx, ny, nt) in [(3, 3, 3), (5, 7, 4), (6, 4, 9)] {
            let g = SpaceTimeGrid::new(
                Rect::new(0.0, (nx - 1) as f64, 0.0, (ny - 1) as f64),
                nx,
                ny,
                nt,
                1.0,
            )
            .unwrap();
            let mut counts = std::collections::HashMap::new();
            for k in 0..nt {
                for j in 0..ny {
                    for i in 0..nx {
                        *counts.entry(g.classify(i, j, k).unwrap()).or_insert(0usize) += 1;
                    }
                }
            }
            let inner = (nx - 2) * (ny - 2);
            assert_eq!(counts[&NodeClass::SpatialBoundary], (nx * ny - inner) * nt);
            assert_eq!(counts[&NodeClass::InitialLayer], inner);
            assert_eq!(counts[&NodeClass::FinalLayer], inner);
            assert_eq!(counts.get(&NodeClass::Interior).copied().unwrap_or(0), inner * (nt - 2));
        }
    }

    #[test]
    fn index_roundtrip() {
        let g = SpaceTimeGrid::new(Rect::new(0.0, 4.0, 0.0, 2.0), 5, 3, 4, 1.0).unwrap();
        for idx in 0..g.len() {
            let (i, j, k) = g.unindex(idx);
            assert_eq!(g.index(i, j, k), idx);
        }
        assert_eq!(g.index(1, 0, 0), 1);
        assert_eq!(g.index(0, 1, 0), 5);
        assert_eq!(g.index(0, 0, 1), 15);
    }

    #[test]
    fn laplacian_exact_on_quadratics() {
        // dx = 0.1
        let g = SpaceTimeGrid::new(Rect::square(1.0), 21, 21, 3, 1.0).unwrap();
        let constant = ScalarField::from_fn(g, |_, _, _| 3.5);
        let xx = ScalarField::from_fn(g, |x, _, _| x * x);
        let rr = ScalarField::from_fn(g, |x, y, _| x * x + y * y);
        for (i, j) in [(1, 1), (10, 10), (19, 5)] {
            assert!(laplacian_stencil(&constant, i, j, 1).unwrap().abs() < 1e-10);
            assert!((laplacian_stencil(&xx, i, j, 1).unwrap() - 2.0).abs() < 1e-10);
            assert!((laplacian_stencil(&rr, i, j, 2).unwrap() - 4.0).abs() < 1e-10);
        }
        assert!(laplacian_stencil(&xx, 0, 3, 1).is_err());
    }

    #[test]
    fn dtt_exact_on_quadratics() {
        let g = SpaceTimeGrid::new(Rect::square(1.0), 5, 5, 11, 1.0).unwrap();
        let constant = ScalarField::from_fn(g, |_, _, _| -1.0);
        let tt = ScalarField::from_fn(g, |_, _, t| t * t);
        let lin = ScalarField::from_fn(g, |_, _, t| t);
        for k in 1..10 {
            assert!(dtt_stencil(&constant, 2, 2, k).unwrap().abs() < 1e-12);
            assert!((dtt_stencil(&tt, 2, 2, k).unwrap() - 2.0).abs() < 1e-10);
            assert!(dtt_stencil(&lin, 2, 2, k).unwrap().abs() < 1e-9);
        }
        assert!(dtt_stencil(&tt, 2, 2, 0).is_err());
        assert!(dtt_stencil(&tt, 2, 2, 10).is_err());
    }

    #[test]
    fn layer_extraction() {
        let g = unit_grid(4, 5);
        let f = ScalarField::from_fn(g, |x, _, t| t * x + 5.0);
        let p = f.layer(0).unwrap();
        assert!(p.is_spatial());
        assert_eq!(p.values().len(), 16);
        assert!(p.values().iter().all(|&v| v == 5.0));
        assert!(f.layer(5).is_err());
    }

    #[test]
    fn from_values_rejects_bad_input() {
        let g = unit_grid(3, 3);
        assert!(ScalarField::from_values(g, vec![0.0; 5]).is_err());
        assert!(ScalarField::from_values(g, vec![f64::NAN; 9]).is_err());
        assert!(ScalarField::from_values(g, vec![0.0; 27]).is_ok());
    }

    #[test]
    fn locate_on_lattice() {
        let g = SpaceTimeGrid::new(Rect::square(4.0), 161, 161, 3, 1.0).unwrap();
        assert_eq!(g.locate(-1.0, 1.0), Some((60, 100)));
        assert_eq!(g.locate(-1.01, 1.0), None);
        assert_eq!(g.locate(5.0, 0.0), None);
    }
}
