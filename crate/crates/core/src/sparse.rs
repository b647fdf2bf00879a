//! Triplet assembly, CSR storage and products, a column-scaled CGLS
//! least-squares solver, and a dense normal-equations oracle for tests.

use std::io::Write;

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::cholesky::llt::factor::LltRegularization;
use faer::linalg::solvers::SolveLstsq;
use faer::perm::PermRef;
use faer::sparse::linalg::cholesky::{factorize_symbolic_cholesky, LltRef, SymbolicCholesky, SymmetricOrdering};
use faer::sparse::linalg::solvers::Qr;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Col, Conj, Par, Side};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Entries below this magnitude are dropped when converting to CSR.
const PRUNE_BELOW: f64 = 1e-300;

#[derive(Debug, Clone, Default)]
pub struct TripletMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl TripletMatrix {
    pub fn new(n_rows: usize, n_cols: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            entries: Vec::new(),
        }
    }

    pub fn with_capacity(n_rows: usize, n_cols: usize, nnz: usize) -> Self {
        Self {
            n_rows,
            n_cols,
            entries: Vec::with_capacity(nnz),
        }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        self.entries.push((row, col, value));
    }

    /// Sums duplicates, sorts each row by column and drops zeros.
    pub fn to_csr(&self) -> Result<CsrMatrix> {
        let mut counts = vec![0usize; self.n_rows + 1];
        for &(r, c, _) in &self.entries {
            if r >= self.n_rows || c >= self.n_cols {
                return Err(Error::ShapeMismatch(format!(
                    "entry ({r}, {c}) outside a {}x{} matrix",
                    self.n_rows, self.n_cols
                )));
            }
            counts[r + 1] += 1;
        }
        for r in 0..self.n_rows {
            counts[r + 1] += counts[r];
        }
        // bucket by row, then sort and merge within each row
        let mut next = counts.clone();
        let mut bucket = vec![(0usize, 0.0f64); self.entries.len()];
        for &(r, c, v) in &self.entries {
            bucket[next[r]] = (c, v);
            next[r] += 1;
        }
        let mut offsets = Vec::with_capacity(self.n_rows + 1);
        let mut cols = Vec::with_capacity(self.entries.len());
        let mut vals = Vec::with_capacity(self.entries.len());
        offsets.push(0);
        for r in 0..self.n_rows {
            let row = &mut bucket[counts[r]..counts[r + 1]];
            row.sort_unstable_by_key(|e| e.0);
            let mut iter = row.iter().peekable();
            while let Some(&(c, mut v)) = iter.next() {
                while let Some(&&(c2, v2)) = iter.peek() {
                    if c2 != c {
                        break;
                    }
                    v += v2;
                    iter.next();
                }
                if v.abs() >= PRUNE_BELOW {
                    cols.push(c);
                    vals.push(v);
                }
            }
            offsets.push(cols.len());
        }
        Ok(CsrMatrix {
            n_rows: self.n_rows,
            n_cols: self.n_cols,
            offsets,
            cols,
            vals,
        })
    }
}

/// Row-by-row CSR construction; each row is sorted and merged on push.
#[derive(Debug, Clone)]
pub struct CsrBuilder {
    n_cols: usize,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    scratch: Vec<(usize, f64)>,
}

impl CsrBuilder {
    pub fn new(n_cols: usize) -> Self {
        Self {
            n_cols,
            offsets: vec![0],
            cols: Vec::new(),
            vals: Vec::new(),
            scratch: Vec::new(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Appends a row and returns its index.
    pub fn push_row(&mut self, entries: &[(usize, f64)]) -> Result<usize> {
        self.scratch.clear();
        self.scratch.extend_from_slice(entries);
        self.scratch.sort_unstable_by_key(|e| e.0);
        let mut iter = self.scratch.iter().peekable();
        while let Some(&(c, mut v)) = iter.next() {
            if c >= self.n_cols {
                return Err(Error::ShapeMismatch(format!(
                    "column {c} outside {} columns",
                    self.n_cols
                )));
            }
            while let Some(&&(c2, v2)) = iter.peek() {
                if c2 != c {
                    break;
                }
                v += v2;
                iter.next();
            }
            if v.abs() >= PRUNE_BELOW {
                self.cols.push(c);
                self.vals.push(v);
            }
        }
        self.offsets.push(self.cols.len());
        Ok(self.n_rows() - 1)
    }

    pub fn build(self) -> CsrMatrix {
        CsrMatrix {
            n_rows: self.offsets.len() - 1,
            n_cols: self.n_cols,
            offsets: self.offsets,
            cols: self.cols,
            vals: self.vals,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub offsets: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            offsets: (0..=n).collect(),
            cols: (0..n).collect(),
            vals: vec![1.0; n],
        }
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.offsets[r], self.offsets[r + 1]);
        (&self.cols[a..b], &self.vals[a..b])
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = vec![0.0; self.n_rows];
        self.matvec_into(x, &mut y)?;
        Ok(y)
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        if x.len() != self.n_cols || y.len() != self.n_rows {
            return Err(Error::ShapeMismatch(format!(
                "matvec of a {}x{} matrix with x of length {} into y of length {}",
                self.n_rows,
                self.n_cols,
                x.len(),
                y.len()
            )));
        }
        for (r, out) in y.iter_mut().enumerate() {
            let (a, b) = (self.offsets[r], self.offsets[r + 1]);
            let mut acc = 0.0;
            for p in a..b {
                acc += self.vals[p] * x[self.cols[p]];
            }
            *out = acc;
        }
        Ok(())
    }

    pub fn matvec_transpose(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.n_rows {
            return Err(Error::ShapeMismatch(format!(
                "transpose matvec of a {}x{} matrix with a vector of length {}",
                self.n_rows,
                self.n_cols,
                y.len()
            )));
        }
        let mut x = vec![0.0; self.n_cols];
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            let (a, b) = (self.offsets[r], self.offsets[r + 1]);
            for p in a..b {
                x[self.cols[p]] += self.vals[p] * yr;
            }
        }
        Ok(x)
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.n_cols + 1];
        for &c in &self.cols {
            counts[c + 1] += 1;
        }
        for c in 0..self.n_cols {
            counts[c + 1] += counts[c];
        }
        let mut next = counts.clone();
        let mut cols = vec![0usize; self.nnz()];
        let mut vals = vec![0.0; self.nnz()];
        for r in 0..self.n_rows {
            let (a, b) = (self.offsets[r], self.offsets[r + 1]);
            for p in a..b {
                let c = self.cols[p];
                cols[next[c]] = r;
                vals[next[c]] = self.vals[p];
                next[c] += 1;
            }
        }
        CsrMatrix {
            n_rows: self.n_cols,
            n_cols: self.n_rows,
            offsets: counts,
            cols,
            vals,
        }
    }

    /// Euclidean norm of each column.
    pub fn column_norms(&self) -> Vec<f64> {
        let mut sq = vec![0.0; self.n_cols];
        for (&c, &v) in self.cols.iter().zip(&self.vals) {
            sq[c] += v * v;
        }
        sq.into_iter().map(f64::sqrt).collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_rows, self.n_cols);
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                m[(r, c)] += v;
            }
        }
        m
    }

    /// Matrix Market coordinate format, one-based indices.
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.n_rows, self.n_cols, self.nnz())?;
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                writeln!(w, "{} {} {:.17e}", r + 1, c + 1, v)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LsqMethod {
    /// Conjugate gradients on the normal equations.
    #[default]
    Cgls,
    /// Sparse Cholesky factorization of the scaled normal equations,
    /// followed by iterative refinement on the original residual.
    Cholesky,
    /// Sparse QR factorization of the column-scaled matrix, followed by
    /// iterative refinement.
    Qr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsqOptions {
    pub method: LsqMethod,
    /// Target for `‖Aᵀ(Ax - b)‖ / ‖Aᵀb‖`.
    pub tol: f64,
    /// Defaults to `10 * n_cols` for CGLS and 20 refinement sweeps for
    /// Cholesky.
    pub max_iter: Option<usize>,
    /// Scale columns to unit norm before iterating.
    pub column_scaling: bool,
}

impl Default for LsqOptions {
    fn default() -> Self {
        Self {
            method: LsqMethod::Cgls,
            tol: 1e-10,
            max_iter: None,
            column_scaling: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LsqReport {
    pub iterations: usize,
    /// `‖Aᵀ(Ax - b)‖ / ‖Aᵀb‖` at the returned solution.
    pub relative_residual: f64,
    pub converged: bool,
    /// `‖Ax - b‖`.
    pub residual_norm: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `‖Ax - b‖₂` by CGLS (conjugate gradients on the normal
/// equations, without reorthogonalization) on the column-scaled matrix.
/// `x0` warm-starts the iteration.
///
/// A report with `converged == false` is returned when `max_iter` is hit.
pub fn solve_least_squares(
    a: &CsrMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    opts: &LsqOptions,
) -> Result<(Vec<f64>, LsqReport)> {
    LeastSquares::new(a.clone(), opts.clone())?.solve(b, x0)
}

/// A matrix prepared for repeated solves with different right-hand sides:
/// the transpose, the column scaling and (for [`LsqMethod::Cholesky`]) the
/// factorization are computed once.
pub struct LeastSquares {
    a: CsrMatrix,
    at: CsrMatrix,
    scale: Vec<f64>,
    opts: LsqOptions,
    factor: Option<Factor>,
}

enum Factor {
    Cholesky(NormalFactor),
    Qr(Qr<usize, f64>),
}

impl std::fmt::Debug for LeastSquares {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LeastSquares")
            .field("rows", &self.a.n_rows)
            .field("cols", &self.a.n_cols)
            .field("opts", &self.opts)
            .finish()
    }
}

impl LeastSquares {
    pub fn new(a: CsrMatrix, opts: LsqOptions) -> Result<Self> {
        Self::with_ordering(a, opts, None)
    }

    /// As [`LeastSquares::new`], with an elimination order for the Cholesky
    /// factor (`order[i]` is the column eliminated `i`-th) in place of the
    /// default minimum-degree one.
    pub fn with_ordering(a: CsrMatrix, opts: LsqOptions, ordering: Option<&[usize]>) -> Result<Self> {
        if let Some(o) = ordering {
            if o.len() != a.n_cols {
                return Err(Error::ShapeMismatch("ordering length".into()));
            }
        }
        let scale: Vec<f64> = if opts.column_scaling {
            a.column_norms()
                .into_iter()
                .map(|c| if c > 0.0 { 1.0 / c } else { 1.0 })
                .collect()
        } else {
            vec![1.0; a.n_cols]
        };
        let at = a.transpose();
        let factor = match opts.method {
            LsqMethod::Cgls => None,
            LsqMethod::Cholesky => {
                Some(Factor::Cholesky(factor_normal_equations(&a, &at, &scale, ordering)?))
            }
            LsqMethod::Qr => Some(Factor::Qr(factor_scaled(&a, &scale)?)),
        };
        Ok(Self {
            a,
            at,
            scale,
            opts,
            factor,
        })
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.a
    }

    pub fn options(&self) -> &LsqOptions {
        &self.opts
    }

    /// Diagonal shift the Cholesky factor needed, zero otherwise.
    pub fn shift(&self) -> f64 {
        match &self.factor {
            Some(Factor::Cholesky(f)) => f.shift,
            _ => 0.0,
        }
    }

    pub fn solve(&self, b: &[f64], x0: Option<&[f64]>) -> Result<(Vec<f64>, LsqReport)> {
        let a = &self.a;
        if b.len() != a.n_rows {
            return Err(Error::ShapeMismatch(format!(
                "rhs of length {} for {} rows",
                b.len(),
                a.n_rows
            )));
        }
        if let Some(x0) = x0 {
            if x0.len() != a.n_cols {
                return Err(Error::ShapeMismatch("initial guess length".into()));
            }
        }
        match &self.factor {
            Some(Factor::Cholesky(f)) => self.solve_pcg(f, b, x0),
            Some(f) => self.solve_refined(f, b, x0),
            None => self.solve_cgls(b, x0),
        }
    }

    /// `x ← x + D (AD)⁺ (b - Ax)`, repeated until the gradient criterion
    /// holds or stops improving.
    fn solve_refined(
        &self,
        factor: &Factor,
        b: &[f64],
        x0: Option<&[f64]>,
    ) -> Result<(Vec<f64>, LsqReport)> {
        let (a, at, scale) = (&self.a, &self.at, &self.scale);
        let n = a.n_cols;
        let sweeps = self.opts.max_iter.unwrap_or(20);
        let atb_norm = norm(&at.matvec(b)?);
        let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
        let mut r = vec![0.0; a.n_rows];
        let mut g = vec![0.0; n];
        let mut rhs = Col::<f64>::zeros(n);
        let mut iterations = 0;
        let mut best: Option<(f64, Vec<f64>)> = None;
        loop {
            a.matvec_into(&x, &mut r)?;
            for (ri, bi) in r.iter_mut().zip(b) {
                *ri = bi - *ri;
            }
            at.matvec_into(&r, &mut g)?;
            let rel = if atb_norm == 0.0 { norm(&g) } else { norm(&g) / atb_norm };
            if !rel.is_finite() {
                return Err(Error::NonFinite("least-squares refinement"));
            }
            if best.as_ref().is_none_or(|(r, _)| rel < *r) {
                best = Some((rel, x.clone()));
            } else {
                // refinement stagnated at the rounding floor
                break;
            }
            if rel <= self.opts.tol || iterations >= sweeps {
                break;
            }
            match factor {
                Factor::Cholesky(f) => {
                    for i in 0..n {
                        rhs[i] = g[i] * scale[i];
                    }
                    f.solve_in_place(&mut rhs);
                }
                Factor::Qr(qr) => {
                    let mut full = Col::<f64>::from_fn(r.len(), |i| r[i]);
                    qr.solve_lstsq_in_place(full.as_mat_mut());
                    for i in 0..n {
                        rhs[i] = full[i];
                    }
                }
            }
            for i in 0..n {
                x[i] += rhs[i] * scale[i];
            }
            iterations += 1;
        }
        let (relative_residual, x) = best.expect("at least one sweep is evaluated");
        let mut res = a.matvec(&x)?;
        for (ri, bi) in res.iter_mut().zip(b) {
            *ri -= bi;
        }
        Ok((
            x,
            LsqReport {
                iterations,
                relative_residual,
                converged: relative_residual <= self.opts.tol,
                residual_norm: norm(&res),
            },
        ))
    }

    /// Conjugate gradients on `D AᵀA D z = D Aᵀb`, preconditioned by the
    /// (possibly shifted) Cholesky factor. Unshifted, one step is exact up
    /// to rounding and the rest is refinement.
    fn solve_pcg(
        &self,
        llt: &NormalFactor,
        b: &[f64],
        x0: Option<&[f64]>,
    ) -> Result<(Vec<f64>, LsqReport)> {
        let (a, at, scale) = (&self.a, &self.at, &self.scale);
        let n = a.n_cols;
        let max_iter = self.opts.max_iter.unwrap_or(200);
        let atb_norm = norm(&at.matvec(b)?);
        let rel_of = |g: &[f64]| if atb_norm == 0.0 { norm(g) } else { norm(g) / atb_norm };

        let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
        let mut res = vec![0.0; a.n_rows];
        let mut g = vec![0.0; n];
        let gradient = |x: &[f64], res: &mut [f64], g: &mut [f64]| -> Result<()> {
            a.matvec_into(x, res)?;
            for (ri, bi) in res.iter_mut().zip(b) {
                *ri = bi - *ri;
            }
            at.matvec_into(res, g)
        };
        gradient(&x, &mut res, &mut g)?;
        let mut rel = rel_of(&g);
        let mut best = (rel, x.clone());

        let precondition = |r: &[f64]| -> Vec<f64> {
            let mut c = Col::<f64>::from_fn(n, |i| r[i]);
            llt.solve_in_place(&mut c);
            (0..n).map(|i| c[i]).collect()
        };
        // scaled gradient
        let mut r: Vec<f64> = (0..n).map(|i| g[i] * scale[i]).collect();
        let mut zv = precondition(&r);
        let mut p = zv.clone();
        let mut rz = dot(&r, &zv);
        let mut q = vec![0.0; a.n_rows];
        let mut dp = vec![0.0; n];
        let mut iterations = 0;
        // at least one correction: a warm start can meet the relative
        // gradient test while still far from the new minimizer
        while (iterations == 0 || rel > self.opts.tol) && iterations < max_iter && rz > 0.0 {
            for i in 0..n {
                dp[i] = p[i] * scale[i];
            }
            a.matvec_into(&dp, &mut q)?;
            let qq = dot(&q, &q);
            if qq == 0.0 {
                break;
            }
            let alpha = rz / qq;
            for i in 0..n {
                x[i] += alpha * dp[i];
            }
            iterations += 1;
            // true gradient each step: the recurrence drifts at this conditioning
            gradient(&x, &mut res, &mut g)?;
            rel = rel_of(&g);
            if !rel.is_finite() {
                return Err(Error::NonFinite("least-squares iteration"));
            }
            if rel < best.0 || iterations == 1 {
                best = (rel, x.clone());
            }
            for i in 0..n {
                r[i] = g[i] * scale[i];
            }
            zv = precondition(&r);
            let rz_new = dot(&r, &zv);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = zv[i] + beta * p[i];
            }
        }
        let (relative_residual, x) = best;
        a.matvec_into(&x, &mut res)?;
        for (ri, bi) in res.iter_mut().zip(b) {
            *ri -= bi;
        }
        Ok((
            x,
            LsqReport {
                iterations,
                relative_residual,
                converged: relative_residual <= self.opts.tol,
                residual_norm: norm(&res),
            },
        ))
    }

    fn solve_cgls(&self, b: &[f64], x0: Option<&[f64]>) -> Result<(Vec<f64>, LsqReport)> {
        let (a, at, scale, opts) = (&self.a, &self.at, &self.scale, &self.opts);
        let n = a.n_cols;
        let max_iter = opts.max_iter.unwrap_or(10 * n.max(1));

        // x = scale * z
        let mut z: Vec<f64> = match x0 {
            Some(x0) => x0.iter().zip(scale).map(|(x, s)| x / s).collect(),
            None => vec![0.0; n],
        };
        let mut x: Vec<f64> = z.iter().zip(scale).map(|(z, s)| z * s).collect();
        let mut r = a.matvec(&x)?;
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        let atb_norm = norm(&at.matvec(b)?);
        let grad_rel = |atr: &[f64]| -> f64 {
            if atb_norm == 0.0 {
                norm(atr)
            } else {
                norm(atr) / atb_norm
            }
        };

        let mut atr = at.matvec(&r)?;
        let mut s: Vec<f64> = atr.iter().zip(scale).map(|(g, d)| g * d).collect();
        let mut p = s.clone();
        let mut gamma = dot(&s, &s);
        let mut q = vec![0.0; a.n_rows];
        let mut ap = vec![0.0; n];
        let mut rel = grad_rel(&atr);
        let mut iterations = 0;

        while rel > opts.tol && iterations < max_iter && gamma > 0.0 {
            for (v, (pi, d)) in ap.iter_mut().zip(p.iter().zip(scale)) {
                *v = pi * d;
            }
            a.matvec_into(&ap, &mut q)?;
            let qq = dot(&q, &q);
            if qq == 0.0 {
                break;
            }
            let alpha = gamma / qq;
            for (zi, pi) in z.iter_mut().zip(&p) {
                *zi += alpha * pi;
            }
            for (ri, qi) in r.iter_mut().zip(&q) {
                *ri -= alpha * qi;
            }
            at.matvec_into(&r, &mut atr)?;
            for ((si, g), d) in s.iter_mut().zip(&atr).zip(scale) {
                *si = g * d;
            }
            let gamma_new = dot(&s, &s);
            let beta = gamma_new / gamma;
            gamma = gamma_new;
            for (pi, si) in p.iter_mut().zip(&s) {
                *pi = si + beta * *pi;
            }
            iterations += 1;
            rel = grad_rel(&atr);
            if !rel.is_finite() {
                return Err(Error::NonFinite("least-squares iteration"));
            }
        }

        for ((xi, zi), d) in x.iter_mut().zip(&z).zip(scale) {
            *xi = zi * d;
        }
        // recompute the residual from scratch for the report
        let mut res = a.matvec(&x)?;
        for (ri, bi) in res.iter_mut().zip(b) {
            *ri -= bi;
        }
        let relative_residual = grad_rel(&at.matvec(&res)?);
        Ok((
            x,
            LsqReport {
                iterations,
                relative_residual,
                converged: relative_residual <= opts.tol,
                residual_norm: norm(&res),
            },
        ))
    }
}

fn factor_scaled(a: &CsrMatrix, scale: &[f64]) -> Result<Qr<usize, f64>> {
    if a.n_rows < a.n_cols {
        return Err(Error::ShapeMismatch("QR needs at least as many rows as columns".into()));
    }
    let mut triplets = Vec::with_capacity(a.nnz());
    for r in 0..a.n_rows {
        let (cols, vals) = a.row(r);
        for (&c, &v) in cols.iter().zip(vals) {
            triplets.push(Triplet::new(r, c, v * scale[c]));
        }
    }
    let m = SparseColMat::<usize, f64>::try_new_from_triplets(a.n_rows, a.n_cols, &triplets)
        .map_err(|e| Error::InvalidParameter(format!("scaled matrix: {e:?}")))?;
    m.sp_qr().map_err(|e| Error::InvalidParameter(format!("sparse QR: {e:?}")))
}

/// Supernodal Cholesky factor of `D AᵀA D + σI`; with `σ > 0` it only
/// preconditions.
struct NormalFactor {
    symbolic: SymbolicCholesky<usize>,
    values: Vec<f64>,
    shift: f64,
}

impl NormalFactor {
    fn solve_in_place(&self, rhs: &mut Col<f64>) {
        let mut mem = MemBuffer::new(self.symbolic.solve_in_place_scratch::<f64>(1, Par::Seq));
        LltRef::<usize, f64>::new(&self.symbolic, &self.values).solve_in_place_with_conj(
            Conj::No,
            rhs.as_mat_mut(),
            Par::Seq,
            MemStack::new(&mut mem),
        );
    }
}

/// Upper triangle of `D AᵀA D`, factored with the given elimination order
/// or a minimum-degree one. When rounding makes the factorization break
/// down, the smallest shift `σI` (relative to the largest diagonal entry)
/// that succeeds is used.
fn factor_normal_equations(
    a: &CsrMatrix,
    at: &CsrMatrix,
    scale: &[f64],
    ordering: Option<&[usize]>,
) -> Result<NormalFactor> {
    let n = a.n_cols;
    let mut acc = vec![0.0; n];
    let mut touched: Vec<usize> = Vec::new();
    let mut mark = vec![usize::MAX; n];
    let mut triplets = Vec::new();
    for j in 0..n {
        let (rows, avals) = at.row(j);
        for (&r, &arj) in rows.iter().zip(avals) {
            let (cols, vals) = a.row(r);
            for (&c, &arc) in cols.iter().zip(vals) {
                if c < j {
                    continue;
                }
                if mark[c] != j {
                    mark[c] = j;
                    acc[c] = 0.0;
                    touched.push(c);
                }
                acc[c] += arj * arc;
            }
        }
        for &c in &touched {
            // row j, column c >= j: upper triangle
            triplets.push(Triplet::new(j, c, acc[c] * scale[j] * scale[c]));
        }
        touched.clear();
    }
    let mut m = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
        .map_err(|e| Error::InvalidParameter(format!("normal matrix: {e:?}")))?;
    drop(triplets);
    let oom = |what: &str| Error::InvalidParameter(format!("Cholesky factor: out of memory ({what})"));

    let inverse: Option<(Vec<usize>, Vec<usize>)> = ordering.map(|fwd| {
        let mut inv = vec![0; n];
        for (pos, &c) in fwd.iter().enumerate() {
            inv[c] = pos;
        }
        (fwd.to_vec(), inv)
    });
    let ord = match &inverse {
        Some((fwd, inv)) => SymmetricOrdering::Custom(PermRef::new_checked(fwd, inv, n)),
        None => SymmetricOrdering::Amd,
    };
    let symbolic = factorize_symbolic_cholesky(m.symbolic(), Side::Upper, ord, Default::default())
        .map_err(|_| oom("symbolic"))?;

    let mut diag = Vec::with_capacity(n);
    let mut diag_max = 0.0f64;
    {
        let col_ptr = m.symbolic().col_ptr().to_vec();
        let row_idx = m.symbolic().row_idx().to_vec();
        let vals = m.val();
        for j in 0..n {
            for p in col_ptr[j]..col_ptr[j + 1] {
                if row_idx[p] == j {
                    diag.push((p, vals[p]));
                    diag_max = diag_max.max(vals[p]);
                }
            }
        }
    }
    if diag.len() != n || diag_max == 0.0 {
        return Err(Error::Singular);
    }
    let mut values = Vec::new();
    values.try_reserve_exact(symbolic.len_val()).map_err(|_| oom("numeric"))?;
    values.resize(symbolic.len_val(), 0.0);
    let mut mem = MemBuffer::try_new(symbolic.factorize_numeric_llt_scratch::<f64>(Par::Seq, Default::default()))
        .map_err(|_| oom("workspace"))?;
    for shift in [0.0, 1e-14, 1e-13, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8] {
        let vals = m.val_mut();
        for &(p, d) in &diag {
            vals[p] = d + shift * diag_max;
        }
        let ok = symbolic
            .factorize_numeric_llt::<f64>(
                &mut values,
                m.as_ref(),
                Side::Upper,
                LltRegularization::default(),
                Par::Seq,
                MemStack::new(&mut mem),
                Default::default(),
            )
            .is_ok();
        if ok {
            return Ok(NormalFactor {
                symbolic,
                values,
                shift: shift * diag_max,
            });
        }
    }
    Err(Error::Singular)
}

/// Nested-dissection elimination order for unknowns on a lexicographic
/// `dims[0] × dims[1] × dims[2]` box (first index fastest) whose normal
/// equations couple nodes up to `reach` apart along each axis.
pub fn nested_dissection(dims: [usize; 3], reach: usize) -> Vec<usize> {
    fn recurse(lo: [usize; 3], hi: [usize; 3], dims: [usize; 3], reach: usize, out: &mut Vec<usize>) {
        let ext = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
        let volume = ext[0] * ext[1] * ext[2];
        if volume == 0 {
            return;
        }
        let axis = (0..3).max_by_key(|&d| ext[d]).unwrap();
        if volume <= 64 || ext[axis] <= 2 * reach + 1 {
            for k in lo[2]..hi[2] {
                for j in lo[1]..hi[1] {
                    for i in lo[0]..hi[0] {
                        out.push(i + dims[0] * (j + dims[1] * k));
                    }
                }
            }
            return;
        }
        let mid = lo[axis] + (ext[axis] - reach) / 2;
        let (mut left_hi, mut right_lo) = (hi, lo);
        left_hi[axis] = mid;
        right_lo[axis] = mid + reach;
        recurse(lo, left_hi, dims, reach, out);
        recurse(right_lo, hi, dims, reach, out);
        let (mut sep_lo, mut sep_hi) = (lo, hi);
        sep_lo[axis] = mid;
        sep_hi[axis] = mid + reach;
        recurse(sep_lo, sep_hi, dims, reach, out);
    }
    let mut out = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
    recurse([0; 3], dims, dims, reach, &mut out);
    out
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Maximum column count accepted by the dense oracle.
pub const DENSE_ORACLE_MAX_COLS: usize = 2000;

/// Solves `AᵀA x = Aᵀb` densely after column equilibration: Cholesky,
/// falling back to LU with full pivoting when the normal matrix is not
/// numerically positive definite.
pub fn dense_oracle_solve(a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if a.n_cols > DENSE_ORACLE_MAX_COLS {
        return Err(Error::InvalidParameter(format!(
            "dense oracle limited to {DENSE_ORACLE_MAX_COLS} columns, got {}",
            a.n_cols
        )));
    }
    if b.len() != a.n_rows {
        return Err(Error::ShapeMismatch("rhs length".into()));
    }
    // unit column norms first; otherwise the Carleman weights alone push
    // the normal matrix past double precision
    let mut dense = a.to_dense();
    let scale: Vec<f64> = (0..a.n_cols)
        .map(|j| {
            let n = dense.column(j).norm();
            if n > 0.0 {
                1.0 / n
            } else {
                1.0
            }
        })
        .collect();
    for (j, s) in scale.iter().enumerate() {
        dense.column_mut(j).scale_mut(*s);
    }
    let normal = dense.transpose() * &dense;
    let rhs = dense.transpose() * DVector::from_column_slice(b);
    let z = match normal.clone().cholesky() {
        Some(chol) => chol.solve(&rhs),
        None => normal.full_piv_lu().solve(&rhs).ok_or(Error::Singular)?,
    };
    Ok(z.iter().zip(&scale).map(|(z, s)| z * s).collect())
}
