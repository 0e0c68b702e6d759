//! Compressed sparse row matrices and the linear solvers used by the time stepper.

use serde::{Deserialize, Serialize};

use crate::domain::dot;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from per-row `(column, value)` lists; duplicates are summed.
    pub fn from_rows(n: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                if last == Some(c) {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_rows(n, (0..n).map(|i| vec![(i, 1.0)]).collect())
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            let mut s = 0.0;
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[p] * x[self.col_idx[p]];
            }
            *yi = s;
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        y
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.n];
        for i in 0..self.n {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                rows[self.col_idx[p]].push((i, self.values[p]));
            }
        }
        Self::from_rows(self.n, rows)
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &CsrMatrix, b: f64) -> CsrMatrix {
        let rows = (0..self.n)
            .map(|i| {
                let mut row: Vec<(usize, f64)> = (self.row_ptr[i]..self.row_ptr[i + 1])
                    .map(|p| (self.col_idx[p], a * self.values[p]))
                    .collect();
                row.extend((other.row_ptr[i]..other.row_ptr[i + 1]).map(|p| (other.col_idx[p], b * other.values[p])));
                row
            })
            .collect();
        Self::from_rows(self.n, rows)
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[(i, self.col_idx[p])] += self.values[p];
            }
        }
        m
    }

    fn bandwidth(&self) -> usize {
        let mut bw = 0;
        for i in 0..self.n {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                bw = bw.max(i.abs_diff(self.col_idx[p]));
            }
        }
        bw
    }
}

/// Incomplete LU factorization with zero fill-in.
#[derive(Debug, Clone)]
pub struct Ilu0 {
    lu: CsrMatrix,
    diag: Vec<usize>,
}

impl Ilu0 {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        let mut lu = a.clone();
        let n = a.n;
        let mut diag = vec![usize::MAX; n];
        for (i, d) in diag.iter_mut().enumerate() {
            for p in lu.row_ptr[i]..lu.row_ptr[i + 1] {
                if lu.col_idx[p] == i {
                    *d = p;
                }
            }
            if *d == usize::MAX {
                return Err(Error::invalid("matrix", format!("row {i} has no diagonal entry")));
            }
        }
        let mut pos = vec![usize::MAX; n];
        for i in 0..n {
            let (start, end) = (lu.row_ptr[i], lu.row_ptr[i + 1]);
            for p in start..end {
                pos[lu.col_idx[p]] = p;
            }
            for p in start..end {
                let k = lu.col_idx[p];
                if k >= i {
                    break;
                }
                let pivot = lu.values[diag[k]];
                if pivot == 0.0 {
                    return Err(Error::invalid("matrix", "zero pivot in ILU(0)"));
                }
                let lik = lu.values[p] / pivot;
                lu.values[p] = lik;
                for q in diag[k] + 1..lu.row_ptr[k + 1] {
                    let j = lu.col_idx[q];
                    let target = pos[j];
                    if target != usize::MAX {
                        lu.values[target] -= lik * lu.values[q];
                    }
                }
            }
            for p in start..end {
                pos[lu.col_idx[p]] = usize::MAX;
            }
        }
        Ok(Self { lu, diag })
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let lu = &self.lu;
        for i in 0..lu.n {
            let mut s = x[i];
            for p in lu.row_ptr[i]..self.diag[i] {
                s -= lu.values[p] * x[lu.col_idx[p]];
            }
            x[i] = s;
        }
        for i in (0..lu.n).rev() {
            let mut s = x[i];
            for p in self.diag[i] + 1..lu.row_ptr[i + 1] {
                s -= lu.values[p] * x[lu.col_idx[p]];
            }
            x[i] = s / lu.values[self.diag[i]];
        }
    }
}

/// Dense banded LU without pivoting (the stepping matrices are diagonally dominant
/// for moderate cell Peclet numbers).
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    bw: usize,
    // row i holds columns i-bw ..= i+bw
    band: Vec<f64>,
}

impl BandedLu {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        let n = a.n;
        let bw = a.bandwidth();
        let width = 2 * bw + 1;
        let mut band = vec![0.0; n * width];
        for i in 0..n {
            for p in a.row_ptr[i]..a.row_ptr[i + 1] {
                let j = a.col_idx[p];
                band[i * width + (j + bw - i)] += a.values[p];
            }
        }
        let at = |i: usize, j: usize| i * width + (j + bw - i);
        for k in 0..n {
            let pivot = band[at(k, k)];
            if pivot.abs() < 1e-300 {
                return Err(Error::invalid("matrix", "zero pivot in banded LU"));
            }
            let iend = (k + bw).min(n - 1);
            for i in k + 1..=iend {
                let l = band[at(i, k)] / pivot;
                band[at(i, k)] = l;
                if l != 0.0 {
                    for j in k + 1..=(k + bw).min(n - 1) {
                        band[at(i, j)] -= l * band[at(k, j)];
                    }
                }
            }
        }
        Ok(Self { n, bw, band })
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let (n, bw) = (self.n, self.bw);
        let width = 2 * bw + 1;
        let at = |i: usize, j: usize| i * width + (j + bw - i);
        for i in 0..n {
            let mut s = x[i];
            for j in i.saturating_sub(bw)..i {
                s -= self.band[at(i, j)] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..=(i + bw).min(n - 1) {
                s -= self.band[at(i, j)] * x[j];
            }
            x[i] = s / self.band[at(i, i)];
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LinearSolverKind {
    /// Right-preconditioned BiCGStab with an ILU(0) preconditioner.
    #[default]
    BicgstabIlu0,
    /// Direct banded factorization, reused across steps.
    BandedLu,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub kind: LinearSolverKind,
    pub rel_tol: f64,
    /// Iteration cap; `None` means `10 * n`.
    pub max_iter: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            kind: LinearSolverKind::BicgstabIlu0,
            rel_tol: 1e-10,
            max_iter: None,
        }
    }
}

impl SolverOptions {
    pub fn banded() -> Self {
        Self {
            kind: LinearSolverKind::BandedLu,
            ..Self::default()
        }
    }
}

/// A matrix bundled with its preconditioner or factorization.
#[derive(Debug, Clone)]
pub struct LinearSolver {
    matrix: CsrMatrix,
    opts: SolverOptions,
    ilu: Option<Ilu0>,
    banded: Option<BandedLu>,
}

impl LinearSolver {
    pub fn new(matrix: CsrMatrix, opts: SolverOptions) -> Result<Self> {
        let (ilu, banded) = match opts.kind {
            LinearSolverKind::BicgstabIlu0 => (Some(Ilu0::new(&matrix)?), None),
            LinearSolverKind::BandedLu => (None, Some(BandedLu::new(&matrix)?)),
        };
        Ok(Self {
            matrix,
            opts,
            ilu,
            banded,
        })
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    /// Solves `A x = b`, using `x` as the initial guess. Returns the iteration count.
    pub fn solve(&self, b: &[f64], x: &mut [f64]) -> Result<usize> {
        if let Some(lu) = &self.banded {
            x.copy_from_slice(b);
            lu.solve_in_place(x);
            return Ok(1);
        }
        let ilu = self.ilu.as_ref().expect("preconditioner");
        let max_iter = self.opts.max_iter.unwrap_or(10 * self.matrix.n);
        bicgstab(&self.matrix, ilu, b, x, self.opts.rel_tol, max_iter)
    }
}

/// Right-preconditioned BiCGStab.
pub fn bicgstab(a: &CsrMatrix, pre: &Ilu0, b: &[f64], x: &mut [f64], rel_tol: f64, max_iter: usize) -> Result<usize> {
    let n = a.n;
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(0);
    }
    let target = rel_tol * bnorm;
    let mut r = a.apply(x);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    if dot(&r, &r).sqrt() <= target {
        return Ok(0);
    }
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut p_hat = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut s_hat = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut res = f64::INFINITY;
    for it in 1..=max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || omega == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        p_hat.copy_from_slice(&p);
        pre.solve_in_place(&mut p_hat);
        a.matvec(&p_hat, &mut v);
        let rv = dot(&r_hat, &v);
        if rv == 0.0 {
            break;
        }
        alpha = rho / rv;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        let snorm = dot(&s, &s).sqrt();
        if snorm <= target {
            for i in 0..n {
                x[i] += alpha * p_hat[i];
            }
            return Ok(it);
        }
        s_hat.copy_from_slice(&s);
        pre.solve_in_place(&mut s_hat);
        a.matvec(&s_hat, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * p_hat[i] + omega * s_hat[i];
            r[i] = s[i] - omega * t[i];
        }
        res = dot(&r, &r).sqrt();
        if !res.is_finite() {
            return Err(Error::NonFinite("BiCGStab residual".into()));
        }
        if res <= target {
            return Ok(it);
        }
    }
    Err(Error::SolverDivergence {
        iterations: max_iter,
        residual: res / bnorm,
    })
}
