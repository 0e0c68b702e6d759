//! Reduced control operators and the rank condition on iterated directional
//! derivatives of the reference drift.

use nalgebra::{DMatrix, Matrix2};
use serde::{Deserialize, Serialize};

use crate::domain::{Grid2D, Region, VectorField};
use crate::error::{Error, Result};

fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::invalid(name, reason)
}

/// Control matrix `B` in `R^{2 x m}`, stored by columns (the vectors `B_j*`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlOperator {
    columns: Vec<[f64; 2]>,
}

impl ControlOperator {
    pub fn new(columns: Vec<[f64; 2]>) -> Result<Self> {
        if columns.is_empty() || columns.len() > 2 {
            return Err(invalid("B", format!("need 1 or 2 columns, got {}", columns.len())));
        }
        if columns.iter().flatten().any(|v| !v.is_finite()) {
            return Err(invalid("B", "entries must be finite"));
        }
        if columns.iter().all(|c| c[0] == 0.0 && c[1] == 0.0) {
            return Err(invalid("B", "zero matrix"));
        }
        let op = Self { columns };
        if op.rank(1e-12) < op.m() {
            log::warn!("control operator is column-rank deficient: redundant controls");
        }
        Ok(op)
    }

    pub fn identity() -> Self {
        Self {
            columns: vec![[1.0, 0.0], [0.0, 1.0]],
        }
    }

    /// Single control acting on the first gradient component, `B^T = (1, 0)`.
    pub fn first_axis() -> Self {
        Self {
            columns: vec![[1.0, 0.0]],
        }
    }

    pub fn m(&self) -> usize {
        self.columns.len()
    }

    pub fn d(&self) -> usize {
        2
    }

    pub fn column(&self, j: usize) -> [f64; 2] {
        self.columns[j]
    }

    pub fn columns(&self) -> &[[f64; 2]] {
        &self.columns
    }

    fn rank(&self, rel: f64) -> usize {
        let vecs: Vec<[f64; 2]> = self.columns.clone();
        numerical_rank(&vecs, rel).0
    }
}

/// Source of iterated directional derivatives of the drift components.
pub trait DirectionalDerivatives: Sync {
    /// `(b_1 . grad) ... (b_n . grad) u(t, x)` for both components.
    fn derivative(&self, t: f64, x: [f64; 2], dirs: &[[f64; 2]]) -> Result<[f64; 2]>;
}

/// One sine term `amplitude * sin(k . x + phase)` of a drift component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrigTerm {
    pub component: usize,
    pub amplitude: f64,
    pub wave: [f64; 2],
    pub phase: f64,
}

/// Steady drifts with closed-form derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalyticDrift {
    Zero,
    /// `u(x) = A x + b`.
    Affine { a: [[f64; 2]; 2], b: [f64; 2] },
    Trig { terms: Vec<TrigTerm> },
}

impl AnalyticDrift {
    /// `u = (0, x_1)`.
    pub fn shear() -> Self {
        AnalyticDrift::Affine {
            a: [[0.0, 0.0], [1.0, 0.0]],
            b: [0.0, 0.0],
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        match self {
            AnalyticDrift::Zero => AnalyticDrift::Zero,
            AnalyticDrift::Affine { a, b } => AnalyticDrift::Affine {
                a: [[c * a[0][0], c * a[0][1]], [c * a[1][0], c * a[1][1]]],
                b: [c * b[0], c * b[1]],
            },
            AnalyticDrift::Trig { terms } => AnalyticDrift::Trig {
                terms: terms
                    .iter()
                    .map(|t| TrigTerm {
                        amplitude: c * t.amplitude,
                        ..*t
                    })
                    .collect(),
            },
        }
    }

    pub fn value(&self, x: [f64; 2]) -> [f64; 2] {
        match self {
            AnalyticDrift::Zero => [0.0, 0.0],
            AnalyticDrift::Affine { a, b } => [
                a[0][0] * x[0] + a[0][1] * x[1] + b[0],
                a[1][0] * x[0] + a[1][1] * x[1] + b[1],
            ],
            AnalyticDrift::Trig { terms } => {
                let mut out = [0.0; 2];
                for t in terms {
                    out[t.component] += t.amplitude * (t.wave[0] * x[0] + t.wave[1] * x[1] + t.phase).sin();
                }
                out
            }
        }
    }

    pub fn sample(&self, grid: Grid2D) -> VectorField {
        VectorField::from_fn(grid, |x, y| self.value([x, y]))
    }
}

impl DirectionalDerivatives for AnalyticDrift {
    fn derivative(&self, _t: f64, x: [f64; 2], dirs: &[[f64; 2]]) -> Result<[f64; 2]> {
        if dirs.is_empty() {
            return Ok(self.value(x));
        }
        Ok(match self {
            AnalyticDrift::Zero => [0.0, 0.0],
            AnalyticDrift::Affine { a, .. } => {
                if dirs.len() > 1 {
                    [0.0, 0.0]
                } else {
                    let d = dirs[0];
                    [a[0][0] * d[0] + a[0][1] * d[1], a[1][0] * d[0] + a[1][1] * d[1]]
                }
            }
            AnalyticDrift::Trig { terms } => {
                let n = dirs.len() as f64;
                let mut out = [0.0; 2];
                for t in terms {
                    let factor: f64 = dirs.iter().map(|d| t.wave[0] * d[0] + t.wave[1] * d[1]).product();
                    let arg = t.wave[0] * x[0] + t.wave[1] * x[1] + t.phase + n * std::f64::consts::FRAC_PI_2;
                    out[t.component] += t.amplitude * factor * arg.sin();
                }
                out
            }
        })
    }
}

/// Grid-sampled steady drift, differentiated by nested central differences
/// of bilinear interpolants (zero extension outside the domain).
#[derive(Debug, Clone)]
pub struct GridDrift {
    pub field: VectorField,
    pub h_fd: f64,
}

impl GridDrift {
    pub fn new(field: VectorField) -> Self {
        let h_fd = field.grid().h_max();
        Self { field, h_fd }
    }

    pub fn with_step(field: VectorField, h_fd: f64) -> Self {
        Self { field, h_fd }
    }

    fn interpolate(&self, p: [f64; 2]) -> [f64; 2] {
        let g = self.field.grid();
        // index coordinates with the boundary at -1 and n
        let fx = p[0] / g.hx - 1.0;
        let fy = p[1] / g.hy - 1.0;
        let (i0, j0) = (fx.floor(), fy.floor());
        let (tx, ty) = (fx - i0, fy - j0);
        let (i0, j0) = (i0 as isize, j0 as isize);
        let mut out = [0.0; 2];
        for (axis, o) in out.iter_mut().enumerate() {
            let c = self.field.component(axis);
            let v00 = c.at(i0, j0);
            let v10 = c.at(i0 + 1, j0);
            let v01 = c.at(i0, j0 + 1);
            let v11 = c.at(i0 + 1, j0 + 1);
            *o = (1.0 - tx) * (1.0 - ty) * v00 + tx * (1.0 - ty) * v10 + (1.0 - tx) * ty * v01 + tx * ty * v11;
        }
        out
    }

    fn nested(&self, x: [f64; 2], dirs: &[[f64; 2]]) -> [f64; 2] {
        match dirs.split_first() {
            None => self.interpolate(x),
            Some((d, rest)) => {
                let h = self.h_fd;
                let xp = [x[0] + h * d[0], x[1] + h * d[1]];
                let xm = [x[0] - h * d[0], x[1] - h * d[1]];
                let a = self.nested(xp, rest);
                let b = self.nested(xm, rest);
                [(a[0] - b[0]) / (2.0 * h), (a[1] - b[1]) / (2.0 * h)]
            }
        }
    }

    /// Largest derivative order whose stencil stays inside the closed domain.
    pub fn max_feasible_order(&self, x: [f64; 2], dirs: &[[f64; 2]]) -> usize {
        let g = self.field.grid();
        let reach = |k: usize| -> [f64; 2] {
            let mut r = [0.0; 2];
            for d in &dirs[..k] {
                r[0] += self.h_fd * d[0].abs();
                r[1] += self.h_fd * d[1].abs();
            }
            r
        };
        let inside = |r: [f64; 2]| {
            let eps = 1e-12 * (g.lx + g.ly);
            x[0] - r[0] >= -eps && x[0] + r[0] <= g.lx + eps && x[1] - r[1] >= -eps && x[1] + r[1] <= g.ly + eps
        };
        (0..=dirs.len()).take_while(|&k| inside(reach(k))).last().unwrap_or(0)
    }
}

impl DirectionalDerivatives for GridDrift {
    fn derivative(&self, _t: f64, x: [f64; 2], dirs: &[[f64; 2]]) -> Result<[f64; 2]> {
        let feasible = self.max_feasible_order(x, dirs);
        if feasible < dirs.len() {
            return Err(Error::StencilOutOfDomain {
                requested: dirs.len(),
                max_feasible: feasible,
            });
        }
        Ok(self.nested(x, dirs))
    }
}

/// Provenance of one vector of the derivative family.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FamilyLabel {
    /// Column `B_j*` of the control operator.
    Control { j: usize },
    /// `((B* . grad)^alpha u_i)_i`.
    Derivative { alpha: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyEntry {
    pub label: FamilyLabel,
    pub vector: [f64; 2],
}

/// Multi-indices `alpha in N^m` with `0 < |alpha|_1 <= q`, graded by order.
pub fn multi_indices(m: usize, q: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for order in 1..=q {
        let mut cur = vec![0; m];
        compositions(order, 0, &mut cur, &mut out);
    }
    out
}

fn compositions(rem: usize, pos: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if pos + 1 == cur.len() {
        cur[pos] = rem;
        out.push(cur.clone());
        return;
    }
    for k in (0..=rem).rev() {
        cur[pos] = k;
        compositions(rem - k, pos + 1, cur, out);
    }
    cur[pos] = 0;
}

pub fn derivative_family(
    ubar: &dyn DirectionalDerivatives,
    b: &ControlOperator,
    q: usize,
    t: f64,
    x: [f64; 2],
) -> Result<Vec<FamilyEntry>> {
    let mut out: Vec<FamilyEntry> = (0..b.m())
        .map(|j| FamilyEntry {
            label: FamilyLabel::Control { j },
            vector: b.column(j),
        })
        .collect();
    for alpha in multi_indices(b.m(), q) {
        let dirs: Vec<[f64; 2]> = alpha
            .iter()
            .enumerate()
            .flat_map(|(j, &n)| std::iter::repeat_n(b.column(j), n))
            .collect();
        let vector = ubar.derivative(t, x, &dirs)?;
        out.push(FamilyEntry {
            label: FamilyLabel::Derivative { alpha },
            vector,
        });
    }
    Ok(out)
}

/// Rank with threshold `rel * sigma_max`, plus the singular values (descending).
pub fn numerical_rank(vectors: &[[f64; 2]], rel: f64) -> (usize, Vec<f64>) {
    let m = DMatrix::from_fn(2, vectors.len(), |r, c| vectors[c][r]);
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let top = sv.first().copied().unwrap_or(0.0);
    let rank = if top == 0.0 { 0 } else { sv.iter().filter(|&&s| s > rel * top).count() };
    (rank, sv)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub t: f64,
    pub x: [f64; 2],
    pub singular_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub q: usize,
    pub tol_sv_rel: f64,
    pub grid_scan: Vec<ScanPoint>,
    pub max_rank: usize,
    pub min_rank: usize,
    pub witness: Option<Witness>,
    /// Singular values at the witness (empty without one).
    pub singular_values: Vec<f64>,
    /// Smallest `|det M~|` over full-rank scan points adjacent to the witness.
    pub det: Option<f64>,
}

/// Scans `region x times`, in region order for each time.
pub fn rank_condition(
    ubar: &dyn DirectionalDerivatives,
    b: &ControlOperator,
    q: usize,
    region: &Region,
    times: &[f64],
    tol_sv_rel: f64,
) -> Result<RankReport> {
    use rayon::prelude::*;
    if region.is_empty() {
        return Err(invalid("region", "empty scan region"));
    }
    if tol_sv_rel.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(invalid("tol_sv", "must be positive"));
    }
    let grid = region.grid;
    let points: Vec<(f64, usize)> = times.iter().flat_map(|&t| region.indices().map(move |k| (t, k))).collect();
    let results: Vec<(ScanPoint, Vec<f64>, Vec<[f64; 2]>)> = points
        .par_iter()
        .map(|&(t, k)| {
            let x = grid.coords(k);
            let fam = derivative_family(ubar, b, q, t, x)?;
            let vecs: Vec<[f64; 2]> = fam.iter().map(|e| e.vector).collect();
            let (rank, sv) = numerical_rank(&vecs, tol_sv_rel);
            Ok((ScanPoint { t, x: x[0], y: x[1], rank }, sv, vecs))
        })
        .collect::<Result<_>>()?;
    let max_rank = results.iter().map(|r| r.0.rank).max().unwrap_or(0);
    let min_rank = results.iter().map(|r| r.0.rank).min().unwrap_or(0);
    let witness_pos = results.iter().position(|r| r.0.rank == 2);
    let (witness, singular_values, det) = match witness_pos {
        None => (None, vec![], None),
        Some(w) => {
            let (p, sv, _) = &results[w];
            let reach = 1.5 * grid.h_max();
            let mut det = f64::INFINITY;
            for (s, _, vecs) in &results {
                if s.t == p.t && (s.x - p.x).hypot(s.y - p.y) <= reach {
                    let d = if s.rank == 2 { greedy_selection(vecs).1 } else { 0.0 };
                    det = det.min(d);
                }
            }
            (
                Some(Witness {
                    t: p.t,
                    x: [p.x, p.y],
                    singular_values: sv.clone(),
                }),
                sv.clone(),
                Some(det),
            )
        }
    };
    Ok(RankReport {
        q,
        tol_sv_rel,
        grid_scan: results.into_iter().map(|r| r.0).collect(),
        max_rank,
        min_rank,
        witness,
        singular_values,
        det,
    })
}

/// Column-pivoted Gram-Schmidt: returns chosen indices and `|det|` of the chosen pair.
fn greedy_selection(vecs: &[[f64; 2]]) -> (Vec<usize>, f64) {
    let norm = |v: [f64; 2]| v[0].hypot(v[1]);
    let first = (0..vecs.len()).fold(None, |best: Option<usize>, i| match best {
        Some(b) if norm(vecs[b]) >= norm(vecs[i]) => Some(b),
        _ => Some(i),
    });
    let Some(first) = first else {
        return (vec![], 0.0);
    };
    let a = vecs[first];
    let na = norm(a);
    if na == 0.0 {
        return (vec![first], 0.0);
    }
    let mut best = None;
    let mut best_perp = -1.0;
    for (i, v) in vecs.iter().enumerate() {
        if i == first {
            continue;
        }
        let perp = (a[0] * v[1] - a[1] * v[0]).abs() / na;
        if perp > best_perp {
            best_perp = perp;
            best = Some(i);
        }
    }
    match best {
        None => (vec![first], 0.0),
        Some(second) => {
            let b = vecs[second];
            (vec![first, second], (a[0] * b[1] - a[1] * b[0]).abs())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Rows are the selected family vectors.
    pub matrix: [[f64; 2]; 2],
    pub det_abs: f64,
    pub labels: Vec<FamilyLabel>,
}

impl Selection {
    pub fn inverse(&self) -> Option<[[f64; 2]; 2]> {
        let m = Matrix2::new(self.matrix[0][0], self.matrix[0][1], self.matrix[1][0], self.matrix[1][1]);
        m.try_inverse().map(|i| [[i[(0, 0)], i[(0, 1)]], [i[(1, 0)], i[(1, 1)]]])
    }
}

pub fn solvability_matrix(
    ubar: &dyn DirectionalDerivatives,
    b: &ControlOperator,
    q: usize,
    t: f64,
    x: [f64; 2],
    tol_det: f64,
) -> Result<Selection> {
    let fam = derivative_family(ubar, b, q, t, x)?;
    let vecs: Vec<[f64; 2]> = fam.iter().map(|e| e.vector).collect();
    let (idx, det) = greedy_selection(&vecs);
    if idx.len() < 2 || det <= tol_det {
        return Err(Error::SelectionFailure { best: det, tol: tol_det });
    }
    Ok(Selection {
        matrix: [vecs[idx[0]], vecs[idx[1]]],
        det_abs: det,
        labels: idx.iter().map(|&i| fam[i].label.clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multi_index_enumeration() {
        assert_eq!(multi_indices(1, 3), vec![vec![1], vec![2], vec![3]]);
        let two = multi_indices(2, 2);
        assert_eq!(two, vec![vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]]);
        assert!(multi_indices(2, 0).is_empty());
    }

    #[test]
    fn zero_drift_family_is_b_columns() {
        let b = ControlOperator::new(vec![[0.6, 0.8]]).unwrap();
        let fam = derivative_family(&AnalyticDrift::Zero, &b, 3, 0.5, [1.0, 1.0]).unwrap();
        assert_eq!(fam.len(), 4);
        assert_eq!(fam[0].vector, [0.6, 0.8]);
        assert!(fam[1..].iter().all(|e| e.vector == [0.0, 0.0]));
    }

    #[test]
    fn shear_selection() {
        let b = ControlOperator::first_axis();
        let sel = solvability_matrix(&AnalyticDrift::shear(), &b, 1, 0.5, [1.0, 2.0], 1e-8).unwrap();
        assert_eq!(sel.matrix, [[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(sel.det_abs, 1.0);
        assert_eq!(sel.labels[1], FamilyLabel::Derivative { alpha: vec![1] });
        assert!(solvability_matrix(&AnalyticDrift::shear(), &b, 0, 0.5, [1.0, 2.0], 1e-8).is_err());
    }

    #[test]
    fn trig_derivatives_match_finite_differences() {
        let drift = AnalyticDrift::Trig {
            terms: vec![
                TrigTerm {
                    component: 0,
                    amplitude: 0.7,
                    wave: [1.0, 2.0],
                    phase: 0.3,
                },
                TrigTerm {
                    component: 1,
                    amplitude: -1.1,
                    wave: [2.0, -1.0],
                    phase: 0.0,
                },
            ],
        };
        let x = [1.1, 1.7];
        let d = [0.6, 0.8];
        let h = 1e-4;
        let exact = drift.derivative(0.0, x, &[d]).unwrap();
        let p = drift.value([x[0] + h * d[0], x[1] + h * d[1]]);
        let m = drift.value([x[0] - h * d[0], x[1] - h * d[1]]);
        for i in 0..2 {
            assert!((exact[i] - (p[i] - m[i]) / (2.0 * h)).abs() < 1e-7);
        }
    }

    #[test]
    fn grid_stencil_out_of_domain() {
        let g = Grid2D::unit_pi(15).unwrap();
        let gd = GridDrift::new(AnalyticDrift::shear().sample(g));
        let b = ControlOperator::first_axis();
        let near_edge = g.coords(g.idx(1, 7));
        match derivative_family(&gd, &b, 3, 0.0, near_edge) {
            Err(Error::StencilOutOfDomain { requested, max_feasible }) => {
                assert_eq!(requested, 3);
                assert_eq!(max_feasible, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rank_deficient_operator_still_builds() {
        assert!(ControlOperator::new(vec![[1.0, 0.0], [2.0, 0.0]]).is_ok());
        assert!(ControlOperator::new(vec![]).is_err());
        assert!(ControlOperator::new(vec![[0.0, 0.0]]).is_err());
    }
}
