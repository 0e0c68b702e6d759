//! Crank-Nicolson solvers for the drift-divergence equation and its discrete adjoint.
//!
//! Forward: `dy/dt = A(w) y + s` with `A(w) y = Lap y + Div(w y)`, homogeneous
//! Dirichlet data, one step being
//!
//! ```text
//! (I - dt/2 A_n) y^{n+1} = (I + dt/2 A_n) y^n + dt s^{n+1/2}
//! ```
//!
//! where `A_n` uses the drift frozen at the step midpoint. The adjoint is the
//! exact transpose of this map: `phi^{n+1/2} = (I - dt/2 A_n)^{-T} phi^{n+1}`,
//! `phi^n = (I + dt/2 A_n)^T phi^{n+1/2}`. Its continuous counterpart is
//! `-dphi/dt = Lap phi - w . grad phi`. The half-step values `phi^{n+1/2}` are
//! the ones paired with per-step sources, which makes the discrete duality
//! identity hold to solver precision.

use std::borrow::Cow;

use crate::domain::{
    ops::gradient_dirichlet, divergence, ControlField, FieldTrajectory, Grid2D, MidpointTrajectory, ScalarField,
    TimeGrid, VectorField, VectorFieldTrajectory,
};
use crate::error::{Error, Result};
use crate::reduced::ControlOperator;
use crate::sparse::{CsrMatrix, LinearSolver, SolverOptions};

/// Drift entering `Div(w y)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Drift {
    Zero,
    Steady(VectorField),
    /// Sampled at time nodes, averaged onto step midpoints.
    Unsteady(VectorFieldTrajectory),
    /// One field per step, used as the midpoint value.
    PerStep(Vec<VectorField>),
}

impl Drift {
    pub fn at_step(&self, n: usize) -> Option<Cow<'_, VectorField>> {
        match self {
            Drift::Zero => None,
            Drift::Steady(w) => Some(Cow::Borrowed(w)),
            Drift::Unsteady(tr) => Some(Cow::Owned(tr.midpoint(n))),
            Drift::PerStep(v) => Some(Cow::Borrowed(&v[n])),
        }
    }

    pub fn is_steady(&self) -> bool {
        matches!(self, Drift::Zero | Drift::Steady(_))
    }

    pub fn norm_inf(&self) -> f64 {
        match self {
            Drift::Zero => 0.0,
            Drift::Steady(w) => w.norm_inf(),
            Drift::Unsteady(tr) => tr.x.norm_inf().max(tr.y.norm_inf()),
            Drift::PerStep(v) => v.iter().map(|w| w.norm_inf()).fold(0.0, f64::max),
        }
    }

    fn check(&self, grid: &Grid2D, time: &TimeGrid) -> Result<()> {
        match self {
            Drift::Zero => Ok(()),
            Drift::Steady(w) => {
                grid.check_same(&w.grid())?;
                w.x.check_finite("drift")?;
                w.y.check_finite("drift")
            }
            Drift::Unsteady(tr) => {
                grid.check_same(&tr.x.grid())?;
                if tr.x.time.nt != time.nt {
                    return Err(Error::ShapeMismatch("drift trajectory has a different time grid".into()));
                }
                Ok(())
            }
            Drift::PerStep(v) => {
                if v.len() != time.nt {
                    return Err(Error::ShapeMismatch(format!("{} drift steps for {} time steps", v.len(), time.nt)));
                }
                for w in v {
                    grid.check_same(&w.grid())?;
                    w.x.check_finite("drift")?;
                    w.y.check_finite("drift")?;
                }
                Ok(())
            }
        }
    }
}

/// Matrix of `y -> Lap y + Div(w y)` on interior nodes.
pub fn operator_matrix(grid: &Grid2D, drift: Option<&VectorField>) -> CsrMatrix {
    let (ax, ay) = (1.0 / (grid.hx * grid.hx), 1.0 / (grid.hy * grid.hy));
    let (bx, by) = (0.5 / grid.hx, 0.5 / grid.hy);
    let rows = (0..grid.len())
        .map(|k| {
            let (i, j) = grid.ij(k);
            let mut row = Vec::with_capacity(5);
            row.push((k, -2.0 * (ax + ay)));
            let mut push = |ii: isize, jj: isize, lap: f64, adv: f64, axis: usize| {
                if ii < 0 || jj < 0 || ii >= grid.nx as isize || jj >= grid.ny as isize {
                    return;
                }
                let kk = grid.idx(ii as usize, jj as usize);
                let w = drift.map_or(0.0, |w| w.component(axis).values[kk]);
                row.push((kk, lap + adv * w));
            };
            let (i, j) = (i as isize, j as isize);
            push(i + 1, j, ax, bx, 0);
            push(i - 1, j, ax, -bx, 0);
            push(i, j + 1, ay, by, 1);
            push(i, j - 1, ay, -by, 1);
            row
        })
        .collect();
    CsrMatrix::from_rows(grid.len(), rows)
}

#[derive(Debug, Clone)]
struct StepOperators {
    implicit: LinearSolver,
    explicit: CsrMatrix,
    implicit_t: LinearSolver,
    explicit_t: CsrMatrix,
}

impl StepOperators {
    fn new(grid: &Grid2D, dt: f64, drift: Option<&VectorField>, opts: SolverOptions) -> Result<Self> {
        let a = operator_matrix(grid, drift);
        let id = CsrMatrix::identity(grid.len());
        let m = id.combine(1.0, &a, -0.5 * dt);
        let n = id.combine(1.0, &a, 0.5 * dt);
        let mt = m.transpose();
        let nt = n.transpose();
        Ok(Self {
            implicit: LinearSolver::new(m, opts)?,
            explicit: n,
            implicit_t: LinearSolver::new(mt, opts)?,
            explicit_t: nt,
        })
    }
}

/// Adjoint trajectory: node values and the half-step values paired with sources.
#[derive(Debug, Clone)]
pub struct AdjointTrajectory {
    pub nodes: FieldTrajectory,
    pub half_steps: MidpointTrajectory,
}

/// Precomputed stepping operators for one grid, time grid and drift.
#[derive(Debug, Clone)]
pub struct Propagator {
    grid: Grid2D,
    time: TimeGrid,
    steps: Vec<StepOperators>,
}

impl Propagator {
    pub fn new(grid: Grid2D, time: TimeGrid, drift: &Drift, opts: SolverOptions) -> Result<Self> {
        drift.check(&grid, &time)?;
        let steps = if drift.is_steady() {
            vec![StepOperators::new(&grid, time.dt, drift.at_step(0).as_deref(), opts)?]
        } else {
            (0..time.nt)
                .map(|n| StepOperators::new(&grid, time.dt, drift.at_step(n).as_deref(), opts))
                .collect::<Result<_>>()?
        };
        Ok(Self { grid, time, steps })
    }

    pub fn grid(&self) -> Grid2D {
        self.grid
    }

    pub fn time(&self) -> TimeGrid {
        self.time
    }

    fn step(&self, n: usize) -> &StepOperators {
        if self.steps.len() == 1 {
            &self.steps[0]
        } else {
            &self.steps[n]
        }
    }

    /// Forward run with a per-step source `s^{n+1/2}` supplied by `source(n)`.
    pub fn forward_with<F>(&self, y0: &ScalarField, mut source: F) -> Result<FieldTrajectory>
    where
        F: FnMut(usize) -> Option<ScalarField>,
    {
        self.grid.check_same(&y0.grid)?;
        y0.check_finite("initial data")?;
        let mut snapshots = Vec::with_capacity(self.time.nt + 1);
        snapshots.push(y0.clone());
        let mut rhs = vec![0.0; self.grid.len()];
        for n in 0..self.time.nt {
            let ops = self.step(n);
            let prev = &snapshots[n];
            ops.explicit.matvec(&prev.values, &mut rhs);
            if let Some(s) = source(n) {
                for (r, v) in rhs.iter_mut().zip(&s.values) {
                    *r += self.time.dt * v;
                }
            }
            let mut next = prev.values.clone();
            ops.implicit.solve(&rhs, &mut next)?;
            let next = ScalarField {
                grid: self.grid,
                values: next,
            };
            if !next.values.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("forward solution at step {}", n + 1)));
            }
            snapshots.push(next);
        }
        Ok(FieldTrajectory {
            time: self.time,
            snapshots,
        })
    }

    pub fn forward(&self, y0: &ScalarField) -> Result<FieldTrajectory> {
        self.forward_with(y0, |_| None)
    }

    /// Backward run from `terminal` at `t = T`.
    pub fn backward(&self, terminal: &ScalarField) -> Result<AdjointTrajectory> {
        self.grid.check_same(&terminal.grid)?;
        terminal.check_finite("terminal data")?;
        let nt = self.time.nt;
        let mut nodes = vec![ScalarField::zeros(self.grid); nt + 1];
        let mut half = vec![ScalarField::zeros(self.grid); nt];
        nodes[nt] = terminal.clone();
        for n in (0..nt).rev() {
            let ops = self.step(n);
            let mut mid = nodes[n + 1].values.clone();
            ops.implicit_t.solve(&nodes[n + 1].values, &mut mid)?;
            let mut prev = vec![0.0; self.grid.len()];
            ops.explicit_t.matvec(&mid, &mut prev);
            if !prev.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("adjoint solution at step {n}")));
            }
            half[n] = ScalarField {
                grid: self.grid,
                values: mid,
            };
            nodes[n] = ScalarField {
                grid: self.grid,
                values: prev,
            };
        }
        Ok(AdjointTrajectory {
            nodes: FieldTrajectory {
                time: self.time,
                snapshots: nodes,
            },
            half_steps: MidpointTrajectory {
                time: self.time,
                steps: half,
            },
        })
    }
}

/// Source term for the forward problem.
#[derive(Debug, Clone, Copy)]
pub enum Source<'a> {
    None,
    /// Node samples, averaged onto step midpoints (trapezoidal rule).
    Nodes(&'a FieldTrajectory),
    /// Values already attached to step midpoints.
    Steps(&'a MidpointTrajectory),
}

impl Source<'_> {
    pub(crate) fn at_step(&self, n: usize) -> Option<ScalarField> {
        match self {
            Source::None => None,
            Source::Nodes(f) => Some(f.midpoint(n)),
            Source::Steps(f) => Some(f.steps[n].clone()),
        }
    }
}

pub fn solve_forward(
    y0: &ScalarField,
    drift: &Drift,
    source: Source<'_>,
    grid: Grid2D,
    time: TimeGrid,
) -> Result<FieldTrajectory> {
    let prop = Propagator::new(grid, time, drift, SolverOptions::default())?;
    prop.forward_with(y0, |n| source.at_step(n))
}

/// Backward adjoint of [`solve_forward`] with the same drift.
pub fn solve_adjoint(psi_t: &ScalarField, drift: &Drift, grid: Grid2D, time: TimeGrid) -> Result<FieldTrajectory> {
    let prop = Propagator::new(grid, time, drift, SolverOptions::default())?;
    Ok(prop.backward(psi_t)?.nodes)
}

/// Localized control action `v -> Div(theta * rho_n * B v)`.
///
/// `rho_n` is an optional per-step scalar weight (the reference state when
/// linearizing around a trajectory).
#[derive(Debug, Clone)]
pub struct ControlMap {
    pub operator: ControlOperator,
    pub theta: ScalarField,
    pub weights: Option<MidpointTrajectory>,
}

impl ControlMap {
    pub fn new(operator: ControlOperator, theta: ScalarField) -> Self {
        Self {
            operator,
            theta,
            weights: None,
        }
    }

    pub fn with_weights(mut self, weights: MidpointTrajectory) -> Self {
        self.weights = Some(weights);
        self
    }

    pub fn m(&self) -> usize {
        self.operator.m()
    }

    fn local_weight(&self, n: usize) -> Cow<'_, ScalarField> {
        match &self.weights {
            None => Cow::Borrowed(&self.theta),
            Some(w) => Cow::Owned(self.theta.mul(&w.steps[n])),
        }
    }

    /// `Div(theta rho_n B v)` for the `m` components of `v` at step `n`.
    pub fn apply(&self, n: usize, v: &[&ScalarField]) -> ScalarField {
        let grid = self.theta.grid;
        let w = self.local_weight(n);
        let mut flux = VectorField::zeros(grid);
        for (col, comp) in v.iter().enumerate() {
            let b = self.operator.column(col);
            for k in 0..grid.len() {
                let a = w.values[k] * comp.values[k];
                flux.x.values[k] += b[0] * a;
                flux.y.values[k] += b[1] * a;
            }
        }
        divergence(&flux)
    }

    /// Exact transpose of [`ControlMap::apply`]: `-theta rho_n B^T grad phi`.
    pub fn adjoint(&self, n: usize, phi: &ScalarField) -> Vec<ScalarField> {
        let grid = self.theta.grid;
        let w = self.local_weight(n);
        let g = gradient_dirichlet(phi);
        (0..self.m())
            .map(|col| {
                let b = self.operator.column(col);
                let values = (0..grid.len())
                    .map(|k| -w.values[k] * (b[0] * g.x.values[k] + b[1] * g.y.values[k]))
                    .collect();
                ScalarField { grid, values }
            })
            .collect()
    }

    pub fn apply_control(&self, n: usize, v: &ControlField) -> ScalarField {
        let comps: Vec<&ScalarField> = v.components.iter().map(|c| &c.steps[n]).collect();
        self.apply(n, &comps)
    }
}

/// Discrete duality defect `|<z(T), psi(T)> - <z(0), psi(0)> - sum_n dt <Div(theta B v), psi^{n+1/2}>|`.
#[allow(clippy::too_many_arguments)]
pub fn duality_gap(
    y0: &ScalarField,
    v: &ControlField,
    psi_t: &ScalarField,
    operator: &ControlOperator,
    theta: &ScalarField,
    drift: &Drift,
    grid: Grid2D,
    time: TimeGrid,
    opts: SolverOptions,
) -> Result<f64> {
    let prop = Propagator::new(grid, time, drift, opts)?;
    let control = ControlMap::new(operator.clone(), theta.clone());
    if v.m() != control.m() {
        return Err(Error::ShapeMismatch(format!("control has {} components, B has {}", v.m(), control.m())));
    }
    let z = prop.forward_with(y0, |n| Some(control.apply_control(n, v)))?;
    let psi = prop.backward(psi_t)?;
    let pairing: f64 = (0..time.nt)
        .map(|n| control.apply_control(n, v).dot(&psi.half_steps.steps[n]))
        .sum::<f64>()
        * time.dt;
    Ok((z.last().dot(psi_t) - y0.dot(psi.nodes.first()) - pairing).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Grid2D;

    fn eigenmode(g: Grid2D) -> ScalarField {
        ScalarField::from_fn(g, |x, y| x.sin() * y.sin())
    }

    #[test]
    fn zero_data_stays_zero() {
        let g = Grid2D::unit_pi(8).unwrap();
        let t = TimeGrid::new(0.5, 10).unwrap();
        let w = Drift::Steady(VectorField::from_fn(g, |x, y| [y.cos(), x.sin()]));
        let z = solve_forward(&ScalarField::zeros(g), &w, Source::None, g, t).unwrap();
        assert!(z.norm_inf() == 0.0);
        let p = solve_adjoint(&ScalarField::zeros(g), &w, g, t).unwrap();
        assert!(p.norm_inf() == 0.0);
    }

    #[test]
    fn heat_eigenmode_decays_forward_and_backward() {
        let g = Grid2D::unit_pi(31).unwrap();
        let t = TimeGrid::new(0.5, 50).unwrap();
        let y0 = eigenmode(g);
        let y = solve_forward(&y0, &Drift::Zero, Source::None, g, t).unwrap();
        let exact = y0.scaled((-2.0 * 0.5f64).exp());
        assert!(y.last().sub(&exact).norm_l2() / exact.norm_l2() < 2e-3);
        let p = solve_adjoint(&y0, &Drift::Zero, g, t).unwrap();
        assert!(p.first().sub(&exact).norm_l2() / exact.norm_l2() < 2e-3);
    }

    #[test]
    fn operator_matrix_matches_stencils() {
        let g = Grid2D::new(5, 6, 1.0, 1.5).unwrap();
        let w = VectorField::from_fn(g, |x, y| [x + y, x * y - 1.0]);
        let a = operator_matrix(&g, Some(&w));
        let q = ScalarField::from_fn(g, |x, y| (3.0 * x).sin() + y * y);
        let ay = a.apply(&q.values);
        let mut flux = w.clone();
        flux.x = flux.x.mul(&q);
        flux.y = flux.y.mul(&q);
        let expect = crate::domain::laplacian(&q).add(&divergence(&flux));
        for k in 0..g.len() {
            assert!((ay[k] - expect.values[k]).abs() < 1e-10);
        }
    }
}
