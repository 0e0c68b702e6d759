//! Discretization of the space-time cylinder `(0,T) x (0,L1) x (0,L2)`.
//!
//! Unknowns live on interior nodes only; every field is implicitly extended
//! by zero to the boundary (homogeneous Dirichlet). Node `(i, j)` sits at
//! `((i+1) hx, (j+1) hy)` and is stored at flat index `j * nx + i`.

mod io;
pub(crate) mod ops;

pub use io::{
    read_field_binary, write_field_binary, write_field_csv, write_trajectory_binary,
    write_trajectory_csv,
};
pub use ops::{divergence, gradient, hessian_norm_sq, laplacian};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub hx: f64,
    pub hy: f64,
}

impl Grid2D {
    pub const MIN_NODES: usize = 4;

    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        if nx < Self::MIN_NODES {
            return Err(Error::invalid("nx", format!("need at least {} interior nodes, got {nx}", Self::MIN_NODES)));
        }
        if ny < Self::MIN_NODES {
            return Err(Error::invalid("ny", format!("need at least {} interior nodes, got {ny}", Self::MIN_NODES)));
        }
        if !(lx.is_finite() && lx > 0.0) {
            return Err(Error::invalid("L1", format!("side length must be positive, got {lx}")));
        }
        if !(ly.is_finite() && ly > 0.0) {
            return Err(Error::invalid("L2", format!("side length must be positive, got {ly}")));
        }
        Ok(Self {
            nx,
            ny,
            lx,
            ly,
            hx: lx / (nx + 1) as f64,
            hy: ly / (ny + 1) as f64,
        })
    }

    /// Square `(0, pi)^2` grid with `n x n` interior nodes.
    pub fn unit_pi(n: usize) -> Result<Self> {
        Self::new(n, n, std::f64::consts::PI, std::f64::consts::PI)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn ij(&self, k: usize) -> (usize, usize) {
        (k % self.nx, k / self.nx)
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        (i + 1) as f64 * self.hx
    }

    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        (j + 1) as f64 * self.hy
    }

    #[inline]
    pub fn coords(&self, k: usize) -> [f64; 2] {
        let (i, j) = self.ij(k);
        [self.x(i), self.y(j)]
    }

    pub fn cell_area(&self) -> f64 {
        self.hx * self.hy
    }

    pub fn h_max(&self) -> f64 {
        self.hx.max(self.hy)
    }

    /// Nodes with at least one neighbour on the boundary.
    pub fn is_boundary_adjacent(&self, k: usize) -> bool {
        let (i, j) = self.ij(k);
        i == 0 || j == 0 || i + 1 == self.nx || j + 1 == self.ny
    }

    /// Index of the node closest to `p`.
    pub fn nearest_node(&self, p: [f64; 2]) -> usize {
        let i = ((p[0] / self.hx).round() as isize - 1).clamp(0, self.nx as isize - 1) as usize;
        let j = ((p[1] / self.hy).round() as isize - 1).clamp(0, self.ny as isize - 1) as usize;
        self.idx(i, j)
    }

    pub(crate) fn check_same(&self, other: &Grid2D) -> Result<()> {
        if self != other {
            return Err(Error::ShapeMismatch(format!(
                "grid {}x{} vs {}x{}",
                self.nx, self.ny, other.nx, other.ny
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t_final: f64,
    pub nt: usize,
    pub dt: f64,
}

impl TimeGrid {
    pub fn new(t_final: f64, nt: usize) -> Result<Self> {
        if !(t_final.is_finite() && t_final > 0.0) {
            return Err(Error::invalid("T", format!("horizon must be positive, got {t_final}")));
        }
        if nt < 2 {
            return Err(Error::invalid("nt", format!("need at least 2 time steps, got {nt}")));
        }
        Ok(Self {
            t_final,
            nt,
            dt: t_final / nt as f64,
        })
    }

    #[inline]
    pub fn t(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    /// Midpoint of step `n`, i.e. of `[t_n, t_{n+1}]`.
    #[inline]
    pub fn t_mid(&self, n: usize) -> f64 {
        (n as f64 + 0.5) * self.dt
    }

    pub fn node_times(&self) -> Vec<f64> {
        (0..=self.nt).map(|n| self.t(n)).collect()
    }
}

pub fn build_grid(
    nx: usize,
    ny: usize,
    lx: f64,
    ly: f64,
    t_final: f64,
    nt: usize,
) -> Result<(Grid2D, TimeGrid)> {
    Ok((Grid2D::new(nx, ny, lx, ly)?, TimeGrid::new(t_final, nt)?))
}

/// Boolean indicator over interior nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub name: String,
    pub grid: Grid2D,
    pub mask: Vec<bool>,
}

impl Region {
    pub fn empty(name: impl Into<String>, grid: Grid2D) -> Self {
        Self {
            name: name.into(),
            grid,
            mask: vec![false; grid.len()],
        }
    }

    pub fn from_fn(name: impl Into<String>, grid: Grid2D, f: impl Fn(f64, f64) -> bool) -> Result<Self> {
        let mask: Vec<bool> = (0..grid.len())
            .map(|k| {
                let [x, y] = grid.coords(k);
                f(x, y)
            })
            .collect();
        let region = Self {
            name: name.into(),
            grid,
            mask,
        };
        if region.is_empty() {
            return Err(Error::invalid("region", format!("`{}` contains no grid node", region.name)));
        }
        Ok(region)
    }

    /// Closed box `[x0, x1] x [y0, y1]` (a tiny slack absorbs rounding of node coordinates).
    pub fn from_box(name: impl Into<String>, grid: Grid2D, xr: [f64; 2], yr: [f64; 2]) -> Result<Self> {
        let eps = 1e-12 * grid.lx.max(grid.ly);
        Self::from_fn(name, grid, |x, y| {
            x >= xr[0] - eps && x <= xr[1] + eps && y >= yr[0] - eps && y <= yr[1] + eps
        })
    }

    pub fn all(name: impl Into<String>, grid: Grid2D) -> Self {
        Self {
            name: name.into(),
            grid,
            mask: vec![true; grid.len()],
        }
    }

    pub fn contains(&self, k: usize) -> bool {
        self.mask[k]
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&m| m)
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask.iter().enumerate().filter(|(_, &m)| m).map(|(k, _)| k)
    }

    /// Nodes of the region that have a 4-neighbour outside it (or on the boundary of the domain).
    pub fn boundary_layer(&self) -> Vec<bool> {
        let g = &self.grid;
        (0..g.len())
            .map(|k| {
                if !self.mask[k] {
                    return false;
                }
                let (i, j) = g.ij(k);
                let outside = |ii: isize, jj: isize| {
                    ii < 0
                        || jj < 0
                        || ii >= g.nx as isize
                        || jj >= g.ny as isize
                        || !self.mask[g.idx(ii as usize, jj as usize)]
                };
                let (i, j) = (i as isize, j as isize);
                outside(i - 1, j) || outside(i + 1, j) || outside(i, j - 1) || outside(i, j + 1)
            })
            .collect()
    }

    /// Remove `layers` boundary layers.
    pub fn eroded(&self, layers: usize, name: impl Into<String>) -> Region {
        let mut out = Region {
            name: name.into(),
            grid: self.grid,
            mask: self.mask.clone(),
        };
        for _ in 0..layers {
            let layer = out.boundary_layer();
            for (m, l) in out.mask.iter_mut().zip(layer) {
                if l {
                    *m = false;
                }
            }
        }
        out
    }

    pub fn is_subset_of(&self, other: &Region) -> bool {
        self.mask.iter().zip(&other.mask).all(|(&a, &b)| !a || b)
    }

    /// Physical centroid of the masked nodes.
    pub fn centroid(&self) -> Option<[f64; 2]> {
        let n = self.count();
        if n == 0 {
            return None;
        }
        let mut c = [0.0; 2];
        for k in self.indices() {
            let p = self.grid.coords(k);
            c[0] += p[0];
            c[1] += p[1];
        }
        Some([c[0] / n as f64, c[1] / n as f64])
    }

    /// `self` compactly inside `outer`: subset, and at least one layer of
    /// `outer` separates it from the complement.
    pub fn validate_inside(&self, outer: &Region) -> Result<()> {
        self.grid.check_same(&outer.grid)?;
        if self.is_empty() {
            return Err(Error::Nesting(format!("`{}` is empty", self.name)));
        }
        if !self.is_subset_of(outer) {
            return Err(Error::Nesting(format!("`{}` is not contained in `{}`", self.name, outer.name)));
        }
        let layer = outer.boundary_layer();
        if self.mask.iter().zip(&layer).any(|(&a, &l)| a && l) {
            return Err(Error::Nesting(format!(
                "`{}` touches the boundary layer of `{}`",
                self.name, outer.name
            )));
        }
        Ok(())
    }
}

/// Real values on interior nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: Grid2D,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid2D) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: Grid2D, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    pub fn from_values(grid: Grid2D, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a grid with {} nodes",
                values.len(),
                grid.len()
            )));
        }
        let field = Self { grid, values };
        field.check_finite("ScalarField")?;
        Ok(field)
    }

    pub fn from_fn(grid: Grid2D, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|k| {
                let [x, y] = grid.coords(k);
                f(x, y)
            })
            .collect();
        Self { grid, values }
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    /// Discrete inner product `sum u v hx hy`.
    pub fn dot(&self, other: &ScalarField) -> f64 {
        dot(&self.values, &other.values) * self.grid.cell_area()
    }

    pub fn norm_l2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_area()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn scaled(&self, c: f64) -> ScalarField {
        ScalarField {
            grid: self.grid,
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }

    pub fn axpy(&mut self, a: f64, x: &ScalarField) {
        for (s, v) in self.values.iter_mut().zip(&x.values) {
            *s += a * v;
        }
    }

    pub fn sub(&self, other: &ScalarField) -> ScalarField {
        ScalarField {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn add(&self, other: &ScalarField) -> ScalarField {
        ScalarField {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn mul(&self, other: &ScalarField) -> ScalarField {
        ScalarField {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a * b).collect(),
        }
    }

    /// Value at node `(i, j)` with the Dirichlet zero extension for out-of-range indices.
    #[inline]
    pub fn at(&self, i: isize, j: isize) -> f64 {
        if i < 0 || j < 0 || i >= self.grid.nx as isize || j >= self.grid.ny as isize {
            0.0
        } else {
            self.values[self.grid.idx(i as usize, j as usize)]
        }
    }

    pub fn average(a: &ScalarField, b: &ScalarField) -> ScalarField {
        ScalarField {
            grid: a.grid,
            values: a.values.iter().zip(&b.values).map(|(x, y)| 0.5 * (x + y)).collect(),
        }
    }
}

/// Pair of scalar fields `(v1, v2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub x: ScalarField,
    pub y: ScalarField,
}

impl VectorField {
    pub fn zeros(grid: Grid2D) -> Self {
        Self {
            x: ScalarField::zeros(grid),
            y: ScalarField::zeros(grid),
        }
    }

    pub fn from_fn(grid: Grid2D, f: impl Fn(f64, f64) -> [f64; 2]) -> Self {
        let mut out = Self::zeros(grid);
        for k in 0..grid.len() {
            let [x, y] = grid.coords(k);
            let v = f(x, y);
            out.x.values[k] = v[0];
            out.y.values[k] = v[1];
        }
        out
    }

    pub fn grid(&self) -> Grid2D {
        self.x.grid
    }

    pub fn component(&self, axis: usize) -> &ScalarField {
        if axis == 0 {
            &self.x
        } else {
            &self.y
        }
    }

    pub fn norm_inf(&self) -> f64 {
        self.x.norm_inf().max(self.y.norm_inf())
    }

    pub fn average(a: &VectorField, b: &VectorField) -> VectorField {
        VectorField {
            x: ScalarField::average(&a.x, &b.x),
            y: ScalarField::average(&a.y, &b.y),
        }
    }

    pub fn scaled(&self, c: f64) -> VectorField {
        VectorField {
            x: self.x.scaled(c),
            y: self.y.scaled(c),
        }
    }
}

/// Snapshots at the time nodes `t_0, ..., t_nt`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldTrajectory {
    pub time: TimeGrid,
    pub snapshots: Vec<ScalarField>,
}

impl FieldTrajectory {
    pub fn zeros(grid: Grid2D, time: TimeGrid) -> Self {
        Self {
            time,
            snapshots: vec![ScalarField::zeros(grid); time.nt + 1],
        }
    }

    pub fn new(time: TimeGrid, snapshots: Vec<ScalarField>) -> Result<Self> {
        if snapshots.len() != time.nt + 1 {
            return Err(Error::ShapeMismatch(format!(
                "{} snapshots for {} time nodes",
                snapshots.len(),
                time.nt + 1
            )));
        }
        for s in &snapshots {
            s.check_finite("FieldTrajectory")?;
        }
        Ok(Self { time, snapshots })
    }

    pub fn grid(&self) -> Grid2D {
        self.snapshots[0].grid
    }

    pub fn first(&self) -> &ScalarField {
        &self.snapshots[0]
    }

    pub fn last(&self) -> &ScalarField {
        &self.snapshots[self.time.nt]
    }

    /// Space-time `L^2` norm with trapezoidal weights in time.
    pub fn norm_l2(&self) -> f64 {
        let nt = self.time.nt;
        let mut s = 0.0;
        for (n, f) in self.snapshots.iter().enumerate() {
            let w = if n == 0 || n == nt { 0.5 } else { 1.0 };
            s += w * f.dot(f);
        }
        (s * self.time.dt).sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        self.snapshots.iter().fold(0.0, |m, f| f64::max(m, f.norm_inf()))
    }

    pub fn sub(&self, other: &FieldTrajectory) -> FieldTrajectory {
        FieldTrajectory {
            time: self.time,
            snapshots: self.snapshots.iter().zip(&other.snapshots).map(|(a, b)| a.sub(b)).collect(),
        }
    }

    pub fn add(&self, other: &FieldTrajectory) -> FieldTrajectory {
        FieldTrajectory {
            time: self.time,
            snapshots: self.snapshots.iter().zip(&other.snapshots).map(|(a, b)| a.add(b)).collect(),
        }
    }

    /// Average of the two snapshots framing step `n`.
    pub fn midpoint(&self, n: usize) -> ScalarField {
        ScalarField::average(&self.snapshots[n], &self.snapshots[n + 1])
    }
}

/// Per-step values attached to the midpoints `t_{n+1/2}`, `n = 0..nt-1`.
///
/// Controls and sources live here: the time stepper applies them once per step.
#[derive(Debug, Clone, PartialEq)]
pub struct MidpointTrajectory {
    pub time: TimeGrid,
    pub steps: Vec<ScalarField>,
}

impl MidpointTrajectory {
    pub fn zeros(grid: Grid2D, time: TimeGrid) -> Self {
        Self {
            time,
            steps: vec![ScalarField::zeros(grid); time.nt],
        }
    }

    pub fn new(time: TimeGrid, steps: Vec<ScalarField>) -> Result<Self> {
        if steps.len() != time.nt {
            return Err(Error::ShapeMismatch(format!("{} step values for {} steps", steps.len(), time.nt)));
        }
        Ok(Self { time, steps })
    }

    pub fn norm_l2(&self) -> f64 {
        (self.steps.iter().map(|f| f.dot(f)).sum::<f64>() * self.time.dt).sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        self.steps.iter().fold(0.0, |m, f| f64::max(m, f.norm_inf()))
    }

    pub fn dot(&self, other: &MidpointTrajectory) -> f64 {
        self.steps.iter().zip(&other.steps).map(|(a, b)| a.dot(b)).sum::<f64>() * self.time.dt
    }
}

/// Node-sampled vector trajectory (drifts, gradients).
#[derive(Debug, Clone, PartialEq)]
pub struct VectorFieldTrajectory {
    pub x: FieldTrajectory,
    pub y: FieldTrajectory,
}

impl VectorFieldTrajectory {
    pub fn new(x: FieldTrajectory, y: FieldTrajectory) -> Result<Self> {
        if x.time != y.time || x.grid() != y.grid() {
            return Err(Error::ShapeMismatch("vector trajectory components differ in shape".into()));
        }
        Ok(Self { x, y })
    }

    pub fn steady(field: &VectorField, time: TimeGrid) -> Self {
        Self {
            x: FieldTrajectory {
                time,
                snapshots: vec![field.x.clone(); time.nt + 1],
            },
            y: FieldTrajectory {
                time,
                snapshots: vec![field.y.clone(); time.nt + 1],
            },
        }
    }

    pub fn at(&self, n: usize) -> VectorField {
        VectorField {
            x: self.x.snapshots[n].clone(),
            y: self.y.snapshots[n].clone(),
        }
    }

    pub fn midpoint(&self, n: usize) -> VectorField {
        VectorField {
            x: self.x.midpoint(n),
            y: self.y.midpoint(n),
        }
    }
}

/// Control-like vector quantity with `m` components, stored per step midpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlField {
    pub components: Vec<MidpointTrajectory>,
}

impl ControlField {
    pub fn zeros(m: usize, grid: Grid2D, time: TimeGrid) -> Self {
        Self {
            components: vec![MidpointTrajectory::zeros(grid, time); m],
        }
    }

    pub fn m(&self) -> usize {
        self.components.len()
    }

    pub fn time(&self) -> TimeGrid {
        self.components[0].time
    }

    pub fn norm_l2(&self) -> f64 {
        self.components.iter().map(|c| c.norm_l2().powi(2)).sum::<f64>().sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        self.components.iter().fold(0.0, |m, c| f64::max(m, c.norm_inf()))
    }

    pub fn dot(&self, other: &ControlField) -> f64 {
        self.components.iter().zip(&other.components).map(|(a, b)| a.dot(b)).sum()
    }

    pub fn scaled(&self, c: f64) -> ControlField {
        ControlField {
            components: self
                .components
                .iter()
                .map(|t| MidpointTrajectory {
                    time: t.time,
                    steps: t.steps.iter().map(|f| f.scaled(c)).collect(),
                })
                .collect(),
        }
    }
}

/// Cutoff `theta` with `theta = 1` on `omega0`, support inside `omega`, values in `[0, 1]`.
///
/// Between the two regions `theta = S(1 - d / gap)` where `d` is the distance
/// to `omega0`, `gap` the distance from `omega0` to the boundary layer of
/// `omega`, and `S(t) = t^2 (3 - 2t)`. The boundary layer of `omega` is
/// therefore always zero, so centred stencils applied on the support of
/// `theta` never read outside `omega`.
pub fn build_cutoff(omega0: &Region, omega: &Region) -> Result<ScalarField> {
    omega0.validate_inside(omega)?;
    let grid = omega.grid;
    let layer = omega.boundary_layer();
    let inner: Vec<[f64; 2]> = omega0.indices().map(|k| grid.coords(k)).collect();
    let dist = |k: usize| {
        let p = grid.coords(k);
        inner
            .iter()
            .map(|q| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min)
    };
    let gap = (0..grid.len())
        .filter(|&k| layer[k])
        .map(dist)
        .fold(f64::INFINITY, f64::min);
    let mut theta = ScalarField::zeros(grid);
    for k in 0..grid.len() {
        theta.values[k] = if omega0.contains(k) {
            1.0
        } else if omega.contains(k) && !layer[k] {
            let t = (1.0 - dist(k) / gap).clamp(0.0, 1.0);
            t * t * (3.0 - 2.0 * t)
        } else {
            0.0
        };
    }
    Ok(theta)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn grid_spacings() {
        let (g, t) = build_grid(4, 4, PI, PI, 1.0, 2).unwrap();
        assert!((g.hx - PI / 5.0).abs() < 1e-15);
        assert!((g.hy - PI / 5.0).abs() < 1e-15);
        assert_eq!(t.dt, 0.5);
        let (g, _) = build_grid(63, 63, PI, PI, 1.0, 2).unwrap();
        assert!((g.hx - PI / 64.0).abs() < 1e-15);
    }

    #[test]
    fn grid_rejects_bad_parameters() {
        assert!(build_grid(0, 4, PI, PI, 1.0, 2).is_err());
        assert!(build_grid(4, 3, PI, PI, 1.0, 2).is_err());
        assert!(build_grid(4, 4, -1.0, PI, 1.0, 2).is_err());
        assert!(build_grid(4, 4, PI, PI, 0.0, 2).is_err());
        assert!(build_grid(4, 4, PI, PI, 1.0, 1).is_err());
    }

    #[test]
    fn erosion_and_nesting() {
        let g = Grid2D::unit_pi(20).unwrap();
        let omega = Region::from_box("omega", g, [1.0, 2.0], [1.0, 2.0]).unwrap();
        let omega0 = omega.eroded(1, "omega0");
        assert!(omega0.validate_inside(&omega).is_ok());
        assert!(omega.validate_inside(&omega).is_err());
        assert!(Region::empty("e", g).validate_inside(&omega).is_err());
        assert!(Region::from_box("w", g, [0.5, 1.5], [1.0, 2.0]).unwrap().validate_inside(&omega).is_err());
    }

    #[test]
    fn cutoff_contract() {
        let g = Grid2D::unit_pi(40).unwrap();
        let omega = Region::from_box("omega", g, [0.8, 2.4], [0.6, 2.0]).unwrap();
        let omega0 = omega.eroded(4, "omega0");
        let theta = build_cutoff(&omega0, &omega).unwrap();
        for k in 0..g.len() {
            let v = theta.values[k];
            assert!((0.0..=1.0).contains(&v));
            if omega0.contains(k) {
                assert_eq!(v, 1.0);
            }
            if !omega.contains(k) {
                assert_eq!(v, 0.0);
            }
        }
        // ramp is strictly between 0 and 1 somewhere
        assert!(theta.values.iter().any(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn cutoff_rejects_bad_nesting() {
        let g = Grid2D::unit_pi(20).unwrap();
        let omega = Region::from_box("omega", g, [1.0, 2.0], [1.0, 2.0]).unwrap();
        assert!(build_cutoff(&omega, &omega).is_err());
    }
}
