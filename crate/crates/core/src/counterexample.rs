//! Explicit trajectory violating the rank condition on `(0, pi)^2` and
//! certificates of the resulting Fattorini-Hautus violation.
//!
//! `f = sin(3 x_1) sin(4 x_2)` and `g = (2 sqrt 2 / 5)(cos(5 x_2) - sin(5 x_2))`
//! are both eigenfunctions of `-Lap` for the eigenvalue 25 with matching value
//! and gradient at `P = (pi/2, pi/4)`. The glued field
//! `phi_h = chi_h g + (1 - chi_h) f` is turned into an eigenfunction of the
//! adjoint generator `Lap - u . grad` by the drift `u = (0, (25 phi + Lap phi) / d_2 phi)`
//! on `V_h \ W_h` (zero elsewhere), while `d_1 phi = 0` on `W_h`.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use serde::{Deserialize, Serialize};

use crate::domain::{
    build_cutoff, gradient, laplacian, ops::gradient_dirichlet, Grid2D, Region, ScalarField, TimeGrid, VectorField,
};
use crate::error::{Error, Result};
use crate::hum::{decay_study, DecayStudy, HumConfig};
use crate::pde::{solve_adjoint, Drift};
use crate::reduced::{ControlOperator, DirectionalDerivatives};

pub const S_EIG: f64 = 25.0;

/// `sin(pi * num / den)` with exact zeros at integer multiples of `pi`.
fn sin_pi_ratio(num: i64, den: i64) -> f64 {
    let m = num.rem_euclid(2 * den);
    if m == 0 || m == den {
        return 0.0;
    }
    // fold to the first half period for accuracy
    let (m, sign) = if m > den { (m - den, -1.0) } else { (m, 1.0) };
    let m = m.min(den - m);
    sign * (PI * m as f64 / den as f64).sin()
}

fn check_domain(grid: &Grid2D) -> Result<()> {
    if (grid.lx - PI).abs() > 1e-12 || (grid.ly - PI).abs() > 1e-12 {
        return Err(Error::invalid("grid", "the counterexample lives on (0, pi)^2"));
    }
    Ok(())
}

/// Eigen-pair used to glue `f` and `g`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EigenMode {
    /// `s = 25` with the closed-form `f`, `g`.
    #[default]
    Continuum,
    /// `s` = discrete eigenvalue of `f` and `g` re-tuned to the same discrete
    /// eigenvalue, so `phi` is an exact eigenvector of the discrete generator.
    DiscreteExact,
}

/// Closed-form `f` and `g` with first derivatives.
#[derive(Debug, Clone, Copy)]
pub struct Eigenpair {
    /// Frequency of `g(x_2) = (4 / w) sin(w (x_2 - pi/4))`; 5 in the continuum.
    pub omega: f64,
    pub s: f64,
}

impl Eigenpair {
    pub fn new(mode: EigenMode, grid: &Grid2D) -> Self {
        match mode {
            EigenMode::Continuum => Self { omega: 5.0, s: S_EIG },
            EigenMode::DiscreteExact => {
                let (hx, hy) = (grid.hx, grid.hy);
                let s = 4.0 / (hx * hx) * (1.5 * hx).sin().powi(2) + 4.0 / (hy * hy) * (2.0 * hy).sin().powi(2);
                let omega = 2.0 / hy * (0.5 * hy * s.sqrt()).asin();
                Self { omega, s }
            }
        }
    }

    pub fn f(&self, x: [f64; 2]) -> f64 {
        (3.0 * x[0]).sin() * (4.0 * x[1]).sin()
    }

    pub fn f_grad(&self, x: [f64; 2]) -> [f64; 2] {
        [
            3.0 * (3.0 * x[0]).cos() * (4.0 * x[1]).sin(),
            4.0 * (3.0 * x[0]).sin() * (4.0 * x[1]).cos(),
        ]
    }

    pub fn g(&self, x: [f64; 2]) -> f64 {
        if self.omega == 5.0 {
            2.0 * 2f64.sqrt() / 5.0 * ((5.0 * x[1]).cos() - (5.0 * x[1]).sin())
        } else {
            4.0 / self.omega * (self.omega * (x[1] - FRAC_PI_4)).sin()
        }
    }

    pub fn g_grad(&self, x: [f64; 2]) -> [f64; 2] {
        [0.0, 4.0 * (self.omega * (x[1] - FRAC_PI_4)).cos()]
    }
}

/// `f` sampled with exact integer reduction of the sine arguments.
fn f_at_index(grid: &Grid2D, i: isize, j: isize) -> f64 {
    let (nx1, ny1) = ((grid.nx + 1) as i64, (grid.ny + 1) as i64);
    sin_pi_ratio(3 * (i as i64 + 1), nx1) * sin_pi_ratio(4 * (j as i64 + 1), ny1)
}

pub fn build_fg(grid: Grid2D) -> Result<(ScalarField, ScalarField)> {
    check_domain(&grid)?;
    let pair = Eigenpair::new(EigenMode::Continuum, &grid);
    let mut f = ScalarField::zeros(grid);
    for k in 0..grid.len() {
        let (i, j) = grid.ij(k);
        f.values[k] = f_at_index(&grid, i as isize, j as isize);
    }
    let g = ScalarField::from_fn(grid, |x, y| pair.g([x, y]));
    Ok((f, g))
}

/// `exp(-1/t)`-based step: 0 for `t <= 0`, 1 for `t >= 1`, smooth in between.
pub fn smooth_step(t: f64) -> f64 {
    let e = |t: f64| if t > 0.0 { (-1.0 / t).exp() } else { 0.0 };
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        let a = e(t);
        a / (a + e(1.0 - t))
    }
}

fn smooth_step_deriv(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        return 0.0;
    }
    let (a, b) = ((-1.0 / t).exp(), (-1.0 / (1.0 - t)).exp());
    let (da, db) = (a / (t * t), -b / ((1.0 - t) * (1.0 - t)));
    (da * (a + b) - a * (da + db)) / ((a + b) * (a + b))
}

fn smooth_step_deriv2(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        return 0.0;
    }
    // S = 1 / (1 + r), r = exp(1/t - 1/(1-t))
    let r = (1.0 / t - 1.0 / (1.0 - t)).exp();
    if !r.is_finite() || r == 0.0 {
        return 0.0;
    }
    let d1 = -1.0 / (t * t) - 1.0 / ((1.0 - t) * (1.0 - t));
    let d2 = 2.0 / (t * t * t) - 2.0 / ((1.0 - t) * (1.0 - t) * (1.0 - t));
    let q = 1.0 + r;
    -(r * d1 * d1 + r * d2) / (q * q) + 2.0 * r * r * d1 * d1 / (q * q * q)
}

/// Plateau equal to 1 on `[a1, b1]`, vanishing outside `(a0, b0)`.
#[derive(Debug, Clone, Copy)]
struct Plateau {
    a0: f64,
    a1: f64,
    b1: f64,
    b0: f64,
}

impl Plateau {
    fn value(&self, s: f64) -> f64 {
        if s <= self.a0 || s >= self.b0 {
            0.0
        } else if s < self.a1 {
            smooth_step((s - self.a0) / (self.a1 - self.a0))
        } else if s <= self.b1 {
            1.0
        } else {
            smooth_step((self.b0 - s) / (self.b0 - self.b1))
        }
    }

    fn deriv(&self, s: f64) -> f64 {
        if s <= self.a0 || s >= self.b0 || (s >= self.a1 && s <= self.b1) {
            0.0
        } else if s < self.a1 {
            smooth_step_deriv((s - self.a0) / (self.a1 - self.a0)) / (self.a1 - self.a0)
        } else {
            -smooth_step_deriv((self.b0 - s) / (self.b0 - self.b1)) / (self.b0 - self.b1)
        }
    }

    fn deriv2(&self, s: f64) -> f64 {
        if s <= self.a0 || s >= self.b0 || (s >= self.a1 && s <= self.b1) {
            0.0
        } else if s < self.a1 {
            smooth_step_deriv2((s - self.a0) / (self.a1 - self.a0)) / (self.a1 - self.a0).powi(2)
        } else {
            smooth_step_deriv2((self.b0 - s) / (self.b0 - self.b1)) / (self.b0 - self.b1).powi(2)
        }
    }
}

/// Bump `chi_h`, the base bump rescaled about `P` by `1/h`.
///
/// `pad` widens the plateau past `W_h` by a physical distance per axis; the
/// support stays `V_h`.
#[derive(Debug, Clone, Copy)]
pub struct Bump {
    pub h: f64,
    pub pad: [f64; 2],
}

impl Bump {
    pub fn new(h: f64) -> Self {
        Self { h, pad: [0.0, 0.0] }
    }

    fn plateaus(&self) -> (Plateau, Plateau) {
        let (px, py) = (self.pad[0] / self.h, self.pad[1] / self.h);
        (
            Plateau {
                a0: PI / 4.0,
                a1: 3.0 * PI / 8.0 - px,
                b1: 5.0 * PI / 8.0 + px,
                b0: 3.0 * PI / 4.0,
            },
            Plateau {
                a0: PI / 8.0,
                a1: 3.0 * PI / 16.0 - py,
                b1: 5.0 * PI / 16.0 + py,
                b0: 3.0 * PI / 8.0,
            },
        )
    }

    fn scaled(&self, x: [f64; 2]) -> [f64; 2] {
        [FRAC_PI_2 + (x[0] - FRAC_PI_2) / self.h, FRAC_PI_4 + (x[1] - FRAC_PI_4) / self.h]
    }

    pub fn value(&self, x: [f64; 2]) -> f64 {
        let s = self.scaled(x);
        let (px, py) = self.plateaus();
        px.value(s[0]) * py.value(s[1])
    }

    pub fn gradient(&self, x: [f64; 2]) -> [f64; 2] {
        let s = self.scaled(x);
        let (px, py) = self.plateaus();
        [
            px.deriv(s[0]) * py.value(s[1]) / self.h,
            px.value(s[0]) * py.deriv(s[1]) / self.h,
        ]
    }

    pub fn laplacian(&self, x: [f64; 2]) -> f64 {
        let s = self.scaled(x);
        let (px, py) = self.plateaus();
        (px.deriv2(s[0]) * py.value(s[1]) + px.value(s[0]) * py.deriv2(s[1])) / (self.h * self.h)
    }

    /// `V_h = [pi/2 +- h pi/4] x [pi/4 +- h pi/8]`.
    pub fn support_box(&self) -> ([f64; 2], [f64; 2]) {
        let (a, b) = (self.h * PI / 4.0, self.h * PI / 8.0);
        ([FRAC_PI_2 - a, FRAC_PI_2 + a], [FRAC_PI_4 - b, FRAC_PI_4 + b])
    }

    /// `W_h = [pi/2 +- h pi/8] x [pi/4 +- h pi/16]`.
    pub fn plateau_box(&self) -> ([f64; 2], [f64; 2]) {
        let (a, b) = (self.h * PI / 8.0, self.h * PI / 16.0);
        ([FRAC_PI_2 - a, FRAC_PI_2 + a], [FRAC_PI_4 - b, FRAC_PI_4 + b])
    }
}

pub fn build_chi(h: f64, grid: Grid2D) -> Result<ScalarField> {
    if !(h > 0.0 && h < 1.0) {
        return Err(Error::invalid("h", format!("bump scale must lie in (0, 1), got {h}")));
    }
    let b = Bump::new(h);
    Ok(ScalarField::from_fn(grid, |x, y| b.value([x, y])))
}

fn box_region(name: &str, grid: Grid2D, bx: ([f64; 2], [f64; 2])) -> Region {
    Region::from_box(name, grid, bx.0, bx.1).unwrap_or_else(|_| Region::empty(name, grid))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CounterexampleConfig {
    /// Interior nodes per axis.
    pub n: usize,
    pub h_start: f64,
    pub h_min: f64,
    pub c_floor: f64,
    /// `tol_residual = tol_factor * h_max^2`.
    pub tol_factor: f64,
    #[serde(default)]
    pub eigen_mode: EigenMode,
    /// Extend the plateau of `chi_h` one cell past `W_h` so the five-point
    /// stencil on `W_h` only reads `g`.
    pub pad_plateau: bool,
}

impl Default for CounterexampleConfig {
    fn default() -> Self {
        Self {
            n: 127,
            h_start: 0.5,
            h_min: 2f64.powi(-10),
            c_floor: 0.1,
            tol_factor: 50.0,
            eigen_mode: EigenMode::Continuum,
            pad_plateau: true,
        }
    }
}

/// The glued eigenfunction, its drift and regions.
#[derive(Debug, Clone)]
pub struct Counterexample {
    pub grid: Grid2D,
    pub h0: f64,
    pub bump: Bump,
    pub pair: Eigenpair,
    pub chi: ScalarField,
    pub phi: ScalarField,
    pub drift: VectorField,
    pub v_region: Region,
    pub w_region: Region,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleCertificate {
    pub n: usize,
    pub h0: f64,
    pub plateau_pad: [f64; 2],
    pub s: f64,
    pub eigen_mode: EigenMode,
    pub c_floor: f64,
    pub c_min: f64,
    /// `max |-Lap phi + u . grad phi - 25 phi|` with discrete operators.
    pub eig_residual: f64,
    /// Same with the eigenvalue `s` actually used for the drift.
    pub eig_residual_s: f64,
    pub tol_residual: f64,
    /// `max |d_1 phi|` on `W_h0` from the closed-form derivative.
    pub obs_residual: f64,
    /// Centred difference of `d_1 phi` on nodes of `W_h0` whose stencil stays in `W_h0`.
    pub obs_residual_discrete: f64,
    pub phi_norm: f64,
    /// `max |phi|` on the boundary nodes of the extended grid.
    pub boundary_max: f64,
    pub u2_max: f64,
    /// Nodes of `W_h0` per axis.
    pub w_nodes: [usize; 2],
    pub h_scan: Vec<(f64, f64)>,
    pub passed: bool,
}

impl Counterexample {
    /// Continuum drift `(0, (s phi + Lap phi) / d_2 phi)` on `V_h0 \ W_h0`
    /// from the closed forms; zero where `chi_h0` is 0 or 1.
    pub fn drift_at(&self, x: [f64; 2]) -> [f64; 2] {
        let c = self.bump.value(x);
        if c == 0.0 || c == 1.0 {
            return [0.0, 0.0];
        }
        let p = &self.pair;
        let (f, g) = (p.f(x), p.g(x));
        let (df, dg) = (p.f_grad(x), p.g_grad(x));
        let dc = self.bump.gradient(x);
        let lap_phi = -c * p.omega * p.omega * g - (1.0 - c) * S_EIG * f
            + 2.0 * (dc[0] * (dg[0] - df[0]) + dc[1] * (dg[1] - df[1]))
            + self.bump.laplacian(x) * (g - f);
        let d2 = c * dg[1] + (1.0 - c) * df[1] + dc[1] * (g - f);
        if d2 <= 0.0 {
            return [0.0, 0.0];
        }
        [0.0, (p.s * (c * g + (1.0 - c) * f) + lap_phi) / d2]
    }

    fn phi_at(&self, i: isize, j: isize) -> f64 {
        phi_value(&self.grid, &self.pair, &self.bump, i, j)
    }
}

fn phi_value(grid: &Grid2D, pair: &Eigenpair, bump: &Bump, i: isize, j: isize) -> f64 {
    let x = [(i + 1) as f64 * grid.hx, (j + 1) as f64 * grid.hy];
    let c = bump.value(x);
    let f = f_at_index(grid, i, j);
    if c == 0.0 {
        f
    } else if c == 1.0 {
        pair.g(x)
    } else {
        c * pair.g(x) + (1.0 - c) * f
    }
}

fn glue(grid: Grid2D, pair: &Eigenpair, bump: &Bump) -> (ScalarField, ScalarField) {
    let mut phi = ScalarField::zeros(grid);
    let mut chi = ScalarField::zeros(grid);
    for k in 0..grid.len() {
        let (i, j) = grid.ij(k);
        phi.values[k] = phi_value(&grid, pair, bump, i as isize, j as isize);
        chi.values[k] = bump.value(grid.coords(k));
    }
    (phi, chi)
}

fn axis_extent(region: &Region) -> [usize; 2] {
    let g = region.grid;
    let mut is = vec![false; g.nx];
    let mut js = vec![false; g.ny];
    for k in region.indices() {
        let (i, j) = g.ij(k);
        is[i] = true;
        js[j] = true;
    }
    [is.iter().filter(|&&b| b).count(), js.iter().filter(|&&b| b).count()]
}

/// `max |-Lap phi + u . grad phi - s phi|` over interior nodes.
pub fn eigen_residual(phi: &ScalarField, drift: &VectorField, s: f64) -> f64 {
    let lap = laplacian(phi);
    let grad = gradient_dirichlet(phi);
    (0..phi.grid.len())
        .map(|k| {
            let r = -lap.values[k] + drift.x.values[k] * grad.x.values[k] + drift.y.values[k] * grad.y.values[k]
                - s * phi.values[k];
            r.abs()
        })
        .fold(0.0, f64::max)
}

pub fn build_certificate(cfg: &CounterexampleConfig) -> Result<(Counterexample, CounterexampleCertificate)> {
    let grid = Grid2D::unit_pi(cfg.n)?;
    let pair = Eigenpair::new(cfg.eigen_mode, &grid);
    if !(cfg.h_start > 0.0 && cfg.h_start < 1.0) {
        return Err(Error::invalid("h_start", "must lie in (0, 1)"));
    }
    let mut h = cfg.h_start;
    let mut scan = Vec::new();
    let chosen = loop {
        if h < cfg.h_min {
            return Err(Error::ScaleSearchFailure { min_h: cfg.h_min });
        }
        let bump = if cfg.pad_plateau {
            let pad = [grid.hx, grid.hy];
            if pad[0] / h >= 0.75 * PI / 8.0 || pad[1] / h >= 0.75 * PI / 16.0 {
                return Err(Error::GridTooCoarse(format!(
                    "plateau padding of one cell does not fit the transition of chi_h for h = {h}"
                )));
            }
            Bump { h, pad }
        } else {
            Bump::new(h)
        };
        let w = box_region("W", grid, bump.plateau_box());
        let ext = axis_extent(&w);
        if ext[0] < 4 || ext[1] < 4 {
            return Err(Error::GridTooCoarse(format!(
                "W_h for h = {h} holds {}x{} nodes, need at least 4x4",
                ext[0], ext[1]
            )));
        }
        let v = box_region("V", grid, bump.support_box());
        let (phi, chi) = glue(grid, &pair, &bump);
        let d2 = gradient_dirichlet(&phi).y;
        let c_min = v.indices().map(|k| d2.values[k]).fold(f64::INFINITY, f64::min);
        scan.push((h, c_min));
        if c_min >= cfg.c_floor {
            break (bump, phi, chi, v, w, c_min);
        }
        h *= 0.5;
    };
    let (bump, phi, chi, v_region, w_region, c_min) = chosen;
    let h0 = bump.h;

    let lap = laplacian(&phi);
    let grad = gradient_dirichlet(&phi);
    let mut drift = VectorField::zeros(grid);
    for k in v_region.indices() {
        if w_region.contains(k) {
            continue;
        }
        let d2 = grad.y.values[k];
        // the scan guarantees d2 >= c_floor on V; keep the guard structural
        if d2 >= cfg.c_floor {
            drift.y.values[k] = (pair.s * phi.values[k] + lap.values[k]) / d2;
        }
    }
    let ce = Counterexample {
        grid,
        h0,
        bump,
        pair,
        chi,
        phi,
        drift,
        v_region,
        w_region,
    };

    let obs_residual = ce
        .w_region
        .indices()
        .map(|k| {
            let x = grid.coords(k);
            let c = bump.value(x);
            let dc = bump.gradient(x)[0];
            let d1 = dc * (pair.g(x) - pair.f(x)) + c * pair.g_grad(x)[0] + (1.0 - c) * pair.f_grad(x)[0];
            d1.abs()
        })
        .fold(0.0, f64::max);
    let obs_residual_discrete = ce
        .w_region
        .indices()
        .filter(|&k| {
            let (i, j) = grid.ij(k);
            i > 0 && i + 1 < grid.nx && ce.w_region.contains(grid.idx(i - 1, j)) && ce.w_region.contains(grid.idx(i + 1, j))
        })
        .map(|k| grad.x.values[k].abs())
        .fold(0.0, f64::max);
    let mut boundary_max: f64 = 0.0;
    let (nx, ny) = (grid.nx as isize, grid.ny as isize);
    for i in -1..=nx {
        boundary_max = boundary_max.max(ce.phi_at(i, -1).abs()).max(ce.phi_at(i, ny).abs());
    }
    for j in -1..=ny {
        boundary_max = boundary_max.max(ce.phi_at(-1, j).abs()).max(ce.phi_at(nx, j).abs());
    }
    let eig_residual = eigen_residual(&ce.phi, &ce.drift, S_EIG);
    let eig_residual_s = eigen_residual(&ce.phi, &ce.drift, pair.s);
    let tol_residual = cfg.tol_factor * grid.h_max().powi(2);
    let phi_norm = ce.phi.norm_l2();
    let passed = eig_residual <= tol_residual && obs_residual <= 1e-12 && c_min >= cfg.c_floor && phi_norm > 0.0;
    let cert = CounterexampleCertificate {
        n: cfg.n,
        h0,
        plateau_pad: ce.bump.pad,
        s: pair.s,
        eigen_mode: cfg.eigen_mode,
        c_floor: cfg.c_floor,
        c_min,
        eig_residual,
        eig_residual_s,
        tol_residual,
        obs_residual,
        obs_residual_discrete,
        phi_norm,
        boundary_max,
        u2_max: ce.drift.y.norm_inf(),
        w_nodes: axis_extent(&ce.w_region),
        h_scan: scan,
        passed,
    };
    Ok((ce, cert))
}

/// Initial datum of the HUM corroboration (normalized to unit L2 norm).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HautusInitial {
    /// `phi_h0` itself.
    Phi,
    /// `chi_h0 phi_h0`, the obstructed direction localized to `V_h0`.
    #[default]
    Localized,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct HautusConfig {
    #[serde(default)]
    pub initial: HautusInitial,
    pub t_final: f64,
    pub nt: usize,
    pub k_list: Vec<f64>,
    pub k_carleman: f64,
    pub p: u32,
}

impl Default for HautusConfig {
    fn default() -> Self {
        Self {
            initial: HautusInitial::Localized,
            t_final: 0.03,
            nt: 10,
            k_list: vec![1e2, 1e3, 1e4, 1e5, 1e6],
            k_carleman: 9e-5,
            p: 2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HautusReport {
    pub certificate: CounterexampleCertificate,
    /// `max_n |psi(t_n) - exp(-s (T - t_n)) phi| / |phi|`.
    pub eigen_decay_error: f64,
    pub reduced: DecayStudy,
    pub full: DecayStudy,
}

pub fn hautus_violation_report(
    ce: &Counterexample,
    cert: &CounterexampleCertificate,
    cfg: &HautusConfig,
) -> Result<HautusReport> {
    if !cert.passed {
        return Err(Error::CertificationFailure("certificate did not pass".into()));
    }
    let grid = ce.grid;
    let time = TimeGrid::new(cfg.t_final, cfg.nt)?;
    let drift = Drift::Steady(ce.drift.clone());
    let psi = solve_adjoint(&ce.phi, &drift, grid, time)?;
    let phi_norm = ce.phi.norm_l2();
    let eigen_decay_error = (0..=time.nt)
        .map(|n| {
            let exact = ce.phi.scaled((-S_EIG * (cfg.t_final - time.t(n))).exp());
            psi.snapshots[n].sub(&exact).norm_l2() / phi_norm
        })
        .fold(0.0, f64::max);
    let omega = ce.w_region.clone();
    let omega0 = omega.eroded(1, "omega0");
    let theta = build_cutoff(&omega0, &omega)?;
    let y0 = match cfg.initial {
        HautusInitial::Phi => ce.phi.clone(),
        HautusInitial::Localized => ce.phi.mul(&ce.chi),
    };
    let y0 = y0.scaled(1.0 / y0.norm_l2());
    let mk = |op: ControlOperator| {
        let mut h = HumConfig::new(op, theta.clone(), drift.clone());
        h.k_carleman = cfg.k_carleman;
        h.p = cfg.p;
        h
    };
    let reduced = decay_study(&y0, &mk(ControlOperator::first_axis()), &cfg.k_list, grid, time)?;
    let full = decay_study(&y0, &mk(ControlOperator::identity()), &cfg.k_list, grid, time)?;
    Ok(HautusReport {
        certificate: cert.clone(),
        eigen_decay_error,
        reduced,
        full,
    })
}

/// Callback drift for rank scans: nested central differences of
/// [`Counterexample::drift_at`] with step `h_fd`.
#[derive(Debug, Clone, Copy)]
pub struct ClosedFormDrift<'a> {
    pub ce: &'a Counterexample,
    pub h_fd: f64,
}

impl ClosedFormDrift<'_> {
    fn nested(&self, x: [f64; 2], dirs: &[[f64; 2]]) -> [f64; 2] {
        match dirs.split_first() {
            None => self.ce.drift_at(x),
            Some((d, rest)) => {
                let h = self.h_fd;
                let a = self.nested([x[0] + h * d[0], x[1] + h * d[1]], rest);
                let b = self.nested([x[0] - h * d[0], x[1] - h * d[1]], rest);
                [(a[0] - b[0]) / (2.0 * h), (a[1] - b[1]) / (2.0 * h)]
            }
        }
    }
}

impl DirectionalDerivatives for ClosedFormDrift<'_> {
    fn derivative(&self, _t: f64, x: [f64; 2], dirs: &[[f64; 2]]) -> Result<[f64; 2]> {
        Ok(self.nested(x, dirs))
    }
}

/// `max_x |d_2 chi_h|` times `h`, from the closed-form derivative on `grid`.
pub fn chi_gradient_constant(h: f64, grid: Grid2D) -> f64 {
    let b = Bump::new(h);
    (0..grid.len())
        .map(|k| b.gradient(grid.coords(k))[1].abs())
        .fold(0.0, f64::max)
        * h
}

/// `(f, grad f, g, grad g)` at `P` from centred differences (requires `P` on the grid).
pub fn point_values(grid: Grid2D) -> Result<([f64; 3], [f64; 3])> {
    let (f, g) = build_fg(grid)?;
    let k = grid.nearest_node([FRAC_PI_2, FRAC_PI_4]);
    let [x, y] = grid.coords(k);
    if (x - FRAC_PI_2).abs() > 1e-12 || (y - FRAC_PI_4).abs() > 1e-12 {
        return Err(Error::invalid("grid", "(pi/2, pi/4) must be a grid node: use n + 1 divisible by 4"));
    }
    let gf = gradient(&f);
    let gg = gradient(&g);
    Ok((
        [f.values[k], gf.x.values[k], gf.y.values[k]],
        [g.values[k], gg.x.values[k], gg.y.values[k]],
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_sines() {
        assert_eq!(sin_pi_ratio(0, 7), 0.0);
        assert_eq!(sin_pi_ratio(21, 7), 0.0);
        assert_eq!(sin_pi_ratio(-14, 7), 0.0);
        for (a, b) in [(1, 7), (5, 7), (9, 7), (-3, 8), (13, 8)] {
            assert!((sin_pi_ratio(a, b) - (PI * a as f64 / b as f64).sin()).abs() < 1e-15);
        }
    }

    #[test]
    fn g_forms_agree() {
        let p = Eigenpair { omega: 5.0, s: 25.0 };
        for y in [0.1, 0.7, 1.3, 2.9] {
            let alt = 0.8 * (5.0 * (y - FRAC_PI_4)).sin();
            assert!((p.g([0.0, y]) - alt).abs() < 1e-14);
        }
    }

    #[test]
    fn smooth_step_limits() {
        assert_eq!(smooth_step(0.0), 0.0);
        assert_eq!(smooth_step(1.0), 1.0);
        assert!((smooth_step(0.5) - 0.5).abs() < 1e-15);
        let h = 1e-6;
        for t in [0.2, 0.5, 0.9] {
            let fd = (smooth_step(t + h) - smooth_step(t - h)) / (2.0 * h);
            assert!((fd - smooth_step_deriv(t)).abs() < 1e-6);
        }
    }

    #[test]
    fn smooth_step_second_derivative() {
        let h = 1e-5;
        for t in [0.15, 0.4, 0.5, 0.8] {
            let fd = (smooth_step_deriv(t + h) - smooth_step_deriv(t - h)) / (2.0 * h);
            assert!((fd - smooth_step_deriv2(t)).abs() < 1e-5 * (1.0 + fd.abs()), "t = {t}");
        }
        assert_eq!(smooth_step_deriv2(1e-4), 0.0);
    }

    #[test]
    fn closed_form_drift_tracks_grid_drift() {
        let mut gaps = vec![];
        for n in [255, 511] {
            let cfg = CounterexampleConfig { n, ..Default::default() };
            let (ce, _) = build_certificate(&cfg).unwrap();
            let mut err: f64 = 0.0;
            for k in 0..ce.grid.len() {
                let u = ce.drift_at(ce.grid.coords(k));
                err = err.max((u[1] - ce.drift.y.values[k]).abs());
                if ce.w_region.contains(k) {
                    assert_eq!(u, [0.0, 0.0]);
                }
            }
            gaps.push(err);
        }
        assert!(gaps[0] / gaps[1] > 3.0, "{gaps:?}");
    }

    #[test]
    fn chi_support_and_plateau() {
        let g = Grid2D::unit_pi(63).unwrap();
        for h in [0.5, 0.25] {
            let chi = build_chi(h, g).unwrap();
            let b = Bump::new(h);
            let w = box_region("W", g, b.plateau_box());
            let v = box_region("V", g, b.support_box());
            for k in 0..g.len() {
                let c = chi.values[k];
                assert!((0.0..=1.0).contains(&c));
                if w.contains(k) {
                    assert_eq!(c, 1.0);
                }
                if !v.contains(k) {
                    assert_eq!(c, 0.0);
                }
            }
        }
        assert!(build_chi(1.0, g).is_err());
    }

    #[test]
    fn rejects_wrong_domain() {
        let g = Grid2D::new(7, 7, 1.0, 1.0).unwrap();
        assert!(build_fg(g).is_err());
    }
}
