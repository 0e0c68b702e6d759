//! Carleman weights, the weighted functional `I(s, lambda; u)` and sampled
//! observability ratios.
//!
//! All weighted quadratures are accumulated in log space: for the default
//! parameters `exp(-2 s alpha)` is far below the smallest positive double.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{
    hessian_norm_sq, ops::gradient_dirichlet, FieldTrajectory, Grid2D, Region, ScalarField, TimeGrid,
};
use crate::error::{Error, Result};
use crate::pde::{Drift, Propagator};
use crate::reduced::ControlOperator;
use crate::sparse::SolverOptions;

/// Certification threshold for `kappa`.
pub const KAPPA_MIN: f64 = 1e-6;

/// Running `log(sum exp(x_i))`.
#[derive(Debug, Clone, Copy)]
pub struct LogSum {
    max: f64,
    acc: f64,
}

impl Default for LogSum {
    fn default() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            acc: 0.0,
        }
    }
}

impl LogSum {
    pub fn push(&mut self, x: f64) {
        if x == f64::NEG_INFINITY {
            return;
        }
        if x <= self.max {
            self.acc += (x - self.max).exp();
        } else {
            self.acc = self.acc * (self.max - x).exp() + 1.0;
            self.max = x;
        }
    }

    /// Adds `exp(log_w) * v` for `v >= 0`.
    pub fn push_weighted(&mut self, log_w: f64, v: f64) {
        if v > 0.0 {
            self.push(log_w + v.ln());
        }
    }

    pub fn merge(&mut self, other: LogSum) {
        if other.max == f64::NEG_INFINITY {
            return;
        }
        self.push(other.max + other.acc.ln());
    }

    pub fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.acc.ln()
        }
    }
}

/// Weight `eta0 = S(psi_1(x_1/L_1)) S(psi_2(x_2/L_2))` with `S(u) = sin(pi u)`
/// and `psi(s) = s / (s + r (1 - s))`, `r = c / (1 - c)`, which moves the
/// single critical point of the product of sines to `(c_1 L_1, c_2 L_2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Eta0 {
    pub field: ScalarField,
    pub kappa: f64,
    pub center: [f64; 2],
    /// `max eta0 = 1`, attained at `center`.
    pub norm_inf: f64,
    ratios: [f64; 2],
    lengths: [f64; 2],
}

fn warp(s: f64, r: f64) -> (f64, f64) {
    let den = s + r * (1.0 - s);
    (s / den, r / (den * den))
}

fn sin_pi_unit(u: f64) -> f64 {
    (std::f64::consts::PI * u.min(1.0 - u)).sin()
}

impl Eta0 {
    pub fn value(&self, x: [f64; 2]) -> f64 {
        let u1 = warp(x[0] / self.lengths[0], self.ratios[0]).0;
        let u2 = warp(x[1] / self.lengths[1], self.ratios[1]).0;
        sin_pi_unit(u1) * sin_pi_unit(u2)
    }

    pub fn gradient(&self, x: [f64; 2]) -> [f64; 2] {
        use std::f64::consts::PI;
        let (u1, d1) = warp(x[0] / self.lengths[0], self.ratios[0]);
        let (u2, d2) = warp(x[1] / self.lengths[1], self.ratios[1]);
        [
            PI * d1 / self.lengths[0] * (PI * u1).cos() * sin_pi_unit(u2),
            PI * d2 / self.lengths[1] * (PI * u2).cos() * sin_pi_unit(u1),
        ]
    }
}

pub fn build_eta0(grid: Grid2D, omega1: &Region) -> Result<Eta0> {
    grid.check_same(&omega1.grid)?;
    let center = omega1
        .centroid()
        .ok_or_else(|| Error::invalid("omega1", "empty region"))?;
    let lengths = [grid.lx, grid.ly];
    let ratios = [0, 1].map(|a| {
        let c = center[a] / lengths[a];
        c / (1.0 - c)
    });
    let mut eta = Eta0 {
        field: ScalarField::zeros(grid),
        kappa: 0.0,
        center,
        norm_inf: 1.0,
        ratios,
        lengths,
    };
    eta.field = ScalarField::from_fn(grid, |x, y| eta.value([x, y]));
    if !omega1.contains(grid.nearest_node(center)) {
        return Err(Error::CertificationFailure(
            "critical point of eta0 is not captured by omega1".into(),
        ));
    }
    if eta.field.min() <= 0.0 {
        return Err(Error::CertificationFailure("eta0 is not positive inside the domain".into()));
    }
    let kappa = (0..grid.len())
        .filter(|&k| !omega1.contains(k))
        .map(|k| {
            let g = eta.gradient(grid.coords(k));
            g[0].hypot(g[1])
        })
        .fold(f64::INFINITY, f64::min);
    if kappa.partial_cmp(&KAPPA_MIN) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::CertificationFailure(format!(
            "min |grad eta0| outside omega1 is {kappa:.3e} <= {KAPPA_MIN:.0e}"
        )));
    }
    eta.kappa = kappa;
    Ok(eta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarlemanParams {
    pub s: f64,
    pub lambda: f64,
    pub p: u32,
    pub mu: f64,
}

impl CarlemanParams {
    /// `s = 2 (T^p + T^{2p})`, `lambda = 2`, `p = 2`, `mu = 1`.
    pub fn defaults(t_final: f64) -> Self {
        let p = 2;
        Self {
            s: 2.0 * (t_final.powi(p as i32) + t_final.powi(2 * p as i32)),
            lambda: 2.0,
            p,
            mu: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.s > 0.0 && self.s.is_finite()) {
            return Err(Error::invalid("s", "must be positive"));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda", "must be positive"));
        }
        if self.p < 2 {
            return Err(Error::invalid("p", "must be an integer >= 2"));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::invalid("mu", "must be positive"));
        }
        Ok(())
    }
}

/// `alpha`, `xi` on interior time nodes `t_1..t_{nt-1}` and all interior space nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct CarlemanWeights {
    pub params: CarlemanParams,
    pub eta0: ScalarField,
    pub eta_norm_inf: f64,
    pub time: TimeGrid,
    /// `times[i] = t_{i+1}`.
    pub times: Vec<f64>,
    pub alpha: Vec<Vec<f64>>,
    pub xi: Vec<Vec<f64>>,
    /// Closure values (`eta0 = 0`), i.e. the extrema over the closed domain.
    pub alpha_star: Vec<f64>,
    pub xi_star: Vec<f64>,
}

pub fn eval_weights(eta0: &Eta0, params: CarlemanParams, time: TimeGrid) -> Result<CarlemanWeights> {
    params.validate()?;
    let p = params.p as i32;
    let lam = params.lambda;
    let en = eta0.norm_inf;
    let top = (2.0 * p as f64 + 2.0) * lam * en;
    if top > 700.0 {
        return Err(Error::invalid("lambda", format!("exp({top:.1}) overflows")));
    }
    let e_top = top.exp();
    let e_bdry = (lam * 2.0 * p as f64 * en).exp();
    let inner: Vec<f64> = eta0
        .field
        .values
        .iter()
        .map(|&e| (lam * (2.0 * p as f64 * en + e)).exp())
        .collect();
    let t_final = time.t_final;
    let times: Vec<f64> = (1..time.nt).map(|n| time.t(n)).collect();
    let mut alpha = Vec::with_capacity(times.len());
    let mut xi = Vec::with_capacity(times.len());
    let mut alpha_star = Vec::with_capacity(times.len());
    let mut xi_star = Vec::with_capacity(times.len());
    for &t in &times {
        let den = t.powi(p) * (t_final - t).powi(p);
        alpha.push(inner.iter().map(|&e| (e_top - e) / den).collect());
        xi.push(inner.iter().map(|&e| e / den).collect());
        alpha_star.push((e_top - e_bdry) / den);
        xi_star.push(e_bdry / den);
    }
    Ok(CarlemanWeights {
        params,
        eta0: eta0.field.clone(),
        eta_norm_inf: en,
        time,
        times,
        alpha,
        xi,
        alpha_star,
        xi_star,
    })
}

impl CarlemanWeights {
    /// Node indices of `max_x alpha(t_i, x)` and `min_x xi(t_i, x)`.
    pub fn node_extremes(&self, i: usize) -> (usize, usize) {
        let a = &self.alpha[i];
        let x = &self.xi[i];
        let amax = (0..a.len()).max_by(|&p, &q| a[p].total_cmp(&a[q])).unwrap_or(0);
        let xmin = (0..x.len()).min_by(|&p, &q| x[p].total_cmp(&x[q])).unwrap_or(0);
        (amax, xmin)
    }

    fn check_trajectory(&self, u: &FieldTrajectory) -> Result<()> {
        self.eta0.grid.check_same(&u.grid())?;
        if u.time.nt != self.time.nt {
            return Err(Error::ShapeMismatch("trajectory and weights use different time grids".into()));
        }
        Ok(())
    }
}

/// `log I(s, lambda; u)` (`-inf` when `u = 0`), lambda taken from the weights.
pub fn eval_log_i(s: f64, u: &FieldTrajectory, w: &CarlemanWeights) -> Result<f64> {
    w.check_trajectory(u)?;
    if !(s > 0.0) {
        return Err(Error::invalid("s", "must be positive"));
    }
    let lam = w.params.lambda;
    let g = u.grid();
    let cell = (g.cell_area() * w.time.dt).ln();
    let c0 = 3.0 * s.ln() + 4.0 * lam.ln() + cell;
    let c1 = s.ln() + 2.0 * lam.ln() + cell;
    let mut acc = LogSum::default();
    for (i, (alpha, xi)) in w.alpha.iter().zip(&w.xi).enumerate() {
        let field = &u.snapshots[i + 1];
        let grad = gradient_dirichlet(field);
        for k in 0..g.len() {
            let base = -2.0 * s * alpha[k];
            let lx = xi[k].ln();
            let v = field.values[k];
            acc.push_weighted(c0 + base + 3.0 * lx, v * v);
            let gg = grad.x.values[k].powi(2) + grad.y.values[k].powi(2);
            acc.push_weighted(c1 + base + lx, gg);
        }
    }
    Ok(acc.value())
}

/// `I(s, lambda; u)`; underflows to 0 when the weights do.
pub fn eval_i(s: f64, u: &FieldTrajectory, w: &CarlemanWeights) -> Result<f64> {
    Ok(eval_log_i(s, u, w)?.exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Inequality {
    /// Weighted derivative ladder against `|grad psi|^2` (or `|B* grad psi|^2`) on `omega0`.
    Gradient,
    /// `psi(0)` plus `exp(-2K/(eta (T-t)^p))`-weighted norms against the reduced observation.
    Reduced { k: f64, eta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioFlag {
    Ok,
    /// Both sides vanish.
    Indeterminate,
    /// Observation vanishes while the left side does not: ratio is `+inf`.
    RhsVanishes,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RatioConfig {
    pub inequality: Inequality,
    pub n_samples: usize,
    pub n_trunc: usize,
    /// Terminal data are random combinations of `sin(a x_1) sin(b x_2)`, `a, b <= modes`.
    pub modes: usize,
    pub seed: u64,
}

impl Default for RatioConfig {
    fn default() -> Self {
        Self {
            inequality: Inequality::Gradient,
            n_samples: 20,
            n_trunc: 1,
            modes: 3,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatioReport {
    pub samples: usize,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub log_lhs: Vec<f64>,
    pub log_rhs: Vec<f64>,
    pub ratio: Vec<Option<f64>>,
    pub max_ratio: Option<f64>,
    pub flags: Vec<RatioFlag>,
}

/// One sample's pair `(log LHS, log RHS)`.
#[derive(Debug, Clone, Copy)]
pub struct RatioSample {
    pub log_lhs: f64,
    pub log_rhs: f64,
}

impl RatioSample {
    pub fn classify(&self) -> (Option<f64>, RatioFlag) {
        match (self.log_lhs == f64::NEG_INFINITY, self.log_rhs == f64::NEG_INFINITY) {
            (true, true) => (None, RatioFlag::Indeterminate),
            (false, true) => (Some(f64::INFINITY), RatioFlag::RhsVanishes),
            _ => (Some((self.log_lhs - self.log_rhs).exp()), RatioFlag::Ok),
        }
    }
}

/// Adjoint solves plus weighted quadratures for one inequality.
pub struct ObservabilityProbe<'a> {
    propagator: Propagator,
    observation: Option<&'a ControlOperator>,
    omega0: &'a Region,
    weights: &'a CarlemanWeights,
    inequality: Inequality,
    n_trunc: usize,
}

impl<'a> ObservabilityProbe<'a> {
    pub fn new(
        drift: &Drift,
        observation: Option<&'a ControlOperator>,
        omega0: &'a Region,
        weights: &'a CarlemanWeights,
        inequality: Inequality,
        n_trunc: usize,
    ) -> Result<Self> {
        if !(1..=2).contains(&n_trunc) {
            return Err(Error::invalid("n_trunc", "must be 1 or 2"));
        }
        if let Inequality::Reduced { k, eta } = inequality {
            if !(k > 0.0) {
                return Err(Error::invalid("K", "must be positive"));
            }
            if !(eta > 0.0 && eta < 1.0) {
                return Err(Error::invalid("eta", "must lie in (0, 1)"));
            }
        }
        let grid = weights.eta0.grid;
        grid.check_same(&omega0.grid)?;
        let propagator = Propagator::new(grid, weights.time, drift, SolverOptions::default())?;
        Ok(Self {
            propagator,
            observation,
            omega0,
            weights,
            inequality,
            n_trunc,
        })
    }

    fn observed(&self, gx: f64, gy: f64) -> f64 {
        match self.observation {
            None => gx * gx + gy * gy,
            Some(b) => b
                .columns()
                .iter()
                .map(|c| (c[0] * gx + c[1] * gy).powi(2))
                .sum(),
        }
    }

    pub fn sample(&self, psi0: &ScalarField) -> Result<RatioSample> {
        let psi = self.propagator.backward(psi0)?.nodes;
        Ok(match self.inequality {
            Inequality::Gradient => self.gradient_sides(&psi),
            Inequality::Reduced { k, eta } => self.reduced_sides(&psi, k, eta),
        })
    }

    fn gradient_sides(&self, psi: &FieldTrajectory) -> RatioSample {
        let w = self.weights;
        let CarlemanParams { s, lambda, mu, .. } = w.params;
        let g = psi.grid();
        let n = self.n_trunc - 1;
        let cell = (g.cell_area() * w.time.dt).ln();
        let ll = lambda.ln();
        let ls = s.ln();
        let mut lhs = LogSum::default();
        let mut rhs = LogSum::default();
        for (i, (alpha, xi)) in w.alpha.iter().zip(&w.xi).enumerate() {
            let f = &psi.snapshots[i + 1];
            let grad = gradient_dirichlet(f);
            let hess = (self.n_trunc == 2).then(|| hessian_norm_sq(f));
            let astar = w.alpha_star[i];
            let shift = -2.0 * mu * s * astar;
            let log_zero = cell + (2 * n + 2) as f64 * ll - 2.0 * s * astar + shift
                + (2 * n + 1) as f64 * (ls + w.xi_star[i].ln());
            for k in 0..g.len() {
                let base = cell - 2.0 * s * alpha[k] + shift;
                let lsx = ls + xi[k].ln();
                let gg = grad.x.values[k].powi(2) + grad.y.values[k].powi(2);
                // j = 1 rung of the ladder
                lhs.push_weighted(base + (2 * n + 2) as f64 * ll + (2 * n + 1) as f64 * lsx, gg);
                if let Some(h) = &hess {
                    lhs.push_weighted(base + (2 * n) as f64 * ll + (2 * n - 1) as f64 * lsx, h.values[k]);
                }
                lhs.push_weighted(log_zero, f.values[k].powi(2));
                if self.omega0.contains(k) {
                    let obs = self.observed(grad.x.values[k], grad.y.values[k]);
                    rhs.push_weighted(base + (2 * n + 2) as f64 * ll + (2 * n + 1) as f64 * lsx, obs);
                }
            }
        }
        RatioSample {
            log_lhs: lhs.value(),
            log_rhs: rhs.value(),
        }
    }

    fn reduced_sides(&self, psi: &FieldTrajectory, k_car: f64, eta: f64) -> RatioSample {
        let time = psi.time;
        let g = psi.grid();
        let p = self.weights.params.p as i32;
        let lcell = g.cell_area().ln();
        let mut lhs = LogSum::default();
        let mut rhs = LogSum::default();
        for v in &psi.snapshots[0].values {
            lhs.push_weighted(lcell, v * v);
        }
        for n in 0..time.nt {
            let tau = (time.t_final - time.t(n)).powi(p);
            let quad = if n == 0 { 0.5 } else { 1.0 } * time.dt;
            let lw_l = lcell + quad.ln() - 2.0 * k_car / (eta * tau);
            let lw_r = lcell + quad.ln() - 2.0 * k_car / tau;
            let f = &psi.snapshots[n];
            let grad = gradient_dirichlet(f);
            let hess = (self.n_trunc == 2).then(|| hessian_norm_sq(f));
            for k in 0..g.len() {
                let gx = grad.x.values[k];
                let gy = grad.y.values[k];
                let mut dens = f.values[k].powi(2) + gx * gx + gy * gy;
                if let Some(h) = &hess {
                    let dt_psi = if n == 0 {
                        (psi.snapshots[1].values[k] - f.values[k]) / time.dt
                    } else {
                        (psi.snapshots[n + 1].values[k] - psi.snapshots[n - 1].values[k]) / (2.0 * time.dt)
                    };
                    dens += h.values[k] + dt_psi * dt_psi;
                }
                lhs.push_weighted(lw_l, dens);
                if self.omega0.contains(k) {
                    rhs.push_weighted(lw_r, self.observed(gx, gy));
                }
            }
        }
        RatioSample {
            log_lhs: lhs.value(),
            log_rhs: rhs.value(),
        }
    }
}

/// Random terminal datum for sample `index`.
pub fn random_terminal(grid: Grid2D, modes: usize, seed: u64, index: u64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let coef: Vec<f64> = (0..modes * modes).map(|_| StandardNormal.sample(&mut rng)).collect();
    let (ax, ay) = (std::f64::consts::PI / grid.lx, std::f64::consts::PI / grid.ly);
    ScalarField::from_fn(grid, |x, y| {
        let mut v = 0.0;
        for a in 0..modes {
            for b in 0..modes {
                v += coef[a * modes + b] * ((a + 1) as f64 * ax * x).sin() * ((b + 1) as f64 * ay * y).sin();
            }
        }
        v
    })
}

pub fn summarize(samples: &[RatioSample]) -> RatioReport {
    let mut ratio = Vec::with_capacity(samples.len());
    let mut flags = Vec::with_capacity(samples.len());
    for s in samples {
        let (r, f) = s.classify();
        ratio.push(r);
        flags.push(f);
    }
    let max_ratio = ratio.iter().flatten().copied().fold(None, |m: Option<f64>, r| Some(m.map_or(r, |m| m.max(r))));
    RatioReport {
        samples: samples.len(),
        lhs: samples.iter().map(|s| s.log_lhs.exp()).collect(),
        rhs: samples.iter().map(|s| s.log_rhs.exp()).collect(),
        log_lhs: samples.iter().map(|s| s.log_lhs).collect(),
        log_rhs: samples.iter().map(|s| s.log_rhs).collect(),
        ratio,
        max_ratio,
        flags,
    }
}

/// Samples `cfg.n_samples` random terminal data (in parallel) and reports LHS/RHS.
pub fn observability_ratio(
    drift: &Drift,
    observation: Option<&ControlOperator>,
    omega0: &Region,
    weights: &CarlemanWeights,
    cfg: &RatioConfig,
) -> Result<RatioReport> {
    if cfg.n_samples == 0 {
        return Err(Error::invalid("n_samples", "must be at least 1"));
    }
    if cfg.modes == 0 {
        return Err(Error::invalid("modes", "must be at least 1"));
    }
    let probe = ObservabilityProbe::new(drift, observation, omega0, weights, cfg.inequality, cfg.n_trunc)?;
    let grid = weights.eta0.grid;
    let samples = (0..cfg.n_samples as u64)
        .into_par_iter()
        .map(|i| probe.sample(&random_terminal(grid, cfg.modes, cfg.seed, i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(&samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn centered(grid: Grid2D) -> Region {
        let c = std::f64::consts::FRAC_PI_2;
        Region::from_box("omega1", grid, [c - 0.4, c + 0.4], [c - 0.4, c + 0.4]).unwrap()
    }

    #[test]
    fn logsum_matches_direct() {
        let xs = [-3.0, 1.5, 0.2, -700.0, 2.0];
        let mut acc = LogSum::default();
        xs.iter().for_each(|&x| acc.push(x));
        let direct: f64 = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert!((acc.value() - direct).abs() < 1e-14);
        assert_eq!(LogSum::default().value(), f64::NEG_INFINITY);
    }

    #[test]
    fn eta0_centered_is_unshifted_sine_product() {
        let g = Grid2D::unit_pi(15).unwrap();
        let eta = build_eta0(g, &centered(g)).unwrap();
        for k in 0..g.len() {
            let [x, y] = g.coords(k);
            assert!((eta.field.values[k] - x.sin() * y.sin()).abs() < 1e-14);
        }
        assert!(eta.kappa > KAPPA_MIN);
    }

    #[test]
    fn eta0_shifted_to_corner_block() {
        let g = Grid2D::unit_pi(31).unwrap();
        let w1 = Region::from_box("omega1", g, [0.3, 0.7], [2.3, 2.7]).unwrap();
        let eta = build_eta0(g, &w1).unwrap();
        let c = eta.center;
        let grad = eta.gradient(c);
        assert!(grad[0].abs() < 1e-12 && grad[1].abs() < 1e-12);
        assert!((eta.value(c) - 1.0).abs() < 1e-14);
        assert!(eta.kappa > KAPPA_MIN);
        assert!(eta.field.max() <= 1.0);
        // boundary values vanish exactly
        assert_eq!(eta.value([0.0, 1.0]), 0.0);
        assert_eq!(eta.value([g.lx, 1.0]), 0.0);
    }

    #[test]
    fn eta0_rejects_empty_region() {
        let g = Grid2D::unit_pi(8).unwrap();
        assert!(build_eta0(g, &Region::empty("w", g)).is_err());
    }

    #[test]
    fn weights_blow_up_at_time_ends() {
        let g = Grid2D::unit_pi(8).unwrap();
        let t = TimeGrid::new(1.0, 20).unwrap();
        let eta = build_eta0(g, &centered(g)).unwrap();
        let w = eval_weights(&eta, CarlemanParams::defaults(1.0), t).unwrap();
        let k = g.idx(4, 4);
        assert!(w.alpha[0][k] > 10.0 * w.alpha[9][k]);
        assert!(w.alpha[18][k] > 10.0 * w.alpha[9][k]);
        assert!(w.alpha.iter().flatten().all(|&a| a >= 0.0));
    }
}
