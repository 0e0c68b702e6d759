//! Penalized HUM null controls for the linearized equation, the weight
//! system of the fixed point, and a Picard driver for controllability to
//! trajectories of the nonlinear equation.
//!
//! For the penalty `k` the control minimizes
//! `J_k(v) = 1/2 sum_n dt |v^n|^2 / rho~_n + k/2 |z(T)|^2`. Writing
//! `Lambda: v -> z(T)` for zero initial data, the optimum is
//! `v = -rho~ B*phi` with `phi(T) = k z(T)`, where `phi(T)` solves
//! `(Lambda rho~ Lambda^T + I/k) phi(T) = z_free(T)`. The operator on the
//! left is SPD and is inverted by conjugate gradients.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{ControlField, FieldTrajectory, Grid2D, MidpointTrajectory, ScalarField, TimeGrid, VectorField};
use crate::error::{Error, Result};
use crate::pde::{AdjointTrajectory, ControlMap, Drift, Propagator, Source};
use crate::reduced::ControlOperator;
use crate::sparse::SolverOptions;

#[derive(Debug, Clone)]
pub struct HumConfig {
    /// Penalty on the terminal state.
    pub k: f64,
    /// Constant `K` of `rho~ = exp(-2K / (T - t)^p)`.
    pub k_carleman: f64,
    pub p: u32,
    pub operator: ControlOperator,
    pub theta: ScalarField,
    pub drift: Drift,
    pub cg_tol: f64,
    /// Defaults to `4 n + 100` for `n` unknowns.
    pub cg_maxit: Option<usize>,
    pub solver: SolverOptions,
}

impl HumConfig {
    pub fn new(operator: ControlOperator, theta: ScalarField, drift: Drift) -> Self {
        Self {
            k: 1e4,
            k_carleman: 1.0,
            p: 2,
            operator,
            theta,
            drift,
            cg_tol: 1e-10,
            cg_maxit: None,
            solver: SolverOptions::default(),
        }
    }

    pub fn with_k(mut self, k: f64) -> Self {
        self.k = k;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(Error::invalid("k", format!("penalty must be positive, got {}", self.k)));
        }
        if !(self.k_carleman > 0.0 && self.k_carleman.is_finite()) {
            return Err(Error::invalid("K", "must be positive"));
        }
        if self.p < 2 {
            return Err(Error::invalid("p", "must be an integer >= 2"));
        }
        if !(self.cg_tol > 0.0) {
            return Err(Error::invalid("cg_tol", "must be positive"));
        }
        self.theta.check_finite("theta")
    }

    /// `rho~(t_{n+1/2})` for every step.
    pub fn rho_tilde(&self, time: &TimeGrid) -> Vec<f64> {
        (0..time.nt)
            .map(|n| (-2.0 * self.k_carleman / (time.t_final - time.t_mid(n)).powi(self.p as i32)).exp())
            .collect()
    }
}

/// Forward/adjoint machinery shared by every penalty value.
pub struct HumSystem {
    propagator: Propagator,
    control: ControlMap,
    rho: Vec<f64>,
    cg_tol: f64,
    cg_maxit: usize,
}

impl HumSystem {
    pub fn new(cfg: &HumConfig, grid: Grid2D, time: TimeGrid) -> Result<Self> {
        Self::build(cfg, grid, time, None)
    }

    fn build(cfg: &HumConfig, grid: Grid2D, time: TimeGrid, weights: Option<MidpointTrajectory>) -> Result<Self> {
        cfg.validate()?;
        grid.check_same(&cfg.theta.grid)?;
        let propagator = Propagator::new(grid, time, &cfg.drift, cfg.solver)?;
        let mut control = ControlMap::new(cfg.operator.clone(), cfg.theta.clone());
        if let Some(w) = weights {
            control = control.with_weights(w);
        }
        Ok(Self {
            propagator,
            control,
            rho: cfg.rho_tilde(&time),
            cg_tol: cfg.cg_tol,
            cg_maxit: cfg.cg_maxit.unwrap_or(4 * grid.len() + 100),
        })
    }

    pub fn time(&self) -> TimeGrid {
        self.propagator.time()
    }

    pub fn rho_tilde(&self) -> &[f64] {
        &self.rho
    }

    pub fn control_map(&self) -> &ControlMap {
        &self.control
    }

    /// `B* phi^{n+1/2}` for every step.
    pub fn observe(&self, phi: &AdjointTrajectory) -> ControlField {
        let time = self.time();
        let m = self.control.m();
        let mut comps: Vec<Vec<ScalarField>> = vec![Vec::with_capacity(time.nt); m];
        for n in 0..time.nt {
            for (c, f) in self.control.adjoint(n, &phi.half_steps.steps[n]).into_iter().enumerate() {
                comps[c].push(f);
            }
        }
        ControlField {
            components: comps.into_iter().map(|steps| MidpointTrajectory { time, steps }).collect(),
        }
    }

    /// `v = -rho~ B* phi` for the adjoint started from `phi_t`.
    pub fn control_from_terminal(&self, phi_t: &ScalarField) -> Result<(AdjointTrajectory, ControlField)> {
        let phi = self.propagator.backward(phi_t)?;
        let mut v = self.observe(&phi);
        for comp in &mut v.components {
            for (n, f) in comp.steps.iter_mut().enumerate() {
                *f = f.scaled(-self.rho[n]);
            }
        }
        Ok((phi, v))
    }

    pub fn forward(&self, z0: &ScalarField, v: Option<&ControlField>, source: Source<'_>) -> Result<FieldTrajectory> {
        self.propagator.forward_with(z0, |n| {
            let c = v.map(|v| self.control.apply_control(n, v));
            match (c, source.at_step(n)) {
                (None, None) => None,
                (Some(a), None) | (None, Some(a)) => Some(a),
                (Some(a), Some(b)) => Some(a.add(&b)),
            }
        })
    }

    /// Gramian `Lambda rho~ Lambda^T phi_t`.
    pub fn gramian(&self, phi_t: &ScalarField) -> Result<ScalarField> {
        let (_, v) = self.control_from_terminal(phi_t)?;
        let zero = ScalarField::zeros(phi_t.grid);
        // the control enters with a minus sign
        Ok(self.forward(&zero, Some(&v), Source::None)?.last().scaled(-1.0))
    }

    pub fn penalized(&self, phi_t: &ScalarField, k: f64) -> Result<ScalarField> {
        let mut g = self.gramian(phi_t)?;
        g.axpy(1.0 / k, phi_t);
        Ok(g)
    }

    /// Conjugate gradients on `(G + I/k) x = b`; returns `(x, iterations, residual history)`.
    pub fn cg(&self, b: &ScalarField, k: f64) -> Result<(ScalarField, usize, Vec<f64>)> {
        let bnorm = b.norm_l2();
        let mut x = ScalarField::zeros(b.grid);
        let mut history = vec![1.0];
        if bnorm == 0.0 {
            history[0] = 0.0;
            return Ok((x, 0, history));
        }
        let mut r = b.clone();
        let mut p = r.clone();
        let mut rr = r.dot(&r);
        for it in 1..=self.cg_maxit {
            let ap = self.penalized(&p, k)?;
            let pap = p.dot(&ap);
            if !(pap > 0.0) {
                return Err(Error::CgDivergence {
                    iterations: it,
                    residual: rr.sqrt() / bnorm,
                    history,
                });
            }
            let a = rr / pap;
            x.axpy(a, &p);
            r.axpy(-a, &ap);
            let rr_new = r.dot(&r);
            let rel = rr_new.sqrt() / bnorm;
            history.push(rel);
            if rel <= self.cg_tol {
                return Ok((x, it, history));
            }
            let beta = rr_new / rr;
            rr = rr_new;
            let mut np = r.clone();
            np.axpy(beta, &p);
            p = np;
        }
        Err(Error::CgDivergence {
            iterations: self.cg_maxit,
            residual: history.last().copied().unwrap_or(f64::NAN),
            history,
        })
    }

    /// Full penalized solve from `z0` with an optional extra source.
    pub fn solve(&self, z0: &ScalarField, source: Source<'_>, k: f64) -> Result<HumResult> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::invalid("k", format!("penalty must be positive, got {k}")));
        }
        let free = self.forward(z0, None, source)?;
        let (phi_t, iterations, residual_history) = self.cg(free.last(), k)?;
        let (phi, v) = self.control_from_terminal(&phi_t)?;
        let z = self.forward(z0, Some(&v), source)?;
        let time = self.time();
        let bstar = self.observe(&phi);
        let mut cost = 0.0;
        let mut defect = 0.0;
        for (vc, bc) in v.components.iter().zip(&bstar.components) {
            for n in 0..time.nt {
                cost += time.dt * self.rho[n] * bc.steps[n].dot(&bc.steps[n]);
                let mut d = vc.steps[n].clone();
                d.axpy(self.rho[n], &bc.steps[n]);
                defect += time.dt * d.dot(&d);
            }
        }
        let terminal_norm = z.last().norm_l2();
        let jk = 0.5 * cost + 0.5 * k * terminal_norm * terminal_norm;
        let duality_value = 0.5 * z0.dot(phi.nodes.first());
        let optimality_residual = defect.sqrt() / v.norm_l2().max(1.0);
        let terminal_consistency = phi_t.sub(&z.last().scaled(k)).norm_l2() / phi_t.norm_l2().max(f64::MIN_POSITIVE);
        Ok(HumResult {
            k,
            v,
            z,
            phi_terminal: phi_t,
            phi,
            jk,
            duality_value,
            terminal_norm,
            optimality_residual,
            terminal_consistency,
            iterations,
            residual_history,
        })
    }
}

#[derive(Debug, Clone)]
pub struct HumResult {
    pub k: f64,
    pub v: ControlField,
    pub z: FieldTrajectory,
    pub phi_terminal: ScalarField,
    pub phi: AdjointTrajectory,
    pub jk: f64,
    /// `1/2 <z(0), phi(0)>`; equals `jk` for source-free problems.
    pub duality_value: f64,
    pub terminal_norm: f64,
    pub optimality_residual: f64,
    /// `|phi(T) - k z(T)| / |phi(T)|`, at CG tolerance level.
    pub terminal_consistency: f64,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumSummary {
    pub k: f64,
    #[serde(rename = "Jk")]
    pub jk: f64,
    pub duality_value: f64,
    pub terminal_norm: f64,
    pub optimality_residual: f64,
    pub terminal_consistency: f64,
    pub control_l2: f64,
    pub control_sup: f64,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
}

impl HumResult {
    pub fn summary(&self) -> HumSummary {
        HumSummary {
            k: self.k,
            jk: self.jk,
            duality_value: self.duality_value,
            terminal_norm: self.terminal_norm,
            optimality_residual: self.optimality_residual,
            terminal_consistency: self.terminal_consistency,
            control_l2: self.v.norm_l2(),
            control_sup: self.v.norm_inf(),
            iterations: self.iterations,
            residual_history: self.residual_history.clone(),
        }
    }
}

pub fn hum_solve(y0: &ScalarField, cfg: &HumConfig, grid: Grid2D, time: TimeGrid) -> Result<HumResult> {
    HumSystem::new(cfg, grid, time)?.solve(y0, Source::None, cfg.k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayRow {
    pub k: f64,
    pub terminal_norm: f64,
    #[serde(rename = "Jk")]
    pub jk: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayStudy {
    pub rows: Vec<DecayRow>,
    /// Least-squares slope of `log terminal_norm` against `log k`; `None` if a norm vanishes.
    pub slope: Option<f64>,
    pub jk_max: f64,
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

pub fn decay_study(y0: &ScalarField, cfg: &HumConfig, ks: &[f64], grid: Grid2D, time: TimeGrid) -> Result<DecayStudy> {
    if ks.len() < 3 {
        return Err(Error::invalid("k_list", "need at least 3 penalty values"));
    }
    if ks.windows(2).any(|w| !(w[1] > w[0])) || ks[0] <= 0.0 {
        return Err(Error::invalid("k_list", "penalties must be positive and increasing"));
    }
    let sys = HumSystem::new(cfg, grid, time)?;
    let rows = ks
        .par_iter()
        .map(|&k| {
            let r = sys.solve(y0, Source::None, k)?;
            Ok(DecayRow {
                k,
                terminal_norm: r.terminal_norm,
                jk: r.jk,
                iterations: r.iterations,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let slope = if rows.iter().all(|r| r.terminal_norm > 0.0) {
        let x: Vec<f64> = rows.iter().map(|r| r.k.ln()).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.terminal_norm.ln()).collect();
        Some(fit_slope(&x, &y))
    } else {
        None
    };
    let jk_max = rows.iter().map(|r| r.jk).fold(0.0, f64::max);
    Ok(DecayStudy { rows, slope, jk_max })
}

/// Outcome of the three parameter constraints of the fixed point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintChecks {
    /// `beta < alpha / q^{2p+2}`.
    pub condbeta: bool,
    /// `alpha < 2 beta` and `q^{2p+2} < 2`.
    pub condbeta2: bool,
    /// `alpha / q^{3p} < 1`.
    pub cond_eta: bool,
}

impl ConstraintChecks {
    pub fn evaluate(alpha: f64, beta: f64, q: f64, p: u32) -> Self {
        let q22 = q.powi(2 * p as i32 + 2);
        Self {
            condbeta: beta < alpha / q22,
            condbeta2: alpha < 2.0 * beta && q22 < 2.0,
            cond_eta: alpha / q.powi(3 * p as i32) < 1.0,
        }
    }

    pub fn all(&self) -> bool {
        self.condbeta && self.condbeta2 && self.cond_eta
    }
}

/// Time weights of the fixed point, stored as logarithms on the time nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointWeights {
    pub alpha_fp: f64,
    pub beta_fp: f64,
    pub q_fp: f64,
    pub p: u32,
    pub k_carleman: f64,
    pub time: TimeGrid,
    pub checks: ConstraintChecks,
    pub log_rho_f: Vec<f64>,
    pub log_rho0: Vec<f64>,
    pub log_rho: Vec<f64>,
    /// `log gamma(t) = K / t^p` (the constant `C` is 1).
    pub log_gamma: Vec<f64>,
    pub rho0_non_increasing: bool,
}

impl FixedPointWeights {
    pub fn new(alpha: f64, beta: f64, q: f64, p: u32, k_carleman: f64, time: TimeGrid) -> Result<Self> {
        if !(q > 1.0) || !(alpha > 0.0) || !(beta > 0.0) || !(k_carleman > 0.0) || p < 2 {
            return Err(Error::invalid(
                "fixed_point",
                "need q > 1, alpha > 0, beta > 0, K > 0 and p >= 2",
            ));
        }
        let checks = ConstraintChecks::evaluate(alpha, beta, q, p);
        if !checks.all() {
            return Err(Error::invalid("fixed_point", format!("weight constraints violated: {checks:?}")));
        }
        let mut w = Self {
            alpha_fp: alpha,
            beta_fp: beta,
            q_fp: q,
            p,
            k_carleman,
            time,
            checks,
            log_rho_f: vec![],
            log_rho0: vec![],
            log_rho: vec![],
            log_gamma: vec![],
            rho0_non_increasing: false,
        };
        let ts = time.node_times();
        w.log_rho_f = ts.iter().map(|&t| w.log_rho_f_at(t)).collect();
        w.log_rho0 = ts.iter().map(|&t| w.log_rho0_at(t)).collect();
        w.log_rho = ts.iter().map(|&t| w.log_rho_at(t)).collect();
        w.log_gamma = ts.iter().map(|&t| w.log_gamma_at(t)).collect();
        w.rho0_non_increasing = w.log_rho0.windows(2).all(|s| s[1] <= s[0]);
        Ok(w)
    }

    /// `q = (3/2)^{1/(2p+2)}`, `alpha = 1`, `beta = 7/12`.
    pub fn defaults(p: u32, k_carleman: f64, time: TimeGrid) -> Result<Self> {
        let q = 1.5f64.powf(1.0 / (2.0 * p as f64 + 2.0));
        Self::new(1.0, 7.0 / 12.0, q, p, k_carleman, time)
    }

    fn tau(&self, t: f64) -> f64 {
        (self.time.t_final - t).max(0.0)
    }

    pub fn log_rho_f_at(&self, t: f64) -> f64 {
        -self.alpha_fp / self.tau(t).powi(self.p as i32 + 1)
    }

    pub fn log_rho_at(&self, t: f64) -> f64 {
        -self.beta_fp / self.tau(t).powi(self.p as i32 + 1)
    }

    pub fn log_rho0_at(&self, t: f64) -> f64 {
        let p = self.p as i32;
        let q = self.q_fp;
        let tau = self.tau(t).min(self.time.t_final / (q * q));
        if tau == 0.0 {
            return f64::NEG_INFINITY;
        }
        self.k_carleman / ((q - 1.0) * tau).powi(p) - self.alpha_fp / (q.powi(2 * p + 2) * tau.powi(p + 1))
    }

    pub fn log_gamma_at(&self, t: f64) -> f64 {
        self.k_carleman / t.powi(self.p as i32)
    }

    pub fn switch_time(&self) -> f64 {
        self.time.t_final * (1.0 - 1.0 / (self.q_fp * self.q_fp))
    }
}

/// `log max_n |v^n|_inf / rho0(t_{n+1/2})`.
pub fn log_weighted_sup(v: &ControlField, fp: &FixedPointWeights) -> f64 {
    let time = v.time();
    let mut best = f64::NEG_INFINITY;
    for c in &v.components {
        for (n, f) in c.steps.iter().enumerate() {
            let s = f.norm_inf();
            if s > 0.0 {
                best = best.max(s.ln() - fp.log_rho0_at(time.t_mid(n)));
            }
        }
    }
    best
}

/// `log |f / rho_F|_{L^2(Q_T)}` for a per-step source.
pub fn log_weighted_source(f: &MidpointTrajectory, fp: &FixedPointWeights) -> f64 {
    let mut acc = crate::carleman::LogSum::default();
    for (n, s) in f.steps.iter().enumerate() {
        let e = s.dot(s) * f.time.dt;
        acc.push_weighted(-2.0 * fp.log_rho_f_at(f.time.t_mid(n)), e);
    }
    0.5 * acc.value()
}

fn check_reference(ybar: &FieldTrajectory, theta: &ScalarField) -> Result<()> {
    let sup = ybar.norm_inf();
    let threshold = 1e-8 * sup;
    let mut min = f64::INFINITY;
    for snap in &ybar.snapshots {
        for (k, &th) in theta.values.iter().enumerate() {
            if th > 0.0 {
                min = min.min(snap.values[k].abs());
            }
        }
    }
    if !(min >= threshold) || sup == 0.0 {
        return Err(Error::DegenerateReference { min, threshold });
    }
    Ok(())
}

fn reference_weights(ybar: &FieldTrajectory) -> MidpointTrajectory {
    MidpointTrajectory {
        time: ybar.time,
        steps: (0..ybar.time.nt).map(|n| ybar.midpoint(n)).collect(),
    }
}

#[derive(Debug, Clone)]
pub struct SourceControl {
    pub hum: HumResult,
    pub log_weighted_control: f64,
    pub log_weighted_source: Option<f64>,
}

/// Null control of `dz/dt = A z + Div(theta ybar B v) + f`.
pub fn source_control(
    z0: &ScalarField,
    fsrc: Option<&MidpointTrajectory>,
    ybar: &FieldTrajectory,
    cfg: &HumConfig,
    fp: &FixedPointWeights,
    grid: Grid2D,
    time: TimeGrid,
) -> Result<SourceControl> {
    check_reference(ybar, &cfg.theta)?;
    let sys = HumSystem::build(cfg, grid, time, Some(reference_weights(ybar)))?;
    let source = fsrc.map_or(Source::None, Source::Steps);
    let hum = sys.solve(z0, source, cfg.k)?;
    Ok(SourceControl {
        log_weighted_control: log_weighted_sup(&hum.v, fp),
        log_weighted_source: fsrc.map(|f| log_weighted_source(f, fp)),
        hum,
    })
}

#[derive(Debug, Clone)]
pub struct NonlinearResult {
    /// `ybar + w`.
    pub y: FieldTrajectory,
    pub w: FieldTrajectory,
    /// Control `r`, so that `u = ubar + theta B r`.
    pub r: ControlField,
    /// `u` at every step midpoint.
    pub u: Vec<VectorField>,
    pub iterations: usize,
    /// `|w^n - w^{n-1}|_{L^2(Q_T)}` per iteration.
    pub history: Vec<f64>,
    pub terminal_gap: f64,
    pub control_sup: f64,
    pub linear_terminal_norm: f64,
    /// `log max |r| / rho0`; the weighted space cannot be certified discretely.
    pub log_weighted_control: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonlinearSummary {
    pub iterations: usize,
    pub history: Vec<f64>,
    pub terminal_gap: f64,
    pub control_sup: f64,
    pub linear_terminal_norm: f64,
    pub log_weighted_control: f64,
}

impl NonlinearResult {
    pub fn summary(&self) -> NonlinearSummary {
        NonlinearSummary {
            iterations: self.iterations,
            history: self.history.clone(),
            terminal_gap: self.terminal_gap,
            control_sup: self.control_sup,
            linear_terminal_norm: self.linear_terminal_norm,
            log_weighted_control: self.log_weighted_control,
        }
    }
}

/// Picard iteration on the quadratic remainder `Div(theta B r w)`.
///
/// `ybar` must solve the uncontrolled equation with drift `cfg.drift`.
#[allow(clippy::too_many_arguments)]
pub fn nonlinear_control(
    y0: &ScalarField,
    ybar: &FieldTrajectory,
    cfg: &HumConfig,
    fp: &FixedPointWeights,
    max_iter: usize,
    tol: f64,
    grid: Grid2D,
    time: TimeGrid,
) -> Result<NonlinearResult> {
    if max_iter == 0 {
        return Err(Error::invalid("max_iter", "must be at least 1"));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid("tol", "must be positive"));
    }
    check_reference(ybar, &cfg.theta)?;
    let sys = HumSystem::build(cfg, grid, time, Some(reference_weights(ybar)))?;
    let z0 = y0.sub(ybar.first());
    let plain = ControlMap::new(cfg.operator.clone(), cfg.theta.clone());
    let mut w_prev = FieldTrajectory::zeros(grid, time);
    let mut r_prev = ControlField::zeros(cfg.operator.m(), grid, time);
    let mut history = Vec::new();
    let mut linear_terminal_norm = f64::NAN;
    for it in 1..=max_iter {
        let source = (it > 1).then(|| {
            let map = plain.clone().with_weights(reference_weights(&w_prev));
            MidpointTrajectory {
                time,
                steps: (0..time.nt).map(|n| map.apply_control(n, &r_prev)).collect(),
            }
        });
        let src = source.as_ref().map_or(Source::None, Source::Steps);
        let res = sys.solve(&z0, src, cfg.k)?;
        if it == 1 {
            linear_terminal_norm = res.terminal_norm;
        }
        let dist = res.z.sub(&w_prev).norm_l2();
        history.push(dist);
        let scale = res.z.norm_l2();
        w_prev = res.z;
        r_prev = res.v;
        if dist <= tol * scale || dist == 0.0 {
            let mut out = finish(ybar, w_prev, r_prev, cfg, it, history, linear_terminal_norm);
            out.log_weighted_control = log_weighted_sup(&out.r, fp);
            return Ok(out);
        }
        let h = &history;
        if h.len() >= 4 && h[h.len() - 1] > h[h.len() - 2] && h[h.len() - 2] > h[h.len() - 3] && h[h.len() - 3] > h[h.len() - 4] {
            return Err(Error::NonContraction {
                reason: "iterate distance grew for 3 consecutive steps".into(),
                history,
            });
        }
    }
    Err(Error::NonContraction {
        reason: format!("no convergence within {max_iter} iterations"),
        history,
    })
}

fn finish(
    ybar: &FieldTrajectory,
    w: FieldTrajectory,
    r: ControlField,
    cfg: &HumConfig,
    iterations: usize,
    history: Vec<f64>,
    linear_terminal_norm: f64,
) -> NonlinearResult {
    let time = ybar.time;
    let grid = ybar.grid();
    let u = (0..time.nt)
        .map(|n| {
            let mut u = cfg
                .drift
                .at_step(n)
                .map_or_else(|| VectorField::zeros(grid), |w| w.into_owned());
            for (j, comp) in r.components.iter().enumerate() {
                let b = cfg.operator.column(j);
                for k in 0..grid.len() {
                    let a = cfg.theta.values[k] * comp.steps[n].values[k];
                    u.x.values[k] += b[0] * a;
                    u.y.values[k] += b[1] * a;
                }
            }
            u
        })
        .collect();
    let y = ybar.add(&w);
    NonlinearResult {
        terminal_gap: w.last().norm_l2(),
        control_sup: r.norm_inf(),
        y,
        w,
        r,
        u,
        iterations,
        history,
        linear_terminal_norm,
        log_weighted_control: f64::NAN,
    }
}
