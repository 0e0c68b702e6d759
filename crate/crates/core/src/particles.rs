//! Monte-Carlo simulation of the killed diffusion whose density solves
//! `dt y = Lap y + Div(u y)` with absorbing walls.
//!
//! Particles follow `X <- X - u(X) dt + sqrt(2 dt) xi` and are removed at the
//! first step endpoint outside the domain.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{Grid2D, ScalarField, VectorField, VectorFieldTrajectory};
use crate::error::{Error, Result};
use crate::reduced::AnalyticDrift;

/// Drift `u` seen by the particles (they move along `-u`).
#[derive(Debug, Clone)]
pub enum ParticleDrift {
    Zero,
    Constant([f64; 2]),
    Analytic(AnalyticDrift),
    /// Bilinear in space, zero-extended to the walls.
    Field(VectorField),
    /// Bilinear in space, linear between the snapshot times.
    Trajectory(VectorFieldTrajectory),
}

fn bilinear(f: &ScalarField, x: [f64; 2]) -> f64 {
    let g = f.grid;
    let (sx, sy) = (x[0] / g.hx - 1.0, x[1] / g.hy - 1.0);
    let (i0, j0) = (sx.floor(), sy.floor());
    let (tx, ty) = (sx - i0, sy - j0);
    let (i0, j0) = (i0 as isize, j0 as isize);
    let v00 = f.at(i0, j0);
    let v10 = f.at(i0 + 1, j0);
    let v01 = f.at(i0, j0 + 1);
    let v11 = f.at(i0 + 1, j0 + 1);
    (1.0 - tx) * ((1.0 - ty) * v00 + ty * v01) + tx * ((1.0 - ty) * v10 + ty * v11)
}

impl ParticleDrift {
    pub fn value(&self, t: f64, x: [f64; 2]) -> [f64; 2] {
        match self {
            ParticleDrift::Zero => [0.0, 0.0],
            ParticleDrift::Constant(c) => *c,
            ParticleDrift::Analytic(a) => a.value(x),
            ParticleDrift::Field(v) => [bilinear(&v.x, x), bilinear(&v.y, x)],
            ParticleDrift::Trajectory(tr) => {
                let time = tr.x.time;
                let s = (t / time.dt).clamp(0.0, time.nt as f64);
                let n = (s.floor() as usize).min(time.nt.saturating_sub(1));
                let w = s - n as f64;
                let a = [bilinear(&tr.x.snapshots[n], x), bilinear(&tr.y.snapshots[n], x)];
                let b = [bilinear(&tr.x.snapshots[n + 1], x), bilinear(&tr.y.snapshots[n + 1], x)];
                [(1.0 - w) * a[0] + w * b[0], (1.0 - w) * a[1] + w * b[1]]
            }
        }
    }
}

/// Initial law of the particles.
#[derive(Debug, Clone)]
pub enum InitialLaw {
    /// Uniform on the domain.
    Uniform,
    /// Density proportional to `sin(x) sin(y)` on `(0, pi)^2`, sampled by inverse CDF.
    SineMode,
    /// Piecewise constant on the grid cells, proportional to a nonnegative field.
    Field(ScalarField),
}

struct CellSampler {
    grid: Grid2D,
    cdf: Vec<f64>,
}

impl CellSampler {
    fn new(f: &ScalarField) -> Result<Self> {
        let mut acc = 0.0;
        let mut cdf = Vec::with_capacity(f.values.len());
        for &v in &f.values {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid("initial density", "must be finite and nonnegative"));
            }
            acc += v;
            cdf.push(acc);
        }
        if acc <= 0.0 {
            return Err(Error::invalid("initial density", "has zero mass"));
        }
        for c in &mut cdf {
            *c /= acc;
        }
        Ok(Self { grid: f.grid, cdf })
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> [f64; 2] {
        let u: f64 = rng.random();
        let k = self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1);
        let [x, y] = self.grid.coords(k);
        let (a, b): (f64, f64) = (rng.random(), rng.random());
        [x + (a - 0.5) * self.grid.hx, y + (b - 0.5) * self.grid.hy]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ParticleConfig {
    pub n_particles: usize,
    pub dt_sde: f64,
    pub t_final: f64,
    /// Times at which histograms are recorded (rounded to the step grid).
    pub output_times: Vec<f64>,
    pub seed: u64,
    pub block_size: usize,
}

impl Default for ParticleConfig {
    fn default() -> Self {
        Self {
            n_particles: 100_000,
            dt_sde: 5e-5,
            t_final: 0.25,
            output_times: vec![0.05, 0.1, 0.25],
            seed: 1,
            block_size: 4096,
        }
    }
}

impl ParticleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_particles < 1 {
            return Err(Error::invalid("n_particles", "need at least one particle"));
        }
        if !(self.dt_sde > 0.0 && self.dt_sde.is_finite()) {
            return Err(Error::invalid("dt_sde", "must be positive"));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(Error::invalid("t_final", "must be positive"));
        }
        if self.block_size == 0 {
            return Err(Error::invalid("block_size", "must be positive"));
        }
        if self.output_times.iter().any(|&t| !(0.0..=self.t_final).contains(&t)) {
            return Err(Error::invalid("output_times", "must lie in [0, t_final]"));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt_sde).round().max(1.0) as usize
    }

    fn output_steps(&self) -> Vec<usize> {
        let dt = self.t_final / self.n_steps() as f64;
        self.output_times.iter().map(|&t| (t / dt).round() as usize).collect()
    }
}

#[derive(Debug, Clone)]
pub struct ParticleResult {
    pub n_particles: usize,
    /// Step times `0, dt, ..., T`.
    pub times: Vec<f64>,
    /// Fraction of particles alive at each step time.
    pub survival: Vec<f64>,
    pub output_times: Vec<f64>,
    /// Density estimates `count / (n hx hy)` per output time.
    pub histograms: Vec<ScalarField>,
    /// Mean position of the survivors per output time.
    pub mean_position: Vec<Option<[f64; 2]>>,
    /// True where no particle survived.
    pub empty: Vec<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParticleSummary {
    pub n_particles: usize,
    pub n_steps: usize,
    pub output_times: Vec<f64>,
    pub survival_at_outputs: Vec<f64>,
    pub mean_position: Vec<Option<[f64; 2]>>,
    pub empty: Vec<bool>,
}

impl ParticleResult {
    pub fn summary(&self) -> ParticleSummary {
        let dt = self.times.get(1).copied().unwrap_or(1.0);
        ParticleSummary {
            n_particles: self.n_particles,
            n_steps: self.times.len() - 1,
            output_times: self.output_times.clone(),
            survival_at_outputs: self
                .output_times
                .iter()
                .map(|&t| self.survival[((t / dt).round() as usize).min(self.survival.len() - 1)])
                .collect(),
            mean_position: self.mean_position.clone(),
            empty: self.empty.clone(),
        }
    }
}

struct Tally {
    alive: Vec<u64>,
    counts: Vec<Vec<u64>>,
    sums: Vec<[f64; 2]>,
}

impl Tally {
    fn new(n_steps: usize, n_out: usize, cells: usize) -> Self {
        Self {
            alive: vec![0; n_steps + 1],
            counts: vec![vec![0; cells]; n_out],
            sums: vec![[0.0; 2]; n_out],
        }
    }

    fn merge(mut self, other: Tally) -> Tally {
        for (a, b) in self.alive.iter_mut().zip(&other.alive) {
            *a += b;
        }
        for (ca, cb) in self.counts.iter_mut().zip(&other.counts) {
            for (a, b) in ca.iter_mut().zip(cb) {
                *a += b;
            }
        }
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            a[0] += b[0];
            a[1] += b[1];
        }
        self
    }
}

fn cell_of(grid: &Grid2D, x: [f64; 2]) -> usize {
    let i = ((x[0] / grid.hx - 0.5).floor().max(0.0) as usize).min(grid.nx - 1);
    let j = ((x[1] / grid.hy - 0.5).floor().max(0.0) as usize).min(grid.ny - 1);
    grid.idx(i, j)
}

/// Simulate the killed diffusion and bin survivors on the cells of `grid`.
pub fn simulate_killed(
    drift: &ParticleDrift,
    init: &InitialLaw,
    grid: Grid2D,
    cfg: &ParticleConfig,
) -> Result<ParticleResult> {
    cfg.validate()?;
    let sampler = match init {
        InitialLaw::Field(f) => {
            grid.check_same(&f.grid)?;
            Some(CellSampler::new(f)?)
        }
        InitialLaw::SineMode => {
            if (grid.lx - std::f64::consts::PI).abs() > 1e-12 || (grid.ly - std::f64::consts::PI).abs() > 1e-12 {
                return Err(Error::invalid("initial law", "sine mode needs the (0, pi)^2 domain"));
            }
            None
        }
        InitialLaw::Uniform => None,
    };
    let n_steps = cfg.n_steps();
    let dt = cfg.t_final / n_steps as f64;
    let out_steps = cfg.output_steps();
    let n_out = out_steps.len();
    let noise = (2.0 * dt).sqrt();
    let (lx, ly) = (grid.lx, grid.ly);

    let n_blocks = cfg.n_particles.div_ceil(cfg.block_size);
    let tally = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(b as u64);
            let count = cfg.block_size.min(cfg.n_particles - b * cfg.block_size);
            let mut t = Tally::new(n_steps, n_out, grid.len());
            for _ in 0..count {
                let mut x = match (init, &sampler) {
                    (_, Some(s)) => s.sample(&mut rng),
                    (InitialLaw::SineMode, _) => {
                        let (a, b): (f64, f64) = (rng.random(), rng.random());
                        [(1.0 - 2.0 * a).acos(), (1.0 - 2.0 * b).acos()]
                    }
                    _ => {
                        let (a, b): (f64, f64) = (rng.random(), rng.random());
                        [a * lx, b * ly]
                    }
                };
                let record = |t: &mut Tally, step: usize, x: [f64; 2]| {
                    t.alive[step] += 1;
                    for (o, &s) in out_steps.iter().enumerate() {
                        if s == step {
                            t.counts[o][cell_of(&grid, x)] += 1;
                            t.sums[o][0] += x[0];
                            t.sums[o][1] += x[1];
                        }
                    }
                };
                record(&mut t, 0, x);
                for step in 1..=n_steps {
                    let u = drift.value((step - 1) as f64 * dt, x);
                    let (z0, z1): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
                    x = [x[0] - u[0] * dt + noise * z0, x[1] - u[1] * dt + noise * z1];
                    if !(x[0] > 0.0 && x[0] < lx && x[1] > 0.0 && x[1] < ly) {
                        break;
                    }
                    record(&mut t, step, x);
                }
            }
            t
        })
        .reduce(|| Tally::new(n_steps, n_out, grid.len()), Tally::merge);

    let n = cfg.n_particles as f64;
    let scale = 1.0 / (n * grid.cell_area());
    let mut histograms = Vec::with_capacity(n_out);
    let mut mean_position = Vec::with_capacity(n_out);
    let mut empty = Vec::with_capacity(n_out);
    for o in 0..n_out {
        let total: u64 = tally.counts[o].iter().sum();
        let values = tally.counts[o].iter().map(|&c| c as f64 * scale).collect();
        histograms.push(ScalarField::from_values(grid, values)?);
        if total == 0 {
            log::warn!("no survivors at t = {}", cfg.output_times[o]);
            mean_position.push(None);
            empty.push(true);
        } else {
            let s = tally.sums[o];
            mean_position.push(Some([s[0] / total as f64, s[1] / total as f64]));
            empty.push(false);
        }
    }
    Ok(ParticleResult {
        n_particles: cfg.n_particles,
        times: (0..=n_steps).map(|s| s as f64 * dt).collect(),
        survival: tally.alive.iter().map(|&a| a as f64 / n).collect(),
        output_times: out_steps.iter().map(|&s| s as f64 * dt).collect(),
        histograms,
        mean_position,
        empty,
    })
}

/// `sum |a - b| hx hy`.
pub fn l1_error(a: &ScalarField, b: &ScalarField) -> Result<f64> {
    a.grid.check_same(&b.grid)?;
    Ok(a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).sum::<f64>() * a.grid.cell_area())
}

/// Centre of mass of a nonnegative field, `None` if its mass vanishes.
pub fn center_of_mass(f: &ScalarField) -> Option<[f64; 2]> {
    let m: f64 = f.values.iter().sum();
    if m.abs() < 1e-300 {
        return None;
    }
    let g = f.grid;
    let (mut sx, mut sy) = (0.0, 0.0);
    for (k, &v) in f.values.iter().enumerate() {
        let [x, y] = g.coords(k);
        sx += v * x;
        sy += v * y;
    }
    Some([sx / m, sy / m])
}

/// `sin(x) sin(y) / 4`, normalized to unit mass on `(0, pi)^2`.
pub fn sine_mode_density(grid: Grid2D) -> ScalarField {
    ScalarField::from_fn(grid, |x, y| 0.25 * x.sin() * y.sin())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize, seed: u64) -> ParticleConfig {
        ParticleConfig {
            n_particles: n,
            dt_sde: 1e-3,
            t_final: 0.05,
            output_times: vec![0.0, 0.05],
            seed,
            block_size: 64,
        }
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let g = Grid2D::unit_pi(7).unwrap();
        let a = simulate_killed(&ParticleDrift::Zero, &InitialLaw::SineMode, g, &small(1, 3)).unwrap();
        let b = simulate_killed(&ParticleDrift::Zero, &InitialLaw::SineMode, g, &small(1, 3)).unwrap();
        assert_eq!(a.survival, b.survival);
        assert_eq!(a.mean_position, b.mean_position);
    }

    #[test]
    fn rejects_bad_config() {
        let g = Grid2D::unit_pi(7).unwrap();
        let mut c = small(0, 1);
        assert!(simulate_killed(&ParticleDrift::Zero, &InitialLaw::Uniform, g, &c).unwrap_err().is_validation());
        c.n_particles = 1;
        c.dt_sde = 0.0;
        assert!(simulate_killed(&ParticleDrift::Zero, &InitialLaw::Uniform, g, &c).is_err());
    }

    #[test]
    fn initial_histogram_has_unit_mass() {
        let g = Grid2D::unit_pi(7).unwrap();
        let r = simulate_killed(&ParticleDrift::Zero, &InitialLaw::Uniform, g, &small(500, 2)).unwrap();
        assert!((r.histograms[0].mass() - 1.0).abs() < 1e-12);
        assert_eq!(r.survival[0], 1.0);
        for w in r.survival.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn interpolation_matches_linear_field() {
        let g = Grid2D::unit_pi(9).unwrap();
        let v = VectorField::from_fn(g, |x, y| [1.0 + 2.0 * x, y]);
        let d = ParticleDrift::Field(v);
        let u = d.value(0.0, [1.1, 2.3]);
        assert!((u[0] - 3.2).abs() < 1e-12 && (u[1] - 2.3).abs() < 1e-12);
    }
}
