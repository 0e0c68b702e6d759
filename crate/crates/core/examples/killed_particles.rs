//! Killed diffusion particles against the Fokker-Planck density.

use fokker_control::domain::{Grid2D, ScalarField, TimeGrid};
use fokker_control::particles::{l1_error, simulate_killed, InitialLaw, ParticleConfig, ParticleDrift};
use fokker_control::pde::{solve_forward, Drift, Source};

fn main() -> fokker_control::Result<()> {
    let grid = Grid2D::unit_pi(15)?;
    let cfg = ParticleConfig { n_particles: 50_000, ..Default::default() };
    let res = simulate_killed(&ParticleDrift::Zero, &InitialLaw::SineMode, grid, &cfg)?;
    let time = TimeGrid::new(cfg.t_final, 250)?;
    let y0 = ScalarField::from_fn(grid, |x, y| 0.25 * x.sin() * y.sin());
    let pde = solve_forward(&y0, &Drift::Zero, Source::None, grid, time)?;
    for (o, &t) in res.output_times.iter().enumerate() {
        let n = (t / time.dt).round() as usize;
        let step = (t / cfg.dt_sde).round() as usize;
        println!(
            "t = {t}: survival {:.4}, PDE mass {:.4}, L1 density error {:.4}",
            res.survival[step],
            pde.snapshots[n].mass() / y0.mass(),
            l1_error(&res.histograms[o], &pde.snapshots[n])?
        );
    }
    Ok(())
}
