//! Penalized HUM null control with full control and the penalty sweep.

use fokker_control::domain::{build_cutoff, Grid2D, Region, ScalarField, TimeGrid};
use fokker_control::hum::{decay_study, hum_solve, HumConfig};
use fokker_control::pde::Drift;
use fokker_control::reduced::{AnalyticDrift, ControlOperator, TrigTerm};

fn main() -> fokker_control::Result<()> {
    let grid = Grid2D::unit_pi(16)?;
    let time = TimeGrid::new(1.0, 40)?;
    let omega = Region::from_box("omega", grid, [0.8, 2.4], [0.8, 2.4])?;
    let theta = build_cutoff(&omega.eroded(1, "omega0"), &omega)?;
    let ubar = AnalyticDrift::Trig {
        terms: vec![
            TrigTerm { component: 0, amplitude: 0.5, wave: [1.0, 2.0], phase: 0.3 },
            TrigTerm { component: 1, amplitude: 0.35, wave: [2.0, -1.0], phase: 0.1 },
        ],
    };
    let mut cfg = HumConfig::new(ControlOperator::identity(), theta, Drift::Steady(ubar.sample(grid)));
    cfg.k_carleman = 0.1;
    let y0 = ScalarField::from_fn(grid, |x, y| x.sin() * y.sin());

    let r = hum_solve(&y0, &cfg, grid, time)?;
    let s = r.summary();
    println!(
        "k = {:.0e}: J_k = {:.4e}, <y0, phi(0)>/2 = {:.4e}, |z(T)| = {:.3e}, CG iterations {}",
        s.k, s.jk, s.duality_value, s.terminal_norm, s.iterations
    );

    let study = decay_study(&y0, &cfg, &[1e2, 1e3, 1e4, 1e5, 1e6], grid, time)?;
    for row in &study.rows {
        println!("k = {:8.0e}  |z(T)| = {:.4e}  J_k = {:.4e}", row.k, row.terminal_norm, row.jk);
    }
    println!("slope of log |z(T)| against log k: {:.3}", study.slope.unwrap_or(f64::NAN));
    Ok(())
}
