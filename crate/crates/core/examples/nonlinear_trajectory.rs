//! Local control to a reference trajectory by Picard iteration.

use fokker_control::domain::{build_cutoff, Grid2D, Region, ScalarField, TimeGrid};
use fokker_control::hum::{nonlinear_control, FixedPointWeights, HumConfig};
use fokker_control::pde::{solve_forward, Drift, Source};
use fokker_control::reduced::{AnalyticDrift, ControlOperator, TrigTerm};

fn main() -> fokker_control::Result<()> {
    let grid = Grid2D::unit_pi(16)?;
    let time = TimeGrid::new(0.5, 20)?;
    let ubar = AnalyticDrift::Trig {
        terms: vec![TrigTerm { component: 0, amplitude: 0.5, wave: [1.0, 2.0], phase: 0.3 }],
    };
    let drift = Drift::Steady(ubar.sample(grid));
    let ybar0 = ScalarField::from_fn(grid, |x, y| x.sin() * y.sin());
    let ybar = solve_forward(&ybar0, &drift, Source::None, grid, time)?;
    let omega = Region::from_box("omega", grid, [0.8, 2.4], [0.8, 2.4])?;
    let theta = build_cutoff(&omega.eroded(1, "omega0"), &omega)?;
    let mut cfg = HumConfig::new(ControlOperator::identity(), theta, drift);
    cfg.k_carleman = 0.1;
    let fp = FixedPointWeights::defaults(2, cfg.k_carleman, time)?;
    println!("weight constraints {:?}", fp.checks);
    let dir = ScalarField::from_fn(grid, |x, y| (2.0 * x).sin() * (3.0 * y).sin());
    for eps in [1e-2, 1e-3, 1e-4] {
        let y0 = ybar0.add(&dir.scaled(eps * ybar0.norm_l2() / dir.norm_l2()));
        match nonlinear_control(&y0, &ybar, &cfg, &fp, 20, 1e-8, grid, time) {
            Ok(r) => println!(
                "eps = {eps:.0e}: {} iterations, |y(T) - ybar(T)| = {:.3e}, sup |r| = {:.3e}",
                r.iterations, r.terminal_gap, r.control_sup
            ),
            Err(e) => println!("eps = {eps:.0e}: {e}"),
        }
    }
    Ok(())
}
