//! Carleman weights built from a shifted weight function and the empirical
//! observability ratio under full gradient observation.

use fokker_control::carleman::{build_eta0, eval_weights, observability_ratio, CarlemanParams, RatioConfig};
use fokker_control::domain::{Grid2D, Region, TimeGrid};
use fokker_control::pde::Drift;

fn main() -> fokker_control::Result<()> {
    let grid = Grid2D::unit_pi(32)?;
    let time = TimeGrid::new(0.5, 20)?;
    let omega1 = Region::from_box("omega1", grid, [0.3, 0.9], [2.2, 2.8])?;
    let eta = build_eta0(grid, &omega1)?;
    println!("eta0 critical point {:?}, kappa = {:.4e}", eta.center, eta.kappa);

    let c = std::f64::consts::FRAC_PI_2;
    let omega0 = Region::from_box("omega0", grid, [c - 0.5, c + 0.5], [c - 0.5, c + 0.5])?;
    let centred = build_eta0(grid, &omega0)?;
    for params in [
        CarlemanParams::defaults(time.t_final),
        CarlemanParams { s: 1e-3, lambda: 0.5, p: 2, mu: 1.0 },
    ] {
        let w = eval_weights(&centred, params, time)?;
        let mid = w.times.len() / 2;
        println!(
            "s = {:.3e}, lambda = {}: alpha*(T/2) = {:.3e}, xi_*(T/2) = {:.3e}",
            params.s, params.lambda, w.alpha_star[mid], w.xi_star[mid]
        );
        for n in [20, 40] {
            let cfg = RatioConfig { n_samples: n, ..Default::default() };
            let rep = observability_ratio(&Drift::Zero, None, &omega0, &w, &cfg)?;
            println!("  {n} samples: max ratio {:.4e}", rep.max_ratio.unwrap_or(f64::NAN));
        }
    }
    Ok(())
}
