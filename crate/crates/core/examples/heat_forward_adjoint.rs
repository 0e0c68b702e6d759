//! Crank-Nicolson forward and adjoint runs: heat eigenmode decay and the
//! discrete duality pairing with a drift.

use fokker_control::domain::{Grid2D, ScalarField, TimeGrid, VectorField};
use fokker_control::pde::{solve_adjoint, solve_forward, Drift, Source};

fn main() -> fokker_control::Result<()> {
    let t_final = 0.5;
    for (n, nt) in [(15, 10), (31, 20), (63, 40)] {
        let grid = Grid2D::unit_pi(n)?;
        let time = TimeGrid::new(t_final, nt)?;
        let mode = ScalarField::from_fn(grid, |x, y| x.sin() * y.sin());
        let y = solve_forward(&mode, &Drift::Zero, Source::None, grid, time)?;
        let err = y.last().sub(&mode.scaled((-2.0 * t_final).exp())).norm_inf();
        println!("n = {n:3}, nt = {nt:3}: |y(T) - exp(-2T) sin sin|_inf = {err:.3e}");
    }

    let grid = Grid2D::unit_pi(31)?;
    let time = TimeGrid::new(0.5, 50)?;
    let drift = Drift::Steady(VectorField::from_fn(grid, |x, y| [0.5 * (x + 2.0 * y).sin(), 0.3 * (2.0 * x - y).cos()]));
    let y0 = ScalarField::from_fn(grid, |x, y| (-((x - 1.2).powi(2) + (y - 1.9).powi(2)) / 0.1).exp());
    let y = solve_forward(&y0, &drift, Source::None, grid, time)?;
    let psi_t = ScalarField::from_fn(grid, |x, y| (2.0 * x).sin() * y.sin());
    let psi = solve_adjoint(&psi_t, &drift, grid, time)?;
    let gap = (y.last().dot(&psi_t) - y0.dot(psi.first())).abs();
    println!("duality <y(T), psi(T)> - <y(0), psi(0)> = {gap:.2e}");
    println!(
        "mass {:.4} -> {:.4}, min {:.2e}",
        y.first().mass(),
        y.last().mass(),
        y.snapshots.iter().map(|s| s.min()).fold(f64::INFINITY, f64::min)
    );
    Ok(())
}
