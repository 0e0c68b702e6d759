//! Rank condition scans and the selection matrix for a shear drift.

use fokker_control::domain::{Grid2D, Region};
use fokker_control::reduced::{rank_condition, solvability_matrix, AnalyticDrift, ControlOperator};

fn main() -> fokker_control::Result<()> {
    let grid = Grid2D::unit_pi(16)?;
    let region = Region::all("interior", grid);
    let b = ControlOperator::first_axis();
    for (name, u) in [("u = 0", AnalyticDrift::Zero), ("u = (0, x1)", AnalyticDrift::shear())] {
        for q in 0..=2 {
            let rep = rank_condition(&u, &b, q, &region, &[0.5], 1e-8)?;
            println!(
                "{name:12} q = {q}: rank in [{}, {}], witness {:?}",
                rep.min_rank,
                rep.max_rank,
                rep.witness.map(|w| w.x)
            );
        }
    }
    let sel = solvability_matrix(&AnalyticDrift::shear(), &b, 1, 0.5, [1.0, 1.0], 1e-8)?;
    println!("selection {:?} |det| = {:.3}", sel.labels, sel.det_abs);
    Ok(())
}
