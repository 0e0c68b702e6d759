//! Glued eigenfunction, its drift and the certificate; then a short penalty
//! sweep with the reduced control `B^T = (1, 0)` against full control.
//!
//! Pass `--full` to use the default sweep `k = 1e2..1e6` (several minutes).

use fokker_control::counterexample::{build_certificate, hautus_violation_report, CounterexampleConfig, HautusConfig};

fn main() -> fokker_control::Result<()> {
    let full = std::env::args().any(|a| a == "--full");
    for n in [127, 255] {
        let (_, cert) = build_certificate(&CounterexampleConfig { n, ..Default::default() })?;
        println!(
            "n = {n}: h0 = {}, c_min = {:.3}, eig_residual = {:.3e} (tol {:.3e}), obs = {:e}, boundary = {:e}, passed = {}",
            cert.h0, cert.c_min, cert.eig_residual, cert.tol_residual, cert.obs_residual, cert.boundary_max, cert.passed
        );
    }
    let (ce, cert) = build_certificate(&CounterexampleConfig::default())?;
    let mut cfg = HautusConfig::default();
    if !full {
        cfg.k_list = vec![1e2, 1e3, 1e4];
    }
    let rep = hautus_violation_report(&ce, &cert, &cfg)?;
    println!("adjoint eigen-decay error {:.2e}", rep.eigen_decay_error);
    for (name, s) in [("reduced", &rep.reduced), ("full", &rep.full)] {
        let norms: Vec<String> = s.rows.iter().map(|r| format!("{:.4e}", r.terminal_norm)).collect();
        println!("{name:8} |z(T)| = [{}], slope {:.4}", norms.join(", "), s.slope.unwrap_or(f64::NAN));
    }
    Ok(())
}
