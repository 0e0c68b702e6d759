//! Experiment runner behind the `fpc` binary.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::carleman::{build_eta0, eval_weights, observability_ratio, CarlemanParams};
use crate::config::{Config, Observation, ParticleStart};
use crate::counterexample::{build_certificate, hautus_violation_report};
use crate::domain::{build_cutoff, write_field_csv, write_trajectory_csv, Grid2D, Region, ScalarField, TimeGrid};
use crate::error::{Error, Result};
use crate::hum::{decay_study, hum_solve, nonlinear_control, FixedPointWeights, HumConfig};
use crate::particles::{l1_error, simulate_killed, sine_mode_density, InitialLaw, ParticleDrift};
use crate::pde::{solve_adjoint, solve_forward, Drift, Source};
use crate::plot::{emit_plots, Plot, Series};
use crate::reduced::{rank_condition, AnalyticDrift, ControlOperator};

#[derive(Debug, Parser)]
#[command(name = "fpc", version, about = "Controllability experiments for the Fokker-Planck equation")]
pub struct Cli {
    /// JSON configuration; the built-in default is used when omitted.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Override a dotted config path, e.g. `--set time.T=0.5`.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    pub overrides: Vec<String>,
    /// Output root directory.
    #[arg(long)]
    pub out: Option<String>,
    /// Run tag used in the output directory name.
    #[arg(long)]
    pub tag: Option<String>,
    /// Seed for every stochastic path.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dump every n-th snapshot of trajectories.
    #[arg(long)]
    pub snapshot_every: Option<usize>,
    /// Time step of the particle simulation.
    #[arg(long)]
    pub dt_sde: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Solve the uncontrolled forward equation.
    Forward,
    /// Solve the adjoint equation from the configured terminal datum.
    Adjoint,
    /// Penalized HUM control for one penalty.
    Hum,
    /// Terminal norm against the penalty.
    Decay,
    /// Fixed-point control of the bilinear problem.
    Nonlinear,
    /// Pointwise rank condition scan.
    Rank,
    /// Sampled observability ratios with Carleman weights.
    CarlemanRatio,
    /// Rank-deficient trajectory certificate.
    Counterexample,
    /// Monte-Carlo killed diffusion against the PDE.
    Particles,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Forward => "forward",
            Command::Adjoint => "adjoint",
            Command::Hum => "hum",
            Command::Decay => "decay",
            Command::Nonlinear => "nonlinear",
            Command::Rank => "rank",
            Command::CarlemanRatio => "carleman-ratio",
            Command::Counterexample => "counterexample",
            Command::Particles => "particles",
        }
    }
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

fn exit_code(e: &Error) -> i32 {
    if e.is_validation() {
        EXIT_VALIDATION
    } else {
        EXIT_NUMERICAL
    }
}

fn flag_overrides(cli: &Cli) -> Vec<String> {
    let mut o = cli.overrides.clone();
    if let Some(s) = cli.seed {
        o.push(format!("seed={s}"));
        o.push(format!("particles.seed={s}"));
        o.push(format!("carleman.ratio.seed={s}"));
    }
    if let Some(n) = cli.snapshot_every {
        o.push(format!("output.snapshot_every={n}"));
    }
    if let Some(dt) = cli.dt_sde {
        o.push(format!("particles.dt_sde={dt}"));
    }
    if let Some(d) = &cli.out {
        o.push(format!("output.dir={}", Value::String(d.clone())));
    }
    if let Some(t) = &cli.tag {
        o.push(format!("output.tag={}", Value::String(t.clone())));
    }
    o
}

fn init_threads() {
    if let Some(n) = std::env::var("FPC_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 && rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            log::debug!("thread pool already initialized");
        }
    }
}

/// Parse arguments, run one subcommand and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    init_threads();
    let cfg = match Config::load(cli.config.as_deref(), &flag_overrides(&cli)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    match run_command(cli.command, &cfg) {
        Ok(dir) => {
            println!("{}", dir.display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Output directory `<dir>/<subcommand>-<tag>`.
pub fn output_dir(cmd: Command, cfg: &Config) -> PathBuf {
    Path::new(&cfg.output.dir).join(format!("{}-{}", cmd.name(), cfg.output.tag))
}

/// Run `cmd` and write its artifacts; on failure a `diagnostics.json` is left behind.
pub fn run_command(cmd: Command, cfg: &Config) -> Result<PathBuf> {
    let dir = output_dir(cmd, cfg);
    fs::create_dir_all(&dir)?;
    let out = Output { dir: dir.clone() };
    match dispatch(cmd, cfg, &out) {
        Ok(res) => {
            out.json(
                "report.json",
                &json!({ "subcommand": cmd.name(), "config": cfg.to_value(), "result": res.result }),
            )?;
            emit_plots(&dir, &res.plots)?;
            match res.failure {
                Some(e) => {
                    write_diagnostics(&out, cmd, cfg, &e)?;
                    Err(e)
                }
                None => Ok(dir),
            }
        }
        Err(e) => {
            write_diagnostics(&out, cmd, cfg, &e)?;
            Err(e)
        }
    }
}

fn write_diagnostics(out: &Output, cmd: Command, cfg: &Config, e: &Error) -> Result<()> {
    let detail = match e {
        Error::CgDivergence { history, .. } | Error::NonContraction { history, .. } => json!(history),
        _ => Value::Null,
    };
    out.json(
        "diagnostics.json",
        &json!({
            "subcommand": cmd.name(),
            "kind": if e.is_validation() { "validation" } else { "numerical" },
            "error": e.to_string(),
            "history": detail,
            "config": cfg.to_value(),
        }),
    )
}

struct Output {
    dir: PathBuf,
}

impl Output {
    fn json<T: Serialize>(&self, name: &str, v: &T) -> Result<()> {
        let mut w = BufWriter::new(File::create(self.dir.join(name))?);
        serde_json::to_writer_pretty(&mut w, v)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    fn field(&self, name: &str, f: &ScalarField) -> Result<()> {
        let mut w = BufWriter::new(File::create(self.dir.join(name))?);
        write_field_csv(&mut w, f)?;
        w.flush()?;
        Ok(())
    }

    fn rows(&self, name: &str, header: &str, rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
        let mut w = BufWriter::new(File::create(self.dir.join(name))?);
        writeln!(w, "{header}")?;
        for r in rows {
            let cells: Vec<String> = r.iter().map(|v| format!("{v:.12e}")).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        w.flush()?;
        Ok(())
    }
}

struct Outcome {
    result: Value,
    plots: Vec<Plot>,
    /// Error to report after the artifacts are written.
    failure: Option<Error>,
}

impl Outcome {
    fn ok(result: Value, plots: Vec<Plot>) -> Self {
        Self {
            result,
            plots,
            failure: None,
        }
    }
}

struct Setup {
    grid: Grid2D,
    time: TimeGrid,
    drift: Drift,
    omega: Region,
    omega0: Region,
    theta: ScalarField,
    operator: ControlOperator,
}

fn setup(cfg: &Config) -> Result<Setup> {
    let grid = cfg.grid()?;
    let time = cfg.time()?;
    let drift = match &cfg.drift {
        AnalyticDrift::Zero => Drift::Zero,
        d => Drift::Steady(d.sample(grid)),
    };
    let omega = cfg.control.omega.region("omega", grid)?;
    let omega0 = match &cfg.control.omega0 {
        Some(b) => b.region("omega0", grid)?,
        None => omega.eroded(1, "omega0"),
    };
    let theta = build_cutoff(&omega0, &omega)?;
    let operator = ControlOperator::new(cfg.control.b.clone())?;
    Ok(Setup {
        grid,
        time,
        drift,
        omega,
        omega0,
        theta,
        operator,
    })
}

fn hum_config(cfg: &Config, s: &Setup) -> HumConfig {
    let mut h = HumConfig::new(s.operator.clone(), s.theta.clone(), s.drift.clone());
    h.k = cfg.hum.k;
    h.k_carleman = cfg.hum.k_carleman;
    h.p = cfg.hum.p;
    h.cg_tol = cfg.hum.cg_tol;
    h
}

fn heat(name: &str, title: &str, field: ScalarField) -> Plot {
    Plot::Heatmap {
        name: name.into(),
        title: title.into(),
        field,
    }
}

fn line(name: &str, title: &str, xl: &str, yl: &str, log: (bool, bool), series: Vec<Series>, note: Option<String>) -> Plot {
    Plot::Lines {
        name: name.into(),
        title: title.into(),
        x_label: xl.into(),
        y_label: yl.into(),
        log_x: log.0,
        log_y: log.1,
        series,
        annotation: note,
    }
}

fn thin(cfg: &Config, nt: usize) -> usize {
    if cfg.output.snapshot_every == 0 {
        nt.max(1)
    } else {
        cfg.output.snapshot_every
    }
}

fn dispatch(cmd: Command, cfg: &Config, out: &Output) -> Result<Outcome> {
    match cmd {
        Command::Forward => forward(cfg, out),
        Command::Adjoint => adjoint(cfg, out),
        Command::Hum => hum(cfg, out),
        Command::Decay => decay(cfg, out),
        Command::Nonlinear => nonlinear(cfg, out),
        Command::Rank => rank(cfg, out),
        Command::CarlemanRatio => carleman_ratio(cfg, out),
        Command::Counterexample => counterexample(cfg, out),
        Command::Particles => particles(cfg, out),
    }
}

fn forward(cfg: &Config, out: &Output) -> Result<Outcome> {
    let s = setup(cfg)?;
    let y0 = cfg.initial.sample(s.grid)?;
    let traj = solve_forward(&y0, &s.drift, Source::None, s.grid, s.time)?;
    let times = s.time.node_times();
    let mass: Vec<f64> = traj.snapshots.iter().map(|f| f.mass()).collect();
    let min = traj.snapshots.iter().map(|f| f.min()).fold(f64::INFINITY, f64::min);
    let mut w = BufWriter::new(File::create(out.dir.join("trajectory.csv"))?);
    write_trajectory_csv(&mut w, &traj, thin(cfg, s.time.nt))?;
    w.flush()?;
    out.rows("mass.csv", "t,mass", times.iter().zip(&mass).map(|(t, m)| vec![*t, *m]))?;
    let result = json!({
        "mass": mass,
        "min": min,
        "norm_l2_final": traj.last().norm_l2(),
        "norm_inf_final": traj.last().norm_inf(),
    });
    let plots = vec![
        heat("y_final", "y(T)", traj.last().clone()),
        line(
            "mass",
            "mass",
            "t",
            "mass",
            (false, false),
            vec![Series {
                label: "sum y hx hy".into(),
                points: times.iter().copied().zip(mass.iter().copied()).collect(),
            }],
            None,
        ),
    ];
    Ok(Outcome::ok(result, plots))
}

fn adjoint(cfg: &Config, out: &Output) -> Result<Outcome> {
    let s = setup(cfg)?;
    let psi_t = cfg.initial.sample(s.grid)?;
    let traj = solve_adjoint(&psi_t, &s.drift, s.grid, s.time)?;
    let norms: Vec<f64> = traj.snapshots.iter().map(|f| f.norm_l2()).collect();
    let mut w = BufWriter::new(File::create(out.dir.join("adjoint.csv"))?);
    write_trajectory_csv(&mut w, &traj, thin(cfg, s.time.nt))?;
    w.flush()?;
    let result = json!({ "norm_l2": norms, "norm_inf_initial": traj.first().norm_inf() });
    Ok(Outcome::ok(result, vec![heat("phi_initial", "phi(0)", traj.first().clone())]))
}

fn hum(cfg: &Config, out: &Output) -> Result<Outcome> {
    let s = setup(cfg)?;
    let y0 = cfg.initial.sample(s.grid)?;
    let res = hum_solve(&y0, &hum_config(cfg, &s), s.grid, s.time)?;
    out.field("z_final.csv", res.z.last())?;
    out.field("phi_terminal.csv", &res.phi_terminal)?;
    let summary = res.summary();
    let plots = vec![
        heat("z_final", "z(T)", res.z.last().clone()),
        line(
            "cg_residual",
            "CG residual",
            "iteration",
            "relative residual",
            (false, true),
            vec![Series {
                label: "residual".into(),
                points: summary
                    .residual_history
                    .iter()
                    .enumerate()
                    .map(|(i, r)| (i as f64, *r))
                    .collect(),
            }],
            None,
        ),
    ];
    Ok(Outcome::ok(serde_json::to_value(summary)?, plots))
}

fn decay(cfg: &Config, out: &Output) -> Result<Outcome> {
    let s = setup(cfg)?;
    let y0 = cfg.initial.sample(s.grid)?;
    let study = decay_study(&y0, &hum_config(cfg, &s), &cfg.hum.ks, s.grid, s.time)?;
    out.rows(
        "decay.csv",
        "k,terminal_norm,Jk,iterations",
        study.rows.iter().map(|r| vec![r.k, r.terminal_norm, r.jk, r.iterations as f64]),
    )?;
    let note = study.slope.map(|sl| format!("slope {sl:.3}"));
    let plots = vec![line(
        "decay",
        "terminal norm against penalty",
        "k",
        "|z_k(T)|",
        (true, true),
        vec![Series {
            label: "|z_k(T)|".into(),
            points: study.rows.iter().map(|r| (r.k, r.terminal_norm)).collect(),
        }],
        note,
    )];
    Ok(Outcome::ok(serde_json::to_value(&study)?, plots))
}

fn nonlinear(cfg: &Config, out: &Output) -> Result<Outcome> {
    let s = setup(cfg)?;
    let nl = &cfg.nonlinear;
    let ybar0 = nl.reference.sample(s.grid)?;
    let ybar = solve_forward(&ybar0, &s.drift, Source::None, s.grid, s.time)?;
    let shape = nl.shape.sample(s.grid)?;
    if shape.norm_l2() == 0.0 {
        return Err(Error::invalid("nonlinear.shape", "perturbation shape vanishes"));
    }
    let mut y0 = ybar0.clone();
    y0.axpy(nl.perturbation * ybar0.norm_l2() / shape.norm_l2(), &shape);
    let hc = hum_config(cfg, &s);
    let q = nl
        .q
        .unwrap_or_else(|| 1.5f64.powf(1.0 / (2.0 * hc.p as f64 + 2.0)));
    let fp = FixedPointWeights::new(nl.alpha, nl.beta, q, hc.p, hc.k_carleman, s.time)?;
    let res = nonlinear_control(&y0, &ybar, &hc, &fp, nl.max_iter, nl.tol, s.grid, s.time)?;
    out.rows(
        "history.csv",
        "iteration,increment",
        res.history.iter().enumerate().map(|(i, h)| vec![(i + 1) as f64, *h]),
    )?;
    out.field("y_final.csv", res.y.last())?;
    let result = json!({
        "summary": res.summary(),
        "constraints": fp.checks,
        "rho0_non_increasing": fp.rho0_non_increasing,
        "q": q,
    });
    let plots = vec![line(
        "history",
        "fixed-point increments",
        "iteration",
        "|w_n - w_(n-1)|",
        (false, true),
        vec![Series {
            label: "increment".into(),
            points: res.history.iter().enumerate().map(|(i, h)| ((i + 1) as f64, *h)).collect(),
        }],
        None,
    )];
    Ok(Outcome::ok(result, plots))
}

fn rank(cfg: &Config, out: &Output) -> Result<Outcome> {
    let s = setup(cfg)?;
    let region = match &cfg.rank.region {
        Some(b) => b.region("scan", s.grid)?,
        None => s.omega.clone(),
    };
    let rep = rank_condition(&cfg.drift, &s.operator, cfg.rank.q, &region, &cfg.rank.times, cfg.rank.tol_sv_rel)?;
    out.rows(
        "scan.csv",
        "t,x,y,rank",
        rep.grid_scan.iter().map(|p| vec![p.t, p.x, p.y, p.rank as f64]),
    )?;
    let mut field = ScalarField::zeros(s.grid);
    let t0 = rep.grid_scan.first().map(|p| p.t);
    for p in rep.grid_scan.iter().filter(|p| Some(p.t) == t0) {
        let k = s.grid.nearest_node([p.x, p.y]);
        field.values[k] = p.rank as f64;
    }
    Ok(Outcome::ok(serde_json::to_value(&rep)?, vec![heat("rank", "rank of the family", field)]))
}

fn carleman_ratio(cfg: &Config, out: &Output) -> Result<Outcome> {
    let s = setup(cfg)?;
    let cs = &cfg.carleman;
    let omega1 = match &cs.omega1 {
        Some(b) => b.region("omega1", s.grid)?,
        None => s.omega0.clone(),
    };
    let eta0 = build_eta0(s.grid, &omega1)?;
    let params = cs.params.unwrap_or_else(|| CarlemanParams::defaults(s.time.t_final));
    let weights = eval_weights(&eta0, params, s.time)?;
    let observation = match cs.observation {
        Observation::Full => None,
        Observation::Control => Some(&s.operator),
    };
    let rep = observability_ratio(&s.drift, observation, &s.omega0, &weights, &cs.ratio)?;
    out.rows(
        "ratios.csv",
        "sample,log_lhs,log_rhs",
        rep.log_lhs
            .iter()
            .zip(&rep.log_rhs)
            .enumerate()
            .map(|(i, (a, b))| vec![i as f64, *a, *b]),
    )?;
    out.field("eta0.csv", &eta0.field)?;
    let result = json!({
        "params": params,
        "kappa": eta0.kappa,
        "alpha_star": weights.alpha_star,
        "xi_star": weights.xi_star,
        "ratio": rep,
    });
    Ok(Outcome::ok(result, vec![heat("eta0", "eta0", eta0.field.clone())]))
}

fn counterexample(cfg: &Config, out: &Output) -> Result<Outcome> {
    let cx = &cfg.counterexample;
    let (ce, cert) = build_certificate(&cx.certificate)?;
    out.json("certificate.json", &cert)?;
    out.field("phi.csv", &ce.phi)?;
    out.field("u2.csv", &ce.drift.y)?;
    let mut region = ScalarField::zeros(ce.grid);
    for k in ce.v_region.indices() {
        region.values[k] = if ce.w_region.contains(k) { 2.0 } else { 1.0 };
    }
    out.field("regions.csv", &region)?;
    let plots = vec![
        heat("phi", "phi_h0", ce.phi.clone()),
        heat("u2", "second drift component", ce.drift.y.clone()),
    ];
    let mut result = json!({ "certificate": cert });
    let mut failure = (!cert.passed).then(|| Error::CertificationFailure("residual checks did not pass".into()));
    if let (Some(h), None) = (&cx.hautus, &failure) {
        match hautus_violation_report(&ce, &cert, h) {
            Ok(rep) => result["hautus"] = serde_json::to_value(rep)?,
            Err(e) => failure = Some(e),
        }
    }
    Ok(Outcome {
        result,
        plots,
        failure,
    })
}

fn particles(cfg: &Config, out: &Output) -> Result<Outcome> {
    let grid = cfg.grid()?;
    let pc = &cfg.particles.config;
    let (law, y0) = match cfg.particles.start {
        ParticleStart::SineMode => (InitialLaw::SineMode, sine_mode_density(grid)),
        ParticleStart::Uniform => (
            InitialLaw::Uniform,
            ScalarField::constant(grid, 1.0 / (grid.lx * grid.ly)),
        ),
    };
    let res = simulate_killed(&ParticleDrift::Analytic(cfg.drift.clone()), &law, grid, pc)?;
    let time = TimeGrid::new(pc.t_final, cfg.time.nt)?;
    let drift = match &cfg.drift {
        AnalyticDrift::Zero => Drift::Zero,
        d => Drift::Steady(d.sample(grid)),
    };
    let pde = solve_forward(&y0, &drift, Source::None, grid, time)?;
    let node = |t: f64| ((t / time.dt).round() as usize).min(time.nt);
    let summary = res.summary();
    let pde_mass: Vec<f64> = res.output_times.iter().map(|&t| pde.snapshots[node(t)].mass()).collect();
    let l1: Vec<f64> = res
        .output_times
        .iter()
        .zip(&res.histograms)
        .map(|(&t, h)| l1_error(h, &pde.snapshots[node(t)]))
        .collect::<Result<_>>()?;
    out.rows(
        "survival.csv",
        "t,survival",
        res.times.iter().zip(&res.survival).map(|(t, s)| vec![*t, *s]),
    )?;
    for (i, h) in res.histograms.iter().enumerate() {
        out.field(&format!("histogram_{i}.csv"), h)?;
    }
    let result = json!({
        "summary": summary,
        "pde_mass": pde_mass,
        "l1_error": l1,
    });
    let stride = (res.times.len() / 200).max(1);
    let plots = vec![line(
        "survival",
        "survival fraction",
        "t",
        "alive",
        (false, false),
        vec![
            Series {
                label: "particles".into(),
                points: res
                    .times
                    .iter()
                    .zip(&res.survival)
                    .step_by(stride)
                    .map(|(t, s)| (*t, *s))
                    .collect(),
            },
            Series {
                label: "PDE mass".into(),
                points: (0..=time.nt).map(|n| (time.t(n), pde.snapshots[n].mass())).collect(),
            },
        ],
        None,
    )];
    Ok(Outcome::ok(result, plots))
}
