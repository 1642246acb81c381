//! Batch front end: one subcommand per experiment, outputs written under `--out`.
//!
//! Exit codes: 0 success, 1 runtime or I/O failure, 2 configuration error, 3 step-size (CFL)
//! violation, 4 failed sweep member.

use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::analysis::{convergence_study, ConvergenceSetup};
use crate::config::{config_hash, load_config, Config};
use crate::error::{Error, Result};
use crate::greens::{epsilon1_kernel, verify_green, TestSource};
use crate::io::{save_fld, snapshot_name, write_kernel_csv, write_probes_csv, write_residual_csv, RunManifest};
use crate::kleingordon::{cfl_limit, run_pilotwave, PilotWaveSetup};
use crate::measurement::{make_partition, measure_position, measurement_ensemble};
use crate::numerics::fit_line;
use crate::schrodinger::{integrate_bohmian_observed, BohmianState, SchrodingerSolver};

#[derive(Debug, Parser)]
#[command(name = "pilotwave", version, about = "Pilot-wave and Bohmian trajectory experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Schrodinger field with a guided particle.
    RunBohmian(Common),
    /// Forced Klein-Gordon field with the particle it carries.
    RunPilotwave(Common),
    /// Pilot-wave runs over several light speeds against one Bohmian reference.
    Converge(Common),
    /// Position measurement by the per-cell flow.
    Measure(Common),
    /// Retarded Green's function residuals and the far-field kernel.
    GreensCheck(Common),
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::MissingKey(_) | Error::InvalidParams(_) | Error::InvalidGrid(_) => 2,
        Error::OutsideDomain(_) | Error::Superluminal { .. } => 2,
        Error::Cfl { .. } => 3,
        Error::Member { .. } => 4,
        _ => 1,
    }
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    let (name, common, f): (&str, Common, fn(&Context) -> Result<RunManifest>) = match cmd {
        Command::RunBohmian(c) => ("run-bohmian", c, cmd_run_bohmian),
        Command::RunPilotwave(c) => ("run-pilotwave", c, cmd_run_pilotwave),
        Command::Converge(c) => ("converge", c, cmd_converge),
        Command::Measure(c) => ("measure", c, cmd_measure),
        Command::GreensCheck(c) => ("greens-check", c, cmd_greens_check),
    };
    if let Some(n) = common.threads {
        // a pool may already exist when called in-process; the first one wins
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let (config, text) = load_config(&common.config)?;
    let hash = config_hash(&text)?;
    std::fs::create_dir_all(&common.out)?;
    let ctx = Context { config, hash, name, out: common.out, seed: common.seed };
    let start = Instant::now();
    let mut manifest = f(&ctx)?;
    manifest.wall_time = start.elapsed().as_secs_f64();
    manifest.save(&ctx.out.join("manifest.txt"))
}

struct Context {
    config: Config,
    hash: String,
    name: &'static str,
    out: PathBuf,
    seed: Option<u64>,
}

impl Context {
    fn manifest(&self) -> Result<RunManifest> {
        let mut m = RunManifest::new(self.name, &self.hash);
        m.push_params(&self.config.params()?);
        Ok(m)
    }

    fn seed(&self) -> u64 {
        self.seed.or(self.config.run.as_ref().map(|r| r.seed)).unwrap_or(0)
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.out.join(name))?))
    }

    fn snapshot_dir(&self) -> Result<PathBuf> {
        let dir = self.out.join("snapshots");
        std::fs::create_dir_all(&dir)?;
        Ok(dir)
    }
}

fn save_snapshot(dir: &Path, step: usize, psi: &crate::grid::ComplexField, t: f64) -> Result<()> {
    use crate::grid::NodeAccess;
    save_fld(&dir.join(snapshot_name(step)), psi.grid().points(), t, psi.values())
}

fn cmd_run_bohmian(ctx: &Context) -> Result<RunManifest> {
    let cfg = &ctx.config;
    let params = cfg.params()?;
    let grid = cfg.grid()?;
    let run = cfg.run()?;
    let init = cfg.initial()?;
    let psi0 = cfg.initial_field(&grid)?;
    let dt = run.dt.unwrap_or(1e-3);
    let solver = SchrodingerSolver::new(&grid, &params, run.laplacian, None);
    let dir = if run.snapshot_every > 0 { Some(ctx.snapshot_dir()?) } else { None };
    let mut count = 0usize;
    let every = run.snapshot_every;
    let (rec, end) = integrate_bohmian_observed(
        &solver,
        BohmianState::new(psi0, init.position)?,
        run.t_end,
        dt,
        &params,
        every,
        &mut |st| {
            if let Some(d) = &dir {
                save_snapshot(d, count * every, &st.psi, st.time)?;
            }
            count += 1;
            Ok(())
        },
    )?;
    rec.write_csv(ctx.create("trajectory.csv")?)?;
    let mut m = ctx.manifest()?;
    m.push("dt", rec.times.get(1).map_or(dt, |t| t - rec.times[0]));
    m.push("steps", rec.len() - 1);
    m.push("laplacian", format!("{:?}", run.laplacian));
    m.push("final_time", end.time);
    m.push("velocity_scale", rec.velocity_scale());
    m.push("alpha", rec.alpha());
    Ok(m)
}

fn cmd_run_pilotwave(ctx: &Context) -> Result<RunManifest> {
    let cfg = &ctx.config;
    let params = cfg.params()?;
    let grid = cfg.grid()?;
    let run = cfg.run()?;
    let init = cfg.initial()?;
    let psi0 = cfg.initial_field(&grid)?;
    let mut setup = PilotWaveSetup::new(params, psi0, init.position);
    setup.velocity = init.velocity;
    setup.dt = run.dt;
    setup.probes = run.probes.clone();
    let dir = if run.snapshot_every > 0 { Some(ctx.snapshot_dir()?) } else { None };
    let every = run.snapshot_every;
    let mut count = 0usize;
    let out = run_pilotwave(setup, run.t_end, every, &mut |st| {
        if let Some(d) = &dir {
            save_snapshot(d, count * every, &st.psi, st.time)?;
        }
        count += 1;
        Ok(())
    })?;
    out.record.write_csv(ctx.create("trajectory.csv")?)?;
    if !out.probes.points.is_empty() {
        write_probes_csv(ctx.create("probes.csv")?, &out.probes)?;
    }
    let h = grid.min_spacing();
    let mut m = ctx.manifest()?;
    m.push("dt", out.dt);
    m.push("steps", out.steps);
    m.push("cfl_limit", cfl_limit(&grid, params.light_speed));
    m.push("cfl_number", out.dt / cfl_limit(&grid, params.light_speed));
    m.push("mollifier_width", 2.0 * h);
    m.push("extraction_radii", format!("{} {} {}", 2.0 * h, 3.0 * h, 4.0 * h));
    m.push("velocity_scale", out.record.velocity_scale());
    m.push("alpha", out.record.alpha());
    m.push("m_diagnostic", out.record.m_diagnostic());
    for f in &out.record.flags {
        m.push("flag", f);
    }
    Ok(m)
}

fn cmd_converge(ctx: &Context) -> Result<RunManifest> {
    let cfg = &ctx.config;
    let grid = cfg.grid()?;
    let run = cfg.run()?;
    let init = cfg.initial()?;
    let conv = cfg.converge.as_ref().ok_or_else(|| Error::MissingKey("converge".into()))?;
    let mut setup = ConvergenceSetup::new(cfg.initial_field(&grid)?, init.position, run.t_end, conv.lights.clone());
    setup.coupling_a = cfg.physics.a;
    setup.coupling_b = cfg.physics.b;
    setup.probes = run.probes.clone();
    setup.reference_dt = conv.reference_dt;
    setup.reference_kind = run.laplacian;
    setup.dt_factor = conv.dt_factor;
    let report = convergence_study(&setup)?;
    report.write_csv(ctx.create("report.csv")?)?;
    report.reference.write_csv(ctx.create("trajectory.csv")?)?;
    for mem in &report.members {
        mem.record.write_csv(ctx.create(&format!("trajectory_c{}.csv", mem.c))?)?;
    }
    let mut m = ctx.manifest()?;
    m.push("lights", conv.lights.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" "));
    m.push("velocity_scale", report.velocity_scale);
    m.push("order", report.order);
    m.push("fit_residual", report.fit_residual);
    m.push("strictly_decreasing", report.strictly_decreasing());
    for (c, e) in &report.excluded {
        m.push("excluded", format!("c = {c}: {e}"));
    }
    for (c, e) in &report.failed {
        m.push("failed", format!("c = {c}: {e}"));
    }
    for n in &report.notes {
        m.push("note", n);
    }
    if let Err(e) = report.check() {
        // keep the partial outputs and their manifest
        m.save(&ctx.out.join("manifest.txt"))?;
        return Err(e);
    }
    Ok(m)
}

fn cmd_measure(ctx: &Context) -> Result<RunManifest> {
    let cfg = &ctx.config;
    let params = cfg.params()?;
    let grid = cfg.grid()?;
    let init = cfg.initial()?;
    let meas = cfg.measure.as_ref().ok_or_else(|| Error::MissingKey("measure".into()))?;
    let psi0 = cfg.initial_field(&grid)?;
    let partition = make_partition(&grid, meas.cells)?;
    let duration = meas.duration.unwrap_or(20.0 / (params.kappa * params.scales().omega_c));
    let dt = meas.dt.unwrap_or(duration / 400.0);
    let dir = ctx.snapshot_dir()?;
    save_snapshot(&dir, 0, &psi0, 0.0)?;
    let mut state = BohmianState::new(psi0.clone(), init.position)?;
    let outcome = measure_position(&mut state, &partition, &params, duration, dt)?;
    let steps = outcome.times.len() - 1;
    save_snapshot(&dir, steps, &outcome.psi, duration)?;
    outcome.write_csv(ctx.create("collapse.csv")?)?;

    let mut m = ctx.manifest()?;
    m.push("cells", format!("{} {} {}", meas.cells[0], meas.cells[1], meas.cells[2]));
    m.push("duration", duration);
    m.push("dt", duration / steps as f64);
    m.push("cell_index", outcome.cell_index);
    m.push("plateau", outcome.plateau(&partition));
    // decay rate of each cell's L2 norm over the second half of the flow
    let half = steps / 2;
    let ts = &outcome.times[half..];
    for a in 0..partition.len() {
        let logs: Vec<f64> = outcome.norms[half..].iter().map(|n| n[a].max(f64::MIN_POSITIVE).ln()).collect();
        let rate = if ts.len() >= 2 { -fit_line(ts, &logs).1 } else { f64::NAN };
        m.push(&format!("decay_rate_{a}"), rate);
    }
    if meas.trials > 0 {
        let stats = measurement_ensemble(&psi0, &partition, &params, duration, dt, meas.trials, ctx.seed())?;
        let mut w = ctx.create("outcomes.csv")?;
        use std::io::Write;
        writeln!(w, "cell,count,expected")?;
        for (a, (k, p)) in stats.counts.iter().zip(&stats.expected).enumerate() {
            writeln!(w, "{a},{k},{p:.17e}")?;
        }
        m.push("trials", meas.trials);
        m.push("seed", ctx.seed());
        m.push("max_z", stats.max_z());
    }
    Ok(m)
}

fn cmd_greens_check(ctx: &Context) -> Result<RunManifest> {
    let cfg = &ctx.config;
    let params = cfg.params()?;
    let g = cfg.greens.as_ref().ok_or_else(|| Error::MissingKey("greens".into()))?;
    let source = TestSource {
        amplitude: g.source.amplitude,
        t_center: g.source.t_center,
        t_width: g.source.t_width,
        radius: g.source.radius,
    };
    let points: Vec<(f64, f64)> = g.points.iter().map(|p| (p[0], p[1])).collect();
    let report = verify_green(&source, &points, &g.steps, &params)?;
    write_residual_csv(ctx.create("residual.csv")?, &report)?;
    let mut samples = Vec::new();
    for &r in &g.kernel_radii {
        for &s in &g.truncations {
            samples.push(epsilon1_kernel(r, s)?);
        }
    }
    write_kernel_csv(ctx.create("kernel.csv")?, &samples)?;
    let mut m = ctx.manifest()?;
    m.push("min_order", report.min_order());
    if !samples.is_empty() {
        m.push("kernel_max_abs", samples.iter().map(|s| s.value.norm()).fold(0.0, f64::max));
        m.push("kernel_max_error_estimate", samples.iter().map(|s| s.abs_error_estimate).fold(0.0, f64::max));
    }
    Ok(m)
}
