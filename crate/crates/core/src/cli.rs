//! Command-line front end: `orbit | gfun | region | simulate | validate | sweep`.
//!
//! Every command reads an optional config file, writes its artifacts into the
//! output directory and a `<command>.manifest.json` next to them. CSV files
//! start with `#` comment lines carrying the manifest hash; JSON files carry it
//! under `manifest_hash`. Outputs depend only on the config, the flags and the
//! seed; the wall time appears in the manifest only.
//!
//! Exit codes: 0 success, 1 internal error, 2 config error, 3 no convergence,
//! 4 assumption violation, 5 integration failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::config::{load_model_config, InitPhase, RunConfig, SectionKind};
use crate::error::{exit_code, Error, Result};
use crate::integrate::Tolerances;
use crate::locking::{
    boundary_curves, default_nondeg_tol, find_singular_points, predicted_beta_window, RegionSpec,
    Section,
};
use crate::model::ControlParams;
use crate::orbit::ShootingOptions;
use crate::sim::{
    cycle_state, find_locking_boundary, simulate, sweep_grid, validate_averaged_drift,
    BottleneckProbe, Classification, Reference, RunSettings, Side, SweepSpec,
};

/// Environment variable holding the log filter (`error`, `warn`, `info`, `debug`, ...).
pub const LOG_ENV: &str = "MODLOCK_LOG";

/// Config used when `--config` is omitted.
pub const DEFAULT_CONFIG: &str = "model.family = vdp_laser\n";

#[derive(Debug, Parser)]
#[command(name = "modlock", version, about = "Modulation-frequency locking of forced modulated waves")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Config file; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Seed for randomized initial phases.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for probes and sweeps; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Periodic orbit, Floquet multipliers and adjoint.
    Orbit,
    /// Locking function G and its critical points.
    Gfun {
        #[arg(long)]
        n_grid: Option<usize>,
    },
    /// Cross-section of the locking region.
    Region {
        #[arg(long, value_enum)]
        section: Option<SectionArg>,
        #[arg(long)]
        n_points: Option<usize>,
        /// Largest 1/alpha of a beta-const section.
        #[arg(long, default_value_t = 0.01)]
        nu_max: f64,
    },
    /// One forced run with locking classification.
    Simulate {
        #[arg(long)]
        horizon: Option<f64>,
        /// Initial modulation phase; overrides `sim.init_phase`.
        #[arg(long)]
        init_phase: Option<f64>,
    },
    /// Averaged-drift and locking-boundary validation.
    Validate {
        #[arg(long)]
        n_probe: Option<usize>,
        /// Skip the gamma/2 scaling probe.
        #[arg(long)]
        no_scaling: bool,
        /// Skip the boundary bisections.
        #[arg(long)]
        no_boundary: bool,
    },
    /// Classification over a (beta, gamma) grid.
    Sweep {
        #[arg(long)]
        n_beta: Option<usize>,
        #[arg(long)]
        n_gamma: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SectionArg {
    AlphaConst,
    BetaConst,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Orbit => "orbit",
            Command::Gfun { .. } => "gfun",
            Command::Region { .. } => "region",
            Command::Simulate { .. } => "simulate",
            Command::Validate { .. } => "validate",
            Command::Sweep { .. } => "sweep",
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit_code::CONFIG } else { exit_code::OK };
        }
    };
    match run(&cli) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            exit_code::OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Installs the logger configured by [`LOG_ENV`] (default `warn`).
pub fn init_logging() {
    let env = env_logger::Env::new().filter_or(LOG_ENV, "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Runs a parsed command; returns the files written.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.common.jobs)
        .build()
        .map_err(|e| Error::ContractViolation(format!("thread pool: {e}")))?;
    pool.install(|| run_in_pool(cli))
}

fn run_in_pool(cli: &Cli) -> Result<Vec<PathBuf>> {
    let start = Instant::now();
    let (cfg, config_text) = match &cli.common.config {
        Some(path) => {
            let cfg = load_model_config(path)?;
            (cfg, fs::read(path)?)
        }
        None => (
            crate::config::parse_config(DEFAULT_CONFIG)?,
            DEFAULT_CONFIG.as_bytes().to_vec(),
        ),
    };
    fs::create_dir_all(&cli.common.out)?;
    let mut ctx = Context {
        cli,
        cfg,
        config_hash: hex(&Sha256::digest(&config_text)),
        manifest_hash: String::new(),
        parameters: Map::new(),
        written: Vec::new(),
    };
    ctx.manifest_hash = ctx.compute_manifest_hash();
    info!("{} (manifest {})", cli.command.name(), &ctx.manifest_hash[..12]);
    match &cli.command {
        Command::Orbit => cmd_orbit(&mut ctx)?,
        Command::Gfun { n_grid } => cmd_gfun(&mut ctx, *n_grid)?,
        Command::Region {
            section,
            n_points,
            nu_max,
        } => cmd_region(&mut ctx, *section, *n_points, *nu_max)?,
        Command::Simulate {
            horizon,
            init_phase,
        } => cmd_simulate(&mut ctx, *horizon, *init_phase)?,
        Command::Validate {
            n_probe,
            no_scaling,
            no_boundary,
        } => cmd_validate(&mut ctx, *n_probe, !*no_scaling, !*no_boundary)?,
        Command::Sweep { n_beta, n_gamma } => cmd_sweep(&mut ctx, *n_beta, *n_gamma)?,
    }
    ctx.write_manifest(start.elapsed().as_secs_f64())
}

struct Context<'a> {
    cli: &'a Cli,
    cfg: RunConfig,
    config_hash: String,
    manifest_hash: String,
    parameters: Map<String, Value>,
    written: Vec<PathBuf>,
}

impl Context<'_> {
    fn compute_manifest_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.config_hash.as_bytes());
        h.update(format!("{:?}", self.cli.command).as_bytes());
        h.update(self.cli.common.seed.to_le_bytes());
        h.update(env!("CARGO_PKG_VERSION").as_bytes());
        hex(&h.finalize())
    }

    fn path(&self, name: &str) -> PathBuf {
        self.cli.common.out.join(name)
    }

    fn shooting(&self) -> ShootingOptions {
        ShootingOptions {
            tol: self.cfg.numeric.shooting_tol,
            max_iter: self.cfg.numeric.max_iter,
            ..ShootingOptions::default()
        }
    }

    fn tolerances(&self) -> Result<Tolerances> {
        Tolerances::new(self.cfg.numeric.rtol, self.cfg.numeric.atol)
    }

    fn reference(&self) -> Result<Reference> {
        Reference::compute(
            &self.cfg.model,
            &self.shooting(),
            self.tolerances()?,
            self.cfg.numeric.n_grid,
            self.cfg.numeric.n_quad,
        )
    }

    fn region_spec(&self, reference: &Reference) -> Result<RegionSpec> {
        let d = RegionSpec::default_for(&reference.g);
        let r = &self.cfg.region;
        RegionSpec::new(
            r.mu_star_low.unwrap_or(d.mu_star_low),
            r.mu_star_high.unwrap_or(d.mu_star_high),
            r.margin.unwrap_or(d.margin),
        )
    }

    fn control(&mut self, reference: &Reference) -> Result<ControlParams> {
        let p = self.cfg.control.resolve(reference.beta0())?;
        self.record("alpha", num(p.alpha()));
        self.record("beta", num(p.beta()));
        self.record("gamma", num(p.gamma()));
        Ok(p)
    }

    fn record(&mut self, key: &str, v: Value) {
        self.parameters.insert(key.to_string(), v);
    }

    fn header(&self) -> String {
        format!(
            "# modlock {} command={} manifest_hash={} config_hash={} seed={}\n",
            env!("CARGO_PKG_VERSION"),
            self.cli.command.name(),
            self.manifest_hash,
            self.config_hash,
            self.cli.common.seed
        )
    }

    fn write_csv(&mut self, name: &str, columns: &str, body: &str) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, format!("{}{columns}\n{body}", self.header()))?;
        self.written.push(path);
        Ok(())
    }

    fn write_json(&mut self, name: &str, mut value: Map<String, Value>) -> Result<()> {
        value.insert("manifest_hash".into(), Value::String(self.manifest_hash.clone()));
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(&Value::Object(value))
            .map_err(|e| Error::ContractViolation(e.to_string()))?;
        text.push('\n');
        fs::write(&path, text)?;
        self.written.push(path);
        Ok(())
    }

    fn write_manifest(mut self, wall_time: f64) -> Result<Vec<PathBuf>> {
        let files: Vec<Value> = self
            .written
            .iter()
            .map(|p| Value::String(p.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned())))
            .collect();
        let manifest = json!({
            "command": self.cli.command.name(),
            "config_path": self.cli.common.config.as_ref().map(|p| p.display().to_string()),
            "config_hash": self.config_hash,
            "manifest_hash": self.manifest_hash,
            "seed": self.cli.common.seed,
            "tool_version": env!("CARGO_PKG_VERSION"),
            "parameters": Value::Object(std::mem::take(&mut self.parameters)),
            "wall_time": wall_time,
            "outputs": files,
        });
        let path = self.path(&format!("{}.manifest.json", self.cli.command.name()));
        let mut text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::ContractViolation(e.to_string()))?;
        text.push('\n');
        fs::write(&path, text)?;
        self.written.push(path);
        Ok(self.written)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn num(v: f64) -> Value {
    serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number)
}

fn opt(v: Option<f64>) -> Value {
    v.map_or(Value::Null, num)
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn column_names(prefix: &str, n: usize) -> Vec<String> {
    if n == 1 {
        vec![prefix.to_string()]
    } else {
        (1..=n).map(|i| format!("{prefix}{i}")).collect()
    }
}

fn cmd_orbit(ctx: &mut Context) -> Result<()> {
    let reference = ctx.reference()?;
    let a = &reference.analysis;
    let orbit = &a.orbit;
    let n = reference.model.dim_x();
    let mut columns = vec!["psi".to_string()];
    columns.extend(column_names("x", n));
    columns.push("r".into());
    columns.extend(column_names("p_x", n));
    columns.push("p_r".into());
    let rows = 512;
    let mut body = String::new();
    for i in 0..rows {
        let psi = std::f64::consts::TAU * i as f64 / rows as f64;
        let z = orbit.z(psi);
        let p = a.adjoint.p(psi);
        let fields: Vec<String> = std::iter::once(psi)
            .chain(z)
            .chain(p)
            .map(|v| v.to_string())
            .collect();
        body.push_str(&fields.join(","));
        body.push('\n');
    }
    ctx.write_csv("orbit.csv", &columns.join(","), &body)?;
    let multipliers: Vec<Value> = a
        .floquet
        .multipliers
        .iter()
        .map(|m| json!([num(m.re), num(m.im)]))
        .collect();
    let mut out = Map::new();
    out.insert("T".into(), num(orbit.period()));
    out.insert("beta0".into(), num(orbit.beta0()));
    out.insert("alpha0".into(), num(a.offsets.alpha0));
    out.insert("multipliers".into(), Value::Array(multipliers));
    out.insert("trivial_multiplier_error".into(), num(a.floquet.trivial_multiplier_error));
    out.insert("hyperbolic".into(), Value::Bool(a.floquet.hyperbolic));
    out.insert("normalization_residual".into(), num(a.adjoint.normalization_residual()));
    out.insert("closure_residual".into(), num(orbit.closure_residual()));
    ctx.record("model", Value::String(reference.model.family().name().to_string()));
    ctx.write_json("orbit.json", out)
}

fn cmd_gfun(ctx: &mut Context, n_grid: Option<usize>) -> Result<()> {
    if let Some(n) = n_grid {
        if n < 8 {
            return Err(Error::config("--n-grid", format!("must be >= 8 (got {n})")));
        }
        ctx.cfg.numeric.n_grid = n;
    }
    let reference = ctx.reference()?;
    let g = &reference.g;
    let tol = ctx.cfg.region.nondeg_tol.unwrap_or_else(|| default_nondeg_tol(g));
    let singular = find_singular_points(g, tol)?;
    let mut body = String::new();
    for &(psi, value, slope) in g.samples() {
        let _ = writeln!(body, "{psi},{value},{slope}");
    }
    ctx.write_csv("gfun.csv", "psi,G,dG", &body)?;
    let mut out = Map::new();
    out.insert("G_minus".into(), num(g.g_minus()));
    out.insert("G_plus".into(), num(g.g_plus()));
    out.insert("G_mean".into(), num(g.mean()));
    out.insert(
        "singular_points".into(),
        Value::Array(singular.iter().map(|s| num(s.psi)).collect()),
    );
    out.insert(
        "singular_values".into(),
        Value::Array(singular.iter().map(|s| num(s.value)).collect()),
    );
    out.insert(
        "singular_second_derivatives".into(),
        Value::Array(singular.iter().map(|s| num(s.second_derivative)).collect()),
    );
    out.insert("n_grid".into(), json!(g.samples().len()));
    ctx.record("n_grid", json!(g.samples().len()));
    ctx.write_json("gfun.json", out)
}

fn cmd_region(
    ctx: &mut Context,
    section: Option<SectionArg>,
    n_points: Option<usize>,
    nu_max: f64,
) -> Result<()> {
    let reference = ctx.reference()?;
    let spec = ctx.region_spec(&reference)?;
    let kind = match section {
        Some(SectionArg::AlphaConst) => SectionKind::AlphaConst,
        Some(SectionArg::BetaConst) => SectionKind::BetaConst,
        None => ctx.cfg.region.section,
    };
    let n_points = n_points.unwrap_or(ctx.cfg.region.n_points);
    let params = ctx.control(&reference)?;
    let beta0 = reference.beta0();
    let (sec, x_name) = match kind {
        SectionKind::AlphaConst => (
            Section::AlphaConst {
                alpha: params.alpha(),
                beta0,
            },
            "beta",
        ),
        SectionKind::BetaConst => {
            if !(nu_max > 0.0 && nu_max.is_finite()) {
                return Err(Error::config("--nu-max", format!("must be > 0 (got {nu_max})")));
            }
            (
                Section::BetaConst {
                    beta: params.beta(),
                    beta0,
                    nu_max,
                },
                "inv_alpha",
            )
        }
    };
    let curves = boundary_curves(&reference.g, &spec, sec, n_points);
    let mut body = String::new();
    for b in curves.curves.iter().chain(&curves.lines) {
        for (x, gamma) in &b.points {
            let _ = writeln!(body, "{x},{gamma},{}", b.label);
        }
    }
    ctx.write_csv("region.csv", &format!("{x_name},gamma,branch"), &body)?;
    let mut out = Map::new();
    out.insert("section".into(), json!(x_name));
    out.insert("beta0".into(), num(beta0));
    out.insert("G_minus".into(), num(reference.g.g_minus()));
    out.insert("G_plus".into(), num(reference.g.g_plus()));
    out.insert("margin".into(), num(spec.margin));
    out.insert("mu_star_low".into(), num(spec.mu_star_low));
    out.insert("mu_star_high".into(), num(spec.mu_star_high));
    out.insert(
        "branches".into(),
        Value::Array(
            curves
                .curves
                .iter()
                .chain(&curves.lines)
                .map(|b| json!(b.label))
                .collect(),
        ),
    );
    out.insert(
        "diagnostic".into(),
        curves.diagnostic.map_or(Value::Null, Value::String),
    );
    ctx.write_json("region.json", out)
}

fn init_phase(ctx: &Context, flag: Option<f64>, salt: u64) -> f64 {
    match flag.map(InitPhase::Fixed).or(ctx.cfg.sim.init_phase) {
        Some(InitPhase::Fixed(p)) => p,
        Some(InitPhase::Random) => {
            let mut rng = ChaCha8Rng::seed_from_u64(ctx.cli.common.seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15));
            rng.random_range(0.0..std::f64::consts::TAU)
        }
        None => 0.0,
    }
}

fn run_settings(ctx: &Context, horizon: Option<f64>) -> Result<RunSettings> {
    let mut s = RunSettings::from_config(&ctx.cfg.numeric, &ctx.cfg.sim)?;
    if let Some(h) = horizon {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::config("--horizon", format!("must be > 0 (got {h})")));
        }
        s.horizon = Some(h);
    }
    Ok(s)
}

fn classification_fields(out: &mut Map<String, Value>, c: &Classification) {
    out.insert("classification".into(), json!(c.label()));
    out.insert("theta_lock".into(), opt(c.theta()));
    out.insert("drift_rate".into(), opt(c.rate()));
    let stable = match c {
        Classification::Locked { stable, .. } => stable.map_or(Value::Null, Value::Bool),
        _ => Value::Null,
    };
    out.insert("stable_equilibrium".into(), stable);
}

fn cmd_simulate(ctx: &mut Context, horizon: Option<f64>, phase: Option<f64>) -> Result<()> {
    let reference = ctx.reference()?;
    let params = ctx.control(&reference)?;
    let settings = run_settings(ctx, horizon)?;
    let psi0 = init_phase(ctx, phase, 0);
    let run = simulate(&reference, &params, &cycle_state(reference.orbit(), psi0), &settings)?;
    let residuals = run.residual_series(reference.orbit());
    let stride = settings.sim.samples_per_period;
    let mut body = String::new();
    for i in (0..run.trajectory.len()).step_by(stride) {
        let _ = writeln!(
            body,
            "{},{},{}",
            run.trajectory.t[i], run.psi1_hat[i], residuals[i]
        );
    }
    ctx.write_csv("simulate.csv", "t,psi1_hat,residual", &body)?;
    let mut out = Map::new();
    classification_fields(&mut out, &run.classification);
    out.insert("sigma_hat".into(), opt(run.sigma_hat));
    out.insert("residual".into(), opt(run.residual));
    out.insert("residual_bound".into(), num(run.residual_bound));
    out.insert(
        "residual_ok".into(),
        run.residual_ok().map_or(Value::Null, Value::Bool),
    );
    out.insert("alpha".into(), num(params.alpha()));
    out.insert("beta".into(), num(params.beta()));
    out.insert("gamma".into(), num(params.gamma()));
    out.insert("mu".into(), num(params.mu()));
    out.insert("nu".into(), num(params.nu()));
    out.insert("delta".into(), opt(params.detuning(reference.beta0())));
    out.insert("beta0".into(), num(reference.beta0()));
    out.insert("init_phase".into(), num(psi0));
    out.insert("horizon".into(), num(run.horizon));
    out.insert("transient".into(), num(run.transient));
    out.insert("drift_threshold".into(), num(run.drift_threshold));
    out.insert("max_distance".into(), num(run.max_distance));
    ctx.record("init_phase", num(psi0));
    ctx.record("horizon", num(run.horizon));
    ctx.write_json("simulate.json", out)
}

fn cmd_validate(
    ctx: &mut Context,
    n_probe: Option<usize>,
    scaling: bool,
    boundary: bool,
) -> Result<()> {
    let reference = ctx.reference()?;
    let params = ctx.control(&reference)?;
    let settings = run_settings(ctx, None)?;
    let n_probe = n_probe.or(ctx.cfg.sim.n_probe).unwrap_or(8);
    let report = validate_averaged_drift(&reference, &params, n_probe, &settings.sim, scaling)?;
    let mut out = Map::new();
    out.insert("mu".into(), num(report.mu));
    out.insert("nu".into(), num(report.nu));
    out.insert("delta".into(), opt(report.delta));
    out.insert("n_probe".into(), json!(n_probe));
    out.insert("drift_windows".into(), json!(report.windows));
    out.insert("drift_mean_relative_deviation".into(), num(report.mean_relative_deviation));
    out.insert("drift_max_relative_deviation".into(), num(report.max_relative_deviation));
    out.insert("drift_gain".into(), opt(report.gain));
    out.insert(
        "drift_gain_ideal".into(),
        num(params.mu() * params.mu()),
    );
    out.insert("scaling_gamma".into(), opt(report.scaling.map(|s| s.gamma)));
    out.insert("scaling_gain".into(), opt(report.scaling.map(|s| s.gain)));
    out.insert("scaling_ratio".into(), opt(report.scaling.map(|s| s.ratio)));
    if boundary && params.mu() > 0.0 {
        let mu = params.mu();
        let tol = 0.002 * (reference.g.g_plus() - reference.g.g_minus()) * mu * mu;
        let (lo, hi) = predicted_beta_window(&reference.g, reference.beta0(), mu);
        for (side, name, edge, predicted) in [
            (Side::Upper, "upper", reference.g.g_plus(), hi),
            (Side::Lower, "lower", reference.g.g_minus(), lo),
        ] {
            let mut probe = BottleneckProbe::new(&reference, params.alpha(), params.gamma(), side);
            probe.sim = settings.sim;
            let b = find_locking_boundary(&probe, reference.beta0(), mu, &reference.g, side, tol)?;
            out.insert(format!("boundary_{name}_beta_c"), num(b.beta_c));
            out.insert(format!("boundary_{name}_beta_predicted"), num(predicted));
            out.insert(format!("boundary_{name}_delta_c"), num(b.delta_c));
            out.insert(format!("boundary_{name}_delta_predicted"), num(edge));
            out.insert(
                format!("boundary_{name}_relative_error"),
                num((b.delta_c - edge).abs() / edge.abs()),
            );
        }
    }
    ctx.record("n_probe", json!(n_probe));
    ctx.write_json("validate.json", out)
}

fn cmd_sweep(ctx: &mut Context, n_beta: Option<usize>, n_gamma: Option<usize>) -> Result<()> {
    let reference = ctx.reference()?;
    let params = ctx.control(&reference)?;
    let region = ctx.region_spec(&reference)?;
    let settings = run_settings(ctx, None)?;
    let sw = &ctx.cfg.sweep;
    let gamma_max = sw.gamma_max.unwrap_or(params.gamma());
    let gamma_min = sw.gamma_min.unwrap_or(0.5 * gamma_max);
    if gamma_min > gamma_max {
        return Err(Error::config("sweep.gamma_min", "must be <= sweep.gamma_max"));
    }
    let mu_max = gamma_max / params.alpha();
    let g = &reference.g;
    let (mid, half) = (0.5 * (g.g_plus() + g.g_minus()), 0.5 * (g.g_plus() - g.g_minus()));
    let beta0 = reference.beta0();
    let lo = sw.beta_offset_min.unwrap_or(mu_max * mu_max * (mid - 1.5 * half));
    let hi = sw.beta_offset_max.unwrap_or(mu_max * mu_max * (mid + 1.5 * half));
    let spec = SweepSpec {
        alpha: params.alpha(),
        beta_range: (beta0 + lo, beta0 + hi),
        gamma_range: (gamma_min, gamma_max),
        n_beta: n_beta.or(sw.n_beta).unwrap_or(3),
        n_gamma: n_gamma.or(sw.n_gamma).unwrap_or(3),
    };
    let cells = sweep_grid(&reference, &spec, &region, &settings, |i| {
        init_phase(ctx, None, i as u64)
    })?;
    let mut body = String::new();
    for c in &cells {
        let _ = writeln!(
            body,
            "{},{},{},{},{},{},{},{},{}",
            c.alpha,
            c.beta,
            c.gamma,
            c.mu,
            c.delta,
            c.classification.label(),
            cell(c.theta_lock),
            cell(c.drift_rate),
            c.predicted_inside
        );
    }
    ctx.write_csv(
        "sweep.csv",
        "alpha,beta,gamma,mu,Delta,classification,theta_lock,drift_rate,predicted_inside",
        &body,
    )?;
    let errors: Vec<Value> = cells
        .iter()
        .filter_map(|c| c.error.as_ref().map(|e| json!({"index": c.index, "error": e})))
        .collect();
    let agree = cells
        .iter()
        .filter(|c| c.classification.is_locked() == c.predicted_inside)
        .count();
    let mut out = Map::new();
    out.insert("n_cells".into(), json!(cells.len()));
    out.insert("locked".into(), json!(cells.iter().filter(|c| c.classification.is_locked()).count()));
    out.insert("predicted_inside".into(), json!(cells.iter().filter(|c| c.predicted_inside).count()));
    out.insert("agreement".into(), json!(agree));
    out.insert("beta0".into(), num(beta0));
    out.insert("errors".into(), Value::Array(errors));
    ctx.record("n_beta", json!(spec.n_beta));
    ctx.record("n_gamma", json!(spec.n_gamma));
    ctx.write_json("sweep.json", out)
}
