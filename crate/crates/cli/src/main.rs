//! `spindle`: phantoms, forward data, harmonic filtering, reconstruction,
//! microlocal verification and artefact metrics from the command line.
//!
//! Settings resolve as defaults, then `--config` file, then flags. Every run
//! prints the resolved configuration before doing any work.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error
//! (unreadable or inconsistent files), 3 numeric failure.

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use spindle_core::config::{KeyValues, RunConfig};
use spindle_core::harmonics::{q_factor, q_sqrt_factor};
use spindle_core::io::{self, Axis};
use spindle_core::microlocal::{artefact_metrics, run_verification};
use spindle_core::phantoms::PhantomSpec;
use spindle_core::pipeline::{format_report, reconstruct};
use spindle_core::{Error, Sinogram, Vec3};

#[derive(Debug)]
struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn usage(msg: impl Into<String>) -> Self {
        Self { code: 1, msg: msg.into() }
    }

    fn data(msg: impl Into<String>) -> Self {
        Self { code: 2, msg: msg.into() }
    }

    fn numeric(msg: impl Into<String>) -> Self {
        Self { code: 3, msg: msg.into() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::Parse { .. } | Error::Geometry(_) | Error::Domain(_) => 1,
            Error::Magic { .. } | Error::Header(_) | Error::Length { .. } | Error::Io(_) => 2,
            Error::Numeric(_) => 3,
        };
        Self { code, msg: e.to_string() }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

#[derive(Parser, Debug)]
#[command(name = "spindle", version, about = "Spindle and cylinder transform toolkit")]
struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// `key = value` file with run settings; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a phantom volume.
    Phantom(PhantomCmd),
    /// Simulate transform data from a volume.
    Forward(ForwardCmd),
    /// Apply Q, Q^{1/2} or plain truncation to the spherical components of a sinogram.
    Filter(FilterCmd),
    /// Reconstruct a volume from a sinogram; the file fixes the data layout.
    Reconstruct(ReconstructCmd),
    /// Run the canonical-relation checks.
    VerifyMicrolocal(VerifyCmd),
    /// Sphere-smear and mirror ratios of a reconstruction of a bead.
    Metrics(MetricsCmd),
}

#[derive(Args, Debug, Default)]
struct GridArgs {
    #[arg(long, value_parser = ["spindle", "cylinder"])]
    transform: Option<String>,
    /// Inner radius of the spindle-domain shell.
    #[arg(long)]
    inner: Option<f64>,
    /// Outer radius of the spindle-domain shell.
    #[arg(long)]
    outer: Option<f64>,
    #[arg(long)]
    grid_n: Option<usize>,
    /// Sphere grid resolves degree L with (L+1) x (2L+2) directions.
    #[arg(long)]
    sphere_l: Option<usize>,
    #[arg(long)]
    n_s: Option<usize>,
    #[arg(long)]
    quad_n_phi: Option<usize>,
    #[arg(long)]
    quad_n_z: Option<usize>,
    #[arg(long)]
    weight_pow: Option<f64>,
}

impl GridArgs {
    fn fill(&self, kv: &mut KeyValues) {
        set_opt(kv, "transform", &self.transform);
        set_opt(kv, "inner", &self.inner);
        set_opt(kv, "outer", &self.outer);
        set_opt(kv, "grid_n", &self.grid_n);
        set_opt(kv, "sphere_l", &self.sphere_l);
        set_opt(kv, "n_s", &self.n_s);
        set_opt(kv, "quad_n_phi", &self.quad_n_phi);
        set_opt(kv, "quad_n_z", &self.quad_n_z);
        set_opt(kv, "weight_pow", &self.weight_pow);
    }
}

#[derive(Args, Debug)]
struct PhantomArgs {
    #[arg(long, value_parser = spindle_core::phantoms::KINDS)]
    kind: String,
    /// Phantom parameter `key=value`, repeatable (e.g. `center=0.4,0,0`).
    #[arg(long = "param", value_name = "KEY=VALUE")]
    params: Vec<String>,
}

impl PhantomArgs {
    fn spec(&self, rc: &RunConfig) -> CliResult<PhantomSpec> {
        let domain = rc.domain()?;
        let mut kv = KeyValues::default();
        kv.set("kind", &self.kind);
        for p in &self.params {
            let (k, v) = p.split_once('=').ok_or_else(|| Failure::usage(format!("--param expects KEY=VALUE, got {p:?}")))?;
            let k = k.trim();
            if kv.get(k).is_some() {
                return Err(Failure::usage(format!("phantom parameter {k:?} given twice")));
            }
            kv.set(k, v.trim());
        }
        let allowed = PhantomSpec::default_for(&self.kind, &domain)?.to_key_values();
        let keys: Vec<&str> = allowed.0.keys().map(String::as_str).collect();
        kv.reject_unknown(&keys)?;
        let spec = PhantomSpec::from_key_values(&kv, &domain)?;
        spec.validate(&domain)?;
        Ok(spec)
    }
}

#[derive(Args, Debug)]
struct PhantomCmd {
    #[command(flatten)]
    phantom: PhantomArgs,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long)]
    out: PathBuf,
    /// Also write a maximum-intensity projection (PGM).
    #[arg(long)]
    mip: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = AxisArg::Z)]
    mip_axis: AxisArg,
}

#[derive(Args, Debug)]
struct ForwardCmd {
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FilterKind {
    /// Multiply degree l by l(l+1)/(l(l+1)+1).
    Q,
    /// Multiply by the square root of the Q multiplier.
    QSqrt,
    /// Keep degrees up to L unchanged.
    Truncate,
}

#[derive(Args, Debug)]
struct FilterCmd {
    #[arg(long)]
    input: PathBuf,
    /// Band limit L of the filtered data.
    #[arg(long = "filter-L", visible_alias = "filter-l", default_value_t = 25)]
    filter_l: usize,
    #[arg(long, value_enum, default_value_t = FilterKind::Q)]
    kind: FilterKind,
    /// Filtered sinogram on the input's grid.
    #[arg(long)]
    out: PathBuf,
    /// Also write the filtered harmonic coefficients.
    #[arg(long)]
    harmonics_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReconstructCmd {
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, value_parser = ["bp", "fbp", "cgls", "landweber"])]
    method: Option<String>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// Tikhonov parameter or `auto`.
    #[arg(long)]
    tikhonov_mu: Option<String>,
    /// Landweber step or `auto`.
    #[arg(long)]
    landweber_step: Option<String>,
    /// Solve with Q^{1/2} applied to both sides.
    #[arg(long)]
    precondition: bool,
    #[arg(long = "filter-L", visible_alias = "filter-l")]
    filter_l: Option<usize>,
    /// Gaussian noise standard deviation as a fraction of the data RMS.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Text report with the residual history.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    mip: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = AxisArg::Z)]
    mip_axis: AxisArg,
}

#[derive(Args, Debug)]
struct VerifyCmd {
    #[arg(long, default_value_t = 20)]
    n_points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Multiplies every tolerance (divides lower bounds).
    #[arg(long, default_value_t = 1.0)]
    tolerance_factor: f64,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MetricsCmd {
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    phantom: PhantomArgs,
    #[command(flatten)]
    grid: GridArgs,
    /// JSON report.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Normalised line profile through the bead centre and its mirror image (CSV).
    #[arg(long)]
    profile: Option<PathBuf>,
    #[arg(long, default_value_t = 128)]
    profile_n: usize,
    #[arg(long)]
    mip: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = AxisArg::Z)]
    mip_axis: AxisArg,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AxisArg {
    X,
    Y,
    Z,
}

impl From<AxisArg> for Axis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::X => Axis::X,
            AxisArg::Y => Axis::Y,
            AxisArg::Z => Axis::Z,
        }
    }
}

fn set_opt<T: fmt::Display>(kv: &mut KeyValues, key: &str, v: &Option<T>) {
    if let Some(v) = v {
        kv.set(key, v);
    }
}

fn load_file_config(path: Option<&Path>) -> CliResult<KeyValues> {
    match path {
        None => Ok(KeyValues::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::usage(format!("cannot read config {}: {e}", p.display())))?;
            Ok(KeyValues::parse(&text)?)
        }
    }
}

fn resolve(file: &KeyValues, flags: &KeyValues) -> CliResult<(RunConfig, KeyValues)> {
    let mut kv = file.clone();
    kv.merge(flags);
    let threads = kv.0.remove("threads");
    let rc = RunConfig::from_key_values(&kv)?;
    let mut echo = rc.to_key_values();
    if let Some(t) = threads {
        echo.set("threads", t);
    }
    Ok((rc, echo))
}

fn echo(title: &str, kv: &KeyValues) {
    println!("# {title}");
    print!("{}", kv.to_text());
}

fn cmd_phantom(c: &PhantomCmd, rc: &RunConfig) -> CliResult {
    let spec = c.phantom.spec(rc)?;
    echo("phantom", &spec.to_key_values());
    let v = spec.generate(&rc.volume_template()?, &rc.domain()?)?;
    io::write_volume(&v, &c.out)?;
    if let Some(p) = &c.mip {
        io::write_mip(&v, c.mip_axis.into(), p)?;
    }
    println!("wrote {} ({}x{}x{})", c.out.display(), v.dims[0], v.dims[1], v.dims[2]);
    Ok(())
}

fn cmd_forward(c: &ForwardCmd, rc: &RunConfig) -> CliResult {
    let f = io::read_volume(&c.input)?;
    let template = rc.volume_template()?;
    if !f.same_grid(&template) {
        return Err(Failure::data(format!(
            "volume grid {:?} (spacing {}) does not match the configured grid {:?} (spacing {})",
            f.dims, f.spacing, template.dims, template.spacing
        )));
    }
    let op = rc.operator_for(&f, &rc.sinogram_template()?)?;
    let b = op.forward(&f)?;
    io::write_sinogram(&b, &c.out)?;
    println!("wrote {} ({} s x {} directions)", c.out.display(), b.n_s(), b.grid.len());
    Ok(())
}

fn cmd_filter(c: &FilterCmd) -> CliResult {
    let b = io::read_sinogram(&c.input)?;
    let factor: fn(usize) -> f64 = match c.kind {
        FilterKind::Q => q_factor,
        FilterKind::QSqrt => q_sqrt_factor,
        FilterKind::Truncate => |_| 1.0,
    };
    let stack = b.to_harmonics(c.filter_l)?.scaled_by_degree(factor);
    let out = Sinogram::from_harmonics(&b, &stack)?;
    io::write_sinogram(&out, &c.out)?;
    if let Some(p) = &c.harmonics_out {
        io::write_harmonics(&stack, p)?;
    }
    println!("wrote {} (L = {}, {:?})", c.out.display(), c.filter_l, c.kind);
    Ok(())
}

fn cmd_reconstruct(c: &ReconstructCmd, rc: &RunConfig) -> CliResult {
    let b = io::read_sinogram(&c.input)?;
    let mut layout = KeyValues::default();
    layout.set("n_s", b.n_s());
    layout.set("n_lat", b.grid.n_lat);
    layout.set("n_lon", b.grid.n_lon);
    echo("data layout (from the sinogram file)", &layout);
    let op = rc.operator_for(&rc.volume_template()?, &b)?;
    let r = reconstruct(&op, &b, &rc.solver, rc.noise)?;
    if r.volume.values.iter().any(|v| !v.is_finite()) {
        return Err(Failure::numeric("reconstruction contains non-finite values"));
    }
    io::write_volume(&r.volume, &c.out)?;
    let report = format_report(&rc.solver, &r.report);
    if let Some(p) = &c.report {
        std::fs::write(p, &report).map_err(Error::from)?;
    }
    if let Some(p) = &c.mip {
        io::write_mip(&r.volume, c.mip_axis.into(), p)?;
    }
    print!("{report}");
    println!("wrote {}", c.out.display());
    Ok(())
}

fn cmd_verify(c: &VerifyCmd) -> CliResult {
    let report = run_verification(c.n_points, c.seed, c.tolerance_factor)?;
    let table = report.table();
    print!("{table}");
    if let Some(p) = &c.report {
        std::fs::write(p, &table).map_err(Error::from)?;
    }
    if report.passed() {
        Ok(())
    } else {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        Err(Failure::numeric(format!("checks failed: {}", failed.join(", "))))
    }
}

fn cmd_metrics(c: &MetricsCmd, rc: &RunConfig) -> CliResult {
    let v = io::read_volume(&c.input)?;
    let spec = c.phantom.spec(rc)?;
    echo("phantom", &spec.to_key_values());
    let m = artefact_metrics(&v, &spec)?;
    let json = serde_json::to_string_pretty(&m).map_err(|e| Failure::numeric(e.to_string()))?;
    println!("{json}");
    if let Some(p) = &c.out {
        std::fs::write(p, format!("{json}\n")).map_err(Error::from)?;
    }
    if let Some(p) = &c.profile {
        let PhantomSpec::Bead { center, .. } = spec else { unreachable!("metrics accept beads only") };
        let (lo, hi) = v.bounds();
        let dir = if center.norm() > 0.0 { center.normalized() } else { Vec3::new(1.0, 0.0, 0.0) };
        // longest segment through the origin along the bead direction inside the grid
        let reach = [dir.x, dir.y, dir.z]
            .iter()
            .zip([lo.x.abs().min(hi.x), lo.y.abs().min(hi.y), lo.z.abs().min(hi.z)])
            .filter(|(d, _)| d.abs() > 1e-12)
            .map(|(d, b)| b / d.abs())
            .fold(f64::INFINITY, f64::min);
        io::write_profile(&v, dir * -reach, dir * reach, c.profile_n, p)?;
    }
    if let Some(p) = &c.mip {
        io::write_mip(&v, c.mip_axis.into(), p)?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    let file = load_file_config(cli.config.as_deref())?;
    let threads = match cli.threads {
        Some(t) => Some(t),
        None => file.parse_value::<usize>("threads")?,
    };
    if let Some(t) = threads {
        if t == 0 {
            return Err(Failure::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure::usage(format!("cannot configure thread pool: {e}")))?;
    }
    let mut flags = KeyValues::default();
    if let Some(t) = threads {
        flags.set("threads", t);
    }
    match &cli.command {
        Command::Phantom(c) => c.grid.fill(&mut flags),
        Command::Forward(c) => c.grid.fill(&mut flags),
        Command::Metrics(c) => c.grid.fill(&mut flags),
        Command::Reconstruct(c) => {
            c.grid.fill(&mut flags);
            set_opt(&mut flags, "method", &c.method);
            set_opt(&mut flags, "max_iters", &c.max_iters);
            set_opt(&mut flags, "tol", &c.tol);
            set_opt(&mut flags, "tikhonov_mu", &c.tikhonov_mu);
            set_opt(&mut flags, "landweber_step", &c.landweber_step);
            if c.precondition {
                flags.set("precondition", true);
            }
            set_opt(&mut flags, "filter_l", &c.filter_l);
            set_opt(&mut flags, "noise", &c.noise);
            set_opt(&mut flags, "seed", &c.seed);
        }
        Command::Filter(_) | Command::VerifyMicrolocal(_) => {}
    }
    let (rc, resolved) = resolve(&file, &flags)?;
    match &cli.command {
        Command::Filter(c) => {
            let mut kv = KeyValues::default();
            kv.set("filter_l", c.filter_l);
            kv.set("kind", format!("{:?}", c.kind).to_lowercase());
            echo("resolved config", &kv);
        }
        Command::VerifyMicrolocal(c) => {
            let mut kv = KeyValues::default();
            kv.set("n_points", c.n_points);
            kv.set("seed", c.seed);
            kv.set("tolerance_factor", c.tolerance_factor);
            echo("resolved config", &kv);
        }
        _ => echo("resolved config", &resolved),
    }
    match &cli.command {
        Command::Phantom(c) => cmd_phantom(c, &rc),
        Command::Forward(c) => cmd_forward(c, &rc),
        Command::Filter(c) => cmd_filter(c),
        Command::Reconstruct(c) => cmd_reconstruct(c, &rc),
        Command::VerifyMicrolocal(c) => cmd_verify(c),
        Command::Metrics(c) => cmd_metrics(c, &rc),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            if f.code == 1 {
                eprintln!("run `spindle --help` for usage");
            }
            ExitCode::from(f.code)
        }
    }
}
