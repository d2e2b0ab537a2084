use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tsmetric::io::{
    export_heatmap, load_model, read_image, save_model, write_field, write_image, write_report,
    HeatmapScale, ReportParams,
};
use tsmetric::{
    build_sim_set, evaluate, fit_ts_model, register_svf, total_distance, Error, Provenance,
    Reference, RegParams, SimConfig, SimSetId, DEFAULT_TIME_SAMPLES,
};

#[derive(Parser)]
#[command(name = "tsmetric", version, about = "Shape and path distance between image time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a time-series model to a set of frames.
    Fit(FitArgs),
    /// Compare two fitted models and write the distance report and maps.
    Compare(CompareArgs),
    /// Register a moving image onto a fixed one and write the velocity field.
    Register(RegisterArgs),
    /// Generate a simulated pair of series from the phantom.
    Simulate(SimulateArgs),
    /// Evaluate a model at a time point.
    Evaluate(EvaluateArgs),
    /// Run the built-in property checks.
    Selftest,
}

#[derive(Args)]
struct RegFlags {
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long = "sigma-fluid")]
    sigma_fluid: Option<f64>,
    #[arg(long = "sigma-diffusion")]
    sigma_diffusion: Option<f64>,
}

impl RegFlags {
    fn params(&self) -> tsmetric::Result<RegParams> {
        let mut p = RegParams::default();
        if let Some(v) = self.levels {
            p.levels = v;
        }
        if let Some(v) = self.iters {
            p.iters_per_level = v;
        }
        if let Some(v) = self.sigma_fluid {
            p.sigma_fluid = v;
        }
        if let Some(v) = self.sigma_diffusion {
            p.sigma_diffusion = v;
        }
        p.validate()?;
        Ok(p)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Longitudinal,
    Template,
}

#[derive(Args)]
struct FitArgs {
    /// Glob pattern or comma-separated list of frame images.
    #[arg(long)]
    frames: String,
    #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
    times: Vec<f64>,
    #[arg(long, value_enum)]
    mode: Mode,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    reg: RegFlags,
}

#[derive(Clone, Copy, ValueEnum)]
enum RefArg {
    A,
    B,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long = "model-a")]
    model_a: PathBuf,
    #[arg(long = "model-b")]
    model_b: PathBuf,
    /// Comparison interval as `ta,tb`.
    #[arg(long, value_delimiter = ',', num_args = 1, allow_hyphen_values = true)]
    interval: Option<Vec<f64>>,
    #[arg(long, default_value_t = DEFAULT_TIME_SAMPLES)]
    samples: usize,
    #[arg(long, value_enum, default_value = "b")]
    reference: RefArg,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    reg: RegFlags,
}

#[derive(Args)]
struct RegisterArgs {
    #[arg(long)]
    fixed: PathBuf,
    #[arg(long)]
    moving: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    reg: RegFlags,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    set: u8,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long = "shape-amp")]
    shape_amp: Option<f64>,
    #[arg(long = "path-amp")]
    path_amp: Option<f64>,
    /// Grid size as `WxH` or `WxHxD`.
    #[arg(long)]
    dims: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    t: f64,
    #[arg(long)]
    out: PathBuf,
}

fn create_dir(dir: &Path) -> tsmetric::Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn frame_paths(spec: &str) -> tsmetric::Result<Vec<PathBuf>> {
    if spec.contains(['*', '?', '[']) {
        let pattern =
            glob::glob(spec).map_err(|e| Error::Invalid(format!("bad glob {spec:?}: {e}")))?;
        let mut paths = Vec::new();
        for entry in pattern {
            let path = entry.map_err(|e| Error::Io {
                path: e.path().to_path_buf(),
                source: e.into(),
            })?;
            paths.push(path);
        }
        // Directory order is not portable.
        paths.sort();
        if paths.is_empty() {
            return Err(Error::Invalid(format!("no frames match {spec:?}")));
        }
        Ok(paths)
    } else {
        Ok(spec
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(PathBuf::from)
            .collect())
    }
}

fn parse_dims(s: &str) -> tsmetric::Result<Vec<usize>> {
    s.split('x')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::Invalid(format!("bad --dims {s:?}; expected WxH or WxHxD")))
        })
        .collect()
}

fn fit(args: &FitArgs) -> tsmetric::Result<()> {
    let reg = args.reg.params()?;
    let paths = frame_paths(&args.frames)?;
    if paths.len() != args.times.len() {
        return Err(Error::Invalid(format!(
            "{} frames but {} times",
            paths.len(),
            args.times.len()
        )));
    }
    let frames = paths
        .iter()
        .map(|p| read_image(p))
        .collect::<tsmetric::Result<Vec<_>>>()?;
    let mode = match args.mode {
        Mode::Longitudinal => Provenance::Longitudinal,
        Mode::Template => Provenance::Template,
    };
    let model = fit_ts_model(&frames, &args.times, mode, &reg)?;
    for w in &model.warnings {
        eprintln!("warning: {w}");
    }
    save_model(&model, &args.out)
}

fn compare(args: &CompareArgs) -> tsmetric::Result<()> {
    let reg = args.reg.params()?;
    let interval = match args.interval.as_deref() {
        None => None,
        Some([a, b]) => Some((*a, *b)),
        Some(_) => return Err(Error::Invalid("--interval takes exactly two values ta,tb".into())),
    };
    let reference = match args.reference {
        RefArg::A => Reference::A,
        RefArg::B => Reference::B,
    };
    let a = load_model(&args.model_a)?;
    let b = load_model(&args.model_b)?;
    let report = total_distance(&a, &b, interval, &reg, args.samples, reference)?;
    create_dir(&args.out)?;
    let params = ReportParams {
        model_a: args.model_a.display().to_string(),
        model_b: args.model_b.display().to_string(),
        requested_interval: interval.map(|(a, b)| [a, b]),
        n_samples: args.samples,
        reference,
        registration: reg,
    };
    write_report(&report, &params, &args.out.join("report.json"))?;
    write_image(&report.ds_map, &args.out.join("ds_map"))?;
    write_image(&report.dp_map, &args.out.join("dp_map"))?;
    export_heatmap(&report.ds_map, &args.out.join("ds_map.pgm"), HeatmapScale::Auto)?;
    export_heatmap(&report.dp_map, &args.out.join("dp_map.pgm"), HeatmapScale::Auto)?;
    eprintln!("ds = {:.6}  dp = {:.6}  D = {:.6}", report.ds, report.dp, report.total);
    Ok(())
}

fn register(args: &RegisterArgs) -> tsmetric::Result<()> {
    let reg = args.reg.params()?;
    let fixed = read_image(&args.fixed)?;
    let moving = read_image(&args.moving)?;
    let v = register_svf(&fixed, &moving, &reg)?;
    write_field(&v, &args.out)
}

fn simulate(args: &SimulateArgs) -> tsmetric::Result<()> {
    let defaults = SimConfig::default();
    let cfg = SimConfig {
        dims: match &args.dims {
            Some(d) => parse_dims(d)?,
            None => defaults.dims.clone(),
        },
        n_frames: args.frames.unwrap_or(defaults.n_frames),
        shape_amp: args.shape_amp.unwrap_or(defaults.shape_amp),
        path_amp: args.path_amp.unwrap_or(defaults.path_amp),
        seed: args.seed.unwrap_or(defaults.seed),
        ..defaults
    };
    let set = build_sim_set(SimSetId::try_from(args.set)?, &cfg)?;
    for (name, frames) in [("series_i", &set.frames_i), ("series_j", &set.frames_j)] {
        let dir = args.out.join(name);
        create_dir(&dir)?;
        for (k, f) in frames.iter().enumerate() {
            write_image(f, &dir.join(format!("frame_{k:03}")))?;
        }
    }
    write_field(&set.generators.shape_velocity, &args.out.join("shape_velocity"))?;
    write_field(&set.generators.path_velocity, &args.out.join("path_velocity"))?;
    let meta = serde_json::json!({
        "set": args.set,
        "dims": cfg.dims,
        "n_frames": cfg.n_frames,
        "shape_amp": cfg.shape_amp,
        "path_amp": cfg.path_amp,
        "sigma": cfg.sigma,
        "seed": cfg.seed,
        "times_i": set.times_i,
        "times_j": set.times_j,
        "gammas": set.generators.gammas,
    });
    let path = args.out.join("simulation.json");
    let text = serde_json::to_string_pretty(&meta).expect("metadata serializes") + "\n";
    fs::write(&path, text).map_err(|source| Error::Io { path, source })
}

fn evaluate_cmd(args: &EvaluateArgs) -> tsmetric::Result<()> {
    let model = load_model(&args.model)?;
    let img = evaluate(&model, args.t)?;
    write_image(&img, &args.out)
}

fn selftest() -> ExitCode {
    let outcomes = tsmetric::selftest::run();
    for o in &outcomes {
        eprintln!("{}", o.line());
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    eprintln!("{} of {} checks passed", outcomes.len() - failed, outcomes.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Fit(a) => fit(a),
        Command::Compare(a) => compare(a),
        Command::Register(a) => register(a),
        Command::Simulate(a) => simulate(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Selftest => return selftest(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
