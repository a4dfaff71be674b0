//! Command-line interface: registration, hyperparameter learning,
//! benchmarking, VSPF export and phantom generation.
//!
//! Exit codes: 0 success, 1 usage error (bad flags or missing inputs),
//! 2 runtime error.

use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::bench::{self, BenchConfig, PhantomSpec};
use crate::error::{Error, Result};
use crate::learning::{self, LearnedParam, TrainingPair};
use crate::registration::{self, register, register_to_level, RegistrationConfig, SamplerKind};
use crate::sampling::Selection;
use crate::similarity::{joint_histogram, HistogramSpec};
use crate::transform::{RigidMap, RigidParams};
use crate::volume::{build_pyramid, load_volume, save_volume};

#[derive(Parser, Debug)]
#[command(
    name = "vspf",
    about = "Rigid image registration with uncertainty-driven probabilistic voxel selection",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Register a moving volume onto a reference volume.
    Register(RegisterArgs),
    /// Learn a per-level hyperparameter schedule by grid search.
    Learn(LearnArgs),
    /// Run the sampler/rate sweep on synthetic phantoms.
    Bench(BenchArgs),
    /// Export the sampling probability field at one pyramid level.
    VspfExport(VspfExportArgs),
    /// Generate a phantom training pair with a known gold transform.
    Phantom(PhantomArgs),
}

#[derive(Args, Debug)]
struct RegisterArgs {
    /// Reference volume (.mhd).
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Moving volume (.mhd).
    #[arg(long = "mov")]
    moving: PathBuf,
    /// Registration config JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output JSON report.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sampler: Option<SamplerKind>,
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    levels: Option<usize>,
    /// Write wall times as zero so repeated runs are byte-identical.
    #[arg(long)]
    no_timing: bool,
    /// Dump the joint histogram at the final parameters as CSV.
    #[arg(long)]
    dump_histogram: Option<PathBuf>,
    /// Dump per-level NMI traces as CSV.
    #[arg(long)]
    dump_nmi_trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct LearnArgs {
    /// JSON manifest: array of {ref, mov, gold, voi_points} entries with
    /// paths relative to the manifest.
    #[arg(long)]
    pairs_manifest: PathBuf,
    /// Which hyperparameter to learn.
    #[arg(long, value_parser = ["ph", "beta"])]
    param: String,
    /// Output schedule JSON.
    #[arg(long)]
    out: PathBuf,
    /// Base registration config JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0.01)]
    grid_step: f64,
    /// Monte-Carlo trials per (pair, candidate).
    #[arg(long, default_value_t = 3)]
    trials: usize,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Bench config JSON (seeds are mandatory in the file).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for runs.csv, aggregate.csv, report.json.
    #[arg(long)]
    out_dir: PathBuf,
    /// Worker threads; overrides the config.
    #[arg(long)]
    jobs: Option<usize>,
    /// Write wall times as zero so repeated runs are byte-identical.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args, Debug)]
struct VspfExportArgs {
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long = "mov")]
    moving: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Pyramid level to export (1 = finest).
    #[arg(long)]
    level: usize,
    /// Output MetaImage path for the probability volume.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sampler: Option<SamplerKind>,
    #[arg(long)]
    rate: Option<f64>,
}

#[derive(Args, Debug)]
struct PhantomArgs {
    /// Phantom spec JSON; defaults when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for ref.mhd, mov.mhd and pair.json.
    #[arg(long)]
    out_dir: PathBuf,
}

/// Manifest entry describing a stored training pair.
#[derive(Debug, Serialize, Deserialize)]
struct PairManifestEntry {
    r#ref: String,
    mov: String,
    /// [tx, ty, tz, rx, ry, rz].
    gold: [f64; 6],
    voi_points: Vec<[f64; 3]>,
}

/// Runs the CLI on the given arguments (excluding the binary name is fine;
/// clap handles both). Returns the process exit code.
pub fn run_cli<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}

enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

fn require_file(path: &Path) -> std::result::Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("input file not found: {}", path.display())))
    }
}

fn load_registration_config(path: &Option<PathBuf>) -> std::result::Result<RegistrationConfig, CliError> {
    match path {
        None => Ok(RegistrationConfig::default()),
        Some(p) => {
            require_file(p)?;
            let body = std::fs::read_to_string(p).map_err(|e| CliError::Runtime(Error::io(p, e)))?;
            let cfg: RegistrationConfig =
                serde_json::from_str(&body).map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))?;
            Ok(cfg)
        }
    }
}

fn print_resolved<T: Serialize>(label: &str, value: &T) {
    match serde_json::to_string_pretty(value) {
        Ok(body) => println!("resolved {label}:\n{body}"),
        Err(_) => println!("resolved {label}: <unprintable>"),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let body = serde_json::to_string_pretty(value)?;
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn dispatch(cli: Cli) -> std::result::Result<(), CliError> {
    match cli.command {
        Command::Register(args) => cmd_register(args),
        Command::Learn(args) => cmd_learn(args),
        Command::Bench(args) => cmd_bench(args),
        Command::VspfExport(args) => cmd_vspf_export(args),
        Command::Phantom(args) => cmd_phantom(args),
    }
}

fn apply_overrides(
    cfg: &mut RegistrationConfig,
    seed: Option<u64>,
    sampler: Option<SamplerKind>,
    rate: Option<f64>,
    levels: Option<usize>,
) {
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(k) = sampler {
        cfg.sampler_kind = k;
    }
    if let Some(r) = rate {
        cfg.sampling_rate = r;
    }
    if let Some(l) = levels {
        cfg.levels = l;
    }
}

fn cmd_register(args: RegisterArgs) -> std::result::Result<(), CliError> {
    require_file(&args.reference)?;
    require_file(&args.moving)?;
    let mut cfg = load_registration_config(&args.config)?;
    apply_overrides(&mut cfg, args.seed, args.sampler, args.rate, args.levels);
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    print_resolved("registration config", &cfg);

    let reference = load_volume(&args.reference)?;
    let moving = load_volume(&args.moving)?;
    let result = register(&reference, &moving, &cfg)?;
    let report = result.report(&cfg, args.no_timing);
    write_json(&args.out, &report)?;
    println!("theta: {:?}", report.theta);

    if let Some(path) = &args.dump_nmi_trace {
        let mut out = String::from("level,iteration,nmi\n");
        for (i, scale) in result.per_scale.iter().enumerate() {
            let level = cfg.levels - i;
            for (n, v) in scale.nmi_trace.iter().enumerate() {
                out.push_str(&format!("{level},{},{}\n", n + 1, v));
            }
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))?;
    }
    if let Some(path) = &args.dump_histogram {
        let spec = HistogramSpec::from_volumes(&reference, &moving, cfg.bins)?;
        let all: Selection = Selection {
            indices: (0..reference.len() as u64).collect(),
            draw_seed: 0,
        };
        let map = RigidMap::new(result.theta, reference.physical_center());
        let hist = joint_histogram(&reference, &moving, &map, &all, &spec)?;
        std::fs::write(path, hist.to_csv()).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn load_pairs(manifest: &Path) -> std::result::Result<Vec<TrainingPair>, CliError> {
    require_file(manifest)?;
    let body =
        std::fs::read_to_string(manifest).map_err(|e| CliError::Runtime(Error::io(manifest, e)))?;
    let entries: Vec<PairManifestEntry> = serde_json::from_str(&body)
        .map_err(|e| CliError::Usage(format!("manifest {}: {e}", manifest.display())))?;
    if entries.is_empty() {
        return Err(CliError::Usage("manifest lists no pairs".into()));
    }
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    let mut pairs = Vec::with_capacity(entries.len());
    for e in entries {
        let ref_path = base.join(&e.r#ref);
        let mov_path = base.join(&e.mov);
        require_file(&ref_path)?;
        require_file(&mov_path)?;
        let pair = TrainingPair {
            reference: load_volume(&ref_path)?,
            moving: load_volume(&mov_path)?,
            gold: RigidParams::from_vec6(&e.gold),
            voi_points: e.voi_points,
        };
        pair.validate()?;
        pairs.push(pair);
    }
    Ok(pairs)
}

fn cmd_learn(args: LearnArgs) -> std::result::Result<(), CliError> {
    let mut cfg = load_registration_config(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    print_resolved("base registration config", &cfg);
    let pairs = load_pairs(&args.pairs_manifest)?;
    let param = match args.param.as_str() {
        "ph" => LearnedParam::Ph,
        "beta" => LearnedParam::Beta,
        other => return Err(CliError::Usage(format!("unknown --param {other}"))),
    };
    let schedule = learning::learn_schedule(&pairs, param, args.grid_step, args.trials, &cfg)?;
    schedule.save(&args.out)?;
    for e in &schedule.entries {
        println!("level {}: learned {:?} = {}", e.level, param, e.value);
    }
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> std::result::Result<(), CliError> {
    require_file(&args.config)?;
    let body = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::Runtime(Error::io(&args.config, e)))?;
    let mut cfg: BenchConfig = serde_json::from_str(&body)
        .map_err(|e| CliError::Usage(format!("config {}: {e}", args.config.display())))?;
    if cfg.trial_seeds.is_empty() {
        return Err(CliError::Usage("bench config must list trial_seeds".into()));
    }
    if let Some(jobs) = args.jobs {
        cfg.jobs = jobs;
    }
    if args.no_timing {
        cfg.zero_time_in_outputs = true;
    }
    print_resolved("bench config", &cfg);
    let report = bench::run_experiment(&cfg)?;
    report.write_to_dir(&args.out_dir)?;
    for c in &report.cells {
        println!(
            "{} @ rate {}: failures {}/{}, mTRE {}",
            c.sampler,
            c.rate,
            c.failure_count,
            c.total_runs,
            c.mtre_mm.map(|v| format!("{v:.3} mm")).unwrap_or_else(|| "n/a".into())
        );
    }
    Ok(())
}

fn cmd_vspf_export(args: VspfExportArgs) -> std::result::Result<(), CliError> {
    require_file(&args.reference)?;
    require_file(&args.moving)?;
    let mut cfg = load_registration_config(&args.config)?;
    apply_overrides(&mut cfg, args.seed, args.sampler, args.rate, None);
    cfg.record_vspf = true;
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if args.level == 0 || args.level > cfg.levels {
        return Err(CliError::Usage(format!(
            "--level {} outside 1..={}",
            args.level, cfg.levels
        )));
    }
    print_resolved("registration config", &cfg);
    let reference = load_volume(&args.reference)?;
    let moving = load_volume(&args.moving)?;
    // Run the coarser levels so the exported level sees the transform and
    // covariance it would see in a full registration.
    let result = register_to_level(&reference, &moving, &cfg, args.level)?;
    let (_, field) = result
        .vspf_snapshots
        .iter()
        .find(|(lvl, _)| *lvl == args.level)
        .ok_or_else(|| Error::Optimization("requested level produced no field".into()))?;
    let ref_pyr = build_pyramid(&reference, cfg.levels)?;
    let vol = registration::field_as_volume(field, ref_pyr.level(args.level))?;
    save_volume(&vol, &args.out)?;
    println!(
        "exported level {} field: {} voxels, expected count {:.2}",
        args.level,
        vol.len(),
        field.expected_count()
    );
    Ok(())
}

fn cmd_phantom(args: PhantomArgs) -> std::result::Result<(), CliError> {
    let spec = match &args.spec {
        None => PhantomSpec::default(),
        Some(p) => {
            require_file(p)?;
            let body = std::fs::read_to_string(p).map_err(|e| CliError::Runtime(Error::io(p, e)))?;
            serde_json::from_str(&body)
                .map_err(|e| CliError::Usage(format!("spec {}: {e}", p.display())))?
        }
    };
    print_resolved("phantom spec", &spec);
    let pair = bench::make_phantom_pair(&spec, args.seed)?;
    std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
    save_pair(&pair, &args.out_dir)?;
    println!(
        "phantom pair written to {} (gold t = {:?} mm, r = {:?} rad)",
        args.out_dir.display(),
        pair.gold.t,
        pair.gold.r
    );
    Ok(())
}

/// Writes ref.mhd, mov.mhd and pair.json (a manifest entry) into `dir`.
pub fn save_pair(pair: &TrainingPair, dir: &Path) -> Result<()> {
    save_volume(&pair.reference, &dir.join("ref.mhd"))?;
    save_volume(&pair.moving, &dir.join("mov.mhd"))?;
    let entry = PairManifestEntry {
        r#ref: "ref.mhd".into(),
        mov: "mov.mhd".into(),
        gold: pair.gold.to_vec6(),
        voi_points: pair.voi_points.clone(),
    };
    write_json(&dir.join("pair.json"), &entry)
}

/// Reads a pair back from a directory written by `save_pair`.
pub fn load_pair(dir: &Path) -> Result<TrainingPair> {
    let body = std::fs::read_to_string(dir.join("pair.json"))
        .map_err(|e| Error::io(dir.join("pair.json"), e))?;
    let entry: PairManifestEntry = serde_json::from_str(&body)?;
    let pair = TrainingPair {
        reference: load_volume(dir.join(&entry.r#ref))?,
        moving: load_volume(dir.join(&entry.mov))?,
        gold: RigidParams::from_vec6(&entry.gold),
        voi_points: entry.voi_points,
    };
    pair.validate()?;
    Ok(pair)
}

