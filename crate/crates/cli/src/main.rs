mod run_manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use shapeinst::baselines::{run_baseline_subject, BaselineConfig, BaselineMethod};
use shapeinst::dataset::{
    generate_cohort, list_subjects, load_subject, normalize_image, read_pgm, save_cohort,
    SubjectDataset, SynthConfig, MANIFEST_FILE,
};
use shapeinst::geometry::write_ply;
use shapeinst::pointoutnet::{read_config, ModelParams, NetworkConfig};
use shapeinst::training::{
    export_report, run_subject, write_comparison_csv, ComparisonRow, ExperimentReport,
    TrainConfig, METHOD_POINTOUTNET,
};
use shapeinst::Error;

use run_manifest::RunManifest;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "shapeinst",
    version,
    about = "Single-image 3D shape instantiation: synthetic data, training, baselines, inference"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic cohort (PGM images, PLY clouds, landmark CSVs).
    Synth(SynthArgs),
    /// Leave-one-out training of the point-cloud network for one subject.
    Train(TrainArgs),
    /// Run several methods over every subject and tabulate mean errors.
    Compare(CompareArgs),
    /// Predict a point cloud from one image with a saved checkpoint.
    Infer(InferArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 12)]
    subjects: usize,
    /// Frames per cycle (M).
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    num_y: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    /// 5 frames, 100 vertices, 48x64 images.
    #[arg(long)]
    quick: bool,
    /// Allow writing into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug, Clone)]
struct TrainingFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value_t = 0.003, allow_negative_numbers = true)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Divide each Chamfer direction by its point count.
    #[arg(long)]
    chamfer_normalization: bool,
    #[arg(long, default_value_t = 100)]
    checkpoint_every: usize,
    /// Small network and short epoch budget for quick-profile data.
    #[arg(long)]
    quick: bool,
    /// Worker threads for folds and subjects (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    subject: String,
    #[arg(long)]
    out: PathBuf,
    /// Resolve and record the configuration without training.
    #[arg(long)]
    dry_run: bool,
    #[command(flatten)]
    training: TrainingFlags,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated subset of pointoutnet, plsr, kplsr.
    #[arg(long, value_delimiter = ',', default_value = "pointoutnet,plsr,kplsr")]
    methods: Vec<String>,
    /// Latent components for the baselines (default min(M-2, 8)).
    #[arg(long)]
    components: Option<usize>,
    /// Fixed kernel width for kplsr (default: chosen by inner leave-one-out).
    #[arg(long)]
    sigma: Option<f64>,
    #[command(flatten)]
    training: TrainingFlags,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = if e.is_numeric() {
            EXIT_NUMERIC
        } else if e.is_usage() {
            EXIT_USAGE
        } else {
            EXIT_DATA
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Infer(a) => cmd_infer(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn argv() -> Vec<String> {
    std::env::args().collect()
}

fn ensure_writable_dir(dir: &Path, force: bool) -> CliResult<()> {
    if dir.exists() {
        if !dir.is_dir() {
            return Err(CliError::usage(format!(
                "{} exists and is not a directory",
                dir.display()
            )));
        }
        let mut entries = std::fs::read_dir(dir)
            .map_err(|e| CliError::data(format!("cannot read {}: {e}", dir.display())))?;
        if entries.next().is_some() && !force {
            return Err(CliError::usage(format!(
                "{} is not empty (pass --force to write into it)",
                dir.display()
            )));
        }
    }
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::data(format!("cannot create {}: {e}", dir.display())))
}

fn thread_pool(jobs: Option<usize>) -> CliResult<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        if n == 0 {
            return Err(CliError::usage("--jobs must be at least 1"));
        }
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| CliError::usage(format!("cannot start worker threads: {e}")))
}

fn cmd_synth(args: SynthArgs) -> CliResult<()> {
    let base = if args.quick {
        SynthConfig::quick()
    } else {
        SynthConfig::default()
    };
    let config = SynthConfig {
        num_frames: args.frames.unwrap_or(base.num_frames),
        num_y: args.num_y.unwrap_or(base.num_y),
        height: args.height.unwrap_or(base.height),
        width: args.width.unwrap_or(base.width),
        ..base
    };
    config.validate()?;
    if args.subjects == 0 {
        return Err(CliError::usage("--subjects must be at least 1"));
    }
    ensure_writable_dir(&args.out, args.force)?;

    let mut manifest = RunManifest::start(
        "synth",
        argv(),
        json!({
            "subjects": args.subjects,
            "frames": config.num_frames,
            "numY": config.num_y,
            "height": config.height,
            "width": config.width,
            "landmarks": config.landmark_count,
            "quick": args.quick,
        }),
        args.seed,
    );
    let cohort = generate_cohort(args.seed, args.subjects, &config)?;
    save_cohort(&cohort, &args.out)?;
    println!(
        "wrote {} subjects x {} frames to {}",
        cohort.len(),
        config.num_frames,
        args.out.display()
    );
    manifest.outputs.push(args.out.display().to_string());
    manifest.finish_into(&args.out)?;
    Ok(())
}

struct TrainingSetup {
    net: NetworkConfig,
    train: TrainConfig,
    pool: rayon::ThreadPool,
}

fn training_setup(flags: &TrainingFlags) -> CliResult<TrainingSetup> {
    let base = if flags.quick {
        TrainConfig::quick()
    } else {
        TrainConfig::default()
    };
    let train = TrainConfig {
        epochs: flags.epochs.unwrap_or(base.epochs),
        learning_rate: flags.lr,
        shuffle_seed: flags.seed,
        chamfer_normalization: flags.chamfer_normalization,
        checkpoint_every: flags.checkpoint_every,
        ..base
    };
    train.validate()?;
    // numY is filled in from the data.
    let net = if flags.quick {
        NetworkConfig::quick(1)
    } else {
        NetworkConfig::new(1)
    };
    Ok(TrainingSetup {
        net,
        train,
        pool: thread_pool(flags.jobs)?,
    })
}

fn training_snapshot(setup: &TrainingSetup) -> serde_json::Value {
    json!({
        "network": setup.net,
        "training": setup.train,
    })
}

fn load_named_subject(data: &Path, id: &str) -> CliResult<SubjectDataset> {
    let available = list_subjects(data)?;
    if !available.iter().any(|s| s == id) {
        return Err(CliError::data(format!(
            "subject {id:?} not found in {}; available subjects: {}",
            data.display(),
            available.join(", ")
        )));
    }
    Ok(load_subject(&data.join(id).join(MANIFEST_FILE))?)
}

fn check_extents(net: &NetworkConfig, subject: &SubjectDataset, quick: bool) -> CliResult<()> {
    if (net.input_height, net.input_width) != (subject.height, subject.width) {
        let hint = if quick {
            "drop --quick for full-size data"
        } else {
            "pass --quick for quick-profile data"
        };
        return Err(CliError::data(format!(
            "subject {} has {}x{} images but the network expects {}x{} ({hint})",
            subject.subject_id, subject.height, subject.width, net.input_height, net.input_width
        )));
    }
    Ok(())
}

fn print_report(report: &ExperimentReport) {
    for f in &report.folds {
        println!(
            "{} {} frame {:>2}: pc-to-pc {:.4} mm ({:.4} mm^2), infer {:.4} s",
            report.subject_id,
            report.method,
            f.test_frame,
            f.pc_to_pc_euclidean,
            f.pc_to_pc_squared,
            f.infer_seconds
        );
    }
    println!(
        "{} {} mean pc-to-pc {:.4} mm",
        report.subject_id, report.method, report.subject_mean
    );
}

fn cmd_train(args: TrainArgs) -> CliResult<()> {
    let mut setup = training_setup(&args.training)?;
    let subject = load_named_subject(&args.data, &args.subject)?;
    check_extents(&setup.net, &subject, args.training.quick)?;
    setup.net.num_y = subject.num_y;
    setup.train.checkpoint_dir = Some(args.out.join("checkpoints").join(&subject.subject_id));
    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::data(format!("cannot create {}: {e}", args.out.display())))?;

    let mut manifest = RunManifest::start("train", argv(), training_snapshot(&setup), args.training.seed);
    manifest.inputs.push(args.data.join(&subject.subject_id).display().to_string());
    if args.dry_run {
        println!(
            "dry run: {} epochs at learning rate {} on {} ({} folds)",
            setup.train.epochs,
            setup.train.learning_rate,
            subject.subject_id,
            subject.num_frames()
        );
        manifest.finish_into(&args.out)?;
        return Ok(());
    }
    let report = setup
        .pool
        .install(|| run_subject(&subject, &setup.net, &setup.train))?;
    print_report(&report);
    let files = export_report(&report, &args.out)?;
    manifest.outputs.push(files.csv.display().to_string());
    if let Some(dir) = &setup.train.checkpoint_dir {
        manifest.outputs.push(dir.display().to_string());
    }
    manifest.finish_into(&args.out)?;
    Ok(())
}

enum Method {
    Network,
    Baseline(BaselineMethod),
}

fn parse_methods(names: &[String]) -> CliResult<Vec<(String, Method)>> {
    if names.is_empty() {
        return Err(CliError::usage("--methods must name at least one method"));
    }
    let mut out: Vec<(String, Method)> = Vec::new();
    for name in names {
        let name = name.trim();
        if out.iter().any(|(n, _)| n == name) {
            return Err(CliError::usage(format!("method {name} listed twice")));
        }
        let method = if name == METHOD_POINTOUTNET {
            Method::Network
        } else {
            match name.parse::<BaselineMethod>() {
                Ok(m) => Method::Baseline(m),
                Err(_) => {
                    return Err(CliError::usage(format!(
                        "unknown method {name:?} (expected pointoutnet, plsr or kplsr)"
                    )))
                }
            }
        };
        out.push((name.to_string(), method));
    }
    Ok(out)
}

fn cmd_compare(args: CompareArgs) -> CliResult<()> {
    let methods = parse_methods(&args.methods)?;
    let setup = training_setup(&args.training)?;
    if let Some(s) = args.sigma {
        if s.is_nan() || s <= 0.0 {
            return Err(CliError::usage("--sigma must be positive"));
        }
    }
    if args.components == Some(0) {
        return Err(CliError::usage("--components must be at least 1"));
    }
    let baseline = BaselineConfig {
        components: args.components,
        sigma: args.sigma,
    };
    let ids = list_subjects(&args.data)?;
    let subjects = ids
        .iter()
        .map(|id| load_named_subject(&args.data, id))
        .collect::<CliResult<Vec<_>>>()?;
    if methods.iter().any(|(_, m)| matches!(m, Method::Network)) {
        for s in &subjects {
            check_extents(&setup.net, s, args.training.quick)?;
        }
    }
    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::data(format!("cannot create {}: {e}", args.out.display())))?;

    let mut manifest = RunManifest::start(
        "compare",
        argv(),
        json!({
            "methods": methods.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>(),
            "baseline": baseline,
            "network": setup.net,
            "training": setup.train,
        }),
        args.training.seed,
    );
    manifest.inputs.push(args.data.display().to_string());

    let start = Instant::now();
    let reports: Vec<Vec<ExperimentReport>> = setup.pool.install(|| {
        subjects
            .par_iter()
            .map(|subject| {
                methods
                    .iter()
                    .map(|(_, method)| match method {
                        Method::Network => {
                            let mut net = setup.net.clone();
                            net.num_y = subject.num_y;
                            run_subject(subject, &net, &setup.train)
                        }
                        Method::Baseline(m) => run_baseline_subject(subject, *m, &baseline),
                    })
                    .collect::<shapeinst::Result<Vec<_>>>()
                    .map_err(|e| (subject.subject_id.clone(), e))
            })
            .collect::<std::result::Result<Vec<_>, _>>()
    })
    .map_err(|(id, e)| {
        let mut err = CliError::from(e);
        err.message = format!("subject {id}: {}", err.message);
        err
    })?;

    let mut rows = Vec::new();
    for subject_reports in &reports {
        for r in subject_reports {
            print_report(r);
            export_report(r, &args.out)?;
        }
        rows.push(ComparisonRow {
            subject_id: subject_reports[0].subject_id.clone(),
            means: subject_reports.iter().map(|r| Some(r.subject_mean)).collect(),
        });
    }
    let names: Vec<String> = methods.into_iter().map(|(n, _)| n).collect();
    let table = args.out.join("comparison.csv");
    write_comparison_csv(&table, &names, &rows)?;
    println!(
        "wrote {} ({} subjects, {:.1} s)",
        table.display(),
        rows.len(),
        start.elapsed().as_secs_f64()
    );
    manifest.outputs.push(table.display().to_string());
    manifest.finish_into(&args.out)?;
    Ok(())
}

fn cmd_infer(args: InferArgs) -> CliResult<()> {
    let config = read_config(&args.checkpoint)?;
    let image = read_pgm(&args.image)?;
    if (image.height(), image.width()) != (config.input_height, config.input_width) {
        return Err(CliError::data(format!(
            "image {} is {}x{} but the model expects {}x{}",
            args.image.display(),
            image.height(),
            image.width(),
            config.input_height,
            config.input_width
        )));
    }
    let model = ModelParams::load(&args.checkpoint)?;
    let mut manifest = RunManifest::start(
        "infer",
        argv(),
        json!({ "network": model.config() }),
        0,
    );
    manifest.inputs.push(args.checkpoint.display().to_string());
    manifest.inputs.push(args.image.display().to_string());

    let input = normalize_image(&image)?.to_tensor();
    let start = Instant::now();
    let cloud = model.forward(&input)?;
    let seconds = start.elapsed().as_secs_f64();
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::data(format!("cannot create {}: {e}", parent.display())))?;
    }
    write_ply(&args.out, &cloud, None)?;
    println!("inference seconds: {seconds:.6}");
    manifest.outputs.push(args.out.display().to_string());
    let mut manifest_path = args.out.clone().into_os_string();
    manifest_path.push(".run.json");
    manifest.finish_to(Path::new(&manifest_path))?;
    Ok(())
}
