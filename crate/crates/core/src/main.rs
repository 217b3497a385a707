use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use bitplane::codec::{load_stack, save_stack, DEFAULT_DEPTH};
use bitplane::dataset::{CorpusManifest, DEFAULT_HOLDOUT_FRACTION};
use bitplane::eval::{diagnostics_csv, evaluate, EvalConfig};
use bitplane::image_io::{read_pgm_file, write_atomic, write_pgm_file};
use bitplane::model::{load_model_file, save_model_file, TrainMeta};
use bitplane::{
    decompose_image, equalized_image, generate_image, heating_diagnostics, recompose,
    sample_batch, train, ConvLogisticModel, Error, SamplerConfig, TrainConfig,
};

/// Bitplane decomposition, conditional bitplane models and cascade generation
/// for grayscale PGM images.
#[derive(Debug, Parser)]
#[command(name = "bitplane", version)]
struct Cli {
    /// Worker threads; 1 is the reference configuration.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    /// Raise log verbosity (-v debug, -vv trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the 8-bit rank-equalized image.
    Equalize {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split an image into bitplanes <STEM>.b1.pgm .. <STEM>.b<DEPTH>.pgm.
    Decompose {
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = DEFAULT_DEPTH)]
        depth: usize,
        #[arg(long)]
        out_stem: PathBuf,
    },
    /// Recombine bitplanes <STEM>.b<λ>.pgm into a grayscale image.
    Recompose {
        #[arg(long)]
        stem: PathBuf,
        #[arg(long, default_value_t = DEFAULT_DEPTH)]
        depth: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit P(B_λ | B_1..B_{λ-1}) on patches from the corpus train split.
    Train(TrainArgs),
    /// Generate lower bitplanes from the critical plane of an image.
    Generate(GenerateArgs),
    /// Score models on the held-out split and write a JSON report.
    Eval(EvalArgs),
    /// Per-bitplane density, neighbor correlation and cluster statistics as CSV.
    Stats {
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = DEFAULT_DEPTH)]
        depth: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct SplitArgs {
    /// Directory of *.pgm images.
    #[arg(long, required_unless_present = "manifest")]
    corpus: Option<PathBuf>,
    /// Manifest file (written by `train --manifest`) instead of --corpus.
    #[arg(long, conflicts_with = "corpus")]
    manifest: Option<PathBuf>,
    /// Seed of the per-image train/held-out split.
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    #[arg(long, default_value_t = DEFAULT_HOLDOUT_FRACTION)]
    holdout_frac: f64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    split: SplitArgs,
    /// Target bitplane (2..=8).
    #[arg(long)]
    lambda: usize,
    /// Odd patch/kernel side.
    #[arg(long, default_value_t = 41)]
    patch: usize,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 1e-3)]
    ridge: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-8)]
    grad_tol: f64,
    #[arg(long, default_value_t = 1e-10)]
    cg_tol: f64,
    /// Defaults to the parameter count.
    #[arg(long)]
    cg_max_iters: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the optimization trace as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    image: PathBuf,
    /// Models for bitplanes 2, 3, .. in order.
    #[arg(long, num_args = 1.., required = true)]
    models: Vec<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 0.4)]
    low: f64,
    #[arg(long, default_value_t = 0.6)]
    high: f64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the generated planes as <STEM>.b<λ>.pgm.
    #[arg(long)]
    dump_planes: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long, num_args = 1.., required = true)]
    models: Vec<PathBuf>,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.4)]
    low: f64,
    #[arg(long, default_value_t = 0.6)]
    high: f64,
    #[arg(long)]
    report: PathBuf,
}

// exit code taxonomy
const EXIT_IO: u8 = 3;
const EXIT_FORMAT: u8 = 4;
const EXIT_INVALID: u8 = 5;
const EXIT_NUMERIC: u8 = 6;

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io { .. } => EXIT_IO,
        Error::Pgm(_) | Error::ModelFormat(_) | Error::VersionMismatch { .. } | Error::NotBinary { .. } => {
            EXIT_FORMAT
        }
        Error::NonFinite { .. } => EXIT_NUMERIC,
        _ => EXIT_INVALID,
    }
}

fn error_kind(code: u8) -> &'static str {
    match code {
        EXIT_IO => "io",
        EXIT_FORMAT => "format",
        EXIT_NUMERIC => "numeric",
        _ => "invalid-input",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Info,
        1 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
    if cli.threads == 0 {
        eprintln!("error[invalid-input]: --threads must be at least 1");
        return ExitCode::from(EXIT_INVALID);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .expect("global thread pool is configured once");
    info!("configuration: threads={} {:?}", cli.threads, cli.command);

    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = exit_code(&err);
            eprintln!("error[{}]: {err}", error_kind(code));
            ExitCode::from(code)
        }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn check_depth(depth: usize) -> Result<(), Error> {
    if !(1..=8).contains(&depth) {
        return Err(invalid(format!("--depth {depth} outside 1..=8")));
    }
    Ok(())
}

fn load_manifest(args: &SplitArgs) -> Result<CorpusManifest, Error> {
    if !(0.0..1.0).contains(&args.holdout_frac) {
        return Err(invalid("--holdout-frac must lie in [0, 1)"));
    }
    match (&args.manifest, &args.corpus) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            CorpusManifest::parse(&text)
        }
        (None, Some(dir)) => CorpusManifest::from_dir(dir, args.split_seed, args.holdout_frac),
        (None, None) => Err(invalid("one of --corpus or --manifest is required")),
    }
}

fn load_models(paths: &[PathBuf]) -> Result<Vec<ConvLogisticModel>, Error> {
    let mut models: Vec<ConvLogisticModel> =
        paths.iter().map(load_model_file).collect::<Result<_, _>>()?;
    models.sort_by_key(|m| m.lambda());
    Ok(models)
}

fn manifest_path(model_out: &Path) -> PathBuf {
    let mut name = model_out.as_os_str().to_owned();
    name.push(".manifest.txt");
    PathBuf::from(name)
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Equalize { image, out } => {
            let img = read_pgm_file(&image)?;
            write_pgm_file(&out, &equalized_image(&img))?;
        }
        Command::Decompose {
            image,
            depth,
            out_stem,
        } => {
            check_depth(depth)?;
            let img = read_pgm_file(&image)?;
            let stack = decompose_image(&img, depth)?;
            for path in save_stack(&out_stem, &stack)? {
                info!("wrote {}", path.display());
            }
        }
        Command::Recompose { stem, depth, out } => {
            check_depth(depth)?;
            let stack = load_stack(&stem, depth)?;
            write_pgm_file(&out, &recompose(&stack))?;
        }
        Command::Train(args) => run_train(args)?,
        Command::Generate(args) => run_generate(args)?,
        Command::Eval(args) => run_eval(args)?,
        Command::Stats { image, depth, out } => {
            check_depth(depth)?;
            let img = read_pgm_file(&image)?;
            let diags = heating_diagnostics(&decompose_image(&img, depth)?);
            write_atomic(&out, diagnostics_csv(&diags).as_bytes())?;
        }
    }
    Ok(())
}

fn run_train(args: TrainArgs) -> Result<(), Error> {
    if !(2..=8).contains(&args.lambda) {
        return Err(invalid(format!("--lambda {} outside 2..=8", args.lambda)));
    }
    if args.patch.is_multiple_of(2) {
        return Err(invalid(format!("--patch {} must be odd", args.patch)));
    }
    if args.samples == 0 {
        return Err(invalid("--samples must be positive"));
    }
    let config = TrainConfig {
        ridge: args.ridge,
        max_newton_iters: args.max_iters,
        grad_tol: args.grad_tol,
        cg_tol: args.cg_tol,
        cg_max_iters: args.cg_max_iters,
        ..TrainConfig::default()
    };
    config.validate()?;
    let manifest = load_manifest(&args.split)?;
    info!(
        "corpus: {} images, {} held out",
        manifest.paths().len(),
        manifest.holdout().len()
    );
    let batch = sample_batch(&manifest, args.lambda, args.patch, args.samples, args.seed)?;
    let (model, report) = train(&batch, &config)?;
    info!(
        "trained λ={} in {} newton steps: objective {:.6} -> {:.6} nats, NLL {:.4} bits, converged={}",
        args.lambda,
        report.iterations(),
        report.initial_objective,
        report.final_objective,
        report.final_nll_bits,
        report.converged
    );
    let model = model.with_meta(TrainMeta {
        rho: args.ridge,
        iters: report.iterations(),
        final_nll_bits: report.final_nll_bits,
        seed: Some(args.seed),
    });
    save_model_file(&args.out, &model)?;
    let manifest_out = manifest_path(&args.out);
    write_atomic(&manifest_out, manifest.to_text().as_bytes())?;
    info!("wrote {} and {}", args.out.display(), manifest_out.display());
    if let Some(path) = args.report {
        let json = serde_json::to_vec_pretty(&report).expect("report serializes");
        write_atomic(path, &json)?;
    }
    Ok(())
}

fn run_generate(args: GenerateArgs) -> Result<(), Error> {
    let models = load_models(&args.models)?;
    let cfg = SamplerConfig {
        low: args.low,
        high: args.high,
        seed: args.seed,
        depth: models.len() + 1,
    };
    cfg.validate()?;
    let img = read_pgm_file(&args.image)?;
    let out = generate_image(&img, &models, &cfg)?;
    write_pgm_file(&args.out, &out.image)?;
    if let Some(stem) = args.dump_planes {
        save_stack(stem, &out.stack)?;
    }
    info!(
        "generated {}x{} image from {}x{} source",
        out.image.width(),
        out.image.height(),
        img.width(),
        img.height()
    );
    Ok(())
}

fn run_eval(args: EvalArgs) -> Result<(), Error> {
    let models = load_models(&args.models)?;
    let sampler = SamplerConfig {
        low: args.low,
        high: args.high,
        seed: args.seed,
        depth: models.len() + 1,
    };
    sampler.validate()?;
    if args.samples == 0 {
        return Err(invalid("--samples must be positive"));
    }
    let manifest = load_manifest(&args.split)?;
    let cfg = EvalConfig {
        samples: args.samples,
        seed: args.seed,
        sampler,
        ..EvalConfig::default()
    };
    let report = evaluate(&models, &manifest, &cfg)?;
    for (lambda, bits) in &report.nll {
        info!("held-out NLL(B_{lambda} | above) = {bits:.4} bits/pixel");
    }
    info!(
        "NMSE trained {:.4} vs null {:.4}",
        report.nmse_model, report.nmse_null
    );
    let json = serde_json::to_vec_pretty(&report).expect("report serializes");
    write_atomic(&args.report, &json)?;
    Ok(())
}
