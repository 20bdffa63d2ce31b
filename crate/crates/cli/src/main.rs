//! `dnt`: simulate corpora, train denoisers, enhance audio, score results.
//!
//! Exit codes: 0 ok, 2 usage or configuration, 3 I/O or malformed input
//! files, 4 numerical failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use dnt_core::dataset::{generate_corpus, CorpusSpec, Manifest, NoiseKind, NoiseSource, SpeechSource};
use dnt_core::model::{denoise, ModelConfig};
use dnt_core::trainer::{
    evaluate, load_checkpoint, save_checkpoint, EvalReport, Processor, TrainConfig, Trainer,
};
use dnt_core::wav::{read_wav, write_wav};
use dnt_core::{Error, SAMPLE_RATE};

const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;
const CONFIG_VERSION: &str = "1";

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
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = if e.is_numerical() {
            EXIT_NUMERICAL
        } else if e.is_io()
            || matches!(
                e,
                Error::CheckpointFormat(_)
                    | Error::CheckpointVersion { .. }
                    | Error::CheckpointTruncated(_)
                    | Error::CheckpointShape { .. }
                    | Error::Json(_)
            )
        {
            EXIT_IO
        } else {
            EXIT_USAGE
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(name = "dnt", version, about = "Speech denoising front-end toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a reverberant noisy-speech corpus and its manifest.
    Simulate(SimulateArgs),
    /// Train a model from a JSON run configuration.
    Train(TrainArgs),
    /// Enhance one WAV file or every WAV file in a directory.
    Enhance(EnhanceArgs),
    /// Score a checkpoint (or the unprocessed mixtures) on a manifest.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Directory of clean 16 kHz mono WAV files.
    #[arg(long, required_unless_present = "synth_speech", conflicts_with = "synth_speech")]
    speech_dir: Option<PathBuf>,
    /// Use synthetic voiced speech of this many seconds instead of a directory.
    #[arg(long, value_name = "SECONDS")]
    synth_speech: Option<f64>,
    /// Directory of 16 kHz mono noise WAV files.
    #[arg(long, required_unless_present = "synth_noise", conflicts_with = "synth_noise")]
    noise_dir: Option<PathBuf>,
    /// Synthetic noise: white, pink or babble.
    #[arg(long, value_name = "KIND")]
    synth_noise: Option<NoiseKind>,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    snr_min: f64,
    #[arg(long, default_value_t = 5.0, allow_negative_numbers = true)]
    snr_max: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; receives manifest.jsonl and audio/.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    train_manifest: Option<PathBuf>,
    #[arg(long)]
    valid_manifest: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Bit-reproducible execution. Training is always serial, so this only
    /// records the request in the log.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args)]
struct EnhanceArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// A WAV file or a directory of WAV files.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long, required_unless_present = "no_process", conflicts_with = "no_process")]
    ckpt: Option<PathBuf>,
    /// Score the raw mixtures.
    #[arg(long)]
    no_process: bool,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunPaths {
    train_manifest: Option<PathBuf>,
    valid_manifest: Option<PathBuf>,
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    version: String,
    model: ModelConfig,
    train: TrainConfig,
    #[serde(default)]
    paths: RunPaths,
}

fn read_run_config(path: &Path) -> CliResult<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::from(Error::Io {
        path: path.to_path_buf(),
        source: e,
    }))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let run: RunConfig = serde_path_to_error::deserialize(de)
        .map_err(|e| CliError::usage(format!("{}: at `{}`: {}", path.display(), e.path(), e.inner())))?;
    if run.version != CONFIG_VERSION {
        return Err(CliError::usage(format!(
            "{}: at `version`: expected \"{CONFIG_VERSION}\", found \"{}\"",
            path.display(),
            run.version
        )));
    }
    run.model
        .validate()
        .map_err(|e| CliError::usage(format!("{}: at `model`: {e}", path.display())))?;
    run.train
        .validate(&run.model)
        .map_err(|e| CliError::usage(format!("{}: at `train`: {e}", path.display())))?;
    Ok(run)
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| {
        Error::Io {
            path: path.to_path_buf(),
            source: e,
        }
        .into()
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| {
        Error::Io {
            path: path.to_path_buf(),
            source: e,
        }
        .into()
    })
}

fn cmd_simulate(args: SimulateArgs) -> CliResult<()> {
    let speech = match (args.speech_dir, args.synth_speech) {
        (Some(dir), _) => SpeechSource::Dir(dir),
        (None, Some(secs)) if secs.is_finite() && secs > 0.0 => SpeechSource::Synthetic {
            len: (secs * f64::from(SAMPLE_RATE)).round() as usize,
        },
        _ => return Err(CliError::usage("--synth-speech must be a positive number of seconds")),
    };
    let noise = match (args.noise_dir, args.synth_noise) {
        (Some(dir), _) => NoiseSource::Dir(dir),
        (None, Some(kind)) => NoiseSource::Synthetic(kind),
        (None, None) => unreachable!("clap requires one noise source"),
    };
    if args.count == 0 {
        return Err(CliError::usage("--count must be positive"));
    }
    let spec = CorpusSpec {
        speech,
        noise,
        count: args.count,
        snr_range: (args.snr_min, args.snr_max),
        base_seed: args.seed,
    };
    let manifest = generate_corpus(&spec, &args.out)?;
    let snrs: Vec<f64> = manifest.entries.iter().map(|e| e.snr_db).collect();
    let t60s: Vec<f64> = manifest.entries.iter().map(|e| e.t60).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let summary = serde_json::json!({
        "manifest": args.out.join(dnt_core::dataset::MANIFEST_FILE),
        "count": manifest.entries.len(),
        "snr_db": {
            "min": snrs.iter().copied().fold(f64::INFINITY, f64::min),
            "mean": mean(&snrs),
            "max": snrs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        },
        "t60_mean": mean(&t60s),
    });
    println!("{summary}");
    Ok(())
}

fn cmd_train(args: TrainArgs) -> CliResult<()> {
    let run = read_run_config(&args.config)?;
    let pick = |flag: Option<PathBuf>, cfg: Option<PathBuf>, name: &str| {
        flag.or(cfg)
            .ok_or_else(|| CliError::usage(format!("--{name} is required (or set paths.{} in the config)", name.replace('-', "_"))))
    };
    let train_path = pick(args.train_manifest, run.paths.train_manifest, "train-manifest")?;
    let valid_path = pick(args.valid_manifest, run.paths.valid_manifest, "valid-manifest")?;
    let out_dir = pick(args.out_dir, run.paths.out_dir, "out-dir")?;

    let train_set = Manifest::read(&train_path)?;
    let valid_set = Manifest::read(&valid_path)?;
    if train_set.entries.is_empty() || valid_set.entries.is_empty() {
        return Err(CliError::usage("training and validation manifests must be non-empty"));
    }
    let train_items = train_set.load_all()?;
    let valid_items = valid_set.load_all()?;

    let mut trainer = match &args.resume {
        Some(path) => {
            let mut ckpt = load_checkpoint(path)?;
            if ckpt.model != run.model {
                return Err(CliError::usage(format!(
                    "{}: model configuration differs from the checkpoint",
                    args.config.display()
                )));
            }
            ckpt.train = run.train.clone();
            Trainer::from_checkpoint(ckpt)?
        }
        None => Trainer::new(run.model.clone(), run.train.clone())?,
    };

    create_dir(&out_dir)?;
    let last_path = out_dir.join("last.ckpt");
    let best_path = out_dir.join("best.ckpt");
    let log_path = out_dir.join("train_log.jsonl");
    let mut log = fs::OpenOptions::new()
        .create(true)
        .append(args.resume.is_some())
        .write(true)
        .truncate(args.resume.is_none())
        .open(&log_path)
        .map_err(|e| CliError::from(Error::Io {
            path: log_path.clone(),
            source: e,
        }))?;
    if args.resume.is_none() {
        // A fresh run starts from its initialisation in both slots.
        save_checkpoint(trainer.checkpoint(), &last_path)?;
        save_checkpoint(trainer.checkpoint(), &best_path)?;
    }
    while !trainer.is_done() {
        let entry = trainer.run_epoch(&train_items, &valid_items)?;
        let line = serde_json::to_string(&entry).map_err(Error::from)?;
        println!("{line}");
        writeln!(log, "{line}").map_err(|e| CliError::from(Error::Io {
            path: log_path.clone(),
            source: e,
        }))?;
        save_checkpoint(trainer.checkpoint(), &last_path)?;
        if trainer.best().is_some_and(|b| b.epoch == trainer.epoch()) {
            save_checkpoint(trainer.checkpoint(), &best_path)?;
        }
    }
    eprintln!(
        "trained {} epochs{}; checkpoints in {}",
        trainer.epoch(),
        if args.deterministic { " (deterministic)" } else { "" },
        out_dir.display()
    );
    Ok(())
}

fn wav_inputs(input: &Path) -> CliResult<Vec<PathBuf>> {
    if !input.is_dir() {
        return Ok(vec![input.to_path_buf()]);
    }
    let io = |e| CliError::from(Error::Io {
        path: input.to_path_buf(),
        source: e,
    });
    let mut files = Vec::new();
    for entry in fs::read_dir(input).map_err(io)? {
        let p = entry.map_err(io)?.path();
        if p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

fn cmd_enhance(args: EnhanceArgs) -> CliResult<()> {
    let ckpt = load_checkpoint(&args.ckpt)?;
    let inputs = wav_inputs(&args.input)?;
    create_dir(&args.out)?;
    for path in &inputs {
        let y = read_wav(path)?;
        let out = denoise(&ckpt.model, &ckpt.params, &y)?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let target = args.out.join(format!("{stem}.enh.wav"));
        write_wav(&target, &out.speech)?;
        println!("{}", target.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct ReportFile<'a> {
    version: &'static str,
    checkpoint: Option<&'a Path>,
    manifest: &'a Path,
    #[serde(flatten)]
    report: &'a EvalReport,
}

fn cmd_evaluate(args: EvaluateArgs) -> CliResult<()> {
    let manifest = Manifest::read(&args.manifest)?;
    let ckpt = args.ckpt.as_ref().map(load_checkpoint).transpose()?;
    let proc = match &ckpt {
        Some(c) => Processor::Model {
            config: &c.model,
            params: &c.params,
        },
        None => Processor::Identity,
    };
    let report = evaluate(&proc, &manifest);
    for e in &report.errors {
        eprintln!("skipped {e}");
    }
    let file = ReportFile {
        version: CONFIG_VERSION,
        checkpoint: args.ckpt.as_deref(),
        manifest: &args.manifest,
        report: &report,
    };
    let json = serde_json::to_vec_pretty(&file).map_err(Error::from)?;
    if let Some(parent) = args.report.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_file(&args.report, &json)?;
    let summary = serde_json::json!({
        "items": report.rows.len(),
        "skipped": report.skipped,
        "mean": report.mean,
    });
    println!("{summary}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Train(a) => cmd_train(a),
        Command::Enhance(a) => cmd_enhance(a),
        Command::Evaluate(a) => cmd_evaluate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
