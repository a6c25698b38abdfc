use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};

use medprompt::data::io::{read_mptf, read_pgm, write_mptf, write_pgm};
use medprompt::gradcheck::TOLERANCE;
use medprompt::nn::{build_model, ModelConfig};
use medprompt::suite::{gradient_suite, max_rel_error};
use medprompt::train::ablation::{CHECKPOINT_FILE, LOG_FILE};
use medprompt::metrics::EvalReport;
use medprompt::train::{dataset_for, evaluate, run_ablation, train_run, translate, Checkpoint, TrainConfig};
use medprompt::{DType, Element, Error, Tensor};

const CONFIG_FILE: &str = "config.txt";

#[derive(Parser)]
#[command(name = "medprompt", version, about = "Prompt-conditioned image translation on synthetic paired modalities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from scratch and write a checkpoint and log.
    Train(RunArgs),
    /// Evaluate a checkpoint on its test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Translate one .mpt or .pgm image with a checkpoint.
    Translate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every operator, both losses and the minimal model.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every ablation variant for each seed and report medians.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// key=value file; `#` starts a comment.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key; may be repeated and wins over the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            e => Failure::Runtime(e.to_string()),
        }
    }
}

type Outcome = std::result::Result<String, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match dispatch(cli.command) {
        Ok(stdout) => {
            print!("{stdout}");
            ExitCode::SUCCESS
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\n{}", Cli::command().render_usage());
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Outcome {
    match command {
        Command::Train(run) => train(run),
        Command::Eval { checkpoint, run } => eval(&checkpoint, run),
        Command::Translate { checkpoint, input, out } => translate_file(&checkpoint, &input, &out),
        Command::Gradcheck { seed, out } => gradcheck(seed, out.as_deref()),
        Command::Ablate { run, seeds } => ablate(run, &seeds),
    }
}

fn read_text(path: &Path) -> std::result::Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Runtime(Error::io(path, e).to_string()))
}

fn write_file(path: &Path, contents: &str) -> std::result::Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::Runtime(Error::io(path, e).to_string()))
}

fn create_dir(dir: &Path) -> std::result::Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Runtime(Error::io(dir, e).to_string()))
}

/// `base`, then the config file, then `--set`, then `--seed`.
fn resolve(mut cfg: TrainConfig, run: &RunArgs) -> std::result::Result<TrainConfig, Failure> {
    if let Some(path) = &run.config {
        cfg.apply_kv_text(&read_text(path)?)?;
    }
    for kv in &run.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = run.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Writes the effective configuration into `dir` before any work starts.
fn prepare(dir: &Path, cfg: &TrainConfig) -> std::result::Result<(), Failure> {
    create_dir(dir)?;
    write_file(&dir.join(CONFIG_FILE), &cfg.to_kv_text())
}

fn train(run: RunArgs) -> Outcome {
    let cfg = resolve(TrainConfig::default(), &run)?;
    prepare(&run.out, &cfg)?;
    let summary = train_run(&cfg, Some(&run.out))?;
    write_file(&run.out.join("eval.csv"), &summary.final_eval.to_csv())?;
    Ok(format!(
        "{}\ncheckpoint: {}\nlog: {}\nseconds: {:.1}\n",
        summary.final_eval.to_text(),
        run.out.join(CHECKPOINT_FILE).display(),
        run.out.join(LOG_FILE).display(),
        summary.seconds
    ))
}

fn load_checkpoint(path: &Path) -> std::result::Result<Checkpoint, Failure> {
    if !path.exists() {
        return Err(Failure::Runtime(format!("checkpoint not found: {}", path.display())));
    }
    Checkpoint::load(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn checkpoint_dtype(ck: &Checkpoint) -> DType {
    ck.params.first().map_or(DType::F32, |(_, t)| t.dtype())
}

fn eval(checkpoint: &Path, run: RunArgs) -> Outcome {
    let ck = load_checkpoint(checkpoint)?;
    let mut base = TrainConfig::default();
    base.apply_kv_text(&ck.train_config)?;
    let cfg = resolve(base, &run)?;
    prepare(&run.out, &cfg)?;
    let report = match cfg.dtype {
        DType::F32 => eval_typed::<f32>(&cfg, &ck)?,
        DType::F64 => eval_typed::<f64>(&cfg, &ck)?,
    };
    write_file(&run.out.join("eval.csv"), &report.to_csv())?;
    write_file(&run.out.join("eval.txt"), &report.to_text())?;
    Ok(report.to_text())
}

fn eval_typed<E: Element>(cfg: &TrainConfig, ck: &Checkpoint) -> std::result::Result<EvalReport, Failure> {
    let mut model = build_model::<E>(&cfg.model, 0)?;
    ck.restore_params(&mut model)?;
    Ok(evaluate(&model, &dataset_for(cfg)?.test, &cfg.loss)?)
}

fn read_image(path: &Path) -> std::result::Result<Tensor<f64>, Failure> {
    if !path.exists() {
        return Err(Failure::Runtime(format!("input not found: {}", path.display())));
    }
    let with_path = |e: Error| Failure::Runtime(format!("{}: {e}", path.display()));
    let t = match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => read_pgm(path).map_err(with_path)?,
        Some("mpt") => read_mptf(path).map_err(with_path)?.cast(),
        _ => return Err(Failure::Usage(format!("input must be .mpt or .pgm: {}", path.display()))),
    };
    let (h, w) = match t.shape() {
        [.., h, w] if h * w == t.numel() => (*h, *w),
        s => return Err(Failure::Runtime(format!("{}: expected one single-channel image, got {s:?}", path.display()))),
    };
    Ok(t.reshape(&[1, 1, h, w])?)
}

fn translate_file(checkpoint: &Path, input: &Path, out: &Path) -> Outcome {
    let ck = load_checkpoint(checkpoint)?;
    let image = read_image(input)?;
    create_dir(out)?;
    write_file(&out.join(CONFIG_FILE), &ck.train_config)?;
    let model_cfg = ModelConfig::from_echo(&ck.model_echo)?;
    let y = match checkpoint_dtype(&ck) {
        DType::F32 => translate_typed::<f32>(&model_cfg, &ck, &image)?,
        DType::F64 => translate_typed::<f64>(&model_cfg, &ck, &image)?,
    };
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
    let (pgm, mpt) = (out.join(format!("{stem}_translated.pgm")), out.join(format!("{stem}_translated.mpt")));
    write_pgm(&pgm, &y)?;
    write_mptf(&mpt, &y)?;
    Ok(format!("{}\n{}\n", pgm.display(), mpt.display()))
}

fn translate_typed<E: Element>(cfg: &ModelConfig, ck: &Checkpoint, image: &Tensor<f64>) -> medprompt::Result<Tensor<f64>> {
    let mut model = build_model::<E>(cfg, 0)?;
    ck.restore_params(&mut model)?;
    translate(&model, image)
}

fn gradcheck(seed: u64, out: Option<&Path>) -> Outcome {
    if let Some(dir) = out {
        create_dir(dir)?;
        write_file(&dir.join(CONFIG_FILE), &format!("seed={seed}\n{}", ModelConfig::minimal().echo()))?;
    }
    let cases = gradient_suite(seed)?;
    let mut text = String::new();
    for c in &cases {
        text.push_str(&format!("{:<24} {:>10.3e}  {} elements\n", c.name, c.report.max_rel_error, c.report.checked));
    }
    let worst = max_rel_error(&cases);
    text.push_str(&format!("max relative error {worst:.3e}\n"));
    if !(worst < TOLERANCE) {
        return Err(Failure::Runtime(format!("{text}gradient check failed: {worst:.3e} >= {TOLERANCE:e}")));
    }
    Ok(text)
}

fn ablate(run: RunArgs, seeds: &[u64]) -> Outcome {
    let cfg = resolve(TrainConfig::default(), &run)?;
    prepare(&run.out, &cfg)?;
    let report = run_ablation(&cfg, seeds, Some(&run.out), |_, _| {})?;
    write_file(&run.out.join("ablation.csv"), &report.to_csv())?;
    write_file(&run.out.join("ablation.txt"), &report.to_text())?;
    Ok(report.to_text())
}
