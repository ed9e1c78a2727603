use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use poolforge::dataio::{generate_corpus, write_manifest, write_records, SyntheticSpec};
use poolforge::trainer::{evaluate_checkpoint, train, verify_mode, TrainConfig};
use poolforge::{Architecture, Error, GradCheckOptions};

/// Records per file written by `gen-data`.
const SHARD_SIZE: usize = 256;

#[derive(Parser)]
#[command(name = "poolforge", version, about = "Train and evaluate learnable-pooling video classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a TOML run configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score every video of a manifest and write a predictions file.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic corpus described by a TOML spec.
    GenData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare tape gradients of a small network against finite differences.
    GradCheck {
        #[arg(long)]
        arch: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Shape { .. } => 2,
        Error::Format { .. } | Error::Data(_) | Error::Io(_) => 3,
        Error::Numeric { .. } | Error::Contract(_) => 4,
    }
}

fn run_train(config: &Path, resume: Option<&Path>) -> Result<(), Error> {
    let config = TrainConfig::from_file(config)?;
    let summary = train(&config, resume)?;
    let last = summary.evaluations.last().map(|(_, r)| r.gap);
    println!(
        "{}",
        serde_json::json!({
            "steps": summary.steps,
            "final_loss": summary.losses.last().map(|l| l.1),
            "holdout_gap": last,
            "checkpoint": summary.final_checkpoint,
        })
    );
    Ok(())
}

fn run_gen_data(spec: &Path, count: usize, out: &Path) -> Result<(), Error> {
    let text = std::fs::read_to_string(spec)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", spec.display())))?;
    let spec: SyntheticSpec = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    let records = generate_corpus(&spec, count)?;
    std::fs::create_dir_all(out)?;
    let mut files = Vec::new();
    for (i, shard) in records.chunks(SHARD_SIZE).enumerate() {
        let name = PathBuf::from(format!("part-{i:05}.pfr"));
        write_records(&out.join(&name), shard)?;
        files.push(name);
    }
    write_manifest(&out.join("manifest.txt"), &files)?;
    log::info!("wrote {count} videos in {} files to {}", files.len(), out.display());
    Ok(())
}

fn run_grad_check(arch: &str, seed: u64) -> Result<(), Error> {
    let arch: Architecture = arch.parse()?;
    let report = poolforge::models::gradient_check(arch, seed, GradCheckOptions::default())?;
    println!(
        "{arch} seed {seed}: max relative error {:.3e} over {} coordinates ({} refined), {}",
        report.max_rel_error,
        report.coordinates,
        report.refined,
        if report.passed { "PASS" } else { "FAIL" }
    );
    if !report.passed {
        return Err(Error::Numeric {
            op: format!("gradient check of {arch}: {:?}", report.worst),
        });
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if verify_mode() {
        log::info!("verification mode: 64-bit deterministic arithmetic with per-step finiteness checks");
    }
    let result = match &cli.command {
        Command::Train { config, resume } => run_train(config, resume.as_deref()),
        Command::Eval { ckpt, data, out } => evaluate_checkpoint(ckpt, data, out).map(|report| {
            println!("{}", serde_json::to_string(&report).expect("report serializes"));
        }),
        Command::GenData { spec, count, out } => run_gen_data(spec, *count, out),
        Command::GradCheck { arch, seed } => run_grad_check(arch, *seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
