use std::fmt::Write as _;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use wavbrivl::commands::{self, AudioSource};
use wavbrivl::Result;

#[derive(Parser)]
#[command(name = "wavbrivl", version, about = "Audio-to-image contrastive training and generation on a synthetic corpus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train and freeze the image tower and the codec.
    PretrainImage {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Contrastive training of the audio tower against a frozen image checkpoint.
    TrainAudio {
        #[command(flatten)]
        common: Common,
        /// Pretrained (or partially trained) checkpoint.
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        queue_size: Option<usize>,
        #[arg(long)]
        momentum: Option<f32>,
    },
    /// Generate an image for a WAV file or a synthetic clip of a class.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, conflicts_with = "class", required_unless_present = "class")]
        wav: Option<PathBuf>,
        #[arg(long)]
        class: Option<usize>,
        /// Output directory for generated.ppm and trace.csv.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Recall and forced-choice accuracy on the held-out split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        topk: Option<usize>,
        /// Directory for report.txt and trials.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a checkpoint's tensors and config snapshot.
    InspectCkpt {
        #[arg(long)]
        ckpt: PathBuf,
    },
}

/// Config file text followed by one line per given flag.
fn settings(common: &Common, flags: &[(&str, Option<String>)]) -> Result<String> {
    let mut s = match &common.config {
        Some(path) => std::fs::read_to_string(path)?,
        None => String::new(),
    };
    s.push('\n');
    for (key, value) in flags {
        if let Some(v) = value {
            writeln!(s, "{key} = {v}").unwrap();
        }
    }
    Ok(s)
}

fn run(cli: Cli) -> Result<()> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::PretrainImage { common, out: path } => {
            let s = settings(&common, &[("seed", common.seed.map(|v| v.to_string()))])?;
            commands::pretrain_image(&s, &path, &mut out)?;
        }
        Command::TrainAudio { common, ckpt, out: path, steps, queue_size, momentum } => {
            let s = settings(
                &common,
                &[
                    ("seed", common.seed.map(|v| v.to_string())),
                    ("train.steps", steps.map(|v| v.to_string())),
                    ("queue_size", queue_size.map(|v| v.to_string())),
                    ("momentum", momentum.map(|v| v.to_string())),
                ],
            )?;
            commands::train_audio(&s, &ckpt, &path, &mut out)?;
        }
        Command::Generate { common, ckpt, wav, class, out: dir, steps } => {
            let seed = common.seed.unwrap_or(0);
            let s = settings(
                &common,
                &[("gen.seed", common.seed.map(|v| v.to_string())), ("gen.steps", steps.map(|v| v.to_string()))],
            )?;
            let source = match (wav, class) {
                (Some(path), _) => AudioSource::Wav(path),
                (None, Some(class_id)) => AudioSource::Class { class_id, seed },
                (None, None) => unreachable!("clap requires --wav or --class"),
            };
            let (_, trace) = commands::generate(&ckpt, &source, &s, &dir)?;
            writeln!(
                out,
                "best similarity {:.6} at step {} (initial {:.6})",
                trace.best_similarity,
                trace.best_step,
                trace.initial_similarity()
            )?;
        }
        Command::Evaluate { common, ckpt, trials, topk, out: dir } => {
            let s = settings(
                &common,
                &[("eval.trials", trials.map(|v| v.to_string())), ("topk", topk.map(|v| v.to_string()))],
            )?;
            let report = commands::evaluate(&ckpt, &s, common.seed)?;
            write!(out, "{}", report.table())?;
            if let Some(dir) = dir {
                std::fs::write(dir.join("report.txt"), report.to_text())?;
                std::fs::write(dir.join("trials.csv"), report.trials_csv())?;
            }
        }
        Command::InspectCkpt { ckpt } => write!(out, "{}", commands::inspect(&ckpt)?)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
