use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use trisleep_harness::{
    load_data, run_ablation, run_eval, run_finetune, run_gradcheck, run_pretrain, save_pretrained, synth_generate, Checkpoint,
    ExperimentConfig, HarnessError, PipelineConfig, Suite, SynthSpec,
};
use trisleep_numcore::GradcheckConfig;
use trisleep_sync::io::{load_chunked, load_labels, save_chunked, save_labels, save_segments};
use trisleep_sync::{Modality, Trimodal};

#[derive(Parser)]
#[command(name = "trisleep", version, about = "Trimodal sleep/wake experiments on synthetic or recorded data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate one synthetic recording: three stream files and a label CSV.
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 1.0)]
        hours: f64,
        #[arg(long, default_value_t = 0)]
        family: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Zero-fill, resample, align, window and label a recording directory.
    Sync {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Directory holding audio.lbcs, ecg.lbcs, imu.lbcs and labels.csv.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        family: Option<u32>,
        /// Segment archive to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain branches on unlabeled synthetic families.
    Pretrain {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Comma-separated branches to pretrain.
        #[arg(long, value_delimiter = ',', default_value = "audio,ecg,imu")]
        modalities: Vec<Modality>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a classifier and write checkpoint, report and run log.
    Finetune {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a fine-tuned checkpoint on the test split.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run an ablation suite and print its table.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        suite: Suite,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every model parameter.
    Gradcheck {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Check at most this many elements per parameter.
        #[arg(long)]
        max_elements: Option<usize>,
    },
}

/// `--config` plus overrides of individual keys.
#[derive(Args, Clone, Default)]
struct ConfigArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    fusion: Option<String>,
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    window_secs: Option<f64>,
    #[arg(long)]
    families: Option<u32>,
    /// Any config key, as `key=value`; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn overrides(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        push("seed", self.seed.map(|v| v.to_string()));
        push("preset", self.preset.clone());
        push("fusion", self.fusion.clone());
        push("schedule", self.schedule.clone());
        push("layers", self.layers.map(|v| v.to_string()));
        push("lr", self.lr.map(|v| v.to_string()));
        push("steps", self.steps.map(|v| v.to_string()));
        push("epochs", self.epochs.map(|v| v.to_string()));
        push("batch_size", self.batch_size.map(|v| v.to_string()));
        push("window_secs", self.window_secs.map(|v| v.to_string()));
        push("families", self.families.map(|v| v.to_string()));
        for kv in &self.set {
            match kv.split_once('=') {
                Some((k, v)) => out.push((k.trim().to_string(), v.trim().to_string())),
                None => out.push((kv.clone(), String::new())),
            }
        }
        out
    }

    fn apply(&self, mut cfg: ExperimentConfig) -> Result<ExperimentConfig, HarnessError> {
        for (k, v) in self.overrides() {
            cfg.set(&k, &v).map_err(|e| HarnessError::Invalid(format!("override `{k}`: {e}")))?;
        }
        Ok(cfg)
    }

    fn load(&self) -> Result<ExperimentConfig, HarnessError> {
        let base = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        self.apply(base)
    }
}

const STREAM_FILES: Trimodal<&str> = Trimodal {
    audio: "audio.lbcs",
    ecg: "ecg.lbcs",
    imu: "imu.lbcs",
};
const LABEL_FILE: &str = "labels.csv";

fn create_dir(dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

fn run(command: Command) -> Result<bool, HarnessError> {
    match command {
        Command::Synth { cfg, hours, family, out } => {
            let cfg = cfg.load()?;
            let spec = SynthSpec {
                seed: cfg.seed()?,
                family,
                duration_secs: hours * 3600.0,
                ..SynthSpec::default()
            };
            let rec = synth_generate(&spec)?;
            create_dir(&out)?;
            for (m, stream) in rec.streams.iter() {
                save_chunked(&out.join(STREAM_FILES.get(m)), stream)?;
            }
            save_labels(&out.join(LABEL_FILE), &rec.labels)?;
            println!("wrote {} s of family {family} to {}", spec.duration_secs, out.display());
        }
        Command::Sync { cfg, input, family, out } => {
            let cfg = cfg.load()?;
            let streams = Trimodal::try_from_fn(|m| load_chunked(&input.join(STREAM_FILES.get(m))))?;
            let labels = load_labels(&input.join(LABEL_FILE))?;
            let pipeline = PipelineConfig {
                window_secs: cfg.window_secs,
                ..PipelineConfig::default()
            };
            let batch = trisleep_harness::prepare(&streams, &labels, family, &pipeline)?;
            save_segments(&out, &batch)?;
            println!("wrote {} segments of {} s to {}", batch.segments.len(), batch.window_secs, out.display());
        }
        Command::Pretrain { cfg, modalities, out } => {
            let cfg = cfg.load()?;
            cfg.seed()?;
            let outcomes = run_pretrain(&cfg, &modalities)?;
            let paths = save_pretrained(&cfg, &outcomes, &out)?;
            for (o, p) in outcomes.iter().zip(paths) {
                println!(
                    "{}: masked loss {:.4} -> {:.4}, wrote {}",
                    o.modality,
                    o.initial_loss,
                    o.final_loss,
                    p.display()
                );
            }
        }
        Command::Finetune { cfg, out } => {
            let cfg = cfg.load()?;
            cfg.validate()?;
            let splits = load_data(&cfg)?;
            let run = run_finetune(&cfg, &splits)?;
            run.write(&out)?;
            print!("{}", run.report.to_text());
            println!("wrote checkpoint, report and run log to {}", out.display());
        }
        Command::Eval { cfg: args, checkpoint } => {
            let base = match &args.config {
                Some(path) => ExperimentConfig::load(path)?,
                None => ExperimentConfig::parse(&Checkpoint::load(&checkpoint)?.config)?,
            };
            let cfg = args.apply(base)?;
            let splits = load_data(&cfg)?;
            let (loss, report) = run_eval(&checkpoint, &splits)?;
            print!("{}", report.to_text());
            println!("cross_entropy={loss:.6}");
        }
        Command::Ablate { cfg, suite, out } => {
            let cfg = cfg.load()?;
            cfg.validate()?;
            create_dir(&out)?;
            let splits = load_data(&cfg)?;
            let table = run_ablation(suite, &cfg, &splits, &out)?;
            write_text(&out.join("table.txt"), &table.to_text())?;
            write_text(&out.join("table.json"), &table.to_json())?;
            print!("{}", table.to_text());
        }
        Command::Gradcheck { cfg, max_elements } => {
            let cfg = cfg.load()?;
            let check = GradcheckConfig {
                max_elements,
                exec: cfg.exec,
                ..GradcheckConfig::default()
            };
            let report = run_gradcheck(&cfg, &check)?;
            print!("{}", report.table());
            return Ok(report.all_passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            let line = e.to_string().replace('\n', " ");
            eprintln!("error: {line}");
            match e {
                HarnessError::Config { .. } | HarnessError::Invalid(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
