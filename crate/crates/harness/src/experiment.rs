//! Fine-tuning, evaluation and pretraining runs driven by an [`ExperimentConfig`].

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use log::{info, warn};
use trisleep_core::{evaluate, pretrain_branch, train, MetricsReport, Model, PretrainOutcome, TrainHistory};
use rand::Rng;
use trisleep_numcore::{gradcheck, GradcheckConfig, GradcheckReport, NumError, SeedStream, Tensor};
use trisleep_sync::io::load_segments;
use trisleep_sync::{Modality, Trimodal};

use crate::checkpoint::Checkpoint;
use crate::config::{DataSource, ExperimentConfig};
use crate::data::{split, Splits};
use crate::error::{HarnessError, Result};

/// Builds or loads the labeled segments and splits them.
pub fn load_data(cfg: &ExperimentConfig) -> Result<Splits> {
    let seed = cfg.seed()?;
    let batch = match &cfg.data {
        DataSource::Synth => cfg.benchmark()?.build(cfg.exec)?,
        DataSource::Segments(path) => {
            let batch = load_segments(path)?;
            if (batch.window_secs - cfg.window_secs).abs() > 1e-9 {
                warn!(
                    "{} holds {} s windows; window_secs = {} is ignored",
                    path.display(),
                    batch.window_secs,
                    cfg.window_secs
                );
            }
            batch
        }
    };
    split(batch.segments, &cfg.splits(), SeedStream::new(seed).split_str("split"))
}

fn check_eval_set(splits: &Splits) -> Result<()> {
    if splits.train.is_empty() || splits.test.is_empty() {
        return Err(HarnessError::Data("train and test splits must both be non-empty".into()));
    }
    Ok(())
}

/// Loads each configured pretrained branch into `model`.
pub fn load_pretrained(model: &mut Model, cfg: &ExperimentConfig) -> Result<()> {
    for (m, path) in cfg.pretrained.iter() {
        let Some(path) = path else { continue };
        if !model.mode().uses(m) {
            warn!("fusion mode {} has no {m} branch; {} is not loaded", model.mode(), path.display());
            continue;
        }
        let store = Checkpoint::load(path)?.to_store();
        let n = model.load_matching(&store, &format!("{}.", m.name()))?;
        info!("loaded {n} pretrained {m} tensors from {}", path.display());
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub config: ExperimentConfig,
    pub model: Model,
    pub history: TrainHistory,
    /// Test cross-entropy of the initial model.
    pub initial_test_loss: f64,
    pub test_loss: f64,
    pub report: MetricsReport,
    pub val_report: Option<MetricsReport>,
    pub checkpoint: Checkpoint,
    pub seconds: f64,
}

impl FinetuneOutcome {
    /// Finite losses throughout and a test loss below the initial one.
    pub fn converged(&self) -> bool {
        self.history.losses.iter().all(|l| l.is_finite())
            && self.test_loss.is_finite()
            && self.test_loss < self.initial_test_loss
    }

    /// Writes `model.lbck`, `report.txt`, `report.json` and `run.log` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        self.checkpoint.save(&dir.join("model.lbck"))?;
        let write = |name: &str, body: String| {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| HarnessError::io(path, e))
        };
        write("report.txt", self.report.to_text())?;
        write("report.json", self.report.to_json())?;
        write("run.log", self.run_log())?;
        Ok(())
    }

    pub fn run_log(&self) -> String {
        let mut log = String::new();
        let _ = writeln!(log, "# code version: {}", code_version());
        let _ = writeln!(log, "# config hash: {}", self.config.hash());
        log.push_str(&self.config.to_text());
        let _ = writeln!(log, "# steps: {}", self.history.losses.len());
        let _ = writeln!(log, "# parameters: {}", self.model.num_parameters());
        let _ = writeln!(log, "# seconds: {:.1}", self.seconds);
        let _ = writeln!(log, "# initial test loss: {:.6}", self.initial_test_loss);
        let _ = writeln!(log, "# final test loss: {:.6}", self.test_loss);
        if let Some(val) = &self.val_report {
            let _ = writeln!(log, "# validation accuracy: {:.6}", val.accuracy);
        }
        let _ = writeln!(log, "# test accuracy: {:.6}", self.report.accuracy);
        log.push_str("# step losses:\n");
        for (i, l) in self.history.losses.iter().enumerate() {
            let _ = writeln!(log, "# {i} {l:.6}");
        }
        log
    }
}

/// `git describe` of the working tree, or the crate version outside a repository.
pub fn code_version() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| format!("{} (git {})", env!("CARGO_PKG_VERSION"), s.trim()))
        .unwrap_or_else(|| env!("CARGO_PKG_VERSION").to_string())
}

fn report_for(model: &Model, set: &[trisleep_sync::LabeledSegment], cfg: &ExperimentConfig) -> Result<(f64, MetricsReport)> {
    let examples = Splits::examples(set);
    let (loss, preds) = evaluate(model, &examples, cfg.exec)?;
    let labels: Vec<u8> = set.iter().map(|s| s.label).collect();
    Ok((loss, MetricsReport::from_predictions(&preds, &labels)?))
}

/// Trains a fresh model on `splits.train` and evaluates it on the test split.
pub fn run_finetune(cfg: &ExperimentConfig, splits: &Splits) -> Result<FinetuneOutcome> {
    let start = Instant::now();
    cfg.validate()?;
    check_eval_set(splits)?;
    let seed = cfg.seed()?;
    let mut model = Model::new(cfg.model_config(), SeedStream::new(seed))?;
    load_pretrained(&mut model, cfg)?;
    let test = Splits::examples(&splits.test);
    let (initial_test_loss, _) = evaluate(&model, &test, cfg.exec)?;
    let train_cfg = cfg.train_config(splits.train.len())?;
    info!(
        "fine-tuning {} ({} parameters) for {} steps on {} segments",
        cfg.fusion,
        model.num_parameters(),
        train_cfg.steps,
        splits.train.len()
    );
    let history = train(&mut model, &Splits::examples(&splits.train), &train_cfg)?;
    let val_report = if splits.val.is_empty() {
        None
    } else {
        Some(report_for(&model, &splits.val, cfg)?.1)
    };
    let (test_loss, report) = report_for(&model, &splits.test, cfg)?;
    let checkpoint = Checkpoint::from_store(cfg.to_text(), &model.store);
    Ok(FinetuneOutcome {
        config: cfg.clone(),
        model,
        history,
        initial_test_loss,
        test_loss,
        report,
        val_report,
        checkpoint,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Rebuilds the model recorded in a checkpoint.
pub fn load_model(checkpoint: &Checkpoint, path: &Path) -> Result<(ExperimentConfig, Model)> {
    let cfg = ExperimentConfig::parse(&checkpoint.config)?;
    let mut model = Model::new(cfg.model_config(), SeedStream::new(cfg.seed()?))?;
    checkpoint
        .restore_into(&mut model.store)
        .map_err(|detail| HarnessError::Checkpoint {
            path: path.to_path_buf(),
            detail,
        })?;
    Ok((cfg, model))
}

/// Evaluates a fine-tuned checkpoint on the test split of `splits`.
pub fn run_eval(checkpoint_path: &Path, splits: &Splits) -> Result<(f64, MetricsReport)> {
    let checkpoint = Checkpoint::load(checkpoint_path)?;
    let (cfg, model) = load_model(&checkpoint, checkpoint_path)?;
    if splits.test.is_empty() {
        return Err(HarnessError::Data("test split is empty".into()));
    }
    report_for(&model, &splits.test, &cfg)
}

/// Pretrains the given branches on the unlabeled corpus families.
pub fn run_pretrain(cfg: &ExperimentConfig, modalities: &[Modality]) -> Result<Vec<PretrainOutcome>> {
    cfg.validate()?;
    let corpus = cfg.pretrain_corpus()?.build(cfg.exec)?;
    if corpus.segments.is_empty() {
        return Err(HarnessError::Data("pretraining corpus is empty".into()));
    }
    let model = cfg.model_config();
    let pcfg = cfg.pretrain_config()?;
    let mut out = Vec::with_capacity(modalities.len());
    for &m in modalities {
        let signals: Vec<&Tensor> = corpus.segments.iter().map(|s| s.segment.signals.get(m)).collect();
        let outcome = pretrain_branch(&model, m, &signals, &pcfg)?;
        info!(
            "pretrained {m} on {} segments: masked loss {:.4} -> {:.4}",
            signals.len(),
            outcome.initial_loss,
            outcome.final_loss
        );
        out.push(outcome);
    }
    Ok(out)
}

/// Saves each outcome's branch weights as `pretrained_<modality>.lbck`.
pub fn save_pretrained(cfg: &ExperimentConfig, outcomes: &[PretrainOutcome], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    outcomes
        .iter()
        .map(|o| {
            let path = dir.join(format!("pretrained_{}.lbck", o.modality.name()));
            Checkpoint::from_store(cfg.to_text(), &o.branch_params()).save(&path)?;
            Ok(path)
        })
        .collect()
}

/// Waveform samples and IMU steps of the random gradient-check input.
pub const GRADCHECK_INPUT: (usize, usize) = (1040, 9);

/// Finite-difference check of every parameter of the configured model, with
/// dropout switched off, on one random input.
pub fn run_gradcheck(cfg: &ExperimentConfig, check: &GradcheckConfig) -> Result<GradcheckReport> {
    let seed = SeedStream::new(cfg.seed.unwrap_or(0));
    let mut model_cfg = cfg.model_config();
    model_cfg.head_dropout = 0.0;
    for m in Modality::ALL {
        model_cfg.branches.get_mut(m).dropout = 0.0;
    }
    let model = Model::new(model_cfg, seed.split_str("model"))?;
    let (wave, imu) = GRADCHECK_INPUT;
    let signals = Trimodal::from_fn(|m| {
        let shape = if m == Modality::Imu { [m.channels(), imu] } else { [1, wave] };
        let mut rng = seed.split_str("input").split_str(m.name()).rng();
        Tensor::from_fn(&shape, |_| rng.gen_range(-1.0f32..1.0))
    });
    Ok(gradcheck(&model.store, check, |g| {
        model.loss(g, &signals, 1).map_err(|e| NumError::Config(e.to_string()))
    })?)
}
