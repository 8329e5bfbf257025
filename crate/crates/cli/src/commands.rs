use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use acr_core::data::{build_corpus, Corpus, Split};
use acr_core::metrics::{analyze_rows, evaluate, AnalyticsConfig, Predictor};
use acr_core::training::{Checkpoint, EpochLog, Sample, StepLog, TrainObserver, TrainState, Trainer};
use acr_core::{AcrModel, Error, ExperimentConfig};

use crate::failure::{CliResult, Failure, COMPATIBILITY, INPUT, INTERRUPTED, NUMERICAL};
use crate::output::{
    create_dir, read_trajectory, report_summary, rounds_summary, write_csv, write_report, write_rounds, write_text,
};

pub const CHECKPOINT_FILE: &str = "checkpoint.acrc";
pub const LAST_GOOD_FILE: &str = "last-good.acrc";
pub const EPOCH_LOG_FILE: &str = "epoch_log.csv";
pub const PRED_TRAJECTORY: &str = "trajectory_pred.csv";
pub const TRUTH_TRAJECTORY: &str = "trajectory_truth.csv";

fn load_config(path: &Path) -> CliResult<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::fs(&format!("cannot read {}", path.display()), e))?;
    ExperimentConfig::parse(&text).map_err(|e| Failure::new(INPUT, format!("{}: {e}", path.display())))
}

fn load_corpus(dir: &Path, cfg: &ExperimentConfig) -> CliResult<Corpus> {
    let corpus = Corpus::load(dir)?;
    if corpus.manifest.data_hash != cfg.data_hash() {
        return Err(Failure::new(
            COMPATIBILITY,
            format!(
                "corpus {} was generated from a different [data] section (hash {} vs {})",
                dir.display(),
                corpus.manifest.data_hash,
                cfg.data_hash()
            ),
        ));
    }
    Ok(corpus)
}

pub fn gen_data(config: &Path, seed: u64, out: &Path) -> CliResult {
    let cfg = load_config(config)?;
    let corpus = build_corpus(&cfg.data, seed, &cfg.data_hash())?;
    let s = corpus.write(out)?;
    println!(
        "wrote {} samples from {} subjects, {} bytes, manifest sha256 {}",
        s.samples, s.subjects, s.bytes, s.manifest_sha256
    );
    Ok(())
}

#[derive(serde::Serialize)]
struct EpochRow {
    epoch: usize,
    lr: f64,
    train_loss: f64,
    val_mpjpe_mm: Option<f64>,
    wall_seconds: f64,
}

struct CliObserver<'a> {
    stop: Arc<AtomicBool>,
    log: csv::Writer<std::fs::File>,
    dir: PathBuf,
    every: usize,
    samples: usize,
    cfg: &'a ExperimentConfig,
}

impl CliObserver<'_> {
    fn save(&mut self, state: &TrainState, path: &Path) -> acr_core::Result<()> {
        let text = self.cfg.to_toml();
        Checkpoint::capture(state, &self.cfg.training, self.samples, self.cfg.hash(), &text).save(path)
    }
}

impl TrainObserver for CliObserver<'_> {
    fn on_step(&mut self, log: &StepLog) {
        log::debug!("step {} loss {:.6}", log.step, log.loss);
    }

    fn on_epoch(&mut self, log: &EpochLog, state: &TrainState) -> acr_core::Result<()> {
        let val = log.val_mpjpe_mm.map_or("-".to_string(), |v| format!("{v:.2} mm"));
        eprintln!(
            "epoch {:>4}  lr {:.3e}  train_loss {:.6}  val_mpjpe {val}  {:.1}s",
            log.epoch, log.lr, log.train_loss, log.wall_seconds
        );
        let row = EpochRow {
            epoch: log.epoch,
            lr: log.lr,
            train_loss: log.train_loss,
            val_mpjpe_mm: log.val_mpjpe_mm,
            wall_seconds: log.wall_seconds,
        };
        self.log.serialize(row).map_err(|e| Error::Io(std::io::Error::other(e)))?;
        self.log.flush()?;
        if self.every > 0 && state.epoch % self.every == 0 {
            let snapshot = self.dir.join(format!("epoch-{:04}.acrc", state.epoch));
            self.save(state, &snapshot)?;
            std::fs::copy(&snapshot, self.dir.join(CHECKPOINT_FILE))?;
        }
        Ok(())
    }

    fn should_stop(&self) -> bool {
        self.stop.load(Ordering::SeqCst)
    }
}

fn split_samples(corpus: &Corpus, split: Split, cfg: &ExperimentConfig) -> CliResult<Vec<Sample>> {
    Ok(corpus.samples(split, &cfg.cube)?)
}

pub fn train(config: &Path, data: &Path, seed: u64, resume: Option<&Path>, out: &Path) -> CliResult {
    let cfg = load_config(config)?;
    let corpus = load_corpus(data, &cfg)?;
    let cube = corpus.cube(&cfg.cube)?;
    let train = split_samples(&corpus, Split::Train, &cfg)?;
    let val = split_samples(&corpus, Split::Val, &cfg)?;
    if train.is_empty() {
        return Err(Failure::new(INPUT, "the corpus has no training samples"));
    }
    let model = AcrModel::new(&cfg.model, cfg.model_dims(), seed)?;
    let state = match resume {
        Some(p) => Checkpoint::load(p)?.restore(model, &cfg.hash())?,
        None => TrainState::new(model, &cfg.training, seed),
    };
    create_dir(out)?;
    let log_path = out.join(EPOCH_LOG_FILE);
    // a resumed run extends the existing log
    let append = resume.is_some() && log_path.exists();
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(&log_path)
        .map_err(|e| Failure::fs(&format!("cannot open {}", log_path.display()), e))?;
    let log = csv::WriterBuilder::new().has_headers(!append).from_writer(file);
    write_text(&out.join("config.toml"), &cfg.to_toml())?;

    let stop = Arc::new(AtomicBool::new(false));
    {
        let stop = stop.clone();
        if let Err(e) = ctrlc::set_handler(move || stop.store(true, Ordering::SeqCst)) {
            log::warn!("no Ctrl-C handler: {e}");
        }
    }
    let mut observer = CliObserver {
        stop,
        log,
        dir: out.to_path_buf(),
        every: cfg.training.checkpoint_every,
        samples: train.len(),
        cfg: &cfg,
    };
    let mut trainer = Trainer::new(&cfg.training, &cube, state);
    let val = (!val.is_empty()).then_some(val.as_slice());
    match trainer.run(&train, val, &mut observer) {
        Ok(summary) => {
            let path = out.join(CHECKPOINT_FILE);
            observer.save(&trainer.state, &path)?;
            if summary.interrupted {
                eprintln!("interrupted at step {}; checkpoint written to {}", summary.steps, path.display());
                return Err(Failure::new(INTERRUPTED, "training interrupted"));
            }
            println!("trained {} steps; checkpoint {}", summary.steps, path.display());
            Ok(())
        }
        Err(e @ Error::NumericalAbort { .. }) => {
            // the trainer has rolled back to the last completed epoch
            let path = out.join(LAST_GOOD_FILE);
            observer.save(&trainer.state, &path)?;
            eprintln!("last good checkpoint: {}", path.display());
            Err(Failure::new(NUMERICAL, e.to_string()))
        }
        Err(e) => Err(e.into()),
    }
}

pub fn eval(checkpoint: &Path, data: &Path, split: Split, out: &Path, ground_truth: bool) -> CliResult {
    let ckpt = Checkpoint::load(checkpoint)?;
    let cfg = ExperimentConfig::parse(&ckpt.config_text)
        .map_err(|e| Failure::new(COMPATIBILITY, format!("checkpoint config does not load in this build: {e}")))?;
    if cfg.hash() != ckpt.config_hash {
        return Err(Failure::new(COMPATIBILITY, "checkpoint config text does not match its stamped hash"));
    }
    let corpus = load_corpus(data, &cfg)?;
    let model = AcrModel::new(&cfg.model, cfg.model_dims(), 0)?;
    let state = ckpt.restore(model, &cfg.hash())?;
    let predictor = if ground_truth { Predictor::GroundTruth } else { Predictor::Model(&state.model) };
    let ev = evaluate(predictor, &corpus, split, &cfg.cube, &cfg.evaluation, &cfg.analytics)?;
    create_dir(out)?;
    write_report(out, &ev.report)?;
    write_csv(&out.join(PRED_TRAJECTORY), &ev.pred_rows)?;
    write_csv(&out.join(TRUTH_TRAJECTORY), &ev.truth_rows)?;
    write_rounds(out, &ev.rounds, &cfg.analytics)?;
    let mut summary = format!("config hash: {}\ndata hash: {}\n", cfg.hash_hex(), corpus.manifest.data_hash);
    if ground_truth {
        summary += "predictions: ground truth (self-check)\n";
    }
    summary += &report_summary(&ev.report);
    summary += &rounds_summary(&ev.rounds, &cfg.analytics);
    write_text(&out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

pub fn analyze(input: &Path, truth: Option<&Path>, config: Option<&Path>, out: &Path) -> CliResult {
    let cfg = match config {
        Some(p) => load_config(p)?.analytics,
        None => AnalyticsConfig::default(),
    };
    let (pred_path, truth_path) = if input.is_dir() {
        let t = input.join(TRUTH_TRAJECTORY);
        (input.join(PRED_TRAJECTORY), truth.map(Path::to_path_buf).or_else(|| t.exists().then_some(t)))
    } else {
        (input.to_path_buf(), truth.map(Path::to_path_buf))
    };
    let pred = read_trajectory(&pred_path)?;
    let reference = truth_path.as_deref().map(read_trajectory).transpose()?;
    let rounds = analyze_rows(&pred, reference.as_deref(), &cfg)?;
    create_dir(out)?;
    write_rounds(out, &rounds, &cfg)?;
    let summary = rounds_summary(&rounds, &cfg);
    write_text(&out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}
