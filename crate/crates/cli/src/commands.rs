use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::time::Instant;

use lenswipe::dataio::{list_images, load_image, load_paired_dataset, save_image, split_dataset, ImagePair};
use lenswipe::eval::{
    benchmark_latency, evaluate, run_ablation, AblationData, IdentityRestorer, ModelRestorer, Restorer, DEVICE_LABEL,
};
use lenswipe::perceptual::PerceptualExtractor;
use lenswipe::synth::synthesize_corpus;
use lenswipe::train::{pretrain_synthetic, run_training, TrainContext, TrainOptions, TrainOutcome, TrainState, BEST_DIR};
use lenswipe::weights::WEIGHTS_FILE;
use lenswipe::{init_weights, Error, ModelConfig, NetworkWeights, Result};
use log::{error, info};

use crate::config::{required, RunConfig};

/// Finished, possibly with some per-item failures.
pub enum Outcome {
    Done,
    Partial { failed: usize, total: usize },
}

pub const LOCK_FILE: &str = ".lenswipe.lock";

/// Exclusive claim on an output directory, released on drop.
pub struct OutputLock(PathBuf);

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::Resource(format!("{}: {e}", dir.display())))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self(path)),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => Err(Error::Resource(format!(
                "{} is in use by another invocation (delete {} if that run is gone)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::Resource(format!("{}: {e}", path.display()))),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

/// Weights plus their config from a weights directory or a training run
/// directory (whose `best/` is used).
fn load_weights(path: &Path) -> Result<(NetworkWeights, ModelConfig)> {
    let best = path.join(BEST_DIR);
    let dir = if !path.join(WEIGHTS_FILE).is_file() && best.join(WEIGHTS_FILE).is_file() {
        best
    } else {
        path.to_path_buf()
    };
    NetworkWeights::load_dir(&dir)
}

fn load_extractor(cfg: &RunConfig) -> Result<PerceptualExtractor> {
    let path = required(&cfg.perceptual.weights, "perceptual.weights")?;
    if !path.is_file() {
        return Err(Error::Config(format!(
            "perceptual.weights: {} is not a file; training needs the VGG16 feature weights",
            path.display()
        )));
    }
    PerceptualExtractor::load(path)
}

fn initial_state(cfg: &RunConfig, out: &Path, resume: bool) -> Result<TrainState> {
    if resume {
        let state = TrainState::resume(out)?;
        let fields = state.latest.model.differing_fields(&cfg.model);
        if !fields.is_empty() {
            return Err(Error::Incompatible { fields });
        }
        info!("resuming after epoch {}", state.latest.epoch);
        return Ok(state);
    }
    let weights = match &cfg.init {
        Some(path) => {
            let (weights, model) = load_weights(path)?;
            let fields = model.differing_fields(&cfg.model);
            if !fields.is_empty() {
                return Err(Error::Incompatible { fields });
            }
            info!("initialising from {}", path.display());
            weights
        }
        None => init_weights(&cfg.model, cfg.train.seed)?,
    };
    TrainState::fresh(cfg.model.clone(), weights, &cfg.train)
}

fn report_training(outcome: &TrainOutcome) {
    let best = &outcome.best;
    info!(
        "best epoch {} with validation PSNR {:.3} dB after {} epochs{}",
        best.best_epoch,
        best.best_metric,
        outcome.latest.epoch,
        if outcome.stopped_early { " (early stop)" } else { "" }
    );
}

fn split(cfg: &RunConfig) -> Result<(Vec<ImagePair>, Vec<ImagePair>, Vec<ImagePair>)> {
    let pairs = load_paired_dataset(&cfg.manifest()?)?;
    info!("loaded {} pairs", pairs.len());
    split_dataset(pairs, cfg.data.split, cfg.data.split_seed)
}

pub fn synthesize(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let input = required(&cfg.data.input_dir, "data.input_dir")?;
    let records = synthesize_corpus(input, &cfg.rain, out)?;
    info!("wrote {} raindrop triplets to {}", records.len(), out.display());
    Ok(Outcome::Done)
}

pub fn pretrain(cfg: &RunConfig, out: &Path, resume: bool) -> Result<Outcome> {
    let dir = required(&cfg.data.clean_dir, "data.clean_dir")?;
    let extractor = load_extractor(cfg)?;
    let clean = list_images(dir)?
        .iter()
        .map(|p| {
            let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            Ok((id, load_image(p, Some(cfg.model.input_channels))?.image))
        })
        .collect::<Result<Vec<_>>>()?;
    info!("pre-training on {} clean images", clean.len());
    let ctx = TrainContext {
        train: &cfg.train,
        loss: &cfg.loss,
        extractor: &extractor,
    };
    let options = TrainOptions {
        output_dir: Some(out.to_path_buf()),
        halt_after: None,
    };
    let outcome = pretrain_synthetic(&clean, &cfg.rain, ctx, initial_state(cfg, out, resume)?, &options)?;
    report_training(&outcome);
    Ok(Outcome::Done)
}

pub fn train(cfg: &RunConfig, out: &Path, resume: bool) -> Result<Outcome> {
    let extractor = load_extractor(cfg)?;
    let (train_set, val_set, _) = split(cfg)?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Config(format!(
            "data.split {:?} leaves {} training and {} validation pairs; both must be non-empty",
            cfg.data.split,
            train_set.len(),
            val_set.len()
        )));
    }
    let ctx = TrainContext {
        train: &cfg.train,
        loss: &cfg.loss,
        extractor: &extractor,
    };
    let options = TrainOptions {
        output_dir: Some(out.to_path_buf()),
        halt_after: None,
    };
    let state = initial_state(cfg, out, resume)?;
    let outcome = run_training(|_| Ok(train_set.clone()), &val_set, ctx, state, &options)?;
    report_training(&outcome);
    Ok(Outcome::Done)
}

fn restorer(cfg: &RunConfig) -> Result<(Box<dyn Restorer>, ModelConfig, String)> {
    match &cfg.checkpoint {
        Some(path) => {
            let (weights, model) = load_weights(path)?;
            let fingerprint = model.fingerprint();
            Ok((Box::new(ModelRestorer::new(model.clone(), weights)?), model, fingerprint))
        }
        None => Ok((Box::new(IdentityRestorer), cfg.model.clone(), "input".into())),
    }
}

fn expand_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            files.extend(list_images(p)?);
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

pub fn infer(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    required(&cfg.checkpoint, "checkpoint")?;
    let (restorer, model, _) = restorer(cfg)?;
    let files = expand_inputs(&cfg.infer.inputs)?;
    if files.is_empty() {
        return Err(Error::Config("infer.inputs lists no images".into()));
    }
    let min = model.patch_receptive_field;
    let mut timings = String::from("file,height,width,seconds,status\n");
    let mut failed = 0;
    for file in &files {
        let start = Instant::now();
        let result = (|| -> Result<(usize, usize)> {
            let loaded = load_image(file, Some(model.input_channels))?;
            let (h, w, _) = loaded.image.shape();
            if h < min || w < min {
                return Err(Error::Domain(format!("{w}x{h} is below the {min} px minimum")));
            }
            let restored = restorer.restore(&loaded.image)?;
            let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
            save_image(&out.join(format!("{stem}{}.png", cfg.infer.suffix)), &restored, loaded.bit_depth)?;
            Ok((h, w))
        })();
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok((h, w)) => {
                info!("{}: {w}x{h} restored in {secs:.3} s", file.display());
                let _ = writeln!(timings, "{},{h},{w},{secs:.6},ok", file.display());
            }
            Err(e) => {
                error!("{}: skipped: {e}", file.display());
                let _ = writeln!(timings, "{},,,{secs:.6},error", file.display());
                failed += 1;
            }
        }
    }
    let path = out.join("timings.csv");
    fs::write(&path, timings).map_err(|e| Error::Resource(format!("{}: {e}", path.display())))?;
    Ok(if failed == 0 {
        Outcome::Done
    } else {
        Outcome::Partial {
            failed,
            total: files.len(),
        }
    })
}

pub fn evaluate_cmd(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let (restorer, _, fingerprint) = restorer(cfg)?;
    let (train, val, test) = split(cfg)?;
    let pairs: Vec<ImagePair> = match cfg.data.eval_split.as_str() {
        "train" => train,
        "val" => val,
        "test" => test,
        _ => train.into_iter().chain(val).chain(test).collect(),
    };
    let report = evaluate(restorer.as_ref(), &pairs, &fingerprint, cfg.data.luma)?;
    report.write(out)?;
    info!("{}", report.summary().trim_end());
    Ok(Outcome::Done)
}

pub fn benchmark(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let restorer: Box<dyn Restorer> = match &cfg.checkpoint {
        Some(_) => restorer(cfg)?.0,
        // latency does not depend on the weight values
        None => Box::new(ModelRestorer::new(cfg.model.clone(), init_weights(&cfg.model, cfg.train.seed)?)?),
    };
    let b = &cfg.benchmark;
    let channels = match &cfg.checkpoint {
        Some(path) => load_weights(path)?.1.input_channels,
        None => cfg.model.input_channels,
    };
    let stats = benchmark_latency(restorer.as_ref(), (b.height, b.width, channels), b.runs, b.warmup)?;
    stats.write(out)?;
    info!("{} ({DEVICE_LABEL})", stats.summary().trim_end());
    Ok(Outcome::Done)
}

pub fn ablate(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let extractor = load_extractor(cfg)?;
    let (train, val, test) = split(cfg)?;
    if train.is_empty() || val.is_empty() || test.is_empty() {
        return Err(Error::Config(format!(
            "data.split {:?} must leave every split non-empty for an ablation",
            cfg.data.split
        )));
    }
    let data = AblationData {
        train: &train,
        val: &val,
        test: &test,
    };
    let report = run_ablation(&data, &cfg.model, &cfg.train, &cfg.loss, &extractor, cfg.data.luma)?;
    report.write(out)?;
    info!("{}", report.summary().trim_end());
    Ok(Outcome::Done)
}
