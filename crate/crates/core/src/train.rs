//! Adversarial training loop, synthetic pre-training and weight transfer.
//!
//! Each batch gets one discriminator update followed by one joint
//! generator + enhancer update. All randomness of an epoch (shuffle,
//! augmentation, synthetic drops) derives from `(seed, epoch)`, so a run
//! resumed from its latest checkpoint continues exactly as if uninterrupted.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::backprop::GradStore;
use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::dataio::{augment, normalize, pad_to_multiple, AugmentConfig, ImagePair, Source};
use crate::error::{Error, Result};
use crate::eval::{evaluate, to_json, ModelRestorer};
use crate::image::{stack_images, ImageTensor};
use crate::losses::{
    adversarial_g_loss, discriminator_loss, feature_matching_loss, fidelity_loss, perceptual_loss, scalar,
    total_generator_loss_tensor, LossConfig, LossTerms,
};
use crate::metrics::extended_float;
use crate::model::discriminator::discriminator_forward_tensor;
use crate::model::enhancer::enhancer_forward_tensor;
use crate::model::generator::generator_forward_tensor;
use crate::perceptual::PerceptualExtractor;
use crate::synth::{composite_raindrops, RainConfig};
use crate::weights::{write_file, Component, Frozen, NetworkWeights, WEIGHTS_FILE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            batch_size: 8,
            max_epochs: 200,
            patience: 10,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            problems.push(format!("learning_rate {} must be positive", self.learning_rate));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
        ] {
            if v == 0 {
                problems.push(format!("{name} must be positive"));
            }
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                problems.push(format!("{name} {b} must lie in [0, 1)"));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            problems.push(format!("epsilon {} must be positive", self.epsilon));
        }
        if self.augment.crop == Some(0) {
            problems.push("augment.crop must be positive".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// Adam with bias correction; moments are keyed by parameter path.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl Adam {
    pub fn new(config: &TrainConfig) -> Self {
        Self {
            learning_rate: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update of every parameter in `params` that received a gradient.
    pub fn update(&mut self, params: &NetworkWeights, grads: &GradStore) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (path, var) in params.iter() {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            let g = g.detach();
            let (m, v) = match self.moments.get(path) {
                Some((m, v)) => (m.clone(), v.clone()),
                None => (g.zeros_like()?, g.zeros_like()?),
            };
            let m = ((m * self.beta1)? + (&g * (1.0 - self.beta1))?)?;
            let v = ((v * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?;
            let denom = ((&v / c2)?.sqrt()? + self.epsilon)?;
            let delta = ((&m / c1)?.div(&denom)? * self.learning_rate)?;
            var.set(&(var.as_tensor().detach() - delta)?)?;
            self.moments.insert(path.to_string(), (m, v));
        }
        Ok(())
    }

    fn to_tensors(&self, prefix: &str, out: &mut HashMap<String, Tensor>) {
        for (path, (m, v)) in &self.moments {
            out.insert(format!("{prefix}.m.{path}"), m.clone());
            out.insert(format!("{prefix}.v.{path}"), v.clone());
        }
    }

    fn restore(state: &AdamState, prefix: &str, tensors: &HashMap<String, Tensor>) -> Result<Self> {
        let mut moments = BTreeMap::new();
        let m_prefix = format!("{prefix}.m.");
        for (name, m) in tensors {
            if let Some(path) = name.strip_prefix(&m_prefix) {
                let v = tensors
                    .get(&format!("{prefix}.v.{path}"))
                    .ok_or_else(|| Error::shape(format!("optimizer state lacks `{prefix}.v.{path}`")))?;
                moments.insert(path.to_string(), (m.clone(), v.clone()));
            }
        }
        Ok(Self {
            learning_rate: state.learning_rate,
            beta1: state.beta1,
            beta2: state.beta2,
            epsilon: state.epsilon,
            step: state.step,
            moments,
        })
    }

    fn state(&self) -> AdamState {
        AdamState {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            step: self.step,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AdamState {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: u64,
}

/// Model-space `(N, C, H, W)` tensors of a batch of pairs.
#[derive(Debug, Clone)]
pub struct Batch {
    pub affected: Tensor,
    pub clean: Tensor,
    pub ids: Vec<String>,
}

impl Batch {
    /// Normalizes `[0, 1]` pairs and reflection-pads them to a multiple of `multiple`.
    pub fn from_pairs(pairs: &[ImagePair], multiple: usize) -> Result<Self> {
        let first = pairs.first().ok_or_else(|| Error::config("empty batch"))?;
        for p in pairs {
            if p.affected.shape() != first.affected.shape() || p.clean.shape() != p.affected.shape() {
                return Err(Error::shape(format!(
                    "batch mixes shapes: `{}` is {:?}/{:?}, `{}` is {:?}",
                    p.id,
                    p.affected.shape(),
                    p.clean.shape(),
                    first.id,
                    first.affected.shape()
                )));
            }
        }
        let prep = |img: &ImageTensor| pad_to_multiple(&normalize(img), multiple).0;
        let affected: Vec<ImageTensor> = pairs.iter().map(|p| prep(&p.affected)).collect();
        let clean: Vec<ImageTensor> = pairs.iter().map(|p| prep(&p.clean)).collect();
        fn refs(v: &[ImageTensor]) -> Vec<&ImageTensor> {
            v.iter().collect()
        }
        Ok(Self {
            affected: stack_images(&refs(&affected), DType::F32, &Device::Cpu)?,
            clean: stack_images(&refs(&clean), DType::F32, &Device::Cpu)?,
            ids: pairs.iter().map(|p| p.id.clone()).collect(),
        })
    }

    fn check(&self) -> Result<()> {
        if self.affected.dims() != self.clean.dims() {
            return Err(Error::shape(format!(
                "batch affected {:?} vs clean {:?}",
                self.affected.dims(),
                self.clean.dims()
            )));
        }
        Ok(())
    }

    fn label(&self) -> String {
        format!("batch [{}]", self.ids.join(", "))
    }
}

fn non_finite(batch: &Batch, term: &'static str, value: f64) -> Error {
    log::error!("non-finite {term} = {value} on {}", batch.label());
    Error::item(batch.label(), Error::NonFinite { term, value })
}

/// One discriminator update on `(C, G(A))` with `G(A)` cut from the graph.
pub fn train_discriminator_step(
    batch: &Batch,
    config: &ModelConfig,
    weights: &NetworkWeights,
    opt: &mut Adam,
) -> Result<f64> {
    batch.check()?;
    let fake = generator_forward_tensor(&batch.affected, config, &Frozen(weights))?.output.detach();
    let (real_scores, _) = discriminator_forward_tensor(&batch.clean, config, weights)?;
    let (fake_scores, _) = discriminator_forward_tensor(&fake, config, weights)?;
    let loss = discriminator_loss(&real_scores, &fake_scores)?;
    let value = scalar(&loss)?;
    if !value.is_finite() {
        return Err(non_finite(batch, "d_loss", value));
    }
    let grads = loss.backward()?;
    opt.update(&weights.subset(&[Component::Discriminator]), &grads)?;
    Ok(value)
}

/// One joint generator + enhancer update against the frozen discriminator.
pub fn train_generator_step(
    batch: &Batch,
    config: &ModelConfig,
    weights: &NetworkWeights,
    opt: &mut Adam,
    loss_config: &LossConfig,
    extractor: &PerceptualExtractor,
) -> Result<LossTerms> {
    batch.check()?;
    let generated = generator_forward_tensor(&batch.affected, config, weights)?.output;
    let enhanced = if config.use_enhancer {
        enhancer_forward_tensor(&generated, &batch.affected, config, weights)?.output
    } else {
        generated.clone()
    };
    let frozen = Frozen(weights);
    let (fake_scores, fake_feats) = discriminator_forward_tensor(&generated, config, &frozen)?;
    let (_, real_feats) = discriminator_forward_tensor(&batch.clean, config, &frozen)?;
    let n = loss_config.n_fm;
    let gan = adversarial_g_loss(&fake_scores)?;
    let fm = feature_matching_loss(&real_feats[..n.min(real_feats.len())], &fake_feats[..n.min(fake_feats.len())], loss_config)?;
    let vgg = perceptual_loss(&batch.clean, &enhanced, extractor, loss_config)?;
    let fid = fidelity_loss(&batch.clean, &enhanced)?;
    let terms = LossTerms {
        gan: scalar(&gan)?,
        fm: scalar(&fm)?,
        vgg: scalar(&vgg)?,
        fid: scalar(&fid)?,
    };
    let total = match total_generator_loss_tensor([&gan, &fm, &vgg, &fid], loss_config) {
        Ok(t) => t,
        Err(Error::NonFinite { term, value }) => {
            log::error!("loss terms {terms:?}");
            return Err(non_finite(batch, term, value));
        }
        Err(e) => return Err(e),
    };
    let grads = total.backward()?;
    opt.update(&weights.subset(&[Component::Generator, Component::Enhancer]), &grads)?;
    Ok(terms)
}

/// Early stopping on a metric to maximize. Epochs are 1-based; ties do not count as improvement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    /// 0 while nothing has been observed.
    pub best_epoch: usize,
    pub best_metric: f64,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best_epoch: 0,
            best_metric: f64::NEG_INFINITY,
        }
    }

    /// Records the metric of `epoch` and reports whether it is a new best.
    pub fn observe(&mut self, epoch: usize, metric: f64) -> bool {
        if metric > self.best_metric {
            self.best_metric = metric;
            self.best_epoch = epoch;
            true
        } else {
            false
        }
    }

    pub fn should_stop(&self, epoch: usize) -> bool {
        epoch >= self.best_epoch + self.patience
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopOutcome {
    pub stop_epoch: usize,
    pub best_epoch: usize,
    pub best_metric: f64,
}

/// Runs the stopping rule over a metric stream, capped at `max_epochs`.
///
/// A stream that ends early ends the run at its last epoch.
pub fn simulate_stopping(metrics: impl IntoIterator<Item = f64>, patience: usize, max_epochs: usize) -> StopOutcome {
    let mut rule = EarlyStopping::new(patience);
    let mut stop_epoch = 0;
    for (i, m) in metrics.into_iter().take(max_epochs).enumerate() {
        let epoch = i + 1;
        rule.observe(epoch, m);
        stop_epoch = epoch;
        if rule.should_stop(epoch) {
            break;
        }
    }
    StopOutcome {
        stop_epoch,
        best_epoch: rule.best_epoch,
        best_metric: rule.best_metric,
    }
}

/// One line of the per-epoch log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_loss: LossTerms,
    pub val_ssim: f64,
    #[serde(with = "extended_float")]
    pub val_psnr: f64,
    pub wall_time_s: f64,
    pub improved: bool,
}

pub const OPTIMIZER_FILE: &str = "optimizer.safetensors";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointMeta {
    epoch: usize,
    best_epoch: usize,
    #[serde(with = "extended_float")]
    best_metric: f64,
    opt_g: AdamState,
    opt_d: AdamState,
    history: Vec<EpochRecord>,
}

/// Complete training state: all network weights, both optimizers and the run history.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub weights: NetworkWeights,
    pub opt_g: Adam,
    pub opt_d: Adam,
    /// Completed epochs.
    pub epoch: usize,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub history: Vec<EpochRecord>,
}

impl Checkpoint {
    pub fn fresh(model: ModelConfig, weights: NetworkWeights, train: &TrainConfig) -> Result<Self> {
        weights.check_layout(&model)?;
        Ok(Self {
            model,
            weights,
            opt_g: Adam::new(train),
            opt_d: Adam::new(train),
            epoch: 0,
            best_epoch: 0,
            best_metric: f64::NEG_INFINITY,
            history: Vec::new(),
        })
    }

    /// Copy with independent weight storage.
    pub fn snapshot(&self) -> Result<Self> {
        Ok(Self {
            weights: self.weights.deep_clone()?,
            ..self.clone()
        })
    }

    /// Writes weights, manifest, model configuration, optimizer moments and run metadata into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.weights.save_dir(dir, &self.model)?;
        let mut moments = HashMap::new();
        self.opt_g.to_tensors("opt_g", &mut moments);
        self.opt_d.to_tensors("opt_d", &mut moments);
        let opt_path = dir.join(OPTIMIZER_FILE);
        if moments.is_empty() {
            if opt_path.exists() {
                fs::remove_file(&opt_path).map_err(|e| Error::io(&opt_path, e))?;
            }
        } else {
            candle_core::safetensors::save(&moments, &opt_path)?;
        }
        let meta = CheckpointMeta {
            epoch: self.epoch,
            best_epoch: self.best_epoch,
            best_metric: self.best_metric,
            opt_g: self.opt_g.state(),
            opt_d: self.opt_d.state(),
            history: self.history.clone(),
        };
        write_file(&dir.join(CHECKPOINT_FILE), &to_json(&meta)?)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        if !dir.join(WEIGHTS_FILE).is_file() {
            return Err(Error::Resource(format!("no checkpoint in {}", dir.display())));
        }
        let (weights, model) = NetworkWeights::load_dir(dir)?;
        let meta_path = dir.join(CHECKPOINT_FILE);
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| Error::Serde(e.to_string()))?;
        let opt_path = dir.join(OPTIMIZER_FILE);
        let moments = if opt_path.is_file() {
            candle_core::safetensors::load(&opt_path, &Device::Cpu)?
        } else {
            HashMap::new()
        };
        Ok(Self {
            model,
            weights,
            opt_g: Adam::restore(&meta.opt_g, "opt_g", &moments)?,
            opt_d: Adam::restore(&meta.opt_d, "opt_d", &moments)?,
            epoch: meta.epoch,
            best_epoch: meta.best_epoch,
            best_metric: meta.best_metric,
            history: meta.history,
        })
    }
}

/// Source weights for a new run; the model configurations must match exactly.
pub fn transfer_init(checkpoint: &Checkpoint, target: &ModelConfig) -> Result<NetworkWeights> {
    let fields = checkpoint.model.differing_fields(target);
    if !fields.is_empty() {
        return Err(Error::Incompatible { fields });
    }
    checkpoint.weights.check_layout(target)?;
    checkpoint.weights.deep_clone()
}

/// Everything a run needs besides its data and starting state.
#[derive(Clone, Copy)]
pub struct TrainContext<'a> {
    pub train: &'a TrainConfig,
    pub loss: &'a LossConfig,
    pub extractor: &'a PerceptualExtractor,
}

/// Starting point of a run: the latest state and, when resuming, the best one so far.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub latest: Checkpoint,
    pub best: Option<Checkpoint>,
}

pub const LATEST_DIR: &str = "latest";
pub const BEST_DIR: &str = "best";
pub const EPOCH_LOG: &str = "epochs.jsonl";

impl TrainState {
    pub fn fresh(model: ModelConfig, weights: NetworkWeights, train: &TrainConfig) -> Result<Self> {
        Ok(Self {
            latest: Checkpoint::fresh(model, weights, train)?,
            best: None,
        })
    }

    /// Loads `<dir>/latest` and, if present, `<dir>/best`.
    pub fn resume(dir: &Path) -> Result<Self> {
        let latest = Checkpoint::load(&dir.join(LATEST_DIR))?;
        let best_dir = dir.join(BEST_DIR);
        let best = if best_dir.join(WEIGHTS_FILE).is_file() {
            Some(Checkpoint::load(&best_dir)?)
        } else {
            None
        };
        Ok(Self { latest, best })
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Receives `latest/`, `best/` and the epoch log.
    pub output_dir: Option<PathBuf>,
    /// Return after this epoch as if interrupted.
    pub halt_after: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best-validation checkpoint carrying the full history.
    pub best: Checkpoint,
    pub latest: Checkpoint,
    pub stopped_early: bool,
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

fn append_log(path: &Path, record: &EpochRecord) -> Result<()> {
    let line = serde_json::to_string(record).map_err(|e| Error::Serde(e.to_string()))?;
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

/// The epoch loop; `data(epoch)` yields that epoch's `[0, 1]` training pairs.
pub fn run_training(
    mut data: impl FnMut(usize) -> Result<Vec<ImagePair>>,
    val_set: &[ImagePair],
    ctx: TrainContext<'_>,
    state: TrainState,
    options: &TrainOptions,
) -> Result<TrainOutcome> {
    let TrainState { mut latest, mut best } = state;
    let model = latest.model.clone();
    model.validate()?;
    ctx.train.validate()?;
    ctx.loss.validate(model.discriminator_layers)?;
    if val_set.is_empty() {
        return Err(Error::config("validation split is empty"));
    }
    if let Some(dir) = &options.output_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut rule = EarlyStopping {
        patience: ctx.train.patience,
        best_epoch: latest.best_epoch,
        best_metric: latest.best_metric,
    };
    let multiple = model.spatial_multiple();
    let fingerprint = model.fingerprint();
    let mut stopped_early = latest.epoch > 0 && rule.should_stop(latest.epoch);

    let mut epoch = latest.epoch;
    while !stopped_early && epoch < ctx.train.max_epochs {
        epoch += 1;
        let started = Instant::now();
        let mut pairs = data(epoch)?;
        if pairs.is_empty() {
            return Err(Error::config("training split is empty"));
        }
        let mut rng = epoch_rng(ctx.train.seed, epoch);
        pairs.shuffle(&mut rng);
        let pairs = pairs
            .iter()
            .map(|p| augment(p, &ctx.train.augment, &mut rng).map_err(|e| Error::item(&p.id, e)))
            .collect::<Result<Vec<_>>>()?;

        let (mut d_sum, mut g_sum, mut batches) = (0.0, [0.0; 4], 0usize);
        for chunk in pairs.chunks(ctx.train.batch_size) {
            let batch = Batch::from_pairs(chunk, multiple)?;
            d_sum += train_discriminator_step(&batch, &model, &latest.weights, &mut latest.opt_d)?;
            let terms = train_generator_step(&batch, &model, &latest.weights, &mut latest.opt_g, ctx.loss, ctx.extractor)?;
            for (s, v) in g_sum.iter_mut().zip(terms.as_array()) {
                *s += v;
            }
            batches += 1;
        }

        let restorer = ModelRestorer::new(model.clone(), latest.weights.clone())?;
        let val = evaluate(&restorer, val_set, &fingerprint, false)?;
        let improved = rule.observe(epoch, val.mean_psnr);
        let n = batches as f64;
        let record = EpochRecord {
            epoch,
            d_loss: d_sum / n,
            g_loss: LossTerms {
                gan: g_sum[0] / n,
                fm: g_sum[1] / n,
                vgg: g_sum[2] / n,
                fid: g_sum[3] / n,
            },
            val_ssim: val.mean_ssim,
            val_psnr: val.mean_psnr,
            wall_time_s: started.elapsed().as_secs_f64(),
            improved,
        };
        log::info!(
            "epoch {epoch}: d {:.4}, g {:?}, val PSNR {:.3} dB, SSIM {:.4}{}",
            record.d_loss,
            record.g_loss.as_array(),
            record.val_psnr,
            record.val_ssim,
            if improved { " *" } else { "" }
        );
        latest.epoch = epoch;
        latest.best_epoch = rule.best_epoch;
        latest.best_metric = rule.best_metric;
        latest.history.push(record.clone());

        if improved {
            best = Some(latest.snapshot()?);
        }
        if let Some(dir) = &options.output_dir {
            append_log(&dir.join(EPOCH_LOG), &record)?;
            if improved {
                latest.save(&dir.join(BEST_DIR))?;
            }
            latest.save(&dir.join(LATEST_DIR))?;
        }
        stopped_early = rule.should_stop(epoch);
        if options.halt_after == Some(epoch) {
            break;
        }
    }

    let mut best = match best {
        Some(b) => b,
        None => latest.snapshot()?,
    };
    best.history = latest.history.clone();
    Ok(TrainOutcome {
        best,
        latest,
        stopped_early,
    })
}

/// Trains from `init` on fixed splits and returns the best-validation checkpoint.
pub fn train(
    train_set: &[ImagePair],
    val_set: &[ImagePair],
    model: &ModelConfig,
    train_config: &TrainConfig,
    loss_config: &LossConfig,
    extractor: &PerceptualExtractor,
    init: NetworkWeights,
) -> Result<Checkpoint> {
    if train_set.is_empty() {
        return Err(Error::config("training split is empty"));
    }
    let ctx = TrainContext {
        train: train_config,
        loss: loss_config,
        extractor,
    };
    let state = TrainState::fresh(model.clone(), init, train_config)?;
    Ok(run_training(|_| Ok(train_set.to_vec()), val_set, ctx, state, &TrainOptions::default())?.best)
}

/// Seed of the drops composited onto clean image `index` in `epoch`.
pub fn synthetic_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    seed ^ ((epoch as u64) << 32) ^ index as u64
}

/// Composites fresh drops onto every clean image; epoch 0 is reserved for validation.
pub fn synthetic_pairs(clean: &[(String, ImageTensor)], rain: &RainConfig, epoch: usize) -> Result<Vec<ImagePair>> {
    clean
        .iter()
        .enumerate()
        .map(|(i, (id, img))| {
            let cfg = rain.with_seed(synthetic_seed(rain.seed, epoch, i));
            let (rainy, _) = composite_raindrops(img, &cfg)?;
            ImagePair::new(rainy, img.clone(), id.clone(), Source::Synthetic)
        })
        .collect()
}

/// Trains on clean images corrupted on the fly with synthetic drops.
///
/// Validation uses one fixed corruption of the same clean images.
pub fn pretrain_synthetic(
    clean: &[(String, ImageTensor)],
    rain: &RainConfig,
    ctx: TrainContext<'_>,
    state: TrainState,
    options: &TrainOptions,
) -> Result<TrainOutcome> {
    if clean.is_empty() {
        return Err(Error::config("clean corpus is empty"));
    }
    rain.validate()?;
    let val = synthetic_pairs(clean, rain, 0)?;
    run_training(|epoch| synthetic_pairs(clean, rain, epoch), &val, ctx, state, options)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stopping_example_stream() {
        let mut stream = vec![10.0, 11.0, 12.0];
        stream.extend(std::iter::repeat_n(12.0, 50));
        let out = simulate_stopping(stream, 10, 200);
        assert_eq!((out.stop_epoch, out.best_epoch, out.best_metric), (13, 3, 12.0));
    }

    #[test]
    fn patience_beyond_max_epochs_runs_to_the_end() {
        let out = simulate_stopping(std::iter::repeat(5.0), 30, 20);
        assert_eq!((out.stop_epoch, out.best_epoch), (20, 1));
        let out = simulate_stopping(std::iter::repeat(5.0), 20, 20);
        assert_eq!(out.stop_epoch, 20);
    }

    #[test]
    fn nan_never_improves() {
        let out = simulate_stopping([1.0, f64::NAN, 0.5, f64::NAN], 2, 10);
        assert_eq!((out.stop_epoch, out.best_epoch), (3, 1));
    }

    #[test]
    fn train_config_validation_lists_fields() {
        let cfg = TrainConfig {
            learning_rate: 0.0,
            batch_size: 0,
            beta1: 1.0,
            ..Default::default()
        };
        let msg = cfg.validate().unwrap_err().to_string();
        for f in ["learning_rate", "batch_size", "beta1"] {
            assert!(msg.contains(f), "{msg}");
        }
    }

    #[test]
    fn synthetic_seeds_are_distinct_per_epoch_and_image() {
        let mut seen = std::collections::HashSet::new();
        for e in 0..4 {
            for i in 0..50 {
                assert!(seen.insert(synthetic_seed(7, e, i)));
            }
        }
    }
}
