//! Dataset evaluation, latency benchmarking and the architecture ablation.
//!
//! The latency benchmark assumes exclusive use of the machine; concurrent
//! load skews every sample.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, Variant};
use crate::dataio::{denormalize, normalize, ImagePair};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::losses::LossConfig;
use crate::metrics::{extended_float, finite_mean, psnr, ssim};
use crate::model;
use crate::perceptual::PerceptualExtractor;
use crate::train::{train, TrainConfig};
use crate::weights::{count_parameters, init_weights, write_file, Component, Frozen, NetworkWeights};

/// Maps an affected `[0, 1]` image to its restored `[0, 1]` estimate.
pub trait Restorer {
    fn restore(&self, affected: &ImageTensor) -> Result<ImageTensor>;
}

/// Returns its input; evaluating it yields the input baseline.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityRestorer;

impl Restorer for IdentityRestorer {
    fn restore(&self, affected: &ImageTensor) -> Result<ImageTensor> {
        Ok(affected.clone())
    }
}

/// Normalize, G (+E) with read-only weights, denormalize.
#[derive(Debug, Clone)]
pub struct ModelRestorer {
    pub config: ModelConfig,
    pub weights: NetworkWeights,
}

impl ModelRestorer {
    pub fn new(config: ModelConfig, weights: NetworkWeights) -> Result<Self> {
        weights.check_layout(&config)?;
        Ok(Self { config, weights })
    }
}

impl Restorer for ModelRestorer {
    fn restore(&self, affected: &ImageTensor) -> Result<ImageTensor> {
        let y = model::restore(&normalize(affected), &self.config, &Frozen(&self.weights))?;
        Ok(denormalize(&y))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub ssim: f64,
    #[serde(with = "extended_float")]
    pub psnr: f64,
    pub input_ssim: f64,
    #[serde(with = "extended_float")]
    pub input_psnr: f64,
}

/// Per-image and mean SSIM / PSNR of a restorer and of the unrestored input.
///
/// PSNR means leave out infinite values (identical images) and report how many were left out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub fingerprint: String,
    pub luma: bool,
    pub count: usize,
    pub mean_ssim: f64,
    #[serde(with = "extended_float")]
    pub mean_psnr: f64,
    pub psnr_infinite: usize,
    pub input_mean_ssim: f64,
    #[serde(with = "extended_float")]
    pub input_mean_psnr: f64,
    pub input_psnr_infinite: usize,
    pub records: Vec<ImageRecord>,
}

impl MetricsReport {
    pub fn from_records(records: Vec<ImageRecord>, fingerprint: impl Into<String>, luma: bool) -> Self {
        let mean = |f: fn(&ImageRecord) -> f64| records.iter().map(f).sum::<f64>() / records.len() as f64;
        let (mean_psnr, psnr_infinite) = finite_mean(&records.iter().map(|r| r.psnr).collect::<Vec<_>>());
        let (input_mean_psnr, input_psnr_infinite) =
            finite_mean(&records.iter().map(|r| r.input_psnr).collect::<Vec<_>>());
        Self {
            fingerprint: fingerprint.into(),
            luma,
            count: records.len(),
            mean_ssim: mean(|r| r.ssim),
            mean_psnr,
            psnr_infinite,
            input_mean_ssim: mean(|r| r.input_ssim),
            input_mean_psnr,
            input_psnr_infinite,
            records,
        }
    }

    /// One CSV row per image.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,ssim,psnr,input_ssim,input_psnr\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{:.6},{:.4},{:.6},{:.4}",
                csv_field(&r.id),
                r.ssim,
                r.psnr,
                r.input_ssim,
                r.input_psnr
            );
        }
        out
    }

    pub fn summary(&self) -> String {
        format!(
            "images: {}\nmodel  SSIM {:.4}  PSNR {:.2} dB\ninput  SSIM {:.4}  PSNR {:.2} dB\nconfig {}{}\n",
            self.count,
            self.mean_ssim,
            self.mean_psnr,
            self.input_mean_ssim,
            self.input_mean_psnr,
            self.fingerprint,
            if self.luma { " (luma)" } else { "" }
        )
    }

    /// Writes `metrics.csv`, `metrics.json` and `summary.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_file(&dir.join("metrics.csv"), &self.to_csv())?;
        write_file(&dir.join("metrics.json"), &to_json(self)?)?;
        write_file(&dir.join("summary.txt"), &self.summary())
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub(crate) fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Serde(e.to_string()))
}

fn quality(restored: &ImageTensor, clean: &ImageTensor, luma: bool) -> Result<(f64, f64)> {
    let (a, b) = if luma && clean.channels() == 3 {
        (restored.to_luma(), clean.to_luma())
    } else {
        (restored.clone(), clean.clone())
    };
    Ok((ssim(&a, &b)?, psnr(&a, &b, 1.0)?))
}

/// Restores every affected image and scores it, and the raw input, against the clean image.
///
/// Images are in `[0, 1]`. With `luma`, colour images are scored on their BT.601 luma.
pub fn evaluate(restorer: &dyn Restorer, pairs: &[ImagePair], fingerprint: &str, luma: bool) -> Result<MetricsReport> {
    if pairs.is_empty() {
        return Err(Error::config("evaluation set is empty"));
    }
    let records = pairs
        .iter()
        .map(|p| {
            let run = || -> Result<ImageRecord> {
                let restored = restorer.restore(&p.affected)?;
                let (ssim, psnr) = quality(&restored, &p.clean, luma)?;
                let (input_ssim, input_psnr) = quality(&p.affected, &p.clean, luma)?;
                Ok(ImageRecord {
                    id: p.id.clone(),
                    ssim,
                    psnr,
                    input_ssim,
                    input_psnr,
                })
            };
            run().map_err(|e| Error::item(&p.id, e))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport::from_records(records, fingerprint, luma))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    /// Post-warmup wall times in seconds.
    pub samples: Vec<f64>,
    pub median: f64,
    pub mean: f64,
    /// Sample standard deviation (zero for a single run).
    pub std: f64,
    pub warmup: usize,
    /// `(height, width, channels)`.
    pub dims: (usize, usize, usize),
    pub device: String,
}

impl LatencyStats {
    pub fn from_samples(samples: Vec<f64>, warmup: usize, dims: (usize, usize, usize), device: &str) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::config("latency statistics need at least one run"));
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let std = if samples.len() > 1 {
            (samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len() % 2 == 1 {
            sorted[mid]
        } else {
            (sorted[mid - 1] + sorted[mid]) / 2.0
        };
        Ok(Self {
            samples,
            median,
            mean,
            std,
            warmup,
            dims,
            device: device.to_string(),
        })
    }

    /// One CSV row per timed run.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("run,seconds\n");
        for (i, s) in self.samples.iter().enumerate() {
            let _ = writeln!(out, "{i},{s:.9}");
        }
        out
    }

    pub fn summary(&self) -> String {
        let (h, w, c) = self.dims;
        format!(
            "{w}x{h}x{c} on {}: median {:.4} s, mean {:.4} s, std {:.4} s over {} runs ({} warmup)\n",
            self.device,
            self.median,
            self.mean,
            self.std,
            self.samples.len(),
            self.warmup
        )
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_file(&dir.join("latency.csv"), &self.to_csv())?;
        write_file(&dir.join("latency.json"), &to_json(self)?)?;
        write_file(&dir.join("summary.txt"), &self.summary())
    }
}

pub const DEVICE_LABEL: &str = "cpu";

/// Times single-image restorations of a fixed random input after `warmup` untimed runs.
pub fn benchmark_latency(
    restorer: &dyn Restorer,
    dims: (usize, usize, usize),
    runs: usize,
    warmup: usize,
) -> Result<LatencyStats> {
    if runs == 0 {
        return Err(Error::config("runs must be at least 1"));
    }
    let (h, w, c) = dims;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let input = ImageTensor::from_fn(h, w, c, |_, _, _| rng.random::<f32>())?;
    for _ in 0..warmup {
        restorer.restore(&input)?;
    }
    let mut samples = Vec::with_capacity(runs);
    for _ in 0..runs {
        let t = Instant::now();
        let out = restorer.restore(&input)?;
        samples.push(t.elapsed().as_secs_f64());
        std::hint::black_box(out);
    }
    LatencyStats::from_samples(samples, warmup, dims, DEVICE_LABEL)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub fingerprint: String,
    /// Generator plus enhancer parameters.
    pub parameters: usize,
    pub ssim: f64,
    #[serde(with = "extended_float")]
    pub psnr: f64,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub input_ssim: f64,
    #[serde(with = "extended_float")]
    pub input_psnr: f64,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,fingerprint,parameters,ssim,psnr,best_epoch\n");
        let _ = writeln!(out, "Input,,0,{:.6},{:.4},0", self.input_ssim, self.input_psnr);
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{:.4},{}",
                r.variant, r.fingerprint, r.parameters, r.ssim, r.psnr, r.best_epoch
            );
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = format!("{:<8}{:>8}{:>10}\n", "", "SSIM", "PSNR");
        let _ = writeln!(out, "{:<8}{:>8.3}{:>10.2}", "Input", self.input_ssim, self.input_psnr);
        for r in &self.rows {
            let _ = writeln!(out, "{:<8}{:>8.3}{:>10.2}", r.variant.label(), r.ssim, r.psnr);
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_file(&dir.join("ablation.csv"), &self.to_csv())?;
        write_file(&dir.join("ablation.json"), &to_json(self)?)?;
        write_file(&dir.join("summary.txt"), &self.summary())
    }
}

/// Data shared by every ablation variant.
pub struct AblationData<'a> {
    pub train: &'a [ImagePair],
    pub val: &'a [ImagePair],
    pub test: &'a [ImagePair],
}

/// Trains G, G+E and G+E+A from the same seed on the same splits and scores each on the test split.
pub fn run_ablation(
    data: &AblationData<'_>,
    base: &ModelConfig,
    train_config: &TrainConfig,
    loss_config: &LossConfig,
    extractor: &PerceptualExtractor,
    luma: bool,
) -> Result<AblationReport> {
    let baseline = evaluate(&IdentityRestorer, data.test, "input", luma)?;
    let mut rows = Vec::with_capacity(Variant::ALL.len());
    for variant in Variant::ALL {
        let config = variant.apply(base);
        log::info!("ablation: training {variant} ({})", config.fingerprint());
        let init = init_weights(&config, train_config.seed)?;
        let best = train(data.train, data.val, &config, train_config, loss_config, extractor, init)?;
        let restorer = ModelRestorer::new(config.clone(), best.weights.clone())?;
        let report = evaluate(&restorer, data.test, &config.fingerprint(), luma)?;
        rows.push(AblationRow {
            variant,
            fingerprint: config.fingerprint(),
            parameters: count_parameters(&best.weights.subset(&[Component::Generator, Component::Enhancer])),
            ssim: report.mean_ssim,
            psnr: report.mean_psnr,
            best_epoch: best.best_epoch,
        });
    }
    Ok(AblationReport {
        input_ssim: baseline.mean_ssim,
        input_psnr: baseline.mean_psnr,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::Source;

    fn pair(id: &str, shift: f32) -> ImagePair {
        let clean = ImageTensor::from_fn(16, 16, 1, |y, x, _| ((x * 3 + y) % 11) as f32 / 10.0).unwrap();
        let affected = clean.map(|v| (v + shift).clamp(0.0, 1.0));
        ImagePair::new(affected, clean, id, Source::Real).unwrap()
    }

    #[test]
    fn identity_equals_input_baseline() {
        let pairs = vec![pair("a", 0.1), pair("b", 0.05), pair("c", 0.0)];
        let r = evaluate(&IdentityRestorer, &pairs, "id", false).unwrap();
        assert_eq!(r.count, 3);
        assert_eq!(r.records.len(), 3);
        for rec in &r.records {
            assert_eq!(rec.ssim, rec.input_ssim);
            assert_eq!(rec.psnr.to_bits(), rec.input_psnr.to_bits());
        }
        assert_eq!(r.mean_ssim, r.input_mean_ssim);
        assert_eq!(r.psnr_infinite, 1);
        let finite: Vec<f64> = r.records.iter().map(|x| x.psnr).filter(|p| p.is_finite()).collect();
        assert_eq!(r.mean_psnr, finite.iter().sum::<f64>() / 2.0);
    }

    #[test]
    fn empty_set_is_rejected() {
        assert!(matches!(evaluate(&IdentityRestorer, &[], "x", false), Err(Error::Config(_))));
    }

    #[test]
    fn failing_item_is_named() {
        struct Broken;
        impl Restorer for Broken {
            fn restore(&self, _: &ImageTensor) -> Result<ImageTensor> {
                Err(Error::Domain("boom".into()))
            }
        }
        match evaluate(&Broken, &[pair("bad", 0.1)], "x", false) {
            Err(Error::Item { item, .. }) => assert_eq!(item, "bad"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn report_json_round_trips_infinity() {
        let r = evaluate(&IdentityRestorer, &[pair("same", 0.0)], "id", false).unwrap();
        let json = to_json(&r).unwrap();
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.mean_psnr, f64::INFINITY);
        assert_eq!(back.records[0].psnr, f64::INFINITY);
    }

    #[test]
    fn latency_stats_are_recomputable() {
        let s = LatencyStats::from_samples(vec![3.0, 1.0, 2.0, 10.0], 5, (4, 4, 1), "cpu").unwrap();
        assert_eq!(s.median, 2.5);
        assert_eq!(s.mean, 4.0);
        let var = (1.0 + 9.0 + 4.0 + 36.0) / 3.0;
        assert!((s.std - f64::sqrt(var)).abs() < 1e-12);
    }

    #[test]
    fn benchmark_counts_only_timed_runs() {
        let s = benchmark_latency(&IdentityRestorer, (8, 8, 3), 7, 3).unwrap();
        assert_eq!(s.samples.len(), 7);
        assert_eq!(s.warmup, 3);
        assert!(benchmark_latency(&IdentityRestorer, (8, 8, 3), 0, 3).is_err());
    }
}
