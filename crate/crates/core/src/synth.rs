//! Synthetic out-of-focus adherent raindrops.
//!
//! Each drop is a soft vertical ellipse that shows a magnified, vertically
//! inverted view of the scene behind it. Defocus is modelled by averaging
//! several randomly shifted copies of the drop (fill and alpha alike), and a
//! random subset of drops is brightened.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{list_images, load_image, save_image};
use crate::error::{Error, Result};
use crate::image::ImageTensor;

/// Width of the soft boundary as a fraction of the radius.
pub const EDGE_SOFTNESS: f64 = 0.15;

/// Geometry and photometry of a single drop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropSpec {
    /// `(x, y)` in pixels.
    pub center: (f64, f64),
    pub radius: f64,
    /// Vertical stretch, ≥ 1.
    pub elongation: f64,
    /// Background sampling scale `k`.
    pub magnification: f64,
    pub shift_count: usize,
    pub shift_magnitude: f64,
    /// Intensity gain, exactly 1 for drops that are not brightened.
    pub brightness: f64,
}

impl DropSpec {
    fn outer_extent(&self) -> (f64, f64) {
        let d = 1.0 + EDGE_SOFTNESS / 2.0;
        (self.radius * d, self.radius * self.elongation * d)
    }

    /// Normalized elliptical distance of `(x, y)` from the centre.
    fn distance(&self, x: f64, y: f64) -> f64 {
        let dx = (x - self.center.0) / self.radius;
        let dy = (y - self.center.1) / (self.radius * self.elongation);
        (dx * dx + dy * dy).sqrt()
    }

    /// Alpha as a function of normalized distance.
    pub fn profile(d: f64) -> f64 {
        let (lo, hi) = (1.0 - EDGE_SOFTNESS / 2.0, 1.0 + EDGE_SOFTNESS / 2.0);
        if d <= lo {
            1.0
        } else if d >= hi {
            0.0
        } else {
            let t = (d - lo) / (hi - lo);
            1.0 - t * t * (3.0 - 2.0 * t)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RainConfig {
    /// Inclusive range of drops per image.
    pub drops_per_image: (usize, usize),
    pub radius_range: (f64, f64),
    pub elongation_range: (f64, f64),
    pub magnification_range: (f64, f64),
    /// Inclusive range of shifted copies `K`.
    pub shift_count_range: (usize, usize),
    pub shift_magnitude_range: (f64, f64),
    /// Probability `q` that a drop is brightened.
    pub brightness_probability: f64,
    pub brightness_range: (f64, f64),
    pub seed: u64,
}

impl Default for RainConfig {
    fn default() -> Self {
        Self {
            drops_per_image: (10, 40),
            radius_range: (4.0, 24.0),
            elongation_range: (1.0, 1.4),
            magnification_range: (1.2, 2.0),
            shift_count_range: (4, 10),
            shift_magnitude_range: (1.0, 4.0),
            brightness_probability: 0.3,
            brightness_range: (1.05, 1.3),
            seed: 0,
        }
    }
}

impl RainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut check = |name: &str, (lo, hi): (f64, f64), min: f64| {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi || lo < min {
                problems.push(format!("{name} ({lo}, {hi}) must be finite, ordered and ≥ {min}"));
            }
        };
        check("radius_range", self.radius_range, f64::MIN_POSITIVE);
        check("elongation_range", self.elongation_range, 1.0);
        check("magnification_range", self.magnification_range, 1.0);
        check("shift_magnitude_range", self.shift_magnitude_range, 0.0);
        check("brightness_range", self.brightness_range, 1.0);
        if self.drops_per_image.0 > self.drops_per_image.1 {
            problems.push(format!("drops_per_image {:?} is empty", self.drops_per_image));
        }
        let (k0, k1) = self.shift_count_range;
        if k0 == 0 || k0 > k1 {
            problems.push(format!("shift_count_range ({k0}, {k1}) must be ordered and ≥ 1"));
        }
        if !(0.0..=1.0).contains(&self.brightness_probability) {
            problems.push(format!(
                "brightness_probability {} must lie in [0, 1]",
                self.brightness_probability
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Draws a drop population for a `width × height` frame.
pub fn sample_drop_field(config: &RainConfig, width: usize, height: usize, rng: &mut impl Rng) -> Vec<DropSpec> {
    let (lo, hi) = config.drops_per_image;
    let count = rng.random_range(lo..=hi);
    (0..count)
        .map(|_| {
            let center = (
                rng.random_range(0.0..width as f64),
                rng.random_range(0.0..height as f64),
            );
            let radius = uniform(rng, config.radius_range);
            let elongation = uniform(rng, config.elongation_range);
            let magnification = uniform(rng, config.magnification_range);
            let shift_count = rng.random_range(config.shift_count_range.0..=config.shift_count_range.1);
            let shift_magnitude = uniform(rng, config.shift_magnitude_range);
            let brightness = if rng.random_bool(config.brightness_probability) {
                uniform(rng, config.brightness_range)
            } else {
                1.0
            };
            DropSpec {
                center,
                radius,
                elongation,
                magnification,
                shift_count,
                shift_magnitude,
                brightness,
            }
        })
        .collect()
}

/// Single-channel coverage map in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl AlphaMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    /// Fraction of pixels with non-zero coverage.
    pub fn coverage(&self) -> f64 {
        self.data.iter().filter(|&&v| v > 0.0).count() as f64 / self.data.len() as f64
    }

    pub fn to_image(&self) -> ImageTensor {
        ImageTensor::new(self.height, self.width, 1, self.data.clone()).expect("alpha map is non-empty")
    }
}

/// Rendered alpha of one drop over the full frame.
pub fn render_drop_mask(drop: &DropSpec, width: usize, height: usize) -> AlphaMap {
    let mut mask = AlphaMap::zeros(width, height);
    let region = Region::around(drop, 0.0, width, height);
    for y in region.top..region.bottom {
        for x in region.left..region.right {
            mask.data[y * width + x] = DropSpec::profile(drop.distance(x as f64, y as f64)) as f32;
        }
    }
    mask
}

/// Axis-aligned pixel window, half-open.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub top: usize,
    pub left: usize,
    pub bottom: usize,
    pub right: usize,
}

impl Region {
    /// Bounding box of the drop's support dilated by `margin`, clipped to the frame.
    pub fn around(drop: &DropSpec, margin: f64, width: usize, height: usize) -> Self {
        let (ex, ey) = drop.outer_extent();
        let clip = |v: f64, n: usize| v.clamp(0.0, n as f64) as usize;
        Self {
            left: clip((drop.center.0 - ex - margin).floor(), width),
            right: clip((drop.center.0 + ex + margin).ceil() + 1.0, width),
            top: clip((drop.center.1 - ey - margin).floor(), height),
            bottom: clip((drop.center.1 + ey + margin).ceil() + 1.0, height),
        }
    }

    pub fn height(&self) -> usize {
        self.bottom - self.top
    }

    pub fn width(&self) -> usize {
        self.right - self.left
    }

    pub fn is_empty(&self) -> bool {
        self.height() == 0 || self.width() == 0
    }
}

/// A rectangular piece of an image positioned in frame coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub region: Region,
    pub image: ImageTensor,
}

#[inline]
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + (b - a) * t
}

/// Bilinear sample with coordinates clamped to the image.
fn sample_clamped(img: &ImageTensor, x: f64, y: f64, c: usize) -> f32 {
    let x = x.clamp(0.0, (img.width() - 1) as f64);
    let y = y.clamp(0.0, (img.height() - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(img.width() - 1), (y0 + 1).min(img.height() - 1));
    let (fx, fy) = ((x - x0 as f64) as f32, (y - y0 as f64) as f32);
    let top = lerp(img.get(y0, x0, c), img.get(y0, x1, c), fx);
    let bottom = lerp(img.get(y1, x0, c), img.get(y1, x1, c), fx);
    lerp(top, bottom, fy)
}

fn refract_region(background: &ImageTensor, drop: &DropSpec, region: Region) -> Patch {
    let (cx, cy) = drop.center;
    let k = drop.magnification;
    let image = ImageTensor::from_fn(region.height(), region.width(), background.channels(), |y, x, c| {
        let px = (region.left + x) as f64;
        let py = (region.top + y) as f64;
        sample_clamped(background, cx + k * (px - cx), cy - k * (py - cy), c)
    })
    .expect("non-empty region");
    Patch { region, image }
}

/// Inverted, magnified view of the background over the drop's bounding box.
///
/// Returns `None` when the drop lies entirely outside the frame.
pub fn refract_fill(background: &ImageTensor, drop: &DropSpec) -> Option<Patch> {
    let region = Region::around(drop, 0.0, background.width(), background.height());
    (!region.is_empty()).then(|| refract_region(background, drop, region))
}

/// `K` translations with magnitude at most `s`, uniformly distributed over the disc.
pub fn draw_shifts(count: usize, magnitude: f64, rng: &mut impl Rng) -> Vec<(f64, f64)> {
    (0..count.max(1))
        .map(|_| {
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let r = magnitude * rng.random::<f64>().sqrt();
            (r * theta.cos(), r * theta.sin())
        })
        .collect()
}

/// Mean of translated copies, sampling with edge replication.
pub fn shift_average(img: &ImageTensor, shifts: &[(f64, f64)]) -> ImageTensor {
    let mut out = img.clone();
    for y in 0..img.height() {
        for x in 0..img.width() {
            for c in 0..img.channels() {
                // running mean keeps constants exact
                let mut mean = 0.0f32;
                for (i, (dx, dy)) in shifts.iter().enumerate() {
                    let v = sample_clamped(img, x as f64 - dx, y as f64 - dy, c);
                    mean += (v - mean) / (i + 1) as f32;
                }
                out.set(y, x, c, mean);
            }
        }
    }
    out
}

/// Out-of-focus blur by averaging `K` copies shifted in random directions.
pub fn defocus(fill: &ImageTensor, shift_count: usize, shift_magnitude: f64, rng: &mut impl Rng) -> ImageTensor {
    shift_average(fill, &draw_shifts(shift_count, shift_magnitude, rng))
}

/// Composites one drop over `out` and accumulates its coverage into `union`.
fn composite_drop(clean: &ImageTensor, drop: &DropSpec, out: &mut ImageTensor, union: &mut AlphaMap, rng: &mut impl Rng) {
    let (w, h) = (clean.width(), clean.height());
    let shifts = draw_shifts(drop.shift_count, drop.shift_magnitude, rng);
    let region = Region::around(drop, drop.shift_magnitude.ceil() + 1.0, w, h);
    if region.is_empty() {
        return;
    }
    let fill = refract_region(clean, drop, region);
    let alpha = ImageTensor::from_fn(region.height(), region.width(), 1, |y, x, _| {
        DropSpec::profile(drop.distance((region.left + x) as f64, (region.top + y) as f64)) as f32
    })
    .expect("non-empty region");
    let fill = shift_average(&fill.image, &shifts);
    let alpha = shift_average(&alpha, &shifts);
    let gain = drop.brightness as f32;
    for y in 0..region.height() {
        for x in 0..region.width() {
            let a = alpha.get(y, x, 0);
            // an alpha too small to move 1 - a would blend yet leave the union at 0
            if 1.0 - a >= 1.0 {
                continue;
            }
            let (fy, fx) = (region.top + y, region.left + x);
            for c in 0..clean.channels() {
                let v = (fill.get(y, x, c) * gain).clamp(0.0, 1.0);
                let prev = out.get(fy, fx, c);
                out.set(fy, fx, c, (prev + (v - prev) * a).clamp(0.0, 1.0));
            }
            let u = &mut union.data[fy * w + fx];
            *u = 1.0 - (1.0 - *u) * (1.0 - a);
        }
    }
}

/// Composites a random drop field over `clean` (values in `[0, 1]`).
///
/// Pixels where the returned mask is zero are bit-identical to the input.
pub fn composite_raindrops(clean: &ImageTensor, config: &RainConfig) -> Result<(ImageTensor, AlphaMap)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let drops = sample_drop_field(config, clean.width(), clean.height(), &mut rng);
    Ok(composite_drops(clean, &drops, &mut rng))
}

/// Composites a given drop list; later drops blend over earlier ones.
pub fn composite_drops(clean: &ImageTensor, drops: &[DropSpec], rng: &mut impl Rng) -> (ImageTensor, AlphaMap) {
    let mut out = clean.clone();
    let mut union = AlphaMap::zeros(clean.width(), clean.height());
    for drop in drops {
        composite_drop(clean, drop, &mut out, &mut union, rng);
    }
    (out, union)
}

/// Seeded clean test scene: smooth gradients, a few sinusoids and flat rectangles.
pub fn procedural_scene(height: usize, width: usize, channels: usize, seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: Vec<f32> = (0..channels).map(|_| rng.random_range(0.2..0.8)).collect();
    let grad: Vec<(f32, f32)> = (0..channels)
        .map(|_| (rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)))
        .collect();
    let waves: Vec<(f32, f32, f32, f32)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.02..0.15),
                rng.random_range(0.0..std::f32::consts::TAU),
                rng.random_range(0.0..std::f32::consts::TAU),
                rng.random_range(0.03..0.12),
            )
        })
        .collect();
    let rects: Vec<(usize, usize, usize, usize, Vec<f32>)> = (0..4)
        .map(|_| {
            let y0 = rng.random_range(0..height);
            let x0 = rng.random_range(0..width);
            let h = rng.random_range(1..=height / 3 + 1);
            let w = rng.random_range(1..=width / 3 + 1);
            let colour = (0..channels).map(|_| rng.random_range(0.0..1.0)).collect();
            (y0, x0, y0 + h, x0 + w, colour)
        })
        .collect();
    ImageTensor::from_fn(height, width, channels, |y, x, c| {
        if let Some(r) = rects.iter().rev().find(|r| y >= r.0 && x >= r.1 && y < r.2 && x < r.3) {
            return r.4[c];
        }
        let (u, v) = (x as f32 / width as f32, y as f32 / height as f32);
        let mut value = base[c] + grad[c].0 * (u - 0.5) + grad[c].1 * (v - 0.5);
        for &(freq, angle, phase, amp) in &waves {
            let t = (x as f32 * angle.cos() + y as f32 * angle.sin()) * freq;
            value += amp * (t * std::f32::consts::TAU + phase + c as f32).sin();
        }
        value.clamp(0.0, 1.0)
    })
    .expect("scene dimensions are positive")
}

/// Per-image seed used by corpus synthesis.
pub fn derived_seed(seed: u64, index: usize) -> u64 {
    seed ^ index as u64
}

/// One line of the synthesis manifest. Paths are file names relative to the
/// input and output directories so the corpus can be moved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthRecord {
    pub source: PathBuf,
    pub seed: u64,
    pub drops: usize,
    pub rainy: PathBuf,
    pub clean: PathBuf,
    pub mask: PathBuf,
}

pub const SYNTH_MANIFEST: &str = "manifest.jsonl";
/// Masks live one level down so `output_dir` itself is a clean `_rain`/`_clean` corpus.
pub const MASK_DIR: &str = "masks";

/// Corrupts every image in `input_dir`, writing `<stem>_rain.png`,
/// `<stem>_clean.png`, `masks/<stem>_mask.png` and a JSON-lines manifest to `output_dir`.
pub fn synthesize_corpus(input_dir: &Path, config: &RainConfig, output_dir: &Path) -> Result<Vec<SynthRecord>> {
    config.validate()?;
    let inputs = list_images(input_dir)?;
    if inputs.is_empty() {
        return Err(Error::Resource(format!("no images found in {}", input_dir.display())));
    }
    let mask_dir = output_dir.join(MASK_DIR);
    fs::create_dir_all(&mask_dir).map_err(|e| Error::io(&mask_dir, e))?;
    let mut records = Vec::with_capacity(inputs.len());
    for (i, path) in inputs.iter().enumerate() {
        let clean = load_image(path, None)?.image;
        let seed = derived_seed(config.seed, i);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let drops = sample_drop_field(config, clean.width(), clean.height(), &mut rng);
        let (rainy, mask) = composite_drops(&clean, &drops, &mut rng);
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
        let record = SynthRecord {
            source: path.file_name().map(PathBuf::from).unwrap_or_default(),
            seed,
            drops: drops.len(),
            rainy: format!("{stem}_rain.png").into(),
            clean: format!("{stem}_clean.png").into(),
            mask: Path::new(MASK_DIR).join(format!("{stem}_mask.png")),
        };
        save_image(&output_dir.join(&record.rainy), &rainy, 8)?;
        save_image(&output_dir.join(&record.clean), &clean, 8)?;
        save_image(&output_dir.join(&record.mask), &mask.to_image(), 8)?;
        records.push(record);
    }
    let manifest_path = output_dir.join(SYNTH_MANIFEST);
    let mut file = fs::File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    for r in &records {
        let line = serde_json::to_string(r).map_err(|e| Error::Serde(e.to_string()))?;
        writeln!(file, "{line}").map_err(|e| Error::io(&manifest_path, e))?;
    }
    Ok(records)
}
