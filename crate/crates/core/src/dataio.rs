//! Paired corpus ingestion, normalization, splitting, augmentation and padding.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::model::layers::reflect_index;

pub const IMAGE_EXTENSIONS: [&str; 4] = ["png", "tif", "tiff", "bmp"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Real,
    Synthetic,
}

/// An anomaly-affected image and its pixel-aligned clean counterpart.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair {
    pub affected: ImageTensor,
    pub clean: ImageTensor,
    pub id: String,
    pub source: Source,
}

impl ImagePair {
    pub fn new(affected: ImageTensor, clean: ImageTensor, id: impl Into<String>, source: Source) -> Result<Self> {
        let id = id.into();
        affected.ensure_same_shape(&clean, &format!("pair `{id}`: affected and clean differ"))?;
        Ok(Self {
            affected,
            clean,
            id,
            source,
        })
    }
}

/// How affected and clean files find each other.
///
/// A file `<id><affected_suffix>.<ext>` inside `affected_dir` pairs with
/// `<id><clean_suffix>.<ext>` inside `clean_dir`. Suffixes may be empty when the
/// two sides live in separate directories.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairingRule {
    pub affected_dir: PathBuf,
    pub clean_dir: PathBuf,
    pub affected_suffix: String,
    pub clean_suffix: String,
}

impl Default for PairingRule {
    fn default() -> Self {
        Self {
            affected_dir: PathBuf::from("."),
            clean_dir: PathBuf::from("."),
            affected_suffix: "_rain".into(),
            clean_suffix: "_clean".into(),
        }
    }
}

impl PairingRule {
    /// Layout of the public raindrop benchmark: `data/N_rain.png` ↔ `gt/N_clean.png`.
    pub fn qian() -> Self {
        Self {
            affected_dir: "data".into(),
            clean_dir: "gt".into(),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub root: PathBuf,
    #[serde(default)]
    pub pairing: PairingRule,
    pub channels: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub declared_size: Option<usize>,
}

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>, pairing: PairingRule, channels: usize) -> Self {
        Self {
            root: root.into(),
            pairing,
            channels,
            declared_size: None,
        }
    }

    /// Reads a TOML manifest; a relative `root` is resolved against the manifest's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: DatasetManifest = toml::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
        if manifest.root.is_relative() {
            if let Some(parent) = path.parent() {
                manifest.root = parent.join(&manifest.root);
            }
        }
        Ok(manifest)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }
}

/// A decoded image plus the bit depth it was stored with.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedImage {
    pub image: ImageTensor,
    pub bit_depth: u8,
}

fn native_channels(img: &DynamicImage) -> usize {
    if img.color().has_color() {
        3
    } else {
        1
    }
}

/// Decodes an image into `[0, 1]`. 16-bit data is rescaled; alpha is dropped.
pub fn load_image(path: &Path, channels: Option<usize>) -> Result<LoadedImage> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let found = native_channels(&img);
    let wanted = channels.unwrap_or(found);
    if found != wanted {
        return Err(Error::Channel {
            path: path.to_path_buf(),
            expected: wanted,
            found,
        });
    }
    let (w, h) = (img.width() as usize, img.height() as usize);
    let sixteen = img.color().bytes_per_pixel() / img.color().channel_count() > 1;
    let data: Vec<f32> = match (found, sixteen) {
        (1, false) => img.to_luma8().into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
        (1, true) => img.to_luma16().into_raw().into_iter().map(|v| v as f32 / 65535.0).collect(),
        (_, false) => img.to_rgb8().into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
        (_, true) => img.to_rgb16().into_raw().into_iter().map(|v| v as f32 / 65535.0).collect(),
    };
    Ok(LoadedImage {
        image: ImageTensor::new(h, w, found, data)?,
        bit_depth: if sixteen { 16 } else { 8 },
    })
}

/// Writes a `[0, 1]` image losslessly as 8- or 16-bit PNG.
pub fn save_image(path: &Path, image: &ImageTensor, bit_depth: u8) -> Result<()> {
    let (w, h) = (image.width() as u32, image.height() as u32);
    let dynamic = match (image.channels(), bit_depth) {
        (1, 16) => DynamicImage::ImageLuma16(
            ImageBuffer::<Luma<u16>, _>::from_raw(w, h, quantize(image.data(), 65535.0)).expect("buffer size"),
        ),
        (1, _) => DynamicImage::ImageLuma8(
            ImageBuffer::<Luma<u8>, _>::from_raw(w, h, quantize(image.data(), 255.0)).expect("buffer size"),
        ),
        (_, 16) => DynamicImage::ImageRgb16(
            ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, quantize(image.data(), 65535.0)).expect("buffer size"),
        ),
        (_, _) => DynamicImage::ImageRgb8(
            ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, quantize(image.data(), 255.0)).expect("buffer size"),
        ),
    };
    dynamic
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

fn quantize<T: TryFrom<u32>>(data: &[f32], scale: f32) -> Vec<T>
where
    T::Error: std::fmt::Debug,
{
    data.iter()
        .map(|&v| T::try_from((v.clamp(0.0, 1.0) * scale).round() as u32).expect("quantized value fits"))
        .collect()
}

pub fn is_image_file(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Image files directly inside `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_image_file(p))
        .collect();
    files.sort();
    Ok(files)
}

fn ids_with_suffix(files: &[PathBuf], suffix: &str, other_suffix: &str, same_dir: bool) -> (BTreeMap<String, PathBuf>, Vec<PathBuf>) {
    let mut ids = BTreeMap::new();
    let mut rest = Vec::new();
    for f in files {
        let stem = f.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        // in a shared directory the longer suffix wins so "_rain" never claims "x_rain_clean"
        let claimed_by_other = same_dir
            && !other_suffix.is_empty()
            && other_suffix.len() > suffix.len()
            && stem.ends_with(other_suffix);
        match stem.strip_suffix(suffix) {
            Some(id) if !id.is_empty() && !claimed_by_other => {
                ids.insert(id.to_string(), f.clone());
            }
            _ => rest.push(f.clone()),
        }
    }
    (ids, rest)
}

/// Resolves the pairing rule into `(id, affected path, clean path)` triples.
pub fn pair_files(manifest: &DatasetManifest) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    let rule = &manifest.pairing;
    let a_dir = manifest.root.join(&rule.affected_dir);
    let c_dir = manifest.root.join(&rule.clean_dir);
    if !manifest.root.is_dir() {
        return Err(Error::io(
            &manifest.root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset root does not exist"),
        ));
    }
    let same_dir = a_dir == c_dir;
    let a_files = list_images(&a_dir)?;
    let c_files = if same_dir { a_files.clone() } else { list_images(&c_dir)? };
    let (affected, a_rest) = ids_with_suffix(&a_files, &rule.affected_suffix, &rule.clean_suffix, same_dir);
    let (clean, c_rest) = ids_with_suffix(&c_files, &rule.clean_suffix, &rule.affected_suffix, same_dir);

    let mut orphans: Vec<String> = Vec::new();
    for (id, path) in &affected {
        if !clean.contains_key(id) {
            orphans.push(path.display().to_string());
        }
    }
    for (id, path) in &clean {
        if !affected.contains_key(id) {
            orphans.push(path.display().to_string());
        }
    }
    if same_dir {
        let claimed: Vec<&PathBuf> = affected.values().chain(clean.values()).collect();
        orphans.extend(
            a_rest
                .iter()
                .filter(|p| !claimed.contains(p))
                .map(|p| p.display().to_string()),
        );
    } else {
        orphans.extend(a_rest.iter().chain(&c_rest).map(|p| p.display().to_string()));
    }
    if !orphans.is_empty() {
        orphans.sort();
        orphans.dedup();
        return Err(Error::Pairing { orphans });
    }
    Ok(affected
        .into_iter()
        .map(|(id, a)| {
            let c = clean[&id].clone();
            (id, a, c)
        })
        .collect())
}

/// Decodes every pair named by `manifest`, sorted by id.
pub fn load_paired_dataset(manifest: &DatasetManifest) -> Result<Vec<ImagePair>> {
    if manifest.channels != 1 && manifest.channels != 3 {
        return Err(Error::config(format!(
            "channel mode must be 1 or 3, got {}",
            manifest.channels
        )));
    }
    let files = pair_files(manifest)?;
    if let Some(n) = manifest.declared_size {
        if n != files.len() {
            return Err(Error::config(format!(
                "manifest declares {n} pairs, found {}",
                files.len()
            )));
        }
    }
    files
        .into_iter()
        .map(|(id, a, c)| {
            let affected = load_image(&a, Some(manifest.channels))?.image;
            let clean = load_image(&c, Some(manifest.channels))?.image;
            ImagePair::new(affected, clean, id, Source::Real)
        })
        .collect()
}

/// Deterministic shuffled partition into train/validation/test.
pub fn split_dataset<T>(items: Vec<T>, ratios: [f64; 3], seed: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let n = items.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64 * ratios[0]).round() as usize).min(n);
    let n_val = ((n as f64 * ratios[1]).round() as usize).min(n - n_train);

    let mut slots: Vec<Option<T>> = items.into_iter().map(Some).collect();
    let mut take = |range: std::ops::Range<usize>| -> Vec<T> {
        order[range].iter().map(|&i| slots[i].take().expect("each index taken once")).collect()
    };
    let train = take(0..n_train);
    let val = take(n_train..n_train + n_val);
    let test = take(n_train + n_val..n);
    Ok((train, val, test))
}

/// `[0, 1]` → `[-1, 1]`, clamping out-of-range input first.
pub fn normalize(image: &ImageTensor) -> ImageTensor {
    image.map(|v| v.clamp(0.0, 1.0) * 2.0 - 1.0)
}

/// `[-1, 1]` → `[0, 1]`.
pub fn denormalize(image: &ImageTensor) -> ImageTensor {
    image.map(|v| ((v + 1.0) * 0.5).clamp(0.0, 1.0))
}

pub fn normalize_pair(pair: &ImagePair) -> ImagePair {
    ImagePair {
        affected: normalize(&pair.affected),
        clean: normalize(&pair.clean),
        ..pair.clone()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Square crop side; `None` keeps the full frame.
    pub crop: Option<usize>,
    pub hflip: bool,
}

/// Same random crop window and flip decision for both images of the pair.
pub fn augment(pair: &ImagePair, config: &AugmentConfig, rng: &mut impl Rng) -> Result<ImagePair> {
    let (h, w, _) = pair.affected.shape();
    let (ch, cw) = match config.crop {
        Some(s) if s > h || s > w => {
            return Err(Error::config(format!("crop size {s} exceeds image {h}x{w}")))
        }
        Some(s) => (s, s),
        None => (h, w),
    };
    let top = rng.random_range(0..=h - ch);
    let left = rng.random_range(0..=w - cw);
    let flip = config.hflip && rng.random_bool(0.5);
    let apply = |img: &ImageTensor| -> Result<ImageTensor> {
        let out = img.crop(top, left, ch, cw)?;
        Ok(if flip { out.flip_horizontal() } else { out })
    };
    Ok(ImagePair {
        affected: apply(&pair.affected)?,
        clean: apply(&pair.clean)?,
        ..pair.clone()
    })
}

/// Margins added by [`pad_to_multiple`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PadRecord {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
    pub height: usize,
    pub width: usize,
}

impl PadRecord {
    pub fn is_empty(&self) -> bool {
        self.top + self.bottom + self.left + self.right == 0
    }
}

/// Reflection-pads up to the next multiple of `m`, splitting margins around the centre.
pub fn pad_to_multiple(image: &ImageTensor, m: usize) -> (ImageTensor, PadRecord) {
    let (h, w, c) = image.shape();
    let ph = h.div_ceil(m) * m - h;
    let pw = w.div_ceil(m) * m - w;
    let record = PadRecord {
        top: ph / 2,
        bottom: ph - ph / 2,
        left: pw / 2,
        right: pw - pw / 2,
        height: h,
        width: w,
    };
    if record.is_empty() {
        return (image.clone(), record);
    }
    let padded = ImageTensor::from_fn(h + ph, w + pw, c, |y, x, ch| {
        let sy = reflect_index(y as isize - record.top as isize, h);
        let sx = reflect_index(x as isize - record.left as isize, w);
        image.get(sy, sx, ch)
    })
    .expect("padded dimensions are positive");
    (padded, record)
}

pub fn crop_back(padded: &ImageTensor, record: &PadRecord) -> Result<ImageTensor> {
    if record.is_empty() && padded.height() == record.height && padded.width() == record.width {
        return Ok(padded.clone());
    }
    padded.crop(record.top, record.left, record.height, record.width)
}
