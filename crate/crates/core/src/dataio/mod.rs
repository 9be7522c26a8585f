//! Dataset ingestion, synthetic data, image export and run persistence.
//!
//! Loaders normalize pixel data to [0,1] and are deterministic per input
//! file. Recovered images export as binary PGM/PPM so dumps are bit-exact
//! and dependency-free.

pub mod config;

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{de::DeserializeOwned, Serialize};

use crate::error::{Error, Result};
use crate::Tensor;

pub use config::{read_config, RunConfig};

/// Labeled image collection; images are [C,H,W] in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Image shape [C,H,W]; datasets are homogeneous.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images[0].shape();
        [s[0], s[1], s[2]]
    }

    fn check_bounds(&self) -> Result<()> {
        for (i, img) in self.images.iter().enumerate() {
            let (lo, hi) = img
                .data()
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            if lo < 0.0 || hi > 1.0 {
                return Err(Error::Argument(format!(
                    "image {i} not normalized to [0,1]: range [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }
}

// ── IDX (MNIST-style) ────────────────────────────────────────────────────

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

struct ByteCursor<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> ByteCursor<R> {
    fn new(inner: R) -> Self {
        Self { inner, offset: 0 }
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::Format { offset: self.offset, message: message.into() }
    }

    fn read_exact(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        self.inner
            .read_exact(buf)
            .map_err(|_| self.err(format!("truncated while reading {what}")))?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn read_u32_be(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b, what)?;
        Ok(u32::from_be_bytes(b))
    }
}

/// Load an IDX image/label file pair. With `replicate_rgb` the single
/// grayscale channel is copied to three channels.
pub fn load_idx(images_path: &Path, labels_path: &Path, replicate_rgb: bool) -> Result<Dataset> {
    let mut imgs = ByteCursor::new(BufReader::new(File::open(images_path)?));
    let magic = imgs.read_u32_be("image magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let n = imgs.read_u32_be("image count")? as usize;
    let rows = imgs.read_u32_be("row count")? as usize;
    let cols = imgs.read_u32_be("column count")? as usize;
    let mut pixel_buf = vec![0u8; rows * cols];
    let mut images = Vec::with_capacity(n);
    for _ in 0..n {
        imgs.read_exact(&mut pixel_buf, "pixel data")?;
        let gray: Vec<f64> = pixel_buf.iter().map(|&b| b as f64 / 255.0).collect();
        let (channels, data) = if replicate_rgb {
            (3, gray.iter().cycle().take(3 * gray.len()).copied().collect())
        } else {
            (1, gray)
        };
        images.push(Tensor::from_raw(vec![channels, rows, cols], data));
    }

    let mut lbls = ByteCursor::new(BufReader::new(File::open(labels_path)?));
    let magic = lbls.read_u32_be("label magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let n_labels = lbls.read_u32_be("label count")? as usize;
    if n_labels != n {
        return Err(Error::Format {
            offset: 4,
            message: format!("{n} images but {n_labels} labels"),
        });
    }
    let mut label_buf = vec![0u8; n_labels];
    lbls.read_exact(&mut label_buf, "label data")?;
    if let Some(&bad) = label_buf.iter().find(|&&l| l > 9) {
        return Err(Error::Format {
            offset: lbls.offset,
            message: format!("label {bad} outside 0-9"),
        });
    }

    let ds = Dataset {
        images,
        labels: label_buf.into_iter().map(|l| l as usize).collect(),
        num_classes: 10,
    };
    ds.check_bounds()?;
    Ok(ds)
}

// ── CIFAR binary ─────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CifarVariant {
    Cifar10,
    Cifar100,
}

impl CifarVariant {
    fn record_len(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 1 + 3 * 32 * 32,
            CifarVariant::Cifar100 => 2 + 3 * 32 * 32,
        }
    }

    fn num_classes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 10,
            CifarVariant::Cifar100 => 100,
        }
    }
}

/// Load a CIFAR binary batch file (3073-byte records for the 10-class
/// variant, 3074 with a coarse label prefix for the 100-class one; the fine
/// label is used).
pub fn load_cifar_binary(path: &Path, variant: CifarVariant) -> Result<Dataset> {
    let bytes = std::fs::read(path)?;
    let rec = variant.record_len();
    if bytes.is_empty() || bytes.len() % rec != 0 {
        return Err(Error::Format {
            offset: (bytes.len() - bytes.len() % rec) as u64,
            message: format!("file size {} is not a positive multiple of {rec}", bytes.len()),
        });
    }
    let n = bytes.len() / rec;
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let start = i * rec;
        let record = &bytes[start..start + rec];
        let label = match variant {
            CifarVariant::Cifar10 => record[0] as usize,
            CifarVariant::Cifar100 => record[1] as usize, // fine label
        };
        if label >= variant.num_classes() {
            return Err(Error::Format {
                offset: start as u64,
                message: format!("label {label} out of range in record {i}"),
            });
        }
        let pixel_off = rec - 3 * 32 * 32;
        let data: Vec<f64> = record[pixel_off..].iter().map(|&b| b as f64 / 255.0).collect();
        images.push(Tensor::from_raw(vec![3, 32, 32], data));
        labels.push(label);
    }
    let ds = Dataset { images, labels, num_classes: variant.num_classes() };
    ds.check_bounds()?;
    Ok(ds)
}

// ── Synthetic data ───────────────────────────────────────────────────────

/// Class-conditional smooth images: each class gets a low-frequency
/// sinusoidal pattern (distinct frequency pair per class) plus seeded pixel
/// noise, clamped to [0,1]. Labels round-robin over the classes.
pub fn synthetic_dataset(n: usize, shape: [usize; 3], num_classes: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Argument("synthetic dataset needs n >= 1".into()));
    }
    if num_classes == 0 {
        return Err(Error::Argument("need at least one class".into()));
    }
    let [c, h, w] = shape;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Small per-class phase jitter; frequencies alone separate the classes.
    let phases: Vec<f64> = (0..num_classes).map(|_| rng.random_range(0.0..0.4)).collect();

    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % num_classes;
        let fx = 1.0 + (class % 4) as f64;
        let fy = 1.0 + (class / 4) as f64;
        let phase = phases[class] + class as f64 * 0.7;
        let mut data = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let t = std::f64::consts::TAU
                        * (fx * x as f64 / w as f64 + fy * y as f64 / h as f64)
                        + phase
                        + ch as f64 * 0.5;
                    let base = 0.5 + 0.35 * t.sin();
                    let noise: f64 = rng.random_range(-0.08..0.08);
                    data.push((base + noise).clamp(0.0, 1.0));
                }
            }
        }
        images.push(Tensor::from_raw(vec![c, h, w], data));
        labels.push(class);
    }
    let ds = Dataset { images, labels, num_classes };
    ds.check_bounds()?;
    Ok(ds)
}

// ── Image export ─────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    /// Binary P5, one channel.
    Pgm,
    /// Binary P6, three channels.
    Ppm,
}

/// Write a [C,H,W] image in [0,1] as an 8-bit binary PGM/PPM file.
/// Quantization rounds half-up.
pub fn export_image(image: &Tensor, path: &Path, format: ImageFormat) -> Result<()> {
    let shape = image.shape();
    if shape.len() != 3 {
        return Err(Error::Dimension(format!("expected [C,H,W] image, got {shape:?}")));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let expected_channels = match format {
        ImageFormat::Pgm => 1,
        ImageFormat::Ppm => 3,
    };
    if c != expected_channels {
        return Err(Error::Argument(format!(
            "{format:?} needs {expected_channels} channel(s), image has {c}"
        )));
    }
    if !image.all_finite() || image.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::Argument("image must lie in [0,1] for export".into()));
    }

    let quant = |v: f64| -> u8 { (v * 255.0 + 0.5).floor().min(255.0) as u8 };
    let mut out = Vec::with_capacity(64 + c * h * w);
    let tag = match format {
        ImageFormat::Pgm => "P5",
        ImageFormat::Ppm => "P6",
    };
    out.extend_from_slice(format!("{tag}\n{w} {h}\n255\n").as_bytes());
    // Interleave channels pixel-by-pixel (planar source).
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out.push(quant(image.data()[(ch * h + y) * w + x]));
            }
        }
    }
    let mut f = File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

// ── Run persistence ──────────────────────────────────────────────────────

/// Append serialized records to a JSON-lines file, one per line.
pub fn append_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    for r in records {
        let line = serde_json::to_string(r)?;
        f.write_all(line.as_bytes())?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

/// Read a JSON-lines file, skipping a trailing partial line (a crashed
/// writer leaves at most one).
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    let mut lines = f.lines().peekable();
    while let Some(line) = lines.next() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(v) => out.push(v),
            Err(e) => {
                if lines.peek().is_none() {
                    break; // partial final line
                }
                return Err(e.into());
            }
        }
    }
    Ok(out)
}

/// Write a CSV summary: header plus pre-formatted rows.
pub fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let mut f = File::create(path)?;
    writeln!(f, "{header}")?;
    for row in rows {
        writeln!(f, "{row}")?;
    }
    Ok(())
}
