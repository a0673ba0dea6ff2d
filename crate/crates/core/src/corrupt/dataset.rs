//! Procedural shape×color dataset and PNG import/export.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

pub const SIZE: usize = 32;
pub const CLASSES: usize = 10;
const SHAPES: usize = 5;

/// Labeled images, all `3×H×W` in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Samples `idx` (in order) as a new dataset.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            images: idx.iter().map(|&i| self.images[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    /// First `ceil(frac·n)` samples and the rest.
    pub fn split(&self, frac: f64) -> (Dataset, Dataset) {
        let cut = ((self.len() as f64 * frac).ceil() as usize).min(self.len());
        let head: Vec<usize> = (0..cut).collect();
        let tail: Vec<usize> = (cut..self.len()).collect();
        (self.select(&head), self.select(&tail))
    }

    pub fn per_class(&self) -> Vec<usize> {
        let mut n = vec![0; self.classes];
        for &l in &self.labels {
            n[l] += 1;
        }
        n
    }
}

fn yiq_to_rgb(y: f32, i: f32, q: f32) -> [f32; 3] {
    [
        (y + 0.956 * i + 0.619 * q).clamp(0.0, 1.0),
        (y - 0.272 * i - 0.647 * q).clamp(0.0, 1.0),
        (y - 1.106 * i + 1.703 * q).clamp(0.0, 1.0),
    ]
}

fn inside(shape: usize, u: f32, v: f32) -> bool {
    match shape {
        0 => u * u + v * v <= 1.0,
        1 => u.abs().max(v.abs()) <= 0.8,
        2 => (0..3).all(|k| {
            let phi = (-90.0f32 + 120.0 * k as f32).to_radians();
            u * phi.cos() + v * phi.sin() <= 0.5
        }),
        3 => (u.abs() <= 0.3 && v.abs() <= 0.9) || (v.abs() <= 0.3 && u.abs() <= 0.9),
        _ => {
            let r = (u * u + v * v).sqrt();
            (0.55..=1.0).contains(&r)
        }
    }
}

/// Renders one image of `class` (shape = class / 2, hue family = class % 2).
pub fn render(class: usize, rng: &mut impl Rng) -> Tensor {
    let n = SIZE;
    // Smooth background: a coarse random grid, bilinearly upsampled.
    let g = 5;
    let base = rng.random_range(0.15..0.35f32);
    let tint: [f32; 3] = std::array::from_fn(|_| rng.random_range(-0.04..0.04f32));
    let grid: Vec<f32> = (0..g * g).map(|_| rng.random_range(-0.1..0.1f32)).collect();
    let shape = class / 2;
    let angle = if class.is_multiple_of(2) {
        0.55f32
    } else {
        0.55 + std::f32::consts::PI
    } + rng.random_range(-0.35..0.35f32);
    let chroma = rng.random_range(0.16..0.24f32);
    let luma = rng.random_range(0.5..0.7f32);
    let fg = yiq_to_rgb(luma, chroma * angle.cos(), chroma * angle.sin());
    let cx = n as f32 / 2.0 + rng.random_range(-4.0..4.0f32);
    let cy = n as f32 / 2.0 + rng.random_range(-4.0..4.0f32);
    let r = rng.random_range(7.0..11.0f32);
    let theta = rng.random_range(0.0..std::f32::consts::TAU);
    let (s, c) = theta.sin_cos();

    let mut out = vec![0.0; 3 * n * n];
    for y in 0..n {
        for x in 0..n {
            let gx = x as f32 / (n - 1) as f32 * (g - 1) as f32;
            let gy = y as f32 / (n - 1) as f32 * (g - 1) as f32;
            let (x0, y0) = ((gx as usize).min(g - 2), (gy as usize).min(g - 2));
            let (fx, fy) = (gx - x0 as f32, gy - y0 as f32);
            let tex = (1.0 - fy) * ((1.0 - fx) * grid[y0 * g + x0] + fx * grid[y0 * g + x0 + 1])
                + fy * ((1.0 - fx) * grid[(y0 + 1) * g + x0] + fx * grid[(y0 + 1) * g + x0 + 1]);
            // 2×2 supersampled coverage.
            let mut cover = 0.0;
            for (oy, ox) in [(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)] {
                let dx = x as f32 + ox - cx;
                let dy = y as f32 + oy - cy;
                let u = (c * dx + s * dy) / r;
                let v = (-s * dx + c * dy) / r;
                if inside(shape, u, v) {
                    cover += 0.25;
                }
            }
            for ch in 0..3 {
                let bg = (base + tex + tint[ch]).clamp(0.0, 1.0);
                out[(ch * n + y) * n + x] = bg + cover * (fg[ch] - bg);
            }
        }
    }
    Tensor::new(vec![3, n, n], out).expect("fixed shape")
}

fn balanced_split(n: usize, classes: usize, rng: &mut ChaCha8Rng) -> Dataset {
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(rng);
    let images = labels.iter().map(|&l| render(l, rng)).collect();
    Dataset {
        images,
        labels,
        classes,
    }
}

/// Class-balanced train and test splits, deterministic per seed.
pub fn make_dataset(seed: u64, n_train: usize, n_test: usize, classes: usize) -> Result<(Dataset, Dataset)> {
    if n_train == 0 || n_test == 0 {
        return Err(Error::invalid("dataset sizes must be at least 1"));
    }
    if classes != CLASSES {
        return Err(Error::invalid(format!(
            "the shape renderer has exactly {CLASSES} classes"
        )));
    }
    debug_assert_eq!(SHAPES * 2, CLASSES);
    let mut train_rng = ChaCha8Rng::seed_from_u64(seed);
    train_rng.set_stream(1);
    let mut test_rng = ChaCha8Rng::seed_from_u64(seed);
    test_rng.set_stream(2);
    Ok((
        balanced_split(n_train, classes, &mut train_rng),
        balanced_split(n_test, classes, &mut test_rng),
    ))
}

fn to_u8(v: f32) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Writes `root/split/class_<id>/img_<n>.png` for every sample.
pub fn export_png(ds: &Dataset, root: &Path, split: &str) -> Result<()> {
    for (n, (img, label)) in ds.images.iter().zip(&ds.labels).enumerate() {
        let (c, h, w) = img.chw()?;
        if c != 3 {
            return Err(Error::contract("PNG export needs RGB images"));
        }
        let dir = root.join(split).join(format!("class_{label}"));
        fs::create_dir_all(&dir)?;
        let mut bytes = Vec::with_capacity(3 * h * w);
        for i in 0..h * w {
            for ch in 0..3 {
                bytes.push(to_u8(img.data()[ch * h * w + i]));
            }
        }
        let file = fs::File::create(dir.join(format!("img_{n}.png")))?;
        let mut enc = png::Encoder::new(std::io::BufWriter::new(file), w as u32, h as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::format("png", e.to_string()))?;
        writer
            .write_image_data(&bytes)
            .map_err(|e| Error::format("png", e.to_string()))?;
    }
    Ok(())
}

fn read_png(path: &Path) -> Result<Tensor> {
    let file = fs::File::open(path)?;
    let mut dec = png::Decoder::new(std::io::BufReader::new(file));
    dec.set_transformations(png::Transformations::EXPAND);
    let mut reader = dec.read_info().map_err(|e| Error::format("png", e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format("png", e.to_string()))?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::format("png", format!("{}: expected 8-bit RGB", path.display())));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut out = vec![0.0; 3 * h * w];
    for i in 0..h * w {
        for ch in 0..3 {
            out[ch * h * w + i] = buf[3 * i + ch] as f32 / 255.0;
        }
    }
    Tensor::new(vec![3, h, w], out)
}

fn numbered(name: &str, prefix: &str, suffix: &str) -> Option<usize> {
    name.strip_prefix(prefix)?.strip_suffix(suffix)?.parse().ok()
}

/// Reads a split written by [`export_png`], in sample-number order.
pub fn import_png(root: &Path, split: &str) -> Result<Dataset> {
    let mut samples = Vec::new();
    let mut classes = 0;
    for entry in fs::read_dir(root.join(split))? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let Some(label) = numbered(&name, "class_", "") else {
            continue;
        };
        classes = classes.max(label + 1);
        for img in fs::read_dir(entry.path())? {
            let img = img?;
            let fname = img.file_name().to_string_lossy().into_owned();
            if let Some(n) = numbered(&fname, "img_", ".png") {
                samples.push((n, label, img.path()));
            }
        }
    }
    if samples.is_empty() {
        return Err(Error::invalid(format!(
            "no images under {}",
            root.join(split).display()
        )));
    }
    samples.sort_by_key(|s| s.0);
    let mut ds = Dataset {
        images: Vec::with_capacity(samples.len()),
        labels: Vec::with_capacity(samples.len()),
        classes: classes.max(CLASSES),
    };
    for (_, label, path) in samples {
        ds.images.push(read_png(&path)?);
        ds.labels.push(label);
    }
    Ok(ds)
}
