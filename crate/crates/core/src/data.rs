//! Datasets: the in-memory image container, IDX and CSV ingestion, class
//! filtering for biased/deficient auxiliary sets, and a deterministic
//! synthetic-shapes generator used for desk-scale runs.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::rng::SeededRng;

/// Images flattened row-major (interleaved channels) with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, height: usize, width: usize, channels: usize, classes: usize) -> Result<Self> {
        let pixels = height * width * channels;
        if images.rows() != labels.len() || (images.rows() > 0 && images.cols() != pixels) {
            return Err(Error::InvalidArgument(format!(
                "dataset with {} labels has image matrix {:?}, expected {} pixels per row",
                labels.len(),
                images.shape(),
                pixels
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidArgument(format!("label {bad} outside {classes} classes")));
        }
        if images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("pixel values must lie in [0, 1]".into()));
        }
        Ok(Self {
            images,
            labels,
            height,
            width,
            channels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: self.images.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            height: self.height,
            width: self.width,
            channels: self.channels,
            classes: self.classes,
        }
    }
}

/// Keep samples whose label is in `keep`, in original order, with at most
/// `max_per_class` samples per class.
pub fn filter_classes(dataset: &Dataset, keep: &[usize], max_per_class: Option<usize>) -> Result<Dataset> {
    if keep.is_empty() {
        return Err(Error::InvalidArgument("class filter must keep at least one class".into()));
    }
    let mut counts = vec![0usize; dataset.classes];
    let mut indices = Vec::new();
    for (i, &label) in dataset.labels.iter().enumerate() {
        if keep.contains(&label) && max_per_class.is_none_or(|cap| counts[label] < cap) {
            counts[label] += 1;
            indices.push(i);
        }
    }
    if !keep.iter().any(|&c| dataset.labels.contains(&c)) {
        return Err(Error::InvalidArgument(format!("none of the classes {keep:?} occur in the dataset")));
    }
    Ok(dataset.subset(&indices))
}

pub const SHAPE_NAMES: [&str; 10] = [
    "hbar", "vbar", "square", "disc", "cross", "ring", "diagonal", "triangle", "frame", "saltire",
];

/// Grayscale `size x size` canvases with one class-dependent shape each at a
/// random position and scale, drawn brighter than a random background level. Same arguments give the same data.
pub fn synth_shapes(n: usize, size: usize, classes: usize, seed: u64) -> Result<Dataset> {
    if size < 8 {
        return Err(Error::InvalidArgument(format!("canvas size must be at least 8, got {size}")));
    }
    if !(2..=10).contains(&classes) {
        return Err(Error::InvalidArgument(format!("unsupported class count {classes}; use 2..=10")));
    }
    let mut rng = SeededRng::new(seed, 0x5348_4150);
    let mut data = Vec::with_capacity(n * size * size);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let label = rng.below(classes);
        let s = size as f64;
        let cx = s / 2.0 + rng.uniform_range(-s / 6.0, s / 6.0);
        let cy = s / 2.0 + rng.uniform_range(-s / 6.0, s / 6.0);
        let r = s * rng.uniform_range(0.2, 0.34);
        let background = rng.uniform_range(0.0, 0.4);
        let foreground = background + rng.uniform_range(0.35, 0.6);
        let shape = Shape { label, cx, cy, r };
        for py in 0..size {
            for px in 0..size {
                // 2x2 supersampling for soft edges.
                let mut cover = 0.0;
                for (ox, oy) in [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)] {
                    if shape.contains(px as f64 + ox, py as f64 + oy) {
                        cover += 0.25;
                    }
                }
                data.push(background + cover * (foreground - background));
            }
        }
        labels.push(label);
    }
    Dataset::new(Tensor::matrix(n, size * size, data)?, labels, size, size, 1, classes)
}

struct Shape {
    label: usize,
    cx: f64,
    cy: f64,
    r: f64,
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (ax, ay) = (dx.abs(), dy.abs());
        let r = self.r;
        let t = 0.3 * r;
        match self.label {
            0 => ax <= r && ay <= t,
            1 => ax <= t && ay <= r,
            2 => ax <= 0.8 * r && ay <= 0.8 * r,
            3 => dx * dx + dy * dy <= r * r,
            4 => (ax <= r && ay <= 0.5 * t) || (ax <= 0.5 * t && ay <= r),
            5 => {
                let d = (dx * dx + dy * dy).sqrt();
                d <= r && d >= 0.6 * r
            }
            6 => ax <= r && ay <= r && (dx - dy).abs() <= 0.6 * t * std::f64::consts::SQRT_2,
            7 => dy <= r * 0.8 && dy >= -r && ax <= (dy + r) * 0.5,
            8 => ax <= r && ay <= r && (ax >= 0.65 * r || ay >= 0.65 * r),
            _ => ax <= r && ay <= r && ((dx - dy).abs() <= 0.4 * t * 2.0 || (dx + dy).abs() <= 0.4 * t * 2.0),
        }
    }
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("truncated IDX header in {what}")))
}

/// Parse an IDX image file (`0x00000803`) and label file (`0x00000801`).
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    parse_idx(&fs::read(images_path)?, &fs::read(labels_path)?)
}

pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let magic = read_u32(images, 0, "image file")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:#010x} in IDX image file")));
    }
    let magic = read_u32(labels, 0, "label file")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:#010x} in IDX label file")));
    }
    let n = read_u32(images, 4, "image file")? as usize;
    let rows = read_u32(images, 8, "image file")? as usize;
    let cols = read_u32(images, 12, "image file")? as usize;
    let nl = read_u32(labels, 4, "label file")? as usize;
    if n != nl {
        return Err(Error::Format(format!("count mismatch: {n} images but {nl} labels")));
    }
    let pixels = rows * cols;
    let body = images
        .get(16..16 + n * pixels)
        .ok_or_else(|| Error::Format("truncated IDX image data".into()))?;
    let label_bytes = labels
        .get(8..8 + n)
        .ok_or_else(|| Error::Format("truncated IDX label data".into()))?;
    let data = body.iter().map(|&b| b as f64 / 255.0).collect();
    let labels: Vec<usize> = label_bytes.iter().map(|&b| b as usize).collect();
    let classes = labels.iter().max().map_or(1, |m| m + 1).max(10);
    Dataset::new(Tensor::matrix(n, pixels, data)?, labels, rows, cols, 1, classes)
}

/// Encode a grayscale dataset as IDX image and label byte streams.
pub fn encode_idx(dataset: &Dataset) -> Result<(Vec<u8>, Vec<u8>)> {
    if dataset.channels != 1 {
        return Err(Error::InvalidArgument("IDX export supports single-channel images only".into()));
    }
    let n = dataset.len() as u32;
    let mut images = Vec::with_capacity(16 + dataset.images.len());
    for v in [IDX_IMAGES_MAGIC, n, dataset.height as u32, dataset.width as u32] {
        images.extend_from_slice(&v.to_be_bytes());
    }
    images.extend(dataset.images.data().iter().map(|&v| quantize(v)));
    let mut labels = Vec::with_capacity(8 + dataset.len());
    labels.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&n.to_be_bytes());
    for &l in &dataset.labels {
        let byte = u8::try_from(l).map_err(|_| Error::InvalidArgument(format!("label {l} does not fit a byte")))?;
        labels.push(byte);
    }
    Ok((images, labels))
}

pub fn write_idx(images_path: &Path, labels_path: &Path, dataset: &Dataset) -> Result<()> {
    let (images, labels) = encode_idx(dataset)?;
    fs::write(images_path, images)?;
    fs::write(labels_path, labels)?;
    Ok(())
}

pub(crate) fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Rows of `label, v1, ..., v_{h*w*c}`. Values are scaled by 1/255 when the
/// file's maximum exceeds 1.5.
pub fn load_csv(path: &Path, height: usize, width: usize, channels: usize) -> Result<Dataset> {
    parse_csv(&fs::read_to_string(path)?, height, width, channels)
}

pub fn parse_csv(text: &str, height: usize, width: usize, channels: usize) -> Result<Dataset> {
    let pixels = height * width * channels;
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != pixels + 1 {
            return Err(Error::Format(format!(
                "line {}: expected {} cells, found {}",
                lineno + 1,
                pixels + 1,
                cells.len()
            )));
        }
        let label: usize = cells[0]
            .parse()
            .map_err(|_| Error::Format(format!("line {}: bad label {:?}", lineno + 1, cells[0])))?;
        labels.push(label);
        for c in &cells[1..] {
            let v: f64 = c
                .parse()
                .map_err(|_| Error::Format(format!("line {}: non-numeric cell {c:?}", lineno + 1)))?;
            if !v.is_finite() {
                return Err(Error::Format(format!("line {}: non-finite cell", lineno + 1)));
            }
            data.push(v);
        }
    }
    let max = data.iter().copied().fold(0.0, f64::max);
    if max > 1.5 {
        data.iter_mut().for_each(|v| *v /= 255.0);
    }
    let classes = labels.iter().max().map_or(1, |m| m + 1);
    let n = labels.len();
    Dataset::new(Tensor::matrix(n, pixels, data)?, labels, height, width, channels, classes)
}
