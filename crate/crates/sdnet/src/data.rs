//! Dataset ingestion (IDX container format), mean-pool downscaling, the
//! synthetic 2D set with a planted noise blob, and the flat-binary dataset
//! cache.

use std::io::Read;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::rules::Bounds;

/// Labeled inputs, all rows inside `bounds`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub inputs: Array2<f64>,
    pub labels: Vec<usize>,
    pub bounds: Bounds,
    pub classes: usize,
    pub split: String,
}

impl Dataset {
    pub fn new(
        inputs: Array2<f64>,
        labels: Vec<usize>,
        bounds: Bounds,
        classes: usize,
        split: impl Into<String>,
    ) -> Self {
        assert_eq!(inputs.nrows(), labels.len(), "one label per row");
        assert_eq!(inputs.ncols(), bounds.dim(), "bounds must match input dimension");
        assert!(labels.iter().all(|&l| l < classes), "label out of class range");
        for row in inputs.rows() {
            debug_assert!(bounds.contains(row.as_slice().unwrap()), "input outside bounds");
        }
        Dataset { inputs, labels, bounds, classes, split: split.into() }
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn gather_inputs(&self, idx: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((idx.len(), self.dim()));
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).assign(&self.inputs.row(i));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// IDX container format
// ---------------------------------------------------------------------------

pub const IDX_MAGIC_IMAGES: u32 = 0x0000_0803;
pub const IDX_MAGIC_LABELS: u32 = 0x0000_0801;

/// Raw IDX tensor: unsigned-byte payload in row-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxTensor {
    pub fn magic(&self) -> u32 {
        0x0000_0800 | self.dims.len() as u32
    }
}

/// Parses an IDX file bit-exactly: big-endian magic `0x0000 08 <ndim>`,
/// big-endian u32 dimension sizes, unsigned-byte payload.
pub fn load_idx(path: &Path) -> Result<IdxTensor> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    let parse_err = |offset: u64, detail: String| Error::IdxParse {
        path: path.to_path_buf(),
        offset,
        detail,
    };
    if bytes.len() < 4 {
        return Err(parse_err(0, format!("file too short for magic: {} bytes", bytes.len())));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(parse_err(0, format!("bad magic prefix {:02x}{:02x}", bytes[0], bytes[1])));
    }
    if bytes[2] != 0x08 {
        return Err(parse_err(2, format!("unsupported dtype 0x{:02x}, expected 0x08 (u8)", bytes[2])));
    }
    let ndim = bytes[3] as usize;
    if ndim == 0 {
        return Err(parse_err(3, "zero dimensions".into()));
    }
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(parse_err(4, format!("truncated header: expected {header} bytes, file has {}", bytes.len())));
    }
    let mut dims = Vec::with_capacity(ndim);
    for d in 0..ndim {
        let o = 4 + 4 * d;
        dims.push(u32::from_be_bytes(bytes[o..o + 4].try_into().unwrap()) as usize);
    }
    let expected: usize = dims.iter().product();
    let actual = bytes.len() - header;
    if actual != expected {
        return Err(parse_err(
            header as u64,
            format!("payload length mismatch: expected {expected} bytes for dims {dims:?}, got {actual}"),
        ));
    }
    Ok(IdxTensor { dims, data: bytes[header..].to_vec() })
}

pub fn save_idx(path: &Path, tensor: &IdxTensor) -> Result<()> {
    let mut bytes = Vec::with_capacity(4 + 4 * tensor.dims.len() + tensor.data.len());
    bytes.extend_from_slice(&tensor.magic().to_be_bytes());
    for &d in &tensor.dims {
        bytes.extend_from_slice(&(d as u32).to_be_bytes());
    }
    bytes.extend_from_slice(&tensor.data);
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Builds an image dataset from an IDX image/label pair; pixels are scaled
/// to [0, 1] and flattened row-major.
pub fn dataset_from_idx(images: &IdxTensor, labels: &IdxTensor, split: &str) -> Result<Dataset> {
    if images.dims.len() != 3 {
        return Err(Error::BadDataset(format!(
            "image tensor must have 3 dims (magic 0x{:08x}), got {:?}",
            IDX_MAGIC_IMAGES, images.dims
        )));
    }
    if labels.dims.len() != 1 {
        return Err(Error::BadDataset(format!(
            "label tensor must have 1 dim (magic 0x{:08x}), got {:?}",
            IDX_MAGIC_LABELS, labels.dims
        )));
    }
    let n = images.dims[0];
    if labels.dims[0] != n {
        return Err(Error::BadDataset(format!(
            "{n} images but {} labels",
            labels.dims[0]
        )));
    }
    if n == 0 {
        return Err(Error::BadDataset("empty image set".into()));
    }
    let d = images.dims[1] * images.dims[2];
    let inputs = Array2::from_shape_vec(
        (n, d),
        images.data.iter().map(|&b| f64::from(b) / 255.0).collect(),
    )
    .expect("dims checked above");
    let classes = labels.data.iter().copied().max().unwrap() as usize + 1;
    Ok(Dataset::new(
        inputs,
        labels.data.iter().map(|&b| b as usize).collect(),
        Bounds::cube(d, 0.0, 1.0),
        classes,
        split,
    ))
}

/// Loads the `train-*`/`test-*` (or `t10k-*`) IDX quadruple from a directory.
pub fn load_mnist_dir(dir: &Path) -> Result<(Dataset, Dataset)> {
    let pick = |stems: &[&str], suffix: &str| -> Result<std::path::PathBuf> {
        for stem in stems {
            let p = dir.join(format!("{stem}-{suffix}"));
            if p.exists() {
                return Ok(p);
            }
        }
        Err(Error::io(
            dir.join(format!("{}-{suffix}", stems[0])),
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such idx file"),
        ))
    };
    let train_images = load_idx(&pick(&["train"], "images-idx3-ubyte")?)?;
    let train_labels = load_idx(&pick(&["train"], "labels-idx1-ubyte")?)?;
    let test_images = load_idx(&pick(&["test", "t10k"], "images-idx3-ubyte")?)?;
    let test_labels = load_idx(&pick(&["test", "t10k"], "labels-idx1-ubyte")?)?;
    Ok((
        dataset_from_idx(&train_images, &train_labels, "train")?,
        dataset_from_idx(&test_images, &test_labels, "test")?,
    ))
}

// ---------------------------------------------------------------------------
// Downscaling
// ---------------------------------------------------------------------------

/// Mean-pools square images from `side` to `target` per edge. Average
/// pooling preserves the mean pixel value exactly and keeps values inside
/// the original per-pixel bounds.
pub fn downscale(data: &Dataset, side: usize, target: usize) -> Result<Dataset> {
    if data.dim() != side * side {
        return Err(Error::Unsupported(format!(
            "inputs have {} columns, expected {side}x{side}",
            data.dim()
        )));
    }
    if target == 0 || side % target != 0 {
        return Err(Error::Unsupported(format!(
            "cannot pool {side}x{side} images to {target}x{target}: side not divisible"
        )));
    }
    let f = side / target;
    let block = (f * f) as f64;
    let mut out = Array2::zeros((data.len(), target * target));
    for (r, row) in data.inputs.rows().into_iter().enumerate() {
        for ty in 0..target {
            for tx in 0..target {
                let mut sum = 0.0;
                for dy in 0..f {
                    for dx in 0..f {
                        sum += row[(ty * f + dy) * side + tx * f + dx];
                    }
                }
                out[[r, ty * target + tx]] = sum / block;
            }
        }
    }
    let lo = data.bounds.lower[0];
    let hi = data.bounds.upper[0];
    Ok(Dataset::new(
        out,
        data.labels.clone(),
        Bounds::cube(target * target, lo, hi),
        data.classes,
        data.split.clone(),
    ))
}

// ---------------------------------------------------------------------------
// Synthetic 2D dataset
// ---------------------------------------------------------------------------

/// Geometry of the synthetic set: class 0 occupies an axis-aligned main
/// rectangle in the upper right plus, when `plant_noise` is set, a small
/// disc in the lower left; class 1 covers everything else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Synth2DConfig {
    pub main_rect: [f64; 4],
    pub blob_center: [f64; 2],
    pub blob_radius: f64,
    pub points_per_class: usize,
    pub plant_noise: bool,
    pub seed: u64,
    pub bounds: Bounds,
}

impl Default for Synth2DConfig {
    fn default() -> Self {
        Synth2DConfig {
            main_rect: [0.55, 0.55, 0.95, 0.95],
            blob_center: [0.15, 0.15],
            blob_radius: 0.06,
            points_per_class: 1500,
            plant_noise: true,
            seed: 0,
            bounds: Bounds::cube(2, 0.0, 1.0),
        }
    }
}

impl Synth2DConfig {
    pub fn in_main_rect(&self, x: f64, y: f64) -> bool {
        let [x0, y0, x1, y1] = self.main_rect;
        x >= x0 && x <= x1 && y >= y0 && y <= y1
    }

    pub fn in_blob(&self, x: f64, y: f64) -> bool {
        let dx = x - self.blob_center[0];
        let dy = y - self.blob_center[1];
        dx * dx + dy * dy <= self.blob_radius * self.blob_radius
    }

    /// Label as a pure function of the coordinates.
    pub fn class_of(&self, x: f64, y: f64) -> usize {
        if self.in_main_rect(x, y) || (self.plant_noise && self.in_blob(x, y)) {
            0
        } else {
            1
        }
    }

    fn validate(&self) {
        let [x0, y0, x1, y1] = self.main_rect;
        assert!(x0 < x1 && y0 < y1, "degenerate main rectangle");
        assert!(self.bounds.dim() == 2);
        assert!(self.bounds.contains(&[x0, y0]) && self.bounds.contains(&[x1, y1]));
        let [cx, cy] = self.blob_center;
        let r = self.blob_radius;
        assert!(r >= 0.0);
        assert!(self.bounds.contains(&[cx - r, cy - r]) && self.bounds.contains(&[cx + r, cy + r]));
        // Blob must stay clear of the main rectangle.
        let disjoint = cx + r < x0 || cx - r > x1 || cy + r < y0 || cy - r > y1;
        assert!(disjoint, "noise blob overlaps the main rectangle");
    }
}

/// Uniform points labeled by `class_of`, drawn until each class reaches its
/// quota. Deterministic by seed.
pub fn gen_synth2d(config: &Synth2DConfig) -> Dataset {
    config.validate();
    let mut rng = exec::stream_rng(config.seed, 0);
    let quota = config.points_per_class;
    let mut points: Vec<[f64; 2]> = Vec::with_capacity(2 * quota);
    let mut labels: Vec<usize> = Vec::with_capacity(2 * quota);
    let mut counts = [0usize; 2];
    while counts[0] < quota || counts[1] < quota {
        let x = rng.random_range(config.bounds.lower[0]..config.bounds.upper[0]);
        let y = rng.random_range(config.bounds.lower[1]..config.bounds.upper[1]);
        let c = config.class_of(x, y);
        if counts[c] < quota {
            counts[c] += 1;
            points.push([x, y]);
            labels.push(c);
        }
    }
    let mut inputs = Array2::zeros((points.len(), 2));
    for (i, p) in points.iter().enumerate() {
        inputs[[i, 0]] = p[0];
        inputs[[i, 1]] = p[1];
    }
    Dataset::new(inputs, labels, config.bounds.clone(), 2, "synth2d")
}

// ---------------------------------------------------------------------------
// Dataset cache: flat binary plus JSON sidecar
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub rows: usize,
    pub cols: usize,
    pub classes: usize,
    pub split: String,
    pub bounds: Bounds,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<Synth2DConfig>,
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    std::path::PathBuf::from(os)
}

/// Writes `path` (row-major little-endian f64 inputs, then one label byte
/// per row) and `path.json` (shape, bounds, provenance).
pub fn save_dataset(path: &Path, data: &Dataset, geometry: Option<&Synth2DConfig>) -> Result<()> {
    assert!(data.classes <= 256, "cache stores labels as single bytes");
    let mut bytes = Vec::with_capacity(data.len() * data.dim() * 8 + data.len());
    for row in data.inputs.rows() {
        for v in row {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    bytes.extend(data.labels.iter().map(|&l| l as u8));
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let sidecar = DatasetSidecar {
        rows: data.len(),
        cols: data.dim(),
        classes: data.classes,
        split: data.split.clone(),
        bounds: data.bounds.clone(),
        geometry: geometry.cloned(),
    };
    let sp = sidecar_path(path);
    let json = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::json(&sp, e))?;
    std::fs::write(&sp, json).map_err(|e| Error::io(&sp, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let sp = sidecar_path(path);
    let text = std::fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
    let sidecar: DatasetSidecar = serde_json::from_str(&text).map_err(|e| Error::json(&sp, e))?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = sidecar.rows * sidecar.cols * 8 + sidecar.rows;
    if bytes.len() != expected {
        return Err(Error::BadDataset(format!(
            "cache {path:?}: expected {expected} bytes for {}x{} rows, got {}",
            sidecar.rows,
            sidecar.cols,
            bytes.len()
        )));
    }
    let mut inputs = Array2::zeros((sidecar.rows, sidecar.cols));
    let mut o = 0;
    for r in 0..sidecar.rows {
        for c in 0..sidecar.cols {
            inputs[[r, c]] = f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
            o += 8;
        }
    }
    let labels: Vec<usize> = bytes[o..].iter().map(|&b| b as usize).collect();
    Ok(Dataset::new(inputs, labels, sidecar.bounds, sidecar.classes, sidecar.split))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tmpdir(tag: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("sdnet-data-{tag}-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn idx_round_trip_is_bit_exact() {
        let dir = tmpdir("roundtrip");
        let tensor = IdxTensor {
            dims: vec![3, 4, 5],
            data: (0..60).map(|i| (i * 7 % 256) as u8).collect(),
        };
        let path = dir.join("t.idx");
        save_idx(&path, &tensor).unwrap();
        let back = load_idx(&path).unwrap();
        assert_eq!(back, tensor);
        assert_eq!(back.magic(), IDX_MAGIC_IMAGES);
        // The serialized header is exactly magic + dims, big endian.
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], &[0, 0, 8, 3]);
        assert_eq!(&bytes[4..8], &3u32.to_be_bytes());
    }

    #[test]
    fn idx_truncation_names_expected_and_actual() {
        let dir = tmpdir("trunc");
        let path = dir.join("bad.idx");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&IDX_MAGIC_LABELS.to_be_bytes());
        bytes.extend_from_slice(&10u32.to_be_bytes());
        bytes.extend_from_slice(&[1, 2, 3]);
        std::fs::write(&path, bytes).unwrap();
        match load_idx(&path) {
            Err(Error::IdxParse { offset, detail, .. }) => {
                assert_eq!(offset, 8);
                assert!(detail.contains("expected 10"), "{detail}");
                assert!(detail.contains("got 3"), "{detail}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn idx_bad_magic_is_rejected() {
        let dir = tmpdir("magic");
        let path = dir.join("bad_magic.idx");
        std::fs::write(&path, [0u8, 0, 9, 1, 0, 0, 0, 0]).unwrap();
        match load_idx(&path) {
            Err(Error::IdxParse { offset: 2, detail, .. }) => {
                assert!(detail.contains("dtype"), "{detail}");
            }
            other => panic!("expected dtype error, got {other:?}"),
        }
    }

    #[test]
    fn downscale_constant_and_single_block() {
        let mut inputs = Array2::zeros((2, 28 * 28));
        inputs.row_mut(0).fill(0.5);
        // One 7x7 block of ones in the top-left corner of image 1.
        for y in 0..7 {
            for x in 0..7 {
                inputs[[1, y * 28 + x]] = 1.0;
            }
        }
        let data = Dataset::new(inputs, vec![0, 1], Bounds::cube(784, 0.0, 1.0), 2, "t");
        let down = downscale(&data, 28, 4).unwrap();
        assert_eq!(down.dim(), 16);
        for &v in down.inputs.row(0) {
            assert_relative_eq!(v, 0.5);
        }
        assert_relative_eq!(down.inputs[[1, 0]], 1.0);
        for c in 1..16 {
            assert_relative_eq!(down.inputs[[1, c]], 0.0);
        }
    }

    #[test]
    fn downscale_preserves_mean() {
        let mut rng = exec::stream_rng(2, 0);
        let inputs = Array2::from_shape_fn((5, 36), |_| rng.random_range(0.0..1.0));
        let data = Dataset::new(inputs, vec![0; 5], Bounds::cube(36, 0.0, 1.0), 1, "t");
        let down = downscale(&data, 6, 2).unwrap();
        for r in 0..5 {
            let before = data.inputs.row(r).mean().unwrap();
            let after = down.inputs.row(r).mean().unwrap();
            assert_relative_eq!(before, after, max_relative = 1e-12);
        }
    }

    #[test]
    fn downscale_refuses_indivisible() {
        let data = Dataset::new(Array2::zeros((1, 25)), vec![0], Bounds::cube(25, 0.0, 1.0), 1, "t");
        assert!(downscale(&data, 5, 2).is_err());
        assert!(downscale(&data, 4, 2).is_err());
    }

    #[test]
    fn synth2d_is_deterministic_and_balanced() {
        let cfg = Synth2DConfig { points_per_class: 200, ..Synth2DConfig::default() };
        let a = gen_synth2d(&cfg);
        let b = gen_synth2d(&cfg);
        assert_eq!(a.inputs, b.inputs);
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.labels.iter().filter(|&&l| l == 0).count(), 200);
        assert_eq!(a.labels.iter().filter(|&&l| l == 1).count(), 200);
        // Labels are a pure function of coordinates.
        for i in 0..a.len() {
            assert_eq!(a.labels[i], cfg.class_of(a.inputs[[i, 0]], a.inputs[[i, 1]]));
        }
    }

    #[test]
    fn synth2d_without_noise_has_no_blob_points() {
        let cfg = Synth2DConfig {
            plant_noise: false,
            points_per_class: 300,
            ..Synth2DConfig::default()
        };
        let d = gen_synth2d(&cfg);
        for i in 0..d.len() {
            let (x, y) = (d.inputs[[i, 0]], d.inputs[[i, 1]]);
            if d.labels[i] == 0 {
                assert!(cfg.in_main_rect(x, y));
            }
        }
    }

    #[test]
    fn synth2d_blob_centroid_is_recoverable() {
        let cfg = Synth2DConfig { points_per_class: 2000, ..Synth2DConfig::default() };
        let d = gen_synth2d(&cfg);
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0);
        for i in 0..d.len() {
            let (x, y) = (d.inputs[[i, 0]], d.inputs[[i, 1]]);
            if d.labels[i] == 0 && cfg.in_blob(x, y) {
                sx += x;
                sy += y;
                n += 1;
            }
        }
        assert!(n > 30, "blob got only {n} points");
        let (cx, cy) = (sx / n as f64, sy / n as f64);
        assert!((cx - cfg.blob_center[0]).abs() < 0.02, "centroid x {cx}");
        assert!((cy - cfg.blob_center[1]).abs() < 0.02, "centroid y {cy}");
    }

    #[test]
    fn dataset_cache_round_trips() {
        let dir = tmpdir("cache");
        let cfg = Synth2DConfig { points_per_class: 50, ..Synth2DConfig::default() };
        let d = gen_synth2d(&cfg);
        let path = dir.join("synth.bin");
        save_dataset(&path, &d, Some(&cfg)).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back.inputs, d.inputs);
        assert_eq!(back.labels, d.labels);
        assert_eq!(back.bounds, d.bounds);
        assert_eq!(back.classes, d.classes);
        assert_eq!(back.split, d.split);
        let sidecar: DatasetSidecar =
            serde_json::from_str(&std::fs::read_to_string(dir.join("synth.bin.json")).unwrap())
                .unwrap();
        assert_eq!(sidecar.geometry.as_ref(), Some(&cfg));
    }
}
