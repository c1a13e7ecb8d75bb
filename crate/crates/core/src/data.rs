//! Dataset manifests, sample loading, reference-aware splitting,
//! aspect-preserving resize, and quality-preserving augmentation.
//!
//! Manifest CSV schemas (header row required, paths relative to the
//! manifest's directory):
//!
//! ```text
//! MOS-FR:  dist_path,ref_path,mos
//! MOS-NR:  dist_path,mos
//! DIST:    dist_path,p1,...,pK
//! 2AFC:    ref_path,a_path,b_path,p_ab
//! ```

use crate::error::{Error, Result};
use crate::imageio::load_image;
use crate::tensor::{self, Scalar, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Label family of a manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManifestKind {
    MosFr,
    MosNr,
    /// Score distributions over K ordered bins.
    Distribution(usize),
    TwoAfc,
}

impl ManifestKind {
    pub fn has_reference(&self) -> bool {
        matches!(self, ManifestKind::MosFr | ManifestKind::TwoAfc)
    }

    pub fn describe(&self) -> String {
        match self {
            ManifestKind::MosFr => "mos-fr".into(),
            ManifestKind::MosNr => "mos-nr".into(),
            ManifestKind::Distribution(k) => format!("dist({k})"),
            ManifestKind::TwoAfc => "2afc".into(),
        }
    }
}

/// One manifest row.
#[derive(Debug, Clone)]
pub enum Record {
    MosFr { dist: PathBuf, reference: PathBuf, mos: f64 },
    MosNr { dist: PathBuf, mos: f64 },
    Distribution { dist: PathBuf, probs: Vec<f64> },
    TwoAfc { reference: PathBuf, a: PathBuf, b: PathBuf, p_ab: f64 },
}

impl Record {
    /// Reference path for reference-aware splitting, when the kind has one.
    pub fn reference(&self) -> Option<&Path> {
        match self {
            Record::MosFr { reference, .. } | Record::TwoAfc { reference, .. } => Some(reference),
            _ => None,
        }
    }

    pub fn mos(&self) -> Option<f64> {
        match self {
            Record::MosFr { mos, .. } | Record::MosNr { mos, .. } => Some(*mos),
            _ => None,
        }
    }
}

/// A validated dataset description.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub kind: ManifestKind,
    pub root: PathBuf,
    pub records: Vec<Record>,
    /// Min-max of the raw MOS column, recorded at load for
    /// normalization round trips.
    pub mos_range: Option<(f64, f64)>,
}

impl Manifest {
    /// Builds a manifest directly from records (used by tests and by the
    /// splitter); file existence is only enforced by [`load_manifest`].
    pub fn from_records(kind: ManifestKind, root: PathBuf, records: Vec<Record>) -> Self {
        let mos_range = mos_range(&records);
        Manifest { kind, root, records, mos_range }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// MOS normalized to [0, 1] by the recorded min-max statistics.
    pub fn normalized_mos(&self, record: &Record) -> Option<f64> {
        let raw = record.mos()?;
        let (lo, hi) = self.mos_range?;
        Some(normalize_mos(raw, lo, hi))
    }
}

pub fn normalize_mos(raw: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        (raw - lo) / (hi - lo)
    } else {
        0.0
    }
}

pub fn denormalize_mos(norm: f64, lo: f64, hi: f64) -> f64 {
    norm * (hi - lo) + lo
}

fn mos_range(records: &[Record]) -> Option<(f64, f64)> {
    let values: Vec<f64> = records.iter().filter_map(|r| r.mos()).collect();
    if values.is_empty() {
        return None;
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Some((lo, hi))
}

/// Identifies the manifest kind from its CSV header.
pub fn detect_kind(path: &Path) -> Result<ManifestKind> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Parse { path: path.display().to_string(), row: 0, msg: e.to_string() })?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Parse { path: path.display().to_string(), row: 0, msg: e.to_string() })?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    kind_from_headers(&headers).ok_or_else(|| Error::Parse {
        path: path.display().to_string(),
        row: 0,
        msg: format!("unrecognized header {headers:?}"),
    })
}

fn kind_from_headers(headers: &[String]) -> Option<ManifestKind> {
    let h: Vec<&str> = headers.iter().map(|s| s.as_str()).collect();
    match h.as_slice() {
        ["dist_path", "ref_path", "mos"] => Some(ManifestKind::MosFr),
        ["dist_path", "mos"] => Some(ManifestKind::MosNr),
        ["ref_path", "a_path", "b_path", "p_ab"] => Some(ManifestKind::TwoAfc),
        _ => {
            if h.len() >= 3 && h[0] == "dist_path" {
                let k = h.len() - 1;
                let ok = (1..=k).all(|i| h[i] == format!("p{i}"));
                if ok {
                    return Some(ManifestKind::Distribution(k));
                }
            }
            None
        }
    }
}

fn expected_headers(kind: ManifestKind) -> Vec<String> {
    match kind {
        ManifestKind::MosFr => vec!["dist_path".into(), "ref_path".into(), "mos".into()],
        ManifestKind::MosNr => vec!["dist_path".into(), "mos".into()],
        ManifestKind::TwoAfc => vec![
            "ref_path".into(),
            "a_path".into(),
            "b_path".into(),
            "p_ab".into(),
        ],
        ManifestKind::Distribution(k) => {
            let mut h = vec!["dist_path".into()];
            h.extend((1..=k).map(|i| format!("p{i}")));
            h
        }
    }
}

/// Parses and validates a manifest of the given kind. Every referenced
/// file must exist. `declared_mos_range`, when provided, bounds the raw
/// MOS column; values outside it are row-addressed errors.
pub fn load_manifest(
    path: &Path,
    kind: ManifestKind,
    declared_mos_range: Option<(f64, f64)>,
) -> Result<Manifest> {
    let path_str = path.display().to_string();
    let row_err = |row: usize, msg: String| Error::Parse { path: path_str.clone(), row, msg };

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| row_err(0, e.to_string()))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| row_err(0, e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let expected = expected_headers(kind);
    if headers != expected {
        return Err(row_err(
            0,
            format!("header {headers:?} does not match expected {expected:?}"),
        ));
    }

    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let rownum = i + 1;
        let row = row.map_err(|e| row_err(rownum, e.to_string()))?;
        let fields: Vec<&str> = row.iter().map(str::trim).collect();
        if fields.len() != expected.len() {
            return Err(row_err(
                rownum,
                format!("expected {} columns, got {}", expected.len(), fields.len()),
            ));
        }
        let parse_num = |s: &str, what: &str| -> Result<f64> {
            let v: f64 = s
                .parse()
                .map_err(|_| row_err(rownum, format!("bad {what} value '{s}'")))?;
            if !v.is_finite() {
                return Err(row_err(rownum, format!("{what} value '{s}' is not finite")));
            }
            Ok(v)
        };
        let check_file = |rel: &str| -> Result<PathBuf> {
            let p = root.join(rel);
            if !p.is_file() {
                return Err(row_err(rownum, format!("missing file '{rel}'")));
            }
            Ok(p)
        };
        let check_mos = |v: f64| -> Result<f64> {
            if let Some((lo, hi)) = declared_mos_range {
                if v < lo || v > hi {
                    return Err(row_err(
                        rownum,
                        format!("mos {v} outside declared range [{lo}, {hi}]"),
                    ));
                }
            }
            Ok(v)
        };
        let record = match kind {
            ManifestKind::MosFr => Record::MosFr {
                dist: check_file(fields[0])?,
                reference: check_file(fields[1])?,
                mos: check_mos(parse_num(fields[2], "mos")?)?,
            },
            ManifestKind::MosNr => Record::MosNr {
                dist: check_file(fields[0])?,
                mos: check_mos(parse_num(fields[1], "mos")?)?,
            },
            ManifestKind::Distribution(k) => {
                let dist = check_file(fields[0])?;
                let mut probs = Vec::with_capacity(k);
                for (j, f) in fields[1..].iter().enumerate() {
                    let v = parse_num(f, &format!("p{}", j + 1))?;
                    if v < 0.0 {
                        return Err(row_err(rownum, format!("p{} = {v} is negative", j + 1)));
                    }
                    probs.push(v);
                }
                let sum: f64 = probs.iter().sum();
                if (sum - 1.0).abs() > 1e-4 {
                    return Err(row_err(rownum, format!("distribution sums to {sum}")));
                }
                // renormalize so downstream simplex checks hold exactly
                for p in probs.iter_mut() {
                    *p /= sum;
                }
                Record::Distribution { dist, probs }
            }
            ManifestKind::TwoAfc => {
                let p_ab = parse_num(fields[3], "p_ab")?;
                if !(0.0..=1.0).contains(&p_ab) {
                    return Err(row_err(rownum, format!("p_ab {p_ab} outside [0, 1]")));
                }
                Record::TwoAfc {
                    reference: check_file(fields[0])?,
                    a: check_file(fields[1])?,
                    b: check_file(fields[2])?,
                    p_ab,
                }
            }
        };
        records.push(record);
    }
    Ok(Manifest::from_records(kind, root, records))
}

/// Serializes a manifest back to its CSV schema, with every path written
/// relative to `out_dir` (falling back to the absolute path when no
/// relative form exists).
pub fn write_manifest(manifest: &Manifest, out_path: &Path) -> Result<()> {
    let out_dir = out_path.parent().unwrap_or_else(|| Path::new("."));
    let rel = |p: &Path| -> String {
        relative_to(p, out_dir)
            .unwrap_or_else(|| p.to_path_buf())
            .to_string_lossy()
            .replace('\\', "/")
    };
    let mut text = String::new();
    text.push_str(&expected_headers(manifest.kind).join(","));
    text.push('\n');
    for r in &manifest.records {
        let line = match r {
            Record::MosFr { dist, reference, mos } => {
                format!("{},{},{}", rel(dist), rel(reference), mos)
            }
            Record::MosNr { dist, mos } => format!("{},{}", rel(dist), mos),
            Record::Distribution { dist, probs } => {
                let ps: Vec<String> = probs.iter().map(|p| p.to_string()).collect();
                format!("{},{}", rel(dist), ps.join(","))
            }
            Record::TwoAfc { reference, a, b, p_ab } => {
                format!("{},{},{},{}", rel(reference), rel(a), rel(b), p_ab)
            }
        };
        text.push_str(&line);
        text.push('\n');
    }
    std::fs::write(out_path, text)?;
    Ok(())
}

fn relative_to(target: &Path, base: &Path) -> Option<PathBuf> {
    let target = target.canonicalize().ok()?;
    let base = base.canonicalize().ok()?;
    let mut t = target.components().peekable();
    let mut b = base.components().peekable();
    while let (Some(x), Some(y)) = (t.peek(), b.peek()) {
        if x == y {
            t.next();
            b.next();
        } else {
            break;
        }
    }
    let mut rel = PathBuf::new();
    for _ in b {
        rel.push("..");
    }
    for c in t {
        rel.push(c);
    }
    Some(rel)
}

fn floor_counts(total: usize, ratios: (f64, f64, f64)) -> [usize; 3] {
    let ratios = [ratios.0, ratios.1, ratios.2];
    let mut counts = [0usize; 3];
    for (c, r) in counts.iter_mut().zip(&ratios) {
        *c = (total as f64 * r).floor() as usize;
    }
    // leftovers go train -> val -> test
    let mut leftover = total - counts.iter().sum::<usize>();
    let mut i = 0;
    while leftover > 0 {
        counts[i % 3] += 1;
        leftover -= 1;
        i += 1;
    }
    counts
}

fn validate_ratios(ratios: (f64, f64, f64)) -> Result<()> {
    let sum = ratios.0 + ratios.1 + ratios.2;
    if (sum - 1.0).abs() > 1e-9 || ratios.0 < 0.0 || ratios.1 < 0.0 || ratios.2 < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "split ratios must be non-negative and sum to 1, got {ratios:?}"
        )));
    }
    Ok(())
}

/// Splits a reference-bearing manifest into train/val/test so that every
/// distorted image follows its reference and no reference ever appears in
/// two splits. References are shuffled with the seeded generator, then
/// partitioned by floor counts with leftovers assigned train, val, test.
pub fn split_by_reference(
    manifest: &Manifest,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<[Manifest; 3]> {
    validate_ratios(ratios)?;
    if !manifest.kind.has_reference() {
        return Err(Error::UnsupportedKind(format!(
            "manifest kind {} has no reference column; use a record-level split",
            manifest.kind.describe()
        )));
    }
    // unique references in first-appearance order
    let mut refs: Vec<PathBuf> = Vec::new();
    let mut seen: BTreeMap<PathBuf, usize> = BTreeMap::new();
    for r in &manifest.records {
        let p = r.reference().unwrap().to_path_buf();
        if !seen.contains_key(&p) {
            seen.insert(p.clone(), refs.len());
            refs.push(p);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    refs.shuffle(&mut rng);
    let counts = floor_counts(refs.len(), ratios);

    let mut assignment: BTreeMap<PathBuf, usize> = BTreeMap::new();
    let mut start = 0;
    for (split, &count) in counts.iter().enumerate() {
        for r in &refs[start..start + count] {
            assignment.insert(r.clone(), split);
        }
        start += count;
    }

    let mut buckets: [Vec<Record>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for r in &manifest.records {
        let split = assignment[r.reference().unwrap()];
        buckets[split].push(r.clone());
    }
    Ok(buckets.map(|records| Manifest::from_records(manifest.kind, manifest.root.clone(), records)))
}

/// Plain record-level split for kinds without a reference column.
pub fn split_records(
    manifest: &Manifest,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<[Manifest; 3]> {
    validate_ratios(ratios)?;
    let mut idx: Vec<usize> = (0..manifest.records.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let counts = floor_counts(idx.len(), ratios);
    let mut buckets: [Vec<Record>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let mut start = 0;
    for (split, &count) in counts.iter().enumerate() {
        for &i in &idx[start..start + count] {
            buckets[split].push(manifest.records[i].clone());
        }
        start += count;
    }
    Ok(buckets.map(|records| Manifest::from_records(manifest.kind, manifest.root.clone(), records)))
}

// ── samples ─────────────────────────────────────────────────────────

/// One loaded training/evaluation sample. MOS labels are normalized.
#[derive(Debug, Clone)]
pub enum Sample<T> {
    MosFr { distorted: Tensor<T>, reference: Tensor<T>, label: f64 },
    MosNr { image: Tensor<T>, label: f64 },
    Distribution { image: Tensor<T>, probs: Vec<f64> },
    TwoAfc { reference: Tensor<T>, a: Tensor<T>, b: Tensor<T>, p_ab: f64 },
}

impl<T: Scalar> Sample<T> {
    fn images(&self) -> Vec<&Tensor<T>> {
        match self {
            Sample::MosFr { distorted, reference, .. } => vec![distorted, reference],
            Sample::MosNr { image, .. } => vec![image],
            Sample::Distribution { image, .. } => vec![image],
            Sample::TwoAfc { reference, a, b, .. } => vec![reference, a, b],
        }
    }

    fn with_images(&self, mut images: Vec<Tensor<T>>) -> Sample<T> {
        match self {
            Sample::MosFr { label, .. } => {
                let reference = images.pop().unwrap();
                let distorted = images.pop().unwrap();
                Sample::MosFr { distorted, reference, label: *label }
            }
            Sample::MosNr { label, .. } => Sample::MosNr { image: images.pop().unwrap(), label: *label },
            Sample::Distribution { probs, .. } => Sample::Distribution {
                image: images.pop().unwrap(),
                probs: probs.clone(),
            },
            Sample::TwoAfc { p_ab, .. } => {
                let b = images.pop().unwrap();
                let a = images.pop().unwrap();
                let reference = images.pop().unwrap();
                Sample::TwoAfc { reference, a, b, p_ab: *p_ab }
            }
        }
    }
}

/// Loaded samples with their kind and normalization statistics.
#[derive(Debug, Clone)]
pub struct Dataset<T> {
    pub kind: ManifestKind,
    pub samples: Vec<Sample<T>>,
    pub mos_range: Option<(f64, f64)>,
}

impl<T: Scalar> Dataset<T> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Reads every referenced image of a manifest. `resize_shorter` applies
/// aspect-preserving resizing first when configured.
pub fn load_dataset<T: Scalar>(
    manifest: &Manifest,
    resize_shorter: Option<usize>,
) -> Result<Dataset<T>> {
    let load = |p: &Path| -> Result<Tensor<T>> {
        let img = load_image::<T>(p)?;
        match resize_shorter {
            Some(target) => resize_shorter_side(&img, target),
            None => Ok(img),
        }
    };
    let mut samples = Vec::with_capacity(manifest.records.len());
    for r in &manifest.records {
        let sample = match r {
            Record::MosFr { dist, reference, .. } => Sample::MosFr {
                distorted: load(dist)?,
                reference: load(reference)?,
                label: manifest.normalized_mos(r).unwrap(),
            },
            Record::MosNr { dist, .. } => Sample::MosNr {
                image: load(dist)?,
                label: manifest.normalized_mos(r).unwrap(),
            },
            Record::Distribution { dist, probs } => Sample::Distribution {
                image: load(dist)?,
                probs: probs.clone(),
            },
            Record::TwoAfc { reference, a, b, p_ab } => Sample::TwoAfc {
                reference: load(reference)?,
                a: load(a)?,
                b: load(b)?,
                p_ab: *p_ab,
            },
        };
        samples.push(sample);
    }
    Ok(Dataset { kind: manifest.kind, samples, mos_range: manifest.mos_range })
}

/// Rescales so the shorter side equals `target`, keeping aspect ratio;
/// the longer side rounds to nearest. Inputs already at the target are
/// returned unchanged.
pub fn resize_shorter_side<T: Scalar>(img: &Tensor<T>, target: usize) -> Result<Tensor<T>> {
    if target == 0 {
        return Err(Error::InvalidArgument("resize target must be positive".into()));
    }
    let (h, w) = match img.shape() {
        [_, h, w] => (*h, *w),
        other => {
            return Err(Error::ShapeMismatch(format!(
                "resize_shorter_side expects C×H×W, got {other:?}"
            )))
        }
    };
    let shorter = h.min(w);
    if shorter == target {
        return Ok(img.clone());
    }
    let scale = target as f64 / shorter as f64;
    let (oh, ow) = if h <= w {
        (target, (w as f64 * scale).round() as usize)
    } else {
        ((h as f64 * scale).round() as usize, target)
    };
    tensor::bilinear_resize(img, oh.max(1), ow.max(1))
}

// ── augmentation ────────────────────────────────────────────────────

/// Spatial augmentation settings. The same crop offsets and flip
/// decisions apply to every image of a sample, so spatial correspondence
/// within pairs and triplets is preserved; labels never change.
#[derive(Debug, Clone, Copy)]
pub struct AugmentConfig {
    pub crop_h: usize,
    pub crop_w: usize,
    pub hflip_prob: f64,
    pub vflip_prob: f64,
    /// Random shorter-side target drawn per sample from this inclusive
    /// range before cropping (off by default; used for datasets whose
    /// protocol resizes into a band such as 384..=416).
    pub resize_shorter_range: Option<(usize, usize)>,
    pub seed: u64,
}

fn crop<T: Scalar>(img: &Tensor<T>, y0: usize, x0: usize, ch: usize, cw: usize) -> Tensor<T> {
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    debug_assert!(y0 + ch <= h && x0 + cw <= w);
    let mut out = vec![T::zero(); c * ch * cw];
    for ci in 0..c {
        for y in 0..ch {
            let src = ci * h * w + (y0 + y) * w + x0;
            let dst = ci * ch * cw + y * cw;
            out[dst..dst + cw].copy_from_slice(&img.data()[src..src + cw]);
        }
    }
    Tensor::new(vec![c, ch, cw], out).expect("crop shape")
}

/// Mirrors the width axis.
pub fn flip_horizontal<T: Scalar>(img: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let mut out = vec![T::zero(); c * h * w];
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                out[ci * h * w + y * w + x] = img.data()[ci * h * w + y * w + (w - 1 - x)];
            }
        }
    }
    Tensor::new(vec![c, h, w], out).expect("flip shape")
}

/// Mirrors the height axis.
pub fn flip_vertical<T: Scalar>(img: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let mut out = vec![T::zero(); c * h * w];
    for ci in 0..c {
        for y in 0..h {
            let src = ci * h * w + (h - 1 - y) * w;
            let dst = ci * h * w + y * w;
            out[dst..dst + w].copy_from_slice(&img.data()[src..src + w]);
        }
    }
    Tensor::new(vec![c, h, w], out).expect("flip shape")
}

/// Augments one sample with the substream for `sample_index`, so results
/// do not depend on loader parallelism.
pub fn augment<T: Scalar>(
    sample: &Sample<T>,
    cfg: &AugmentConfig,
    sample_index: u64,
) -> Result<Sample<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(sample_index);

    let images = sample.images();
    let resize_target = match cfg.resize_shorter_range {
        Some((lo, hi)) => {
            if lo > hi || lo == 0 {
                return Err(Error::InvalidArgument(format!(
                    "bad shorter-side range {lo}..={hi}"
                )));
            }
            Some(rng.gen_range(lo..=hi))
        }
        None => None,
    };
    let resized: Vec<Tensor<T>>;
    let images: Vec<&Tensor<T>> = match resize_target {
        Some(target) => {
            resized = images
                .iter()
                .map(|img| resize_shorter_side(img, target))
                .collect::<Result<_>>()?;
            resized.iter().collect()
        }
        None => images,
    };
    let (h, w) = (images[0].shape()[1], images[0].shape()[2]);
    if cfg.crop_h > h || cfg.crop_w > w {
        return Err(Error::InvalidArgument(format!(
            "crop {}×{} larger than image {h}×{w}",
            cfg.crop_h, cfg.crop_w
        )));
    }
    let y0 = if cfg.crop_h < h { rng.gen_range(0..=h - cfg.crop_h) } else { 0 };
    let x0 = if cfg.crop_w < w { rng.gen_range(0..=w - cfg.crop_w) } else { 0 };
    let hflip = rng.gen::<f64>() < cfg.hflip_prob;
    let vflip = rng.gen::<f64>() < cfg.vflip_prob;

    let transformed: Vec<Tensor<T>> = images
        .into_iter()
        .map(|img| {
            let mut out = crop(img, y0, x0, cfg.crop_h, cfg.crop_w);
            if hflip {
                out = flip_horizontal(&out);
            }
            if vflip {
                out = flip_vertical(&out);
            }
            out
        })
        .collect();
    Ok(sample.with_images(transformed))
}
