//! Synthetic leaf-with-lesion dataset: black background, one green elliptical
//! leaf per image, and a class-specific brown lesion motif with an exact
//! ground-truth mask. Class 0 is healthy; class k >= 1 draws `1 + (k-1)/3`
//! lesions of kind `(k-1) % 3` (disc, ring, bar), so classes differ by shape
//! rather than palette and a raw-pixel linear model has no easy shortcut.
//!
//! Directory form: <root>/<class-name>/<id>.ppm with <id>.mask.pgm beside it,
//! plus manifest.csv (path,label,split) with a leading metadata comment line.

use crate::mask::Mask;
use crate::pnm::{self, PnmError};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Pnm(#[from] PnmError),
    #[error("invalid dataset parameters: {0}")]
    BadParams(String),
    #[error("malformed manifest: {0}")]
    Manifest(String),
}

#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub image: Tensor,
    pub label: usize,
    pub lesion_mask: Mask,
    pub leaf_mask: Mask,
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<SyntheticSample>,
    pub validation: Vec<SyntheticSample>,
    pub num_classes: usize,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn train_pairs(&self) -> Vec<(Tensor, usize)> {
        self.train
            .iter()
            .map(|s| (s.image.clone(), s.label))
            .collect()
    }

    pub fn validation_pairs(&self) -> Vec<(Tensor, usize)> {
        self.validation
            .iter()
            .map(|s| (s.image.clone(), s.label))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct GenSpec {
    pub num_classes: usize,
    pub per_class: usize,
    pub image_size: usize,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            num_classes: 4,
            per_class: 128,
            image_size: 32,
            seed: 7,
        }
    }
}

pub fn class_name(label: usize) -> String {
    if label == 0 {
        "healthy".to_string()
    } else {
        format!("disease{label}")
    }
}

enum Shape {
    Disc {
        cx: f64,
        cy: f64,
        r: f64,
    },
    Ring {
        cx: f64,
        cy: f64,
        outer: f64,
        inner: f64,
    },
    Bar {
        cx: f64,
        cy: f64,
        half_l: f64,
        half_w: f64,
        angle: f64,
    },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Disc { cx, cy, r } => {
                let (dx, dy) = (x - cx, y - cy);
                dx * dx + dy * dy <= r * r
            }
            Shape::Ring {
                cx,
                cy,
                outer,
                inner,
            } => {
                let (dx, dy) = (x - cx, y - cy);
                let d2 = dx * dx + dy * dy;
                d2 <= outer * outer && d2 > inner * inner
            }
            Shape::Bar {
                cx,
                cy,
                half_l,
                half_w,
                angle,
            } => {
                let (dx, dy) = (x - cx, y - cy);
                let u = dx * angle.cos() + dy * angle.sin();
                let v = -dx * angle.sin() + dy * angle.cos();
                u.abs() <= half_l && v.abs() <= half_w
            }
        }
    }

    /// Radius of the bounding circle, used to keep centers inside the leaf.
    fn bound(&self) -> f64 {
        match *self {
            Shape::Disc { r, .. } => r,
            Shape::Ring { outer, .. } => outer,
            Shape::Bar { half_l, half_w, .. } => (half_l * half_l + half_w * half_w).sqrt(),
        }
    }
}

struct LeafPose {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos_t: f64,
    sin_t: f64,
}

impl LeafPose {
    fn contains(&self, x: f64, y: f64) -> bool {
        self.radial2(x, y) <= 1.0
    }

    /// Squared elliptical radius: 1.0 on the boundary.
    fn radial2(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * self.cos_t + dy * self.sin_t;
        let v = -dx * self.sin_t + dy * self.cos_t;
        (u / self.a) * (u / self.a) + (v / self.b) * (v / self.b)
    }

    /// Uniform point whose distance-to-boundary margin is at least `margin`
    /// along both axes (floored so a center always exists).
    fn sample_interior(&self, rng: &mut ChaCha8Rng, margin: f64) -> (f64, f64) {
        let a = (self.a - margin).max(0.75);
        let b = (self.b - margin).max(0.75);
        loop {
            let u = rng.gen_range(-a..=a);
            let v = rng.gen_range(-b..=b);
            if (u / a) * (u / a) + (v / b) * (v / b) <= 1.0 {
                let x = self.cx + u * self.cos_t - v * self.sin_t;
                let y = self.cy + u * self.sin_t + v * self.cos_t;
                return (x, y);
            }
        }
    }
}

fn lesion_shapes(label: usize, size: f64, pose: &LeafPose, rng: &mut ChaCha8Rng) -> Vec<Shape> {
    if label == 0 {
        return Vec::new();
    }
    let kind = (label - 1) % 3;
    let count = 1 + (label - 1) / 3;
    let mut shapes = Vec::with_capacity(count);
    for _ in 0..count {
        let proto = match kind {
            0 => Shape::Disc {
                cx: 0.0,
                cy: 0.0,
                r: 0.11 * size,
            },
            1 => Shape::Ring {
                cx: 0.0,
                cy: 0.0,
                outer: 0.14 * size,
                inner: 0.08 * size,
            },
            _ => Shape::Bar {
                cx: 0.0,
                cy: 0.0,
                half_l: 0.16 * size,
                half_w: 0.045 * size,
                angle: rng.gen_range(0.0..std::f64::consts::PI),
            },
        };
        let (cx, cy) = pose.sample_interior(rng, proto.bound());
        shapes.push(match proto {
            Shape::Disc { r, .. } => Shape::Disc { cx, cy, r },
            Shape::Ring { outer, inner, .. } => Shape::Ring {
                cx,
                cy,
                outer,
                inner,
            },
            Shape::Bar {
                half_l,
                half_w,
                angle,
                ..
            } => Shape::Bar {
                cx,
                cy,
                half_l,
                half_w,
                angle,
            },
        });
    }
    shapes
}

fn render_sample(label: usize, size: usize, rng: &mut ChaCha8Rng) -> SyntheticSample {
    let s = size as f64;
    let pose = {
        let theta = rng.gen_range(0.0..std::f64::consts::PI);
        LeafPose {
            cx: rng.gen_range(0.45 * s..0.55 * s),
            cy: rng.gen_range(0.45 * s..0.55 * s),
            a: rng.gen_range(0.25 * s..0.40 * s),
            b: rng.gen_range(0.20 * s..0.33 * s),
            cos_t: theta.cos(),
            sin_t: theta.sin(),
        }
    };
    // Per-sample base palettes; the green/brown split stays wide enough that
    // per-pixel noise can never flip the r-vs-g ordering on either side.
    let leaf_rgb = [
        rng.gen_range(0.06..0.14),
        rng.gen_range(0.48..0.60),
        rng.gen_range(0.05..0.15),
    ];
    let lesion_rgb = [
        rng.gen_range(0.45..0.60),
        rng.gen_range(0.22..0.32),
        rng.gen_range(0.05..0.12),
    ];
    let shapes = lesion_shapes(label, s, &pose, rng);

    let mut image = Tensor::zeros(&[size, size, 3]);
    let mut leaf_mask = Mask::new(size, size);
    let mut lesion_mask = Mask::new(size, size);
    for i in 0..size {
        for j in 0..size {
            let (x, y) = (j as f64 + 0.5, i as f64 + 0.5);
            if !pose.contains(x, y) {
                continue;
            }
            leaf_mask.set(i, j, true);
            let lesion = shapes.iter().any(|sh| sh.contains(x, y));
            if lesion {
                lesion_mask.set(i, j, true);
            }
            let base = if lesion { &lesion_rgb } else { &leaf_rgb };
            for c in 0..3 {
                image.set3(i, j, c, base[c] + rng.gen_range(-0.04..0.04));
            }
        }
    }
    SyntheticSample {
        image,
        label,
        lesion_mask,
        leaf_mask,
    }
}

/// Deterministic dataset for a seed: per class, the first 3/5 of samples go
/// to train and the rest to validation; both lists then get one seeded
/// shuffle so classes interleave.
pub fn generate(spec: &GenSpec) -> Result<DatasetSplit, DataError> {
    if spec.num_classes < 2 {
        return Err(DataError::BadParams(format!(
            "need at least 2 classes, got {}",
            spec.num_classes
        )));
    }
    if spec.per_class == 0 {
        return Err(DataError::BadParams("need at least 1 sample per class".into()));
    }
    if spec.image_size < 16 {
        return Err(DataError::BadParams(format!(
            "image size {} too small for lesion motifs (minimum 16)",
            spec.image_size
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut train = Vec::new();
    let mut validation = Vec::new();
    let per_class_train = spec.per_class * 3 / 5;
    for label in 0..spec.num_classes {
        for idx in 0..spec.per_class {
            let sample = render_sample(label, spec.image_size, &mut rng);
            if idx < per_class_train {
                train.push(sample);
            } else {
                validation.push(sample);
            }
        }
    }
    train.shuffle(&mut rng);
    validation.shuffle(&mut rng);
    Ok(DatasetSplit {
        train,
        validation,
        num_classes: spec.num_classes,
        seed: spec.seed,
    })
}

/// Write samples, masks, and manifest.csv under `root`.
pub fn write_dataset(split: &DatasetSplit, root: &Path) -> Result<(), DataError> {
    std::fs::create_dir_all(root)?;
    for label in 0..split.num_classes {
        std::fs::create_dir_all(root.join(class_name(label)))?;
    }
    let size = split
        .train
        .first()
        .or(split.validation.first())
        .map(|s| s.image.shape()[0])
        .ok_or_else(|| DataError::BadParams("empty dataset".into()))?;

    let mut manifest = format!(
        "# seed={} num_classes={} image_size={}\npath,label,split\n",
        split.seed, split.num_classes, size
    );
    let mut counters = vec![0usize; split.num_classes];
    for (samples, tag) in [(&split.train, "train"), (&split.validation, "validation")] {
        for sample in samples.iter() {
            let id = counters[sample.label];
            counters[sample.label] += 1;
            let rel = format!("{}/{id:04}.ppm", class_name(sample.label));
            pnm::write_ppm(&sample.image, &root.join(&rel))?;
            let mask_rel = format!("{}/{id:04}.mask.pgm", class_name(sample.label));
            pnm::write_pgm(&sample.lesion_mask.to_tensor(), &root.join(&mask_rel))?;
            manifest.push_str(&format!("{rel},{},{tag}\n", sample.label));
        }
    }
    std::fs::write(root.join("manifest.csv"), manifest)?;
    Ok(())
}

/// Read a dataset directory back. The leaf mask is recovered from the image
/// itself: background pixels are exact black, leaf pixels never are.
pub fn load_dataset(root: &Path) -> Result<DatasetSplit, DataError> {
    let manifest = std::fs::read_to_string(root.join("manifest.csv"))?;
    let mut lines = manifest.lines();
    let meta = lines
        .next()
        .ok_or_else(|| DataError::Manifest("empty file".into()))?;
    let (seed, num_classes, image_size) = parse_meta(meta)?;
    match lines.next() {
        Some("path,label,split") => {}
        other => {
            return Err(DataError::Manifest(format!(
                "expected column header, got {other:?}"
            )))
        }
    }

    let mut train = Vec::new();
    let mut validation = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let (rel, label, split_tag) = match (fields.next(), fields.next(), fields.next(), fields.next()) {
            (Some(p), Some(l), Some(s), None) => (p, l, s),
            _ => {
                return Err(DataError::Manifest(format!(
                    "row {}: expected 3 fields",
                    lineno + 3
                )))
            }
        };
        let label: usize = label
            .parse()
            .map_err(|_| DataError::Manifest(format!("row {}: bad label", lineno + 3)))?;
        if label >= num_classes {
            return Err(DataError::Manifest(format!(
                "row {}: label {label} outside {num_classes} classes",
                lineno + 3
            )));
        }
        let image = pnm::read_ppm(&root.join(rel))?;
        if image.shape() != [image_size, image_size, 3] {
            return Err(DataError::Manifest(format!(
                "{rel}: expected {image_size}x{image_size} image, got {:?}",
                image.shape()
            )));
        }
        let mask_rel = rel
            .strip_suffix(".ppm")
            .map(|stem| format!("{stem}.mask.pgm"))
            .ok_or_else(|| DataError::Manifest(format!("{rel}: expected a .ppm path")))?;
        let lesion_mask = Mask::from_tensor(&pnm::read_pgm(&root.join(&mask_rel))?);
        let mut leaf_mask = Mask::new(image_size, image_size);
        for i in 0..image_size {
            for j in 0..image_size {
                let black = (0..3).all(|c| image.at3(i, j, c) == 0.0);
                leaf_mask.set(i, j, !black);
            }
        }
        let sample = SyntheticSample {
            image,
            label,
            lesion_mask,
            leaf_mask,
        };
        match split_tag {
            "train" => train.push(sample),
            "validation" => validation.push(sample),
            other => {
                return Err(DataError::Manifest(format!(
                    "row {}: unknown split {other:?}",
                    lineno + 3
                )))
            }
        }
    }
    Ok(DatasetSplit {
        train,
        validation,
        num_classes,
        seed,
    })
}

fn parse_meta(line: &str) -> Result<(u64, usize, usize), DataError> {
    let body = line
        .strip_prefix("# ")
        .ok_or_else(|| DataError::Manifest("missing metadata line".into()))?;
    let mut seed = None;
    let mut classes = None;
    let mut size = None;
    for part in body.split_whitespace() {
        match part.split_once('=') {
            Some(("seed", v)) => seed = v.parse().ok(),
            Some(("num_classes", v)) => classes = v.parse().ok(),
            Some(("image_size", v)) => size = v.parse().ok(),
            _ => {}
        }
    }
    match (seed, classes, size) {
        (Some(s), Some(c), Some(z)) => Ok((s, c, z)),
        _ => Err(DataError::Manifest(format!("bad metadata line {line:?}"))),
    }
}
