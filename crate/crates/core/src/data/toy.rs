//! Procedural class-structured images for tests and smoke runs.
//!
//! Class `k` is an oriented sinusoidal grating over a tinted background.
//! Tints repeat every two classes, so color alone does not separate them.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::Array4;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::data::dataset::{split_for_protocol, LabeledDataset, RetrievalData, RetrievalProtocol, Split};
use crate::error::{Error, Result};
use crate::seed::{self, stream};
use crate::Images;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ToySpec {
    pub classes: usize,
    pub per_class: usize,
    pub side: usize,
    pub seed: u64,
}

/// Raw `[0, 1]` pixels, rows grouped by class.
pub fn generate(spec: &ToySpec) -> (Images, Vec<usize>) {
    let n = spec.classes * spec.per_class;
    let side = spec.side;
    let mut images = Array4::zeros((n, 3, side, side));
    let mut labels = Vec::with_capacity(n);
    let noise = Normal::new(0.0, 0.04).expect("valid sigma");
    let mut rng = seed::rng(spec.seed, &[stream::TOY]);
    for k in 0..spec.classes {
        let tint_phase = 2.0 * PI * (k / 2) as f64 / spec.classes.div_ceil(2).max(1) as f64;
        let tint: [f64; 3] =
            std::array::from_fn(|ch| 0.5 + 0.2 * (tint_phase + 2.0 * PI * ch as f64 / 3.0).cos());
        let angle = PI * k as f64 / spec.classes as f64;
        let (dx, dy) = (angle.cos(), angle.sin());
        let freq = 2.0 * PI * (1.5 + (k % 3) as f64 * 0.5) / side as f64;
        for _ in 0..spec.per_class {
            let row = labels.len();
            labels.push(k);
            let amp = rng.random_range(0.15..0.3);
            let phase = rng.random_range(0.0..2.0 * PI);
            let jitter: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.08..0.08));
            for r in 0..side {
                for c in 0..side {
                    let t = (c as f64 * dx + r as f64 * dy) * freq + phase;
                    let g = amp * t.sin();
                    for ch in 0..3 {
                        let v = tint[ch] + jitter[ch] + g + noise.sample(&mut rng);
                        images[[row, ch, r, c]] = v.clamp(0.0, 1.0);
                    }
                }
            }
        }
    }
    (images, labels)
}

fn class_names(classes: usize) -> Vec<String> {
    (0..classes).map(|k| format!("class_{k}")).collect()
}

/// A normalized train split built in memory.
pub fn dataset(spec: &ToySpec) -> Result<LabeledDataset> {
    let (raw, labels) = generate(spec);
    LabeledDataset::from_raw("toy", Split::Train, raw, labels, class_names(spec.classes), None)
}

/// Train plus an independently drawn test split under the given protocol.
pub fn retrieval_data(
    spec: &ToySpec,
    test_per_class: usize,
    protocol: RetrievalProtocol,
) -> Result<RetrievalData> {
    let train = dataset(spec)?;
    let test_spec = ToySpec {
        per_class: test_per_class,
        seed: seed::derive(spec.seed, &[0x7e57]),
        ..spec.clone()
    };
    let (raw, labels) = generate(&test_spec);
    let test = LabeledDataset::from_raw(
        "toy",
        Split::Query,
        raw,
        labels,
        class_names(spec.classes),
        Some(train.norm_stats.clone()),
    )?;
    split_for_protocol(train, test, protocol)
}

/// Writes `root/name/{train,test}/class_k/NNNNN.png`.
pub fn write_png_layout(
    root: &Path,
    name: &str,
    spec: &ToySpec,
    test_per_class: usize,
) -> Result<()> {
    let test_spec = ToySpec {
        per_class: test_per_class,
        seed: seed::derive(spec.seed, &[0x7e57]),
        ..spec.clone()
    };
    for (split, s) in [("train", spec), ("test", &test_spec)] {
        let (images, labels) = generate(s);
        for (row, &y) in labels.iter().enumerate() {
            let dir = root.join(name).join(split).join(format!("class_{y}"));
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let mut img = RgbImage::new(s.side as u32, s.side as u32);
            for (x, yy, px) in img.enumerate_pixels_mut() {
                let v = |ch| (images[[row, ch, yy as usize, x as usize]] * 255.0).round() as u8;
                *px = Rgb([v(0), v(1), v(2)]);
            }
            let path = dir.join(format!("{row:05}.png"));
            img.save(&path).map_err(|e| Error::Image {
                path: path.clone(),
                message: e.to_string(),
            })?;
        }
    }
    Ok(())
}
