use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{s, Array4, Axis};
use rand::seq::index;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ensure, Error, Result};
use crate::seed::Rng;
use crate::Images;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Database,
    Query,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Database => "database",
            Split::Query => "query",
        })
    }
}

/// Per-channel z-score statistics, computed on the train split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Statistics of raw `[0, 1]` pixels over every image and location.
    pub fn compute(raw: &Images) -> Self {
        let channels = raw.shape()[1];
        let mut mean = Vec::with_capacity(channels);
        let mut std = Vec::with_capacity(channels);
        for ch in 0..channels {
            let plane = raw.index_axis(Axis(1), ch);
            let n = plane.len().max(1) as f64;
            let m = plane.sum() / n;
            let var = plane.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            mean.push(m);
            // Constant channels would otherwise divide by zero.
            std.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        NormStats { mean, std }
    }

    pub fn identity(channels: usize) -> Self {
        NormStats {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, images: &mut Images) {
        for (ch, mut plane) in images.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (self.mean[ch], self.std[ch]);
            plane.mapv_inplace(|v| (v - m) / s);
        }
    }

    pub fn denormalize(&self, images: &mut Images) {
        for (ch, mut plane) in images.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (self.mean[ch], self.std[ch]);
            plane.mapv_inplace(|v| v * s + m);
        }
    }

    /// Image of the raw range `[0, 1]` in normalized space, per channel.
    pub fn normalized_bounds(&self) -> Vec<(f64, f64)> {
        self.mean
            .iter()
            .zip(&self.std)
            .map(|(m, s)| ((0.0 - m) / s, (1.0 - m) / s))
            .collect()
    }

    pub fn clamp_to_valid(&self, images: &mut Images) {
        for (ch, mut plane) in images.axis_iter_mut(Axis(1)).enumerate() {
            let (lo, hi) = self.normalized_bounds()[ch];
            plane.mapv_inplace(|v| v.clamp(lo, hi));
        }
    }
}

/// Class-indexed, normalized images for one split.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub name: String,
    pub split: Split,
    pub images: Images,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub class_index: Vec<Vec<usize>>,
    pub norm_stats: NormStats,
}

impl LabeledDataset {
    /// Builds a dataset from already-normalized images, checking invariants.
    pub fn new(
        name: impl Into<String>,
        split: Split,
        images: Images,
        labels: Vec<usize>,
        class_names: Vec<String>,
        norm_stats: NormStats,
    ) -> Result<Self> {
        let num_classes = class_names.len();
        ensure!(num_classes > 0, Validation, "zero classes found");
        ensure!(
            images.shape()[0] == labels.len(),
            Validation,
            "image count {} != label count {}",
            images.shape()[0],
            labels.len()
        );
        ensure!(
            norm_stats.channels() == images.shape()[1],
            Validation,
            "norm stats cover {} channels, images have {}",
            norm_stats.channels(),
            images.shape()[1]
        );
        let mut class_index = vec![Vec::new(); num_classes];
        for (row, &y) in labels.iter().enumerate() {
            ensure!(
                y < num_classes,
                Validation,
                "label {y} at row {row} outside [0, {num_classes})"
            );
            class_index[y].push(row);
        }
        Ok(LabeledDataset {
            name: name.into(),
            split,
            images,
            labels,
            num_classes,
            class_names,
            class_index,
            norm_stats,
        })
    }

    /// Builds from raw `[0, 1]` pixels, normalizing with `stats` (or stats
    /// computed on these pixels when `None`).
    pub fn from_raw(
        name: impl Into<String>,
        split: Split,
        mut raw: Images,
        labels: Vec<usize>,
        class_names: Vec<String>,
        stats: Option<NormStats>,
    ) -> Result<Self> {
        let stats = stats.unwrap_or_else(|| NormStats::compute(&raw));
        stats.normalize(&mut raw);
        Self::new(name, split, raw, labels, class_names, stats)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.images.shape()[1]
    }

    pub fn image_side(&self) -> usize {
        self.images.shape()[2]
    }

    pub fn class_population(&self, class_id: usize) -> usize {
        self.class_index.get(class_id).map_or(0, Vec::len)
    }

    pub fn min_class_population(&self) -> usize {
        self.class_index.iter().map(Vec::len).min().unwrap_or(0)
    }

    /// Gathers rows into a new tensor.
    pub fn gather(&self, rows: &[usize]) -> Images {
        gather_rows(&self.images, rows)
    }

    /// Keeps the first `per_class` rows of every class (row order preserved).
    pub fn take_per_class(&self, per_class: usize) -> Result<Self> {
        let mut rows: Vec<usize> = self
            .class_index
            .iter()
            .flat_map(|idx| idx.iter().take(per_class).copied())
            .collect();
        rows.sort_unstable();
        let labels = rows.iter().map(|&r| self.labels[r]).collect();
        Self::new(
            self.name.clone(),
            self.split,
            self.gather(&rows),
            labels,
            self.class_names.clone(),
            self.norm_stats.clone(),
        )
    }

    /// SHA-256 over images and labels; used to assert that every method in
    /// one experiment is scored against the same query and database sets.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.images.shape().len() as u64).to_le_bytes());
        for &d in self.images.shape() {
            h.update((d as u64).to_le_bytes());
        }
        for v in self.images.iter() {
            h.update(v.to_le_bytes());
        }
        for &y in &self.labels {
            h.update((y as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

pub fn gather_rows(images: &Images, rows: &[usize]) -> Images {
    let (_, c, h, w) = images.dim();
    let mut out = Array4::zeros((rows.len(), c, h, w));
    for (dst, &r) in rows.iter().enumerate() {
        out.slice_mut(s![dst, .., .., ..])
            .assign(&images.slice(s![r, .., .., ..]));
    }
    out
}

/// Row indices of a without-replacement sample from one class.
pub fn sample_class_rows(
    ds: &LabeledDataset,
    class_id: usize,
    batch: usize,
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    ensure!(
        class_id < ds.num_classes,
        Validation,
        "class {class_id} outside [0, {})",
        ds.num_classes
    );
    let pop = &ds.class_index[class_id];
    ensure!(
        batch <= pop.len(),
        Validation,
        "batch {batch} exceeds class {class_id} population {}",
        pop.len()
    );
    Ok(index::sample(rng, pop.len(), batch)
        .into_iter()
        .map(|i| pop[i])
        .collect())
}

/// A batch of images drawn without replacement from one class.
pub fn sample_class_batch(
    ds: &LabeledDataset,
    class_id: usize,
    batch: usize,
    rng: &mut Rng,
) -> Result<Images> {
    let rows = sample_class_rows(ds, class_id, batch, rng)?;
    Ok(ds.gather(&rows))
}

/// Which rows of the evaluation protocol serve as the retrieval database.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RetrievalProtocol {
    /// Database = full train split, queries = test split.
    #[default]
    TrainDatabase,
    /// Queries = first `query_per_class` test images of each class, database
    /// = the remaining test images. Both are disjoint from the train split.
    TestHoldout { query_per_class: usize },
}

/// Train, database and query splits loaded together with train-split stats.
#[derive(Debug, Clone)]
pub struct RetrievalData {
    pub train: LabeledDataset,
    pub database: LabeledDataset,
    pub query: LabeledDataset,
}

struct RawSplit {
    images: Images,
    labels: Vec<usize>,
    class_names: Vec<String>,
}

/// Loads one split of dataset `name` under `root`.
///
/// Layouts, checked in order:
/// * CIFAR-10 binary batches: `root/name/[cifar-10-batches-bin/]data_batch_{1..5}.bin`
///   and `test_batch.bin`;
/// * image folders: `root/name/{train,test}/<class>/*.png`, class ids assigned
///   by sorted directory name.
///
/// Normalization always uses statistics of the train split. With the default
/// protocol the database split is the train split and the query split is the
/// test split.
pub fn load_dataset(root: &Path, name: &str, split: Split) -> Result<LabeledDataset> {
    let data = load_retrieval_data(root, name, RetrievalProtocol::TrainDatabase)?;
    Ok(match split {
        Split::Train => data.train,
        Split::Database => data.database,
        Split::Query => data.query,
    })
}

pub fn load_retrieval_data(
    root: &Path,
    name: &str,
    protocol: RetrievalProtocol,
) -> Result<RetrievalData> {
    let dir = root.join(name);
    if !dir.exists() {
        return Err(Error::io(
            &dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
        ));
    }
    let (train_raw, test_raw) = match cifar_dir(&dir) {
        Some(bin) => (
            read_cifar_batches(
                &(1..=5)
                    .map(|i| bin.join(format!("data_batch_{i}.bin")))
                    .collect::<Vec<_>>(),
            )?,
            read_cifar_batches(&[bin.join("test_batch.bin")])?,
        ),
        None => {
            let train = read_image_folder(&dir.join("train"))?;
            let test = read_image_folder(&dir.join("test"))?;
            ensure!(
                train.class_names == test.class_names,
                Validation,
                "train classes {:?} differ from test classes {:?}",
                train.class_names,
                test.class_names
            );
            (train, test)
        }
    };

    let stats = NormStats::compute(&train_raw.images);
    let train = LabeledDataset::from_raw(
        name,
        Split::Train,
        train_raw.images,
        train_raw.labels,
        train_raw.class_names.clone(),
        Some(stats.clone()),
    )?;
    let test = LabeledDataset::from_raw(
        name,
        Split::Query,
        test_raw.images,
        test_raw.labels,
        test_raw.class_names,
        Some(stats),
    )?;
    split_for_protocol(train, test, protocol)
}

/// Applies a retrieval protocol to an in-memory train/test pair.
pub fn split_for_protocol(
    train: LabeledDataset,
    test: LabeledDataset,
    protocol: RetrievalProtocol,
) -> Result<RetrievalData> {
    match protocol {
        RetrievalProtocol::TrainDatabase => {
            let mut database = train.clone();
            database.split = Split::Database;
            let mut query = test;
            query.split = Split::Query;
            Ok(RetrievalData {
                train,
                database,
                query,
            })
        }
        RetrievalProtocol::TestHoldout { query_per_class } => {
            let mut q_rows = Vec::new();
            let mut d_rows = Vec::new();
            for idx in &test.class_index {
                ensure!(
                    idx.len() > query_per_class,
                    Validation,
                    "test class has {} rows, need more than {query_per_class} for holdout",
                    idx.len()
                );
                q_rows.extend_from_slice(&idx[..query_per_class]);
                d_rows.extend_from_slice(&idx[query_per_class..]);
            }
            q_rows.sort_unstable();
            d_rows.sort_unstable();
            let subset = |rows: &[usize], split| {
                LabeledDataset::new(
                    test.name.clone(),
                    split,
                    test.gather(rows),
                    rows.iter().map(|&r| test.labels[r]).collect(),
                    test.class_names.clone(),
                    test.norm_stats.clone(),
                )
            };
            let query = subset(&q_rows, Split::Query)?;
            let database = subset(&d_rows, Split::Database)?;
            Ok(RetrievalData {
                train,
                database,
                query,
            })
        }
    }
}

fn cifar_dir(dir: &Path) -> Option<PathBuf> {
    [dir.join("cifar-10-batches-bin"), dir.to_path_buf()]
        .into_iter()
        .find(|d| d.join("data_batch_1.bin").is_file())
}

const CIFAR_SIDE: usize = 32;
const CIFAR_RECORD: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;
const CIFAR_CLASSES: [&str; 10] = [
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
];

fn read_cifar_batches(paths: &[PathBuf]) -> Result<RawSplit> {
    let mut bytes = Vec::new();
    for p in paths {
        bytes.extend(fs::read(p).map_err(|e| Error::io(p, e))?);
    }
    ensure!(
        bytes.len() % CIFAR_RECORD == 0,
        Validation,
        "CIFAR batch length {} is not a multiple of {CIFAR_RECORD}",
        bytes.len()
    );
    let n = bytes.len() / CIFAR_RECORD;
    let mut images = Array4::zeros((n, 3, CIFAR_SIDE, CIFAR_SIDE));
    let mut labels = Vec::with_capacity(n);
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        let y = rec[0] as usize;
        ensure!(y < CIFAR_CLASSES.len(), Validation, "label {y} outside [0, 10)");
        labels.push(y);
        let px = &rec[1..];
        for ch in 0..3 {
            for r in 0..CIFAR_SIDE {
                for c in 0..CIFAR_SIDE {
                    let v = px[ch * CIFAR_SIDE * CIFAR_SIDE + r * CIFAR_SIDE + c];
                    images[[i, ch, r, c]] = v as f64 / 255.0;
                }
            }
        }
    }
    Ok(RawSplit {
        images,
        labels,
        class_names: CIFAR_CLASSES.iter().map(|s| s.to_string()).collect(),
    })
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    Ok(entries)
}

fn read_image_folder(dir: &Path) -> Result<RawSplit> {
    let class_dirs: Vec<PathBuf> = sorted_entries(dir)?
        .into_iter()
        .filter(|p| p.is_dir())
        .collect();
    ensure!(
        !class_dirs.is_empty(),
        Validation,
        "zero classes found under {}",
        dir.display()
    );
    let mut pixels: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    let mut class_names = Vec::new();
    let mut shape: Option<(usize, usize, usize)> = None;
    for (y, cdir) in class_dirs.iter().enumerate() {
        class_names.push(
            cdir.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
        );
        for file in sorted_entries(cdir)? {
            let ext = file
                .extension()
                .map(|e| e.to_string_lossy().to_ascii_lowercase());
            if ext.as_deref() != Some("png") {
                continue;
            }
            let img = image::open(&file)
                .map_err(|e| Error::Image {
                    path: file.clone(),
                    message: e.to_string(),
                })?
                .to_rgb8();
            let (w, h) = (img.width() as usize, img.height() as usize);
            match shape {
                None => shape = Some((3, h, w)),
                Some(s) => ensure!(
                    s == (3, h, w),
                    Validation,
                    "{} is {w}x{h}, expected {}x{}",
                    file.display(),
                    s.2,
                    s.1
                ),
            }
            let mut planar = vec![0.0; 3 * h * w];
            for (x, yy, p) in img.enumerate_pixels() {
                for ch in 0..3 {
                    planar[ch * h * w + yy as usize * w + x as usize] = p.0[ch] as f64 / 255.0;
                }
            }
            pixels.push(planar);
            labels.push(y);
        }
    }
    let (c, h, w) = shape.ok_or_else(|| {
        Error::Validation(format!("no png images found under {}", dir.display()))
    })?;
    let flat: Vec<f64> = pixels.into_iter().flatten().collect();
    let images = Array4::from_shape_vec((labels.len(), c, h, w), flat)
        .map_err(|e| Error::Validation(e.to_string()))?;
    Ok(RawSplit {
        images,
        labels,
        class_names,
    })
}
