//! MNIST ingestion and continual-learning task streams.
//!
//! A [`TaskStream`] never copies pixel data: each task holds row indices
//! into the shared base datasets plus a transform descriptor (identity or a
//! fixed pixel permutation), and batches are materialized on demand.

mod idx;

pub use idx::{read_idx_images, read_idx_labels, IMAGES_MAGIC, LABELS_MAGIC};

use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Which side of the train/test split a dataset came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Images as `(n, pixels)` intensities in `[0, 1]` plus class labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    images: Array2<f64>,
    labels: Vec<u8>,
    split: Split,
    rows: usize,
    cols: usize,
}

impl Dataset {
    /// Validates intensities and counts; `rows * cols` must match the image
    /// width.
    pub fn from_parts(
        images: Array2<f64>,
        labels: Vec<u8>,
        split: Split,
        rows: usize,
        cols: usize,
    ) -> Result<Self> {
        if images.nrows() != labels.len() {
            return Err(Error::CountMismatch {
                images: images.nrows(),
                labels: labels.len(),
            });
        }
        if rows * cols != images.ncols() {
            return Err(Error::shape(
                "dataset geometry",
                format!("{} pixels", rows * cols),
                format!("{} pixels", images.ncols()),
            ));
        }
        if images.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidConfig(
                "image intensities must lie in [0, 1]".into(),
            ));
        }
        Ok(Dataset {
            images,
            labels,
            split,
            rows,
            cols,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.images.nrows()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.images.ncols()
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn split(&self) -> Split {
        self.split
    }

    #[inline]
    pub fn images(&self) -> &Array2<f64> {
        &self.images
    }

    #[inline]
    pub fn labels(&self) -> &[u8] {
        &self.labels
    }
}

/// Loads one IDX image/label pair, normalizing intensities by 1/255.
/// Gzip-wrapped files are handled transparently.
pub fn load_mnist(images_path: &Path, labels_path: &Path, split: Split) -> Result<Dataset> {
    let images = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    if images.count != labels.len() {
        return Err(Error::CountMismatch {
            images: images.count,
            labels: labels.len(),
        });
    }
    let pixels = images.rows * images.cols;
    let data: Vec<f64> = images.pixels.iter().map(|&b| b as f64 / 255.0).collect();
    let array = Array2::from_shape_vec((images.count, pixels), data)
        .expect("idx reader already validated the byte count");
    Dataset::from_parts(array, labels, split, images.rows, images.cols)
}

/// Loads the standard four MNIST files from a directory, accepting either
/// plain or `.gz` file names.
pub fn load_mnist_dir(dir: &Path) -> Result<(Dataset, Dataset)> {
    let find = |stem: &str| -> Result<std::path::PathBuf> {
        let plain = dir.join(stem);
        if plain.exists() {
            return Ok(plain);
        }
        let gz = dir.join(format!("{stem}.gz"));
        if gz.exists() {
            return Ok(gz);
        }
        Err(Error::io(
            plain.display().to_string(),
            std::io::Error::new(std::io::ErrorKind::NotFound, "missing MNIST file"),
        ))
    };
    let train = load_mnist(
        &find("train-images-idx3-ubyte")?,
        &find("train-labels-idx1-ubyte")?,
        Split::Train,
    )?;
    let test = load_mnist(
        &find("t10k-images-idx3-ubyte")?,
        &find("t10k-labels-idx1-ubyte")?,
        Split::Test,
    )?;
    Ok((train, test))
}

/// Split-stream seed that reproduces the canonical example pairing
/// `[0,5], [1,6], [2,7], [3,8], [4,9]` in task order.
pub const EXAMPLE_PAIRING_SEED: u64 = 82720;

/// Pixel-level transform applied when a task's batches are materialized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Transform {
    Identity,
    /// Output pixel `j` reads input pixel `perm[j]`.
    PixelPermutation(Vec<u32>),
}

impl Transform {
    fn apply_row(&self, src: &[f64], dst: &mut [f64]) {
        match self {
            Transform::Identity => dst.copy_from_slice(src),
            Transform::PixelPermutation(perm) => {
                for (d, &p) in dst.iter_mut().zip(perm.iter()) {
                    *d = src[p as usize];
                }
            }
        }
    }
}

/// One task: row views into the shared bases plus its transform and the
/// classes it is evaluated on.
#[derive(Debug, Clone)]
pub struct Task {
    pub name: String,
    pub transform: Transform,
    train_rows: Vec<u32>,
    test_rows: Vec<u32>,
    pub eval_classes: Vec<u8>,
}

impl Task {
    #[inline]
    pub fn train_len(&self) -> usize {
        self.train_rows.len()
    }

    #[inline]
    pub fn test_len(&self) -> usize {
        self.test_rows.len()
    }
}

/// An ordered list of tasks over one train/test dataset pair.
#[derive(Debug, Clone)]
pub struct TaskStream {
    train: Arc<Dataset>,
    test: Arc<Dataset>,
    tasks: Vec<Task>,
}

impl TaskStream {
    /// Permuted-pixel stream: task 1 is the untouched base problem, tasks
    /// 2..=n apply fixed seeded pixel permutations to train and test alike.
    /// Every task evaluates on all classes.
    pub fn permuted(
        train: Arc<Dataset>,
        test: Arc<Dataset>,
        num_tasks: usize,
        seed: u64,
    ) -> Result<Self> {
        if num_tasks == 0 {
            return Err(Error::InvalidConfig("need at least one task".into()));
        }
        let all_classes: Vec<u8> = collect_classes(&train);
        let train_rows: Vec<u32> = (0..train.len() as u32).collect();
        let test_rows: Vec<u32> = (0..test.len() as u32).collect();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut tasks = Vec::with_capacity(num_tasks);
        for t in 0..num_tasks {
            let transform = if t == 0 {
                Transform::Identity
            } else {
                let mut perm: Vec<u32> = (0..train.pixel_count() as u32).collect();
                perm.shuffle(&mut rng);
                Transform::PixelPermutation(perm)
            };
            tasks.push(Task {
                name: format!("permuted-{}", t + 1),
                transform,
                train_rows: train_rows.clone(),
                test_rows: test_rows.clone(),
                eval_classes: all_classes.clone(),
            });
        }
        Ok(TaskStream { train, test, tasks })
    }

    /// Split stream: a seeded random partition of the ten digits into five
    /// disjoint pairs; task `t` trains and evaluates only on its pair.
    pub fn split(train: Arc<Dataset>, test: Arc<Dataset>, seed: u64) -> Result<Self> {
        let mut digits: Vec<u8> = (0..10).collect();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        digits.shuffle(&mut rng);
        let mut tasks = Vec::with_capacity(5);
        for pair in digits.chunks(2) {
            let mut classes = vec![pair[0], pair[1]];
            classes.sort_unstable();
            let train_rows = rows_with_classes(&train, &classes);
            let test_rows = rows_with_classes(&test, &classes);
            tasks.push(Task {
                name: format!("split-{}{}", classes[0], classes[1]),
                transform: Transform::Identity,
                train_rows,
                test_rows,
                eval_classes: classes,
            });
        }
        Ok(TaskStream { train, test, tasks })
    }

    #[inline]
    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    /// Keeps only the first `n` tasks.
    pub fn truncate(&mut self, n: usize) {
        self.tasks.truncate(n);
    }

    #[inline]
    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    #[inline]
    pub fn train_dataset(&self) -> &Arc<Dataset> {
        &self.train
    }

    #[inline]
    pub fn test_dataset(&self) -> &Arc<Dataset> {
        &self.test
    }

    /// Materializes training samples for task `t`. `positions` index into
    /// the task's own row list (0..task.train_len()).
    pub fn gather_train(&self, t: usize, positions: &[u32]) -> (Array2<f64>, Vec<u8>) {
        let task = &self.tasks[t];
        gather(&self.train, &task.train_rows, positions, &task.transform)
    }

    /// Materializes the full test set for task `t`.
    pub fn gather_test(&self, t: usize) -> (Array2<f64>, Vec<u8>) {
        let task = &self.tasks[t];
        let positions: Vec<u32> = (0..task.test_rows.len() as u32).collect();
        gather(&self.test, &task.test_rows, &positions, &task.transform)
    }
}

fn collect_classes(data: &Dataset) -> Vec<u8> {
    let mut seen = [false; 256];
    for &l in data.labels() {
        seen[l as usize] = true;
    }
    (0u16..256).filter(|&c| seen[c as usize]).map(|c| c as u8).collect()
}

fn rows_with_classes(data: &Dataset, classes: &[u8]) -> Vec<u32> {
    data.labels()
        .iter()
        .enumerate()
        .filter(|(_, l)| classes.contains(l))
        .map(|(i, _)| i as u32)
        .collect()
}

fn gather(
    base: &Dataset,
    rows: &[u32],
    positions: &[u32],
    transform: &Transform,
) -> (Array2<f64>, Vec<u8>) {
    let pixels = base.pixel_count();
    let mut images = Array2::zeros((positions.len(), pixels));
    let mut labels = Vec::with_capacity(positions.len());
    for (out, &pos) in positions.iter().enumerate() {
        let row = rows[pos as usize] as usize;
        let src = base.images().row(row);
        transform.apply_row(
            src.as_slice().expect("contiguous row"),
            images.row_mut(out).as_slice_mut().expect("contiguous row"),
        );
        labels.push(base.labels()[row]);
    }
    (images, labels)
}

/// Adds clamped per-pixel Gaussian noise, seeded. `sigma = 0` returns the
/// dataset unchanged.
pub fn add_gaussian_noise(data: &Dataset, sigma: f64, seed: u64) -> Result<Dataset> {
    if sigma < 0.0 {
        return Err(Error::InvalidConfig("noise sigma must be >= 0".into()));
    }
    if sigma == 0.0 {
        return Ok(data.clone());
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut images = data.images.clone();
    images.mapv_inplace(|v| (v + normal.sample(&mut rng)).clamp(0.0, 1.0));
    Ok(Dataset {
        images,
        labels: data.labels.clone(),
        split: data.split,
        rows: data.rows,
        cols: data.cols,
    })
}
