//! Datasets, client shards, and the non-IID partitioner.

pub mod idx;
mod partition;

pub use partition::{partition_iid, partition_non_iid};

use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::Float;

/// Number of output classes.
pub const CLASSES: usize = 10;

/// A labeled image set: `n × 784` pixels in `[0, 1]` plus labels `0..=9`.
#[derive(Clone, Debug)]
pub struct Dataset<F> {
    pub images: Array2<F>,
    pub labels: Vec<u8>,
}

impl<F: Float> Dataset<F> {
    pub fn new(images: Array2<F>, labels: Vec<u8>) -> Result<Self> {
        if images.nrows() != labels.len() {
            return Err(Error::Dataset(format!(
                "{} images but {} labels",
                images.nrows(),
                labels.len()
            )));
        }
        if images.ncols() != idx::IMAGE_DIM {
            return Err(Error::Dataset(format!(
                "images must be {} wide, got {}",
                idx::IMAGE_DIM,
                images.ncols()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= CLASSES) {
            return Err(Error::Dataset(format!("label {l} outside 0..{CLASSES}")));
        }
        Ok(Self { images, labels })
    }

    /// Load a matched IDX image/label pair.
    pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Self> {
        let images = idx::read_images(images_path.as_ref())?;
        let labels = idx::read_labels(labels_path.as_ref())?;
        if images.nrows() != labels.len() {
            return Err(Error::Dataset(format!(
                "{} has {} images but {} has {} labels",
                images_path.as_ref().display(),
                images.nrows(),
                labels_path.as_ref().display(),
                labels.len()
            )));
        }
        Self::new(images, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_counts(&self) -> [usize; CLASSES] {
        let mut counts = [0usize; CLASSES];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }
}

/// One client's local data.
#[derive(Clone, Debug)]
pub struct Shard<F> {
    pub owner: u32,
    pub images: Array2<F>,
    pub labels: Vec<u8>,
}

impl<F: Float> Shard<F> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Number of distinct labels present (non-IID severity at a glance).
    pub fn distinct_labels(&self) -> usize {
        let mut seen = [false; CLASSES];
        for &l in &self.labels {
            seen[l as usize] = true;
        }
        seen.iter().filter(|&&s| s).count()
    }
}

/// Materialize the given dataset rows as a client shard.
pub(crate) fn gather_shard<F: Float>(ds: &Dataset<F>, owner: u32, indices: &[usize]) -> Shard<F> {
    let mut images = Array2::zeros((indices.len(), idx::IMAGE_DIM));
    let mut labels = Vec::with_capacity(indices.len());
    for (row, &src) in indices.iter().enumerate() {
        images.row_mut(row).assign(&ds.images.row(src));
        labels.push(ds.labels[src]);
    }
    Shard { owner, images, labels }
}
