use hali_tensor::Tensor;
use sha2::{Digest, Sha256};

use crate::config::{hex, Shape3};
use crate::error::{HaliError, Result};

/// Images in `[-1, 1]` with one class label each.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `[N, C, H, W]`.
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>) -> Result<Self> {
        if images.shape().len() != 4 {
            return Err(HaliError::Data(format!("images must be 4-d, got {:?}", images.shape())));
        }
        if images.batch() != labels.len() {
            return Err(HaliError::Data(format!("{} images but {} labels", images.batch(), labels.len())));
        }
        Ok(Dataset { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn shape(&self) -> Shape3 {
        let s = self.images.shape();
        Shape3::new(s[1], s[2], s[3])
    }

    pub fn gather(&self, indices: &[usize]) -> Tensor<f32> {
        self.images.gather_batch(indices)
    }

    /// The first `n` examples (or all of them).
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset { images: self.images.slice_batch(0, n), labels: self.labels[..n].to_vec() }
    }

    /// Examples `start..start + n`.
    pub fn range(&self, start: usize, n: usize) -> Dataset {
        let end = (start + n).min(self.len());
        let start = start.min(end);
        Dataset { images: self.images.slice_batch(start, end - start), labels: self.labels[start..end].to_vec() }
    }

    /// sha256 over the shape, pixel bytes and labels.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for d in self.images.shape() {
            h.update((*d as u64).to_le_bytes());
        }
        for v in self.images.data() {
            h.update(v.to_le_bytes());
        }
        for l in &self.labels {
            h.update((*l as u64).to_le_bytes());
        }
        hex(&h.finalize())
    }
}
