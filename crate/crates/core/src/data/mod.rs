//! Image datasets: CIFAR and IDX loaders, normalization, augmentation and
//! seeded batching.

mod augment;
mod batch;
mod cifar;
mod idx;
mod normalize;
mod synthetic;

pub use augment::{augment, flip_horizontal, shift, MAX_SHIFT};
pub use batch::{epoch_order, BatchStream};
pub use cifar::{load_cifar, parse_cifar, reserialize_cifar, CifarVariant, CIFAR_PIXELS};
pub use idx::{load_mnist, parse_idx, write_idx, IdxArray};
pub use normalize::{FloatSet, NormMode, Normalizer};
pub use synthetic::{synthetic_images, synthetic_separable};

use crate::error::{Error, Result};

/// Images stored as `N x H x W x C` bytes with one class label each.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub classes: usize,
    pub images: Vec<u8>,
    pub labels: Vec<usize>,
    /// CIFAR-100 coarse labels, kept so files can be written back unchanged.
    pub coarse_labels: Vec<u8>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.image_len();
        &self.images[i * n..(i + 1) * n]
    }

    pub fn validate(&self) -> Result<()> {
        if self.images.len() != self.len() * self.image_len() {
            return Err(Error::Format(format!(
                "{} image bytes for {} labels of {} bytes",
                self.images.len(),
                self.len(),
                self.image_len()
            )));
        }
        if let Some(&label) = self.labels.iter().find(|&&l| l >= self.classes) {
            return Err(Error::Label {
                label,
                classes: self.classes,
            });
        }
        Ok(())
    }

    /// Items `range` as a new dataset.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Dataset {
        let n = self.image_len();
        Dataset {
            height: self.height,
            width: self.width,
            channels: self.channels,
            classes: self.classes,
            images: self.images[range.start * n..range.end * n].to_vec(),
            labels: self.labels[range.clone()].to_vec(),
            coarse_labels: if self.coarse_labels.is_empty() {
                Vec::new()
            } else {
                self.coarse_labels[range].to_vec()
            },
        }
    }

    pub fn concat(parts: &[Dataset]) -> Result<Dataset> {
        let first = parts.first().ok_or_else(|| Error::Format("nothing to concatenate".into()))?;
        let mut out = Dataset {
            images: Vec::new(),
            labels: Vec::new(),
            coarse_labels: Vec::new(),
            ..first.clone()
        };
        for p in parts {
            if (p.height, p.width, p.channels, p.classes) != (first.height, first.width, first.channels, first.classes) {
                return Err(Error::Format("concatenating datasets of different shapes".into()));
            }
            out.images.extend_from_slice(&p.images);
            out.labels.extend_from_slice(&p.labels);
            out.coarse_labels.extend_from_slice(&p.coarse_labels);
        }
        Ok(out)
    }
}

/// Train, validation and test partitions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

pub const DEFAULT_VAL: usize = 5_000;

impl Splits {
    /// Holds out the last `DEFAULT_VAL` training images for validation
    /// (45,000 / 5,000 / 10,000 on CIFAR).
    pub fn standard(train: Dataset, test: Dataset) -> Result<Splits> {
        Self::holdout(train, test, DEFAULT_VAL)
    }

    pub fn holdout(train: Dataset, test: Dataset, val: usize) -> Result<Splits> {
        if val >= train.len() {
            return Err(Error::Format(format!(
                "cannot hold out {val} of {} training images",
                train.len()
            )));
        }
        let cut = train.len() - val;
        Ok(Splits {
            val: train.slice(cut..train.len()),
            train: train.slice(0..cut),
            test,
        })
    }

    /// Leading `train` / `val` / `test` items of each partition.
    pub fn subset(&self, train: usize, val: usize, test: usize) -> Splits {
        Splits {
            train: self.train.slice(0..train.min(self.train.len())),
            val: self.val.slice(0..val.min(self.val.len())),
            test: self.test.slice(0..test.min(self.test.len())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> Dataset {
        Dataset {
            height: 1,
            width: 1,
            channels: 1,
            classes: 10,
            images: (0..n).map(|i| i as u8).collect(),
            labels: (0..n).map(|i| i % 10).collect(),
            coarse_labels: Vec::new(),
        }
    }

    #[test]
    fn standard_split_sizes_and_disjointness() {
        let s = Splits::standard(toy(50_000), toy(10_000)).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (45_000, 5_000, 10_000));
        assert_eq!(s.train.len() + s.val.len() + s.test.len(), 60_000);
    }

    #[test]
    fn holdout_takes_the_tail() {
        let s = Splits::holdout(toy(10), toy(2), 3).unwrap();
        assert_eq!(s.val.images, vec![7, 8, 9]);
        assert_eq!(s.train.images, (0..7).collect::<Vec<u8>>());
        assert!(Splits::holdout(toy(3), toy(1), 3).is_err());
    }

    #[test]
    fn validate_catches_bad_labels() {
        let mut d = toy(3);
        d.labels[1] = 10;
        assert!(matches!(d.validate(), Err(Error::Label { label: 10, .. })));
    }
}
