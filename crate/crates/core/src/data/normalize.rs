use super::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormMode {
    /// One mean per pixel position and channel.
    #[default]
    PerPixel,
    /// One mean per channel.
    PerChannel,
}

/// Float images `x / 255 - mean`, NHWC.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatSet {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub classes: usize,
    pub x: Vec<f32>,
    pub labels: Vec<usize>,
}

impl FloatSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.image_len();
        &self.x[i * n..(i + 1) * n]
    }
}

/// Mean image of a training set, in `[0, 1]` units.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub mode: NormMode,
    pub mean: Vec<f32>,
}

impl Normalizer {
    pub fn fit(train: &Dataset, mode: NormMode) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Format("cannot fit a mean on an empty set".into()));
        }
        let len = train.image_len();
        let mut sums = vec![0f64; len];
        for img in train.images.chunks_exact(len) {
            for (s, &p) in sums.iter_mut().zip(img) {
                *s += p as f64;
            }
        }
        let n = train.len() as f64;
        let mean = match mode {
            NormMode::PerPixel => sums.iter().map(|s| (s / n / 255.0) as f32).collect(),
            NormMode::PerChannel => {
                let c = train.channels;
                let per = (len / c) as f64;
                (0..c)
                    .map(|ch| (sums.iter().skip(ch).step_by(c).sum::<f64>() / (n * per) / 255.0) as f32)
                    .collect()
            }
        };
        Ok(Self { mode, mean })
    }

    pub fn apply(&self, ds: &Dataset) -> FloatSet {
        let len = ds.image_len();
        let c = ds.channels;
        let mut x = Vec::with_capacity(ds.images.len());
        for img in ds.images.chunks_exact(len) {
            for (k, &p) in img.iter().enumerate() {
                let m = match self.mode {
                    NormMode::PerPixel => self.mean[k],
                    NormMode::PerChannel => self.mean[k % c],
                };
                x.push(p as f32 / 255.0 - m);
            }
        }
        FloatSet {
            height: ds.height,
            width: ds.width,
            channels: ds.channels,
            classes: ds.classes,
            x,
            labels: ds.labels.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(pixels: Vec<u8>, n: usize) -> Dataset {
        Dataset {
            height: 1,
            width: pixels.len() / n / 3,
            channels: 3,
            classes: 2,
            images: pixels,
            labels: vec![0; n],
            coarse_labels: Vec::new(),
        }
    }

    #[test]
    fn constant_train_set_normalizes_to_zero() {
        let train = ds(vec![128; 2 * 6], 2);
        let norm = Normalizer::fit(&train, NormMode::PerPixel).unwrap();
        assert!(norm.apply(&train).x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn train_mean_applies_to_other_splits() {
        let norm = Normalizer {
            mode: NormMode::PerChannel,
            mean: vec![0.5; 3],
        };
        let val = ds(vec![255; 3], 1);
        assert!(norm.apply(&val).x.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn recentred_mean_is_zero() {
        let pixels: Vec<u8> = (0..4 * 12).map(|k| (k * 37 % 256) as u8).collect();
        let train = ds(pixels, 4);
        for mode in [NormMode::PerPixel, NormMode::PerChannel] {
            let f = Normalizer::fit(&train, mode).unwrap().apply(&train);
            let len = f.image_len();
            for k in 0..len {
                let m: f32 = (0..4).map(|i| f.x[i * len + k]).sum::<f32>() / 4.0;
                if mode == NormMode::PerPixel {
                    assert!(m.abs() <= 1e-6);
                }
            }
            let total: f32 = f.x.iter().sum::<f32>() / f.x.len() as f32;
            assert!(total.abs() <= 1e-6);
        }
    }
}
