use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::Dataset;
use crate::init::Rng;

/// Images drawn around one random prototype per class: each pixel is the
/// prototype value plus Gaussian noise with standard deviation `noise`
/// (in byte units), clamped to `0..=255`.
pub fn synthetic_images(
    n: usize,
    classes: usize,
    side: usize,
    channels: usize,
    noise: f64,
    seed: u64,
) -> Dataset {
    let rng = Rng::new(seed);
    let len = side * side * channels;
    let mut proto_rng = rng.stream(0);
    let protos: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..len).map(|_| proto_rng.random_range(0.0..255.0)).collect())
        .collect();
    let mut r = rng.stream(1);
    let normal = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).expect("finite noise");
    let mut images = Vec::with_capacity(n * len);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let label = r.random_range(0..classes);
        labels.push(label);
        images.extend(
            protos[label]
                .iter()
                .map(|&p| (p + normal.sample(&mut r)).round().clamp(0.0, 255.0) as u8),
        );
    }
    Dataset {
        height: side,
        width: side,
        channels,
        classes,
        images,
        labels,
        coarse_labels: Vec::new(),
    }
}

/// Two linearly separable classes: the label is the side of a fixed random
/// hyperplane through the mid-grey image on which the image lies.
pub fn synthetic_separable(n: usize, side: usize, channels: usize, seed: u64) -> Dataset {
    let rng = Rng::new(seed);
    let len = side * side * channels;
    let mut r = rng.stream(2);
    let normal: Vec<f64> = (0..len).map(|_| r.random_range(-1.0..1.0)).collect();
    let mut images = Vec::with_capacity(n * len);
    let mut labels = Vec::with_capacity(n);
    while labels.len() < n {
        let img: Vec<u8> = (0..len).map(|_| r.random_range(0..=255u8)).collect();
        let score: f64 = img
            .iter()
            .zip(&normal)
            .map(|(&p, &w)| (p as f64 - 127.5) * w)
            .sum();
        // keep a margin so the classes are cleanly separated
        if score.abs() < 0.05 * len as f64 {
            continue;
        }
        labels.push(usize::from(score > 0.0));
        images.extend(img);
    }
    Dataset {
        height: side,
        width: side,
        channels,
        classes: 2,
        images,
        labels,
        coarse_labels: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_determinism() {
        let a = synthetic_images(20, 10, 8, 3, 30.0, 1);
        a.validate().unwrap();
        assert_eq!(a, synthetic_images(20, 10, 8, 3, 30.0, 1));
        let s = synthetic_separable(30, 4, 1, 2);
        s.validate().unwrap();
        assert!(s.labels.contains(&0) && s.labels.contains(&1));
    }
}
