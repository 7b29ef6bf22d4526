use std::f64::consts::PI;

use rand_distr::{Distribution, StandardNormal};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Two interleaved spirals. Point `i` of class `k` sits at `t = i / n`,
/// radius `0.2 + 0.8 t` and angle `2 pi turns t + k pi`, plus isotropic
/// Gaussian noise.
pub fn gen_two_spirals(n_per_class: usize, turns: f64, noise_sigma: f64, seed: u64) -> Result<Dataset> {
    if n_per_class == 0 || !(turns.is_finite() && turns > 0.0) || !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
        return Err(Error::Config(format!(
            "two-spirals needs n_per_class >= 1, turns > 0, sigma >= 0 (got {n_per_class}, {turns}, {noise_sigma})"
        )));
    }
    let mut r = rng::rng(rng::derive_seed(seed, "points"));
    let mut data = Vec::with_capacity(4 * n_per_class);
    let mut labels = Vec::with_capacity(2 * n_per_class);
    for k in 0..2 {
        for i in 0..n_per_class {
            let t = i as f64 / n_per_class as f64;
            let radius = 0.2 + 0.8 * t;
            let theta = 2.0 * PI * turns * t + k as f64 * PI;
            let nx: f64 = StandardNormal.sample(&mut r);
            let ny: f64 = StandardNormal.sample(&mut r);
            data.push(radius * theta.cos() + noise_sigma * nx);
            data.push(radius * theta.sin() + noise_sigma * ny);
            labels.push(k);
        }
    }
    Dataset::new(
        Tensor::new(vec![2 * n_per_class, 2], data)?,
        labels,
        2,
        vec![2],
        rng::derive_seed(seed, "split"),
    )
}

/// Gaussian blobs around `n_classes` centres equally spaced on a circle.
pub fn gen_blobs(n_per_class: usize, n_classes: usize, center_radius: f64, sigma: f64, seed: u64) -> Result<Dataset> {
    if n_per_class == 0 || n_classes < 2 || !(sigma.is_finite() && sigma >= 0.0) || !center_radius.is_finite() {
        return Err(Error::Config(format!(
            "blobs needs n_per_class >= 1, n_classes >= 2, sigma >= 0 (got {n_per_class}, {n_classes}, {sigma})"
        )));
    }
    let mut r = rng::rng(rng::derive_seed(seed, "points"));
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for k in 0..n_classes {
        let angle = 2.0 * PI * k as f64 / n_classes as f64;
        let (cx, cy) = (center_radius * angle.cos(), center_radius * angle.sin());
        for _ in 0..n_per_class {
            let nx: f64 = StandardNormal.sample(&mut r);
            let ny: f64 = StandardNormal.sample(&mut r);
            data.push(cx + sigma * nx);
            data.push(cy + sigma * ny);
            labels.push(k);
        }
    }
    Dataset::new(
        Tensor::new(vec![n_per_class * n_classes, 2], data)?,
        labels,
        n_classes,
        vec![2],
        rng::derive_seed(seed, "split"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spiral_start_points() {
        let d = gen_two_spirals(1, 1.75, 0.0, 3).unwrap();
        assert_eq!(d.features.row(0), &[0.2, 0.0]);
        assert!((d.features.at(1, 0) + 0.2).abs() < 1e-15);
        assert!(d.features.at(1, 1).abs() < 1e-15);
        assert_eq!(d.labels, vec![0, 1]);
    }

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(
            gen_two_spirals(50, 1.75, 0.05, 9).unwrap(),
            gen_two_spirals(50, 1.75, 0.05, 9).unwrap()
        );
        assert_ne!(
            gen_two_spirals(50, 1.75, 0.05, 9).unwrap(),
            gen_two_spirals(50, 1.75, 0.05, 10).unwrap()
        );
        assert_eq!(
            gen_blobs(5, 3, 2.0, 0.1, 1).unwrap(),
            gen_blobs(5, 3, 2.0, 0.1, 1).unwrap()
        );
    }

    #[test]
    fn blob_centres() {
        let d = gen_blobs(4, 2, 1.0, 0.0, 0).unwrap();
        for r in 0..4 {
            assert_eq!(d.features.row(r), &[1.0, 0.0]);
        }
        for r in 4..8 {
            assert!((d.features.at(r, 0) + 1.0).abs() < 1e-15 && d.features.at(r, 1).abs() < 1e-15);
        }
    }

    #[test]
    fn invalid_parameters() {
        assert!(gen_two_spirals(0, 1.0, 0.0, 0).is_err());
        assert!(gen_two_spirals(5, 0.0, 0.0, 0).is_err());
        assert!(gen_blobs(5, 1, 1.0, 0.1, 0).is_err());
    }
}
