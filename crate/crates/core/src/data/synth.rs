use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

use super::{DomainDataset, DomainTag};

/// Two interleaved half-circles of radius 1. Moon 0 is `(cos t, sin t)`,
/// moon 1 is `(1 − cos t, 0.5 − sin t)`, for `t` evenly spaced on `[0, π]`;
/// isotropic Gaussian noise of standard deviation `noise_sd` is added to
/// every coordinate. Moon 0 gets the extra point when `n` is odd.
pub fn gen_two_moons(n: usize, noise_sd: f64, seed: u64) -> Result<DomainDataset> {
    if n < 2 {
        return Err(Error::Config(format!("two moons needs n ≥ 2, got {n}")));
    }
    if !(noise_sd >= 0.0) || !noise_sd.is_finite() {
        return Err(Error::Config(format!("noise_sd must be ≥ 0, got {noise_sd}")));
    }
    let mut rng = SeededRng::new(seed);
    let counts = [n - n / 2, n / 2];
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for (moon, &count) in counts.iter().enumerate() {
        for i in 0..count {
            let t = if count > 1 { PI * i as f64 / (count - 1) as f64 } else { 0.0 };
            let (s, c) = t.sin_cos();
            let (x, y) = if moon == 0 { (c, s) } else { (1.0 - c, 0.5 - s) };
            data.push(x);
            data.push(y);
            labels.push(moon);
        }
    }
    if noise_sd > 0.0 {
        for v in &mut data {
            *v += noise_sd * rng.normal();
        }
    }
    DomainDataset::new(Tensor::matrix(n, 2, data)?, Some(labels), DomainTag::Source, 2)
}

/// `n` points split evenly over `k` isotropic Gaussians (earlier classes
/// take the remainder), grouped by class.
pub fn gen_gaussian_blobs(n: usize, k: usize, centers: &[Vec<f64>], sd: f64, seed: u64) -> Result<DomainDataset> {
    if k < 2 || centers.len() != k {
        return Err(Error::Config(format!(
            "need K ≥ 2 centers matching K, got K = {k} with {} centers",
            centers.len()
        )));
    }
    let d = centers[0].len();
    if d == 0 || centers.iter().any(|c| c.len() != d) {
        return Err(Error::Config("all centers must share a positive dimension".into()));
    }
    if n < k {
        return Err(Error::Config(format!("need at least one point per class, got n = {n}")));
    }
    if !(sd >= 0.0) || !sd.is_finite() {
        return Err(Error::Config(format!("sd must be ≥ 0, got {sd}")));
    }
    let mut rng = SeededRng::new(seed);
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for (class, center) in centers.iter().enumerate() {
        let count = n / k + usize::from(class < n % k);
        for _ in 0..count {
            for &c in center {
                data.push(c + sd * rng.normal());
            }
            labels.push(class);
        }
    }
    DomainDataset::new(Tensor::matrix(n, d, data)?, Some(labels), DomainTag::Source, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_moon_endpoints() {
        let ds = gen_two_moons(10, 0.0, 0).unwrap();
        let x = ds.features();
        assert_eq!(x.row(0), &[1.0, 0.0]);
        assert_eq!(ds.labels().unwrap()[0], 0);
        assert_eq!(x.row(5), &[0.0, 0.5]);
        assert_eq!(ds.labels().unwrap()[5], 1);
        assert_eq!(ds.labels().unwrap().iter().filter(|&&y| y == 1).count(), 5);
    }

    #[test]
    fn moons_deterministic_per_seed() {
        let a = gen_two_moons(101, 0.1, 42).unwrap();
        let b = gen_two_moons(101, 0.1, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, gen_two_moons(101, 0.1, 43).unwrap());
        assert!(matches!(gen_two_moons(1, 0.1, 0), Err(Error::Config(_))));
    }

    #[test]
    fn blobs_without_noise_sit_on_centers() {
        let centers = vec![vec![1.0, 2.0], vec![-3.0, 0.5], vec![0.0, 0.0]];
        let ds = gen_gaussian_blobs(9, 3, &centers, 0.0, 1).unwrap();
        for i in 0..9 {
            assert_eq!(ds.features().row(i), centers[ds.labels().unwrap()[i]].as_slice());
        }
    }

    #[test]
    fn blobs_validate_centers() {
        assert!(gen_gaussian_blobs(10, 3, &[vec![0.0], vec![1.0]], 0.1, 0).is_err());
        let a = gen_gaussian_blobs(10, 2, &[vec![0.0], vec![1.0]], 0.1, 5).unwrap();
        assert_eq!(a, gen_gaussian_blobs(10, 2, &[vec![0.0], vec![1.0]], 0.1, 5).unwrap());
    }

    #[test]
    fn separated_blobs_are_split_by_the_midpoint() {
        let ds = gen_gaussian_blobs(2000, 2, &[vec![-2.0, 0.0], vec![2.0, 0.0]], 0.1, 9).unwrap();
        let labels = ds.labels().unwrap();
        let correct = (0..ds.len())
            .filter(|&i| usize::from(ds.features().row(i)[0] > 0.0) == labels[i])
            .count();
        assert!(correct as f64 / ds.len() as f64 >= 0.999);
    }
}
