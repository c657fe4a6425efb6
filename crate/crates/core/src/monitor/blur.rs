//! Separable Gaussian blur used to build corrupted runtime datasets.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Sigma in pixels at level 100; a level `L` blurs with `L / 100 * this`.
pub const DEFAULT_SIGMA_AT_FULL_LEVEL: f64 = 5.0;

pub fn gaussian_blur(image: &Tensor, level: f64) -> Result<Tensor> {
    gaussian_blur_with_scale(image, level, DEFAULT_SIGMA_AT_FULL_LEVEL)
}

/// Blurs a `[H, W]` image with a normalized Gaussian of radius
/// `ceil(3 sigma)`, reflecting about the edge pixels (`dcb|abcd|cba`).
/// Level 0 returns the input unchanged.
pub fn gaussian_blur_with_scale(image: &Tensor, level: f64, sigma_at_full: f64) -> Result<Tensor> {
    if !(0.0..=100.0).contains(&level) {
        return Err(Error::InvalidArgument(format!("blur level {level} outside [0, 100]")));
    }
    if !(sigma_at_full.is_finite() && sigma_at_full > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma scale {sigma_at_full} must be positive")));
    }
    let &[h, w] = image.shape() else {
        return Err(Error::InvalidShape(image.shape().to_vec()));
    };
    if level == 0.0 {
        return Ok(image.clone());
    }
    let kernel = kernel(level / 100.0 * sigma_at_full);
    let r = (kernel.len() / 2) as isize;
    let src: Vec<f64> = image.data().iter().map(|&v| f64::from(v)).collect();

    let mut rows = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            rows[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(t, k)| k * src[y * w + reflect(x as isize + t as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let v: f64 = kernel
                .iter()
                .enumerate()
                .map(|(t, k)| k * rows[reflect(y as isize + t as isize - r, h) * w + x])
                .sum();
            out[y * w + x] = v as f32;
        }
    }
    Tensor::new(vec![h, w], out)
}

fn kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Maps any index onto `0..n` by reflection without repeating the edge,
/// folding as many times as needed for kernels wider than the image.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m >= n as isize { period - m } else { m }) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(vec![h, w], (0..h * w).map(|_| rng.random()).collect()).unwrap()
    }

    #[test]
    fn level_zero_is_identity() {
        let img = random_image(9, 7, 1);
        let out = gaussian_blur(&img, 0.0).unwrap();
        let same = img.data().iter().zip(out.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same);
    }

    #[test]
    fn constants_are_preserved() {
        let img = Tensor::new(vec![6, 5], vec![0.37; 30]).unwrap();
        for level in [10.0, 30.0, 50.0, 100.0] {
            let out = gaussian_blur(&img, level).unwrap();
            assert!(out.data().iter().all(|v| (v - 0.37).abs() < 1e-6), "level {level}");
        }
    }

    #[test]
    fn impulse_center_matches_discrete_gaussian() {
        let mut data = vec![0.0f32; 225];
        data[7 * 15 + 7] = 1.0;
        let img = Tensor::new(vec![15, 15], data).unwrap();
        let out = gaussian_blur(&img, 20.0).unwrap();
        let z: f64 = (-3..=3).map(|x: i32| (-(x * x) as f64 / 2.0).exp()).sum();
        let k0 = 1.0 / z;
        assert!((f64::from(out.data()[7 * 15 + 7]) - k0 * k0).abs() < 1e-6);
    }

    #[test]
    fn mass_is_conserved_away_from_edges() {
        let mut data = vec![0.0f32; 31 * 31];
        data[15 * 31 + 15] = 1.0;
        let img = Tensor::new(vec![31, 31], data).unwrap();
        let total: f64 = gaussian_blur(&img, 40.0).unwrap().data().iter().map(|&v| f64::from(v)).sum();
        assert!((total - 1.0).abs() < 1e-5);
    }

    #[test]
    fn reflect_indices() {
        let got: Vec<usize> = (-4..8).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, vec![2, 3, 2, 1, 0, 1, 2, 3, 2, 1, 0, 1]);
        assert_eq!(reflect(-5, 1), 0);
    }

    #[test]
    fn wide_kernel_on_tiny_image() {
        let img = random_image(3, 2, 4);
        let out = gaussian_blur(&img, 100.0).unwrap();
        assert!(out.data().iter().all(|v| v.is_finite() && *v >= 0.0 && *v <= 1.0));
    }

    #[test]
    fn rejects_bad_input() {
        let img = random_image(4, 4, 2);
        assert!(gaussian_blur(&img, -1.0).is_err());
        assert!(gaussian_blur(&img, 100.5).is_err());
        let cube = Tensor::zeros(vec![2, 2, 2]).unwrap();
        assert!(gaussian_blur(&cube, 10.0).is_err());
    }
}
