//! Smooth random fields used as shared latents by the generator.

use rand::Rng;
use rand_distr::StandardNormal;

/// White noise blurred by a separable Gaussian, then standardized to zero
/// mean and unit variance. Borders reflect.
pub fn smooth_field<R: Rng>(rng: &mut R, height: usize, width: usize, sigma: f64) -> Vec<f64> {
    let noise: Vec<f64> = (0..height * width).map(|_| rng.sample(StandardNormal)).collect();
    let mut out = gaussian_blur(&noise, height, width, sigma);
    standardize(&mut out);
    out
}

pub fn gaussian_blur(src: &[f64], height: usize, width: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return src.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();

    let mut tmp = vec![0.0; src.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (j, k) in kernel.iter().enumerate() {
                let xx = reflect(x as isize + j as isize - radius, width);
                acc += k * src[y * width + xx];
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (j, k) in kernel.iter().enumerate() {
                let yy = reflect(y as isize + j as isize - radius, height);
                acc += k * tmp[yy * width + x];
            }
            out[y * width + x] = acc;
        }
    }
    out
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

pub fn standardize(v: &mut [f64]) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let sd = var.sqrt().max(1e-12);
    for x in v.iter_mut() {
        *x = (*x - mean) / sd;
    }
}
