use rand::Rng;
use rand_distr::{Distribution, Normal};

fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k.into_iter().map(|v| v as f32).collect()
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    while i < 0 || i >= n {
        i = if i < 0 { -i - 1 } else { 2 * n - i - 1 };
    }
    i as usize
}

/// Separable Gaussian blur with mirrored borders. `sigma == 0` is a no-op.
pub fn gaussian_blur(plane: &mut [f32], height: usize, width: usize, sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let k = gaussian_kernel(sigma);
    let radius = (k.len() / 2) as isize;
    let mut tmp = vec![0f32; plane.len()];
    for r in 0..height {
        let row = &plane[r * width..(r + 1) * width];
        for c in 0..width {
            let mut acc = 0f32;
            for (j, w) in k.iter().enumerate() {
                acc += w * row[reflect(c as isize + j as isize - radius, width)];
            }
            tmp[r * width + c] = acc;
        }
    }
    for r in 0..height {
        for c in 0..width {
            let mut acc = 0f32;
            for (j, w) in k.iter().enumerate() {
                acc += w * tmp[reflect(r as isize + j as isize - radius, height) * width + c];
            }
            plane[r * width + c] = acc;
        }
    }
}

pub fn add_gaussian_noise<R: Rng>(plane: &mut [f32], sigma: f64, rng: &mut R) {
    if sigma <= 0.0 {
        return;
    }
    let normal = Normal::new(0.0f32, sigma as f32).expect("sigma is finite and positive");
    for v in plane.iter_mut() {
        *v += normal.sample(rng);
    }
}

pub fn apply_gamma(plane: &mut [f32], gamma: f64) {
    if gamma == 1.0 {
        return;
    }
    let g = gamma as f32;
    for v in plane.iter_mut() {
        *v = 255.0 * (v.clamp(0.0, 255.0) / 255.0).powf(g);
    }
}

pub fn mix_channels(planes: &mut [Vec<f32>; 3], m: &[[f64; 3]; 3]) {
    let n = planes[0].len();
    let m32 = m.map(|row| row.map(|v| v as f32));
    for i in 0..n {
        let px = [planes[0][i], planes[1][i], planes[2][i]];
        for (c, row) in m32.iter().enumerate() {
            planes[c][i] = row[0] * px[0] + row[1] * px[1] + row[2] * px[2];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_normalized() {
        let k = gaussian_kernel(1.3);
        assert!((k.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        assert_eq!(k.len(), 9);
    }

    #[test]
    fn blur_keeps_constant_plane() {
        let mut p = vec![77.0f32; 20 * 30];
        gaussian_blur(&mut p, 20, 30, 2.0);
        assert!(p.iter().all(|v| (v - 77.0).abs() < 1e-3));
    }

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect(-1, 5), 0);
        assert_eq!(reflect(-2, 5), 1);
        assert_eq!(reflect(5, 5), 4);
        assert_eq!(reflect(6, 5), 3);
        assert_eq!(reflect(2, 5), 2);
    }
}
