//! Binary halftoning of float planes (0-255).

/// Bayer index matrix of side `n` (power of two), values `0..n*n`.
pub fn bayer(n: usize) -> Vec<u32> {
    assert!(n.is_power_of_two() && n >= 2);
    let mut m = vec![0u32, 2, 3, 1];
    let mut side = 2;
    while side < n {
        let next = side * 2;
        let mut out = vec![0u32; next * next];
        for r in 0..side {
            for c in 0..side {
                let v = 4 * m[r * side + c];
                out[r * next + c] = v;
                out[r * next + c + side] = v + 2;
                out[(r + side) * next + c] = v + 3;
                out[(r + side) * next + c + side] = v + 1;
            }
        }
        m = out;
        side = next;
    }
    m
}

pub fn ordered_dither(plane: &mut [f32], height: usize, width: usize, cell: usize) {
    let m = bayer(cell);
    let levels = (cell * cell) as f32;
    for r in 0..height {
        for c in 0..width {
            let t = (m[(r % cell) * cell + c % cell] as f32 + 0.5) / levels * 255.0;
            let v = &mut plane[r * width + c];
            *v = if *v > t { 255.0 } else { 0.0 };
        }
    }
}

/// Floyd-Steinberg diffusion on a grid of `cell`x`cell` dots.
pub fn error_diffusion(plane: &mut [f32], height: usize, width: usize, cell: usize) {
    let gh = height.div_ceil(cell);
    let gw = width.div_ceil(cell);
    let mut grid = vec![0f32; gh * gw];
    let mut counts = vec![0f32; gh * gw];
    for r in 0..height {
        for c in 0..width {
            let g = (r / cell) * gw + c / cell;
            grid[g] += plane[r * width + c];
            counts[g] += 1.0;
        }
    }
    for (g, n) in grid.iter_mut().zip(&counts) {
        *g /= n;
    }
    for r in 0..gh {
        for c in 0..gw {
            let old = grid[r * gw + c];
            let new = if old >= 127.5 { 255.0 } else { 0.0 };
            grid[r * gw + c] = new;
            let err = old - new;
            if c + 1 < gw {
                grid[r * gw + c + 1] += err * 7.0 / 16.0;
            }
            if r + 1 < gh {
                if c > 0 {
                    grid[(r + 1) * gw + c - 1] += err * 3.0 / 16.0;
                }
                grid[(r + 1) * gw + c] += err * 5.0 / 16.0;
                if c + 1 < gw {
                    grid[(r + 1) * gw + c + 1] += err * 1.0 / 16.0;
                }
            }
        }
    }
    for r in 0..height {
        for c in 0..width {
            plane[r * width + c] = grid[(r / cell) * gw + c / cell];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bayer_four_is_standard() {
        assert_eq!(
            bayer(4),
            vec![0, 8, 2, 10, 12, 4, 14, 6, 3, 11, 1, 9, 15, 7, 13, 5]
        );
    }

    #[test]
    fn bayer_is_a_permutation() {
        let mut m = bayer(8);
        m.sort();
        assert_eq!(m, (0..64).collect::<Vec<_>>());
    }

    #[test]
    fn dither_preserves_mean_tone() {
        for (v, expect) in [(64.0f32, 0.25f32), (128.0, 0.5), (191.0, 0.75)] {
            let mut plane = vec![v; 64 * 64];
            ordered_dither(&mut plane, 64, 64, 4);
            let on = plane.iter().filter(|&&x| x == 255.0).count() as f32 / plane.len() as f32;
            assert!((on - expect).abs() < 0.07, "{v}: {on}");
        }
    }

    #[test]
    fn diffusion_outputs_binary_with_mean_preserved() {
        let mut plane: Vec<f32> = (0..48 * 48).map(|i| (i % 48) as f32 * 5.0).collect();
        let mean_in = plane.iter().sum::<f32>() / plane.len() as f32;
        error_diffusion(&mut plane, 48, 48, 2);
        assert!(plane.iter().all(|&v| v == 0.0 || v == 255.0));
        let mean_out = plane.iter().sum::<f32>() / plane.len() as f32;
        assert!((mean_in - mean_out).abs() < 6.0);
    }
}
