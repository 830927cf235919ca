use rand::Rng;

use super::{sgemm, Param};

/// 3x3 convolution, stride 2, zero padding 1, fused with ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `out x (in * 9)`, row-major.
    pub weight: Param,
    pub bias: Param,
}

const K: usize = 3;
const STRIDE: usize = 2;

pub fn out_size(n: usize) -> usize {
    (n - 1) / STRIDE + 1
}

fn im2col(input: &[f32], c: usize, h: usize, w: usize, col: &mut Vec<f32>) {
    let (oh, ow) = (out_size(h), out_size(w));
    let p = oh * ow;
    col.clear();
    col.resize(c * K * K * p, 0.0);
    for ci in 0..c {
        let plane = &input[ci * h * w..(ci + 1) * h * w];
        for kh in 0..K {
            for kw in 0..K {
                let dst = &mut col[((ci * K + kh) * K + kw) * p..][..p];
                for oy in 0..oh {
                    let iy = (oy * STRIDE + kh) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..][..w];
                    let row = &mut dst[oy * ow..][..ow];
                    for (ox, d) in row.iter_mut().enumerate() {
                        let ix = (ox * STRIDE + kw) as isize - 1;
                        if ix >= 0 && ix < w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f32], c: usize, h: usize, w: usize, out: &mut [f32]) {
    let (oh, ow) = (out_size(h), out_size(w));
    let p = oh * ow;
    out.iter_mut().for_each(|v| *v = 0.0);
    for ci in 0..c {
        let plane = &mut out[ci * h * w..(ci + 1) * h * w];
        for kh in 0..K {
            for kw in 0..K {
                let src = &col[((ci * K + kh) * K + kw) * p..][..p];
                for oy in 0..oh {
                    let iy = (oy * STRIDE + kh) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..][..w];
                    for ox in 0..ow {
                        let ix = (ox * STRIDE + kw) as isize - 1;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

impl Conv2d {
    pub fn new<R: Rng>(name: &str, in_channels: usize, out_channels: usize, rng: &mut R) -> Self {
        let fan_in = in_channels * K * K;
        Self {
            in_channels,
            out_channels,
            weight: Param::normal(format!("{name}.weight"), out_channels * fan_in, (2.0 / fan_in as f64).sqrt(), rng),
            bias: Param::zeros(format!("{name}.bias"), out_channels),
        }
    }

    fn weight_f32(&self) -> Vec<f32> {
        self.weight.value.iter().map(|&v| v as f32).collect()
    }

    /// Returns the ReLU-activated output, `out x out_size(h) x out_size(w)`.
    pub fn forward(&self, input: &[f32], h: usize, w: usize, scratch: &mut Vec<f32>) -> Vec<f32> {
        im2col(input, self.in_channels, h, w, scratch);
        let p = out_size(h) * out_size(w);
        let kk = self.in_channels * K * K;
        let mut out = vec![0f32; self.out_channels * p];
        for (co, chunk) in out.chunks_exact_mut(p).enumerate() {
            chunk.fill(self.bias.value[co] as f32);
        }
        sgemm(
            self.out_channels,
            kk,
            p,
            &self.weight_f32(),
            kk as isize,
            1,
            scratch,
            p as isize,
            1,
            &mut out,
            true,
        );
        out.iter_mut().for_each(|v| *v = v.max(0.0));
        out
    }

    /// `output` is the activated forward result and `grad_out` its gradient.
    /// Accumulates parameter gradients when trainable and returns the input
    /// gradient if `need_input_grad`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &mut self,
        input: &[f32],
        h: usize,
        w: usize,
        output: &[f32],
        grad_out: &mut [f32],
        need_input_grad: bool,
        scratch: &mut Vec<f32>,
    ) -> Option<Vec<f32>> {
        for (g, o) in grad_out.iter_mut().zip(output) {
            if *o <= 0.0 {
                *g = 0.0;
            }
        }
        let p = out_size(h) * out_size(w);
        let kk = self.in_channels * K * K;
        if self.weight.trainable {
            im2col(input, self.in_channels, h, w, scratch);
            let mut dw = vec![0f32; self.out_channels * kk];
            sgemm(self.out_channels, p, kk, grad_out, p as isize, 1, scratch, 1, p as isize, &mut dw, false);
            for (g, d) in self.weight.grad.iter_mut().zip(&dw) {
                *g += *d as f64;
            }
            for (co, row) in grad_out.chunks_exact(p).enumerate() {
                self.bias.grad[co] += row.iter().map(|&v| v as f64).sum::<f64>();
            }
        }
        if !need_input_grad {
            return None;
        }
        let mut dcol = std::mem::take(scratch);
        dcol.clear();
        dcol.resize(kk * p, 0.0);
        sgemm(kk, self.out_channels, p, &self.weight_f32(), 1, kk as isize, grad_out, p as isize, 1, &mut dcol, false);
        let mut dx = vec![0f32; self.in_channels * h * w];
        col2im(&dcol, self.in_channels, h, w, &mut dx);
        *scratch = dcol;
        Some(dx)
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn naive(conv: &Conv2d, x: &[f32], h: usize, w: usize) -> Vec<f32> {
        let (oh, ow) = (out_size(h), out_size(w));
        let mut out = vec![0f32; conv.out_channels * oh * ow];
        for co in 0..conv.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = conv.bias.value[co];
                    for ci in 0..conv.in_channels {
                        for kh in 0..3 {
                            for kw in 0..3 {
                                let iy = (oy * 2 + kh) as isize - 1;
                                let ix = (ox * 2 + kw) as isize - 1;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += conv.weight.value[co * conv.in_channels * 9 + ci * 9 + kh * 3 + kw]
                                        * x[ci * h * w + iy as usize * w + ix as usize] as f64;
                                }
                            }
                        }
                    }
                    out[co * oh * ow + oy * ow + ox] = acc.max(0.0) as f32;
                }
            }
        }
        out
    }

    #[test]
    fn forward_matches_direct_convolution() {
        let mut rng = crate::seed::rng(2);
        let conv = Conv2d::new("c", 2, 3, &mut rng);
        for (h, w) in [(7, 9), (8, 8), (1, 5)] {
            let x: Vec<f32> = (0..2 * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
            let got = conv.forward(&x, h, w, &mut Vec::new());
            let want = naive(&conv, &x, h, w);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = crate::seed::rng(3);
        let mut conv = Conv2d::new("c", 2, 2, &mut rng);
        conv.bias.value = vec![0.1, 0.2];
        let (h, w) = (6, 5);
        let x: Vec<f32> = (0..2 * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let out = conv.forward(&x, h, w, &mut Vec::new());
        let c: Vec<f32> = (0..out.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |conv: &Conv2d, x: &[f32]| -> f64 {
            naive(conv, x, h, w).iter().zip(&c).map(|(a, b)| (*a as f64) * (*b as f64)).sum()
        };
        let mut g = c.clone();
        let dx = conv.backward(&x, h, w, &out, &mut g, true, &mut Vec::new()).unwrap();
        let eps = 1e-3;
        for i in 0..x.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[i] += eps;
            xm[i] -= eps;
            let fd = (loss(&conv, &xp) - loss(&conv, &xm)) / (2.0 * eps as f64);
            assert!((fd - dx[i] as f64).abs() < 2e-3, "dx[{i}]: {fd} vs {}", dx[i]);
        }
        for i in 0..conv.weight.len() {
            let (mut cp, mut cm) = (conv.clone(), conv.clone());
            cp.weight.value[i] += 1e-4;
            cm.weight.value[i] -= 1e-4;
            let fd = (loss(&cp, &x) - loss(&cm, &x)) / 2e-4;
            assert!((fd - conv.weight.grad[i]).abs() < 2e-3, "dw[{i}]");
        }
    }
}
