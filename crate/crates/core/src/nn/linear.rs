use rand::Rng;

use super::{dgemm, Param};

/// Dense layer `y = x W^T + b` over a row-major batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    /// `outputs x inputs`, row-major.
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    /// Normal init with `std = gain / sqrt(inputs)`.
    pub fn new<R: Rng>(name: &str, inputs: usize, outputs: usize, gain: f64, rng: &mut R) -> Self {
        let std = gain / (inputs as f64).sqrt();
        Self {
            inputs,
            outputs,
            weight: Param::normal(format!("{name}.weight"), inputs * outputs, std, rng),
            bias: Param::zeros(format!("{name}.bias"), outputs),
        }
    }

    /// `x` holds `batch` rows of `inputs` values.
    pub fn forward(&self, x: &[f64], batch: usize) -> Vec<f64> {
        debug_assert_eq!(x.len(), batch * self.inputs);
        let mut y = Vec::with_capacity(batch * self.outputs);
        for _ in 0..batch {
            y.extend_from_slice(&self.bias.value);
        }
        dgemm(
            batch,
            self.inputs,
            self.outputs,
            x,
            self.inputs as isize,
            1,
            &self.weight.value,
            1,
            self.inputs as isize,
            &mut y,
            true,
        );
        y
    }

    /// Accumulates parameter gradients (when trainable) and returns `dL/dx`.
    pub fn backward(&mut self, x: &[f64], dy: &[f64], batch: usize) -> Vec<f64> {
        if self.weight.trainable {
            dgemm(
                self.outputs,
                batch,
                self.inputs,
                dy,
                1,
                self.outputs as isize,
                x,
                self.inputs as isize,
                1,
                &mut self.weight.grad,
                true,
            );
            for row in dy.chunks_exact(self.outputs) {
                for (g, d) in self.bias.grad.iter_mut().zip(row) {
                    *g += d;
                }
            }
        }
        self.input_grad(dy, batch)
    }

    pub fn input_grad(&self, dy: &[f64], batch: usize) -> Vec<f64> {
        let mut dx = vec![0.0; batch * self.inputs];
        dgemm(
            batch,
            self.outputs,
            self.inputs,
            dy,
            self.outputs as isize,
            1,
            &self.weight.value,
            self.inputs as isize,
            1,
            &mut dx,
            false,
        );
        dx
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

    fn layer() -> Linear {
        let mut rng = crate::seed::rng(1);
        let mut l = Linear::new("l", 3, 2, 1.0, &mut rng);
        l.bias.value = vec![0.5, -0.25];
        l
    }

    #[test]
    fn forward_matches_naive() {
        let l = layer();
        let x = [1.0, 2.0, 3.0, -1.0, 0.0, 0.5];
        let y = l.forward(&x, 2);
        for b in 0..2 {
            for o in 0..2 {
                let mut acc = l.bias.value[o];
                for i in 0..3 {
                    acc += l.weight.value[o * 3 + i] * x[b * 3 + i];
                }
                assert!((y[b * 2 + o] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut l = layer();
        let x = vec![0.3, -0.7, 1.1, 0.2, 0.9, -0.4];
        // L = sum(y * c) with fixed c, so dL/dy = c
        let c = vec![1.0, -2.0, 0.5, 3.0];
        let loss = |l: &Linear, x: &[f64]| -> f64 { l.forward(x, 2).iter().zip(&c).map(|(a, b)| a * b).sum() };
        let dx = l.backward(&x, &c, 2);
        let h = 1e-6;
        for i in 0..x.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[i] += h;
            xm[i] -= h;
            let fd = (loss(&l, &xp) - loss(&l, &xm)) / (2.0 * h);
            assert!((fd - dx[i]).abs() < 1e-7);
        }
        for i in 0..l.weight.len() {
            let (mut lp, mut lm) = (l.clone(), l.clone());
            lp.weight.value[i] += h;
            lm.weight.value[i] -= h;
            let fd = (loss(&lp, &x) - loss(&lm, &x)) / (2.0 * h);
            assert!((fd - l.weight.grad[i]).abs() < 1e-7);
        }
        assert!((l.bias.grad[0] - (1.0 + 0.5)).abs() < 1e-12);
    }
}
