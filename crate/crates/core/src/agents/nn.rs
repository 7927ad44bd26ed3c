//! Dense ReLU networks with flat parameter storage and Adam.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// `c = a · b + beta · c` with `a` of shape m×k and `b` of shape k×n, both
/// row-major, optionally read transposed.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides address exactly the m×k, k×n and m×n blocks whose
    // lengths were asserted above, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Layer sizes plus one flat parameter vector. Layer `l` stores its weight
/// as a row-major `in × out` block followed by `out` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

/// Per-layer outputs of a batched forward pass; `values[0]` is the input.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub batch: usize,
    pub values: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.values.last().expect("non-empty cache")
    }
}

pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// Uniform fan-in initialization, `U(-1/sqrt(in), 1/sqrt(in))`; the last
    /// layer's range is multiplied by `output_scale`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], output_scale: f64, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|&s| s > 0));
        let mut params = Vec::with_capacity(param_count(sizes));
        let layers = sizes.len() - 1;
        for (l, w) in sizes.windows(2).enumerate() {
            let mut bound = 1.0 / (w[0] as f64).sqrt();
            if l + 1 == layers {
                bound *= output_scale;
            }
            for _ in 0..w[0] * w[1] + w[1] {
                params.push(rng.random_range(-bound..=bound));
            }
        }
        Self { sizes: sizes.to_vec(), params }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    fn layer_offsets(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut offset = 0;
        self.sizes.windows(2).map(move |w| {
            let o = offset;
            offset += w[0] * w[1] + w[1];
            (o, w[0], w[1])
        })
    }

    pub fn forward(&self, input: &[f64], batch: usize) -> ForwardCache {
        assert_eq!(input.len(), batch * self.input_dim(), "input shape");
        let layers = self.sizes.len() - 1;
        let mut values = Vec::with_capacity(layers + 1);
        values.push(input.to_vec());
        for (l, (o, n_in, n_out)) in self.layer_offsets().enumerate() {
            let (w, b) = self.params[o..o + n_in * n_out + n_out].split_at(n_in * n_out);
            let mut y = Vec::with_capacity(batch * n_out);
            for _ in 0..batch {
                y.extend_from_slice(b);
            }
            gemm(batch, n_in, n_out, &values[l], false, w, false, 1.0, &mut y);
            if l + 1 < layers {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            values.push(y);
        }
        ForwardCache { batch, values }
    }

    pub fn predict(&self, input: &[f64]) -> Vec<f64> {
        let batch = input.len() / self.input_dim();
        self.forward(input, batch).values.pop().unwrap()
    }

    /// Accumulates parameter gradients into `grad` given the loss gradient
    /// with respect to the output; returns the gradient with respect to the
    /// input.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let batch = cache.batch;
        assert_eq!(grad.len(), self.params.len());
        assert_eq!(grad_output.len(), batch * self.output_dim());
        let offsets: Vec<_> = self.layer_offsets().collect();
        let mut delta = grad_output.to_vec();
        for l in (0..offsets.len()).rev() {
            let (o, n_in, n_out) = offsets[l];
            let x = &cache.values[l];
            let (gw, gb) = grad[o..o + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            gemm(n_in, batch, n_out, x, true, &delta, false, 1.0, gw);
            for row in delta.chunks(n_out) {
                gb.iter_mut().zip(row).for_each(|(g, d)| *g += d);
            }
            let w = &self.params[o..o + n_in * n_out];
            let mut dx = vec![0.0; batch * n_in];
            gemm(batch, n_out, n_in, &delta, false, w, true, 0.0, &mut dx);
            if l > 0 {
                // ReLU mask from the stored post-activation values.
                dx.iter_mut().zip(x).for_each(|(d, &v)| {
                    if v <= 0.0 {
                        *d = 0.0
                    }
                });
            }
            delta = dx;
        }
        delta
    }

    /// Polyak update `self ← (1 − tau)·self + tau·source`.
    pub fn soft_update(&mut self, source: &Mlp, tau: f64) {
        assert_eq!(self.sizes, source.sizes);
        self.params
            .iter_mut()
            .zip(&source.params)
            .for_each(|(t, s)| *t += tau * (s - *t));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}
