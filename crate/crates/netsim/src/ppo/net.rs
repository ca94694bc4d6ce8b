//! Fully-connected tanh networks stored in a flat parameter vector, with
//! hand-written backpropagation.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Layer sizes of one network and where its parameters start in the flat
/// vector. Each layer stores an `in × out` row-major weight matrix followed
/// by an `out` bias.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub offset: usize,
    pub sizes: Vec<usize>,
}

impl MlpSpec {
    pub fn new(offset: usize, sizes: Vec<usize>) -> Self {
        assert!(sizes.len() >= 2);
        Self { offset, sizes }
    }

    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn end(&self) -> usize {
        self.offset + self.param_count()
    }

    fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    /// `(weight_start, bias_start, in, out)` of layer `l`.
    fn layer_bounds(&self, l: usize) -> (usize, usize, usize, usize) {
        let mut at = self.offset;
        for w in self.sizes.windows(2).take(l) {
            at += w[0] * w[1] + w[1];
        }
        let (i, o) = (self.sizes[l], self.sizes[l + 1]);
        (at, at + i * o, i, o)
    }

    fn weights<'a>(&self, params: &'a [f64], l: usize) -> (ArrayView2<'a, f64>, ArrayView1<'a, f64>) {
        let (w, b, i, o) = self.layer_bounds(l);
        (
            ArrayView2::from_shape((i, o), &params[w..b]).expect("layer shape"),
            ArrayView1::from(&params[b..b + o]),
        )
    }

    /// Glorot-uniform weights, zero biases; the output layer is scaled by
    /// `out_scale`.
    pub fn init(&self, params: &mut [f64], rng: &mut ChaCha8Rng, out_scale: f64) {
        for l in 0..self.layers() {
            let (w, b, i, o) = self.layer_bounds(l);
            let limit = (6.0 / (i + o) as f64).sqrt();
            let scale = if l + 1 == self.layers() { out_scale } else { 1.0 };
            for p in &mut params[w..b] {
                *p = rng.random_range(-limit..limit) * scale;
            }
            params[b..b + o].fill(0.0);
        }
    }

    /// Activations of every layer; the first is the input, the last the
    /// linear output.
    pub fn forward(&self, params: &[f64], x: &Array2<f64>) -> Vec<Array2<f64>> {
        let mut acts = Vec::with_capacity(self.layers() + 1);
        acts.push(x.clone());
        for l in 0..self.layers() {
            let (w, b) = self.weights(params, l);
            let mut z = acts[l].dot(&w);
            z += &b;
            if l + 1 < self.layers() {
                z.mapv_inplace(f64::tanh);
            }
            acts.push(z);
        }
        acts
    }

    /// Accumulates parameter gradients into `grad` given `d_out`, the
    /// gradient of the loss with respect to the linear output.
    pub fn backward(&self, params: &[f64], acts: &[Array2<f64>], d_out: Array2<f64>, grad: &mut [f64]) {
        let mut d = d_out;
        for l in (0..self.layers()).rev() {
            let (wi, bi, i, o) = self.layer_bounds(l);
            let gw = acts[l].t().dot(&d);
            let gb: Array1<f64> = d.sum_axis(Axis(0));
            for (g, v) in grad[wi..bi].iter_mut().zip(gw.iter()) {
                *g += v;
            }
            for (g, v) in grad[bi..bi + o].iter_mut().zip(gb.iter()) {
                *g += v;
            }
            if l > 0 {
                let (w, _) = self.weights(params, l);
                debug_assert_eq!(w.dim(), (i, o));
                let mut prev = d.dot(&w.t());
                prev.zip_mut_with(&acts[l], |g, &a| *g *= 1.0 - a * a);
                d = prev;
            }
        }
    }
}
