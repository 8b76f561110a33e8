use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{Differentiable, Layout, SegmentKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
}

/// Fully connected network. Hidden layers use ReLU, the output layer uses
/// `output_activation` (identity by default). `sizes = [in]` is the identity
/// map with no parameters.
///
/// Layer `l` owns segments `{prefix}l{l}.w` (row-major `out x in`) and
/// `{prefix}l{l}.b`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpApprox {
    sizes: Vec<usize>,
    output_activation: Activation,
    prefix: String,
    offsets: Vec<usize>,
}

impl MlpApprox {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() || sizes.iter().any(|&s| s == 0) {
            return Err(Error::arg(format!("bad layer sizes {sizes:?}")));
        }
        let mut offsets = vec![0];
        for w in sizes.windows(2) {
            let last = *offsets.last().unwrap();
            offsets.push(last + w[0] * w[1] + w[1]);
        }
        Ok(MlpApprox {
            sizes,
            output_activation: Activation::Identity,
            prefix: String::new(),
            offsets,
        })
    }

    pub fn with_output_activation(mut self, activation: Activation) -> Self {
        self.output_activation = activation;
        self
    }

    pub fn with_prefix(mut self, prefix: impl Into<String>) -> Self {
        self.prefix = prefix.into();
        self
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn n_params(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.n_layers() {
            self.output_activation
        } else {
            Activation::Relu
        }
    }

    /// Forward pass keeping every layer's post-activation output in `tape`
    /// (`tape[0]` is the input).
    pub fn forward_tape(&self, params: &[f64], input: &[f64], tape: &mut Vec<Vec<f64>>) {
        tape.resize_with(self.sizes.len(), Vec::new);
        tape[0].clear();
        tape[0].extend_from_slice(input);
        for l in 0..self.n_layers() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &params[self.offsets[l]..self.offsets[l] + n_in * n_out];
            let b = &params[self.offsets[l] + n_in * n_out..self.offsets[l + 1]];
            let (prev, rest) = tape.split_at_mut(l + 1);
            let x = &prev[l];
            let y = &mut rest[0];
            y.clear();
            y.resize(n_out, 0.0);
            let relu = self.activation(l) == Activation::Relu;
            for (j, yj) in y.iter_mut().enumerate() {
                let row = &w[j * n_in..(j + 1) * n_in];
                let mut acc = b[j];
                for (wi, xi) in row.iter().zip(x.iter()) {
                    acc += wi * xi;
                }
                *yj = if relu && acc <= 0.0 { 0.0 } else { acc };
            }
        }
    }

    pub fn output<'a>(&self, tape: &'a [Vec<f64>]) -> &'a [f64] {
        &tape[self.n_layers()]
    }

    /// Reverse pass from the output cotangent. Accumulates parameter
    /// gradients into `grad` and, if given, writes the input cotangent.
    pub fn backward_tape(
        &self,
        params: &[f64],
        tape: &[Vec<f64>],
        cot: &[f64],
        grad: &mut [f64],
        input_cot: Option<&mut [f64]>,
    ) {
        let mut delta: Vec<f64> = cot.to_vec();
        let mut prev_delta: Vec<f64> = Vec::new();
        let want_input = input_cot.is_some();
        for l in (0..self.n_layers()).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            if self.activation(l) == Activation::Relu {
                for (d, &y) in delta.iter_mut().zip(&tape[l + 1]) {
                    if y <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let x = &tape[l];
            let w_off = self.offsets[l];
            let b_off = w_off + n_in * n_out;
            for j in 0..n_out {
                let d = delta[j];
                if d == 0.0 {
                    continue;
                }
                grad[b_off + j] += d;
                let g = &mut grad[w_off + j * n_in..w_off + (j + 1) * n_in];
                for (gi, xi) in g.iter_mut().zip(x.iter()) {
                    *gi += d * xi;
                }
            }
            if l > 0 || want_input {
                prev_delta.clear();
                prev_delta.resize(n_in, 0.0);
                let w = &params[w_off..b_off];
                for j in 0..n_out {
                    let d = delta[j];
                    if d == 0.0 {
                        continue;
                    }
                    for (p, wi) in prev_delta.iter_mut().zip(&w[j * n_in..(j + 1) * n_in]) {
                        *p += d * wi;
                    }
                }
                core::mem::swap(&mut delta, &mut prev_delta);
            }
        }
        if let Some(out) = input_cot {
            out.copy_from_slice(&delta);
        }
    }
}

impl Differentiable for MlpApprox {
    fn layout(&self) -> Layout {
        let mut l = Layout::new();
        for i in 0..self.n_layers() {
            let (n_in, n_out) = (self.sizes[i], self.sizes[i + 1]);
            l.push(format!("{}l{i}.w", self.prefix), n_in * n_out, SegmentKind::Weight { fan_in: n_in });
            l.push(format!("{}l{i}.b", self.prefix), n_out, SegmentKind::Bias);
        }
        l
    }

    fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    fn n_params(&self) -> usize {
        MlpApprox::n_params(self)
    }

    fn forward(&self, params: &[f64], input: &[f64], out: &mut [f64]) {
        let mut tape = Vec::new();
        self.forward_tape(params, input, &mut tape);
        out.copy_from_slice(self.output(&tape));
    }

    fn backward(&self, params: &[f64], input: &[f64], cot: &[f64], grad: &mut [f64]) {
        let mut tape = Vec::new();
        self.forward_tape(params, input, &mut tape);
        self.backward_tape(params, &tape, cot, grad, None);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::{init_params, predict, InitScheme};

    #[test]
    fn zero_last_layer_gives_zero_output() {
        let m = MlpApprox::new(vec![3, 5, 4, 2]).unwrap();
        let mut p = init_params(&Differentiable::layout(&m), InitScheme::Random(4)).unwrap();
        p.segment_mut("l2.w").unwrap().iter_mut().for_each(|x| *x = 0.0);
        assert_eq!(predict(&m, &p, &[0.3, -1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn layout_sizes() {
        let m = MlpApprox::new(vec![3, 5, 2]).unwrap().with_prefix("q1.");
        let l = Differentiable::layout(&m);
        assert_eq!(l.len(), 3 * 5 + 5 + 5 * 2 + 2);
        assert_eq!(l.find("q1.l1.w").unwrap().len, 10);
        assert_eq!(MlpApprox::new(vec![4]).unwrap().n_params(), 0);
        assert!(MlpApprox::new(vec![3, 0]).is_err());
    }

    #[test]
    fn identity_map_with_no_layers() {
        let m = MlpApprox::new(vec![3]).unwrap();
        let mut out = [0.0; 3];
        m.forward(&[], &[1.0, 2.0, 3.0], &mut out);
        assert_eq!(out, [1.0, 2.0, 3.0]);
    }
}
