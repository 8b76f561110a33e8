use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use super::mlp::{Activation, MlpApprox};
use super::{Differentiable, Layout};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case", tag = "kind"))]
pub enum HeadKind {
    /// One affine layer.
    Linear,
    /// Two affine layers with a ReLU in between.
    Nonlinear { hidden: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case", tag = "kind"))]
pub enum Architecture {
    /// No shared trunk: every head is a full MLP on the raw input.
    Independent { hidden: Vec<usize> },
    /// Shared ReLU trunk followed by nonlinear heads.
    SharedNonlinear { trunk: Vec<usize>, head_hidden: usize },
    /// Shared ReLU trunk followed by linear heads.
    SharedLinear { trunk: Vec<usize> },
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture::SharedLinear { trunk: vec![64] }
    }
}

/// A trunk feeding `n_q` q-heads and `n_h` h-heads, all of width
/// `n_actions`. Parameters are laid out as trunk, then `q1..q{n_q}`, then
/// the h-heads, each head contiguous. Head `i < n_q` is `q{i+1}`; head
/// `n_q + j` is `h{h_first + j}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiHeadApprox {
    trunk: MlpApprox,
    heads: Vec<MlpApprox>,
    n_q: usize,
    h_first: usize,
    head_offsets: Vec<usize>,
    n_actions: usize,
}

#[derive(Debug, Clone, Default)]
pub struct MultiHeadTape {
    trunk: Vec<Vec<f64>>,
    heads: Vec<Vec<Vec<f64>>>,
    feature_cot: Vec<f64>,
    head_feature_cot: Vec<f64>,
}

impl MultiHeadApprox {
    pub fn new(
        n_inputs: usize,
        n_actions: usize,
        n_q: usize,
        n_h: usize,
        h_first: usize,
        architecture: &Architecture,
    ) -> Result<Self> {
        if n_q == 0 {
            return Err(Error::arg("at least one q-head is required"));
        }
        let (trunk_sizes, head_sizes) = match architecture {
            Architecture::Independent { hidden } => {
                let mut h = vec![n_inputs];
                h.extend_from_slice(hidden);
                h.push(n_actions);
                (vec![n_inputs], h)
            }
            Architecture::SharedNonlinear { trunk, head_hidden } => {
                let mut t = vec![n_inputs];
                t.extend_from_slice(trunk);
                let f = *t.last().unwrap();
                (t, vec![f, *head_hidden, n_actions])
            }
            Architecture::SharedLinear { trunk } => {
                let mut t = vec![n_inputs];
                t.extend_from_slice(trunk);
                let f = *t.last().unwrap();
                (t, vec![f, n_actions])
            }
        };
        let trunk = MlpApprox::new(trunk_sizes)?
            .with_output_activation(Activation::Relu)
            .with_prefix("trunk.");
        let mut heads = Vec::with_capacity(n_q + n_h);
        for i in 0..n_q {
            heads.push(MlpApprox::new(head_sizes.clone())?.with_prefix(format!("q{}.", i + 1)));
        }
        for j in 0..n_h {
            heads.push(MlpApprox::new(head_sizes.clone())?.with_prefix(format!("h{}.", h_first + j)));
        }
        let mut head_offsets = vec![trunk.n_params()];
        for h in &heads {
            let last = *head_offsets.last().unwrap();
            head_offsets.push(last + h.n_params());
        }
        Ok(MultiHeadApprox {
            trunk,
            heads,
            n_q,
            h_first,
            head_offsets,
            n_actions,
        })
    }

    pub fn n_q(&self) -> usize {
        self.n_q
    }

    pub fn n_h(&self) -> usize {
        self.heads.len() - self.n_q
    }

    pub fn n_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn h_first(&self) -> usize {
        self.h_first
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_inputs(&self) -> usize {
        self.trunk.sizes()[0]
    }

    pub fn trunk_range(&self) -> Range<usize> {
        0..self.head_offsets[0]
    }

    pub fn head_range(&self, head: usize) -> Range<usize> {
        self.head_offsets[head]..self.head_offsets[head + 1]
    }

    /// Index range of all h-head parameters.
    pub fn h_range(&self) -> Range<usize> {
        self.head_offsets[self.n_q]..*self.head_offsets.last().unwrap()
    }

    pub fn forward_tape(&self, params: &[f64], input: &[f64], tape: &mut MultiHeadTape) {
        self.forward_heads(params, input, tape, self.heads.len());
    }

    /// Like [`forward_tape`](Self::forward_tape) but only evaluates the first
    /// `n` heads.
    pub fn forward_heads(&self, params: &[f64], input: &[f64], tape: &mut MultiHeadTape, n: usize) {
        self.trunk.forward_tape(&params[self.trunk_range()], input, &mut tape.trunk);
        tape.heads.resize_with(self.heads.len(), Vec::new);
        let features = self.trunk.output(&tape.trunk);
        for (i, head) in self.heads.iter().enumerate().take(n) {
            head.forward_tape(&params[self.head_range(i)], features, &mut tape.heads[i]);
        }
    }

    pub fn head_output<'a>(&self, tape: &'a MultiHeadTape, head: usize) -> &'a [f64] {
        self.heads[head].output(&tape.heads[head])
    }

    /// Reverse pass. `cot` holds one `n_actions` block per head; blocks that
    /// are entirely zero are skipped.
    pub fn backward_tape(&self, params: &[f64], tape: &mut MultiHeadTape, cot: &[f64], grad: &mut [f64]) {
        let n_feat = *self.trunk.sizes().last().unwrap();
        let mut feature_cot = core::mem::take(&mut tape.feature_cot);
        let mut head_feature_cot = core::mem::take(&mut tape.head_feature_cot);
        feature_cot.clear();
        feature_cot.resize(n_feat, 0.0);
        head_feature_cot.resize(n_feat, 0.0);
        let mut any = false;
        for (i, head) in self.heads.iter().enumerate() {
            let c = &cot[i * self.n_actions..(i + 1) * self.n_actions];
            if c.iter().all(|&x| x == 0.0) {
                continue;
            }
            any = true;
            let r = self.head_range(i);
            head.backward_tape(&params[r.clone()], &tape.heads[i], c, &mut grad[r], Some(&mut head_feature_cot));
            for (f, h) in feature_cot.iter_mut().zip(&head_feature_cot) {
                *f += h;
            }
        }
        if any && self.trunk.n_layers() > 0 {
            let r = self.trunk_range();
            self.trunk.backward_tape(&params[r.clone()], &tape.trunk, &feature_cot, &mut grad[r], None);
        }
        tape.feature_cot = feature_cot;
        tape.head_feature_cot = head_feature_cot;
    }
}

impl Differentiable for MultiHeadApprox {
    fn layout(&self) -> Layout {
        let mut l = Differentiable::layout(&self.trunk);
        for h in &self.heads {
            l.extend(&Differentiable::layout(h));
        }
        l
    }

    fn input_dim(&self) -> usize {
        self.n_inputs()
    }

    fn output_dim(&self) -> usize {
        self.heads.len() * self.n_actions
    }

    fn n_params(&self) -> usize {
        *self.head_offsets.last().unwrap()
    }

    fn forward(&self, params: &[f64], input: &[f64], out: &mut [f64]) {
        let mut tape = MultiHeadTape::default();
        self.forward_tape(params, input, &mut tape);
        for i in 0..self.heads.len() {
            out[i * self.n_actions..(i + 1) * self.n_actions].copy_from_slice(self.head_output(&tape, i));
        }
    }

    fn backward(&self, params: &[f64], input: &[f64], cot: &[f64], grad: &mut [f64]) {
        let mut tape = MultiHeadTape::default();
        self.forward_tape(params, input, &mut tape);
        self.backward_tape(params, &mut tape, cot, grad);
    }
}
