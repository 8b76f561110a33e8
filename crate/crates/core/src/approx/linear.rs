use alloc::format;
use alloc::vec::Vec;

use super::{Differentiable, Layout, ParamVector, SegmentKind, ValueModel};
use crate::error::{check_len, Error, Result};
use crate::mdp::FeatureMap;

/// `V(s) = φ(s)·w`. Weights are laid out as one-element segments `w0`,
/// `w1`, ... so single weights can be addressed by name.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearApprox {
    features: FeatureMap,
}

impl LinearApprox {
    pub fn new(features: FeatureMap) -> Self {
        LinearApprox { features }
    }

    pub fn features(&self) -> &FeatureMap {
        &self.features
    }

    pub fn state_value(&self, params: &ParamVector, state: usize) -> Result<f64> {
        check_len(self.features.dim(), params.len())?;
        if state >= self.features.n_states() {
            return Err(Error::arg(format!("state {state} out of range")));
        }
        Ok(self.features.sparse_row(state).iter().map(|&(j, x)| x * params.values()[j]).sum())
    }

    pub fn state_values(&self, params: &ParamVector) -> Result<Vec<f64>> {
        check_len(self.features.dim(), params.len())?;
        let mut out = alloc::vec![0.0; self.features.n_states()];
        self.values(params.values(), &mut out);
        Ok(out)
    }
}

impl Differentiable for LinearApprox {
    fn layout(&self) -> Layout {
        let mut l = Layout::new();
        for j in 0..self.features.dim() {
            l.push(format!("w{j}"), 1, SegmentKind::Plain);
        }
        l
    }

    fn input_dim(&self) -> usize {
        self.features.dim()
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn n_params(&self) -> usize {
        self.features.dim()
    }

    fn forward(&self, params: &[f64], input: &[f64], out: &mut [f64]) {
        out[0] = crate::math::dot(params, input);
    }

    fn backward(&self, _params: &[f64], input: &[f64], cot: &[f64], grad: &mut [f64]) {
        for (g, x) in grad.iter_mut().zip(input) {
            *g += cot[0] * x;
        }
    }
}

impl ValueModel for LinearApprox {
    fn layout(&self) -> Layout {
        Differentiable::layout(self)
    }

    fn n_states(&self) -> usize {
        self.features.n_states()
    }

    fn values(&self, params: &[f64], out: &mut [f64]) {
        self.features.apply(params, out);
    }

    fn values_vjp(&self, _params: &[f64], cot: &[f64], grad: &mut [f64]) {
        self.features.apply_transpose(cot, grad);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::{gradient, init_params, predict, InitScheme};
    use crate::mdp::star_mp;

    #[test]
    fn zero_weights_give_zero_values() {
        let (_, fm) = star_mp();
        let m = LinearApprox::new(fm);
        let w = init_params(&Differentiable::layout(&m), InitScheme::Constant(0.0)).unwrap();
        assert!(m.state_values(&w).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_is_feature_row() {
        let (_, fm) = star_mp();
        let m = LinearApprox::new(fm.clone());
        let w = init_params(&Differentiable::layout(&m), InitScheme::Random(1)).unwrap();
        for s in 0..7 {
            let g = gradient(&m, &w, fm.row(s)).unwrap();
            assert_eq!(g[0].values(), fm.row(s));
            let v = predict(&m, &w, fm.row(s)).unwrap()[0];
            assert!((v - m.state_value(&w, s).unwrap()).abs() < 1e-15);
        }
    }

    #[test]
    fn star_baird_values() {
        let (_, fm) = star_mp();
        let m = LinearApprox::new(fm);
        let w = init_params(&Differentiable::layout(&m), InitScheme::StarBaird).unwrap();
        assert_eq!(m.state_values(&w).unwrap(), alloc::vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 2.0]);
    }
}
