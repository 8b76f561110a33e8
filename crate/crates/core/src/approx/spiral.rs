use super::{Differentiable, Layout, SegmentKind, ValueModel};
use crate::math;
use crate::mdp::TriangleGeometry;

pub const SPIRAL_GROWTH: f64 = 0.15;
pub const SPIRAL_TURN: f64 = 0.866;

const U1: [f64; 3] = [1.0, 0.0, -1.0];
const U2: [f64; 3] = [1.0, -2.0, 1.0];

/// `V_ω = e^{0.15ω} [cos(0.866ω) (1,0,-1) - sin(0.866ω) (ε/√3) (1,-2,1)]`.
pub fn spiral_value(omega: f64, epsilon: i8) -> [f64; 3] {
    let a = math::exp(SPIRAL_GROWTH * omega);
    let c = math::cos(SPIRAL_TURN * omega);
    let s = math::sin(SPIRAL_TURN * omega) * epsilon as f64 / math::sqrt(3.0);
    [0, 1, 2].map(|i| a * (c * U1[i] - s * U2[i]))
}

/// `dV_ω/dω`.
pub fn spiral_derivative(omega: f64, epsilon: i8) -> [f64; 3] {
    let a = math::exp(SPIRAL_GROWTH * omega);
    let c = math::cos(SPIRAL_TURN * omega);
    let s = math::sin(SPIRAL_TURN * omega);
    let k = epsilon as f64 / math::sqrt(3.0);
    [0, 1, 2].map(|i| {
        let v = c * U1[i] - s * k * U2[i];
        let dv = -SPIRAL_TURN * s * U1[i] - SPIRAL_TURN * c * k * U2[i];
        a * (SPIRAL_GROWTH * v + dv)
    })
}

/// One learnable scalar `omega` mapped onto the spiral.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpiralApprox {
    geometry: TriangleGeometry,
}

impl SpiralApprox {
    pub fn new(geometry: TriangleGeometry) -> Self {
        SpiralApprox { geometry }
    }

    pub fn epsilon(&self) -> i8 {
        self.geometry.epsilon()
    }
}

impl Differentiable for SpiralApprox {
    fn layout(&self) -> Layout {
        let mut l = Layout::new();
        l.push("omega", 1, SegmentKind::Plain);
        l
    }

    fn input_dim(&self) -> usize {
        0
    }

    fn output_dim(&self) -> usize {
        3
    }

    fn n_params(&self) -> usize {
        1
    }

    fn forward(&self, params: &[f64], _input: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&spiral_value(params[0], self.epsilon()));
    }

    fn backward(&self, params: &[f64], _input: &[f64], cot: &[f64], grad: &mut [f64]) {
        grad[0] += math::dot(&spiral_derivative(params[0], self.epsilon()), cot);
    }
}

impl ValueModel for SpiralApprox {
    fn layout(&self) -> Layout {
        Differentiable::layout(self)
    }

    fn n_states(&self) -> usize {
        3
    }

    fn values(&self, params: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&spiral_value(params[0], self.epsilon()));
    }

    fn values_vjp(&self, params: &[f64], cot: &[f64], grad: &mut [f64]) {
        grad[0] = math::dot(&spiral_derivative(params[0], self.epsilon()), cot);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_of_spiral() {
        assert_eq!(spiral_value(0.0, 1), [1.0, 0.0, -1.0]);
        assert_eq!(spiral_value(0.0, -1), [1.0, 0.0, -1.0]);
    }

    #[test]
    fn derivative_at_zero_by_hand() {
        for eps in [-1i8, 1] {
            let k = eps as f64 / 3f64.sqrt();
            let want = [0.15 - 0.866 * k, 0.866 * 2.0 * k, -0.15 - 0.866 * k];
            let got = spiral_derivative(0.0, eps);
            for i in 0..3 {
                assert!((got[i] - want[i]).abs() < 1e-15);
            }
        }
    }
}
