//! Markov processes used for expected-update prediction and their exact
//! Bellman operators.
//!
//! Three processes are provided, all with zero reward on every transition,
//! so the true value function is identically zero:
//!
//! * [`star_mp`]: seven states, six of which feed a hub that loops on itself.
//!   Seven weights `w0..w6`; peripheral state `i` has value `2*w_i + w6`
//!   and the hub has value `2*w6`:
//!
//!   ```text
//!   state   w0 w1 w2 w3 w4 w5 w6
//!   p0       2  0  0  0  0  0  1
//!   p1       0  2  0  0  0  0  1
//!   p2       0  0  2  0  0  0  1
//!   p3       0  0  0  2  0  0  1
//!   p4       0  0  0  0  2  0  1
//!   p5       0  0  0  0  0  2  1
//!   hub      0  0  0  0  0  0  2
//!   ```
//!
//! * [`hall_mp`]: a five-state corridor `0 -> 1 -> 2 -> 3 -> 4`, the last
//!   state absorbing, with one-hot features (identity feature matrix).
//! * the triangle process, which has no kernel: its operator halves a
//!   vector on the plane orthogonal to `(1,1,1)` and rotates it by -60
//!   degrees about that axis ([`triangle_bellman`]).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_len, Error, Result};
use crate::math;

/// Exact expected Bellman operator for prediction together with its adjoint.
///
/// `apply_adjoint` computes `J^T c` where `J` is the Jacobian of `apply`
/// (constant, since all operators here are affine).
pub trait BellmanOperator {
    fn n_states(&self) -> usize;
    fn apply(&self, v: &[f64], out: &mut [f64]);
    fn apply_adjoint(&self, cot: &[f64], out: &mut [f64]);
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularMP {
    n_states: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    gamma: f64,
    successors: Vec<Vec<(usize, f64)>>,
    scaled_kernel: math::Sparse,
    scaled_kernel_t: math::Sparse,
    expected_reward: Vec<f64>,
}

impl TabularMP {
    /// `transition` and `reward` are row-major `n x n` matrices.
    pub fn new(n_states: usize, transition: Vec<f64>, reward: Vec<f64>, gamma: f64) -> Result<Self> {
        if n_states == 0 {
            return Err(Error::arg("process needs at least one state"));
        }
        check_len(n_states * n_states, transition.len())?;
        check_len(n_states * n_states, reward.len())?;
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::arg(format!("gamma must lie in [0, 1), got {gamma}")));
        }
        let mut successors = vec![Vec::new(); n_states];
        let mut expected_reward = vec![0.0; n_states];
        for s in 0..n_states {
            let row = &transition[s * n_states..(s + 1) * n_states];
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::arg(format!("row {s} has a probability outside [0, 1]")));
            }
            let total: f64 = row.iter().sum();
            if math::abs(total - 1.0) > 1e-12 {
                return Err(Error::arg(format!("row {s} sums to {total}")));
            }
            for (t, &p) in row.iter().enumerate() {
                if p != 0.0 {
                    successors[s].push((t, p));
                    expected_reward[s] += p * reward[s * n_states + t];
                }
            }
        }
        let scaled_kernel = math::Sparse::from_dense(n_states, n_states, &transition, gamma, false);
        let scaled_kernel_t = math::Sparse::from_dense(n_states, n_states, &transition, gamma, true);
        Ok(TabularMP {
            n_states,
            transition,
            reward,
            gamma,
            successors,
            scaled_kernel,
            scaled_kernel_t,
            expected_reward,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        TabularMP::new(self.n_states, self.transition.clone(), self.reward.clone(), gamma)
    }

    pub fn transition(&self, s: usize, next: usize) -> f64 {
        self.transition[s * self.n_states + next]
    }

    pub fn reward(&self, s: usize, next: usize) -> f64 {
        self.reward[s * self.n_states + next]
    }

    pub fn transition_row(&self, s: usize) -> &[f64] {
        &self.transition[s * self.n_states..(s + 1) * self.n_states]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    /// Nonzero entries of row `s` as `(next_state, probability)`.
    pub fn successors(&self, s: usize) -> &[(usize, f64)] {
        &self.successors[s]
    }

    /// Nonzeros of `γP` as `(row, col, value)`.
    pub fn scaled_kernel(&self) -> &[(usize, usize, f64)] {
        self.scaled_kernel.entries()
    }

    /// `Σ_s' P(s'|s) r(s,s')` per state.
    pub fn expected_rewards(&self) -> &[f64] {
        &self.expected_reward
    }

    /// `ΓV(s) = Σ_s' P(s'|s) [r(s,s') + γ V(s')]`.
    pub fn bellman(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n_states, v.len())?;
        let mut out = vec![0.0; self.n_states];
        self.apply(v, &mut out);
        Ok(out)
    }
}

impl BellmanOperator for TabularMP {
    fn n_states(&self) -> usize {
        self.n_states
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        self.scaled_kernel.mul_vec(v, out);
        for (o, r) in out.iter_mut().zip(&self.expected_reward) {
            *o += r;
        }
    }

    fn apply_adjoint(&self, cot: &[f64], out: &mut [f64]) {
        self.scaled_kernel_t.mul_vec(cot, out);
    }
}

/// Exact expected Bellman iteration of `v` on `mp`.
pub fn tabular_bellman(mp: &TabularMP, v: &[f64]) -> Result<Vec<f64>> {
    mp.bellman(v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    n_states: usize,
    dim: usize,
    data: Vec<f64>,
    sparse: Vec<Vec<(usize, f64)>>,
    sparse_phi: math::Sparse,
    sparse_phi_t: math::Sparse,
}

impl FeatureMap {
    /// `data` is row-major, one row of length `dim` per state.
    pub fn new(n_states: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if n_states == 0 || dim == 0 {
            return Err(Error::arg("feature map needs at least one state and one feature"));
        }
        check_len(n_states * dim, data.len())?;
        let sparse = data
            .chunks(dim)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, &x)| x != 0.0)
                    .map(|(j, &x)| (j, x))
                    .collect()
            })
            .collect();
        Ok(FeatureMap {
            n_states,
            dim,
            sparse_phi: math::Sparse::from_dense(n_states, dim, &data, 1.0, false),
            sparse_phi_t: math::Sparse::from_dense(n_states, dim, &data, 1.0, true),
            data,
            sparse,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        FeatureMap::new(n, n, data).expect("identity features are well formed")
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.data[s * self.dim..(s + 1) * self.dim]
    }

    pub fn sparse_row(&self, s: usize) -> &[(usize, f64)] {
        &self.sparse[s]
    }

    /// Nonzeros of `Φ` as `(state, feature, value)`.
    pub fn entries(&self) -> &[(usize, usize, f64)] {
        self.sparse_phi.entries()
    }

    /// `out = Φ w`.
    pub fn apply(&self, w: &[f64], out: &mut [f64]) {
        self.sparse_phi.mul_vec(w, out);
    }

    /// `out = Φᵀ c`.
    pub fn apply_transpose(&self, c: &[f64], out: &mut [f64]) {
        self.sparse_phi_t.mul_vec(c, out);
    }

    pub fn matrix(&self) -> &[f64] {
        &self.data
    }
}

/// The seven-state star process (see the module docs for the feature table).
pub fn star_mp() -> (TabularMP, FeatureMap) {
    const N: usize = 7;
    const HUB: usize = 6;
    let mut transition = vec![0.0; N * N];
    for s in 0..N {
        transition[s * N + HUB] = 1.0;
    }
    let mp = TabularMP::new(N, transition, vec![0.0; N * N], 0.99).expect("star process is well formed");
    let mut features = vec![0.0; N * N];
    for i in 0..HUB {
        features[i * N + i] = 2.0;
        features[i * N + HUB] = 1.0;
    }
    features[HUB * N + HUB] = 2.0;
    let fm = FeatureMap::new(N, N, features).expect("star features are well formed");
    (mp, fm)
}

/// Five-state corridor with an absorbing last state and tabular features.
pub fn hall_mp() -> (TabularMP, FeatureMap) {
    const N: usize = 5;
    let mut transition = vec![0.0; N * N];
    for s in 0..N {
        let next = (s + 1).min(N - 1);
        transition[s * N + next] = 1.0;
    }
    let mp = TabularMP::new(N, transition, vec![0.0; N * N], 0.9).expect("hall process is well formed");
    (mp, FeatureMap::identity(N))
}

/// Rotation direction of the triangle spiral.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TriangleGeometry {
    epsilon: i8,
}

impl TriangleGeometry {
    pub fn new(epsilon: i8) -> Result<Self> {
        match epsilon {
            -1 | 1 => Ok(TriangleGeometry { epsilon }),
            e => Err(Error::arg(format!("epsilon must be -1 or +1, got {e}"))),
        }
    }

    pub fn epsilon(&self) -> i8 {
        self.epsilon
    }
}

pub const PLANE_TOLERANCE: f64 = 1e-9;

/// Halve and rotate by -60 degrees about `(1,1,1)/√3`.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleOperator {
    matrix: [[f64; 3]; 3],
}

impl Default for TriangleOperator {
    fn default() -> Self {
        Self::new()
    }
}

impl TriangleOperator {
    pub fn new() -> Self {
        let angle = -core::f64::consts::PI / 3.0;
        let (s, c) = (math::sin(angle), math::cos(angle));
        let k = 1.0 / math::sqrt(3.0);
        let n = [k, k, k];
        // Rodrigues: R = cI + s[n]x + (1-c) n n^T
        let cross = [[0.0, -n[2], n[1]], [n[2], 0.0, -n[0]], [-n[1], n[0], 0.0]];
        let mut matrix = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let id = if i == j { 1.0 } else { 0.0 };
                matrix[i][j] = 0.5 * (c * id + s * cross[i][j] + (1.0 - c) * n[i] * n[j]);
            }
        }
        TriangleOperator { matrix }
    }

    pub fn matrix(&self) -> [[f64; 3]; 3] {
        self.matrix
    }

    pub fn apply3(&self, v: [f64; 3]) -> [f64; 3] {
        let m = &self.matrix;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }
}

impl BellmanOperator for TriangleOperator {
    fn n_states(&self) -> usize {
        3
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let r = self.apply3([v[0], v[1], v[2]]);
        out.copy_from_slice(&r);
    }

    fn apply_adjoint(&self, cot: &[f64], out: &mut [f64]) {
        let m = &self.matrix;
        for (j, o) in out.iter_mut().enumerate() {
            *o = m[0][j] * cot[0] + m[1][j] * cot[1] + m[2][j] * cot[2];
        }
    }
}

/// Bellman operator of the triangle process. The input must lie on the
/// plane `x + y + z = 0` (absolute tolerance [`PLANE_TOLERANCE`] on the
/// normalized offset).
pub fn triangle_bellman(v: [f64; 3]) -> Result<[f64; 3]> {
    let offset = (v[0] + v[1] + v[2]) / math::sqrt(3.0);
    if math::abs(offset) > PLANE_TOLERANCE || !offset.is_finite() {
        return Err(Error::OffPlane(offset));
    }
    Ok(TriangleOperator::new().apply3(v))
}

/// Uniform state weighting `1/n`.
pub fn uniform_weights(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn star_is_row_stochastic_with_zero_reward() {
        let (mp, fm) = star_mp();
        assert_eq!(mp.gamma(), 0.99);
        assert!(mp.rewards().iter().all(|&r| r == 0.0));
        for s in 0..7 {
            assert_eq!(mp.transition_row(s).iter().sum::<f64>(), 1.0);
        }
        assert_eq!(fm.row(6), &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0]);
        assert_eq!(fm.row(2), &[0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn star_bellman_of_ones_matches_dense_product() {
        let (mp, _) = star_mp();
        let ones = [1.0; 7];
        let got = tabular_bellman(&mp, &ones).unwrap();
        for s in 0..7 {
            let mut want = 0.0;
            for t in 0..7 {
                want += mp.transition(s, t) * (mp.reward(s, t) + 0.99 * ones[t]);
            }
            assert_eq!(got[s], want);
        }
    }

    #[test]
    fn hall_values() {
        let (mp, fm) = hall_mp();
        assert_eq!(mp.gamma(), 0.9);
        assert_eq!(fm.dim(), 5);
        assert_eq!(tabular_bellman(&mp, &[0.0; 5]).unwrap(), vec![0.0; 5]);
        assert_eq!(mp.successors(4), &[(4, 1.0)]);
    }

    #[test]
    fn bellman_rejects_wrong_length() {
        let (mp, _) = hall_mp();
        assert_eq!(
            tabular_bellman(&mp, &[0.0; 3]),
            Err(Error::Dimension { expected: 5, got: 3 })
        );
    }

    #[test]
    fn rejects_bad_rows_and_gamma() {
        assert!(TabularMP::new(2, vec![0.5, 0.6, 0.0, 1.0], vec![0.0; 4], 0.9).is_err());
        assert!(TabularMP::new(2, vec![0.5, 0.5, 0.0, 1.0], vec![0.0; 4], 1.0).is_err());
    }

    #[test]
    fn triangle_origin_and_plane_check() {
        assert_eq!(triangle_bellman([0.0; 3]).unwrap(), [0.0; 3]);
        assert!(matches!(triangle_bellman([1.0, 0.0, 0.0]), Err(Error::OffPlane(_))));
    }

    #[test]
    fn triangle_adjoint_is_transpose() {
        let op = TriangleOperator::new();
        let u = [0.3, -1.2, 0.7];
        let w = [1.5, 0.25, -2.0];
        let mut gu = [0.0; 3];
        let mut atw = [0.0; 3];
        op.apply(&u, &mut gu);
        op.apply_adjoint(&w, &mut atw);
        let lhs = math::dot(&gu, &w);
        let rhs = math::dot(&u, &atw);
        assert!((lhs - rhs).abs() < 1e-14);
    }

    #[test]
    fn geometry_validates_epsilon() {
        assert!(TriangleGeometry::new(0).is_err());
        assert_eq!(TriangleGeometry::new(-1).unwrap().epsilon(), -1);
    }
}
