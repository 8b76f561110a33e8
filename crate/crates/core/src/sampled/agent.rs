use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::optim::Optimizer;
use super::replay::ReplayBuffer;
use super::{ControlAlgorithm, SampledConfig, TargetUpdate};
use crate::approx::{init_params, Differentiable, InitScheme, MultiHeadApprox, MultiHeadTape, ParamVector};
use crate::env::Transition;
use crate::error::{Error, Result};

/// Batch-mean loss values of one update.
///
/// `q_loss` is the sampled sum of squared TD errors `Σ_k δ_k²`, `h_loss` is
/// `Σ_k (H_k − δ_k)²` over the h-heads.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossDiagnostics {
    pub q_loss: f64,
    pub h_loss: f64,
}

impl LossDiagnostics {
    pub fn is_finite(&self) -> bool {
        self.q_loss.is_finite() && self.h_loss.is_finite()
    }
}

/// Gradient of the combined surrogate loss for one batch, with the TD errors
/// it was built from (`deltas[b * K + k - 1] = δ_k` of sample `b`).
#[derive(Debug, Clone, PartialEq)]
pub struct Deltas {
    pub grad: ParamVector,
    pub deltas: Vec<f64>,
    pub h_values: Vec<f64>,
    pub diagnostics: LossDiagnostics,
}

/// The stop-gradient constants of a batch: per sample, the TD errors
/// `δ_1..δ_K` and the coefficients multiplying `r + γ max Q_k(s')` in `L_Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenTerms {
    pub k: usize,
    pub deltas: Vec<f64>,
    pub through: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
struct Workspace {
    input: Vec<f64>,
    tape_s: MultiHeadTape,
    tape_next: MultiHeadTape,
    tape_target: MultiHeadTape,
    cot_s: Vec<f64>,
    cot_next: Vec<f64>,
    grad: Vec<f64>,
    // per sample, length K: δ_k, max_a Q_k(s') of the online net, its argmax,
    // and the through-target coefficient
    delta: Vec<f64>,
    next_max: Vec<f64>,
    next_arg: Vec<usize>,
    through: Vec<f64>,
}

/// Online network, target network and (for i-DQN) per-k target copies plus
/// the optimizer state. States are fed as one-hot vectors.
#[derive(Debug, Clone)]
pub struct Agent {
    config: SampledConfig,
    net: MultiHeadApprox,
    online: ParamVector,
    target: ParamVector,
    chain_target: Option<ParamVector>,
    optimizer: Optimizer,
    lr: Vec<f64>,
    train_steps: u64,
    ws: Workspace,
}

fn argmax(xs: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    (best, xs[best])
}

impl Agent {
    pub fn new(config: &SampledConfig, n_states: usize, n_actions: usize) -> Result<Self> {
        config.validate()?;
        let k = config.effective_k();
        let (n_h, h_first) = config.h_heads();
        let net = MultiHeadApprox::new(n_states, n_actions, k, n_h, h_first, &config.architecture)?;
        let online = init_params(&net.layout(), InitScheme::Random(config.seed))?;
        let mut lr = vec![config.lr_theta; online.len()];
        lr[net.h_range()].iter_mut().for_each(|l| *l = config.lr_z());
        let chain_target = (config.algorithm == ControlAlgorithm::Idqn).then(|| online.clone());
        Ok(Agent {
            optimizer: Optimizer::new(config.optimizer, online.len()),
            config: config.clone(),
            target: online.clone(),
            online,
            chain_target,
            lr,
            net,
            train_steps: 0,
            ws: Workspace::default(),
        })
    }

    pub fn config(&self) -> &SampledConfig {
        &self.config
    }

    pub fn network(&self) -> &MultiHeadApprox {
        &self.net
    }

    pub fn online(&self) -> &ParamVector {
        &self.online
    }

    pub fn online_mut(&mut self) -> &mut ParamVector {
        &mut self.online
    }

    pub fn target(&self) -> &ParamVector {
        &self.target
    }

    pub fn target_mut(&mut self) -> &mut ParamVector {
        &mut self.target
    }

    pub fn chain_target(&self) -> Option<&ParamVector> {
        self.chain_target.as_ref()
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    fn k(&self) -> usize {
        self.net.n_q()
    }

    fn one_hot(&mut self, state: usize) {
        let n = self.net.n_inputs();
        self.ws.input.clear();
        self.ws.input.resize(n, 0.0);
        self.ws.input[state] = 1.0;
    }

    /// Mean of the q-heads at `state`.
    pub fn q_values(&mut self, state: usize) -> Result<Vec<f64>> {
        if state >= self.net.n_inputs() {
            return Err(Error::arg(alloc::format!("state {state} out of range")));
        }
        self.one_hot(state);
        let k = self.k();
        self.net.forward_heads(self.online.values(), &self.ws.input, &mut self.ws.tape_s, k);
        let mut q = vec![0.0; self.net.n_actions()];
        for head in 0..k {
            for (a, v) in q.iter_mut().zip(self.net.head_output(&self.ws.tape_s, head)) {
                *a += v;
            }
        }
        q.iter_mut().for_each(|x| *x /= k as f64);
        Ok(q)
    }

    /// Greedy on the mean of the q-heads, lowest index on ties.
    pub fn greedy_action(&mut self, state: usize) -> Result<usize> {
        Ok(argmax(&self.q_values(state)?).0)
    }

    /// ε-greedy. One uniform draw decides exploration, a second picks the
    /// random action.
    pub fn select_action<R: Rng + ?Sized>(&mut self, state: usize, epsilon: f64, rng: &mut R) -> Result<usize> {
        if rng.gen::<f64>() < epsilon {
            Ok(rng.gen_range(0..self.net.n_actions()))
        } else {
            self.greedy_action(state)
        }
    }

    fn check_batch(&self, batch: &[Transition]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Empty);
        }
        let (n, a) = (self.net.n_inputs(), self.net.n_actions());
        for t in batch {
            if t.state >= n || t.next_state >= n || t.action >= a {
                return Err(Error::arg(alloc::format!("transition {t:?} out of range")));
            }
        }
        Ok(())
    }

    /// Evaluates `δ_1..δ_K`, the online max/argmax at `s'` and the
    /// through-target coefficients for one transition. Leaves the online
    /// forward tapes at `s` and `s'` in the workspace.
    fn sample_terms(&mut self, t: &Transition) {
        let k = self.k();
        let gamma = self.config.gamma;
        let mask = if t.terminal { 0.0 } else { 1.0 };
        let alg = self.config.algorithm;
        let ws = &mut self.ws;
        ws.delta.clear();
        ws.delta.resize(k, 0.0);
        ws.next_max.clear();
        ws.next_max.resize(k, 0.0);
        ws.next_arg.clear();
        ws.next_arg.resize(k, 0);
        ws.through.clear();
        ws.through.resize(k, 0.0);

        ws.input.clear();
        ws.input.resize(self.net.n_inputs(), 0.0);
        ws.input[t.state] = 1.0;
        self.net.forward_tape(self.online.values(), &ws.input, &mut ws.tape_s);

        ws.input.iter_mut().for_each(|x| *x = 0.0);
        ws.input[t.next_state] = 1.0;
        // online heads evaluated at s'
        let n_next = match alg {
            ControlAlgorithm::Gidqn => k - 1,
            ControlAlgorithm::Qrc => 1,
            _ => 0,
        };
        if n_next > 0 {
            self.net.forward_heads(self.online.values(), &ws.input, &mut ws.tape_next, n_next);
            for i in 0..n_next {
                let (arg, max) = argmax(self.net.head_output(&ws.tape_next, i));
                ws.next_arg[i] = arg;
                ws.next_max[i] = max;
            }
        }
        // bootstrap values max Q_{k-1}(s') for k = 1..K
        let mut boot = vec![0.0; k];
        if alg == ControlAlgorithm::Qrc {
            boot[0] = ws.next_max[0];
        } else {
            self.net.forward_heads(self.target.values(), &ws.input, &mut ws.tape_target, 1);
            boot[0] = argmax(self.net.head_output(&ws.tape_target, 0)).1;
            if alg == ControlAlgorithm::Gidqn {
                boot[1..k].copy_from_slice(&ws.next_max[..k - 1]);
            } else if k > 1 {
                let chain = self.chain_target.as_ref().unwrap_or(&self.online);
                self.net.forward_heads(chain.values(), &ws.input, &mut ws.tape_target, k - 1);
                for (i, b) in boot.iter_mut().enumerate().skip(1) {
                    *b = argmax(self.net.head_output(&ws.tape_target, i - 1)).1;
                }
            }
        }
        for i in 0..k {
            let q_sa = self.net.head_output(&ws.tape_s, i)[t.action];
            ws.delta[i] = t.reward + gamma * mask * boot[i] - q_sa;
        }
        match alg {
            ControlAlgorithm::Gidqn => {
                for i in 0..k - 1 {
                    ws.through[i] = self.net.head_output(&ws.tape_s, k + i)[t.action];
                }
            }
            ControlAlgorithm::Qrc => ws.through[0] = self.net.head_output(&ws.tape_s, 1)[t.action],
            _ => {}
        }
    }

    /// Chain index (1-based) regressed by h-head `j`.
    fn h_index(&self, j: usize) -> usize {
        self.net.h_first() + j
    }

    /// Gradient of the batch-mean surrogate `L_Q + L_H` (plus `β‖z‖²` unless
    /// weight decay is decoupled) at the current online parameters.
    pub fn compute_deltas(&mut self, batch: &[Transition]) -> Result<Deltas> {
        self.check_batch(batch)?;
        let k = self.k();
        let n_h = self.net.n_h();
        let n_a = self.net.n_actions();
        let n_heads = self.net.n_heads();
        let scale = 1.0 / batch.len() as f64;
        let gamma = self.config.gamma;
        let mut ws = core::mem::take(&mut self.ws);
        ws.grad.clear();
        ws.grad.resize(self.online.len(), 0.0);
        let mut deltas = Vec::with_capacity(batch.len() * k);
        let mut h_values = Vec::with_capacity(batch.len() * n_h);
        let mut diag = LossDiagnostics::default();
        for t in batch {
            self.ws = core::mem::take(&mut ws);
            self.sample_terms(t);
            ws = core::mem::take(&mut self.ws);
            let mask = if t.terminal { 0.0 } else { 1.0 };
            ws.cot_s.clear();
            ws.cot_s.resize(n_heads * n_a, 0.0);
            for i in 0..k {
                let d = ws.delta[i];
                deltas.push(d);
                diag.q_loss += d * d * scale;
                ws.cot_s[i * n_a + t.action] = -d * scale;
            }
            for j in 0..n_h {
                let head = k + j;
                let h = self.net.head_output(&ws.tape_s, head)[t.action];
                let d = ws.delta[self.h_index(j) - 1];
                h_values.push(h);
                diag.h_loss += (h - d) * (h - d) * scale;
                ws.cot_s[head * n_a + t.action] = 2.0 * (h - d) * scale;
            }
            self.net.backward_tape(self.online.values(), &mut ws.tape_s, &ws.cot_s, &mut ws.grad);
            let c = gamma * mask * scale;
            if c != 0.0 && ws.through.iter().any(|&x| x != 0.0) {
                ws.cot_next.clear();
                ws.cot_next.resize(n_heads * n_a, 0.0);
                for i in 0..k {
                    ws.cot_next[i * n_a + ws.next_arg[i]] = c * ws.through[i];
                }
                self.net.backward_tape(self.online.values(), &mut ws.tape_next, &ws.cot_next, &mut ws.grad);
            }
        }
        if !self.config.decoupled_weight_decay && self.config.beta != 0.0 {
            let r = self.net.h_range();
            let beta = self.config.beta;
            for (g, z) in ws.grad[r.clone()].iter_mut().zip(&self.online.values()[r]) {
                *g += 2.0 * beta * z;
            }
        }
        let grad = ParamVector::from_values(self.online.layout().clone(), ws.grad.clone())?;
        self.ws = ws;
        Ok(Deltas {
            grad,
            deltas,
            h_values,
            diagnostics: diag,
        })
    }

    /// The stop-gradient constants of `batch` at the current online
    /// parameters.
    pub fn frozen_terms(&mut self, batch: &[Transition]) -> Result<FrozenTerms> {
        self.check_batch(batch)?;
        let k = self.k();
        let mut f = FrozenTerms {
            k,
            deltas: Vec::with_capacity(batch.len() * k),
            through: Vec::with_capacity(batch.len() * k),
        };
        for t in batch {
            self.sample_terms(t);
            f.deltas.extend_from_slice(&self.ws.delta);
            f.through.extend_from_slice(&self.ws.through);
        }
        Ok(f)
    }

    /// Value of the surrogate loss at `params` with the constants in
    /// `frozen`, using forward passes only. Its gradient at the parameters
    /// `frozen` was taken from is [`compute_deltas`](Self::compute_deltas).
    pub fn surrogate_loss(&self, params: &[f64], batch: &[Transition], frozen: &FrozenTerms) -> Result<f64> {
        self.check_batch(batch)?;
        if params.len() != self.online.len() {
            return Err(Error::Dimension {
                expected: self.online.len(),
                got: params.len(),
            });
        }
        if frozen.k != self.k() || frozen.deltas.len() != batch.len() * frozen.k {
            return Err(Error::arg("frozen terms do not match the batch"));
        }
        let k = self.k();
        let n = self.net.n_inputs();
        let mut tape = MultiHeadTape::default();
        let mut input = vec![0.0; n];
        let mut loss = 0.0;
        for (b, t) in batch.iter().enumerate() {
            let delta = &frozen.deltas[b * k..(b + 1) * k];
            let through = &frozen.through[b * k..(b + 1) * k];
            let mask = if t.terminal { 0.0 } else { 1.0 };
            input.iter_mut().for_each(|x| *x = 0.0);
            input[t.state] = 1.0;
            self.net.forward_tape(params, &input, &mut tape);
            let mut l = 0.0;
            for i in 0..k {
                l -= self.net.head_output(&tape, i)[t.action] * delta[i];
            }
            for j in 0..self.net.n_h() {
                let h = self.net.head_output(&tape, k + j)[t.action];
                let d = delta[self.h_index(j) - 1];
                l += (d - h) * (d - h);
            }
            input[t.state] = 0.0;
            input[t.next_state] = 1.0;
            self.net.forward_tape(params, &input, &mut tape);
            for i in 0..k {
                if through[i] != 0.0 {
                    let m = argmax(self.net.head_output(&tape, i)).1;
                    l += (t.reward + self.config.gamma * mask * m) * through[i];
                }
            }
            loss += l;
        }
        loss /= batch.len() as f64;
        if !self.config.decoupled_weight_decay {
            let z = &params[self.net.h_range()];
            loss += self.config.beta * z.iter().map(|x| x * x).sum::<f64>();
        }
        Ok(loss)
    }

    /// One optimizer step on `batch`, followed by the target bookkeeping.
    pub fn train_on(&mut self, batch: &[Transition]) -> Result<LossDiagnostics> {
        let d = self.compute_deltas(batch)?;
        self.optimizer.step(self.online.values_mut(), d.grad.values(), &self.lr);
        if self.config.decoupled_weight_decay && self.config.beta != 0.0 {
            let shrink = 1.0 - 2.0 * self.config.beta * self.config.lr_z();
            let r = self.net.h_range();
            self.online.values_mut()[r].iter_mut().for_each(|z| *z *= shrink);
        }
        self.train_steps += 1;
        if self.config.algorithm != ControlAlgorithm::Qrc {
            match self.config.target {
                TargetUpdate::Hard { period } => {
                    if self.train_steps % period as u64 == 0 {
                        self.target_shift();
                    }
                }
                TargetUpdate::Soft { tau } => self.soft_update(tau),
            }
        }
        if let Some(chain) = self.chain_target.as_mut() {
            if self.train_steps % self.config.chain_sync_period as u64 == 0 {
                chain.values_mut().copy_from_slice(self.online.values());
            }
        }
        Ok(d.diagnostics)
    }

    /// Samples a batch and trains on it. `None` while the buffer holds fewer
    /// than `batch_size` transitions.
    pub fn train_step<R: Rng + ?Sized>(
        &mut self,
        buffer: &ReplayBuffer,
        rng: &mut R,
    ) -> Result<Option<LossDiagnostics>> {
        if buffer.len() < self.config.batch_size {
            return Ok(None);
        }
        let batch = buffer.sample(self.config.batch_size, rng);
        self.train_on(&batch).map(Some)
    }

    /// `θ̄0 ← θ1`, then `θ_k ← θ_{k+1}` along the chain (and likewise for
    /// the h-heads). The last head keeps its parameters.
    pub fn target_shift(&mut self) {
        self.target.values_mut().copy_from_slice(self.online.values());
        let k = self.k();
        let n_h = self.net.n_h();
        let shift = |from: usize, to: usize, agent: &mut Agent| {
            let src = agent.net.head_range(from);
            let dst = agent.net.head_range(to).start;
            agent.online.values_mut().copy_within(src.clone(), dst);
            agent.optimizer.copy_state(src, dst);
        };
        for i in 1..k {
            shift(i, i - 1, self);
        }
        if self.config.algorithm == ControlAlgorithm::Gidqn {
            for j in 1..n_h {
                shift(k + j, k + j - 1, self);
            }
        }
        if let Some(chain) = self.chain_target.as_mut() {
            chain.values_mut().copy_from_slice(self.online.values());
        }
    }

    /// `θ̄0 ← τ θ1 + (1 − τ) θ̄0`.
    pub fn soft_update(&mut self, tau: f64) {
        for (t, o) in self.target.values_mut().iter_mut().zip(self.online.values()) {
            *t = tau * o + (1.0 - tau) * *t;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::Architecture;
    use crate::sampled::OptimizerKind;

    fn config(alg: ControlAlgorithm) -> SampledConfig {
        let mut c = SampledConfig::new(alg);
        c.k = 3;
        c.architecture = Architecture::SharedLinear { trunk: vec![6] };
        c.seed = 3;
        c
    }

    fn batch() -> Vec<Transition> {
        vec![
            Transition {
                state: 0,
                action: 1,
                reward: 0.5,
                next_state: 2,
                terminal: false,
            },
            Transition {
                state: 3,
                action: 0,
                reward: 1.0,
                next_state: 1,
                terminal: true,
            },
            Transition {
                state: 2,
                action: 2,
                reward: 0.0,
                next_state: 3,
                terminal: false,
            },
        ]
    }

    #[test]
    fn head_counts() {
        let a = Agent::new(&config(ControlAlgorithm::Gidqn), 4, 3).unwrap();
        assert_eq!((a.network().n_q(), a.network().n_h()), (3, 2));
        let a = Agent::new(&config(ControlAlgorithm::Qrc), 4, 3).unwrap();
        assert_eq!((a.network().n_q(), a.network().n_h()), (1, 1));
        let a = Agent::new(&config(ControlAlgorithm::Idqn), 4, 3).unwrap();
        assert!(a.chain_target().is_some());
    }

    #[test]
    fn gradient_matches_surrogate_finite_difference() {
        for alg in [
            ControlAlgorithm::Gidqn,
            ControlAlgorithm::Qrc,
            ControlAlgorithm::Idqn,
            ControlAlgorithm::Dqn,
        ] {
            let mut a = Agent::new(&config(alg), 4, 3).unwrap();
            // distinct target so that δ_1 is not trivially tied to the online net
            a.target_mut().values_mut().iter_mut().for_each(|x| *x *= 0.7);
            let b = batch();
            let d = a.compute_deltas(&b).unwrap();
            let f = a.frozen_terms(&b).unwrap();
            let mut p = a.online().values().to_vec();
            let h = 1e-6;
            for i in 0..p.len() {
                let x = p[i];
                p[i] = x + h;
                let up = a.surrogate_loss(&p, &b, &f).unwrap();
                p[i] = x - h;
                let down = a.surrogate_loss(&p, &b, &f).unwrap();
                p[i] = x;
                let fd = (up - down) / (2.0 * h);
                let g = d.grad.values()[i];
                assert!((fd - g).abs() <= 1e-6 * (1.0 + g.abs()), "{alg:?} param {i}: fd {fd} vs {g}");
            }
        }
    }

    #[test]
    fn sgd_single_transition_step() {
        let mut c = config(ControlAlgorithm::Gidqn);
        c.optimizer = OptimizerKind::Sgd;
        c.lr_theta = 0.05;
        c.batch_size = 1;
        let mut a = Agent::new(&c, 4, 3).unwrap();
        let b = &batch()[..1];
        let before = a.online().clone();
        let d = a.compute_deltas(b).unwrap();
        a.train_on(b).unwrap();
        for i in 0..before.len() {
            let want = before.values()[i] - 0.05 * d.grad.values()[i];
            assert!((a.online().values()[i] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn shift_moves_heads_down_the_chain() {
        let mut a = Agent::new(&config(ControlAlgorithm::Gidqn), 4, 3).unwrap();
        let old = a.online().clone();
        a.target_shift();
        let net = a.network().clone();
        assert_eq!(a.target().values(), old.values());
        assert_eq!(&a.online().values()[net.head_range(0)], &old.values()[net.head_range(1)]);
        assert_eq!(&a.online().values()[net.head_range(1)], &old.values()[net.head_range(2)]);
        assert_eq!(&a.online().values()[net.head_range(2)], &old.values()[net.head_range(2)]);
        assert_eq!(&a.online().values()[net.head_range(3)], &old.values()[net.head_range(4)]);
    }

    #[test]
    fn rejects_bad_transitions() {
        let mut a = Agent::new(&config(ControlAlgorithm::Dqn), 4, 3).unwrap();
        let mut b = batch();
        b[0].action = 7;
        assert!(a.compute_deltas(&b).is_err());
        assert!(matches!(a.compute_deltas(&[]), Err(Error::Empty)));
    }
}
