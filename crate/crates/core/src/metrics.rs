//! Aggregation over runs: interquartile mean, smoothing, and
//! baseline-normalized learning curves.
//!
//! Scores are held in a [`ScoreTensor`] indexed `[seed][env][t]`. A score is
//! normalized by the baseline's end performance in the same environment,
//! `b_j` = mean over seeds of the baseline's final score.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_len, Error, Result};

/// Interquartile mean: the mean of the middle half of the sorted values,
/// trimming `n/4` from each end. When `n/4` is fractional the boundary
/// samples enter with fractional weight, so `[0, 10, 10, 10, 10, 1000]`
/// gives `(0.5·10 + 10 + 10 + 0.5·10) / 3 = 10`.
pub fn iqm(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty);
    }
    if let Some(x) = values.iter().find(|x| !x.is_finite()) {
        return Err(Error::arg(format!("non-finite value {x} in iqm input")));
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len() as f64;
    let (lo, hi) = (n / 4.0, 3.0 * n / 4.0);
    let mut acc = 0.0;
    for (i, x) in v.iter().enumerate() {
        // overlap of [i, i+1) with [lo, hi)
        let w = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
        acc += w * x;
    }
    Ok(acc / (hi - lo))
}

/// Centered moving average with an odd `window`; near the ends the window
/// is truncated to the available samples.
pub fn smooth(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::arg(format!("smoothing window must be odd, got {window}")));
    }
    if window > series.len() {
        return Err(Error::arg(format!(
            "smoothing window {window} exceeds series length {}",
            series.len()
        )));
    }
    let half = window / 2;
    Ok((0..series.len())
        .map(|i| {
            let a = i.saturating_sub(half);
            let b = (i + half + 1).min(series.len());
            series[a..b].iter().sum::<f64>() / (b - a) as f64
        })
        .collect())
}

/// Scores `s_{i,j}(t)` for seed `i`, environment `j`, timestep `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTensor {
    n_seeds: usize,
    n_envs: usize,
    n_steps: usize,
    data: Vec<f64>,
}

impl ScoreTensor {
    pub fn new(n_seeds: usize, n_envs: usize, n_steps: usize, data: Vec<f64>) -> Result<Self> {
        if n_seeds * n_envs * n_steps == 0 {
            return Err(Error::Empty);
        }
        check_len(n_seeds * n_envs * n_steps, data.len())?;
        Ok(ScoreTensor {
            n_seeds,
            n_envs,
            n_steps,
            data,
        })
    }

    /// From `curves[seed][env]`, all of equal length.
    pub fn from_curves(curves: &[Vec<Vec<f64>>]) -> Result<Self> {
        let n_seeds = curves.len();
        let n_envs = curves.first().map_or(0, Vec::len);
        let n_steps = curves.first().and_then(|c| c.first()).map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n_seeds * n_envs * n_steps);
        for seed in curves {
            check_len(n_envs, seed.len())?;
            for curve in seed {
                check_len(n_steps, curve.len())?;
                data.extend_from_slice(curve);
            }
        }
        Self::new(n_seeds, n_envs, n_steps, data)
    }

    pub fn n_seeds(&self) -> usize {
        self.n_seeds
    }

    pub fn n_envs(&self) -> usize {
        self.n_envs
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn get(&self, seed: usize, env: usize, t: usize) -> f64 {
        self.data[(seed * self.n_envs + env) * self.n_steps + t]
    }

    pub fn curve(&self, seed: usize, env: usize) -> &[f64] {
        let o = (seed * self.n_envs + env) * self.n_steps;
        &self.data[o..o + self.n_steps]
    }

    /// Per environment, the mean over seeds of the final score.
    pub fn end_performance(&self) -> Vec<f64> {
        (0..self.n_envs)
            .map(|j| (0..self.n_seeds).map(|i| self.get(i, j, self.n_steps - 1)).sum::<f64>() / self.n_seeds as f64)
            .collect()
    }

    /// IQM across seeds at each timestep, for one environment.
    pub fn iqm_curve(&self, env: usize) -> Result<Vec<f64>> {
        let mut col = vec![0.0; self.n_seeds];
        (0..self.n_steps)
            .map(|t| {
                for (i, c) in col.iter_mut().enumerate() {
                    *c = self.get(i, env, t);
                }
                iqm(&col)
            })
            .collect()
    }
}

fn check_baselines(scores: &ScoreTensor, baseline_end: &[f64]) -> Result<()> {
    check_len(scores.n_envs(), baseline_end.len())?;
    match baseline_end.iter().position(|&b| b == 0.0) {
        Some(j) => Err(Error::ZeroBaseline(j)),
        None => Ok(()),
    }
}

/// At each timestep, the IQM over all seeds and environments of
/// `s_{i,j}(t) / baseline_end[j]`.
pub fn normalized_curve(scores: &ScoreTensor, baseline_end: &[f64]) -> Result<Vec<f64>> {
    check_baselines(scores, baseline_end)?;
    let mut pool = Vec::with_capacity(scores.n_seeds() * scores.n_envs());
    (0..scores.n_steps())
        .map(|t| {
            pool.clear();
            for i in 0..scores.n_seeds() {
                for (j, b) in baseline_end.iter().enumerate() {
                    pool.push(scores.get(i, j, t) / b);
                }
            }
            iqm(&pool)
        })
        .collect()
}

/// IQM over (seed, environment) of the normalized score summed over time.
pub fn auc(scores: &ScoreTensor, baseline_end: &[f64]) -> Result<f64> {
    check_baselines(scores, baseline_end)?;
    let mut sums = Vec::with_capacity(scores.n_seeds() * scores.n_envs());
    for i in 0..scores.n_seeds() {
        for (j, b) in baseline_end.iter().enumerate() {
            sums.push(scores.curve(i, j).iter().map(|s| s / b).sum());
        }
    }
    iqm(&sums)
}

/// [`auc`] of `scores` divided by that of `baseline`, both normalized by
/// the baseline's end performance.
pub fn normalized_auc(scores: &ScoreTensor, baseline: &ScoreTensor) -> Result<f64> {
    check_len(baseline.n_envs(), scores.n_envs())?;
    check_len(baseline.n_steps(), scores.n_steps())?;
    let b = baseline.end_performance();
    let own = auc(baseline, &b)?;
    if own == 0.0 {
        return Err(Error::arg("baseline area under the curve is zero"));
    }
    Ok(auc(scores, &b)? / own)
}
