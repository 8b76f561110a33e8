// Thin wrappers so the rest of the crate reads like std float code.

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}

#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    sqrt(dot(a, a))
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nonzero entries of a matrix in row-major order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Sparse {
    entries: alloc::vec::Vec<(usize, usize, f64)>,
}

impl Sparse {
    /// From a dense row-major `rows x cols` matrix scaled by `alpha`,
    /// optionally transposed.
    pub fn from_dense(rows: usize, cols: usize, m: &[f64], alpha: f64, transpose: bool) -> Self {
        let mut entries = alloc::vec::Vec::new();
        let (outer, inner) = if transpose { (cols, rows) } else { (rows, cols) };
        for i in 0..outer {
            for j in 0..inner {
                let x = if transpose { m[j * cols + i] } else { m[i * cols + j] };
                if x != 0.0 {
                    entries.push((i, j, alpha * x));
                }
            }
        }
        Sparse { entries }
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    /// `out = M x`.
    #[inline]
    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for &(i, j, v) in &self.entries {
            out[i] += v * x[j];
        }
    }
}
