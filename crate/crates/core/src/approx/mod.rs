//! Differentiable function approximators with hand-written reverse-mode
//! gradients.
//!
//! Every approximator exposes a [`Layout`] naming its parameter segments and
//! works on flat `&[f64]` parameter slices; [`ParamVector`] bundles the two.

mod linear;
mod mlp;
mod multihead;
mod spiral;

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, Error, Result};
use crate::math;

pub use linear::LinearApprox;
pub use mlp::{Activation, MlpApprox};
pub use multihead::{Architecture, HeadKind, MultiHeadApprox, MultiHeadTape};
pub use spiral::{spiral_derivative, spiral_value, SpiralApprox, SPIRAL_GROWTH, SPIRAL_TURN};

/// How a segment is initialised by [`InitScheme::Random`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentKind {
    /// Affine weights with the given fan-in: uniform in `±1/sqrt(fan_in)`.
    Weight { fan_in: usize },
    /// Biases: zero.
    Bias,
    /// Anything else: uniform in `[-1, 1]`.
    Plain,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub kind: SegmentKind,
}

impl Segment {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Named, disjoint, covering segments of a flat parameter array.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Layout {
    segments: Vec<Segment>,
    len: usize,
}

impl Layout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, len: usize, kind: SegmentKind) -> Range<usize> {
        let offset = self.len;
        self.segments.push(Segment {
            name: name.into(),
            offset,
            len,
            kind,
        });
        self.len += len;
        offset..self.len
    }

    /// Appends all segments of `other`, shifting their offsets.
    pub fn extend(&mut self, other: &Layout) {
        for s in &other.segments {
            self.push(s.name.clone(), s.len, s.kind);
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn find(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    /// Union range of all segments whose name starts with `prefix`.
    pub fn prefix_range(&self, prefix: &str) -> Option<Range<usize>> {
        let mut it = self.segments.iter().filter(|s| s.name.starts_with(prefix));
        let first = it.next()?;
        let end = it.fold(first.offset + first.len, |_, s| s.offset + s.len);
        Some(first.offset..end)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Layout,
}

impl ParamVector {
    pub fn zeros(layout: Layout) -> Self {
        ParamVector {
            values: vec![0.0; layout.len()],
            layout,
        }
    }

    pub fn from_values(layout: Layout, values: Vec<f64>) -> Result<Self> {
        check_len(layout.len(), values.len())?;
        Ok(ParamVector { values, layout })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.layout.find(name).map(|s| &self.values[s.range()])
    }

    pub fn segment_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let r = self.layout.find(name)?.range();
        Some(&mut self.values[r])
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &ParamVector) -> Result<()> {
        check_len(self.len(), other.len())?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        for a in &mut self.values {
            *a *= alpha;
        }
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        check_len(self.len(), other.len())?;
        Ok(math::dot(&self.values, &other.values))
    }

    pub fn norm(&self) -> f64 {
        math::norm2(&self.values)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, &x| m.max(math::abs(x)))
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }
}

impl core::ops::Add for &ParamVector {
    type Output = ParamVector;
    fn add(self, rhs: &ParamVector) -> ParamVector {
        assert_eq!(self.len(), rhs.len(), "parameter length mismatch");
        let values = self.values.iter().zip(&rhs.values).map(|(a, b)| a + b).collect();
        ParamVector {
            values,
            layout: self.layout.clone(),
        }
    }
}

impl core::ops::Sub for &ParamVector {
    type Output = ParamVector;
    fn sub(self, rhs: &ParamVector) -> ParamVector {
        assert_eq!(self.len(), rhs.len(), "parameter length mismatch");
        let values = self.values.iter().zip(&rhs.values).map(|(a, b)| a - b).collect();
        ParamVector {
            values,
            layout: self.layout.clone(),
        }
    }
}

impl core::ops::Mul<f64> for &ParamVector {
    type Output = ParamVector;
    fn mul(self, rhs: f64) -> ParamVector {
        let values = self.values.iter().map(|a| a * rhs).collect();
        ParamVector {
            values,
            layout: self.layout.clone(),
        }
    }
}

/// A parametric map `R^input_dim -> R^output_dim`.
pub trait Differentiable {
    fn layout(&self) -> Layout;
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;

    fn n_params(&self) -> usize {
        self.layout().len()
    }

    fn forward(&self, params: &[f64], input: &[f64], out: &mut [f64]);

    /// Accumulates `J^T cot` into `grad`, where `J` is the Jacobian of the
    /// outputs with respect to the parameters.
    fn backward(&self, params: &[f64], input: &[f64], cot: &[f64], grad: &mut [f64]);
}

/// A parametric value vector over the states of a prediction problem.
pub trait ValueModel {
    fn layout(&self) -> Layout;
    fn n_states(&self) -> usize;
    fn values(&self, params: &[f64], out: &mut [f64]);
    /// Overwrites `grad` with `J^T cot`.
    fn values_vjp(&self, params: &[f64], cot: &[f64], grad: &mut [f64]);
}

fn check_io<M: Differentiable + ?Sized>(model: &M, params: &[f64], input: &[f64]) -> Result<()> {
    check_len(model.n_params(), params.len())?;
    check_len(model.input_dim(), input.len())
}

pub fn predict<M: Differentiable + ?Sized>(model: &M, params: &ParamVector, input: &[f64]) -> Result<Vec<f64>> {
    check_io(model, params.values(), input)?;
    let mut out = vec![0.0; model.output_dim()];
    model.forward(params.values(), input, &mut out);
    Ok(out)
}

/// Analytic gradient of every output, one [`ParamVector`] per output.
pub fn gradient<M: Differentiable + ?Sized>(model: &M, params: &ParamVector, input: &[f64]) -> Result<Vec<ParamVector>> {
    check_io(model, params.values(), input)?;
    let m = model.output_dim();
    let mut cot = vec![0.0; m];
    (0..m)
        .map(|j| {
            cot.iter_mut().for_each(|c| *c = 0.0);
            cot[j] = 1.0;
            let mut g = ParamVector::zeros(params.layout().clone());
            model.backward(params.values(), input, &cot, g.values_mut());
            Ok(g)
        })
        .collect()
}

/// Central differences `(f(θ+h e_i) - f(θ-h e_i)) / 2h` of a scalar function.
pub fn central_difference<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Finite-difference gradient of every output of `model`.
pub fn finite_diff_gradient<M: Differentiable + ?Sized>(
    model: &M,
    params: &ParamVector,
    input: &[f64],
    h: f64,
) -> Result<Vec<ParamVector>> {
    check_io(model, params.values(), input)?;
    if !(h > 0.0) {
        return Err(Error::arg(format!("finite-difference step must be positive, got {h}")));
    }
    let m = model.output_dim();
    let mut out = vec![0.0; m];
    (0..m)
        .map(|j| {
            let g = central_difference(
                |p| {
                    model.forward(p, input, &mut out);
                    out[j]
                },
                params.values(),
                h,
            );
            ParamVector::from_values(params.layout().clone(), g)
        })
        .collect()
}

/// `‖a - b‖ / max(‖a‖, ‖b‖)`, and 0 when both are zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = math::sqrt(math::sq_dist(a, b));
    let scale = math::norm2(a).max(math::norm2(b));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitScheme {
    Constant(f64),
    /// Zero everywhere except the `w6` segment, which is one.
    StarBaird,
    Random(u64),
}

impl core::str::FromStr for InitScheme {
    type Err = Error;

    /// Accepts `constant(c)`, `star-baird` and `random(seed)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let arg = |prefix: &str| -> Option<&str> { s.strip_prefix(prefix)?.strip_suffix(')') };
        if s == "star-baird" {
            Ok(InitScheme::StarBaird)
        } else if let Some(c) = arg("constant(") {
            c.trim()
                .parse()
                .map(InitScheme::Constant)
                .map_err(|_| Error::arg(format!("bad constant in init scheme {s:?}")))
        } else if let Some(seed) = arg("random(") {
            seed.trim()
                .parse()
                .map(InitScheme::Random)
                .map_err(|_| Error::arg(format!("bad seed in init scheme {s:?}")))
        } else {
            Err(Error::arg(format!("unknown init scheme {s:?}")))
        }
    }
}

impl core::fmt::Display for InitScheme {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            InitScheme::Constant(c) => write!(f, "constant({c})"),
            InitScheme::StarBaird => f.write_str("star-baird"),
            InitScheme::Random(seed) => write!(f, "random({seed})"),
        }
    }
}

#[cfg(feature = "serde")]
impl serde::Serialize for InitScheme {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> core::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

#[cfg(feature = "serde")]
impl<'de> serde::Deserialize<'de> for InitScheme {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> core::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub fn init_params(layout: &Layout, scheme: InitScheme) -> Result<ParamVector> {
    let mut p = ParamVector::zeros(layout.clone());
    match scheme {
        InitScheme::Constant(c) => p.values_mut().iter_mut().for_each(|x| *x = c),
        InitScheme::StarBaird => {
            let w6 = p
                .segment_mut("w6")
                .ok_or_else(|| Error::arg("star-baird init needs a `w6` segment".to_string()))?;
            w6.iter_mut().for_each(|x| *x = 1.0);
        }
        InitScheme::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for seg in layout.segments() {
                let slot = &mut p.values_mut()[seg.range()];
                match seg.kind {
                    SegmentKind::Weight { fan_in } => {
                        let bound = 1.0 / math::sqrt(fan_in.max(1) as f64);
                        slot.iter_mut().for_each(|x| *x = rng.gen_range(-bound..bound));
                    }
                    SegmentKind::Bias => {}
                    SegmentKind::Plain => slot.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0)),
                }
            }
        }
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_segments() -> Layout {
        let mut l = Layout::new();
        l.push("a", 2, SegmentKind::Plain);
        l.push("b.w", 3, SegmentKind::Weight { fan_in: 4 });
        l.push("b.b", 1, SegmentKind::Bias);
        l
    }

    #[test]
    fn layout_covers_disjointly() {
        let l = two_segments();
        assert_eq!(l.len(), 6);
        assert_eq!(l.find("b.w").unwrap().range(), 2..5);
        assert_eq!(l.prefix_range("b."), Some(2..6));
        assert_eq!(l.prefix_range("c"), None);
    }

    #[test]
    fn param_arithmetic() {
        let l = two_segments();
        let a = ParamVector::from_values(l.clone(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = &a * 2.0;
        assert_eq!((&b - &a).values(), a.values());
        let mut c = a.clone();
        c.axpy(-1.0, &a).unwrap();
        assert_eq!(c.norm(), 0.0);
        assert_eq!(a.segment("b.b"), Some(&[6.0][..]));
        assert!(ParamVector::from_values(l, vec![0.0]).is_err());
    }

    #[test]
    fn central_difference_of_square() {
        let g = central_difference(|x| x[0] * x[0], &[3.0], 1e-5);
        assert!((g[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn init_schemes() {
        let l = two_segments();
        let p = init_params(&l, InitScheme::Constant(1.0)).unwrap();
        assert!(p.values().iter().all(|&x| x == 1.0));
        assert!(init_params(&l, InitScheme::StarBaird).is_err());
        let r = init_params(&l, InitScheme::Random(3)).unwrap();
        assert_eq!(r, init_params(&l, InitScheme::Random(3)).unwrap());
        assert!(r.segment("b.w").unwrap().iter().all(|x| x.abs() <= 0.5));
        assert_eq!(r.segment("b.b").unwrap(), &[0.0]);
    }

    #[test]
    fn init_scheme_parsing() {
        assert_eq!("star-baird".parse::<InitScheme>().unwrap(), InitScheme::StarBaird);
        assert_eq!("constant(14)".parse::<InitScheme>().unwrap(), InitScheme::Constant(14.0));
        assert_eq!("random(9)".parse::<InitScheme>().unwrap(), InitScheme::Random(9));
        assert!("xavier".parse::<InitScheme>().is_err());
        for s in [InitScheme::StarBaird, InitScheme::Constant(0.5), InitScheme::Random(1)] {
            assert_eq!(s.to_string().parse::<InitScheme>().unwrap(), s);
        }
    }
}
