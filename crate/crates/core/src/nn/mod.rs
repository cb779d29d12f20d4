//! Minimal CPU neural-network substrate: NCHW tensors, convolution via
//! im2col + GEMM, batch normalisation, pooling and an Adam optimiser.
//!
//! Layers keep their own backward caches: `forward_train` records what
//! `backward` needs, `forward` is a pure inference path usable from many
//! threads at once.

mod adam;
mod conv;
mod gemm;
mod norm;
mod pool;

pub use adam::{Adam, AdamConfig};
pub use conv::Conv2d;
pub use gemm::{matmul, Transpose};
pub use norm::BatchNorm2d;
pub use pool::{global_avg_pool, global_avg_pool_backward, MaxPool2d};

use num_traits::{Float, FromPrimitive};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Scalar type for generic numeric code (the discriminator head is written
/// against this so it can be checked in double precision).
pub trait Scalar: Float + FromPrimitive + std::iter::Sum + std::fmt::Debug + Send + Sync + 'static {}
impl<T> Scalar for T where T: Float + FromPrimitive + std::iter::Sum + std::fmt::Debug + Send + Sync + 'static {}

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor shape {shape:?} does not match {} elements",
            data.len()
        );
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(n, c, h, w)`; panics unless the tensor is 4-D.
    pub fn dims4(&self) -> (usize, usize, usize, usize) {
        match self.shape[..] {
            [n, c, h, w] => (n, c, h, w),
            _ => panic!("expected a 4-D tensor, got shape {:?}", self.shape),
        }
    }

    /// Rows `start..end` along the leading axis.
    pub fn slice_outer(&self, start: usize, end: usize) -> Tensor {
        let inner: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Tensor::from_vec(&shape, self.data[start * inner..end * inner].to_vec())
    }

    /// Concatenate along the leading (batch) axis.
    pub fn concat_outer(parts: &[&Tensor]) -> Tensor {
        assert!(!parts.is_empty());
        let tail = &parts[0].shape[1..];
        let mut n = 0;
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
        for p in parts {
            assert_eq!(&p.shape[1..], tail, "concat_outer: mismatched inner shapes");
            n += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = parts[0].shape.clone();
        shape[0] = n;
        Tensor::from_vec(&shape, data)
    }

    pub fn relu_inplace(&mut self) {
        for v in &mut self.data {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }
}

/// Role of a parameter blob; decides whether the optimiser touches it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    NormAffine,
    NormStat,
}

/// A named-by-position parameter tensor with an accumulated gradient.
#[derive(Clone, Debug)]
pub struct Param<T = f32> {
    pub value: Vec<T>,
    pub grad: Vec<T>,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    /// When false the optimiser skips this parameter and its gradient stays zero.
    pub trainable: bool,
}

impl<T: Scalar> Param<T> {
    pub fn new(shape: &[usize], value: Vec<T>, kind: ParamKind) -> Self {
        assert_eq!(shape.iter().product::<usize>(), value.len());
        let n = value.len();
        Self {
            value,
            grad: vec![T::zero(); n],
            shape: shape.to_vec(),
            kind,
            trainable: kind != ParamKind::NormStat,
        }
    }

    pub fn filled(shape: &[usize], v: T, kind: ParamKind) -> Self {
        Self::new(shape, vec![v; shape.iter().product()], kind)
    }

    /// He-normal initialisation with the given fan-in.
    pub fn he_normal<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Self {
        let std = (2.0 / fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let value = (0..shape.iter().product::<usize>())
            .map(|_| T::from_f64(normal.sample(rng)).unwrap())
            .collect();
        Self::new(shape, value, ParamKind::Weight)
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Anything owning named parameters.
pub trait Parameters {
    /// Push `(name, param)` for every parameter and buffer, in a stable order.
    fn collect_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>);

    fn named_params(&mut self) -> Vec<(String, &mut Param)> {
        let mut out = Vec::new();
        self.collect_params("", &mut out);
        out
    }

    fn named_params_with_prefix(&mut self, prefix: &str) -> Vec<(String, &mut Param)> {
        let mut out = Vec::new();
        self.collect_params(prefix, &mut out);
        out
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
