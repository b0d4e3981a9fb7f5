use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng as _;

use crate::rng::Rng;
use crate::tensor::{Matrix, Scalar};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<S = f32> {
    names: Vec<String>,
    tensors: Vec<Matrix<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self { names: Vec::new(), tensors: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix<S>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Matrix<S> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix<S> {
        &mut self.tensors[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Matrix::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix<S>)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    pub fn tensors(&self) -> &[Matrix<S>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Matrix<S>] {
        &mut self.tensors
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Zero-filled gradient buffers shaped like this store.
    pub fn zeros_like(&self) -> Gradients<S> {
        Gradients { tensors: self.tensors.iter().map(|t| Matrix::zeros(t.rows(), t.cols())).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Matrix::is_finite)
    }

    /// Replace a tensor by name, checking its shape.
    pub fn assign(&mut self, name: &str, value: Matrix<S>) -> Result<(), String> {
        let id = self.find(name).ok_or_else(|| alloc::format!("unknown parameter {name}"))?;
        let cur = &self.tensors[id.0];
        if cur.shape() != value.shape() {
            return Err(alloc::format!(
                "parameter {name} has shape {:?}, got {:?}",
                cur.shape(),
                value.shape()
            ));
        }
        self.tensors[id.0] = value;
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore { names: self.names.clone(), tensors: self.tensors.iter().map(Matrix::cast).collect() }
    }
}

/// Gradient buffers parallel to a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<S = f32> {
    tensors: Vec<Matrix<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, id: ParamId) -> &Matrix<S> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix<S> {
        &mut self.tensors[id.0]
    }

    pub fn tensors(&self) -> &[Matrix<S>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Matrix<S>] {
        &mut self.tensors
    }

    pub fn zero(&mut self) {
        self.tensors.iter_mut().for_each(|t| t.fill(S::zero()));
    }

    pub fn scale(&mut self, k: S) {
        self.tensors.iter_mut().for_each(|t| t.scale(k));
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Matrix::is_finite)
    }

    pub fn global_norm(&self) -> S {
        self.tensors
            .iter()
            .flat_map(|t| t.as_slice().iter())
            .fold(S::zero(), |a, &x| a + x * x)
            .sqrt()
    }
}

/// Uniform initialiser on `[-bound, bound]`.
pub(crate) fn uniform<S: Scalar>(rows: usize, cols: usize, bound: f64, rng: &mut Rng) -> Matrix<S> {
    Matrix::from_fn(rows, cols, |_, _| S::lit(rng.gen_range(-bound..=bound)))
}

/// Glorot-uniform bound for a `fan_in → fan_out` map.
pub(crate) fn glorot(fan_in: usize, fan_out: usize) -> f64 {
    num_traits::Float::sqrt(6.0 / (fan_in + fan_out) as f64)
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        alloc::format!("{prefix}.{name}")
    }
}
