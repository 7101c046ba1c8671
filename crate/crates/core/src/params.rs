//! Named parameter collections and their gradient sets.

use crate::error::{Error, Result};
use crate::matrix::{global_l2_norm, Matrix};

/// A fixed, ordered collection of named tensors.
///
/// `visit` and `visit_mut` must yield tensors in the same order.
pub trait ParamSet {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Matrix)>);
    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Matrix>);

    fn named_tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        self.visit("", &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        self.visit_mut(&mut out);
        out
    }

    fn num_parameters(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

/// One gradient tensor per parameter tensor, in `ParamSet` order.
#[derive(Clone, Debug, PartialEq)]
pub struct GradSet {
    names: Vec<String>,
    tensors: Vec<Matrix>,
}

impl GradSet {
    pub fn zeros_like<P: ParamSet + ?Sized>(params: &P) -> Self {
        let (names, tensors) =
            params.named_tensors().into_iter().map(|(n, t)| (n, Matrix::zeros(t.rows(), t.cols()))).unzip();
        GradSet { names, tensors }
    }

    /// Snapshot of a parameter-shaped structure that holds gradients.
    pub fn from_params<P: ParamSet + ?Sized>(grads: &P) -> Self {
        let (names, tensors) = grads.named_tensors().into_iter().map(|(n, t)| (n, t.clone())).unzip();
        GradSet { names, tensors }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Matrix] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Matrix] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn global_norm(&self) -> f64 {
        global_l2_norm(&self.tensors)
    }

    pub fn scale(&mut self, k: f64) {
        for t in &mut self.tensors {
            t.scale_in_place(k);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Matrix::is_finite)
    }

    /// Zeroes every tensor whose name starts with `prefix`.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for (n, t) in self.names.iter().zip(&mut self.tensors) {
            if n.starts_with(prefix) {
                t.fill(0.0);
            }
        }
    }

    pub fn check_congruent<P: ParamSet + ?Sized>(&self, params: &P) -> Result<()> {
        let named = params.named_tensors();
        if named.len() != self.tensors.len() {
            return Err(Error::invalid(format!(
                "gradient set has {} tensors, parameters have {}",
                self.tensors.len(),
                named.len()
            )));
        }
        for ((name, p), g) in named.iter().zip(&self.tensors) {
            if p.shape() != g.shape() {
                return Err(Error::Shape {
                    op: "gradient congruence",
                    left_name: name.clone(),
                    left: p.shape(),
                    right_name: "gradient".into(),
                    right: g.shape(),
                });
            }
        }
        Ok(())
    }
}
