//! Trainable parameter storage and finite-difference gradient checking.

use crate::error::{Error, Result};
use crate::tensor::Tensor2;

/// One named trainable tensor with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct ParamTensor {
    pub name: String,
    pub value: Tensor2,
    pub grad: Tensor2,
}

impl ParamTensor {
    pub fn new(name: impl Into<String>, value: Tensor2) -> Self {
        let grad = Tensor2::zeros(value.rows(), value.cols());
        ParamTensor {
            name: name.into(),
            value,
            grad,
        }
    }
}

/// Handle into a ParamSet. Handles stay valid for the life of the set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

/// Flat collection of all trainable tensors of one model, owned by exactly
/// one training run at a time.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    params: Vec<ParamTensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor2) -> ParamId {
        self.params.push(ParamTensor::new(name, value));
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Tensor2 {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor2 {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor2 {
        &self.params[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor2 {
        &mut self.params[id.0].grad
    }

    pub fn get(&self, idx: usize) -> &ParamTensor {
        &self.params[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut ParamTensor {
        &mut self.params[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamTensor> {
        self.params.iter()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }
}

/// Compares the analytic gradients stored in `set` against central finite
/// differences of `f`, entry by entry. Returns the max relative error with
/// denominator max(|analytic|, |numeric|, 1e-8).
///
/// The caller is responsible for having populated `set` grads (zero_grads,
/// forward, backward) before calling.
pub fn grad_check<F>(set: &mut ParamSet, f: F, h: f64) -> Result<f64>
where
    F: Fn(&ParamSet) -> Result<f64>,
{
    assert!(h > 0.0, "step size must be positive");
    let mut max_rel = 0.0f64;
    for idx in 0..set.len() {
        let n_entries = set.get(idx).value.data().len();
        for e in 0..n_entries {
            let orig = set.get(idx).value.data()[e];
            set.get_mut(idx).value.data_mut()[e] = orig + h;
            let f_plus = f(set)?;
            set.get_mut(idx).value.data_mut()[e] = orig - h;
            let f_minus = f(set)?;
            set.get_mut(idx).value.data_mut()[e] = orig;
            if !f_plus.is_finite() || !f_minus.is_finite() {
                return Err(Error::Eval(format!(
                    "non-finite objective while perturbing {}[{}]",
                    set.get(idx).name,
                    e
                )));
            }
            let numeric = (f_plus - f_minus) / (2.0 * h);
            let analytic = set.get(idx).grad.data()[e];
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            let rel = (analytic - numeric).abs() / denom;
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
