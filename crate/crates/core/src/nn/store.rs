use super::Scalar;
use crate::error::{Error, Result};
use ndarray::ArrayD;

/// Handle into a `ParamStore`; cheap to copy, valid only for the store
/// that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

impl ParamId {
    /// Index-based handle for tests that need to reach a layer's tensors
    /// (registration order: weight before bias).
    #[cfg(test)]
    pub(crate) fn test_only(index: usize) -> Self {
        ParamId(index)
    }
}

#[derive(Clone, Debug)]
struct Entry<F> {
    name: String,
    value: ArrayD<F>,
    grad: ArrayD<F>,
    trainable: bool,
}

/// Central owner of all tensors of a model: trainable parameters plus
/// non-trainable buffers (batch-norm running statistics). Registration
/// order is fixed by the model constructor, which makes checkpoint layout
/// and parameter initialization deterministic.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<F> {
    entries: Vec<Entry<F>>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    pub fn register(&mut self, name: &str, value: ArrayD<F>) -> ParamId {
        self.push(name, value, true)
    }

    pub fn register_buffer(&mut self, name: &str, value: ArrayD<F>) -> ParamId {
        self.push(name, value, false)
    }

    fn push(&mut self, name: &str, value: ArrayD<F>, trainable: bool) -> ParamId {
        assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate tensor name {name}"
        );
        let grad = ArrayD::zeros(value.raw_dim());
        self.entries.push(Entry {
            name: name.to_string(),
            value,
            grad,
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn value(&self, id: ParamId) -> &ArrayD<F> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut ArrayD<F> {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &ArrayD<F> {
        &self.entries[id.0].grad
    }

    pub fn accumulate_grad(&mut self, id: ParamId, delta: &ArrayD<F>) {
        let g = &mut self.entries[id.0].grad;
        debug_assert_eq!(g.shape(), delta.shape());
        *g += delta;
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.fill(F::zero());
        }
    }

    pub fn n_tensors(&self) -> usize {
        self.entries.len()
    }

    /// All tensors in registration order, converted to f32 for storage.
    pub fn export_tensors(&self) -> Vec<(String, Vec<usize>, Vec<f32>)> {
        self.entries
            .iter()
            .map(|e| {
                let data = e.value.iter().map(|v| v.as_f64() as f32).collect();
                (e.name.clone(), e.value.shape().to_vec(), data)
            })
            .collect()
    }

    /// Load tensors by name. Every entry of the store must be covered
    /// exactly once and shapes must match.
    pub fn import_tensors(&mut self, tensors: &[(String, Vec<usize>, Vec<f32>)]) -> Result<()> {
        if tensors.len() != self.entries.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} tensors, model expects {}",
                tensors.len(),
                self.entries.len()
            )));
        }
        for (name, shape, data) in tensors {
            let entry = self
                .entries
                .iter_mut()
                .find(|e| &e.name == name)
                .ok_or_else(|| Error::Format(format!("unexpected tensor {name}")))?;
            if entry.value.shape() != shape.as_slice() {
                return Err(Error::Format(format!(
                    "tensor {name}: shape {:?} vs expected {:?}",
                    shape,
                    entry.value.shape()
                )));
            }
            if data.len() != entry.value.len() {
                return Err(Error::Format(format!("tensor {name}: payload length")));
            }
            for (dst, src) in entry.value.iter_mut().zip(data) {
                *dst = F::from_f64(*src as f64);
            }
        }
        Ok(())
    }
}

/// Adaptive-moment stochastic gradient optimizer with the standard
/// bias-corrected first/second moment updates (betas 0.9/0.999, eps 1e-8).
#[derive(Clone, Debug)]
pub struct Adam<F> {
    lr: F,
    beta1: F,
    beta2: F,
    eps: F,
    t: i32,
    moments: Vec<Option<(ArrayD<F>, ArrayD<F>)>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(store: &ParamStore<F>, lr: f64) -> Self {
        let moments = store
            .entries
            .iter()
            .map(|e| {
                e.trainable
                    .then(|| (ArrayD::zeros(e.value.raw_dim()), ArrayD::zeros(e.value.raw_dim())))
            })
            .collect();
        Self {
            lr: F::from_f64(lr),
            beta1: F::from_f64(0.9),
            beta2: F::from_f64(0.999),
            eps: F::from_f64(1e-8),
            t: 0,
            moments,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<F>) {
        self.t += 1;
        let one = F::one();
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let bc1 = one - b1.powi(self.t);
        let bc2 = one - b2.powi(self.t);
        for (entry, slot) in store.entries.iter_mut().zip(&mut self.moments) {
            let Some((m, v)) = slot else { continue };
            ndarray::azip!((m in m, v in v, p in &mut entry.value, &g in &entry.grad) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p = *p - lr * mhat / (vhat.sqrt() + eps);
            });
        }
    }
}
