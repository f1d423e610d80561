//! Adam with decoupled weight decay, plus the gradient accumulator that
//! makes optimizer steps independent of micro-batch factorization.
//!
//! Backward passes return gradients of the masked cross-entropy SUM, so
//! accumulation is a plain f64 add across micro-batches; one divide by the
//! accumulated token count at step time yields the per-token mean gradient
//! no matter how the effective batch was split.

use crate::tensor::Tensor;
use indexmap::IndexMap;

/// f64 gradient sums keyed by parameter name, with the loss statistics
/// needed for accumulation-invariant normalization.
#[derive(Debug, Default)]
pub struct GradAccum {
    grads: IndexMap<String, Vec<f64>>,
    pub loss_sum: f64,
    pub token_count: usize,
}

impl GradAccum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, grad: &Tensor<f32>) {
        match self.grads.get_mut(name) {
            Some(acc) => {
                debug_assert_eq!(acc.len(), grad.numel());
                for (a, g) in acc.iter_mut().zip(grad.data()) {
                    *a += *g as f64;
                }
            }
            None => {
                self.grads
                    .insert(name.to_string(), grad.data().iter().map(|g| *g as f64).collect());
            }
        }
    }

    pub fn add_stats(&mut self, loss_sum: f64, token_count: usize) {
        self.loss_sum += loss_sum;
        self.token_count += token_count;
    }

    /// Mean masked NLL per supervised token over everything accumulated.
    pub fn mean_loss(&self) -> f64 {
        self.loss_sum / self.token_count.max(1) as f64
    }

    /// Per-token mean gradients: each sum divided by the token count.
    pub fn normalized(&self) -> IndexMap<String, Vec<f64>> {
        let n = self.token_count.max(1) as f64;
        self.grads
            .iter()
            .map(|(k, v)| (k.clone(), v.iter().map(|g| g / n).collect()))
            .collect()
    }

    pub fn clear(&mut self) {
        self.grads.clear();
        self.loss_sum = 0.0;
        self.token_count = 0;
    }
}

/// Decoupled-weight-decay Adam. Moments live in f64 keyed by parameter
/// name; parameters stay f32.
#[derive(Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: IndexMap<String, Vec<f64>>,
    v: IndexMap<String, Vec<f64>>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: IndexMap::new(),
            v: IndexMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Advance the shared step counter once per optimizer step, before the
    /// per-tensor updates it covers.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// One update of a single tensor with its normalized gradient. Weight
    /// decay is decoupled: it shrinks the weight directly and never enters
    /// the moments.
    pub fn update(&mut self, name: &str, lr: f64, theta: &mut Tensor<f32>, grad: &[f64]) {
        debug_assert!(self.step > 0, "begin_step before update");
        debug_assert_eq!(theta.numel(), grad.len());
        let n = grad.len();
        let m = self
            .m
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; n]);
        let v = self
            .v
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; n]);
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let decay = lr * self.weight_decay;
        for i in 0..n {
            let g = grad[i];
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            let w = theta.data()[i] as f64;
            let next = w - lr * mhat / (vhat.sqrt() + self.eps) - decay * w;
            theta.data_mut()[i] = next as f32;
        }
    }
}
