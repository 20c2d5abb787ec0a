use crate::error::{invalid, shape_err, Result};
use crate::params::{Gradients, ParamStore};
use crate::tensor::Scalar;

/// Adam with bias correction and no weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        Self::with_hyper(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper(params: &ParamStore<T>, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = |p: &crate::params::Parameter<T>| vec![T::zero(); p.tensor.len()];
        AdamState {
            beta1,
            beta2,
            eps,
            step: 0,
            first: params.iter().map(zeros).collect(),
            second: params.iter().map(zeros).collect(),
        }
    }

    pub fn first_moment(&self, idx: usize) -> &[T] {
        &self.first[idx]
    }

    pub fn second_moment(&self, idx: usize) -> &[T] {
        &self.second[idx]
    }

    /// Applies one update to every trainable parameter that has a gradient.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &Gradients<T>, lr: f64) -> Result<()> {
        if !(lr > 0.0) {
            return Err(invalid!("learning rate must be positive, got {lr}"));
        }
        if self.first.len() != params.len() {
            return Err(shape_err!("optimizer tracks {} parameters, store has {}", self.first.len(), params.len()));
        }
        for (idx, p) in params.iter().enumerate() {
            if self.first[idx].len() != p.tensor.len() {
                return Err(shape_err!("moment buffer for {} has wrong size", p.name));
            }
            if let Some(g) = grads.0.get(idx).and_then(|g| g.as_ref()) {
                if g.len() != p.tensor.len() {
                    return Err(shape_err!("gradient for {} has length {}, expected {}", p.name, g.len(), p.tensor.len()));
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let bias1 = 1.0 - b1.powi(t);
        let bias2 = 1.0 - b2.powi(t);
        for (idx, p) in params.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let Some(g) = grads.0.get(idx).and_then(|g| g.as_ref()) else { continue };
            let m = &mut self.first[idx];
            let v = &mut self.second[idx];
            for ((w, &gv), (mv, vv)) in p.tensor.data_mut().iter_mut().zip(g).zip(m.iter_mut().zip(v.iter_mut())) {
                let gf = gv.f64();
                let m_new = b1 * mv.f64() + (1.0 - b1) * gf;
                let v_new = b2 * vv.f64() + (1.0 - b2) * gf * gf;
                *mv = T::of(m_new);
                *vv = T::of(v_new);
                let m_hat = m_new / bias1;
                let v_hat = v_new / bias2;
                *w = T::of(w.f64() - lr * m_hat / (v_hat.sqrt() + self.eps));
            }
        }
        Ok(())
    }
}
