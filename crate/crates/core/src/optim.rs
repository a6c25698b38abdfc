use crate::error::{Error, Result};
use crate::param::ParamStore;
use crate::tensor::Element;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam moments for every parameter of one [`ParamStore`], in store order.
#[derive(Clone, Debug)]
pub struct AdamState<E> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<E>>,
    v: Vec<Vec<E>>,
}

impl<E: Element> AdamState<E> {
    pub fn new(store: &ParamStore<E>, config: AdamConfig) -> Self {
        let zeros = || store.iter().map(|p| vec![E::zero(); p.numel()]).collect();
        Self { config, step: 0, m: zeros(), v: zeros() }
    }

    pub(crate) fn from_parts(config: AdamConfig, step: u64, m: Vec<Vec<E>>, v: Vec<Vec<E>>) -> Self {
        Self { config, step, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, index: usize) -> &[E] {
        &self.m[index]
    }

    pub fn second_moment(&self, index: usize) -> &[E] {
        &self.v[index]
    }

    /// One bias-corrected Adam update from the gradients currently held in
    /// `store`. Gradients are left untouched; the caller zeroes them.
    pub fn step(&mut self, store: &mut ParamStore<E>) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer tracks {} parameters, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        for (i, p) in store.iter().enumerate() {
            if self.m[i].len() != p.numel() {
                return Err(Error::shape(
                    "adam_step",
                    format!("moment for `{}` has {} elements, parameter has {}", p.name(), self.m[i].len(), p.numel()),
                ));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let lr_t = E::lit(c.lr / (1.0 - c.beta1.powi(t)));
        let inv_bc2 = E::lit(1.0 / (1.0 - c.beta2.powi(t)));
        let (b1, b2, eps) = (E::lit(c.beta1), E::lit(c.beta2), E::lit(c.eps));
        let (one_b1, one_b2) = (E::lit(1.0 - c.beta1), E::lit(1.0 - c.beta2));
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grad = p.grad.data().to_vec();
            let value = p.value.data_mut();
            for (((w, &g), m), v) in value.iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                *w = *w - lr_t * *m / ((*v * inv_bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
