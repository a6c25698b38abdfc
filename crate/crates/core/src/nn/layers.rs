use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::graph::{ConvParams, Graph, Var};
use crate::param::{ParamId, ParamStore};
use crate::tensor::{Element, Tensor};

/// A graph paired with the parameter values it reads.
#[derive(Clone, Copy)]
pub struct Ctx<'a, E: Element> {
    pub g: &'a Graph<E>,
    pub store: &'a ParamStore<E>,
}

impl<'a, E: Element> Ctx<'a, E> {
    pub fn new(g: &'a Graph<E>, store: &'a ParamStore<E>) -> Self {
        Self { g, store }
    }

    pub fn p(&self, id: ParamId) -> Var {
        self.g.param(self.store.get(id))
    }
}

/// Registers freshly initialised parameters under a dotted name prefix.
pub struct Init<'a, E: Element> {
    pub store: &'a mut ParamStore<E>,
    pub rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a, E: Element> Init<'a, E> {
    pub fn new(store: &'a mut ParamStore<E>, rng: &'a mut ChaCha8Rng) -> Self {
        Self { store, rng, prefix: String::new() }
    }

    /// Runs `f` with `name` appended to the prefix.
    pub fn scope<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let saved = self.prefix.clone();
        if !self.prefix.is_empty() {
            self.prefix.push('.');
        }
        self.prefix.push_str(name);
        let out = f(self);
        self.prefix = saved;
        out
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    pub fn add(&mut self, name: &str, value: Tensor<E>) -> Result<ParamId> {
        let name = self.full_name(name);
        self.store.add(name, value)
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<ParamId> {
        let rng = &mut *self.rng;
        let t = Tensor::from_fn(shape, |_| E::lit(rng.random_range(-bound..=bound)));
        self.add(name, t)
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> Result<ParamId> {
        let dist = Normal::new(0.0, std).expect("finite std");
        let rng = &mut *self.rng;
        let t = Tensor::from_fn(shape, |_| E::lit(dist.sample(rng)));
        self.add(name, t)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<ParamId> {
        self.add(name, Tensor::full(shape, E::lit(value)))
    }
}

/// 2-D convolution with square kernel, stride 1 and "same" padding.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub params: ConvParams,
}

impl Conv {
    pub fn new<E: Element>(
        init: &mut Init<'_, E>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        groups: usize,
        bias: bool,
    ) -> Result<Self> {
        init.scope(name, |init| {
            let fan_in = cin / groups * kernel * kernel;
            let bound = 1.0 / (fan_in as f64).sqrt();
            let weight = init.uniform("weight", &[cout, cin / groups, kernel, kernel], bound)?;
            let bias = if bias { Some(init.constant("bias", &[cout], 0.0)?) } else { None };
            Ok(Self { weight, bias, params: ConvParams { groups, ..ConvParams::same(kernel) } })
        })
    }

    pub fn forward<E: Element>(&self, cx: Ctx<'_, E>, x: Var) -> Result<Var> {
        let w = cx.p(self.weight);
        let b = self.bias.map(|b| cx.p(b));
        cx.g.conv2d(x, w, b, self.params)
    }
}

/// Channel layer norm with a learnable scale and no shift.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub scale: ParamId,
}

impl LayerNorm {
    pub fn new<E: Element>(init: &mut Init<'_, E>, name: &str, channels: usize) -> Result<Self> {
        Ok(Self { scale: init.scope(name, |init| init.constant("scale", &[channels], 1.0))? })
    }

    pub fn forward<E: Element>(&self, cx: Ctx<'_, E>, x: Var) -> Result<Var> {
        cx.g.layer_norm_channels(x, cx.p(self.scale))
    }
}
