use crate::error::{Error, Result};
use crate::graph::Var;
use crate::param::ParamId;
use crate::tensor::{Element, Tensor};

use super::blocks::{dims, Block};
use super::layers::{Conv, Ctx, Init};

pub const PROMPT_INIT_STD: f64 = 0.02;

/// Learnable prompt components, N×C×S×S.
#[derive(Clone, Debug)]
pub struct PromptBank {
    pub components: ParamId,
    pub num_prompts: usize,
    pub channels: usize,
    pub size: usize,
}

impl PromptBank {
    pub fn new<E: Element>(
        init: &mut Init<'_, E>,
        name: &str,
        num_prompts: usize,
        channels: usize,
        size: usize,
    ) -> Result<Self> {
        let components = init.normal(name, &[num_prompts, channels, size, size], PROMPT_INIT_STD)?;
        Ok(Self { components, num_prompts, channels, size })
    }
}

/// Prompt embedding: a content-weighted sum of the resized prompt bank.
#[derive(Clone, Debug)]
pub struct Peb {
    pub bank: PromptBank,
    /// Absent for the static variant, which averages components uniformly.
    pub predictor: Option<Conv>,
    pub out: Conv,
}

impl Peb {
    pub fn new<E: Element>(
        init: &mut Init<'_, E>,
        name: &str,
        channels: usize,
        num_prompts: usize,
        size: usize,
        dynamic: bool,
    ) -> Result<Self> {
        init.scope(name, |init| {
            let bank = PromptBank::new(init, "prompts", num_prompts, channels, size)?;
            let predictor =
                if dynamic { Some(Conv::new(init, "predictor", channels, num_prompts, 1, 1, true)?) } else { None };
            let out = Conv::new(init, "out", channels, channels, 3, 1, true)?;
            Ok(Self { bank, predictor, out })
        })
    }

    /// Prompt weights, N_batch×N_prompts, each row on the simplex.
    pub fn weights<E: Element>(&self, cx: Ctx<'_, E>, f: Var) -> Result<Var> {
        let g = cx.g;
        let [n, c, _, _] = dims(cx, f, "peb")?;
        self.check_channels(c)?;
        let np = self.bank.num_prompts;
        match &self.predictor {
            Some(conv) => {
                let logits = conv.forward(cx, g.global_avg_pool(f)?)?;
                g.softmax(g.reshape(logits, &[n, np])?, 1)
            }
            None => Ok(g.constant(Tensor::full(&[n, np], E::lit(1.0 / np as f64)))),
        }
    }

    pub fn forward_with_weights<E: Element>(&self, cx: Ctx<'_, E>, f: Var) -> Result<(Var, Var)> {
        let g = cx.g;
        let [n, c, h, w] = dims(cx, f, "peb")?;
        let np = self.bank.num_prompts;
        let weights = self.weights(cx, f)?;
        let resized = g.bilinear_resize(cx.p(self.bank.components), h, w)?;
        let flat = g.reshape(resized, &[1, np, c * h * w])?;
        let mixed = g.matmul(g.reshape(weights, &[1, n, np])?, flat)?;
        let prompt = g.reshape(mixed, &[n, c, h, w])?;
        Ok((self.out.forward(cx, prompt)?, weights))
    }

    pub fn forward<E: Element>(&self, cx: Ctx<'_, E>, f: Var) -> Result<Var> {
        Ok(self.forward_with_weights(cx, f)?.0)
    }

    fn check_channels(&self, c: usize) -> Result<()> {
        if c != self.bank.channels {
            return Err(Error::shape(
                "peb",
                format!("prompt bank has {} channels, feature has {c}", self.bank.channels),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub enum Pfb {
    /// Block over concat(features, prompt) at 2C, then a 3×3 conv back to C.
    Fused { block: Block, reduce: Conv },
    /// f + conv3×3(p).
    Additive { conv: Conv },
}

impl Pfb {
    #[allow(clippy::too_many_arguments)]
    pub fn new<E: Element>(
        init: &mut Init<'_, E>,
        name: &str,
        channels: usize,
        heads: usize,
        expansion: f64,
        fused: bool,
        transformer: bool,
    ) -> Result<Self> {
        init.scope(name, |init| {
            Ok(if fused {
                Pfb::Fused {
                    block: Block::new(init, "block", 2 * channels, heads, expansion, transformer)?,
                    reduce: Conv::new(init, "reduce", 2 * channels, channels, 3, 1, true)?,
                }
            } else {
                Pfb::Additive { conv: Conv::new(init, "conv", channels, channels, 3, 1, true)? }
            })
        })
    }

    pub fn forward<E: Element>(&self, cx: Ctx<'_, E>, f: Var, p: Var) -> Result<Var> {
        let g = cx.g;
        let (fs, ps) = (g.shape(f), g.shape(p));
        if fs != ps {
            return Err(Error::shape("pfb", format!("feature {fs:?} and prompt {ps:?} differ")));
        }
        match self {
            Pfb::Fused { block, reduce } => {
                let z = block.forward(cx, g.concat_channels(&[f, p])?)?;
                reduce.forward(cx, z)
            }
            Pfb::Additive { conv } => g.add(f, conv.forward(cx, p)?),
        }
    }
}

/// Prompt block: fusion of the features with their own prompt embedding.
#[derive(Clone, Debug)]
pub struct Spb {
    pub peb: Peb,
    pub pfb: Pfb,
}

impl Spb {
    pub fn forward<E: Element>(&self, cx: Ctx<'_, E>, f: Var) -> Result<Var> {
        let p = self.peb.forward(cx, f)?;
        self.pfb.forward(cx, f, p)
    }
}
