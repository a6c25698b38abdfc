use crate::error::{Error, Result};
use crate::graph::Var;
use crate::param::ParamId;
use crate::tensor::Element;

use super::layers::{Conv, Ctx, Init, LayerNorm};

/// Multi-Dconv head transposed attention: attention across channels.
#[derive(Clone, Debug)]
pub struct Mdta {
    pub channels: usize,
    pub heads: usize,
    pub temperature: ParamId,
    pub qkv: Conv,
    pub qkv_dw: Conv,
    pub project_out: Conv,
}

impl Mdta {
    pub fn new<E: Element>(init: &mut Init<'_, E>, name: &str, channels: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !channels.is_multiple_of(heads) {
            return Err(Error::shape("mdta", format!("{heads} heads do not divide {channels} channels")));
        }
        init.scope(name, |init| {
            Ok(Self {
                channels,
                heads,
                temperature: init.constant("temperature", &[heads], 1.0)?,
                qkv: Conv::new(init, "qkv", channels, 3 * channels, 1, 1, false)?,
                qkv_dw: Conv::new(init, "qkv_dw", 3 * channels, 3 * channels, 3, 3 * channels, false)?,
                project_out: Conv::new(init, "project_out", channels, channels, 1, 1, false)?,
            })
        })
    }

    /// Returns the output and the attention maps, shaped (N·heads)×d×d.
    pub fn forward_with_attention<E: Element>(&self, cx: Ctx<'_, E>, x: Var) -> Result<(Var, Var)> {
        let g = cx.g;
        let [n, c, h, w] = dims(cx, x, "mdta")?;
        if c != self.channels {
            return Err(Error::shape("mdta", format!("expected {} channels, got {c}", self.channels)));
        }
        let qkv = self.qkv_dw.forward(cx, self.qkv.forward(cx, x)?)?;
        let d = c / self.heads;
        let heads_view = |start| -> Result<Var> {
            let part = g.slice_channels(qkv, start, c)?;
            g.reshape(part, &[n * self.heads, d, h * w])
        };
        let q = g.l2_normalize_last(heads_view(0)?)?;
        let k = g.l2_normalize_last(heads_view(c)?)?;
        let v = heads_view(2 * c)?;
        let logits = g.scale_batches(g.matmul(q, g.transpose_last2(k)?)?, cx.p(self.temperature))?;
        let attn = g.softmax(logits, 2)?;
        let out = g.reshape(g.matmul(attn, v)?, &[n, c, h, w])?;
        Ok((self.project_out.forward(cx, out)?, attn))
    }

    pub fn forward<E: Element>(&self, cx: Ctx<'_, E>, x: Var) -> Result<Var> {
        Ok(self.forward_with_attention(cx, x)?.0)
    }
}

/// Gated-Dconv feed-forward network.
#[derive(Clone, Debug)]
pub struct Gdfn {
    pub hidden: usize,
    pub project_in: Conv,
    pub dwconv: Conv,
    pub project_out: Conv,
}

impl Gdfn {
    pub fn new<E: Element>(init: &mut Init<'_, E>, name: &str, channels: usize, expansion: f64) -> Result<Self> {
        let hidden = (expansion * channels as f64).round() as usize;
        if hidden == 0 {
            return Err(Error::shape("gdfn", format!("expansion {expansion} gives an empty hidden layer")));
        }
        init.scope(name, |init| {
            Ok(Self {
                hidden,
                project_in: Conv::new(init, "project_in", channels, 2 * hidden, 1, 1, false)?,
                dwconv: Conv::new(init, "dwconv", 2 * hidden, 2 * hidden, 3, 2 * hidden, false)?,
                project_out: Conv::new(init, "project_out", hidden, channels, 1, 1, false)?,
            })
        })
    }

    pub fn forward<E: Element>(&self, cx: Ctx<'_, E>, x: Var) -> Result<Var> {
        let g = cx.g;
        let y = self.dwconv.forward(cx, self.project_in.forward(cx, x)?)?;
        let gate = g.gelu(g.slice_channels(y, 0, self.hidden)?);
        let value = g.slice_channels(y, self.hidden, self.hidden)?;
        self.project_out.forward(cx, g.mul(gate, value)?)
    }
}

#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub norm1: LayerNorm,
    pub attn: Mdta,
    pub norm2: LayerNorm,
    pub ffn: Gdfn,
}

impl TransformerBlock {
    pub fn new<E: Element>(
        init: &mut Init<'_, E>,
        name: &str,
        channels: usize,
        heads: usize,
        expansion: f64,
    ) -> Result<Self> {
        init.scope(name, |init| {
            Ok(Self {
                norm1: LayerNorm::new(init, "norm1", channels)?,
                attn: Mdta::new(init, "attn", channels, heads)?,
                norm2: LayerNorm::new(init, "norm2", channels)?,
                ffn: Gdfn::new(init, "ffn", channels, expansion)?,
            })
        })
    }

    pub fn forward<E: Element>(&self, cx: Ctx<'_, E>, x: Var) -> Result<Var> {
        let g = cx.g;
        let x = g.add(x, self.attn.forward(cx, self.norm1.forward(cx, x)?)?)?;
        g.add(x, self.ffn.forward(cx, self.norm2.forward(cx, x)?)?)
    }
}

/// Convolutional residual block standing in for a transformer block.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub conv1: Conv,
    pub conv2: Conv,
}

impl ConvBlock {
    pub fn new<E: Element>(init: &mut Init<'_, E>, name: &str, channels: usize) -> Result<Self> {
        init.scope(name, |init| {
            Ok(Self {
                conv1: Conv::new(init, "conv1", channels, channels, 3, 1, true)?,
                conv2: Conv::new(init, "conv2", channels, channels, 3, 1, true)?,
            })
        })
    }

    pub fn forward<E: Element>(&self, cx: Ctx<'_, E>, x: Var) -> Result<Var> {
        let g = cx.g;
        let y = self.conv2.forward(cx, g.gelu(self.conv1.forward(cx, x)?))?;
        g.add(x, y)
    }
}

#[derive(Clone, Debug)]
pub enum Block {
    Transformer(TransformerBlock),
    Conv(ConvBlock),
}

impl Block {
    pub fn new<E: Element>(
        init: &mut Init<'_, E>,
        name: &str,
        channels: usize,
        heads: usize,
        expansion: f64,
        transformer: bool,
    ) -> Result<Self> {
        Ok(if transformer {
            Block::Transformer(TransformerBlock::new(init, name, channels, heads, expansion)?)
        } else {
            Block::Conv(ConvBlock::new(init, name, channels)?)
        })
    }

    pub fn forward<E: Element>(&self, cx: Ctx<'_, E>, x: Var) -> Result<Var> {
        match self {
            Block::Transformer(b) => b.forward(cx, x),
            Block::Conv(b) => b.forward(cx, x),
        }
    }
}

pub(crate) fn dims<E: Element>(cx: Ctx<'_, E>, x: Var, op: &'static str) -> Result<[usize; 4]> {
    match *cx.g.shape(x) {
        [n, c, h, w] => Ok([n, c, h, w]),
        ref s => Err(Error::shape(op, format!("expected NCHW input, got {s:?}"))),
    }
}
