use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, ShuffleDirection, Var};
use crate::param::ParamStore;
use crate::tensor::{Element, Tensor};

use super::blocks::{dims, Block};
use super::config::{ModelConfig, LEVELS};
use super::layers::{Conv, Ctx, Init};
use super::prompt::{Peb, Pfb, Spb};

/// Spatial side lengths must be divisible by this.
pub const SPATIAL_MULTIPLE: usize = 1 << (LEVELS - 1);

/// 3×3 conv followed by a factor-2 pixel (un)shuffle.
#[derive(Clone, Debug)]
pub struct Resample {
    pub conv: Conv,
    pub direction: ShuffleDirection,
}

impl Resample {
    pub fn new<E: Element>(
        init: &mut Init<'_, E>,
        name: &str,
        channels: usize,
        direction: ShuffleDirection,
    ) -> Result<Self> {
        let cout = match direction {
            ShuffleDirection::Down if !channels.is_multiple_of(2) => {
                return Err(Error::shape("resample", format!("cannot halve {channels} channels")));
            }
            ShuffleDirection::Down => channels / 2,
            ShuffleDirection::Up => channels * 2,
        };
        Ok(Self { conv: Conv::new(init, name, channels, cout, 3, 1, false)?, direction })
    }

    pub fn forward<E: Element>(&self, cx: Ctx<'_, E>, x: Var) -> Result<Var> {
        cx.g.pixel_shuffle(self.conv.forward(cx, x)?, 2, self.direction)
    }
}

#[derive(Clone, Debug)]
pub struct DecoderLevel {
    pub up: Resample,
    pub reduce: Conv,
    pub blocks: Vec<Block>,
}

/// Layer structure of the network; parameter values live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Network {
    pub stem: Conv,
    pub encoder: Vec<Vec<Block>>,
    pub down: Vec<Resample>,
    /// Decoder levels indexed by encoder level, 0..LEVELS-1.
    pub decoder: Vec<DecoderLevel>,
    pub spbs: Vec<Spb>,
    pub head: Conv,
}

/// Intermediate values recorded by [`MedPrompt::forward_traced`].
#[derive(Clone, Debug)]
pub struct Trace {
    pub output: Var,
    /// Input and output of each prompt block, in site order.
    pub sites: Vec<(Var, Var)>,
}

#[derive(Clone, Debug)]
pub struct MedPrompt<E: Element> {
    pub config: ModelConfig,
    pub params: ParamStore<E>,
    pub net: Network,
}

/// Builds and initialises a model. The same config and seed give
/// bit-identical parameters.
pub fn build_model<E: Element>(config: &ModelConfig, seed: u64) -> Result<MedPrompt<E>> {
    config.validate()?;
    let mut params = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = &mut Init::new(&mut params, &mut rng);
    let cfg = config;
    let transformer = cfg.ablation.use_transformer;
    let blocks = |init: &mut Init<'_, E>, name: &str, level: usize| -> Result<Vec<Block>> {
        (0..cfg.blocks_per_level[level])
            .map(|i| {
                let c = cfg.channels(level);
                Block::new(init, &format!("{name}{level}.{i}"), c, cfg.heads_per_level[level], cfg.gdfn_expansion, transformer)
            })
            .collect()
    };

    let stem = Conv::new(init, "stem", cfg.in_channels, cfg.base_channels, 3, 1, true)?;
    let mut encoder = Vec::new();
    let mut down = Vec::new();
    for level in 0..LEVELS {
        encoder.push(blocks(init, "encoder", level)?);
        if level + 1 < LEVELS {
            down.push(Resample::new(init, &format!("down{level}"), cfg.channels(level), ShuffleDirection::Down)?);
        }
    }
    let mut decoder = Vec::new();
    for level in 0..LEVELS - 1 {
        let c = cfg.channels(level);
        decoder.push(DecoderLevel {
            up: Resample::new(init, &format!("up{level}"), cfg.channels(level + 1), ShuffleDirection::Up)?,
            reduce: Conv::new(init, &format!("reduce{level}"), 2 * c, c, 1, 1, false)?,
            blocks: blocks(init, "decoder", level)?,
        });
    }
    let mut spbs = Vec::new();
    for site in 0..cfg.spb_sites {
        let level = ModelConfig::spb_level(site);
        let c = cfg.channels(level);
        init.scope(&format!("spb{site}"), |init| {
            let peb = Peb::new(init, "peb", c, cfg.num_prompts, cfg.prompt_base_size, cfg.ablation.use_peb)?;
            let pfb =
                Pfb::new(init, "pfb", c, cfg.heads_per_level[level], cfg.gdfn_expansion, cfg.ablation.use_pfb, transformer)?;
            spbs.push(Spb { peb, pfb });
            Ok(())
        })?;
    }
    let head = Conv::new(init, "head", cfg.base_channels, cfg.out_channels, 3, 1, true)?;
    let net = Network { stem, encoder, down, decoder, spbs, head };
    Ok(MedPrompt { config: config.clone(), params, net })
}

impl<E: Element> MedPrompt<E> {
    pub fn param_count(&self) -> usize {
        self.params.num_elements()
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let &[_, c, h, w] = shape else {
            return Err(Error::shape("model_forward", format!("expected NCHW input, got {shape:?}")));
        };
        if c != self.config.in_channels {
            return Err(Error::shape(
                "model_forward",
                format!("expected {} input channels, got {c}", self.config.in_channels),
            ));
        }
        if h % SPATIAL_MULTIPLE != 0 || w % SPATIAL_MULTIPLE != 0 {
            return Err(Error::shape(
                "model_forward",
                format!("height {h} and width {w} must be divisible by {SPATIAL_MULTIPLE}"),
            ));
        }
        Ok(())
    }

    pub fn forward_traced(&self, g: &Graph<E>, x: Var) -> Result<Trace> {
        self.forward_in(Ctx::new(g, &self.params), x)
    }

    /// Forward pass reading parameter values from `store`, which must have
    /// the layout produced by [`build_model`] for this config.
    pub fn forward_in(&self, cx: Ctx<'_, E>, x: Var) -> Result<Trace> {
        self.check_input(&dims(cx, x, "model_forward")?)?;
        let g = cx.g;
        let net = &self.net;
        let run = |blocks: &[Block], mut h: Var| -> Result<Var> {
            for b in blocks {
                h = b.forward(cx, h)?;
            }
            Ok(h)
        };

        let mut skips = Vec::with_capacity(LEVELS);
        let mut h = net.stem.forward(cx, x)?;
        for level in 0..LEVELS {
            h = run(&net.encoder[level], h)?;
            if level + 1 < LEVELS {
                skips.push(h);
                h = net.down[level].forward(cx, h)?;
            }
        }
        let mut sites = Vec::with_capacity(net.spbs.len());
        let mut apply_site = |site: usize, h: Var| -> Result<Var> {
            match net.spbs.get(site) {
                Some(spb) => {
                    let out = spb.forward(cx, h)?;
                    sites.push((h, out));
                    Ok(out)
                }
                None => Ok(h),
            }
        };
        h = apply_site(0, h)?;
        for level in (0..LEVELS - 1).rev() {
            let dec = &net.decoder[level];
            let up = dec.up.forward(cx, h)?;
            h = dec.reduce.forward(cx, g.concat_channels(&[up, skips[level]])?)?;
            h = run(&dec.blocks, h)?;
            h = apply_site(LEVELS - 1 - level, h)?;
        }
        let output = net.head.forward(cx, h)?;
        Ok(Trace { output, sites })
    }

    pub fn forward(&self, g: &Graph<E>, x: Var) -> Result<Var> {
        Ok(self.forward_traced(g, x)?.output)
    }

    /// Inference without recording; the output is not clamped.
    pub fn predict(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let g = Graph::inference();
        let xv = g.constant(x.clone());
        let y = self.forward(&g, xv)?;
        Ok(g.value(y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::config::AblationFlags;

    #[test]
    fn resample_shapes() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let init = &mut Init::new(&mut store, &mut rng);
        let down = Resample::new(init, "d", 16, ShuffleDirection::Down).unwrap();
        let up = Resample::new(init, "u", 32, ShuffleDirection::Up).unwrap();
        let g = Graph::inference();
        let cx = Ctx::new(&g, &store);
        let x = g.constant(Tensor::ones(&[1, 16, 64, 64]));
        let d = down.forward(cx, x).unwrap();
        assert_eq!(g.shape(d), vec![1, 32, 32, 32]);
        assert_eq!(g.shape(up.forward(cx, d).unwrap()), vec![1, 16, 64, 64]);
        let odd = g.constant(Tensor::ones(&[1, 16, 5, 6]));
        assert!(down.forward(cx, odd).is_err());
    }

    #[test]
    fn default_model_shape_contract() {
        let model = build_model::<f32>(&ModelConfig::default(), 1).unwrap();
        let x = Tensor::from_fn(&[1, 1, 64, 64], |i| ((i * 37) % 101) as f32 / 100.0);
        let y = model.predict(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 64, 64]);
        assert!(y.all_finite());
    }

    #[test]
    fn rejects_bad_inputs() {
        let model = build_model::<f64>(&ModelConfig::minimal(), 1).unwrap();
        assert!(model.predict(&Tensor::zeros(&[1, 1, 12, 16])).unwrap_err().to_string().contains("divisible by 8"));
        assert!(model.predict(&Tensor::zeros(&[1, 2, 16, 16])).is_err());
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = build_model::<f32>(&ModelConfig::default(), 42).unwrap();
        let b = build_model::<f32>(&ModelConfig::default(), 42).unwrap();
        let c = build_model::<f32>(&ModelConfig::default(), 43).unwrap();
        assert_eq!(a.params.fingerprint(), b.params.fingerprint());
        assert_ne!(a.params.fingerprint(), c.params.fingerprint());
    }

    #[test]
    fn site_shapes_preserved() {
        let model = build_model::<f64>(&ModelConfig::minimal(), 3).unwrap();
        let g = Graph::inference();
        let x = g.constant(Tensor::full(&[2, 1, 16, 16], 0.5));
        let trace = model.forward_traced(&g, x).unwrap();
        assert_eq!(trace.sites.len(), 3);
        for (i, o) in trace.sites {
            assert_eq!(g.shape(i), g.shape(o));
        }
    }

    #[test]
    fn ablation_changes_count() {
        let full = build_model::<f32>(&ModelConfig::default(), 0).unwrap().param_count();
        let counts: Vec<usize> = AblationFlags::variants()
            .iter()
            .map(|(_, f)| build_model::<f32>(&ModelConfig::default().with_ablation(*f), 0).unwrap().param_count())
            .collect();
        assert_eq!(counts[0], full);
        assert!(counts[1..].iter().all(|&c| c != full));
        assert!(counts[2] < full);
    }
}
