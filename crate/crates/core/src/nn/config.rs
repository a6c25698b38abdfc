use std::fmt;

use crate::error::{Error, Result};

/// Switches for the ablation variants. All eight combinations are valid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AblationFlags {
    pub use_peb: bool,
    pub use_pfb: bool,
    pub use_transformer: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self::FULL
    }
}

impl AblationFlags {
    pub const FULL: Self = Self { use_peb: true, use_pfb: true, use_transformer: true };
    pub const WITHOUT_PEB: Self = Self { use_peb: false, ..Self::FULL };
    pub const WITHOUT_PFB: Self = Self { use_pfb: false, ..Self::FULL };
    pub const WITHOUT_TRANSFORMER: Self = Self { use_transformer: false, ..Self::FULL };

    /// The four variants of the ablation table, full model first.
    pub fn variants() -> [(&'static str, Self); 4] {
        [
            ("full", Self::FULL),
            ("w/o PEB", Self::WITHOUT_PEB),
            ("w/o PFB", Self::WITHOUT_PFB),
            ("w/o Transformer", Self::WITHOUT_TRANSFORMER),
        ]
    }

    pub fn all() -> impl Iterator<Item = Self> {
        (0..8u8).map(|bits| Self {
            use_peb: bits & 1 != 0,
            use_pfb: bits & 2 != 0,
            use_transformer: bits & 4 != 0,
        })
    }
}

impl fmt::Display for AblationFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "peb={} pfb={} transformer={}", self.use_peb, self.use_pfb, self.use_transformer)
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub base_channels: usize,
    pub blocks_per_level: [usize; 4],
    pub heads_per_level: [usize; 4],
    pub gdfn_expansion: f64,
    pub num_prompts: usize,
    pub prompt_base_size: usize,
    /// Number of prompt blocks, placed at the bottleneck and then after the
    /// two middle decoder levels, in that order.
    pub spb_sites: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub ablation: AblationFlags,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            base_channels: 16,
            blocks_per_level: [1, 2, 2, 4],
            heads_per_level: [1, 2, 4, 8],
            gdfn_expansion: 2.66,
            num_prompts: 5,
            prompt_base_size: 16,
            spb_sites: 3,
            in_channels: 1,
            out_channels: 1,
            ablation: AblationFlags::FULL,
        }
    }
}

pub const LEVELS: usize = 4;
pub const MAX_SPB_SITES: usize = LEVELS - 1;

impl ModelConfig {
    /// Small configuration used for end-to-end gradient checks.
    pub fn minimal() -> Self {
        Self {
            base_channels: 4,
            blocks_per_level: [1, 1, 1, 1],
            num_prompts: 2,
            prompt_base_size: 4,
            ..Self::default()
        }
    }

    pub fn with_ablation(mut self, ablation: AblationFlags) -> Self {
        self.ablation = ablation;
        self
    }

    /// Feature channels at encoder level `level` (0-based).
    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Hidden width of the gated feed-forward network at `channels`.
    pub fn gdfn_hidden(&self, channels: usize) -> usize {
        (self.gdfn_expansion * channels as f64).round() as usize
    }

    /// Encoder level whose resolution each prompt site operates at.
    pub fn spb_level(site: usize) -> usize {
        LEVELS - 1 - site
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.base_channels == 0 || !self.base_channels.is_multiple_of(2) {
            return fail(format!("base_channels must be positive and even, got {}", self.base_channels));
        }
        if self.blocks_per_level.contains(&0) {
            return fail(format!("blocks_per_level must be positive, got {:?}", self.blocks_per_level));
        }
        for level in 0..LEVELS {
            let heads = self.heads_per_level[level];
            let c = self.channels(level);
            if heads == 0 || !c.is_multiple_of(heads) {
                return fail(format!("heads_per_level[{level}] = {heads} does not divide {c} channels"));
            }
        }
        if !(self.gdfn_expansion > 0.0) || self.gdfn_hidden(self.base_channels) == 0 {
            return fail(format!("gdfn_expansion must be positive, got {}", self.gdfn_expansion));
        }
        if self.num_prompts == 0 || self.prompt_base_size == 0 {
            return fail("num_prompts and prompt_base_size must be positive".into());
        }
        if self.spb_sites > MAX_SPB_SITES {
            return fail(format!("spb_sites = {} exceeds {MAX_SPB_SITES} decoder transitions", self.spb_sites));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return fail("in_channels and out_channels must be positive".into());
        }
        Ok(())
    }

    /// Key/value pairs in a fixed order; values round-trip through [`Self::set`].
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let list = |xs: &[usize]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        vec![
            ("base_channels", self.base_channels.to_string()),
            ("blocks_per_level", list(&self.blocks_per_level)),
            ("heads_per_level", list(&self.heads_per_level)),
            ("gdfn_expansion", self.gdfn_expansion.to_string()),
            ("num_prompts", self.num_prompts.to_string()),
            ("prompt_base_size", self.prompt_base_size.to_string()),
            ("spb_sites", self.spb_sites.to_string()),
            ("in_channels", self.in_channels.to_string()),
            ("out_channels", self.out_channels.to_string()),
            ("use_peb", self.ablation.use_peb.to_string()),
            ("use_pfb", self.ablation.use_pfb.to_string()),
            ("use_transformer", self.ablation.use_transformer.to_string()),
        ]
    }

    /// Sets one field by key. Returns `Ok(false)` for keys this type does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "base_channels" => self.base_channels = parse_value(key, value)?,
            "blocks_per_level" => self.blocks_per_level = parse_levels(key, value)?,
            "heads_per_level" => self.heads_per_level = parse_levels(key, value)?,
            "gdfn_expansion" => self.gdfn_expansion = parse_value(key, value)?,
            "num_prompts" => self.num_prompts = parse_value(key, value)?,
            "prompt_base_size" => self.prompt_base_size = parse_value(key, value)?,
            "spb_sites" => self.spb_sites = parse_value(key, value)?,
            "in_channels" => self.in_channels = parse_value(key, value)?,
            "out_channels" => self.out_channels = parse_value(key, value)?,
            "use_peb" => self.ablation.use_peb = parse_value(key, value)?,
            "use_pfb" => self.ablation.use_pfb = parse_value(key, value)?,
            "use_transformer" => self.ablation.use_transformer = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Stable one-line text form, used as the checkpoint config echo.
    pub fn echo(&self) -> String {
        self.entries().iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ")
    }

    pub fn from_echo(echo: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for pair in echo.split_whitespace() {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got `{pair}`")))?;
            if !cfg.set(k, v)? {
                return Err(Error::Config(format!("unknown model key `{k}`")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub(crate) fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value.trim().parse().map_err(|e| Error::Config(format!("{key}: cannot parse `{value}`: {e}")))
}

fn parse_levels(key: &str, value: &str) -> Result<[usize; LEVELS]> {
    let parts: Vec<usize> = value.split(',').map(|v| parse_value(key, v)).collect::<Result<_>>()?;
    parts
        .try_into()
        .map_err(|p: Vec<usize>| Error::Config(format!("{key}: expected {LEVELS} comma-separated values, got {}", p.len())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ModelConfig::default().validate().unwrap();
        ModelConfig::minimal().validate().unwrap();
        assert_eq!(ModelConfig::default().gdfn_hidden(16), 43);
    }

    #[test]
    fn invalid_configs() {
        let bad_heads = ModelConfig { heads_per_level: [3, 2, 4, 8], ..Default::default() };
        assert!(bad_heads.validate().unwrap_err().to_string().contains("heads_per_level[0]"));
        let too_many_sites = ModelConfig { spb_sites: 4, ..Default::default() };
        assert!(too_many_sites.validate().is_err());
        let odd = ModelConfig { base_channels: 5, ..Default::default() };
        assert!(odd.validate().is_err());
        let no_blocks = ModelConfig { blocks_per_level: [1, 0, 1, 1], ..Default::default() };
        assert!(no_blocks.validate().is_err());
    }

    #[test]
    fn echo_round_trip() {
        let cfg = ModelConfig { gdfn_expansion: 2.5, ablation: AblationFlags::WITHOUT_PFB, ..ModelConfig::minimal() };
        assert_eq!(ModelConfig::from_echo(&cfg.echo()).unwrap(), cfg);
        assert!(ModelConfig::from_echo("bogus=1").is_err());
        assert!(ModelConfig::from_echo("blocks_per_level=1,2").is_err());
    }

    #[test]
    fn eight_flag_combinations() {
        let all: Vec<_> = AblationFlags::all().collect();
        assert_eq!(all.len(), 8);
        assert!(all.contains(&AblationFlags::FULL));
        assert!(all.contains(&AblationFlags { use_peb: false, use_pfb: false, use_transformer: false }));
    }
}
