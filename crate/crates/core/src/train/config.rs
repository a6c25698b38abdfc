use std::fmt::Write as _;

use crate::data::{AugmentConfig, PhantomSpec};
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::nn::config::parse_value;
use crate::nn::ModelConfig;
use crate::optim::AdamConfig;
use crate::tensor::DType;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub adam: AdamConfig,
    pub augment: AugmentConfig,
    pub phantom: PhantomSpec,
    pub epochs: usize,
    pub batch_size: usize,
    /// Evaluate on the test split every this many epochs; 0 evaluates only
    /// after the final epoch. The untrained model is always evaluated.
    pub eval_interval: usize,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub dtype: DType,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            adam: AdamConfig::default(),
            augment: AugmentConfig::default(),
            phantom: PhantomSpec::default(),
            epochs: 30,
            batch_size: 1,
            eval_interval: 10,
            seed: 0,
            n_train: 200,
            n_test: 40,
            dtype: DType::F32,
        }
    }
}

fn parse_dtype(value: &str) -> Result<DType> {
    match value.trim() {
        "f32" => Ok(DType::F32),
        "f64" => Ok(DType::F64),
        other => Err(Error::Config(format!("dtype: expected f32 or f64, got `{other}`"))),
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.augment.validate()?;
        self.phantom.validate()?;
        if !(self.adam.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.adam.lr)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::Config("n_train and n_test must be positive".into()));
        }
        let multiple = crate::nn::model::SPATIAL_MULTIPLE;
        if !self.phantom.size.is_multiple_of(multiple) {
            return Err(Error::Config(format!("image_size must be divisible by {multiple}, got {}", self.phantom.size)));
        }
        if self.phantom.size < self.loss.ssim_window {
            return Err(Error::Config("image_size is smaller than the SSIM window".into()));
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let mut out = vec![
            ("epochs", self.epochs.to_string()),
            ("lr", self.adam.lr.to_string()),
            ("adam_beta1", self.adam.beta1.to_string()),
            ("adam_beta2", self.adam.beta2.to_string()),
            ("adam_eps", self.adam.eps.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("eval_interval", self.eval_interval.to_string()),
            ("seed", self.seed.to_string()),
            ("n_train", self.n_train.to_string()),
            ("n_test", self.n_test.to_string()),
            ("image_size", self.phantom.size.to_string()),
            ("min_ellipses", self.phantom.ellipses.0.to_string()),
            ("max_ellipses", self.phantom.ellipses.1.to_string()),
            ("dtype", self.dtype.name().to_string()),
            ("lambda", self.loss.lambda.to_string()),
            ("ssim_window", self.loss.ssim_window.to_string()),
            ("ssim_sigma", self.loss.ssim_sigma.to_string()),
            ("crop_prob", self.augment.crop_prob.to_string()),
            ("crop_fraction", self.augment.crop_fraction.to_string()),
            ("rotate_prob", self.augment.rotate_prob.to_string()),
            ("hflip_prob", self.augment.hflip_prob.to_string()),
            ("vflip_prob", self.augment.vflip_prob.to_string()),
            ("mixup_prob", self.augment.mixup_prob.to_string()),
            ("mixup_alpha", self.augment.mixup_alpha.to_string()),
        ];
        out.extend(self.model.entries());
        out
    }

    /// Sets one field by key, rejecting unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key {
            "epochs" => self.epochs = parse_value(key, v)?,
            "lr" => self.adam.lr = parse_value(key, v)?,
            "adam_beta1" => self.adam.beta1 = parse_value(key, v)?,
            "adam_beta2" => self.adam.beta2 = parse_value(key, v)?,
            "adam_eps" => self.adam.eps = parse_value(key, v)?,
            "batch_size" => self.batch_size = parse_value(key, v)?,
            "eval_interval" => self.eval_interval = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            "n_train" => self.n_train = parse_value(key, v)?,
            "n_test" => self.n_test = parse_value(key, v)?,
            "image_size" => self.phantom.size = parse_value(key, v)?,
            "min_ellipses" => self.phantom.ellipses.0 = parse_value(key, v)?,
            "max_ellipses" => self.phantom.ellipses.1 = parse_value(key, v)?,
            "dtype" => self.dtype = parse_dtype(v)?,
            "lambda" => self.loss.lambda = parse_value(key, v)?,
            "ssim_window" => self.loss.ssim_window = parse_value(key, v)?,
            "ssim_sigma" => self.loss.ssim_sigma = parse_value(key, v)?,
            "crop_prob" => self.augment.crop_prob = parse_value(key, v)?,
            "crop_fraction" => self.augment.crop_fraction = parse_value(key, v)?,
            "rotate_prob" => self.augment.rotate_prob = parse_value(key, v)?,
            "hflip_prob" => self.augment.hflip_prob = parse_value(key, v)?,
            "vflip_prob" => self.augment.vflip_prob = parse_value(key, v)?,
            "mixup_prob" => self.augment.mixup_prob = parse_value(key, v)?,
            "mixup_alpha" => self.augment.mixup_alpha = parse_value(key, v)?,
            _ => {
                if !self.model.set(key, v)? {
                    return Err(Error::Config(format!("unknown key `{key}`")));
                }
            }
        }
        Ok(())
    }

    /// One `key=value` line per field.
    pub fn to_kv_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    /// Applies `key=value` lines on top of `self`; blank lines and `#`
    /// comments are skipped.
    pub fn apply_kv_text(&mut self, text: &str) -> Result<()> {
        for (k, v) in parse_kv_lines(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_kv_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.n_train.div_ceil(self.batch_size)
    }
}

pub fn parse_kv_lines(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got `{line}`", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_round_trip() {
        let mut cfg = TrainConfig { epochs: 3, seed: 99, dtype: DType::F64, ..Default::default() };
        cfg.adam.lr = 3e-4;
        cfg.model.num_prompts = 7;
        let back = TrainConfig::from_kv_text(&cfg.to_kv_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn comments_overrides_and_unknown_keys() {
        let text = "# header\nepochs = 2  # inline\n\nlr=0.001\n";
        let cfg = TrainConfig::from_kv_text(text).unwrap();
        assert_eq!((cfg.epochs, cfg.adam.lr), (2, 0.001));
        let err = TrainConfig::from_kv_text("epoch=2").unwrap_err();
        assert!(err.to_string().contains("unknown key `epoch`"));
        assert!(TrainConfig::from_kv_text("epochs").is_err());
        assert!(TrainConfig::from_kv_text("epochs=0").is_err());
        assert!(TrainConfig::from_kv_text("dtype=f16").is_err());
    }

    #[test]
    fn documented_defaults() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.adam.lr, 1e-4);
        assert_eq!(cfg.batch_size, 1);
        assert_eq!(cfg.loss.lambda, 0.4);
        assert_eq!(cfg.steps_per_epoch(), 200);
        cfg.validate().unwrap();
    }
}
