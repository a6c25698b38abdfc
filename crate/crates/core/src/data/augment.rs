use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};
use crate::kernels;
use crate::tensor::Tensor;

use super::dataset::PairedSample;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    pub crop_prob: f64,
    /// Side of the crop relative to the image, before resizing back.
    pub crop_fraction: f64,
    pub rotate_prob: f64,
    pub hflip_prob: f64,
    pub vflip_prob: f64,
    pub mixup_prob: f64,
    pub mixup_alpha: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            crop_prob: 0.5,
            crop_fraction: 7.0 / 8.0,
            rotate_prob: 0.5,
            hflip_prob: 0.5,
            vflip_prob: 0.5,
            mixup_prob: 0.5,
            mixup_alpha: 0.2,
        }
    }
}

impl AugmentConfig {
    /// Every augmentation disabled.
    pub fn none() -> Self {
        Self { crop_prob: 0.0, rotate_prob: 0.0, hflip_prob: 0.0, vflip_prob: 0.0, mixup_prob: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [self.crop_prob, self.rotate_prob, self.hflip_prob, self.vflip_prob, self.mixup_prob];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("augmentation probabilities must lie in [0,1]".into()));
        }
        if !(self.crop_fraction > 0.0 && self.crop_fraction <= 1.0) {
            return Err(Error::Config(format!("crop_fraction must lie in (0,1], got {}", self.crop_fraction)));
        }
        if !(self.mixup_alpha > 0.0) {
            return Err(Error::Config(format!("mixup_alpha must be positive, got {}", self.mixup_alpha)));
        }
        Ok(())
    }
}

/// A concrete geometric transform, applied identically to input and target.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AugmentPlan {
    /// Top-left corner and side of the crop.
    pub crop: Option<(usize, usize, usize)>,
    /// Number of counter-clockwise quarter turns.
    pub quarter_turns: u8,
    pub hflip: bool,
    pub vflip: bool,
}

impl AugmentPlan {
    pub fn draw<R: Rng + ?Sized>(cfg: &AugmentConfig, size: usize, rng: &mut R) -> Self {
        let mut plan = Self::default();
        if rng.random_bool(cfg.crop_prob) {
            let side = ((size as f64 * cfg.crop_fraction).round() as usize).clamp(1, size);
            plan.crop = Some((rng.random_range(0..=size - side), rng.random_range(0..=size - side), side));
        }
        if rng.random_bool(cfg.rotate_prob) {
            plan.quarter_turns = rng.random_range(1..4);
        }
        plan.hflip = rng.random_bool(cfg.hflip_prob);
        plan.vflip = rng.random_bool(cfg.vflip_prob);
        plan
    }

    /// Applies the plan to a square 1×1×N×N image.
    pub fn apply(&self, img: &Tensor<f64>) -> Result<Tensor<f64>> {
        let [_, _, h, w] = img.dims4()?;
        if img.numel() != h * w || h != w {
            return Err(Error::shape("augment", format!("expected a square 1×1×N×N image, got {:?}", img.shape())));
        }
        let n = h;
        let mut px = img.data().to_vec();
        if let Some((top, left, side)) = self.crop {
            if top + side > n || left + side > n {
                return Err(Error::shape("augment", format!("crop {side} at ({top},{left}) exceeds {n}x{n}")));
            }
            let cropped: Vec<f64> =
                (0..side * side).map(|i| px[(top + i / side) * n + left + i % side]).collect();
            px = kernels::resize_forward(&cropped, [1, 1, side, side], n, n);
        }
        for _ in 0..self.quarter_turns {
            px = (0..n * n).map(|i| px[(i % n) * n + (n - 1 - i / n)]).collect();
        }
        if self.hflip {
            px.chunks_mut(n).for_each(|row| row.reverse());
        }
        if self.vflip {
            px = (0..n * n).map(|i| px[(n - 1 - i / n) * n + i % n]).collect();
        }
        Tensor::new(img.shape().to_vec(), px)
    }
}

/// Draws one plan and applies it to both halves of the pair.
pub fn augment<R: Rng + ?Sized>(sample: &PairedSample, cfg: &AugmentConfig, rng: &mut R) -> Result<PairedSample> {
    let [_, _, n, _] = sample.input.dims4()?;
    let plan = AugmentPlan::draw(cfg, n, rng);
    augment_with(sample, &plan)
}

pub fn augment_with(sample: &PairedSample, plan: &AugmentPlan) -> Result<PairedSample> {
    Ok(PairedSample { input: plan.apply(&sample.input)?, target: plan.apply(&sample.target)?, ..sample.clone() })
}

/// Convex combination `m·a + (1−m)·b` of two same-direction pairs.
pub fn mixup_with(a: &PairedSample, b: &PairedSample, m: f64) -> Result<PairedSample> {
    if a.direction != b.direction {
        return Err(Error::InvalidArgument(format!(
            "mixup across directions ({} with {})",
            a.direction, b.direction
        )));
    }
    let mix = |x: &Tensor<f64>, y: &Tensor<f64>| x.zip_map(y, |p, q| m * p + (1.0 - m) * q);
    Ok(PairedSample { input: mix(&a.input, &b.input)?, target: mix(&a.target, &b.target)?, ..a.clone() })
}

/// Mixup with `m ~ Beta(α, α)`.
pub fn mixup<R: Rng + ?Sized>(a: &PairedSample, b: &PairedSample, alpha: f64, rng: &mut R) -> Result<PairedSample> {
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::InvalidArgument(format!("mixup alpha {alpha}: {e}")))?;
    mixup_with(a, b, beta.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::dataset::{make_dataset, Direction};
    use crate::data::phantom::PhantomSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn samples() -> Vec<PairedSample> {
        make_dataset(4, 2, &PhantomSpec { size: 32, ..Default::default() }, 7).unwrap().train
    }

    #[test]
    fn flips_and_turns_compose_to_identity() {
        let s = &samples()[0];
        let flip = AugmentPlan { hflip: true, ..Default::default() };
        let vflip = AugmentPlan { vflip: true, ..Default::default() };
        let turn = AugmentPlan { quarter_turns: 1, ..Default::default() };
        assert_eq!(flip.apply(&flip.apply(&s.input).unwrap()).unwrap(), s.input);
        assert_eq!(vflip.apply(&vflip.apply(&s.input).unwrap()).unwrap(), s.input);
        let mut x = s.input.clone();
        for _ in 0..4 {
            x = turn.apply(&x).unwrap();
        }
        assert_eq!(x, s.input);
        assert_ne!(turn.apply(&s.input).unwrap(), s.input);
    }

    #[test]
    fn quarter_turn_orientation() {
        let img = Tensor::from_f64(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let turn = AugmentPlan { quarter_turns: 1, ..Default::default() };
        assert_eq!(turn.apply(&img).unwrap().data(), &[2.0, 4.0, 1.0, 3.0]);
    }

    #[test]
    fn paired_transform_is_shared() {
        let mut s = samples()[1].clone();
        s.target = s.input.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = AugmentConfig { crop_prob: 1.0, rotate_prob: 1.0, ..Default::default() };
        for _ in 0..10 {
            let a = augment(&s, &cfg, &mut rng).unwrap();
            assert_eq!(a.input, a.target);
            assert!(a.input.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn mixup_endpoints_and_direction() {
        let s = samples();
        let (a, b) = (&s[0], &s[2]);
        assert_eq!(a.direction, b.direction);
        assert_eq!(mixup_with(a, b, 1.0).unwrap(), *a);
        assert_eq!(mixup_with(a, a, 0.5).unwrap(), *a);
        assert!(mixup_with(a, &s[1], 0.5).is_err());
        assert_eq!(s[1].direction, Direction::BtoA);
    }

    #[test]
    fn mixup_stays_in_hull() {
        let s = samples();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let m = mixup(&s[0], &s[2], 0.2, &mut rng).unwrap();
            for ((v, x), y) in m.input.data().iter().zip(s[0].input.data()).zip(s[2].input.data()) {
                assert!(*v >= x.min(*y) - 1e-12 && *v <= x.max(*y) + 1e-12);
            }
        }
    }
}
