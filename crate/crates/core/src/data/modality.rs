use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::phantom::{ClassMap, NUM_CLASSES};

/// Appearance of the shared anatomy under one imaging modality.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalityProfile {
    pub name: String,
    pub intensities: [f64; NUM_CLASSES as usize],
    pub smooth_sigma: f64,
    pub bias_amplitude: f64,
    pub noise_sigma: f64,
}

impl ModalityProfile {
    /// Bright, high-contrast soft tissue.
    pub fn mod_a() -> Self {
        Self {
            name: "modA".into(),
            intensities: [0.0, 0.60, 0.90, 0.40, 0.75, 0.50],
            smooth_sigma: 0.7,
            bias_amplitude: 0.08,
            noise_sigma: 0.02,
        }
    }

    /// Dim, low-uptake appearance with a different class ordering.
    pub fn mod_b() -> Self {
        Self {
            name: "modB".into(),
            intensities: [0.0, 0.18, 0.08, 0.45, 0.30, 0.60],
            smooth_sigma: 1.2,
            bias_amplitude: 0.05,
            noise_sigma: 0.02,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.intensities.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config(format!("{}: intensities must lie in [0,1]", self.name)));
        }
        if !(self.smooth_sigma >= 0.0) || !(self.bias_amplitude >= 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(Error::Config(format!("{}: sigmas and amplitude must be >= 0", self.name)));
        }
        Ok(())
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur with edge clamping.
pub fn gaussian_blur(img: &[f64], n: usize, sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return img.to_vec();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let clamp = |i: isize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            tmp[y * n + x] = k.iter().enumerate().map(|(j, w)| w * img[y * n + clamp(x as isize + j as isize - r)]).sum();
        }
    }
    let mut out = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            out[y * n + x] = k.iter().enumerate().map(|(j, w)| w * tmp[clamp(y as isize + j as isize - r) * n + x]).sum();
        }
    }
    out
}

/// Intensity lookup, blur, multiplicative bias field, additive noise and a
/// final clamp to [0,1]. Returns a 1×1×H×W tensor.
pub fn render_modality(map: &ClassMap, profile: &ModalityProfile, seed: u64) -> Result<Tensor<f64>> {
    profile.validate()?;
    let n = map.size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: Vec<f64> = map.classes.iter().map(|&c| profile.intensities[c as usize]).collect();
    let mut img = gaussian_blur(&base, n, profile.smooth_sigma);

    if profile.bias_amplitude > 0.0 {
        let (fx, fy) = (rng.random_range(0.5..1.5), rng.random_range(0.5..1.5));
        let (px, py) = (rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.0..std::f64::consts::TAU));
        for (i, v) in img.iter_mut().enumerate() {
            let x = (i % n) as f64 / n as f64;
            let y = (i / n) as f64 / n as f64;
            let field = 0.5 * ((std::f64::consts::PI * fx * x + px).sin() + (std::f64::consts::PI * fy * y + py).sin());
            *v *= 1.0 + profile.bias_amplitude * field;
        }
    }
    if profile.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, profile.noise_sigma).expect("finite sigma");
        for v in img.iter_mut() {
            *v += noise.sample(&mut rng);
        }
    }
    let img: Vec<f64> = img.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    Tensor::new(vec![1, 1, n, n], img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::phantom::{generate_phantom, PhantomSpec};

    #[test]
    fn degenerate_profile_is_exact_lookup() {
        let map = generate_phantom(&PhantomSpec::default(), 3).unwrap();
        let p = ModalityProfile { smooth_sigma: 0.0, bias_amplitude: 0.0, noise_sigma: 0.0, ..ModalityProfile::mod_a() };
        let img = render_modality(&map, &p, 1).unwrap();
        for (&c, &v) in map.classes.iter().zip(img.data()) {
            assert_eq!(v, p.intensities[c as usize]);
        }
    }

    #[test]
    fn profiles_are_distinct_and_bounded() {
        for seed in 0..20 {
            let map = generate_phantom(&PhantomSpec::default(), seed).unwrap();
            let a = render_modality(&map, &ModalityProfile::mod_a(), seed).unwrap();
            let b = render_modality(&map, &ModalityProfile::mod_b(), seed).unwrap();
            let mad = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.numel() as f64;
            assert!(mad > 0.05, "seed {seed}: {mad}");
            assert!(a.data().iter().chain(b.data()).all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn blur_preserves_constants() {
        let img = vec![0.3; 36];
        assert!(gaussian_blur(&img, 6, 1.5).iter().all(|v| (v - 0.3).abs() < 1e-12));
    }
}
