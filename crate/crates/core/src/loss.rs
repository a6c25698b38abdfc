//! Training objective: MSE plus a weighted structural-similarity term.

use crate::error::{Error, Result};
use crate::graph::{ConvParams, Graph, Var};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub lambda: f64,
    pub ssim_window: usize,
    pub ssim_sigma: f64,
    /// Dynamic range of the images the loss sees.
    pub data_range: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda: 0.4, ssim_window: 11, ssim_sigma: 1.5, data_range: 1.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.ssim_window.is_multiple_of(2) {
            return Err(Error::Config(format!("ssim_window must be odd, got {}", self.ssim_window)));
        }
        if !(self.ssim_sigma > 0.0) || !(self.data_range > 0.0) {
            return Err(Error::Config("ssim_sigma and data_range must be positive".into()));
        }
        Ok(())
    }
}

/// Normalised 2-D Gaussian window, row-major `size`×`size`.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let g: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = g.iter().sum();
    let g: Vec<f64> = g.into_iter().map(|v| v / s).collect();
    g.iter().flat_map(|a| g.iter().map(move |b| a * b)).collect()
}

fn check_pair<E: Element>(g: &Graph<E>, a: Var, b: Var, op: &'static str) -> Result<Vec<usize>> {
    let (sa, sb) = (g.shape(a), g.shape(b));
    if sa != sb {
        return Err(Error::shape(op, format!("prediction {sa:?} and target {sb:?} differ")));
    }
    Ok(sa)
}

pub fn mse_loss<E: Element>(g: &Graph<E>, pred: Var, target: Var) -> Result<Var> {
    check_pair(g, pred, target, "mse_loss")?;
    let d = g.sub(pred, target)?;
    Ok(g.mean(g.mul(d, d)?))
}

/// Mean SSIM over the valid region of single-channel N×1×H×W images.
pub fn ssim<E: Element>(g: &Graph<E>, x: Var, y: Var, cfg: &LossConfig) -> Result<Var> {
    let shape = check_pair(g, x, y, "ssim")?;
    let &[_, c, h, w] = shape.as_slice() else {
        return Err(Error::shape("ssim", format!("expected N×1×H×W images, got {shape:?}")));
    };
    let k = cfg.ssim_window;
    if c != 1 {
        return Err(Error::shape("ssim", format!("expected a single channel, got {c}")));
    }
    if h < k || w < k {
        return Err(Error::shape("ssim", format!("image {h}x{w} is smaller than the {k}x{k} window")));
    }
    let c1 = (0.01 * cfg.data_range).powi(2);
    let c2 = (0.03 * cfg.data_range).powi(2);

    // One grouped convolution filters x, y, x², y² and xy together.
    let win = gaussian_window(k, cfg.ssim_sigma);
    let kernel: Vec<f64> = (0..5).flat_map(|_| win.iter().copied()).collect();
    let kernel = g.constant(Tensor::from_f64(&[5, 1, k, k], &kernel)?);
    let stacked = g.concat_channels(&[x, y, g.mul(x, x)?, g.mul(y, y)?, g.mul(x, y)?])?;
    let filtered = g.conv2d(stacked, kernel, None, ConvParams::new(1, 0, 5))?;
    let part = |i| g.slice_channels(filtered, i, 1);
    let (mx, my, exx, eyy, exy) = (part(0)?, part(1)?, part(2)?, part(3)?, part(4)?);

    let mx2 = g.mul(mx, mx)?;
    let my2 = g.mul(my, my)?;
    let mxy = g.mul(mx, my)?;
    let sxx = g.sub(exx, mx2)?;
    let syy = g.sub(eyy, my2)?;
    let sxy = g.sub(exy, mxy)?;
    let num = g.mul(g.scalar_add(g.scalar_mul(mxy, 2.0), c1), g.scalar_add(g.scalar_mul(sxy, 2.0), c2))?;
    let den = g.mul(g.scalar_add(g.add(mx2, my2)?, c1), g.scalar_add(g.add(sxx, syy)?, c2))?;
    Ok(g.mean(g.div(num, den)?))
}

/// `mse + λ·(1 − ssim)`.
pub fn total_loss<E: Element>(g: &Graph<E>, pred: Var, target: Var, cfg: &LossConfig) -> Result<Var> {
    let mse = mse_loss(g, pred, target)?;
    if cfg.lambda == 0.0 {
        return Ok(mse);
    }
    let dissim = g.scalar_add(g.scalar_mul(ssim(g, pred, target, cfg)?, -1.0), 1.0);
    g.add(mse, g.scalar_mul(dissim, cfg.lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_diff_gradcheck, random_tensor, DEFAULT_EPS};
    use crate::param::ParamStore;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn img(seed: u64, shape: &[usize]) -> Tensor<f64> {
        random_tensor(&mut ChaCha8Rng::seed_from_u64(seed), shape, 0.0, 1.0)
    }

    fn eval(f: impl Fn(&Graph<f64>) -> Result<Var>) -> f64 {
        let g = Graph::inference();
        let v = f(&g).unwrap();
        g.value(v).item()
    }

    #[test]
    fn window_is_normalised_and_symmetric() {
        let w = gaussian_window(11, 1.5);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(w[0], w[120]);
        assert!(w[60] > w[59]);
    }

    #[test]
    fn mse_values() {
        let t = img(1, &[1, 1, 8, 8]);
        let p = t.map(|v| v + 0.5);
        assert_eq!(eval(|g| mse_loss(g, g.constant(t.clone()), g.constant(t.clone()))), 0.0);
        assert!((eval(|g| mse_loss(g, g.constant(p.clone()), g.constant(t.clone()))) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn mse_gradient_closed_form() {
        let t = img(2, &[1, 1, 4, 4]);
        let mut store = ParamStore::new();
        let id = store.add("pred", img(3, &[1, 1, 4, 4])).unwrap();
        let g = Graph::new();
        let l = mse_loss(&g, g.param(store.get(id)), g.constant(t.clone())).unwrap();
        g.backward(l, &mut store).unwrap();
        for ((gr, p), t) in store.grad(id).data().iter().zip(store.value(id).data()).zip(t.data()) {
            assert!((gr - 2.0 * (p - t) / 16.0).abs() < 1e-15);
        }
    }

    #[test]
    fn ssim_identity_symmetry_and_anticorrelation() {
        let cfg = LossConfig::default();
        let x = img(4, &[1, 1, 16, 16]);
        let y = img(5, &[1, 1, 16, 16]);
        let same = eval(|g| ssim(g, g.constant(x.clone()), g.constant(x.clone()), &cfg));
        assert!((same - 1.0).abs() < 1e-6);
        let xy = eval(|g| ssim(g, g.constant(x.clone()), g.constant(y.clone()), &cfg));
        let yx = eval(|g| ssim(g, g.constant(y.clone()), g.constant(x.clone()), &cfg));
        assert_eq!(xy, yx);
        let b = x.map(|v| if v > 0.5 { 1.0 } else { 0.0 });
        let inv = b.map(|v| 1.0 - v);
        assert!(eval(|g| ssim(g, g.constant(b.clone()), g.constant(inv.clone()), &cfg)) < 0.0);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let x = img(6, &[1, 1, 8, 16]);
        let g = Graph::<f64>::inference();
        let err = ssim(&g, g.constant(x.clone()), g.constant(x), &LossConfig::default()).unwrap_err();
        assert!(err.to_string().contains("smaller than the 11x11 window"));
    }

    #[test]
    fn total_loss_components() {
        let cfg = LossConfig::default();
        let t = img(7, &[1, 1, 16, 16]);
        let p = t.map(|v| v + 0.1);
        assert!(eval(|g| total_loss(g, g.constant(t.clone()), g.constant(t.clone()), &cfg)).abs() < 1e-6);
        let zero = LossConfig { lambda: 0.0, ..cfg };
        let (pv, tv) = (p.clone(), t.clone());
        assert_eq!(
            eval(|g| total_loss(g, g.constant(pv.clone()), g.constant(tv.clone()), &zero)),
            eval(|g| mse_loss(g, g.constant(pv.clone()), g.constant(tv.clone())))
        );
        let s = eval(|g| ssim(g, g.constant(p.clone()), g.constant(t.clone()), &cfg));
        let total = eval(|g| total_loss(g, g.constant(p.clone()), g.constant(t.clone()), &cfg));
        assert!((total - (0.01 + 0.4 * (1.0 - s))).abs() < 1e-12);
    }

    #[test]
    fn ssim_gradcheck() {
        let cfg = LossConfig::default();
        let y = img(8, &[1, 1, 16, 16]);
        let mut store = ParamStore::new();
        store.add("x", img(9, &[1, 1, 16, 16])).unwrap();
        let report = finite_diff_gradcheck(&mut store, DEFAULT_EPS, |g, s| {
            let x = g.param(s.iter().next().unwrap());
            ssim(g, x, g.constant(y.clone()), &cfg)
        })
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }
}
