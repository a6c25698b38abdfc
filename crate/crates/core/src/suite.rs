//! The complete gradient-check suite: every operator, both losses and a
//! whole model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::gradcheck::{finite_diff_gradcheck, operator_suite, random_tensor, taped_gradcheck, CheckCase, Stencil, DEFAULT_EPS};
use crate::graph::Graph;
use crate::loss::{mse_loss, ssim, total_loss, LossConfig};
use crate::nn::{build_model, Ctx, ModelConfig};
use crate::param::ParamStore;

/// Side of the square image used for loss and model checks.
pub const CHECK_SIZE: usize = 16;

/// Stencil for the whole-model check.
pub const MODEL_STENCIL: Stencil = Stencil::Adaptive(1e-3);

pub fn loss_cases(seed: u64) -> Result<Vec<CheckCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1055);
    let shape = [1, 1, CHECK_SIZE, CHECK_SIZE];
    let target = random_tensor(&mut rng, &shape, 0.0, 1.0);
    let cfg = LossConfig::default();
    let mut cases = Vec::new();
    for name in ["mse_loss", "ssim", "total_loss"] {
        let mut store = ParamStore::new();
        let id = store.add("pred", random_tensor(&mut rng, &shape, 0.0, 1.0))?;
        let report = finite_diff_gradcheck(&mut store, DEFAULT_EPS, |g, s| {
            let (x, y) = (g.param(s.get(id)), g.constant(target.clone()));
            match name {
                "mse_loss" => mse_loss(g, x, y),
                "ssim" => ssim(g, x, y, &cfg),
                _ => total_loss(g, x, y, &cfg),
            }
        })?;
        cases.push(CheckCase { name: name.to_string(), report });
    }
    Ok(cases)
}

/// Checks the gradient of `total_loss(model(x), y)` with respect to every
/// model parameter, on a random `size`×`size` pair.
pub fn model_case(config: &ModelConfig, size: usize, seed: u64, stencil: Stencil) -> Result<CheckCase> {
    let mut model = build_model::<f64>(config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x40de1);
    let shape = [1, config.in_channels, size, size];
    let x = random_tensor(&mut rng, &shape, 0.0, 1.0);
    let y = random_tensor(&mut rng, &[1, config.out_channels, size, size], 0.0, 1.0);
    let cfg = LossConfig::default();
    let mut store = std::mem::replace(&mut model.params, ParamStore::new());
    let report = taped_gradcheck(&mut store, stencil, |g: &Graph<f64>, store| {
        let out = model.forward_in(Ctx::new(g, store), g.constant(x.clone()))?.output;
        total_loss(g, out, g.constant(y.clone()), &cfg)
    })?;
    Ok(CheckCase { name: "model".to_string(), report })
}

/// Operators, losses and the minimal model at 16×16.
pub fn gradient_suite(seed: u64) -> Result<Vec<CheckCase>> {
    let mut cases = operator_suite(seed)?;
    cases.extend(loss_cases(seed)?);
    cases.push(model_case(&ModelConfig::minimal(), CHECK_SIZE, seed, MODEL_STENCIL)?);
    Ok(cases)
}

pub fn max_rel_error(cases: &[CheckCase]) -> f64 {
    cases.iter().map(|c| c.report.max_rel_error).fold(0.0, f64::max)
}
