use crate::data::PairedSample;
use crate::error::Result;
use crate::loss::LossConfig;
use crate::metrics::{image_metrics, EvalReport};
use crate::nn::MedPrompt;
use crate::tensor::{Element, Tensor};

/// Per-direction metrics of `predict` applied to every input, compared
/// after clamping.
pub fn evaluate_with<F>(split: &[PairedSample], cfg: &LossConfig, mut predict: F) -> Result<EvalReport>
where
    F: FnMut(&Tensor<f64>) -> Result<Tensor<f64>>,
{
    let rows = split
        .iter()
        .map(|s| Ok((s.direction, image_metrics(&predict(&s.input)?, &s.target, cfg)?)))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_samples(&rows)
}

/// Runs without recording and leaves the model untouched.
pub fn evaluate<E: Element>(model: &MedPrompt<E>, split: &[PairedSample], cfg: &LossConfig) -> Result<EvalReport> {
    evaluate_with(split, cfg, |x| translate(model, x))
}

/// Metrics of copying each input unchanged to the output.
pub fn input_copy_baseline(split: &[PairedSample], cfg: &LossConfig) -> Result<EvalReport> {
    evaluate_with(split, cfg, |x| Ok(x.clone()))
}

/// Runs the model on one image and returns the raw (unclamped) output.
pub fn translate<E: Element>(model: &MedPrompt<E>, image: &Tensor<f64>) -> Result<Tensor<f64>> {
    Ok(model.predict(&image.cast::<E>())?.cast())
}
