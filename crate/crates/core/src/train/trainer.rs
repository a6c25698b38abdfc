use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{augment, make_dataset, mixup, Dataset, Direction, PairedSample};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::loss::{total_loss, LossConfig};
use crate::metrics::EvalReport;
use crate::nn::{build_model, MedPrompt};
use crate::optim::AdamState;
use crate::tensor::{Element, Tensor};

use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::eval::evaluate;

const MODEL_STREAM: u64 = 1;
const DATA_STREAM: u64 = 2;
const SHUFFLE_STREAM: u64 = 3;
const STEP_STREAM: u64 = 4;

/// Independent 64-bit seed for `(purpose, index)` under one master seed.
pub fn derive_seed(master: u64, purpose: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master ^ purpose.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(index);
    rng.next_u64()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: u64,
    pub loss: f64,
    pub grad_norm: f64,
}

impl StepRecord {
    pub fn log_line(&self) -> String {
        format!("{},{},{},{}", self.epoch, self.step, self.loss, self.grad_norm)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    pub mean_loss: f64,
    pub eval: Option<EvalReport>,
}

/// One optimisation step: forward, loss, backward, Adam update, zeroed
/// gradients. Returns the loss and the global gradient norm.
pub fn train_step<E: Element>(
    model: &mut MedPrompt<E>,
    adam: &mut AdamState<E>,
    input: &Tensor<E>,
    target: &Tensor<E>,
    loss_cfg: &LossConfig,
    sample_id: u64,
) -> Result<(f64, f64)> {
    let g = Graph::new();
    let x = g.constant(input.clone());
    let y = g.constant(target.clone());
    let pred = model.forward(&g, x)?;
    let loss = total_loss(&g, pred, y, loss_cfg)?;
    let value = g.value(loss).item().to_f64().unwrap_or(f64::NAN);
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss { sample_id });
    }
    g.backward(loss, &mut model.params)?;
    let grad_norm = model.params.grad_norm();
    adam.step(&mut model.params)?;
    model.params.zero_grads();
    Ok((value, grad_norm))
}

/// Stacks single images along the batch axis.
pub fn stack<E: Element>(images: &[&Tensor<f64>]) -> Result<Tensor<E>> {
    let first = images.first().ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let mut shape = first.shape().to_vec();
    let mut data = Vec::with_capacity(first.numel() * images.len());
    for t in images {
        if t.shape() != first.shape() {
            return Err(Error::shape("stack", format!("{:?} vs {:?}", t.shape(), first.shape())));
        }
        data.extend(t.data().iter().map(|&v| E::lit(v)));
    }
    shape[0] *= images.len();
    Tensor::new(shape, data)
}

/// The train and test splits a run with `cfg` uses.
pub fn dataset_for(cfg: &TrainConfig) -> Result<Dataset> {
    make_dataset(cfg.n_train, cfg.n_test, &cfg.phantom, derive_seed(cfg.seed, DATA_STREAM, 0))
}

/// Model, optimizer and data of one training run. All randomness derives
/// from the master seed and the global step, so a run can resume from any
/// step.
pub struct Trainer<E: Element> {
    pub cfg: TrainConfig,
    pub model: MedPrompt<E>,
    pub adam: AdamState<E>,
    pub data: Dataset,
    pub step: u64,
    by_direction: [Vec<usize>; 2],
    log: Option<BufWriter<File>>,
    pub log_lines: Vec<String>,
}

impl<E: Element> Trainer<E> {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.dtype != E::DTYPE {
            return Err(Error::DtypeMismatch { expected: cfg.dtype.name(), found: E::DTYPE.name() });
        }
        let model = build_model(&cfg.model, derive_seed(cfg.seed, MODEL_STREAM, 0))?;
        let data = dataset_for(&cfg)?;
        let adam = AdamState::new(&model.params, cfg.adam);
        let mut by_direction = [Vec::new(), Vec::new()];
        for (i, s) in data.train.iter().enumerate() {
            by_direction[(s.direction == Direction::BtoA) as usize].push(i);
        }
        Ok(Self { cfg, model, adam, data, step: 0, by_direction, log: None, log_lines: Vec::new() })
    }

    pub fn from_checkpoint(cfg: TrainConfig, ck: &Checkpoint) -> Result<Self> {
        if ck.rng_seed != cfg.seed {
            return Err(Error::Config(format!("checkpoint seed {} differs from config seed {}", ck.rng_seed, cfg.seed)));
        }
        let mut t = Self::new(cfg)?;
        ck.restore_params(&mut t.model)?;
        if let Some(adam) = ck.restore_adam(&t.model.params)? {
            t.adam = adam;
        }
        t.step = ck.step;
        Ok(t)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(&self.model, Some(&self.adam), self.step, self.cfg.seed, self.cfg.to_kv_text())
    }

    /// Appends every subsequent log line to `path`.
    pub fn log_to(&mut self, path: &Path) -> Result<()> {
        let file = File::options().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
        self.log = Some(BufWriter::new(file));
        Ok(())
    }

    fn emit(&mut self, line: String) -> Result<()> {
        if let Some(w) = &mut self.log {
            writeln!(w, "{line}").and_then(|_| w.flush()).map_err(|e| Error::io(PathBuf::from("<log>"), e))?;
        }
        self.log_lines.push(line);
        Ok(())
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.cfg.steps_per_epoch() as u64
    }

    pub fn total_steps(&self) -> u64 {
        self.steps_per_epoch() * self.cfg.epochs as u64
    }

    /// Sample order of `epoch` (0-based).
    pub fn epoch_order(&self, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.data.train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, SHUFFLE_STREAM, epoch));
        order.shuffle(&mut rng);
        order
    }

    /// The augmented (and possibly mixed) batch of global step `step`.
    pub fn batch(&self, step: u64) -> Result<(Vec<PairedSample>, Vec<u64>)> {
        let spe = self.steps_per_epoch();
        let (epoch, pos) = (step / spe, (step % spe) as usize);
        let order = self.epoch_order(epoch);
        let bs = self.cfg.batch_size;
        let idx = &order[pos * bs..((pos + 1) * bs).min(order.len())];
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, STEP_STREAM, step));
        let aug = &self.cfg.augment;
        let mut out = Vec::with_capacity(idx.len());
        let mut ids = Vec::with_capacity(idx.len());
        for &i in idx {
            let s = &self.data.train[i];
            let mut a = augment(s, aug, &mut rng)?;
            if rng.random_bool(aug.mixup_prob) {
                let pool = &self.by_direction[(s.direction == Direction::BtoA) as usize];
                let partner = &self.data.train[pool[rng.random_range(0..pool.len())]];
                let b = augment(partner, aug, &mut rng)?;
                a = mixup(&a, &b, aug.mixup_alpha, &mut rng)?;
            }
            ids.push(s.id);
            out.push(a);
        }
        Ok((out, ids))
    }

    /// Runs one step at the current position and advances it.
    pub fn train_next(&mut self) -> Result<StepRecord> {
        let (batch, ids) = self.batch(self.step)?;
        let inputs: Vec<_> = batch.iter().map(|s| &s.input).collect();
        let targets: Vec<_> = batch.iter().map(|s| &s.target).collect();
        let (x, y) = (stack::<E>(&inputs)?, stack::<E>(&targets)?);
        let (loss, grad_norm) = train_step(&mut self.model, &mut self.adam, &x, &y, &self.cfg.loss, ids[0])?;
        let rec = StepRecord { epoch: (self.step / self.steps_per_epoch()) as usize + 1, step: self.step, loss, grad_norm };
        self.step += 1;
        self.emit(rec.log_line())?;
        Ok(rec)
    }

    pub fn train_steps(&mut self, n: u64) -> Result<Vec<StepRecord>> {
        (0..n).map(|_| self.train_next()).collect()
    }

    pub fn evaluate_test(&self) -> Result<EvalReport> {
        evaluate(&self.model, &self.data.test, &self.cfg.loss)
    }

    fn log_eval(&mut self, epoch: usize, report: &EvalReport) -> Result<()> {
        for r in report.rows.clone() {
            self.emit(format!("eval,{epoch},{},{},{},{},{}", r.label, r.psnr_db, r.ssim, r.mae, r.n))?;
        }
        Ok(())
    }

    fn eval_due(&self, epoch: usize) -> bool {
        epoch == self.cfg.epochs || (self.cfg.eval_interval > 0 && epoch.is_multiple_of(self.cfg.eval_interval))
    }

    /// Trains the remaining epochs. When `checkpoint_path` is given a
    /// checkpoint is written after every epoch.
    pub fn run(&mut self, checkpoint_path: Option<&Path>) -> Result<TrainOutcome> {
        let initial_eval = if self.step == 0 {
            let r = self.evaluate_test()?;
            self.log_eval(0, &r)?;
            Some(r)
        } else {
            None
        };
        let spe = self.steps_per_epoch();
        let mut history = Vec::new();
        while self.step < self.total_steps() {
            let epoch = (self.step / spe) as usize + 1;
            let remaining = epoch as u64 * spe - self.step;
            let records = self.train_steps(remaining)?;
            let mean_loss = records.iter().map(|r| r.loss).sum::<f64>() / records.len() as f64;
            let eval = if self.eval_due(epoch) {
                let r = self.evaluate_test()?;
                self.log_eval(epoch, &r)?;
                Some(r)
            } else {
                None
            };
            history.push(EpochRecord { epoch, mean_loss, eval });
            if let Some(path) = checkpoint_path {
                self.checkpoint().save(path)?;
            }
        }
        Ok(TrainOutcome { initial_eval, history })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    /// Test metrics of the untrained model; absent when resuming.
    pub initial_eval: Option<EvalReport>,
    pub history: Vec<EpochRecord>,
}

impl TrainOutcome {
    pub fn final_eval(&self) -> Option<&EvalReport> {
        self.history.last().and_then(|e| e.eval.as_ref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{AugmentConfig, PhantomSpec};
    use crate::nn::ModelConfig;
    use crate::tensor::DType;

    pub(crate) fn tiny() -> TrainConfig {
        TrainConfig {
            model: ModelConfig { base_channels: 4, blocks_per_level: [1, 1, 1, 1], num_prompts: 2, prompt_base_size: 4, ..Default::default() },
            phantom: PhantomSpec { size: 32, ..Default::default() },
            epochs: 2,
            n_train: 4,
            n_test: 2,
            eval_interval: 1,
            dtype: DType::F64,
            ..Default::default()
        }
    }

    #[test]
    fn fresh_loss_positive_and_history_length() {
        let mut t = Trainer::<f64>::new(tiny()).unwrap();
        let out = t.run(None).unwrap();
        assert_eq!(out.history.len(), 2);
        assert!(out.initial_eval.is_some());
        assert!(out.final_eval().is_some());
        let first: f64 = t.log_lines.iter().find(|l| !l.starts_with("eval")).unwrap().split(',').nth(2).unwrap().parse().unwrap();
        assert!(first > 0.0);
        assert_eq!(t.step, 8);
    }

    #[test]
    fn identical_states_identical_updates() {
        let cfg = tiny();
        let mut a = Trainer::<f64>::new(cfg.clone()).unwrap();
        let mut b = Trainer::<f64>::new(cfg).unwrap();
        let (ra, rb) = (a.train_next().unwrap(), b.train_next().unwrap());
        assert_eq!(ra, rb);
        assert_eq!(a.model.params.fingerprint(), b.model.params.fingerprint());
    }

    #[test]
    fn epoch_orders_are_permutations() {
        let t = Trainer::<f64>::new(tiny()).unwrap();
        let mut o = t.epoch_order(3);
        o.sort_unstable();
        assert_eq!(o, vec![0, 1, 2, 3]);
    }

    #[test]
    fn batches_stack() {
        let mut cfg = tiny();
        cfg.batch_size = 3;
        cfg.augment = AugmentConfig::none();
        let mut t = Trainer::<f64>::new(cfg).unwrap();
        assert_eq!(t.steps_per_epoch(), 2);
        assert_eq!(t.batch(1).unwrap().0.len(), 1);
        t.train_next().unwrap();
    }

    #[test]
    fn dtype_must_match() {
        assert!(Trainer::<f32>::new(tiny()).is_err());
    }
}
