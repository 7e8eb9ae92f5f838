use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mri::KSpaceSample;
use crate::recon::EamriModel;
use crate::tensor::{ComplexTensor, Gradients, ParamStore, Trace};

use super::{edge_loss, image_loss, total_loss, AdamConfig, AdamState, MetricReport};

/// Loss components of one step or evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub loss: f64,
    pub image_loss: f64,
    pub edge_loss: f64,
}

/// One line of the metric log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub step: u64,
    /// Mean training loss since the previous report (validation loss at step 0).
    pub loss: f64,
    pub val_loss: f64,
    pub image_loss: f64,
    pub edge_loss: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub nmse: f64,
}

/// Deterministic train/validation split: the last fifth (at least one
/// sample) validates. A single sample serves both roles.
pub fn split_indices(n: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    match n {
        0 => Err(Error::arg("cannot train on an empty dataset")),
        1 => Ok((vec![0], vec![0])),
        _ => {
            let n_val = (n / 5).max(1);
            Ok(((0..n - n_val).collect(), (n - n_val..n).collect()))
        }
    }
}

fn sample_pass(
    model: &EamriModel,
    store: &ParamStore,
    sample: &KSpaceSample,
    beta: f64,
    weight: Option<f64>,
) -> Result<(StepStats, Option<Gradients>, ComplexTensor)> {
    let mut t = Trace::new();
    let y = t.constant(sample.y.clone().into_interleaved());
    let out = model.forward_with(&mut t, store, y, &sample.mask)?;
    let li = image_loss(&mut t, out.image, &sample.x_gt.abs())?;
    let le = edge_loss(&mut t, &out.edges, &sample.edge_gt)?;
    let total = total_loss(&mut t, li, le, beta)?;
    let scalar = |v| t.value(v).data()[0];
    let stats = StepStats {
        loss: scalar(total),
        image_loss: scalar(li),
        edge_loss: scalar(le),
    };
    let grads = match weight {
        Some(w) => {
            let scaled = t.scale(total, w);
            Some(t.backward(scaled)?)
        }
        None => None,
    };
    let image = ComplexTensor::from_interleaved(t.value(out.image).clone())?;
    Ok((stats, grads, image))
}

/// Mean losses and metrics of `model` over `samples`.
pub fn evaluate(model: &EamriModel, samples: &[&KSpaceSample]) -> Result<(StepStats, MetricReport)> {
    if samples.is_empty() {
        return Err(Error::arg("nothing to evaluate"));
    }
    let beta = model.config().beta;
    let results: Vec<Result<(StepStats, MetricReport)>> = samples
        .par_iter()
        .map(|s| {
            let (stats, _, image) = sample_pass(model, model.store(), s, beta, None)?;
            Ok((stats, MetricReport::of_images(&image, &s.x_gt)?))
        })
        .collect();
    let mut stats = StepStats::default();
    let mut reports = Vec::with_capacity(samples.len());
    for r in results {
        let (s, m) = r?;
        stats.loss += s.loss;
        stats.image_loss += s.image_loss;
        stats.edge_loss += s.edge_loss;
        reports.push(m);
    }
    let n = samples.len() as f64;
    stats.loss /= n;
    stats.image_loss /= n;
    stats.edge_loss /= n;
    Ok((stats, MetricReport::mean(&reports)))
}

/// Mini-batch Adam training of an [`EamriModel`].
///
/// The batch drawn at step `s` depends only on the seed and `s`, so a
/// trainer restored from a checkpoint continues exactly where it stopped.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: EamriModel,
    pub adam: AdamState,
    train: Vec<usize>,
    val: Vec<usize>,
}

impl Trainer {
    /// Fresh model and optimiser for a dataset of `n_samples`.
    pub fn new(model: EamriModel, n_samples: usize) -> Result<Self> {
        let c = model.config();
        let adam = AdamState::new(
            model.store(),
            AdamConfig {
                lr: c.lr,
                beta1: c.adam_beta1,
                beta2: c.adam_beta2,
                eps: c.adam_eps,
                weight_decay: c.weight_decay,
            },
        );
        Self::resume(model, adam, n_samples)
    }

    /// Continues from saved model and optimiser state.
    pub fn resume(model: EamriModel, adam: AdamState, n_samples: usize) -> Result<Self> {
        let (train, val) = split_indices(n_samples)?;
        Ok(Self {
            model,
            adam,
            train,
            val,
        })
    }

    pub fn step(&self) -> u64 {
        self.adam.step
    }

    pub fn train_indices(&self) -> &[usize] {
        &self.train
    }

    pub fn val_indices(&self) -> &[usize] {
        &self.val
    }

    /// Dataset indices of the batch used at `step`.
    pub fn batch_indices(&self, step: u64) -> Vec<usize> {
        let n = self.train.len() as u64;
        let b = self.model.config().batch as u64;
        let mut out = Vec::with_capacity(b as usize);
        let mut cached: Option<(u64, Vec<usize>)> = None;
        for j in 0..b {
            let p = step * b + j;
            let epoch = p / n;
            if cached.as_ref().map(|c| c.0) != Some(epoch) {
                let mut rng = ChaCha8Rng::seed_from_u64(self.model.config().seed);
                rng.set_stream(epoch);
                let mut perm = self.train.clone();
                perm.shuffle(&mut rng);
                cached = Some((epoch, perm));
            }
            out.push(cached.as_ref().expect("set above").1[(p % n) as usize]);
        }
        out
    }

    fn check(&self, samples: &[KSpaceSample]) -> Result<()> {
        let needed = self.train.len() + if self.train == self.val { 0 } else { self.val.len() };
        if samples.len() != needed {
            return Err(Error::arg(format!(
                "trainer was built for {needed} samples, got {}",
                samples.len()
            )));
        }
        Ok(())
    }

    /// One Adam step on the next batch; returns its mean losses.
    pub fn train_step(&mut self, samples: &[KSpaceSample]) -> Result<StepStats> {
        self.check(samples)?;
        let idx = self.batch_indices(self.adam.step);
        let model = &self.model;
        let beta = model.config().beta;
        let w = 1.0 / idx.len() as f64;
        let passes: Vec<Result<(StepStats, Option<Gradients>, ComplexTensor)>> = idx
            .par_iter()
            .map(|&i| sample_pass(model, model.store(), &samples[i], beta, Some(w)))
            .collect();
        let mut stats = StepStats::default();
        self.model.store_mut().zero_grads();
        for pass in passes {
            let (s, grads, _) = pass?;
            grads.expect("requested").accumulate_into(self.model.store_mut());
            stats.loss += w * s.loss;
            stats.image_loss += w * s.image_loss;
            stats.edge_loss += w * s.edge_loss;
        }
        self.adam.update(self.model.store_mut());
        Ok(stats)
    }

    /// Losses and metrics on the validation split.
    pub fn validate(&self, samples: &[KSpaceSample]) -> Result<(StepStats, MetricReport)> {
        self.check(samples)?;
        let val: Vec<&KSpaceSample> = self.val.iter().map(|&i| &samples[i]).collect();
        evaluate(&self.model, &val)
    }

    /// Trains up to `total_steps` (counting steps already taken), calling
    /// `log` with a validation report at the start, every `eval_every`
    /// steps and at the end.
    pub fn run(
        &mut self,
        samples: &[KSpaceSample],
        total_steps: u64,
        mut log: impl FnMut(&EvalReport) -> Result<()>,
    ) -> Result<Vec<EvalReport>> {
        self.check(samples)?;
        let every = self.model.config().eval_every as u64;
        let mut reports = Vec::new();
        let mut emit = |trainer: &Self, train_loss: Option<f64>, reports: &mut Vec<EvalReport>| -> Result<()> {
            let (stats, m) = trainer.validate(samples)?;
            let r = EvalReport {
                step: trainer.step(),
                loss: train_loss.unwrap_or(stats.loss),
                val_loss: stats.loss,
                image_loss: stats.image_loss,
                edge_loss: stats.edge_loss,
                psnr: m.psnr,
                ssim: m.ssim,
                nmse: m.nmse,
            };
            log(&r)?;
            reports.push(r);
            Ok(())
        };
        if self.step() == 0 {
            emit(self, None, &mut reports)?;
        }
        let (mut acc, mut count) = (0.0, 0u64);
        while self.step() < total_steps {
            let s = self.train_step(samples)?;
            acc += s.loss;
            count += 1;
            if self.step().is_multiple_of(every) || self.step() == total_steps {
                emit(self, Some(acc / count as f64), &mut reports)?;
                acc = 0.0;
                count = 0;
            }
        }
        Ok(reports)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_rules() {
        assert!(split_indices(0).is_err());
        assert_eq!(split_indices(1).unwrap(), (vec![0], vec![0]));
        let (t, v) = split_indices(100).unwrap();
        assert_eq!((t.len(), v.len()), (80, 20));
        assert_eq!(v[0], 80);
        let (t, v) = split_indices(3).unwrap();
        assert_eq!((t, v), (vec![0, 1], vec![2]));
    }
}
