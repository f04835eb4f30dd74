//! Adversarial training: Adam and the alternating discriminator/generator
//! update.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::layers::ParamMut;
use crate::loss::{gan_value, GanLossReport};
use crate::model::{sample_latent, DcganParams};
use crate::tensor::{Real, Tensor};
use crate::GanError;

/// Optimizer settings. The learning rate and batch size follow the DCGAN
/// recipe (lr 2e-4, batch 128, β₁ 0.5).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 128,
        }
    }
}

/// Adam with bias correction; moment buffers are allocated on first step.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    steps: u64,
    moments: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Real> Adam<T> {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            steps: 0,
            moments: Vec::new(),
        }
    }

    pub fn step(&mut self, params: Vec<ParamMut<'_, T>>) {
        if self.moments.is_empty() {
            self.moments = params
                .iter()
                .map(|p| (vec![T::zero(); p.value.len()], vec![T::zero(); p.value.len()]))
                .collect();
        }
        assert_eq!(self.moments.len(), params.len(), "parameter set changed");
        self.steps += 1;
        let t = self.steps as i32;
        let step_size = self.lr * (1.0 - self.beta2.powi(t)).sqrt() / (1.0 - self.beta1.powi(t));
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - self.beta1), T::lit(1.0 - self.beta2));
        let eps_hat = T::lit(self.eps * (1.0 - self.beta2.powi(t)).sqrt());
        let lr = T::lit(step_size);
        for (p, (m, v)) in params.into_iter().zip(&mut self.moments) {
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + one_b1 * g;
                v[i] = b2 * v[i] + one_b2 * g * g;
                p.value[i] -= lr * m[i] / (v[i].sqrt() + eps_hat);
            }
        }
    }
}

fn check_finite(params: Vec<ParamMut<'_, f32>>) -> Result<(), GanError> {
    for p in params {
        if let Some(i) = p.grad.iter().position(|g| !g.is_finite()) {
            return Err(GanError::NonFinite(format!("gradient of {}[{i}]", p.name)));
        }
    }
    Ok(())
}

/// A model together with its optimizer state.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: DcganParams,
    pub config: TrainConfig,
    opt_g: Adam<f32>,
    opt_d: Adam<f32>,
}

impl Trainer {
    pub fn new(model: DcganParams, config: TrainConfig) -> Self {
        Self {
            opt_g: Adam::new(&config),
            opt_d: Adam::new(&config),
            model,
            config,
        }
    }

    /// One discriminator update on `real` plus a generated batch of the same
    /// size, then one generator update through the updated discriminator.
    pub fn train_step<R: Rng + ?Sized>(
        &mut self,
        real: &Tensor<f32>,
        rng: &mut R,
    ) -> Result<GanLossReport, GanError> {
        let n = real.shape()[0];
        if n < 2 {
            return Err(GanError::Shape("batch-norm training needs at least 2 images".into()));
        }
        if !real.all_finite() {
            return Err(GanError::NonFinite("real batch".into()));
        }
        let nz = self.model.config().nz;
        let z = sample_latent::<f32, _>(n, nz, rng);

        self.model.zero_grad();
        let fake = self.model.generator.forward_train(z);
        let d_eval = self.model.discriminator_loss(real, &fake, true)?;
        check_finite(self.model.discriminator_params())?;
        self.opt_d.step(self.model.discriminator_params());

        let g_eval = self.model.generator_loss_on(fake, true);
        check_finite(self.model.generator_params())?;
        self.opt_g.step(self.model.generator_params());

        let mut report = gan_value(&d_eval.real_probs, &d_eval.fake_probs);
        report.g_loss = g_eval.loss;
        if !(report.d_loss.is_finite() && report.g_loss.is_finite()) {
            return Err(GanError::NonFinite(format!("losses {report:?}")));
        }
        Ok(report)
    }

    /// Trains over `images` (each `[c, s, s]`) for `epochs` passes with a
    /// fresh shuffle each epoch. A trailing batch smaller than 2 is dropped.
    /// `on_step` sees `(epoch, step, report)`.
    pub fn fit<R: Rng + ?Sized>(
        &mut self,
        images: &[Tensor<f32>],
        epochs: usize,
        rng: &mut R,
        mut on_step: impl FnMut(usize, usize, &GanLossReport),
    ) -> Result<Vec<GanLossReport>, GanError> {
        let mut reports = Vec::new();
        let mut order: Vec<usize> = (0..images.len()).collect();
        let bs = self.config.batch_size.max(2);
        for epoch in 0..epochs {
            order.shuffle(rng);
            for (step, chunk) in order.chunks(bs).enumerate() {
                if chunk.len() < 2 {
                    continue;
                }
                let batch: Vec<Tensor<f32>> = chunk.iter().map(|&i| images[i].clone()).collect();
                let batch = Tensor::stack(&batch)?;
                let report = self.train_step(&batch, rng)?;
                on_step(epoch, step, &report);
                reports.push(report);
            }
        }
        Ok(reports)
    }
}
