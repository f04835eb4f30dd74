//! DCGAN generator and discriminator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::layers::{BatchNorm2d, Conv2d, ConvTranspose2d, Layer, ParamMut, Sequential};
use crate::tensor::{Real, Tensor};
use crate::GanError;

const LEAKY_SLOPE: f64 = 0.2;

/// Architecture hyperparameters. The default is the 64×64 network whose
/// last strided block yields a `512×4×4 = 8192` feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DcganConfig {
    /// Latent dimension.
    pub nz: usize,
    /// Generator width (channels of the last hidden block).
    pub ngf: usize,
    /// Discriminator width (channels of the first block).
    pub ndf: usize,
    pub channels: usize,
    pub image_size: usize,
    /// Number of batch-norm blocks in the generator and strided blocks in
    /// the discriminator.
    pub blocks: usize,
}

impl Default for DcganConfig {
    fn default() -> Self {
        Self {
            nz: 100,
            ngf: 64,
            ndf: 64,
            channels: 3,
            image_size: 64,
            blocks: 4,
        }
    }
}

impl DcganConfig {
    /// Spatial extent of the smallest feature map.
    pub fn base(&self) -> usize {
        self.image_size >> self.blocks
    }

    pub fn validate(&self) -> Result<(), GanError> {
        if self.blocks == 0 || self.nz == 0 || self.ngf == 0 || self.ndf == 0 || self.channels == 0 {
            return Err(GanError::Config(format!("zero-sized dimension in {self:?}")));
        }
        let base = self.base();
        if base == 0 || base << self.blocks != self.image_size {
            return Err(GanError::Config(format!(
                "image_size {} is not a multiple of 2^{}",
                self.image_size, self.blocks
            )));
        }
        Ok(())
    }

    /// Channels of the last discriminator block.
    pub fn top_channels(&self) -> usize {
        self.ndf << (self.blocks - 1)
    }

    /// Length of the discriminator feature vector.
    pub fn feature_len(&self) -> usize {
        self.top_channels() * self.base() * self.base()
    }

    pub fn image_shape(&self) -> [usize; 3] {
        [self.channels, self.image_size, self.image_size]
    }
}

/// A latent sample `z ~ N(0, I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVector(pub Vec<f32>);

impl LatentVector {
    pub fn sample<R: Rng + ?Sized>(nz: usize, rng: &mut R) -> Self {
        Self((0..nz).map(|_| StandardNormal.sample(rng)).collect())
    }
}

/// Draws a `[n, nz, 1, 1]` latent batch.
pub fn sample_latent<T: Real, R: Rng + ?Sized>(n: usize, nz: usize, rng: &mut R) -> Tensor<T> {
    let data = (0..n * nz)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            T::lit(v)
        })
        .collect();
    Tensor::from_vec(&[n, nz, 1, 1], data).expect("latent shape")
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Probability kept strictly inside (0, 1) even when the logit saturates.
fn open_unit(p: f64) -> f64 {
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Generator and discriminator weights plus batch-norm statistics.
#[derive(Debug, Clone)]
pub struct Dcgan<T = f32> {
    config: DcganConfig,
    pub generator: Sequential<T>,
    pub discriminator: Sequential<T>,
}

/// The 32-bit parameter set used for training, embedding and persistence.
pub type DcganParams = Dcgan<f32>;

/// Per-sample discriminator outputs of one loss evaluation.
#[derive(Debug, Clone, Default)]
pub struct LossEval {
    pub loss: f64,
    pub real_probs: Vec<f64>,
    pub fake_probs: Vec<f64>,
}

impl<T: Real> Dcgan<T> {
    /// Builds the networks with every parameter zero.
    pub fn new(config: DcganConfig) -> Result<Self, GanError> {
        config.validate()?;
        let base = config.base();
        let b = config.blocks;

        let mut g = Vec::new();
        let mut ch = config.ngf << (b - 1);
        g.push(Layer::ConvT(ConvTranspose2d::new(config.nz, ch, base, 1, 0, false)));
        g.push(Layer::BatchNorm(BatchNorm2d::new(ch)));
        g.push(Layer::Relu);
        for _ in 1..b {
            g.push(Layer::ConvT(ConvTranspose2d::new(ch, ch / 2, 4, 2, 1, false)));
            ch /= 2;
            g.push(Layer::BatchNorm(BatchNorm2d::new(ch)));
            g.push(Layer::Relu);
        }
        g.push(Layer::ConvT(ConvTranspose2d::new(ch, config.channels, 4, 2, 1, true)));
        g.push(Layer::Tanh);

        let mut d = Vec::new();
        let mut ch = config.ndf;
        d.push(Layer::Conv(Conv2d::new(config.channels, ch, 4, 2, 1, true)));
        d.push(Layer::LeakyRelu(LEAKY_SLOPE));
        for _ in 1..b {
            d.push(Layer::Conv(Conv2d::new(ch, ch * 2, 4, 2, 1, false)));
            ch *= 2;
            d.push(Layer::BatchNorm(BatchNorm2d::new(ch)));
            d.push(Layer::LeakyRelu(LEAKY_SLOPE));
        }
        d.push(Layer::Conv(Conv2d::new(ch, 1, base, 1, 0, true)));

        Ok(Self {
            config,
            generator: Sequential::new(g),
            discriminator: Sequential::new(d),
        })
    }

    /// Seeded DCGAN initialization.
    pub fn init_params(config: DcganConfig, seed: u64) -> Result<Self, GanError> {
        let mut model = Self::new(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        model.generator.init(&mut rng);
        model.discriminator.init(&mut rng);
        Ok(model)
    }

    pub fn config(&self) -> &DcganConfig {
        &self.config
    }

    /// Index of the discriminator layer whose input is the feature map.
    pub fn feature_tap(&self) -> usize {
        self.discriminator.layers.len() - 1
    }

    /// Inference-mode generation for a `[n, nz, 1, 1]` (or `[n, nz]`) batch.
    pub fn generate(&self, z: &Tensor<T>) -> Result<Tensor<T>, GanError> {
        let z = self.latent_batch(z)?;
        let out = self.generator.forward_eval(&z);
        debug_assert!(out.data().iter().all(|v| v.abs() <= T::one()));
        Ok(out)
    }

    /// Inference-mode discriminator pass over `[n, c, s, s]`: probabilities
    /// and the flattened feature map per image.
    pub fn discriminate(&self, images: &Tensor<T>) -> Result<(Vec<f64>, Vec<Vec<T>>), GanError> {
        self.check_images(images)?;
        let features = self.discriminator.forward_eval_until(images, self.feature_tap());
        let logits = self.discriminator.forward_eval_from(&features, self.feature_tap());
        let n = images.shape()[0];
        let probs: Vec<f64> = logits
            .data()
            .iter()
            .map(|l| open_unit(sigmoid(l.to_f64().unwrap())))
            .collect();
        debug_assert!(probs.iter().all(|p| *p > 0.0 && *p < 1.0));
        let feats = (0..n).map(|i| features.item(i).to_vec()).collect();
        Ok((probs, feats))
    }

    /// Single image `[c, s, s]` → (probability, features).
    pub fn discriminator_forward(&self, image: &Tensor<T>) -> Result<(f64, Vec<T>), GanError> {
        let [c, h, w] = self.config.image_shape();
        if image.shape() != [c, h, w] {
            return Err(GanError::Shape(format!(
                "discriminator expects [{c},{h},{w}], got {:?}",
                image.shape()
            )));
        }
        let batch = image.clone().reshape(&[1, c, h, w])?;
        let (mut p, mut f) = self.discriminate(&batch)?;
        Ok((p.remove(0), f.remove(0)))
    }

    /// Single latent vector → `[c, s, s]` image.
    pub fn generator_forward(&self, z: &[T]) -> Result<Tensor<T>, GanError> {
        let batch = Tensor::from_vec(&[1, z.len(), 1, 1], z.to_vec())?;
        self.generate(&batch)?.reshape(&self.config.image_shape())
    }

    fn latent_batch(&self, z: &Tensor<T>) -> Result<Tensor<T>, GanError> {
        let n = z.shape().first().copied().unwrap_or(0);
        if n == 0 || z.len() != n * self.config.nz {
            return Err(GanError::Shape(format!(
                "latent batch {:?} does not match nz={}",
                z.shape(),
                self.config.nz
            )));
        }
        z.clone().reshape(&[n, self.config.nz, 1, 1])
    }

    fn check_images(&self, images: &Tensor<T>) -> Result<(), GanError> {
        let [c, h, w] = self.config.image_shape();
        if images.shape().len() != 4 || images.shape()[1..] != [c, h, w] || images.shape()[0] == 0 {
            return Err(GanError::Shape(format!(
                "discriminator expects [n,{c},{h},{w}], got {:?}",
                images.shape()
            )));
        }
        Ok(())
    }

    /// Training-mode generation (batch statistics, running stats updated).
    pub fn generate_train(&mut self, z: &Tensor<T>) -> Tensor<T> {
        let z = self.latent_batch(z).expect("latent batch");
        self.generator.forward_train(z)
    }

    /// Discriminator loss `-V(D, G)` on a real batch and a fixed fake batch,
    /// with batch-norm in training mode. Accumulates discriminator gradients
    /// when `backprop`.
    pub fn discriminator_loss(
        &mut self,
        real: &Tensor<T>,
        fake: &Tensor<T>,
        backprop: bool,
    ) -> Result<LossEval, GanError> {
        self.check_images(real)?;
        self.check_images(fake)?;
        let (loss_real, real_probs) = self.d_term(real, true, backprop);
        let (loss_fake, fake_probs) = self.d_term(fake, false, backprop);
        Ok(LossEval {
            loss: loss_real + loss_fake,
            real_probs,
            fake_probs,
        })
    }

    /// `-mean log D(x)` for real, `-mean log(1 - D(x))` for fake.
    fn d_term(&mut self, x: &Tensor<T>, real: bool, backprop: bool) -> (f64, Vec<f64>) {
        let logits = self.discriminator.forward_train(x.clone());
        let n = logits.len();
        let mut loss = 0.0;
        let mut probs = Vec::with_capacity(n);
        let mut grad = Tensor::zeros(logits.shape());
        for (i, l) in logits.data().iter().enumerate() {
            let l = l.to_f64().unwrap();
            let p = sigmoid(l);
            probs.push(open_unit(p));
            if real {
                loss += softplus(-l);
                grad.data_mut()[i] = T::lit((p - 1.0) / n as f64);
            } else {
                loss += softplus(l);
                grad.data_mut()[i] = T::lit(p / n as f64);
            }
        }
        if backprop {
            self.discriminator.backward(grad, false, true);
        }
        (loss / n as f64, probs)
    }

    /// Non-saturating generator loss `-mean log D(G(z))` for a latent batch,
    /// both networks in training mode. Accumulates generator gradients only
    /// when `backprop`.
    pub fn generator_loss(&mut self, z: &Tensor<T>, backprop: bool) -> Result<LossEval, GanError> {
        let z = self.latent_batch(z)?;
        let fake = self.generator.forward_train(z);
        Ok(self.generator_loss_on(fake, backprop))
    }

    /// Generator loss for `fake`, which must be the output of the latest
    /// `generator.forward_train`.
    pub(crate) fn generator_loss_on(&mut self, fake: Tensor<T>, backprop: bool) -> LossEval {
        let logits = self.discriminator.forward_train(fake);
        let n = logits.len();
        let mut loss = 0.0;
        let mut probs = Vec::with_capacity(n);
        let mut grad = Tensor::zeros(logits.shape());
        for (i, l) in logits.data().iter().enumerate() {
            let l = l.to_f64().unwrap();
            let p = sigmoid(l);
            probs.push(open_unit(p));
            loss += softplus(-l);
            grad.data_mut()[i] = T::lit((p - 1.0) / n as f64);
        }
        if backprop {
            let dfake = self
                .discriminator
                .backward(grad, true, false)
                .expect("input gradient requested");
            self.generator.backward(dfake, false, true);
        }
        LossEval {
            loss: loss / n as f64,
            real_probs: Vec::new(),
            fake_probs: probs,
        }
    }

    pub fn generator_params(&mut self) -> Vec<ParamMut<'_, T>> {
        self.generator.params_mut("g.")
    }

    pub fn discriminator_params(&mut self) -> Vec<ParamMut<'_, T>> {
        self.discriminator.params_mut("d.")
    }

    /// All learnable tensors, generator first.
    pub fn params_mut(&mut self) -> Vec<ParamMut<'_, T>> {
        let mut all = self.generator.params_mut("g.");
        all.extend(self.discriminator.params_mut("d."));
        all
    }

    /// Batch-norm running statistics, generator first.
    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Vec<T>)> {
        let mut all = self.generator.buffers_mut("g.");
        all.extend(self.discriminator.buffers_mut("d."));
        all
    }

    pub fn zero_grad(&mut self) {
        self.generator.zero_grad();
        self.discriminator.zero_grad();
    }

    pub fn param_count(&mut self) -> usize {
        self.generator.param_count() + self.discriminator.param_count()
    }

    /// Converts every parameter and buffer to another scalar type.
    pub fn cast<U: Real>(&self) -> Dcgan<U> {
        let mut src = self.clone();
        let mut dst = Dcgan::<U>::new(self.config).expect("validated config");
        for (s, d) in src.params_mut().into_iter().zip(dst.params_mut()) {
            for (a, b) in s.value.iter().zip(d.value.iter_mut()) {
                *b = U::lit(a.to_f64().unwrap());
            }
        }
        for ((_, s), (_, d)) in src.buffers_mut().into_iter().zip(dst.buffers_mut()) {
            for (a, b) in s.iter().zip(d.iter_mut()) {
                *b = U::lit(a.to_f64().unwrap());
            }
        }
        dst
    }
}
