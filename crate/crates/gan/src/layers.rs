//! Layers of the DCGAN networks and the sequential container that chains
//! them. Tensors are NCHW throughout.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{gemm, Op, Patch, Real, Tensor};

/// Upper bound on the number of elements in one im2col buffer. Batches are
/// processed in chunks of samples that fit.
const COL_BUDGET: usize = 1 << 22;

fn chunk_len(per_sample: usize, n: usize) -> usize {
    (COL_BUDGET / per_sample.max(1)).clamp(1, n.max(1))
}

/// Copy samples `n0..n0+nb` of an NCHW buffer into a `C × (nb·HW)` matrix.
fn gather<T: Real>(src: &[T], n0: usize, nb: usize, c: usize, hw: usize, dst: &mut [T]) {
    let ld = nb * hw;
    for i in 0..nb {
        let sample = &src[(n0 + i) * c * hw..(n0 + i + 1) * c * hw];
        for ch in 0..c {
            dst[ch * ld + i * hw..ch * ld + (i + 1) * hw]
                .copy_from_slice(&sample[ch * hw..(ch + 1) * hw]);
        }
    }
}

/// Inverse of [`gather`].
fn scatter<T: Real>(src: &[T], n0: usize, nb: usize, c: usize, hw: usize, dst: &mut [T]) {
    let ld = nb * hw;
    for i in 0..nb {
        let sample = &mut dst[(n0 + i) * c * hw..(n0 + i + 1) * c * hw];
        for ch in 0..c {
            sample[ch * hw..(ch + 1) * hw]
                .copy_from_slice(&src[ch * ld + i * hw..ch * ld + (i + 1) * hw]);
        }
    }
}

fn normal_fill<T: Real, R: Rng + ?Sized>(rng: &mut R, mean: f64, std: f64, out: &mut [T]) {
    let dist = Normal::new(mean, std).expect("valid normal");
    for v in out {
        *v = T::lit(dist.sample(rng));
    }
}

/// Strided 2-d convolution. Weight layout `[out, in, k, k]`.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: Vec<T>,
    pub bias: Option<Vec<T>>,
    pub grad_weight: Vec<T>,
    pub grad_bias: Option<Vec<T>>,
}

impl<T: Real> Conv2d<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        with_bias: bool,
    ) -> Self {
        let n = out_channels * in_channels * kernel * kernel;
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
            weight: vec![T::zero(); n],
            bias: with_bias.then(|| vec![T::zero(); out_channels]),
            grad_weight: vec![T::zero(); n],
            grad_bias: with_bias.then(|| vec![T::zero(); out_channels]),
        }
    }

    fn patch(&self, h: usize, w: usize) -> Patch {
        Patch {
            channels: self.in_channels,
            height: h,
            width: w,
            kernel: self.kernel,
            stride: self.stride,
            pad: self.pad,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let (n, c, h, w) = x.dims4();
        assert_eq!(c, self.in_channels, "conv input channels");
        let patch = self.patch(h, w);
        let (oh, ow) = (patch.out_h(), patch.out_w());
        let hw = oh * ow;
        let rows = patch.rows();
        let mut out = Tensor::zeros(&[n, self.out_channels, oh, ow]);
        let step = chunk_len(rows * hw, n);
        let mut cols = vec![T::zero(); rows * step * hw];
        let mut y = vec![T::zero(); self.out_channels * step * hw];
        let mut n0 = 0;
        while n0 < n {
            let nb = step.min(n - n0);
            let ld = nb * hw;
            for i in 0..nb {
                patch.im2col_strided(x.item(n0 + i), &mut cols, ld, i * hw);
            }
            gemm(
                self.out_channels,
                rows,
                ld,
                &self.weight,
                Op::N,
                &cols,
                Op::N,
                T::zero(),
                &mut y,
            );
            scatter(&y, n0, nb, self.out_channels, hw, out.data_mut());
            n0 += nb;
        }
        if let Some(bias) = &self.bias {
            add_channel_bias(&mut out, bias);
        }
        out
    }

    /// Accumulates parameter gradients when `param_grads`; returns the input
    /// gradient when `input_grad`.
    pub fn backward(
        &mut self,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        input_grad: bool,
        param_grads: bool,
    ) -> Option<Tensor<T>> {
        let (n, _, h, w) = x.dims4();
        let patch = self.patch(h, w);
        let hw = patch.cols();
        let rows = patch.rows();
        if param_grads {
            if let Some(gb) = &mut self.grad_bias {
                accumulate_channel_sums(dy, gb);
            }
        }
        let mut dx = input_grad.then(|| Tensor::zeros(x.shape()));
        let step = chunk_len(rows * hw, n);
        let mut cols = vec![T::zero(); rows * step * hw];
        let mut dyc = vec![T::zero(); self.out_channels * step * hw];
        let mut n0 = 0;
        while n0 < n {
            let nb = step.min(n - n0);
            let ld = nb * hw;
            gather(dy.data(), n0, nb, self.out_channels, hw, &mut dyc);
            if param_grads {
                for i in 0..nb {
                    patch.im2col_strided(x.item(n0 + i), &mut cols, ld, i * hw);
                }
                gemm(
                    self.out_channels,
                    ld,
                    rows,
                    &dyc,
                    Op::N,
                    &cols,
                    Op::T,
                    T::one(),
                    &mut self.grad_weight,
                );
            }
            if let Some(dx) = dx.as_mut() {
                gemm(
                    rows,
                    self.out_channels,
                    ld,
                    &self.weight,
                    Op::T,
                    &dyc,
                    Op::N,
                    T::zero(),
                    &mut cols,
                );
                let per = self.in_channels * h * w;
                for i in 0..nb {
                    let s = n0 + i;
                    patch.col2im_strided(&cols, ld, i * hw, &mut dx.data_mut()[s * per..(s + 1) * per]);
                }
            }
            n0 += nb;
        }
        dx
    }
}

/// Transposed ("fractionally strided") convolution. Weight layout
/// `[in, out, k, k]`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: Vec<T>,
    pub bias: Option<Vec<T>>,
    pub grad_weight: Vec<T>,
    pub grad_bias: Option<Vec<T>>,
}

impl<T: Real> ConvTranspose2d<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        with_bias: bool,
    ) -> Self {
        let n = out_channels * in_channels * kernel * kernel;
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
            weight: vec![T::zero(); n],
            bias: with_bias.then(|| vec![T::zero(); out_channels]),
            grad_weight: vec![T::zero(); n],
            grad_bias: with_bias.then(|| vec![T::zero(); out_channels]),
        }
    }

    /// Geometry of the output image; its im2col maps back onto the input grid.
    fn patch(&self, h: usize, w: usize) -> Patch {
        let oh = (h - 1) * self.stride + self.kernel - 2 * self.pad;
        let ow = (w - 1) * self.stride + self.kernel - 2 * self.pad;
        let p = Patch {
            channels: self.out_channels,
            height: oh,
            width: ow,
            kernel: self.kernel,
            stride: self.stride,
            pad: self.pad,
        };
        debug_assert_eq!((p.out_h(), p.out_w()), (h, w));
        p
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let (n, c, h, w) = x.dims4();
        assert_eq!(c, self.in_channels, "transposed conv input channels");
        let patch = self.patch(h, w);
        let hw = h * w;
        let rows = patch.rows();
        let per_out = self.out_channels * patch.height * patch.width;
        let mut out = Tensor::zeros(&[n, self.out_channels, patch.height, patch.width]);
        let step = chunk_len(rows * hw, n);
        let mut xc = vec![T::zero(); c * step * hw];
        let mut cols = vec![T::zero(); rows * step * hw];
        let mut n0 = 0;
        while n0 < n {
            let nb = step.min(n - n0);
            let ld = nb * hw;
            gather(x.data(), n0, nb, c, hw, &mut xc);
            gemm(rows, c, ld, &self.weight, Op::T, &xc, Op::N, T::zero(), &mut cols);
            for i in 0..nb {
                let s = n0 + i;
                patch.col2im_strided(&cols, ld, i * hw, &mut out.data_mut()[s * per_out..(s + 1) * per_out]);
            }
            n0 += nb;
        }
        if let Some(bias) = &self.bias {
            add_channel_bias(&mut out, bias);
        }
        out
    }

    pub fn backward(
        &mut self,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        input_grad: bool,
        param_grads: bool,
    ) -> Option<Tensor<T>> {
        let (n, c, h, w) = x.dims4();
        let patch = self.patch(h, w);
        let hw = h * w;
        let rows = patch.rows();
        if param_grads {
            if let Some(gb) = &mut self.grad_bias {
                accumulate_channel_sums(dy, gb);
            }
        }
        let mut dx = input_grad.then(|| Tensor::zeros(x.shape()));
        let step = chunk_len(rows * hw, n);
        let mut dcols = vec![T::zero(); rows * step * hw];
        let mut xc = vec![T::zero(); c * step * hw];
        let mut n0 = 0;
        while n0 < n {
            let nb = step.min(n - n0);
            let ld = nb * hw;
            for i in 0..nb {
                patch.im2col_strided(dy.item(n0 + i), &mut dcols, ld, i * hw);
            }
            if param_grads {
                gather(x.data(), n0, nb, c, hw, &mut xc);
                gemm(c, ld, rows, &xc, Op::N, &dcols, Op::T, T::one(), &mut self.grad_weight);
            }
            if let Some(dx) = dx.as_mut() {
                gemm(c, rows, ld, &self.weight, Op::N, &dcols, Op::N, T::zero(), &mut xc);
                scatter(&xc, n0, nb, c, hw, dx.data_mut());
            }
            n0 += nb;
        }
        dx
    }
}

fn add_channel_bias<T: Real>(out: &mut Tensor<T>, bias: &[T]) {
    let (n, c, h, w) = out.dims4();
    let hw = h * w;
    let data = out.data_mut();
    for s in 0..n {
        for (ch, &b) in bias.iter().enumerate().take(c) {
            let off = (s * c + ch) * hw;
            for v in &mut data[off..off + hw] {
                *v += b;
            }
        }
    }
}

fn accumulate_channel_sums<T: Real>(dy: &Tensor<T>, acc: &mut [T]) {
    let (n, c, h, w) = dy.dims4();
    let hw = h * w;
    for s in 0..n {
        for (ch, a) in acc.iter_mut().enumerate().take(c) {
            let off = (s * c + ch) * hw;
            *a += dy.data()[off..off + hw].iter().copied().sum::<T>();
        }
    }
}

/// Per-channel batch normalization with learned scale and shift.
#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub channels: usize,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub grad_gamma: Vec<T>,
    pub grad_beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub eps: f64,
    batch_mean: Vec<T>,
    batch_invstd: Vec<T>,
}

impl<T: Real> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            grad_gamma: vec![T::zero(); channels],
            grad_beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: 0.1,
            eps: 1e-5,
            batch_mean: vec![T::zero(); channels],
            batch_invstd: vec![T::one(); channels],
        }
    }

    /// Normalizes with batch statistics and folds them into the running
    /// estimates.
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let (n, c, h, w) = x.dims4();
        let hw = h * w;
        let count = (n * hw) as f64;
        let mom = T::lit(self.momentum);
        for ch in 0..c {
            let mut sum = 0.0f64;
            for s in 0..n {
                let off = (s * c + ch) * hw;
                sum += x.data()[off..off + hw]
                    .iter()
                    .map(|v| v.to_f64().unwrap())
                    .sum::<f64>();
            }
            let mean = sum / count;
            let mut sq = 0.0f64;
            for s in 0..n {
                let off = (s * c + ch) * hw;
                sq += x.data()[off..off + hw]
                    .iter()
                    .map(|v| {
                        let d = v.to_f64().unwrap() - mean;
                        d * d
                    })
                    .sum::<f64>();
            }
            let var = sq / count;
            let unbiased = if count > 1.0 { sq / (count - 1.0) } else { var };
            self.batch_mean[ch] = T::lit(mean);
            self.batch_invstd[ch] = T::lit(1.0 / (var + self.eps).sqrt());
            self.running_mean[ch] = (T::one() - mom) * self.running_mean[ch] + mom * T::lit(mean);
            self.running_var[ch] = (T::one() - mom) * self.running_var[ch] + mom * T::lit(unbiased);
        }
        self.apply(x, &self.batch_mean, &self.batch_invstd)
    }

    pub fn forward_eval(&self, x: &Tensor<T>) -> Tensor<T> {
        let invstd: Vec<T> = self
            .running_var
            .iter()
            .map(|v| T::one() / (*v + T::lit(self.eps)).sqrt())
            .collect();
        self.apply(x, &self.running_mean, &invstd)
    }

    fn apply(&self, x: &Tensor<T>, mean: &[T], invstd: &[T]) -> Tensor<T> {
        let (n, c, h, w) = x.dims4();
        let hw = h * w;
        let mut out = x.clone();
        let data = out.data_mut();
        for s in 0..n {
            for ch in 0..c {
                let scale = self.gamma[ch] * invstd[ch];
                let shift = self.beta[ch] - mean[ch] * scale;
                let off = (s * c + ch) * hw;
                for v in &mut data[off..off + hw] {
                    *v = *v * scale + shift;
                }
            }
        }
        out
    }

    /// Backward pass for a training-mode forward on `x`.
    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>, param_grads: bool) -> Tensor<T> {
        let (n, c, h, w) = x.dims4();
        let hw = h * w;
        let m = T::from_usize(n * hw).unwrap();
        let mut dx = Tensor::zeros(x.shape());
        for ch in 0..c {
            let mean = self.batch_mean[ch];
            let inv = self.batch_invstd[ch];
            let mut sum_dy = T::zero();
            let mut sum_dy_xhat = T::zero();
            for s in 0..n {
                let off = (s * c + ch) * hw;
                for (xv, g) in x.data()[off..off + hw].iter().zip(&dy.data()[off..off + hw]) {
                    sum_dy += *g;
                    sum_dy_xhat += *g * (*xv - mean) * inv;
                }
            }
            if param_grads {
                self.grad_gamma[ch] += sum_dy_xhat;
                self.grad_beta[ch] += sum_dy;
            }
            let k = self.gamma[ch] * inv / m;
            for s in 0..n {
                let off = (s * c + ch) * hw;
                for i in off..off + hw {
                    let xhat = (x.data()[i] - mean) * inv;
                    dx.data_mut()[i] = k * (m * dy.data()[i] - sum_dy - xhat * sum_dy_xhat);
                }
            }
        }
        dx
    }
}

/// One stage of a [`Sequential`] network.
#[derive(Debug, Clone)]
pub enum Layer<T> {
    Conv(Conv2d<T>),
    ConvT(ConvTranspose2d<T>),
    BatchNorm(BatchNorm2d<T>),
    Relu,
    LeakyRelu(f64),
    Tanh,
}

impl<T: Real> Layer<T> {
    fn forward_eval(&self, x: &Tensor<T>) -> Tensor<T> {
        match self {
            Layer::Conv(l) => l.forward(x),
            Layer::ConvT(l) => l.forward(x),
            Layer::BatchNorm(l) => l.forward_eval(x),
            Layer::Relu => map(x, |v| if v > T::zero() { v } else { T::zero() }),
            Layer::LeakyRelu(slope) => {
                let s = T::lit(*slope);
                map(x, |v| if v > T::zero() { v } else { v * s })
            }
            Layer::Tanh => map(x, |v| v.tanh()),
        }
    }

    fn forward_train(&mut self, x: &Tensor<T>) -> Tensor<T> {
        match self {
            Layer::BatchNorm(l) => l.forward_train(x),
            other => other.forward_eval(x),
        }
    }

    fn backward(
        &mut self,
        x: &Tensor<T>,
        y: &Tensor<T>,
        dy: &Tensor<T>,
        input_grad: bool,
        param_grads: bool,
    ) -> Option<Tensor<T>> {
        match self {
            Layer::Conv(l) => l.backward(x, dy, input_grad, param_grads),
            Layer::ConvT(l) => l.backward(x, dy, input_grad, param_grads),
            Layer::BatchNorm(l) => Some(l.backward(x, dy, param_grads)),
            Layer::Relu => Some(zip_map(x, dy, |xv, g| if xv > T::zero() { g } else { T::zero() })),
            Layer::LeakyRelu(slope) => {
                let s = T::lit(*slope);
                Some(zip_map(x, dy, |xv, g| if xv > T::zero() { g } else { g * s }))
            }
            Layer::Tanh => Some(zip_map(y, dy, |yv, g| g * (T::one() - yv * yv))),
        }
    }
}

fn map<T: Real>(x: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    let mut out = x.clone();
    for v in out.data_mut() {
        *v = f(*v);
    }
    out
}

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let mut out = b.clone();
    for (o, av) in out.data_mut().iter_mut().zip(a.data()) {
        *o = f(*av, *o);
    }
    out
}

/// Mutable view of one learnable tensor and its gradient.
pub struct ParamMut<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: &'a mut [T],
    pub grad: &'a mut [T],
}

/// Chain of layers with activation caching for backpropagation.
#[derive(Debug, Clone)]
pub struct Sequential<T> {
    pub layers: Vec<Layer<T>>,
    /// Input of each layer from the last training forward, plus the final
    /// output.
    cache: Vec<Tensor<T>>,
}

impl<T: Real> Sequential<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Self {
            layers,
            cache: Vec::new(),
        }
    }

    pub fn forward_train(&mut self, x: Tensor<T>) -> Tensor<T> {
        self.cache.clear();
        self.cache.push(x);
        for i in 0..self.layers.len() {
            let y = self.layers[i].forward_train(&self.cache[i]);
            self.cache.push(y);
        }
        self.cache.last().cloned().expect("non-empty cache")
    }

    /// Inference-mode forward through layers `0..upto`.
    pub fn forward_eval_until(&self, x: &Tensor<T>, upto: usize) -> Tensor<T> {
        let mut cur = x.clone();
        for layer in &self.layers[..upto] {
            cur = layer.forward_eval(&cur);
        }
        cur
    }

    /// Inference-mode forward through layers `from..`.
    pub fn forward_eval_from(&self, x: &Tensor<T>, from: usize) -> Tensor<T> {
        let mut cur = x.clone();
        for layer in &self.layers[from..] {
            cur = layer.forward_eval(&cur);
        }
        cur
    }

    pub fn forward_eval(&self, x: &Tensor<T>) -> Tensor<T> {
        self.forward_eval_until(x, self.layers.len())
    }

    /// Backpropagates `grad` (w.r.t. the last training forward's output).
    /// Returns the gradient w.r.t. the network input when `input_grad`.
    pub fn backward(&mut self, grad: Tensor<T>, input_grad: bool, param_grads: bool) -> Option<Tensor<T>> {
        assert_eq!(self.cache.len(), self.layers.len() + 1, "backward without forward_train");
        let mut g = grad;
        for i in (0..self.layers.len()).rev() {
            let need_input = i > 0 || input_grad;
            let (x, y) = (&self.cache[i], &self.cache[i + 1]);
            match self.layers[i].backward(x, y, &g, need_input, param_grads) {
                Some(next) => g = next,
                None => return None,
            }
        }
        Some(g)
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut("") {
            p.grad.fill(T::zero());
        }
    }

    /// Learnable tensors in a stable order, named `{prefix}{index}.{kind}`.
    pub fn params_mut(&mut self, prefix: &str) -> Vec<ParamMut<'_, T>> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            match layer {
                Layer::Conv(l) => {
                    let shape = vec![l.out_channels, l.in_channels, l.kernel, l.kernel];
                    out.push(ParamMut {
                        name: format!("{prefix}{i}.weight"),
                        shape,
                        value: &mut l.weight,
                        grad: &mut l.grad_weight,
                    });
                    if let (Some(b), Some(gb)) = (&mut l.bias, &mut l.grad_bias) {
                        out.push(ParamMut {
                            name: format!("{prefix}{i}.bias"),
                            shape: vec![l.out_channels],
                            value: b,
                            grad: gb,
                        });
                    }
                }
                Layer::ConvT(l) => {
                    let shape = vec![l.in_channels, l.out_channels, l.kernel, l.kernel];
                    out.push(ParamMut {
                        name: format!("{prefix}{i}.weight"),
                        shape,
                        value: &mut l.weight,
                        grad: &mut l.grad_weight,
                    });
                    if let (Some(b), Some(gb)) = (&mut l.bias, &mut l.grad_bias) {
                        out.push(ParamMut {
                            name: format!("{prefix}{i}.bias"),
                            shape: vec![l.out_channels],
                            value: b,
                            grad: gb,
                        });
                    }
                }
                Layer::BatchNorm(l) => {
                    out.push(ParamMut {
                        name: format!("{prefix}{i}.gamma"),
                        shape: vec![l.channels],
                        value: &mut l.gamma,
                        grad: &mut l.grad_gamma,
                    });
                    out.push(ParamMut {
                        name: format!("{prefix}{i}.beta"),
                        shape: vec![l.channels],
                        value: &mut l.beta,
                        grad: &mut l.grad_beta,
                    });
                }
                Layer::Relu | Layer::LeakyRelu(_) | Layer::Tanh => {}
            }
        }
        out
    }

    /// Non-learned state (batch-norm running statistics), in a stable order.
    pub fn buffers_mut(&mut self, prefix: &str) -> Vec<(String, &mut Vec<T>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            if let Layer::BatchNorm(l) = layer {
                out.push((format!("{prefix}{i}.running_mean"), &mut l.running_mean));
                out.push((format!("{prefix}{i}.running_var"), &mut l.running_var));
            }
        }
        out
    }

    /// DCGAN initialization: conv weights ~ N(0, 0.02), batch-norm scale
    /// ~ N(1, 0.02), shifts and biases zero.
    pub fn init<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(l) => {
                    normal_fill(rng, 0.0, 0.02, &mut l.weight);
                    if let Some(b) = &mut l.bias {
                        b.fill(T::zero());
                    }
                }
                Layer::ConvT(l) => {
                    normal_fill(rng, 0.0, 0.02, &mut l.weight);
                    if let Some(b) = &mut l.bias {
                        b.fill(T::zero());
                    }
                }
                Layer::BatchNorm(l) => {
                    normal_fill(rng, 1.0, 0.02, &mut l.gamma);
                    l.beta.fill(T::zero());
                }
                _ => {}
            }
        }
    }

    pub fn param_count(&mut self) -> usize {
        self.params_mut("").iter().map(|p| p.value.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        let mut v = vec![0.0; n];
        normal_fill(&mut rng, 0.0, 1.0, &mut v);
        Tensor::from_vec(shape, v).unwrap()
    }

    /// Direct nested-loop convolution, independent of im2col/GEMM.
    fn direct_conv(l: &Conv2d<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let (n, c, h, w) = x.dims4();
        let oh = (h + 2 * l.pad - l.kernel) / l.stride + 1;
        let ow = (w + 2 * l.pad - l.kernel) / l.stride + 1;
        let mut out = Tensor::zeros(&[n, l.out_channels, oh, ow]);
        for s in 0..n {
            for o in 0..l.out_channels {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = l.bias.as_ref().map_or(0.0, |b| b[o]);
                        for ci in 0..c {
                            for ky in 0..l.kernel {
                                for kx in 0..l.kernel {
                                    let iy = (oy * l.stride + ky) as isize - l.pad as isize;
                                    let ix = (ox * l.stride + kx) as isize - l.pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    let wv = l.weight[((o * c + ci) * l.kernel + ky) * l.kernel + kx];
                                    acc += wv * x.data()[((s * c + ci) * h + iy as usize) * w + ix as usize];
                                }
                            }
                        }
                        out.data_mut()[((s * l.out_channels + o) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    /// Scatter form of the transposed convolution.
    fn direct_conv_t(l: &ConvTranspose2d<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let (n, c, h, w) = x.dims4();
        let oh = (h - 1) * l.stride + l.kernel - 2 * l.pad;
        let ow = (w - 1) * l.stride + l.kernel - 2 * l.pad;
        let mut out = Tensor::zeros(&[n, l.out_channels, oh, ow]);
        for s in 0..n {
            for ci in 0..c {
                for iy in 0..h {
                    for ix in 0..w {
                        let xv = x.data()[((s * c + ci) * h + iy) * w + ix];
                        for o in 0..l.out_channels {
                            for ky in 0..l.kernel {
                                for kx in 0..l.kernel {
                                    let oy = (iy * l.stride + ky) as isize - l.pad as isize;
                                    let ox = (ix * l.stride + kx) as isize - l.pad as isize;
                                    if oy < 0 || ox < 0 || oy >= oh as isize || ox >= ow as isize {
                                        continue;
                                    }
                                    let wv = l.weight[((ci * l.out_channels + o) * l.kernel + ky) * l.kernel + kx];
                                    out.data_mut()[((s * l.out_channels + o) * oh + oy as usize) * ow + ox as usize] += wv * xv;
                                }
                            }
                        }
                    }
                }
            }
        }
        if let Some(b) = &l.bias {
            add_channel_bias(&mut out, b);
        }
        out
    }

    #[test]
    fn conv_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut l = Conv2d::<f64>::new(3, 5, 4, 2, 1, true);
        normal_fill(&mut rng, 0.0, 0.3, &mut l.weight);
        normal_fill(&mut rng, 0.0, 0.3, l.bias.as_mut().unwrap());
        let x = random(&[2, 3, 8, 8], 2);
        let a = l.forward(&x);
        let b = direct_conv(&l, &x);
        assert_eq!(a.shape(), &[2, 5, 4, 4]);
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_transpose_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (k, s, p, hin) in [(4, 2, 1, 4), (4, 1, 0, 1), (2, 1, 0, 1)] {
            let mut l = ConvTranspose2d::<f64>::new(3, 2, k, s, p, true);
            normal_fill(&mut rng, 0.0, 0.3, &mut l.weight);
            normal_fill(&mut rng, 0.0, 0.3, l.bias.as_mut().unwrap());
            let x = random(&[2, 3, hin, hin], 4);
            let a = l.forward(&x);
            let b = direct_conv_t(&l, &x);
            assert_eq!(a.shape(), b.shape());
            for (p, q) in a.data().iter().zip(b.data()) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batchnorm_train_output_is_standardized() {
        let mut bn = BatchNorm2d::<f64>::new(2);
        let x = random(&[4, 2, 3, 3], 5);
        let y = bn.forward_train(&x);
        for ch in 0..2 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|s| y.data()[(s * 2 + ch) * 9..(s * 2 + ch + 1) * 9].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
        assert!(bn.running_mean.iter().any(|m| *m != 0.0));
    }
}
