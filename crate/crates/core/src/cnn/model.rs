//! Two-head classifier: a shared conv → BN → ReLU ×2 backbone feeding an
//! angle head (4 classes) and a position head (3 classes), each made of
//! four affine layers with ReLU between them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{
    col2im, im2col, relu_backward, relu_inplace, to_channel_major, BatchNorm, BnCache, Conv2d,
    Linear, Plane,
};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::types::{AngleClass, PositionClass, TactileFrame, MAX_FORCE, SENSOR_SIZE};

pub const ANGLE_CLASSES: usize = 4;
pub const POSITION_CLASSES: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    /// Hidden widths of each head; the head has `len + 1` affine layers.
    pub head_widths: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 2,
            height: SENSOR_SIZE,
            width: SENSOR_SIZE,
            conv1_channels: 16,
            conv2_channels: 32,
            head_widths: vec![256, 128, 64],
        }
    }
}

impl ModelConfig {
    pub fn features(&self) -> usize {
        self.conv2_channels * self.height * self.width
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub layers: Vec<Linear>,
}

impl Head {
    fn new(features: usize, widths: &[usize], classes: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut dims = vec![features];
        dims.extend_from_slice(widths);
        dims.push(classes);
        Self { layers: dims.windows(2).map(|d| Linear::new(d[0], d[1], rng)).collect() }
    }

    /// Returns the logits and every layer's input (post-ReLU activations).
    fn forward(&self, feat: &[f64], n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut x = feat.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut y = layer.forward(&x, n);
            if i + 1 < self.layers.len() {
                relu_inplace(&mut y);
            }
            inputs.push(x);
            x = y;
        }
        (x, inputs)
    }

    fn backward(&self, inputs: &[Vec<f64>], dlogits: &[f64], n: usize, grads: &mut [Tensor]) -> Vec<f64> {
        let mut dy = dlogits.to_vec();
        for i in (0..self.layers.len()).rev() {
            let [dw, db] = &mut grads[2 * i..2 * i + 2] else { unreachable!() };
            let mut dx = self.layers[i].backward(&inputs[i], &dy, n, dw, db);
            if i > 0 {
                // inputs[i] is the ReLU output of layer i − 1.
                relu_backward(&inputs[i], &mut dx);
            }
            dy = dx;
        }
        dy
    }
}

/// All weights and batch-norm statistics of the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub conv1: Conv2d,
    pub bn1: BatchNorm,
    pub conv2: Conv2d,
    pub bn2: BatchNorm,
    pub angle_head: Head,
    pub pos_head: Head,
}

/// Output logits of both heads.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    pub angle: Tensor, // [N, 4]
    pub position: Tensor, // [N, 3]
}

/// Intermediate values kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    plane: Plane,
    cols1: Vec<f64>,
    bn1: Option<BnCache>,
    a1: Vec<f64>,
    cols2: Vec<f64>,
    bn2: Option<BnCache>,
    a2: Vec<f64>,
    angle_inputs: Vec<Vec<f64>>,
    pos_inputs: Vec<Vec<f64>>,
}

/// Gradients in the same order as [`ModelParams::trainable`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Tensor>,
}

impl ModelParams {
    /// Fan-in scaled uniform weights, zero biases, identity batch norm.
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conv1 = Conv2d::new(config.in_channels, config.conv1_channels, &mut rng);
        let conv2 = Conv2d::new(config.conv1_channels, config.conv2_channels, &mut rng);
        let f = config.features();
        let angle_head = Head::new(f, &config.head_widths, ANGLE_CLASSES, &mut rng);
        let pos_head = Head::new(f, &config.head_widths, POSITION_CLASSES, &mut rng);
        Self {
            config: config.clone(),
            conv1,
            bn1: BatchNorm::new(config.conv1_channels),
            conv2,
            bn2: BatchNorm::new(config.conv2_channels),
            angle_head,
            pos_head,
        }
    }

    /// Trainable tensors with their canonical names.
    pub fn trainable(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("conv1.weight".into(), &self.conv1.weight),
            ("conv1.bias".into(), &self.conv1.bias),
            ("bn1.gamma".into(), &self.bn1.gamma),
            ("bn1.beta".into(), &self.bn1.beta),
            ("conv2.weight".into(), &self.conv2.weight),
            ("conv2.bias".into(), &self.conv2.bias),
            ("bn2.gamma".into(), &self.bn2.gamma),
            ("bn2.beta".into(), &self.bn2.beta),
        ];
        for (name, head) in [("angle_head", &self.angle_head), ("pos_head", &self.pos_head)] {
            for (i, l) in head.layers.iter().enumerate() {
                out.push((format!("{name}.{i}.weight"), &l.weight));
                out.push((format!("{name}.{i}.bias"), &l.bias));
            }
        }
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor> {
        self.tensors_mut(false)
    }

    /// Every stored tensor: trainable ones followed by running statistics.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.trainable();
        out.push(("bn1.running_mean".into(), &self.bn1.running_mean));
        out.push(("bn1.running_var".into(), &self.bn1.running_var));
        out.push(("bn2.running_mean".into(), &self.bn2.running_mean));
        out.push(("bn2.running_var".into(), &self.bn2.running_var));
        out
    }

    /// Mutable counterpart of [`Self::named_tensors`], same order.
    pub fn named_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.tensors_mut(true)
    }

    fn tensors_mut(&mut self, include_running: bool) -> Vec<&mut Tensor> {
        let Self { conv1, bn1, conv2, bn2, angle_head, pos_head, .. } = self;
        let mut out: Vec<&mut Tensor> = vec![
            &mut conv1.weight,
            &mut conv1.bias,
            &mut bn1.gamma,
            &mut bn1.beta,
            &mut conv2.weight,
            &mut conv2.bias,
            &mut bn2.gamma,
            &mut bn2.beta,
        ];
        for head in [angle_head, pos_head] {
            for l in head.layers.iter_mut() {
                out.push(&mut l.weight);
                out.push(&mut l.bias);
            }
        }
        if include_running {
            out.push(&mut bn1.running_mean);
            out.push(&mut bn1.running_var);
            out.push(&mut bn2.running_mean);
            out.push(&mut bn2.running_var);
        }
        out
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients { tensors: self.trainable().into_iter().map(|(_, t)| Tensor::zeros(t.shape())).collect() }
    }

    pub fn parameter_count(&self) -> usize {
        self.trainable().iter().map(|(_, t)| t.len()).sum()
    }

    fn check_input(&self, x: &Tensor) -> Result<Plane> {
        let c = &self.config;
        match x.shape() {
            &[n, ch, h, w] if n >= 1 && ch == c.in_channels && h == c.height && w == c.width => {
                Ok(Plane { n, h, w })
            }
            other => Err(Error::Shape(format!(
                "input {other:?}, expected [N, {}, {}, {}]",
                c.in_channels, c.height, c.width
            ))),
        }
    }

    fn forward_impl(&self, x: &Tensor, mode: Mode) -> Result<(Logits, ForwardCache)> {
        let p = self.check_input(x)?;
        let (c0, c1, c2) = (self.config.in_channels, self.config.conv1_channels, self.config.conv2_channels);
        let m = p.m();

        let cols1 = im2col(&to_channel_major(x.data(), c0, p), c0, p);
        let z1 = self.conv1.forward(&cols1, p);
        let (mut a1, bn1) = match mode {
            Mode::Train => {
                let (y, c) = self.bn1.forward_train(&z1, m);
                (y, Some(c))
            }
            Mode::Eval => (self.bn1.forward_eval(&z1, m), None),
        };
        relu_inplace(&mut a1);

        let cols2 = im2col(&a1, c1, p);
        let z2 = self.conv2.forward(&cols2, p);
        let (mut a2, bn2) = match mode {
            Mode::Train => {
                let (y, c) = self.bn2.forward_train(&z2, m);
                (y, Some(c))
            }
            Mode::Eval => (self.bn2.forward_eval(&z2, m), None),
        };
        relu_inplace(&mut a2);

        let feat = flatten(&a2, c2, p);
        let (angle, angle_inputs) = self.angle_head.forward(&feat, p.n);
        let (position, pos_inputs) = self.pos_head.forward(&feat, p.n);
        let logits = Logits {
            angle: Tensor::from_vec(&[p.n, ANGLE_CLASSES], angle)?,
            position: Tensor::from_vec(&[p.n, POSITION_CLASSES], position)?,
        };
        let cache = ForwardCache { plane: p, cols1, bn1, a1, cols2, bn2, a2, angle_inputs, pos_inputs };
        Ok((logits, cache))
    }

    /// Runs the network. Training mode normalizes with batch statistics and
    /// folds them into the running estimates; evaluation mode uses the
    /// running estimates and leaves the parameters untouched.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Logits> {
        match mode {
            Mode::Eval => self.forward_eval(x),
            Mode::Train => self.forward_train(x).map(|(l, _)| l),
        }
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Logits> {
        self.forward_impl(x, Mode::Eval).map(|(l, _)| l)
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<(Logits, ForwardCache)> {
        let (logits, cache) = self.forward_impl(x, Mode::Train)?;
        let m = cache.plane.m();
        self.bn1.update_running(cache.bn1.as_ref().expect("train cache"), m);
        self.bn2.update_running(cache.bn2.as_ref().expect("train cache"), m);
        Ok((logits, cache))
    }

    /// Training-mode forward that leaves the running statistics alone.
    pub fn forward_train_pure(&self, x: &Tensor) -> Result<(Logits, ForwardCache)> {
        self.forward_impl(x, Mode::Train)
    }

    /// Backpropagates logit gradients through a training-mode cache.
    pub fn backward(&self, cache: &ForwardCache, d_angle: &Tensor, d_pos: &Tensor) -> Gradients {
        let mut g = self.zero_gradients();
        let p = cache.plane;
        let (c1, c2) = (self.config.conv1_channels, self.config.conv2_channels);
        let m = p.m();
        let n_angle = 2 * self.angle_head.layers.len();

        let (backbone, heads) = g.tensors.split_at_mut(8);
        let (ga, gp) = heads.split_at_mut(n_angle);
        let mut dfeat = self.angle_head.backward(&cache.angle_inputs, d_angle.data(), p.n, ga);
        let dfeat_pos = self.pos_head.backward(&cache.pos_inputs, d_pos.data(), p.n, gp);
        for (a, b) in dfeat.iter_mut().zip(dfeat_pos) {
            *a += b;
        }

        let [dw1, db1, dgamma1, dbeta1, dw2, db2, dgamma2, dbeta2] = backbone else {
            unreachable!("backbone has eight trainable tensors")
        };
        let bn1_cache = cache.bn1.as_ref().expect("backward needs a training-mode cache");
        let bn2_cache = cache.bn2.as_ref().expect("backward needs a training-mode cache");

        let mut da2 = unflatten(&dfeat, c2, p);
        relu_backward(&cache.a2, &mut da2);
        let dz2 = self.bn2.backward(bn2_cache, &da2, m, dgamma2, dbeta2);
        let dcols2 = self
            .conv2
            .backward(&cache.cols2, &dz2, p, dw2, db2, true)
            .expect("input grad requested");
        let mut da1 = col2im(&dcols2, c1, p);
        relu_backward(&cache.a1, &mut da1);
        let dz1 = self.bn1.backward(bn1_cache, &da1, m, dgamma1, dbeta1);
        self.conv1.backward(&cache.cols1, &dz1, p, dw1, db1, false);
        g
    }

    pub fn predict(&self, frame: &TactileFrame) -> Result<(AngleClass, PositionClass)> {
        let logits = self.forward_eval(&frames_to_tensor(&[frame]))?;
        let a = argmax(logits.angle.row(0));
        let p = argmax(logits.position.row(0));
        Ok((AngleClass::from_index(a)?, PositionClass::from_index(p)?))
    }
}

/// `[C, N·HW]` → `[N, C·HW]`, channel-major within each sample.
fn flatten(a: &[f64], c: usize, p: Plane) -> Vec<f64> {
    let (hw, m) = (p.hw(), p.m());
    let mut out = vec![0.0; p.n * c * hw];
    for n in 0..p.n {
        for ch in 0..c {
            out[(n * c + ch) * hw..(n * c + ch + 1) * hw]
                .copy_from_slice(&a[ch * m + n * hw..ch * m + (n + 1) * hw]);
        }
    }
    out
}

fn unflatten(f: &[f64], c: usize, p: Plane) -> Vec<f64> {
    let (hw, m) = (p.hw(), p.m());
    let mut out = vec![0.0; c * m];
    for n in 0..p.n {
        for ch in 0..c {
            out[ch * m + n * hw..ch * m + (n + 1) * hw]
                .copy_from_slice(&f[(n * c + ch) * hw..(n * c + ch + 1) * hw]);
        }
    }
    out
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Stacks frames into `[N, 2, 10, 10]`, forces scaled into `[0, 1]`.
pub fn frames_to_tensor(frames: &[&TactileFrame]) -> Tensor {
    let mut data = Vec::with_capacity(frames.len() * 200);
    for f in frames {
        data.extend(f.finger_a.iter().map(|v| v / MAX_FORCE));
        data.extend(f.finger_b.iter().map(|v| v / MAX_FORCE));
    }
    Tensor::from_vec(&[frames.len(), 2, SENSOR_SIZE, SENSOR_SIZE], data).expect("frame tensor shape")
}
