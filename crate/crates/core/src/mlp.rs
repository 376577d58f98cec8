//! Single-hidden-layer network: linear → ReLU → linear → softmax or sigmoid.
//!
//! Forward, backward and SGD are written out by hand in double precision.
//! The dense layer and the optimizer are shared with the vision model.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Label reserved at index 0 of every softmax (category) head.
pub const BACKGROUND_LABEL: &str = "__background__";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    /// Single-label; index 0 is the background class.
    Softmax,
    /// Multi-label, one independent sigmoid per output.
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Class(usize),
    /// 0/1 indicator per output.
    Multi(Vec<f64>),
}

/// Fully connected layer. `weight` is `inputs × outputs`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Uniform in ±√(6 / (fan_in + fan_out)); biases start at zero.
    pub fn xavier(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        Self::uniform(inputs, outputs, (6.0 / (inputs + outputs) as f64).sqrt(), rng)
    }

    /// Uniform in `±√(6 / fan_in)`, for layers feeding a ReLU.
    pub fn he(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        Self::uniform(inputs, outputs, (6.0 / inputs as f64).sqrt(), rng)
    }

    fn uniform(inputs: usize, outputs: usize, limit: f64, rng: &mut impl Rng) -> Self {
        let weight = (0..inputs * outputs)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Dense {
            inputs,
            outputs,
            weight,
            bias: vec![0.0; outputs],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.bias.clone();
        for (xi, row) in x.iter().zip(self.weight.chunks_exact(self.outputs)) {
            if *xi == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(row) {
                *o += xi * w;
            }
        }
        out
    }

    /// Accumulates parameter gradients for one input and returns ∂L/∂x.
    pub fn backward(&self, x: &[f64], d_out: &[f64], grad: &mut Dense) -> Vec<f64> {
        let mut d_x = vec![0.0; self.inputs];
        for (i, (xi, row)) in x.iter().zip(self.weight.chunks_exact(self.outputs)).enumerate() {
            let g_row = &mut grad.weight[i * self.outputs..(i + 1) * self.outputs];
            let mut acc = 0.0;
            for ((g, w), d) in g_row.iter_mut().zip(row).zip(d_out) {
                *g += xi * d;
                acc += w * d;
            }
            d_x[i] = acc;
        }
        for (g, d) in grad.bias.iter_mut().zip(d_out) {
            *g += d;
        }
        d_x
    }

    pub fn add_assign(&mut self, other: &Dense) {
        add_into(&mut self.weight, &other.weight);
        add_into(&mut self.bias, &other.bias);
    }

    pub fn scale(&mut self, factor: f64) {
        self.weight.iter_mut().chain(self.bias.iter_mut()).for_each(|v| *v *= factor);
    }

    pub fn round_to_f32(&mut self) {
        round_to_f32(&mut self.weight);
        round_to_f32(&mut self.bias);
    }
}

pub(crate) fn add_into(acc: &mut [f64], other: &[f64]) {
    for (a, b) in acc.iter_mut().zip(other) {
        *a += b;
    }
}

pub(crate) fn round_to_f32(values: &mut [f64]) {
    values.iter_mut().for_each(|v| *v = *v as f32 as f64);
}

pub fn relu(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl HeadKind {
    pub fn activate(self, logits: &[f64]) -> Vec<f64> {
        match self {
            HeadKind::Softmax => softmax(logits),
            HeadKind::Sigmoid => logits.iter().map(|&z| sigmoid(z)).collect(),
        }
    }

    /// Loss and ∂loss/∂logits. Softmax uses cross-entropy; sigmoid uses
    /// binary cross-entropy averaged over outputs.
    pub fn loss_and_grad(self, logits: &[f64], target: &Target) -> Result<(f64, Vec<f64>)> {
        let n = logits.len();
        match (self, target) {
            (HeadKind::Softmax, Target::Class(c)) => {
                if *c >= n {
                    return Err(Error::DimensionMismatch { expected: n, got: c + 1 });
                }
                let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
                let mut d = softmax(logits);
                d[*c] -= 1.0;
                Ok((lse - logits[*c], d))
            }
            (HeadKind::Sigmoid, Target::Multi(t)) => {
                if t.len() != n {
                    return Err(Error::DimensionMismatch { expected: n, got: t.len() });
                }
                let inv = 1.0 / n as f64;
                let mut loss = 0.0;
                let mut d = Vec::with_capacity(n);
                for (&z, &ti) in logits.iter().zip(t) {
                    loss += z.max(0.0) - z * ti + (-z.abs()).exp().ln_1p();
                    d.push((sigmoid(z) - ti) * inv);
                }
                Ok((loss * inv, d))
            }
            (HeadKind::Softmax, Target::Multi(_)) => Err(Error::Config(
                "softmax head needs a class index target".into(),
            )),
            (HeadKind::Sigmoid, Target::Class(_)) => Err(Error::Config(
                "sigmoid head needs a 0/1 vector target".into(),
            )),
        }
    }

    /// Softmax heads keep index 0 out of rankings.
    pub fn first_ranked_index(self) -> usize {
        match self {
            HeadKind::Softmax => 1,
            HeadKind::Sigmoid => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedLabel {
    pub index: usize,
    pub label: String,
    pub score: f64,
}

/// Descending score, ties by ascending index, starting from `head`'s first
/// rankable index.
pub fn rank_scores(scores: &[f64], labels: &[String], head: HeadKind, k: usize) -> Vec<RankedLabel> {
    let mut order: Vec<usize> = (head.first_ranked_index()..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
        .into_iter()
        .take(k)
        .map(|i| RankedLabel {
            index: i,
            label: labels[i].clone(),
            score: scores[i],
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub hidden: Dense,
    pub output: Dense,
    pub head: HeadKind,
    pub labels: Vec<String>,
}

/// Gradients, shaped like the model's two layers.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub hidden: Dense,
    pub output: Dense,
}

impl MlpGrads {
    pub fn zeros_like(model: &MlpModel) -> Self {
        MlpGrads {
            hidden: Dense::zeros(model.d_in(), model.d_hidden()),
            output: Dense::zeros(model.d_hidden(), model.d_out()),
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        self.hidden.add_assign(&other.hidden);
        self.output.add_assign(&other.output);
    }

    pub fn scale(&mut self, factor: f64) {
        self.hidden.scale(factor);
        self.output.scale(factor);
    }

    /// W1, b1, W2, b2.
    pub fn slices(&self) -> [&[f64]; 4] {
        [
            &self.hidden.weight,
            &self.hidden.bias,
            &self.output.weight,
            &self.output.bias,
        ]
    }
}

impl MlpModel {
    pub fn zeros(d_in: usize, d_hidden: usize, labels: Vec<String>, head: HeadKind) -> Self {
        MlpModel {
            hidden: Dense::zeros(d_in, d_hidden),
            output: Dense::zeros(d_hidden, labels.len()),
            head,
            labels,
        }
    }

    pub fn init(d_in: usize, d_hidden: usize, labels: Vec<String>, head: HeadKind, seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        let hidden = Dense::xavier(d_in, d_hidden, &mut rng);
        let output = Dense::xavier(d_hidden, labels.len(), &mut rng);
        MlpModel {
            hidden,
            output,
            head,
            labels,
        }
    }

    pub fn d_in(&self) -> usize {
        self.hidden.inputs
    }

    pub fn d_hidden(&self) -> usize {
        self.hidden.outputs
    }

    pub fn d_out(&self) -> usize {
        self.output.outputs
    }

    /// W1, b1, W2, b2.
    pub fn slices(&self) -> [&[f64]; 4] {
        [
            &self.hidden.weight,
            &self.hidden.bias,
            &self.output.weight,
            &self.output.bias,
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 4] {
        [
            &mut self.hidden.weight,
            &mut self.hidden.bias,
            &mut self.output.weight,
            &mut self.output.bias,
        ]
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d_in() {
            return Err(Error::DimensionMismatch {
                expected: self.d_in(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut h = self.hidden.forward(x);
        relu(&mut h);
        Ok(self.output.forward(&h))
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.head.activate(&self.logits(x)?))
    }

    pub fn loss(&self, x: &[f64], target: &Target) -> Result<f64> {
        let logits = self.logits(x)?;
        Ok(self.head.loss_and_grad(&logits, target)?.0)
    }

    /// Loss and parameter gradients for one sample.
    pub fn grad(&self, x: &[f64], target: &Target) -> Result<(f64, MlpGrads)> {
        let mut grads = MlpGrads::zeros_like(self);
        let loss = self.accumulate_grad(x, target, &mut grads)?;
        Ok((loss, grads))
    }

    fn accumulate_grad(&self, x: &[f64], target: &Target, grads: &mut MlpGrads) -> Result<f64> {
        self.check_input(x)?;
        let pre = self.hidden.forward(x);
        let mut h = pre.clone();
        relu(&mut h);
        let logits = self.output.forward(&h);
        let (loss, d_logits) = self.head.loss_and_grad(&logits, target)?;
        let mut d_h = self.output.backward(&h, &d_logits, &mut grads.output);
        for (d, p) in d_h.iter_mut().zip(&pre) {
            if *p <= 0.0 {
                *d = 0.0;
            }
        }
        self.hidden.backward(x, &d_h, &mut grads.hidden);
        Ok(loss)
    }

    /// Mean loss and mean gradient over a batch. Samples are reduced in
    /// fixed-size chunks, and chunk partials are summed in order, so the
    /// result does not depend on the thread count.
    pub fn batch_grad(&self, batch: &[(&[f64], &Target)]) -> Result<(f64, MlpGrads)> {
        const CHUNK: usize = 32;
        let partials: Vec<Result<(f64, MlpGrads)>> = batch
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut grads = MlpGrads::zeros_like(self);
                let mut loss = 0.0;
                for (x, t) in chunk {
                    loss += self.accumulate_grad(x, t, &mut grads)?;
                }
                Ok((loss, grads))
            })
            .collect();
        let mut total = MlpGrads::zeros_like(self);
        let mut loss = 0.0;
        for partial in partials {
            let (l, g) = partial?;
            loss += l;
            total.add_assign(&g);
        }
        let inv = 1.0 / batch.len().max(1) as f64;
        total.scale(inv);
        Ok((loss * inv, total))
    }

    pub fn predict_topk(&self, x: &[f64], k: usize) -> Result<Vec<RankedLabel>> {
        let y = self.forward(x)?;
        Ok(rank_scores(&y, &self.labels, self.head, k))
    }

    pub fn round_to_f32(&mut self) {
        self.hidden.round_to_f32();
        self.output.round_to_f32();
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

/// SGD with optional momentum and L2 weight decay:
/// `v ← μ·v + (g + λ·w)`, `w ← w − lr·v`.
#[derive(Debug, Clone, Default)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, lr: f64, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        if self.velocity.len() != params.len() {
            self.velocity = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            for ((w, gi), vi) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
                *vi = self.momentum * *vi + (gi + self.weight_decay * *w);
                *w -= lr * *vi;
            }
        }
    }
}

/// Multiply the learning rate by `factor` every `period` steps (or epochs).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub factor: f64,
    pub period: usize,
}

pub fn scheduled_lr(base: f64, schedule: Option<StepSchedule>, step: usize) -> f64 {
    match schedule {
        Some(s) if s.period > 0 => base * s.factor.powi((step / s.period) as i32),
        _ => base,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Batch {
    Full,
    Size(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch: Batch,
    pub seed: u64,
    pub lr_schedule: Option<StepSchedule>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 20_000,
            lr: 1e-3,
            momentum: 0.0,
            weight_decay: 0.0,
            batch: Batch::Full,
            seed: 0,
            lr_schedule: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be finite and >= 0, got {}", self.lr)));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if let Batch::Size(0) = self.batch {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: MlpModel,
    /// Mean batch loss at each iteration, before that iteration's update.
    pub loss_curve: Vec<f64>,
}

/// Runs SGD from `initial`. Weights are rounded to single precision at the
/// end so a saved checkpoint reproduces the returned model exactly.
pub fn train(initial: MlpModel, data: &[(Vec<f64>, Target)], config: &TrainConfig) -> Result<Trained> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut model = initial;
    let mut opt = Sgd::new(config.momentum, config.weight_decay);
    let mut rng = seed::rng(seed::derive(config.seed, "mlp-batches"));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = data.len();
    let mut loss_curve = Vec::with_capacity(config.iterations);

    for it in 0..config.iterations {
        let batch: Vec<(&[f64], &Target)> = match config.batch {
            Batch::Full => data.iter().map(|(x, t)| (x.as_slice(), t)).collect(),
            Batch::Size(n) => {
                let mut picked = Vec::with_capacity(n);
                while picked.len() < n.min(data.len()) {
                    if cursor == order.len() {
                        order.shuffle(&mut rng);
                        cursor = 0;
                    }
                    let (x, t) = &data[order[cursor]];
                    picked.push((x.as_slice(), t));
                    cursor += 1;
                }
                picked
            }
        };
        let (loss, grads) = model.batch_grad(&batch)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: it });
        }
        loss_curve.push(loss);
        let lr = scheduled_lr(config.lr, config.lr_schedule, it);
        opt.step(lr, &mut model.slices_mut(), &grads.slices());
    }
    if !model.is_finite() {
        return Err(Error::NonFiniteLoss {
            iteration: config.iterations,
        });
    }
    model.round_to_f32();
    Ok(Trained { model, loss_curve })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("l{i}")).collect()
    }

    /// 2-2-2 network with hand-set weights.
    fn tiny(head: HeadKind) -> MlpModel {
        MlpModel {
            hidden: Dense {
                inputs: 2,
                outputs: 2,
                weight: vec![1.0, -1.0, 2.0, 0.5],
                bias: vec![0.0, -0.25],
            },
            output: Dense {
                inputs: 2,
                outputs: 2,
                weight: vec![1.0, 0.0, -1.0, 2.0],
                bias: vec![0.1, -0.1],
            },
            head,
            labels: labels(2),
        }
    }

    #[test]
    fn zero_weights_give_uniform_outputs() {
        let m = MlpModel::zeros(3, 4, labels(4), HeadKind::Softmax);
        assert_eq!(m.forward(&[1.0, 2.0, 3.0]).unwrap(), vec![0.25; 4]);
        let m = MlpModel::zeros(3, 4, labels(5), HeadKind::Sigmoid);
        assert_eq!(m.forward(&[1.0, 2.0, 3.0]).unwrap(), vec![0.5; 5]);
        assert!(matches!(m.forward(&[1.0]), Err(Error::DimensionMismatch { expected: 3, got: 1 })));
    }

    #[test]
    fn hand_computed_forward() {
        // x = (1, 2): pre = (1·1 + 2·2 + 0, 1·-1 + 2·0.5 - 0.25) = (5, -0.25)
        // relu → (5, 0); logits = (5·1 + 0.1, 5·0 - 0.1) = (5.1, -0.1)
        let m = tiny(HeadKind::Sigmoid);
        let y = m.forward(&[1.0, 2.0]).unwrap();
        assert_relative_eq!(y[0], 1.0 / (1.0 + (-5.1f64).exp()), epsilon = 1e-15);
        assert_relative_eq!(y[1], 1.0 / (1.0 + (0.1f64).exp()), epsilon = 1e-15);

        let m = tiny(HeadKind::Softmax);
        let y = m.forward(&[1.0, 2.0]).unwrap();
        let z = (5.1f64).exp() + (-0.1f64).exp();
        assert_relative_eq!(y[0], (5.1f64).exp() / z, epsilon = 1e-15);
        assert_relative_eq!(y[1], (-0.1f64).exp() / z, epsilon = 1e-15);
    }

    #[test]
    fn loss_values() {
        let m = MlpModel::zeros(2, 3, labels(4), HeadKind::Sigmoid);
        let t = Target::Multi(vec![1.0, 0.0, 1.0, 1.0]);
        assert_relative_eq!(m.loss(&[0.3, 0.1], &t).unwrap(), std::f64::consts::LN_2, epsilon = 1e-15);

        let (ce, _) = HeadKind::Softmax
            .loss_and_grad(&[-40.0, 40.0, -40.0], &Target::Class(1))
            .unwrap();
        assert!((0.0..1e-30).contains(&ce));
    }

    #[test]
    fn loss_matches_scalar_formula() {
        let m = MlpModel::init(3, 4, labels(3), HeadKind::Sigmoid, 11);
        let x = [0.4, -1.2, 0.7];
        let t = [1.0, 0.0, 1.0];
        let y = m.forward(&x).unwrap();
        let expected = -(0..3)
            .map(|i| t[i] * y[i].ln() + (1.0 - t[i]) * (1.0 - y[i]).ln())
            .sum::<f64>()
            / 3.0;
        assert_relative_eq!(m.loss(&x, &Target::Multi(t.to_vec())).unwrap(), expected, epsilon = 1e-12);

        let m = MlpModel::init(3, 4, labels(3), HeadKind::Softmax, 12);
        let y = m.forward(&x).unwrap();
        assert_relative_eq!(m.loss(&x, &Target::Class(2)).unwrap(), -y[2].ln(), epsilon = 1e-12);
    }

    #[test]
    fn zero_input_has_zero_first_layer_weight_gradient() {
        let m = MlpModel::init(4, 5, labels(3), HeadKind::Softmax, 3);
        let (_, g) = m.grad(&[0.0; 4], &Target::Class(1)).unwrap();
        assert!(g.hidden.weight.iter().all(|&v| v == 0.0));
        // b1 = 0, so every hidden unit is inactive and nothing reaches b1.
        assert!(g.hidden.bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicated_sample_has_the_same_mean_gradient() {
        let m = MlpModel::init(3, 4, labels(3), HeadKind::Softmax, 5);
        let x = vec![0.5, -0.25, 1.0];
        let t = Target::Class(2);
        let (l1, g1) = m.batch_grad(&[(&x, &t)]).unwrap();
        let (l2, g2) = m.batch_grad(&[(&x, &t), (&x, &t)]).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(g1, g2);
    }

    #[test]
    fn topk_tie_break_and_background() {
        let m = MlpModel::zeros(2, 2, labels(5), HeadKind::Softmax);
        let top: Vec<usize> = m.predict_topk(&[0.0, 0.0], 3).unwrap().iter().map(|r| r.index).collect();
        assert_eq!(top, vec![1, 2, 3]);
        let all = m.predict_topk(&[0.0, 0.0], 4).unwrap();
        assert_eq!(all.len(), 4);

        let r = rank_scores(&[0.1, 0.7, 0.2], &labels(3), HeadKind::Sigmoid, 1);
        assert_eq!(r[0].label, "l1");
    }

    #[test]
    fn weight_decay_shrinks_weights() {
        let mut w = vec![1.0, -2.0, 0.5];
        let mut opt = Sgd::new(0.9, 0.5);
        opt.step(0.5, &mut [&mut w], &[&[0.0, 0.0, 0.0]]);
        assert_eq!(w, vec![0.75, -1.5, 0.375]);
    }

    #[test]
    fn lr_schedule_steps() {
        let s = Some(StepSchedule { factor: 0.1, period: 50 });
        assert_eq!(scheduled_lr(1.0, s, 49), 1.0);
        assert_relative_eq!(scheduled_lr(1.0, s, 50), 0.1);
        assert_relative_eq!(scheduled_lr(1.0, s, 120), 0.01, epsilon = 1e-15);
    }
}
