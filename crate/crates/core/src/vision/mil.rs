//! Multiple-instance bag classification.
//!
//! Every patch in a bag goes through the shared encoder; the hidden vectors
//! are pooled element-wise (mean or max) and a linear head classifies the
//! pooled vector. The label belongs to the bag, not to any one patch.

use image::RgbImage;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::encoder::{EncoderConfig, PatchEncoder};
use super::patch::{extract_patch, sample_random_patches, squarify, Patch, DEFAULT_SIDE_RANGE};
use crate::error::{Error, Result};
use crate::geom::PixelBox;
use crate::mlp::{scheduled_lr, Dense, HeadKind, RankedLabel, Sgd, StepSchedule, Target};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Mean,
    Max,
}

/// Element-wise mean or max over the bag. Max ties resolve to the first patch.
///
/// The mean sums each unit's values in sorted order with a pairwise tree, so
/// it is exactly invariant to patch order, and duplicating the whole bag
/// doubles every partial sum exactly.
pub fn aggregate_bag(hidden: &[Vec<f64>], mode: Aggregation) -> Result<Vec<f64>> {
    let first = hidden.first().ok_or(Error::EmptyBag)?;
    if let Some(h) = hidden.iter().find(|h| h.len() != first.len()) {
        return Err(Error::DimensionMismatch {
            expected: first.len(),
            got: h.len(),
        });
    }
    Ok(match mode {
        Aggregation::Max => {
            let mut acc = first.clone();
            for h in &hidden[1..] {
                acc.iter_mut().zip(h).for_each(|(a, v)| {
                    if *v > *a {
                        *a = *v
                    }
                });
            }
            acc
        }
        Aggregation::Mean => {
            let n = hidden.len() as f64;
            let mut column = Vec::with_capacity(hidden.len());
            (0..first.len())
                .map(|j| {
                    column.clear();
                    column.extend(hidden.iter().map(|h| h[j]));
                    column.sort_by(f64::total_cmp);
                    pairwise_sum(&mut column) / n
                })
                .collect()
        }
    })
}

/// Sums adjacent pairs level by level; consumes `values`.
fn pairwise_sum(values: &mut Vec<f64>) -> f64 {
    while values.len() > 1 {
        let half = values.len().div_ceil(2);
        for i in 0..half {
            values[i] = match values.get(2 * i + 1) {
                Some(&b) => values[2 * i] + b,
                None => values[2 * i],
            };
        }
        values.truncate(half);
    }
    values[0]
}

/// Encoder plus classification head.
#[derive(Debug, Clone, PartialEq)]
pub struct VisionModel {
    pub encoder: PatchEncoder,
    pub head: Dense,
    pub head_kind: HeadKind,
    pub labels: Vec<String>,
    pub aggregation: Aggregation,
}

/// Gradients shaped like a [`VisionModel`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct VisionGrads {
    pub encoder: PatchEncoder,
    pub head: Dense,
}

impl VisionGrads {
    fn zeros_like(model: &VisionModel) -> Self {
        VisionGrads {
            encoder: model.encoder.zeros_like(),
            head: Dense::zeros(model.head.inputs, model.head.outputs),
        }
    }

    fn add_assign(&mut self, other: &VisionGrads) {
        self.encoder.add_assign(&other.encoder);
        self.head.add_assign(&other.head);
    }

    fn scale(&mut self, factor: f64) {
        self.encoder.scale(factor);
        self.head.scale(factor);
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut s = self.encoder.slices().to_vec();
        s.push(&self.head.weight);
        s.push(&self.head.bias);
        s
    }
}

impl VisionModel {
    pub fn init(
        config: EncoderConfig,
        labels: Vec<String>,
        head_kind: HeadKind,
        aggregation: Aggregation,
        seed: u64,
    ) -> Result<Self> {
        let encoder = PatchEncoder::init(config, seed::derive(seed, "encoder"))?;
        let mut rng = seed::rng(seed::derive(seed, "head"));
        let head = Dense::xavier(config.hidden, labels.len(), &mut rng);
        Ok(VisionModel {
            encoder,
            head,
            head_kind,
            labels,
            aggregation,
        })
    }

    pub fn patch_size(&self) -> usize {
        self.encoder.config.patch_size
    }

    pub fn label_index(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    /// Encoder output for every patch, in order.
    pub fn encode_all(&self, patches: &[Patch]) -> Result<Vec<Vec<f64>>> {
        patches.par_iter().map(|p| self.encoder.encode(&p.pixels)).collect()
    }

    pub fn predict_hidden(&self, hidden: &[Vec<f64>]) -> Result<Vec<f64>> {
        let pooled = aggregate_bag(hidden, self.aggregation)?;
        if pooled.len() != self.head.inputs {
            return Err(Error::DimensionMismatch {
                expected: self.head.inputs,
                got: pooled.len(),
            });
        }
        Ok(self.head_kind.activate(&self.head.forward(&pooled)))
    }

    /// Label distribution for a bag of patches.
    pub fn predict_bag(&self, patches: &[Patch]) -> Result<Vec<f64>> {
        if patches.is_empty() {
            return Err(Error::EmptyBag);
        }
        self.predict_hidden(&self.encode_all(patches)?)
    }

    pub fn rank_bag(&self, patches: &[Patch], k: usize) -> Result<Vec<RankedLabel>> {
        let scores = self.predict_bag(patches)?;
        Ok(crate::mlp::rank_scores(&scores, &self.labels, self.head_kind, k))
    }

    /// Confidence of `label` for the singleton bag `{patch}`.
    pub fn score_patch(&self, patch: &Patch, label: &str) -> Result<f64> {
        let idx = self.label_index(label)?;
        let hidden = self.encoder.encode(&patch.pixels)?;
        Ok(self.score_hidden(&hidden, idx))
    }

    /// Singleton-bag confidence from an already encoded patch. Aggregating
    /// one vector is the identity in both modes.
    pub fn score_hidden(&self, hidden: &[f64], label_index: usize) -> f64 {
        match self.head_kind {
            HeadKind::Sigmoid => {
                let mut z = self.head.bias[label_index];
                for (h, row) in hidden.iter().zip(self.head.weight.chunks_exact(self.head.outputs)) {
                    z += h * row[label_index];
                }
                crate::mlp::sigmoid(z)
            }
            HeadKind::Softmax => self.head_kind.activate(&self.head.forward(hidden))[label_index],
        }
    }

    /// Loss and gradients for one bag. Mean pooling spreads ∂L/∂pooled
    /// evenly over patches; max pooling routes each unit's gradient to the
    /// first patch holding the maximum.
    pub fn bag_grad(&self, patches: &[Patch], target: &Target) -> Result<(f64, VisionGrads)> {
        let mut grads = VisionGrads::zeros_like(self);
        let loss = self.accumulate_bag_grad(patches, target, &mut grads)?;
        Ok((loss, grads))
    }

    fn accumulate_bag_grad(&self, patches: &[Patch], target: &Target, grads: &mut VisionGrads) -> Result<f64> {
        if patches.is_empty() {
            return Err(Error::EmptyBag);
        }
        let traces = patches
            .iter()
            .map(|p| self.encoder.trace(&p.pixels))
            .collect::<Result<Vec<_>>>()?;
        let hidden: Vec<Vec<f64>> = traces.iter().map(|t| t.hidden.clone()).collect();
        let pooled = aggregate_bag(&hidden, self.aggregation)?;
        let logits = self.head.forward(&pooled);
        let (loss, d_logits) = self.head_kind.loss_and_grad(&logits, target)?;
        let d_pooled = self.head.backward(&pooled, &d_logits, &mut grads.head);

        let n = patches.len();
        let dim = d_pooled.len();
        let mut d_hidden = vec![vec![0.0; dim]; n];
        match self.aggregation {
            Aggregation::Mean => {
                for d in &mut d_hidden {
                    for (di, dp) in d.iter_mut().zip(&d_pooled) {
                        *di = dp / n as f64;
                    }
                }
            }
            Aggregation::Max => {
                for j in 0..dim {
                    let mut best = 0;
                    for b in 1..n {
                        if hidden[b][j] > hidden[best][j] {
                            best = b;
                        }
                    }
                    d_hidden[best][j] = d_pooled[j];
                }
            }
        }
        for ((patch, trace), d) in patches.iter().zip(&traces).zip(&d_hidden) {
            if d.iter().any(|v| *v != 0.0) {
                self.encoder.backward(&patch.pixels, trace, d, &mut grads.encoder);
            }
        }
        Ok(loss)
    }

    /// Mean loss and gradient over bags, reduced in a fixed order.
    pub fn batch_grad(&self, bags: &[(Vec<Patch>, &Target)]) -> Result<(f64, VisionGrads)> {
        let partials: Vec<Result<(f64, VisionGrads)>> = bags
            .par_iter()
            .map(|(patches, target)| self.bag_grad(patches, target))
            .collect();
        let mut total = VisionGrads::zeros_like(self);
        let mut loss = 0.0;
        for p in partials {
            let (l, g) = p?;
            loss += l;
            total.add_assign(&g);
        }
        let inv = 1.0 / bags.len().max(1) as f64;
        total.scale(inv);
        Ok((loss * inv, total))
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut s: Vec<&mut [f64]> = self.encoder.slices_mut().into_iter().collect();
        s.push(&mut self.head.weight);
        s.push(&mut self.head.bias);
        s
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut s = self.encoder.slices().to_vec();
        s.push(&self.head.weight);
        s.push(&self.head.bias);
        s
    }

    pub fn round_to_f32(&mut self) {
        self.encoder.round_to_f32();
        self.head.round_to_f32();
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampler {
    /// Fresh random crops every epoch.
    Random,
    /// Fixed bags built from squarified proposal boxes.
    Proposals,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisionTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub bag_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Period counted in epochs.
    pub lr_schedule: Option<StepSchedule>,
    pub side_range: (f64, f64),
    pub sampler: Sampler,
    pub seed: u64,
}

impl Default for VisionTrainConfig {
    fn default() -> Self {
        VisionTrainConfig {
            epochs: 5,
            batch_size: 20,
            bag_size: 5,
            lr: 1e-2,
            momentum: 0.9,
            weight_decay: 1e-4,
            lr_schedule: Some(StepSchedule { factor: 0.5, period: 1 }),
            side_range: DEFAULT_SIDE_RANGE,
            sampler: Sampler::Random,
            seed: 0,
        }
    }
}

/// One training image with its bag label.
#[derive(Debug, Clone)]
pub struct VisionExample {
    pub image: RgbImage,
    pub target: Target,
    /// Proposal boxes, best first; used only by [`Sampler::Proposals`].
    pub proposals: Vec<PixelBox>,
}

#[derive(Debug, Clone)]
pub struct TrainedVision {
    pub model: VisionModel,
    /// Mean bag loss per epoch.
    pub epoch_loss: Vec<f64>,
}

/// The bag used for `example` in `epoch`.
pub fn training_bag(
    example: &VisionExample,
    index: usize,
    epoch: usize,
    patch_size: usize,
    config: &VisionTrainConfig,
) -> Result<Vec<Patch>> {
    match config.sampler {
        Sampler::Random => {
            let s = seed::derive_indexed(seed::derive_indexed(config.seed, "bag-epoch", epoch as u64), "bag", index as u64);
            sample_random_patches(&example.image, config.bag_size, config.side_range, patch_size, s)
        }
        Sampler::Proposals => {
            let (w, h) = example.image.dimensions();
            let bag: Vec<Patch> = example
                .proposals
                .iter()
                .take(config.bag_size)
                .map(|b| extract_patch(&example.image, &squarify(b, w, h), patch_size))
                .collect();
            if bag.is_empty() {
                return Err(Error::EmptyBag);
            }
            Ok(bag)
        }
    }
}

/// Mini-batch SGD over bags, end to end through the encoder. Weights are
/// rounded to single precision at the end.
pub fn train_vision(
    initial: VisionModel,
    data: &[VisionExample],
    config: &VisionTrainConfig,
) -> Result<TrainedVision> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if config.batch_size == 0 || config.bag_size == 0 || config.epochs == 0 {
        return Err(Error::Config("epochs, batch size and bag size must be positive".into()));
    }
    let mut model = initial;
    let patch_size = model.patch_size();
    let mut opt = Sgd::new(config.momentum, config.weight_decay);
    let mut rng = seed::rng(seed::derive(config.seed, "vision-order"));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_loss = Vec::with_capacity(config.epochs);
    let mut step = 0usize;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let lr = scheduled_lr(config.lr, config.lr_schedule, epoch);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let bags = chunk
                .iter()
                .map(|&i| Ok((training_bag(&data[i], i, epoch, patch_size, config)?, &data[i].target)))
                .collect::<Result<Vec<_>>>()?;
            let (loss, grads) = model.batch_grad(&bags)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { iteration: step });
            }
            total += loss * chunk.len() as f64;
            opt.step(lr, &mut model.slices_mut(), &grads.slices());
            step += 1;
        }
        epoch_loss.push(total / data.len() as f64);
    }
    if !model.is_finite() {
        return Err(Error::NonFiniteLoss { iteration: step });
    }
    model.round_to_f32();
    Ok(TrainedVision { model, epoch_loss })
}
