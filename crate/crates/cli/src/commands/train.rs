use std::io::Write;

use rayon::prelude::*;
use vishash::checkpoint;
use vishash::corpus::InfographicRecord;
use vishash::mlp::{self, Batch, HeadKind, MlpModel, StepSchedule, Target, TrainConfig};
use vishash::seed;
use vishash::text::{embed_mean, tokenize_clean, EmbeddingTable};
use vishash::vision::mil::{self, Aggregation, Sampler, VisionExample, VisionModel, VisionTrainConfig};
use vishash::vision::EncoderConfig;
use vishash::{Error, Result};

use super::data::{
    category_labels, category_target, load_box_lists, load_image, load_records, say, schedule, side_range,
    tag_labels, tag_target, write_text,
};
use crate::cli::{AggregationArg, Head, SamplerArg, TrainTextArgs, TrainVisionArgs};

/// Labels, head kind and per-record targets for `head`.
fn targets(
    head: Head,
    vocab: Option<&std::path::PathBuf>,
    records: &[InfographicRecord],
) -> Result<(Vec<String>, HeadKind, Vec<Target>)> {
    match head {
        Head::Category => {
            let labels = category_labels(records);
            let targets = records
                .iter()
                .map(|r| category_target(r, &labels))
                .collect::<Result<Vec<_>>>()?;
            Ok((labels, HeadKind::Softmax, targets))
        }
        Head::Tag => {
            let labels = tag_labels(vocab, records)?;
            if labels.is_empty() {
                return Err(Error::EmptyDataset);
            }
            let targets = records.iter().map(|r| tag_target(r, &labels)).collect();
            Ok((labels, HeadKind::Sigmoid, targets))
        }
    }
}

pub fn train_text(a: &TrainTextArgs, out: &mut dyn Write) -> Result<()> {
    let records = load_records(&a.train)?;
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let table = EmbeddingTable::load(&a.embeddings)?;
    let (labels, head, targets) = targets(a.head, a.vocab.as_ref(), &records)?;
    let data: Vec<(Vec<f64>, Target)> = records
        .par_iter()
        .map(|r| embed_mean(&tokenize_clean(&r.transcript), &table).vector)
        .collect::<Vec<_>>()
        .into_iter()
        .zip(targets)
        .collect();

    let config = TrainConfig {
        iterations: a.iterations,
        lr: a.lr,
        momentum: a.momentum,
        weight_decay: a.weight_decay,
        batch: a.batch_size.map_or(Batch::Full, Batch::Size),
        seed: seed::derive(a.seed, "text-train"),
        lr_schedule: schedule(&a.schedule, None)?,
    };
    let initial = MlpModel::init(table.dim(), a.hidden, labels, head, seed::derive(a.seed, "text-init"));
    let trained = mlp::train(initial, &data, &config)?;
    checkpoint::save_text(&trained.model, &a.out)?;
    if let Some(path) = &a.loss_curve {
        let json = serde_json::to_string(&trained.loss_curve).expect("loss curve serializes");
        write_text(path, &(json + "\n"))?;
    }
    let first = trained.loss_curve.first().copied().unwrap_or(f64::NAN);
    let last = trained.loss_curve.last().copied().unwrap_or(f64::NAN);
    say(
        out,
        format!(
            "trained text {} head on {} records: loss {first:.4} -> {last:.4}; wrote {}",
            head_name(a.head),
            data.len(),
            a.out.display()
        ),
    )
}

pub fn train_vision(a: &TrainVisionArgs, out: &mut dyn Write) -> Result<()> {
    let records = load_records(&a.train)?;
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (labels, head, targets) = targets(a.head, a.vocab.as_ref(), &records)?;
    let proposals = match (a.sampler, &a.proposals) {
        (SamplerArg::Proposals, Some(p)) => Some(load_box_lists(p)?),
        (SamplerArg::Proposals, None) => {
            return Err(Error::Config("--sampler proposals needs --proposals".into()));
        }
        (SamplerArg::Random, _) => None,
    };
    let images = records
        .par_iter()
        .map(|r| load_image(&r.image_path))
        .collect::<Result<Vec<_>>>()?;
    let data: Vec<VisionExample> = records
        .iter()
        .zip(images)
        .zip(targets)
        .map(|((r, image), target)| VisionExample {
            image,
            target,
            proposals: proposals
                .as_ref()
                .and_then(|p| p.get(&r.id).cloned())
                .unwrap_or_default(),
        })
        .collect();

    let (default_epochs, default_schedule) = match a.head {
        Head::Category => (5, StepSchedule { factor: 0.5, period: 1 }),
        Head::Tag => (500, StepSchedule { factor: 0.1, period: 50 }),
    };
    let config = VisionTrainConfig {
        epochs: a.epochs.unwrap_or(default_epochs),
        batch_size: a.batch_size,
        bag_size: a.bag_size,
        lr: a.lr,
        momentum: a.momentum,
        weight_decay: a.weight_decay,
        lr_schedule: schedule(&a.schedule, Some(default_schedule))?,
        side_range: side_range(a.side_min, a.side_max)?,
        sampler: match a.sampler {
            SamplerArg::Random => Sampler::Random,
            SamplerArg::Proposals => Sampler::Proposals,
        },
        seed: seed::derive(a.seed, "vision-train"),
    };
    let encoder = EncoderConfig {
        patch_size: a.patch_size,
        conv1_channels: a.conv1,
        conv2_channels: a.conv2,
        hidden: a.hidden,
        ..EncoderConfig::default()
    };
    let aggregation = match a.aggregation {
        AggregationArg::Mean => Aggregation::Mean,
        AggregationArg::Max => Aggregation::Max,
    };
    let initial = VisionModel::init(encoder, labels, head, aggregation, seed::derive(a.seed, "vision-init"))?;
    let trained = mil::train_vision(initial, &data, &config)?;
    checkpoint::save_vision(&trained.model, &a.out)?;
    let first = trained.epoch_loss.first().copied().unwrap_or(f64::NAN);
    let last = trained.epoch_loss.last().copied().unwrap_or(f64::NAN);
    say(
        out,
        format!(
            "trained vision {} head on {} images for {} epochs: loss {first:.4} -> {last:.4}; wrote {}",
            head_name(a.head),
            data.len(),
            config.epochs,
            a.out.display()
        ),
    )
}

fn head_name(head: Head) -> &'static str {
    match head {
        Head::Category => "category",
        Head::Tag => "tag",
    }
}
