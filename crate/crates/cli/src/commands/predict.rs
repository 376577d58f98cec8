use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use vishash::checkpoint::{self, Checkpoint};
use vishash::mlp::{rank_scores, HeadKind};
use vishash::seed;
use vishash::text::{embed_mean, snap_tags, snap_then_rank, tokenize_clean, EmbeddingTable};
use vishash::vision::patch::sample_random_patches;
use vishash::{Error, Result};

use super::data::{load_image, load_records, say, side_range, write_jsonl, Prediction, ScoredLabel};
use crate::cli::PredictArgs;

/// A loaded model together with whatever it needs at inference time.
enum Predictor {
    Text(vishash::mlp::MlpModel, EmbeddingTable),
    Vision(vishash::vision::VisionModel),
}

struct Options {
    topk: usize,
    snap: bool,
    bag_size: usize,
    side_range: (f64, f64),
    seed: u64,
}

impl Predictor {
    fn load(model: &Path, embeddings: Option<&PathBuf>) -> Result<Self> {
        match checkpoint::load(model)? {
            Checkpoint::Text(m) => {
                let path = match embeddings {
                    Some(p) => p.clone(),
                    None => model.with_file_name("embeddings.txt"),
                };
                Ok(Predictor::Text(m, EmbeddingTable::load(path)?))
            }
            Checkpoint::Vision(m) => Ok(Predictor::Vision(m)),
        }
    }

    fn labels(&self) -> &[String] {
        match self {
            Predictor::Text(m, _) => &m.labels,
            Predictor::Vision(m) => &m.labels,
        }
    }

    fn head(&self) -> HeadKind {
        match self {
            Predictor::Text(m, _) => m.head,
            Predictor::Vision(m) => m.head_kind,
        }
    }

    fn text_scores(&self, tokens: &[String]) -> Result<Vec<f64>> {
        match self {
            Predictor::Text(m, table) => m.forward(&embed_mean(tokens, table).vector),
            Predictor::Vision(_) => Err(Error::Config("a transcript needs a text model".into())),
        }
    }

    fn image_scores(&self, image: &Path, id: &str, o: &Options) -> Result<Vec<f64>> {
        match self {
            Predictor::Vision(m) => {
                let image = load_image(image)?;
                let bag = sample_random_patches(&image, o.bag_size, o.side_range, m.patch_size(), seed::derive(o.seed, id))?;
                m.predict_bag(&bag)
            }
            Predictor::Text(..) => Err(Error::Config("an image needs a vision model".into())),
        }
    }

    /// Top-k ranking; with snapping, tags named in `tokens` go first.
    fn rank(&self, id: &str, scores: &[f64], tokens: &[String], o: &Options) -> Prediction {
        let labels = self.labels();
        let full = rank_scores(scores, labels, self.head(), labels.len());
        let snapped = if o.snap && self.head() == HeadKind::Sigmoid {
            snap_tags(tokens, labels)
        } else {
            Vec::new()
        };
        let order: Vec<String> = full.iter().map(|r| r.label.clone()).collect();
        let ranking = snap_then_rank(&snapped, &order, o.topk)
            .into_iter()
            .map(|label| {
                let score = full.iter().find(|r| r.label == label).map_or(0.0, |r| r.score);
                ScoredLabel { label, score }
            })
            .collect();
        Prediction {
            id: id.to_string(),
            ranking,
            snapped,
        }
    }
}

pub fn predict(a: &PredictArgs, out: &mut dyn Write) -> Result<()> {
    if a.topk == 0 {
        return Err(Error::Config("--topk must be at least 1".into()));
    }
    let predictor = Predictor::load(&a.model, a.embeddings.as_ref())?;
    let o = Options {
        topk: a.topk,
        snap: a.snap,
        bag_size: a.bag_size,
        side_range: side_range(a.side_min, a.side_max)?,
        seed: a.seed,
    };

    let single = if let Some(path) = &a.transcript {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let words: Vec<&str> = text.split_whitespace().collect();
        let tokens = tokenize_clean(&words);
        let scores = predictor.text_scores(&tokens)?;
        Some(predictor.rank("transcript", &scores, &tokens, &o))
    } else if let Some(path) = &a.image {
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let scores = predictor.image_scores(path, &id, &o)?;
        Some(predictor.rank(&id, &scores, &[], &o))
    } else {
        None
    };
    if let Some(p) = single {
        for s in &p.ranking {
            say(out, format!("{}\t{:.6}", s.label, s.score))?;
        }
        return Ok(());
    }

    let (Some(manifest), Some(dest)) = (&a.manifest, &a.out) else {
        return Err(Error::Config("give one of --transcript, --image or --manifest".into()));
    };
    let records = load_records(manifest)?;
    let predictions = records
        .par_iter()
        .map(|r| {
            let tokens = tokenize_clean(&r.transcript);
            let scores = match predictor {
                Predictor::Text(..) => predictor.text_scores(&tokens)?,
                Predictor::Vision(_) => predictor.image_scores(&r.image_path, &r.id, &o)?,
            };
            Ok(predictor.rank(&r.id, &scores, &tokens, &o))
        })
        .collect::<Result<Vec<_>>>()?;
    write_jsonl(dest, &predictions)?;
    say(out, format!("wrote {} predictions to {}", predictions.len(), dest.display()))
}
