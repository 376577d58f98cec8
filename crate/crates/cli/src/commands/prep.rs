use std::fs;
use std::io::Write;

use vishash::corpus::{self, CurateConfig, MergeMap};
use vishash::synthgen::{self, SynthConfig};
use vishash::{Error, Result};

use super::data::{load_records, relative_to, say, write_jsonl};
use crate::cli::{CurateArgs, SynthArgs};

pub fn synth(a: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    let config = SynthConfig {
        n_images: a.images,
        canvas: (a.width, a.height),
        n_categories: a.categories,
        n_tags: a.tags,
        icons_per_image: (a.icons_min, a.icons_max),
        tags_per_image: (a.tags_min, a.tags_max),
        icon_side: (a.icon_min, a.icon_max),
        words_per_image: a.words,
        noise_word_fraction: a.noise,
        embedding_dim: a.embedding_dim,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let records = synthgen::generate_to_dir(&config, &a.out)?;
    say(out, format!("wrote {} images to {}", records.len(), a.out.display()))
}

pub fn curate(a: &CurateArgs, out: &mut dyn Write) -> Result<()> {
    let records = load_records(&a.manifest)?;
    let merge_map = match &a.merge_map {
        Some(p) => MergeMap::load(p)?,
        None => MergeMap::default(),
    };
    let config = CurateConfig {
        min_tag_count: a.min_tag_count,
        aspect_bounds: (a.min_aspect, a.max_aspect),
        max_tags_per_image: a.max_tags,
        admit_uncategorized: a.admit_uncategorized,
    };
    let (mut kept, vocab) = corpus::curate(&records, &merge_map, &config)?;
    // Image paths are written relative to the output directory, so a curated
    // tree can move together with its source images.
    for r in &mut kept {
        r.image_path = relative_to(&r.image_path, &a.out)?;
    }
    let split = corpus::split(&kept, a.test_fraction, a.seed)?;
    let (train, test) = split.partition(&kept);

    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_jsonl(&a.out.join("curated.jsonl"), &kept)?;
    write_jsonl(&a.out.join("train.jsonl"), &train)?;
    write_jsonl(&a.out.join("test.jsonl"), &test)?;
    vocab.save(a.out.join("vocab.json"))?;
    say(
        out,
        format!(
            "kept {} of {} records, {} tags; train {}, test {}",
            kept.len(),
            records.len(),
            vocab.tags.len(),
            train.len(),
            test.len()
        ),
    )
}
