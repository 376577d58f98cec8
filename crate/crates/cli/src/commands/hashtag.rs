use std::collections::BTreeMap;
use std::fs;
use std::io::Write;

use vishash::checkpoint;
use vishash::eval::{evaluation_pairs, load_ground_truth};
use vishash::hashtag::{extract_hashtags, write_proposals, Connectivity, ExtractConfig, GateRefiner, ThresholdPolicy};
use vishash::mlp::HeadKind;
use vishash::{Error, Result};

use super::data::{file_stem, load_image, load_predictions, load_records, say, side_range};
use crate::cli::HashtagArgs;

pub fn hashtag(a: &HashtagArgs, out: &mut dyn Write) -> Result<()> {
    let model = checkpoint::load_vision(&a.model, HeadKind::Sigmoid)?;
    let records = load_records(&a.manifest)?;
    let config = ExtractConfig {
        n_crops: a.crops,
        side_range: side_range(a.side_min, a.side_max)?,
        threshold: ThresholdPolicy::from_k(a.k),
        connectivity: if a.connectivity == 8 { Connectivity::Eight } else { Connectivity::Four },
        refiner: GateRefiner {
            min_area_fraction: a.min_area_fraction,
            fill_ratio_min: a.fill_ratio_min,
        },
        seed: a.seed,
    };
    if config.n_crops == 0 {
        return Err(Error::Config("--crops must be at least 1".into()));
    }

    // Tags to localize per image id.
    let mut wanted: BTreeMap<String, Vec<String>> = BTreeMap::new();
    if let Some(path) = &a.ground_truth {
        let (pairs, _) = evaluation_pairs(&load_ground_truth(path)?);
        let ids: std::collections::BTreeSet<&str> = records.iter().map(|r| r.id.as_str()).collect();
        for (image, tag) in pairs.into_keys().filter(|(image, _)| ids.contains(image.as_str())) {
            wanted.entry(image).or_default().push(tag);
        }
    } else if let Some(path) = &a.tag_predictions {
        for (id, p) in load_predictions(path)? {
            wanted.insert(id, p.labels().into_iter().take(a.tags_per_image).collect());
        }
    } else {
        for r in &records {
            wanted.insert(r.id.clone(), r.tags.iter().cloned().collect());
        }
    }
    if let Some(dir) = &a.heatmaps {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut proposals = Vec::new();
    let mut skipped = 0usize;
    for r in &records {
        let Some(tags) = wanted.get(&r.id) else { continue };
        let (known, unknown): (Vec<String>, Vec<String>) =
            tags.iter().cloned().partition(|t| model.labels.contains(t));
        skipped += unknown.len();
        if known.is_empty() {
            continue;
        }
        let image = load_image(&r.image_path)?;
        for result in extract_hashtags(&r.id, &image, &known, &model, &config, a.fallback)? {
            if let Some(dir) = &a.heatmaps {
                let stem = format!("{}__{}", file_stem(&r.id), file_stem(&result.tag));
                result.heatmap.write_pgm(dir.join(format!("{stem}.pgm")))?;
                result.heatmap.write_raw(dir.join(format!("{stem}.raw")))?;
            }
            proposals.push(result.to_json());
        }
    }
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_proposals(&proposals, &a.out)?;
    let with_box = proposals.iter().filter(|p| !p.proposals.is_empty()).count();
    let mut line = format!(
        "localized {} image-tag pairs ({} with a proposal); wrote {}",
        proposals.len(),
        with_box,
        a.out.display()
    );
    if skipped > 0 {
        line.push_str(&format!("; skipped {skipped} tags unknown to the model"));
    }
    say(out, line)
}
