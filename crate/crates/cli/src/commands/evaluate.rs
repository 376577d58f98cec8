use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use serde_json::{json, Value};
use vishash::corpus::InfographicRecord;
use vishash::eval::{
    canonical_json, category_chance, hashtag_metrics, load_ground_truth, mean_tag_pr, random_crop_baseline,
    topk_accuracy, GroundTruthBoxSet, HashtagMetrics,
};
use vishash::hashtag::load_proposals;
use vishash::text::{snap_tags, snap_then_rank, tokenize_clean, vote_tags, EmbeddingTable};
use vishash::{Error, PixelBox, Result};

use super::data::{load_predictions, load_records, say, side_range, tag_labels, write_text};
use crate::cli::{BaselineArgs, EvaluateArgs};

/// Rows of the printed summary: (metric, k or "-", value).
type Rows = Vec<(String, String, f64)>;
type PerK = Vec<(usize, f64)>;

fn check_ks(ks: &[usize]) -> Result<Vec<usize>> {
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() || ks[0] == 0 {
        return Err(Error::Config("--ks must list positive integers".into()));
    }
    Ok(ks)
}

fn per_k(values: &[(usize, f64)]) -> Value {
    Value::Object(values.iter().map(|(k, v)| (k.to_string(), json!(v))).collect())
}

fn push_per_k(rows: &mut Rows, name: &str, values: &[(usize, f64)]) {
    rows.extend(values.iter().map(|(k, v)| (name.to_string(), k.to_string(), *v)));
}

fn push_hashtag(rows: &mut Rows, prefix: &str, m: &HashtagMetrics) {
    for (name, v) in [
        ("precision", m.precision),
        ("accuracy", m.accuracy),
        ("mean_iou", m.mean_iou),
        ("success_rate", m.success_rate),
    ] {
        rows.push((format!("{prefix}.{name}"), "-".into(), v));
    }
}

fn print_rows(out: &mut dyn Write, rows: &Rows) -> Result<()> {
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(6).max(6);
    say(out, format!("{:<width$}  {:>3}  {:>8}", "metric", "k", "value"))?;
    for (name, k, v) in rows {
        say(out, format!("{name:<width$}  {k:>3}  {v:>8.4}"))?;
    }
    Ok(())
}

fn category_truth(records: &[InfographicRecord]) -> Vec<(String, String)> {
    records
        .iter()
        .filter_map(|r| r.category.clone().map(|c| (r.id.clone(), c)))
        .collect()
}

fn tag_truth(records: &[InfographicRecord]) -> Vec<(String, BTreeSet<String>)> {
    records
        .iter()
        .filter(|r| !r.tags.is_empty())
        .map(|r| (r.id.clone(), r.tags.clone()))
        .collect()
}

/// Mean precision and recall at each k, as two per-k tables.
fn tag_tables(
    rankings: &HashMap<String, Vec<String>>,
    truth: &[(String, BTreeSet<String>)],
    ks: &[usize],
) -> Result<(PerK, PerK)> {
    let mut precision = Vec::new();
    let mut recall = Vec::new();
    for &k in ks {
        let (p, r) = mean_tag_pr(rankings, truth, k)?;
        precision.push((k, p));
        recall.push((k, r));
    }
    Ok((precision, recall))
}

/// Ground truth for the manifest's images only; all of it without a manifest.
fn ground_truth_for(path: &std::path::Path, records: &[InfographicRecord]) -> Result<Vec<GroundTruthBoxSet>> {
    let gts = load_ground_truth(path)?;
    if records.is_empty() {
        return Ok(gts);
    }
    let ids: BTreeSet<&str> = records.iter().map(|r| r.id.as_str()).collect();
    Ok(gts.into_iter().filter(|g| ids.contains(g.image_id.as_str())).collect())
}

fn dims(records: &[InfographicRecord]) -> HashMap<String, (u32, u32)> {
    records.iter().map(|r| (r.id.clone(), (r.width, r.height))).collect()
}

pub fn evaluate(a: &EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    let ks = check_ks(&a.ks)?;
    let records = match &a.manifest {
        Some(p) => load_records(p)?,
        None => Vec::new(),
    };
    let mut rows = Rows::new();
    let mut report = BTreeMap::new();

    let mut category = Value::Null;
    if let Some(path) = &a.category_predictions {
        let rankings: HashMap<String, Vec<String>> =
            load_predictions(path)?.into_iter().map(|(id, p)| (id, p.labels())).collect();
        let truth = category_truth(&records);
        let acc = topk_accuracy(&rankings, &truth, &ks)?;
        let labels: Vec<String> = truth.iter().map(|t| t.1.clone()).collect();
        let chance = category_chance(&labels, &ks);
        push_per_k(&mut rows, "category.topk_accuracy", &acc);
        push_per_k(&mut rows, "category.chance", &chance);
        category = json!({ "images": truth.len(), "topk_accuracy": per_k(&acc), "chance": per_k(&chance) });
    }
    report.insert("category", category);

    let mut tag = Value::Null;
    if let Some(path) = &a.tag_predictions {
        let rankings: HashMap<String, Vec<String>> =
            load_predictions(path)?.into_iter().map(|(id, p)| (id, p.labels())).collect();
        let truth = tag_truth(&records);
        let (precision, recall) = tag_tables(&rankings, &truth, &ks)?;
        push_per_k(&mut rows, "tag.precision", &precision);
        push_per_k(&mut rows, "tag.recall", &recall);
        tag = json!({ "images": truth.len(), "precision": per_k(&precision), "recall": per_k(&recall) });
    }
    report.insert("tag", tag);

    let mut hashtag = Value::Null;
    if let (Some(path), Some(gt_path)) = (&a.proposals, &a.ground_truth) {
        let gts = ground_truth_for(gt_path, &records)?;
        let best: HashMap<(String, String), PixelBox> = load_proposals(path)?
            .into_iter()
            .filter_map(|p| {
                let bbox = p.proposals.first()?.bbox;
                Some(((p.image_id, p.tag), bbox))
            })
            .collect();
        let m = hashtag_metrics(&best, &gts, a.iou_threshold)?;
        push_hashtag(&mut rows, "hashtag", &m);
        hashtag = serde_json::to_value(m).expect("metrics serialize");
    }
    report.insert("hashtag", hashtag);
    report.insert("config", json!({ "ks": ks, "iou_threshold": a.iou_threshold }));
    report.insert("seed", json!(a.seed));

    write_text(&a.out, &canonical_json(&report))?;
    print_rows(out, &rows)
}

pub fn baseline(a: &BaselineArgs, out: &mut dyn Write) -> Result<()> {
    let ks = check_ks(&a.ks)?;
    let range = side_range(a.side_min, a.side_max)?;
    let records = load_records(&a.manifest)?;
    let mut rows = Rows::new();
    let mut report = BTreeMap::new();

    let labels: Vec<String> = category_truth(&records).into_iter().map(|t| t.1).collect();
    let chance = category_chance(&labels, &ks);
    push_per_k(&mut rows, "category.chance", &chance);
    report.insert("category_chance", per_k(&chance));

    let mut random = Value::Null;
    if let Some(gt_path) = &a.ground_truth {
        let gts = ground_truth_for(gt_path, &records)?;
        let m = random_crop_baseline(&dims(&records), &gts, range, a.seed, a.iou_threshold)?;
        push_hashtag(&mut rows, "random_crop", &m);
        random = serde_json::to_value(m).expect("metrics serialize");
    }
    report.insert("random_crop", random);

    let mut text = Value::Null;
    if let Some(path) = &a.embeddings {
        let table = EmbeddingTable::load(path)?;
        let vocab = tag_labels(a.vocab.as_ref(), &records)?;
        let truth = tag_truth(&records);
        let mut vote = HashMap::new();
        let mut snap = HashMap::new();
        for r in &records {
            let tokens = tokenize_clean(&r.transcript);
            // A transcript with no known token casts no votes.
            let ranking = match vote_tags(&tokens, &table, &vocab, vocab.len()) {
                Ok(v) => v.ranking,
                Err(Error::NoKnownTokens) => Vec::new(),
                Err(e) => return Err(e),
            };
            let snapped = snap_tags(&tokens, &vocab);
            snap.insert(r.id.clone(), snap_then_rank(&snapped, &ranking, vocab.len()));
            vote.insert(r.id.clone(), ranking);
        }
        let (vp, vr) = tag_tables(&vote, &truth, &ks)?;
        let (sp, sr) = tag_tables(&snap, &truth, &ks)?;
        push_per_k(&mut rows, "vote.precision", &vp);
        push_per_k(&mut rows, "vote.recall", &vr);
        push_per_k(&mut rows, "snap.precision", &sp);
        push_per_k(&mut rows, "snap.recall", &sr);
        text = json!({
            "images": truth.len(),
            "vote": { "precision": per_k(&vp), "recall": per_k(&vr) },
            "snap": { "precision": per_k(&sp), "recall": per_k(&sr) },
        });
    }
    report.insert("text", text);
    report.insert(
        "config",
        json!({ "ks": ks, "iou_threshold": a.iou_threshold, "side_range": [range.0, range.1] }),
    );
    report.insert("seed", json!(a.seed));

    write_text(&a.out, &canonical_json(&report))?;
    print_rows(out, &rows)
}
