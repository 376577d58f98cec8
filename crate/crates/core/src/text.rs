//! Transcript features and the non-learned text baselines.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Word vectors keyed by cleaned (lowercase) word.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    words: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            words: Vec::new(),
            index: HashMap::new(),
            vectors: Vec::new(),
        }
    }

    /// Adds a word. Keys are cleaned first; a key already present keeps its
    /// first vector and `false` is returned.
    pub fn insert(&mut self, word: &str, vector: &[f64]) -> Result<bool> {
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: vector.len(),
            });
        }
        let Some(key) = clean_token(word) else {
            return Ok(false);
        };
        if self.index.contains_key(&key) {
            return Ok(false);
        }
        self.index.insert(key.clone(), self.words.len());
        self.words.push(key);
        self.vectors.extend_from_slice(vector);
        Ok(true)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_size(&self) -> usize {
        self.words.len()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Looks up an already-cleaned token.
    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.index
            .get(token)
            .map(|&i| &self.vectors[i * self.dim..(i + 1) * self.dim])
    }

    /// Standard text format: a `vocab dim` header line, then `word v1 .. vD`.
    pub fn read(reader: impl BufRead) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let header = loop {
            match lines.next() {
                Some((i, line)) => {
                    let line = line.map_err(|e| Error::io("<embeddings>", e))?;
                    if !line.trim().is_empty() {
                        break (i + 1, line);
                    }
                }
                None => {
                    return Err(Error::Parse {
                        line: 1,
                        message: "empty embedding file".into(),
                    })
                }
            }
        };
        let mut parts = header.1.split_whitespace();
        let parse_usize = |s: Option<&str>| -> Result<usize> {
            s.and_then(|v| v.parse().ok()).ok_or_else(|| Error::Parse {
                line: header.0,
                message: "expected header `vocab dim`".into(),
            })
        };
        let declared = parse_usize(parts.next())?;
        let dim = parse_usize(parts.next())?;
        if dim == 0 {
            return Err(Error::Parse {
                line: header.0,
                message: "dimension must be at least 1".into(),
            });
        }
        let mut table = EmbeddingTable::new(dim);
        let mut vector = Vec::with_capacity(dim);
        for (i, line) in lines {
            let line = line.map_err(|e| Error::io("<embeddings>", e))?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(' ').filter(|f| !f.is_empty());
            let word = fields.next().unwrap_or_default();
            vector.clear();
            for f in fields {
                vector.push(f.parse::<f64>().map_err(|e| Error::Parse {
                    line: i + 1,
                    message: format!("bad component `{f}`: {e}"),
                })?);
            }
            if vector.len() != dim {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected {dim} components, found {}", vector.len()),
                });
            }
            table.insert(word, &vector)?;
        }
        if table.vocab_size() > declared {
            return Err(Error::Parse {
                line: header.0,
                message: format!("header declares {declared} words, file has more"),
            });
        }
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(file))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(out, "{} {}", self.vocab_size(), self.dim).map_err(io)?;
        for (i, word) in self.words.iter().enumerate() {
            write!(out, "{word}").map_err(io)?;
            for v in &self.vectors[i * self.dim..(i + 1) * self.dim] {
                write!(out, " {v:.6}").map_err(io)?;
            }
            writeln!(out).map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

/// Mean embedding of a transcript.
#[derive(Debug, Clone, PartialEq)]
pub struct TextFeature {
    pub vector: Vec<f64>,
    pub n_known: usize,
    pub n_total: usize,
}

/// Lowercases, trims non-alphanumeric characters from both ends, and drops
/// anything shorter than two characters.
pub fn clean_token(raw: &str) -> Option<String> {
    let trimmed = raw.trim_matches(|c: char| !c.is_alphanumeric());
    let token = trimmed.to_lowercase();
    (token.chars().count() >= 2).then_some(token)
}

pub fn tokenize_clean<S: AsRef<str>>(transcript: &[S]) -> Vec<String> {
    transcript.iter().filter_map(|w| clean_token(w.as_ref())).collect()
}

/// Arithmetic mean over the multiset of known tokens. OOV tokens are counted
/// but skipped; no known tokens gives the zero vector.
pub fn embed_mean<S: AsRef<str>>(tokens: &[S], table: &EmbeddingTable) -> TextFeature {
    let mut vector = vec![0.0; table.dim()];
    let mut n_known = 0;
    for token in tokens {
        if let Some(v) = table.get(token.as_ref()) {
            for (acc, x) in vector.iter_mut().zip(v) {
                *acc += x;
            }
            n_known += 1;
        }
    }
    if n_known > 0 {
        let inv = n_known as f64;
        vector.iter_mut().for_each(|x| *x /= inv);
    }
    TextFeature {
        vector,
        n_known,
        n_total: tokens.len(),
    }
}

/// A tag name split into cleaned words.
fn tag_words(tag: &str) -> Vec<String> {
    tag.split_whitespace().filter_map(clean_token).collect()
}

/// Tags whose cleaned words occur verbatim as a consecutive run of tokens.
/// Output follows `tag_vocab` order.
pub fn snap_tags<S: AsRef<str>>(tokens: &[S], tag_vocab: &[String]) -> Vec<String> {
    let tokens: Vec<&str> = tokens.iter().map(AsRef::as_ref).collect();
    tag_vocab
        .iter()
        .filter(|tag| {
            let words = tag_words(tag);
            !words.is_empty()
                && tokens
                    .windows(words.len())
                    .any(|w| w.iter().zip(&words).all(|(a, b)| *a == b))
        })
        .cloned()
        .collect()
}

/// Puts snapped tags first, ordered by their position in the model ranking,
/// then fills the remaining slots from the ranking.
pub fn snap_then_rank(snapped: &[String], ranking: &[String], k: usize) -> Vec<String> {
    let position = |t: &String| ranking.iter().position(|r| r == t).unwrap_or(usize::MAX);
    let mut head: Vec<&String> = snapped.iter().collect();
    head.sort_by_key(|t| position(t));
    let mut out: Vec<String> = Vec::with_capacity(k);
    for t in head.into_iter().chain(ranking.iter()) {
        if out.len() == k {
            break;
        }
        if !out.contains(t) {
            out.push(t.clone());
        }
    }
    out
}

/// Embedding of each tag: mean of its words' vectors, `None` if no word is known.
pub fn tag_embeddings(tag_vocab: &[String], table: &EmbeddingTable) -> Vec<Option<Vec<f64>>> {
    tag_vocab
        .iter()
        .map(|tag| {
            let f = embed_mean(&tag_words(tag), table);
            (f.n_known > 0).then_some(f.vector)
        })
        .collect()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Result of the voting baseline: the top `k` tags and the full tally.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteResult {
    pub ranking: Vec<String>,
    pub votes: Vec<usize>,
}

/// Every known token votes for its nearest tag by cosine similarity (ties to
/// the lower tag index). Tags are ranked by votes, ties by tag index.
pub fn vote_tags<S: AsRef<str>>(
    tokens: &[S],
    table: &EmbeddingTable,
    tag_vocab: &[String],
    k: usize,
) -> Result<VoteResult> {
    let tag_vecs = tag_embeddings(tag_vocab, table);
    let mut votes = vec![0usize; tag_vocab.len()];
    let mut n_known = 0;
    for token in tokens {
        let Some(v) = table.get(token.as_ref()) else {
            continue;
        };
        n_known += 1;
        let mut best: Option<(usize, f64)> = None;
        for (i, tv) in tag_vecs.iter().enumerate() {
            let Some(tv) = tv else { continue };
            let sim = cosine(v, tv);
            if best.is_none_or(|(_, s)| sim > s) {
                best = Some((i, sim));
            }
        }
        if let Some((i, _)) = best {
            votes[i] += 1;
        }
    }
    if n_known == 0 {
        return Err(Error::NoKnownTokens);
    }
    let mut order: Vec<usize> = (0..tag_vocab.len()).collect();
    order.sort_by(|&a, &b| votes[b].cmp(&votes[a]).then(a.cmp(&b)));
    Ok(VoteResult {
        ranking: order.into_iter().take(k).map(|i| tag_vocab[i].clone()).collect(),
        votes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(entries: &[(&str, &[f64])]) -> EmbeddingTable {
        let mut t = EmbeddingTable::new(entries[0].1.len());
        for (w, v) in entries {
            t.insert(w, v).unwrap();
        }
        t
    }

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn cleaning_rules() {
        assert_eq!(tokenize_clean(&["The", "Dog!"]), strings(&["the", "dog"]));
        assert!(tokenize_clean(&["a", "I"]).is_empty());
        assert_eq!(tokenize_clean(&["CO2-emissions"]), strings(&["co2-emissions"]));
        assert_eq!(tokenize_clean(&["...", "(x)", "--ok--"]), strings(&["ok"]));
    }

    #[test]
    fn mean_of_known_tokens() {
        let t2 = table(&[("xx", &[1.0, 0.0]), ("yy", &[0.0, 1.0])]);
        let f = embed_mean(&["xx", "yy"], &t2);
        assert_eq!(f.vector, vec![0.5, 0.5]);
        assert_eq!((f.n_known, f.n_total), (2, 2));
        assert_eq!(embed_mean(&["xx"], &t2).vector, vec![1.0, 0.0]);
        assert_eq!(embed_mean(&["xx", "xx"], &t2).vector, vec![1.0, 0.0]);

        let f = embed_mean(&["zz", "ww"], &t2);
        assert_eq!(f.vector, vec![0.0, 0.0]);
        assert_eq!((f.n_known, f.n_total), (0, 2));
    }

    #[test]
    fn mean_uses_multiset_semantics() {
        let t = table(&[("aa", &[3.0, 0.0]), ("bb", &[0.0, 3.0])]);
        let f = embed_mean(&["aa", "aa", "bb"], &t);
        assert_eq!(f.vector, vec![2.0, 1.0]);
    }

    #[test]
    fn snapping() {
        let vocab = strings(&["environment", "social media", "water"]);
        assert_eq!(snap_tags(&["the", "environment"], &vocab), strings(&["environment"]));
        assert!(snap_tags(&["nothing", "here"], &vocab).is_empty());
        assert_eq!(
            snap_tags(&["social", "media", "iceberg"], &vocab),
            strings(&["social media"])
        );
        assert!(snap_tags(&["media", "social"], &vocab).is_empty());
    }

    #[test]
    fn snapped_tags_lead_the_ranking() {
        let ranking = strings(&["a", "b", "c", "d"]);
        assert_eq!(snap_then_rank(&strings(&["c"]), &ranking, 3), strings(&["c", "a", "b"]));
        assert_eq!(snap_then_rank(&strings(&["d", "b"]), &ranking, 1), strings(&["b"]));
        assert_eq!(snap_then_rank(&[], &ranking, 2), strings(&["a", "b"]));
    }

    #[test]
    fn voting_counts() {
        let t = table(&[
            ("dog", &[1.0, 0.0]),
            ("cat", &[0.0, 1.0]),
            ("puppy", &[0.9, 0.1]),
            ("hound", &[0.8, 0.3]),
            ("kitten", &[0.2, 0.9]),
        ]);
        let vocab = strings(&["cat", "dog"]);
        let r = vote_tags(&["puppy", "hound"], &t, &vocab, 1).unwrap();
        assert_eq!(r.ranking, strings(&["dog"]));

        let r = vote_tags(&["puppy", "hound", "dog", "kitten", "zzz"], &t, &vocab, 2).unwrap();
        assert_eq!(r.ranking, strings(&["dog", "cat"]));
        assert_eq!(r.votes, vec![1, 3]);
        assert!(matches!(vote_tags(&["zzz"], &t, &vocab, 1), Err(Error::NoKnownTokens)));
    }

    #[test]
    fn voting_ties_break_by_index() {
        let t = table(&[("aa", &[1.0, 0.0]), ("bb", &[0.0, 1.0])]);
        let vocab = strings(&["bb", "aa"]);
        let r = vote_tags(&["aa", "bb"], &t, &vocab, 2).unwrap();
        assert_eq!(r.ranking, strings(&["bb", "aa"]));
    }

    #[test]
    fn text_format_round_trip() {
        let text = "3 2\nHello 0.5 -1\r\nworld 1e-3 2\n\nhello 9 9\n";
        let t = EmbeddingTable::read(text.as_bytes()).unwrap();
        assert_eq!(t.vocab_size(), 2);
        assert_eq!(t.get("hello"), Some(&[0.5, -1.0][..]));
        assert_eq!(t.get("world"), Some(&[0.001, 2.0][..]));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        t.save(&path).unwrap();
        assert_eq!(EmbeddingTable::load(&path).unwrap(), t);

        assert!(matches!(
            EmbeddingTable::read("1 2\nword 1\n".as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
    }
}
