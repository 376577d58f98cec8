use std::collections::BTreeSet;

use proptest::prelude::*;
use vishash::text::{cosine, embed_mean, snap_tags, vote_tags, EmbeddingTable};

const WORDS: [&str; 8] = ["alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel"];

fn table_from(vectors: &[Vec<f64>]) -> EmbeddingTable {
    let mut t = EmbeddingTable::new(vectors[0].len());
    for (w, v) in WORDS.iter().zip(vectors) {
        t.insert(w, v).unwrap();
    }
    t
}

fn vectors() -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), WORDS.len())
}

fn tokens(max: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(&WORDS[..]).prop_map(String::from), 1..max)
}

proptest! {
    #[test]
    fn duplicated_token_counts_twice(vs in vectors(), a in 0usize..8, b in 0usize..8) {
        let t = table_from(&vs);
        let f = embed_mean(&[WORDS[a], WORDS[a], WORDS[b]], &t);
        prop_assert_eq!(f.n_known, 3);
        for (j, got) in f.vector.iter().enumerate() {
            let expected = (2.0 * vs[a][j] + vs[b][j]) / 3.0;
            prop_assert!((got - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_ignores_order_and_unknown_tokens(vs in vectors(), toks in tokens(12), seed in any::<u64>()) {
        let t = table_from(&vs);
        let f = embed_mean(&toks, &t);
        let mut shuffled = toks.clone();
        shuffled.rotate_left((seed % toks.len() as u64) as usize);
        shuffled.reverse();
        shuffled.push("unseen".into());
        let g = embed_mean(&shuffled, &t);
        prop_assert_eq!(g.n_known, f.n_known);
        prop_assert_eq!(g.n_total, f.n_total + 1);
        for (x, y) in f.vector.iter().zip(&g.vector) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn snap_is_subset_and_monotone(toks in tokens(10), extra in tokens(5), vocab_mask in 1u8..=255) {
        let vocab: Vec<String> = WORDS.iter().enumerate()
            .filter(|(i, _)| vocab_mask & (1 << i) != 0)
            .map(|(_, w)| w.to_string())
            .chain(["alpha bravo".to_string()])
            .collect();
        let snapped = snap_tags(&toks, &vocab);
        prop_assert!(snapped.iter().all(|s| vocab.contains(s)));
        let mut longer = toks.clone();
        longer.extend(extra);
        let more: BTreeSet<String> = snap_tags(&longer, &vocab).into_iter().collect();
        prop_assert!(snapped.iter().all(|s| more.contains(s)));
    }

    #[test]
    fn votes_match_nearest_tag_oracle(vs in vectors(), toks in tokens(15), n_tags in 2usize..6) {
        let t = table_from(&vs);
        let vocab: Vec<String> = WORDS[..n_tags].iter().map(|s| s.to_string()).collect();
        let result = vote_tags(&toks, &t, &vocab, vocab.len()).unwrap();

        let mut expected = vec![0usize; n_tags];
        for tok in &toks {
            let v = t.get(tok).unwrap();
            let sims: Vec<f64> = (0..n_tags).map(|i| cosine(v, &vs[i])).collect();
            let best = (0..n_tags).fold(0, |b, i| if sims[i] > sims[b] { i } else { b });
            expected[best] += 1;
        }
        prop_assert_eq!(&result.votes, &expected);
        prop_assert_eq!(result.votes.iter().sum::<usize>(), toks.len());

        let ranked: BTreeSet<&String> = result.ranking.iter().collect();
        prop_assert_eq!(ranked.len(), vocab.len());
        for pair in result.ranking.windows(2) {
            let (a, b) = (vocab.iter().position(|v| *v == pair[0]).unwrap(), vocab.iter().position(|v| *v == pair[1]).unwrap());
            prop_assert!(expected[a] > expected[b] || (expected[a] == expected[b] && a < b));
        }
    }
}
