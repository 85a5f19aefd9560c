//! Tokenization and text-overlap metrics: Rouge-L, sentence BLEU, distinct-n.
//!
//! All metrics are generic over the token type so they work on token strings
//! and on vocabulary ids alike.

use std::collections::{HashMap, HashSet};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

pub type TokenSeq = Vec<String>;

/// Lowercases, splits on whitespace and emits every non-alphanumeric,
/// non-whitespace character as its own token.
pub fn tokenize(text: &str) -> TokenSeq {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            flush(&mut word, &mut tokens);
        } else if ch.is_alphanumeric() {
            word.extend(ch.to_lowercase());
        } else {
            flush(&mut word, &mut tokens);
            tokens.push(ch.to_string());
        }
    }
    flush(&mut word, &mut tokens);
    tokens
}

fn flush(word: &mut String, tokens: &mut TokenSeq) {
    if !word.is_empty() {
        tokens.push(std::mem::take(word));
    }
}

pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    tokens
        .iter()
        .map(AsRef::as_ref)
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn lcs_length<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Which component of Rouge-L a threshold is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RougeVariant {
    #[default]
    F1,
    Recall,
}

impl RougeScore {
    pub fn get(&self, variant: RougeVariant) -> f64 {
        match variant {
            RougeVariant::F1 => self.f1,
            RougeVariant::Recall => self.recall,
        }
    }
}

pub fn rouge_l_scores<T: PartialEq>(candidate: &[T], reference: &[T]) -> RougeScore {
    if candidate.is_empty() || reference.is_empty() {
        return RougeScore {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
        };
    }
    let lcs = lcs_length(candidate, reference) as f64;
    let (m, n) = (candidate.len() as f64, reference.len() as f64);
    RougeScore {
        precision: lcs / m,
        recall: lcs / n,
        // 2PR/(P+R) == 2L/(m+n), and the latter is exact for P == R.
        f1: 2.0 * lcs / (m + n),
    }
}

/// Balanced-F1 Rouge-L.
pub fn rouge_l<T: PartialEq>(candidate: &[T], reference: &[T]) -> f64 {
    rouge_l_scores(candidate, reference).f1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    None,
    #[default]
    AddOne,
}

fn ngram_counts<T: Eq + Hash>(seq: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if seq.len() >= n {
        for gram in seq.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence BLEU with add-one smoothing.
pub fn bleu<T: Eq + Hash>(candidate: &[T], reference: &[T], max_n: usize) -> f64 {
    bleu_with(candidate, reference, max_n, Smoothing::AddOne)
}

/// Sentence BLEU against a single reference.
///
/// The n-gram order is capped at the candidate length (effective order), so
/// short identical pairs still score 1.0 without smoothing.
pub fn bleu_with<T: Eq + Hash>(
    candidate: &[T],
    reference: &[T],
    max_n: usize,
    smoothing: Smoothing,
) -> f64 {
    assert!(max_n >= 1, "bleu: max_n must be at least 1");
    if candidate.is_empty() {
        return 0.0;
    }
    let order = max_n.min(candidate.len());
    let mut log_sum = 0.0;
    for n in 1..=order {
        let cand = ngram_counts(candidate, n);
        let refc = ngram_counts(reference, n);
        let total: usize = cand.values().sum();
        let matched: usize = cand
            .iter()
            .map(|(gram, &c)| c.min(refc.get(gram).copied().unwrap_or(0)))
            .sum();
        let p = match smoothing {
            Smoothing::AddOne => (matched as f64 + 1.0) / (total as f64 + 1.0),
            Smoothing::None => {
                if matched == 0 {
                    return 0.0;
                }
                matched as f64 / total as f64
            }
        };
        log_sum += p.ln();
    }
    let (c, r) = (candidate.len() as f64, reference.len() as f64);
    let bp = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    bp * (log_sum / order as f64).exp()
}

/// Unique n-grams over total n-grams across a corpus.
pub fn distinct_n<T: Eq + Hash, S: AsRef<[T]>>(corpus: &[S], n: usize) -> f64 {
    assert!(n >= 1, "distinct_n: n must be at least 1");
    let mut unique: HashSet<&[T]> = HashSet::new();
    let mut total = 0usize;
    for seq in corpus {
        let seq = seq.as_ref();
        if seq.len() >= n {
            for gram in seq.windows(n) {
                unique.insert(gram);
                total += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        unique.len() as f64 / total as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    /// Longest common subsequence by enumerating every subsequence of `a`.
    fn brute_lcs(a: &[u8], b: &[u8]) -> usize {
        let mut best = 0;
        for mask in 0u32..(1 << a.len()) {
            let sub: Vec<u8> = (0..a.len())
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| a[i])
                .collect();
            if sub.len() <= best {
                continue;
            }
            let mut it = b.iter();
            if sub.iter().all(|x| it.any(|y| y == x)) {
                best = sub.len();
            }
        }
        best
    }

    #[test]
    fn tokenize_examples() {
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("The cat sat."), vec!["the", "cat", "sat", "."]);
        assert_eq!(tokenize("A  b"), vec!["a", "b"]);
        assert_eq!(tokenize("x,y? (z)"), vec!["x", ",", "y", "?", "(", "z", ")"]);
    }

    #[test]
    fn detokenize_round_trip() {
        let t = tokenize("  Reverse the words:  cat dog! ");
        assert_eq!(tokenize(&detokenize(&t)), t);
    }

    #[test]
    fn lcs_examples() {
        assert_eq!(lcs_length(&toks("a b c"), &toks("a b c")), 3);
        assert_eq!(lcs_length(&toks("a b c"), &toks("x y")), 0);
        assert_eq!(lcs_length(&toks("a b c d"), &toks("a c b d")), 3);
        assert_eq!(brute_lcs(b"abcd", b"acbd"), 3);
    }

    #[test]
    fn rouge_examples() {
        assert_eq!(rouge_l(&toks("a b c"), &toks("a b c")), 1.0);
        assert_eq!(rouge_l(&toks("a b c d"), &toks("a c b d")), 0.75);
        assert_eq!(rouge_l(&toks(""), &toks("a")), 0.0);
        let s = rouge_l_scores(&toks("a b"), &toks("a b c d"));
        assert_eq!(s.precision, 1.0);
        assert_eq!(s.recall, 0.5);
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn bleu_examples() {
        let abc = toks("a b c d e");
        assert_eq!(bleu_with(&abc, &abc, 4, Smoothing::None), 1.0);
        assert_eq!(bleu(&toks(""), &abc, 4), 0.0);
        // Hand calculation: every (smoothed) precision is (m+1)/(t+1) = 1 because
        // "a", "b" and "a b" all occur in the reference; BP = exp(1 - 4/2).
        let v = bleu(&toks("a b"), &toks("a b c d"), 4);
        assert!((v - (-1.0f64).exp()).abs() < 1e-15, "{v}");
        // Unsmoothed: p1 = 2/3 (clip "a" to 1), p2 = 1/2, p3 = 0 -> 0.
        assert_eq!(bleu_with(&toks("a a b"), &toks("a b c"), 4, Smoothing::None), 0.0);
        let v = bleu_with(&toks("a a b"), &toks("a b c"), 2, Smoothing::None);
        assert!((v - (2.0f64 / 3.0 * 0.5).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn distinct_examples() {
        assert_eq!(distinct_n(&[toks("a b c d")], 1), 1.0);
        assert_eq!(distinct_n(&[toks("a a a a")], 1), 0.25);
        assert_eq!(distinct_n::<&str, Vec<&str>>(&[], 1), 0.0);
        assert_eq!(distinct_n(&[toks("a b"), toks("a b")], 2), 0.5);
    }

    proptest! {
        #[test]
        fn lcs_matches_enumeration(
            a in prop::collection::vec(0u8..4, 0..10),
            b in prop::collection::vec(0u8..4, 0..10),
        ) {
            prop_assert_eq!(lcs_length(&a, &b), brute_lcs(&a, &b));
            prop_assert_eq!(lcs_length(&a, &b), lcs_length(&b, &a));
        }

        #[test]
        fn scores_are_bounded(
            a in prop::collection::vec(0u8..6, 0..20),
            b in prop::collection::vec(0u8..6, 0..20),
            n in 1usize..5,
        ) {
            let r = rouge_l_scores(&a, &b);
            for v in [r.precision, r.recall, r.f1, bleu(&a, &b, n),
                      bleu_with(&a, &b, n, Smoothing::None), distinct_n(&[a.clone(), b.clone()], n)] {
                prop_assert!((0.0..=1.0).contains(&v), "{}", v);
            }
            let swapped = rouge_l_scores(&b, &a);
            prop_assert_eq!(r.precision, swapped.recall);
            prop_assert_eq!(r.f1, swapped.f1);
        }

        #[test]
        fn self_rouge_is_one(a in prop::collection::vec(0u8..6, 1..20)) {
            prop_assert_eq!(rouge_l(&a, &a), 1.0);
        }

        #[test]
        fn unsmoothed_bleu_one_iff_equal(
            a in prop::collection::vec(0u8..10, 1..12),
            b in prop::collection::vec(0u8..10, 1..12),
        ) {
            prop_assert_eq!(bleu_with(&a, &a, 4, Smoothing::None), 1.0);
            prop_assert_eq!(bleu_with(&a, &b, 4, Smoothing::None) == 1.0, a == b);
        }
    }
}
