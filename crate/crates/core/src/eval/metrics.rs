//! Reference-based text metrics, all over one shared tokenizer.

use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;
use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// ROUGE-L F-measure weight on recall.
pub const ROUGE_BETA: f64 = 1.2;

/// Lowercases, splits punctuation into its own tokens and splits on
/// whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"\w+|[^\w\s]").expect("valid"));
    let lower = text.to_lowercase();
    re.find_iter(&lower)
        .map(|m| m.as_str().to_string())
        .collect()
}

fn ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

fn check_pair(candidates: &[String], references: &[String]) -> Result<()> {
    if candidates.is_empty() {
        return Err(Error::EmptyCorpus("metric inputs"));
    }
    if candidates.len() != references.len() {
        return Err(Error::invalid(format!(
            "{} candidates but {} references",
            candidates.len(),
            references.len()
        )));
    }
    Ok(())
}

/// Corpus-level BLEU with uniform weights over orders 1..=n, no
/// smoothing, and the brevity penalty.
pub fn bleu_n(candidates: &[String], references: &[String], n: usize) -> Result<f64> {
    check_pair(candidates, references)?;
    if n == 0 {
        return Err(Error::invalid("BLEU order must be positive"));
    }
    let mut matches = vec![0usize; n];
    let mut totals = vec![0usize; n];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for (c, r) in candidates.iter().zip(references) {
        let ct = tokenize(c);
        let rt = tokenize(r);
        c_len += ct.len();
        r_len += rt.len();
        for order in 1..=n {
            let cg = ngrams(&ct, order);
            let rg = ngrams(&rt, order);
            totals[order - 1] += cg.values().sum::<usize>();
            matches[order - 1] += cg
                .iter()
                .map(|(g, &k)| k.min(rg.get(g).copied().unwrap_or(0)))
                .sum::<usize>();
        }
    }
    if matches.iter().zip(&totals).any(|(&m, &t)| m == 0 || t == 0) {
        return Ok(0.0);
    }
    let log_p: f64 = matches
        .iter()
        .zip(&totals)
        .map(|(&m, &t)| (m as f64 / t as f64).ln())
        .sum::<f64>()
        / n as f64;
    let bp = if c_len > r_len {
        1.0
    } else {
        (1.0 - r_len as f64 / c_len as f64).exp()
    };
    Ok(bp * log_p.exp())
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Mean per-example LCS F-measure with recall weight [`ROUGE_BETA`].
pub fn rouge_l(candidates: &[String], references: &[String]) -> Result<f64> {
    check_pair(candidates, references)?;
    let total: f64 = candidates
        .iter()
        .zip(references)
        .map(|(c, r)| {
            let ct = tokenize(c);
            let rt = tokenize(r);
            let l = lcs_len(&ct, &rt);
            if l == 0 {
                return 0.0;
            }
            let p = l as f64 / ct.len() as f64;
            let rec = l as f64 / rt.len() as f64;
            let b2 = ROUGE_BETA * ROUGE_BETA;
            (1.0 + b2) * p * rec / (rec + b2 * p)
        })
        .sum();
    Ok(total / candidates.len() as f64)
}

fn stemmer() -> &'static Stemmer {
    static S: OnceLock<Stemmer> = OnceLock::new();
    S.get_or_init(|| Stemmer::create(Algorithm::English))
}

/// Aligns candidate tokens to reference tokens: exact matches first, then
/// stem matches; each candidate token (left to right) takes the leftmost
/// free reference token. Returns `(candidate, reference)` index pairs.
pub fn meteor_alignment(cand: &[String], reference: &[String]) -> Vec<(usize, usize)> {
    let mut ref_used = vec![false; reference.len()];
    let mut cand_used = vec![false; cand.len()];
    let mut pairs = Vec::new();
    let c_stems: Vec<String> = cand
        .iter()
        .map(|t| stemmer().stem(t).into_owned())
        .collect();
    let r_stems: Vec<String> = reference
        .iter()
        .map(|t| stemmer().stem(t).into_owned())
        .collect();
    for stage in 0..2 {
        for (i, c) in cand.iter().enumerate() {
            if cand_used[i] {
                continue;
            }
            let hit = (0..reference.len()).find(|&j| {
                !ref_used[j]
                    && if stage == 0 {
                        reference[j] == *c
                    } else {
                        r_stems[j] == c_stems[i]
                    }
            });
            if let Some(j) = hit {
                ref_used[j] = true;
                cand_used[i] = true;
                pairs.push((i, j));
            }
        }
    }
    pairs.sort_unstable();
    pairs
}

fn meteor_one(cand: &[String], reference: &[String]) -> f64 {
    let pairs = meteor_alignment(cand, reference);
    let m = pairs.len();
    if m == 0 {
        return 0.0;
    }
    let chunks = 1 + pairs
        .windows(2)
        .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
        .count();
    let p = m as f64 / cand.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
    f_mean * (1.0 - penalty)
}

/// Mean per-example METEOR with exact and stem matching only.
pub fn meteor_simplified(candidates: &[String], references: &[String]) -> Result<f64> {
    check_pair(candidates, references)?;
    let total: f64 = candidates
        .iter()
        .zip(references)
        .map(|(c, r)| meteor_one(&tokenize(c), &tokenize(r)))
        .sum();
    Ok(total / candidates.len() as f64)
}

/// Unique n-grams over total n-grams, pooled over all texts (n-grams do
/// not cross text boundaries).
pub fn distinct_n(texts: &[String], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("n must be positive"));
    }
    let tokens: Vec<Vec<String>> = texts.iter().map(|t| tokenize(t)).collect();
    let mut unique: HashMap<&[String], ()> = HashMap::new();
    let mut total = 0;
    for t in &tokens {
        if t.len() >= n {
            for w in t.windows(n) {
                unique.insert(w, ());
                total += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::EmptyCorpus(
            "no text is long enough for the n-gram order",
        ));
    }
    Ok(unique.len() as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub meteor: f64,
    pub distinct1: f64,
    pub distinct2: f64,
    pub distinct3: f64,
    pub n_examples: usize,
}

impl MetricReport {
    pub fn compute(predictions: &[String], references: &[String]) -> Result<Self> {
        check_pair(predictions, references)?;
        let distinct = |n| {
            distinct_n(predictions, n).or_else(|e| match e {
                Error::EmptyCorpus(_) => Ok(0.0),
                e => Err(e),
            })
        };
        Ok(Self {
            bleu1: bleu_n(predictions, references, 1)?,
            bleu2: bleu_n(predictions, references, 2)?,
            bleu4: bleu_n(predictions, references, 4)?,
            rouge_l: rouge_l(predictions, references)?,
            meteor: meteor_simplified(predictions, references)?,
            distinct1: distinct(1)?,
            distinct2: distinct(2)?,
            distinct3: distinct(3)?,
            n_examples: predictions.len(),
        })
    }

    /// Plain-text table with scores ×100.
    pub fn table(&self) -> String {
        let rows = [
            ("BLEU-1", self.bleu1),
            ("BLEU-2", self.bleu2),
            ("BLEU-4", self.bleu4),
            ("ROUGE-L", self.rouge_l),
            ("METEOR*", self.meteor),
            ("Dist-1", self.distinct1),
            ("Dist-2", self.distinct2),
            ("Dist-3", self.distinct3),
        ];
        let mut out = format!("{:<10}{:>8}\n", "metric", "x100");
        for (name, v) in rows {
            out.push_str(&format!("{name:<10}{:>8.2}\n", v * 100.0));
        }
        out.push_str(&format!("n = {}\n", self.n_examples));
        out
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn tokenizer() {
        assert_eq!(tokenize("Hello, World!"), s(&["hello", ",", "world", "!"]));
    }

    #[test]
    fn bleu_examples() {
        assert!((bleu_n(&s(&["a b c d"]), &s(&["a b c d"]), 4).unwrap() - 1.0).abs() < 1e-12);
        assert!((bleu_n(&s(&["a b c d"]), &s(&["a b x d"]), 1).unwrap() - 0.75).abs() < 1e-12);
        assert_eq!(bleu_n(&s(&["a b"]), &s(&["c d"]), 1).unwrap(), 0.0);
        assert!(bleu_n(&[], &[], 1).is_err());
        // Short candidate: BP = exp(1 - 4/2).
        let b = bleu_n(&s(&["a b"]), &s(&["a b c d"]), 1).unwrap();
        assert!((b - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn rouge_examples() {
        assert!((rouge_l(&s(&["a b c"]), &s(&["a b c"])).unwrap() - 1.0).abs() < 1e-12);
        assert!((rouge_l(&s(&["a b c"]), &s(&["a x c"])).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(rouge_l(&s(&["a b"]), &s(&["c d"])).unwrap(), 0.0);
    }

    #[test]
    fn meteor_examples() {
        assert!((meteor_simplified(&s(&["hello"]), &s(&["hello"])).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(meteor_simplified(&s(&["a"]), &s(&["b"])).unwrap(), 0.0);
        let pairs = meteor_alignment(&s(&["running"]), &s(&["runs"]));
        assert_eq!(pairs, vec![(0, 0)]);
    }

    #[test]
    fn distinct_examples() {
        assert!((distinct_n(&s(&["a a b"]), 1).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(distinct_n(&s(&["a b c"]), 1).unwrap(), 1.0);
        assert!((distinct_n(&s(&["x x x x x"]), 1).unwrap() - 0.2).abs() < 1e-12);
        assert!(distinct_n(&s(&["a"]), 2).is_err());
    }

    #[test]
    fn report_table() {
        let r = MetricReport::compute(&s(&["a b c d"]), &s(&["a b c d"])).unwrap();
        assert!(r.table().contains("BLEU-4"));
        assert_eq!(r.n_examples, 1);
    }

    proptest! {
        #[test]
        fn metrics_are_bounded(c in "[a-d ]{0,20}", r in "[a-d ]{1,20}") {
            let c = vec![c];
            let r = vec![r];
            for v in [
                bleu_n(&c, &r, 2).unwrap(),
                rouge_l(&c, &r).unwrap(),
                meteor_simplified(&c, &r).unwrap(),
            ] {
                prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
            }
        }
    }
}
