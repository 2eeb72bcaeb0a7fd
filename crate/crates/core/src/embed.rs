//! Skip-gram word embeddings trained with negative sampling.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, WeightedAliasIndex};
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::io::{check_id, parse_f64, read_to_string, write_atomic};
use crate::{Error, Result};

/// Words ordered by descending corpus frequency, ties broken lexicographically.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    counts: Vec<u64>,
    word_to_id: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from `(word, count)` pairs, applying the
    /// canonical ordering.
    pub fn from_counts(counts: impl IntoIterator<Item = (String, u64)>) -> Self {
        let mut entries: Vec<(String, u64)> = counts.into_iter().collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let word_to_id = entries
            .iter()
            .enumerate()
            .map(|(i, (w, _))| (w.clone(), i))
            .collect();
        let (words, counts) = entries.into_iter().unzip();
        Vocabulary {
            words,
            counts,
            word_to_id,
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.word_to_id.get(word).copied()
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    /// Maps tokens to ids, dropping out-of-vocabulary tokens.
    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().filter_map(|t| self.id(t)).collect()
    }
}

pub fn build_vocabulary(documents: &[Document], min_count: usize) -> Result<Vocabulary> {
    if documents.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for doc in documents {
        for t in &doc.tokens {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    let vocab = Vocabulary::from_counts(
        counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count as u64)
            .map(|(w, c)| (w.to_string(), c)),
    );
    if vocab.is_empty() {
        return Err(Error::EmptyVocabulary { min_count });
    }
    Ok(vocab)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SkipgramHyperparams {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub initial_lr: f64,
    pub min_count: usize,
    pub seed: u64,
}

impl Default for SkipgramHyperparams {
    fn default() -> Self {
        SkipgramHyperparams {
            dim: 300,
            window: 5,
            negatives: 10,
            epochs: 5,
            initial_lr: 0.025,
            min_count: 5,
            seed: 1,
        }
    }
}

impl SkipgramHyperparams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dim", self.dim),
            ("window", self.window),
            ("negatives", self.negatives),
            ("min_count", self.min_count),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("skip-gram {name} must be positive")));
            }
        }
        if !(self.initial_lr.is_finite() && self.initial_lr > 0.0) {
            return Err(Error::Config("skip-gram initial_lr must be positive".into()));
        }
        Ok(())
    }
}

/// Draws word ids from the unigram distribution raised to the 3/4 power.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    table: WeightedAliasIndex<f64>,
}

impl NegativeSampler {
    pub fn new(vocab: &Vocabulary) -> Self {
        let weights = vocab.counts().iter().map(|&c| (c as f64).powf(0.75)).collect();
        NegativeSampler {
            table: WeightedAliasIndex::new(weights).expect("vocabulary is non-empty with positive counts"),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.table.sample(rng)
    }
}

pub fn negative_sample<R: Rng + ?Sized>(vocab: &Vocabulary, rng: &mut R, k: usize) -> Vec<usize> {
    let sampler = NegativeSampler::new(vocab);
    (0..k).map(|_| sampler.sample(rng)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub dim: usize,
    /// Row-major `V x dim` word embeddings.
    pub input_vectors: Vec<f64>,
    /// Row-major `V x dim` context vectors, only used during training.
    pub output_vectors: Vec<f64>,
}

impl EmbeddingMatrix {
    /// Input vectors uniform in `[-0.5/dim, 0.5/dim]`, output vectors zero.
    pub fn initialize<R: Rng + ?Sized>(vocab_len: usize, dim: usize, rng: &mut R) -> Self {
        let half = 0.5 / dim as f64;
        EmbeddingMatrix {
            dim,
            input_vectors: (0..vocab_len * dim).map(|_| rng.gen_range(-half..=half)).collect(),
            output_vectors: vec![0.0; vocab_len * dim],
        }
    }

    pub fn len(&self) -> usize {
        self.input_vectors.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.input_vectors.is_empty()
    }

    pub fn vector(&self, id: usize) -> &[f64] {
        &self.input_vectors[id * self.dim..(id + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.input_vectors.chunks_exact(self.dim)
    }

    pub fn is_finite(&self) -> bool {
        self.input_vectors.iter().chain(&self.output_vectors).all(|v| v.is_finite())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Negative log-likelihood of one (center, word) pair with score `s`:
/// `-ln σ(s)` for an observed context word, `-ln σ(-s)` for a negative.
pub fn pair_loss(score: f64, positive: bool) -> f64 {
    if positive {
        softplus(-score)
    } else {
        softplus(score)
    }
}

/// The negative-sampling objective `ln σ(u_ctx·v) + Σ ln σ(-u_neg·v)`.
pub fn sgns_objective(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> f64 {
    -pair_loss(dot(context, center), true)
        - negatives
            .iter()
            .map(|u| pair_loss(dot(u, center), false))
            .sum::<f64>()
}

/// Gradients of [`sgns_objective`] with respect to every vector it touches.
#[derive(Debug, Clone, PartialEq)]
pub struct SgnsGradients {
    pub center: Vec<f64>,
    pub context: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

// d/ds ln σ(s) = 1 - σ(s); d/ds ln σ(-s) = -σ(s)
fn pair_coefficient(score: f64, positive: bool) -> f64 {
    if positive {
        1.0 - sigmoid(score)
    } else {
        -sigmoid(score)
    }
}

pub fn sgns_gradients(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> SgnsGradients {
    let g_ctx = pair_coefficient(dot(context, center), true);
    let mut grad_center: Vec<f64> = context.iter().map(|u| g_ctx * u).collect();
    let mut grad_negs = Vec::with_capacity(negatives.len());
    for u in negatives {
        let g = pair_coefficient(dot(u, center), false);
        for (gc, ui) in grad_center.iter_mut().zip(u.iter()) {
            *gc += g * ui;
        }
        grad_negs.push(center.iter().map(|v| g * v).collect());
    }
    SgnsGradients {
        center: grad_center,
        context: center.iter().map(|v| g_ctx * v).collect(),
        negatives: grad_negs,
    }
}

/// One gradient-ascent step for a (center, context, negatives) triple,
/// with all gradients taken at the pre-step parameters.
fn sgns_step(
    emb: &mut EmbeddingMatrix,
    center: usize,
    targets: &[(usize, bool)],
    lr: f64,
    scratch: &mut Vec<f64>,
    coeffs: &mut Vec<f64>,
) {
    let d = emb.dim;
    let v = &emb.input_vectors[center * d..(center + 1) * d];
    coeffs.clear();
    for &(t, positive) in targets {
        let u = &emb.output_vectors[t * d..(t + 1) * d];
        coeffs.push(pair_coefficient(dot(u, v), positive) * lr);
    }
    scratch.clear();
    scratch.resize(d, 0.0);
    for (&(t, _), &g) in targets.iter().zip(coeffs.iter()) {
        let u = &emb.output_vectors[t * d..(t + 1) * d];
        for (s, ui) in scratch.iter_mut().zip(u) {
            *s += g * ui;
        }
    }
    let v: Vec<f64> = v.to_vec();
    for (&(t, _), &g) in targets.iter().zip(coeffs.iter()) {
        let u = &mut emb.output_vectors[t * d..(t + 1) * d];
        for (ui, vi) in u.iter_mut().zip(&v) {
            *ui += g * vi;
        }
    }
    let v = &mut emb.input_vectors[center * d..(center + 1) * d];
    for (vi, s) in v.iter_mut().zip(scratch.iter()) {
        *vi += s;
    }
}

/// Trains skip-gram embeddings with negative sampling.
///
/// Single-threaded and fully determined by `hp.seed`. Each center word uses
/// a window shrunk uniformly to `1..=hp.window`; the learning rate decays
/// linearly per processed center token down to `initial_lr * 1e-4`.
/// Out-of-vocabulary tokens are skipped before windows are formed.
pub fn train_skipgram(
    documents: &[Document],
    vocab: &Vocabulary,
    hp: &SkipgramHyperparams,
) -> Result<EmbeddingMatrix> {
    hp.validate()?;
    if documents.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut emb = EmbeddingMatrix::initialize(vocab.len(), hp.dim, &mut rng);
    let sampler = NegativeSampler::new(vocab);

    let encoded: Vec<Vec<usize>> = documents.iter().map(|d| vocab.encode(&d.tokens)).collect();
    let tokens_per_epoch: usize = encoded.iter().map(Vec::len).sum();
    if tokens_per_epoch == 0 {
        return Err(Error::EmptyCorpus);
    }
    let total = (tokens_per_epoch * hp.epochs) as f64;
    let min_lr = hp.initial_lr * 1e-4;

    let mut processed = 0usize;
    let mut targets = Vec::with_capacity(hp.negatives + 1);
    let mut scratch = Vec::with_capacity(hp.dim);
    let mut coeffs = Vec::with_capacity(hp.negatives + 1);
    for _ in 0..hp.epochs {
        for ids in &encoded {
            for (i, &center) in ids.iter().enumerate() {
                let lr = (hp.initial_lr * (1.0 - processed as f64 / total)).max(min_lr);
                processed += 1;
                let b = rng.gen_range(1..=hp.window);
                let lo = i.saturating_sub(b);
                let hi = (i + b).min(ids.len() - 1);
                for j in lo..=hi {
                    if j == i {
                        continue;
                    }
                    let ctx = ids[j];
                    targets.clear();
                    targets.push((ctx, true));
                    for _ in 0..hp.negatives {
                        let n = sampler.sample(&mut rng);
                        if n != ctx {
                            targets.push((n, false));
                        }
                    }
                    sgns_step(&mut emb, center, &targets, lr, &mut scratch, &mut coeffs);
                }
            }
        }
    }
    debug_assert!(emb.is_finite());
    Ok(emb)
}

pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// The `n` words most cosine-similar to `word`, excluding the word itself.
/// Zero vectors are never returned as neighbours.
pub fn nearest_words(
    emb: &EmbeddingMatrix,
    vocab: &Vocabulary,
    word: &str,
    n: usize,
) -> Result<Vec<(String, f64)>> {
    let q = vocab.id(word).ok_or_else(|| Error::UnknownWord(word.to_string()))?;
    let query = emb.vector(q);
    let mut scored: Vec<(usize, f64)> = (0..vocab.len())
        .filter(|&i| i != q)
        .filter_map(|i| cosine(query, emb.vector(i)).map(|s| (i, s)))
        .collect();
    scored.sort_by(|a, b| {
        b.1.total_cmp(&a.1)
            .then_with(|| vocab.word(a.0).cmp(vocab.word(b.0)))
    });
    Ok(scored
        .into_iter()
        .take(n)
        .map(|(i, s)| (vocab.word(i).to_string(), s))
        .collect())
}

/// Writes named vectors as text: a `V D` header line, then
/// `name v_1 ... v_D` per row with six decimals.
pub fn write_vector_file<'a>(
    path: &Path,
    dim: usize,
    rows: impl IntoIterator<Item = (&'a str, &'a [f64])>,
) -> Result<()> {
    let mut body = String::new();
    let mut count = 0usize;
    for (name, v) in rows {
        check_id(name, &[' ', '\t', '\n', '\r'])?;
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: v.len(),
            });
        }
        body.push_str(name);
        for x in v {
            body.push_str(&format!(" {x:.6}"));
        }
        body.push('\n');
        count += 1;
    }
    let out = format!("{count} {dim}\n{body}");
    write_atomic(path, out.as_bytes())
}

pub fn read_vector_file(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::parse(path, 1, "missing header"))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|f| f.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::parse(path, 1, "header must be `V D`"))?;
    let [count, dim] = dims[..] else {
        return Err(Error::parse(path, 1, "header must be `V D`"));
    };
    let mut names = Vec::with_capacity(count);
    let mut rows = Vec::with_capacity(count);
    for (i, line) in lines.enumerate() {
        let mut fields = line.split(' ');
        let name = fields.next().unwrap_or_default();
        let v = fields
            .map(|f| parse_f64(path, i + 2, f))
            .collect::<Result<Vec<_>>>()?;
        if v.len() != dim {
            return Err(Error::parse(
                path,
                i + 2,
                format!("expected {dim} values, found {}", v.len()),
            ));
        }
        names.push(name.to_string());
        rows.push(v);
    }
    if names.len() != count {
        return Err(Error::parse(
            path,
            1,
            format!("header declares {count} rows, file has {}", names.len()),
        ));
    }
    Ok((names, rows))
}

pub fn write_embeddings(path: &Path, vocab: &Vocabulary, emb: &EmbeddingMatrix) -> Result<()> {
    write_vector_file(
        path,
        emb.dim,
        vocab.words().iter().map(String::as_str).zip(emb.rows()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn docs(token_lists: &[&[&str]]) -> Vec<Document> {
        token_lists
            .iter()
            .enumerate()
            .map(|(i, ts)| Document {
                id: i.to_string(),
                tokens: ts.iter().map(|s| s.to_string()).collect(),
            })
            .collect()
    }

    /// Documents drawn from two disjoint word blocks.
    pub(crate) fn two_block_corpus(n_docs: usize, len: usize, seed: u64) -> Vec<Document> {
        let blocks = [["alpha", "beta"], ["gamma", "delta"]];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n_docs)
            .map(|i| Document {
                id: i.to_string(),
                tokens: (0..len)
                    .map(|_| blocks[i % 2][rng.gen_range(0..2)].to_string())
                    .collect(),
            })
            .collect()
    }

    #[test]
    fn vocabulary_threshold_and_order() {
        let v = build_vocabulary(&docs(&[&["a", "a", "b"]]), 2).unwrap();
        assert_eq!(v.words(), ["a"]);

        let v = build_vocabulary(&docs(&[&["x"]]), 1).unwrap();
        assert_eq!(v.words(), ["x"]);
        assert_eq!(v.counts(), [1]);

        let v = build_vocabulary(&docs(&[&["b", "b", "a", "a"]]), 1).unwrap();
        assert_eq!(v.words(), ["a", "b"]);

        let v = build_vocabulary(&docs(&[&["z", "y", "y"]]), 1).unwrap();
        assert_eq!(v.words(), ["y", "z"]);
        for (i, w) in v.words().iter().enumerate() {
            assert_eq!(v.id(w), Some(i));
        }
    }

    #[test]
    fn vocabulary_errors() {
        assert!(matches!(build_vocabulary(&[], 1), Err(Error::EmptyCorpus)));
        assert!(matches!(
            build_vocabulary(&docs(&[&["a"]]), 2),
            Err(Error::EmptyVocabulary { min_count: 2 })
        ));
    }

    #[test]
    fn single_word_vocabulary_samples_only_itself() {
        let v = build_vocabulary(&docs(&[&["only"]]), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(negative_sample(&v, &mut rng, 100).iter().all(|&i| i == 0));
    }

    #[test]
    fn equal_counts_sample_uniformly() {
        let v = Vocabulary::from_counts([("a".to_string(), 5), ("b".to_string(), 5)]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let ones = negative_sample(&v, &mut rng, n).iter().filter(|&&i| i == 1).count() as f64;
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((ones - n as f64 / 2.0).abs() < 3.0 * sigma);
    }

    #[test]
    fn pair_loss_is_symmetric_in_label_and_sign() {
        for s in [-30.0, -2.5, -1e-3, 0.0, 0.7, 4.0, 40.0] {
            assert_eq!(pair_loss(s, true), pair_loss(-s, false));
            assert!(pair_loss(s, true).is_finite());
        }
        assert!((pair_loss(0.0, true) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let corpus = two_block_corpus(4, 6, 1);
        let vocab = build_vocabulary(&corpus, 1).unwrap();
        let hp = SkipgramHyperparams { dim: 8, epochs: 0, min_count: 1, ..Default::default() };
        let emb = train_skipgram(&corpus, &vocab, &hp).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
        assert_eq!(emb, EmbeddingMatrix::initialize(vocab.len(), 8, &mut rng));
        let bound = 0.5 / 8.0;
        assert!(emb.input_vectors.iter().all(|v| v.abs() <= bound));
        assert!(emb.output_vectors.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn training_is_deterministic_and_finite() {
        let corpus = two_block_corpus(20, 8, 2);
        let vocab = build_vocabulary(&corpus, 1).unwrap();
        let hp = SkipgramHyperparams { dim: 16, epochs: 20, min_count: 1, seed: 9, ..Default::default() };
        let a = train_skipgram(&corpus, &vocab, &hp).unwrap();
        let b = train_skipgram(&corpus, &vocab, &hp).unwrap();
        assert_eq!(a, b);
        assert!(a.is_finite());
        let c = train_skipgram(&corpus, &vocab, &SkipgramHyperparams { seed: 10, ..hp }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn training_rejects_bad_input() {
        let corpus = two_block_corpus(2, 4, 2);
        let vocab = build_vocabulary(&corpus, 1).unwrap();
        let hp = SkipgramHyperparams { dim: 0, ..Default::default() };
        assert!(matches!(train_skipgram(&corpus, &vocab, &hp), Err(Error::Config(_))));
        let hp = SkipgramHyperparams { dim: 4, min_count: 1, ..Default::default() };
        assert!(matches!(train_skipgram(&[], &vocab, &hp), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn two_block_neighbours() {
        let corpus = two_block_corpus(40, 10, 5);
        let vocab = build_vocabulary(&corpus, 1).unwrap();
        let hp = SkipgramHyperparams {
            dim: 20,
            epochs: 500,
            negatives: 3,
            min_count: 1,
            seed: 4,
            ..Default::default()
        };
        let emb = train_skipgram(&corpus, &vocab, &hp).unwrap();
        let v = |w: &str| emb.vector(vocab.id(w).unwrap());
        let ab = cosine(v("alpha"), v("beta")).unwrap();
        let ag = cosine(v("alpha"), v("gamma")).unwrap();
        assert!(ab > ag, "within {ab} vs across {ag}");

        let nn = nearest_words(&emb, &vocab, "alpha", 1).unwrap();
        assert_eq!(nn[0].0, "beta");
        let all = nearest_words(&emb, &vocab, "alpha", 10).unwrap();
        assert_eq!(all.len(), 3);
        assert!(all.iter().all(|(w, _)| w != "alpha"));
        assert!(all.windows(2).all(|p| p[0].1 >= p[1].1));
        assert!(matches!(
            nearest_words(&emb, &vocab, "omega", 1),
            Err(Error::UnknownWord(_))
        ));
    }

    #[test]
    fn vector_file_round_trip() {
        let corpus = two_block_corpus(4, 6, 1);
        let vocab = build_vocabulary(&corpus, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let emb = EmbeddingMatrix::initialize(vocab.len(), 3, &mut rng);
        let f = tempfile::NamedTempFile::new().unwrap();
        write_embeddings(f.path(), &vocab, &emb).unwrap();
        let text = std::fs::read_to_string(f.path()).unwrap();
        assert!(text.starts_with("4 3\n"));
        let (names, rows) = read_vector_file(f.path()).unwrap();
        assert_eq!(names, vocab.words());
        for (r, v) in rows.iter().zip(emb.rows()) {
            for (a, b) in r.iter().zip(v) {
                assert!((a - b).abs() <= 5e-7);
            }
        }
    }
}
