//! LDA topics via collapsed Gibbs sampling, plus frequent-word summaries
//! for tweet clusters.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LdaConfig {
    pub num_topics: usize,
    pub alpha: f64,
    pub beta: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl LdaConfig {
    /// `alpha = 50 / K`, `beta = 0.01`, 500 sweeps.
    pub fn new(num_topics: usize) -> Self {
        LdaConfig {
            num_topics,
            alpha: 50.0 / num_topics.max(1) as f64,
            beta: 0.01,
            iterations: 500,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_topics == 0 || self.iterations == 0 {
            return Err(Error::Config("LDA needs num_topics >= 1 and iterations >= 1".into()));
        }
        if !(self.alpha > 0.0 && self.beta > 0.0) {
            return Err(Error::Config("LDA alpha and beta must be positive".into()));
        }
        Ok(())
    }
}

/// Sampler counts, exposed to observers after every sweep.
#[derive(Debug, Clone)]
pub struct GibbsState {
    pub num_topics: usize,
    pub vocab_size: usize,
    /// Word ids per document.
    pub tokens: Vec<Vec<usize>>,
    /// Topic per token, parallel to `tokens`.
    pub assignments: Vec<Vec<usize>>,
    /// `D x K` document-topic counts.
    pub doc_topic: Vec<Vec<u32>>,
    /// `K x V` topic-word counts.
    pub topic_word: Vec<Vec<u32>>,
    /// Tokens per topic.
    pub topic_total: Vec<u32>,
}

impl GibbsState {
    /// Checks that every count table agrees with the token assignments.
    pub fn counts_consistent(&self) -> bool {
        let k = self.num_topics;
        let mut doc_topic = vec![vec![0u32; k]; self.tokens.len()];
        let mut topic_word = vec![vec![0u32; self.vocab_size]; k];
        for (d, (ws, zs)) in self.tokens.iter().zip(&self.assignments).enumerate() {
            if ws.len() != zs.len() {
                return false;
            }
            for (&w, &z) in ws.iter().zip(zs) {
                doc_topic[d][z] += 1;
                topic_word[z][w] += 1;
            }
        }
        let totals_ok = self
            .topic_word
            .iter()
            .zip(&self.topic_total)
            .all(|(row, &t)| row.iter().sum::<u32>() == t);
        let lengths_ok = self
            .doc_topic
            .iter()
            .zip(&self.tokens)
            .all(|(row, ws)| row.iter().sum::<u32>() as usize == ws.len());
        totals_ok && lengths_ok && doc_topic == self.doc_topic && topic_word == self.topic_word
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopicModel {
    /// Model vocabulary in lexicographic order.
    pub words: Vec<String>,
    /// `K x V` smoothed topic-word probabilities.
    pub phi: Vec<Vec<f64>>,
    /// `D x K` smoothed document-topic probabilities.
    pub theta: Vec<Vec<f64>>,
    pub token_assignments: Vec<Vec<usize>>,
}

impl TopicModel {
    pub fn num_topics(&self) -> usize {
        self.phi.len()
    }

    /// Most probable topic per document, ties to the lowest topic id.
    pub fn dominant_topics(&self) -> Vec<usize> {
        self.theta
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (k, &p)| if p > best.1 { (k, p) } else { best })
                    .0
            })
            .collect()
    }
}

pub fn fit_lda(docs: &[Document], cfg: &LdaConfig) -> Result<TopicModel> {
    fit_lda_observed(docs, cfg, |_| {})
}

/// Collapsed Gibbs sampling; `observer` sees the counts after every sweep.
pub fn fit_lda_observed(
    docs: &[Document],
    cfg: &LdaConfig,
    mut observer: impl FnMut(&GibbsState),
) -> Result<TopicModel> {
    cfg.validate()?;
    let words: Vec<String> = docs
        .iter()
        .flat_map(|d| d.tokens.iter().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if docs.is_empty() || words.is_empty() {
        return Err(Error::EmptyData);
    }
    let index: HashMap<&str, usize> = words.iter().enumerate().map(|(i, w)| (w.as_str(), i)).collect();
    let k = cfg.num_topics;
    let v = words.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let tokens: Vec<Vec<usize>> = docs
        .iter()
        .map(|d| d.tokens.iter().map(|t| index[t.as_str()]).collect())
        .collect();
    let mut state = GibbsState {
        num_topics: k,
        vocab_size: v,
        assignments: Vec::with_capacity(docs.len()),
        doc_topic: vec![vec![0; k]; docs.len()],
        topic_word: vec![vec![0; v]; k],
        topic_total: vec![0; k],
        tokens,
    };
    for (d, ws) in state.tokens.iter().enumerate() {
        let zs: Vec<usize> = ws.iter().map(|_| rng.gen_range(0..k)).collect();
        for (&w, &z) in ws.iter().zip(&zs) {
            state.doc_topic[d][z] += 1;
            state.topic_word[z][w] += 1;
            state.topic_total[z] += 1;
        }
        state.assignments.push(zs);
    }

    let (alpha, beta) = (cfg.alpha, cfg.beta);
    let v_beta = v as f64 * beta;
    let mut weights = vec![0.0; k];
    for _ in 0..cfg.iterations {
        for d in 0..state.tokens.len() {
            for i in 0..state.tokens[d].len() {
                let w = state.tokens[d][i];
                let old = state.assignments[d][i];
                state.doc_topic[d][old] -= 1;
                state.topic_word[old][w] -= 1;
                state.topic_total[old] -= 1;

                let mut total = 0.0;
                for (t, slot) in weights.iter_mut().enumerate() {
                    let p = (state.doc_topic[d][t] as f64 + alpha)
                        * (state.topic_word[t][w] as f64 + beta)
                        / (state.topic_total[t] as f64 + v_beta);
                    total += p;
                    *slot = total;
                }
                let u = rng.gen::<f64>() * total;
                let new = weights.iter().position(|&c| u < c).unwrap_or(k - 1);

                state.assignments[d][i] = new;
                state.doc_topic[d][new] += 1;
                state.topic_word[new][w] += 1;
                state.topic_total[new] += 1;
            }
        }
        observer(&state);
    }

    let phi = (0..k)
        .map(|t| {
            let denom = state.topic_total[t] as f64 + v_beta;
            state.topic_word[t].iter().map(|&c| (c as f64 + beta) / denom).collect()
        })
        .collect();
    let k_alpha = k as f64 * alpha;
    let theta = state
        .doc_topic
        .iter()
        .zip(&state.tokens)
        .map(|(row, ws)| {
            let denom = ws.len() as f64 + k_alpha;
            row.iter().map(|&c| (c as f64 + alpha) / denom).collect()
        })
        .collect();
    Ok(TopicModel {
        words,
        phi,
        theta,
        token_assignments: state.assignments,
    })
}

/// The `n` highest-probability words of a topic, ties lexicographic.
/// Returns every word when `n` exceeds the vocabulary.
pub fn top_words(model: &TopicModel, topic: usize, n: usize) -> Result<Vec<(String, f64)>> {
    let row = model.phi.get(topic).ok_or_else(|| {
        Error::Config(format!("topic {topic} out of range for {} topics", model.num_topics()))
    })?;
    let mut ranked: Vec<(usize, f64)> = row.iter().copied().enumerate().collect();
    // words are stored sorted, so index order is lexicographic order
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked
        .into_iter()
        .take(n)
        .map(|(i, p)| (model.words[i].clone(), p))
        .collect())
}

/// The `n` most frequent tokens with their counts, excluding `stopset`.
/// Ordered by descending count, ties lexicographic.
pub fn frequent_word_counts(docs: &[Document], n: usize, stopset: &BTreeSet<String>) -> Vec<(String, u64)> {
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for t in docs.iter().flat_map(|d| &d.tokens) {
        if !stopset.contains(t) {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    ranked
        .into_iter()
        .take(n)
        .map(|(w, c)| (w.to_string(), c))
        .collect()
}

pub fn top_frequent_words(docs: &[Document], n: usize, stopset: &BTreeSet<String>) -> Vec<String> {
    frequent_word_counts(docs, n, stopset)
        .into_iter()
        .map(|(w, _)| w)
        .collect()
}

/// Topics and frequent words for one tweet cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSummary {
    pub cluster: usize,
    pub document_count: usize,
    /// Per topic, the top `(word, weight)` pairs.
    pub topics: Vec<Vec<(String, f64)>>,
    pub frequent_words: Vec<(String, u64)>,
    /// Why LDA was not fitted, when it was not.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryParams {
    pub words_per_topic: usize,
    pub frequent_words: usize,
}

/// Fits LDA on one cluster's documents. Clusters with fewer documents than
/// topics, or with no tokens, are skipped and say so.
pub fn summarize_cluster(
    cluster: usize,
    docs: &[Document],
    cfg: &LdaConfig,
    params: &SummaryParams,
) -> Result<TopicSummary> {
    let frequent_words = frequent_word_counts(docs, params.frequent_words, &BTreeSet::new());
    let mut summary = TopicSummary {
        cluster,
        document_count: docs.len(),
        topics: Vec::new(),
        frequent_words,
        skipped: None,
    };
    if docs.len() < cfg.num_topics {
        summary.skipped = Some(format!(
            "{} documents, fewer than {} topics",
            docs.len(),
            cfg.num_topics
        ));
        return Ok(summary);
    }
    if docs.iter().all(|d| d.tokens.is_empty()) {
        summary.skipped = Some("no tokens".into());
        return Ok(summary);
    }
    let cluster_cfg = LdaConfig {
        seed: cfg.seed ^ cluster as u64,
        ..*cfg
    };
    let model = fit_lda(docs, &cluster_cfg)?;
    summary.topics = (0..cfg.num_topics)
        .map(|t| top_words(&model, t, params.words_per_topic))
        .collect::<Result<_>>()?;
    Ok(summary)
}

/// Summarizes every cluster `0..k`, fitting clusters on worker threads.
/// Output order and content do not depend on the thread count.
pub fn summarize_clusters(
    clusters: &[Vec<Document>],
    cfg: &LdaConfig,
    params: &SummaryParams,
) -> Result<Vec<TopicSummary>> {
    let threads = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(clusters.len().max(1));
    let chunk = clusters.len().div_ceil(threads).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = clusters
            .chunks(chunk)
            .enumerate()
            .map(|(c, group)| {
                s.spawn(move || {
                    group
                        .iter()
                        .enumerate()
                        .map(|(i, docs)| summarize_cluster(c * chunk + i, docs, cfg, params))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        let mut out = Vec::with_capacity(clusters.len());
        for h in handles {
            out.extend(h.join().expect("topic worker panicked")?);
        }
        Ok(out)
    })
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

    fn disjoint_corpus(seed: u64, per_group: usize, len: usize) -> (Vec<Document>, Vec<usize>) {
        let a = ["oil", "energy", "crude", "libya", "opec", "barrel"];
        let b = ["eps", "sales", "quarterly", "earnings", "beats", "misses"];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        let mut labels = Vec::new();
        for i in 0..2 * per_group {
            let g = i % 2;
            let block = if g == 0 { &a } else { &b };
            out.push(Document {
                id: i.to_string(),
                tokens: (0..len).map(|_| block[rng.gen_range(0..block.len())].to_string()).collect(),
            });
            labels.push(g);
        }
        (out, labels)
    }

    #[test]
    fn single_topic_is_smoothed_frequency() {
        let d = docs(&[&["a", "b", "a"], &["c", "a"]]);
        let cfg = LdaConfig { num_topics: 1, alpha: 0.5, beta: 0.01, iterations: 3, seed: 1 };
        let m = fit_lda(&d, &cfg).unwrap();
        let denom = 5.0 + 3.0 * 0.01;
        assert_eq!(m.words, ["a", "b", "c"]);
        assert!((m.phi[0][0] - 3.01 / denom).abs() < 1e-15);
        assert!((m.phi[0][1] - 1.01 / denom).abs() < 1e-15);
        assert!(m.theta.iter().all(|row| row == &vec![1.0]));
    }

    #[test]
    fn single_word_single_topic() {
        let d = docs(&[&["w", "w", "w"]]);
        let cfg = LdaConfig { num_topics: 1, alpha: 1.0, beta: 0.01, iterations: 1, seed: 0 };
        let m = fit_lda(&d, &cfg).unwrap();
        assert_eq!(m.phi, vec![vec![1.0]]);
        assert_eq!(top_words(&m, 0, 1).unwrap(), vec![("w".to_string(), 1.0)]);
        assert_eq!(top_words(&m, 0, 5).unwrap().len(), 1);
        assert!(top_words(&m, 1, 1).is_err());
    }

    #[test]
    fn fit_errors() {
        assert!(matches!(fit_lda(&[], &LdaConfig::new(2)), Err(Error::EmptyData)));
        assert!(matches!(fit_lda(&docs(&[&[]]), &LdaConfig::new(2)), Err(Error::EmptyData)));
        let bad = LdaConfig { beta: 0.0, ..LdaConfig::new(2) };
        assert!(fit_lda(&docs(&[&["a"]]), &bad).is_err());
    }

    #[test]
    fn counts_conserved_and_rows_normalized() {
        let (d, _) = disjoint_corpus(1, 15, 12);
        let cfg = LdaConfig { iterations: 30, seed: 4, ..LdaConfig::new(3) };
        let mut sweeps = 0;
        let m = fit_lda_observed(&d, &cfg, |s| {
            assert!(s.counts_consistent());
            sweeps += 1;
        })
        .unwrap();
        assert_eq!(sweeps, 30);
        for row in m.phi.iter().chain(&m.theta) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            assert!(row.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let (d, _) = disjoint_corpus(2, 10, 10);
        let cfg = LdaConfig { iterations: 20, seed: 9, ..LdaConfig::new(2) };
        assert_eq!(fit_lda(&d, &cfg).unwrap(), fit_lda(&d, &cfg).unwrap());
    }

    #[test]
    fn separates_disjoint_vocabularies() {
        let (d, labels) = disjoint_corpus(3, 20, 15);
        let cfg = LdaConfig { iterations: 200, seed: 5, ..LdaConfig::new(2) };
        let m = fit_lda(&d, &cfg).unwrap();
        let dom = m.dominant_topics();
        let agree = dom.iter().zip(&labels).filter(|(a, b)| a == b).count();
        let purity = agree.max(d.len() - agree) as f64 / d.len() as f64;
        assert!(purity > 0.9, "purity {purity}");
        for t in 0..2 {
            let top: Vec<String> = top_words(&m, t, 3).unwrap().into_iter().map(|p| p.0).collect();
            let in_a = top.iter().filter(|w| ["oil", "energy", "crude", "libya", "opec", "barrel"].contains(&w.as_str())).count();
            assert!(in_a == 0 || in_a == 3, "mixed topic {top:?}");
        }
    }

    #[test]
    fn document_order_does_not_change_topics() {
        let (d, _) = disjoint_corpus(6, 20, 15);
        let mut rev = d.clone();
        rev.reverse();
        let cfg = LdaConfig { iterations: 200, seed: 2, ..LdaConfig::new(2) };
        let top_sets = |m: &TopicModel| {
            let mut sets: Vec<BTreeSet<String>> = (0..2)
                .map(|t| top_words(m, t, 6).unwrap().into_iter().map(|p| p.0).collect())
                .collect();
            sets.sort();
            sets
        };
        assert_eq!(top_sets(&fit_lda(&d, &cfg).unwrap()), top_sets(&fit_lda(&rev, &cfg).unwrap()));
    }

    #[test]
    fn frequent_words_examples() {
        let none = BTreeSet::new();
        assert_eq!(top_frequent_words(&docs(&[&["a", "a", "b"]]), 2, &none), ["a", "b"]);
        assert!(top_frequent_words(&[], 3, &none).is_empty());
        assert_eq!(top_frequent_words(&docs(&[&["z", "b", "m"]]), 2, &none), ["b", "m"]);
        let stop: BTreeSet<String> = ["a".to_string()].into();
        assert_eq!(top_frequent_words(&docs(&[&["a", "a", "b"]]), 2, &stop), ["b"]);
        let counts = frequent_word_counts(&docs(&[&["x", "y", "y"], &["y", "x", "q"]]), 10, &none);
        assert_eq!(counts, vec![("y".into(), 3), ("x".into(), 2), ("q".into(), 1)]);
    }

    #[test]
    fn small_clusters_are_skipped() {
        let params = SummaryParams { words_per_topic: 5, frequent_words: 10 };
        let cfg = LdaConfig { iterations: 5, ..LdaConfig::new(3) };
        let s = summarize_cluster(4, &docs(&[&["a"], &["b"]]), &cfg, &params).unwrap();
        assert!(s.skipped.is_some());
        assert_eq!(s.document_count, 2);
        assert!(s.topics.is_empty());
        let s = summarize_cluster(0, &[], &cfg, &params).unwrap();
        assert_eq!(s.document_count, 0);
        assert!(s.skipped.is_some());
    }

    #[test]
    fn parallel_summaries_match_sequential() {
        let (d, _) = disjoint_corpus(7, 12, 10);
        let clusters: Vec<Vec<Document>> = d.chunks(4).map(<[Document]>::to_vec).collect();
        let cfg = LdaConfig { iterations: 20, seed: 11, ..LdaConfig::new(2) };
        let params = SummaryParams { words_per_topic: 3, frequent_words: 4 };
        let par = summarize_clusters(&clusters, &cfg, &params).unwrap();
        let seq: Vec<_> = clusters
            .iter()
            .enumerate()
            .map(|(i, c)| summarize_cluster(i, c, &cfg, &params).unwrap())
            .collect();
        assert_eq!(par, seq);
    }
}
