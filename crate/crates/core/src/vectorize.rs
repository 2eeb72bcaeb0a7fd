//! TF-IDF statistics and per-tweet vectors over word clusters.
//!
//! A tweet's weight for word cluster `a` is the summed term frequency of the
//! tweet's words that fall in `a`, times the summed IDF of every vocabulary
//! word in `a` (present in the tweet or not). The weights are then
//! L1-normalized across clusters.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use crate::corpus::Document;
use crate::embed::Vocabulary;
use crate::io::{read_id_matrix_csv, write_id_matrix_csv};
use crate::{Error, Result};

/// Fraction of the document's tokens equal to `word`.
pub fn term_frequency(word: &str, doc: &Document) -> Result<f64> {
    if doc.tokens.is_empty() {
        return Err(Error::EmptyDocument);
    }
    let hits = doc.tokens.iter().filter(|t| *t == word).count();
    Ok(hits as f64 / doc.tokens.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TfidfStats {
    pub document_count: usize,
    /// Indexed by vocabulary id.
    pub doc_frequency: Vec<usize>,
    /// `ln(N / df)`, indexed by vocabulary id.
    pub idf: Vec<f64>,
}

pub fn compute_idf(documents: &[Document], vocab: &Vocabulary) -> Result<TfidfStats> {
    if documents.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut df = vec![0usize; vocab.len()];
    let mut seen = HashSet::new();
    for doc in documents {
        seen.clear();
        for t in &doc.tokens {
            if let Some(id) = vocab.id(t) {
                if seen.insert(id) {
                    df[id] += 1;
                }
            }
        }
    }
    if let Some(missing) = df.iter().position(|&d| d == 0) {
        return Err(Error::ZeroDocumentFrequency(vocab.word(missing).to_string()));
    }
    let n = documents.len() as f64;
    Ok(TfidfStats {
        document_count: documents.len(),
        idf: df.iter().map(|&d| (n / d as f64).ln()).collect(),
        doc_frequency: df,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordClusterMap {
    /// Cluster id per vocabulary id.
    pub cluster_of: Vec<usize>,
    pub cluster_count: usize,
}

impl WordClusterMap {
    pub fn new(cluster_of: Vec<usize>, cluster_count: usize) -> Result<Self> {
        if let Some(&bad) = cluster_of.iter().find(|&&c| c >= cluster_count) {
            return Err(Error::Config(format!(
                "word cluster id {bad} out of range for {cluster_count} clusters"
            )));
        }
        Ok(WordClusterMap {
            cluster_of,
            cluster_count,
        })
    }

    /// Builds the map from `(word, cluster)` rows; every vocabulary word
    /// must be covered.
    pub fn from_rows(vocab: &Vocabulary, rows: &[(String, usize)], cluster_count: usize) -> Result<Self> {
        let lookup: HashMap<&str, usize> = rows.iter().map(|(w, c)| (w.as_str(), *c)).collect();
        let cluster_of = vocab
            .words()
            .iter()
            .map(|w| {
                lookup
                    .get(w.as_str())
                    .copied()
                    .ok_or_else(|| Error::UnknownWord(w.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(cluster_of, cluster_count)
    }

    /// Summed IDF of each cluster's words.
    pub fn cluster_idf(&self, stats: &TfidfStats) -> Vec<f64> {
        let mut sums = vec![0.0; self.cluster_count];
        for (w, &c) in self.cluster_of.iter().enumerate() {
            sums[c] += stats.idf[w];
        }
        sums
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TweetVector {
    pub id: String,
    pub weights: Vec<f64>,
}

impl TweetVector {
    /// True when no in-vocabulary word contributed any weight.
    pub fn is_degenerate(&self) -> bool {
        self.weights.iter().all(|&w| w == 0.0)
    }
}

/// Precomputes per-cluster IDF sums so many tweets can be vectorized cheaply.
#[derive(Debug, Clone)]
pub struct TweetVectorizer<'a> {
    vocab: &'a Vocabulary,
    map: &'a WordClusterMap,
    cluster_idf: Vec<f64>,
}

impl<'a> TweetVectorizer<'a> {
    pub fn new(vocab: &'a Vocabulary, map: &'a WordClusterMap, stats: &TfidfStats) -> Result<Self> {
        if map.cluster_of.len() != vocab.len() || stats.idf.len() != vocab.len() {
            return Err(Error::DimensionMismatch {
                expected: vocab.len(),
                found: map.cluster_of.len().min(stats.idf.len()),
            });
        }
        Ok(TweetVectorizer {
            vocab,
            map,
            cluster_idf: map.cluster_idf(stats),
        })
    }

    pub fn vectorize(&self, doc: &Document) -> TweetVector {
        let mut raw = vec![0.0; self.map.cluster_count];
        if !doc.tokens.is_empty() {
            // TF denominators count every token of the tweet, in vocabulary or not
            let per_token = 1.0 / doc.tokens.len() as f64;
            let mut tf_mass = vec![0.0; self.map.cluster_count];
            for t in &doc.tokens {
                if let Some(id) = self.vocab.id(t) {
                    tf_mass[self.map.cluster_of[id]] += per_token;
                }
            }
            for ((r, tf), idf) in raw.iter_mut().zip(&tf_mass).zip(&self.cluster_idf) {
                *r = tf * idf;
            }
        }
        let total: f64 = raw.iter().sum();
        if total > 0.0 {
            raw.iter_mut().for_each(|r| *r /= total);
        } else {
            raw.iter_mut().for_each(|r| *r = 0.0);
        }
        TweetVector {
            id: doc.id.clone(),
            weights: raw,
        }
    }
}

pub fn tweet_vector(
    doc: &Document,
    vocab: &Vocabulary,
    map: &WordClusterMap,
    stats: &TfidfStats,
) -> Result<TweetVector> {
    Ok(TweetVectorizer::new(vocab, map, stats)?.vectorize(doc))
}

/// Writes `id,w_0,...,w_{C-1}` rows with nine significant digits.
pub fn write_tweet_vectors(path: &Path, cluster_count: usize, vectors: &[TweetVector]) -> Result<()> {
    write_id_matrix_csv(
        path,
        "w_",
        cluster_count,
        vectors.iter().map(|v| (v.id.clone(), v.weights.clone())),
    )
}

pub fn read_tweet_vectors(path: &Path) -> Result<Vec<TweetVector>> {
    let (ids, rows) = read_id_matrix_csv(path)?;
    Ok(ids
        .into_iter()
        .zip(rows)
        .map(|(id, weights)| TweetVector { id, weights })
        .collect())
}
