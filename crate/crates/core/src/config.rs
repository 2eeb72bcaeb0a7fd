//! Pipeline configuration, read from a TOML file.
//!
//! Every section is optional; omitted values fall back to the defaults
//! below (300-dim embeddings, 10 negatives, 200 word clusters, a
//! 200-128-64-20 encoder, 200 tweet clusters, 5 topics of 5 words and 10
//! frequent words per cluster). Relative paths resolve against the
//! directory holding the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::io::read_to_string;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub input: InputConfig,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub word_clusters: WordClusterConfig,
    #[serde(default)]
    pub autoencoder: AutoencoderConfig,
    #[serde(default)]
    pub tweet_clusters: TweetClusterConfig,
    #[serde(default)]
    pub topics: TopicsConfig,
}

fn default_seed() -> u64 {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub path: PathBuf,
    #[serde(default = "default_text_column")]
    pub text_column: String,
    /// Stopword file; the bundled English list is used when absent.
    #[serde(default)]
    pub stopwords: Option<PathBuf>,
}

fn default_text_column() -> String {
    "text".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub initial_lr: f64,
    pub min_count: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            dim: 300,
            window: 5,
            negatives: 10,
            epochs: 5,
            initial_lr: 0.025,
            min_count: 5,
        }
    }
}

/// Cosine k-means over word embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WordClusterConfig {
    pub k: usize,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for WordClusterConfig {
    fn default() -> Self {
        WordClusterConfig {
            k: 200,
            max_iterations: 300,
            tolerance: 1e-6,
        }
    }
}

/// Euclidean k-means over autoencoder codes. The tolerance is relative to
/// the spread of the codes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TweetClusterConfig {
    pub k: usize,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for TweetClusterConfig {
    fn default() -> Self {
        TweetClusterConfig {
            k: 200,
            max_iterations: 300,
            tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoencoderConfig {
    /// Encoder hidden widths between the input and the bottleneck; the
    /// decoder mirrors them.
    pub hidden: Vec<usize>,
    pub bottleneck: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub rho: f64,
    pub epsilon: f64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        AutoencoderConfig {
            hidden: vec![128, 64],
            bottleneck: 20,
            epochs: 100,
            batch_size: 32,
            rho: 0.95,
            epsilon: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopicsConfig {
    pub num_topics: usize,
    /// Defaults to `50 / num_topics`.
    pub alpha: Option<f64>,
    pub beta: f64,
    pub iterations: usize,
    pub words_per_topic: usize,
    pub frequent_words: usize,
}

impl Default for TopicsConfig {
    fn default() -> Self {
        TopicsConfig {
            num_topics: 5,
            alpha: None,
            beta: 0.01,
            iterations: 500,
            words_per_topic: 5,
            frequent_words: 10,
        }
    }
}

impl TopicsConfig {
    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(50.0 / self.num_topics.max(1) as f64)
    }
}

impl PipelineConfig {
    /// A configuration with every default for the given input file.
    pub fn with_input(path: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            seed: default_seed(),
            output_dir: default_output_dir(),
            input: InputConfig {
                path: path.into(),
                text_column: default_text_column(),
                stopwords: None,
            },
            embedding: EmbeddingConfig::default(),
            word_clusters: WordClusterConfig::default(),
            autoencoder: AutoencoderConfig::default(),
            tweet_clusters: TweetClusterConfig::default(),
            topics: TopicsConfig::default(),
        }
    }

    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.resolve_paths(base_dir);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.input.path);
        if let Some(s) = self.input.stopwords.as_mut() {
            fix(s);
        }
        fix(&mut self.output_dir);
    }

    /// Checks counts and that referenced input files exist.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("embedding.dim", self.embedding.dim),
            ("embedding.window", self.embedding.window),
            ("embedding.negatives", self.embedding.negatives),
            ("embedding.min_count", self.embedding.min_count),
            ("word_clusters.k", self.word_clusters.k),
            ("word_clusters.max_iterations", self.word_clusters.max_iterations),
            ("autoencoder.bottleneck", self.autoencoder.bottleneck),
            ("autoencoder.batch_size", self.autoencoder.batch_size),
            ("tweet_clusters.k", self.tweet_clusters.k),
            ("tweet_clusters.max_iterations", self.tweet_clusters.max_iterations),
            ("topics.num_topics", self.topics.num_topics),
            ("topics.iterations", self.topics.iterations),
            ("topics.words_per_topic", self.topics.words_per_topic),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        let reals = [
            ("embedding.initial_lr", self.embedding.initial_lr),
            ("autoencoder.rho", self.autoencoder.rho),
            ("autoencoder.epsilon", self.autoencoder.epsilon),
            ("topics.alpha", self.topics.alpha()),
            ("topics.beta", self.topics.beta),
        ];
        for (name, v) in reals {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be a positive number")));
            }
        }
        if self.autoencoder.rho >= 1.0 {
            return Err(Error::Config("autoencoder.rho must be below 1".into()));
        }
        for (name, t) in [
            ("word_clusters.tolerance", self.word_clusters.tolerance),
            ("tweet_clusters.tolerance", self.tweet_clusters.tolerance),
        ] {
            if !(t.is_finite() && t >= 0.0) {
                return Err(Error::Config(format!("{name} must be non-negative")));
            }
        }
        crate::autoenc::NetworkSpec::symmetric(
            self.word_clusters.k,
            &self.autoencoder.hidden,
            self.autoencoder.bottleneck,
        )?;
        if !self.input.path.is_file() {
            return Err(Error::Config(format!(
                "input file {} does not exist",
                self.input.path.display()
            )));
        }
        if let Some(s) = &self.input.stopwords {
            if !s.is_file() {
                return Err(Error::Config(format!(
                    "stopword file {} does not exist",
                    s.display()
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documented_values() {
        let cfg = PipelineConfig::from_toml("[input]\npath = \"t.csv\"\n", Path::new("/data")).unwrap();
        assert_eq!(cfg.embedding.dim, 300);
        assert_eq!(cfg.embedding.negatives, 10);
        assert_eq!(cfg.word_clusters.k, 200);
        assert_eq!(cfg.word_clusters.tolerance, 1e-6);
        assert_eq!(cfg.tweet_clusters.k, 200);
        assert_eq!(cfg.tweet_clusters.tolerance, 1e-4);
        assert_eq!(cfg.autoencoder.bottleneck, 20);
        assert_eq!(cfg.topics.num_topics, 5);
        assert_eq!(cfg.topics.words_per_topic, 5);
        assert_eq!(cfg.topics.frequent_words, 10);
        assert_eq!(cfg.topics.alpha(), 10.0);
        assert_eq!(cfg.input.path, PathBuf::from("/data/t.csv"));
        assert_eq!(cfg.output_dir, PathBuf::from("/data/out"));
        assert_eq!(cfg, {
            let mut c = PipelineConfig::with_input("/data/t.csv");
            c.output_dir = "/data/out".into();
            c
        });
    }

    #[test]
    fn overrides_and_rejections() {
        let text = r#"
            seed = 7
            output_dir = "/tmp/run"
            [input]
            path = "/abs/t.csv"
            [word_clusters]
            k = 20
            tolerance = 1e-5
            [autoencoder]
            hidden = [16, 12]
            bottleneck = 8
            [topics]
            num_topics = 3
            alpha = 0.5
        "#;
        let cfg = PipelineConfig::from_toml(text, Path::new("/x")).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.word_clusters.k, 20);
        assert_eq!(cfg.autoencoder.hidden, vec![16, 12]);
        assert_eq!(cfg.topics.alpha(), 0.5);
        assert_eq!(cfg.output_dir, PathBuf::from("/tmp/run"));

        assert!(PipelineConfig::from_toml("[input]\npath='a'\n[bogus]\n", Path::new(".")).is_err());
        assert!(PipelineConfig::from_toml("seed = 1\n", Path::new(".")).is_err());
    }

    #[test]
    fn validation() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("t.csv");
        let mut cfg = PipelineConfig::with_input(&input);
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        std::fs::write(&input, "text\nhello\n").unwrap();
        cfg.validate().unwrap();

        cfg.word_clusters.k = 20; // 20 -> 128 is not a compression
        assert!(cfg.validate().is_err());
        cfg.autoencoder.hidden = vec![16];
        cfg.autoencoder.bottleneck = 8;
        cfg.validate().unwrap();
        cfg.topics.num_topics = 0;
        assert!(cfg.validate().is_err());
    }
}
