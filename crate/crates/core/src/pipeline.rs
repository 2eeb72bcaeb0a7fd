//! Staged pipeline runner with content-addressed caching.
//!
//! Each stage reads only the files persisted by earlier stages and writes
//! its own artifacts into the output directory. `manifest.json` records a
//! SHA-256 digest of every stage's files, the digests of the upstream
//! artifacts it consumed, and a fingerprint of the configuration it ran
//! with. A stage is re-run when any of those no longer match.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autoenc::{self, NetworkSpec, TrainParams};
use crate::cluster::{self, KmeansConfig, Metric};
use crate::config::PipelineConfig;
use crate::corpus::{self, Corpus, Document};
use crate::embed::{self, SkipgramHyperparams, Vocabulary};
use crate::io::{read_to_string, write_atomic};
use crate::report::render_report;
use crate::topics::{self, LdaConfig, SummaryParams, TopicSummary};
use crate::vectorize::{self, TweetVectorizer, WordClusterMap};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Preprocess,
    TrainEmbeddings,
    ClusterWords,
    Vectorize,
    TrainAutoencoder,
    Encode,
    ClusterTweets,
    Topics,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Preprocess,
        Stage::TrainEmbeddings,
        Stage::ClusterWords,
        Stage::Vectorize,
        Stage::TrainAutoencoder,
        Stage::Encode,
        Stage::ClusterTweets,
        Stage::Topics,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Preprocess => "preprocess",
            Stage::TrainEmbeddings => "train-embeddings",
            Stage::ClusterWords => "cluster-words",
            Stage::Vectorize => "vectorize",
            Stage::TrainAutoencoder => "train-autoencoder",
            Stage::Encode => "encode",
            Stage::ClusterTweets => "cluster-tweets",
            Stage::Topics => "topics",
            Stage::Report => "report",
        }
    }

    pub fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::Preprocess => &[],
            Stage::TrainEmbeddings => &[Stage::Preprocess],
            Stage::ClusterWords => &[Stage::TrainEmbeddings],
            Stage::Vectorize => &[Stage::Preprocess, Stage::ClusterWords],
            Stage::TrainAutoencoder => &[Stage::Vectorize],
            Stage::Encode => &[Stage::Vectorize, Stage::TrainAutoencoder],
            Stage::ClusterTweets => &[Stage::Encode],
            Stage::Topics => &[Stage::Preprocess, Stage::ClusterTweets],
            Stage::Report => &[Stage::Topics],
        }
    }

    /// Files written by the stage, relative to the output directory.
    pub fn files(self) -> &'static [&'static str] {
        match self {
            Stage::Preprocess => &[files::TOKENS],
            Stage::TrainEmbeddings => &[files::EMBEDDINGS],
            Stage::ClusterWords => &[files::WORD_CLUSTERS, files::WORD_CENTROIDS],
            Stage::Vectorize => &[files::TWEET_VECTORS, files::EXCLUDED],
            Stage::TrainAutoencoder => &[files::MODEL, files::TRAIN_REPORT],
            Stage::Encode => &[files::CODES],
            Stage::ClusterTweets => &[files::TWEET_CLUSTERS, files::TWEET_CENTROIDS],
            Stage::Topics => &[files::TOPICS],
            Stage::Report => &[files::REPORT],
        }
    }

    fn seed_offset(self) -> u64 {
        Stage::ALL.iter().position(|&s| s == self).unwrap() as u64
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

pub mod files {
    pub const TOKENS: &str = "tokens.tsv";
    pub const EMBEDDINGS: &str = "embeddings.txt";
    pub const WORD_CLUSTERS: &str = "word_clusters.csv";
    pub const WORD_CENTROIDS: &str = "word_centroids.txt";
    pub const TWEET_VECTORS: &str = "tweet_vectors.csv";
    pub const EXCLUDED: &str = "excluded_tweets.txt";
    pub const MODEL: &str = "autoencoder.json";
    pub const TRAIN_REPORT: &str = "autoencoder_training.json";
    pub const CODES: &str = "codes.csv";
    pub const TWEET_CLUSTERS: &str = "tweet_clusters.csv";
    pub const TWEET_CENTROIDS: &str = "tweet_centroids.txt";
    pub const TOPICS: &str = "topics.json";
    pub const REPORT: &str = "report.txt";
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageArtifact {
    pub stage: Stage,
    pub files: Vec<PathBuf>,
    /// SHA-256 over the stage's files.
    pub digest: String,
    /// Digest of each upstream stage's artifact when this one was built.
    pub upstream: BTreeMap<Stage, String>,
    /// Digest of the configuration this stage depends on.
    pub config: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub artifacts: BTreeMap<Stage, StageArtifact>,
}

impl Manifest {
    pub fn load(output_dir: &Path) -> Result<Self> {
        let path = output_dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Manifest::default());
        }
        let text = read_to_string(&path)?;
        serde_json::from_str(&text).map_err(|e| Error::parse(&path, e.line(), e.to_string()))
    }

    fn save(&self, output_dir: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_atomic(&output_dir.join(MANIFEST_FILE), json.as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub manifest: Manifest,
    pub executed: Vec<Stage>,
    pub skipped: Vec<Stage>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Re-run selected stages even when up to date.
    pub force: bool,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Digest over the named files, in order, including names and lengths.
pub fn digest_files(dir: &Path, names: &[&str]) -> Result<String> {
    let mut hasher = Sha256::new();
    for name in names {
        let path = dir.join(name);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        hasher.update(name.as_bytes());
        hasher.update([0]);
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn stage_seed(cfg: &PipelineConfig, stage: Stage) -> u64 {
    cfg.seed.wrapping_add(stage.seed_offset())
}

/// Fingerprint of everything outside upstream artifacts that determines a
/// stage's output.
fn config_fingerprint(cfg: &PipelineConfig, stage: Stage) -> Result<String> {
    let value = match stage {
        Stage::Preprocess => {
            let input = std::fs::read(&cfg.input.path).map_err(|e| Error::io(&cfg.input.path, e))?;
            let stopwords = match &cfg.input.stopwords {
                Some(p) => read_to_string(p)?,
                None => corpus::DEFAULT_STOPWORDS.to_string(),
            };
            serde_json::json!({
                "input": sha256_hex(&input),
                "text_column": cfg.input.text_column,
                "stopwords": sha256_hex(stopwords.as_bytes()),
            })
        }
        Stage::TrainEmbeddings => serde_json::json!({ "embedding": cfg.embedding }),
        Stage::ClusterWords => serde_json::json!({ "word_clusters": cfg.word_clusters }),
        Stage::Vectorize => serde_json::json!({ "k": cfg.word_clusters.k }),
        Stage::TrainAutoencoder => serde_json::json!({ "autoencoder": cfg.autoencoder }),
        Stage::Encode => serde_json::json!({}),
        Stage::ClusterTweets => serde_json::json!({ "tweet_clusters": cfg.tweet_clusters }),
        Stage::Topics => serde_json::json!({ "topics": cfg.topics, "alpha": cfg.topics.alpha() }),
        Stage::Report => serde_json::json!({}),
    };
    let seeded = serde_json::json!({ "seed": stage_seed(cfg, stage), "params": value });
    Ok(sha256_hex(seeded.to_string().as_bytes()))
}

fn up_to_date(
    dir: &Path,
    stage: Stage,
    manifest: &Manifest,
    fingerprint: &str,
) -> Result<bool> {
    let Some(entry) = manifest.artifacts.get(&stage) else {
        return Ok(false);
    };
    if entry.config != fingerprint {
        return Ok(false);
    }
    for up in stage.upstream() {
        let current = manifest.artifacts.get(up).map(|a| &a.digest);
        if current != entry.upstream.get(up) {
            return Ok(false);
        }
    }
    if stage.files().iter().any(|f| !dir.join(f).is_file()) {
        return Ok(false);
    }
    Ok(digest_files(dir, stage.files())? == entry.digest)
}

/// Runs the selected stages (all when `stages` is `None`) in pipeline
/// order, skipping stages whose artifacts are current.
pub fn run_pipeline(
    cfg: &PipelineConfig,
    stages: Option<&[Stage]>,
    opts: RunOptions,
) -> Result<RunOutcome> {
    cfg.validate()?;
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = Manifest::load(dir)?;
    let mut executed = Vec::new();
    let mut skipped = Vec::new();

    for stage in Stage::ALL {
        if let Some(sel) = stages {
            if !sel.contains(&stage) {
                continue;
            }
        }
        let fingerprint = config_fingerprint(cfg, stage)?;
        if !opts.force && up_to_date(dir, stage, &manifest, &fingerprint)? {
            log::info!("{stage}: up to date");
            skipped.push(stage);
            continue;
        }
        let mut upstream = BTreeMap::new();
        for &up in stage.upstream() {
            let fresh = manifest
                .artifacts
                .get(&up)
                .filter(|a| digest_files(dir, up.files()).ok().as_ref() == Some(&a.digest));
            match fresh {
                Some(a) => {
                    upstream.insert(up, a.digest.clone());
                }
                None => {
                    return Err(Error::Stage {
                        stage: stage.name().into(),
                        source: Box::new(Error::Config(format!(
                            "upstream stage `{up}` has no current artifacts; run it first"
                        ))),
                    })
                }
            }
        }
        log::info!("{stage}: running");
        execute(stage, cfg, dir).map_err(|e| Error::Stage {
            stage: stage.name().into(),
            source: Box::new(e),
        })?;
        let artifact = StageArtifact {
            stage,
            files: stage.files().iter().map(PathBuf::from).collect(),
            digest: digest_files(dir, stage.files())?,
            upstream,
            config: fingerprint,
        };
        manifest.artifacts.insert(stage, artifact);
        manifest.save(dir)?;
        executed.push(stage);
    }
    Ok(RunOutcome {
        manifest,
        executed,
        skipped,
    })
}

fn execute(stage: Stage, cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    let seed = stage_seed(cfg, stage);
    match stage {
        Stage::Preprocess => preprocess(cfg, dir),
        Stage::TrainEmbeddings => train_embeddings(cfg, dir, seed),
        Stage::ClusterWords => cluster_words(cfg, dir, seed),
        Stage::Vectorize => vectorize_tweets(cfg, dir),
        Stage::TrainAutoencoder => train_autoencoder(cfg, dir, seed),
        Stage::Encode => encode_tweets(dir),
        Stage::ClusterTweets => cluster_tweets(cfg, dir, seed),
        Stage::Topics => fit_topics(cfg, dir, seed),
        Stage::Report => write_report(dir),
    }
}

fn preprocess(cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    let tweets = corpus::load_tweets(&cfg.input.path, &cfg.input.text_column)?;
    let stopwords = match &cfg.input.stopwords {
        Some(p) => corpus::load_stopwords(p)?,
        None => corpus::default_stopwords(),
    };
    let corpus = Corpus::from_tweets(&tweets, stopwords)?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    log::info!("preprocess: {} tweets", corpus.len());
    corpus::write_token_file(&dir.join(files::TOKENS), &corpus.documents)
}

fn train_embeddings(cfg: &PipelineConfig, dir: &Path, seed: u64) -> Result<()> {
    let docs = corpus::read_token_file(&dir.join(files::TOKENS))?;
    let e = &cfg.embedding;
    let vocab = embed::build_vocabulary(&docs, e.min_count)?;
    let hp = SkipgramHyperparams {
        dim: e.dim,
        window: e.window,
        negatives: e.negatives,
        epochs: e.epochs,
        initial_lr: e.initial_lr,
        min_count: e.min_count,
        seed,
    };
    log::info!("train-embeddings: {} words, dim {}", vocab.len(), e.dim);
    let emb = embed::train_skipgram(&docs, &vocab, &hp)?;
    if !emb.is_finite() {
        return Err(Error::NonFinite);
    }
    embed::write_embeddings(&dir.join(files::EMBEDDINGS), &vocab, &emb)
}

fn cluster_words(cfg: &PipelineConfig, dir: &Path, seed: u64) -> Result<()> {
    let (words, vectors) = embed::read_vector_file(&dir.join(files::EMBEDDINGS))?;
    let kc = KmeansConfig {
        k: cfg.word_clusters.k,
        metric: Metric::Cosine,
        max_iterations: cfg.word_clusters.max_iterations,
        seed,
        tolerance: cfg.word_clusters.tolerance,
    };
    let a = cluster::kmeans(&vectors, &kc)?;
    log::info!(
        "cluster-words: {} words into {} clusters, {} iterations",
        words.len(),
        kc.k,
        a.iterations_run
    );
    cluster::write_assignment_file(
        &dir.join(files::WORD_CLUSTERS),
        words.iter().map(String::as_str).zip(a.labels.iter().copied()),
    )?;
    cluster::write_centroid_file(&dir.join(files::WORD_CENTROIDS), &a.centroids)
}

fn vectorize_tweets(cfg: &PipelineConfig, dir: &Path) -> Result<()> {
    let docs = corpus::read_token_file(&dir.join(files::TOKENS))?;
    let rows = cluster::read_assignment_file(&dir.join(files::WORD_CLUSTERS))?;
    let mut counts: HashMap<&str, u64> = rows.iter().map(|(w, _)| (w.as_str(), 0)).collect();
    for t in docs.iter().flat_map(|d| &d.tokens) {
        if let Some(c) = counts.get_mut(t.as_str()) {
            *c += 1;
        }
    }
    let vocab = Vocabulary::from_counts(counts.into_iter().map(|(w, c)| (w.to_string(), c)));
    let map = WordClusterMap::from_rows(&vocab, &rows, cfg.word_clusters.k)?;
    let stats = vectorize::compute_idf(&docs, &vocab)?;
    let vectorizer = TweetVectorizer::new(&vocab, &map, &stats)?;
    let vectors: Vec<_> = docs.iter().map(|d| vectorizer.vectorize(d)).collect();

    let mut excluded = String::new();
    for v in vectors.iter().filter(|v| v.is_degenerate()) {
        excluded.push_str(&v.id);
        excluded.push('\n');
    }
    let n_excluded = excluded.lines().count();
    if n_excluded > 0 {
        log::warn!("vectorize: {n_excluded} tweets have no in-vocabulary words and are excluded");
    }
    vectorize::write_tweet_vectors(&dir.join(files::TWEET_VECTORS), map.cluster_count, &vectors)?;
    write_atomic(&dir.join(files::EXCLUDED), excluded.as_bytes())
}

fn usable_vectors(dir: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let vectors = vectorize::read_tweet_vectors(&dir.join(files::TWEET_VECTORS))?;
    Ok(vectors
        .into_iter()
        .filter(|v| !v.is_degenerate())
        .map(|v| (v.id, v.weights))
        .unzip())
}

fn train_autoencoder(cfg: &PipelineConfig, dir: &Path, seed: u64) -> Result<()> {
    let (_, data) = usable_vectors(dir)?;
    let width = data.first().map(Vec::len).ok_or(Error::EmptyData)?;
    let a = &cfg.autoencoder;
    let spec = NetworkSpec::symmetric(width, &a.hidden, a.bottleneck)?;
    let params = TrainParams {
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed,
        rho: a.rho,
        epsilon: a.epsilon,
    };
    let (net, report) = autoenc::train(spec, &data, &params)?;
    log::info!(
        "train-autoencoder: {} vectors, final loss {:.4}",
        data.len(),
        report.final_loss
    );
    autoenc::save_model(&dir.join(files::MODEL), &net)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_atomic(&dir.join(files::TRAIN_REPORT), json.as_bytes())
}

fn encode_tweets(dir: &Path) -> Result<()> {
    let (ids, data) = usable_vectors(dir)?;
    let net = autoenc::load_model(&dir.join(files::MODEL))?;
    let matrix = autoenc::to_matrix(&data, net.spec.input_dim())?;
    let codes = autoenc::encode_batch(&net, &matrix)?;
    crate::io::write_id_matrix_csv(
        &dir.join(files::CODES),
        "c_",
        net.spec.bottleneck(),
        ids.into_iter().zip(codes.outer_iter().map(|r| r.to_vec())),
    )
}

fn cluster_tweets(cfg: &PipelineConfig, dir: &Path, seed: u64) -> Result<()> {
    let (ids, codes) = crate::io::read_id_matrix_csv(&dir.join(files::CODES))?;
    let kc = KmeansConfig {
        k: cfg.tweet_clusters.k,
        metric: Metric::Euclidean,
        max_iterations: cfg.tweet_clusters.max_iterations,
        seed,
        tolerance: cfg.tweet_clusters.tolerance,
    };
    let a = cluster::kmeans(&codes, &kc)?;
    log::info!(
        "cluster-tweets: {} tweets into {} clusters, inertia {:.4}",
        ids.len(),
        kc.k,
        a.inertia
    );
    cluster::write_assignment_file(
        &dir.join(files::TWEET_CLUSTERS),
        ids.iter().map(String::as_str).zip(a.labels.iter().copied()),
    )?;
    cluster::write_centroid_file(&dir.join(files::TWEET_CENTROIDS), &a.centroids)
}

#[derive(Debug, Serialize, Deserialize)]
struct TopicsFile {
    clusters: Vec<TopicSummary>,
}

fn fit_topics(cfg: &PipelineConfig, dir: &Path, seed: u64) -> Result<()> {
    let docs = corpus::read_token_file(&dir.join(files::TOKENS))?;
    let rows = cluster::read_assignment_file(&dir.join(files::TWEET_CLUSTERS))?;
    let label: HashMap<&str, usize> = rows.iter().map(|(id, c)| (id.as_str(), *c)).collect();
    let k = cfg.tweet_clusters.k;
    let mut groups: Vec<Vec<Document>> = vec![Vec::new(); k];
    for d in docs {
        if let Some(&c) = label.get(d.id.as_str()) {
            let group = groups.get_mut(c).ok_or_else(|| {
                Error::Config(format!("tweet cluster {c} out of range for {k} clusters"))
            })?;
            group.push(d);
        }
    }
    let t = &cfg.topics;
    let lda = LdaConfig {
        num_topics: t.num_topics,
        alpha: t.alpha(),
        beta: t.beta,
        iterations: t.iterations,
        seed,
    };
    let params = SummaryParams {
        words_per_topic: t.words_per_topic,
        frequent_words: t.frequent_words,
    };
    let clusters = topics::summarize_clusters(&groups, &lda, &params)?;
    for s in clusters.iter().filter(|s| s.skipped.is_some()) {
        log::info!("topics: cluster {} skipped ({})", s.cluster, s.skipped.as_deref().unwrap_or(""));
    }
    let json = serde_json::to_string_pretty(&TopicsFile { clusters }).expect("topics serialize");
    write_atomic(&dir.join(files::TOPICS), json.as_bytes())
}

pub fn read_topics(path: &Path) -> Result<Vec<TopicSummary>> {
    let text = read_to_string(path)?;
    let file: TopicsFile =
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
    Ok(file.clusters)
}

fn write_report(dir: &Path) -> Result<()> {
    let summaries = read_topics(&dir.join(files::TOPICS))?;
    write_atomic(&dir.join(files::REPORT), render_report(&summaries).as_bytes())
}
