use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tweet_topics::config::PipelineConfig;
use tweet_topics::pipeline::{self, RunOptions, Stage};
use tweet_topics::Error;

/// Semantic clustering and topic discovery for tweet corpora.
#[derive(Parser)]
#[command(name = "tweet-topics", version)]
struct Cli {
    /// Pipeline configuration file (TOML)
    #[arg(long, global = true, default_value = "tweet-topics.toml")]
    config: PathBuf,

    /// Override the output directory from the configuration
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,

    /// Override the global seed from the configuration
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Re-run stages even when their artifacts are up to date
    #[arg(long, global = true)]
    force: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage, or the subset given by --stages
    Run {
        /// Comma-separated stage names
        #[arg(long, value_delimiter = ',')]
        stages: Option<Vec<Stage>>,
    },
    /// Clean and tokenize the input tweets
    Preprocess,
    /// Train skip-gram word embeddings
    TrainEmbeddings,
    /// Cluster word embeddings by cosine distance
    ClusterWords,
    /// Build TF-IDF weighted tweet vectors over word clusters
    Vectorize,
    /// Train the autoencoder on tweet vectors
    TrainAutoencoder,
    /// Compress tweet vectors with the trained encoder
    Encode,
    /// Cluster the compressed tweet vectors
    ClusterTweets,
    /// Fit LDA topics and frequent words per tweet cluster
    Topics,
    /// Render the cluster report
    Report,
}

impl Command {
    fn stages(self) -> Option<Vec<Stage>> {
        let single = match self {
            Command::Run { stages } => return stages,
            Command::Preprocess => Stage::Preprocess,
            Command::TrainEmbeddings => Stage::TrainEmbeddings,
            Command::ClusterWords => Stage::ClusterWords,
            Command::Vectorize => Stage::Vectorize,
            Command::TrainAutoencoder => Stage::TrainAutoencoder,
            Command::Encode => Stage::Encode,
            Command::ClusterTweets => Stage::ClusterTweets,
            Command::Topics => Stage::Topics,
            Command::Report => Stage::Report,
        };
        Some(vec![single])
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };

    let mut cfg = match PipelineConfig::load(&cli.config) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if let Some(dir) = cli.output_dir {
        cfg.output_dir = dir;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }

    let stages = cli.command.stages();
    match pipeline::run_pipeline(&cfg, stages.as_deref(), RunOptions { force: cli.force }) {
        Ok(outcome) => {
            for s in &outcome.executed {
                println!("ran      {s}");
            }
            for s in &outcome.skipped {
                println!("skipped  {s} (up to date)");
            }
            ExitCode::SUCCESS
        }
        Err(e @ Error::Stage { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
