//! Tweet ingestion, cleaning and tokenization.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use unicode_general_category::{get_general_category, GeneralCategory};

use crate::io::{check_id, read_to_string, write_atomic};
use crate::{Error, Result};

/// Stopword list shipped with the crate.
pub const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords_en.txt");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTweet {
    pub id: String,
    pub text: String,
}

/// A cleaned tweet. Tokens are lowercase and free of whitespace and
/// punctuation; the list may be empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub stopwords: BTreeSet<String>,
}

impl Corpus {
    /// Cleans and tokenizes every tweet. Fails if two tweets share an id.
    pub fn from_tweets(tweets: &[RawTweet], stopwords: BTreeSet<String>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(tweets.len());
        let mut documents = Vec::with_capacity(tweets.len());
        for t in tweets {
            if !seen.insert(t.id.as_str()) {
                return Err(Error::Config(format!("duplicate tweet id `{}`", t.id)));
            }
            documents.push(Document {
                id: t.id.clone(),
                tokens: tokenize(&clean_text(&t.text), &stopwords),
            });
        }
        Ok(Corpus {
            documents,
            stopwords,
        })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }
}

/// Loads tweets from a CSV file with a header row.
///
/// The id is taken from an `id` column when there is one, otherwise the
/// 0-based data row index is used. Missing text cells become empty text.
pub fn load_tweets(path: &Path, text_column: &str) -> Result<Vec<RawTweet>> {
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    check_quotes(path, &data)?;

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(data.as_slice());
    let headers = reader.headers().map_err(|e| csv_error(path, 1, e))?.clone();
    let text_idx = headers
        .iter()
        .position(|h| h.trim() == text_column)
        .ok_or_else(|| Error::MissingColumn {
            path: path.to_path_buf(),
            column: text_column.to_string(),
        })?;
    let id_idx = headers.iter().position(|h| h.trim() == "id");

    let mut tweets = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, row as u64 + 2, e))?;
        let id = match id_idx.and_then(|i| record.get(i)) {
            Some(id) if !id.is_empty() => id.to_string(),
            _ => row.to_string(),
        };
        let text = record.get(text_idx).unwrap_or("").to_string();
        tweets.push(RawTweet { id, text });
    }
    Ok(tweets)
}

fn csv_error(path: &Path, fallback_row: u64, e: csv::Error) -> Error {
    let row = e.position().map(|p| p.line()).unwrap_or(fallback_row);
    Error::Csv {
        path: path.to_path_buf(),
        row,
        message: e.to_string(),
    }
}

/// The csv reader silently runs an unterminated quoted field to end of file,
/// so balance is checked up front and the opening line reported.
fn check_quotes(path: &Path, data: &[u8]) -> Result<()> {
    let mut in_quotes = false;
    let mut line = 1u64;
    let mut opened_at = 0u64;
    for &b in data {
        match b {
            b'"' => {
                in_quotes = !in_quotes;
                if in_quotes {
                    opened_at = line;
                }
            }
            b'\n' => line += 1,
            _ => {}
        }
    }
    if in_quotes {
        return Err(Error::Csv {
            path: path.to_path_buf(),
            row: opened_at,
            message: "unbalanced quotes: quoted field is never closed".into(),
        });
    }
    Ok(())
}

fn is_punctuation(c: char) -> bool {
    matches!(c, '$' | '#' | '@' | '^' | '~' | '|' | '<' | '>' | '=')
        || matches!(
            get_general_category(c),
            GeneralCategory::ConnectorPunctuation
                | GeneralCategory::DashPunctuation
                | GeneralCategory::OpenPunctuation
                | GeneralCategory::ClosePunctuation
                | GeneralCategory::InitialPunctuation
                | GeneralCategory::FinalPunctuation
                | GeneralCategory::OtherPunctuation
        )
}

fn is_url(token: &str) -> bool {
    token.starts_with("http://") || token.starts_with("https://") || token.starts_with("www.")
}

/// Strips a leading `RT` marker, URLs, @-mentions, hashtags and punctuation,
/// then lowercases and collapses whitespace.
pub fn clean_text(raw: &str) -> String {
    let mut tokens = raw.split_whitespace().peekable();
    if tokens.peek() == Some(&"RT") {
        tokens.next();
    }
    let mut out = String::with_capacity(raw.len());
    for token in tokens {
        if is_url(token) || token.starts_with('@') || token.starts_with('#') {
            continue;
        }
        let stripped: String = token.chars().filter(|&c| !is_punctuation(c)).collect();
        let lowered = stripped.to_lowercase();
        // lowercasing can surface characters that split_whitespace treats as
        // separators only in theory; re-split to keep tokens whitespace-free
        for part in lowered.split_whitespace() {
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(part);
        }
    }
    out
}

pub fn tokenize(clean: &str, stopwords: &BTreeSet<String>) -> Vec<String> {
    clean
        .split_whitespace()
        .filter(|t| !stopwords.contains(*t))
        .map(str::to_string)
        .collect()
}

/// Parses a stopword list: one word per line, `#` comments and blank lines
/// ignored. Entries go through [`clean_text`] so they match cleaned tokens.
pub fn parse_stopwords(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .flat_map(|l| {
            clean_text(l)
                .split_whitespace()
                .map(str::to_string)
                .collect::<Vec<_>>()
        })
        .collect()
}

pub fn default_stopwords() -> BTreeSet<String> {
    parse_stopwords(DEFAULT_STOPWORDS)
}

pub fn load_stopwords(path: &Path) -> Result<BTreeSet<String>> {
    Ok(parse_stopwords(&read_to_string(path)?))
}

/// Serializes documents as `id<TAB>token token ...`, one per line.
pub fn write_token_file(path: &Path, documents: &[Document]) -> Result<()> {
    let mut out = String::new();
    for doc in documents {
        check_id(&doc.id, &['\t', '\n', '\r'])?;
        out.push_str(&doc.id);
        out.push('\t');
        out.push_str(&doc.tokens.join(" "));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_token_file(path: &Path) -> Result<Vec<Document>> {
    let text = read_to_string(path)?;
    let mut docs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let (id, rest) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, i + 1, "missing tab separator"))?;
        docs.push(Document {
            id: id.to_string(),
            tokens: rest.split(' ').filter(|t| !t.is_empty()).map(str::to_string).collect(),
        });
    }
    Ok(docs)
}
