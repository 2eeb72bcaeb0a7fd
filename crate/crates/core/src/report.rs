//! Plain-text cluster report in the `weight*word` table style.

use std::fmt::Write;

use crate::topics::TopicSummary;

/// One topic row: `0.080*sales 0.080*billion 0.075*quarterly`.
pub fn render_topic_row(pairs: &[(String, f64)]) -> String {
    pairs
        .iter()
        .map(|(word, weight)| format!("{weight:.3}*{word}"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Renders one section per cluster: a header with the document count, one
/// line per topic, and the frequent-word list.
pub fn render_report(summaries: &[TopicSummary]) -> String {
    let mut out = String::new();
    for (i, s) in summaries.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "Cluster {} ({} documents)", s.cluster, s.document_count);
        match &s.skipped {
            Some(reason) => {
                let _ = writeln!(out, "skipped: {reason}");
            }
            None => {
                for (t, pairs) in s.topics.iter().enumerate() {
                    let _ = writeln!(out, "Topic {}: {}", t + 1, render_topic_row(pairs));
                }
            }
        }
        let words: Vec<&str> = s.frequent_words.iter().map(|(w, _)| w.as_str()).collect();
        let listed = if words.is_empty() { "none".to_string() } else { words.join(", ") };
        let _ = writeln!(out, "Top {} frequent words: {listed}.", words.len());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(v: &[(f64, &str)]) -> Vec<(String, f64)> {
        v.iter().map(|&(w, s)| (s.to_string(), w)).collect()
    }

    #[test]
    fn topic_row_format() {
        let row = pairs(&[(0.08, "sales"), (0.08, "billion"), (0.075, "quarterly")]);
        assert_eq!(render_topic_row(&row), "0.080*sales 0.080*billion 0.075*quarterly");
        assert_eq!(render_topic_row(&[]), "");
    }

    #[test]
    fn skipped_cluster_section() {
        let s = TopicSummary {
            cluster: 3,
            document_count: 0,
            topics: vec![],
            frequent_words: vec![],
            skipped: Some("0 documents, fewer than 5 topics".into()),
        };
        assert_eq!(
            render_report(&[s]),
            "Cluster 3 (0 documents)\nskipped: 0 documents, fewer than 5 topics\nTop 0 frequent words: none.\n"
        );
    }
}
