//! Answer cleansing and label normalization.
//!
//! LLM responses are free-form; the predicted cell type is the prefix up to
//! the first newline, comma, or period. Before scoring, both predictions and
//! references go through the same normalization: lowercase, punctuation
//! stripped, articles dropped, whitespace collapsed, tokens singularized.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use crate::dataset::SynonymSet;

/// A response together with its extracted and normalized prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CleansedLabel {
    pub raw: String,
    pub extracted: String,
    pub normalized: String,
}

/// Run the full cleanse → normalize pipeline on a raw response.
pub fn process_response(raw: &str) -> CleansedLabel {
    let extracted = cleanse(raw);
    let normalized = normalize_label(&extracted);
    CleansedLabel {
        raw: raw.to_string(),
        extracted,
        normalized,
    }
}

/// Longest prefix containing no newline, comma, or period, trimmed.
///
/// An empty result is a legal (always wrong) prediction.
pub fn cleanse(response: &str) -> String {
    let end = response
        .find(['\n', ',', '.'])
        .unwrap_or(response.len());
    response[..end].trim().to_string()
}

/// Tokens that never change under singularization.
const SINGULAR_EXCEPTIONS: &[&str] = &["species", "mucosa", "pancreas", "pons", "lens"];

/// Per-token singularization: exception table, then `-ies` → `-y`,
/// `-ses` → `-sis`, and a final `-s` drop unless the token ends in
/// `-ss`, `-us`, or `-is`.
pub fn singularize(phrase: &str) -> String {
    singularize_with(phrase, &HashSet::new())
}

/// Like [`singularize`] with extra exception tokens (compared lowercase).
pub fn singularize_with(phrase: &str, extra_exceptions: &HashSet<String>) -> String {
    phrase
        .split_whitespace()
        .map(|t| singular_token(t, extra_exceptions))
        .collect::<Vec<_>>()
        .join(" ")
}

fn singular_token(token: &str, extra: &HashSet<String>) -> String {
    let lower = token.to_lowercase();
    if SINGULAR_EXCEPTIONS.contains(&lower.as_str()) || extra.contains(&lower) {
        return token.to_string();
    }
    if let Some(stem) = token.strip_suffix("ies") {
        if !stem.is_empty() {
            return format!("{stem}y");
        }
    }
    if let Some(stem) = token.strip_suffix("ses") {
        if !stem.is_empty() {
            return format!("{stem}sis");
        }
    }
    if token.len() > 1
        && token.ends_with('s')
        && !token.ends_with("ss")
        && !token.ends_with("us")
        && !token.ends_with("is")
    {
        return token[..token.len() - 1].to_string();
    }
    token.to_string()
}

/// One exception token per line; `#` comments and blank lines ignored.
pub fn load_exception_file(path: &Path) -> std::io::Result<HashSet<String>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.to_lowercase())
        .collect())
}

/// Scoring normalization: lowercase, punctuation to spaces, articles dropped,
/// whitespace collapsed, tokens singularized.
///
/// `+` and `-` survive in token-final position so that marker suffixes like
/// "CD141+" stay meaningful; between alphanumerics they separate tokens
/// ("B-cells" becomes "b cells"). Only ASCII alphanumerics are kept, so the
/// output always matches `^[a-z0-9+ -]*$`.
pub fn normalize_label(phrase: &str) -> String {
    let lower = phrase.to_lowercase();
    let chars: Vec<char> = lower.chars().collect();
    let mut stripped = String::with_capacity(lower.len());
    for (i, &c) in chars.iter().enumerate() {
        if c.is_ascii_alphanumeric() {
            stripped.push(c);
        } else if c == '+' || c == '-' {
            let next_alnum = chars.get(i + 1).is_some_and(|n| n.is_ascii_alphanumeric());
            stripped.push(if next_alnum { ' ' } else { c });
        } else {
            stripped.push(' ');
        }
    }
    let tokens: Vec<String> = stripped
        .split_whitespace()
        .filter(|t| !matches!(*t, "a" | "an" | "the"))
        .map(|t| singular_token(t, &HashSet::new()))
        .collect();
    tokens.join(" ")
}

/// Ground-truth candidates for a label: its synonym set when the table has
/// one, otherwise the label alone.
pub fn reference_candidates(label: &str, table: &BTreeMap<String, SynonymSet>) -> SynonymSet {
    table
        .get(label)
        .cloned()
        .unwrap_or_else(|| SynonymSet::singleton(label))
}

/// Normalized reference strings, deduplicated, in candidate order.
pub fn normalized_references(set: &SynonymSet) -> Vec<String> {
    let mut out = Vec::new();
    for c in set.candidates() {
        let n = normalize_label(c);
        if !out.contains(&n) {
            out.push(n);
        }
    }
    out
}
