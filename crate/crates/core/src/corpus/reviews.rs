//! Newline-delimited review records: JSON lines or tab-separated text.

use std::fs;
use std::path::Path;

use serde::Deserialize;

use super::RawReview;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RecordError {
    /// 1-based line number.
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedReviews {
    pub reviews: Vec<RawReview>,
    pub errors: Vec<RecordError>,
}

impl ParsedReviews {
    pub fn total(&self) -> usize {
        self.reviews.len() + self.errors.len()
    }

    pub fn malformed_fraction(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            self.errors.len() as f64 / self.total() as f64
        }
    }
}

#[derive(Deserialize)]
struct JsonRecord {
    text: String,
    rating: serde_json::Number,
    brand: String,
}

enum Format {
    JsonLines,
    Tsv,
}

fn detect(path: &Path) -> Result<Format> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    match ext.as_deref() {
        Some("jsonl") | Some("json") | Some("ndjson") => Ok(Format::JsonLines),
        Some("tsv") | Some("txt") => Ok(Format::Tsv),
        _ => Err(Error::validation(format!(
            "cannot infer record format of {}: expected .jsonl or .tsv",
            path.display()
        ))),
    }
}

fn parse_rating(n: &serde_json::Number) -> Option<i64> {
    if let Some(i) = n.as_i64() {
        return Some(i);
    }
    let f = n.as_f64()?;
    (f.fract() == 0.0).then_some(f as i64)
}

fn parse_json(line: &str) -> std::result::Result<RawReview, String> {
    let rec: JsonRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let rating = parse_rating(&rec.rating).ok_or_else(|| format!("rating {} is not an integer", rec.rating))?;
    Ok(RawReview {
        text: rec.text,
        rating,
        brand: rec.brand,
    })
}

fn parse_tsv(line: &str) -> std::result::Result<RawReview, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 3 {
        return Err(format!("expected 3 tab-separated fields, found {}", fields.len()));
    }
    let rating = fields[1]
        .trim()
        .parse::<i64>()
        .map_err(|e| format!("bad rating {:?}: {e}", fields[1]))?;
    Ok(RawReview {
        text: fields[0].to_string(),
        rating,
        brand: fields[2].trim().to_string(),
    })
}

/// Parse `text`, collecting per-line failures instead of stopping at the first.
pub fn parse_reviews(text: &str, jsonl: bool) -> ParsedReviews {
    let mut out = ParsedReviews::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if !jsonl && i == 0 && line.trim_end() == "text\trating\tbrand" {
            continue;
        }
        let parsed = if jsonl { parse_json(line) } else { parse_tsv(line) };
        match parsed.and_then(|r| r.validate().map(|_| r).map_err(|e| e.to_string())) {
            Ok(r) => out.reviews.push(r),
            Err(message) => out.errors.push(RecordError { line: i + 1, message }),
        }
    }
    out
}

/// Read reviews from `path`; format chosen by extension.
pub fn read_reviews(path: &Path) -> Result<ParsedReviews> {
    let format = detect(path)?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_reviews(&text, matches!(format, Format::JsonLines)))
}
