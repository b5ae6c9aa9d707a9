use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

pub const MAX_COMMENT_CHARS: usize = 150;

/// Which text the length limit is measured on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LengthBasis {
    #[default]
    Cleaned,
    Original,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanOptions {
    /// Comments at or above this many characters are rejected.
    pub max_chars: usize,
    pub basis: LengthBasis,
}

impl Default for CleanOptions {
    fn default() -> Self {
        CleanOptions {
            max_chars: MAX_COMMENT_CHARS,
            basis: LengthBasis::Cleaned,
        }
    }
}

static URL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^(?:[a-z][a-z0-9+.\-]*://|www\.)").expect("valid regex"));
static MENTION: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)^/?u/[a-z0-9_\-]+").expect("valid regex"));

/// Cleans a comment with the default options; `None` means rejected.
pub fn clean_comment(body: &str) -> Option<String> {
    clean_comment_with(body, &CleanOptions::default())
}

/// Drops URL tokens and `u/name` mentions, collapses whitespace, and
/// lowercases. Returns `None` when the length limit is hit.
pub fn clean_comment_with(body: &str, opts: &CleanOptions) -> Option<String> {
    if opts.basis == LengthBasis::Original && body.chars().count() >= opts.max_chars {
        return None;
    }
    let mut kept: Vec<String> = Vec::new();
    for tok in body.split_whitespace() {
        let mut rest = tok;
        while let Some(m) = MENTION.find(rest) {
            rest = &rest[m.end()..];
        }
        if !rest.is_empty() && !URL.is_match(rest) {
            kept.push(rest.to_lowercase());
        }
    }
    let cleaned = kept.join(" ");
    if opts.basis == LengthBasis::Cleaned && cleaned.chars().count() >= opts.max_chars {
        return None;
    }
    Some(cleaned)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn strips_urls_mentions_and_space() {
        assert_eq!(
            clean_comment("Visit https://x.co NOW  u/bob").as_deref(),
            Some("visit now")
        );
        assert_eq!(
            clean_comment("see www.example.org and /u/Some_User, ok").as_deref(),
            Some("see and , ok")
        );
    }

    #[test]
    fn over_length_rejected() {
        let body = "a".repeat(200);
        assert_eq!(clean_comment(&body), None);
        assert_eq!(clean_comment(&"b".repeat(150)), None);
        assert!(clean_comment(&"b".repeat(149)).is_some());
    }

    #[test]
    fn length_basis_switch() {
        // 160 chars before cleaning, short afterwards
        let body = format!("hello https://{}", "x".repeat(150));
        assert_eq!(clean_comment(&body).as_deref(), Some("hello"));
        let opts = CleanOptions {
            basis: LengthBasis::Original,
            ..CleanOptions::default()
        };
        assert_eq!(clean_comment_with(&body, &opts), None);
    }

    #[test]
    fn clean_text_unchanged() {
        assert_eq!(
            clean_comment("he just thinks all blacks are criminals").as_deref(),
            Some("he just thinks all blacks are criminals")
        );
    }

    proptest! {
        #[test]
        fn idempotent(body in "[A-Za-z /:._u]{0,80}") {
            if let Some(once) = clean_comment(&body) {
                prop_assert_eq!(clean_comment(&once), Some(once));
            }
        }
    }
}
