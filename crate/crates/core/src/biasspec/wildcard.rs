use std::collections::HashSet;

use super::{TermSet, WILDCARD};

/// Result of expanding wildcard terms against a vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expansion {
    pub terms: TermSet,
    /// Wildcard terms that matched nothing and were kept as bare prefixes.
    pub unmatched: Vec<String>,
}

/// Replaces every wildcard term by all vocabulary words sharing its prefix.
///
/// For a multiword phrase only the final word may carry the marker, so
/// `sexual predator*` expands to `sexual predator`, `sexual predators`, ...
/// Non-wildcard terms pass through unchanged and the result is deduplicated
/// in first-seen order. Matches are emitted in vocabulary order.
pub fn expand_wildcards<S: AsRef<str>>(set: &TermSet, vocabulary: &[S]) -> Expansion {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let mut unmatched = Vec::new();
    let mut push = |t: String, out: &mut Vec<String>| {
        if seen.insert(t.clone()) {
            out.push(t);
        }
    };

    for term in set.iter() {
        let Some(stem) = term.strip_suffix(WILDCARD) else {
            push(term.to_string(), &mut out);
            continue;
        };
        let (head, prefix) = match stem.rsplit_once(' ') {
            Some((head, last)) => (Some(head), last),
            None => (None, stem),
        };
        let mut matched = false;
        for word in vocabulary.iter().map(AsRef::as_ref) {
            if word.starts_with(prefix) && !word.contains(' ') {
                matched = true;
                let full = match head {
                    Some(h) => format!("{h} {word}"),
                    None => word.to_string(),
                };
                push(full, &mut out);
            }
        }
        if !matched {
            unmatched.push(term.to_string());
            push(stem.to_string(), &mut out);
        }
    }
    Expansion {
        terms: TermSet::from_unchecked(out),
        unmatched,
    }
}
