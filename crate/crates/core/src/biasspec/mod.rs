//! Bias specifications: target and attribute term sets, curated target
//! pairs, retrieval queries, and counterfactual rewriting.
//!
//! A specification describes one bias dimension as two target sets (`t1`
//! names the minoritized group, `t2` the dominant group), two attribute
//! sets (`a1` stereotypical, `a2` its loose antonyms), and the list of
//! `(minoritized, dominant)` term pairs used for counterfactual rewriting
//! and by the debiasing losses.

mod counterfactual;
mod queries;
mod wildcard;

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use counterfactual::{build_counterfactual, Counterfactual, Direction};
pub use queries::{generate_queries, generate_queries_with_vocabulary, NumberLexicon, QuerySet};
pub use wildcard::{expand_wildcards, Expansion};

pub const WILDCARD: char = '*';

/// The five bias dimensions shipped with the crate, plus user-defined ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasType {
    Religion1,
    Religion2,
    Race,
    Gender,
    Queerness,
    Custom,
}

impl BiasType {
    pub const BUNDLED: [BiasType; 5] = [
        BiasType::Religion1,
        BiasType::Religion2,
        BiasType::Race,
        BiasType::Gender,
        BiasType::Queerness,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            BiasType::Religion1 => "religion1",
            BiasType::Religion2 => "religion2",
            BiasType::Race => "race",
            BiasType::Gender => "gender",
            BiasType::Queerness => "queerness",
            BiasType::Custom => "custom",
        }
    }
}

impl fmt::Display for BiasType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BiasType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "religion1" => Ok(BiasType::Religion1),
            "religion2" => Ok(BiasType::Religion2),
            "race" => Ok(BiasType::Race),
            "gender" => Ok(BiasType::Gender),
            "queerness" => Ok(BiasType::Queerness),
            "custom" => Ok(BiasType::Custom),
            other => Err(Error::invalid("bias_type", format!("unknown bias type `{other}`"))),
        }
    }
}

/// A validated, lowercase, duplicate-free list of terms or phrases.
///
/// A word inside a phrase may end in `*`, which matches every vocabulary
/// word sharing the prefix (see [`expand_wildcards`]).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct TermSet(Vec<String>);

impl TermSet {
    pub fn new<I, S>(terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self::named("terms", terms)
    }

    /// Like [`TermSet::new`], reporting violations against `field`.
    pub fn named<I, S>(field: &str, terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for term in terms {
            let term = normalize_phrase(term.as_ref());
            if term.is_empty() {
                return Err(Error::invalid(field, "empty term"));
            }
            for word in term.split(' ') {
                let stars = word.matches(WILDCARD).count();
                if stars > 1 || (stars == 1 && !word.ends_with(WILDCARD)) || word == "*" {
                    return Err(Error::invalid(field, format!("wildcard must end a word: `{term}`")));
                }
            }
            if !seen.insert(term.clone()) {
                return Err(Error::invalid(field, format!("duplicate term `{term}`")));
            }
            out.push(term);
        }
        if out.is_empty() {
            return Err(Error::invalid(field, "term set is empty"));
        }
        Ok(TermSet(out))
    }

    pub(crate) fn from_unchecked(terms: Vec<String>) -> Self {
        TermSet(terms)
    }

    pub fn terms(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    pub fn contains(&self, term: &str) -> bool {
        self.0.iter().any(|t| t == term)
    }

    pub fn has_wildcards(&self) -> bool {
        self.0.iter().any(|t| t.contains(WILDCARD))
    }

    /// Terms with wildcard markers removed, keeping bare prefixes.
    pub fn without_markers(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.0
            .iter()
            .map(|t| t.replace(WILDCARD, ""))
            .filter(|t| seen.insert(t.clone()))
            .collect()
    }
}

impl<'de> Deserialize<'de> for TermSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = Vec::<String>::deserialize(d)?;
        TermSet::new(raw).map_err(serde::de::Error::custom)
    }
}

/// One curated `(minoritized, dominant)` target pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "(String, String)", into = "(String, String)")]
pub struct TermPair {
    pub minoritized: String,
    pub dominant: String,
}

impl TermPair {
    pub fn new(minoritized: &str, dominant: &str) -> Result<Self> {
        let minoritized = normalize_phrase(minoritized);
        let dominant = normalize_phrase(dominant);
        if minoritized.is_empty() || dominant.is_empty() {
            return Err(Error::invalid("pairs", "pair side is empty"));
        }
        if minoritized == dominant {
            return Err(Error::invalid(
                "pairs",
                format!("pair sides are identical: `{minoritized}`"),
            ));
        }
        Ok(TermPair { minoritized, dominant })
    }
}

impl TryFrom<(String, String)> for TermPair {
    type Error = Error;

    fn try_from((m, d): (String, String)) -> Result<Self> {
        TermPair::new(&m, &d)
    }
}

impl From<TermPair> for (String, String) {
    fn from(p: TermPair) -> Self {
        (p.minoritized, p.dominant)
    }
}

/// On-disk layout; validated into [`BiasSpecification`].
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SpecDocument {
    bias_type: BiasType,
    t1: Vec<String>,
    t2: Vec<String>,
    a1: Vec<String>,
    a2: Vec<String>,
    pairs: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecDocument", into = "SpecDocument")]
pub struct BiasSpecification {
    pub bias_type: BiasType,
    pub t1: TermSet,
    pub t2: TermSet,
    pub a1: TermSet,
    pub a2: TermSet,
    pub pairs: Vec<TermPair>,
}

impl TryFrom<SpecDocument> for BiasSpecification {
    type Error = Error;

    fn try_from(doc: SpecDocument) -> Result<Self> {
        let spec = BiasSpecification {
            bias_type: doc.bias_type,
            t1: TermSet::named("t1", doc.t1)?,
            t2: TermSet::named("t2", doc.t2)?,
            a1: TermSet::named("a1", doc.a1)?,
            a2: TermSet::named("a2", doc.a2)?,
            pairs: doc.pairs.into_iter().map(TermPair::try_from).collect::<Result<_>>()?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<BiasSpecification> for SpecDocument {
    fn from(s: BiasSpecification) -> Self {
        SpecDocument {
            bias_type: s.bias_type,
            t1: s.t1.0,
            t2: s.t2.0,
            a1: s.a1.0,
            a2: s.a2.0,
            pairs: s.pairs.into_iter().map(Into::into).collect(),
        }
    }
}

impl BiasSpecification {
    /// Checks the cross-set invariants: every pair side is anchored in its
    /// target set and the attribute sets do not overlap.
    pub fn validate(&self) -> Result<()> {
        for pair in &self.pairs {
            if !anchored_in(&pair.minoritized, &self.t1) {
                return Err(Error::invalid(
                    "pairs",
                    format!("`{}` does not match any t1 term", pair.minoritized),
                ));
            }
            if !anchored_in(&pair.dominant, &self.t2) {
                return Err(Error::invalid(
                    "pairs",
                    format!("`{}` does not match any t2 term", pair.dominant),
                ));
            }
        }
        if let Some(term) = overlapping_attribute(&self.a1, &self.a2) {
            return Err(Error::invalid("a2", format!("`{term}` also occurs in a1")));
        }
        Ok(())
    }

    pub fn from_json(json: &str) -> Result<Self> {
        serde_json::from_str(json).map_err(|e| Error::parse("bias specification", e))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("specification serializes")
    }

    /// One of the five specifications bundled with the crate.
    pub fn bundled(bias_type: BiasType) -> Result<Self> {
        let json = match bias_type {
            BiasType::Religion1 => include_str!("../../assets/religion1.json"),
            BiasType::Religion2 => include_str!("../../assets/religion2.json"),
            BiasType::Race => include_str!("../../assets/race.json"),
            BiasType::Gender => include_str!("../../assets/gender.json"),
            BiasType::Queerness => include_str!("../../assets/queerness.json"),
            BiasType::Custom => return Err(Error::invalid("bias_type", "no bundled custom specification")),
        };
        Self::from_json(json)
    }

    /// Pairs with the sides swapped, useful for anti-stereotypical probes.
    pub fn swapped(&self) -> BiasSpecification {
        BiasSpecification {
            bias_type: self.bias_type,
            t1: self.t2.clone(),
            t2: self.t1.clone(),
            a1: self.a1.clone(),
            a2: self.a2.clone(),
            pairs: self
                .pairs
                .iter()
                .map(|p| TermPair {
                    minoritized: p.dominant.clone(),
                    dominant: p.minoritized.clone(),
                })
                .collect(),
        }
    }
}

/// Loads and validates a specification file.
pub fn load_specification(path: impl AsRef<Path>) -> Result<BiasSpecification> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    BiasSpecification::from_json(&text)
}

/// Lowercases, trims, and collapses inner whitespace.
pub(crate) fn normalize_phrase(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn squash(s: &str) -> String {
    s.chars().filter(|c| c.is_alphanumeric()).collect()
}

// Pair sides and target phrases are written inconsistently ("afroamericans"
// vs "afro-americans", "dark skin" vs "dark-skinned"), so anchoring compares
// alphanumeric-only forms: the side must occur inside some target phrase, or
// some target head word must occur inside the side ("islam" / "islamism").
fn anchored_in(side: &str, targets: &TermSet) -> bool {
    let side = squash(side);
    targets.iter().any(|t| {
        let t = t.replace(WILDCARD, "");
        squash(&t).contains(&side)
            || t.split(|c: char| !c.is_alphanumeric())
                .filter(|w| !w.is_empty())
                .any(|w| side.contains(w))
    })
}

fn overlapping_attribute(a1: &TermSet, a2: &TermSet) -> Option<String> {
    fn covers(pattern: &str, term: &str) -> bool {
        match pattern.strip_suffix(WILDCARD) {
            Some(prefix) => term.replace(WILDCARD, "").starts_with(prefix),
            None => pattern == term,
        }
    }
    for x in a1.iter() {
        for y in a2.iter() {
            if covers(x, y) || covers(y, x) {
                return Some(y.to_string());
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(t1: &[&str], a1: &[&str], a2: &[&str]) -> String {
        serde_json::json!({
            "bias_type": "custom",
            "t1": t1,
            "t2": ["christians"],
            "a1": a1,
            "a2": a2,
            "pairs": [["jews", "christians"]],
        })
        .to_string()
    }

    #[test]
    fn bundled_specs_load() {
        for bt in BiasType::BUNDLED {
            let spec = BiasSpecification::bundled(bt).unwrap();
            assert_eq!(spec.bias_type, bt);
            assert!(!spec.pairs.is_empty());
        }
    }

    #[test]
    fn religion2_pairs() {
        let spec = BiasSpecification::bundled(BiasType::Religion2).unwrap();
        for (m, d) in [
            ("muslim", "christian"),
            ("islam", "christianity"),
            ("arabs", "americans"),
        ] {
            assert!(spec.pairs.contains(&TermPair::new(m, d).unwrap()), "missing ({m}, {d})");
        }
    }

    #[test]
    fn empty_t1_rejected() {
        let err = BiasSpecification::from_json(&doc(&[], &["greedy"], &["generous"])).unwrap_err();
        assert!(err.to_string().contains("t1"), "{err}");
    }

    #[test]
    fn duplicate_attribute_rejected() {
        let err = BiasSpecification::from_json(&doc(&["jews"], &["greedy", "greedy"], &["generous"])).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn overlapping_attributes_rejected() {
        let err = BiasSpecification::from_json(&doc(&["jews"], &["greed*"], &["greedy"])).unwrap_err();
        assert!(err.to_string().contains("a2"), "{err}");
    }

    #[test]
    fn unanchored_pair_rejected() {
        let json = serde_json::json!({
            "bias_type": "custom", "t1": ["jews"], "t2": ["christians"],
            "a1": ["greedy"], "a2": ["generous"], "pairs": [["muslims", "christians"]],
        });
        assert!(BiasSpecification::from_json(&json.to_string()).is_err());
    }

    #[test]
    fn uppercase_input_is_lowercased() {
        let spec = BiasSpecification::from_json(&doc(&["Jews"], &["Greedy"], &["generous"])).unwrap();
        assert_eq!(spec.t1.terms(), ["jews"]);
        assert_eq!(spec.a1.terms(), ["greedy"]);
    }

    #[test]
    fn misplaced_wildcard_rejected() {
        assert!(TermSet::new(["gr*eedy"]).is_err());
        assert!(TermSet::new(["*"]).is_err());
        assert!(TermSet::new(["drag queen*"]).is_ok());
    }

    #[test]
    fn json_round_trip() {
        let spec = BiasSpecification::bundled(BiasType::Race).unwrap();
        let back = BiasSpecification::from_json(&spec.to_json()).unwrap();
        assert_eq!(spec, back);
    }
}
