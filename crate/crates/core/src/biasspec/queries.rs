use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{expand_wildcards, BiasSpecification, BiasType};

/// Retrieval queries: every copula-suffixed `t1` phrase joined with every
/// `a1` attribute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySet {
    pub bias_type: BiasType,
    pub queries: Vec<String>,
}

impl QuerySet {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

/// Chooses between "is" and "are" from the head (last) word of a target
/// phrase. Heads not listed as singular take the plural form.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct NumberLexicon {
    singular: HashSet<String>,
}

impl NumberLexicon {
    pub fn new<I: IntoIterator<Item = S>, S: Into<String>>(singular: I) -> Self {
        NumberLexicon {
            singular: singular.into_iter().map(Into::into).collect(),
        }
    }

    /// Lexicon covering the head words of the bundled specifications.
    pub fn bundled() -> Self {
        serde_json::from_str(include_str!("../../assets/copula.json")).expect("bundled copula lexicon is valid")
    }

    pub fn copula(&self, phrase: &str) -> &'static str {
        let head = phrase.rsplit(' ').next().unwrap_or(phrase);
        if self.singular.contains(head) {
            "is"
        } else {
            "are"
        }
    }

    /// `"jews"` becomes `"jews are"`, `"husband"` becomes `"husband is"`.
    pub fn with_copula(&self, phrase: &str) -> String {
        format!("{phrase} {}", self.copula(phrase))
    }
}

/// Builds the query set using bare prefixes for wildcard attributes.
pub fn generate_queries(spec: &BiasSpecification) -> QuerySet {
    build(spec, &spec.a1.without_markers(), &NumberLexicon::bundled())
}

/// Builds the query set with wildcard attributes expanded over `vocabulary`.
pub fn generate_queries_with_vocabulary<S: AsRef<str>>(
    spec: &BiasSpecification,
    vocabulary: &[S],
    lexicon: &NumberLexicon,
) -> QuerySet {
    let attrs = expand_wildcards(&spec.a1, vocabulary).terms.terms().to_vec();
    build(spec, &attrs, lexicon)
}

fn build(spec: &BiasSpecification, attributes: &[String], lexicon: &NumberLexicon) -> QuerySet {
    let targets = spec.t1.without_markers();
    let queries = targets
        .iter()
        .flat_map(|t| {
            let prefix = lexicon.with_copula(t);
            attributes.iter().map(move |a| format!("{prefix} {a}"))
        })
        .collect();
    QuerySet {
        bias_type: spec.bias_type,
        queries,
    }
}
