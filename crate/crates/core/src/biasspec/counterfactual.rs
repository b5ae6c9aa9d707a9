use serde::{Deserialize, Serialize};

use super::TermPair;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// minoritized -> dominant
    Forward,
    /// dominant -> minoritized
    Reverse,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Counterfactual {
    pub text: String,
    pub replacements: usize,
}

/// Rewrites every whole-word occurrence of a pair's source side with its
/// target side. A trailing plural `s` is allowed and kept, so a `muslim`
/// pair also turns `muslims` into `christians`.
///
/// Matching is a single left-to-right pass; at each word start the longest
/// source wins, with ties going to the earlier pair. Word boundaries are
/// any non-alphanumeric character, so hyphenated compounds such as
/// `jewish-americans` still rewrite their first part.
pub fn build_counterfactual(phrase: &str, pairs: &[TermPair], direction: Direction) -> Counterfactual {
    let mut rules: Vec<(Vec<char>, &str)> = pairs
        .iter()
        .map(|p| match direction {
            Direction::Forward => (p.minoritized.chars().collect(), p.dominant.as_str()),
            Direction::Reverse => (p.dominant.chars().collect(), p.minoritized.as_str()),
        })
        .collect();
    rules.sort_by_key(|(src, _)| std::cmp::Reverse(src.len()));

    let chars: Vec<char> = phrase.chars().collect();
    let mut text = String::with_capacity(phrase.len());
    let mut replacements = 0;
    let mut i = 0;
    while i < chars.len() {
        let at_word_start = i == 0 || !chars[i - 1].is_alphanumeric();
        let hit = at_word_start
            .then(|| {
                rules.iter().find(|(src, _)| {
                    let end = i + src.len();
                    end <= chars.len()
                        && chars[i..end] == src[..]
                        && (boundary(&chars, end) || (chars[end] == 's' && boundary(&chars, end + 1)))
                })
            })
            .flatten();
        match hit {
            Some((src, target)) => {
                text.push_str(target);
                replacements += 1;
                i += src.len();
            }
            None => {
                text.push(chars[i]);
                i += 1;
            }
        }
    }
    Counterfactual { text, replacements }
}

fn boundary(chars: &[char], i: usize) -> bool {
    i >= chars.len() || !chars[i].is_alphanumeric()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn pairs(list: &[(&str, &str)]) -> Vec<TermPair> {
        list.iter().map(|(m, d)| TermPair::new(m, d).unwrap()).collect()
    }

    #[test]
    fn rewrites_target_term() {
        let cf = build_counterfactual(
            "everyone knows jews are greedy",
            &pairs(&[("jews", "christians")]),
            Direction::Forward,
        );
        assert_eq!(cf.text, "everyone knows christians are greedy");
        assert_eq!(cf.replacements, 1);
    }

    #[test]
    fn plural_suffix_kept() {
        let p = pairs(&[("muslim", "christian")]);
        let cf = build_counterfactual("muslims are x", &p, Direction::Forward);
        assert_eq!(cf.text, "christians are x");
        let cf = build_counterfactual("muslimsy are x", &p, Direction::Forward);
        assert_eq!(cf.replacements, 0);
    }

    #[test]
    fn no_target_is_noop() {
        let cf = build_counterfactual(
            "the weather is nice",
            &pairs(&[("jews", "christians")]),
            Direction::Forward,
        );
        assert_eq!(cf.text, "the weather is nice");
        assert_eq!(cf.replacements, 0);
    }

    #[test]
    fn whole_word_only() {
        let p = pairs(&[("jew", "christian"), ("jewish", "christian")]);
        let cf = build_counterfactual("a jewish jew and jewelry", &p, Direction::Forward);
        assert_eq!(cf.text, "a christian christian and jewelry");
        assert_eq!(cf.replacements, 2);
    }

    #[test]
    fn longest_match_first() {
        let p = pairs(&[("african", "american"), ("african american", "anglo american")]);
        let cf = build_counterfactual("african american men", &p, Direction::Forward);
        assert_eq!(cf.text, "anglo american men");
        assert_eq!(cf.replacements, 1);
    }

    #[test]
    fn hyphenated_compound() {
        let p = pairs(&[("jewish", "christian")]);
        let cf = build_counterfactual("jewish-americans are", &p, Direction::Forward);
        assert_eq!(cf.text, "christian-americans are");
    }

    #[test]
    fn that_muslim_is_dangerous() {
        let p = pairs(&[("muslim", "christian")]);
        let cf = build_counterfactual("that muslim is dangerous", &p, Direction::Forward);
        assert_eq!(cf.text, "that christian is dangerous");
    }

    fn bijective() -> Vec<TermPair> {
        pairs(&[
            ("jews", "christians"),
            ("judaism", "christianity"),
            ("jewish", "catholic"),
        ])
    }

    proptest! {
        #[test]
        fn round_trip_without_dominant_terms(
            words in proptest::collection::vec(
                prop_oneof![
                    Just("jews"), Just("judaism"), Just("jewish"), Just("are"),
                    Just("greedy"), Just("everyone"), Just("knows"), Just("jewelry")
                ],
                0..12,
            )
        ) {
            let phrase = words.join(" ");
            let p = bijective();
            let fwd = build_counterfactual(&phrase, &p, Direction::Forward);
            let back = build_counterfactual(&fwd.text, &p, Direction::Reverse);
            prop_assert_eq!(back.text, phrase);
            prop_assert_eq!(back.replacements, fwd.replacements);
        }

        #[test]
        fn idempotent_when_targets_are_not_sources(
            words in proptest::collection::vec(
                prop_oneof![Just("jews"), Just("judaism"), Just("christians"), Just("are"), Just("x-jews")],
                0..10,
            )
        ) {
            let phrase = words.join(" ");
            let p = bijective();
            let once = build_counterfactual(&phrase, &p, Direction::Forward);
            let twice = build_counterfactual(&once.text, &p, Direction::Forward);
            prop_assert_eq!(twice.text, once.text);
            prop_assert_eq!(twice.replacements, 0);
        }
    }
}
