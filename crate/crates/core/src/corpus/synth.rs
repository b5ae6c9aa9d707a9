//! Synthetic corpora for desk-scale experiments: a language-modelling
//! corpus with a planted target/attribute association, and templated
//! stand-ins for dialog state tracking and response generation.

use std::collections::HashMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::biasspec::{build_counterfactual, BiasSpecification, Direction, NumberLexicon};
use crate::error::{Error, Result};
use crate::lm::split_words;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedCorpus {
    /// Attribute sentences and fillers, shuffled together.
    pub sentences: Vec<String>,
    /// Distinct `t1 + a1` sentences in first-seen order.
    pub biased_phrases: Vec<String>,
    /// Count of `(t1, a1)` and `(t2, a2)` sentences.
    pub stereotypical: usize,
    /// Count of `(t1, a2)` and `(t2, a1)` sentences.
    pub inverted: usize,
    pub fillers: usize,
}

const FILLER_NOUNS: &[&str] = &[
    "weather", "food", "movie", "game", "park", "city", "music", "book", "train", "coffee", "garden", "market",
];
const FILLER_ADJS: &[&str] = &[
    "nice", "long", "fun", "cold", "warm", "quiet", "busy", "great", "small", "old",
];
const FILLER_TEMPLATES: &[&str] = &[
    "the {n} is {a} today",
    "i think the {n} was {a}",
    "we went to the {n} and it was {a}",
    "my {n} is {a}",
    "that {n} looks {a} to me",
];

fn filler(rng: &mut ChaCha8Rng) -> String {
    let t = FILLER_TEMPLATES.choose(rng).expect("templates");
    t.replace("{n}", FILLER_NOUNS.choose(rng).expect("nouns"))
        .replace("{a}", FILLER_ADJS.choose(rng).expect("adjs"))
}

/// Neutral filler sentences (no target or attribute terms), used as a
/// held-out reference set for perplexity.
pub fn synth_reference_utterances(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| filler(&mut rng)).collect()
}

/// Builds `n_sentences` sentences of the form `<target> <copula>
/// <attribute>` plus `n_sentences / 4` filler sentences.
///
/// `round(skew * n)` sentences (rounded down to even) are stereotypical,
/// split evenly between `(t1, a1)` and `(t2, a2)`; the rest are inverted,
/// split evenly between `(t1, a2)` and `(t2, a1)`, with an odd remainder
/// going to `(t1, a2)`.
///
/// Targets come from the t1 terms the pair list rewrites word for word
/// without two words sharing a rewrite, and every t2 sentence uses the rewrite of a t1
/// sentence's target, so both groups have identical target statistics and
/// differ only in their attribute associations. At skew 0.5 the two groups
/// are exact mirror images. Attributes are drawn uniformly; wildcard
/// attributes use their bare prefix.
pub fn synth_planted_corpus(
    spec: &BiasSpecification,
    skew: f64,
    n_sentences: usize,
    seed: u64,
) -> Result<PlantedCorpus> {
    if !(0.5..=1.0).contains(&skew) {
        return Err(Error::invalid("skew", format!("{skew} outside [0.5, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lexicon = NumberLexicon::bundled();
    let mut t1 = Vec::new();
    let mut t2 = Vec::new();
    // Keep targets whose rewrite is a word-for-word bijection consistent
    // with the targets already kept, so both groups have identical token
    // statistics.
    let mut fwd: HashMap<String, String> = HashMap::new();
    let mut back: HashMap<String, String> = HashMap::new();
    for t in spec.t1.without_markers() {
        let cf = build_counterfactual(&t, &spec.pairs, Direction::Forward);
        if cf.replacements == 0 || cf.text == t || t2.contains(&cf.text) {
            continue;
        }
        let (wa, wb) = (split_words(&t), split_words(&cf.text));
        let consistent = wa.len() == wb.len()
            && wa
                .iter()
                .zip(&wb)
                .all(|(a, b)| fwd.get(a).is_none_or(|x| x == b) && back.get(b).is_none_or(|x| x == a));
        if !consistent {
            continue;
        }
        for (a, b) in wa.into_iter().zip(wb) {
            fwd.insert(a.clone(), b.clone());
            back.insert(b, a);
        }
        t1.push(t);
        t2.push(cf.text);
    }
    if t1.is_empty() {
        return Err(Error::invalid("pairs", "no t1 term can be rewritten into t2"));
    }
    let a1 = spec.a1.without_markers();
    let a2 = spec.a2.without_markers();

    // Per group: `c_s` stereotypical and `c_i` inverted sentences.
    let c_s = ((skew * n_sentences as f64).round() as usize) / 2;
    let c_i = (n_sentences - 2 * c_s) / 2;
    let draw = |rng: &mut ChaCha8Rng, attrs: &[String]| -> (usize, String) {
        (
            rng.random_range(0..t1.len()),
            attrs.choose(rng).expect("non-empty attributes").clone(),
        )
    };
    let s1: Vec<(usize, String)> = (0..c_s).map(|_| draw(&mut rng, &a1)).collect();
    let i1: Vec<(usize, String)> = (0..c_i).map(|_| draw(&mut rng, &a2)).collect();
    // The t2 half mirrors the t1 half target by target: inverted t1
    // sentences reappear as stereotypical t2 ones, the first `c_i`
    // stereotypical t1 sentences reappear as inverted t2 ones, and the
    // remaining t1 targets get a fresh a2 attribute.
    let mut s2: Vec<(usize, String)> = i1.clone();
    for (idx, _) in &s1[c_i.min(c_s)..] {
        s2.push((*idx, a2.choose(&mut rng).expect("non-empty attributes").clone()));
    }
    let i2: Vec<(usize, String)> = s1[..c_i.min(c_s)].to_vec();
    let i2_extra: Vec<(usize, String)> = i1[..c_i.saturating_sub(c_s)]
        .iter()
        .map(|(idx, _)| (*idx, a1.choose(&mut rng).expect("non-empty attributes").clone()))
        .collect();

    let mut sentences = Vec::with_capacity(n_sentences + n_sentences / 4);
    let mut biased_phrases = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let render =
        |targets: &[String], (idx, a): &(usize, String)| format!("{} {a}", lexicon.with_copula(&targets[*idx]));
    for draw in &s1 {
        let s = render(&t1, draw);
        if seen.insert(s.clone()) {
            biased_phrases.push(s.clone());
        }
        sentences.push(s);
    }
    sentences.extend(i1.iter().map(|d| render(&t1, d)));
    sentences.extend(s2.iter().map(|d| render(&t2, d)));
    sentences.extend(i2.iter().chain(&i2_extra).map(|d| render(&t2, d)));
    // an odd remainder becomes one more inverted sentence, keeping A1 balanced
    let spare = n_sentences - 2 * c_s - 2 * c_i;
    for _ in 0..spare {
        let d = draw(&mut rng, &a2);
        sentences.push(render(&t1, &d));
    }
    let stereotypical = s1.len() + s2.len();
    let inverted = i1.len() + i2.len() + i2_extra.len() + spare;
    let fillers = n_sentences / 4;
    for _ in 0..fillers {
        sentences.push(filler(&mut rng));
    }
    sentences.shuffle(&mut rng);

    Ok(PlantedCorpus {
        sentences,
        biased_phrases,
        stereotypical,
        inverted,
        fillers,
    })
}

/// Slots and candidate values of the toy restaurant domain.
pub const DST_SLOTS: &[(&str, &[&str])] = &[
    ("food", &["italian", "chinese", "indian", "french", "thai"]),
    ("price", &["cheap", "moderate", "expensive"]),
    ("area", &["north", "south", "centre", "east", "west"]),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DstExample {
    /// Previous system turn.
    pub history: String,
    pub user_utterance: String,
    pub slot: String,
    pub value: String,
    /// Whether `(slot, value)` belongs to the belief state.
    pub label: bool,
}

impl DstExample {
    /// Model input: system turn, user turn, slot, value.
    pub fn input_text(&self) -> String {
        format!("{} {} {} {}", self.history, self.user_utterance, self.slot, self.value)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DstDataset {
    pub train: Vec<DstExample>,
    pub test: Vec<DstExample>,
}

fn slot_values(slot: &str) -> &'static [&'static str] {
    DST_SLOTS
        .iter()
        .find(|(s, _)| *s == slot)
        .map(|(_, v)| *v)
        .expect("known slot")
}

// One dialog turn: (system turn, user turn, entailed slot-values).
fn dst_turn(rng: &mut ChaCha8Rng) -> (String, String, Vec<(&'static str, &'static str)>) {
    let food = *slot_values("food").choose(rng).expect("values");
    let price = *slot_values("price").choose(rng).expect("values");
    let area = *slot_values("area").choose(rng).expect("values");
    let open = ["how can i help you ?", "what are you looking for ?", "anything else ?"];
    let sys = open.choose(rng).expect("prompts").to_string();
    match rng.random_range(0..7) {
        0 => (
            sys,
            format!("i want {price} {food} food"),
            vec![("price", price), ("food", food)],
        ),
        1 => (
            sys,
            format!("i am looking for {food} food in the {area}"),
            vec![("food", food), ("area", area)],
        ),
        2 => (
            sys,
            format!("find me a {price} restaurant in the {area}"),
            vec![("price", price), ("area", area)],
        ),
        3 => (sys, format!("i would like {food} food"), vec![("food", food)]),
        4 => (sys, format!("a {price} place please"), vec![("price", price)]),
        5 => (
            format!("would you like {food} food ?"),
            "yes please".to_string(),
            vec![("food", food)],
        ),
        _ => (
            format!("do you want a place in the {area} ?"),
            format!("yes and make it {price}"),
            vec![("area", area), ("price", price)],
        ),
    }
}

/// Templated dialog turns cast as binary slot-value prediction. Every
/// entailed pair yields a positive; each positive is matched by one
/// negative pairing a slot the turn leaves open with one of its values. Dialogs are
/// split 80/20 into train and test.
pub fn synth_dst_data(seed: u64, n_dialogs: usize) -> DstDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_train = (n_dialogs as f64 * 0.8).round() as usize;
    let mut data = DstDataset {
        train: Vec::new(),
        test: Vec::new(),
    };
    for d in 0..n_dialogs {
        let (history, utterance, facts) = dst_turn(&mut rng);
        let target = if d < n_train { &mut data.train } else { &mut data.test };
        let unmentioned: Vec<&str> = DST_SLOTS
            .iter()
            .map(|(s, _)| *s)
            .filter(|s| facts.iter().all(|(f, _)| f != s))
            .collect();
        for (slot, value) in facts {
            let other = *unmentioned.choose(&mut rng).expect("every turn leaves a slot open");
            let wrong = *slot_values(other).choose(&mut rng).expect("values");
            for (s, v, label) in [(slot, value, true), (other, wrong, false)] {
                target.push(DstExample {
                    history: history.clone(),
                    user_utterance: utterance.clone(),
                    slot: s.to_string(),
                    value: v.to_string(),
                    label,
                });
            }
        }
    }
    data
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrgExample {
    pub context: String,
    pub references: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrgDataset {
    /// One reference per instance.
    pub train: Vec<CrgExample>,
    /// `n_refs` paraphrased references per instance.
    pub test: Vec<CrgExample>,
}

struct CrgIntent {
    context: &'static str,
    responses: [&'static str; 5],
}

const CRG_INTENTS: &[CrgIntent] = &[
    CrgIntent {
        context: "what time does the {p} open ?",
        responses: [
            "the {p} opens at {t}",
            "it opens at {t}",
            "at {t} i think",
            "{t} is when the {p} opens",
            "the {p} opens around {t}",
        ],
    },
    CrgIntent {
        context: "do you like {x} ?",
        responses: [
            "yes i love {x}",
            "i really like {x}",
            "{x} is great",
            "yes {x} is fun",
            "i enjoy {x} a lot",
        ],
    },
    CrgIntent {
        context: "where is the {p} ?",
        responses: [
            "the {p} is in the {a}",
            "it is in the {a}",
            "go to the {a}",
            "the {p} is near the {a}",
            "you can find it in the {a}",
        ],
    },
];

const CRG_PLACES: &[&str] = &["museum", "library", "bakery", "cinema", "station", "market"];
const CRG_TIMES: &[&str] = &["nine", "ten", "eight", "noon", "seven"];
const CRG_THINGS: &[&str] = &["music", "football", "coffee", "movies", "books", "cooking"];
const CRG_AREAS: &[&str] = &["north", "south", "centre", "east", "west"];

/// Templated context/response pairs split 80/20. Train instances carry one
/// randomly chosen paraphrase; test instances carry `n_refs` paraphrases
/// (cycling through the five templates if more are requested).
pub fn synth_crg_data(seed: u64, n_pairs: usize, n_refs: usize) -> Result<CrgDataset> {
    if n_refs == 0 {
        return Err(Error::invalid("n_refs", "need at least one reference"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_train = (n_pairs as f64 * 0.8).round() as usize;
    let mut data = CrgDataset {
        train: Vec::new(),
        test: Vec::new(),
    };
    for i in 0..n_pairs {
        let intent = CRG_INTENTS.choose(&mut rng).expect("intents");
        let p = *CRG_PLACES.choose(&mut rng).expect("places");
        let t = *CRG_TIMES.choose(&mut rng).expect("times");
        let x = *CRG_THINGS.choose(&mut rng).expect("things");
        let a = *CRG_AREAS.choose(&mut rng).expect("areas");
        let fill = |s: &str| {
            s.replace("{p}", p)
                .replace("{t}", t)
                .replace("{x}", x)
                .replace("{a}", a)
        };
        let context = fill(intent.context);
        if i < n_train {
            let r = intent.responses.choose(&mut rng).expect("responses");
            data.train.push(CrgExample {
                context,
                references: vec![fill(r)],
            });
        } else {
            let references = (0..n_refs)
                .map(|k| fill(intent.responses[k % intent.responses.len()]))
                .collect();
            data.test.push(CrgExample { context, references });
        }
    }
    Ok(data)
}
