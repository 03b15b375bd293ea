//! Template grammar for four agreement/licensing phenomena.
//!
//! Every paradigm is realized in one of three lexical frames (farm, office,
//! school). Paradigms are assigned frames round-robin in suite order, so two
//! paradigms of the same phenomenon never share a frame in the default
//! suite while paradigms of different phenomena often do: vocabulary overlap
//! follows the frame, not the rule.

use std::collections::HashSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, MinimalPair, Paradigm, SuiteOrigin, TaskSuite, Vocab};
use crate::rng::substream;

const N_NOUN: usize = 20;
const N_NUM: usize = 2;
const N_ADJ: usize = 10;
const N_NAME: usize = 12;
const N_GROUP: usize = 5;
const N_VERB: usize = 6;
const N_COP: usize = 8;
const N_DET: usize = 6;
const N_NPI: usize = 4;
const N_NEG: usize = 6;
const N_ADV: usize = 6;
const N_AMB: usize = 4;
const N_QLIC: usize = 2;
const N_QNON: usize = 4;

pub struct Frame {
    pub name: &'static str,
    nouns: [(&'static str, &'static str); N_NOUN],
    adjectives: [&'static str; N_ADJ],
    groups: [&'static str; N_GROUP],
    verbs: [&'static str; N_VERB],
}

macro_rules! nouns {
    ($($n:literal),* $(,)?) => { [$(($n, concat!($n, "s"))),*] };
}

pub const FRAMES: [Frame; 3] = [
    Frame {
        name: "farm",
        nouns: nouns![
            "barn", "tractor", "fence", "field", "gate", "bucket", "wagon", "shed", "plough", "trough", "silo",
            "pond", "orchard", "stable", "saddle", "ladder", "basket", "cart", "hedge", "meadow",
        ],
        adjectives: [
            "muddy", "red", "wooden", "dusty", "broken", "wide", "quiet", "green", "rusty", "small",
        ],
        groups: ["farmers", "shepherds", "ranchers", "herders", "ploughmen"],
        verbs: ["fed", "watered", "herded", "sheared", "harvested", "ploughed"],
    },
    Frame {
        name: "office",
        nouns: nouns![
            "desk", "printer", "folder", "stapler", "chair", "monitor", "cabinet", "phone", "laptop", "drawer",
            "memo", "binder", "lamp", "badge", "envelope", "keyboard", "calendar", "screen", "projector", "mug",
        ],
        adjectives: [
            "beige", "modern", "noisy", "tidy", "grey", "expensive", "cluttered", "spare", "digital", "leather",
        ],
        groups: ["clerks", "managers", "accountants", "secretaries", "directors"],
        verbs: ["called", "emailed", "paid", "hired", "promoted", "praised"],
    },
    Frame {
        name: "school",
        nouns: nouns![
            "book", "pencil", "notebook", "ruler", "blackboard", "classroom", "locker", "backpack", "eraser",
            "map", "globe", "crayon", "textbook", "poster", "exam", "lesson", "playground", "bell", "uniform",
            "sticker",
        ],
        adjectives: [
            "colourful", "boring", "difficult", "yellow", "torn", "bright", "tiny", "new", "heavy", "blue",
        ],
        groups: ["pupils", "teachers", "students", "tutors", "coaches"],
        verbs: ["taught", "helped", "tested", "graded", "coached", "trained"],
    },
];

const FUNCTION_WORDS: &[&str] = &[
    ".", "near", "that", "looked", "had", "himself", "herself", "itself", "themselves", "who", "and",
];

/// Even positions male, odd positions female.
const NAMES: [&str; N_NAME] = [
    "tom", "mary", "jack", "anna", "sam", "lucy", "peter", "julia", "mark", "emma", "paul", "claire",
];

// Closed classes shared by every frame. Each rule hinges on knowing which
// class a word belongs to, and the rarer members are learned late.

/// Singular and plural forms of adjective-taking verbs.
const COPULAS: [(&str, &str); N_COP] = [
    ("is", "are"),
    ("was", "were"),
    ("seems", "seem"),
    ("looks", "look"),
    ("remains", "remain"),
    ("appears", "appear"),
    ("stays", "stay"),
    ("becomes", "become"),
];
const DETERMINERS: [(&str, &str); N_DET] = [
    ("this", "these"),
    ("that", "those"),
    ("one", "two"),
    ("each", "both"),
    ("every", "all"),
    ("another", "other"),
];
const NPI_ADVERBS: [&str; N_NPI] = ["ever", "yet", "anymore", "lately"];
/// Adverbs that license an NPI, and adverbs that do not.
const NEG_ADVERBS: [&str; N_NEG] = ["not", "never", "hardly", "rarely", "seldom", "scarcely"];
const FREE_ADVERBS: [&str; N_ADV] = ["often", "probably", "surely", "recently", "already", "soon"];
/// Nouns whose singular and plural coincide, so they agree with either form.
const AMBIGUOUS_NOUNS: [&str; N_AMB] = ["sheep", "deer", "fish", "moose"];
/// Every rule-bearing class has a tail that pretraining text shows only in
/// contexts where the rule is silent: the last copulas and determiners meet
/// only number-ambiguous nouns, the last licensors license nothing and the
/// last names never bind a reflexive. Models have to infer those members or
/// have them tuned in, which keeps minimal-pair accuracy below ceiling.
const COP_IN_RULE: usize = N_COP - 3;
const DET_IN_RULE: usize = N_DET - 2;
const NEG_IN_RULE: usize = N_NEG - 2;
const QLIC_IN_RULE: usize = N_QLIC - 1;
const NAME_IN_RULE: usize = N_NAME - 4;
/// Quantifiers that license an NPI, and quantifiers that do not.
const LICENSING_QUANTIFIERS: [&str; N_QLIC] = ["no", "few"];
const PLAIN_QUANTIFIERS: [&str; N_QNON] = ["the", "some", "many", "several"];

impl Frame {
    fn noun(&self, i: usize, plural: bool) -> &'static str {
        if plural {
            self.nouns[i].1
        } else {
            self.nouns[i].0
        }
    }
}

fn pick(pair: (&'static str, &'static str), plural: bool) -> &'static str {
    if plural {
        pair.1
    } else {
        pair.0
    }
}

/// Reflexive matching the name at index `i`, and its gender-mismatched
/// counterpart.
fn reflexives(name: usize) -> (&'static str, &'static str) {
    if name % 2 == 0 {
        ("himself", "herself")
    } else {
        ("herself", "himself")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phenomenon {
    SubjectVerbAgreement,
    DeterminerNounAgreement,
    NpiLicensing,
    ReflexiveBinding,
}

impl Phenomenon {
    pub const ALL: [Phenomenon; 4] = [
        Phenomenon::SubjectVerbAgreement,
        Phenomenon::DeterminerNounAgreement,
        Phenomenon::NpiLicensing,
        Phenomenon::ReflexiveBinding,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Phenomenon::SubjectVerbAgreement => "subject_verb_agreement",
            Phenomenon::DeterminerNounAgreement => "determiner_noun_agreement",
            Phenomenon::NpiLicensing => "npi_licensing",
            Phenomenon::ReflexiveBinding => "reflexive_binding",
        }
    }

    /// Syntactic contexts available for this phenomenon, in suite order.
    pub fn kinds(self) -> &'static [ParadigmKind] {
        use ParadigmKind::*;
        match self {
            Phenomenon::SubjectVerbAgreement => &[SvaSimple, SvaAttractor, SvaRelative],
            Phenomenon::DeterminerNounAgreement => &[DnaObject, DnaAdjective, DnaSubject],
            Phenomenon::NpiLicensing => &[NpiQuantifier, NpiAttractor, NpiNegation],
            Phenomenon::ReflexiveBinding => &[ReflGender, ReflRelative, ReflNumber],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParadigmKind {
    SvaSimple,
    SvaAttractor,
    SvaRelative,
    DnaObject,
    DnaAdjective,
    DnaSubject,
    NpiQuantifier,
    NpiNegation,
    NpiAttractor,
    ReflGender,
    ReflNumber,
    ReflRelative,
}

impl ParadigmKind {
    pub const ALL: [ParadigmKind; 12] = {
        use ParadigmKind::*;
        [
            SvaSimple,
            SvaAttractor,
            SvaRelative,
            DnaObject,
            DnaAdjective,
            DnaSubject,
            NpiQuantifier,
            NpiAttractor,
            NpiNegation,
            ReflGender,
            ReflRelative,
            ReflNumber,
        ]
    };

    pub fn id(self) -> &'static str {
        use ParadigmKind::*;
        match self {
            SvaSimple => "sva_simple",
            SvaAttractor => "sva_attractor",
            SvaRelative => "sva_relative_clause",
            DnaObject => "dna_object",
            DnaAdjective => "dna_adjective",
            DnaSubject => "dna_subject",
            NpiQuantifier => "npi_quantifier",
            NpiNegation => "npi_negation",
            NpiAttractor => "npi_quantifier_attractor",
            ReflGender => "refl_gender",
            ReflNumber => "refl_number",
            ReflRelative => "refl_relative_clause",
        }
    }

    pub fn phenomenon(self) -> Phenomenon {
        Phenomenon::ALL
            .into_iter()
            .find(|p| p.kinds().contains(&self))
            .expect("every kind belongs to a phenomenon")
    }

    fn dims(self) -> &'static [usize] {
        use ParadigmKind::*;
        match self {
            SvaSimple => &[N_ADJ, N_NOUN, N_NUM, N_ADJ, N_COP],
            SvaAttractor => &[N_NOUN, N_NUM, N_NOUN, N_ADJ, N_COP],
            SvaRelative => &[N_NOUN, N_NUM, N_NAME, N_VERB, N_ADJ, N_COP],
            DnaObject => &[N_NAME, N_VERB, N_NOUN, N_NUM, N_DET],
            DnaAdjective => &[N_NAME, N_VERB, N_NUM, N_ADJ, N_NOUN, N_DET],
            DnaSubject => &[N_NUM, N_NOUN, N_NOUN, N_NUM, N_ADJ, N_DET],
            NpiQuantifier => &[N_GROUP, N_VERB, N_ADJ, N_NOUN, N_NUM, N_NPI, N_QLIC, N_QNON],
            NpiNegation => &[N_NAME, N_VERB, N_ADJ, N_NOUN, N_NUM, N_NPI, N_NEG, N_ADV],
            NpiAttractor => &[N_GROUP, N_NOUN, N_NUM, N_VERB, N_NOUN, N_NPI, N_QLIC, N_QNON],
            ReflGender => &[N_NAME, N_VERB, N_NOUN, N_NUM],
            ReflNumber => &[N_ADJ, N_NOUN, N_NUM, N_VERB, N_NOUN, N_NUM],
            ReflRelative => &[N_NAME, N_VERB, N_NOUN, N_NUM, N_VERB],
        }
    }

    /// Rule-bearing slot and how many of its members pretraining may use.
    fn pretraining_limit(self) -> Option<(usize, usize)> {
        use ParadigmKind::*;
        match self {
            SvaSimple | SvaAttractor => Some((4, COP_IN_RULE)),
            SvaRelative => Some((5, COP_IN_RULE)),
            DnaObject => Some((4, DET_IN_RULE)),
            DnaAdjective | DnaSubject => Some((5, DET_IN_RULE)),
            NpiQuantifier | NpiAttractor => Some((6, QLIC_IN_RULE)),
            NpiNegation => Some((6, NEG_IN_RULE)),
            ReflGender | ReflRelative => Some((0, NAME_IN_RULE)),
            ReflNumber => None,
        }
    }

    /// Number of distinct pairs the template can produce in one frame.
    pub fn capacity(self) -> usize {
        self.dims().iter().product()
    }

    /// Good and bad realization of choice vector `c`.
    fn realize(self, f: &Frame, c: &[usize]) -> (Vec<&'static str>, Vec<&'static str>) {
        use ParadigmKind::*;
        let pl = |i: usize| c[i] == 1;
        let (good, bad_word, at) = match self {
            SvaSimple => (
                vec![
                    "the",
                    f.adjectives[c[0]],
                    f.noun(c[1], pl(2)),
                    pick(COPULAS[c[4]], pl(2)),
                    f.adjectives[c[3]],
                    ".",
                ],
                pick(COPULAS[c[4]], !pl(2)),
                3,
            ),
            SvaAttractor => (
                vec![
                    "the",
                    f.noun(c[0], pl(1)),
                    "near",
                    "the",
                    f.noun(c[2], !pl(1)),
                    pick(COPULAS[c[4]], pl(1)),
                    f.adjectives[c[3]],
                    ".",
                ],
                pick(COPULAS[c[4]], !pl(1)),
                5,
            ),
            SvaRelative => (
                vec![
                    "the",
                    f.noun(c[0], pl(1)),
                    "that",
                    NAMES[c[2]],
                    f.verbs[c[3]],
                    pick(COPULAS[c[5]], pl(1)),
                    f.adjectives[c[4]],
                    ".",
                ],
                pick(COPULAS[c[5]], !pl(1)),
                5,
            ),
            DnaObject => (
                vec![NAMES[c[0]], f.verbs[c[1]], pick(DETERMINERS[c[4]], pl(3)), f.noun(c[2], pl(3)), "."],
                pick(DETERMINERS[c[4]], !pl(3)),
                2,
            ),
            DnaAdjective => (
                vec![
                    NAMES[c[0]],
                    f.verbs[c[1]],
                    pick(DETERMINERS[c[5]], pl(2)),
                    f.adjectives[c[3]],
                    f.noun(c[4], pl(2)),
                    ".",
                ],
                pick(DETERMINERS[c[5]], !pl(2)),
                2,
            ),
            DnaSubject => (
                vec![
                    pick(DETERMINERS[c[5]], pl(0)),
                    f.noun(c[1], pl(0)),
                    "near",
                    "the",
                    f.noun(c[2], pl(3)),
                    "looked",
                    f.adjectives[c[4]],
                    ".",
                ],
                pick(DETERMINERS[c[5]], !pl(0)),
                0,
            ),
            NpiQuantifier => (
                vec![
                    LICENSING_QUANTIFIERS[c[6]],
                    f.groups[c[0]],
                    NPI_ADVERBS[c[5]],
                    f.verbs[c[1]],
                    "the",
                    f.adjectives[c[2]],
                    f.noun(c[3], pl(4)),
                    ".",
                ],
                PLAIN_QUANTIFIERS[c[7]],
                0,
            ),
            NpiNegation => (
                vec![
                    NAMES[c[0]],
                    "had",
                    NEG_ADVERBS[c[6]],
                    NPI_ADVERBS[c[5]],
                    f.verbs[c[1]],
                    "the",
                    f.adjectives[c[2]],
                    f.noun(c[3], pl(4)),
                    ".",
                ],
                FREE_ADVERBS[c[7]],
                2,
            ),
            NpiAttractor => (
                vec![
                    LICENSING_QUANTIFIERS[c[6]],
                    f.groups[c[0]],
                    "near",
                    "the",
                    f.noun(c[1], pl(2)),
                    NPI_ADVERBS[c[5]],
                    f.verbs[c[3]],
                    "the",
                    f.noun(c[4], pl(2)),
                    ".",
                ],
                PLAIN_QUANTIFIERS[c[7]],
                0,
            ),
            ReflGender => {
                let (good, bad) = reflexives(c[0]);
                (
                    vec![NAMES[c[0]], f.verbs[c[1]], good, "near", "the", f.noun(c[2], pl(3)), "."],
                    bad,
                    2,
                )
            }
            ReflNumber => (
                vec![
                    "the",
                    f.adjectives[c[0]],
                    f.noun(c[1], pl(2)),
                    f.verbs[c[3]],
                    pick(("itself", "themselves"), pl(2)),
                    "near",
                    "the",
                    f.noun(c[4], pl(5)),
                    ".",
                ],
                pick(("itself", "themselves"), !pl(2)),
                4,
            ),
            ReflRelative => {
                let (good, bad) = reflexives(c[0]);
                (
                    vec![
                        NAMES[c[0]],
                        "who",
                        f.verbs[c[1]],
                        "the",
                        f.noun(c[2], pl(3)),
                        f.verbs[c[4]],
                        good,
                        ".",
                    ],
                    bad,
                    6,
                )
            }
        };
        let mut bad = good.clone();
        bad[at] = bad_word;
        (good, bad)
    }
}

/// Pretraining-only templates. The last two license an NPI from a distance,
/// so the local context of a bad NPI pair is not by itself ungrammatical.
#[derive(Debug, Clone, Copy)]
enum Filler {
    Transitive,
    Coordination,
    GroupSubject,
    Adverb,
    Copular,
    NameObject,
    DistantNegation,
    DistantQuantifier,
    AmbiguousCopular,
    AmbiguousObject,
    Reflexive,
}

impl Filler {
    const ALL: [Filler; 11] = [
        Filler::Transitive,
        Filler::Coordination,
        Filler::GroupSubject,
        Filler::Adverb,
        Filler::Copular,
        Filler::NameObject,
        Filler::DistantNegation,
        Filler::DistantQuantifier,
        Filler::AmbiguousCopular,
        Filler::AmbiguousObject,
        Filler::Reflexive,
    ];

    fn dims(self) -> &'static [usize] {
        match self {
            Filler::Transitive => &[N_NAME, N_VERB, N_ADJ, N_NOUN, N_NUM],
            Filler::Coordination => &[N_NAME, N_NAME, N_VERB, N_NOUN, N_NUM, N_NOUN, N_NUM],
            Filler::GroupSubject => &[N_GROUP, N_VERB, N_ADJ, N_NOUN, N_NUM, N_ADV, N_QNON + N_QLIC],
            Filler::Adverb => &[N_NAME, N_VERB, N_NOUN, N_NUM, N_NEG, N_ADV, 2],
            Filler::Copular => &[N_ADJ, N_NOUN, N_NUM, N_NOUN, N_NUM, N_ADJ],
            Filler::NameObject => &[N_NAME, N_VERB, N_NAME, N_NOUN],
            Filler::DistantNegation => &[N_GROUP, N_ADV, N_NPI, N_VERB, N_NOUN, N_NUM, N_QLIC],
            Filler::DistantQuantifier => &[N_NOUN, N_NUM, N_GROUP, N_NPI, N_VERB, N_NOUN, N_NUM, N_QLIC, N_QNON],
            Filler::AmbiguousCopular => &[N_AMB, N_NUM, N_COP - COP_IN_RULE, N_ADJ],
            Filler::AmbiguousObject => &[N_NAME, N_VERB, N_DET - DET_IN_RULE, N_NUM, N_AMB],
            Filler::Reflexive => &[N_NAME, N_VERB],
        }
    }

    fn pretraining_limit(self) -> Option<(usize, usize)> {
        match self {
            Filler::DistantNegation => Some((6, QLIC_IN_RULE)),
            Filler::DistantQuantifier => Some((7, QLIC_IN_RULE)),
            Filler::Reflexive => Some((0, NAME_IN_RULE)),
            _ => None,
        }
    }

    fn realize(self, f: &Frame, c: &[usize]) -> Vec<&'static str> {
        let pl = |i: usize| c[i] == 1;
        // Neutral slots pick a class uniformly; both adverb classes have the
        // same size, so negators carry no frequency advantage.
        let either = |a: &'static str, b: &'static str, i: usize| if c[i] == 1 { a } else { b };
        match self {
            Filler::Transitive => vec![
                NAMES[c[0]],
                f.verbs[c[1]],
                "the",
                f.adjectives[c[2]],
                f.noun(c[3], pl(4)),
                ".",
            ],
            Filler::Coordination => vec![
                NAMES[c[0]],
                "and",
                NAMES[c[1]],
                f.verbs[c[2]],
                "the",
                f.noun(c[3], pl(4)),
                "near",
                "the",
                f.noun(c[5], pl(6)),
                ".",
            ],
            Filler::GroupSubject => vec![
                // One ranking across both classes, licensors last, so no
                // licensor is more frequent here than a plain quantifier.
                match c[6].checked_sub(N_QNON) {
                    Some(i) => LICENSING_QUANTIFIERS[i],
                    None => PLAIN_QUANTIFIERS[c[6]],
                },
                f.groups[c[0]],
                FREE_ADVERBS[c[5]],
                f.verbs[c[1]],
                "the",
                f.adjectives[c[2]],
                f.noun(c[3], pl(4)),
                ".",
            ],
            Filler::Adverb => vec![
                NAMES[c[0]],
                "had",
                either(NEG_ADVERBS[c[4]], FREE_ADVERBS[c[5]], 6),
                f.verbs[c[1]],
                "the",
                f.noun(c[2], pl(3)),
                ".",
            ],
            Filler::Copular => vec![
                "the",
                f.adjectives[c[0]],
                f.noun(c[1], pl(2)),
                "near",
                "the",
                f.noun(c[3], pl(4)),
                "looked",
                f.adjectives[c[5]],
                ".",
            ],
            Filler::NameObject => vec![
                NAMES[c[0]],
                f.verbs[c[1]],
                NAMES[c[2]],
                "near",
                "the",
                f.noun(c[3], false),
                ".",
            ],
            Filler::DistantNegation => vec![
                LICENSING_QUANTIFIERS[c[6]],
                f.groups[c[0]],
                "had",
                FREE_ADVERBS[c[1]],
                NPI_ADVERBS[c[2]],
                f.verbs[c[3]],
                "the",
                f.noun(c[4], pl(5)),
                ".",
            ],
            Filler::DistantQuantifier => vec![
                LICENSING_QUANTIFIERS[c[7]],
                f.noun(c[0], pl(1)),
                "near",
                PLAIN_QUANTIFIERS[c[8]],
                f.groups[c[2]],
                NPI_ADVERBS[c[3]],
                f.verbs[c[4]],
                "the",
                f.noun(c[5], pl(6)),
                ".",
            ],
            Filler::AmbiguousCopular => vec![
                "the",
                AMBIGUOUS_NOUNS[c[0]],
                pick(COPULAS[COP_IN_RULE + c[2]], pl(1)),
                f.adjectives[c[3]],
                ".",
            ],
            Filler::AmbiguousObject => vec![
                NAMES[c[0]],
                f.verbs[c[1]],
                pick(DETERMINERS[DET_IN_RULE + c[2]], pl(3)),
                AMBIGUOUS_NOUNS[c[4]],
                ".",
            ],
            Filler::Reflexive => vec![NAMES[c[0]], f.verbs[c[1]], reflexives(c[0]).0, "."],
        }
    }
}

/// Mixed-radix decoding of `index` over `dims`.
fn decode(mut index: usize, dims: &[usize]) -> Vec<usize> {
    dims.iter()
        .map(|&d| {
            let v = index % d;
            index /= d;
            v
        })
        .collect()
}

/// Vocabulary of the synthetic grammar: reserved tokens, function words,
/// then each frame's lexicon.
pub fn grammar_vocab() -> Vocab {
    let mut words: Vec<&str> = FUNCTION_WORDS.to_vec();
    for (sg, pl) in COPULAS.into_iter().chain(DETERMINERS) {
        words.push(sg);
        words.push(pl);
    }
    words.extend(NAMES);
    words.extend(NPI_ADVERBS);
    words.extend(NEG_ADVERBS);
    words.extend(FREE_ADVERBS);
    words.extend(LICENSING_QUANTIFIERS);
    words.extend(PLAIN_QUANTIFIERS);
    words.extend(AMBIGUOUS_NOUNS);
    for f in &FRAMES {
        for &(sg, pl) in &f.nouns {
            words.push(sg);
            words.push(pl);
        }
        words.extend(f.adjectives);
        words.extend(f.groups);
        words.extend(f.verbs);
    }
    Vocab::from_words(words)
}

fn ids(vocab: &Vocab, words: &[&str]) -> Vec<u32> {
    words
        .iter()
        .map(|w| vocab.id(w).expect("grammar words are in the grammar vocabulary"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSpec {
    pub phenomena: Vec<Phenomenon>,
    /// Paradigms drawn for each phenomenon, aligned with `phenomena`.
    pub paradigms_per: Vec<usize>,
    pub pairs_per: usize,
}

impl Default for SuiteSpec {
    fn default() -> Self {
        Self {
            phenomena: Phenomenon::ALL.to_vec(),
            paradigms_per: vec![3, 3, 2, 2],
            pairs_per: 1000,
        }
    }
}

impl SuiteSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |field: String, reason: String| Err(CorpusError::InvalidSpec { field, reason });
        if self.phenomena.is_empty() {
            return bad("phenomena".into(), "at least one phenomenon is required".into());
        }
        if self.paradigms_per.len() != self.phenomena.len() {
            return bad(
                "paradigms_per".into(),
                format!("{} entries for {} phenomena", self.paradigms_per.len(), self.phenomena.len()),
            );
        }
        let mut seen = HashSet::new();
        for (i, (ph, &k)) in self.phenomena.iter().zip(&self.paradigms_per).enumerate() {
            if !seen.insert(ph) {
                return bad(format!("phenomena[{i}]"), format!("`{}` listed twice", ph.id()));
            }
            if k == 0 || k > ph.kinds().len() {
                return bad(
                    format!("paradigms_per[{i}]"),
                    format!("must be between 1 and {} for `{}`", ph.kinds().len(), ph.id()),
                );
            }
        }
        if self.pairs_per == 0 {
            return bad("pairs_per".into(), "must be at least 1".into());
        }
        Ok(())
    }
}

/// Generates the minimal-pair suite for `spec`. Pairs within a paradigm are
/// distinct and drawn uniformly from the template's choice space.
pub fn generate_suite(seed: u64, spec: &SuiteSpec) -> Result<TaskSuite, CorpusError> {
    spec.validate()?;
    let vocab = grammar_vocab();
    let mut paradigms = Vec::new();
    let mut ordinal = 0;
    for (ph, &k) in spec.phenomena.iter().zip(&spec.paradigms_per) {
        if k < 2 {
            log::warn!("phenomenon `{}` has a single paradigm", ph.id());
        }
        for &kind in &ph.kinds()[..k] {
            let frame = &FRAMES[ordinal % FRAMES.len()];
            ordinal += 1;
            let capacity = kind.capacity();
            if spec.pairs_per > capacity {
                return Err(CorpusError::TemplateExhausted {
                    paradigm: kind.id().to_string(),
                    capacity,
                    requested: spec.pairs_per,
                });
            }
            let mut rng = substream(seed, &format!("suite/{}", kind.id()));
            let pairs = rand::seq::index::sample(&mut rng, capacity, spec.pairs_per)
                .into_iter()
                .map(|i| {
                    let (good, bad) = kind.realize(frame, &decode(i, kind.dims()));
                    MinimalPair {
                        good: ids(&vocab, &good),
                        bad: ids(&vocab, &bad),
                        paradigm: kind.id().to_string(),
                    }
                })
                .collect();
            paradigms.push(Paradigm::new(
                kind.id().to_string(),
                ph.id().to_string(),
                Some(frame.name.to_string()),
                pairs,
                seed,
            )?);
        }
    }
    Ok(TaskSuite {
        origin: SuiteOrigin::Synthetic {
            seed,
            spec: spec.clone(),
        },
        paradigms,
        vocab,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusHyper {
    /// Exponent of the Zipfian distribution over lexical slot fillers.
    pub zipf_exponent: f64,
    /// Share of sentences drawn from probed templates (the rest are filler).
    pub probed_fraction: f64,
    pub validation_fraction: f64,
}

impl Default for CorpusHyper {
    fn default() -> Self {
        Self {
            zipf_exponent: 1.5,
            probed_fraction: 0.5,
            validation_fraction: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainCorpus {
    pub train: Vec<Vec<u32>>,
    pub validation: Vec<Vec<u32>>,
}

impl PretrainCorpus {
    pub fn train_refs(&self) -> Vec<&[u32]> {
        self.train.iter().map(Vec::as_slice).collect()
    }

    pub fn validation_refs(&self) -> Vec<&[u32]> {
        self.validation.iter().map(Vec::as_slice).collect()
    }
}

struct Zipf {
    /// Indexed by slot size.
    tables: Vec<Option<WeightedIndex<f64>>>,
}

impl Zipf {
    fn new(exponent: f64) -> Self {
        let tables = (0..=N_NOUN)
            .map(|n| {
                let w: Vec<f64> = (0..n).map(|r| (r as f64 + 1.0).powf(-exponent)).collect();
                (n > 2).then(|| WeightedIndex::new(w).expect("positive weights"))
            })
            .collect();
        Self { tables }
    }

    /// Binary slots stay uniform; larger slots follow the Zipf law.
    fn sample(&self, d: usize, rng: &mut ChaCha8Rng) -> usize {
        match &self.tables[d] {
            Some(w) => w.sample(rng),
            None => rng.random_range(0..d),
        }
    }

    fn choose(&self, dims: &[usize], limit: Option<(usize, usize)>, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut c: Vec<usize> = dims.iter().map(|&d| self.sample(d, rng)).collect();
        if let Some((slot, n)) = limit {
            c[slot] = self.sample(n, rng);
        }
        c
    }
}

/// Grammatical pretraining sentences from every probed template in every
/// frame plus filler templates. Sentences that occur in the suite are never
/// emitted. The validation slice is chosen by a content hash, so the two
/// slices share no sentence.
pub fn make_pretrain_corpus(
    suite: &TaskSuite,
    seed: u64,
    n_sentences: usize,
    hyper: &CorpusHyper,
) -> Result<PretrainCorpus, CorpusError> {
    if !matches!(suite.origin, SuiteOrigin::Synthetic { .. }) {
        return Err(CorpusError::NotSynthetic);
    }
    let exclude: HashSet<&[u32]> = suite
        .paradigms
        .iter()
        .flat_map(|p| p.pairs.iter().flat_map(|q| [q.good.as_slice(), q.bad.as_slice()]))
        .collect();
    let zipf = Zipf::new(hyper.zipf_exponent);
    let mut rng = substream(seed, "pretrain");
    let seed_bytes = seed.to_le_bytes();
    let mut corpus = PretrainCorpus {
        train: Vec::with_capacity(n_sentences),
        validation: Vec::new(),
    };
    let mut emitted = 0;
    while emitted < n_sentences {
        let frame = &FRAMES[rng.random_range(0..FRAMES.len())];
        let words = if rng.random::<f64>() < hyper.probed_fraction {
            let kind = ParadigmKind::ALL[rng.random_range(0..ParadigmKind::ALL.len())];
            kind.realize(frame, &zipf.choose(kind.dims(), kind.pretraining_limit(), &mut rng)).0
        } else {
            let filler = Filler::ALL[rng.random_range(0..Filler::ALL.len())];
            filler.realize(frame, &zipf.choose(filler.dims(), filler.pretraining_limit(), &mut rng))
        };
        let tokens = ids(&suite.vocab, &words);
        if exclude.contains(tokens.as_slice()) {
            continue;
        }
        emitted += 1;
        let mut h = crc32fast::Hasher::new();
        h.update(&seed_bytes);
        for t in &tokens {
            h.update(&t.to_le_bytes());
        }
        if (h.finalize() as f64) < hyper.validation_fraction * 4_294_967_296.0 {
            corpus.validation.push(tokens);
        } else {
            corpus.train.push(tokens);
        }
    }
    Ok(corpus)
}
