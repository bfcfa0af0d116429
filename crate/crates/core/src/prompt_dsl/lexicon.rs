use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::toy_world::FACE_ATTRIBUTES;

/// Phrase table mapping lowercase phrases to `(attribute, value)`.
///
/// An attribute counts as a *presence* attribute (glasses, hat) when some
/// phrase sets it to exactly `+1.0`; negating such a phrase with "without"
/// yields `-1.0` instead of the sign-flipped phrase value.
#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    attribute_names: Vec<String>,
    entries: BTreeMap<String, (usize, f64)>,
    presence: BTreeSet<usize>,
    max_words: usize,
}

const DEFAULT_ENTRIES: &[(&str, &str, f64)] = &[
    ("long hair", "hair_length", 0.8),
    ("long-haired", "hair_length", 0.8),
    ("short hair", "hair_length", -0.8),
    ("short-haired", "hair_length", -0.8),
    ("bald", "hair_length", -1.0),
    ("blond hair", "hair_color", -0.8),
    ("blonde hair", "hair_color", -0.8),
    ("blond", "hair_color", -0.8),
    ("blonde", "hair_color", -0.8),
    ("black hair", "hair_color", 0.8),
    ("black-haired", "hair_color", 0.8),
    ("glasses", "glasses", 1.0),
    ("sunglasses", "glasses", 1.0),
    ("eyeglasses", "glasses", 1.0),
    ("beard", "beard", 0.8),
    ("bearded", "beard", 0.8),
    ("clean-shaven", "beard", -0.8),
    ("old", "age", 0.8),
    ("young", "age", -0.8),
    ("smiling", "smile", 0.8),
    ("happy", "smile", 0.8),
    ("serious", "smile", -0.8),
    ("hat", "hat", 1.0),
    ("cap", "hat", 1.0),
    ("pale", "skin_tone", -0.6),
    ("tan", "skin_tone", 0.6),
];

impl Lexicon {
    pub fn new<I, S>(attribute_names: Vec<String>, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, String, f64)>,
        S: Into<String>,
    {
        let mut map = BTreeMap::new();
        for (phrase, attr, value) in entries {
            let phrase: String = phrase.into();
            let normalized = phrase.split_whitespace().collect::<Vec<_>>().join(" ");
            if normalized.is_empty() || normalized != normalized.to_lowercase() {
                return Err(Error::InvalidArgument(format!(
                    "lexicon phrase {phrase:?} must be lowercase and non-empty"
                )));
            }
            let k = attribute_names
                .iter()
                .position(|n| *n == attr)
                .ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "lexicon phrase {phrase:?} names unknown attribute {attr:?}"
                    ))
                })?;
            if !(-1.0..=1.0).contains(&value) {
                return Err(Error::InvalidArgument(format!(
                    "lexicon value {value} for {phrase:?} outside [-1, 1]"
                )));
            }
            if map.insert(normalized, (k, value)).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate lexicon phrase {phrase:?}"
                )));
            }
        }
        let presence = map
            .values()
            .filter(|(_, v)| *v == 1.0)
            .map(|(k, _)| *k)
            .collect();
        let max_words = map.keys().map(|p| p.split(' ').count()).max().unwrap_or(1);
        Ok(Self {
            attribute_names,
            entries: map,
            presence,
            max_words,
        })
    }

    /// Loads `{"phrase": ["attribute_name", value], ...}`.
    pub fn from_json(json: &str, attribute_names: Vec<String>) -> Result<Self> {
        let raw: BTreeMap<String, (String, f64)> = serde_json::from_str(json)?;
        Self::new(
            attribute_names,
            raw.into_iter().map(|(p, (a, v))| (p, a, v)),
        )
    }

    pub fn to_json(&self) -> String {
        let raw: BTreeMap<&str, (&str, f64)> = self
            .entries
            .iter()
            .map(|(p, &(k, v))| (p.as_str(), (self.attribute_names[k].as_str(), v)))
            .collect();
        serde_json::to_string_pretty(&raw).expect("lexicon serializes")
    }

    pub fn attribute_names(&self) -> &[String] {
        &self.attribute_names
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attribute_names.iter().position(|n| n == name)
    }

    pub fn lookup(&self, phrase: &str) -> Option<(usize, f64)> {
        self.entries.get(phrase).copied()
    }

    pub fn is_presence(&self, attribute: usize) -> bool {
        self.presence.contains(&attribute)
    }

    pub fn max_words(&self) -> usize {
        self.max_words
    }

    pub fn phrases(&self) -> impl Iterator<Item = (&str, usize, f64)> {
        self.entries.iter().map(|(p, &(k, v))| (p.as_str(), k, v))
    }
}

impl Lexicon {
    /// The face lexicon when `attribute_names` are the face attributes,
    /// otherwise a phrase-free lexicon accepting only explicit clauses.
    pub fn for_attributes(attribute_names: &[String]) -> Self {
        if attribute_names
            .iter()
            .map(String::as_str)
            .eq(FACE_ATTRIBUTES)
        {
            Self::default()
        } else {
            Self::new(
                attribute_names.to_vec(),
                std::iter::empty::<(String, String, f64)>(),
            )
            .expect("empty phrase table is valid")
        }
    }
}

impl Default for Lexicon {
    fn default() -> Self {
        Lexicon::new(
            FACE_ATTRIBUTES.iter().map(|s| s.to_string()).collect(),
            DEFAULT_ENTRIES
                .iter()
                .map(|&(p, a, v)| (p, a.to_string(), v)),
        )
        .expect("default lexicon is valid")
    }
}
