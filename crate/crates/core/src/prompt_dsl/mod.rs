//! Prompt language: a closed lexicon of attribute phrases plus an explicit
//! `attribute=value` clause form.

mod lexicon;
mod parser;

use serde::{Deserialize, Serialize};

pub use lexicon::Lexicon;
pub use parser::{parse_with, ParseError, ParseErrorKind};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Clause {
    pub attribute: usize,
    pub value: f64,
}

/// Parsed prompt: at most one clause per attribute, values in `[-1, 1]`.
///
/// Equality compares clauses only; `source_text` is carried for display.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptSpec {
    clauses: Vec<Clause>,
    #[serde(default)]
    source_text: String,
}

impl PartialEq for PromptSpec {
    fn eq(&self, other: &Self) -> bool {
        self.clauses == other.clauses
    }
}

impl PromptSpec {
    pub fn new(clauses: Vec<Clause>) -> Result<Self> {
        for (i, c) in clauses.iter().enumerate() {
            if !(-1.0..=1.0).contains(&c.value) {
                return Err(Error::InvalidArgument(format!(
                    "clause value {} outside [-1, 1]",
                    c.value
                )));
            }
            if clauses[..i].iter().any(|p| p.attribute == c.attribute) {
                return Err(Error::ConflictingSpecs(format!("#{}", c.attribute)));
            }
        }
        Ok(Self {
            clauses,
            source_text: String::new(),
        })
    }

    pub fn single(attribute: usize, value: f64) -> Result<Self> {
        Self::new(vec![Clause { attribute, value }])
    }

    pub fn clauses(&self) -> &[Clause] {
        &self.clauses
    }

    pub fn source_text(&self) -> &str {
        &self.source_text
    }

    pub fn is_empty(&self) -> bool {
        self.clauses.is_empty()
    }

    pub fn attributes(&self) -> Vec<usize> {
        self.clauses.iter().map(|c| c.attribute).collect()
    }

    pub fn value_of(&self, attribute: usize) -> Option<f64> {
        self.clauses
            .iter()
            .find(|c| c.attribute == attribute)
            .map(|c| c.value)
    }

    /// Sign-flips every clause.
    pub fn negate(&self) -> Result<Self> {
        if self.is_empty() {
            return Err(Error::EmptySpec);
        }
        Ok(Self {
            clauses: self
                .clauses
                .iter()
                .map(|c| Clause {
                    attribute: c.attribute,
                    value: -c.value,
                })
                .collect(),
            source_text: format!("not({})", self.source_text),
        })
    }

    /// Clause list as parallel `(indices, values)` arrays.
    pub fn target_attributes(&self) -> (Vec<usize>, Vec<f64>) {
        self.clauses.iter().map(|c| (c.attribute, c.value)).unzip()
    }

    /// Explicit clause form, e.g. `hair_length=+0.8, glasses=-1`.
    pub fn canonical_text(&self, attribute_names: &[String]) -> String {
        self.clauses
            .iter()
            .map(|c| format!("{}={:+}", attribute_names[c.attribute], c.value))
            .collect::<Vec<_>>()
            .join(", ")
    }

    /// Union of several specs; the same attribute twice is a conflict.
    pub fn merge(specs: &[PromptSpec], attribute_names: &[String]) -> Result<Self> {
        let mut clauses: Vec<Clause> = Vec::new();
        for s in specs {
            for c in &s.clauses {
                if clauses.iter().any(|p| p.attribute == c.attribute) {
                    let name = attribute_names
                        .get(c.attribute)
                        .cloned()
                        .unwrap_or_else(|| format!("#{}", c.attribute));
                    return Err(Error::ConflictingSpecs(name));
                }
                clauses.push(*c);
            }
        }
        let mut merged = Self::new(clauses)?;
        merged.source_text = specs
            .iter()
            .map(|s| s.source_text.as_str())
            .collect::<Vec<_>>()
            .join("; ");
        Ok(merged)
    }
}

/// Parses with the default face lexicon.
pub fn parse(text: &str) -> Result<PromptSpec, ParseError> {
    parse_with(text, &Lexicon::default())
}
