//! Single-pass tokenizer and recursive-descent parser for prompts.
//!
//! ```text
//! prompt   := clauses | natural
//! clauses  := NAME "=" NUMBER ("," NAME "=" NUMBER)*
//! natural  := [article] adj* noun feature*
//! feature  := ("with" | "without") [article] phrase (sep [with|without] [article] phrase)*
//! sep      := "," | "and" | ", and"
//! ```

use std::fmt;

use super::{Clause, Lexicon, PromptSpec};

#[derive(Debug, Clone, PartialEq)]
pub enum ParseErrorKind {
    UnknownPhrase(String),
    ConflictingClauses(String),
    MalformedValue(String),
    ExpectedNoun,
    UnexpectedToken(String),
}

/// Parse failure with a byte span into the source text.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub start: usize,
    pub end: usize,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ParseErrorKind::UnknownPhrase(p) => write!(f, "unknown phrase {p:?}")?,
            ParseErrorKind::ConflictingClauses(a) => write!(f, "conflicting clauses for {a}")?,
            ParseErrorKind::MalformedValue(v) => write!(f, "malformed value {v:?}")?,
            ParseErrorKind::ExpectedNoun => write!(f, "expected a noun such as \"person\"")?,
            ParseErrorKind::UnexpectedToken(t) => write!(f, "unexpected {t:?}")?,
        }
        write!(f, " at bytes {}..{}", self.start, self.end)
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Number(String),
    Comma,
    Equals,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    start: usize,
    end: usize,
}

const ARTICLES: &[&str] = &["a", "an", "the"];
const NOUNS: &[&str] = &["person", "man", "woman", "girl", "boy", "face"];
const STOP_WORDS: &[&str] = &[
    "very", "really", "quite", "some", "pair", "of", "wearing", "looking",
];

fn tokenize(text: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let is_word = |c: u8| c.is_ascii_alphanumeric() || c == b'-' || c == b'_' || c == b'\'';
    let is_num =
        |c: u8| c.is_ascii_digit() || c == b'.' || c == b'e' || c == b'E' || c == b'+' || c == b'-';
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if c == b',' {
            out.push(Token {
                tok: Tok::Comma,
                start,
                end: i + 1,
            });
            i += 1;
            continue;
        }
        if c == b'=' {
            out.push(Token {
                tok: Tok::Equals,
                start,
                end: i + 1,
            });
            i += 1;
            continue;
        }
        let signed = (c == b'+' || c == b'-')
            && bytes
                .get(i + 1)
                .is_some_and(|n| n.is_ascii_digit() || *n == b'.');
        if c.is_ascii_digit() || c == b'.' || signed {
            i += 1;
            while i < bytes.len() && is_num(bytes[i]) {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Number(text[start..i].to_string()),
                start,
                end: i,
            });
            continue;
        }
        if is_word(c) {
            while i < bytes.len() && is_word(bytes[i]) {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Word(text[start..i].to_ascii_lowercase()),
                start,
                end: i,
            });
            continue;
        }
        let ch = text[i..].chars().next().unwrap_or('?');
        return Err(ParseError {
            kind: ParseErrorKind::UnexpectedToken(ch.to_string()),
            start,
            end: i + ch.len_utf8(),
        });
    }
    Ok(out)
}

struct Parser<'a> {
    lexicon: &'a Lexicon,
    toks: Vec<Token>,
    pos: usize,
    clauses: Vec<Clause>,
    text_len: usize,
}

impl<'a> Parser<'a> {
    fn word(&self, at: usize) -> Option<&str> {
        match self.toks.get(at).map(|t| &t.tok) {
            Some(Tok::Word(w)) => Some(w.as_str()),
            _ => None,
        }
    }

    fn at_word(&self, set: &[&str]) -> bool {
        self.word(self.pos).is_some_and(|w| set.contains(&w))
    }

    fn span_here(&self) -> (usize, usize) {
        match self.toks.get(self.pos) {
            Some(t) => (t.start, t.end),
            None => (self.text_len, self.text_len),
        }
    }

    fn err(&self, kind: ParseErrorKind) -> ParseError {
        let (start, end) = self.span_here();
        ParseError { kind, start, end }
    }

    fn push(
        &mut self,
        attribute: usize,
        value: f64,
        start: usize,
        end: usize,
    ) -> Result<(), ParseError> {
        if self.clauses.iter().any(|c| c.attribute == attribute) {
            return Err(ParseError {
                kind: ParseErrorKind::ConflictingClauses(
                    self.lexicon.attribute_names()[attribute].clone(),
                ),
                start,
                end,
            });
        }
        self.clauses.push(Clause { attribute, value });
        Ok(())
    }

    /// Longest lexicon phrase starting at the cursor.
    fn match_phrase(&self) -> Option<(usize, f64, usize)> {
        for n in (1..=self.lexicon.max_words()).rev() {
            let words: Option<Vec<&str>> = (0..n).map(|j| self.word(self.pos + j)).collect();
            if let Some(words) = words {
                if let Some((k, v)) = self.lexicon.lookup(&words.join(" ")) {
                    return Some((k, v, n));
                }
            }
        }
        None
    }

    fn skip_fillers(&mut self) {
        while self.at_word(ARTICLES) || self.at_word(STOP_WORDS) {
            self.pos += 1;
        }
    }

    fn natural(&mut self) -> Result<(), ParseError> {
        if self.at_word(ARTICLES) {
            self.pos += 1;
        }
        loop {
            if self.at_word(NOUNS) {
                self.pos += 1;
                break;
            }
            if self.at_word(STOP_WORDS) {
                self.pos += 1;
                continue;
            }
            match self.toks.get(self.pos) {
                None => return Err(self.err(ParseErrorKind::ExpectedNoun)),
                Some(t) if matches!(t.tok, Tok::Word(_)) => {}
                Some(t) => return Err(self.err(ParseErrorKind::UnexpectedToken(describe(&t.tok)))),
            }
            if self.at_word(&["with", "without"]) {
                return Err(self.err(ParseErrorKind::ExpectedNoun));
            }
            let (k, v, n) = self.phrase_or_unknown()?;
            let (start, end) = (self.toks[self.pos].start, self.toks[self.pos + n - 1].end);
            self.push(k, v, start, end)?;
            self.pos += n;
        }
        while self.pos < self.toks.len() {
            let negated = match self.word(self.pos) {
                Some("with") => false,
                Some("without") => true,
                _ => {
                    let t = &self.toks[self.pos];
                    return Err(self.err(match &t.tok {
                        Tok::Word(w) => ParseErrorKind::UnknownPhrase(w.clone()),
                        other => ParseErrorKind::UnexpectedToken(describe(other)),
                    }));
                }
            };
            self.pos += 1;
            self.feature_list(negated)?;
        }
        Ok(())
    }

    fn feature_list(&mut self, mut negated: bool) -> Result<(), ParseError> {
        loop {
            self.skip_fillers();
            if self.pos >= self.toks.len() {
                return Err(self.err(ParseErrorKind::UnknownPhrase(String::new())));
            }
            let (k, v, n) = self.phrase_or_unknown()?;
            let (start, end) = (self.toks[self.pos].start, self.toks[self.pos + n - 1].end);
            let value = if !negated {
                v
            } else if self.lexicon.is_presence(k) {
                -1.0
            } else {
                -v
            };
            self.push(k, value, start, end)?;
            self.pos += n;

            let mut separated = false;
            while matches!(self.toks.get(self.pos).map(|t| &t.tok), Some(Tok::Comma))
                || self.at_word(&["and"])
            {
                self.pos += 1;
                separated = true;
            }
            if self.pos >= self.toks.len() {
                if separated {
                    return Err(self.err(ParseErrorKind::UnknownPhrase(String::new())));
                }
                return Ok(());
            }
            match self.word(self.pos) {
                Some("with") => {
                    negated = false;
                    self.pos += 1;
                }
                Some("without") => {
                    negated = true;
                    self.pos += 1;
                }
                _ if separated => {}
                _ => return Ok(()),
            }
        }
    }

    fn phrase_or_unknown(&self) -> Result<(usize, f64, usize), ParseError> {
        self.match_phrase().ok_or_else(|| {
            let text = match &self.toks[self.pos].tok {
                Tok::Word(w) => w.clone(),
                other => describe(other),
            };
            self.err(ParseErrorKind::UnknownPhrase(text))
        })
    }

    fn explicit(&mut self) -> Result<(), ParseError> {
        loop {
            let name_tok = self.toks[self.pos].clone();
            let name = match &name_tok.tok {
                Tok::Word(w) => w.clone(),
                other => return Err(self.err(ParseErrorKind::UnexpectedToken(describe(other)))),
            };
            let k = self.lexicon.attribute_index(&name).ok_or(ParseError {
                kind: ParseErrorKind::UnknownPhrase(name.clone()),
                start: name_tok.start,
                end: name_tok.end,
            })?;
            self.pos += 1;
            if !matches!(self.toks.get(self.pos).map(|t| &t.tok), Some(Tok::Equals)) {
                return Err(self.err(ParseErrorKind::UnexpectedToken("expected '='".into())));
            }
            self.pos += 1;
            let value_tok = match self.toks.get(self.pos) {
                Some(t) => t.clone(),
                None => return Err(self.err(ParseErrorKind::MalformedValue(String::new()))),
            };
            let raw = match &value_tok.tok {
                Tok::Number(n) => n.clone(),
                Tok::Word(w) => w.clone(),
                other => describe(other),
            };
            let value = raw
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && (-1.0..=1.0).contains(v))
                .ok_or(ParseError {
                    kind: ParseErrorKind::MalformedValue(raw.clone()),
                    start: value_tok.start,
                    end: value_tok.end,
                })?;
            self.push(k, value, name_tok.start, value_tok.end)?;
            self.pos += 1;
            match self.toks.get(self.pos).map(|t| &t.tok) {
                None => return Ok(()),
                Some(Tok::Comma) => {
                    self.pos += 1;
                    if self.pos >= self.toks.len() {
                        return Err(
                            self.err(ParseErrorKind::UnexpectedToken("trailing ','".into()))
                        );
                    }
                }
                Some(other) => {
                    let d = describe(other);
                    return Err(self.err(ParseErrorKind::UnexpectedToken(d)));
                }
            }
        }
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Word(w) => w.clone(),
        Tok::Number(n) => n.clone(),
        Tok::Comma => ",".into(),
        Tok::Equals => "=".into(),
    }
}

pub fn parse_with(text: &str, lexicon: &Lexicon) -> Result<PromptSpec, ParseError> {
    let toks = tokenize(text)?;
    let explicit = matches!(toks.get(1).map(|t| &t.tok), Some(Tok::Equals));
    let mut p = Parser {
        lexicon,
        toks,
        pos: 0,
        clauses: Vec::new(),
        text_len: text.len(),
    };
    if p.toks.is_empty() {
        return Err(p.err(ParseErrorKind::ExpectedNoun));
    }
    if explicit {
        p.explicit()?;
    } else {
        p.natural()?;
    }
    Ok(PromptSpec {
        clauses: p.clauses,
        source_text: text.to_string(),
    })
}
