//! Tokens, sentences and phrase matching.

use alloc::collections::BTreeMap;
use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// A lowercase alphanumeric run with its byte span in the source text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Splits on every non-alphanumeric character and lowercases.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in text.char_indices() {
        match (ch.is_alphanumeric(), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push(token(text, s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push(token(text, s, text.len()));
    }
    out
}

fn token(text: &str, start: usize, end: usize) -> Token {
    Token {
        text: text[start..end].to_lowercase(),
        start,
        end,
    }
}

/// Token texts of a lexicon phrase.
pub fn phrase_tokens(phrase: &str) -> Vec<String> {
    tokenize(phrase).into_iter().map(|t| t.text).collect()
}

/// A sentence with its byte span in the report.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub start: usize,
    pub end: usize,
    pub text: String,
}

fn is_terminator(ch: char) -> bool {
    matches!(ch, '.' | '?' | '!' | '\n')
}

/// Whitespace-delimited word containing byte `at`, stripped of surrounding
/// punctuation other than inner periods, lowercased.
fn word_around(text: &str, at: usize) -> String {
    let start = text[..at]
        .rfind(char::is_whitespace)
        .map_or(0, |i| i + text[i..].chars().next().map_or(1, char::len_utf8));
    let end = text[at..]
        .find(char::is_whitespace)
        .map_or(text.len(), |i| at + i);
    text[start..end]
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase()
}

fn is_boundary(text: &str, at: usize, ch: char, abbreviations: &BTreeSet<String>) -> bool {
    if ch != '.' {
        return is_terminator(ch);
    }
    let before = text[..at].chars().next_back();
    let after = text[at + 1..].chars().next();
    if matches!((before, after), (Some(b), Some(a)) if b.is_ascii_digit() && a.is_ascii_digit()) {
        return false;
    }
    !abbreviations.contains(&word_around(text, at))
}

/// Sentence segmentation on `.`, `?`, `!` and newlines. Periods inside
/// numbers or belonging to a listed abbreviation do not end a sentence; runs
/// of terminators stay with the sentence they close. Sentences are trimmed,
/// so their spans cover all non-whitespace text exactly once.
pub fn split_sentences_with(text: &str, abbreviations: &BTreeSet<String>) -> Vec<Sentence> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    let mut last_end = 0;
    let mut closing = false;
    let flush = |out: &mut Vec<Sentence>, s: usize, e: usize| {
        out.push(Sentence {
            start: s,
            end: e,
            text: String::from(&text[s..e]),
        });
    };
    for (i, ch) in text.char_indices() {
        let end = i + ch.len_utf8();
        if closing {
            if matches!(ch, '.' | '?' | '!') {
                last_end = end;
                continue;
            }
            if let Some(s) = start.take() {
                flush(&mut out, s, last_end);
            }
            closing = false;
        }
        if ch.is_whitespace() {
            if ch == '\n' {
                if let Some(s) = start.take() {
                    flush(&mut out, s, last_end);
                }
            }
            continue;
        }
        if start.is_none() {
            start = Some(i);
        }
        last_end = end;
        if is_boundary(text, i, ch, abbreviations) {
            closing = true;
        }
    }
    if let Some(s) = start {
        flush(&mut out, s, last_end);
    }
    out
}

/// A phrase occurrence over tokens `[start, end)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhraseMatch<T> {
    pub start: usize,
    pub end: usize,
    pub value: T,
}

/// Multi-token phrases indexed by first token.
#[derive(Clone, Debug)]
pub struct PhraseSet<T> {
    by_first: BTreeMap<String, Vec<(Vec<String>, T)>>,
}

impl<T> Default for PhraseSet<T> {
    fn default() -> Self {
        Self {
            by_first: BTreeMap::new(),
        }
    }
}

impl<T: Clone> PhraseSet<T> {
    /// Adds a phrase; returns the existing value if the token sequence is
    /// already present.
    pub fn insert(&mut self, tokens: Vec<String>, value: T) -> Result<(), T> {
        let bucket = self.by_first.entry(tokens[0].clone()).or_default();
        if let Some((_, v)) = bucket.iter().find(|(t, _)| *t == tokens) {
            return Err(v.clone());
        }
        bucket.push((tokens, value));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.by_first.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.by_first.is_empty()
    }

    fn longest_at(&self, tokens: &[Token], i: usize) -> Option<(usize, &T)> {
        let bucket = self.by_first.get(&tokens[i].text)?;
        bucket
            .iter()
            .filter(|(p, _)| {
                i + p.len() <= tokens.len() && p.iter().zip(&tokens[i..]).all(|(a, b)| *a == b.text)
            })
            .max_by_key(|(p, _)| p.len())
            .map(|(p, v)| (p.len(), v))
    }

    /// Non-overlapping occurrences, choosing longer matches first and the
    /// leftmost among equally long ones. Sorted by position.
    pub fn find(&self, tokens: &[Token]) -> Vec<PhraseMatch<T>> {
        let mut cands: Vec<PhraseMatch<T>> = (0..tokens.len())
            .filter_map(|i| {
                self.longest_at(tokens, i).map(|(n, v)| PhraseMatch {
                    start: i,
                    end: i + n,
                    value: v.clone(),
                })
            })
            .collect();
        cands.sort_by(|a, b| (b.end - b.start).cmp(&(a.end - a.start)).then(a.start.cmp(&b.start)));
        let mut taken = alloc::vec![false; tokens.len()];
        let mut out = Vec::new();
        for m in cands {
            if taken[m.start..m.end].iter().any(|&t| t) {
                continue;
            }
            taken[m.start..m.end].iter_mut().for_each(|t| *t = true);
            out.push(m);
        }
        out.sort_by_key(|m| m.start);
        out
    }
}
