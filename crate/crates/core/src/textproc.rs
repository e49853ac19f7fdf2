//! Word-level tokenizer and vocabulary.
//!
//! Tokenization is deterministic and lossy in a fixed way: text is lowercased,
//! split on unicode whitespace, and every maximal run of punctuation becomes its
//! own token. A literal newline becomes the separator token [`SEP_TOKEN`], which
//! is how candidate boundaries reach the model.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;
pub const SEP: TokenId = 4;

/// Surface form of the candidate separator.
pub const SEP_TOKEN: &str = "⏎";

pub const RESERVED_TOKENS: [&str; 5] = ["<pad>", "<s>", "</s>", "<unk>", SEP_TOKEN];

/// Default source budget, in tokens.
pub const DEFAULT_SOURCE_LIMIT: usize = 512;

#[derive(Clone, Copy, PartialEq, Eq)]
enum CharClass {
    Word,
    Punct,
}

fn classify(c: char) -> CharClass {
    if c.is_alphanumeric() {
        CharClass::Word
    } else {
        CharClass::Punct
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut class = CharClass::Word;

    let flush = |current: &mut String, tokens: &mut Vec<String>| {
        if !current.is_empty() {
            tokens.push(std::mem::take(current));
        }
    };

    for c in text.chars() {
        if c == '\n' {
            flush(&mut current, &mut tokens);
            tokens.push(SEP_TOKEN.to_string());
        } else if c.is_whitespace() {
            flush(&mut current, &mut tokens);
        } else {
            let cc = classify(c);
            if cc != class {
                flush(&mut current, &mut tokens);
                class = cc;
            }
            current.extend(c.to_lowercase());
        }
    }
    flush(&mut current, &mut tokens);
    tokens
}

/// Lowercased, single-space joined, punctuation-separated form of `text`.
pub fn canonical_form(text: &str) -> String {
    tokenize(text).join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, TokenId>,
}

impl Vocab {
    /// Builds a vocabulary from an explicit token list; reserved tokens are
    /// prepended and must not appear in `tokens`.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
        all.extend(tokens.into_iter().map(Into::into));
        Self::from_full_list(all)
    }

    fn from_full_list(tokens: Vec<String>) -> Result<Self> {
        for (i, reserved) in RESERVED_TOKENS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*reserved) {
                return Err(Error::Format(format!(
                    "vocab line {} must be the reserved token {reserved:?}",
                    i + 1
                )));
            }
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::Format(format!("duplicate vocab token {t:?} at line {}", i + 1)));
            }
        }
        Ok(Self { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        tokenize(text)
            .iter()
            .map(|t| self.id(t).unwrap_or(UNK))
            .collect()
    }

    /// Renders ids as space-joined tokens. PAD and BOS are dropped and
    /// rendering stops at the first EOS.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        let mut out: Vec<&str> = Vec::new();
        for &id in ids {
            match id {
                EOS => break,
                PAD | BOS => {}
                _ => out.push(self.token(id).unwrap_or(RESERVED_TOKENS[UNK as usize])),
            }
        }
        out.join(" ")
    }

    /// One token per line; line number minus one is the id.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut file = io::BufWriter::new(fs::File::create(path)?);
        for t in &self.tokens {
            writeln!(file, "{t}")?;
        }
        file.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_full_list(text.lines().map(str::to_string).collect())
    }
}

/// Counts token frequencies over `corpus` and keeps those seen at least
/// `min_freq` times, most frequent first with lexicographic tie-breaking,
/// until the vocabulary (reserved tokens included) holds `max_size` entries.
pub fn build_vocab<I, S>(corpus: I, max_size: usize, min_freq: usize) -> Result<Vocab>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if max_size <= RESERVED_TOKENS.len() {
        return Err(Error::InvalidArgument(format!(
            "max_size must exceed {} reserved tokens, got {max_size}",
            RESERVED_TOKENS.len()
        )));
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for text in corpus {
        for tok in tokenize(text.as_ref()) {
            if RESERVED_TOKENS.contains(&tok.as_str()) {
                continue;
            }
            *counts.entry(tok).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(_, n)| *n >= min_freq.max(1))
        .collect();
    // BTreeMap iteration is already lexicographic, so a stable sort on count
    // keeps the tie order.
    ranked.sort_by(|a, b| b.1.cmp(&a.1));
    ranked.truncate(max_size - RESERVED_TOKENS.len());
    Vocab::from_tokens(ranked.into_iter().map(|(t, _)| t))
}

/// First `min(len, limit)` ids of `seq`.
pub fn truncate(seq: &[TokenId], limit: usize) -> Vec<TokenId> {
    seq[..seq.len().min(limit)].to_vec()
}
