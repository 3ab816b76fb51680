use std::collections::HashMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::trajectory::Token;

pub const UNK: &str = "<unk>";
pub const EOA: &str = "<eoa>";

/// Fixed token vocabulary. On disk: one token per line, token id = zero-based
/// line index. The first two entries are always `<unk>` and `<eoa>`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn new<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = words.into_iter().map(Into::into).collect();
        if tokens.len() < 2 || tokens[0] != UNK || tokens[1] != EOA {
            return Err(Error::format(
                "vocabulary",
                format!("first two tokens must be {UNK} and {EOA}"),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::format("vocabulary", format!("bad token {tok:?}")));
            }
            if index.insert(tok.clone(), id as u32).is_some() {
                return Err(Error::format("vocabulary", format!("duplicate token {tok:?}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    /// Builds `<unk>`, `<eoa>`, then `words` with duplicates dropped.
    pub(crate) fn from_words<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let mut all = vec![UNK.to_owned(), EOA.to_owned()];
        for w in words {
            if !all.iter().any(|t| t == w) {
                all.push(w.to_owned());
            }
        }
        Vocab::new(all).expect("built-in vocabulary is well formed")
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let mut words = Vec::new();
        for line in input.lines() {
            words.push(line?.trim_end_matches('\r').to_owned());
        }
        while words.last().is_some_and(|w| w.is_empty()) {
            words.pop();
        }
        Vocab::new(words)
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        for t in &self.tokens {
            writeln!(out, "{t}")?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn unk(&self) -> Token {
        Token(0)
    }

    pub fn eoa(&self) -> Token {
        Token(1)
    }

    pub fn get(&self, word: &str) -> Option<Token> {
        self.index.get(word).copied().map(Token)
    }

    /// Unknown words map to `<unk>`.
    pub fn lookup(&self, word: &str) -> Token {
        self.get(word).unwrap_or(self.unk())
    }

    pub fn word(&self, token: Token) -> Option<&str> {
        self.tokens.get(token.index()).map(String::as_str)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn tokenize(&self, text: &str) -> Vec<Token> {
        text.split_whitespace().map(|w| self.lookup(w)).collect()
    }
}
