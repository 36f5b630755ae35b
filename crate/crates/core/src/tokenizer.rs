//! Word-level vocabulary with fixed structural special tokens.
//!
//! Text is lowercased and split on whitespace; every character that is neither
//! alphanumeric nor whitespace becomes a token of its own. Literal special-token
//! strings inside user text (e.g. `[CLS]`) are never honoured and map to `[UNK]`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;
pub const MASK: usize = 4;
pub const EOU: usize = 5;
pub const EOT: usize = 6;

pub const SPECIAL_TOKENS: [&str; 7] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "[EOU]", "[EOT]"];
pub const NUM_SPECIALS: usize = SPECIAL_TOKENS.len();

pub fn is_special(id: usize) -> bool {
    id < NUM_SPECIALS
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

/// A pre-token: either a normal word/punctuation piece or a literal special string.
#[derive(Debug, PartialEq, Eq)]
enum Piece {
    Word(String),
    EscapedSpecial,
}

fn special_at(s: &str) -> Option<usize> {
    SPECIAL_TOKENS
        .iter()
        .find(|sp| s.len() >= sp.len() && s.is_char_boundary(sp.len()) && s[..sp.len()].eq_ignore_ascii_case(sp))
        .map(|sp| sp.len())
}

fn pre_tokenize(text: &str) -> Vec<Piece> {
    let mut pieces = Vec::new();
    let mut word = String::new();
    let flush = |word: &mut String, pieces: &mut Vec<Piece>| {
        if !word.is_empty() {
            pieces.push(Piece::Word(std::mem::take(word)));
        }
    };
    let mut rest = text;
    while let Some(c) = rest.chars().next() {
        if c == '[' {
            if let Some(len) = special_at(rest) {
                flush(&mut word, &mut pieces);
                pieces.push(Piece::EscapedSpecial);
                rest = &rest[len..];
                continue;
            }
        }
        if c.is_whitespace() {
            flush(&mut word, &mut pieces);
        } else if c.is_alphanumeric() {
            word.extend(c.to_lowercase());
        } else {
            flush(&mut word, &mut pieces);
            pieces.push(Piece::Word(c.to_lowercase().collect()));
        }
        rest = &rest[c.len_utf8()..];
    }
    flush(&mut word, &mut pieces);
    pieces
}

/// Lowercased token strings of `text`, as the vocabulary sees them. Escaped
/// special strings are omitted.
pub fn normalize(text: &str) -> Vec<String> {
    pre_tokenize(text)
        .into_iter()
        .filter_map(|p| match p {
            Piece::Word(w) => Some(w),
            Piece::EscapedSpecial => None,
        })
        .collect()
}

impl Vocabulary {
    /// A vocabulary holding only the special tokens.
    pub fn specials_only() -> Self {
        let id_to_token: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        let token_to_id = id_to_token.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        Vocabulary {
            token_to_id,
            id_to_token,
        }
    }

    /// Builds a vocabulary from the most frequent tokens with count `>= min_count`,
    /// holding at most `max_size` entries including the specials. Ties are broken
    /// by first occurrence.
    pub fn build<I, S>(texts: I, min_count: usize, max_size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        if min_count < 1 {
            return Err(Error::Config("min_count must be at least 1".into()));
        }
        if max_size <= NUM_SPECIALS {
            return Err(Error::Config(format!(
                "max_size must exceed the {NUM_SPECIALS} special tokens, got {max_size}"
            )));
        }
        // token -> (count, first occurrence)
        let mut counts: HashMap<String, (usize, usize)> = HashMap::new();
        let mut order = 0usize;
        for text in texts {
            for tok in normalize(text.as_ref()) {
                let entry = counts.entry(tok).or_insert((0, order));
                entry.0 += 1;
                order += 1;
            }
        }
        let mut ranked: Vec<(String, usize, usize)> = counts
            .into_iter()
            .filter(|(_, (c, _))| *c >= min_count)
            .map(|(t, (c, first))| (t, c, first))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        ranked.truncate(max_size - NUM_SPECIALS);

        let mut vocab = Vocabulary::specials_only();
        if ranked.is_empty() {
            warn!("vocabulary contains only special tokens");
        }
        for (tok, _, _) in ranked {
            vocab.push(tok);
        }
        Ok(vocab)
    }

    fn push(&mut self, token: String) {
        let id = self.id_to_token.len();
        self.token_to_id.insert(token.clone(), id);
        self.id_to_token.push(token);
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    /// Maps user text to ids. Never yields a structural special id.
    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        pre_tokenize(text)
            .into_iter()
            .map(|p| match p {
                Piece::Word(w) => match self.token_to_id.get(&w) {
                    Some(&id) if !is_special(id) => id,
                    _ => UNK,
                },
                Piece::EscapedSpecial => UNK,
            })
            .collect()
    }

    pub fn detokenize(&self, ids: &[usize]) -> Result<String> {
        let mut out = Vec::with_capacity(ids.len());
        for &id in ids {
            out.push(self.token(id).ok_or(Error::UnknownId(id))?);
        }
        Ok(out.join(" "))
    }

    /// Ids of ordinary (non-special) tokens, the pool random MLM replacements draw from.
    pub fn content_ids(&self) -> std::ops::Range<usize> {
        NUM_SPECIALS..self.len()
    }

    /// One token per line; line number (0-based) is the id.
    pub fn to_file_string(&self) -> String {
        let mut s = self.id_to_token.join("\n");
        s.push('\n');
        s
    }

    pub fn from_file_string(text: &str) -> Result<Self> {
        let tokens: Vec<&str> = text.lines().collect();
        if tokens.len() < NUM_SPECIALS {
            return Err(Error::Parse {
                line: tokens.len() + 1,
                message: "vocabulary file is missing special tokens".into(),
            });
        }
        for (i, sp) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens[i] != *sp {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected {sp}, found {:?}", tokens[i]),
                });
            }
        }
        let mut vocab = Vocabulary::specials_only();
        for (i, tok) in tokens.iter().enumerate().skip(NUM_SPECIALS) {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) || vocab.id(tok).is_some() {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("invalid or duplicate token {tok:?}"),
                });
            }
            vocab.push(tok.to_string());
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_file_string(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequency_order() {
        let v = Vocabulary::build(["a b a"], 1, 100).unwrap();
        assert_eq!(v.len(), NUM_SPECIALS + 2);
        assert_eq!(v.id("a"), Some(7));
        assert_eq!(v.id("b"), Some(8));
    }

    #[test]
    fn min_count_excludes_all() {
        let v = Vocabulary::build(["a"], 2, 100).unwrap();
        assert_eq!(v, Vocabulary::specials_only());
    }

    #[test]
    fn max_size_keeps_most_frequent() {
        // counts: t0..t4 appear 3,3,2,2,2 times after the tail tokens appear once.
        let corpus = ["t9 t8 t7 t6 t5", "t0 t1 t2 t3 t4", "t0 t1 t2 t3 t4", "t0 t1"];
        let v = Vocabulary::build(corpus, 1, NUM_SPECIALS + 5).unwrap();
        let kept: Vec<&str> = v.tokens()[NUM_SPECIALS..].iter().map(String::as_str).collect();
        assert_eq!(kept, vec!["t0", "t1", "t2", "t3", "t4"]);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(Vocabulary::build(["a"], 0, 100).is_err());
        assert!(Vocabulary::build(["a"], 1, 7).is_err());
    }

    #[test]
    fn tokenize_punctuation_and_unknown() {
        let v = Vocabulary::build(["hello , world"], 1, 100).unwrap();
        assert_eq!(
            v.tokenize("Hello, world"),
            vec![v.id("hello").unwrap(), v.id(",").unwrap(), v.id("world").unwrap()]
        );
        assert_eq!(v.tokenize("zzz"), vec![UNK]);
        assert_eq!(v.tokenize("[CLS]"), vec![UNK]);
        assert_eq!(v.tokenize("x [eot] y"), vec![UNK, UNK, UNK]);
    }

    #[test]
    fn detokenize_specials_and_range() {
        let v = Vocabulary::build(["hi"], 1, 100).unwrap();
        assert_eq!(v.detokenize(&[v.id("hi").unwrap()]).unwrap(), "hi");
        assert_eq!(v.detokenize(&[2, 3]).unwrap(), "[CLS] [SEP]");
        assert!(matches!(v.detokenize(&[1_000_000_000]), Err(Error::UnknownId(1_000_000_000))));
    }

    #[test]
    fn file_roundtrip() {
        let v = Vocabulary::build(["the cat sat on the mat ."], 1, 100).unwrap();
        let text = v.to_file_string();
        assert_eq!(text.lines().take(7).collect::<Vec<_>>(), SPECIAL_TOKENS.to_vec());
        assert_eq!(Vocabulary::from_file_string(&text).unwrap(), v);
        assert!(Vocabulary::from_file_string("[PAD]\n[UNK]\n").is_err());
    }
}
