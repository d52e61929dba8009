//! Tokenization, vocabulary, word embeddings and per-token input assembly.

mod io;
mod word2vec;

use std::collections::{HashMap, HashSet};


use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub use io::{read_embeddings, read_vocab, write_embeddings, write_vocab, EMBEDDING_MAGIC, EMBEDDING_VERSION};
pub use word2vec::{train_word2vec, SkipGramConfig};

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const PAD: usize = 0;
pub const UNK: usize = 1;

/// Lowercases, splits on whitespace, and peels leading/trailing punctuation
/// characters off each word as tokens of their own.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for word in text.split_whitespace() {
        let word = word.to_lowercase();
        let chars: Vec<char> = word.chars().collect();
        let start = chars.iter().position(|c| c.is_alphanumeric());
        let Some(start) = start else {
            tokens.extend(chars.iter().map(|c| c.to_string()));
            continue;
        };
        let end = chars.iter().rposition(|c| c.is_alphanumeric()).unwrap() + 1;
        tokens.extend(chars[..start].iter().map(|c| c.to_string()));
        tokens.push(chars[start..end].iter().collect());
        tokens.extend(chars[end..].iter().map(|c| c.to_string()));
    }
    tokens
}

/// Token/index map with `PAD = 0` and `UNK = 1` reserved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    index: HashMap<String, usize>,
    tokens: Vec<String>,
    min_count: usize,
}

impl Vocab {
    /// Builds a vocabulary from an already ordered token list (reserved entries excluded).
    pub fn from_tokens<I, S>(tokens: I, min_count: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Self {
            index: HashMap::new(),
            tokens: vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()],
            min_count,
        };
        vocab.index.insert(PAD_TOKEN.to_string(), PAD);
        vocab.index.insert(UNK_TOKEN.to_string(), UNK);
        for tok in tokens {
            let tok = tok.into();
            if tok == PAD_TOKEN || tok == UNK_TOKEN {
                return Err(Error::Data(format!("reserved token {tok} in vocabulary list")));
            }
            if vocab.index.contains_key(&tok) {
                return Err(Error::Data(format!("duplicate vocabulary token {tok:?}")));
            }
            vocab.index.insert(tok.clone(), vocab.tokens.len());
            vocab.tokens.push(tok);
        }
        Ok(vocab)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    /// Index of `token`, falling back to `UNK`.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// All tokens in index order, reserved ones included.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Counts tokens and keeps those seen at least `min_count` times, ordered by
/// frequency (descending) and then lexicographically.
pub fn build_vocab<S: AsRef<str>>(corpus: &[Vec<S>], min_count: usize) -> Result<Vocab> {
    if min_count < 1 {
        return Err(Error::Config("min_count must be at least 1".into()));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for sentence in corpus {
        for tok in sentence {
            let tok = tok.as_ref();
            if tok == PAD_TOKEN || tok == UNK_TOKEN {
                continue;
            }
            *counts.entry(tok).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::Data("cannot build a vocabulary from an empty corpus".into()));
    }
    let mut kept: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Vocab::from_tokens(kept.into_iter().map(|(t, _)| t), min_count)
}

/// One embedding row per vocabulary entry; the `PAD` row is all zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    vectors: Matrix,
}

impl EmbeddingMatrix {
    pub fn new(vectors: Matrix) -> Result<Self> {
        if vectors.row(PAD).iter().any(|&v| v != 0.0) {
            return Err(Error::Data("PAD embedding row must be all zeros".into()));
        }
        if vectors.rows() < 2 {
            return Err(Error::Dimension("embedding table needs PAD and UNK rows".into()));
        }
        Ok(Self { vectors })
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn row(&self, id: usize) -> &[f64] {
        self.vectors.row(id)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.vectors
    }

    /// Applies `row -= lr * grad` to a non-PAD row.
    pub(crate) fn update_row(&mut self, id: usize, grad: &[f64], lr: f64) {
        if id == PAD {
            return;
        }
        for (v, g) in self.vectors.row_mut(id).iter_mut().zip(grad) {
            *v -= lr * g;
        }
    }
}

/// A vocabulary together with its aligned embedding table.
#[derive(Clone, Debug, PartialEq)]
pub struct Embeddings {
    pub vocab: Vocab,
    pub table: EmbeddingMatrix,
}

impl Embeddings {
    pub fn new(vocab: Vocab, table: EmbeddingMatrix) -> Result<Self> {
        if vocab.len() != table.len() {
            return Err(Error::Dimension(format!(
                "vocabulary has {} entries but embedding table has {} rows",
                vocab.len(),
                table.len()
            )));
        }
        Ok(Self { vocab, table })
    }

    pub fn dim(&self) -> usize {
        self.table.dim()
    }
}

/// `flags[i] = 1` iff `tokens[i]` occurs anywhere in `other`. Padding never matches.
pub fn overlap_flags<S: AsRef<str>, T: AsRef<str>>(other: &[S], tokens: &[T]) -> Vec<u8> {
    let set: HashSet<&str> = other
        .iter()
        .map(AsRef::as_ref)
        .filter(|t| *t != PAD_TOKEN)
        .collect();
    tokens
        .iter()
        .map(|t| {
            let t = t.as_ref();
            u8::from(t != PAD_TOKEN && set.contains(t))
        })
        .collect()
}

/// A tokenized sentence as rows of `[embedding | overlap flag]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceMatrix {
    pub rows: Matrix,
    pub mask: Vec<bool>,
    pub ids: Vec<usize>,
    pub tokens: Vec<String>,
}

impl SequenceMatrix {
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn width(&self) -> usize {
        self.rows.cols()
    }

    pub fn real_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Indices of unmasked rows, in order.
    pub fn real_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i)
    }
}

/// Looks tokens up (OOV → `UNK`, `PAD_TOKEN` → masked zero row), truncates to
/// `max_len`, and appends the overlap flag against `other_side`.
pub fn embed_sequence<S: AsRef<str>, T: AsRef<str>>(
    tokens: &[S],
    embeddings: &Embeddings,
    other_side: &[T],
    max_len: usize,
) -> Result<SequenceMatrix> {
    if max_len < 1 {
        return Err(Error::Config("max_len must be at least 1".into()));
    }
    if tokens.is_empty() {
        return Err(Error::Data("cannot embed an empty token sequence".into()));
    }
    let tokens = &tokens[..tokens.len().min(max_len)];
    let flags = overlap_flags(other_side, tokens);
    let dim = embeddings.dim();
    let mut rows = Matrix::zeros(tokens.len(), dim + 1);
    let mut mask = Vec::with_capacity(tokens.len());
    let mut ids = Vec::with_capacity(tokens.len());
    for (i, tok) in tokens.iter().enumerate() {
        let tok = tok.as_ref();
        if tok == PAD_TOKEN {
            mask.push(false);
            ids.push(PAD);
            continue;
        }
        let id = embeddings.vocab.id(tok);
        let row = rows.row_mut(i);
        row[..dim].copy_from_slice(embeddings.table.row(id));
        row[dim] = f64::from(flags[i]);
        mask.push(true);
        ids.push(id);
    }
    let tokens = tokens.iter().map(|t| t.as_ref().to_string()).collect();
    Ok(SequenceMatrix { rows, mask, ids, tokens })
}
