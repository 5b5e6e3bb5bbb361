//! Headline tokenization, vocabulary construction and pretrained word vectors.
//!
//! Tokenizer rules, applied in order:
//! 1. lowercase the whole headline and split on whitespace;
//! 2. inside each token keep alphanumerics, `-` and `.`, drop every other character
//!    (so `China's` becomes `chinas`);
//! 3. trim `-` and `.` from both ends (`U.S.` becomes `u.s`);
//! 4. drop tokens left empty.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Rng};

pub const UNK_TOKEN: &str = "<unk>";
pub const UNK_ID: u32 = 0;

/// Half-width of the uniform range used for words missing from the vector file.
pub const MISSING_INIT_RANGE: f64 = 0.05;

const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords_en.txt");

pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .filter_map(|raw| {
            let kept: String = raw
                .chars()
                .filter(|c| c.is_alphanumeric() || *c == '-' || *c == '.')
                .collect();
            let trimmed = kept.trim_matches(|c| c == '-' || c == '.');
            (!trimmed.is_empty()).then(|| trimmed.to_string())
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Stopwords(HashSet<String>);

impl Stopwords {
    pub fn none() -> Self {
        Stopwords::default()
    }

    pub fn english() -> Self {
        Stopwords::parse(DEFAULT_STOPWORDS)
    }

    /// One token per line; blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Self {
        Stopwords(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_lowercase)
                .collect(),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Stopwords::parse(&text))
    }

    pub fn contains(&self, token: &str) -> bool {
        self.0.contains(token)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Drops stopwords from an already tokenized headline.
    pub fn filter(&self, tokens: &[String]) -> Vec<String> {
        tokens
            .iter()
            .filter(|t| !self.contains(t))
            .cloned()
            .collect()
    }
}

/// Dense token ids with `<unk>` fixed at id 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    ids: HashMap<String, u32>,
    tokens: Vec<String>,
    min_count: usize,
}

impl Vocabulary {
    /// Rebuilds a vocabulary from its id-ordered token list, e.g. from a checkpoint.
    pub fn from_tokens(tokens: Vec<String>, min_count: usize) -> Result<Self> {
        if tokens.first().map(String::as_str) != Some(UNK_TOKEN) {
            return Err(Error::Consistency(format!(
                "vocabulary must start with {UNK_TOKEN}"
            )));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Consistency(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary {
            ids,
            tokens,
            min_count,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Counts tokens over the training titles and keeps those seen at least
/// `min_count` times. Ids follow descending frequency, ties broken
/// lexicographically, after `<unk>`.
pub fn build_vocab(
    corpus: &[Vec<String>],
    stopwords: &Stopwords,
    min_count: usize,
) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::arg("cannot build a vocabulary from an empty corpus"));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for tok in corpus.iter().flatten() {
        if !stopwords.contains(tok) {
            *counts.entry(tok.as_str()).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(t, c)| c >= min_count && t != UNK_TOKEN)
        .collect();
    kept.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let tokens = std::iter::once(UNK_TOKEN.to_string())
        .chain(kept.into_iter().map(|(t, _)| t.to_string()))
        .collect();
    Vocabulary::from_tokens(tokens, min_count)
}

/// A tokenized headline as vocabulary ids; never empty.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TitleSeq(Vec<u32>);

impl TitleSeq {
    pub fn new(ids: Vec<u32>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::arg("title sequence must not be empty"));
        }
        Ok(TitleSeq(ids))
    }

    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Maps tokens to ids, unknown tokens to `<unk>`. `None` for an empty title.
pub fn encode_title(tokens: &[String], vocab: &Vocabulary) -> Option<TitleSeq> {
    let ids: Vec<u32> = tokens
        .iter()
        .map(|t| vocab.id(t).unwrap_or(UNK_ID))
        .collect();
    TitleSeq::new(ids).ok()
}

pub fn decode_title(seq: &TitleSeq, vocab: &Vocabulary) -> Vec<String> {
    seq.ids()
        .iter()
        .map(|&id| vocab.token(id).unwrap_or(UNK_TOKEN).to_string())
        .collect()
}

/// The `|V| × d` lookup table; row `i` is the vector of token id `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub vectors: Matrix,
    pub trainable: bool,
}

impl EmbeddingMatrix {
    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn vocab_size(&self) -> usize {
        self.vectors.rows()
    }

    /// Every row uniform in `(-0.05, 0.05)` except the zero `<unk>` row.
    pub fn random(vocab: &Vocabulary, d: usize, rng: &mut Rng) -> Self {
        let mut vectors = Matrix::zeros(vocab.len(), d);
        for id in 1..vocab.len() {
            for v in vectors.row_mut(id) {
                *v = rng.uniform(-MISSING_INIT_RANGE, MISSING_INIT_RANGE);
            }
        }
        EmbeddingMatrix {
            vectors,
            trainable: false,
        }
    }
}

/// Reads GloVe text format (`token v1 … vd` per line). Tokens absent from the
/// file are drawn uniformly from `(-0.05, 0.05)` in id order; `<unk>` stays zero.
pub fn load_pretrained(
    path: &Path,
    vocab: &Vocabulary,
    d: usize,
    rng: &mut Rng,
) -> Result<EmbeddingMatrix> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut found: Vec<Option<Vec<f64>>> = vec![None; vocab.len()];
    let mut first = true;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.trim_end().split(' ');
        let token = fields.next().unwrap_or_default();
        let values: Vec<&str> = fields.collect();
        if first {
            first = false;
            if values.len() != d {
                return Err(Error::format(
                    path,
                    format!("vectors have dimension {}, expected {d}", values.len()),
                ));
            }
        }
        if values.len() != d {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected {} fields, found {}", d + 1, values.len() + 1),
            ));
        }
        let Some(id) = vocab.id(token) else { continue };
        if id == UNK_ID {
            continue;
        }
        let parsed = values
            .iter()
            .map(|v| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::parse(path, line_no, format!("bad number {v:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        found[id as usize].get_or_insert(parsed);
    }

    let mut vectors = Matrix::zeros(vocab.len(), d);
    for (id, vec) in found.into_iter().enumerate().skip(1) {
        let row = vectors.row_mut(id);
        match vec {
            Some(v) => row.copy_from_slice(&v),
            None => {
                for x in row {
                    *x = rng.uniform(-MISSING_INIT_RANGE, MISSING_INIT_RANGE);
                }
            }
        }
    }
    Ok(EmbeddingMatrix {
        vectors,
        trainable: false,
    })
}
