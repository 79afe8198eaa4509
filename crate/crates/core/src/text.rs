//! Tokenization, word embeddings and the semantic similarity matrix.
//!
//! Similarity between candidate news is always computed from the *fixed*
//! loaded word vectors (mean over title tokens, then cosine), never from
//! representations the model learns, so diversity numbers stay comparable
//! across models and training stages.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Real;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
const PAD_TOKEN: &str = "<pad>";
const UNK_TOKEN: &str = "<unk>";

/// Token <-> id bijection with fixed PAD=0 and UNK=1 slots.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    pub fn new() -> Self {
        let mut v = Vocab {
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
        };
        v.insert(PAD_TOKEN);
        v.insert(UNK_TOKEN);
        v
    }

    fn insert(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.token_to_id.get(token) {
            return id;
        }
        let id = self.id_to_token.len() as u32;
        self.token_to_id.insert(token.to_string(), id);
        self.id_to_token.push(token.to_string());
        id
    }

    /// Adds every normalized token of `text` to the vocabulary.
    pub fn add_text(&mut self, text: &str) {
        for tok in normalize(text) {
            self.insert(&tok);
        }
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false // PAD and UNK are always present
    }

    /// One token per line, in id order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        for tok in &self.id_to_token {
            writeln!(f, "{tok}")?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        let mut v = Vocab {
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
        };
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let tok = line?;
            if v.token_to_id.contains_key(&tok) {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    msg: format!("duplicate token `{tok}`"),
                });
            }
            v.token_to_id.insert(tok.clone(), i as u32);
            v.id_to_token.push(tok);
        }
        if v.token(PAD) != Some(PAD_TOKEN) || v.token(UNK) != Some(UNK_TOKEN) {
            return Err(Error::invalid(format!(
                "vocab file {} must start with {PAD_TOKEN} and {UNK_TOKEN}",
                path.display()
            )));
        }
        Ok(v)
    }
}

/// Lowercases and splits on whitespace/punctuation, dropping empty pieces.
pub fn normalize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| c.is_whitespace() || (c.is_ascii_punctuation() && c != '\''))
        .filter(|s| !s.is_empty())
        .map(|s| s.to_string())
        .collect()
}

/// Maps text to exactly `max_len` token ids: OOV becomes UNK, the tail is
/// truncated, and the remainder is padded with PAD.
pub fn tokenize(vocab: &Vocab, text: &str, max_len: usize) -> Vec<u32> {
    let mut ids: Vec<u32> = normalize(text)
        .into_iter()
        .take(max_len)
        .map(|tok| vocab.id(&tok).unwrap_or(UNK))
        .collect();
    ids.resize(max_len, PAD);
    ids
}

/// Word-vector store, one row per vocab id. The PAD row is all-zero and is
/// never updated.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    rows: Vec<Vec<Real>>,
}

impl EmbeddingTable {
    pub fn rows(&self) -> &[Vec<Real>] {
        &self.rows
    }

    pub fn row(&self, id: u32) -> &[Real] {
        &self.rows[id as usize]
    }

    pub fn vocab_size(&self) -> usize {
        self.rows.len()
    }

    /// Loads "word v1 v2 ... vD" lines. In-vocab words take the file
    /// vectors; words missing from the file get seeded N(0, 0.1^2) rows,
    /// and PAD stays zero.
    pub fn load(path: &Path, vocab: &Vocab, seed: u64) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        let mut file_dim: Option<usize> = None;
        let mut loaded: HashMap<u32, Vec<Real>> = HashMap::new();
        for (lineno, line) in BufReader::new(f).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let word = parts.next().unwrap();
            let vec: std::result::Result<Vec<Real>, _> = parts.map(|p| p.parse::<Real>()).collect();
            let vec = vec.map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: format!("bad float: {e}"),
            })?;
            match file_dim {
                None => file_dim = Some(vec.len()),
                Some(d) if d != vec.len() => {
                    return Err(Error::Parse {
                        path: path.display().to_string(),
                        line: lineno + 1,
                        msg: format!("dimension {} differs from {}", vec.len(), d),
                    })
                }
                _ => {}
            }
            if let Some(id) = vocab.id(word) {
                loaded.insert(id, vec);
            }
        }
        let dim = file_dim.unwrap_or(0);
        Ok(Self::from_loaded(dim, vocab, loaded, seed))
    }

    /// Assembles a table from already-resolved (id -> vector) rows; exposed
    /// for the synthetic generator which builds vectors in memory.
    pub fn from_loaded(
        mut dim: usize,
        vocab: &Vocab,
        loaded: HashMap<u32, Vec<Real>>,
        seed: u64,
    ) -> Self {
        if dim == 0 {
            dim = 300; // empty file: nothing to infer the width from
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::with_capacity(vocab.len());
        for id in 0..vocab.len() as u32 {
            if id == PAD {
                rows.push(vec![0.0; dim]);
                continue;
            }
            match loaded.get(&id) {
                Some(v) => rows.push(v.clone()),
                None => rows.push((0..dim).map(|_| 0.1 * gaussian(&mut rng)).collect()),
            }
        }
        EmbeddingTable { dim, rows }
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> Real {
    // Box-Muller
    let u1: Real = rng.random_range(Real::MIN_POSITIVE..1.0);
    let u2: Real = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI as Real * u2).cos()
}

/// Mean of embedding rows over non-PAD tokens; all-PAD input gives zero.
pub fn semantic_embedding(tokens: &[u32], table: &EmbeddingTable) -> Vec<Real> {
    let mut acc = vec![0.0; table.dim];
    let mut count = 0usize;
    for &t in tokens {
        if t == PAD {
            continue;
        }
        for (a, &v) in acc.iter_mut().zip(table.row(t)) {
            *a += v;
        }
        count += 1;
    }
    if count > 0 {
        let inv = 1.0 / count as Real;
        acc.iter_mut().for_each(|a| *a *= inv);
    }
    acc
}

pub fn cosine(a: &[Real], b: &[Real]) -> Real {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0; // zero-embedding news count as unrelated
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Symmetric pairwise cosine similarity matrix with unit diagonal, stored
/// row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub size: usize,
    data: Vec<Real>,
}

impl SimilarityMatrix {
    pub fn from_embeddings(embeddings: &[Vec<Real>]) -> Self {
        let m = embeddings.len();
        let mut data = vec![0.0; m * m];
        for i in 0..m {
            data[i * m + i] = 1.0;
            for j in i + 1..m {
                let s = cosine(&embeddings[i], &embeddings[j]);
                data[i * m + j] = s;
                data[j * m + i] = s;
            }
        }
        SimilarityMatrix { size: m, data }
    }

    pub fn from_raw(size: usize, data: Vec<Real>) -> Result<Self> {
        if data.len() != size * size {
            return Err(Error::invalid(format!(
                "similarity matrix of size {size} needs {} entries, got {}",
                size * size,
                data.len()
            )));
        }
        Ok(SimilarityMatrix { size, data })
    }

    pub fn get(&self, i: usize, j: usize) -> Real {
        self.data[i * self.size + j]
    }

    pub fn data(&self) -> &[Real] {
        &self.data
    }
}

/// Pairwise similarity of a candidate list from fixed word vectors.
pub fn similarity_matrix(candidates: &[Vec<u32>], table: &EmbeddingTable) -> SimilarityMatrix {
    let embeddings: Vec<Vec<Real>> = candidates
        .iter()
        .map(|tokens| semantic_embedding(tokens, table))
        .collect();
    SimilarityMatrix::from_embeddings(&embeddings)
}
