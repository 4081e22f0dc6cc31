//! Word embeddings and sentence encoding.
//!
//! Sentences enter the model as a 2-D grid built by concatenating the word
//! vectors of k consecutive tokens per row (sliding window). Vectors come
//! from a whitespace-separated text file, or are derived per token from a
//! seed when no file is given.

use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::{fnv1a64, Rng};
use crate::tensor::Tensor;

/// Embeddings loaded from a text file: token -> row of a V x d matrix.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    vocab: HashMap<String, usize>,
    vectors: Vec<f64>, // V rows of length dim
    dim: usize,
    unk: Vec<f64>,
    /// Tokens that appeared more than once in the file (first occurrence kept).
    pub duplicate_count: usize,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn unk_vector(&self) -> &[f64] {
        &self.unk
    }

    /// Vector for `token`; lowercase fallback is attempted before the
    /// unknown-token vector. Total: never fails.
    pub fn lookup(&self, token: &str) -> &[f64] {
        if let Some(&i) = self.vocab.get(token) {
            return &self.vectors[i * self.dim..(i + 1) * self.dim];
        }
        let lower = token.to_lowercase();
        if let Some(&i) = self.vocab.get(lower.as_str()) {
            return &self.vectors[i * self.dim..(i + 1) * self.dim];
        }
        &self.unk
    }
}

/// Declarative description of where embeddings come from; stored in run
/// configs and checkpoints so evaluation rebuilds the exact table used in
/// training.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EmbeddingSource {
    File(String),
    Hashed { seed: u64 },
}

impl EmbeddingSource {
    pub fn build(&self, dim: usize) -> Result<Embedder> {
        match self {
            EmbeddingSource::File(path) => {
                let table = load_embeddings(Path::new(path))?;
                if table.dim() != dim {
                    return Err(Error::Config(format!(
                        "embedding file {} has dim {}, model expects {}",
                        path,
                        table.dim(),
                        dim
                    )));
                }
                Ok(Embedder::Loaded(table))
            }
            EmbeddingSource::Hashed { seed } => Ok(Embedder::Hashed { dim, seed: *seed }),
        }
    }
}

/// Where word vectors come from.
#[derive(Debug, Clone)]
pub enum Embedder {
    Loaded(EmbeddingTable),
    /// Self-contained mode: each token's vector is drawn uniformly from
    /// [-0.25, 0.25], seeded by (seed, hash(token)) so the mapping is
    /// independent of vocabulary or corpus order.
    Hashed { dim: usize, seed: u64 },
}

impl Embedder {
    pub fn dim(&self) -> usize {
        match self {
            Embedder::Loaded(t) => t.dim,
            Embedder::Hashed { dim, .. } => *dim,
        }
    }

    /// Writes the vector for `token` into `dst` (length = dim).
    pub fn write_vector(&self, token: &str, dst: &mut [f64]) {
        match self {
            Embedder::Loaded(t) => dst.copy_from_slice(t.lookup(token)),
            Embedder::Hashed { dim, seed } => {
                debug_assert_eq!(dst.len(), *dim);
                let mut rng = Rng::seed(*seed, fnv1a64(token.as_bytes()));
                for v in dst.iter_mut() {
                    *v = rng.uniform(-0.25, 0.25);
                }
            }
        }
    }

    pub fn lookup(&self, token: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        self.write_vector(token, &mut v);
        v
    }
}

/// Parses the text embedding format: an optional header line "V d", then one
/// line per word: token followed by d reals, single-space separated. \r\n is
/// tolerated. Duplicate tokens keep the first occurrence.
pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    parse_embeddings(reader)
}

fn parse_embeddings<R: BufRead>(reader: R) -> Result<EmbeddingTable> {
    let mut vocab: HashMap<String, usize> = HashMap::new();
    let mut vectors: Vec<f64> = Vec::new();
    let mut dim = 0usize;
    let mut duplicate_count = 0usize;
    let mut rows = 0usize;

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        // Header detection: a first line of exactly two integers is "V d".
        if rows == 0 && dim == 0 && fields.len() == 2 {
            if let (Ok(_v), Ok(_d)) = (fields[0].parse::<usize>(), fields[1].parse::<usize>()) {
                continue;
            }
        }
        if fields.len() < 2 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected token and vector, got {} fields", fields.len()),
            });
        }
        let token = fields[0];
        let values: std::result::Result<Vec<f64>, _> =
            fields[1..].iter().map(|s| s.parse::<f64>()).collect();
        let values = values.map_err(|e| Error::Parse {
            line: lineno,
            msg: format!("bad float: {e}"),
        })?;
        if dim == 0 {
            dim = values.len();
        } else if values.len() != dim {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected {} vector values, got {}", dim, values.len()),
            });
        }
        if vocab.contains_key(token) {
            duplicate_count += 1;
            continue;
        }
        vocab.insert(token.to_string(), rows);
        vectors.extend_from_slice(&values);
        rows += 1;
    }

    if rows == 0 {
        return Err(Error::EmptyInput("embedding file holds no vectors"));
    }

    // unk = mean of all loaded vectors
    let mut unk = vec![0.0; dim];
    for r in 0..rows {
        for (u, v) in unk.iter_mut().zip(vectors[r * dim..(r + 1) * dim].iter()) {
            *u += v;
        }
    }
    for u in unk.iter_mut() {
        *u /= rows as f64;
    }

    Ok(EmbeddingTable {
        vocab,
        vectors,
        dim,
        unk,
        duplicate_count,
    })
}

/// Lowercases, splits punctuation into standalone tokens, then splits on
/// whitespace. Deterministic.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !current.is_empty() {
                out.push(std::mem::take(&mut current));
            }
        } else if ch.is_alphanumeric() {
            for lc in ch.to_lowercase() {
                current.push(lc);
            }
        } else {
            if !current.is_empty() {
                out.push(std::mem::take(&mut current));
            }
            out.push(ch.to_string());
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

/// The 2-D input grid for one sentence.
#[derive(Debug, Clone)]
pub struct SentenceGrid {
    pub matrix: Tensor, // rows x (k * dim)
    /// Token count before padding/truncation.
    pub source_len: usize,
}

/// Builds the sliding-window grid for `tokens`.
///
/// Tokens are truncated to `max_len`; sentences shorter than the window `k`
/// are right-padded with zero vectors up to `k`. Row i is the concatenation
/// of the vectors of tokens i..i+k; the grid has max(L, k) - k + 1 rows and
/// k*dim columns.
pub fn encode_sentence(
    embedder: &Embedder,
    tokens: &[String],
    k: usize,
    max_len: usize,
) -> SentenceGrid {
    encode_with_min_len(embedder, tokens, k, max_len, k)
}

/// As `encode_sentence`, but zero-pads every sentence to exactly `max_len`
/// tokens so all grids share one shape — the fixed conv/pool stack requires
/// it.
pub fn encode_sentence_fixed(
    embedder: &Embedder,
    tokens: &[String],
    k: usize,
    max_len: usize,
) -> SentenceGrid {
    encode_with_min_len(embedder, tokens, k, max_len, max_len)
}

fn encode_with_min_len(
    embedder: &Embedder,
    tokens: &[String],
    k: usize,
    max_len: usize,
    min_len: usize,
) -> SentenceGrid {
    assert!(k >= 1, "window must be at least 1");
    assert!(max_len >= k, "max_len must be at least the window size");
    let dim = embedder.dim();
    let source_len = tokens.len();
    let kept = source_len.min(max_len);
    let eff_len = kept.max(min_len.min(max_len)).max(k);

    // Token vectors, zero rows past the real tokens.
    let mut vecs = vec![0.0; eff_len * dim];
    for (i, tok) in tokens.iter().take(kept).enumerate() {
        embedder.write_vector(tok, &mut vecs[i * dim..(i + 1) * dim]);
    }

    let rows = eff_len - k + 1;
    let cols = k * dim;
    let mut matrix = Tensor::zeros(&[rows, cols]);
    for r in 0..rows {
        let dst = matrix.row_mut(r);
        for j in 0..k {
            dst[j * dim..(j + 1) * dim].copy_from_slice(&vecs[(r + j) * dim..(r + j + 1) * dim]);
        }
    }
    SentenceGrid { matrix, source_len }
}
