//! Frozen vocabulary codebooks.
//!
//! A [`Codebook`] holds `N` labeled embedding vectors taken from a language
//! model vocabulary (dimension `D`) plus a trainable affine projection
//! `D -> d` into the codec latent space. Quantization compares latent frames
//! against the *projected* entries.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::hash::Hasher;
use std::io::Write;
use std::path::Path;

use fnv::FnvHasher;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

const LCEB_MAGIC: &[u8; 5] = b"LCEB1";
const PDIM_TAG: &[u8; 4] = b"PDIM";

#[derive(Debug, Error)]
pub enum CodebookError {
    #[error("bad magic: expected LCEB1")]
    BadMagic,
    #[error("truncated file: {0}")]
    TruncatedFile(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("word '{0}' missing from tokenizer map")]
    UnknownWord(String),
    #[error("codebook would be empty")]
    EmptyResult,
    #[error("token id {id} out of range for vocabulary of {size}")]
    IndexOutOfRange { id: usize, size: usize },
    #[error("codebook entries are frozen")]
    Frozen,
    #[error("invalid label at position {0}")]
    InvalidLabel(usize),
    #[error("tokenizer map: {0}")]
    TokenizerMap(#[from] serde_json::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CodebookError>;

/// Replaces whitespace with `_` so labels survive whitespace-delimited rendering.
/// The layer separator token `<L>` is escaped for the same reason.
pub fn sanitize_label(raw: &str) -> String {
    let s: String = raw.chars().map(|c| if c.is_whitespace() { '_' } else { c }).collect();
    if s == "<L>" {
        "<L>_".to_string()
    } else {
        s
    }
}

/// Vocabulary embeddings of a language model: `V` labels and a `V x D` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    tokens: Vec<String>,
    vectors: Vec<f64>,
    dim: usize,
}

impl EmbeddingTable {
    pub fn new(tokens: Vec<String>, vectors: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(CodebookError::DimensionMismatch("embedding dim must be positive".into()));
        }
        if vectors.len() != tokens.len() * dim {
            return Err(CodebookError::DimensionMismatch(format!(
                "{} values for {} tokens of dim {dim}",
                vectors.len(),
                tokens.len()
            )));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(CodebookError::DimensionMismatch("non-finite embedding value".into()));
        }
        let tokens: Vec<String> = tokens.iter().map(|t| sanitize_label(t)).collect();
        if let Some(i) = tokens.iter().position(String::is_empty) {
            return Err(CodebookError::InvalidLabel(i));
        }
        Ok(Self { tokens, vectors, dim })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn vectors(&self) -> &[f64] {
        &self.vectors
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// Seeded stand-in for a real vocabulary: syllable-pair labels and
    /// standard-normal vectors.
    pub fn synthetic(vocab: usize, dim: usize, seed: u64) -> Self {
        const ONSETS: [&str; 16] = ["b", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "ch"];
        const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
        let syllable = |i: usize| format!("{}{}", ONSETS[i % 16], VOWELS[(i / 16) % 5]);
        let tokens = (0..vocab).map(|i| format!("{}{}", syllable(i), syllable(i / 80 + 7 * (i % 3)))).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vectors = (0..vocab * dim).map(|_| standard_normal(&mut rng)).collect();
        Self::new(tokens, vectors, dim).expect("synthetic table is well formed")
    }
}

pub(crate) fn standard_normal(rng: &mut impl Rng) -> f64 {
    // Box-Muller; u1 in (0, 1]
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Reads an LCEB1 embedding file.
pub fn load_embedding_table(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    decode_embedding_table(&fs::read(path)?)
}

pub fn decode_embedding_table(bytes: &[u8]) -> Result<EmbeddingTable> {
    let mut r = ByteReader { bytes, pos: 0 };
    let table = read_table(&mut r)?;
    if r.pos != bytes.len() {
        return Err(CodebookError::DimensionMismatch(format!(
            "{} trailing bytes after {} records of dim {}",
            bytes.len() - r.pos,
            table.len(),
            table.dim
        )));
    }
    Ok(table)
}

fn read_table(r: &mut ByteReader) -> Result<EmbeddingTable> {
    if r.take(5, "magic")? != LCEB_MAGIC {
        return Err(CodebookError::BadMagic);
    }
    let vocab = r.u32("vocab size")? as usize;
    let dim = r.u32("dim")? as usize;
    if dim == 0 {
        return Err(CodebookError::DimensionMismatch("embedding dim is zero".into()));
    }
    let mut tokens = Vec::with_capacity(vocab.min(1 << 20));
    let mut vectors = Vec::with_capacity((vocab * dim).min(1 << 24));
    for i in 0..vocab {
        let len = r.u16("label length")? as usize;
        let label = std::str::from_utf8(r.take(len, "label")?).map_err(|_| CodebookError::InvalidLabel(i))?;
        tokens.push(label.to_string());
        for chunk in r.take(dim * 4, "vector")?.chunks_exact(4) {
            vectors.push(f64::from(f32::from_le_bytes(chunk.try_into().unwrap())));
        }
    }
    EmbeddingTable::new(tokens, vectors, dim)
}

pub fn encode_embedding_table(table: &EmbeddingTable) -> Vec<u8> {
    let mut out = Vec::with_capacity(13 + table.len() * (2 + 8 + 4 * table.dim));
    out.extend_from_slice(LCEB_MAGIC);
    out.extend_from_slice(&(table.len() as u32).to_le_bytes());
    out.extend_from_slice(&(table.dim as u32).to_le_bytes());
    for (i, token) in table.tokens.iter().enumerate() {
        out.extend_from_slice(&(token.len() as u16).to_le_bytes());
        out.extend_from_slice(token.as_bytes());
        for &v in table.row(i) {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn save_embedding_table(table: &EmbeddingTable, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_embedding_table(table))?;
    Ok(())
}

/// Codebook file: the embedding-table layout of its labels and entries,
/// then `PDIM` and the u32 dimension the entries are projected to.
/// Entries are stored as f32, so build books from f32 data (or reload them)
/// before hashing.
pub fn encode_codebook(book: &Codebook, projected_dim: usize) -> Vec<u8> {
    let table = EmbeddingTable { tokens: book.labels.clone(), vectors: book.entries.clone(), dim: book.entry_dim };
    let mut out = encode_embedding_table(&table);
    out.extend_from_slice(PDIM_TAG);
    out.extend_from_slice(&(projected_dim as u32).to_le_bytes());
    out
}

/// Frozen codebook with an identity projection, and its projected dimension.
pub fn decode_codebook(bytes: &[u8]) -> Result<(Codebook, usize)> {
    let mut r = ByteReader { bytes, pos: 0 };
    let table = read_table(&mut r)?;
    if r.take(4, "projected-dim tag")? != PDIM_TAG {
        return Err(CodebookError::TruncatedFile("missing projected-dim tag".into()));
    }
    let projected = r.u32("projected dim")? as usize;
    if r.pos != bytes.len() || projected == 0 {
        return Err(CodebookError::DimensionMismatch("malformed codebook trailer".into()));
    }
    Ok((Codebook::new(table.tokens, table.vectors, table.dim)?, projected))
}

pub fn save_codebook(book: &Codebook, projected_dim: usize, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_codebook(book, projected_dim))?;
    Ok(())
}

pub fn load_codebook(path: impl AsRef<Path>) -> Result<(Codebook, usize)> {
    decode_codebook(&fs::read(path)?)
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| CodebookError::TruncatedFile(format!("{what} at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }
}

/// Precomputed word -> sub-word id sequences.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TokenizerMap(BTreeMap<String, Vec<usize>>);

impl TokenizerMap {
    pub fn new(map: BTreeMap<String, Vec<usize>>) -> Self {
        Self(map)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(Self(serde_json::from_str(text)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.0).expect("string map serializes")
    }

    pub fn get(&self, word: &str) -> Option<&[usize]> {
        self.0.get(word).map(Vec::as_slice)
    }

    pub fn insert(&mut self, word: impl Into<String>, ids: Vec<usize>) {
        self.0.insert(word.into(), ids);
    }

    pub fn validate(&self, vocab: usize) -> Result<()> {
        for ids in self.0.values() {
            if let Some(&id) = ids.iter().find(|&&id| id >= vocab) {
                return Err(CodebookError::IndexOutOfRange { id, size: vocab });
            }
        }
        Ok(())
    }
}

/// Word list: one word per line, blank lines ignored.
pub fn load_word_list(path: impl AsRef<Path>) -> Result<Vec<String>> {
    Ok(fs::read_to_string(path)?.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect())
}

/// Affine map `D -> d`: `weight` is `d x D` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Projection {
    pub fn identity(dim: usize) -> Self {
        let mut weight = vec![0.0; dim * dim];
        (0..dim).for_each(|i| weight[i * dim + i] = 1.0);
        Self { weight, bias: vec![0.0; dim], in_dim: dim, out_dim: dim }
    }

    /// Weight uniform in `+-1/sqrt(in_dim)`, zero bias.
    pub fn random(in_dim: usize, out_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = (0..in_dim * out_dim).map(|_| rng.gen_range(-bound..bound)).collect();
        Self { weight, bias: vec![0.0; out_dim], in_dim, out_dim }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weight
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(w, b)| b + w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildReport {
    pub kept: usize,
    pub excluded: Vec<String>,
    pub duplicates: usize,
}

/// Labeled fixed entries plus a trainable projection.
#[derive(Debug, Clone)]
pub struct Codebook {
    labels: Vec<String>,
    entries: Vec<f64>,
    entry_dim: usize,
    projection: Projection,
    frozen: bool,
    projected: Vec<f64>,
    lookup: HashMap<String, usize>,
}

impl Codebook {
    /// Frozen codebook with an identity projection.
    pub fn new(labels: Vec<String>, entries: Vec<f64>, entry_dim: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(CodebookError::EmptyResult);
        }
        if entry_dim == 0 || entries.len() != labels.len() * entry_dim {
            return Err(CodebookError::DimensionMismatch(format!(
                "{} values for {} entries of dim {entry_dim}",
                entries.len(),
                labels.len()
            )));
        }
        let mut lookup = HashMap::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            if l.is_empty() || l.chars().any(char::is_whitespace) {
                return Err(CodebookError::InvalidLabel(i));
            }
            lookup.entry(l.clone()).or_insert(i);
        }
        let mut book = Self {
            labels,
            entries,
            entry_dim,
            projection: Projection::identity(entry_dim),
            frozen: true,
            projected: Vec::new(),
            lookup,
        };
        book.refresh();
        Ok(book)
    }

    pub fn with_projection(mut self, projection: Projection) -> Result<Self> {
        self.set_projection(projection)?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> Option<&str> {
        self.labels.get(i).map(String::as_str)
    }

    /// Lowest index carrying `label`.
    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.lookup.get(label).copied()
    }

    pub fn entry_dim(&self) -> usize {
        self.entry_dim
    }

    /// Output dimension of the projection (the latent dim `d`).
    pub fn dim(&self) -> usize {
        self.projection.out_dim
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn entry(&self, i: usize) -> &[f64] {
        &self.entries[i * self.entry_dim..(i + 1) * self.entry_dim]
    }

    pub fn projection(&self) -> &Projection {
        &self.projection
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    /// Projected entries, `N x d` row-major.
    pub fn projected(&self) -> &[f64] {
        &self.projected
    }

    pub fn projected_entry(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.projected[i * d..(i + 1) * d]
    }

    pub fn set_projection(&mut self, projection: Projection) -> Result<()> {
        if projection.in_dim != self.entry_dim
            || projection.weight.len() != projection.in_dim * projection.out_dim
            || projection.bias.len() != projection.out_dim
        {
            return Err(CodebookError::DimensionMismatch(format!(
                "projection {}->{} for entries of dim {}",
                projection.in_dim, projection.out_dim, self.entry_dim
            )));
        }
        self.projection = projection;
        self.refresh();
        Ok(())
    }

    /// Replaces the entry matrix; refused while frozen.
    pub fn set_entries(&mut self, entries: Vec<f64>) -> Result<()> {
        if self.frozen {
            return Err(CodebookError::Frozen);
        }
        if entries.len() != self.entries.len() {
            return Err(CodebookError::DimensionMismatch("entry matrix shape changed".into()));
        }
        self.entries = entries;
        self.refresh();
        Ok(())
    }

    fn refresh(&mut self) {
        self.projected = self.entries.chunks_exact(self.entry_dim).flat_map(|e| self.projection.apply(e)).collect();
    }

    /// Nearest projected entry by squared Euclidean distance, lowest index on ties.
    pub fn nearest(&self, query: &[f64]) -> Result<(usize, f64)> {
        self.check_query(query)?;
        Ok(self.nearest_pruned(query))
    }

    /// Plain scan over every entry.
    pub fn nearest_exhaustive(&self, query: &[f64]) -> Result<(usize, f64)> {
        self.check_query(query)?;
        let mut best = (0, f64::INFINITY);
        for (i, e) in self.projected.chunks_exact(query.len()).enumerate() {
            let d: f64 = e.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.1 {
                best = (i, d);
            }
        }
        Ok(best)
    }

    /// Partial-distance scan: abandons an entry once its running sum reaches
    /// the best distance so far. Running sums are the same left-to-right
    /// prefix sums the full scan computes, so the result is identical.
    fn nearest_pruned(&self, query: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        'entries: for (i, e) in self.projected.chunks_exact(query.len()).enumerate() {
            let mut d = 0.0;
            for (a, b) in e.iter().zip(query) {
                d += (a - b) * (a - b);
                if d >= best.1 {
                    continue 'entries;
                }
            }
            best = (i, d);
        }
        best
    }

    fn check_query(&self, query: &[f64]) -> Result<()> {
        if query.len() != self.dim() {
            return Err(CodebookError::DimensionMismatch(format!(
                "query dim {} vs codebook dim {}",
                query.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// FNV-1a over the raw entry bits.
    pub fn entry_hash(&self) -> u64 {
        let mut h = FnvHasher::default();
        for v in &self.entries {
            h.write(&v.to_bits().to_le_bytes());
        }
        h.finish()
    }

    /// FNV-1a over labels, entries and projection.
    pub fn digest(&self) -> u64 {
        let mut h = FnvHasher::default();
        for l in &self.labels {
            h.write(l.as_bytes());
            h.write(&[0]);
        }
        for v in self.entries.iter().chain(&self.projection.weight).chain(&self.projection.bias) {
            h.write(&v.to_bits().to_le_bytes());
        }
        h.finish()
    }
}

/// Codebook over words that tokenize into one or two sub-words; a two-piece
/// word gets the element-wise mean of its pieces. Longer words are excluded
/// and repeated labels keep their first occurrence.
pub fn build_word_codebook(
    words: &[String],
    tok: &TokenizerMap,
    table: &EmbeddingTable,
) -> Result<(Codebook, BuildReport)> {
    let dim = table.dim();
    let mut labels = Vec::new();
    let mut entries = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut excluded = Vec::new();
    let mut duplicates = 0;
    for word in words {
        let ids = tok.get(word).ok_or_else(|| CodebookError::UnknownWord(word.clone()))?;
        if let Some(&id) = ids.iter().find(|&&id| id >= table.len()) {
            return Err(CodebookError::IndexOutOfRange { id, size: table.len() });
        }
        let vector: Vec<f64> = match ids {
            [a] => table.row(*a).to_vec(),
            [a, b] => table.row(*a).iter().zip(table.row(*b)).map(|(x, y)| (x + y) / 2.0).collect(),
            _ => {
                excluded.push(word.clone());
                continue;
            }
        };
        let label = sanitize_label(word);
        if label.is_empty() {
            excluded.push(word.clone());
            continue;
        }
        if !seen.insert(label.clone()) {
            duplicates += 1;
            continue;
        }
        labels.push(label);
        entries.extend(vector);
    }
    if labels.is_empty() {
        return Err(CodebookError::EmptyResult);
    }
    let kept = labels.len();
    Ok((Codebook::new(labels, entries, dim)?, BuildReport { kept, excluded, duplicates }))
}

/// The full vocabulary as a codebook, labels and entries verbatim.
pub fn build_subword_codebook(table: &EmbeddingTable) -> Result<Codebook> {
    if table.is_empty() {
        return Err(CodebookError::EmptyResult);
    }
    Codebook::new(table.tokens.clone(), table.vectors.clone(), table.dim)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageStats {
    pub counts: Vec<usize>,
    pub distinct_used: usize,
}

pub fn usage_stats<'a>(indices: impl IntoIterator<Item = &'a [usize]>, size: usize) -> Result<UsageStats> {
    let mut counts = vec![0; size];
    for seq in indices {
        for &i in seq {
            *counts.get_mut(i).ok_or(CodebookError::IndexOutOfRange { id: i, size })? += 1;
        }
    }
    let distinct_used = counts.iter().filter(|&&c| c > 0).count();
    Ok(UsageStats { counts, distinct_used })
}

/// Synthetic word list and tokenizer map over a synthetic table: words made of
/// one, two or three sub-words in rotation.
pub fn synthetic_words(table: &EmbeddingTable, count: usize, seed: u64) -> (Vec<String>, TokenizerMap) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tok = TokenizerMap::default();
    let mut words = Vec::with_capacity(count);
    for i in 0..count {
        let pieces = 1 + i % 3;
        let ids: Vec<usize> = (0..pieces).map(|_| rng.gen_range(0..table.len())).collect();
        let word = ids.iter().map(|&id| table.tokens()[id].as_str()).collect::<Vec<_>>().join("");
        let word = format!("{word}{i}");
        tok.insert(word.clone(), ids);
        words.push(word);
    }
    (words, tok)
}
