//! Tokenization and FNV-1a feature hashing shared by the retriever and generator.

use std::borrow::Borrow;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::Deref;

const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// A lowercase, non-empty, whitespace-free word whose first and last characters
/// are alphanumeric.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Token(String);

impl Token {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl Deref for Token {
    type Target = str;

    fn deref(&self) -> &str {
        &self.0
    }
}

impl Borrow<str> for Token {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl AsRef<str> for Token {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Split on Unicode whitespace, lowercase each character, strip non-alphanumeric
/// characters from both ends, drop what becomes empty.
pub fn tokenize(text: &str) -> Vec<Token> {
    text.split_whitespace()
        .filter_map(|piece| {
            let lowered: String = piece.chars().flat_map(char::to_lowercase).collect();
            let trimmed = lowered.trim_matches(|c: char| !c.is_alphanumeric());
            (!trimmed.is_empty()).then(|| Token(trimmed.to_owned()))
        })
        .collect()
}

/// FNV-1a, 64-bit.
pub fn hash64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET_BASIS, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

pub fn feature_index(bytes: &[u8], dim: usize) -> usize {
    (hash64(bytes) % dim as u64) as usize
}

/// Sparse count vector over `[0, dim)`. Entries are kept sorted by index and
/// every stored count is positive.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseFeatureVector {
    dim: usize,
    entries: Vec<(usize, f64)>,
}

impl SparseFeatureVector {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "feature dimension must be positive");
        Self {
            dim,
            entries: Vec::new(),
        }
    }

    pub fn from_counts(dim: usize, counts: BTreeMap<usize, f64>) -> Self {
        assert!(dim > 0, "feature dimension must be positive");
        let entries = counts
            .into_iter()
            .inspect(|&(i, _)| assert!(i < dim, "feature index {i} out of range {dim}"))
            .filter(|&(_, c)| c > 0.0)
            .collect();
        Self { dim, entries }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, index: usize) -> f64 {
        self.entries
            .binary_search_by_key(&index, |&(i, _)| i)
            .map(|pos| self.entries[pos].1)
            .unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|&(_, c)| c).sum()
    }

    /// Add `count` at `index`.
    pub fn add(&mut self, index: usize, count: f64) {
        assert!(index < self.dim, "feature index {index} out of range {}", self.dim);
        debug_assert!(count > 0.0);
        match self.entries.binary_search_by_key(&index, |&(i, _)| i) {
            Ok(pos) => self.entries[pos].1 += count,
            Err(pos) => self.entries.insert(pos, (index, count)),
        }
    }

    /// Add one at `hash64(key) mod dim`.
    pub fn add_hashed(&mut self, key: &[u8]) {
        self.add(feature_index(key, self.dim), 1.0);
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut dense = vec![0.0; self.dim];
        for &(i, c) in &self.entries {
            dense[i] = c;
        }
        dense
    }
}

/// Hashed bag of words: each token adds one at `hash64(token) mod dim`.
pub fn bow_features<T: AsRef<str>>(tokens: &[T], dim: usize) -> SparseFeatureVector {
    let mut counts = BTreeMap::new();
    for token in tokens {
        *counts
            .entry(feature_index(token.as_ref().as_bytes(), dim))
            .or_insert(0.0) += 1.0;
    }
    SparseFeatureVector::from_counts(dim, counts)
}
