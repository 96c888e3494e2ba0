//! Binary bag-of-words features: a vocabulary built from training tokens and
//! sparse word-presence vectors over it.

use std::collections::HashMap;

/// Ordered set of training words. Index order is first occurrence.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn fit<I, T, S>(token_lists: I) -> Self
    where
        I: IntoIterator<Item = T>,
        T: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = Vocabulary::default();
        for tokens in token_lists {
            for t in tokens {
                vocab.insert(t.as_ref());
            }
        }
        vocab
    }

    /// Rebuilds from a stored word list; fails on a repeated word.
    pub fn from_words(words: Vec<String>) -> Result<Self, String> {
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i as u32).is_some() {
                return Err(format!("duplicate vocabulary word {w:?}"));
            }
        }
        Ok(Vocabulary { words, index })
    }

    fn insert(&mut self, word: &str) {
        if !self.index.contains_key(word) {
            self.index.insert(word.to_owned(), self.words.len() as u32);
            self.words.push(word.to_owned());
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn get(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn word(&self, index: u32) -> Option<&str> {
        self.words.get(index as usize).map(String::as_str)
    }

    /// Out-of-vocabulary tokens are dropped; repeats count once.
    pub fn vectorize<S: AsRef<str>>(&self, tokens: &[S]) -> BowVector {
        let mut present: Vec<u32> = tokens.iter().filter_map(|t| self.get(t.as_ref())).collect();
        present.sort_unstable();
        present.dedup();
        BowVector { present, dimension: self.len() }
    }
}

/// Sparse binary vector: the sorted indices of words present in a name.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BowVector {
    present: Vec<u32>,
    dimension: usize,
}

impl BowVector {
    /// Indices are sorted and deduplicated; panics if any is out of range.
    pub fn new(mut present: Vec<u32>, dimension: usize) -> Self {
        present.sort_unstable();
        present.dedup();
        assert!(
            present.last().is_none_or(|&j| (j as usize) < dimension),
            "feature index out of range"
        );
        BowVector { present, dimension }
    }

    pub fn present(&self) -> &[u32] {
        &self.present
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn contains(&self, feature: u32) -> bool {
        self.present.binary_search(&feature).is_ok()
    }

    pub fn nnz(&self) -> usize {
        self.present.len()
    }
}
