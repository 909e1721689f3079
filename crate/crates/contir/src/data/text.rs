//! Tokenization and vocabulary.

use std::collections::HashMap;

/// Reserved id for the padding token; its embedding row is all-zero and
/// never trained.
pub const PAD_ID: usize = 0;
/// Reserved id for out-of-vocabulary tokens.
pub const UNK_ID: usize = 1;

/// Lowercase and split on runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Token-to-id map with reserved pad and unknown ids. Lookups never fail;
/// unseen tokens map to [`UNK_ID`].
#[derive(Debug, Clone)]
pub struct Vocabulary {
    ids: HashMap<String, usize>,
    tokens: Vec<String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        Vocabulary {
            ids: HashMap::from([("<pad>".to_string(), PAD_ID), ("<unk>".to_string(), UNK_ID)]),
            tokens: vec!["<pad>".to_string(), "<unk>".to_string()],
        }
    }

    /// Intern a token, returning its id.
    pub fn add(&mut self, token: &str) -> usize {
        if let Some(&id) = self.ids.get(token) {
            return id;
        }
        let id = self.tokens.len();
        self.ids.insert(token.to_string(), id);
        self.tokens.push(token.to_string());
        id
    }

    pub fn lookup(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Tokenize text into ids padded or truncated to `len`, plus the mask
    /// marking real tokens.
    pub fn encode(&self, text: &str, len: usize) -> (Vec<usize>, Vec<f64>) {
        let mut ids: Vec<usize> = tokenize(text)
            .iter()
            .map(|t| self.lookup(t))
            .take(len)
            .collect();
        let real = ids.len();
        ids.resize(len, PAD_ID);
        let mut mask = vec![1.0; real];
        mask.resize(len, 0.0);
        (ids, mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_splits_and_lowercases() {
        assert_eq!(tokenize("Hello, World-42!"), vec!["hello", "world", "42"]);
        assert!(tokenize("   ...   ").is_empty());
    }

    #[test]
    fn unknown_tokens_fall_back() {
        let mut vocab = Vocabulary::new();
        let id = vocab.add("apple");
        assert_eq!(vocab.lookup("apple"), id);
        assert_eq!(vocab.lookup("pear"), UNK_ID);
    }

    #[test]
    fn encode_pads_and_masks() {
        let mut vocab = Vocabulary::new();
        vocab.add("a");
        vocab.add("b");
        let (ids, mask) = vocab.encode("a b", 4);
        assert_eq!(ids, vec![2, 3, PAD_ID, PAD_ID]);
        assert_eq!(mask, vec![1.0, 1.0, 0.0, 0.0]);
    }
}
