use std::collections::HashMap;

use super::{tokenize, NGramError};

pub type TokenId = u32;

/// Separator inserted between input documents. `tokenize` splits `<` and `>`
/// into their own tokens, so text can never produce it.
pub const DOC_BOUNDARY: &str = "<doc>";

/// Word <-> id bijection; ids are assigned in first-occurrence order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    ids: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Vocabulary::default()
    }

    pub fn intern(&mut self, word: &str) -> TokenId {
        if let Some(&id) = self.ids.get(word) {
            return id;
        }
        let id = self.words.len() as TokenId;
        self.words.push(word.to_string());
        self.ids.insert(word.to_string(), id);
        id
    }

    pub fn id(&self, word: &str) -> Option<TokenId> {
        self.ids.get(word).copied()
    }

    pub fn word(&self, id: TokenId) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
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
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedCorpus {
    tokens: Vec<TokenId>,
    vocab: Vocabulary,
}

impl TokenizedCorpus {
    /// One document per line; blank lines are skipped and a single
    /// [`DOC_BOUNDARY`] token separates consecutive documents.
    pub fn from_text(text: &str) -> Result<Self, NGramError> {
        let mut vocab = Vocabulary::new();
        let mut tokens = Vec::new();
        for line in text.lines() {
            let words = tokenize(line);
            if words.is_empty() {
                continue;
            }
            if !tokens.is_empty() {
                tokens.push(vocab.intern(DOC_BOUNDARY));
            }
            tokens.extend(words.iter().map(|w| vocab.intern(w)));
        }
        if tokens.is_empty() {
            return Err(NGramError::EmptyCorpus);
        }
        Ok(TokenizedCorpus { tokens, vocab })
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn token_count(&self) -> u64 {
        self.tokens.len() as u64
    }

    pub(crate) fn into_parts(self) -> (Vec<TokenId>, Vocabulary) {
        (self.tokens, self.vocab)
    }
}
