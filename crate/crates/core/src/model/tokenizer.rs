use super::config::{ModelConfig, Vocab, PAD_ID};

/// Lowercased words with punctuation treated as whitespace.
pub fn words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenized {
    pub ids: Vec<u32>,
    /// 1 for real tokens, 0 for padding.
    pub mask: Vec<u8>,
}

impl Tokenized {
    pub fn is_all_padding(&self) -> bool {
        self.mask.iter().all(|&m| m == 0)
    }
}

pub fn tokenize_with(text: &str, vocab: &Vocab, max_len: usize) -> Tokenized {
    let mut ids: Vec<u32> = words(text)
        .iter()
        .take(max_len)
        .map(|w| vocab.id(w))
        .collect();
    let mut mask = vec![1u8; ids.len()];
    ids.resize(max_len, PAD_ID);
    mask.resize(max_len, 0);
    Tokenized { ids, mask }
}

pub fn tokenize(text: &str, config: &ModelConfig) -> Tokenized {
    tokenize_with(text, &config.vocab, config.max_text_len)
}
