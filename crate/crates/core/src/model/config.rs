use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::tokenizer::words;
use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
const PAD: &str = "[pad]";
const UNK: &str = "[unk]";

/// Word-level vocabulary. Ids 0 and 1 are padding and unknown.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: BTreeMap<String, u32>,
}

impl Vocab {
    /// Sorted distinct words of `texts`, after the two special tokens.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let words: BTreeSet<String> = texts.into_iter().flat_map(words).collect();
        let tokens: Vec<String> = [PAD.to_string(), UNK.to_string()]
            .into_iter()
            .chain(words)
            .collect();
        Self::try_from(tokens).expect("built vocab is valid")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK_ID)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[0] != PAD || tokens[1] != UNK {
            return Err(Error::InvalidInput(
                "vocab must start with [pad], [unk]".into(),
            ));
        }
        let mut index = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::InvalidInput(format!("duplicate vocab entry '{t}'")));
            }
        }
        Ok(Self { tokens, index })
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
    /// Weight groups to adapt, e.g. `fusion.attn.q` matches every
    /// `fusion.<layer>.attn.q.weight`.
    pub target_blocks: Vec<String>,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self {
            rank: 8,
            alpha: 16.0,
            target_blocks: vec!["fusion.attn.q".into(), "fusion.attn.v".into()],
        }
    }
}

impl LoraConfig {
    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn with_rank(mut self, rank: usize) -> Self {
        self.rank = rank;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Side of the square letterboxed input.
    pub image_size: u32,
    /// Visual tokens per side.
    pub patch_grid: u32,
    pub embed_dim: usize,
    pub fusion_layers: usize,
    pub fusion_heads: usize,
    pub text_layers: usize,
    pub max_text_len: usize,
    pub vocab: Vocab,
    #[serde(default)]
    pub lora: Option<LoraConfig>,
    /// Seed for weight initialization.
    #[serde(default)]
    pub init_seed: u64,
}

/// Stride of the four-stage convolutional backbone.
pub const BACKBONE_STRIDE: u32 = 16;

impl ModelConfig {
    pub fn new(vocab: Vocab) -> Self {
        Self {
            image_size: 640,
            patch_grid: 20,
            embed_dim: 64,
            fusion_layers: 2,
            fusion_heads: 4,
            text_layers: 1,
            max_text_len: 16,
            vocab,
            lora: None,
            init_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.embed_dim == 0 || self.embed_dim % 4 != 0 {
            problems.push(format!(
                "embed_dim {} must be a positive multiple of 4",
                self.embed_dim
            ));
        }
        if self.fusion_heads == 0 || self.embed_dim % self.fusion_heads.max(1) != 0 {
            problems.push(format!(
                "embed_dim {} must be divisible by fusion_heads {}",
                self.embed_dim, self.fusion_heads
            ));
        }
        let unit = BACKBONE_STRIDE * self.patch_grid;
        if self.patch_grid == 0 || self.image_size == 0 || self.image_size % unit.max(1) != 0 {
            problems.push(format!(
                "image_size {} must be a multiple of {} x patch_grid {}",
                self.image_size, BACKBONE_STRIDE, self.patch_grid
            ));
        }
        if self.fusion_layers == 0 {
            problems.push("fusion_layers must be >= 1".into());
        }
        if self.max_text_len == 0 {
            problems.push("max_text_len must be >= 1".into());
        }
        if self.vocab.is_empty() {
            problems.push("vocab has no words".into());
        }
        if let Some(l) = &self.lora {
            if l.rank == 0 {
                problems.push("lora.rank must be >= 1".into());
            }
            if l.rank >= self.embed_dim {
                problems.push(format!(
                    "lora.rank {} must be below embed_dim {}",
                    l.rank, self.embed_dim
                ));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidInput(problems.join("; ")))
        }
    }

    pub fn visual_tokens(&self) -> usize {
        (self.patch_grid * self.patch_grid) as usize
    }

    /// Fusion sequence: regression token, visual tokens, text tokens.
    pub fn fusion_len(&self) -> usize {
        1 + self.visual_tokens() + self.max_text_len
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.fusion_heads
    }

    /// Output channels of the four backbone stages.
    pub fn backbone_channels(&self) -> [usize; 4] {
        let e = self.embed_dim;
        [e / 4, e / 2, e, e]
    }

    /// Average-pooling factor from the backbone output down to the patch grid.
    pub fn pool_factor(&self) -> usize {
        (self.image_size / BACKBONE_STRIDE / self.patch_grid) as usize
    }
}
