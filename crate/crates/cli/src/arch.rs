use serde::{Deserialize, Serialize};

use anatground_core::model::{ModelConfig, Vocab};

/// Architecture settings read by `init`. The vocabulary is built from data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub image_size: u32,
    pub patch_grid: u32,
    pub embed_dim: usize,
    pub fusion_layers: usize,
    pub fusion_heads: usize,
    pub text_layers: usize,
    pub max_text_len: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        let d = ModelConfig::new(Vocab::build([]));
        Self {
            image_size: d.image_size,
            patch_grid: d.patch_grid,
            embed_dim: d.embed_dim,
            fusion_layers: d.fusion_layers,
            fusion_heads: d.fusion_heads,
            text_layers: d.text_layers,
            max_text_len: d.max_text_len,
        }
    }
}

impl ArchConfig {
    pub fn model_config(&self, vocab: Vocab, seed: u64) -> anatground_core::Result<ModelConfig> {
        let mut c = ModelConfig::new(vocab);
        c.image_size = self.image_size;
        c.patch_grid = self.patch_grid;
        c.embed_dim = self.embed_dim;
        c.fusion_layers = self.fusion_layers;
        c.fusion_heads = self.fusion_heads;
        c.text_layers = self.text_layers;
        c.max_text_len = self.max_text_len;
        c.init_seed = seed;
        c.validate()?;
        Ok(c)
    }
}
