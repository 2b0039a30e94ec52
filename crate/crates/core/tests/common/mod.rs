#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::Path;

use anatground_core::data::{
    generate_synthetic_corpus, split_dataset, DatasetManifest, SplitSpec, SynonymLexicon,
    SynthConfig,
};
use anatground_core::model::{Checkpoint, ModelConfig, Vocab};
use anatground_core::training::StageConfig;

pub fn corpus(dir: &Path, images: usize, seed: u64) -> DatasetManifest {
    let cfg = SynthConfig {
        images,
        width: 64,
        height: 64,
        findings_per_image: 2,
        ..Default::default()
    };
    generate_synthetic_corpus(&cfg, &SynonymLexicon::builtin(), seed, dir).unwrap()
}

/// Vocabulary over the corpus text and every lexicon variant.
pub fn vocab(m: &DatasetManifest) -> Vocab {
    let lex = SynonymLexicon::builtin();
    let variants: Vec<String> = lex
        .canonical_terms()
        .flat_map(|t| lex.variants(t).unwrap().to_vec())
        .collect();
    Vocab::build(
        m.records
            .iter()
            .map(|r| r.text.as_str())
            .chain(variants.iter().map(String::as_str)),
    )
}

pub fn small_model(m: &DatasetManifest) -> Checkpoint {
    let mut cfg = ModelConfig::new(vocab(m));
    cfg.image_size = 64;
    cfg.patch_grid = 4;
    cfg.embed_dim = 32;
    cfg.fusion_heads = 4;
    cfg.max_text_len = 12;
    Checkpoint::general(cfg).unwrap()
}

pub fn split(m: &DatasetManifest) -> SplitSpec {
    split_dataset(m, (0.6, 0.2, 0.2), 5).unwrap()
}

/// The manifest restricted to images of the training partition.
pub fn train_images_only(m: &DatasetManifest, split: &SplitSpec) -> DatasetManifest {
    let imgs: BTreeSet<&str> = m
        .records
        .iter()
        .filter(|r| split.train.contains(&r.record_id))
        .map(|r| r.image_id.as_str())
        .collect();
    m.filtered(|r| imgs.contains(r.image_id.as_str()))
}

pub fn quick_pretrain(steps: u64) -> StageConfig {
    let mut c = StageConfig::pretrain();
    c.batch_size = 4;
    c.regions_per_image = 3;
    c.learning_rate = 1e-3;
    c.max_steps = Some(steps);
    c.epochs = 10;
    c.monitor_fraction = 0.0;
    c
}

pub fn quick_finetune(epochs: usize) -> StageConfig {
    let mut c = StageConfig::finetune();
    c.batch_size = 8;
    c.learning_rate = 1e-3;
    c.epochs = epochs;
    c
}
