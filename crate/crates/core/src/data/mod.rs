//! Dataset schemas, parsers, synonym augmentation, batch sampling and the
//! synthetic corpus generator.

pub mod augment;
pub mod image;
pub mod lexicon;
pub mod parse;
pub mod records;
pub mod sampler;
pub mod split;
pub mod synth;
pub mod vocabulary;

pub use augment::{pixel_augment, PixelAugment};
pub use image::GrayImage;
pub use lexicon::{augment_synonym, SynonymGenerator, SynonymLexicon};
pub use parse::{parse_imagenome, parse_mscxr, ParseOutcome};
pub use records::{DataSource, DatasetManifest, GroundingRecord, ImageEntry, Task};
pub use sampler::{build_pretrain_batches, BatchShape, PretrainBatch, TextRegionPair};
pub use split::{split_dataset, Partition, SplitSpec};
pub use synth::{generate_synthetic_corpus, SynthConfig};
