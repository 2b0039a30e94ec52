use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::lexicon::{augment_synonym, SynonymLexicon};
use super::records::{DatasetManifest, GroundingRecord, Task};
use crate::error::{Error, Result};
use crate::geometry::BoxXyxy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchShape {
    pub images_per_batch: usize,
    pub regions_per_image: usize,
}

impl Default for BatchShape {
    fn default() -> Self {
        Self {
            images_per_batch: 8,
            regions_per_image: 5,
        }
    }
}

impl BatchShape {
    pub fn pairs(&self) -> usize {
        self.images_per_batch * self.regions_per_image
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextRegionPair {
    pub image_id: String,
    pub record_id: String,
    pub text: String,
    pub bbox: BoxXyxy,
}

/// `images_per_batch` images with `regions_per_image` anatomy pairs each,
/// grouped by image in `pairs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainBatch {
    pub pairs: Vec<TextRegionPair>,
}

impl PretrainBatch {
    /// Distinct image ids in first-appearance order.
    pub fn image_ids(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for p in &self.pairs {
            if !out.contains(&p.image_id.as_str()) {
                out.push(&p.image_id);
            }
        }
        out
    }
}

/// One epoch of pre-training batches: a single pass over the shuffled
/// images, final partial batch dropped.
pub struct PretrainBatches<'a, R> {
    by_image: Vec<(&'a str, Vec<&'a GroundingRecord>)>,
    cursor: usize,
    shape: BatchShape,
    lexicon: Option<&'a SynonymLexicon>,
    rng: R,
}

pub fn build_pretrain_batches<'a, R: Rng>(
    manifest: &'a DatasetManifest,
    lexicon: Option<&'a SynonymLexicon>,
    shape: BatchShape,
    rng: R,
) -> Result<PretrainBatches<'a, R>> {
    let ids: Option<std::iter::Empty<&str>> = None;
    build_pretrain_batches_from(
        manifest.records_for(Task::Anatomy),
        ids,
        lexicon,
        shape,
        rng,
    )
}

/// As [`build_pretrain_batches`], restricted to the given records and,
/// optionally, to a set of image ids.
pub fn build_pretrain_batches_from<'a, R: Rng, I>(
    records: impl Iterator<Item = &'a GroundingRecord>,
    only_images: Option<I>,
    lexicon: Option<&'a SynonymLexicon>,
    shape: BatchShape,
    mut rng: R,
) -> Result<PretrainBatches<'a, R>>
where
    I: IntoIterator,
    I::Item: AsRef<str>,
{
    if shape.images_per_batch == 0 || shape.regions_per_image == 0 {
        return Err(Error::InvalidInput("batch shape must be positive".into()));
    }
    let keep: Option<std::collections::BTreeSet<String>> =
        only_images.map(|it| it.into_iter().map(|s| s.as_ref().to_string()).collect());
    let mut grouped: BTreeMap<&str, Vec<&GroundingRecord>> = BTreeMap::new();
    for r in records.filter(|r| r.task == Task::Anatomy) {
        if keep.as_ref().is_none_or(|k| k.contains(&r.image_id)) {
            grouped.entry(r.image_id.as_str()).or_default().push(r);
        }
    }
    if grouped.is_empty() {
        return Err(Error::EmptyData(
            "no anatomy records to pre-train on".into(),
        ));
    }
    let mut by_image: Vec<_> = grouped.into_iter().collect();
    by_image.shuffle(&mut rng);
    Ok(PretrainBatches {
        by_image,
        cursor: 0,
        shape,
        lexicon,
        rng,
    })
}

impl<R: Rng> PretrainBatches<'_, R> {
    pub fn remaining(&self) -> usize {
        (self.by_image.len() - self.cursor) / self.shape.images_per_batch
    }
}

impl<R: Rng> Iterator for PretrainBatches<'_, R> {
    type Item = PretrainBatch;

    fn next(&mut self) -> Option<PretrainBatch> {
        let end = self.cursor + self.shape.images_per_batch;
        if end > self.by_image.len() {
            return None;
        }
        let k = self.shape.regions_per_image;
        let mut pairs = Vec::with_capacity(self.shape.pairs());
        for (image_id, regions) in &self.by_image[self.cursor..end] {
            let picks: Vec<usize> = if regions.len() >= k {
                index::sample(&mut self.rng, regions.len(), k).into_vec()
            } else {
                (0..k)
                    .map(|_| self.rng.random_range(0..regions.len()))
                    .collect()
            };
            for i in picks {
                let rec = regions[i];
                let text = match self.lexicon {
                    Some(lex) => augment_synonym(rec, lex, &mut self.rng).text,
                    None => rec.text.clone(),
                };
                pairs.push(TextRegionPair {
                    image_id: image_id.to_string(),
                    record_id: rec.record_id.clone(),
                    text,
                    bbox: rec.bbox,
                });
            }
        }
        self.cursor = end;
        Some(PretrainBatch { pairs })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::records::{DataSource, ImageEntry};
    use crate::data::vocabulary::ANATOMY_STRUCTURES;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn manifest(images: usize, regions: usize) -> DatasetManifest {
        let mut recs = Vec::new();
        let mut imgs = BTreeMap::new();
        for i in 0..images {
            let id = format!("img{i:03}");
            imgs.insert(
                id.clone(),
                ImageEntry {
                    path: format!("{id}.png"),
                    width: 64,
                    height: 64,
                },
            );
            for (j, s) in ANATOMY_STRUCTURES.iter().take(regions).enumerate() {
                recs.push(GroundingRecord {
                    record_id: format!("{id}/{s}"),
                    image_id: id.clone(),
                    image_path: format!("{id}.png"),
                    text: s.to_string(),
                    bbox: BoxXyxy::new(j as f64, 0., j as f64 + 2., 2.).unwrap(),
                    task: Task::Anatomy,
                    category: s.to_string(),
                    canonical_term: Some(s.to_string()),
                    host_record: None,
                });
            }
        }
        DatasetManifest::new(recs, imgs, DataSource::Synthetic, ".").unwrap()
    }

    #[test]
    fn exact_fit_yields_one_batch_of_forty() {
        let m = manifest(8, 7);
        let lex = SynonymLexicon::builtin();
        let batches: Vec<_> = build_pretrain_batches(
            &m,
            Some(&lex),
            BatchShape::default(),
            ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap()
        .collect();
        assert_eq!(batches.len(), 1);
        let b = &batches[0];
        assert_eq!(b.pairs.len(), 40);
        assert_eq!(b.image_ids().len(), 8);
        for id in b.image_ids() {
            let regions: Vec<_> = b.pairs.iter().filter(|p| p.image_id == id).collect();
            assert_eq!(regions.len(), 5);
            let distinct: BTreeSet<_> = regions.iter().map(|p| &p.record_id).collect();
            assert_eq!(distinct.len(), 5, "sampled without replacement");
        }
    }

    #[test]
    fn partial_batch_dropped_and_sparse_images_kept() {
        let m = manifest(19, 3);
        let batches: Vec<_> = build_pretrain_batches(
            &m,
            None,
            BatchShape::default(),
            ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap()
        .collect();
        assert_eq!(batches.len(), 2);
        for b in &batches {
            assert_eq!(b.pairs.len(), 40);
            assert_eq!(b.image_ids().len(), 8);
        }
    }

    #[test]
    fn seeded_batches_repeat() {
        let m = manifest(40, 12);
        let lex = SynonymLexicon::builtin();
        let run = |seed| {
            build_pretrain_batches(
                &m,
                Some(&lex),
                BatchShape::default(),
                ChaCha8Rng::seed_from_u64(seed),
            )
            .unwrap()
            .collect::<Vec<_>>()
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
    }

    #[test]
    fn only_anatomy_records() {
        let m = manifest(0, 0);
        assert!(build_pretrain_batches(
            &m,
            None,
            BatchShape::default(),
            ChaCha8Rng::seed_from_u64(0)
        )
        .is_err());
    }
}
