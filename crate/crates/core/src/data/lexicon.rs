use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::records::{GroundingRecord, Task};
use crate::error::{Error, Result};

/// Variants per canonical term, including the canonical term itself.
pub const VARIANTS_PER_TERM: usize = 5;

const BUILTIN: &str = include_str!("../../assets/lexicon.json");

/// Canonical anatomical term to its interchangeable phrasings.
///
/// The on-disk form maps each canonical term to its four alternatives; in
/// memory the canonical term is stored first, followed by the alternatives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(
    try_from = "BTreeMap<String, Vec<String>>",
    into = "BTreeMap<String, Vec<String>>"
)]
pub struct SynonymLexicon {
    entries: BTreeMap<String, Vec<String>>,
}

/// Source of alternative phrasings for a canonical term, e.g. an external
/// text model. Implementations must be deterministic for reproducible corpora.
pub trait SynonymGenerator {
    fn alternatives(&self, canonical: &str, count: usize) -> Result<Vec<String>>;
}

impl SynonymLexicon {
    /// The shipped lexicon covering all 29 anatomical structures.
    pub fn builtin() -> Self {
        serde_json::from_str(BUILTIN).expect("builtin lexicon is valid")
    }

    pub fn from_alternatives(map: BTreeMap<String, Vec<String>>) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (canonical, alts) in map {
            let canonical = canonical.trim().to_string();
            if canonical.is_empty() {
                return Err(Error::InvalidInput("empty canonical term".into()));
            }
            if alts.len() != VARIANTS_PER_TERM - 1 {
                return Err(Error::InvalidInput(format!(
                    "'{canonical}' has {} alternatives, expected {}",
                    alts.len(),
                    VARIANTS_PER_TERM - 1
                )));
            }
            let mut variants = vec![canonical.clone()];
            for a in alts {
                let a = a.trim().to_string();
                if a.is_empty() || variants.contains(&a) {
                    return Err(Error::InvalidInput(format!(
                        "'{canonical}' has an empty or repeated variant '{a}'"
                    )));
                }
                variants.push(a);
            }
            entries.insert(canonical, variants);
        }
        Ok(Self { entries })
    }

    pub fn generate<G: SynonymGenerator>(terms: &[&str], generator: &G) -> Result<Self> {
        let mut map = BTreeMap::new();
        for t in terms {
            map.insert(
                t.to_string(),
                generator.alternatives(t, VARIANTS_PER_TERM - 1)?,
            );
        }
        Self::from_alternatives(map)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let map: BTreeMap<String, Vec<String>> = serde_json::from_slice(&std::fs::read(path)?)?;
        Self::from_alternatives(map)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    /// All five variants of `term`, canonical first.
    pub fn variants(&self, term: &str) -> Option<&[String]> {
        self.entries.get(term).map(Vec::as_slice)
    }

    pub fn canonical_terms(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl TryFrom<BTreeMap<String, Vec<String>>> for SynonymLexicon {
    type Error = Error;

    fn try_from(map: BTreeMap<String, Vec<String>>) -> Result<Self> {
        Self::from_alternatives(map)
    }
}

impl From<SynonymLexicon> for BTreeMap<String, Vec<String>> {
    fn from(lex: SynonymLexicon) -> Self {
        lex.entries
            .into_iter()
            .map(|(k, v)| (k, v[1..].to_vec()))
            .collect()
    }
}

impl SynonymGenerator for SynonymLexicon {
    fn alternatives(&self, canonical: &str, count: usize) -> Result<Vec<String>> {
        let v = self
            .variants(canonical)
            .ok_or_else(|| Error::InvalidInput(format!("no variants known for '{canonical}'")))?;
        Ok(v[1..].iter().take(count).cloned().collect())
    }
}

/// Replaces an anatomy record's text with a uniformly drawn variant of its
/// canonical term. Finding records and unknown terms pass through unchanged.
pub fn augment_synonym<R: Rng + ?Sized>(
    record: &GroundingRecord,
    lexicon: &SynonymLexicon,
    rng: &mut R,
) -> GroundingRecord {
    let mut out = record.clone();
    if record.task != Task::Anatomy {
        return out;
    }
    if let Some(variants) = lexicon.variants(record.anatomy_term()) {
        out.text = variants[rng.random_range(0..variants.len())].clone();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::vocabulary::ANATOMY_STRUCTURES;
    use crate::geometry::BoxXyxy;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn anatomy(term: &str) -> GroundingRecord {
        GroundingRecord {
            record_id: "r".into(),
            image_id: "i".into(),
            image_path: "i.png".into(),
            text: term.into(),
            bbox: BoxXyxy::new(10., 300., 200., 480.).unwrap(),
            task: Task::Anatomy,
            category: term.into(),
            canonical_term: Some(term.into()),
            host_record: None,
        }
    }

    #[test]
    fn builtin_covers_every_structure() {
        let lex = SynonymLexicon::builtin();
        assert_eq!(lex.len(), 29);
        for s in ANATOMY_STRUCTURES {
            let v = lex.variants(s).unwrap();
            assert_eq!(v.len(), VARIANTS_PER_TERM);
            assert_eq!(v[0], s);
        }
    }

    #[test]
    fn left_lung_base_variants() {
        let lex = SynonymLexicon::builtin();
        let v = lex.variants("left lung base").unwrap();
        assert_eq!(
            v,
            [
                "left lung base",
                "left basal lung",
                "left lower lung base",
                "base of left lung",
                "left basilar region"
            ]
        );
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rec = anatomy("left lung base");
        for _ in 0..50 {
            let out = augment_synonym(&rec, &lex, &mut rng);
            assert!(v.contains(&out.text));
            assert_eq!(out.bbox, rec.bbox);
            assert_eq!(out.image_id, rec.image_id);
            assert_eq!(out.category, rec.category);
        }
    }

    #[test]
    fn unknown_term_is_identity() {
        let lex = SynonymLexicon::builtin();
        let rec = anatomy("left elbow");
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(augment_synonym(&rec, &lex, &mut rng), rec);
    }

    #[test]
    fn fixed_seed_fixed_sequence() {
        let lex = SynonymLexicon::builtin();
        let rec = anatomy("cardiac silhouette");
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..100)
                .map(|_| augment_synonym(&rec, &lex, &mut rng).text)
                .collect::<Vec<_>>()
        };
        let a = draw(11);
        assert_eq!(a, draw(11));
        assert_ne!(a, draw(12));
        // every variant shows up in 100 uniform draws
        let distinct: std::collections::BTreeSet<_> = a.iter().collect();
        assert_eq!(distinct.len(), VARIANTS_PER_TERM);
    }

    #[test]
    fn rejects_malformed_lexicons() {
        let short = BTreeMap::from([("a".to_string(), vec!["b".to_string()])]);
        assert!(SynonymLexicon::from_alternatives(short).is_err());
        let repeated = BTreeMap::from([(
            "a".to_string(),
            vec!["b".into(), "b".into(), "c".into(), "d".into()],
        )]);
        assert!(SynonymLexicon::from_alternatives(repeated).is_err());
    }

    #[test]
    fn generator_round_trip() {
        let lex = SynonymLexicon::builtin();
        let terms: Vec<&str> = ANATOMY_STRUCTURES.to_vec();
        assert_eq!(SynonymLexicon::generate(&terms, &lex).unwrap(), lex);
    }
}
