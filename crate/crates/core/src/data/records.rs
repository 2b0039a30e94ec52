use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{BoxXyxy, ImageSize};

/// Which grounding task a record supervises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Anatomical term to anatomical region.
    Anatomy,
    /// Finding phrase to finding region.
    Finding,
}

/// One (image, text, box) supervision triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingRecord {
    pub record_id: String,
    pub image_id: String,
    pub image_path: String,
    pub text: String,
    #[serde(rename = "box")]
    pub bbox: BoxXyxy,
    pub task: Task,
    pub category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub canonical_term: Option<String>,
    /// Anatomy record a synthetic finding was placed in.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub host_record: Option<String>,
}

impl GroundingRecord {
    /// The lexicon key used for synonym augmentation.
    pub fn anatomy_term(&self) -> &str {
        self.canonical_term.as_deref().unwrap_or(&self.category)
    }
}

pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub path: String,
    pub width: u32,
    pub height: u32,
}

impl ImageEntry {
    pub fn size(&self) -> ImageSize {
        ImageSize {
            width: self.width,
            height: self.height,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Imagenome,
    Mscxr,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestHeader {
    provenance: DataSource,
    record_count: usize,
    records_file: String,
    images: BTreeMap<String, ImageEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORDS_FILE: &str = "records.jsonl";

/// A validated set of records plus the images they reference. Image paths
/// are relative to `root`.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<GroundingRecord>,
    pub images: BTreeMap<String, ImageEntry>,
    pub provenance: DataSource,
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn new(
        records: Vec<GroundingRecord>,
        images: BTreeMap<String, ImageEntry>,
        provenance: DataSource,
        root: impl Into<PathBuf>,
    ) -> Result<Self> {
        let m = Self {
            records,
            images,
            provenance,
            root: root.into(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for r in &self.records {
            if !ids.insert(r.record_id.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "duplicate record_id {}",
                    r.record_id
                )));
            }
            let Some(img) = self.images.get(&r.image_id) else {
                return Err(Error::InvalidInput(format!(
                    "record {} references unknown image {}",
                    r.record_id, r.image_id
                )));
            };
            if normalize_whitespace(&r.text).is_empty() {
                return Err(Error::InvalidInput(format!(
                    "record {} has empty text",
                    r.record_id
                )));
            }
            r.bbox.validate()?;
            if !r.bbox.within(img.size()) {
                return Err(Error::InvalidBox(format!(
                    "record {} box {:?} outside its {}x{} image",
                    r.record_id, r.bbox, img.width, img.height
                )));
            }
        }
        Ok(())
    }

    pub fn records_for(&self, task: Task) -> impl Iterator<Item = &GroundingRecord> {
        self.records.iter().filter(move |r| r.task == task)
    }

    pub fn image_path(&self, image_id: &str) -> Option<PathBuf> {
        self.images.get(image_id).map(|e| self.root.join(&e.path))
    }

    /// Records whose id is in `ids`, in manifest order.
    pub fn subset<'a>(
        &'a self,
        ids: &'a BTreeSet<String>,
    ) -> impl Iterator<Item = &'a GroundingRecord> {
        self.records
            .iter()
            .filter(move |r| ids.contains(&r.record_id))
    }

    /// A copy holding only the records that pass `keep` and the images they use.
    pub fn filtered(&self, keep: impl Fn(&GroundingRecord) -> bool) -> Self {
        let records: Vec<GroundingRecord> =
            self.records.iter().filter(|r| keep(r)).cloned().collect();
        let used: BTreeSet<&str> = records.iter().map(|r| r.image_id.as_str()).collect();
        let images = self
            .images
            .iter()
            .filter(|(id, _)| used.contains(id.as_str()))
            .map(|(id, e)| (id.clone(), e.clone()))
            .collect();
        Self {
            records,
            images,
            provenance: self.provenance,
            root: self.root.clone(),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let header = ManifestHeader {
            provenance: self.provenance,
            record_count: self.records.len(),
            records_file: RECORDS_FILE.to_string(),
            images: self.images.clone(),
        };
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&header)?)?;
        let mut out = BufWriter::new(fs::File::create(dir.join(RECORDS_FILE))?);
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let header: ManifestHeader = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
        let reader = BufReader::new(fs::File::open(dir.join(&header.records_file))?);
        let mut records = Vec::with_capacity(header.record_count);
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                field: "record".into(),
                message: e.to_string(),
            })?;
            records.push(r);
        }
        if records.len() != header.record_count {
            return Err(Error::InvalidInput(format!(
                "manifest declares {} records, found {}",
                header.record_count,
                records.len()
            )));
        }
        Self::new(records, header.images, header.provenance, dir)
    }

    /// Hash over records and image table; independent of `root`.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for r in &self.records {
            h.update(serde_json::to_vec(r).expect("records serialize"));
            h.update(b"\n");
        }
        h.update(serde_json::to_vec(&self.images).expect("images serialize"));
        hex::encode(h.finalize())
    }
}
