use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::data::image::GrayImage;
use crate::data::records::DatasetManifest;
use crate::error::{Error, Result};
use crate::geometry::{letterbox, Letterbox};

/// Letterboxed copies of the images a run needs, keyed by image id.
#[derive(Debug, Clone, Default)]
pub struct ImageCache {
    target: u32,
    images: BTreeMap<String, (GrayImage, Letterbox)>,
}

impl ImageCache {
    /// Loads and letterboxes `ids` in parallel. Any missing or unreadable
    /// files are all reported in one error.
    pub fn load<'a>(
        manifest: &DatasetManifest,
        ids: impl IntoIterator<Item = &'a str>,
        target: u32,
    ) -> Result<Self> {
        let mut wanted: Vec<&str> = ids.into_iter().collect();
        wanted.sort_unstable();
        wanted.dedup();
        let mut missing = Vec::new();
        let mut jobs = Vec::with_capacity(wanted.len());
        for id in wanted {
            match (manifest.images.get(id), manifest.image_path(id)) {
                (Some(entry), Some(path)) if path.is_file() => jobs.push((id, entry.size(), path)),
                (_, Some(path)) => missing.push(path.display().to_string()),
                (None, None) => missing.push(format!("{id} (not in manifest)")),
                (Some(_), None) => missing.push(id.to_string()),
            }
        }
        if !missing.is_empty() {
            return Err(Error::MissingImages(missing));
        }
        let loaded: Vec<Result<(String, (GrayImage, Letterbox))>> = jobs
            .into_par_iter()
            .map(|(id, size, path)| {
                let img = GrayImage::open(&path)?;
                if img.size() != size {
                    return Err(Error::InvalidInput(format!(
                        "{}: manifest says {}x{}, file is {}x{}",
                        path.display(),
                        size.width,
                        size.height,
                        img.width,
                        img.height
                    )));
                }
                let lb = letterbox(size, target)?;
                Ok((id.to_string(), (img.letterboxed(&lb)?, lb)))
            })
            .collect();
        let mut images = BTreeMap::new();
        for item in loaded {
            let (id, v) = item?;
            images.insert(id, v);
        }
        Ok(Self { target, images })
    }

    pub fn target(&self) -> u32 {
        self.target
    }

    pub fn get(&self, id: &str) -> Result<&(GrayImage, Letterbox)> {
        self.images
            .get(id)
            .ok_or_else(|| Error::InvalidInput(format!("image {id} was not loaded")))
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}
