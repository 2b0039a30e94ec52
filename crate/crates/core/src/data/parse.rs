//! Parsers for the line-delimited scene-graph and phrase-box schemas.
//!
//! Every input region or phrase either becomes a [`GroundingRecord`] or bumps
//! exactly one named rejection counter, so `records + rejected == seen`.

use std::collections::BTreeMap;

use serde::Deserialize;
use tracing::warn;

use super::records::{normalize_whitespace, GroundingRecord, ImageEntry, Task};
use super::vocabulary::{is_anatomy_structure, is_pathology};
use crate::error::{Error, Result};
use crate::geometry::{BoxXyxy, ImageSize};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParseOutcome {
    pub records: Vec<GroundingRecord>,
    pub images: BTreeMap<String, ImageEntry>,
    pub rejected: BTreeMap<String, usize>,
    /// Regions (scene graphs) or phrases (phrase-box files) examined.
    pub seen: usize,
}

impl ParseOutcome {
    fn reject(&mut self, reason: &str) {
        *self.rejected.entry(reason.to_string()).or_default() += 1;
    }

    pub fn rejected_total(&self) -> usize {
        self.rejected.values().sum()
    }

    pub fn reconciles(&self) -> bool {
        self.records.len() + self.rejected_total() == self.seen
    }
}

fn default_path(image_id: &str) -> String {
    format!("images/{image_id}.png")
}

fn parse_line<'a, T: Deserialize<'a>>(line: &'a str, lineno: usize) -> Result<T> {
    serde_json::from_str(line).map_err(|e| {
        // serde quotes the offending field name in backticks when it knows it
        let msg = e.to_string();
        let field = msg.split('`').nth(1).unwrap_or("document").to_string();
        Error::Parse {
            line: lineno,
            field,
            message: msg,
        }
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneGraphLine {
    image_id: String,
    view: String,
    width: u32,
    height: u32,
    #[serde(default)]
    path: Option<String>,
    regions: Vec<SceneRegion>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneRegion {
    name: String,
    bbox: [f64; 4],
}

/// Parses scene-graph lines into anatomy records for frontal images.
pub fn parse_imagenome(document: &str) -> Result<ParseOutcome> {
    let mut out = ParseOutcome::default();
    for (i, line) in document.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let g: SceneGraphLine = parse_line(line, i + 1)?;
        let size = ImageSize::new(g.width, g.height).map_err(|e| Error::Parse {
            line: i + 1,
            field: "width/height".into(),
            message: e.to_string(),
        })?;
        out.seen += g.regions.len();
        if !g.view.eq_ignore_ascii_case("frontal") {
            for _ in &g.regions {
                out.reject("non_frontal_view");
            }
            continue;
        }
        let path = g.path.clone().unwrap_or_else(|| default_path(&g.image_id));
        let mut emitted = std::collections::BTreeSet::new();
        for region in g.regions {
            let name = normalize_whitespace(&region.name.to_lowercase());
            if !is_anatomy_structure(&name) {
                out.reject("unknown_structure");
                continue;
            }
            if !emitted.insert(name.clone()) {
                out.reject("duplicate_structure");
                continue;
            }
            let [x1, y1, x2, y2] = region.bbox;
            let bbox = match BoxXyxy::new(x1, y1, x2, y2) {
                Ok(b) if b.within(size) => b,
                Ok(_) => {
                    out.reject("box_outside_image");
                    continue;
                }
                Err(_) => {
                    out.reject("degenerate_box");
                    continue;
                }
            };
            out.records.push(GroundingRecord {
                record_id: format!("{}/{}", g.image_id, name),
                image_id: g.image_id.clone(),
                image_path: path.clone(),
                text: name.clone(),
                bbox,
                task: Task::Anatomy,
                category: name.clone(),
                canonical_term: Some(name),
                host_record: None,
            });
        }
        out.images.insert(
            g.image_id,
            ImageEntry {
                path,
                width: g.width,
                height: g.height,
            },
        );
    }
    if out.rejected.get("unknown_structure").copied().unwrap_or(0) > 0 {
        warn!(
            count = out.rejected["unknown_structure"],
            "skipped regions outside the anatomy vocabulary"
        );
    }
    Ok(out)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PhraseBoxLine {
    image_id: String,
    width: u32,
    height: u32,
    #[serde(default)]
    path: Option<String>,
    phrase: String,
    category: String,
    bbox_xywh: [f64; 4],
}

/// Parses phrase-box lines into finding records, converting `(x, y, w, h)`
/// boxes to corner form.
pub fn parse_mscxr(document: &str) -> Result<ParseOutcome> {
    let mut out = ParseOutcome::default();
    let mut per_image: BTreeMap<String, usize> = BTreeMap::new();
    for (i, line) in document.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let p: PhraseBoxLine = parse_line(line, i + 1)?;
        let size = ImageSize::new(p.width, p.height).map_err(|e| Error::Parse {
            line: i + 1,
            field: "width/height".into(),
            message: e.to_string(),
        })?;
        out.seen += 1;
        let category = normalize_whitespace(&p.category.to_lowercase());
        if !is_pathology(&category) {
            out.reject("unknown_category");
            continue;
        }
        let text = normalize_whitespace(&p.phrase);
        if text.is_empty() {
            out.reject("empty_phrase");
            continue;
        }
        let [x, y, w, h] = p.bbox_xywh;
        let bbox = match BoxXyxy::from_xywh(x, y, w, h) {
            Ok(b) if b.within(size) => b,
            Ok(_) => {
                out.reject("box_outside_image");
                continue;
            }
            Err(_) => {
                out.reject("degenerate_box");
                continue;
            }
        };
        let n = per_image.entry(p.image_id.clone()).or_default();
        let path = p.path.clone().unwrap_or_else(|| default_path(&p.image_id));
        out.records.push(GroundingRecord {
            record_id: format!("{}/{}", p.image_id, n),
            image_id: p.image_id.clone(),
            image_path: path.clone(),
            text,
            bbox,
            task: Task::Finding,
            category,
            canonical_term: None,
            host_record: None,
        });
        *n += 1;
        out.images.insert(
            p.image_id,
            ImageEntry {
                path,
                width: p.width,
                height: p.height,
            },
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_structure() {
        let doc = r#"{"image_id":"img1","view":"frontal","width":512,"height":512,"regions":[{"name":"left lung base","bbox":[10,300,200,480]}]}"#;
        let out = parse_imagenome(doc).unwrap();
        assert_eq!(out.records.len(), 1);
        let r = &out.records[0];
        assert_eq!(r.task, Task::Anatomy);
        assert_eq!(r.category, "left lung base");
        assert_eq!(r.bbox.to_array(), [10., 300., 200., 480.]);
        assert!(out.reconciles());
    }

    #[test]
    fn lateral_views_are_skipped() {
        let doc = r#"{"image_id":"img1","view":"lateral","width":512,"height":512,"regions":[{"name":"left lung base","bbox":[10,300,200,480]}]}"#;
        let out = parse_imagenome(doc).unwrap();
        assert!(out.records.is_empty());
        assert_eq!(out.rejected["non_frontal_view"], 1);
        assert!(out.reconciles());
    }

    #[test]
    fn counters_reconcile() {
        let doc = concat!(
            r#"{"image_id":"a","view":"frontal","width":100,"height":100,"regions":["#,
            r#"{"name":"trachea","bbox":[40,0,60,40]},"#,
            r#"{"name":"left elbow","bbox":[0,0,10,10]},"#,
            r#"{"name":"spine","bbox":[40,0,60,140]},"#,
            r#"{"name":"carina","bbox":[40,40,40,50]}]}"#,
            "\n\n",
            r#"{"image_id":"b","view":"frontal","width":100,"height":100,"regions":[{"name":"Trachea","bbox":[40,0,60,40]},{"name":"trachea","bbox":[40,0,60,40]}]}"#
        );
        let out = parse_imagenome(doc).unwrap();
        assert_eq!(out.seen, 6);
        assert_eq!(out.records.len(), 2);
        assert_eq!(out.rejected["unknown_structure"], 1);
        assert_eq!(out.rejected["box_outside_image"], 1);
        assert_eq!(out.rejected["degenerate_box"], 1);
        assert_eq!(out.rejected["duplicate_structure"], 1);
        assert!(out.reconciles());
    }

    #[test]
    fn malformed_line_reports_context() {
        let doc = "\n{\"image_id\":\"a\",\"width\":1,\"height\":1,\"regions\":[]}";
        match parse_imagenome(doc) {
            Err(Error::Parse { line, field, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(field, "view");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn phrase_box_conversion() {
        let doc = r#"{"image_id":"p1","width":512,"height":512,"phrase":"Large right-sided pneumothorax","category":"pneumothorax","bbox_xywh":[20,30,100,150]}"#;
        let out = parse_mscxr(doc).unwrap();
        assert_eq!(out.records.len(), 1);
        let r = &out.records[0];
        assert_eq!(r.bbox.to_array(), [20., 30., 120., 180.]);
        assert_eq!(r.category, "pneumothorax");
        assert_eq!(r.task, Task::Finding);
        assert_eq!(r.text, "Large right-sided pneumothorax");
    }

    #[test]
    fn phrase_box_rejections() {
        let doc = [
            r#"{"image_id":"p1","width":100,"height":100,"phrase":"x","category":"pneumothorax","bbox_xywh":[20,30,0,10]}"#,
            r#"{"image_id":"p1","width":100,"height":100,"phrase":"x","category":"fracture","bbox_xywh":[20,30,5,10]}"#,
            r#"{"image_id":"p1","width":100,"height":100,"phrase":"x","category":"edema","bbox_xywh":[90,30,50,10]}"#,
        ]
        .join("\n");
        let out = parse_mscxr(&doc).unwrap();
        assert!(out.records.is_empty());
        assert_eq!(out.rejected["degenerate_box"], 1);
        assert_eq!(out.rejected["unknown_category"], 1);
        assert_eq!(out.rejected["box_outside_image"], 1);
        assert!(out.reconciles());
    }
}
