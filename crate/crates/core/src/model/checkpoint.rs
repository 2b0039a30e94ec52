//! Checkpoint archives.
//!
//! A checkpoint is an uncompressed tar with fixed entry order and zeroed
//! metadata so identical contents always produce identical bytes:
//!
//! - `config.json`: stage, model config and adapter state
//! - `provenance.json`: training history
//! - `index.json`: weight name → shape, dtype, byte offset and length
//! - `weights.bin`: little-endian f32 arrays back to back
//! - `optimizer.json` / `optimizer.bin` (optional): optimizer moments, same layout

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Cursor, Read};
use std::path::Path;
use std::str::FromStr;

use candle_core::DType;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::network::{AdapterState, GroundingModel};
use super::params::{Array, ParamStore};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    General,
    Anatomical,
    Finetuned,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::General => "general",
            Stage::Anatomical => "anatomical",
            Stage::Finetuned => "finetuned",
        }
    }

    /// Allowed moves: general → anatomical → finetuned, or general → finetuned.
    pub fn can_advance_to(self, next: Stage) -> bool {
        matches!(
            (self, next),
            (Stage::General, Stage::Anatomical)
                | (Stage::General, Stage::Finetuned)
                | (Stage::Anatomical, Stage::Finetuned)
        )
    }

    pub fn check_advance(self, next: Stage) -> Result<()> {
        if self.can_advance_to(next) {
            Ok(())
        } else {
            Err(Error::Stage(format!("cannot go from {self} to {next}")))
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "general" => Ok(Stage::General),
            "anatomical" => Ok(Stage::Anatomical),
            "finetuned" => Ok(Stage::Finetuned),
            other => Err(Error::InvalidInput(format!("unknown stage '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: u64,
    pub train_loss: f64,
    pub val_miou: Option<f64>,
    pub val_acc: Option<f64>,
}

/// One training run that produced (or led to) this checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub stage: Stage,
    pub seed: u64,
    pub data_hash: String,
    #[serde(default)]
    pub split_id: Option<String>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub steps: u64,
    pub use_lora: bool,
    pub config_hash: String,
    pub history: Vec<EpochRecord>,
    #[serde(default)]
    pub best_epoch: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Seed used to initialize the general-stage weights.
    pub init_seed: u64,
    /// Completed runs, oldest first.
    pub runs: Vec<RunRecord>,
    /// Set on checkpoints written in the middle of a run.
    #[serde(default)]
    pub in_progress: Option<ResumePoint>,
}

/// Where an interrupted run stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResumePoint {
    /// 1-based epoch in progress.
    pub epoch: usize,
    /// Batches of that epoch already applied.
    pub step_in_epoch: u64,
    pub global_step: u64,
    pub run: RunRecord,
}

impl Provenance {
    pub fn total_steps(&self) -> u64 {
        self.runs.iter().map(|r| r.steps).sum()
    }
}

/// Adaptive-moment optimizer state keyed by parameter name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    /// Opaque settings the optimizer wants back on resume.
    pub settings: serde_json::Value,
    #[serde(skip)]
    pub first: BTreeMap<String, Array>,
    #[serde(skip)]
    pub second: BTreeMap<String, Array>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    stage: Stage,
    adapter: AdapterState,
    model: ModelConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub stage: Stage,
    pub model: GroundingModel,
    pub provenance: Provenance,
    pub optimizer: Option<OptimizerState>,
}

fn pack(arrays: &BTreeMap<String, Array>) -> (Vec<IndexEntry>, Vec<u8>) {
    let mut index = Vec::with_capacity(arrays.len());
    let mut bytes = Vec::new();
    for (name, a) in arrays {
        let offset = bytes.len();
        for v in &a.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        index.push(IndexEntry {
            name: name.clone(),
            shape: a.shape.clone(),
            dtype: "f32".into(),
            offset,
            len: bytes.len() - offset,
        });
    }
    (index, bytes)
}

fn unpack(index: &[IndexEntry], bytes: &[u8]) -> Result<BTreeMap<String, Array>> {
    let mut out = BTreeMap::new();
    for e in index {
        if e.dtype != "f32" {
            return Err(Error::Checkpoint(format!(
                "{}: unsupported dtype {}",
                e.name, e.dtype
            )));
        }
        let count: usize = e.shape.iter().product();
        if e.len != count * 4 || e.offset + e.len > bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{}: index entry does not fit the data (offset {}, len {}, shape {:?})",
                e.name, e.offset, e.len, e.shape
            )));
        }
        let data = bytes[e.offset..e.offset + e.len]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if out
            .insert(
                e.name.clone(),
                Array {
                    shape: e.shape.clone(),
                    data,
                },
            )
            .is_some()
        {
            return Err(Error::Checkpoint(format!("duplicate weight {}", e.name)));
        }
    }
    Ok(out)
}

fn append(builder: &mut tar::Builder<Vec<u8>>, name: &str, data: &[u8]) -> Result<()> {
    let mut header = tar::Header::new_gnu();
    header.set_size(data.len() as u64);
    header.set_mode(0o644);
    header.set_mtime(0);
    header.set_uid(0);
    header.set_gid(0);
    header.set_entry_type(tar::EntryType::Regular);
    builder.append_data(&mut header, name, data)?;
    Ok(())
}

impl Checkpoint {
    pub fn new(stage: Stage, model: GroundingModel, provenance: Provenance) -> Self {
        Self {
            stage,
            model,
            provenance,
            optimizer: None,
        }
    }

    /// A freshly initialized general-stage checkpoint.
    pub fn general(config: ModelConfig) -> Result<Self> {
        let seed = config.init_seed;
        let model = GroundingModel::init(config, DType::F32)?;
        Ok(Self::new(
            Stage::General,
            model,
            Provenance {
                init_seed: seed,
                runs: Vec::new(),
                in_progress: None,
            },
        ))
    }

    pub fn weights_hash(&self) -> Result<String> {
        self.model.params.hash()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            format_version: FORMAT_VERSION,
            stage: self.stage,
            adapter: self.model.adapter.clone(),
            model: self.model.config.clone(),
        };
        let (index, weights) = pack(&self.model.params.to_arrays()?);
        let mut builder = tar::Builder::new(Vec::new());
        builder.mode(tar::HeaderMode::Deterministic);
        append(
            &mut builder,
            "config.json",
            &serde_json::to_vec_pretty(&header)?,
        )?;
        append(
            &mut builder,
            "provenance.json",
            &serde_json::to_vec_pretty(&self.provenance)?,
        )?;
        append(
            &mut builder,
            "index.json",
            &serde_json::to_vec_pretty(&index)?,
        )?;
        append(&mut builder, "weights.bin", &weights)?;
        if let Some(opt) = &self.optimizer {
            let mut arrays = BTreeMap::new();
            for (k, v) in &opt.first {
                arrays.insert(format!("m/{k}"), v.clone());
            }
            for (k, v) in &opt.second {
                arrays.insert(format!("v/{k}"), v.clone());
            }
            let (opt_index, opt_bytes) = pack(&arrays);
            let doc = serde_json::json!({ "state": opt, "index": opt_index });
            append(
                &mut builder,
                "optimizer.json",
                &serde_json::to_vec_pretty(&doc)?,
            )?;
            append(&mut builder, "optimizer.bin", &opt_bytes)?;
        }
        Ok(builder.into_inner()?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut entries: BTreeMap<String, Vec<u8>> = BTreeMap::new();
        let mut archive = tar::Archive::new(Cursor::new(bytes));
        for entry in archive.entries()? {
            let mut entry = entry?;
            let name = entry.path()?.to_string_lossy().into_owned();
            let mut data = Vec::new();
            entry.read_to_end(&mut data)?;
            entries.insert(name, data);
        }
        let take = |name: &str| -> Result<&Vec<u8>> {
            entries
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("archive has no {name}")))
        };
        let header: Header = serde_json::from_slice(take("config.json")?)?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {}",
                header.format_version
            )));
        }
        let provenance: Provenance = serde_json::from_slice(take("provenance.json")?)?;
        let index: Vec<IndexEntry> = serde_json::from_slice(take("index.json")?)?;
        let arrays = unpack(&index, take("weights.bin")?)?;
        let params = ParamStore::from_arrays(&arrays, DType::F32)?;
        check_adapter_params(&params, &header.adapter)?;
        let model = GroundingModel::from_params(header.model, params, header.adapter)?;

        let optimizer = match (entries.get("optimizer.json"), entries.get("optimizer.bin")) {
            (Some(doc), Some(bin)) => {
                #[derive(Deserialize)]
                struct Doc {
                    state: OptimizerState,
                    index: Vec<IndexEntry>,
                }
                let doc: Doc = serde_json::from_slice(doc)?;
                let mut state = doc.state;
                for (name, a) in unpack(&doc.index, bin)? {
                    if let Some(k) = name.strip_prefix("m/") {
                        state.first.insert(k.to_string(), a);
                    } else if let Some(k) = name.strip_prefix("v/") {
                        state.second.insert(k.to_string(), a);
                    } else {
                        return Err(Error::Checkpoint(format!(
                            "unexpected optimizer entry {name}"
                        )));
                    }
                }
                Some(state)
            }
            (None, None) => None,
            _ => return Err(Error::Checkpoint("optimizer state is incomplete".into())),
        };
        Ok(Self {
            stage: header.stage,
            model,
            provenance,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let tmp = path.with_extension("ckpt.partial");
        std::fs::write(&tmp, self.to_bytes()?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// `<stage>-<epoch>-<valmiou>.ckpt`, with mIoU as a fraction to four places.
    pub fn file_name(stage: Stage, epoch: usize, val_miou: Option<f64>) -> String {
        match val_miou {
            Some(m) => format!("{stage}-{epoch}-{m:.4}.ckpt"),
            None => format!("{stage}-{epoch}-na.ckpt"),
        }
    }
}

fn check_adapter_params(params: &ParamStore, adapter: &AdapterState) -> Result<()> {
    let has_lora = params.names().any(super::lora::is_lora_param);
    match (adapter, has_lora) {
        (AdapterState::Attached { .. }, false) => Err(Error::Checkpoint(
            "adapter marked attached but no adapter weights stored".into(),
        )),
        (AdapterState::None | AdapterState::Merged { .. }, true) => Err(Error::Checkpoint(
            "adapter weights stored without an attached adapter".into(),
        )),
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::{LoraConfig, Vocab};

    fn tiny() -> ModelConfig {
        let mut c = ModelConfig::new(Vocab::build(["left lung base", "right clavicle"]));
        c.image_size = 32;
        c.patch_grid = 2;
        c.embed_dim = 16;
        c.fusion_heads = 2;
        c.fusion_layers = 1;
        c.max_text_len = 6;
        c
    }

    #[test]
    fn stage_machine() {
        use Stage::*;
        assert!(General.can_advance_to(Anatomical));
        assert!(General.can_advance_to(Finetuned));
        assert!(Anatomical.can_advance_to(Finetuned));
        assert!(!Anatomical.can_advance_to(Anatomical));
        assert!(!Finetuned.can_advance_to(Anatomical));
        assert!(!Finetuned.can_advance_to(Finetuned));
        assert!(!Anatomical.can_advance_to(General));
        assert_eq!("anatomical".parse::<Stage>().unwrap(), Anatomical);
    }

    #[test]
    fn bit_exact_round_trip() {
        let mut ck = Checkpoint::general(tiny()).unwrap();
        ck.model
            .attach_lora(LoraConfig::default().with_rank(2), 3)
            .unwrap();
        let mut first = BTreeMap::new();
        first.insert(
            "head.0.bias".to_string(),
            Array {
                shape: vec![2],
                data: vec![0.1, -2.5e-9],
            },
        );
        ck.optimizer = Some(OptimizerState {
            step: 7,
            settings: serde_json::json!({"lr": 1e-4}),
            second: first.clone(),
            first,
        });
        let a = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&a).unwrap();
        let b = back.to_bytes().unwrap();
        assert_eq!(a, b);
        assert_eq!(back.weights_hash().unwrap(), ck.weights_hash().unwrap());
        assert_eq!(back.optimizer, ck.optimizer);
        assert_eq!(back.model.adapter, ck.model.adapter);
    }

    #[test]
    fn file_naming() {
        assert_eq!(
            Checkpoint::file_name(Stage::Finetuned, 12, Some(0.41234)),
            "finetuned-12-0.4123.ckpt"
        );
        assert_eq!(
            Checkpoint::file_name(Stage::Anatomical, 1, None),
            "anatomical-1-na.ckpt"
        );
    }

    #[test]
    fn rejects_shape_mismatch_and_garbage() {
        let ck = Checkpoint::general(tiny()).unwrap();
        let mut cfg = tiny();
        cfg.embed_dim = 32;
        assert!(
            GroundingModel::from_params(cfg, ck.model.params.clone(), AdapterState::None).is_err()
        );
        assert!(Checkpoint::from_bytes(b"not a tar").is_err());
    }
}
