use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use anatground_client::wire::{ConfigSummary, ModelInfo, ModelStatus};
use anatground_core::model::{AdapterState, Checkpoint};
use tokio::sync::{Mutex, RwLock};

#[derive(Debug, Clone)]
pub enum Slot {
    Loading,
    Ready(Arc<Checkpoint>),
    Failed(String),
}

/// Checkpoints served under their model ids. Loaded weights are shared
/// read-only; loads run one at a time.
#[derive(Debug, Default)]
pub struct Registry {
    slots: RwLock<BTreeMap<String, Slot>>,
    load_lock: Mutex<()>,
}

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("model id '{0}' is already registered")]
    Duplicate(String),
}

impl Registry {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    /// Registers an already loaded checkpoint.
    pub async fn insert(&self, model_id: &str, ck: Checkpoint) -> Result<(), RegistryError> {
        let mut slots = self.slots.write().await;
        if slots.contains_key(model_id) {
            return Err(RegistryError::Duplicate(model_id.into()));
        }
        slots.insert(model_id.into(), Slot::Ready(Arc::new(ck)));
        Ok(())
    }

    /// Marks `model_id` as loading and reads the checkpoint on a blocking
    /// thread. Returns once the slot is ready or failed.
    pub async fn load(
        self: &Arc<Self>,
        model_id: &str,
        path: PathBuf,
    ) -> Result<(), RegistryError> {
        self.reserve(model_id).await?;
        self.finish_load(model_id, path).await;
        Ok(())
    }

    /// Reserves the slot now and loads in the background.
    pub async fn load_in_background(
        self: &Arc<Self>,
        model_id: &str,
        path: PathBuf,
    ) -> Result<(), RegistryError> {
        self.reserve(model_id).await?;
        let this = Arc::clone(self);
        let id = model_id.to_string();
        tokio::spawn(async move { this.finish_load(&id, path).await });
        Ok(())
    }

    /// Marks `model_id` as loading; requests for it get 503 until
    /// [`complete`](Self::complete) is called.
    pub async fn reserve(&self, model_id: &str) -> Result<(), RegistryError> {
        let mut slots = self.slots.write().await;
        if slots.contains_key(model_id) {
            return Err(RegistryError::Duplicate(model_id.into()));
        }
        slots.insert(model_id.into(), Slot::Loading);
        Ok(())
    }

    async fn finish_load(&self, model_id: &str, path: PathBuf) {
        let _serial = self.load_lock.lock().await;
        let shown = path.display().to_string();
        let loaded = tokio::task::spawn_blocking(move || Checkpoint::load(&path)).await;
        let slot = match loaded {
            Ok(Ok(ck)) => {
                tracing::info!(model_id, path = %shown, stage = %ck.stage, "model ready");
                Slot::Ready(Arc::new(ck))
            }
            Ok(Err(e)) => {
                tracing::error!(model_id, path = %shown, error = %e, "model failed to load");
                Slot::Failed(e.to_string())
            }
            Err(e) => Slot::Failed(e.to_string()),
        };
        self.slots.write().await.insert(model_id.into(), slot);
    }

    /// Fills a reserved slot with a loaded checkpoint or a load error.
    pub async fn complete(&self, model_id: &str, loaded: Result<Checkpoint, String>) {
        let slot = match loaded {
            Ok(ck) => Slot::Ready(Arc::new(ck)),
            Err(e) => Slot::Failed(e),
        };
        self.slots.write().await.insert(model_id.into(), slot);
    }

    pub async fn get(&self, model_id: &str) -> Option<Slot> {
        self.slots.read().await.get(model_id).cloned()
    }

    pub async fn list(&self) -> Vec<ModelInfo> {
        self.slots
            .read()
            .await
            .iter()
            .map(|(id, slot)| match slot {
                Slot::Loading => ModelInfo {
                    model_id: id.clone(),
                    stage: None,
                    status: ModelStatus::Loading,
                    config: None,
                },
                Slot::Failed(_) => ModelInfo {
                    model_id: id.clone(),
                    stage: None,
                    status: ModelStatus::Failed,
                    config: None,
                },
                Slot::Ready(ck) => ModelInfo {
                    model_id: id.clone(),
                    stage: Some(ck.stage.to_string()),
                    status: ModelStatus::Ready,
                    config: Some(summary(ck)),
                },
            })
            .collect()
    }
}

fn summary(ck: &Checkpoint) -> ConfigSummary {
    let c = &ck.model.config;
    ConfigSummary {
        image_size: c.image_size,
        patch_grid: c.patch_grid,
        embed_dim: c.embed_dim,
        fusion_layers: c.fusion_layers,
        vocab_size: c.vocab.len(),
        adapter: match ck.model.adapter {
            AdapterState::None => "none",
            AdapterState::Attached { .. } => "attached",
            AdapterState::Merged { .. } => "merged",
        }
        .into(),
    }
}
