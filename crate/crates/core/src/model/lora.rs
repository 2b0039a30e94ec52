//! Low-rank adapters on selected linear layers.

use candle_core::{Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::LoraConfig;
use super::network::{AdapterState, GroundingModel};
use crate::error::{Error, Result};

/// True if the weight `name` belongs to the target group.
///
/// A group such as `fusion.attn.q` covers `fusion.<layer>.attn.q.weight` for
/// every layer; a group naming a single layer (`head.0`) covers just that one.
pub fn group_matches(group: &str, name: &str) -> bool {
    let Some(base) = name.strip_suffix(".weight") else {
        return false;
    };
    if base == group {
        return true;
    }
    let (g_head, g_rest) = group.split_once('.').unwrap_or((group, ""));
    let mut parts = base.splitn(3, '.');
    match (parts.next(), parts.next(), parts.next()) {
        (Some(h), Some(layer), Some(rest)) => {
            h == g_head
                && rest == g_rest
                && !layer.is_empty()
                && layer.bytes().all(|b| b.is_ascii_digit())
        }
        _ => false,
    }
}

/// Base names (without `.weight`) of the linear layers an adapter targets.
pub fn target_layers(model: &GroundingModel, config: &LoraConfig) -> Vec<String> {
    model
        .params
        .names()
        .filter(|n| {
            model.params.get(n).map(|t| t.rank() == 2).unwrap_or(false)
                && config.target_blocks.iter().any(|g| group_matches(g, n))
        })
        .map(|n| n.trim_end_matches(".weight").to_string())
        .collect()
}

pub fn is_lora_param(name: &str) -> bool {
    name.ends_with(".lora_a") || name.ends_with(".lora_b")
}

impl GroundingModel {
    /// Adds zero-initialized low-rank adapters; the model output is unchanged
    /// until they are trained.
    pub fn attach_lora(&mut self, config: LoraConfig, seed: u64) -> Result<()> {
        if self.adapter != AdapterState::None {
            return Err(Error::Adapter(format!(
                "adapter already present ({:?})",
                self.adapter
            )));
        }
        if config.rank == 0 || config.rank >= self.config.embed_dim {
            return Err(Error::Adapter(format!(
                "rank {} must be between 1 and {}",
                config.rank,
                self.config.embed_dim - 1
            )));
        }
        let targets = target_layers(self, &config);
        if targets.is_empty() {
            return Err(Error::Adapter(format!(
                "target blocks {:?} match no linear layer",
                config.target_blocks
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for base in &targets {
            let w = self.params.get(&format!("{base}.weight"))?;
            let (out_dim, in_dim) = w.dims2()?;
            let normal = Normal::new(0.0, 1.0 / (in_dim as f64).sqrt()).expect("positive std");
            let a: Vec<f64> = (0..config.rank * in_dim)
                .map(|_| normal.sample(&mut rng))
                .collect();
            let a =
                Tensor::from_vec(a, (config.rank, in_dim), &Device::Cpu)?.to_dtype(self.dtype())?;
            let b = Tensor::zeros((out_dim, config.rank), self.dtype(), &Device::Cpu)?;
            self.params.insert(&format!("{base}.lora_a"), a)?;
            self.params.insert(&format!("{base}.lora_b"), b)?;
        }
        self.config.lora = Some(config.clone());
        self.adapter = AdapterState::Attached { config };
        Ok(())
    }

    /// Folds the adapters into the base weights: `W += (alpha/rank) B A`.
    pub fn merge_lora(&mut self) -> Result<()> {
        let config = match &self.adapter {
            AdapterState::Attached { config } => config.clone(),
            AdapterState::Merged { .. } => {
                return Err(Error::Adapter("adapter already merged".into()))
            }
            AdapterState::None => return Err(Error::Adapter("no adapter attached".into())),
        };
        let bases: Vec<String> = self
            .params
            .names()
            .filter_map(|n| n.strip_suffix(".lora_a").map(str::to_string))
            .collect();
        for base in bases {
            let a = self.params.get(&format!("{base}.lora_a"))?.clone();
            let b = self.params.get(&format!("{base}.lora_b"))?.clone();
            let w_name = format!("{base}.weight");
            let w = self.params.get(&w_name)?;
            let merged = (w + (b.matmul(&a)? * config.scale())?)?;
            self.params
                .var(&w_name)
                .expect("weight present")
                .set(&merged)?;
            self.params.remove(&format!("{base}.lora_a"));
            self.params.remove(&format!("{base}.lora_b"));
        }
        self.adapter = AdapterState::Merged { config };
        Ok(())
    }
}
