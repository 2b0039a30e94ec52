//! Stage 2: finding grounding fine-tuning with per-epoch validation.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::seq::SliceRandom;

use super::cache::ImageCache;
use super::config::{StageConfig, StageKind};
use super::log::{select_best_epoch, LogEntry, TrainLog};
use super::optim::AdamW;
use super::pretrain::adamw_config;
use super::step::{stream_rng, train_step, Query, Stream};
use crate::data::records::{DatasetManifest, GroundingRecord, Task};
use crate::data::split::SplitSpec;
use crate::error::{Error, Result};
use crate::eval::metrics::{score_records, Metrics};
use crate::model::checkpoint::{Checkpoint, EpochRecord, RunRecord, Stage};

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    /// Weights of the best validation epoch.
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
    /// 1-based.
    pub best_epoch: usize,
    pub best_val: Metrics,
}

pub fn finetune(
    input: &Checkpoint,
    manifest: &DatasetManifest,
    split: &SplitSpec,
    cfg: &StageConfig,
) -> Result<FinetuneOutcome> {
    let started = Instant::now();
    cfg.validate()?;
    if cfg.stage != StageKind::MpgFinetune {
        return Err(Error::InvalidInput(
            "fine-tuning needs an mpg_finetune config".into(),
        ));
    }
    if input.provenance.in_progress.is_some() {
        return Err(Error::Stage(
            "cannot fine-tune from an unfinished run".into(),
        ));
    }
    input.stage.check_advance(Stage::Finetuned)?;

    let train: Vec<&GroundingRecord> = findings_in(manifest, &split.train);
    let val: Vec<&GroundingRecord> = findings_in(manifest, &split.val);
    if train.is_empty() {
        return Err(Error::EmptyData(
            "no finding records in the training partition".into(),
        ));
    }
    if val.is_empty() {
        return Err(Error::EmptyData(
            "no finding records in the validation partition".into(),
        ));
    }

    let data_hash = manifest.content_hash();
    let config_hash = cfg.hash();
    let mut ck = input.clone();
    ck.optimizer = None;
    let mut opt = AdamW::new(adamw_config(cfg));
    let ids: BTreeSet<&str> = train
        .iter()
        .chain(&val)
        .map(|r| r.image_id.as_str())
        .collect();
    let cache = ImageCache::load(manifest, ids, ck.model.config.image_size)?;
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size) as u64;
    let total_steps = cfg
        .max_steps
        .unwrap_or(u64::MAX)
        .min(steps_per_epoch * cfg.epochs as u64);

    let mut log = TrainLog::default();
    log.push(LogEntry::Start {
        stage: "mpg_finetune".into(),
        seed: cfg.seed,
        config_hash: config_hash.clone(),
        data_hash: data_hash.clone(),
        trainable_params: ck.model.params.num_elements(),
        steps_per_epoch,
    });

    let mut history = Vec::new();
    let mut val_mious = Vec::new();
    let mut best: Option<(usize, Metrics, crate::model::ParamStore)> = None;
    let mut global = 0u64;
    for epoch in 1..=cfg.epochs {
        if global >= total_steps {
            break;
        }
        let mut order = train.clone();
        order.shuffle(&mut stream_rng(cfg.seed, Stream::Batches, epoch, 0));
        let (mut loss_sum, mut loss_n) = (0.0, 0u64);
        for (i, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if global >= total_steps {
                break;
            }
            let queries: Vec<Query> = chunk
                .iter()
                .map(|r| Query {
                    image_id: &r.image_id,
                    text: &r.text,
                    bbox: r.bbox,
                })
                .collect();
            let mut rng = stream_rng(cfg.seed, Stream::Augment, epoch, i as u64 + 1);
            let (loss, stats) = train_step(
                &ck.model,
                &mut opt,
                &cache,
                &queries,
                &cfg.augment,
                &mut rng,
                cfg.giou_weight,
                |_: &str| true,
            )?;
            global += 1;
            loss_sum += loss;
            loss_n += 1;
            log.push(LogEntry::Step {
                epoch,
                step: global,
                loss,
                grad_norm: stats.grad_norm,
            });
        }
        let m = Metrics::from_samples(&score_records(&ck.model, &val, &cache)?);
        let train_loss = loss_sum / loss_n.max(1) as f64;
        log.push(LogEntry::Validation {
            epoch,
            step: global,
            train_loss,
            miou: m.miou,
            acc: m.acc,
            n: m.n,
        });
        history.push(EpochRecord {
            epoch,
            steps: global,
            train_loss,
            val_miou: Some(m.miou),
            val_acc: Some(m.acc),
        });
        val_mious.push(m.miou);
        // Ties keep the earlier epoch.
        if best.as_ref().is_none_or(|(_, b, _)| m.miou > b.miou) {
            best = Some((epoch, m, ck.model.params.clone()));
        }
    }

    let best_epoch = select_best_epoch(&val_mious)?;
    let (epoch, best_val, params) =
        best.ok_or_else(|| Error::EmptyData("no epoch completed".into()))?;
    debug_assert_eq!(epoch, best_epoch);
    ck.model.params = params;
    ck.stage = Stage::Finetuned;
    ck.provenance.runs.push(RunRecord {
        stage: Stage::Finetuned,
        seed: cfg.seed,
        data_hash,
        split_id: Some(split.id()),
        learning_rate: cfg.learning_rate,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        steps: global,
        use_lora: cfg.use_lora,
        config_hash,
        history,
        best_epoch: Some(best_epoch),
    });
    log.push(LogEntry::Finish {
        steps: global,
        best_epoch: Some(best_epoch),
        wall_clock_s: started.elapsed().as_secs_f64(),
    });
    Ok(FinetuneOutcome {
        checkpoint: ck,
        log,
        best_epoch,
        best_val,
    })
}

fn findings_in<'a>(
    manifest: &'a DatasetManifest,
    ids: &'a BTreeSet<String>,
) -> Vec<&'a GroundingRecord> {
    manifest
        .subset(ids)
        .filter(|r| r.task == Task::Finding)
        .collect()
}
