//! Stage 1: anatomical grounding pre-training.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;

use super::cache::ImageCache;
use super::config::{StageConfig, StageKind};
use super::log::{LogEntry, TrainLog};
use super::optim::{AdamW, AdamWConfig};
use super::step::{stream_rng, train_step, Query, Stream};
use crate::data::lexicon::SynonymLexicon;
use crate::data::records::{DatasetManifest, GroundingRecord, Task};
use crate::data::sampler::{build_pretrain_batches_from, BatchShape};
use crate::error::{Error, Result};
use crate::eval::metrics::{score_records, Metrics};
use crate::model::checkpoint::{Checkpoint, EpochRecord, ResumePoint, RunRecord, Stage};
use crate::model::lora::is_lora_param;
use crate::model::network::AdapterState;

/// Records scored at each monitoring point, at most.
pub const MONITOR_RECORDS: usize = 256;

#[derive(Debug, Clone, Default)]
pub struct PretrainOptions {
    /// Continue an interrupted run from this mid-run checkpoint.
    pub resume: Option<Checkpoint>,
    /// Where mid-run checkpoints go when `checkpoint_every` is set.
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
    /// Last monitoring result, if monitoring ran.
    pub monitor: Option<Metrics>,
}

/// Parameters that train in stage 1: everything, or only the adapters and
/// box head when adapters are in use.
pub fn pretrain_trainable(use_lora: bool) -> impl Fn(&str) -> bool {
    move |name: &str| !use_lora || is_lora_param(name) || name.starts_with("head.")
}

/// Image ids held out for monitoring, chosen from the sorted anatomy images.
pub fn monitor_images(manifest: &DatasetManifest, cfg: &StageConfig) -> BTreeSet<String> {
    let mut ids: Vec<&str> = manifest
        .records_for(Task::Anatomy)
        .map(|r| r.image_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if cfg.monitor_fraction <= 0.0 || ids.len() < 2 {
        return BTreeSet::new();
    }
    ids.shuffle(&mut stream_rng(cfg.seed, Stream::Monitor, 0, 0));
    let k = ((ids.len() as f64 * cfg.monitor_fraction).ceil() as usize).clamp(1, ids.len() - 1);
    ids[..k].iter().map(|s| s.to_string()).collect()
}

pub fn pretrain_anatomical(
    input: &Checkpoint,
    manifest: &DatasetManifest,
    lexicon: &SynonymLexicon,
    cfg: &StageConfig,
) -> Result<PretrainOutcome> {
    pretrain_anatomical_with(input, manifest, lexicon, cfg, &PretrainOptions::default())
}

pub fn pretrain_anatomical_with(
    input: &Checkpoint,
    manifest: &DatasetManifest,
    lexicon: &SynonymLexicon,
    cfg: &StageConfig,
    opts: &PretrainOptions,
) -> Result<PretrainOutcome> {
    let started = Instant::now();
    cfg.validate()?;
    if cfg.stage != StageKind::AnatomicalPretrain {
        return Err(Error::InvalidInput(
            "pre-training needs an anatomical_pretrain config".into(),
        ));
    }
    if input.stage != Stage::General || input.provenance.in_progress.is_some() {
        return Err(Error::Stage(format!(
            "pre-training starts from a finished general checkpoint, got {}",
            input.stage
        )));
    }
    Stage::General.check_advance(Stage::Anatomical)?;

    let data_hash = manifest.content_hash();
    let config_hash = cfg.hash();
    let held_out = monitor_images(manifest, cfg);
    let train_images: BTreeSet<&str> = manifest
        .records_for(Task::Anatomy)
        .map(|r| r.image_id.as_str())
        .filter(|id| !held_out.contains(*id))
        .collect();
    if train_images.is_empty() {
        return Err(Error::EmptyData(
            "no anatomy records to pre-train on".into(),
        ));
    }
    let shape = BatchShape {
        images_per_batch: cfg.batch_size,
        regions_per_image: cfg.regions_per_image,
    };
    let steps_per_epoch = (train_images.len() / shape.images_per_batch) as u64;
    if steps_per_epoch == 0 {
        return Err(Error::EmptyData(format!(
            "{} training images cannot fill one batch of {}",
            train_images.len(),
            shape.images_per_batch
        )));
    }
    let total_steps = cfg
        .max_steps
        .unwrap_or(u64::MAX)
        .min(steps_per_epoch * cfg.epochs as u64);
    let eval_every = cfg.eval_every.unwrap_or((steps_per_epoch / 4).max(1));

    // Model, optimizer and position: fresh or resumed.
    let (mut ck, mut opt, start) = match &opts.resume {
        None => {
            let mut ck = input.clone();
            if cfg.use_lora {
                ck.model.attach_lora(cfg.lora.clone(), cfg.seed)?;
            }
            let opt = AdamW::new(adamw_config(cfg));
            (ck, opt, (1usize, 0u64, 0u64))
        }
        Some(partial) => {
            let point = partial.provenance.in_progress.as_ref().ok_or_else(|| {
                Error::Checkpoint("resume checkpoint has no saved position".into())
            })?;
            if point.run.config_hash != config_hash || point.run.data_hash != data_hash {
                return Err(Error::Mismatch(
                    "resume checkpoint was written with another config or dataset".into(),
                ));
            }
            let state = partial.optimizer.as_ref().ok_or_else(|| {
                Error::Checkpoint("resume checkpoint has no optimizer state".into())
            })?;
            let opt = AdamW::from_state(state, partial.model.dtype())?;
            let mut ck = partial.clone();
            ck.optimizer = None;
            (
                ck,
                opt,
                (point.epoch, point.step_in_epoch, point.global_step),
            )
        }
    };
    if cfg.use_lora && !matches!(ck.model.adapter, AdapterState::Attached { .. }) {
        return Err(Error::Adapter(
            "use_lora is set but no adapter is attached".into(),
        ));
    }
    let trainable = pretrain_trainable(cfg.use_lora);

    let mut needed: BTreeSet<&str> = train_images.clone();
    needed.extend(held_out.iter().map(String::as_str));
    let cache = ImageCache::load(manifest, needed, ck.model.config.image_size)?;
    let monitor_records: Vec<&GroundingRecord> = manifest
        .records_for(Task::Anatomy)
        .filter(|r| held_out.contains(&r.image_id))
        .take(MONITOR_RECORDS)
        .collect();

    let mut log = TrainLog::default();
    log.push(LogEntry::Start {
        stage: "anatomical_pretrain".into(),
        seed: cfg.seed,
        config_hash: config_hash.clone(),
        data_hash: data_hash.clone(),
        trainable_params: ck
            .model
            .params
            .iter()
            .filter(|(n, _)| trainable(n))
            .map(|(_, v)| v.elem_count())
            .sum(),
        steps_per_epoch,
    });

    let mut run = RunRecord {
        stage: Stage::Anatomical,
        seed: cfg.seed,
        data_hash: data_hash.clone(),
        split_id: None,
        learning_rate: cfg.learning_rate,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        steps: start.2,
        use_lora: cfg.use_lora,
        config_hash: config_hash.clone(),
        history: Vec::new(),
        best_epoch: None,
    };
    if let Some(p) = opts
        .resume
        .as_ref()
        .and_then(|c| c.provenance.in_progress.as_ref())
    {
        run.history = p.run.history.clone();
    }

    let lex = cfg.synonyms.then_some(lexicon);
    let mut global = start.2;
    let mut monitor = None;
    'epochs: for epoch in start.0..=cfg.epochs {
        let batches = build_pretrain_batches_from(
            manifest.records_for(Task::Anatomy),
            Some(train_images.iter()),
            lex,
            shape,
            stream_rng(cfg.seed, Stream::Batches, epoch, 0),
        )?;
        let skip = if epoch == start.0 { start.1 } else { 0 };
        let (mut loss_sum, mut loss_n) = (0.0, 0u64);
        for (i, batch) in batches.enumerate() {
            let step_in_epoch = i as u64 + 1;
            if step_in_epoch <= skip {
                continue;
            }
            if global >= total_steps {
                break 'epochs;
            }
            let queries: Vec<Query> = batch
                .pairs
                .iter()
                .map(|p| Query {
                    image_id: &p.image_id,
                    text: &p.text,
                    bbox: p.bbox,
                })
                .collect();
            let mut rng = stream_rng(cfg.seed, Stream::Augment, epoch, step_in_epoch);
            let (loss, stats) = train_step(
                &ck.model,
                &mut opt,
                &cache,
                &queries,
                &cfg.augment,
                &mut rng,
                cfg.giou_weight,
                &trainable,
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
            if !monitor_records.is_empty() && step_in_epoch % eval_every == 0 {
                let m = Metrics::from_samples(&score_records(&ck.model, &monitor_records, &cache)?);
                log.push(LogEntry::Monitor {
                    epoch,
                    step: global,
                    miou: m.miou,
                    acc: m.acc,
                    n: m.n,
                });
                monitor = Some(m);
            }
            if let (Some(every), Some(dir)) = (cfg.checkpoint_every, &opts.checkpoint_dir) {
                if global % every == 0 && global < total_steps {
                    let mut partial = ck.clone();
                    partial.stage = Stage::Anatomical;
                    let mut r = run.clone();
                    r.steps = global;
                    partial.provenance.in_progress = Some(ResumePoint {
                        epoch,
                        step_in_epoch,
                        global_step: global,
                        run: r,
                    });
                    partial.optimizer = Some(opt.state()?);
                    let path = dir.join(format!("anatomical-partial-{global}.ckpt"));
                    partial.save(&path)?;
                    log.push(LogEntry::Checkpoint {
                        epoch,
                        step: global,
                        path: path.display().to_string(),
                    });
                }
            }
        }
        if !monitor_records.is_empty() {
            let m = Metrics::from_samples(&score_records(&ck.model, &monitor_records, &cache)?);
            log.push(LogEntry::Monitor {
                epoch,
                step: global,
                miou: m.miou,
                acc: m.acc,
                n: m.n,
            });
            monitor = Some(m);
        }
        run.history.push(EpochRecord {
            epoch,
            steps: global,
            train_loss: if loss_n > 0 {
                loss_sum / loss_n as f64
            } else {
                f64::NAN
            },
            val_miou: monitor.map(|m| m.miou),
            val_acc: monitor.map(|m| m.acc),
        });
    }

    run.steps = global;
    ck.stage = Stage::Anatomical;
    ck.provenance.in_progress = None;
    ck.provenance.runs.push(run);
    ck.optimizer = None;
    log.push(LogEntry::Finish {
        steps: global,
        best_epoch: None,
        wall_clock_s: started.elapsed().as_secs_f64(),
    });
    Ok(PretrainOutcome {
        checkpoint: ck,
        log,
        monitor,
    })
}

pub(crate) fn adamw_config(cfg: &StageConfig) -> AdamWConfig {
    AdamWConfig {
        learning_rate: cfg.learning_rate,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: cfg.adam_eps,
        weight_decay: cfg.weight_decay,
        grad_clip: cfg.grad_clip,
    }
}

/// File name for a finished stage checkpoint inside `dir`.
pub fn output_path(dir: &Path, ck: &Checkpoint) -> PathBuf {
    let run = ck.provenance.runs.last();
    let (epoch, miou) = match run {
        Some(r) => {
            let e = r.best_epoch.unwrap_or(r.history.len());
            let m = r
                .history
                .iter()
                .find(|h| h.epoch == e)
                .and_then(|h| h.val_miou);
            (e, m)
        }
        None => (0, None),
    };
    dir.join(Checkpoint::file_name(ck.stage, epoch, miou))
}
