use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};

use anatground_core::config_file::from_toml_str;
use anatground_core::data::split::DEFAULT_RATIOS;
use anatground_core::data::{
    generate_synthetic_corpus, split_dataset, DatasetManifest, GrayImage, Partition, SplitSpec,
    SynonymLexicon, SynthConfig, Task,
};
use anatground_core::eval::metrics::{read_samples, write_samples};
use anatground_core::eval::{
    evaluate, render_report, significance_paired, EvalReport, Layout, PermutationConfig,
};
use anatground_core::model::{Checkpoint, Vocab};
use anatground_core::training::{
    finetune as run_finetune, output_path, pretrain_anatomical_with, PretrainOptions, StageConfig,
    StageKind,
};

use crate::arch::ArchConfig;
use crate::draw::outline;
use crate::{
    CompareArgs, EvalArgs, FinetuneArgs, GroundArgs, InitArgs, PartitionArg, PretrainArgs,
    ServeArgs, SynthArgs, TaskArg,
};

pub const REPORT_FILE: &str = "report.json";
pub const SAMPLES_FILE: &str = "samples.jsonl";
pub const SPLIT_FILE: &str = "split.json";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const RESOLVED_CONFIG_FILE: &str = "config.toml";

fn lexicon(path: Option<&Path>) -> Result<SynonymLexicon> {
    match path {
        Some(p) => {
            SynonymLexicon::load(p).with_context(|| format!("reading lexicon {}", p.display()))
        }
        None => Ok(SynonymLexicon::builtin()),
    }
}

fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    DatasetManifest::load(dir).with_context(|| format!("loading dataset from {}", dir.display()))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn read_split(path: &Path) -> Result<SplitSpec> {
    let bytes = fs::read(path).with_context(|| format!("reading split {}", path.display()))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Reads a stage config; a file without `stage` gets the subcommand's.
fn stage_config(path: Option<&Path>, kind: StageKind, seed: Option<u64>) -> Result<StageConfig> {
    let mut cfg = match path {
        None => StageConfig::defaults_for(kind),
        Some(p) => {
            let text =
                fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            let mut table: toml::Table = text
                .parse()
                .with_context(|| format!("parsing {}", p.display()))?;
            table
                .entry("stage")
                .or_insert_with(|| toml::Value::try_from(kind).expect("stage serializes"));
            StageConfig::from_toml(&toml::to_string(&table)?)
                .with_context(|| format!("config {}", p.display()))?
        }
    };
    if cfg.stage != kind {
        bail!(
            "config is for stage {:?}, this command runs {kind:?}",
            cfg.stage
        );
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let cfg: SynthConfig = match &a.config {
        Some(p) => from_toml_str(&fs::read_to_string(p)?)
            .with_context(|| format!("config {}", p.display()))?,
        None => SynthConfig::default(),
    };
    let lex = lexicon(a.lexicon.as_deref())?;
    let m = generate_synthetic_corpus(&cfg, &lex, a.seed, &a.out)?;
    m.save(&a.out)?;
    println!(
        "{} images, {} records -> {}",
        m.images.len(),
        m.records.len(),
        a.out.display()
    );
    Ok(())
}

/// Vocabulary over the dataset text plus every lexicon variant.
pub fn build_vocab(m: &DatasetManifest, lex: &SynonymLexicon) -> Vocab {
    let variants: Vec<String> = lex
        .canonical_terms()
        .flat_map(|t| lex.variants(t).unwrap_or_default().to_vec())
        .collect();
    Vocab::build(
        m.records
            .iter()
            .map(|r| r.text.as_str())
            .chain(variants.iter().map(String::as_str)),
    )
}

pub fn init(a: InitArgs) -> Result<()> {
    let arch: ArchConfig = match &a.config {
        Some(p) => from_toml_str(&fs::read_to_string(p)?)
            .with_context(|| format!("config {}", p.display()))?,
        None => ArchConfig::default(),
    };
    let m = load_manifest(&a.data.data)?;
    let lex = lexicon(a.lexicon.as_deref())?;
    let ck = Checkpoint::general(arch.model_config(build_vocab(&m, &lex), a.seed)?)?;
    fs::create_dir_all(&a.out)?;
    let path = output_path(&a.out, &ck);
    ck.save(&path)?;
    println!("{}", path.display());
    Ok(())
}

pub fn pretrain(a: PretrainArgs) -> Result<()> {
    let cfg = stage_config(a.config.as_deref(), StageKind::AnatomicalPretrain, a.seed)?;
    let m = load_manifest(&a.data.data)?;
    let m = match &a.split {
        Some(p) => {
            let split = read_split(p)?;
            let imgs: BTreeSet<&str> = m
                .records
                .iter()
                .filter(|r| split.train.contains(&r.record_id))
                .map(|r| r.image_id.as_str())
                .collect();
            m.filtered(|r| imgs.contains(r.image_id.as_str()))
        }
        None => m,
    };
    let lex = lexicon(a.lexicon.as_deref())?;
    let input = load_checkpoint(&a.checkpoint)?;
    fs::create_dir_all(&a.out)?;
    let opts = PretrainOptions {
        resume: a.resume.as_deref().map(load_checkpoint).transpose()?,
        checkpoint_dir: Some(a.out.clone()),
    };
    let out = pretrain_anatomical_with(&input, &m, &lex, &cfg, &opts)?;
    let path = output_path(&a.out, &out.checkpoint);
    out.checkpoint.save(&path)?;
    out.log.write_jsonl(&a.out.join(LOG_FILE))?;
    fs::write(a.out.join(RESOLVED_CONFIG_FILE), cfg.to_toml())?;
    if let Some(mon) = out.monitor {
        println!(
            "monitor miou {:.4} acc {:.4} (n = {})",
            mon.miou, mon.acc, mon.n
        );
    }
    println!("{}", path.display());
    Ok(())
}

pub fn finetune(a: FinetuneArgs) -> Result<()> {
    let cfg = stage_config(a.config.as_deref(), StageKind::MpgFinetune, a.seed)?;
    let m = load_manifest(&a.data.data)?;
    fs::create_dir_all(&a.out)?;
    let split = match &a.split {
        Some(p) => read_split(p)?,
        None => {
            let s = split_dataset(&m, DEFAULT_RATIOS, cfg.seed)?;
            fs::write(a.out.join(SPLIT_FILE), serde_json::to_vec_pretty(&s)?)?;
            s
        }
    };
    let input = load_checkpoint(&a.checkpoint)?;
    let out = run_finetune(&input, &m, &split, &cfg)?;
    let path = output_path(&a.out, &out.checkpoint);
    out.checkpoint.save(&path)?;
    out.log.write_jsonl(&a.out.join(LOG_FILE))?;
    fs::write(a.out.join(RESOLVED_CONFIG_FILE), cfg.to_toml())?;
    println!(
        "best epoch {} val miou {:.4} acc {:.4}",
        out.best_epoch, out.best_val.miou, out.best_val.acc
    );
    println!("{}", path.display());
    Ok(())
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let m = load_manifest(&a.data.data)?;
    let ck = load_checkpoint(&a.checkpoint)?;
    let task = match a.task {
        TaskArg::Anatomy => Task::Anatomy,
        TaskArg::Finding => Task::Finding,
    };
    let (ids, split_id) = match &a.split {
        Some(p) => {
            let s = read_split(p)?;
            let part = match a.partition {
                PartitionArg::Train => Partition::Train,
                PartitionArg::Val => Partition::Val,
                PartitionArg::Test => Partition::Test,
            };
            (
                s.partition(part).clone(),
                format!("{}:{part:?}", s.id()).to_lowercase(),
            )
        }
        None => (
            m.records.iter().map(|r| r.record_id.clone()).collect(),
            "all".to_string(),
        ),
    };
    let model_id = a
        .model_id
        .clone()
        .unwrap_or_else(|| file_stem(&a.checkpoint));
    let out = evaluate(&ck, &m, &ids, task, &model_id, &split_id)?;
    fs::create_dir_all(&a.out)?;
    out.report.save(&a.out.join(REPORT_FILE))?;
    write_samples(&a.out.join(SAMPLES_FILE), &out.samples)?;
    println!(
        "{model_id}: miou {:.4} acc {:.4} (n = {})",
        out.report.overall.miou, out.report.overall.acc, out.report.overall.n
    );
    Ok(())
}

pub fn compare(a: CompareArgs) -> Result<()> {
    let layout: Layout = a.layout.parse()?;
    let cfg = PermutationConfig {
        permutations: a.permutations,
        seed: a.seed,
    };
    let mut runs = Vec::new();
    for dir in &a.evals {
        let report = EvalReport::load(&dir.join(REPORT_FILE))
            .with_context(|| format!("report in {}", dir.display()))?;
        let samples = read_samples(&dir.join(SAMPLES_FILE))
            .with_context(|| format!("samples in {}", dir.display()))?;
        runs.push((report, samples));
    }
    match layout {
        Layout::Table1 | Layout::Table2 => {
            let (base, rest) = runs.split_first_mut().expect("at least one run");
            for (report, samples) in rest {
                let p = significance_paired(samples, &base.1, cfg)
                    .with_context(|| format!("{} vs {}", report.model_id, base.0.model_id))?;
                report.significance.insert(base.0.model_id.clone(), p);
            }
        }
        Layout::Table3 => {
            if runs.len() % 2 != 0 {
                bail!(
                    "table3 needs (with, without) pairs, got {} runs",
                    runs.len()
                );
            }
            for pair in runs.chunks_mut(2) {
                let (with, without) = pair.split_at_mut(1);
                let p = significance_paired(&with[0].1, &without[0].1, cfg)?;
                with[0]
                    .0
                    .significance
                    .insert(without[0].0.model_id.clone(), p);
            }
        }
    }
    let reports: Vec<EvalReport> = runs.into_iter().map(|(r, _)| r).collect();
    let rendered = render_report(&reports, layout)?;
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("table.csv"), &rendered.csv)?;
    fs::write(a.out.join("table.txt"), &rendered.text)?;
    for r in &reports {
        r.save(&a.out.join(format!("{}.report.json", r.model_id)))?;
    }
    print!("{}", rendered.text);
    Ok(())
}

pub fn ground(a: GroundArgs) -> Result<()> {
    if a.text.trim().is_empty() {
        bail!("text must not be empty");
    }
    let bytes = fs::read(&a.image).with_context(|| format!("reading {}", a.image.display()))?;
    let b = match (&a.server, &a.checkpoint) {
        (Some(url), _) => {
            let client = anatground_client::Client::new(url.clone());
            let model_id = a.model_id.as_deref().expect("clap requires model_id");
            let rt = tokio::runtime::Builder::new_current_thread()
                .enable_all()
                .build()?;
            rt.block_on(client.ground(&bytes, &a.text, model_id))?
                .box_xyxy
        }
        (None, Some(path)) => {
            let ck = load_checkpoint(path)?;
            let img = GrayImage::decode(&bytes)
                .with_context(|| format!("decoding {}", a.image.display()))?;
            ck.model.ground(&img, &a.text)?.box_xyxy()
        }
        (None, None) => bail!("either --checkpoint or --server is required"),
    };
    println!("{} {} {} {}", b[0], b[1], b[2], b[3]);
    if let Some(out) = &a.draw {
        let mut img = image::load_from_memory(&bytes)?.to_luma8();
        outline(&mut img, b, 255);
        img.save_with_format(out, image::ImageFormat::Png)
            .with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

pub fn serve(a: ServeArgs) -> Result<()> {
    if !a.model_ids.is_empty() && a.model_ids.len() != a.checkpoints.len() {
        bail!(
            "{} model ids for {} checkpoints",
            a.model_ids.len(),
            a.checkpoints.len()
        );
    }
    let ids: Vec<String> = if a.model_ids.is_empty() {
        a.checkpoints.iter().map(|p| file_stem(p)).collect()
    } else {
        a.model_ids.clone()
    };
    let missing: Vec<&PathBuf> = a.checkpoints.iter().filter(|p| !p.is_file()).collect();
    if !missing.is_empty() {
        bail!("checkpoint files not found: {missing:?}");
    }
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let registry = anatground_server::Registry::new();
        for (id, path) in ids.iter().zip(&a.checkpoints) {
            registry.load_in_background(id, path.clone()).await?;
        }
        let listener = tokio::net::TcpListener::bind(&a.bind)
            .await
            .with_context(|| format!("binding {}", a.bind))?;
        tracing::info!(addr = %listener.local_addr()?, models = ids.len(), "listening");
        anatground_server::serve(listener, Arc::clone(&registry)).await?;
        Ok(())
    })
}
