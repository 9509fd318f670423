//! Command-line pipeline driver.
//!
//! Each subcommand runs one stage: it reads its inputs from files, writes
//! its outputs to files, and drops a manifest next to them, so any stage
//! can be rerun or resumed from disk alone with no state carried between
//! processes. A single TOML document configures every stage; flags
//! override individual fields for sweeps. Artifact names inside a run
//! directory are fixed, which keeps the manifests' provenance graph
//! connected from a final report back to the world seed.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::config::{load_config, EvalTask, PipelineConfig};
use crate::corpus::{
    generate_monolingual_corpus, generate_parallel_corpus, generate_world, world_vocabulary,
    ParallelSample, SyntheticWorld, Utterance,
};
use crate::error::{Error, Result};
use crate::eval::{cascaded_baseline, eval_s2st, eval_s2t, render_table, rescore, EvalReport};
use crate::jsonl::{read_jsonl, write_jsonl};
use crate::manifest::{load_all, provenance_of, ArtifactRef, RunManifest};
use crate::metrics::MetricKind;
use crate::model::{
    file_sha256, init_model, load_checkpoint, save_checkpoint, ModelCheckpoint,
};
use crate::po::{run_iterations, run_po, IterationConfig, PoAlgorithm};
use crate::prefdata::{build_preference_pairs, load_dataset, save_dataset};
use crate::rng::{derive_seed, tag};
use crate::sft::{run_sft, PromptVariant};

pub const WORLD_FILE: &str = "world.json";
pub const TRAIN_FILE: &str = "train.jsonl";
pub const EVAL_FILE: &str = "eval.jsonl";
pub const SOURCES_FILE: &str = "sources.jsonl";
pub const SFT_CHECKPOINT: &str = "sft.ckpt";
pub const SFT_LOSSES: &str = "sft.losses.json";
pub const PREFS_FILE: &str = "prefs.jsonl";
pub const PO_CHECKPOINT: &str = "po.ckpt";
pub const PO_LOSSES: &str = "po.losses.json";
pub const ITERATE_CHECKPOINT: &str = "iterate.ckpt";
pub const ITERATE_REPORTS: &str = "iterate.reports.json";

#[derive(Parser)]
#[command(
    name = "traduki",
    version,
    about = "Speech-to-speech translation pipeline on synthetic discrete units"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration document.
    #[arg(long)]
    config: PathBuf,
    /// Run directory for outputs and manifests.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic bilingual world.
    GenWorld {
        #[command(flatten)]
        common: Common,
    },
    /// Generate training, evaluation, and monolingual corpora from a world.
    GenCorpus {
        #[command(flatten)]
        common: Common,
        /// World file; defaults to world.json in the run directory.
        #[arg(long)]
        world: Option<PathBuf>,
    },
    /// Supervised fine-tuning on a parallel corpus.
    Sft {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        world: Option<PathBuf>,
        /// Corpus file; defaults to train.jsonl in the run directory.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Prompt format override: vanilla, tri-task, or chain.
        #[arg(long)]
        variant: Option<PromptVariant>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Build preference pairs by sampling and back-translation.
    BuildPrefs {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        world: Option<PathBuf>,
        /// Checkpoint to sample from; defaults to sft.ckpt in the run
        /// directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Monolingual sources; defaults to sources.jsonl in the run
        /// directory.
        #[arg(long)]
        sources: Option<PathBuf>,
        /// Scoring metric override: wer, bleu, meteor, or mcd.
        #[arg(long)]
        metric: Option<MetricKind>,
        /// Margin threshold override.
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        candidates: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Preference optimization of a fine-tuned checkpoint.
    Po {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        world: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Pair dataset; defaults to prefs.jsonl in the run directory.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Objective override: dpo or simpo.
        #[arg(long)]
        algorithm: Option<PoAlgorithm>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Iterate preference data construction and optimization.
    Iterate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        world: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        sources: Option<PathBuf>,
        /// Held-out parallel set for per-iteration evaluation; defaults to
        /// eval.jsonl in the run directory.
        #[arg(long)]
        test_set: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        samples_per_iteration: Option<usize>,
    },
    /// Score a checkpoint on a held-out parallel set.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        world: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        test_set: Option<PathBuf>,
        /// Task override: s2st or s2t.
        #[arg(long)]
        task: Option<EvalTask>,
        /// Also score the cascaded text-then-synthesis baseline.
        #[arg(long)]
        cascaded: bool,
    },
    /// Summarize a run directory: reports, manifest checks, provenance.
    Report {
        /// Run directory to summarize.
        #[arg(long)]
        dir: PathBuf,
    },
}

/// Parse arguments and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::GenWorld { common } => cmd_gen_world(&common.config, &common.out),
        Command::GenCorpus { common, world } => {
            cmd_gen_corpus(&common.config, &common.out, world.as_deref())
        }
        Command::Sft {
            common,
            world,
            corpus,
            variant,
            epochs,
            seed,
        } => {
            let mut cfg = load_config(&common.config)?;
            if let Some(v) = variant {
                cfg.sft.variant = v;
            }
            if let Some(e) = epochs {
                cfg.sft.epochs = e;
            }
            if let Some(s) = seed {
                cfg.sft.seed = s;
            }
            cmd_sft(
                &cfg,
                &common.config,
                &common.out,
                world.as_deref(),
                corpus.as_deref(),
            )
        }
        Command::BuildPrefs {
            common,
            world,
            checkpoint,
            sources,
            metric,
            delta,
            candidates,
            seed,
        } => {
            let mut cfg = load_config(&common.config)?;
            if let Some(m) = metric {
                cfg.prefdata.metric = m;
                cfg.prefdata.delta = crate::prefdata::default_delta(m);
            }
            if let Some(d) = delta {
                cfg.prefdata.delta = d;
            }
            if let Some(c) = candidates {
                cfg.prefdata.candidates = c;
            }
            if let Some(s) = seed {
                cfg.prefdata.seed = s;
            }
            cmd_build_prefs(
                &cfg,
                &common.config,
                &common.out,
                world.as_deref(),
                checkpoint.as_deref(),
                sources.as_deref(),
            )
        }
        Command::Po {
            common,
            world,
            checkpoint,
            dataset,
            algorithm,
            epochs,
            seed,
        } => {
            let mut cfg = load_config(&common.config)?;
            if let Some(a) = algorithm {
                cfg.po.algorithm = a;
            }
            if let Some(e) = epochs {
                cfg.po.epochs = e;
            }
            if let Some(s) = seed {
                cfg.po.seed = s;
            }
            cmd_po(
                &cfg,
                &common.config,
                &common.out,
                world.as_deref(),
                checkpoint.as_deref(),
                dataset.as_deref(),
            )
        }
        Command::Iterate {
            common,
            world,
            checkpoint,
            sources,
            test_set,
            iterations,
            samples_per_iteration,
        } => {
            let mut cfg = load_config(&common.config)?;
            if let Some(i) = iterations {
                cfg.iterate.iterations = i;
            }
            if let Some(s) = samples_per_iteration {
                cfg.iterate.samples_per_iteration = s;
            }
            cmd_iterate(
                &cfg,
                &common.config,
                &common.out,
                world.as_deref(),
                checkpoint.as_deref(),
                sources.as_deref(),
                test_set.as_deref(),
            )
        }
        Command::Eval {
            common,
            world,
            checkpoint,
            test_set,
            task,
            cascaded,
        } => {
            let mut cfg = load_config(&common.config)?;
            if let Some(t) = task {
                cfg.eval.task = t;
            }
            if cascaded {
                cfg.eval.cascaded = true;
            }
            cmd_eval(
                &cfg,
                &common.config,
                &common.out,
                world.as_deref(),
                checkpoint.as_deref(),
                test_set.as_deref(),
            )
        }
        Command::Report { dir } => cmd_report(&dir),
    }
}

/// Record an artifact in a manifest, storing run-directory files by their
/// relative name so the directory stays portable. Files outside the run
/// directory are stored by absolute path.
fn record(slot: &mut Vec<ArtifactRef>, base: &Path, path: &Path) -> Result<()> {
    let stored = match path.strip_prefix(base) {
        Ok(rel) => rel.to_path_buf(),
        Err(_) => {
            if path.is_absolute() {
                path.to_path_buf()
            } else {
                std::fs::canonicalize(path).map_err(|e| Error::io(path, e))?
            }
        }
    };
    slot.push(ArtifactRef {
        path: stored,
        sha256: file_sha256(path)?,
    });
    Ok(())
}

struct Stage {
    manifest: RunManifest,
    out: PathBuf,
    started: Instant,
}

impl Stage {
    fn begin(name: &str, config_path: &Path, out: &Path) -> Result<Stage> {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let mut manifest = RunManifest::new(name);
        record(&mut manifest.inputs, out, config_path)?;
        Ok(Stage {
            manifest,
            out: out.to_path_buf(),
            started: Instant::now(),
        })
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        record(&mut self.manifest.inputs, &self.out, path)
    }

    fn output(&mut self, path: &Path) -> Result<()> {
        record(&mut self.manifest.outputs, &self.out, path)
    }

    fn finish(mut self) -> Result<()> {
        self.manifest.duration_secs = self.started.elapsed().as_secs_f64();
        let path = RunManifest::path_for(&self.out, &self.manifest.stage);
        self.manifest.save(&path)?;
        Ok(())
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn load_world(out: &Path, world: Option<&Path>) -> Result<(SyntheticWorld, PathBuf)> {
    let path = world
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.join(WORLD_FILE));
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let world: SyntheticWorld =
        serde_json::from_str(&text).map_err(|e| Error::parse(&path, e))?;
    world.validate()?;
    Ok((world, path))
}

fn load_model(out: &Path, checkpoint: Option<&Path>, default_name: &str) -> Result<(ModelCheckpoint, PathBuf)> {
    let path = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.join(default_name));
    Ok((load_checkpoint(&path)?, path))
}

pub fn cmd_gen_world(config_path: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(config_path)?;
    let mut stage = Stage::begin("gen-world", config_path, out)?;
    let world = generate_world(cfg.world.seed, &cfg.world.config)?;
    let world_path = out.join(WORLD_FILE);
    write_json(&world_path, &world)?;
    stage.manifest.set_config(&cfg.world)?;
    stage.manifest.record_seed("world", cfg.world.seed);
    stage.output(&world_path)?;
    stage.finish()?;
    println!(
        "world: {} words per language, alphabet {}+{}",
        world.config.inventory, world.config.alphabet_a, world.config.alphabet_b
    );
    Ok(())
}

pub fn cmd_gen_corpus(config_path: &Path, out: &Path, world: Option<&Path>) -> Result<()> {
    let cfg = load_config(config_path)?;
    let mut stage = Stage::begin("gen-corpus", config_path, out)?;
    let (world, world_path) = load_world(out, world)?;
    stage.input(&world_path)?;

    let section = &cfg.corpus;
    let train_seed = derive_seed(section.seed, &[tag("corpus"), tag("train")]);
    let mut train = generate_parallel_corpus(
        &world,
        section.train_pairs,
        section.direction,
        train_seed,
    );
    if section.bidirectional {
        let reverse_seed = derive_seed(section.seed, &[tag("corpus"), tag("train-reverse")]);
        train.extend(generate_parallel_corpus(
            &world,
            section.train_pairs,
            section.direction.reversed(),
            reverse_seed,
        ));
    }
    let eval_seed = derive_seed(section.seed, &[tag("corpus"), tag("eval")]);
    let eval = generate_parallel_corpus(&world, section.eval_pairs, section.direction, eval_seed);
    let sources_seed = derive_seed(section.seed, &[tag("corpus"), tag("sources")]);
    let sources = generate_monolingual_corpus(
        &world,
        section.direction.source(),
        section.monolingual_sources,
        sources_seed,
    );

    let train_path = out.join(TRAIN_FILE);
    let eval_path = out.join(EVAL_FILE);
    let sources_path = out.join(SOURCES_FILE);
    write_jsonl(&train_path, &train)?;
    write_jsonl(&eval_path, &eval)?;
    write_jsonl(&sources_path, &sources)?;

    stage.manifest.set_config(section)?;
    stage.manifest.record_seed("corpus", section.seed);
    stage.manifest.record_seed("train", train_seed);
    stage.manifest.record_seed("eval", eval_seed);
    stage.manifest.record_seed("sources", sources_seed);
    stage.output(&train_path)?;
    stage.output(&eval_path)?;
    stage.output(&sources_path)?;
    stage.finish()?;
    println!(
        "corpora: {} train, {} eval, {} sources",
        train.len(),
        eval.len(),
        sources.len()
    );
    Ok(())
}

pub fn cmd_sft(
    cfg: &PipelineConfig,
    config_path: &Path,
    out: &Path,
    world: Option<&Path>,
    corpus: Option<&Path>,
) -> Result<()> {
    let mut stage = Stage::begin("sft", config_path, out)?;
    let (world, world_path) = load_world(out, world)?;
    let corpus_path = corpus
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.join(TRAIN_FILE));
    let corpus: Vec<ParallelSample> = read_jsonl(&corpus_path)?;
    stage.input(&world_path)?;
    stage.input(&corpus_path)?;

    let vocabulary = world_vocabulary(&world)?;
    let model_config = cfg.model.to_model_config(vocabulary.len());
    let base = init_model(&model_config, vocabulary)?;
    let outcome = run_sft(&base, &corpus, &cfg.sft)?;

    let checkpoint_path = out.join(SFT_CHECKPOINT);
    let losses_path = out.join(SFT_LOSSES);
    save_checkpoint(&checkpoint_path, &outcome.model)?;
    write_json(&losses_path, &outcome.loss_curve)?;

    stage
        .manifest
        .set_config(&serde_json::json!({ "model": cfg.model, "sft": cfg.sft }))?;
    stage.manifest.record_seed("model", cfg.model.seed);
    stage.manifest.record_seed("sft", cfg.sft.seed);
    stage.output(&checkpoint_path)?;
    stage.output(&losses_path)?;
    stage.finish()?;
    let final_loss = outcome.loss_curve.last().copied().unwrap_or(f64::NAN);
    println!(
        "sft: {} epochs on {} examples, final loss {final_loss:.4}",
        cfg.sft.epochs,
        corpus.len()
    );
    Ok(())
}

pub fn cmd_build_prefs(
    cfg: &PipelineConfig,
    config_path: &Path,
    out: &Path,
    world: Option<&Path>,
    checkpoint: Option<&Path>,
    sources: Option<&Path>,
) -> Result<()> {
    let mut stage = Stage::begin("build-prefs", config_path, out)?;
    let (world, world_path) = load_world(out, world)?;
    let (model, checkpoint_path) = load_model(out, checkpoint, SFT_CHECKPOINT)?;
    let sources_path = sources
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.join(SOURCES_FILE));
    let sources: Vec<Utterance> = read_jsonl(&sources_path)?;
    stage.input(&world_path)?;
    stage.input(&checkpoint_path)?;
    stage.input(&sources_path)?;

    let mut pref = cfg.prefdata.clone();
    if pref.corpus_id.is_empty() {
        pref.corpus_id = sources_path.display().to_string();
    }
    let dataset =
        build_preference_pairs(&model, &world, &sources, cfg.corpus.direction, &pref)?;

    let dataset_path = out.join(PREFS_FILE);
    save_dataset(&dataset_path, &dataset)?;
    let sidecar = dataset_path.with_extension("provenance.json");

    stage.manifest.set_config(&pref)?;
    stage.manifest.record_seed("prefdata", pref.seed);
    stage.output(&dataset_path)?;
    stage.output(&sidecar)?;
    stage.finish()?;

    println!(
        "preference pairs: {} kept from {} sources ({} skipped)",
        dataset.pairs.len(),
        sources.len(),
        dataset.provenance.skipped.len()
    );
    let mut reasons: std::collections::BTreeMap<&str, usize> = std::collections::BTreeMap::new();
    for skip in &dataset.provenance.skipped {
        *reasons.entry(skip.reason.as_str()).or_default() += 1;
    }
    for (reason, count) in reasons {
        println!("  skipped {count}: {reason}");
    }
    Ok(())
}

pub fn cmd_po(
    cfg: &PipelineConfig,
    config_path: &Path,
    out: &Path,
    world: Option<&Path>,
    checkpoint: Option<&Path>,
    dataset: Option<&Path>,
) -> Result<()> {
    let mut stage = Stage::begin("po", config_path, out)?;
    let (world, world_path) = load_world(out, world)?;
    let (model, checkpoint_path) = load_model(out, checkpoint, SFT_CHECKPOINT)?;
    let dataset_path = dataset
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.join(PREFS_FILE));
    let dataset = load_dataset(&dataset_path)?;
    stage.input(&world_path)?;
    stage.input(&checkpoint_path)?;
    stage.input(&dataset_path)?;

    let outcome = run_po(&model, &world, &dataset, &cfg.po)?;

    let po_path = out.join(PO_CHECKPOINT);
    let losses_path = out.join(PO_LOSSES);
    save_checkpoint(&po_path, &outcome.model)?;
    write_json(&losses_path, &outcome.loss_curve)?;

    stage.manifest.set_config(&cfg.po)?;
    stage.manifest.record_seed("po", cfg.po.seed);
    stage.output(&po_path)?;
    stage.output(&losses_path)?;
    stage.finish()?;
    println!(
        "{}: {} pairs, {} epochs, loss curve {:?}",
        cfg.po.algorithm,
        dataset.pairs.len(),
        cfg.po.epochs,
        outcome.loss_curve
    );
    Ok(())
}

pub fn cmd_iterate(
    cfg: &PipelineConfig,
    config_path: &Path,
    out: &Path,
    world: Option<&Path>,
    checkpoint: Option<&Path>,
    sources: Option<&Path>,
    test_set: Option<&Path>,
) -> Result<()> {
    let mut stage = Stage::begin("iterate", config_path, out)?;
    let (world, world_path) = load_world(out, world)?;
    let (model, checkpoint_path) = load_model(out, checkpoint, SFT_CHECKPOINT)?;
    let sources_path = sources
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.join(SOURCES_FILE));
    let test_path = test_set
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.join(EVAL_FILE));
    let sources: Vec<Utterance> = read_jsonl(&sources_path)?;
    let eval_set: Vec<ParallelSample> = read_jsonl(&test_path)?;
    stage.input(&world_path)?;
    stage.input(&checkpoint_path)?;
    stage.input(&sources_path)?;
    stage.input(&test_path)?;

    let iteration_cfg = IterationConfig {
        pref: cfg.prefdata.clone(),
        po: cfg.po.clone(),
        iterations: cfg.iterate.iterations,
        samples_per_iteration: cfg.iterate.samples_per_iteration,
    };
    let (final_model, reports) = run_iterations(
        &model,
        &world,
        &sources,
        cfg.corpus.direction,
        &eval_set,
        &iteration_cfg,
    )?;

    let checkpoint_out = out.join(ITERATE_CHECKPOINT);
    let reports_path = out.join(ITERATE_REPORTS);
    save_checkpoint(&checkpoint_out, &final_model)?;
    write_json(&reports_path, &reports)?;

    stage.manifest.set_config(&iteration_cfg)?;
    stage.manifest.record_seed("prefdata", cfg.prefdata.seed);
    stage.manifest.record_seed("po", cfg.po.seed);
    stage.output(&checkpoint_out)?;
    stage.output(&reports_path)?;
    stage.finish()?;
    for report in &reports {
        println!(
            "iteration {}: {} pairs, eval bleu {:.2}",
            report.iteration, report.pairs, report.eval.corpus_bleu
        );
    }
    Ok(())
}

pub fn cmd_eval(
    cfg: &PipelineConfig,
    config_path: &Path,
    out: &Path,
    world: Option<&Path>,
    checkpoint: Option<&Path>,
    test_set: Option<&Path>,
) -> Result<()> {
    let mut stage = Stage::begin("eval", config_path, out)?;
    let (world, world_path) = load_world(out, world)?;
    let (model, checkpoint_path) = load_model(out, checkpoint, SFT_CHECKPOINT)?;
    let test_path = test_set
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.join(EVAL_FILE));
    let test: Vec<ParallelSample> = read_jsonl(&test_path)?;
    stage.input(&world_path)?;
    stage.input(&checkpoint_path)?;
    stage.input(&test_path)?;

    let mut reports = Vec::new();
    let report = match cfg.eval.task {
        EvalTask::S2st => eval_s2st(&model, &world, &test, &cfg.eval.decode)?,
        EvalTask::S2t => eval_s2t(&model, &test, &cfg.eval.decode)?,
    };
    let report_path = out.join(format!("{}.report.json", cfg.eval.task));
    write_json(&report_path, &report)?;
    stage.output(&report_path)?;
    reports.push(report);

    if cfg.eval.cascaded {
        let cascaded = cascaded_baseline(&model, &world, &test, &cfg.eval.decode)?;
        let cascaded_path = out.join("cascaded.report.json");
        write_json(&cascaded_path, &cascaded)?;
        stage.output(&cascaded_path)?;
        reports.push(cascaded);
    }

    stage.manifest.set_config(&cfg.eval)?;
    stage.finish()?;
    let refs: Vec<&EvalReport> = reports.iter().collect();
    print!("{}", render_table(&refs));
    Ok(())
}

pub fn cmd_report(dir: &Path) -> Result<()> {
    let manifests = load_all(dir)?;
    if manifests.is_empty() {
        return Err(Error::Data(format!(
            "{}: no manifests found",
            dir.display()
        )));
    }
    for manifest in &manifests {
        manifest.verify(dir)?;
    }
    println!("verified {} manifests", manifests.len());

    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(dir, e))?;
    entries.sort_by_key(|e| e.file_name());
    let mut reports = Vec::new();
    let mut chains = Vec::new();
    for entry in entries {
        let name = entry.file_name().to_string_lossy().into_owned();
        if !name.ends_with(".report.json") {
            continue;
        }
        let path = entry.path();
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let report: EvalReport =
            serde_json::from_str(&text).map_err(|e| Error::parse(&path, e))?;
        if (rescore(&report) - report.corpus_bleu).abs() > 1e-9 {
            return Err(Error::Data(format!(
                "{name}: stored corpus BLEU does not match its sentences"
            )));
        }
        let chain = provenance_of(&manifests, &file_sha256(&path)?)?;
        let stages: Vec<&str> = chain.iter().map(|m| m.stage.as_str()).collect();
        chains.push(format!("{name}: {}", stages.join(" -> ")));
        reports.push(report);
    }
    if !reports.is_empty() {
        let refs: Vec<&EvalReport> = reports.iter().collect();
        print!("{}", render_table(&refs));
    }
    for chain in chains {
        println!("{chain}");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CheckpointRole;

    fn write_config(dir: &Path, text: &str) -> PathBuf {
        let path = dir.join("pipeline.toml");
        std::fs::write(&path, text).unwrap();
        path
    }

    /// A configuration small enough to train in test time.
    const TINY: &str = r#"
        [world]
        seed = 3
        alphabet_a = 8
        alphabet_b = 8
        inventory = 20
        feature_dim = 4
        duration_range = [1, 1]
        word_length_range = [2, 3]
        sentence_length_range = [2, 4]

        [corpus]
        train_pairs = 12
        eval_pairs = 4
        monolingual_sources = 12
        seed = 4

        [model]
        context_length = 96
        embed_dim = 32
        num_layers = 2
        num_heads = 2
        feedforward_dim = 64
        seed = 5

        [sft]
        variant = "tri-task"
        epochs = 120
        batch_size = 8
        lr = 0.003
        seed = 6

        [prefdata]
        metric = "wer"
        delta = 0.000001
        candidates = 4
        seed = 7

        [prefdata.decode]
        temperature = 1.4

        [po]
        epochs = 1
        batch_size = 4
        lr = 0.0005
        seed = 8

        [iterate]
        iterations = 1
        samples_per_iteration = 4
    "#;

    fn run_args(args: &[&str]) -> i32 {
        let mut full = vec!["traduki"];
        full.extend(args);
        run(full)
    }

    #[test]
    fn the_full_pipeline_runs_from_one_config() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        let config = write_config(dir.path(), TINY);
        let config = config.to_str().unwrap();
        let po_checkpoint = dir.path().join(PO_CHECKPOINT);

        for args in [
            vec!["gen-world", "--config", config, "--out", out],
            vec!["gen-corpus", "--config", config, "--out", out],
            vec!["sft", "--config", config, "--out", out],
            vec!["build-prefs", "--config", config, "--out", out],
            vec!["po", "--config", config, "--out", out],
            vec![
                "eval",
                "--config",
                config,
                "--out",
                out,
                "--checkpoint",
                po_checkpoint.to_str().unwrap(),
                "--cascaded",
            ],
            vec!["report", "--dir", out],
        ] {
            let code = run_args(&args);
            assert_eq!(code, 0, "command {args:?} exited {code}");
        }

        let model = load_checkpoint(&dir.path().join(PO_CHECKPOINT)).unwrap();
        assert_eq!(model.role, CheckpointRole::Po);
        let manifests = load_all(dir.path()).unwrap();
        assert_eq!(manifests.len(), 6);

        // The eval report's provenance reaches back to the world seed.
        let report_hash = file_sha256(&dir.path().join("s2st.report.json")).unwrap();
        let chain = provenance_of(&manifests, &report_hash).unwrap();
        let stages: Vec<&str> = chain.iter().map(|m| m.stage.as_str()).collect();
        assert_eq!(stages[0], "gen-world");
        assert!(stages.contains(&"eval"));
        assert!(chain[0].seeds.contains_key("world"));
    }

    #[test]
    fn world_generation_is_reproducible() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        for dir in [&dir_a, &dir_b] {
            let config = write_config(dir.path(), TINY);
            assert_eq!(
                run_args(&[
                    "gen-world",
                    "--config",
                    config.to_str().unwrap(),
                    "--out",
                    dir.path().to_str().unwrap()
                ]),
                0
            );
            assert_eq!(
                run_args(&[
                    "gen-corpus",
                    "--config",
                    config.to_str().unwrap(),
                    "--out",
                    dir.path().to_str().unwrap()
                ]),
                0
            );
        }
        for name in [WORLD_FILE, TRAIN_FILE, EVAL_FILE, SOURCES_FILE] {
            let a = std::fs::read(dir_a.path().join(name)).unwrap();
            let b = std::fs::read(dir_b.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical runs");
        }
    }

    #[test]
    fn missing_config_exits_with_a_named_path() {
        let dir = tempfile::tempdir().unwrap();
        let code = run_args(&[
            "gen-world",
            "--config",
            "/no/such/config.toml",
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(code, 3);
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run_args(&["no-such-command"]), 1);
        assert_eq!(run_args(&["sft"]), 1);
        let dir = tempfile::tempdir().unwrap();
        let config = write_config(dir.path(), TINY);
        assert_eq!(
            run_args(&[
                "sft",
                "--config",
                config.to_str().unwrap(),
                "--out",
                dir.path().to_str().unwrap(),
                "--variant",
                "banana",
            ]),
            1
        );
        assert_eq!(run_args(&["--help"]), 0);
    }

    #[test]
    fn invalid_config_exits_two() {
        let dir = tempfile::tempdir().unwrap();
        let config = write_config(dir.path(), "[po]\nbeta = 0.0");
        let code = run_args(&[
            "gen-world",
            "--config",
            config.to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(code, 2);
    }

    #[test]
    fn tampered_artifacts_fail_the_report() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        let config = write_config(dir.path(), TINY);
        let config = config.to_str().unwrap();
        assert_eq!(run_args(&["gen-world", "--config", config, "--out", out]), 0);
        assert_eq!(run_args(&["report", "--dir", out]), 0);

        let world_path = dir.path().join(WORLD_FILE);
        let mut text = std::fs::read_to_string(&world_path).unwrap();
        text.push('\n');
        std::fs::write(&world_path, text).unwrap();
        assert_ne!(run_args(&["report", "--dir", out]), 0);
    }
}
