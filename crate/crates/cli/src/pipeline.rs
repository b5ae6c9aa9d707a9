//! The subcommands. Each reads its inputs from the output directory (or the
//! config), writes its artifacts and a manifest, and returns a summary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use convbias_core::biasspec::{generate_queries, BiasSpecification, QuerySet};
use convbias_core::corpus::{
    clean_comment, dedup_comments, extract_window, fetch_all, read_annotations, split_instances, synth_crg_data,
    synth_dst_data, synth_planted_corpus, synth_reference_utterances, write_annotations, AnnotatedInstance,
    CommentSource, CrgDataset, DataSplit, DstDataset, FetchOptions,
};
use convbias_core::debias::{grid_search, run_debias, DebiasRecord, GridCell, Method};
use convbias_core::eval::{
    crg_train_eval, dst_train_eval, lmb_evaluate, lmp_evaluate, read_reference_file, EvalReport, LmbOptions, Task,
};
use convbias_core::lm::{encode_corpus, load_checkpoint, save_checkpoint, train_lm, CausalLM, LmObjective, Tokenizer};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::artifact::{
    checkpoint_hash, file_sha256, log_event, read_json, read_lines, write_json, write_lines, write_text, Artifact,
    Layout, Manifest, PROVENANCE_FILE,
};
use crate::config::{CorpusSource, ExperimentConfig};
use crate::error::{CliError, CliResult};
use crate::plot::t_value_svg;

pub const BASE_TAG: &str = "base";
const FETCH_WORKERS: usize = 4;
/// Offset of the reference-utterance seed from the experiment seed.
const REFERENCE_SEED_OFFSET: u64 = 1000;

/// A config with its hash and output layout, shared by all subcommands.
#[derive(Debug, Clone)]
pub struct Run {
    pub config: ExperimentConfig,
    pub hash: String,
    pub layout: Layout,
}

impl Run {
    pub fn new(config: ExperimentConfig) -> CliResult<Self> {
        config.validate()?;
        let hash = config.hash();
        let layout = Layout::new(config.out_dir.clone());
        Ok(Run { config, hash, layout })
    }

    fn artifact<T>(&self, data: T) -> Artifact<T> {
        Artifact {
            config_hash: self.hash.clone(),
            seed: self.config.seed,
            data,
        }
    }

    fn write_manifest<T: Serialize>(&self, command: &str, files: &[PathBuf], summary: &T) -> CliResult<()> {
        let mut hashes = BTreeMap::new();
        for f in files {
            let h = if f.is_dir() {
                checkpoint_hash(f)?
            } else {
                file_sha256(f)?
            };
            hashes.insert(self.layout.relative(f), h);
        }
        let manifest = Manifest {
            command: command.to_string(),
            config_hash: self.hash.clone(),
            seed: self.config.seed,
            files: hashes,
            summary,
        };
        write_json(&self.layout.manifest(command), &manifest)?;
        log_event(
            &self.layout.root,
            command,
            &format!("done config={} seed={}", self.hash, self.config.seed),
        )
    }

    fn spec(&self) -> CliResult<BiasSpecification> {
        self.config.specification()
    }
}

fn require(path: &Path, hint: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::validation(format!("{} not found; {hint}", path.display())))
    }
}

// ---------------------------------------------------------------- queries

pub fn cmd_queries(run: &Run) -> CliResult<QuerySet> {
    let spec = run.spec()?;
    let queries = generate_queries(&spec);
    let path = run.layout.queries();
    write_lines(&path, &queries.queries)?;
    run.write_manifest("queries", &[path], &serde_json::json!({ "queries": queries.len() }))?;
    info!("{} queries", queries.len());
    Ok(queries)
}

// ---------------------------------------------------------------- prepare

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrepareSummary {
    pub source: String,
    pub retrieved: usize,
    pub skipped_records: usize,
    pub dropped_too_long: usize,
    pub no_target_in_comment: usize,
    pub instances: usize,
    pub pretrain_sentences: usize,
    /// Train/dev/test sizes; absent when the instances carry no labels.
    pub split: Option<(usize, usize, usize)>,
    pub references: usize,
    pub dst_examples: (usize, usize),
    pub crg_examples: (usize, usize),
}

/// Builds the phrase instances and the pretraining text, splits the
/// labelled phrases, and materializes the reference and downstream data.
pub fn cmd_prepare(run: &Run) -> CliResult<PrepareSummary> {
    let spec = run.spec()?;
    let cfg = &run.config;
    let mut summary = PrepareSummary::default();
    let (instances, pretrain_text) = match &cfg.corpus {
        CorpusSource::Synthetic { skew, sentences } => {
            summary.source = "synthetic".into();
            let corpus = synth_planted_corpus(&spec, *skew, *sentences, cfg.seed)?;
            let instances: Vec<AnnotatedInstance> = corpus
                .biased_phrases
                .iter()
                .enumerate()
                .map(|(i, p)| AnnotatedInstance {
                    id: format!("p{i}"),
                    attribute_in_window: true,
                    comment: p.clone(),
                    phrase: p.clone(),
                    bias_sent: Some(true),
                    bias_phrase: Some(true),
                })
                .collect();
            (instances, corpus.sentences)
        }
        CorpusSource::Fixture {
            path,
            until,
            size_limit,
        } => {
            summary.source = "fixture".into();
            retrieve(
                &spec,
                &CommentSource::Fixture(path.clone()),
                *until,
                *size_limit,
                &mut summary,
            )?
        }
        CorpusSource::Endpoint { url, until, size_limit } => {
            summary.source = "endpoint".into();
            retrieve(
                &spec,
                &CommentSource::Endpoint(url.clone()),
                *until,
                *size_limit,
                &mut summary,
            )?
        }
        CorpusSource::Annotated { path } => {
            summary.source = "annotated".into();
            let instances = read_annotations(path)?;
            let text = instances.iter().map(|i| i.comment.clone()).collect();
            (instances, text)
        }
    };
    summary.instances = instances.len();
    summary.pretrain_sentences = pretrain_text.len();

    let layout = &run.layout;
    let mut files = vec![
        layout.annotations(),
        layout.corpus(),
        layout.references(),
        layout.dst(),
        layout.crg(),
    ];
    std::fs::create_dir_all(layout.prepare_dir())
        .with_context(|| format!("creating {}", layout.prepare_dir().display()))?;
    write_annotations(&instances, layout.annotations())?;
    write_lines(&layout.corpus(), &pretrain_text)?;

    let split_path = layout.split();
    if instances.iter().any(|i| i.bias_phrase == Some(true)) {
        let split = split_instances(&instances, spec.bias_type, cfg.split, cfg.seed)?;
        summary.split = Some(split.sizes());
        write_json(&split_path, &run.artifact(split))?;
        files.push(split_path);
    } else {
        warn!(
            "no instance is labelled as a biased phrase; label {} and rerun with an annotated source",
            layout.annotations().display()
        );
        if split_path.exists() {
            std::fs::remove_file(&split_path).with_context(|| format!("removing stale {}", split_path.display()))?;
        }
    }

    let references = match &cfg.eval.references {
        Some(p) => read_reference_file(p)?,
        None => synth_reference_utterances(cfg.eval.n_references, cfg.seed.wrapping_add(REFERENCE_SEED_OFFSET)),
    };
    summary.references = references.len();
    write_lines(&layout.references(), &references)?;
    let dst = synth_dst_data(cfg.seed, cfg.eval.dst_dialogs);
    summary.dst_examples = (dst.train.len(), dst.test.len());
    write_json(&layout.dst(), &run.artifact(dst))?;
    let crg = synth_crg_data(cfg.seed, cfg.eval.crg_pairs, cfg.eval.crg_references)?;
    summary.crg_examples = (crg.train.len(), crg.test.len());
    write_json(&layout.crg(), &run.artifact(crg))?;

    run.write_manifest("prepare", &files, &summary)?;
    info!(
        "prepared {} instances, {} pretraining sentences, split {:?}",
        summary.instances, summary.pretrain_sentences, summary.split
    );
    Ok(summary)
}

/// Runs every query against `source`, cleans the comments, and cuts the
/// phrase window around the first target term. Labels stay empty.
fn retrieve(
    spec: &BiasSpecification,
    source: &CommentSource,
    until: i64,
    size_limit: usize,
    summary: &mut PrepareSummary,
) -> CliResult<(Vec<AnnotatedInstance>, Vec<String>)> {
    let queries = generate_queries(spec);
    let opts = FetchOptions::new(until, size_limit);
    let mut comments = Vec::new();
    for (q, r) in queries
        .queries
        .iter()
        .zip(fetch_all(&queries.queries, source, &opts, FETCH_WORKERS))
    {
        let r = r.with_context(|| format!("query `{q}`"))?;
        summary.skipped_records += r.skipped;
        comments.extend(r.comments);
    }
    let comments = dedup_comments(comments);
    summary.retrieved = comments.len();
    let mut targets = spec.t1.without_markers();
    // longest first, so "muslim women" wins over "muslim"
    targets.sort_by(|a, b| {
        b.split_whitespace()
            .count()
            .cmp(&a.split_whitespace().count())
            .then(a.cmp(b))
    });
    let attributes = spec.a1.without_markers();
    let mut instances = Vec::new();
    let mut text = Vec::new();
    for c in comments {
        let Some(cleaned) = clean_comment(&c.body) else {
            summary.dropped_too_long += 1;
            continue;
        };
        let Some(phrase) = targets.iter().find_map(|t| extract_window(&cleaned, t).ok()) else {
            summary.no_target_in_comment += 1;
            continue;
        };
        let attribute_in_window = attributes
            .iter()
            .any(|a| phrase.split_whitespace().any(|w| w.starts_with(a.as_str())));
        instances.push(AnnotatedInstance {
            id: c.id,
            attribute_in_window,
            comment: cleaned.clone(),
            phrase,
            bias_sent: None,
            bias_phrase: None,
        });
        text.push(cleaned);
    }
    if summary.dropped_too_long > 0 {
        info!("dropped {} over-length comments", summary.dropped_too_long);
    }
    Ok((instances, text))
}

// ---------------------------------------------------------------- pretrain

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTrace {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub vocab_size: usize,
    pub parameters: usize,
    pub sequences: usize,
    pub resumed_from_steps: u64,
    pub steps: u64,
    pub phases: Vec<PhaseTrace>,
    pub checkpoint_hash: String,
}

fn load_downstream(run: &Run) -> CliResult<(DstDataset, CrgDataset)> {
    let dst: Artifact<DstDataset> = read_json(&run.layout.dst())?;
    let crg: Artifact<CrgDataset> = read_json(&run.layout.crg())?;
    Ok((dst.data, crg.data))
}

/// Builds the tokenizer from the pretraining text plus the downstream
/// training inputs, then trains the base model through every phase. With
/// `resume`, training continues from that checkpoint instead.
pub fn cmd_pretrain(run: &Run, resume: Option<&Path>) -> CliResult<PretrainSummary> {
    let layout = &run.layout;
    require(&layout.corpus(), "run `prepare` first")?;
    let text = read_lines(&layout.corpus())?;
    let (dst, crg) = load_downstream(run)?;
    let mut model = match resume {
        Some(dir) => {
            require(dir, "checkpoint to resume from is missing")?;
            load_checkpoint(dir)?
        }
        None => {
            let mut vocab_text = text.clone();
            vocab_text.extend(dst.train.iter().map(|e| e.input_text()));
            for e in &crg.train {
                vocab_text.push(e.context.clone());
                vocab_text.extend(e.references.iter().cloned());
            }
            let tok = Tokenizer::build(&vocab_text, run.config.model.max_vocab)?;
            let cfg = run.config.model.lm_config(tok.len());
            CausalLM::new(cfg, tok, run.config.seed)?
        }
    };
    let resumed_from_steps = model.steps;
    let corpus = encode_corpus(&model, &text);
    let mut phases = Vec::new();
    for (i, phase) in run.config.pretrain.iter().enumerate() {
        let report = train_lm(&mut model, &corpus, phase, &mut LmObjective)?;
        info!(
            "phase {}: {} steps, loss {:.4} -> {:.4}",
            i + 1,
            report.losses.len(),
            report.losses.first().copied().unwrap_or(f64::NAN),
            report.losses.last().copied().unwrap_or(f64::NAN)
        );
        phases.push(PhaseTrace {
            lr: phase.lr,
            epochs: phase.epochs,
            batch_size: phase.batch_size,
            losses: report.losses,
        });
    }
    let dir = layout.checkpoint(BASE_TAG);
    let checkpoint_hash = save_with_provenance(run, &model, &dir)?;
    let summary = PretrainSummary {
        vocab_size: model.config.vocab_size,
        parameters: model.config.n_parameters(),
        sequences: corpus.len(),
        resumed_from_steps,
        steps: model.steps,
        phases,
        checkpoint_hash,
    };
    run.write_manifest("pretrain", &[dir], &summary)?;
    Ok(summary)
}

fn save_with_provenance(run: &Run, model: &CausalLM, dir: &Path) -> CliResult<String> {
    save_checkpoint(model, dir)?;
    let hash = checkpoint_hash(dir)?;
    write_json(
        &dir.join(PROVENANCE_FILE),
        &run.artifact(serde_json::json!({ "checkpoint_hash": hash })),
    )?;
    Ok(hash)
}

// ---------------------------------------------------------------- debias

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasSummary {
    pub method: Method,
    pub base_checkpoint_hash: String,
    pub checkpoint_hash: String,
    pub record: DebiasRecord,
    /// Every λ combination when the grid was searched.
    pub grid: Vec<GridCell>,
}

fn load_split(run: &Run) -> CliResult<DataSplit> {
    let path = run.layout.split();
    require(&path, "run `prepare` with labelled phrases first")?;
    let split: Artifact<DataSplit> = read_json(&path)?;
    Ok(split.data)
}

fn load_model(dir: &Path) -> CliResult<CausalLM> {
    require(dir, "checkpoint missing")?;
    Ok(load_checkpoint(dir)?)
}

/// Debiases a checkpoint (the base model by default) with one method. With
/// `grid`, every λ pair is tried and the one with the smallest |t| on the
/// dev phrases is kept.
pub fn cmd_debias(run: &Run, method: Method, grid: bool, checkpoint: Option<&Path>) -> CliResult<DebiasSummary> {
    let spec = run.spec()?;
    let split = load_split(run)?;
    let base_dir = checkpoint
        .map(Path::to_path_buf)
        .unwrap_or_else(|| run.layout.checkpoint(BASE_TAG));
    let mut model = load_model(&base_dir)?;
    let base_checkpoint_hash = checkpoint_hash(&base_dir)?;
    let config = run.config.debias.config(method);
    let train = &run.config.debias.train;
    let (record, cells) = if grid {
        if method == Method::Cda {
            return Err(CliError::validation(
                "--grid applies to lmd, add and hd; cda has no loss weights",
            ));
        }
        let dev: Vec<String> = split.dev.iter().map(|i| i.phrase.clone()).collect();
        let options = lmb_options(run);
        let (best, cells) = grid_search(&model, &split, &spec, &config, train, |m| {
            Ok(lmb_evaluate(m, &dev, &spec, options)?.0.t_value.abs())
        })?;
        model = best;
        let chosen = cells
            .iter()
            .min_by(|a, b| a.score.total_cmp(&b.score))
            .expect("non-empty grid")
            .record
            .clone();
        (chosen, cells)
    } else {
        (run_debias(&mut model, &split, &spec, &config, train)?, Vec::new())
    };
    for w in &record.warnings {
        warn!("{w}");
    }
    let dir = run.layout.checkpoint(method.as_str());
    let checkpoint_hash = save_with_provenance(run, &model, &dir)?;
    let summary = DebiasSummary {
        method,
        base_checkpoint_hash,
        checkpoint_hash,
        record,
        grid: cells,
    };
    let record_path = run.layout.debias_record(method.as_str());
    write_json(&record_path, &run.artifact(&summary))?;
    run.write_manifest(&format!("debias-{method}"), &[dir, record_path], &summary.record.method)?;
    Ok(summary)
}

// ---------------------------------------------------------------- eval

/// A model to evaluate: its tag (`base` or a method name) and checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalTarget {
    pub tag: String,
    pub checkpoint: PathBuf,
}

impl EvalTarget {
    /// `tag=path`, or a bare path tagged with its directory name.
    pub fn parse(s: &str) -> CliResult<Self> {
        let (tag, path) = match s.split_once('=') {
            Some((t, p)) => (t.to_string(), PathBuf::from(p)),
            None => {
                let p = PathBuf::from(s);
                let tag = p
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .ok_or_else(|| CliError::validation(format!("cannot derive a tag from `{s}`")))?;
                (tag, p)
            }
        };
        Ok(EvalTarget { tag, checkpoint: path })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub config_hash: String,
    pub seed: u64,
    pub cells: Vec<EvalReport>,
    /// Checkpoint hash per model tag.
    pub checkpoints: BTreeMap<String, String>,
}

fn lmb_options(run: &Run) -> LmbOptions {
    LmbOptions {
        alpha: run.config.eval.alpha,
        ..LmbOptions::default()
    }
}

/// The base checkpoint plus every debiased checkpoint present.
pub fn default_targets(layout: &Layout) -> Vec<EvalTarget> {
    std::iter::once(BASE_TAG)
        .chain(Method::ALL.iter().map(Method::as_str))
        .map(|tag| EvalTarget {
            tag: tag.to_string(),
            checkpoint: layout.checkpoint(tag),
        })
        .filter(|t| t.checkpoint.exists())
        .collect()
}

/// Measures bias on the test phrases and runs the configured downstream
/// probes for each target, writing one report per model and a summary.
pub fn cmd_eval(run: &Run, targets: &[EvalTarget], plot: bool) -> CliResult<EvalSummary> {
    let spec = run.spec()?;
    let split = load_split(run)?;
    let test: Vec<String> = split.test.iter().map(|i| i.phrase.clone()).collect();
    let layout = &run.layout;
    let tasks = &run.config.eval.tasks;
    let references = if tasks.contains(&Task::Lmp) {
        require(&layout.references(), "run `prepare` first")?;
        read_lines(&layout.references())?
    } else {
        Vec::new()
    };
    let downstream = if tasks.iter().any(|t| matches!(t, Task::Dst | Task::Crg)) {
        Some(load_downstream(run)?)
    } else {
        None
    };
    if targets.is_empty() {
        return Err(CliError::validation("no checkpoints to evaluate; run `pretrain` first"));
    }
    let mut cells = Vec::new();
    let mut checkpoints = BTreeMap::new();
    let mut files = Vec::new();
    for target in targets {
        let model = load_model(&target.checkpoint)?;
        checkpoints.insert(target.tag.clone(), checkpoint_hash(&target.checkpoint)?);
        let (bias, pairs) = lmb_evaluate(&model, &test, &spec, lmb_options(run))?;
        let mut reports = Vec::new();
        for task in tasks {
            let dcfg = &run.config.eval.downstream;
            reports.push(match (task, &downstream) {
                (Task::Lmp, _) => lmp_evaluate(&model, &references)?,
                (Task::Dst, Some((dst, _))) => dst_train_eval(&model, dst, dcfg)?,
                (Task::Crg, Some((_, crg))) => crg_train_eval(&model, crg, dcfg)?,
                _ => unreachable!("downstream data loaded for dst and crg"),
            });
        }
        let method = if target.tag == BASE_TAG {
            "none"
        } else {
            target.tag.as_str()
        };
        let cell = EvalReport::new(target.tag.clone(), method, &bias, &reports);
        info!("{}: t = {:.3}, p = {:.4}", target.tag, cell.t, cell.p);
        let path = layout.eval_dir().join("cells").join(format!("{}.json", target.tag));
        write_json(
            &path,
            &run.artifact(serde_json::json!({ "report": cell, "pairs": pairs, "downstream": reports })),
        )?;
        files.push(path);
        cells.push(cell);
    }
    let summary = EvalSummary {
        config_hash: run.hash.clone(),
        seed: run.config.seed,
        cells,
        checkpoints,
    };
    let summary_path = layout.eval_dir().join("summary.json");
    write_json(&summary_path, &summary)?;
    let table_path = layout.eval_dir().join("summary.txt");
    write_text(&table_path, &summary_table(&summary, run.config.eval.alpha))?;
    files.extend([summary_path, table_path]);
    if plot {
        let svg_path = layout.eval_dir().join("lmb.svg");
        write_text(&svg_path, &t_value_svg(&summary.cells, run.config.eval.alpha))?;
        files.push(svg_path);
    }
    run.write_manifest("eval", &files, &serde_json::json!({ "cells": summary.cells.len() }))?;
    Ok(summary)
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map(|x| format!("{x:.digits$}")).unwrap_or_else(|| "-".into())
}

/// Plain-text table; t values significant at `alpha` carry an asterisk.
pub fn summary_table(summary: &EvalSummary, alpha: f64) -> String {
    let mut out = format!(
        "config {} seed {}\n{:<8} {:<10} {:>10} {:>8} {:>5} {:>8} {:>9} {:>6} {:>6} {:>6} {:>6}\n",
        &summary.config_hash[..12.min(summary.config_hash.len())],
        summary.seed,
        "model",
        "bias",
        "t",
        "p",
        "n",
        "removed",
        "lmp",
        "f1",
        "bleu4",
        "dist2",
        "ent4"
    );
    for c in &summary.cells {
        let star = if c.p < alpha { "*" } else { "" };
        let d = &c.downstream;
        out.push_str(&format!(
            "{:<8} {:<10} {:>10} {:>8.4} {:>5} {:>8} {:>9} {:>6} {:>6} {:>6} {:>6}\n",
            c.model_tag,
            c.bias_type.as_str(),
            format!("{:.3}{star}", c.t),
            c.p,
            c.n,
            c.removed,
            fmt_opt(d.lmp, 3),
            fmt_opt(d.f1, 3),
            fmt_opt(d.bleu4, 3),
            fmt_opt(d.dist2, 3),
            fmt_opt(d.entropy4, 3),
        ));
    }
    out.push_str(&format!("* p < {alpha}\n"));
    out
}

// ---------------------------------------------------------------- reproduce

/// Prepare, pretrain, every configured debiasing method, and evaluation of
/// the base and debiased models. A copy of the summary goes to the root of
/// the output directory.
pub fn cmd_reproduce(run: &Run, plot: bool) -> CliResult<EvalSummary> {
    if !matches!(run.config.corpus, CorpusSource::Synthetic { .. }) {
        return Err(CliError::validation("reproduce needs a synthetic corpus source"));
    }
    cmd_prepare(run)?;
    cmd_pretrain(run, None)?;
    let mut targets = vec![EvalTarget {
        tag: BASE_TAG.into(),
        checkpoint: run.layout.checkpoint(BASE_TAG),
    }];
    for &method in &run.config.debias.methods {
        cmd_debias(run, method, false, None)?;
        targets.push(EvalTarget {
            tag: method.as_str().into(),
            checkpoint: run.layout.checkpoint(method.as_str()),
        });
    }
    let summary = cmd_eval(run, &targets, plot)?;
    write_json(&run.layout.root.join("summary.json"), &summary)?;
    Ok(summary)
}
