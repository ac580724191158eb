//! The five subcommands: synthesize a corpus, train a regime, evaluate a
//! checkpoint, compare reports, and validate a corpus file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use convqa::corpus::{gen_synthetic, load_coqa, write_coqa, SynthConfig};
use convqa::infer::{evaluate_corpus, prediction_records, serialize_predictions, InferenceMode};
use convqa::metrics::{aggregate_report, CellScore, EvalReport, ScoringScheme};
use convqa::model::Checkpoint;
use convqa::trainer::{run_regime, SeedPack};
use serde::{Deserialize, Serialize};

use crate::config::RegimeConfig;
use crate::manifest::{
    now_rfc3339, CorpusRefs, ExperimentManifest, FileRef, OutputPaths, SeedRecord, SynthManifest,
    MANIFEST_VERSION,
};

/// Resolves an output directory: explicit flag, else the `CONVQA_OUT_DIR`
/// environment variable, else `./out`. Creates it if needed.
fn resolve_out_dir(flag: &Option<PathBuf>) -> Result<PathBuf> {
    let dir = match flag {
        Some(d) => d.clone(),
        None => match std::env::var_os("CONVQA_OUT_DIR") {
            Some(d) => PathBuf::from(d),
            None => PathBuf::from("out"),
        },
    };
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))?;
    Ok(dir)
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of conversations to generate.
    #[arg(long)]
    pub convs: usize,
    /// Question-answer rounds per conversation.
    #[arg(long)]
    pub rounds: usize,
    /// Probability that a follow-up question refers to the previous answer.
    #[arg(long)]
    pub dep_prob: f64,
    /// Generator seed.
    #[arg(long)]
    pub seed: u64,
    /// Distinct entities available per corpus.
    #[arg(long, default_value_t = 12)]
    pub entity_pool: usize,
    /// Output corpus file (default: <out dir>/synth-c<convs>-r<rounds>-s<seed>.json).
    #[arg(long)]
    pub file: Option<PathBuf>,
    /// Output directory used when --file is not given.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let config = SynthConfig {
        conversations: args.convs,
        rounds: args.rounds,
        entity_pool: args.entity_pool,
        dependency_prob: args.dep_prob,
    };
    let corpus = gen_synthetic(&config, args.seed)?;
    let path = match &args.file {
        Some(p) => p.clone(),
        None => resolve_out_dir(&args.out)?.join(format!(
            "synth-c{}-r{}-s{}.json",
            args.convs, args.rounds, args.seed
        )),
    };
    write_coqa(&corpus, &path)?;
    let output = FileRef::new(&path)?;
    let sidecar = SynthManifest {
        manifest_version: MANIFEST_VERSION,
        generator: config,
        seed: args.seed,
        output: output.clone(),
        created_at: now_rfc3339(),
    };
    let sidecar_path = path.with_extension("manifest.json");
    let mut text = serde_json::to_string_pretty(&sidecar)?;
    text.push('\n');
    std::fs::write(&sidecar_path, text)?;
    println!(
        "wrote {} conversations to {} (sha256 {})",
        corpus.len(),
        path.display(),
        output.sha256
    );
    println!("wrote {}", sidecar_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Regime config file (TOML).
    #[arg(long, required_unless_present = "from_manifest", conflicts_with = "from_manifest")]
    pub config: Option<PathBuf>,
    /// Training corpus.
    #[arg(long, required_unless_present = "from_manifest")]
    pub train: Option<PathBuf>,
    /// Dev corpus for epoch selection.
    #[arg(long, required_unless_present = "from_manifest")]
    pub dev: Option<PathBuf>,
    /// Rerun a previous experiment exactly as its manifest records it.
    #[arg(long)]
    pub from_manifest: Option<PathBuf>,
    /// Override the config's base seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the config's total epoch count.
    #[arg(long)]
    pub epochs: Option<u32>,
    /// Override the config's regime name.
    #[arg(long)]
    pub name: Option<String>,
    /// Override (or supply) the pretrained checkpoint path.
    #[arg(long)]
    pub pretrained: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// The effective inputs of a run after merging config, flags, and, for
/// reruns, the stored manifest.
struct TrainPlan {
    regime: RegimeConfig,
    train_path: PathBuf,
    dev_path: PathBuf,
    data_gen_seed: Option<u64>,
}

fn plan_from_flags(args: &TrainArgs) -> Result<TrainPlan> {
    let config_path = args.config.as_ref().expect("clap enforces --config");
    let mut regime = RegimeConfig::load(config_path)?;
    if let Some(seed) = args.seed {
        regime.seeds.base = seed;
    }
    if let Some(epochs) = args.epochs {
        regime.total_epochs = epochs;
    }
    if let Some(name) = &args.name {
        regime.name = name.clone();
    }
    if let Some(pretrained) = &args.pretrained {
        regime.from_best_model = true;
        regime.pretrained = Some(pretrained.clone());
    }
    Ok(TrainPlan {
        regime,
        train_path: args.train.clone().expect("clap enforces --train"),
        dev_path: args.dev.clone().expect("clap enforces --dev"),
        data_gen_seed: None,
    })
}

fn plan_from_manifest(path: &Path) -> Result<TrainPlan> {
    let manifest = ExperimentManifest::load(path)?;
    manifest
        .corpus
        .train
        .verify()
        .context("training corpus drifted; rerun would not reproduce the experiment")?;
    manifest
        .corpus
        .dev
        .verify()
        .context("dev corpus drifted; rerun would not reproduce the experiment")?;
    if let Some(p) = &manifest.corpus.pretrained {
        p.verify()
            .context("pretrained checkpoint drifted; rerun would not reproduce the experiment")?;
    }
    Ok(TrainPlan {
        train_path: PathBuf::from(&manifest.corpus.train.path),
        dev_path: PathBuf::from(&manifest.corpus.dev.path),
        data_gen_seed: manifest.seeds.data_gen,
        regime: manifest.regime,
    })
}

/// Reads the data-generator seed from a corpus sidecar, when one exists.
fn sidecar_seed(corpus_path: &Path) -> Option<u64> {
    let sidecar = corpus_path.with_extension("manifest.json");
    let text = std::fs::read_to_string(sidecar).ok()?;
    let m: SynthManifest = serde_json::from_str(&text).ok()?;
    Some(m.seed)
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut plan = match &args.from_manifest {
        Some(path) => plan_from_manifest(path)?,
        None => plan_from_flags(args)?,
    };
    if plan.data_gen_seed.is_none() {
        plan.data_gen_seed = sidecar_seed(&plan.train_path);
    }
    let out_dir = resolve_out_dir(&args.out)?;
    let (spec, trainer_cfg) = plan.regime.to_spec()?;

    let train = load_coqa(&plan.train_path)
        .with_context(|| format!("cannot load training corpus {}", plan.train_path.display()))?;
    let dev = load_coqa(&plan.dev_path)
        .with_context(|| format!("cannot load dev corpus {}", plan.dev_path.display()))?;
    let pretrained = match &plan.regime.pretrained {
        Some(path) => Some(
            Checkpoint::load(path)
                .with_context(|| format!("cannot load pretrained checkpoint {}", path.display()))?,
        ),
        None => None,
    };

    let seeds = SeedPack::from_base(plan.regime.seeds.base);
    let started_at = now_rfc3339();
    let run = run_regime(&spec, &train, &dev, &trainer_cfg, seeds, pretrained)?;
    let finished_at = now_rfc3339();

    let ckpt_path = out_dir.join("best.ckpt.json");
    run.best.save(&ckpt_path)?;
    let stats_path = out_dir.join("stats.csv");
    std::fs::write(&stats_path, stats_csv(&run.stats))?;

    let manifest = ExperimentManifest {
        manifest_version: MANIFEST_VERSION,
        corpus: CorpusRefs {
            train: FileRef::new(&plan.train_path)?,
            dev: FileRef::new(&plan.dev_path)?,
            pretrained: match &plan.regime.pretrained {
                Some(p) => Some(FileRef::new(p)?),
                None => None,
            },
        },
        seeds: SeedRecord {
            init: seeds.init,
            sampling: seeds.sampling,
            shuffle: seeds.shuffle,
            data_gen: plan.data_gen_seed,
        },
        regime: plan.regime,
        started_at,
        finished_at,
        best_epoch: run.best_epoch,
        best_dev_f1: run.best_dev_f1,
        epochs: run.stats.clone(),
        outputs: OutputPaths {
            checkpoint: ckpt_path.display().to_string(),
            stats_csv: stats_path.display().to_string(),
        },
    };
    let manifest_path = out_dir.join("manifest.json");
    manifest.save(&manifest_path)?;

    println!(
        "trained {} for {} epochs; best epoch {} (dev F1 {:.2})",
        spec.name,
        spec.total_epochs,
        run.best_epoch,
        run.best_dev_f1
    );
    println!("wrote {}", ckpt_path.display());
    println!("wrote {}", stats_path.display());
    println!("wrote {}", manifest_path.display());
    Ok(())
}

fn stats_csv(stats: &[convqa::trainer::EpochStats]) -> String {
    let mut csv = String::from("epoch,mean_loss,dev_f1,gold_fraction,gold_choices,predicted_choices\n");
    for s in stats {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            s.epoch, s.mean_loss, s.dev_f1, s.gold_fraction, s.gold_choices, s.predicted_choices
        ));
    }
    csv
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Sm,
    Mp,
}

impl From<ModeArg> for InferenceMode {
    fn from(m: ModeArg) -> InferenceMode {
        match m {
            ModeArg::Sm => InferenceMode::Sm,
            ModeArg::Mp => InferenceMode::Mp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Max,
    Loo,
}

impl From<SchemeArg> for ScoringScheme {
    fn from(s: SchemeArg) -> ScoringScheme {
        match s {
            SchemeArg::Max => ScoringScheme::Max,
            SchemeArg::Loo => ScoringScheme::LeaveOneOut,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint to evaluate.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Corpus to evaluate on.
    #[arg(long)]
    pub corpus: PathBuf,
    /// History source: gold answers (sm) or the model's own predictions (mp).
    #[arg(long, value_enum)]
    pub mode: ModeArg,
    /// Reference scoring scheme.
    #[arg(long, value_enum, default_value_t = SchemeArg::Max)]
    pub scheme: SchemeArg,
    /// History turns visible to the model.
    #[arg(long, default_value_t = 2)]
    pub window: usize,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// An evaluation report bound to the corpus it was computed on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub corpus_sha256: String,
    pub mode: String,
    pub scheme: String,
    pub report: EvalReport,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let out_dir = resolve_out_dir(&args.out)?;
    let ckpt = Checkpoint::load(&args.checkpoint)
        .with_context(|| format!("cannot load checkpoint {}", args.checkpoint.display()))?;
    if ckpt.params.dims.vocab_size != ckpt.vocab.len() {
        bail!(
            "checkpoint is inconsistent: parameters cover {} vocabulary entries \
             but the stored vocabulary has {}",
            ckpt.params.dims.vocab_size,
            ckpt.vocab.len()
        );
    }
    let corpus = load_coqa(&args.corpus)
        .with_context(|| format!("cannot load corpus {}", args.corpus.display()))?;
    let corpus_ref = FileRef::new(&args.corpus)?;

    let mode: InferenceMode = args.mode.into();
    let scheme: ScoringScheme = args.scheme.into();
    let results = evaluate_corpus(
        &ckpt.params,
        &ckpt.vocab,
        &corpus,
        mode,
        args.window,
        ckpt.params.dims.max_span_len,
    )?;
    let records = prediction_records(&results);
    let report = aggregate_report(&records, &corpus, scheme)?;

    let pred_path = out_dir.join(format!("predictions-{}.json", mode.label()));
    std::fs::write(&pred_path, serialize_predictions(&records))?;

    let report_file = ReportFile {
        corpus_sha256: corpus_ref.sha256,
        mode: mode.label().to_string(),
        scheme: scheme.label().to_string(),
        report,
    };
    let report_path = out_dir.join(format!(
        "report-{}-{}.json",
        mode.label(),
        scheme.label()
    ));
    let mut text = serde_json::to_string_pretty(&report_file)?;
    text.push('\n');
    std::fs::write(&report_path, text)?;

    println!(
        "{} turns, {} history: EM {:.2}, F1 {:.2} ({} scheme)",
        report_file.report.total_turns,
        match mode {
            InferenceMode::Sm => "gold",
            InferenceMode::Mp => "predicted",
        },
        report_file.report.overall.em,
        report_file.report.overall.f1,
        report_file.scheme
    );
    println!("wrote {}", pred_path.display());
    println!("wrote {}", report_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Report files produced by eval (at least two).
    #[arg(required = true, num_args = 2..)]
    pub reports: Vec<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Flattens a report into ordered (cell label, score) rows.
fn report_cells(report: &EvalReport) -> Vec<(String, CellScore)> {
    let mut rows = vec![("overall".to_string(), report.overall.clone())];
    for (domain, cell) in &report.by_domain {
        rows.push((format!("domain/{domain}"), cell.clone()));
    }
    for (ty, cell) in &report.by_answer_type {
        rows.push((format!("type/{ty}"), cell.clone()));
    }
    for (bucket, breakdown) in &report.by_conversation_length {
        rows.push((format!("conv-length/{bucket}"), breakdown.overall.clone()));
    }
    for (bucket, breakdown) in &report.by_question_length {
        rows.push((format!("question-length/{bucket}"), breakdown.overall.clone()));
    }
    rows
}

pub fn cmd_compare(args: &CompareArgs) -> Result<()> {
    let out_dir = resolve_out_dir(&args.out)?;
    let mut names = Vec::new();
    let mut files = Vec::new();
    for path in &args.reports {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read report {}", path.display()))?;
        let file: ReportFile = serde_json::from_str(&text)
            .with_context(|| format!("cannot parse report {}", path.display()))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        names.push(name);
        files.push(file);
    }

    let first = &files[0];
    for (i, file) in files.iter().enumerate().skip(1) {
        if file.corpus_sha256 != first.corpus_sha256 {
            bail!(
                "reports disagree on the corpus: {} was computed on sha256 {} \
                 but {} on {}; comparisons require a shared corpus",
                names[0],
                first.corpus_sha256,
                names[i],
                file.corpus_sha256
            );
        }
        if file.scheme != first.scheme {
            bail!(
                "reports disagree on the scoring scheme ({} uses {}, {} uses {}); \
                 comparisons require a shared scheme",
                names[0],
                first.scheme,
                names[i],
                file.scheme
            );
        }
    }

    let per_report: Vec<BTreeMap<String, CellScore>> = files
        .iter()
        .map(|f| report_cells(&f.report).into_iter().collect())
        .collect();
    let rows = report_cells(&first.report);
    for (i, cells) in per_report.iter().enumerate().skip(1) {
        let ours: Vec<&String> = cells.keys().collect();
        let base: Vec<&String> = per_report[0].keys().collect();
        if ours != base {
            bail!(
                "reports partition the corpus differently: {} has cells [{}] \
                 but {} has [{}]",
                names[0],
                base.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", "),
                names[i],
                ours.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
            );
        }
    }

    // CSV: one row per cell, one F1 column per report, then deltas
    // against the first report.
    let mut csv = String::from("cell");
    for n in &names {
        csv.push_str(&format!(",f1_{n}"));
    }
    for n in names.iter().skip(1) {
        csv.push_str(&format!(",delta_{n}"));
    }
    csv.push('\n');
    for (label, _) in &rows {
        csv.push_str(label);
        let base = per_report[0][label].f1;
        for cells in &per_report {
            csv.push_str(&format!(",{}", cells[label].f1));
        }
        for cells in per_report.iter().skip(1) {
            csv.push_str(&format!(",{}", cells[label].f1 - base));
        }
        csv.push('\n');
    }

    // Aligned text table.
    let label_width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(4).max(4);
    let col_width = names.iter().map(|n| n.len()).max().unwrap_or(8).max(8);
    let mut text = format!("{:label_width$}", "cell");
    for n in &names {
        text.push_str(&format!("  {n:>col_width$}"));
    }
    for n in names.iter().skip(1) {
        text.push_str(&format!("  {:>col_width$}", format!("Δ {n}")));
    }
    text.push('\n');
    for (label, _) in &rows {
        text.push_str(&format!("{label:label_width$}"));
        let base = per_report[0][label].f1;
        for cells in &per_report {
            text.push_str(&format!("  {:>col_width$.2}", cells[label].f1));
        }
        for cells in per_report.iter().skip(1) {
            text.push_str(&format!("  {:>+col_width$.2}", cells[label].f1 - base));
        }
        text.push('\n');
    }

    let csv_path = out_dir.join("compare.csv");
    std::fs::write(&csv_path, &csv)?;
    let text_path = out_dir.join("compare.txt");
    std::fs::write(&text_path, &text)?;
    print!("{text}");
    println!("wrote {}", csv_path.display());
    println!("wrote {}", text_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Corpus file to check.
    #[arg(long)]
    pub corpus: PathBuf,
}

pub fn cmd_validate(args: &ValidateArgs) -> Result<()> {
    let corpus = load_coqa(&args.corpus)
        .with_context(|| format!("{} failed validation", args.corpus.display()))?;
    let turns: usize = corpus.iter().map(|c| c.turns.len()).sum();
    let mut by_domain: BTreeMap<&str, usize> = BTreeMap::new();
    for conv in &corpus {
        *by_domain.entry(conv.domain.label()).or_default() += 1;
    }
    println!(
        "{}: {} conversations, {} turns",
        args.corpus.display(),
        corpus.len(),
        turns
    );
    for (domain, count) in by_domain {
        println!("  {domain}: {count}");
    }
    Ok(())
}
