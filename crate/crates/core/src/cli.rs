//! Command-line front end. Every command is deterministic given its flags.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::blackout::{BlackoutMode, BlackoutSpec};
use crate::config::KvConfig;
use crate::dataset::{make_split_from_ids, read_ids, DatasetReader, DatasetSplit, DatasetWriter, Segment};
use crate::error::{Error, Result};
use crate::labeler::{label_scenario, LabelerConfig};
use crate::lof::{featurize_trajectory, lof_evaluate, LofConfig};
use crate::metrics::{roc_auc, write_roc_csv, MetricsReport};
use crate::model::{Hyperparams, ModelParams};
use crate::scenario::AnomalyType;
use crate::sim::{generate_indexed, GenConfig};
use crate::train::{evaluate, read_predictions, train, write_csv, SampleStore, TrainConfig};

pub const DEFAULT_FRACTIONS: (f64, f64, f64) = (0.8, 0.1, 0.1);

#[derive(Debug, Parser)]
#[command(name = "cpad", version, about = "Cooperative-perception trajectory anomaly detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate labeled scenarios into a JSONL dataset.
    Generate(GenerateArgs),
    /// Recompute rule labels for every trajectory of a dataset.
    Label(LabelArgs),
    /// Train a model on the train segment, selecting on validation F1.
    Train(TrainArgs),
    /// Evaluate a model on one split segment, optionally under blackout.
    Eval(EvalArgs),
    /// Evaluate a model over a grid of blackout modes, rates and seeds.
    BlackoutSweep(SweepArgs),
    /// ROC curve from a per-sample prediction CSV.
    Roc(RocArgs),
    /// Local Outlier Factor baseline on trajectory summaries.
    BaselineLof(LofArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub scenarios: usize,
    #[arg(long)]
    pub agents: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Key/value file with generator and labeler settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Where the train/val/test split comes from.
#[derive(Debug, Clone, Args)]
pub struct SplitArgs {
    /// Split JSON written by `train --split-out`.
    #[arg(long)]
    pub split_file: Option<PathBuf>,
    /// Seed of the 80/10/10 scenario split used when no file is given.
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model_out: PathBuf,
    /// Per-epoch CSV log (epoch, train_loss, val_f1).
    #[arg(long)]
    pub log_out: Option<PathBuf>,
    #[arg(long)]
    pub split_out: Option<PathBuf>,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Key/value file with training and model settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub pos_weight: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Seeds weight initialization and shuffling.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Blackout applied to training samples.
    #[arg(long)]
    pub train_blackout: Option<ModeArg>,
    /// Training blackout rate in percent.
    #[arg(long, default_value_t = 10.0)]
    pub train_pct: f64,
    #[arg(long, default_value_t = 10)]
    pub train_max_block: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Random,
    Sequential,
}

impl From<ModeArg> for BlackoutMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Random => BlackoutMode::RandomStepwise,
            ModeArg::Sequential => BlackoutMode::Sequential,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepMode {
    Random,
    Sequential,
    Both,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Segment to evaluate: train, val or test.
    #[arg(long, default_value = "test")]
    pub split: Segment,
    #[command(flatten)]
    pub split_source: SplitArgs,
    #[arg(long)]
    pub blackout: Option<ModeArg>,
    /// Blackout rate in percent (2 means 2%).
    #[arg(long, default_value_t = 0.0)]
    pub pct: f64,
    #[arg(long, default_value_t = 10)]
    pub max_block: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Metrics report JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-sample probability CSV.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = SweepMode::Both)]
    pub mode: SweepMode,
    /// Comma-separated blackout rates in percent.
    #[arg(long, value_delimiter = ',', default_value = "2,5,8,10,15,25")]
    pub pcts: Vec<f64>,
    /// Number of mask seeds per rate, starting at `--seed-base`.
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    #[arg(long, default_value_t = 0)]
    pub seed_base: u64,
    #[arg(long, default_value_t = 10)]
    pub max_block: usize,
    #[arg(long, default_value = "test")]
    pub split: Segment,
    #[command(flatten)]
    pub split_source: SplitArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RocArgs {
    /// CSV with `label` and `probability` columns.
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LofArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Segment,
    #[command(flatten)]
    pub split_source: SplitArgs,
    #[arg(long, default_value_t = 20)]
    pub k: usize,
    #[arg(long, default_value_t = 1.5)]
    pub threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
}

fn load_kv(path: Option<&Path>) -> Result<KvConfig> {
    path.map_or_else(|| Ok(KvConfig::default()), KvConfig::load)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn percent(pct: f64) -> Result<f64> {
    if !(0.0..=100.0).contains(&pct) {
        return Err(Error::invalid(format!("blackout percentage {pct} outside [0, 100]")));
    }
    Ok(pct / 100.0)
}

fn blackout_spec(mode: BlackoutMode, pct: f64, max_block: usize, seed: u64) -> Result<BlackoutSpec> {
    if max_block == 0 {
        return Err(Error::invalid("--max-block must be at least 1"));
    }
    Ok(BlackoutSpec {
        mode,
        pct: percent(pct)?,
        max_block,
        seed,
    })
}

/// The split for `data`: read from file or recomputed from scenario ids.
pub fn resolve_split(data: &Path, args: &SplitArgs) -> Result<DatasetSplit> {
    match &args.split_file {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Parse {
                line: e.line(),
                message: e.to_string(),
            })
        }
        None => make_split_from_ids(&read_ids(data)?, DEFAULT_FRACTIONS, args.split_seed),
    }
}

fn segment_store(data: &Path, split: &DatasetSplit, segments: &[Segment], max_range: f64) -> Result<SampleStore> {
    let ids: HashSet<String> = segments.iter().flat_map(|s| split.scenario_ids(*s)).collect();
    SampleStore::load(data, max_range, |id| ids.contains(id))
}

#[derive(Debug, Serialize)]
pub struct GenerateSummary {
    pub scenarios: usize,
    pub agents: usize,
    pub anomalous_fraction: f64,
    /// Share of agents flagged by each detector.
    pub by_type: BTreeMap<String, f64>,
}

pub fn generate(args: &GenerateArgs) -> Result<GenerateSummary> {
    let mut cfg = GenConfig::default();
    let mut kv = load_kv(args.config.as_deref())?;
    cfg.apply(&mut kv)?;
    kv.finish()?;
    if let Some(a) = args.agents {
        cfg.n_agents = a;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;

    let mut writer = DatasetWriter::create(&args.out)?;
    let (mut agents, mut anomalous) = (0usize, 0usize);
    let mut per_type: BTreeMap<AnomalyType, usize> = BTreeMap::new();
    let indices: Vec<usize> = (0..args.scenarios).collect();
    for chunk in indices.chunks(64) {
        let batch: Vec<_> = chunk
            .par_iter()
            .map(|&i| generate_indexed(&cfg, i).map(|o| o.scenario))
            .collect::<Result<_>>()?;
        for s in &batch {
            for a in &s.agents {
                agents += 1;
                if let Some(r) = &a.label {
                    anomalous += r.is_anomalous as usize;
                    for t in r.types() {
                        *per_type.entry(t).or_default() += 1;
                    }
                }
            }
            writer.write(s)?;
        }
    }
    writer.finish()?;
    let share = |c: usize| if agents == 0 { 0.0 } else { c as f64 / agents as f64 };
    Ok(GenerateSummary {
        scenarios: args.scenarios,
        agents,
        anomalous_fraction: share(anomalous),
        by_type: AnomalyType::ALL
            .iter()
            .map(|t| (t.to_string(), share(per_type.get(t).copied().unwrap_or(0))))
            .collect(),
    })
}

pub fn label(args: &LabelArgs) -> Result<usize> {
    let mut cfg = LabelerConfig::default();
    let mut kv = load_kv(args.config.as_deref())?;
    cfg.apply(&mut kv)?;
    kv.finish()?;
    let same = match (fs::canonicalize(&args.data), fs::canonicalize(&args.out)) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    };
    if same {
        return Err(Error::invalid("label --out must differ from --data"));
    }
    let reader = DatasetReader::open(&args.data)?;
    let mut writer = DatasetWriter::create(&args.out)?;
    for s in reader {
        let mut s = s?;
        label_scenario(&mut s, &cfg)?;
        writer.write(&s)?;
    }
    writer.finish()
}

pub fn train_command(args: &TrainArgs) -> Result<ModelParams> {
    let mut tc = TrainConfig::default();
    let mut hyper = Hyperparams::default();
    let mut kv = load_kv(args.config.as_deref())?;
    tc.apply(&mut kv)?;
    hyper.apply(&mut kv)?;
    kv.finish()?;
    if let Some(v) = args.epochs {
        tc.epochs = v;
    }
    if let Some(v) = args.batch_size {
        tc.batch_size = v;
    }
    if let Some(v) = args.lr {
        tc.lr = v;
    }
    if let Some(v) = args.pos_weight {
        tc.pos_weight = v;
    }
    if let Some(v) = args.patience {
        tc.patience = v;
    }
    if let Some(v) = args.seed {
        tc.seed = v;
        hyper.init_seed = v;
    }
    if let Some(mode) = args.train_blackout {
        tc.train_blackout = Some(blackout_spec(mode.into(), args.train_pct, args.train_max_block, tc.seed)?);
    }
    tc.validate()?;

    let split = resolve_split(&args.data, &args.split)?;
    let store = segment_store(&args.data, &split, &[Segment::Train, Segment::Val], hyper.max_range)?;
    let outcome = train(&store, &split, hyper, &tc, |e| {
        eprintln!("epoch {:>3}  train_loss {:.5}  val_f1 {:.4}", e.epoch, e.train_loss, e.val_f1)
    })?;
    outcome.params.save(&args.model_out)?;
    if let Some(p) = &args.log_out {
        write_csv(p, &outcome.log)?;
    }
    if let Some(p) = &args.split_out {
        write_text(p, &serde_json::to_string(&split).expect("split serializes"))?;
    }
    eprintln!("best epoch {}", outcome.best_epoch);
    Ok(outcome.params)
}

pub fn eval_command(args: &EvalArgs) -> Result<MetricsReport> {
    let blackout = args
        .blackout
        .map(|mode| blackout_spec(mode.into(), args.pct, args.max_block, args.seed))
        .transpose()?;
    let params = ModelParams::load(&args.model)?;
    let split = resolve_split(&args.data, &args.split_source)?;
    let store = segment_store(&args.data, &split, &[args.split], params.hyper.max_range)?;
    let ev = evaluate(&params, &store, split.segment(args.split), blackout.as_ref())?;
    write_text(&args.out, &ev.report.to_json())?;
    if let Some(p) = &args.predictions {
        write_csv(p, &ev.predictions)?;
    }
    Ok(ev.report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub mode: String,
    pub pct: f64,
    /// Mask seed, or `mean` for the per-(mode, pct) average.
    pub seed: String,
    pub f1: f64,
    pub auc: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub mcc: f64,
    pub accuracy: f64,
}

fn mean_row(mode: &str, pct: f64, rows: &[SweepRow]) -> SweepRow {
    let n = rows.len() as f64;
    let avg = |f: fn(&SweepRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let auc = rows
        .iter()
        .map(|r| r.auc)
        .collect::<Option<Vec<f64>>>()
        .map(|v| v.iter().sum::<f64>() / n);
    SweepRow {
        mode: mode.to_string(),
        pct,
        seed: "mean".into(),
        f1: avg(|r| r.f1),
        auc,
        precision: avg(|r| r.precision),
        recall: avg(|r| r.recall),
        mcc: avg(|r| r.mcc),
        accuracy: avg(|r| r.accuracy),
    }
}

/// Per-seed rows for every (mode, pct), each followed by its mean row.
pub fn blackout_sweep(
    params: &ModelParams,
    store: &SampleStore,
    keys: &[crate::dataset::SampleKey],
    modes: &[BlackoutMode],
    pcts: &[f64],
    seeds: &[u64],
    max_block: usize,
) -> Result<Vec<SweepRow>> {
    if seeds.is_empty() {
        return Err(Error::invalid("blackout sweep needs at least one seed"));
    }
    let mut out = Vec::new();
    for &mode in modes {
        for &pct in pcts {
            let mut rows = Vec::with_capacity(seeds.len());
            for &seed in seeds {
                let spec = blackout_spec(mode, pct, max_block, seed)?;
                let r = evaluate(params, store, keys, Some(&spec))?.report;
                rows.push(SweepRow {
                    mode: mode.as_str().to_string(),
                    pct,
                    seed: seed.to_string(),
                    f1: r.f1,
                    auc: r.auc,
                    precision: r.precision,
                    recall: r.recall,
                    mcc: r.mcc,
                    accuracy: r.accuracy,
                });
            }
            let mean = mean_row(mode.as_str(), pct, &rows);
            out.extend(rows);
            out.push(mean);
        }
    }
    Ok(out)
}

pub fn sweep_command(args: &SweepArgs) -> Result<Vec<SweepRow>> {
    let modes: Vec<BlackoutMode> = match args.mode {
        SweepMode::Random => vec![BlackoutMode::RandomStepwise],
        SweepMode::Sequential => vec![BlackoutMode::Sequential],
        SweepMode::Both => BlackoutMode::ALL.to_vec(),
    };
    for &p in &args.pcts {
        blackout_spec(BlackoutMode::Sequential, p, args.max_block, 0)?;
    }
    let params = ModelParams::load(&args.model)?;
    let split = resolve_split(&args.data, &args.split_source)?;
    let store = segment_store(&args.data, &split, &[args.split], params.hyper.max_range)?;
    let seeds: Vec<u64> = (0..args.seeds).map(|i| args.seed_base + i).collect();
    let rows = blackout_sweep(
        &params,
        &store,
        split.segment(args.split),
        &modes,
        &args.pcts,
        &seeds,
        args.max_block,
    )?;
    write_csv(&args.out, &rows)?;
    Ok(rows)
}

pub fn roc_command(args: &RocArgs) -> Result<f64> {
    let (labels, probs) = read_predictions(&args.predictions)?;
    let curve = roc_auc(&labels, &probs)?;
    write_roc_csv(&args.out, &curve.points)?;
    Ok(curve.auc)
}

/// Summary features and labels of every agent in the listed scenarios.
fn lof_points(data: &Path, ids: &HashSet<String>) -> Result<(Vec<Vec<f64>>, Vec<bool>)> {
    let cfg = LabelerConfig::default();
    let (mut points, mut labels) = (Vec::new(), Vec::new());
    for s in DatasetReader::open(data)? {
        let s = s?;
        if !ids.contains(&s.scenario_id) {
            continue;
        }
        for a in &s.agents {
            let y = a
                .label
                .as_ref()
                .ok_or_else(|| Error::Unlabeled(format!("{}/{}", s.scenario_id, a.agent_id)))?;
            points.push(featurize_trajectory(a, s.dt, &cfg).to_vec());
            labels.push(y.is_anomalous);
        }
    }
    Ok((points, labels))
}

/// Fits LOF on the train segment and reports on `segment`. Features are
/// standardized with train statistics.
pub fn lof_report(data: &Path, split: &DatasetSplit, segment: Segment, cfg: &LofConfig) -> Result<MetricsReport> {
    let set = |s: Segment| split.scenario_ids(s).into_iter().collect::<HashSet<_>>();
    let (train_pts, _) = lof_points(data, &set(Segment::Train))?;
    let (test_pts, labels) = lof_points(data, &set(segment))?;
    lof_evaluate(&train_pts, &test_pts, &labels, cfg)
}

pub fn lof_command(args: &LofArgs) -> Result<MetricsReport> {
    let cfg = LofConfig {
        k: args.k,
        threshold: args.threshold,
    };
    cfg.validate()?;
    let split = resolve_split(&args.data, &args.split_source)?;
    let report = lof_report(&args.data, &split, args.split, &cfg)?;
    write_text(&args.out, &report.to_json())?;
    Ok(report)
}

/// Runs one parsed command, printing its summary to stdout.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => {
            let s = generate(&a)?;
            println!("{}", serde_json::to_string_pretty(&s).expect("summary serializes"));
        }
        Command::Label(a) => {
            let n = label(&a)?;
            println!("labeled {n} scenarios");
        }
        Command::Train(a) => {
            train_command(&a)?;
        }
        Command::Eval(a) => {
            println!("{}", eval_command(&a)?.to_json());
        }
        Command::BlackoutSweep(a) => {
            for r in sweep_command(&a)?.iter().filter(|r| r.seed == "mean") {
                println!("{:<10} {:>5}%  f1 {:.4}", r.mode, r.pct, r.f1);
            }
        }
        Command::Roc(a) => {
            println!("auc {:.6}", roc_command(&a)?);
        }
        Command::BaselineLof(a) => {
            println!("{}", lof_command(&a)?.to_json());
        }
    }
    Ok(())
}
