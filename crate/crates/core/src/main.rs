use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use biasbench::classifier::{load_checkpoint, predict_scores_batch, save_checkpoint, TrainConfig};
use biasbench::corpus::{compute_distribution_stats, Record, SplitRatios, Task};
use biasbench::featurize::FeaturizerConfig;
use biasbench::harness::{
    self, emit_distribution_report, emit_table, write_atomic, write_score_file,
    write_table, AuditOptions, Condition, ConfigFile, DataSource, ExperimentConfig,
    GroupAttribute, HarnessError, ScoreFile, SplitMark, TableFormat,
};
use biasbench::synthdata::{generate, write_csv, SynthConfig};

#[derive(Parser)]
#[command(name = "biasbench", version, about = "Measure and mitigate gender bias in text classifiers")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct Common {
    /// Corpus file (CSV or JSONL with bio, gender, profession fields)
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Pre-split corpus as TRAIN,DEV,TEST files; used as given instead of re-splitting
    #[arg(long, global = true, value_delimiter = ',', num_args = 1..)]
    data_splits: Option<Vec<PathBuf>>,
    /// TOML file with synthetic corpus parameters; used when --data is absent
    #[arg(long, global = true)]
    synth_config: Option<PathBuf>,
    /// Master seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma-separated tasks: gender, profession
    #[arg(long, global = true, value_delimiter = ',')]
    tasks: Option<Vec<Task>>,
    /// Comma-separated conditions: baseline, oversampling, loss_weighting, postproc_eo
    #[arg(long, global = true, value_delimiter = ',', value_parser = parse_condition)]
    conditions: Option<Vec<Condition>>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Table format for run-all: csv, json, markdown or all
    #[arg(long, global = true)]
    format: Option<String>,
    /// TOML config file; command-line flags take precedence over it
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Oversample joint (label, gender) cells instead of the label alone
    #[arg(long, global = true)]
    joint_balance: bool,
    /// Group attribute for the gender task: gender or profession
    #[arg(long, global = true, value_parser = parse_group)]
    gender_task_group: Option<GroupAttribute>,
}

fn parse_condition(s: &str) -> Result<Condition, String> {
    s.parse().map_err(|e: HarnessError| e.to_string())
}

fn parse_group(s: &str) -> Result<GroupAttribute, String> {
    s.parse().map_err(|e: HarnessError| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Load, normalize and split a corpus; write splits and distribution statistics
    Prep,
    /// Generate a synthetic corpus and its ground-truth sidecar
    Synth {
        /// Number of records (overrides the synth config)
        #[arg(long)]
        n: Option<usize>,
    },
    /// Train one (task, condition) model and save a checkpoint
    Train {
        #[arg(long, default_value = "profession")]
        task: Task,
        #[arg(long, default_value = "baseline", value_parser = parse_condition)]
        condition: Condition,
    },
    /// Score dev and test splits with a trained model
    Evaluate {
        /// Output directory of a previous `train`
        #[arg(long)]
        model_dir: PathBuf,
    },
    /// Fit an equalized-odds policy on the dev rows of a score file and apply it to the test rows
    Mitigate {
        #[arg(long)]
        scores: PathBuf,
    },
    /// Run the full task x condition grid
    RunAll,
    /// Compute fairness metrics for an external score file
    Audit {
        #[arg(long)]
        scores: PathBuf,
        /// Skip equalized-odds post-processing even if the file has a split column
        #[arg(long)]
        no_mitigate: bool,
    },
}

/// Everything needed to rebuild a trained model's data and features.
#[derive(Debug, Serialize, Deserialize)]
struct RunInfo {
    task: Task,
    condition: Condition,
    seed: u64,
    cell_seed: u64,
    source: DataSource,
    split: SplitRatios,
    featurizer: FeaturizerConfig,
    train: TrainConfig,
    gender_task_group: GroupAttribute,
    joint_balance: bool,
    gender_labels: Vec<String>,
    profession_labels: Vec<String>,
}

fn usage(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

fn load_synth_config(path: &Path) -> Result<SynthConfig, HarnessError> {
    let s = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    toml::from_str(&s).map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// Defaults, then the config file, then command-line flags.
fn experiment_config(c: &Common) -> Result<ExperimentConfig, HarnessError> {
    let file = match &c.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let mut cfg = ExperimentConfig::new(DataSource::Synth(SynthConfig::default()));
    let mut have_source = file.data.is_some() || file.data_splits.is_some() || file.synth.is_some();
    file.apply(&mut cfg);
    if let Some(p) = &c.synth_config {
        cfg.source = DataSource::Synth(load_synth_config(p)?);
        have_source = true;
    }
    if let Some(p) = &c.data {
        cfg.source = DataSource::Corpus(p.clone());
        have_source = true;
    }
    if let Some(v) = &c.data_splits {
        let paths: [PathBuf; 3] = v
            .clone()
            .try_into()
            .map_err(|_| usage("--data-splits takes exactly three files: TRAIN,DEV,TEST"))?;
        cfg.source = DataSource::PreSplit(paths);
        have_source = true;
    }
    if !have_source {
        return Err(usage(
            "no data source: pass --data, --data-splits, --synth-config, or set one in --config",
        ));
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(t) = &c.tasks {
        cfg.tasks = t.clone();
    }
    if let Some(v) = &c.conditions {
        cfg.conditions = v.clone();
    }
    if c.joint_balance {
        cfg.joint_balance = true;
    }
    if let Some(g) = c.gender_task_group {
        cfg.gender_task_group = g;
    }
    if let Some(d) = &c.out_dir {
        cfg.out_dir = Some(d.clone());
    }
    if cfg.out_dir.is_none() {
        cfg.out_dir = Some(PathBuf::from("out"));
    }
    Ok(cfg)
}

fn formats(c: &Common, file_format: Option<&str>) -> Result<Vec<TableFormat>, HarnessError> {
    match c.format.as_deref().or(file_format) {
        None | Some("all") => Ok(TableFormat::ALL.to_vec()),
        Some(f) => f.split(',').map(str::parse).collect(),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, HarnessError> {
    let s = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(serde_json::from_str(&s)?)
}

fn write_split(path: &Path, recs: &[Record], info: &harness::Dataset) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["bio", "gender", "profession"])?;
    for r in recs {
        w.write_record([
            r.text.as_str(),
            info.gender_map.name(r.gender_id).unwrap_or("?"),
            info.profession_map.name(r.profession_id).unwrap_or("?"),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| usage(e.to_string()))?;
    write_atomic(path, &bytes)
}

fn out_dir(cfg: &ExperimentConfig) -> &Path {
    cfg.out_dir.as_deref().expect("set by experiment_config")
}

fn cmd_prep(c: &Common) -> Result<(), HarnessError> {
    let cfg = experiment_config(c)?;
    let data = harness::load_dataset(&cfg.source)?;
    let splits = data.split(cfg.split, cfg.seed)?;
    let dir = out_dir(&cfg);
    for (name, recs) in splits.parts() {
        write_split(&dir.join(format!("{name}.csv")), recs, &data)?;
    }
    let stats = compute_distribution_stats(&splits, data.profession_map.len());
    emit_distribution_report(&stats, &data.gender_map, &data.profession_map, dir)?;
    write_json(
        &dir.join("labels.json"),
        &serde_json::json!({
            "gender": data.gender_map.names(),
            "profession": data.profession_map.names(),
        }),
    )?;
    if let Some(load) = &data.load {
        write_json(&dir.join("load_summary.json"), load)?;
        eprintln!(
            "loaded {} rows, dropped {} with missing fields, {} malformed",
            load.raw_rows, load.dropped_missing, load.malformed
        );
    }
    for s in &stats.splits {
        println!(
            "{:5} n={:6} {} {:.1}% / {} {:.1}%",
            s.split,
            s.total,
            data.gender_map.name(0).unwrap_or("?"),
            s.gender_pct[0],
            data.gender_map.name(1).unwrap_or("?"),
            s.gender_pct[1]
        );
    }
    Ok(())
}

fn cmd_synth(c: &Common, n: Option<usize>) -> Result<(), HarnessError> {
    let file = match &c.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let mut sc = match &c.synth_config {
        Some(p) => load_synth_config(p)?,
        None => file.synth.unwrap_or_default(),
    };
    if let Some(s) = c.seed.or(file.seed) {
        sc.seed = s;
    }
    if let Some(n) = n {
        sc.n = n;
    }
    let corpus = generate(&sc)?;
    let dir = c.out_dir.clone().or(file.out_dir).unwrap_or_else(|| PathBuf::from("out"));
    let mut buf = Vec::new();
    write_csv(&mut buf, &corpus.raw)?;
    let csv_path = dir.join("corpus.csv");
    write_atomic(&csv_path, &buf)?;
    write_json(&dir.join("corpus.truth.json"), &corpus.truth)?;
    println!("wrote {} records to {}", corpus.raw.len(), csv_path.display());
    Ok(())
}

fn cmd_train(c: &Common, task: Task, condition: Condition) -> Result<(), HarnessError> {
    if condition == Condition::PostprocEo {
        return Err(usage(
            "postproc_eo is applied after training: train a baseline, then evaluate and mitigate",
        ));
    }
    let cfg = experiment_config(c)?;
    cfg.validate()?;
    let p = harness::prepare(&cfg)?;
    let plan = harness::plan_cell(&p, &cfg, task, condition)?;
    let (model, report) = harness::fit_cell(&p, &cfg, &plan)?;
    let dir = out_dir(&cfg);
    let mut buf = Vec::new();
    save_checkpoint(&mut buf, &model, cfg.featurizer.fingerprint())
        .map_err(|e| usage(e.to_string()))?;
    write_atomic(&dir.join("model.bin"), &buf)?;
    write_json(&dir.join("train_report.json"), &report)?;
    let info = RunInfo {
        task,
        condition,
        seed: cfg.seed,
        cell_seed: plan.seed,
        source: cfg.source.clone(),
        split: cfg.split,
        featurizer: cfg.featurizer,
        train: cfg.train,
        gender_task_group: cfg.gender_task_group,
        joint_balance: cfg.joint_balance,
        gender_labels: p.dataset.gender_map.names().to_vec(),
        profession_labels: p.dataset.profession_map.names().to_vec(),
    };
    write_json(&dir.join("run.json"), &info)?;
    for e in &report.epochs {
        println!(
            "epoch {} train_loss {:.4} dev_loss {:.4} dev_macro_f1 {:.4}",
            e.epoch, e.train_loss, e.dev_loss, e.dev_macro_f1
        );
    }
    println!("best epoch {}", report.best_epoch);
    Ok(())
}

fn cmd_evaluate(c: &Common, model_dir: &Path) -> Result<(), HarnessError> {
    let info: RunInfo = read_json(&model_dir.join("run.json"))?;
    let mut cfg = ExperimentConfig::new(info.source.clone());
    cfg.seed = info.seed;
    cfg.split = info.split;
    cfg.featurizer = info.featurizer;
    cfg.gender_task_group = info.gender_task_group;
    let dir = c.out_dir.clone().unwrap_or_else(|| model_dir.to_path_buf());
    let ckpt = model_dir.join("model.bin");
    let bytes = fs::read(&ckpt).map_err(|e| HarnessError::io(&ckpt, e))?;
    let (model, _) = load_checkpoint(&bytes[..], Some(cfg.featurizer.fingerprint()))?;

    let p = harness::prepare(&cfg)?;
    let attr = cfg.group_attribute(info.task);
    let mut file = ScoreFile {
        y_true: Vec::new(),
        group: Vec::new(),
        group_names: None,
        split: Some(Vec::new()),
        scores: Some(Vec::new()),
        y_pred: None,
        num_classes: model.num_classes(),
    };
    for (recs, feats, mark) in [
        (&p.splits.dev, &p.features[1], SplitMark::Dev),
        (&p.splits.test, &p.features[2], SplitMark::Test),
    ] {
        let scores = predict_scores_batch(&model, feats)?;
        file.y_true.extend(harness::labels(recs, info.task));
        file.group.extend(harness::groups(recs, attr));
        file.split.as_mut().unwrap().extend(std::iter::repeat_n(mark, recs.len()));
        file.scores.as_mut().unwrap().extend(scores);
    }
    let scores_path = dir.join("scores.csv");
    write_score_file(&scores_path, &file)?;
    let out = harness::audit_score_file(
        &file,
        &AuditOptions {
            mitigate: false,
            ..Default::default()
        },
    )?;
    let mut report = out.report;
    report.condition = info.condition.display().to_string();
    report.task = info.task.display().to_string();
    write_json(&dir.join("report.json"), &report)?;
    println!(
        "test accuracy {:.3} macro-F1 {:.3} DPD {:.3} EOD {:.3}",
        report.accuracy, report.macro_f1, report.dpd, report.eod
    );
    println!("scores written to {}", scores_path.display());
    Ok(())
}

fn cmd_audit(c: &Common, scores: &Path, mitigate: bool, require_split: bool) -> Result<(), HarnessError> {
    let file = match &c.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let opts = AuditOptions {
        grid_resolution: file.grid_resolution.unwrap_or(100),
        seed: c.seed.or(file.seed).unwrap_or(0),
        mitigate,
    };
    let sf = harness::read_score_file(scores)?;
    if require_split && (sf.split.is_none() || sf.scores.is_none()) {
        return Err(HarnessError::SchemaMismatch(
            "mitigate needs a split column and score_0..score_{K-1} columns".into(),
        ));
    }
    let out = harness::audit_score_file(&sf, &opts)?;
    let dir = c.out_dir.clone().or(file.out_dir).unwrap_or_else(|| PathBuf::from("out"));
    let print = |label: &str, r: &biasbench::fairmetrics::FairnessReport| {
        println!(
            "{label:12} accuracy {:.3} macro-F1 {:.3} DPD {:.3} EOD {:.3}",
            r.accuracy, r.macro_f1, r.dpd, r.eod
        );
        for f in &r.flags {
            println!("  note: {f}");
        }
    };
    print("supplied", &out.report);
    if let Some(m) = &out.mitigated {
        print("post-proc EO", m);
    }
    if let (Some(policy), Some(pred)) = (&out.policy, &out.mitigated_predictions) {
        write_json(&dir.join("policy.json"), policy)?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["row", "y_true", "group", "y_pred"])?;
        let test_rows = sf
            .split
            .as_ref()
            .map(|s| (0..sf.len()).filter(|&i| s[i] == SplitMark::Test).collect())
            .unwrap_or_else(|| (0..sf.len()).collect::<Vec<_>>());
        for (&i, p) in test_rows.iter().zip(pred) {
            w.write_record([i.to_string(), sf.y_true[i].to_string(), sf.group[i].to_string(), p.to_string()])?;
        }
        let bytes = w.into_inner().map_err(|e| usage(e.to_string()))?;
        write_atomic(&dir.join("mitigated_predictions.csv"), &bytes)?;
    }
    write_json(&dir.join(if require_split { "mitigation_report.json" } else { "audit_report.json" }), &out)?;
    Ok(())
}

fn cmd_run_all(c: &Common) -> Result<(), HarnessError> {
    let file_format = match &c.config {
        Some(p) => ConfigFile::load(p)?.format,
        None => None,
    };
    let fmts = formats(c, file_format.as_deref())?;
    let cfg = experiment_config(c)?;
    cfg.validate()?;
    let p = harness::prepare(&cfg)?;
    let table = harness::run_prepared(&cfg, &p)?;
    let dir = out_dir(&cfg);
    for f in &fmts {
        write_table(&table, *f, dir)?;
    }
    let stats = compute_distribution_stats(&p.splits, p.dataset.profession_map.len());
    emit_distribution_report(&stats, &p.dataset.gender_map, &p.dataset.profession_map, dir)?;
    print!("{}", emit_table(&table, TableFormat::Markdown)?);
    for row in &table.rows {
        if let Some(e) = &row.error {
            eprintln!("{}/{} failed: {e}", row.task.key(), row.condition.key());
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let c = &cli.common;
    match cli.command {
        Command::Prep => cmd_prep(c),
        Command::Synth { n } => cmd_synth(c, n),
        Command::Train { task, condition } => cmd_train(c, task, condition),
        Command::Evaluate { model_dir } => cmd_evaluate(c, &model_dir),
        Command::Mitigate { scores } => cmd_audit(c, &scores, true, true),
        Command::RunAll => cmd_run_all(c),
        Command::Audit { scores, no_mitigate } => cmd_audit(c, &scores, !no_mitigate, false),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
