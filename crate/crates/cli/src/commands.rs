use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use mgt_core::data::{generate_synthetic, read_events, split, write_events, EventGraph, FeatureMask, FeatureScaler};
use mgt_core::explain::{
    aggregate_attention, diagnostics_csv, expert_specialization, export_bars, export_heatmaps, feature_ablation,
    FeatureGroup, SubsetSelector,
};
use mgt_core::model::{prepare_all, Checkpoint, Model, ModelKind, PreparedEvent};
use mgt_core::seeded_rng;
use mgt_core::training::{aggregate, curve_csv, evaluate, train, EpochLog, MetricsReport};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::manifest::ManifestBuilder;
use crate::{AblateArgs, EvalArgs, ExplainArgs, GenArgs, TrainArgs, TrainOverrides};

fn write(path: &Path, content: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, content).map_err(CliError::io(path))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(CliError::io(path))
}

fn json(value: &impl Serialize) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

fn resolve_config(path: Option<&Path>, flags: &TrainOverrides) -> Result<RunConfig, CliError> {
    let mut config = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(kind) = flags.model {
        config.model.kind = kind;
    }
    if let Some(seeds) = &flags.seeds {
        config.train.seeds = seeds.clone();
    }
    if let Some(e) = flags.epochs {
        config.train.epochs = e;
    }
    if let Some(b) = flags.batch_size {
        config.train.batch_size = b;
    }
    if let Some(w) = flags.w_load {
        config.train.w_load = w;
    }
    if let Some(lr) = flags.learning_rate {
        config.train.learning_rate = lr;
    }
    config.validate()
}

pub fn gen(args: &GenArgs) -> Result<(), CliError> {
    let mut manifest = ManifestBuilder::start("gen");
    let events = generate_synthetic(args.n_signal, args.n_background, args.seed);
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_events(&args.out, &events)?;
    let root = args.out.parent().unwrap_or(Path::new(""));
    manifest.output(root, &args.out)?;
    let manifest_path = PathBuf::from(format!("{}.manifest.json", args.out.display()));
    manifest.finish(&manifest_path)?;
    println!("wrote {} events to {}", events.len(), args.out.display());
    Ok(())
}

/// Per-seed metrics file.
#[derive(Debug, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub model: ModelKind,
    pub seed: u64,
    pub epochs: usize,
    pub test: MetricsReport,
}

struct SeedOutcome {
    seed: u64,
    model: Model,
    curve: Vec<EpochLog>,
    metrics: MetricsReport,
}

fn train_seeds(
    config: &RunConfig,
    train_set: &[PreparedEvent],
    test_set: &[PreparedEvent],
    jobs: usize,
) -> Result<Vec<SeedOutcome>, CliError> {
    let run_one = |seed: u64| -> Result<SeedOutcome, CliError> {
        let mut model = Model::new(config.model.clone(), &mut seeded_rng(seed))?;
        let curve = train(&mut model, &config.train, train_set, Some(test_set), seed)?;
        let metrics = evaluate(&model, test_set, config.train.batch_size)?;
        Ok(SeedOutcome {
            seed,
            model,
            curve,
            metrics,
        })
    };
    let seeds = &config.train.seeds;
    if jobs <= 1 {
        return seeds.iter().map(|&s| run_one(s)).collect();
    }
    let chunk = seeds.len().div_ceil(jobs);
    std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .chunks(chunk)
            .map(|part| scope.spawn(|| part.iter().map(|&s| run_one(s)).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("training thread panicked"))
            .collect()
    })
}

/// Attention heatmaps over every event of `set` and, for expert models, the
/// specialization table.
fn write_explanations(
    model: &Model,
    set: &[PreparedEvent],
    selector: SubsetSelector,
    batch_size: usize,
    dir: &Path,
) -> Result<Vec<PathBuf>, CliError> {
    let mut written = Vec::new();
    if matches!(model.kind(), ModelKind::Mgt | ModelKind::Gt) {
        let summaries = aggregate_attention(model, set, selector, batch_size)?;
        written.extend(export_heatmaps(&summaries, dir)?);
    }
    if model.kind() == ModelKind::Mgt {
        let table = expert_specialization(model, set, batch_size)?;
        written.push(export_bars(&table, dir)?);
    }
    Ok(written)
}

pub fn train_command(args: &TrainArgs) -> Result<(), CliError> {
    let mut manifest = ManifestBuilder::start("train");
    let config = resolve_config(args.config.as_deref(), &args.overrides)?;
    manifest.config(&config);
    let events = read_events(&args.data)?;
    manifest.input(&args.data)?;
    let f = config.split.train_fraction;
    let (train_events, test_events) = split(&events, (f, 1.0 - f), config.split.seed)?;
    let scaler = FeatureScaler::fit(&train_events)?;
    let train_set = prepare_all(&train_events, &scaler, &FeatureMask::none());
    let test_set = prepare_all(&test_events, &scaler, &FeatureMask::none());

    let outcomes = train_seeds(&config, &train_set, &test_set, args.jobs)?;

    let out = &args.out;
    create_dir(out)?;
    let test_path = out.join("test.jsonl");
    write_events(&test_path, &test_events)?;
    manifest.output(out, &test_path)?;
    let config_path = out.join("config.toml");
    write(&config_path, config.to_toml())?;
    manifest.output(out, &config_path)?;
    for o in &outcomes {
        let dir = out.join(format!("seed_{}", o.seed));
        create_dir(&dir)?;
        let ck = dir.join("checkpoint.json");
        Checkpoint::new(&o.model, &scaler, o.seed).save(&ck)?;
        let metrics = dir.join("metrics.json");
        write(
            &metrics,
            json(&SeedMetrics {
                model: config.model.kind,
                seed: o.seed,
                epochs: config.train.epochs,
                test: o.metrics.clone(),
            }),
        )?;
        let loss = dir.join("loss.csv");
        write(&loss, curve_csv(&o.curve))?;
        for p in [ck, metrics, loss] {
            manifest.output(out, &p)?;
        }
        let explain_dir = dir.join("explain");
        create_dir(&explain_dir)?;
        let selector = SubsetSelector::new(mgt_core::explain::Subset::TestAll);
        for p in write_explanations(&o.model, &test_set, selector, config.train.batch_size, &explain_dir)? {
            manifest.output(out, &p)?;
        }
        println!(
            "seed {}: test auc {:.4} accuracy {:.4} f1 {:.4}",
            o.seed, o.metrics.auc, o.metrics.accuracy, o.metrics.f1
        );
    }
    let reports: Vec<MetricsReport> = outcomes.iter().map(|o| o.metrics.clone()).collect();
    let summary = out.join("summary.json");
    write(&summary, json(&aggregate(&reports)))?;
    manifest.output(out, &summary)?;
    manifest.finish(&out.join("manifest.json"))?;
    Ok(())
}

fn load_for_inference(checkpoint: &Path, data: &Path) -> Result<(Model, Vec<EventGraph>, Vec<PreparedEvent>), CliError> {
    let ck = Checkpoint::load(checkpoint)?;
    let model = ck.model()?;
    let events = read_events(data)?;
    let set = prepare_all(&events, &ck.scaler, &FeatureMask::none());
    Ok((model, events, set))
}

pub fn eval(args: &EvalArgs) -> Result<(), CliError> {
    let (model, _, set) = load_for_inference(&args.checkpoint, &args.data)?;
    let report = evaluate(&model, &set, args.batch_size)?;
    let text = json(&report);
    if let Some(path) = &args.out {
        write(path, &text)?;
    }
    print!("{text}");
    Ok(())
}

pub fn explain(args: &ExplainArgs) -> Result<(), CliError> {
    let mut manifest = ManifestBuilder::start("explain");
    let (model, events, set) = load_for_inference(&args.checkpoint, &args.data)?;
    manifest.input(&args.checkpoint)?;
    manifest.input(&args.data)?;
    let subset = args.subset.parse().map_err(CliError::Usage)?;
    let selector = SubsetSelector {
        subset,
        n_nodes: args.nodes,
    };
    create_dir(&args.out)?;
    let written = write_explanations(&model, &set, selector, args.batch_size, &args.out)?;
    let scores = model.predict(&set, args.batch_size)?;
    let diag = args.out.join("diagnostics.csv");
    write(&diag, diagnostics_csv(&events, &scores))?;
    for p in written.iter().chain([&diag]) {
        manifest.output(&args.out, p)?;
    }
    manifest.finish(&args.out.join("manifest.json"))?;
    println!("wrote {} files to {}", written.len() + 1, args.out.display());
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroupsFile {
    group: Vec<FeatureGroup>,
}

pub fn ablate(args: &AblateArgs) -> Result<(), CliError> {
    let mut manifest = ManifestBuilder::start("ablate");
    let config = resolve_config(args.config.as_deref(), &args.overrides)?;
    manifest.config(&config);
    let text = fs::read_to_string(&args.groups_file)
        .map_err(|e| CliError::Config(vec![format!("{}: {e}", args.groups_file.display())]))?;
    let groups: GroupsFile =
        toml::from_str(&text).map_err(|e| CliError::Config(vec![format!("groups file: {}", e.message())]))?;
    let events = read_events(&args.data)?;
    manifest.input(&args.data)?;
    manifest.input(&args.groups_file)?;
    let f = config.split.train_fraction;
    let (train_events, test_events) = split(&events, (f, 1.0 - f), config.split.seed)?;
    let table = feature_ablation(&config.experiment(), &train_events, &test_events, &groups.group)?;

    let mut csv = String::from("group,features,auc,delta\n");
    for r in &table.rows {
        writeln!(csv, "{},{},{},{}", r.group, r.features.join(";"), r.auc, r.delta).unwrap();
    }
    create_dir(&args.out)?;
    let csv_path = args.out.join("ablation.csv");
    write(&csv_path, &csv)?;
    let json_path = args.out.join("ablation.json");
    write(&json_path, json(&table))?;
    manifest.output(&args.out, &csv_path)?;
    manifest.output(&args.out, &json_path)?;
    manifest.finish(&args.out.join("manifest.json"))?;
    println!("baseline auc {:.4}", table.baseline_auc);
    for r in &table.rows {
        println!("{:>24}  auc {:.4}  delta {:+.4}", r.group, r.auc, r.delta);
    }
    Ok(())
}
