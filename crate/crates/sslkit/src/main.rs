//! Command-line entry point: reproducible dataset generation, splitting,
//! training, probing, and evaluation. All randomness flows from `--seed`;
//! identical inputs and seed give bit-identical outputs.

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::Value;
use sslkit::checkpoint::Checkpoint;
use sslkit::data::{
    generate_synthetic, load_dataset, longtail8_spec, marrow_longtail_spec, stratified_kfold,
    write_dataset_packed, write_dataset_png, FoldPlan, LabeledDataset, SyntheticSpec,
};
use sslkit::error::{Error, Result};
use sslkit::eval::{evaluate_model, export_embeddings};
use sslkit::training::{
    self, encoder_from_checkpoint, linear_probe, supcon_checkpoint, supervised_checkpoint,
    supervised_from_checkpoint, swav_checkpoint, train_supcon, train_supervised, train_swav,
    ProbeConfig, Regime, TrainConfig,
};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "sslkit",
    version,
    about = "Representation learning for class-imbalanced image sets",
    long_about = "Deterministic CPU-only training toolkit: balanced/weighted \
cross-entropy (optionally with mixup), self-supervised prototype assignment, \
and supervised contrastive learning, plus linear probing and per-class metrics."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OutputFormat {
    /// PNG images plus manifest.csv
    Png,
    /// single packed binary file (fast to reload)
    Packed,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a spec file or a named preset.
    Generate {
        /// Output dataset directory
        #[arg(long)]
        out: PathBuf,
        /// JSON spec file (image_size, noise_sigma, classes[])
        #[arg(long, conflicts_with = "preset")]
        spec: Option<PathBuf>,
        /// Named preset: marrow-longtail (21 classes, 1/10-scaled supports),
        /// longtail8 (8 classes, 100:1 head:tail, 2000 images), small
        #[arg(long)]
        preset: Option<String>,
        /// Root random seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = OutputFormat::Png)]
        format: OutputFormat,
    },
    /// Write a stratified K-fold plan for a dataset.
    Split {
        /// Dataset directory
        #[arg(long)]
        data: PathBuf,
        /// Number of folds
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// Root random seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output plan path (default: <data>/foldplan.json)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one of the three regimes into a run directory.
    Train {
        /// Dataset directory
        #[arg(long)]
        data: PathBuf,
        /// Run directory to create
        #[arg(long)]
        out: PathBuf,
        /// JSON config file; fields override the preset
        #[arg(long)]
        config: Option<PathBuf>,
        /// Config preset: full-short (supervised, 20 epochs), full-long,
        /// full-mixup, full-swav (eps=0.03, K=1000, queue 1280 from epoch
        /// 15, 2 freeze epochs), full-supcon (tau=0.2), desk-supervised,
        /// desk-swav, desk-supcon
        #[arg(long)]
        preset: Option<String>,
        /// Fold plan file; its held-out fold becomes the validation split
        #[arg(long)]
        foldplan: Option<PathBuf>,
        /// Fold index used for validation
        #[arg(long, default_value_t = 0)]
        fold: usize,
        /// Root random seed (overrides the config's seed)
        #[arg(long)]
        seed: Option<u64>,
        /// Regime override: supervised, swav, supcon
        #[arg(long)]
        regime: Option<String>,
        /// Epoch count override
        #[arg(long)]
        epochs: Option<usize>,
        /// Batch size override
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Train a linear probe on a frozen checkpointed encoder.
    Probe {
        /// Encoder checkpoint (any regime)
        #[arg(long)]
        checkpoint: PathBuf,
        /// Labeled dataset directory
        #[arg(long)]
        data: PathBuf,
        /// Fold plan file
        #[arg(long)]
        foldplan: PathBuf,
        /// Held-out fold index
        #[arg(long, default_value_t = 0)]
        fold: usize,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Root random seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Probe epochs
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        /// Also write embeddings.csv with one latent vector per sample
        #[arg(long)]
        export_embeddings: bool,
    },
    /// Evaluate a classifier checkpoint and write metrics.
    Evaluate {
        /// Checkpoint holding encoder + classifier (train or probe output)
        #[arg(long)]
        checkpoint: PathBuf,
        /// Labeled dataset directory
        #[arg(long)]
        data: PathBuf,
        /// Fold plan file; without it the whole dataset is evaluated
        #[arg(long)]
        foldplan: Option<PathBuf>,
        /// Fold index to evaluate
        #[arg(long, default_value_t = 0)]
        fold: usize,
        /// Output directory for metrics.json and metrics.txt
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    training::init_thread_pool();
    let cli = Cli::parse();
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate {
            out,
            spec,
            preset,
            seed,
            format,
        } => cmd_generate(&out, spec.as_deref(), preset.as_deref(), seed, format),
        Command::Split { data, k, seed, out } => cmd_split(&data, k, seed, out.as_deref()),
        Command::Train {
            data,
            out,
            config,
            preset,
            foldplan,
            fold,
            seed,
            regime,
            epochs,
            batch_size,
        } => {
            let mut overrides: Vec<(&str, Value)> = Vec::new();
            if let Some(s) = seed {
                overrides.push(("seed", Value::from(s)));
            }
            if let Some(r) = regime {
                overrides.push(("regime", Value::from(r)));
            }
            if let Some(e) = epochs {
                overrides.push(("epochs", Value::from(e)));
            }
            if let Some(b) = batch_size {
                overrides.push(("batch_size", Value::from(b)));
            }
            cmd_train(
                &data,
                &out,
                config.as_deref(),
                preset.as_deref(),
                foldplan.as_deref(),
                fold,
                &overrides,
            )
        }
        Command::Probe {
            checkpoint,
            data,
            foldplan,
            fold,
            out,
            seed,
            epochs,
            export_embeddings,
        } => cmd_probe(
            &checkpoint,
            &data,
            &foldplan,
            fold,
            &out,
            seed,
            epochs,
            export_embeddings,
        ),
        Command::Evaluate {
            checkpoint,
            data,
            foldplan,
            fold,
            out,
        } => cmd_evaluate(&checkpoint, &data, foldplan.as_deref(), fold, out.as_deref()),
    }
}

fn cmd_generate(
    out: &Path,
    spec: Option<&Path>,
    preset: Option<&str>,
    seed: u64,
    format: OutputFormat,
) -> Result<()> {
    let spec = match (spec, preset) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let spec: SyntheticSpec = serde_json::from_str(&text)
                .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
            spec
        }
        (None, Some("marrow-longtail")) => marrow_longtail_spec(32),
        (None, Some("longtail8")) => longtail8_spec(32),
        (None, Some("small")) => SyntheticSpec::small_two_class(25),
        (None, Some(other)) => {
            return Err(Error::config(format!(
                "unknown preset {other:?}; known presets: marrow-longtail, longtail8, small"
            )))
        }
        (None, None) => {
            return Err(Error::config("generate needs either --spec or --preset"));
        }
    };
    let dataset = generate_synthetic(&spec, seed)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    match format {
        OutputFormat::Png => write_dataset_png(&dataset, out)?,
        OutputFormat::Packed => write_dataset_packed(&dataset, out)?,
    }
    println!(
        "wrote {} images across {} classes to {} (fingerprint {})",
        dataset.len(),
        dataset.num_classes(),
        out.display(),
        &dataset.fingerprint()[..16]
    );
    Ok(())
}

fn cmd_split(data: &Path, k: usize, seed: u64, out: Option<&Path>) -> Result<()> {
    let dataset = load_dataset(data)?;
    let plan = stratified_kfold(&dataset, k, seed)?;
    let out = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| data.join("foldplan.json"));
    plan.save(&out)?;
    println!("wrote {}-fold plan for {} samples to {}", k, dataset.len(), out.display());
    Ok(())
}

/// Precedence (low to high): built-in defaults, preset, config-file
/// fields, CLI flag overrides.
fn resolve_train_config(
    config_path: Option<&Path>,
    preset_flag: Option<&str>,
    overrides: &[(&str, Value)],
) -> Result<(TrainConfig, Value)> {
    let mut file_value = match config_path {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let v: Value = serde_json::from_str(&text)
                .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
            if !v.is_object() {
                return Err(Error::config(format!(
                    "{}: config must be a JSON object",
                    path.display()
                )));
            }
            v
        }
        None => Value::Object(Default::default()),
    };
    let file_preset = file_value
        .as_object_mut()
        .and_then(|o| o.remove("preset"))
        .map(|v| match v {
            Value::String(s) => Ok(s),
            other => Err(Error::config(format!("preset must be a string, got {other}"))),
        })
        .transpose()?;
    let preset = preset_flag.map(str::to_owned).or(file_preset);
    let base_config = match preset {
        Some(name) => TrainConfig::preset(&name)?,
        None => TrainConfig::default(),
    };
    let mut resolved = serde_json::to_value(&base_config).expect("serializable");
    deep_merge(&mut resolved, &file_value);
    for (key, value) in overrides {
        resolved
            .as_object_mut()
            .expect("object")
            .insert((*key).to_string(), value.clone());
    }
    let config: TrainConfig = serde_json::from_value(resolved.clone())
        .map_err(|e| Error::config(format!("invalid config: {e}")))?;
    config.validate()?;
    Ok((config, resolved))
}

/// Recursively overlay JSON objects; non-objects replace.
fn deep_merge(base: &mut Value, overlay: &Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => deep_merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (base, overlay) => *base = overlay.clone(),
    }
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    resolved_config: Value,
    dataset_fingerprint: String,
    code_version: String,
    started_at_unix: u64,
    finished_at_unix: Option<u64>,
}

impl RunManifest {
    fn now() -> u64 {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    }

    fn new(command: String, resolved_config: Value, fingerprint: String) -> RunManifest {
        RunManifest {
            command,
            resolved_config,
            dataset_fingerprint: fingerprint,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            started_at_unix: Self::now(),
            finished_at_unix: None,
        }
    }

    fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self).expect("serializable");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

/// Exclusive-ownership marker for a run directory. Created with
/// create_new so a second concurrent command fails instead of racing.
struct RunLock {
    path: PathBuf,
}

impl RunLock {
    fn acquire(dir: &Path) -> Result<RunLock> {
        let path = dir.join(".lock");
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(RunLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::data(format!(
                "{}: run directory is locked by another process (delete .lock if stale)",
                dir.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn cmd_train(
    data: &Path,
    out: &Path,
    config_path: Option<&Path>,
    preset: Option<&str>,
    foldplan: Option<&Path>,
    fold: usize,
    overrides: &[(&str, Value)],
) -> Result<()> {
    let (config, resolved) = resolve_train_config(config_path, preset, overrides)?;
    let dataset = load_dataset(data)?;
    let plan = foldplan.map(FoldPlan::load).transpose()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let _lock = RunLock::acquire(out)?;

    let mut manifest = RunManifest::new(
        format!("train --regime {}", config.regime),
        resolved,
        dataset.fingerprint(),
    );
    manifest.save(out)?;

    match config.regime {
        Regime::Supervised => {
            let split = plan.as_ref().map(|p| (p, fold));
            let (model, history) = train_supervised(&config, &dataset, split, Some(out))?;
            supervised_checkpoint(&model).save(&out.join("model.ckpt"))?;
            if let Some((p, f)) = split {
                let val = p.fold_indices(f);
                let report = evaluate_model(
                    &model.encoder,
                    &model.head,
                    &dataset,
                    &val,
                    (&model.stats.0, &model.stats.1),
                )?;
                report.save_json(&out.join("metrics.json"))?;
                println!("{}", report.to_text_table());
            }
            print_final_loss(&history);
        }
        Regime::Swav => {
            let (model, history) = train_swav(&config, &dataset, Some(out))?;
            swav_checkpoint(&model).save(&out.join("model.ckpt"))?;
            print_final_loss(&history);
        }
        Regime::Supcon => {
            let (model, history) = train_supcon(&config, &dataset, Some(out))?;
            supcon_checkpoint(&model).save(&out.join("model.ckpt"))?;
            print_final_loss(&history);
        }
    }
    manifest.finished_at_unix = Some(RunManifest::now());
    manifest.save(out)?;
    println!("run directory: {}", out.display());
    Ok(())
}

fn print_final_loss(history: &sslkit::training::TrainHistory) {
    if let Some(last) = history.records.last() {
        println!("final epoch {} loss {:.6}", last.epoch, last.loss);
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_probe(
    checkpoint: &Path,
    data: &Path,
    foldplan: &Path,
    fold: usize,
    out: &Path,
    seed: u64,
    epochs: usize,
    export: bool,
) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let (encoder, stats) = encoder_from_checkpoint(&ckpt)?;
    let dataset = load_dataset(data)?;
    let plan = FoldPlan::load(foldplan)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let _lock = RunLock::acquire(out)?;

    let probe = ProbeConfig {
        epochs,
        seed,
        ..ProbeConfig::default()
    };
    let mut manifest = RunManifest::new(
        "probe".to_string(),
        serde_json::to_value(&probe).expect("serializable"),
        dataset.fingerprint(),
    );
    manifest.save(out)?;

    let (head, report, history) = linear_probe(&encoder, stats, &dataset, &plan, fold, &probe)?;
    report.save_json(&out.join("metrics.json"))?;
    history.save_csv(&out.join("history.csv"))?;
    let model = sslkit::training::SupervisedModel {
        encoder: encoder.clone(),
        head,
        stats,
        class_names: dataset.class_names().to_vec(),
    };
    supervised_checkpoint(&model).save(&out.join("probe.ckpt"))?;
    if export {
        export_embeddings(
            &encoder,
            &dataset,
            (&stats.0, &stats.1),
            &out.join("embeddings.csv"),
        )?;
    }
    println!("{}", report.to_text_table());
    manifest.finished_at_unix = Some(RunManifest::now());
    manifest.save(out)?;
    Ok(())
}

fn cmd_evaluate(
    checkpoint: &Path,
    data: &Path,
    foldplan: Option<&Path>,
    fold: usize,
    out: Option<&Path>,
) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let model = supervised_from_checkpoint(&ckpt)?;
    let dataset = load_dataset(data)?;
    check_class_names(&model.class_names, &dataset)?;
    let indices: Vec<usize> = match foldplan {
        Some(path) => FoldPlan::load(path)?.fold_indices(fold),
        None => (0..dataset.len()).collect(),
    };
    let report = evaluate_model(
        &model.encoder,
        &model.head,
        &dataset,
        &indices,
        (&model.stats.0, &model.stats.1),
    )?;
    let table = report.to_text_table();
    println!("{table}");
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        report.save_json(&dir.join("metrics.json"))?;
        let txt = dir.join("metrics.txt");
        std::fs::write(&txt, table).map_err(|e| Error::io(&txt, e))?;
    }
    Ok(())
}

fn check_class_names(model_classes: &[String], dataset: &LabeledDataset) -> Result<()> {
    if model_classes != dataset.class_names() {
        return Err(Error::data(format!(
            "checkpoint classes {model_classes:?} do not match dataset classes {:?}",
            dataset.class_names()
        )));
    }
    Ok(())
}
