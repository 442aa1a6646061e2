use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use metaspam::customization::CustMode;
use metaspam::data::{
    default_category_dictionary, generate_synthetic, load_category_dictionary, load_jsonl, merge_categories, split,
    write_jsonl, DatasetSplit, SplitRatios, SynthSpec,
};
use metaspam::fusion::{run_experiment_grid, train, EncoderKind, FusionConfig, GridSpec, TrainConfig, TrainedModel};
use metaspam::preprocess::{Cleaner, Field, PreprocessConfig};
use metaspam::review::Task;
use metaspam::siamese::{export_embeddings, import_embeddings, train_description_embedder, DescriptionEmbedder, SiameseTrainConfig};
use metaspam::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(name = "metaspam", version, about = "Spam review classification with product metadata")]
struct Cli {
    /// JSON config file with optional `preprocess`, `fusion`, `train`, `siamese` and `synth` sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus.
    Synth {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        size: Option<usize>,
    },
    /// Clean comments and descriptions and merge categories.
    Preprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Raw-to-canonical category dictionary (defaults to the shipped one).
        #[arg(long)]
        category_dict: Option<PathBuf>,
    },
    /// Stratified train/dev/test split.
    Split {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        test_ratio: f64,
        #[arg(long, default_value_t = 0.1)]
        dev_ratio: f64,
        #[arg(long)]
        no_stratify: bool,
    },
    /// Phase 1: train the siamese description embedder.
    TrainEmbedder {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long, default_value = "task1")]
        task: Task,
    },
    /// Write description embeddings for every record.
    Embed {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Phase 2: train the fusion classifier.
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        opt: TrainFlags,
    },
    /// Metric report, confusion matrix and text table on a labelled file.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        task: Option<Task>,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        desc_emb: Option<PathBuf>,
    },
    /// Per-record label and class probabilities.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        desc_emb: Option<PathBuf>,
    },
    /// Encoder x metadata-mode comparison table.
    Grid {
        /// Directory with train.jsonl, dev.jsonl and test.jsonl.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "textcnn")]
        encoders: Vec<EncoderKind>,
        #[arg(long, value_delimiter = ',', default_value = "none")]
        modes: Vec<CustMode>,
        #[arg(long, value_delimiter = ',', default_value = "42")]
        seeds: Vec<u64>,
        /// Adds description-fused rows.
        #[arg(long)]
        desc_emb: Option<PathBuf>,
        #[arg(long)]
        task: Option<Task>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        text_out: Option<PathBuf>,
        #[command(flatten)]
        opt: TrainFlags,
    },
}

#[derive(Args, Debug)]
struct ModelFlags {
    #[arg(long)]
    encoder: Option<EncoderKind>,
    #[arg(long)]
    cust: Option<CustMode>,
    #[arg(long)]
    use_category: bool,
    /// Description embeddings file; enables description fusion.
    #[arg(long)]
    desc_emb: Option<PathBuf>,
    #[arg(long)]
    task: Option<Task>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    basis_count: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ConfigFile {
    preprocess: PreprocessConfig,
    fusion: FusionConfig,
    train: TrainConfig,
    siamese: SiameseTrainConfig,
    synth: Option<SynthSpec>,
}

impl ConfigFile {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(ConfigFile::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let cfg: ConfigFile =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.preprocess.validate()?;
        Ok(cfg)
    }
}

impl TrainFlags {
    fn apply(&self, mut t: TrainConfig) -> Result<TrainConfig> {
        if let Some(v) = self.epochs {
            t.epochs = v;
        }
        if let Some(v) = self.batch {
            t.batch = v;
        }
        if let Some(v) = self.patience {
            t.patience = v;
        }
        if let Some(v) = self.seed {
            t.seed = v;
        }
        if let Some(v) = self.lr {
            t.optimizer.learning_rate = v;
        }
        t.validate()?;
        Ok(t)
    }
}

impl ModelFlags {
    fn apply(&self, mut f: FusionConfig) -> Result<FusionConfig> {
        if let Some(c) = self.cust {
            if c != CustMode::None && !self.use_category {
                return Err(Error::Config(format!("--cust {c} requires --use-category")));
            }
            f.cust_mode = c;
        }
        if self.use_category {
            f.use_category = true;
        }
        if let Some(e) = self.encoder {
            f.encoder = e;
        }
        if let Some(t) = self.task {
            f.task = t;
        }
        if let Some(d) = self.dim {
            f.embedding_dim = d;
        }
        if self.basis_count.is_some() {
            f.basis_count = self.basis_count;
        }
        f.use_description = self.desc_emb.is_some();
        f.validate()?;
        Ok(f)
    }
}

fn log_resolved<T: Serialize>(what: &str, value: &T) {
    log::info!("resolved {what}: {}", serde_json::to_string(value).unwrap_or_default());
}

fn cleaner(cfg: &ConfigFile) -> Result<Cleaner> {
    log_resolved("preprocess config", &cfg.preprocess);
    Cleaner::new(cfg.preprocess.clone())
}

/// Creates the parent directory of an output path.
fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).map_err(|e| Error::Data(format!("{}: {e}", dir.display())))
        }
        _ => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn load_split(dir: &Path) -> Result<DatasetSplit> {
    Ok(DatasetSplit {
        train: load_jsonl(&dir.join("train.jsonl"))?,
        dev: load_jsonl(&dir.join("dev.jsonl"))?,
        test: load_jsonl(&dir.join("test.jsonl"))?,
        seed: 0,
        ratios: SplitRatios::default(),
    })
}

fn load_descriptions(path: Option<&PathBuf>) -> Result<Option<BTreeMap<String, Vec<f64>>>> {
    path.map(|p| import_embeddings(p)).transpose()
}

fn run(cli: Cli) -> Result<()> {
    let cfg = ConfigFile::load(cli.config.as_deref())?;
    match cli.command {
        Command::Synth { spec, out, seed, size } => {
            let mut s = match spec {
                Some(p) => SynthSpec::from_json_file(&p)?,
                None => cfg.synth.clone().unwrap_or_default(),
            };
            if let Some(v) = seed {
                s.seed = v;
            }
            if let Some(v) = size {
                s.size = v;
            }
            log_resolved("synth spec", &s);
            let records = generate_synthetic(&s)?;
            ensure_parent(&out)?;
            write_jsonl(&out, &records)?;
            log::info!("wrote {} records to {}", records.len(), out.display());
        }
        Command::Preprocess {
            input,
            out,
            category_dict,
        } => {
            let cleaner = cleaner(&cfg)?;
            let dict = match category_dict {
                Some(p) => load_category_dictionary(&p)?,
                None => default_category_dictionary(),
            };
            let records = merge_categories(&load_jsonl(&input)?, &dict);
            let mut cleaned = Vec::with_capacity(records.len());
            for mut r in records {
                r.comment = cleaner.clean_to_string(&r.comment, Field::Comment);
                r.description = cleaner.clean_to_string(&r.description, Field::Description);
                if r.comment.is_empty() {
                    log::warn!("dropping review `{}`: comment is empty after cleaning", r.review_id);
                    continue;
                }
                cleaned.push(r);
            }
            ensure_parent(&out)?;
            write_jsonl(&out, &cleaned)?;
            log::info!("wrote {} records to {}", cleaned.len(), out.display());
        }
        Command::Split {
            input,
            seed,
            out_dir,
            test_ratio,
            dev_ratio,
            no_stratify,
        } => {
            let ratios = SplitRatios {
                test: test_ratio,
                dev: dev_ratio,
            };
            log_resolved("split ratios", &ratios);
            let s = split(&load_jsonl(&input)?, ratios, seed, !no_stratify)?;
            std::fs::create_dir_all(&out_dir).map_err(|e| Error::Data(format!("{}: {e}", out_dir.display())))?;
            write_jsonl(&out_dir.join("train.jsonl"), &s.train)?;
            write_jsonl(&out_dir.join("dev.jsonl"), &s.dev)?;
            write_jsonl(&out_dir.join("test.jsonl"), &s.test)?;
            log::info!("train {} / dev {} / test {}", s.train.len(), s.dev.len(), s.test.len());
        }
        Command::TrainEmbedder {
            train,
            out,
            epochs,
            batch,
            seed,
            dim,
            lr,
            task,
        } => {
            let mut sc = cfg.siamese.clone();
            if let Some(v) = epochs {
                sc.epochs = v;
            }
            if let Some(v) = batch {
                sc.batch = v;
            }
            if let Some(v) = seed {
                sc.seed = v;
            }
            if let Some(v) = dim {
                sc.dim = v;
            }
            if let Some(v) = lr {
                sc.optimizer.learning_rate = v;
            }
            log_resolved("siamese config", &sc);
            let cleaner = cleaner(&cfg)?;
            let embedder = train_description_embedder(&load_jsonl(&train)?, &cleaner, task, &sc)?;
            log::info!("siamese loss history: {:?}", embedder.loss_history);
            ensure_parent(&out)?;
            embedder.save(&out)?;
        }
        Command::Embed { model, input, out } => {
            let embedder = DescriptionEmbedder::load(&model)?;
            let map = embedder.embed_all(&load_jsonl(&input)?);
            ensure_parent(&out)?;
            export_embeddings(&map, &out)?;
            log::info!("wrote {} embeddings to {}", map.len(), out.display());
        }
        Command::Train {
            train: train_path,
            dev,
            out,
            model,
            opt,
        } => {
            let fusion = model.apply(cfg.fusion.clone())?;
            let tc = opt.apply(cfg.train.clone())?;
            log_resolved("fusion config", &fusion);
            log_resolved("train config", &tc);
            let cleaner = cleaner(&cfg)?;
            let descriptions = load_descriptions(model.desc_emb.as_ref())?;
            let trained = train(
                &load_jsonl(&train_path)?,
                &load_jsonl(&dev)?,
                &fusion,
                &tc,
                &cleaner,
                descriptions.as_ref(),
            )?;
            log::info!(
                "best epoch {} (dev macro-F1 {:.4}), {} epochs run",
                trained.history.best_epoch,
                trained.history.best_score().unwrap_or(0.0),
                trained.history.epochs.len()
            );
            ensure_parent(&out)?;
            trained.save(&out)?;
        }
        Command::Evaluate {
            model,
            test,
            task,
            report,
            desc_emb,
        } => {
            let trained = TrainedModel::load(&model)?;
            if let Some(t) = task {
                if t != trained.fusion.task {
                    return Err(Error::Config(format!(
                        "--task {t} does not match the model's task {}",
                        trained.fusion.task
                    )));
                }
            }
            let descriptions = load_descriptions(desc_emb.as_ref())?;
            let (cm, metrics) = trained.evaluate(&load_jsonl(&test)?, descriptions.as_ref())?;
            std::fs::create_dir_all(&report).map_err(|e| Error::Data(format!("{}: {e}", report.display())))?;
            write_text(&report.join("report.csv"), &metrics.to_csv())?;
            write_text(&report.join("confusion.csv"), &cm.to_csv())?;
            let text = metrics.to_text();
            write_text(&report.join("report.txt"), &text)?;
            print!("{text}");
        }
        Command::Predict {
            model,
            input,
            out,
            desc_emb,
        } => {
            let trained = TrainedModel::load(&model)?;
            let descriptions = load_descriptions(desc_emb.as_ref())?;
            let preds = trained.predict_batch(&load_jsonl(&input)?, descriptions.as_ref())?;
            ensure_parent(&out)?;
            let file = File::create(&out).map_err(|e| Error::Data(format!("{}: {e}", out.display())))?;
            let mut w = BufWriter::new(file);
            for p in &preds {
                let line = serde_json::to_string(p).map_err(|e| Error::Data(e.to_string()))?;
                writeln!(w, "{line}").map_err(|e| Error::Data(format!("{}: {e}", out.display())))?;
            }
            w.flush().map_err(|e| Error::Data(format!("{}: {e}", out.display())))?;
        }
        Command::Grid {
            dataset,
            encoders,
            modes,
            seeds,
            desc_emb,
            task,
            dim,
            out,
            text_out,
            opt,
        } => {
            let mut fusion = cfg.fusion.clone();
            if let Some(t) = task {
                fusion.task = t;
            }
            if let Some(d) = dim {
                fusion.embedding_dim = d;
            }
            let spec = GridSpec {
                encoders,
                modes,
                seeds,
                include_description: desc_emb.is_some(),
                fusion,
                train: opt.apply(cfg.train.clone())?,
            };
            log_resolved("grid spec", &spec);
            let cleaner = cleaner(&cfg)?;
            let descriptions = load_descriptions(desc_emb.as_ref())?;
            let results = run_experiment_grid(&load_split(&dataset)?, &spec, &cleaner, descriptions.as_ref())?;
            let csv = results.to_csv();
            match out {
                Some(p) => write_text(&p, &csv)?,
                None => print!("{csv}"),
            }
            let text = results.to_text();
            match text_out {
                Some(p) => write_text(&p, &text)?,
                None => eprint!("{text}"),
            }
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::Numeric(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
