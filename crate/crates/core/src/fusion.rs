//! Phase-2 classifier: text encoder, optional description embedding,
//! category-customized head. Training with epoch-level early stopping,
//! checkpointing, prediction and the experiment grid.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::customization::{
    CategoryVocabulary, ClassifierHead, CustMode, HeadCache, HeadConfig, DEFAULT_BASIS_COUNT, DEFAULT_CATEGORY_DIM,
};
use crate::data::DatasetSplit;
use crate::encoders::{
    DocVector, EmbeddingTable, Encoder, EncoderCache, TextCnnConfig, TextCnnEncoder, DEFAULT_EMBEDDING_DIM,
};
use crate::error::{Error, Result};
use crate::metrics::{align, confusion, macro_metrics, task_metrics, ConfusionMatrix, MetricReport};
use crate::nn::{
    argmax, seeded_rng, softmax, Differentiable, LossTape, Optimizer, OptimizerConfig, ParamRecord, ParameterSet,
    SeededRng,
};
use crate::preprocess::{build_vocab, encode, Cleaner, EncodedDocument, Field, PreprocessConfig, Vocabulary, UNK_TOKEN};
use crate::review::{RawReview, Task};

/// Description embeddings keyed by review id.
pub type DescriptionMap = BTreeMap<String, DocVector>;

pub const CHECKPOINT_FORMAT: &str = "metaspam-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    MeanPool,
    #[default]
    #[serde(rename = "textcnn")]
    TextCnn,
}

impl EncoderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EncoderKind::MeanPool => "mean_pool",
            EncoderKind::TextCnn => "textcnn",
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean_pool" => Ok(EncoderKind::MeanPool),
            "textcnn" => Ok(EncoderKind::TextCnn),
            _ => Err(Error::Config(format!("unknown encoder `{s}` (expected mean_pool|textcnn)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub encoder: EncoderKind,
    pub use_description: bool,
    pub use_category: bool,
    pub cust_mode: CustMode,
    pub task: Task,
    pub embedding_dim: usize,
    pub textcnn: TextCnnConfig,
    pub category_dim: usize,
    /// Basis count d'; defaults to `min(4, target dim)`.
    pub basis_count: Option<usize>,
    /// Fraction of training rows whose category is replaced by UNK.
    pub unk_category_rate: f64,
    pub min_freq: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            encoder: EncoderKind::TextCnn,
            use_description: false,
            use_category: false,
            cust_mode: CustMode::None,
            task: Task::Task1,
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            textcnn: TextCnnConfig::default(),
            category_dim: DEFAULT_CATEGORY_DIM,
            basis_count: None,
            unk_category_rate: 0.01,
            min_freq: 1,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.use_category != (self.cust_mode != CustMode::None) {
            return Err(Error::Config(format!(
                "use_category={} is inconsistent with cust_mode={} (a customization mode requires the category and vice versa)",
                self.use_category, self.cust_mode
            )));
        }
        if self.embedding_dim == 0 || self.category_dim == 0 {
            return Err(Error::Config("embedding_dim and category_dim must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.unk_category_rate) {
            return Err(Error::Config("unk_category_rate must lie in [0, 1)".into()));
        }
        Ok(())
    }

    fn head_config(&self, input_dim: usize, num_categories: usize) -> Result<HeadConfig> {
        let mut hc = HeadConfig {
            mode: self.cust_mode,
            input_dim,
            classes: self.task.num_classes(),
            num_categories,
            category_dim: self.category_dim,
            basis_count: 1,
        };
        hc.basis_count = match (self.cust_mode.uses_basis(), self.basis_count) {
            (false, _) => 1,
            (true, Some(n)) => n,
            (true, None) => DEFAULT_BASIS_COUNT.min(hc.basis_target_dim()),
        };
        hc.validate()?;
        Ok(hc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub patience: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            batch: 256,
            patience: 10,
            seed: 42,
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::Config("batch must be >= 1".into()));
        }
        if self.patience > self.epochs {
            return Err(Error::Config(format!(
                "patience {} exceeds epochs {}",
                self.patience, self.epochs
            )));
        }
        Ok(())
    }
}

/// `[d; e]` when a description vector is present, else `d`.
pub fn fuse(d: &[f64], e: Option<&[f64]>, description_dim: usize) -> Result<Vec<f64>> {
    match e {
        None if description_dim == 0 => Ok(d.to_vec()),
        Some(e) if e.len() == description_dim && description_dim > 0 => {
            let mut out = Vec::with_capacity(d.len() + e.len());
            out.extend_from_slice(d);
            out.extend_from_slice(e);
            Ok(out)
        }
        _ => Err(Error::dim(
            "fuse description",
            format!("configured dim {description_dim}"),
            format!("got {}", e.map_or(0, <[f64]>::len)),
        )),
    }
}

/// Model-ready form of one review.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub review_id: String,
    pub doc: EncodedDocument,
    pub description: Option<DocVector>,
    pub category: usize,
    pub label: usize,
}

/// Encoder plus head over a shared [`ParameterSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct FusionNet {
    pub encoder: Encoder,
    pub head: ClassifierHead,
    pub description_dim: usize,
}

#[derive(Debug, Clone)]
pub struct FusionCache {
    encoder: EncoderCache,
    fused: Vec<f64>,
    head: HeadCache,
}

impl FusionNet {
    pub fn new(
        params: &mut ParameterSet,
        config: &FusionConfig,
        vocab_size: usize,
        num_categories: usize,
        description_dim: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        config.validate()?;
        let table = EmbeddingTable::new(params, "embedding", vocab_size, config.embedding_dim, rng)?;
        let encoder = match config.encoder {
            EncoderKind::MeanPool => Encoder::MeanPool(table),
            EncoderKind::TextCnn => Encoder::TextCnn(TextCnnEncoder::new(params, table, config.textcnn.clone(), rng)?),
        };
        let hc = config.head_config(encoder.output_dim() + description_dim, num_categories)?;
        let head = ClassifierHead::new(params, hc, rng)?;
        Ok(FusionNet {
            encoder,
            head,
            description_dim,
        })
    }

    pub fn bind(
        params: &ParameterSet,
        config: &FusionConfig,
        vocab_size: usize,
        num_categories: usize,
        description_dim: usize,
    ) -> Result<Self> {
        config.validate()?;
        let table = EmbeddingTable::bind(params, "embedding", vocab_size, config.embedding_dim)?;
        let encoder = match config.encoder {
            EncoderKind::MeanPool => Encoder::MeanPool(table),
            EncoderKind::TextCnn => Encoder::TextCnn(TextCnnEncoder::bind(params, table, config.textcnn.clone())?),
        };
        let hc = config.head_config(encoder.output_dim() + description_dim, num_categories)?;
        Ok(FusionNet {
            head: ClassifierHead::bind(params, hc)?,
            encoder,
            description_dim,
        })
    }

    pub fn logits(&self, params: &ParameterSet, ex: &Example) -> Result<Vec<f64>> {
        Ok(self.forward(params, ex, None)?.0)
    }
}

impl Differentiable for FusionNet {
    type Input = Example;
    type Cache = FusionCache;

    fn forward(
        &self,
        params: &ParameterSet,
        ex: &Example,
        dropout: Option<&mut SeededRng>,
    ) -> Result<(Vec<f64>, FusionCache)> {
        let (d, encoder) = self.encoder.encode(params, &ex.doc, dropout);
        let fused = fuse(&d, ex.description.as_deref(), self.description_dim)?;
        let (logits, head) = self.head.forward(params, &fused, ex.category)?;
        Ok((logits, FusionCache { encoder, fused, head }))
    }

    fn backward(&self, params: &mut ParameterSet, ex: &Example, cache: &FusionCache, g: &[f64]) -> Result<()> {
        let dfused = self.head.backward(params, &cache.fused, &cache.head, g)?;
        let n = self.encoder.output_dim();
        self.encoder.backward(params, &ex.doc, &cache.encoder, &dfused[..n]);
        Ok(())
    }
}

/// Turns reviews into [`Example`]s with the training-time vocabulary and maps.
#[derive(Debug, Clone)]
pub struct ExampleBuilder {
    pub cleaner: Cleaner,
    pub vocab: Vocabulary,
    pub categories: CategoryVocabulary,
    pub task: Task,
    pub use_category: bool,
    pub description_dim: usize,
}

impl ExampleBuilder {
    pub fn encode_comment(&self, comment: &str) -> EncodedDocument {
        let mut tokens = self.cleaner.clean(comment, Field::Comment);
        if tokens.is_empty() {
            tokens.push(UNK_TOKEN.to_string());
        }
        encode(&tokens, &self.vocab, self.cleaner.config().max_len)
    }

    /// `strict` turns a missing description embedding into an error instead of a zero vector.
    pub fn example(&self, review: &RawReview, descriptions: Option<&DescriptionMap>, strict: bool) -> Result<Example> {
        let description = if self.description_dim == 0 {
            None
        } else {
            match descriptions.and_then(|m| m.get(&review.review_id)) {
                Some(v) if v.len() == self.description_dim => Some(v.clone()),
                Some(v) => {
                    return Err(Error::dim(
                        "description embedding",
                        self.description_dim,
                        format!("{}: {}", review.review_id, v.len()),
                    ))
                }
                None if strict => {
                    return Err(Error::Data(format!(
                        "no description embedding for review `{}`",
                        review.review_id
                    )))
                }
                None => {
                    log::warn!("no description embedding for review `{}`; using zeros", review.review_id);
                    Some(vec![0.0; self.description_dim])
                }
            }
        };
        Ok(Example {
            review_id: review.review_id.clone(),
            doc: self.encode_comment(&review.comment),
            description,
            category: if self.use_category {
                self.categories.index(&review.category)
            } else {
                0
            },
            label: review.class(self.task),
        })
    }

    pub fn examples(
        &self,
        reviews: &[RawReview],
        descriptions: Option<&DescriptionMap>,
        strict: bool,
    ) -> Result<Vec<Example>> {
        reviews.iter().map(|r| self.example(r, descriptions, strict)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept; 0 when no epoch ran.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainingHistory {
    pub fn best_score(&self) -> Option<f64> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch).map(|e| e.dev_score)
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub fusion: FusionConfig,
    pub train: TrainConfig,
    pub builder: ExampleBuilder,
    pub params: ParameterSet,
    pub net: FusionNet,
    pub history: TrainingHistory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub review_id: String,
    pub class: usize,
    pub label: String,
    pub probabilities: Vec<f64>,
}

/// Per-epoch dev score hook; receives the 1-based epoch.
pub type DevScorer<'s> = dyn FnMut(usize, &FusionNet, &ParameterSet) -> Result<f64> + 's;

/// Macro-F1 of `net` on `examples`.
pub fn macro_f1(net: &FusionNet, params: &ParameterSet, examples: &[Example], classes: usize) -> Result<f64> {
    let mut golds = Vec::with_capacity(examples.len());
    let mut preds = Vec::with_capacity(examples.len());
    for ex in examples {
        golds.push(ex.label);
        preds.push(argmax(&net.logits(params, ex)?));
    }
    Ok(macro_metrics(&confusion(&golds, &preds, classes)?)?.f1)
}

/// Trains on reviews; the dev set drives early stopping by macro-F1.
pub fn train(
    train_set: &[RawReview],
    dev_set: &[RawReview],
    fusion: &FusionConfig,
    train_cfg: &TrainConfig,
    cleaner: &Cleaner,
    descriptions: Option<&DescriptionMap>,
) -> Result<TrainedModel> {
    train_with_scorer(train_set, dev_set, fusion, train_cfg, cleaner, descriptions, None)
}

/// [`train`] with an optional replacement for the dev scorer.
pub fn train_with_scorer(
    train_set: &[RawReview],
    dev_set: &[RawReview],
    fusion: &FusionConfig,
    train_cfg: &TrainConfig,
    cleaner: &Cleaner,
    descriptions: Option<&DescriptionMap>,
    scorer: Option<&mut DevScorer<'_>>,
) -> Result<TrainedModel> {
    fusion.validate()?;
    train_cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if dev_set.is_empty() {
        return Err(Error::Empty("dev set"));
    }
    let description_dim = if fusion.use_description {
        let map = descriptions
            .ok_or_else(|| Error::Config("use_description requires description embeddings".into()))?;
        map.values()
            .next()
            .map(Vec::len)
            .filter(|&d| d > 0)
            .ok_or_else(|| Error::Data("description embedding map is empty".into()))?
    } else {
        0
    };
    let corpus: Vec<Vec<String>> = train_set
        .iter()
        .map(|r| cleaner.clean(&r.comment, Field::Comment))
        .collect();
    let vocab = build_vocab(&corpus, fusion.min_freq)?;
    let categories = if fusion.use_category {
        CategoryVocabulary::new(train_set.iter().map(|r| r.category.as_str()))
    } else {
        CategoryVocabulary::new(std::iter::empty::<&str>())
    };
    let builder = ExampleBuilder {
        cleaner: cleaner.clone(),
        vocab,
        categories,
        task: fusion.task,
        use_category: fusion.use_category,
        description_dim,
    };
    let mut train_ex = builder.examples(train_set, descriptions, true)?;
    let dev_ex = builder.examples(dev_set, descriptions, true)?;
    let mut rng = seeded_rng(train_cfg.seed);
    if fusion.use_category {
        for ex in &mut train_ex {
            if rng.gen::<f64>() < fusion.unk_category_rate {
                ex.category = 0;
            }
        }
    }
    let mut params = ParameterSet::new();
    let net = FusionNet::new(
        &mut params,
        fusion,
        builder.vocab.len(),
        builder.categories.len(),
        description_dim,
        &mut rng,
    )?;
    let (params, history) = fit(&net, params, &train_ex, &dev_ex, fusion.task.num_classes(), train_cfg, scorer)?;
    Ok(TrainedModel {
        fusion: fusion.clone(),
        train: train_cfg.clone(),
        builder,
        params,
        net,
        history,
    })
}

/// Mini-batch training with early stopping on already-prepared examples.
pub fn fit(
    net: &FusionNet,
    mut params: ParameterSet,
    train_ex: &[Example],
    dev_ex: &[Example],
    classes: usize,
    cfg: &TrainConfig,
    mut scorer: Option<&mut DevScorer<'_>>,
) -> Result<(ParameterSet, TrainingHistory)> {
    cfg.validate()?;
    if train_ex.is_empty() || dev_ex.is_empty() {
        return Err(Error::Empty("training or dev examples"));
    }
    for ex in train_ex.iter().chain(dev_ex) {
        if ex.label >= classes {
            return Err(Error::LabelOutOfRange {
                label: ex.label,
                classes,
                record: Some(ex.review_id.clone()),
            });
        }
    }
    let mut optimizer = Optimizer::new(cfg.optimizer, &params);
    let mut shuffle_rng = seeded_rng(cfg.seed.wrapping_add(1));
    let mut dropout_rng = seeded_rng(cfg.seed.wrapping_add(2));
    let mut order: Vec<usize> = (0..train_ex.len()).collect();
    let mut best = params.clone();
    let mut history = TrainingHistory {
        epochs: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
    };
    let mut best_score = f64::NEG_INFINITY;
    let mut stale = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let mut tape = LossTape::new(net);
            for &i in chunk {
                total += tape.forward(&params, &train_ex[i], train_ex[i].label, Some(&mut dropout_rng))?;
            }
            tape.backward(&mut params)?;
            optimizer.step(&mut params);
        }
        let train_loss = total / train_ex.len() as f64;
        if !train_loss.is_finite() || !params.entries().iter().all(|p| p.value.is_finite()) {
            return Err(Error::Numeric(format!("training diverged at epoch {epoch} (loss {train_loss})")));
        }
        let dev_score = match scorer.as_deref_mut() {
            Some(f) => f(epoch, net, &params)?,
            None => macro_f1(net, &params, dev_ex, classes)?,
        };
        log::info!("epoch {epoch}: train loss {train_loss:.6}, dev macro-F1 {dev_score:.6}");
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            dev_score,
        });
        if dev_score > best_score {
            best_score = dev_score;
            best.copy_values_from(&params)?;
            history.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                history.stopped_early = epoch < cfg.epochs;
                log::info!("early stop at epoch {epoch}; restoring epoch {}", history.best_epoch);
                break;
            }
        }
    }
    if history.best_epoch > 0 {
        params.copy_values_from(&best)?;
    }
    params.zero_grad();
    Ok((params, history))
}

impl TrainedModel {
    pub fn class_names(&self) -> Vec<String> {
        self.fusion.task.class_names()
    }

    pub fn predict_example(&self, ex: &Example) -> Result<Prediction> {
        let probabilities = softmax(&self.net.logits(&self.params, ex)?)?;
        let class = argmax(&probabilities);
        Ok(Prediction {
            review_id: ex.review_id.clone(),
            class,
            label: self.class_names()[class].clone(),
            probabilities,
        })
    }

    pub fn predict(&self, review: &RawReview, descriptions: Option<&DescriptionMap>) -> Result<Prediction> {
        self.predict_example(&self.builder.example(review, descriptions, false)?)
    }

    pub fn predict_batch(&self, reviews: &[RawReview], descriptions: Option<&DescriptionMap>) -> Result<Vec<Prediction>> {
        reviews.iter().map(|r| self.predict(r, descriptions)).collect()
    }

    /// Confusion matrix and task report (binary for task 1, macro for task 2).
    pub fn evaluate(
        &self,
        reviews: &[RawReview],
        descriptions: Option<&DescriptionMap>,
    ) -> Result<(ConfusionMatrix, MetricReport)> {
        let preds = self.predict_batch(reviews, descriptions)?;
        let golds: Vec<usize> = reviews.iter().map(|r| r.class(self.fusion.task)).collect();
        let p: Vec<usize> = preds.iter().map(|p| p.class).collect();
        let cm = confusion(&golds, &p, self.fusion.task.num_classes())?.with_names(self.class_names())?;
        let report = task_metrics(&cm)?;
        Ok((cm, report))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            fusion: self.fusion.clone(),
            train: self.train.clone(),
            preprocess: self.builder.cleaner.config().clone(),
            stoplist: self.builder.cleaner.stoplist_sorted(),
            vocabulary: self.builder.vocab.clone(),
            categories: self.builder.categories.clone(),
            description_dim: self.builder.description_dim,
            history: self.history.clone(),
            params: self.params.to_records(),
        }
    }

    pub fn from_checkpoint(c: Checkpoint) -> Result<Self> {
        if c.format != CHECKPOINT_FORMAT {
            return Err(Error::Data(format!("not a checkpoint (format `{}`)", c.format)));
        }
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!("unsupported checkpoint version {}", c.version)));
        }
        let cleaner = Cleaner::with_stoplist(c.preprocess, c.stoplist.into_iter().collect())?;
        let params = ParameterSet::from_records(c.params)?;
        let net = FusionNet::bind(
            &params,
            &c.fusion,
            c.vocabulary.len(),
            c.categories.len(),
            c.description_dim,
        )?;
        Ok(TrainedModel {
            builder: ExampleBuilder {
                cleaner,
                vocab: c.vocabulary,
                categories: c.categories,
                task: c.fusion.task,
                use_category: c.fusion.use_category,
                description_dim: c.description_dim,
            },
            fusion: c.fusion,
            train: c.train,
            params,
            net,
            history: c.history,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(&self.to_checkpoint()).map_err(|e| Error::Data(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
        Self::from_checkpoint(c)
    }
}

/// Single-file model container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub fusion: FusionConfig,
    pub train: TrainConfig,
    pub preprocess: PreprocessConfig,
    pub stoplist: Vec<String>,
    pub vocabulary: Vocabulary,
    pub categories: CategoryVocabulary,
    pub description_dim: usize,
    pub history: TrainingHistory,
    pub params: Vec<ParamRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub encoders: Vec<EncoderKind>,
    pub modes: Vec<CustMode>,
    pub seeds: Vec<u64>,
    /// Adds a description-fused row for every mode when embeddings are given.
    pub include_description: bool,
    /// Template for everything except encoder, mode, metadata flags and seed.
    pub fusion: FusionConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub encoder: EncoderKind,
    pub cust_mode: CustMode,
    pub description: bool,
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Macro-F1 minus the encoder's Original row, when that row exists.
    pub delta_macro_f1: Option<f64>,
    pub per_seed_macro_f1: Vec<f64>,
}

impl GridRow {
    /// Row label: Original, Category, Description or Both.
    pub fn metadata_label(&self) -> String {
        match (self.cust_mode, self.description) {
            (CustMode::None, false) => "Original".into(),
            (CustMode::None, true) => "Description".into(),
            (m, false) => format!("Category ({m})"),
            (m, true) => format!("Both ({m})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResults {
    pub rows: Vec<GridRow>,
    pub seeds: Vec<u64>,
}

/// Trains and tests every (encoder x metadata mode) cell, averaging over seeds.
pub fn run_experiment_grid(
    split: &DatasetSplit,
    spec: &GridSpec,
    cleaner: &Cleaner,
    descriptions: Option<&DescriptionMap>,
) -> Result<GridResults> {
    if spec.seeds.is_empty() || spec.encoders.is_empty() || spec.modes.is_empty() {
        return Err(Error::Config("grid needs at least one encoder, mode and seed".into()));
    }
    let with_desc: &[bool] = if spec.include_description && descriptions.is_some() {
        &[false, true]
    } else {
        &[false]
    };
    let mut rows = Vec::new();
    for &encoder in &spec.encoders {
        let start = rows.len();
        for &desc in with_desc {
            for &mode in &spec.modes {
                let fusion = FusionConfig {
                    encoder,
                    cust_mode: mode,
                    use_category: mode != CustMode::None,
                    use_description: desc,
                    ..spec.fusion.clone()
                };
                let mut f1s = Vec::new();
                let mut accs = Vec::new();
                for &seed in &spec.seeds {
                    let tc = TrainConfig {
                        seed,
                        ..spec.train.clone()
                    };
                    let model = train(&split.train, &split.dev, &fusion, &tc, cleaner, descriptions)?;
                    let preds = model.predict_batch(&split.test, descriptions)?;
                    let golds: Vec<usize> = split.test.iter().map(|r| r.class(fusion.task)).collect();
                    let p: Vec<usize> = preds.iter().map(|p| p.class).collect();
                    let report = macro_metrics(&confusion(&golds, &p, fusion.task.num_classes())?)?;
                    log::info!(
                        "grid {encoder} {mode} desc={desc} seed={seed}: acc {:.4} macro-F1 {:.4}",
                        report.accuracy,
                        report.f1
                    );
                    f1s.push(report.f1);
                    accs.push(report.accuracy);
                }
                let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
                rows.push(GridRow {
                    encoder,
                    cust_mode: mode,
                    description: desc,
                    accuracy: mean(&accs),
                    macro_f1: mean(&f1s),
                    delta_macro_f1: None,
                    per_seed_macro_f1: f1s,
                });
            }
        }
        let original = rows[start..]
            .iter()
            .find(|r| r.cust_mode == CustMode::None && !r.description)
            .map(|r| r.macro_f1);
        if let Some(base) = original {
            for r in &mut rows[start..] {
                r.delta_macro_f1 = Some(r.macro_f1 - base);
            }
        }
    }
    Ok(GridResults {
        rows,
        seeds: spec.seeds.clone(),
    })
}

impl GridResults {
    /// Percentages with two decimals, deltas in points.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["encoder", "metadata", "cust_mode", "description", "seeds", "accuracy", "macro_f1", "delta_macro_f1"])
            .expect("in-memory csv");
        let seeds = self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(" ");
        for r in &self.rows {
            w.write_record([
                r.encoder.to_string(),
                r.metadata_label(),
                r.cust_mode.to_string(),
                r.description.to_string(),
                seeds.clone(),
                format!("{:.2}", 100.0 * r.accuracy),
                format!("{:.2}", 100.0 * r.macro_f1),
                r.delta_macro_f1.map_or(String::new(), |d| format!("{:+.2}", 100.0 * d)),
            ])
            .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
    }

    pub fn to_text(&self) -> String {
        let mut rows = vec![vec![
            "encoder".to_string(),
            "metadata".to_string(),
            "accuracy".to_string(),
            "macro-F1".to_string(),
            "delta".to_string(),
        ]];
        for r in &self.rows {
            rows.push(vec![
                r.encoder.to_string(),
                r.metadata_label(),
                format!("{:.2}", 100.0 * r.accuracy),
                format!("{:.2}", 100.0 * r.macro_f1),
                r.delta_macro_f1.map_or("-".to_string(), |d| format!("{:+.2}", 100.0 * d)),
            ]);
        }
        align(&rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradient_check;
    use crate::preprocess::PAD_ID;

    fn doc(ids: &[u32], max_len: usize) -> EncodedDocument {
        let mut v = ids.to_vec();
        v.resize(max_len, PAD_ID);
        EncodedDocument {
            ids: v,
            true_len: ids.len(),
        }
    }

    #[test]
    fn fuse_examples() {
        let d = vec![1.0, 2.0];
        assert_eq!(fuse(&d, None, 0).unwrap(), d);
        let e = vec![0.5; 128];
        let d96 = vec![0.25; 96];
        let f = fuse(&d96, Some(&e), 128).unwrap();
        assert_eq!(f.len(), 224);
        assert_eq!(&f[..96], &d96[..]);
        assert_eq!(&f[96..], &e[..]);
        assert!(fuse(&d, Some(&[1.0]), 2).is_err());
        assert!(fuse(&d, None, 3).is_err());
    }

    #[test]
    fn encoder_names_match_between_serde_and_cli() {
        for kind in [EncoderKind::MeanPool, EncoderKind::TextCnn] {
            let json = serde_json::to_string(&kind).unwrap();
            assert_eq!(json, format!("\"{kind}\""));
            assert_eq!(kind.as_str().parse::<EncoderKind>().unwrap(), kind);
        }
    }

    #[test]
    fn config_conflicts() {
        let c = FusionConfig {
            cust_mode: CustMode::BiasCust,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = FusionConfig {
            use_category: true,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let t = TrainConfig {
            patience: 50,
            ..Default::default()
        };
        assert!(t.validate().is_err());
    }

    #[test]
    fn end_to_end_gradients_all_paths() {
        for encoder in [EncoderKind::MeanPool, EncoderKind::TextCnn] {
            for mode in CustMode::ALL {
                let cfg = FusionConfig {
                    encoder,
                    use_category: mode != CustMode::None,
                    cust_mode: mode,
                    use_description: true,
                    task: Task::Task2,
                    embedding_dim: 4,
                    textcnn: TextCnnConfig {
                        filter_sizes: vec![2, 3],
                        filters_per_size: 3,
                        dropout: 0.5,
                    },
                    category_dim: 3,
                    ..Default::default()
                };
                let mut params = ParameterSet::new();
                let mut rng = seeded_rng(9);
                let net = FusionNet::new(&mut params, &cfg, 12, 3, 2, &mut rng).unwrap();
                let examples: Vec<(Example, usize)> = (0..3)
                    .map(|i| {
                        let ex = Example {
                            review_id: i.to_string(),
                            doc: doc(&[2 + i as u32, 5, 7 + i as u32, 3][..2 + i], 6),
                            description: Some(vec![0.3 - i as f64, 0.7]),
                            category: i,
                            label: i,
                        };
                        (ex, i)
                    })
                    .collect();
                let err = gradient_check(&net, &mut params, &examples).unwrap();
                assert!(err <= 1e-5, "{encoder} {mode}: {err}");
            }
        }
    }
}
