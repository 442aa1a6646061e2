//! Siamese description embedder: a shared mean-pool encoder over comment and
//! description, classified from `[u; v; |u - v|]`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::encoders::{mean_pool_encode, DocVector, EmbeddingTable};
use crate::error::{Error, Result};
use crate::nn::{
    axpy, mean_loss, seeded_rng, softmax, Differentiable, LossTape, Matrix, Optimizer, OptimizerConfig, ParamId,
    ParameterSet, SeededRng,
};
use crate::preprocess::{build_vocab, encode, Cleaner, EncodedDocument, Field, PreprocessConfig, Vocabulary, PAD_ID, UNK_TOKEN};
use crate::review::{RawReview, Task};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiamesePair {
    pub comment: EncodedDocument,
    pub description: EncodedDocument,
    pub label: usize,
}

/// Parameter layout of the siamese network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiameseNet {
    pub table: EmbeddingTable,
    /// `W_t`, shape `k x 3n`, no bias.
    pub projection: ParamId,
    pub classes: usize,
}

#[derive(Debug, Clone)]
pub struct SiameseCache {
    x: Vec<f64>,
}

impl SiameseNet {
    pub fn new(params: &mut ParameterSet, vocab_size: usize, dim: usize, classes: usize, rng: &mut SeededRng) -> Result<Self> {
        if classes < 2 {
            return Err(Error::Config(format!("siamese model needs >= 2 classes, got {classes}")));
        }
        let table = EmbeddingTable::new(params, "siamese.embedding", vocab_size, dim, rng)?;
        let projection = params.add("siamese.projection", Matrix::xavier(classes, 3 * dim, rng))?;
        Ok(SiameseNet {
            table,
            projection,
            classes,
        })
    }

    pub fn bind(params: &ParameterSet, vocab_size: usize, dim: usize, classes: usize) -> Result<Self> {
        Ok(SiameseNet {
            table: EmbeddingTable::bind(params, "siamese.embedding", vocab_size, dim)?,
            projection: params.expect("siamese.projection", classes, 3 * dim)?,
            classes,
        })
    }

    pub fn dim(&self) -> usize {
        self.table.dim
    }

    /// `[u; v; |u - v|]`.
    pub fn features(&self, params: &ParameterSet, pair: &SiamesePair) -> Vec<f64> {
        let table = params.value(self.table.param);
        let u = mean_pool_encode(&pair.comment, table);
        let v = mean_pool_encode(&pair.description, table);
        let mut x = Vec::with_capacity(3 * u.len());
        x.extend_from_slice(&u);
        x.extend_from_slice(&v);
        x.extend(u.iter().zip(&v).map(|(a, b)| (a - b).abs()));
        x
    }

    fn pool_backward(&self, params: &mut ParameterSet, doc: &EncodedDocument, grad: &[f64]) {
        if doc.true_len == 0 {
            return;
        }
        let scale = 1.0 / doc.true_len as f64;
        let g = params.grad_mut(self.table.param);
        for &id in doc.tokens() {
            if id != PAD_ID {
                axpy(scale, grad, g.row_mut(id as usize));
            }
        }
    }
}

impl Differentiable for SiameseNet {
    type Input = SiamesePair;
    type Cache = SiameseCache;

    fn forward(
        &self,
        params: &ParameterSet,
        pair: &SiamesePair,
        _dropout: Option<&mut SeededRng>,
    ) -> Result<(Vec<f64>, SiameseCache)> {
        let x = self.features(params, pair);
        let logits = params.value(self.projection).matvec(&x)?;
        Ok((logits, SiameseCache { x }))
    }

    fn backward(&self, params: &mut ParameterSet, pair: &SiamesePair, cache: &SiameseCache, g: &[f64]) -> Result<()> {
        let n = self.dim();
        let x = &cache.x;
        let dx = {
            let (w, gw) = params.split_mut(self.projection);
            gw.add_outer(1.0, g, x);
            w.matvec_t(g)?
        };
        let mut du = dx[..n].to_vec();
        let mut dv = dx[n..2 * n].to_vec();
        for i in 0..n {
            // d|u-v| uses sign(u - v), with 0 at the kink.
            let diff = x[i] - x[n + i];
            let s = if diff > 0.0 {
                1.0
            } else if diff < 0.0 {
                -1.0
            } else {
                0.0
            };
            du[i] += s * dx[2 * n + i];
            dv[i] -= s * dx[2 * n + i];
        }
        self.pool_backward(params, &pair.comment, &du);
        self.pool_backward(params, &pair.description, &dv);
        Ok(())
    }
}

/// Trained siamese network with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SiameseModel {
    pub net: SiameseNet,
    pub params: ParameterSet,
}

impl SiameseModel {
    pub fn new(vocab_size: usize, dim: usize, classes: usize, seed: u64) -> Result<Self> {
        let mut params = ParameterSet::new();
        let net = SiameseNet::new(&mut params, vocab_size, dim, classes, &mut seeded_rng(seed))?;
        Ok(SiameseModel { net, params })
    }

    pub fn from_params(params: ParameterSet, vocab_size: usize, dim: usize, classes: usize) -> Result<Self> {
        let net = SiameseNet::bind(&params, vocab_size, dim, classes)?;
        Ok(SiameseModel { net, params })
    }

    pub fn predict_proba(&self, pair: &SiamesePair) -> Result<Vec<f64>> {
        siamese_forward(pair, self)
    }
}

/// `softmax(W_t [u; v; |u - v|])`.
pub fn siamese_forward(pair: &SiamesePair, model: &SiameseModel) -> Result<Vec<f64>> {
    let (logits, _) = model.net.forward(&model.params, pair, None)?;
    softmax(&logits)
}

/// Mean-pooled description embedding `v`.
pub fn embed_description(doc: &EncodedDocument, model: &SiameseModel) -> DocVector {
    mean_pool_encode(doc, model.params.value(model.net.table.param))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SiameseTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub dim: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for SiameseTrainConfig {
    fn default() -> Self {
        SiameseTrainConfig {
            epochs: 20,
            batch: 16,
            seed: 42,
            dim: crate::encoders::DEFAULT_EMBEDDING_DIM,
            optimizer: OptimizerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SiameseRun {
    pub model: SiameseModel,
    /// Mean training loss before training, then after each epoch.
    pub loss_history: Vec<f64>,
}

pub fn train_siamese(
    pairs: &[SiamesePair],
    vocab_size: usize,
    classes: usize,
    config: &SiameseTrainConfig,
) -> Result<SiameseRun> {
    if pairs.is_empty() {
        return Err(Error::Empty("siamese training pairs"));
    }
    if config.batch == 0 {
        return Err(Error::Config("batch must be >= 1".into()));
    }
    for (i, p) in pairs.iter().enumerate() {
        if p.label >= classes {
            return Err(Error::LabelOutOfRange {
                label: p.label,
                classes,
                record: Some(format!("pair {i}")),
            });
        }
    }
    let mut model = SiameseModel::new(vocab_size, config.dim, classes, config.seed)?;
    let examples: Vec<(SiamesePair, usize)> = pairs.iter().map(|p| (p.clone(), p.label)).collect();
    let mut loss_history = vec![mean_loss(&model.net, &model.params, &examples)?];
    let mut optimizer = Optimizer::new(config.optimizer, &model.params);
    let mut rng = seeded_rng(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch) {
            let mut tape = LossTape::new(&model.net);
            for &i in chunk {
                tape.forward(&model.params, &pairs[i], pairs[i].label, None)?;
            }
            tape.backward(&mut model.params)?;
            optimizer.step(&mut model.params);
        }
        let loss = mean_loss(&model.net, &model.params, &examples)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("siamese loss is {loss} after epoch {}", epoch + 1)));
        }
        log::debug!("siamese epoch {} loss {loss:.6}", epoch + 1);
        loss_history.push(loss);
    }
    Ok(SiameseRun { model, loss_history })
}

pub const EMBEDDER_FORMAT: &str = "metaspam-embedder";
pub const EMBEDDER_VERSION: u32 = 1;

/// A trained siamese model with the vocabulary and cleaning pipeline it was trained with.
#[derive(Debug, Clone)]
pub struct DescriptionEmbedder {
    pub task: Task,
    pub cleaner: Cleaner,
    pub vocab: Vocabulary,
    pub model: SiameseModel,
    pub config: SiameseTrainConfig,
    pub loss_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EmbedderFile {
    format: String,
    version: u32,
    task: Task,
    config: SiameseTrainConfig,
    preprocess: PreprocessConfig,
    stoplist: Vec<String>,
    vocabulary: Vocabulary,
    loss_history: Vec<f64>,
    params: Vec<crate::nn::ParamRecord>,
}

impl DescriptionEmbedder {
    /// Cleans and encodes a comment; an empty result becomes a single UNK.
    pub fn encode_comment(&self, text: &str) -> EncodedDocument {
        encode_comment(&self.cleaner, &self.vocab, text)
    }

    /// Cleans and encodes a description; an empty result has `true_len` 0.
    pub fn encode_description(&self, text: &str) -> EncodedDocument {
        let tokens = self.cleaner.clean(text, Field::Description);
        encode(&tokens, &self.vocab, self.cleaner.config().max_len)
    }

    pub fn pair(&self, review: &RawReview) -> SiamesePair {
        SiamesePair {
            comment: self.encode_comment(&review.comment),
            description: self.encode_description(&review.description),
            label: review.class(self.task),
        }
    }

    pub fn embed(&self, review: &RawReview) -> DocVector {
        embed_description(&self.encode_description(&review.description), &self.model)
    }

    pub fn embed_all(&self, reviews: &[RawReview]) -> BTreeMap<String, DocVector> {
        reviews.iter().map(|r| (r.review_id.clone(), self.embed(r))).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = EmbedderFile {
            format: EMBEDDER_FORMAT.into(),
            version: EMBEDDER_VERSION,
            task: self.task,
            config: self.config.clone(),
            preprocess: self.cleaner.config().clone(),
            stoplist: self.cleaner.stoplist_sorted(),
            vocabulary: self.vocab.clone(),
            loss_history: self.loss_history.clone(),
            params: self.model.params.to_records(),
        };
        let json = serde_json::to_string(&file).map_err(|e| Error::Data(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let f: EmbedderFile = serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
        if f.format != EMBEDDER_FORMAT || f.version != EMBEDDER_VERSION {
            return Err(Error::Data(format!(
                "{}: not a version {EMBEDDER_VERSION} embedder file",
                path.display()
            )));
        }
        let params = ParameterSet::from_records(f.params)?;
        let model = SiameseModel::from_params(params, f.vocabulary.len(), f.config.dim, f.task.num_classes())?;
        Ok(DescriptionEmbedder {
            task: f.task,
            cleaner: Cleaner::with_stoplist(f.preprocess, f.stoplist.into_iter().collect())?,
            vocab: f.vocabulary,
            model,
            config: f.config,
            loss_history: f.loss_history,
        })
    }
}

fn encode_comment(cleaner: &Cleaner, vocab: &Vocabulary, text: &str) -> EncodedDocument {
    let mut tokens = cleaner.clean(text, Field::Comment);
    if tokens.is_empty() {
        tokens.push(UNK_TOKEN.to_string());
    }
    encode(&tokens, vocab, cleaner.config().max_len)
}

/// Phase 1 on reviews: vocabulary from training comments and descriptions,
/// pairs labelled with the review's class under `task`.
pub fn train_description_embedder(
    reviews: &[RawReview],
    cleaner: &Cleaner,
    task: Task,
    config: &SiameseTrainConfig,
) -> Result<DescriptionEmbedder> {
    if reviews.is_empty() {
        return Err(Error::Empty("embedder training reviews"));
    }
    let corpus: Vec<Vec<String>> = reviews
        .iter()
        .flat_map(|r| {
            [
                cleaner.clean(&r.comment, Field::Comment),
                cleaner.clean(&r.description, Field::Description),
            ]
        })
        .collect();
    let vocab = build_vocab(&corpus, 1)?;
    let mut embedder = DescriptionEmbedder {
        task,
        cleaner: cleaner.clone(),
        vocab,
        model: SiameseModel::new(2, 1, 2, 0)?,
        config: config.clone(),
        loss_history: Vec::new(),
    };
    let pairs: Vec<SiamesePair> = reviews.iter().map(|r| embedder.pair(r)).collect();
    let run = train_siamese(&pairs, embedder.vocab.len(), task.num_classes(), config)?;
    embedder.model = run.model;
    embedder.loss_history = run.loss_history;
    Ok(embedder)
}

/// Writes `dim=<n> count=<c>` followed by `id v1 ... vn` lines at 17 significant digits.
pub fn export_embeddings(embeddings: &BTreeMap<String, DocVector>, path: &Path) -> Result<()> {
    let dim = embeddings.values().next().map_or(0, Vec::len);
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "dim={dim} count={}", embeddings.len()).map_err(io)?;
    for (id, v) in embeddings {
        if id.is_empty() || id.chars().any(char::is_whitespace) {
            return Err(Error::Data(format!("review id `{id}` is empty or contains whitespace")));
        }
        if v.len() != dim {
            return Err(Error::dim("embedding export", format!("dim {dim}"), format!("{id}: {}", v.len())));
        }
        write!(w, "{id}").map_err(io)?;
        for x in v {
            write!(w, " {x:.16e}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn import_embeddings(path: &Path) -> Result<BTreeMap<String, DocVector>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(l) => l.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::parse(path, 1, "missing `dim=<n> count=<c>` header")),
    };
    let (dim, count) = parse_header(&header).ok_or_else(|| Error::parse(path, 1, format!("bad header `{header}`")))?;
    let mut out = BTreeMap::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let id = parts.next().unwrap_or_default().to_string();
        let values = parts
            .map(|s| s.parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| Error::parse(path, lineno, "non-numeric or non-finite value"))?;
        if values.len() != dim {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected {dim} values, found {}", values.len()),
            ));
        }
        if out.insert(id.clone(), values).is_some() {
            return Err(Error::parse(path, lineno, format!("duplicate id `{id}`")));
        }
    }
    if out.len() != count {
        return Err(Error::parse(path, 1, format!("header count {count} but {} records", out.len())));
    }
    Ok(out)
}

fn parse_header(line: &str) -> Option<(usize, usize)> {
    let mut parts = line.split_whitespace();
    let dim = parts.next()?.strip_prefix("dim=")?.parse().ok()?;
    let count = parts.next()?.strip_prefix("count=")?.parse().ok()?;
    parts.next().is_none().then_some((dim, count))
}
