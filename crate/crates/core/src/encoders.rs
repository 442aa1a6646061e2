//! Document encoders: mean pooling and a convolutional (TextCNN) encoder,
//! both over a trainable token embedding table.

use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{axpy, dot, Matrix, ParamId, ParameterSet, SeededRng};
use crate::preprocess::{EncodedDocument, Vocabulary, PAD_ID};

/// Fixed-size document representation.
pub type DocVector = Vec<f64>;

pub const DEFAULT_EMBEDDING_DIM: usize = 128;

/// Token embedding matrix `vocab_size x dim`; the PAD row is frozen at zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddingTable {
    pub param: ParamId,
    pub vocab_size: usize,
    pub dim: usize,
}

impl EmbeddingTable {
    pub fn new(
        params: &mut ParameterSet,
        name: &str,
        vocab_size: usize,
        dim: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if vocab_size < 2 || dim == 0 {
            return Err(Error::Config(format!(
                "embedding table needs vocab_size >= 2 and dim >= 1 (got {vocab_size}, {dim})"
            )));
        }
        let param = params.add(name, Matrix::xavier(vocab_size, dim, rng))?;
        params.freeze_row(param, PAD_ID as usize);
        Ok(EmbeddingTable {
            param,
            vocab_size,
            dim,
        })
    }

    pub fn bind(params: &ParameterSet, name: &str, vocab_size: usize, dim: usize) -> Result<Self> {
        Ok(EmbeddingTable {
            param: params.expect(name, vocab_size, dim)?,
            vocab_size,
            dim,
        })
    }

    /// Overwrites rows for tokens present in a `token v1 ... vdim` text file.
    /// Returns the number of rows initialized.
    pub fn init_from_file(
        &self,
        params: &mut ParameterSet,
        vocab: &Vocabulary,
        path: &Path,
    ) -> Result<usize> {
        let vectors = load_text_embeddings(path, self.dim)?;
        let table = params.value_mut(self.param);
        let mut hits = 0;
        for (token, values) in vectors {
            let id = vocab.id(&token);
            if id as usize >= 2 {
                table.row_mut(id as usize).copy_from_slice(&values);
                hits += 1;
            }
        }
        Ok(hits)
    }
}

/// Parses `token v1 ... vdim` lines.
pub fn load_text_embeddings(path: &Path, dim: usize) -> Result<Vec<(String, Vec<f64>)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let token = parts.next().unwrap_or_default().to_string();
        let values = parts
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        if values.len() != dim {
            return Err(Error::parse(
                path,
                i + 1,
                format!("expected {dim} values, found {}", values.len()),
            ));
        }
        out.push((token, values));
    }
    Ok(out)
}

/// Mean of the first `true_len` embedding rows; zero vector when empty.
pub fn mean_pool_encode(doc: &EncodedDocument, table: &Matrix) -> DocVector {
    let mut out = vec![0.0; table.cols()];
    if doc.true_len == 0 {
        return out;
    }
    for &id in doc.tokens() {
        axpy(1.0, table.row(id as usize), &mut out);
    }
    let inv = 1.0 / doc.true_len as f64;
    out.iter_mut().for_each(|v| *v *= inv);
    out
}

/// Inverted-dropout mask: kept units scale by `1/(1-p)`. Without an RNG
/// (inference) the mask is all ones.
pub fn dropout_mask(dim: usize, p: f64, rng: Option<&mut SeededRng>) -> Vec<f64> {
    match rng {
        Some(rng) if p > 0.0 => {
            let keep = 1.0 / (1.0 - p);
            (0..dim)
                .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
                .collect()
        }
        _ => vec![1.0; dim],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextCnnConfig {
    pub filter_sizes: Vec<usize>,
    pub filters_per_size: usize,
    pub dropout: f64,
}

impl Default for TextCnnConfig {
    fn default() -> Self {
        TextCnnConfig {
            filter_sizes: vec![2, 3, 5],
            filters_per_size: 32,
            dropout: 0.5,
        }
    }
}

impl TextCnnConfig {
    pub fn validate(&self, max_len: usize) -> Result<()> {
        if self.filter_sizes.is_empty() || self.filters_per_size == 0 {
            return Err(Error::Config("TextCNN needs at least one filter".into()));
        }
        if let Some(&s) = self.filter_sizes.iter().find(|&&s| s == 0 || s > max_len) {
            return Err(Error::Config(format!(
                "filter size {s} must be in 1..={max_len}"
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        self.filter_sizes.len() * self.filters_per_size
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct ConvBranch {
    width: usize,
    weight: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextCnnEncoder {
    pub table: EmbeddingTable,
    pub config: TextCnnConfig,
    branches: Vec<ConvBranch>,
}

#[derive(Debug, Clone, Default)]
pub struct TextCnnCache {
    /// Per output unit: winning window start and whether the ReLU was active.
    winners: Vec<(usize, bool)>,
    mask: Vec<f64>,
}

impl TextCnnEncoder {
    pub fn new(
        params: &mut ParameterSet,
        table: EmbeddingTable,
        config: TextCnnConfig,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let mut branches = Vec::new();
        for &width in &config.filter_sizes {
            let in_dim = width * table.dim;
            let weight = params.add(
                format!("textcnn.conv{width}.weight"),
                Matrix::xavier(config.filters_per_size, in_dim, rng),
            )?;
            let bias = params.add(
                format!("textcnn.conv{width}.bias"),
                Matrix::zeros(1, config.filters_per_size),
            )?;
            branches.push(ConvBranch {
                width,
                weight,
                bias,
            });
        }
        Ok(TextCnnEncoder {
            table,
            config,
            branches,
        })
    }

    pub fn bind(params: &ParameterSet, table: EmbeddingTable, config: TextCnnConfig) -> Result<Self> {
        let f = config.filters_per_size;
        let branches = config
            .filter_sizes
            .iter()
            .map(|&width| {
                Ok(ConvBranch {
                    width,
                    weight: params.expect(&format!("textcnn.conv{width}.weight"), f, width * table.dim)?,
                    bias: params.expect(&format!("textcnn.conv{width}.bias"), 1, f)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TextCnnEncoder {
            table,
            config,
            branches,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    /// Valid window starts within `true_len`; a single zero-padded window
    /// when the document is shorter than the filter.
    fn window_starts(width: usize, true_len: usize) -> usize {
        if true_len >= width {
            true_len - width + 1
        } else {
            1
        }
    }

    /// `w_row . window(start)`, treating positions past `true_len` as zero rows.
    fn window_dot(w_row: &[f64], table: &Matrix, doc: &EncodedDocument, start: usize, width: usize) -> f64 {
        let dim = table.cols();
        let mut acc = 0.0;
        for j in 0..width {
            let pos = start + j;
            if pos >= doc.true_len {
                break;
            }
            acc += dot(&w_row[j * dim..(j + 1) * dim], table.row(doc.ids[pos] as usize));
        }
        acc
    }

    pub fn encode(
        &self,
        params: &ParameterSet,
        doc: &EncodedDocument,
        dropout: Option<&mut SeededRng>,
    ) -> (DocVector, TextCnnCache) {
        let table = params.value(self.table.param);
        let mut out = Vec::with_capacity(self.output_dim());
        let mut winners = Vec::with_capacity(self.output_dim());
        for b in &self.branches {
            let w = params.value(b.weight);
            let bias = params.value(b.bias).values();
            let starts = Self::window_starts(b.width, doc.true_len);
            for f in 0..w.rows() {
                let row = w.row(f);
                let mut best = f64::NEG_INFINITY;
                let mut best_t = 0;
                for t in 0..starts {
                    let pre = Self::window_dot(row, table, doc, t, b.width) + bias[f];
                    if pre > best {
                        best = pre;
                        best_t = t;
                    }
                }
                let active = best > 0.0;
                out.push(if active { best } else { 0.0 });
                winners.push((best_t, active));
            }
        }
        let mask = dropout_mask(out.len(), self.config.dropout, dropout);
        out.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
        (out, TextCnnCache { winners, mask })
    }

    pub fn backward(
        &self,
        params: &mut ParameterSet,
        doc: &EncodedDocument,
        cache: &TextCnnCache,
        grad_out: &[f64],
    ) {
        let dim = self.table.dim;
        let mut unit = 0;
        for b in &self.branches {
            let filters = self.config.filters_per_size;
            for f in 0..filters {
                let (t, active) = cache.winners[unit];
                let g = grad_out[unit] * cache.mask[unit];
                unit += 1;
                if !active || g == 0.0 {
                    continue;
                }
                params.grad_mut(b.bias).values_mut()[f] += g;
                for j in 0..b.width {
                    let pos = t + j;
                    if pos >= doc.true_len {
                        break;
                    }
                    let id = doc.ids[pos] as usize;
                    let (table, gw) = params.value_and_grad(self.table.param, b.weight);
                    axpy(g, table.row(id), &mut gw.row_mut(f)[j * dim..(j + 1) * dim]);
                    if id != PAD_ID as usize {
                        let (w, gt) = params.value_and_grad(b.weight, self.table.param);
                        axpy(g, &w.row(f)[j * dim..(j + 1) * dim], gt.row_mut(id));
                    }
                }
            }
        }
    }
}

/// A trainable document encoder.
#[derive(Debug, Clone, PartialEq)]
pub enum Encoder {
    MeanPool(EmbeddingTable),
    TextCnn(TextCnnEncoder),
}

#[derive(Debug, Clone)]
pub enum EncoderCache {
    MeanPool,
    TextCnn(TextCnnCache),
}

impl Encoder {
    pub fn output_dim(&self) -> usize {
        match self {
            Encoder::MeanPool(t) => t.dim,
            Encoder::TextCnn(e) => e.output_dim(),
        }
    }

    pub fn table(&self) -> EmbeddingTable {
        match self {
            Encoder::MeanPool(t) => *t,
            Encoder::TextCnn(e) => e.table,
        }
    }

    pub fn encode(
        &self,
        params: &ParameterSet,
        doc: &EncodedDocument,
        dropout: Option<&mut SeededRng>,
    ) -> (DocVector, EncoderCache) {
        match self {
            Encoder::MeanPool(t) => (mean_pool_encode(doc, params.value(t.param)), EncoderCache::MeanPool),
            Encoder::TextCnn(e) => {
                let (v, c) = e.encode(params, doc, dropout);
                (v, EncoderCache::TextCnn(c))
            }
        }
    }

    pub fn backward(
        &self,
        params: &mut ParameterSet,
        doc: &EncodedDocument,
        cache: &EncoderCache,
        grad_out: &[f64],
    ) {
        match (self, cache) {
            (Encoder::MeanPool(t), EncoderCache::MeanPool) => {
                if doc.true_len == 0 {
                    return;
                }
                let scale = 1.0 / doc.true_len as f64;
                let grad = params.grad_mut(t.param);
                for &id in doc.tokens() {
                    if id != PAD_ID {
                        axpy(scale, grad_out, grad.row_mut(id as usize));
                    }
                }
            }
            (Encoder::TextCnn(e), EncoderCache::TextCnn(c)) => e.backward(params, doc, c, grad_out),
            _ => unreachable!("encoder/cache variant mismatch"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::seeded_rng;

    fn doc(ids: &[u32], max_len: usize) -> EncodedDocument {
        let mut v = ids.to_vec();
        v.resize(max_len, PAD_ID);
        EncodedDocument {
            ids: v,
            true_len: ids.len(),
        }
    }

    #[test]
    fn mean_pool_cases() {
        let t = Matrix::from_rows(&[
            vec![0.0, 0.0],
            vec![9.0, 9.0],
            vec![1.0, 2.0],
            vec![3.0, -4.0],
        ])
        .unwrap();
        assert_eq!(mean_pool_encode(&doc(&[2], 4), &t), vec![1.0, 2.0]);
        assert_eq!(mean_pool_encode(&doc(&[2, 3], 4), &t), vec![2.0, -1.0]);
        assert_eq!(mean_pool_encode(&doc(&[], 4), &t), vec![0.0, 0.0]);
    }

    #[test]
    fn dropout_masks() {
        let mut rng = seeded_rng(3);
        assert!(dropout_mask(16, 0.0, Some(&mut rng)).iter().all(|&m| m == 1.0));
        assert!(dropout_mask(16, 0.5, None).iter().all(|&m| m == 1.0));
        let m = dropout_mask(10_000, 0.5, Some(&mut rng));
        let kept = m.iter().filter(|&&v| v != 0.0).count() as f64 / 10_000.0;
        assert!((kept - 0.5).abs() <= 0.02, "kept fraction {kept}");
        assert!(m.iter().all(|&v| v == 0.0 || v == 2.0));
    }

    fn small_cnn(dim: usize, zero_table: bool) -> (ParameterSet, TextCnnEncoder) {
        let mut params = ParameterSet::new();
        let mut rng = seeded_rng(11);
        let table = EmbeddingTable::new(&mut params, "embedding", 6, dim, &mut rng).unwrap();
        if zero_table {
            params.value_mut(table.param).fill(0.0);
        }
        let cfg = TextCnnConfig {
            filters_per_size: 4,
            ..Default::default()
        };
        let enc = TextCnnEncoder::new(&mut params, table, cfg, &mut rng).unwrap();
        (params, enc)
    }

    #[test]
    fn zero_embeddings_give_activation_of_bias() {
        let (mut params, enc) = small_cnn(3, true);
        for b in &enc.branches {
            params.value_mut(b.bias).values_mut().copy_from_slice(&[0.5, -0.5, 0.0, 2.0]);
        }
        let (v, _) = enc.encode(&params, &doc(&[2, 3, 4, 5, 2, 3], 8), None);
        assert_eq!(v, [0.5, 0.0, 0.0, 2.0].repeat(3));
    }

    #[test]
    fn repeated_token_pools_any_window() {
        let (params, enc) = small_cnn(3, false);
        let long = enc.encode(&params, &doc(&[4; 7], 8), None).0;
        let exact = enc.encode(&params, &doc(&[4; 5], 8), None).0;
        // Every valid window is identical, so the pooled value equals any
        // single window's activation as long as each branch has one.
        assert_eq!(long, exact);
    }

    #[test]
    fn pad_tail_is_ignored() {
        let (params, enc) = small_cnn(3, false);
        let a = doc(&[2, 3, 4], 8);
        let mut b = a.clone();
        for slot in &mut b.ids[3..] {
            *slot = 5;
        }
        assert_eq!(enc.encode(&params, &a, None).0, enc.encode(&params, &b, None).0);
    }

    #[test]
    fn config_validation() {
        assert!(TextCnnConfig::default().validate(100).is_ok());
        assert!(TextCnnConfig::default().validate(4).is_err());
        let bad = TextCnnConfig {
            dropout: 1.0,
            ..Default::default()
        };
        assert!(bad.validate(100).is_err());
    }
}
