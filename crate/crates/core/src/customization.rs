//! Classifier heads customized by a categorical variable (product category).
//!
//! Four customization modes are supported on top of the plain linear head:
//!
//! - `bias_cust`: `y = W [d; c] + b`, with `c` the category embedding.
//! - `linear_cust`: `y = W_cat d + b`, one weight matrix per category.
//! - `bias_basis_cust`: `y = W d + v_c`, where `v_c = sum_i gamma_i b_i` and
//!   `gamma = softmax(K c)` attends over a small set of basis vectors.
//! - `linear_basis_cust`: `y = W_c d + b`, where `W_c` is `v_c` (living in the
//!   flattened `k*n` weight space) reshaped row-major to `k x n`.
//!
//! A single categorical variable is used, so the attention query is the
//! category embedding itself.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{axpy, dot, linear_forward, softmax, Differentiable, Matrix, ParamId, ParameterSet, SeededRng};

pub const UNK_CATEGORY: &str = "UNK";
pub const DEFAULT_CATEGORY_DIM: usize = 64;
pub const DEFAULT_BASIS_COUNT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CustMode {
    #[default]
    None,
    BiasCust,
    BiasBasisCust,
    LinearCust,
    LinearBasisCust,
}

impl CustMode {
    pub const ALL: [CustMode; 5] = [
        CustMode::None,
        CustMode::BiasCust,
        CustMode::BiasBasisCust,
        CustMode::LinearCust,
        CustMode::LinearBasisCust,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CustMode::None => "none",
            CustMode::BiasCust => "bias_cust",
            CustMode::BiasBasisCust => "bias_basis_cust",
            CustMode::LinearCust => "linear_cust",
            CustMode::LinearBasisCust => "linear_basis_cust",
        }
    }

    pub fn uses_basis(self) -> bool {
        matches!(self, CustMode::BiasBasisCust | CustMode::LinearBasisCust)
    }
}

impl fmt::Display for CustMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CustMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CustMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown customization mode `{s}` (expected none|bias_cust|bias_basis_cust|linear_cust|linear_basis_cust)"
                ))
            })
    }
}

/// Dense category index with `UNK` at 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct CategoryVocabulary {
    names: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl From<Vec<String>> for CategoryVocabulary {
    fn from(names: Vec<String>) -> Self {
        CategoryVocabulary::new(names)
    }
}

impl From<CategoryVocabulary> for Vec<String> {
    fn from(v: CategoryVocabulary) -> Self {
        v.names
    }
}

impl CategoryVocabulary {
    pub fn new<I, S>(categories: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set: Vec<String> = categories
            .into_iter()
            .map(|s| s.as_ref().to_string())
            .filter(|s| s != UNK_CATEGORY)
            .collect();
        set.sort();
        set.dedup();
        let names: Vec<String> = std::iter::once(UNK_CATEGORY.to_string()).chain(set).collect();
        Self::from_names(names)
    }

    fn from_names(names: Vec<String>) -> Self {
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        CategoryVocabulary { names, index }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.len() <= 1
    }

    pub fn index(&self, category: &str) -> usize {
        self.index.get(category).copied().unwrap_or(0)
    }

    pub fn contains(&self, category: &str) -> bool {
        self.index.contains_key(category)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// `W [d; c] + b`, computed on the explicit concatenation.
pub fn bias_cust_logits(d: &[f64], c: &[f64], w: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let mut x = Vec::with_capacity(d.len() + c.len());
    x.extend_from_slice(d);
    x.extend_from_slice(c);
    linear_forward(&x, w, b)
}

/// `W_cat d + b`.
pub fn linear_cust_logits(d: &[f64], w_cat: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    linear_forward(d, w_cat, b)
}

/// `gamma = softmax(z)` with `z_i = q . k_i` for each key row.
pub fn basis_attention(query: &[f64], keys: &Matrix) -> Result<Vec<f64>> {
    if keys.rows() == 0 {
        return Err(Error::Empty("basis keys"));
    }
    let z = keys.matvec(query)?;
    softmax(&z)
}

/// `v_c = sum_i gamma_i b_i` over basis rows.
pub fn basis_customized_vector(gamma: &[f64], basis: &Matrix) -> Result<Vec<f64>> {
    if gamma.len() != basis.rows() {
        return Err(Error::dim(
            "basis_customized_vector",
            format!("gamma {}", gamma.len()),
            format!("basis {}x{}", basis.rows(), basis.cols()),
        ));
    }
    basis.matvec_t(gamma)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub mode: CustMode,
    /// Fused representation dimension `n`.
    pub input_dim: usize,
    /// Label count `k`.
    pub classes: usize,
    pub num_categories: usize,
    pub category_dim: usize,
    pub basis_count: usize,
}

impl HeadConfig {
    /// Dimension of the customized weight space for basis modes.
    pub fn basis_target_dim(&self) -> usize {
        match self.mode {
            CustMode::BiasBasisCust => self.classes,
            CustMode::LinearBasisCust => self.classes * self.input_dim,
            _ => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.classes < 2 {
            return Err(Error::Config(format!(
                "head needs input_dim >= 1 and classes >= 2 (got {}, {})",
                self.input_dim, self.classes
            )));
        }
        if self.mode != CustMode::None && (self.num_categories == 0 || self.category_dim == 0) {
            return Err(Error::Config(format!(
                "{} needs at least one category and category_dim >= 1",
                self.mode
            )));
        }
        if self.mode.uses_basis() {
            let target = self.basis_target_dim();
            if self.basis_count == 0 || self.basis_count > target {
                return Err(Error::Config(format!(
                    "{} basis count {} must be in 1..={target}",
                    self.mode, self.basis_count
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub config: HeadConfig,
    weight: Option<ParamId>,
    bias: Option<ParamId>,
    category_embedding: Option<ParamId>,
    category_weights: Option<ParamId>,
    basis: Option<ParamId>,
    keys: Option<ParamId>,
}

#[derive(Debug, Clone, Default)]
pub struct HeadCache {
    category: usize,
    gamma: Vec<f64>,
    /// Customized vector `v_c` (bias or flattened weight).
    custom: Vec<f64>,
}

impl ClassifierHead {
    pub fn new(params: &mut ParameterSet, config: HeadConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let HeadConfig {
            mode,
            input_dim: n,
            classes: k,
            num_categories: cats,
            category_dim: cd,
            basis_count: nb,
        } = config;
        let mut head = ClassifierHead {
            config: config.clone(),
            weight: None,
            bias: None,
            category_embedding: None,
            category_weights: None,
            basis: None,
            keys: None,
        };
        match mode {
            CustMode::None => {
                head.weight = Some(params.add("head.weight", Matrix::xavier(k, n, rng))?);
            }
            CustMode::BiasCust => {
                head.weight = Some(params.add("head.weight", Matrix::xavier(k, n + cd, rng))?);
            }
            CustMode::LinearCust => {
                let limit = (6.0 / (k + n) as f64).sqrt();
                head.category_weights = Some(params.add(
                    "head.category_weights",
                    Matrix::uniform(cats * k, n, limit, rng),
                )?);
            }
            CustMode::BiasBasisCust => {
                head.weight = Some(params.add("head.weight", Matrix::xavier(k, n, rng))?);
            }
            CustMode::LinearBasisCust => {}
        }
        if mode != CustMode::BiasBasisCust {
            head.bias = Some(params.add("head.bias", Matrix::zeros(1, k))?);
        }
        if matches!(mode, CustMode::BiasCust | CustMode::BiasBasisCust | CustMode::LinearBasisCust) {
            head.category_embedding =
                Some(params.add("category.embedding", Matrix::xavier(cats, cd, rng))?);
        }
        if mode.uses_basis() {
            let target = config.basis_target_dim();
            let limit = match mode {
                CustMode::LinearBasisCust => (6.0 / (k + n) as f64).sqrt(),
                _ => (6.0 / (nb + k) as f64).sqrt(),
            };
            head.basis = Some(params.add("head.basis", Matrix::uniform(nb, target, limit, rng))?);
            head.keys = Some(params.add("head.keys", Matrix::xavier(nb, cd, rng))?);
        }
        Ok(head)
    }

    pub fn bind(params: &ParameterSet, config: HeadConfig) -> Result<Self> {
        config.validate()?;
        let HeadConfig {
            mode,
            input_dim: n,
            classes: k,
            num_categories: cats,
            category_dim: cd,
            basis_count: nb,
        } = config;
        let opt = |cond: bool, name: &str, r: usize, c: usize| -> Result<Option<ParamId>> {
            if cond {
                params.expect(name, r, c).map(Some)
            } else {
                Ok(None)
            }
        };
        Ok(ClassifierHead {
            weight: opt(
                matches!(mode, CustMode::None | CustMode::BiasBasisCust),
                "head.weight",
                k,
                n,
            )?
            .or(opt(mode == CustMode::BiasCust, "head.weight", k, n + cd)?),
            bias: opt(mode != CustMode::BiasBasisCust, "head.bias", 1, k)?,
            category_embedding: opt(
                matches!(mode, CustMode::BiasCust | CustMode::BiasBasisCust | CustMode::LinearBasisCust),
                "category.embedding",
                cats,
                cd,
            )?,
            category_weights: opt(mode == CustMode::LinearCust, "head.category_weights", cats * k, n)?,
            basis: opt(mode.uses_basis(), "head.basis", nb, config.basis_target_dim())?,
            keys: opt(mode.uses_basis(), "head.keys", nb, cd)?,
            config,
        })
    }

    pub fn mode(&self) -> CustMode {
        self.config.mode
    }

    fn resolve_category(&self, category: usize) -> usize {
        if category < self.config.num_categories {
            category
        } else {
            0
        }
    }

    fn category_block(&self, params: &ParameterSet, category: usize) -> Matrix {
        let k = self.config.classes;
        let w = params.value(self.category_weights.expect("linear_cust weights"));
        let values = w.values()[category * k * w.cols()..(category + 1) * k * w.cols()].to_vec();
        Matrix::from_vec(k, w.cols(), values).expect("category block shape")
    }

    /// Logits for fused input `d` under `category` (unknown indices map to UNK).
    pub fn forward(&self, params: &ParameterSet, d: &[f64], category: usize) -> Result<(Vec<f64>, HeadCache)> {
        let n = self.config.input_dim;
        if d.len() != n {
            return Err(Error::dim("classifier head input", format!("expected {n}"), d.len()));
        }
        let cat = self.resolve_category(category);
        let mut cache = HeadCache {
            category: cat,
            ..Default::default()
        };
        let bias = |id: Option<ParamId>| id.map(|b| params.value(b).values().to_vec());
        let logits = match self.config.mode {
            CustMode::None => linear_forward(d, params.value(self.weight.unwrap()), &bias(self.bias).unwrap())?,
            CustMode::BiasCust => {
                let c = params.value(self.category_embedding.unwrap()).row(cat);
                bias_cust_logits(d, c, params.value(self.weight.unwrap()), &bias(self.bias).unwrap())?
            }
            CustMode::LinearCust => {
                linear_cust_logits(d, &self.category_block(params, cat), &bias(self.bias).unwrap())?
            }
            CustMode::BiasBasisCust | CustMode::LinearBasisCust => {
                let q = params.value(self.category_embedding.unwrap()).row(cat);
                let gamma = basis_attention(q, params.value(self.keys.unwrap()))?;
                let v = basis_customized_vector(&gamma, params.value(self.basis.unwrap()))?;
                let logits = if self.config.mode == CustMode::BiasBasisCust {
                    linear_forward(d, params.value(self.weight.unwrap()), &v)?
                } else {
                    let w_c = Matrix::from_vec(self.config.classes, n, v.clone())?;
                    linear_forward(d, &w_c, &bias(self.bias).unwrap())?
                };
                cache.gamma = gamma;
                cache.custom = v;
                logits
            }
        };
        Ok((logits, cache))
    }

    /// Accumulates parameter gradients and returns `d loss / d input`.
    pub fn backward(&self, params: &mut ParameterSet, d: &[f64], cache: &HeadCache, g: &[f64]) -> Result<Vec<f64>> {
        let n = self.config.input_dim;
        let k = self.config.classes;
        let cat = cache.category;
        if let Some(b) = self.bias {
            axpy(1.0, g, params.grad_mut(b).values_mut());
        }
        match self.config.mode {
            CustMode::None => {
                let (w, gw) = params.split_mut(self.weight.unwrap());
                gw.add_outer(1.0, g, d);
                w.matvec_t(g)
            }
            CustMode::BiasCust => {
                let emb = self.category_embedding.unwrap();
                let mut x = d.to_vec();
                x.extend_from_slice(params.value(emb).row(cat));
                let dx = {
                    let (w, gw) = params.split_mut(self.weight.unwrap());
                    gw.add_outer(1.0, g, &x);
                    w.matvec_t(g)?
                };
                axpy(1.0, &dx[n..], params.grad_mut(emb).row_mut(cat));
                Ok(dx[..n].to_vec())
            }
            CustMode::LinearCust => {
                let id = self.category_weights.unwrap();
                let (w, gw) = params.split_mut(id);
                let mut dd = vec![0.0; n];
                for r in 0..k {
                    let row = cat * k + r;
                    axpy(g[r], d, gw.row_mut(row));
                    axpy(g[r], w.row(row), &mut dd);
                }
                Ok(dd)
            }
            CustMode::BiasBasisCust | CustMode::LinearBasisCust => {
                let (dd, dv) = if self.config.mode == CustMode::BiasBasisCust {
                    let (w, gw) = params.split_mut(self.weight.unwrap());
                    gw.add_outer(1.0, g, d);
                    (w.matvec_t(g)?, g.to_vec())
                } else {
                    // dW_c = g d^T, flattened row-major; dd = W_c^T g.
                    let mut dv = vec![0.0; k * n];
                    let mut dd = vec![0.0; n];
                    for r in 0..k {
                        axpy(g[r], d, &mut dv[r * n..(r + 1) * n]);
                        axpy(g[r], &cache.custom[r * n..(r + 1) * n], &mut dd);
                    }
                    (dd, dv)
                };
                self.basis_backward(params, cat, &cache.gamma, &dv);
                Ok(dd)
            }
        }
    }

    /// Backpropagates `d loss / d v_c` into basis vectors, keys and the category embedding.
    fn basis_backward(&self, params: &mut ParameterSet, cat: usize, gamma: &[f64], dv: &[f64]) {
        let basis = self.basis.unwrap();
        let keys = self.keys.unwrap();
        let emb = self.category_embedding.unwrap();
        let dgamma: Vec<f64> = {
            let (b, gb) = params.split_mut(basis);
            (0..gamma.len())
                .map(|i| {
                    axpy(gamma[i], dv, gb.row_mut(i));
                    dot(b.row(i), dv)
                })
                .collect()
        };
        let mean = dot(gamma, &dgamma);
        let dz: Vec<f64> = gamma.iter().zip(&dgamma).map(|(gi, dgi)| gi * (dgi - mean)).collect();
        let q = params.value(emb).row(cat).to_vec();
        let dq = {
            let (kv, gk) = params.split_mut(keys);
            gk.add_outer(1.0, &dz, &q);
            kv.matvec_t(&dz).expect("key shape")
        };
        axpy(1.0, &dq, params.grad_mut(emb).row_mut(cat));
    }
}

/// Logits of any head mode for document vector `d` and category index.
pub fn customized_logits(head: &ClassifierHead, params: &ParameterSet, d: &[f64], category: usize) -> Result<Vec<f64>> {
    Ok(head.forward(params, d, category)?.0)
}

impl Differentiable for ClassifierHead {
    type Input = (Vec<f64>, usize);
    type Cache = HeadCache;

    fn forward(
        &self,
        params: &ParameterSet,
        input: &Self::Input,
        _dropout: Option<&mut SeededRng>,
    ) -> Result<(Vec<f64>, HeadCache)> {
        ClassifierHead::forward(self, params, &input.0, input.1)
    }

    fn backward(
        &self,
        params: &mut ParameterSet,
        input: &Self::Input,
        cache: &HeadCache,
        grad_logits: &[f64],
    ) -> Result<()> {
        ClassifierHead::backward(self, params, &input.0, cache, grad_logits).map(|_| ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{gradient_check, seeded_rng};

    fn config(mode: CustMode, basis_count: usize) -> HeadConfig {
        HeadConfig {
            mode,
            input_dim: 5,
            classes: 3,
            num_categories: 4,
            category_dim: 6,
            basis_count,
        }
    }

    #[test]
    fn mode_names_round_trip() {
        for m in CustMode::ALL {
            assert_eq!(m.as_str().parse::<CustMode>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
        }
        assert!("bias".parse::<CustMode>().is_err());
    }

    #[test]
    fn category_vocab_has_unk_at_zero() {
        let v = CategoryVocabulary::new(["Fashion", "Book", "Fashion"]);
        assert_eq!(v.names(), &["UNK", "Book", "Fashion"]);
        assert_eq!(v.index("Book"), 1);
        assert_eq!(v.index("Toy"), 0);
    }

    #[test]
    fn basis_count_bounded_by_target_dim() {
        let mut p = ParameterSet::new();
        let err = ClassifierHead::new(&mut p, config(CustMode::BiasBasisCust, 4), &mut seeded_rng(0));
        assert!(matches!(err, Err(Error::Config(_))));
        let mut p = ParameterSet::new();
        assert!(ClassifierHead::new(&mut p, config(CustMode::LinearBasisCust, 4), &mut seeded_rng(0)).is_ok());
    }

    #[test]
    fn zero_category_embedding_matches_plain_head() {
        let mut rng = seeded_rng(5);
        let w = Matrix::xavier(3, 5 + 6, &mut rng);
        let b = vec![0.1, -0.2, 0.3];
        let d = vec![0.5, -1.0, 0.25, 2.0, 0.0];
        let c = vec![0.0; 6];
        let plain_w = Matrix::from_rows(&(0..3).map(|r| w.row(r)[..5].to_vec()).collect::<Vec<_>>()).unwrap();
        let a = bias_cust_logits(&d, &c, &w, &b).unwrap();
        let p = linear_forward(&d, &plain_w, &b).unwrap();
        for (x, y) in a.iter().zip(&p) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn attention_degenerate_cases() {
        let keys = Matrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        for g in basis_attention(&[0.3, -0.7], &keys).unwrap() {
            assert!((g - 1.0 / 3.0).abs() < 1e-15);
        }
        let one = Matrix::from_rows(&[vec![4.0, -1.0]]).unwrap();
        assert_eq!(basis_attention(&[0.3, 0.9], &one).unwrap(), vec![1.0]);
    }

    #[test]
    fn customized_vector_degenerate_cases() {
        let basis = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 0.0]]).unwrap();
        assert_eq!(basis_customized_vector(&[0.0, 1.0], &basis).unwrap(), vec![-1.0, 0.5, 0.0]);
        let single = Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(basis_customized_vector(&[1.0], &single).unwrap(), vec![1.0, 2.0, 3.0]);
        assert!(basis_customized_vector(&[0.5], &basis).is_err());
    }

    #[test]
    fn unknown_category_uses_unk_row() {
        let mut p = ParameterSet::new();
        let head = ClassifierHead::new(&mut p, config(CustMode::LinearCust, 1), &mut seeded_rng(2)).unwrap();
        let d = vec![0.1, 0.2, 0.3, 0.4, 0.5];
        assert_eq!(
            customized_logits(&head, &p, &d, 99).unwrap(),
            customized_logits(&head, &p, &d, 0).unwrap()
        );
    }

    #[test]
    fn heads_pass_gradient_check() {
        for (mode, nb) in [
            (CustMode::None, 1),
            (CustMode::BiasCust, 1),
            (CustMode::LinearCust, 1),
            (CustMode::BiasBasisCust, 3),
            (CustMode::LinearBasisCust, 4),
        ] {
            let mut rng = seeded_rng(17);
            let mut p = ParameterSet::new();
            let head = ClassifierHead::new(&mut p, config(mode, nb), &mut rng).unwrap();
            let examples = vec![
                (vec![0.3, -0.8, 1.2, 0.05, -0.4], 1),
                (vec![-1.1, 0.6, 0.2, 0.9, 0.3], 2),
                (vec![0.7, 0.1, -0.5, -0.2, 1.4], 0),
            ];
            let examples: Vec<_> = examples
                .into_iter()
                .enumerate()
                .map(|(i, (d, y))| ((d, i % 4), y))
                .collect();
            let err = gradient_check(&head, &mut p, &examples).unwrap();
            assert!(err <= 1e-5, "{mode}: relative error {err}");
        }
    }

    #[test]
    fn bind_restores_layout() {
        for (mode, nb) in [
            (CustMode::None, 1),
            (CustMode::BiasCust, 1),
            (CustMode::LinearCust, 1),
            (CustMode::BiasBasisCust, 2),
            (CustMode::LinearBasisCust, 4),
        ] {
            let mut p = ParameterSet::new();
            let head = ClassifierHead::new(&mut p, config(mode, nb), &mut seeded_rng(1)).unwrap();
            let bound = ClassifierHead::bind(&p, config(mode, nb)).unwrap();
            assert_eq!(head, bound);
        }
    }
}
