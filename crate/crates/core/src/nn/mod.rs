//! Dense numerics with hand-written gradients.
//!
//! Parameters live in a [`ParameterSet`]; layers hold [`ParamId`]s into it.
//! A forward pass returns logits plus a layer-specific cache, and
//! [`LossTape`] replays softmax/cross-entropy gradients through
//! [`Differentiable::backward`].

mod gradcheck;
mod matrix;
mod ops;
mod optim;
mod params;
mod tape;

pub use gradcheck::{gradient_check, gradient_check_report, GradCheckReport, FD_STEP};
pub use matrix::{axpy, dot, Matrix};
pub use ops::{argmax, cross_entropy, linear_forward, softmax, LOG_PROB_FLOOR};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use params::{ParamId, ParamRecord, Parameter, ParameterSet};
pub use tape::{mean_loss, Differentiable, LossTape};

use rand::SeedableRng;

use crate::error::{Error, Result};

/// RNG used for every seeded stream (init, shuffling, dropout).
pub type SeededRng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    SeededRng::seed_from_u64(seed)
}

/// Affine layer `y = W x + b` over parameters stored in a [`ParameterSet`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Registers `<name>.weight` (Glorot uniform) and, optionally, `<name>.bias` (zeros).
    pub fn new(
        params: &mut ParameterSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let weight = params.add(format!("{name}.weight"), Matrix::xavier(out_dim, in_dim, rng))?;
        let bias = if bias {
            Some(params.add(format!("{name}.bias"), Matrix::zeros(1, out_dim))?)
        } else {
            None
        };
        Ok(Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    /// Rebinds to already-registered parameters.
    pub fn bind(
        params: &ParameterSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
    ) -> Result<Self> {
        let weight = params.expect(&format!("{name}.weight"), out_dim, in_dim)?;
        let bias = if bias {
            Some(params.expect(&format!("{name}.bias"), 1, out_dim)?)
        } else {
            None
        };
        Ok(Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, params: &ParameterSet, x: &[f64]) -> Result<Vec<f64>> {
        match self.bias {
            Some(b) => linear_forward(x, params.value(self.weight), params.value(b).values()),
            None => params.value(self.weight).matvec(x),
        }
    }

    /// Accumulates `dW += dy x^T`, `db += dy` and returns `W^T dy`.
    pub fn backward(&self, params: &mut ParameterSet, x: &[f64], dy: &[f64]) -> Result<Vec<f64>> {
        if dy.len() != self.out_dim || x.len() != self.in_dim {
            return Err(Error::dim(
                "linear backward",
                format!("{}x{}", self.out_dim, self.in_dim),
                format!("dy {} / x {}", dy.len(), x.len()),
            ));
        }
        if let Some(b) = self.bias {
            axpy(1.0, dy, params.grad_mut(b).values_mut());
        }
        let (w, gw) = params.split_mut(self.weight);
        gw.add_outer(1.0, dy, x);
        w.matvec_t(dy)
    }
}

/// Multinomial logistic regression on raw feature vectors.
#[derive(Debug, Clone, Copy)]
pub struct LinearClassifier {
    pub layer: Linear,
}

impl LinearClassifier {
    pub fn new(params: &mut ParameterSet, in_dim: usize, classes: usize, rng: &mut SeededRng) -> Result<Self> {
        Ok(LinearClassifier {
            layer: Linear::new(params, "linear", in_dim, classes, true, rng)?,
        })
    }
}

impl Differentiable for LinearClassifier {
    type Input = Vec<f64>;
    type Cache = ();

    fn forward(
        &self,
        params: &ParameterSet,
        input: &Vec<f64>,
        _dropout: Option<&mut SeededRng>,
    ) -> Result<(Vec<f64>, ())> {
        Ok((self.layer.forward(params, input)?, ()))
    }

    fn backward(
        &self,
        params: &mut ParameterSet,
        input: &Vec<f64>,
        _cache: &(),
        grad_logits: &[f64],
    ) -> Result<()> {
        self.layer.backward(params, input, grad_logits)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_before_forward_errors() {
        let mut params = ParameterSet::new();
        let model = LinearClassifier::new(&mut params, 2, 2, &mut seeded_rng(1)).unwrap();
        let mut tape = LossTape::new(&model);
        assert!(matches!(tape.backward(&mut params), Err(Error::BackwardBeforeForward)));
    }

    #[test]
    fn backward_accumulates_without_zeroing() {
        let mut params = ParameterSet::new();
        let model = LinearClassifier::new(&mut params, 2, 2, &mut seeded_rng(1)).unwrap();
        let x = vec![0.5, -1.0];
        let mut tape = LossTape::new(&model);
        tape.forward(&params, &x, 1, None).unwrap();
        tape.backward(&mut params).unwrap();
        let once = params.grad(model.layer.weight).clone();
        tape.forward(&params, &x, 1, None).unwrap();
        tape.backward(&mut params).unwrap();
        for (a, b) in params.grad(model.layer.weight).values().iter().zip(once.values()) {
            assert!((a - 2.0 * b).abs() < 1e-15);
        }
    }

    #[test]
    fn no_signal_gives_zero_gradient() {
        // Zero weights on two symmetric examples with opposite labels: the
        // prediction equals the average target, so the mean gradient vanishes.
        let mut params = ParameterSet::new();
        let model = LinearClassifier::new(&mut params, 2, 2, &mut seeded_rng(1)).unwrap();
        params.value_mut(model.layer.weight).fill(0.0);
        let x = vec![0.0, 0.0];
        let mut tape = LossTape::new(&model);
        tape.forward(&params, &x, 0, None).unwrap();
        tape.forward(&params, &x, 1, None).unwrap();
        tape.backward(&mut params).unwrap();
        assert!(params.grad_norm() < 1e-9);
    }

    #[test]
    fn unused_parameter_gets_exact_zero() {
        let mut params = ParameterSet::new();
        let model = LinearClassifier::new(&mut params, 2, 2, &mut seeded_rng(1)).unwrap();
        let unused = params.add("unused", Matrix::from_vec(1, 2, vec![1.0, 2.0]).unwrap()).unwrap();
        let x = vec![0.3, 0.7];
        let mut tape = LossTape::new(&model);
        tape.forward(&params, &x, 0, None).unwrap();
        tape.backward(&mut params).unwrap();
        assert!(params.grad(unused).values().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn linear_two_sample_batch_matches_finite_differences() {
        let mut params = ParameterSet::new();
        let model = LinearClassifier::new(&mut params, 3, 2, &mut seeded_rng(7)).unwrap();
        let examples = vec![(vec![0.2, -0.4, 1.1], 0), (vec![-0.9, 0.3, 0.5], 1)];
        let err = gradient_check(&model, &mut params, &examples).unwrap();
        assert!(err <= 1e-6, "relative error {err}");
    }
}
