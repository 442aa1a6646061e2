use super::{cross_entropy, softmax, ParameterSet, SeededRng};
use crate::error::{Error, Result};

/// A model fragment that maps an input to logits and can push
/// gradients of the logits back into its parameters.
pub trait Differentiable {
    type Input;
    type Cache;

    /// Computes logits. `dropout` is `Some` only in training mode.
    fn forward(
        &self,
        params: &ParameterSet,
        input: &Self::Input,
        dropout: Option<&mut SeededRng>,
    ) -> Result<(Vec<f64>, Self::Cache)>;

    /// Accumulates parameter gradients given `d loss / d logits`.
    fn backward(
        &self,
        params: &mut ParameterSet,
        input: &Self::Input,
        cache: &Self::Cache,
        grad_logits: &[f64],
    ) -> Result<()>;
}

struct Record<'a, M: Differentiable> {
    input: &'a M::Input,
    cache: M::Cache,
    probs: Vec<f64>,
    gold: usize,
}

/// Records softmax + cross-entropy forward passes for a mini-batch and
/// replays them backward. The batch loss is the mean over recorded examples.
pub struct LossTape<'a, M: Differentiable> {
    model: &'a M,
    records: Vec<Record<'a, M>>,
}

impl<'a, M: Differentiable> LossTape<'a, M> {
    pub fn new(model: &'a M) -> Self {
        LossTape {
            model,
            records: Vec::new(),
        }
    }

    /// Runs one example forward and returns its loss.
    pub fn forward(
        &mut self,
        params: &ParameterSet,
        input: &'a M::Input,
        gold: usize,
        dropout: Option<&mut SeededRng>,
    ) -> Result<f64> {
        let (logits, cache) = self.model.forward(params, input, dropout)?;
        let probs = softmax(&logits)?;
        let loss = cross_entropy(&probs, gold)?;
        self.records.push(Record {
            input,
            cache,
            probs,
            gold,
        });
        Ok(loss)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Accumulates gradients of the mean batch loss and clears the tape.
    pub fn backward(&mut self, params: &mut ParameterSet) -> Result<()> {
        if self.records.is_empty() {
            return Err(Error::BackwardBeforeForward);
        }
        let scale = 1.0 / self.records.len() as f64;
        for rec in self.records.drain(..) {
            let mut grad = rec.probs;
            grad[rec.gold] -= 1.0;
            grad.iter_mut().for_each(|g| *g *= scale);
            self.model.backward(params, rec.input, &rec.cache, &grad)?;
        }
        Ok(())
    }
}

/// Mean cross-entropy over `examples` in inference mode.
pub fn mean_loss<M: Differentiable>(
    model: &M,
    params: &ParameterSet,
    examples: &[(M::Input, usize)],
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Empty("loss examples"));
    }
    let mut total = 0.0;
    for (input, gold) in examples {
        let (logits, _) = model.forward(params, input, None)?;
        total += cross_entropy(&softmax(&logits)?, *gold)?;
    }
    Ok(total / examples.len() as f64)
}
