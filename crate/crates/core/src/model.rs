use crate::bayes::{mc_predictive, GaussianLogits};
use crate::entropy::ProbVector;
use crate::error::{Error, Result};
use crate::nn::MlpModel;
use crate::objective::Predictive;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Output head of a [`Classifier`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Head {
    /// `K` logits through a softmax.
    Deterministic,
    /// `2K` outputs read as Gaussian logits; training draws `train_samples`
    /// Monte-Carlo samples per input.
    Gaussian { train_samples: usize },
}

/// A network, its output head and the generator that feeds its training
/// noise. The three move together and are never shared mutably.
#[derive(Clone, Debug)]
pub struct Classifier {
    mlp: MlpModel,
    head: Head,
    num_classes: usize,
    rng: SeededRng,
    zero_sigma: bool,
}

impl Classifier {
    /// `input → hidden… → K` (or `2K` for a Gaussian head), weights drawn
    /// from `seed`.
    pub fn new(input_dim: usize, hidden: &[usize], num_classes: usize, head: Head, seed: u64) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {num_classes}")));
        }
        if let Head::Gaussian { train_samples: 0 } = head {
            return Err(Error::Config("Monte-Carlo sample count must be ≥ 1".into()));
        }
        let mut widths = vec![input_dim];
        widths.extend_from_slice(hidden);
        widths.push(match head {
            Head::Deterministic => num_classes,
            Head::Gaussian { .. } => 2 * num_classes,
        });
        let mut rng = SeededRng::new(seed);
        let mlp = MlpModel::new(&widths, &mut rng)?;
        Ok(Self {
            mlp,
            head,
            num_classes,
            rng,
            zero_sigma: false,
        })
    }

    pub fn from_mlp(mlp: MlpModel, num_classes: usize, head: Head, seed: u64) -> Result<Self> {
        let expected = match head {
            Head::Deterministic => num_classes,
            Head::Gaussian { .. } => 2 * num_classes,
        };
        if mlp.output_width() != expected {
            return Err(Error::dim(format!("output width {expected}"), mlp.output_width()));
        }
        Ok(Self {
            mlp,
            head,
            num_classes,
            rng: SeededRng::new(seed),
            zero_sigma: false,
        })
    }

    pub fn mlp(&self) -> &MlpModel {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut MlpModel {
        &mut self.mlp
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn is_bayesian(&self) -> bool {
        matches!(self.head, Head::Gaussian { .. })
    }

    /// Test hook: treat σ as exactly zero everywhere.
    pub fn force_zero_sigma(&mut self, on: bool) {
        self.zero_sigma = on;
    }

    /// Predictive for one training pass over `rows` inputs, drawing fresh
    /// noise from the model's generator.
    pub fn training_predictive(&mut self, rows: usize) -> Predictive {
        match self.head {
            Head::Deterministic => Predictive::Softmax,
            Head::Gaussian { train_samples } if self.zero_sigma => Predictive::ZeroSigma {
                samples: train_samples,
            },
            Head::Gaussian { train_samples } => Predictive::Gaussian {
                samples: train_samples,
                eps: self.rng.normals(rows * train_samples * self.num_classes),
            },
        }
    }

    pub fn gaussian_logits(&self, inputs: &Tensor) -> Result<Vec<GaussianLogits>> {
        if !self.is_bayesian() {
            return Err(Error::State("deterministic head has no Gaussian logits".into()));
        }
        let out = self.mlp.predict(inputs)?;
        (0..out.rows())
            .map(|r| {
                let g = GaussianLogits::from_output(out.row(r))?;
                Ok(if self.zero_sigma { g.with_zero_sigma() } else { g })
            })
            .collect()
    }

    /// Predictive distributions for every row. Gaussian heads average
    /// `eval_samples` softmaxed samples drawn from a generator seeded with
    /// `eval_seed`, so the result is a pure function of weights and seed.
    pub fn predict_probs(&self, inputs: &Tensor, eval_samples: usize, eval_seed: u64) -> Result<Vec<ProbVector>> {
        match self.head {
            Head::Deterministic => {
                let out = self.mlp.predict(inputs)?;
                (0..out.rows()).map(|r| ProbVector::softmax(out.row(r))).collect()
            }
            Head::Gaussian { .. } => {
                let mut rng = SeededRng::new(eval_seed);
                self.gaussian_logits(inputs)?
                    .iter()
                    .map(|g| mc_predictive(g, eval_samples, &mut rng).map(|p| p.probs))
                    .collect()
            }
        }
    }
}
