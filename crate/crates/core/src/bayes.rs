//! Gaussian-logit Bayesian head: reparameterized logit samples,
//! Monte-Carlo predictive distributions and the ELBO-style pretraining loss.

use crate::data::LabeledBatch;
use crate::entropy::{softmax, ProbVector};
use crate::error::{Error, Result};
use crate::model::Classifier;
use crate::objective::{Objective, Term, TermLoss};
use crate::rng::SeededRng;

/// Lower clamp on predicted log-variance (σ ≈ 6.7e-3).
pub const LOG_VAR_MIN: f64 = -10.0;
/// Upper clamp on predicted log-variance (σ ≈ 7.4).
pub const LOG_VAR_MAX: f64 = 4.0;

/// Per-class logit means and log-variances for one input.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianLogits {
    mu: Vec<f64>,
    log_var: Vec<f64>,
    zero_sigma: bool,
}

impl GaussianLogits {
    /// Clamps `log_var` into `[LOG_VAR_MIN, LOG_VAR_MAX]`.
    pub fn new(mu: Vec<f64>, log_var: Vec<f64>) -> Result<Self> {
        if mu.len() != log_var.len() || mu.is_empty() {
            return Err(Error::dim(format!("log_var of length {}", mu.len()), log_var.len()));
        }
        if mu.iter().chain(&log_var).any(|v| !v.is_finite()) {
            return Err(Error::Validation("Gaussian logits must be finite".into()));
        }
        let log_var = log_var
            .into_iter()
            .map(|v| v.clamp(LOG_VAR_MIN, LOG_VAR_MAX))
            .collect();
        Ok(Self {
            mu,
            log_var,
            zero_sigma: false,
        })
    }

    /// Splits a `2K` network output row into `(μ, log σ²)`.
    pub fn from_output(row: &[f64]) -> Result<Self> {
        if !row.len().is_multiple_of(2) {
            return Err(Error::dim("an even-width output row", row.len()));
        }
        let k = row.len() / 2;
        Self::new(row[..k].to_vec(), row[k..].to_vec())
    }

    /// Forces σ to exactly zero, so every sample equals μ (test hook).
    pub fn with_zero_sigma(mut self) -> Self {
        self.zero_sigma = true;
        self
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn log_var(&self) -> &[f64] {
        &self.log_var
    }

    pub fn num_classes(&self) -> usize {
        self.mu.len()
    }

    pub fn sigma(&self) -> Vec<f64> {
        if self.zero_sigma {
            return vec![0.0; self.mu.len()];
        }
        self.log_var.iter().map(|lv| (0.5 * lv).exp()).collect()
    }
}

/// Mean of `M` softmaxed logit samples.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveDistribution {
    pub probs: ProbVector,
    pub num_samples: usize,
}

/// `μ + σ⊙ε`, `ε ~ N(0, I)` drawn coordinate by coordinate from `rng`.
pub fn sample_logits(g: &GaussianLogits, rng: &mut SeededRng) -> Vec<f64> {
    g.mu
        .iter()
        .zip(g.sigma())
        .map(|(&m, s)| m + s * rng.normal())
        .collect()
}

pub fn mc_predictive(
    g: &GaussianLogits,
    samples: usize,
    rng: &mut SeededRng,
) -> Result<PredictiveDistribution> {
    if samples == 0 {
        return Err(Error::Config("Monte-Carlo sample count must be ≥ 1".into()));
    }
    let mut p = vec![0.0; g.num_classes()];
    for _ in 0..samples {
        for (acc, q) in p.iter_mut().zip(softmax(&sample_logits(g, rng))) {
            *acc += q;
        }
    }
    let inv = 1.0 / samples as f64;
    p.iter_mut().for_each(|v| *v *= inv);
    Ok(PredictiveDistribution {
        probs: ProbVector::new(p)?,
        num_samples: samples,
    })
}

/// Negative evidence lower bound on a labeled batch: the expected
/// log-likelihood over sampled logits (mean over samples of the per-sample
/// cross-entropy) plus `λ_wd‖θ‖²` for the KL term. For a Bayesian head the
/// noise is drawn from the model's generator and frozen inside the returned
/// objective.
pub fn pretrain_objective(
    model: &mut Classifier,
    batch: &LabeledBatch,
    weight_decay: f64,
) -> Result<Objective> {
    let predictive = model.training_predictive(batch.len());
    let term = Term::new(
        batch.inputs().clone(),
        predictive,
        TermLoss::ExpectedCrossEntropy(batch.labels().to_vec()),
        1.0,
    )?;
    Objective::new(model.num_classes())
        .with_term(term)
        .with_weight_decay(weight_decay)
}

pub fn pretrain_loss(model: &mut Classifier, batch: &LabeledBatch, weight_decay: f64) -> Result<f64> {
    pretrain_objective(model, batch, weight_decay)?.value(model.mlp())
}
