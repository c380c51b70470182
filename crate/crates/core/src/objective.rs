//! Differentiable training objectives built from a fixed set of terms.
//!
//! An [`Objective`] is `Σₜ wₜ · meanₙ ℓₜ(P(y|xₙ)) + λ_wd ‖θ‖²`, where each
//! term pairs an input batch with a way of turning logits into a predictive
//! distribution ([`Predictive`]) and a per-sample loss on that distribution
//! ([`TermLoss`]). Monte-Carlo noise is drawn when the term is built and is
//! then frozen, so repeated evaluations at different parameters use common
//! random numbers.

use crate::bayes::{LOG_VAR_MAX, LOG_VAR_MIN};
use crate::entropy::{renyi_with_grad, softmax_generic, RenyiOrder, CE_EPS};
use crate::error::{Error, Result};
use crate::nn::{backward_flat, forward_flat, LossFn, MlpModel};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// How network outputs become a class distribution.
#[derive(Clone, Debug, PartialEq)]
pub enum Predictive {
    /// `K` logits, `P = softmax(f)`.
    Softmax,
    /// `2K` outputs `(μ, log σ²)`; `P = (1/M) Σₘ softmax(μ + σ⊙εₘ)` with the
    /// given standard-normal draws laid out `[row][sample][class]`.
    Gaussian { samples: usize, eps: Vec<f64> },
    /// Gaussian head with σ forced to exactly zero (test hook).
    ZeroSigma { samples: usize },
}

impl Predictive {
    fn output_width(&self, k: usize) -> usize {
        match self {
            Predictive::Softmax => k,
            _ => 2 * k,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TermLoss {
    /// `−log max(P_y, 1e-12)` against integer labels (true or pseudo).
    CrossEntropy(Vec<usize>),
    /// Mean over Monte-Carlo samples of the per-sample cross-entropy, i.e.
    /// the expectation taken outside the logarithm. Same as `CrossEntropy`
    /// for a softmax or zero-σ predictive.
    ExpectedCrossEntropy(Vec<usize>),
    /// Rényi entropy of the predictive distribution.
    Entropy(RenyiOrder),
}

#[derive(Clone, Debug)]
pub struct Term {
    inputs: Tensor,
    predictive: Predictive,
    loss: TermLoss,
    weight: f64,
}

impl Term {
    pub fn new(inputs: Tensor, predictive: Predictive, loss: TermLoss, weight: f64) -> Result<Self> {
        if inputs.shape().len() != 2 {
            return Err(Error::dim("[N, D] inputs", format!("{:?}", inputs.shape())));
        }
        let n = inputs.rows();
        if let TermLoss::CrossEntropy(labels) | TermLoss::ExpectedCrossEntropy(labels) = &loss {
            if labels.len() != n {
                return Err(Error::dim(format!("{n} labels"), labels.len()));
            }
        }
        if let TermLoss::Entropy(order) = &loss {
            order.validate()?;
        }
        match &predictive {
            Predictive::Gaussian { samples, .. } | Predictive::ZeroSigma { samples } if *samples == 0 => {
                return Err(Error::Config("Monte-Carlo sample count must be ≥ 1".into()));
            }
            _ => {}
        }
        if !(weight >= 0.0) || !weight.is_finite() {
            return Err(Error::Config(format!("term weight must be ≥ 0, got {weight}")));
        }
        Ok(Self {
            inputs,
            predictive,
            loss,
            weight,
        })
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn loss(&self) -> &TermLoss {
        &self.loss
    }

    fn check(&self, widths: &[usize], k: usize) -> Result<()> {
        let out = *widths.last().unwrap();
        if out != self.predictive.output_width(k) {
            return Err(Error::dim(
                format!("network output width {} for K = {k}", self.predictive.output_width(k)),
                out,
            ));
        }
        if self.inputs.cols() != widths[0] {
            return Err(Error::dim(format!("input width {}", widths[0]), self.inputs.cols()));
        }
        if let TermLoss::CrossEntropy(labels) | TermLoss::ExpectedCrossEntropy(labels) = &self.loss {
            if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
                return Err(Error::Validation(format!("label {bad} out of range for K = {k}")));
            }
        }
        if let Predictive::Gaussian { samples, eps } = &self.predictive {
            let expected = self.inputs.rows() * samples * k;
            if eps.len() != expected {
                return Err(Error::dim(format!("{expected} noise draws"), eps.len()));
            }
        }
        Ok(())
    }

    /// Mean per-sample loss over the batch and its flat parameter gradient
    /// (unweighted).
    fn eval<T: Scalar>(&self, widths: &[usize], theta: &[T], k: usize) -> (T, Vec<T>) {
        let n = self.inputs.rows();
        let out = *widths.last().unwrap();
        let acts = forward_flat(widths, theta, self.inputs.data(), n);
        let logits = acts.last().unwrap();
        let mut d_out = vec![T::zero(); n * out];
        let mut total = T::zero();
        let inv_n = 1.0 / n as f64;
        for r in 0..n {
            let z = &logits[r * out..(r + 1) * out];
            let target = match &self.loss {
                TermLoss::CrossEntropy(labels) => RowLoss::Label(labels[r]),
                TermLoss::ExpectedCrossEntropy(labels) => RowLoss::ExpectedLabel(labels[r]),
                TermLoss::Entropy(order) => RowLoss::Entropy(*order),
            };
            let noise = match &self.predictive {
                Predictive::Softmax => RowNoise::Softmax,
                Predictive::Gaussian { samples, eps } => {
                    RowNoise::Gaussian(&eps[r * samples * k..(r + 1) * samples * k], *samples)
                }
                Predictive::ZeroSigma { samples } => RowNoise::Zero(*samples),
            };
            let (l, dz) = row_loss(z, k, noise, target);
            total += l;
            for (d, g) in d_out[r * out..(r + 1) * out].iter_mut().zip(dz) {
                *d = g.scale(inv_n);
            }
        }
        let grad = backward_flat(widths, theta, &acts, d_out);
        (total.scale(inv_n), grad)
    }
}

#[derive(Clone, Debug)]
pub struct Objective {
    num_classes: usize,
    terms: Vec<Term>,
    weight_decay: f64,
}

impl Objective {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            terms: Vec::new(),
            weight_decay: 0.0,
        }
    }

    pub fn with_term(mut self, term: Term) -> Self {
        self.terms.push(term);
        self
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Result<Self> {
        if !(weight_decay >= 0.0) || !weight_decay.is_finite() {
            return Err(Error::Config(format!("weight decay must be ≥ 0, got {weight_decay}")));
        }
        self.weight_decay = weight_decay;
        Ok(self)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn value(&self, model: &MlpModel) -> Result<f64> {
        Ok(crate::nn::gradient(model, self)?.0)
    }

    /// Unweighted mean loss of each term, in insertion order.
    pub fn term_values(&self, model: &MlpModel) -> Result<Vec<f64>> {
        let theta = model.flatten();
        self.terms
            .iter()
            .map(|t| {
                t.check(model.widths(), self.num_classes)?;
                Ok(t.eval(model.widths(), &theta, self.num_classes).0)
            })
            .collect()
    }

    pub fn gradient(&self, model: &MlpModel) -> Result<(f64, Vec<f64>)> {
        crate::nn::gradient(model, self)
    }

    /// Accumulates the objective's gradient into the model and returns its value.
    pub fn backward(&self, model: &mut MlpModel) -> Result<f64> {
        let (v, g) = self.gradient(model)?;
        model.accumulate_grads(&g)?;
        Ok(v)
    }
}

impl LossFn for Objective {
    fn eval<T: Scalar>(&self, widths: &[usize], theta: &[T]) -> Result<(T, Vec<T>)> {
        let mut value = T::zero();
        let mut grad = vec![T::zero(); theta.len()];
        for term in &self.terms {
            term.check(widths, self.num_classes)?;
            if term.weight == 0.0 {
                continue;
            }
            let (v, g) = term.eval(widths, theta, self.num_classes);
            value += v.scale(term.weight);
            for (acc, gi) in grad.iter_mut().zip(g) {
                *acc += gi.scale(term.weight);
            }
        }
        if self.weight_decay > 0.0 {
            let mut sq = T::zero();
            for (acc, &t) in grad.iter_mut().zip(theta) {
                sq += t * t;
                *acc += t.scale(2.0 * self.weight_decay);
            }
            value += sq.scale(self.weight_decay);
        }
        Ok((value, grad))
    }
}

enum RowNoise<'a> {
    Softmax,
    Gaussian(&'a [f64], usize),
    Zero(usize),
}

enum RowLoss {
    Label(usize),
    ExpectedLabel(usize),
    Entropy(RenyiOrder),
}

fn loss_on_probs<T: Scalar>(p: &[T], loss: &RowLoss) -> (T, Vec<T>) {
    match *loss {
        RowLoss::Label(y) | RowLoss::ExpectedLabel(y) => {
            let mut g = vec![T::zero(); p.len()];
            if p[y].re() > CE_EPS {
                g[y] = -(T::cst(1.0) / p[y]);
                (-p[y].ln(), g)
            } else {
                (T::cst(-CE_EPS.ln()), g)
            }
        }
        RowLoss::Entropy(order) => renyi_with_grad(p, order),
    }
}

/// `∂ℓ/∂z = q ⊙ (g − ⟨q, g⟩)` for `q = softmax(z)`.
fn softmax_back<T: Scalar>(q: &[T], g: &[T]) -> Vec<T> {
    let mut dot = T::zero();
    for (&qi, &gi) in q.iter().zip(g) {
        dot += qi * gi;
    }
    q.iter().zip(g).map(|(&qi, &gi)| qi * (gi - dot)).collect()
}

/// Loss of one sample and its gradient with respect to the raw network
/// outputs `z`.
fn row_loss<T: Scalar>(z: &[T], k: usize, noise: RowNoise<'_>, loss: RowLoss) -> (T, Vec<T>) {
    let (eps, samples, zero_sigma) = match noise {
        RowNoise::Softmax => {
            let q = softmax_generic(&z[..k]);
            let (l, g) = loss_on_probs(&q, &loss);
            return (l, softmax_back(&q, &g));
        }
        RowNoise::Gaussian(eps, m) => (eps, m, false),
        RowNoise::Zero(m) => (&[][..], m, true),
    };
    let mu = &z[..k];
    let mut sigma = vec![T::zero(); k];
    let mut live = vec![false; k];
    if !zero_sigma {
        for j in 0..k {
            let lv = z[k + j];
            let clamped = if lv.re() < LOG_VAR_MIN {
                T::cst(LOG_VAR_MIN)
            } else if lv.re() > LOG_VAR_MAX {
                T::cst(LOG_VAR_MAX)
            } else {
                live[j] = true;
                lv
            };
            sigma[j] = clamped.scale(0.5).exp();
        }
    }
    let inv_m = 1.0 / samples as f64;
    let mut expected = T::zero();
    let mut per_sample = Vec::with_capacity(samples);
    let mut qs = Vec::with_capacity(samples);
    let mut p = vec![T::zero(); k];
    for m in 0..samples {
        let s: Vec<T> = (0..k)
            .map(|j| {
                if zero_sigma {
                    mu[j]
                } else {
                    mu[j] + sigma[j].scale(eps[m * k + j])
                }
            })
            .collect();
        let q = softmax_generic(&s);
        if let RowLoss::ExpectedLabel(_) = loss {
            let (l, g) = loss_on_probs(&q, &loss);
            expected += l.scale(inv_m);
            per_sample.push(g.iter().map(|v| v.scale(inv_m)).collect::<Vec<T>>());
        } else {
            for (pj, &qj) in p.iter_mut().zip(&q) {
                *pj += qj;
            }
        }
        qs.push(q);
    }
    let (l, gm) = if let RowLoss::ExpectedLabel(_) = loss {
        (expected, Vec::new())
    } else {
        for pj in &mut p {
            *pj = pj.scale(inv_m);
        }
        let (l, g) = loss_on_probs(&p, &loss);
        (l, g.iter().map(|v| v.scale(inv_m)).collect())
    };
    let mut dz = vec![T::zero(); 2 * k];
    for (m, q) in qs.iter().enumerate() {
        let a = softmax_back(q, per_sample.get(m).unwrap_or(&gm));
        for j in 0..k {
            dz[j] += a[j];
            if live[j] {
                // ∂s/∂lv = ε · σ / 2
                dz[k + j] += (a[j] * sigma[j]).scale(0.5 * eps[m * k + j]);
            }
        }
    }
    (l, dz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn batch(rng: &mut SeededRng, n: usize, d: usize) -> Tensor {
        Tensor::matrix(n, d, rng.normals(n * d)).unwrap()
    }

    #[test]
    fn softmax_ce_on_uniform_logits_is_log_k() {
        let m = MlpModel::zeros(&[3, 4]).unwrap();
        let mut rng = SeededRng::new(0);
        let obj = Objective::new(4).with_term(
            Term::new(batch(&mut rng, 5, 3), Predictive::Softmax, TermLoss::CrossEntropy(vec![0, 1, 2, 3, 0]), 1.0)
                .unwrap(),
        );
        assert!((obj.value(&m).unwrap() - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_adds_squared_norm() {
        let m = MlpModel::from_layers(vec![(
            Tensor::matrix(1, 1, vec![1.0]).unwrap(),
            Tensor::new(vec![1], vec![2.0]).unwrap(),
        )])
        .unwrap();
        let obj = Objective::new(1).with_weight_decay(1.0).unwrap();
        assert_eq!(obj.value(&m).unwrap(), 5.0);
    }

    #[test]
    fn wrong_head_width_is_dimension_error() {
        let m = MlpModel::zeros(&[2, 3]).unwrap();
        let mut rng = SeededRng::new(0);
        let obj = Objective::new(3).with_term(
            Term::new(batch(&mut rng, 2, 2), Predictive::ZeroSigma { samples: 2 }, TermLoss::Entropy(RenyiOrder::Shannon), 1.0)
                .unwrap(),
        );
        assert!(matches!(obj.value(&m), Err(Error::Dimension { .. })));
    }

    #[test]
    fn out_of_range_label_rejected() {
        let m = MlpModel::zeros(&[2, 2]).unwrap();
        let mut rng = SeededRng::new(0);
        let obj = Objective::new(2)
            .with_term(Term::new(batch(&mut rng, 1, 2), Predictive::Softmax, TermLoss::CrossEntropy(vec![2]), 1.0).unwrap());
        assert!(matches!(obj.value(&m), Err(Error::Validation(_))));
    }

    #[test]
    fn expected_ce_averages_per_sample_losses() {
        // one row, K = 2, μ = (1, 0), log σ² = (0, 0): samples are μ + ε
        let m = MlpModel::from_layers(vec![(
            Tensor::matrix(1, 4, vec![0.0; 4]).unwrap(),
            Tensor::new(vec![4], vec![1.0, 0.0, 0.0, 0.0]).unwrap(),
        )])
        .unwrap();
        let x = Tensor::matrix(1, 1, vec![0.0]).unwrap();
        let eps = vec![0.3, -1.2, -0.7, 0.4, 1.5, 0.1];
        let ce = |z0: f64, z1: f64| (z0.exp() + z1.exp()).ln() - z0;
        let want = (ce(1.3, -1.2) + ce(0.3, 0.4) + ce(2.5, 0.1)) / 3.0;
        let term = |loss| {
            let p = Predictive::Gaussian { samples: 3, eps: eps.clone() };
            Objective::new(2).with_term(Term::new(x.clone(), p, loss, 1.0).unwrap())
        };
        let got = term(TermLoss::ExpectedCrossEntropy(vec![0])).value(&m).unwrap();
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        // Jensen: the log of the averaged predictive is never larger
        assert!(term(TermLoss::CrossEntropy(vec![0])).value(&m).unwrap() <= got);

        let soft = MlpModel::zeros(&[1, 3]).unwrap();
        let plain = |loss| {
            Objective::new(3)
                .with_term(Term::new(x.clone(), Predictive::Softmax, loss, 1.0).unwrap())
                .value(&soft)
                .unwrap()
        };
        assert_eq!(plain(TermLoss::ExpectedCrossEntropy(vec![2])), plain(TermLoss::CrossEntropy(vec![2])));
    }

    #[test]
    fn zero_samples_rejected() {
        let mut rng = SeededRng::new(0);
        let t = Term::new(batch(&mut rng, 1, 2), Predictive::ZeroSigma { samples: 0 }, TermLoss::Entropy(RenyiOrder::Shannon), 1.0);
        assert!(matches!(t, Err(Error::Config(_))));
    }
}
