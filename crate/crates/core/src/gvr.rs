//! Gradient-variance regularization.
//!
//! For mini-batch losses `L₁…Lₙ` at parameters θ the adapted parameters are
//! `θ′ᵢ = θ − η gᵢ` with `gᵢ = ∇Lᵢ(θ)`, and their variance is the trace of
//! their sample covariance (divisor `n − 1`), which equals
//! `η² · tr Cov({gᵢ})`. Its gradient is
//!
//! ```text
//! ∇V = (2η² / (n − 1)) · Σᵢ Hᵢ (gᵢ − ḡ)
//! ```
//!
//! where `Hᵢ` is the Hessian of `Lᵢ`; the `ḡ` dependence drops out because
//! `Σᵢ (gᵢ − ḡ) = 0`. Each term is one Hessian-vector product.

use crate::error::{Error, Result};
use crate::nn::{gradient, hvp, LossFn, MlpModel};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GvrConfig {
    /// Inner step size η.
    pub eta: f64,
    /// Outer step size η′.
    pub eta_prime: f64,
    /// Regularization weight λ.
    pub lambda: f64,
    /// Mini-batches per step, at least 2.
    pub num_minibatches: usize,
    /// Exact Hessian-vector path; `false` treats the variance as constant in θ.
    pub second_order: bool,
}

impl Default for GvrConfig {
    fn default() -> Self {
        Self {
            eta: 0.01,
            eta_prime: 0.05,
            lambda: 0.1,
            num_minibatches: 4,
            second_order: true,
        }
    }
}

impl GvrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_minibatches < 2 {
            return Err(Error::Config(format!(
                "gradient variance needs at least 2 mini-batches, got {}",
                self.num_minibatches
            )));
        }
        for (name, v) in [("eta", self.eta), ("eta_prime", self.eta_prime)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be ≥ 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// The one-step adapted parameter vectors and the gradients that made them.
#[derive(Clone, Debug)]
pub struct AdaptedParamSet {
    theta: Vec<f64>,
    eta: f64,
    grads: Vec<Vec<f64>>,
    theta_primes: Vec<Vec<f64>>,
    losses: Vec<f64>,
}

impl AdaptedParamSet {
    pub fn theta_primes(&self) -> &[Vec<f64>] {
        &self.theta_primes
    }

    pub fn grads(&self) -> &[Vec<f64>] {
        &self.grads
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Mini-batch losses at θ.
    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

pub fn adapted_params<L: LossFn>(model: &MlpModel, minibatches: &[L], eta: f64) -> Result<AdaptedParamSet> {
    if minibatches.len() < 2 {
        return Err(Error::Config(format!(
            "gradient variance needs at least 2 mini-batches, got {}",
            minibatches.len()
        )));
    }
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(Error::Config(format!("eta must be ≥ 0, got {eta}")));
    }
    let theta = model.flatten();
    let mut grads = Vec::with_capacity(minibatches.len());
    let mut losses = Vec::with_capacity(minibatches.len());
    for obj in minibatches {
        let (l, g) = gradient(model, obj)?;
        losses.push(l);
        grads.push(g);
    }
    let theta_primes = grads
        .iter()
        .map(|g| theta.iter().zip(g).map(|(t, gi)| t - eta * gi).collect())
        .collect();
    Ok(AdaptedParamSet {
        theta,
        eta,
        grads,
        theta_primes,
        losses,
    })
}

/// Trace of the unbiased sample covariance of equal-length vectors, summed
/// coordinate by coordinate. Each coordinate's values are sorted first, so
/// the result is bitwise independent of the order of `vectors`.
pub fn trace_covariance(vectors: &[Vec<f64>]) -> Result<f64> {
    let n = vectors.len();
    if n < 2 {
        return Err(Error::Config(format!("covariance needs at least 2 vectors, got {n}")));
    }
    let p = vectors[0].len();
    if let Some(v) = vectors.iter().find(|v| v.len() != p) {
        return Err(Error::dim(p, v.len()));
    }
    let inv = 1.0 / n as f64;
    let mut col = vec![0.0; n];
    let mut total = 0.0;
    for j in 0..p {
        for (c, v) in col.iter_mut().zip(vectors) {
            *c = v[j];
        }
        col.sort_by(f64::total_cmp);
        let base = col[0];
        let m = base + col[1..].iter().map(|c| c - base).sum::<f64>() * inv;
        total += col.iter().map(|c| (c - m) * (c - m)).sum::<f64>();
    }
    Ok(total / (n - 1) as f64)
}

/// Mean taken as `v₀ + mean(vᵢ − v₀)`, which is exactly `v₀` when all
/// vectors agree.
fn mean_vector(vectors: &[Vec<f64>]) -> Vec<f64> {
    let inv = 1.0 / vectors.len() as f64;
    let base = &vectors[0];
    let mut shift = vec![0.0; base.len()];
    for v in &vectors[1..] {
        for ((s, x), b) in shift.iter_mut().zip(v).zip(base) {
            *s += x - b;
        }
    }
    base.iter().zip(shift).map(|(b, s)| b + s * inv).collect()
}

/// `tr Cov({θ′ᵢ})`, evaluated as `η² · tr Cov({gᵢ})`.
pub fn param_variance(aps: &AdaptedParamSet) -> f64 {
    let eta2 = aps.eta * aps.eta;
    eta2 * trace_covariance(&aps.grads).expect("adapted set holds ≥ 2 equal-length gradients")
}

/// Gradient of [`param_variance`] with respect to θ.
pub fn variance_gradient<L: LossFn>(
    model: &MlpModel,
    aps: &AdaptedParamSet,
    minibatches: &[L],
    cfg: &GvrConfig,
) -> Result<Vec<f64>> {
    if model.flatten() != aps.theta {
        return Err(Error::State("adapted parameters were computed at a different θ".into()));
    }
    if minibatches.len() != aps.len() {
        return Err(Error::dim(format!("{} mini-batches", aps.len()), minibatches.len()));
    }
    let p = model.num_params();
    if !cfg.second_order {
        log::warn!("first-order gradient variance: treating Var(Θ′) as constant in θ");
        return Ok(vec![0.0; p]);
    }
    let n = aps.len();
    let mean = mean_vector(&aps.grads);
    let mut total = vec![0.0; p];
    for (g, obj) in aps.grads.iter().zip(minibatches) {
        let dev: Vec<f64> = g.iter().zip(&mean).map(|(a, b)| a - b).collect();
        if dev.iter().all(|&d| d == 0.0) {
            continue;
        }
        for (t, h) in total.iter_mut().zip(hvp(model, obj, &dev)?) {
            *t += h;
        }
    }
    let scale = 2.0 * aps.eta * aps.eta / (n - 1) as f64;
    total.iter_mut().for_each(|t| *t *= scale);
    Ok(total)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GvrReport {
    /// `Var(Θ′)` at the pre-step parameters.
    pub variance: f64,
    /// `Σᵢ Lᵢ` at the pre-step parameters.
    pub task_loss: f64,
}

/// `θ ← θ − η′ ∇(Σᵢ Lᵢ − λ Var(Θ′))`.
pub fn gvr_step<L: LossFn>(model: &mut MlpModel, minibatches: &[L], cfg: &GvrConfig) -> Result<GvrReport> {
    regularized_update(model, minibatches, cfg, true)
}

/// Like [`gvr_step`] with the task gradient dropped: a pure ascent step on
/// `λ Var(Θ′)`.
pub fn variance_ascent_step<L: LossFn>(model: &mut MlpModel, minibatches: &[L], cfg: &GvrConfig) -> Result<GvrReport> {
    regularized_update(model, minibatches, cfg, false)
}

fn regularized_update<L: LossFn>(
    model: &mut MlpModel,
    minibatches: &[L],
    cfg: &GvrConfig,
    include_task: bool,
) -> Result<GvrReport> {
    cfg.validate()?;
    let aps = adapted_params(model, minibatches, cfg.eta)?;
    let variance = param_variance(&aps);
    model.zero_grads();
    if include_task {
        for g in &aps.grads {
            model.accumulate_grads(g)?;
        }
    }
    if cfg.lambda > 0.0 {
        let vg = variance_gradient(model, &aps, minibatches, cfg)?;
        let ascent: Vec<f64> = vg.iter().map(|v| -cfg.lambda * v).collect();
        model.accumulate_grads(&ascent)?;
    }
    model.sgd_step(cfg.eta_prime)?;
    Ok(GvrReport {
        variance,
        task_loss: aps.losses.iter().sum(),
    })
}

/// Both sides of `L(θ′) ≈ L(θ) − η‖∇L(θ)‖²` for one mini-batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaylorCheck {
    /// `L(θ − η∇L) − L(θ)`.
    pub actual: f64,
    /// `−η‖∇L(θ)‖²`.
    pub predicted: f64,
}

impl TaylorCheck {
    pub fn gap(&self) -> f64 {
        (self.actual - self.predicted).abs()
    }
}

pub fn taylor_diagnostic<L: LossFn>(model: &MlpModel, minibatch: &L, eta: f64) -> Result<TaylorCheck> {
    let (l0, g) = gradient(model, minibatch)?;
    let theta = model.flatten();
    let stepped: Vec<f64> = theta.iter().zip(&g).map(|(t, gi)| t - eta * gi).collect();
    let mut probe = model.clone();
    probe.unflatten(&stepped)?;
    let (l1, _) = gradient(&probe, minibatch)?;
    let sq: f64 = g.iter().map(|v| v * v).sum();
    Ok(TaylorCheck {
        actual: l1 - l0,
        predicted: -eta * sq,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_variance_of_two_points() {
        let v = trace_covariance(&[vec![0.0, 0.0], vec![2.0, 2.0]]).unwrap();
        assert_eq!(v, 4.0);
        assert_eq!(trace_covariance(&[vec![1.0, -3.0], vec![1.0, -3.0]]).unwrap(), 0.0);
        assert!(trace_covariance(&[vec![1.0]]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(GvrConfig::default().validate().is_ok());
        let bad = [
            GvrConfig { num_minibatches: 1, ..Default::default() },
            GvrConfig { eta: 0.0, ..Default::default() },
            GvrConfig { eta_prime: -1.0, ..Default::default() },
            GvrConfig { lambda: -0.1, ..Default::default() },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::Config(_))));
        }
    }
}
