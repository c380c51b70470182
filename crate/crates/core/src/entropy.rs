//! Rényi entropies of discrete distributions, in nats.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Floor applied to probabilities inside the logarithm of a cross-entropy.
pub const CE_EPS: f64 = 1e-12;

const SUM_TOL: f64 = 1e-9;

/// A validated discrete distribution over `K` classes.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::Validation("probability vector is empty".into()));
        }
        if let Some((k, v)) = p.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Validation(format!("p[{k}] = {v} is outside [0, 1]")));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(Error::Validation(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(Self(p))
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub fn one_hot(k: usize, hot: usize) -> Result<Self> {
        if hot >= k {
            return Err(Error::Validation(format!("class {hot} out of range for K = {k}")));
        }
        let mut p = vec![0.0; k];
        p[hot] = 1.0;
        Ok(Self(p))
    }

    /// Numerically stable softmax of a logit vector.
    pub fn softmax(logits: &[f64]) -> Result<Self> {
        Self::new(softmax(logits))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    /// Index of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn max_prob(&self) -> f64 {
        self.0[self.argmax()]
    }
}

/// Order of a Rényi entropy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RenyiOrder {
    /// Finite α > 0 with α ≠ 1.
    Alpha(f64),
    /// The α → 1 limit.
    Shannon,
    /// The α → ∞ limit.
    MinEntropy,
}

impl RenyiOrder {
    pub fn alpha(a: f64) -> Result<Self> {
        let o = RenyiOrder::Alpha(a);
        o.validate()?;
        Ok(o)
    }

    pub fn validate(&self) -> Result<()> {
        if let RenyiOrder::Alpha(a) = *self {
            if !(a > 0.0) || !a.is_finite() {
                return Err(Error::Domain(format!("Rényi order must be > 0, got {a}")));
            }
            if (a - 1.0).abs() <= 1e-9 {
                return Err(Error::Domain(format!(
                    "Rényi order {a} is within 1e-9 of 1; use the Shannon order"
                )));
            }
        }
        Ok(())
    }
}

impl std::fmt::Display for RenyiOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RenyiOrder::Alpha(a) => write!(f, "{a}"),
            RenyiOrder::Shannon => f.write_str("shannon"),
            RenyiOrder::MinEntropy => f.write_str("inf"),
        }
    }
}

impl std::str::FromStr for RenyiOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "shannon" | "1" => Ok(RenyiOrder::Shannon),
            "inf" | "infinity" | "min_entropy" | "min" => Ok(RenyiOrder::MinEntropy),
            other => {
                let a: f64 = other
                    .parse()
                    .map_err(|_| Error::Config(format!("unrecognised Rényi order {s:?}")))?;
                RenyiOrder::alpha(a)
            }
        }
    }
}

pub fn renyi_entropy(p: &ProbVector, order: RenyiOrder) -> Result<f64> {
    order.validate()?;
    if order == RenyiOrder::Shannon {
        // H∞ plus non-negative terms, so H₁ ≥ H∞ also holds after rounding
        let lm = p.probs()[p.argmax()].ln();
        let gap: f64 = p.probs().iter().filter(|&&v| v > 0.0).map(|&v| v * (lm - v.ln())).sum();
        return Ok(-lm + gap);
    }
    let (h, _) = renyi_with_grad(p.probs(), order);
    Ok(match order {
        // the log-sum form can round a hair below zero near one-hot inputs
        RenyiOrder::Alpha(_) => h.max(0.0),
        _ => h,
    })
}

/// `−Σₖ targetₖ log max(pₖ, 1e-12)`.
pub fn cross_entropy(target: &ProbVector, p: &ProbVector) -> Result<f64> {
    if target.num_classes() != p.num_classes() {
        return Err(Error::dim(
            format!("K = {}", target.num_classes()),
            format!("K = {}", p.num_classes()),
        ));
    }
    let s: f64 = target
        .probs()
        .iter()
        .zip(p.probs())
        .filter(|(&t, _)| t != 0.0)
        .map(|(&t, &pk)| t * pk.max(CE_EPS).ln())
        .sum();
    Ok(-s)
}

/// Cross-entropy against a one-hot label.
pub fn cross_entropy_label(label: usize, p: &ProbVector) -> Result<f64> {
    if label >= p.num_classes() {
        return Err(Error::Validation(format!(
            "label {label} out of range for K = {}",
            p.num_classes()
        )));
    }
    Ok(-p.probs()[label].max(CE_EPS).ln())
}

pub fn batch_mean_entropy(batch: &[ProbVector], order: RenyiOrder) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Validation("entropy of an empty batch".into()));
    }
    let mut total = 0.0;
    for p in batch {
        total += renyi_entropy(p, order)?;
    }
    Ok(total / batch.len() as f64)
}

pub(crate) fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = k;
        }
    }
    best
}

pub(crate) fn softmax(z: &[f64]) -> Vec<f64> {
    softmax_generic(z)
}

pub(crate) fn softmax_generic<T: Scalar>(z: &[T]) -> Vec<T> {
    let m = z.iter().map(|v| v.re()).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<T> = z.iter().map(|&v| (v - T::cst(m)).exp()).collect();
    let mut s = T::zero();
    for &v in &e {
        s += v;
    }
    e.into_iter().map(|v| v / s).collect()
}

/// Entropy of `p` and its gradient `∂H/∂p`. `p` is assumed to be a valid
/// distribution with the order already validated.
///
/// Finite orders use `H = (α log m + log Σ (pₖ/m)^α) / (1 − α)` with
/// `m = maxₖ pₖ`, which stays finite for very large α.
pub(crate) fn renyi_with_grad<T: Scalar>(p: &[T], order: RenyiOrder) -> (T, Vec<T>) {
    let k = p.len();
    let mut grad = vec![T::zero(); k];
    match order {
        RenyiOrder::Shannon => {
            let mut h = T::zero();
            for (g, &pk) in grad.iter_mut().zip(p) {
                if pk.re() > 0.0 {
                    let l = pk.ln();
                    h -= pk * l;
                    *g = -(l + T::cst(1.0));
                }
            }
            (h, grad)
        }
        RenyiOrder::MinEntropy => {
            let best = argmax_generic(p);
            let m = p[best];
            grad[best] = -(T::cst(1.0) / m);
            (-m.ln(), grad)
        }
        RenyiOrder::Alpha(a) => {
            let best = argmax_generic(p);
            let m = p[best];
            let mut s = T::zero();
            let mut pow_m1 = vec![T::zero(); k];
            for (pm, &pk) in pow_m1.iter_mut().zip(p) {
                if pk.re() > 0.0 {
                    let r = pk / m;
                    let rp = r.powf(a - 1.0);
                    *pm = rp;
                    s += rp * r;
                }
            }
            let inv = 1.0 / (1.0 - a);
            let h = (m.ln().scale(a) + s.ln()).scale(inv);
            // ∂H/∂pₖ = α (pₖ/m)^(α−1) / ((1−α) m S)
            let denom = m * s;
            for (g, &pm) in grad.iter_mut().zip(&pow_m1) {
                if pm != T::zero() {
                    *g = (pm / denom).scale(a * inv);
                }
            }
            (h, grad)
        }
    }
}

fn argmax_generic<T: Scalar>(p: &[T]) -> usize {
    let mut best = 0;
    for (k, v) in p.iter().enumerate().skip(1) {
        if v.re() > p[best].re() {
            best = k;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(p: &[f64]) -> ProbVector {
        ProbVector::new(p.to_vec()).unwrap()
    }

    const ORDERS: [RenyiOrder; 5] = [
        RenyiOrder::Alpha(0.5),
        RenyiOrder::Alpha(2.0),
        RenyiOrder::Alpha(5.0),
        RenyiOrder::Shannon,
        RenyiOrder::MinEntropy,
    ];

    #[test]
    fn uniform_four_is_log_four_for_every_order() {
        for o in ORDERS {
            let h = renyi_entropy(&ProbVector::uniform(4), o).unwrap();
            assert!((h - 4f64.ln()).abs() < 1e-12, "{o}: {h}");
        }
    }

    #[test]
    fn one_hot_has_zero_entropy() {
        for o in ORDERS {
            assert_eq!(renyi_entropy(&ProbVector::one_hot(3, 1).unwrap(), o).unwrap(), 0.0);
        }
    }

    #[test]
    fn collision_entropy_hand_value() {
        let h = renyi_entropy(&pv(&[0.8, 0.2]), RenyiOrder::Alpha(2.0)).unwrap();
        assert!((h - (-(0.68f64).ln())).abs() < 1e-14);
        assert!((h - 0.3856625).abs() < 1e-7);
    }

    #[test]
    fn shannon_never_rounds_below_min_entropy() {
        for k in 2..=50 {
            let p = ProbVector::uniform(k);
            let h1 = renyi_entropy(&p, RenyiOrder::Shannon).unwrap();
            assert!(h1 >= renyi_entropy(&p, RenyiOrder::MinEntropy).unwrap(), "K = {k}");
            assert!((h1 - (k as f64).ln()).abs() < 1e-14);
        }
    }

    #[test]
    fn min_entropy_hand_value() {
        let h = renyi_entropy(&pv(&[0.8, 0.2]), RenyiOrder::MinEntropy).unwrap();
        assert!((h - 0.2231436).abs() < 1e-7);
    }

    #[test]
    fn invalid_orders_are_domain_errors() {
        for a in [0.0, -1.0, 1.0, 1.0 + 1e-10] {
            assert!(matches!(
                renyi_entropy(&ProbVector::uniform(2), RenyiOrder::Alpha(a)),
                Err(Error::Domain(_))
            ));
        }
        assert!(RenyiOrder::alpha(1.0 + 1e-8).is_ok());
    }

    #[test]
    fn invalid_prob_vectors_rejected() {
        assert!(ProbVector::new(vec![0.5, 0.6]).is_err());
        assert!(ProbVector::new(vec![-0.1, 1.1]).is_err());
        assert!(ProbVector::new(vec![]).is_err());
        assert!(ProbVector::new(vec![0.5, 0.5 + 5e-10]).is_ok());
    }

    #[test]
    fn cross_entropy_examples() {
        let half = pv(&[0.5, 0.5]);
        assert!((cross_entropy(&half, &half).unwrap() - 2f64.ln()).abs() < 1e-15);
        let p = pv(&[0.8, 0.2]);
        let t = ProbVector::one_hot(2, 0).unwrap();
        assert!((cross_entropy(&t, &p).unwrap() - 0.2231436).abs() < 1e-7);
        let oh = ProbVector::one_hot(3, 2).unwrap();
        assert!(cross_entropy(&oh, &oh).unwrap() <= 1e-11);
        assert!(matches!(
            cross_entropy(&oh, &p),
            Err(Error::Dimension { .. })
        ));
        assert_eq!(cross_entropy_label(0, &p).unwrap(), cross_entropy(&t, &p).unwrap());
    }

    #[test]
    fn zero_probability_is_clamped_in_cross_entropy() {
        let p = ProbVector::one_hot(2, 0).unwrap();
        let ce = cross_entropy_label(1, &p).unwrap();
        assert!((ce + CE_EPS.ln()).abs() < 1e-12);
    }

    #[test]
    fn batch_mean_examples() {
        let u = ProbVector::uniform(2);
        let h = batch_mean_entropy(&[u.clone(), u.clone(), u.clone()], RenyiOrder::Shannon).unwrap();
        assert!((h - 2f64.ln()).abs() < 1e-15);
        let b = [pv(&[1.0, 0.0]), pv(&[0.5, 0.5])];
        let h = batch_mean_entropy(&b, RenyiOrder::Shannon).unwrap();
        assert!((h - 0.3465736).abs() < 1e-7);
        let rev = [b[1].clone(), b[0].clone()];
        assert_eq!(h, batch_mean_entropy(&rev, RenyiOrder::Shannon).unwrap());
        assert!(matches!(
            batch_mean_entropy(&[], RenyiOrder::Shannon),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn large_alpha_does_not_underflow() {
        let p = pv(&[0.3, 0.25, 0.25, 0.2]);
        let h = renyi_entropy(&p, RenyiOrder::Alpha(1e4)).unwrap();
        let hmin = renyi_entropy(&p, RenyiOrder::MinEntropy).unwrap();
        assert!(h.is_finite() && (h - hmin).abs() < 1e-3);
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        // Perturb coordinates without renormalising: H is defined by the same
        // formula off the simplex and the gradient is its partial derivative.
        let p = [0.5, 0.3, 0.2];
        for o in [RenyiOrder::Alpha(0.5), RenyiOrder::Alpha(3.0), RenyiOrder::Shannon, RenyiOrder::MinEntropy] {
            let (_, g) = renyi_with_grad(&p, o);
            for k in 0..3 {
                let h = 1e-6;
                let mut up = p;
                let mut dn = p;
                up[k] += h;
                dn[k] -= h;
                let fd = (renyi_with_grad(&up, o).0 - renyi_with_grad(&dn, o).0) / (2.0 * h);
                assert!((fd - g[k]).abs() < 1e-6, "{o} k={k}: {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn order_parsing() {
        assert_eq!("shannon".parse::<RenyiOrder>().unwrap(), RenyiOrder::Shannon);
        assert_eq!("inf".parse::<RenyiOrder>().unwrap(), RenyiOrder::MinEntropy);
        assert_eq!("2.5".parse::<RenyiOrder>().unwrap(), RenyiOrder::Alpha(2.5));
        assert!("-3".parse::<RenyiOrder>().is_err());
        assert!("nope".parse::<RenyiOrder>().is_err());
    }
}
