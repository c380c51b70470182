//! Adaptation objectives: source cross-entropy with a target-entropy
//! penalty (`L_α`), self-training against pseudo-labels (`L_∞`), the
//! Lagrangian diagnostic, and class-balanced pseudo-label selection.

use std::cmp::Ordering;

use crate::data::{DomainDataset, LabeledBatch};
use crate::entropy::{ProbVector, RenyiOrder};
use crate::error::{Error, Result};
use crate::model::Classifier;
use crate::objective::{Objective, Term, TermLoss};
use crate::tensor::Tensor;

/// Fixed-multiplier entropy-constraint settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RerConfig {
    pub order: RenyiOrder,
    /// Lagrange multiplier β, held fixed.
    pub beta: f64,
    /// Constraint level C; only used by [`lagrangian_value`].
    pub constraint_c: f64,
}

impl RerConfig {
    pub fn new(order: RenyiOrder, beta: f64, constraint_c: f64) -> Result<Self> {
        let cfg = Self {
            order,
            beta,
            constraint_c,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.order.validate()?;
        check_beta(self.beta)?;
        if !(self.constraint_c >= 0.0) || !self.constraint_c.is_finite() {
            return Err(Error::Config(format!("constraint C must be ≥ 0, got {}", self.constraint_c)));
        }
        Ok(())
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(Error::Config(format!("β must be ≥ 0, got {beta}")));
    }
    Ok(())
}

fn source_term(model: &mut Classifier, source: &LabeledBatch) -> Result<Term> {
    if source.is_empty() {
        return Err(Error::Validation("source batch is empty".into()));
    }
    let predictive = model.training_predictive(source.len());
    Term::new(
        source.inputs().clone(),
        predictive,
        TermLoss::CrossEntropy(source.labels().to_vec()),
        1.0,
    )
}

pub fn source_ce_objective(model: &mut Classifier, source: &LabeledBatch) -> Result<Objective> {
    let term = source_term(model, source)?;
    Ok(Objective::new(model.num_classes()).with_term(term))
}

/// Mean cross-entropy of the model's predictive on a labeled source batch.
pub fn source_ce_loss(model: &mut Classifier, source: &LabeledBatch) -> Result<f64> {
    source_ce_objective(model, source)?.value(model.mlp())
}

/// `L_α = CE_source + β · mean_t H_α(P(y|x_t))`.
pub fn rer_objective(
    model: &mut Classifier,
    source: &LabeledBatch,
    target: Option<&Tensor>,
    cfg: &RerConfig,
) -> Result<Objective> {
    cfg.validate()?;
    let mut obj = source_ce_objective(model, source)?;
    match target {
        Some(t) if cfg.beta > 0.0 => {
            let predictive = model.training_predictive(t.rows());
            obj = obj.with_term(Term::new(t.clone(), predictive, TermLoss::Entropy(cfg.order), cfg.beta)?);
        }
        None if cfg.beta > 0.0 => {
            return Err(Error::Validation("β > 0 needs a non-empty target batch".into()));
        }
        _ => {}
    }
    Ok(obj)
}

pub fn rer_loss(
    model: &mut Classifier,
    source: &LabeledBatch,
    target: Option<&Tensor>,
    cfg: &RerConfig,
) -> Result<f64> {
    rer_objective(model, source, target, cfg)?.value(model.mlp())
}

/// `L_∞ = CE_source + β · mean_t CE(ŷ_t, P(y|x_t))` over a pseudo-labeled
/// target batch.
pub fn self_training_objective(
    model: &mut Classifier,
    source: &LabeledBatch,
    target: Option<&LabeledBatch>,
    beta: f64,
) -> Result<Objective> {
    check_beta(beta)?;
    let mut obj = source_ce_objective(model, source)?;
    match target {
        Some(t) if beta > 0.0 => {
            obj = obj.with_term(target_pseudo_term(model, t, beta)?);
        }
        None if beta > 0.0 => {
            return Err(Error::Validation("β > 0 needs a non-empty target batch".into()));
        }
        _ => {}
    }
    Ok(obj)
}

pub fn self_training_loss(
    model: &mut Classifier,
    source: &LabeledBatch,
    target: Option<&LabeledBatch>,
    beta: f64,
) -> Result<f64> {
    self_training_objective(model, source, target, beta)?.value(model.mlp())
}

/// Target-only term `weight · mean CE(ŷ, P)`; the per-mini-batch loss for
/// gradient-variance regularization of self-training.
pub fn target_pseudo_term(model: &mut Classifier, target: &LabeledBatch, weight: f64) -> Result<Term> {
    if target.is_empty() {
        return Err(Error::Validation("target batch is empty".into()));
    }
    let predictive = model.training_predictive(target.len());
    Term::new(
        target.inputs().clone(),
        predictive,
        TermLoss::CrossEntropy(target.labels().to_vec()),
        weight,
    )
}

/// Target-only term `weight · mean H_α(P)`.
pub fn target_entropy_term(model: &mut Classifier, target: &Tensor, order: RenyiOrder, weight: f64) -> Result<Term> {
    let predictive = model.training_predictive(target.rows());
    Term::new(target.clone(), predictive, TermLoss::Entropy(order), weight)
}

/// `F = L_α − β·C`. Reported, never optimized.
pub fn lagrangian_value(
    model: &mut Classifier,
    source: &LabeledBatch,
    target: Option<&Tensor>,
    cfg: &RerConfig,
) -> Result<f64> {
    Ok(rer_loss(model, source, target, cfg)? - cfg.beta * cfg.constraint_c)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PseudoLabel {
    /// Row in the target dataset.
    pub index: usize,
    /// Predicted class (the hot index of ŷ).
    pub label: usize,
    /// Largest predictive probability.
    pub confidence: f64,
}

/// Selected target rows with their one-hot pseudo-labels, most confident
/// first (ties by row index).
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabelSet {
    entries: Vec<PseudoLabel>,
    num_classes: usize,
    portion: f64,
    class_balanced: bool,
}

impl PseudoLabelSet {
    pub fn entries(&self) -> &[PseudoLabel] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn portion(&self) -> f64 {
        self.portion
    }

    pub fn class_balanced(&self) -> bool {
        self.class_balanced
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn indices(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.index).collect()
    }

    pub fn one_hot(&self, entry: usize) -> Result<ProbVector> {
        ProbVector::one_hot(self.num_classes, self.entries[entry].label)
    }

    /// `(row, label)` pairs, e.g. for scoring against held-out labels.
    pub fn picks(&self) -> Vec<(usize, usize)> {
        self.entries.iter().map(|e| (e.index, e.label)).collect()
    }

    /// Labeled batch of the entries at the given positions of this set.
    pub fn batch(&self, target: &DomainDataset, positions: &[usize]) -> Result<LabeledBatch> {
        let rows: Vec<usize> = positions.iter().map(|&p| self.entries[p].index).collect();
        LabeledBatch::new(
            target.features().select_rows(&rows)?,
            positions.iter().map(|&p| self.entries[p].label).collect(),
        )
    }
}

/// `⌈p·n⌉`, with a 1e-9 allowance so that e.g. `0.7 × 10` counts as 7.
pub fn selection_count(portion: f64, n: usize) -> usize {
    let c = (portion * n as f64 - 1e-9).ceil();
    (c.max(0.0) as usize).min(n)
}

fn by_confidence(a: &PseudoLabel, b: &PseudoLabel) -> Ordering {
    b.confidence
        .partial_cmp(&a.confidence)
        .unwrap_or(Ordering::Equal)
        .then(a.index.cmp(&b.index))
}

/// Picks pseudo-labels from precomputed predictive distributions.
///
/// Without class balancing the `⌈p·N⌉` most confident rows are kept. With
/// it, each predicted class `k` keeps its own `⌈p·N_k⌉` most confident rows.
pub fn select_pseudo_labels(probs: &[ProbVector], portion: f64, class_balanced: bool) -> Result<PseudoLabelSet> {
    if !(0.0..=1.0).contains(&portion) {
        return Err(Error::Config(format!("portion must lie in [0, 1], got {portion}")));
    }
    let num_classes = probs
        .first()
        .ok_or_else(|| Error::Validation("target dataset is empty".into()))?
        .num_classes();
    if probs.iter().any(|p| p.num_classes() != num_classes) {
        return Err(Error::Validation("predictive distributions disagree on K".into()));
    }
    let mut all: Vec<PseudoLabel> = probs
        .iter()
        .enumerate()
        .map(|(index, p)| {
            let label = p.argmax();
            PseudoLabel {
                index,
                label,
                confidence: p.probs()[label],
            }
        })
        .collect();
    all.sort_by(by_confidence);
    let mut entries = if class_balanced {
        let mut per_class: Vec<Vec<PseudoLabel>> = vec![Vec::new(); num_classes];
        for e in all {
            per_class[e.label].push(e);
        }
        let mut kept = Vec::new();
        for class in per_class {
            let take = selection_count(portion, class.len());
            kept.extend(class.into_iter().take(take));
        }
        kept
    } else {
        let take = selection_count(portion, all.len());
        all.truncate(take);
        all
    };
    entries.sort_by(by_confidence);
    Ok(PseudoLabelSet {
        entries,
        num_classes,
        portion,
        class_balanced,
    })
}

/// Predicts every target row (with `eval_samples` Monte-Carlo samples from
/// `eval_seed` for a Bayesian head) and selects pseudo-labels.
pub fn generate_pseudo_labels(
    model: &Classifier,
    target: &DomainDataset,
    portion: f64,
    class_balanced: bool,
    eval_samples: usize,
    eval_seed: u64,
) -> Result<PseudoLabelSet> {
    if !(0.0..=1.0).contains(&portion) {
        return Err(Error::Config(format!("portion must lie in [0, 1], got {portion}")));
    }
    if target.is_empty() {
        return Err(Error::Validation("target dataset is empty".into()));
    }
    let probs = model.predict_probs(target.features(), eval_samples, eval_seed)?;
    select_pseudo_labels(&probs, portion, class_balanced)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(p: &[f64]) -> ProbVector {
        ProbVector::new(p.to_vec()).unwrap()
    }

    fn four_rows() -> Vec<ProbVector> {
        vec![pv(&[0.9, 0.1]), pv(&[0.6, 0.4]), pv(&[0.05, 0.95]), pv(&[0.45, 0.55])]
    }

    #[test]
    fn class_balanced_half() {
        let s = select_pseudo_labels(&four_rows(), 0.5, true).unwrap();
        let mut idx = s.indices();
        idx.sort();
        assert_eq!(idx, vec![0, 2]);
    }

    #[test]
    fn global_half_is_top_two() {
        let s = select_pseudo_labels(&four_rows(), 0.5, false).unwrap();
        assert_eq!(s.indices(), vec![2, 0]);
    }

    #[test]
    fn full_and_empty_portions() {
        let rows = four_rows();
        let all = select_pseudo_labels(&rows, 1.0, true).unwrap();
        assert_eq!(all.len(), 4);
        for e in all.entries() {
            assert_eq!(e.label, rows[e.index].argmax());
        }
        assert!(select_pseudo_labels(&rows, 0.0, false).unwrap().is_empty());
        assert!(matches!(select_pseudo_labels(&rows, 1.5, false), Err(Error::Config(_))));
        assert!(matches!(select_pseudo_labels(&rows, -0.1, true), Err(Error::Config(_))));
    }

    #[test]
    fn argmax_ties_go_to_lowest_class() {
        let s = select_pseudo_labels(&[pv(&[0.5, 0.5])], 1.0, false).unwrap();
        assert_eq!(s.entries()[0].label, 0);
        assert_eq!(s.one_hot(0).unwrap().probs(), &[1.0, 0.0]);
    }

    #[test]
    fn count_rounding() {
        assert_eq!(selection_count(0.7, 10), 7);
        assert_eq!(selection_count(0.5, 3), 2);
        assert_eq!(selection_count(0.2, 0), 0);
        assert_eq!(selection_count(1.0, 5), 5);
        assert_eq!(selection_count(0.01, 5), 1);
    }

    #[test]
    fn config_validation() {
        assert!(RerConfig::new(RenyiOrder::Shannon, -1.0, 0.0).is_err());
        assert!(RerConfig::new(RenyiOrder::Shannon, 1.0, -1.0).is_err());
        assert!(RerConfig::new(RenyiOrder::Alpha(0.0), 1.0, 0.0).is_err());
    }
}
