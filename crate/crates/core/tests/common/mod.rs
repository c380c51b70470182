#![allow(dead_code)]

use uda_calib::entropy::ProbVector;
use uda_calib::nn::MlpModel;
use uda_calib::objective::{Objective, Predictive, Term, TermLoss};
use uda_calib::{RenyiOrder, SeededRng, Tensor};

/// Random MLP with nonzero biases so no parameter starts at a special value.
pub fn random_mlp(rng: &mut SeededRng, widths: &[usize]) -> MlpModel {
    let mut m = MlpModel::new(widths, rng).unwrap();
    let theta: Vec<f64> = m.flatten().iter().map(|t| t + 0.3 * rng.normal()).collect();
    m.unflatten(&theta).unwrap();
    m
}

pub fn random_inputs(rng: &mut SeededRng, n: usize, d: usize) -> Tensor {
    Tensor::matrix(n, d, rng.normals(n * d)).unwrap()
}

pub fn random_labels(rng: &mut SeededRng, n: usize, k: usize) -> Vec<usize> {
    (0..n).map(|_| rng.below(k)).collect()
}

/// Uniform point on the simplex (normalized exponentials).
pub fn random_simplex(rng: &mut SeededRng, k: usize) -> ProbVector {
    let e: Vec<f64> = (0..k).map(|_| -(1.0 - rng.uniform()).ln()).collect();
    let s: f64 = e.iter().sum();
    let mut p: Vec<f64> = e.iter().map(|x| x / s).collect();
    let tail: f64 = p[..k - 1].iter().sum();
    p[k - 1] = (1.0 - tail).max(0.0);
    ProbVector::new(p).unwrap()
}

/// Random `[width, hidden, K or 2K]` model and one- or two-term objective
/// covering every predictive/loss combination as `case` varies.
pub fn random_objective(rng: &mut SeededRng, case: usize) -> (MlpModel, Objective) {
    let k = 2 + case % 3;
    let d = 1 + case % 4;
    let n = 1 + case % 5;
    let bayesian = case % 2 == 1;
    let out = if bayesian { 2 * k } else { k };
    let hidden = 3 + case % 4;
    let widths: Vec<usize> = if case.is_multiple_of(3) { vec![d, hidden, out] } else { vec![d, hidden, hidden, out] };
    let model = random_mlp(rng, &widths);
    let predictive = |rng: &mut SeededRng, rows: usize| {
        if bayesian {
            let m = 1 + case % 3;
            Predictive::Gaussian {
                samples: m,
                eps: rng.normals(rows * m * k),
            }
        } else {
            Predictive::Softmax
        }
    };
    let order = match case % 4 {
        0 => RenyiOrder::Shannon,
        1 => RenyiOrder::MinEntropy,
        2 => RenyiOrder::Alpha(2.0),
        _ => RenyiOrder::Alpha(0.5),
    };
    let x = random_inputs(rng, n, d);
    let y = random_labels(rng, n, k);
    let ce = Term::new(x, predictive(rng, n), TermLoss::CrossEntropy(y), 1.0).unwrap();
    let xt = random_inputs(rng, n + 1, d);
    let ent = Term::new(xt, predictive(rng, n + 1), TermLoss::Entropy(order), 0.7).unwrap();
    let obj = Objective::new(k)
        .with_term(ce)
        .with_term(ent)
        .with_weight_decay(1e-3)
        .unwrap();
    (model, obj)
}

/// Central differences of `f` around the model's parameters.
pub fn fd_gradient(model: &MlpModel, h: f64, f: impl Fn(&MlpModel) -> f64) -> Vec<f64> {
    let theta = model.flatten();
    let mut probe = model.clone();
    (0..theta.len())
        .map(|i| {
            let mut t = theta.clone();
            t[i] = theta[i] + h;
            probe.unflatten(&t).unwrap();
            let up = f(&probe);
            t[i] = theta[i] - h;
            probe.unflatten(&t).unwrap();
            let down = f(&probe);
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `max |aᵢ − bᵢ| / max(max |bᵢ|, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(floor);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

/// Smallest |pre-activation| over all hidden units and all rows of every
/// term; finite differences with step `h` are only meaningful when this
/// exceeds `h` comfortably.
pub fn min_hidden_margin(model: &MlpModel, obj: &Objective) -> f64 {
    let mut margin = f64::INFINITY;
    for term in obj.terms() {
        let widths = model.widths();
        let x = term.inputs();
        let theta = model.flatten();
        let mut act: Vec<Vec<f64>> = (0..x.rows()).map(|r| x.row(r).to_vec()).collect();
        let mut off = 0;
        for l in 0..widths.len() - 1 {
            let (din, dout) = (widths[l], widths[l + 1]);
            let w = &theta[off..off + din * dout];
            let b = &theta[off + din * dout..off + din * dout + dout];
            off += din * dout + dout;
            let last = l == widths.len() - 2;
            act = act
                .iter()
                .map(|a| {
                    (0..dout)
                        .map(|j| {
                            let z = b[j] + (0..din).map(|i| a[i] * w[i * dout + j]).sum::<f64>();
                            if !last {
                                margin = margin.min(z.abs());
                            }
                            if last { z } else { z.max(0.0) }
                        })
                        .collect()
                })
                .collect();
        }
    }
    margin
}

/// Draws cases until `count` of them sit at least `margin` away from every
/// rectifier kink, so central differences see a smooth function.
pub fn smooth_cases(seed: u64, count: usize, margin: f64) -> Vec<(usize, MlpModel, Objective)> {
    let mut rng = SeededRng::new(seed);
    let mut out = Vec::new();
    let mut case = 0;
    while out.len() < count {
        let (m, o) = random_objective(&mut rng, case);
        if min_hidden_margin(&m, &o) > margin {
            out.push((case, m, o));
        }
        case += 1;
    }
    out
}

/// `n` three-row cross-entropy mini-batches.
pub fn minibatches(rng: &mut SeededRng, n: usize, d: usize, k: usize) -> Vec<Objective> {
    (0..n)
        .map(|_| {
            let x = random_inputs(rng, 3, d);
            let y = random_labels(rng, 3, k);
            Objective::new(k).with_term(Term::new(x, Predictive::Softmax, TermLoss::CrossEntropy(y), 1.0).unwrap())
        })
        .collect()
}

/// A `[2, 4, 3]` model with three mini-batches, all clear of rectifier kinks.
pub fn smooth_gvr_instance(rng: &mut SeededRng) -> (MlpModel, Vec<Objective>) {
    loop {
        let model = random_mlp(rng, &[2, 4, 3]);
        let batches = minibatches(rng, 3, 2, 3);
        if batches.iter().all(|b| min_hidden_margin(&model, b) > 1e-2) {
            return (model, batches);
        }
    }
}
