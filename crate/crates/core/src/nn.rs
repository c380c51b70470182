//! Dense rectifier network with hand-written reverse-mode gradients.
//!
//! Parameters are ordered `W0, b0, W1, b1, ...` with `Parameter::id` equal
//! to that position. Weight matrices are stored `[fan_in, fan_out]`
//! row-major, so a layer computes `y = x·W + b`.
//!
//! The kernels are generic over [`Scalar`]; the `f64` instantiation is the
//! ordinary value/gradient path and the [`Dual`] instantiation gives
//! Hessian-vector products by forward-over-reverse.

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::scalar::{Dual, Scalar};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    id: usize,
    value: Tensor,
    grad: Tensor,
}

impl Parameter {
    fn new(id: usize, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape().to_vec());
        Self { id, value, grad }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn grad(&self) -> &Tensor {
        &self.grad
    }
}

/// Anything that can report a scalar loss and its gradient with respect to
/// the flat parameter vector of a network with the given layer widths.
pub trait LossFn {
    fn eval<T: Scalar>(&self, widths: &[usize], theta: &[T]) -> Result<(T, Vec<T>)>;
}

#[derive(Clone, Debug)]
struct ForwardCache {
    acts: Vec<Vec<f64>>,
    rows: usize,
}

#[derive(Clone, Debug)]
pub struct MlpModel {
    widths: Vec<usize>,
    params: Vec<Parameter>,
    cache: Option<ForwardCache>,
}

impl PartialEq for MlpModel {
    fn eq(&self, other: &Self) -> bool {
        self.widths == other.widths && self.params == other.params
    }
}

pub fn param_count(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

fn check_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 || widths.contains(&0) {
        return Err(Error::Config(format!(
            "layer widths need at least two positive entries, got {widths:?}"
        )));
    }
    Ok(())
}

impl MlpModel {
    /// Glorot-uniform weights, zero biases.
    pub fn new(widths: &[usize], rng: &mut SeededRng) -> Result<Self> {
        check_widths(widths)?;
        let mut params = Vec::with_capacity(2 * (widths.len() - 1));
        for w in widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let half = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.uniform_range(-half, half))
                .collect();
            let id = params.len();
            params.push(Parameter::new(id, Tensor::matrix(fan_in, fan_out, data)?));
            params.push(Parameter::new(id + 1, Tensor::zeros(vec![fan_out])));
        }
        Ok(Self {
            widths: widths.to_vec(),
            params,
            cache: None,
        })
    }

    pub fn zeros(widths: &[usize]) -> Result<Self> {
        check_widths(widths)?;
        let mut m = Self::new(widths, &mut SeededRng::new(0))?;
        m.unflatten(&vec![0.0; m.num_params()])?;
        Ok(m)
    }

    /// Builds a model from explicit `(W, b)` pairs, `W` shaped `[in, out]`.
    pub fn from_layers(layers: Vec<(Tensor, Tensor)>) -> Result<Self> {
        let mut widths = Vec::new();
        let mut params = Vec::new();
        for (w, b) in layers {
            if w.shape().len() != 2 || b.shape().len() != 1 || b.shape()[0] != w.shape()[1] {
                return Err(Error::dim(
                    "W [in, out] with b [out]",
                    format!("W {:?}, b {:?}", w.shape(), b.shape()),
                ));
            }
            if let Some(&last) = widths.last() {
                if last != w.shape()[0] {
                    return Err(Error::dim(
                        format!("layer input width {last}"),
                        w.shape()[0],
                    ));
                }
            } else {
                widths.push(w.shape()[0]);
            }
            widths.push(w.shape()[1]);
            let id = params.len();
            params.push(Parameter::new(id, w));
            params.push(Parameter::new(id + 1, b));
        }
        check_widths(&widths)?;
        Ok(Self {
            widths,
            params,
            cache: None,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        param_count(&self.widths)
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        if batch.shape().len() != 2 || batch.shape()[1] != self.input_width() {
            return Err(Error::dim(
                format!("[N, {}]", self.input_width()),
                format!("{:?}", batch.shape()),
            ));
        }
        Ok(())
    }

    /// Forward pass that keeps the activations for a later [`backward`](Self::backward).
    pub fn forward(&mut self, batch: &Tensor) -> Result<Tensor> {
        self.check_batch(batch)?;
        let theta = self.flatten();
        let acts = forward_flat(&self.widths, &theta, batch.data(), batch.rows());
        let out = Tensor::matrix(batch.rows(), self.output_width(), acts.last().unwrap().clone())?;
        self.cache = Some(ForwardCache {
            acts,
            rows: batch.rows(),
        });
        Ok(out)
    }

    /// Stateless forward pass.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_batch(batch)?;
        let theta = self.flatten();
        let mut acts = forward_flat(&self.widths, &theta, batch.data(), batch.rows());
        Tensor::matrix(batch.rows(), self.output_width(), acts.pop().unwrap())
    }

    /// Back-propagates `d_logits` (∂loss/∂output of the last forward pass)
    /// and accumulates into every `Parameter::grad`. Consumes the cached
    /// forward state.
    pub fn backward(&mut self, d_logits: &Tensor) -> Result<()> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State("backward called without a preceding forward".into()))?;
        let expected = [cache.rows, self.output_width()];
        if d_logits.shape() != expected {
            let err = Error::dim(format!("{expected:?}"), format!("{:?}", d_logits.shape()));
            self.cache = Some(cache);
            return Err(err);
        }
        let theta = self.flatten();
        let grads = backward_flat(&self.widths, &theta, &cache.acts, d_logits.data().to_vec());
        self.accumulate_grads(&grads)
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for p in &self.params {
            out.extend_from_slice(p.value.data());
        }
        out
    }

    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::dim(self.num_params(), flat.len()));
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite parameter value".into()));
        }
        let mut off = 0;
        for p in &mut self.params {
            let n = p.value.len();
            p.value.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        self.cache = None;
        Ok(())
    }

    pub fn flatten_grads(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for p in &self.params {
            out.extend_from_slice(p.grad.data());
        }
        out
    }

    pub fn accumulate_grads(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::dim(self.num_params(), flat.len()));
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite gradient".into()));
        }
        let mut off = 0;
        for p in &mut self.params {
            for g in p.grad.data_mut() {
                *g += flat[off];
                off += 1;
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// `θ ← θ − lr·grad`, then clears the gradients.
    pub fn sgd_step(&mut self, lr: f64) -> Result<()> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        for p in &mut self.params {
            let grad = p.grad.data().to_vec();
            for (v, g) in p.value.data_mut().iter_mut().zip(&grad) {
                *v -= lr * g;
            }
            if p.value.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("parameter {} diverged", p.id)));
            }
            p.grad.data_mut().fill(0.0);
        }
        self.cache = None;
        Ok(())
    }

    /// Squared L2 norm of all parameters.
    pub fn sq_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.value.data())
            .map(|v| v * v)
            .sum()
    }
}

/// Loss value and flat gradient at the model's current parameters.
pub fn gradient<L: LossFn>(model: &MlpModel, loss: &L) -> Result<(f64, Vec<f64>)> {
    let theta = model.flatten();
    let (value, grad) = loss.eval(model.widths(), &theta)?;
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numerical("loss or gradient is not finite".into()));
    }
    Ok((value, grad))
}

/// Gradient and Hessian-vector product in one forward-over-reverse sweep.
pub fn gradient_and_hvp<L: LossFn>(
    model: &MlpModel,
    loss: &L,
    v: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if v.len() != model.num_params() {
        return Err(Error::dim(model.num_params(), v.len()));
    }
    let theta: Vec<Dual> = model
        .flatten()
        .into_iter()
        .zip(v)
        .map(|(t, &d)| Dual::new(t, d))
        .collect();
    let (_, grad) = loss.eval(model.widths(), &theta)?;
    let g: Vec<f64> = grad.iter().map(|d| d.re).collect();
    let hv: Vec<f64> = grad.iter().map(|d| d.tan).collect();
    if hv.iter().chain(&g).any(|x| !x.is_finite()) {
        return Err(Error::Numerical("Hessian-vector product is not finite".into()));
    }
    Ok((g, hv))
}

/// `H·v` for the Hessian of `loss` at the model's current parameters.
pub fn hvp<L: LossFn>(model: &MlpModel, loss: &L, v: &[f64]) -> Result<Vec<f64>> {
    gradient_and_hvp(model, loss, v).map(|(_, hv)| hv)
}

fn relu<T: Scalar>(x: T) -> T {
    if x.re() > 0.0 {
        x
    } else {
        T::zero()
    }
}

/// Returns the activations of every layer: `acts[0]` is the input, the
/// last entry holds the raw logits (no rectifier).
pub(crate) fn forward_flat<T: Scalar>(
    widths: &[usize],
    theta: &[T],
    x: &[f64],
    rows: usize,
) -> Vec<Vec<T>> {
    let layers = widths.len() - 1;
    let mut acts = Vec::with_capacity(layers + 1);
    acts.push(x.iter().map(|&v| T::cst(v)).collect::<Vec<T>>());
    let mut off = 0;
    for l in 0..layers {
        let (fan_in, fan_out) = (widths[l], widths[l + 1]);
        let w = &theta[off..off + fan_in * fan_out];
        let b = &theta[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
        off += fan_in * fan_out + fan_out;
        let input = &acts[l];
        let mut out = Vec::with_capacity(rows * fan_out);
        for n in 0..rows {
            let mut row = b.to_vec();
            for (i, &a) in input[n * fan_in..(n + 1) * fan_in].iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                for (r, &wij) in row.iter_mut().zip(&w[i * fan_out..(i + 1) * fan_out]) {
                    *r += a * wij;
                }
            }
            out.extend(row);
        }
        if l + 1 < layers {
            out.iter_mut().for_each(|v| *v = relu(*v));
        }
        acts.push(out);
    }
    acts
}

/// Reverse sweep given `∂loss/∂logits`; returns the flat parameter gradient.
pub(crate) fn backward_flat<T: Scalar>(
    widths: &[usize],
    theta: &[T],
    acts: &[Vec<T>],
    d_out: Vec<T>,
) -> Vec<T> {
    let layers = widths.len() - 1;
    let rows = acts[0].len() / widths[0];
    let mut grad = vec![T::zero(); theta.len()];
    let mut offsets = Vec::with_capacity(layers);
    let mut off = 0;
    for l in 0..layers {
        offsets.push(off);
        off += widths[l] * widths[l + 1] + widths[l + 1];
    }
    let mut delta = d_out;
    for l in (0..layers).rev() {
        let (fan_in, fan_out) = (widths[l], widths[l + 1]);
        let off = offsets[l];
        let input = &acts[l];
        {
            let (gw, gb) = grad[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
            for n in 0..rows {
                let d = &delta[n * fan_out..(n + 1) * fan_out];
                for (g, &dj) in gb.iter_mut().zip(d) {
                    *g += dj;
                }
                for (i, &a) in input[n * fan_in..(n + 1) * fan_in].iter().enumerate() {
                    if a == T::zero() {
                        continue;
                    }
                    for (g, &dj) in gw[i * fan_out..(i + 1) * fan_out].iter_mut().zip(d) {
                        *g += a * dj;
                    }
                }
            }
        }
        if l == 0 {
            break;
        }
        let w = &theta[off..off + fan_in * fan_out];
        let mut next = vec![T::zero(); rows * fan_in];
        for n in 0..rows {
            let d = &delta[n * fan_out..(n + 1) * fan_out];
            for i in 0..fan_in {
                // Rectifier mask: post-activation is zero exactly when the
                // pre-activation was non-positive.
                if input[n * fan_in + i].re() <= 0.0 {
                    continue;
                }
                let mut acc = T::zero();
                for (&wij, &dj) in w[i * fan_out..(i + 1) * fan_out].iter().zip(d) {
                    acc += wij * dj;
                }
                next[n * fan_in + i] = acc;
            }
        }
        delta = next;
    }
    grad
}
