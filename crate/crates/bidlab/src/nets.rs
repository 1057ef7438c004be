//! Small dense networks with a flat parameter vector, hand-rolled
//! forward/backward passes, an adaptive-moment optimizer and soft target
//! updates. Everything is f64 and deterministic given a seed; gradients are
//! exact (checked against central finite differences in the test suite).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative expressed through the activation output `y = f(x)`.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

/// Fully connected network. `widths` holds layer sizes from input to output;
/// `activations` has one entry per weight layer. Parameters are stored flat,
/// layer by layer, each layer as `out * (in + 1)` values (weights row-major by
/// output unit, bias last per unit).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Mlp {
    widths: Vec<usize>,
    activations: Vec<Activation>,
    params: Vec<f64>,
}

/// Cached per-layer outputs from a forward pass (input first).
pub struct ForwardCache {
    outputs: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.outputs.last().expect("cache has output layer")
    }
}

impl Mlp {
    /// Builds a network with fan-in uniform init, biases zero.
    pub fn new(widths: &[usize], activations: &[Activation], rng: &mut ChaCha8Rng) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Config("mlp needs at least input and output widths".into()));
        }
        if activations.len() != widths.len() - 1 {
            return Err(Error::Config(format!(
                "mlp expects {} activations, got {}",
                widths.len() - 1,
                activations.len()
            )));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::Config("mlp layer widths must be positive".into()));
        }
        let mut params = Vec::with_capacity(Self::count_params(widths));
        for l in 0..widths.len() - 1 {
            let fan_in = widths[l];
            let bound = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..widths[l + 1] {
                for _ in 0..fan_in {
                    params.push(rng.random_range(-bound..bound));
                }
                params.push(0.0);
            }
        }
        Ok(Mlp { widths: widths.to_vec(), activations: activations.to_vec(), params })
    }

    fn count_params(widths: &[usize]) -> usize {
        widths.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "parameter vector length {} does not match network ({})",
                p.len(),
                self.params.len()
            )));
        }
        self.params.copy_from_slice(p);
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn same_shape(&self, other: &Mlp) -> bool {
        self.widths == other.widths && self.activations == other.activations
    }

    /// Overwrites the bias of output unit `unit` in the last layer.
    pub fn set_output_bias(&mut self, unit: usize, value: f64) {
        let last = self.widths.len() - 2;
        let mut offset = 0;
        for l in 0..last {
            offset += (self.widths[l] + 1) * self.widths[l + 1];
        }
        let fan_in = self.widths[last];
        let idx = offset + unit * (fan_in + 1) + fan_in;
        self.params[idx] = value;
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::Contract(format!(
                "input dimension {} does not match network input {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(self.forward_cache(x).outputs.pop().unwrap())
    }

    /// Forward pass keeping every layer output for a later backward pass.
    pub fn forward_cache(&self, x: &[f64]) -> ForwardCache {
        debug_assert_eq!(x.len(), self.input_dim());
        let mut outputs = Vec::with_capacity(self.widths.len());
        outputs.push(x.to_vec());
        let mut offset = 0;
        for l in 0..self.widths.len() - 1 {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let act = self.activations[l];
            let prev = &outputs[l];
            let mut out = Vec::with_capacity(n_out);
            for u in 0..n_out {
                let row = &self.params[offset + u * (n_in + 1)..offset + u * (n_in + 1) + n_in + 1];
                let mut z = row[n_in];
                for i in 0..n_in {
                    z += row[i] * prev[i];
                }
                out.push(act.apply(z));
            }
            offset += (n_in + 1) * n_out;
            outputs.push(out);
        }
        ForwardCache { outputs }
    }

    /// Backward pass. `out_grad` is dLoss/dOutput; parameter gradients are
    /// accumulated into `param_grad` (same length as `params`). Returns
    /// dLoss/dInput.
    pub fn backward(&self, cache: &ForwardCache, out_grad: &[f64], param_grad: &mut [f64]) -> Vec<f64> {
        debug_assert_eq!(out_grad.len(), self.output_dim());
        debug_assert_eq!(param_grad.len(), self.params.len());
        let n_layers = self.widths.len() - 1;
        // dLoss/d(post-activation output) of the current layer
        let mut delta: Vec<f64> = out_grad.to_vec();
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for l in 0..n_layers {
            offsets.push(off);
            off += (self.widths[l] + 1) * self.widths[l + 1];
        }
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let act = self.activations[l];
            let offset = offsets[l];
            let prev = &cache.outputs[l];
            let out = &cache.outputs[l + 1];
            let mut prev_delta = vec![0.0; n_in];
            for u in 0..n_out {
                let dz = delta[u] * act.derivative_from_output(out[u]);
                let base = offset + u * (n_in + 1);
                for i in 0..n_in {
                    param_grad[base + i] += dz * prev[i];
                    prev_delta[i] += dz * self.params[base + i];
                }
                param_grad[base + n_in] += dz;
            }
            delta = prev_delta;
        }
        delta
    }
}

/// Adaptive-moment optimizer state for one parameter vector.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(learning_rate: f64, param_count: usize) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update in place. Rejects non-finite gradients.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Contract("optimizer state does not match parameter shape".into()));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient passed to optimizer".into()));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

/// theta_target <- (1 - rate) * theta_target + rate * theta_online.
pub fn soft_update(target: &mut Mlp, online: &Mlp, rate: f64) -> Result<()> {
    if !target.same_shape(online) {
        return Err(Error::Contract("soft update across different architectures".into()));
    }
    for (t, o) in target.params.iter_mut().zip(online.params.iter()) {
        *t = (1.0 - rate) * *t + rate * *o;
    }
    Ok(())
}

/// Central-difference gradient of a scalar function of the parameter vector.
/// Used as the reference when validating analytic gradients.
pub fn finite_difference_grad<F>(mut f: F, params: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut work = params.to_vec();
    let mut grad = vec![0.0; params.len()];
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + h;
        let hi = f(&work);
        work[i] = orig - h;
        let lo = f(&work);
        work[i] = orig;
        grad[i] = (hi - lo) / (2.0 * h);
    }
    grad
}

/// Relative error with an absolute floor, so near-zero gradients are compared
/// on an absolute scale.
pub fn grad_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-3))
        .fold(0.0, f64::max)
}
