//! Small dense networks with hand-written reverse-mode gradients, the
//! diagonal Gaussian policy built on them, and an Adam optimizer.

use std::borrow::Cow;
use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Fully connected layer, `outputs x inputs` weights stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Orthogonal rows (or columns, whichever are fewer) scaled by `gain`;
    /// zero bias.
    pub fn orthogonal<R: Rng + ?Sized>(
        inputs: usize,
        outputs: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let (n_vec, dim) = if outputs <= inputs {
            (outputs, inputs)
        } else {
            (inputs, outputs)
        };
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n_vec);
        while basis.len() < n_vec {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            for b in &basis {
                let proj: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-8 {
                v.iter_mut().for_each(|x| *x /= norm);
                basis.push(v);
            }
        }
        let mut layer = Self::zeros(inputs, outputs);
        for r in 0..outputs {
            for c in 0..inputs {
                let w = if outputs <= inputs {
                    basis[r][c]
                } else {
                    basis[c][r]
                };
                layer.weights[r * inputs + c] = gain * w;
            }
        }
        layer
    }

    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.inputs)
                .zip(&self.bias)
                .map(|(row, b)| b + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>()),
        );
    }

    fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Multilayer perceptron with `tanh` hidden layers and an identity output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

/// Layer activations from one forward pass; `activations[0]` is the input.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().unwrap()
    }
}

impl Mlp {
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("layers", "network needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::invalid(
                    "layers",
                    format!("layer {i} storage does not match its shape"),
                ));
            }
            if i > 0 && layers[i - 1].outputs != l.inputs {
                return Err(Error::DimensionMismatch {
                    expected: layers[i - 1].outputs,
                    actual: l.inputs,
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        Self::from_layers(sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect())
    }

    /// Orthogonal initialization with `hidden_gain` on hidden layers and
    /// `output_gain` on the last one.
    pub fn orthogonal<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden_gain: f64,
        output_gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let n = sizes.len().saturating_sub(1);
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let gain = if i + 1 == n { output_gain } else { hidden_gain };
                Dense::orthogonal(w[0], w[1], gain, rng)
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].inputs)
            .chain(self.layers.iter().map(|l| l.outputs))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().outputs
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::num_params).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs, l.outputs))
                .collect(),
        }
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: input.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        let mut y = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.affine(&x, &mut y);
            if i != last {
                y.iter_mut().for_each(|v| *v = v.tanh());
            }
            std::mem::swap(&mut x, &mut y);
        }
        Ok(x)
    }

    pub fn forward_cached(&self, input: &[f64]) -> Result<ForwardCache> {
        self.check_input(input)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut y = Vec::with_capacity(layer.outputs);
            layer.affine(activations.last().unwrap(), &mut y);
            if i != last {
                y.iter_mut().for_each(|v| *v = v.tanh());
            }
            activations.push(y);
        }
        Ok(ForwardCache { activations })
    }

    /// Reverse pass for one sample. Parameter gradients are added into
    /// `grads`; the gradient with respect to the input is returned.
    pub fn backward_accumulate(
        &self,
        cache: &ForwardCache,
        output_grad: &[f64],
        grads: &mut Mlp,
    ) -> Result<Vec<f64>> {
        if output_grad.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                actual: output_grad.len(),
            });
        }
        if cache.activations.len() != self.layers.len() + 1 {
            return Err(Error::DimensionMismatch {
                expected: self.layers.len() + 1,
                actual: cache.activations.len(),
            });
        }
        let last = self.layers.len() - 1;
        let mut delta = output_grad.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let g = &mut grads.layers[i];
            if i != last {
                // d tanh(z) / dz = 1 - tanh(z)^2
                let a = &cache.activations[i + 1];
                delta.iter_mut().zip(a).for_each(|(d, a)| *d *= 1.0 - a * a);
            }
            let x = &cache.activations[i];
            for (r, d) in delta.iter().enumerate() {
                g.bias[r] += d;
                let row = &mut g.weights[r * layer.inputs..(r + 1) * layer.inputs];
                row.iter_mut().zip(x).for_each(|(w, xi)| *w += d * xi);
            }
            let mut prev = vec![0.0; layer.inputs];
            for (row, d) in layer.weights.chunks_exact(layer.inputs).zip(&delta) {
                prev.iter_mut().zip(row).for_each(|(p, w)| *p += d * w);
            }
            delta = prev;
        }
        Ok(delta)
    }

    /// Gradients of `output_grad . f(input)` with respect to the parameters
    /// and the input.
    pub fn backward(&self, input: &[f64], output_grad: &[f64]) -> Result<(Mlp, Vec<f64>)> {
        let cache = self.forward_cached(input)?;
        let mut grads = self.zeros_like();
        let input_grad = self.backward_accumulate(&cache, output_grad, &mut grads)?;
        Ok((grads, input_grad))
    }

    /// Appends parameters layer by layer: weights row-major, then bias.
    pub fn write_flat(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
    }

    /// Reads parameters in [`Mlp::write_flat`] order; returns the number consumed.
    pub fn read_flat(&mut self, flat: &[f64]) -> Result<usize> {
        if flat.len() < self.num_params() {
            return Err(Error::DimensionMismatch {
                expected: self.num_params(),
                actual: flat.len(),
            });
        }
        let mut k = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[k..k + nw]);
            k += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[k..k + nb]);
            k += nb;
        }
        Ok(k)
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }
}

/// Log-density of a diagonal Gaussian.
pub fn gaussian_log_prob(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(action)
        .map(|((mu, ls), a)| {
            let z = (a - mu) / ls.exp();
            -0.5 * z * z - ls - HALF_LN_2PI
        })
        .sum()
}

/// Partial derivatives of [`gaussian_log_prob`] with respect to the mean and
/// the log standard deviation.
pub fn gaussian_log_prob_grad(
    mean: &[f64],
    log_std: &[f64],
    action: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    mean.iter()
        .zip(log_std)
        .zip(action)
        .map(|((mu, ls), a)| {
            let sigma = ls.exp();
            let z = (a - mu) / sigma;
            (z / sigma, z * z - 1.0)
        })
        .unzip()
}

/// Differential entropy of a diagonal Gaussian.
pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|ls| 0.5 + HALF_LN_2PI + ls).sum()
}

/// Preprocessing applied to observations before either network sees them.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputMap {
    #[default]
    Identity,
    /// For the six-entry cascade error layout `[e_x, e_vx, e_theta, e_omega,
    /// e_y, e_vy]`: negate the x group when `e_x < 0` and the y group when
    /// `e_y < 0`, so the networks see each channel's errors with a
    /// non-negative position error.
    FoldErrorSigns,
}

impl InputMap {
    pub fn apply<'a>(self, obs: &'a [f64]) -> Cow<'a, [f64]> {
        match self {
            InputMap::FoldErrorSigns if obs.len() == 6 && (obs[0] < 0.0 || obs[4] < 0.0) => {
                let mut v = obs.to_vec();
                for (group, lead) in [(0..4, 0), (4..6, 4)] {
                    if obs[lead] < 0.0 {
                        v[group].iter_mut().for_each(|x| *x = -*x);
                    }
                }
                Cow::Owned(v)
            }
            _ => Cow::Borrowed(obs),
        }
    }
}

/// Actor-critic parameters: Gaussian mean network, state-independent log
/// standard deviations, and a value network.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    pub actor: Mlp,
    pub log_std: Vec<f64>,
    pub critic: Mlp,
    pub input_map: InputMap,
}

/// Draw from the policy at one observation.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledAction {
    /// Sample clamped to `[-1, 1]`, as handed to the environment.
    pub action: Vec<f64>,
    /// Unclamped sample; the log-probability refers to this value.
    pub raw: Vec<f64>,
    pub log_prob: f64,
    pub value: f64,
}

impl PolicyParams {
    /// Orthogonal initialization: gain sqrt(2) on hidden layers, 0.01 on the
    /// actor output, 1.0 on the critic output; log std starts at zero.
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        act_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let sizes = |out: usize| {
            std::iter::once(obs_dim)
                .chain(hidden.iter().copied())
                .chain(std::iter::once(out))
                .collect::<Vec<_>>()
        };
        let actor = Mlp::orthogonal(&sizes(act_dim), 2f64.sqrt(), 0.01, rng)?;
        let critic = Mlp::orthogonal(&sizes(1), 2f64.sqrt(), 1.0, rng)?;
        Self::from_parts(actor, vec![0.0; act_dim], critic)
    }

    pub fn from_parts(actor: Mlp, log_std: Vec<f64>, critic: Mlp) -> Result<Self> {
        if log_std.len() != actor.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: actor.output_dim(),
                actual: log_std.len(),
            });
        }
        if critic.input_dim() != actor.input_dim() || critic.output_dim() != 1 {
            return Err(Error::invalid(
                "critic",
                "critic must map observations to a scalar",
            ));
        }
        Ok(Self {
            actor,
            log_std,
            critic,
            input_map: InputMap::Identity,
        })
    }

    pub fn with_input_map(mut self, input_map: InputMap) -> Self {
        self.input_map = input_map;
        self
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.actor.output_dim()
    }

    pub fn mean_action(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.actor.forward(&self.input_map.apply(obs))
    }

    pub fn value(&self, obs: &[f64]) -> Result<f64> {
        Ok(self.critic.forward(&self.input_map.apply(obs))?[0])
    }

    pub fn sample_action<R: Rng + ?Sized>(
        &self,
        obs: &[f64],
        rng: &mut R,
    ) -> Result<SampledAction> {
        let mean = self.mean_action(obs)?;
        let raw: Vec<f64> = mean
            .iter()
            .zip(&self.log_std)
            .map(|(mu, ls)| {
                let n: f64 = rng.sample(StandardNormal);
                mu + ls.exp() * n
            })
            .collect();
        let log_prob = gaussian_log_prob(&mean, &self.log_std, &raw);
        Ok(SampledAction {
            action: raw.iter().map(|a| a.clamp(-1.0, 1.0)).collect(),
            raw,
            log_prob,
            value: self.value(obs)?,
        })
    }

    pub fn num_params(&self) -> usize {
        self.actor.num_params() + self.log_std.len() + self.critic.num_params()
    }

    /// Flat view in the order actor, log std, critic.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.actor.write_flat(&mut out);
        out.extend_from_slice(&self.log_std);
        self.critic.write_flat(&mut out);
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                expected: self.num_params(),
                actual: flat.len(),
            });
        }
        let mut k = self.actor.read_flat(flat)?;
        let n = self.log_std.len();
        self.log_std.copy_from_slice(&flat[k..k + n]);
        k += n;
        self.critic.read_flat(&flat[k..])?;
        Ok(())
    }

    pub fn clamp_log_std(&mut self) {
        self.log_std
            .iter_mut()
            .for_each(|v| *v = v.clamp(LOG_STD_MIN, LOG_STD_MAX));
    }

    pub fn is_finite(&self) -> bool {
        self.actor.is_finite()
            && self.critic.is_finite()
            && self.log_std.iter().all(|v| v.is_finite())
    }

    pub fn to_checkpoint(&self, training_step: u64) -> Checkpoint {
        Checkpoint {
            metadata: CheckpointMetadata {
                format: CHECKPOINT_FORMAT.to_string(),
                actor_layer_sizes: self.actor.sizes(),
                critic_layer_sizes: self.critic.sizes(),
                hidden_activation: "tanh".into(),
                output_activation: "identity".into(),
                created_unix_s: std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0),
                training_step,
                input_map: self.input_map,
            },
            actor: NetworkRecord::from_mlp(&self.actor),
            log_std: self.log_std.clone(),
            critic: NetworkRecord::from_mlp(&self.critic),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>, training_step: u64) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.to_checkpoint(training_step))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, CheckpointMetadata)> {
        let text = std::fs::read_to_string(path)?;
        Checkpoint::from_json(&text)?.into_policy()
    }
}

pub const CHECKPOINT_FORMAT: &str = "quadgain-policy/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMetadata {
    pub format: String,
    pub actor_layer_sizes: Vec<usize>,
    pub critic_layer_sizes: Vec<usize>,
    pub hidden_activation: String,
    pub output_activation: String,
    pub created_unix_s: u64,
    pub training_step: u64,
    #[serde(default)]
    pub input_map: InputMap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    /// One row per output unit.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkRecord {
    pub layers: Vec<LayerRecord>,
}

impl NetworkRecord {
    fn from_mlp(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerRecord {
                    weights: l
                        .weights
                        .chunks_exact(l.inputs)
                        .map(<[f64]>::to_vec)
                        .collect(),
                    bias: l.bias.clone(),
                })
                .collect(),
        }
    }

    fn to_mlp(&self, sizes: &[usize]) -> Result<Mlp> {
        if sizes.len() != self.layers.len() + 1 {
            return Err(Error::Checkpoint(format!(
                "{} layer sizes declared for {} layers",
                sizes.len(),
                self.layers.len()
            )));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, rec) in self.layers.iter().enumerate() {
            let (inputs, outputs) = (sizes[i], sizes[i + 1]);
            if rec.weights.len() != outputs
                || rec.bias.len() != outputs
                || rec.weights.iter().any(|r| r.len() != inputs)
            {
                return Err(Error::Checkpoint(format!(
                    "layer {i} is not {outputs}x{inputs}"
                )));
            }
            let weights: Vec<f64> = rec.weights.iter().flatten().copied().collect();
            if weights.iter().chain(&rec.bias).any(|v| !v.is_finite()) {
                return Err(Error::Checkpoint(format!(
                    "layer {i} has non-finite parameters"
                )));
            }
            layers.push(Dense {
                inputs,
                outputs,
                weights,
                bias: rec.bias.clone(),
            });
        }
        Mlp::from_layers(layers)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub metadata: CheckpointMetadata,
    pub actor: NetworkRecord,
    pub log_std: Vec<f64>,
    pub critic: NetworkRecord,
}

impl Checkpoint {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn into_policy(self) -> Result<(PolicyParams, CheckpointMetadata)> {
        if self.metadata.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unknown format `{}`",
                self.metadata.format
            )));
        }
        let actor = self.actor.to_mlp(&self.metadata.actor_layer_sizes)?;
        let critic = self.critic.to_mlp(&self.metadata.critic_layer_sizes)?;
        if self.log_std.iter().any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint("non-finite log std".into()));
        }
        let policy = PolicyParams::from_parts(actor, self.log_std, critic)
            .map_err(|e| Error::Checkpoint(e.to_string()))?
            .with_input_map(self.metadata.input_map);
        Ok((policy, self.metadata))
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::DimensionMismatch {
                expected: self.m.len(),
                actual: if params.len() != self.m.len() {
                    params.len()
                } else {
                    grads.len()
                },
            });
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// `ln(2 pi) / 2`, exposed for tests that evaluate Gaussian densities.
pub fn half_ln_two_pi() -> f64 {
    0.5 * (2.0 * PI).ln()
}
