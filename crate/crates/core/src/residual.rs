//! The residual network: a small tanh MLP over normalized `(t, E)` with a
//! linear scalar head, plus hand-written reverse-mode gradients.
//!
//! Parameters live in one flat vector. Layers are stored in order, each as
//! its weight matrix (row-major, one row per output neuron) followed by its
//! bias vector.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Result, UdeError};

pub const DEFAULT_LAYER_SIZES: [usize; 4] = [2, 16, 16, 1];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layer_sizes: Vec<usize>,
    pub theta: Vec<f64>,
}

/// Scales that map raw `(t, E)` to network inputs of order one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputNormalizer {
    pub t_scale: f64,
    pub e_scale: f64,
}

impl Default for InputNormalizer {
    fn default() -> Self {
        Self {
            t_scale: 240.0,
            e_scale: 50.0,
        }
    }
}

impl InputNormalizer {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("t_scale", self.t_scale), ("e_scale", self.e_scale)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(UdeError::Validation(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// One dense layer unpacked from the flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `weights[o][i]` connects input `i` to output `o`.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

/// Total parameter count for a layer-size list.
pub fn param_count(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

pub fn validate_layer_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(UdeError::Validation("need at least an input and an output layer".into()));
    }
    if layer_sizes[0] != 2 {
        return Err(UdeError::Validation(format!(
            "input width must be 2 (t, E), got {}",
            layer_sizes[0]
        )));
    }
    if *layer_sizes.last().unwrap() != 1 {
        return Err(UdeError::Validation(format!(
            "output width must be 1, got {}",
            layer_sizes.last().unwrap()
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(UdeError::Validation("layer widths must be non-zero".into()));
    }
    Ok(())
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(seed: u64, layer_sizes: &[usize]) -> Result<MlpParams> {
    validate_layer_sizes(layer_sizes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta = Vec::with_capacity(param_count(layer_sizes));
    for w in layer_sizes.windows(2) {
        let (n_in, n_out) = (w[0], w[1]);
        let bound = (6.0 / (n_in + n_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        theta.extend((0..n_in * n_out).map(|_| dist.sample(&mut rng)));
        theta.resize(theta.len() + n_out, 0.0);
    }
    Ok(MlpParams {
        layer_sizes: layer_sizes.to_vec(),
        theta,
    })
}

impl MlpParams {
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        validate_layer_sizes(layer_sizes)?;
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            theta: vec![0.0; param_count(layer_sizes)],
        })
    }

    pub fn validate(&self) -> Result<()> {
        validate_layer_sizes(&self.layer_sizes)?;
        let expected = param_count(&self.layer_sizes);
        if self.theta.len() != expected {
            return Err(UdeError::Shape(format!(
                "theta has {} entries, layer sizes {:?} need {expected}",
                self.theta.len(),
                self.layer_sizes
            )));
        }
        if self.theta.iter().any(|v| !v.is_finite()) {
            return Err(UdeError::Domain("theta contains non-finite entries".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// Index of the output bias, the last entry of `theta`.
    pub fn output_bias_index(&self) -> usize {
        self.theta.len() - 1
    }

    pub fn layers(&self) -> Vec<DenseLayer> {
        let mut offset = 0;
        self.layer_sizes
            .windows(2)
            .map(|w| {
                let (n_in, n_out) = (w[0], w[1]);
                let weights = (0..n_out)
                    .map(|o| self.theta[offset + o * n_in..offset + (o + 1) * n_in].to_vec())
                    .collect();
                offset += n_in * n_out;
                let bias = self.theta[offset..offset + n_out].to_vec();
                offset += n_out;
                DenseLayer { weights, bias }
            })
            .collect()
    }

    pub fn from_layers(layers: &[DenseLayer]) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| UdeError::Validation("no layers".into()))?;
        let mut layer_sizes = vec![first.weights.first().map_or(0, Vec::len)];
        let mut theta = Vec::new();
        for layer in layers {
            let n_in = *layer_sizes.last().unwrap();
            if layer.weights.len() != layer.bias.len() || layer.weights.iter().any(|r| r.len() != n_in) {
                return Err(UdeError::Shape("inconsistent layer dimensions".into()));
            }
            for row in &layer.weights {
                theta.extend_from_slice(row);
            }
            theta.extend_from_slice(&layer.bias);
            layer_sizes.push(layer.bias.len());
        }
        let params = Self { layer_sizes, theta };
        params.validate()?;
        Ok(params)
    }
}

/// Reusable activation buffers for repeated evaluations of one network shape.
#[derive(Debug, Clone)]
pub struct MlpScratch {
    /// Layer outputs; `acts[0]` is the normalized input.
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl MlpScratch {
    pub fn new(layer_sizes: &[usize]) -> Self {
        let widest = layer_sizes.iter().copied().max().unwrap_or(0);
        Self {
            acts: layer_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            delta: vec![0.0; widest],
            delta_prev: vec![0.0; widest],
        }
    }

    /// Network output; leaves every layer's activations in the buffers.
    pub fn forward(&mut self, params: &MlpParams, norm: &InputNormalizer, t: f64, e: f64) -> f64 {
        let sizes = &params.layer_sizes;
        let n_layers = sizes.len() - 1;
        self.acts[0][0] = t / norm.t_scale;
        self.acts[0][1] = e / norm.e_scale;
        let mut offset = 0;
        for l in 0..n_layers {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let (head, tail) = self.acts.split_at_mut(l + 1);
            let input = &head[l];
            let output = &mut tail[0];
            let weights = &params.theta[offset..offset + n_in * n_out];
            let bias = &params.theta[offset + n_in * n_out..offset + n_in * n_out + n_out];
            for o in 0..n_out {
                let row = &weights[o * n_in..(o + 1) * n_in];
                let z = row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + bias[o];
                output[o] = if l + 1 < n_layers { z.tanh() } else { z };
            }
            offset += n_in * n_out + n_out;
        }
        self.acts[n_layers][0]
    }

    /// Adds `upstream · ∂out/∂θ` into `grad` and returns `upstream · ∂out/∂e`.
    pub fn accumulate_backward(
        &mut self,
        params: &MlpParams,
        norm: &InputNormalizer,
        t: f64,
        e: f64,
        upstream: f64,
        grad: &mut [f64],
    ) -> f64 {
        self.forward(params, norm, t, e);
        let sizes = &params.layer_sizes;
        let n_layers = sizes.len() - 1;
        let mut offset = params.theta.len();
        self.delta[0] = upstream;
        let mut grad_input = [0.0; 2];
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            offset -= n_in * n_out + n_out;
            let input = &self.acts[l];
            let w_off = offset;
            let b_off = offset + n_in * n_out;
            for o in 0..n_out {
                let d = self.delta[o];
                grad[b_off + o] += d;
                let g_row = &mut grad[w_off + o * n_in..w_off + (o + 1) * n_in];
                for (g, x) in g_row.iter_mut().zip(input) {
                    *g += d * x;
                }
            }
            let weights = &params.theta[w_off..w_off + n_in * n_out];
            for i in 0..n_in {
                let back: f64 = (0..n_out).map(|o| weights[o * n_in + i] * self.delta[o]).sum();
                if l > 0 {
                    // the input here is a tanh output
                    self.delta_prev[i] = back * (1.0 - input[i] * input[i]);
                } else {
                    grad_input[i] = back;
                }
            }
            std::mem::swap(&mut self.delta, &mut self.delta_prev);
        }
        grad_input[1] / norm.e_scale
    }
}

/// Evaluates the residual at `(t, e)`.
pub fn forward(params: &MlpParams, norm: &InputNormalizer, t: f64, e: f64) -> Result<f64> {
    ensure_finite("t", t)?;
    ensure_finite("e", e)?;
    params.validate()?;
    Ok(MlpScratch::new(&params.layer_sizes).forward(params, norm, t, e))
}

/// Returns `(upstream · ∂out/∂θ, upstream · ∂out/∂e)`.
pub fn backward(
    params: &MlpParams,
    norm: &InputNormalizer,
    t: f64,
    e: f64,
    upstream: f64,
) -> Result<(Vec<f64>, f64)> {
    ensure_finite("t", t)?;
    ensure_finite("e", e)?;
    ensure_finite("upstream", upstream)?;
    params.validate()?;
    let mut grad = vec![0.0; params.theta.len()];
    let grad_e = MlpScratch::new(&params.layer_sizes).accumulate_backward(params, norm, t, e, upstream, &mut grad);
    Ok((grad, grad_e))
}

/// Trained network plus the normalization it was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub layer_sizes: Vec<usize>,
    pub theta: Vec<f64>,
    pub t_scale: f64,
    pub e_scale: f64,
    pub seed: u64,
    pub iterations_trained: usize,
}

impl Checkpoint {
    pub fn new(params: &MlpParams, norm: &InputNormalizer, seed: u64, iterations_trained: usize) -> Self {
        Self {
            layer_sizes: params.layer_sizes.clone(),
            theta: params.theta.clone(),
            t_scale: norm.t_scale,
            e_scale: norm.e_scale,
            seed,
            iterations_trained,
        }
    }

    pub fn params(&self) -> Result<MlpParams> {
        let params = MlpParams {
            layer_sizes: self.layer_sizes.clone(),
            theta: self.theta.clone(),
        };
        params.validate()?;
        Ok(params)
    }

    pub fn normalizer(&self) -> Result<InputNormalizer> {
        let norm = InputNormalizer {
            t_scale: self.t_scale,
            e_scale: self.e_scale,
        };
        norm.validate()?;
        Ok(norm)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        ckpt.params()?;
        ckpt.normalizer()?;
        Ok(ckpt)
    }
}
