//! Pooling of behavior embedding lists.
//!
//! The fixed variants (sum/average) compress a variable-length behavior list
//! into one vector independent of the candidate. The adaptive variant scores
//! each behavior against the candidate vector with a small feed-forward
//! local activation unit and takes the weighted sum. The weights are left
//! un-normalized on purpose: their sum carries the intensity of the matched
//! interests, so no softmax is applied.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::activation::{ActivationKind, ActivationParams, Moments};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Sum,
    Average,
}

/// Elementwise sum or mean of equal-width vectors; the empty list pools to
/// the zero vector (cold-start convention).
pub fn fixed_pool(vectors: &[&[f64]], mode: PoolMode, dim: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; dim];
    for v in vectors {
        if v.len() != dim {
            return Err(Error::WidthMismatch {
                expected: dim,
                got: v.len(),
            });
        }
        for (o, x) in out.iter_mut().zip(*v) {
            *o += x;
        }
    }
    if mode == PoolMode::Average && !vectors.is_empty() {
        let n = vectors.len() as f64;
        for o in out.iter_mut() {
            *o /= n;
        }
    }
    Ok(out)
}

/// The feed-forward scorer `a(e_j, v_A)`: one hidden layer over the
/// concatenation of the behavior vector, the flattened outer product
/// `e_j v_A^T` (row-major), and the candidate vector, then a linear scalar
/// output. The output is an un-squashed weight and may be negative or
/// exceed 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationUnitParams {
    /// Behavior-slot embedding width D_b; candidate vectors share it.
    pub input_dim: usize,
    pub hidden_width: usize,
    /// hidden_width x input_width, row-major.
    pub layer1_weights: Vec<f64>,
    pub layer1_bias: Vec<f64>,
    pub act: ActivationParams,
    /// hidden_width -> 1.
    pub layer2_weights: Vec<f64>,
    pub layer2_bias: f64,
}

/// Gradient buffers matching [`ActivationUnitParams`].
#[derive(Debug, Clone)]
pub struct UnitGrads {
    pub layer1_weights: Vec<f64>,
    pub layer1_bias: Vec<f64>,
    pub alpha: Vec<f64>,
    pub layer2_weights: Vec<f64>,
    pub layer2_bias: f64,
}

impl UnitGrads {
    pub fn zeros(unit: &ActivationUnitParams) -> Self {
        UnitGrads {
            layer1_weights: vec![0.0; unit.layer1_weights.len()],
            layer1_bias: vec![0.0; unit.layer1_bias.len()],
            alpha: vec![0.0; unit.hidden_width],
            layer2_weights: vec![0.0; unit.layer2_weights.len()],
            layer2_bias: 0.0,
        }
    }
}

impl ActivationUnitParams {
    /// Width of the concatenated unit input: 2*D_b + D_b^2.
    pub fn input_width(&self) -> usize {
        2 * self.input_dim + self.input_dim * self.input_dim
    }

    pub fn init(
        input_dim: usize,
        hidden_width: usize,
        kind: ActivationKind,
        seed: u64,
    ) -> Self {
        let input_width = 2 * input_dim + input_dim * input_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound1 = 1.0 / (input_width as f64).sqrt();
        let layer1_weights = (0..hidden_width * input_width)
            .map(|_| rng.gen_range(-bound1..=bound1))
            .collect();
        let bound2 = 1.0 / (hidden_width as f64).sqrt();
        let layer2_weights = (0..hidden_width)
            .map(|_| rng.gen_range(-bound2..=bound2))
            .collect();
        ActivationUnitParams {
            input_dim,
            hidden_width,
            layer1_weights,
            layer1_bias: vec![0.0; hidden_width],
            act: ActivationParams::new(kind, hidden_width),
            layer2_weights,
            layer2_bias: 0.0,
        }
    }

    /// A unit that outputs exactly 1 for every input, reducing adaptive
    /// pooling to plain sum pooling.
    pub fn constant_one(input_dim: usize, hidden_width: usize, kind: ActivationKind) -> Self {
        let input_width = 2 * input_dim + input_dim * input_dim;
        ActivationUnitParams {
            input_dim,
            hidden_width,
            layer1_weights: vec![0.0; hidden_width * input_width],
            layer1_bias: vec![0.0; hidden_width],
            act: ActivationParams::new(kind, hidden_width),
            layer2_weights: vec![0.0; hidden_width],
            layer2_bias: 1.0,
        }
    }

    /// Concatenates `[e_j, outer(e_j, v_A) row-major, v_A]`.
    pub fn build_input(&self, behavior: &[f64], candidate: &[f64]) -> Result<Vec<f64>> {
        let d = self.input_dim;
        if behavior.len() != d {
            return Err(Error::WidthMismatch {
                expected: d,
                got: behavior.len(),
            });
        }
        if candidate.len() != d {
            return Err(Error::WidthMismatch {
                expected: d,
                got: candidate.len(),
            });
        }
        let mut input = Vec::with_capacity(self.input_width());
        input.extend_from_slice(behavior);
        for &e in behavior {
            for &v in candidate {
                input.push(e * v);
            }
        }
        input.extend_from_slice(candidate);
        Ok(input)
    }

    /// Hidden pre-activation `W1 * u + b1`.
    pub fn hidden_pre(&self, input: &[f64]) -> Vec<f64> {
        let width = self.input_width();
        (0..self.hidden_width)
            .map(|h| {
                let row = &self.layer1_weights[h * width..(h + 1) * width];
                self.layer1_bias[h]
                    + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect()
    }

    /// Linear scalar output `w2 . h + b2`.
    pub fn output(&self, hidden: &[f64]) -> f64 {
        self.layer2_bias
            + self
                .layer2_weights
                .iter()
                .zip(hidden)
                .map(|(w, h)| w * h)
                .sum::<f64>()
    }

    /// Full unit with the activation in inference mode (stored moments).
    pub fn weight(&self, behavior: &[f64], candidate: &[f64]) -> Result<f64> {
        let input = self.build_input(behavior, candidate)?;
        let pre = self.hidden_pre(&input);
        let hidden = self.act.forward_inference_row(&pre);
        Ok(self.output(&hidden))
    }

    /// Backward through one (behavior, candidate) pair given the cached
    /// hidden pre-activation and the scalar upstream gradient. Accumulates
    /// parameter gradients into `grads` and returns (d_behavior,
    /// d_candidate).
    pub fn backward_pair(
        &self,
        behavior: &[f64],
        candidate: &[f64],
        hidden_pre: &[f64],
        moments: Option<&Moments>,
        d_out: f64,
        grads: &mut UnitGrads,
    ) -> (Vec<f64>, Vec<f64>) {
        let d = self.input_dim;
        let width = self.input_width();
        let hidden = match (&self.act, moments) {
            (ActivationParams::Dice(p), Some(m)) => {
                // recompute post-activation under the cached moments
                let mut out = Vec::with_capacity(hidden_pre.len());
                for (c, &s) in hidden_pre.iter().enumerate() {
                    let inv_std = 1.0 / (m.var[c] + p.epsilon).sqrt();
                    let prob = crate::activation::sigmoid((s - m.mean[c]) * inv_std);
                    out.push(prob * s + (1.0 - prob) * p.alpha[c] * s);
                }
                out
            }
            _ => self.act.forward_inference_row(hidden_pre),
        };
        grads.layer2_bias += d_out;
        let mut d_hidden = vec![0.0; self.hidden_width];
        for h in 0..self.hidden_width {
            grads.layer2_weights[h] += hidden[h] * d_out;
            d_hidden[h] = self.layer2_weights[h] * d_out;
        }
        let (d_pre, d_alpha) =
            self.act
                .backward_batch(hidden_pre, self.hidden_width, moments, &d_hidden);
        for (a, g) in grads.alpha.iter_mut().zip(&d_alpha) {
            *a += g;
        }
        let input = self
            .build_input(behavior, candidate)
            .expect("widths checked in forward");
        let mut d_input = vec![0.0; width];
        for h in 0..self.hidden_width {
            grads.layer1_bias[h] += d_pre[h];
            let row = &self.layer1_weights[h * width..(h + 1) * width];
            let grow = &mut grads.layer1_weights[h * width..(h + 1) * width];
            for i in 0..width {
                grow[i] += d_pre[h] * input[i];
                d_input[i] += d_pre[h] * row[i];
            }
        }
        // unpack d_input: [e block | outer block | candidate block]
        let mut d_behavior = d_input[..d].to_vec();
        let mut d_candidate = d_input[d + d * d..].to_vec();
        for r in 0..d {
            for c in 0..d {
                let g = d_input[d + r * d + c];
                d_behavior[r] += g * candidate[c];
                d_candidate[c] += g * behavior[r];
            }
        }
        (d_behavior, d_candidate)
    }
}

/// Adaptive pooling result: the interest vector plus the per-behavior
/// weights that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledInterest {
    pub vector: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Scores one behavior against the candidate. Deterministic; the result is
/// an un-normalized weight.
pub fn activation_weight(
    behavior: &[f64],
    candidate: &[f64],
    params: &ActivationUnitParams,
) -> Result<f64> {
    params.weight(behavior, candidate)
}

/// Weighted sum pooling `sum_j a(e_j, v_A) * e_j` with the unit activation
/// in inference mode. An empty behavior list pools to the zero vector.
pub fn adaptive_pool(
    behaviors: &[&[f64]],
    candidate: &[f64],
    params: &ActivationUnitParams,
) -> Result<PooledInterest> {
    let d = params.input_dim;
    let mut vector = vec![0.0; d];
    let mut weights = Vec::with_capacity(behaviors.len());
    for behavior in behaviors {
        let w = params.weight(behavior, candidate)?;
        for (v, e) in vector.iter_mut().zip(*behavior) {
            *v += w * e;
        }
        weights.push(w);
    }
    Ok(PooledInterest { vector, weights })
}

/// Gradients of the adaptive pool w.r.t. its inputs and the unit
/// parameters, for an upstream gradient on the pooled vector.
pub fn adaptive_pool_backward(
    behaviors: &[&[f64]],
    candidate: &[f64],
    params: &ActivationUnitParams,
    upstream: &[f64],
) -> Result<(Vec<Vec<f64>>, Vec<f64>, UnitGrads)> {
    let d = params.input_dim;
    if upstream.len() != d {
        return Err(Error::WidthMismatch {
            expected: d,
            got: upstream.len(),
        });
    }
    let mut grads = UnitGrads::zeros(params);
    let mut d_behaviors = Vec::with_capacity(behaviors.len());
    let mut d_candidate = vec![0.0; d];
    // inference-mode forward used the stored running moments; backward takes
    // the same moments as constants
    let moments = match &params.act {
        ActivationParams::Dice(p) => Some(Moments {
            mean: p.running_mean.clone(),
            var: p.running_var.clone(),
        }),
        ActivationParams::PRelu(_) => None,
    };
    for behavior in behaviors {
        let input = params.build_input(behavior, candidate)?;
        let pre = params.hidden_pre(&input);
        let hidden = params.act.forward_inference_row(&pre);
        let w = params.output(&hidden);
        // v = sum_j w_j e_j:  d w_j = upstream . e_j,  d e_j = w_j * upstream
        let d_w: f64 = upstream.iter().zip(*behavior).map(|(u, e)| u * e).sum();
        let mut d_behavior: Vec<f64> = upstream.iter().map(|u| w * u).collect();
        let (d_b_unit, d_c_unit) =
            params.backward_pair(behavior, candidate, &pre, moments.as_ref(), d_w, &mut grads);
        for (a, b) in d_behavior.iter_mut().zip(&d_b_unit) {
            *a += b;
        }
        for (a, b) in d_candidate.iter_mut().zip(&d_c_unit) {
            *a += b;
        }
        d_behaviors.push(d_behavior);
    }
    Ok((d_behaviors, d_candidate, grads))
}
