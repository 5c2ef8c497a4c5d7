//! PReLU and Dice activations.
//!
//! Both share the two-channel form `f(s) = p(s)*s + (1 - p(s))*alpha*s`.
//! PReLU uses the hard control function `p(s) = I(s > 0)`; Dice replaces it
//! with a sigmoid centered on the per-channel input mean,
//! `p(s) = sigmoid((s - E[s]) / sqrt(Var[s] + eps))`, so the rectified point
//! tracks the input distribution. In training mode E[s] and Var[s] are the
//! current mini-batch statistics (population variance) and moving averages
//! are maintained for inference mode.
//!
//! Backward passes treat the moments as constants of the step: no gradient
//! flows through the normalization statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DICE_EPSILON: f64 = 1e-8;
pub const DICE_MOMENTUM: f64 = 0.99;
pub const ALPHA_INIT: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActivationKind {
    PRelu,
    Dice,
}

impl ActivationKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ActivationKind::PRelu => "prelu",
            ActivationKind::Dice => "dice",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "prelu" => Some(ActivationKind::PRelu),
            "dice" => Some(ActivationKind::Dice),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Batch statistics drive Dice; running moments get updated.
    Training,
    /// Stored running moments; a pure function of the input.
    Inference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreluParams {
    pub alpha: Vec<f64>,
}

impl PreluParams {
    pub fn new(channels: usize) -> Self {
        PreluParams {
            alpha: vec![ALPHA_INIT; channels],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiceParams {
    pub alpha: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub epsilon: f64,
    pub momentum: f64,
}

impl DiceParams {
    pub fn new(channels: usize) -> Self {
        DiceParams {
            alpha: vec![ALPHA_INIT; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![0.0; channels],
            epsilon: DICE_EPSILON,
            momentum: DICE_MOMENTUM,
        }
    }
}

/// Per-channel moments a Dice forward actually used; backward takes them as
/// constants.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Parameters of one activated layer.
#[derive(Debug, Clone, PartialEq)]
pub enum ActivationParams {
    PRelu(PreluParams),
    Dice(DiceParams),
}

impl ActivationParams {
    pub fn new(kind: ActivationKind, channels: usize) -> Self {
        match kind {
            ActivationKind::PRelu => ActivationParams::PRelu(PreluParams::new(channels)),
            ActivationKind::Dice => ActivationParams::Dice(DiceParams::new(channels)),
        }
    }

    pub fn kind(&self) -> ActivationKind {
        match self {
            ActivationParams::PRelu(_) => ActivationKind::PRelu,
            ActivationParams::Dice(_) => ActivationKind::Dice,
        }
    }

    pub fn channels(&self) -> usize {
        match self {
            ActivationParams::PRelu(p) => p.alpha.len(),
            ActivationParams::Dice(p) => p.alpha.len(),
        }
    }

    pub fn alpha(&self) -> &[f64] {
        match self {
            ActivationParams::PRelu(p) => &p.alpha,
            ActivationParams::Dice(p) => &p.alpha,
        }
    }

    pub fn alpha_mut(&mut self) -> &mut [f64] {
        match self {
            ActivationParams::PRelu(p) => &mut p.alpha,
            ActivationParams::Dice(p) => &mut p.alpha,
        }
    }

    /// Pure batch forward over `s` laid out row-major as `n x channels`:
    /// no state is mutated. Returns outputs plus the moments used (None for
    /// PReLU); callers in training mode pass the moments back through
    /// [`ActivationParams::update_running`].
    pub fn compute_batch(
        &self,
        phase: Phase,
        s: &[f64],
        channels: usize,
    ) -> Result<(Vec<f64>, Option<Moments>)> {
        debug_assert_eq!(channels, self.channels());
        match self {
            ActivationParams::PRelu(p) => Ok((prelu_batch(p, s, channels), None)),
            ActivationParams::Dice(p) => {
                let moments = match phase {
                    Phase::Training => batch_moments(s, channels)?,
                    Phase::Inference => Moments {
                        mean: p.running_mean.clone(),
                        var: p.running_var.clone(),
                    },
                };
                let out = dice_apply(p, &moments, s, channels);
                Ok((out, Some(moments)))
            }
        }
    }

    /// Folds freshly observed batch moments into the moving averages.
    pub fn update_running(&mut self, moments: &Moments) {
        if let ActivationParams::Dice(p) = self {
            for c in 0..p.alpha.len() {
                p.running_mean[c] =
                    p.momentum * p.running_mean[c] + (1.0 - p.momentum) * moments.mean[c];
                p.running_var[c] =
                    p.momentum * p.running_var[c] + (1.0 - p.momentum) * moments.var[c];
            }
        }
    }

    /// Batch forward that also maintains the running moments in training
    /// mode.
    pub fn forward_batch(
        &mut self,
        phase: Phase,
        s: &[f64],
        channels: usize,
    ) -> Result<(Vec<f64>, Option<Moments>)> {
        let (out, moments) = self.compute_batch(phase, s, channels)?;
        if phase == Phase::Training {
            if let Some(m) = &moments {
                self.update_running(m);
            }
        }
        Ok((out, moments))
    }

    /// Backward over the same layout, with `moments` as returned by the
    /// forward pass. Returns (d_input, d_alpha); d_alpha is summed over rows.
    pub fn backward_batch(
        &self,
        s: &[f64],
        channels: usize,
        moments: Option<&Moments>,
        upstream: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        debug_assert_eq!(s.len(), upstream.len());
        let mut d_s = vec![0.0; s.len()];
        let mut d_alpha = vec![0.0; channels];
        match self {
            ActivationParams::PRelu(p) => {
                for (i, (&si, &up)) in s.iter().zip(upstream).enumerate() {
                    let c = i % channels;
                    if si > 0.0 {
                        d_s[i] = up;
                    } else {
                        d_s[i] = up * p.alpha[c];
                        d_alpha[c] += up * si;
                    }
                }
            }
            ActivationParams::Dice(p) => {
                let m = moments.expect("dice backward needs forward moments");
                for (i, (&si, &up)) in s.iter().zip(upstream).enumerate() {
                    let c = i % channels;
                    let inv_std = 1.0 / (m.var[c] + p.epsilon).sqrt();
                    let prob = sigmoid((si - m.mean[c]) * inv_std);
                    let dprob = prob * (1.0 - prob) * inv_std;
                    d_s[i] =
                        up * (prob + p.alpha[c] * (1.0 - prob) + si * (1.0 - p.alpha[c]) * dprob);
                    d_alpha[c] += up * si * (1.0 - prob);
                }
            }
        }
        (d_s, d_alpha)
    }

    /// Single-row inference forward; does not mutate state.
    pub fn forward_inference_row(&self, s: &[f64]) -> Vec<f64> {
        match self {
            ActivationParams::PRelu(p) => prelu(p, s),
            ActivationParams::Dice(p) => {
                let m = Moments {
                    mean: p.running_mean.clone(),
                    var: p.running_var.clone(),
                };
                dice_apply(p, &m, s, p.alpha.len())
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Elementwise PReLU over one row: `s` if s > 0, else `alpha * s`.
pub fn prelu(params: &PreluParams, s: &[f64]) -> Vec<f64> {
    debug_assert_eq!(s.len(), params.alpha.len());
    s.iter()
        .zip(&params.alpha)
        .map(|(&si, &a)| if si > 0.0 { si } else { a * si })
        .collect()
}

fn prelu_batch(params: &PreluParams, s: &[f64], channels: usize) -> Vec<f64> {
    s.iter()
        .enumerate()
        .map(|(i, &si)| {
            if si > 0.0 {
                si
            } else {
                params.alpha[i % channels] * si
            }
        })
        .collect()
}

/// Per-channel mean and population variance of a row-major `n x channels`
/// batch. Accumulation in f64 over the batch dimension.
pub fn batch_moments(s: &[f64], channels: usize) -> Result<Moments> {
    if s.is_empty() || channels == 0 || s.len() % channels != 0 {
        return Err(Error::EmptyBatch);
    }
    let n = (s.len() / channels) as f64;
    let mut mean = vec![0.0; channels];
    for (i, &v) in s.iter().enumerate() {
        mean[i % channels] += v;
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    let mut var = vec![0.0; channels];
    for (i, &v) in s.iter().enumerate() {
        let d = v - mean[i % channels];
        var[i % channels] += d * d;
    }
    for v in var.iter_mut() {
        *v /= n;
    }
    Ok(Moments { mean, var })
}

fn dice_apply(params: &DiceParams, moments: &Moments, s: &[f64], channels: usize) -> Vec<f64> {
    s.iter()
        .enumerate()
        .map(|(i, &si)| {
            let c = i % channels;
            let inv_std = 1.0 / (moments.var[c] + params.epsilon).sqrt();
            let prob = sigmoid((si - moments.mean[c]) * inv_std);
            prob * si + (1.0 - prob) * params.alpha[c] * si
        })
        .collect()
}

/// Training-mode Dice over a mini-batch: batch statistics drive the control
/// function and the running moments are updated.
pub fn dice_forward(state: &mut DiceParams, s: &[f64], channels: usize) -> Result<Vec<f64>> {
    let moments = batch_moments(s, channels)?;
    for c in 0..channels {
        state.running_mean[c] =
            state.momentum * state.running_mean[c] + (1.0 - state.momentum) * moments.mean[c];
        state.running_var[c] =
            state.momentum * state.running_var[c] + (1.0 - state.momentum) * moments.var[c];
    }
    Ok(dice_apply(state, &moments, s, channels))
}

/// Inference-mode Dice: a pure function of the input and stored moments.
pub fn dice_inference(state: &DiceParams, s: &[f64], channels: usize) -> Vec<f64> {
    let moments = Moments {
        mean: state.running_mean.clone(),
        var: state.running_var.clone(),
    };
    dice_apply(state, &moments, s, channels)
}
