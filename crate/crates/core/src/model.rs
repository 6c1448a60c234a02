//! Prediction functions, losses and exact gradients.
//!
//! Parameter layout (row-major, flattened into one [`ParameterVector`]):
//!
//! * linear: `w[0..N]`, then the bias if enabled
//! * softmax: `W[C][N]`, then `b[C]` if enabled
//! * MLP: `W1[H][N]`, `b1[H]`, `W2[O][H]`, `b2[O]` (biases only if enabled),
//!   where `O = 1` for squared loss and `O = C` for cross-entropy

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_stream, Purpose};
use crate::types::{ParameterVector, StreamSample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Family {
    /// Linear regression with squared loss.
    Linear,
    /// Multinomial logistic regression with cross-entropy loss (`classes = 2` is logistic).
    Softmax { classes: usize },
    /// One hidden ReLU layer. `classes = None` gives a scalar output with squared loss.
    Mlp {
        hidden: usize,
        classes: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub input_dim: usize,
    pub bias: bool,
    /// Ridge coefficient: the loss gains `ridge * ||w||^2`.
    pub ridge: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Value(f64),
    /// Class probabilities and the argmax class.
    Class {
        scores: Vec<f64>,
        class: usize,
    },
}

impl Prediction {
    /// The scalar `y_hat` used by the Accuracy/MSE metrics.
    pub fn point(&self) -> f64 {
        match self {
            Prediction::Value(v) => *v,
            Prediction::Class { class, .. } => *class as f64,
        }
    }
}

impl ModelSpec {
    pub fn linear(input_dim: usize, bias: bool) -> Self {
        ModelSpec {
            family: Family::Linear,
            input_dim,
            bias,
            ridge: 0.0,
        }
    }

    pub fn softmax(input_dim: usize, classes: usize) -> Self {
        ModelSpec {
            family: Family::Softmax { classes },
            input_dim,
            bias: true,
            ridge: 0.0,
        }
    }

    pub fn mlp(input_dim: usize, hidden: usize, classes: Option<usize>) -> Self {
        ModelSpec {
            family: Family::Mlp { hidden, classes },
            input_dim,
            bias: true,
            ridge: 0.0,
        }
    }

    pub fn with_ridge(mut self, ridge: f64) -> Self {
        self.ridge = ridge;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::invalid("model input dimension must be >= 1"));
        }
        if !(self.ridge.is_finite() && self.ridge >= 0.0) {
            return Err(Error::invalid("ridge coefficient must be finite and >= 0"));
        }
        match self.family {
            Family::Linear => {}
            Family::Softmax { classes } => {
                if classes < 2 {
                    return Err(Error::invalid("softmax needs at least 2 classes"));
                }
            }
            Family::Mlp { hidden, classes } => {
                if hidden == 0 {
                    return Err(Error::invalid("MLP hidden width must be >= 1"));
                }
                if matches!(classes, Some(c) if c < 2) {
                    return Err(Error::invalid("MLP classifier needs at least 2 classes"));
                }
            }
        }
        Ok(())
    }

    pub fn is_classifier(&self) -> bool {
        match self.family {
            Family::Linear => false,
            Family::Softmax { .. } => true,
            Family::Mlp { classes, .. } => classes.is_some(),
        }
    }

    pub fn classes(&self) -> Option<usize> {
        match self.family {
            Family::Linear => None,
            Family::Softmax { classes } => Some(classes),
            Family::Mlp { classes, .. } => classes,
        }
    }

    /// Convex in `w` (linear and softmax families).
    pub fn is_convex(&self) -> bool {
        !matches!(self.family, Family::Mlp { .. })
    }

    /// Parameter count D.
    pub fn dim(&self) -> usize {
        let n = self.input_dim;
        let b = usize::from(self.bias);
        match self.family {
            Family::Linear => n + b,
            Family::Softmax { classes } => classes * (n + b),
            Family::Mlp { hidden, classes } => {
                let out = classes.unwrap_or(1);
                hidden * (n + b) + out * (hidden + b)
            }
        }
    }

    /// Smoothness constant of the squared loss for the linear family:
    /// `2 max ||x||^2` (bias feature included) plus `2 ridge`. `None` for other families.
    pub fn linear_smoothness<'a>(
        &self,
        samples: impl IntoIterator<Item = &'a StreamSample>,
    ) -> Option<f64> {
        if self.family != Family::Linear {
            return None;
        }
        let bias = if self.bias { 1.0 } else { 0.0 };
        let max_sq = samples
            .into_iter()
            .map(|s| s.features.iter().map(|x| x * x).sum::<f64>() + bias)
            .fold(0.0, f64::max);
        Some(2.0 * max_sq + 2.0 * self.ridge)
    }

    /// Seeded uniform(-scale, scale) initialization; `scale = 0` gives zeros.
    pub fn init_params(&self, scale: f64, seed: u64) -> Result<ParameterVector> {
        self.validate()?;
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(Error::invalid("init scale must be finite and >= 0"));
        }
        let d = self.dim();
        if scale == 0.0 {
            return Ok(ParameterVector::zeros(d));
        }
        let mut rng = derive_stream(seed, Purpose::ModelInit, 0, 0).rng();
        let values = (0..d).map(|_| rng.random_range(-scale..scale)).collect();
        ParameterVector::new(values)
    }

    fn check(&self, w: &ParameterVector, sample: &StreamSample) -> Result<()> {
        w.check_dim(self.dim())?;
        if sample.features.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: sample.features.len(),
            });
        }
        if let Some(c) = self.classes() {
            class_index(sample.label, c)?;
        }
        Ok(())
    }

    pub fn predict(&self, w: &ParameterVector, x: &[f64]) -> Result<Prediction> {
        w.check_dim(self.dim())?;
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        let w = w.as_slice();
        Ok(match self.family {
            Family::Linear => Prediction::Value(self.linear_output(w, x)),
            Family::Softmax { classes } => {
                let scores = softmax(&self.affine(w, 0, classes, x));
                let class = argmax(&scores);
                Prediction::Class { scores, class }
            }
            Family::Mlp { hidden, classes } => {
                let fwd = self.mlp_forward(w, hidden, classes.unwrap_or(1), x);
                match classes {
                    None => Prediction::Value(fwd.out[0]),
                    Some(_) => {
                        let scores = softmax(&fwd.out);
                        let class = argmax(&scores);
                        Prediction::Class { scores, class }
                    }
                }
            }
        })
    }

    pub fn loss(&self, w: &ParameterVector, sample: &StreamSample) -> Result<f64> {
        self.check(w, sample)?;
        let x = &sample.features;
        let ws = w.as_slice();
        let data_loss = match self.family {
            Family::Linear => {
                let r = self.linear_output(ws, x) - sample.label;
                r * r
            }
            Family::Softmax { classes } => {
                let z = self.affine(ws, 0, classes, x);
                cross_entropy(&z, sample.label as usize)
            }
            Family::Mlp { hidden, classes } => {
                let fwd = self.mlp_forward(ws, hidden, classes.unwrap_or(1), x);
                match classes {
                    None => {
                        let r = fwd.out[0] - sample.label;
                        r * r
                    }
                    Some(_) => cross_entropy(&fwd.out, sample.label as usize),
                }
            }
        };
        Ok(data_loss + self.ridge * w.norm_sq())
    }

    /// Exact gradient of [`ModelSpec::loss`] with respect to `w`.
    /// The ReLU derivative at 0 is taken as 0.
    pub fn gradient(&self, w: &ParameterVector, sample: &StreamSample) -> Result<ParameterVector> {
        let mut g = vec![0.0; self.dim()];
        self.accumulate_gradient(w, sample, 1.0, &mut g)?;
        Ok(ParameterVector::from_raw(g))
    }

    /// `out += scale * gradient(w, sample)` without allocating a parameter vector.
    pub fn accumulate_gradient(
        &self,
        w: &ParameterVector,
        sample: &StreamSample,
        scale: f64,
        out: &mut [f64],
    ) -> Result<()> {
        self.check(w, sample)?;
        if out.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: out.len(),
            });
        }
        let x = &sample.features;
        let ws = w.as_slice();
        let n = self.input_dim;
        let stride = n + usize::from(self.bias);
        let g = out;
        match self.family {
            Family::Linear => {
                let r = scale * 2.0 * (self.linear_output(ws, x) - sample.label);
                for (gi, xi) in g.iter_mut().zip(x) {
                    *gi += r * xi;
                }
                if self.bias {
                    g[n] += r;
                }
            }
            Family::Softmax { classes } => {
                let z = self.affine(ws, 0, classes, x);
                let mut delta = softmax(&z);
                delta[sample.label as usize] -= 1.0;
                for (c, d) in delta.iter().enumerate() {
                    let d = scale * d;
                    let row = &mut g[c * stride..c * stride + n];
                    for (gi, xi) in row.iter_mut().zip(x) {
                        *gi += d * xi;
                    }
                    if self.bias {
                        g[c * stride + n] += d;
                    }
                }
            }
            Family::Mlp { hidden, classes } => {
                let out_dim = classes.unwrap_or(1);
                let fwd = self.mlp_forward(ws, hidden, out_dim, x);
                // dL/d(out)
                let delta_out: Vec<f64> = match classes {
                    None => vec![2.0 * (fwd.out[0] - sample.label)],
                    Some(_) => {
                        let mut p = softmax(&fwd.out);
                        p[sample.label as usize] -= 1.0;
                        p
                    }
                };
                let b = usize::from(self.bias);
                let off2 = hidden * stride;
                let stride2 = hidden + b;
                let mut delta_hidden = vec![0.0; hidden];
                for (o, d) in delta_out.iter().enumerate() {
                    let base = off2 + o * stride2;
                    for j in 0..hidden {
                        g[base + j] += scale * d * fwd.act[j];
                        delta_hidden[j] += d * ws[base + j];
                    }
                    if self.bias {
                        g[base + hidden] += scale * d;
                    }
                }
                for j in 0..hidden {
                    if fwd.pre[j] <= 0.0 {
                        continue;
                    }
                    let d = scale * delta_hidden[j];
                    let base = j * stride;
                    for (gi, xi) in g[base..base + n].iter_mut().zip(x) {
                        *gi += d * xi;
                    }
                    if self.bias {
                        g[base + n] += d;
                    }
                }
            }
        }
        if self.ridge > 0.0 {
            let r = scale * 2.0 * self.ridge;
            for (gi, wi) in g.iter_mut().zip(ws) {
                *gi += r * wi;
            }
        }
        Ok(())
    }

    fn linear_output(&self, w: &[f64], x: &[f64]) -> f64 {
        let dot: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum();
        if self.bias {
            dot + w[self.input_dim]
        } else {
            dot
        }
    }

    /// `rows` affine outputs of `x` with weights starting at `offset`.
    fn affine(&self, w: &[f64], offset: usize, rows: usize, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        let stride = n + usize::from(self.bias);
        (0..rows)
            .map(|r| {
                let row = &w[offset + r * stride..offset + r * stride + stride];
                let dot: f64 = row[..n].iter().zip(x).map(|(a, b)| a * b).sum();
                if self.bias {
                    dot + row[n]
                } else {
                    dot
                }
            })
            .collect()
    }

    fn mlp_forward(&self, w: &[f64], hidden: usize, out_dim: usize, x: &[f64]) -> MlpForward {
        let pre = self.affine(w, 0, hidden, x);
        let act: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
        let off2 = hidden * (self.input_dim + usize::from(self.bias));
        let out = self.affine(w, off2, out_dim, &act);
        MlpForward { pre, act, out }
    }
}

struct MlpForward {
    pre: Vec<f64>,
    act: Vec<f64>,
    out: Vec<f64>,
}

pub(crate) fn class_index(label: f64, classes: usize) -> Result<usize> {
    if label.fract() == 0.0 && label >= 0.0 && (label as usize) < classes {
        Ok(label as usize)
    } else {
        Err(Error::Data(format!(
            "label {label} is not a class index in [0, {classes})"
        )))
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn cross_entropy(z: &[f64], label: usize) -> f64 {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - z[label]
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
