use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::FederatedStreams;
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::types::{ParameterVector, StreamSample};

/// Samples per reduction chunk. Fixed so that results do not depend on the
/// number of worker threads.
const CHUNK: usize = 2048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Stop once the gradient norm of the mean objective is at most this.
    pub tol: f64,
    pub max_iterations: usize,
    /// Starting point; zeros when absent.
    #[serde(skip)]
    pub init: Option<ParameterVector>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-8,
            max_iterations: 20_000,
            init: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HindsightSolution {
    pub w_star: ParameterVector,
    /// Sum of per-sample losses over every client and step.
    pub total_loss: f64,
    pub iterations: usize,
    /// Gradient norm of the mean objective at `w_star`.
    pub grad_norm: f64,
    pub tolerance: f64,
    /// False for non-convex families, where `w_star` is only a stationary point.
    pub certified: bool,
}

fn flatten(streams: &FederatedStreams) -> Vec<&StreamSample> {
    streams.iter().collect()
}

/// Sum of losses and sum of gradients, reduced chunk by chunk in a fixed order.
fn loss_and_grad(
    samples: &[&StreamSample],
    model: &ModelSpec,
    w: &ParameterVector,
) -> Result<(f64, Vec<f64>)> {
    let dim = model.dim();
    let parts: Vec<(f64, Vec<f64>)> = samples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut loss = 0.0;
            let mut grad = vec![0.0; dim];
            for s in chunk {
                loss += model.loss(w, s)?;
                model.accumulate_gradient(w, s, 1.0, &mut grad)?;
            }
            Ok((loss, grad))
        })
        .collect::<Result<_>>()?;
    let mut loss = 0.0;
    let mut grad = vec![0.0; dim];
    for (l, g) in parts {
        loss += l;
        grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    Ok((loss, grad))
}

fn loss_only(samples: &[&StreamSample], model: &ModelSpec, w: &ParameterVector) -> Result<f64> {
    let parts: Vec<f64> = samples
        .par_chunks(CHUNK)
        .map(|chunk| chunk.iter().map(|s| model.loss(w, s)).sum::<Result<f64>>())
        .collect::<Result<_>>()?;
    Ok(parts.iter().sum())
}

/// Total loss of a fixed parameter over the whole stream.
pub fn total_loss(
    streams: &FederatedStreams,
    model: &ModelSpec,
    w: &ParameterVector,
) -> Result<f64> {
    w.check_dim(model.dim())?;
    loss_only(&flatten(streams), model, w)
}

/// Minimizes the total loss over every client and step by full-batch gradient
/// descent: Barzilai-Borwein trial steps with Armijo backtracking.
pub fn solve_hindsight(
    streams: &FederatedStreams,
    model: &ModelSpec,
    opts: &SolverOptions,
) -> Result<HindsightSolution> {
    model.validate()?;
    if streams.feature_dim() != model.input_dim {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim,
            got: streams.feature_dim(),
        });
    }
    if !(opts.tol.is_finite() && opts.tol > 0.0) {
        return Err(Error::invalid("solver tolerance must be positive"));
    }
    let samples = flatten(streams);
    let n = samples.len() as f64;
    let mut w = match &opts.init {
        Some(init) => {
            init.check_dim(model.dim())?;
            init.clone()
        }
        None => ParameterVector::zeros(model.dim()),
    };
    let mean = |(l, g): (f64, Vec<f64>)| (l / n, g.into_iter().map(|x| x / n).collect::<Vec<_>>());
    let (mut f, mut g) = mean(loss_and_grad(&samples, model, &w)?);
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut step = 1.0;
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;

    for iteration in 0..=opts.max_iterations {
        let gnorm = norm(&g);
        if !gnorm.is_finite() || !f.is_finite() {
            return Err(Error::NonFinite("hindsight objective diverged".into()));
        }
        if gnorm <= opts.tol {
            return Ok(HindsightSolution {
                total_loss: loss_only(&samples, model, &w)?,
                w_star: w,
                iterations: iteration,
                grad_norm: gnorm,
                tolerance: opts.tol,
                certified: model.is_convex(),
            });
        }
        if iteration == opts.max_iterations {
            break;
        }
        if let Some((dw, dg)) = &prev {
            let sy: f64 = dw.iter().zip(dg).map(|(a, b)| a * b).sum();
            let ss: f64 = dw.iter().map(|a| a * a).sum();
            if sy > 0.0 && ss > 0.0 {
                step = (ss / sy).clamp(1e-12, 1e12);
            }
        }
        let g2 = gnorm * gnorm;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = w
                .as_slice()
                .iter()
                .zip(&g)
                .map(|(wi, gi)| wi - step * gi)
                .collect();
            let trial = ParameterVector::from_raw(trial);
            let ft = loss_only(&samples, model, &trial)? / n;
            if ft.is_finite() && ft <= f - 1e-4 * step * g2 {
                accepted = Some(trial);
                break;
            }
            step *= 0.5;
        }
        // Armijo can fail at the floating-point floor; a plain small step still
        // moves toward the gradient tolerance on well-conditioned problems.
        let next = accepted.unwrap_or_else(|| {
            ParameterVector::from_raw(
                w.as_slice()
                    .iter()
                    .zip(&g)
                    .map(|(wi, gi)| wi - step * gi)
                    .collect(),
            )
        });
        let (fn_, gn) = mean(loss_and_grad(&samples, model, &next)?);
        let dw = next
            .as_slice()
            .iter()
            .zip(w.as_slice())
            .map(|(a, b)| a - b)
            .collect();
        let dg = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        prev = Some((dw, dg));
        w = next;
        f = fn_;
        g = gn;
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iterations,
        grad_norm: norm(&g),
    })
}

/// Average over clients of the per-client average squared gradient norm at `w_star`.
pub fn sigma_diff(
    streams: &FederatedStreams,
    model: &ModelSpec,
    w_star: &ParameterVector,
) -> Result<f64> {
    w_star.check_dim(model.dim())?;
    let per_client: Vec<f64> = (0..streams.clients())
        .into_par_iter()
        .map(|k| {
            let stream = streams.stream(k);
            let mut acc = 0.0;
            for s in stream {
                acc += model.gradient(w_star, s)?.norm_sq();
            }
            Ok(acc / stream.len() as f64)
        })
        .collect::<Result<_>>()?;
    Ok(per_client.iter().sum::<f64>() / per_client.len() as f64)
}

/// The global model in force at each step, stored as the steps where it changed.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    segments: Vec<(u64, ParameterVector)>,
    steps: u64,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records the model in force at the next step. Consecutive identical models
    /// share a segment.
    pub fn push(&mut self, model: &ParameterVector) {
        self.steps += 1;
        match self.segments.last() {
            Some((_, last)) if last == model => {}
            _ => self.segments.push((self.steps, model.clone())),
        }
    }

    pub fn constant(model: ParameterVector, steps: u64) -> Self {
        Trajectory {
            segments: if steps > 0 { vec![(1, model)] } else { vec![] },
            steps,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn segments(&self) -> usize {
        self.segments.len()
    }

    /// Model in force at 1-based step `t`.
    pub fn model_at(&self, t: u64) -> Option<&ParameterVector> {
        if t == 0 || t > self.steps {
            return None;
        }
        let idx = self.segments.partition_point(|(start, _)| *start <= t);
        Some(&self.segments[idx - 1].1)
    }
}

/// Cumulative prequential loss of the trajectory minus the total loss at `w_star`.
pub fn regret(
    trajectory: &Trajectory,
    streams: &FederatedStreams,
    model: &ModelSpec,
    w_star: &ParameterVector,
) -> Result<f64> {
    if trajectory.steps() != streams.steps() as u64 {
        return Err(Error::invalid(format!(
            "trajectory covers {} steps but the stream has {}",
            trajectory.steps(),
            streams.steps()
        )));
    }
    let per_step: Vec<f64> = (1..=trajectory.steps())
        .into_par_iter()
        .map(|t| {
            let w = trajectory.model_at(t).expect("step within range");
            (0..streams.clients())
                .map(|k| model.loss(w, streams.sample(k, t)))
                .sum::<Result<f64>>()
        })
        .collect::<Result<_>>()?;
    Ok(per_step.iter().sum::<f64>() - total_loss(streams, model, w_star)?)
}
