//! Monte Carlo check of the quantizer's unbiasedness and variance bound.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantizer::{dequantize, quantize, QuantizerSpec};
use crate::rng::{derive_stream, Purpose};
use crate::types::ParameterVector;

const CHUNK: u64 = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantStats {
    pub levels: u32,
    pub blocks: usize,
    pub dim: usize,
    pub trials: u64,
    pub input: Vec<f64>,
    pub mean: Vec<f64>,
    /// Standard error of each coordinate's mean.
    pub std_err: Vec<f64>,
    /// Largest `|mean - u| / std_err` over coordinates with nonzero spread.
    pub max_z: f64,
    /// Coordinates whose bias exceeds the z limit (or, with zero spread, is nonzero).
    pub biased_coordinates: usize,
    /// Empirical `E ||Q(u) - u||^2`.
    pub mse: f64,
    /// `sigma_q^2 ||u||^2`.
    pub mse_bound: f64,
}

impl QuantStats {
    pub fn bias_ok(&self) -> bool {
        self.biased_coordinates == 0
    }

    pub fn mse_ok(&self, slack: f64) -> bool {
        self.mse <= self.mse_bound * slack
    }
}

/// A vector with standard normal entries drawn from the probe stream.
pub fn probe_vector(dim: usize, seed: u64, index: u64) -> Result<ParameterVector> {
    let mut rng = derive_stream(seed, Purpose::Probe, index, dim as u64).rng();
    ParameterVector::new((0..dim).map(|_| rng.sample(StandardNormal)).collect())
}

/// Quantizes `u` `trials` times and compares the empirical mean and squared
/// error with `u` and the variance bound. Deterministic in `seed` and
/// independent of the thread count.
pub fn empirical_stats(
    spec: &QuantizerSpec,
    u: &ParameterVector,
    trials: u64,
    seed: u64,
    z_limit: f64,
) -> Result<QuantStats> {
    if trials < 2 {
        return Err(Error::invalid("need at least 2 trials"));
    }
    u.check_dim(spec.dim())?;
    let d = spec.dim();
    let chunks = trials.div_ceil(CHUNK);
    let parts: Vec<(Vec<f64>, Vec<f64>, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = derive_stream(seed, Purpose::Probe, c, u64::MAX).rng();
            let n = CHUNK.min(trials - c * CHUNK);
            let (mut sum, mut sq, mut err) = (vec![0.0; d], vec![0.0; d], 0.0);
            for _ in 0..n {
                let q = dequantize(&quantize(spec, u, &mut rng)?, spec)?;
                for (i, (&v, &ui)) in q.as_slice().iter().zip(u.as_slice()).enumerate() {
                    sum[i] += v;
                    sq[i] += v * v;
                    err += (v - ui) * (v - ui);
                }
            }
            Ok((sum, sq, err))
        })
        .collect::<Result<_>>()?;
    let (mut sum, mut sq, mut err) = (vec![0.0; d], vec![0.0; d], 0.0);
    for (s, q, e) in parts {
        sum.iter_mut().zip(&s).for_each(|(a, b)| *a += b);
        sq.iter_mut().zip(&q).for_each(|(a, b)| *a += b);
        err += e;
    }
    let n = trials as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std_err: Vec<f64> = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| ((q / n - m * m).max(0.0) * n / (n - 1.0) / n).sqrt())
        .collect();
    let mut max_z: f64 = 0.0;
    let mut biased = 0;
    for ((m, se), ui) in mean.iter().zip(&std_err).zip(u.as_slice()) {
        let gap = (m - ui).abs();
        // a deterministic coordinate can still differ from u by rounding in the decode
        let scale = ui.abs().max(1.0);
        if *se > 1e-12 * scale {
            let z = gap / se;
            max_z = max_z.max(z);
            if z > z_limit {
                biased += 1;
            }
        } else if gap > 1e-9 * scale {
            biased += 1;
        }
    }
    Ok(QuantStats {
        levels: spec.levels(),
        blocks: spec.blocks(),
        dim: d,
        trials,
        input: u.as_slice().to_vec(),
        mean,
        std_err,
        max_z,
        biased_coordinates: biased,
        mse: err / n,
        mse_bound: spec.variance_bound() * u.norm_sq(),
    })
}
