use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::{MethodSpec, Participation, Variant};

/// Parameters of a method as they enter the regret-bound and cost formulas.
/// Participation is a single probability shared by every client.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub variant: Variant,
    pub period: u64,
    pub p: f64,
    /// `(s, b)` when messages are quantized.
    pub quantizer: Option<(u32, usize)>,
    pub dim: usize,
    pub clients: usize,
}

impl BoundParams {
    pub fn fed_ogd(dim: usize, clients: usize) -> Self {
        BoundParams {
            variant: Variant::FedOgd,
            period: 1,
            p: 1.0,
            quantizer: None,
            dim,
            clients,
        }
    }

    pub fn ofed_avg(p: f64, dim: usize, clients: usize) -> Self {
        BoundParams {
            variant: Variant::OFedAvg,
            p,
            ..Self::fed_ogd(dim, clients)
        }
    }

    pub fn fed_omd(period: u64, dim: usize, clients: usize) -> Self {
        BoundParams {
            variant: Variant::FedOmd,
            period,
            ..Self::fed_ogd(dim, clients)
        }
    }

    pub fn ofed_iq(
        period: u64,
        p: f64,
        quantizer: Option<(u32, usize)>,
        dim: usize,
        clients: usize,
    ) -> Self {
        BoundParams {
            variant: Variant::OFedIq,
            period,
            p,
            quantizer,
            dim,
            clients,
        }
    }

    pub fn from_method(spec: &MethodSpec, dim: usize, clients: usize) -> Result<Self> {
        let p = match spec.participation {
            Participation::Uniform(p) => p,
            Participation::PerClient(_) => {
                return Err(Error::invalid(
                    "bound formulas assume one participation probability for all clients",
                ))
            }
        };
        let params = BoundParams {
            variant: spec.variant,
            period: spec.period,
            p,
            quantizer: spec.quantizer.map(|q| (q.levels(), q.blocks())),
            dim,
            clients,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.clients == 0 {
            return Err(Error::invalid("D and K must be positive"));
        }
        if self.period == 0 {
            return Err(Error::invalid("period L must be >= 1"));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::invalid(format!("p = {} outside (0, 1]", self.p)));
        }
        if let Some((s, b)) = self.quantizer {
            if s == 0 || b == 0 || b > self.dim {
                return Err(Error::invalid("quantizer needs s >= 1 and 1 <= b <= D"));
            }
        }
        let fixed = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::invalid(format!("{} requires {what}", self.variant)))
            }
        };
        match self.variant {
            Variant::FedOgd => fixed(
                self.period == 1 && self.p == 1.0 && self.quantizer.is_none(),
                "L = 1, p = 1, no quantizer",
            ),
            Variant::OFedAvg => fixed(
                self.period == 1 && self.quantizer.is_none(),
                "L = 1, no quantizer",
            ),
            Variant::FedOmd => fixed(
                self.p == 1.0 && self.quantizer.is_none(),
                "p = 1, no quantizer",
            ),
            Variant::OFedIq => Ok(()),
        }
    }

    /// `sqrt(D / (s^2 b))`, zero without quantization.
    fn quant_factor(&self) -> f64 {
        match self.quantizer {
            Some((s, b)) => (self.dim as f64 / (s as f64 * s as f64 * b as f64)).sqrt(),
            None => 0.0,
        }
    }

    /// The per-client variance bound of the quantizer, zero without quantization.
    fn quant_variance(&self) -> f64 {
        match self.quantizer {
            Some((s, b)) => {
                let block = self.dim.div_ceil(b) as f64;
                let s = s as f64;
                (block / (s * s)).min(block.sqrt() / s)
            }
            None => 0.0,
        }
    }

    fn periodic_terms(&self) -> f64 {
        let (p, l, k) = (self.p, self.period as f64, self.clients as f64);
        3.0 * p * p * (l - 1.0) / 8.0 + 1.0 + self.quant_factor() * (p + 1.0 / k)
    }
}

/// The constant `alpha` in a regret bound of the form
/// `sqrt(alpha * ||w*||^2 * K^2 * sigma_diff^2 * T)`.
///
/// FedOMD is evaluated as the periodic-transmission form with `p = 1` and no
/// quantization.
pub fn alpha_table1(params: &BoundParams) -> Result<f64> {
    params.validate()?;
    Ok(match params.variant {
        Variant::FedOgd => 2.0,
        Variant::OFedAvg => 2.0 / params.p,
        Variant::FedOmd | Variant::OFedIq => {
            4.0 * params.periodic_terms() / (params.p / params.period as f64)
        }
    })
}

/// `alpha` for the `L = 1` configuration with the leading factor 2:
/// `(2/p)(1 + sqrt(D/(s^2 b))(p + 1/K))`. `s = None` drops the quantization term.
pub fn alpha_l1(p: f64, s: Option<f64>, b: usize, dim: usize, clients: usize) -> Result<f64> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::invalid(format!("p = {p} outside (0, 1]")));
    }
    if dim == 0 || clients == 0 || b == 0 {
        return Err(Error::invalid("D, K and b must be positive"));
    }
    let q = match s {
        Some(s) if s > 0.0 => (dim as f64 / (s * s * b as f64)).sqrt(),
        Some(s) => return Err(Error::invalid(format!("s = {s} must be positive"))),
        None => 0.0,
    };
    Ok(2.0 / p * (1.0 + q * (p + 1.0 / clients as f64)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaChoice {
    /// The closed-form rate balancing the two regret terms.
    pub formula: f64,
    /// Stability cap, present when a smoothness constant was supplied.
    pub cap: Option<f64>,
    /// `min(formula, cap)`.
    pub eta: f64,
}

/// Learning rate minimizing the regret bound over horizon `T`, optionally capped
/// by the stability condition for a `beta`-smooth loss.
pub fn optimal_eta(
    params: &BoundParams,
    w_star_norm: f64,
    sigma_diff_sq: f64,
    horizon: u64,
    beta: Option<f64>,
) -> Result<EtaChoice> {
    params.validate()?;
    if !(sigma_diff_sq.is_finite() && sigma_diff_sq >= 0.0) || !w_star_norm.is_finite() {
        return Err(Error::invalid("norms must be finite and non-negative"));
    }
    if sigma_diff_sq == 0.0 {
        return Err(Error::Degenerate(
            "sigma_diff is zero: every gradient vanishes at the optimum and any rate has zero regret bound".into(),
        ));
    }
    if horizon == 0 {
        return Err(Error::invalid("horizon T must be >= 1"));
    }
    let t = horizon as f64;
    let w2 = w_star_norm * w_star_norm;
    let p = params.p;
    let k = params.clients as f64;
    let formula = match params.variant {
        Variant::FedOgd | Variant::OFedAvg => (p * w2 / (2.0 * sigma_diff_sq * t)).sqrt(),
        Variant::FedOmd | Variant::OFedIq => {
            let rate = p / params.period as f64;
            (rate * w2 / (4.0 * sigma_diff_sq * params.periodic_terms() * t)).sqrt()
        }
    };
    let cap = match beta {
        None => None,
        Some(beta) if beta.is_finite() && beta > 0.0 => Some(match params.variant {
            Variant::FedOgd | Variant::OFedAvg => p / (2.0 * beta),
            Variant::FedOmd | Variant::OFedIq => {
                let (p_min, p_sum) = (p, p * k);
                p_min / (4.0 * beta * (1.0 + params.quant_variance() * (p_sum - p_min + 1.0) / k))
            }
        }),
        Some(beta) => {
            return Err(Error::invalid(format!(
                "smoothness {beta} must be positive"
            )))
        }
    };
    Ok(EtaChoice {
        formula,
        cap,
        eta: cap.map_or(formula, |c| formula.min(c)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommCost {
    /// Expected uplink bits per time step, summed over clients.
    pub bits_per_step: f64,
    /// FedOGD's `32 K D`.
    pub baseline: f64,
    /// Communication-cost reduction in percent.
    pub ccr: f64,
}

pub fn comm_cost(params: &BoundParams) -> Result<CommCost> {
    params.validate()?;
    let (k, d) = (params.clients as f64, params.dim as f64);
    let baseline = 32.0 * k * d;
    let message = match params.quantizer {
        Some((s, b)) => 32.0 * b as f64 + d * (1.0 + (s as f64 + 1.0).log2()),
        None => 32.0 * d,
    };
    let bits_per_step = params.p / params.period as f64 * k * message;
    Ok(CommCost {
        bits_per_step,
        baseline,
        ccr: (1.0 - bits_per_step / baseline) * 100.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dominance {
    /// Bound factor of the `L = 1` plan with `p' = p / L`.
    pub l1: f64,
    /// Bound factor of the plan with period `L` and probability `p`.
    pub periodic: f64,
    pub l1_better: bool,
}

/// Compares two equal-cost plans: `(L, p)` against `(1, p/L)` with the same quantizer.
pub fn dominance_check(
    p: f64,
    period: u64,
    s: u32,
    b: usize,
    dim: usize,
    clients: usize,
) -> Result<Dominance> {
    let periodic = BoundParams::ofed_iq(period, p, Some((s, b)), dim, clients);
    periodic.validate()?;
    let rate = p / period as f64;
    let l1 = BoundParams::ofed_iq(1, rate, Some((s, b)), dim, clients);
    let l1v = l1.periodic_terms() / rate;
    let pv = periodic.periodic_terms() / rate;
    Ok(Dominance {
        l1: l1v,
        periodic: pv,
        l1_better: l1v <= pv,
    })
}
