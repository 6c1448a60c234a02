use serde::{Deserialize, Serialize};

use super::bounds::{alpha_l1, alpha_table1, BoundParams};
use crate::error::{Error, Result};
use crate::protocol::{MethodSpec, Participation};
use crate::quantizer::QuantizerSpec;

pub const DEFAULT_S_MAX: u32 = 1 << 15;

/// `log2(s+1)/16 + 4 (gamma/s)^(2/3)`, the quantity minimized over `s`.
pub fn budget_objective(gamma: f64, s: u32) -> f64 {
    let s = s as f64;
    (s + 1.0).log2() / 16.0 + 4.0 * (gamma / s).powf(2.0 / 3.0)
}

/// Parameters of an `L = 1` plan whose expected uplink cost is a fraction
/// `gamma` of full-precision, full-participation transmission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetPlan {
    pub gamma: f64,
    pub dim: usize,
    pub levels: u32,
    pub blocks: usize,
    /// Realized block ratio `b / D`.
    pub rho: f64,
    pub p: f64,
    pub period: u64,
    pub objective: f64,
    /// Cost ratio actually delivered by the integer `b` and the final `p`.
    pub achieved_gamma: f64,
    /// `p` hit the upper limit 1 and the budget cannot be fully spent.
    pub p_clamped: bool,
    /// `floor(rho D)` was 0 and `b` was raised to 1.
    pub b_clamped: bool,
}

impl BudgetPlan {
    pub fn quantizer(&self) -> QuantizerSpec {
        QuantizerSpec::new(self.levels, self.blocks, self.dim).expect("plan parameters are valid")
    }

    pub fn bound_params(&self, clients: usize) -> BoundParams {
        BoundParams::ofed_iq(
            1,
            self.p,
            Some((self.levels, self.blocks)),
            self.dim,
            clients,
        )
    }

    pub fn method(&self, eta: f64) -> MethodSpec {
        MethodSpec::ofed_iq(
            1,
            Participation::Uniform(self.p),
            Some(self.quantizer()),
            eta,
        )
    }

    pub fn alpha_l1(&self, clients: usize) -> Result<f64> {
        alpha_l1(
            self.p,
            Some(self.levels as f64),
            self.blocks,
            self.dim,
            clients,
        )
    }

    pub fn alpha_table1(&self, clients: usize) -> Result<f64> {
        alpha_table1(&self.bound_params(clients))
    }
}

/// Chooses `(s, b, p)` for cost ratio `gamma`: `s` minimizes
/// [`budget_objective`] over `1..=s_max` (ties to the smaller `s`),
/// `b = floor((gamma/s)^(2/3) D)` and `p` spends the remaining budget given
/// the realized `b / D`.
pub fn optimize_budget(gamma: f64, dim: usize, s_max: u32) -> Result<BudgetPlan> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::invalid(format!("gamma = {gamma} outside (0, 1]")));
    }
    if dim == 0 {
        return Err(Error::invalid("D must be >= 1"));
    }
    if s_max == 0 {
        return Err(Error::invalid("s_max must be >= 1"));
    }
    let (mut levels, mut objective) = (1, budget_objective(gamma, 1));
    for s in 2..=s_max {
        let v = budget_objective(gamma, s);
        if v < objective {
            levels = s;
            objective = v;
        }
    }
    let target = (gamma / levels as f64).powf(2.0 / 3.0);
    let floored = (target * dim as f64).floor() as usize;
    let b_clamped = floored == 0;
    let blocks = floored.clamp(1, dim);
    let rho = blocks as f64 / dim as f64;
    let log_term = (levels as f64 + 1.0).log2();
    let raw_p = 32.0 * gamma / (1.0 + 32.0 * rho + log_term);
    let p_clamped = raw_p > 1.0;
    let p = raw_p.min(1.0);
    let achieved_gamma = p * (32.0 * rho + 1.0 + log_term) / 32.0;
    Ok(BudgetPlan {
        gamma,
        dim,
        levels,
        blocks,
        rho,
        p,
        period: 1,
        objective,
        achieved_gamma,
        p_clamped,
        b_clamped,
    })
}
