//! Client and server state machines shared by FedOGD, OFedAvg, FedOMD and OFedIQ.
//!
//! All four methods run through the same code path: a [`MethodSpec`] only fixes
//! the period, the participation probabilities and the optional quantizer.
//! Clients run local OGD from the most recent broadcast, accumulate the period's
//! gradients, and at every boundary (`t mod L == 0`) transmit
//! `Q(sum of gradients / p_k)` with probability `p_k`. The server sets
//! `w <- w - (eta / K) * sum of decoded messages`, summing in ascending client order.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelSpec, Prediction};
use crate::quantizer::{dequantize, quantize, QuantizedMessage, QuantizerSpec};
use crate::rng::{derive_stream, Purpose};
use crate::types::{ParameterVector, StreamSample, TimeIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    FedOgd,
    OFedAvg,
    FedOmd,
    OFedIq,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::FedOgd => "FedOGD",
            Variant::OFedAvg => "OFedAvg",
            Variant::FedOmd => "FedOMD",
            Variant::OFedIq => "OFedIQ",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fedogd" => Ok(Variant::FedOgd),
            "ofedavg" => Ok(Variant::OFedAvg),
            "fedomd" => Ok(Variant::FedOmd),
            "ofediq" => Ok(Variant::OFedIq),
            other => Err(Error::invalid(format!(
                "unknown method '{other}' (expected fedogd, ofedavg, fedomd or ofediq)"
            ))),
        }
    }
}

/// Per-client participation probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Participation {
    Uniform(f64),
    PerClient(Vec<f64>),
}

impl Participation {
    pub fn probability(&self, client: usize) -> f64 {
        match self {
            Participation::Uniform(p) => *p,
            Participation::PerClient(ps) => ps[client],
        }
    }

    fn validate(&self, clients: usize) -> Result<()> {
        let check = |p: f64| {
            if p > 0.0 && p <= 1.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!(
                    "participation probability {p} outside (0, 1]"
                )))
            }
        };
        match self {
            Participation::Uniform(p) => check(*p),
            Participation::PerClient(ps) => {
                if ps.len() != clients {
                    return Err(Error::invalid(format!(
                        "{} participation probabilities for {clients} clients",
                        ps.len()
                    )));
                }
                ps.iter().try_for_each(|&p| check(p))
            }
        }
    }

    fn is_full(&self) -> bool {
        match self {
            Participation::Uniform(p) => *p == 1.0,
            Participation::PerClient(ps) => ps.iter().all(|&p| p == 1.0),
        }
    }

    /// `(p_min, p_sum)` over `clients` clients.
    pub fn min_and_sum(&self, clients: usize) -> (f64, f64) {
        match self {
            Participation::Uniform(p) => (*p, *p * clients as f64),
            Participation::PerClient(ps) => (
                ps.iter().cloned().fold(f64::INFINITY, f64::min),
                ps.iter().sum(),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub variant: Variant,
    pub period: u64,
    pub participation: Participation,
    pub quantizer: Option<QuantizerSpec>,
    pub eta: f64,
}

impl MethodSpec {
    pub fn fed_ogd(eta: f64) -> Self {
        MethodSpec {
            variant: Variant::FedOgd,
            period: 1,
            participation: Participation::Uniform(1.0),
            quantizer: None,
            eta,
        }
    }

    pub fn ofed_avg(p: f64, eta: f64) -> Self {
        MethodSpec {
            variant: Variant::OFedAvg,
            period: 1,
            participation: Participation::Uniform(p),
            quantizer: None,
            eta,
        }
    }

    pub fn fed_omd(period: u64, eta: f64) -> Self {
        MethodSpec {
            variant: Variant::FedOmd,
            period,
            participation: Participation::Uniform(1.0),
            quantizer: None,
            eta,
        }
    }

    pub fn ofed_iq(
        period: u64,
        participation: Participation,
        quantizer: Option<QuantizerSpec>,
        eta: f64,
    ) -> Self {
        MethodSpec {
            variant: Variant::OFedIq,
            period,
            participation,
            quantizer,
            eta,
        }
    }

    /// Checks the variant's structural constraints for a run with `clients`
    /// clients and parameter dimension `dim`.
    pub fn validate(&self, clients: usize, dim: usize) -> Result<()> {
        if clients == 0 {
            return Err(Error::invalid("at least one client is required"));
        }
        if self.period < 1 {
            return Err(Error::invalid("period L must be >= 1"));
        }
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return Err(Error::invalid(format!(
                "learning rate {} must be finite and >= 0",
                self.eta
            )));
        }
        self.participation.validate(clients)?;
        if let Some(q) = &self.quantizer {
            if q.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: q.dim(),
                });
            }
        }
        let name = self.variant.name();
        let fail = |what: &str| Err(Error::invalid(format!("{name} requires {what}")));
        match self.variant {
            Variant::FedOgd => {
                if self.period != 1 {
                    return fail("L = 1");
                }
                if !self.participation.is_full() {
                    return fail("p_k = 1 for every client");
                }
                if self.quantizer.is_some() {
                    return fail("no quantizer");
                }
            }
            Variant::OFedAvg => {
                if self.period != 1 {
                    return fail("L = 1");
                }
                if self.quantizer.is_some() {
                    return fail("no quantizer");
                }
            }
            Variant::FedOmd => {
                if !self.participation.is_full() {
                    return fail("p_k = 1 for every client");
                }
                if self.quantizer.is_some() {
                    return fail("no quantizer");
                }
            }
            Variant::OFedIq => {}
        }
        Ok(())
    }

    /// Nominal bits of one transmitted message: the quantizer cost, or `32 D` raw.
    pub fn message_bits(&self, dim: usize) -> f64 {
        match &self.quantizer {
            Some(q) => q.nominal_bits(),
            None => 32.0 * dim as f64,
        }
    }

    pub fn message_wire_bits(&self, dim: usize) -> u64 {
        match &self.quantizer {
            Some(q) => q.wire_bits(),
            None => 32 * dim as u64,
        }
    }

    pub fn label(&self) -> String {
        let p = match &self.participation {
            Participation::Uniform(p) => format!("{p}"),
            Participation::PerClient(_) => "per-client".to_string(),
        };
        match (&self.variant, &self.quantizer) {
            (Variant::FedOgd, _) => "FedOGD".to_string(),
            (Variant::OFedAvg, _) => format!("OFedAvg(p={p})"),
            (Variant::FedOmd, _) => format!("FedOMD(L={})", self.period),
            (Variant::OFedIq, Some(q)) => format!(
                "OFedIQ(L={},p={p},s={},b={})",
                self.period,
                q.levels(),
                q.blocks()
            ),
            (Variant::OFedIq, None) => format!("OFedIQ(L={},p={p},no-quant)", self.period),
        }
    }
}

/// A transmitted local update.
#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Raw {
        sender: u64,
        step: u64,
        values: ParameterVector,
    },
    Quantized {
        spec: QuantizerSpec,
        msg: QuantizedMessage,
    },
}

impl Message {
    pub fn sender(&self) -> u64 {
        match self {
            Message::Raw { sender, .. } => *sender,
            Message::Quantized { msg, .. } => msg.sender,
        }
    }

    pub fn step(&self) -> u64 {
        match self {
            Message::Raw { step, .. } => *step,
            Message::Quantized { msg, .. } => msg.step,
        }
    }

    pub fn decode(&self) -> Result<ParameterVector> {
        match self {
            Message::Raw { values, .. } => Ok(values.clone()),
            Message::Quantized { spec, msg } => dequantize(msg, spec),
        }
    }

    pub fn nominal_bits(&self) -> f64 {
        match self {
            Message::Raw { values, .. } => 32.0 * values.dim() as f64,
            Message::Quantized { spec, .. } => spec.nominal_bits(),
        }
    }
}

/// Result of one prequential local step.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalOutcome {
    /// Prediction of the in-force global model, made before training on the sample.
    pub prediction: Prediction,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    id: u64,
    theta: ParameterVector,
    anchor: ParameterVector,
    grad_sum: Vec<f64>,
    probability: f64,
    accumulated_loss: f64,
}

impl ClientState {
    /// A client starting from the shared initial model (`theta_1 = w_1`).
    pub fn new(id: u64, init: &ParameterVector, probability: f64) -> Self {
        ClientState {
            id,
            theta: init.clone(),
            anchor: init.clone(),
            grad_sum: vec![0.0; init.dim()],
            probability,
            accumulated_loss: 0.0,
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn theta(&self) -> &ParameterVector {
        &self.theta
    }

    /// The global model received at the start of the current period.
    pub fn anchor(&self) -> &ParameterVector {
        &self.anchor
    }

    pub fn probability(&self) -> f64 {
        self.probability
    }

    pub fn accumulated_loss(&self) -> f64 {
        self.accumulated_loss
    }

    /// Sum of this period's local gradients.
    pub fn period_gradient_sum(&self) -> &[f64] {
        &self.grad_sum
    }

    /// One prequential step: score the sample with the in-force global model,
    /// then `theta <- g - eta * grad(g)` where `g` is the broadcast at a period
    /// start and the local parameter otherwise.
    pub fn local_step(
        &mut self,
        broadcast: Option<&ParameterVector>,
        sample: &StreamSample,
        spec: &MethodSpec,
        model: &ModelSpec,
        t: TimeIndex,
    ) -> Result<LocalOutcome> {
        if t.period() != spec.period {
            return Err(Error::invalid(format!(
                "time index period {} differs from method period {}",
                t.period(),
                spec.period
            )));
        }
        match (t.starts_period(), broadcast) {
            (true, Some(w)) => {
                w.check_dim(self.theta.dim())?;
                self.anchor.as_mut_slice().copy_from_slice(w.as_slice());
                self.theta.as_mut_slice().copy_from_slice(w.as_slice());
                self.grad_sum.iter_mut().for_each(|g| *g = 0.0);
            }
            (true, None) => return Err(Error::MissingBroadcast(t.t())),
            (false, Some(_)) => return Err(Error::UnexpectedBroadcast(t.t())),
            (false, None) => {}
        }

        let prediction = model.predict(&self.anchor, &sample.features)?;
        let loss = model.loss(&self.anchor, sample)?;

        let grad = model.gradient(&self.theta, sample)?;
        for ((th, gs), g) in self
            .theta
            .as_mut_slice()
            .iter_mut()
            .zip(self.grad_sum.iter_mut())
            .zip(grad.as_slice())
        {
            *th -= spec.eta * g;
            *gs += g;
        }
        self.theta.check_finite()?;
        self.accumulated_loss += loss;
        Ok(LocalOutcome { prediction, loss })
    }

    /// At a boundary, draws participation from the client's subsampling stream and,
    /// if selected, returns `Q(sum of period gradients / p_k)`.
    pub fn build_message(
        &self,
        spec: &MethodSpec,
        t: TimeIndex,
        seed: u64,
    ) -> Result<Option<Message>> {
        if !t.is_boundary() {
            return Err(Error::OffBoundary(t.t()));
        }
        let draw: f64 = derive_stream(seed, Purpose::Subsample, self.id, t.t())
            .rng()
            .random();
        if draw >= self.probability {
            return Ok(None);
        }
        let payload =
            ParameterVector::from_raw(self.grad_sum.iter().map(|g| g / self.probability).collect());
        payload.check_finite()?;
        Ok(Some(match &spec.quantizer {
            None => Message::Raw {
                sender: self.id,
                step: t.t(),
                values: payload,
            },
            Some(q) => {
                let mut rng = derive_stream(seed, Purpose::Quantize, self.id, t.t()).rng();
                Message::Quantized {
                    spec: *q,
                    msg: quantize(q, &payload, &mut rng)?.with_origin(self.id, t.t()),
                }
            }
        }))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    w: ParameterVector,
    clients: usize,
    last_boundary: u64,
}

impl ServerState {
    pub fn new(init: ParameterVector, clients: usize) -> Self {
        ServerState {
            w: init,
            clients,
            last_boundary: 0,
        }
    }

    /// The current global model, i.e. `w_{t-L+1}` until the next boundary.
    pub fn model(&self) -> &ParameterVector {
        &self.w
    }

    pub fn clients(&self) -> usize {
        self.clients
    }

    pub fn last_boundary(&self) -> u64 {
        self.last_boundary
    }

    /// `w <- w - (eta / K) * sum_k m_k`. The server never needs to know which
    /// clients were sampled; messages are summed in ascending sender order.
    pub fn global_step(
        &mut self,
        messages: &[Message],
        spec: &MethodSpec,
        t: TimeIndex,
    ) -> Result<()> {
        if !t.is_boundary() {
            return Err(Error::OffBoundary(t.t()));
        }
        let dim = self.w.dim();
        let mut order: Vec<&Message> = messages.iter().collect();
        order.sort_by_key(|m| m.sender());
        let mut sum = vec![0.0; dim];
        for m in order {
            let decoded = m.decode()?;
            decoded.check_dim(dim)?;
            for (s, v) in sum.iter_mut().zip(decoded.as_slice()) {
                *s += v;
            }
        }
        let step = spec.eta / self.clients as f64;
        for (w, s) in self.w.as_mut_slice().iter_mut().zip(&sum) {
            *w -= step * s;
        }
        self.w.check_finite()?;
        self.last_boundary = t.t();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ParameterVector {
        ParameterVector::new(v.to_vec()).unwrap()
    }

    fn one_d() -> ModelSpec {
        ModelSpec::linear(1, false)
    }

    fn ti(t: u64, l: u64) -> TimeIndex {
        TimeIndex::new(t, l).unwrap()
    }

    #[test]
    fn variant_constraints() {
        assert!(MethodSpec::fed_ogd(0.1).validate(3, 2).is_ok());
        let mut bad = MethodSpec::fed_ogd(0.1);
        bad.period = 2;
        assert!(bad.validate(3, 2).is_err());
        let mut bad = MethodSpec::ofed_avg(0.5, 0.1);
        bad.quantizer = Some(QuantizerSpec::new(1, 1, 2).unwrap());
        assert!(bad.validate(3, 2).is_err());
        let mut bad = MethodSpec::fed_omd(4, 0.1);
        bad.participation = Participation::Uniform(0.5);
        assert!(bad.validate(3, 2).is_err());
        assert!(MethodSpec::ofed_avg(0.0, 0.1).validate(3, 2).is_err());
        assert!(MethodSpec::ofed_avg(1.5, 0.1).validate(3, 2).is_err());
        assert!(MethodSpec::ofed_avg(0.5, -0.1).validate(3, 2).is_err());
        let q = QuantizerSpec::new(3, 1, 5).unwrap();
        assert!(
            MethodSpec::ofed_iq(2, Participation::Uniform(0.3), Some(q), 0.1)
                .validate(3, 5)
                .is_ok()
        );
        assert!(
            MethodSpec::ofed_iq(2, Participation::Uniform(0.3), Some(q), 0.1)
                .validate(3, 4)
                .is_err()
        );
        assert!(
            MethodSpec::ofed_iq(1, Participation::PerClient(vec![0.5, 1.0]), None, 0.1)
                .validate(3, 5)
                .is_err()
        );
        assert!("OFedIQ".parse::<Variant>().is_ok());
        assert!("fedsgd".parse::<Variant>().is_err());
    }

    #[test]
    fn local_step_hand_example() {
        let spec = MethodSpec::fed_ogd(0.1);
        let w = pv(&[0.0]);
        let mut c = ClientState::new(0, &w, 1.0);
        let out = c
            .local_step(
                Some(&w),
                &StreamSample::new(vec![1.0], 1.0),
                &spec,
                &one_d(),
                ti(1, 1),
            )
            .unwrap();
        assert_eq!(out.prediction.point(), 0.0);
        assert_eq!(out.loss, 1.0);
        assert!((c.theta().as_slice()[0] - 0.2).abs() < 1e-15);
        assert_eq!(c.period_gradient_sum(), &[-2.0]);
    }

    #[test]
    fn zero_rate_and_stationary_points_keep_theta() {
        let w = pv(&[0.7]);
        let mut c = ClientState::new(0, &w, 1.0);
        c.local_step(
            Some(&w),
            &StreamSample::new(vec![1.0], 0.0),
            &MethodSpec::fed_ogd(0.0),
            &one_d(),
            ti(1, 1),
        )
        .unwrap();
        assert_eq!(c.theta(), &w);

        let w = pv(&[0.5]);
        let mut c = ClientState::new(0, &w, 1.0);
        c.local_step(
            Some(&w),
            &StreamSample::new(vec![2.0], 1.0),
            &MethodSpec::fed_ogd(0.3),
            &one_d(),
            ti(1, 1),
        )
        .unwrap();
        assert_eq!(c.theta(), &w);
    }

    #[test]
    fn broadcast_contract() {
        let w = pv(&[0.0]);
        let spec = MethodSpec::fed_omd(2, 0.1);
        let s = StreamSample::new(vec![1.0], 1.0);
        let mut c = ClientState::new(0, &w, 1.0);
        assert!(matches!(
            c.local_step(None, &s, &spec, &one_d(), ti(1, 2)),
            Err(Error::MissingBroadcast(1))
        ));
        c.local_step(Some(&w), &s, &spec, &one_d(), ti(1, 2))
            .unwrap();
        assert!(matches!(
            c.local_step(Some(&w), &s, &spec, &one_d(), ti(2, 2)),
            Err(Error::UnexpectedBroadcast(2))
        ));
        assert!(matches!(
            c.build_message(&spec, ti(1, 2), 0),
            Err(Error::OffBoundary(1))
        ));
    }

    #[test]
    fn single_step_message_is_the_gradient() {
        let w = pv(&[0.3]);
        let spec = MethodSpec::fed_ogd(0.1);
        let mut c = ClientState::new(4, &w, 1.0);
        let s = StreamSample::new(vec![1.7], 0.9);
        c.local_step(Some(&w), &s, &spec, &one_d(), ti(1, 1))
            .unwrap();
        let g = one_d().gradient(&w, &s).unwrap();
        let m = c.build_message(&spec, ti(1, 1), 99).unwrap().unwrap();
        assert_eq!(m.sender(), 4);
        assert_eq!(m.decode().unwrap(), g);
        assert_eq!(m.nominal_bits(), 32.0);
    }

    #[test]
    fn two_step_period_message_with_half_participation() {
        // L = 2, p = 0.5: message = (g1 + g2) / 0.5 where g2 is taken at theta_2
        let eta = 0.1;
        let w = pv(&[0.0]);
        let spec = MethodSpec::ofed_iq(2, Participation::Uniform(0.5), None, eta);
        let s1 = StreamSample::new(vec![1.0], 1.0);
        let s2 = StreamSample::new(vec![2.0], 0.0);
        // hand unroll: g1 = 2*1*(0-1) = -2, theta_2 = 0.2, g2 = 2*2*(0.4-0) = 1.6
        let g1 = -2.0;
        let g2 = 2.0 * 2.0 * (2.0 * (0.0 - eta * g1) - 0.0);
        let expected = 2.0 * (g1 + g2);
        let mut seen = 0;
        for seed in 0..64 {
            let mut c = ClientState::new(0, &w, 0.5);
            c.local_step(Some(&w), &s1, &spec, &one_d(), ti(1, 2))
                .unwrap();
            c.local_step(None, &s2, &spec, &one_d(), ti(2, 2)).unwrap();
            if let Some(m) = c.build_message(&spec, ti(2, 2), seed).unwrap() {
                let v = m.decode().unwrap().as_slice()[0];
                assert!((v - expected).abs() < 1e-12, "{v} vs {expected}");
                seen += 1;
            }
        }
        assert!(seen > 0 && seen < 64);
    }

    #[test]
    fn participation_frequency() {
        let w = pv(&[0.0]);
        let spec = MethodSpec::ofed_avg(0.3, 0.1);
        let c = ClientState::new(2, &w, 0.3);
        let n = 10_000u64;
        let hits = (1..=n)
            .filter(|&t| c.build_message(&spec, ti(t, 1), 17).unwrap().is_some())
            .count() as f64;
        let freq = hits / n as f64;
        assert!((freq - 0.3).abs() <= 0.015, "{freq}");

        let full = ClientState::new(2, &w, 1.0);
        assert!((1..=1000).all(|t| full
            .build_message(&MethodSpec::fed_ogd(0.1), ti(t, 1), 5)
            .unwrap()
            .is_some()));
    }

    #[test]
    fn global_step_examples() {
        let spec = MethodSpec::fed_ogd(0.1);
        let mut server = ServerState::new(pv(&[0.0]), 2);
        let msgs = vec![
            Message::Raw {
                sender: 1,
                step: 1,
                values: pv(&[-4.0]),
            },
            Message::Raw {
                sender: 0,
                step: 1,
                values: pv(&[-2.0]),
            },
        ];
        server.global_step(&msgs, &spec, ti(1, 1)).unwrap();
        assert!((server.model().as_slice()[0] - 0.3).abs() < 1e-15);

        let before = server.model().clone();
        server.global_step(&[], &spec, ti(2, 1)).unwrap();
        assert_eq!(server.model(), &before);
        let zeros = vec![Message::Raw {
            sender: 0,
            step: 3,
            values: pv(&[0.0]),
        }];
        server.global_step(&zeros, &spec, ti(3, 1)).unwrap();
        assert_eq!(server.model(), &before);

        let wrong = vec![Message::Raw {
            sender: 0,
            step: 4,
            values: pv(&[0.0, 1.0]),
        }];
        assert!(server.global_step(&wrong, &spec, ti(4, 1)).is_err());
        assert!(server
            .global_step(&[], &MethodSpec::fed_omd(2, 0.1), ti(3, 2))
            .is_err());
    }

    #[test]
    fn aggregation_is_order_independent() {
        let spec = MethodSpec::fed_ogd(0.37);
        let msgs: Vec<Message> = (0..7)
            .map(|k| Message::Raw {
                sender: k,
                step: 1,
                values: pv(&[0.1 * k as f64 + 1e-3, -(k as f64).sqrt()]),
            })
            .collect();
        let mut a = ServerState::new(pv(&[0.2, 0.4]), 7);
        a.global_step(&msgs, &spec, ti(1, 1)).unwrap();
        let mut reversed = msgs.clone();
        reversed.reverse();
        let mut b = ServerState::new(pv(&[0.2, 0.4]), 7);
        b.global_step(&reversed, &spec, ti(1, 1)).unwrap();
        assert_eq!(a.model(), b.model());
    }

    #[test]
    fn unbiased_subsampled_aggregate() {
        // Fixed boundary, K = 5 clients with fixed gradients; over 10^4 participation
        // draws the mean update direction matches the full-participation sum.
        let grads = [1.0, -2.0, 0.5, 3.0, -0.25];
        let p = [0.2, 0.5, 0.9, 0.3, 0.7];
        let spec = MethodSpec::ofed_iq(1, Participation::PerClient(p.to_vec()), None, 1.0);
        let model = one_d();
        let w = pv(&[0.0]);
        let trials = 10_000u64;
        let mut total = 0.0;
        let mut total_sq = 0.0;
        for trial in 0..trials {
            let mut dir = 0.0;
            for k in 0..5 {
                let mut c = ClientState::new(k as u64, &w, p[k]);
                // y chosen so that gradient 2x(wx - y) at w = 0, x = 1 equals grads[k]
                let s = StreamSample::new(vec![1.0], -grads[k] / 2.0);
                c.local_step(Some(&w), &s, &spec, &model, ti(1, 1)).unwrap();
                if let Some(m) = c.build_message(&spec, ti(1, 1), trial).unwrap() {
                    dir += m.decode().unwrap().as_slice()[0];
                }
            }
            total += dir;
            total_sq += dir * dir;
        }
        let n = trials as f64;
        let mean = total / n;
        let se = ((total_sq / n - mean * mean) / n).sqrt();
        let target: f64 = grads.iter().sum();
        assert!(
            (mean - target).abs() < 4.0 * se,
            "{mean} vs {target} (se {se})"
        );
    }
}
