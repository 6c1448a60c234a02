//! Run orchestration: T steps over K clients under one method, with prequential
//! metrics, bit accounting and optional logs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{comm_cost, BoundParams, Trajectory};
use crate::data::{Dataset, DatasetSpec, FederatedStreams, TableMeta};
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::protocol::{ClientState, Message, MethodSpec, ServerState};
use crate::types::{ParameterVector, TimeIndex};

/// Everything that determines a run's output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub method: MethodSpec,
    pub seed: u64,
    /// Initial parameters drawn uniformly from `[-init_scale, init_scale]`; zeros when 0.
    #[serde(default)]
    pub init_scale: f64,
    /// Record metrics every this many steps; see [`default_cadence`].
    #[serde(default)]
    pub cadence: Option<u64>,
}

/// Every step up to `T = 10^4`, then `ceil(T / 10^4)`.
pub fn default_cadence(steps: u64) -> u64 {
    steps.div_ceil(10_000).max(1)
}

/// Execution knobs that do not change the numbers a run produces.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    /// Worker threads for the client loop; the global pool when `None`.
    pub threads: Option<usize>,
    pub log_predictions: bool,
    pub log_transmissions: bool,
    pub record_trajectory: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub t: u64,
    pub cum_loss: f64,
    /// Accuracy(t) for classifiers, MSE(t) otherwise.
    pub metric: f64,
    pub cum_bits: f64,
    /// Clients that transmitted at the most recent boundary.
    pub participants: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub t: u64,
    pub client: usize,
    pub prediction: f64,
    pub label: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransmissionRecord {
    pub t: u64,
    pub sender: u64,
    pub nominal_bits: f64,
    pub wire_bits: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Accuracy,
    Mse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub steps: u64,
    pub clients: usize,
    pub dim: usize,
    pub metric_kind: MetricKind,
    pub cum_loss: f64,
    pub final_metric: f64,
    pub cum_bits: f64,
    pub cum_wire_bits: u64,
    pub transmissions: u64,
    pub boundaries: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub metrics: Vec<MetricsRecord>,
    pub summary: RunSummary,
    pub final_model: ParameterVector,
    pub predictions: Option<Vec<PredictionRecord>>,
    pub transmissions: Option<Vec<TransmissionRecord>>,
    pub trajectory: Option<Trajectory>,
}

/// `1 - (1/n) sum min(1, |yhat - y|)`.
pub fn accuracy_metric(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    check_lengths(predictions, labels)?;
    let err: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(p, y)| (p - y).abs().min(1.0))
        .sum();
    Ok(1.0 - err / predictions.len() as f64)
}

/// `(1/n) sum (yhat - y)^2`.
pub fn mse_metric(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    check_lengths(predictions, labels)?;
    let err: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(p, y)| (p - y).powi(2))
        .sum();
    Ok(err / predictions.len() as f64)
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::invalid("metric of an empty sequence"));
    }
    Ok(())
}

fn pointwise_error(kind: MetricKind, prediction: f64, label: f64) -> f64 {
    match kind {
        MetricKind::Accuracy => (prediction - label).abs().min(1.0),
        MetricKind::Mse => (prediction - label).powi(2),
    }
}

fn metric_value(kind: MetricKind, error_sum: f64, count: f64) -> f64 {
    match kind {
        MetricKind::Accuracy => 1.0 - error_sum / count,
        MetricKind::Mse => error_sum / count,
    }
}

/// Materializes the dataset and runs.
pub fn run(config: &RunConfig, opts: &RunOptions) -> Result<RunOutput> {
    let data = config.dataset.materialize(config.seed)?;
    run_on(config, &data.streams, opts)
}

/// Runs on pre-built streams; `config.dataset` is only used for bookkeeping.
pub fn run_on(
    config: &RunConfig,
    streams: &FederatedStreams,
    opts: &RunOptions,
) -> Result<RunOutput> {
    match opts.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?
            .install(|| simulate(config, streams, opts)),
        None => simulate(config, streams, opts),
    }
}

fn simulate(
    config: &RunConfig,
    streams: &FederatedStreams,
    opts: &RunOptions,
) -> Result<RunOutput> {
    let model = &config.model;
    let method = &config.method;
    model.validate()?;
    if streams.feature_dim() != model.input_dim {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim,
            got: streams.feature_dim(),
        });
    }
    let k = streams.clients();
    let steps = streams.steps() as u64;
    let dim = model.dim();
    method.validate(k, dim)?;
    let cadence = config.cadence.unwrap_or_else(|| default_cadence(steps));
    if cadence == 0 {
        return Err(Error::invalid("metric cadence must be >= 1"));
    }
    let kind = if model.is_classifier() {
        MetricKind::Accuracy
    } else {
        MetricKind::Mse
    };

    let init = model.init_params(config.init_scale, config.seed)?;
    let mut server = ServerState::new(init.clone(), k);
    let mut clients: Vec<ClientState> = (0..k)
        .map(|i| ClientState::new(i as u64, &init, method.participation.probability(i)))
        .collect();

    let mut metrics = Vec::new();
    let mut predictions = opts.log_predictions.then(Vec::new);
    let mut transmissions = opts.log_transmissions.then(Vec::new);
    let mut trajectory = opts.record_trajectory.then(Trajectory::new);
    let (mut cum_loss, mut error_sum, mut cum_bits) = (0.0, 0.0, 0.0);
    let (mut wire_bits, mut sent, mut boundaries) = (0u64, 0u64, 0u64);
    let mut participants = 0;
    let wire_per_message = method.message_wire_bits(dim);

    for t in 1..=steps {
        let step = (|| -> Result<()> {
            let index = TimeIndex::new(t, method.period)?;
            let broadcast = index.starts_period().then(|| server.model().clone());
            if let Some(tr) = trajectory.as_mut() {
                tr.push(server.model());
            }
            let outcomes: Vec<_> = clients
                .par_iter_mut()
                .enumerate()
                .map(|(i, c)| {
                    c.local_step(
                        broadcast.as_ref(),
                        streams.sample(i, t),
                        method,
                        model,
                        index,
                    )
                })
                .collect::<Result<_>>()?;
            for (i, out) in outcomes.iter().enumerate() {
                let label = streams.sample(i, t).label;
                let point = out.prediction.point();
                cum_loss += out.loss;
                error_sum += pointwise_error(kind, point, label);
                if let Some(log) = predictions.as_mut() {
                    log.push(PredictionRecord {
                        t,
                        client: i,
                        prediction: point,
                        label,
                    });
                }
            }
            if index.is_boundary() {
                let messages: Vec<Message> = clients
                    .par_iter()
                    .map(|c| c.build_message(method, index, config.seed))
                    .collect::<Result<Vec<_>>>()?
                    .into_iter()
                    .flatten()
                    .collect();
                for m in &messages {
                    let bits = m.nominal_bits();
                    cum_bits += bits;
                    wire_bits += wire_per_message;
                    if let Some(log) = transmissions.as_mut() {
                        log.push(TransmissionRecord {
                            t,
                            sender: m.sender(),
                            nominal_bits: bits,
                            wire_bits: wire_per_message,
                        });
                    }
                }
                participants = messages.len();
                sent += messages.len() as u64;
                boundaries += 1;
                server.global_step(&messages, method, index)?;
            }
            Ok(())
        })();
        step.map_err(|e| e.at_step(t))?;

        if t % cadence == 0 || t == steps {
            metrics.push(MetricsRecord {
                t,
                cum_loss,
                metric: metric_value(kind, error_sum, (t as usize * k) as f64),
                cum_bits,
                participants,
            });
        }
    }

    Ok(RunOutput {
        summary: RunSummary {
            label: method.label(),
            steps,
            clients: k,
            dim,
            metric_kind: kind,
            cum_loss,
            final_metric: metrics.last().map_or(f64::NAN, |m| m.metric),
            cum_bits,
            cum_wire_bits: wire_bits,
            transmissions: sent,
            boundaries,
        },
        metrics,
        final_model: server.model().clone(),
        predictions,
        transmissions,
        trajectory,
    })
}

pub const METRICS_HEADER: [&str; 5] = ["t", "cum_loss", "metric", "cum_bits", "participants"];

pub fn write_metrics_csv<W: Write>(out: W, records: &[MetricsRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record(METRICS_HEADER)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub version: String,
    pub seed: u64,
    pub config: RunConfig,
    pub summary: RunSummary,
    pub table: Option<TableMeta>,
}

/// Writes `<stem>.csv` and `<stem>.json` into `dir`, returning both paths.
pub fn write_run(
    dir: &Path,
    stem: &str,
    config: &RunConfig,
    output: &RunOutput,
    table: Option<&TableMeta>,
) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));
    write_metrics_csv(BufWriter::new(File::create(&csv_path)?), &output.metrics)?;
    let meta = RunMetadata {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: config.seed,
        config: config.clone(),
        summary: output.summary.clone(),
        table: table.cloned(),
    };
    let mut f = BufWriter::new(File::create(&json_path)?);
    serde_json::to_writer_pretty(&mut f, &meta)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok((csv_path, json_path))
}

/// Seed-averaged metrics for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodComparison {
    pub label: String,
    pub ccr: f64,
    pub mean_metrics: Vec<MeanRecord>,
    pub final_metric_per_seed: Vec<f64>,
    pub mean_final_metric: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanRecord {
    pub t: u64,
    pub cum_loss: f64,
    pub metric: f64,
    pub cum_bits: f64,
    pub participants: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub seeds: Vec<u64>,
    pub methods: Vec<MethodComparison>,
}

/// Expected-cost reduction relative to `32 K D` bits per step, in percent.
fn method_ccr(method: &MethodSpec, dim: usize, clients: usize) -> f64 {
    match BoundParams::from_method(method, dim, clients).and_then(|p| comm_cost(&p)) {
        Ok(c) => c.ccr,
        Err(_) => {
            let (_, p_sum) = method.participation.min_and_sum(clients);
            let cost = p_sum / method.period as f64 * method.message_bits(dim);
            (1.0 - cost / (32.0 * clients as f64 * dim as f64)) * 100.0
        }
    }
}

/// Runs every config on seeds `seed, seed+1, ..., seed+replicates-1`, sharing
/// one materialized dataset per seed.
pub fn compare(configs: &[RunConfig], replicates: usize, opts: &RunOptions) -> Result<Comparison> {
    let first = configs
        .first()
        .ok_or_else(|| Error::invalid("nothing to compare"))?;
    if replicates == 0 {
        return Err(Error::invalid("replicates must be >= 1"));
    }
    for c in configs {
        if c.dataset != first.dataset || c.model != first.model || c.seed != first.seed {
            return Err(Error::Config(
                "compared runs must share dataset, model and seed".into(),
            ));
        }
        if c.cadence != first.cadence || c.init_scale != first.init_scale {
            return Err(Error::Config(
                "compared runs must share cadence and init_scale".into(),
            ));
        }
    }
    let seeds: Vec<u64> = (0..replicates as u64).map(|r| first.seed + r).collect();
    let mut runs: Vec<Vec<RunOutput>> = vec![Vec::new(); configs.len()];
    for &seed in &seeds {
        let data: Dataset = first.dataset.materialize(seed)?;
        for (i, c) in configs.iter().enumerate() {
            let cfg = RunConfig { seed, ..c.clone() };
            runs[i].push(run_on(&cfg, &data.streams, opts)?);
        }
    }
    let dim = first.model.dim();
    let clients = first.dataset.clients();
    let r = replicates as f64;
    let methods = configs
        .iter()
        .zip(runs)
        .map(|(c, outs)| {
            let mean_metrics = (0..outs[0].metrics.len())
                .map(|j| {
                    let avg = |f: &dyn Fn(&MetricsRecord) -> f64| {
                        outs.iter().map(|o| f(&o.metrics[j])).sum::<f64>() / r
                    };
                    MeanRecord {
                        t: outs[0].metrics[j].t,
                        cum_loss: avg(&|m| m.cum_loss),
                        metric: avg(&|m| m.metric),
                        cum_bits: avg(&|m| m.cum_bits),
                        participants: avg(&|m| m.participants as f64),
                    }
                })
                .collect();
            let finals: Vec<f64> = outs.iter().map(|o| o.summary.final_metric).collect();
            MethodComparison {
                label: c.method.label(),
                ccr: method_ccr(&c.method, dim, clients),
                mean_metrics,
                mean_final_metric: finals.iter().sum::<f64>() / r,
                final_metric_per_seed: finals,
            }
        })
        .collect();
    Ok(Comparison { seeds, methods })
}

/// Long-format CSV: `method,t,cum_loss,metric,cum_bits,participants,ccr`.
pub fn write_comparison_csv<W: Write>(out: W, cmp: &Comparison) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "method",
        "t",
        "cum_loss",
        "metric",
        "cum_bits",
        "participants",
        "ccr",
    ])?;
    for m in &cmp.methods {
        for r in &m.mean_metrics {
            w.write_record([
                m.label.clone(),
                r.t.to_string(),
                r.cum_loss.to_string(),
                r.metric.to_string(),
                r.cum_bits.to_string(),
                r.participants.to_string(),
                m.ccr.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
