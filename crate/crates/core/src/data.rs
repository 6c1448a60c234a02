//! Streaming data sources: CSV ingestion, synthetic generators and the
//! replicate-shuffle-partition step that turns a table into K client streams.

use std::io::Read;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::class_index;
use crate::rng::{derive_stream, Purpose};
use crate::types::{ParameterVector, StreamSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Task {
    Regression,
    Classification { classes: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSpec {
    pub path: PathBuf,
    pub label_column: String,
    /// Columns used as features; `None` takes every column except the label.
    #[serde(default)]
    pub feature_columns: Option<Vec<String>>,
    pub task: Task,
    /// Standardize each feature column to zero mean and unit variance.
    #[serde(default = "default_true")]
    pub standardize: bool,
}

fn default_true() -> bool {
    true
}

/// Normalization constants and row accounting recorded in run metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableMeta {
    pub rows_read: usize,
    pub rows_dropped: usize,
    pub feature_names: Vec<String>,
    pub feature_means: Vec<f64>,
    pub feature_scales: Vec<f64>,
    /// Min/max of the raw regression labels (absent for classification).
    pub label_range: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub samples: Vec<StreamSample>,
    pub meta: TableMeta,
}

pub fn load_csv(spec: &CsvSpec) -> Result<Table> {
    let file = std::fs::File::open(&spec.path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", spec.path.display())))?;
    load_csv_from(file, spec)
}

/// Loads from any reader. Rows with a missing or non-numeric required field are
/// dropped and counted; out-of-range class labels are an error.
pub fn load_csv_from<R: Read>(reader: R, spec: &CsvSpec) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("column '{name}' not found in header")))
    };
    let label_idx = find(&spec.label_column)?;
    let feature_names: Vec<String> = match &spec.feature_columns {
        Some(cols) => cols.clone(),
        None => headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != label_idx)
            .map(|(_, h)| h.clone())
            .collect(),
    };
    if feature_names.is_empty() {
        return Err(Error::Data("no feature columns".into()));
    }
    let feature_idx = feature_names
        .iter()
        .map(|n| find(n))
        .collect::<Result<Vec<_>>>()?;

    let parse = |field: Option<&str>| -> Option<f64> {
        let v: f64 = field?.parse().ok()?;
        v.is_finite().then_some(v)
    };
    let mut rows_read = 0;
    let mut rows_dropped = 0;
    let mut samples = Vec::new();
    for record in rdr.records() {
        rows_read += 1;
        let record = match record {
            Ok(r) => r,
            Err(_) => {
                rows_dropped += 1;
                continue;
            }
        };
        let label = parse(record.get(label_idx));
        let features: Option<Vec<f64>> =
            feature_idx.iter().map(|&i| parse(record.get(i))).collect();
        match (label, features) {
            (Some(label), Some(features)) => samples.push(StreamSample::new(features, label)),
            _ => rows_dropped += 1,
        }
    }
    if samples.is_empty() {
        return Err(Error::Data(format!(
            "no usable rows ({rows_read} read, {rows_dropped} dropped)"
        )));
    }

    let label_range = match spec.task {
        Task::Classification { classes } => {
            for s in &samples {
                class_index(s.label, classes)?;
            }
            None
        }
        Task::Regression => {
            let (lo, hi) = samples
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
                    (lo.min(s.label), hi.max(s.label))
                });
            let span = hi - lo;
            for s in &mut samples {
                s.label = if span > 0.0 {
                    (s.label - lo) / span
                } else {
                    0.0
                };
            }
            Some((lo, hi))
        }
    };

    let n = feature_idx.len();
    let count = samples.len() as f64;
    let (mut means, mut scales) = (vec![0.0; n], vec![1.0; n]);
    if spec.standardize {
        for s in &samples {
            for (m, x) in means.iter_mut().zip(&s.features) {
                *m += x / count;
            }
        }
        for (j, scale) in scales.iter_mut().enumerate() {
            let var = samples
                .iter()
                .map(|s| (s.features[j] - means[j]).powi(2))
                .sum::<f64>()
                / count;
            *scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        for s in &mut samples {
            for ((x, m), sc) in s.features.iter_mut().zip(&means).zip(&scales) {
                *x = (*x - m) / sc;
            }
        }
    }

    Ok(Table {
        samples,
        meta: TableMeta {
            rows_read,
            rows_dropped,
            feature_names,
            feature_means: means,
            feature_scales: scales,
            label_range,
        },
    })
}

/// K client streams of T samples each; client `k` sees `stream(k)[t-1]` at step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct FederatedStreams {
    clients: Vec<Vec<StreamSample>>,
}

impl FederatedStreams {
    pub fn new(clients: Vec<Vec<StreamSample>>) -> Result<Self> {
        let steps = clients.first().map(Vec::len).unwrap_or(0);
        if clients.is_empty() || steps == 0 {
            return Err(Error::Data(
                "streams need K >= 1 clients and T >= 1 steps".into(),
            ));
        }
        if clients.iter().any(|c| c.len() != steps) {
            return Err(Error::Data(
                "every client stream must have the same length T".into(),
            ));
        }
        let n = clients[0][0].features.len();
        if clients.iter().flatten().any(|s| s.features.len() != n) {
            return Err(Error::Data("inconsistent feature lengths".into()));
        }
        Ok(FederatedStreams { clients })
    }

    pub fn clients(&self) -> usize {
        self.clients.len()
    }

    pub fn steps(&self) -> usize {
        self.clients[0].len()
    }

    pub fn feature_dim(&self) -> usize {
        self.clients[0][0].features.len()
    }

    pub fn stream(&self, client: usize) -> &[StreamSample] {
        &self.clients[client]
    }

    /// Sample delivered to `client` at 1-based step `t`.
    pub fn sample(&self, client: usize, t: u64) -> &StreamSample {
        &self.clients[client][(t - 1) as usize]
    }

    /// Restriction to the first `steps` samples of every client.
    pub fn truncated(&self, steps: usize) -> Result<Self> {
        FederatedStreams::new(
            self.clients
                .iter()
                .map(|c| c.iter().take(steps).cloned().collect())
                .collect(),
        )
    }

    pub fn iter(&self) -> impl Iterator<Item = &StreamSample> {
        self.clients.iter().flatten()
    }
}

/// Tiles the table `ceil(K*T / N)` times, truncates to exactly `K*T` samples,
/// shuffles with the data-shuffling stream, and splits into K contiguous blocks.
pub fn replicate_and_partition(
    table: &[StreamSample],
    clients: usize,
    steps: usize,
    seed: u64,
) -> Result<FederatedStreams> {
    let total = clients
        .checked_mul(steps)
        .ok_or_else(|| Error::invalid("K*T overflows"))?;
    if total == 0 {
        return Err(Error::invalid("K*T must be positive"));
    }
    if table.is_empty() {
        return Err(Error::Data("cannot partition an empty table".into()));
    }
    let mut pool: Vec<StreamSample> = table.iter().cycle().take(total).cloned().collect();
    pool.shuffle(&mut derive_stream(seed, Purpose::Shuffle, 0, 0).rng());
    let mut it = pool.into_iter();
    let streams = (0..clients)
        .map(|_| it.by_ref().take(steps).collect())
        .collect();
    FederatedStreams::new(streams)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Generator {
    /// `x` uniform on the unit sphere in `dim` dimensions,
    /// `y = clip(<x, w_true + delta_k> + 0.5, 0, 1)` with `||w_true|| = 0.4` and
    /// `||delta_k|| = 0.4 * heterogeneity`. With `mirrored`, odd clients use
    /// `-delta` of their even neighbour.
    LinearRegression {
        dim: usize,
        heterogeneity: f64,
        #[serde(default)]
        mirrored: bool,
    },
    /// Class-conditional Gaussians: class means at distance `separation` from the
    /// origin, isotropic `noise`, and a per-client feature shift of norm `heterogeneity`.
    GaussianClasses {
        dim: usize,
        classes: usize,
        separation: f64,
        noise: f64,
        heterogeneity: f64,
    },
}

pub const SIGNAL_NORM: f64 = 0.4;
pub const LABEL_OFFSET: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub streams: FederatedStreams,
    /// Generating parameter for the linear generator, laid out for a linear
    /// model with bias: `(w_true, 0.5)`.
    pub truth: Option<ParameterVector>,
}

fn unit_vector<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

pub fn synthetic_stream(
    generator: &Generator,
    clients: usize,
    steps: usize,
    seed: u64,
) -> Result<SyntheticData> {
    if clients == 0 || steps == 0 {
        return Err(Error::invalid("K and T must be positive"));
    }
    let truth_client = u64::MAX;
    match *generator {
        Generator::LinearRegression {
            dim,
            heterogeneity,
            mirrored,
        } => {
            if dim == 0 {
                return Err(Error::invalid("generator dimension must be >= 1"));
            }
            if !(heterogeneity.is_finite() && heterogeneity >= 0.0) {
                return Err(Error::invalid("heterogeneity must be finite and >= 0"));
            }
            let mut trng = derive_stream(seed, Purpose::Synthetic, truth_client, 0).rng();
            let w_true: Vec<f64> = unit_vector(&mut trng, dim)
                .into_iter()
                .map(|x| SIGNAL_NORM * x)
                .collect();
            let shifts: Vec<Vec<f64>> = (0..clients)
                .map(|k| {
                    let base = if mirrored { k - k % 2 } else { k } as u64;
                    let mut r = derive_stream(seed, Purpose::Synthetic, base, 1).rng();
                    let sign = if mirrored && k % 2 == 1 { -1.0 } else { 1.0 };
                    unit_vector(&mut r, dim)
                        .into_iter()
                        .map(|x| sign * SIGNAL_NORM * heterogeneity * x)
                        .collect()
                })
                .collect();
            let streams = shifts
                .iter()
                .enumerate()
                .map(|(k, delta)| {
                    let mut r = derive_stream(seed, Purpose::Synthetic, k as u64, 0).rng();
                    (0..steps)
                        .map(|_| {
                            let x = unit_vector(&mut r, dim);
                            let y: f64 = x
                                .iter()
                                .zip(w_true.iter().zip(delta))
                                .map(|(xi, (wi, di))| xi * (wi + di))
                                .sum();
                            StreamSample::new(x, (y + LABEL_OFFSET).clamp(0.0, 1.0))
                        })
                        .collect()
                })
                .collect();
            let mut truth = w_true;
            truth.push(LABEL_OFFSET);
            Ok(SyntheticData {
                streams: FederatedStreams::new(streams)?,
                truth: Some(ParameterVector::new(truth)?),
            })
        }
        Generator::GaussianClasses {
            dim,
            classes,
            separation,
            noise,
            heterogeneity,
        } => {
            if dim == 0 || classes < 2 {
                return Err(Error::invalid("need dim >= 1 and at least 2 classes"));
            }
            for (name, v) in [
                ("separation", separation),
                ("noise", noise),
                ("heterogeneity", heterogeneity),
            ] {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(Error::invalid(format!("{name} must be finite and >= 0")));
                }
            }
            let mut trng = derive_stream(seed, Purpose::Synthetic, truth_client, 0).rng();
            let means: Vec<Vec<f64>> = (0..classes)
                .map(|_| {
                    unit_vector(&mut trng, dim)
                        .into_iter()
                        .map(|x| separation * x)
                        .collect()
                })
                .collect();
            let streams = (0..clients)
                .map(|k| {
                    let mut r = derive_stream(seed, Purpose::Synthetic, k as u64, 0).rng();
                    let shift: Vec<f64> = unit_vector(&mut r, dim)
                        .into_iter()
                        .map(|x| heterogeneity * x)
                        .collect();
                    (0..steps)
                        .map(|_| {
                            let c = r.random_range(0..classes);
                            let x = means[c]
                                .iter()
                                .zip(&shift)
                                .map(|(m, s)| {
                                    let e: f64 = r.sample(StandardNormal);
                                    m + s + noise * e
                                })
                                .collect();
                            StreamSample::new(x, c as f64)
                        })
                        .collect()
                })
                .collect();
            Ok(SyntheticData {
                streams: FederatedStreams::new(streams)?,
                truth: None,
            })
        }
    }
}

/// Where a run's data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DatasetSpec {
    Csv {
        #[serde(flatten)]
        csv: CsvSpec,
        clients: usize,
        steps: usize,
    },
    Synthetic {
        #[serde(flatten)]
        generator: Generator,
        clients: usize,
        steps: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub streams: FederatedStreams,
    pub table_meta: Option<TableMeta>,
    pub truth: Option<ParameterVector>,
}

impl DatasetSpec {
    pub fn clients(&self) -> usize {
        match self {
            DatasetSpec::Csv { clients, .. } | DatasetSpec::Synthetic { clients, .. } => *clients,
        }
    }

    pub fn steps(&self) -> usize {
        match self {
            DatasetSpec::Csv { steps, .. } | DatasetSpec::Synthetic { steps, .. } => *steps,
        }
    }

    pub fn set_clients(&mut self, k: usize) {
        match self {
            DatasetSpec::Csv { clients, .. } | DatasetSpec::Synthetic { clients, .. } => {
                *clients = k
            }
        }
    }

    pub fn set_steps(&mut self, t: usize) {
        match self {
            DatasetSpec::Csv { steps, .. } | DatasetSpec::Synthetic { steps, .. } => *steps = t,
        }
    }

    pub fn task(&self) -> Task {
        match self {
            DatasetSpec::Csv { csv, .. } => csv.task,
            DatasetSpec::Synthetic { generator, .. } => match generator {
                Generator::LinearRegression { .. } => Task::Regression,
                Generator::GaussianClasses { classes, .. } => {
                    Task::Classification { classes: *classes }
                }
            },
        }
    }

    pub fn materialize(&self, seed: u64) -> Result<Dataset> {
        match self {
            DatasetSpec::Csv {
                csv,
                clients,
                steps,
            } => {
                let table = load_csv(csv)?;
                let streams = replicate_and_partition(&table.samples, *clients, *steps, seed)?;
                Ok(Dataset {
                    streams,
                    table_meta: Some(table.meta),
                    truth: None,
                })
            }
            DatasetSpec::Synthetic {
                generator,
                clients,
                steps,
            } => {
                let data = synthetic_stream(generator, *clients, *steps, seed)?;
                Ok(Dataset {
                    streams: data.streams,
                    table_meta: None,
                    truth: data.truth,
                })
            }
        }
    }
}
