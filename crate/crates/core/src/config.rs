//! TOML run configuration.
//!
//! ```toml
//! seed = 7
//!
//! [dataset]
//! source = "synthetic"          # or "csv"
//! generator = "linear-regression"
//! dim = 16
//! heterogeneity = 1.0
//! clients = 20
//! steps = 500
//!
//! [model]
//! family = "linear"             # linear | softmax | mlp
//!
//! [method]
//! variant = "ofediq"            # fedogd | ofedavg | fedomd | ofediq
//! eta = 0.1
//! budget = 0.01                 # plan p, s, b for this cost ratio
//! ```
//!
//! Unknown keys anywhere are errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{optimize_budget, DEFAULT_S_MAX};
use crate::data::{CsvSpec, DatasetSpec, Generator, Task};
use crate::error::{Error, Result};
use crate::model::{Family, ModelSpec};
use crate::protocol::{MethodSpec, Participation, Variant};
use crate::quantizer::QuantizerSpec;
use crate::sim::RunConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub init_scale: f64,
    #[serde(default)]
    pub cadence: Option<u64>,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub method: MethodSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Csv,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    LinearRegression,
    GaussianClasses,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub source: Source,
    pub clients: usize,
    pub steps: usize,
    // csv
    pub path: Option<PathBuf>,
    pub label_column: Option<String>,
    pub feature_columns: Option<Vec<String>>,
    /// CSV task: number of classes, absent for regression.
    pub classes: Option<usize>,
    pub standardize: Option<bool>,
    // synthetic
    pub generator: Option<GeneratorKind>,
    pub dim: Option<usize>,
    pub heterogeneity: Option<f64>,
    pub mirrored: Option<bool>,
    pub separation: Option<f64>,
    pub noise: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyKind {
    Linear,
    Softmax,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub family: FamilyKind,
    pub bias: Option<bool>,
    /// Softmax or classifying MLP; defaults to the dataset's class count.
    pub classes: Option<usize>,
    pub hidden: Option<usize>,
    #[serde(default)]
    pub ridge: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSection {
    pub variant: Variant,
    pub eta: f64,
    pub period: Option<u64>,
    pub p: Option<f64>,
    pub participation: Option<Vec<f64>>,
    pub quantize: Option<bool>,
    /// Quantization levels `s`.
    pub levels: Option<u32>,
    /// Quantization blocks `b`.
    pub blocks: Option<usize>,
    /// Cost ratio: OFedIQ gets an optimized `(p, s, b)` plan, OFedAvg gets `p = budget`.
    pub budget: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_stem")]
    pub stem: String,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_stem() -> String {
    "metrics".to_string()
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: default_dir(),
            stem: default_stem(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub steps: Option<usize>,
    pub clients: Option<usize>,
    pub method: Option<Variant>,
    pub budget: Option<f64>,
    pub out_dir: Option<PathBuf>,
}

fn missing(what: &str) -> Error {
    Error::Config(format!("missing `{what}`"))
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config; relative CSV paths are resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        if let (Some(p), Some(base)) = (cfg.dataset.path.as_mut(), path.parent()) {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(t) = o.steps {
            self.dataset.steps = t;
        }
        if let Some(k) = o.clients {
            self.dataset.clients = k;
        }
        if let Some(v) = o.method {
            self.method.variant = v;
        }
        if let Some(g) = o.budget {
            self.method.budget = Some(g);
        }
        if let Some(d) = &o.out_dir {
            self.output.dir = d.clone();
        }
    }

    pub fn dataset_spec(&self) -> Result<DatasetSpec> {
        let d = &self.dataset;
        let (clients, steps) = (d.clients, d.steps);
        match d.source {
            Source::Csv => Ok(DatasetSpec::Csv {
                csv: CsvSpec {
                    path: d.path.clone().ok_or_else(|| missing("dataset.path"))?,
                    label_column: d
                        .label_column
                        .clone()
                        .ok_or_else(|| missing("dataset.label_column"))?,
                    feature_columns: d.feature_columns.clone(),
                    task: match d.classes {
                        Some(classes) => Task::Classification { classes },
                        None => Task::Regression,
                    },
                    standardize: d.standardize.unwrap_or(true),
                },
                clients,
                steps,
            }),
            Source::Synthetic => {
                let dim = d.dim.ok_or_else(|| missing("dataset.dim"))?;
                let heterogeneity = d.heterogeneity.unwrap_or(0.0);
                let generator = match d.generator.ok_or_else(|| missing("dataset.generator"))? {
                    GeneratorKind::LinearRegression => Generator::LinearRegression {
                        dim,
                        heterogeneity,
                        mirrored: d.mirrored.unwrap_or(false),
                    },
                    GeneratorKind::GaussianClasses => Generator::GaussianClasses {
                        dim,
                        classes: d.classes.ok_or_else(|| missing("dataset.classes"))?,
                        separation: d.separation.unwrap_or(2.0),
                        noise: d.noise.unwrap_or(1.0),
                        heterogeneity,
                    },
                };
                Ok(DatasetSpec::Synthetic {
                    generator,
                    clients,
                    steps,
                })
            }
        }
    }

    fn input_dim(&self, dataset: &DatasetSpec) -> Result<usize> {
        match dataset {
            DatasetSpec::Synthetic { generator, .. } => Ok(match generator {
                Generator::LinearRegression { dim, .. }
                | Generator::GaussianClasses { dim, .. } => *dim,
            }),
            DatasetSpec::Csv { csv, .. } => match &csv.feature_columns {
                Some(cols) => Ok(cols.len()),
                None => {
                    let mut rdr = csv::Reader::from_path(&csv.path).map_err(|e| {
                        Error::Data(format!("cannot open {}: {e}", csv.path.display()))
                    })?;
                    Ok(rdr.headers()?.len().saturating_sub(1))
                }
            },
        }
    }

    pub fn model_spec(&self, dataset: &DatasetSpec) -> Result<ModelSpec> {
        let m = &self.model;
        let n = self.input_dim(dataset)?;
        let data_classes = match dataset.task() {
            Task::Classification { classes } => Some(classes),
            Task::Regression => None,
        };
        let classes = m.classes.or(data_classes);
        let family = match m.family {
            FamilyKind::Linear => Family::Linear,
            FamilyKind::Softmax => Family::Softmax {
                classes: classes.ok_or_else(|| missing("model.classes"))?,
            },
            FamilyKind::Mlp => Family::Mlp {
                hidden: m.hidden.ok_or_else(|| missing("model.hidden"))?,
                classes,
            },
        };
        let spec = ModelSpec {
            family,
            input_dim: n,
            bias: m.bias.unwrap_or(true),
            ridge: m.ridge,
        };
        spec.validate()?;
        if spec.classes() != data_classes {
            return Err(Error::Config(format!(
                "model classes {:?} do not match the dataset's {:?}",
                spec.classes(),
                data_classes
            )));
        }
        Ok(spec)
    }

    pub fn method_spec(&self, dim: usize, clients: usize) -> Result<MethodSpec> {
        let m = &self.method;
        let participation = match (&m.p, &m.participation) {
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "set either method.p or method.participation".into(),
                ))
            }
            (Some(p), None) => Some(Participation::Uniform(*p)),
            (None, Some(ps)) => Some(Participation::PerClient(ps.clone())),
            (None, None) => None,
        };
        let wants_quant = m
            .quantize
            .unwrap_or(m.levels.is_some() || m.blocks.is_some());
        let quantizer = if wants_quant {
            let s = m.levels.ok_or_else(|| {
                Error::Config("quantization enabled but method.levels (s) is missing".into())
            })?;
            let b = m.blocks.ok_or_else(|| {
                Error::Config("quantization enabled but method.blocks (b) is missing".into())
            })?;
            Some(QuantizerSpec::new(s, b, dim)?)
        } else {
            None
        };
        let spec = match (m.variant, m.budget) {
            (Variant::OFedIq, Some(gamma)) => {
                if participation.is_some()
                    || m.levels.is_some()
                    || m.blocks.is_some()
                    || m.quantize.is_some()
                {
                    return Err(Error::Config(
                        "method.budget chooses p, s and b; do not also set them".into(),
                    ));
                }
                if m.period.is_some_and(|l| l != 1) {
                    return Err(Error::Config("budget plans use period 1".into()));
                }
                optimize_budget(gamma, dim, DEFAULT_S_MAX)?.method(m.eta)
            }
            (Variant::OFedAvg, Some(gamma)) => {
                if participation.is_some() {
                    return Err(Error::Config("set either method.budget or method.p".into()));
                }
                MethodSpec {
                    quantizer,
                    period: m.period.unwrap_or(1),
                    ..MethodSpec::ofed_avg(gamma, m.eta)
                }
            }
            (v, Some(_)) => {
                return Err(Error::Config(format!(
                    "method.budget is not supported for {v}"
                )))
            }
            (variant, None) => {
                if variant == Variant::OFedAvg && participation.is_none() {
                    return Err(missing("method.p"));
                }
                let participation = participation.unwrap_or(Participation::Uniform(1.0));
                MethodSpec {
                    variant,
                    period: m.period.unwrap_or(1),
                    participation,
                    quantizer,
                    eta: m.eta,
                }
            }
        };
        spec.validate(clients, dim)?;
        Ok(spec)
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        let dataset = self.dataset_spec()?;
        let model = self.model_spec(&dataset)?;
        let method = self.method_spec(model.dim(), dataset.clients())?;
        Ok(RunConfig {
            dataset,
            model,
            method,
            seed: self.seed,
            init_scale: self.init_scale,
            cadence: self.cadence,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
seed = 4
[dataset]
source = "synthetic"
generator = "linear-regression"
dim = 8
heterogeneity = 1.0
clients = 5
steps = 40
[model]
family = "linear"
[method]
variant = "fedogd"
eta = 0.1
"#;

    fn with_method(method: &str) -> String {
        let head = BASE.split("[method]").next().unwrap();
        format!("{head}[method]\n{method}\n")
    }

    #[test]
    fn minimal_config_resolves() {
        let run = ConfigFile::parse(BASE).unwrap().resolve().unwrap();
        assert_eq!(run.seed, 4);
        assert_eq!(run.model.dim(), 9);
        assert_eq!(run.method, MethodSpec::fed_ogd(0.1));
        assert_eq!(run.dataset.clients(), 5);
    }

    #[test]
    fn unknown_keys_are_errors() {
        let typo = BASE.replace("eta = 0.1", "eta = 0.1\netaa = 2");
        assert!(ConfigFile::parse(&typo).is_err());
        let top = format!("sede = 1\n{BASE}");
        assert!(ConfigFile::parse(&top).is_err());
        let ds = BASE.replace("dim = 8", "dim = 8\ndimm = 3");
        assert!(ConfigFile::parse(&ds).is_err());
    }

    #[test]
    fn quantizer_needs_levels_and_blocks() {
        let cfg = ConfigFile::parse(&with_method(
            "variant = \"ofediq\"\neta = 0.1\np = 0.5\nquantize = true\nlevels = 3",
        ))
        .unwrap();
        let err = cfg.resolve().unwrap_err();
        assert!(err.to_string().contains("blocks"), "{err}");
        let ok = ConfigFile::parse(&with_method(
            "variant = \"ofediq\"\neta = 0.1\np = 0.5\nlevels = 3\nblocks = 2",
        ))
        .unwrap();
        let m = ok.resolve().unwrap().method;
        assert_eq!(m.quantizer, Some(QuantizerSpec::new(3, 2, 9).unwrap()));
    }

    #[test]
    fn budget_plans_ofediq_and_ofedavg() {
        let cfg = ConfigFile::parse(&with_method(
            "variant = \"ofediq\"\neta = 0.1\nbudget = 0.1",
        ))
        .unwrap();
        let m = cfg.resolve().unwrap().method;
        let plan = optimize_budget(0.1, 9, DEFAULT_S_MAX).unwrap();
        assert_eq!(m, plan.method(0.1));
        let avg = ConfigFile::parse(&with_method(
            "variant = \"ofedavg\"\neta = 0.1\nbudget = 0.1",
        ))
        .unwrap();
        assert_eq!(
            avg.resolve().unwrap().method,
            MethodSpec::ofed_avg(0.1, 0.1)
        );
        let clash = ConfigFile::parse(&with_method(
            "variant = \"ofediq\"\neta = 0.1\nbudget = 0.1\nlevels = 3",
        ))
        .unwrap();
        assert!(clash.resolve().is_err());
        let omd = ConfigFile::parse(&with_method(
            "variant = \"fedomd\"\neta = 0.1\nbudget = 0.1",
        ))
        .unwrap();
        assert!(omd.resolve().is_err());
    }

    #[test]
    fn overrides_take_precedence() {
        let mut cfg = ConfigFile::parse(BASE).unwrap();
        cfg.apply(&Overrides {
            seed: Some(11),
            steps: Some(7),
            clients: Some(2),
            method: Some(Variant::OFedIq),
            budget: Some(0.05),
            out_dir: Some(PathBuf::from("x")),
        });
        let run = cfg.resolve().unwrap();
        assert_eq!(run.seed, 11);
        assert_eq!(run.dataset.steps(), 7);
        assert_eq!(run.dataset.clients(), 2);
        assert_eq!(run.method.variant, Variant::OFedIq);
        assert_eq!(cfg.output.dir, PathBuf::from("x"));
    }

    #[test]
    fn variant_constraints_surface() {
        let bad =
            ConfigFile::parse(&with_method("variant = \"fedogd\"\neta = 0.1\nperiod = 3")).unwrap();
        assert!(bad.resolve().is_err());
        let no_p = ConfigFile::parse(&with_method("variant = \"ofedavg\"\neta = 0.1")).unwrap();
        assert!(no_p.resolve().is_err());
        let per = ConfigFile::parse(&with_method("variant = \"ofediq\"\neta = 0.1\nparticipation = [0.5, 1.0, 0.2, 0.3, 0.9]\nperiod = 2")).unwrap();
        assert!(per.resolve().is_ok());
    }

    #[test]
    fn classifier_config() {
        let text = r#"
[dataset]
source = "synthetic"
generator = "gaussian-classes"
dim = 4
classes = 3
clients = 2
steps = 5
[model]
family = "softmax"
[method]
variant = "fedogd"
eta = 0.1
"#;
        let run = ConfigFile::parse(text).unwrap().resolve().unwrap();
        assert_eq!(run.model, ModelSpec::softmax(4, 3));
        let wrong = text.replace("family = \"softmax\"", "family = \"linear\"");
        assert!(ConfigFile::parse(&wrong).unwrap().resolve().is_err());
    }

    #[test]
    fn csv_dimension_from_header() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("d.csv"), "a,b,c,y\n1,2,3,4\n").unwrap();
        let text = r#"
[dataset]
source = "csv"
path = "d.csv"
label_column = "y"
clients = 1
steps = 3
[model]
family = "linear"
[method]
variant = "fedogd"
eta = 0.1
"#;
        let path = dir.path().join("run.toml");
        std::fs::write(&path, text).unwrap();
        let run = ConfigFile::load(&path).unwrap().resolve().unwrap();
        assert_eq!(run.model.input_dim, 3);
        let data = run.dataset.materialize(0).unwrap();
        assert_eq!(data.streams.steps(), 3);
    }
}
