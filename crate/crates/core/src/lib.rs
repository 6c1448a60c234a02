//! Online federated learning: local learners on streaming data, periodic and
//! partial-participation aggregation, a stochastic (s, b) quantizer, regret
//! bound calculators and a communication-budget planner.

pub mod analysis;
pub mod config;
pub mod data;
pub mod error;
pub mod model;
pub mod protocol;
pub mod quantcheck;
pub mod quantizer;
pub mod rng;
pub mod sim;
pub mod types;

pub use analysis::{optimize_budget, BudgetPlan, HindsightSolution, Trajectory};
pub use config::{ConfigFile, Overrides};
pub use data::{Dataset, DatasetSpec, FederatedStreams, Generator};
pub use error::{Error, Result};
pub use model::{Family, ModelSpec, Prediction};
pub use protocol::{ClientState, Message, MethodSpec, Participation, ServerState, Variant};
pub use quantizer::{QuantizedMessage, QuantizerSpec};
pub use rng::{derive_stream, Purpose, RngStream};
pub use sim::{run, run_on, MetricsRecord, RunConfig, RunOptions, RunOutput};
pub use types::{psi, ParameterVector, StreamSample, TimeIndex};
