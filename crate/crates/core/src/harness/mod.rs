//! Configuration, training drivers, metrics files and the verification
//! battery. Every run is a pure function of its config and seed.

pub mod config;
pub mod figure1;
pub mod metrics;
pub mod toy_lm;
pub mod verify;
pub mod weights;

pub use config::{Figure1Params, LmParams, OptimizerKind, OptimizerSpec, RunConfig, Task, VerifyParams, CONFIG_VERSION};
pub use figure1::{run_figure1, Figure1Outcome};
pub use metrics::{read_metrics, MetricsRecord, MetricsWriter};
pub use toy_lm::{run_retrofit, run_toy_lm, LmOutcome, RetrofitOutcome};
pub use verify::{run_verify, Check, Suite, SuiteReport, VerifyReport};
pub use weights::{dump_weights, weight_stats, ColumnStats, WEIGHTS_HEADER};
