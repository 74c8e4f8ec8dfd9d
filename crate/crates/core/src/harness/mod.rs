//! Workload generation, the plaintext oracle, scaling experiments and
//! view-uniformity reports.

pub mod deployment;
pub mod experiment;
pub mod geolife;
pub mod instance;
pub mod oracle;
pub mod uniformity;
pub mod workload;

pub use deployment::{Deployment, DeploymentConfig, IngestReport};
pub use experiment::{run_experiment, Axis, ExperimentOptions, ExperimentRecord};
pub use instance::{BuildMetrics, InsertTally, Instance};
pub use oracle::{oracle_trace, StayTable};
pub use uniformity::{uniformity_report, UniformityRow, ValueStream};
pub use workload::{generate_workload, ChainSpec, Geography, UserDay, Workload, WorkloadSpec};
