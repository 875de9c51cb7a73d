//! Federated learning simulator for long-tailed class distributions.
//!
//! The crate covers the whole pipeline: loading or synthesizing datasets,
//! shaping them into long-tailed profiles, partitioning them across clients
//! (IID, Dirichlet, rotated long-tail), training with FedAvg, FedProx,
//! FedPer and CReFF on a small dense engine, and running configured
//! experiments and sweeps deterministically.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod fl;
pub mod metrics;
pub mod nn;
pub mod orchestrator;
pub mod partition;
pub mod rng;
pub mod shaping;
pub mod stats;

pub use dataset::{class_counts, ClientShard, Dataset, Sample, SyntheticSpec};
pub use error::{Error, Result};
pub use fl::{AlgoConfig, Algorithm, ClientUpdate, CreffConfig};
pub use metrics::{ClassGroup, GroupThresholds, Metrics};
pub use nn::{Arch, ModelConfig, ModelParams, TrainConfig};
pub use partition::{Partition, PartitionKind, PartitionReport, PartitionSpec};
pub use shaping::LtProfile;
pub use stats::{DistributionStats, ImbalanceFactor};
