//! Multi-tenant model-serving runtime for sensory edge workloads.
//!
//! Deployment documents describe models, post-processing functions and their
//! dependencies; the runtime derives shared sensor configurations, builds one
//! shared transformation pipeline per sensor, schedules batched inference
//! adaptively against per-model latency requirements, places executors on
//! heterogeneous processors by projected workload, caches shared feature
//! pipelines, chains post-processing functions event-by-event and serves
//! results over REST. Everything runs on a deterministic virtual clock;
//! `serve` maps it onto the wall clock.

pub mod api;
pub mod chain;
pub mod clock;
pub mod config;
pub mod coordinator;
pub mod graph;
pub mod harness;
pub mod manifest;
pub mod output;
pub mod runtime;
pub mod scheduler;
pub mod sensor;
pub mod server;
pub mod store;
pub mod transform;

pub use clock::VirtualTime;
pub use config::RuntimeConfig;
pub use manifest::{
    parse_bundle, parse_manifest, validate_bundle, DeploymentBundle, InputSpec, ModelManifest,
    ProcessorKind, SourceRef,
};
pub use output::OutputValue;
pub use runtime::{DeploymentReport, Runtime};
pub use sensor::{Sample, SampleKey};
