//! The composition root: a deterministic discrete-event runtime wiring the
//! data coordinator, adaptive scheduler, model server, function chain and
//! data store together.
//!
//! Events are processed in (virtual time, kind, insertion) order, so a run is
//! a pure function of its configuration and seed. One batch per model is in
//! flight at a time: dispatch happens on sample arrival and on completion,
//! which realises one logical scheduling loop per model.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use serde::Serialize;
use thiserror::Error;

use crate::chain::{ChainEngine, ChainError};
use crate::clock::{ns_to_ms, period_ns, VirtualTime};
use crate::config::{ConfigError, RuntimeConfig};
use crate::coordinator::{CoordinatorError, DataCoordinator, PipelineMode};
use crate::manifest::{
    validate_bundle, DeployedIds, DeploymentBundle, FunctionSpec, ModelId, ModelManifest,
    ProcessorKind, SensorId, SourceRef, ValidationReport,
};
use crate::output::OutputValue;
use crate::scheduler::{Batch, Scheduler, SchedulerError};
use crate::sensor::{Payload, SampleKey};
use crate::server::{ModelLoad, ModelServer, ServerError, WorkloadSnapshot};
use crate::store::{DataStore, StoreError, StoredRecord};

#[derive(Debug, Error)]
pub enum DeployError {
    #[error("bundle validation failed")]
    ValidationFailed(ValidationReport),
    #[error("no compatible processor for model `{0}`")]
    PlacementFailed(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Coordinator(#[from] CoordinatorError),
    #[error(transparent)]
    Chain(#[from] ChainError),
}

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Server(#[from] ServerError),
    #[error(transparent)]
    Coordinator(#[from] CoordinatorError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Scheduling policy for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    /// Batch 1, declared sampling rates, unshared pipelines, no caching.
    Vanilla,
    /// Profile-derived fixed batch sizes and matching rates, chosen ignoring
    /// contention; unshared pipelines, no caching.
    StaticBatch,
    /// Adaptive batch sizing with throughput feedback; shared pipelines.
    Adaptive,
    /// Batch pinned, feedback active; used for calibration runs.
    Fixed(u32),
}

impl Policy {
    pub fn label(&self) -> String {
        match self {
            Policy::Vanilla => "vanilla".to_string(),
            Policy::StaticBatch => "static".to_string(),
            Policy::Adaptive => "adaptive".to_string(),
            Policy::Fixed(b) => format!("fixed-{b}"),
        }
    }

    fn pipeline_mode(&self) -> PipelineMode {
        match self {
            Policy::Vanilla | Policy::StaticBatch => PipelineMode::Individual,
            _ => PipelineMode::Shared,
        }
    }

    fn caching_default(&self) -> bool {
        !matches!(self, Policy::Vanilla | Policy::StaticBatch)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum EventKind {
    BatchComplete {
        model: ModelId,
        batch: Batch,
        compute_ns: u64,
    },
    BatchStart {
        model: ModelId,
        batch: Batch,
    },
    PumpSerialized {
        kind: ProcessorKind,
    },
    SensorTick {
        sensor: SensorId,
    },
}

impl EventKind {
    fn class(&self) -> u8 {
        match self {
            EventKind::BatchComplete { .. } => 0,
            EventKind::BatchStart { .. } => 1,
            EventKind::PumpSerialized { .. } => 2,
            EventKind::SensorTick { .. } => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Event {
    time: VirtualTime,
    class: u8,
    seq: u64,
    kind: EventKind,
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.time, self.class, self.seq).cmp(&(other.time, other.class, other.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Batch {
    fn eq(&self, other: &Self) -> bool {
        self.model_id == other.model_id && self.created_at == other.created_at
    }
}

impl Eq for Batch {}

#[derive(Debug, Default, Clone, Serialize)]
pub struct ModelMetrics {
    pub completed_samples: u64,
    pub hits: u64,
    pub late: u64,
    pub latency_sum_ms: f64,
    /// Queued samples dropped when the model was retired.
    pub dropped_on_retire: u64,
    /// (completion s, per-sample latency ms, batch size) per completed
    /// sample, in completion order.
    pub latency_trace: Vec<(f64, f64, u32)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PlacementEntry {
    pub model_id: ModelId,
    pub processor: ProcessorKind,
}

#[derive(Debug, Clone, Serialize)]
pub struct DeploymentReport {
    pub placements: Vec<PlacementEntry>,
    pub functions: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelInfo {
    pub model_id: ModelId,
    pub task: String,
    pub processor: ProcessorKind,
    pub batch_size: u32,
    pub latency_requirement_ms: f64,
    pub recent_latency_ms: BTreeMap<u32, f64>,
    pub enqueued: u64,
    pub dispatched: u64,
    pub discarded: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FunctionInfo {
    pub function_id: String,
    pub inputs: Vec<String>,
    pub output_type: String,
}

struct PendingSerialized {
    model: ModelId,
    batch: Batch,
    ready_at: VirtualTime,
}

pub struct Runtime {
    pub config: RuntimeConfig,
    policy: Policy,
    now: VirtualTime,
    events: BinaryHeap<Reverse<Event>>,
    event_seq: u64,
    coordinator: DataCoordinator,
    scheduler: Scheduler,
    server: ModelServer,
    chain: ChainEngine,
    store: DataStore,
    manifests: BTreeMap<ModelId, ModelManifest>,
    placements: BTreeMap<ModelId, ProcessorKind>,
    in_flight: BTreeMap<ModelId, bool>,
    serialized_pending: BTreeMap<ProcessorKind, VecDeque<PendingSerialized>>,
    metrics: BTreeMap<ModelId, ModelMetrics>,
    subscribers: BTreeMap<String, Vec<tokio::sync::mpsc::Sender<StoredRecord>>>,
    started: bool,
    seed: u64,
}

impl Runtime {
    pub fn new(config: RuntimeConfig, policy: Policy, seed: u64) -> Runtime {
        let sensors = config.sensors.iter().map(|s| s.capabilities()).collect();
        let coordinator = DataCoordinator::with_oversample(
            sensors,
            seed,
            policy.pipeline_mode(),
            config.sensor_oversample,
        );
        let scheduler = Scheduler::new(config.scheduler.clone());
        let mut server = ModelServer::new(
            config.processors.clone(),
            config.placement.tie_break.clone(),
            config.placement.horizon_s,
            config.feature_cache_capacity,
        );
        server.features().enabled = policy.caching_default();
        let store = match &config.store.data_dir {
            Some(dir) => DataStore::open(dir.into(), config.store.retention_per_source)
                .unwrap_or_else(|_| DataStore::new(config.store.retention_per_source)),
            None => DataStore::new(config.store.retention_per_source),
        };
        Runtime {
            config,
            policy,
            now: VirtualTime::ZERO,
            events: BinaryHeap::new(),
            event_seq: 0,
            coordinator,
            scheduler,
            server,
            chain: ChainEngine::new(),
            store,
            manifests: BTreeMap::new(),
            placements: BTreeMap::new(),
            in_flight: BTreeMap::new(),
            serialized_pending: BTreeMap::new(),
            metrics: BTreeMap::new(),
            subscribers: BTreeMap::new(),
            started: false,
            seed,
        }
    }

    pub fn now(&self) -> VirtualTime {
        self.now
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    pub fn set_feature_caching(&mut self, enabled: bool) {
        self.server.features().enabled = enabled;
    }

    fn schedule(&mut self, time: VirtualTime, kind: EventKind) {
        let event = Event {
            time,
            class: kind.class(),
            seq: self.event_seq,
            kind,
        };
        self.event_seq += 1;
        self.events.push(Reverse(event));
    }

    // -- Deployment ---------------------------------------------------------

    fn deployed_ids(&self) -> DeployedIds {
        DeployedIds {
            models: self.manifests.keys().cloned().collect(),
            functions: self.chain.function_ids().into_iter().collect(),
            sensors: self.coordinator.sensor_ids().into_iter().collect(),
        }
    }

    /// Validate, place and commit a bundle atomically: on any failure no
    /// partial deployment remains.
    pub fn deploy(&mut self, bundle: &DeploymentBundle) -> Result<DeploymentReport, DeployError> {
        let report = validate_bundle(bundle, &self.deployed_ids());
        if !report.ok() {
            return Err(DeployError::ValidationFailed(report));
        }

        // Plan: placements over the projected workload, profiles resolved,
        // codelets constructible. Nothing is mutated yet.
        let mut snapshot = self.workload_snapshot();
        let mut plan = Vec::new();
        for manifest in &bundle.manifests {
            let profile = self.config.profile(&manifest.framework_tag)?;
            let processor = self
                .server
                .place_model(manifest, &snapshot)
                .map_err(|_| DeployError::PlacementFailed(manifest.model_id.clone()))?;
            let static_batch = crate::harness::profile_static(
                &profile,
                manifest.latency_requirement_ms as f64,
                self.config.scheduler.max_batch,
            );
            let (initial_batch, initial_rate) = match self.policy {
                Policy::Vanilla => (1, None),
                Policy::StaticBatch => {
                    // Profile-derived size, kept fillable: a batch the sensor
                    // cannot supply inside the latency budget never fires.
                    // Fill time uses the quantized tick period.
                    let ceiling = self
                        .coordinator
                        .supply_ceiling(&manifest.input)
                        .unwrap_or(f64::MAX);
                    let req_ns = manifest.latency_requirement_ms * 1_000_000;
                    let mut b = static_batch;
                    while b > 1 {
                        let rate = (b as f64 / (profile.latency_ms(b) / 1000.0))
                            .min(manifest.max_rate_hz)
                            .min(ceiling);
                        if (b - 1) as u64 * crate::clock::period_ns(rate) <= req_ns {
                            break;
                        }
                        b -= 1;
                    }
                    let rate = (b as f64 / (profile.latency_ms(b) / 1000.0))
                        .min(manifest.max_rate_hz);
                    (b, Some(rate))
                }
                Policy::Adaptive => (1, None),
                Policy::Fixed(b) => (b, None),
            };
            snapshot.insert(
                manifest.model_id.clone(),
                ModelLoad {
                    rate_hz: initial_rate.unwrap_or(manifest.input.rate_hz()),
                    batch_size: initial_batch,
                    batch_latency_ms: profile.latency_ms(initial_batch),
                },
            );
            plan.push((manifest.clone(), processor, profile, initial_batch, initial_rate));
        }
        for spec in &bundle.functions {
            let entry = &bundle.codelet[&spec.function_id];
            crate::chain::Codelet::from_entry(entry).map_err(DeployError::Chain)?;
        }

        // Commit. The coordinator rebuild is itself atomic and is the only
        // fallible step left.
        self.coordinator.bind_models(&bundle.manifests)?;
        let mut placements = Vec::new();
        for (manifest, processor, profile, initial_batch, initial_rate) in plan {
            self.server
                .create_executor(&manifest, processor, profile)
                .expect("planned placement is compatible");
            self.scheduler
                .register_model(&manifest.model_id, manifest.latency_requirement_ms);
            if initial_batch != 1 {
                self.scheduler
                    .set_batch_size(&manifest.model_id, initial_batch)
                    .unwrap();
            }
            if let Some(rate) = initial_rate {
                self.coordinator
                    .set_model_rate(&manifest.model_id, rate)
                    .expect("planned rate within bounds");
            }
            self.store.register_source(&manifest.model_id);
            self.chain
                .register_source(SourceRef::Model(manifest.model_id.clone()));
            self.in_flight.insert(manifest.model_id.clone(), false);
            self.metrics
                .insert(manifest.model_id.clone(), ModelMetrics::default());
            placements.push(PlacementEntry {
                model_id: manifest.model_id.clone(),
                processor,
            });
            self.placements.insert(manifest.model_id.clone(), processor);
            self.manifests.insert(manifest.model_id.clone(), manifest);
        }
        for sensor in self.coordinator.sensor_ids() {
            self.chain.register_source(SourceRef::Sensor(sensor));
        }
        let mut functions = Vec::new();
        for spec in &bundle.functions {
            let entry = &bundle.codelet[&spec.function_id];
            let ttl = self.function_ttl_ns(spec, bundle);
            self.chain.register_function(spec.clone(), entry, ttl)?;
            self.store.register_source(&spec.function_id);
            functions.push(spec.function_id.clone());
        }
        Ok(DeploymentReport {
            placements,
            functions,
        })
    }

    /// Pending-input TTL: twice the slowest contributing model's latency
    /// requirement.
    fn function_ttl_ns(&self, spec: &FunctionSpec, bundle: &DeploymentBundle) -> u64 {
        fn walk(
            spec: &FunctionSpec,
            bundle: &DeploymentBundle,
            manifests: &BTreeMap<ModelId, ModelManifest>,
            slowest: &mut u64,
        ) {
            for input in &spec.inputs {
                match input {
                    SourceRef::Model(id) => {
                        let req = manifests
                            .get(id)
                            .map(|m| m.latency_requirement_ms)
                            .or_else(|| {
                                bundle
                                    .manifests
                                    .iter()
                                    .find(|m| &m.model_id == id)
                                    .map(|m| m.latency_requirement_ms)
                            })
                            .unwrap_or(0);
                        *slowest = (*slowest).max(req);
                    }
                    SourceRef::Function(id) => {
                        if let Some(dep) = bundle.functions.iter().find(|f| &f.function_id == id) {
                            walk(dep, bundle, manifests, slowest);
                        }
                    }
                    SourceRef::Sensor(_) => {}
                }
            }
        }
        let mut slowest = 0;
        walk(spec, bundle, &self.manifests, &mut slowest);
        if slowest == 0 {
            slowest = 1000;
        }
        let mult = self.config.chain_ttl_multiplier;
        ((slowest as f64) * mult * 1_000_000.0) as u64
    }

    /// Undeploy a model: executor retired, queue drained and counted, rate
    /// gate and chain source removed.
    pub fn retire_model(&mut self, model: &str) -> Result<(), RuntimeError> {
        if !self.manifests.contains_key(model) {
            return Err(RuntimeError::Server(ServerError::UnknownModel(
                model.to_string(),
            )));
        }
        self.server.retire_executor(model)?;
        let dropped = self.scheduler.remove_model(model).unwrap_or(0);
        self.metrics.get_mut(model).unwrap().dropped_on_retire = dropped;
        self.coordinator.unbind_model(model)?;
        self.chain.remove_source(model);
        self.manifests.remove(model);
        self.placements.remove(model);
        self.in_flight.remove(model);
        for pending in self.serialized_pending.values_mut() {
            pending.retain(|p| p.model != model);
        }
        Ok(())
    }

    fn workload_snapshot(&self) -> WorkloadSnapshot {
        let mut snapshot = BTreeMap::new();
        for model in self.scheduler.model_ids() {
            let b = self.scheduler.batch_size(&model).unwrap_or(1);
            let latency = self
                .scheduler
                .compute_mean(&model, b)
                .or_else(|| {
                    self.server
                        .executor(&model)
                        .map(|h| h.profile.latency_ms(b))
                })
                .unwrap_or(1.0);
            let rate = self
                .coordinator
                .model_rate(&model)
                .or_else(|| self.manifests.get(&model).map(|m| m.input.rate_hz()))
                .unwrap_or(1.0);
            snapshot.insert(
                model,
                ModelLoad {
                    rate_hz: rate,
                    batch_size: b,
                    batch_latency_ms: latency,
                },
            );
        }
        snapshot
    }

    // -- Event loop ---------------------------------------------------------

    /// Schedule the first tick of every sensor. Idempotent.
    pub fn start_sensors(&mut self) {
        if self.started {
            return;
        }
        self.started = true;
        for sensor in self.coordinator.sensor_ids() {
            let rate = self.coordinator.current_rate(&sensor).unwrap_or(1.0);
            let at = self.now + period_ns(rate);
            self.schedule(at, EventKind::SensorTick { sensor });
        }
    }

    pub fn next_event_time(&self) -> Option<VirtualTime> {
        self.events.peek().map(|Reverse(e)| e.time)
    }

    /// Process events up to and including `until`; the clock lands on
    /// `until`.
    pub fn run_until(&mut self, until: VirtualTime) -> Result<(), RuntimeError> {
        while let Some(Reverse(peek)) = self.events.peek() {
            if peek.time > until {
                break;
            }
            let Reverse(event) = self.events.pop().unwrap();
            self.now = event.time;
            self.handle(event)?;
        }
        self.now = until;
        Ok(())
    }

    /// Process exactly one event, if any; returns its time.
    pub fn step(&mut self) -> Result<Option<VirtualTime>, RuntimeError> {
        match self.events.pop() {
            Some(Reverse(event)) => {
                self.now = event.time;
                let at = event.time;
                self.handle(event)?;
                Ok(Some(at))
            }
            None => Ok(None),
        }
    }

    fn handle(&mut self, event: Event) -> Result<(), RuntimeError> {
        match event.kind {
            EventKind::SensorTick { sensor } => self.on_sensor_tick(sensor),
            EventKind::BatchStart { model, batch } => self.on_batch_start(model, batch),
            EventKind::BatchComplete {
                model,
                batch,
                compute_ns,
            } => self.on_batch_complete(model, batch, compute_ns),
            EventKind::PumpSerialized { kind } => {
                self.pump_serialized(kind);
                Ok(())
            }
        }
    }

    fn on_sensor_tick(&mut self, sensor: SensorId) -> Result<(), RuntimeError> {
        let now = self.now;
        let (root, deliveries, _trace) = self.coordinator.tick(&sensor, now)?;

        // Functions that declare the sensor as an input receive the raw frame.
        let sensor_src = SourceRef::Sensor(sensor.clone());
        if self.chain.function_ids().iter().any(|f| {
            self.chain
                .function_spec(f)
                .is_some_and(|s| s.inputs.contains(&sensor_src))
        }) {
            if let Payload::Frame(f) = &*root.payload {
                let value = OutputValue::Frame {
                    width: f.width,
                    height: f.height,
                    pixels: f.pixels.clone(),
                };
                let fired = self
                    .chain
                    .on_output(&sensor_src, &root.key, &value, now)
                    .unwrap_or_default();
                self.sink_fired(fired)?;
            }
        }

        let models: Vec<ModelId> = deliveries.keys().cloned().collect();
        for (model, sample) in deliveries {
            self.scheduler.enqueue(&model, sample, now)?;
        }
        for model in models {
            self.try_dispatch(&model)?;
        }

        // Next tick at the sensor's current rate.
        if let Some(rate) = self.coordinator.current_rate(&sensor) {
            let at = now + period_ns(rate);
            self.schedule(at, EventKind::SensorTick { sensor });
        }
        Ok(())
    }

    fn try_dispatch(&mut self, model: &str) -> Result<(), RuntimeError> {
        if !self.scheduler.has_model(model) || *self.in_flight.get(model).unwrap_or(&true) {
            return Ok(());
        }
        let now = self.now;
        let batch = match self.scheduler.dispatch_ready(model, now)? {
            Some(b) => b,
            None => return Ok(()),
        };
        self.in_flight.insert(model.to_string(), true);

        // Featurization happens before execution; the batch starts when its
        // last feature is ready.
        let mut ready_at = now;
        let pipeline = self
            .server
            .executor(model)
            .and_then(|h| h.feature_pipeline_id.clone());
        if let Some(pipeline) = pipeline {
            for sample in &batch.samples {
                let result = self
                    .server
                    .features()
                    .featurize(&pipeline, &sample.key, now)?;
                ready_at = ready_at.max(result.ready_at);
            }
        }

        let kind = self.placements[model];
        let parallel = self
            .server
            .processor_model(kind)
            .map(|p| p.parallel)
            .unwrap_or(true);
        if parallel {
            self.schedule(
                ready_at,
                EventKind::BatchStart {
                    model: model.to_string(),
                    batch,
                },
            );
        } else {
            self.serialized_pending
                .entry(kind)
                .or_default()
                .push_back(PendingSerialized {
                    model: model.to_string(),
                    batch,
                    ready_at,
                });
            if ready_at <= now {
                self.pump_serialized(kind);
            } else {
                self.schedule(ready_at, EventKind::PumpSerialized { kind });
            }
        }
        Ok(())
    }

    fn on_batch_start(&mut self, model: ModelId, batch: Batch) -> Result<(), RuntimeError> {
        if self.server.executor(&model).is_none() {
            return Ok(()); // retired while waiting
        }
        let now = self.now;
        let duration = self
            .server
            .begin_parallel_batch(&model, batch.len(), now)?;
        self.schedule(
            now + duration,
            EventKind::BatchComplete {
                model,
                batch,
                compute_ns: duration,
            },
        );
        Ok(())
    }

    /// Serialized processors run one batch at a time in ring order over the
    /// models with a ready batch.
    fn pump_serialized(&mut self, kind: ProcessorKind) {
        let now = self.now;
        if !self.server.serialized_idle(kind, now) {
            return;
        }
        let pending = match self.serialized_pending.get_mut(&kind) {
            Some(p) if !p.is_empty() => p,
            _ => return,
        };
        let ready: Vec<ModelId> = pending
            .iter()
            .filter(|p| p.ready_at <= now)
            .map(|p| p.model.clone())
            .collect();
        if ready.is_empty() {
            if let Some(next_ready) = pending.iter().map(|p| p.ready_at).min() {
                self.schedule(next_ready, EventKind::PumpSerialized { kind });
            }
            return;
        }
        let chosen = match self.server.round_robin_pick(kind, &ready) {
            Some(m) => m,
            None => return,
        };
        let pos = pending
            .iter()
            .position(|p| p.model == chosen && p.ready_at <= now)
            .expect("chosen model has a ready batch");
        let entry = pending.remove(pos).unwrap();
        let duration = match self
            .server
            .begin_serialized_batch(&entry.model, entry.batch.len(), now)
        {
            Ok(d) => d,
            Err(_) => return, // retired while queued
        };
        self.schedule(
            now + duration,
            EventKind::BatchComplete {
                model: entry.model,
                batch: entry.batch,
                compute_ns: duration,
            },
        );
    }

    fn on_batch_complete(
        &mut self,
        model: ModelId,
        batch: Batch,
        compute_ns: u64,
    ) -> Result<(), RuntimeError> {
        let now = self.now;
        self.server.end_batch(&model);
        if !self.scheduler.has_model(&model) {
            return Ok(()); // retired mid-flight
        }

        // rl(m, b): completion minus the first sample's acquisition. The
        // feedback signal is the residual from the last sample instead.
        let e2e_ms = ns_to_ms(now.saturating_sub(batch.first_acquired_at));
        let b = batch.len();
        self.scheduler.record_latency(&model, b, e2e_ms)?;
        self.scheduler
            .record_compute(&model, b, ns_to_ms(compute_ns))?;
        let last_acquired = batch.samples.last().expect("nonempty batch").acquired_at;
        self.scheduler
            .record_residual(&model, b, ns_to_ms(now.saturating_sub(last_acquired)))?;

        // Per-sample success accounting against the latency requirement.
        let req_ms = self.scheduler.latency_requirement_ms(&model)?;
        let metrics = self.metrics.entry(model.clone()).or_default();
        for sample in &batch.samples {
            let latency_ms = ns_to_ms(now.saturating_sub(sample.acquired_at));
            metrics.completed_samples += 1;
            metrics.latency_sum_ms += latency_ms;
            metrics.latency_trace.push((now.as_secs_f64(), latency_ms, b));
            if latency_ms <= req_ms {
                metrics.hits += 1;
            } else {
                metrics.late += 1;
            }
        }

        // Publish outputs; the chain may fire functions recursively.
        let keys: Vec<SampleKey> = batch.samples.iter().map(|s| s.key.clone()).collect();
        let outputs = self.server.synthesize_outputs(&model, &keys)?;
        for (key, value) in outputs {
            self.publish(&SourceRef::Model(model.clone()), &key, value)?;
        }

        // Policy step: batch adaptation on cadence, then throughput feedback.
        match self.policy {
            Policy::Adaptive => {
                if self.scheduler.adjustment_due(&model)? {
                    self.scheduler.decide_batch_size(&model)?;
                }
                self.feedback_rate(&model)?;
            }
            Policy::Fixed(_) => {
                self.feedback_rate(&model)?;
            }
            Policy::Vanilla | Policy::StaticBatch => {}
        }

        self.in_flight.insert(model.clone(), false);
        let kind = self.placements[&model];
        let parallel = self
            .server
            .processor_model(kind)
            .map(|p| p.parallel)
            .unwrap_or(true);
        if !parallel {
            self.pump_serialized(kind);
        }
        self.try_dispatch(&model)?;
        Ok(())
    }

    fn feedback_rate(&mut self, model: &str) -> Result<(), RuntimeError> {
        let rate = match self.scheduler.estimate_rate(model) {
            Ok(r) => r,
            Err(SchedulerError::NoObservations(_)) => return Ok(()),
            Err(e) => return Err(e.into()),
        };
        let max_rate = self
            .manifests
            .get(model)
            .map(|m| m.max_rate_hz)
            .unwrap_or(f64::MAX);
        let clamped = rate.min(max_rate);
        if clamped > 0.0 {
            self.coordinator.set_model_rate(model, clamped)?;
        }
        Ok(())
    }

    fn publish(
        &mut self,
        source: &SourceRef,
        key: &SampleKey,
        value: OutputValue,
    ) -> Result<(), RuntimeError> {
        let now = self.now;
        let record = self.store.put(source.id(), key.clone(), now, value.clone());
        self.notify_subscribers(source.id(), &record);
        let fired = self
            .chain
            .on_output(source, key, &value, now)
            .unwrap_or_default();
        self.sink_fired(fired)?;
        Ok(())
    }

    fn sink_fired(&mut self, fired: Vec<crate::chain::FiredOutput>) -> Result<(), RuntimeError> {
        let now = self.now;
        for out in fired {
            let record = self
                .store
                .put(&out.function_id, out.sample_key.clone(), now, out.payload);
            self.notify_subscribers(&out.function_id, &record);
        }
        Ok(())
    }

    fn notify_subscribers(&mut self, source: &str, record: &StoredRecord) {
        if let Some(subs) = self.subscribers.get_mut(source) {
            // A slow subscriber is disconnected on overflow rather than
            // blocking the producer.
            subs.retain(|tx| tx.try_send(record.clone()).is_ok());
        }
    }

    // -- Queries ------------------------------------------------------------

    /// Serve a single query from the data store; nothing is recomputed.
    pub fn query_single(&self, source_id: &str) -> Result<StoredRecord, StoreError> {
        self.store.get_latest(source_id).cloned()
    }

    /// Register a stream subscription with a bounded buffer.
    pub fn subscribe(
        &mut self,
        source_id: &str,
        capacity: usize,
    ) -> Result<tokio::sync::mpsc::Receiver<StoredRecord>, StoreError> {
        if !self.store.sources().contains(&source_id.to_string()) {
            return Err(StoreError::UnknownSource(source_id.to_string()));
        }
        let (tx, rx) = tokio::sync::mpsc::channel(capacity.max(1));
        self.subscribers
            .entry(source_id.to_string())
            .or_default()
            .push(tx);
        Ok(rx)
    }

    pub fn list_models(&self) -> Vec<ModelInfo> {
        self.manifests
            .values()
            .map(|m| {
                let counters = self.scheduler.counters(&m.model_id).unwrap_or_default();
                ModelInfo {
                    model_id: m.model_id.clone(),
                    task: m.task.clone(),
                    processor: self.placements[&m.model_id],
                    batch_size: self.scheduler.batch_size(&m.model_id).unwrap_or(1),
                    latency_requirement_ms: m.latency_requirement_ms as f64,
                    recent_latency_ms: self
                        .scheduler
                        .end_to_end_snapshot(&m.model_id)
                        .unwrap_or_default(),
                    enqueued: counters.enqueued,
                    dispatched: counters.dispatched,
                    discarded: counters.discarded,
                }
            })
            .collect()
    }

    pub fn list_functions(&self) -> Vec<FunctionInfo> {
        self.chain
            .function_ids()
            .into_iter()
            .filter_map(|id| {
                self.chain.function_spec(&id).map(|spec| FunctionInfo {
                    function_id: id.clone(),
                    inputs: spec.inputs.iter().map(|r| r.to_string()).collect(),
                    output_type: spec.output_type.clone(),
                })
            })
            .collect()
    }

    // -- Introspection for the harness and tests ----------------------------

    pub fn scheduler(&self) -> &Scheduler {
        &self.scheduler
    }

    pub fn server(&self) -> &ModelServer {
        &self.server
    }

    pub fn server_mut(&mut self) -> &mut ModelServer {
        &mut self.server
    }

    pub fn coordinator(&self) -> &DataCoordinator {
        &self.coordinator
    }

    pub fn store(&self) -> &DataStore {
        &self.store
    }

    pub fn metrics(&self, model: &str) -> Option<&ModelMetrics> {
        self.metrics.get(model)
    }

    pub fn model_ids(&self) -> Vec<ModelId> {
        self.manifests.keys().cloned().collect()
    }

    pub fn manifest(&self, model: &str) -> Option<&ModelManifest> {
        self.manifests.get(model)
    }

    pub fn placement(&self, model: &str) -> Option<ProcessorKind> {
        self.placements.get(model).copied()
    }
}
