//! The model server: executor lifecycle, system-aware placement over a
//! k-second workload projection, heterogeneous processor semantics and the
//! featurization coordinator with pipeline-id feature caching.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{ms_to_ns, VirtualTime};
use crate::manifest::{ModelId, ModelManifest, ProcessorKind};
use crate::output::{synth_detections, synth_features, synth_label, OutputValue};
use crate::sensor::SampleKey;

#[derive(Debug, Error, PartialEq)]
pub enum ServerError {
    #[error("no processor in the system is compatible with model `{0}`")]
    NoCompatibleProcessor(String),
    #[error("processor {kind} is not among the variants of model `{model}`")]
    IncompatibleProcessor { model: String, kind: ProcessorKind },
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("unknown feature pipeline `{0}`")]
    UnknownPipeline(String),
    #[error("executor for model `{0}` is stopped")]
    ExecutorStopped(String),
}

/// Fixed semantics of one processor on this node.
#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct ProcessorModel {
    pub kind: ProcessorKind,
    /// Serialized processors run one batch at a time, round-robin.
    pub parallel: bool,
    /// Latency multiplier 1 + c*(n-1) for n concurrently active executors.
    #[serde(default)]
    pub contention_coeff: f64,
    /// Serialized processors: cost of loading a model that is not the one
    /// that ran last.
    #[serde(default)]
    pub swap_cost_ms: f64,
}

impl ProcessorModel {
    pub fn parallel(kind: ProcessorKind, contention_coeff: f64) -> ProcessorModel {
        ProcessorModel {
            kind,
            parallel: true,
            contention_coeff,
            swap_cost_ms: 0.0,
        }
    }

    pub fn serialized(kind: ProcessorKind, swap_cost_ms: f64) -> ProcessorModel {
        ProcessorModel {
            kind,
            parallel: false,
            contention_coeff: 0.0,
            swap_cost_ms,
        }
    }
}

/// What a synthetic executor emits per sample.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputKind {
    Detection,
    Classification,
}

/// Synthetic latency model and behavior backing one executor, selected by the
/// manifest's framework tag.
#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct ExecutorProfile {
    /// Fixed per-batch overhead in milliseconds.
    pub alpha_ms: f64,
    /// Per-sample cost in milliseconds.
    pub beta_ms: f64,
    /// Featurization cost per sample, when the model names a pipeline.
    #[serde(default)]
    pub gamma_ms: f64,
    pub output: OutputKind,
    #[serde(default = "default_vocab")]
    pub labels: Vec<String>,
}

fn default_vocab() -> Vec<String> {
    vec!["speech".to_string(), "music".to_string(), "silence".to_string()]
}

impl ExecutorProfile {
    /// Uncontended batch latency in milliseconds.
    pub fn latency_ms(&self, batch: u32) -> f64 {
        self.alpha_ms + self.beta_ms * batch as f64
    }
}

/// An isolated model runner bound to one processor.
#[derive(Debug, Clone)]
pub struct ExecutorHandle {
    pub model_id: ModelId,
    pub processor: ProcessorKind,
    pub profile: ExecutorProfile,
    pub feature_pipeline_id: Option<String>,
    pub invocations: u64,
    pub stopped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BusyInterval {
    pub start: VirtualTime,
    pub end: VirtualTime,
    #[serde(skip)]
    pub paid_swap: bool,
}

#[derive(Debug)]
struct ProcessorState {
    model: ProcessorModel,
    residents: Vec<ModelId>,
    active: Vec<ModelId>,
    /// Serialized processors: registration ring and the last model run.
    last_ran: Option<ModelId>,
    busy_until: VirtualTime,
    busy_log: Vec<(ModelId, BusyInterval)>,
    swap_count: u64,
}

/// Per-model load figures the placement projection needs; assembled by the
/// runtime from scheduler state and executor profiles.
#[derive(Debug, Clone, Copy)]
pub struct ModelLoad {
    pub rate_hz: f64,
    pub batch_size: u32,
    /// Expected per-batch latency in ms: the measured recent average when one
    /// exists, the profile estimate otherwise.
    pub batch_latency_ms: f64,
}

/// Snapshot of every resident model's load, used during placement.
pub type WorkloadSnapshot = BTreeMap<ModelId, ModelLoad>;

pub struct ModelServer {
    processors: BTreeMap<ProcessorKind, ProcessorState>,
    executors: BTreeMap<ModelId, ExecutorHandle>,
    /// Tie-break order among equally loaded processors.
    placement_order: Vec<ProcessorKind>,
    /// Projection horizon k, in seconds.
    pub horizon_s: f64,
    features: FeatureCoordinator,
}

impl ModelServer {
    pub fn new(
        processors: Vec<ProcessorModel>,
        placement_order: Vec<ProcessorKind>,
        horizon_s: f64,
        cache_capacity: usize,
    ) -> ModelServer {
        ModelServer {
            processors: processors
                .into_iter()
                .map(|p| {
                    (
                        p.kind,
                        ProcessorState {
                            model: p,
                            residents: Vec::new(),
                            active: Vec::new(),
                            last_ran: None,
                            busy_until: VirtualTime::ZERO,
                            busy_log: Vec::new(),
                            swap_count: 0,
                        },
                    )
                })
                .collect(),
            executors: BTreeMap::new(),
            placement_order,
            horizon_s,
            features: FeatureCoordinator::new(cache_capacity),
        }
    }

    pub fn processor_kinds(&self) -> Vec<ProcessorKind> {
        self.processors.keys().copied().collect()
    }

    pub fn processor_model(&self, kind: ProcessorKind) -> Option<&ProcessorModel> {
        self.processors.get(&kind).map(|p| &p.model)
    }

    pub fn executor(&self, model: &str) -> Option<&ExecutorHandle> {
        self.executors.get(model)
    }

    pub fn executor_ids(&self) -> Vec<ModelId> {
        self.executors.keys().cloned().collect()
    }

    pub fn residents(&self, kind: ProcessorKind) -> Vec<ModelId> {
        self.processors
            .get(&kind)
            .map(|p| p.residents.clone())
            .unwrap_or_default()
    }

    /// Committed busy time within [now, now+k] for one processor: the sum
    /// over resident models of expected batches in the horizon times the
    /// current per-batch latency estimate.
    pub fn project_workload(
        &self,
        kind: ProcessorKind,
        snapshot: &WorkloadSnapshot,
        horizon_s: f64,
    ) -> f64 {
        let state = match self.processors.get(&kind) {
            Some(s) => s,
            None => return 0.0,
        };
        state
            .residents
            .iter()
            .filter_map(|m| snapshot.get(m))
            .map(|load| {
                let batches_per_s = load.rate_hz / load.batch_size as f64;
                batches_per_s * horizon_s * load.batch_latency_ms
            })
            .sum()
    }

    /// Choose the compatible processor with the least projected workload;
    /// ties break in the configured order.
    pub fn place_model(
        &self,
        manifest: &ModelManifest,
        snapshot: &WorkloadSnapshot,
    ) -> Result<ProcessorKind, ServerError> {
        let rank = |kind: ProcessorKind| {
            self.placement_order
                .iter()
                .position(|k| *k == kind)
                .unwrap_or(usize::MAX)
        };
        let mut ordered: Vec<(f64, usize, ProcessorKind)> = self
            .processors
            .keys()
            .map(|kind| {
                (
                    self.project_workload(*kind, snapshot, self.horizon_s),
                    rank(*kind),
                    *kind,
                )
            })
            .collect();
        ordered.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        ordered
            .iter()
            .find(|(_, _, kind)| manifest.supports(*kind))
            .map(|(_, _, kind)| *kind)
            .ok_or_else(|| ServerError::NoCompatibleProcessor(manifest.model_id.clone()))
    }

    /// Register an executor for the model on a processor; on serialized
    /// processors the model joins the round-robin ring.
    pub fn create_executor(
        &mut self,
        manifest: &ModelManifest,
        processor: ProcessorKind,
        profile: ExecutorProfile,
    ) -> Result<&ExecutorHandle, ServerError> {
        if !manifest.supports(processor) {
            return Err(ServerError::IncompatibleProcessor {
                model: manifest.model_id.clone(),
                kind: processor,
            });
        }
        let state = self
            .processors
            .get_mut(&processor)
            .ok_or_else(|| ServerError::IncompatibleProcessor {
                model: manifest.model_id.clone(),
                kind: processor,
            })?;
        state.residents.push(manifest.model_id.clone());
        if let Some(pipeline) = &manifest.feature_pipeline_id {
            self.features.register(pipeline, profile.gamma_ms);
        }
        let handle = ExecutorHandle {
            model_id: manifest.model_id.clone(),
            processor,
            profile,
            feature_pipeline_id: manifest.feature_pipeline_id.clone(),
            invocations: 0,
            stopped: false,
        };
        self.executors.insert(manifest.model_id.clone(), handle);
        Ok(&self.executors[&manifest.model_id])
    }

    /// Remove the executor and its processor registration; the caller drains
    /// and counts any queued work.
    pub fn retire_executor(&mut self, model: &str) -> Result<(), ServerError> {
        let handle = self
            .executors
            .remove(model)
            .ok_or_else(|| ServerError::UnknownModel(model.to_string()))?;
        let state = self.processors.get_mut(&handle.processor).unwrap();
        state.residents.retain(|m| m != model);
        state.active.retain(|m| m != model);
        if state.last_ran.as_deref() == Some(model) {
            state.last_ran = None;
        }
        Ok(())
    }

    /// Price and begin a batch on a parallel processor at `start`. The
    /// multiplier reflects every executor active at that instant, this one
    /// included; the duration is fixed once started.
    pub fn begin_parallel_batch(
        &mut self,
        model: &str,
        batch_len: u32,
        start: VirtualTime,
    ) -> Result<u64, ServerError> {
        let handle = self
            .executors
            .get_mut(model)
            .ok_or_else(|| ServerError::UnknownModel(model.to_string()))?;
        if handle.stopped {
            return Err(ServerError::ExecutorStopped(model.to_string()));
        }
        handle.invocations += 1;
        let base_ms = handle.profile.latency_ms(batch_len);
        let kind = handle.processor;
        let state = self.processors.get_mut(&kind).unwrap();
        state.active.push(model.to_string());
        let n = state.active.len() as f64;
        let mult = 1.0 + state.model.contention_coeff * (n - 1.0);
        let duration = ms_to_ns(base_ms * mult);
        state.busy_log.push((
            model.to_string(),
            BusyInterval {
                start,
                end: start + duration,
                paid_swap: false,
            },
        ));
        Ok(duration)
    }

    /// Begin a batch on a serialized processor. Adds the swap cost whenever
    /// the model differs from the one loaded last (including the first run).
    pub fn begin_serialized_batch(
        &mut self,
        model: &str,
        batch_len: u32,
        start: VirtualTime,
    ) -> Result<u64, ServerError> {
        let handle = self
            .executors
            .get_mut(model)
            .ok_or_else(|| ServerError::UnknownModel(model.to_string()))?;
        if handle.stopped {
            return Err(ServerError::ExecutorStopped(model.to_string()));
        }
        handle.invocations += 1;
        let base_ms = handle.profile.latency_ms(batch_len);
        let kind = handle.processor;
        let state = self.processors.get_mut(&kind).unwrap();
        let swap = state.last_ran.as_deref() != Some(model);
        if swap {
            state.swap_count += 1;
        }
        let duration = ms_to_ns(base_ms) + if swap { ms_to_ns(state.model.swap_cost_ms) } else { 0 };
        state.active.push(model.to_string());
        state.last_ran = Some(model.to_string());
        state.busy_until = start + duration;
        state.busy_log.push((
            model.to_string(),
            BusyInterval {
                start,
                end: start + duration,
                paid_swap: swap,
            },
        ));
        Ok(duration)
    }

    pub fn end_batch(&mut self, model: &str) {
        if let Some(handle) = self.executors.get(model) {
            if let Some(state) = self.processors.get_mut(&handle.processor) {
                if let Some(pos) = state.active.iter().position(|m| m == model) {
                    state.active.remove(pos);
                }
            }
        }
    }

    /// Serialized processor availability.
    pub fn serialized_free_at(&self, kind: ProcessorKind) -> VirtualTime {
        self.processors
            .get(&kind)
            .map(|s| s.busy_until)
            .unwrap_or(VirtualTime::ZERO)
    }

    pub fn serialized_idle(&self, kind: ProcessorKind, now: VirtualTime) -> bool {
        self.processors
            .get(&kind)
            .map(|s| s.busy_until <= now)
            .unwrap_or(true)
    }

    /// Round-robin pick: the first model after the last-run position with a
    /// ready batch. Ring order is executor registration order.
    pub fn round_robin_pick(
        &self,
        kind: ProcessorKind,
        ready: &[ModelId],
    ) -> Option<ModelId> {
        let state = self.processors.get(&kind)?;
        if state.residents.is_empty() {
            return None;
        }
        let start = match &state.last_ran {
            Some(last) => state
                .residents
                .iter()
                .position(|m| m == last)
                .map(|p| p + 1)
                .unwrap_or(0),
            None => 0,
        };
        let n = state.residents.len();
        (0..n)
            .map(|i| &state.residents[(start + i) % n])
            .find(|m| ready.contains(m))
            .cloned()
    }

    /// Synthetic inference outputs: one record per sample, a deterministic
    /// function of the sample key.
    pub fn synthesize_outputs(&self, model: &str, keys: &[SampleKey]) -> Result<Vec<(SampleKey, OutputValue)>, ServerError> {
        let handle = self
            .executors
            .get(model)
            .ok_or_else(|| ServerError::UnknownModel(model.to_string()))?;
        Ok(keys
            .iter()
            .map(|key| {
                let value = match handle.profile.output {
                    OutputKind::Detection => OutputValue::Detections(synth_detections(key)),
                    OutputKind::Classification => {
                        OutputValue::Label(synth_label(key, &handle.profile.labels))
                    }
                };
                (key.clone(), value)
            })
            .collect())
    }

    pub fn invocations(&self, model: &str) -> u64 {
        self.executors.get(model).map(|h| h.invocations).unwrap_or(0)
    }

    pub fn busy_log(&self, kind: ProcessorKind) -> Vec<(ModelId, BusyInterval)> {
        self.processors
            .get(&kind)
            .map(|s| s.busy_log.clone())
            .unwrap_or_default()
    }

    pub fn swap_count(&self, kind: ProcessorKind) -> u64 {
        self.processors.get(&kind).map(|s| s.swap_count).unwrap_or(0)
    }

    /// Aggregate busy nanoseconds per processor over a run.
    pub fn busy_ns(&self, kind: ProcessorKind) -> u64 {
        self.processors
            .get(&kind)
            .map(|s| {
                s.busy_log
                    .iter()
                    .map(|(_, iv)| iv.end.saturating_sub(iv.start))
                    .sum()
            })
            .unwrap_or(0)
    }

    pub fn features(&mut self) -> &mut FeatureCoordinator {
        &mut self.features
    }

    pub fn features_ref(&self) -> &FeatureCoordinator {
        &self.features
    }
}

// ---------------------------------------------------------------------------
// Featurization coordinator
// ---------------------------------------------------------------------------

/// Outcome of requesting features for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureResult {
    pub payload: Vec<u8>,
    /// When the features are available; `now` on a cache hit, the end of the
    /// computation otherwise.
    pub ready_at: VirtualTime,
    pub was_hit: bool,
}

#[derive(Debug, Clone)]
struct CacheEntry {
    payload: Vec<u8>,
    ready_at: VirtualTime,
}

/// One shared featurization agent: computations for all pipelines run one at
/// a time; results are cached per (pipeline, sample) with LRU eviction. A
/// request arriving while the same key is still computing coalesces onto the
/// in-flight result and counts as a hit.
pub struct FeatureCoordinator {
    pipelines: BTreeMap<String, f64>,
    capacity: usize,
    entries: BTreeMap<(String, SampleKey), CacheEntry>,
    recency: Vec<(String, SampleKey)>,
    free_at: VirtualTime,
    pub enabled: bool,
    pub hits: u64,
    pub misses: u64,
}

impl FeatureCoordinator {
    pub fn new(capacity: usize) -> FeatureCoordinator {
        FeatureCoordinator {
            pipelines: BTreeMap::new(),
            capacity: capacity.max(1),
            entries: BTreeMap::new(),
            recency: Vec::new(),
            free_at: VirtualTime::ZERO,
            enabled: true,
            hits: 0,
            misses: 0,
        }
    }

    pub fn register(&mut self, pipeline_id: &str, gamma_ms: f64) {
        // First registration pins the pipeline's cost; the identifier names
        // one specific sequence of operations.
        self.pipelines
            .entry(pipeline_id.to_string())
            .or_insert(gamma_ms);
    }

    pub fn gamma_ms(&self, pipeline_id: &str) -> Option<f64> {
        self.pipelines.get(pipeline_id).copied()
    }

    /// Request features for one sample at `now`.
    pub fn featurize(
        &mut self,
        pipeline_id: &str,
        key: &SampleKey,
        now: VirtualTime,
    ) -> Result<FeatureResult, ServerError> {
        let gamma_ms = *self
            .pipelines
            .get(pipeline_id)
            .ok_or_else(|| ServerError::UnknownPipeline(pipeline_id.to_string()))?;
        let cache_key = (pipeline_id.to_string(), key.clone());
        if self.enabled {
            if let Some(entry) = self.entries.get(&cache_key) {
                self.hits += 1;
                let result = FeatureResult {
                    payload: entry.payload.clone(),
                    ready_at: if entry.ready_at > now { entry.ready_at } else { now },
                    was_hit: true,
                };
                self.touch(&cache_key);
                return Ok(result);
            }
        }
        // Compute: the agent serializes jobs across all pipelines.
        self.misses += 1;
        let start = self.free_at.max(now);
        let ready_at = start + ms_to_ns(gamma_ms);
        self.free_at = ready_at;
        let payload = synth_features(pipeline_id, key);
        if self.enabled {
            self.insert(cache_key, CacheEntry { payload: payload.clone(), ready_at });
        }
        Ok(FeatureResult {
            payload,
            ready_at,
            was_hit: false,
        })
    }

    fn touch(&mut self, key: &(String, SampleKey)) {
        if let Some(pos) = self.recency.iter().position(|k| k == key) {
            let k = self.recency.remove(pos);
            self.recency.push(k);
        }
    }

    fn insert(&mut self, key: (String, SampleKey), entry: CacheEntry) {
        if self.entries.len() >= self.capacity && !self.entries.contains_key(&key) {
            let oldest = self.recency.remove(0);
            self.entries.remove(&oldest);
        }
        self.entries.insert(key.clone(), entry);
        self.recency.retain(|k| *k != key);
        self.recency.push(key);
    }

    pub fn cache_len(&self) -> usize {
        self.entries.len()
    }
}
