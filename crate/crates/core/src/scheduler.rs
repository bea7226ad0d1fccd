//! The adaptive scheduler: per-model queues, batch-aware dispatch, stale
//! sample eviction, the recent-latency table and additive batch adaptation.
//!
//! Batch sizing follows an additive increase/decrease loop informed by the
//! recent-average latency table rather than single observations: the size
//! grows only while the measured latency of the *next* size is known (or
//! probed) to fit the requirement, so a size that once violated the
//! requirement is never retried while its record stands.

use std::collections::{BTreeMap, VecDeque};

use serde::Serialize;
use thiserror::Error;

use crate::clock::{ms_to_ns, VirtualTime};
use crate::manifest::ModelId;
use crate::sensor::Sample;

#[derive(Debug, Error, PartialEq)]
pub enum SchedulerError {
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("no latency observations for model `{0}` at its current batch size")]
    NoObservations(String),
}

/// Tunables; every constant is config-overridable.
#[derive(Debug, Clone, serde::Deserialize, Serialize)]
pub struct SchedulerConfig {
    /// W: observations kept per (model, batch size).
    pub latency_window: usize,
    /// A: completed batches between batch-size decisions.
    pub adjust_cadence: u64,
    /// h: spare fraction of the requirement needed before probing upward.
    pub probe_headroom: f64,
    /// Upper bound on any batch size.
    pub max_batch: u32,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            latency_window: 8,
            adjust_cadence: 5,
            probe_headroom: 0.2,
            max_batch: 32,
        }
    }
}

/// Windowed recent-average latencies keyed by batch size. Unobserved sizes
/// are absent, never zero.
#[derive(Debug, Clone, Default)]
pub struct LatencyTable {
    window: usize,
    entries: BTreeMap<u32, (VecDeque<f64>, u64)>,
}

impl LatencyTable {
    pub fn new(window: usize) -> LatencyTable {
        LatencyTable {
            window,
            entries: BTreeMap::new(),
        }
    }

    pub fn record(&mut self, batch: u32, latency_ms: f64) {
        let (samples, count) = self.entries.entry(batch).or_default();
        samples.push_back(latency_ms);
        if samples.len() > self.window {
            samples.pop_front();
        }
        *count += 1;
    }

    pub fn mean(&self, batch: u32) -> Option<f64> {
        let (samples, _) = self.entries.get(&batch)?;
        if samples.is_empty() {
            return None;
        }
        Some(samples.iter().sum::<f64>() / samples.len() as f64)
    }

    /// Largest retained observation at this size.
    pub fn window_max(&self, batch: u32) -> Option<f64> {
        let (samples, _) = self.entries.get(&batch)?;
        samples.iter().copied().reduce(f64::max)
    }

    pub fn observations(&self, batch: u32) -> u64 {
        self.entries.get(&batch).map(|(_, c)| *c).unwrap_or(0)
    }

    pub fn snapshot(&self) -> BTreeMap<u32, f64> {
        self.entries
            .keys()
            .filter_map(|b| self.mean(*b).map(|m| (*b, m)))
            .collect()
    }
}

#[derive(Debug, Clone)]
struct QueuedSample {
    sample: Sample,
    enqueued_at: VirtualTime,
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct QueueCounters {
    pub enqueued: u64,
    pub dispatched: u64,
    pub discarded: u64,
}

/// A dispatched batch: exactly the queue's batch size, contiguous in seq.
#[derive(Debug, Clone)]
pub struct Batch {
    pub model_id: ModelId,
    pub samples: Vec<Sample>,
    pub created_at: VirtualTime,
    /// Acquisition timestamp of the first sample; end-to-end latency is
    /// measured from here.
    pub first_acquired_at: VirtualTime,
}

impl Batch {
    pub fn len(&self) -> u32 {
        self.samples.len() as u32
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

struct ModelState {
    queue: VecDeque<QueuedSample>,
    batch_size: u32,
    latency_requirement_ms: f64,
    /// rl(m, b): end-to-end latency from first-sample acquisition.
    end_to_end: LatencyTable,
    /// Inference runtime (batch execution only); used for workload
    /// projection.
    compute: LatencyTable,
    /// Residual latency: completion minus the last sample's acquisition.
    /// Equals the inference runtime when the queue is drained and grows with
    /// backlog, so throughput feedback self-regulates to capacity.
    residual: LatencyTable,
    counters: QueueCounters,
    completed_since_adjust: u64,
    batch_histogram: BTreeMap<u32, u64>,
    discarded_since_dispatch: u64,
}

/// Scheduler over every deployed model. Single-owner: in the runtime every
/// call comes from the event loop, matching one logical loop per model.
pub struct Scheduler {
    config: SchedulerConfig,
    models: BTreeMap<ModelId, ModelState>,
}

impl Scheduler {
    pub fn new(config: SchedulerConfig) -> Scheduler {
        Scheduler {
            config,
            models: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.config
    }

    pub fn register_model(&mut self, model: &str, latency_requirement_ms: u64) {
        self.models.insert(
            model.to_string(),
            ModelState {
                queue: VecDeque::new(),
                batch_size: 1,
                latency_requirement_ms: latency_requirement_ms as f64,
                end_to_end: LatencyTable::new(self.config.latency_window),
                compute: LatencyTable::new(self.config.latency_window),
                residual: LatencyTable::new(self.config.latency_window),
                counters: QueueCounters::default(),
                completed_since_adjust: 0,
                batch_histogram: BTreeMap::new(),
                discarded_since_dispatch: 0,
            },
        );
    }

    pub fn remove_model(&mut self, model: &str) -> Option<u64> {
        self.models.remove(model).map(|s| s.queue.len() as u64)
    }

    pub fn has_model(&self, model: &str) -> bool {
        self.models.contains_key(model)
    }

    pub fn model_ids(&self) -> Vec<ModelId> {
        self.models.keys().cloned().collect()
    }

    fn state(&self, model: &str) -> Result<&ModelState, SchedulerError> {
        self.models
            .get(model)
            .ok_or_else(|| SchedulerError::UnknownModel(model.to_string()))
    }

    fn state_mut(&mut self, model: &str) -> Result<&mut ModelState, SchedulerError> {
        self.models
            .get_mut(model)
            .ok_or_else(|| SchedulerError::UnknownModel(model.to_string()))
    }

    pub fn enqueue(&mut self, model: &str, sample: Sample, now: VirtualTime) -> Result<(), SchedulerError> {
        let state = self.state_mut(model)?;
        state.queue.push_back(QueuedSample {
            sample,
            enqueued_at: now,
        });
        state.counters.enqueued += 1;
        Ok(())
    }

    /// Remove exactly the samples whose queue time exceeds the latency
    /// requirement. FIFO order means stale samples form a prefix.
    pub fn evict_stale(&mut self, model: &str, now: VirtualTime) -> Result<Vec<Sample>, SchedulerError> {
        let state = self.state_mut(model)?;
        let limit_ns = ms_to_ns(state.latency_requirement_ms);
        let mut discarded = Vec::new();
        while let Some(front) = state.queue.front() {
            if now.saturating_sub(front.enqueued_at) > limit_ns {
                discarded.push(state.queue.pop_front().unwrap().sample);
            } else {
                break;
            }
        }
        state.counters.discarded += discarded.len() as u64;
        state.discarded_since_dispatch += discarded.len() as u64;
        Ok(discarded)
    }

    /// After eviction, a batch of exactly the current size when enough
    /// samples are queued.
    pub fn dispatch_ready(&mut self, model: &str, now: VirtualTime) -> Result<Option<Batch>, SchedulerError> {
        self.evict_stale(model, now)?;
        let state = self.state_mut(model)?;
        let b = state.batch_size as usize;
        if state.queue.len() < b {
            return Ok(None);
        }
        let samples: Vec<Sample> = state.queue.drain(..b).map(|q| q.sample).collect();
        state.counters.dispatched += samples.len() as u64;
        state.discarded_since_dispatch = 0;
        *state.batch_histogram.entry(state.batch_size).or_default() += 1;
        let first_acquired_at = samples[0].acquired_at;
        Ok(Some(Batch {
            model_id: model.to_string(),
            samples,
            created_at: now,
            first_acquired_at,
        }))
    }

    /// Record a completed inference: end-to-end latency measured from the
    /// first sample's acquisition to inference completion.
    pub fn record_latency(&mut self, model: &str, batch: u32, end_to_end_ms: f64) -> Result<(), SchedulerError> {
        let state = self.state_mut(model)?;
        state.end_to_end.record(batch, end_to_end_ms);
        state.completed_since_adjust += 1;
        Ok(())
    }

    /// Record the inference runtime of a completed batch (queue time
    /// excluded); feeds the placement projection.
    pub fn record_compute(&mut self, model: &str, batch: u32, compute_ms: f64) -> Result<(), SchedulerError> {
        self.state_mut(model)?.compute.record(batch, compute_ms);
        Ok(())
    }

    /// Record a completed batch's residual latency (completion minus the last
    /// sample's acquisition); the basis for expected-throughput feedback.
    pub fn record_residual(&mut self, model: &str, batch: u32, residual_ms: f64) -> Result<(), SchedulerError> {
        self.state_mut(model)?.residual.record(batch, residual_ms);
        Ok(())
    }

    /// True when the adjustment cadence has elapsed; resets the counter.
    pub fn adjustment_due(&mut self, model: &str) -> Result<bool, SchedulerError> {
        let cadence = self.config.adjust_cadence;
        let state = self.state_mut(model)?;
        if state.completed_since_adjust >= cadence {
            state.completed_since_adjust = 0;
            Ok(true)
        } else {
            Ok(false)
        }
    }

    /// One additive step. In order: shrink on a measured violation at the
    /// current size; grow when the next size is measured to fit; hold when
    /// the next size is measured to violate (the informed stop). With no
    /// measurement at the next size, probe upward when the expected latency
    /// there fits: extrapolated from the recent trend over the last two
    /// sizes, or gated by the probe headroom while only one size has been
    /// observed. Clamped to [1, max].
    pub fn decide_batch_size(&mut self, model: &str) -> Result<u32, SchedulerError> {
        let (headroom, max_batch) = (self.config.probe_headroom, self.config.max_batch);
        let state = self.state_mut(model)?;
        let b = state.batch_size;
        let req = state.latency_requirement_ms;
        let current = state.end_to_end.mean(b);
        let next = state.end_to_end.mean(b + 1);
        let new_b = match (current, next) {
            (Some(rl), _) if rl > req => b.saturating_sub(1),
            (_, Some(rl_next)) if rl_next <= req => b + 1,
            (_, Some(_)) => b,
            (Some(rl), None) => {
                let expected_next = match (b > 1).then(|| state.end_to_end.mean(b - 1)).flatten() {
                    Some(prev) => 2.0 * rl - prev,
                    None => rl / (1.0 - headroom),
                };
                if expected_next <= req {
                    b + 1
                } else {
                    b
                }
            }
            _ => b,
        };
        state.batch_size = new_b.clamp(1, max_batch);
        Ok(state.batch_size)
    }

    /// Expected throughput at the current batch size: b over the recent
    /// worst residual latency, clamped to the manifest ceiling by the caller.
    /// On a drained queue this is b over the inference runtime; taking the
    /// window maximum keeps supply at or below capacity under fluctuating
    /// contention, so backlogs always drain.
    pub fn estimate_rate(&self, model: &str) -> Result<f64, SchedulerError> {
        let state = self.state(model)?;
        let b = state.batch_size;
        let latency_ms = state
            .residual
            .window_max(b)
            .ok_or_else(|| SchedulerError::NoObservations(model.to_string()))?;
        Ok(b as f64 / (latency_ms / 1000.0))
    }

    /// Liveness backoff: when a whole batch's worth of samples has aged out
    /// with no dispatch in between, the batch can never fill at the current
    /// supply rate. Step the size down so the loop keeps completing (batch
    /// decisions otherwise only run on completions, which a starved model
    /// never produces).
    pub fn starvation_backoff(&mut self, model: &str) -> Result<Option<u32>, SchedulerError> {
        let state = self.state_mut(model)?;
        if state.batch_size > 1 && state.discarded_since_dispatch >= state.batch_size as u64 {
            state.batch_size -= 1;
            state.discarded_since_dispatch = 0;
            Ok(Some(state.batch_size))
        } else {
            Ok(None)
        }
    }

    pub fn batch_size(&self, model: &str) -> Result<u32, SchedulerError> {
        Ok(self.state(model)?.batch_size)
    }

    pub fn set_batch_size(&mut self, model: &str, b: u32) -> Result<(), SchedulerError> {
        let max = self.config.max_batch;
        self.state_mut(model)?.batch_size = b.clamp(1, max);
        Ok(())
    }

    pub fn queue_len(&self, model: &str) -> Result<usize, SchedulerError> {
        Ok(self.state(model)?.queue.len())
    }

    pub fn counters(&self, model: &str) -> Result<QueueCounters, SchedulerError> {
        Ok(self.state(model)?.counters)
    }

    pub fn latency_requirement_ms(&self, model: &str) -> Result<f64, SchedulerError> {
        Ok(self.state(model)?.latency_requirement_ms)
    }

    pub fn end_to_end_snapshot(&self, model: &str) -> Result<BTreeMap<u32, f64>, SchedulerError> {
        Ok(self.state(model)?.end_to_end.snapshot())
    }

    pub fn compute_mean(&self, model: &str, batch: u32) -> Option<f64> {
        self.models.get(model).and_then(|s| s.compute.mean(batch))
    }

    /// The batch size selected most often, by dispatch count; ties go to the
    /// smaller size.
    pub fn most_selected_batch(&self, model: &str) -> Result<u32, SchedulerError> {
        let state = self.state(model)?;
        Ok(state
            .batch_histogram
            .iter()
            .max_by_key(|(b, n)| (**n, std::cmp::Reverse(**b)))
            .map(|(b, _)| *b)
            .unwrap_or(state.batch_size))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensor::{Payload, SampleKey};
    use std::sync::Arc;

    fn sample(seq: u64, at: VirtualTime) -> Sample {
        Sample {
            key: SampleKey {
                sensor_id: "cam0".to_string(),
                seq,
            },
            acquired_at: at,
            payload: Arc::new(Payload::Frame(crate::sensor::Frame {
                width: 1,
                height: 1,
                colour: crate::manifest::ColourSpace::Gray,
                pixels: vec![0],
            })),
        }
    }

    fn scheduler_with(model: &str, req_ms: u64) -> Scheduler {
        let mut s = Scheduler::new(SchedulerConfig::default());
        s.register_model(model, req_ms);
        s
    }

    #[test]
    fn three_enqueued_samples_form_a_batch_of_three() {
        let mut s = scheduler_with("m", 300);
        s.set_batch_size("m", 3).unwrap();
        for i in 0..3 {
            s.enqueue("m", sample(i, VirtualTime(i)), VirtualTime(i)).unwrap();
        }
        let batch = s.dispatch_ready("m", VirtualTime(10)).unwrap().unwrap();
        assert_eq!(batch.len(), 3);
        assert_eq!(s.queue_len("m").unwrap(), 0);
    }

    #[test]
    fn unknown_model_is_an_error() {
        let mut s = scheduler_with("m", 300);
        assert_eq!(
            s.enqueue("x", sample(0, VirtualTime::ZERO), VirtualTime::ZERO),
            Err(SchedulerError::UnknownModel("x".to_string()))
        );
    }

    #[test]
    fn stale_sample_is_discarded() {
        let mut s = scheduler_with("m", 300);
        s.enqueue("m", sample(0, VirtualTime::ZERO), VirtualTime::ZERO).unwrap();
        let discarded = s.evict_stale("m", VirtualTime::from_ms(400.0)).unwrap();
        assert_eq!(discarded.len(), 1);
        assert_eq!(s.counters("m").unwrap().discarded, 1);
    }

    #[test]
    fn fresh_samples_survive_eviction() {
        let mut s = scheduler_with("m", 300);
        s.enqueue("m", sample(0, VirtualTime::ZERO), VirtualTime::ZERO).unwrap();
        assert!(s.evict_stale("m", VirtualTime::from_ms(300.0)).unwrap().is_empty());
    }

    #[test]
    fn dispatch_returns_prefix_and_leaves_rest() {
        let mut s = scheduler_with("m", 300);
        s.set_batch_size("m", 2).unwrap();
        for i in 0..3 {
            s.enqueue("m", sample(i, VirtualTime(i)), VirtualTime(i)).unwrap();
        }
        let batch = s.dispatch_ready("m", VirtualTime(5)).unwrap().unwrap();
        assert_eq!(batch.samples[0].key.seq, 0);
        assert_eq!(batch.samples[1].key.seq, 1);
        assert_eq!(s.queue_len("m").unwrap(), 1);
    }

    #[test]
    fn short_queue_yields_no_batch() {
        let mut s = scheduler_with("m", 300);
        s.set_batch_size("m", 4).unwrap();
        for i in 0..3 {
            s.enqueue("m", sample(i, VirtualTime(i)), VirtualTime(i)).unwrap();
        }
        assert!(s.dispatch_ready("m", VirtualTime(5)).unwrap().is_none());
    }

    #[test]
    fn eviction_runs_before_dispatch() {
        // b=2, queue=[s1 stale, s2 fresh]: evict s1, then 1 < 2 -> none.
        let mut s = scheduler_with("m", 300);
        s.set_batch_size("m", 2).unwrap();
        s.enqueue("m", sample(1, VirtualTime::ZERO), VirtualTime::ZERO).unwrap();
        s.enqueue("m", sample(2, VirtualTime::from_ms(350.0)), VirtualTime::from_ms(350.0))
            .unwrap();
        let now = VirtualTime::from_ms(450.0);
        assert!(s.dispatch_ready("m", now).unwrap().is_none());
        assert_eq!(s.counters("m").unwrap().discarded, 1);
        assert_eq!(s.queue_len("m").unwrap(), 1);
    }

    #[test]
    fn windowed_mean_over_recent_observations() {
        let mut s = scheduler_with("m", 300);
        for v in [100.0, 110.0, 120.0] {
            s.record_latency("m", 2, v).unwrap();
        }
        assert_eq!(s.end_to_end_snapshot("m").unwrap()[&2], 110.0);
    }

    #[test]
    fn window_drops_oldest() {
        let mut table = LatencyTable::new(4);
        for v in [1.0, 2.0, 3.0, 4.0, 5.0] {
            table.record(1, v);
        }
        assert_eq!(table.mean(1), Some(3.5)); // mean of 2..5
        assert_eq!(table.observations(1), 5);
    }

    #[test]
    fn batch_sizes_keep_isolated_entries() {
        let mut s = scheduler_with("m", 300);
        s.record_latency("m", 2, 100.0).unwrap();
        let snap = s.end_to_end_snapshot("m").unwrap();
        assert!(snap.contains_key(&2));
        assert!(!snap.contains_key(&3));
    }

    #[test]
    fn informed_stop_holds_size() {
        // rl = {1:100, 2:180, 3:320}, req 300, b=2 -> stays 2.
        let mut s = scheduler_with("m", 300);
        s.set_batch_size("m", 2).unwrap();
        s.record_latency("m", 1, 100.0).unwrap();
        s.record_latency("m", 2, 180.0).unwrap();
        s.record_latency("m", 3, 320.0).unwrap();
        assert_eq!(s.decide_batch_size("m").unwrap(), 2);

        // Oracle: the best feasible size in the table is indeed 2.
        let snap = s.end_to_end_snapshot("m").unwrap();
        let best = snap.iter().filter(|(_, rl)| **rl <= 300.0).map(|(b, _)| *b).max();
        assert_eq!(best, Some(2));
    }

    #[test]
    fn empty_table_does_not_jump() {
        let mut s = scheduler_with("m", 300);
        assert_eq!(s.decide_batch_size("m").unwrap(), 1);
        // After a comfortable observation the probe rule fires.
        s.record_latency("m", 1, 100.0).unwrap();
        assert_eq!(s.decide_batch_size("m").unwrap(), 2);
    }

    #[test]
    fn probe_needs_headroom() {
        let mut s = scheduler_with("m", 300);
        s.record_latency("m", 1, 250.0).unwrap(); // above 240 = req*(1-h)
        assert_eq!(s.decide_batch_size("m").unwrap(), 1);
    }

    #[test]
    fn violation_shrinks_size() {
        let mut s = scheduler_with("m", 300);
        s.set_batch_size("m", 2).unwrap();
        s.record_latency("m", 2, 350.0).unwrap();
        assert_eq!(s.decide_batch_size("m").unwrap(), 1);
    }

    #[test]
    fn size_clamps_to_configured_bounds() {
        let mut s = scheduler_with("m", 10_000);
        s.set_batch_size("m", 32).unwrap();
        s.record_latency("m", 32, 1.0).unwrap();
        assert_eq!(s.decide_batch_size("m").unwrap(), 32);

        s.set_batch_size("m", 1).unwrap();
        s.record_latency("m", 1, 99_999.0).unwrap();
        assert_eq!(s.decide_batch_size("m").unwrap(), 1);
    }

    #[test]
    fn rate_estimate_matches_anchor_points() {
        let mut s = scheduler_with("m", 300);
        s.set_batch_size("m", 4).unwrap();
        s.record_residual("m", 4, 150.0).unwrap();
        let rate = s.estimate_rate("m").unwrap();
        assert!((rate - 26.666_666).abs() < 1e-3, "got {rate}");

        s.set_batch_size("m", 1).unwrap();
        s.record_residual("m", 1, 110.0).unwrap();
        let rate = s.estimate_rate("m").unwrap();
        assert!((rate - 9.0909).abs() < 1e-3, "got {rate}");

        s.record_residual("m", 1, 1000.0).unwrap();
        // The worst retained residual governs: 1 s -> 1 Hz.
        let rate = s.estimate_rate("m").unwrap();
        assert!((rate - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rate_estimate_requires_observations() {
        let mut s = scheduler_with("m", 300);
        s.set_batch_size("m", 2).unwrap();
        assert_eq!(
            s.estimate_rate("m"),
            Err(SchedulerError::NoObservations("m".to_string()))
        );
    }

    #[test]
    fn feedback_soundness_rate_times_latency_is_batch() {
        let mut s = scheduler_with("m", 300);
        for (b, l) in [(1u32, 110.0), (3, 170.0), (7, 260.0)] {
            s.set_batch_size("m", b).unwrap();
            s.record_residual("m", b, l).unwrap();
            let rate = s.estimate_rate("m").unwrap();
            assert!((rate * (l / 1000.0) - b as f64).abs() < 1e-9);
        }
    }

    /// Driving the loop against a static affine latency profile converges to
    /// the brute-force optimum and stays there.
    fn drive_to_convergence(alpha: f64, beta: f64, req: f64, epochs: u32) -> (u32, Vec<u32>) {
        let cfg = SchedulerConfig::default();
        let mut s = Scheduler::new(cfg.clone());
        s.register_model("m", req as u64);
        let mut history = Vec::new();
        for _ in 0..epochs {
            let b = s.batch_size("m").unwrap();
            for _ in 0..cfg.adjust_cadence {
                s.record_latency("m", b, alpha + beta * b as f64).unwrap();
                s.record_residual("m", b, alpha + beta * b as f64).unwrap();
            }
            s.decide_batch_size("m").unwrap();
            history.push(s.batch_size("m").unwrap());
        }
        (s.batch_size("m").unwrap(), history)
    }

    #[test]
    fn aimd_converges_to_oracle_and_does_not_oscillate() {
        let (alpha, beta, req) = (90.0, 20.0, 300.0);
        let oracle = (1..=32)
            .filter(|b| alpha + beta * *b as f64 <= req)
            .max()
            .unwrap_or(1);
        assert_eq!(oracle, 10);
        let (steady, history) = drive_to_convergence(alpha, beta, req, 20);
        assert_eq!(steady, oracle);
        // Once b*+1 has been observed over the requirement, b never exceeds b*.
        let first_at = history.iter().position(|b| *b == oracle).unwrap();
        assert!(history[first_at..].iter().all(|b| *b <= oracle + 1));
        let last_excess = history.iter().rposition(|b| *b > oracle);
        if let Some(pos) = last_excess {
            assert!(history[pos + 1..].iter().all(|b| *b <= oracle));
        }
    }

    #[test]
    fn infeasible_profile_floors_at_one() {
        let (steady, _) = drive_to_convergence(400.0, 50.0, 300.0, 10);
        assert_eq!(steady, 1);
    }

    #[test]
    fn interleaved_enqueues_preserve_per_model_seq_order() {
        let mut s = Scheduler::new(SchedulerConfig::default());
        s.register_model("a", 1000);
        s.register_model("b", 1000);
        // Deterministic pseudo-random interleaving.
        let mut x = 12345u64;
        let mut seqs = BTreeMap::from([("a", 0u64), ("b", 0u64)]);
        for i in 0..200 {
            x = crate::sensor::splitmix64(x);
            let model = if x % 2 == 0 { "a" } else { "b" };
            let seq = seqs.get_mut(model).unwrap();
            *seq += 1;
            s.enqueue(model, sample(*seq, VirtualTime(i)), VirtualTime(i)).unwrap();
        }
        for model in ["a", "b"] {
            s.set_batch_size(model, 1).unwrap();
            let mut last = 0;
            while let Some(batch) = s.dispatch_ready(model, VirtualTime(1000)).unwrap() {
                let seq = batch.samples[0].key.seq;
                assert!(seq > last);
                last = seq;
            }
        }
    }
}
