//! Event-triggered post-processing function chains.
//!
//! A function's execution is prompted by the completion of the sources it
//! declares: inputs are buffered per sample key, and the function fires
//! exactly once for a key, the moment its input set becomes complete. Fired
//! outputs re-enter the chain, so functions compose into a DAG.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::clock::VirtualTime;
use crate::manifest::{CodeletEntry, FunctionId, FunctionSpec, SourceRef};
use crate::output::{OutputValue, Overlay};
use crate::sensor::SampleKey;

#[derive(Debug, Error, PartialEq)]
pub enum ChainError {
    #[error("unknown source `{0}`")]
    UnknownSource(String),
    #[error("behavior error in `{function}`: {reason}")]
    BehaviorError { function: String, reason: String },
    #[error("unknown behavior `{0}`")]
    UnknownBehavior(String),
    #[error("behavior `{behavior}` missing parameter `{param}`")]
    MissingParam { behavior: String, param: String },
}

/// A registered builtin behavior with bound parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Codelet {
    /// Count detections carrying the given label.
    CountLabel { label: String },
    /// Attach reshaped boxes for the given label onto the input frame.
    AnnotateBoxes { label: String },
}

impl Codelet {
    pub fn from_entry(entry: &CodeletEntry) -> Result<Codelet, ChainError> {
        let label = || {
            entry.params.get("label").cloned().ok_or(ChainError::MissingParam {
                behavior: entry.behavior.clone(),
                param: "label".to_string(),
            })
        };
        match entry.behavior.as_str() {
            "count_label" => Ok(Codelet::CountLabel { label: label()? }),
            "annotate_boxes" => Ok(Codelet::AnnotateBoxes { label: label()? }),
            other => Err(ChainError::UnknownBehavior(other.to_string())),
        }
    }
}

/// Execute a codelet over inputs ordered exactly as the spec declares them.
pub fn execute_function(
    spec: &FunctionSpec,
    codelet: &Codelet,
    inputs: &[OutputValue],
) -> Result<OutputValue, ChainError> {
    let err = |reason: &str| ChainError::BehaviorError {
        function: spec.function_id.clone(),
        reason: reason.to_string(),
    };
    match codelet {
        Codelet::CountLabel { label } => {
            let detections = inputs
                .iter()
                .find_map(|v| match v {
                    OutputValue::Detections(d) => Some(d),
                    _ => None,
                })
                .ok_or_else(|| err("no detection input present"))?;
            Ok(OutputValue::Count(
                detections.iter().filter(|d| d.label == *label).count() as u64,
            ))
        }
        Codelet::AnnotateBoxes { label } => {
            let detections = inputs
                .iter()
                .find_map(|v| match v {
                    OutputValue::Detections(d) => Some(d),
                    _ => None,
                })
                .ok_or_else(|| err("no detection input present"))?;
            let (width, height) = inputs
                .iter()
                .find_map(|v| match v {
                    OutputValue::Frame { width, height, .. } => Some((*width, *height)),
                    _ => None,
                })
                .ok_or_else(|| err("no frame input present"))?;
            let overlays = detections
                .iter()
                .filter(|d| d.label == *label)
                .map(|d| Overlay {
                    label: d.label.clone(),
                    pixel_box: d.bbox.to_pixels(width, height),
                })
                .collect();
            Ok(OutputValue::AnnotatedFrame {
                width,
                height,
                overlays,
            })
        }
    }
}

struct FunctionRuntime {
    spec: FunctionSpec,
    codelet: Codelet,
    /// Buffered inputs per sample key, plus first-arrival time for TTL aging.
    pending: BTreeMap<SampleKey, (BTreeMap<SourceRef, OutputValue>, VirtualTime)>,
    /// Keys already fired; evicted alongside the TTL horizon.
    fired: BTreeMap<SampleKey, VirtualTime>,
    ttl_ns: u64,
    pub error_count: u64,
}

/// An output produced by a fired function.
#[derive(Debug, Clone)]
pub struct FiredOutput {
    pub function_id: FunctionId,
    pub sample_key: SampleKey,
    pub payload: OutputValue,
}

/// The function coordinator: routes source outputs to dependent functions
/// and fires them exactly once per sample key when their inputs complete.
pub struct ChainEngine {
    functions: BTreeMap<FunctionId, FunctionRuntime>,
    /// source ref -> functions listening to it
    subscribers: BTreeMap<SourceRef, Vec<FunctionId>>,
    /// Sources allowed to publish: models, sensors and functions.
    known_sources: BTreeMap<String, SourceRef>,
}

impl Default for ChainEngine {
    fn default() -> Self {
        Self::new()
    }
}

impl ChainEngine {
    pub fn new() -> ChainEngine {
        ChainEngine {
            functions: BTreeMap::new(),
            subscribers: BTreeMap::new(),
            known_sources: BTreeMap::new(),
        }
    }

    pub fn register_source(&mut self, source: SourceRef) {
        self.known_sources.insert(source.id().to_string(), source);
    }

    pub fn remove_source(&mut self, id: &str) {
        self.known_sources.remove(id);
    }

    /// Register one function. `ttl_ns` bounds how long partial inputs wait.
    pub fn register_function(
        &mut self,
        spec: FunctionSpec,
        entry: &CodeletEntry,
        ttl_ns: u64,
    ) -> Result<(), ChainError> {
        let codelet = Codelet::from_entry(entry)?;
        for input in &spec.inputs {
            self.subscribers
                .entry(input.clone())
                .or_default()
                .push(spec.function_id.clone());
        }
        self.register_source(SourceRef::Function(spec.function_id.clone()));
        self.functions.insert(
            spec.function_id.clone(),
            FunctionRuntime {
                spec,
                codelet,
                pending: BTreeMap::new(),
                fired: BTreeMap::new(),
                ttl_ns,
                error_count: 0,
            },
        );
        Ok(())
    }

    pub fn remove_function(&mut self, id: &str) {
        self.functions.remove(id);
        for subs in self.subscribers.values_mut() {
            subs.retain(|f| f != id);
        }
        self.known_sources.remove(id);
    }

    pub fn function_ids(&self) -> Vec<FunctionId> {
        self.functions.keys().cloned().collect()
    }

    pub fn function_spec(&self, id: &str) -> Option<&FunctionSpec> {
        self.functions.get(id).map(|f| &f.spec)
    }

    pub fn error_count(&self, id: &str) -> u64 {
        self.functions.get(id).map(|f| f.error_count).unwrap_or(0)
    }

    /// Feed one source output into the chain. Every function whose input set
    /// becomes complete for the sample key fires exactly once; fired outputs
    /// re-enter recursively. Returns all fired outputs in firing order.
    pub fn on_output(
        &mut self,
        source: &SourceRef,
        sample_key: &SampleKey,
        payload: &OutputValue,
        now: VirtualTime,
    ) -> Result<Vec<FiredOutput>, ChainError> {
        if !self.known_sources.contains_key(source.id()) {
            return Err(ChainError::UnknownSource(source.to_string()));
        }
        let mut fired = Vec::new();
        let mut worklist: Vec<(SourceRef, SampleKey, OutputValue)> =
            vec![(source.clone(), sample_key.clone(), payload.clone())];
        while let Some((src, key, value)) = worklist.pop() {
            let listeners = self.subscribers.get(&src).cloned().unwrap_or_default();
            for function_id in listeners {
                let rt = match self.functions.get_mut(&function_id) {
                    Some(rt) => rt,
                    None => continue,
                };
                rt.evict_expired(now);
                if rt.fired.contains_key(&key) {
                    continue;
                }
                let (inputs, _) = rt
                    .pending
                    .entry(key.clone())
                    .or_insert_with(|| (BTreeMap::new(), now));
                inputs.insert(src.clone(), value.clone());
                let ready = rt.spec.inputs.iter().all(|r| inputs.contains_key(r));
                if !ready {
                    continue;
                }
                let (inputs, _) = rt.pending.remove(&key).unwrap();
                rt.fired.insert(key.clone(), now);
                let ordered: Vec<OutputValue> = rt
                    .spec
                    .inputs
                    .iter()
                    .map(|r| inputs[r].clone())
                    .collect();
                match execute_function(&rt.spec, &rt.codelet, &ordered) {
                    Ok(out) => {
                        fired.push(FiredOutput {
                            function_id: function_id.clone(),
                            sample_key: key.clone(),
                            payload: out.clone(),
                        });
                        worklist.push((SourceRef::Function(function_id.clone()), key.clone(), out));
                    }
                    Err(_) => {
                        // Recorded; the chain keeps serving other keys.
                        rt.error_count += 1;
                    }
                }
            }
        }
        Ok(fired)
    }

    pub fn pending_keys(&self, function_id: &str) -> usize {
        self.functions
            .get(function_id)
            .map(|f| f.pending.len())
            .unwrap_or(0)
    }
}

impl FunctionRuntime {
    fn evict_expired(&mut self, now: VirtualTime) {
        let ttl = self.ttl_ns;
        self.pending
            .retain(|_, (_, first)| now.saturating_sub(*first) <= ttl);
        self.fired.retain(|_, at| now.saturating_sub(*at) <= ttl);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::output::{synth_detections, BoxNorm, Detection};

    fn key(seq: u64) -> SampleKey {
        SampleKey {
            sensor_id: "cam0".to_string(),
            seq,
        }
    }

    fn count_spec() -> FunctionSpec {
        FunctionSpec {
            function_id: "count_cars".to_string(),
            inputs: vec![SourceRef::Model("detector".to_string())],
            output_type: "count".to_string(),
        }
    }

    fn annotate_spec() -> FunctionSpec {
        FunctionSpec {
            function_id: "annotate_people".to_string(),
            inputs: vec![
                SourceRef::Model("detector".to_string()),
                SourceRef::Sensor("cam0".to_string()),
            ],
            output_type: "frame".to_string(),
        }
    }

    fn entry(behavior: &str, label: &str) -> CodeletEntry {
        CodeletEntry {
            behavior: behavior.to_string(),
            params: BTreeMap::from([("label".to_string(), label.to_string())]),
        }
    }

    fn engine() -> ChainEngine {
        let mut e = ChainEngine::new();
        e.register_source(SourceRef::Model("detector".to_string()));
        e.register_source(SourceRef::Sensor("cam0".to_string()));
        e.register_function(count_spec(), &entry("count_label", "car"), u64::MAX)
            .unwrap();
        e.register_function(annotate_spec(), &entry("annotate_boxes", "person"), u64::MAX)
            .unwrap();
        e
    }

    fn detections(labels: &[&str]) -> OutputValue {
        OutputValue::Detections(
            labels
                .iter()
                .map(|l| Detection {
                    label: l.to_string(),
                    bbox: BoxNorm([32768, 32768, 16384, 16384]),
                })
                .collect(),
        )
    }

    fn frame() -> OutputValue {
        OutputValue::Frame {
            width: 640,
            height: 480,
            pixels: vec![1, 2, 3],
        }
    }

    #[test]
    fn count_label_counts_matching_detections() {
        let out = execute_function(
            &count_spec(),
            &Codelet::CountLabel {
                label: "car".to_string(),
            },
            &[detections(&["car", "car", "person"])],
        )
        .unwrap();
        assert_eq!(out, OutputValue::Count(2));
    }

    #[test]
    fn annotate_reshapes_normalized_boxes() {
        let out = execute_function(
            &annotate_spec(),
            &Codelet::AnnotateBoxes {
                label: "person".to_string(),
            },
            &[detections(&["person"]), frame()],
        )
        .unwrap();
        match out {
            OutputValue::AnnotatedFrame { overlays, .. } => {
                assert_eq!(overlays[0].pixel_box, [320, 240, 160, 120]);
            }
            other => panic!("expected annotated frame, got {other:?}"),
        }
    }

    #[test]
    fn annotate_zero_detections_keeps_frame_with_empty_overlays() {
        let out = execute_function(
            &annotate_spec(),
            &Codelet::AnnotateBoxes {
                label: "person".to_string(),
            },
            &[detections(&[]), frame()],
        )
        .unwrap();
        match out {
            OutputValue::AnnotatedFrame { width, height, overlays } => {
                assert_eq!((width, height), (640, 480));
                assert!(overlays.is_empty());
            }
            other => panic!("expected annotated frame, got {other:?}"),
        }
    }

    #[test]
    fn single_input_function_fires_immediately() {
        let mut e = engine();
        let fired = e
            .on_output(
                &SourceRef::Model("detector".to_string()),
                &key(1),
                &detections(&["car"]),
                VirtualTime::ZERO,
            )
            .unwrap();
        assert_eq!(fired.len(), 1);
        assert_eq!(fired[0].function_id, "count_cars");
        assert_eq!(fired[0].payload, OutputValue::Count(1));
    }

    #[test]
    fn two_input_function_fires_on_completion_in_either_order() {
        for frame_first in [true, false] {
            let mut e = engine();
            let det_src = SourceRef::Model("detector".to_string());
            let cam_src = SourceRef::Sensor("cam0".to_string());
            let (first, second): ((&SourceRef, OutputValue), (&SourceRef, OutputValue)) =
                if frame_first {
                    ((&cam_src, frame()), (&det_src, detections(&["person"])))
                } else {
                    ((&det_src, detections(&["person"])), (&cam_src, frame()))
                };
            let fired = e.on_output(first.0, &key(5), &first.1, VirtualTime::ZERO).unwrap();
            assert!(fired.iter().all(|f| f.function_id != "annotate_people"));
            let fired = e.on_output(second.0, &key(5), &second.1, VirtualTime(1)).unwrap();
            let annotated: Vec<_> = fired
                .iter()
                .filter(|f| f.function_id == "annotate_people")
                .collect();
            assert_eq!(annotated.len(), 1);
            match &annotated[0].payload {
                OutputValue::AnnotatedFrame { overlays, .. } => {
                    assert_eq!(overlays[0].pixel_box, [320, 240, 160, 120])
                }
                other => panic!("unexpected payload {other:?}"),
            }
        }
    }

    #[test]
    fn output_with_no_dependents_fires_nothing() {
        let mut e = engine();
        e.register_source(SourceRef::Model("other".to_string()));
        let fired = e
            .on_output(
                &SourceRef::Model("other".to_string()),
                &key(1),
                &detections(&[]),
                VirtualTime::ZERO,
            )
            .unwrap();
        assert!(fired.is_empty());
    }

    #[test]
    fn unknown_source_is_an_error() {
        let mut e = engine();
        assert!(matches!(
            e.on_output(
                &SourceRef::Model("ghost".to_string()),
                &key(1),
                &detections(&[]),
                VirtualTime::ZERO,
            ),
            Err(ChainError::UnknownSource(_))
        ));
    }

    #[test]
    fn fires_at_most_once_per_key() {
        let mut e = engine();
        let src = SourceRef::Model("detector".to_string());
        let fired = e.on_output(&src, &key(1), &detections(&["car"]), VirtualTime::ZERO).unwrap();
        assert_eq!(fired.len(), 1);
        let fired = e.on_output(&src, &key(1), &detections(&["car"]), VirtualTime(1)).unwrap();
        assert!(fired.is_empty(), "duplicate arrival must not re-fire");
    }

    #[test]
    fn functions_chain_recursively() {
        let mut e = engine();
        e.register_function(
            FunctionSpec {
                function_id: "recount".to_string(),
                inputs: vec![SourceRef::Function("count_cars".to_string())],
                output_type: "count".to_string(),
            },
            &entry("count_label", "car"),
            u64::MAX,
        )
        .unwrap();
        // recount expects detections but receives a count: records an error,
        // other keys keep flowing.
        let src = SourceRef::Model("detector".to_string());
        let fired = e.on_output(&src, &key(1), &detections(&["car"]), VirtualTime::ZERO).unwrap();
        assert_eq!(fired.len(), 1);
        assert_eq!(e.error_count("recount"), 1);
        let fired = e.on_output(&src, &key(2), &detections(&[]), VirtualTime(1)).unwrap();
        assert_eq!(fired.len(), 1, "chain continues for later keys");
    }

    #[test]
    fn partial_inputs_expire_after_ttl() {
        let mut e = ChainEngine::new();
        e.register_source(SourceRef::Model("detector".to_string()));
        e.register_source(SourceRef::Sensor("cam0".to_string()));
        e.register_function(annotate_spec(), &entry("annotate_boxes", "person"), 1_000)
            .unwrap();
        let cam = SourceRef::Sensor("cam0".to_string());
        let det = SourceRef::Model("detector".to_string());
        e.on_output(&cam, &key(1), &frame(), VirtualTime::ZERO).unwrap();
        assert_eq!(e.pending_keys("annotate_people"), 1);
        // Second input arrives after the TTL: the buffer was evicted, so the
        // function does not fire for this key.
        let fired = e.on_output(&det, &key(1), &detections(&["person"]), VirtualTime(5_000)).unwrap();
        assert!(fired.is_empty());
    }

    #[test]
    fn order_independence_property() {
        // Same inputs, both arrival orders, identical output payloads.
        for seq in 0..50u64 {
            let dets = OutputValue::Detections(synth_detections(&key(seq)));
            let mut outs = Vec::new();
            for frame_first in [true, false] {
                let mut e = engine();
                let cam = SourceRef::Sensor("cam0".to_string());
                let det = SourceRef::Model("detector".to_string());
                let mut fired = Vec::new();
                if frame_first {
                    fired.extend(e.on_output(&cam, &key(seq), &frame(), VirtualTime::ZERO).unwrap());
                    fired.extend(e.on_output(&det, &key(seq), &dets, VirtualTime(1)).unwrap());
                } else {
                    fired.extend(e.on_output(&det, &key(seq), &dets, VirtualTime::ZERO).unwrap());
                    fired.extend(e.on_output(&cam, &key(seq), &frame(), VirtualTime(1)).unwrap());
                }
                let mut annotated: Vec<_> = fired
                    .into_iter()
                    .filter(|f| f.function_id == "annotate_people")
                    .map(|f| serde_json::to_string(&f.payload).unwrap())
                    .collect();
                outs.append(&mut annotated);
            }
            assert_eq!(outs.len(), 2);
            assert_eq!(outs[0], outs[1]);
        }
    }
}
