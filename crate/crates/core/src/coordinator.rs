//! The data coordinator: sensor lifecycle, Stage-1 common configuration and
//! Stage-2 shared pipeline execution.
//!
//! Stage 1 derives, per sensor, the minimal configuration that dominates
//! every bound model's requirement. Stage 2 builds the shared transformation
//! graph closing each model's remaining gap. Deployment changes rebuild the
//! graph atomically; delivery-rate changes only touch gate state and apply at
//! sample boundaries.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::clock::VirtualTime;
use crate::graph::{
    execute_graph, ExecutionTrace, GraphError, GraphState, StreamFormat, TransformGraph,
};
use crate::manifest::{ColourSpace, InputSpec, Modality, ModelId, ModelManifest, SensorId};
use crate::sensor::{generate_payload, Sample, SampleKey, SensorCapabilities, SensorConfig};

#[derive(Debug, Error)]
pub enum CoordinatorError {
    #[error("requirement unsatisfiable: {0}")]
    Unsatisfiable(String),
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("rate {rate_hz} Hz out of range (0, {max_rate_hz}]")]
    RateOutOfRange { rate_hz: f64, max_rate_hz: f64 },
    #[error("no sensor provides modality {0:?}")]
    NoSensor(Modality),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Stage 1: the minimal capability settings dominating every requirement.
///
/// Resolution: the smallest available resolution (by area, then width) at
/// least as large as the largest required width and height. Colour: chosen
/// from the lattice so every required space is derivable, preferring RGB when
/// any model needs RGB or GRAY. Rate: the highest required rate, capped by
/// the sensor. Audio: smallest available sample rate covering the largest
/// requirement, largest required bit depth available.
pub fn derive_common_config(
    requirements: &[InputSpec],
    caps: &SensorCapabilities,
) -> Result<SensorConfig, CoordinatorError> {
    if requirements.is_empty() {
        return Err(CoordinatorError::Unsatisfiable(
            "no requirements given".to_string(),
        ));
    }
    match caps.modality {
        Modality::Vision => {
            let vcaps = caps.vision.as_ref().ok_or_else(|| {
                CoordinatorError::Unsatisfiable("vision sensor lacks capabilities".to_string())
            })?;
            let mut max_w = 0;
            let mut max_h = 0;
            let mut max_rate: f64 = 0.0;
            let mut needed_colours = Vec::new();
            for req in requirements {
                let v = match req {
                    InputSpec::Vision(v) => v,
                    InputSpec::Audio(_) => {
                        return Err(CoordinatorError::Unsatisfiable(
                            "audio requirement on a vision sensor".to_string(),
                        ))
                    }
                };
                max_w = max_w.max(v.width_px);
                max_h = max_h.max(v.height_px);
                max_rate = max_rate.max(v.rate_hz);
                if !needed_colours.contains(&v.colour_space) {
                    needed_colours.push(v.colour_space);
                }
            }
            let resolution = vcaps
                .resolutions
                .iter()
                .filter(|(w, h)| *w >= max_w && *h >= max_h)
                .min_by_key(|(w, h)| (*w as u64 * *h as u64, *w))
                .copied()
                .ok_or_else(|| {
                    CoordinatorError::Unsatisfiable(format!(
                        "no capability resolution dominates {max_w}x{max_h}"
                    ))
                })?;
            let colour = choose_colour(&needed_colours, &vcaps.colour_spaces)?;
            // Requirements above the sensor ceiling are delivered at the
            // ceiling; gates cannot invent samples.
            let rate = max_rate.min(vcaps.max_rate_hz);
            Ok(SensorConfig::Vision {
                width_px: resolution.0,
                height_px: resolution.1,
                colour_space: colour,
                rate_hz: rate,
            })
        }
        Modality::Audio => {
            let acaps = caps.audio.as_ref().ok_or_else(|| {
                CoordinatorError::Unsatisfiable("audio sensor lacks capabilities".to_string())
            })?;
            let mut max_sample_rate = 0;
            let mut max_depth = 0;
            let mut min_window = f64::MAX;
            for req in requirements {
                let a = match req {
                    InputSpec::Audio(a) => a,
                    InputSpec::Vision(_) => {
                        return Err(CoordinatorError::Unsatisfiable(
                            "vision requirement on an audio sensor".to_string(),
                        ))
                    }
                };
                max_sample_rate = max_sample_rate.max(a.sample_rate_hz);
                max_depth = max_depth.max(a.bit_depth.bits());
                min_window = min_window.min(a.window_s);
                if a.rate_hz * a.window_s > 1.0 + 1e-9 {
                    return Err(CoordinatorError::Unsatisfiable(format!(
                        "overlapping windows requested: {} windows/s of {}s",
                        a.rate_hz, a.window_s
                    )));
                }
            }
            let sample_rate = acaps
                .sample_rates_hz
                .iter()
                .filter(|r| **r >= max_sample_rate)
                .min()
                .copied()
                .ok_or_else(|| {
                    CoordinatorError::Unsatisfiable(format!(
                        "no capability sample rate reaches {max_sample_rate} Hz"
                    ))
                })?;
            let depth_bits = acaps
                .bit_depths
                .iter()
                .filter(|d| **d >= max_depth)
                .min()
                .copied()
                .ok_or_else(|| {
                    CoordinatorError::Unsatisfiable(format!(
                        "no capability bit depth reaches {max_depth} bits"
                    ))
                })?;
            let depth = crate::manifest::BitDepth::from_bits(depth_bits).ok_or_else(|| {
                CoordinatorError::Unsatisfiable(format!("unsupported bit depth {depth_bits}"))
            })?;
            // Base window rate: the shortest required window sets the tick.
            let rate = (1.0 / min_window).min(acaps.max_rate_hz);
            Ok(SensorConfig::Audio {
                sample_rate_hz: sample_rate,
                bit_depth: depth,
                rate_hz: rate,
            })
        }
    }
}

fn reachable(from: ColourSpace, to: ColourSpace) -> bool {
    use ColourSpace::*;
    matches!(
        (from, to),
        (Rgb, Rgb) | (Rgb, Yuv) | (Rgb, Gray) | (Yuv, Yuv) | (Yuv, Rgb) | (Yuv, Gray) | (Gray, Gray)
    )
}

fn choose_colour(
    needed: &[ColourSpace],
    available: &[ColourSpace],
) -> Result<ColourSpace, CoordinatorError> {
    use ColourSpace::*;
    let only_gray = needed.iter().all(|c| *c == Gray);
    let wants_rgb_or_gray = needed.iter().any(|c| matches!(c, Rgb | Gray));
    let preference: &[ColourSpace] = if only_gray {
        &[Gray, Rgb, Yuv]
    } else if wants_rgb_or_gray {
        &[Rgb, Yuv]
    } else {
        &[Yuv, Rgb]
    };
    preference
        .iter()
        .find(|c| available.contains(c) && needed.iter().all(|n| reachable(**c, *n)))
        .copied()
        .ok_or_else(|| {
            CoordinatorError::Unsatisfiable(format!(
                "no capability colour space reaches all of {needed:?}"
            ))
        })
}

/// Whether the graph is built shared (merged) or as one chain per model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PipelineMode {
    Shared,
    Individual,
}

struct SensorRuntime {
    caps: SensorCapabilities,
    config: SensorConfig,
    graph: TransformGraph,
    state: GraphState,
    next_seq: u64,
    bound_models: BTreeMap<ModelId, InputSpec>,
    /// Unclamped delivery rates requested per model; the sensor tracks their
    /// maximum within its capability ceiling.
    desired_rates: BTreeMap<ModelId, f64>,
}

/// Owns every sensor, the per-sensor shared graphs and all delivery gates.
pub struct DataCoordinator {
    seed: u64,
    mode: PipelineMode,
    sensors: BTreeMap<SensorId, SensorRuntime>,
    /// model -> (sensor, max delivery rate from the manifest)
    bindings: BTreeMap<ModelId, (SensorId, f64)>,
    ops_executed: u64,
    /// Vision sensors run this many times faster than the fastest gate so
    /// gate patterns stay fine-grained; capped by sensor capability.
    oversample: f64,
}

impl DataCoordinator {
    pub fn new(sensors: Vec<SensorCapabilities>, seed: u64, mode: PipelineMode) -> DataCoordinator {
        DataCoordinator::with_oversample(sensors, seed, mode, 4.0)
    }

    pub fn with_oversample(
        sensors: Vec<SensorCapabilities>,
        seed: u64,
        mode: PipelineMode,
        oversample: f64,
    ) -> DataCoordinator {
        let sensors = sensors
            .into_iter()
            .map(|caps| {
                let config = default_config(&caps);
                let graph = TransformGraph::build_shared(&BTreeMap::new(), &config)
                    .expect("empty graph always builds");
                let state = GraphState::new(&graph, &BTreeMap::new());
                (
                    caps.sensor_id.clone(),
                    SensorRuntime {
                        caps,
                        config,
                        graph,
                        state,
                        next_seq: 0,
                        bound_models: BTreeMap::new(),
                        desired_rates: BTreeMap::new(),
                    },
                )
            })
            .collect();
        DataCoordinator {
            seed,
            mode,
            sensors,
            bindings: BTreeMap::new(),
            ops_executed: 0,
            oversample: oversample.max(1.0),
        }
    }

    pub fn sensor_ids(&self) -> Vec<SensorId> {
        self.sensors.keys().cloned().collect()
    }

    pub fn sensor_config(&self, sensor: &str) -> Option<&SensorConfig> {
        self.sensors.get(sensor).map(|s| &s.config)
    }

    pub fn current_rate(&self, sensor: &str) -> Option<f64> {
        self.sensors.get(sensor).map(|s| s.config.rate_hz())
    }

    pub fn ops_executed(&self) -> u64 {
        self.ops_executed
    }

    /// Find the sensor that will feed a model: the first sensor (by id) of
    /// the required modality.
    pub fn sensor_for(&self, spec: &InputSpec) -> Result<SensorId, CoordinatorError> {
        self.sensors
            .values()
            .find(|s| s.caps.modality == spec.modality())
            .map(|s| s.caps.sensor_id.clone())
            .ok_or(CoordinatorError::NoSensor(spec.modality()))
    }

    /// Fastest delivery rate the serving sensor could ever sustain for this
    /// requirement, independent of the current configuration.
    pub fn supply_ceiling(&self, spec: &InputSpec) -> Option<f64> {
        let sensor = self.sensor_for(spec).ok()?;
        let caps = &self.sensors[&sensor].caps;
        match spec {
            InputSpec::Vision(_) => caps.vision.as_ref().map(|v| v.max_rate_hz),
            InputSpec::Audio(a) => caps
                .audio
                .as_ref()
                .map(|c| c.max_rate_hz.min(1.0 / a.window_s)),
        }
    }

    /// Rebuild Stage-1 configuration and the Stage-2 graph for every sensor
    /// affected by adding `models`. The rebuild is atomic: it is computed on
    /// the side and swapped in only if every sensor plan succeeds.
    pub fn bind_models(&mut self, models: &[ModelManifest]) -> Result<(), CoordinatorError> {
        let mut staged: BTreeMap<SensorId, BTreeMap<ModelId, InputSpec>> = BTreeMap::new();
        let mut staged_bindings = Vec::new();
        for m in models {
            let sensor = self.sensor_for(&m.input)?;
            staged
                .entry(sensor.clone())
                .or_default()
                .insert(m.model_id.clone(), m.input.clone());
            staged_bindings.push((m.model_id.clone(), sensor, m.max_rate_hz));
        }

        // Plan phase: derive config + graph per affected sensor.
        let mut plans = Vec::new();
        for (sensor_id, new_models) in staged {
            let rt = &self.sensors[&sensor_id];
            let mut all: BTreeMap<ModelId, InputSpec> = rt.bound_models.clone();
            all.extend(new_models);
            let requirements: Vec<InputSpec> = all.values().cloned().collect();
            let config = derive_common_config(&requirements, &rt.caps)?;
            let graph = match self.mode {
                PipelineMode::Shared => TransformGraph::build_shared(&all, &config)?,
                PipelineMode::Individual => TransformGraph::build_individual(&all, &config)?,
            };
            // Requested delivery rates survive the rebuild; new models start
            // at their declared input rate.
            let mut rates: BTreeMap<ModelId, f64> = rt.desired_rates.clone();
            for (model, spec) in &all {
                rates.entry(model.clone()).or_insert_with(|| spec.rate_hz());
            }
            plans.push((sensor_id, all, config, graph, rates));
        }

        // Commit phase.
        for (sensor_id, all, config, graph, rates) in plans {
            let rt = self.sensors.get_mut(&sensor_id).unwrap();
            let state = GraphState::new(&graph, &rates);
            rt.config = config;
            rt.graph = graph;
            rt.state = state;
            for (model, spec) in &all {
                rt.desired_rates
                    .entry(model.clone())
                    .or_insert_with(|| spec.rate_hz());
            }
            rt.bound_models = all;
        }
        for (model, sensor, max_rate) in staged_bindings {
            self.bindings.insert(model, (sensor, max_rate));
        }
        Ok(())
    }

    pub fn unbind_model(&mut self, model: &str) -> Result<(), CoordinatorError> {
        let (sensor_id, _) = self
            .bindings
            .remove(model)
            .ok_or_else(|| CoordinatorError::UnknownModel(model.to_string()))?;
        let rt = self.sensors.get_mut(&sensor_id).unwrap();
        rt.bound_models.remove(model);
        rt.desired_rates.remove(model);
        if rt.bound_models.is_empty() {
            rt.config = default_config(&rt.caps);
            rt.graph = TransformGraph::build_shared(&BTreeMap::new(), &rt.config).unwrap();
            rt.state = GraphState::new(&rt.graph, &BTreeMap::new());
            return Ok(());
        }
        let requirements: Vec<InputSpec> = rt.bound_models.values().cloned().collect();
        let config = derive_common_config(&requirements, &rt.caps)?;
        let graph = match self.mode {
            PipelineMode::Shared => TransformGraph::build_shared(&rt.bound_models, &config)?,
            PipelineMode::Individual => TransformGraph::build_individual(&rt.bound_models, &config)?,
        };
        rt.state = GraphState::new(&graph, &rt.desired_rates);
        rt.graph = graph;
        rt.config = config;
        Ok(())
    }

    /// Throughput feedback from the scheduler. The delivery gate changes at
    /// the next sample boundary; the sensor itself speeds up or slows down to
    /// the fastest gate, within its capability ceiling.
    pub fn set_model_rate(&mut self, model: &str, rate_hz: f64) -> Result<(), CoordinatorError> {
        let (sensor_id, max_rate) = self
            .bindings
            .get(model)
            .cloned()
            .ok_or_else(|| CoordinatorError::UnknownModel(model.to_string()))?;
        if !(rate_hz > 0.0) || rate_hz > max_rate + 1e-9 {
            return Err(CoordinatorError::RateOutOfRange {
                rate_hz,
                max_rate_hz: max_rate,
            });
        }
        let rt = self.sensors.get_mut(&sensor_id).unwrap();
        rt.desired_rates.insert(model.to_string(), rate_hz);

        // Vision sensors track the fastest requested delivery rate,
        // oversampled so slower models' gate patterns stay fine-grained;
        // audio sensors keep their window cadence fixed.
        if let (SensorConfig::Vision { .. }, Some(vcaps)) = (&rt.config, rt.caps.vision.as_ref()) {
            let fastest = rt
                .desired_rates
                .values()
                .fold(rate_hz, |acc, r| acc.max(*r));
            let new_rate = (fastest * self.oversample).min(vcaps.max_rate_hz).max(fastest.min(vcaps.max_rate_hz));
            if (new_rate - rt.config.rate_hz()).abs() > 1e-9 {
                rt.config = rt.config.with_rate(new_rate);
                rt.state
                    .set_root_rate(&rt.graph, new_rate, &rt.desired_rates);
            }
        }
        // Gates cap at the structural stream rate internally.
        rt.state.set_model_rate(model, rate_hz);
        Ok(())
    }

    pub fn model_rate(&self, model: &str) -> Option<f64> {
        let (sensor_id, _) = self.bindings.get(model)?;
        self.sensors[sensor_id].state.model_rate(model)
    }

    /// Generate the next sample for a sensor and run it through the graph.
    pub fn tick(
        &mut self,
        sensor: &str,
        now: VirtualTime,
    ) -> Result<(Sample, BTreeMap<ModelId, Sample>, ExecutionTrace), CoordinatorError> {
        let seed = self.seed;
        let rt = self
            .sensors
            .get_mut(sensor)
            .ok_or_else(|| CoordinatorError::UnknownModel(sensor.to_string()))?;
        rt.next_seq += 1;
        let seq = rt.next_seq;
        let sample = Sample {
            key: SampleKey {
                sensor_id: sensor.to_string(),
                seq,
            },
            acquired_at: now,
            payload: Arc::new(generate_payload(seed, sensor, seq, &rt.config)),
        };
        let (deliveries, trace) = execute_graph(&rt.graph, &mut rt.state, &sample)?;
        self.ops_executed += trace.len() as u64;
        Ok((sample, deliveries, trace))
    }

    pub fn graph(&self, sensor: &str) -> Option<&TransformGraph> {
        self.sensors.get(sensor).map(|s| &s.graph)
    }

    pub fn root_format(&self, sensor: &str) -> Option<StreamFormat> {
        self.sensors
            .get(sensor)
            .map(|s| StreamFormat::of_config(&s.config))
    }
}

/// Placeholder configuration for a sensor with no bound models.
fn default_config(caps: &SensorCapabilities) -> SensorConfig {
    match caps.modality {
        Modality::Vision => {
            let v = caps.vision.as_ref().expect("vision caps");
            let (w, h) = v.resolutions[0];
            SensorConfig::Vision {
                width_px: w,
                height_px: h,
                colour_space: v.colour_spaces[0],
                rate_hz: v.max_rate_hz,
            }
        }
        Modality::Audio => {
            let a = caps.audio.as_ref().expect("audio caps");
            SensorConfig::Audio {
                sample_rate_hz: a.sample_rates_hz[0],
                bit_depth: crate::manifest::BitDepth::from_bits(a.bit_depths[0])
                    .unwrap_or(crate::manifest::BitDepth::B16),
                rate_hz: a.max_rate_hz,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::VisionSpec;

    fn camera(resolutions: Vec<(u32, u32)>, colours: Vec<ColourSpace>, max_rate: f64) -> SensorCapabilities {
        SensorCapabilities {
            sensor_id: "cam0".to_string(),
            modality: Modality::Vision,
            vision: Some(crate::sensor::VisionCaps {
                resolutions,
                colour_spaces: colours,
                max_rate_hz: max_rate,
            }),
            audio: None,
        }
    }

    fn vision_req(w: u32, h: u32, rate: f64) -> InputSpec {
        InputSpec::Vision(VisionSpec {
            width_px: w,
            height_px: h,
            colour_space: ColourSpace::Rgb,
            rate_hz: rate,
        })
    }

    #[test]
    fn picks_exact_dominating_resolution() {
        let caps = camera(vec![(416, 416), (1920, 1080)], vec![ColourSpace::Rgb], 30.0);
        let config = derive_common_config(
            &[vision_req(224, 224, 10.0), vision_req(416, 416, 10.0)],
            &caps,
        )
        .unwrap();
        match config {
            SensorConfig::Vision {
                width_px, height_px, ..
            } => assert_eq!((width_px, height_px), (416, 416)),
            _ => panic!(),
        }
    }

    #[test]
    fn picks_minimal_dominating_resolution_by_scan() {
        let caps = camera(vec![(640, 480), (1920, 1080)], vec![ColourSpace::Rgb], 30.0);
        let reqs = [vision_req(416, 416, 10.0)];
        let config = derive_common_config(&reqs, &caps).unwrap();
        let chosen = match &config {
            SensorConfig::Vision {
                width_px, height_px, ..
            } => (*width_px, *height_px),
            _ => panic!(),
        };
        assert_eq!(chosen, (640, 480));

        // Oracle: exhaustive scan of the finite capability set.
        let dominating: Vec<(u32, u32)> = caps
            .vision
            .as_ref()
            .unwrap()
            .resolutions
            .iter()
            .filter(|(w, h)| *w >= 416 && *h >= 416)
            .copied()
            .collect();
        assert!(dominating.contains(&chosen));
        for (w, h) in dominating {
            assert!(w as u64 * h as u64 >= chosen.0 as u64 * chosen.1 as u64);
        }
    }

    #[test]
    fn identity_requirement_picks_that_capability() {
        let caps = camera(vec![(224, 224), (640, 480)], vec![ColourSpace::Rgb], 30.0);
        let config = derive_common_config(&[vision_req(224, 224, 30.0)], &caps).unwrap();
        match config {
            SensorConfig::Vision {
                width_px,
                height_px,
                rate_hz,
                ..
            } => {
                assert_eq!((width_px, height_px), (224, 224));
                assert_eq!(rate_hz, 30.0);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn unsatisfiable_resolution_is_an_error() {
        let caps = camera(vec![(224, 224)], vec![ColourSpace::Rgb], 30.0);
        assert!(matches!(
            derive_common_config(&[vision_req(416, 416, 10.0)], &caps),
            Err(CoordinatorError::Unsatisfiable(_))
        ));
    }

    #[test]
    fn rgb_preferred_when_rgb_or_gray_needed() {
        let caps = camera(vec![(640, 480)], vec![ColourSpace::Yuv, ColourSpace::Rgb], 30.0);
        let reqs = [
            InputSpec::Vision(VisionSpec {
                width_px: 224,
                height_px: 224,
                colour_space: ColourSpace::Gray,
                rate_hz: 10.0,
            }),
            InputSpec::Vision(VisionSpec {
                width_px: 224,
                height_px: 224,
                colour_space: ColourSpace::Yuv,
                rate_hz: 10.0,
            }),
        ];
        match derive_common_config(&reqs, &caps).unwrap() {
            SensorConfig::Vision { colour_space, .. } => {
                assert_eq!(colour_space, ColourSpace::Rgb)
            }
            _ => panic!(),
        }
    }

    #[test]
    fn yuv_only_camera_serves_rgb_and_gray_models() {
        let caps = camera(vec![(640, 480)], vec![ColourSpace::Yuv], 30.0);
        let reqs = [
            vision_req(320, 320, 10.0),
            InputSpec::Vision(VisionSpec {
                width_px: 224,
                height_px: 224,
                colour_space: ColourSpace::Gray,
                rate_hz: 10.0,
            }),
        ];
        match derive_common_config(&reqs, &caps).unwrap() {
            SensorConfig::Vision { colour_space, .. } => {
                assert_eq!(colour_space, ColourSpace::Yuv)
            }
            _ => panic!(),
        }
    }

    fn manifest(id: &str, rate: f64, max_rate: f64) -> ModelManifest {
        ModelManifest {
            model_id: id.to_string(),
            task: "t".to_string(),
            input: vision_req(64, 64, rate),
            framework_tag: "p".to_string(),
            processor_variants: vec![(crate::manifest::ProcessorKind::Gpu, String::new())],
            feature_pipeline_id: None,
            latency_requirement_ms: 300,
            max_rate_hz: max_rate,
        }
    }

    fn coordinator() -> DataCoordinator {
        let caps = camera(vec![(64, 64)], vec![ColourSpace::Rgb], 30.0);
        DataCoordinator::new(vec![caps], 1, PipelineMode::Shared)
    }

    #[test]
    fn set_rate_above_manifest_max_is_rejected() {
        let mut c = coordinator();
        c.bind_models(&[manifest("m", 10.0, 20.0)]).unwrap();
        assert!(matches!(
            c.set_model_rate("m", 25.0),
            Err(CoordinatorError::RateOutOfRange { .. })
        ));
        assert!(c.set_model_rate("m", 15.0).is_ok());
        assert!(matches!(
            c.set_model_rate("nope", 5.0),
            Err(CoordinatorError::UnknownModel(_))
        ));
    }

    #[test]
    fn deliveries_follow_rate_feedback() {
        // Two models: the faster one sets the sensor rate (30), the slower
        // one's gate passes its declared 10 Hz.
        let mut c = coordinator();
        c.bind_models(&[manifest("fast", 30.0, 30.0), manifest("slow", 10.0, 30.0)])
            .unwrap();
        assert_eq!(c.current_rate("cam0"), Some(30.0));
        let mut fast = 0;
        let mut slow = 0;
        for i in 0..30 {
            let now = VirtualTime(i * 33_333_333);
            let (_, d, _) = c.tick("cam0", now).unwrap();
            fast += d.contains_key("fast") as usize;
            slow += d.contains_key("slow") as usize;
        }
        assert_eq!((fast, slow), (30, 10));

        // Feedback halves the slow model's gate: 5 of the next 30.
        c.set_model_rate("slow", 5.0).unwrap();
        let mut slow = 0;
        for i in 30..60 {
            let now = VirtualTime(i * 33_333_333);
            let (_, d, _) = c.tick("cam0", now).unwrap();
            slow += d.contains_key("slow") as usize;
        }
        assert_eq!(slow, 5);
    }

    #[test]
    fn sensor_rate_tracks_fastest_gate_with_oversampling() {
        let caps = camera(vec![(64, 64)], vec![ColourSpace::Rgb], 30.0);
        let mut c = DataCoordinator::with_oversample(vec![caps], 1, PipelineMode::Shared, 4.0);
        c.bind_models(&[manifest("a", 5.0, 30.0), manifest("b", 5.0, 30.0)])
            .unwrap();
        // 4x oversampling, capped by the 30 Hz capability.
        c.set_model_rate("a", 25.0).unwrap();
        assert_eq!(c.current_rate("cam0"), Some(30.0));
        c.set_model_rate("a", 4.0).unwrap();
        // b still wants 5: 4 * 5 = 20.
        assert_eq!(c.current_rate("cam0"), Some(20.0));
    }

    #[test]
    fn rebuild_is_atomic_on_failure() {
        let mut c = coordinator();
        c.bind_models(&[manifest("m", 10.0, 30.0)]).unwrap();
        let before_cfg = c.sensor_config("cam0").cloned();
        // A model the 64x64 camera cannot serve.
        let err = c.bind_models(&[manifest("big", 10.0, 30.0)].map(|mut m| {
            m.input = vision_req(4096, 4096, 10.0);
            m
        }));
        assert!(err.is_err());
        assert_eq!(c.sensor_config("cam0").cloned(), before_cfg);
        assert!(c.model_rate("big").is_none());
    }
}
