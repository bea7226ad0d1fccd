//! The shared transformation graph (Stage 2).
//!
//! Per-model transformation chains are generated in a canonical order
//! (sample-count reducers, then size reducers, then format converters) and
//! merged by value identity: two nodes coincide exactly when they carry the
//! same transform parameters under the same ancestry. The result is a tree
//! rooted at the sensor whose sinks feed each model its required format.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::clock::VirtualTime;
use crate::manifest::{BitDepth, ColourSpace, InputSpec, ModelId};
use crate::sensor::{AudioWindow, Payload, Sample, SampleKey, SensorConfig};
use crate::transform::{apply_transform, concat_windows, Transform, TransformError};

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("requirement unsatisfiable: {0}")]
    Unsatisfiable(String),
    #[error(transparent)]
    Transform(#[from] TransformError),
}

/// The sample format flowing at a point in the graph.
#[derive(Debug, Clone, PartialEq)]
pub enum StreamFormat {
    Vision {
        width: u32,
        height: u32,
        colour: ColourSpace,
        rate_hz: f64,
    },
    Audio {
        sample_rate_hz: u32,
        bit_depth: BitDepth,
        window_s: f64,
        rate_hz: f64,
    },
}

impl StreamFormat {
    pub fn of_config(config: &SensorConfig) -> StreamFormat {
        match config {
            SensorConfig::Vision {
                width_px,
                height_px,
                colour_space,
                rate_hz,
            } => StreamFormat::Vision {
                width: *width_px,
                height: *height_px,
                colour: *colour_space,
                rate_hz: *rate_hz,
            },
            SensorConfig::Audio {
                sample_rate_hz,
                bit_depth,
                rate_hz,
            } => StreamFormat::Audio {
                sample_rate_hz: *sample_rate_hz,
                bit_depth: *bit_depth,
                window_s: 1.0 / rate_hz,
                rate_hz: *rate_hz,
            },
        }
    }

    pub fn of_requirement(spec: &InputSpec) -> StreamFormat {
        match spec {
            InputSpec::Vision(v) => StreamFormat::Vision {
                width: v.width_px,
                height: v.height_px,
                colour: v.colour_space,
                rate_hz: v.rate_hz,
            },
            InputSpec::Audio(a) => StreamFormat::Audio {
                sample_rate_hz: a.sample_rate_hz,
                bit_depth: a.bit_depth,
                window_s: a.window_s,
                rate_hz: a.rate_hz,
            },
        }
    }

    pub fn rate_hz(&self) -> f64 {
        match self {
            StreamFormat::Vision { rate_hz, .. } | StreamFormat::Audio { rate_hz, .. } => *rate_hz,
        }
    }

    fn apply(&self, t: &Transform) -> StreamFormat {
        let mut out = self.clone();
        match (&mut out, t) {
            (StreamFormat::Vision { rate_hz, .. }, Transform::RateDownsample { target_hz })
            | (StreamFormat::Audio { rate_hz, .. }, Transform::RateDownsample { target_hz }) => {
                *rate_hz = rate_hz.min(*target_hz);
            }
            (StreamFormat::Vision { width, height, .. }, Transform::Resize { width: w, height: h }) => {
                *width = *w;
                *height = *h;
            }
            (StreamFormat::Vision { colour, .. }, Transform::ColourConvert { to }) => {
                *colour = *to;
            }
            (StreamFormat::Audio { sample_rate_hz, .. }, Transform::AudioRateReduce { target_hz }) => {
                *sample_rate_hz = *target_hz;
            }
            (StreamFormat::Audio { bit_depth, .. }, Transform::BitDepthReduce { depth }) => {
                *bit_depth = *depth;
            }
            (
                StreamFormat::Audio {
                    window_s, rate_hz, ..
                },
                Transform::AggregateWindow { seconds },
            ) => {
                let k = (seconds / *window_s).round();
                *rate_hz /= k;
                *window_s = *seconds;
            }
            _ => {}
        }
        out
    }

    /// Payload-level match, ignoring the rate dimension (delivery rates are
    /// enforced by gates, not by payload shape).
    pub fn payload_matches(&self, payload: &Payload) -> bool {
        match (self, payload) {
            (
                StreamFormat::Vision {
                    width,
                    height,
                    colour,
                    ..
                },
                Payload::Frame(f),
            ) => f.width == *width && f.height == *height && f.colour == *colour,
            (
                StreamFormat::Audio {
                    sample_rate_hz,
                    bit_depth,
                    window_s,
                    ..
                },
                Payload::Audio(w),
            ) => {
                w.sample_rate_hz == *sample_rate_hz
                    && w.bit_depth == *bit_depth
                    && (w.window_s - window_s).abs() < 1e-9
            }
            _ => false,
        }
    }
}

/// Generate the canonical transformation chain closing the gap between a
/// sensor configuration and one model's requirement.
pub fn canonical_chain(config: &SensorConfig, spec: &InputSpec) -> Result<Vec<Transform>, GraphError> {
    let mut chain = Vec::new();
    match (config, spec) {
        (
            SensorConfig::Vision {
                width_px,
                height_px,
                colour_space,
                rate_hz,
            },
            InputSpec::Vision(v),
        ) => {
            if v.rate_hz < *rate_hz - 1e-9 {
                chain.push(Transform::RateDownsample {
                    target_hz: v.rate_hz,
                });
            }
            if v.width_px > *width_px || v.height_px > *height_px {
                return Err(GraphError::Unsatisfiable(format!(
                    "model needs {}x{} but sensor provides {}x{}",
                    v.width_px, v.height_px, width_px, height_px
                )));
            }
            let resized = (v.width_px, v.height_px) != (*width_px, *height_px);
            if resized {
                chain.push(Transform::Resize {
                    width: v.width_px,
                    height: v.height_px,
                });
            }
            // A chain that touches the buffer always ends with the node that
            // re-encodes into the model's declared colour space, so every
            // sink states its exact delivery format.
            if !convertible(*colour_space, v.colour_space) {
                return Err(GraphError::Unsatisfiable(format!(
                    "{:?} cannot be converted to {:?}",
                    colour_space, v.colour_space
                )));
            }
            if v.colour_space != *colour_space || resized {
                chain.push(Transform::ColourConvert {
                    to: v.colour_space,
                });
            }
        }
        (
            SensorConfig::Audio {
                sample_rate_hz,
                bit_depth,
                rate_hz,
            },
            InputSpec::Audio(a),
        ) => {
            let base_window = 1.0 / rate_hz;
            let k = (a.window_s / base_window).round().max(1.0);
            if (k * base_window - a.window_s).abs() > 1e-6 {
                return Err(GraphError::Unsatisfiable(format!(
                    "window of {}s is not a whole number of {}s sensor windows",
                    a.window_s, base_window
                )));
            }
            let window_rate_needed = a.rate_hz * k;
            if window_rate_needed > *rate_hz + 1e-9 {
                return Err(GraphError::Unsatisfiable(format!(
                    "needs {window_rate_needed} windows/s but sensor provides {rate_hz}"
                )));
            }
            if window_rate_needed < *rate_hz - 1e-9 {
                chain.push(Transform::RateDownsample {
                    target_hz: window_rate_needed,
                });
            }
            if a.sample_rate_hz > *sample_rate_hz {
                return Err(GraphError::Unsatisfiable(format!(
                    "model needs {} Hz audio but sensor provides {}",
                    a.sample_rate_hz, sample_rate_hz
                )));
            }
            if a.sample_rate_hz < *sample_rate_hz {
                chain.push(Transform::AudioRateReduce {
                    target_hz: a.sample_rate_hz,
                });
            }
            if a.bit_depth.bits() > bit_depth.bits() {
                return Err(GraphError::Unsatisfiable(format!(
                    "model needs {}-bit audio but sensor provides {}-bit",
                    a.bit_depth.bits(),
                    bit_depth.bits()
                )));
            }
            if a.bit_depth != *bit_depth {
                chain.push(Transform::BitDepthReduce { depth: a.bit_depth });
            }
            if k > 1.0 {
                chain.push(Transform::AggregateWindow {
                    seconds: a.window_s,
                });
            }
        }
        _ => {
            return Err(GraphError::Unsatisfiable(
                "sensor modality does not match requirement".to_string(),
            ))
        }
    }
    Ok(chain)
}

/// Colour lattice: YUV<->RGB both ways, GRAY derivable from either (the luma
/// plane), GRAY terminal.
fn convertible(from: ColourSpace, to: ColourSpace) -> bool {
    from == to || from != ColourSpace::Gray
}

#[derive(Debug, Clone)]
pub struct GraphNode {
    pub transform: Transform,
    pub parent: Option<usize>,
    /// Stream format after this node.
    pub format: StreamFormat,
}

/// An immutable transformation tree; mutable execution state lives in
/// [`GraphState`] so deployments can swap graphs atomically.
#[derive(Debug, Clone)]
pub struct TransformGraph {
    pub nodes: Vec<GraphNode>,
    children: Vec<Vec<usize>>,
    root_children: Vec<usize>,
    /// Sink node per model; `None` means the root stream already conforms.
    pub sinks: BTreeMap<ModelId, Option<usize>>,
    pub root_format: StreamFormat,
}

impl TransformGraph {
    /// Build the merged, shared graph for all requirements.
    pub fn build_shared(
        requirements: &BTreeMap<ModelId, InputSpec>,
        config: &SensorConfig,
    ) -> Result<TransformGraph, GraphError> {
        Self::build(requirements, config, true)
    }

    /// Build one chain per model with no merging; the unshared layout used by
    /// the vanilla baseline and for operation-count comparisons.
    pub fn build_individual(
        requirements: &BTreeMap<ModelId, InputSpec>,
        config: &SensorConfig,
    ) -> Result<TransformGraph, GraphError> {
        Self::build(requirements, config, false)
    }

    fn build(
        requirements: &BTreeMap<ModelId, InputSpec>,
        config: &SensorConfig,
        merge: bool,
    ) -> Result<TransformGraph, GraphError> {
        let root_format = StreamFormat::of_config(config);
        let mut graph = TransformGraph {
            nodes: Vec::new(),
            children: Vec::new(),
            root_children: Vec::new(),
            sinks: BTreeMap::new(),
            root_format: root_format.clone(),
        };
        let mut index: BTreeMap<(Option<usize>, (u8, u64, u64)), usize> = BTreeMap::new();
        for (model_id, spec) in requirements {
            let chain = canonical_chain(config, spec)?;
            let mut parent: Option<usize> = None;
            let mut format = root_format.clone();
            for t in chain {
                format = format.apply(&t);
                let key = (parent, t.identity_key());
                let id = match index.get(&key) {
                    Some(id) if merge => *id,
                    _ => {
                        let id = graph.nodes.len();
                        graph.nodes.push(GraphNode {
                            transform: t,
                            parent,
                            format: format.clone(),
                        });
                        graph.children.push(Vec::new());
                        match parent {
                            Some(p) => graph.children[p].push(id),
                            None => graph.root_children.push(id),
                        }
                        if merge {
                            index.insert(key, id);
                        }
                        id
                    }
                };
                parent = Some(id);
            }
            // Exact-format check at the sink.
            let sink_format = match parent {
                Some(id) => &graph.nodes[id].format,
                None => &root_format,
            };
            let want = StreamFormat::of_requirement(spec);
            let payload_ok = match (sink_format, &want) {
                (
                    StreamFormat::Vision {
                        width: w1,
                        height: h1,
                        colour: c1,
                        ..
                    },
                    StreamFormat::Vision {
                        width: w2,
                        height: h2,
                        colour: c2,
                        ..
                    },
                ) => w1 == w2 && h1 == h2 && c1 == c2,
                (
                    StreamFormat::Audio {
                        sample_rate_hz: s1,
                        bit_depth: d1,
                        window_s: ws1,
                        ..
                    },
                    StreamFormat::Audio {
                        sample_rate_hz: s2,
                        bit_depth: d2,
                        window_s: ws2,
                        ..
                    },
                ) => s1 == s2 && d1 == d2 && (ws1 - ws2).abs() < 1e-9,
                _ => false,
            };
            if !payload_ok || sink_format.rate_hz() < want.rate_hz() - 1e-9 {
                return Err(GraphError::Unsatisfiable(format!(
                    "chain for model `{model_id}` does not reach its required format"
                )));
            }
            graph.sinks.insert(model_id.clone(), parent);
        }
        Ok(graph)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Total nodes across per-model chains if nothing were shared.
    pub fn unshared_node_count(requirements: &BTreeMap<ModelId, InputSpec>, config: &SensorConfig) -> Result<usize, GraphError> {
        let mut total = 0;
        for spec in requirements.values() {
            total += canonical_chain(config, spec)?.len();
        }
        Ok(total)
    }

    /// Deterministic textual rendering for `pipeline-plan`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("root: {}\n", describe_format(&self.root_format)));
        let mut sink_names: BTreeMap<Option<usize>, Vec<&str>> = BTreeMap::new();
        for (m, sink) in &self.sinks {
            sink_names.entry(*sink).or_default().push(m);
        }
        fn walk(
            graph: &TransformGraph,
            node: usize,
            depth: usize,
            sink_names: &BTreeMap<Option<usize>, Vec<&str>>,
            out: &mut String,
        ) {
            let pad = "  ".repeat(depth);
            let tag = match sink_names.get(&Some(node)) {
                Some(models) => format!("  -> [{}]", models.join(", ")),
                None => String::new(),
            };
            out.push_str(&format!(
                "{pad}{}{}\n",
                graph.nodes[node].transform.describe(),
                tag
            ));
            for child in &graph.children[node] {
                walk(graph, *child, depth + 1, sink_names, out);
            }
        }
        if let Some(models) = sink_names.get(&None) {
            out.push_str(&format!("  (root) -> [{}]\n", models.join(", ")));
        }
        for root in &self.root_children {
            walk(self, *root, 1, &sink_names, &mut out);
        }
        out
    }
}

fn describe_format(f: &StreamFormat) -> String {
    match f {
        StreamFormat::Vision {
            width,
            height,
            colour,
            rate_hz,
        } => format!("vision {width}x{height} {colour:?} @{rate_hz}Hz"),
        StreamFormat::Audio {
            sample_rate_hz,
            bit_depth,
            window_s,
            rate_hz,
        } => format!(
            "audio {sample_rate_hz}Hz {}bit {window_s}s @{rate_hz}Hz",
            bit_depth.bits()
        ),
    }
}

/// Phase accumulator gate: admits a sample whenever the integer part of the
/// accumulated out/in ratio advances. Rates are quantized to milli-hertz and
/// accumulated in integers, so exact ratios (10 of 30, every 2nd of 10) stay
/// exact over arbitrarily long runs and under mid-stream rate changes.
#[derive(Debug, Clone)]
pub struct RateGate {
    out_mhz: u64,
    in_mhz: u64,
    acc: u64,
    last: u64,
}

fn quantize_mhz(rate_hz: f64) -> u64 {
    ((rate_hz * 1000.0).round() as u64).max(1)
}

impl RateGate {
    pub fn new(rate_out: f64, rate_in: f64) -> RateGate {
        RateGate {
            out_mhz: quantize_mhz(rate_out),
            in_mhz: quantize_mhz(rate_in),
            acc: 0,
            last: 0,
        }
    }

    pub fn rate_out(&self) -> f64 {
        self.out_mhz as f64 / 1000.0
    }

    pub fn rate_in(&self) -> f64 {
        self.in_mhz as f64 / 1000.0
    }

    pub fn set_rate_out(&mut self, rate_hz: f64) {
        self.out_mhz = quantize_mhz(rate_hz);
    }

    pub fn set_rate_in(&mut self, rate_hz: f64) {
        self.in_mhz = quantize_mhz(rate_hz);
        self.last = self.acc / self.in_mhz;
    }

    pub fn admit(&mut self) -> bool {
        self.acc += self.out_mhz;
        let fl = self.acc / self.in_mhz;
        let pass = fl > self.last;
        self.last = fl;
        pass
    }
}

#[derive(Debug, Clone)]
enum NodeState {
    Pure,
    Gate(RateGate),
    Aggregate {
        need: usize,
        buffer: Vec<(SampleKey, VirtualTime, AudioWindow)>,
    },
}

/// Mutable execution state for one graph: structural gate accumulators,
/// aggregation buffers and the per-model delivery gates.
#[derive(Debug, Clone)]
pub struct GraphState {
    nodes: Vec<NodeState>,
    model_gates: BTreeMap<ModelId, RateGate>,
}

/// Which nodes ran for one input sample, in execution order; each executed
/// node appears exactly once.
pub type ExecutionTrace = Vec<usize>;

impl GraphState {
    /// Initial state. Model gates start at each model's declared input rate.
    pub fn new(graph: &TransformGraph, initial_rates: &BTreeMap<ModelId, f64>) -> GraphState {
        let nodes = graph
            .nodes
            .iter()
            .map(|n| {
                let rate_in = match n.parent {
                    Some(p) => graph.nodes[p].format.rate_hz(),
                    None => graph.root_format.rate_hz(),
                };
                match &n.transform {
                    Transform::RateDownsample { target_hz } => {
                        NodeState::Gate(RateGate::new(*target_hz, rate_in))
                    }
                    Transform::AggregateWindow { seconds } => {
                        let window_in = match n.parent {
                            Some(p) => match &graph.nodes[p].format {
                                StreamFormat::Audio { window_s, .. } => *window_s,
                                _ => 1.0,
                            },
                            None => match &graph.root_format {
                                StreamFormat::Audio { window_s, .. } => *window_s,
                                _ => 1.0,
                            },
                        };
                        NodeState::Aggregate {
                            need: (seconds / window_in).round().max(1.0) as usize,
                            buffer: Vec::new(),
                        }
                    }
                    _ => NodeState::Pure,
                }
            })
            .collect();
        let model_gates = graph
            .sinks
            .keys()
            .map(|m| {
                let sink_rate = match graph.sinks[m] {
                    Some(id) => graph.nodes[id].format.rate_hz(),
                    None => graph.root_format.rate_hz(),
                };
                let init = initial_rates.get(m).copied().unwrap_or(sink_rate);
                (m.clone(), RateGate::new(init.min(sink_rate), sink_rate))
            })
            .collect();
        GraphState {
            nodes,
            model_gates,
        }
    }

    /// Update one model's delivery rate; takes effect from the next sample.
    pub fn set_model_rate(&mut self, model: &str, rate_hz: f64) -> bool {
        match self.model_gates.get_mut(model) {
            Some(gate) => {
                gate.set_rate_out(rate_hz.min(gate.rate_in()));
                true
            }
            None => false,
        }
    }

    pub fn model_rate(&self, model: &str) -> Option<f64> {
        self.model_gates.get(model).map(|g| g.rate_out())
    }

    /// Adjust for a sensor rate change: gates reading the root stream see the
    /// new input rate from the next sample. Model gates capped by the old
    /// sensor rate are re-opened up to `requested` per model.
    pub fn set_root_rate(
        &mut self,
        graph: &TransformGraph,
        rate_hz: f64,
        requested: &BTreeMap<ModelId, f64>,
    ) {
        for (id, node) in graph.nodes.iter().enumerate() {
            if node.parent.is_none() {
                if let NodeState::Gate(g) = &mut self.nodes[id] {
                    g.set_rate_in(rate_hz);
                }
            }
        }
        for (model, sink) in &graph.sinks {
            if sink.is_none() {
                if let Some(g) = self.model_gates.get_mut(model.as_str()) {
                    g.set_rate_in(rate_hz);
                    if let Some(want) = requested.get(model.as_str()) {
                        g.set_rate_out(want.min(rate_hz));
                    }
                }
            }
        }
    }
}

/// Execute the graph on one root sample. Returns per-model deliveries and the
/// trace of executed nodes. A model's branch is skipped entirely when its
/// delivery gate rejects this sample.
pub fn execute_graph(
    graph: &TransformGraph,
    state: &mut GraphState,
    sample: &Sample,
) -> Result<(BTreeMap<ModelId, Sample>, ExecutionTrace), GraphError> {
    if !graph.root_format.payload_matches(&sample.payload) {
        return Err(GraphError::Transform(TransformError::FormatMismatch(
            "sample does not match the graph root format".to_string(),
        )));
    }

    let n = graph.nodes.len();
    // Pass 1: gating skeleton. `arrives[i]` = this sample structurally reaches
    // node i's output (gates admit, aggregates emit).
    let mut arrives = vec![false; n];
    for id in 0..n {
        let parent_ok = match graph.nodes[id].parent {
            Some(p) => arrives[p],
            None => true,
        };
        if !parent_ok {
            continue;
        }
        arrives[id] = match &mut state.nodes[id] {
            NodeState::Pure => true,
            NodeState::Gate(gate) => gate.admit(),
            NodeState::Aggregate { need, buffer } => buffer.len() + 1 == *need,
        };
    }

    // Due models: sink arrival advances the delivery gate.
    let mut due: BTreeMap<ModelId, Option<usize>> = BTreeMap::new();
    for (model, sink) in &graph.sinks {
        let arrived = match sink {
            Some(id) => arrives[*id],
            None => true,
        };
        if arrived && state.model_gates.get_mut(model.as_str()).expect("gate").admit() {
            due.insert(model.clone(), *sink);
        }
    }

    // Pass 2: mark which nodes must execute. Aggregates buffer payloads, so a
    // node feeding a live aggregate runs even when no sink is due this sample.
    let mut needed = vec![false; n];
    let mark_up = |mut node: Option<usize>, needed: &mut Vec<bool>| {
        while let Some(id) = node {
            if needed[id] {
                break;
            }
            needed[id] = true;
            node = graph.nodes[id].parent;
        }
    };
    for sink in due.values() {
        mark_up(*sink, &mut needed);
    }
    for id in 0..n {
        if let NodeState::Aggregate { .. } = state.nodes[id] {
            let parent_ok = match graph.nodes[id].parent {
                Some(p) => arrives[p],
                None => true,
            };
            let has_models = graph.sinks.values().flatten().any(|s| {
                // any sink at-or-below this aggregate
                let mut cur = Some(*s);
                while let Some(c) = cur {
                    if c == id {
                        return true;
                    }
                    cur = graph.nodes[c].parent;
                }
                false
            });
            if parent_ok && has_models {
                mark_up(Some(id), &mut needed);
            }
        }
    }

    // Pass 3: execute payloads down the tree in node order.
    let mut outputs: Vec<Option<Sample>> = vec![None; n];
    let mut trace = Vec::new();
    for id in 0..n {
        if !needed[id] {
            continue;
        }
        let parent_sample = match graph.nodes[id].parent {
            Some(p) => match &outputs[p] {
                Some(s) => s.clone(),
                None => continue, // upstream gated off or aggregate not emitting
            },
            None => sample.clone(),
        };
        match &mut state.nodes[id] {
            NodeState::Gate(_) => {
                if arrives[id] {
                    trace.push(id);
                    outputs[id] = Some(parent_sample);
                }
            }
            NodeState::Aggregate { need, buffer } => {
                if let Payload::Audio(w) = &*parent_sample.payload {
                    buffer.push((
                        parent_sample.key.clone(),
                        parent_sample.acquired_at,
                        w.clone(),
                    ));
                    trace.push(id);
                    if buffer.len() == *need {
                        let windows: Vec<AudioWindow> =
                            buffer.iter().map(|(_, _, w)| w.clone()).collect();
                        let (key, acquired_at, _) = buffer[0].clone();
                        buffer.clear();
                        outputs[id] = Some(Sample {
                            key,
                            acquired_at,
                            payload: Arc::new(Payload::Audio(concat_windows(&windows))),
                        });
                    }
                }
            }
            NodeState::Pure => {
                trace.push(id);
                outputs[id] = Some(apply_transform(&graph.nodes[id].transform, &parent_sample)?);
            }
        }
    }

    let mut deliveries = BTreeMap::new();
    for (model, sink) in due {
        let delivered = match sink {
            Some(id) => outputs[id].clone(),
            None => Some(sample.clone()),
        };
        if let Some(s) = delivered {
            deliveries.insert(model, s);
        }
    }
    Ok((deliveries, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::VisionSpec;
    use crate::sensor::{generate_payload, SampleKey};

    fn camera_30hz_yuv() -> SensorConfig {
        SensorConfig::Vision {
            width_px: 640,
            height_px: 480,
            colour_space: ColourSpace::Yuv,
            rate_hz: 30.0,
        }
    }

    fn vision_req(w: u32, h: u32, colour: ColourSpace, rate: f64) -> InputSpec {
        InputSpec::Vision(VisionSpec {
            width_px: w,
            height_px: h,
            colour_space: colour,
            rate_hz: rate,
        })
    }

    /// The four-model shared-pipeline scenario: a 30 Hz 640x480 YUV camera
    /// feeding four 10 Hz models with different resolution/colour needs.
    pub(crate) fn four_model_requirements() -> BTreeMap<ModelId, InputSpec> {
        BTreeMap::from([
            ("m1".to_string(), vision_req(320, 320, ColourSpace::Rgb, 10.0)),
            ("m2".to_string(), vision_req(320, 320, ColourSpace::Yuv, 10.0)),
            ("m3".to_string(), vision_req(224, 224, ColourSpace::Rgb, 10.0)),
            ("m4".to_string(), vision_req(224, 224, ColourSpace::Gray, 10.0)),
        ])
    }

    fn root_sample(seq: u64, config: &SensorConfig) -> Sample {
        Sample {
            key: SampleKey {
                sensor_id: "cam0".to_string(),
                seq,
            },
            acquired_at: VirtualTime(seq * 33_333_333),
            payload: Arc::new(generate_payload(9, "cam0", seq, config)),
        }
    }

    #[test]
    fn shared_four_model_graph_has_seven_nodes_vs_twelve() {
        let reqs = four_model_requirements();
        let config = camera_30hz_yuv();
        let shared = TransformGraph::build_shared(&reqs, &config).unwrap();
        assert_eq!(shared.node_count(), 7);
        let individual = TransformGraph::build_individual(&reqs, &config).unwrap();
        assert_eq!(individual.node_count(), 12);
        assert_eq!(
            TransformGraph::unshared_node_count(&reqs, &config).unwrap(),
            12
        );
    }

    #[test]
    fn zero_transform_graph_delivers_root_sample() {
        let config = camera_30hz_yuv();
        let reqs = BTreeMap::from([(
            "m".to_string(),
            vision_req(640, 480, ColourSpace::Yuv, 30.0),
        )]);
        let graph = TransformGraph::build_shared(&reqs, &config).unwrap();
        assert_eq!(graph.node_count(), 0);
        let mut state = GraphState::new(&graph, &BTreeMap::new());
        let s = root_sample(1, &config);
        let (deliveries, trace) = execute_graph(&graph, &mut state, &s).unwrap();
        assert!(trace.is_empty());
        assert_eq!(deliveries["m"].payload, s.payload);
    }

    #[test]
    fn identical_specs_share_one_sink() {
        let config = camera_30hz_yuv();
        let reqs = BTreeMap::from([
            ("a".to_string(), vision_req(320, 320, ColourSpace::Yuv, 30.0)),
            ("b".to_string(), vision_req(320, 320, ColourSpace::Yuv, 30.0)),
        ]);
        let graph = TransformGraph::build_shared(&reqs, &config).unwrap();
        // resize + format finalizer, shared by both models.
        assert_eq!(graph.node_count(), 2);
        assert_eq!(graph.sinks["a"], graph.sinks["b"]);
    }

    #[test]
    fn due_sample_executes_each_shared_node_once() {
        let reqs = four_model_requirements();
        let config = camera_30hz_yuv();
        let graph = TransformGraph::build_shared(&reqs, &config).unwrap();
        let mut state = GraphState::new(&graph, &BTreeMap::new());
        // 30 Hz root with 10 Hz branches: every third sample is due.
        let mut due_traces = Vec::new();
        for seq in 1..=6 {
            let (deliveries, trace) = execute_graph(&graph, &mut state, &root_sample(seq, &config)).unwrap();
            if !deliveries.is_empty() {
                assert_eq!(deliveries.len(), 4);
                due_traces.push(trace);
            }
        }
        assert_eq!(due_traces.len(), 2);
        for trace in due_traces {
            assert_eq!(trace.len(), 7);
            let mut sorted = trace.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), 7, "node executed twice: {trace:?}");
        }
    }

    #[test]
    fn shared_outputs_match_independent_chain_execution() {
        let reqs = four_model_requirements();
        let config = camera_30hz_yuv();
        let graph = TransformGraph::build_shared(&reqs, &config).unwrap();
        let mut state = GraphState::new(&graph, &BTreeMap::new());
        for seq in 1..=12 {
            let s = root_sample(seq, &config);
            let (deliveries, _) = execute_graph(&graph, &mut state, &s).unwrap();
            for (model, delivered) in deliveries {
                // Oracle: fold the canonical chain directly over the sample.
                let chain = canonical_chain(&config, &reqs[&model]).unwrap();
                let mut expect = s.clone();
                for t in &chain {
                    expect = apply_transform(t, &expect).unwrap();
                }
                assert_eq!(delivered.payload, expect.payload, "model {model} seq {seq}");
            }
        }
    }

    #[test]
    fn model_rate_gate_halves_deliveries() {
        let config = camera_30hz_yuv();
        let reqs = BTreeMap::from([(
            "m".to_string(),
            vision_req(640, 480, ColourSpace::Yuv, 30.0),
        )]);
        let graph = TransformGraph::build_shared(&reqs, &config).unwrap();
        let mut state = GraphState::new(&graph, &BTreeMap::new());
        state.set_model_rate("m", 15.0);
        let mut delivered = 0;
        for seq in 1..=100 {
            let (d, _) = execute_graph(&graph, &mut state, &root_sample(seq, &config)).unwrap();
            delivered += d.len();
        }
        assert_eq!(delivered, 50);
    }

    #[test]
    fn ordering_invariant_rate_nodes_first() {
        // Sample reducers come first: every ancestor of a rate node is a
        // rate node.
        let reqs = four_model_requirements();
        let graph = TransformGraph::build_shared(&reqs, &camera_30hz_yuv()).unwrap();
        for (id, node) in graph.nodes.iter().enumerate() {
            if !matches!(node.transform, Transform::RateDownsample { .. }) {
                continue;
            }
            let mut cur = graph.nodes[id].parent;
            while let Some(c) = cur {
                assert!(
                    matches!(graph.nodes[c].transform, Transform::RateDownsample { .. }),
                    "payload transform above a rate node"
                );
                cur = graph.nodes[c].parent;
            }
        }
    }

    #[test]
    fn format_mismatch_is_rejected() {
        let config = camera_30hz_yuv();
        let reqs = four_model_requirements();
        let graph = TransformGraph::build_shared(&reqs, &config).unwrap();
        let mut state = GraphState::new(&graph, &BTreeMap::new());
        let other = SensorConfig::Vision {
            width_px: 320,
            height_px: 240,
            colour_space: ColourSpace::Rgb,
            rate_hz: 30.0,
        };
        let bad = root_sample(1, &other);
        assert!(execute_graph(&graph, &mut state, &bad).is_err());
    }

    #[test]
    fn audio_aggregation_concatenates_contiguous_windows() {
        let config = SensorConfig::Audio {
            sample_rate_hz: 8000,
            bit_depth: BitDepth::B16,
            rate_hz: 4.0,
        };
        let reqs = BTreeMap::from([(
            "kws".to_string(),
            InputSpec::Audio(crate::manifest::AudioSpec {
                sample_rate_hz: 8000,
                bit_depth: BitDepth::B16,
                window_s: 1.0,
                rate_hz: 1.0,
            }),
        )]);
        let graph = TransformGraph::build_shared(&reqs, &config).unwrap();
        let mut state = GraphState::new(&graph, &BTreeMap::new());
        let mut deliveries = Vec::new();
        for seq in 1..=8 {
            let s = Sample {
                key: SampleKey {
                    sensor_id: "mic0".to_string(),
                    seq,
                },
                acquired_at: VirtualTime(seq * 250_000_000),
                payload: Arc::new(generate_payload(3, "mic0", seq, &config)),
            };
            let (d, _) = execute_graph(&graph, &mut state, &s).unwrap();
            deliveries.extend(d.into_values());
        }
        assert_eq!(deliveries.len(), 2);
        match &*deliveries[0].payload {
            Payload::Audio(w) => {
                assert_eq!(w.samples.len(), 8000);
                assert!((w.window_s - 1.0).abs() < 1e-9);
            }
            _ => panic!("expected audio"),
        }
        // Aggregate output carries the first contributing window's key.
        assert_eq!(deliveries[0].key.seq, 1);
        assert_eq!(deliveries[1].key.seq, 5);
    }
}
