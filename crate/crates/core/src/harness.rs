//! Workload harness: runs a workload under the vanilla, static-batch and
//! adaptive policies on the virtual clock and reports throughput meeting the
//! latency requirement, hit ratios, batch-size selections and processor
//! utilization. Runs are bit-reproducible for a given (spec, seed, config).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::VirtualTime;
use crate::config::{RuntimeConfig, SensorSpec};
use crate::manifest::{
    BitDepth, ColourSpace, DeploymentBundle, InputSpec, ModelManifest, ProcessorKind, VisionSpec,
};
use crate::runtime::{Policy, Runtime};
use crate::scheduler::SchedulerConfig;
use crate::server::{ExecutorProfile, ProcessorModel};

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("malformed workload: {0}")]
    Malformed(String),
    #[error("workload has no models")]
    Empty,
    #[error("deploy failed: {0}")]
    Deploy(String),
    #[error(transparent)]
    Runtime(#[from] crate::runtime::RuntimeError),
}

/// One model entry in a workload.
#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct WorkloadModel {
    pub id: String,
    /// Executor profile name; doubles as the manifest framework tag.
    pub profile: String,
    pub processors: Vec<ProcessorKind>,
    pub latency_requirement_ms: u64,
    #[serde(default = "default_max_rate")]
    pub max_rate_hz: f64,
    pub input: WorkloadInput,
    #[serde(default)]
    pub feature_pipeline: Option<String>,
}

fn default_max_rate() -> f64 {
    100.0
}

/// Input requirement in workload files; the vision fields default to a small
/// RGB frame.
#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct WorkloadInput {
    #[serde(default = "default_modality")]
    pub modality: String,
    #[serde(default = "default_dim")]
    pub width_px: u32,
    #[serde(default = "default_dim")]
    pub height_px: u32,
    #[serde(default)]
    pub colour_space: Option<ColourSpace>,
    #[serde(default)]
    pub sample_rate_hz: Option<u32>,
    #[serde(default)]
    pub bit_depth: Option<u32>,
    #[serde(default)]
    pub window_s: Option<f64>,
    pub rate_hz: f64,
}

fn default_modality() -> String {
    "vision".to_string()
}

fn default_dim() -> u32 {
    64
}

impl WorkloadInput {
    pub fn vision(width: u32, height: u32, rate_hz: f64) -> WorkloadInput {
        WorkloadInput {
            modality: "vision".to_string(),
            width_px: width,
            height_px: height,
            colour_space: Some(ColourSpace::Rgb),
            sample_rate_hz: None,
            bit_depth: None,
            window_s: None,
            rate_hz,
        }
    }

    pub fn audio(sample_rate_hz: u32, window_s: f64, rate_hz: f64) -> WorkloadInput {
        WorkloadInput {
            modality: "audio".to_string(),
            width_px: 0,
            height_px: 0,
            colour_space: None,
            sample_rate_hz: Some(sample_rate_hz),
            bit_depth: Some(16),
            window_s: Some(window_s),
            rate_hz,
        }
    }

    fn to_spec(&self) -> Result<InputSpec, WorkloadError> {
        match self.modality.as_str() {
            "vision" => Ok(InputSpec::Vision(VisionSpec {
                width_px: self.width_px,
                height_px: self.height_px,
                colour_space: self.colour_space.unwrap_or(ColourSpace::Rgb),
                rate_hz: self.rate_hz,
            })),
            "audio" => Ok(InputSpec::Audio(crate::manifest::AudioSpec {
                sample_rate_hz: self
                    .sample_rate_hz
                    .ok_or_else(|| WorkloadError::Malformed("audio input needs sample_rate_hz".into()))?,
                bit_depth: BitDepth::from_bits(self.bit_depth.unwrap_or(16))
                    .ok_or_else(|| WorkloadError::Malformed("bad bit depth".into()))?,
                window_s: self
                    .window_s
                    .ok_or_else(|| WorkloadError::Malformed("audio input needs window_s".into()))?,
                rate_hz: self.rate_hz,
            })),
            other => Err(WorkloadError::Malformed(format!("unknown modality `{other}`"))),
        }
    }
}

/// A complete benchmark workload: models, sensor topology, processor
/// topology and duration.
#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct WorkloadSpec {
    pub name: String,
    pub duration_s: f64,
    #[serde(rename = "model")]
    pub models: Vec<WorkloadModel>,
    #[serde(default, rename = "sensor")]
    pub sensors: Vec<SensorSpec>,
    #[serde(default, rename = "processor")]
    pub processors: Vec<ProcessorModel>,
    #[serde(default)]
    pub scheduler: Option<SchedulerConfig>,
    /// Overrides the policy's default caching behavior when set.
    #[serde(default)]
    pub feature_caching: Option<bool>,
}

impl WorkloadSpec {
    pub fn from_toml(text: &str) -> Result<WorkloadSpec, WorkloadError> {
        let spec: WorkloadSpec =
            toml::from_str(text).map_err(|e| WorkloadError::Malformed(e.to_string()))?;
        if spec.models.is_empty() {
            return Err(WorkloadError::Empty);
        }
        if spec.duration_s <= 0.0 {
            return Err(WorkloadError::Malformed("duration_s must be positive".into()));
        }
        Ok(spec)
    }

    pub fn runtime_config(&self) -> Result<RuntimeConfig, WorkloadError> {
        let mut cfg = RuntimeConfig::default();
        if !self.processors.is_empty() {
            cfg.processors = self.processors.clone();
            cfg.placement.tie_break = vec![ProcessorKind::Gpu, ProcessorKind::Tpu, ProcessorKind::Cpu];
        }
        if !self.sensors.is_empty() {
            cfg.sensors = self.sensors.clone();
        }
        if let Some(s) = &self.scheduler {
            cfg.scheduler = s.clone();
        }
        Ok(cfg)
    }

    pub fn bundle(&self) -> Result<DeploymentBundle, WorkloadError> {
        let mut manifests = Vec::new();
        for m in &self.models {
            manifests.push(ModelManifest {
                model_id: m.id.clone(),
                task: m.profile.clone(),
                input: m.input.to_spec()?,
                framework_tag: m.profile.clone(),
                processor_variants: m.processors.iter().map(|k| (*k, String::new())).collect(),
                feature_pipeline_id: m.feature_pipeline.clone(),
                latency_requirement_ms: m.latency_requirement_ms,
                max_rate_hz: m.max_rate_hz,
            });
        }
        Ok(DeploymentBundle {
            manifests,
            codelet: BTreeMap::new(),
            functions: Vec::new(),
        })
    }
}

/// Maximum batch size whose isolated end-to-end latency meets the
/// requirement; 1 when even a single sample violates it. "Isolated" means an
/// otherwise idle processor, so the contention multiplier is exactly one and
/// the measured latency equals the profile's batch latency.
pub fn profile_static(profile: &ExecutorProfile, requirement_ms: f64, max_batch: u32) -> u32 {
    let mut best = 1;
    for b in 1..=max_batch {
        if profile.latency_ms(b) <= requirement_ms {
            best = b;
        } else {
            break;
        }
    }
    best
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelReport {
    pub generated: u64,
    pub dispatched: u64,
    pub discarded: u64,
    pub still_queued: u64,
    pub completed: u64,
    pub hits: u64,
    pub late: u64,
    pub hit_ratio: f64,
    pub throughput_hits_per_s: f64,
    pub mean_latency_ms: f64,
    pub batch_final: u32,
    pub batch_most_selected: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsReport {
    pub workload: String,
    pub policy: String,
    pub seed: u64,
    pub config_hash: String,
    pub duration_s: f64,
    pub ops_executed: u64,
    pub feature_computes: u64,
    pub feature_hits: u64,
    pub models: BTreeMap<String, ModelReport>,
    /// Aggregate busy time per processor as a fraction of the run.
    pub processors: BTreeMap<String, f64>,
}

impl MetricsReport {
    pub fn total_throughput(&self) -> f64 {
        self.models.values().map(|m| m.throughput_hits_per_s).sum()
    }

    /// Canonical machine-readable rows; golden files pin this format.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "workload={} policy={} seed={} config={} duration_s={:.3}\n",
            self.workload, self.policy, self.seed, self.config_hash, self.duration_s
        ));
        out.push_str(&format!(
            "ops_executed={} feature_computes={} feature_hits={}\n",
            self.ops_executed, self.feature_computes, self.feature_hits
        ));
        for (id, m) in &self.models {
            out.push_str(&format!(
                "model={id} generated={} dispatched={} discarded={} queued={} completed={} hits={} late={} hit_ratio={:.4} throughput_hits_per_s={:.4} mean_latency_ms={:.3} batch_final={} batch_most={}\n",
                m.generated,
                m.dispatched,
                m.discarded,
                m.still_queued,
                m.completed,
                m.hits,
                m.late,
                m.hit_ratio,
                m.throughput_hits_per_s,
                m.mean_latency_ms,
                m.batch_final,
                m.batch_most_selected,
            ));
        }
        for (kind, busy) in &self.processors {
            out.push_str(&format!("proc={kind} busy_ratio={busy:.4}\n"));
        }
        out
    }

    /// Human-readable table.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{} / {} (seed {}, {:.1}s virtual)\n",
            self.workload, self.policy, self.seed, self.duration_s
        ));
        out.push_str(&format!(
            "{:<12} {:>9} {:>9} {:>9} {:>10} {:>12} {:>10} {:>6}\n",
            "model", "generated", "hits", "discarded", "hit_ratio", "thru (hit/s)", "mean ms", "batch"
        ));
        for (id, m) in &self.models {
            out.push_str(&format!(
                "{:<12} {:>9} {:>9} {:>9} {:>10.3} {:>12.2} {:>10.1} {:>6}\n",
                id,
                m.generated,
                m.hits,
                m.discarded,
                m.hit_ratio,
                m.throughput_hits_per_s,
                m.mean_latency_ms,
                m.batch_most_selected
            ));
        }
        for (kind, busy) in &self.processors {
            out.push_str(&format!("processor {kind}: busy {:.1}%\n", busy * 100.0));
        }
        out.push_str(&format!(
            "pipeline ops: {}; featurization: {} computed, {} cache hits\n",
            self.ops_executed, self.feature_computes, self.feature_hits
        ));
        out
    }
}

/// Run one workload under one policy. Deterministic for a given
/// (spec, policy, seed): rerunning yields a bit-identical report.
pub fn run_workload(
    spec: &WorkloadSpec,
    policy: Policy,
    seed: u64,
) -> Result<MetricsReport, WorkloadError> {
    let cfg = spec.runtime_config()?;
    let config_hash = format!("{:016x}", cfg.content_hash());
    let mut rt = Runtime::new(cfg, policy, seed);
    if let Some(enabled) = spec.feature_caching {
        rt.set_feature_caching(enabled);
    }
    let bundle = spec.bundle()?;
    rt.deploy(&bundle)
        .map_err(|e| WorkloadError::Deploy(e.to_string()))?;
    rt.start_sensors();
    let duration = VirtualTime::from_secs(spec.duration_s);
    rt.run_until(duration)?;
    Ok(collect_report(&rt, spec, policy, seed, config_hash))
}

pub fn collect_report(
    rt: &Runtime,
    spec: &WorkloadSpec,
    policy: Policy,
    seed: u64,
    config_hash: String,
) -> MetricsReport {
    let duration_s = spec.duration_s;
    let mut models = BTreeMap::new();
    for model in rt.model_ids() {
        let counters = rt.scheduler().counters(&model).unwrap_or_default();
        let metrics = rt.metrics(&model).cloned().unwrap_or_default();
        let completed = metrics.completed_samples;
        let report = ModelReport {
            generated: counters.enqueued,
            dispatched: counters.dispatched,
            discarded: counters.discarded,
            still_queued: rt.scheduler().queue_len(&model).unwrap_or(0) as u64,
            completed,
            hits: metrics.hits,
            late: metrics.late,
            hit_ratio: if counters.enqueued > 0 {
                metrics.hits as f64 / counters.enqueued as f64
            } else {
                0.0
            },
            throughput_hits_per_s: metrics.hits as f64 / duration_s,
            mean_latency_ms: if completed > 0 {
                metrics.latency_sum_ms / completed as f64
            } else {
                0.0
            },
            batch_final: rt.scheduler().batch_size(&model).unwrap_or(1),
            batch_most_selected: rt.scheduler().most_selected_batch(&model).unwrap_or(1),
        };
        models.insert(model, report);
    }
    let mut processors = BTreeMap::new();
    for kind in rt.server().processor_kinds() {
        let busy = rt.server().busy_ns(kind) as f64 / (duration_s * 1e9);
        processors.insert(kind.name().to_string(), busy);
    }
    MetricsReport {
        workload: spec.name.clone(),
        policy: policy.label(),
        seed,
        config_hash,
        duration_s,
        ops_executed: rt.coordinator().ops_executed(),
        feature_computes: rt.server().features_ref().misses,
        feature_hits: rt.server().features_ref().hits,
        models,
        processors,
    }
}

/// Run the same workload and trace under every policy.
pub fn compare_policies(
    spec: &WorkloadSpec,
    seed: u64,
) -> Result<BTreeMap<String, MetricsReport>, WorkloadError> {
    let mut out = BTreeMap::new();
    for policy in [Policy::Vanilla, Policy::StaticBatch, Policy::Adaptive] {
        let report = run_workload(spec, policy, seed)?;
        out.insert(policy.label(), report);
    }
    Ok(out)
}

/// Comparison table with per-model deltas of adaptive over the baselines.
pub fn comparison_table(reports: &BTreeMap<String, MetricsReport>) -> String {
    let mut out = String::new();
    for report in reports.values() {
        out.push_str(&report.table());
        out.push('\n');
    }
    if let (Some(adaptive), Some(vanilla)) = (reports.get("adaptive"), reports.get("vanilla")) {
        out.push_str("adaptive vs vanilla (hit throughput):\n");
        for (id, m) in &adaptive.models {
            if let Some(v) = vanilla.models.get(id) {
                out.push_str(&format!(
                    "  {id}: {:+.2}/s ({:.2} -> {:.2})\n",
                    m.throughput_hits_per_s - v.throughput_hits_per_s,
                    v.throughput_hits_per_s,
                    m.throughput_hits_per_s
                ));
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Workload presets
// ---------------------------------------------------------------------------

fn gpu_only() -> Vec<ProcessorModel> {
    vec![ProcessorModel::parallel(ProcessorKind::Gpu, 0.5)]
}

fn gpu_cpu() -> Vec<ProcessorModel> {
    vec![
        ProcessorModel::parallel(ProcessorKind::Gpu, 0.5),
        ProcessorModel::parallel(ProcessorKind::Cpu, 0.5),
    ]
}

fn camera_64(max_rate: f64) -> SensorSpec {
    SensorSpec {
        id: "cam0".to_string(),
        modality: crate::manifest::Modality::Vision,
        resolutions: vec![(64, 64)],
        colour_spaces: vec![ColourSpace::Rgb],
        sample_rates_hz: vec![],
        bit_depths: vec![],
        max_rate_hz: max_rate,
    }
}

fn microphone() -> SensorSpec {
    SensorSpec {
        id: "mic0".to_string(),
        modality: crate::manifest::Modality::Audio,
        resolutions: vec![],
        colour_spaces: vec![],
        sample_rates_hz: vec![16_000],
        bit_depths: vec![16],
        max_rate_hz: 4.0,
    }
}

fn gpu_model(id: &str, profile: &str, req_ms: u64, rate: f64) -> WorkloadModel {
    WorkloadModel {
        id: id.to_string(),
        profile: profile.to_string(),
        processors: vec![ProcessorKind::Gpu],
        latency_requirement_ms: req_ms,
        max_rate_hz: 100.0,
        input: WorkloadInput::vision(64, 64, rate),
        feature_pipeline: None,
    }
}

/// The default contention trio on a single shared parallel processor.
fn w1_with(reqs: [u64; 3]) -> WorkloadSpec {
    WorkloadSpec {
        name: "w1".to_string(),
        duration_s: 30.0,
        models: vec![
            gpu_model("mnv2", "mobilenet-v2", reqs[0], 5.0),
            gpu_model("vggface", "vgg-face", reqs[1], 5.0),
            gpu_model("yolov3", "yolo-v3", reqs[2], 5.0),
        ],
        sensors: vec![camera_64(60.0)],
        processors: gpu_only(),
        scheduler: None,
        feature_caching: None,
    }
}

/// Named workload presets mirroring the benchmark matrix: a default trio,
/// model-type variations, model-count variations and latency variations.
pub fn preset(name: &str) -> Option<WorkloadSpec> {
    let spec = match name {
        "w1" => w1_with([300, 300, 300]),
        "w2" => WorkloadSpec {
            name: "w2".to_string(),
            duration_s: 30.0,
            models: vec![
                WorkloadModel {
                    processors: vec![ProcessorKind::Gpu, ProcessorKind::Cpu],
                    ..gpu_model("densenet", "densenet-121", 300, 10.0)
                },
                WorkloadModel {
                    processors: vec![ProcessorKind::Gpu, ProcessorKind::Cpu],
                    ..gpu_model("tinyyolo", "tiny-yolo-v3", 300, 10.0)
                },
                WorkloadModel {
                    id: "emotion".to_string(),
                    profile: "emotion".to_string(),
                    processors: vec![ProcessorKind::Cpu],
                    latency_requirement_ms: 2000,
                    max_rate_hz: 100.0,
                    input: WorkloadInput::audio(16_000, 0.25, 4.0),
                    feature_pipeline: None,
                },
            ],
            sensors: vec![camera_64(60.0), microphone()],
            processors: gpu_cpu(),
            scheduler: None,
            feature_caching: None,
        },
        "w3" => WorkloadSpec {
            name: "w3".to_string(),
            duration_s: 30.0,
            models: vec![
                WorkloadModel {
                    id: "mnv2-tpu".to_string(),
                    profile: "mobilenet-v2-tpu".to_string(),
                    processors: vec![ProcessorKind::Tpu],
                    latency_requirement_ms: 300,
                    max_rate_hz: 100.0,
                    input: WorkloadInput::vision(64, 64, 10.0),
                    feature_pipeline: None,
                },
                WorkloadModel {
                    id: "ssd".to_string(),
                    profile: "mobilenet-ssd-v2".to_string(),
                    processors: vec![ProcessorKind::Tpu],
                    latency_requirement_ms: 300,
                    max_rate_hz: 100.0,
                    input: WorkloadInput::vision(64, 64, 10.0),
                    feature_pipeline: None,
                },
                WorkloadModel {
                    id: "keyword".to_string(),
                    profile: "keyword-res8".to_string(),
                    processors: vec![ProcessorKind::Tpu],
                    latency_requirement_ms: 2000,
                    max_rate_hz: 100.0,
                    input: WorkloadInput::audio(16_000, 0.25, 4.0),
                    feature_pipeline: None,
                },
            ],
            sensors: vec![camera_64(30.0), microphone()],
            processors: vec![ProcessorModel::serialized(ProcessorKind::Tpu, 30.0)],
            scheduler: None,
            feature_caching: None,
        },
        "w4" => WorkloadSpec {
            name: "w4".to_string(),
            models: vec![gpu_model("mnv2", "mobilenet-v2", 300, 10.0)],
            ..w1_with([300, 300, 300])
        },
        "w5" => WorkloadSpec {
            name: "w5".to_string(),
            models: vec![
                gpu_model("mnv2", "mobilenet-v2", 300, 10.0),
                gpu_model("vggface", "vgg-face", 300, 10.0),
            ],
            ..w1_with([300, 300, 300])
        },
        "w6" => {
            let mut spec = w1_with([300, 300, 300]);
            spec.name = "w6".to_string();
            spec.models.push(gpu_model("tinyyolo", "tiny-yolo-v3", 300, 10.0));
            spec
        }
        "w7" => {
            let mut spec = w1_with([500, 500, 500]);
            spec.name = "w7".to_string();
            spec
        }
        "w8" => {
            let mut spec = w1_with([300, 500, 1000]);
            spec.name = "w8".to_string();
            spec
        }
        _ => return None,
    };
    Some(spec)
}

pub fn preset_names() -> Vec<&'static str> {
    vec!["w1", "w2", "w3", "w4", "w5", "w6", "w7", "w8"]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::default_profiles;

    #[test]
    fn static_profile_matches_closed_form_oracle() {
        let p = ExecutorProfile {
            alpha_ms: 90.0,
            beta_ms: 20.0,
            gamma_ms: 0.0,
            output: crate::server::OutputKind::Classification,
            labels: vec!["a".to_string()],
        };
        // L(b) = 90 + 20b <= 300 up to b = 10.
        assert_eq!(profile_static(&p, 300.0, 32), 10);
        // Even b=1 violating floors at 1.
        let heavy = ExecutorProfile { alpha_ms: 400.0, ..p.clone() };
        assert_eq!(profile_static(&heavy, 300.0, 32), 1);
        // Boundary is inclusive: L(1) = 110 <= 110.
        assert_eq!(profile_static(&p, 110.0, 32), 1);
    }

    #[test]
    fn static_profile_equals_isolated_measured_latency() {
        // The closed form is exactly what an isolated batch measures.
        let p = default_profiles()["mobilenet-v2"].clone();
        let mut server = crate::server::ModelServer::new(
            vec![ProcessorModel::parallel(ProcessorKind::Gpu, 0.5)],
            vec![ProcessorKind::Gpu],
            2.0,
            16,
        );
        let manifest = ModelManifest {
            model_id: "m".to_string(),
            task: "t".to_string(),
            input: InputSpec::Vision(VisionSpec {
                width_px: 64,
                height_px: 64,
                colour_space: ColourSpace::Rgb,
                rate_hz: 10.0,
            }),
            framework_tag: "mobilenet-v2".to_string(),
            processor_variants: vec![(ProcessorKind::Gpu, String::new())],
            feature_pipeline_id: None,
            latency_requirement_ms: 300,
            max_rate_hz: 100.0,
        };
        server.create_executor(&manifest, ProcessorKind::Gpu, p.clone()).unwrap();
        for b in [1u32, 4, 10] {
            let d = server.begin_parallel_batch("m", b, VirtualTime::ZERO).unwrap();
            server.end_batch("m");
            assert_eq!(d, crate::clock::ms_to_ns(p.latency_ms(b)));
        }
    }

    #[test]
    fn workload_files_parse() {
        let text = r#"
name = "tiny"
duration_s = 2.0

[[processor]]
kind = "gpu"
parallel = true
contention_coeff = 0.5

[[sensor]]
id = "cam0"
modality = "vision"
resolutions = [[64, 64]]
colour_spaces = ["rgb"]
max_rate_hz = 30.0

[[model]]
id = "m"
profile = "mobilenet-v2"
processors = ["gpu"]
latency_requirement_ms = 300
[model.input]
rate_hz = 10.0
"#;
        let spec = WorkloadSpec::from_toml(text).unwrap();
        assert_eq!(spec.models.len(), 1);
        assert_eq!(spec.models[0].input.width_px, 64);
        let report = run_workload(&spec, Policy::Adaptive, 1).unwrap();
        assert!(report.models["m"].completed > 0);
    }

    #[test]
    fn reports_are_bit_reproducible() {
        let mut spec = preset("w5").unwrap();
        spec.duration_s = 6.0;
        let a = run_workload(&spec, Policy::Adaptive, 9).unwrap();
        let b = run_workload(&spec, Policy::Adaptive, 9).unwrap();
        assert_eq!(a.canonical(), b.canonical());
    }

    #[test]
    fn every_preset_runs_under_every_policy() {
        for name in preset_names() {
            let mut spec = preset(name).unwrap();
            spec.duration_s = 4.0;
            for policy in [Policy::Vanilla, Policy::StaticBatch, Policy::Adaptive] {
                let report = run_workload(&spec, policy, 1)
                    .unwrap_or_else(|e| panic!("{name}/{policy:?}: {e}"));
                assert!(
                    report.models.values().any(|m| m.completed > 0),
                    "{name}/{policy:?} produced no inferences"
                );
            }
        }
    }

    #[test]
    fn single_model_all_policies_meet_generous_requirement() {
        let mut spec = preset("w4").unwrap();
        spec.duration_s = 20.0;
        spec.models[0].latency_requirement_ms = 1400;
        spec.models[0].input.rate_hz = 9.0;
        spec.sensors = vec![camera_64(100.0)];
        let reports = compare_policies(&spec, 3).unwrap();
        for (_policy, report) in &reports {
            let m = &report.models["mnv2"];
            assert!(m.hit_ratio > 0.9, "{}: {}", report.policy, m.hit_ratio);
        }
        // Vanilla throughput is the lowest: batch 1 at the declared rate.
        let vanilla = reports["vanilla"].total_throughput();
        let adaptive = reports["adaptive"].total_throughput();
        let static_b = reports["static"].total_throughput();
        assert!(adaptive > vanilla);
        assert!(static_b > vanilla);
    }
}
