//! Runtime configuration: processor topology, sensors, executor profiles and
//! scheduler tunables. Everything carries defaults so embedded use needs no
//! files; the `serve` and `bench` commands read the same TOML schema.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifest::{ColourSpace, Modality, ProcessorKind};
use crate::scheduler::SchedulerConfig;
use crate::sensor::{AudioCaps, SensorCapabilities, VisionCaps};
use crate::server::{ExecutorProfile, OutputKind, ProcessorModel};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("malformed config: {0}")]
    Malformed(String),
    #[error("unknown executor profile `{0}`")]
    UnknownProfile(String),
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct PlacementConfig {
    /// Workload projection horizon k, in seconds.
    pub horizon_s: f64,
    /// Tie-break order among equally loaded processors.
    pub tie_break: Vec<ProcessorKind>,
}

impl Default for PlacementConfig {
    fn default() -> Self {
        PlacementConfig {
            horizon_s: 2.0,
            tie_break: vec![ProcessorKind::Gpu, ProcessorKind::Tpu, ProcessorKind::Cpu],
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct StoreConfig {
    pub retention_per_source: usize,
    #[serde(default)]
    pub data_dir: Option<String>,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig {
            retention_per_source: 10_000,
            data_dir: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct RuntimeConfig {
    #[serde(default)]
    pub scheduler: SchedulerConfig,
    #[serde(default)]
    pub placement: PlacementConfig,
    #[serde(default)]
    pub store: StoreConfig,
    #[serde(default = "default_cache_capacity")]
    pub feature_cache_capacity: usize,
    #[serde(default = "default_processors")]
    pub processors: Vec<ProcessorModel>,
    #[serde(default)]
    pub sensors: Vec<SensorSpec>,
    #[serde(default = "default_profiles")]
    pub profiles: BTreeMap<String, ExecutorProfile>,
    /// Pending chain inputs older than this multiple of the slowest input
    /// model's latency requirement are evicted.
    #[serde(default = "default_ttl_multiplier")]
    pub chain_ttl_multiplier: f64,
    /// Vision sensors run this many times faster than the fastest requested
    /// delivery rate (capped by capability), keeping per-model delivery
    /// jitter small relative to inference times.
    #[serde(default = "default_oversample")]
    pub sensor_oversample: f64,
}

fn default_oversample() -> f64 {
    4.0
}

fn default_cache_capacity() -> usize {
    1024
}

fn default_ttl_multiplier() -> f64 {
    2.0
}

fn default_processors() -> Vec<ProcessorModel> {
    vec![
        ProcessorModel::parallel(ProcessorKind::Cpu, 0.5),
        ProcessorModel::parallel(ProcessorKind::Gpu, 0.5),
        ProcessorModel::serialized(ProcessorKind::Tpu, 30.0),
    ]
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        RuntimeConfig {
            scheduler: SchedulerConfig::default(),
            placement: PlacementConfig::default(),
            store: StoreConfig::default(),
            feature_cache_capacity: default_cache_capacity(),
            processors: default_processors(),
            sensors: vec![SensorSpec::default_camera()],
            profiles: default_profiles(),
            chain_ttl_multiplier: default_ttl_multiplier(),
            sensor_oversample: default_oversample(),
        }
    }
}

impl RuntimeConfig {
    pub fn from_toml(text: &str) -> Result<RuntimeConfig, ConfigError> {
        let mut cfg: RuntimeConfig =
            toml::from_str(text).map_err(|e| ConfigError::Malformed(e.to_string()))?;
        if cfg.sensors.is_empty() {
            cfg.sensors = vec![SensorSpec::default_camera()];
        }
        // Named presets are always available; file entries override them.
        for (name, profile) in default_profiles() {
            cfg.profiles.entry(name).or_insert(profile);
        }
        Ok(cfg)
    }

    pub fn profile(&self, framework_tag: &str) -> Result<ExecutorProfile, ConfigError> {
        self.profiles
            .get(framework_tag)
            .cloned()
            .ok_or_else(|| ConfigError::UnknownProfile(framework_tag.to_string()))
    }

    /// Stable hash of the canonical serialization; recorded in reports.
    pub fn content_hash(&self) -> u64 {
        let text = toml::to_string(self).unwrap_or_default();
        crate::sensor::hash_str(&text)
    }
}

/// Sensor description in config files; converted to capability structs.
#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct SensorSpec {
    pub id: String,
    pub modality: Modality,
    #[serde(default)]
    pub resolutions: Vec<(u32, u32)>,
    #[serde(default)]
    pub colour_spaces: Vec<ColourSpace>,
    #[serde(default)]
    pub sample_rates_hz: Vec<u32>,
    #[serde(default)]
    pub bit_depths: Vec<u32>,
    pub max_rate_hz: f64,
}

impl SensorSpec {
    pub fn default_camera() -> SensorSpec {
        SensorSpec {
            id: "cam0".to_string(),
            modality: Modality::Vision,
            resolutions: vec![(224, 224), (640, 480), (1920, 1080)],
            colour_spaces: vec![ColourSpace::Rgb, ColourSpace::Yuv],
            sample_rates_hz: vec![],
            bit_depths: vec![],
            max_rate_hz: 30.0,
        }
    }

    pub fn capabilities(&self) -> SensorCapabilities {
        match self.modality {
            Modality::Vision => SensorCapabilities {
                sensor_id: self.id.clone(),
                modality: Modality::Vision,
                vision: Some(VisionCaps {
                    resolutions: self.resolutions.clone(),
                    colour_spaces: self.colour_spaces.clone(),
                    max_rate_hz: self.max_rate_hz,
                }),
                audio: None,
            },
            Modality::Audio => SensorCapabilities {
                sensor_id: self.id.clone(),
                modality: Modality::Audio,
                vision: None,
                audio: Some(AudioCaps {
                    sample_rates_hz: self.sample_rates_hz.clone(),
                    bit_depths: self.bit_depths.clone(),
                    max_rate_hz: self.max_rate_hz,
                }),
            },
        }
    }
}

/// Named executor profiles. The image-classification default is calibrated
/// so a single uncontended executor runs 9.1 inferences/s at batch 1 with a
/// 0.11 s latency and reaches 26.7 inferences/s at batch 4.
pub fn default_profiles() -> BTreeMap<String, ExecutorProfile> {
    fn p(alpha: f64, beta: f64, gamma: f64, output: OutputKind) -> ExecutorProfile {
        ExecutorProfile {
            alpha_ms: alpha,
            beta_ms: beta,
            gamma_ms: gamma,
            output,
            labels: match output {
                OutputKind::Detection => crate::output::DETECTION_LABELS
                    .iter()
                    .map(|s| s.to_string())
                    .collect(),
                OutputKind::Classification => vec![
                    "speech".to_string(),
                    "music".to_string(),
                    "silence".to_string(),
                ],
            },
        }
    }
    BTreeMap::from([
        // b=1: 110 ms -> 9.09/s; b=4: 150 ms -> 26.67/s.
        ("mobilenet-v2".to_string(), p(96.666667, 13.333333, 0.0, OutputKind::Classification)),
        ("vgg-face".to_string(), p(64.0, 14.0, 0.0, OutputKind::Classification)),
        ("yolo-v3".to_string(), p(115.0, 11.0, 0.0, OutputKind::Detection)),
        ("tiny-yolo-v3".to_string(), p(45.0, 9.0, 0.0, OutputKind::Detection)),
        ("densenet-121".to_string(), p(120.0, 16.0, 0.0, OutputKind::Classification)),
        ("emotion".to_string(), p(18.0, 4.0, 5.0, OutputKind::Classification)),
        ("yamnet".to_string(), p(24.0, 5.0, 5.0, OutputKind::Classification)),
        ("keyword-res8".to_string(), p(12.0, 3.0, 5.0, OutputKind::Classification)),
        ("mobilenet-v2-tpu".to_string(), p(22.0, 6.0, 0.0, OutputKind::Classification)),
        ("mobilenet-ssd-v2".to_string(), p(30.0, 8.0, 0.0, OutputKind::Detection)),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = RuntimeConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back = RuntimeConfig::from_toml(&text).unwrap();
        assert_eq!(cfg.content_hash(), back.content_hash());
    }

    #[test]
    fn classification_anchor_profile_is_calibrated() {
        let cfg = RuntimeConfig::default();
        let p = cfg.profile("mobilenet-v2").unwrap();
        let l1 = p.latency_ms(1);
        let l4 = p.latency_ms(4);
        assert!((l1 - 110.0).abs() < 0.01, "b=1 latency {l1}");
        assert!((1000.0 / l1 - 9.09).abs() < 0.05);
        assert!((4.0 * 1000.0 / l4 - 26.67).abs() < 0.05);
    }

    #[test]
    fn unknown_profile_is_an_error() {
        let cfg = RuntimeConfig::default();
        assert!(matches!(
            cfg.profile("nope"),
            Err(ConfigError::UnknownProfile(_))
        ));
    }

    #[test]
    fn file_profiles_extend_presets() {
        let cfg = RuntimeConfig::from_toml(
            r#"
[profiles.custom]
alpha_ms = 10.0
beta_ms = 2.0
output = "detection"
"#,
        )
        .unwrap();
        assert!(cfg.profile("custom").is_ok());
        assert!(cfg.profile("mobilenet-v2").is_ok());
    }
}
