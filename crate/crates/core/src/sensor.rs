//! Synthetic sensors: capability descriptions, derived configurations and
//! deterministic sample generation.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::clock::VirtualTime;
use crate::manifest::{BitDepth, ColourSpace, Modality, SensorId};

/// Intrinsic characteristics of a sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorCapabilities {
    pub sensor_id: SensorId,
    pub modality: Modality,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vision: Option<VisionCaps>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio: Option<AudioCaps>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisionCaps {
    /// Supported (width, height) pairs; finite and nonempty.
    pub resolutions: Vec<(u32, u32)>,
    pub colour_spaces: Vec<ColourSpace>,
    pub max_rate_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioCaps {
    pub sample_rates_hz: Vec<u32>,
    pub bit_depths: Vec<u32>,
    pub max_rate_hz: f64,
}

/// The configuration chosen for a sensor: every value is a member of the
/// corresponding capability set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SensorConfig {
    Vision {
        width_px: u32,
        height_px: u32,
        colour_space: ColourSpace,
        rate_hz: f64,
    },
    Audio {
        sample_rate_hz: u32,
        bit_depth: BitDepth,
        rate_hz: f64,
    },
}

impl SensorConfig {
    pub fn rate_hz(&self) -> f64 {
        match self {
            SensorConfig::Vision { rate_hz, .. } | SensorConfig::Audio { rate_hz, .. } => *rate_hz,
        }
    }

    pub fn with_rate(&self, rate: f64) -> SensorConfig {
        let mut c = self.clone();
        match &mut c {
            SensorConfig::Vision { rate_hz, .. } | SensorConfig::Audio { rate_hz, .. } => {
                *rate_hz = rate
            }
        }
        c
    }
}

/// A vision frame: tightly packed u8 pixels, `channels(colour)` per pixel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub width: u32,
    pub height: u32,
    pub colour: ColourSpace,
    pub pixels: Vec<u8>,
}

impl Frame {
    pub fn expected_len(&self) -> usize {
        self.width as usize * self.height as usize * self.colour.channels()
    }
}

/// An audio window: samples stored as i32 regardless of nominal depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioWindow {
    pub sample_rate_hz: u32,
    pub bit_depth: BitDepth,
    pub window_s: f64,
    pub samples: Vec<i32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    Frame(Frame),
    Audio(AudioWindow),
}

/// Identity of one sensor reading; keys feature-cache entries, pending
/// function inputs and stored records.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SampleKey {
    pub sensor_id: SensorId,
    pub seq: u64,
}

impl std::fmt::Display for SampleKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}#{}", self.sensor_id, self.seq)
    }
}

/// One sensor reading. The payload is shared so that fanning a sample out to
/// many models never copies pixel buffers.
#[derive(Debug, Clone)]
pub struct Sample {
    pub key: SampleKey,
    /// Acquisition timestamp; end-to-end latency is measured from here.
    pub acquired_at: VirtualTime,
    pub payload: Arc<Payload>,
}

impl Sample {
    pub fn with_payload(&self, payload: Payload) -> Sample {
        Sample {
            key: self.key.clone(),
            acquired_at: self.acquired_at,
            payload: Arc::new(payload),
        }
    }
}

/// Counter-based generator: 64-bit mix with full avalanche, so payloads are
/// reproducible from (seed, sensor, seq) alone.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

pub fn hash_str(s: &str) -> u64 {
    // FNV-1a; stable across platforms unlike the std hasher.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic payload for (seed, sensor, seq) under a configuration.
pub fn generate_payload(seed: u64, sensor_id: &str, seq: u64, config: &SensorConfig) -> Payload {
    let base = splitmix64(seed ^ hash_str(sensor_id)).wrapping_add(splitmix64(seq));
    match config {
        SensorConfig::Vision {
            width_px,
            height_px,
            colour_space,
            ..
        } => {
            let len = *width_px as usize * *height_px as usize * colour_space.channels();
            let mut pixels = Vec::with_capacity(len);
            let mut word = 0u64;
            for i in 0..len {
                if i % 8 == 0 {
                    word = splitmix64(base.wrapping_add((i / 8) as u64));
                }
                pixels.push((word >> ((i % 8) * 8)) as u8);
            }
            Payload::Frame(Frame {
                width: *width_px,
                height: *height_px,
                colour: *colour_space,
                pixels,
            })
        }
        SensorConfig::Audio {
            sample_rate_hz,
            bit_depth,
            rate_hz,
        } => {
            let window_s = 1.0 / rate_hz;
            let n = (*sample_rate_hz as f64 * window_s).round() as usize;
            let max = match bit_depth {
                BitDepth::B8 => 127,
                BitDepth::B16 => 32_767,
                BitDepth::B32 => 8_388_607,
            };
            let samples = (0..n)
                .map(|i| {
                    let word = splitmix64(base.wrapping_add(i as u64));
                    (word % (2 * max as u64 + 1)) as i32 - max
                })
                .collect();
            Payload::Audio(AudioWindow {
                sample_rate_hz: *sample_rate_hz,
                bit_depth: *bit_depth,
                window_s,
                samples,
            })
        }
    }
}
