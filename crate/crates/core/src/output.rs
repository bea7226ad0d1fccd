//! Structured values flowing from executors through function chains into the
//! data store. Payloads round-trip bit-exact through the canonical JSON
//! serialization, so coordinates are stored as integer fractions rather than
//! floats.

use serde::{Deserialize, Serialize};

use crate::sensor::{hash_str, splitmix64, SampleKey};

/// A box in normalized coordinates: (x, y, w, h) as fractions with
/// denominator 65536.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxNorm(pub [u16; 4]);

impl BoxNorm {
    pub const DENOM: u32 = 65536;

    /// Reshape onto a concrete resolution; exact integer arithmetic.
    pub fn to_pixels(self, width: u32, height: u32) -> [u32; 4] {
        let [x, y, w, h] = self.0;
        [
            (x as u64 * width as u64 / Self::DENOM as u64) as u32,
            (y as u64 * height as u64 / Self::DENOM as u64) as u32,
            (w as u64 * width as u64 / Self::DENOM as u64) as u32,
            (h as u64 * height as u64 / Self::DENOM as u64) as u32,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: String,
    pub bbox: BoxNorm,
}

/// A box reshaped onto a frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overlay {
    pub label: String,
    pub pixel_box: [u32; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OutputValue {
    Count(u64),
    Label(String),
    Detections(Vec<Detection>),
    /// A frame annotated with reshaped boxes; pixels carried unchanged.
    AnnotatedFrame {
        width: u32,
        height: u32,
        overlays: Vec<Overlay>,
    },
    /// Raw sensor frame handed to functions that declare a sensor input.
    Frame {
        width: u32,
        height: u32,
        pixels: Vec<u8>,
    },
    /// Featurization output; opaque bytes derived deterministically.
    Features(Vec<u8>),
}

pub const DETECTION_LABELS: [&str; 3] = ["car", "person", "bike"];

/// Deterministic synthetic detections for a sample: every executor observing
/// the same sample reports the same scene.
pub fn synth_detections(key: &SampleKey) -> Vec<Detection> {
    let base = splitmix64(hash_str(&key.sensor_id) ^ splitmix64(key.seq));
    let n = (base % 4) as usize;
    (0..n)
        .map(|i| {
            let h = splitmix64(base.wrapping_add(i as u64 + 1));
            let label = DETECTION_LABELS[(h % 3) as usize].to_string();
            let x = (h >> 8) as u16 / 2; // keep x, y in the left/top half
            let y = (h >> 24) as u16 / 2;
            let w = ((h >> 40) as u16 % 16384) + 1024;
            let h_box = ((h >> 50) as u16 % 16384) + 1024;
            Detection {
                label,
                bbox: BoxNorm([x, y, w, h_box]),
            }
        })
        .collect()
}

/// Deterministic top-1 label for classification executors.
pub fn synth_label(key: &SampleKey, vocab: &[String]) -> String {
    let h = splitmix64(hash_str(&key.sensor_id) ^ splitmix64(key.seq).rotate_left(17));
    vocab[(h % vocab.len() as u64) as usize].clone()
}

/// Deterministic feature bytes for (pipeline, sample); recomputation is
/// bit-identical by construction.
pub fn synth_features(pipeline_id: &str, key: &SampleKey) -> Vec<u8> {
    let base = splitmix64(hash_str(pipeline_id) ^ hash_str(&key.sensor_id) ^ key.seq);
    (0..4u64)
        .flat_map(|i| splitmix64(base.wrapping_add(i)).to_le_bytes())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reshape_is_exact_scaling() {
        // Normalized (0.5, 0.5, 0.25, 0.25) on 640x480 -> (320, 240, 160, 120).
        let b = BoxNorm([32768, 32768, 16384, 16384]);
        assert_eq!(b.to_pixels(640, 480), [320, 240, 160, 120]);
    }

    #[test]
    fn detections_are_deterministic_per_key() {
        let key = SampleKey {
            sensor_id: "cam0".to_string(),
            seq: 7,
        };
        assert_eq!(synth_detections(&key), synth_detections(&key));
    }

    #[test]
    fn features_recompute_bit_identical() {
        let key = SampleKey {
            sensor_id: "cam0".to_string(),
            seq: 9,
        };
        assert_eq!(synth_features("p1", &key), synth_features("p1", &key));
        assert_ne!(synth_features("p1", &key), synth_features("p2", &key));
    }
}
