//! Sensor-data transformations.
//!
//! Every kernel is a deterministic pure function of its input sample:
//! resize is an area-average downscale (integer box filter when both axis
//! ratios are integral, bilinear otherwise), colour conversion uses BT.601
//! coefficients, audio rate reduction picks every k-th sample for integral
//! ratios and interpolates linearly otherwise, and bit-depth reduction is an
//! arithmetic right shift.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifest::{BitDepth, ColourSpace};
use crate::sensor::{AudioWindow, Frame, Payload, Sample};

#[derive(Debug, Error, PartialEq)]
pub enum TransformError {
    #[error("format mismatch: {0}")]
    FormatMismatch(String),
}

/// One node's operation in a transformation graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Transform {
    /// Pass samples through at `target_hz`; a gating node that drops samples.
    RateDownsample { target_hz: f64 },
    Resize { width: u32, height: u32 },
    ColourConvert { to: ColourSpace },
    AudioRateReduce { target_hz: u32 },
    BitDepthReduce { depth: BitDepth },
    /// Concatenate consecutive windows into one of `seconds` length.
    AggregateWindow { seconds: f64 },
}

impl Transform {
    /// Stable identity for value-based node merging.
    pub fn identity_key(&self) -> (u8, u64, u64) {
        match self {
            Transform::RateDownsample { target_hz } => (0, target_hz.to_bits(), 0),
            Transform::Resize { width, height } => (1, *width as u64, *height as u64),
            Transform::ColourConvert { to } => (2, *to as u64, 0),
            Transform::AudioRateReduce { target_hz } => (3, *target_hz as u64, 0),
            Transform::BitDepthReduce { depth } => (4, depth.bits() as u64, 0),
            Transform::AggregateWindow { seconds } => (5, seconds.to_bits(), 0),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Transform::RateDownsample { target_hz } => format!("rate({target_hz}Hz)"),
            Transform::Resize { width, height } => format!("resize({width}x{height})"),
            Transform::ColourConvert { to } => format!(
                "colour({})",
                match to {
                    ColourSpace::Rgb => "rgb",
                    ColourSpace::Yuv => "yuv",
                    ColourSpace::Gray => "gray",
                }
            ),
            Transform::AudioRateReduce { target_hz } => format!("audio-rate({target_hz}Hz)"),
            Transform::BitDepthReduce { depth } => format!("bit-depth({})", depth.bits()),
            Transform::AggregateWindow { seconds } => format!("aggregate({seconds}s)"),
        }
    }
}

/// Apply a 1:1 transform to a sample. `RateDownsample` and `AggregateWindow`
/// gate or buffer samples and are driven by the graph executor; applied here
/// they act as identity on an already-conforming sample.
pub fn apply_transform(t: &Transform, s: &Sample) -> Result<Sample, TransformError> {
    let payload = match (&*s.payload, t) {
        (_, Transform::RateDownsample { .. }) => return Ok(s.clone()),
        (Payload::Frame(f), Transform::Resize { width, height }) => {
            if *width > f.width || *height > f.height {
                return Err(TransformError::FormatMismatch(format!(
                    "resize target {width}x{height} exceeds input {}x{}",
                    f.width, f.height
                )));
            }
            Payload::Frame(resize_frame(f, *width, *height))
        }
        (Payload::Frame(f), Transform::ColourConvert { to }) => {
            Payload::Frame(convert_colour(f, *to)?)
        }
        (Payload::Audio(w), Transform::AudioRateReduce { target_hz }) => {
            if *target_hz > w.sample_rate_hz {
                return Err(TransformError::FormatMismatch(format!(
                    "audio rate target {target_hz} exceeds input {}",
                    w.sample_rate_hz
                )));
            }
            Payload::Audio(reduce_audio_rate(w, *target_hz))
        }
        (Payload::Audio(w), Transform::BitDepthReduce { depth }) => {
            if depth.bits() > w.bit_depth.bits() {
                return Err(TransformError::FormatMismatch(format!(
                    "bit depth target {} exceeds input {}",
                    depth.bits(),
                    w.bit_depth.bits()
                )));
            }
            Payload::Audio(reduce_bit_depth(w, *depth))
        }
        (Payload::Audio(w), Transform::AggregateWindow { seconds }) => {
            if (w.window_s - seconds).abs() > 1e-9 {
                return Err(TransformError::FormatMismatch(format!(
                    "aggregate to {seconds}s driven by the graph executor; got a {}s window",
                    w.window_s
                )));
            }
            return Ok(s.clone());
        }
        (payload, t) => {
            return Err(TransformError::FormatMismatch(format!(
                "{} cannot apply to {}",
                t.describe(),
                match payload {
                    Payload::Frame(_) => "a vision frame",
                    Payload::Audio(_) => "an audio window",
                }
            )))
        }
    };
    Ok(s.with_payload(payload))
}

fn round_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

pub fn resize_frame(f: &Frame, out_w: u32, out_h: u32) -> Frame {
    let ch = f.colour.channels();
    if out_w == f.width && out_h == f.height {
        return f.clone();
    }
    let pixels = if f.width % out_w == 0 && f.height % out_h == 0 {
        box_filter(f, out_w, out_h, ch)
    } else {
        bilinear(f, out_w, out_h, ch)
    };
    Frame {
        width: out_w,
        height: out_h,
        colour: f.colour,
        pixels,
    }
}

fn box_filter(f: &Frame, out_w: u32, out_h: u32, ch: usize) -> Vec<u8> {
    let kx = (f.width / out_w) as usize;
    let ky = (f.height / out_h) as usize;
    let count = (kx * ky) as u32;
    let in_w = f.width as usize;
    let mut out = Vec::with_capacity(out_w as usize * out_h as usize * ch);
    for oy in 0..out_h as usize {
        for ox in 0..out_w as usize {
            for c in 0..ch {
                let mut sum: u32 = 0;
                for dy in 0..ky {
                    let row = (oy * ky + dy) * in_w;
                    for dx in 0..kx {
                        sum += f.pixels[(row + ox * kx + dx) * ch + c] as u32;
                    }
                }
                out.push(((sum + count / 2) / count) as u8);
            }
        }
    }
    out
}

fn bilinear(f: &Frame, out_w: u32, out_h: u32, ch: usize) -> Vec<u8> {
    let in_w = f.width as usize;
    let in_h = f.height as usize;
    let sx = f.width as f64 / out_w as f64;
    let sy = f.height as f64 / out_h as f64;
    // Precomputed taps per output coordinate keep the inner loop cheap.
    let taps = |n_out: u32, scale: f64, n_in: usize| -> Vec<(usize, usize, f64)> {
        (0..n_out as usize)
            .map(|o| {
                let pos = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
                let lo = (pos.floor() as usize).min(n_in - 1);
                let hi = (lo + 1).min(n_in - 1);
                (lo, hi, pos - lo as f64)
            })
            .collect()
    };
    let xt = taps(out_w, sx, in_w);
    let yt = taps(out_h, sy, in_h);
    let mut out = Vec::with_capacity(out_w as usize * out_h as usize * ch);
    for &(y0, y1, fy) in &yt {
        for &(x0, x1, fx) in &xt {
            for c in 0..ch {
                let p = |x: usize, y: usize| f.pixels[(y * in_w + x) * ch + c] as f64;
                let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
                let bot = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
                out.push(round_u8(top * (1.0 - fy) + bot * fy));
            }
        }
    }
    out
}

// BT.601 full-range coefficients.
const KR: f64 = 0.299;
const KG: f64 = 0.587;
const KB: f64 = 0.114;

pub fn convert_colour(f: &Frame, to: ColourSpace) -> Result<Frame, TransformError> {
    if f.colour == to {
        return Ok(f.clone());
    }
    let n = f.width as usize * f.height as usize;
    let pixels = match (f.colour, to) {
        (ColourSpace::Rgb, ColourSpace::Gray) => {
            let mut out = Vec::with_capacity(n);
            for i in 0..n {
                let (r, g, b) = (
                    f.pixels[i * 3] as f64,
                    f.pixels[i * 3 + 1] as f64,
                    f.pixels[i * 3 + 2] as f64,
                );
                out.push(round_u8(KR * r + KG * g + KB * b));
            }
            out
        }
        (ColourSpace::Rgb, ColourSpace::Yuv) => {
            let mut out = Vec::with_capacity(n * 3);
            for i in 0..n {
                let (r, g, b) = (
                    f.pixels[i * 3] as f64,
                    f.pixels[i * 3 + 1] as f64,
                    f.pixels[i * 3 + 2] as f64,
                );
                let y = KR * r + KG * g + KB * b;
                out.push(round_u8(y));
                out.push(round_u8((b - y) / (2.0 * (1.0 - KB)) + 128.0));
                out.push(round_u8((r - y) / (2.0 * (1.0 - KR)) + 128.0));
            }
            out
        }
        (ColourSpace::Yuv, ColourSpace::Rgb) => {
            let mut out = Vec::with_capacity(n * 3);
            for i in 0..n {
                let y = f.pixels[i * 3] as f64;
                let u = f.pixels[i * 3 + 1] as f64 - 128.0;
                let v = f.pixels[i * 3 + 2] as f64 - 128.0;
                out.push(round_u8(y + 2.0 * (1.0 - KR) * v));
                out.push(round_u8(y - (KB / KG) * 2.0 * (1.0 - KB) * u - (KR / KG) * 2.0 * (1.0 - KR) * v));
                out.push(round_u8(y + 2.0 * (1.0 - KB) * u));
            }
            out
        }
        // Luma is the gray value under the same coefficients.
        (ColourSpace::Yuv, ColourSpace::Gray) => {
            (0..n).map(|i| f.pixels[i * 3]).collect()
        }
        (from, to) => {
            return Err(TransformError::FormatMismatch(format!(
                "no conversion from {from:?} to {to:?}"
            )))
        }
    };
    Ok(Frame {
        width: f.width,
        height: f.height,
        colour: to,
        pixels,
    })
}

pub fn reduce_audio_rate(w: &AudioWindow, target_hz: u32) -> AudioWindow {
    if target_hz == w.sample_rate_hz {
        return w.clone();
    }
    let out_len = ((w.samples.len() as u64 * target_hz as u64) / w.sample_rate_hz as u64) as usize;
    let samples = if w.sample_rate_hz % target_hz == 0 {
        let k = (w.sample_rate_hz / target_hz) as usize;
        w.samples.iter().step_by(k).take(out_len).copied().collect()
    } else {
        let scale = w.sample_rate_hz as f64 / target_hz as f64;
        (0..out_len)
            .map(|i| {
                let pos = i as f64 * scale;
                let lo = (pos.floor() as usize).min(w.samples.len() - 1);
                let hi = (lo + 1).min(w.samples.len() - 1);
                let frac = pos - lo as f64;
                (w.samples[lo] as f64 * (1.0 - frac) + w.samples[hi] as f64 * frac).round() as i32
            })
            .collect()
    };
    AudioWindow {
        sample_rate_hz: target_hz,
        bit_depth: w.bit_depth,
        window_s: w.window_s,
        samples,
    }
}

pub fn reduce_bit_depth(w: &AudioWindow, depth: BitDepth) -> AudioWindow {
    let shift = w.bit_depth.bits() - depth.bits();
    AudioWindow {
        sample_rate_hz: w.sample_rate_hz,
        bit_depth: depth,
        window_s: w.window_s,
        samples: w.samples.iter().map(|s| s >> shift).collect(),
    }
}

/// Concatenate consecutive windows (oldest first) into one longer window.
pub fn concat_windows(windows: &[AudioWindow]) -> AudioWindow {
    let first = &windows[0];
    AudioWindow {
        sample_rate_hz: first.sample_rate_hz,
        bit_depth: first.bit_depth,
        window_s: windows.iter().map(|w| w.window_s).sum(),
        samples: windows.iter().flat_map(|w| w.samples.iter().copied()).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::VirtualTime;
    use crate::sensor::SampleKey;
    use std::sync::Arc;

    fn frame_sample(f: Frame) -> Sample {
        Sample {
            key: SampleKey {
                sensor_id: "cam0".to_string(),
                seq: 0,
            },
            acquired_at: VirtualTime::ZERO,
            payload: Arc::new(Payload::Frame(f)),
        }
    }

    fn audio_sample(w: AudioWindow) -> Sample {
        Sample {
            key: SampleKey {
                sensor_id: "mic0".to_string(),
                seq: 0,
            },
            acquired_at: VirtualTime::ZERO,
            payload: Arc::new(Payload::Audio(w)),
        }
    }

    #[test]
    fn constant_image_is_invariant_under_box_resize() {
        let f = Frame {
            width: 4,
            height: 4,
            colour: ColourSpace::Gray,
            pixels: vec![100; 16],
        };
        let s = apply_transform(
            &Transform::Resize {
                width: 2,
                height: 2,
            },
            &frame_sample(f),
        )
        .unwrap();
        match &*s.payload {
            Payload::Frame(out) => assert_eq!(out.pixels, vec![100; 4]),
            _ => panic!("expected frame"),
        }
    }

    #[test]
    fn constant_image_is_invariant_under_bilinear_resize() {
        let f = Frame {
            width: 6,
            height: 4,
            colour: ColourSpace::Rgb,
            pixels: vec![37; 72],
        };
        let out = resize_frame(&f, 4, 3);
        assert!(out.pixels.iter().all(|&p| p == 37));
    }

    #[test]
    fn bit_depth_reduce_is_arithmetic_shift() {
        let w = AudioWindow {
            sample_rate_hz: 16_000,
            bit_depth: BitDepth::B16,
            window_s: 1.0,
            samples: vec![32768, -256, 255],
        };
        let s = apply_transform(
            &Transform::BitDepthReduce {
                depth: BitDepth::B8,
            },
            &audio_sample(w),
        )
        .unwrap();
        match &*s.payload {
            Payload::Audio(out) => assert_eq!(out.samples, vec![128, -1, 0]),
            _ => panic!("expected audio"),
        }
    }

    #[test]
    fn white_maps_to_max_luma() {
        let f = Frame {
            width: 1,
            height: 1,
            colour: ColourSpace::Rgb,
            pixels: vec![255, 255, 255],
        };
        let out = convert_colour(&f, ColourSpace::Gray).unwrap();
        assert_eq!(out.pixels, vec![255]);
    }

    #[test]
    fn rgb_yuv_round_trip_is_close() {
        let f = Frame {
            width: 1,
            height: 1,
            colour: ColourSpace::Rgb,
            pixels: vec![200, 30, 90],
        };
        let yuv = convert_colour(&f, ColourSpace::Yuv).unwrap();
        let back = convert_colour(&yuv, ColourSpace::Rgb).unwrap();
        for (a, b) in f.pixels.iter().zip(back.pixels.iter()) {
            assert!((*a as i32 - *b as i32).abs() <= 2, "{:?} vs {:?}", f.pixels, back.pixels);
        }
    }

    #[test]
    fn audio_decimation_picks_every_kth() {
        let w = AudioWindow {
            sample_rate_hz: 8,
            bit_depth: BitDepth::B16,
            window_s: 1.0,
            samples: vec![0, 1, 2, 3, 4, 5, 6, 7],
        };
        let out = reduce_audio_rate(&w, 4);
        assert_eq!(out.samples, vec![0, 2, 4, 6]);
    }

    #[test]
    fn gray_cannot_convert_out() {
        let f = Frame {
            width: 1,
            height: 1,
            colour: ColourSpace::Gray,
            pixels: vec![10],
        };
        assert!(convert_colour(&f, ColourSpace::Rgb).is_err());
    }

    #[test]
    fn mismatched_transform_is_rejected() {
        let f = Frame {
            width: 2,
            height: 2,
            colour: ColourSpace::Rgb,
            pixels: vec![0; 12],
        };
        let err = apply_transform(
            &Transform::BitDepthReduce {
                depth: BitDepth::B8,
            },
            &frame_sample(f),
        )
        .unwrap_err();
        assert!(matches!(err, TransformError::FormatMismatch(_)));
    }

    #[test]
    fn upscale_is_rejected() {
        let f = Frame {
            width: 2,
            height: 2,
            colour: ColourSpace::Gray,
            pixels: vec![0; 4],
        };
        assert!(apply_transform(
            &Transform::Resize {
                width: 4,
                height: 4
            },
            &frame_sample(f)
        )
        .is_err());
    }
}
