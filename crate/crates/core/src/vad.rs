//! Energy-based voice activity detection relative to the utterance peak.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VadConfig {
    pub frame_ms: f64,
    /// Frames whose log-energy is more than this many dB below the loudest
    /// frame are inactive.
    pub energy_floor_db: f64,
    /// Inactive frames kept after the last active one.
    pub hangover_frames: usize,
    /// Segments shorter than this are dropped.
    pub min_segment_ms: f64,
}

impl Default for VadConfig {
    fn default() -> Self {
        Self { frame_ms: 10.0, energy_floor_db: 35.0, hangover_frames: 5, min_segment_ms: 50.0 }
    }
}

impl VadConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.frame_ms > 0.0) {
            return Err(Error::invalid("vad frame_ms must be positive"));
        }
        if !(self.min_segment_ms >= 0.0) || !(self.energy_floor_db >= 0.0) {
            return Err(Error::invalid("vad min_segment_ms and energy_floor_db must be non-negative"));
        }
        Ok(())
    }

    pub fn frame_len(&self, rate: u32) -> usize {
        ((self.frame_ms * f64::from(rate) / 1000.0).round() as usize).max(1)
    }
}

/// Sorted, non-overlapping half-open sample ranges.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SegmentList {
    pub segments: Vec<Range<usize>>,
}

impl SegmentList {
    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn total_len(&self) -> usize {
        self.segments.iter().map(|r| r.len()).sum()
    }
}

/// Marks frames within `energy_floor_db` of the peak frame energy as speech,
/// extends each active run by the hangover and drops short segments.
pub fn detect_speech<S: Scalar>(buf: &AudioBuffer<S>, cfg: &VadConfig) -> SegmentList {
    let n = buf.len();
    if n == 0 {
        return SegmentList::default();
    }
    let flen = cfg.frame_len(buf.rate);
    let energies: Vec<f64> = buf.samples.chunks(flen).map(|c| c.iter().map(|&x| (x * x).as_f64()).sum::<f64>() / c.len() as f64).collect();
    let peak = energies.iter().copied().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return SegmentList::default();
    }
    let threshold_db = 10.0 * peak.log10() - cfg.energy_floor_db;

    let mut active = vec![false; energies.len()];
    let mut hang = 0usize;
    for (a, &e) in active.iter_mut().zip(&energies) {
        if e > 0.0 && 10.0 * e.log10() > threshold_db {
            *a = true;
            hang = cfg.hangover_frames;
        } else if hang > 0 {
            *a = true;
            hang -= 1;
        }
    }

    let min_len = (cfg.min_segment_ms * f64::from(buf.rate) / 1000.0).round() as usize;
    let mut segments = Vec::new();
    let mut f = 0;
    while f < active.len() {
        if !active[f] {
            f += 1;
            continue;
        }
        let start = f;
        while f < active.len() && active[f] {
            f += 1;
        }
        let seg = (start * flen)..(f * flen).min(n);
        if seg.len() >= min_len.max(1) {
            segments.push(seg);
        }
    }
    SegmentList { segments }
}

/// Concatenates the detected speech segments in their original order.
pub fn trim_silence<S: Scalar>(buf: &AudioBuffer<S>, cfg: &VadConfig) -> AudioBuffer<S> {
    let segs = detect_speech(buf, cfg);
    let mut out = Vec::with_capacity(segs.total_len());
    for r in &segs.segments {
        out.extend_from_slice(&buf.samples[r.clone()]);
    }
    AudioBuffer::new(out, buf.rate)
}
