//! Frequency-to-electrode allocation and the clinical map (T/C levels and
//! loudness-growth parameters), plus the plain-text table format both load
//! from.
//!
//! ```text
//! # comment
//! base_level = 0.015625
//! saturation_level = 1.0
//! q_factor = 416.2
//! # channel electrode lo_bin hi_bin t_level c_level
//!  1 22  2  2 100 200
//!  2 21  3  3 100 200
//! ```
//!
//! Channel 1 is the lowest-frequency band; FFT bin ranges are inclusive.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec;
use crate::error::{Error, Result};

pub const MAX_ELECTRODES: usize = 22;

static NUCLEUS_22: &str = include_str!("../../data/nucleus22.map");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Band {
    /// First FFT bin (inclusive).
    pub lo_bin: usize,
    /// Last FFT bin (inclusive).
    pub hi_bin: usize,
    /// Electrode number, 1 (basal) ..= 22 (apical).
    pub electrode: u8,
}

impl Band {
    pub fn bins(&self) -> std::ops::RangeInclusive<usize> {
        self.lo_bin..=self.hi_bin
    }
}

/// Per-channel FFT bin ranges, ordered from low to high frequency.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationTable {
    pub bands: Vec<Band>,
}

impl AllocationTable {
    /// The standard 22-channel allocation (188 Hz - 7938 Hz at 16 kHz,
    /// 128-point FFT).
    pub fn nucleus_22() -> Self {
        parse_map_table(NUCLEUS_22).expect("bundled table parses").0
    }

    pub fn num_channels(&self) -> usize {
        self.bands.len()
    }

    pub fn electrodes(&self) -> Vec<u8> {
        self.bands.iter().map(|b| b.electrode).collect()
    }

    pub fn validate(&self, num_bins: usize) -> Result<()> {
        if self.bands.is_empty() || self.bands.len() > MAX_ELECTRODES {
            return Err(Error::invalid(format!("allocation has {} channels (1..=22 allowed)", self.bands.len())));
        }
        let mut seen = [false; MAX_ELECTRODES + 1];
        for (i, b) in self.bands.iter().enumerate() {
            if b.lo_bin > b.hi_bin || b.hi_bin >= num_bins {
                return Err(Error::invalid(format!("channel {} has invalid bins {}..={}", i + 1, b.lo_bin, b.hi_bin)));
            }
            if i > 0 && b.lo_bin <= self.bands[i - 1].hi_bin {
                return Err(Error::invalid(format!("channel {} overlaps or is out of order", i + 1)));
            }
            let e = usize::from(b.electrode);
            if e == 0 || e > MAX_ELECTRODES || std::mem::replace(&mut seen[e], true) {
                return Err(Error::invalid(format!("channel {} has invalid or repeated electrode {e}", i + 1)));
            }
        }
        Ok(())
    }

    /// Centre frequency of a channel in Hz for the given FFT geometry.
    pub fn center_hz(&self, channel: usize, fft_size: usize, rate: u32) -> f64 {
        let b = &self.bands[channel];
        0.5 * (b.lo_bin + b.hi_bin) as f64 * f64::from(rate) / fft_size as f64
    }
}

/// Clinical map: threshold (T) and comfort (C) levels per channel and the
/// loudness-growth function that maps envelopes between them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapParams {
    pub t_levels: Vec<u8>,
    pub c_levels: Vec<u8>,
    /// Envelope mapped to the T level.
    pub base_level: f64,
    /// Envelope mapped to the C level.
    pub saturation_level: f64,
    /// Loudness-growth steepness.
    pub q_factor: f64,
}

impl MapParams {
    pub fn uniform(channels: usize, t: u8, c: u8) -> Self {
        Self { t_levels: vec![t; channels], c_levels: vec![c; channels], base_level: 4.0 / 256.0, saturation_level: 1.0, q_factor: 416.2 }
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.t_levels.len() != channels || self.c_levels.len() != channels {
            return Err(Error::invalid("map T/C level count differs from channel count"));
        }
        if let Some(i) = (0..channels).find(|&i| self.t_levels[i] >= self.c_levels[i]) {
            return Err(Error::invalid(format!("channel {}: T level must be below C level", i + 1)));
        }
        if !(self.base_level < self.saturation_level) || !(self.base_level >= 0.0) {
            return Err(Error::invalid("map requires 0 <= base_level < saturation_level"));
        }
        if !(self.q_factor > 0.0) {
            return Err(Error::invalid("map q_factor must be positive"));
        }
        Ok(())
    }
}

impl Default for MapParams {
    fn default() -> Self {
        parse_map_table(NUCLEUS_22).expect("bundled table parses").1
    }
}

pub fn parse_map_table(text: &str) -> Result<(AllocationTable, MapParams)> {
    let bad = |line: usize, msg: &str| Error::format("map table", format!("line {line}: {msg}"));
    let mut base = None;
    let mut sat = None;
    let mut q = None;
    let mut rows: Vec<(usize, Band, u8, u8)> = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let ln = ln + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some((key, value)) = line.split_once('=') {
            let v: f64 = value.trim().parse().map_err(|_| bad(ln, "expected a number"))?;
            match key.trim() {
                "base_level" => base = Some(v),
                "saturation_level" => sat = Some(v),
                "q_factor" => q = Some(v),
                other => return Err(bad(ln, &format!("unknown key `{other}`"))),
            }
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(bad(ln, "expected 6 columns"));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad(ln, "expected an integer"));
        let level = |s: &str| s.parse::<u8>().map_err(|_| bad(ln, "level must be 0..=255"));
        let electrode = u8::try_from(num(f[1])?).map_err(|_| bad(ln, "electrode out of range"))?;
        rows.push((num(f[0])?, Band { lo_bin: num(f[2])?, hi_bin: num(f[3])?, electrode }, level(f[4])?, level(f[5])?));
    }
    rows.sort_by_key(|r| r.0);
    if rows.iter().enumerate().any(|(i, r)| r.0 != i + 1) {
        return Err(Error::format("map table", "channels must be numbered 1..=n without gaps"));
    }
    let defaults = MapParams::uniform(0, 0, 1);
    let map = MapParams {
        t_levels: rows.iter().map(|r| r.2).collect(),
        c_levels: rows.iter().map(|r| r.3).collect(),
        base_level: base.unwrap_or(defaults.base_level),
        saturation_level: sat.unwrap_or(defaults.saturation_level),
        q_factor: q.unwrap_or(defaults.q_factor),
    };
    let alloc = AllocationTable { bands: rows.into_iter().map(|r| r.1).collect() };
    map.validate(alloc.num_channels())?;
    Ok((alloc, map))
}

pub fn load_map_table(path: impl AsRef<Path>) -> Result<(AllocationTable, MapParams)> {
    let path = path.as_ref();
    let bytes = codec::read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::format("map table", "not utf-8"))?;
    parse_map_table(&text)
}

pub fn render_map_table(alloc: &AllocationTable, map: &MapParams) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "base_level = {}", map.base_level);
    let _ = writeln!(s, "saturation_level = {}", map.saturation_level);
    let _ = writeln!(s, "q_factor = {}", map.q_factor);
    let _ = writeln!(s, "# channel electrode lo_bin hi_bin t_level c_level");
    for (i, b) in alloc.bands.iter().enumerate() {
        let _ = writeln!(s, "{} {} {} {} {} {}", i + 1, b.electrode, b.lo_bin, b.hi_bin, map.t_levels[i], map.c_levels[i]);
    }
    s
}
