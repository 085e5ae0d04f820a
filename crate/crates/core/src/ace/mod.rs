//! ACE (Advanced Combination Encoder) simulation: pre-emphasis, Hamming
//! framed FFT filterbank, N-of-M maxima selection and loudness-growth
//! mapping to clinical current levels.

mod electrodogram;
mod table;

use serde::{Deserialize, Serialize};

pub use electrodogram::Electrodogram;
pub use table::{load_map_table, parse_map_table, render_map_table, AllocationTable, Band, MapParams, MAX_ELECTRODES};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{fnv1a, Scalar};
use crate::spectrum::{hamming, RealFft};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AceConfig {
    /// Rate the encoder runs at; callers resample to it first.
    pub analysis_rate: u32,
    /// FFT frame length in samples (power of two).
    pub frame_len: usize,
    pub hop: usize,
    pub pre_emphasis: f64,
    /// Channels selected per frame (N of M).
    pub maxima: usize,
    pub allocation: AllocationTable,
    pub map: MapParams,
}

impl Default for AceConfig {
    /// 16 kHz, 128-point frames with 87.5% overlap, 8 of 22 maxima, the
    /// standard 22-channel allocation and a flat T=100 / C=200 map.
    fn default() -> Self {
        Self {
            analysis_rate: 16_000,
            frame_len: 128,
            hop: 16,
            pre_emphasis: 0.97,
            maxima: 8,
            allocation: AllocationTable::nucleus_22(),
            map: MapParams::default(),
        }
    }
}

impl AceConfig {
    pub fn num_channels(&self) -> usize {
        self.allocation.num_channels()
    }

    pub fn hop_seconds(&self) -> f64 {
        self.hop as f64 / f64::from(self.analysis_rate)
    }

    pub fn validate(&self) -> Result<()> {
        if self.analysis_rate == 0 {
            return Err(Error::invalid("ACE analysis rate must be positive"));
        }
        if self.frame_len < 2 || !self.frame_len.is_power_of_two() {
            return Err(Error::invalid(format!("ACE frame length {} is not a power of two", self.frame_len)));
        }
        if self.hop == 0 || self.hop > self.frame_len {
            return Err(Error::invalid(format!("ACE hop {} must be in 1..=frame_len", self.hop)));
        }
        if !(0.0..1.0).contains(&self.pre_emphasis) {
            return Err(Error::invalid("pre-emphasis coefficient must lie in [0, 1)"));
        }
        self.allocation.validate(self.frame_len / 2 + 1)?;
        let m = self.num_channels();
        if self.maxima == 0 || self.maxima > m {
            return Err(Error::invalid(format!("maxima {} must be in 1..={m}", self.maxima)));
        }
        self.map.validate(m)
    }

    pub fn fingerprint(&self) -> u64 {
        fnv1a(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    /// Number of analysis frames for a buffer of `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.frame_len {
            0
        } else {
            (len - self.frame_len) / self.hop + 1
        }
    }
}

/// First-order pre-emphasis `y[n] = x[n] - coeff · x[n-1]` with `x[-1] = 0`.
pub fn pre_emphasize<S: Scalar>(buf: &AudioBuffer<S>, coeff: f64) -> AudioBuffer<S> {
    let c = S::lit(coeff);
    let mut prev = S::zero();
    let samples = buf
        .samples
        .iter()
        .map(|&x| {
            let y = x - c * prev;
            prev = x;
            y
        })
        .collect();
    AudioBuffer::new(samples, buf.rate)
}

/// Per-frame channel envelopes (frames × channels).
///
/// Each channel's envelope is the root-sum-square of the FFT magnitudes in
/// its bin range, divided by half the window sum so that a full-scale
/// sinusoid centred on a single-bin channel has envelope 1.
pub fn filterbank_envelope<S: Scalar>(buf: &AudioBuffer<S>, cfg: &AceConfig) -> Result<Matrix<S>> {
    if buf.rate != cfg.analysis_rate {
        return Err(Error::RateMismatch(cfg.analysis_rate, buf.rate));
    }
    if buf.len() < cfg.frame_len {
        return Err(Error::invalid(format!("buffer of {} samples is shorter than one ACE frame ({})", buf.len(), cfg.frame_len)));
    }
    let frames = cfg.frame_count(buf.len());
    let m = cfg.num_channels();
    let window = hamming::<S>(cfg.frame_len);
    let norm = S::lit(2.0) / window.iter().copied().sum::<S>();
    let mut fft = RealFft::new(cfg.frame_len);
    let mut power = vec![S::zero(); fft.num_bins()];
    let mut frame = vec![S::zero(); cfg.frame_len];
    let mut out = Matrix::zeros(frames, m);
    for f in 0..frames {
        let start = f * cfg.hop;
        for ((d, &x), &w) in frame.iter_mut().zip(&buf.samples[start..start + cfg.frame_len]).zip(&window) {
            *d = x * w;
        }
        fft.power_into(&frame, &mut power);
        let row = out.row_mut(f);
        for (env, band) in row.iter_mut().zip(&cfg.allocation.bands) {
            let p: S = power[band.bins()].iter().copied().sum();
            *env = p.sqrt() * norm;
        }
    }
    Ok(out)
}

/// Indices of the `n` largest envelopes, ascending. Ties go to the lower
/// channel; channels with zero envelope are never selected.
pub fn select_maxima<S: Scalar>(envelopes: &[S], n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..envelopes.len()).filter(|&i| envelopes[i] > S::zero()).collect();
    // stable sort keeps lower indices first among equal values
    order.sort_by(|&a, &b| envelopes[b].partial_cmp(&envelopes[a]).unwrap_or(std::cmp::Ordering::Equal));
    order.truncate(n);
    order.sort_unstable();
    order
}

/// Loudness-growth function: maps an envelope on `channel` to a current
/// level between that channel's T and C levels.
pub fn lgf_map<S: Scalar>(envelope: S, channel: usize, map: &MapParams) -> u8 {
    let x = envelope.as_f64();
    let v = ((x - map.base_level) / (map.saturation_level - map.base_level)).clamp(0.0, 1.0);
    let p = (map.q_factor * v).ln_1p() / map.q_factor.ln_1p();
    let t = f64::from(map.t_levels[channel]);
    let c = f64::from(map.c_levels[channel]);
    (t + p * (c - t)).round().clamp(t, c) as u8
}

/// Full encoding chain: pre-emphasis, filterbank envelopes, per-frame maxima
/// selection and loudness mapping. Unselected channels carry level 0.
pub fn encode<S: Scalar>(buf: &AudioBuffer<S>, cfg: &AceConfig) -> Result<Electrodogram> {
    cfg.validate()?;
    if buf.is_empty() {
        return Err(Error::invalid("cannot encode an empty buffer"));
    }
    let emphasized = pre_emphasize(buf, cfg.pre_emphasis);
    let env = filterbank_envelope(&emphasized, cfg)?;
    let m = cfg.num_channels();
    let mut levels = vec![0u8; env.rows() * m];
    for (f, row) in env.row_iter().enumerate() {
        for ch in select_maxima(row, cfg.maxima) {
            levels[f * m + ch] = lgf_map(row[ch], ch, &cfg.map);
        }
    }
    Ok(Electrodogram::new(levels, cfg.allocation.electrodes(), cfg.hop_seconds(), cfg.fingerprint()))
}
