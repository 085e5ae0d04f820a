//! Classifier-ready feature sequences from electrodograms (CI path) or from
//! waveforms via MFCC (normal-hearing baseline), plus CMVN and deltas.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ace::Electrodogram;
use crate::audio::AudioBuffer;
use crate::codec::{self, LeReader, LeWriter};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::spectrum::{hamming, RealFft};

/// Regression half-window used for electrodogram deltas.
pub const DELTA_WINDOW: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureSource {
    CiElectrodogram,
    NhMfcc,
}

impl FeatureSource {
    fn code(self) -> u32 {
        match self {
            FeatureSource::CiElectrodogram => 1,
            FeatureSource::NhMfcc => 2,
        }
    }

    fn from_code(c: u32) -> Option<Self> {
        match c {
            1 => Some(FeatureSource::CiElectrodogram),
            2 => Some(FeatureSource::NhMfcc),
            _ => None,
        }
    }
}

/// Time-ordered feature vectors of constant dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence<S> {
    frames: Matrix<S>,
    pub source: FeatureSource,
    pub frame_seconds: f64,
}

impl<S: Scalar> FeatureSequence<S> {
    pub fn new(frames: Matrix<S>, source: FeatureSource, frame_seconds: f64) -> Result<Self> {
        if !frames.is_finite() {
            return Err(Error::numerical("feature sequence contains non-finite values"));
        }
        Ok(Self { frames, source, frame_seconds })
    }

    pub fn frames(&self) -> &Matrix<S> {
        &self.frames
    }

    pub fn into_frames(self) -> Matrix<S> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    /// Keeps every `step`-th frame.
    pub fn decimate(&self, step: usize) -> Self {
        let rows: Vec<&[S]> = self.frames.row_iter().step_by(step.max(1)).collect();
        Self { frames: Matrix::from_rows(&rows, self.dim()), source: self.source, frame_seconds: self.frame_seconds * step.max(1) as f64 }
    }

    /// Versioned binary container: magic `CIFS`, version, dim, frame count,
    /// source code (u32), frame spacing (f64), then frames as row-major
    /// little-endian `f32`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = LeWriter::new(b"CIFS", 1);
        w.u32(self.dim() as u32);
        w.u32(self.len() as u32);
        w.u32(self.source.code());
        w.f64(self.frame_seconds);
        for &v in self.frames.as_slice() {
            w.f32(v.as_f64() as f32);
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = LeReader::open("feature file", bytes, b"CIFS", 1)?;
        let dim = r.u32()? as usize;
        let len = r.u32()? as usize;
        let source = FeatureSource::from_code(r.u32()?).ok_or_else(|| Error::format("feature file", "unknown source"))?;
        let frame_seconds = r.f64()?;
        let data = (0..dim * len).map(|_| r.f32().map(|v| S::lit(f64::from(v)))).collect::<Result<Vec<_>>>()?;
        r.finish()?;
        Self::new(Matrix::from_vec(len, dim, data), source, frame_seconds)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&codec::read_file(path.as_ref())?)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let header: Vec<String> = (0..self.dim()).map(|d| format!("f{d}")).collect();
        let _ = writeln!(s, "{}", header.join(","));
        for row in self.frames.row_iter() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(s, "{}", cells.join(","));
        }
        s
    }
}

/// Electrodogram levels as feature vectors.
///
/// All-zero frames are dropped. With `normalize` the levels are divided by
/// 255; with `deltas` regression deltas over ±[`DELTA_WINDOW`] frames are
/// appended.
pub fn electrodogram_features<S: Scalar>(eg: &Electrodogram, normalize: bool, deltas: bool) -> Result<FeatureSequence<S>> {
    let scale = if normalize { S::one() / S::lit(255.0) } else { S::one() };
    let m = eg.num_channels();
    let rows: Vec<Vec<S>> =
        eg.frames().filter(|f| f.iter().any(|&v| v != 0)).map(|f| f.iter().map(|&v| S::lit(f64::from(v)) * scale).collect()).collect();
    if rows.is_empty() {
        return Err(Error::invalid("electrodogram has no stimulated frames"));
    }
    let seq = FeatureSequence::new(Matrix::from_rows(&rows, m), FeatureSource::CiElectrodogram, eg.hop_seconds)?;
    if deltas {
        append_deltas(&seq, DELTA_WINDOW)
    } else {
        Ok(seq)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfccConfig {
    pub num_mel_filters: usize,
    pub num_ceps: usize,
    pub frame_len: usize,
    pub hop: usize,
    pub include_c0: bool,
    pub low_hz: f64,
    /// Upper filterbank edge; `None` means Nyquist.
    pub high_hz: Option<f64>,
    /// Filter energies are floored here before the logarithm.
    pub log_floor: f64,
}

impl Default for MfccConfig {
    /// 40 filters, 19 cepstra without c0, 25 ms / 10 ms at 16 kHz.
    fn default() -> Self {
        Self {
            num_mel_filters: 40,
            num_ceps: 19,
            frame_len: 400,
            hop: 160,
            include_c0: false,
            low_hz: 0.0,
            high_hz: None,
            log_floor: 1e-10,
        }
    }
}

impl MfccConfig {
    pub fn validate(&self) -> Result<()> {
        let needed = if self.include_c0 { self.num_ceps } else { self.num_ceps + 1 };
        if self.num_ceps == 0 || needed > self.num_mel_filters {
            return Err(Error::invalid("num_ceps must be at most the number of mel filters"));
        }
        if !(self.frame_len > self.hop && self.hop > 0) {
            return Err(Error::invalid("MFCC requires frame_len > hop > 0"));
        }
        Ok(())
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank (filters × bins), peak weight 1, with edges
/// equally spaced on the mel scale between `low_hz` and `high_hz`.
pub fn mel_filterbank<S: Scalar>(num_filters: usize, fft_size: usize, rate: u32, low_hz: f64, high_hz: f64) -> Matrix<S> {
    let nb = fft_size / 2 + 1;
    let (ml, mh) = (hz_to_mel(low_hz), hz_to_mel(high_hz));
    let edges: Vec<f64> = (0..num_filters + 2).map(|i| mel_to_hz(ml + (mh - ml) * i as f64 / (num_filters + 1) as f64)).collect();
    let bin_hz = f64::from(rate) / fft_size as f64;
    let mut fb = Matrix::zeros(num_filters, nb);
    for m in 0..num_filters {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for b in 0..nb {
            let f = b as f64 * bin_hz;
            let w = if f > lo && f <= mid {
                (f - lo) / (mid - lo)
            } else if f > mid && f < hi {
                (hi - f) / (hi - mid)
            } else {
                0.0
            };
            fb[(m, b)] = S::lit(w);
        }
    }
    fb
}

/// Orthonormal DCT-II basis rows `0..n_out` for inputs of length `n_in`.
fn dct_basis<S: Scalar>(n_in: usize, n_out: usize) -> Matrix<S> {
    let mut d = Matrix::zeros(n_out, n_in);
    let n = n_in as f64;
    for k in 0..n_out {
        let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
        for m in 0..n_in {
            d[(k, m)] = S::lit(scale * (std::f64::consts::PI * k as f64 * (m as f64 + 0.5) / n).cos());
        }
    }
    d
}

/// Mel-frequency cepstral coefficients.
pub fn mfcc<S: Scalar>(buf: &AudioBuffer<S>, cfg: &MfccConfig) -> Result<FeatureSequence<S>> {
    cfg.validate()?;
    if buf.len() < cfg.frame_len {
        return Err(Error::invalid(format!("buffer of {} samples is shorter than one MFCC frame", buf.len())));
    }
    let fft_size = cfg.frame_len.next_power_of_two();
    let high = cfg.high_hz.unwrap_or(f64::from(buf.rate) / 2.0);
    let fb = mel_filterbank::<S>(cfg.num_mel_filters, fft_size, buf.rate, cfg.low_hz, high);
    let first = usize::from(!cfg.include_c0);
    let dct = dct_basis::<S>(cfg.num_mel_filters, first + cfg.num_ceps);
    let window = hamming::<S>(cfg.frame_len);
    let floor = S::lit(cfg.log_floor);
    let mut fft = RealFft::new(fft_size);
    let mut power = vec![S::zero(); fft.num_bins()];
    let mut frame = vec![S::zero(); cfg.frame_len];
    let frames = (buf.len() - cfg.frame_len) / cfg.hop + 1;
    let mut out = Matrix::zeros(frames, cfg.num_ceps);
    let mut logmel = vec![S::zero(); cfg.num_mel_filters];
    for f in 0..frames {
        let start = f * cfg.hop;
        for ((d, &x), &w) in frame.iter_mut().zip(&buf.samples[start..start + cfg.frame_len]).zip(&window) {
            *d = x * w;
        }
        fft.power_into(&frame, &mut power);
        for (m, l) in logmel.iter_mut().enumerate() {
            let e = crate::linalg::dot(fb.row(m), &power);
            *l = e.max(floor).ln();
        }
        for (k, o) in out.row_mut(f).iter_mut().enumerate() {
            *o = crate::linalg::dot(dct.row(first + k), &logmel);
        }
    }
    FeatureSequence::new(out, FeatureSource::NhMfcc, cfg.hop as f64 / f64::from(buf.rate))
}

/// Per-utterance mean and variance normalization. Constant dimensions are
/// centred only.
pub fn cmvn<S: Scalar>(seq: &FeatureSequence<S>) -> Result<FeatureSequence<S>> {
    let t = seq.len();
    if t < 2 {
        return Err(Error::invalid("CMVN needs at least two frames"));
    }
    let d = seq.dim();
    let n = S::from_usize_lossy(t);
    let mut mean = vec![S::zero(); d];
    for row in seq.frames.row_iter() {
        crate::linalg::axpy(S::one(), row, &mut mean);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![S::zero(); d];
    for row in seq.frames.row_iter() {
        for ((v, &x), &m) in var.iter_mut().zip(row).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    let scale: Vec<S> = var
        .iter()
        .zip(&mean)
        .map(|(&v, &m)| {
            let v = v / n;
            // relative threshold: constant columns leave only rounding noise
            if v > S::epsilon() * S::epsilon() * (m * m + S::one()) * S::lit(16.0) {
                S::one() / v.sqrt()
            } else {
                S::one()
            }
        })
        .collect();
    let mut out = seq.frames.clone();
    for i in 0..t {
        for ((o, &m), &s) in out.row_mut(i).iter_mut().zip(&mean).zip(&scale) {
            *o = (*o - m) * s;
        }
    }
    FeatureSequence::new(out, seq.source, seq.frame_seconds)
}

/// Appends regression deltas over ±`window` frames (edges replicated).
pub fn append_deltas<S: Scalar>(seq: &FeatureSequence<S>, window: usize) -> Result<FeatureSequence<S>> {
    if window == 0 {
        return Err(Error::invalid("delta window must be at least 1"));
    }
    let t = seq.len();
    if t <= 2 * window {
        return Err(Error::invalid(format!("{t} frames is too short for deltas over ±{window}")));
    }
    let d = seq.dim();
    let denom = S::from_usize_lossy(2 * (1..=window).map(|n| n * n).sum::<usize>());
    let mut out = Matrix::zeros(t, 2 * d);
    for i in 0..t {
        let (base, delta) = out.row_mut(i).split_at_mut(d);
        base.copy_from_slice(seq.frames.row(i));
        for n in 1..=window {
            let fwd = seq.frames.row((i + n).min(t - 1));
            let back = seq.frames.row(i.saturating_sub(n));
            let w = S::from_usize_lossy(n);
            for ((dv, &a), &b) in delta.iter_mut().zip(fwd).zip(back) {
                *dv += w * (a - b);
            }
        }
        delta.iter_mut().for_each(|v| *v /= denom);
    }
    FeatureSequence::new(out, seq.source, seq.frame_seconds)
}
