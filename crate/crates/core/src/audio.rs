//! Audio ingestion, resampling, noise synthesis and SNR-exact mixing.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::spectrum::{fft_convolve, hann, RealFft};

/// Mono sample sequence at a fixed rate.
///
/// Speech buffers hold amplitudes in `[-1, 1]`. Synthesized noise is unit
/// variance and may exceed that range; it is only ever used as an addend to
/// [`mix_at_snr`], whose output is clipped.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioBuffer<S> {
    pub samples: Vec<S>,
    pub rate: u32,
}

impl<S: Scalar> AudioBuffer<S> {
    pub fn new(samples: Vec<S>, rate: u32) -> Self {
        assert!(rate > 0, "sample rate must be positive");
        Self { samples, rate }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.rate)
    }

    pub fn scaled(&self, gain: S) -> Self {
        Self { samples: self.samples.iter().map(|&x| x * gain).collect(), rate: self.rate }
    }

    /// Mean square of the samples; zero for an empty buffer.
    pub fn power(&self) -> S {
        mean_power(&self.samples)
    }
}

pub fn mean_power<S: Scalar>(x: &[S]) -> S {
    if x.is_empty() {
        return S::zero();
    }
    x.iter().map(|&v| v * v).sum::<S>() / S::from_usize_lossy(x.len())
}

/// Reads a PCM WAV file (integer or 32-bit float) and downmixes to mono.
pub fn load_wav<S: Scalar>(path: impl AsRef<Path>) -> Result<AudioBuffer<S>> {
    let path = path.as_ref();
    let wav_err = |source| Error::Wav { path: path.to_path_buf(), source };
    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    let channels = usize::from(spec.channels.max(1));
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Int => {
            let full_scale = f64::from(1u32 << (spec.bits_per_sample - 1));
            reader.samples::<i32>().map(|s| s.map(|v| f64::from(v) / full_scale)).collect::<std::result::Result<_, _>>().map_err(wav_err)?
        }
        hound::SampleFormat::Float => {
            reader.samples::<f32>().map(|s| s.map(f64::from)).collect::<std::result::Result<_, _>>().map_err(wav_err)?
        }
    };
    if interleaved.len() < channels {
        return Err(Error::format("wav", format!("{}: zero-length stream", path.display())));
    }
    let scale = 1.0 / channels as f64;
    let samples = interleaved.chunks_exact(channels).map(|frame| S::lit(frame.iter().sum::<f64>() * scale)).collect();
    Ok(AudioBuffer::new(samples, spec.sample_rate))
}

/// Writes a mono 16-bit PCM WAV; samples are clipped to `[-1, 1]`.
pub fn save_wav<S: Scalar>(buf: &AudioBuffer<S>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let wav_err = |source| Error::Wav { path: path.to_path_buf(), source };
    let spec = hound::WavSpec { channels: 1, sample_rate: buf.rate, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
    let mut w = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &x in &buf.samples {
        let v = (x.as_f64() * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_sample(v).map_err(wav_err)?;
    }
    w.finalize().map_err(wav_err)
}

const SINC_ZERO_CROSSINGS: usize = 32;
const MAX_POLYPHASE: u64 = 4096;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn blackman(u: f64) -> f64 {
    // u in [-1, 1]
    if u.abs() >= 1.0 {
        return 0.0;
    }
    let p = std::f64::consts::PI * u;
    0.42 + 0.5 * p.cos() + 0.08 * (2.0 * p).cos()
}

struct SincKernel {
    cutoff: f64,
    half_width: f64,
}

impl SincKernel {
    fn value(&self, x: f64) -> f64 {
        let a = self.cutoff * x;
        let sinc = if a.abs() < 1e-12 { 1.0 } else { (std::f64::consts::PI * a).sin() / (std::f64::consts::PI * a) };
        self.cutoff * sinc * blackman(x / self.half_width)
    }
}

/// Band-limited (windowed-sinc) sample-rate conversion.
///
/// Output length is `round(len · target_rate / rate)`. Equal rates return a
/// bit-identical copy.
pub fn resample<S: Scalar>(buf: &AudioBuffer<S>, target_rate: u32) -> Result<AudioBuffer<S>> {
    if target_rate == 0 {
        return Err(Error::invalid("target rate must be positive"));
    }
    if target_rate == buf.rate {
        return Ok(buf.clone());
    }
    let (src, dst) = (u64::from(buf.rate), u64::from(target_rate));
    let g = gcd(src, dst);
    let (up, down) = (dst / g, src / g);
    let out_len = ((buf.len() as u128 * u128::from(dst) + u128::from(src) / 2) / u128::from(src)) as usize;

    let ratio = dst as f64 / src as f64;
    let cutoff = if ratio < 1.0 { 0.95 * ratio } else { 1.0 };
    let kernel = SincKernel { cutoff, half_width: SINC_ZERO_CROSSINGS as f64 / cutoff };
    let reach = kernel.half_width.ceil() as i64;
    let taps = (2 * reach + 1) as usize;

    // Output sample n sits at input position n·down/up; its fractional part
    // cycles through `up` phases, so the kernel is tabulated once per phase.
    let table: Option<Vec<Vec<f64>>> = (up <= MAX_POLYPHASE).then(|| {
        (0..up)
            .map(|p| {
                let frac = p as f64 / up as f64;
                (0..taps).map(|j| kernel.value(frac - (j as i64 - reach) as f64)).collect()
            })
            .collect()
    });

    let x: Vec<f64> = buf.samples.iter().map(|s| s.as_f64()).collect();
    let n_in = x.len() as i64;
    let mut out = Vec::with_capacity(out_len);
    let mut row = vec![0.0; taps];
    for n in 0..out_len as u64 {
        let num = n * down;
        let base = (num / up) as i64;
        let phase = num % up;
        let weights: &[f64] = match &table {
            Some(t) => &t[phase as usize],
            None => {
                let frac = phase as f64 / up as f64;
                for (j, w) in row.iter_mut().enumerate() {
                    *w = kernel.value(frac - (j as i64 - reach) as f64);
                }
                &row
            }
        };
        let mut acc = 0.0;
        for (j, &w) in weights.iter().enumerate() {
            let i = base + j as i64 - reach;
            if i >= 0 && i < n_in {
                acc += w * x[i as usize];
            }
        }
        out.push(S::lit(acc));
    }
    Ok(AudioBuffer::new(out, target_rate))
}

/// I.i.d. standard-normal noise, a pure function of `(length, seed)`.
pub fn gen_wgn<S: Scalar>(length: usize, rate: u32, seed: u64) -> AudioBuffer<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..length).map(|_| S::lit(rng.sample::<f64, _>(StandardNormal))).collect();
    AudioBuffer::new(samples, rate)
}

/// Long-term average magnitude spectrum, normalized to unit RMS over bins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralEnvelope<S> {
    pub magnitudes: Vec<S>,
    pub fft_size: usize,
    pub rate: u32,
}

impl<S: Scalar> SpectralEnvelope<S> {
    pub fn flat(fft_size: usize, rate: u32) -> Self {
        Self { magnitudes: vec![S::one(); fft_size / 2 + 1], fft_size, rate }
    }

    pub fn bin_hz(&self, bin: usize) -> f64 {
        bin as f64 * f64::from(self.rate) / self.fft_size as f64
    }

    pub fn to_f64(&self) -> SpectralEnvelope<f64> {
        SpectralEnvelope { magnitudes: self.magnitudes.iter().map(|m| m.as_f64()).collect(), fft_size: self.fft_size, rate: self.rate }
    }

    pub fn from_f64(env: &SpectralEnvelope<f64>) -> Self {
        Self { magnitudes: env.magnitudes.iter().map(|&m| S::lit(m)).collect(), fft_size: env.fft_size, rate: env.rate }
    }
}

/// Averages Hann-windowed magnitude spectra (50% overlap) over every frame
/// of every buffer. Buffers shorter than one frame contribute a single
/// zero-padded frame.
pub fn estimate_ltass<S: Scalar>(corpus: &[AudioBuffer<S>], fft_size: usize) -> Result<SpectralEnvelope<S>> {
    let first = corpus.first().ok_or_else(|| Error::invalid("LTASS of an empty corpus"))?;
    if fft_size < 2 || !fft_size.is_power_of_two() {
        return Err(Error::invalid(format!("LTASS fft size {fft_size} is not a power of two")));
    }
    if let Some(b) = corpus.iter().find(|b| b.rate != first.rate) {
        return Err(Error::RateMismatch(first.rate, b.rate));
    }
    let hop = fft_size / 2;
    let window = hann::<S>(fft_size);
    let mut fft = RealFft::new(fft_size);
    let nb = fft.num_bins();
    let mut total = vec![S::zero(); nb];
    let mut frames = 0usize;
    let mut frame = vec![S::zero(); fft_size];
    let mut mag = vec![S::zero(); nb];
    for buf in corpus.iter().filter(|b| !b.is_empty()) {
        // per-buffer partial sums keep rounding independent of buffer order
        let mut part = vec![S::zero(); nb];
        let n_frames = if buf.len() <= fft_size { 1 } else { (buf.len() - fft_size) / hop + 1 };
        for f in 0..n_frames {
            let start = f * hop;
            frame.fill(S::zero());
            for (i, (d, &w)) in frame.iter_mut().zip(&window).enumerate() {
                if let Some(&x) = buf.samples.get(start + i) {
                    *d = x * w;
                }
            }
            fft.magnitudes_into(&frame, &mut mag);
            for (p, &m) in part.iter_mut().zip(&mag) {
                *p += m;
            }
        }
        for (t, p) in total.iter_mut().zip(part) {
            *t += p;
        }
        frames += n_frames;
    }
    if frames == 0 {
        return Err(Error::invalid("LTASS corpus contains only empty buffers"));
    }
    let inv = S::one() / S::from_usize_lossy(frames);
    for t in total.iter_mut() {
        *t *= inv;
    }
    let rms = (total.iter().map(|&m| m * m).sum::<S>() / S::from_usize_lossy(nb)).sqrt();
    if !(rms > S::zero()) {
        return Err(Error::invalid("LTASS corpus is silent"));
    }
    for t in total.iter_mut() {
        *t /= rms;
    }
    Ok(SpectralEnvelope { magnitudes: total, fft_size, rate: first.rate })
}

/// Linear-phase FIR whose magnitude response follows `env`, scaled to unit
/// energy so unit-variance white input yields unit-variance output.
pub fn shaping_filter<S: Scalar>(env: &SpectralEnvelope<S>) -> Vec<S> {
    use rustfft::num_complex::Complex;
    use rustfft::FftPlanner;

    let n = env.fft_size;
    let mut spec: Vec<Complex<S>> = vec![Complex::new(S::zero(), S::zero()); n];
    for (k, &m) in env.magnitudes.iter().enumerate() {
        spec[k] = Complex::new(m, S::zero());
        if k > 0 && k < n - k {
            spec[n - k] = Complex::new(m, S::zero());
        }
    }
    FftPlanner::new().plan_fft_inverse(n).process(&mut spec);
    let window = hann::<S>(n);
    let mut h: Vec<S> = (0..n).map(|i| spec[(i + n / 2) % n].re * window[i]).collect();
    let energy = h.iter().map(|&v| v * v).sum::<S>().sqrt();
    if energy > S::zero() {
        for v in h.iter_mut() {
            *v /= energy;
        }
    }
    h
}

/// Speech-shaped noise: seeded white noise filtered by [`shaping_filter`].
pub fn gen_ssn<S: Scalar>(env: &SpectralEnvelope<S>, length: usize, rate: u32, seed: u64) -> Result<AudioBuffer<S>> {
    if env.rate != rate {
        return Err(Error::RateMismatch(env.rate, rate));
    }
    if length == 0 {
        return Ok(AudioBuffer::new(Vec::new(), rate));
    }
    let h = shaping_filter(env);
    let white = gen_wgn::<S>(length + h.len() - 1, rate, seed);
    let full = fft_convolve(&white.samples, &h);
    // keep only fully-overlapped outputs so there is no start-up transient
    let samples = full[h.len() - 1..h.len() - 1 + length].to_vec();
    Ok(AudioBuffer::new(samples, rate))
}

/// Result of [`mix_at_snr`].
#[derive(Clone, Debug)]
pub struct Mixture<S> {
    pub audio: AudioBuffer<S>,
    /// Gain applied to the noise before summation.
    pub noise_gain: S,
    /// Samples that were hard-clipped to ±1 after summation.
    pub clipped: usize,
}

/// Adds `noise` (from sample 0, truncated to the clean length) scaled so the
/// clean-to-noise power ratio equals `snr_db`. `snr_db = +inf` returns the
/// clean signal unchanged.
pub fn mix_at_snr<S: Scalar>(clean: &AudioBuffer<S>, noise: &AudioBuffer<S>, snr_db: f64) -> Result<Mixture<S>> {
    if clean.rate != noise.rate {
        return Err(Error::RateMismatch(clean.rate, noise.rate));
    }
    if snr_db == f64::INFINITY {
        return Ok(Mixture { audio: clean.clone(), noise_gain: S::zero(), clipped: 0 });
    }
    if snr_db.is_nan() {
        return Err(Error::invalid("SNR is NaN"));
    }
    if noise.len() < clean.len() {
        return Err(Error::invalid(format!("noise ({}) shorter than clean ({})", noise.len(), clean.len())));
    }
    let p_clean = clean.power().as_f64();
    if !(p_clean > 0.0) {
        return Err(Error::invalid("clean signal is silent; SNR undefined"));
    }
    let noise_seg = &noise.samples[..clean.len()];
    let p_noise = mean_power(noise_seg).as_f64();
    if !(p_noise > 0.0) {
        return Err(Error::invalid("noise is silent"));
    }
    let gain = (p_clean / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    let g = S::lit(gain);
    let mut clipped = 0;
    let samples = clean
        .samples
        .iter()
        .zip(noise_seg)
        .map(|(&c, &n)| {
            let y = c + g * n;
            if y.abs() > S::one() {
                clipped += 1;
                y.max(-S::one()).min(S::one())
            } else {
                y
            }
        })
        .collect();
    if clipped > 0 {
        log::warn!("mix_at_snr: {clipped} samples clipped");
    }
    Ok(Mixture { audio: AudioBuffer::new(samples, clean.rate), noise_gain: g, clipped })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, rate: u32, len: usize, amp: f64) -> AudioBuffer<f64> {
        let samples = (0..len).map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / f64::from(rate)).sin()).collect();
        AudioBuffer::new(samples, rate)
    }

    #[test]
    fn resample_doubles_length_and_identity() {
        let b = tone(1000.0, 8000, 8000, 0.5);
        let up = resample(&b, 16000).unwrap();
        assert_eq!(up.len(), 16000);
        assert_eq!(up.rate, 16000);
        assert_eq!(resample(&b, 8000).unwrap(), b);
        let odd = resample(&tone(300.0, 8000, 1001, 0.5), 11025).unwrap();
        assert_eq!(odd.len(), (1001.0f64 * 11025.0 / 8000.0).round() as usize);
        assert!(resample(&b, 0).is_err());
    }

    #[test]
    fn resample_interpolates_original_points_on_integer_upsampling() {
        let b = tone(440.0, 8000, 4000, 0.5);
        let up = resample(&b, 16000).unwrap();
        // even output samples sit exactly on input samples; away from edges
        // the windowed sinc reproduces them
        for i in 100..3900 {
            assert!((up.samples[2 * i] - b.samples[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn wgn_is_deterministic_per_seed() {
        let a = gen_wgn::<f64>(1000, 8000, 7);
        assert_eq!(a, gen_wgn::<f64>(1000, 8000, 7));
        assert_ne!(a, gen_wgn::<f64>(1000, 8000, 8));
    }

    #[test]
    fn ltass_of_tone_peaks_at_tone_bin() {
        let b = tone(1000.0, 16000, 16000, 0.5);
        let env = estimate_ltass(&[b], 256).unwrap();
        let peak = (0..env.magnitudes.len()).max_by(|&a, &b| env.magnitudes[a].partial_cmp(&env.magnitudes[b]).unwrap()).unwrap();
        assert_eq!(peak, 16); // 1000 Hz / (16000 / 256)
    }

    #[test]
    fn ltass_duplicate_invariant() {
        let b = gen_wgn::<f64>(5000, 8000, 1);
        let c = tone(700.0, 8000, 3000, 0.3);
        let one = estimate_ltass(&[b.clone(), c.clone()], 256).unwrap();
        let two = estimate_ltass(&[b.clone(), c.clone(), b, c], 256).unwrap();
        for (a, b) in one.magnitudes.iter().zip(&two.magnitudes) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ltass_errors() {
        assert!(estimate_ltass::<f64>(&[], 256).is_err());
        let a = gen_wgn::<f64>(500, 8000, 1);
        let b = gen_wgn::<f64>(500, 16000, 1);
        assert!(matches!(estimate_ltass(&[a, b], 256), Err(Error::RateMismatch(..))));
    }

    #[test]
    fn ssn_rate_mismatch_and_determinism() {
        let env = SpectralEnvelope::<f64>::flat(256, 8000);
        assert!(gen_ssn(&env, 100, 16000, 1).is_err());
        assert_eq!(gen_ssn(&env, 1000, 8000, 3).unwrap(), gen_ssn(&env, 1000, 8000, 3).unwrap());
    }

    #[test]
    fn mix_scales_noise_to_requested_snr() {
        let clean = AudioBuffer::new(vec![1.0f64, -1.0, 1.0, -1.0], 8000);
        let noise = AudioBuffer::new(vec![0.5, 0.5, -0.5, -0.5, 9.0], 8000);
        let m = mix_at_snr(&clean, &noise, 10.0).unwrap();
        let scaled_power = mean_power(&noise.samples[..4]) * m.noise_gain * m.noise_gain;
        assert!((scaled_power - 0.1).abs() < 1e-6);
        // the noise adds to the first and last samples' magnitude
        assert_eq!(m.clipped, 2);
        assert!(m.audio.samples.iter().all(|x| x.abs() <= 1.0));
    }

    #[test]
    fn mix_infinite_snr_is_identity_and_errors() {
        let clean = tone(500.0, 8000, 800, 0.5);
        let noise = gen_wgn::<f64>(800, 8000, 2);
        assert_eq!(mix_at_snr(&clean, &noise, f64::INFINITY).unwrap().audio, clean);
        let silent = AudioBuffer::new(vec![0.0; 800], 8000);
        assert!(mix_at_snr(&silent, &noise, 10.0).is_err());
        let other = gen_wgn::<f64>(800, 16000, 2);
        assert!(mix_at_snr(&clean, &other, 10.0).is_err());
        let short = gen_wgn::<f64>(10, 8000, 2);
        assert!(mix_at_snr(&clean, &short, 10.0).is_err());
    }
}
