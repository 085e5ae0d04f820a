//! Desk-scale synthetic corpus: each speaker is a source-filter voice with
//! its own pitch, vocal-tract scale, formant offsets, glottal tilt,
//! breathiness and fricative colour. Utterances are random syllable strings
//! from a shared vowel inventory, so the content is text independent.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use cisid_core::audio::{save_wav, AudioBuffer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::manifest::{CorpusManifest, ManifestEntry};
use crate::split::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub speakers: usize,
    pub utterances: usize,
    pub seconds: f64,
    pub rate: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { speakers: 50, utterances: 20, seconds: 3.0, rate: 8000, seed: 2024 }
    }
}

/// Formant targets (Hz) of a reference adult voice.
const VOWELS: [[f64; 4]; 8] = [
    [270.0, 2290.0, 3010.0, 3500.0],
    [390.0, 1990.0, 2550.0, 3400.0],
    [530.0, 1840.0, 2480.0, 3400.0],
    [660.0, 1720.0, 2410.0, 3400.0],
    [730.0, 1090.0, 2440.0, 3400.0],
    [570.0, 840.0, 2410.0, 3300.0],
    [440.0, 1020.0, 2240.0, 3300.0],
    [300.0, 870.0, 2240.0, 3300.0],
];

const BANDWIDTHS: [f64; 4] = [60.0, 90.0, 130.0, 180.0];

/// Resonator coefficients are refreshed once per block.
const BLOCK: usize = 40;

#[derive(Clone, Debug, PartialEq)]
pub struct Voice {
    pub f0: f64,
    pub tract_scale: f64,
    pub formant_offset: [f64; 4],
    pub bandwidth_scale: f64,
    /// One-pole glottal low-pass coefficient; higher is a steeper tilt.
    pub tilt: f64,
    pub breath: f64,
    pub fricative_hz: f64,
    pub fricative_level: f64,
}

impl Voice {
    pub fn random(rng: &mut impl Rng, rate: u32) -> Self {
        let nyq = f64::from(rate) / 2.0;
        Self {
            f0: (rng.random_range(85f64.ln()..260f64.ln())).exp(),
            tract_scale: rng.random_range(0.85..1.2),
            formant_offset: std::array::from_fn(|_| rng.random_range(-0.07..0.07)),
            bandwidth_scale: rng.random_range(0.8..1.4),
            tilt: rng.random_range(0.55..0.92),
            breath: rng.random_range(0.005..0.06),
            fricative_hz: rng.random_range(0.55 * nyq..0.9 * nyq),
            fricative_level: rng.random_range(0.05..0.25),
        }
    }

    /// The speaker's formants for vowel `v`; formants too close to Nyquist
    /// are dropped.
    fn formants(&self, v: usize, rate: u32) -> Vec<(f64, f64)> {
        let limit = 0.45 * f64::from(rate);
        VOWELS[v]
            .iter()
            .zip(&self.formant_offset)
            .zip(BANDWIDTHS)
            .map(|((&f, &o), b)| (f * self.tract_scale * (1.0 + o), b * self.bandwidth_scale))
            .map(|(f, b)| if f < limit { (f, b) } else { (limit, f64::INFINITY) })
            .collect()
    }
}

/// Second-order resonator with unit gain at DC.
#[derive(Clone, Copy, Default)]
struct Resonator {
    a: f64,
    b: f64,
    c: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn tune(&mut self, freq: f64, bw: f64, rate: f64) {
        if !bw.is_finite() {
            (self.a, self.b, self.c) = (1.0, 0.0, 0.0);
            return;
        }
        let r = (-PI * bw / rate).exp();
        self.c = -r * r;
        self.b = 2.0 * r * (2.0 * PI * freq / rate).cos();
        self.a = 1.0 - self.b - self.c;
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.a * x + self.b * self.y1 + self.c * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

fn ramp(i: usize, n: usize, edge: usize) -> f64 {
    let e = edge.min(n / 2).max(1);
    let d = i.min(n - 1 - i);
    if d >= e {
        1.0
    } else {
        0.5 - 0.5 * (PI * d as f64 / e as f64).cos()
    }
}

/// One utterance of `voice`, `len` samples long, peak-normalized to a random
/// level with a faint noise floor in the pauses.
pub fn synth_utterance(voice: &Voice, len: usize, rate: u32, seed: u64) -> AudioBuffer<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = f64::from(rate);
    let ms = |x: f64| (x * fs / 1000.0) as usize;
    let mut out = vec![0.0; len];

    let lead = ms(rng.random_range(150.0..400.0));
    let tail = ms(rng.random_range(150.0..400.0));
    let end = len.saturating_sub(tail);
    let f0_utt = voice.f0 * rng.random_range(0.92..1.08);

    let mut tract = [Resonator::default(); 4];
    let mut fric = Resonator::default();
    let mut glottal = [0.0f64; 2];
    let mut phase = 0.0f64;
    let mut prev_vowel = rng.random_range(0..VOWELS.len());
    let mut pos = lead;

    while pos + ms(100.0) < end {
        if rng.random_bool(0.4) {
            let n = ms(rng.random_range(50.0..120.0)).min(end - pos);
            fric.tune(voice.fricative_hz * rng.random_range(0.95..1.05), 500.0, fs);
            let mut prev = 0.0;
            for i in 0..n {
                let z: f64 = StandardNormal.sample(&mut rng);
                let hp = z - prev;
                prev = z;
                out[pos + i] += voice.fricative_level * ramp(i, n, ms(10.0)) * fric.step(hp);
            }
            pos += n;
        }
        let n = ms(rng.random_range(120.0..260.0)).min(end.saturating_sub(pos));
        if n < ms(40.0) {
            break;
        }
        let vowel = rng.random_range(0..VOWELS.len());
        let (from, to) = (voice.formants(prev_vowel, rate), voice.formants(vowel, rate));
        let accent = rng.random_range(0.94..1.06);
        let level = rng.random_range(0.6..1.0);
        for i in 0..n {
            if i % BLOCK == 0 {
                let t = (i as f64 / (0.4 * n as f64)).min(1.0);
                for (k, r) in tract.iter_mut().enumerate() {
                    let f = from[k].0 + t * (to[k].0 - from[k].0);
                    r.tune(f, to[k].1, fs);
                }
            }
            let progress = (pos + i) as f64 / len as f64;
            let f0 = f0_utt * accent * (1.05 - 0.13 * progress);
            phase += f0 / fs;
            let mut src = 0.0;
            if phase >= 1.0 {
                phase -= 1.0;
                let jitter: f64 = StandardNormal.sample(&mut rng);
                phase += 0.01 * jitter;
                let shimmer: f64 = StandardNormal.sample(&mut rng);
                src = (1.0 + 0.05 * shimmer).max(0.5);
            }
            for g in glottal.iter_mut() {
                *g = voice.tilt * *g + (1.0 - voice.tilt) * src;
                src = *g;
            }
            let asp: f64 = StandardNormal.sample(&mut rng);
            let mut y = src * 20.0 + voice.breath * asp;
            for r in tract.iter_mut() {
                y = r.step(y);
            }
            out[pos + i] += level * ramp(i, n, ms(15.0)) * y;
        }
        prev_vowel = vowel;
        pos += n;
        if rng.random_bool(0.3) {
            pos += ms(rng.random_range(20.0..80.0));
        }
    }

    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let target = rng.random_range(0.3..0.7);
    let gain = if peak > 0.0 { target / peak } else { 0.0 };
    for v in &mut out {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v = *v * gain + 1e-4 * z;
    }
    AudioBuffer::new(out, rate)
}

pub fn speaker_label(i: usize) -> String {
    format!("spk{i:02}")
}

/// Voices of the corpus, one per speaker, derived from the corpus seed.
pub fn voices(cfg: &SynthConfig) -> Vec<Voice> {
    (0..cfg.speakers).map(|s| Voice::random(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "voice", s as u64)), cfg.rate)).collect()
}

/// Writes the corpus WAVs and `manifest.csv` under `dir` and returns the
/// manifest.
pub fn synth_corpus(cfg: &SynthConfig, dir: &Path) -> Result<CorpusManifest> {
    if cfg.speakers == 0 || cfg.utterances < 2 || !(cfg.seconds > 0.5) || cfg.rate < 4000 {
        return Err(HarnessError::Usage("synth corpus needs ≥1 speaker, ≥2 utterances, >0.5 s and a rate ≥4 kHz".into()));
    }
    let voices = voices(cfg);
    let len = (cfg.seconds * f64::from(cfg.rate)).round() as usize;
    let jobs: Vec<(usize, usize)> = (0..cfg.speakers).flat_map(|s| (0..cfg.utterances).map(move |u| (s, u))).collect();
    for s in 0..cfg.speakers {
        let d = dir.join(speaker_label(s));
        std::fs::create_dir_all(&d).map_err(|e| HarnessError::io(&d, e))?;
    }
    let entries = jobs
        .par_iter()
        .map(|&(s, u)| {
            let seed = derive_seed(cfg.seed, "utterance", (s * cfg.utterances + u) as u64);
            let audio = synth_utterance(&voices[s], len, cfg.rate, seed);
            let rel = PathBuf::from(speaker_label(s)).join(format!("u{u:02}.wav"));
            save_wav(&audio, dir.join(&rel))?;
            Ok(ManifestEntry { id: format!("{}_u{u:02}", speaker_label(s)), path: dir.join(rel), speaker: speaker_label(s), session: None })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = CorpusManifest { name: "synth".into(), rate: Some(cfg.rate), entries };
    manifest.save(&dir.join("manifest.csv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn utterances_are_deterministic_and_bounded() {
        let cfg = SynthConfig::default();
        let v = &voices(&cfg)[3];
        let a = synth_utterance(v, 8000, 8000, 7);
        assert_eq!(a, synth_utterance(v, 8000, 8000, 7));
        assert_ne!(a, synth_utterance(v, 8000, 8000, 8));
        let peak = a.samples.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(peak > 0.25 && peak < 0.75, "{peak}");
    }

    #[test]
    fn voices_differ() {
        let vs = voices(&SynthConfig::default());
        assert_eq!(vs.len(), 50);
        assert!(vs.iter().all(|v| (85.0..260.0).contains(&v.f0)));
        assert_ne!(vs[0], vs[1]);
    }
}
