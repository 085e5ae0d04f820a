//! Per-utterance signal chain: load, VAD, optional test noise, resampling
//! and the configured front end, with clean results cached per utterance.

use std::sync::{Arc, OnceLock};

use cisid_core::ace::{encode, AceConfig};
use cisid_core::audio::{estimate_ltass, gen_ssn, gen_wgn, load_wav, mix_at_snr, resample, SpectralEnvelope};
use cisid_core::frontend::{append_deltas, cmvn, electrodogram_features, mfcc, DELTA_WINDOW};
use cisid_core::vad::{trim_silence, VadConfig};
use cisid_core::{Audio, Features};

use crate::config::{Condition, FrontendConfig, FrontendKind, NoiseKind};
use crate::error::{HarnessError, Result};
use crate::manifest::CorpusManifest;

/// Front end applied to already VAD-trimmed audio at any rate. Returns
/// `None` when the audio is too short or too quiet to yield features.
#[derive(Clone, Debug)]
pub struct FrontEnd {
    cfg: FrontendConfig,
    ace: AceConfig,
}

impl FrontEnd {
    pub fn new(cfg: &FrontendConfig) -> Result<Self> {
        Ok(Self { ace: cfg.ace_config()?, cfg: cfg.clone() })
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.cfg
    }

    pub fn ace(&self) -> &AceConfig {
        &self.ace
    }

    pub fn extract(&self, audio: &Audio) -> Result<Option<Features>> {
        if audio.is_empty() {
            return Ok(None);
        }
        let resampled;
        let a = if audio.rate == self.cfg.analysis_rate {
            audio
        } else {
            resampled = resample(audio, self.cfg.analysis_rate)?;
            &resampled
        };
        let seq = match self.cfg.kind {
            FrontendKind::Ci => {
                if a.len() < self.ace.frame_len {
                    return Ok(None);
                }
                let eg = encode(a, &self.ace)?.decimate(self.cfg.frame_decimation);
                if !eg.levels().iter().any(|&v| v > 0) {
                    return Ok(None);
                }
                electrodogram_features(&eg, true, self.cfg.deltas)?
            }
            FrontendKind::Mfcc => {
                if a.len() < self.cfg.mfcc.frame_len {
                    return Ok(None);
                }
                let s = mfcc(a, &self.cfg.mfcc)?;
                if self.cfg.deltas {
                    append_deltas(&s, DELTA_WINDOW)?
                } else {
                    s
                }
            }
        };
        if self.cfg.cmvn {
            if seq.len() < 2 {
                return Ok(None);
            }
            return Ok(Some(cmvn(&seq)?));
        }
        Ok(Some(seq))
    }
}

/// A manifest plus the VAD and front end, caching trimmed audio and clean
/// features per entry.
pub struct Corpus {
    pub manifest: CorpusManifest,
    vad: VadConfig,
    frontend: FrontEnd,
    trimmed: Vec<OnceLock<Arc<Audio>>>,
    clean: Vec<OnceLock<Option<Arc<Features>>>>,
}

impl Corpus {
    pub fn new(manifest: CorpusManifest, vad: &VadConfig, frontend: &FrontendConfig) -> Result<Self> {
        vad.validate()?;
        let n = manifest.entries.len();
        Ok(Self {
            manifest,
            vad: vad.clone(),
            frontend: FrontEnd::new(frontend)?,
            trimmed: (0..n).map(|_| OnceLock::new()).collect(),
            clean: (0..n).map(|_| OnceLock::new()).collect(),
        })
    }

    pub fn frontend(&self) -> &FrontEnd {
        &self.frontend
    }

    /// VAD-trimmed audio of entry `i` at its native rate.
    pub fn trimmed(&self, i: usize) -> Result<Arc<Audio>> {
        if let Some(a) = self.trimmed[i].get() {
            return Ok(a.clone());
        }
        let e = &self.manifest.entries[i];
        let audio: Audio = load_wav(&e.path)?;
        if let Some(r) = self.manifest.rate.filter(|&r| r != audio.rate) {
            return Err(HarnessError::Data(format!("utterance `{}` is {} Hz but the manifest declares {r} Hz", e.id, audio.rate)));
        }
        let t = trim_silence(&audio, &self.vad);
        if t.is_empty() {
            log::warn!("utterance `{}` is empty after VAD", e.id);
        }
        Ok(self.trimmed[i].get_or_init(|| Arc::new(t)).clone())
    }

    /// Clean features of entry `i`, or `None` if VAD left nothing usable.
    pub fn clean_features(&self, i: usize) -> Result<Option<Arc<Features>>> {
        if let Some(f) = self.clean[i].get() {
            return Ok(f.clone());
        }
        let f = self.frontend.extract(&*self.trimmed(i)?)?.map(Arc::new);
        Ok(self.clean[i].get_or_init(|| f).clone())
    }

    /// Features of entry `i` under a test condition. Noise is added after
    /// VAD at the native rate; `seed` drives the noise realisation.
    pub fn test_features(
        &self,
        i: usize,
        cond: &Condition,
        ssn: Option<&SpectralEnvelope<f64>>,
        seed: u64,
    ) -> Result<Option<Arc<Features>>> {
        if cond.kind == NoiseKind::None {
            return self.clean_features(i);
        }
        let clean = self.trimmed(i)?;
        if clean.is_empty() || clean.power() <= 0.0 {
            return Ok(None);
        }
        let noise = match cond.kind {
            NoiseKind::Wgn => gen_wgn(clean.len(), clean.rate, seed),
            NoiseKind::Ssn => {
                let env = ssn.ok_or_else(|| HarnessError::Data("speech-shaped noise requested without a spectral envelope".into()))?;
                gen_ssn(env, clean.len(), clean.rate, seed)?
            }
            NoiseKind::None => unreachable!(),
        };
        let mix = mix_at_snr(&clean, &noise, cond.snr_db)?;
        if mix.clipped > 0 {
            log::debug!("utterance `{}`: {} samples clipped at {} dB", self.manifest.entries[i].id, mix.clipped, cond.snr_db);
        }
        Ok(self.frontend.extract(&mix.audio)?.map(Arc::new))
    }

    /// Long-term average spectrum of the trimmed audio of `indices`.
    pub fn ltass(&self, indices: impl IntoIterator<Item = usize>, fft_size: usize) -> Result<SpectralEnvelope<f64>> {
        let audio = indices.into_iter().map(|i| self.trimmed(i).map(|a| (*a).clone())).collect::<Result<Vec<Audio>>>()?;
        Ok(estimate_ltass(&audio, fft_size)?)
    }
}
