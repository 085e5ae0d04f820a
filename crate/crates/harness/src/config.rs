//! Experiment configuration: one TOML file whose sections mirror
//! [`ExperimentConfig`]; any key can be overridden with `a.b=value`.

use std::fmt;
use std::path::{Path, PathBuf};

use cisid_core::ace::{load_map_table, AceConfig};
use cisid_core::frontend::MfccConfig;
use cisid_core::gmm::EmOptions;
use cisid_core::scalar::fnv1a;
use cisid_core::vad::VadConfig;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub vad: VadConfig,
    pub frontend: FrontendConfig,
    pub backend: BackendConfig,
    pub noise: NoiseConfig,
    pub sweep: SweepConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub manifest: PathBuf,
    pub train_fraction: f64,
    pub num_speakers: SpeakerCount,
    pub repetitions: usize,
    pub master_seed: u64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            manifest: PathBuf::from("manifest.csv"),
            train_fraction: 0.75,
            num_speakers: SpeakerCount::All,
            repetitions: 10,
            master_seed: 1,
        }
    }
}

/// Size of the speaker subset drawn per repetition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpeakerCount {
    All,
    Count(usize),
}

impl SpeakerCount {
    pub fn resolve(self, available: usize) -> usize {
        match self {
            SpeakerCount::All => available,
            SpeakerCount::Count(n) => n,
        }
    }
}

impl fmt::Display for SpeakerCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpeakerCount::All => f.write_str("all"),
            SpeakerCount::Count(n) => write!(f, "{n}"),
        }
    }
}

impl Serialize for SpeakerCount {
    fn serialize<Se: Serializer>(&self, s: Se) -> std::result::Result<Se::Ok, Se::Error> {
        match self {
            SpeakerCount::All => s.serialize_str("all"),
            SpeakerCount::Count(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for SpeakerCount {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(u64),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(n) => Ok(SpeakerCount::Count(n as usize)),
            Raw::S(s) if s.eq_ignore_ascii_case("all") => Ok(SpeakerCount::All),
            Raw::S(s) => s
                .parse()
                .map(SpeakerCount::Count)
                .map_err(|_| serde::de::Error::custom(format!("num_speakers must be a count or \"all\", got `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrontendKind {
    Ci,
    Mfcc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontendConfig {
    pub kind: FrontendKind,
    /// Audio is resampled to this rate before either front end.
    pub analysis_rate: u32,
    /// Keep every n-th electrodogram frame (CI only).
    pub frame_decimation: usize,
    pub cmvn: bool,
    pub deltas: bool,
    pub ace: AceSection,
    pub mfcc: MfccConfig,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            kind: FrontendKind::Ci,
            analysis_rate: 16_000,
            frame_decimation: 10,
            cmvn: false,
            deltas: true,
            ace: AceSection::default(),
            mfcc: MfccConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AceSection {
    pub maxima: usize,
    pub pre_emphasis: f64,
    /// Optional allocation/MAP table overriding the standard 22-channel one.
    pub map_file: Option<PathBuf>,
}

impl Default for AceSection {
    fn default() -> Self {
        let d = AceConfig::default();
        Self { maxima: d.maxima, pre_emphasis: d.pre_emphasis, map_file: None }
    }
}

impl FrontendConfig {
    pub fn ace_config(&self) -> Result<AceConfig> {
        let mut cfg = AceConfig {
            analysis_rate: self.analysis_rate,
            maxima: self.ace.maxima,
            pre_emphasis: self.ace.pre_emphasis,
            ..AceConfig::default()
        };
        if let Some(path) = &self.ace.map_file {
            let (alloc, map) = load_map_table(path)?;
            cfg.allocation = alloc;
            cfg.map = map;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    GmmUbm,
    IvectorPlda,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub gmm: GmmSection,
    pub ivector: IvectorSection,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self { kind: BackendKind::GmmUbm, gmm: GmmSection::default(), ivector: IvectorSection::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmmSection {
    pub components: usize,
    pub em_iters: usize,
    pub rel_tol: f64,
    /// MAP relevance factor.
    pub relevance: f64,
    /// Variance floor as a fraction of the global per-dimension variance.
    pub floor_factor: f64,
    /// UBM training uses at most this many frames (0 = all).
    pub max_ubm_frames: usize,
    /// k-means initialisation uses at most this many frames (0 = all).
    pub kmeans_frames: usize,
}

impl Default for GmmSection {
    fn default() -> Self {
        Self {
            components: 64,
            em_iters: 20,
            rel_tol: 1e-5,
            relevance: 16.0,
            floor_factor: 0.01,
            max_ubm_frames: 60_000,
            kmeans_frames: 20_000,
        }
    }
}

impl GmmSection {
    pub fn em_options(&self) -> EmOptions {
        EmOptions { max_iters: self.em_iters, rel_tol: self.rel_tol }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IvectorSection {
    /// UBM size for this branch, independent of `backend.gmm.components`.
    pub components: usize,
    pub ubm_iters: usize,
    pub rank: usize,
    pub tv_iters: usize,
    pub plda_dim: usize,
    pub plda_iters: usize,
}

impl Default for IvectorSection {
    fn default() -> Self {
        Self { components: 64, ubm_iters: 20, rank: 100, tv_iters: 10, plda_dim: 50, plda_iters: 10 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    None,
    Wgn,
    Ssn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub kind: NoiseKind,
    pub snr_db: f64,
    /// FFT size of the long-term spectrum estimate used to shape SSN.
    pub ssn_fft_size: usize,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { kind: NoiseKind::None, snr_db: 10.0, ssn_fft_size: 512 }
    }
}

/// One test condition of a noise sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Condition {
    pub kind: NoiseKind,
    pub snr_db: f64,
}

impl Condition {
    pub const CLEAN: Condition = Condition { kind: NoiseKind::None, snr_db: f64::INFINITY };

    pub fn name(&self) -> String {
        match self.kind {
            NoiseKind::None => "clean".into(),
            NoiseKind::Wgn => format!("wgn:{}", self.snr_db),
            NoiseKind::Ssn => format!("ssn:{}", self.snr_db),
        }
    }

    /// Parses `clean`, `wgn:<snr>` or `ssn:<snr>`.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || HarnessError::Usage(format!("bad condition `{s}`; expected clean, wgn:<dB> or ssn:<dB>"));
        if s.eq_ignore_ascii_case("clean") {
            return Ok(Self::CLEAN);
        }
        let (kind, snr) = s.split_once(':').ok_or_else(bad)?;
        let kind = match kind.to_ascii_lowercase().as_str() {
            "wgn" => NoiseKind::Wgn,
            "ssn" => NoiseKind::Ssn,
            _ => return Err(bad()),
        };
        let snr_db: f64 = snr.trim().parse().map_err(|_| bad())?;
        if !snr_db.is_finite() {
            return Err(bad());
        }
        Ok(Condition { kind, snr_db })
    }
}

impl NoiseConfig {
    pub fn condition(&self) -> Condition {
        match self.kind {
            NoiseKind::None => Condition::CLEAN,
            kind => Condition { kind, snr_db: self.snr_db },
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Nested speaker-count sweep; one report per count.
    pub speakers: Vec<usize>,
    /// Mixture-count sweep for the active back end; one report per count.
    pub components: Vec<usize>,
    /// Test conditions evaluated on the same trained models; one column
    /// per condition. Empty means the `noise` section alone.
    pub conditions: Vec<String>,
}

impl ExperimentConfig {
    pub fn conditions(&self) -> Result<Vec<Condition>> {
        if self.sweep.conditions.is_empty() {
            Ok(vec![self.noise.condition()])
        } else {
            self.sweep.conditions.iter().map(|c| Condition::parse(c)).collect()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        let usage = |m: String| Err(HarnessError::Usage(m));
        if !(e.train_fraction > 0.0 && e.train_fraction < 1.0) {
            return usage(format!("train_fraction {} must lie in (0, 1)", e.train_fraction));
        }
        if e.repetitions == 0 {
            return usage("repetitions must be at least 1".into());
        }
        if e.num_speakers == SpeakerCount::Count(0) || self.sweep.speakers.contains(&0) {
            return usage("speaker counts must be positive".into());
        }
        if self.sweep.components.contains(&0) || self.backend.gmm.components == 0 || self.backend.ivector.components == 0 {
            return usage("mixture counts must be positive".into());
        }
        if self.frontend.frame_decimation == 0 {
            return usage("frame_decimation must be at least 1".into());
        }
        let iv = &self.backend.ivector;
        if iv.rank == 0 || iv.plda_dim == 0 || iv.tv_iters == 0 || iv.plda_iters == 0 {
            return usage("i-vector rank, PLDA dimension and iteration counts must be positive".into());
        }
        if !(self.backend.gmm.relevance > 0.0) {
            return usage("relevance must be positive".into());
        }
        if !self.noise.snr_db.is_finite() {
            return usage("noise snr_db must be finite".into());
        }
        if !self.noise.ssn_fft_size.is_power_of_two() || self.noise.ssn_fft_size < 16 {
            return usage("ssn_fft_size must be a power of two of at least 16".into());
        }
        self.conditions()?;
        self.vad.validate()?;
        self.frontend.mfcc.validate()?;
        self.frontend.ace_config()?;
        Ok(())
    }

    /// Stable hash of the canonical TOML rendering.
    pub fn fingerprint(&self) -> u64 {
        fnv1a(self.to_toml().as_bytes())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Flattened `section.key = value` pairs in declaration order.
    pub fn echo(&self) -> Vec<(String, String)> {
        let value = toml::Value::try_from(self).expect("config serializes");
        let mut out = Vec::new();
        flatten("", &value, &mut out);
        out
    }
}

fn flatten(prefix: &str, v: &toml::Value, out: &mut Vec<(String, String)>) {
    match v {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        toml::Value::String(s) => out.push((prefix.to_string(), s.clone())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

/// Parses `value` as a TOML literal, falling back to a bare string.
fn parse_override_value(value: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()))
}

/// Applies `section.key=value` overrides to a parsed table.
pub fn apply_overrides(table: &mut toml::Table, overrides: &[String]) -> Result<()> {
    for o in overrides {
        let (key, value) = o.split_once('=').ok_or_else(|| HarnessError::Usage(format!("override `{o}` is not key=value")))?;
        let parts: Vec<&str> = key.trim().split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(HarnessError::Usage(format!("override `{o}` has an empty key segment")));
        }
        let mut cur = &mut *table;
        for p in &parts[..parts.len() - 1] {
            let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
            cur = entry.as_table_mut().ok_or_else(|| HarnessError::Usage(format!("override `{o}`: `{p}` is not a section")))?;
        }
        cur.insert(parts[parts.len() - 1].to_string(), parse_override_value(value.trim()));
    }
    Ok(())
}

/// Builds a configuration from optional TOML text plus overrides. Relative
/// paths resolve against `base_dir`.
pub fn config_from_str(text: &str, overrides: &[String], base_dir: &Path, origin: &Path) -> Result<ExperimentConfig> {
    let bad = |reason: String| HarnessError::Config { path: origin.to_path_buf(), reason };
    let mut table: toml::Table = toml::from_str(text).map_err(|e| bad(e.message().to_string()))?;
    apply_overrides(&mut table, overrides)?;
    let mut cfg: ExperimentConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| bad(e.message().to_string()))?;
    if cfg.experiment.manifest.is_relative() {
        cfg.experiment.manifest = base_dir.join(&cfg.experiment.manifest);
    }
    if let Some(p) = cfg.frontend.ace.map_file.as_mut().filter(|p| p.is_relative()) {
        *p = base_dir.join(&*p);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Loads `path` (if given) and applies overrides; without a file the
/// defaults are used and relative paths resolve against the working
/// directory.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| HarnessError::io(p, e))?;
            config_from_str(&text, overrides, p.parent().unwrap_or(Path::new("")), p)
        }
        None => config_from_str("", overrides, Path::new(""), Path::new("<defaults>")),
    }
}
