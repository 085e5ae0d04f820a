use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use cisid_core::audio::{gen_ssn, load_wav, resample, save_wav};
use cisid_core::embed::{
    bw_stats, enroll_plda, extract_ivector, identify_plda, load_plda_enrollments, save_plda_enrollments, train_plda, train_tv,
};
use cisid_core::gmm::{identify_gmm, load_speaker_models, map_adapt, save_speaker_models};
use cisid_core::vad::trim_silence;
use cisid_core::{encode, Audio, Features, Gmm, Plda, Tv};
use cisid_harness::backend::{center_normalize, mean_vector, pool_frames, train_ubm};
use cisid_harness::config::{BackendKind, ExperimentConfig};
use cisid_harness::features::{Corpus, FrontEnd};
use cisid_harness::split::derive_seed;
use cisid_harness::{
    evaluate, load_config, load_manifest, plot_electrodogram, render_report, synth_corpus, HarnessError, ReportFormat, Result, SynthConfig,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

#[derive(Parser)]
#[command(name = "cisid", version, about = "Speaker identification from cochlear-implant electrodograms and MFCCs")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set backend.gmm.components=128`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// More log output; repeat for more.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Encode a WAV file into an electrodogram.
    Encode {
        input: PathBuf,
        /// Electrodogram CSV (one row per frame).
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Grayscale image (PGM), electrodes by frames.
        #[arg(long)]
        image: Option<PathBuf>,
    },
    /// Train a universal background model on a manifest.
    TrainUbm {
        #[command(flatten)]
        data: DataArgs,
        /// Mixture count; defaults to the active back end's setting.
        #[arg(long)]
        components: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a total-variability matrix.
    TrainTv {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        ubm: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a PLDA model on i-vectors of a labelled manifest.
    TrainPlda {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        ubm: PathBuf,
        #[arg(long)]
        tv: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Enroll every speaker of a manifest: MAP-adapted GMMs, or PLDA
    /// enrollments when `--tv` is given.
    Enroll {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        ubm: PathBuf,
        #[arg(long, requires = "plda")]
        tv: Option<PathBuf>,
        /// PLDA model; its centering file is read alongside it.
        #[arg(long, requires = "tv")]
        plda: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank enrolled speakers for one utterance.
    Identify {
        input: PathBuf,
        /// Enrollment file from `enroll`.
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        ubm: PathBuf,
        #[arg(long, requires = "plda")]
        tv: Option<PathBuf>,
        #[arg(long, requires = "tv")]
        plda: Option<PathBuf>,
        /// Number of ranked speakers to print.
        #[arg(long, default_value_t = 5)]
        top: usize,
    },
    /// Run the configured experiment or sweep and write reports.
    Evaluate {
        #[arg(long, default_value = "reports")]
        out_dir: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Both)]
        format: Format,
    },
    /// Estimate a speech-shaped noise profile from a corpus.
    MakeSsn {
        #[command(flatten)]
        data: DataArgs,
        /// Spectral envelope (JSON).
        #[arg(long)]
        out: PathBuf,
        /// Also write this many seconds of noise as a WAV file.
        #[arg(long, requires = "seconds")]
        wav: Option<PathBuf>,
        #[arg(long)]
        seconds: Option<f64>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Generate the synthetic corpus.
    SynthCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = SynthConfig::default().speakers)]
        speakers: usize,
        #[arg(long, default_value_t = SynthConfig::default().utterances)]
        utterances: usize,
        #[arg(long, default_value_t = SynthConfig::default().seconds)]
        seconds: f64,
        #[arg(long, default_value_t = SynthConfig::default().rate)]
        rate: u32,
        #[arg(long, default_value_t = SynthConfig::default().seed)]
        seed: u64,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Corpus manifest; defaults to `experiment.manifest`.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Markdown,
    Both,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(cli.common.config.as_deref(), &cli.common.overrides)?;
    match cli.command {
        Command::Encode { input, csv, image } => cmd_encode(&cfg, &input, csv.as_deref(), image.as_deref()),
        Command::TrainUbm { data, components, out } => {
            let speakers = speaker_features(&cfg, &data)?;
            let utts: Vec<&Features> = speakers.values().flatten().map(|f| f.as_ref()).collect();
            let (k, iters) = match cfg.backend.kind {
                BackendKind::GmmUbm => (cfg.backend.gmm.components, cfg.backend.gmm.em_iters),
                BackendKind::IvectorPlda => (cfg.backend.ivector.components, cfg.backend.ivector.ubm_iters),
            };
            let ubm =
                train_ubm(&utts, components.unwrap_or(k), &cfg.backend.gmm, iters, derive_seed(cfg.experiment.master_seed, "ubm", 0))?;
            ubm.save(&out)?;
            println!("wrote {}-component UBM to {}", ubm.num_components(), out.display());
            Ok(())
        }
        Command::TrainTv { data, ubm, out } => {
            let ubm = Gmm::load(&ubm)?;
            let speakers = speaker_features(&cfg, &data)?;
            let utts: Vec<&Features> = speakers.values().flatten().map(|f| f.as_ref()).collect();
            let stats = utts.par_iter().map(|u| bw_stats(&ubm, u)).collect::<cisid_core::Result<Vec<_>>>()?;
            let iv = &cfg.backend.ivector;
            let tr = train_tv(&ubm, &stats, iv.rank, iv.tv_iters, derive_seed(cfg.experiment.master_seed, "tv", 0))?;
            tr.model.save(&out)?;
            println!("wrote rank-{} total-variability model to {}", tr.model.rank(), out.display());
            Ok(())
        }
        Command::TrainPlda { data, ubm, tv, out } => {
            let (ubm, tv) = (Gmm::load(&ubm)?, Tv::load(&tv)?);
            let speakers = speaker_features(&cfg, &data)?;
            let mut raw = Vec::new();
            let mut labels = Vec::new();
            for (label, utts) in &speakers {
                for u in utts {
                    raw.push(extract_ivector(&tv, &bw_stats(&ubm, u)?)?);
                    labels.push(label.as_str());
                }
            }
            let center = mean_vector(&raw);
            let vectors = raw.iter().map(|w| center_normalize(w, &center)).collect::<Result<Vec<_>>>()?;
            let cpath = center_path(&out);
            std::fs::write(&cpath, serde_json::to_string(&center).expect("vector serializes")).map_err(|e| HarnessError::io(&cpath, e))?;
            let iv = &cfg.backend.ivector;
            let q = iv.plda_dim.min(tv.rank()).min(speakers.len().saturating_sub(1)).max(1);
            let tr = train_plda(&vectors, &labels, q, iv.plda_iters, derive_seed(cfg.experiment.master_seed, "plda", 0))?;
            tr.model.save(&out)?;
            println!("wrote PLDA model (speaker subspace {q}) to {}", out.display());
            Ok(())
        }
        Command::Enroll { data, ubm, tv, plda, out } => {
            let ubm = Gmm::load(&ubm)?;
            let speakers = speaker_features(&cfg, &data)?;
            match (tv, plda) {
                (Some(tv), Some(plda)) => {
                    let tv = Tv::load(&tv)?;
                    let center = load_center(&plda)?;
                    let enrolled = speakers
                        .iter()
                        .map(|(label, utts)| {
                            let v = utts.iter().map(|u| ivector(&ubm, &tv, &center, u)).collect::<Result<Vec<_>>>()?;
                            Ok(enroll_plda(label, &v)?)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    save_plda_enrollments(&enrolled, &out)?;
                }
                _ => {
                    let models = speakers
                        .iter()
                        .map(|(label, utts)| {
                            let refs: Vec<&Features> = utts.iter().map(|u| u.as_ref()).collect();
                            map_adapt(&ubm, &pool_frames(&refs, 0, 0), cfg.backend.gmm.relevance, label)
                        })
                        .collect::<cisid_core::Result<Vec<_>>>()?;
                    save_speaker_models(&models, &out)?;
                }
            }
            println!("enrolled {} speakers into {}", speakers.len(), out.display());
            Ok(())
        }
        Command::Identify { input, models, ubm, tv, plda, top } => {
            let audio: Audio = load_wav(&input)?;
            let feats = FrontEnd::new(&cfg.frontend)?
                .extract(&trim_silence(&audio, &cfg.vad))?
                .ok_or_else(|| HarnessError::Data(format!("{}: no speech found", input.display())))?;
            let ubm = Gmm::load(&ubm)?;
            let (labels, scores) = match (tv, plda) {
                (Some(tv), Some(plda)) => {
                    let (tv, model, center) = (Tv::load(&tv)?, Plda::load(&plda)?, load_center(&plda)?);
                    let enrolled = load_plda_enrollments(&models)?;
                    let id = identify_plda(&model, &enrolled, &ivector(&ubm, &tv, &center, &feats)?)?;
                    (enrolled.into_iter().map(|e| e.label).collect::<Vec<_>>(), id.scores)
                }
                _ => {
                    let models = load_speaker_models(&models)?;
                    if let Some(m) = models.iter().find(|m| m.ubm_fingerprint != ubm.fingerprint()) {
                        log::warn!("speaker model `{}` was adapted from a different UBM", m.label);
                    }
                    let id = identify_gmm(&models, feats.frames())?;
                    (models.into_iter().map(|m| m.label).collect(), id.scores)
                }
            };
            let mut ranked: Vec<usize> = (0..labels.len()).collect();
            ranked.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
            println!("rank,speaker,score");
            for (r, &i) in ranked.iter().take(top).enumerate() {
                println!("{},{},{}", r + 1, labels[i], scores[i]);
            }
            Ok(())
        }
        Command::Evaluate { out_dir, format } => {
            let reports = evaluate(&cfg)?;
            std::fs::create_dir_all(&out_dir).map_err(|e| HarnessError::io(&out_dir, e))?;
            let formats: &[ReportFormat] = match format {
                Format::Csv => &[ReportFormat::Csv],
                Format::Markdown => &[ReportFormat::Markdown],
                Format::Both => &[ReportFormat::Csv, ReportFormat::Markdown],
            };
            for r in &reports {
                for &f in formats {
                    let path = out_dir.join(format!("{}.{}", r.name, f.extension()));
                    std::fs::write(&path, render_report(r, f)).map_err(|e| HarnessError::io(&path, e))?;
                }
                let summary: Vec<String> = r.conditions.iter().map(|c| format!("{} {:.2} ± {:.2}", c.name, c.mean, c.std)).collect();
                println!("{}: {}", r.name, summary.join(", "));
            }
            Ok(())
        }
        Command::MakeSsn { data, out, wav, seconds, seed } => {
            let manifest = load_manifest(manifest_path(&cfg, &data))?;
            let n = manifest.entries.len();
            let corpus = Corpus::new(manifest, &cfg.vad, &cfg.frontend)?;
            let env = corpus.ltass(0..n, cfg.noise.ssn_fft_size)?;
            let json = serde_json::to_string_pretty(&env).map_err(|e| HarnessError::Data(e.to_string()))?;
            std::fs::write(&out, json).map_err(|e| HarnessError::io(&out, e))?;
            if let (Some(wav), Some(secs)) = (wav, seconds) {
                let len = (secs * f64::from(env.rate)).round() as usize;
                let noise = gen_ssn(&env, len, env.rate, seed)?;
                // unit-variance noise scaled to leave headroom in 16-bit PCM
                save_wav(&noise.scaled(0.1), &wav)?;
            }
            println!("wrote speech-shaped noise profile to {}", out.display());
            Ok(())
        }
        Command::SynthCorpus { out, speakers, utterances, seconds, rate, seed } => {
            let m = synth_corpus(&SynthConfig { speakers, utterances, seconds, rate, seed }, &out)?;
            println!("wrote {} utterances of {} speakers to {}", m.entries.len(), speakers, out.display());
            Ok(())
        }
    }
}

fn cmd_encode(cfg: &ExperimentConfig, input: &Path, csv: Option<&Path>, image: Option<&Path>) -> Result<()> {
    if csv.is_none() && image.is_none() {
        return Err(HarnessError::Usage("encode needs --csv and/or --image".into()));
    }
    let ace = cfg.frontend.ace_config()?;
    let audio: Audio = load_wav(input)?;
    let audio = if audio.rate == ace.analysis_rate { audio } else { resample(&audio, ace.analysis_rate)? };
    let eg = encode(&audio, &ace)?;
    if let Some(p) = csv {
        eg.write_csv(p)?;
    }
    if let Some(p) = image {
        plot_electrodogram(&eg, p)?;
    }
    println!("encoded {} frames", eg.num_frames());
    Ok(())
}

fn manifest_path(cfg: &ExperimentConfig, data: &DataArgs) -> PathBuf {
    data.manifest.clone().unwrap_or_else(|| cfg.experiment.manifest.clone())
}

/// Clean features of every manifest utterance, grouped by speaker.
fn speaker_features(cfg: &ExperimentConfig, data: &DataArgs) -> Result<BTreeMap<String, Vec<Arc<Features>>>> {
    let manifest = load_manifest(manifest_path(cfg, data))?;
    let corpus = Corpus::new(manifest, &cfg.vad, &cfg.frontend)?;
    let feats = (0..corpus.manifest.entries.len()).into_par_iter().map(|i| corpus.clean_features(i)).collect::<Result<Vec<_>>>()?;
    let mut out: BTreeMap<String, Vec<Arc<Features>>> = BTreeMap::new();
    for (e, f) in corpus.manifest.entries.iter().zip(feats) {
        match f {
            Some(f) => out.entry(e.speaker.clone()).or_default().push(f),
            None => log::warn!("utterance `{}` is empty after VAD; skipped", e.id),
        }
    }
    Ok(out)
}

fn ivector(ubm: &Gmm, tv: &Tv, center: &[f64], f: &Features) -> Result<Vec<f64>> {
    center_normalize(&extract_ivector(tv, &bw_stats(ubm, f)?)?, center)
}

/// The i-vector centering mean is stored next to the PLDA model.
fn center_path(plda: &Path) -> PathBuf {
    let mut name = plda.as_os_str().to_owned();
    name.push(".center.json");
    PathBuf::from(name)
}

fn load_center(plda: &Path) -> Result<Vec<f64>> {
    let p = center_path(plda);
    let text = std::fs::read_to_string(&p).map_err(|e| HarnessError::io(&p, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Data(format!("{}: {e}", p.display())))
}
