//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Pass criterion numbers as arguments to run a subset.
//!
//! The experiment criteria run on the default synthetic corpus
//! (50 speakers × 20 utterances of 3 s at 8 kHz), generated into a
//! temporary directory.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use cisid_core::ace::{encode, lgf_map, AceConfig, MapParams};
use cisid_core::audio::{estimate_ltass, gen_ssn, gen_wgn, mean_power, mix_at_snr, AudioBuffer, SpectralEnvelope};
use cisid_core::embed::{bw_stats_frames, extract_ivector, plda_score, train_plda, train_tv, BaumWelchStats, PldaModel, TvModel};
use cisid_core::gmm::{em_train, kmeans_init, log_likelihood, EmOptions, GmmModel};
use cisid_core::linalg::Matrix;
use cisid_harness::config::{config_from_str, ExperimentConfig};
use cisid_harness::features::Corpus;
use cisid_harness::report::{parse_report_csv, EvaluationReport};
use cisid_harness::synth::{synth_utterance, voices};
use cisid_harness::{evaluate_corpus, synth_corpus, CorpusManifest, SynthConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tempfile::TempDir;

const MIN_ACCURACY: f64 = 90.0;
const MAX_RUNTIME: Duration = Duration::from_secs(600);
const SWEEP: [usize; 5] = [4, 12, 24, 36, 50];
const SWEEP_SLACK: f64 = 3.0;
const SWEEP_REPETITIONS: usize = 3;
const NOISE_REPETITIONS: usize = 3;
const MIN_WGN_DROP: f64 = 15.0;
const EM_TOL: f64 = 1e-8;
const OBJECTIVE_TOL: f64 = 1e-6;
const GMM_ORACLE_TOL: f64 = 1e-8;
const IVECTOR_ORACLE_TOL: f64 = 1e-12;
const PLDA_ORACLE_TOL: f64 = 1e-6;
const LGF_MIDPOINT: u8 = 189;
const RANDOM_UTTERANCES: usize = 1000;
const SNR_TOL_DB: f64 = 0.01;
const BAND_TOL_DB: f64 = 3.0;
const SSN_SAMPLES: usize = 1_000_000;
/// Rank used for the i-vector back end on the 12-speaker task; see README.
const IVECTOR_RANK: usize = 20;

type Outcome = Result<String, String>;

struct Env {
    _dir: TempDir,
    root: std::path::PathBuf,
    manifest: CorpusManifest,
}

impl Env {
    fn new() -> Self {
        let dir = TempDir::new().expect("temp dir");
        let root = dir.path().to_path_buf();
        let manifest = synth_corpus(&SynthConfig::default(), &root).expect("synthetic corpus");
        Self { _dir: dir, root, manifest }
    }

    fn manifest_path(&self) -> String {
        self.root.join("manifest.csv").to_string_lossy().into_owned()
    }

    fn config(&self, overrides: &[String]) -> Result<ExperimentConfig, String> {
        config_from_str("", overrides, &self.root, Path::new("acceptance")).map_err(|e| e.to_string())
    }

    fn evaluate(&self, overrides: &[String]) -> Result<Vec<EvaluationReport>, String> {
        let cfg = self.config(overrides)?;
        let corpus = Corpus::new(self.manifest.clone(), &cfg.vad, &cfg.frontend).map_err(|e| e.to_string())?;
        evaluate_corpus(&corpus, &cfg).map_err(|e| e.to_string())
    }
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn cisid(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_cisid")).args(args).output().expect("run cisid")
}

fn criterion_1(env: &Env) -> Outcome {
    let base = ["experiment.num_speakers=12", "experiment.train_fraction=0.75", "experiment.repetitions=10", "frontend.kind=\"ci\""];
    let mut lines = Vec::new();
    let mut ok = true;
    for (kind, extra) in [("gmm-ubm", String::new()), ("ivector-plda", format!("backend.ivector.rank={IVECTOR_RANK}"))] {
        let mut o = strings(&base);
        o.push(format!("backend.kind=\"{kind}\""));
        if !extra.is_empty() {
            o.push(extra);
        }
        let start = Instant::now();
        let r = env.evaluate(&o)?;
        let took = start.elapsed();
        let c = &r[0].conditions[0];
        ok &= c.mean >= MIN_ACCURACY && took <= MAX_RUNTIME;
        lines.push(format!("{kind} {:.2}% ± {:.2} in {:.0} s", c.mean, c.std, took.as_secs_f64()));
    }
    let msg = format!("{} (need ≥ {MIN_ACCURACY}% and ≤ {} s each)", lines.join(", "), MAX_RUNTIME.as_secs());
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_2(env: &Env) -> Outcome {
    let sweep = SWEEP.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(", ");
    let o = vec![format!("sweep.speakers=[{sweep}]"), format!("experiment.repetitions={SWEEP_REPETITIONS}")];
    let reports = env.evaluate(&o)?;
    let means: Vec<f64> = reports.iter().map(|r| r.conditions[0].mean).collect();
    let ok = means.len() == SWEEP.len() && means.windows(2).all(|w| w[1] <= w[0] + SWEEP_SLACK);
    let msg = SWEEP.iter().zip(&means).map(|(n, m)| format!("{n}: {m:.2}%")).collect::<Vec<_>>().join(" → ");
    let msg = format!("{msg} (each step ≤ previous + {SWEEP_SLACK})");
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_3(env: &Env) -> Outcome {
    let o = vec![
        "experiment.num_speakers=24".to_string(),
        format!("experiment.repetitions={NOISE_REPETITIONS}"),
        "sweep.conditions=[\"clean\", \"wgn:10\", \"ssn:10\"]".to_string(),
    ];
    let r = env.evaluate(&o)?;
    let mean = |name: &str| r[0].conditions.iter().find(|c| c.name == name).map(|c| c.mean).ok_or(format!("no `{name}` condition"));
    let (clean, wgn, ssn) = (mean("clean")?, mean("wgn:10")?, mean("ssn:10")?);
    let msg = format!("clean {clean:.2}%, wgn:10 {wgn:.2}%, ssn:10 {ssn:.2}% (need clean − wgn ≥ {MIN_WGN_DROP}, ssn ≤ clean)");
    if clean - wgn >= MIN_WGN_DROP && ssn <= clean {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_4(env: &Env) -> Outcome {
    let out = TempDir::new().map_err(|e| e.to_string())?;
    let m = format!("experiment.manifest=\"{}\"", env.manifest_path());
    let args = [
        "evaluate",
        "--set",
        &m,
        "--set",
        "experiment.num_speakers=12",
        "--set",
        "experiment.repetitions=1",
        "--set",
        "sweep.components=[8, 64, 512]",
        "--out-dir",
        &out.path().to_string_lossy(),
        "--format",
        "csv",
    ]
    .map(String::from);
    let run = cisid(&args.iter().map(String::as_str).collect::<Vec<_>>());
    let code = run.status.code();
    let mut found = Vec::new();
    for k in [8, 64, 512] {
        let p = out.path().join(format!("components-{k}.csv"));
        if let Ok(text) = std::fs::read_to_string(&p) {
            if let Ok(r) = parse_report_csv(&text) {
                found.push(format!("K={k} {:.2}%", r.conditions[0].mean));
            }
        }
    }
    let msg = format!("exit {code:?}, reports: {}", found.join(", "));
    if code == Some(0) && found.len() == 3 {
        Ok(msg)
    } else {
        Err(format!("{msg}; stderr: {}", String::from_utf8_lossy(&run.stderr).trim()))
    }
}

fn random_gmm(rng: &mut ChaCha8Rng, k: usize, d: usize) -> GmmModel<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let weights = raw.iter().map(|w| w / total).collect();
    let means = Matrix::from_vec(k, d, (0..k * d).map(|_| 3.0 * normal(rng)).collect());
    let vars = Matrix::from_vec(k, d, (0..k * d).map(|_| rng.random_range(0.2..2.5)).collect());
    GmmModel::new(weights, means, vars, vec![1e-6; d]).unwrap()
}

fn sample_gmm(rng: &mut ChaCha8Rng, g: &GmmModel<f64>, n: usize) -> Matrix<f64> {
    let d = g.dim();
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut c = g.num_components() - 1;
        for (i, &w) in g.weights().iter().enumerate() {
            acc += w;
            if u < acc {
                c = i;
                break;
            }
        }
        for j in 0..d {
            data.push(g.means()[(c, j)] + g.variances()[(c, j)].sqrt() * normal(rng));
        }
    }
    Matrix::from_vec(n, d, data)
}

/// Largest decrease between consecutive objective values.
fn worst_drop(obj: &[f64]) -> f64 {
    obj.windows(2).map(|w| w[0] - w[1]).fold(f64::NEG_INFINITY, f64::max)
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut em_worst = f64::NEG_INFINITY;
    for trial in 0..100u64 {
        let (k, d) = (rng.random_range(1..6), rng.random_range(1..5));
        let n = rng.random_range(100..600);
        let gen = random_gmm(&mut rng, k, d);
        let x = sample_gmm(&mut rng, &gen, n);
        let init = kmeans_init(&x, rng.random_range(1..7), trial, 1e-3).map_err(|e| e.to_string())?;
        let out = em_train(&init, &x, &EmOptions { max_iters: 30, rel_tol: 0.0 }).map_err(|e| e.to_string())?;
        em_worst = em_worst.max(worst_drop(&out.log_likelihood));
    }

    let mut tv_worst = f64::NEG_INFINITY;
    let mut plda_worst = f64::NEG_INFINITY;
    for trial in 0..10u64 {
        let (k, d) = (4, 3);
        let ubm = random_gmm(&mut rng, k, d);
        let stats: Vec<BaumWelchStats<f64>> = (0..40)
            .map(|_| {
                let n = rng.random_range(50..300);
                let shifted = random_gmm(&mut rng, k, d);
                bw_stats_frames(&ubm, &sample_gmm(&mut rng, &shifted, n)).unwrap()
            })
            .collect();
        let tv = train_tv(&ubm, &stats, 5, 10, trial).map_err(|e| e.to_string())?;
        tv_worst = tv_worst.max(worst_drop(&tv.objective));

        let r = 6;
        let mut vectors = Vec::new();
        let mut labels = Vec::new();
        for s in 0..30 {
            let centre: Vec<f64> = (0..r).map(|_| 2.0 * normal(&mut rng)).collect();
            for _ in 0..6 {
                vectors.push(centre.iter().map(|c| c + normal(&mut rng)).collect::<Vec<f64>>());
                labels.push(format!("s{s}"));
            }
        }
        let plda = train_plda(&vectors, &labels, 3, 15, trial).map_err(|e| e.to_string())?;
        plda_worst = plda_worst.max(worst_drop(&plda.objective));
    }
    let msg = format!(
        "largest decrease: EM {em_worst:.2e} (tol {EM_TOL:.0e}), TV {tv_worst:.2e}, PLDA {plda_worst:.2e} (tol {OBJECTIVE_TOL:.0e})"
    );
    if em_worst <= EM_TOL && tv_worst <= OBJECTIVE_TOL && plda_worst <= OBJECTIVE_TOL {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn direct_average_ll(m: &GmmModel<f64>, x: &Matrix<f64>) -> f64 {
    let mut total = 0.0;
    for row in x.row_iter() {
        let mut p = 0.0;
        for k in 0..m.num_components() {
            let mut dens = m.weights()[k];
            for (j, &xj) in row.iter().enumerate() {
                let (mu, var) = (m.means()[(k, j)], m.variances()[(k, j)]);
                dens *= (-(xj - mu).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
            }
            p += dens;
        }
        total += p.ln();
    }
    total / x.rows() as f64
}

/// Log-density of a zero-mean Gaussian via Gauss-Jordan elimination.
#[allow(clippy::needless_range_loop)]
fn gaussian_log_density(x: &[f64], cov: &[Vec<f64>]) -> f64 {
    let n = x.len();
    let mut m: Vec<Vec<f64>> = cov.to_vec();
    let mut rhs = x.to_vec();
    let mut logdet = 0.0;
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
        m.swap(c, p);
        rhs.swap(c, p);
        let piv = m[c][c];
        logdet += piv.abs().ln();
        for j in 0..n {
            m[c][j] /= piv;
        }
        rhs[c] /= piv;
        for i in 0..n {
            if i != c {
                let f = m[i][c];
                for j in 0..n {
                    m[i][j] -= f * m[c][j];
                }
                rhs[i] -= f * rhs[c];
            }
        }
    }
    let quad: f64 = x.iter().zip(&rhs).map(|(a, b)| a * b).sum();
    -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + quad)
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);

    let mut gmm_err = 0.0f64;
    for _ in 0..20 {
        let m = random_gmm(&mut rng, 5, 3);
        let x = Matrix::from_vec(300, 3, (0..900).map(|_| 3.0 * normal(&mut rng)).collect());
        let ours = log_likelihood(&m, &x).map_err(|e| e.to_string())?;
        gmm_err = gmm_err.max((ours - direct_average_ll(&m, &x)).abs());
    }

    let mut iv_err = 0.0f64;
    for _ in 0..50 {
        let (t, var) = (rng.random_range(0.1..3.0), rng.random_range(0.1..3.0));
        let (n, f) = (rng.random_range(0.0..500.0), 10.0 * normal(&mut rng));
        let tv = TvModel::new(Matrix::from_vec(1, 1, vec![t]), 1, 1, vec![1.0 / var], 1).map_err(|e| e.to_string())?;
        let s = BaumWelchStats { n: vec![n], f: Matrix::from_vec(1, 1, vec![f]), ubm_fingerprint: 1 };
        let w = extract_ivector(&tv, &s).map_err(|e| e.to_string())?[0];
        let expect = (t * f / var) / (1.0 + t * t * n / var);
        iv_err = iv_err.max((w - expect).abs());
    }

    let mut plda_err = 0.0f64;
    for _ in 0..10 {
        let (r, q) = (rng.random_range(2..7), rng.random_range(1..3));
        let v = Matrix::from_vec(r, q, (0..r * q).map(|_| normal(&mut rng)).collect());
        let a = Matrix::from_vec(r, r, (0..r * r).map(|_| 0.5 * normal(&mut rng)).collect());
        let mut sw = a.matmul(&a.transpose());
        for i in 0..r {
            sw[(i, i)] += 0.5;
        }
        let mean: Vec<f64> = (0..r).map(|_| normal(&mut rng)).collect();
        let model = PldaModel::new(mean.clone(), v.clone(), sw.clone()).map_err(|e| e.to_string())?;
        let ac = v.matmul(&v.transpose());
        let tot = ac.add(&sw);
        let joint = |off: &Matrix<f64>| -> Vec<Vec<f64>> {
            (0..2 * r)
                .map(|i| (0..2 * r).map(|j| if (i < r) == (j < r) { tot[(i % r, j % r)] } else { off[(i % r, j % r)] }).collect())
                .collect()
        };
        let (same, diff) = (joint(&ac), joint(&Matrix::zeros(r, r)));
        for _ in 0..5 {
            let e: Vec<f64> = (0..r).map(|_| 2.0 * normal(&mut rng)).collect();
            let t: Vec<f64> = (0..r).map(|_| 2.0 * normal(&mut rng)).collect();
            let z: Vec<f64> = e.iter().chain(&t).zip(mean.iter().chain(&mean)).map(|(x, m)| x - m).collect();
            let oracle = gaussian_log_density(&z, &same) - gaussian_log_density(&z, &diff);
            let ours = plda_score(&model, &e, &t).map_err(|e| e.to_string())?;
            plda_err = plda_err.max((ours - oracle).abs());
        }
    }

    let map = MapParams::default();
    let mid = map.base_level + 0.5 * (map.saturation_level - map.base_level);
    let rho = 416.2f64;
    let p = (1.0 + 0.5 * rho).log10() / (1.0 + rho).log10();
    let t = f64::from(map.t_levels[0]);
    let c = f64::from(map.c_levels[0]);
    let independent = (t + (c - t) * p).round() as u8;
    let ours = lgf_map(mid, 0, &map);

    let msg = format!(
        "GMM LL err {gmm_err:.1e} (tol {GMM_ORACLE_TOL:.0e}), scalar i-vector err {iv_err:.1e} (tol {IVECTOR_ORACLE_TOL:.0e}), \
         PLDA LLR err {plda_err:.1e} (tol {PLDA_ORACLE_TOL:.0e}), LGF midpoint {ours} (independent {independent}, expect {LGF_MIDPOINT})"
    );
    if gmm_err < GMM_ORACLE_TOL
        && iv_err < IVECTOR_ORACLE_TOL
        && plda_err < PLDA_ORACLE_TOL
        && ours == LGF_MIDPOINT
        && independent == LGF_MIDPOINT
    {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// A random test signal: noise, tone, synthetic speech or a mix, with
/// random gain and stretches of digital silence.
fn random_utterance(rng: &mut ChaCha8Rng, cfg: &AceConfig, speech: &[cisid_harness::synth::Voice]) -> AudioBuffer<f64> {
    let rate = cfg.analysis_rate;
    let len = rng.random_range(cfg.frame_len..12_000);
    let gain = 10f64.powf(rng.random_range(-4.0..0.0));
    let mut x: Vec<f64> = match rng.random_range(0..4) {
        0 => (0..len).map(|_| normal(rng)).collect(),
        1 => {
            let f = rng.random_range(50.0..7900.0);
            (0..len).map(|i| (std::f64::consts::TAU * f * i as f64 / f64::from(rate)).sin()).collect()
        }
        2 => synth_utterance(&speech[rng.random_range(0..speech.len())], len, rate, rng.random()).samples,
        _ => (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
    };
    if rng.random_bool(0.3) {
        let a = rng.random_range(0..len);
        let b = rng.random_range(a..=len);
        x[a..b].iter_mut().for_each(|v| *v = 0.0);
    }
    AudioBuffer::new(x.iter().map(|v| (v * gain).clamp(-1.0, 1.0)).collect(), rate)
}

fn criterion_7() -> Outcome {
    let cfg = AceConfig::default();
    let speech = voices(&SynthConfig { speakers: 8, ..SynthConfig::default() });
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut frames = 0usize;
    for u in 0..RANDOM_UTTERANCES {
        let x = random_utterance(&mut rng, &cfg, &speech);
        let eg = encode(&x, &cfg).map_err(|e| format!("utterance {u}: {e}"))?;
        let want = (x.len() - cfg.frame_len) / cfg.hop + 1;
        if eg.num_frames() != want {
            return Err(format!("utterance {u}: {} frames for {} samples, expected {want}", eg.num_frames(), x.len()));
        }
        for (i, frame) in eg.frames().enumerate() {
            let active = frame.iter().filter(|&&v| v > 0).count();
            if active > cfg.maxima {
                return Err(format!("utterance {u} frame {i}: {active} active channels > {}", cfg.maxima));
            }
            for (c, &v) in frame.iter().enumerate() {
                if v > 0 && (v < cfg.map.t_levels[c] || v > cfg.map.c_levels[c]) {
                    return Err(format!("utterance {u} frame {i} channel {c}: level {v} outside [T, C]"));
                }
            }
        }
        frames += eg.num_frames();
    }
    Ok(format!("{RANDOM_UTTERANCES} utterances, {frames} frames: ≤ {} maxima, levels in [T, C], frame counts exact", cfg.maxima))
}

fn third_octave_levels(env: &SpectralEnvelope<f64>, centres: &[f64]) -> Vec<f64> {
    centres
        .iter()
        .map(|&fc| {
            let (lo, hi) = (fc * 2f64.powf(-1.0 / 6.0), fc * 2f64.powf(1.0 / 6.0));
            let e: f64 = (0..env.magnitudes.len()).filter(|&b| (lo..hi).contains(&env.bin_hz(b))).map(|b| env.magnitudes[b].powi(2)).sum();
            10.0 * e.log10()
        })
        .collect()
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let speech = voices(&SynthConfig { speakers: 4, ..SynthConfig::default() });
    let mut snr_err = 0.0f64;
    for i in 0..100u64 {
        let len = rng.random_range(4000..16000);
        let mut clean = synth_utterance(&speech[(i % 4) as usize], len, 8000, i);
        clean = clean.scaled(rng.random_range(0.05..1.0));
        let noise = gen_wgn::<f64>(len + rng.random_range(0..200), 8000, 1000 + i);
        let snr = rng.random_range(-10.0..30.0);
        let m = mix_at_snr(&clean, &noise, snr).map_err(|e| e.to_string())?;
        let added: Vec<f64> = noise.samples[..len].iter().map(|v| v * m.noise_gain).collect();
        let achieved = 10.0 * (mean_power(&clean.samples) / mean_power(&added)).log10();
        snr_err = snr_err.max((achieved - snr).abs());
    }

    let rate = 16000;
    let corpus: Vec<AudioBuffer<f64>> =
        speech.iter().enumerate().map(|(s, v)| synth_utterance(v, 4 * rate as usize, rate, s as u64)).collect();
    let target = estimate_ltass(&corpus, 512).map_err(|e| e.to_string())?;
    let ssn = gen_ssn(&target, SSN_SAMPLES, rate, 88).map_err(|e| e.to_string())?;
    let measured = estimate_ltass(&[ssn], 512).map_err(|e| e.to_string())?;
    let centres: Vec<f64> =
        (0..).map(|i| 100.0 * 2f64.powf(i as f64 / 3.0)).take_while(|&fc| fc * 2f64.powf(1.0 / 6.0) < f64::from(rate) / 2.0).collect();
    let want = third_octave_levels(&target, &centres);
    let got = third_octave_levels(&measured, &centres);
    let (band_err, worst_fc) =
        want.iter().zip(&got).zip(&centres).map(|((w, g), fc)| ((w - g).abs(), *fc)).fold((0.0, 0.0), |a, b| if b.0 > a.0 { b } else { a });

    let msg = format!(
        "mix SNR err {snr_err:.2e} dB over 100 triples (tol {SNR_TOL_DB}), SSN worst band {band_err:.2} dB at {worst_fc:.0} Hz \
         over {} bands (tol ±{BAND_TOL_DB})",
        centres.len()
    );
    if snr_err < SNR_TOL_DB && band_err <= BAND_TOL_DB {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn criterion_9(env: &Env) -> Outcome {
    let runs = [TempDir::new().map_err(|e| e.to_string())?, TempDir::new().map_err(|e| e.to_string())?];
    let m = format!("experiment.manifest=\"{}\"", env.manifest_path());
    let mut bytes = Vec::new();
    for dir in &runs {
        let out = dir.path().to_string_lossy().into_owned();
        let run = cisid(&[
            "evaluate",
            "--set",
            &m,
            "--set",
            "experiment.num_speakers=8",
            "--set",
            "experiment.repetitions=2",
            "--set",
            "experiment.master_seed=9",
            "--set",
            "backend.gmm.components=16",
            "--set",
            "sweep.conditions=[\"clean\", \"wgn:5\", \"ssn:5\"]",
            "--out-dir",
            &out,
            "--format",
            "csv",
        ]);
        if !run.status.success() {
            return Err(format!("evaluate failed: {}", String::from_utf8_lossy(&run.stderr).trim()));
        }
        bytes.push(std::fs::read(dir.path().join("report.csv")).map_err(|e| e.to_string())?);
    }
    let msg = format!("two runs wrote {} and {} bytes", bytes[0].len(), bytes[1].len());
    if bytes[0] == bytes[1] && !bytes[0].is_empty() {
        Ok(format!("{msg}, identical"))
    } else {
        Err(format!("{msg}, different"))
    }
}

fn main() {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: u32| selected.is_empty() || selected.contains(&n);
    let needs_corpus = [1, 2, 3, 4, 9].iter().any(|&n| wanted(n));
    let env = needs_corpus.then(Env::new);
    let env = || env.as_ref().expect("corpus");

    let criteria: [(u32, &str, &dyn Fn() -> Outcome); 9] = [
        (1, "12-speaker accuracy and runtime", &|| criterion_1(env())),
        (2, "speaker sweep is non-increasing", &|| criterion_2(env())),
        (3, "noise robustness", &|| criterion_3(env())),
        (4, "large-K GMM sweep", &|| criterion_4(env())),
        (5, "monotone training objectives", &criterion_5),
        (6, "numerical oracles", &criterion_6),
        (7, "encoder invariants", &criterion_7),
        (8, "noise calibration", &criterion_8),
        (9, "byte-identical reports", &|| criterion_9(env())),
    ];

    let mut failed = 0;
    for (n, name, run) in criteria {
        if !wanted(n) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("PASS criterion {n} ({name}): {msg} [{secs:.1} s]"),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {n} ({name}): {msg} [{secs:.1} s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
