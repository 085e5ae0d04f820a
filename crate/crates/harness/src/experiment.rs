//! Repeated closed-set trials and sweeps.

use std::collections::BTreeSet;
use std::time::Instant;

use rayon::prelude::*;

use crate::backend::{train_backend, SpeakerData};
use crate::config::{BackendKind, ExperimentConfig, NoiseKind, SpeakerCount};
use crate::error::{HarnessError, Result};
use crate::features::Corpus;
use crate::manifest::load_manifest;
use crate::report::{ConditionReport, EvaluationReport};
use crate::split::{derive_seed, label_seed, repetition_seed, split_train_test};

/// Decisions of one trial under one test condition.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialCondition {
    pub accuracy: f64,
    /// (true speaker, decided speaker) per test utterance, indices into the
    /// trial's speaker list; `None` when the utterance yielded no features.
    pub decisions: Vec<(usize, Option<usize>)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialResult {
    pub speakers: Vec<String>,
    pub conditions: Vec<TrialCondition>,
    pub timings: Vec<(String, f64)>,
}

impl TrialResult {
    /// Confusion matrix over the trial's speakers plus a no-decision column.
    pub fn confusion(&self, condition: usize) -> Vec<Vec<u64>> {
        let n = self.speakers.len();
        let mut m = vec![vec![0u64; n + 1]; n];
        for &(t, p) in &self.conditions[condition].decisions {
            m[t][p.unwrap_or(n)] += 1;
        }
        m
    }
}

/// One repetition: fresh speaker subset and split, back end trained on clean
/// training audio, then every configured test condition on the same models.
pub fn run_trial(corpus: &Corpus, cfg: &ExperimentConfig, rep: usize) -> Result<TrialResult> {
    let seed = repetition_seed(cfg.experiment.master_seed, rep);
    let available = corpus.manifest.speakers().len();
    let n = cfg.experiment.num_speakers.resolve(available);
    let split = split_train_test(&corpus.manifest, cfg.experiment.train_fraction, n, seed)?;
    let conditions = cfg.conditions()?;

    let t0 = Instant::now();
    let data = split
        .speakers
        .iter()
        .zip(&split.train)
        .map(|(label, idx)| {
            let feats = idx.par_iter().map(|&i| corpus.clean_features(i)).collect::<Result<Vec<_>>>()?;
            let dropped = feats.iter().filter(|f| f.is_none()).count();
            if dropped > 0 {
                log::warn!("speaker `{label}`: {dropped} training utterance(s) empty after VAD");
            }
            Ok(SpeakerData { label: label.clone(), utterances: feats.into_iter().flatten().collect() })
        })
        .collect::<Result<Vec<_>>>()?;
    let t_features = t0.elapsed().as_secs_f64();

    let t0 = Instant::now();
    let backend = train_backend(&cfg.backend, &data, derive_seed(seed, "backend", 0))?;
    let t_train = t0.elapsed().as_secs_f64();

    let t0 = Instant::now();
    let ssn = if conditions.iter().any(|c| c.kind == NoiseKind::Ssn) {
        Some(corpus.ltass(split.train_indices(), cfg.noise.ssn_fft_size)?)
    } else {
        None
    };
    let tests: Vec<(usize, usize)> = split.test.iter().enumerate().flat_map(|(s, idx)| idx.iter().map(move |&i| (s, i))).collect();
    let mut results = Vec::with_capacity(conditions.len());
    for cond in &conditions {
        let decisions = tests
            .par_iter()
            .map(|&(s, i)| {
                let id = &corpus.manifest.entries[i].id;
                let noise_seed = label_seed(seed, &format!("noise/{}", cond.name()), id);
                match corpus.test_features(i, cond, ssn.as_ref(), noise_seed)? {
                    Some(f) => Ok((s, Some(backend.identify(&f)?))),
                    None => {
                        log::warn!("test utterance `{id}` yielded no features under {}; counted as an error", cond.name());
                        Ok((s, None))
                    }
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let correct = decisions.iter().filter(|(t, p)| Some(*t) == *p).count();
        let accuracy = 100.0 * correct as f64 / decisions.len() as f64;
        results.push(TrialCondition { accuracy, decisions });
    }
    let t_test = t0.elapsed().as_secs_f64();
    Ok(TrialResult {
        speakers: split.speakers,
        conditions: results,
        timings: vec![("features".into(), t_features), ("train".into(), t_train), ("test".into(), t_test)],
    })
}

/// All repetitions of `cfg`, aggregated into one report named `name`.
pub fn run_experiment(corpus: &Corpus, cfg: &ExperimentConfig, name: &str) -> Result<EvaluationReport> {
    let conditions = cfg.conditions()?;
    let mut trials = Vec::with_capacity(cfg.experiment.repetitions);
    for rep in 0..cfg.experiment.repetitions {
        let t = run_trial(corpus, cfg, rep)?;
        log::info!(
            "{name} repetition {}: {}",
            rep + 1,
            conditions.iter().zip(&t.conditions).map(|(c, r)| format!("{} {:.2}%", c.name(), r.accuracy)).collect::<Vec<_>>().join(", ")
        );
        trials.push(t);
    }
    let labels: Vec<String> = trials.iter().flat_map(|t| t.speakers.iter().cloned()).collect::<BTreeSet<_>>().into_iter().collect();
    let n = labels.len();
    let pos = |l: &str| labels.binary_search_by(|x| x.as_str().cmp(l)).expect("label present");
    let mut reports = Vec::with_capacity(conditions.len());
    for (ci, cond) in conditions.iter().enumerate() {
        let mut confusion = vec![vec![0u64; n + 1]; n];
        for t in &trials {
            for &(tr, p) in &t.conditions[ci].decisions {
                let col = p.map_or(n, |p| pos(&t.speakers[p]));
                confusion[pos(&t.speakers[tr])][col] += 1;
            }
        }
        let acc = trials.iter().map(|t| t.conditions[ci].accuracy).collect();
        reports.push(ConditionReport::new(cond.name(), acc, confusion));
    }
    let mut timings: Vec<(String, f64)> = Vec::new();
    for t in &trials {
        for (k, v) in &t.timings {
            match timings.iter_mut().find(|(kk, _)| kk == k) {
                Some(e) => e.1 += v,
                None => timings.push((k.clone(), *v)),
            }
        }
    }
    Ok(EvaluationReport {
        name: name.to_string(),
        fingerprint: cfg.fingerprint(),
        config: cfg.echo(),
        labels,
        conditions: reports,
        timings,
    })
}

/// One configuration per sweep point, named after the swept values. Without
/// speaker or mixture sweeps this is the base configuration alone.
pub fn sweep_points(cfg: &ExperimentConfig) -> Vec<(String, ExperimentConfig)> {
    let speakers: Vec<Option<usize>> =
        if cfg.sweep.speakers.is_empty() { vec![None] } else { cfg.sweep.speakers.iter().map(|&n| Some(n)).collect() };
    let comps: Vec<Option<usize>> =
        if cfg.sweep.components.is_empty() { vec![None] } else { cfg.sweep.components.iter().map(|&k| Some(k)).collect() };
    let mut out = Vec::new();
    for s in &speakers {
        for k in &comps {
            let mut c = cfg.clone();
            let mut name = Vec::new();
            if let Some(n) = s {
                c.experiment.num_speakers = SpeakerCount::Count(*n);
                name.push(format!("speakers-{n}"));
            }
            if let Some(k) = k {
                match c.backend.kind {
                    BackendKind::GmmUbm => c.backend.gmm.components = *k,
                    BackendKind::IvectorPlda => c.backend.ivector.components = *k,
                }
                name.push(format!("components-{k}"));
            }
            let name = if name.is_empty() { "report".to_string() } else { name.join("_") };
            out.push((name, c));
        }
    }
    out
}

/// Loads the manifest and runs every sweep point; one report per point.
/// Repetition seeds are shared across points, so nested speaker subsets
/// and splits are paired.
pub fn evaluate(cfg: &ExperimentConfig) -> Result<Vec<EvaluationReport>> {
    let manifest = load_manifest(&cfg.experiment.manifest)?;
    let corpus = Corpus::new(manifest, &cfg.vad, &cfg.frontend)?;
    evaluate_corpus(&corpus, cfg)
}

pub fn evaluate_corpus(corpus: &Corpus, cfg: &ExperimentConfig) -> Result<Vec<EvaluationReport>> {
    cfg.validate()?;
    let available = corpus.manifest.speakers().len();
    for (name, c) in sweep_points(cfg) {
        let n = c.experiment.num_speakers.resolve(available);
        if n > available {
            return Err(HarnessError::Data(format!("{name}: {n} speakers requested but the manifest has {available}")));
        }
    }
    sweep_points(cfg).into_iter().map(|(name, c)| run_experiment(corpus, &c, &name)).collect()
}
