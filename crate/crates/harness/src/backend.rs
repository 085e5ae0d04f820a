//! Back-end training and scoring on feature sequences.

use std::sync::Arc;

use cisid_core::embed::{bw_stats, enroll_plda, extract_ivector, identify_plda, length_normalize, train_plda, train_tv, PldaEnrollment};
use cisid_core::gmm::{em_train, identify_gmm, kmeans_init, map_adapt};
use cisid_core::linalg::Matrix;
use cisid_core::{Features, Gmm, Plda, SpeakerGmm, Tv};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{BackendConfig, BackendKind, GmmSection};
use crate::error::{HarnessError, Result};
use crate::split::derive_seed;

/// Training material of one speaker.
pub struct SpeakerData {
    pub label: String,
    pub utterances: Vec<Arc<Features>>,
}

// one value per trial, so the variant size gap is irrelevant
#[allow(clippy::large_enum_variant)]
pub enum TrainedBackend {
    Gmm {
        ubm: Gmm,
        speakers: Vec<SpeakerGmm>,
    },
    Ivector {
        ubm: Gmm,
        tv: Tv,
        /// Global mean of the training i-vectors, removed before length
        /// normalization.
        center: Vec<f64>,
        plda: Plda,
        enrolled: Vec<PldaEnrollment<f64>>,
    },
    /// A single enrolled speaker wins every trial; PLDA cannot be trained
    /// from one speaker.
    Single(String),
}

/// Row-stacks the frames of `seqs`, keeping at most `max_frames` of them
/// (0 = all) chosen with `seed`.
pub fn pool_frames(seqs: &[&Features], max_frames: usize, seed: u64) -> Matrix<f64> {
    let d = seqs.first().map(|s| s.dim()).unwrap_or(0);
    let total: usize = seqs.iter().map(|s| s.len()).sum();
    let mut data = Vec::with_capacity(total * d);
    for s in seqs {
        data.extend_from_slice(s.frames().as_slice());
    }
    subsample(Matrix::from_vec(total, d, data), max_frames, seed)
}

/// At most `max_rows` rows of `m` (0 = all), chosen with `seed`, in their
/// original order.
pub fn subsample(m: Matrix<f64>, max_rows: usize, seed: u64) -> Matrix<f64> {
    if max_rows == 0 || m.rows() <= max_rows {
        return m;
    }
    let mut keep = sample(&mut ChaCha8Rng::seed_from_u64(seed), m.rows(), max_rows).into_vec();
    keep.sort_unstable();
    let mut out = Vec::with_capacity(max_rows * m.cols());
    for i in keep {
        out.extend_from_slice(m.row(i));
    }
    Matrix::from_vec(max_rows, m.cols(), out)
}

/// k-means seeded EM training of a diagonal UBM.
pub fn train_ubm(seqs: &[&Features], components: usize, gmm: &GmmSection, em_iters: usize, seed: u64) -> Result<Gmm> {
    let frames = pool_frames(seqs, gmm.max_ubm_frames, derive_seed(seed, "ubm-frames", 0));
    if frames.rows() < components {
        return Err(HarnessError::Data(format!("{} training frames cannot support a {components}-component UBM", frames.rows())));
    }
    let init_frames = subsample(frames.clone(), gmm.kmeans_frames, derive_seed(seed, "kmeans-frames", 0));
    let init = kmeans_init(&init_frames, components, derive_seed(seed, "kmeans", 0), gmm.floor_factor)?;
    let opts = cisid_core::gmm::EmOptions { max_iters: em_iters, rel_tol: gmm.rel_tol };
    let out = em_train(&init, &frames, &opts)?;
    log::info!(
        "UBM K={components}: {} frames, {} EM iterations, avg log-likelihood {:.4}",
        frames.rows(),
        out.log_likelihood.len().saturating_sub(1),
        out.log_likelihood.last().copied().unwrap_or(f64::NAN)
    );
    Ok(out.model)
}

/// Element-wise mean of equal-length vectors.
pub fn mean_vector(vs: &[Vec<f64>]) -> Vec<f64> {
    let mut m = vec![0.0; vs.first().map_or(0, Vec::len)];
    for v in vs {
        for (a, b) in m.iter_mut().zip(v) {
            *a += b;
        }
    }
    let n = vs.len().max(1) as f64;
    m.iter_mut().for_each(|a| *a /= n);
    m
}

/// Subtracts `center` and scales to unit length.
pub fn center_normalize(w: &[f64], center: &[f64]) -> Result<Vec<f64>> {
    if w.len() != center.len() {
        return Err(cisid_core::Error::DimensionMismatch { expected: center.len(), got: w.len() }.into());
    }
    let c: Vec<f64> = w.iter().zip(center).map(|(a, b)| a - b).collect();
    Ok(length_normalize(&c)?)
}

fn all_utterances(data: &[SpeakerData]) -> Vec<&Features> {
    data.iter().flat_map(|s| s.utterances.iter().map(|u| u.as_ref())).collect()
}

/// Trains the configured back end on the speakers' training features and
/// enrolls every speaker.
pub fn train_backend(cfg: &BackendConfig, data: &[SpeakerData], seed: u64) -> Result<TrainedBackend> {
    if data.is_empty() {
        return Err(HarnessError::Data("no speakers to enroll".into()));
    }
    if let Some(s) = data.iter().find(|s| s.utterances.is_empty()) {
        return Err(HarnessError::Data(format!("speaker `{}` has no usable training audio after VAD", s.label)));
    }
    let utts = all_utterances(data);
    match cfg.kind {
        BackendKind::GmmUbm => {
            let ubm = train_ubm(&utts, cfg.gmm.components, &cfg.gmm, cfg.gmm.em_iters, seed)?;
            let speakers = data
                .par_iter()
                .map(|s| {
                    let refs: Vec<&Features> = s.utterances.iter().map(|u| u.as_ref()).collect();
                    map_adapt(&ubm, &pool_frames(&refs, 0, 0), cfg.gmm.relevance, &s.label)
                })
                .collect::<cisid_core::Result<Vec<_>>>()?;
            Ok(TrainedBackend::Gmm { ubm, speakers })
        }
        BackendKind::IvectorPlda if data.len() == 1 => Ok(TrainedBackend::Single(data[0].label.clone())),
        BackendKind::IvectorPlda => {
            let iv = &cfg.ivector;
            let ubm = train_ubm(&utts, iv.components, &cfg.gmm, iv.ubm_iters, seed)?;
            let stats = utts.par_iter().map(|u| bw_stats(&ubm, u)).collect::<cisid_core::Result<Vec<_>>>()?;
            let tv = train_tv(&ubm, &stats, iv.rank, iv.tv_iters, derive_seed(seed, "tv", 0))?.model;
            let raw = stats.par_iter().map(|s| extract_ivector(&tv, s)).collect::<cisid_core::Result<Vec<_>>>()?;
            let center = mean_vector(&raw);
            let ivecs = raw.iter().map(|w| center_normalize(w, &center)).collect::<Result<Vec<_>>>()?;
            let labels: Vec<&str> = data.iter().flat_map(|s| std::iter::repeat_n(s.label.as_str(), s.utterances.len())).collect();
            let q = iv.plda_dim.min(iv.rank).min(data.len() - 1).max(1);
            if q < iv.plda_dim {
                log::info!("PLDA speaker subspace reduced to {q} for {} speakers", data.len());
            }
            let plda = train_plda(&ivecs, &labels, q, iv.plda_iters, derive_seed(seed, "plda", 0))?.model;
            let mut enrolled = Vec::with_capacity(data.len());
            let mut offset = 0;
            for s in data {
                let n = s.utterances.len();
                enrolled.push(enroll_plda(&s.label, &ivecs[offset..offset + n])?);
                offset += n;
            }
            Ok(TrainedBackend::Ivector { ubm, tv, center, plda, enrolled })
        }
    }
}

impl TrainedBackend {
    /// Index of the identified speaker in enrollment order.
    pub fn identify(&self, features: &Features) -> Result<usize> {
        Ok(match self {
            TrainedBackend::Gmm { speakers, .. } => identify_gmm(speakers, features.frames())?.index,
            TrainedBackend::Ivector { ubm, tv, center, plda, enrolled } => {
                let w = center_normalize(&extract_ivector(tv, &bw_stats(ubm, features)?)?, center)?;
                identify_plda(plda, enrolled, &w)?.index
            }
            TrainedBackend::Single(_) => 0,
        })
    }
}
