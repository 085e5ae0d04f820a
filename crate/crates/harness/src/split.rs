//! Seed derivation and train/test partitioning.

use cisid_core::scalar::fnv1a;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{HarnessError, Result};
use crate::manifest::CorpusManifest;

/// Deterministic child seed of `parent` for the given tag and index.
pub fn derive_seed(parent: u64, tag: &str, index: u64) -> u64 {
    let mut bytes = Vec::with_capacity(tag.len() + 17);
    bytes.extend_from_slice(&parent.to_le_bytes());
    bytes.extend_from_slice(tag.as_bytes());
    bytes.push(0);
    bytes.extend_from_slice(&index.to_le_bytes());
    fnv1a(&bytes)
}

/// Seed of repetition `rep` (0-based) of an experiment.
pub fn repetition_seed(master_seed: u64, rep: usize) -> u64 {
    derive_seed(master_seed, "repetition", rep as u64)
}

/// Seed for anything keyed by a string label under `parent`.
pub fn label_seed(parent: u64, tag: &str, label: &str) -> u64 {
    derive_seed(parent, &format!("{tag}/{label}"), 0)
}

/// Manifest entry indices of one trial.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    /// Selected speakers in enrollment order.
    pub speakers: Vec<String>,
    /// Per speaker (same order), training entry indices.
    pub train: Vec<Vec<usize>>,
    /// Per speaker (same order), test entry indices.
    pub test: Vec<Vec<usize>>,
}

impl Split {
    pub fn train_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.train.iter().flatten().copied()
    }

    pub fn test_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.test.iter().flatten().copied()
    }
}

/// Number of training utterances out of `n` for `fraction`; fails unless
/// both partitions are non-empty.
pub fn train_count(n: usize, fraction: f64) -> Option<usize> {
    let k = (fraction * n as f64).round() as usize;
    (k >= 1 && k < n).then_some(k)
}

/// A seeded permutation of the manifest's speakers; prefixes give nested
/// subsets.
pub fn speaker_order(manifest: &CorpusManifest, seed: u64) -> Vec<String> {
    let mut speakers = manifest.speakers();
    speakers.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, "speakers", 0)));
    speakers
}

/// Splits the utterances of `speakers` with a per-speaker seed derived from
/// `seed` and the label, so a speaker's split does not depend on which other
/// speakers were drawn.
pub fn split_speakers(manifest: &CorpusManifest, speakers: &[String], fraction: f64, seed: u64) -> Result<Split> {
    let by = manifest.by_speaker();
    let mut train = Vec::with_capacity(speakers.len());
    let mut test = Vec::with_capacity(speakers.len());
    for spk in speakers {
        let idx = by.get(spk.as_str()).ok_or_else(|| HarnessError::Data(format!("speaker `{spk}` is not in the manifest")))?;
        let k = train_count(idx.len(), fraction).ok_or_else(|| {
            HarnessError::Data(format!(
                "train fraction {fraction} leaves an empty partition for speaker `{spk}` ({} utterances)",
                idx.len()
            ))
        })?;
        let mut shuffled = idx.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(label_seed(seed, "split", spk)));
        let (a, b) = shuffled.split_at(k);
        let (mut a, mut b) = (a.to_vec(), b.to_vec());
        a.sort_unstable();
        b.sort_unstable();
        train.push(a);
        test.push(b);
    }
    Ok(Split { speakers: speakers.to_vec(), train, test })
}

/// Draws `num_speakers` speakers without replacement and splits each one's
/// utterances `fraction` / `1 - fraction`.
pub fn split_train_test(manifest: &CorpusManifest, fraction: f64, num_speakers: usize, seed: u64) -> Result<Split> {
    let order = speaker_order(manifest, seed);
    if num_speakers == 0 || num_speakers > order.len() {
        return Err(HarnessError::Data(format!("{num_speakers} speakers requested but the manifest has {}", order.len())));
    }
    split_speakers(manifest, &order[..num_speakers], fraction, seed)
}
