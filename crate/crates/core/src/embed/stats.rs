use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::frontend::FeatureSequence;
use crate::gmm::{accumulate, check_dims, GmmModel};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Zeroth- and UBM-centred first-order Baum-Welch statistics of one
/// utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct BaumWelchStats<S> {
    /// Occupancy per component (K).
    pub n: Vec<S>,
    /// `Σ_t γ_tk (x_t - μ_k)` per component (K × D).
    pub f: Matrix<S>,
    pub ubm_fingerprint: u64,
}

impl<S: Scalar> BaumWelchStats<S> {
    pub fn num_components(&self) -> usize {
        self.n.len()
    }

    pub fn dim(&self) -> usize {
        self.f.cols()
    }

    pub fn total_occupancy(&self) -> S {
        self.n.iter().copied().sum()
    }

    /// Statistics of the concatenation of both utterances.
    pub fn combine(&self, other: &Self) -> Result<Self> {
        if self.ubm_fingerprint != other.ubm_fingerprint {
            return Err(Error::invalid("statistics come from different UBMs"));
        }
        if self.n.len() != other.n.len() || self.dim() != other.dim() {
            return Err(Error::DimensionMismatch { expected: self.f.as_slice().len(), got: other.f.as_slice().len() });
        }
        Ok(Self {
            n: self.n.iter().zip(&other.n).map(|(&a, &b)| a + b).collect(),
            f: self.f.add(&other.f),
            ubm_fingerprint: self.ubm_fingerprint,
        })
    }
}

pub fn bw_stats<S: Scalar>(ubm: &GmmModel<S>, seq: &FeatureSequence<S>) -> Result<BaumWelchStats<S>> {
    bw_stats_frames(ubm, seq.frames())
}

pub fn bw_stats_frames<S: Scalar>(ubm: &GmmModel<S>, frames: &Matrix<S>) -> Result<BaumWelchStats<S>> {
    check_dims(ubm, frames)?;
    let acc = accumulate(ubm, frames, false);
    let mut f = acc.f;
    for k in 0..ubm.num_components() {
        crate::linalg::axpy(-acc.n[k], ubm.means().row(k), f.row_mut(k));
    }
    if !f.is_finite() || acc.n.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("Baum-Welch statistics are not finite"));
    }
    Ok(BaumWelchStats { n: acc.n, f, ubm_fingerprint: ubm.fingerprint() })
}

/// Statistics for many utterances, one per sequence, in input order.
pub fn bw_stats_batch<S: Scalar>(ubm: &GmmModel<S>, seqs: &[FeatureSequence<S>]) -> Result<Vec<BaumWelchStats<S>>> {
    seqs.par_iter().map(|s| bw_stats(ubm, s)).collect()
}
