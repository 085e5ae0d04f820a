use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use super::stats::BaumWelchStats;
use crate::codec::{self, LeReader, LeWriter};
use crate::error::{Error, Result};
use crate::gmm::GmmModel;
use crate::linalg::{Cholesky, Matrix};
use crate::scalar::Scalar;

/// Utterances per E-step work unit.
const ESTEP_CHUNK: usize = 16;

/// Scale of the random initial matrix relative to the UBM standard
/// deviations.
const INIT_SCALE: f64 = 0.1;

/// Total-variability model `M = m + T w`, `w ~ N(0, I)`, tied to the UBM
/// whose means and variances define `m` and `Σ`.
#[derive(Clone, Debug, PartialEq)]
pub struct TvModel<S> {
    /// (K·D) × R, supervector rows grouped by component.
    t: Matrix<S>,
    num_components: usize,
    dim: usize,
    /// UBM inverse variances, K·D.
    precision: Vec<S>,
    pub ubm_fingerprint: u64,
    /// Per-component `T_kᵀ Σ_k⁻¹ T_k`.
    gram: Vec<Matrix<S>>,
}

impl<S: Scalar> TvModel<S> {
    pub fn new(t: Matrix<S>, num_components: usize, dim: usize, precision: Vec<S>, ubm_fingerprint: u64) -> Result<Self> {
        let kd = num_components * dim;
        if t.rows() != kd || precision.len() != kd {
            return Err(Error::invalid("total-variability matrix shape disagrees with K·D"));
        }
        if t.cols() == 0 || t.cols() > kd {
            return Err(Error::invalid(format!("rank {} must be in 1..={kd}", t.cols())));
        }
        if !t.is_finite() || precision.iter().any(|p| !(p.is_finite() && *p > S::zero())) {
            return Err(Error::numerical("total-variability parameters are not finite"));
        }
        let gram = component_grams(&t, &precision, num_components, dim);
        Ok(Self { t, num_components, dim, precision, ubm_fingerprint, gram })
    }

    pub fn rank(&self) -> usize {
        self.t.cols()
    }

    pub fn num_components(&self) -> usize {
        self.num_components
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn t_matrix(&self) -> &Matrix<S> {
        &self.t
    }

    pub fn precision(&self) -> &[S] {
        &self.precision
    }

    fn check(&self, stats: &BaumWelchStats<S>) -> Result<()> {
        if stats.ubm_fingerprint != self.ubm_fingerprint {
            return Err(Error::invalid("statistics were not computed with this model's UBM"));
        }
        if stats.num_components() != self.num_components || stats.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.num_components * self.dim, got: stats.num_components() * stats.dim() });
        }
        Ok(())
    }

    /// Posterior precision `L`, its factor, the linear term `b` and the
    /// posterior mean `w = L⁻¹ b`.
    fn posterior(&self, stats: &BaumWelchStats<S>) -> Result<Posterior<S>> {
        let r = self.rank();
        let mut l = Matrix::identity(r);
        for (k, &nk) in stats.n.iter().enumerate() {
            if nk != S::zero() {
                l.add_scaled(nk, &self.gram[k]);
            }
        }
        let weighted: Vec<S> = stats.f.as_slice().iter().zip(&self.precision).map(|(&f, &p)| f * p).collect();
        let b = self.t.t_matvec(&weighted);
        let chol = Cholesky::new(&l).ok_or_else(|| Error::numerical("i-vector posterior precision is not positive definite"))?;
        let w = chol.solve(&b);
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("i-vector is not finite"));
        }
        Ok(Posterior { chol, b, w })
    }

    /// Versioned little-endian layout: magic `CITV`, version, K, D, R, UBM
    /// fingerprint, precision (K·D), T row-major ((K·D)·R), all `f64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = LeWriter::new(b"CITV", 1);
        w.u32(self.num_components as u32);
        w.u32(self.dim as u32);
        w.u32(self.rank() as u32);
        w.u64(self.ubm_fingerprint);
        w.f64s(self.precision.iter().map(|v| v.as_f64()));
        w.f64s(self.t.as_slice().iter().map(|v| v.as_f64()));
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = LeReader::open("total-variability model", bytes, b"CITV", 1)?;
        let k = r.u32()? as usize;
        let d = r.u32()? as usize;
        let rank = r.u32()? as usize;
        let fp = r.u64()?;
        let precision = r.f64s(k * d)?.into_iter().map(S::lit).collect();
        let t = Matrix::from_vec(k * d, rank, r.f64s(k * d * rank)?.into_iter().map(S::lit).collect());
        r.finish()?;
        Self::new(t, k, d, precision, fp)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&codec::read_file(path.as_ref())?)
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct J {
            num_components: usize,
            dim: usize,
            rank: usize,
            ubm_fingerprint: u64,
            t_matrix: Vec<Vec<f64>>,
        }
        let j = J {
            num_components: self.num_components,
            dim: self.dim,
            rank: self.rank(),
            ubm_fingerprint: self.ubm_fingerprint,
            t_matrix: self.t.row_iter().map(|r| r.iter().map(|v| v.as_f64()).collect()).collect(),
        };
        serde_json::to_string_pretty(&j).expect("tv model serializes")
    }
}

struct Posterior<S> {
    chol: Cholesky<S>,
    b: Vec<S>,
    w: Vec<S>,
}

fn component_grams<S: Scalar>(t: &Matrix<S>, precision: &[S], k: usize, d: usize) -> Vec<Matrix<S>> {
    let r = t.cols();
    (0..k)
        .map(|c| {
            let mut g = Matrix::zeros(r, r);
            for j in 0..d {
                let row = c * d + j;
                g.add_outer(precision[row], t.row(row), t.row(row));
            }
            g
        })
        .collect()
}

/// Posterior mean of the latent factor for one utterance.
pub fn extract_ivector<S: Scalar>(tv: &TvModel<S>, stats: &BaumWelchStats<S>) -> Result<Vec<S>> {
    tv.check(stats)?;
    Ok(tv.posterior(stats)?.w)
}

pub fn extract_ivectors<S: Scalar>(tv: &TvModel<S>, stats: &[BaumWelchStats<S>]) -> Result<Vec<Vec<S>>> {
    stats.par_iter().map(|s| extract_ivector(tv, s)).collect()
}

#[derive(Clone, Debug)]
pub struct TvTraining<S> {
    pub model: TvModel<S>,
    /// Marginal log-likelihood of the first-order statistics (up to a
    /// T-independent constant) before each update and after the last one.
    pub objective: Vec<S>,
}

struct TvAccum<S> {
    a: Matrix<S>,
    c: Vec<Matrix<S>>,
    objective: S,
}

/// EM training of the total-variability matrix from per-utterance
/// statistics of `ubm`, starting from a seeded random matrix.
pub fn train_tv<S: Scalar>(ubm: &GmmModel<S>, stats: &[BaumWelchStats<S>], rank: usize, iters: usize, seed: u64) -> Result<TvTraining<S>> {
    if stats.is_empty() {
        return Err(Error::invalid("no statistics to train the total-variability model"));
    }
    if iters == 0 {
        return Err(Error::invalid("total-variability training needs at least one iteration"));
    }
    let (k, d) = (ubm.num_components(), ubm.dim());
    if stats.len() < rank {
        log::warn!("training a rank-{rank} total-variability model on {} utterances", stats.len());
    }
    let precision: Vec<S> = ubm.variances().as_slice().iter().map(|&v| S::one() / v).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init: Vec<S> = ubm
        .variances()
        .as_slice()
        .iter()
        .flat_map(|&v| std::iter::repeat_n(v.sqrt(), rank))
        .map(|sd| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sd * S::lit(z * INIT_SCALE)
        })
        .collect();
    let mut model = TvModel::new(Matrix::from_vec(k * d, rank, init), k, d, precision, ubm.fingerprint())?;
    for s in stats {
        model.check(s)?;
    }

    let mut objective = Vec::with_capacity(iters + 1);
    for iter in 0..=iters {
        let acc = tv_estep(&model, stats, iter < iters)?;
        if !acc.objective.is_finite() {
            return Err(Error::numerical(format!("total-variability iteration {iter}: objective is not finite")));
        }
        objective.push(acc.objective);
        if iter == iters {
            break;
        }
        let mut t = model.t.clone();
        for c in 0..k {
            let Some(chol) = Cholesky::new(&acc.c[c]) else {
                // component never occupied: its block is unidentifiable
                continue;
            };
            for j in 0..d {
                let row = c * d + j;
                let sol = chol.solve(acc.a.row(row));
                t.row_mut(row).copy_from_slice(&sol);
            }
        }
        if !t.is_finite() {
            return Err(Error::numerical(format!("total-variability iteration {iter}: non-finite matrix")));
        }
        model = TvModel::new(t, k, d, model.precision, model.ubm_fingerprint)?;
    }
    Ok(TvTraining { model, objective })
}

fn tv_estep<S: Scalar>(model: &TvModel<S>, stats: &[BaumWelchStats<S>], want_stats: bool) -> Result<TvAccum<S>> {
    let (k, d, r) = (model.num_components, model.dim, model.rank());
    let empty = || TvAccum {
        a: if want_stats { Matrix::zeros(k * d, r) } else { Matrix::zeros(0, 0) },
        c: if want_stats { vec![Matrix::zeros(r, r); k] } else { Vec::new() },
        objective: S::zero(),
    };
    let half = S::lit(0.5);
    let parts = stats
        .par_chunks(ESTEP_CHUNK)
        .map(|chunk| -> Result<TvAccum<S>> {
            let mut acc = empty();
            for s in chunk {
                let post = model.posterior(s)?;
                acc.objective += half * crate::linalg::dot(&post.b, &post.w) - half * post.chol.log_det();
                if !want_stats {
                    continue;
                }
                let mut phi = post.chol.inverse();
                phi.add_outer(S::one(), &post.w, &post.w);
                for c in 0..k {
                    let nc = s.n[c];
                    if nc != S::zero() {
                        acc.c[c].add_scaled(nc, &phi);
                    }
                    for j in 0..d {
                        crate::linalg::axpy(s.f[(c, j)], &post.w, acc.a.row_mut(c * d + j));
                    }
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = empty();
    for p in parts {
        total.objective += p.objective;
        if want_stats {
            total.a.add_assign(&p.a);
            for (c, pc) in total.c.iter_mut().zip(&p.c) {
                c.add_assign(pc);
            }
        }
    }
    Ok(total)
}
