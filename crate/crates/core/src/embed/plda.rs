use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::codec::{self, LeReader, LeWriter};
use crate::error::{Error, Result};
use crate::gmm::{argmax_first, Identification};
use crate::linalg::{norm2, symmetric_eigenvalues, Cholesky, Matrix};
use crate::scalar::Scalar;

/// Two-covariance PLDA `x = μ + V h + ε`, `h ~ N(0, I_q)`,
/// `ε ~ N(0, Σ_w)`, with the closed-form verification constants cached.
#[derive(Clone, Debug, PartialEq)]
pub struct PldaModel<S> {
    mean: Vec<S>,
    v: Matrix<S>,
    sigma_w: Matrix<S>,
    score: ScoreCache<S>,
}

#[derive(Clone, Debug, PartialEq)]
struct ScoreCache<S> {
    q: Matrix<S>,
    p: Matrix<S>,
    k: S,
}

fn chol_or<S: Scalar>(m: &Matrix<S>, what: &str) -> Result<Cholesky<S>> {
    Cholesky::new(m).ok_or_else(|| Error::numerical(format!("{what} is not positive definite")))
}

impl<S: Scalar> PldaModel<S> {
    pub fn new(mean: Vec<S>, v: Matrix<S>, sigma_w: Matrix<S>) -> Result<Self> {
        let r = mean.len();
        if r == 0 || v.rows() != r || sigma_w.rows() != r || sigma_w.cols() != r {
            return Err(Error::invalid("PLDA parameter shapes disagree"));
        }
        if v.cols() == 0 || v.cols() > r {
            return Err(Error::invalid(format!("PLDA subspace dimension {} must be in 1..={r}", v.cols())));
        }
        if mean.iter().any(|x| !x.is_finite()) || !v.is_finite() || !sigma_w.is_finite() {
            return Err(Error::numerical("PLDA parameters are not finite"));
        }
        let mut sigma_w = sigma_w;
        sigma_w.symmetrize();
        let score = ScoreCache::new(&v, &sigma_w)?;
        Ok(Self { mean, v, sigma_w, score })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn subspace_dim(&self) -> usize {
        self.v.cols()
    }

    pub fn mean(&self) -> &[S] {
        &self.mean
    }

    pub fn v(&self) -> &Matrix<S> {
        &self.v
    }

    pub fn sigma_w(&self) -> &Matrix<S> {
        &self.sigma_w
    }

    /// Versioned little-endian layout: magic `CIPL`, version, R, q, μ (R),
    /// V row-major (R·q), Σ_w row-major (R·R), all `f64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = LeWriter::new(b"CIPL", 1);
        w.u32(self.dim() as u32);
        w.u32(self.subspace_dim() as u32);
        w.f64s(self.mean.iter().map(|v| v.as_f64()));
        w.f64s(self.v.as_slice().iter().map(|v| v.as_f64()));
        w.f64s(self.sigma_w.as_slice().iter().map(|v| v.as_f64()));
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rd = LeReader::open("PLDA model", bytes, b"CIPL", 1)?;
        let r = rd.u32()? as usize;
        let q = rd.u32()? as usize;
        let conv = |v: Vec<f64>| v.into_iter().map(S::lit).collect::<Vec<S>>();
        let mean = conv(rd.f64s(r)?);
        let v = Matrix::from_vec(r, q, conv(rd.f64s(r * q)?));
        let sw = Matrix::from_vec(r, r, conv(rd.f64s(r * r)?));
        rd.finish()?;
        Self::new(mean, v, sw)
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
            dim: usize,
            subspace_dim: usize,
            mean: Vec<f64>,
            v: Vec<Vec<f64>>,
            sigma_w: Vec<Vec<f64>>,
        }
        let rows = |m: &Matrix<S>| m.row_iter().map(|r| r.iter().map(|v| v.as_f64()).collect()).collect();
        let j = J {
            dim: self.dim(),
            subspace_dim: self.subspace_dim(),
            mean: self.mean.iter().map(|v| v.as_f64()).collect(),
            v: rows(&self.v),
            sigma_w: rows(&self.sigma_w),
        };
        serde_json::to_string_pretty(&j).expect("plda serializes")
    }
}

impl<S: Scalar> ScoreCache<S> {
    fn new(v: &Matrix<S>, sigma_w: &Matrix<S>) -> Result<Self> {
        let ac = v.matmul(&v.transpose());
        let tot = ac.add(sigma_w);
        let tot_chol = chol_or(&tot, "PLDA total covariance")?;
        let lambda = tot_chol.inverse();
        let mut cond = tot.sub(&ac.matmul(&lambda).matmul(&ac));
        cond.symmetrize();
        let cond_chol = chol_or(&cond, "PLDA conditional covariance")?;
        let gamma = cond_chol.inverse();
        let q = lambda.sub(&gamma);
        let mut p = lambda.matmul(&ac).matmul(&gamma);
        p.symmetrize();
        let half = S::lit(0.5);
        let k = half * tot_chol.log_det() - half * cond_chol.log_det();
        Ok(Self { q, p, k })
    }
}

fn quad<S: Scalar>(m: &Matrix<S>, a: &[S], b: &[S]) -> S {
    crate::linalg::dot(a, &m.matvec(b))
}

/// Same-speaker versus different-speaker log-likelihood ratio.
pub fn plda_score<S: Scalar>(model: &PldaModel<S>, enroll: &[S], test: &[S]) -> Result<S> {
    let r = model.dim();
    for x in [enroll, test] {
        if x.len() != r {
            return Err(Error::DimensionMismatch { expected: r, got: x.len() });
        }
    }
    let a: Vec<S> = enroll.iter().zip(&model.mean).map(|(&x, &m)| x - m).collect();
    let b: Vec<S> = test.iter().zip(&model.mean).map(|(&x, &m)| x - m).collect();
    let c = &model.score;
    let half = S::lit(0.5);
    Ok(half * quad(&c.q, &a, &a) + half * quad(&c.q, &b, &b) + quad(&c.p, &a, &b) + c.k)
}

pub fn length_normalize<S: Scalar>(v: &[S]) -> Result<Vec<S>> {
    let n = norm2(v);
    if !(n > S::zero()) || !n.is_finite() {
        return Err(Error::invalid("cannot length-normalize a zero or non-finite vector"));
    }
    Ok(v.iter().map(|&x| x / n).collect())
}

/// A speaker's enrollment vector: the length-normalized mean of their
/// (length-normalized) training i-vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct PldaEnrollment<S> {
    pub label: String,
    pub ivector: Vec<S>,
}

pub fn enroll_plda<S: Scalar>(label: &str, ivectors: &[Vec<S>]) -> Result<PldaEnrollment<S>> {
    let first = ivectors.first().ok_or_else(|| Error::invalid(format!("speaker `{label}` has no enrollment i-vectors")))?;
    let mut mean = vec![S::zero(); first.len()];
    for v in ivectors {
        if v.len() != mean.len() {
            return Err(Error::DimensionMismatch { expected: mean.len(), got: v.len() });
        }
        crate::linalg::axpy(S::one(), v, &mut mean);
    }
    Ok(PldaEnrollment { label: label.to_string(), ivector: length_normalize(&mean)? })
}

pub fn identify_plda<S: Scalar>(model: &PldaModel<S>, enrolled: &[PldaEnrollment<S>], test: &[S]) -> Result<Identification<S>> {
    if enrolled.is_empty() {
        return Err(Error::invalid("no enrolled speakers"));
    }
    let scores = enrolled.iter().map(|e| plda_score(model, &e.ivector, test)).collect::<Result<Vec<S>>>()?;
    let index = argmax_first(&scores).expect("non-empty");
    Ok(Identification { index, label: enrolled[index].label.clone(), scores })
}

/// Writes enrollments as magic `CIPE`, version, count, R, then per speaker
/// the label and vector.
pub fn save_plda_enrollments<S: Scalar>(enrolled: &[PldaEnrollment<S>], path: impl AsRef<Path>) -> Result<()> {
    let mut w = LeWriter::new(b"CIPE", 1);
    w.u32(enrolled.len() as u32);
    w.u32(enrolled.first().map_or(0, |e| e.ivector.len()) as u32);
    for e in enrolled {
        w.str(&e.label);
        w.f64s(e.ivector.iter().map(|v| v.as_f64()));
    }
    w.write_to(path.as_ref())
}

pub fn load_plda_enrollments<S: Scalar>(path: impl AsRef<Path>) -> Result<Vec<PldaEnrollment<S>>> {
    let bytes = codec::read_file(path.as_ref())?;
    let mut r = LeReader::open("PLDA enrollments", &bytes, b"CIPE", 1)?;
    let n = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let label = r.str()?;
        let ivector = r.f64s(dim)?.into_iter().map(S::lit).collect();
        out.push(PldaEnrollment { label, ivector });
    }
    r.finish()?;
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct PldaTraining<S> {
    pub model: PldaModel<S>,
    /// Marginal log-likelihood of the centred training vectors before each
    /// update and after the last one.
    pub objective: Vec<S>,
    /// Smallest eigenvalue of Σ_w after each update.
    pub min_eigenvalue: Vec<S>,
}

struct Speaker<S> {
    count: usize,
    sum: Vec<S>,
}

/// EM training of the two-covariance PLDA model from labelled vectors.
pub fn train_plda<S: Scalar, L: AsRef<str>>(
    vectors: &[Vec<S>],
    labels: &[L],
    subspace_dim: usize,
    iters: usize,
    seed: u64,
) -> Result<PldaTraining<S>> {
    if vectors.len() != labels.len() {
        return Err(Error::invalid("one label per vector is required"));
    }
    let r = vectors.first().map(Vec::len).ok_or_else(|| Error::invalid("no vectors to train PLDA"))?;
    if r == 0 || vectors.iter().any(|v| v.len() != r) {
        return Err(Error::invalid("PLDA training vectors must share a nonzero dimension"));
    }
    if subspace_dim == 0 || subspace_dim > r {
        return Err(Error::invalid(format!("PLDA subspace dimension {subspace_dim} must be in 1..={r}")));
    }
    if iters == 0 {
        return Err(Error::invalid("PLDA training needs at least one iteration"));
    }
    let n_total = vectors.len();
    let nf = S::from_usize_lossy(n_total);
    let mut mean = vec![S::zero(); r];
    for v in vectors {
        crate::linalg::axpy(S::one(), v, &mut mean);
    }
    mean.iter_mut().for_each(|m| *m /= nf);

    let mut groups: BTreeMap<&str, Speaker<S>> = BTreeMap::new();
    let mut scatter = Matrix::zeros(r, r);
    for (v, l) in vectors.iter().zip(labels) {
        let y: Vec<S> = v.iter().zip(&mean).map(|(&x, &m)| x - m).collect();
        scatter.add_outer(S::one(), &y, &y);
        let g = groups.entry(l.as_ref()).or_insert_with(|| Speaker { count: 0, sum: vec![S::zero(); r] });
        g.count += 1;
        crate::linalg::axpy(S::one(), &y, &mut g.sum);
    }
    if groups.len() < 2 {
        return Err(Error::invalid("PLDA needs at least two speakers"));
    }
    if groups.values().all(|g| g.count < 2) {
        return Err(Error::invalid("PLDA needs a speaker with at least two vectors"));
    }
    let speakers: Vec<Speaker<S>> = groups.into_values().collect();

    let mut sigma_w = scatter.scale(S::one() / nf);
    regularize(&mut sigma_w);
    let total_var = sigma_w.trace() / S::from_usize_lossy(r);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = total_var.sqrt() * S::lit(0.1);
    let v0: Vec<S> = (0..r * subspace_dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            S::lit(z) * scale
        })
        .collect();
    let mut v = Matrix::from_vec(r, subspace_dim, v0);

    let mut objective = Vec::with_capacity(iters + 1);
    let mut min_eigenvalue = Vec::with_capacity(iters);
    for iter in 0..=iters {
        let (obj, a, b) = plda_estep(&v, &sigma_w, &speakers, &scatter, n_total)?;
        if !obj.is_finite() {
            return Err(Error::numerical(format!("PLDA iteration {iter}: objective is not finite")));
        }
        objective.push(obj);
        if iter == iters {
            break;
        }
        let b_chol = chol_or(&b, "PLDA latent second moment")?;
        // V = A B⁻¹, row by row since B is symmetric
        let mut v_new = Matrix::zeros(r, subspace_dim);
        for i in 0..r {
            v_new.row_mut(i).copy_from_slice(&b_chol.solve(a.row(i)));
        }
        let mut sw = scatter.sub(&v_new.matmul(&a.transpose())).scale(S::one() / nf);
        sw.symmetrize();
        regularize(&mut sw);
        if !v_new.is_finite() || !sw.is_finite() {
            return Err(Error::numerical(format!("PLDA iteration {iter}: non-finite parameters")));
        }
        min_eigenvalue.push(symmetric_eigenvalues(&sw)[0]);
        v = v_new;
        sigma_w = sw;
    }
    let model = PldaModel::new(mean, v, sigma_w)?;
    Ok(PldaTraining { model, objective, min_eigenvalue })
}

/// Adds the smallest diagonal ridge that makes `m` Cholesky-factorable; a
/// no-op when it already is.
fn regularize<S: Scalar>(m: &mut Matrix<S>) {
    if Cholesky::new(m).is_some() {
        return;
    }
    let r = m.rows();
    let mut ridge = (m.trace() / S::from_usize_lossy(r)).abs().max(S::lit(1e-12)) * S::lit(1e-9);
    loop {
        let mut t = m.clone();
        for i in 0..r {
            t[(i, i)] += ridge;
        }
        if Cholesky::new(&t).is_some() {
            log::warn!("PLDA within-class covariance regularized by {ridge}");
            *m = t;
            return;
        }
        ridge *= S::lit(10.0);
    }
}

/// Returns the objective and the sufficient statistics `A = Σ_s y_s E[h]ᵀ`
/// (R × q) and `B = Σ_s n_s E[h hᵀ]` (q × q).
fn plda_estep<S: Scalar>(
    v: &Matrix<S>,
    sigma_w: &Matrix<S>,
    speakers: &[Speaker<S>],
    scatter: &Matrix<S>,
    n_total: usize,
) -> Result<(S, Matrix<S>, Matrix<S>)> {
    let (r, q) = (v.rows(), v.cols());
    let half = S::lit(0.5);
    let w_chol = chol_or(sigma_w, "PLDA within-class covariance")?;
    let wv = w_chol.solve_matrix(v);
    let g = v.t_matmul(&wv);
    let w_inv = w_chol.inverse();
    let ln_2pi = S::TAU().ln();
    let nf = S::from_usize_lossy(n_total);
    // Σ_i log N(y_i; 0, Σ_w) from the total scatter
    let mut obj = -half * (nf * (S::from_usize_lossy(r) * ln_2pi + w_chol.log_det()) + trace_product(&w_inv, scatter));
    let mut a = Matrix::zeros(r, q);
    let mut b = Matrix::zeros(q, q);
    for s in speakers {
        let ns = S::from_usize_lossy(s.count);
        let mut m = Matrix::identity(q);
        m.add_scaled(ns, &g);
        let m_chol = chol_or(&m, "PLDA posterior precision")?;
        let c = wv.t_matvec(&s.sum);
        let h = m_chol.solve(&c);
        obj += half * crate::linalg::dot(&c, &h) - half * m_chol.log_det();
        a.add_outer(S::one(), &s.sum, &h);
        let mut hh = m_chol.inverse();
        hh.add_outer(S::one(), &h, &h);
        b.add_scaled(ns, &hh);
    }
    Ok((obj, a, b))
}

fn trace_product<S: Scalar>(a: &Matrix<S>, b: &Matrix<S>) -> S {
    a.as_slice().iter().zip(b.transpose().as_slice()).map(|(&x, &y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_normalize_cases() {
        assert_eq!(length_normalize(&[3.0f64, 4.0]).unwrap(), vec![0.6, 0.8]);
        assert!(length_normalize(&[0.0f64, 0.0]).is_err());
    }

    #[test]
    fn null_subspace_scores_zero() {
        let m = PldaModel::new(vec![0.1, 0.2], Matrix::zeros(2, 1), Matrix::from_vec(2, 2, vec![1.0, 0.3, 0.3, 2.0])).unwrap();
        assert!(plda_score(&m, &[1.0f64, -2.0], &[0.5, 3.0]).unwrap().abs() < 1e-12);
    }

    #[test]
    fn training_needs_two_speakers() {
        let v = vec![vec![1.0f64, 0.0], vec![0.0, 1.0]];
        assert!(train_plda(&v, &["a", "a"], 1, 3, 0).is_err());
        assert!(train_plda(&v, &["a", "b"], 1, 3, 0).is_err());
    }

    #[test]
    fn file_round_trip() {
        let m =
            PldaModel::new(vec![0.5, -0.25], Matrix::from_vec(2, 1, vec![1.0, 0.5]), Matrix::from_vec(2, 2, vec![1.0, 0.25, 0.25, 2.0]))
                .unwrap();
        assert_eq!(PldaModel::<f64>::from_bytes(&m.to_bytes()).unwrap(), m);
    }
}
