//! Diagonal-covariance Gaussian mixtures: k-means++ initialization, EM
//! training of a universal background model, means-only MAP adaptation and
//! closed-set identification by average log-likelihood.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{self, LeReader, LeWriter};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{fnv1a, log_sum_exp, Scalar};

/// Frames per E-step work unit. Fixed so the ordered reduction of
/// sufficient statistics does not depend on the worker count.
const ESTEP_CHUNK: usize = 1024;

/// Components with less soft occupancy than this are left unchanged by EM.
const MIN_OCCUPANCY: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct GmmModel<S> {
    weights: Vec<S>,
    means: Matrix<S>,
    variances: Matrix<S>,
    variance_floor: Vec<S>,
}

impl<S: Scalar> GmmModel<S> {
    pub fn new(weights: Vec<S>, means: Matrix<S>, variances: Matrix<S>, variance_floor: Vec<S>) -> Result<Self> {
        let (k, d) = (means.rows(), means.cols());
        if k == 0 || d == 0 {
            return Err(Error::invalid("GMM needs at least one component and dimension"));
        }
        if weights.len() != k || variances.rows() != k || variances.cols() != d || variance_floor.len() != d {
            return Err(Error::invalid("GMM parameter shapes disagree"));
        }
        if weights.iter().any(|w| !(*w >= S::zero())) {
            return Err(Error::invalid("GMM weights must be non-negative"));
        }
        let total: S = weights.iter().copied().sum();
        if (total - S::one()).abs() > S::lit(1e-6) {
            return Err(Error::invalid(format!("GMM weights sum to {total}")));
        }
        if variance_floor.iter().any(|f| !(*f > S::zero())) {
            return Err(Error::invalid("variance floor must be positive"));
        }
        if !means.is_finite() || !variances.is_finite() {
            return Err(Error::numerical("GMM parameters are not finite"));
        }
        let mut variances = variances;
        for k in 0..k {
            for (v, &f) in variances.row_mut(k).iter_mut().zip(&variance_floor) {
                *v = v.max(f);
            }
        }
        Ok(Self { weights, means, variances, variance_floor })
    }

    pub fn num_components(&self) -> usize {
        self.means.rows()
    }

    pub fn dim(&self) -> usize {
        self.means.cols()
    }

    pub fn weights(&self) -> &[S] {
        &self.weights
    }

    pub fn means(&self) -> &Matrix<S> {
        &self.means
    }

    pub fn variances(&self) -> &Matrix<S> {
        &self.variances
    }

    pub fn variance_floor(&self) -> &[S] {
        &self.variance_floor
    }

    /// Stable identifier of the parameters, used to tie adapted models and
    /// total-variability matrices to their UBM.
    pub fn fingerprint(&self) -> u64 {
        fnv1a(&self.to_bytes())
    }

    pub(crate) fn scorer(&self) -> Scorer<'_, S> {
        Scorer::new(self)
    }

    /// Component posteriors for one frame, written into `gamma`; returns the
    /// frame log-likelihood.
    pub fn posteriors(&self, x: &[S], gamma: &mut [S]) -> S {
        self.scorer().posteriors(x, gamma)
    }

    /// Versioned little-endian layout: magic `CIGM`, version, K, D, floor
    /// (D), weights (K), means (K·D), variances (K·D), all `f64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = LeWriter::new(b"CIGM", 1);
        self.write_body(&mut w);
        w.into_bytes()
    }

    fn write_body(&self, w: &mut LeWriter) {
        w.u32(self.num_components() as u32);
        w.u32(self.dim() as u32);
        w.f64s(self.variance_floor.iter().map(|v| v.as_f64()));
        w.f64s(self.weights.iter().map(|v| v.as_f64()));
        w.f64s(self.means.as_slice().iter().map(|v| v.as_f64()));
        w.f64s(self.variances.as_slice().iter().map(|v| v.as_f64()));
    }

    fn read_body(r: &mut LeReader<'_>) -> Result<Self> {
        let k = r.u32()? as usize;
        let d = r.u32()? as usize;
        let conv = |v: Vec<f64>| v.into_iter().map(S::lit).collect::<Vec<S>>();
        let floor = conv(r.f64s(d)?);
        let weights = conv(r.f64s(k)?);
        let means = Matrix::from_vec(k, d, conv(r.f64s(k * d)?));
        let variances = Matrix::from_vec(k, d, conv(r.f64s(k * d)?));
        Self::new(weights, means, variances, floor)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = LeReader::open("gmm model", bytes, b"CIGM", 1)?;
        let m = Self::read_body(&mut r)?;
        r.finish()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&codec::read_file(path.as_ref())?)
    }

    pub fn to_json(&self) -> String {
        let j = GmmJson {
            num_components: self.num_components(),
            dim: self.dim(),
            variance_floor: self.variance_floor.iter().map(|v| v.as_f64()).collect(),
            weights: self.weights.iter().map(|v| v.as_f64()).collect(),
            means: self.means.row_iter().map(|r| r.iter().map(|v| v.as_f64()).collect()).collect(),
            variances: self.variances.row_iter().map(|r| r.iter().map(|v| v.as_f64()).collect()).collect(),
        };
        serde_json::to_string_pretty(&j).expect("gmm serializes")
    }
}

#[derive(Serialize, Deserialize)]
struct GmmJson {
    num_components: usize,
    dim: usize,
    variance_floor: Vec<f64>,
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
}

/// Per-component constants for fast density evaluation.
pub(crate) struct Scorer<'a, S> {
    model: &'a GmmModel<S>,
    log_const: Vec<S>,
    inv_var: Matrix<S>,
}

impl<'a, S: Scalar> Scorer<'a, S> {
    fn new(model: &'a GmmModel<S>) -> Self {
        let d = S::from_usize_lossy(model.dim());
        let ln_2pi = (S::TAU()).ln();
        let log_const = (0..model.num_components())
            .map(|k| {
                let w = model.weights[k];
                if w > S::zero() {
                    let log_det: S = model.variances.row(k).iter().map(|v| v.ln()).sum();
                    w.ln() - S::lit(0.5) * (d * ln_2pi + log_det)
                } else {
                    S::neg_infinity()
                }
            })
            .collect();
        let inv_var = model.variances.map(|v| S::one() / v);
        Self { model, log_const, inv_var }
    }

    /// Writes `ln w_k + ln N(x; μ_k, Σ_k)` for every component into `out`.
    #[inline]
    fn joint_log(&self, x: &[S], out: &mut [S]) {
        let half = S::lit(0.5);
        for (k, o) in out.iter_mut().enumerate() {
            let c = self.log_const[k];
            if c == S::neg_infinity() {
                *o = c;
                continue;
            }
            let mu = self.model.means.row(k);
            let iv = self.inv_var.row(k);
            let mut q = S::zero();
            for ((&xi, &m), &p) in x.iter().zip(mu).zip(iv) {
                let diff = xi - m;
                q += diff * diff * p;
            }
            *o = c - half * q;
        }
    }

    #[inline]
    pub fn frame_log_likelihood(&self, x: &[S], scratch: &mut [S]) -> S {
        self.joint_log(x, scratch);
        log_sum_exp(scratch)
    }

    #[inline]
    pub fn posteriors(&self, x: &[S], gamma: &mut [S]) -> S {
        self.joint_log(x, gamma);
        let ll = log_sum_exp(gamma);
        for g in gamma.iter_mut() {
            *g = (*g - ll).exp();
        }
        ll
    }
}

/// Zeroth, first and (optionally) second-order soft-count sums.
pub(crate) struct Accum<S> {
    pub n: Vec<S>,
    pub f: Matrix<S>,
    pub s: Option<Matrix<S>>,
    pub ll: S,
}

impl<S: Scalar> Accum<S> {
    fn new(k: usize, d: usize, second: bool) -> Self {
        Self { n: vec![S::zero(); k], f: Matrix::zeros(k, d), s: second.then(|| Matrix::zeros(k, d)), ll: S::zero() }
    }

    fn merge(&mut self, o: Self) {
        for (a, b) in self.n.iter_mut().zip(o.n) {
            *a += b;
        }
        self.f.add_assign(&o.f);
        if let (Some(s), Some(os)) = (self.s.as_mut(), o.s.as_ref()) {
            s.add_assign(os);
        }
        self.ll += o.ll;
    }
}

pub(crate) fn accumulate<S: Scalar>(model: &GmmModel<S>, frames: &Matrix<S>, second: bool) -> Accum<S> {
    let (k, d) = (model.num_components(), model.dim());
    let scorer = model.scorer();
    let chunk_len = ESTEP_CHUNK * d;
    let parts: Vec<Accum<S>> = frames
        .as_slice()
        .par_chunks(chunk_len.max(1))
        .map(|chunk| {
            let mut acc = Accum::new(k, d, second);
            let mut gamma = vec![S::zero(); k];
            for x in chunk.chunks_exact(d) {
                acc.ll += scorer.posteriors(x, &mut gamma);
                for (c, &g) in gamma.iter().enumerate() {
                    if g == S::zero() {
                        continue;
                    }
                    acc.n[c] += g;
                    crate::linalg::axpy(g, x, acc.f.row_mut(c));
                    if let Some(s) = acc.s.as_mut() {
                        for (sv, &xi) in s.row_mut(c).iter_mut().zip(x) {
                            *sv += g * xi * xi;
                        }
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = Accum::new(k, d, second);
    for p in parts {
        total.merge(p);
    }
    total
}

pub(crate) fn check_dims<S: Scalar>(model: &GmmModel<S>, frames: &Matrix<S>) -> Result<()> {
    if frames.cols() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: frames.cols() });
    }
    if frames.rows() == 0 {
        return Err(Error::invalid("no frames"));
    }
    Ok(())
}

fn column_moments<S: Scalar>(frames: &Matrix<S>) -> (Vec<S>, Vec<S>) {
    let n = S::from_usize_lossy(frames.rows());
    let d = frames.cols();
    let mut mean = vec![S::zero(); d];
    for r in frames.row_iter() {
        crate::linalg::axpy(S::one(), r, &mut mean);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![S::zero(); d];
    for r in frames.row_iter() {
        for ((v, &x), &m) in var.iter_mut().zip(r).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    (mean, var)
}

/// Per-dimension variance floor: `factor` times the global variance, with
/// degenerate (near-constant) dimensions measured against the average.
pub fn variance_floor_for<S: Scalar>(frames: &Matrix<S>, factor: f64) -> Vec<S> {
    let (_, var) = column_moments(frames);
    let avg = var.iter().copied().sum::<S>() / S::from_usize_lossy(var.len().max(1));
    let f = S::lit(factor);
    var.iter().map(|&v| f * v.max(avg * S::lit(1e-3)).max(S::lit(1e-10))).collect()
}

fn sq_dist<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

fn nearest<S: Scalar>(x: &[S], centers: &Matrix<S>) -> (usize, S) {
    let mut best = (0, S::infinity());
    for (c, row) in centers.row_iter().enumerate() {
        let d = sq_dist(x, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++ seeding followed by at most 20 Lloyd iterations. Weights are
/// cluster proportions and variances the floored within-cluster variances.
pub fn kmeans_init<S: Scalar>(frames: &Matrix<S>, k: usize, seed: u64, floor_factor: f64) -> Result<GmmModel<S>> {
    let n = frames.rows();
    let d = frames.cols();
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    if n < k {
        return Err(Error::invalid(format!("{n} frames are fewer than {k} components")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = Matrix::zeros(k, d);
    centers.row_mut(0).copy_from_slice(frames.row(rng.random_range(0..n)));
    let mut dist: Vec<S> = frames.row_iter().map(|x| sq_dist(x, centers.row(0))).collect();
    for c in 1..k {
        let total: f64 = dist.iter().map(|v| v.as_f64()).sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, v) in dist.iter().enumerate() {
                target -= v.as_f64();
                if target < 0.0 {
                    idx = i;
                    break;
                }
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).copy_from_slice(frames.row(pick));
        for (dv, x) in dist.iter_mut().zip(frames.row_iter()) {
            *dv = dv.min(sq_dist(x, centers.row(c)));
        }
    }

    let mut assign = vec![usize::MAX; n];
    for _iter in 0..20 {
        let mut changed = false;
        let mut far = (0usize, S::neg_infinity());
        for (i, x) in frames.row_iter().enumerate() {
            let (c, dd) = nearest(x, &centers);
            if assign[i] != c {
                assign[i] = c;
                changed = true;
            }
            if dd > far.1 {
                far = (i, dd);
            }
        }
        if !changed {
            break;
        }
        let mut sums = Matrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (x, &c) in frames.row_iter().zip(&assign) {
            counts[c] += 1;
            crate::linalg::axpy(S::one(), x, sums.row_mut(c));
        }
        for c in 0..k {
            if counts[c] == 0 {
                // re-seed an empty cluster at the worst-fit point
                centers.row_mut(c).copy_from_slice(frames.row(far.0));
                continue;
            }
            let inv = S::one() / S::from_usize_lossy(counts[c]);
            for (m, &s) in centers.row_mut(c).iter_mut().zip(sums.row(c)) {
                *m = s * inv;
            }
        }
    }
    for (i, x) in frames.row_iter().enumerate() {
        assign[i] = nearest(x, &centers).0;
    }

    let floor = variance_floor_for(frames, floor_factor);
    let (_, global_var) = column_moments(frames);
    let mut counts = vec![0usize; k];
    let mut means = Matrix::zeros(k, d);
    for (x, &c) in frames.row_iter().zip(&assign) {
        counts[c] += 1;
        crate::linalg::axpy(S::one(), x, means.row_mut(c));
    }
    for c in 0..k {
        if counts[c] == 0 {
            means.row_mut(c).copy_from_slice(centers.row(c));
        } else {
            let inv = S::one() / S::from_usize_lossy(counts[c]);
            means.row_mut(c).iter_mut().for_each(|m| *m *= inv);
        }
    }
    let mut variances = Matrix::zeros(k, d);
    for (x, &c) in frames.row_iter().zip(&assign) {
        for ((v, &xi), &m) in variances.row_mut(c).iter_mut().zip(x).zip(means.row(c)) {
            *v += (xi - m) * (xi - m);
        }
    }
    for c in 0..k {
        let row = variances.row_mut(c);
        if counts[c] == 0 {
            row.copy_from_slice(&global_var);
        } else {
            let inv = S::one() / S::from_usize_lossy(counts[c]);
            row.iter_mut().for_each(|v| *v *= inv);
        }
        for (v, &f) in row.iter_mut().zip(&floor) {
            *v = v.max(f);
        }
    }
    let weights = counts.iter().map(|&c| S::from_usize_lossy(c) / S::from_usize_lossy(n)).collect();
    GmmModel::new(weights, means, variances, floor)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    pub max_iters: usize,
    /// Stop once the relative gain in average log-likelihood drops below this.
    pub rel_tol: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self { max_iters: 50, rel_tol: 1e-5 }
    }
}

#[derive(Clone, Debug)]
pub struct EmOutcome<S> {
    pub model: GmmModel<S>,
    /// Average per-frame log-likelihood of the model before each M-step; the
    /// last entry belongs to the returned model.
    pub log_likelihood: Vec<S>,
    pub converged: bool,
}

/// Maximum-likelihood EM for a diagonal GMM, with variances floored after
/// every M-step.
pub fn em_train<S: Scalar>(init: &GmmModel<S>, frames: &Matrix<S>, opts: &EmOptions) -> Result<EmOutcome<S>> {
    check_dims(init, frames)?;
    let (k, d) = (init.num_components(), init.dim());
    let n = frames.rows();
    if n < 10 * k {
        log::warn!("EM with {n} frames for {k} components (fewer than 10 per component)");
    }
    let mut model = init.clone();
    let mut history = Vec::with_capacity(opts.max_iters + 1);
    let mut converged = false;
    for iter in 0..=opts.max_iters {
        let acc = accumulate(&model, frames, true);
        let ll = acc.ll / S::from_usize_lossy(n);
        if !ll.is_finite() {
            return Err(Error::numerical(format!("EM iteration {iter}: average log-likelihood is {ll}")));
        }
        if let Some(&prev) = history.last() {
            let gain: S = (ll - prev) / prev.abs().max(S::min_positive_value());
            if gain.as_f64() < opts.rel_tol {
                converged = true;
            }
        }
        history.push(ll);
        if converged || iter == opts.max_iters {
            break;
        }

        let total: S = acc.n.iter().copied().sum();
        let s = acc.s.as_ref().expect("second-order stats");
        let mut weights = model.weights.clone();
        let mut means = model.means.clone();
        let mut variances = model.variances.clone();
        for c in 0..k {
            let nc = acc.n[c];
            weights[c] = nc / total;
            // a vanishing component keeps its previous mean and variance
            if !(nc > S::lit(MIN_OCCUPANCY)) {
                continue;
            }
            let inv = S::one() / nc;
            for j in 0..d {
                let mu = acc.f[(c, j)] * inv;
                let var = s[(c, j)] * inv - mu * mu;
                means[(c, j)] = mu;
                variances[(c, j)] = var.max(model.variance_floor[j]);
            }
        }
        if !means.is_finite() || !variances.is_finite() {
            return Err(Error::numerical(format!("EM iteration {iter}: non-finite parameters")));
        }
        model = GmmModel::new(weights, means, variances, model.variance_floor.clone())?;
    }
    Ok(EmOutcome { model, log_likelihood: history, converged })
}

/// A speaker's MAP-adapted copy of the UBM.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeakerModelGmm<S> {
    pub model: GmmModel<S>,
    pub label: String,
    pub ubm_fingerprint: u64,
}

/// Means-only MAP adaptation with relevance factor `relevance`.
pub fn map_adapt<S: Scalar>(ubm: &GmmModel<S>, frames: &Matrix<S>, relevance: f64, label: &str) -> Result<SpeakerModelGmm<S>> {
    check_dims(ubm, frames)?;
    if !(relevance > 0.0) {
        return Err(Error::invalid("relevance factor must be positive"));
    }
    let acc = accumulate(ubm, frames, false);
    let r = S::lit(relevance);
    let mut means = ubm.means.clone();
    for c in 0..ubm.num_components() {
        let nc = acc.n[c];
        if !(nc > S::zero()) || relevance == f64::INFINITY {
            continue;
        }
        // α·f/n + (1-α)·μ with α = n/(n+r), without dividing by a tiny n
        let inv = S::one() / (nc + r);
        for (m, &f) in means.row_mut(c).iter_mut().zip(acc.f.row(c)) {
            *m = (f + r * *m) * inv;
        }
    }
    let model =
        GmmModel { weights: ubm.weights.clone(), means, variances: ubm.variances.clone(), variance_floor: ubm.variance_floor.clone() };
    Ok(SpeakerModelGmm { model, label: label.to_string(), ubm_fingerprint: ubm.fingerprint() })
}

/// Average per-frame log-likelihood.
pub fn log_likelihood<S: Scalar>(model: &GmmModel<S>, frames: &Matrix<S>) -> Result<S> {
    check_dims(model, frames)?;
    let scorer = model.scorer();
    let k = model.num_components();
    let d = model.dim();
    let partial: Vec<S> = frames
        .as_slice()
        .par_chunks(ESTEP_CHUNK * d)
        .map(|chunk| {
            let mut scratch = vec![S::zero(); k];
            chunk.chunks_exact(d).map(|x| scorer.frame_log_likelihood(x, &mut scratch)).sum::<S>()
        })
        .collect();
    let total: S = partial.into_iter().sum();
    let ll = total / S::from_usize_lossy(frames.rows());
    if !ll.is_finite() {
        return Err(Error::numerical("log-likelihood is not finite"));
    }
    Ok(ll)
}

/// Winner of a closed-set decision together with every candidate's score.
#[derive(Clone, Debug, PartialEq)]
pub struct Identification<S> {
    pub index: usize,
    pub label: String,
    pub scores: Vec<S>,
}

/// Index of the maximum score; the earliest wins ties.
pub fn argmax_first<S: Scalar>(scores: &[S]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        match best {
            Some(b) if !(s > scores[b]) => {}
            _ => best = Some(i),
        }
    }
    best
}

pub fn identify_gmm<S: Scalar>(models: &[SpeakerModelGmm<S>], frames: &Matrix<S>) -> Result<Identification<S>> {
    let first = models.first().ok_or_else(|| Error::invalid("no enrolled speaker models"))?;
    let (k, d) = (first.model.num_components(), first.model.dim());
    if let Some(m) = models.iter().find(|m| m.model.num_components() != k || m.model.dim() != d) {
        return Err(Error::invalid(format!("speaker model `{}` has a different shape", m.label)));
    }
    let scores = models.iter().map(|m| log_likelihood(&m.model, frames)).collect::<Result<Vec<S>>>()?;
    let index = argmax_first(&scores).expect("non-empty");
    Ok(Identification { index, label: models[index].label.clone(), scores })
}

/// Writes speaker models as magic `CISM`, version, count, then per model
/// the label, UBM fingerprint and GMM body.
pub fn save_speaker_models<S: Scalar>(models: &[SpeakerModelGmm<S>], path: impl AsRef<Path>) -> Result<()> {
    let mut w = LeWriter::new(b"CISM", 1);
    w.u32(models.len() as u32);
    for m in models {
        w.str(&m.label);
        w.u64(m.ubm_fingerprint);
        m.model.write_body(&mut w);
    }
    w.write_to(path.as_ref())
}

pub fn load_speaker_models<S: Scalar>(path: impl AsRef<Path>) -> Result<Vec<SpeakerModelGmm<S>>> {
    let bytes = codec::read_file(path.as_ref())?;
    let mut r = LeReader::open("speaker models", &bytes, b"CISM", 1)?;
    let n = r.u32()? as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let label = r.str()?;
        let ubm_fingerprint = r.u64()?;
        let model = GmmModel::read_body(&mut r)?;
        out.push(SpeakerModelGmm { model, label, ubm_fingerprint });
    }
    r.finish()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn single(mean: f64, var: f64) -> GmmModel<f64> {
        GmmModel::new(vec![1.0], Matrix::from_vec(1, 1, vec![mean]), Matrix::from_vec(1, 1, vec![var]), vec![1e-6]).unwrap()
    }

    #[test]
    fn gaussian_at_its_mean() {
        let m = single(2.0, 0.5);
        let ll = log_likelihood(&m, &Matrix::from_vec(1, 1, vec![2.0])).unwrap();
        assert!((ll - (-0.5 * (std::f64::consts::TAU * 0.5).ln())).abs() < 1e-14);
    }

    #[test]
    fn duplicated_frames_leave_average_unchanged() {
        let m = single(0.3, 1.7);
        let x = Matrix::from_vec(3, 1, vec![0.1, -2.0, 4.0]);
        let xx = Matrix::from_vec(6, 1, vec![0.1, -2.0, 4.0, 0.1, -2.0, 4.0]);
        let a = log_likelihood(&m, &x).unwrap();
        let b = log_likelihood(&m, &xx).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let m = single(0.0, 1.0);
        assert!(matches!(log_likelihood(&m, &Matrix::zeros(2, 3)), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn k1_kmeans_is_global_moments() {
        let x = Matrix::from_vec(4, 2, vec![1.0, 0.0, 3.0, 0.0, 5.0, 2.0, 7.0, 2.0]);
        let m = kmeans_init(&x, 1, 9, 1e-3).unwrap();
        assert_eq!(m.means().row(0), &[4.0, 1.0]);
        assert_eq!(m.variances().row(0), &[5.0, 1.0]);
        assert!(kmeans_init(&x, 5, 9, 1e-3).is_err());
    }

    #[test]
    fn map_relevance_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ubm =
            GmmModel::new(vec![0.5, 0.5], Matrix::from_vec(2, 1, vec![-50.0, 50.0]), Matrix::from_vec(2, 1, vec![1.0, 1.0]), vec![1e-3])
                .unwrap();
        let data: Vec<f64> = (0..40)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                48.0 + z * 0.5
            })
            .collect();
        let mean = data.iter().sum::<f64>() / 40.0;
        let x = Matrix::from_vec(40, 1, data);
        // component 0 receives no data
        let a = map_adapt(&ubm, &x, 16.0, "a").unwrap();
        assert_eq!(a.model.means()[(0, 0)], -50.0);
        assert_eq!(a.model.weights(), ubm.weights());
        assert_eq!(a.model.variances(), ubm.variances());
        // r = n_k gives the midpoint
        let half = map_adapt(&ubm, &x, 40.0, "a").unwrap();
        assert!((half.model.means()[(1, 0)] - 0.5 * (50.0 + mean)).abs() < 1e-10);
        // r -> 0 recovers the data mean
        let tiny = map_adapt(&ubm, &x, 1e-9, "a").unwrap();
        assert!((tiny.model.means()[(1, 0)] - mean).abs() < 1e-6);
        // r = inf leaves the UBM untouched
        let inf = map_adapt(&ubm, &x, f64::INFINITY, "a").unwrap();
        assert_eq!(inf.model, ubm);
    }

    #[test]
    fn subnormal_occupancy_stays_finite() {
        // the far component's posterior underflows to a subnormal number
        let ubm =
            GmmModel::new(vec![0.5, 0.5], Matrix::from_vec(2, 1, vec![0.0, 38.5]), Matrix::from_vec(2, 1, vec![1.0, 1.0]), vec![1e-6])
                .unwrap();
        let frames = Matrix::from_vec(3, 1, vec![0.0, 0.1, -0.1]);
        let n = accumulate(&ubm, &frames, false).n[1];
        assert!(n > 0.0 && n < f64::MIN_POSITIVE, "{n}");
        let spk = map_adapt(&ubm, &frames, 16.0, "s").unwrap();
        assert!(spk.model.means().is_finite());
        assert!(log_likelihood(&spk.model, &frames).unwrap().is_finite());
        let em = em_train(&ubm, &frames, &EmOptions { max_iters: 3, rel_tol: 0.0 }).unwrap();
        assert!(em.model.means().is_finite() && em.model.variances().is_finite());
    }

    #[test]
    fn argmax_prefers_first_on_ties() {
        assert_eq!(argmax_first(&[1.0, 3.0, 3.0]), Some(1));
        assert_eq!(argmax_first::<f64>(&[]), None);
    }

    #[test]
    fn model_file_round_trips() {
        let m = GmmModel::new(
            vec![0.25, 0.75],
            Matrix::from_vec(2, 2, vec![1.0, 2.0, -1.0, 0.5]),
            Matrix::from_vec(2, 2, vec![0.3, 0.4, 0.5, 0.6]),
            vec![1e-3, 2e-3],
        )
        .unwrap();
        assert_eq!(GmmModel::<f64>::from_bytes(&m.to_bytes()).unwrap(), m);
        let json: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        assert_eq!(json["num_components"], 2);
    }
}
