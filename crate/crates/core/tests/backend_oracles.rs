//! Back-end results checked against independent closed forms and against
//! data generated from known models.

use cisid_core::embed::{bw_stats_frames, extract_ivector, plda_score, train_plda, train_tv, BaumWelchStats, PldaModel, TvModel};
use cisid_core::gmm::{em_train, kmeans_init, log_likelihood, EmOptions, GmmModel};
use cisid_core::linalg::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn random_gmm(rng: &mut ChaCha8Rng, k: usize, d: usize) -> GmmModel<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let weights = raw.iter().map(|w| w / total).collect();
    let means = Matrix::from_vec(k, d, (0..k * d).map(|_| 3.0 * normal(rng)).collect());
    let vars = Matrix::from_vec(k, d, (0..k * d).map(|_| rng.random_range(0.2..2.5)).collect());
    GmmModel::new(weights, means, vars, vec![1e-6; d]).unwrap()
}

/// Average log of the mixture density, written directly from the Gaussian
/// formula without log-domain tricks.
fn direct_average_ll(m: &GmmModel<f64>, x: &Matrix<f64>) -> f64 {
    let mut total = 0.0;
    for row in x.row_iter() {
        let mut p = 0.0;
        for k in 0..m.num_components() {
            let mut dens = m.weights()[k];
            for (j, &xj) in row.iter().enumerate() {
                let mu = m.means()[(k, j)];
                let var = m.variances()[(k, j)];
                dens *= (-(xj - mu).powi(2) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
            }
            p += dens;
        }
        total += p.ln();
    }
    total / x.rows() as f64
}

#[test]
fn gmm_log_likelihood_matches_direct_density_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let m = random_gmm(&mut rng, 5, 3);
        let x = Matrix::from_vec(300, 3, (0..900).map(|_| 3.0 * normal(&mut rng)).collect());
        let ours = log_likelihood(&m, &x).unwrap();
        let direct = direct_average_ll(&m, &x);
        assert!((ours - direct).abs() < 1e-8, "{ours} vs {direct}");
    }
}

#[test]
fn scalar_ivector_closed_form() {
    let (t, var) = (0.8_f64, 1.7_f64);
    let tv = TvModel::new(Matrix::from_vec(1, 1, vec![t]), 1, 1, vec![1.0 / var], 1).unwrap();
    let w = |n: f64, f: f64| {
        let s = BaumWelchStats { n: vec![n], f: Matrix::from_vec(1, 1, vec![f]), ubm_fingerprint: 1 };
        extract_ivector(&tv, &s).unwrap()[0]
    };
    let expect = |n: f64, f: f64| (t * f / var) / (1.0 + t * t * n / var);
    assert!((w(5.0, 2.5) - expect(5.0, 2.5)).abs() < 1e-12);
    // doubling the statistics does not double the i-vector
    assert!((w(10.0, 5.0) - expect(10.0, 5.0)).abs() < 1e-12);
    assert!((w(10.0, 5.0) - 2.0 * w(5.0, 2.5)).abs() > 0.1);
    assert_eq!(w(5.0, 0.0), 0.0);
}

#[test]
fn ivector_is_linear_in_first_order_stats() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (k, d, r) = (3, 2, 4);
    let t = Matrix::from_vec(k * d, r, (0..k * d * r).map(|_| normal(&mut rng)).collect());
    let tv = TvModel::new(t, k, d, (0..k * d).map(|_| rng.random_range(0.5..2.0)).collect(), 3).unwrap();
    let n: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..20.0)).collect();
    let f = Matrix::from_vec(k, d, (0..k * d).map(|_| normal(&mut rng)).collect());
    let base = extract_ivector(&tv, &BaumWelchStats { n: n.clone(), f: f.clone(), ubm_fingerprint: 3 }).unwrap();
    let scaled = extract_ivector(&tv, &BaumWelchStats { n, f: f.scale(-2.5), ubm_fingerprint: 3 }).unwrap();
    for (a, b) in base.iter().zip(&scaled) {
        assert!((b + 2.5 * a).abs() < 1e-9);
    }
}

/// Dense LU with partial pivoting; returns (log|det|, inverse).
fn lu_logdet_inverse(a: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut inv: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let mut logdet = 0.0;
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| m[i][c].abs().partial_cmp(&m[j][c].abs()).unwrap()).unwrap();
        m.swap(c, p);
        inv.swap(c, p);
        let piv = m[c][c];
        logdet += piv.abs().ln();
        for j in 0..n {
            m[c][j] /= piv;
            inv[c][j] /= piv;
        }
        for i in 0..n {
            if i != c {
                let f = m[i][c];
                for j in 0..n {
                    m[i][j] -= f * m[c][j];
                    inv[i][j] -= f * inv[c][j];
                }
            }
        }
    }
    (logdet, inv)
}

fn gaussian_log_density(x: &[f64], cov: &[Vec<f64>]) -> f64 {
    let (logdet, inv) = lu_logdet_inverse(cov);
    let quad: f64 = (0..x.len()).map(|i| (0..x.len()).map(|j| x[i] * inv[i][j] * x[j]).sum::<f64>()).sum();
    -0.5 * (x.len() as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + quad)
}

#[test]
fn plda_llr_matches_joint_gaussian_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..10 {
        let (r, q) = (5, 2);
        let v = Matrix::from_vec(r, q, (0..r * q).map(|_| normal(&mut rng)).collect());
        let a = Matrix::from_vec(r, r, (0..r * r).map(|_| 0.5 * normal(&mut rng)).collect());
        let mut sw = a.matmul(&a.transpose());
        for i in 0..r {
            sw[(i, i)] += 0.5;
        }
        let mean: Vec<f64> = (0..r).map(|_| normal(&mut rng)).collect();
        let model = PldaModel::new(mean.clone(), v.clone(), sw.clone()).unwrap();
        let ac = v.matmul(&v.transpose());
        let tot = ac.add(&sw);
        let joint = |off: &Matrix<f64>| -> Vec<Vec<f64>> {
            (0..2 * r)
                .map(|i| (0..2 * r).map(|j| if (i < r) == (j < r) { tot[(i % r, j % r)] } else { off[(i % r, j % r)] }).collect())
                .collect()
        };
        let same = joint(&ac);
        let diff = joint(&Matrix::zeros(r, r));
        for _ in 0..5 {
            let e: Vec<f64> = (0..r).map(|_| 2.0 * normal(&mut rng)).collect();
            let t: Vec<f64> = (0..r).map(|_| 2.0 * normal(&mut rng)).collect();
            let z: Vec<f64> = e.iter().chain(&t).zip(mean.iter().chain(&mean)).map(|(x, m)| x - m).collect();
            let oracle = gaussian_log_density(&z, &same) - gaussian_log_density(&z, &diff);
            let ours = plda_score(&model, &e, &t).unwrap();
            assert!((ours - oracle).abs() < 1e-6, "{ours} vs {oracle}");
            assert!((ours - plda_score(&model, &t, &e).unwrap()).abs() < 1e-9);
        }
    }
}

/// Cosine of the largest principal angle between the column spaces of two
/// tall two-column matrices.
fn min_cos_two_columns(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
    let ortho = |m: &Matrix<f64>| -> (Vec<f64>, Vec<f64>) {
        let c0 = m.column(0);
        let n0 = c0.iter().map(|x| x * x).sum::<f64>().sqrt();
        let u0: Vec<f64> = c0.iter().map(|x| x / n0).collect();
        let c1 = m.column(1);
        let p: f64 = c1.iter().zip(&u0).map(|(x, y)| x * y).sum();
        let r1: Vec<f64> = c1.iter().zip(&u0).map(|(x, y)| x - p * y).collect();
        let n1 = r1.iter().map(|x| x * x).sum::<f64>().sqrt();
        (u0, r1.iter().map(|x| x / n1).collect())
    };
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
    let (a0, a1) = ortho(a);
    let (b0, b1) = ortho(b);
    let m = [[dot(&a0, &b0), dot(&a0, &b1)], [dot(&a1, &b0), dot(&a1, &b1)]];
    // eigenvalues of MᵀM in closed form
    let g00 = m[0][0] * m[0][0] + m[1][0] * m[1][0];
    let g11 = m[0][1] * m[0][1] + m[1][1] * m[1][1];
    let g01 = m[0][0] * m[0][1] + m[1][0] * m[1][1];
    let tr = g00 + g11;
    let det = g00 * g11 - g01 * g01;
    let lmin = 0.5 * (tr - (tr * tr - 4.0 * det).max(0.0).sqrt());
    lmin.max(0.0).sqrt().min(1.0)
}

#[test]
fn tv_training_recovers_generating_subspace() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (k, d, r) = (2, 4, 2);
    let ubm = GmmModel::new(
        vec![0.5, 0.5],
        Matrix::from_vec(k, d, vec![-10.0, -10.0, -10.0, -10.0, 10.0, 10.0, 10.0, 10.0]),
        Matrix::from_vec(k, d, vec![1.0; k * d]),
        vec![1e-3; d],
    )
    .unwrap();
    let t_true = Matrix::from_vec(k * d, r, (0..k * d * r).map(|_| normal(&mut rng)).collect());
    let stats: Vec<_> = (0..300)
        .map(|_| {
            let w: Vec<f64> = (0..r).map(|_| normal(&mut rng)).collect();
            let shift = t_true.matvec(&w);
            let mut frames = Vec::with_capacity(200 * d);
            for _ in 0..200 {
                let c = usize::from(rng.random::<bool>());
                for j in 0..d {
                    frames.push(ubm.means()[(c, j)] + shift[c * d + j] + normal(&mut rng));
                }
            }
            bw_stats_frames(&ubm, &Matrix::from_vec(200, d, frames)).unwrap()
        })
        .collect();
    let out = train_tv(&ubm, &stats, r, 20, 1).unwrap();
    let cos = min_cos_two_columns(out.model.t_matrix(), &t_true);
    let angle = cos.acos().to_degrees();
    assert!(angle < 5.0, "largest principal angle {angle:.2} degrees");
    for w in out.objective.windows(2) {
        assert!(w[1] >= w[0] - 1e-6);
    }
}

#[test]
fn tv_zero_init_is_a_fixed_point() {
    let ubm =
        GmmModel::new(vec![1.0], Matrix::from_vec(1, 2, vec![0.0, 0.0]), Matrix::from_vec(1, 2, vec![1.0, 1.0]), vec![1e-3; 2]).unwrap();
    let tv = TvModel::new(Matrix::zeros(2, 1), 1, 2, vec![1.0, 1.0], ubm.fingerprint()).unwrap();
    let s = bw_stats_frames(&ubm, &Matrix::from_vec(3, 2, vec![1.0, 2.0, -0.5, 0.3, 2.0, 1.0])).unwrap();
    // every posterior is the prior, so the M-step numerator vanishes
    assert_eq!(extract_ivector(&tv, &s).unwrap(), vec![0.0]);
    let trained = train_tv(&ubm, &[s], 1, 3, 4).unwrap();
    assert!(trained.model.t_matrix().as_slice().iter().any(|&v| v != 0.0));
}

#[test]
fn plda_training_recovers_speaker_direction() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let r = 4;
    let v_true: Vec<f64> = (0..r).map(|_| 2.0 * normal(&mut rng)).collect();
    let a = Matrix::from_vec(r, r, (0..r * r).map(|_| 0.3 * normal(&mut rng)).collect());
    let mut sw = a.matmul(&a.transpose());
    for i in 0..r {
        sw[(i, i)] += 0.3;
    }
    let chol = cisid_core::linalg::Cholesky::new(&sw).unwrap();
    let mut vectors = Vec::new();
    let mut labels = Vec::new();
    for s in 0..50 {
        let h = normal(&mut rng);
        for _ in 0..10 {
            let z: Vec<f64> = (0..r).map(|_| normal(&mut rng)).collect();
            let eps = chol.factor().matvec(&z);
            vectors.push((0..r).map(|i| 1.0 + v_true[i] * h + eps[i]).collect::<Vec<f64>>());
            labels.push(format!("s{s}"));
        }
    }
    let out = train_plda(&vectors, &labels, 1, 30, 2).unwrap();
    let v = out.model.v().column(0);
    let cos = v.iter().zip(&v_true).map(|(a, b)| a * b).sum::<f64>().abs()
        / (v.iter().map(|x| x * x).sum::<f64>().sqrt() * v_true.iter().map(|x| x * x).sum::<f64>().sqrt());
    let angle = cos.min(1.0).acos().to_degrees();
    assert!(angle < 10.0, "angle {angle:.2} degrees");
    assert!(out.min_eigenvalue.iter().all(|&e| e > 0.0));
    for w in out.objective.windows(2) {
        assert!(w[1] >= w[0] - 1e-6);
    }
}

#[test]
fn gmm_em_is_monotone_on_random_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for trial in 0..100 {
        let gen = random_gmm(&mut rng, 3, 2);
        let x = Matrix::from_vec(
            240,
            2,
            (0..240)
                .flat_map(|_| {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut c = 2;
                    for (i, &w) in gen.weights().iter().enumerate() {
                        acc += w;
                        if u < acc {
                            c = i;
                            break;
                        }
                    }
                    (0..2).map(|j| gen.means()[(c, j)] + gen.variances()[(c, j)].sqrt() * normal(&mut rng)).collect::<Vec<_>>()
                })
                .collect(),
        );
        let init = kmeans_init(&x, 4, trial, 1e-3).unwrap();
        let out = em_train(&init, &x, &EmOptions { max_iters: 25, rel_tol: 0.0 }).unwrap();
        for w in out.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-8, "trial {trial}: {} -> {}", w[0], w[1]);
        }
    }
}
