//! i-vector / PLDA back end: Baum-Welch statistics against a UBM,
//! total-variability training and i-vector extraction, length
//! normalization, and two-covariance PLDA training and scoring.

mod plda;
mod stats;
mod tv;

pub use plda::{
    enroll_plda, identify_plda, length_normalize, load_plda_enrollments, plda_score, save_plda_enrollments, train_plda, PldaEnrollment,
    PldaModel, PldaTraining,
};
pub use stats::{bw_stats, bw_stats_batch, bw_stats_frames, BaumWelchStats};
pub use tv::{extract_ivector, extract_ivectors, train_tv, TvModel, TvTraining};
