//! FFT plumbing shared by the LTASS estimator, noise shaping, ACE and MFCC.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::scalar::Scalar;

/// Symmetric Hamming window.
pub fn hamming<S: Scalar>(n: usize) -> Vec<S> {
    if n == 1 {
        return vec![S::one()];
    }
    let denom = S::from_usize_lossy(n - 1);
    (0..n).map(|i| S::lit(0.54) - S::lit(0.46) * (S::TAU() * S::from_usize_lossy(i) / denom).cos()).collect()
}

/// Periodic Hann window (exact overlap-add at 50% hop).
pub fn hann<S: Scalar>(n: usize) -> Vec<S> {
    let denom = S::from_usize_lossy(n);
    (0..n).map(|i| S::lit(0.5) - S::lit(0.5) * (S::TAU() * S::from_usize_lossy(i) / denom).cos()).collect()
}

/// Forward FFT of a real frame of fixed size, returning the `n/2 + 1`
/// non-negative-frequency bins.
pub struct RealFft<S: Scalar> {
    fft: Arc<dyn Fft<S>>,
    buf: Vec<Complex<S>>,
    scratch: Vec<Complex<S>>,
}

impl<S: Scalar> RealFft<S> {
    pub fn new(n: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(n);
        let scratch = vec![Complex::new(S::zero(), S::zero()); fft.get_inplace_scratch_len()];
        Self { fft, buf: vec![Complex::new(S::zero(), S::zero()); n], scratch }
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn num_bins(&self) -> usize {
        self.buf.len() / 2 + 1
    }

    /// Transforms `frame` (zero-padded to the FFT size) and returns the
    /// half spectrum.
    pub fn process(&mut self, frame: &[S]) -> &[Complex<S>] {
        assert!(frame.len() <= self.buf.len(), "frame longer than FFT");
        for (b, &x) in self.buf.iter_mut().zip(frame.iter().chain(std::iter::repeat(&S::zero()))) {
            *b = Complex::new(x, S::zero());
        }
        self.fft.process_with_scratch(&mut self.buf, &mut self.scratch);
        let nb = self.num_bins();
        &self.buf[..nb]
    }

    pub fn magnitudes_into(&mut self, frame: &[S], out: &mut [S]) {
        let spec = self.process(frame);
        for (o, c) in out.iter_mut().zip(spec) {
            *o = c.norm();
        }
    }

    pub fn power_into(&mut self, frame: &[S], out: &mut [S]) {
        let spec = self.process(frame);
        for (o, c) in out.iter_mut().zip(spec) {
            *o = c.norm_sqr();
        }
    }
}

/// Linear convolution via FFT overlap-add; output length `x.len() + h.len() - 1`.
pub fn fft_convolve<S: Scalar>(x: &[S], h: &[S]) -> Vec<S> {
    if x.is_empty() || h.is_empty() {
        return Vec::new();
    }
    let block = h.len().next_power_of_two().max(64);
    let nfft = (block + h.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(nfft);
    let inv = planner.plan_fft_inverse(nfft);
    let zero = Complex::new(S::zero(), S::zero());

    let mut hspec = vec![zero; nfft];
    for (d, &v) in hspec.iter_mut().zip(h) {
        *d = Complex::new(v, S::zero());
    }
    fwd.process(&mut hspec);

    let out_len = x.len() + h.len() - 1;
    let mut out = vec![S::zero(); out_len];
    let scale = S::one() / S::from_usize_lossy(nfft);
    let mut buf = vec![zero; nfft];
    for (bi, chunk) in x.chunks(block).enumerate() {
        buf.fill(zero);
        for (d, &v) in buf.iter_mut().zip(chunk) {
            *d = Complex::new(v, S::zero());
        }
        fwd.process(&mut buf);
        for (b, &hs) in buf.iter_mut().zip(&hspec) {
            *b = *b * hs;
        }
        inv.process(&mut buf);
        let start = bi * block;
        for (k, b) in buf.iter().enumerate().take(chunk.len() + h.len() - 1) {
            out[start + k] += b.re * scale;
        }
    }
    out
}
