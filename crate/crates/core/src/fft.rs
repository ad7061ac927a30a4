//! Thread-local FFT plan cache and frequency-grid helpers.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

pub(crate) fn forward_plan(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(len))
}

pub(crate) fn inverse_plan(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(len))
}

/// In-place forward transform, unnormalized.
pub(crate) fn fft(buf: &mut [Complex64]) {
    if buf.len() > 1 {
        forward_plan(buf.len()).process(buf);
    }
}

/// In-place inverse transform including the 1/N factor.
pub(crate) fn ifft(buf: &mut [Complex64]) {
    let n = buf.len();
    if n > 1 {
        inverse_plan(n).process(buf);
        let scale = 1.0 / n as f64;
        buf.iter_mut().for_each(|x| *x *= scale);
    }
}

/// Frequency of DFT bin `k` for an `n`-point transform at `sample_rate`,
/// in the same unit as `sample_rate` (numpy `fftfreq` ordering).
#[inline]
pub fn bin_frequency(k: usize, n: usize, sample_rate: f64) -> f64 {
    let signed = if k <= (n - 1) / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    };
    signed * sample_rate / n as f64
}

/// All bin frequencies of an `n`-point transform.
pub fn fftfreq(n: usize, sample_rate: f64) -> Vec<f64> {
    (0..n).map(|k| bin_frequency(k, n, sample_rate)).collect()
}

/// Multiplies the spectrum of `data` by `response(f)` and transforms back.
pub(crate) fn filter_in_place<F>(data: &mut [Complex64], sample_rate: f64, response: F)
where
    F: Fn(f64) -> Complex64,
{
    let n = data.len();
    if n == 0 {
        return;
    }
    fft(data);
    for (k, x) in data.iter_mut().enumerate() {
        *x *= response(bin_frequency(k, n, sample_rate));
    }
    ifft(data);
}
