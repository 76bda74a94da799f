//! Internal FFT helpers: fast convolution and cross-correlation on real
//! signals. Thin wrappers over `realfft` used by several modules.

use num_complex::Complex64;
use realfft::RealFftPlanner;

fn next_pow2(n: usize) -> usize {
    n.next_power_of_two()
}

/// Forward real FFT of `signal` zero-padded to `n` (must be even, ≥ len).
pub(crate) fn rfft(signal: &[f64], n: usize) -> Vec<Complex64> {
    debug_assert!(n >= signal.len() && n % 2 == 0);
    let mut planner = RealFftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    let mut input = vec![0.0; n];
    input[..signal.len()].copy_from_slice(signal);
    let mut output = fft.make_output_vec();
    fft.process(&mut input, &mut output).expect("rfft");
    output
}

/// Inverse real FFT, rescaled so that `irfft(rfft(x, n), n) == x`.
pub(crate) fn irfft(spectrum: &[Complex64], n: usize) -> Vec<f64> {
    let mut planner = RealFftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(n);
    let mut input = spectrum.to_vec();
    let mut output = ifft.make_output_vec();
    ifft.process(&mut input, &mut output).expect("irfft");
    let scale = 1.0 / n as f64;
    for v in &mut output {
        *v *= scale;
    }
    output
}

/// Full linear convolution, output length `a.len() + b.len() − 1`.
pub(crate) fn fft_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let out_len = a.len() + b.len() - 1;
    let n = next_pow2(out_len).max(2);
    let fa = rfft(a, n);
    let fb = rfft(b, n);
    let prod: Vec<Complex64> = fa.iter().zip(&fb).map(|(x, y)| x * y).collect();
    let mut out = irfft(&prod, n);
    out.truncate(out_len);
    out
}

/// Lag of the absolute cross-correlation peak between `reference` and
/// `estimate`, restricted to |lag| ≤ `max_lag`. A positive lag means the
/// estimate is delayed relative to the reference.
pub(crate) fn peak_xcorr_lag(reference: &[f64], estimate: &[f64], max_lag: usize) -> isize {
    if reference.is_empty() || estimate.is_empty() {
        return 0;
    }
    let n = next_pow2(reference.len() + estimate.len()).max(2);
    let fr = rfft(reference, n);
    let fe = rfft(estimate, n);
    // c[k] = Σ_t reference[t] · estimate[t + k] for k ≥ 0 (negative k wraps).
    let prod: Vec<Complex64> = fr.iter().zip(&fe).map(|(r, e)| r.conj() * e).collect();
    let c = irfft(&prod, n);
    let mut best_lag = 0isize;
    let mut best = f64::NEG_INFINITY;
    let max_lag = max_lag as isize;
    for lag in -max_lag..=max_lag {
        let idx = lag.rem_euclid(n as isize) as usize;
        let v = c[idx].abs();
        if v > best {
            best = v;
            best_lag = lag;
        }
    }
    best_lag
}
