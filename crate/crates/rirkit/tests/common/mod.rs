//! Shared test oracles: Welch spectral estimation, independent of the
//! library's FFT helpers (complex rustfft plan, different windowing path).

use num_complex::Complex64;
use rustfft::FftPlanner;

pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()))
        .collect()
}

/// Welch cross-spectral density of `x` and `y` with Hann windowing and 50%
/// overlap. Returns (frequencies in Hz, CSD per bin).
pub fn welch_csd(
    x: &[f64],
    y: &[f64],
    nperseg: usize,
    fs: f64,
) -> (Vec<f64>, Vec<Complex64>) {
    assert_eq!(x.len(), y.len());
    assert!(x.len() >= nperseg);
    let hop = nperseg / 2;
    let window = hann(nperseg);
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(nperseg);
    let bins = nperseg / 2 + 1;
    let mut acc = vec![Complex64::new(0.0, 0.0); bins];
    let mut segments = 0usize;
    let mut pos = 0;
    while pos + nperseg <= x.len() {
        let mut bx: Vec<Complex64> = (0..nperseg)
            .map(|i| Complex64::new(x[pos + i] * window[i], 0.0))
            .collect();
        let mut by: Vec<Complex64> = (0..nperseg)
            .map(|i| Complex64::new(y[pos + i] * window[i], 0.0))
            .collect();
        fft.process(&mut bx);
        fft.process(&mut by);
        for b in 0..bins {
            acc[b] += bx[b] * by[b].conj();
        }
        segments += 1;
        pos += hop;
    }
    assert!(segments > 0);
    let scale = 1.0 / segments as f64;
    for a in &mut acc {
        *a *= scale;
    }
    let freqs = (0..bins).map(|b| b as f64 * fs / nperseg as f64).collect();
    (freqs, acc)
}

/// Welch power spectral density (self-CSD, real part).
pub fn welch_psd(x: &[f64], nperseg: usize, fs: f64) -> (Vec<f64>, Vec<f64>) {
    let (freqs, csd) = welch_csd(x, x, nperseg, fs);
    (freqs, csd.into_iter().map(|c| c.re).collect())
}

/// Magnitude-squared coherence estimate |Pxy|²/(Pxx·Pyy).
pub fn welch_msc(x: &[f64], y: &[f64], nperseg: usize, fs: f64) -> (Vec<f64>, Vec<f64>) {
    let (freqs, pxy) = welch_csd(x, y, nperseg, fs);
    let (_, pxx) = welch_psd(x, nperseg, fs);
    let (_, pyy) = welch_psd(y, nperseg, fs);
    let msc = pxy
        .iter()
        .zip(pxx.iter().zip(&pyy))
        .map(|(cx, (&px, &py))| {
            if px > 0.0 && py > 0.0 {
                cx.norm_sqr() / (px * py)
            } else {
                0.0
            }
        })
        .collect();
    (freqs, msc)
}

/// Least-squares slope of `psd_db` against log2(frequency), in dB/octave,
/// over the [f_lo, f_hi] band.
pub fn psd_slope_db_per_octave(freqs: &[f64], psd: &[f64], f_lo: f64, f_hi: f64) -> f64 {
    let pts: Vec<(f64, f64)> = freqs
        .iter()
        .zip(psd)
        .filter(|(&f, &p)| f >= f_lo && f <= f_hi && p > 0.0)
        .map(|(&f, &p)| (f.log2(), 10.0 * p.log10()))
        .collect();
    assert!(pts.len() >= 2, "not enough spectral points in the band");
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|(x, _)| x).sum();
    let sy: f64 = pts.iter().map(|(_, y)| y).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| x * x).sum();
    let sxy: f64 = pts.iter().map(|(x, y)| x * y).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}
