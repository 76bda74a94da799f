//! Short-time Fourier analysis/synthesis with a sqrt-Hann window pair.
//!
//! Analysis and synthesis both apply the square-root Hann window; frames are
//! recombined by weighted overlap-add with per-sample normalization by the
//! accumulated squared window, which makes the round trip exact on every
//! covered sample when the spectra are untouched.

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use realfft::RealFftPlanner;

use crate::error::{Error, Result};

/// STFT parameters. Constructing one checks the overlap-add constraint:
/// the hop must divide the frame length with at least 2× overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub fft_size: usize,
}

impl StftConfig {
    pub fn new(frame_len: usize, hop: usize, fft_size: usize) -> Result<Self> {
        if frame_len < 2 || frame_len % 2 != 0 {
            return Err(Error::invalid("frame length must be even and ≥ 2"));
        }
        if hop == 0 || frame_len % hop != 0 || frame_len / hop < 2 {
            return Err(Error::invalid(format!(
                "hop {hop} breaks overlap-add for frame length {frame_len}: \
                 the hop must divide the frame with ratio ≥ 2"
            )));
        }
        if fft_size < frame_len || fft_size % 2 != 0 {
            return Err(Error::invalid("fft size must be even and ≥ frame length"));
        }
        Ok(Self { frame_len, hop, fft_size })
    }

    /// 512-sample frames, 256 hop, 512-point FFT — the default at 8 kHz.
    pub fn default_8khz() -> Self {
        Self { frame_len: 512, hop: 256, fft_size: 512 }
    }

    /// Number of positive-frequency bins, `fft_size/2 + 1`.
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn num_frames(&self, signal_len: usize) -> usize {
        if signal_len < self.frame_len {
            0
        } else {
            (signal_len - self.frame_len) / self.hop + 1
        }
    }

    /// Periodic sqrt-Hann analysis/synthesis window.
    pub fn window(&self) -> Vec<f64> {
        let n = self.frame_len as f64;
        (0..self.frame_len)
            .map(|i| {
                let hann = 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n).cos());
                hann.sqrt()
            })
            .collect()
    }
}

/// Forward STFT: rows are frames, columns are frequency bins.
pub fn stft(signal: &[f64], cfg: &StftConfig) -> Array2<Complex64> {
    let n_frames = cfg.num_frames(signal.len());
    let mut planner = RealFftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(cfg.fft_size);
    let window = cfg.window();
    let mut out = Array2::zeros((n_frames, cfg.bins()));
    let mut input = vec![0.0; cfg.fft_size];
    let mut spectrum = fft.make_output_vec();
    for f in 0..n_frames {
        let start = f * cfg.hop;
        input.fill(0.0);
        for i in 0..cfg.frame_len {
            input[i] = signal[start + i] * window[i];
        }
        fft.process(&mut input, &mut spectrum).expect("stft fft");
        for (b, &v) in spectrum.iter().enumerate() {
            out[(f, b)] = v;
        }
    }
    out
}

/// Inverse STFT by weighted overlap-add, trimmed or zero-extended to
/// `out_len` samples.
pub fn istft(spec: &ArrayView2<Complex64>, cfg: &StftConfig, out_len: usize) -> Vec<f64> {
    let n_frames = spec.nrows();
    let mut planner = RealFftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(cfg.fft_size);
    let window = cfg.window();
    let total = if n_frames == 0 { 0 } else { (n_frames - 1) * cfg.hop + cfg.frame_len };
    let mut acc = vec![0.0; total.max(out_len)];
    let mut norm = vec![0.0; total.max(out_len)];
    let mut spectrum = ifft.make_input_vec();
    let mut frame = ifft.make_output_vec();
    let scale = 1.0 / cfg.fft_size as f64;
    for f in 0..n_frames {
        for b in 0..cfg.bins() {
            spectrum[b] = spec[(f, b)];
        }
        // realfft's inverse requires zero imaginary parts at DC/Nyquist.
        spectrum[0].im = 0.0;
        let last = cfg.bins() - 1;
        spectrum[last].im = 0.0;
        ifft.process(&mut spectrum, &mut frame).expect("istft fft");
        let start = f * cfg.hop;
        for i in 0..cfg.frame_len {
            acc[start + i] += frame[i] * scale * window[i];
            norm[start + i] += window[i] * window[i];
        }
    }
    let mut out = vec![0.0; out_len];
    for (i, o) in out.iter_mut().enumerate() {
        if i < acc.len() && norm[i] > 1e-12 {
            *o = acc[i] / norm[i];
        }
    }
    out
}

/// Per-channel forward STFT of an N×T multichannel signal.
pub fn stft_multi(signals: &ArrayView2<f64>, cfg: &StftConfig) -> Vec<Array2<Complex64>> {
    (0..signals.nrows())
        .map(|ch| {
            let row: Vec<f64> = signals.row(ch).to_vec();
            stft(&row, cfg)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn config_rejects_non_cola_hops() {
        assert!(StftConfig::new(512, 512, 512).is_err()); // no overlap
        assert!(StftConfig::new(512, 384, 512).is_err()); // hop does not divide
        assert!(StftConfig::new(512, 0, 512).is_err());
        assert!(StftConfig::new(512, 256, 256).is_err()); // fft < frame
        assert!(StftConfig::new(512, 256, 512).is_ok());
        assert!(StftConfig::new(512, 128, 1024).is_ok());
    }

    #[test]
    fn sinusoid_at_bin_center_concentrates_energy() {
        // The sqrt-Hann analysis window spreads a bin-centered sinusoid over
        // its mainlobe; all but a sliver of energy stays within ±1 bin.
        let cfg = StftConfig::new(256, 128, 256).unwrap();
        let bin = 32usize;
        let freq = bin as f64 / cfg.fft_size as f64;
        let signal: Vec<f64> =
            (0..2048).map(|n| (2.0 * std::f64::consts::PI * freq * n as f64).sin()).collect();
        let spec = stft(&signal, &cfg);
        let frame = spec.row(5);
        let total: f64 = frame.iter().map(|c| c.norm_sqr()).sum();
        let near_bin: f64 = (bin - 1..=bin + 1).map(|b| frame[b].norm_sqr()).sum();
        assert!(near_bin / total > 0.99, "ratio {}", near_bin / total);
        let peak = frame
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm_sqr().partial_cmp(&b.1.norm_sqr()).unwrap())
            .unwrap()
            .0;
        assert_eq!(peak, bin);
    }

    #[test]
    fn round_trip_is_exact_on_interior() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let signal: Vec<f64> = (0..4000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for (frame, hop, fft) in [(256, 128, 256), (512, 256, 512), (256, 64, 512)] {
            let cfg = StftConfig::new(frame, hop, fft).unwrap();
            let spec = stft(&signal, &cfg);
            let back = istft(&spec.view(), &cfg, signal.len());
            // Interior: edge frames excluded (the tapered window leaves the
            // first and last frame's leading/trailing samples underweighted).
            let last_covered = (spec.nrows() - 1) * cfg.hop + cfg.frame_len;
            for i in cfg.frame_len..last_covered - cfg.frame_len {
                let err = (back[i] - signal[i]).abs();
                assert!(
                    err < 1e-10 * signal[i].abs().max(1.0),
                    "cfg ({frame},{hop},{fft}) sample {i}: err {err}"
                );
            }
        }
    }

    #[test]
    fn zero_signal_gives_zero_frames() {
        let cfg = StftConfig::default_8khz();
        let spec = stft(&vec![0.0; 4096], &cfg);
        assert!(spec.iter().all(|c| c.norm() == 0.0));
    }
}
