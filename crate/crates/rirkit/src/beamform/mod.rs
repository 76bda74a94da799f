//! Frequency-domain array processing: acoustic-transfer-function steering,
//! noise covariance estimation, MVDR weights, beamformer application, and the
//! null-projection alignment distance between two sets of impulse responses.

pub mod linalg;
pub mod stft;

use ndarray::{Array1, Array2, ArrayView2};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::types::RirMatrix;
pub use stft::{istft, stft, stft_multi, StftConfig};

/// Relative steering-norm threshold below which a bin is zeroed out.
pub const STEERING_NORM_FLOOR: f64 = 1e-8;

/// Default diagonal-loading factor for noise covariance estimates.
pub const DEFAULT_DIAGONAL_LOADING: f64 = 1e-4;

/// Per-frequency-bin complex vectors over the microphone channels
/// (steering vectors, microphone spectra).
#[derive(Debug, Clone)]
pub struct SpectralField {
    /// bins × channels.
    data: Array2<Complex64>,
    pub fft_size: usize,
    pub sample_rate: u32,
}

impl SpectralField {
    pub fn new(data: Array2<Complex64>, fft_size: usize, sample_rate: u32) -> Result<Self> {
        if data.nrows() != fft_size / 2 + 1 {
            return Err(Error::invalid("bin count must be fft_size/2 + 1"));
        }
        if data.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::invalid("spectral field contains non-finite entries"));
        }
        Ok(Self { data, fft_size, sample_rate })
    }

    pub fn bins(&self) -> usize {
        self.data.nrows()
    }

    pub fn channels(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> ArrayView2<'_, Complex64> {
        self.data.view()
    }

    pub fn bin_frequency_hz(&self, bin: usize) -> f64 {
        bin as f64 * self.sample_rate as f64 / self.fft_size as f64
    }

    /// Steering vector at one bin.
    pub fn at_bin(&self, bin: usize) -> Array1<Complex64> {
        self.data.row(bin).to_owned()
    }

    /// Zero the steering outside [lo_hz, hi_hz]. Downstream weight solvers
    /// leave those bins silent, confining the beamformer to frequencies
    /// where the transfer functions are meaningful.
    pub fn restrict_band(&mut self, lo_hz: f64, hi_hz: f64) {
        for b in 0..self.bins() {
            let f = self.bin_frequency_hz(b);
            if f < lo_hz || f > hi_hz {
                self.data.row_mut(b).fill(Complex64::new(0.0, 0.0));
            }
        }
    }
}

/// Full acoustic transfer functions: the DFT of each impulse-response column
/// on an `fft_size`-point grid. No normalization is applied.
///
/// Returns `truncated = true` when the responses were longer than the FFT and
/// had to be cut.
pub fn atf_steering(rirs: &RirMatrix, fft_size: usize) -> Result<(SpectralField, bool)> {
    if fft_size < 2 || fft_size % 2 != 0 {
        return Err(Error::invalid("fft size must be even and ≥ 2"));
    }
    let k = rirs.num_samples().min(fft_size);
    let truncated = rirs.num_samples() > fft_size;
    let bins = fft_size / 2 + 1;
    let mut data = Array2::zeros((bins, rirs.num_mics()));
    for mic in 0..rirs.num_mics() {
        let col: Vec<f64> = rirs.column(mic).iter().take(k).copied().collect();
        let spec = crate::fftutil::rfft(&col, fft_size);
        for b in 0..bins {
            data[(b, mic)] = spec[b];
        }
    }
    Ok((SpectralField::new(data, fft_size, rirs.sample_rate())?, truncated))
}

/// Full-length transfer functions evaluated at the STFT grid's normalized
/// frequencies. The whole response contributes to every bin regardless of the
/// STFT frame length: d(b) = Σ_k h[k]·e^{−j2π·b·k/fft_size}.
pub fn steering_for_stft_bins(rirs: &RirMatrix, cfg: &StftConfig) -> Result<SpectralField> {
    let bins = cfg.bins();
    let k = rirs.num_samples();
    let n = rirs.num_mics();
    let mut data = Array2::zeros((bins, n));
    for b in 0..bins {
        let omega = -2.0 * std::f64::consts::PI * b as f64 / cfg.fft_size as f64;
        // Recurrence for e^{jωk} keeps this O(K) per bin.
        let step = Complex64::from_polar(1.0, omega);
        for mic in 0..n {
            let col = rirs.column(mic);
            let mut acc = Complex64::new(0.0, 0.0);
            let mut phase = Complex64::new(1.0, 0.0);
            for ki in 0..k {
                acc += phase * col[ki];
                phase *= step;
            }
            data[(b, mic)] = acc;
        }
    }
    SpectralField::new(data, cfg.fft_size, rirs.sample_rate())
}

/// Per-bin N×N Hermitian noise covariance matrices.
#[derive(Debug, Clone)]
pub struct NoiseCovariance {
    mats: Vec<Array2<Complex64>>,
    pub loading: f64,
}

impl NoiseCovariance {
    /// Wrap explicit per-bin matrices (for synthetic covariances in tests
    /// and analysis code). Matrices must be square, equally sized, and
    /// Hermitian to 1e-10.
    pub fn from_matrices(mats: Vec<Array2<Complex64>>) -> Result<Self> {
        let n = mats.first().map_or(0, |m| m.nrows());
        if n == 0 {
            return Err(Error::invalid("no covariance matrices"));
        }
        for (b, m) in mats.iter().enumerate() {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::invalid(format!("covariance at bin {b} is not {n}×{n}")));
            }
            for i in 0..n {
                for j in 0..n {
                    if (m[(i, j)] - m[(j, i)].conj()).norm() > 1e-10 {
                        return Err(Error::invalid(format!(
                            "covariance at bin {b} is not Hermitian at ({i}, {j})"
                        )));
                    }
                }
            }
        }
        Ok(Self { mats, loading: 0.0 })
    }

    pub fn bins(&self) -> usize {
        self.mats.len()
    }

    pub fn channels(&self) -> usize {
        self.mats.first().map_or(0, |m| m.nrows())
    }

    pub fn at_bin(&self, bin: usize) -> &Array2<Complex64> {
        &self.mats[bin]
    }
}

/// Sample covariance from noise-only STFT frames plus diagonal loading
/// `δ·tr(Φ)/N·I`, which keeps the per-bin matrices positive definite.
///
/// `noise_stft` holds one frames×bins spectrogram per channel.
pub fn estimate_noise_cov(
    noise_stft: &[Array2<Complex64>],
    loading: f64,
) -> Result<NoiseCovariance> {
    let n = noise_stft.len();
    if n == 0 {
        return Err(Error::invalid("no channels"));
    }
    let frames = noise_stft[0].nrows();
    let bins = noise_stft[0].ncols();
    if frames == 0 {
        return Err(Error::invalid("no noise-only frames to average"));
    }
    if noise_stft.iter().any(|s| s.dim() != (frames, bins)) {
        return Err(Error::invalid("channel spectrograms have mismatched shapes"));
    }
    let mut mats = Vec::with_capacity(bins);
    for b in 0..bins {
        let mut phi: Array2<Complex64> = Array2::zeros((n, n));
        for t in 0..frames {
            for i in 0..n {
                let yi = noise_stft[i][(t, b)];
                for j in 0..n {
                    let yj = noise_stft[j][(t, b)];
                    phi[(i, j)] += yi * yj.conj();
                }
            }
        }
        let scale = 1.0 / frames as f64;
        phi.mapv_inplace(|c| c * scale);
        // Force exact Hermitian symmetry before loading.
        for i in 0..n {
            phi[(i, i)] = Complex64::new(phi[(i, i)].re, 0.0);
            for j in (i + 1)..n {
                let avg = 0.5 * (phi[(i, j)] + phi[(j, i)].conj());
                phi[(i, j)] = avg;
                phi[(j, i)] = avg.conj();
            }
        }
        let trace: f64 = (0..n).map(|i| phi[(i, i)].re).sum();
        let delta = loading * trace.max(f64::MIN_POSITIVE) / n as f64;
        for i in 0..n {
            phi[(i, i)] += Complex64::new(delta, 0.0);
        }
        mats.push(phi);
    }
    Ok(NoiseCovariance { mats, loading })
}

/// Per-bin beamformer weights. `zeroed_bins` lists bins whose steering norm
/// fell under the floor and whose weights were forced to zero.
#[derive(Debug, Clone)]
pub struct BeamWeights {
    /// bins × channels.
    data: Array2<Complex64>,
    pub zeroed_bins: Vec<usize>,
}

impl BeamWeights {
    pub fn bins(&self) -> usize {
        self.data.nrows()
    }

    pub fn channels(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> ArrayView2<'_, Complex64> {
        self.data.view()
    }

    pub fn at_bin(&self, bin: usize) -> Array1<Complex64> {
        self.data.row(bin).to_owned()
    }

    /// Selector weights: pass `channel` through unchanged at every bin.
    pub fn selector(bins: usize, channels: usize, channel: usize) -> Self {
        let mut data = Array2::zeros((bins, channels));
        for b in 0..bins {
            data[(b, channel)] = Complex64::new(1.0, 0.0);
        }
        BeamWeights { data, zeroed_bins: Vec::new() }
    }
}

/// Minimum-variance distortionless weights `w = Φ⁻¹d / (dᴴΦ⁻¹d)` per bin,
/// computed through a Hermitian solve rather than an explicit inverse.
pub fn mvdr_weights(steering: &SpectralField, cov: &NoiseCovariance) -> Result<BeamWeights> {
    let bins = steering.bins();
    let n = steering.channels();
    if cov.bins() != bins {
        return Err(Error::invalid("steering and covariance bin counts differ"));
    }
    if cov.channels() != n {
        return Err(Error::invalid("steering and covariance channel counts differ"));
    }
    let max_norm = (0..bins)
        .map(|b| steering.data.row(b).iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt())
        .fold(0.0f64, f64::max);
    let mut data = Array2::zeros((bins, n));
    let mut zeroed = Vec::new();
    for b in 0..bins {
        let d = steering.at_bin(b);
        let norm = d.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if norm <= STEERING_NORM_FLOOR * max_norm || norm == 0.0 {
            zeroed.push(b);
            continue;
        }
        let phi_inv_d = linalg::solve_hermitian(cov.at_bin(b), &d)?;
        let quad: Complex64 = d.iter().zip(phi_inv_d.iter()).map(|(di, xi)| di.conj() * xi).sum();
        if quad.norm() == 0.0 {
            return Err(Error::Numerical(format!("degenerate MVDR denominator at bin {b}")));
        }
        for i in 0..n {
            data[(b, i)] = phi_inv_d[i] / quad;
        }
    }
    Ok(BeamWeights { data, zeroed_bins: zeroed })
}

/// Apply per-bin weights to a multichannel STFT, `out(t,f) = w(f)ᴴ·y(t,f)`,
/// and synthesize back to a time signal of `out_len` samples.
pub fn apply_beamformer(
    weights: &BeamWeights,
    channel_stfts: &[Array2<Complex64>],
    cfg: &StftConfig,
    out_len: usize,
) -> Result<Vec<f64>> {
    let n = channel_stfts.len();
    if n == 0 {
        return Err(Error::invalid("no channels"));
    }
    if weights.channels() != n {
        return Err(Error::invalid(format!(
            "weights cover {} channels, input has {n}",
            weights.channels()
        )));
    }
    let (frames, bins) = channel_stfts[0].dim();
    if bins != weights.bins() || bins != cfg.bins() {
        return Err(Error::invalid("bin count mismatch between weights, input, and config"));
    }
    if channel_stfts.iter().any(|s| s.dim() != (frames, bins)) {
        return Err(Error::invalid("channel spectrograms have mismatched shapes"));
    }
    let mut out = Array2::zeros((frames, bins));
    for t in 0..frames {
        for b in 0..bins {
            let mut acc = Complex64::new(0.0, 0.0);
            for (i, ch) in channel_stfts.iter().enumerate() {
                acc += weights.data[(b, i)].conj() * ch[(t, b)];
            }
            out[(t, b)] = acc;
        }
    }
    Ok(istft(&out.view(), cfg, out_len))
}

/// Null-projection alignment between a reference and an estimated set of
/// impulse responses, per bin and summed.
#[derive(Debug, Clone)]
pub struct NullProjection {
    /// Σ_f ‖(I − ĥĥᴴ/‖ĥ‖²)·h‖ / ‖h‖ over evaluated bins.
    pub dist_sum: f64,
    /// The same sum divided by the number of evaluated bins.
    pub dist_mean: f64,
    pub per_bin: Vec<f64>,
    pub skipped_bins: Vec<usize>,
}

/// Projects the true per-bin response onto the orthogonal complement of the
/// estimate; perfectly aligned responses (up to any per-bin complex scale)
/// give zero. DC is excluded: measured responses are unreliable there.
pub fn null_projection_dist(
    truth: &RirMatrix,
    estimate: &RirMatrix,
    fft_size: usize,
) -> Result<NullProjection> {
    if truth.num_samples() != estimate.num_samples() || truth.num_mics() != estimate.num_mics() {
        return Err(Error::invalid("truth and estimate shapes differ"));
    }
    let (h_true, _) = atf_steering(truth, fft_size)?;
    let (h_est, _) = atf_steering(estimate, fft_size)?;
    let bins = h_true.bins();
    let mut per_bin = Vec::with_capacity(bins.saturating_sub(1));
    let mut skipped = Vec::new();
    let mut sum = 0.0;
    let mut evaluated = 0usize;
    for b in 1..bins {
        let h = h_true.at_bin(b);
        let e = h_est.at_bin(b);
        let nh2: f64 = h.iter().map(|c| c.norm_sqr()).sum();
        let ne2: f64 = e.iter().map(|c| c.norm_sqr()).sum();
        if nh2 == 0.0 || ne2 == 0.0 {
            skipped.push(b);
            per_bin.push(f64::NAN);
            continue;
        }
        // d = h − ĥ·(ĥᴴh)/‖ĥ‖²  — the residual after projecting onto ĥ.
        let proj: Complex64 = e.iter().zip(h.iter()).map(|(ei, hi)| ei.conj() * hi).sum();
        let coeff = proj / ne2;
        let mut resid2 = 0.0;
        for (hi, ei) in h.iter().zip(e.iter()) {
            let d = hi - coeff * ei;
            resid2 += d.norm_sqr();
        }
        let term = (resid2 / nh2).sqrt();
        per_bin.push(term);
        sum += term;
        evaluated += 1;
    }
    if evaluated == 0 {
        return Err(Error::Numerical("all bins degenerate in null-projection distance".into()));
    }
    Ok(NullProjection {
        dist_sum: sum,
        dist_mean: sum / evaluated as f64,
        per_bin,
        skipped_bins: skipped,
    })
}
