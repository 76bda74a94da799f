//! Seeded noise generators: white, pink (−3 dB/octave), and spherically
//! isotropic diffuse multichannel noise.

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::fftutil::irfft;
use crate::roomsim::ArrayGeometry;

/// Default number of plane waves superposed for the diffuse field.
pub const DEFAULT_DIFFUSE_WAVES: usize = 256;

/// Unit-variance Gaussian white noise, deterministic per seed.
pub fn generate_white_noise(length: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..length).map(|_| rng.sample(StandardNormal)).collect()
}

/// 1/√f amplitude shaping with a floor on the lowest bins. The floor keeps
/// the variance of very long sequences bounded; it sits far below the band
/// where the −3 dB/octave slope is specified.
fn pink_shape(bin: usize, fft_len: usize) -> f64 {
    let floor_bin = (fft_len / 4096).max(1);
    1.0 / ((bin.max(floor_bin)) as f64).sqrt()
}

/// Pink noise with a −3 dB/octave power spectral density, synthesized by
/// shaping a white Gaussian spectrum with 1/√f and transforming back.
/// Normalized to unit RMS; deterministic per seed.
pub fn generate_pink_noise(length: usize, seed: u64) -> Result<Vec<f64>> {
    if length == 0 {
        return Err(Error::invalid("noise length must be ≥ 1"));
    }
    let n = length.next_power_of_two().max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bins = n / 2 + 1;
    let mut spectrum = vec![Complex64::new(0.0, 0.0); bins];
    for (k, s) in spectrum.iter_mut().enumerate().skip(1) {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        let shape = pink_shape(k, n);
        *s = Complex64::new(re * shape, im * shape);
    }
    spectrum[bins - 1].im = 0.0; // Nyquist must be real
    let mut signal = irfft(&spectrum, n);
    signal.truncate(length);
    let rms = (signal.iter().map(|v| v * v).sum::<f64>() / length as f64).sqrt();
    if rms > 0.0 {
        let inv = 1.0 / rms;
        signal.iter_mut().for_each(|v| *v *= inv);
    }
    Ok(signal)
}

/// Pink noise with the spectrum zeroed below `highpass_hz`, normalized to
/// unit RMS. Test sources live in the band where the simulated responses are
/// valid, so scenes built from them avoid meaningless sub-bass content.
pub fn generate_bandlimited_pink(
    length: usize,
    sample_rate: u32,
    highpass_hz: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if length == 0 {
        return Err(Error::invalid("noise length must be ≥ 1"));
    }
    let n = length.next_power_of_two().max(2);
    let bins = n / 2 + 1;
    let cut = (highpass_hz * n as f64 / sample_rate as f64).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spectrum = vec![Complex64::new(0.0, 0.0); bins];
    for (k, s) in spectrum.iter_mut().enumerate().skip(1) {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        let shape = if k < cut { 0.0 } else { pink_shape(k, n) };
        *s = Complex64::new(re * shape, im * shape);
    }
    spectrum[bins - 1].im = 0.0;
    let mut signal = irfft(&spectrum, n);
    signal.truncate(length);
    let rms = (signal.iter().map(|v| v * v).sum::<f64>() / length as f64).sqrt();
    if rms > 0.0 {
        let inv = 1.0 / rms;
        signal.iter_mut().for_each(|v| *v *= inv);
    }
    Ok(signal)
}

/// Spherically isotropic diffuse noise at the array: a superposition of
/// independent pink-noise plane waves from directions drawn uniformly on the
/// sphere. Pairwise coherence approaches sinc(2π·f·d/c) as the wave count
/// grows. Deterministic per seed.
pub fn generate_diffuse_noise(
    geometry: &ArrayGeometry,
    length: usize,
    sample_rate: u32,
    seed: u64,
    num_waves: usize,
) -> Result<Array2<f64>> {
    let n_mics = geometry.num_mics();
    if n_mics < 2 {
        return Err(Error::invalid("diffuse noise needs at least 2 microphones"));
    }
    if length == 0 || num_waves == 0 {
        return Err(Error::invalid("length and wave count must be ≥ 1"));
    }
    let fs = sample_rate as f64;
    let n = length.next_power_of_two().max(2);
    let bins = n / 2 + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Positions relative to the array centroid.
    let centroid = {
        let mut c = [0.0; 3];
        for p in &geometry.mic_positions {
            for (ci, pi) in c.iter_mut().zip(p) {
                *ci += pi / n_mics as f64;
            }
        }
        c
    };
    let rel: Vec<[f64; 3]> = geometry
        .mic_positions
        .iter()
        .map(|p| [p[0] - centroid[0], p[1] - centroid[1], p[2] - centroid[2]])
        .collect();

    let mut spectra = vec![vec![Complex64::new(0.0, 0.0); bins]; n_mics];
    let c_sound = crate::roomsim::SPEED_OF_SOUND;
    for _ in 0..num_waves {
        // Uniform direction on the sphere.
        let z: f64 = rng.gen_range(-1.0..=1.0);
        let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let s = (1.0 - z * z).sqrt();
        let dir = [s * phi.cos(), s * phi.sin(), z];

        // Independent pink spectrum for this wave.
        let mut wave = vec![Complex64::new(0.0, 0.0); bins];
        for (k, w) in wave.iter_mut().enumerate().skip(1) {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            let shape = pink_shape(k, n);
            *w = Complex64::new(re * shape, im * shape);
        }
        wave[bins - 1].im = 0.0;

        for (mic, r) in rel.iter().enumerate() {
            let tau = (dir[0] * r[0] + dir[1] * r[1] + dir[2] * r[2]) / c_sound;
            for (k, w) in wave.iter().enumerate() {
                let f = k as f64 * fs / n as f64;
                let phase = Complex64::from_polar(1.0, -std::f64::consts::TAU * f * tau);
                spectra[mic][k] += w * phase;
            }
        }
    }

    let mut out = Array2::zeros((n_mics, length));
    let scale = 1.0 / (num_waves as f64).sqrt();
    let mut mean_sq = 0.0;
    for (mic, spec) in spectra.iter_mut().enumerate() {
        spec[bins - 1].im = 0.0;
        let samples = irfft(spec, n);
        for t in 0..length {
            let v = samples[t] * scale;
            out[(mic, t)] = v;
            mean_sq += v * v;
        }
    }
    // Common gain to unit average RMS across channels; a per-channel gain
    // would distort the spatial coherence.
    mean_sq /= (n_mics * length) as f64;
    if mean_sq > 0.0 {
        let g = 1.0 / mean_sq.sqrt();
        out.mapv_inplace(|v| v * g);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pink_noise_is_deterministic_per_seed() {
        let a = generate_pink_noise(4096, 42).unwrap();
        let b = generate_pink_noise(4096, 42).unwrap();
        assert_eq!(a, b);
        let c = generate_pink_noise(4096, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn pink_noise_seeds_are_uncorrelated() {
        let len = 1 << 17;
        let a = generate_pink_noise(len, 1).unwrap();
        let b = generate_pink_noise(len, 2).unwrap();
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        let rho = dot / (na * nb);
        assert!(rho.abs() < 0.05, "correlation {rho}");
    }

    #[test]
    fn white_noise_is_deterministic() {
        assert_eq!(generate_white_noise(128, 7), generate_white_noise(128, 7));
    }

    #[test]
    fn diffuse_noise_validates_inputs() {
        let geom = ArrayGeometry::new(vec![[0.0, 0.0, 0.0]], [1.0, 0.0, 0.0]).unwrap();
        assert!(generate_diffuse_noise(&geom, 128, 8000, 1, 8).is_err());
    }

    #[test]
    fn colocated_mics_are_fully_coherent() {
        let geom = ArrayGeometry::new(
            vec![[1.0, 1.0, 1.0], [1.0, 1.0, 1.0]],
            [2.0, 2.0, 1.0],
        )
        .unwrap();
        let noise = generate_diffuse_noise(&geom, 2048, 8000, 3, 32).unwrap();
        for t in 0..2048 {
            assert!((noise[(0, t)] - noise[(1, t)]).abs() < 1e-9);
        }
    }
}
