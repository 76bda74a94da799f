//! Spectral and spatial properties of the noise generators, checked against
//! Welch estimates and the theoretical diffuse-field coherence.

mod common;

use common::{psd_slope_db_per_octave, welch_msc, welch_psd};
use rirkit::roomsim::noise::{generate_diffuse_noise, generate_pink_noise};
use rirkit::roomsim::ArrayGeometry;

#[test]
fn pink_noise_psd_slope_is_minus_three_db_per_octave() {
    let fs = 8000.0;
    let signal = generate_pink_noise(1 << 17, 5).unwrap();
    let (freqs, psd) = welch_psd(&signal, 4096, fs);
    let slope = psd_slope_db_per_octave(&freqs, &psd, 100.0, 3000.0);
    assert!(
        (-4.0..=-2.0).contains(&slope),
        "PSD slope {slope} dB/octave outside [-4, -2]"
    );
}

#[test]
fn diffuse_field_coherence_matches_sinc() {
    // Two microphones 4 cm apart in a spherically isotropic field: the
    // magnitude-squared coherence at 500 Hz approaches sinc²(2π·f·d/c).
    let d = 0.04;
    let fs = 8000u32;
    let geom = ArrayGeometry::new(
        vec![[1.0, 1.0, 1.0], [1.0 + d, 1.0, 1.0]],
        [3.0, 3.0, 1.0],
    )
    .unwrap();
    let noise = generate_diffuse_noise(&geom, 1 << 15, fs, 11, 256).unwrap();
    let x: Vec<f64> = noise.row(0).to_vec();
    let y: Vec<f64> = noise.row(1).to_vec();
    let (freqs, msc) = welch_msc(&x, &y, 512, fs as f64);
    let target_f = 500.0;
    let bin = freqs
        .iter()
        .enumerate()
        .min_by(|a, b| {
            (a.1 - target_f).abs().partial_cmp(&(b.1 - target_f).abs()).unwrap()
        })
        .unwrap()
        .0;
    let arg = 2.0 * std::f64::consts::PI * freqs[bin] * d / 343.0;
    let expected = (arg.sin() / arg).powi(2);
    let got = msc[bin];
    assert!(
        (got - expected).abs() < 0.15,
        "coherence at {:.0} Hz: got {got:.3}, theory {expected:.3}",
        freqs[bin]
    );
}

#[test]
fn single_plane_wave_is_fully_coherent() {
    let geom = ArrayGeometry::new(
        vec![[1.0, 1.0, 1.0], [1.04, 1.0, 1.0]],
        [3.0, 3.0, 1.0],
    )
    .unwrap();
    let noise = generate_diffuse_noise(&geom, 1 << 14, 8000, 13, 1).unwrap();
    let x: Vec<f64> = noise.row(0).to_vec();
    let y: Vec<f64> = noise.row(1).to_vec();
    let (_, msc) = welch_msc(&x, &y, 256, 8000.0);
    // Skip DC and Nyquist edges.
    for (b, &c) in msc.iter().enumerate().skip(2).take(msc.len() - 4) {
        assert!(c > 0.95, "bin {b}: coherence {c}");
    }
}
