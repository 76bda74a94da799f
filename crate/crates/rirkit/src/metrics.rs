//! Reconstruction and enhancement metrics: NMSE, cosine distance, SI-SDR,
//! SIR improvement, energy decay curves and reverberation time.

use crate::error::{Error, Result};
use crate::fftutil::peak_xcorr_lag;
use crate::types::{MicMask, RirMatrix};

/// Lower clamp for NMSE so that perfect reconstructions stay finite.
pub const NMSE_FLOOR_DB: f64 = -120.0;

/// Clamp for SI-SDR when the residual vanishes.
pub const SI_SDR_CLAMP_DB: f64 = 60.0;

/// Normalized mean squared error in dB over the missing columns:
/// `10·log10((1/L)·Σ_i ‖ĥ_i − h_i‖² / ‖h_i‖²)`, clamped below at −120 dB.
pub fn nmse_db(truth: &RirMatrix, estimate: &RirMatrix, mask: &MicMask) -> Result<f64> {
    check_shapes(truth, estimate, mask)?;
    let missing = mask.missing_indices();
    if missing.is_empty() {
        return Err(Error::invalid("NMSE needs at least one missing column"));
    }
    let mut acc = 0.0;
    for &i in &missing {
        let h = truth.column(i);
        let h_hat = estimate.column(i);
        let denom: f64 = h.iter().map(|v| v * v).sum();
        if denom == 0.0 {
            return Err(Error::invalid(format!("ground-truth column {i} has zero norm")));
        }
        let num: f64 = h.iter().zip(h_hat.iter()).map(|(a, b)| (b - a) * (b - a)).sum();
        acc += num / denom;
    }
    let ratio = acc / missing.len() as f64;
    Ok((10.0 * ratio.log10()).max(NMSE_FLOOR_DB))
}

/// Cosine distance over missing columns plus the columns that were scored as
/// fully mismatched because the estimate was identically zero.
#[derive(Debug, Clone)]
pub struct CosineDistance {
    pub value: f64,
    pub degenerate_columns: Vec<usize>,
}

/// Mean angular mismatch `(1/L)·Σ_i (1 − (h_iᵀ ĥ_i / (‖h_i‖‖ĥ_i‖))²)` over
/// missing columns. Sign flips of a column do not change the result.
pub fn cosine_distance(
    truth: &RirMatrix,
    estimate: &RirMatrix,
    mask: &MicMask,
) -> Result<CosineDistance> {
    check_shapes(truth, estimate, mask)?;
    let missing = mask.missing_indices();
    if missing.is_empty() {
        return Err(Error::invalid("cosine distance needs at least one missing column"));
    }
    let mut acc = 0.0;
    let mut degenerate = Vec::new();
    for &i in &missing {
        let h = truth.column(i);
        let h_hat = estimate.column(i);
        let nh: f64 = h.iter().map(|v| v * v).sum::<f64>().sqrt();
        if nh == 0.0 {
            return Err(Error::invalid(format!("ground-truth column {i} has zero norm")));
        }
        let ne: f64 = h_hat.iter().map(|v| v * v).sum::<f64>().sqrt();
        if ne == 0.0 {
            degenerate.push(i);
            acc += 1.0;
            continue;
        }
        let dot: f64 = h.iter().zip(h_hat.iter()).map(|(a, b)| a * b).sum();
        let cos = dot / (nh * ne);
        acc += 1.0 - cos * cos;
    }
    Ok(CosineDistance { value: acc / missing.len() as f64, degenerate_columns: degenerate })
}

fn check_shapes(truth: &RirMatrix, estimate: &RirMatrix, mask: &MicMask) -> Result<()> {
    if truth.num_samples() != estimate.num_samples() || truth.num_mics() != estimate.num_mics() {
        return Err(Error::invalid("truth and estimate shapes differ"));
    }
    if mask.len() != truth.num_mics() {
        return Err(Error::invalid("mask length does not match microphone count"));
    }
    Ok(())
}

/// Scale-invariant SDR in dB between `reference` and `estimate`, after a
/// global integer-delay alignment found by the cross-correlation peak within
/// ±`max_shift` samples. Clamped to ±[`SI_SDR_CLAMP_DB`] .. −120 dB.
pub fn si_sdr_db(reference: &[f64], estimate: &[f64], max_shift: usize) -> Result<f64> {
    if reference.is_empty() || estimate.is_empty() {
        return Err(Error::invalid("empty signal"));
    }
    if reference.iter().all(|&v| v == 0.0) {
        return Err(Error::invalid("silent reference"));
    }
    let lag = peak_xcorr_lag(reference, estimate, max_shift);
    // Pair reference[t] with estimate[t + lag].
    let t0 = (-lag).max(0) as usize;
    let t1 = reference
        .len()
        .min((estimate.len() as isize - lag).max(0) as usize);
    if t1 <= t0 {
        return Err(Error::invalid("no overlap after alignment"));
    }
    let r = &reference[t0..t1];
    let e_start = (t0 as isize + lag) as usize;
    let e = &estimate[e_start..e_start + (t1 - t0)];

    let rr: f64 = r.iter().map(|v| v * v).sum();
    if rr == 0.0 {
        return Err(Error::invalid("silent reference after alignment"));
    }
    let re: f64 = r.iter().zip(e).map(|(a, b)| a * b).sum();
    let alpha = re / rr;
    let target_energy = alpha * alpha * rr;
    let residual_energy: f64 = e.iter().zip(r).map(|(b, a)| (b - alpha * a) * (b - alpha * a)).sum();
    if residual_energy <= target_energy * 1e-12 {
        return Ok(SI_SDR_CLAMP_DB);
    }
    if target_energy == 0.0 {
        return Ok(-120.0);
    }
    Ok((10.0 * (target_energy / residual_energy).log10()).clamp(-120.0, SI_SDR_CLAMP_DB))
}

/// SIR improvement in dB: output speech-to-noise ratio minus the input ratio
/// at the reference microphone. An identity beamformer that selects the
/// reference microphone scores exactly 0 dB.
pub fn sir_improvement_db(
    speech_out: &[f64],
    noise_out: &[f64],
    speech_in_ref: &[f64],
    noise_in_ref: &[f64],
) -> Result<f64> {
    let e = |s: &[f64], name: &str| -> Result<f64> {
        let v: f64 = s.iter().map(|x| x * x).sum();
        if v <= 0.0 {
            return Err(Error::invalid(format!("silent {name} segment")));
        }
        Ok(v)
    };
    let out_sir = 10.0 * (e(speech_out, "output speech")? / e(noise_out, "output noise")?).log10();
    let in_sir = 10.0 * (e(speech_in_ref, "input speech")? / e(noise_in_ref, "input noise")?).log10();
    Ok(out_sir - in_sir)
}

/// Schroeder backward-integrated energy decay curve in dB, normalized so the
/// first sample is 0 dB. Floored at −300 dB once the tail energy vanishes.
pub fn edc_db(rir: &[f64]) -> Result<Vec<f64>> {
    // Backward partial sums first: non-increasing by construction, and the
    // total is exactly the first entry, so the curve starts at exactly 0 dB.
    let mut tails = vec![0.0; rir.len()];
    let mut tail = 0.0;
    for (n, &v) in rir.iter().enumerate().rev() {
        tail += v * v;
        tails[n] = tail;
    }
    let total = tails[0];
    if total <= 0.0 {
        return Err(Error::invalid("EDC of an all-zero impulse response"));
    }
    Ok(tails
        .iter()
        .map(|&t| if t > 0.0 { (10.0 * (t / total).log10()).max(-300.0) } else { -300.0 })
        .collect())
}

#[derive(Debug, Clone, Copy)]
pub struct T60Estimate {
    pub seconds: f64,
    /// False when the curve never reaches −25 dB and the fit had to use a
    /// shorter range than −5..−25 dB.
    pub reliable: bool,
}

/// Reverberation time from an energy decay curve: least-squares line fit over
/// the −5..−25 dB span, extrapolated to a 60 dB decay.
pub fn estimate_t60(edc: &[f64], sample_rate: u32) -> Result<T60Estimate> {
    if sample_rate == 0 {
        return Err(Error::invalid("sample rate must be positive"));
    }
    let idx5 = edc.iter().position(|&v| v <= -5.0).ok_or_else(|| {
        Error::Numerical("EDC never reaches -5 dB; cannot estimate T60".into())
    })?;
    let (idx_end, reliable) = match edc.iter().position(|&v| v <= -25.0) {
        Some(i) => (i, true),
        None => (edc.len() - 1, false),
    };
    if idx_end <= idx5 + 1 {
        return Err(Error::Numerical("EDC fit range too short".into()));
    }
    // Fit edc[n] ≈ a + b·t over the range, t in seconds.
    let fs = sample_rate as f64;
    let n = (idx_end - idx5 + 1) as f64;
    let (mut st, mut sy, mut stt, mut sty) = (0.0, 0.0, 0.0, 0.0);
    for i in idx5..=idx_end {
        let t = i as f64 / fs;
        let y = edc[i];
        st += t;
        sy += y;
        stt += t * t;
        sty += t * y;
    }
    let denom = n * stt - st * st;
    if denom == 0.0 {
        return Err(Error::Numerical("degenerate EDC fit".into()));
    }
    let slope = (n * sty - st * sy) / denom;
    if slope >= 0.0 {
        return Err(Error::Numerical("EDC is not decaying over the fit range".into()));
    }
    Ok(T60Estimate { seconds: -60.0 / slope, reliable })
}
