//! Mono WAV import/export (16-bit PCM and 32-bit float).

use std::path::Path;

use crate::error::{Error, Result};

/// Read a mono WAV file as f64 samples in [−1, 1] plus its sample rate.
/// Accepts 16-bit integer PCM and 32-bit float files.
pub fn read_wav_mono(path: &Path) -> Result<(Vec<f64>, u32)> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::invalid(format!(
            "expected a mono WAV, got {} channels",
            spec.channels
        )));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::invalid(format!(
                "unsupported WAV format: {fmt:?} {bits}-bit (need 16-bit PCM or 32-bit float)"
            )))
        }
    };
    Ok((samples, spec.sample_rate))
}

/// Write a mono 32-bit float WAV.
pub fn write_wav_mono_f32(path: &Path, signal: &[f64], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &v in signal {
        writer.write_sample(v as f32)?;
    }
    writer.finalize()?;
    Ok(())
}

/// Write a mono 16-bit PCM WAV, clamping out-of-range samples.
pub fn write_wav_mono_i16(path: &Path, signal: &[f64], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &v in signal {
        let clamped = (v * 32767.0).clamp(-32768.0, 32767.0);
        writer.write_sample(clamped as i16)?;
    }
    writer.finalize()?;
    Ok(())
}
