//! Binary impulse-response archive: a fixed header (magic, version, sample
//! rate, shape, geometry) followed by a column-major little-endian f32
//! payload. The format round-trips losslessly and re-exports byte-exactly.
//!
//! Layout (all integers little-endian):
//!
//! | offset      | size  | field                          |
//! |-------------|-------|--------------------------------|
//! | 0           | 8     | magic `RIRARCH\0`              |
//! | 8           | 4     | version (u32, = 1)             |
//! | 12          | 4     | sample rate in Hz (u32)        |
//! | 16          | 4     | K, samples per response (u32)  |
//! | 20          | 4     | N, microphone count (u32)      |
//! | 24          | 24    | source position (3 × f64)      |
//! | 48          | 24·N  | mic positions (N × 3 × f64)    |
//! | 48 + 24·N   | 4·K·N | payload, column-major f32      |

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::types::RirMatrix;

const ARCHIVE_MAGIC: &[u8; 8] = b"RIRARCH\0";
const ARCHIVE_VERSION: u32 = 1;

/// An impulse-response set with the geometry it was captured at.
#[derive(Debug, Clone, PartialEq)]
pub struct RirArchive {
    pub rirs: RirMatrix,
    pub mic_positions: Vec<[f64; 3]>,
    pub source_position: [f64; 3],
}

impl RirArchive {
    pub fn new(
        rirs: RirMatrix,
        mic_positions: Vec<[f64; 3]>,
        source_position: [f64; 3],
    ) -> Result<Self> {
        if mic_positions.len() != rirs.num_mics() {
            return Err(Error::invalid(format!(
                "{} microphone positions for {} response columns",
                mic_positions.len(),
                rirs.num_mics()
            )));
        }
        Ok(Self { rirs, mic_positions, source_position })
    }
}

pub fn export_rir_archive(path: &Path, archive: &RirArchive) -> Result<()> {
    let k = archive.rirs.num_samples();
    let n = archive.rirs.num_mics();
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(ARCHIVE_MAGIC)?;
    f.write_all(&ARCHIVE_VERSION.to_le_bytes())?;
    f.write_all(&archive.rirs.sample_rate().to_le_bytes())?;
    f.write_all(&(k as u32).to_le_bytes())?;
    f.write_all(&(n as u32).to_le_bytes())?;
    for v in archive.source_position {
        f.write_all(&v.to_le_bytes())?;
    }
    for mic in &archive.mic_positions {
        for v in mic {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    for mic in 0..n {
        for s in 0..k {
            f.write_all(&(archive.rirs.data()[(s, mic)] as f32).to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

pub fn import_rir_archive(path: &Path) -> Result<RirArchive> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut offset = 0u64;
    let mut read_exact = |buf: &mut [u8], offset: &mut u64, what: &str| -> Result<()> {
        f.read_exact(buf).map_err(|_| Error::Parse {
            offset: *offset,
            msg: format!("unexpected end of file while reading {what}"),
        })?;
        *offset += buf.len() as u64;
        Ok(())
    };

    let mut magic = [0u8; 8];
    read_exact(&mut magic, &mut offset, "magic")?;
    if &magic != ARCHIVE_MAGIC {
        return Err(Error::Parse { offset: 0, msg: "bad magic: not an impulse-response archive".into() });
    }
    let mut u32buf = [0u8; 4];
    read_exact(&mut u32buf, &mut offset, "version")?;
    let version = u32::from_le_bytes(u32buf);
    if version != ARCHIVE_VERSION {
        return Err(Error::Parse {
            offset: 8,
            msg: format!("unsupported archive version {version} (supported: {ARCHIVE_VERSION})"),
        });
    }
    read_exact(&mut u32buf, &mut offset, "sample rate")?;
    let fs = u32::from_le_bytes(u32buf);
    read_exact(&mut u32buf, &mut offset, "sample count")?;
    let k = u32::from_le_bytes(u32buf) as usize;
    read_exact(&mut u32buf, &mut offset, "microphone count")?;
    let n = u32::from_le_bytes(u32buf) as usize;
    if k == 0 || n == 0 {
        return Err(Error::Parse { offset: 16, msg: format!("empty shape {k}×{n}") });
    }

    let mut f64buf = [0u8; 8];
    let mut source = [0.0; 3];
    for s in &mut source {
        read_exact(&mut f64buf, &mut offset, "source position")?;
        *s = f64::from_le_bytes(f64buf);
    }
    let mut mics = Vec::with_capacity(n);
    for _ in 0..n {
        let mut p = [0.0; 3];
        for c in &mut p {
            read_exact(&mut f64buf, &mut offset, "microphone positions")?;
            *c = f64::from_le_bytes(f64buf);
        }
        mics.push(p);
    }

    let expected_payload = 4 * k * n;
    let mut payload = vec![0u8; expected_payload];
    f.read_exact(&mut payload).map_err(|_| Error::Parse {
        offset,
        msg: format!(
            "payload truncated: expected {expected_payload} bytes ({k}×{n} column-major f32)"
        ),
    })?;
    offset += expected_payload as u64;
    let mut trailing = Vec::new();
    f.read_to_end(&mut trailing)?;
    if !trailing.is_empty() {
        return Err(Error::Parse {
            offset,
            msg: format!("{} trailing bytes after the payload", trailing.len()),
        });
    }

    let mut data = Array2::zeros((k, n));
    for mic in 0..n {
        for s in 0..k {
            let i = 4 * (mic * k + s);
            let v = f32::from_le_bytes([payload[i], payload[i + 1], payload[i + 2], payload[i + 3]]);
            data[(s, mic)] = v as f64;
        }
    }
    RirArchive::new(RirMatrix::new(data, fs)?, mics, source)
}
