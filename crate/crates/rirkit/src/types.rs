//! Domain types shared across the crate: the impulse-response matrix and the
//! per-microphone availability mask.

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// A K×N matrix of room impulse responses: one column per microphone,
/// truncated to K time samples, plus the sample rate they were captured at.
#[derive(Debug, Clone, PartialEq)]
pub struct RirMatrix {
    data: Array2<f64>,
    sample_rate: u32,
}

impl RirMatrix {
    /// Wrap a K×N matrix. All entries must be finite, K ≥ 1, N ≥ 1.
    pub fn new(data: Array2<f64>, sample_rate: u32) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::invalid(format!(
                "RIR matrix must be non-empty, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("RIR matrix contains non-finite entries"));
        }
        Ok(Self { data, sample_rate })
    }

    /// Number of time samples (K).
    pub fn num_samples(&self) -> usize {
        self.data.nrows()
    }

    /// Number of microphones (N).
    pub fn num_mics(&self) -> usize {
        self.data.ncols()
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn data(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    /// Impulse response at microphone `mic`.
    pub fn column(&self, mic: usize) -> ArrayView1<'_, f64> {
        self.data.column(mic)
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    /// Keep only the listed microphone columns (in the given order).
    pub fn select_mics(&self, mics: &[usize]) -> Result<RirMatrix> {
        for &m in mics {
            if m >= self.num_mics() {
                return Err(Error::invalid(format!(
                    "mic index {m} out of range (N = {})",
                    self.num_mics()
                )));
            }
        }
        let data = self.data.select(ndarray::Axis(1), mics);
        RirMatrix::new(data, self.sample_rate)
    }
}

/// Column-wise availability mask: `true` marks a microphone whose impulse
/// response is measured, `false` one to be reconstructed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MicMask {
    flags: Vec<bool>,
}

impl MicMask {
    /// At least one microphone must be measured.
    pub fn new(flags: Vec<bool>) -> Result<Self> {
        if flags.is_empty() {
            return Err(Error::invalid("mask must cover at least one microphone"));
        }
        if !flags.iter().any(|&f| f) {
            return Err(Error::invalid("mask must mark at least one measured microphone"));
        }
        Ok(Self { flags })
    }

    /// Mask with every microphone measured.
    pub fn all_measured(n: usize) -> Result<Self> {
        Self::new(vec![true; n])
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn is_measured(&self, mic: usize) -> bool {
        self.flags[mic]
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    /// M = number of measured microphones.
    pub fn measured_count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    /// L = N − M, number of missing microphones.
    pub fn missing_count(&self) -> usize {
        self.len() - self.measured_count()
    }

    pub fn measured_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.flags[i]).collect()
    }

    pub fn missing_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.flags[i]).collect()
    }

    pub fn all_true(&self) -> bool {
        self.flags.iter().all(|&f| f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn rir_matrix_rejects_empty_and_non_finite() {
        assert!(RirMatrix::new(Array2::zeros((0, 4)), 8000).is_err());
        assert!(RirMatrix::new(Array2::zeros((4, 0)), 8000).is_err());
        assert!(RirMatrix::new(arr2(&[[1.0, f64::NAN]]), 8000).is_err());
        assert!(RirMatrix::new(arr2(&[[1.0, 2.0]]), 0).is_err());
        let m = RirMatrix::new(arr2(&[[1.0, 2.0], [3.0, 4.0]]), 8000).unwrap();
        assert_eq!(m.num_samples(), 2);
        assert_eq!(m.num_mics(), 2);
    }

    #[test]
    fn mask_counts() {
        let m = MicMask::new(vec![true, false, true, false]).unwrap();
        assert_eq!(m.measured_count(), 2);
        assert_eq!(m.missing_count(), 2);
        assert_eq!(m.measured_indices(), vec![0, 2]);
        assert_eq!(m.missing_indices(), vec![1, 3]);
        assert!(!m.all_true());
        assert!(MicMask::new(vec![false, false]).is_err());
        assert!(MicMask::new(vec![]).is_err());
    }

    #[test]
    fn select_mics_keeps_columns() {
        let m = RirMatrix::new(arr2(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]), 8000).unwrap();
        let s = m.select_mics(&[2, 0]).unwrap();
        assert_eq!(s.column(0).to_vec(), vec![3.0, 6.0]);
        assert_eq!(s.column(1).to_vec(), vec![1.0, 4.0]);
        assert!(m.select_mics(&[3]).is_err());
    }
}
