//! Cubic-spline interpolation of missing impulse-response channels across
//! the microphone axis.
//!
//! For every time sample the measured values define a natural cubic spline
//! over the microphone coordinate; missing channels are read off the spline.
//! Outside the measured hull the boundary segment is extended linearly. With
//! only two or three measured channels the interpolant degrades gracefully to
//! a linear or quadratic fit.

use crate::error::{Error, Result};
use crate::types::{MicMask, RirMatrix};

/// Natural cubic spline with precomputed tridiagonal factorization, reusable
/// across many right-hand sides over the same knots.
struct SplineBasis {
    knots: Vec<f64>,
    intervals: Vec<f64>,
    /// Thomas-algorithm forward-elimination coefficients for the interior
    /// moment system (natural boundary: end moments are zero).
    c_prime: Vec<f64>,
    denom: Vec<f64>,
}

impl SplineBasis {
    fn new(knots: Vec<f64>) -> Result<Self> {
        let m = knots.len();
        debug_assert!(m >= 4);
        let mut intervals = Vec::with_capacity(m - 1);
        for w in knots.windows(2) {
            let h = w[1] - w[0];
            if h <= 0.0 {
                return Err(Error::invalid(
                    "interpolation coordinates must be strictly increasing",
                ));
            }
            intervals.push(h);
        }
        // Interior unknowns M_1..M_{m−2}; system rows (h_{i−1}, 2(h_{i−1}+h_i), h_i).
        let interior = m - 2;
        let mut c_prime = vec![0.0; interior];
        let mut denom = vec![0.0; interior];
        for i in 0..interior {
            let diag = 2.0 * (intervals[i] + intervals[i + 1]);
            let d = if i == 0 { diag } else { diag - intervals[i] * c_prime[i - 1] };
            denom[i] = d;
            if i + 1 < interior {
                c_prime[i] = intervals[i + 1] / d;
            }
        }
        Ok(Self { knots, intervals, c_prime, denom })
    }

    /// Second-derivative moments at the knots for the given values.
    fn moments(&self, values: &[f64]) -> Vec<f64> {
        let m = self.knots.len();
        let interior = m - 2;
        let mut rhs = vec![0.0; interior];
        for i in 0..interior {
            let h0 = self.intervals[i];
            let h1 = self.intervals[i + 1];
            rhs[i] = 6.0 * ((values[i + 2] - values[i + 1]) / h1 - (values[i + 1] - values[i]) / h0);
        }
        // Thomas forward sweep with the precomputed coefficients.
        let mut d_prime = vec![0.0; interior];
        for i in 0..interior {
            let lower = if i == 0 { 0.0 } else { self.intervals[i] };
            let prev = if i == 0 { 0.0 } else { d_prime[i - 1] };
            d_prime[i] = (rhs[i] - lower * prev) / self.denom[i];
        }
        let mut moments = vec![0.0; m];
        if interior > 0 {
            moments[m - 2] = d_prime[interior - 1];
            for i in (0..interior - 1).rev() {
                moments[i + 1] = d_prime[i] - self.c_prime[i] * moments[i + 2];
            }
        }
        moments
    }

    /// Evaluate the spline at `x`; linear extension beyond the hull.
    fn eval(&self, values: &[f64], moments: &[f64], x: f64) -> f64 {
        let m = self.knots.len();
        if x <= self.knots[0] {
            let h = self.intervals[0];
            // s'(x_0) for a natural spline: M_0 = 0.
            let slope = (values[1] - values[0]) / h - h * moments[1] / 6.0;
            return values[0] + slope * (x - self.knots[0]);
        }
        if x >= self.knots[m - 1] {
            let h = self.intervals[m - 2];
            let slope = (values[m - 1] - values[m - 2]) / h + h * moments[m - 2] / 6.0;
            return values[m - 1] + slope * (x - self.knots[m - 1]);
        }
        let seg = match self.knots.binary_search_by(|k| k.partial_cmp(&x).unwrap()) {
            Ok(i) => i.min(m - 2),
            Err(i) => i - 1,
        };
        let h = self.intervals[seg];
        let a = (self.knots[seg + 1] - x) / h;
        let b = (x - self.knots[seg]) / h;
        a * values[seg]
            + b * values[seg + 1]
            + ((a * a * a - a) * moments[seg] + (b * b * b - b) * moments[seg + 1]) * h * h / 6.0
    }
}

fn linear_fit_eval(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let slope = (ys[1] - ys[0]) / (xs[1] - xs[0]);
    ys[0] + slope * (x - xs[0])
}

fn quadratic_fit_eval(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    // Lagrange form through three points.
    let (x0, x1, x2) = (xs[0], xs[1], xs[2]);
    let l0 = (x - x1) * (x - x2) / ((x0 - x1) * (x0 - x2));
    let l1 = (x - x0) * (x - x2) / ((x1 - x0) * (x1 - x2));
    let l2 = (x - x0) * (x - x1) / ((x2 - x0) * (x2 - x1));
    ys[0] * l0 + ys[1] * l1 + ys[2] * l2
}

/// Microphone coordinates for a uniform linear array with the given spacing.
pub fn ula_coords(n: usize, spacing: f64) -> Vec<f64> {
    (0..n).map(|i| i as f64 * spacing).collect()
}

/// Reconstruct the missing columns of `rirs` by spline interpolation along
/// `coords` (one coordinate per microphone, strictly increasing). Measured
/// columns pass through bit-identical.
pub fn sci_interpolate(rirs: &RirMatrix, mask: &MicMask, coords: &[f64]) -> Result<RirMatrix> {
    let n = rirs.num_mics();
    let k = rirs.num_samples();
    if mask.len() != n {
        return Err(Error::invalid("mask length does not match microphone count"));
    }
    if coords.len() != n {
        return Err(Error::invalid("coordinate count does not match microphone count"));
    }
    if mask.all_true() {
        return Ok(rirs.clone());
    }
    let measured = mask.measured_indices();
    let missing = mask.missing_indices();
    if measured.len() < 2 {
        return Err(Error::invalid(format!(
            "spline interpolation needs at least 2 measured channels, got {}",
            measured.len()
        )));
    }
    let xs: Vec<f64> = measured.iter().map(|&i| coords[i]).collect();
    for w in xs.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::invalid("interpolation coordinates must be strictly increasing"));
        }
    }

    let mut out = rirs.data().to_owned();
    let basis = if measured.len() >= 4 { Some(SplineBasis::new(xs.clone())?) } else { None };
    let mut values = vec![0.0; measured.len()];
    for sample in 0..k {
        for (vi, &mi) in measured.iter().enumerate() {
            values[vi] = rirs.data()[(sample, mi)];
        }
        match measured.len() {
            2 => {
                for &mi in &missing {
                    out[(sample, mi)] = linear_fit_eval(&xs, &values, coords[mi]);
                }
            }
            3 => {
                for &mi in &missing {
                    out[(sample, mi)] = quadratic_fit_eval(&xs, &values, coords[mi]);
                }
            }
            _ => {
                let basis = basis.as_ref().unwrap();
                let moments = basis.moments(&values);
                for &mi in &missing {
                    out[(sample, mi)] = basis.eval(&values, &moments, coords[mi]);
                }
            }
        }
    }
    let result = RirMatrix::new(out, rirs.sample_rate())?;
    // Measured columns must be bit-identical to the input.
    debug_assert!(measured
        .iter()
        .all(|&i| result.column(i).iter().zip(rirs.column(i).iter()).all(|(a, b)| a == b)));
    Ok(result)
}
