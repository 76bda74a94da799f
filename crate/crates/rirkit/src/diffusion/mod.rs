//! Denoising-diffusion machinery: noise schedules, the forward (noising) and
//! reverse (denoising) processes, masked inpainting with per-step consistency
//! re-injection, and the end-to-end reconstruction of missing impulse
//! response channels.

pub mod model;
pub mod train;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::patch::{
    denormalize_patch, pad_source_index, tile_patches, untile_patches, PadPolicy, PatchGrid,
    PatchScale,
};
use crate::types::{MicMask, RirMatrix};
pub use model::{DenoiserConfig, DenoiserModel};
pub use train::{train_denoiser, TrainConfig, TrainReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

impl ScheduleKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScheduleKind::Linear => "linear",
            ScheduleKind::Cosine => "cosine",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ScheduleKind::Linear),
            "cosine" => Ok(ScheduleKind::Cosine),
            other => Err(Error::invalid(format!("unknown schedule kind '{other}'"))),
        }
    }
}

/// Variance schedule over `T` steps. Timesteps are 1-based to match the
/// reverse loop `t = T, …, 1`; `alpha_bar(0) = 1` by convention.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// Cumulative product ᾱ_t; `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// Posterior standard deviation σ_t of the reverse step.
    pub fn posterior_sigma(&self, t: usize) -> f64 {
        let var = (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t)) * self.beta(t);
        var.max(0.0).sqrt()
    }
}

/// Build a noise schedule.
///
/// The linear kind spans β ∈ [1e-4, 0.02] at the reference length T = 1000
/// and scales the range by 1000/T for other lengths (clamped below 1), so
/// that ᾱ_T stays near zero at any T. The cosine kind follows the squared-
/// cosine ᾱ profile with the usual 0.008 offset.
pub fn make_schedule(t_steps: usize, kind: ScheduleKind) -> Result<NoiseSchedule> {
    if t_steps < 2 {
        return Err(Error::invalid("schedule needs at least 2 steps"));
    }
    let betas: Vec<f64> = match kind {
        ScheduleKind::Linear => {
            let scale = 1000.0 / t_steps as f64;
            let lo = (1e-4 * scale).min(0.999);
            let hi = (0.02 * scale).min(0.999);
            (0..t_steps)
                .map(|i| lo + (hi - lo) * i as f64 / (t_steps as f64 - 1.0))
                .collect()
        }
        ScheduleKind::Cosine => {
            let s = 0.008;
            let f = |t: f64| {
                let x = (t / t_steps as f64 + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2;
                x.cos().powi(2)
            };
            let f0 = f(0.0);
            (1..=t_steps)
                .map(|t| {
                    let prev = f((t - 1) as f64) / f0;
                    let cur = f(t as f64) / f0;
                    (1.0 - cur / prev).clamp(1e-8, 0.999)
                })
                .collect()
        }
    };
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(t_steps);
    let mut prod = 1.0;
    for &a in &alphas {
        prod *= a;
        alpha_bars.push(prod);
    }
    debug_assert!(alpha_bars.windows(2).all(|w| w[1] < w[0]));
    Ok(NoiseSchedule { kind, betas, alphas, alpha_bars })
}

/// Closed-form forward noising: `x_t = √ᾱ_t·x₀ + √(1−ᾱ_t)·ε`.
pub fn forward_diffuse(
    x0: &Array2<f64>,
    t: usize,
    eps: &Array2<f64>,
    schedule: &NoiseSchedule,
) -> Result<Array2<f64>> {
    if t < 1 || t > schedule.len() {
        return Err(Error::invalid(format!(
            "timestep {t} out of range 1..={}",
            schedule.len()
        )));
    }
    if x0.dim() != eps.dim() {
        return Err(Error::invalid("noise shape must match the input"));
    }
    let a = schedule.alpha_bar(t).sqrt();
    let b = (1.0 - schedule.alpha_bar(t)).sqrt();
    Ok(x0 * a + eps * b)
}

/// One reverse-diffusion step from the predicted noise:
/// posterior mean `(x_t − β_t/√(1−ᾱ_t)·ε̂)/√α_t` plus `σ_t·z`.
/// At `t = 1` no noise may be injected (`z` must be `None`).
pub fn reverse_step(
    x_t: &Array2<f64>,
    t: usize,
    eps_hat: &Array2<f64>,
    schedule: &NoiseSchedule,
    z: Option<&Array2<f64>>,
) -> Result<Array2<f64>> {
    if t < 1 || t > schedule.len() {
        return Err(Error::invalid(format!(
            "timestep {t} out of range 1..={}",
            schedule.len()
        )));
    }
    if x_t.dim() != eps_hat.dim() {
        return Err(Error::invalid("predicted noise shape must match the state"));
    }
    if t == 1 && z.is_some() {
        return Err(Error::invalid("no noise may be injected at the final step"));
    }
    let beta = schedule.beta(t);
    let coeff = beta / (1.0 - schedule.alpha_bar(t)).sqrt();
    let inv_sqrt_alpha = 1.0 / schedule.alpha(t).sqrt();
    let mut out = (x_t - &(eps_hat * coeff)) * inv_sqrt_alpha;
    if let Some(z) = z {
        if z.dim() != x_t.dim() {
            return Err(Error::invalid("injected noise shape must match the state"));
        }
        let sigma = schedule.posterior_sigma(t);
        out = out + z * sigma;
    }
    Ok(out)
}

/// Anything that can predict the noise component of a diffused patch.
/// `col_mask` marks measured (`true`) columns when the predictor conditions
/// on availability.
pub trait NoisePredictor {
    fn predict(&self, x_t: &Array2<f64>, t: usize, col_mask: &[bool]) -> Array2<f64>;
}

/// Bound on the implied clean patch during sampling. Patches are normalized
/// to [−1, 1] from their measured cells, so values a little outside are
/// plausible for unmeasured columns but runaway magnitudes are not;
/// clamping the implied x₀ keeps an imperfect predictor from blowing up the
/// chain (the usual clip-denoised rule).
const X0_CLIP: f64 = 1.5;

/// Reverse step expressed through the implied clean patch, with the clamp
/// applied: μ = (√ᾱ_{t−1}·β_t·x̂₀ + √α_t·(1−ᾱ_{t−1})·x_t) / (1−ᾱ_t).
/// Algebraically identical to [`reverse_step`] whenever the clamp is
/// inactive.
fn reverse_step_clipped(
    x_t: &Array2<f64>,
    t: usize,
    eps_hat: &Array2<f64>,
    schedule: &NoiseSchedule,
    z: Option<&Array2<f64>>,
) -> Array2<f64> {
    let ab_t = schedule.alpha_bar(t);
    let ab_prev = schedule.alpha_bar(t - 1);
    let beta = schedule.beta(t);
    let sa = ab_t.sqrt();
    let sb = (1.0 - ab_t).sqrt();
    let x0 = Array2::from_shape_fn(x_t.dim(), |idx| {
        ((x_t[idx] - sb * eps_hat[idx]) / sa).clamp(-X0_CLIP, X0_CLIP)
    });
    let coef_x0 = ab_prev.sqrt() * beta / (1.0 - ab_t);
    let coef_xt = schedule.alpha(t).sqrt() * (1.0 - ab_prev) / (1.0 - ab_t);
    let mut out = &x0 * coef_x0 + x_t * coef_xt;
    if let Some(z) = z {
        let sigma = schedule.posterior_sigma(t);
        out = out + z * sigma;
    }
    out
}

fn randn_like(shape: (usize, usize), rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| StandardNormal.sample(rng))
}

/// Masked inpainting of one normalized patch: the unknown columns follow the
/// reverse chain while the known columns are replaced, at every step, by a
/// freshly forward-diffused sample of the measured data at level t−1. With
/// `resample_jumps > 1` each step is re-noised and repeated, which lets the
/// chain harmonize the two regions further.
///
/// The output's known columns equal the input's known columns exactly.
/// Returns the inpainted patch and a flag set when the mask had no known
/// column at all (unconditional generation).
pub fn repaint_inpaint<P: NoisePredictor + ?Sized>(
    patch: &Array2<f64>,
    col_mask: &[bool],
    predictor: &P,
    schedule: &NoiseSchedule,
    resample_jumps: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Array2<f64>, bool)> {
    let (h, w) = patch.dim();
    if col_mask.len() != w {
        return Err(Error::invalid("column mask length must match the patch width"));
    }
    if resample_jumps == 0 {
        return Err(Error::invalid("resample_jumps must be ≥ 1"));
    }
    if col_mask.iter().all(|&m| m) {
        // Everything is measured: consistency enforcement pins every column.
        return Ok((patch.clone(), false));
    }
    let unconditional = col_mask.iter().all(|&m| !m);

    let t_steps = schedule.len();
    let mut x = randn_like((h, w), rng);
    for t in (1..=t_steps).rev() {
        for jump in 0..resample_jumps {
            let eps_hat = predictor.predict(&x, t, col_mask);
            let x_unknown = if t > 1 {
                let z = randn_like((h, w), rng);
                reverse_step_clipped(&x, t, &eps_hat, schedule, Some(&z))
            } else {
                reverse_step_clipped(&x, t, &eps_hat, schedule, None)
            };
            // Known region at level t−1 comes from the measured data itself.
            let x_known = if t > 1 {
                let eps = randn_like((h, w), rng);
                forward_diffuse(patch, t - 1, &eps, schedule)?
            } else {
                patch.clone()
            };
            let mut next = x_unknown;
            for col in 0..w {
                if col_mask[col] {
                    for row in 0..h {
                        next[(row, col)] = x_known[(row, col)];
                    }
                }
            }
            x = next;
            // Re-noise one step forward and repeat, except on the last pass.
            if jump + 1 < resample_jumps && t > 1 {
                let e = randn_like((h, w), rng);
                let beta = schedule.beta(t);
                x = &x * (1.0 - beta).sqrt() + &e * beta.sqrt();
            }
        }
    }
    Ok((x, unconditional))
}

/// End-to-end reconstruction: tile the matrix, normalize each patch from its
/// measured cells, inpaint the missing columns, undo the normalization, and
/// reassemble. Deterministic for a fixed seed regardless of thread count.
pub fn reconstruct_rir<P: NoisePredictor + Sync + ?Sized>(
    measured: &RirMatrix,
    mask: &MicMask,
    predictor: &P,
    schedule: &NoiseSchedule,
    grid: &PatchGrid,
    resample_jumps: usize,
    seed: u64,
) -> Result<RirMatrix> {
    let k = measured.num_samples();
    let n = measured.num_mics();
    if mask.len() != n {
        return Err(Error::invalid("mask length does not match microphone count"));
    }
    let grid = grid.clamped_to(k, n)?;

    // Missing columns carry no information: zero them before tiling so the
    // padding and normalization never see stale values.
    let mut base = measured.data().to_owned();
    for col in mask.missing_indices() {
        base.column_mut(col).fill(0.0);
    }
    let (patches, placements) = tile_patches(&base, &grid)?;

    // Global fallback scale from the measured columns, for patches that end
    // up with no known cell.
    let mut gmin = f64::INFINITY;
    let mut gmax = f64::NEG_INFINITY;
    for col in mask.measured_indices() {
        for &v in measured.column(col).iter() {
            gmin = gmin.min(v);
            gmax = gmax.max(v);
        }
    }
    let global_scale = PatchScale::from_range(gmin, gmax);

    let results: Vec<Result<Array2<f64>>> = patches
        .par_iter()
        .zip(placements.par_iter())
        .enumerate()
        .map(|(idx, (patch, place))| {
            // Per-patch column mask: map padded columns back to their source.
            let (_, pw) = patch.dim();
            let col_mask: Vec<bool> = (0..pw)
                .map(|pc| {
                    match pad_source_index((place.col + pc) as isize, n, grid.pad_policy) {
                        Some(src) => mask.is_measured(src),
                        // Zero padding is pinned, treat it as known.
                        None => true,
                    }
                })
                .collect();

            let scale = if col_mask.iter().any(|&m| m) {
                let mut pmin = f64::INFINITY;
                let mut pmax = f64::NEG_INFINITY;
                for (c, &known) in col_mask.iter().enumerate() {
                    if known {
                        for r in 0..patch.nrows() {
                            pmin = pmin.min(patch[(r, c)]);
                            pmax = pmax.max(patch[(r, c)]);
                        }
                    }
                }
                PatchScale::from_range(pmin, pmax)
            } else {
                global_scale
            };
            let normalized = patch.mapv(|v| scale.normalize(v).clamp(-1.0, 1.0));
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed ^ (idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let (inpainted, _) = repaint_inpaint(
                &normalized,
                &col_mask,
                predictor,
                schedule,
                resample_jumps,
                &mut rng,
            )?;
            Ok(denormalize_patch(&inpainted, &scale))
        })
        .collect();

    let mut restored = Vec::with_capacity(results.len());
    for r in results {
        restored.push(r?);
    }
    let out = untile_patches(&restored, &placements, (k, n))?;
    RirMatrix::new(out, measured.sample_rate())
}

/// Grid used throughout the experiments: 64×64 patches (width clamping takes
/// care of narrow arrays), half-patch row overlap, reflect padding.
pub fn default_patch_grid() -> PatchGrid {
    PatchGrid::new(64, 64, 32, 64, PadPolicy::Reflect).expect("static grid is valid")
}
