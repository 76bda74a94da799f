//! Property tests for the structural invariants: tiling, normalization,
//! STFT reconstruction, the distortionless constraint, and the projection
//! distance's scale invariance.

use ndarray::Array2;
use num_complex::Complex64;
use proptest::prelude::*;
use rirkit::beamform::{istft, mvdr_weights, null_projection_dist, stft, StftConfig};
use rirkit::patch::{
    denormalize_patch, normalize_patch, tile_patches, untile_patches, PadPolicy, PatchGrid,
};
use rirkit::types::RirMatrix;

fn arb_matrix() -> impl Strategy<Value = Array2<f64>> {
    ((1usize..120), (1usize..24)).prop_flat_map(|(rows, cols)| {
        proptest::collection::vec(-10.0f64..10.0, rows * cols).prop_map(move |vals| {
            Array2::from_shape_vec((rows, cols), vals).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tile_untile_round_trip(
        matrix in arb_matrix(),
        ph in 1usize..40,
        pw in 1usize..40,
        sr_frac in 0.0f64..1.0,
        sc_frac in 0.0f64..1.0,
        reflect in any::<bool>(),
    ) {
        let stride_rows = 1 + (sr_frac * (ph - 1) as f64) as usize;
        let stride_cols = 1 + (sc_frac * (pw - 1) as f64) as usize;
        let policy = if reflect { PadPolicy::Reflect } else { PadPolicy::Zero };
        let grid = PatchGrid::new(ph, pw, stride_rows, stride_cols, policy).unwrap();
        let (patches, placements) = tile_patches(&matrix, &grid).unwrap();
        let back = untile_patches(&patches, &placements, matrix.dim()).unwrap();
        let max_err = (&back - &matrix).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        prop_assert!(max_err < 1e-12, "round-trip error {max_err}");
    }

    #[test]
    fn normalize_round_trip(
        vals in proptest::collection::vec(-1e3f64..1e3, 4..64),
    ) {
        let n = vals.len();
        let patch = Array2::from_shape_vec((n / 2, 2), vals[..(n / 2) * 2].to_vec()).unwrap();
        let (norm, scale) = normalize_patch(&patch);
        prop_assert!(norm.iter().all(|v| (-1.0..=1.0).contains(v)));
        let back = denormalize_patch(&norm, &scale);
        for (a, b) in back.iter().zip(patch.iter()) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn stft_round_trip_on_interior(
        signal in proptest::collection::vec(-1.0f64..1.0, 1500..2500),
        frame_pow in 6u32..9, // 64..256
        ratio in prop_oneof![Just(2usize), Just(4usize)],
        pad in any::<bool>(),
    ) {
        let frame = 1usize << frame_pow;
        let cfg = StftConfig::new(frame, frame / ratio, if pad { frame * 2 } else { frame }).unwrap();
        let spec = stft(&signal, &cfg);
        prop_assume!(spec.nrows() > 2);
        let back = istft(&spec.view(), &cfg, signal.len());
        let last_covered = (spec.nrows() - 1) * cfg.hop + cfg.frame_len;
        for i in cfg.frame_len..last_covered.saturating_sub(cfg.frame_len) {
            prop_assert!(
                (back[i] - signal[i]).abs() < 1e-10 * signal[i].abs().max(1.0),
                "sample {i}"
            );
        }
    }

    #[test]
    fn mvdr_satisfies_distortionless_constraint(
        n in 2usize..6,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let bins = 3usize;
        let fft = 4usize;
        let mut steer = Array2::zeros((bins, n));
        for b in 0..bins {
            for i in 0..n {
                steer[(b, i)] = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            }
        }
        let field = rirkit::beamform::SpectralField::new(steer.clone(), fft, 8000).unwrap();
        let mats: Vec<Array2<Complex64>> = (0..bins)
            .map(|_| {
                let a = Array2::from_shape_fn((n, n), |_| {
                    Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
                });
                let mut m: Array2<Complex64> = Array2::zeros((n, n));
                for i in 0..n {
                    for j in 0..n {
                        let mut s = Complex64::new(0.0, 0.0);
                        for k in 0..n {
                            s += a[(i, k)] * a[(j, k)].conj();
                        }
                        m[(i, j)] = s;
                    }
                    m[(i, i)] += Complex64::new(0.05, 0.0);
                }
                m
            })
            .collect();
        let cov = rirkit::beamform::NoiseCovariance::from_matrices(mats).unwrap();
        let w = mvdr_weights(&field, &cov).unwrap();
        for b in 0..bins {
            let mut resp = Complex64::new(0.0, 0.0);
            for i in 0..n {
                resp += w.data()[(b, i)].conj() * steer[(b, i)];
            }
            prop_assert!((resp - Complex64::new(1.0, 0.0)).norm() < 1e-10);
        }
    }

    #[test]
    fn null_projection_invariant_to_global_scaling(
        seed in any::<u64>(),
        scale in prop_oneof![(-5.0f64..-0.1), (0.1f64..5.0)],
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let truth = RirMatrix::new(
            Array2::from_shape_fn((64, 4), |_| rng.gen_range(-1.0..1.0)), 8000).unwrap();
        let est_data = Array2::from_shape_fn((64, 4), |_| rng.gen_range(-1.0..1.0));
        let est = RirMatrix::new(est_data.clone(), 8000).unwrap();
        let scaled = RirMatrix::new(est_data.mapv(|v| scale * v), 8000).unwrap();
        let a = null_projection_dist(&truth, &est, 128).unwrap();
        let b = null_projection_dist(&truth, &scaled, 128).unwrap();
        prop_assert!((a.dist_sum - b.dist_sum).abs() < 1e-9);
    }
}
