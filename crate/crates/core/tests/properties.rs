//! Structural invariants as property tests.

use proptest::prelude::*;
use replica_sync::diffusion::{couple_latents, ReplicaPair};
use replica_sync::dit::{gated_attention, single_attention, AttentionWeights};
use replica_sync::numerics::rng::{gaussian_matrix, gaussian_stream, rng_for};
use replica_sync::numerics::{fit_logistic, softmax_rows, Matrix};
use replica_sync::output::fmt_float;
use replica_sync::protocols::{
    avg_pool, build_mode_basis, feature_agreement, mode_energy, scale_decomposition, upsample, FeatureMap, ImagePrior,
    ImageShape, Upsample,
};
use replica_sync::speciation::{kappa, snr, snr_expanded, ModalProjection};

fn weights(seed: u64, d: usize) -> AttentionWeights {
    let mut rng = rng_for(seed, &[]);
    let s = 1.0 / (d as f64).sqrt();
    AttentionWeights {
        wq: gaussian_matrix(&mut rng, d, d).scale(s),
        wk: gaussian_matrix(&mut rng, d, d).scale(s),
        wv: gaussian_matrix(&mut rng, d, d).scale(s),
        wo: gaussian_matrix(&mut rng, d, d).scale(s),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_stochastic(seed in any::<u64>(), scale in 0.01f64..50.0) {
        let logits = gaussian_matrix(&mut rng_for(seed, &[]), 6, 9).scale(scale);
        let p = softmax_rows(&logits).unwrap();
        for row in p.iter_rows() {
            prop_assert!(row.iter().all(|&x| (0.0..=1.0).contains(&x)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_coupling_attention_is_two_single_passes(seed in any::<u64>()) {
        let w = weights(seed, 8);
        let x = gaussian_matrix(&mut rng_for(seed, &[1]), 10, 8);
        let joint = gated_attention(&w, 4, &x, 0.0).unwrap();
        let a = single_attention(&w, 4, &x.row_block(0, 5)).unwrap();
        let b = single_attention(&w, 4, &x.row_block(5, 10)).unwrap();
        prop_assert!(joint.sub(&Matrix::vstack(&a, &b).unwrap()).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn gated_attention_is_swap_equivariant(seed in any::<u64>(), g in 0.0f64..=1.0) {
        let w = weights(seed, 8);
        let x = gaussian_matrix(&mut rng_for(seed, &[2]), 10, 8);
        let swapped = Matrix::vstack(&x.row_block(5, 10), &x.row_block(0, 5)).unwrap();
        let out = gated_attention(&w, 4, &x, g).unwrap();
        let out_s = gated_attention(&w, 4, &swapped, g).unwrap();
        let back = Matrix::vstack(&out_s.row_block(5, 10), &out_s.row_block(0, 5)).unwrap();
        prop_assert!(out.sub(&back).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn latent_coupling_damps_only_the_difference(seed in any::<u64>(), g in 0.0f64..=1.0, dt in 0.01f64..1.0) {
        let za = gaussian_stream(seed, &[0], 12);
        let zb = gaussian_stream(seed, &[1], 12);
        let mut pair = ReplicaPair { za: za.clone(), zb: zb.clone() };
        couple_latents(&mut pair, g, dt);
        let damp = (-2.0 * g * dt).exp();
        for i in 0..12 {
            prop_assert!(((pair.za[i] + pair.zb[i]) - (za[i] + zb[i])).abs() < 1e-12);
            prop_assert!(((pair.za[i] - pair.zb[i]) - damp * (za[i] - zb[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn nearest_split_is_pythagorean(seed in any::<u64>(), pool in prop::sample::select(vec![1usize, 2, 4])) {
        let shape = ImageShape::square(8);
        let xa = gaussian_stream(seed, &[0], 64);
        let xb = gaussian_stream(seed, &[1], 64);
        let (lo, hi) = scale_decomposition(&xa, &xb, shape, pool, Upsample::Nearest).unwrap();
        let total: f64 = xa.iter().zip(&xb).map(|(a, b)| (a - b).powi(2)).sum();
        prop_assert!(((pool * pool) as f64 * lo + hi - total).abs() < 1e-10 * total);
    }

    #[test]
    fn coarse_and_fine_subspaces_separate(seed in any::<u64>()) {
        let shape = ImageShape::square(8);
        let xa = gaussian_stream(seed, &[0], 64);
        let coarse = upsample(&gaussian_stream(seed, &[1], 16), shape, 2, Upsample::Nearest).unwrap();
        let noise = gaussian_stream(seed, &[2], 64);
        let nb = upsample(&avg_pool(&noise, shape, 2).unwrap(), shape, 2, Upsample::Nearest).unwrap();
        let fine: Vec<f64> = noise.iter().zip(&nb).map(|(n, m)| n - m).collect();
        let xc: Vec<f64> = xa.iter().zip(&coarse).map(|(a, c)| a + c).collect();
        let xf: Vec<f64> = xa.iter().zip(&fine).map(|(a, f)| a + f).collect();
        prop_assert!(scale_decomposition(&xa, &xc, shape, 2, Upsample::Nearest).unwrap().1 < 1e-12);
        prop_assert!(scale_decomposition(&xa, &xf, shape, 2, Upsample::Nearest).unwrap().0 < 1e-12);
        prop_assert!(scale_decomposition(&xa, &xf, shape, 2, Upsample::Bilinear).unwrap().0 < 1e-12);
    }

    #[test]
    fn agreement_is_a_symmetric_cosine(seed in any::<u64>()) {
        let mix = ImagePrior::default().mixture().unwrap();
        let phi = FeatureMap::new(&mix, ImageShape::square(8), 2).unwrap();
        let xa = gaussian_stream(seed, &[0], 64);
        let xb = gaussian_stream(seed, &[1], 64);
        let ab = feature_agreement(&xa, &xb, &phi).unwrap().unwrap();
        prop_assert!((-1.0..=1.0).contains(&ab));
        prop_assert_eq!(Some(ab), feature_agreement(&xb, &xa, &phi).unwrap());
    }

    #[test]
    fn initial_mode_energy_is_one(seed in any::<u64>(), m in 4usize..20, d in 4usize..40, c in 0.1f64..10.0) {
        let v0 = gaussian_matrix(&mut rng_for(seed, &[]), m, d);
        let k = m.min(d);
        let basis = build_mode_basis(&v0, k, 0).unwrap();
        for j in 0..k {
            prop_assert_eq!(mode_energy(&v0, &basis, j).unwrap(), 1.0);
            prop_assert!((mode_energy(&v0.scale(c), &basis, j).unwrap() - c * c).abs() < 1e-10 * c * c);
        }
        prop_assert!(basis.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn logistic_recovers_noiseless_curves(tau in 20.0f64..80.0, w in 2.0f64..15.0, b in prop::sample::select(vec![-1.0, 1.0])) {
        let xs: Vec<f64> = (0..=100).step_by(4).map(f64::from).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 0.1 + b / (1.0 + (-(x - tau) / w).exp())).collect();
        let fit = fit_logistic(&xs, &ys).unwrap();
        prop_assert!((fit.tau - tau).abs() < 1e-3, "{:?}", fit);
    }

    #[test]
    fn snr_forms_and_kappa_agree(c in 0.1f64..5.0, m in -3.0f64..3.0, lam in -0.5f64..0.5, chi in -0.5f64..0.5,
                                 pi in -0.5f64..0.5, g in 0.0f64..=1.0, gamma in 0.1f64..5.0) {
        let p = ModalProjection::from_components(0, c, m, lam, chi, pi, g).unwrap();
        if let Ok(s) = snr(&p, gamma) {
            prop_assert!((snr_expanded(&p, gamma).unwrap() - s).abs() <= 1e-12 * s.abs().max(1.0));
            prop_assert!((kappa(&p, gamma).unwrap() - gamma * s).abs() <= 1e-12 * (gamma * s).abs().max(1.0));
        }
    }

    #[test]
    fn floats_round_trip_through_csv(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
        prop_assert_eq!(fmt_float(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
    }
}
