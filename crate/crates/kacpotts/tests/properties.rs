//! Randomized invariants: simplex and mass preservation under coarse
//! graining, metric axioms of the weak distance, convolution identities,
//! the energy-entropy decomposition, gradient consistency, translation
//! invariance, realization quotas, and the level-set factorization.

use proptest::prelude::*;

use kacpotts::exec::ExecMode;
use kacpotts::fuzzy::{kernel_direct, kernel_factorized, AMode, FuzzyPartition};
use kacpotts::profiles::{
    coarse_grain, realize_profile, weak_distance, BlockPartition, DensityProfile, DilutionField,
    TestFunctionFamily,
};
use kacpotts::sampler::ColorConfiguration;
use kacpotts::torus::{convolve, discretize_kernel, ConvMode, KacKernel, ScalarField, TorusGrid};
use kacpotts::variational::{
    rate_eval_decomposed, rate_eval_direct, rate_gradient, RateContext,
};

const MESH8: usize = 8;

fn simplex_rows(cells: usize, r: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(1e-3..1.0f64, cells * r).prop_map(move |mut v| {
        for c in 0..cells {
            let row = &mut v[c * r..(c + 1) * r];
            let s: f64 = row.iter().sum();
            for x in row.iter_mut() {
                *x /= s;
            }
        }
        v
    })
}

fn dilution_values(cells: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.2..1.0f64, cells)
}

fn arbitrary_kernel() -> impl Strategy<Value = KacKernel> {
    prop_oneof![
        Just(KacKernel::Uniform),
        (0.05..0.5f64).prop_map(|radius| KacKernel::Box { radius }),
        Just(KacKernel::Cosine),
        (0.05..0.3f64).prop_map(|bandwidth| KacKernel::WrappedGaussian { bandwidth }),
    ]
}

proptest! {
    #[test]
    fn coarse_grain_keeps_rows_on_the_simplex(
        values in simplex_rows(MESH8, 3),
        rho in dilution_values(MESH8),
        coarse_n in prop_oneof![Just(1usize), Just(2), Just(4)],
    ) {
        let fine = TorusGrid::new(1, MESH8).unwrap();
        let profile = DensityProfile::new(fine, 3, values).unwrap();
        let dilution = DilutionField::new(fine, rho).unwrap();
        let part = BlockPartition::new(fine, TorusGrid::new(1, coarse_n).unwrap()).unwrap();
        let coarse = coarse_grain(&profile, &part, Some(&dilution)).unwrap();
        for c in 0..coarse.cells() {
            prop_assert!(coarse.is_occupied(c));
            let row = coarse.row(c);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn coarse_grain_preserves_color_means(
        values in simplex_rows(MESH8, 3),
        coarse_n in prop_oneof![Just(1usize), Just(2), Just(4)],
    ) {
        let fine = TorusGrid::new(1, MESH8).unwrap();
        let profile = DensityProfile::new(fine, 3, values).unwrap();
        let part = BlockPartition::new(fine, TorusGrid::new(1, coarse_n).unwrap()).unwrap();
        let coarse = coarse_grain(&profile, &part, None).unwrap();
        for a in 0..3u8 {
            let fine_mean: f64 =
                (0..MESH8).map(|c| profile.value(c, a)).sum::<f64>() / MESH8 as f64;
            let coarse_mean: f64 =
                (0..coarse_n).map(|c| coarse.value(c, a)).sum::<f64>() / coarse_n as f64;
            prop_assert!((fine_mean - coarse_mean).abs() < 1e-12);
        }
    }

    #[test]
    fn coarse_grain_with_unit_ratio_is_identity(
        values in simplex_rows(MESH8, 2),
    ) {
        let fine = TorusGrid::new(1, MESH8).unwrap();
        let profile = DensityProfile::new(fine, 2, values).unwrap();
        let part = BlockPartition::new(fine, fine).unwrap();
        let same = coarse_grain(&profile, &part, None).unwrap();
        for (a, b) in profile.values().iter().zip(same.values()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn weak_distance_is_a_metric_up_to_rounding(
        va in simplex_rows(MESH8, 2),
        vb in simplex_rows(MESH8, 2),
        vc in simplex_rows(MESH8, 2),
    ) {
        let mesh = TorusGrid::new(1, MESH8).unwrap();
        let a = DensityProfile::new(mesh, 2, va).unwrap();
        let b = DensityProfile::new(mesh, 2, vb).unwrap();
        let c = DensityProfile::new(mesh, 2, vc).unwrap();
        let family = TestFunctionFamily::standard(1, 2, 24).unwrap();
        let (dab, _) = weak_distance(&a, &b, &family);
        let (dba, _) = weak_distance(&b, &a, &family);
        let (daa, _) = weak_distance(&a, &a, &family);
        let (dac, _) = weak_distance(&a, &c, &family);
        let (dcb, _) = weak_distance(&c, &b, &family);
        prop_assert!(daa == 0.0);
        prop_assert!((dab - dba).abs() < 1e-14);
        prop_assert!(dab >= 0.0);
        prop_assert!(dab <= dac + dcb + 1e-12);
    }

    #[test]
    fn convolution_routes_agree_and_preserve_the_mean(
        values in proptest::collection::vec(-2.0..2.0f64, MESH8),
        kernel in arbitrary_kernel(),
    ) {
        let grid = TorusGrid::new(1, MESH8).unwrap();
        let stencil = discretize_kernel(&kernel, grid, true).unwrap();
        let field = ScalarField::new(grid, values).unwrap();
        let direct = convolve(&stencil, &field, ConvMode::Direct).unwrap();
        let fft = convolve(&stencil, &field, ConvMode::Fft).unwrap();
        for (a, b) in direct.values().iter().zip(fft.values()) {
            prop_assert!((a - b).abs() < 1e-10);
        }
        prop_assert!((direct.mean() - field.mean()).abs() < 1e-10);
        let ones = ScalarField::constant(grid, 1.0);
        let smeared = convolve(&stencil, &ones, ConvMode::Direct).unwrap();
        for v in smeared.values() {
            prop_assert!((v - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn rate_decomposition_matches_direct_evaluation(
        values in simplex_rows(MESH8, 3),
        rho in dilution_values(MESH8),
        kernel in arbitrary_kernel(),
        beta in 0.1..3.0f64,
    ) {
        let mesh = TorusGrid::new(1, MESH8).unwrap();
        let profile = DensityProfile::new(mesh, 3, values).unwrap();
        let dilution = DilutionField::new(mesh, rho).unwrap();
        let ctx = RateContext::new(beta, &kernel, &dilution, 3).unwrap();
        let direct = rate_eval_direct(&ctx, &profile).unwrap();
        let dec = rate_eval_decomposed(&ctx, &profile).unwrap();
        prop_assert!((direct - dec.total).abs() < 1e-10);
        prop_assert!(dec.inhomogeneity >= -1e-12);
    }

    #[test]
    fn rate_gradient_matches_finite_differences(
        values in simplex_rows(4, 2),
        rho in dilution_values(4),
        beta in 0.1..2.0f64,
        cell in 0usize..4,
    ) {
        let mesh = TorusGrid::new(1, 4).unwrap();
        let dilution = DilutionField::new(mesh, rho).unwrap();
        let ctx = RateContext::new(beta, &KacKernel::Cosine, &dilution, 2).unwrap();
        let g = {
            let profile = DensityProfile::new(mesh, 2, values.clone()).unwrap();
            rate_gradient(&ctx, &profile).unwrap()
        };
        // tangent direction: move mass between the two colors of one cell
        let eps = 1e-6;
        let eval = |shift: f64| {
            let mut v = values.clone();
            v[cell * 2] += shift;
            v[cell * 2 + 1] -= shift;
            let p = DensityProfile::new(mesh, 2, v).unwrap();
            rate_eval_direct(&ctx, &p).unwrap()
        };
        // keep the perturbed rows inside the simplex
        prop_assume!(values[cell * 2] > 1e-4 && values[cell * 2] < 1.0 - 1e-4);
        prop_assume!(values[cell * 2 + 1] > 1e-4 && values[cell * 2 + 1] < 1.0 - 1e-4);
        let fd = (eval(eps) - eval(-eps)) / (2.0 * eps);
        let analytic = (g[cell * 2] - g[cell * 2 + 1]) / mesh.sites() as f64;
        prop_assert!(
            (fd - analytic).abs() < 1e-5 * (1.0 + analytic.abs()),
            "fd {} vs analytic {}",
            fd,
            analytic
        );
    }

    #[test]
    fn rate_is_translation_invariant(
        values in simplex_rows(MESH8, 3),
        kernel in arbitrary_kernel(),
        beta in 0.1..3.0f64,
        shift in 1usize..MESH8,
    ) {
        let mesh = TorusGrid::new(1, MESH8).unwrap();
        let dilution = DilutionField::constant(mesh, 1.0).unwrap();
        let ctx = RateContext::new(beta, &kernel, &dilution, 3).unwrap();
        let profile = DensityProfile::new(mesh, 3, values.clone()).unwrap();
        let mut rolled = vec![0.0; values.len()];
        for c in 0..MESH8 {
            let src = (c + shift) % MESH8;
            rolled[c * 3..(c + 1) * 3].copy_from_slice(&values[src * 3..(src + 1) * 3]);
        }
        let shifted = DensityProfile::new(mesh, 3, rolled).unwrap();
        let a = rate_eval_direct(&ctx, &profile).unwrap();
        let b = rate_eval_direct(&ctx, &shifted).unwrap();
        prop_assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn single_cell_realization_meets_the_quota(
        weights in proptest::collection::vec(1.0..5.0f64, 3),
    ) {
        let n = 32usize;
        let cell = TorusGrid::new(1, 1).unwrap();
        let total: f64 = weights.iter().sum();
        let alpha: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let target = DensityProfile::flat(cell, &alpha).unwrap();
        let grid = TorusGrid::new(1, n).unwrap();
        let real = realize_profile(&target, grid).unwrap();
        let mut counts = [0f64; 3];
        for &color in &real.configuration.colors {
            counts[color as usize] += 1.0;
        }
        for a in 0..3 {
            prop_assert!(
                (counts[a] - n as f64 * alpha[a]).abs() < 1.0 + 1e-9,
                "color {}: {} sites for quota {}",
                a,
                counts[a],
                n as f64 * alpha[a]
            );
        }
        prop_assert!(real.max_deviation <= 2.0 / n as f64 + 1e-12);
    }

    #[test]
    fn rational_flat_targets_realize_exactly(
        cut_a in 0usize..=8,
        cut_b in 0usize..=8,
        ratio in prop_oneof![Just(8usize), Just(16)],
    ) {
        let (lo, hi) = (cut_a.min(cut_b), cut_a.max(cut_b));
        // per-cell color counts with denominator `ratio`
        let counts = [lo, hi - lo, 8 - hi];
        let alpha: Vec<f64> = counts.iter().map(|&c| c as f64 / 8.0).collect();
        let mesh = TorusGrid::new(1, 4).unwrap();
        let target = DensityProfile::flat(mesh, &alpha).unwrap();
        let grid = TorusGrid::new(1, 4 * ratio).unwrap();
        let real = realize_profile(&target, grid).unwrap();
        prop_assert!(real.max_deviation < 1e-12);
        let mut per_cell = vec![0usize; 4 * 3];
        for (i, &site) in real.configuration.site_indices().iter().enumerate() {
            let cell = site / ratio;
            per_cell[cell * 3 + real.configuration.colors[i] as usize] += 1;
        }
        for cell in 0..4 {
            for a in 0..3 {
                let want = ratio * counts[a] / 8;
                prop_assert_eq!(per_cell[cell * 3 + a], want);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fuzzy_kernel_is_a_probability_vector(
        labels in proptest::collection::vec(0u8..2, 3),
        beta in 0.1..2.5f64,
        kernel in arbitrary_kernel(),
        site in 0usize..4,
    ) {
        let part = FuzzyPartition::new(vec![2, 1]).unwrap();
        let grid = TorusGrid::new(1, 4).unwrap();
        let stencil = discretize_kernel(&kernel, grid, true).unwrap();
        let others: Vec<usize> = (0..4).filter(|&x| x != site).collect();
        let boundary = ColorConfiguration::on_sites(grid, 2, others, labels).unwrap();
        let probs = kernel_direct(&stencil, beta, &part, site, &boundary).unwrap();
        prop_assert_eq!(probs.len(), 2);
        prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(probs.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn factorization_holds_on_random_instances(
        labels in proptest::collection::vec(0u8..2, 4),
        beta in 0.1..2.5f64,
        kernel in arbitrary_kernel(),
        site in 0usize..5,
    ) {
        let part = FuzzyPartition::new(vec![2, 2]).unwrap();
        let grid = TorusGrid::new(1, 5).unwrap();
        let stencil = discretize_kernel(&kernel, grid, true).unwrap();
        let others: Vec<usize> = (0..5).filter(|&x| x != site).collect();
        let boundary = ColorConfiguration::on_sites(grid, 2, others, labels).unwrap();
        let direct = kernel_direct(&stencil, beta, &part, site, &boundary).unwrap();
        let fac = kernel_factorized(
            &stencil,
            beta,
            &part,
            site,
            &boundary,
            AMode::Exact,
            ExecMode::Sequential,
        )
        .unwrap();
        for (a, b) in direct.iter().zip(&fac.probs) {
            prop_assert!((a - b).abs() < 1e-11);
        }
    }
}
