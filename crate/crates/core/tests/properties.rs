use std::sync::Arc;

use magclt_core::disorder::{
    alloy_potential, conditional_resample, sample_configuration, ConditioningMask, SingleSite, SiteDistribution,
    StreamKey,
};
use magclt_core::experiments::{bc_difference, run_samples, EnsembleResult, EnsembleSpec};
use magclt_core::geometry::{
    build_box, index_set, interior, BoundaryCondition, BoxSpec, LatticePoint, Region,
};
use magclt_core::magnetic::{assemble, MagneticField};
use magclt_core::spectral::{eigendecompose, local_trace, trace_function, trace_resolvent_power};
use magclt_core::stats;
use magclt_core::testfun::{antiderivative_lift, tilde_laurent, LaurentPoly, TestFunction};
use proptest::prelude::*;

fn skew(dim: usize, entries: &[f64]) -> MagneticField {
    let mut rows = vec![vec![0.0; dim]; dim];
    let mut k = 0;
    for i in 0..dim {
        for j in i + 1..dim {
            rows[i][j] = entries[k];
            rows[j][i] = -entries[k];
            k += 1;
        }
    }
    MagneticField::new(dim, &rows).unwrap()
}

fn instance(
    dim: usize,
    side: u32,
    field: &MagneticField,
    lo: f64,
    width: f64,
    seed: u64,
    bc: BoundaryCondition,
) -> (BoxSpec, magclt_core::magnetic::DiscreteHamiltonian, f64) {
    let spec = BoxSpec::new(dim, side, 1, bc).unwrap();
    let sites = build_box(&spec).unwrap();
    let idx = Arc::new(index_set(&spec.region(), 0.5));
    let dist = SiteDistribution::Uniform { lo, hi: lo + width };
    let cfg = sample_configuration(&dist, idx, StreamKey::new(seed, 0));
    let pot = alloy_potential(&cfg, &SingleSite::indicator(dim, 1), &sites).unwrap();
    let sup = pot.sup_norm();
    (spec, assemble(&spec, field, &pot).unwrap(), sup)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn box_counts_match_enumeration(dim in 1_usize..=3, side in 2_u32..9, q in 1_u32..4) {
        let spec = BoxSpec::new(dim, side, q, BoundaryCondition::Dirichlet).unwrap();
        let per_axis = (-(2 * (q * side) as i64)..=(2 * (q * side) as i64))
            .filter(|k| 2 * k.abs() < (q * side) as i64)
            .count();
        prop_assert_eq!(build_box(&spec).unwrap().len(), per_axis.pow(dim as u32));
    }

    #[test]
    fn interior_shrinks_the_side(side in 3.0_f64..60.0, ell in 0.0_f64..20.0, dim in 1_usize..=3) {
        let r = interior(&Region::cube(dim, side), ell);
        let expect = (side - 2.0 * ell).max(0.0).powi(dim as i32);
        prop_assert!((r.volume() - expect).abs() <= 1e-9 * side.powi(dim as i32));
    }

    #[test]
    fn operators_are_hermitian_and_bounded_below(
        dim in 1_usize..=2,
        b in -2.0_f64..2.0,
        lo in -1.0_f64..1.0,
        width in 0.0_f64..2.0,
        seed in any::<u64>(),
        neumann in any::<bool>(),
    ) {
        let field = skew(dim, &[b]);
        let bc = if neumann { BoundaryCondition::Neumann } else { BoundaryCondition::Dirichlet };
        let (_, h, sup) = instance(dim, if dim == 1 { 20 } else { 6 }, &field, lo, width, seed, bc);
        let m = h.to_dense();
        prop_assert_eq!(&m, &m.adjoint());
        prop_assert_eq!(h.hermiticity_residual(), 0.0);
        let s = eigendecompose(&h).unwrap();
        prop_assert!(s.min() >= -sup - 1e-9);
        if dim == 2 {
            for c in 0..h.len() {
                if let Some(phi) = h.plaquette_flux(c, 0, 1) {
                    prop_assert!((phi - b).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn three_dimensional_flux_per_plane(entries in proptest::array::uniform3(-1.5_f64..1.5), seed in any::<u64>()) {
        let field = skew(3, &entries);
        let (_, h, _) = instance(3, 3, &field, 0.0, 1.0, seed, BoundaryCondition::Dirichlet);
        let planes = [(0, 1, entries[0]), (0, 2, entries[1]), (1, 2, entries[2])];
        for c in 0..h.len() {
            for &(i, j, bij) in &planes {
                if let Some(phi) = h.plaquette_flux(c, i, j) {
                    prop_assert!((phi - bij).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn magnetic_translations_preserve_spectra(
        b in -2.0_f64..2.0,
        mx in -6_i64..6,
        my in -6_i64..6,
        seed in any::<u64>(),
    ) {
        let spec = BoxSpec::new(2, 5, 1, BoundaryCondition::Dirichlet).unwrap();
        let field = MagneticField::planar(b);
        let u = SingleSite::indicator(2, 1);
        let idx = Arc::new(index_set(&Region::cube(2, 5.0), 0.5));
        let cfg = sample_configuration(&SiteDistribution::Uniform { lo: 0.0, hi: 1.0 }, idx, StreamKey::new(seed, 0));
        let m = LatticePoint([mx, my, 0]);
        let shifted = spec.translated(m);
        let pot = alloy_potential(&cfg, &u, &build_box(&spec).unwrap()).unwrap();
        let pot_m = alloy_potential(&cfg.translate(&m), &u, &build_box(&shifted).unwrap()).unwrap();
        let a = eigendecompose(&assemble(&spec, &field, &pot).unwrap()).unwrap();
        let c = eigendecompose(&assemble(&shifted, &field, &pot_m).unwrap()).unwrap();
        for (x, y) in a.eigenvalues().iter().zip(c.eigenvalues()) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn local_traces_partition_the_trace(split in 0.6_f64..4.4, b in -1.0_f64..1.0, seed in any::<u64>()) {
        let (_, h, _) = instance(2, 9, &MagneticField::planar(b), 0.0, 1.0, seed, BoundaryCondition::Dirichlet);
        let s = eigendecompose(&h).unwrap();
        let f = TestFunction::resolvent_power(-1.5, 3);
        let whole = trace_function(&s, &f).unwrap();
        // sites with sup-norm exactly `split` would fall in neither open shell
        let split = split.floor() + 0.5;
        let inner = local_trace(&h, &s, &f, &Region::cube(2, 2.0 * split)).unwrap();
        let outer = local_trace(&h, &s, &f, &Region::shell(2, split, 9.0).unwrap()).unwrap();
        prop_assert!((inner + outer - whole).abs() <= 1e-9 * whole.abs().max(1.0));
    }

    #[test]
    fn resolvent_backends_agree(dim in 1_usize..=2, b in -1.0_f64..1.0, seed in any::<u64>(), m in 1_u32..5) {
        let (_, h, _) = instance(dim, if dim == 1 { 30 } else { 7 }, &skew(dim, &[b]), -0.5, 1.5, seed, BoundaryCondition::Neumann);
        let s = eigendecompose(&h).unwrap();
        let a = trace_function(&s, &TestFunction::resolvent_power(-1.0, m as i32)).unwrap();
        let c = trace_resolvent_power(&h, -1.0, m).unwrap();
        prop_assert!(((a - c) / a).abs() <= 1e-8);
    }

    #[test]
    fn resampling_keeps_masked_coordinates(seed in any::<u64>(), other in any::<u64>(), d in 1_usize..=3) {
        let idx = Arc::new(index_set(&Region::cube(d, 5.0), 0.5));
        let dist = SiteDistribution::TwoPoint { a: -1.0, b: 2.0, prob: 0.3 };
        let cfg = sample_configuration(&dist, idx, StreamKey::new(seed, 0));
        for mask in [ConditioningMask::through_ones(d), ConditioningMask::before_ones(d)] {
            let fresh = conditional_resample(&cfg, &mask, StreamKey::new(other, 7));
            for ((n, v), (_, w)) in cfg.iter().zip(fresh.iter()) {
                if mask.contains(n) {
                    prop_assert_eq!(v, w);
                }
                prop_assert!(w == -1.0 || w == 2.0);
            }
        }
    }

    #[test]
    fn laurent_derivative_matches_difference_quotient(
        coeffs in proptest::collection::vec(-2.0_f64..2.0, 1..5),
        m in 2_i32..5,
        x in 0.0_f64..5.0,
    ) {
        let p = LaurentPoly::new(-1.0, m, coeffs);
        let h = 1e-5;
        let numeric = (p.eval_unchecked(x + h) - p.eval_unchecked(x - h)) / (2.0 * h);
        let analytic = p.derivative().eval_unchecked(x);
        let scale = p.terms().map(|(k, a)| a.abs() * k as f64 * (x + 1.0).powi(-k - 1)).sum::<f64>();
        prop_assert!((numeric - analytic).abs() <= 1e-6 * scale.max(1e-12));
    }

    #[test]
    fn lift_and_tilde_identities(
        coeffs in proptest::collection::vec(-2.0_f64..2.0, 1..5),
        d in 1_usize..=3,
        x in 0.0_f64..10.0,
    ) {
        let e = -0.75;
        let m = d as i32 + 2;
        let p = LaurentPoly::new(e, m, coeffs);
        let r = x - e;
        let power = 1 + (d / 2) as i32;
        let lift = antiderivative_lift(&p, d).derivative().eval_unchecked(x);
        let want = r.powi(-power) * p.eval_unchecked(x);
        let scale = p.terms().map(|(k, a)| a.abs() * r.powi(-k - power)).sum::<f64>();
        prop_assert!((lift - want).abs() <= 1e-10 * scale.max(1e-300));
        let tilde = tilde_laurent(&p, d).eval_unchecked(x);
        let direct = r.powi(power) * p.derivative().eval_unchecked(x);
        prop_assert!((tilde - direct).abs() <= 1e-12 * direct.abs().max(scale * r.powi(power - 1)));
    }

    #[test]
    fn variance_is_shift_invariant_and_nonnegative(
        xs in proptest::collection::vec(-1e3_f64..1e3, 2..60),
        shift in -1e6_f64..1e6,
    ) {
        let v = stats::variance(&xs);
        prop_assert!(v >= 0.0);
        let moved: Vec<f64> = xs.iter().map(|x| x + shift).collect();
        prop_assert!((stats::variance(&moved) - v).abs() <= 1e-6 * (v + 1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn sample_order_never_changes_results(seed in any::<u64>(), cut in 1_usize..15) {
        let spec = EnsembleSpec {
            box_spec: BoxSpec::new(1, 12, 1, BoundaryCondition::Dirichlet).unwrap(),
            field: MagneticField::zero(1),
            dist: SiteDistribution::Uniform { lo: 0.0, hi: 1.0 },
            single_site: SingleSite::indicator(1, 1),
            f: TestFunction::resolvent_power(-2.0, 3),
            samples: 16,
            seed,
        };
        let whole = run_samples(&spec, 0..16).unwrap();
        let mut pieces = run_samples(&spec, cut..16).unwrap();
        pieces.extend(run_samples(&spec, 0..cut).unwrap());
        let a = EnsembleResult::from_samples(1, 12, BoundaryCondition::Dirichlet, whole);
        let b = EnsembleResult::from_samples(1, 12, BoundaryCondition::Dirichlet, pieces);
        prop_assert_eq!(&a, &b);
        let zero = bc_difference(&a, &b).unwrap();
        prop_assert_eq!(zero.value, 0.0);
    }
}
