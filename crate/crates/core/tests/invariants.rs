//! Property tests for the structural invariants of the discretization and the
//! geometric operators. Grids are small so each case runs in milliseconds.

use chern_extremal::calabi::{calabi_functional, signed_power};
use chern_extremal::geometry::{chern_scalar, volume_density};
use chern_extremal::grid::{inner, integrate, partial_z, partial_zbar, random_band_limited};
use chern_extremal::operators::{complex_laplacian, complex_laplacian_adjoint};
use chern_extremal::scenario::{decode_field, encode_field, random_hermitian};
use chern_extremal::{gauduchon_factor, GridSpec, HermitianMetricField, KrylovConfig, ScalarField};
use proptest::prelude::*;

fn grid(dim: usize, points: usize) -> GridSpec {
    GridSpec::new(dim, points).unwrap()
}

fn metric(seed: u64) -> HermitianMetricField {
    random_hermitian(grid(2, 8), seed, 1, 0.2).unwrap()
}

fn field(spec: GridSpec, seed: u64, amplitude: f64) -> ScalarField {
    random_band_limited(spec, seed, 2, amplitude).unwrap()
}

fn config() -> ProptestConfig {
    ProptestConfig { cases: 12, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn wirtinger_derivatives_commute(seed in any::<u64>(), i in 0usize..2, j in 0usize..2) {
        let u = field(grid(2, 16), seed, 1.0);
        let a = partial_zbar(&partial_z(&u, i), j);
        let b = partial_z(&partial_zbar(&u, j), i);
        let gap = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        prop_assert!(gap < 1e-12, "gap {gap}");
    }

    #[test]
    fn zbar_of_real_field_is_conjugate(seed in any::<u64>(), j in 0usize..2) {
        let u = field(grid(2, 8), seed, 1.0);
        let z = partial_z(&u, j).conj();
        let zbar = partial_zbar(&u, j);
        // equal up to transform roundoff
        let gap = z.values().iter().zip(zbar.values()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        prop_assert!(gap < 1e-13 * (1.0 + zbar.sup_norm()), "gap {gap}");
    }

    #[test]
    fn integral_is_linear_and_positive(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let spec = grid(2, 8);
        let w = metric(seed).conformal(&field(spec, seed ^ 1, 0.3)).map(|g| volume_density(&g)).unwrap();
        let (u, v) = (field(spec, seed ^ 2, 1.0), field(spec, seed ^ 3, 1.0));
        let combined = u.zip_map(&v, |x, y| a * x + b * y);
        let lhs = integrate(&combined, &w);
        let rhs = a * integrate(&u, &w) + b * integrate(&v, &w);
        prop_assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()));
        let positive = u.map(|x| x.abs() + 0.01);
        prop_assert!(integrate(&positive, &w) > 0.0);
    }

    #[test]
    fn box_adjoint_is_exact_dual(seed in any::<u64>()) {
        let g = metric(seed);
        let spec = g.spec();
        let w = volume_density(&g);
        let (u, v) = (field(spec, seed ^ 4, 1.0), field(spec, seed ^ 5, 1.0));
        let lhs = inner(&complex_laplacian_adjoint(&g, &u), &v, &w);
        let rhs = inner(&u, &complex_laplacian(&g, &v).unwrap(), &w);
        let scale = inner(&u, &u, &w).sqrt() * inner(&v, &v, &w).sqrt();
        prop_assert!((lhs - rhs).abs() < 1e-12 * scale, "gap {}", (lhs - rhs).abs());
    }

    #[test]
    fn curvature_scales_inversely(seed in any::<u64>(), lambda in prop::sample::select(vec![0.5, 2.0, 10.0])) {
        let g = metric(seed);
        let s = chern_scalar(&g).unwrap();
        let scaled = chern_scalar(&g.scaled(lambda).unwrap()).unwrap();
        let gap = scaled.zip_map(&s, |a, b| a - b / lambda).sup_norm();
        prop_assert!(gap < 1e-12 * (1.0 + s.sup_norm()), "gap {gap}");
    }

    #[test]
    fn volume_density_is_homogeneous(seed in any::<u64>(), lambda in 0.1f64..10.0) {
        let g = metric(seed);
        let w = volume_density(&g);
        let scaled = volume_density(&g.scaled(lambda).unwrap());
        let gap = scaled.zip_map(&w, |a, b| a / b - lambda * lambda).sup_norm();
        prop_assert!(gap < 1e-12 * lambda * lambda);
    }

    #[test]
    fn calabi_functional_is_scale_invariant(
        seed in any::<u64>(),
        lambda in prop::sample::select(vec![0.5, 2.0, 10.0]),
        p in prop::sample::select(vec![1.5, 2.0, 3.5]),
    ) {
        let g = metric(seed);
        let base = calabi_functional(&g, p).unwrap();
        let scaled = calabi_functional(&g.scaled(lambda).unwrap(), p).unwrap();
        prop_assert!((scaled - base).abs() <= 1e-12 * base.abs().max(1e-300), "{base} vs {scaled}");
    }

    #[test]
    fn signed_power_keeps_sign_and_magnitude(values in prop::collection::vec(-5.0f64..5.0, 64), e in 1.1f64..4.0) {
        let spec = grid(2, 4);
        let mut padded = values.clone();
        padded.resize(spec.len(), 0.0);
        let s = ScalarField::from_values(spec, padded).unwrap();
        let out = signed_power(&s, e);
        for (x, y) in s.values().iter().zip(out.values()) {
            if *x == 0.0 {
                prop_assert_eq!(*y, 0.0);
            } else {
                prop_assert_eq!(x.signum(), y.signum());
                prop_assert!((y.abs() - x.abs().powf(e)).abs() <= 1e-12 * (1.0 + y.abs()));
            }
        }
    }

    #[test]
    fn field_encoding_round_trips(seed in any::<u64>()) {
        let u = field(grid(2, 8), seed, 2.0);
        let mut bytes = Vec::new();
        encode_field(&u, &mut bytes).unwrap();
        let back = decode_field(&mut bytes.as_slice()).unwrap().unwrap();
        prop_assert_eq!(back.spec(), u.spec());
        prop_assert_eq!(back.values(), u.values());
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 4, ..ProptestConfig::default() })]

    #[test]
    fn gauduchon_representative_depends_only_on_the_class(seed in any::<u64>()) {
        let g = metric(seed);
        let h = field(g.spec(), seed ^ 6, 0.2);
        let cfg = KrylovConfig::default();
        let base = gauduchon_factor(&g, &cfg).unwrap().factor;
        let moved = gauduchon_factor(&g.conformal(&h).unwrap(), &cfg).unwrap().factor;
        let diff = moved.zip_map(&h, |a, b| a + b).zip_map(&base, |a, b| a - b);
        prop_assert!(diff.max() - diff.min() < 1e-6, "spread {}", diff.max() - diff.min());
    }
}
