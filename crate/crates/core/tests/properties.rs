//! Randomized properties of the operators and the nonlinearity.

use std::sync::Arc;

use cahn_spectral::noise::{NoiseFamily, NoiseTable};
use cahn_spectral::{Basis, NemytskiiEval, SpectralField};
use proptest::prelude::*;

fn field(n: usize, bound: f64) -> impl Strategy<Value = SpectralField> {
    prop::collection::vec(-bound..bound, n).prop_map(SpectralField::from_coeffs)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn one_sided_condition((u, v) in (field(12, 3.0), field(12, 3.0))) {
        let mut e = NemytskiiEval::new(Arc::new(Basis::new(12, 2.25).unwrap())).unwrap();
        let mut df = e.apply_f(&u).unwrap();
        df.add_scaled(-1.0, &e.apply_f(&v).unwrap());
        let mut d = u.clone();
        d.add_scaled(-1.0, &v);
        prop_assert!(-df.dot(&d) <= d.dot(&d) * (1.0 + 1e-12));
    }

    #[test]
    fn local_lipschitz((u, v) in (field(10, 3.0), field(10, 3.0))) {
        let mut e = NemytskiiEval::new(Arc::new(Basis::new(10, 2.25).unwrap())).unwrap();
        let fu = e.apply_f(&u).unwrap();
        let su = e.last_sup_norm();
        let mut df = e.apply_f(&v).unwrap();
        let sv = e.last_sup_norm();
        df.add_scaled(-1.0, &fu);
        let bound = 3.0 * (1.0 + su * su + sv * sv) * u.distance(&v);
        prop_assert!(df.sobolev_norm(0.0) <= bound);
    }

    #[test]
    fn parseval_round_trip(f in field(20, 1.0)) {
        let basis = Basis::new(20, 2.25).unwrap();
        let phys = basis.to_physical(&f).unwrap();
        prop_assert!((phys.l2_norm() - f.sobolev_norm(0.0)).abs() <= 1e-10);
        prop_assert!(basis.to_spectral(&phys).unwrap().distance(&f) <= 1e-12);
    }

    #[test]
    fn fractional_powers_compose(f in field(16, 1.0), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let lhs = f.fractional_power(a).fractional_power(b);
        let rhs = f.fractional_power(a + b);
        prop_assert!(lhs.distance(&rhs) <= 1e-12 * (1.0 + rhs.sobolev_norm(0.0)));
    }

    #[test]
    fn semigroup_composes(f in field(16, 1.0), s in 0.0f64..0.01, t in 0.0f64..0.01) {
        let lhs = f.semigroup(s).unwrap().semigroup(t).unwrap();
        prop_assert!(lhs.distance(&f.semigroup(s + t).unwrap()) <= 1e-13);
    }

    #[test]
    fn derivative_is_symmetric((v, y, z) in (field(8, 2.0), field(8, 1.0), field(8, 1.0))) {
        let mut e = NemytskiiEval::new(Arc::new(Basis::new(8, 2.25).unwrap())).unwrap();
        let a = e.apply_f_prime(&v, &y).unwrap().dot(&z);
        let b = e.apply_f_prime(&v, &z).unwrap().dot(&y);
        prop_assert!((a - b).abs() <= 1e-11 * (1.0 + a.abs()));
    }

    #[test]
    fn noise_nesting(seed in any::<u64>(), n in 1usize..8, log_m in 0u32..4) {
        let m = 1usize << log_m;
        let small = NoiseTable::build(seed, 1.0, 16, n, NoiseFamily::default()).unwrap();
        let big = NoiseTable::build(seed, 1.0, 16, 2 * n, NoiseFamily::default()).unwrap();
        let a = small.coarsen(m, n).unwrap();
        let b = big.coarsen(m, n).unwrap();
        prop_assert_eq!(a.as_slice().len(), n * m);
        prop_assert!(a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
