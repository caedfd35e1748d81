//! Property tests for the algebraic invariants of each module.

use std::sync::OnceLock;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use proptest::prelude::*;

use padic_lab::characters::{enumerate_xn, partition_xn, OmegaSigma, SigmaClass};
use padic_lab::constants::{self, GlobalConfig};
use padic_lab::grid::{Chart, GridFnB};
use padic_lab::kernels::MicrolocalKernel;
use padic_lab::maintm::{km_average, main_term_lhs, main_term_rhs, SmoothedKernel, TestObservable};
use padic_lab::specrep::{
    hecke_eigenvalue, l_factor, macdonald_coefficient, macdonald_u, whittaker_norm_check,
    whittaker_value, LKind, SatakeParams,
};
use padic_lab::{Amplitude, Backend, Cyclo, GroupElem, LocalField};

fn field3() -> LocalField {
    LocalField::new(3, 12).unwrap()
}

fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

fn satake() -> impl Strategy<Value = SatakeParams> {
    prop_oneof![
        (0i64..24, 1u64..13).prop_map(|(n, d)| SatakeParams::tempered(n, d)),
        (prop_oneof![-6i64..=-1, 1i64..=6], 1i64..6).prop_map(|(n, d)| SatakeParams::real(n, d)),
    ]
}

fn tempered() -> impl Strategy<Value = SatakeParams> {
    (0i64..24, 1u64..13).prop_map(|(n, d)| SatakeParams::tempered(n, d))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn absolute_value_is_multiplicative_and_ultrametric(a in -5000i64..5000, b in -5000i64..5000, s in -3i32..4, t in -3i32..4) {
        prop_assume!(a != 0 && b != 0);
        let f = field3();
        let x = f.int(a).shift(s);
        let y = f.int(b).shift(t);
        prop_assert_eq!(f.abs(&x.mul(&y)), f.abs(&x) * f.abs(&y));
        let sum = x.add(&y);
        if !sum.is_zero() {
            prop_assert!(f.abs(&sum) <= f.abs(&x).max(f.abs(&y)));
        }
    }

    #[test]
    fn cyclotomic_canonical_form(e in -40i64..40, k in 1u64..4, level in 1u32..3, coeffs in prop::collection::vec(-4i128..5, 1..6)) {
        let n = 3u64.pow(level);
        let z = Cyclo::root(e, n);
        let mut power = Cyclo::one();
        for _ in 0..n {
            power = power.mul(&z);
        }
        prop_assert_eq!(power, Cyclo::one());
        prop_assert_eq!(Cyclo::root(e * k as i64, n * k), z.clone());
        let mut c = Cyclo::zero();
        for (i, a) in coeffs.iter().enumerate() {
            c = c.add(&Cyclo::root(i as i64, n).scale(*a, 1));
        }
        prop_assert_eq!(c.add(&Cyclo::zero()).mul(&Cyclo::one()), c.clone());
        prop_assert!(c.sub(&c).is_zero());
        prop_assert!(Cyclo::from_root_counts(&[1, 1, 1], 3).is_zero());
    }

    #[test]
    fn characters_are_multiplicative(u in 1u64..81, v in 1u64..81, idx in 0usize..36) {
        prop_assume!(u % 3 != 0 && v % 3 != 0);
        let all = enumerate_xn(3, 4).unwrap();
        let w = &all[idx % all.len()];
        let ord = w.value_order();
        let (eu, ev) = (w.exponent(u).unwrap(), w.exponent(v).unwrap());
        prop_assert_eq!(w.exponent(u * v % 81).unwrap(), (eu + ev) % ord);
        prop_assert!(!w.mul(w).is_trivial());
    }

    #[test]
    fn blocks_restrict_to_omega_sigma(s in 0u64..9) {
        let u = 1 + 27 * (s % 3);
        for (sigma, block) in partition_xn(3, 4, 1).unwrap() {
            let om = OmegaSigma::new(sigma, 4).unwrap();
            for w in &block {
                let lhs = w.eval(u % 81, Backend::Exact).unwrap();
                prop_assert_eq!(lhs, om.eval(u % 81, Backend::Exact).unwrap());
            }
        }
    }

    #[test]
    fn satake_swap_invariance(s in satake(), n in 0i32..6) {
        let f = field3();
        let t = s.swapped();
        let y = f.pi_pow(n);
        prop_assert_eq!(whittaker_value(&s, 3, &y).unwrap(), whittaker_value(&t, 3, &y).unwrap());
        prop_assert_eq!(hecke_eigenvalue(&s, &f, &y).unwrap(), hecke_eigenvalue(&t, &f, &y).unwrap());
        prop_assert_eq!(macdonald_coefficient(&s, 3, n as u32), macdonald_coefficient(&t, 3, n as u32));
        let z = rat(3, 2);
        for kind in [LKind::Standard, LKind::Adjoint] {
            let a = l_factor(&s, 3, kind, &z).unwrap();
            let b = l_factor(&t, 3, kind, &z).unwrap();
            prop_assert!(a.approx_eq(&b, 1e-12));
        }
    }

    #[test]
    fn macdonald_u_sum_is_one(s in satake(), q in prop::sample::select(vec![2u64, 3, 5, 7])) {
        if let Some((u1, u2)) = macdonald_u(&s, q) {
            prop_assert_eq!(u1.add(&u2), Amplitude::one(Backend::Exact));
        }
    }

    #[test]
    fn whittaker_norm_converges_for_tempered(s in tempered(), z in prop::sample::select(vec![0.0, 0.5, 1.0]), q in prop::sample::select(vec![3u64, 5])) {
        let r = whittaker_norm_check(&s, q, z, 200).unwrap();
        prop_assert!(r.pass(1e-9), "{:?}", r);
    }

    #[test]
    fn cartan_volumes(p in prop::sample::select(vec![2u64, 3, 5, 7]), m in 0u32..6) {
        let f = LocalField::new(p, 8).unwrap();
        let q = BigRational::from_integer(BigInt::from(p));
        let expected = if m == 0 { BigRational::one() } else { num_traits::pow(q.clone(), m as usize) * (BigRational::one() + q.recip()) };
        prop_assert_eq!(f.cartan_coset_volume(m), expected);
    }

    #[test]
    fn constants_dual_paths(pair in prop::sample::subsequence(vec![2u64, 3, 5, 7, 11, 13, 17, 19, 23], 2), swap in any::<bool>(), wn in 1i64..20) {
        let (d, q) = if swap { (pair[1], pair[0]) } else { (pair[0], pair[1]) };
        let cfg = GlobalConfig::new(d, q, 5, if q == 2 { 2 } else { 1 }).unwrap();
        prop_assert!(constants::family_size_constant(&cfg).unwrap().agree());
        prop_assert!(constants::c0(&cfg).unwrap().agree());
        prop_assert_eq!(constants::volume_gamma_g(&cfg).unwrap(), constants::volume_example(&cfg));
        let l = constants::c_ledger(&cfg, &rat(wn, 3)).unwrap();
        prop_assert!(l.relation_holds);
        prop_assert!(constants::main_term_constant(&cfg).unwrap().holds);
    }
}

fn random_grid(f: &LocalField, chart: Chart, values: &[i64]) -> GridFnB {
    let vals = values
        .iter()
        .map(|&v| Amplitude::from_int(Backend::Exact, v as i128))
        .collect();
    GridFnB::from_values(f, chart, [0; 4], [1; 4], Backend::Exact, vals).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fourier_squares_to_reflection(values in prop::collection::vec(-3i64..4, 81)) {
        let f = field3();
        let g = random_grid(&f, Chart::Source, &values);
        prop_assert!(g.fourier().unwrap().fourier().unwrap().approx_eq(&g.reflect(), 0.0).unwrap());
        let a = g.symmetrize().fourier().unwrap();
        let b = g.fourier().unwrap().symmetrize();
        prop_assert!(a.approx_eq(&b, 0.0).unwrap());
    }

    #[test]
    fn conjugation_preserves_norms_and_commutes(values in prop::collection::vec(-3i64..4, 81), m in prop::array::uniform4(-20i64..20)) {
        let f = field3();
        prop_assume!((m[0] * m[3] - m[1] * m[2]).rem_euclid(3) != 0);
        let g = random_grid(&f, Chart::Source, &values);
        let x = GroupElem::from_ints(&f, m).unwrap();
        let h = g.adjoint(&x).unwrap();
        prop_assert_eq!(h.inner(&h).unwrap(), g.inner(&g).unwrap());
        prop_assert!(h.fourier().unwrap().approx_eq(&g.fourier().unwrap().adjoint(&x).unwrap(), 0.0).unwrap());
        prop_assert!(h.symmetrize().approx_eq(&g.symmetrize().adjoint(&x).unwrap(), 0.0).unwrap());
    }

    #[test]
    fn km_average_paths_agree(
        c in prop::collection::vec(-3i64..4, 3),
        d in prop::collection::vec(-3i64..4, 3),
        e in prop::collection::vec(-3i64..4, 3),
        xi in prop::array::uniform3(-30i64..30),
        shift in 0i32..2,
    ) {
        let f = field3();
        // φ(α, β, γ) = c(α mod 𝔮)·d(β/α mod 𝔮²)·e(γ/α mod 𝔮²): supported on the
        // unit cone with β, γ ∈ 𝔮 and invariant under dilation by 1 + ϖ.
        let phi = GridFnB::from_fn(&f, Chart::Dual, [0, 1, 1, 0], [2, 2, 2, 0], Backend::Exact, |x| {
            if !x[0].is_unit()? {
                return Ok(Amplitude::zero(Backend::Exact));
            }
            let a = x[0].residue(0, 1)? as usize;
            let b = x[1].div(&x[0])?.residue(1, 2)? as usize;
            let g = x[2].div(&x[0])?.residue(1, 2)? as usize;
            Ok(Amplitude::from_int(Backend::Exact, (c[a] * d[b] * e[g]) as i128))
        })
        .unwrap();
        let xi0 = [f.int(xi[0]).shift(shift), f.int(xi[1]), f.int(xi[2])];
        let avg = km_average(&phi, &xi0, 1).unwrap();
        prop_assert!(avg.agree(), "{:?}", avg);
    }
}

struct MainTermFixture {
    kernel: MicrolocalKernel,
    smoothed: SmoothedKernel,
}

fn main_term_fixture() -> &'static MainTermFixture {
    static FIXTURE: OnceLock<MainTermFixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let f = LocalField::new(3, LocalField::required_precision(3, 4, 1, 4)).unwrap();
        let kernel =
            MicrolocalKernel::build(&f, 4, SigmaClass::new(3, 1, 1).unwrap(), Backend::Exact)
                .unwrap();
        let smoothed = SmoothedKernel::new(&kernel, 1).unwrap();
        MainTermFixture { kernel, smoothed }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn main_term_is_linear_in_the_observable(a in -5i64..6, b in -5i64..6, r in 0i32..3) {
        let fx = main_term_fixture();
        let f = fx.kernel.field;
        let o1 = TestObservable::coset("w", GroupElem::w(&f), 1);
        let o2 = TestObservable::coset("a", GroupElem::a(&f, f.pi_pow(r + 1)).unwrap(), 1);
        let sum = TestObservable::combine("sum", &[(rat(a, 1), o1.clone()), (rat(b, 1), o2.clone())]).unwrap();
        prop_assert!(sum.terms_disjoint().unwrap());
        let lhs = |o: &TestObservable| main_term_lhs(&fx.kernel, &fx.smoothed, o).unwrap().brute;
        let rhs = |o: &TestObservable| main_term_rhs(&fx.kernel, o).unwrap();
        let expect_l = lhs(&o1).scale(a as i128, 1).add(&lhs(&o2).scale(b as i128, 1));
        let expect_r = rhs(&o1).scale(a as i128, 1).add(&rhs(&o2).scale(b as i128, 1));
        prop_assert_eq!(lhs(&sum), expect_l);
        prop_assert_eq!(rhs(&sum), expect_r);
        if a.is_zero() && b.is_zero() {
            prop_assert!(lhs(&sum).is_zero());
        }
    }
}
