//! Smoothing and stability lemmas for the Fourier kernel: the closed form of
//! the K[m]-smoothed kernel φ^U, the metaplectic normal form with its
//! eighth-root equivalence, and vanishing of partial orbital integrals.

use std::collections::HashMap;

use num_rational::BigRational;
use rayon::prelude::*;
use serde::Serialize;

use crate::amplitude::{Amplitude, Backend};
use crate::error::{Error, Result};
use crate::field::{q_pow, upow, vp_u64, KElem, LocalField};
use crate::grid::{Chart, GridFnB};
use crate::group::{km_quotient_reps, GroupElem, ResidueMat};
use crate::kernels::{profile_i, MicrolocalKernel};

/// The relation a₁ ≈ a₂: a₁ = γ·|τ|^{c/4}·a₂ with γ = ζ₈^k.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct EssentialEquivalence {
    /// γ = exp(2πi·gamma_exp/8).
    pub gamma_exp: u32,
    pub c: i32,
}

/// Largest |c| tried when fitting the |τ|^{c/4} slot.
pub const MAX_C: i32 = 12;

/// φ^U(δ/2 + [α, β, γ]) = I(α, δ)·e_{2α𝔮^m}(β)·e_{2α𝔮^m}(γ), where
/// e_𝔞 = vol(𝔞)⁻¹1_𝔞 and I is the profile of Φ.
pub fn phi_u_closed_form(kernel: &MicrolocalKernel, m: u32) -> Result<GridFnB> {
    if m < kernel.n0 {
        return Err(Error::Config(format!(
            "smoothing level m = {m} is below N0 = {}",
            kernel.n0
        )));
    }
    let phi = kernel.compute_phi()?;
    let prof = profile_i(&phi, kernel.n)?;
    closed_form_from_profile(&prof.grid, m)
}

fn closed_form_from_profile(i: &GridFnB, m: u32) -> Result<GridFnB> {
    let f = *i.field();
    let (lo, hi) = (i.lo(), i.hi());
    let width = (hi[0] - lo[0]) as u32;
    let shift = (f.ord2() + m) as i32;
    let mut tmin = i32::MAX;
    let mut tmax = i32::MIN;
    for (idx, v) in i.values().iter().enumerate() {
        if v.is_zero() {
            continue;
        }
        let r = i.residues(idx)[0];
        if r == 0 || vp_u64(r, f.p()) >= width {
            return Err(Error::Window(
                "I does not vanish on a cell containing α = 0".into(),
            ));
        }
        let t = lo[0] + vp_u64(r, f.p()) as i32 + shift;
        tmin = tmin.min(t);
        tmax = tmax.max(t);
    }
    if tmin == i32::MAX {
        return GridFnB::zeros(&f, Chart::Dual, lo, hi, i.backend());
    }
    let lo4 = [lo[0], tmin, tmin, lo[3]];
    let hi4 = [hi[0], tmax, tmax, hi[3]];
    let q = f.q();
    let i = i.clone();
    GridFnB::from_fn(&f, Chart::Dual, lo4, hi4, i.backend(), move |x| {
        let [al, be, ga, de] = x;
        let val = i.eval(&[*al, f.zero(), f.zero(), *de])?;
        if val.is_zero() {
            return Ok(val);
        }
        let t = al.ord()? + shift;
        if !be.in_ideal(t)? || !ga.in_ideal(t)? {
            return Ok(Amplitude::zero(i.backend()));
        }
        Ok(val.scale_rational(&q_pow(q, 2 * t as i64)))
    })
}

/// (δ, η) ↦ q^{N}·ψ(δ, ϖ^{−N}η) on the traceless coordinates η.
pub fn rescale_traceless(g: &GridFnB, n: u32) -> GridFnB {
    let ni = n as i32;
    g.rescale([ni, ni, ni, 0])
        .scale_rational(&q_pow(g.field().q(), n as i64))
}

/// The output of the metaplectic normal form at one (N, τ).
#[derive(Clone, Debug)]
pub struct NormalForm {
    pub n: u32,
    /// v(τ).
    pub tau_valuation: i32,
    /// Ad(e_U)ρ^τ(w)𝔖♥^τ f.
    pub lhs: GridFnB,
    /// φ₀ with lhs = q^{N/2}(1 ⊗ ρ₀^τ(t(ϖ^N)))φ₀.
    pub phi0: GridFnB,
}

/// ♥^τ f at a point of B in source coordinates.
pub fn heart_tau_at(kernel: &MicrolocalKernel, tau: &KElem, x: &[KElem; 4]) -> Result<Amplitude> {
    let f = &kernel.field;
    let [a, b, c, d] = x;
    let half_a = a.mul(&f.ratio(1, 2)?);
    let e = [d.sub(&half_a), *b, *c, d.add(&half_a)];
    let det = e[0].mul(&e[3]).sub(&e[1].mul(&e[2]));
    if det.is_zero() || !tau.mul(&det).is_unit()? {
        return Ok(Amplitude::zero(kernel.backend));
    }
    kernel.eval_group(&GroupElem::new(f, e)?)
}

/// Tabulates ♥^τ f on x ∈ ϖ^{−s}M2(𝔬) modulo ϖ^{2−s}, for the two scales
/// s = ⌊v/2⌋, ⌈v/2⌉ where τ·det x can be a unit, and reports whether it
/// vanishes on every cell.
pub fn heart_tau_vanishes(kernel: &MicrolocalKernel, tau: &KElem) -> Result<bool> {
    let v = tau.ord()?;
    for s in [v.div_euclid(2), (v + 1).div_euclid(2)] {
        let lo = [-s; 4];
        let hi = [2 - s; 4];
        let g = GridFnB::from_fn(&kernel.field, Chart::Source, lo, hi, kernel.backend, |x| {
            heart_tau_at(kernel, tau, x)
        })?;
        if !g.is_zero() {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Computes Ad(e_U)ρ^τ(w)𝔖♥^τ f and peels off q^{N/2}(1 ⊗ ρ₀^τ(t(ϖ^N))),
/// with the opaque Weil constants on B⁰ set to 1.  For τ ∉ 𝔬^×k^{×2}
/// (odd valuation) ♥^τ f vanishes; that is verified on a grid and reported
/// as a domain error.
pub fn metaplectic_normal_form(
    kernel: &MicrolocalKernel,
    tau: &KElem,
    m: u32,
) -> Result<NormalForm> {
    let v = tau.ord()?;
    if v.rem_euclid(2) == 1 {
        let zero = heart_tau_vanishes(kernel, tau)?;
        return Err(Error::Domain(format!(
            "τ has odd valuation {v}, so ♥^τ f = 0 (zero witness {})",
            if zero { "verified" } else { "FAILED" }
        )));
    }
    let k = v / 2;
    let heart = kernel.heart1.rescale([-k; 4]);
    let lhs = heart.symmetrize().fourier_twisted(tau)?.smooth_adjoint(m)?;
    let phi0 = rescale_traceless(&lhs, kernel.n);
    Ok(NormalForm {
        n: kernel.n,
        tau_valuation: v,
        lhs,
        phi0,
    })
}

fn aligned(a: &GridFnB, b: &GridFnB) -> Result<(GridFnB, GridFnB)> {
    let (lo, hi) = GridFnB::union_windows(a, b);
    Ok((a.refine(lo, hi)?, b.refine(lo, hi)?))
}

/// Solves a = ζ₈^k·|τ|^{c/4}·b for (k, c), comparing every cell.  When
/// v(τ) = 0 the slot c is not determined and is reported as 0.
pub fn fit_equivalence(
    a: &GridFnB,
    b: &GridFnB,
    tau_valuation: i32,
    tol: f64,
) -> Result<Option<EssentialEquivalence>> {
    let (a, b) = aligned(a, b)?;
    let q = a.field().q();
    let backend = a.backend();
    let pivot = (0..b.len())
        .max_by(|&i, &j| {
            let (x, y) = (
                b.values()[i].to_complex().norm(),
                b.values()[j].to_complex().norm(),
            );
            x.partial_cmp(&y).expect("finite").then(j.cmp(&i))
        })
        .unwrap_or(0);
    if b.is_empty() || b.values()[pivot].is_zero() {
        return Ok(a
            .is_zero()
            .then_some(EssentialEquivalence { gamma_exp: 0, c: 0 }));
    }
    let cs: Vec<i32> = if tau_valuation == 0 {
        vec![0]
    } else {
        std::iter::once(0)
            .chain((1..=MAX_C).flat_map(|c| [-c, c]))
            .collect()
    };
    for c in cs {
        let e = -c as i64 * tau_valuation as i64;
        if e.rem_euclid(2) != 0 {
            continue;
        }
        let size = Amplitude::sqrt_q_pow(backend, q, e / 2);
        for k in 0..8u32 {
            let s = size.mul_root(k as i64, 8);
            if !a.values()[pivot].approx_eq(&b.values()[pivot].mul(&s), tol) {
                continue;
            }
            let all = a
                .values()
                .par_iter()
                .zip(b.values().par_iter())
                .all(|(x, y)| x.approx_eq(&y.mul(&s), tol));
            if all {
                return Ok(Some(EssentialEquivalence { gamma_exp: k, c }));
            }
        }
    }
    Ok(None)
}

/// The average 𝔼_{u ∈ K[l]} f(u⁻¹γu) over the principal congruence
/// subgroup U₂ = K[l].
#[derive(Clone, Debug, Serialize)]
pub struct OrbitalReport {
    pub n: u32,
    pub u2_level: u32,
    /// Number of representatives of K[l]/K[max(N, l)] summed over.
    pub cells: u64,
    /// Representatives whose conjugate lies in 𝔍.
    pub in_support: u64,
    pub value: String,
    pub vanishes: bool,
}

/// Exact average of f over the U₂-conjugates of γ.  Since τ = nr(γ)⁻¹ gives
/// τ·nr(u⁻¹γu) = 1, the cutoff ♥^τ is inert and f is evaluated directly.
pub fn orbital_vanishing(
    gamma: &GroupElem,
    u2_level: u32,
    kernel: &MicrolocalKernel,
) -> Result<(Amplitude, OrbitalReport)> {
    if u2_level == 0 {
        return Err(Error::Config(
            "U2 must be a principal congruence subgroup K[l] with l ≥ 1".into(),
        ));
    }
    if !gamma.is_regular_semisimple()? {
        return Err(Error::Domain(format!("{gamma} is not regular semisimple")));
    }
    let p = kernel.field.p();
    let n = kernel.n;
    let (n1, n2) = (kernel.n1, kernel.n2);
    let level = n.max(u2_level);
    let modulus = upow(p, n);
    let g = ResidueMat(
        gamma
            .entries()
            .map(|x| x.residue(0, n as i32))
            .map(|r| r.unwrap_or(0)),
    );
    for x in gamma.entries() {
        if !x.is_integral()? {
            return Err(Error::Domain(
                "γ must be normalized to integral entries".into(),
            ));
        }
    }
    let reps = km_quotient_reps(p, u2_level, level);
    let cells = reps.len() as u64;
    let unit = |x: u64| !x.is_multiple_of(p);
    let hist: HashMap<u64, u64> = reps
        .par_iter()
        .fold(HashMap::new, |mut acc: HashMap<u64, u64>, u| {
            let u = ResidueMat(u.0.map(|x| x % modulus));
            let h = u.adjugate(modulus).mul(&g, modulus).mul(&u, modulus);
            let [h11, h12, h21, _] = h.0;
            let det = h.det(modulus);
            let inside = unit(h11)
                && unit(det)
                && (h12 == 0 || vp_u64(h12, p) >= n1)
                && (h21 == 0 || vp_u64(h21, p) >= n2);
            if inside {
                let inv = crate::field::invmod(crate::field::mulmod(h11, h11, modulus), modulus)
                    .expect("unit");
                *acc.entry(crate::field::mulmod(det, inv, modulus))
                    .or_default() += 1;
            }
            acc
        })
        .reduce(HashMap::new, |mut a, b| {
            for (k, c) in b {
                *a.entry(k).or_default() += c;
            }
            a
        });
    let mut classes: Vec<(u64, u64)> = hist.into_iter().collect();
    classes.sort_unstable();
    let in_support = classes.iter().map(|&(_, c)| c).sum();
    let mut acc = Amplitude::zero(kernel.backend);
    for &(class, count) in &classes {
        let s = kernel.block_sum.get(class).expect("unit class");
        acc = acc.add(&s.scale(count as i128, 1));
    }
    let value =
        acc.scale_rational(&(kernel.vol_j.recip() / BigRational::from_integer(cells.into())));
    let report = OrbitalReport {
        n,
        u2_level,
        cells,
        in_support,
        value: value.render(),
        vanishes: value.is_zero_tol(1e-9),
    };
    Ok((value, report))
}

/// Orbital averages for a range of N and the smallest N from which all
/// scanned values vanish.
#[derive(Clone, Debug, Serialize)]
pub struct OrbitalScan {
    pub label: String,
    pub rows: Vec<OrbitalReport>,
    pub threshold: Option<u32>,
}

/// Builds one kernel per N (with σ of exponent `xi`) and averages f over
/// the K[l]-conjugates of γ; `gamma` constructs γ in the kernel's field.
#[allow(clippy::too_many_arguments)]
pub fn orbital_scan<F>(
    label: &str,
    p: u64,
    n0: u32,
    xi: u64,
    u2_level: u32,
    ns: &[u32],
    backend: Backend,
    gamma: F,
) -> Result<OrbitalScan>
where
    F: Fn(&LocalField) -> Result<GroupElem>,
{
    let mut rows = Vec::new();
    for &n in ns {
        let field = LocalField::new(p, LocalField::required_precision(p, n, n0, u2_level))?;
        let sigma = crate::characters::SigmaClass::new(p, n0, xi)?;
        let kernel = MicrolocalKernel::build(&field, n, sigma, backend)?;
        let g = gamma(&field)?;
        rows.push(orbital_vanishing(&g, u2_level, &kernel)?.1);
    }
    let mut threshold = None;
    for row in rows.iter().rev() {
        if !row.vanishes {
            break;
        }
        threshold = Some(row.n);
    }
    Ok(OrbitalScan {
        label: label.to_string(),
        rows,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::characters::SigmaClass;

    fn kernel(p: u64, n: u32, n0: u32, m: u32) -> MicrolocalKernel {
        let f = LocalField::new(p, LocalField::required_precision(p, n, n0, m)).unwrap();
        MicrolocalKernel::build(&f, n, SigmaClass::new(p, n0, 1).unwrap(), Backend::Exact).unwrap()
    }

    #[test]
    fn smoothed_kernel_matches_closed_form() {
        let k = kernel(3, 4, 1, 1);
        let brute = k.compute_phi().unwrap().smooth_adjoint(1).unwrap();
        let closed = phi_u_closed_form(&k, 1).unwrap();
        assert!(!closed.is_zero());
        assert!(closed.approx_eq(&brute, 0.0).unwrap());
    }

    #[test]
    fn closed_form_vanishes_off_the_cone() {
        let k = kernel(3, 4, 1, 1);
        let closed = phi_u_closed_form(&k, 1).unwrap();
        let f = k.field;
        // α = ϖ^{-4}, so 2α𝔮 = 𝔮^{-3}; β = ϖ^{-4} lies outside.
        let x = [f.pi_pow(-4), f.pi_pow(-4), f.zero(), f.zero()];
        assert!(closed.eval(&x).unwrap().is_zero());
        let y = [f.pi_pow(-4), f.pi_pow(-3), f.zero(), f.zero()];
        assert!(!closed.eval(&y).unwrap().is_zero());
    }

    #[test]
    fn smoothed_kernel_is_stable_in_n_after_rescaling() {
        let a = phi_u_closed_form(&kernel(3, 4, 1, 1), 1).unwrap();
        let b = phi_u_closed_form(&kernel(3, 5, 1, 1), 1).unwrap();
        assert!(rescale_traceless(&a, 4)
            .approx_eq(&rescale_traceless(&b, 5), 0.0)
            .unwrap());
        let literal = |g: &GridFnB, n: u32| {
            let ni = n as i32;
            g.rescale([ni, ni, ni, 0])
                .scale_rational(&q_pow(3, -(n as i64)))
        };
        assert!(!literal(&a, 4).approx_eq(&literal(&b, 5), 0.0).unwrap());
    }

    #[test]
    fn normal_form_residuals_agree_across_n() {
        let ka = kernel(3, 4, 1, 1);
        let kb = kernel(3, 5, 1, 1);
        let one_a = ka.field.one();
        let one_b = kb.field.one();
        let a = metaplectic_normal_form(&ka, &one_a, 1).unwrap();
        let b = metaplectic_normal_form(&kb, &one_b, 1).unwrap();
        let fit = fit_equivalence(&b.phi0, &a.phi0, 0, 0.0).unwrap();
        assert_eq!(fit, Some(EssentialEquivalence { gamma_exp: 0, c: 0 }));
        assert!(a
            .lhs
            .approx_eq(&phi_u_closed_form(&ka, 1).unwrap(), 0.0)
            .unwrap());
    }

    #[test]
    fn unit_square_twist_matches_untwisted() {
        let k = kernel(3, 4, 1, 1);
        let a = metaplectic_normal_form(&k, &k.field.one(), 1).unwrap();
        let b = metaplectic_normal_form(&k, &k.field.int(4), 1).unwrap();
        assert_eq!(
            fit_equivalence(&b.phi0, &a.phi0, 0, 0.0).unwrap(),
            Some(EssentialEquivalence { gamma_exp: 0, c: 0 })
        );
    }

    #[test]
    fn uniformizer_square_twist_is_a_dilation() {
        let k = kernel(3, 4, 1, 1);
        let a = metaplectic_normal_form(&k, &k.field.one(), 1).unwrap();
        let b = metaplectic_normal_form(&k, &k.field.int(9), 1).unwrap();
        let dilated = a.phi0.dilate(&k.field.int(3), false).unwrap();
        assert!(b.phi0.approx_eq(&dilated, 0.0).unwrap());
    }

    #[test]
    fn odd_valuation_twist_vanishes() {
        let k = kernel(3, 4, 1, 1);
        let tau = k.field.int(3);
        assert!(heart_tau_vanishes(&k, &tau).unwrap());
        let err = metaplectic_normal_form(&k, &tau, 1).unwrap_err();
        assert!(matches!(&err, Error::Domain(s) if s.contains("verified")));
        assert!(!heart_tau_vanishes(&k, &k.field.one()).unwrap());
    }

    #[test]
    fn fit_recovers_a_planted_root() {
        let k = kernel(3, 4, 1, 1);
        let a = metaplectic_normal_form(&k, &k.field.one(), 1).unwrap().phi0;
        let planted = a.map(|x| {
            x.mul_root(3, 8)
                .mul(&Amplitude::sqrt_q_pow(Backend::Exact, 3, -2))
        });
        let fit = fit_equivalence(&planted, &a, 2, 0.0).unwrap();
        assert_eq!(fit, Some(EssentialEquivalence { gamma_exp: 3, c: 2 }));
    }

    #[test]
    fn orbital_average_rejects_central_elements() {
        let k = kernel(3, 4, 1, 2);
        let g = GroupElem::identity(&k.field);
        assert!(matches!(
            orbital_vanishing(&g, 2, &k),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn orbital_average_of_split_unit_torus_element() {
        let k = kernel(3, 5, 1, 2);
        let g = GroupElem::from_ints(&k.field, [1, 0, 0, 2]).unwrap();
        let (v, report) = orbital_vanishing(&g, 2, &k).unwrap();
        assert_eq!(report.cells, 3u64.pow(9));
        assert!(report.in_support > 0);
        assert!(v.is_zero(), "{report:?}");
    }
}
