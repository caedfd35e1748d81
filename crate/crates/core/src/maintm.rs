//! Matrix calculus behind the main term: the cone E⁰(m), K[m]-averages over
//! it, the Hensel parametrization of orbits, the Weyl integral variant, the
//! classification of G/H cosets meeting E⁰(m), and the main-term identity
//! evaluated along a brute grid path and a closed-form path.

use std::collections::BTreeSet;

use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::Serialize;

use crate::amplitude::{Amplitude, Backend};
use crate::characters::SigmaClass;
use crate::error::{Error, Result};
use crate::field::{q_pow, upow, vp_u64, KElem, LocalField};
use crate::grid::{km_average_reps, Chart, GridFnB};
use crate::group::{pgl2_reps, GroupElem, Traceless};
use crate::kernels::MicrolocalKernel;

/// ξ = [α, β, γ] ∈ E⁰(m): β, γ ∈ 2α𝔮^m.  The zero matrix belongs to every
/// E⁰(m).
pub fn e0m_membership(xi: &Traceless, m: u32) -> Result<bool> {
    let [al, be, ga] = xi;
    if al.is_zero() {
        if !be.is_zero() || !ga.is_zero() {
            return Ok(false);
        }
        return Err(Error::PrecisionLoss(
            "α vanishes at the working precision".into(),
        ));
    }
    let ord2 = crate::field::vp_u64(2, be.p()) as i32;
    let t = al.ord()? + ord2 + m as i32;
    Ok(be.in_ideal(t)? && ga.in_ideal(t)?)
}

/// φ(·, δ) for a dual-chart function on B, as a B⁰ function: a grid whose
/// scalar window is [0, 0).
pub fn b0_slice(phi: &GridFnB, delta: &KElem) -> Result<GridFnB> {
    if phi.chart() != Chart::Dual {
        return Err(Error::ChartMismatch(
            "B⁰ slices are taken in the dual chart".into(),
        ));
    }
    let (mut lo, mut hi) = (phi.lo(), phi.hi());
    lo[3] = 0;
    hi[3] = 0;
    let src = phi.clone();
    let delta = *delta;
    GridFnB::from_fn(phi.field(), Chart::Dual, lo, hi, phi.backend(), move |x| {
        src.eval(&[x[0], x[1], x[2], delta])
    })
}

fn require_b0(phi: &GridFnB) -> Result<()> {
    if phi.chart() != Chart::Dual || phi.lo()[3] != 0 || phi.hi()[3] != 0 {
        return Err(Error::ChartMismatch(
            "expected a B⁰ function (dual chart, scalar window [0, 0))".into(),
        ));
    }
    Ok(())
}

/// Checks that φ is supported on E⁰(m) cell by cell and invariant under
/// dilation by 1 + ϖ^m.
pub fn check_cone_hypotheses(phi: &GridFnB, m: u32) -> Result<()> {
    require_b0(phi)?;
    let f = *phi.field();
    let ord2 = f.ord2() as i32;
    let (lo, hi) = (phi.lo(), phi.hi());
    let width = (hi[0] - lo[0]) as u32;
    let u = f.one().add(&f.pi_pow(m as i32));
    for idx in 0..phi.len() {
        let v = &phi.values()[idx];
        if v.is_zero() {
            continue;
        }
        let r = phi.residues(idx);
        if r[0] == 0 || vp_u64(r[0], f.p()) >= width {
            return Err(Error::Domain(
                "support meets a cell containing α = 0".into(),
            ));
        }
        let t = lo[0] + vp_u64(r[0], f.p()) as i32 + ord2 + m as i32;
        for axis in [1, 2] {
            let inside =
                hi[axis] >= t && (r[axis] == 0 || lo[axis] + vp_u64(r[axis], f.p()) as i32 >= t);
            if !inside {
                return Err(Error::Domain(format!(
                    "support leaves E⁰({m}) along axis {axis}"
                )));
            }
        }
        let x = phi.point(idx);
        let ux = [x[0].mul(&u), x[1].mul(&u), x[2].mul(&u), x[3]];
        if phi.eval(&ux)? != *v {
            return Err(Error::Domain(format!(
                "not invariant under dilation by 1 + ϖ^{m}"
            )));
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct KmAverage {
    pub brute: Amplitude,
    pub closed: Amplitude,
}

impl KmAverage {
    pub fn agree(&self) -> bool {
        self.brute == self.closed
    }
}

/// 𝔼_{g ∈ K[m]} φ(Ad(g)ξ₀) by exhaustive averaging and by the closed form
/// 1_{α₀≠0}·e(β₀)·e(γ₀)·∫_{β,γ} φ([α₀, β, γ]) with e = e_{2α₀𝔮^m}.
pub fn km_average(phi: &GridFnB, xi0: &Traceless, m: u32) -> Result<KmAverage> {
    if m == 0 {
        return Err(Error::Domain("averaging level m must be at least 1".into()));
    }
    check_cone_hypotheses(phi, m)?;
    let f = *phi.field();
    let backend = phi.backend();
    let ord2 = f.ord2() as i32;
    let (lo, hi) = (phi.lo(), phi.hi());
    let max_hi = (0..3).map(|i| hi[i]).max().expect("three axes");
    let vmin = xi0
        .iter()
        .filter_map(|x| x.valuation())
        .min()
        .unwrap_or(max_hi);
    let m2 = (m as i32).max(max_hi - vmin + 2 * ord2) as u32;
    let reps = km_average_reps(&f, m, m2)?;
    let mut acc = Amplitude::zero(backend);
    for g in &reps {
        let y = g.conj_traceless(xi0)?;
        acc = acc.add(&phi.eval(&[y[0], y[1], y[2], f.zero()])?);
    }
    let brute = acc.scale(1, reps.len() as i128);

    let [al, be, ga] = xi0;
    let closed = if al.is_zero() {
        Amplitude::zero(backend)
    } else {
        let t = al.ord()? + ord2 + m as i32;
        if be.in_ideal(t)? && ga.in_ideal(t)? && al.in_ideal(lo[0])? {
            let profile = phi.integrate_middle()?;
            let i = profile.eval(&[*al, f.zero(), f.zero(), f.zero()])?;
            i.scale_rational(&q_pow(f.q(), 2 * t as i64))
        } else {
            Amplitude::zero(backend)
        }
    };
    Ok(KmAverage { brute, closed })
}

/// Outcome of the finite-level Hensel check for (λ, x) ↦ λ·Ad(x)[α₀, 0, 0].
#[derive(Clone, Debug, Serialize)]
pub struct HenselReport {
    pub alpha0_valuation: i32,
    pub m: u32,
    pub depth: u32,
    pub domain: u64,
    pub distinct_images: u64,
    pub max_fiber: u64,
    pub formulas_hold: bool,
    pub bijective: bool,
}

impl HenselReport {
    pub fn pass(&self) -> bool {
        self.bijective && self.formulas_hold
    }
}

/// Maps (1 + 𝔮^m)/(1 + 𝔮^{m+L}) × (𝔮^m/𝔮^{m+L})² through
/// (λ, x₁, x₂) ↦ λ·Ad(n′(x₁)n(x₂))[α₀, 0, 0] and reads the image in the
/// coordinates (α/α₀ − 1, β/2α₀, γ/2α₀) modulo 𝔮^{m+L}.
pub fn hensel_orbit_check(
    f: &LocalField,
    alpha0: &KElem,
    m: u32,
    depth: u32,
) -> Result<HenselReport> {
    if alpha0.is_zero() {
        return Err(Error::Domain("α₀ must be nonzero".into()));
    }
    if m == 0 || depth == 0 {
        return Err(Error::Domain("m and the depth must be positive".into()));
    }
    let mi = m as i32;
    let top = mi + depth as i32;
    let width = upow(f.p(), depth);
    let two_a0 = f.int(2).mul(alpha0);
    let base = [*alpha0, f.zero(), f.zero()];
    let mut images = BTreeSet::new();
    let mut formulas_hold = true;
    let mut domain = 0u64;
    for s in 0..width {
        let t1 = f.from_residue(mi, s);
        let lambda = f.one().add(&t1);
        for r1 in 0..width {
            let x2 = f.from_residue(mi, r1);
            for r2 in 0..width {
                let x3 = f.from_residue(mi, r2);
                domain += 1;
                let x = GroupElem::n_prime(f, x2).mul(&GroupElem::n(f, x3))?;
                let img = x.conj_traceless(&base)?.map(|c| c.mul(&lambda));
                let y1 = img[0].div(alpha0)?.sub(&f.one());
                let y2 = img[1].div(&two_a0)?;
                let y3 = img[2].div(&two_a0)?;
                let two = f.int(2);
                let e1 = t1
                    .add(&two.mul(&x2).mul(&x3))
                    .add(&two.mul(&t1).mul(&x2).mul(&x3));
                let e2 = x3.mul(&lambda).neg();
                let e3 = x2.mul(&lambda).mul(&f.one().add(&x2.mul(&x3)));
                if !(y1.equals(&e1)? && y2.equals(&e2)? && y3.equals(&e3)?) {
                    formulas_hold = false;
                }
                let key = (
                    y1.residue(mi, top)?,
                    y2.residue(mi, top)?,
                    y3.residue(mi, top)?,
                );
                images.insert(key);
            }
        }
    }
    let distinct = images.len() as u64;
    let bijective = distinct == domain;
    Ok(HenselReport {
        alpha0_valuation: alpha0.ord()?,
        m,
        depth,
        domain,
        distinct_images: distinct,
        max_fiber: if distinct == 0 {
            0
        } else {
            domain.div_ceil(distinct)
        },
        formulas_hold,
        bijective,
    })
}

/// Both sides of the Weyl integral variant for a B⁰ function supported on
/// E⁰(m) and invariant under 1 + 𝔮^m dilation.
#[derive(Clone, Debug)]
pub struct WeylVariant {
    /// ∫_{B⁰} φ.
    pub lhs: Amplitude,
    /// |W|⁻¹ ∫_α |2α|² q^{−2m} Σ_w 𝔼_{x ∈ (G/H)[m]} φ(Ad(xw)[α, 0, 0]) dα.
    pub rhs: Amplitude,
    /// The same sum with the weight |2α|^{−2}.
    pub rhs_inverse_weight: Amplitude,
}

impl WeylVariant {
    pub fn agree(&self) -> bool {
        self.lhs == self.rhs
    }
}

pub fn weyl_variant_check(phi: &GridFnB, m: u32) -> Result<WeylVariant> {
    if m == 0 {
        return Err(Error::Domain("level m must be at least 1".into()));
    }
    check_cone_hypotheses(phi, m)?;
    let f = *phi.field();
    let backend = phi.backend();
    let lhs = phi.integral();
    let (lo, hi) = (phi.lo(), phi.hi());
    let mut hi_a = hi;
    hi_a[0] = hi[0].max(hi[0] - 1 + m as i32);
    let refined = phi.refine(lo, hi_a)?;
    let max_hi = (0..3).map(|i| hi_a[i]).max().expect("three axes");
    let width = (hi_a[0] - lo[0]) as u32;
    let cell = q_pow(f.q(), -(hi_a[0] as i64));
    let two = f.abs_two();
    let mut rhs = Amplitude::zero(backend);
    let mut rhs_inv = Amplitude::zero(backend);
    for r in 1..upow(f.p(), width) {
        let alpha = f.from_residue(lo[0], r);
        let v = alpha.ord()?;
        let depth = (max_hi - v - m as i32).max(1) as u32;
        let both = orbit_average(&refined, &alpha, m, depth)?.add(&orbit_average(
            &refined,
            &alpha.neg(),
            m,
            depth,
        )?);
        if both.is_zero() {
            continue;
        }
        let abs_2a = two.clone() * q_pow(f.q(), -(v as i64));
        let common =
            cell.clone() * q_pow(f.q(), -2 * m as i64) / BigRational::from_integer(2.into());
        let sq = abs_2a.clone() * abs_2a;
        rhs = rhs.add(&both.scale_rational(&(common.clone() * sq.clone())));
        rhs_inv = rhs_inv.add(&both.scale_rational(&(common / sq)));
    }
    Ok(WeylVariant {
        lhs,
        rhs,
        rhs_inverse_weight: rhs_inv,
    })
}

/// 𝔼_{x₁, x₂ ∈ 𝔮^m/𝔮^{m+L}} φ(Ad(n′(x₁)n(x₂))[α, 0, 0]).
fn orbit_average(phi: &GridFnB, alpha: &KElem, m: u32, depth: u32) -> Result<Amplitude> {
    let f = *phi.field();
    let width = upow(f.p(), depth);
    let base = [*alpha, f.zero(), f.zero()];
    let mut acc = Amplitude::zero(phi.backend());
    for r1 in 0..width {
        for r2 in 0..width {
            let x = GroupElem::n_prime(&f, f.from_residue(m as i32, r1))
                .mul(&GroupElem::n(&f, f.from_residue(m as i32, r2)))?;
            let y = x.conj_traceless(&base)?;
            acc = acc.add(&phi.eval(&[y[0], y[1], y[2], f.zero()])?);
        }
    }
    Ok(acc.scale(1, (width * width) as i128))
}

/// The three characterizations of cosets x = n′(x₁)n(x₂)H meeting E⁰(m).
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct NhClass {
    /// Some(0) when x ∈ (G/H)[m], Some(1) when xw ∈ (G/H)[m].
    pub witness: Option<u8>,
    /// Ad(x)[1, 0, 0] ∈ E⁰(m).
    pub some_tau: bool,
    /// Ad(x)τ ∈ E⁰(m) for every sampled τ ∈ E⁰.
    pub every_tau: bool,
}

impl NhClass {
    pub fn holds(&self) -> bool {
        self.witness.is_some()
    }

    pub fn consistent(&self) -> bool {
        self.holds() == self.some_tau && self.some_tau == self.every_tau
    }
}

pub fn nh_classifier(f: &LocalField, x1: &KElem, x2: &KElem, m: u32) -> Result<NhClass> {
    let mi = m as i32;
    let in_ideal = |x: &KElem| -> Result<bool> {
        if x.is_zero() {
            Ok(true)
        } else {
            x.in_ideal(mi)
        }
    };
    let witness = if in_ideal(x1)? && in_ideal(x2)? {
        Some(0)
    } else if !x2.is_zero() && in_ideal(&x2.neg())? && in_ideal(&x1.add(&x2.inv()?))? {
        Some(1)
    } else {
        None
    };
    let x = GroupElem::n_prime(f, *x1).mul(&GroupElem::n(f, *x2))?;
    let member = |tau: KElem| -> Result<bool> {
        e0m_membership(&x.conj_traceless(&[tau, f.zero(), f.zero()])?, m)
    };
    let some_tau = member(f.one())?;
    let mut every_tau = true;
    for tau in [
        f.one(),
        f.int(-1),
        f.pi_pow(-3),
        f.from_parts(2, 2),
        f.from_parts(-1, f.p() + 1),
    ] {
        every_tau &= member(tau)?;
    }
    Ok(NhClass {
        witness,
        some_tau,
        every_tau,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct NhGridReport {
    pub points: u64,
    pub in_class: u64,
    pub consistent: bool,
    pub disjoint: bool,
}

/// Runs the classifier on every x₁, x₂ ∈ ϖ^lo·r with r < q^{hi−lo}, and
/// checks that xw ∉ (G/H)[m] whenever x ∈ (G/H)[m] with x₂ ≠ 0.
pub fn nh_grid_check(f: &LocalField, m: u32, lo: i32, hi: i32) -> Result<NhGridReport> {
    let width = upow(f.p(), (hi - lo) as u32);
    let mut points = 0;
    let mut in_class = 0;
    let mut consistent = true;
    let mut disjoint = true;
    for r1 in 0..width {
        for r2 in 0..width {
            let x1 = f.from_residue(lo, r1);
            let x2 = f.from_residue(lo, r2);
            let c = nh_classifier(f, &x1, &x2, m)?;
            points += 1;
            in_class += c.holds() as u64;
            consistent &= c.consistent();
            if c.witness == Some(0) && !x2.is_zero() {
                let y1 = x1.add(&x2.inv()?);
                let y2 = x2.neg();
                let mi = m as i32;
                if (y1.is_zero() || y1.in_ideal(mi)?) && y2.in_ideal(mi)? {
                    disjoint = false;
                }
            }
        }
    }
    Ok(NhGridReport {
        points,
        in_class,
        consistent,
        disjoint,
    })
}

/// Whether h ∈ K[m] g K[m], by searching k ∈ K[m]/K[m + r(h)] with
/// g⁻¹kh ∈ K[m].
pub fn coset_contains(g: &GroupElem, h: &GroupElem, m: u32) -> Result<bool> {
    let f = *g.field();
    let l = m + h.cartan_exponent()?;
    let ginv = g.inverse()?;
    if l == m {
        return ginv.mul(h)?.in_k(m);
    }
    for k in km_average_reps(&f, m, l)? {
        if ginv.mul(&k)?.mul(h)?.in_k(m)? {
            return Ok(true);
        }
    }
    Ok(false)
}

/// vol(K[m] g K[m]) / vol(K[m]) = [K[m] : K[m] ∩ gK[m]g⁻¹], counted on
/// K[m]/K[m + r(g)].  Level m = 0 uses PGL2(𝔬/𝔮^{r+1}).
pub fn coset_index(g: &GroupElem, m: u32) -> Result<BigRational> {
    let f = *g.field();
    let r = g.cartan_exponent()?;
    let ginv = g.inverse()?;
    let (total, kept) = if m == 0 {
        let reps = pgl2_reps(f.p(), r + 1);
        let mut kept = 0u64;
        for k in &reps {
            let k = GroupElem::from_ints(&f, k.0.map(|x| x as i64))?;
            kept += ginv.mul(&k)?.mul(g)?.in_k(0)? as u64;
        }
        (reps.len() as u64, kept)
    } else {
        let reps = km_average_reps(&f, m, m + r)?;
        let mut kept = 0u64;
        for k in &reps {
            kept += ginv.mul(k)?.mul(g)?.in_k(m)? as u64;
        }
        (reps.len() as u64, kept)
    };
    if kept == 0 {
        return Err(Error::Model(
            "no element of K[m] conjugates into K[m]".into(),
        ));
    }
    Ok(BigRational::new(total.into(), kept.into()))
}

/// A coset K[m] w^ε a(y) K[m] of N(H), y = ϖ^j u.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct NhCoset {
    pub eps: u8,
    pub j: i32,
    pub unit: u64,
}

fn nh_rep(f: &LocalField, c: &NhCoset) -> Result<GroupElem> {
    let a = GroupElem::a(f, f.from_parts(c.j, c.unit))?;
    if c.eps == 1 {
        GroupElem::w(f).mul(&a)
    } else {
        Ok(a)
    }
}

/// Units of 𝔬 modulo 1 + 𝔮^m.
fn unit_classes(p: u64, m: u32) -> Vec<u64> {
    (1..upow(p, m)).filter(|u| u % p != 0).collect()
}

/// All classes w^ε a(ϖ^j u)·a(1 + 𝔮^m) lying in K[m] g K[m].
pub fn nh_cosets_in(g: &GroupElem, m: u32) -> Result<Vec<NhCoset>> {
    let f = *g.field();
    let r = g.cartan_exponent()? as i32;
    let js: Vec<i32> = if r == 0 { vec![0] } else { vec![-r, r] };
    let mut out = Vec::new();
    for eps in [0u8, 1] {
        for &j in &js {
            for unit in unit_classes(f.p(), m) {
                let c = NhCoset { eps, j, unit };
                if coset_contains(g, &nh_rep(&f, &c)?, m)? {
                    out.push(c);
                }
            }
        }
    }
    Ok(out)
}

/// One term c·1_{K[m] g₀ K[m]} of an observable.
#[derive(Clone, Debug)]
pub struct CosetTerm {
    pub label: String,
    pub coeff: BigRational,
    pub g0: GroupElem,
}

/// A finite combination of K[m] double-coset indicators.
#[derive(Clone, Debug)]
pub struct TestObservable {
    pub label: String,
    pub m: u32,
    pub terms: Vec<CosetTerm>,
}

impl TestObservable {
    pub fn coset(label: &str, g0: GroupElem, m: u32) -> Self {
        let term = CosetTerm {
            label: label.to_string(),
            coeff: BigRational::one(),
            g0,
        };
        TestObservable {
            label: label.to_string(),
            m,
            terms: vec![term],
        }
    }

    /// Σ coeff·Ψ over observables of one level.
    pub fn combine(label: &str, parts: &[(BigRational, TestObservable)]) -> Result<Self> {
        let m = parts
            .first()
            .map(|(_, o)| o.m)
            .ok_or_else(|| Error::Config("empty combination".into()))?;
        let mut terms = Vec::new();
        for (c, o) in parts {
            if o.m != m {
                return Err(Error::Config("observables of different levels".into()));
            }
            terms.extend(o.terms.iter().map(|t| CosetTerm {
                coeff: t.coeff.clone() * c,
                ..t.clone()
            }));
        }
        Ok(TestObservable {
            label: label.to_string(),
            m,
            terms,
        })
    }

    /// Whether the cosets of distinct terms are pairwise disjoint.
    pub fn terms_disjoint(&self) -> Result<bool> {
        for (i, a) in self.terms.iter().enumerate() {
            for b in &self.terms[i + 1..] {
                if coset_contains(&a.g0, &b.g0, self.m)? {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }
}

/// The observables used by the suites at level m: 1_{K[m]}, the Weyl
/// coset, torus displacements a(ϖ), a(ϖ²), a(ϖ^{2m+1}), w·a(ϖ), the
/// off-torus coset n(1), and 1_{K[m]} + 1_{K[m]a(ϖ)K[m]}.
pub fn standard_battery(f: &LocalField, m: u32) -> Result<Vec<TestObservable>> {
    let a = |r: i32| GroupElem::a(f, f.pi_pow(r));
    let w = GroupElem::w(f);
    let mut out = vec![
        TestObservable::coset("K[m]", GroupElem::identity(f), m),
        TestObservable::coset("w", w, m),
        TestObservable::coset("a(p)", a(1)?, m),
        TestObservable::coset("a(p^2)", a(2)?, m),
        TestObservable::coset("w a(p)", w.mul(&a(1)?)?, m),
        TestObservable::coset(&format!("a(p^{})", 2 * m + 1), a(2 * m as i32 + 1)?, m),
        TestObservable::coset("n(1)", GroupElem::n(f, f.one()), m),
    ];
    let sum = TestObservable::combine(
        "K[m] + a(p)",
        &[
            (BigRational::one(), out[0].clone()),
            (BigRational::one(), out[2].clone()),
        ],
    )?;
    out.push(sum);
    Ok(out)
}

/// φ^U as a grid, together with the profile I of Φ.
#[derive(Clone, Debug)]
pub struct SmoothedKernel {
    pub m: u32,
    pub phi_u: GridFnB,
    pub profile: GridFnB,
}

impl SmoothedKernel {
    pub fn new(kernel: &MicrolocalKernel, m: u32) -> Result<Self> {
        if m < kernel.n0 {
            return Err(Error::Config(format!(
                "smoothing level m = {m} is below N0 = {}",
                kernel.n0
            )));
        }
        let phi = kernel.compute_phi()?;
        Ok(SmoothedKernel {
            m,
            phi_u: phi.smooth_adjoint(m)?,
            profile: phi.integrate_middle()?,
        })
    }

    /// ⟨Ad(g)φ^U, φ^U⟩ on the grid.
    pub fn pairing_brute(&self, g: &GroupElem) -> Result<Amplitude> {
        self.phi_u.adjoint(g)?.inner(&self.phi_u)
    }

    /// ⟨Ad(w^ε a(ϖ^j u))φ^U, φ^U⟩ = q^{2m−|j|} ∫ |2α|^{−2} I(±α, δ) conj I(α, δ).
    pub fn pairing_closed(&self, eps: u8, j: i32) -> Result<Amplitude> {
        let g = &self.profile;
        let f = g.field();
        let partner = if eps == 1 {
            g.reflect_axis(0)
        } else {
            g.clone()
        };
        let (lo, hi) = (g.lo(), g.hi());
        let width = (hi[0] - lo[0]) as u32;
        let cell = q_pow(f.q(), -(hi[0] as i64 + hi[3] as i64));
        let two = f.abs_two();
        let mut acc = Amplitude::zero(g.backend());
        for idx in 0..g.len() {
            let v = &g.values()[idx];
            let w = &partner.values()[idx];
            if v.is_zero() || w.is_zero() {
                continue;
            }
            let r = g.residues(idx)[0];
            if r == 0 || vp_u64(r, f.p()) >= width {
                return Err(Error::Window(
                    "I does not vanish on a cell containing α = 0".into(),
                ));
            }
            let val = lo[0] as i64 + vp_u64(r, f.p()) as i64;
            let abs_2a = two.clone() * q_pow(f.q(), -val);
            let weight = cell.clone() / (abs_2a.clone() * abs_2a);
            acc = acc.add(&w.mul(&v.conj()).scale_rational(&weight));
        }
        Ok(acc.scale_rational(&q_pow(f.q(), 2 * self.m as i64 - j.unsigned_abs() as i64)))
    }
}

/// Per-coset contributions to the left side.
#[derive(Clone, Debug, Serialize)]
pub struct CosetContribution {
    pub label: String,
    pub nh_classes: usize,
    pub volume: String,
    pub pairing: String,
}

#[derive(Clone, Debug)]
pub struct MainTermLhs {
    pub brute: Amplitude,
    pub closed: Amplitude,
    pub contributions: Vec<CosetContribution>,
}

/// Σ_C Ψ(C)·vol(C)·ζ(1)·⟨Ad(g_C)φ^U, φ^U⟩ with dg normalized so that
/// vol(K[m]) = q^{−3m}.  The brute path counts vol(C) and pairs grids; the
/// closed path locates C in K[m]N(H)K[m] and uses vol(C) = q^{−3m+|j|} with
/// the profile formula.  Disagreement between the paths is an error.
pub fn main_term_lhs(
    kernel: &MicrolocalKernel,
    smoothed: &SmoothedKernel,
    psi: &TestObservable,
) -> Result<MainTermLhs> {
    let m = psi.m;
    if smoothed.m != m {
        return Err(Error::Config(
            "smoothing level differs from the observable level".into(),
        ));
    }
    let f = kernel.field;
    let backend = kernel.backend;
    let zeta = f.zeta(1);
    let vol_km = q_pow(f.q(), -3 * m as i64);
    let mut brute = Amplitude::zero(backend);
    let mut closed = Amplitude::zero(backend);
    let mut contributions = Vec::new();
    for term in &psi.terms {
        let index = coset_index(&term.g0, m)?;
        let vol = vol_km.clone() * index;
        let pair_b = smoothed.pairing_brute(&term.g0)?;
        let b = pair_b.scale_rational(&(vol.clone() * zeta.clone() * term.coeff.clone()));
        let classes = nh_cosets_in(&term.g0, m)?;
        let c = match classes.first() {
            Some(c) => {
                let vol_c = q_pow(f.q(), -3 * m as i64 + c.j.unsigned_abs() as i64);
                if vol_c != vol {
                    return Err(Error::Model(format!(
                        "coset volume mismatch for {}: counted {vol}, closed {vol_c}",
                        term.label
                    )));
                }
                smoothed
                    .pairing_closed(c.eps, c.j)?
                    .scale_rational(&(vol_c * zeta.clone() * term.coeff.clone()))
            }
            None => Amplitude::zero(backend),
        };
        if !b.approx_eq(&c, 1e-9) {
            return Err(Error::Model(format!(
                "main-term paths disagree on {}: brute {}, closed {}",
                term.label,
                b.render(),
                c.render()
            )));
        }
        contributions.push(CosetContribution {
            label: term.label.clone(),
            nh_classes: classes.len(),
            volume: vol.to_string(),
            pairing: pair_b.render(),
        });
        brute = brute.add(&b);
        closed = closed.add(&c);
    }
    Ok(MainTermLhs {
        brute,
        closed,
        contributions,
    })
}

/// q^{N−N₀}·½·Σ_w ∫ Ψ(w a(y)) dy/|y|, summed over the classes y(1 + 𝔮^m),
/// each of measure q^{−m}.
pub fn main_term_rhs(kernel: &MicrolocalKernel, psi: &TestObservable) -> Result<Amplitude> {
    let f = kernel.field;
    let m = psi.m;
    let class_vol = f.vol_multiplicative(m);
    let mut integral = BigRational::zero();
    for term in &psi.terms {
        let count = nh_cosets_in(&term.g0, m)?.len() as i64;
        integral +=
            term.coeff.clone() * class_vol.clone() * BigRational::from_integer(count.into());
    }
    let scale =
        q_pow(f.q(), kernel.n as i64 - kernel.n0 as i64) / BigRational::from_integer(2.into());
    Ok(Amplitude::from_rational(
        kernel.backend,
        &(scale * integral),
    ))
}

/// N − N₀ ≥ 2m + ord2 + 1.
pub fn admissible(n: u32, n0: u32, m: u32, ord2: u32) -> bool {
    n > n0 + 2 * m + ord2
}

#[derive(Clone, Debug, Serialize)]
pub struct MainTermRow {
    pub n: u32,
    pub observable: String,
    pub admissible: bool,
    pub lhs: String,
    pub rhs: String,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct MainTermScan {
    pub rows: Vec<MainTermRow>,
    /// Smallest scanned N from which every observable passes.
    pub threshold: Option<u32>,
}

/// Evaluates both sides for each N and each observable of the standard
/// battery at level m.
pub fn main_term_scan(
    p: u64,
    n0: u32,
    xi: u64,
    m: u32,
    ns: &[u32],
    backend: Backend,
) -> Result<MainTermScan> {
    let mut rows = Vec::new();
    let mut passing = Vec::new();
    for &n in ns {
        let field = LocalField::new(p, LocalField::required_precision(p, n, n0, 2 * m + 2))?;
        let kernel = MicrolocalKernel::build(&field, n, SigmaClass::new(p, n0, xi)?, backend)?;
        let smoothed = SmoothedKernel::new(&kernel, m)?;
        let mut all = true;
        for psi in standard_battery(&field, m)? {
            let lhs = main_term_lhs(&kernel, &smoothed, &psi)?;
            let rhs = main_term_rhs(&kernel, &psi)?;
            let pass = lhs.brute.approx_eq(&rhs, 1e-9);
            all &= pass;
            rows.push(MainTermRow {
                n,
                observable: psi.label.clone(),
                admissible: admissible(n, n0, m, field.ord2()),
                lhs: lhs.brute.render(),
                rhs: rhs.render(),
                pass,
            });
        }
        passing.push((n, all));
    }
    let mut threshold = None;
    for &(n, ok) in passing.iter().rev() {
        if !ok {
            break;
        }
        threshold = Some(n);
    }
    Ok(MainTermScan { rows, threshold })
}
