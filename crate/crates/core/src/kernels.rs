//! The microlocal kernel f attached to (N, σ, N₀), its realization ♥¹f on
//! M2(k), and the Fourier kernel Φ = ℱ𝔖♥¹f.

use std::collections::HashMap;

use num_rational::BigRational;
use rayon::prelude::*;
use serde::Serialize;

use crate::amplitude::{Amplitude, Backend};
use crate::characters::{block, check_levels, AdditiveChar, MultChar, SigmaClass};
use crate::error::{Error, Result};
use crate::field::{invmod, mulmod, q_pow, upow, vp_u64, KElem, LocalField};
use crate::grid::{Chart, GridFnB};
use crate::group::GroupElem;

/// N₁ = ⌊N/2⌋ − ord2 and N₂ = ⌈N/2⌉.
pub fn level_split(n: u32, ord2: u32) -> (u32, u32) {
    (n / 2 - ord2, n.div_ceil(2))
}

/// vol(𝔍) = |2|⁻¹ q^{−N} ζ(1)⁻¹.
pub fn vol_j(field: &LocalField, n: u32) -> BigRational {
    let q = field.q() as i64;
    field.abs_two().recip()
        * q_pow(field.q(), -(n as i64))
        * BigRational::new((q - 1).into(), q.into())
}

/// For g ∈ 𝔍 returns det g̃ / g̃₁₁² mod p^N (g̃ the integral lift with unit
/// determinant); `None` off 𝔍.
pub fn j_class(g: &GroupElem, n: u32, n1: u32, n2: u32) -> Result<Option<u64>> {
    let [g11, g12, g21, _] = *g.entries();
    let det = g.det();
    if !det.is_unit()? || !g12.in_ideal(n1 as i32)? || !g21.in_ideal(n2 as i32)? {
        return Ok(None);
    }
    let u = det.div(&g11.mul(&g11))?;
    Ok(Some(u.residue(0, n as i32)?))
}

/// The projector kernel f_ω(g) = vol(𝔍)⁻¹ ω(det g̃ / g̃₁₁²) supported on 𝔍.
#[derive(Clone, Debug)]
pub struct FOmega {
    pub omega: MultChar,
    pub n: u32,
    pub n1: u32,
    pub n2: u32,
    pub vol_j: BigRational,
}

impl FOmega {
    pub fn new(field: &LocalField, omega: MultChar) -> Result<Self> {
        if omega.is_quadratic() {
            return Err(Error::Domain(format!("{omega:?} is quadratic")));
        }
        let n = omega.level();
        let (n1, n2) = level_split(n, field.ord2());
        Ok(FOmega {
            omega,
            n,
            n1,
            n2,
            vol_j: vol_j(field, n),
        })
    }

    pub fn eval(&self, g: &GroupElem, backend: Backend) -> Result<Amplitude> {
        match j_class(g, self.n, self.n1, self.n2)? {
            None => Ok(Amplitude::zero(backend)),
            Some(u) => {
                let v = self.omega.eval(u, backend).expect("unit class");
                Ok(v.scale_rational(&self.vol_j.recip()))
            }
        }
    }
}

/// The character sum S(u) = Σ_{ω ∈ 𝒳_N^σ} ω(u), tabulated on (𝔬/𝔮^N)^×.
#[derive(Clone, Debug)]
pub struct BlockSum {
    modulus: u64,
    values: Vec<Option<Amplitude>>,
}

impl BlockSum {
    pub fn new(p: u64, n: u32, chars: &[MultChar], backend: Backend) -> Self {
        let modulus = upow(p, n);
        let values = (0..modulus)
            .into_par_iter()
            .map(|u| {
                if u % p == 0 {
                    return None;
                }
                let ord = chars.first().map_or(1, |w| w.value_order());
                let mut counts = vec![0i64; ord as usize];
                for w in chars {
                    counts[w.exponent(u).expect("unit") as usize] += 1;
                }
                Some(Amplitude::from_root_counts(backend, &counts, ord))
            })
            .collect();
        BlockSum { modulus, values }
    }

    pub fn get(&self, u: u64) -> Option<&Amplitude> {
        self.values[(u % self.modulus) as usize].as_ref()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct KernelMeta {
    pub p: u64,
    pub n: u32,
    pub n0: u32,
    pub n1: u32,
    pub n2: u32,
    pub sigma: u64,
    pub vol_j: String,
    pub block_size: usize,
}

/// f = Σ_{ω ∈ 𝒳_N^σ} f_ω together with its realization ♥¹f on the source chart.
#[derive(Clone, Debug)]
pub struct MicrolocalKernel {
    pub field: LocalField,
    pub n: u32,
    pub n0: u32,
    pub n1: u32,
    pub n2: u32,
    pub sigma: SigmaClass,
    pub block: Vec<MultChar>,
    pub vol_j: BigRational,
    pub backend: Backend,
    pub block_sum: BlockSum,
    pub heart1: GridFnB,
}

/// Windows on which ♥¹f is supported and locally constant: a mod 𝔮^N,
/// b mod 2𝔮^{N₁}, c mod 2𝔮^{N₂}, d mod 𝔮^{N₀}.  `margin` refines the
/// smoothness side by that many digits.
pub fn heart_windows(
    n: u32,
    n0: u32,
    n1: u32,
    n2: u32,
    ord2: u32,
    margin: i32,
) -> ([i32; 4], [i32; 4]) {
    let (n, n0, n1, n2, e) = (n as i32, n0 as i32, n1 as i32, n2 as i32, ord2 as i32);
    let lo = [n - n0, n1, n2, 0];
    let hi = [n + margin, n1 + e + margin, n2 + e + margin, n0 + margin];
    (lo, hi)
}

impl MicrolocalKernel {
    pub fn build(field: &LocalField, n: u32, sigma: SigmaClass, backend: Backend) -> Result<Self> {
        if sigma.p != field.p() {
            return Err(Error::Config(format!(
                "σ over p = {} used with p = {}",
                sigma.p,
                field.p()
            )));
        }
        let n0 = sigma.n0;
        check_levels(field.p(), n, n0)?;
        let need = LocalField::required_precision(field.p(), n, n0, 0);
        if field.precision() < need {
            return Err(Error::Config(format!(
                "precision {} below the required {need}",
                field.precision()
            )));
        }
        let chars = block(&sigma, n)?;
        let (n1, n2) = level_split(n, field.ord2());
        let block_sum = BlockSum::new(field.p(), n, &chars, backend);
        let (lo, hi) = heart_windows(n, n0, n1, n2, field.ord2(), 0);
        let mut k = MicrolocalKernel {
            field: *field,
            n,
            n0,
            n1,
            n2,
            sigma,
            block: chars,
            vol_j: vol_j(field, n),
            backend,
            block_sum,
            heart1: GridFnB::zeros(field, Chart::Source, lo, lo, backend)?,
        };
        k.heart1 = k.heart_from_characters(lo, hi)?;
        Ok(k)
    }

    pub fn meta(&self) -> KernelMeta {
        KernelMeta {
            p: self.field.p(),
            n: self.n,
            n0: self.n0,
            n1: self.n1,
            n2: self.n2,
            sigma: self.sigma.xi,
            vol_j: self.vol_j.to_string(),
            block_size: self.block.len(),
        }
    }

    /// The summands f_ω.
    pub fn f_omegas(&self) -> Result<Vec<FOmega>> {
        self.block
            .iter()
            .map(|w| FOmega::new(&self.field, w.clone()))
            .collect()
    }

    /// f(g) = vol(𝔍)⁻¹ S(det g̃ / g̃₁₁²) on 𝔍.
    pub fn eval_group(&self, g: &GroupElem) -> Result<Amplitude> {
        match j_class(g, self.n, self.n1, self.n2)? {
            None => Ok(Amplitude::zero(self.backend)),
            Some(u) => Ok(self
                .block_sum
                .get(u)
                .expect("unit class")
                .scale_rational(&self.vol_j.recip())),
        }
    }

    /// ♥¹f at a point of B in source coordinates: f(x) when det x is a unit, else 0.
    pub fn heart1_at(&self, x: &[KElem; 4]) -> Result<Amplitude> {
        let f = &self.field;
        let [a, b, c, d] = x;
        let half_a = a.mul(&f.ratio(1, 2)?);
        let e = [d.sub(&half_a), *b, *c, d.add(&half_a)];
        for v in &e {
            if !v.is_integral()? {
                return Ok(Amplitude::zero(self.backend));
            }
        }
        let det = e[0].mul(&e[3]).sub(&e[1].mul(&e[2]));
        if !det.is_unit()? {
            return Ok(Amplitude::zero(self.backend));
        }
        self.eval_group(&GroupElem::new(f, e)?)
    }

    /// ♥¹f tabulated through the character sum on the given windows.
    pub fn heart_from_characters(&self, lo: [i32; 4], hi: [i32; 4]) -> Result<GridFnB> {
        GridFnB::from_fn(&self.field, Chart::Source, lo, hi, self.backend, |x| {
            self.heart1_at(x)
        })
    }

    /// C₀ = q^{2N−N₀}|2|.
    pub fn c0(&self) -> BigRational {
        q_pow(self.field.q(), 2 * self.n as i64 - self.n0 as i64) * self.field.abs_two()
    }

    pub fn psi_sigma(&self) -> AdditiveChar {
        self.sigma.psi(&self.field)
    }

    /// The closed form C₀·1_{𝔬^×}(d)1_{𝔮^{N−N₀}}(a)1_{𝔮^{N₁}}(b)1_{𝔮^{N₂}}(c)·ψ_σ((ad − bc)/(ϖ^N d²)).
    pub fn heart_closed_at(&self, x: &[KElem; 4]) -> Result<Amplitude> {
        let [a, b, c, d] = x;
        let inside = d.is_unit()?
            && a.in_ideal((self.n - self.n0) as i32)?
            && b.in_ideal(self.n1 as i32)?
            && c.in_ideal(self.n2 as i32)?;
        if !inside {
            return Ok(Amplitude::zero(self.backend));
        }
        let t = a
            .mul(d)
            .sub(&b.mul(c))
            .div(&self.field.pi_pow(self.n as i32).mul(&d.mul(d)))?;
        Ok(self
            .psi_sigma()
            .eval(&t, self.backend)?
            .scale_rational(&self.c0()))
    }

    pub fn heart_f_closed_form(&self, lo: [i32; 4], hi: [i32; 4]) -> Result<GridFnB> {
        GridFnB::from_fn(&self.field, Chart::Source, lo, hi, self.backend, |x| {
            self.heart_closed_at(x)
        })
    }

    /// Φ = ℱ𝔖♥¹f on the dual chart.
    pub fn compute_phi(&self) -> Result<GridFnB> {
        self.heart1.symmetrize().fourier()
    }

    /// The odd-q closed form q^{−N₀}·1(α ∈ ϖ^{−N}𝔬^×)·co(δ/(ϖ^N α)) with
    /// co(t) = (ψ_σ(t) + ψ_σ(−t))/2, on the windows of `like`.
    pub fn phi_closed_form(&self, like: &GridFnB) -> Result<GridFnB> {
        if self.field.ord2() != 0 {
            return Err(Error::Config("the closed form of Φ needs odd q".into()));
        }
        let psi = self.psi_sigma();
        let scale = q_pow(self.field.q(), -(self.n0 as i64));
        let (n, n0, n1, n2) = (
            self.n as i32,
            self.n0 as i32,
            self.n1 as i32,
            self.n2 as i32,
        );
        let backend = self.backend;
        GridFnB::from_fn(
            &self.field,
            Chart::Dual,
            like.lo(),
            like.hi(),
            backend,
            |x| {
                let [al, be, ga, de] = x;
                let inside = al.valuation() == Some(-n)
                    && be.in_ideal(-n2)?
                    && ga.in_ideal(-n1)?
                    && de.in_ideal(-n0)?;
                if !inside {
                    return Ok(Amplitude::zero(backend));
                }
                let t = de.div(&self.field.pi_pow(n).mul(al))?;
                let co = psi
                    .eval(&t, backend)?
                    .add(&psi.eval(&t.neg(), backend)?)
                    .scale(1, 2);
                Ok(co.scale_rational(&scale))
            },
        )
    }
}

/// Outcome of comparing the character path with the closed form of ♥¹f
/// on every cell of the 𝔍-grid.
#[derive(Clone, Debug, Serialize)]
pub struct KernelIdentityReport {
    pub cells: u64,
    pub classes: usize,
    pub mismatches: usize,
}

impl KernelIdentityReport {
    pub fn pass(&self) -> bool {
        self.mismatches == 0
    }
}

/// Streams the grid a ∈ 𝔬/𝔮^{N+ord2}, b ∈ 𝔮^{N₁}/𝔮^N, c ∈ 𝔮^{N₂}/𝔮^N,
/// d ∈ 2⁻¹𝔬/𝔮^N and checks ♥¹f (through S(u)) against the closed form.
/// Cells are grouped by (det/g̃₁₁² mod 𝔮^N, phase numerator) so each
/// distinct pair of values is compared once, exactly.
pub fn check_kernel_identity(k: &MicrolocalKernel) -> Result<KernelIdentityReport> {
    let p = k.field.p();
    let e = k.field.ord2();
    let n = k.n;
    let pn = upow(p, n);
    let wide = upow(p, n + e);
    let nb = upow(p, n - k.n1);
    let nc = upow(p, n - k.n2);
    let bc_step = upow(p, k.n1 + k.n2);
    let a_support = n - k.n0;
    let xi = k.sigma.xi;
    let inv2 = if e == 0 {
        invmod(2, pn).expect("odd p")
    } else {
        0
    };

    type Key = (Option<u64>, Option<u64>);
    let hist: HashMap<Key, u64> = (0..wide * wide)
        .into_par_iter()
        .fold(HashMap::new, |mut acc: HashMap<Key, u64>, idx| {
            let (ra, rd) = (idx / wide, idx % wide);
            let (g11, g22, dval, d_unit, ad) = if e == 0 {
                let half_a = mulmod(ra % pn, inv2, pn);
                let d = rd % pn;
                (
                    (d + pn - half_a) % pn,
                    (d + half_a) % pn,
                    d,
                    !d.is_multiple_of(p),
                    mulmod(ra % pn, d, pn),
                )
            } else {
                if (rd + wide - ra) % 2 == 1 {
                    *acc.entry((None, None)).or_default() += nb * nc;
                    return acc;
                }
                let g11 = ((rd + wide - ra) % wide) / 2 % pn;
                let g22 = ((rd + ra) % wide) / 2 % pn;
                let d = (rd / 2) % pn;
                (g11, g22, d, rd % 4 == 2, mulmod(ra, rd / 2, pn))
            };
            let a_in = ra == 0 || vp_u64(ra, p) >= a_support;
            let g11_sq_inv = if g11 % p != 0 {
                invmod(mulmod(g11, g11, pn), pn)
            } else {
                None
            };
            let d_sq_inv = if d_unit {
                invmod(mulmod(dval, dval, pn), pn)
            } else {
                None
            };
            let g11g22 = mulmod(g11, g22, pn);
            for rb in 0..nb {
                for rc in 0..nc {
                    let bc = mulmod(bc_step % pn, mulmod(rb, rc, pn), pn);
                    let det = (g11g22 + pn - bc) % pn;
                    let lhs = match g11_sq_inv {
                        Some(inv) if !det.is_multiple_of(p) => Some(mulmod(det, inv, pn)),
                        _ => None,
                    };
                    let rhs = match d_sq_inv {
                        Some(inv) if a_in => {
                            let num = (ad + pn - bc) % pn;
                            Some(mulmod(mulmod(num, inv, pn), xi % pn, pn))
                        }
                        _ => None,
                    };
                    *acc.entry((lhs, rhs)).or_default() += 1;
                }
            }
            acc
        })
        .reduce(HashMap::new, |mut a, b| {
            for (key, c) in b {
                *a.entry(key).or_default() += c;
            }
            a
        });

    let vol_inv = k.vol_j.recip();
    let c0 = k.c0();
    let mut mismatches = 0;
    let mut cells = 0;
    for (&(lhs, rhs), &count) in &hist {
        cells += count;
        let l = match lhs {
            Some(u) => k
                .block_sum
                .get(u)
                .expect("unit class")
                .scale_rational(&vol_inv),
            None => Amplitude::zero(k.backend),
        };
        let r = match rhs {
            Some(t) => Amplitude::root_of_unity(k.backend, t as i64, pn).scale_rational(&c0),
            None => Amplitude::zero(k.backend),
        };
        if !l.approx_eq(&r, 1e-9) {
            mismatches += 1;
        }
    }
    Ok(KernelIdentityReport {
        cells,
        classes: hist.len(),
        mismatches,
    })
}

/// I(α, δ) = ∫_{β,γ} Φ(α, β, γ, δ).
#[derive(Clone, Debug)]
pub struct ProfileI {
    pub n: u32,
    pub grid: GridFnB,
}

pub fn profile_i(phi: &GridFnB, n: u32) -> Result<ProfileI> {
    if phi.chart() != Chart::Dual {
        return Err(Error::ChartMismatch(
            "profile_I needs the dual chart".into(),
        ));
    }
    Ok(ProfileI {
        n,
        grid: phi.integrate_middle()?,
    })
}

impl ProfileI {
    /// I(−α, δ).
    pub fn weyl_reflect(&self) -> ProfileI {
        ProfileI {
            n: self.n,
            grid: self.grid.reflect_axis(0),
        }
    }

    /// (α, δ) ↦ q^{−N} I(ϖ^{−N}α, δ), supported on α ∈ 𝔬^×.
    pub fn rescaled(&self) -> GridFnB {
        let q = self.grid.field().q();
        self.grid
            .rescale([self.n as i32, 0, 0, 0])
            .scale_rational(&q_pow(q, -(self.n as i64)))
    }

    /// ∫ |2α|^{−2} |I(α, δ)|² dα dδ.
    pub fn normalization_integral(&self) -> Result<Amplitude> {
        let g = &self.grid;
        let f = g.field();
        let (lo, hi) = (g.lo(), g.hi());
        let cell = q_pow(f.q(), -(hi[0] as i64 + hi[3] as i64));
        let two = f.abs_two();
        let mut acc = Amplitude::zero(g.backend());
        for idx in 0..g.len() {
            let v = &g.values()[idx];
            if v.is_zero() {
                continue;
            }
            let r = g.residues(idx)[0];
            let width = (hi[0] - lo[0]) as u32;
            if r == 0 || vp_u64(r, f.p()) >= width {
                return Err(Error::Window(
                    "I does not vanish on a cell containing α = 0".into(),
                ));
            }
            let val = lo[0] as i64 + vp_u64(r, f.p()) as i64;
            let abs_2a = two.clone() * q_pow(f.q(), -val);
            let w = cell.clone() / (abs_2a.clone() * abs_2a);
            acc = acc.add(&v.norm_sqr().scale_rational(&w));
        }
        Ok(acc)
    }
}

/// q^{N−N₀}/(2ζ(1)).
pub fn expected_normalization(field: &LocalField, n: u32, n0: u32) -> BigRational {
    let q = field.q() as i64;
    q_pow(field.q(), n as i64 - n0 as i64) * BigRational::new((q - 1).into(), (2 * q).into())
}

/// The five properties of Φ checked on the computed grid.
#[derive(Clone, Debug, Serialize)]
pub struct PhiReport {
    pub support: bool,
    pub smoothness: bool,
    pub dilation: bool,
    pub weyl: bool,
    pub commutes: bool,
    pub normalization: String,
    pub expected_normalization: String,
    pub normalization_ok: bool,
}

impl PhiReport {
    pub fn pass(&self) -> bool {
        self.support
            && self.smoothness
            && self.dilation
            && self.weyl
            && self.commutes
            && self.normalization_ok
    }
}

/// Checks support, unit-dilation invariance, Weyl symmetry, 𝔖-compatibility
/// and the normalization of Φ.  Support is tested on a grid one digit finer
/// than the kernel windows, so the Fourier transform can see past them.
pub fn verify_phi(k: &MicrolocalKernel, phi: &GridFnB) -> Result<PhiReport> {
    let f = &k.field;
    let (lo, hi) = heart_windows(k.n, k.n0, k.n1, k.n2, f.ord2(), 1);
    let fine = k.heart_from_characters(lo, hi)?;
    let smoothness = fine.approx_eq(&k.heart1, 1e-9)?;
    let phi_fine = fine.symmetrize().fourier()?;
    let n = k.n as i32;
    let alpha_ok = phi_fine.values().iter().enumerate().all(|(idx, v)| {
        let r = phi_fine.residues(idx)[0];
        let al = f.from_residue(phi_fine.lo()[0], r);
        v.is_zero() || al.valuation() == Some(-n)
    });
    let (dlo, dhi) = (phi.lo(), phi.hi());
    let e = f.ord2() as i32;
    let claimed = dlo[1] >= -(k.n2 as i32) - e
        && dlo[2] >= -(k.n1 as i32) - e
        && dlo[3] >= -(k.n0 as i32)
        && dhi[0] <= -n + k.n0 as i32;
    let support = alpha_ok && claimed && phi_fine.approx_eq(phi, 1e-9)?;

    let mut dilation = true;
    let step = upow(f.p(), k.n0);
    for t in 1..f.p() * f.p() {
        let u = f.int(1 + (t * step) as i64);
        dilation &= phi.dilate(&u, true)?.approx_eq(phi, 1e-9)?;
    }

    let prof = profile_i(phi, k.n)?;
    let weyl = prof.weyl_reflect().grid.approx_eq(&prof.grid, 1e-9)?;
    let commutes = k.heart1.fourier()?.symmetrize().approx_eq(phi, 1e-9)?;
    let norm = prof.normalization_integral()?;
    let expected = expected_normalization(f, k.n, k.n0);
    let normalization_ok = norm.approx_eq(&Amplitude::from_rational(k.backend, &expected), 1e-9);
    Ok(PhiReport {
        support,
        smoothness,
        dilation,
        weyl,
        commutes,
        normalization: norm.render(),
        expected_normalization: expected.to_string(),
        normalization_ok,
    })
}

/// Whether q^{−N}I(ϖ^{−N}α, δ) agrees for two kernels with the same (p, N₀, σ).
pub fn profiles_stable(a: &ProfileI, b: &ProfileI) -> Result<bool> {
    a.rescaled().approx_eq(&b.rescaled(), 1e-9)
}
