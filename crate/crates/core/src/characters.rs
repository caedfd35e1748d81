//! Additive characters ψ^τ, characters of 𝔬^× of exact conductor N, the
//! σ-classes Σ and the partition 𝒳_N = ⊔_σ 𝒳_N^σ.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::{Arc, OnceLock, RwLock};

use serde::Serialize;

use crate::amplitude::{Amplitude, Backend};
use crate::error::{Error, Result};
use crate::field::{upow, KElem, LocalField, Zmod};

/// The standard unramified character twisted by τ: x ↦ ψ(τx), ψ(x) = e^{2πi frac_p(x)}.
#[derive(Clone, Copy, Debug)]
pub struct AdditiveChar {
    pub tau: KElem,
}

impl AdditiveChar {
    pub fn standard(k: &LocalField) -> Self {
        AdditiveChar { tau: k.one() }
    }

    pub fn new(tau: KElem) -> Self {
        AdditiveChar { tau }
    }

    /// The angle of ψ(τx) as `(numerator, p^k)`.
    pub fn angle(&self, x: &KElem) -> Result<(u64, u64)> {
        let (num, k) = self.tau.mul(x).frac()?;
        Ok((num, upow(self.tau.p(), k)))
    }

    pub fn eval(&self, x: &KElem, backend: Backend) -> Result<Amplitude> {
        let (num, den) = self.angle(x)?;
        Ok(Amplitude::root_of_unity(backend, num as i64, den))
    }
}

/// Checks the standing hypotheses N > N₀ > ord2 and N ≥ 2N₀ + ord2.
pub fn check_levels(p: u64, n: u32, n0: u32) -> Result<()> {
    let ord2 = u32::from(p == 2);
    if !(n > n0 && n0 > ord2 && n >= 2 * n0 + ord2) {
        return Err(Error::Config(format!(
            "levels N = {n}, N0 = {n0} violate N > N0 > ord2 and N >= 2 N0 + ord2 (p = {p})"
        )));
    }
    Ok(())
}

/// The unit group (ℤ/p^N)^× with a discrete-log table.
///
/// Every unit is written `(-1)^ε g^k` with g the smallest positive primitive
/// root (odd p) or `g = 5` (p = 2, where ε carries the sign).
#[derive(Debug)]
pub struct UnitGroup {
    p: u64,
    n: u32,
    modulus: u64,
    /// Order of the cyclic part generated by g.
    cyclic: u64,
    generator: u64,
    /// Packed `(ε, k)` for each residue; `u32::MAX` for non-units.
    dlog: Vec<(u8, u32)>,
}

type UnitGroupCache = RwLock<HashMap<(u64, u32), Arc<UnitGroup>>>;

fn unit_groups() -> &'static UnitGroupCache {
    static GROUPS: OnceLock<UnitGroupCache> = OnceLock::new();
    GROUPS.get_or_init(|| RwLock::new(HashMap::new()))
}

fn multiplicative_order(g: u64, z: &Zmod) -> u64 {
    let mut x = g % z.modulus;
    let mut ord = 1;
    while x != 1 % z.modulus {
        x = z.mul(x, g);
        ord += 1;
    }
    ord
}

impl UnitGroup {
    /// Shared table for (ℤ/p^N)^×.
    pub fn get(p: u64, n: u32) -> Arc<UnitGroup> {
        if let Some(g) = unit_groups().read().expect("lock").get(&(p, n)) {
            return g.clone();
        }
        let g = Arc::new(Self::build(p, n));
        unit_groups()
            .write()
            .expect("lock")
            .entry((p, n))
            .or_insert(g)
            .clone()
    }

    fn build(p: u64, n: u32) -> UnitGroup {
        let z = Zmod::new(p, n);
        let modulus = z.modulus;
        let order = if modulus == 1 {
            1
        } else {
            (p - 1) * upow(p, n - 1)
        };
        let (generator, cyclic) = if p == 2 {
            (5 % modulus.max(1), if n >= 2 { order / 2 } else { 1 })
        } else {
            let mut g = 2;
            while multiplicative_order(g, &z) != order {
                g += 1;
            }
            (g, order)
        };
        let mut dlog = vec![(0u8, u32::MAX); modulus as usize];
        let signs: &[u64] = if p == 2 && n >= 2 {
            &[1, modulus - 1]
        } else {
            &[1]
        };
        for (eps, &s) in signs.iter().enumerate() {
            let mut x = s % modulus;
            for k in 0..cyclic {
                dlog[x as usize] = (eps as u8, k as u32);
                x = z.mul(x, generator);
            }
        }
        if modulus == 1 {
            dlog[0] = (0, 0);
        }
        UnitGroup {
            p,
            n,
            modulus,
            cyclic,
            generator,
            dlog,
        }
    }

    pub fn p(&self) -> u64 {
        self.p
    }

    pub fn level(&self) -> u32 {
        self.n
    }

    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    /// |(ℤ/p^N)^×| = φ(p^N), also the order of the value group used for characters.
    pub fn order(&self) -> u64 {
        if self.modulus == 1 {
            1
        } else {
            (self.p - 1) * upow(self.p, self.n - 1)
        }
    }

    pub fn generator(&self) -> u64 {
        self.generator
    }

    /// `(ε, k)` with `u = (-1)^ε g^k`, `None` for non-units.
    pub fn dlog(&self, u: u64) -> Option<(u8, u32)> {
        let (e, k) = self.dlog[(u % self.modulus) as usize];
        (k != u32::MAX).then_some((e, k))
    }
}

/// A character of 𝔬^× factoring through (ℤ/p^N)^×, given by its exponents on
/// the generators.  Values are `ζ_ord^{exponent}` with `ord = φ(p^N)`.
#[derive(Clone)]
pub struct MultChar {
    group: Arc<UnitGroup>,
    /// Exponent on the sign generator −1 (only used for p = 2).
    j_sign: u64,
    /// Exponent on g, modulo the cyclic order.
    j: u64,
}

impl fmt::Debug for MultChar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "MultChar(p={}, N={}, j_sign={}, j={})",
            self.group.p, self.group.n, self.j_sign, self.j
        )
    }
}

impl PartialEq for MultChar {
    fn eq(&self, other: &Self) -> bool {
        self.group.p == other.group.p
            && self.group.n == other.group.n
            && self.j_sign == other.j_sign
            && self.j == other.j
    }
}

impl Eq for MultChar {}

impl MultChar {
    pub fn new(p: u64, n: u32, j_sign: u64, j: u64) -> Self {
        let group = UnitGroup::get(p, n);
        let sign_order = if p == 2 && n >= 2 { 2 } else { 1 };
        MultChar {
            j_sign: j_sign % sign_order,
            j: j % group.cyclic,
            group,
        }
    }

    pub fn trivial(p: u64, n: u32) -> Self {
        Self::new(p, n, 0, 0)
    }

    pub fn group(&self) -> &Arc<UnitGroup> {
        &self.group
    }

    pub fn level(&self) -> u32 {
        self.group.n
    }

    pub fn exponents(&self) -> (u64, u64) {
        (self.j_sign, self.j)
    }

    /// Order of the value group: values are powers of ζ_ord.
    pub fn value_order(&self) -> u64 {
        self.group.order()
    }

    /// Exponent e with ω(u) = ζ_ord^e; `None` if u is not a unit.
    pub fn exponent(&self, u: u64) -> Option<u64> {
        let g = &self.group;
        let ord = g.order();
        let (eps, k) = g.dlog(u)?;
        let sign_part = if eps == 1 { self.j_sign * (ord / 2) } else { 0 };
        let cyc_part = (self.j * k as u64 % g.cyclic) * (ord / g.cyclic);
        Some((sign_part + cyc_part) % ord)
    }

    pub fn eval(&self, u: u64, backend: Backend) -> Option<Amplitude> {
        Some(Amplitude::root_of_unity(
            backend,
            self.exponent(u)? as i64,
            self.value_order(),
        ))
    }

    /// ω evaluated on a unit of k; errors for non-units or insufficient precision.
    pub fn eval_k(&self, u: &KElem, backend: Backend) -> Result<Amplitude> {
        if !u.is_unit()? {
            return Err(Error::Domain(
                "multiplicative character evaluated off 𝔬^×".into(),
            ));
        }
        let r = u.residue(0, self.group.n as i32)?;
        Ok(self.eval(r, backend).expect("unit residue"))
    }

    pub fn inverse(&self) -> Self {
        let sign_order = if self.group.p == 2 && self.group.n >= 2 {
            2
        } else {
            1
        };
        MultChar {
            group: self.group.clone(),
            j_sign: (sign_order - self.j_sign) % sign_order,
            j: (self.group.cyclic - self.j) % self.group.cyclic,
        }
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!((self.group.p, self.group.n), (other.group.p, other.group.n));
        Self::new(
            self.group.p,
            self.group.n,
            self.j_sign + other.j_sign,
            self.j + other.j,
        )
    }

    pub fn is_trivial(&self) -> bool {
        self.j_sign == 0 && self.j == 0
    }

    /// Whether ω is trivial on 1 + 𝔮^r (r ≥ 1) or on 𝔬^× (r = 0).
    pub fn trivial_on(&self, r: u32) -> bool {
        let g = &self.group;
        if r >= g.n {
            return true;
        }
        if r == 0 {
            return self.is_trivial();
        }
        let step = upow(g.p, r);
        (0..upow(g.p, g.n - r)).all(|s| self.exponent(1 + s * step) == Some(0))
    }

    /// The conductor exponent: smallest c with ω trivial on 1 + 𝔮^c.
    pub fn conductor(&self) -> u32 {
        (0..=self.group.n)
            .find(|&c| self.trivial_on(c))
            .unwrap_or(self.group.n)
    }

    /// Whether ω² = 1.
    pub fn is_quadratic(&self) -> bool {
        self.mul(self).is_trivial()
    }

    /// The same character viewed at a higher level.
    pub fn lift(&self, n: u32) -> Self {
        assert!(n >= self.group.n);
        let g = UnitGroup::get(self.group.p, n);
        let (ord_lo, ord_hi) = (self.value_order(), g.order());
        let e = self
            .exponent(g.generator() % self.group.modulus)
            .expect("generator is a unit");
        let e_hi = e * (ord_hi / ord_lo);
        let j = e_hi / (ord_hi / g.cyclic);
        MultChar::new(self.group.p, n, self.j_sign, j)
    }
}

/// All characters of 𝔬^× of exact conductor N, ordered lexicographically by exponents.
pub fn enumerate_xn(p: u64, n: u32) -> Result<Vec<MultChar>> {
    if n < 2 {
        return Err(Error::Config(format!("enumerate_XN needs N >= 2, got {n}")));
    }
    let g = UnitGroup::get(p, n);
    let sign_order = if p == 2 { 2 } else { 1 };
    let mut out = Vec::new();
    for js in 0..sign_order {
        for j in 0..g.cyclic {
            let w = MultChar::new(p, n, js, j);
            if !w.trivial_on(n - 1) {
                out.push(w);
            }
        }
    }
    Ok(out)
}

/// A class σ of unramified characters restricted to 𝔮^{−N₀}/𝔬, represented
/// by ξ ∈ (𝔬/𝔮^{N₀})^× via t ↦ ψ(ξt).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SigmaClass {
    pub p: u64,
    pub n0: u32,
    pub xi: u64,
}

impl SigmaClass {
    pub fn new(p: u64, n0: u32, xi: u64) -> Result<Self> {
        let m = upow(p, n0);
        let xi = xi % m;
        if xi.is_multiple_of(p) {
            return Err(Error::Config(format!(
                "sigma exponent {xi} is not a unit mod {p}^{n0}"
            )));
        }
        Ok(SigmaClass { p, n0, xi })
    }

    /// All of Σ in increasing order of ξ.
    pub fn all(p: u64, n0: u32) -> Vec<SigmaClass> {
        (1..upow(p, n0))
            .filter(|x| x % p != 0)
            .map(|xi| SigmaClass { p, n0, xi })
            .collect()
    }

    /// The additive character ψ_σ(x) = ψ(ξx) in the class σ.
    pub fn psi(&self, k: &LocalField) -> AdditiveChar {
        AdditiveChar::new(k.int(self.xi as i64))
    }
}

/// ι(u) = ϖ^{−N}(u − 1) as the residue s with ι(u) ≡ s ϖ^{−N₀} mod 𝔬.
pub fn iota_residue(p: u64, u: u64, n: u32, n0: u32) -> Result<u64> {
    check_levels(p, n, n0)?;
    let modulus = upow(p, n);
    let u = u % modulus;
    let step = upow(p, n - n0);
    let d = (u + modulus - 1) % modulus;
    if !d.is_multiple_of(step) {
        return Err(Error::Domain(format!("{u} is not in 1 + q^{}", n - n0)));
    }
    Ok(d / step)
}

/// ι on elements of k: returns the class of ϖ^{−N}(u − 1) in 𝔮^{−N₀}/𝔬.
pub fn iota(u: &KElem, n: u32, n0: u32) -> Result<u64> {
    let r = u.residue(0, n as i32)?;
    if !u.is_unit()? {
        return Err(Error::Domain("ι is only defined on units".into()));
    }
    iota_residue(u.p(), r, n, n0)
}

/// The character ω_σ = σ ∘ ι of 𝔬₀^× = 1 + 𝔮^{N−N₀}; exponents are mod p^{N₀}.
#[derive(Clone, Copy, Debug)]
pub struct OmegaSigma {
    pub sigma: SigmaClass,
    pub n: u32,
}

impl OmegaSigma {
    pub fn new(sigma: SigmaClass, n: u32) -> Result<Self> {
        check_levels(sigma.p, n, sigma.n0)?;
        Ok(OmegaSigma { sigma, n })
    }

    /// Exponent e with ω_σ(u) = ζ_{p^{N₀}}^e.
    pub fn exponent(&self, u: u64) -> Result<u64> {
        let s = iota_residue(self.sigma.p, u, self.n, self.sigma.n0)?;
        Ok(s * self.sigma.xi % upow(self.sigma.p, self.sigma.n0))
    }

    pub fn eval(&self, u: u64, backend: Backend) -> Result<Amplitude> {
        let e = self.exponent(u)?;
        Ok(Amplitude::root_of_unity(
            backend,
            e as i64,
            upow(self.sigma.p, self.sigma.n0),
        ))
    }

    /// Whether ω restricted to 𝔬₀^× equals ω_σ.
    pub fn matches(&self, w: &MultChar) -> bool {
        let p = self.sigma.p;
        let pn0 = upow(p, self.sigma.n0);
        let ord = w.value_order();
        let step = upow(p, self.n - self.sigma.n0);
        (0..pn0).all(|s| {
            let u = 1 + s * step;
            let e = self.exponent(u).expect("u in 𝔬₀^×");
            w.exponent(u) == Some(e * (ord / pn0) % ord)
        })
    }
}

/// Splits 𝒳_N into the blocks 𝒳_N^σ keyed by σ.
pub fn partition_xn(p: u64, n: u32, n0: u32) -> Result<BTreeMap<SigmaClass, Vec<MultChar>>> {
    check_levels(p, n, n0)?;
    let all = enumerate_xn(p, n)?;
    let sigmas: Vec<OmegaSigma> = SigmaClass::all(p, n0)
        .into_iter()
        .map(|s| OmegaSigma::new(s, n))
        .collect::<Result<_>>()?;
    let mut blocks: BTreeMap<SigmaClass, Vec<MultChar>> =
        sigmas.iter().map(|s| (s.sigma, Vec::new())).collect();
    for w in all {
        let hit = sigmas.iter().find(|s| s.matches(&w)).ok_or_else(|| {
            Error::Model(format!("{w:?} restricts to no ω_σ on 1 + q^{}", n - n0))
        })?;
        blocks.get_mut(&hit.sigma).expect("block").push(w);
    }
    Ok(blocks)
}

/// The block 𝒳_N^σ.
pub fn block(sigma: &SigmaClass, n: u32) -> Result<Vec<MultChar>> {
    let mut blocks = partition_xn(sigma.p, n, sigma.n0)?;
    Ok(blocks.remove(sigma).unwrap_or_default())
}

/// Counts and structural checks for 𝒳_N, Σ and ι at one (p, N, N₀).
#[derive(Clone, Debug, Serialize)]
pub struct CharacterReport {
    pub xn_count: u64,
    pub xn_expected: u64,
    pub sigma_count: u64,
    pub sigma_expected: u64,
    /// Every block is nonempty and the blocks partition 𝒳_N.
    pub partition: bool,
    /// No block contains both ω and ω⁻¹.
    pub inverse_exclusion: bool,
    /// ι(u₁u₂) = ι(u₁) + ι(u₂) for every pair, checked exhaustively.
    pub iota_homomorphism: bool,
    pub iota_bijective: bool,
}

impl CharacterReport {
    pub fn pass(&self) -> bool {
        self.xn_count == self.xn_expected
            && self.sigma_count == self.sigma_expected
            && self.partition
            && self.inverse_exclusion
            && self.iota_homomorphism
            && self.iota_bijective
    }
}

pub fn character_check(p: u64, n: u32, n0: u32) -> Result<CharacterReport> {
    check_levels(p, n, n0)?;
    let all = enumerate_xn(p, n)?;
    let blocks = partition_xn(p, n, n0)?;
    let covered: usize = blocks.values().map(Vec::len).sum();
    let mut seen = std::collections::HashSet::new();
    let disjoint = blocks
        .values()
        .flatten()
        .all(|w| seen.insert(w.exponents()));
    let partition = covered == all.len() && disjoint && blocks.values().all(|b| !b.is_empty());
    let inverse_exclusion = blocks
        .values()
        .all(|b| b.iter().all(|w| !b.contains(&w.inverse())));

    let modulus = upow(p, n);
    let pn0 = upow(p, n0);
    let step = upow(p, n - n0);
    let domain: Vec<u64> = (0..pn0).map(|s| (1 + s * step) % modulus).collect();
    let images: Vec<u64> = domain
        .iter()
        .map(|&u| iota_residue(p, u, n, n0))
        .collect::<Result<_>>()?;
    let mut iota_homomorphism = true;
    for (i, &u1) in domain.iter().enumerate() {
        for (j, &u2) in domain.iter().enumerate() {
            let prod = crate::field::mulmod(u1, u2, modulus);
            iota_homomorphism &= iota_residue(p, prod, n, n0)? == (images[i] + images[j]) % pn0;
        }
    }
    let mut sorted = images.clone();
    sorted.sort_unstable();
    sorted.dedup();
    Ok(CharacterReport {
        xn_count: all.len() as u64,
        xn_expected: (p - 1) * (p - 1) * upow(p, n - 2),
        sigma_count: blocks.len() as u64,
        sigma_expected: (p - 1) * upow(p, n0 - 1),
        partition,
        inverse_exclusion,
        iota_homomorphism,
        iota_bijective: sorted.len() as u64 == pn0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn additive_character_angles() {
        let k = LocalField::new(3, 8).unwrap();
        let psi = AdditiveChar::standard(&k);
        assert_eq!(psi.angle(&k.int(5)).unwrap(), (0, 1));
        assert_eq!(psi.angle(&k.ratio(1, 3).unwrap()).unwrap(), (1, 3));
        let twisted = AdditiveChar::new(k.ratio(1, 3).unwrap());
        assert_eq!(twisted.angle(&k.one()).unwrap(), (1, 3));
        assert!(psi.eval(&k.int(7), Backend::Exact).unwrap() == Amplitude::one(Backend::Exact));
    }

    #[test]
    fn character_counts() {
        assert_eq!(enumerate_xn(3, 3).unwrap().len(), 12);
        assert_eq!(enumerate_xn(5, 2).unwrap().len(), 16);
        assert_eq!(enumerate_xn(3, 4).unwrap().len(), 36);
        assert_eq!(enumerate_xn(2, 4).unwrap().len(), 4);
        assert!(matches!(enumerate_xn(3, 1), Err(Error::Config(_))));
        for w in enumerate_xn(5, 3).unwrap() {
            assert_eq!(w.conductor(), 3);
        }
    }

    #[test]
    fn primitive_roots() {
        assert_eq!(UnitGroup::get(3, 4).generator(), 2);
        assert_eq!(UnitGroup::get(5, 3).generator(), 2);
        assert_eq!(UnitGroup::get(7, 2).generator(), 3);
    }

    #[test]
    fn iota_examples() {
        assert_eq!(iota_residue(3, 1, 4, 1).unwrap(), 0);
        assert_eq!(iota_residue(3, 28, 4, 1).unwrap(), 1);
        assert!(matches!(iota_residue(3, 2, 4, 1), Err(Error::Domain(_))));
        assert!(matches!(iota_residue(3, 1, 3, 2), Err(Error::Config(_))));
    }

    #[test]
    fn partition_blocks() {
        let blocks = partition_xn(3, 3, 1).unwrap();
        assert_eq!(blocks.len(), 2);
        assert!(blocks.values().all(|b| b.len() == 6));
        let blocks = partition_xn(3, 4, 1).unwrap();
        assert!(blocks.values().all(|b| b.len() == 18));
    }

    #[test]
    fn exhaustive_character_checks() {
        for (p, n, n0) in [(3, 3, 1), (3, 4, 1), (5, 3, 1), (3, 5, 2)] {
            let r = character_check(p, n, n0).unwrap();
            assert!(r.pass(), "{p} {n} {n0}: {r:?}");
        }
        let r = character_check(3, 4, 1).unwrap();
        assert_eq!((r.xn_count, r.sigma_count), (36, 2));
    }

    #[test]
    fn lift_preserves_values() {
        let w = MultChar::new(3, 2, 0, 1);
        let big = w.lift(4);
        for u in 1..81u64 {
            if u % 3 != 0 {
                let a = w.eval(u % 9, Backend::Exact).unwrap();
                let b = big.eval(u, Backend::Exact).unwrap();
                assert_eq!(a, b);
            }
        }
    }
}
