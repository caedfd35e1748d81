//! Truncated arithmetic in the p-adic field k = Q_p and the Haar volume
//! normalizations attached to the unramified standard character.
//!
//! A [`KElem`] is `p^val * unit` with the unit known modulo `p^rel`.  Its
//! absolute precision is `val + rel`: the element is determined modulo
//! `p^(val + rel)`.  A zero sentinel records only that absolute precision
//! ("zero within window"), and every query that would need a digit beyond the
//! tracked precision returns [`Error::PrecisionLoss`].

use std::cmp::{max, min};
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};

use crate::error::{Error, Result};

/// Absolute precision used for zeros that are known exactly.
pub const EXACT_DEPTH: i32 = i32::MAX / 4;

/// `base^exp` as u64, panicking on overflow (all moduli in use are < 2^62).
pub fn upow(base: u64, exp: u32) -> u64 {
    base.checked_pow(exp).expect("modulus overflow")
}

pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= n {
        if n.is_multiple_of(d) {
            return false;
        }
        d += 1;
    }
    true
}

pub fn mulmod(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

pub fn addmod(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 + b as u128) % m as u128) as u64
}

pub fn submod(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 + m as u128 - (b % m) as u128) % m as u128) as u64
}

/// Reduce a signed integer into `[0, m)`.
pub fn reduce_i128(a: i128, m: u64) -> u64 {
    a.rem_euclid(m as i128) as u64
}

/// Inverse of `a` modulo `m`, if it exists.
pub fn invmod(a: u64, m: u64) -> Option<u64> {
    if m == 1 {
        return Some(0);
    }
    let (mut old_r, mut r) = (a as i128 % m as i128, m as i128);
    let (mut old_s, mut s) = (1i128, 0i128);
    while r != 0 {
        let q = old_r / r;
        (old_r, r) = (r, old_r - q * r);
        (old_s, s) = (s, old_s - q * s);
    }
    if old_r != 1 {
        return None;
    }
    Some(old_s.rem_euclid(m as i128) as u64)
}

/// p-adic valuation of a nonzero integer.
pub fn vp_u64(mut n: u64, p: u64) -> u32 {
    assert!(n != 0, "valuation of zero");
    let mut v = 0;
    while n.is_multiple_of(p) {
        n /= p;
        v += 1;
    }
    v
}

fn vp_i128(mut n: i128, p: u64) -> u32 {
    assert!(n != 0, "valuation of zero");
    let p = p as i128;
    let mut v = 0;
    while n % p == 0 {
        n /= p;
        v += 1;
    }
    v
}

/// `q^e` as an exact rational for any integer `e`.
pub fn q_pow(q: u64, e: i64) -> BigRational {
    let b = BigInt::from(q).pow(e.unsigned_abs() as u32);
    if e >= 0 {
        BigRational::from_integer(b)
    } else {
        BigRational::new(BigInt::one(), b)
    }
}

/// The local field k = Q_p together with its working precision M.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LocalField {
    p: u32,
    precision: u32,
}

impl LocalField {
    pub fn new(p: u64, precision: u32) -> Result<Self> {
        if !is_prime(p) {
            return Err(Error::Config(format!("p = {p} is not prime")));
        }
        if precision == 0 {
            return Err(Error::Config("precision must be positive".into()));
        }
        match p.checked_pow(precision) {
            Some(v) if v < (1u64 << 62) => {}
            _ => {
                return Err(Error::Config(format!(
                    "p^M = {p}^{precision} exceeds the 62-bit residue range"
                )))
            }
        }
        Ok(LocalField {
            p: p as u32,
            precision,
        })
    }

    /// Smallest precision allowed by the pipeline policy `M ≥ N + N0 + m + ord2 + 2`.
    pub fn required_precision(p: u64, n: u32, n0: u32, m: u32) -> u32 {
        n + n0 + m + u32::from(p == 2) + 2
    }

    /// A field whose precision satisfies the pipeline policy; rejects smaller `precision`.
    pub fn with_policy(p: u64, precision: u32, n: u32, n0: u32, m: u32) -> Result<Self> {
        let need = Self::required_precision(p, n, n0, m);
        if precision < need {
            return Err(Error::Config(format!(
                "precision M = {precision} below policy minimum {need} (N = {n}, N0 = {n0}, m = {m})"
            )));
        }
        Self::new(p, precision)
    }

    pub fn p(&self) -> u64 {
        self.p as u64
    }

    /// Residue field size; equal to p since only prime residue fields are supported.
    pub fn q(&self) -> u64 {
        self.p as u64
    }

    pub fn precision(&self) -> u32 {
        self.precision
    }

    /// Valuation of 2.
    pub fn ord2(&self) -> u32 {
        u32::from(self.p == 2)
    }

    pub fn zero(&self) -> KElem {
        KElem {
            p: self.p,
            cap: self.precision,
            val: EXACT_DEPTH,
            rel: 0,
            unit: 0,
        }
    }

    pub fn one(&self) -> KElem {
        self.int(1)
    }

    pub fn int(&self, n: i64) -> KElem {
        self.int128(n as i128)
    }

    pub fn int128(&self, n: i128) -> KElem {
        if n == 0 {
            return self.zero();
        }
        let v = vp_i128(n, self.p());
        let unit_full = n / (self.p as i128).pow(v);
        let modulus = upow(self.p(), self.precision);
        KElem {
            p: self.p,
            cap: self.precision,
            val: v as i32,
            rel: self.precision,
            unit: reduce_i128(unit_full, modulus),
        }
    }

    /// `num / den` as an element of k.
    pub fn ratio(&self, num: i64, den: i64) -> Result<KElem> {
        if den == 0 {
            return Err(Error::Domain("division by zero".into()));
        }
        self.int(num).div(&self.int(den))
    }

    /// `ϖ^r`.
    pub fn pi_pow(&self, r: i32) -> KElem {
        KElem {
            p: self.p,
            cap: self.precision,
            val: r,
            rel: self.precision,
            unit: 1,
        }
    }

    /// `ϖ^val * unit` where `unit` is an integer prime to p, known to full precision.
    pub fn from_parts(&self, val: i32, unit: u64) -> KElem {
        let modulus = upow(self.p(), self.precision);
        let u = unit % modulus;
        assert!(!u.is_multiple_of(self.p()), "unit part divisible by p");
        KElem {
            p: self.p,
            cap: self.precision,
            val,
            rel: self.precision,
            unit: u,
        }
    }

    /// The element `ϖ^lo * r` for a residue index `r` (exact, r < p^M); zero when r = 0.
    pub fn from_residue(&self, lo: i32, r: u64) -> KElem {
        if r == 0 {
            return self.zero();
        }
        let v = vp_u64(r, self.p());
        let u = r / upow(self.p(), v);
        self.from_parts(lo + v as i32, u)
    }

    /// Normalized absolute value |x| = q^{-ord x}; 0 for the zero sentinel.
    pub fn abs(&self, x: &KElem) -> BigRational {
        match x.valuation() {
            Some(v) => q_pow(self.q(), -(v as i64)),
            None => BigRational::zero(),
        }
    }

    /// |2|_k.
    pub fn abs_two(&self) -> BigRational {
        q_pow(self.q(), -(self.ord2() as i64))
    }

    /// vol(q^r) for the self-dual measure of the unramified character.
    pub fn vol_additive(&self, r: i64) -> BigRational {
        q_pow(self.q(), -r)
    }

    /// Volume of `u(1 + q^m)` (m ≥ 1) or of `o^×` (m = 0) under dy/|y|.
    pub fn vol_multiplicative(&self, m: u32) -> BigRational {
        if m == 0 {
            BigRational::one() - q_pow(self.q(), -1)
        } else {
            q_pow(self.q(), -(m as i64))
        }
    }

    /// vol(K a(ϖ^m) K) / vol(K) = q^m (1 + 1_{m>0} q^{-1}).
    pub fn cartan_coset_volume(&self, m: u32) -> BigRational {
        let base = q_pow(self.q(), m as i64);
        if m == 0 {
            base
        } else {
            base * (BigRational::one() + q_pow(self.q(), -1))
        }
    }

    /// Local zeta value ζ_k(s) = (1 - q^{-s})^{-1} at an integer point s ≥ 1.
    pub fn zeta(&self, s: i64) -> BigRational {
        (BigRational::one() - q_pow(self.q(), -s)).recip()
    }
}

/// An element of k at finite precision.
#[derive(Clone, Copy, Debug)]
pub struct KElem {
    p: u32,
    cap: u32,
    /// Valuation, or the absolute precision for the zero sentinel.
    val: i32,
    /// Relative precision; 0 marks the zero sentinel.
    rel: u32,
    unit: u64,
}

impl KElem {
    fn modulus(&self, digits: u32) -> u64 {
        upow(self.p as u64, digits)
    }

    fn zero_at(&self, depth: i32) -> KElem {
        KElem {
            p: self.p,
            cap: self.cap,
            val: depth,
            rel: 0,
            unit: 0,
        }
    }

    pub fn p(&self) -> u64 {
        self.p as u64
    }

    pub fn is_zero(&self) -> bool {
        self.rel == 0
    }

    /// Valuation, `None` for the zero sentinel.
    pub fn valuation(&self) -> Option<i32> {
        if self.is_zero() {
            None
        } else {
            Some(self.val)
        }
    }

    /// Valuation, raising `PrecisionLoss` for the zero sentinel.
    pub fn ord(&self) -> Result<i32> {
        self.valuation().ok_or_else(|| {
            Error::PrecisionLoss(format!("valuation of zero known to depth {}", self.val))
        })
    }

    /// The element is determined modulo p^{abs_precision}.
    pub fn abs_precision(&self) -> i32 {
        if self.is_zero() {
            self.val
        } else {
            self.val.saturating_add(self.rel as i32)
        }
    }

    pub fn rel_precision(&self) -> u32 {
        self.rel
    }

    /// Unit part as an integer modulo p^{rel}.
    pub fn unit(&self) -> u64 {
        self.unit
    }

    /// Unit part modulo p^n; requires n ≤ rel.
    pub fn unit_residue(&self, n: u32) -> Result<u64> {
        if self.is_zero() {
            return Err(Error::Domain("unit part of zero".into()));
        }
        if n > self.rel {
            return Err(Error::PrecisionLoss(format!(
                "unit needed mod p^{n}, known mod p^{}",
                self.rel
            )));
        }
        Ok(self.unit % self.modulus(n))
    }

    /// Membership x ∈ q^r.
    pub fn in_ideal(&self, r: i32) -> Result<bool> {
        if self.is_zero() {
            if r <= self.val {
                Ok(true)
            } else {
                Err(Error::PrecisionLoss(format!(
                    "membership in q^{r} of zero known to depth {}",
                    self.val
                )))
            }
        } else {
            Ok(self.val >= r)
        }
    }

    pub fn is_unit(&self) -> Result<bool> {
        Ok(self.in_ideal(0)? && !self.in_ideal(1)?)
    }

    pub fn is_integral(&self) -> Result<bool> {
        self.in_ideal(0)
    }

    /// Residue index r of x ∈ q^lo modulo q^hi, so that x ≡ ϖ^lo r.
    pub fn residue(&self, lo: i32, hi: i32) -> Result<u64> {
        if hi < lo {
            return Err(Error::Window(format!("residue window [{lo}, {hi})")));
        }
        if hi == lo {
            return if self.in_ideal(lo)? {
                Ok(0)
            } else {
                Err(Error::Domain(format!("element not in q^{lo}")))
            };
        }
        if self.abs_precision() < hi {
            return Err(Error::PrecisionLoss(format!(
                "digits up to q^{hi} requested, precision {}",
                self.abs_precision()
            )));
        }
        if self.is_zero() {
            return Ok(0);
        }
        if self.val < lo {
            return Err(Error::Domain(format!("element not in q^{lo}")));
        }
        if self.val >= hi {
            return Ok(0);
        }
        let shift = (self.val - lo) as u32;
        let width = (hi - lo) as u32;
        let modulus = self.modulus(width);
        Ok(mulmod(
            self.modulus(shift),
            self.unit % self.modulus(width - shift),
            modulus,
        ))
    }

    /// p-adic fractional part as `(numerator, k)` meaning `numerator / p^k`, k ≥ 0.
    pub fn frac(&self) -> Result<(u64, u32)> {
        if self.abs_precision() < 0 {
            return Err(Error::PrecisionLoss(format!(
                "fractional part needs precision 0, have {}",
                self.abs_precision()
            )));
        }
        if self.is_zero() || self.val >= 0 {
            return Ok((0, 0));
        }
        let k = (-self.val) as u32;
        Ok((self.unit % self.modulus(k), k))
    }

    fn capped(p: u32, cap: u32, val: i32, rel: u32, unit: u64) -> KElem {
        let rel = min(rel, cap);
        let unit = unit % upow(p as u64, rel);
        KElem {
            p,
            cap,
            val,
            rel,
            unit,
        }
    }

    pub fn neg(&self) -> KElem {
        if self.is_zero() {
            return *self;
        }
        let m = self.modulus(self.rel);
        KElem {
            unit: submod(0, self.unit, m),
            ..*self
        }
    }

    pub fn add(&self, other: &KElem) -> KElem {
        debug_assert_eq!(self.p, other.p);
        let abs = min(self.abs_precision(), other.abs_precision());
        let cap = max(self.cap, other.cap);
        match (self.is_zero(), other.is_zero()) {
            (true, true) => return self.zero_at(abs),
            (true, false) => return other.truncate_abs(abs),
            (false, true) => return self.truncate_abs(abs),
            _ => {}
        }
        let v0 = min(self.val, other.val);
        if abs <= v0 {
            return self.zero_at(abs);
        }
        let width = (abs - v0) as u32;
        let m = self.modulus(width);
        let term = |x: &KElem| -> u64 {
            let shift = (x.val - v0) as u32;
            if shift >= width {
                0
            } else {
                mulmod(x.unit % m, self.modulus(shift), m)
            }
        };
        let s = addmod(term(self), term(other), m);
        if s == 0 {
            return self.zero_at(abs);
        }
        let j = vp_u64(s, self.p as u64);
        let val = v0 + j as i32;
        KElem::capped(self.p, cap, val, (abs - val) as u32, s / self.modulus(j))
    }

    pub fn sub(&self, other: &KElem) -> KElem {
        self.add(&other.neg())
    }

    /// Forget digits at or beyond absolute position `abs`.
    pub fn truncate_abs(&self, abs: i32) -> KElem {
        if self.is_zero() {
            return self.zero_at(min(self.val, abs));
        }
        if abs <= self.val {
            return self.zero_at(abs);
        }
        let rel = min(self.rel, (abs - self.val) as u32);
        KElem::capped(self.p, self.cap, self.val, rel, self.unit)
    }

    pub fn mul(&self, other: &KElem) -> KElem {
        match (self.is_zero(), other.is_zero()) {
            (true, true) => self.zero_at(self.val.saturating_add(other.val).min(EXACT_DEPTH)),
            (true, false) => self.zero_at(self.val.saturating_add(other.val).min(EXACT_DEPTH)),
            (false, true) => self.zero_at(self.val.saturating_add(other.val).min(EXACT_DEPTH)),
            (false, false) => {
                let rel = min(self.rel, other.rel);
                let m = self.modulus(rel);
                KElem::capped(
                    self.p,
                    max(self.cap, other.cap),
                    self.val + other.val,
                    rel,
                    mulmod(self.unit % m, other.unit % m, m),
                )
            }
        }
    }

    pub fn inv(&self) -> Result<KElem> {
        if self.is_zero() {
            return Err(Error::PrecisionLoss(format!(
                "inverse of zero known to depth {}",
                self.val
            )));
        }
        let m = self.modulus(self.rel);
        let u = invmod(self.unit, m).expect("unit part is invertible");
        Ok(KElem {
            val: -self.val,
            unit: u,
            ..*self
        })
    }

    pub fn div(&self, other: &KElem) -> Result<KElem> {
        Ok(self.mul(&other.inv()?))
    }

    /// Multiply by ϖ^r.
    pub fn shift(&self, r: i32) -> KElem {
        KElem {
            val: self.val.saturating_add(r).min(EXACT_DEPTH),
            ..*self
        }
    }

    /// Exact equality test up to the common precision; errors if undecidable.
    pub fn equals(&self, other: &KElem) -> Result<bool> {
        let d = self.sub(other);
        if d.is_zero() {
            Ok(true)
        } else {
            Ok(false)
        }
    }
}

impl fmt::Display for KElem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            if self.val >= EXACT_DEPTH {
                write!(f, "0")
            } else {
                write!(f, "O({}^{})", self.p, self.val)
            }
        } else {
            write!(
                f,
                "{}*{}^{} + O({}^{})",
                self.unit,
                self.p,
                self.val,
                self.p,
                self.abs_precision()
            )
        }
    }
}

/// Arithmetic in the residue ring Z / p^k.
#[derive(Clone, Copy, Debug)]
pub struct Zmod {
    pub p: u64,
    pub k: u32,
    pub modulus: u64,
}

impl Zmod {
    pub fn new(p: u64, k: u32) -> Self {
        Zmod {
            p,
            k,
            modulus: upow(p, k),
        }
    }

    pub fn add(&self, a: u64, b: u64) -> u64 {
        addmod(a, b, self.modulus)
    }

    pub fn sub(&self, a: u64, b: u64) -> u64 {
        submod(a, b, self.modulus)
    }

    pub fn mul(&self, a: u64, b: u64) -> u64 {
        mulmod(a, b, self.modulus)
    }

    pub fn neg(&self, a: u64) -> u64 {
        submod(0, a, self.modulus)
    }

    pub fn is_unit(&self, a: u64) -> bool {
        !a.is_multiple_of(self.p)
    }

    pub fn inv(&self, a: u64) -> Option<u64> {
        invmod(a % self.modulus, self.modulus)
    }

    pub fn pow(&self, mut a: u64, mut e: u64) -> u64 {
        let mut r = 1 % self.modulus;
        a %= self.modulus;
        while e > 0 {
            if e & 1 == 1 {
                r = self.mul(r, a);
            }
            a = self.mul(a, a);
            e >>= 1;
        }
        r
    }

    pub fn from_i64(&self, a: i64) -> u64 {
        reduce_i128(a as i128, self.modulus)
    }

    /// Valuation of a residue, `k` for zero.
    pub fn val(&self, a: u64) -> u32 {
        if a.is_multiple_of(self.modulus) {
            self.k
        } else {
            vp_u64(a % self.modulus, self.p)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn absolute_values() {
        let k = LocalField::new(3, 10).unwrap();
        assert_eq!(k.abs(&k.one()), BigRational::one());
        assert_eq!(
            k.abs(&k.ratio(1, 3).unwrap()),
            BigRational::from_integer(3.into())
        );
        let x = k.int(18);
        assert_eq!(x.valuation(), Some(2));
        assert_eq!(x.unit(), 2);
        assert_eq!(k.abs(&x), BigRational::new(1.into(), 9.into()));
        assert_eq!(k.abs(&k.zero()), BigRational::zero());
    }

    #[test]
    fn volumes() {
        let k = LocalField::new(3, 10).unwrap();
        let r = |a: i64, b: i64| BigRational::new(a.into(), b.into());
        assert_eq!(k.vol_additive(0), r(1, 1));
        assert_eq!(k.vol_additive(2), r(1, 9));
        assert_eq!(k.vol_additive(-1), r(3, 1));
        assert_eq!(k.vol_multiplicative(0), r(2, 3));
        assert_eq!(k.vol_multiplicative(1), r(1, 3));
        let k5 = LocalField::new(5, 8).unwrap();
        assert_eq!(k5.vol_multiplicative(2), r(1, 25));
        assert_eq!(k.cartan_coset_volume(0), r(1, 1));
        assert_eq!(k.cartan_coset_volume(1), r(4, 1));
        assert_eq!(k.cartan_coset_volume(2), r(12, 1));
    }

    #[test]
    fn cancellation_gives_zero_sentinel() {
        let k = LocalField::new(3, 6).unwrap();
        let x = k.ratio(7, 9).unwrap();
        let z = x.add(&x.neg());
        assert!(z.is_zero());
        assert_eq!(z.abs_precision(), x.abs_precision());
        assert!(matches!(z.in_ideal(10), Err(Error::PrecisionLoss(_))));
        assert!(z.in_ideal(2).unwrap());
    }

    #[test]
    fn partial_cancellation_loses_relative_precision() {
        let k = LocalField::new(3, 4).unwrap();
        let a = k.int(1);
        let b = k.int(1 + 27);
        let d = b.sub(&a);
        assert_eq!(d.valuation(), Some(3));
        assert_eq!(d.abs_precision(), 4);
        assert_eq!(d.rel_precision(), 1);
        assert!(matches!(d.unit_residue(2), Err(Error::PrecisionLoss(_))));
    }

    #[test]
    fn policy_rejects_small_precision() {
        assert!(LocalField::with_policy(3, 8, 4, 1, 1).is_ok());
        assert!(matches!(
            LocalField::with_policy(3, 7, 4, 1, 1),
            Err(Error::Config(_))
        ));
        assert!(LocalField::new(4, 3).is_err());
    }

    #[test]
    fn residues_and_fractions() {
        let k = LocalField::new(3, 8).unwrap();
        let x = k.ratio(5, 9).unwrap();
        assert_eq!(x.frac().unwrap(), (5, 2));
        assert_eq!(x.residue(-2, 0).unwrap(), 5);
        assert_eq!(k.int(7).residue(0, 1).unwrap(), 1);
        assert!(matches!(x.residue(-1, 1), Err(Error::Domain(_))));
    }
}
