//! Character values and integrals: exact cyclotomic numbers or complex floats.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};

use crate::cyclo::Cyclo;

/// Which arithmetic an [`Amplitude`] computation runs in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Exact,
    Float,
}

impl std::str::FromStr for Backend {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(Backend::Exact),
            "float" => Ok(Backend::Float),
            other => Err(format!(
                "unknown backend `{other}` (expected exact or float)"
            )),
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Exact => "exact",
            Backend::Float => "float",
        })
    }
}

/// A complex number known either exactly (in a cyclotomic field) or as a float.
///
/// Mixing the two backends produces a float.
#[derive(Clone, Debug)]
pub enum Amplitude {
    Exact(Cyclo),
    Float(Complex64),
}

impl Amplitude {
    pub fn zero(backend: Backend) -> Self {
        match backend {
            Backend::Exact => Amplitude::Exact(Cyclo::zero()),
            Backend::Float => Amplitude::Float(Complex64::new(0.0, 0.0)),
        }
    }

    pub fn one(backend: Backend) -> Self {
        Self::from_ratio(backend, 1, 1)
    }

    pub fn from_int(backend: Backend, n: i128) -> Self {
        Self::from_ratio(backend, n, 1)
    }

    pub fn from_ratio(backend: Backend, num: i128, den: i128) -> Self {
        match backend {
            Backend::Exact => Amplitude::Exact(Cyclo::from_ratio(num, den)),
            Backend::Float => Amplitude::Float(Complex64::new(num as f64 / den as f64, 0.0)),
        }
    }

    pub fn from_rational(backend: Backend, r: &BigRational) -> Self {
        match backend {
            Backend::Exact => Amplitude::Exact(Cyclo::from_rational(r)),
            Backend::Float => Amplitude::Float(Complex64::new(r.to_f64().unwrap_or(f64::NAN), 0.0)),
        }
    }

    /// e^{2πi e/n}.
    pub fn root_of_unity(backend: Backend, e: i64, n: u64) -> Self {
        match backend {
            Backend::Exact => Amplitude::Exact(Cyclo::root(e, n)),
            Backend::Float => Amplitude::Float(float_root(e, n)),
        }
    }

    /// Σ_e counts[e]·e^{2πi e/n}.
    pub fn from_root_counts(backend: Backend, counts: &[i64], n: u64) -> Self {
        match backend {
            Backend::Exact => Amplitude::Exact(Cyclo::from_root_counts(counts, n)),
            Backend::Float => {
                let mut z = Complex64::new(0.0, 0.0);
                for (e, &c) in counts.iter().enumerate() {
                    if c != 0 {
                        z += float_root(e as i64, n) * c as f64;
                    }
                }
                Amplitude::Float(z)
            }
        }
    }

    /// q^{e/2} for a prime q; odd e uses the quadratic Gauss sum for √q.
    pub fn sqrt_q_pow(backend: Backend, q: u64, e: i64) -> Self {
        let half = Self::from_rational(backend, &crate::field::q_pow(q, e.div_euclid(2)));
        if e.rem_euclid(2) == 0 {
            return half;
        }
        let root = match backend {
            Backend::Float => Amplitude::Float(Complex64::new((q as f64).sqrt(), 0.0)),
            Backend::Exact => Amplitude::Exact(sqrt_prime(q)),
        };
        half.mul(&root)
    }

    pub fn backend(&self) -> Backend {
        match self {
            Amplitude::Exact(_) => Backend::Exact,
            Amplitude::Float(_) => Backend::Float,
        }
    }

    pub fn to_complex(&self) -> Complex64 {
        match self {
            Amplitude::Exact(c) => c.to_complex(),
            Amplitude::Float(z) => *z,
        }
    }

    /// The exact rational value, if this is an exact element of Q.
    pub fn to_rational(&self) -> Option<BigRational> {
        match self {
            Amplitude::Exact(c) => c.to_rational(),
            Amplitude::Float(_) => None,
        }
    }

    pub fn as_cyclo(&self) -> Option<&Cyclo> {
        match self {
            Amplitude::Exact(c) => Some(c),
            Amplitude::Float(_) => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Amplitude::Exact(c) => c.is_zero(),
            Amplitude::Float(z) => z.norm() == 0.0,
        }
    }

    /// Zero test: exact for the cyclotomic backend, `|z| ≤ tol` for floats.
    pub fn is_zero_tol(&self, tol: f64) -> bool {
        match self {
            Amplitude::Exact(c) => c.is_zero(),
            Amplitude::Float(z) => z.norm() <= tol,
        }
    }

    /// Equality: exact when both sides are exact, otherwise within
    /// `tol·max(1, |a|, |b|)`.
    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        match (self, other) {
            (Amplitude::Exact(a), Amplitude::Exact(b)) => a == b,
            _ => {
                let (a, b) = (self.to_complex(), other.to_complex());
                (a - b).norm() <= tol * 1f64.max(a.norm()).max(b.norm())
            }
        }
    }

    pub fn conj(&self) -> Self {
        match self {
            Amplitude::Exact(c) => Amplitude::Exact(c.conj()),
            Amplitude::Float(z) => Amplitude::Float(z.conj()),
        }
    }

    /// Multiply by the rational `num/den`.
    pub fn scale(&self, num: i128, den: i128) -> Self {
        match self {
            Amplitude::Exact(c) => Amplitude::Exact(c.scale(num, den)),
            Amplitude::Float(z) => Amplitude::Float(z * (num as f64 / den as f64)),
        }
    }

    pub fn scale_rational(&self, r: &BigRational) -> Self {
        match self {
            Amplitude::Exact(c) => Amplitude::Exact(c.mul(&Cyclo::from_rational(r))),
            Amplitude::Float(z) => Amplitude::Float(z * r.to_f64().unwrap_or(f64::NAN)),
        }
    }

    /// Multiply by e^{2πi e/n}.
    pub fn mul_root(&self, e: i64, n: u64) -> Self {
        match self {
            Amplitude::Exact(c) => Amplitude::Exact(c.mul_root(e, n)),
            Amplitude::Float(z) => Amplitude::Float(z * float_root(e, n)),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        match (self, other) {
            (Amplitude::Exact(a), Amplitude::Exact(b)) => Amplitude::Exact(a.add(b)),
            _ => Amplitude::Float(self.to_complex() + other.to_complex()),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        match (self, other) {
            (Amplitude::Exact(a), Amplitude::Exact(b)) => Amplitude::Exact(a.sub(b)),
            _ => Amplitude::Float(self.to_complex() - other.to_complex()),
        }
    }

    pub fn mul(&self, other: &Self) -> Self {
        match (self, other) {
            (Amplitude::Exact(a), Amplitude::Exact(b)) => Amplitude::Exact(a.mul(b)),
            _ => Amplitude::Float(self.to_complex() * other.to_complex()),
        }
    }

    /// Multiplicative inverse, `None` for zero.
    pub fn inv(&self) -> Option<Self> {
        match self {
            Amplitude::Exact(c) => c.inv().map(Amplitude::Exact),
            Amplitude::Float(z) => (z.norm() > 0.0).then(|| Amplitude::Float(z.inv())),
        }
    }

    pub fn neg(&self) -> Self {
        match self {
            Amplitude::Exact(c) => Amplitude::Exact(c.neg()),
            Amplitude::Float(z) => Amplitude::Float(-z),
        }
    }

    /// |z|², exact when possible.
    pub fn norm_sqr(&self) -> Self {
        self.mul(&self.conj())
    }

    /// Deterministic text form: a reduced fraction, cyclotomic triples, or a
    /// float pair with 12 significant digits.
    pub fn render(&self) -> String {
        match self {
            Amplitude::Exact(c) => c.to_string(),
            Amplitude::Float(z) => render_complex(*z),
        }
    }
}

/// √p as a cyclotomic number: ζ₈ + ζ₈⁻¹ for p = 2, otherwise the quadratic
/// Gauss sum Σ ζ_p^{x²} (which is √p or i√p according to p mod 4).
pub fn sqrt_prime(p: u64) -> Cyclo {
    if p == 2 {
        return Cyclo::root(1, 8).add(&Cyclo::root(-1, 8));
    }
    let mut counts = vec![0i64; p as usize];
    for x in 0..p {
        counts[(x * x % p) as usize] += 1;
    }
    let g = Cyclo::from_root_counts(&counts, p);
    if p % 4 == 1 {
        g
    } else {
        g.mul_root(-1, 4)
    }
}

/// Sum with a fixed left-to-right order (deterministic for floats).
pub fn sum_in_order<'a, I: IntoIterator<Item = &'a Amplitude>>(
    backend: Backend,
    items: I,
) -> Amplitude {
    items
        .into_iter()
        .fold(Amplitude::zero(backend), |acc, x| acc.add(x))
}

pub fn float_root(e: i64, n: u64) -> Complex64 {
    let e = e.rem_euclid(n as i64);
    Complex64::from_polar(1.0, std::f64::consts::TAU * e as f64 / n as f64)
}

/// `{:.11e}` formatting of a float (12 significant digits), with -0 folded to 0.
pub fn render_float(x: f64) -> String {
    let x = if x == 0.0 { 0.0 } else { x };
    format!("{x:.11e}")
}

pub fn render_complex(z: Complex64) -> String {
    format!("{}{}i", render_float(z.re), {
        let s = render_float(z.im);
        if s.starts_with('-') {
            s
        } else {
            format!("+{s}")
        }
    })
}

impl PartialEq for Amplitude {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Amplitude::Exact(a), Amplitude::Exact(b)) => a == b,
            (Amplitude::Float(a), Amplitude::Float(b)) => a == b,
            _ => false,
        }
    }
}

impl fmt::Display for Amplitude {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl Add for &Amplitude {
    type Output = Amplitude;
    fn add(self, rhs: &Amplitude) -> Amplitude {
        Amplitude::add(self, rhs)
    }
}

impl Sub for &Amplitude {
    type Output = Amplitude;
    fn sub(self, rhs: &Amplitude) -> Amplitude {
        Amplitude::sub(self, rhs)
    }
}

impl Mul for &Amplitude {
    type Output = Amplitude;
    fn mul(self, rhs: &Amplitude) -> Amplitude {
        Amplitude::mul(self, rhs)
    }
}

impl Neg for &Amplitude {
    type Output = Amplitude;
    fn neg(self) -> Amplitude {
        Amplitude::neg(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backends_agree_on_root_sums() {
        let counts = [1, 0, 2, 0, 0, 1, 0, 0, 3];
        let e = Amplitude::from_root_counts(Backend::Exact, &counts, 9);
        let f = Amplitude::from_root_counts(Backend::Float, &counts, 9);
        assert!(e.approx_eq(&f, 1e-12));
    }

    #[test]
    fn full_root_sum_vanishes() {
        let counts = [1i64; 5];
        assert!(Amplitude::from_root_counts(Backend::Exact, &counts, 5).is_zero());
        assert!(Amplitude::from_root_counts(Backend::Float, &counts, 5).is_zero_tol(1e-12));
    }

    #[test]
    fn square_roots_of_primes() {
        for p in [2u64, 3, 5, 7, 11] {
            let r = sqrt_prime(p);
            assert_eq!(r.mul(&r), Cyclo::from_int(p as i128));
            assert!((r.to_complex().re - (p as f64).sqrt()).abs() < 1e-12);
        }
        let x = Amplitude::sqrt_q_pow(Backend::Exact, 3, -3);
        assert!((x.to_complex().re - 3f64.powf(-1.5)).abs() < 1e-12);
    }

    #[test]
    fn render_is_stable() {
        assert_eq!(Amplitude::from_ratio(Backend::Exact, 6, 4).render(), "3/2");
        assert_eq!(
            Amplitude::from_ratio(Backend::Float, 1, 2).render(),
            "5.00000000000e-1+0.00000000000e0i"
        );
        assert_eq!(
            Amplitude::root_of_unity(Backend::Exact, 1, 3).render(),
            "[(1,3,1)]"
        );
    }
}
