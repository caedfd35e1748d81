//! Exact elements of cyclotomic fields Q(ζ_n).
//!
//! An element is stored in the power basis `1, ζ, …, ζ^{φ(n)-1}` of Q(ζ_n)
//! with integer numerators over a common positive denominator.  Elements of
//! different levels are compared and combined by lifting both to the lcm of
//! the levels.  Coefficients are `i128` and every operation is overflow
//! checked.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, OnceLock, RwLock};

use num_bigint::BigInt;
use num_complex::Complex64;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

/// Reduction data for one level n.
#[derive(Debug)]
pub struct CycloTable {
    n: u64,
    phi: usize,
    /// Coefficients of the n-th cyclotomic polynomial, constant term first.
    poly: Vec<i128>,
    /// `x^e mod Φ_n` for `0 ≤ e < n`, stored sparsely.
    powers: Vec<Vec<(u32, i128)>>,
}

fn tables() -> &'static RwLock<HashMap<u64, Arc<CycloTable>>> {
    static TABLES: OnceLock<RwLock<HashMap<u64, Arc<CycloTable>>>> = OnceLock::new();
    TABLES.get_or_init(|| RwLock::new(HashMap::new()))
}

fn poly_divexact(num: &[i128], den: &[i128]) -> Vec<i128> {
    // den is monic
    let mut rem = num.to_vec();
    let dn = den.len() - 1;
    let mut quot = vec![0i128; num.len() - dn];
    for i in (0..quot.len()).rev() {
        let c = rem[i + dn];
        quot[i] = c;
        if c != 0 {
            for (j, &d) in den.iter().enumerate() {
                rem[i + j] -= c * d;
            }
        }
    }
    debug_assert!(rem.iter().all(|&r| r == 0));
    quot
}

fn cyclotomic_poly(n: u64) -> Vec<i128> {
    let mut num = vec![0i128; n as usize + 1];
    num[0] = -1;
    num[n as usize] = 1;
    let mut poly = num;
    for d in 1..n {
        if n.is_multiple_of(d) {
            poly = poly_divexact(&poly, &table(d).poly);
        }
    }
    poly
}

fn build_table(n: u64) -> CycloTable {
    let poly = if n == 1 {
        vec![-1, 1]
    } else {
        cyclotomic_poly(n)
    };
    let phi = poly.len() - 1;
    let mut powers = Vec::with_capacity(n as usize);
    let mut cur = vec![0i128; phi];
    cur[0] = 1;
    for _ in 0..n {
        powers.push(
            cur.iter()
                .enumerate()
                .filter(|(_, &c)| c != 0)
                .map(|(i, &c)| (i as u32, c))
                .collect(),
        );
        // multiply by x and reduce by the monic Φ_n
        let top = cur[phi - 1];
        for i in (1..phi).rev() {
            cur[i] = cur[i - 1];
        }
        cur[0] = 0;
        if top != 0 {
            for i in 0..phi {
                cur[i] -= top * poly[i];
            }
        }
    }
    CycloTable {
        n,
        phi,
        poly,
        powers,
    }
}

/// The shared reduction table of level n.
pub fn table(n: u64) -> Arc<CycloTable> {
    assert!(n >= 1, "cyclotomic level must be positive");
    if let Some(t) = tables().read().expect("table lock").get(&n) {
        return t.clone();
    }
    let t = Arc::new(build_table(n));
    tables()
        .write()
        .expect("table lock")
        .entry(n)
        .or_insert(t)
        .clone()
}

impl CycloTable {
    pub fn level(&self) -> u64 {
        self.n
    }

    pub fn degree(&self) -> usize {
        self.phi
    }
}

fn ck_add(a: i128, b: i128) -> i128 {
    a.checked_add(b).expect("cyclotomic coefficient overflow")
}

fn ck_mul(a: i128, b: i128) -> i128 {
    a.checked_mul(b).expect("cyclotomic coefficient overflow")
}

fn gcd128(a: i128, b: i128) -> i128 {
    a.gcd(&b)
}

/// An element of Q(ζ_n).
#[derive(Clone, Debug)]
pub struct Cyclo {
    table: Arc<CycloTable>,
    num: Vec<i128>,
    den: i128,
}

impl Cyclo {
    pub fn zero() -> Self {
        Cyclo {
            table: table(1),
            num: vec![0],
            den: 1,
        }
    }

    pub fn one() -> Self {
        Self::from_ratio(1, 1)
    }

    pub fn from_int(n: i128) -> Self {
        Self::from_ratio(n, 1)
    }

    pub fn from_ratio(num: i128, den: i128) -> Self {
        assert!(den != 0, "zero denominator");
        Cyclo {
            table: table(1),
            num: vec![num],
            den,
        }
        .normalized()
    }

    pub fn from_rational(r: &BigRational) -> Self {
        let n = r
            .numer()
            .to_i128()
            .expect("rational numerator exceeds i128");
        let d = r
            .denom()
            .to_i128()
            .expect("rational denominator exceeds i128");
        Self::from_ratio(n, d)
    }

    /// ζ_n^e.
    pub fn root(e: i64, n: u64) -> Self {
        let t = table(n);
        let e = e.rem_euclid(n as i64) as usize;
        let mut num = vec![0i128; t.phi];
        for &(i, c) in &t.powers[e] {
            num[i as usize] = c;
        }
        Cyclo {
            table: t,
            num,
            den: 1,
        }
    }

    /// Σ_e counts[e] ζ_n^e.
    pub fn from_root_counts(counts: &[i64], n: u64) -> Self {
        assert_eq!(
            counts.len() as u64,
            n,
            "histogram length must equal the level"
        );
        let t = table(n);
        let mut num = vec![0i128; t.phi];
        for (e, &c) in counts.iter().enumerate() {
            if c != 0 {
                for &(i, r) in &t.powers[e] {
                    num[i as usize] = ck_add(num[i as usize], ck_mul(r, c as i128));
                }
            }
        }
        Cyclo {
            table: t,
            num,
            den: 1,
        }
        .normalized()
    }

    pub fn level(&self) -> u64 {
        self.table.n
    }

    pub fn denominator(&self) -> i128 {
        self.den
    }

    /// Power-basis numerators (over [`Cyclo::denominator`]).
    pub fn numerators(&self) -> &[i128] {
        &self.num
    }

    fn normalized(mut self) -> Self {
        if self.den < 0 {
            self.den = -self.den;
            for c in self.num.iter_mut() {
                *c = -*c;
            }
        }
        let mut g = self.den;
        for &c in &self.num {
            if g == 1 {
                break;
            }
            g = gcd128(g, c);
        }
        if self.num.iter().all(|&c| c == 0) {
            self.den = 1;
        } else if g > 1 {
            self.den /= g;
            for c in self.num.iter_mut() {
                *c /= g;
            }
        }
        self
    }

    /// Re-express at a multiple `n` of the current level.
    pub fn lift(&self, n: u64) -> Self {
        let from = self.table.n;
        if from == n {
            return self.clone();
        }
        assert!(
            n.is_multiple_of(from),
            "lift target {n} is not a multiple of level {from}"
        );
        let t = table(n);
        let step = (n / from) as usize;
        let mut num = vec![0i128; t.phi];
        for (i, &c) in self.num.iter().enumerate() {
            if c != 0 {
                for &(j, r) in &t.powers[i * step] {
                    num[j as usize] = ck_add(num[j as usize], ck_mul(r, c));
                }
            }
        }
        Cyclo {
            table: t,
            num,
            den: self.den,
        }
    }

    fn common(&self, other: &Self) -> (Self, Self) {
        if self.table.n == other.table.n {
            return (self.clone(), other.clone());
        }
        let n = self.table.n.lcm(&other.table.n);
        (self.lift(n), other.lift(n))
    }

    pub fn is_zero(&self) -> bool {
        self.num.iter().all(|&c| c == 0)
    }

    pub fn add(&self, other: &Self) -> Self {
        if other.is_zero() {
            return self.clone();
        }
        if self.is_zero() {
            return other.clone();
        }
        let (a, b) = self.common(other);
        let g = gcd128(a.den, b.den);
        let fa = b.den / g;
        let fb = a.den / g;
        let num = a
            .num
            .iter()
            .zip(&b.num)
            .map(|(&x, &y)| ck_add(ck_mul(x, fa), ck_mul(y, fb)))
            .collect();
        Cyclo {
            table: a.table,
            num,
            den: ck_mul(a.den, fa),
        }
        .normalized()
    }

    pub fn neg(&self) -> Self {
        Cyclo {
            table: self.table.clone(),
            num: self.num.iter().map(|c| -c).collect(),
            den: self.den,
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &Self) -> Self {
        if self.is_zero() || other.is_zero() {
            return Cyclo::zero();
        }
        if self.table.n == 1 {
            return other.scale(self.num[0], self.den);
        }
        if other.table.n == 1 {
            return self.scale(other.num[0], other.den);
        }
        let (a, b) = self.common(other);
        let t = a.table.clone();
        let n = t.n as usize;
        let mut acc = vec![0i128; n];
        for (i, &x) in a.num.iter().enumerate() {
            if x == 0 {
                continue;
            }
            for (j, &y) in b.num.iter().enumerate() {
                if y != 0 {
                    let k = (i + j) % n;
                    acc[k] = ck_add(acc[k], ck_mul(x, y));
                }
            }
        }
        let mut num = vec![0i128; t.phi];
        for (e, &c) in acc.iter().enumerate() {
            if c != 0 {
                for &(i, r) in &t.powers[e] {
                    num[i as usize] = ck_add(num[i as usize], ck_mul(r, c));
                }
            }
        }
        Cyclo {
            table: t,
            num,
            den: ck_mul(a.den, b.den),
        }
        .normalized()
    }

    /// Multiply by the rational `num / den`.
    pub fn scale(&self, num: i128, den: i128) -> Self {
        assert!(den != 0, "zero denominator");
        if num == 0 {
            return Cyclo::zero();
        }
        let g = gcd128(num, den);
        let (num, den) = (num / g, den / g);
        Cyclo {
            table: self.table.clone(),
            num: self.num.iter().map(|&c| ck_mul(c, num)).collect(),
            den: ck_mul(self.den, den),
        }
        .normalized()
    }

    /// Multiply by ζ_n^e, lifting if necessary.
    pub fn mul_root(&self, e: i64, n: u64) -> Self {
        if self.is_zero() {
            return self.clone();
        }
        let lvl = self.table.n.lcm(&n);
        let a = self.lift(lvl);
        let t = a.table.clone();
        let shift = (e.rem_euclid(n as i64) as u64 * (lvl / n)) as usize;
        let mut num = vec![0i128; t.phi];
        for (i, &c) in a.num.iter().enumerate() {
            if c != 0 {
                for &(j, r) in &t.powers[(i + shift) % lvl as usize] {
                    num[j as usize] = ck_add(num[j as usize], ck_mul(r, c));
                }
            }
        }
        Cyclo {
            table: t,
            num,
            den: a.den,
        }
    }

    /// Complex conjugation ζ ↦ ζ^{-1}.
    pub fn conj(&self) -> Self {
        let t = self.table.clone();
        let n = t.n as usize;
        let mut num = vec![0i128; t.phi];
        for (i, &c) in self.num.iter().enumerate() {
            if c != 0 {
                for &(j, r) in &t.powers[(n - i) % n] {
                    num[j as usize] = ck_add(num[j as usize], ck_mul(r, c));
                }
            }
        }
        Cyclo {
            table: t,
            num,
            den: self.den,
        }
    }

    /// The rational value, if the element lies in Q.
    pub fn to_rational(&self) -> Option<BigRational> {
        if self.num[1..].iter().any(|&c| c != 0) {
            return None;
        }
        Some(BigRational::new(
            BigInt::from(self.num[0]),
            BigInt::from(self.den),
        ))
    }

    pub fn to_complex(&self) -> Complex64 {
        let n = self.table.n as f64;
        let mut z = Complex64::new(0.0, 0.0);
        for (i, &c) in self.num.iter().enumerate() {
            if c != 0 {
                z += Complex64::from_polar(c as f64, std::f64::consts::TAU * i as f64 / n);
            }
        }
        z / self.den as f64
    }

    /// Multiplicative inverse, `None` for zero.
    pub fn inv(&self) -> Option<Self> {
        if self.is_zero() {
            return None;
        }
        let t = self.table.clone();
        let modulus: Vec<BigRational> = t.poly.iter().map(|&c| rat(c, 1)).collect();
        let a: Vec<BigRational> = self.num.iter().map(|&c| rat(c, 1)).collect();
        let (g, s) = ext_gcd(&a, &modulus);
        debug_assert_eq!(g.len(), 1);
        let c0 = g[0].clone();
        // s·a ≡ c0 (mod Φ_n), so a^{-1} = s·den / c0
        let factor = BigRational::from_integer(BigInt::from(self.den)) / c0;
        let coeffs: Vec<BigRational> = s.iter().map(|c| c * &factor).collect();
        let mut den = BigInt::one();
        for c in &coeffs {
            den = den.lcm(c.denom());
        }
        let mut num = vec![0i128; t.phi];
        for (i, c) in coeffs.iter().enumerate() {
            let v = c * BigRational::from_integer(den.clone());
            num[i] = v
                .to_integer()
                .to_i128()
                .expect("cyclotomic coefficient overflow");
        }
        Some(
            Cyclo {
                table: t,
                num,
                den: den.to_i128().expect("cyclotomic denominator overflow"),
            }
            .normalized(),
        )
    }

    /// Render as `[(e, n, coefficient), ...]` triples meaning Σ coefficient·ζ_n^e.
    pub fn triples(&self) -> Vec<(u64, u64, BigRational)> {
        self.num
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0)
            .map(|(i, &c)| {
                (
                    i as u64,
                    self.table.n,
                    BigRational::new(c.into(), self.den.into()),
                )
            })
            .collect()
    }
}

fn rat(n: i128, d: i128) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

fn trim(p: &mut Vec<BigRational>) {
    while p.len() > 1 && p.last().is_some_and(|c| c.is_zero()) {
        p.pop();
    }
}

fn poly_sub_mul(a: &[BigRational], q: &[BigRational], b: &[BigRational]) -> Vec<BigRational> {
    let len = a.len().max(q.len() + b.len() - 1);
    let mut out = vec![BigRational::zero(); len];
    for (i, c) in a.iter().enumerate() {
        out[i] += c;
    }
    for (i, x) in q.iter().enumerate() {
        if x.is_zero() {
            continue;
        }
        for (j, y) in b.iter().enumerate() {
            out[i + j] -= x * y;
        }
    }
    trim(&mut out);
    out
}

fn poly_divmod(a: &[BigRational], b: &[BigRational]) -> (Vec<BigRational>, Vec<BigRational>) {
    let mut r = a.to_vec();
    trim(&mut r);
    let db = b.len() - 1;
    let lead = b[db].clone();
    if r.len() <= db {
        return (vec![BigRational::zero()], r);
    }
    let mut q = vec![BigRational::zero(); r.len() - db];
    for i in (0..q.len()).rev() {
        let c = &r[i + db] / &lead;
        if !c.is_zero() {
            for (j, y) in b.iter().enumerate() {
                r[i + j] -= &c * y;
            }
        }
        q[i] = c;
    }
    r.truncate(db.max(1));
    trim(&mut r);
    (q, r)
}

/// Returns (g, s) with s·a ≡ g (mod m) and g = gcd(a, m).
fn ext_gcd(a: &[BigRational], m: &[BigRational]) -> (Vec<BigRational>, Vec<BigRational>) {
    let mut r0 = m.to_vec();
    let mut r1 = a.to_vec();
    trim(&mut r1);
    let mut s0 = vec![BigRational::zero()];
    let mut s1 = vec![BigRational::one()];
    while !(r1.len() == 1 && r1[0].is_zero()) {
        let (q, r) = poly_divmod(&r0, &r1);
        let s = poly_sub_mul(&s0, &q, &s1);
        r0 = std::mem::replace(&mut r1, r);
        s0 = std::mem::replace(&mut s1, s);
    }
    // reduce s0 modulo m
    let (_, s) = poly_divmod(&s0, m);
    let mut s = s;
    s.resize(m.len() - 1, BigRational::zero());
    (r0, s)
}

impl PartialEq for Cyclo {
    fn eq(&self, other: &Self) -> bool {
        let (a, b) = self.common(other);
        let (a, b) = (a.normalized(), b.normalized());
        a.den == b.den && a.num == b.num
    }
}

impl Eq for Cyclo {}

impl fmt::Display for Cyclo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(r) = self.to_rational() {
            return write!(f, "{r}");
        }
        let terms: Vec<String> = self
            .triples()
            .into_iter()
            .map(|(e, n, c)| format!("({e},{n},{c})"))
            .collect();
        write!(f, "[{}]", terms.join(","))
    }
}
