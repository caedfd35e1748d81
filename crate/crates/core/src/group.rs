//! Elements of G = PGL2(k) as normalized 2×2 matrices, and the adjoint
//! action on the traceless subspace B⁰.
//!
//! A traceless matrix (α β; γ −α) is written `[α, β, γ]`.

use std::fmt;

use crate::error::{Error, Result};
use crate::field::{KElem, LocalField};

/// Coordinates `[α, β, γ]` of a traceless matrix.
pub type Traceless = [KElem; 3];

/// A 3×3 matrix of scalars acting on traceless coordinates (column j is the
/// image of the j-th basis vector).
pub type Mat3 = [[KElem; 3]; 3];

/// An element of PGL2(k), stored as the representative whose first entry of
/// minimal valuation (in the order a, b, c, d) equals 1.
#[derive(Clone, Copy, Debug)]
pub struct GroupElem {
    field: LocalField,
    e: [KElem; 4],
}

fn mat_mul(x: &[KElem; 4], y: &[KElem; 4]) -> [KElem; 4] {
    [
        x[0].mul(&y[0]).add(&x[1].mul(&y[2])),
        x[0].mul(&y[1]).add(&x[1].mul(&y[3])),
        x[2].mul(&y[0]).add(&x[3].mul(&y[2])),
        x[2].mul(&y[1]).add(&x[3].mul(&y[3])),
    ]
}

fn adjugate(x: &[KElem; 4]) -> [KElem; 4] {
    [x[3], x[1].neg(), x[2].neg(), x[0]]
}

impl GroupElem {
    /// Normalize a matrix `(a b; c d)` with nonzero determinant.
    pub fn new(field: &LocalField, e: [KElem; 4]) -> Result<Self> {
        let det = e[0].mul(&e[3]).sub(&e[1].mul(&e[2]));
        if det.is_zero() {
            return Err(Error::Domain(
                "matrix is not invertible at the working precision".into(),
            ));
        }
        let vmin = e
            .iter()
            .filter_map(|x| x.valuation())
            .min()
            .expect("some entry is nonzero");
        for x in &e {
            if x.is_zero() && x.abs_precision() < vmin {
                return Err(Error::PrecisionLoss(
                    "entry too imprecise to normalize".into(),
                ));
            }
        }
        let pivot = e
            .iter()
            .find(|x| x.valuation() == Some(vmin))
            .copied()
            .expect("pivot");
        let inv = pivot.inv()?;
        let e = [
            e[0].mul(&inv),
            e[1].mul(&inv),
            e[2].mul(&inv),
            e[3].mul(&inv),
        ];
        Ok(GroupElem { field: *field, e })
    }

    pub fn from_ints(field: &LocalField, m: [i64; 4]) -> Result<Self> {
        Self::new(field, m.map(|x| field.int(x)))
    }

    pub fn identity(field: &LocalField) -> Self {
        Self::from_ints(field, [1, 0, 0, 1]).expect("identity")
    }

    /// n(x) = (1 x; 0 1).
    pub fn n(field: &LocalField, x: KElem) -> Self {
        Self::new(field, [field.one(), x, field.zero(), field.one()]).expect("unipotent")
    }

    /// n'(x) = (1 0; x 1).
    pub fn n_prime(field: &LocalField, x: KElem) -> Self {
        Self::new(field, [field.one(), field.zero(), x, field.one()]).expect("unipotent")
    }

    /// a(y) = (y 0; 0 1).
    pub fn a(field: &LocalField, y: KElem) -> Result<Self> {
        Self::new(field, [y, field.zero(), field.zero(), field.one()])
    }

    /// The nontrivial Weyl element w = (0 1; 1 0).
    pub fn w(field: &LocalField) -> Self {
        Self::from_ints(field, [0, 1, 1, 0]).expect("weyl element")
    }

    pub fn field(&self) -> &LocalField {
        &self.field
    }

    /// Entries (a, b, c, d) of the normalized representative.
    pub fn entries(&self) -> &[KElem; 4] {
        &self.e
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        Self::new(&self.field, mat_mul(&self.e, &other.e))
    }

    pub fn inverse(&self) -> Result<Self> {
        Self::new(&self.field, adjugate(&self.e))
    }

    /// Determinant of the normalized representative.
    pub fn det(&self) -> KElem {
        self.e[0].mul(&self.e[3]).sub(&self.e[1].mul(&self.e[2]))
    }

    pub fn trace(&self) -> KElem {
        self.e[0].add(&self.e[3])
    }

    /// tr² ≠ 4·det, decided at the working precision.
    pub fn is_regular_semisimple(&self) -> Result<bool> {
        let t = self.trace();
        let disc = t.mul(&t).sub(&self.field.int(4).mul(&self.det()));
        if disc.is_zero() {
            if disc.abs_precision() >= self.field.precision() as i32 / 2 {
                return Ok(false);
            }
            return Err(Error::PrecisionLoss("discriminant undetermined".into()));
        }
        Ok(true)
    }

    /// Membership in the principal congruence subgroup K[m] (K[0] = PGL2(o)).
    pub fn in_k(&self, m: u32) -> Result<bool> {
        let det = self.det();
        if !det.is_unit()? {
            return Ok(false);
        }
        if m == 0 {
            return Ok(true);
        }
        let [a, b, c, d] = &self.e;
        let m = m as i32;
        Ok(a.is_unit()? && b.in_ideal(m)? && c.in_ideal(m)? && d.sub(a).in_ideal(m)?)
    }

    /// The Cartan exponent r with g ∈ K a(ϖ^r) K.
    pub fn cartan_exponent(&self) -> Result<u32> {
        let vmin = self
            .e
            .iter()
            .filter_map(|x| x.valuation())
            .min()
            .expect("nonzero entry");
        Ok((self.det().ord()? - 2 * vmin) as u32)
    }

    /// Projective equality.
    pub fn equals(&self, other: &Self) -> Result<bool> {
        for (x, y) in self.e.iter().zip(other.e.iter()) {
            if !x.equals(y)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// g ξ g⁻¹ for traceless ξ.
    pub fn conj_traceless(&self, xi: &Traceless) -> Result<Traceless> {
        let [al, be, ga] = xi;
        let x = [*al, *be, *ga, al.neg()];
        let y = mat_mul(&mat_mul(&self.e, &x), &adjugate(&self.e));
        let det = self.det();
        Ok([y[0].div(&det)?, y[1].div(&det)?, y[2].div(&det)?])
    }

    /// Matrix of Ad(g): ξ ↦ g ξ g⁻¹ on `[α, β, γ]` coordinates.
    pub fn ad_matrix(&self) -> Result<Mat3> {
        let f = &self.field;
        let basis = [
            [f.one(), f.zero(), f.zero()],
            [f.zero(), f.one(), f.zero()],
            [f.zero(), f.zero(), f.one()],
        ];
        let mut t = [[f.zero(); 3]; 3];
        for (j, b) in basis.iter().enumerate() {
            let img = self.conj_traceless(b)?;
            for i in 0..3 {
                t[i][j] = img[i];
            }
        }
        Ok(t)
    }
}

/// Apply a 3×3 matrix to traceless coordinates.
pub fn apply3(t: &Mat3, x: &Traceless) -> Traceless {
    let row = |i: usize| {
        t[i][0]
            .mul(&x[0])
            .add(&t[i][1].mul(&x[1]))
            .add(&t[i][2].mul(&x[2]))
    };
    [row(0), row(1), row(2)]
}

impl fmt::Display for GroupElem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({} {}; {} {})",
            self.e[0], self.e[1], self.e[2], self.e[3]
        )
    }
}

/// Integer 2×2 matrices modulo p^k, used by the enumeration-heavy checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ResidueMat(pub [u64; 4]);

impl ResidueMat {
    pub fn mul(&self, o: &Self, modulus: u64) -> Self {
        let m = modulus as u128;
        let [a, b, c, d] = self.0.map(|x| x as u128);
        let [e, f, g, h] = o.0.map(|x| x as u128);
        ResidueMat([
            ((a * e + b * g) % m) as u64,
            ((a * f + b * h) % m) as u64,
            ((c * e + d * g) % m) as u64,
            ((c * f + d * h) % m) as u64,
        ])
    }

    pub fn adjugate(&self, modulus: u64) -> Self {
        let [a, b, c, d] = self.0;
        ResidueMat([
            d,
            (modulus - b % modulus) % modulus,
            (modulus - c % modulus) % modulus,
            a,
        ])
    }

    pub fn det(&self, modulus: u64) -> u64 {
        let m = modulus as u128;
        let [a, b, c, d] = self.0.map(|x| x as u128);
        ((a * d % m + m - b * c % m) % m) as u64
    }
}

/// Representatives of K[m]/K[l] (m ≥ 1) in PGL2, as
/// `(1 + ϖ^m x, ϖ^m y; ϖ^m z, 1)` with x, y, z modulo q^{l−m}.
pub fn km_quotient_reps(p: u64, m: u32, l: u32) -> Vec<ResidueMat> {
    assert!(m >= 1 && l >= m);
    let modulus = p.pow(l);
    let width = p.pow(l - m);
    let pm = p.pow(m);
    let mut out = Vec::with_capacity((width * width * width) as usize);
    for x in 0..width {
        for y in 0..width {
            for z in 0..width {
                out.push(ResidueMat([
                    (1 + pm * x) % modulus,
                    (pm * y) % modulus,
                    (pm * z) % modulus,
                    1,
                ]));
            }
        }
    }
    out
}

/// Representatives of PGL2(o/q^l): matrices with unit determinant whose first
/// unit entry (in the order a, b, c, d) equals 1.
pub fn pgl2_reps(p: u64, l: u32) -> Vec<ResidueMat> {
    let modulus = p.pow(l);
    let mut out = Vec::new();
    let unit = |x: u64| !x.is_multiple_of(p);
    for a in 0..modulus {
        for b in 0..modulus {
            for c in 0..modulus {
                for d in 0..modulus {
                    let m = ResidueMat([a, b, c, d]);
                    if !unit(m.det(modulus)) {
                        continue;
                    }
                    let first = m.0.iter().copied().find(|&x| unit(x));
                    if first == Some(1) {
                        out.push(m);
                    }
                }
            }
        }
    }
    out
}
