//! π(f) on the principal series χ ⊞ χ⁻¹, realized on K[L]-invariant vectors.
//!
//! A vector is a function v on K with v(b k) = χ(λ₁/λ₂) v(k) for upper
//! triangular b = (λ₁ *; 0 λ₂); it is determined by its values at one
//! representative k_j of each point of ℙ¹(𝔬/𝔮^L).  With vol(K[L]) = q^{−3L},
//!
//!   (π(f)v)(k_i) = q^{−3L} Σ_{g ∈ 𝔍/K[L]} f(g) χ(b) v(k_j),  k_i g = b k_j.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::amplitude::{sum_in_order, Amplitude, Backend};
use crate::characters::MultChar;
use crate::error::{Error, Result};
use crate::field::{invmod, mulmod, upow};
use crate::group::ResidueMat;
use crate::kernels::MicrolocalKernel;

/// Representatives of ℙ¹(𝔬/𝔮^L) with determinant 1: (1 0; c 1) for [c : 1]
/// and (0 −1; 1 d) for [1 : d] with d ∈ 𝔮.
pub fn p1_reps(p: u64, level: u32) -> Vec<ResidueMat> {
    let m = upow(p, level);
    let mut out: Vec<ResidueMat> = (0..m).map(|c| ResidueMat([1, 0, c, 1])).collect();
    out.extend((0..m / p).map(|t| ResidueMat([0, m - 1, 1, t * p])));
    out
}

/// Index of the point [h₂₁ : h₂₂] and the scalar λ₂ with (h₂₁, h₂₂) = λ₂·(bottom row of k_j).
fn locate(h: &ResidueMat, p: u64, m: u64) -> (usize, u64) {
    let [_, _, c, d] = h.0;
    if d % p != 0 {
        let c1 = mulmod(c, invmod(d, m).expect("unit"), m);
        (c1 as usize, d)
    } else {
        let d1 = mulmod(d, invmod(c, m).expect("unit"), m);
        (m as usize + (d1 / p) as usize, c)
    }
}

/// The matrix of π(f) in the basis of point evaluations.
#[derive(Clone, Debug)]
pub struct ProjectorMatrix {
    pub dim: usize,
    pub entries: Vec<Amplitude>,
    pub backend: Backend,
}

impl ProjectorMatrix {
    pub fn get(&self, i: usize, j: usize) -> &Amplitude {
        &self.entries[i * self.dim + j]
    }

    pub fn square(&self) -> ProjectorMatrix {
        let d = self.dim;
        let entries = (0..d * d)
            .into_par_iter()
            .map(|idx| {
                let (i, j) = (idx / d, idx % d);
                let terms: Vec<Amplitude> = (0..d)
                    .filter(|&k| !self.get(i, k).is_zero() && !self.get(k, j).is_zero())
                    .map(|k| self.get(i, k).mul(self.get(k, j)))
                    .collect();
                sum_in_order(self.backend, terms.iter())
            })
            .collect();
        ProjectorMatrix {
            dim: d,
            entries,
            backend: self.backend,
        }
    }

    pub fn adjoint(&self) -> ProjectorMatrix {
        let d = self.dim;
        let entries = (0..d * d)
            .map(|idx| self.get(idx % d, idx / d).conj())
            .collect();
        ProjectorMatrix {
            dim: d,
            entries,
            backend: self.backend,
        }
    }

    pub fn trace(&self) -> Amplitude {
        let diag: Vec<Amplitude> = (0..self.dim).map(|i| self.get(i, i).clone()).collect();
        sum_in_order(self.backend, diag.iter())
    }

    pub fn max_abs_diff(&self, other: &ProjectorMatrix) -> f64 {
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| (a.to_complex() - b.to_complex()).norm())
            .fold(0.0, f64::max)
    }

    pub fn approx_eq(&self, other: &ProjectorMatrix, tol: f64) -> bool {
        self.entries
            .iter()
            .zip(&other.entries)
            .all(|(a, b)| a.approx_eq(b, tol))
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|a| a.is_zero_tol(1e-12))
    }
}

/// The principal series model at level L.
pub struct InducedModel {
    pub p: u64,
    pub level: u32,
    pub chi: MultChar,
    reps: Vec<ResidueMat>,
}

impl InducedModel {
    /// `chi` is χ restricted to 𝔬^×; it is lifted to level L if needed.
    pub fn new(p: u64, level: u32, chi: &MultChar, kernel_level: u32) -> Result<Self> {
        if level < kernel_level {
            return Err(Error::Model(format!(
                "model level {level} cannot resolve a kernel of level {kernel_level}"
            )));
        }
        if chi.level() > level {
            return Err(Error::Model(format!(
                "χ has level {} above the model level {level}",
                chi.level()
            )));
        }
        let chi = if chi.level() < level {
            chi.lift(level)
        } else {
            chi.clone()
        };
        Ok(InducedModel {
            p,
            level,
            chi,
            reps: p1_reps(p, level),
        })
    }

    pub fn dim(&self) -> usize {
        self.reps.len()
    }

    fn modulus(&self) -> u64 {
        upow(self.p, self.level)
    }

    /// For each i: the point j with k_i g ∈ B k_j and the exponent of χ(b).
    fn action(&self, g: &ResidueMat) -> Vec<(usize, u64)> {
        let m = self.modulus();
        let det = g.det(m);
        self.reps
            .iter()
            .map(|k| {
                let h = k.mul(g, m);
                let (j, lambda) = locate(&h, self.p, m);
                let ratio = mulmod(det, invmod(mulmod(lambda, lambda, m), m).expect("unit"), m);
                (j, self.chi.exponent(ratio).expect("unit"))
            })
            .collect()
    }

    /// π(g)v for g ∈ K.
    pub fn act(&self, g: &ResidueMat, v: &[Amplitude]) -> Vec<Amplitude> {
        let ord = self.chi.value_order();
        self.action(g)
            .into_iter()
            .map(|(j, e)| v[j].mul_root(e as i64, ord))
            .collect()
    }

    /// Representatives of 𝔍/K[L]: (1 x; y t) with x ∈ 𝔮^{N₁}, y ∈ 𝔮^{N₂} and
    /// t − xy a unit, all modulo 𝔮^L.
    pub fn j_reps(&self, n1: u32, n2: u32) -> Vec<ResidueMat> {
        let m = self.modulus();
        let (s1, s2) = (
            upow(self.p, n1.min(self.level)),
            upow(self.p, n2.min(self.level)),
        );
        let mut out = Vec::new();
        for x in (0..m).step_by(s1 as usize) {
            for y in (0..m).step_by(s2 as usize) {
                for t in 0..m {
                    let g = ResidueMat([1, x, y, t]);
                    if !g.det(m).is_multiple_of(self.p) {
                        out.push(g);
                    }
                }
            }
        }
        out
    }

    /// The matrix of π(f).
    pub fn projector(&self, kernel: &MicrolocalKernel) -> Result<ProjectorMatrix> {
        let backend = kernel.backend;
        let m = self.modulus();
        let reps = self.j_reps(kernel.n1, kernel.n2);
        let weight = num_rational::BigRational::new(1.into(), (reps.len() as i64).into());
        let support: Vec<(ResidueMat, u64)> = reps
            .into_iter()
            .filter_map(|g| {
                let u = g.det(m) % upow(self.p, kernel.n);
                kernel
                    .block_sum
                    .get(u)
                    .filter(|s| !s.is_zero())
                    .map(|_| (g, u))
            })
            .collect();
        let ord = self.chi.value_order();
        let d = self.dim();
        let rows: Vec<Vec<Amplitude>> = (0..d)
            .into_par_iter()
            .map(|i| {
                let mut counts: HashMap<(usize, u64, u64), i64> = HashMap::new();
                for (g, u) in &support {
                    let h = self.reps[i].mul(g, m);
                    let (j, lambda) = locate(&h, self.p, m);
                    let ratio = mulmod(
                        g.det(m),
                        invmod(mulmod(lambda, lambda, m), m).expect("unit"),
                        m,
                    );
                    let e = self.chi.exponent(ratio).expect("unit");
                    *counts.entry((j, *u, e)).or_default() += 1;
                }
                let mut keys: Vec<_> = counts.into_iter().collect();
                keys.sort_unstable();
                let mut row = vec![Amplitude::zero(backend); d];
                for ((j, u, e), c) in keys {
                    let s = kernel.block_sum.get(u).expect("unit class");
                    row[j] = row[j].add(&s.mul_root(e as i64, ord).scale(c as i128, 1));
                }
                row.into_iter().map(|x| x.scale_rational(&weight)).collect()
            })
            .collect();
        Ok(ProjectorMatrix {
            dim: d,
            entries: rows.into_iter().flatten().collect(),
            backend,
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ProjectorReport {
    pub dim: usize,
    pub trace: String,
    pub rank: Option<i64>,
    pub idempotent: bool,
    pub self_adjoint: bool,
    pub idempotency_defect: f64,
    pub self_adjointness_defect: f64,
    pub image_checked: usize,
    pub image_ok: Option<bool>,
}

impl ProjectorReport {
    pub fn is_projector(&self) -> bool {
        self.idempotent && self.self_adjoint
    }
}

/// Builds π(f) in the model of χ at level L and checks that it is an
/// orthogonal projector; when its trace is 1, checks that the image
/// transforms by ω(a²/det g) on `samples` elements of 𝔍, where ω is the
/// member of {χ, χ⁻¹} lying in the kernel's block.
pub fn projector_on_principal_series(
    kernel: &MicrolocalKernel,
    chi: &MultChar,
    level: u32,
    samples: usize,
) -> Result<ProjectorReport> {
    let model = InducedModel::new(kernel.field.p(), level, chi, kernel.n)?;
    let p_mat = model.projector(kernel)?;
    let sq = p_mat.square();
    let adj = p_mat.adjoint();
    let tol = 1e-9;
    let trace = p_mat.trace();
    let rank = trace
        .to_rational()
        .filter(|r| r.is_integer())
        .and_then(|r| {
            use num_traits::ToPrimitive;
            r.to_integer().to_i64()
        });
    let rank = match (rank, trace.backend()) {
        (Some(r), _) => Some(r),
        (None, Backend::Float) => {
            let z = trace.to_complex();
            (z.im.abs() < tol && (z.re - z.re.round()).abs() < tol).then(|| z.re.round() as i64)
        }
        _ => None,
    };
    let mut image_checked = 0;
    let mut image_ok = None;
    if rank == Some(1) {
        let omega = [chi.clone(), chi.inverse()]
            .into_iter()
            .map(|w| w.lift(level.max(w.level())))
            .find(|w| kernel.block.iter().any(|b| b.lift(level) == *w))
            .ok_or_else(|| Error::Model("rank one but neither χ nor χ⁻¹ is in the block".into()))?;
        let j = (0..p_mat.dim)
            .find(|&j| !p_mat.get(j, j).is_zero_tol(tol))
            .expect("nonzero trace");
        let v: Vec<Amplitude> = (0..p_mat.dim).map(|i| p_mat.get(i, j).clone()).collect();
        let m = upow(kernel.field.p(), level);
        let reps = model.j_reps(kernel.n1, kernel.n2);
        let stride = (reps.len() / samples.max(1)).max(1);
        let mut ok = true;
        for g in reps.iter().step_by(stride).take(samples) {
            let lhs = model.act(g, &v);
            let ratio = mulmod(g.0[0], g.0[0], m);
            let ratio = mulmod(ratio, invmod(g.det(m), m).expect("unit"), m);
            let e = omega.exponent(ratio).expect("unit");
            let ord = omega.value_order();
            ok &= lhs
                .iter()
                .zip(&v)
                .all(|(a, b)| a.approx_eq(&b.mul_root(e as i64, ord), tol));
            image_checked += 1;
        }
        image_ok = Some(ok);
    }
    Ok(ProjectorReport {
        dim: p_mat.dim,
        trace: trace.render(),
        rank,
        idempotent: sq.approx_eq(&p_mat, tol),
        self_adjoint: adj.approx_eq(&p_mat, tol),
        idempotency_defect: sq.max_abs_diff(&p_mat),
        self_adjointness_defect: adj.max_abs_diff(&p_mat),
        image_checked,
        image_ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::characters::{partition_xn, SigmaClass};
    use crate::field::LocalField;

    #[test]
    fn projective_line_count() {
        assert_eq!(p1_reps(3, 4).len(), 108);
        assert_eq!(p1_reps(2, 3).len(), 12);
        let m = 81;
        for k in p1_reps(3, 4) {
            assert_eq!(k.det(m), 1);
        }
    }

    #[test]
    fn model_action_is_a_representation() {
        let chi = MultChar::new(3, 2, 0, 1);
        let model = InducedModel::new(3, 2, &chi, 2).unwrap();
        let v: Vec<Amplitude> = (0..model.dim())
            .map(|i| Amplitude::from_int(Backend::Exact, i as i128 + 1))
            .collect();
        let g = ResidueMat([1, 3, 2, 5]);
        let h = ResidueMat([2, 1, 1, 1]);
        let lhs = model.act(&g.mul(&h, 9), &v);
        let rhs = model.act(&g, &model.act(&h, &v));
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn projector_cases() {
        let f = LocalField::new(3, 10).unwrap();
        let sigma = SigmaClass::new(3, 1, 1).unwrap();
        let k = MicrolocalKernel::build(&f, 4, sigma, Backend::Exact).unwrap();
        let omega = k.block[0].clone();
        let r = projector_on_principal_series(&k, &omega, 4, 20).unwrap();
        assert!(r.is_projector(), "{r:?}");
        assert_eq!(r.rank, Some(1));
        assert_eq!(r.image_ok, Some(true));
        assert_eq!(r.image_checked, 20);

        let r = projector_on_principal_series(&k, &MultChar::trivial(3, 4), 4, 20).unwrap();
        assert_eq!(r.rank, Some(0));
        assert!(r.is_projector());

        let blocks = partition_xn(3, 4, 1).unwrap();
        let other = blocks.iter().find(|(s, _)| **s != sigma).unwrap().1;
        assert!(other.iter().all(|w| k.block.contains(&w.inverse())));
        let r = projector_on_principal_series(&k, &other[0], 4, 20).unwrap();
        assert_eq!(r.rank, Some(1));
        assert_eq!(r.image_ok, Some(true));
    }

    #[test]
    fn projector_vanishes_off_the_block_and_its_inverse() {
        let f = LocalField::new(5, 10).unwrap();
        let sigma = SigmaClass::new(5, 1, 1).unwrap();
        let k = MicrolocalKernel::build(&f, 3, sigma, Backend::Exact).unwrap();
        let blocks = partition_xn(5, 3, 1).unwrap();
        let w = blocks
            .values()
            .flatten()
            .find(|w| !k.block.contains(w) && !k.block.contains(&w.inverse()))
            .unwrap();
        let r = projector_on_principal_series(&k, w, 3, 20).unwrap();
        assert_eq!(r.rank, Some(0));
        assert!(r.is_projector());
    }
}
