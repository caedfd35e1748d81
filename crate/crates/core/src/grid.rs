//! Windowed Schwartz–Bruhat functions on B = M2(k).
//!
//! A [`GridFnB`] lives in one of two coordinate charts:
//!
//! * source: x = (d − a/2, b; c, d + a/2), axes (a, b, c, d);
//! * dual: ξ = (δ/2 + α, β; γ, δ/2 − α), axes (α, β, γ, δ).
//!
//! The pairing between them is ⟨x, ξ⟩ = tr(x^ι ξ) = αa + δd − βc − γb.  Axes
//! 0..3 carry the traceless part and axis 3 the scalar part in both charts.
//!
//! On axis i the function is supported on 𝔮^{lo_i} and constant modulo
//! 𝔮^{hi_i}; cell r of that axis is the coset ϖ^{lo_i}·r + 𝔮^{hi_i} with
//! 0 ≤ r < q^{hi_i − lo_i}.

use std::fmt;

use num_rational::BigRational;
use rayon::prelude::*;
use serde::Serialize;

use crate::amplitude::{Amplitude, Backend};
use crate::characters::AdditiveChar;
use crate::error::{Error, Result};
use crate::field::{q_pow, upow, KElem, LocalField};
use crate::group::GroupElem;

/// Largest number of cells a single grid may hold.
pub const MAX_CELLS: u64 = 1 << 26;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Chart {
    Source,
    Dual,
}

impl Chart {
    pub fn other(self) -> Chart {
        match self {
            Chart::Source => Chart::Dual,
            Chart::Dual => Chart::Source,
        }
    }

    pub fn axis_names(self) -> [&'static str; 4] {
        match self {
            Chart::Source => ["a", "b", "c", "d"],
            Chart::Dual => ["alpha", "beta", "gamma", "delta"],
        }
    }
}

impl fmt::Display for Chart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Chart::Source => "source",
            Chart::Dual => "dual",
        })
    }
}

/// The quadratic space a Weil-representation operator acts on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Space {
    /// All of B with the norm form.
    B,
    /// The traceless part B⁰; the scalar axis is carried along untouched.
    B0,
}

/// Generators of the metaplectic action.
#[derive(Clone, Copy, Debug)]
pub enum WeilElem {
    /// n(b): multiplication by ψ^τ(b·q(x)).
    N(KElem),
    /// t(a): φ ↦ χ(a)|a|^{dim/2} φ(a·).
    T(KElem),
    /// w: the ψ^τ-Fourier transform times the Weil index.
    W,
}

/// A 4×4 matrix acting on chart coordinates.
pub type Mat4 = [[KElem; 4]; 4];

/// Source axis i pairs with dual axis `PAIR[i]` with sign `SIGN[i]`.
const PAIR: [usize; 4] = [0, 2, 1, 3];
const SIGN: [i64; 4] = [1, -1, -1, 1];

#[derive(Clone, Debug)]
pub struct GridFnB {
    field: LocalField,
    chart: Chart,
    lo: [i32; 4],
    hi: [i32; 4],
    backend: Backend,
    values: Vec<Amplitude>,
}

#[derive(Serialize)]
struct GridDump {
    chart: Chart,
    p: u64,
    lo: [i32; 4],
    hi: [i32; 4],
    values: Vec<Vec<(u64, u64, String)>>,
}

fn check_windows(field: &LocalField, lo: &[i32; 4], hi: &[i32; 4]) -> Result<u64> {
    let mut cells: u64 = 1;
    for i in 0..4 {
        if hi[i] < lo[i] {
            return Err(Error::Window(format!(
                "axis {i}: window [{}, {}) is empty",
                lo[i], hi[i]
            )));
        }
        let w = (hi[i] - lo[i]) as u32;
        if w > field.precision() {
            return Err(Error::Window(format!(
                "axis {i}: width {w} exceeds precision"
            )));
        }
        let n = field
            .p()
            .checked_pow(w)
            .ok_or_else(|| Error::Window("grid too large".into()))?;
        cells = cells
            .checked_mul(n)
            .filter(|&c| c <= MAX_CELLS)
            .ok_or_else(|| {
                Error::Window(format!(
                    "grid with windows {lo:?}..{hi:?} exceeds {MAX_CELLS} cells"
                ))
            })?;
    }
    Ok(cells)
}

impl GridFnB {
    pub fn zeros(
        field: &LocalField,
        chart: Chart,
        lo: [i32; 4],
        hi: [i32; 4],
        backend: Backend,
    ) -> Result<Self> {
        let cells = check_windows(field, &lo, &hi)?;
        Ok(GridFnB {
            field: *field,
            chart,
            lo,
            hi,
            backend,
            values: vec![Amplitude::zero(backend); cells as usize],
        })
    }

    /// Tabulate `f` at the cell representatives ϖ^{lo_i}·r_i.
    pub fn from_fn<F>(
        field: &LocalField,
        chart: Chart,
        lo: [i32; 4],
        hi: [i32; 4],
        backend: Backend,
        f: F,
    ) -> Result<Self>
    where
        F: Fn(&[KElem; 4]) -> Result<Amplitude> + Sync,
    {
        let mut g = Self::zeros(field, chart, lo, hi, backend)?;
        let values: Result<Vec<Amplitude>> = (0..g.values.len())
            .into_par_iter()
            .map(|i| f(&g.point(i)))
            .collect();
        g.values = values?;
        Ok(g)
    }

    /// The indicator of Π 𝔮^{lo_i}.
    pub fn lattice_indicator(
        field: &LocalField,
        chart: Chart,
        lo: [i32; 4],
        backend: Backend,
    ) -> Result<Self> {
        let mut g = Self::zeros(field, chart, lo, lo, backend)?;
        g.values[0] = Amplitude::one(backend);
        Ok(g)
    }

    pub fn from_values(
        field: &LocalField,
        chart: Chart,
        lo: [i32; 4],
        hi: [i32; 4],
        backend: Backend,
        values: Vec<Amplitude>,
    ) -> Result<Self> {
        let mut g = Self::zeros(field, chart, lo, hi, backend)?;
        if values.len() != g.values.len() {
            return Err(Error::Window(format!(
                "expected {} values, got {}",
                g.values.len(),
                values.len()
            )));
        }
        g.values = values;
        Ok(g)
    }

    pub fn field(&self) -> &LocalField {
        &self.field
    }

    pub fn chart(&self) -> Chart {
        self.chart
    }

    pub fn lo(&self) -> [i32; 4] {
        self.lo
    }

    pub fn hi(&self) -> [i32; 4] {
        self.hi
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn values(&self) -> &[Amplitude] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn p(&self) -> u64 {
        self.field.p()
    }

    pub fn widths(&self) -> [u32; 4] {
        [0, 1, 2, 3].map(|i| (self.hi[i] - self.lo[i]) as u32)
    }

    fn sizes(&self) -> [u64; 4] {
        self.widths().map(|w| upow(self.p(), w))
    }

    pub fn residues(&self, mut idx: usize) -> [u64; 4] {
        let n = self.sizes();
        let mut r = [0u64; 4];
        for i in (0..4).rev() {
            r[i] = idx as u64 % n[i];
            idx /= n[i] as usize;
        }
        r
    }

    pub fn index(&self, r: &[u64; 4]) -> usize {
        let n = self.sizes();
        let mut idx = 0u64;
        for i in 0..4 {
            idx = idx * n[i] + r[i];
        }
        idx as usize
    }

    /// The representative point of cell `idx`.
    pub fn point(&self, idx: usize) -> [KElem; 4] {
        let r = self.residues(idx);
        [0, 1, 2, 3].map(|i| self.field.from_residue(self.lo[i], r[i]))
    }

    /// Value at an arbitrary point (zero off the support lattice).
    pub fn eval(&self, x: &[KElem; 4]) -> Result<Amplitude> {
        let mut r = [0u64; 4];
        for i in 0..4 {
            if !x[i].in_ideal(self.lo[i])? {
                return Ok(Amplitude::zero(self.backend));
            }
            r[i] = x[i].residue(self.lo[i], self.hi[i])?;
        }
        Ok(self.values[self.index(&r)].clone())
    }

    /// Value at the point whose axis-i coordinate is ϖ^{lo_i}·r_i (all residues
    /// reduced modulo the axis size).
    pub fn get(&self, r: &[u64; 4]) -> &Amplitude {
        let n = self.sizes();
        let r = [0, 1, 2, 3].map(|i| r[i] % n[i]);
        &self.values[self.index(&r)]
    }

    /// Volume of one cell, q^{−Σ hi_i}.
    pub fn cell_volume(&self) -> BigRational {
        q_pow(
            self.field.q(),
            -(self.hi.iter().map(|&h| h as i64).sum::<i64>()),
        )
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| v.is_zero())
    }

    /// Re-tabulate on a finer window (lo' ≤ lo, hi' ≥ hi).
    pub fn refine(&self, lo: [i32; 4], hi: [i32; 4]) -> Result<Self> {
        if lo == self.lo && hi == self.hi {
            return Ok(self.clone());
        }
        for i in 0..4 {
            if lo[i] > self.lo[i] || hi[i] < self.hi[i] {
                return Err(Error::Window(format!(
                    "refine axis {i}: [{}, {}) does not contain [{}, {})",
                    lo[i], hi[i], self.lo[i], self.hi[i]
                )));
            }
        }
        let p = self.p();
        let mut out = Self::zeros(&self.field, self.chart, lo, hi, self.backend)?;
        let shift: [u64; 4] = [0, 1, 2, 3].map(|i| upow(p, (self.lo[i] - lo[i]) as u32));
        let old_n = self.sizes();
        let values: Vec<Amplitude> = (0..out.values.len())
            .into_par_iter()
            .map(|idx| {
                let r = out.residues(idx);
                let mut s = [0u64; 4];
                for i in 0..4 {
                    if r[i] % shift[i] != 0 {
                        return Amplitude::zero(self.backend);
                    }
                    s[i] = (r[i] / shift[i]) % old_n[i];
                }
                self.values[self.index(&s)].clone()
            })
            .collect();
        out.values = values;
        Ok(out)
    }

    /// Smallest windows representing the same function.
    pub fn trim(&self) -> Result<Self> {
        let mut g = self.clone();
        if g.is_zero() {
            return Self::zeros(&self.field, self.chart, self.lo, self.lo, self.backend);
        }
        for i in 0..4 {
            while g.lo[i] < g.hi[i] {
                let p = g.p();
                let dead = (0..g.values.len())
                    .all(|idx| g.residues(idx)[i].is_multiple_of(p) || g.values[idx].is_zero());
                if !dead {
                    break;
                }
                let mut lo = g.lo;
                lo[i] += 1;
                g = g.sample(lo, g.hi)?;
            }
            while g.hi[i] > g.lo[i] {
                let mut hi = g.hi;
                hi[i] -= 1;
                let coarse = g.sample(g.lo, hi)?;
                if coarse.refine(g.lo, g.hi)?.same_values(&g) {
                    g = coarse;
                } else {
                    break;
                }
            }
        }
        Ok(g)
    }

    /// Re-tabulate at the representatives of an arbitrary window (no checks
    /// that the function is constant on the new cells).
    fn sample(&self, lo: [i32; 4], hi: [i32; 4]) -> Result<Self> {
        let this = self.clone();
        Self::from_fn(&self.field, self.chart, lo, hi, self.backend, move |x| {
            this.eval(x)
        })
    }

    fn same_values(&self, other: &Self) -> bool {
        self.values.len() == other.values.len()
            && self.values.iter().zip(&other.values).all(|(a, b)| a == b)
    }

    /// The common refinement of two windows.
    pub fn union_windows(a: &Self, b: &Self) -> ([i32; 4], [i32; 4]) {
        let lo = [0, 1, 2, 3].map(|i| a.lo[i].min(b.lo[i]));
        let hi = [0, 1, 2, 3].map(|i| a.hi[i].max(b.hi[i]));
        (lo, hi)
    }

    fn aligned(&self, other: &Self) -> Result<(Self, Self)> {
        if self.chart != other.chart {
            return Err(Error::ChartMismatch(format!(
                "{} vs {}",
                self.chart, other.chart
            )));
        }
        let (lo, hi) = Self::union_windows(self, other);
        Ok((self.refine(lo, hi)?, other.refine(lo, hi)?))
    }

    /// Pointwise equality, exact for the exact backend and within `tol`
    /// (relative) for floats.
    pub fn approx_eq(&self, other: &Self, tol: f64) -> Result<bool> {
        let (a, b) = self.aligned(other)?;
        Ok(a.values
            .par_iter()
            .zip(b.values.par_iter())
            .all(|(x, y)| x.approx_eq(y, tol)))
    }

    /// Largest pointwise |difference|.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        let (a, b) = self.aligned(other)?;
        Ok(a.values
            .iter()
            .zip(&b.values)
            .map(|(x, y)| (x.to_complex() - y.to_complex()).norm())
            .fold(0.0, f64::max))
    }

    pub fn map<F: Fn(&Amplitude) -> Amplitude + Sync + Send>(&self, f: F) -> Self {
        GridFnB {
            values: self.values.par_iter().map(f).collect(),
            ..self.clone()
        }
    }

    pub fn scale_rational(&self, r: &BigRational) -> Self {
        self.map(|v| v.scale_rational(r))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        let (a, b) = self.aligned(other)?;
        let values = a
            .values
            .par_iter()
            .zip(b.values.par_iter())
            .map(|(x, y)| x.add(y))
            .collect();
        Ok(GridFnB { values, ..a })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        let (a, b) = self.aligned(other)?;
        let values = a
            .values
            .par_iter()
            .zip(b.values.par_iter())
            .map(|(x, y)| x.sub(y))
            .collect();
        Ok(GridFnB { values, ..a })
    }

    fn neg_residue(r: u64, n: u64) -> u64 {
        (n - r % n) % n
    }

    /// x ↦ φ(−x).
    pub fn reflect(&self) -> Self {
        let n = self.sizes();
        let values = (0..self.values.len())
            .into_par_iter()
            .map(|idx| {
                let r = self.residues(idx);
                let s = [0, 1, 2, 3].map(|i| Self::neg_residue(r[i], n[i]));
                self.values[self.index(&s)].clone()
            })
            .collect();
        GridFnB {
            values,
            ..self.clone()
        }
    }

    /// x ↦ φ(x) with coordinate `axis` negated.
    pub fn reflect_axis(&self, axis: usize) -> Self {
        let n = self.sizes();
        let values = (0..self.values.len())
            .into_par_iter()
            .map(|idx| {
                let mut r = self.residues(idx);
                r[axis] = Self::neg_residue(r[axis], n[axis]);
                self.values[self.index(&r)].clone()
            })
            .collect();
        GridFnB {
            values,
            ..self.clone()
        }
    }

    /// x ↦ φ(ϖ^{−k₀}x₀, …, ϖ^{−k₃}x₃); only the windows move.
    pub fn rescale(&self, k: [i32; 4]) -> Self {
        let lo = [0, 1, 2, 3].map(|i| self.lo[i] + k[i]);
        let hi = [0, 1, 2, 3].map(|i| self.hi[i] + k[i]);
        GridFnB {
            lo,
            hi,
            ..self.clone()
        }
    }

    /// Σ over axes 1 and 2 with cell volumes: the result is constant in
    /// those coordinates on 𝔬 (windows [0, 0)).
    pub fn integrate_middle(&self) -> Result<Self> {
        let n = self.sizes();
        let weight = q_pow(self.field.q(), -(self.hi[1] as i64 + self.hi[2] as i64));
        let lo = [self.lo[0], 0, 0, self.lo[3]];
        let hi = [self.hi[0], 0, 0, self.hi[3]];
        let mut out = Self::zeros(&self.field, self.chart, lo, hi, self.backend)?;
        out.values = (0..out.values.len())
            .into_par_iter()
            .map(|idx| {
                let r = out.residues(idx);
                let mut acc = Amplitude::zero(self.backend);
                for b in 0..n[1] {
                    for c in 0..n[2] {
                        acc = acc.add(&self.values[self.index(&[r[0], b, c, r[3]])]);
                    }
                }
                acc.scale_rational(&weight)
            })
            .collect();
        Ok(out)
    }

    /// 𝔖φ(x) = (φ(x) + φ(x − tr x))/2, i.e. the average over the sign of the
    /// scalar coordinate.
    pub fn symmetrize(&self) -> Self {
        let n = self.sizes();
        let values = (0..self.values.len())
            .into_par_iter()
            .map(|idx| {
                let mut r = self.residues(idx);
                r[3] = Self::neg_residue(r[3], n[3]);
                self.values[idx]
                    .add(&self.values[self.index(&r)])
                    .scale(1, 2)
            })
            .collect();
        GridFnB {
            values,
            ..self.clone()
        }
    }

    /// Σ φ₁·conj(φ₂)·vol(cell).
    pub fn inner(&self, other: &Self) -> Result<Amplitude> {
        let (a, b) = self.aligned(other)?;
        let terms: Vec<Amplitude> = a
            .values
            .par_iter()
            .zip(b.values.par_iter())
            .map(|(x, y)| x.mul(&y.conj()))
            .collect();
        let sum = crate::amplitude::sum_in_order(self.backend, terms.iter());
        Ok(sum.scale_rational(&a.cell_volume()))
    }

    /// Σ φ·vol(cell).
    pub fn integral(&self) -> Amplitude {
        crate::amplitude::sum_in_order(self.backend, self.values.iter())
            .scale_rational(&self.cell_volume())
    }

    /// The Fourier transform with respect to ψ.
    pub fn fourier(&self) -> Result<Self> {
        self.fourier_twisted(&self.field.one())
    }

    /// The ψ^τ-Fourier transform ℱφ(ξ) = ∫ φ(x) ψ(τ⟨x, ξ⟩) d_τx, with the
    /// ψ^τ-self-dual measure d_τx = |τ|² dx.  Maps source to dual coordinates
    /// and back.
    pub fn fourier_twisted(&self, tau: &KElem) -> Result<Self> {
        self.partial_fourier(tau, 4)
    }

    /// Fourier transform in the first `axes` coordinates (3 for the traceless
    /// part, 4 for all of B).
    fn partial_fourier(&self, tau: &KElem, axes: usize) -> Result<Self> {
        let v = tau.ord()?;
        let p = self.p();
        let widths = self.widths();
        let max_w = *widths.iter().max().unwrap_or(&0);
        let u = if max_w == 0 {
            1
        } else {
            tau.unit_residue(max_w)?
        };
        let mut vals = self.values.clone();
        let sizes = self.sizes();
        for (i, &w) in widths.iter().enumerate().take(axes) {
            if w == 0 {
                continue;
            }
            let n = sizes[i];
            let mult = (SIGN[i].rem_euclid(n as i64) as u64 * (u % n)) % n;
            vals = dft_axis(&vals, &sizes, i, n, mult, self.backend);
        }
        let mut lo = self.lo;
        let mut hi = self.hi;
        for i in 0..axes {
            lo[PAIR[i]] = -self.hi[i] - v;
            hi[PAIR[i]] = -self.lo[i] - v;
        }
        let mut out = Self::zeros(&self.field, self.chart.other(), lo, hi, self.backend)?;
        let in_grid = GridFnB {
            values: vals,
            ..self.clone()
        };
        out.values = (0..out.values.len())
            .into_par_iter()
            .map(|idx| {
                let r = out.residues(idx);
                let mut s = r;
                for i in 0..axes {
                    s[i] = r[PAIR[i]];
                }
                in_grid.values[in_grid.index(&s)].clone()
            })
            .collect();
        let hi_sum: i64 = self.hi.iter().take(axes).map(|&h| h as i64).sum();
        let mut weight = q_pow(self.field.q(), -hi_sum);
        if axes == 4 {
            weight *= q_pow(self.field.q(), -2 * v as i64);
            Ok(out.scale_rational(&weight))
        } else {
            let half = Amplitude::sqrt_q_pow(self.backend, p, -3 * v as i64);
            Ok(out.map(|x| x.scale_rational(&weight).mul(&half)))
        }
    }

    /// out(x) = φ(S x) where `s` maps coordinates of `chart` to coordinates
    /// of `self.chart` and `s_inv` is its inverse.  Output windows are
    /// inferred from the valuations of both matrices.
    pub fn pullback_linear(&self, chart: Chart, s: &Mat4, s_inv: &Mat4) -> Result<Self> {
        let mut lo = [0i32; 4];
        let mut hi = [0i32; 4];
        for i in 0..4 {
            lo[i] = (0..4)
                .filter_map(|j| s_inv[i][j].valuation().map(|v| v + self.lo[j]))
                .min()
                .ok_or_else(|| Error::Domain("singular linear map".into()))?;
            hi[i] = (0..4)
                .filter_map(|j| s[j][i].valuation().map(|v| self.hi[j] - v))
                .max()
                .ok_or_else(|| Error::Domain("singular linear map".into()))?;
            hi[i] = hi[i].max(lo[i]);
        }
        let this = self.clone();
        let s = *s;
        Self::from_fn(&self.field, chart, lo, hi, self.backend, move |x| {
            let y = [0, 1, 2, 3].map(|i| {
                s[i][0]
                    .mul(&x[0])
                    .add(&s[i][1].mul(&x[1]))
                    .add(&s[i][2].mul(&x[2]))
                    .add(&s[i][3].mul(&x[3]))
            });
            this.eval(&y)
        })
    }

    /// Ad(g)φ(x) = φ(g⁻¹ x g).
    pub fn adjoint(&self, g: &GroupElem) -> Result<Self> {
        let s = chart_ad_matrix(&self.field, self.chart, &g.inverse()?)?;
        let s_inv = chart_ad_matrix(&self.field, self.chart, g)?;
        self.pullback_linear(self.chart, &s, &s_inv)
    }

    /// x ↦ φ(a·x) on all coordinates (`traceless_only` leaves the scalar axis alone).
    pub fn dilate(&self, a: &KElem, traceless_only: bool) -> Result<Self> {
        let f = &self.field;
        let ainv = a.inv()?;
        let axes = if traceless_only { 3 } else { 4 };
        let mut s = identity4(f);
        let mut s_inv = identity4(f);
        for i in 0..axes {
            s[i][i] = *a;
            s_inv[i][i] = ainv;
        }
        self.pullback_linear(self.chart, &s, &s_inv)
    }

    /// The same function written in the other chart.
    pub fn to_chart(&self, chart: Chart) -> Result<Self> {
        if chart == self.chart {
            return Ok(self.clone());
        }
        let f = &self.field;
        let two = f.int(2);
        let half = f.ratio(1, 2)?;
        let mut dual_to_source = [[f.zero(); 4]; 4];
        dual_to_source[0][0] = two.neg();
        dual_to_source[1][1] = f.one();
        dual_to_source[2][2] = f.one();
        dual_to_source[3][3] = half;
        let mut source_to_dual = [[f.zero(); 4]; 4];
        source_to_dual[0][0] = half.neg();
        source_to_dual[1][1] = f.one();
        source_to_dual[2][2] = f.one();
        source_to_dual[3][3] = two;
        match chart {
            Chart::Dual => self.pullback_linear(chart, &dual_to_source, &source_to_dual),
            Chart::Source => self.pullback_linear(chart, &source_to_dual, &dual_to_source),
        }
    }

    /// Multiplication by ψ^τ(b·q(x)), q = det on B or its restriction to B⁰.
    pub fn phase_det(&self, b: &KElem, tau: &KElem, space: Space) -> Result<Self> {
        let f = self.field;
        let chart = self.chart;
        let coef = tau.mul(b);
        if coef.is_zero() {
            return Ok(self.clone());
        }
        let v = coef.ord()?;
        let ord2 = f.ord2() as i32;
        let min_lo = *self.lo.iter().min().expect("four axes");
        let need = (-v - min_lo + 2 * ord2).max((-v + 2 * ord2 + 1).div_euclid(2));
        let hi = [0, 1, 2, 3].map(|i| self.hi[i].max(need).max(self.lo[i]));
        let this = self.clone();
        let psi = AdditiveChar::new(coef);
        let backend = self.backend;
        Self::from_fn(&f, chart, self.lo, hi, backend, move |x| {
            let val = this.eval(x)?;
            if val.is_zero() {
                return Ok(val);
            }
            let q = quadratic_form(&f, chart, x, space)?;
            Ok(val.mul(&psi.eval(&q, backend)?))
        })
    }

    /// Apply a generator of the Weil representation attached to ψ^τ.  The
    /// Weil index and the character χ are 1 on B; on B⁰ they are opaque unit
    /// constants and are set to 1 here.
    pub fn weil_apply(&self, elem: &WeilElem, tau: &KElem, space: Space) -> Result<Self> {
        match (elem, space) {
            (WeilElem::N(b), _) => self.phase_det(b, tau, space),
            (WeilElem::T(a), Space::B) => {
                let weight = self.field.abs(a).pow(2);
                Ok(self.dilate(a, false)?.scale_rational(&weight))
            }
            (WeilElem::T(a), Space::B0) => {
                let half =
                    Amplitude::sqrt_q_pow(self.backend, self.field.q(), -3 * a.ord()? as i64);
                Ok(self.dilate(a, true)?.map(|x| x.mul(&half)))
            }
            (WeilElem::W, Space::B) => self.fourier_twisted(tau),
            (WeilElem::W, Space::B0) => self.partial_fourier(tau, 3),
        }
    }

    /// φ^U(x) = 𝔼_{g ∈ K[m]} φ(Ad(g)x), computed exactly on the finite
    /// quotient K[m]/K[m'] through the chart n'(x)n(y)a(z).
    pub fn smooth_adjoint(&self, m: u32) -> Result<Self> {
        if m == 0 {
            return Err(Error::Domain("smoothing level m must be at least 1".into()));
        }
        let f = self.field;
        let ord2 = f.ord2() as i32;
        let mi = m as i32;
        // Lower bounds for the valuations of Ad(g) entries, g ∈ K[m], in [α, β, γ].
        let mut c = [[0, mi, mi], [mi + ord2, 0, 2 * mi], [mi + ord2, 2 * mi, 0]];
        if self.chart == Chart::Source {
            for (i, row) in c.iter_mut().enumerate() {
                for (j, e) in row.iter_mut().enumerate() {
                    if i == 0 && j != 0 {
                        *e += ord2;
                    } else if j == 0 && i != 0 {
                        *e -= ord2;
                    }
                }
            }
        }
        let mut lo = self.lo;
        let mut hi = self.hi;
        for i in 0..3 {
            lo[i] = (0..3)
                .map(|j| c[i][j] + self.lo[j])
                .min()
                .expect("three axes");
            hi[i] = (0..3)
                .map(|j| self.hi[j] - c[j][i])
                .max()
                .expect("three axes")
                .max(lo[i]);
        }
        let max_hi = (0..3).map(|j| self.hi[j]).max().expect("three axes");
        let min_lo = (0..3).map(|i| lo[i]).min().expect("three axes");
        let m2 = (mi).max(max_hi - min_lo + 2 * ord2) as u32;
        let reps = km_average_reps(&f, m, m2)?;
        let mats: Vec<Mat4> = reps
            .iter()
            .map(|g| chart_ad_matrix(&f, self.chart, g))
            .collect::<Result<_>>()?;
        let count = mats.len() as i128;
        let this = self.clone();
        Self::from_fn(&f, self.chart, lo, hi, self.backend, move |x| {
            let mut acc = Amplitude::zero(this.backend);
            for t in &mats {
                let y = apply4(t, x);
                acc = acc.add(&this.eval(&y)?);
            }
            Ok(acc.scale(1, count))
        })
    }

    /// Grid dump: chart, windows and values as (angle numerator, angle
    /// denominator, coefficient) triples.
    pub fn to_json(&self) -> String {
        let values = self
            .values
            .iter()
            .map(|v| match v {
                Amplitude::Exact(c) => c
                    .triples()
                    .into_iter()
                    .map(|(e, n, r)| (e, n, r.to_string()))
                    .collect(),
                Amplitude::Float(z) => vec![(0, 1, crate::amplitude::render_complex(*z))],
            })
            .collect();
        let dump = GridDump {
            chart: self.chart,
            p: self.p(),
            lo: self.lo,
            hi: self.hi,
            values,
        };
        serde_json::to_string(&dump).expect("grid dump serializes")
    }

    /// Whether every value is a real rational number.
    pub fn rational_values(&self) -> Option<Vec<BigRational>> {
        self.values.iter().map(|v| v.to_rational()).collect()
    }

    /// Largest |value| as a float.
    pub fn max_abs(&self) -> f64 {
        self.values
            .iter()
            .map(|v| v.to_complex().norm())
            .fold(0.0, f64::max)
    }
}

/// q(x) = det x on B, or det of the traceless part on B⁰, in chart coordinates.
pub fn quadratic_form(f: &LocalField, chart: Chart, x: &[KElem; 4], space: Space) -> Result<KElem> {
    let [t0, t1, t2, t3] = x;
    let (alpha, scalar) = match chart {
        Chart::Source => (t0.mul(&f.ratio(-1, 2)?), *t3),
        Chart::Dual => (*t0, t3.mul(&f.ratio(1, 2)?)),
    };
    let traceless = alpha.mul(&alpha).add(&t1.mul(t2)).neg();
    Ok(match space {
        Space::B0 => traceless,
        Space::B => scalar.mul(&scalar).add(&traceless),
    })
}

pub fn identity4(f: &LocalField) -> Mat4 {
    let mut s = [[f.zero(); 4]; 4];
    for (i, row) in s.iter_mut().enumerate() {
        row[i] = f.one();
    }
    s
}

pub fn apply4(t: &Mat4, x: &[KElem; 4]) -> [KElem; 4] {
    [0, 1, 2, 3].map(|i| {
        t[i][0]
            .mul(&x[0])
            .add(&t[i][1].mul(&x[1]))
            .add(&t[i][2].mul(&x[2]))
            .add(&t[i][3].mul(&x[3]))
    })
}

/// The matrix of Ad(g) in the coordinates of `chart` (scalar axis fixed).
pub fn chart_ad_matrix(f: &LocalField, chart: Chart, g: &GroupElem) -> Result<Mat4> {
    let t = g.ad_matrix()?;
    let mut out = identity4(f);
    let (to, from) = match chart {
        Chart::Dual => ([f.one(); 3], [f.one(); 3]),
        Chart::Source => {
            let m2 = f.int(-2);
            let mh = f.ratio(-1, 2)?;
            ([m2, f.one(), f.one()], [mh, f.one(), f.one()])
        }
    };
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = to[i].mul(&t[i][j]).mul(&from[j]);
        }
    }
    Ok(out)
}

/// Representatives n'(x)n(y)a(z) of K[m]/K[m'] with x, y ∈ 𝔮^m/𝔮^{m'} and
/// z ∈ (1 + 𝔮^m)/(1 + 𝔮^{m'}).
pub fn km_average_reps(f: &LocalField, m: u32, m2: u32) -> Result<Vec<GroupElem>> {
    let p = f.p();
    let width = upow(p, m2.saturating_sub(m));
    let mut out = Vec::with_capacity((width * width * width) as usize);
    for x in 0..width {
        let nx = GroupElem::n_prime(f, f.from_residue(m as i32, x));
        for y in 0..width {
            let ny = nx.mul(&GroupElem::n(f, f.from_residue(m as i32, y)))?;
            for z in 0..width {
                let zz = f.one().add(&f.from_residue(m as i32, z));
                out.push(ny.mul(&GroupElem::a(f, zz)?)?);
            }
        }
    }
    Ok(out)
}

/// One-dimensional DFT along `axis`: out[s] = Σ_r in[r] ζ_n^{mult·r·s}.
fn dft_axis(
    vals: &[Amplitude],
    sizes: &[u64; 4],
    axis: usize,
    n: u64,
    mult: u64,
    backend: Backend,
) -> Vec<Amplitude> {
    let stride: u64 = sizes[axis + 1..].iter().product();
    let block = stride * n;
    let total = vals.len() as u64;
    (0..total)
        .into_par_iter()
        .map(|idx| {
            let outer = idx / block;
            let inner = idx % stride;
            let s = (idx / stride) % n;
            let mut acc = Amplitude::zero(backend);
            for r in 0..n {
                let v = &vals[(outer * block + r * stride + inner) as usize];
                if v.is_zero() {
                    continue;
                }
                let e = ((mult as u128 * r as u128 * s as u128) % n as u128) as i64;
                acc = acc.add(&v.mul_root(e, n));
            }
            acc
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field() -> LocalField {
        LocalField::new(3, 12).unwrap()
    }

    fn sample(f: &LocalField, lo: [i32; 4], hi: [i32; 4]) -> GridFnB {
        let mut g = GridFnB::zeros(f, Chart::Source, lo, hi, Backend::Exact).unwrap();
        let values = (0..g.len())
            .map(|i| {
                let r = g.residues(i);
                let k = (r[0] * 7 + r[1] * 5 + r[2] * r[3] * 3 + r[0] * r[1] + 1) % 5;
                Amplitude::from_int(Backend::Exact, k as i128 - 2)
            })
            .collect();
        g.values = values;
        g
    }

    #[test]
    fn lattice_indicator_transforms_to_dual_lattice() {
        let f = field();
        let g = GridFnB::lattice_indicator(&f, Chart::Source, [1; 4], Backend::Exact).unwrap();
        let h = g.fourier().unwrap();
        assert_eq!(h.chart(), Chart::Dual);
        assert_eq!(h.lo(), [-1; 4]);
        let expect = GridFnB::lattice_indicator(&f, Chart::Dual, [-1; 4], Backend::Exact)
            .unwrap()
            .scale_rational(&q_pow(3, -4));
        assert!(h.approx_eq(&expect, 0.0).unwrap());
        let unit = GridFnB::lattice_indicator(&f, Chart::Source, [0; 4], Backend::Exact).unwrap();
        let dual = GridFnB::lattice_indicator(&f, Chart::Dual, [0; 4], Backend::Exact).unwrap();
        assert!(unit.fourier().unwrap().approx_eq(&dual, 0.0).unwrap());
    }

    #[test]
    fn double_fourier_reflects() {
        let f = field();
        let g = sample(&f, [0, -1, 0, 0], [1, 1, 1, 1]);
        let h = g.fourier().unwrap().fourier().unwrap();
        assert_eq!(h.chart(), Chart::Source);
        assert!(h.approx_eq(&g.reflect(), 0.0).unwrap());
        let tau = f.int(9);
        let h = g
            .fourier_twisted(&tau)
            .unwrap()
            .fourier_twisted(&tau)
            .unwrap();
        assert!(h.approx_eq(&g.reflect(), 0.0).unwrap());
    }

    #[test]
    fn parseval() {
        let f = field();
        let g = sample(&f, [0, 0, -1, 0], [1, 1, 1, 2]);
        let h = g.fourier().unwrap();
        assert_eq!(g.inner(&g).unwrap(), h.inner(&h).unwrap());
    }

    #[test]
    fn float_backend_matches_exact() {
        let f = field();
        let g = sample(&f, [0, 0, 0, 0], [1, 1, 1, 1]);
        let gf = g.map(|v| Amplitude::Float(v.to_complex()));
        let a = g.fourier().unwrap();
        let b = GridFnB {
            backend: Backend::Float,
            ..gf
        }
        .fourier()
        .unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-12);
    }

    #[test]
    fn adjoint_is_an_action_and_commutes_with_fourier() {
        let f = field();
        let g = sample(&f, [0, 0, 0, 0], [1, 1, 1, 1]);
        let x = GroupElem::from_ints(&f, [1, 1, 0, 1]).unwrap();
        let y = GroupElem::from_ints(&f, [2, 0, 3, 1]).unwrap();
        let lhs = g.adjoint(&y).unwrap().adjoint(&x).unwrap();
        let rhs = g.adjoint(&x.mul(&y).unwrap()).unwrap();
        assert!(lhs.approx_eq(&rhs, 0.0).unwrap());
        let a = g.adjoint(&x).unwrap().fourier().unwrap();
        let b = g.fourier().unwrap().adjoint(&x).unwrap();
        assert!(a.approx_eq(&b, 0.0).unwrap());
        let w = GroupElem::w(&f);
        let a = g.to_chart(Chart::Dual).unwrap().adjoint(&w).unwrap();
        let b = g.adjoint(&w).unwrap().to_chart(Chart::Dual).unwrap();
        assert!(a.approx_eq(&b, 0.0).unwrap());
    }

    #[test]
    fn chart_round_trip_and_symmetrize() {
        let f = field();
        let g = sample(&f, [0, 0, 0, -1], [1, 1, 1, 1]);
        let back = g
            .to_chart(Chart::Dual)
            .unwrap()
            .to_chart(Chart::Source)
            .unwrap();
        assert!(back.approx_eq(&g, 0.0).unwrap());
        let a = g.symmetrize().fourier().unwrap();
        let b = g.fourier().unwrap().symmetrize();
        assert!(a.approx_eq(&b, 0.0).unwrap());
        assert!(g
            .symmetrize()
            .symmetrize()
            .approx_eq(&g.symmetrize(), 0.0)
            .unwrap());
    }

    #[test]
    fn trim_recovers_minimal_windows() {
        let f = field();
        let g =
            GridFnB::lattice_indicator(&f, Chart::Source, [1, 0, 2, -1], Backend::Exact).unwrap();
        let big = g.refine([-1, -1, 0, -2], [3, 2, 3, 1]).unwrap();
        let t = big.trim().unwrap();
        assert_eq!(t.lo(), [1, 0, 2, -1]);
        assert_eq!(t.hi(), [1, 0, 2, -1]);
    }

    #[test]
    fn smoothing_is_invariant() {
        let f = field();
        let g = sample(&f, [0, 0, 0, 0], [1, 1, 1, 1]);
        let s = g.smooth_adjoint(1).unwrap();
        for k in [[1, 3, 0, 1], [1, 0, 3, 1], [4, 0, 0, 1], [1, 3, 3, 10]] {
            let k = GroupElem::from_ints(&f, k).unwrap();
            assert!(k.in_k(1).unwrap());
            assert!(s.adjoint(&k).unwrap().approx_eq(&s, 0.0).unwrap());
        }
        assert_eq!(s.integral(), g.integral());
    }

    fn braid_ratio(g: &GridFnB, space: Space) -> Amplitude {
        let f = *g.field();
        let tau = f.one();
        let mut h = g.clone();
        for _ in 0..3 {
            h = h.weil_apply(&WeilElem::W, &tau, space).unwrap();
            h = h.weil_apply(&WeilElem::N(f.one()), &tau, space).unwrap();
        }
        let h = if space == Space::B {
            h.to_chart(g.chart()).unwrap()
        } else {
            GridFnB {
                chart: g.chart(),
                ..h
            }
        };
        let (a, b) = g.aligned(&h).unwrap();
        let i = a.values.iter().position(|v| !v.is_zero()).unwrap();
        let c = b.values[i].to_complex() / a.values[i].to_complex();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((y.to_complex() - x.to_complex() * c).norm() < 1e-9);
        }
        Amplitude::Float(c)
    }

    #[test]
    fn weil_braid_relation_holds_up_to_scalar() {
        let f = field();
        let g = sample(&f, [0, 0, 0, 0], [1, 1, 1, 1]);
        let c = braid_ratio(&g, Space::B);
        assert!((c.to_complex().norm() - 1.0).abs() < 1e-9);
        let c0 = braid_ratio(&g, Space::B0);
        assert!((c0.to_complex().norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn quadratic_form_agrees_between_charts() {
        let f = field();
        let x = [f.int(2), f.int(5), f.int(-1), f.int(7)];
        let q_src = quadratic_form(&f, Chart::Source, &x, Space::B).unwrap();
        let xi = [f.int(-1), f.int(5), f.int(-1), f.int(14)];
        let q_dual = quadratic_form(&f, Chart::Dual, &xi, Space::B).unwrap();
        assert!(q_src.equals(&q_dual).unwrap());
        assert!(q_src.equals(&f.int(7 * 7 - 1 + 5)).unwrap());
    }

    #[test]
    fn json_dump_has_windows() {
        let f = field();
        let g = GridFnB::lattice_indicator(&f, Chart::Dual, [0, 1, 1, 0], Backend::Exact).unwrap();
        let v: serde_json::Value = serde_json::from_str(&g.to_json()).unwrap();
        assert_eq!(v["chart"], "dual");
        assert_eq!(v["lo"][1], 1);
    }
}
