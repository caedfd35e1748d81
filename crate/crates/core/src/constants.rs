//! Global constants for F = ℚ and a quaternion algebra ramified at {∞, D},
//! evaluated exactly with π² kept symbolic: the family-size constant, the
//! volume of Γ\G, the variance constant c₀ and the ledger c₁, …, c₄.

use std::fmt;

use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::field::{is_prime, q_pow, LocalField};

/// r·π^{2k} with r rational.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SymbolicReal {
    pub coeff: BigRational,
    pub pi2: i32,
}

impl SymbolicReal {
    pub fn rational(r: BigRational) -> Self {
        SymbolicReal { coeff: r, pi2: 0 }
    }

    pub fn int(n: i64) -> Self {
        Self::rational(BigRational::from_integer(n.into()))
    }

    pub fn ratio(num: i64, den: i64) -> Self {
        Self::rational(BigRational::new(num.into(), den.into()))
    }

    pub fn pi_squared() -> Self {
        SymbolicReal {
            coeff: BigRational::one(),
            pi2: 1,
        }
    }

    /// ζ(2) = π²/6.
    pub fn zeta2() -> Self {
        Self::pi_squared().mul(&Self::ratio(1, 6))
    }

    fn normalize(self) -> Self {
        if self.coeff.is_zero() {
            SymbolicReal {
                coeff: self.coeff,
                pi2: 0,
            }
        } else {
            self
        }
    }

    pub fn mul(&self, o: &Self) -> Self {
        SymbolicReal {
            coeff: &self.coeff * &o.coeff,
            pi2: self.pi2 + o.pi2,
        }
        .normalize()
    }

    pub fn div(&self, o: &Self) -> Result<Self> {
        if o.coeff.is_zero() {
            return Err(Error::Domain("division by zero".into()));
        }
        Ok(SymbolicReal {
            coeff: &self.coeff / &o.coeff,
            pi2: self.pi2 - o.pi2,
        }
        .normalize())
    }

    pub fn scale(&self, r: &BigRational) -> Self {
        SymbolicReal {
            coeff: &self.coeff * r,
            pi2: self.pi2,
        }
        .normalize()
    }

    pub fn recip(&self) -> Result<Self> {
        Self::int(1).div(self)
    }

    pub fn to_f64(&self) -> f64 {
        self.coeff.to_f64().unwrap_or(f64::NAN) * std::f64::consts::PI.powi(2 * self.pi2)
    }
}

impl fmt::Display for SymbolicReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.pi2 {
            0 => write!(f, "{}", self.coeff),
            1 => write!(f, "{}·π²", self.coeff),
            k => write!(f, "{}·π^{}", self.coeff, 2 * k),
        }
    }
}

impl Serialize for SymbolicReal {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

/// F = ℚ, B ramified at {∞, D}, working place q, level data N and N₀.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct GlobalConfig {
    pub d: u64,
    pub q: u64,
    pub n: u32,
    pub n0: u32,
}

impl GlobalConfig {
    pub fn new(d: u64, q: u64, n: u32, n0: u32) -> Result<Self> {
        if !is_prime(d) || !is_prime(q) {
            return Err(Error::Config(format!(
                "D = {d} and q = {q} must both be prime"
            )));
        }
        if d == q {
            return Err(Error::Config("D and q must differ".into()));
        }
        Ok(GlobalConfig { d, q, n, n0 })
    }

    /// The finite places of S: the ramified prime D and the working place q.
    pub fn finite_s(&self) -> [u64; 2] {
        [self.d, self.q]
    }

    /// Finite places of S other than q.
    pub fn t(&self) -> u32 {
        self.finite_s().iter().filter(|&&p| p != self.q).count() as u32
    }

    fn local(&self, p: u64) -> Result<LocalField> {
        LocalField::new(p, 1)
    }
}

fn rat(r: BigRational) -> SymbolicReal {
    SymbolicReal::rational(r)
}

/// ζ_F^{(S)}(2) = ζ(2)·Π_{p ∈ S finite} ζ_p(2)⁻¹.
pub fn partial_zeta2(cfg: &GlobalConfig) -> Result<SymbolicReal> {
    let mut z = SymbolicReal::zeta2();
    for p in cfg.finite_s() {
        z = z.scale(&cfg.local(p)?.zeta(2).recip());
    }
    Ok(z)
}

/// ν(Γ\G)/μ(K_q) = 2ζ(2)Δ_B Δ_F^{3/2} / ((4π²) ζ_D(1)).
pub fn volume_gamma_g(cfg: &GlobalConfig) -> Result<SymbolicReal> {
    let four_pi2 = SymbolicReal::pi_squared().scale(&BigRational::from_integer(4.into()));
    let num = SymbolicReal::zeta2().scale(&BigRational::from_integer((2 * cfg.d as i64).into()));
    num.div(&four_pi2.scale(&cfg.local(cfg.d)?.zeta(1)))
}

/// (D − 1)/12.
pub fn volume_example(cfg: &GlobalConfig) -> SymbolicReal {
    SymbolicReal::ratio(cfg.d as i64 - 1, 12)
}

#[derive(Clone, Debug, Serialize)]
pub struct DualPath {
    pub general: SymbolicReal,
    pub example: SymbolicReal,
}

impl DualPath {
    pub fn agree(&self) -> bool {
        self.general == self.example
    }
}

/// c with |𝓕_N| ~ c q^{2N}: the general formula against the worked example.
pub fn family_size_constant(cfg: &GlobalConfig) -> Result<DualPath> {
    let kq = cfg.local(cfg.q)?;
    let local = kq.abs_two() / (kq.zeta(1) * kq.zeta(2));
    let general = volume_gamma_g(cfg)?.scale(&local);
    let q = BigRational::from_integer(cfg.q.into());
    let one = BigRational::one();
    let halving = if cfg.q == 2 {
        BigRational::new(1.into(), 2.into())
    } else {
        one.clone()
    };
    let example = volume_example(cfg)
        .scale(&(one.clone() - q.recip()))
        .scale(&(one - (q.clone() * q).recip()))
        .scale(&halving);
    Ok(DualPath { general, example })
}

/// c₀ = 2^{#ram_f(B)} ζ^{(S)}(2) vol(𝐗)⁻¹ (2ζ_q(1))⁻¹ with vol(𝐗) = ν(Γ\G)
/// for vol(K_q) = 1, against 2π²·(2(1 + 1/D)/D)·(1 − 1/q)(1 − 1/q²)/2.
pub fn c0(cfg: &GlobalConfig) -> Result<DualPath> {
    let kq = cfg.local(cfg.q)?;
    let two = BigRational::from_integer(2.into());
    let general = partial_zeta2(cfg)?
        .scale(&two)
        .div(&volume_gamma_g(cfg)?)?
        .scale(&(two.clone() * kq.zeta(1)).recip());
    let d = BigRational::from_integer(cfg.d.into());
    let q = BigRational::from_integer(cfg.q.into());
    let one = BigRational::one();
    let example = SymbolicReal::pi_squared()
        .scale(&two)
        .scale(&(two.clone() * (one.clone() + d.recip()) / d))
        .scale(&((one.clone() - q.recip()) * (one - (q.clone() * q).recip()) / two));
    Ok(DualPath { general, example })
}

#[derive(Clone, Debug, Serialize)]
pub struct CLedger {
    pub c1: SymbolicReal,
    pub c2: SymbolicReal,
    pub c3: SymbolicReal,
    pub c4: SymbolicReal,
    /// c₁⁻¹c₂ = c₃.
    pub relation_holds: bool,
    pub c4_over_c3: SymbolicReal,
}

/// Tamagawa volume of [PB^×].
pub const TAMAGAWA_VOLUME: i64 = 2;

/// c₁, …, c₄ for a given ∫|W_S|² dy/|y|, with Δ_ψ = 1 at every finite
/// place and vol([PB^×]) = 2.  The product Π_{p ∉ S} vol(R_p)/vol(K_p) is
/// ζ(2) divided by the local ratios vol(R_p)/vol(J_p) = ζ_p(2) at p ∈ S.
pub fn c_ledger(cfg: &GlobalConfig, w_norm: &BigRational) -> Result<CLedger> {
    let zs = partial_zeta2(cfg)?;
    let w = rat(w_norm.clone());
    let c1 = SymbolicReal::int(2).div(&zs)?.mul(&w);
    let mut away = SymbolicReal::zeta2();
    for p in cfg.finite_s() {
        away = away.scale(&local_volume_ratio(&cfg.local(p)?).recip());
    }
    let c2 = SymbolicReal::int(1).div(&zs)?.mul(&away).mul(&w);
    let vol = SymbolicReal::int(TAMAGAWA_VOLUME);
    let c3 = zs.div(&vol)?;
    let c4 = zs
        .scale(&BigRational::from_integer((1i64 << cfg.t()).into()))
        .div(&vol)?;
    let relation_holds = c1.recip()?.mul(&c2) == c3;
    let c4_over_c3 = c4.div(&c3)?;
    Ok(CLedger {
        c1,
        c2,
        c3,
        c4,
        relation_holds,
        c4_over_c3,
    })
}

/// vol(R)/(vol(J)Δ^{−1/2}) for split B at a place with Δ_ψ = 1, from
/// vol(R) = 1 and vol(J) = ζ(1)ζ_B(1)⁻¹ with ζ_B(s) = ζ(2s)ζ(2s − 1).
pub fn local_volume_ratio(k: &LocalField) -> BigRational {
    let vol_j = k.zeta(1) / (k.zeta(2) * k.zeta(1));
    vol_j.recip()
}

#[derive(Clone, Debug, Serialize)]
pub struct MainTermConstant {
    /// c₄ q^{N−N₀}/2 with vol([PB^×]) = vol(𝐗).
    pub lhs: SymbolicReal,
    /// q^N |Σ|⁻¹ c₀ with |Σ| = ζ_q(1)⁻¹ q^{N₀}.
    pub rhs: SymbolicReal,
    pub holds: bool,
}

/// The identity c₄ q^{N−N₀}/2 = q^N |Σ|⁻¹ c₀, with [PB^×] measured so that
/// the compact subgroup away from q has volume one.
pub fn main_term_constant(cfg: &GlobalConfig) -> Result<MainTermConstant> {
    let kq = cfg.local(cfg.q)?;
    let zs = partial_zeta2(cfg)?;
    let vol_x = volume_gamma_g(cfg)?;
    let c4 = zs
        .scale(&BigRational::from_integer((1i64 << cfg.t()).into()))
        .div(&vol_x)?;
    let half = BigRational::new(1.into(), 2.into());
    let lhs = c4.scale(&(q_pow(cfg.q, cfg.n as i64 - cfg.n0 as i64) * half));
    let sigma = kq.zeta(1).recip() * q_pow(cfg.q, cfg.n0 as i64);
    let rhs = c0(cfg)?
        .general
        .scale(&(q_pow(cfg.q, cfg.n as i64) / sigma));
    let holds = lhs == rhs;
    Ok(MainTermConstant { lhs, rhs, holds })
}

/// Configurations used by the suites.
pub fn standard_configs() -> Vec<(u64, u64)> {
    vec![
        (11, 3),
        (11, 2),
        (5, 3),
        (2, 3),
        (3, 2),
        (7, 5),
        (13, 3),
        (2, 5),
        (17, 7),
        (19, 2),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(d: u64, q: u64) -> GlobalConfig {
        GlobalConfig::new(d, q, 4, 1).unwrap()
    }

    #[test]
    fn family_size_examples() {
        let c = family_size_constant(&cfg(11, 3)).unwrap();
        assert_eq!(c.example, SymbolicReal::ratio(40, 81));
        assert!(c.agree());
        let c = family_size_constant(&cfg(11, 2)).unwrap();
        assert_eq!(c.example, SymbolicReal::ratio(5, 32));
        assert!(c.agree());
    }

    #[test]
    fn dual_paths_agree_on_all_configs() {
        for (d, q) in standard_configs() {
            let c = cfg(d, q);
            assert!(family_size_constant(&c).unwrap().agree(), "{d} {q}");
            assert!(c0(&c).unwrap().agree(), "{d} {q}");
            assert_eq!(volume_gamma_g(&c).unwrap(), volume_example(&c));
            let l = c_ledger(&c, &BigRational::new(7.into(), 3.into())).unwrap();
            assert!(l.relation_holds);
            assert_eq!(l.c4_over_c3, SymbolicReal::int(2));
            assert!(main_term_constant(&c).unwrap().holds);
        }
    }

    #[test]
    fn c0_example_value() {
        let c = c0(&cfg(11, 3)).unwrap();
        assert_eq!(
            c.example,
            SymbolicReal {
                coeff: BigRational::new(128.into(), 1089.into()),
                pi2: 1
            }
        );
        assert!((c.example.to_f64() - 128.0 * std::f64::consts::PI.powi(2) / 1089.0).abs() < 1e-12);
        assert!(c0(&cfg(5, 3)).unwrap().agree());
    }

    #[test]
    fn volume_examples() {
        assert_eq!(
            volume_gamma_g(&cfg(11, 3)).unwrap(),
            SymbolicReal::ratio(5, 6)
        );
        assert_eq!(
            volume_gamma_g(&cfg(2, 3)).unwrap(),
            SymbolicReal::ratio(1, 12)
        );
    }

    #[test]
    fn w_norm_cancels() {
        let c = cfg(11, 3);
        let a = c_ledger(&c, &BigRational::one()).unwrap();
        let b = c_ledger(&c, &BigRational::new(5.into(), 2.into())).unwrap();
        assert_eq!(
            a.c1.recip().unwrap().mul(&a.c2),
            b.c1.recip().unwrap().mul(&b.c2)
        );
    }

    #[test]
    fn config_validation() {
        assert!(matches!(
            GlobalConfig::new(4, 3, 4, 1),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            GlobalConfig::new(3, 3, 4, 1),
            Err(Error::Config(_))
        ));
    }
}
