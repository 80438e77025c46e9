//! The characteristic measure Λ and its scalar functionals.
//!
//! A `CoalescentMeasure` is a finite measure on [0, 1]. Collision rates and
//! every centering constant in the limit laws are integrals against it, so
//! this module owns the quadrature plumbing, the finiteness classification
//! of the negative-order moments, the law of the post-collision fraction
//! `W`, the logarithmic moments, and the Laplace exponent of the dust
//! subordinator.

use std::fmt;
use std::sync::Arc;

use crate::error::CoalError;
use crate::quad;
use crate::special::{beta_fn, digamma, gamma, inc_beta, ln_beta, ln_gamma};

/// Endpoint behaviour of an integrand `f` on (0, 1): `f ~ x^{at_zero}` near
/// 0 and `f ~ (1−x)^{at_one}` near 1, up to logarithmic factors.
#[derive(Debug, Clone, Copy)]
pub struct Singularity {
    pub at_zero: f64,
    pub at_one: f64,
}

impl Default for Singularity {
    fn default() -> Self {
        Singularity {
            at_zero: 0.0,
            at_one: 0.0,
        }
    }
}

impl Singularity {
    pub fn bounded() -> Self {
        Self::default()
    }
    pub fn new(at_zero: f64, at_one: f64) -> Self {
        Singularity { at_zero, at_one }
    }
}

/// A distribution for the random variable `W` (the asymptotic fraction of
/// blocks surviving the first collision), used by the `FromWLaw` family.
#[derive(Clone)]
pub enum WLaw {
    /// Atoms `(w, p)` with `w` in (0, 1); probabilities sum to one.
    Discrete(Arc<Vec<(f64, f64)>>),
    /// `|log W|` is Pareto(alpha) with minimum 1, i.e. `W = exp(-P)` with
    /// `P{P > x} = x^{-alpha}` for `x >= 1`. Keeps `|log(1−W)|` bounded.
    ParetoLog { alpha: f64 },
}

impl fmt::Debug for WLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WLaw::Discrete(atoms) => write!(f, "Discrete({} atoms)", atoms.len()),
            WLaw::ParetoLog { alpha } => write!(f, "ParetoLog(alpha={alpha})"),
        }
    }
}

impl WLaw {
    /// P{W <= x}.
    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            WLaw::Discrete(atoms) => atoms
                .iter()
                .filter(|(w, _)| *w <= x)
                .map(|(_, p)| *p)
                .sum(),
            WLaw::ParetoLog { alpha } => {
                if x <= 0.0 {
                    0.0
                } else if x >= (-1.0_f64).exp() {
                    1.0
                } else {
                    (-x.ln()).powf(-alpha)
                }
            }
        }
    }

    /// Draw `1 − W`.
    pub fn sample_one_minus_w(&self, u: f64) -> f64 {
        match self {
            WLaw::Discrete(atoms) => {
                let mut acc = 0.0;
                for &(w, p) in atoms.iter() {
                    acc += p;
                    if u <= acc {
                        return 1.0 - w;
                    }
                }
                1.0 - atoms.last().expect("non-empty atom list").0
            }
            WLaw::ParetoLog { alpha } => {
                // P = (1−u)^{-1/alpha} >= 1, W = exp(-P).
                let p = (1.0 - u).powf(-1.0 / alpha);
                -(-p).exp_m1()
            }
        }
    }
}

/// A user-supplied density on (0, 1) with declared endpoint exponents.
#[derive(Clone)]
pub struct GeneralDensity {
    pub density: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    /// density ~ c·x^{exp_zero} as x → 0.
    pub exp_zero: f64,
    /// density ~ c·(1−x)^{exp_one} as x → 1.
    pub exp_one: f64,
    pub total_mass: f64,
}

impl fmt::Debug for GeneralDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "GeneralDensity(exp0={}, exp1={}, mass={})",
            self.exp_zero, self.exp_one, self.total_mass
        )
    }
}

/// The characteristic measure of a Λ-coalescent.
#[derive(Debug, Clone)]
pub enum CoalescentMeasure {
    /// Unit mass at 0: Kingman's coalescent, binary collisions only.
    PointMassAtZero,
    /// Unit mass at 1: the star coalescent, a single total merger.
    PointMassAtOne,
    /// beta(a, b) probability density x^{a−1}(1−x)^{b−1}/B(a, b).
    Beta { a: f64, b: f64 },
    /// Λ(dx) = x²(1−x)^{θ−1}/|log(1−x)| dx; the dust subordinator is the
    /// classic gamma subordinator with parameter θ.
    GammaSubordinator { theta: f64 },
    /// Λ(dx) = m_{-2}·x²·ν(dx) where ν is the law of 1−W.
    FromWLaw { law: WLaw, m_minus_2: f64 },
    GeneralDensity(GeneralDensity),
}

pub use CoalescentMeasure::{PointMassAtOne, PointMassAtZero};

impl CoalescentMeasure {
    pub fn beta(a: f64, b: f64) -> Result<Self, CoalError> {
        if !(a > 0.0) || !(b > 0.0) || !a.is_finite() || !b.is_finite() {
            return Err(CoalError::domain(format!(
                "beta requires a > 0, b > 0; got a={a}, b={b}"
            )));
        }
        Ok(CoalescentMeasure::Beta { a, b })
    }

    pub fn gamma_subordinator(theta: f64) -> Result<Self, CoalError> {
        if !(theta > 0.0) || !theta.is_finite() {
            return Err(CoalError::domain(format!(
                "gamma subordinator requires theta > 0; got {theta}"
            )));
        }
        Ok(CoalescentMeasure::GammaSubordinator { theta })
    }

    /// Build a measure from a discrete W-law given as `(atom, probability)`
    /// pairs plus the total x^{-2}-weighted mass `m_minus_2`.
    pub fn from_w_law(atoms: Vec<(f64, f64)>, m_minus_2: f64) -> Result<Self, CoalError> {
        if atoms.is_empty() {
            return Err(CoalError::domain("from_w_law needs at least one atom"));
        }
        if !(m_minus_2 > 0.0) || !m_minus_2.is_finite() {
            return Err(CoalError::domain("from_w_law requires m_minus_2 > 0"));
        }
        let mut total = 0.0;
        for &(w, p) in &atoms {
            if !(0.0 < w && w < 1.0) {
                return Err(CoalError::domain(format!(
                    "W-law atoms must lie in (0, 1); got {w}"
                )));
            }
            if !(p > 0.0) {
                return Err(CoalError::domain("W-law probabilities must be positive"));
            }
            total += p;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(CoalError::domain(format!(
                "W-law probabilities sum to {total}, expected 1"
            )));
        }
        let mut atoms = atoms;
        // Renormalize exactly and keep atoms sorted for CDF queries.
        for pair in atoms.iter_mut() {
            pair.1 /= total;
        }
        atoms.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
        Ok(CoalescentMeasure::FromWLaw {
            law: WLaw::Discrete(Arc::new(atoms)),
            m_minus_2,
        })
    }

    /// The Pareto-log construction: `|log W|` Pareto(alpha, minimum 1).
    /// Satisfies `P{|log W| > x} = x^{-alpha}` exactly, with `|log(1−W)|`
    /// bounded. The m_{-2} scale is irrelevant to the embedded jump chain
    /// and is fixed to 1.
    pub fn pareto_log_w(alpha: f64) -> Result<Self, CoalError> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(CoalError::domain("pareto_log_w requires alpha > 0"));
        }
        Ok(CoalescentMeasure::FromWLaw {
            law: WLaw::ParetoLog { alpha },
            m_minus_2: 1.0,
        })
    }

    pub fn general_density(
        density: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        exp_zero: f64,
        exp_one: f64,
        total_mass: f64,
    ) -> Result<Self, CoalError> {
        if !(total_mass > 0.0) || !total_mass.is_finite() {
            return Err(CoalError::domain("general density requires finite positive mass"));
        }
        if exp_zero <= -1.0 || exp_one <= -1.0 {
            return Err(CoalError::domain(
                "general density endpoint exponents must exceed -1",
            ));
        }
        Ok(CoalescentMeasure::GeneralDensity(GeneralDensity {
            density,
            exp_zero,
            exp_one,
            total_mass,
        }))
    }

    /// Canonical text form, used in output files and config hashes.
    pub fn describe(&self) -> String {
        match self {
            PointMassAtZero => "kingman".into(),
            PointMassAtOne => "star".into(),
            CoalescentMeasure::Beta { a, b } => format!("beta:{a},{b}"),
            CoalescentMeasure::GammaSubordinator { theta } => format!("gamma_sub:{theta}"),
            CoalescentMeasure::FromWLaw { law, m_minus_2 } => match law {
                WLaw::Discrete(atoms) => format!(
                    "from_w_law:m2={m_minus_2};{}",
                    atoms
                        .iter()
                        .map(|(w, p)| format!("{w}:{p}"))
                        .collect::<Vec<_>>()
                        .join(",")
                ),
                WLaw::ParetoLog { alpha } => format!("pareto_log:{alpha}"),
            },
            CoalescentMeasure::GeneralDensity(g) => {
                format!("general_density:exp0={},exp1={}", g.exp_zero, g.exp_one)
            }
        }
    }

    /// Total mass Λ([0, 1]).
    pub fn total_mass(&self) -> f64 {
        match self {
            PointMassAtZero | PointMassAtOne => 1.0,
            CoalescentMeasure::Beta { .. } => 1.0,
            CoalescentMeasure::GammaSubordinator { .. } | CoalescentMeasure::GeneralDensity(_) => {
                self.integrate(|_| 1.0, Singularity::bounded())
                    .expect("total mass integral")
            }
            CoalescentMeasure::FromWLaw { .. } => self
                .integrate(|_| 1.0, Singularity::bounded())
                .expect("total mass sum"),
        }
    }

    /// ∫ f dΛ. Point masses evaluate `f` at the atom; everything else goes
    /// through endpoint-aware quadrature (or a finite sum for discrete
    /// W-laws). `hint` declares the endpoint exponents of `f` itself.
    pub fn integrate(
        &self,
        mut f: impl FnMut(f64) -> f64,
        hint: Singularity,
    ) -> Result<f64, CoalError> {
        self.integrate2(|x, _| f(x), hint)
    }

    /// Like [`integrate`](Self::integrate) but hands the integrand the
    /// exact complement `1 − x` as well, which the boundary-layer
    /// integrands need for full precision.
    pub(crate) fn integrate2(
        &self,
        mut f: impl FnMut(f64, f64) -> f64,
        hint: Singularity,
    ) -> Result<f64, CoalError> {
        const TOL: f64 = 1e-11;
        match self {
            PointMassAtZero => Ok(f(0.0, 1.0)),
            PointMassAtOne => Ok(f(1.0, 0.0)),
            CoalescentMeasure::Beta { a, b } => {
                let norm = 1.0 / beta_fn(*a, *b);
                quad::integrate_unit2(
                    |x, xc| f(x, xc) * norm * x.powf(a - 1.0) * xc.powf(b - 1.0),
                    hint.at_zero + a - 1.0,
                    hint.at_one + b - 1.0,
                    TOL,
                )
            }
            CoalescentMeasure::GammaSubordinator { theta } => quad::integrate_unit2(
                |x, xc| f(x, xc) * gamma_sub_density(x, xc, *theta),
                hint.at_zero + 1.0,
                hint.at_one + theta - 1.0,
                TOL,
            ),
            CoalescentMeasure::FromWLaw { law, m_minus_2 } => match law {
                WLaw::Discrete(atoms) => Ok(atoms
                    .iter()
                    .map(|&(w, p)| {
                        let x = 1.0 - w;
                        m_minus_2 * p * x * x * f(x, w)
                    })
                    .sum()),
                WLaw::ParetoLog { alpha } => {
                    if hint.at_one < 0.0 {
                        return Err(CoalError::NonIntegrable {
                            detail: "Pareto-log W-law puts mass arbitrarily close to x = 1; \
                                     integrands singular at 1 diverge"
                                .into(),
                        });
                    }
                    // x = 1 − e^{-p} with P Pareto(alpha, 1); substitute
                    // p = 1/s, giving density α·s^{α−1} on (0, 1).
                    let alpha = *alpha;
                    let m2 = *m_minus_2;
                    quad::integrate_unit(
                        |s| {
                            let w = (-1.0 / s).exp();
                            let x = 1.0 - w;
                            m2 * x * x * f(x, w) * alpha * s.powf(alpha - 1.0)
                        },
                        alpha - 1.0,
                        0.0,
                        TOL,
                    )
                }
            },
            CoalescentMeasure::GeneralDensity(g) => {
                let d = g.density.clone();
                quad::integrate_unit2(
                    |x, xc| f(x, xc) * d(x),
                    hint.at_zero + g.exp_zero,
                    hint.at_one + g.exp_one,
                    TOL,
                )
            }
        }
    }

    /// Endpoint exponents of the Λ-density itself (None for atomic parts).
    fn density_exponents(&self) -> Option<(f64, f64)> {
        match self {
            PointMassAtZero | PointMassAtOne => None,
            CoalescentMeasure::Beta { a, b } => Some((a - 1.0, b - 1.0)),
            CoalescentMeasure::GammaSubordinator { theta } => Some((1.0, theta - 1.0)),
            CoalescentMeasure::FromWLaw { .. } => None,
            CoalescentMeasure::GeneralDensity(g) => Some((g.exp_zero, g.exp_one)),
        }
    }

    /// m_{-r} = ∫ x^{-r} Λ(dx) for r in {1, 2}; +∞ when the endpoint
    /// exponent test implies divergence. Finiteness is decided
    /// analytically, never from quadrature.
    pub fn negative_moment(&self, r: u32) -> f64 {
        assert!(r == 1 || r == 2, "negative_moment supports r in {{1, 2}}");
        let rf = f64::from(r);
        match self {
            PointMassAtZero => f64::INFINITY,
            PointMassAtOne => 1.0,
            CoalescentMeasure::Beta { a, b } => {
                if *a <= rf {
                    f64::INFINITY
                } else {
                    // B(a−r, b)/B(a, b) in log space.
                    (ln_beta(a - rf, *b) - ln_beta(*a, *b)).exp()
                }
            }
            CoalescentMeasure::GammaSubordinator { .. } => {
                if r == 2 {
                    // integrand ~ 1/x at 0.
                    f64::INFINITY
                } else {
                    // ∫ x (1−x)^{θ−1}/|log(1−x)| dx, finite for θ > 0.
                    self.integrate2(|x, _| 1.0 / x, Singularity::new(-1.0, 0.0))
                        .expect("gamma-subordinator m_{-1}")
                }
            }
            CoalescentMeasure::FromWLaw { m_minus_2, .. } => {
                if r == 2 {
                    *m_minus_2
                } else {
                    // m_{-1} = m_{-2}·E[1−W].
                    self.integrate(|x| 1.0 / x, Singularity::new(-1.0, 0.0))
                        .expect("from_w_law m_{-1}")
                }
            }
            CoalescentMeasure::GeneralDensity(g) => {
                if g.exp_zero - rf <= -1.0 {
                    f64::INFINITY
                } else {
                    self.integrate(|x| x.powf(-rf), Singularity::new(-rf, 0.0))
                        .expect("general density negative moment")
                }
            }
        }
    }

    pub fn is_simple(&self) -> bool {
        self.negative_moment(2).is_finite()
    }

    pub fn has_dust(&self) -> bool {
        self.negative_moment(1).is_finite()
    }

    /// CDF of W: P{W <= x} = ∫_{[1−x,1]} y^{-2} Λ(dy) / m_{-2}.
    pub fn w_cdf(&self, x: f64) -> Result<f64, CoalError> {
        if !(0.0..=1.0).contains(&x) {
            return Err(CoalError::domain(format!("w_cdf argument {x} outside [0, 1]")));
        }
        match self {
            PointMassAtZero => Err(CoalError::SimpleCoalescentRequired),
            // Star: W degenerates at 0 (the single collision removes
            // everything), so the CDF is identically one.
            PointMassAtOne => Ok(1.0),
            CoalescentMeasure::Beta { a, b } => {
                if *a <= 2.0 {
                    return Err(CoalError::SimpleCoalescentRequired);
                }
                // ∫_{1−x}^1 y^{a−3}(1−y)^{b−1} dy / B(a−2, b) = I_x(b, a−2).
                Ok(inc_beta(*b, a - 2.0, x))
            }
            CoalescentMeasure::GammaSubordinator { .. } => Err(CoalError::SimpleCoalescentRequired),
            CoalescentMeasure::FromWLaw { law, .. } => Ok(law.cdf(x)),
            CoalescentMeasure::GeneralDensity(g) => {
                if g.exp_zero - 2.0 <= -1.0 {
                    return Err(CoalError::SimpleCoalescentRequired);
                }
                if x == 0.0 {
                    return Ok(0.0);
                }
                if x == 1.0 {
                    return Ok(1.0);
                }
                // 1 − ∫_0^{1−x} y^{-2} Λ(dy) / m_{-2}, with the head’s
                // singularity at 0 absorbed by rescaling y = c·t.
                let c = 1.0 - x;
                let d = g.density.clone();
                let head = quad::integrate_unit(
                    |t| {
                        let y = c * t;
                        c * d(y) / (y * y)
                    },
                    g.exp_zero - 2.0,
                    0.0,
                    1e-11,
                )?;
                Ok((1.0 - head / self.negative_moment(2)).clamp(0.0, 1.0))
            }
        }
    }

    /// Logarithmic moments of W: μ = E|log W| and σ² = Var|log W|,
    /// by quadrature against the W-law; +∞ where the tail diverges.
    pub fn log_w_moments(&self) -> Result<(f64, f64), CoalError> {
        if !self.is_simple() {
            return Err(CoalError::SimpleCoalescentRequired);
        }
        match self {
            PointMassAtOne => Ok((f64::INFINITY, f64::INFINITY)),
            CoalescentMeasure::FromWLaw { law, .. } => match law {
                WLaw::Discrete(atoms) => {
                    let mu: f64 = atoms.iter().map(|&(w, p)| -p * w.ln()).sum();
                    let m2: f64 = atoms.iter().map(|&(w, p)| p * w.ln() * w.ln()).sum();
                    Ok((mu, (m2 - mu * mu).max(0.0)))
                }
                WLaw::ParetoLog { alpha } => {
                    // |log W| is Pareto(alpha, 1): mean alpha/(alpha−1) for
                    // alpha > 1, variance alpha/((alpha−1)²(alpha−2)).
                    let a = *alpha;
                    let mu = if a > 1.0 { a / (a - 1.0) } else { f64::INFINITY };
                    let var = if a > 2.0 {
                        a / ((a - 1.0) * (a - 1.0) * (a - 2.0))
                    } else {
                        f64::INFINITY
                    };
                    Ok((mu, var))
                }
            },
            _ => {
                let m2 = self.negative_moment(2);
                let mu = self.integrate2(
                    |x, xc| abs_log_complement(x, xc) / (x * x),
                    Singularity::new(-1.0, 0.0),
                )? / m2;
                let second = self.integrate2(
                    |x, xc| {
                        let l = abs_log_complement(x, xc);
                        l * l / (x * x)
                    },
                    Singularity::new(0.0, 0.0),
                )? / m2;
                Ok((mu, (second - mu * mu).max(0.0)))
            }
        }
    }

    /// ν_r = ∫ |log(1−x)|^r x^{-2} Λ(dx) for r = 1, 2, computed against the
    /// measure rescaled so that ∫_{[x,1]} y^{-2}Λ(dy) = |log x| + c + o(1),
    /// i.e. the scaling under which ν_1 = E S_1 and ν_2 = Var S_1 for the
    /// coupling subordinator. Beta measures are admitted at a = 2 only.
    pub fn nu_moments(&self) -> Result<(f64, f64), CoalError> {
        let slope = self.log_slope()?;
        let raw = |r: i32| -> Result<f64, CoalError> {
            self.integrate2(
                |x, xc| {
                    let l = abs_log_complement(x, xc);
                    l.powi(r) / (x * x)
                },
                // |log(1−x)|^r ~ x^r at 0 cancels part of the x^{-2} weight.
                Singularity::new(r as f64 - 2.0, 0.0),
            )
        };
        Ok((raw(1)? / slope, raw(2)? / slope))
    }

    // Coefficient c in ∫_{[x,1]} y^{-2}Λ(dy) ~ c|log x| as x → 0.
    fn log_slope(&self) -> Result<f64, CoalError> {
        match self {
            CoalescentMeasure::Beta { a, b } => {
                if (*a - 2.0).abs() > 1e-12 {
                    Err(CoalError::domain(
                        "nu moments require the logarithmic dust regime (beta a = 2)",
                    ))
                } else {
                    // y^{-2}Λ(dy) = y^{-1}(1−y)^{b−1}/B(2,b): slope 1/B(2,b).
                    Ok(1.0 / beta_fn(2.0, *b))
                }
            }
            CoalescentMeasure::GammaSubordinator { .. } => Ok(1.0),
            CoalescentMeasure::GeneralDensity(g) => {
                if (g.exp_zero - 1.0).abs() > 1e-12 {
                    Err(CoalError::domain(
                        "nu moments require density ~ c·x near 0 (logarithmic dust regime)",
                    ))
                } else {
                    // Slope equals lim_{x→0} x·density(x)/x² · x = density(x)/x.
                    let d = (g.density)(1e-9) / 1e-9;
                    Ok(d)
                }
            }
            _ => Err(CoalError::domain(
                "nu moments are defined for logarithmic-dust measures only",
            )),
        }
    }

    /// Laplace exponent Φ(z) = ∫ (1 − (1−x)^z) x^{-2} Λ(dx) of the dust
    /// subordinator. Closed forms for the beta and gamma-subordinator
    /// families, quadrature otherwise; see `laplace_exponent_quadrature`
    /// for the always-quadrature route.
    pub fn laplace_exponent(&self, z: f64) -> Result<f64, CoalError> {
        if z < 0.0 {
            return Err(CoalError::domain("laplace exponent requires z >= 0"));
        }
        if !self.has_dust() {
            return Err(CoalError::DustRequired);
        }
        if z == 0.0 {
            return Ok(0.0);
        }
        match self {
            PointMassAtOne => Ok(1.0), // single jump of size |log 0| = ∞ caps at mass
            CoalescentMeasure::Beta { a, b } => Ok(beta_laplace_exponent(*a, *b, z)),
            CoalescentMeasure::GammaSubordinator { theta } => Ok((1.0 + z / theta).ln()),
            _ => self.laplace_exponent_quadrature(z),
        }
    }

    /// Φ(z) by quadrature, for dual-route checks and for the acceptance
    /// runs that pin the quadrature path.
    pub fn laplace_exponent_quadrature(&self, z: f64) -> Result<f64, CoalError> {
        if z < 0.0 {
            return Err(CoalError::domain("laplace exponent requires z >= 0"));
        }
        if !self.has_dust() {
            return Err(CoalError::DustRequired);
        }
        if z == 0.0 {
            return Ok(0.0);
        }
        // 1 − (1−x)^z ~ zx at 0.
        self.integrate2(
            |x, xc| -((-z * abs_log_complement(x, xc)).exp_m1()) / (x * x),
            Singularity::new(-1.0, 0.0),
        )
    }

    /// Diagnostic table for the regular-variation asymptotics
    /// Φ(z) ~ Γ(1−γ) z^γ ℓ(z): returns (z, Φ(z)/(Γ(1−γ)z^γ ℓ(z))) on a
    /// log-spaced grid.
    pub fn phi_asymptotic_check(
        &self,
        gamma_idx: f64,
        ell: impl Fn(f64) -> f64,
    ) -> Result<Vec<(f64, f64)>, CoalError> {
        if !(gamma_idx > 0.0 && gamma_idx < 1.0) {
            return Err(CoalError::domain(format!(
                "regular-variation index must lie strictly in (0, 1); got {gamma_idx}"
            )));
        }
        let mut out = Vec::new();
        let mut z = 1.0;
        while z <= 1.0e4 + 1.0 {
            let phi = self.laplace_exponent(z)?;
            let reference = gamma(1.0 - gamma_idx) * z.powf(gamma_idx) * ell(z);
            out.push((z, phi / reference));
            z *= 10.0;
        }
        Ok(out)
    }

    /// The W-law sampler for simple measures, if one is available in O(1)
    /// (used by the paintbox merge-size sampler).
    pub(crate) fn one_minus_w_sampler(&self) -> Option<OneMinusWSampler> {
        match self {
            CoalescentMeasure::Beta { a, b } if *a > 2.0 => Some(OneMinusWSampler::Beta {
                a: a - 2.0,
                b: *b,
            }),
            CoalescentMeasure::FromWLaw { law, .. } => Some(OneMinusWSampler::WLaw(law.clone())),
            _ => None,
        }
    }
}

/// How to draw x = 1 − W ~ x^{-2}Λ(dx)/m_{-2} for simple measures.
#[derive(Clone, Debug)]
pub(crate) enum OneMinusWSampler {
    Beta { a: f64, b: f64 },
    WLaw(WLaw),
}

/// |log(1−x)| at full precision from whichever of x, 1−x is exact.
fn abs_log_complement(x: f64, xc: f64) -> f64 {
    if x < 0.5 {
        -(-x).ln_1p()
    } else {
        -xc.ln()
    }
}

/// Density of the gamma-subordinator measure with the removable
/// singularity at 0 evaluated stably: x²(1−x)^{θ−1}/|log(1−x)| ~ x as
/// x → 0 because |log(1−x)| ~ x.
fn gamma_sub_density(x: f64, xc: f64, theta: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    x * x * xc.powf(theta - 1.0) / abs_log_complement(x, xc)
}

/// Closed-form beta-family Laplace exponent, valid for a > 1, a != 2 via
/// Γ(a−2) (negative for a in (1,2)), and via digamma at a = 2.
fn beta_laplace_exponent(a: f64, b: f64, z: f64) -> f64 {
    if (a - 2.0).abs() < 1e-12 {
        return (digamma(b + z) - digamma(b)) / beta_fn(2.0, b);
    }
    let bracket = (ln_gamma(b) - ln_gamma(a + b - 2.0)).exp()
        - (ln_gamma(b + z) - ln_gamma(a + b - 2.0 + z)).exp();
    gamma(a - 2.0) * bracket / beta_fn(a, b)
}

/// All scalar moments of a measure in one bundle.
#[derive(Debug, Clone, serde::Serialize)]
pub struct MeasureMoments {
    pub m_minus_1: f64,
    pub m_minus_2: f64,
    pub mu: Option<f64>,
    pub sigma_sq: Option<f64>,
    pub nu_1: Option<f64>,
    pub nu_2: Option<f64>,
}

impl MeasureMoments {
    pub fn of(measure: &CoalescentMeasure) -> Self {
        let m_minus_1 = measure.negative_moment(1);
        let m_minus_2 = measure.negative_moment(2);
        let (mu, sigma_sq) = match measure.log_w_moments() {
            Ok((mu, s2)) => (Some(mu), Some(s2)),
            Err(_) => (None, None),
        };
        let (nu_1, nu_2) = match measure.nu_moments() {
            Ok((n1, n2)) => (Some(n1), Some(n2)),
            Err(_) => (None, None),
        };
        MeasureMoments {
            m_minus_1,
            m_minus_2,
            mu,
            sigma_sq,
            nu_1,
            nu_2,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::{hurwitz_zeta, trigamma};
    use approx::assert_relative_eq;

    const PI: f64 = std::f64::consts::PI;

    #[test]
    fn point_mass_integration_evaluates_at_atom() {
        assert_eq!(PointMassAtZero.integrate(|x| x * x, Singularity::bounded()).unwrap(), 0.0);
        assert_eq!(PointMassAtOne.integrate(|x| x * x, Singularity::bounded()).unwrap(), 1.0);
    }

    #[test]
    fn beta_is_a_probability_measure() {
        let m = CoalescentMeasure::beta(1.0, 1.0).unwrap();
        let v = m.integrate(|_| 1.0, Singularity::bounded()).unwrap();
        assert_relative_eq!(v, 1.0, max_relative = 1e-10);
    }

    #[test]
    fn beta_negative_second_moment_closed_form() {
        // ∫ x^{-2} · 3x² dx = 3 on (0,1) for beta(3,1).
        let m = CoalescentMeasure::beta(3.0, 1.0).unwrap();
        let quad = m
            .integrate(|x| x.powi(-2), Singularity::new(-2.0, 0.0))
            .unwrap();
        assert_relative_eq!(quad, 3.0, max_relative = 1e-10);
        assert_relative_eq!(m.negative_moment(2), 3.0, max_relative = 1e-13);

        // (b+1)(b+2)/2 for beta(3, b).
        for &b in &[0.5, 1.0, 2.0, 5.0] {
            let m = CoalescentMeasure::beta(3.0, b).unwrap();
            assert_relative_eq!(
                m.negative_moment(2),
                (b + 1.0) * (b + 2.0) / 2.0,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn negative_moment_finiteness_thresholds() {
        // m_{-2} < ∞ iff a > 2; m_{-1} < ∞ iff a > 1.
        for &a in &[0.3, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0] {
            for &b in &[0.5, 1.0, 2.0] {
                let m = CoalescentMeasure::beta(a, b).unwrap();
                assert_eq!(m.negative_moment(2).is_finite(), a > 2.0, "a={a} b={b}");
                assert_eq!(m.negative_moment(1).is_finite(), a > 1.0, "a={a} b={b}");
                // m_{-2} < ∞ implies m_{-1} < ∞.
                if m.negative_moment(2).is_finite() {
                    assert!(m.negative_moment(1).is_finite());
                }
            }
        }
        assert!(PointMassAtZero.negative_moment(1).is_infinite());
        assert!(PointMassAtZero.negative_moment(2).is_infinite());
        assert_eq!(PointMassAtOne.negative_moment(2), 1.0);
    }

    #[test]
    fn negative_moment_quadrature_cross_check() {
        for &(a, b) in &[(2.5, 1.0), (3.0, 2.0), (4.5, 0.5)] {
            let m = CoalescentMeasure::beta(a, b).unwrap();
            let quad = m
                .integrate(|x| x.powi(-2), Singularity::new(-2.0, 0.0))
                .unwrap();
            assert_relative_eq!(quad, m.negative_moment(2), max_relative = 1e-9);
        }
    }

    #[test]
    fn w_cdf_beta31_is_uniform() {
        let m = CoalescentMeasure::beta(3.0, 1.0).unwrap();
        for i in 0..=10 {
            let x = i as f64 / 10.0;
            assert_relative_eq!(m.w_cdf(x).unwrap(), x, epsilon = 1e-12);
        }
    }

    #[test]
    fn w_cdf_endpoints_and_monotonicity() {
        for &(a, b) in &[(2.5, 0.5), (3.0, 1.0), (4.0, 2.0), (6.0, 3.0)] {
            let m = CoalescentMeasure::beta(a, b).unwrap();
            assert_eq!(m.w_cdf(0.0).unwrap(), 0.0);
            assert_eq!(m.w_cdf(1.0).unwrap(), 1.0);
            let mut prev = 0.0;
            for i in 1..=50 {
                let v = m.w_cdf(i as f64 / 50.0).unwrap();
                assert!(v >= prev - 1e-14);
                assert!((0.0..=1.0).contains(&v));
                prev = v;
            }
        }
    }

    #[test]
    fn w_cdf_requires_simple() {
        assert!(matches!(
            PointMassAtZero.w_cdf(0.5),
            Err(CoalError::SimpleCoalescentRequired)
        ));
        let m = CoalescentMeasure::beta(1.5, 1.0).unwrap();
        assert!(matches!(
            m.w_cdf(0.5),
            Err(CoalError::SimpleCoalescentRequired)
        ));
    }

    #[test]
    fn w_cdf_matches_direct_quadrature() {
        // Independent route: ∫_{1−x}^1 y^{-2}Λ(dy)/m_{-2} by raw quadrature.
        let m = CoalescentMeasure::beta(4.0, 2.0).unwrap();
        let m2 = m.negative_moment(2);
        for &x in &[0.2, 0.5, 0.8] {
            let direct = quad::integrate_interval(
                |y: f64| y.powi(-2) * 20.0 * y.powi(3) * (1.0 - y),
                1.0 - x,
                1.0,
                1e-12,
            )
            .unwrap()
                / m2;
            assert_relative_eq!(m.w_cdf(x).unwrap(), direct, max_relative = 1e-9);
        }
    }

    #[test]
    fn log_w_moments_beta31_are_unit() {
        // W uniform: E|log W| = 1, Var|log W| = 1.
        let m = CoalescentMeasure::beta(3.0, 1.0).unwrap();
        let (mu, s2) = m.log_w_moments().unwrap();
        assert_relative_eq!(mu, 1.0, max_relative = 1e-9);
        assert_relative_eq!(s2, 1.0, max_relative = 1e-8);
    }

    #[test]
    fn log_w_moments_digamma_closed_form() {
        // μ = ψ(a+b−2) − ψ(b), σ² = ψ'(b) − ψ'(a+b−2).
        for &(a, b) in &[(3.0, 2.0), (4.5, 1.0), (5.0, 0.5)] {
            let m = CoalescentMeasure::beta(a, b).unwrap();
            let (mu, s2) = m.log_w_moments().unwrap();
            assert_relative_eq!(mu, digamma(a + b - 2.0) - digamma(b), max_relative = 1e-9);
            assert_relative_eq!(s2, trigamma(b) - trigamma(a + b - 2.0), max_relative = 1e-7);
        }
    }

    #[test]
    fn log_w_moments_degenerate_w() {
        let c = 0.37;
        let m = CoalescentMeasure::from_w_law(vec![(c, 1.0)], 4.0).unwrap();
        let (mu, s2) = m.log_w_moments().unwrap();
        assert_relative_eq!(mu, -c.ln(), epsilon = 1e-15);
        assert!(s2.abs() < 1e-15);
    }

    #[test]
    fn from_w_law_round_trip() {
        let atoms = vec![(0.2, 0.25), (0.5, 0.5), (0.9, 0.25)];
        let m = CoalescentMeasure::from_w_law(atoms.clone(), 2.5).unwrap();
        let mut cum = 0.0;
        for (w, p) in atoms {
            cum += p;
            assert!((m.w_cdf(w).unwrap() - cum).abs() < 1e-12);
        }
        assert_relative_eq!(m.negative_moment(2), 2.5, epsilon = 1e-12);
    }

    #[test]
    fn nu_moments_match_hurwitz_zeta() {
        // beta(2, b): ν_1 = ζ(2, b), ν_2 = 2ζ(3, b).
        for &b in &[0.5, 1.0, 2.0, 5.0] {
            let m = CoalescentMeasure::beta(2.0, b).unwrap();
            let (n1, n2) = m.nu_moments().unwrap();
            assert_relative_eq!(n1, hurwitz_zeta(2.0, b), max_relative = 1e-8);
            assert_relative_eq!(n2, 2.0 * hurwitz_zeta(3.0, b), max_relative = 1e-8);
        }
        // b = 1 reduces to the Riemann zeta values.
        let m = CoalescentMeasure::beta(2.0, 1.0).unwrap();
        let (n1, n2) = m.nu_moments().unwrap();
        assert_relative_eq!(n1, PI * PI / 6.0, max_relative = 1e-9);
        assert_relative_eq!(n2, 2.404113806319189, max_relative = 1e-9);
        // Shift identity case.
        let m = CoalescentMeasure::beta(2.0, 2.0).unwrap();
        let (n1, _) = m.nu_moments().unwrap();
        assert_relative_eq!(n1, PI * PI / 6.0 - 1.0, max_relative = 1e-9);
    }

    #[test]
    fn nu_moments_gamma_subordinator() {
        // E S_1 = 1/θ, Var S_1 = 1/θ² for the gamma subordinator.
        for &theta in &[0.5, 1.0, 2.0] {
            let m = CoalescentMeasure::gamma_subordinator(theta).unwrap();
            let (n1, n2) = m.nu_moments().unwrap();
            assert_relative_eq!(n1, 1.0 / theta, max_relative = 1e-8);
            assert_relative_eq!(n2, 1.0 / (theta * theta), max_relative = 1e-8);
        }
    }

    #[test]
    fn laplace_exponent_at_zero_and_one() {
        for m in [
            CoalescentMeasure::beta(1.5, 1.0).unwrap(),
            CoalescentMeasure::beta(2.0, 2.0).unwrap(),
            CoalescentMeasure::beta(3.0, 1.0).unwrap(),
            CoalescentMeasure::gamma_subordinator(1.0).unwrap(),
        ] {
            assert_eq!(m.laplace_exponent(0.0).unwrap(), 0.0);
            let m1 = m.negative_moment(1);
            assert_relative_eq!(m.laplace_exponent(1.0).unwrap(), m1, max_relative = 1e-9);
            assert_relative_eq!(
                m.laplace_exponent_quadrature(1.0).unwrap(),
                m1,
                max_relative = 1e-9
            );
        }
    }

    #[test]
    fn laplace_exponent_beta_15_1() {
        // Φ(1) = m_{-1} = B(a−1,b)/B(a,b) = 3 for beta(1.5, 1).
        let m = CoalescentMeasure::beta(1.5, 1.0).unwrap();
        assert_relative_eq!(m.laplace_exponent(1.0).unwrap(), 3.0, max_relative = 1e-10);
        // And against the fully independent formula Φ(z) = 3(z·B(1/2, z) − 1).
        for &z in &[0.5, 1.0, 2.0, 7.5, 40.0] {
            let exact = 3.0 * (z * beta_fn(0.5, z) - 1.0);
            assert_relative_eq!(m.laplace_exponent(z).unwrap(), exact, max_relative = 1e-9);
            assert_relative_eq!(
                m.laplace_exponent_quadrature(z).unwrap(),
                exact,
                max_relative = 1e-9
            );
        }
    }

    #[test]
    fn laplace_exponent_gamma_subordinator() {
        let m = CoalescentMeasure::gamma_subordinator(0.7).unwrap();
        for &z in &[0.2, 1.0, 5.0, 100.0] {
            let exact = (1.0_f64 + z / 0.7).ln();
            assert_relative_eq!(m.laplace_exponent(z).unwrap(), exact, epsilon = 1e-12);
            assert_relative_eq!(
                m.laplace_exponent_quadrature(z).unwrap(),
                exact,
                max_relative = 1e-9
            );
        }
    }

    #[test]
    fn laplace_exponent_requires_dust() {
        let m = CoalescentMeasure::beta(1.0, 1.0).unwrap();
        assert!(matches!(
            m.laplace_exponent(1.0),
            Err(CoalError::DustRequired)
        ));
    }

    #[test]
    fn laplace_exponent_is_concave() {
        // Finite-difference second differences must be non-positive.
        for m in [
            CoalescentMeasure::beta(1.5, 1.0).unwrap(),
            CoalescentMeasure::beta(2.0, 1.0).unwrap(),
            CoalescentMeasure::beta(3.0, 2.0).unwrap(),
            CoalescentMeasure::gamma_subordinator(2.0).unwrap(),
        ] {
            let h = 0.5;
            for i in 0..40 {
                let z = 0.5 + i as f64 * h;
                let f0 = m.laplace_exponent(z).unwrap();
                let f1 = m.laplace_exponent(z + h).unwrap();
                let f2 = m.laplace_exponent(z + 2.0 * h).unwrap();
                assert!(f2 - 2.0 * f1 + f0 <= 1e-8, "convexity violation at z={z}");
            }
        }
    }

    #[test]
    fn phi_asymptotic_ratio_tends_to_one() {
        // beta(1.5, 1): Φ(z) ~ Γ(1/2) z^{1/2} ℓ(z) with ℓ ≡ 1/(0.5·B(1.5,1)).
        let m = CoalescentMeasure::beta(1.5, 1.0).unwrap();
        let ell = 1.0 / (0.5 * beta_fn(1.5, 1.0));
        let table = m.phi_asymptotic_check(0.5, |_| ell).unwrap();
        let mut prev_gap = f64::INFINITY;
        for &(z, ratio) in &table {
            let gap = (ratio - 1.0).abs();
            assert!(gap <= prev_gap + 1e-12, "ratio not improving at z={z}");
            prev_gap = gap;
        }
        assert!((table.last().unwrap().1 - 1.0).abs() < 0.05);

        // beta(1.2, 2) with γ = 0.8: within 5% of 1 at z = 1e4.
        let m = CoalescentMeasure::beta(1.2, 2.0).unwrap();
        let ell = 1.0 / (0.8 * beta_fn(1.2, 2.0));
        let table = m.phi_asymptotic_check(0.8, |_| ell).unwrap();
        assert!((table.last().unwrap().1 - 1.0).abs() < 0.05);
    }

    #[test]
    fn phi_asymptotic_rejects_gamma_zero() {
        let m = CoalescentMeasure::gamma_subordinator(1.0).unwrap();
        assert!(m.phi_asymptotic_check(0.0, |_| 1.0).is_err());
    }

    #[test]
    fn pareto_log_w_cdf() {
        let m = CoalescentMeasure::pareto_log_w(0.5).unwrap();
        // P{W <= x} = (−log x)^{−α} below e^{−1}.
        let x = 0.01_f64;
        assert_relative_eq!(
            m.w_cdf(x).unwrap(),
            (-x.ln()).powf(-0.5),
            epsilon = 1e-14
        );
        assert_eq!(m.w_cdf(0.9).unwrap(), 1.0);
        assert_eq!(m.w_cdf(0.0).unwrap(), 0.0);
        // |log(1−W)| is bounded, so m_{-1} is finite.
        assert!(m.has_dust());
        assert!(m.is_simple());
    }

    #[test]
    fn measure_moments_bundle() {
        let m = CoalescentMeasure::beta(3.0, 1.0).unwrap();
        let mm = MeasureMoments::of(&m);
        assert_relative_eq!(mm.m_minus_2, 3.0, max_relative = 1e-12);
        assert_relative_eq!(mm.mu.unwrap(), 1.0, max_relative = 1e-9);
        assert!(mm.nu_1.is_none());

        let m = CoalescentMeasure::beta(1.0, 1.0).unwrap();
        let mm = MeasureMoments::of(&m);
        assert!(mm.m_minus_1.is_infinite());
        assert!(mm.mu.is_none());
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(CoalescentMeasure::beta(0.0, 1.0).is_err());
        assert!(CoalescentMeasure::beta(1.0, -2.0).is_err());
        assert!(CoalescentMeasure::gamma_subordinator(0.0).is_err());
        assert!(CoalescentMeasure::from_w_law(vec![(0.5, 0.8)], 1.0).is_err());
        assert!(CoalescentMeasure::from_w_law(vec![(1.0, 1.0)], 1.0).is_err());
        assert!(CoalescentMeasure::from_w_law(vec![], 1.0).is_err());
    }
}
