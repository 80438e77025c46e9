//! Reference limit distributions and centering/scaling constants.
//!
//! The normalized collision-spectrum components converge, depending on the
//! beta parameter `a`, to: totally skewed stable laws (0 < a ≤ 1), the
//! exponential functional of a subordinator (1 < a < 2), a Gaussian
//! sequence (a = 2), a distributional limit with no scaling (a > 2), and
//! independent Poissons (a = 3). This module evaluates their
//! characteristic functions, moments and samplers, plus the centering and
//! scaling sequences that go with them.

use std::fmt;
use std::sync::Arc;

use rand::Rng;

use crate::error::CoalError;
use crate::measure::CoalescentMeasure;
use crate::special::{beta_fn, digamma, gamma, hurwitz_zeta, ln_gamma};

/// Minimal complex value for characteristic-function arithmetic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cpx {
    pub re: f64,
    pub im: f64,
}

impl Cpx {
    pub fn new(re: f64, im: f64) -> Self {
        Cpx { re, im }
    }
    /// exp(a + bi) = e^a (cos b + i sin b).
    pub fn from_polar_exp(re_exp: f64, phase: f64) -> Self {
        let r = re_exp.exp();
        Cpx::new(r * phase.cos(), r * phase.sin())
    }
    pub fn conj(self) -> Self {
        Cpx::new(self.re, -self.im)
    }
    pub fn abs(self) -> f64 {
        self.re.hypot(self.im)
    }
}

/// p_k^{(a)} = (2−a)Γ(k+a−1)/(Γ(a)(k+1)!): the limit law of the first
/// decrement I_n for beta(a, b)-coalescents with a in (0, 1].
pub fn p_k_a(a: f64, k: u64) -> f64 {
    assert!(a > 0.0 && a <= 1.0, "p_k_a requires a in (0, 1]");
    assert!(k >= 1);
    let kf = k as f64;
    ((2.0 - a).ln() + ln_gamma(kf + a - 1.0) - ln_gamma(a) - ln_gamma(kf + 2.0)).exp()
}

/// p_{k+1}^{(a)} / p_k^{(a)} — the lazy-tail extension ratio.
pub fn p_k_a_ratio(a: f64, k: u64) -> f64 {
    let kf = k as f64;
    (kf + a - 1.0) / (kf + 2.0)
}

/// Handle on a Laplace exponent z ↦ Φ(z).
#[derive(Clone)]
pub struct PhiHandle(pub Arc<dyn Fn(f64) -> f64 + Send + Sync>);

impl PhiHandle {
    pub fn of_measure(measure: &CoalescentMeasure) -> Self {
        let m = measure.clone();
        PhiHandle(Arc::new(move |z| {
            m.laplace_exponent(z).expect("laplace exponent")
        }))
    }
    pub fn eval(&self, z: f64) -> f64 {
        (self.0)(z)
    }
}

impl fmt::Debug for PhiHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PhiHandle(..)")
    }
}

/// A reference limit law.
#[derive(Debug, Clone)]
pub enum LimitLaw {
    /// α-stable with CF exp{|u|^α(cos(πα/2) + i·sin(πα/2)·sgn u)}, α ∈ (1,2).
    StableTable1 { alpha: f64 },
    /// 1-stable with CF exp{iu·log|u| − (π/2)|u|}.
    OneStable,
    /// Spectrally negative α-stable with CF
    /// exp{−|u|^α Γ(1−α)(cos(πα/2) + i·sin(πα/2)·sgn u)}, α ∈ (1,2).
    StableCf7 { alpha: f64 },
    /// Standard normal.
    Normal,
    Poisson { rate: f64 },
    /// scale·E_γ where E_γ = ∫ e^{−γS_t} dt for the subordinator with
    /// Laplace exponent Φ; moments are exact products.
    ExpFunctional {
        gamma: f64,
        scale: f64,
        phi: PhiHandle,
    },
    /// W_α^←(1), the inverse at 1 of the α-stable subordinator with
    /// Laplace exponent Γ(1−α)z^α, α ∈ (0,1).
    InverseSubordinator { alpha: f64 },
}

impl LimitLaw {
    /// Characteristic function where a closed form exists.
    pub fn cf(&self, u: f64) -> Option<Cpx> {
        if u == 0.0 {
            return Some(Cpx::new(1.0, 0.0));
        }
        let s = u.signum();
        let au = u.abs();
        match self {
            LimitLaw::StableTable1 { alpha } => {
                let half = std::f64::consts::PI * alpha / 2.0;
                let m = au.powf(*alpha);
                Some(Cpx::from_polar_exp(m * half.cos(), m * half.sin() * s))
            }
            LimitLaw::OneStable => Some(Cpx::from_polar_exp(
                -std::f64::consts::FRAC_PI_2 * au,
                u * au.ln(),
            )),
            LimitLaw::StableCf7 { alpha } => {
                let half = std::f64::consts::PI * alpha / 2.0;
                let g = gamma(1.0 - alpha);
                let m = au.powf(*alpha);
                Some(Cpx::from_polar_exp(
                    -m * g * half.cos(),
                    -m * g * half.sin() * s,
                ))
            }
            LimitLaw::Normal => Some(Cpx::new((-0.5 * u * u).exp(), 0.0)),
            LimitLaw::Poisson { rate } => {
                Some(Cpx::from_polar_exp(rate * (u.cos() - 1.0), rate * u.sin()))
            }
            LimitLaw::ExpFunctional { .. } | LimitLaw::InverseSubordinator { .. } => None,
        }
    }

    /// j-th raw moment where finite and known.
    pub fn moment(&self, j: u32) -> Option<f64> {
        if j == 0 {
            return Some(1.0);
        }
        match self {
            LimitLaw::StableTable1 { .. } | LimitLaw::StableCf7 { .. } => {
                // Mean zero; absolute moments of order >= alpha diverge.
                if j == 1 {
                    Some(0.0)
                } else {
                    None
                }
            }
            LimitLaw::OneStable => None,
            LimitLaw::Normal => Some(if j % 2 == 1 {
                0.0
            } else {
                // (j−1)!! for even j.
                (1..=j as u64).filter(|i| i % 2 == 1).product::<u64>() as f64
            }),
            LimitLaw::Poisson { rate } => Some(poisson_raw_moment(*rate, j)),
            LimitLaw::ExpFunctional { gamma, scale, phi } => {
                exp_functional_moment(*gamma, |z| phi.eval(z), j)
                    .ok()
                    .map(|m| scale.powi(j as i32) * m)
            }
            LimitLaw::InverseSubordinator { alpha } => {
                Some(inverse_subordinator_moment(*alpha, j))
            }
        }
    }

    /// Draw a sample where a sampler is defined.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<f64> {
        match self {
            LimitLaw::StableTable1 { alpha } => {
                let half = std::f64::consts::PI * alpha / 2.0;
                let sigma = half.cos().abs().powf(1.0 / alpha);
                Some(sigma * sample_standard_stable(*alpha, -1.0, rng))
            }
            LimitLaw::StableCf7 { alpha } => {
                let half = std::f64::consts::PI * alpha / 2.0;
                let sigma = (gamma(1.0 - alpha) * half.cos()).powf(1.0 / alpha);
                Some(sigma * sample_standard_stable(*alpha, -1.0, rng))
            }
            LimitLaw::OneStable => {
                // σX + β(2/π)σ·ln σ with σ = π/2, β = −1.
                let sigma = std::f64::consts::FRAC_PI_2;
                Some(sigma * sample_stable_one(-1.0, rng) - sigma.ln())
            }
            LimitLaw::Normal => Some(rand_distr::StandardNormal.sample(rng)),
            LimitLaw::Poisson { rate } => {
                use rand_distr::Distribution;
                rand_distr::Poisson::new(*rate).ok().map(|d| d.sample(rng))
            }
            LimitLaw::ExpFunctional { .. } | LimitLaw::InverseSubordinator { .. } => None,
        }
    }
}

use rand_distr::Distribution as _;

// Raw Poisson moments by the Touchard-style recurrence
// m_{j+1} = λ Σ_i C(j, i) m_i.
fn poisson_raw_moment(rate: f64, j: u32) -> f64 {
    let mut m = vec![1.0f64];
    for e in 0..j {
        let mut next = 0.0;
        let mut binom = 1.0;
        for (i, mi) in m.iter().enumerate() {
            if i > 0 {
                binom *= (e as f64 - i as f64 + 1.0) / i as f64;
            }
            next += binom * mi;
        }
        next *= rate;
        m.push(next);
    }
    m[j as usize]
}

/// Chambers–Mallows–Stuck sampler for the standard stable law
/// S(α, β, 1, 0) in the 1-parameterization, α ≠ 1:
/// CF exp{−|u|^α(1 − iβ·tan(πα/2)·sgn u)}.
pub fn sample_standard_stable<R: Rng + ?Sized>(alpha: f64, beta: f64, rng: &mut R) -> f64 {
    assert!(alpha > 0.0 && alpha <= 2.0 && alpha != 1.0);
    assert!((-1.0..=1.0).contains(&beta));
    let half_pi = std::f64::consts::FRAC_PI_2;
    let bt = beta * (half_pi * alpha).tan();
    let b0 = bt.atan() / alpha;
    let s = (1.0 + bt * bt).powf(0.5 / alpha);
    loop {
        let v: f64 = rng.random_range(-half_pi..half_pi);
        let w: f64 = -rng.random::<f64>().max(f64::MIN_POSITIVE).ln();
        let phi = alpha * (v + b0);
        let num = phi.sin();
        let den = v.cos().powf(1.0 / alpha);
        let tail = (v - phi).cos() / w;
        if tail <= 0.0 {
            continue; // measure-zero corner, redraw
        }
        let x = s * num / den * tail.powf((1.0 - alpha) / alpha);
        if x.is_finite() {
            return x;
        }
    }
}

/// CMS sampler for the standard 1-stable S(1, β, 1, 0):
/// CF exp{−|u|(1 + iβ(2/π)·sgn(u)·log|u|)}.
pub fn sample_stable_one<R: Rng + ?Sized>(beta: f64, rng: &mut R) -> f64 {
    let half_pi = std::f64::consts::FRAC_PI_2;
    loop {
        let v: f64 = rng.random_range(-half_pi..half_pi);
        let w: f64 = -rng.random::<f64>().max(f64::MIN_POSITIVE).ln();
        let a = half_pi + beta * v;
        let x = (a * v.tan() - beta * ((half_pi * w * v.cos()) / a).ln()) / half_pi;
        if x.is_finite() {
            return x;
        }
    }
}

/// Positive α-stable (subordinator) variable with Laplace transform
/// E e^{−zX} = exp(−z^α), α ∈ (0, 1): totally skewed CMS draw scaled by
/// cos(πα/2)^{1/α}.
pub fn sample_positive_stable<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    assert!(alpha > 0.0 && alpha < 1.0);
    let scale = (std::f64::consts::FRAC_PI_2 * alpha).cos().powf(1.0 / alpha);
    scale * sample_standard_stable(alpha, 1.0, rng)
}

/// Moments of the exponential functional E_γ = ∫ e^{−γS_t} dt:
/// E[E_γ^j] = Π_{j'=1}^{j} j'/Φ(γ·j').
pub fn exp_functional_moment(
    gamma_idx: f64,
    phi: impl Fn(f64) -> f64,
    j: u32,
) -> Result<f64, CoalError> {
    let mut acc = 1.0;
    for jp in 1..=j {
        let denom = phi(gamma_idx * jp as f64);
        if !(denom > 0.0) {
            return Err(CoalError::domain(format!(
                "laplace exponent non-positive at z = {}",
                gamma_idx * jp as f64
            )));
        }
        acc *= jp as f64 / denom;
    }
    Ok(acc)
}

/// E[(W_α^←(1))^j] = j! / (Γ(1−α)^j Γ(1+jα)) for the inverse of the
/// α-stable subordinator with Laplace exponent Γ(1−α)z^α. Obtained from
/// the Mittag-Leffler moments of the standard inverse subordinator plus
/// the Γ(1−α)^{1/α} time scale; validated against a discretized
/// first-passage simulation in the tests.
pub fn inverse_subordinator_moment(alpha: f64, j: u32) -> f64 {
    assert!(alpha > 0.0 && alpha < 1.0);
    if j == 0 {
        return 1.0;
    }
    let jf = j as f64;
    (ln_gamma(jf + 1.0) - jf * ln_gamma(1.0 - alpha).max(f64::NEG_INFINITY)
        - ln_gamma(1.0 + jf * alpha))
    .exp()
}

/// Centering/scaling pair with its limit law; the `a > 2` existence row
/// carries no law object.
#[derive(Debug, Clone)]
pub struct CenteringScaling {
    pub a_nk: f64,
    pub b_nk: f64,
    pub law: Option<LimitLaw>,
}

/// The centering/scaling row for the collision count X_{n,k} of a
/// beta(a, b)-coalescent, matching the regime of `a`.
pub fn table1_centering(a: f64, b: f64, k: u64, n: u64) -> Result<CenteringScaling, CoalError> {
    if !(a > 0.0) || !(b > 0.0) {
        return Err(CoalError::domain(format!(
            "beta parameters must be positive; got a={a}, b={b}"
        )));
    }
    if k < 2 || n < 3 {
        return Err(CoalError::domain("table1_centering requires k >= 2, n >= 3"));
    }
    let nf = n as f64;
    let ln_n = nf.ln();
    if a < 1.0 {
        let p = p_k_a(a, k - 1);
        Ok(CenteringScaling {
            a_nk: p * (1.0 - a) * nf,
            b_nk: p * (1.0 - a) * nf.powf(1.0 / (2.0 - a)),
            law: Some(LimitLaw::StableTable1 { alpha: 2.0 - a }),
        })
    } else if a == 1.0 {
        let p = p_k_a(1.0, k - 1);
        Ok(CenteringScaling {
            a_nk: p * nf * (nf * ln_n).ln() / (ln_n * ln_n),
            b_nk: p * nf / (ln_n * ln_n),
            law: Some(LimitLaw::OneStable),
        })
    } else if a < 2.0 {
        let g = 2.0 - a;
        let scale = g * (ln_gamma(k as f64 - g) - ln_gamma(k as f64 + 1.0)).exp();
        let measure = CoalescentMeasure::beta(a, b)?;
        Ok(CenteringScaling {
            a_nk: 0.0,
            b_nk: nf.powf(g) / (g * beta_fn(a, b)),
            law: Some(LimitLaw::ExpFunctional {
                gamma: g,
                scale,
                phi: PhiHandle::of_measure(&measure),
            }),
        })
    } else if a == 2.0 {
        let nu1 = hurwitz_zeta(2.0, b);
        let nu2 = 2.0 * hurwitz_zeta(3.0, b);
        let kf = k as f64;
        Ok(CenteringScaling {
            a_nk: ln_n / (kf * nu1),
            b_nk: ((nu2 / (nu1 * nu1 * nu1) / (kf * kf) + 1.0 / (kf * nu1)) * ln_n).sqrt(),
            law: Some(LimitLaw::Normal),
        })
    } else if a == 3.0 {
        Ok(CenteringScaling {
            a_nk: 0.0,
            b_nk: 1.0,
            law: Some(LimitLaw::Poisson {
                rate: b / (k as f64 - 1.0),
            }),
        })
    } else {
        // a > 2, a != 3: the spectrum converges without scaling; only the
        // existence of the limit is testable.
        Ok(CenteringScaling {
            a_nk: 0.0,
            b_nk: 1.0,
            law: None,
        })
    }
}

/// Limit covariance of the a = 2 Gaussian row:
/// Cov(N_i, N_j) = ν₂/(ν₁³·i·j) + δ_{ij}/(j·ν₁).
pub fn gaussian_row_cov(nu1: f64, nu2: f64, i: u64, j: u64) -> f64 {
    let base = nu2 / (nu1 * nu1 * nu1 * (i * j) as f64);
    if i == j {
        base + 1.0 / (j as f64 * nu1)
    } else {
        base
    }
}

/// Theorem-level centering for the cumulative-count process:
/// u_n(s) = μ^{-1} ∫_{(1−s)·log n}^{log n} P{|log(1−W)| ≤ y} dy and
/// v_n(s) = μ^{-1}·s·log n − u_n(s).
pub fn u_n_centering(
    measure: &CoalescentMeasure,
    n: f64,
    s: f64,
) -> Result<(f64, f64), CoalError> {
    if !(0.0..=1.0).contains(&s) {
        return Err(CoalError::domain("s must lie in [0, 1]"));
    }
    if n <= 1.0 {
        return Err(CoalError::domain("u_n centering requires n > 1"));
    }
    let (mu, _) = measure.log_w_moments()?;
    if !mu.is_finite() {
        return Err(CoalError::domain(
            "u_n centering requires mu = E|log W| < inf",
        ));
    }
    if s == 0.0 {
        return Ok((0.0, 0.0));
    }
    let ln_n = n.ln();
    let y0 = (1.0 - s) * ln_n;
    let y1 = ln_n;
    // P{|log(1−W)| <= y} = P{W <= 1 − e^{−y}}. For discrete W-laws the
    // integrand is a step function, so integrate it piecewise exactly.
    let u = match measure {
        CoalescentMeasure::FromWLaw {
            law: crate::measure::WLaw::Discrete(atoms),
            ..
        } => atoms
            .iter()
            .map(|&(w, p)| {
                let threshold = -(1.0 - w).ln(); // |log(1−w)|
                p * (y1 - threshold.clamp(y0, y1))
            })
            .sum::<f64>(),
        _ => crate::quad::integrate_interval(
            |y| measure.w_cdf(-(-y).exp_m1()).expect("w_cdf"),
            y0,
            y1,
            1e-10,
        )?,
    } / mu;
    let v = (s * ln_n / mu - u).max(0.0);
    Ok((u, v))
}

/// Two-term moment expansion for the a = 1 row:
/// E X_{n,k}^j ≈ (p^{(1)}_{k−1}·n/log n)^j (1 + m_j/log n), with
/// m_j = m_{j−1} + κ_j/j and κ_j = (j+b−1)Ψ(j+b) + j − (b−1)Ψ(b).
pub fn moment_expansion_a1(b: f64, k: u64, j: u32, n: u64) -> f64 {
    assert!(b > 0.0 && k >= 2 && n >= 3);
    if j == 0 {
        return 1.0;
    }
    let m_j = expansion_m_j(b, j);
    let ln_n = (n as f64).ln();
    let lead = p_k_a(1.0, k - 1) * n as f64 / ln_n;
    lead.powi(j as i32) * (1.0 + m_j / ln_n)
}

/// The m_j sequence of the expansion (m_0 = 0).
pub fn expansion_m_j(b: f64, j: u32) -> f64 {
    let mut m = 0.0;
    for jp in 1..=j {
        let jf = jp as f64;
        let kappa = (jf + b - 1.0) * digamma(jf + b) + jf - (b - 1.0) * digamma(b);
        m += kappa / jf;
    }
    m
}
