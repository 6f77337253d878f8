//! Logarithmic generating function of the branching walk and its critical point.
//!
//! `ψ(t) = log E Σ_{|x|=1} e^{t U(x)}`. The critical point `t*` solves
//! `ψ(t*) = t* ψ'(t*)`; from it follow the speed `γ = ψ(t*)/t*`, the spine
//! variance `σ² = (t*)² ψ''(t*)` and the decay constants `β_U`, `β_V`.

use std::f64::consts::{PI, SQRT_2};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::models::{Intensity, Law};

/// Target accuracy for `|t ψ'(t) − ψ(t)|` at the returned root.
pub const ROOT_TOL: f64 = 1e-12;

const BRACKET_START: f64 = 1e-6;
const BRACKET_LIMIT: f64 = 1e12;

/// `(ψ, ψ', ψ'')` at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PsiValues {
    pub psi: f64,
    pub psi1: f64,
    pub psi2: f64,
}

/// Evaluates ψ and its first two derivatives for one law.
#[derive(Debug, Clone)]
pub struct CgfEvaluator {
    intensity: Intensity,
    /// Upper end of the domain of ψ; infinite for every supported family.
    pub zeta: f64,
}

/// Critical constants of a law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CriticalProfile {
    pub t_star: f64,
    pub gamma: f64,
    pub psi_tstar: f64,
    pub psi1_tstar: f64,
    pub psi2_tstar: f64,
    pub sigma2: f64,
    pub beta_v: f64,
    pub beta_u: f64,
    pub mean_children: f64,
}

impl CriticalProfile {
    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }

    /// `|t* ψ'(t*) − ψ(t*)|`.
    pub fn residual(&self) -> f64 {
        (self.t_star * self.psi1_tstar - self.psi_tstar).abs()
    }
}

impl CgfEvaluator {
    pub fn new(law: &Law) -> Self {
        Self { intensity: law.intensity().clone(), zeta: f64::INFINITY }
    }

    /// ψ and derivatives at any real `t` (the supported families have
    /// everywhere-finite generating functions).
    pub fn eval_unchecked(&self, t: f64) -> PsiValues {
        match &self.intensity {
            Intensity::Atoms(atoms) => {
                let shift = atoms.iter().map(|&(u, _)| t * u).fold(f64::NEG_INFINITY, f64::max);
                let mut s0 = 0.0;
                let mut s1 = 0.0;
                for &(u, w) in atoms {
                    let e = w * (t * u - shift).exp();
                    s0 += e;
                    s1 += e * u;
                }
                let psi1 = s1 / s0;
                let s2: f64 = atoms
                    .iter()
                    .map(|&(u, w)| w * (t * u - shift).exp() * (u - psi1) * (u - psi1))
                    .sum();
                PsiValues { psi: shift + s0.ln(), psi1, psi2: s2 / s0 }
            }
            Intensity::Gaussian { mean_children, mean, stddev } => {
                let var = stddev * stddev;
                PsiValues {
                    psi: mean_children.ln() + mean * t + 0.5 * var * t * t,
                    psi1: mean + var * t,
                    psi2: var,
                }
            }
        }
    }

    pub fn psi_eval(&self, t: f64) -> Result<PsiValues> {
        if !(t > 0.0 && t < self.zeta) {
            return Err(Error::Domain { arg: "t", value: t, domain: format!("(0, {})", self.zeta) });
        }
        Ok(self.eval_unchecked(t))
    }

    /// `h(t) = t ψ'(t) − ψ(t)`, strictly increasing with `h(0+) = −log E[Z]`.
    pub fn h(&self, t: f64) -> f64 {
        let v = self.eval_unchecked(t);
        t * v.psi1 - v.psi
    }

    /// Solves `ψ(t*) = t* ψ'(t*)` by bracketing followed by safeguarded Newton.
    pub fn solve_tstar(&self) -> Result<CriticalProfile> {
        if let Intensity::Atoms(atoms) = &self.intensity {
            // h(t) -> -log(mass at the top displacement) as t -> infinity
            let &(top, mass) = atoms.last().expect("validated law has atoms");
            if mass >= 1.0 {
                return Err(Error::NoCriticalPoint(format!(
                    "expected number of children at the maximal displacement {top} is {mass} >= 1; \
                     the children at the maximal displacement percolate and survival does not decay"
                )));
            }
        }

        let mut hi = BRACKET_START;
        let mut lo = 0.0;
        while self.h(hi) < 0.0 {
            lo = hi;
            hi *= 2.0;
            if hi > BRACKET_LIMIT || hi >= self.zeta {
                return Err(Error::DomainTooNarrow);
            }
        }

        let mut t = 0.5 * (lo + hi);
        for _ in 0..500 {
            let v = self.eval_unchecked(t);
            let h = t * v.psi1 - v.psi;
            if h.abs() < ROOT_TOL * 1e-3 {
                break;
            }
            if h < 0.0 {
                lo = t;
            } else {
                hi = t;
            }
            let newton = t - h / (t * v.psi2);
            let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            if next == t || hi - lo <= f64::EPSILON * hi {
                break;
            }
            t = next;
        }

        let v = self.eval_unchecked(t);
        let residual = (t * v.psi1 - v.psi).abs();
        if residual >= ROOT_TOL * v.psi.abs().max(1.0) {
            return Err(Error::Certification(format!("critical-point residual {residual:e} too large")));
        }
        let sigma2 = t * t * v.psi2;
        Ok(CriticalProfile {
            t_star: t,
            gamma: v.psi / t,
            psi_tstar: v.psi,
            psi1_tstar: v.psi1,
            psi2_tstar: v.psi2,
            sigma2,
            beta_v: PI * sigma2.sqrt() / SQRT_2,
            beta_u: PI * (t * v.psi2).sqrt() / SQRT_2,
            mean_children: self.intensity.total_mass(),
        })
    }
}

/// Convenience: critical profile of a validated law.
pub fn solve_tstar(law: &Law) -> Result<CriticalProfile> {
    CgfEvaluator::new(law).solve_tstar()
}

/// The Bernoulli parameter with speed exactly 1/2: root of `16p(1−p) = 1` in (0, 1/2).
pub fn p0() -> f64 {
    (2.0 - 3f64.sqrt()) / 4.0
}

fn check_half_open(p: f64) -> Result<()> {
    if p > 0.0 && p < 0.5 {
        Ok(())
    } else {
        Err(Error::Domain { arg: "p", value: p, domain: "(0, 1/2)".into() })
    }
}

/// Speed of the binary Bernoulli walk: the root in `(p, 1)` of
/// `γ log(γ/p) + (1−γ) log((1−γ)/(1−p)) = log 2`, by bisection.
pub fn gamma_bs_solve(p: f64) -> Result<f64> {
    check_half_open(p)?;
    let mut lo = p;
    let mut hi = 1.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if gamma_bs_equation(mid, p) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Left-hand side of the speed equation minus `log 2`.
pub fn gamma_bs_equation(gamma: f64, p: f64) -> f64 {
    let tail = if gamma < 1.0 { (1.0 - gamma) * ((1.0 - gamma) / (1.0 - p)).ln() } else { 0.0 };
    gamma * (gamma / p).ln() + tail - std::f64::consts::LN_2
}

/// `β_bs(p) = (π/√2) [t* ψ''(t*)]^{1/2}` for the binary Bernoulli walk.
pub fn beta_bs(p: f64) -> Result<f64> {
    check_half_open(p)?;
    Ok(solve_tstar(&Law::binary_bernoulli(p)?)?.beta_u)
}

/// Coefficient of `(p − p0)^{-1/2}` in the exponent of the near-critical survival asymptotic:
/// `π log(1/(4p0)) / (4 (1 − 2p0)^{1/2})`.
pub fn aldous_rate(p0: f64) -> Result<f64> {
    if !(p0 > 0.0 && p0 < 0.5) || (16.0 * p0 * (1.0 - p0) - 1.0).abs() > 1e-9 {
        return Err(Error::Domain { arg: "p0", value: p0, domain: "root of 16 p (1 - p) = 1 in (0, 1/2)".into() });
    }
    Ok(PI * (1.0 / (4.0 * p0)).ln() / (4.0 * (1.0 - 2.0 * p0).sqrt()))
}
