//! Exact dynamic programming for integer-lattice laws.
//!
//! Survival of a killed BRW is computed backwards over generations: for a
//! particle at generation `j` with U-sum `s`, `P_j(s)` is the probability that
//! some descendant path of remaining length `n − j` respects the barrier.
//! Corridor probabilities for a single walk use a forward DP.

use serde::Serialize;

use crate::analysis::CriticalProfile;
use crate::error::{Error, Result};
use crate::models::{Law, OffspringLaw, StepLaw};
use crate::simulate::{BarrierSpec, Coordinate};

const LATTICE_TOL: f64 = 1e-12;
/// Slack when rounding barrier levels to the lattice.
pub const ROUND_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
enum Branching {
    /// Child count with pmf, displacements i.i.d. from the step pmf.
    Product { pgf: Vec<(u32, f64)>, steps: Vec<(i64, f64)> },
    Outcomes(Vec<(Vec<i64>, f64)>),
}

/// An offspring law whose displacements live on the integers.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeLaw {
    branching: Branching,
    min_step: i64,
    max_step: i64,
}

fn to_int(x: f64) -> Result<i64> {
    let r = x.round();
    if (x - r).abs() <= LATTICE_TOL && r.abs() < 1e15 {
        Ok(r as i64)
    } else {
        Err(Error::NotLattice(format!("displacement {x} is not an integer")))
    }
}

impl LatticeLaw {
    pub fn from_law(law: &Law) -> Result<Self> {
        let branching = match law.spec() {
            OffspringLaw::BinaryBernoulli { p } => Branching::Product {
                pgf: vec![(2, 1.0)],
                steps: vec![(0, 1.0 - p), (1, *p)],
            },
            OffspringLaw::ProductLaw { offspring_pmf, step: StepLaw::DiscreteFinite { atoms } } => {
                let steps = atoms
                    .iter()
                    .filter(|a| a.1 > 0.0)
                    .map(|&(u, q)| Ok((to_int(u)?, q)))
                    .collect::<Result<Vec<_>>>()?;
                let pgf = offspring_pmf.iter().copied().filter(|&(k, pk)| k > 0 && pk > 0.0).collect();
                Branching::Product { pgf, steps }
            }
            OffspringLaw::ProductLaw { step: StepLaw::Gaussian { .. }, .. } => {
                return Err(Error::NotLattice("Gaussian displacements".into()))
            }
            OffspringLaw::ExplicitFinite { outcomes } => Branching::Outcomes(
                outcomes
                    .iter()
                    .filter(|o| o.1 > 0.0 && !o.0.is_empty())
                    .map(|(ds, p)| Ok((ds.iter().map(|&u| to_int(u)).collect::<Result<Vec<_>>>()?, *p)))
                    .collect::<Result<Vec<_>>>()?,
            ),
        };
        let all: Vec<i64> = match &branching {
            Branching::Product { steps, .. } => steps.iter().map(|s| s.0).collect(),
            Branching::Outcomes(os) => os.iter().flat_map(|o| o.0.iter().copied()).collect(),
        };
        let min_step = *all.iter().min().ok_or_else(|| Error::NotLattice("no displacements".into()))?;
        let max_step = *all.iter().max().unwrap();
        Ok(Self { branching, min_step, max_step })
    }

    pub fn min_step(&self) -> i64 {
        self.min_step
    }

    pub fn max_step(&self) -> i64 {
        self.max_step
    }

    /// Survival probability of a particle given per-child survival lookups.
    #[inline]
    fn parent_survival(&self, s: i64, child: impl Fn(i64) -> f64) -> f64 {
        match &self.branching {
            Branching::Product { pgf, steps } => {
                let m: f64 = steps.iter().map(|&(y, q)| q * child(s + y)).sum();
                if m <= 0.0 {
                    return 0.0;
                }
                // 1 − G_Z(1 − m) as a positive sum
                let l = (-m).ln_1p();
                pgf.iter().map(|&(k, pk)| -pk * (k as f64 * l).exp_m1()).sum()
            }
            Branching::Outcomes(outcomes) => outcomes
                .iter()
                .map(|(ys, p)| {
                    let mut r = 0.0f64;
                    for &y in ys {
                        let a = child(s + y);
                        r += a * (1.0 - r);
                    }
                    p * r
                })
                .sum(),
        }
    }
}

/// Smallest integer `≥ x`, forgiving round-off just above an integer.
pub fn lattice_ceil(x: f64) -> i64 {
    (x - ROUND_TOL * x.abs().max(1.0)).ceil() as i64
}

/// Largest integer `≤ x`, forgiving round-off just below an integer.
pub fn lattice_floor(x: f64) -> i64 {
    (x + ROUND_TOL * x.abs().max(1.0)).floor() as i64
}

/// Probability that some generation-`n` particle has `U(x_j) ≥ c·j` for
/// every `j ≤ n`. `c = −∞` removes the barrier.
pub fn survival_above_line(ll: &LatticeLaw, c: f64, n: usize) -> f64 {
    let bounds = |j: usize| -> (i64, i64) {
        let jj = j as i64;
        let floor_walk = jj * ll.min_step;
        let lo = if c == f64::NEG_INFINITY { floor_walk } else { lattice_ceil(c * j as f64).max(floor_walk) };
        (lo, jj * ll.max_step)
    };
    for j in 0..=n {
        let (lo, hi) = bounds(j);
        if lo > hi {
            return 0.0;
        }
    }
    let (lo_n, hi_n) = bounds(n);
    let mut next = vec![1.0f64; (hi_n - lo_n + 1) as usize];
    let mut next_lo = lo_n;
    for j in (0..n).rev() {
        let (lo, hi) = bounds(j);
        let next_len = next.len() as i64;
        let cur: Vec<f64> = (lo..=hi)
            .map(|s| {
                ll.parent_survival(s, |t| {
                    let i = t - next_lo;
                    if i >= 0 && i < next_len {
                        next[i as usize]
                    } else {
                        0.0
                    }
                })
            })
            .collect();
        next = cur;
        next_lo = lo;
    }
    // root sits at s = 0 in generation 0
    let i = -next_lo;
    if i >= 0 && (i as usize) < next.len() {
        next[i as usize]
    } else {
        0.0
    }
}

/// U-lattice slope equivalent to `barrier`: survival means `U(x_j) ≥ c j`.
pub fn lattice_slope(barrier: &BarrierSpec, profile: &CriticalProfile) -> f64 {
    if barrier.slope == f64::INFINITY {
        return f64::NEG_INFINITY;
    }
    match barrier.coordinate {
        Coordinate::ULower => profile.gamma - barrier.slope,
        // V_j ≤ b j  ⇔  U_j ≥ (ψ(t*) − b) j / t*
        Coordinate::VUpper => (profile.psi_tstar - barrier.slope) / profile.t_star,
    }
}

/// Exact probability of survival to depth `n` under `barrier`.
pub fn exact_path_survival(ll: &LatticeLaw, barrier: &BarrierSpec, profile: &CriticalProfile, n: usize) -> Result<f64> {
    if barrier.slope < 0.0 || barrier.slope.is_nan() {
        return Err(Error::InvalidParams(format!("barrier slope {} must be >= 0", barrier.slope)));
    }
    if n > 100_000 {
        return Err(Error::InvalidParams(format!("n = {n} too large for the exact DP")));
    }
    Ok(survival_above_line(ll, lattice_slope(barrier, profile), n))
}

/// Outcome of [`converged_survival`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Converged {
    pub n: usize,
    pub rho: f64,
    /// Value at `n / 2`.
    pub rho_half: f64,
    pub converged: bool,
}

/// Starting depth of [`converged_survival`].
pub const CONVERGENCE_START: usize = 64;
/// Relative change on doubling accepted as converged.
pub const CONVERGENCE_REL: f64 = 0.01;

/// Doubles `n` from 64 until `|ρ(n) − ρ(n/2)| / ρ(n) < 1%` or `n_max` is passed.
pub fn converged_survival(
    ll: &LatticeLaw,
    barrier: &BarrierSpec,
    profile: &CriticalProfile,
    n_max: usize,
) -> Result<Converged> {
    let mut half = exact_path_survival(ll, barrier, profile, CONVERGENCE_START / 2)?;
    let mut n = CONVERGENCE_START;
    loop {
        let rho = exact_path_survival(ll, barrier, profile, n)?;
        let done = if rho > 0.0 { ((rho - half) / rho).abs() < CONVERGENCE_REL } else { half == 0.0 };
        if done || 2 * n > n_max {
            return Ok(Converged { n, rho, rho_half: half, converged: done });
        }
        half = rho;
        n *= 2;
    }
}

/// Result of [`exact_corridor_walk`]; `prob = exp(log_prob)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorridorProb {
    pub log_prob: f64,
    pub prob: f64,
}

impl CorridorProb {
    fn zero() -> Self {
        Self { log_prob: f64::NEG_INFINITY, prob: 0.0 }
    }
}

/// Probability that the walk started at 0 with i.i.d. integer `steps`
/// satisfies `lower[i−1] ≤ S_i ≤ upper[i−1]` for `i = 1..=n`, and ends in
/// `endpoint` when given. Mass is renormalised every step and the log
/// normaliser accumulated, so tiny probabilities do not underflow.
pub fn exact_corridor_walk(
    steps: &[(i64, f64)],
    lower: &[i64],
    upper: &[i64],
    endpoint: Option<(i64, i64)>,
) -> Result<CorridorProb> {
    if lower.len() != upper.len() {
        return Err(Error::InvalidParams("corridor arrays differ in length".into()));
    }
    if steps.is_empty() {
        return Err(Error::InvalidParams("empty step law".into()));
    }
    let mut lo_prev = 0i64;
    let mut mass = vec![1.0f64];
    let mut log_norm = 0.0f64;
    for (&lo, &hi) in lower.iter().zip(upper) {
        if lo > hi {
            return Ok(CorridorProb::zero());
        }
        let mut cur = vec![0.0f64; (hi - lo + 1) as usize];
        for (i, &w) in mass.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let s = lo_prev + i as i64;
            for &(y, q) in steps {
                let t = s + y;
                if t >= lo && t <= hi {
                    cur[(t - lo) as usize] += w * q;
                }
            }
        }
        let total: f64 = cur.iter().sum();
        if total <= 0.0 {
            return Ok(CorridorProb::zero());
        }
        for x in cur.iter_mut() {
            *x /= total;
        }
        log_norm += total.ln();
        mass = cur;
        lo_prev = lo;
    }
    let tail = match endpoint {
        None => 1.0,
        Some((a, b)) => mass
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                let s = lo_prev + *i as i64;
                s >= a && s <= b
            })
            .map(|(_, w)| w)
            .sum(),
    };
    if tail <= 0.0 {
        return Ok(CorridorProb::zero());
    }
    let log_prob = log_norm + tail.ln();
    Ok(CorridorProb { log_prob, prob: log_prob.exp() })
}
