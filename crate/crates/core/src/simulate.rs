//! Monte Carlo engine for killed branching random walks.
//!
//! Particles are simulated breadth-first, one generation at a time, and any
//! particle whose V-position exceeds `slope · generation` is removed. A
//! replicate survives when some particle reaches generation `n`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, StreamRng};
use crate::stats::{binomial_stderr, wilson_interval, Z95};
use crate::transform::{barrier_map, VLaw};

/// Which side of the walk the barrier acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Coordinate {
    /// Kill when `U(x_j) < (γ − ε) j`.
    #[serde(rename = "U")]
    ULower,
    /// Kill when `V(x_j) > b j`.
    #[serde(rename = "V")]
    VUpper,
}

/// Linear killing line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierSpec {
    pub coordinate: Coordinate,
    pub slope: f64,
}

impl BarrierSpec {
    pub fn v(slope: f64) -> Self {
        Self { coordinate: Coordinate::VUpper, slope }
    }

    pub fn u(slope: f64) -> Self {
        Self { coordinate: Coordinate::ULower, slope }
    }

    /// Slope of the equivalent V-coordinate barrier.
    pub fn v_slope(&self, vlaw: &VLaw) -> f64 {
        match self.coordinate {
            Coordinate::VUpper => self.slope,
            Coordinate::ULower => barrier_map(self.slope, vlaw.profile()),
        }
    }

    fn check(&self) -> Result<()> {
        if self.slope >= 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!("barrier slope {} must be >= 0", self.slope)))
        }
    }
}

/// One killed-BRW replicate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KilledRun {
    pub survived: bool,
    /// The escape rule fired.
    pub cap_hit: bool,
    /// Live population after each generation `0..`; truncated at extinction or escape.
    pub pop_trace: Vec<usize>,
}

/// Simulates one killed BRW to depth `n`. With `escape_cap = Some(c)`, the run
/// is declared survived as soon as `c` particles are alive.
pub fn run_killed_brw(
    vlaw: &VLaw,
    barrier: &BarrierSpec,
    n: usize,
    escape_cap: Option<usize>,
    rng: &mut StreamRng,
) -> KilledRun {
    let slope = barrier.v_slope(vlaw);
    let cap = escape_cap.unwrap_or(usize::MAX).max(1);
    let mut current = vec![0.0f64];
    let mut next = Vec::new();
    let mut incs = Vec::new();
    let mut pop_trace = vec![1];
    for j in 1..=n {
        let line = slope * j as f64;
        next.clear();
        for &v in &current {
            vlaw.sample_increments(rng, &mut incs);
            next.extend(incs.iter().map(|dv| v + dv).filter(|&w| w <= line));
        }
        std::mem::swap(&mut current, &mut next);
        pop_trace.push(current.len());
        if current.is_empty() {
            return KilledRun { survived: false, cap_hit: false, pop_trace };
        }
        if current.len() >= cap && j < n {
            return KilledRun { survived: true, cap_hit: true, pop_trace };
        }
    }
    KilledRun { survived: true, cap_hit: false, pop_trace }
}

/// Monte Carlo estimate of the probability of survival to depth `n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurvivalEstimate {
    pub n: usize,
    /// V-coordinate slope actually simulated.
    pub slope: f64,
    pub replicates: u64,
    pub survivors: u64,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub cap_hits: u64,
}

impl SurvivalEstimate {
    pub fn stderr(&self) -> f64 {
        binomial_stderr(self.p_hat, self.replicates)
    }
}

/// Minimum replicate count accepted by [`estimate_rho`].
pub const MIN_REPLICATES: usize = 100;

/// Estimates the survival probability to depth `n` over `replicates`
/// independent runs; replicate `r` uses stream `(seed, lane, r)`.
pub fn estimate_rho(
    vlaw: &VLaw,
    barrier: &BarrierSpec,
    n: usize,
    replicates: usize,
    escape_cap: Option<usize>,
    seed: u64,
    lane: u64,
) -> Result<SurvivalEstimate> {
    barrier.check()?;
    if replicates < MIN_REPLICATES {
        return Err(Error::InvalidParams(format!("need at least {MIN_REPLICATES} replicates, got {replicates}")));
    }
    let (survivors, cap_hits) = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let run = run_killed_brw(vlaw, barrier, n, escape_cap, &mut stream_rng(seed, lane, r));
            (run.survived as u64, run.cap_hit as u64)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let (ci_low, ci_high) = wilson_interval(survivors, replicates as u64, Z95);
    Ok(SurvivalEstimate {
        n,
        slope: barrier.v_slope(vlaw),
        replicates: replicates as u64,
        survivors,
        p_hat: survivors as f64 / replicates as f64,
        ci_low,
        ci_high,
        cap_hits,
    })
}

/// Empirical displacement bound and survival constant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MKappa {
    pub m: f64,
    pub kappa_hat: f64,
    /// Fraction of replicates alive at `j_max`.
    pub survival_hat: f64,
    /// Per-generation `P̂{max_{|x|≤j} V ≤ M j}` for `j = 1..=j_max`.
    pub bound_prob: Vec<f64>,
}

/// Grid spacing for [`estimate_m_kappa`].
pub const M_GRID_STEP: f64 = 0.05;
/// Hard ceiling for the M search.
pub const M_CEILING: f64 = 1e4;
const MAX_POPULATION: usize = 1 << 22;

/// Smallest grid value `M` with `P̂{max_{|x|≤j} V(x) ≤ M j} − 3·se ≥ 1/2` for
/// every `1 ≤ j ≤ j_max`, together with `κ̂ = min_j P̂{Z_j > 0, max ≤ M j}`.
pub fn estimate_m_kappa(vlaw: &VLaw, j_max: usize, replicates: usize, seed: u64) -> Result<MKappa> {
    if j_max < 10 {
        return Err(Error::InvalidParams(format!("j_max = {j_max} must be at least 10")));
    }
    if replicates < MIN_REPLICATES {
        return Err(Error::InvalidParams(format!("need at least {MIN_REPLICATES} replicates")));
    }
    // per replicate: running max R_j and alive flag for j = 1..=j_max
    let runs: Vec<Result<(Vec<f64>, Vec<bool>)>> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, 3, r);
            let mut current = vec![0.0f64];
            let mut next = Vec::new();
            let mut incs = Vec::new();
            let mut running = 0.0f64;
            let mut maxes = Vec::with_capacity(j_max);
            let mut alive = Vec::with_capacity(j_max);
            for _ in 1..=j_max {
                next.clear();
                for &v in &current {
                    vlaw.sample_increments(&mut rng, &mut incs);
                    next.extend(incs.iter().map(|dv| v + dv));
                }
                std::mem::swap(&mut current, &mut next);
                if current.len() > MAX_POPULATION {
                    return Err(Error::InvalidParams("population explosion; lower j_max".into()));
                }
                running = current.iter().copied().fold(running, f64::max);
                maxes.push(running);
                alive.push(!current.is_empty());
            }
            Ok((maxes, alive))
        })
        .collect();
    let runs: Vec<(Vec<f64>, Vec<bool>)> = runs.into_iter().collect::<Result<_>>()?;

    let total = replicates as f64;
    let mut m_needed = 0.0f64;
    for j in 1..=j_max {
        let mut ratios: Vec<f64> = runs.iter().map(|r| r.0[j - 1] / j as f64).collect();
        ratios.sort_by(f64::total_cmp);
        let idx = (1..=replicates).find(|&c| {
            let p = c as f64 / total;
            p - 3.0 * binomial_stderr(p, replicates as u64) >= 0.5
        });
        let idx = idx.ok_or(Error::GridExhausted { ceiling: M_CEILING })?;
        m_needed = m_needed.max(ratios[idx - 1]);
    }
    let m = ((m_needed / M_GRID_STEP).ceil() * M_GRID_STEP).max(M_GRID_STEP);
    if m > M_CEILING {
        return Err(Error::GridExhausted { ceiling: M_CEILING });
    }

    let mut bound_prob = Vec::with_capacity(j_max);
    let mut kappa_hat = 1.0f64;
    for j in 1..=j_max {
        let line = m * j as f64;
        let within = runs.iter().filter(|r| r.0[j - 1] <= line).count() as f64 / total;
        let both = runs.iter().filter(|r| r.1[j - 1] && r.0[j - 1] <= line).count() as f64 / total;
        bound_prob.push(within);
        kappa_hat = kappa_hat.min(both);
    }
    let survival_hat = runs.iter().filter(|r| r.1[j_max - 1]).count() as f64 / total;
    Ok(MKappa { m, kappa_hat, survival_hat, bound_prob })
}

/// Parameters of the embedded Galton–Watson construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GwEmbedParams {
    /// Block depth.
    pub n: usize,
    /// V-coordinate slope.
    pub eps: f64,
    pub alpha: f64,
    /// Length of the first phase.
    pub l: usize,
    /// Displacement bound.
    pub m: f64,
}

impl GwEmbedParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.n > self.l && self.l >= 1) {
            return Err(Error::InvalidParams(format!("need n > L >= 1, got n = {}, L = {}", self.n, self.l)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) || !(self.eps >= 0.0) || !(self.m >= 0.0) {
            return Err(Error::InvalidParams("need 0 < alpha < 1, eps >= 0, M >= 0".into()));
        }
        let lhs = (1.0 - self.alpha) * self.eps * self.l as f64;
        let rhs = self.m * (self.n - self.l) as f64;
        if lhs < rhs - 1e-12 * rhs.abs().max(1.0) {
            return Err(Error::InvalidParams(format!("(1 - alpha) eps L = {lhs} < M (n - L) = {rhs}")));
        }
        Ok(())
    }

    /// Smallest `L` satisfying the constraint for given `n`, `eps`, `alpha`, `m`.
    pub fn smallest_l(n: usize, eps: f64, alpha: f64, m: f64) -> Option<usize> {
        (1..n).find(|&l| GwEmbedParams { n, eps, alpha, l, m }.validate().is_ok())
    }
}

/// Histogram of the first-generation size of the embedded tree.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GHistogram {
    pub replicates: u64,
    /// `#G → number of replicates`, including 0.
    pub counts: BTreeMap<u64, u64>,
}

impl GHistogram {
    pub fn nonempty(&self) -> u64 {
        self.counts.iter().filter(|(k, _)| **k > 0).map(|(_, c)| c).sum()
    }

    pub fn p_nonempty(&self) -> f64 {
        self.nonempty() as f64 / self.replicates as f64
    }

    pub fn mean(&self) -> f64 {
        self.counts.iter().map(|(k, c)| *k as f64 * *c as f64).sum::<f64>() / self.replicates as f64
    }
}

/// Size of the first generation of the embedded tree for one replicate.
pub fn sample_g_count(vlaw: &VLaw, params: &GwEmbedParams, rng: &mut StreamRng) -> u64 {
    let first = params.alpha * params.eps;
    let allowance = (1.0 - params.alpha) * params.eps * params.l as f64;
    let mut incs = Vec::new();

    // phase one: paths with V(x_i) <= alpha eps i for i <= L
    let mut current = vec![0.0f64];
    let mut next = Vec::new();
    for i in 1..=params.l {
        let line = first * i as f64;
        next.clear();
        for &v in &current {
            vlaw.sample_increments(rng, &mut incs);
            next.extend(incs.iter().map(|dv| v + dv).filter(|&w| w <= line));
        }
        std::mem::swap(&mut current, &mut next);
        if current.is_empty() {
            return 0;
        }
    }

    // phase two: every descendant of x_L up to level n stays within the allowance
    let depth = params.n - params.l;
    let mut total = 0u64;
    for _ in 0..current.len() {
        let mut sub = vec![0.0f64];
        let mut ok = true;
        for _ in 0..depth {
            next.clear();
            for &v in &sub {
                vlaw.sample_increments(rng, &mut incs);
                next.extend(incs.iter().map(|dv| v + dv));
            }
            std::mem::swap(&mut sub, &mut next);
            if sub.iter().any(|&w| w > allowance) {
                ok = false;
                break;
            }
            if sub.is_empty() {
                break;
            }
        }
        if ok {
            total += sub.len() as u64;
        }
    }
    total
}

/// I.i.d. samples of `#G_{n,ε}`; replicate `r` uses stream `(seed, 4, r)`.
pub fn simulate_g(vlaw: &VLaw, params: &GwEmbedParams, replicates: usize, seed: u64) -> Result<GHistogram> {
    params.validate()?;
    if replicates == 0 {
        return Err(Error::InvalidParams("replicates must be positive".into()));
    }
    let counts: Vec<u64> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| sample_g_count(vlaw, params, &mut stream_rng(seed, 4, r)))
        .collect();
    let mut hist = BTreeMap::new();
    for c in counts {
        *hist.entry(c).or_insert(0) += 1;
    }
    Ok(GHistogram { replicates: replicates as u64, counts: hist })
}
