//! Small-deviation constants for walks confined to a shrinking corridor.
//!
//! For a triangular array with step variance → σ² and scale `a_n` with
//! `a_n → ∞`, `a_n² / n → 0`,
//! `(a_n² / n) log P{g₁(i/n) ≤ S_i / a_n ≤ g₂(i/n), i ≤ n}` tends to
//! `−(π² σ² / 2) ∫₀¹ dt / (g₂(t) − g₁(t))²`.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::solve_tstar;
use crate::error::{Error, Result};
use crate::models::{Law, OffspringLaw};
use crate::oracle::{exact_corridor_walk, lattice_ceil, lattice_floor};
use crate::quadrature::adaptive_simpson;
use crate::rng::stream_rng;
use crate::spine::{make_spine, SpineLaw};
use crate::transform::make_vlaw;

/// Number of grid points used to store boundary functions.
pub const CORRIDOR_SAMPLES: usize = 1024;
/// Absolute tolerance of the corridor integral.
pub const QUAD_TOL: f64 = 1e-10;
/// Term bound at which the Brownian corridor series stops.
pub const SERIES_TOL: f64 = 1e-14;

/// Boundary functions as written in a config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum CorridorShape {
    Constant { lower: f64, upper: f64 },
    /// Values at `t = 0` and `t = 1`.
    Linear { lower: [f64; 2], upper: [f64; 2] },
    /// Equally spaced samples on `[0, 1]`, at least two each.
    Samples { lower: Vec<f64>, upper: Vec<f64> },
}

/// Two boundary curves on `[0, 1]` and a diffusion scale.
#[derive(Debug, Clone, PartialEq)]
pub struct CorridorSpec {
    g1: Vec<f64>,
    g2: Vec<f64>,
    sigma: f64,
}

fn interp(samples: &[f64], t: f64) -> f64 {
    let last = samples.len() - 1;
    let x = t.clamp(0.0, 1.0) * last as f64;
    let i = (x.floor() as usize).min(last - 1);
    let w = x - i as f64;
    samples[i] * (1.0 - w) + samples[i + 1] * w
}

impl CorridorSpec {
    pub fn from_fn(g1: impl Fn(f64) -> f64, g2: impl Fn(f64) -> f64, sigma: f64) -> Result<Self> {
        let grid = |g: &dyn Fn(f64) -> f64| -> Vec<f64> {
            (0..CORRIDOR_SAMPLES).map(|i| g(i as f64 / (CORRIDOR_SAMPLES - 1) as f64)).collect()
        };
        let spec = Self { g1: grid(&g1), g2: grid(&g2), sigma };
        spec.check()?;
        Ok(spec)
    }

    pub fn new(shape: &CorridorShape, sigma: f64) -> Result<Self> {
        match shape {
            CorridorShape::Constant { lower, upper } => Self::from_fn(|_| *lower, |_| *upper, sigma),
            CorridorShape::Linear { lower, upper } => Self::from_fn(
                |t| lower[0] + (lower[1] - lower[0]) * t,
                |t| upper[0] + (upper[1] - upper[0]) * t,
                sigma,
            ),
            CorridorShape::Samples { lower, upper } => {
                if lower.len() < 2 || upper.len() < 2 {
                    return Err(Error::InvalidParams("boundary samples need at least two points".into()));
                }
                Self::from_fn(|t| interp(lower, t), |t| interp(upper, t), sigma)
            }
        }
    }

    pub fn constant(lower: f64, upper: f64, sigma: f64) -> Result<Self> {
        Self::new(&CorridorShape::Constant { lower, upper }, sigma)
    }

    fn check(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParams(format!("sigma = {} must be positive", self.sigma)));
        }
        if self.g1.iter().chain(&self.g2).any(|x| !x.is_finite()) {
            return Err(Error::InvalidParams("boundary values must be finite".into()));
        }
        if !(self.g1[0] < 0.0 && 0.0 < self.g2[0]) {
            return Err(Error::InvalidParams(format!(
                "need g1(0) < 0 < g2(0), got g1(0) = {}, g2(0) = {}",
                self.g1[0], self.g2[0]
            )));
        }
        let pinch = self.g1.iter().zip(&self.g2).map(|(a, b)| b - a).fold(f64::INFINITY, f64::min);
        if pinch <= 0.0 {
            return Err(Error::InvalidParams(format!("corridor pinches: min width {pinch}")));
        }
        Ok(())
    }

    pub fn g1(&self, t: f64) -> f64 {
        interp(&self.g1, t)
    }

    pub fn g2(&self, t: f64) -> f64 {
        interp(&self.g2, t)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        let spec = Self { sigma, ..self.clone() };
        spec.check()?;
        Ok(spec)
    }

    /// Default endpoint window width `(g₂(1) − g₁(1)) / 4`.
    pub fn default_endpoint_b(&self) -> f64 {
        (self.g2(1.0) - self.g1(1.0)) / 4.0
    }
}

/// `−(π² σ² / 2) ∫₀¹ dt / (g₂ − g₁)²`.
pub fn corridor_constant(spec: &CorridorSpec) -> Result<f64> {
    let integral = adaptive_simpson(
        |t| {
            let w = spec.g2(t) - spec.g1(t);
            1.0 / (w * w)
        },
        0.0,
        1.0,
        QUAD_TOL,
    )?;
    Ok(-0.5 * PI * PI * spec.sigma * spec.sigma * integral)
}

/// `P{a ≤ W_t ≤ b for t ≤ 1, c ≤ W_1 ≤ d}` for standard Brownian motion from 0.
pub fn ito_mckean_f(a: f64, b: f64, c: f64, d: f64) -> Result<f64> {
    if !(a < 0.0 && 0.0 < b && a <= c && c <= d && d <= b) || ![a, b, c, d].iter().all(|x| x.is_finite()) {
        return Err(Error::InvalidParams(format!("need a < 0 < b and a <= c <= d <= b, got ({a}, {b}, {c}, {d})")));
    }
    if c == d {
        return Ok(0.0);
    }
    let w = b - a;
    let mut sum = 0.0;
    for n in 1u64.. {
        let k = n as f64 * PI / w;
        let decay = (-0.5 * k * k).exp();
        let scale = 2.0 / (n as f64 * PI);
        sum += scale * decay * (k * (-a)).sin() * ((k * (c - a)).cos() - (k * (d - a)).cos());
        if 2.0 * scale * decay < SERIES_TOL {
            break;
        }
    }
    Ok(sum)
}

/// Step law of the array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ArrayFamily {
    /// The same integer-valued step law for every `n`.
    Lattice { steps: Vec<(i64, f64)> },
    /// Spine step of `law` conditioned on `ν₀ ≤ r_n`, `r_n = ⌊e^{n^{1/4}}⌋`.
    SpineConditioned { law: OffspringLaw },
}

impl ArrayFamily {
    /// Steps −1, 0, +1 with probability 1/3 each.
    pub fn lazy_walk() -> Self {
        ArrayFamily::Lattice { steps: vec![(-1, 1.0 / 3.0), (0, 1.0 / 3.0), (1, 1.0 / 3.0)] }
    }
}

fn default_exponent() -> f64 {
    1.0 / 3.0
}

fn default_replicates() -> usize {
    MIN_MC_REPLICATES
}

/// Minimum replicate count when corridor probabilities are estimated by Monte Carlo.
pub const MIN_MC_REPLICATES: usize = 1_000_000;

/// Triangular array: step family plus scale `a_n = n^{a_exponent}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArraySpec {
    #[serde(flatten)]
    pub family: ArrayFamily,
    #[serde(default = "default_exponent")]
    pub a_exponent: f64,
    #[serde(default = "default_replicates")]
    pub mc_replicates: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ArraySpec {
    pub fn new(family: ArrayFamily) -> Self {
        Self { family, a_exponent: default_exponent(), mc_replicates: default_replicates(), seed: 0 }
    }

    pub fn a_n(&self, n: usize) -> f64 {
        if self.a_exponent == 1.0 / 3.0 {
            (n as f64).cbrt()
        } else {
            (n as f64).powf(self.a_exponent)
        }
    }
}

/// `⌊e^{n^{1/4}}⌋`, saturating.
pub fn spine_cap(n: usize) -> u32 {
    let r = (n as f64).powf(0.25).exp().floor();
    if r >= u32::MAX as f64 {
        u32::MAX
    } else {
        r as u32
    }
}

/// Numerical witnesses of the array conditions at one `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ArrayWitness {
    /// `E|X|³`, the (2+η)-moment with η = 1.
    pub abs_moment3: f64,
    pub mean: f64,
    /// `|E X| · n / a_n`, should tend to 0.
    pub mean_scaled: f64,
    pub variance: f64,
    /// `|Var X − σ²|`.
    pub var_gap: f64,
    /// `P{ν₀ > r_n}` for spine families, 0 otherwise.
    pub tail: f64,
    pub r_n: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    MonteCarlo,
}

/// One row of [`triangular_experiment`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TriangularRow {
    pub n: usize,
    pub a_n: f64,
    pub method: Method,
    pub prob: f64,
    pub log_prob: f64,
    /// `(a_n² / n) log P`.
    pub scaled_log_prob: f64,
    pub target: f64,
    /// `|scaled − target| / |target|`.
    pub gap: f64,
    /// Standard error of `prob` for Monte Carlo rows.
    pub stderr: Option<f64>,
    /// Endpoint-constrained variant `S_n / a_n ≥ g₂(1) − b`.
    pub endpoint_prob: Option<f64>,
    pub endpoint_scaled_log_prob: Option<f64>,
    pub witness: ArrayWitness,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TriangularReport {
    pub target: f64,
    pub rows: Vec<TriangularRow>,
    pub warnings: Vec<String>,
}

/// Materialised step law for one `n`.
enum StepsAt {
    /// Integer steps and the affine map `S_i = i·shift + scale·(lattice position)`.
    Lattice { steps: Vec<(i64, f64)>, shift: f64, scale: f64 },
    Sampled { spine: Box<SpineLaw>, cap: u32 },
}

struct Prepared {
    steps: StepsAt,
    witness: ArrayWitness,
}

fn prepare(family: &ArrayFamily, spine: Option<&SpineLaw>, sigma2: f64, n: usize, a_n: f64) -> Result<Prepared> {
    let moments = |atoms: &[(f64, f64)]| -> (f64, f64, f64) {
        let mean: f64 = atoms.iter().map(|a| a.0 * a.1).sum();
        let var: f64 = atoms.iter().map(|a| (a.0 - mean).powi(2) * a.1).sum();
        let m3: f64 = atoms.iter().map(|a| a.0.abs().powi(3) * a.1).sum();
        (mean, var, m3)
    };
    let witness = |mean: f64, variance: f64, abs_moment3: f64, tail: f64, r_n: u32| ArrayWitness {
        abs_moment3,
        mean,
        mean_scaled: mean.abs() * n as f64 / a_n,
        variance,
        var_gap: (variance - sigma2).abs(),
        tail,
        r_n,
    };
    match family {
        ArrayFamily::Lattice { steps } => {
            let total: f64 = steps.iter().map(|s| s.1).sum();
            if steps.is_empty() || (total - 1.0).abs() > 1e-12 || steps.iter().any(|s| !(s.1 >= 0.0)) {
                return Err(Error::InvalidParams("lattice step probabilities must sum to 1".into()));
            }
            let real: Vec<(f64, f64)> = steps.iter().map(|&(y, q)| (y as f64, q)).collect();
            let (mean, var, m3) = moments(&real);
            Ok(Prepared {
                steps: StepsAt::Lattice { steps: steps.clone(), shift: 0.0, scale: 1.0 },
                witness: witness(mean, var, m3, 0.0, 0),
            })
        }
        ArrayFamily::SpineConditioned { .. } => {
            let spine = spine.expect("spine prepared");
            let cap = spine_cap(n);
            let vlaw = spine.vlaw();
            match spine.joint_atoms() {
                Some(joint) => {
                    let tail: f64 = joint.iter().filter(|a| a.nu > cap).map(|a| a.prob).sum();
                    let kept: Vec<_> = joint.iter().filter(|a| a.nu <= cap).collect();
                    let mass: f64 = kept.iter().map(|a| a.prob).sum();
                    if kept.is_empty() || mass <= 0.0 {
                        return Err(Error::InvalidParams(format!("no spine atoms with nu <= {cap}")));
                    }
                    let v_atoms: Vec<(f64, f64)> = kept.iter().map(|a| (a.v, a.prob / mass)).collect();
                    let (mean, var, m3) = moments(&v_atoms);
                    let mut steps: Vec<(i64, f64)> = Vec::new();
                    for a in &kept {
                        let u = a.u.round();
                        if (a.u - u).abs() > 1e-12 {
                            return Err(Error::NotLattice(format!("spine step {} is not an integer", a.u)));
                        }
                        match steps.iter_mut().find(|s| s.0 == u as i64) {
                            Some(s) => s.1 += a.prob / mass,
                            None => steps.push((u as i64, a.prob / mass)),
                        }
                    }
                    steps.sort_by_key(|s| s.0);
                    Ok(Prepared {
                        steps: StepsAt::Lattice { steps, shift: vlaw.psi_tstar(), scale: -vlaw.t_star() },
                        witness: witness(mean, var, m3, tail, cap),
                    })
                }
                None => {
                    // product law: ν₀ independent of the step, so conditioning leaves it unchanged
                    let sb = spine.size_biased_pmf().expect("product spine");
                    let tail: f64 = sb.iter().filter(|a| a.0 > cap).map(|a| a.1).sum();
                    if tail >= 1.0 {
                        return Err(Error::InvalidParams(format!("no spine atoms with nu <= {cap}")));
                    }
                    let mean = spine.mean();
                    let var = spine.second_moment() - mean * mean;
                    Ok(Prepared {
                        steps: StepsAt::Sampled { spine: Box::new(spine.clone()), cap },
                        witness: witness(mean, var, spine.abs_third_moment(), tail, cap),
                    })
                }
            }
        }
    }
}

struct RowProbs {
    method: Method,
    prob: f64,
    log_prob: f64,
    stderr: Option<f64>,
    endpoint: Option<(f64, f64)>,
}

fn lattice_row(
    steps: &[(i64, f64)],
    shift: f64,
    scale: f64,
    spec: &CorridorSpec,
    n: usize,
    a_n: f64,
    endpoint_b: Option<f64>,
) -> Result<RowProbs> {
    // S_i = i·shift + scale·X_i with X the lattice walk; invert the corridor on X
    let window = |i: usize, lo: f64, hi: f64| -> (i64, i64) {
        let (x, y) = ((lo - i as f64 * shift) / scale, (hi - i as f64 * shift) / scale);
        let (x, y) = if scale > 0.0 { (x, y) } else { (y, x) };
        (lattice_ceil(x), lattice_floor(y))
    };
    let (lower, upper): (Vec<i64>, Vec<i64>) = (1..=n)
        .map(|i| {
            let t = i as f64 / n as f64;
            window(i, a_n * spec.g1(t), a_n * spec.g2(t))
        })
        .unzip();
    let plain = exact_corridor_walk(steps, &lower, &upper, None)?;
    let endpoint = match endpoint_b {
        None => None,
        Some(b) => {
            // S_n ≥ a_n (g₂(1) − b) on the lattice walk
            let x = (a_n * (spec.g2(1.0) - b) - n as f64 * shift) / scale;
            let (lo, hi) = if scale > 0.0 { (lattice_ceil(x), i64::MAX / 4) } else { (i64::MIN / 4, lattice_floor(x)) };
            let r = exact_corridor_walk(steps, &lower, &upper, Some((lo, hi)))?;
            Some((r.prob, r.log_prob))
        }
    };
    Ok(RowProbs { method: Method::Exact, prob: plain.prob, log_prob: plain.log_prob, stderr: None, endpoint })
}

#[allow(clippy::too_many_arguments)]
fn sampled_row(
    spine: &SpineLaw,
    cap: u32,
    spec: &CorridorSpec,
    n: usize,
    a_n: f64,
    endpoint_b: Option<f64>,
    replicates: usize,
    seed: u64,
) -> RowProbs {
    let lower: Vec<f64> = (1..=n).map(|i| a_n * spec.g1(i as f64 / n as f64)).collect();
    let upper: Vec<f64> = (1..=n).map(|i| a_n * spec.g2(i as f64 / n as f64)).collect();
    let end_level = endpoint_b.map(|b| a_n * (spec.g2(1.0) - b));
    let (hits, end_hits) = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, 5 + ((n as u64) << 8), r);
            let mut s = 0.0;
            for i in 0..n {
                let dv = loop {
                    let (dv, nu) = spine.sample_step(&mut rng);
                    if nu <= cap {
                        break dv;
                    }
                };
                s += dv;
                if s < lower[i] || s > upper[i] {
                    return (0u64, 0u64);
                }
            }
            (1, end_level.is_some_and(|e| s >= e) as u64)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let total = replicates as f64;
    let prob = hits as f64 / total;
    RowProbs {
        method: Method::MonteCarlo,
        prob,
        log_prob: prob.ln(),
        stderr: Some((prob * (1.0 - prob) / total).sqrt()),
        endpoint: end_level.map(|_| {
            let p = end_hits as f64 / total;
            (p, p.ln())
        }),
    }
}

/// Computes `(a_n² / n) log P{E_n}` for every `n` in `n_list` and compares it
/// with [`corridor_constant`].
pub fn triangular_experiment(
    arr: &ArraySpec,
    spec: &CorridorSpec,
    n_list: &[usize],
    endpoint_b: Option<f64>,
) -> Result<TriangularReport> {
    if n_list.is_empty() || n_list.windows(2).any(|w| w[0] >= w[1]) || n_list[0] == 0 {
        return Err(Error::InvalidParams("n_list must be positive and strictly increasing".into()));
    }
    if !(arr.a_exponent > 0.0 && arr.a_exponent < 0.5) {
        return Err(Error::InvalidParams(format!("a_exponent = {} must lie in (0, 1/2)", arr.a_exponent)));
    }
    if let Some(b) = endpoint_b {
        if !(b > 0.0 && b.is_finite()) {
            return Err(Error::InvalidParams(format!("endpoint b = {b} must be positive")));
        }
    }
    let spine = match &arr.family {
        ArrayFamily::SpineConditioned { law } => {
            let law = Law::new(law.clone())?;
            let profile = solve_tstar(&law)?;
            Some(make_spine(&make_vlaw(&law, &profile)?))
        }
        ArrayFamily::Lattice { .. } => None,
    };
    if let Some(sp) = &spine {
        if sp.joint_atoms().is_none() && arr.mc_replicates < MIN_MC_REPLICATES {
            return Err(Error::InvalidParams(format!(
                "Monte Carlo corridor estimates need at least {MIN_MC_REPLICATES} replicates"
            )));
        }
    }
    let target = corridor_constant(spec)?;
    let sigma2 = spec.sigma() * spec.sigma();

    let rows: Vec<Result<TriangularRow>> = n_list
        .par_iter()
        .map(|&n| {
            let a_n = arr.a_n(n);
            let prep = prepare(&arr.family, spine.as_ref(), sigma2, n, a_n)?;
            let probs = match &prep.steps {
                StepsAt::Lattice { steps, shift, scale } => lattice_row(steps, *shift, *scale, spec, n, a_n, endpoint_b)?,
                StepsAt::Sampled { spine, cap } => {
                    sampled_row(spine, *cap, spec, n, a_n, endpoint_b, arr.mc_replicates, arr.seed)
                }
            };
            let factor = a_n * a_n / n as f64;
            let scaled = factor * probs.log_prob;
            Ok(TriangularRow {
                n,
                a_n,
                method: probs.method,
                prob: probs.prob,
                log_prob: probs.log_prob,
                scaled_log_prob: scaled,
                target,
                gap: ((scaled - target) / target).abs(),
                stderr: probs.stderr,
                endpoint_prob: probs.endpoint.map(|e| e.0),
                endpoint_scaled_log_prob: probs.endpoint.map(|e| factor * e.1),
                witness: prep.witness,
            })
        })
        .collect();
    let rows: Vec<TriangularRow> = rows.into_iter().collect::<Result<_>>()?;

    let mut warnings = Vec::new();
    for r in &rows {
        let w = &r.witness;
        if !w.abs_moment3.is_finite() {
            warnings.push(format!("n = {}: third absolute moment is infinite", r.n));
        }
        if w.mean_scaled > 0.05 {
            warnings.push(format!("n = {}: |mean| n / a_n = {:.3e} is not small", r.n, w.mean_scaled));
        }
        if w.var_gap > 0.05 * sigma2 {
            warnings.push(format!("n = {}: step variance {:.6} differs from sigma^2 = {:.6}", r.n, w.variance, sigma2));
        }
        if r.prob == 0.0 {
            warnings.push(format!("n = {}: corridor probability is zero", r.n));
        }
    }
    Ok(TriangularReport { target, rows, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::StepLaw;

    #[test]
    fn closed_form_constants() {
        let c = corridor_constant(&CorridorSpec::constant(-1.0, 1.0, 1.0).unwrap()).unwrap();
        assert!((c + PI * PI / 8.0).abs() < 1e-10);
        let lin = CorridorSpec::new(&CorridorShape::Linear { lower: [-1.0, -2.0], upper: [1.0, 2.0] }, 1.0).unwrap();
        assert!((corridor_constant(&lin).unwrap() + PI * PI / 16.0).abs() < 1e-10);
        let doubled = corridor_constant(&lin.with_sigma(2.0).unwrap()).unwrap();
        assert!((doubled - 4.0 * corridor_constant(&lin).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn sampled_shape_interpolates() {
        let s = CorridorSpec::new(&CorridorShape::Samples { lower: vec![-1.0, -3.0], upper: vec![1.0, 3.0] }, 1.0).unwrap();
        assert!((s.g1(0.5) + 2.0).abs() < 1e-12);
        assert!((s.g2(0.25) - 1.5).abs() < 1e-12);
        assert_eq!(s.default_endpoint_b(), 1.5);
    }

    #[test]
    fn invalid_corridors() {
        assert!(CorridorSpec::constant(0.5, 1.0, 1.0).is_err());
        assert!(CorridorSpec::constant(-1.0, 1.0, 0.0).is_err());
        let pinch = CorridorShape::Linear { lower: [-1.0, 0.0], upper: [1.0, 0.0] };
        assert!(CorridorSpec::new(&pinch, 1.0).is_err());
    }

    #[test]
    fn ito_mckean_basic() {
        assert_eq!(ito_mckean_f(-1.0, 1.0, 0.2, 0.2).unwrap(), 0.0);
        assert!(ito_mckean_f(1.0, 2.0, 1.0, 2.0).is_err());
        assert!(ito_mckean_f(-1.0, 1.0, 0.5, 0.2).is_err());
        let f = ito_mckean_f(-1.0, 1.0, -1.0, 1.0).unwrap();
        assert!((f - 0.3708).abs() < 5e-5, "{f}");
        // a very wide corridor holds almost all mass
        let wide = ito_mckean_f(-8.0, 8.0, -8.0, 8.0).unwrap();
        assert!((wide - 1.0).abs() < 1e-10);
        // the endpoint window alone: P{0 ≤ W_1 ≤ 1} with far barriers
        let half = ito_mckean_f(-10.0, 10.0, 0.0, 1.0).unwrap();
        assert!((half - 0.341_344_746_068_542_9).abs() < 1e-12);
    }

    #[test]
    fn ito_mckean_additive_and_monotone() {
        let (a, b) = (-0.7, 1.3);
        let whole = ito_mckean_f(a, b, -0.5, 1.1).unwrap();
        for m in [-0.4, 0.0, 0.3, 1.0] {
            let split = ito_mckean_f(a, b, -0.5, m).unwrap() + ito_mckean_f(a, b, m, 1.1).unwrap();
            assert!((split - whole).abs() < 1e-12);
        }
        let mut prev = 0.0;
        for d in [-0.6, -0.2, 0.4, 0.9, 1.3] {
            let v = ito_mckean_f(a, b, a, d).unwrap();
            assert!(v >= prev - 1e-15 && v <= 1.0 + 1e-15);
            prev = v;
        }
        let mut prev = 0.0;
        for w in [0.5, 0.8, 1.0, 1.5, 2.5] {
            let v = ito_mckean_f(-w, w, -w, w).unwrap();
            assert!(v >= prev);
            prev = v;
        }
    }

    /// Brownian paths on a grid with the bridge crossing correction for each
    /// step, so the estimate is not biased upward by the discretisation.
    fn corridor_mc(a: f64, b: f64, paths: u64, steps: usize, seed: u64) -> (f64, f64) {
        use rand_distr::{Distribution, StandardNormal};
        let dt = 1.0 / steps as f64;
        let sd = dt.sqrt();
        let weights: Vec<f64> = (0..paths)
            .into_par_iter()
            .map(|r| {
                let mut rng = stream_rng(seed, 0, r);
                let (mut x, mut w) = (0.0f64, 1.0f64);
                for _ in 0..steps {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    let y = x + sd * z;
                    if y <= a || y >= b {
                        return 0.0;
                    }
                    let up = (-2.0 * (b - x) * (b - y) / dt).exp();
                    let down = (-2.0 * (x - a) * (y - a) / dt).exp();
                    w *= (1.0 - up) * (1.0 - down);
                    x = y;
                }
                w
            })
            .collect();
        let est = crate::stats::MeanEstimate::from_samples(&weights);
        (est.mean, est.stderr)
    }

    #[test]
    fn ito_mckean_matches_brownian_mc() {
        let f = ito_mckean_f(-1.0, 1.0, -1.0, 1.0).unwrap();
        let (m, se) = corridor_mc(-1.0, 1.0, 100_000, 200, 17);
        assert!((m - f).abs() < 3.0 * se, "{m} ± {se} vs {f}");
    }

    #[test]
    fn lazy_walk_small_n_matches_enumeration() {
        let arr = ArraySpec::new(ArrayFamily::lazy_walk());
        let spec = CorridorSpec::constant(-1.0, 1.0, (2.0f64 / 3.0).sqrt()).unwrap();
        let n = 12usize;
        let rep = triangular_experiment(&arr, &spec, &[n], Some(0.5)).unwrap();
        let a = arr.a_n(n);
        let (lo, hi) = (lattice_ceil(-a), lattice_floor(a));
        let end = lattice_ceil(a * 0.5);
        let (mut hits, mut end_hits) = (0u64, 0u64);
        for code in 0..3u64.pow(n as u32) {
            let (mut x, mut s, mut ok) = (code, 0i64, true);
            for _ in 0..n {
                s += (x % 3) as i64 - 1;
                x /= 3;
                ok &= s >= lo && s <= hi;
            }
            if ok {
                hits += 1;
                end_hits += (s >= end) as u64;
            }
        }
        let denom = 3f64.powi(n as i32);
        let row = &rep.rows[0];
        assert!((row.prob - hits as f64 / denom).abs() < 1e-15);
        assert!((row.endpoint_prob.unwrap() - end_hits as f64 / denom).abs() < 1e-15);
        assert_eq!(row.method, Method::Exact);
        assert!((row.witness.variance - 2.0 / 3.0).abs() < 1e-15);
        assert!(rep.warnings.is_empty(), "{:?}", rep.warnings);
    }

    #[test]
    fn lazy_walk_gap_shrinks() {
        let arr = ArraySpec::new(ArrayFamily::lazy_walk());
        let spec = CorridorSpec::constant(-1.0, 1.0, (2.0f64 / 3.0).sqrt()).unwrap();
        let rep = triangular_experiment(&arr, &spec, &[1_000, 10_000], None).unwrap();
        assert!(rep.rows[1].gap < rep.rows[0].gap);
        assert!((rep.target + PI * PI / 12.0).abs() < 1e-10);
    }

    #[test]
    fn binary_spine_conditioning_is_vacuous() {
        let law = OffspringLaw::BinaryBernoulli { p: 0.3 };
        let l = Law::new(law.clone()).unwrap();
        let prof = solve_tstar(&l).unwrap();
        let spec = CorridorSpec::constant(-1.0, 1.0, prof.sigma()).unwrap();
        let arr = ArraySpec::new(ArrayFamily::SpineConditioned { law });
        let rep = triangular_experiment(&arr, &spec, &[50, 400], Some(0.5)).unwrap();
        for row in &rep.rows {
            assert_eq!(row.witness.tail, 0.0);
            assert!(row.witness.mean.abs() < 1e-12);
            assert!(row.witness.var_gap < 1e-10);
            assert!(row.prob > 0.0 && row.endpoint_prob.unwrap() <= row.prob);
        }
        // same walk written by hand on the U-lattice
        let sp = make_spine(&make_vlaw(&l, &prof).unwrap());
        let steps: Vec<(i64, f64)> = sp.u_step_atoms().unwrap().iter().map(|&(u, q)| (u as i64, q)).collect();
        let n = 400;
        let a = arr.a_n(n);
        let (lower, upper): (Vec<i64>, Vec<i64>) = (1..=n)
            .map(|i| {
                let c = i as f64 * prof.psi_tstar;
                (lattice_ceil((c - a) / prof.t_star), lattice_floor((c + a) / prof.t_star))
            })
            .unzip();
        let direct = exact_corridor_walk(&steps, &lower, &upper, None).unwrap();
        assert!((direct.log_prob - rep.rows[1].log_prob).abs() < 1e-12);
    }

    #[test]
    fn explicit_spine_reports_tail() {
        // outcome with many children gets cut off at small n
        let law = OffspringLaw::ExplicitFinite {
            outcomes: vec![(vec![0.0, 1.0], 0.7), (vec![0.0; 30], 0.3)],
        };
        let l = Law::new(law.clone()).unwrap();
        let prof = solve_tstar(&l).unwrap();
        let spec = CorridorSpec::constant(-1.0, 1.0, prof.sigma()).unwrap();
        let arr = ArraySpec::new(ArrayFamily::SpineConditioned { law });
        let rep = triangular_experiment(&arr, &spec, &[8, 2_000], None).unwrap();
        assert_eq!(rep.rows[0].witness.r_n, spine_cap(8));
        assert!(rep.rows[0].witness.tail > 0.0);
        assert_eq!(rep.rows[1].witness.tail, 0.0);
        assert!(!rep.warnings.is_empty());
    }

    #[test]
    fn gaussian_family_needs_many_replicates() {
        let law = OffspringLaw::ProductLaw {
            offspring_pmf: vec![(2, 1.0)],
            step: StepLaw::Gaussian { mean: 0.0, stddev: 1.0 },
        };
        let spec = CorridorSpec::constant(-1.0, 1.0, 1.0).unwrap();
        let mut arr = ArraySpec::new(ArrayFamily::SpineConditioned { law });
        arr.mc_replicates = 1_000;
        assert!(triangular_experiment(&arr, &spec, &[8], None).is_err());
    }

    #[test]
    fn bad_n_list_rejected() {
        let arr = ArraySpec::new(ArrayFamily::lazy_walk());
        let spec = CorridorSpec::constant(-1.0, 1.0, 1.0).unwrap();
        assert!(triangular_experiment(&arr, &spec, &[], None).is_err());
        assert!(triangular_experiment(&arr, &spec, &[10, 10], None).is_err());
        assert!(triangular_experiment(&arr, &spec, &[10], Some(-1.0)).is_err());
    }

    #[test]
    fn spine_cap_values() {
        assert_eq!(spine_cap(1), 2);
        assert_eq!(spine_cap(16), 7);
        assert_eq!(spine_cap(10_000), 22_026);
    }
}
