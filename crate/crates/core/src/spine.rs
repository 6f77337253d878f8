//! Size-biased spine and the many-to-one identities.
//!
//! The spine is a single random walk `(S_i, ν_{i−1})` whose step law is the
//! `e^{−v}`-tilt of the V-intensity, paired with the child count of the
//! parent. Expectations of additive functionals over generation `n`,
//! `E Σ_{|x|=n} e^{−V(x)} F(path)`, equal `E F(S_1..S_n, ν_0..ν_{n−1})`.
//! [`many_to_one_check`] estimates both sides independently.

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Law, OffspringLaw, StepLaw};
use crate::rng::{stream_rng, StreamRng};
use crate::stats::MeanEstimate;
use crate::transform::VLaw;

/// Joint atom of the spine step: U-displacement `u`, V-increment `v`, parent
/// child count `nu`, probability `prob`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpineAtom {
    pub u: f64,
    pub v: f64,
    pub nu: u32,
    pub prob: f64,
}

/// One point of a spine path: position `s = S_i` and `nu = ν_{i−1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinePoint {
    pub s: f64,
    pub nu: u32,
}

#[derive(Debug, Clone)]
enum TiltedStep {
    Atoms { v: Vec<f64>, index: WeightedIndex<f64> },
    Gaussian(Normal<f64>),
}

#[derive(Debug, Clone)]
enum SpineSampler {
    Product {
        step: TiltedStep,
        nu_values: Vec<u32>,
        nu_index: WeightedIndex<f64>,
    },
    /// Pick an outcome with weight `prob · Σ_child e^{−v}`, then a child `∝ e^{−v}`.
    Outcomes {
        outcome_index: WeightedIndex<f64>,
        children: Vec<(Vec<f64>, WeightedIndex<f64>)>,
    },
}

/// Step law of the spine walk.
#[derive(Debug, Clone)]
pub struct SpineLaw {
    vlaw: VLaw,
    sampler: SpineSampler,
    joint: Option<Vec<SpineAtom>>,
    size_biased: Option<Vec<(u32, f64)>>,
    gaussian: Option<(f64, f64)>,
}

fn weighted(w: &[f64]) -> WeightedIndex<f64> {
    WeightedIndex::new(w.iter().copied()).expect("positive finite weights")
}

fn size_bias(pmf: &[(u32, f64)], mean: f64) -> Vec<(u32, f64)> {
    pmf.iter()
        .filter(|&&(k, p)| k > 0 && p > 0.0)
        .map(|&(k, p)| (k, k as f64 * p / mean))
        .collect()
}

/// Builds the tilted spine law in closed form.
pub fn make_spine(vlaw: &VLaw) -> SpineLaw {
    let law = vlaw.law();
    let mean_children = law.mean_children();
    let product_step = |atoms: &[(f64, f64)]| -> Vec<(f64, f64, f64)> {
        // (u, v, tilted prob) with prob = E[Z] q e^{−v}
        let raw: Vec<(f64, f64, f64)> = atoms
            .iter()
            .filter(|a| a.1 > 0.0)
            .map(|&(u, q)| {
                let v = vlaw.v_of(u);
                (u, v, mean_children * q * (-v).exp())
            })
            .collect();
        let total: f64 = raw.iter().map(|a| a.2).sum();
        raw.into_iter().map(|(u, v, w)| (u, v, w / total)).collect()
    };

    match law.spec() {
        OffspringLaw::BinaryBernoulli { p } => {
            let step = product_step(&[(0.0, 1.0 - p), (1.0, *p)]);
            product_spine(vlaw, step, vec![(2, 1.0)])
        }
        OffspringLaw::ProductLaw { offspring_pmf, step: StepLaw::DiscreteFinite { atoms } } => {
            product_spine(vlaw, product_step(atoms), size_bias(offspring_pmf, mean_children))
        }
        OffspringLaw::ProductLaw { offspring_pmf, step: StepLaw::Gaussian { mean, stddev } } => {
            let (t, psi) = (vlaw.t_star(), vlaw.psi_tstar());
            // tilted U-step is N(μ + s² t*, s²); S₁ = −t* Y + ψ(t*)
            let tilted_mean = mean + stddev * stddev * t;
            let (m, s) = (-t * tilted_mean + psi, t * stddev);
            let sb = size_bias(offspring_pmf, mean_children);
            SpineLaw {
                vlaw: vlaw.clone(),
                sampler: SpineSampler::Product {
                    step: TiltedStep::Gaussian(Normal::new(m, s).expect("positive stddev")),
                    nu_values: sb.iter().map(|a| a.0).collect(),
                    nu_index: weighted(&sb.iter().map(|a| a.1).collect::<Vec<_>>()),
                },
                joint: None,
                size_biased: Some(sb),
                gaussian: Some((m, s)),
            }
        }
        OffspringLaw::ExplicitFinite { outcomes } => {
            let mut joint = Vec::new();
            let mut outcome_w = Vec::new();
            let mut children = Vec::new();
            for (ds, p) in outcomes.iter().filter(|o| o.1 > 0.0 && !o.0.is_empty()) {
                let vs: Vec<f64> = ds.iter().map(|&u| vlaw.v_of(u)).collect();
                let cw: Vec<f64> = vs.iter().map(|v| (-v).exp()).collect();
                outcome_w.push(p * cw.iter().sum::<f64>());
                for (&u, (&v, &w)) in ds.iter().zip(vs.iter().zip(&cw)) {
                    joint.push(SpineAtom { u, v, nu: ds.len() as u32, prob: p * w });
                }
                children.push((vs, weighted(&cw)));
            }
            let total: f64 = joint.iter().map(|a| a.prob).sum();
            for a in &mut joint {
                a.prob /= total;
            }
            SpineLaw {
                vlaw: vlaw.clone(),
                sampler: SpineSampler::Outcomes { outcome_index: weighted(&outcome_w), children },
                joint: Some(joint),
                size_biased: None,
                gaussian: None,
            }
        }
    }
}

fn product_spine(vlaw: &VLaw, step: Vec<(f64, f64, f64)>, sb: Vec<(u32, f64)>) -> SpineLaw {
    let joint = sb
        .iter()
        .flat_map(|&(k, pk)| step.iter().map(move |&(u, v, q)| SpineAtom { u, v, nu: k, prob: pk * q }))
        .collect();
    SpineLaw {
        vlaw: vlaw.clone(),
        sampler: SpineSampler::Product {
            step: TiltedStep::Atoms {
                v: step.iter().map(|a| a.1).collect(),
                index: weighted(&step.iter().map(|a| a.2).collect::<Vec<_>>()),
            },
            nu_values: sb.iter().map(|a| a.0).collect(),
            nu_index: weighted(&sb.iter().map(|a| a.1).collect::<Vec<_>>()),
        },
        joint: Some(joint),
        size_biased: Some(sb),
        gaussian: None,
    }
}

impl SpineLaw {
    pub fn vlaw(&self) -> &VLaw {
        &self.vlaw
    }

    /// Joint `(u, v, ν)` atoms; `None` for Gaussian steps.
    pub fn joint_atoms(&self) -> Option<&[SpineAtom]> {
        self.joint.as_deref()
    }

    /// Size-biased child-count pmf `k P(Z=k) / E[Z]` for product laws.
    pub fn size_biased_pmf(&self) -> Option<&[(u32, f64)]> {
        self.size_biased.as_deref()
    }

    /// Tilted U-step atoms `(u, prob)`, marginalised over ν.
    pub fn u_step_atoms(&self) -> Option<Vec<(f64, f64)>> {
        let joint = self.joint.as_ref()?;
        let mut out: Vec<(f64, f64)> = Vec::new();
        for a in joint {
            match out.iter_mut().find(|o| o.0 == a.u) {
                Some(o) => o.1 += a.prob,
                None => out.push((a.u, a.prob)),
            }
        }
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
        Some(out)
    }

    /// `E[S₁]`.
    pub fn mean(&self) -> f64 {
        match (&self.joint, self.gaussian) {
            (Some(j), _) => j.iter().map(|a| a.prob * a.v).sum(),
            (None, Some((m, _))) => m,
            _ => unreachable!(),
        }
    }

    /// `E[S₁²]`.
    pub fn second_moment(&self) -> f64 {
        match (&self.joint, self.gaussian) {
            (Some(j), _) => j.iter().map(|a| a.prob * a.v * a.v).sum(),
            (None, Some((m, s))) => m * m + s * s,
            _ => unreachable!(),
        }
    }

    /// `E|S₁|³`; for Gaussian steps the centred value `2 √(2/π) s³`.
    pub fn abs_third_moment(&self) -> f64 {
        match (&self.joint, self.gaussian) {
            (Some(j), _) => j.iter().map(|a| a.prob * a.v.abs().powi(3)).sum(),
            (None, Some((_, s))) => 2.0 * (2.0 / std::f64::consts::PI).sqrt() * s.powi(3),
            _ => unreachable!(),
        }
    }

    /// `E[e^{u S₁}]`.
    pub fn exp_moment(&self, u: f64) -> f64 {
        match (&self.joint, self.gaussian) {
            (Some(j), _) => j.iter().map(|a| a.prob * (u * a.v).exp()).sum(),
            (None, Some((m, s))) => (u * m + 0.5 * u * u * s * s).exp(),
            _ => unreachable!(),
        }
    }

    /// Draws one `(S₁, ν₀)` pair.
    pub fn sample_step<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, u32) {
        match &self.sampler {
            SpineSampler::Product { step, nu_values, nu_index } => {
                let v = match step {
                    TiltedStep::Atoms { v, index } => v[index.sample(rng)],
                    TiltedStep::Gaussian(n) => n.sample(rng),
                };
                (v, nu_values[nu_index.sample(rng)])
            }
            SpineSampler::Outcomes { outcome_index, children } => {
                let (vs, idx) = &children[outcome_index.sample(rng)];
                (vs[idx.sample(rng)], vs.len() as u32)
            }
        }
    }

    /// Samples `(S_i, ν_{i−1})` for `i = 1..=n`.
    pub fn sample_spine_path<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<SpinePoint> {
        let mut s = 0.0;
        (0..n)
            .map(|_| {
                let (dv, nu) = self.sample_step(rng);
                s += dv;
                SpinePoint { s, nu }
            })
            .collect()
    }
}

/// `intercept + slope · i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub intercept: f64,
    pub slope: f64,
}

impl Line {
    pub fn at(&self, i: usize) -> f64 {
        self.intercept + self.slope * i as f64
    }
}

/// Fixed library of bounded path functionals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Functional {
    One,
    /// `1{lower(i) ≤ S_i ≤ upper(i) for all i}`; a missing side is unconstrained.
    Corridor { lower: Option<Line>, upper: Option<Line> },
    /// `exp(clamp(weight · mean_i S_i, −bound, bound))`.
    ExpLinear { weight: f64, bound: f64 },
    /// `inner · 1{ν_{i−1} ≤ r for all i}`.
    ChildCap { r: u32, inner: Box<Functional> },
}

impl Functional {
    pub fn eval(&self, path: &[SpinePoint]) -> f64 {
        match self {
            Functional::One => 1.0,
            Functional::Corridor { lower, upper } => {
                let ok = path.iter().enumerate().all(|(k, p)| {
                    let i = k + 1;
                    lower.is_none_or(|l| p.s >= l.at(i)) && upper.is_none_or(|u| p.s <= u.at(i))
                });
                if ok {
                    1.0
                } else {
                    0.0
                }
            }
            Functional::ExpLinear { weight, bound } => {
                let mean = path.iter().map(|p| p.s).sum::<f64>() / path.len().max(1) as f64;
                (weight * mean).clamp(-bound, *bound).exp()
            }
            Functional::ChildCap { r, inner } => {
                if path.iter().all(|p| p.nu <= *r) {
                    inner.eval(path)
                } else {
                    0.0
                }
            }
        }
    }

    /// Upper corridor `S_i ≤ slope · i` used in the examples.
    pub fn below_line(slope: f64) -> Self {
        Functional::Corridor { lower: None, upper: Some(Line { intercept: 0.0, slope }) }
    }
}

/// Result of a two-sided many-to-one comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub n: usize,
    /// Direct tree estimate of `E Σ_{|x|=n} e^{−V(x)} F`.
    pub lhs: MeanEstimate,
    /// Spine estimate of `E F(S)`.
    pub rhs: MeanEstimate,
    /// Exact value by enumeration when the law is finite and `n` is small.
    pub exact: Option<f64>,
    /// 3-standard-error intervals overlap.
    pub overlap: bool,
    /// Both sides have zero sample variance.
    pub vacuous: bool,
    pub exact_in_lhs: Option<bool>,
    pub exact_in_rhs: Option<bool>,
}

impl CheckReport {
    pub fn pass(&self) -> bool {
        self.overlap && self.exact_in_lhs.unwrap_or(true) && self.exact_in_rhs.unwrap_or(true)
    }
}

/// Largest expected generation size allowed for direct tree simulation.
pub const MAX_DIRECT_TREE: f64 = 4096.0 * 1.0001;

/// Largest number of enumerated paths for [`exact_lhs`].
pub const MAX_ENUMERATION: f64 = 5e7;

fn tree_sum(vlaw: &VLaw, n: usize, f: &Functional, rng: &mut StreamRng) -> f64 {
    fn visit(
        vlaw: &VLaw,
        n: usize,
        f: &Functional,
        rng: &mut StreamRng,
        v: f64,
        path: &mut Vec<SpinePoint>,
        acc: &mut f64,
    ) {
        let mut incs = Vec::new();
        vlaw.sample_increments(rng, &mut incs);
        let nu = incs.len() as u32;
        for dv in incs {
            path.push(SpinePoint { s: v + dv, nu });
            if path.len() == n {
                *acc += (-(v + dv)).exp() * f.eval(path);
            } else {
                visit(vlaw, n, f, rng, v + dv, path, acc);
            }
            path.pop();
        }
    }
    let mut acc = 0.0;
    let mut path = Vec::with_capacity(n);
    visit(vlaw, n, f, rng, 0.0, &mut path, &mut acc);
    acc
}

/// Exact `E Σ_{|x|=n} e^{−V(x)} F` by enumerating sequences of first-moment
/// atoms of the untilted law. Independent of the spine construction.
pub fn exact_lhs(law: &Law, vlaw: &VLaw, n: usize, f: &Functional) -> Result<f64> {
    let atoms = law.path_atoms().ok_or_else(|| Error::InvalidParams("exact enumeration needs a finite law".into()))?;
    if (atoms.len() as f64).powi(n as i32) > MAX_ENUMERATION {
        return Err(Error::InvalidParams(format!("{}^{n} paths exceed the enumeration budget", atoms.len())));
    }
    fn rec(
        atoms: &[crate::models::PathAtom],
        vlaw: &VLaw,
        n: usize,
        f: &Functional,
        v: f64,
        weight: f64,
        path: &mut Vec<SpinePoint>,
    ) -> f64 {
        if path.len() == n {
            return weight * (-v).exp() * f.eval(path);
        }
        let mut total = 0.0;
        for a in atoms {
            let nv = v + vlaw.v_of(a.u);
            path.push(SpinePoint { s: nv, nu: a.nu });
            total += rec(atoms, vlaw, n, f, nv, weight * a.mass, path);
            path.pop();
        }
        total
    }
    Ok(rec(&atoms, vlaw, n, f, 0.0, 1.0, &mut Vec::with_capacity(n)))
}

/// Monte Carlo comparison of both sides of the many-to-one identity.
///
/// The tree side uses streams `(seed, 1, r)` and the spine side `(seed, 2, r)`.
pub fn many_to_one_check(
    spine: &SpineLaw,
    n: usize,
    f: &Functional,
    replicates: usize,
    seed: u64,
) -> Result<CheckReport> {
    let vlaw = spine.vlaw();
    let law = vlaw.law();
    if n == 0 || replicates < 2 {
        return Err(Error::InvalidParams("need n >= 1 and at least two replicates".into()));
    }
    if law.mean_children().powi(n as i32) > MAX_DIRECT_TREE {
        return Err(Error::InvalidParams(format!(
            "expected generation size {:.0} too large for direct tree simulation",
            law.mean_children().powi(n as i32)
        )));
    }

    let lhs: Vec<f64> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| tree_sum(vlaw, n, f, &mut stream_rng(seed, 1, r)))
        .collect();
    let rhs: Vec<f64> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, 2, r);
            f.eval(&spine.sample_spine_path(n, &mut rng))
        })
        .collect();
    let lhs = MeanEstimate::from_samples(&lhs);
    let rhs = MeanEstimate::from_samples(&rhs);

    let (l0, l1) = lhs.interval(3.0);
    let (r0, r1) = rhs.interval(3.0);
    let overlap = l0 <= r1 && r0 <= l1;
    let vacuous = lhs.stderr == 0.0 && rhs.stderr == 0.0;
    let exact = if law.path_atoms().is_some() { exact_lhs(law, vlaw, n, f).ok() } else { None };
    Ok(CheckReport {
        n,
        lhs,
        rhs,
        exact,
        overlap,
        vacuous,
        exact_in_lhs: exact.map(|e| lhs.contains(e, 3.0)),
        exact_in_rhs: exact.map(|e| rhs.contains(e, 3.0)),
    })
}
