//! Offspring point processes: the model input of every experiment.
//!
//! A law describes how one particle reproduces: how many children it has and
//! where they land relative to the parent (the U-displacements). Laws are
//! validated once, renormalised, and then shared immutably.

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on probability sums before renormalisation.
pub const PROB_SUM_TOL: f64 = 1e-12;

/// Distribution of a single child displacement for product laws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StepLaw {
    /// Finitely many `(value, prob)` atoms.
    DiscreteFinite { atoms: Vec<(f64, f64)> },
    Gaussian { mean: f64, stddev: f64 },
}

/// Offspring point process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum OffspringLaw {
    /// Two children with i.i.d. Bernoulli(p) displacements.
    BinaryBernoulli { p: f64 },
    /// Child count from `offspring_pmf`, displacements i.i.d. from `step`.
    ProductLaw {
        offspring_pmf: Vec<(u32, f64)>,
        step: StepLaw,
    },
    /// Whole point process drawn atomically from `(displacements, prob)` outcomes.
    ExplicitFinite { outcomes: Vec<(Vec<f64>, f64)> },
}

/// Children of one particle, as U-increments relative to the parent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Realization {
    pub displacements: Vec<f64>,
}

/// Mean intensity measure `E Σ_{|x|=1} δ_{U(x)}` of the point process.
#[derive(Debug, Clone, PartialEq)]
pub enum Intensity {
    /// Merged `(displacement, mass)` atoms, sorted by displacement; total mass is `E[Z]`.
    Atoms(Vec<(f64, f64)>),
    /// `E[Z]` times a normal law.
    Gaussian {
        mean_children: f64,
        mean: f64,
        stddev: f64,
    },
}

/// One atom of the joint first-moment measure
/// `E Σ_{|x|=1} δ_{(U(x), Z_1)}`: a child at displacement `u` whose parent has
/// `nu` children, carrying expected mass `mass`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathAtom {
    pub u: f64,
    pub nu: u32,
    pub mass: f64,
}

/// Outcome of [`validate`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    /// `E[Z]`.
    pub mean_children: f64,
    /// `E[Z^{1+δ}]` with δ = 1.
    pub second_moment_children: f64,
    pub delta: f64,
    pub delta_plus: f64,
    pub delta_minus: f64,
    /// `E Σ e^{δ₊ U}`.
    pub exp_moment_plus: f64,
    /// `E Σ e^{-δ₋ U}`.
    pub exp_moment_minus: f64,
    /// Every displacement is an integer.
    pub integer_support: bool,
}

/// Checks the supercriticality and moment assumptions without building a [`Law`].
pub fn validate(law: &OffspringLaw) -> Result<ValidationReport> {
    Law::new(law.clone()).map(|l| l.report)
}

#[derive(Debug, Clone)]
enum Sampler {
    Binary {
        p: f64,
    },
    Product {
        counts: Vec<u32>,
        count_index: WeightedIndex<f64>,
        step: StepSampler,
    },
    Explicit {
        outcomes: Vec<Vec<f64>>,
        index: WeightedIndex<f64>,
    },
}

#[derive(Debug, Clone)]
enum StepSampler {
    Discrete {
        values: Vec<f64>,
        index: WeightedIndex<f64>,
    },
    Gaussian(Normal<f64>),
}

impl StepSampler {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            StepSampler::Discrete { values, index } => values[index.sample(rng)],
            StepSampler::Gaussian(normal) => normal.sample(rng),
        }
    }
}

/// A validated, renormalised offspring law ready for sampling and analysis.
#[derive(Debug, Clone)]
pub struct Law {
    spec: OffspringLaw,
    report: ValidationReport,
    intensity: Intensity,
    sampler: Sampler,
}

fn check_probs(what: &str, probs: impl Iterator<Item = f64>) -> Result<f64> {
    let mut sum = 0.0;
    for p in probs {
        if !p.is_finite() || p < 0.0 {
            return Err(Error::InvalidLaw(format!("{what}: probability {p} is not in [0, 1]")));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > PROB_SUM_TOL {
        return Err(Error::InvalidLaw(format!(
            "{what}: probabilities sum to {sum}, not 1 within {PROB_SUM_TOL:e}"
        )));
    }
    Ok(sum)
}

fn merge_atoms(mut atoms: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    atoms.retain(|&(_, w)| w > 0.0);
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
    for (u, w) in atoms {
        match out.last_mut() {
            Some(last) if last.0 == u => last.1 += w,
            _ => out.push((u, w)),
        }
    }
    out
}

fn is_integer(x: f64) -> bool {
    x.is_finite() && (x - x.round()).abs() < 1e-12
}

fn weighted(weights: &[f64]) -> Result<WeightedIndex<f64>> {
    WeightedIndex::new(weights.iter().copied()).map_err(|e| Error::InvalidLaw(e.to_string()))
}

impl Law {
    /// Validates `spec`, renormalising probabilities that sum to 1 within
    /// [`PROB_SUM_TOL`].
    pub fn new(spec: OffspringLaw) -> Result<Self> {
        let spec = normalise(spec)?;
        let (intensity, second_moment, integer_support) = match &spec {
            OffspringLaw::BinaryBernoulli { p } => (
                Intensity::Atoms(vec![(0.0, 2.0 * (1.0 - p)), (1.0, 2.0 * p)]),
                4.0,
                true,
            ),
            OffspringLaw::ProductLaw { offspring_pmf, step } => {
                let mean_children: f64 = offspring_pmf.iter().map(|&(k, p)| k as f64 * p).sum();
                let second: f64 = offspring_pmf.iter().map(|&(k, p)| (k as f64).powi(2) * p).sum();
                match step {
                    StepLaw::DiscreteFinite { atoms } => {
                        let distinct = merge_atoms(atoms.clone());
                        if distinct.len() < 2 {
                            return Err(Error::InvalidLaw(
                                "step law needs at least two distinct atoms (deterministic displacement)".into(),
                            ));
                        }
                        let integer = distinct.iter().all(|&(u, _)| is_integer(u));
                        let atoms = distinct.into_iter().map(|(u, q)| (u, q * mean_children)).collect();
                        (Intensity::Atoms(merge_atoms(atoms)), second, integer)
                    }
                    StepLaw::Gaussian { mean, stddev } => (
                        Intensity::Gaussian { mean_children, mean: *mean, stddev: *stddev },
                        second,
                        false,
                    ),
                }
            }
            OffspringLaw::ExplicitFinite { outcomes } => {
                let atoms: Vec<(f64, f64)> = outcomes
                    .iter()
                    .flat_map(|(ds, p)| ds.iter().map(move |&u| (u, *p)))
                    .collect();
                let second = outcomes.iter().map(|(ds, p)| (ds.len() as f64).powi(2) * p).sum();
                let merged = merge_atoms(atoms);
                let integer = merged.iter().all(|&(u, _)| is_integer(u));
                (Intensity::Atoms(merged), second, integer)
            }
        };

        let mean_children = intensity.total_mass();
        if !(mean_children > 1.0) {
            return Err(Error::Assumption {
                assumption: "supercritical branching, E[Z] > 1",
                detail: format!("E[Z] = {mean_children}"),
            });
        }
        if let Intensity::Atoms(atoms) = &intensity {
            if atoms.len() < 2 {
                return Err(Error::Assumption {
                    assumption: "non-deterministic displacements",
                    detail: "every child lands at the same displacement, so the log-generating function is affine"
                        .into(),
                });
            }
        }

        let (delta_plus, delta_minus) = (1.0, 1.0);
        let exp_moment_plus = intensity.laplace(delta_plus);
        let exp_moment_minus = intensity.laplace(-delta_minus);
        if !exp_moment_plus.is_finite() || !exp_moment_minus.is_finite() {
            return Err(Error::Assumption {
                assumption: "two-sided exponential moments",
                detail: format!("E Σ e^(±U) = ({exp_moment_plus}, {exp_moment_minus})"),
            });
        }

        let report = ValidationReport {
            mean_children,
            second_moment_children: second_moment,
            delta: 1.0,
            delta_plus,
            delta_minus,
            exp_moment_plus,
            exp_moment_minus,
            integer_support,
        };
        let sampler = build_sampler(&spec)?;
        Ok(Self { spec, report, intensity, sampler })
    }

    pub fn binary_bernoulli(p: f64) -> Result<Self> {
        Self::new(OffspringLaw::BinaryBernoulli { p })
    }

    pub fn spec(&self) -> &OffspringLaw {
        &self.spec
    }

    pub fn report(&self) -> &ValidationReport {
        &self.report
    }

    pub fn intensity(&self) -> &Intensity {
        &self.intensity
    }

    pub fn mean_children(&self) -> f64 {
        self.report.mean_children
    }

    /// True when displacements have finite support on the integers.
    pub fn is_lattice(&self) -> bool {
        self.report.integer_support
    }

    /// Joint first-moment atoms `(u, ν, mass)`; `None` for Gaussian steps.
    pub fn path_atoms(&self) -> Option<Vec<PathAtom>> {
        match &self.spec {
            OffspringLaw::BinaryBernoulli { p } => Some(vec![
                PathAtom { u: 0.0, nu: 2, mass: 2.0 * (1.0 - p) },
                PathAtom { u: 1.0, nu: 2, mass: 2.0 * p },
            ]),
            OffspringLaw::ProductLaw { offspring_pmf, step: StepLaw::DiscreteFinite { atoms } } => {
                let mut out = Vec::new();
                for &(k, pk) in offspring_pmf.iter().filter(|&&(k, pk)| k > 0 && pk > 0.0) {
                    for &(u, q) in atoms.iter().filter(|a| a.1 > 0.0) {
                        out.push(PathAtom { u, nu: k, mass: pk * k as f64 * q });
                    }
                }
                Some(out)
            }
            OffspringLaw::ProductLaw { step: StepLaw::Gaussian { .. }, .. } => None,
            OffspringLaw::ExplicitFinite { outcomes } => Some(
                outcomes
                    .iter()
                    .filter(|(_, p)| *p > 0.0)
                    .flat_map(|(ds, p)| {
                        let nu = ds.len() as u32;
                        ds.iter().map(move |&u| PathAtom { u, nu, mass: *p })
                    })
                    .collect(),
            ),
        }
    }

    /// Offspring pmf `(k, P(Z = k))` when the child count is independent of
    /// displacements.
    pub fn offspring_pmf(&self) -> Option<Vec<(u32, f64)>> {
        match &self.spec {
            OffspringLaw::BinaryBernoulli { .. } => Some(vec![(2, 1.0)]),
            OffspringLaw::ProductLaw { offspring_pmf, .. } => Some(offspring_pmf.clone()),
            OffspringLaw::ExplicitFinite { .. } => None,
        }
    }

    /// Draws one realization of the point process.
    pub fn sample_offspring<R: Rng + ?Sized>(&self, rng: &mut R) -> Realization {
        let mut displacements = Vec::new();
        self.sample_into(rng, &mut displacements);
        Realization { displacements }
    }

    /// Like [`Law::sample_offspring`] but reuses `out`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<f64>) {
        out.clear();
        match &self.sampler {
            Sampler::Binary { p } => {
                for _ in 0..2 {
                    out.push(if rng.random_bool(*p) { 1.0 } else { 0.0 });
                }
            }
            Sampler::Product { counts, count_index, step } => {
                let k = counts[count_index.sample(rng)];
                out.extend((0..k).map(|_| step.sample(rng)));
            }
            Sampler::Explicit { outcomes, index } => {
                out.extend_from_slice(&outcomes[index.sample(rng)]);
            }
        }
    }
}

impl Intensity {
    pub fn total_mass(&self) -> f64 {
        match self {
            Intensity::Atoms(atoms) => atoms.iter().map(|a| a.1).sum(),
            Intensity::Gaussian { mean_children, .. } => *mean_children,
        }
    }

    /// `E Σ e^{t U}` for real `t`.
    pub fn laplace(&self, t: f64) -> f64 {
        match self {
            Intensity::Atoms(atoms) => atoms.iter().map(|&(u, w)| w * (t * u).exp()).sum(),
            Intensity::Gaussian { mean_children, mean, stddev } => {
                mean_children * (t * mean + 0.5 * t * t * stddev * stddev).exp()
            }
        }
    }
}

fn normalise(spec: OffspringLaw) -> Result<OffspringLaw> {
    Ok(match spec {
        OffspringLaw::BinaryBernoulli { p } => {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::InvalidLaw(format!("Bernoulli parameter p = {p} must lie in (0, 1)")));
            }
            OffspringLaw::BinaryBernoulli { p }
        }
        OffspringLaw::ProductLaw { offspring_pmf, step } => {
            if offspring_pmf.is_empty() {
                return Err(Error::InvalidLaw("empty offspring pmf".into()));
            }
            let s = check_probs("offspring pmf", offspring_pmf.iter().map(|a| a.1))?;
            let offspring_pmf = offspring_pmf.into_iter().map(|(k, p)| (k, p / s)).collect();
            let step = match step {
                StepLaw::DiscreteFinite { atoms } => {
                    if atoms.iter().any(|a| !a.0.is_finite()) {
                        return Err(Error::InvalidLaw("non-finite step atom".into()));
                    }
                    let s = check_probs("step atoms", atoms.iter().map(|a| a.1))?;
                    StepLaw::DiscreteFinite { atoms: atoms.into_iter().map(|(u, p)| (u, p / s)).collect() }
                }
                StepLaw::Gaussian { mean, stddev } => {
                    if !mean.is_finite() || !(stddev > 0.0 && stddev.is_finite()) {
                        return Err(Error::InvalidLaw(format!(
                            "Gaussian step needs finite mean and stddev > 0, got ({mean}, {stddev})"
                        )));
                    }
                    StepLaw::Gaussian { mean, stddev }
                }
            };
            OffspringLaw::ProductLaw { offspring_pmf, step }
        }
        OffspringLaw::ExplicitFinite { outcomes } => {
            if outcomes.is_empty() {
                return Err(Error::InvalidLaw("no outcomes".into()));
            }
            if outcomes.iter().flat_map(|o| o.0.iter()).any(|u| !u.is_finite()) {
                return Err(Error::InvalidLaw("non-finite displacement".into()));
            }
            let s = check_probs("outcomes", outcomes.iter().map(|o| o.1))?;
            OffspringLaw::ExplicitFinite { outcomes: outcomes.into_iter().map(|(d, p)| (d, p / s)).collect() }
        }
    })
}

fn build_sampler(spec: &OffspringLaw) -> Result<Sampler> {
    Ok(match spec {
        OffspringLaw::BinaryBernoulli { p } => Sampler::Binary { p: *p },
        OffspringLaw::ProductLaw { offspring_pmf, step } => {
            let counts = offspring_pmf.iter().map(|a| a.0).collect();
            let weights: Vec<f64> = offspring_pmf.iter().map(|a| a.1).collect();
            let step = match step {
                StepLaw::DiscreteFinite { atoms } => StepSampler::Discrete {
                    values: atoms.iter().map(|a| a.0).collect(),
                    index: weighted(&atoms.iter().map(|a| a.1).collect::<Vec<_>>())?,
                },
                StepLaw::Gaussian { mean, stddev } => StepSampler::Gaussian(
                    Normal::new(*mean, *stddev).map_err(|e| Error::InvalidLaw(e.to_string()))?,
                ),
            };
            Sampler::Product { counts, count_index: weighted(&weights)?, step }
        }
        OffspringLaw::ExplicitFinite { outcomes } => Sampler::Explicit {
            outcomes: outcomes.iter().map(|o| o.0.clone()).collect(),
            index: weighted(&outcomes.iter().map(|o| o.1).collect::<Vec<_>>())?,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn coin() -> StepLaw {
        StepLaw::DiscreteFinite { atoms: vec![(0.0, 0.5), (1.0, 0.5)] }
    }

    #[test]
    fn binary_bernoulli_accepted_with_two_children() {
        let law = Law::binary_bernoulli(0.3).unwrap();
        assert_eq!(law.mean_children(), 2.0);
        assert!(law.is_lattice());
        let mut rng = stream_rng(1, 0, 0);
        for _ in 0..1000 {
            let r = law.sample_offspring(&mut rng);
            assert_eq!(r.displacements.len(), 2);
            assert!(r.displacements.iter().all(|&u| u == 0.0 || u == 1.0));
        }
    }

    #[test]
    fn subcritical_product_law_rejected() {
        let spec = OffspringLaw::ProductLaw { offspring_pmf: vec![(0, 0.6), (2, 0.4)], step: coin() };
        match validate(&spec) {
            Err(Error::Assumption { detail, .. }) => assert!(detail.contains("0.8")),
            other => panic!("expected rejection, got {other:?}"),
        }
    }

    #[test]
    fn gaussian_product_law_accepted() {
        let spec = OffspringLaw::ProductLaw {
            offspring_pmf: vec![(1, 0.5), (3, 0.5)],
            step: StepLaw::Gaussian { mean: 0.0, stddev: 1.0 },
        };
        let report = validate(&spec).unwrap();
        assert_eq!(report.mean_children, 2.0);
        assert!(report.exp_moment_plus.is_finite() && report.exp_moment_minus.is_finite());
        assert!(!report.integer_support);
    }

    #[test]
    fn empty_explicit_law_rejected() {
        let spec = OffspringLaw::ExplicitFinite { outcomes: vec![(vec![], 1.0)] };
        assert!(matches!(validate(&spec), Err(Error::Assumption { .. })));
    }

    #[test]
    fn deterministic_displacements_rejected() {
        let spec = OffspringLaw::ExplicitFinite {
            outcomes: vec![(vec![0.5, 0.5], 0.5), (vec![0.5, 0.5, 0.5], 0.5)],
        };
        assert!(validate(&spec).is_err());
        let spec = OffspringLaw::ProductLaw {
            offspring_pmf: vec![(2, 1.0)],
            step: StepLaw::DiscreteFinite { atoms: vec![(1.0, 1.0)] },
        };
        assert!(validate(&spec).is_err());
    }

    #[test]
    fn probabilities_renormalised_within_tolerance() {
        let spec = OffspringLaw::ProductLaw {
            offspring_pmf: vec![(1, 0.5 + 4e-13), (3, 0.5)],
            step: coin(),
        };
        let law = Law::new(spec).unwrap();
        let OffspringLaw::ProductLaw { offspring_pmf, .. } = law.spec() else { unreachable!() };
        let s: f64 = offspring_pmf.iter().map(|a| a.1).sum();
        assert!((s - 1.0).abs() < 1e-15);

        let bad = OffspringLaw::ProductLaw { offspring_pmf: vec![(1, 0.5), (3, 0.51)], step: coin() };
        assert!(matches!(validate(&bad), Err(Error::InvalidLaw(_))));
    }

    #[test]
    fn bad_bernoulli_parameter_rejected() {
        for p in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(Law::binary_bernoulli(p).is_err());
        }
    }

    #[test]
    fn bernoulli_mean_displacement_law_of_large_numbers() {
        let p = 0.3;
        let law = Law::binary_bernoulli(p).unwrap();
        let mut rng = stream_rng(11, 0, 0);
        let draws = 1_000_000;
        let mut sum = 0.0;
        let mut buf = Vec::new();
        for _ in 0..draws / 2 {
            law.sample_into(&mut rng, &mut buf);
            sum += buf.iter().sum::<f64>();
        }
        let mean = sum / draws as f64;
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        assert!((mean - p).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn child_count_frequencies_match_pmf() {
        let pmf = vec![(0u32, 0.1), (1, 0.2), (2, 0.3), (4, 0.4)];
        let law = Law::new(OffspringLaw::ProductLaw { offspring_pmf: pmf.clone(), step: coin() }).unwrap();
        let mut rng = stream_rng(5, 0, 0);
        let n = 200_000;
        let mut counts = [0u64; 5];
        for _ in 0..n {
            counts[law.sample_offspring(&mut rng).displacements.len()] += 1;
        }
        for (k, p) in pmf {
            let freq = counts[k as usize] as f64 / n as f64;
            assert!((freq - p).abs() < 4.0 * (p * (1.0 - p) / n as f64).sqrt(), "k={k}: {freq} vs {p}");
        }
    }

    #[test]
    fn product_law_displacements_are_exchangeable() {
        let law = Law::new(OffspringLaw::ProductLaw {
            offspring_pmf: vec![(3, 1.0)],
            step: StepLaw::DiscreteFinite { atoms: vec![(-1.0, 0.3), (0.0, 0.3), (2.0, 0.4)] },
        })
        .unwrap();
        let mut rng = stream_rng(9, 0, 0);
        let n = 100_000;
        let mut m = [[0.0f64; 3]; 3];
        for _ in 0..n {
            let d = law.sample_offspring(&mut rng).displacements;
            for i in 0..3 {
                for j in 0..3 {
                    m[i][j] += d[i] * d[j];
                }
            }
        }
        // E[Y^2] = 0.3 + 1.6 = 1.9, E[Y] = 0.5; per-entry sd of Y_i Y_j below 2.5
        let tol = 4.0 * 2.5 / (n as f64).sqrt();
        for i in 0..3 {
            for j in 0..3 {
                assert!((m[i][j] / n as f64 - m[j][i] / n as f64).abs() < 1e-12);
                assert!((m[i][i] / n as f64 - m[j][j] / n as f64).abs() < tol);
                if i != j {
                    assert!((m[i][j] / n as f64 - 0.25).abs() < tol);
                }
            }
        }
    }

    #[test]
    fn explicit_law_samples_atomically() {
        let law = Law::new(OffspringLaw::ExplicitFinite {
            outcomes: vec![(vec![0.0, 1.0], 0.5), (vec![-1.0, 2.0, 2.0], 0.5)],
        })
        .unwrap();
        assert!((law.mean_children() - 2.5).abs() < 1e-15);
        let mut rng = stream_rng(3, 0, 0);
        for _ in 0..100 {
            let d = law.sample_offspring(&mut rng).displacements;
            assert!(d == vec![0.0, 1.0] || d == vec![-1.0, 2.0, 2.0]);
        }
        let atoms = law.path_atoms().unwrap();
        let mass: f64 = atoms.iter().map(|a| a.mass).sum();
        assert!((mass - 2.5).abs() < 1e-15);
    }
}
