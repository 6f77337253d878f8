//! Boundary-case normalisation `V(x) = −t* U(x) + ψ(t*) |x|`.
//!
//! After the change of coordinates the walk satisfies `E Σ e^{−V} = 1` and
//! `E Σ V e^{−V} = 0`, which makes the associated one-particle walk centred.
//! Both identities are evaluated in closed form and gate every downstream
//! computation.

use rand::Rng;
use serde::Serialize;

use crate::analysis::CriticalProfile;
use crate::error::{Error, Result};
use crate::models::{Intensity, Law};

/// Tolerance for the two normalisation identities.
pub const IDENTITY_TOL: f64 = 1e-12;

/// Closed-form certificate of a [`VLaw`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VCertificate {
    /// `E Σ e^{−V}`, should be 1.
    pub mass: f64,
    /// `E Σ V e^{−V}`, should be 0.
    pub drift: f64,
    pub delta1: f64,
    /// `E Σ e^{−(1+δ₁)V}`.
    pub lower_moment: f64,
    pub delta2: f64,
    /// `E Σ e^{δ₂ V}`.
    pub upper_moment: f64,
}

/// A law in V-coordinates: each child increment is `v = −t*·u + ψ(t*)`.
#[derive(Debug, Clone)]
pub struct VLaw {
    law: Law,
    profile: CriticalProfile,
    certificate: VCertificate,
}

impl VLaw {
    pub fn law(&self) -> &Law {
        &self.law
    }

    pub fn profile(&self) -> &CriticalProfile {
        &self.profile
    }

    pub fn certificate(&self) -> &VCertificate {
        &self.certificate
    }

    pub fn t_star(&self) -> f64 {
        self.profile.t_star
    }

    pub fn psi_tstar(&self) -> f64 {
        self.profile.psi_tstar
    }

    /// V-increment of a child with U-displacement `u`.
    #[inline]
    pub fn v_of(&self, u: f64) -> f64 {
        -self.profile.t_star * u + self.profile.psi_tstar
    }

    /// Samples one offspring realisation as V-increments into `out`.
    pub fn sample_increments<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<f64>) {
        self.law.sample_into(rng, out);
        for x in out.iter_mut() {
            *x = self.v_of(*x);
        }
    }

    /// `E Σ_{|x|=1} e^{c V(x)}` in closed form.
    pub fn exp_moment(&self, c: f64) -> f64 {
        v_exp_moment(self.law.intensity(), &self.profile, c)
    }
}

fn v_exp_moment(intensity: &Intensity, profile: &CriticalProfile, c: f64) -> f64 {
    let (t, psi) = (profile.t_star, profile.psi_tstar);
    match intensity {
        Intensity::Atoms(atoms) => atoms.iter().map(|&(u, w)| w * (c * (-t * u + psi)).exp()).sum(),
        Intensity::Gaussian { mean_children, mean, stddev } => {
            let (m, s) = (-t * mean + psi, t * stddev);
            mean_children * (c * m + 0.5 * c * c * s * s).exp()
        }
    }
}

fn v_drift(intensity: &Intensity, profile: &CriticalProfile) -> f64 {
    let (t, psi) = (profile.t_star, profile.psi_tstar);
    match intensity {
        Intensity::Atoms(atoms) => atoms
            .iter()
            .map(|&(u, w)| {
                let v = -t * u + psi;
                w * v * (-v).exp()
            })
            .sum(),
        Intensity::Gaussian { mean_children, mean, stddev } => {
            // E[V e^{−V}] = (m − s²) e^{−m + s²/2} for V ~ N(m, s²)
            let (m, s2) = (-t * mean + psi, (t * stddev).powi(2));
            mean_children * (m - s2) * (-m + 0.5 * s2).exp()
        }
    }
}

/// Builds the V-law and certifies both normalisation identities.
pub fn make_vlaw(law: &Law, profile: &CriticalProfile) -> Result<VLaw> {
    let intensity = law.intensity();
    let mass = v_exp_moment(intensity, profile, -1.0);
    let drift = v_drift(intensity, profile);
    if (mass - 1.0).abs() > IDENTITY_TOL || drift.abs() > IDENTITY_TOL {
        return Err(Error::Certification(format!(
            "E Σ e^-V = {mass}, E Σ V e^-V = {drift}: profile does not belong to this law"
        )));
    }
    let certificate = VCertificate {
        mass,
        drift,
        delta1: 1.0,
        lower_moment: v_exp_moment(intensity, profile, -2.0),
        delta2: 1.0,
        upper_moment: v_exp_moment(intensity, profile, 1.0),
    };
    if !certificate.lower_moment.is_finite() || !certificate.upper_moment.is_finite() {
        return Err(Error::Certification("exponential moment witnesses are infinite".into()));
    }
    Ok(VLaw { law: law.clone(), profile: *profile, certificate })
}

/// Converts a U-coordinate barrier slope `ε_U` (kill below `(γ − ε_U) j`) to
/// the equivalent V-coordinate slope (kill above `ε_V j`).
pub fn barrier_map(eps_u: f64, profile: &CriticalProfile) -> f64 {
    profile.t_star * eps_u
}

/// Inverse of [`barrier_map`].
pub fn barrier_unmap(eps_v: f64, profile: &CriticalProfile) -> f64 {
    eps_v / profile.t_star
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{p0, solve_tstar};
    use crate::models::{OffspringLaw, StepLaw};

    fn vlaw(law: Law) -> VLaw {
        let prof = solve_tstar(&law).unwrap();
        make_vlaw(&law, &prof).unwrap()
    }

    #[test]
    fn bernoulli_identities() {
        let p = 0.3;
        let v = vlaw(Law::binary_bernoulli(p).unwrap());
        let prof = v.profile();
        let direct = 2.0 * (-prof.psi_tstar).exp() * (p * prof.t_star.exp() + 1.0 - p);
        assert!((direct - 1.0).abs() < 1e-14);
        assert!((v.certificate().mass - 1.0).abs() < 1e-14);
        // exhaustive sum over the two displacements
        let drift: f64 = [(0.0, 1.0 - p), (1.0, p)]
            .iter()
            .map(|&(u, q)| {
                let x = v.v_of(u);
                2.0 * q * x * (-x).exp()
            })
            .sum();
        assert!(drift.abs() < 1e-12);
    }

    #[test]
    fn explicit_law_identities_by_outcome_sum() {
        let outcomes = vec![(vec![0.0, 1.0, -1.0], 0.4), (vec![2.0], 0.3), (vec![0.0, 0.5], 0.3)];
        let v = vlaw(Law::new(OffspringLaw::ExplicitFinite { outcomes: outcomes.clone() }).unwrap());
        let (mut mass, mut drift) = (0.0, 0.0);
        for (ds, p) in &outcomes {
            for &u in ds {
                let x = v.v_of(u);
                mass += p * (-x).exp();
                drift += p * x * (-x).exp();
            }
        }
        assert!((mass - 1.0).abs() < IDENTITY_TOL);
        assert!(drift.abs() < IDENTITY_TOL);
    }

    #[test]
    fn gaussian_identities() {
        let v = vlaw(
            Law::new(OffspringLaw::ProductLaw {
                offspring_pmf: vec![(1, 0.5), (3, 0.5)],
                step: StepLaw::Gaussian { mean: 0.2, stddev: 0.7 },
            })
            .unwrap(),
        );
        let c = v.certificate();
        assert!((c.mass - 1.0).abs() < IDENTITY_TOL && c.drift.abs() < IDENTITY_TOL);
        assert!(c.lower_moment.is_finite() && c.upper_moment.is_finite());
    }

    #[test]
    fn mismatched_profile_rejected() {
        let a = Law::binary_bernoulli(0.3).unwrap();
        let b = Law::binary_bernoulli(0.2).unwrap();
        let prof = solve_tstar(&b).unwrap();
        assert!(matches!(make_vlaw(&a, &prof), Err(Error::Certification(_))));
    }

    #[test]
    fn barrier_map_examples() {
        let prof = solve_tstar(&Law::binary_bernoulli(p0()).unwrap()).unwrap();
        assert_eq!(barrier_map(0.0, &prof), 0.0);
        let eps_v = barrier_map(0.01, &prof);
        assert!((eps_v - 0.026339).abs() < 1e-6);
        assert!((barrier_unmap(eps_v, &prof) - 0.01).abs() < 1e-17);
        // the two asymptotic statements agree: β_U / √ε_U = β_V / √ε_V
        let eps_u = 0.013f64;
        let lhs = prof.beta_u / eps_u.sqrt();
        let rhs = prof.beta_v / barrier_map(eps_u, &prof).sqrt();
        assert!(((lhs - rhs) / lhs).abs() < 1e-14);
    }
}
