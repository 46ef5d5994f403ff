use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use spikelab_core::auxiliary::{self, ProblemData};
use spikelab_core::geometry::Domain;
use spikelab_core::groundstate::{solve_ground_state, RadialProfile};
use spikelab_core::potentials::PotentialField;
use spikelab_core::verifier::{self, energy_at, VerifierError, VerifierSettings};

fn profile() -> Arc<RadialProfile> {
    static P: OnceLock<Arc<RadialProfile>> = OnceLock::new();
    P.get_or_init(|| Arc::new(solve_ground_state(3, 3.0, 1e-10).unwrap())).clone()
}

fn data(domain: Domain, j: &str, v: &str) -> ProblemData {
    ProblemData::new(
        Arc::new(domain),
        PotentialField::parse(j, 3).unwrap(),
        PotentialField::parse(v, 3).unwrap(),
        profile(),
    )
    .unwrap()
}

/// `∫₀^∞ f(r) dr` by the midpoint rule on a fine grid (the integrand is smooth and decays).
fn radial(f: impl Fn(f64) -> f64) -> f64 {
    let h = 1e-3;
    (0..50_000).map(|k| f((k as f64 + 0.5) * h)).sum::<f64>() * h
}

#[test]
fn ball_energy_matches_cap_formula() {
    // for J = V = 1 the energy density g is radial; the ball of radius 1/ε about a boundary
    // point keeps the fraction (1 − εr/2)/2 of each sphere, so
    // E = 2π∫g r² − επ∫g r³
    let d = data(Domain::ball(vec![0.0; 3], 1.0).unwrap(), "1", "1");
    let prof = profile();
    let g = |r: f64| {
        let (u, du) = prof.eval_both(r);
        0.5 * du * du + 0.5 * u * u - u.powi(4) / 4.0
    };
    let eps = 0.1;
    let exact = 2.0 * PI * radial(|r| g(r) * r * r) - eps * PI * radial(|r| g(r) * r.powi(3));
    let q = d.domain.boundary_point(&[0.0, 0.0, 1.0]).unwrap();
    let e = energy_at(&d, &q, eps, &VerifierSettings::default()).unwrap();
    assert!((e.energy - exact).abs() < 1e-6 * exact.abs(), "{} vs {exact}", e.energy);
    assert!(e.error_budget < 1e-6 * exact.abs());
}

#[test]
fn energy_ordering_follows_gamma() {
    let d = data(Domain::ball(vec![0.0; 3], 1.0).unwrap(), "1", "1+x1^2");
    let s = VerifierSettings::default();
    let a = d.domain.boundary_point(&[1.0, 0.0, 0.0]).unwrap();
    let b = d.domain.boundary_point(&[0.0, 0.0, 1.0]).unwrap();
    let ea = energy_at(&d, &a, 0.05, &s).unwrap().energy;
    let eb = energy_at(&d, &b, 0.05, &s).unwrap().energy;
    assert!(auxiliary::gamma(&d, &a).unwrap() > auxiliary::gamma(&d, &b).unwrap());
    assert!(ea > eb, "{ea} <= {eb}");
}

#[test]
fn energy_is_invariant_under_rigid_motion() {
    let s = VerifierSettings::default();
    let base = data(Domain::ball(vec![0.0; 3], 1.0).unwrap(), "1+0.3*x3", "1+x1^2");
    let q = base.domain.boundary_point(&[0.6, 0.0, 0.8]).unwrap();
    let e0 = energy_at(&base, &q, 0.1, &s).unwrap();
    // translate by c and swap x1 ↔ x2
    let moved = data(
        Domain::ball(vec![0.3, -0.2, 0.5], 1.0).unwrap(),
        "1+0.3*(x3-0.5)",
        "1+(x2+0.2)^2",
    );
    let q = moved.domain.boundary_point(&[0.3, 0.4, 1.3]).unwrap();
    let e1 = energy_at(&moved, &q, 0.1, &s).unwrap();
    let budget = e0.error_budget + e1.error_budget;
    assert!((e0.energy - e1.energy).abs() <= 10.0 * budget + 1e-9, "{} vs {}", e0.energy, e1.energy);
}

#[test]
fn schedules_are_checked() {
    let d = data(Domain::ball(vec![0.0; 3], 1.0).unwrap(), "1", "1");
    let q = d.domain.boundary_point(&[0.0, 0.0, 1.0]).unwrap();
    let s = VerifierSettings::default();
    assert!(matches!(
        verifier::verify_expansion(&d, &q, &[0.1], &s),
        Err(VerifierError::Schedule(_))
    ));
    assert!(matches!(
        verifier::verify_expansion(&d, &q, &[0.1, 0.2, 0.05], &s),
        Err(VerifierError::Schedule(_))
    ));
    assert!(matches!(
        verifier::verify_proposition(&d, &q, &[0.1, -0.05], &s),
        Err(VerifierError::Schedule(_))
    ));
    assert!(matches!(
        verifier::verify_gradient_expansion(&d, &q, &[], &s),
        Err(VerifierError::Schedule(_))
    ));
}

#[test]
fn boundary_constant_coefficients_give_curvature_slope_only() {
    // J, V ≡ 1 on the boundary but not inside: the Γ term is flat and the slope is Σ
    let d = data(Domain::ball(vec![0.0; 3], 1.0).unwrap(), "1", "1+0.5*(1-x1^2-x2^2-x3^2)");
    let q = d.domain.boundary_point(&[0.0, 0.0, 1.0]).unwrap();
    let rep = verifier::verify_expansion(&d, &q, &[0.2, 0.1, 0.05], &VerifierSettings::default()).unwrap();
    let sb = auxiliary::sigma_bar(&d, &q).unwrap();
    assert!((rep.target_sigma - sb).abs() < 1e-10);
    assert!(rep.mismatch < 0.05, "mismatch {}", rep.mismatch);
}
