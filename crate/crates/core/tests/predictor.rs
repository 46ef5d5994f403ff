use std::sync::{Arc, OnceLock};

use spikelab_core::auxiliary::ProblemData;
use spikelab_core::geometry::Domain;
use spikelab_core::groundstate::{solve_ground_state, RadialProfile};
use spikelab_core::potentials::PotentialField;
use spikelab_core::predictor::{
    predict_concentration, refine_critical_point, Classification, LandscapeFunction, PredictorError,
    PredictorSettings, TheoremTag,
};

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

fn settings() -> PredictorSettings {
    PredictorSettings {
        samples: 2000,
        ..PredictorSettings::default()
    }
}

fn maxima(d: &ProblemData) -> Vec<Vec<f64>> {
    let pred = predict_concentration(d, &settings()).unwrap();
    pred.reports
        .iter()
        .filter(|r| r.classification == Classification::Max && r.nondegenerate)
        .map(|r| r.location.clone())
        .collect()
}

#[test]
fn maxima_invariant_under_coefficient_scaling() {
    let ball = || Domain::ball(vec![0.0; 3], 1.0).unwrap();
    let a = maxima(&data(ball(), "1+0.2*x2", "1+x1^2"));
    let b = maxima(&data(ball(), "3*(1+0.2*x2)", "2.5*(1+x1^2)"));
    assert!(!a.is_empty());
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        let d: f64 = x.iter().zip(y).map(|(s, t)| (s - t).powi(2)).sum::<f64>().sqrt();
        assert!(d < 1e-6, "{x:?} vs {y:?}");
    }
}

#[test]
fn reports_are_consistent_and_sorted() {
    let d = data(Domain::ellipsoid(vec![1.0, 1.5, 2.0], vec![0.0; 3]).unwrap(), "1", "1+0.3*x1+x2^2");
    let s = settings();
    let pred = predict_concentration(&d, &s).unwrap();
    assert_eq!(pred.function, LandscapeFunction::Gamma);
    assert!(pred.reports.iter().all(|r| r.is_consistent(&s)));
    assert!(pred.reports.windows(2).all(|w| w[0].value >= w[1].value - 1e-9));
    for r in pred.predicted() {
        assert!(r.tags.contains(&TheoremTag::Thm1a));
        assert_eq!(
            r.tags.contains(&TheoremTag::Thm1b),
            r.classification != Classification::Saddle
        );
    }
}

#[test]
fn gamma_landscape_refused_when_gamma_is_constant() {
    let d = data(Domain::ellipsoid(vec![1.0, 1.0, 2.0], vec![0.0; 3]).unwrap(), "1", "1");
    let start = d.domain.boundary_point(&[1.0, 0.0, 0.0]).unwrap();
    let err = refine_critical_point(&d, LandscapeFunction::Gamma, &start, &settings()).unwrap_err();
    assert!(matches!(err, PredictorError::ConstantGamma(_)));
    assert!(err.to_string().contains("SIGMA_BAR"));
}

#[test]
fn refinement_climbs_to_spiked_maximum() {
    // V ≡ 1 on the boundary, with a sharp inward gradient at (1, 0, 0)
    let d = data(
        Domain::ellipsoid(vec![1.0, 1.0, 2.0], vec![0.0; 3]).unwrap(),
        "1",
        "1 - 25*(x1^2 + x2^2 + x3^2/4 - 1)*exp(-4*((x1-1)^2+x2^2+x3^2))",
    );
    let start = d.domain.project_to_boundary(&[0.95, 0.2, -0.3]).unwrap();
    let rep = refine_critical_point(&d, LandscapeFunction::SigmaBar, &start, &settings()).unwrap();
    assert_eq!(rep.classification, Classification::Max);
    assert_eq!(rep.tags, vec![TheoremTag::Thm2]);
    let err: f64 = [rep.location[0] - 1.0, rep.location[1], rep.location[2]]
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    assert!(err < 1e-6, "{:?}", rep.location);
}
