//! Task implementations.

use std::fmt::Display;
use std::sync::Arc;

use serde::Serialize;

use spikelab_core::auxiliary::{self, AuxiliaryError, BoundaryVariation, Constants, ProblemData};
use spikelab_core::geometry::{BoundaryPoint, Domain, GeometryError};
use spikelab_core::groundstate::{
    solve_ground_state, ProfileHeader, RadialProfile, StandardMoments, DEFAULT_GRID_POINTS, SWITCH_LEVEL,
};
use spikelab_core::potentials::{validate_assumptions, Certificate, PotentialError, PotentialField};
use spikelab_core::predictor::{
    self, LandscapeFunction, PredictorError, PredictorSettings, GAMMA_CONSTANCY_THRESHOLD,
};
use spikelab_core::verifier::{self, VerifierError, VerifierSettings};

use crate::config::{RunConfig, Task};
use crate::output::{num, Manifest, Sink};
use crate::CliError;

fn numerical(context: &str, e: impl Display) -> CliError {
    CliError::Numerical(format!("{context}: {e}"))
}

fn invalid(field: &str, e: impl Display) -> CliError {
    CliError::Validation {
        field: field.to_string(),
        message: e.to_string(),
    }
}

fn from_aux(e: AuxiliaryError) -> CliError {
    match e {
        AuxiliaryError::NotBoundaryConstant { field, .. } => invalid(field, e),
        AuxiliaryError::Invalid(_) => invalid("config", e),
        other => numerical("auxiliary functions", other),
    }
}

fn from_predictor(e: PredictorError) -> CliError {
    match e {
        PredictorError::ConstantGamma(_) | PredictorError::NoTangents => invalid("task", e),
        PredictorError::Auxiliary(a) => from_aux(a),
        other => numerical("predictor", other),
    }
}

fn from_verifier(e: VerifierError) -> CliError {
    match e {
        VerifierError::Schedule(_) => invalid("eps_schedule", e),
        VerifierError::Truncation { .. } => numerical("quadrature.R too small", e),
        VerifierError::Auxiliary(a) => from_aux(a),
        other => numerical("expansion verifier", other),
    }
}

fn profile(config: &RunConfig, manifest: &mut Manifest) -> Result<Arc<RadialProfile>, CliError> {
    let tol = config.tolerances.ground_state;
    manifest.tolerance("ground_state.tol", tol);
    manifest.tolerance("ground_state.grid_points", DEFAULT_GRID_POINTS);
    manifest.tolerance("ground_state.switch_level", SWITCH_LEVEL);
    let profile = solve_ground_state(config.n, config.p, tol).map_err(|e| numerical("ground state", e))?;
    log::info!(
        "ground state N={} p={}: alpha = {:.15}, Nehari residual {:e}",
        config.n,
        config.p,
        profile.alpha(),
        profile.nehari_residual()
    );
    Ok(Arc::new(profile))
}

fn field(config: &RunConfig, name: &str, src: &str, domain: &Domain, manifest: &mut Manifest) -> Result<(PotentialField, Certificate), CliError> {
    let f = PotentialField::parse(src, config.n).map_err(|e| invalid(name, e))?;
    let samples = config.tolerances.validation_samples;
    let cert = validate_assumptions(&f, domain, samples, config.seed).map_err(|e| match e {
        PotentialError::NotPositive { min, at, .. } => invalid(
            name,
            format!("must be positive on the closed domain; sampled minimum {min:e} at {at:?}"),
        ),
        PotentialError::Geometry(g) => numerical("sampling the domain", g),
        other => invalid(name, other),
    })?;
    manifest.tolerance(&format!("{name}.validation_samples"), samples);
    Ok((f, cert))
}

struct Problem {
    data: ProblemData,
    j_certificate: Certificate,
    v_certificate: Certificate,
}

fn problem(config: &RunConfig, manifest: &mut Manifest) -> Result<Problem, CliError> {
    let spec = config.domain_spec().ok_or_else(|| invalid("domain", "missing"))?;
    let domain = Domain::from_spec(&spec, config.n).map_err(|e| match e {
        GeometryError::Invalid(_) | GeometryError::Parse(_) => invalid("domain", e),
        other => numerical("domain", other),
    })?;
    let domain = Arc::new(domain);
    let (j, j_certificate) = field(config, "J", &config.j, &domain, manifest)?;
    let (v, v_certificate) = field(config, "V", &config.v, &domain, manifest)?;
    let profile = profile(config, manifest)?;
    let data = ProblemData::new(domain, j, v, profile).map_err(from_aux)?;
    Ok(Problem {
        data,
        j_certificate,
        v_certificate,
    })
}

/// Relative distance from `Q` to the boundary accepted before projecting.
const Q_BOUNDARY_TOL: f64 = 1e-6;

fn boundary_q(config: &RunConfig, domain: &Domain, manifest: &mut Manifest) -> Result<BoundaryPoint, CliError> {
    let q = config.q.as_ref().ok_or_else(|| invalid("Q", "missing"))?;
    let grad = domain.gradient(q).map_err(|e| invalid("Q", e))?;
    let dist = domain.phi(q).map_err(|e| invalid("Q", e))?.abs() / grad.norm();
    if !(dist <= Q_BOUNDARY_TOL * domain.diameter()) {
        return Err(invalid(
            "Q",
            format!("{q:?} is not on the boundary (estimated distance {dist:e})"),
        ));
    }
    manifest.tolerance("Q.boundary_tol", Q_BOUNDARY_TOL);
    let bp = domain.project_to_boundary(q).map_err(|e| numerical("projecting Q", e))?;
    if dist > 0.0 {
        manifest.decide(format!("Q projected onto the boundary: {:?}", bp.point.as_slice()));
    }
    Ok(bp)
}

fn verifier_settings(config: &RunConfig, manifest: &mut Manifest) -> VerifierSettings {
    let q = &config.quadrature;
    let s = VerifierSettings {
        truncation_radius: q.r,
        max_depth: q.depth,
        order: q.order,
        max_cell: q.max_cell,
        core_radius: q.core_radius,
        core_cell: q.core_cell,
        fd_step: q.fd_step,
        ..VerifierSettings::default()
    };
    manifest.tolerance("quadrature.R", s.truncation_radius);
    manifest.tolerance("quadrature.depth", s.max_depth);
    manifest.tolerance("quadrature.order", s.order);
    manifest.tolerance("quadrature.error_estimate_order", s.order.saturating_sub(2).max(2));
    manifest.tolerance("quadrature.max_cell", s.max_cell);
    manifest.tolerance("quadrature.core_radius", s.core_radius);
    manifest.tolerance("quadrature.core_cell", s.core_cell);
    manifest.tolerance("quadrature.skip_tolerance", s.skip_tolerance);
    manifest.tolerance("quadrature.fd_step", s.fd_step);
    manifest.tolerance("truncation_limit_relative", 1e-8);
    manifest.decide("energy evaluated as f_eps(U_P); the reduction correction w changes it only at O(eps^2)");
    s
}

fn predictor_settings(config: &RunConfig, manifest: &mut Manifest) -> PredictorSettings {
    let t = &config.tolerances;
    let s = PredictorSettings {
        samples: config.samples,
        max_starts: t.max_starts,
        stationarity_tol: t.stationarity,
        degeneracy_tol: t.degeneracy,
        hessian_step: t.hessian_step,
        seed: config.seed,
        ..PredictorSettings::default()
    };
    manifest.tolerance("predictor.samples", s.samples);
    manifest.tolerance("predictor.max_starts", s.max_starts);
    manifest.tolerance("predictor.neighbours", s.neighbours);
    manifest.tolerance("predictor.stationarity_tol", s.stationarity_tol);
    manifest.tolerance("predictor.degeneracy_tol", s.degeneracy_tol);
    manifest.tolerance("predictor.hessian_step", s.hessian_step);
    manifest.tolerance("predictor.gradient_step", s.gradient_step);
    manifest.tolerance("predictor.max_iterations", s.max_iterations);
    manifest.tolerance("predictor.merge_distance", s.merge_distance);
    manifest.tolerance("predictor.family_link", s.family_link);
    s
}

fn landscape_function(variation: &BoundaryVariation, manifest: &mut Manifest) -> LandscapeFunction {
    manifest.tolerance("gamma_constancy_threshold", GAMMA_CONSTANCY_THRESHOLD);
    let f = if variation.gamma_variation >= GAMMA_CONSTANCY_THRESHOLD {
        LandscapeFunction::Gamma
    } else {
        LandscapeFunction::SigmaBar
    };
    manifest.decide(format!(
        "landscape function {f:?}: relative boundary variation of Gamma is {:e} (threshold {GAMMA_CONSTANCY_THRESHOLD:e})",
        variation.gamma_variation
    ));
    f
}

pub fn execute(task: Task, config: &RunConfig, sink: &mut Sink, manifest: &mut Manifest) -> Result<(), CliError> {
    match task {
        Task::GroundState => ground_state(config, sink, manifest),
        Task::Constants => constants(config, sink, manifest),
        Task::Landscape => landscape(config, sink, manifest),
        Task::Predict => predict(config, sink, manifest),
        Task::VerifyExpansion => verify_expansion(config, sink, manifest),
        Task::VerifyProposition => verify_proposition(config, sink, manifest),
        Task::VerifyGradient => verify_gradient(config, sink, manifest),
    }
}

#[derive(Serialize)]
struct ProfileReport {
    header: ProfileHeader,
    r_max: f64,
    match_radius: f64,
    match_mismatch: f64,
    nehari_residual: f64,
    pohozaev_residual: f64,
    ode_residual: f64,
    moments: StandardMoments,
    table: &'static str,
}

fn ground_state(config: &RunConfig, sink: &mut Sink, manifest: &mut Manifest) -> Result<(), CliError> {
    let profile = profile(config, manifest)?;
    let mut table = Vec::new();
    profile.write_csv(&mut table).map_err(|e| numerical("profile table", e))?;
    sink.csv_bytes("profile.csv", &table)?;
    sink.json(
        "profile.json",
        &ProfileReport {
            header: profile.header(),
            r_max: profile.r_max(),
            match_radius: profile.match_radius(),
            match_mismatch: profile.match_mismatch(),
            nehari_residual: profile.nehari_residual(),
            pohozaev_residual: profile.pohozaev_residual(),
            ode_residual: profile.ode_residual(),
            moments: *profile.moments(),
            table: "profile.csv",
        },
    )
}

#[derive(Serialize)]
struct ConstantsReport {
    #[serde(rename = "Q")]
    q: Vec<f64>,
    normal: Vec<f64>,
    principal_curvatures: Vec<f64>,
    mean_curvature: f64,
    #[serde(rename = "J_Q")]
    j: f64,
    #[serde(rename = "V_Q")]
    v: f64,
    alpha: f64,
    beta: f64,
    gamma: f64,
    gamma_tangential_gradient: Vec<f64>,
    sigma: f64,
    /// Present only when J and V are constant on the boundary.
    sigma_bar: Option<f64>,
    constants: Constants,
    boundary_variation: BoundaryVariation,
    j_certificate: Certificate,
    v_certificate: Certificate,
}

fn constants(config: &RunConfig, sink: &mut Sink, manifest: &mut Manifest) -> Result<(), CliError> {
    let pb = problem(config, manifest)?;
    let data = &pb.data;
    let q = boundary_q(config, &data.domain, manifest)?;
    let state = data.scaled_state(&q).map_err(from_aux)?;
    let variation = data.boundary_variation().map_err(from_aux)?;
    let sigma_bar = match auxiliary::sigma_bar(data, &q) {
        Ok(v) => Some(v),
        Err(AuxiliaryError::NotBoundaryConstant { field, variation }) => {
            manifest.decide(format!(
                "Sigma-bar omitted: {field} varies on the boundary (relative variation {variation:e})"
            ));
            None
        }
        Err(e) => return Err(from_aux(e)),
    };
    manifest.decide("Sigma-bar assembled with +k4 H (k4 < 0) so that it coincides with Sigma");
    let report = ConstantsReport {
        q: q.point.iter().copied().collect(),
        normal: q.normal.iter().copied().collect(),
        principal_curvatures: q.curvatures.clone(),
        mean_curvature: q.mean_curvature,
        j: state.j(),
        v: state.v(),
        alpha: state.alpha(),
        beta: state.beta(),
        gamma: auxiliary::gamma(data, &q).map_err(from_aux)?,
        gamma_tangential_gradient: auxiliary::gamma_tangential_gradient(data, &q)
            .map_err(from_aux)?
            .iter()
            .copied()
            .collect(),
        sigma: auxiliary::sigma(data, &q).map_err(from_aux)?,
        sigma_bar,
        constants: auxiliary::constants(data, &q).map_err(from_aux)?,
        boundary_variation: variation,
        j_certificate: pb.j_certificate,
        v_certificate: pb.v_certificate,
    };
    sink.json("constants.json", &report)
}

#[derive(Serialize)]
struct LandscapeSummary {
    function: LandscapeFunction,
    boundary_variation: BoundaryVariation,
    samples: usize,
    min_value: f64,
    argmin: Vec<f64>,
    max_value: f64,
    argmax: Vec<f64>,
    table: &'static str,
}

fn landscape(config: &RunConfig, sink: &mut Sink, manifest: &mut Manifest) -> Result<(), CliError> {
    let pb = problem(config, manifest)?;
    let data = &pb.data;
    let variation = data.boundary_variation().map_err(from_aux)?;
    let func = landscape_function(&variation, manifest);
    manifest.tolerance("landscape.samples", config.samples);
    let table = predictor::scan_landscape(data, func, config.samples, config.seed).map_err(from_predictor)?;
    let mut header: Vec<String> = (1..=config.n).map(|i| format!("x{i}")).collect();
    header.push("value".into());
    let rows: Vec<Vec<String>> = table
        .iter()
        .map(|(q, v)| q.point.iter().map(|x| num(*x)).chain(std::iter::once(num(*v))).collect())
        .collect();
    sink.csv("landscape.csv", &header, &rows)?;
    let (mut imin, mut imax) = (0, 0);
    for (i, (_, v)) in table.iter().enumerate() {
        if *v < table[imin].1 {
            imin = i;
        }
        if *v > table[imax].1 {
            imax = i;
        }
    }
    sink.json(
        "landscape.json",
        &LandscapeSummary {
            function: func,
            boundary_variation: variation,
            samples: table.len(),
            min_value: table[imin].1,
            argmin: table[imin].0.point.iter().copied().collect(),
            max_value: table[imax].1,
            argmax: table[imax].0.point.iter().copied().collect(),
            table: "landscape.csv",
        },
    )
}

fn predict(config: &RunConfig, sink: &mut Sink, manifest: &mut Manifest) -> Result<(), CliError> {
    let pb = problem(config, manifest)?;
    let data = &pb.data;
    let variation = data.boundary_variation().map_err(from_aux)?;
    landscape_function(&variation, manifest);
    let settings = predictor_settings(config, manifest);
    manifest.decide("degenerate stationary points on a common level are clustered into families and reported without a theorem tag");
    manifest.decide("reports are ordered by value (descending, quantised to 1e-9), ties by coordinates");
    let prediction = predictor::predict_concentration(data, &settings).map_err(from_predictor)?;
    for r in &prediction.reports {
        if !r.is_consistent(&settings) {
            return Err(CliError::Numerical(format!(
                "critical point report at {:?} failed its consistency check",
                r.location
            )));
        }
    }
    let mut header: Vec<String> = vec!["rank".into()];
    header.extend((1..=config.n).map(|i| format!("x{i}")));
    header.extend(["value", "classification", "tags", "family_size"].map(String::from));
    let rows: Vec<Vec<String>> = prediction
        .reports
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let mut row = vec![k.to_string()];
            row.extend(r.location.iter().map(|x| num(*x)));
            row.push(num(r.value));
            row.push(format!("{:?}", r.classification).to_uppercase());
            row.push(r.tags.iter().map(|t| format!("{t:?}")).collect::<Vec<_>>().join("+"));
            row.push(r.family_size.to_string());
            row
        })
        .collect();
    sink.csv("predictions.csv", &header, &rows)?;
    sink.json("predictions.json", &prediction)
}

fn verify_expansion(config: &RunConfig, sink: &mut Sink, manifest: &mut Manifest) -> Result<(), CliError> {
    let pb = problem(config, manifest)?;
    let q = boundary_q(config, &pb.data.domain, manifest)?;
    let settings = verifier_settings(config, manifest);
    manifest.decide("slopes extrapolated from the last three with a fitted remainder exponent (1 if none fits)");
    let report = verifier::verify_expansion(&pb.data, &q, &config.eps_schedule, &settings).map_err(from_verifier)?;
    let header = ["eps", "E", "slope", "target_sigma", "mismatch"].map(String::from);
    let scale = report.target_sigma.abs().max(1.0);
    let rows: Vec<Vec<String>> = (0..report.eps.len())
        .map(|i| {
            vec![
                num(report.eps[i]),
                num(report.energies[i]),
                num(report.slopes[i]),
                num(report.target_sigma),
                num((report.slopes[i] - report.target_sigma).abs() / scale),
            ]
        })
        .collect();
    sink.csv("expansion.csv", &header, &rows)?;
    sink.json("expansion.json", &report)
}

fn verify_proposition(config: &RunConfig, sink: &mut Sink, manifest: &mut Manifest) -> Result<(), CliError> {
    let pb = problem(config, manifest)?;
    let q = boundary_q(config, &pb.data.domain, manifest)?;
    let settings = verifier_settings(config, manifest);
    manifest.tolerance("decay_exponent_threshold", verifier::DECAY_EXPONENT_THRESHOLD);
    manifest.decide("residual exponents fitted only over residuals above the quadrature floor");
    let rows = verifier::verify_proposition(&pb.data, &q, &config.eps_schedule, &settings).map_err(from_verifier)?;
    let header = ["estimate", "eps", "lhs", "rhs", "residual"].map(String::from);
    let table: Vec<Vec<String>> = rows
        .iter()
        .flat_map(|d| {
            (0..d.eps.len()).map(move |i| {
                vec![
                    d.name.clone(),
                    num(d.eps[i]),
                    num(d.lhs[i]),
                    num(d.rhs[i]),
                    num(d.residuals[i]),
                ]
            })
        })
        .collect();
    sink.csv("proposition.csv", &header, &table)?;
    #[derive(Serialize)]
    struct Out<'a> {
        #[serde(rename = "Q")]
        q: Vec<f64>,
        all_pass: bool,
        estimates: &'a [verifier::ResidualDecay],
    }
    sink.json(
        "proposition.json",
        &Out {
            q: q.point.iter().copied().collect(),
            all_pass: rows.iter().all(|d| d.pass),
            estimates: &rows,
        },
    )
}

fn verify_gradient(config: &RunConfig, sink: &mut Sink, manifest: &mut Manifest) -> Result<(), CliError> {
    let pb = problem(config, manifest)?;
    let q = boundary_q(config, &pb.data.domain, manifest)?;
    let settings = verifier_settings(config, manifest);
    manifest.decide("energy gradient by central differences at steps h and h/2 combined by Richardson extrapolation");
    manifest.decide("gradient mismatch relative to max(|c0 grad Gamma|, 1e-6 c0 Gamma)");
    let report =
        verifier::verify_gradient_expansion(&pb.data, &q, &config.eps_schedule, &settings).map_err(from_verifier)?;
    let m = report.predicted.len();
    let mut header = vec!["eps".to_string()];
    header.extend((1..=m).map(|i| format!("fd_{i}")));
    header.extend((1..=m).map(|i| format!("predicted_{i}")));
    header.push("mismatch".into());
    let rows: Vec<Vec<String>> = (0..report.eps.len())
        .map(|k| {
            let mut row = vec![num(report.eps[k])];
            row.extend(report.fd_gradient[k].iter().map(|x| num(*x)));
            row.extend(report.predicted.iter().map(|x| num(*x)));
            row.push(num(report.mismatches[k]));
            row
        })
        .collect();
    sink.csv("gradient.csv", &header, &rows)?;
    sink.json("gradient.json", &report)
}
