//! The auxiliary functions `Γ`, `Σ` and `Σ̄` on the boundary, and the constants they use.
//!
//! ```text
//! Γ(Q) = V(Q)^{(p+1)/(p−1) − N/2} J(Q)^{N/2}
//! Σ(Q) = ½∫ J′(Q)[x]|∇U^Q|² + ½∫ V′(Q)[x](U^Q)² − ½ B̄^Q J(Q) H(Q) − (½ − 1/(p+1)) Ā^Q H(Q)
//! ```
//!
//! with both integrals over the half-space `{x·ν(Q) ≤ 0}`. `Σ̄` is the same quantity assembled
//! from the constants `k₁..k₄` when `J ≡ C_J` and `V ≡ C_V` on the boundary.

use std::sync::{Arc, OnceLock};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BoundaryPoint, Domain, GeometryError};
use crate::groundstate::{check_exponent, GroundStateError, RadialProfile};
use crate::potentials::{PotentialError, PotentialField};
use crate::scaled_state::{Integrand, ScaledGroundState, ScaledStateError};
use crate::sphere::{lower_hemisphere_normal_moment, sphere_area};

/// Relative boundary variation below which a field counts as boundary-constant.
pub const BOUNDARY_CONSTANCY_TOL: f64 = 1e-8;
/// Boundary samples used to detect boundary-constant fields.
pub const CONSTANCY_SAMPLES: usize = 1000;

#[derive(Debug, Error)]
pub enum AuxiliaryError {
    #[error("inconsistent problem data: {0}")]
    Invalid(String),
    #[error(transparent)]
    GroundState(#[from] GroundStateError),
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Scaled(#[from] ScaledStateError),
    #[error("{field} is not constant on the boundary (relative variation {variation:e}); the Sigma-bar formula needs boundary-constant J and V")]
    NotBoundaryConstant { field: &'static str, variation: f64 },
}

pub type Result<T> = std::result::Result<T, AuxiliaryError>;

/// Relative spread `(max − min) / max(|max|, |min|)` of a field over boundary samples.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BoundaryVariation {
    pub j_variation: f64,
    pub v_variation: f64,
    pub gamma_variation: f64,
    pub j_mean: f64,
    pub v_mean: f64,
}

/// Problem data independent of ε.
#[derive(Debug)]
pub struct ProblemData {
    pub n: usize,
    pub p: f64,
    pub domain: Arc<Domain>,
    pub j: PotentialField,
    pub v: PotentialField,
    pub profile: Arc<RadialProfile>,
    variation: OnceLock<std::result::Result<BoundaryVariation, String>>,
}

/// Named constants of the expansion at a boundary point.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Constants {
    pub c0: f64,
    pub a_bar: f64,
    pub b_bar: f64,
    pub c1: f64,
    pub c2: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
}

fn relative_spread(values: &[f64]) -> (f64, f64) {
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let scale = max.abs().max(min.abs());
    let spread = if scale == 0.0 { 0.0 } else { (max - min) / scale };
    (spread, mean)
}

impl ProblemData {
    pub fn new(
        domain: Arc<Domain>,
        j: PotentialField,
        v: PotentialField,
        profile: Arc<RadialProfile>,
    ) -> Result<Self> {
        let n = profile.dimension();
        let p = profile.exponent();
        check_exponent(n, p)?;
        if domain.dim() != n || j.dim() != n || v.dim() != n {
            return Err(AuxiliaryError::Invalid(format!(
                "dimensions disagree: profile N = {n}, domain {}, J {}, V {}",
                domain.dim(),
                j.dim(),
                v.dim()
            )));
        }
        Ok(Self {
            n,
            p,
            domain,
            j,
            v,
            profile,
            variation: OnceLock::new(),
        })
    }

    fn gamma_exponents(&self) -> (f64, f64) {
        let n = self.n as f64;
        ((self.p + 1.0) / (self.p - 1.0) - n / 2.0, n / 2.0)
    }

    /// `Γ` at an arbitrary point.
    pub fn gamma_at(&self, x: &[f64]) -> Result<f64> {
        let (a, b) = self.gamma_exponents();
        let j = self.j.eval(x)?;
        let v = self.v.eval(x)?;
        Ok(v.powf(a) * j.powf(b))
    }

    /// The scaled ground state anchored at `q`.
    pub fn scaled_state(&self, q: &BoundaryPoint) -> Result<ScaledGroundState> {
        let x = q.point.as_slice();
        Ok(ScaledGroundState::new(
            self.profile.clone(),
            q.point.clone(),
            q.normal.clone(),
            self.j.eval(x)?,
            self.v.eval(x)?,
        )?)
    }

    /// Boundary variation of `J`, `V` and `Γ`, sampled once and cached.
    pub fn boundary_variation(&self) -> Result<BoundaryVariation> {
        self.variation
            .get_or_init(|| self.sample_variation().map_err(|e| e.to_string()))
            .clone()
            .map_err(AuxiliaryError::Invalid)
    }

    fn sample_variation(&self) -> Result<BoundaryVariation> {
        let (j_const, v_const) = (self.j.as_constant(), self.v.as_constant());
        if let (Some(cj), Some(cv)) = (j_const, v_const) {
            return Ok(BoundaryVariation {
                j_variation: 0.0,
                v_variation: 0.0,
                gamma_variation: 0.0,
                j_mean: cj,
                v_mean: cv,
            });
        }
        let pts = self.domain.sample_boundary(CONSTANCY_SAMPLES, 0)?;
        let mut js = Vec::with_capacity(pts.len());
        let mut vs = Vec::with_capacity(pts.len());
        let mut gs = Vec::with_capacity(pts.len());
        for bp in &pts {
            let x = bp.point.as_slice();
            js.push(self.j.eval(x)?);
            vs.push(self.v.eval(x)?);
            gs.push(self.gamma_at(x)?);
        }
        let (jv, jm) = relative_spread(&js);
        let (vv, vm) = relative_spread(&vs);
        let (gv, _) = relative_spread(&gs);
        Ok(BoundaryVariation {
            j_variation: jv,
            v_variation: vv,
            gamma_variation: gv,
            j_mean: jm,
            v_mean: vm,
        })
    }
}

/// `Γ(Q)`.
pub fn gamma(data: &ProblemData, q: &BoundaryPoint) -> Result<f64> {
    data.gamma_at(q.point.as_slice())
}

/// Ambient gradient `∇Γ` at an arbitrary point.
pub fn gamma_gradient_at(data: &ProblemData, x: &[f64]) -> Result<DVector<f64>> {
    let (a, b) = data.gamma_exponents();
    let j = data.j.eval(x)?;
    let v = data.v.eval(x)?;
    let g = v.powf(a) * j.powf(b);
    let gj = data.j.grad(x)?;
    let gv = data.v.grad(x)?;
    Ok((gv * (a / v) + gj * (b / j)) * g)
}

/// Tangential gradient of `Γ` in the principal frame of `q`.
pub fn gamma_tangential_gradient(data: &ProblemData, q: &BoundaryPoint) -> Result<DVector<f64>> {
    let g = gamma_gradient_at(data, q.point.as_slice())?;
    Ok(q.tangent_coordinates(&g))
}

/// `Σ(Q)`, assembled from the scaled ground state at `Q`.
pub fn sigma(data: &ProblemData, q: &BoundaryPoint) -> Result<f64> {
    let x = q.point.as_slice();
    let state = data.scaled_state(q)?;
    let grad_j = data.j.grad(x)?;
    let grad_v = data.v.grad(x)?;
    // J′(Q)[x] = ∇J·x; the tangential part integrates to zero
    let j_term = 0.5 * grad_j.dot(&q.normal) * state.normal_first_moment(Integrand::GradSq);
    let v_term = 0.5 * grad_v.dot(&q.normal) * state.normal_first_moment(Integrand::USq);
    let (a_bar, b_bar) = state.boundary_trace_moments();
    let h = q.mean_curvature;
    let p = data.p;
    Ok(j_term + v_term - 0.5 * b_bar * state.j() * h - (0.5 - 1.0 / (p + 1.0)) * a_bar * h)
}

/// Boundary constants `(C_J, C_V)`, or an error naming the non-constant field.
pub fn boundary_constants(data: &ProblemData) -> Result<(f64, f64)> {
    let var = data.boundary_variation()?;
    if var.j_variation >= BOUNDARY_CONSTANCY_TOL {
        return Err(AuxiliaryError::NotBoundaryConstant {
            field: "J",
            variation: var.j_variation,
        });
    }
    if var.v_variation >= BOUNDARY_CONSTANCY_TOL {
        return Err(AuxiliaryError::NotBoundaryConstant {
            field: "V",
            variation: var.v_variation,
        });
    }
    Ok((var.j_mean, var.v_mean))
}

/// Ground-state trace constants `(Ā, B̄)` for `J ≡ C_J`, `V ≡ C_V`.
fn trace_constants(data: &ProblemData, cj: f64, cv: f64) -> (f64, f64) {
    let n = data.n;
    if n == 1 {
        return (0.0, 0.0);
    }
    let nf = n as f64;
    let p = data.p;
    let m = data.profile.moments();
    let alpha = cv.powf(1.0 / (p - 1.0));
    let beta = (cv / cj).sqrt();
    let area = sphere_area(n - 1);
    let a_bar = 0.5 * alpha.powf(p + 1.0) * beta.powf(-(nf + 1.0)) * area * m.trace_power;
    let b_bar = (nf - 1.0) / 4.0 * alpha * alpha * beta.powf(1.0 - nf) * area * m.trace_square;
    (a_bar, b_bar)
}

fn k_constants(data: &ProblemData, cj: f64, cv: f64) -> (f64, f64, f64, f64) {
    let p = data.p;
    let (a_bar, b_bar) = trace_constants(data, cj, cv);
    let k1 = cv.powf((p + 1.0) / (p - 1.0)) / (2.0 * cj);
    let k2 = (cv / cj).sqrt();
    let k3 = cv.powf(2.0 / (p - 1.0)) / 2.0;
    let k4 = -0.5 * b_bar * cj - (0.5 - 1.0 / (p + 1.0)) * a_bar;
    (k1, k2, k3, k4)
}

/// `Σ̄(Q) = k₁∫J′(Q)[x]|∇Ū|²(k₂x) + k₃∫V′(Q)[x]Ū(k₂x)² + k₄H(Q)`, defined when `J` and `V` are
/// constant on the boundary; coincides with `Σ` there.
///
/// `k₄ < 0` absorbs the minus signs of both curvature terms of `Σ`, so it enters with a plus.
pub fn sigma_bar(data: &ProblemData, q: &BoundaryPoint) -> Result<f64> {
    let (cj, cv) = boundary_constants(data)?;
    let x = q.point.as_slice();
    let (k1, k2, k3, k4) = k_constants(data, cj, cv);
    let n = data.n as f64;
    let a_n = lower_hemisphere_normal_moment(data.n);
    let m = data.profile.moments();
    // ∫_{x·ν≤0} (x·ν) g(k₂|x|) dx = a_N k₂^{-(N+1)} ∫ g(s) s^N ds
    let scale = k2.powf(-(n + 1.0)) * a_n;
    let dj = data.j.grad(x)?.dot(&q.normal);
    let dv = data.v.grad(x)?.dot(&q.normal);
    Ok(k1 * dj * scale * m.grad_first + k3 * dv * scale * m.square_first + k4 * q.mean_curvature)
}

/// All named constants at `Q`.
pub fn constants(data: &ProblemData, q: &BoundaryPoint) -> Result<Constants> {
    let p = data.p;
    let m = data.profile.moments();
    let c0 = (0.5 - 1.0 / (p + 1.0)) * 0.5 * sphere_area(data.n) * m.power;
    let state = data.scaled_state(q)?;
    let (a_bar, b_bar) = state.boundary_trace_moments();
    let c1 = 0.5 * b_bar * state.j() + (0.5 - 1.0 / (p + 1.0)) * a_bar;
    let c2 = -0.5 * state.normal_first_moment(Integrand::USq);
    let (k1, k2, k3, k4) = k_constants(data, state.j(), state.v());
    Ok(Constants {
        c0,
        a_bar,
        b_bar,
        c1,
        c2,
        k1,
        k2,
        k3,
        k4,
    })
}

/// `c₀ = (½ − 1/(p+1)) ∫_{ℝᴺ₊} Ū^{p+1}`.
pub fn c0(data: &ProblemData) -> f64 {
    let p = data.p;
    (0.5 - 1.0 / (p + 1.0)) * 0.5 * sphere_area(data.n) * data.profile.moments().power
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groundstate::solve_ground_state;

    fn profile() -> Arc<RadialProfile> {
        static P: OnceLock<Arc<RadialProfile>> = OnceLock::new();
        P.get_or_init(|| Arc::new(solve_ground_state(3, 3.0, 1e-10).unwrap())).clone()
    }

    fn ball(j: &str, v: &str) -> ProblemData {
        ProblemData::new(
            Arc::new(Domain::ball(vec![0.0; 3], 1.0).unwrap()),
            PotentialField::parse(j, 3).unwrap(),
            PotentialField::parse(v, 3).unwrap(),
            profile(),
        )
        .unwrap()
    }

    #[test]
    fn gamma_closed_form() {
        let data = ball("3", "2");
        let q = data.domain.boundary_point(&[0.0, 1.0, 0.0]).unwrap();
        // (p+1)/(p−1) − N/2 = 1/2 for N = p = 3
        let expect = 2f64.sqrt() * 3f64.powf(1.5);
        assert!((gamma(&data, &q).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn limit_energy_is_c0_gamma() {
        let data = ball("1+0.5*x2", "1+x1^2");
        let q = data.domain.boundary_point(&[0.6, 0.8, 0.0]).unwrap();
        let e = data.scaled_state(&q).unwrap().limit_energy().unwrap();
        let g = gamma(&data, &q).unwrap();
        assert!((e - c0(&data) * g).abs() < 1e-10 * e);
    }

    #[test]
    fn gamma_gradient_matches_differences() {
        let data = ball("1+0.5*x2", "1+x1^2");
        let x = [0.3, 0.2, -0.1];
        let g = gamma_gradient_at(&data, &x).unwrap();
        let h = 1e-5;
        for i in 0..3 {
            let (mut a, mut b) = (x, x);
            a[i] += h;
            b[i] -= h;
            let fd = (data.gamma_at(&a).unwrap() - data.gamma_at(&b).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-8, "component {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn constant_coefficients_reduce_to_curvature_term() {
        let data = ball("1", "1");
        let q = data.domain.boundary_point(&[0.0, 0.0, 1.0]).unwrap();
        let c = constants(&data, &q).unwrap();
        let s = sigma(&data, &q).unwrap();
        assert!((s + c.c1 * q.mean_curvature).abs() < 1e-12);
        assert!((sigma_bar(&data, &q).unwrap() - s).abs() < 1e-12);
        assert!(c.k4 < 0.0 && (c.k4 + c.c1).abs() < 1e-12);
    }

    #[test]
    fn sigma_bar_rejects_varying_coefficients() {
        let data = ball("1", "1+x1^2");
        let q = data.domain.boundary_point(&[1.0, 0.0, 0.0]).unwrap();
        match sigma_bar(&data, &q) {
            Err(AuxiliaryError::NotBoundaryConstant { field, .. }) => assert_eq!(field, "V"),
            other => panic!("expected NotBoundaryConstant, got {other:?}"),
        }
    }
}
