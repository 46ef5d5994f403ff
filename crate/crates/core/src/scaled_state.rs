//! The rescaled ground state `U^Q(x) = α Ū(β|x|)` anchored at a boundary point, with
//! `α = V(Q)^{1/(p−1)}` and `β = √(V(Q)/J(Q))`, and its half-space and trace integrals.
//!
//! Every integral is reduced to a one-dimensional radial moment of `Ū` times an angular
//! constant; the half-space is `{x·ν ≤ 0}` with `ν` the outward normal at the anchor.

use std::sync::Arc;

use nalgebra::DVector;
use thiserror::Error;

use crate::groundstate::{GroundStateError, RadialProfile};
use crate::sphere::{lower_hemisphere_normal_moment, sphere_area};

#[derive(Debug, Error)]
pub enum ScaledStateError {
    #[error("J(Q) = {j} and V(Q) = {v} must both be positive")]
    NonPositiveCoefficients { j: f64, v: f64 },
    #[error("direction must be a unit vector (|mu| = {0})")]
    NotUnit(f64),
    #[error("vector has dimension {got}, expected {expected}")]
    Dimension { got: usize, expected: usize },
    #[error("power q = {0} must exceed 1")]
    InvalidPower(f64),
    #[error(transparent)]
    GroundState(#[from] GroundStateError),
}

pub type Result<T> = std::result::Result<T, ScaledStateError>;

/// Integrand selector for half-space first moments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrand {
    /// `|∇U^Q|²`
    GradSq,
    /// `(U^Q)²`
    USq,
}

#[derive(Debug, Clone)]
pub struct ScaledGroundState {
    profile: Arc<RadialProfile>,
    anchor: DVector<f64>,
    normal: DVector<f64>,
    j: f64,
    v: f64,
    alpha: f64,
    beta: f64,
}

impl ScaledGroundState {
    pub fn new(
        profile: Arc<RadialProfile>,
        anchor: DVector<f64>,
        normal: DVector<f64>,
        j: f64,
        v: f64,
    ) -> Result<Self> {
        let n = profile.dimension();
        for vec in [&anchor, &normal] {
            if vec.len() != n {
                return Err(ScaledStateError::Dimension {
                    got: vec.len(),
                    expected: n,
                });
            }
        }
        if !(j > 0.0 && v > 0.0 && j.is_finite() && v.is_finite()) {
            return Err(ScaledStateError::NonPositiveCoefficients { j, v });
        }
        let alpha = v.powf(1.0 / (profile.exponent() - 1.0));
        let beta = (v / j).sqrt();
        Ok(Self {
            profile,
            anchor,
            normal,
            j,
            v,
            alpha,
            beta,
        })
    }

    pub fn profile(&self) -> &RadialProfile {
        &self.profile
    }

    pub fn anchor(&self) -> &DVector<f64> {
        &self.anchor
    }

    pub fn normal(&self) -> &DVector<f64> {
        &self.normal
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn j(&self) -> f64 {
        self.j
    }

    pub fn v(&self) -> f64 {
        self.v
    }

    fn dim(&self) -> usize {
        self.profile.dimension()
    }

    fn p(&self) -> f64 {
        self.profile.exponent()
    }

    /// Value and radial derivative `(U, ∂_r U)` at distance `r` from the anchor.
    #[inline]
    pub fn radial(&self, r: f64) -> (f64, f64) {
        let (u, du) = self.profile.eval_both(self.beta * r);
        (self.alpha * u, self.alpha * self.beta * du)
    }

    /// `U^Q(x)` for `x` relative to the anchor.
    pub fn evaluate(&self, x: &DVector<f64>) -> f64 {
        self.radial(x.norm()).0
    }

    /// `∇U^Q(x)`; zero at the origin.
    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let r = x.norm();
        if r == 0.0 {
            return DVector::zeros(x.len());
        }
        x * (self.radial(r).1 / r)
    }

    /// `∫_{ℝᴺ₊} (U^Q)^q`.
    pub fn halfspace_power_integral(&self, q: f64) -> Result<f64> {
        if !(q > 1.0 && q.is_finite()) {
            return Err(ScaledStateError::InvalidPower(q));
        }
        let n = self.dim() as f64;
        let m = if q == self.p() + 1.0 {
            self.profile.moments().power
        } else {
            self.profile.radial_integral(q, 0, n - 1.0)?
        };
        Ok(self.alpha.powf(q) * self.beta.powf(-n) * 0.5 * sphere_area(self.dim()) * m)
    }

    /// `∫_{x·ν ≤ 0} (x·μ) g(x) dx` with `g = |∇U^Q|²` or `(U^Q)²`.
    pub fn halfspace_first_moment(&self, mu: &DVector<f64>, integrand: Integrand) -> Result<f64> {
        if mu.len() != self.dim() {
            return Err(ScaledStateError::Dimension {
                got: mu.len(),
                expected: self.dim(),
            });
        }
        let norm = mu.norm();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(ScaledStateError::NotUnit(norm));
        }
        Ok(mu.dot(&self.normal) * self.normal_first_moment(integrand))
    }

    /// `∫_{x·ν ≤ 0} (x·ν) g(x) dx`, negative.
    pub fn normal_first_moment(&self, integrand: Integrand) -> f64 {
        let n = self.dim();
        let a_n = lower_hemisphere_normal_moment(n);
        let m = self.profile.moments();
        let nf = n as f64;
        let a2 = self.alpha * self.alpha;
        match integrand {
            // |∇U|² = α²β² Ū′(βr)², ∫ Ū′(βr)² r^N dr = β^{-(N+1)} ∫ Ū′² s^N ds
            Integrand::GradSq => a_n * a2 * self.beta.powf(1.0 - nf) * m.grad_first,
            Integrand::USq => a_n * a2 * self.beta.powf(-(nf + 1.0)) * m.square_first,
        }
    }

    /// `(Ā^Q, B̄^Q)` from the trace `U^Q(x′, 0) = α Ū(β|x′|)` over ℝᴺ⁻¹.
    pub fn boundary_trace_moments(&self) -> (f64, f64) {
        let n = self.dim();
        if n == 1 {
            // the trace lives on a point: |x′|² and the factor N−1 both vanish
            return (0.0, 0.0);
        }
        let nf = n as f64;
        let area = sphere_area(n - 1);
        let m = self.profile.moments();
        let a_bar = 0.5
            * self.alpha.powf(self.p() + 1.0)
            * self.beta.powf(-(nf + 1.0))
            * area
            * m.trace_power;
        let b_bar = (nf - 1.0) / 4.0 * self.alpha.powi(2) * self.beta.powf(-(nf - 1.0)) * area * m.trace_square;
        (a_bar, b_bar)
    }

    /// Half-space limit energy `(½ − 1/(p+1)) ∫_{ℝᴺ₊} (U^Q)^{p+1}`.
    pub fn limit_energy(&self) -> Result<f64> {
        let p = self.p();
        Ok((0.5 - 1.0 / (p + 1.0)) * self.halfspace_power_integral(p + 1.0)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groundstate::solve_ground_state;
    use std::sync::OnceLock;

    fn profile() -> Arc<RadialProfile> {
        static P: OnceLock<Arc<RadialProfile>> = OnceLock::new();
        P.get_or_init(|| Arc::new(solve_ground_state(3, 3.0, 1e-10).unwrap()))
            .clone()
    }

    fn state(j: f64, v: f64) -> ScaledGroundState {
        let nu = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        ScaledGroundState::new(profile(), DVector::zeros(3), nu, j, v).unwrap()
    }

    #[test]
    fn identity_scaling() {
        let s = state(1.0, 1.0);
        let x = DVector::from_vec(vec![0.3, -0.2, 0.5]);
        assert_eq!(s.evaluate(&x), profile().eval(x.norm()).unwrap());
        let s = state(1.0, 4.0);
        assert!((s.evaluate(&DVector::zeros(3)) - 2.0 * profile().alpha()).abs() < 1e-14);
    }

    #[test]
    fn gradient_is_odd() {
        let s = state(2.0, 1.5);
        let x = DVector::from_vec(vec![0.3, -0.2, 0.5]);
        let g1 = s.gradient(&x);
        let g2 = s.gradient(&-x);
        assert!((g1 + g2).norm() < 1e-15);
        assert_eq!(s.gradient(&DVector::zeros(3)).norm(), 0.0);
    }

    #[test]
    fn tangential_moment_vanishes() {
        let s = state(1.0, 1.0);
        let mu = DVector::from_vec(vec![0.6, 0.8, 0.0]);
        assert_eq!(s.halfspace_first_moment(&mu, Integrand::USq).unwrap(), 0.0);
        let bad = DVector::from_vec(vec![1.0, 1.0, 0.0]);
        assert!(s.halfspace_first_moment(&bad, Integrand::GradSq).is_err());
    }

    #[test]
    fn trace_moments_positive_and_scale() {
        let base = state(1.0, 1.0).boundary_trace_moments();
        assert!(base.0 > 0.0 && base.1 > 0.0);
        let s = state(1.3, 2.0);
        let (a, b) = s.boundary_trace_moments();
        let (al, be) = (s.alpha(), s.beta());
        assert!((a - al.powi(4) * be.powi(-4) * base.0).abs() < 1e-12 * a);
        assert!((b - al.powi(2) * be.powi(-2) * base.1).abs() < 1e-12 * b);
    }

    #[test]
    fn power_integral_scaling() {
        let one = state(1.0, 1.0).halfspace_power_integral(4.0).unwrap();
        let two = state(2.0, 1.0).halfspace_power_integral(4.0).unwrap();
        assert!((two - 2f64.powf(1.5) * one).abs() < 1e-12 * two);
    }
}
