//! Implicit domains `Ω = {φ < 0}` with normals, principal curvatures and boundary sampling.
//!
//! Curvature sign convention: the shape operator is `Tᵀ ∇²φ T / |∇φ|` on the tangent space, so
//! convex domains have positive principal curvatures (a ball of radius `R` has `λᵢ = 1/R`), and
//! the mean curvature is their arithmetic mean.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{DiffExpr, EvalError, ParseError};

/// Newton projection stops once `|φ|` falls below this.
pub const PROJECTION_TOL: f64 = 1e-12;
pub const PROJECTION_MAX_ITER: usize = 50;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid domain: {0}")]
    Invalid(String),
    #[error("implicit function: {0}")]
    Parse(#[from] ParseError),
    #[error("implicit function: {0}")]
    Eval(#[from] EvalError),
    #[error("gradient of the implicit function vanishes at {point:?}")]
    Degenerate { point: Vec<f64> },
    #[error("projection from {start:?} did not converge in {iterations} iterations (|phi| = {residual:e})")]
    NoConvergence {
        start: Vec<f64>,
        iterations: usize,
        residual: f64,
    },
    #[error("boundary sampling found only {found} of {requested} points")]
    SamplingExhausted { requested: usize, found: usize },
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// Serializable description of a domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainSpec {
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
    Ellipsoid {
        semi_axes: Vec<f64>,
        #[serde(default)]
        center: Option<Vec<f64>>,
    },
    Implicit {
        expr: String,
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
enum Shape {
    Ball { center: Vec<f64>, radius: f64 },
    Ellipsoid { center: Vec<f64>, semi_axes: Vec<f64> },
    Implicit { expr: DiffExpr },
}

/// A bounded smooth domain given by an implicit function.
#[derive(Debug, Clone)]
pub struct Domain {
    dim: usize,
    shape: Shape,
    lower: Vec<f64>,
    upper: Vec<f64>,
    hessian_bound: f64,
    spec: DomainSpec,
}

/// A boundary point with its outward normal and principal frame.
#[derive(Debug, Clone)]
pub struct BoundaryPoint {
    pub point: DVector<f64>,
    /// Outward unit normal.
    pub normal: DVector<f64>,
    /// Orthonormal principal directions, ordered as `curvatures`.
    pub tangents: Vec<DVector<f64>>,
    /// Principal curvatures, ascending.
    pub curvatures: Vec<f64>,
    pub mean_curvature: f64,
}

impl BoundaryPoint {
    /// Projects `v` onto the tangent space.
    pub fn tangential_part(&self, v: &DVector<f64>) -> DVector<f64> {
        v - &self.normal * self.normal.dot(v)
    }

    /// Components of `v` in the tangent frame.
    pub fn tangent_coordinates(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.tangents.len(), self.tangents.iter().map(|t| t.dot(v)))
    }
}

fn halton(mut index: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    let b = base as f64;
    while index > 0 {
        f /= b;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Scrambled Halton sequence in the unit cube (Cranley–Patterson rotation from `seed`).
pub struct HaltonSequence {
    shift: Vec<f64>,
    index: u64,
}

impl HaltonSequence {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim <= PRIMES.len(), "Halton sequence limited to {} dimensions", PRIMES.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            shift: (0..dim).map(|_| rng.gen::<f64>()).collect(),
            index: 0,
        }
    }

    pub fn next_point(&mut self, out: &mut [f64]) {
        self.index += 1;
        for (j, o) in out.iter_mut().enumerate() {
            let v = halton(self.index, PRIMES[j]) + self.shift[j];
            *o = v - v.floor();
        }
    }
}

impl Domain {
    pub fn from_spec(spec: &DomainSpec, dim: usize) -> Result<Self> {
        match spec {
            DomainSpec::Ball { center, radius } => Self::ball(center.clone(), *radius),
            DomainSpec::Ellipsoid { semi_axes, center } => {
                let center = center.clone().unwrap_or_else(|| vec![0.0; semi_axes.len()]);
                Self::ellipsoid(semi_axes.clone(), center)
            }
            DomainSpec::Implicit { expr, lower, upper } => {
                Self::implicit(expr, dim, lower.clone(), upper.clone())
            }
        }
        .and_then(|d| {
            if d.dim != dim {
                Err(GeometryError::Invalid(format!(
                    "domain has dimension {} but N = {dim}",
                    d.dim
                )))
            } else {
                Ok(d)
            }
        })
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        if center.is_empty() || center.iter().any(|c| !c.is_finite()) {
            return Err(GeometryError::Invalid("ball center must be a finite point".into()));
        }
        if !(radius.is_finite() && radius > 0.0) {
            return Err(GeometryError::Invalid(format!("ball radius {radius} must be positive")));
        }
        let lower = center.iter().map(|c| c - radius).collect();
        let upper = center.iter().map(|c| c + radius).collect();
        Ok(Self {
            dim: center.len(),
            spec: DomainSpec::Ball {
                center: center.clone(),
                radius,
            },
            shape: Shape::Ball { center, radius },
            lower,
            upper,
            hessian_bound: 2.0,
        })
    }

    pub fn ellipsoid(semi_axes: Vec<f64>, center: Vec<f64>) -> Result<Self> {
        if semi_axes.is_empty() || semi_axes.len() != center.len() {
            return Err(GeometryError::Invalid(
                "ellipsoid semi-axes and center must have equal, nonzero length".into(),
            ));
        }
        if semi_axes.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(GeometryError::Invalid("ellipsoid semi-axes must be positive".into()));
        }
        let min_axis = semi_axes.iter().cloned().fold(f64::INFINITY, f64::min);
        let lower = center.iter().zip(&semi_axes).map(|(c, a)| c - a).collect();
        let upper = center.iter().zip(&semi_axes).map(|(c, a)| c + a).collect();
        Ok(Self {
            dim: center.len(),
            spec: DomainSpec::Ellipsoid {
                semi_axes: semi_axes.clone(),
                center: Some(center.clone()),
            },
            shape: Shape::Ellipsoid { center, semi_axes },
            lower,
            upper,
            hessian_bound: 2.0 / (min_axis * min_axis),
        })
    }

    /// Domain `{φ < 0}` inside the box `[lower, upper]`.
    pub fn implicit(src: &str, dim: usize, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != dim || upper.len() != dim {
            return Err(GeometryError::Invalid(format!(
                "implicit domain bounds must have length N = {dim}"
            )));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(GeometryError::Invalid("implicit domain bounds must satisfy lower < upper".into()));
        }
        let expr = DiffExpr::parse(src, dim)?;
        let mut domain = Self {
            dim,
            spec: DomainSpec::Implicit {
                expr: src.to_string(),
                lower: lower.clone(),
                upper: upper.clone(),
            },
            shape: Shape::Implicit { expr },
            lower,
            upper,
            hessian_bound: 0.0,
        };
        domain.hessian_bound = domain.sampled_hessian_bound(4096)?;
        domain.check_regular(512)?;
        Ok(domain)
    }

    fn sampled_hessian_bound(&self, samples: usize) -> Result<f64> {
        let mut seq = HaltonSequence::new(self.dim, 0x5eed);
        let mut u = vec![0.0; self.dim];
        let mut bound: f64 = 0.0;
        for _ in 0..samples {
            seq.next_point(&mut u);
            let x: Vec<f64> = (0..self.dim)
                .map(|i| {
                    let margin = 0.1 * (self.upper[i] - self.lower[i]);
                    self.lower[i] - margin + u[i] * (self.upper[i] - self.lower[i] + 2.0 * margin)
                })
                .collect();
            let h = self.hessian(&x)?;
            bound = bound.max(h.norm());
        }
        // sampled, so pad it
        Ok(1.25 * bound)
    }

    /// Checks that the boundary is met and `∇φ ≠ 0` near it on sampled points.
    fn check_regular(&self, samples: usize) -> Result<()> {
        let pts = self.sample_boundary(samples, 0)?;
        for bp in &pts {
            let g = self.gradient(bp.point.as_slice())?;
            if g.norm() < 1e-10 {
                return Err(GeometryError::Degenerate {
                    point: bp.point.iter().copied().collect(),
                });
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spec(&self) -> &DomainSpec {
        &self.spec
    }

    pub fn bounds(&self) -> (&[f64], &[f64]) {
        (&self.lower, &self.upper)
    }

    /// Upper bound on the spectral norm of `∇²φ` over the bounding box (sampled for implicit
    /// domains).
    pub fn hessian_bound(&self) -> f64 {
        self.hessian_bound
    }

    pub fn diameter(&self) -> f64 {
        match &self.shape {
            Shape::Ball { radius, .. } => 2.0 * radius,
            Shape::Ellipsoid { semi_axes, .. } => 2.0 * semi_axes.iter().cloned().fold(0.0, f64::max),
            Shape::Implicit { .. } => self
                .lower
                .iter()
                .zip(&self.upper)
                .map(|(l, u)| (u - l).powi(2))
                .sum::<f64>()
                .sqrt(),
        }
    }

    /// Value of `φ` and its gradient into `grad`.
    #[inline]
    pub fn phi_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        match &self.shape {
            Shape::Ball { center, radius } => {
                let mut s = 0.0;
                for i in 0..self.dim {
                    let d = x[i] - center[i];
                    grad[i] = 2.0 * d;
                    s += d * d;
                }
                Ok(s - radius * radius)
            }
            Shape::Ellipsoid { center, semi_axes } => {
                let mut s = 0.0;
                for i in 0..self.dim {
                    let a2 = semi_axes[i] * semi_axes[i];
                    let d = x[i] - center[i];
                    grad[i] = 2.0 * d / a2;
                    s += d * d / a2;
                }
                Ok(s - 1.0)
            }
            Shape::Implicit { expr } => {
                expr.gradient_into(x, grad)?;
                Ok(expr.eval(x)?)
            }
        }
    }

    #[inline]
    pub fn phi(&self, x: &[f64]) -> Result<f64> {
        match &self.shape {
            Shape::Ball { center, radius } => {
                Ok(x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum::<f64>() - radius * radius)
            }
            Shape::Ellipsoid { center, semi_axes } => Ok(x
                .iter()
                .zip(center)
                .zip(semi_axes)
                .map(|((a, c), s)| ((a - c) / s).powi(2))
                .sum::<f64>()
                - 1.0),
            Shape::Implicit { expr } => Ok(expr.eval(x)?),
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Result<DVector<f64>> {
        let mut g = vec![0.0; self.dim];
        self.phi_grad(x, &mut g)?;
        Ok(DVector::from_vec(g))
    }

    pub fn hessian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.dim;
        Ok(match &self.shape {
            Shape::Ball { .. } => DMatrix::identity(n, n) * 2.0,
            Shape::Ellipsoid { semi_axes, .. } => {
                DMatrix::from_diagonal(&DVector::from_iterator(n, semi_axes.iter().map(|a| 2.0 / (a * a))))
            }
            Shape::Implicit { expr } => DMatrix::from_row_slice(n, n, &expr.hessian(x)?),
        })
    }

    pub fn contains(&self, x: &[f64]) -> Result<bool> {
        Ok(self.phi(x)? < 0.0)
    }

    /// Newton projection along `∇φ` onto `{φ = 0}`, followed by the frame computation.
    pub fn project_to_boundary(&self, x: &[f64]) -> Result<BoundaryPoint> {
        if x.len() != self.dim {
            return Err(GeometryError::Invalid(format!(
                "point has dimension {} but N = {}",
                x.len(),
                self.dim
            )));
        }
        let mut y = x.to_vec();
        let mut g = vec![0.0; self.dim];
        for _ in 0..PROJECTION_MAX_ITER {
            let value = self.phi_grad(&y, &mut g)?;
            let g2: f64 = g.iter().map(|v| v * v).sum();
            if g2 < 1e-300 {
                return Err(GeometryError::Degenerate { point: y });
            }
            let step = value / g2;
            for (yi, gi) in y.iter_mut().zip(&g) {
                *yi -= step * gi;
            }
            // one step past the tolerance: quadratic convergence takes it to roundoff, which
            // keeps charts built on this projection smooth enough for finite differences
            if value.abs() < PROJECTION_TOL {
                return self.boundary_point(&y);
            }
        }
        let value = self.phi(&y)?;
        if value.abs() < PROJECTION_TOL {
            return self.boundary_point(&y);
        }
        Err(GeometryError::NoConvergence {
            start: x.to_vec(),
            iterations: PROJECTION_MAX_ITER,
            residual: value.abs(),
        })
    }

    /// Normal, principal frame and curvatures at a point assumed to lie on the boundary.
    pub fn boundary_point(&self, q: &[f64]) -> Result<BoundaryPoint> {
        let n = self.dim;
        let grad = self.gradient(q)?;
        let norm = grad.norm();
        if norm < 1e-300 || !norm.is_finite() {
            return Err(GeometryError::Degenerate { point: q.to_vec() });
        }
        let normal = grad / norm;
        let basis = tangent_basis(&normal);
        if n == 1 {
            return Ok(BoundaryPoint {
                point: DVector::from_column_slice(q),
                normal,
                tangents: Vec::new(),
                curvatures: Vec::new(),
                mean_curvature: 0.0,
            });
        }
        let t = DMatrix::from_columns(&basis);
        let shape_op = t.transpose() * self.hessian(q)? * &t / norm;
        let shape_op = (&shape_op + shape_op.transpose()) * 0.5;
        let eig = SymmetricEigen::new(shape_op);
        let mut order: Vec<usize> = (0..n - 1).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let mut tangents = Vec::with_capacity(n - 1);
        let mut curvatures = Vec::with_capacity(n - 1);
        for &k in &order {
            let mut dir = &t * eig.eigenvectors.column(k);
            dir /= dir.norm();
            // deterministic sign: largest component positive
            let imax = dir.iamax();
            if dir[imax] < 0.0 {
                dir = -dir;
            }
            tangents.push(dir);
            curvatures.push(eig.eigenvalues[k]);
        }
        let mean_curvature = curvatures.iter().sum::<f64>() / (n - 1) as f64;
        Ok(BoundaryPoint {
            point: DVector::from_column_slice(q),
            normal,
            tangents,
            curvatures,
            mean_curvature,
        })
    }

    /// Principal curvatures (ascending) and mean curvature at a boundary point.
    pub fn curvature_at(&self, q: &[f64]) -> Result<(Vec<f64>, f64)> {
        let bp = self.boundary_point(q)?;
        Ok((bp.curvatures, bp.mean_curvature))
    }

    /// `project_to_boundary(Q + t v)`.
    pub fn tangent_step(&self, q: &BoundaryPoint, v: &DVector<f64>, t: f64) -> Result<BoundaryPoint> {
        if t == 0.0 {
            return Ok(q.clone());
        }
        let x = &q.point + v * t;
        self.project_to_boundary(x.as_slice())
    }

    fn box_point(&self, u: &[f64], out: &mut [f64]) {
        for i in 0..self.dim {
            out[i] = self.lower[i] + u[i] * (self.upper[i] - self.lower[i]);
        }
    }

    /// Exactly `n` quasi-uniform boundary points: scrambled Halton points in a tube around the
    /// boundary, projected onto it.
    pub fn sample_boundary(&self, n: usize, seed: u64) -> Result<Vec<BoundaryPoint>> {
        let tube = 0.05 * self.diameter();
        let mut seq = HaltonSequence::new(self.dim, seed);
        let mut u = vec![0.0; self.dim];
        let mut x = vec![0.0; self.dim];
        let mut g = vec![0.0; self.dim];
        let mut out = Vec::with_capacity(n);
        let max_candidates = 2000 * n as u64 + 100_000;
        let mut tried = 0u64;
        while out.len() < n {
            tried += 1;
            if tried > max_candidates {
                return Err(GeometryError::SamplingExhausted {
                    requested: n,
                    found: out.len(),
                });
            }
            seq.next_point(&mut u);
            self.box_point(&u, &mut x);
            let value = self.phi_grad(&x, &mut g)?;
            let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if gn == 0.0 || value.abs() / gn >= tube {
                continue;
            }
            if self.dim == 1 {
                // the boundary is finite; cycle through its points
                if let Ok(bp) = self.project_to_boundary(&x) {
                    out.push(bp);
                }
                continue;
            }
            match self.project_to_boundary(&x) {
                Ok(bp) => out.push(bp),
                Err(GeometryError::NoConvergence { .. }) | Err(GeometryError::Degenerate { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(out)
    }

    /// Exactly `n` scrambled Halton points of the bounding box lying in `Ω`.
    pub fn sample_interior(&self, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        let mut seq = HaltonSequence::new(self.dim, seed);
        let mut u = vec![0.0; self.dim];
        let mut out = Vec::with_capacity(n);
        let max_candidates = 1000 * n as u64 + 100_000;
        let mut tried = 0;
        while out.len() < n {
            tried += 1;
            if tried > max_candidates {
                return Err(GeometryError::SamplingExhausted {
                    requested: n,
                    found: out.len(),
                });
            }
            seq.next_point(&mut u);
            let mut x = vec![0.0; self.dim];
            self.box_point(&u, &mut x);
            if self.phi(&x)? < 0.0 {
                out.push(x);
            }
        }
        Ok(out)
    }
}

/// Orthonormal basis of the complement of unit vector `nu`, by Gram–Schmidt on the coordinate
/// axes (skipping the axis most aligned with `nu`).
pub fn tangent_basis(nu: &DVector<f64>) -> Vec<DVector<f64>> {
    let n = nu.len();
    let skip = nu.iamax();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(n.saturating_sub(1));
    for k in (0..n).filter(|&k| k != skip) {
        let mut v = DVector::zeros(n);
        v[k] = 1.0;
        v -= nu * nu.dot(&v);
        for b in &basis {
            let c = b.dot(&v);
            v -= b * c;
        }
        // second pass for orthogonality at machine precision
        v -= nu * nu.dot(&v);
        for b in &basis {
            let c = b.dot(&v);
            v -= b * c;
        }
        let norm = v.norm();
        basis.push(v / norm);
    }
    basis
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn unit_ball_projection() {
        let d = Domain::ball(vec![0.0; 3], 1.0).unwrap();
        let bp = d.project_to_boundary(&[2.0, 0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(bp.point[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(bp.normal[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(bp.mean_curvature, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn boundary_point_is_fixed() {
        let d = Domain::ellipsoid(vec![1.0, 2.0, 3.0], vec![0.0; 3]).unwrap();
        let q = [0.6, 0.0, 3.0 * 0.8];
        let bp = d.project_to_boundary(&q).unwrap();
        assert!((bp.point - DVector::from_column_slice(&q)).norm() < 1e-12);
    }

    #[test]
    fn radius_two_sphere() {
        let d = Domain::ball(vec![1.0, -1.0, 0.5], 2.0).unwrap();
        let (lam, h) = d.curvature_at(&[1.0, -1.0, 2.5]).unwrap();
        assert_abs_diff_eq!(h, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(lam[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn frame_is_orthonormal() {
        let d = Domain::ellipsoid(vec![1.0, 1.5, 2.0], vec![0.0; 3]).unwrap();
        for bp in d.sample_boundary(20, 3).unwrap() {
            for (i, a) in bp.tangents.iter().enumerate() {
                assert_abs_diff_eq!(a.dot(&bp.normal), 0.0, epsilon = 1e-12);
                for (j, b) in bp.tangents.iter().enumerate() {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(a.dot(b), want, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn implicit_matches_ball() {
        let d = Domain::implicit("x1^2 + x2^2 + x3^2 - 4", 3, vec![-3.0; 3], vec![3.0; 3]).unwrap();
        let bp = d.project_to_boundary(&[1.0, 1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(bp.mean_curvature, 0.5, epsilon = 1e-10);
        assert_abs_diff_eq!(bp.point.norm(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn one_dimensional_interval() {
        let d = Domain::ball(vec![0.0], 1.0).unwrap();
        let bp = d.project_to_boundary(&[-0.7]).unwrap();
        assert_abs_diff_eq!(bp.point[0], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(bp.normal[0], -1.0);
        assert!(bp.tangents.is_empty());
    }
}
