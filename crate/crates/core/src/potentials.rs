//! Coefficient fields `J` and `V` with exact derivatives and sampled positivity checks.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{DiffExpr, EvalError, ParseError};
use crate::geometry::{Domain, GeometryError};

/// Default number of samples used by [`validate_assumptions`].
pub const DEFAULT_VALIDATION_SAMPLES: usize = 100_000;

#[derive(Debug, Error)]
pub enum PotentialError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("field '{field}' is not positive on the domain: sampled minimum {min:e} at {at:?}")]
    NotPositive { field: String, min: f64, at: Vec<f64> },
    #[error("point has dimension {got}, field expects {expected}")]
    Dimension { got: usize, expected: usize },
}

pub type Result<T> = std::result::Result<T, PotentialError>;

/// A scalar field over ℝᴺ with symbolic gradient and Hessian.
#[derive(Debug, Clone)]
pub struct PotentialField {
    source: String,
    expr: DiffExpr,
}

/// Sampled evidence that a field satisfies the positivity and bounded-Hessian hypotheses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub min_value: f64,
    pub max_value: f64,
    pub max_hessian_entry: f64,
    pub samples: usize,
}

impl PotentialField {
    /// Parses `src` over `x1..xN`.
    pub fn parse(src: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            source: src.to_string(),
            expr: DiffExpr::parse(src, dim)?,
        })
    }

    pub fn constant(value: f64, dim: usize) -> Self {
        let src = format!("{value}");
        Self {
            expr: DiffExpr::parse(&src, dim).expect("a number always parses"),
            source: src,
        }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn dim(&self) -> usize {
        self.expr.dim()
    }

    /// Canonical printed form; re-parses to a field with identical values.
    pub fn pretty(&self) -> String {
        self.expr.tree().to_string()
    }

    /// `Some(c)` if the field folds to a constant.
    pub fn as_constant(&self) -> Option<f64> {
        self.expr.constant()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(PotentialError::Dimension {
                got: x.len(),
                expected: self.dim(),
            });
        }
        Ok(())
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        Ok(self.expr.eval(x)?)
    }

    pub fn grad(&self, x: &[f64]) -> Result<DVector<f64>> {
        self.check(x)?;
        Ok(DVector::from_vec(self.expr.gradient(x)?))
    }

    pub fn hessian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check(x)?;
        let n = self.dim();
        Ok(DMatrix::from_row_slice(n, n, &self.expr.hessian(x)?))
    }

    /// Unchecked fast evaluation for quadrature loops.
    #[inline]
    pub(crate) fn eval_raw(&self, x: &[f64]) -> std::result::Result<f64, EvalError> {
        self.expr.eval(x)
    }
}

/// Samples the field over `Ω̄` (interior and boundary points) and certifies positivity.
pub fn validate_assumptions(
    field: &PotentialField,
    domain: &Domain,
    n_samples: usize,
    seed: u64,
) -> Result<Certificate> {
    let n_boundary = (n_samples / 10).max(1);
    let n_interior = n_samples.saturating_sub(n_boundary).max(1);
    let mut points = domain.sample_interior(n_interior, seed)?;
    points.extend(
        domain
            .sample_boundary(n_boundary, seed ^ 0x9e37_79b9)?
            .into_iter()
            .map(|bp| bp.point.iter().copied().collect()),
    );
    let constant = field.as_constant();
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut argmin = Vec::new();
    let mut hess: f64 = 0.0;
    for x in &points {
        let v = field.eval(x)?;
        if v < min {
            min = v;
            argmin = x.clone();
        }
        max = max.max(v);
        if constant.is_none() {
            hess = hess.max(field.hessian(x)?.amax());
        }
    }
    if min <= 0.0 {
        return Err(PotentialError::NotPositive {
            field: field.source().to_string(),
            min,
            at: argmin,
        });
    }
    Ok(Certificate {
        min_value: min,
        max_value: max,
        max_hessian_entry: hess,
        samples: points.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_and_hessian() {
        let f = PotentialField::parse("x1*x2", 3).unwrap();
        assert_eq!(f.grad(&[3.0, 5.0, 0.0]).unwrap().as_slice(), &[5.0, 3.0, 0.0]);
        let f = PotentialField::parse("x1^2", 3).unwrap();
        assert_eq!(f.hessian(&[1.0, 2.0, 3.0]).unwrap(), DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.0, 0.0])));
    }

    #[test]
    fn exponential_at_origin() {
        let f = PotentialField::parse("exp(-(x1^2+x2^2+x3^2))", 3).unwrap();
        assert_eq!(f.eval(&[0.0; 3]).unwrap(), 1.0);
    }

    #[test]
    fn assumptions() {
        let ball = Domain::ball(vec![0.0; 3], 1.0).unwrap();
        let one = PotentialField::parse("1", 3).unwrap();
        let cert = validate_assumptions(&one, &ball, 2000, 1).unwrap();
        assert_eq!(cert.min_value, 1.0);
        let lin = PotentialField::parse("x1", 3).unwrap();
        assert!(matches!(
            validate_assumptions(&lin, &ball, 2000, 1),
            Err(PotentialError::NotPositive { .. })
        ));
        let s = PotentialField::parse("2+sin(x1)", 3).unwrap();
        assert!(validate_assumptions(&s, &ball, 2000, 1).unwrap().min_value >= 1.0);
    }

    #[test]
    fn dimension_mismatch() {
        let f = PotentialField::parse("x1", 2).unwrap();
        assert!(matches!(f.eval(&[1.0]), Err(PotentialError::Dimension { .. })));
    }
}
