//! Critical points of `Γ` or `Σ̄` on the boundary, classified and tagged with the regime
//! that turns them into predicted concentration points.
//!
//! Derivatives are taken in the chart `s ↦ project(Q + T s)`, `T` the principal frame at
//! `Q`. Its differential at `s = 0` is the identity onto the tangent space, so at a critical
//! point the chart Hessian is the Riemannian one.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auxiliary::{self, AuxiliaryError, ProblemData};
use crate::geometry::{BoundaryPoint, GeometryError};

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error(
        "Gamma is constant on the boundary (relative variation {0:e}); its critical points carry no \
         information here. This is the Thm2 regime: use SIGMA_BAR"
    )]
    ConstantGamma(f64),
    #[error("the boundary of a one-dimensional domain has no tangent directions")]
    NoTangents,
    #[error(transparent)]
    Auxiliary(#[from] AuxiliaryError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, PredictorError>;

/// Relative boundary variation of `Γ` below which the `Σ̄` landscape is used.
pub const GAMMA_CONSTANCY_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LandscapeFunction {
    Gamma,
    SigmaBar,
}

impl LandscapeFunction {
    pub fn eval(self, data: &ProblemData, q: &BoundaryPoint) -> Result<f64> {
        Ok(match self {
            Self::Gamma => auxiliary::gamma(data, q)?,
            Self::SigmaBar => auxiliary::sigma_bar(data, q)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Classification {
    Min,
    Max,
    Saddle,
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TheoremTag {
    /// Non-degenerate critical point of `Γ`.
    Thm1a,
    /// Isolated strict local extremum of `Γ`.
    Thm1b,
    /// Isolated strict local extremum of `Σ̄` under boundary-constant coefficients.
    Thm2,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PredictorSettings {
    /// Boundary samples for the landscape scan.
    pub samples: usize,
    /// Upper bound on multistart seeds.
    pub max_starts: usize,
    /// Neighbours compared when picking scan extrema as seeds.
    pub neighbours: usize,
    /// Gradient-norm tolerance for stationarity.
    pub stationarity_tol: f64,
    /// Eigenvalues with `|λ| ≤ degeneracy_tol · max(1, |f|)` count as zero.
    pub degeneracy_tol: f64,
    /// Finite-difference step of the Hessian (checked against half of it).
    pub hessian_step: f64,
    /// Finite-difference step of the gradient (fourth-order rule).
    pub gradient_step: f64,
    pub max_iterations: usize,
    /// Non-degenerate reports closer than this times the diameter are merged.
    pub merge_distance: f64,
    /// Degenerate stationary points on the same level are chained into one family at this
    /// times the diameter.
    pub family_link: f64,
    pub seed: u64,
}

impl Default for PredictorSettings {
    fn default() -> Self {
        Self {
            samples: 10_000,
            max_starts: 100,
            neighbours: 10,
            stationarity_tol: 1e-9,
            degeneracy_tol: 1e-6,
            hessian_step: 1e-4,
            gradient_step: 1e-3,
            max_iterations: 200,
            merge_distance: 1e-5,
            family_link: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriticalPointReport {
    pub location: Vec<f64>,
    pub function: LandscapeFunction,
    pub value: f64,
    pub gradient_norm: f64,
    /// Ascending.
    pub hessian_eigenvalues: Vec<f64>,
    pub classification: Classification,
    pub nondegenerate: bool,
    pub tags: Vec<TheoremTag>,
    /// Smallest `|λ|`: how strict the extremum is; left to the user to judge.
    pub strictness_margin: f64,
    /// Largest entry change of the Hessian when the step is halved.
    pub hessian_step_change: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Stationary points merged into this report (a degenerate family counts all of its members).
    pub family_size: usize,
}

impl CriticalPointReport {
    /// Re-checks the report's own consistency conditions.
    pub fn is_consistent(&self, settings: &PredictorSettings) -> bool {
        let tol = settings.degeneracy_tol * self.value.abs().max(1.0);
        let nondeg = self.hessian_eigenvalues.iter().all(|l| l.abs() > tol);
        let class_ok = match self.classification {
            Classification::Min => nondeg && self.hessian_eigenvalues.iter().all(|l| *l > 0.0),
            Classification::Max => nondeg && self.hessian_eigenvalues.iter().all(|l| *l < 0.0),
            Classification::Saddle => nondeg,
            Classification::Degenerate => !nondeg || !self.converged,
        };
        let stationary = !self.converged || self.gradient_norm <= settings.stationarity_tol;
        class_ok && stationary && (nondeg && self.converged) == self.nondegenerate
    }
}

/// Outcome of [`predict_concentration`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Prediction {
    pub function: LandscapeFunction,
    pub gamma_variation: f64,
    pub seeds: usize,
    /// Sorted by value (descending), ties by coordinates.
    pub reports: Vec<CriticalPointReport>,
}

impl Prediction {
    /// Reports carrying at least one theorem tag.
    pub fn predicted(&self) -> impl Iterator<Item = &CriticalPointReport> {
        self.reports.iter().filter(|r| !r.tags.is_empty())
    }
}

/// `func` on `sample_boundary(n, seed)`.
pub fn scan_landscape(
    data: &ProblemData,
    func: LandscapeFunction,
    n: usize,
    seed: u64,
) -> Result<Vec<(BoundaryPoint, f64)>> {
    let points = data.domain.sample_boundary(n, seed)?;
    points
        .into_iter()
        .map(|q| {
            let v = func.eval(data, &q)?;
            Ok((q, v))
        })
        .collect()
}

struct Chart<'a> {
    data: &'a ProblemData,
    func: LandscapeFunction,
    base: BoundaryPoint,
}

impl Chart<'_> {
    fn dim(&self) -> usize {
        self.base.tangents.len()
    }

    fn point(&self, s: &[f64]) -> Result<BoundaryPoint> {
        if s.iter().all(|v| *v == 0.0) {
            return Ok(self.base.clone());
        }
        let mut v = DVector::zeros(self.base.point.len());
        for (t, si) in self.base.tangents.iter().zip(s) {
            v += t * *si;
        }
        Ok(self.data.domain.tangent_step(&self.base, &v, 1.0)?)
    }

    fn value(&self, s: &[f64]) -> Result<f64> {
        self.func.eval(self.data, &self.point(s)?)
    }

    fn along(&self, i: usize, t: f64) -> Result<f64> {
        let mut s = vec![0.0; self.dim()];
        s[i] = t;
        self.value(&s)
    }

    fn gradient(&self, h: f64) -> Result<DVector<f64>> {
        let m = self.dim();
        let mut g = DVector::zeros(m);
        for i in 0..m {
            let (a, b, c, d) = (self.along(i, 2.0 * h)?, self.along(i, h)?, self.along(i, -h)?, self.along(i, -2.0 * h)?);
            g[i] = (-a + 8.0 * b - 8.0 * c + d) / (12.0 * h);
        }
        Ok(g)
    }

    fn hessian(&self, h: f64) -> Result<DMatrix<f64>> {
        let m = self.dim();
        let f0 = self.value(&vec![0.0; m])?;
        let mut hess = DMatrix::zeros(m, m);
        for i in 0..m {
            hess[(i, i)] = (self.along(i, h)? - 2.0 * f0 + self.along(i, -h)?) / (h * h);
            for j in 0..i {
                let mut s = vec![0.0; m];
                let mut corner = |si: f64, sj: f64| -> Result<f64> {
                    s[i] = si;
                    s[j] = sj;
                    self.value(&s)
                };
                let v = (corner(h, h)? - corner(h, -h)? - corner(-h, h)? + corner(-h, -h)?) / (4.0 * h * h);
                hess[(i, j)] = v;
                hess[(j, i)] = v;
            }
        }
        Ok(hess)
    }
}

fn chart(data: &ProblemData, func: LandscapeFunction, base: BoundaryPoint) -> Chart<'_> {
    Chart { data, func, base }
}

/// Pseudo-inverse Newton step, dropping eigen-directions below `cutoff`.
fn newton_step(hess: &DMatrix<f64>, g: &DVector<f64>, cutoff: f64) -> DVector<f64> {
    let eig = SymmetricEigen::new(hess.clone());
    let mut step = DVector::zeros(g.len());
    for k in 0..g.len() {
        let l = eig.eigenvalues[k];
        if l.abs() > cutoff {
            let v = eig.eigenvectors.column(k);
            step -= v * (v.dot(g) / l);
        }
    }
    step
}

fn check_regime(data: &ProblemData, func: LandscapeFunction) -> Result<f64> {
    let variation = data.boundary_variation()?.gamma_variation;
    if func == LandscapeFunction::Gamma && variation < GAMMA_CONSTANCY_THRESHOLD {
        return Err(PredictorError::ConstantGamma(variation));
    }
    Ok(variation)
}

/// Projected ascent (`direction > 0`) or descent, then tangential Newton, then classification.
fn refine(
    data: &ProblemData,
    func: LandscapeFunction,
    start: BoundaryPoint,
    direction: f64,
    settings: &PredictorSettings,
) -> Result<CriticalPointReport> {
    if start.tangents.is_empty() {
        return Err(PredictorError::NoTangents);
    }
    let diam = data.domain.diameter();
    let h = settings.gradient_step;
    let mut q = start;
    let mut f = func.eval(data, &q)?;
    let mut g = chart(data, func, q.clone()).gradient(h)?;
    let mut iterations = 0;
    let mut eta = 0.01 * diam / g.norm().max(1e-300);
    let coarse = 1e-3 * f.abs().max(1.0);

    // first-order phase
    while iterations < settings.max_iterations / 2 && g.norm() > coarse {
        iterations += 1;
        let c = chart(data, func, q.clone());
        let mut accepted = false;
        for _ in 0..40 {
            let s: Vec<f64> = (&g * (direction * eta)).iter().copied().collect();
            let trial = c.point(&s)?;
            let ft = func.eval(data, &trial)?;
            if direction * (ft - f) >= 1e-4 * eta * g.norm_squared() {
                q = trial;
                f = ft;
                eta *= 2.0;
                accepted = true;
                break;
            }
            eta *= 0.5;
        }
        if !accepted {
            break;
        }
        g = chart(data, func, q.clone()).gradient(h)?;
    }

    // Newton phase on the gradient norm
    let scale = f.abs().max(1.0);
    let cutoff = settings.degeneracy_tol * scale;
    while iterations < settings.max_iterations && g.norm() > settings.stationarity_tol {
        iterations += 1;
        let c = chart(data, func, q.clone());
        let hess = c.hessian(settings.hessian_step)?;
        let step = newton_step(&hess, &g, cutoff);
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let s: Vec<f64> = (&step * t).iter().copied().collect();
            let trial = c.point(&s)?;
            let gt = chart(data, func, trial.clone()).gradient(h)?;
            if gt.norm() < g.norm() {
                q = trial;
                g = gt;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    f = func.eval(data, &q)?;
    let converged = g.norm() <= settings.stationarity_tol;

    let c = chart(data, func, q.clone());
    let hess = c.hessian(settings.hessian_step)?;
    let hess_half = c.hessian(0.5 * settings.hessian_step)?;
    let hessian_step_change = (&hess - &hess_half).amax();
    let mut eigenvalues: Vec<f64> = SymmetricEigen::new(hess).eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(f64::total_cmp);
    let tol = settings.degeneracy_tol * f.abs().max(1.0);
    let nondeg_spectrum = eigenvalues.iter().all(|l| l.abs() > tol);
    let nondegenerate = converged && nondeg_spectrum;
    let classification = if !nondegenerate {
        Classification::Degenerate
    } else if eigenvalues.iter().all(|l| *l > 0.0) {
        Classification::Min
    } else if eigenvalues.iter().all(|l| *l < 0.0) {
        Classification::Max
    } else {
        Classification::Saddle
    };
    let extremum = matches!(classification, Classification::Min | Classification::Max);
    let tags = match func {
        LandscapeFunction::Gamma if nondegenerate && extremum => vec![TheoremTag::Thm1a, TheoremTag::Thm1b],
        LandscapeFunction::Gamma if nondegenerate => vec![TheoremTag::Thm1a],
        LandscapeFunction::SigmaBar if nondegenerate && extremum => vec![TheoremTag::Thm2],
        _ => Vec::new(),
    };
    if !converged {
        log::debug!(
            "refinement stalled at {:?} after {iterations} iterations, |grad| = {:e}",
            q.point.as_slice(),
            g.norm()
        );
    }
    Ok(CriticalPointReport {
        location: q.point.iter().copied().collect(),
        function: func,
        value: f,
        gradient_norm: g.norm(),
        strictness_margin: eigenvalues.iter().map(|l| l.abs()).fold(f64::INFINITY, f64::min),
        hessian_eigenvalues: eigenvalues,
        classification,
        nondegenerate,
        tags,
        hessian_step_change,
        converged,
        iterations,
        family_size: 1,
    })
}

/// Refines a critical point of `func` starting from a boundary point. Ascends if the
/// function increases along its gradient from `start`, which is every non-stationary case
/// the caller cannot distinguish; use [`predict_concentration`] for seeded multistart.
pub fn refine_critical_point(
    data: &ProblemData,
    func: LandscapeFunction,
    start: &BoundaryPoint,
    settings: &PredictorSettings,
) -> Result<CriticalPointReport> {
    check_regime(data, func)?;
    refine(data, func, start.clone(), 1.0, settings)
}

/// Local extrema of the scan table among nearest neighbours, as `(index, direction)`.
fn scan_seeds(table: &[(BoundaryPoint, f64)], settings: &PredictorSettings) -> Vec<(usize, f64)> {
    let k = settings.neighbours.min(table.len().saturating_sub(1));
    let mut maxima = Vec::new();
    let mut minima = Vec::new();
    let mut dists: Vec<(f64, usize)> = Vec::with_capacity(table.len());
    for (i, (qi, vi)) in table.iter().enumerate() {
        dists.clear();
        dists.extend(
            table
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(j, (qj, _))| ((&qi.point - &qj.point).norm_squared(), j)),
        );
        if k == 0 {
            continue;
        }
        dists.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let near = &dists[..k];
        if near.iter().all(|(_, j)| table[*j].1 < *vi) {
            maxima.push(i);
        }
        if near.iter().all(|(_, j)| table[*j].1 > *vi) {
            minima.push(i);
        }
    }
    maxima.sort_by(|&a, &b| table[b].1.total_cmp(&table[a].1).then(a.cmp(&b)));
    minima.sort_by(|&a, &b| table[a].1.total_cmp(&table[b].1).then(a.cmp(&b)));
    let mut seeds = Vec::new();
    let (mut ia, mut ib) = (maxima.iter(), minima.iter());
    while seeds.len() < settings.max_starts {
        let (a, b) = (ia.next(), ib.next());
        if a.is_none() && b.is_none() {
            break;
        }
        if let Some(&i) = a {
            seeds.push((i, 1.0));
        }
        if let Some(&i) = b {
            if seeds.len() < settings.max_starts {
                seeds.push((i, -1.0));
            }
        }
    }
    seeds
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Merges duplicates and chains degenerate stationary points into families.
fn consolidate(reports: Vec<CriticalPointReport>, diam: f64, settings: &PredictorSettings) -> Vec<CriticalPointReport> {
    let mut out: Vec<CriticalPointReport> = Vec::new();
    let mut degenerate: Vec<CriticalPointReport> = Vec::new();
    for r in reports {
        if !r.converged {
            continue;
        }
        if !r.nondegenerate {
            degenerate.push(r);
            continue;
        }
        match out
            .iter_mut()
            .find(|o| distance(&o.location, &r.location) <= settings.merge_distance * diam)
        {
            Some(o) => {
                o.family_size += 1;
                // keep the better-converged representative
                if r.gradient_norm < o.gradient_norm {
                    let size = o.family_size;
                    *o = r;
                    o.family_size = size;
                }
            }
            None => out.push(r),
        }
    }
    // single-linkage clustering
    let n = degenerate.len();
    let mut label: Vec<usize> = (0..n).collect();
    fn root(label: &mut [usize], mut i: usize) -> usize {
        while label[i] != i {
            label[i] = label[label[i]];
            i = label[i];
        }
        i
    }
    for i in 0..n {
        for j in 0..i {
            let (a, b) = (&degenerate[i], &degenerate[j]);
            let same_level = (a.value - b.value).abs() <= settings.degeneracy_tol * a.value.abs().max(1.0);
            if same_level && distance(&a.location, &b.location) <= settings.family_link * diam {
                let (a, b) = (root(&mut label, i), root(&mut label, j));
                label[a.max(b)] = a.min(b);
            }
        }
    }
    let mut families: Vec<(usize, CriticalPointReport)> = Vec::new();
    for i in 0..n {
        let r = root(&mut label, i);
        match families.iter_mut().find(|(root_i, _)| *root_i == r) {
            Some((_, rep)) => {
                rep.family_size += 1;
                if lex_cmp(&degenerate[i].location, &rep.location).is_lt() {
                    let size = rep.family_size;
                    *rep = degenerate[i].clone();
                    rep.family_size = size;
                }
            }
            None => families.push((r, degenerate[i].clone())),
        }
    }
    out.extend(families.into_iter().map(|(_, r)| r));
    out
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    std::cmp::Ordering::Equal
}

/// Sort key quantising values so that numerically equal values tie exactly.
fn value_key(v: f64) -> i64 {
    (v * 1e9).round() as i64
}

/// Multistart refinement of the applicable landscape: `Γ` if it varies on the boundary,
/// otherwise `Σ̄`.
pub fn predict_concentration(data: &ProblemData, settings: &PredictorSettings) -> Result<Prediction> {
    let variation = data.boundary_variation()?.gamma_variation;
    let func = if variation >= GAMMA_CONSTANCY_THRESHOLD {
        LandscapeFunction::Gamma
    } else {
        LandscapeFunction::SigmaBar
    };
    log::info!("gamma relative boundary variation {variation:e}: using {func:?}");
    let table = scan_landscape(data, func, settings.samples, settings.seed)?;
    let seeds = scan_seeds(&table, settings);
    let mut reports = Vec::with_capacity(seeds.len());
    for &(i, direction) in &seeds {
        reports.push(refine(data, func, table[i].0.clone(), direction, settings)?);
    }
    let mut reports = consolidate(reports, data.domain.diameter(), settings);
    reports.sort_by(|a, b| {
        value_key(b.value)
            .cmp(&value_key(a.value))
            .then_with(|| lex_cmp(&a.location, &b.location))
    });
    debug_assert!(reports.iter().all(|r| r.is_consistent(settings)));
    Ok(Prediction {
        function: func,
        gamma_variation: variation,
        seeds: seeds.len(),
        reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn newton_step_drops_flat_directions() {
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1e-12]));
        let g = DVector::from_vec(vec![1.0, 1.0]);
        let s = newton_step(&h, &g, 1e-8);
        assert!((s[0] + 0.5).abs() < 1e-15);
        assert_eq!(s[1], 0.0);
    }

    #[test]
    fn value_key_ties() {
        assert_eq!(value_key(1.0), value_key(1.0 + 1e-13));
        assert!(value_key(1.0) < value_key(1.0 + 1e-8));
    }

    #[test]
    fn lexicographic_order() {
        assert!(lex_cmp(&[-1.0, 0.0], &[1.0, 0.0]).is_lt());
        assert!(lex_cmp(&[1.0, -1.0], &[1.0, 0.0]).is_lt());
    }
}
