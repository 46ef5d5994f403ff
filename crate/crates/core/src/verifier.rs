//! Direct-quadrature checks of the two-term energy expansion.
//!
//! Everything is computed in scaled variables `y = x/ε − P`, `P = Q/ε`, over
//! `Ω_ε = {y : φ(Q + εy) < 0}` intersected with the cube of half-width `R/β` centred at the
//! anchor, in the local frame whose last axis is the inward normal. The reference energy is
//!
//! ```text
//! E(ε, Q) = ½∫ J(Q+εy)|∇U^Q|² + ½∫ V(Q+εy)(U^Q)² − 1/(p+1) ∫ (U^Q)^{p+1}
//! ```

use std::cell::Cell;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auxiliary::{self, AuxiliaryError, ProblemData};
use crate::gauss::composite;
use crate::geometry::{BoundaryPoint, Domain, GeometryError};
use crate::implicit_quad::{integrate_surface, integrate_volume, LevelSet, QuadSettings, QuadStats, MAX_DIM};
use crate::potentials::PotentialError;
use crate::scaled_state::{Integrand, ScaledGroundState};
use crate::sphere::sphere_area;

#[derive(Debug, Error)]
pub enum VerifierError {
    #[error("invalid epsilon schedule: {0}")]
    Schedule(String),
    #[error("truncation bound {bound:e} exceeds 1e-8 |E| = {limit:e}; increase the truncation radius R (now {radius})")]
    Truncation { bound: f64, limit: f64, radius: f64 },
    #[error("dimension N = {0} exceeds the quadrature limit")]
    Dimension(usize),
    #[error("non-finite value of the implicit function or coefficients inside the quadrature box")]
    NonFinite,
    #[error(transparent)]
    Auxiliary(#[from] AuxiliaryError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Potential(#[from] PotentialError),
}

pub type Result<T> = std::result::Result<T, VerifierError>;

/// Quadrature controls for the energy.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct VerifierSettings {
    /// Truncation radius in units of `1/β`.
    pub truncation_radius: f64,
    /// Maximum octree depth.
    pub max_depth: usize,
    /// Gauss points per direction; the error estimate also uses `order − 2`.
    pub order: usize,
    /// Largest cell side in units of `1/β`.
    pub max_cell: f64,
    /// Radius, in units of `1/β`, of the core around the anchor that is meshed more finely.
    pub core_radius: f64,
    /// Largest cell side inside the core, in units of `1/β`.
    pub core_cell: f64,
    /// Cells whose contribution is bounded by this times the energy scale are skipped.
    pub skip_tolerance: f64,
    /// Step for tangential finite differences of the energy.
    pub fd_step: f64,
}

impl Default for VerifierSettings {
    fn default() -> Self {
        Self {
            truncation_radius: 30.0,
            max_depth: 8,
            order: 10,
            max_cell: 2.0,
            core_radius: 3.0,
            core_cell: 0.5,
            skip_tolerance: 1e-16,
            fd_step: 1e-3,
        }
    }
}

/// The scaled domain `z ↦ φ(Q + ε R z)` in the local frame `R`.
struct ScaledDomain<'a> {
    domain: &'a Domain,
    dim: usize,
    anchor: [f64; MAX_DIM],
    /// Column-major frame, columns `e₁ … e_{N−1}, −ν`.
    frame: [[f64; MAX_DIM]; MAX_DIM],
    eps: f64,
    failed: Cell<bool>,
}

impl<'a> ScaledDomain<'a> {
    fn new(domain: &'a Domain, q: &BoundaryPoint, eps: f64) -> Self {
        let dim = domain.dim();
        let mut anchor = [0.0; MAX_DIM];
        let mut frame = [[0.0; MAX_DIM]; MAX_DIM];
        for i in 0..dim {
            anchor[i] = q.point[i];
        }
        for (c, t) in q.tangents.iter().enumerate() {
            for i in 0..dim {
                frame[c][i] = t[i];
            }
        }
        for i in 0..dim {
            frame[dim - 1][i] = -q.normal[i];
        }
        Self {
            domain,
            dim,
            anchor,
            frame,
            eps,
            failed: Cell::new(false),
        }
    }

    /// Local offset `y = R z`.
    #[inline]
    fn offset(&self, z: &[f64], y: &mut [f64; MAX_DIM]) {
        for i in 0..self.dim {
            y[i] = 0.0;
        }
        for c in 0..self.dim {
            for i in 0..self.dim {
                y[i] += self.frame[c][i] * z[c];
            }
        }
    }

    /// Physical point `Q + ε R z`.
    #[inline]
    fn physical(&self, z: &[f64], x: &mut [f64; MAX_DIM]) {
        self.offset(z, x);
        for i in 0..self.dim {
            x[i] = self.anchor[i] + self.eps * x[i];
        }
    }
}

impl LevelSet for ScaledDomain<'_> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, z: &[f64]) -> f64 {
        let mut x = [0.0; MAX_DIM];
        self.physical(z, &mut x);
        match self.domain.phi(&x[..self.dim]) {
            Ok(v) if v.is_finite() => v,
            _ => {
                self.failed.set(true);
                1.0
            }
        }
    }

    fn value_grad(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        let mut x = [0.0; MAX_DIM];
        let mut g = [0.0; MAX_DIM];
        self.physical(z, &mut x);
        let v = match self.domain.phi_grad(&x[..self.dim], &mut g[..self.dim]) {
            Ok(v) if v.is_finite() => v,
            _ => {
                self.failed.set(true);
                return 1.0;
            }
        };
        for c in 0..self.dim {
            grad[c] = self.eps * (0..self.dim).map(|i| self.frame[c][i] * g[i]).sum::<f64>();
        }
        v
    }

    fn hessian_bound(&self) -> f64 {
        self.eps * self.eps * self.domain.hessian_bound()
    }
}

/// Volume integrals of the scaled state over `Ω_ε`, with their error budget.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub eps: f64,
    /// `E(ε, Q)`.
    pub energy: f64,
    /// Rule-difference estimate plus truncation and skipped-cell bounds.
    pub error_budget: f64,
    /// `∫ U^{p+1}`
    pub power: f64,
    /// `∫ |∇U|²`
    pub grad_sq: f64,
    /// `∫ U²`
    pub u_sq: f64,
    /// `∫ J(Q+εy)|∇U|²`
    pub j_grad_sq: f64,
    /// `∫ V(Q+εy) U²`
    pub v_u_sq: f64,
    pub truncation_bound: f64,
    pub full_cells: usize,
    pub cut_cells: usize,
    pub fallback_cells: usize,
    pub skipped_cells: usize,
}

struct Context<'a> {
    data: &'a ProblemData,
    j_const: Option<f64>,
    v_const: Option<f64>,
    j_max: f64,
    v_max: f64,
}

impl<'a> Context<'a> {
    fn new(data: &'a ProblemData) -> Result<Self> {
        if data.n > MAX_DIM {
            return Err(VerifierError::Dimension(data.n));
        }
        let j_const = data.j.as_constant();
        let v_const = data.v.as_constant();
        let (mut j_max, mut v_max) = (j_const.unwrap_or(0.0).abs(), v_const.unwrap_or(0.0).abs());
        if j_const.is_none() || v_const.is_none() {
            for x in data.domain.sample_interior(2000, 7)? {
                j_max = j_max.max(data.j.eval(&x)?.abs());
                v_max = v_max.max(data.v.eval(&x)?.abs());
            }
            // sampled, so pad it
            j_max *= 2.0;
            v_max *= 2.0;
        }
        Ok(Self {
            data,
            j_const,
            v_const,
            j_max,
            v_max,
        })
    }
}

/// Decreasing envelope `sup_{s ≥ r} g(s)` tabulated on a uniform grid.
struct Envelope {
    step: f64,
    values: Vec<f64>,
}

impl Envelope {
    fn new(r_max: f64, points: usize, g: impl Fn(f64) -> f64) -> Self {
        let step = r_max / (points - 1) as f64;
        let mut values: Vec<f64> = (0..points).map(|i| g(i as f64 * step)).collect();
        for i in (0..points - 1).rev() {
            values[i] = values[i].max(values[i + 1]);
        }
        Self { step, values }
    }

    fn at(&self, r: f64) -> f64 {
        let i = (r / self.step).floor() as usize;
        self.values.get(i).copied().unwrap_or(0.0)
    }
}

fn box_distance(lo: &[f64], hi: &[f64]) -> f64 {
    lo.iter()
        .zip(hi)
        .map(|(l, h)| {
            if *l > 0.0 {
                l * l
            } else if *h < 0.0 {
                h * h
            } else {
                0.0
            }
        })
        .sum::<f64>()
        .sqrt()
}

fn quad_settings(settings: &VerifierSettings, beta: f64, order: usize) -> QuadSettings {
    QuadSettings {
        order,
        max_depth: settings.max_depth,
        max_cell: settings.max_cell / beta,
        core_radius: settings.core_radius / beta,
        core_cell: settings.core_cell / beta,
    }
}

/// Inward shift of the box along the normal, in cell units. Without it the tangent plane at
/// the anchor lies on an octree face, where the restricted level set touches zero and no
/// height direction exists.
const NORMAL_SHIFT: f64 = 0.0731;

fn quad_box(n: usize, half: f64, cell: f64) -> (Vec<f64>, Vec<f64>) {
    let mut lo = vec![-half; n];
    let mut hi = vec![half; n];
    lo[n - 1] += NORMAL_SHIFT * cell;
    hi[n - 1] += NORMAL_SHIFT * cell;
    (lo, hi)
}

#[inline]
fn power(u: f64, p: f64, p_int: Option<i32>) -> f64 {
    match p_int {
        Some(k) => u.powi(k),
        None => u.powf(p),
    }
}

fn energy_with(ctx: &Context<'_>, q: &BoundaryPoint, eps: f64, settings: &VerifierSettings) -> Result<EnergyBreakdown> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(VerifierError::Schedule(format!("epsilon {eps} must be positive")));
    }
    let data = ctx.data;
    let n = data.n;
    let p = data.p;
    let p1 = p + 1.0;
    let p_int = if p1.fract() == 0.0 && p1 < 64.0 { Some(p1 as i32) } else { None };
    let state = data.scaled_state(q)?;
    let beta = state.beta();
    let half = settings.truncation_radius / beta;
    let psi = ScaledDomain::new(&data.domain, q, eps);

    let (j_max, v_max) = (ctx.j_max, ctx.v_max);
    let magnitude = |r: f64| -> f64 {
        let (u, du) = state.radial(r);
        power(u.abs(), p, p_int) + (1.0 + j_max) * du * du + (1.0 + v_max) * u * u
    };
    // energy scale for the skip threshold
    let scale = state.halfspace_power_integral(p1).unwrap_or(1.0).abs().max(1e-300);
    let skip_abs = settings.skip_tolerance * scale;
    let env = Envelope::new(half * 3f64.sqrt() * (n as f64).sqrt() + 1.0, 20_000, magnitude);
    let negligible = |lo: &[f64], hi: &[f64]| -> Option<f64> {
        let vol: f64 = lo.iter().zip(hi).map(|(l, h)| h - l).product();
        let bound = vol * env.at(box_distance(lo, hi));
        (bound < skip_abs).then_some(bound)
    };

    let field = |z: &[f64]| -> [f64; 5] {
        let r = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        let (u, du) = state.radial(r);
        let (j, v) = match (ctx.j_const, ctx.v_const) {
            (Some(j), Some(v)) => (j, v),
            _ => {
                let mut x = [0.0; MAX_DIM];
                psi.physical(z, &mut x);
                let x = &x[..n];
                let j = ctx.j_const.unwrap_or_else(|| data.j.eval_raw(x).unwrap_or(f64::NAN));
                let v = ctx.v_const.unwrap_or_else(|| data.v.eval_raw(x).unwrap_or(f64::NAN));
                (j, v)
            }
        };
        let g2 = du * du;
        let u2 = u * u;
        [power(u, p, p_int), g2, u2, j * g2, v * u2]
    };

    let (lo, hi) = quad_box(n, half, settings.max_cell / beta);
    let fine = integrate_volume(&psi, &lo, &hi, quad_settings(settings, beta, settings.order), &field, &negligible);
    let coarse = integrate_volume(
        &psi,
        &lo,
        &hi,
        quad_settings(settings, beta, settings.order.saturating_sub(2).max(2)),
        &field,
        &negligible,
    );
    if psi.failed.get() || fine.values.iter().any(|v| !v.is_finite()) {
        return Err(VerifierError::NonFinite);
    }
    let energy_of = |v: &[f64; 5]| 0.5 * v[3] + 0.5 * v[4] - v[0] / p1;
    let energy = energy_of(&fine.values);

    // tail outside the inscribed ball of the cube
    let tail_integrand = |r: f64| magnitude(r) * r.powi(n as i32 - 1);
    let inner = half - NORMAL_SHIFT * settings.max_cell / beta;
    let tail = sphere_area(n) * composite(inner, inner + 60.0 / beta, 60, 8, tail_integrand);
    if tail > 1e-8 * energy.abs() {
        return Err(VerifierError::Truncation {
            bound: tail,
            limit: 1e-8 * energy.abs(),
            radius: settings.truncation_radius,
        });
    }
    let stats: QuadStats = fine.stats;
    let error_budget = (energy - energy_of(&coarse.values)).abs() + tail + stats.skipped_bound;
    log::debug!(
        "E(eps={eps}) = {energy:.15e} +- {error_budget:.1e} ({} full, {} cut, {} fallback, {} skipped cells)",
        stats.full_cells,
        stats.cut_cells,
        stats.fallback_cells,
        stats.skipped_cells
    );
    let v = fine.values;
    Ok(EnergyBreakdown {
        eps,
        energy,
        error_budget,
        power: v[0],
        grad_sq: v[1],
        u_sq: v[2],
        j_grad_sq: v[3],
        v_u_sq: v[4],
        truncation_bound: tail,
        full_cells: stats.full_cells,
        cut_cells: stats.cut_cells,
        fallback_cells: stats.fallback_cells,
        skipped_cells: stats.skipped_cells,
    })
}

/// `E(ε, Q)` by direct quadrature, with all its volume integrals.
pub fn energy_at(data: &ProblemData, q: &BoundaryPoint, eps: f64, settings: &VerifierSettings) -> Result<EnergyBreakdown> {
    energy_with(&Context::new(data)?, q, eps, settings)
}

/// Boundary flux with its rule-difference error estimate.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Flux {
    pub value: f64,
    pub error_budget: f64,
}

/// `∫_{∂Ω_ε} ∂_ν U · U dS` by direct surface quadrature.
pub fn flux_at(data: &ProblemData, q: &BoundaryPoint, eps: f64, settings: &VerifierSettings) -> Result<Flux> {
    if data.n > MAX_DIM {
        return Err(VerifierError::Dimension(data.n));
    }
    let n = data.n;
    let state = data.scaled_state(q)?;
    let beta = state.beta();
    let half = settings.truncation_radius / beta;
    let psi = ScaledDomain::new(&data.domain, q, eps);
    let field = |z: &[f64]| -> [f64; 1] {
        let r = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        let (u, du) = state.radial(r);
        let mut g = [0.0; MAX_DIM];
        psi.value_grad(z, &mut g[..n]);
        let gn = g[..n].iter().map(|v| v * v).sum::<f64>().sqrt();
        let z_dot_nu = (0..n).map(|i| z[i] * g[i]).sum::<f64>() / gn;
        [if r > 0.0 { du * z_dot_nu / r * u } else { 0.0 }]
    };
    let (lo, hi) = quad_box(n, half, settings.max_cell / beta);
    let run = |order: usize| integrate_surface(&psi, &lo, &hi, quad_settings(settings, beta, order), &field, &|_, _| None);
    let fine = run(settings.order);
    let coarse = run(settings.order.saturating_sub(2).max(2));
    if psi.failed.get() || !fine.values[0].is_finite() {
        return Err(VerifierError::NonFinite);
    }
    Ok(Flux {
        value: fine.values[0],
        error_budget: (fine.values[0] - coarse.values[0]).abs(),
    })
}

fn check_schedule(schedule: &[f64], min_len: usize) -> Result<()> {
    if schedule.len() < min_len {
        return Err(VerifierError::Schedule(format!(
            "need at least {min_len} epsilon values, got {}",
            schedule.len()
        )));
    }
    if schedule.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        return Err(VerifierError::Schedule("epsilon values must be positive".into()));
    }
    if schedule.windows(2).any(|w| w[1] >= w[0]) {
        return Err(VerifierError::Schedule("epsilon schedule must be strictly decreasing".into()));
    }
    Ok(())
}

/// Remainder exponent `q` with `(ε₁^q − ε₂^q)/(ε₂^q − ε₃^q) = ratio`, if one exists in (0, 8).
pub fn fit_remainder_exponent(eps: [f64; 3], ratio: f64) -> Option<f64> {
    if !(ratio.is_finite() && ratio > 0.0) {
        return None;
    }
    let f = |q: f64| (eps[0].powf(q) - eps[1].powf(q)) / (eps[1].powf(q) - eps[2].powf(q)) - ratio;
    let (mut a, mut b) = (1e-3, 8.0);
    let (fa, fb) = (f(a), f(b));
    if fa.signum() == fb.signum() {
        return None;
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if f(m).signum() == fa.signum() {
            a = m;
        } else {
            b = m;
        }
    }
    Some(0.5 * (a + b))
}

/// Richardson extrapolation of a sequence `s(ε) = s★ + C ε^q` from its last three entries;
/// returns `(s★, q)`, falling back to `q = 1` when no exponent fits.
pub fn extrapolate(eps: &[f64], s: &[f64]) -> (f64, Option<f64>) {
    let k = s.len();
    let e = [eps[k - 3], eps[k - 2], eps[k - 1]];
    let ratio = (s[k - 3] - s[k - 2]) / (s[k - 2] - s[k - 1]);
    let q = fit_remainder_exponent(e, ratio);
    let qq = q.unwrap_or(1.0);
    let s_star = s[k - 1] + (s[k - 1] - s[k - 2]) / ((e[1] / e[2]).powf(qq) - 1.0);
    (s_star, q)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExpansionReport {
    pub q: Vec<f64>,
    pub eps: Vec<f64>,
    pub energies: Vec<f64>,
    pub error_budgets: Vec<f64>,
    /// `(E(ε) − c₀Γ(Q))/ε`
    pub slopes: Vec<f64>,
    pub c0_gamma: f64,
    pub extrapolated_slope: f64,
    pub target_sigma: f64,
    /// `|s★ − Σ| / max(1, |Σ|)`
    pub mismatch: f64,
    /// Fitted exponent `q` of the slope error `O(ε^q)`; `None` if no exponent fits.
    pub remainder_exponent: Option<f64>,
}

/// Checks `E(ε, Q) = c₀Γ(Q) + εΣ(Q) + o(ε)` on a decreasing schedule (at least three values).
pub fn verify_expansion(
    data: &ProblemData,
    q: &BoundaryPoint,
    schedule: &[f64],
    settings: &VerifierSettings,
) -> Result<ExpansionReport> {
    check_schedule(schedule, 3)?;
    let ctx = Context::new(data)?;
    let breakdowns = schedule
        .iter()
        .map(|&e| energy_with(&ctx, q, e, settings))
        .collect::<Result<Vec<_>>>()?;
    expansion_from(data, q, &breakdowns)
}

fn expansion_from(data: &ProblemData, q: &BoundaryPoint, breakdowns: &[EnergyBreakdown]) -> Result<ExpansionReport> {
    let c0_gamma = auxiliary::c0(data) * auxiliary::gamma(data, q)?;
    let target_sigma = auxiliary::sigma(data, q)?;
    let eps: Vec<f64> = breakdowns.iter().map(|b| b.eps).collect();
    let energies: Vec<f64> = breakdowns.iter().map(|b| b.energy).collect();
    let slopes: Vec<f64> = energies.iter().zip(&eps).map(|(e, h)| (e - c0_gamma) / h).collect();
    let (extrapolated_slope, remainder_exponent) = extrapolate(&eps, &slopes);
    let mismatch = (extrapolated_slope - target_sigma).abs() / target_sigma.abs().max(1.0);
    Ok(ExpansionReport {
        q: q.point.iter().copied().collect(),
        eps,
        energies,
        error_budgets: breakdowns.iter().map(|b| b.error_budget).collect(),
        slopes,
        c0_gamma,
        extrapolated_slope,
        target_sigma,
        mismatch,
        remainder_exponent,
    })
}

/// Exponent threshold for the residual-decay checks.
pub const DECAY_EXPONENT_THRESHOLD: f64 = 1.05;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResidualDecay {
    pub name: String,
    pub eps: Vec<f64>,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Least-squares slope of `log residual` against `log ε` over the residuals above the
    /// quadrature floor; `None` when fewer than two are.
    pub exponent: Option<f64>,
    pub floor: f64,
    /// Every residual is at or below the quadrature floor.
    pub at_floor: bool,
    pub pass: bool,
}

fn decay(name: &str, eps: &[f64], lhs: Vec<f64>, rhs: Vec<f64>, floor: f64) -> ResidualDecay {
    let residuals: Vec<f64> = lhs.iter().zip(&rhs).map(|(a, b)| (a - b).abs()).collect();
    let above: Vec<(f64, f64)> = eps
        .iter()
        .zip(&residuals)
        .filter(|(_, r)| **r > floor)
        .map(|(e, r)| (e.ln(), r.ln()))
        .collect();
    let at_floor = above.is_empty();
    let exponent = (above.len() >= 2).then(|| {
        let m = above.len() as f64;
        let (sx, sy) = above.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
        let (mx, my) = (sx / m, sy / m);
        let (sxy, sxx) = above
            .iter()
            .fold((0.0, 0.0), |(a, b), (x, y)| (a + (x - mx) * (y - my), b + (x - mx) * (x - mx)));
        sxy / sxx
    });
    // a single resolved residual passes only if it sits at the largest ε, i.e. every smaller
    // ε has already dropped to the floor
    let lone_leading = above.len() == 1 && residuals[0] > floor;
    let pass = at_floor || lone_leading || exponent.is_some_and(|q| q > DECAY_EXPONENT_THRESHOLD);
    ResidualDecay {
        name: name.to_string(),
        eps: eps.to_vec(),
        lhs,
        rhs,
        residuals,
        exponent,
        floor,
        at_floor,
        pass,
    }
}

/// Residual decays of the two-term estimates for `∫U^{p+1}`, the boundary flux, the
/// Nehari-type combination and the frozen-coefficient integrals of `J` and `V`.
pub fn verify_proposition(
    data: &ProblemData,
    q: &BoundaryPoint,
    schedule: &[f64],
    settings: &VerifierSettings,
) -> Result<Vec<ResidualDecay>> {
    check_schedule(schedule, 2)?;
    let ctx = Context::new(data)?;
    let state: ScaledGroundState = data.scaled_state(q)?;
    let p = data.p;
    let (j, v) = (state.j(), state.v());
    let h = q.mean_curvature;
    let i_plus = state.halfspace_power_integral(p + 1.0).map_err(AuxiliaryError::from)?;
    let (a_bar, b_bar) = state.boundary_trace_moments();
    let x = q.point.as_slice();
    let dj = data.j.grad(x)?.dot(&q.normal);
    let dv = data.v.grad(x)?.dot(&q.normal);
    let m_grad = state.normal_first_moment(Integrand::GradSq);
    let m_sq = state.normal_first_moment(Integrand::USq);

    let mut rows: [(Vec<f64>, Vec<f64>); 5] = Default::default();
    let mut budget: f64 = 0.0;
    for &eps in schedule {
        let e = energy_with(&ctx, q, eps, settings)?;
        let flux = flux_at(data, q, eps, settings)?;
        budget = budget.max(e.error_budget).max(flux.error_budget);
        let pairs = [
            (e.power, i_plus - eps * h * a_bar),
            (flux.value, -eps * h * b_bar),
            (j * e.grad_sq + v * e.u_sq, i_plus - eps * h * a_bar - eps * j * h * b_bar),
            (e.j_grad_sq, j * e.grad_sq + eps * dj * m_grad),
            (e.v_u_sq, v * e.u_sq + eps * dv * m_sq),
        ];
        for (row, (l, r)) in rows.iter_mut().zip(pairs) {
            row.0.push(l);
            row.1.push(r);
        }
    }
    let floor = (1e-12 * i_plus.abs()).max(budget);
    let names = ["power", "flux", "combined", "frozen_j", "frozen_v"];
    Ok(names
        .iter()
        .zip(rows)
        .map(|(name, (l, r))| decay(name, schedule, l, r, floor))
        .collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradientReport {
    pub q: Vec<f64>,
    pub eps: Vec<f64>,
    /// Tangential gradient of `E(ε, ·)` in the principal frame at `Q`, per `ε`.
    pub fd_gradient: Vec<Vec<f64>>,
    /// `c₀ ∇_T Γ(Q)` in the same frame.
    pub predicted: Vec<f64>,
    /// `‖g(ε) − c₀∇_TΓ‖ / max(‖c₀∇_TΓ‖, 1e-6 c₀Γ)` per `ε`.
    pub mismatches: Vec<f64>,
    /// Linear-in-ε extrapolation of the gradient from the last two entries.
    pub extrapolated: Vec<f64>,
    pub extrapolated_mismatch: f64,
}

/// Compares tangential finite differences of `E(ε, ·)` with `c₀∇_TΓ`. Multiplying both sides by
/// `ε` gives the derivative with respect to `P = Q/ε`.
pub fn verify_gradient_expansion(
    data: &ProblemData,
    q: &BoundaryPoint,
    schedule: &[f64],
    settings: &VerifierSettings,
) -> Result<GradientReport> {
    check_schedule(schedule, 1)?;
    let ctx = Context::new(data)?;
    let c0 = auxiliary::c0(data);
    let predicted = auxiliary::gamma_tangential_gradient(data, q)? * c0;
    let floor = 1e-6 * c0 * auxiliary::gamma(data, q)?;
    let denom = predicted.norm().max(floor);
    let h = settings.fd_step;
    let mut fd_gradient = Vec::with_capacity(schedule.len());
    let mut mismatches = Vec::with_capacity(schedule.len());
    for &eps in schedule {
        let mut g = DVector::zeros(q.tangents.len());
        for (i, t) in q.tangents.iter().enumerate() {
            let e_at = |step: f64| -> Result<f64> {
                let moved = data.domain.tangent_step(q, t, step)?;
                Ok(energy_with(&ctx, &moved, eps, settings)?.energy)
            };
            let d1 = (e_at(h)? - e_at(-h)?) / (2.0 * h);
            let d2 = (e_at(0.5 * h)? - e_at(-0.5 * h)?) / h;
            g[i] = (4.0 * d2 - d1) / 3.0;
        }
        mismatches.push((&g - &predicted).norm() / denom);
        fd_gradient.push(g);
    }
    let k = fd_gradient.len();
    let extrapolated = if k >= 2 {
        let (e1, e2) = (schedule[k - 2], schedule[k - 1]);
        &fd_gradient[k - 1] + (&fd_gradient[k - 1] - &fd_gradient[k - 2]) * (e2 / (e1 - e2))
    } else {
        fd_gradient[k - 1].clone()
    };
    let extrapolated_mismatch = (&extrapolated - &predicted).norm() / denom;
    Ok(GradientReport {
        q: q.point.iter().copied().collect(),
        eps: schedule.to_vec(),
        fd_gradient: fd_gradient.iter().map(|g| g.iter().copied().collect()).collect(),
        predicted: predicted.iter().copied().collect(),
        mismatches,
        extrapolated: extrapolated.iter().copied().collect(),
        extrapolated_mismatch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponent_fit_recovers_power() {
        let eps = [0.2, 0.1, 0.05];
        let s: Vec<f64> = eps.iter().map(|e: &f64| 1.0 + 3.0 * e.powf(1.5)).collect();
        let (s_star, q) = extrapolate(&eps, &s);
        assert!((q.unwrap() - 1.5).abs() < 1e-9);
        assert!((s_star - 1.0).abs() < 1e-9);
    }

    #[test]
    fn schedule_validation() {
        assert!(check_schedule(&[0.1], 3).is_err());
        assert!(check_schedule(&[0.1, 0.2, 0.05], 3).is_err());
        assert!(check_schedule(&[0.2, 0.1, 0.05], 3).is_ok());
    }

    #[test]
    fn residual_fit() {
        let eps = [0.2, 0.1, 0.05, 0.025];
        let lhs = eps.iter().map(|e| 1.0 + e + 2.0 * e * e).collect();
        let rhs = eps.iter().map(|e| 1.0 + e).collect();
        let d = decay("t", &eps, lhs, rhs, 1e-14);
        assert!((d.exponent.unwrap() - 2.0).abs() < 1e-9);
        assert!(d.pass);
        let d = decay("z", &eps, vec![1.0; 4], vec![1.0; 4], 1e-14);
        assert!(d.at_floor && d.pass);
    }
}
