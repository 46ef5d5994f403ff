//! Radial ground state of `−ΔU + U = Uᵖ` in ℝᴺ.
//!
//! The profile is found by shooting on `u(0) = α`. Forward integration is only trusted while
//! the solution is well above the double-precision noise floor of the growing mode; below
//! [`SWITCH_LEVEL`] the decaying branch is obtained by integrating the same nonlinear equation
//! backward from its exponential asymptotics and matching the value at the switch radius. The
//! slope mismatch at the match point decides which side of the ground state a shot lies on.

use std::io::{Read, Write};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gauss::{composite, unit_rule};
use crate::ode::{Dopri5, Flow, OdeError};
use crate::sphere::sphere_area;

/// Forward shots hand over to the backward tail once `u` drops below this level.
pub const SWITCH_LEVEL: f64 = 1e-2;
/// Default number of resampled grid points.
pub const DEFAULT_GRID_POINTS: usize = 4000;
/// Starting radius of the forward integration (series data below it).
pub const START_RADIUS: f64 = 1e-8;
/// Grid end is placed where the tail falls below this value.
pub const GRID_END_LEVEL: f64 = 1e-13;
/// Relative slope mismatch at the match point below which a shot counts as decayed.
pub const DECAY_MATCH_TOL: f64 = 1e-6;

const FORWARD_RTOL: f64 = 1e-13;
const FORWARD_ATOL: f64 = 1e-16;
const TAIL_RTOL: f64 = 1e-13;
const GRID_SHIFT: f64 = 1.0;

#[derive(Debug, Error)]
pub enum GroundStateError {
    #[error("invalid parameter: {0}")]
    Invalid(String),
    #[error("p = {p} is not subcritical for N = {n}: need 1 < p < (N+2)/(N-2) = {limit}")]
    Supercritical { n: usize, p: f64, limit: f64 },
    #[error("radial integration failed: {0}")]
    Integration(#[from] OdeError),
    #[error("no CROSS/REBOUND bracket found for alpha in [1e-6, 1e6]")]
    NoBracket,
    #[error("shot with alpha = {alpha} undetermined up to r = {r_limit}")]
    Undetermined { alpha: f64, r_limit: f64 },
    #[error("radial moment diverges: {0}")]
    Divergent(String),
    #[error("negative radius {0}")]
    NegativeRadius(f64),
    #[error("profile format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, GroundStateError>;

/// Outcome of a single shot from `u(0) = α`.
#[derive(Debug, Clone)]
pub enum Shot {
    /// `u` reached zero at the given radius.
    Cross { radius: f64 },
    /// `u′` became positive while `u > 0`.
    Rebound { radius: f64 },
    /// Monotone decay to below `1e-12` by `r_limit`.
    Decayed(RadialProfile),
}

impl Shot {
    pub fn label(&self) -> &'static str {
        match self {
            Shot::Cross { .. } => "CROSS",
            Shot::Rebound { .. } => "REBOUND",
            Shot::Decayed(_) => "DECAYED",
        }
    }
}

/// Checks `N ≥ 1`, `p > 1` and subcriticality for `N ≥ 3`.
pub fn check_exponent(n: usize, p: f64) -> Result<()> {
    if n == 0 {
        return Err(GroundStateError::Invalid("dimension N must be >= 1".into()));
    }
    if !(p.is_finite() && p > 1.0) {
        return Err(GroundStateError::Invalid(format!("exponent p = {p} must exceed 1")));
    }
    if n >= 3 {
        let limit = (n as f64 + 2.0) / (n as f64 - 2.0);
        if p >= limit {
            return Err(GroundStateError::Supercritical { n, p, limit });
        }
    }
    Ok(())
}

fn rhs(n: usize, p: f64) -> impl Fn(f64, &[f64; 2]) -> [f64; 2] {
    let k = n as f64 - 1.0;
    move |r: f64, y: &[f64; 2]| {
        let u = y[0];
        let nonlin = u.abs().powf(p - 1.0) * u;
        [y[1], u - nonlin - k / r * y[1]]
    }
}

fn second_derivative(n: usize, p: f64, r: f64, u: f64, du: f64, alpha: f64) -> f64 {
    if r == 0.0 {
        (alpha - alpha.powf(p)) / n as f64
    } else {
        u - u.abs().powf(p - 1.0) * u - (n as f64 - 1.0) / r * du
    }
}

/// Normalized decaying solution of `u″ + (N−1)/r u′ − u = 0` (a scaled modified Bessel
/// function) from its asymptotic series; returns `(k, k′)`.
fn decaying_mode(n: usize, r: f64) -> (f64, f64) {
    let nu = n as f64 / 2.0 - 1.0;
    let four_nu_sq = 4.0 * nu * nu;
    let mut term = 1.0;
    let mut series = 1.0;
    let mut dseries = 0.0;
    for k in 1..=12 {
        let j = k as f64;
        term *= (four_nu_sq - (2.0 * j - 1.0).powi(2)) / (j * 8.0 * r);
        if term == 0.0 {
            break;
        }
        series += term;
        dseries -= j * term / r;
    }
    let power = -(n as f64 - 1.0) / 2.0;
    let base = r.powf(power) * (-r).exp();
    let value = base * series;
    let deriv = base * (dseries + series * (power / r - 1.0));
    (value, deriv)
}

/// Tail model used past the end of the grid: `c · r^{-(N-1)/2} e^{-r}`.
fn tail_shape(n: usize, r: f64) -> (f64, f64) {
    let power = -(n as f64 - 1.0) / 2.0;
    let v = r.powf(power) * (-r).exp();
    (v, v * (power / r - 1.0))
}

#[derive(Debug, Clone, Copy)]
enum ForwardStop {
    Cross(f64),
    Rebound(f64),
    Switch { r: f64, u: f64, du: f64 },
    Limit,
}

struct Shooter {
    n: usize,
    p: f64,
    alpha: f64,
    ode: Dopri5,
}

impl Shooter {
    fn new(n: usize, p: f64, alpha: f64) -> Self {
        Self {
            n,
            p,
            alpha,
            ode: Dopri5::new(FORWARD_RTOL, FORWARD_ATOL),
        }
    }

    fn initial(&self) -> (f64, [f64; 2]) {
        let a = self.alpha;
        let c = (a - a.powf(self.p)) / self.n as f64;
        let r0 = START_RADIUS;
        (r0, [a + 0.5 * c * r0 * r0, c * r0])
    }

    fn classify_step(&self, r: f64, y: &[f64; 2]) -> Option<ForwardStop> {
        if y[0] <= 0.0 {
            Some(ForwardStop::Cross(r))
        } else if y[1] > 0.0 {
            Some(ForwardStop::Rebound(r))
        } else if y[0] < SWITCH_LEVEL {
            Some(ForwardStop::Switch {
                r,
                u: y[0],
                du: y[1],
            })
        } else {
            None
        }
    }

    /// Integrates until the first event or `r_limit`.
    fn forward(&self, r_limit: f64) -> Result<ForwardStop> {
        let f = rhs(self.n, self.p);
        let (r0, y0) = self.initial();
        let mut stop = ForwardStop::Limit;
        self.ode.integrate(&f, r0, y0, r_limit, 1e-4, |r, y| {
            match self.classify_step(r, y) {
                Some(s) => {
                    stop = s;
                    Flow::Stop
                }
                None => Flow::Continue,
            }
        })?;
        Ok(stop)
    }

    /// Continues past the switch point looking for a CROSS/REBOUND event.
    fn continue_after_switch(&self, r_limit: f64) -> Result<ForwardStop> {
        let f = rhs(self.n, self.p);
        let (r0, y0) = self.initial();
        let mut stop = ForwardStop::Limit;
        self.ode.integrate(&f, r0, y0, r_limit, 1e-4, |r, y| {
            if y[0] <= 0.0 {
                stop = ForwardStop::Cross(r);
                Flow::Stop
            } else if y[1] > 0.0 {
                stop = ForwardStop::Rebound(r);
                Flow::Stop
            } else {
                Flow::Continue
            }
        })?;
        Ok(stop)
    }

    /// Records the forward solution at the given increasing grid radii (first must be 0).
    fn forward_on_grid(&self, grid: &[f64]) -> Result<Vec<[f64; 2]>> {
        let f = rhs(self.n, self.p);
        let (r0, y0) = self.initial();
        let mut out = Vec::with_capacity(grid.len());
        out.push([self.alpha, 0.0]);
        let mut r = r0;
        let mut y = y0;
        let mut h = 1e-4;
        for &target in &grid[1..] {
            if target <= r {
                // target below the series start radius
                let c = (self.alpha - self.alpha.powf(self.p)) / self.n as f64;
                out.push([self.alpha + 0.5 * c * target * target, c * target]);
                continue;
            }
            let (r1, y1, h1) = self.ode.integrate(&f, r, y, target, h, |_, _| Flow::Continue)?;
            r = r1;
            y = y1;
            h = h1;
            out.push(y);
        }
        Ok(out)
    }
}

/// Decaying branch matched in value at `r_match`.
#[derive(Debug, Clone)]
struct Tail {
    amplitude: f64,
    r_match: f64,
    du_match: f64,
    r_end: f64,
}

fn tail_end_radius(n: usize, amplitude: f64, from: f64) -> f64 {
    let mut r = from.max(1.0);
    while amplitude * decaying_mode(n, r).0 > GRID_END_LEVEL {
        r += 0.25;
    }
    r
}

/// Backward integration of the nonlinear equation from `r_far` to `r_match` with decaying
/// asymptotic data of amplitude `c`; records values at `record` radii (descending order).
fn backward_tail(
    n: usize,
    p: f64,
    amplitude: f64,
    r_far: f64,
    r_match: f64,
    record: &[f64],
) -> Result<(f64, f64, Vec<[f64; 2]>)> {
    let f = rhs(n, p);
    let ode = Dopri5::new(TAIL_RTOL, 1e-300);
    let (k, dk) = decaying_mode(n, r_far);
    let mut y = [amplitude * k, amplitude * dk];
    let mut r = r_far;
    let mut h = 0.05;
    let mut out = Vec::with_capacity(record.len());
    for &target in record {
        let (r1, y1, h1) = ode.integrate(&f, r, y, target, h, |_, _| Flow::Continue)?;
        r = r1;
        y = y1;
        h = h1;
        out.push(y);
    }
    let (_, y_end, _) = ode.integrate(&f, r, y, r_match, h, |_, _| Flow::Continue)?;
    Ok((y_end[0], y_end[1], out))
}

/// Finds the decaying amplitude whose value at `r_match` equals `u_match`.
fn match_tail(n: usize, p: f64, r_match: f64, u_match: f64) -> Result<Tail> {
    let (k, _) = decaying_mode(n, r_match);
    let mut amplitude = u_match / k;
    let mut du_match = 0.0;
    let mut r_end = r_match;
    for _ in 0..30 {
        r_end = tail_end_radius(n, amplitude, r_match);
        let r_far = r_end + 5.0;
        let (u_b, du_b, _) = backward_tail(n, p, amplitude, r_far, r_match, &[])?;
        du_match = du_b;
        let ratio = u_match / u_b;
        amplitude *= ratio;
        if (ratio - 1.0).abs() < 1e-15 {
            break;
        }
    }
    Ok(Tail {
        amplitude,
        r_match,
        du_match: du_match * 1.0,
        r_end,
    })
}

/// Which side of the ground state a shot falls on, plus the switch data when reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Cross,
    Rebound,
}

struct Classified {
    side: Side,
    /// Relative slope mismatch at the switch point, when reached.
    mismatch: Option<f64>,
    stop: ForwardStop,
}

fn classify(n: usize, p: f64, alpha: f64, r_limit: f64) -> Result<Classified> {
    let shooter = Shooter::new(n, p, alpha);
    let stop = shooter.forward(r_limit)?;
    match stop {
        ForwardStop::Cross(_) => Ok(Classified {
            side: Side::Cross,
            mismatch: None,
            stop,
        }),
        ForwardStop::Rebound(_) => Ok(Classified {
            side: Side::Rebound,
            mismatch: None,
            stop,
        }),
        ForwardStop::Switch { r, u, du } => {
            let tail = match_tail(n, p, r, u)?;
            let mismatch = (du - tail.du_match) / tail.du_match.abs();
            // a shallower slope than the decaying branch means a growing component
            let side = if mismatch > 0.0 { Side::Rebound } else { Side::Cross };
            Ok(Classified {
                side,
                mismatch: Some(mismatch),
                stop,
            })
        }
        ForwardStop::Limit => Err(GroundStateError::Undetermined { alpha, r_limit }),
    }
}

fn validate_shot_args(n: usize, p: f64, alpha: f64, r_limit: f64) -> Result<()> {
    if n == 0 {
        return Err(GroundStateError::Invalid("dimension N must be >= 1".into()));
    }
    if !(p.is_finite() && p > 1.0) {
        return Err(GroundStateError::Invalid(format!("exponent p = {p} must exceed 1")));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(GroundStateError::Invalid(format!("alpha = {alpha} must be positive")));
    }
    if !(r_limit.is_finite() && r_limit > START_RADIUS) {
        return Err(GroundStateError::Invalid(format!("r_limit = {r_limit} must be positive")));
    }
    Ok(())
}

/// Shoots from `u(0) = alpha`, `u′(0) = 0` and classifies the trajectory.
pub fn shoot(n: usize, p: f64, alpha: f64, r_limit: f64) -> Result<Shot> {
    validate_shot_args(n, p, alpha, r_limit)?;
    let c = classify(n, p, alpha, r_limit)?;
    match c.stop {
        ForwardStop::Cross(radius) => return Ok(Shot::Cross { radius }),
        ForwardStop::Rebound(radius) => return Ok(Shot::Rebound { radius }),
        _ => {}
    }
    let mismatch = c.mismatch.unwrap_or(f64::INFINITY);
    if mismatch.abs() <= DECAY_MATCH_TOL {
        let profile = build_profile(n, p, alpha, DEFAULT_GRID_POINTS, mismatch.abs())?;
        if profile.eval(r_limit)? < 1e-12 {
            return Ok(Shot::Decayed(profile));
        }
    }
    let shooter = Shooter::new(n, p, alpha);
    match shooter.continue_after_switch(r_limit)? {
        ForwardStop::Cross(radius) => Ok(Shot::Cross { radius }),
        ForwardStop::Rebound(radius) => Ok(Shot::Rebound { radius }),
        _ => Err(GroundStateError::Undetermined { alpha, r_limit }),
    }
}

/// Solves for the ground state by bisection on `u(0)` to bracket width `tol`.
pub fn solve_ground_state(n: usize, p: f64, tol: f64) -> Result<RadialProfile> {
    solve_ground_state_with_grid(n, p, tol, DEFAULT_GRID_POINTS)
}

/// As [`solve_ground_state`] with an explicit number of grid points.
pub fn solve_ground_state_with_grid(
    n: usize,
    p: f64,
    tol: f64,
    grid_points: usize,
) -> Result<RadialProfile> {
    check_exponent(n, p)?;
    if !(tol.is_finite() && tol > 0.0) {
        return Err(GroundStateError::Invalid(format!("tol = {tol} must be positive")));
    }
    if grid_points < 16 {
        return Err(GroundStateError::Invalid("need at least 16 grid points".into()));
    }
    let r_limit = 200.0;
    let side = |a: f64| -> Result<Side> { Ok(classify(n, p, a, r_limit)?.side) };

    let mut lo = 1e-6;
    if side(lo)? != Side::Rebound {
        return Err(GroundStateError::NoBracket);
    }
    let mut hi = None;
    let mut a = lo;
    while a < 1e6 {
        let next = (a * 2.0).min(1e6);
        if side(next)? == Side::Cross {
            lo = a;
            hi = Some(next);
            break;
        }
        a = next;
    }
    let mut hi = hi.ok_or(GroundStateError::NoBracket)?;
    let mut iterations = 0;
    while hi - lo >= tol && iterations < 400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        match side(mid)? {
            Side::Rebound => lo = mid,
            Side::Cross => hi = mid,
        }
        iterations += 1;
    }
    let alpha = 0.5 * (lo + hi);
    log::debug!("ground state N={n} p={p}: alpha = {alpha:.16} after {iterations} bisections");
    let mismatch = classify(n, p, alpha, r_limit)?
        .mismatch
        .map(f64::abs)
        .unwrap_or(f64::NAN);
    let mut profile = build_profile(n, p, alpha, grid_points, mismatch)?;
    profile.tol = tol;
    Ok(profile)
}

/// Shifted logarithmic grid `r_i = s (e^{iΔ} − 1)` on `[0, r_max]`.
fn shifted_log_grid(r_max: f64, points: usize) -> Vec<f64> {
    let delta = (1.0 + r_max / GRID_SHIFT).ln() / (points - 1) as f64;
    let mut grid: Vec<f64> = (0..points)
        .map(|i| GRID_SHIFT * ((i as f64 * delta).exp() - 1.0))
        .collect();
    grid[points - 1] = r_max;
    grid
}

fn build_profile(
    n: usize,
    p: f64,
    alpha: f64,
    points: usize,
    match_mismatch: f64,
) -> Result<RadialProfile> {
    let shooter = Shooter::new(n, p, alpha);
    let (r_switch, u_switch) = match shooter.forward(1e3)? {
        ForwardStop::Switch { r, u, .. } => (r, u),
        other => {
            return Err(GroundStateError::Format(format!(
                "cannot build a profile from a non-decaying shot ({other:?})"
            )))
        }
    };
    let first_tail = match_tail(n, p, r_switch, u_switch)?;
    let r_max = first_tail.r_end;
    let grid = shifted_log_grid(r_max, points);
    // match at the last grid point not beyond the switch radius
    let m = grid.partition_point(|&r| r <= r_switch) - 1;
    let forward = shooter.forward_on_grid(&grid[..=m])?;
    let [u_m, _] = forward[m];
    let tail = match_tail(n, p, grid[m], u_m)?;
    let record: Vec<f64> = grid[m + 1..].iter().rev().copied().collect();
    let (_, _, backward) = backward_tail(n, p, tail.amplitude, r_max + 5.0, grid[m], &record)?;

    let mut u = Vec::with_capacity(points);
    let mut du = Vec::with_capacity(points);
    for y in &forward {
        u.push(y[0]);
        du.push(y[1]);
    }
    for y in backward.iter().rev() {
        u.push(y[0]);
        du.push(y[1]);
    }
    let mut profile = RadialProfile::from_samples(n, p, alpha, grid, u, du, None, f64::NAN)?;
    profile.match_mismatch = match_mismatch;
    profile.match_radius = tail.r_match;
    Ok(profile)
}

/// Tabulated radial ground state with a fitted exponential tail.
#[derive(Debug, Clone)]
pub struct RadialProfile {
    n: usize,
    p: f64,
    alpha: f64,
    r: Vec<f64>,
    u: Vec<f64>,
    du: Vec<f64>,
    d2u: Vec<f64>,
    c_tail: f64,
    tol: f64,
    match_mismatch: f64,
    match_radius: f64,
    moments: OnceLock<StandardMoments>,
}

/// Radial moments reused by every half-space and boundary-trace integral.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StandardMoments {
    /// `∫ Ū^{p+1} r^{N−1}`
    pub power: f64,
    /// `∫ Ū′² r^{N−1}`
    pub grad: f64,
    /// `∫ Ū² r^{N−1}`
    pub square: f64,
    /// `∫ Ū′² r^N`
    pub grad_first: f64,
    /// `∫ Ū² r^N`
    pub square_first: f64,
    /// `∫ Ū^{p+1} r^N` (trace weight `r^{(N−2)+2}`)
    pub trace_power: f64,
    /// `∫ Ū² r^{N−2}` (trace weight in dimension N−1); NaN for N = 1
    pub trace_square: f64,
}

/// JSON header accompanying the CSV table.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ProfileHeader {
    #[serde(rename = "N")]
    pub n: usize,
    pub p: f64,
    pub alpha: f64,
    pub c_tail: f64,
    pub tol: f64,
}

impl RadialProfile {
    /// Builds a profile from samples, computing second derivatives from the equation and
    /// fitting the tail amplitude unless one is given.
    #[allow(clippy::too_many_arguments)]
    pub fn from_samples(
        n: usize,
        p: f64,
        alpha: f64,
        r: Vec<f64>,
        u: Vec<f64>,
        du: Vec<f64>,
        c_tail: Option<f64>,
        tol: f64,
    ) -> Result<Self> {
        if r.len() < 4 || r.len() != u.len() || r.len() != du.len() {
            return Err(GroundStateError::Format("grid columns must have equal length >= 4".into()));
        }
        if r[0] != 0.0 {
            return Err(GroundStateError::Format("grid must start at r = 0".into()));
        }
        if r.windows(2).any(|w| w[1] <= w[0]) {
            return Err(GroundStateError::Format("grid radii must be strictly increasing".into()));
        }
        if u.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(GroundStateError::Format("profile values must be positive".into()));
        }
        let d2u = r
            .iter()
            .zip(u.iter().zip(&du))
            .map(|(&ri, (&ui, &dui))| second_derivative(n, p, ri, ui, dui, alpha))
            .collect();
        let c_tail = match c_tail {
            Some(c) => c,
            None => {
                // least squares over the last tenth of the grid
                let start = r.len() - (r.len() / 10).max(2);
                let (num, den) = (start..r.len()).fold((0.0, 0.0), |(a, b), i| {
                    let m = tail_shape(n, r[i]).0;
                    (a + u[i] * m, b + m * m)
                });
                num / den
            }
        };
        Ok(Self {
            n,
            p,
            alpha,
            r,
            u,
            du,
            d2u,
            c_tail,
            tol,
            match_mismatch: f64::NAN,
            match_radius: f64::NAN,
            moments: OnceLock::new(),
        })
    }

    pub fn dimension(&self) -> usize {
        self.n
    }

    pub fn exponent(&self) -> f64 {
        self.p
    }

    /// `u(0)`.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn c_tail(&self) -> f64 {
        self.c_tail
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn r_max(&self) -> f64 {
        *self.r.last().expect("non-empty grid")
    }

    pub fn radii(&self) -> &[f64] {
        &self.r
    }

    pub fn values(&self) -> &[f64] {
        &self.u
    }

    pub fn derivatives(&self) -> &[f64] {
        &self.du
    }

    /// Relative slope mismatch where forward and backward branches were joined.
    pub fn match_mismatch(&self) -> f64 {
        self.match_mismatch
    }

    pub fn match_radius(&self) -> f64 {
        self.match_radius
    }

    pub fn header(&self) -> ProfileHeader {
        ProfileHeader {
            n: self.n,
            p: self.p,
            alpha: self.alpha,
            c_tail: self.c_tail,
            tol: self.tol,
        }
    }

    fn locate(&self, r: f64) -> usize {
        let i = self.r.partition_point(|&x| x <= r);
        i.clamp(1, self.r.len() - 1) - 1
    }

    /// Value, first and second derivative of the quintic Hermite interpolant at `r ≤ r_max`.
    fn hermite(&self, r: f64) -> (f64, f64, f64) {
        let i = self.locate(r);
        let (a, b) = (self.r[i], self.r[i + 1]);
        let h = b - a;
        let t = (r - a) / h;
        let (t2, t3) = (t * t, t * t * t);
        let (t4, t5) = (t3 * t, t3 * t2);
        let y0 = self.u[i];
        let y1 = self.u[i + 1];
        let d0 = self.du[i] * h;
        let d1 = self.du[i + 1] * h;
        let s0 = self.d2u[i] * h * h;
        let s1 = self.d2u[i + 1] * h * h;
        let v = y0 * (1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5)
            + d0 * (t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5)
            + s0 * (0.5 * t2 - 1.5 * t3 + 1.5 * t4 - 0.5 * t5)
            + s1 * (0.5 * t3 - t4 + 0.5 * t5)
            + d1 * (-4.0 * t3 + 7.0 * t4 - 3.0 * t5)
            + y1 * (10.0 * t3 - 15.0 * t4 + 6.0 * t5);
        let dv = (y1 - y0) * (30.0 * t2 - 60.0 * t3 + 30.0 * t4)
            + d0 * (1.0 - 18.0 * t2 + 32.0 * t3 - 15.0 * t4)
            + s0 * (t - 4.5 * t2 + 6.0 * t3 - 2.5 * t4)
            + s1 * (1.5 * t2 - 4.0 * t3 + 2.5 * t4)
            + d1 * (-12.0 * t2 + 28.0 * t3 - 15.0 * t4);
        let d2v = (y1 - y0) * (60.0 * t - 180.0 * t2 + 120.0 * t3)
            + d0 * (-36.0 * t + 96.0 * t2 - 60.0 * t3)
            + s0 * (1.0 - 9.0 * t + 18.0 * t2 - 10.0 * t3)
            + s1 * (3.0 * t - 12.0 * t2 + 10.0 * t3)
            + d1 * (-24.0 * t + 84.0 * t2 - 60.0 * t3);
        (v, dv / h, d2v / (h * h))
    }

    /// Value and derivative at `r ≥ 0` without the sign check.
    #[inline]
    pub fn eval_both(&self, r: f64) -> (f64, f64) {
        if r <= self.r_max() {
            let (v, dv, _) = self.hermite(r);
            (v, dv)
        } else {
            let (m, dm) = tail_shape(self.n, r);
            (self.c_tail * m, self.c_tail * dm)
        }
    }

    pub fn eval(&self, r: f64) -> Result<f64> {
        if r < 0.0 {
            return Err(GroundStateError::NegativeRadius(r));
        }
        Ok(self.eval_both(r).0)
    }

    pub fn eval_deriv(&self, r: f64) -> Result<f64> {
        if r < 0.0 {
            return Err(GroundStateError::NegativeRadius(r));
        }
        Ok(self.eval_both(r).1)
    }

    /// Largest residual of `u″ + (N−1)/r u′ − u + uᵖ` of the interpolant at interval midpoints.
    pub fn ode_residual(&self) -> f64 {
        let k = self.n as f64 - 1.0;
        self.r
            .windows(2)
            .map(|w| {
                let r = 0.5 * (w[0] + w[1]);
                let (u, du, d2u) = self.hermite(r);
                (d2u + k / r * du - u + u.powf(self.p)).abs()
            })
            .fold(0.0, f64::max)
    }

    /// `∫₀^∞ u^a (u′)^b r^w dr` for a general weight exponent `w > −1`.
    pub fn radial_integral(&self, power_u: f64, power_du: u32, weight: f64) -> Result<f64> {
        if power_u < 0.0 || !power_u.is_finite() {
            return Err(GroundStateError::Invalid(format!("power_u = {power_u} must be >= 0")));
        }
        if power_u == 0.0 && power_du == 0 {
            return Err(GroundStateError::Divergent(
                "integrand without u or u' factors does not decay".into(),
            ));
        }
        if weight <= -1.0 && power_du == 0 {
            return Err(GroundStateError::Divergent(format!(
                "weight r^{weight} is not integrable at the origin"
            )));
        }
        let rule = unit_rule(5);
        let f = |r: f64, u: f64, du: f64| -> f64 {
            let mut v = if power_u == 0.0 { 1.0 } else { u.powf(power_u) };
            if power_du > 0 {
                v *= du.powi(power_du as i32);
            }
            if weight != 0.0 {
                v *= r.powf(weight);
            }
            v
        };
        let mut total = 0.0;
        for w in self.r.windows(2) {
            total += rule.integrate(w[0], w[1], |r| {
                let (u, du, _) = self.hermite(r);
                f(r, u, du)
            });
        }
        let r_max = self.r_max();
        total += composite(r_max, r_max + 60.0, 30, 8, |r| {
            let (m, dm) = tail_shape(self.n, r);
            f(r, self.c_tail * m, self.c_tail * dm)
        });
        Ok(total)
    }

    /// `∫₀^∞ u^{power_u} (u′)^{power_du} r^{N−1+moment_k} dr`.
    pub fn radial_moment(&self, power_u: f64, power_du: u32, moment_k: u32) -> Result<f64> {
        self.radial_integral(power_u, power_du, self.n as f64 - 1.0 + moment_k as f64)
    }

    /// Cached standard moments.
    pub fn moments(&self) -> &StandardMoments {
        self.moments.get_or_init(|| {
            let n = self.n as f64;
            let p = self.p;
            let m = |a: f64, b: u32, w: f64| self.radial_integral(a, b, w).unwrap_or(f64::NAN);
            StandardMoments {
                power: m(p + 1.0, 0, n - 1.0),
                grad: m(0.0, 2, n - 1.0),
                square: m(2.0, 0, n - 1.0),
                grad_first: m(0.0, 2, n),
                square_first: m(2.0, 0, n),
                trace_power: m(p + 1.0, 0, n),
                trace_square: if self.n >= 2 { m(2.0, 0, n - 2.0) } else { f64::NAN },
            }
        })
    }

    /// `∫(|∇Ū|² + Ū²) − ∫Ū^{p+1}` over ℝᴺ.
    pub fn nehari_residual(&self) -> f64 {
        let m = self.moments();
        sphere_area(self.n) * (m.grad + m.square - m.power)
    }

    /// `(N−2)/2 ∫|∇Ū|² + N/2 ∫Ū² − N/(p+1) ∫Ū^{p+1}` over ℝᴺ.
    pub fn pohozaev_residual(&self) -> f64 {
        let m = self.moments();
        let n = self.n as f64;
        sphere_area(self.n)
            * ((n - 2.0) / 2.0 * m.grad + n / 2.0 * m.square - n / (self.p + 1.0) * m.power)
    }

    /// Returns a copy with every value and derivative multiplied by `factor`.
    pub fn scaled_values(&self, factor: f64) -> Result<Self> {
        Self::from_samples(
            self.n,
            self.p,
            self.alpha * factor,
            self.r.clone(),
            self.u.iter().map(|v| v * factor).collect(),
            self.du.iter().map(|v| v * factor).collect(),
            Some(self.c_tail * factor),
            self.tol,
        )
    }

    /// Writes the `r,u,du` table.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["r", "u", "du"])?;
        for i in 0..self.r.len() {
            w.write_record([
                format!("{:e}", self.r[i]),
                format!("{:e}", self.u[i]),
                format!("{:e}", self.du[i]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a profile from its JSON header and CSV table; `#` lines are comments.
    pub fn read<R: Read>(header: &ProfileHeader, table: R) -> Result<Self> {
        check_exponent(header.n, header.p).or_else(|e| match e {
            GroundStateError::Supercritical { .. } => Ok(()),
            other => Err(other),
        })?;
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(table);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["r", "u", "du"] {
            return Err(GroundStateError::Format(format!(
                "expected columns r,u,du, found {headers:?}"
            )));
        }
        let (mut r, mut u, mut du) = (Vec::new(), Vec::new(), Vec::new());
        for rec in rdr.records() {
            let rec = rec?;
            let parse = |i: usize| -> Result<f64> {
                rec.get(i)
                    .ok_or_else(|| GroundStateError::Format("short record".into()))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| GroundStateError::Format(e.to_string()))
            };
            r.push(parse(0)?);
            u.push(parse(1)?);
            du.push(parse(2)?);
        }
        Self::from_samples(
            header.n,
            header.p,
            header.alpha,
            r,
            u,
            du,
            Some(header.c_tail),
            header.tol,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sech_profile() -> RadialProfile {
        let grid = shifted_log_grid(32.0, 4000);
        let s2 = 2f64.sqrt();
        let u = grid.iter().map(|&r| s2 / r.cosh()).collect();
        let du = grid.iter().map(|&r| -s2 * r.tanh() / r.cosh()).collect();
        RadialProfile::from_samples(1, 3.0, s2, grid, u, du, None, 0.0).unwrap()
    }

    #[test]
    fn decaying_mode_is_exact_for_n3() {
        let (k, dk) = decaying_mode(3, 2.0);
        assert!((k - (-2f64).exp() / 2.0).abs() < 1e-16);
        assert!((dk - (-(-2f64).exp() / 2.0 * (1.0 + 0.5))).abs() < 1e-16);
    }

    #[test]
    fn decaying_mode_satisfies_linear_equation() {
        for n in [2usize, 4, 5] {
            let r = 30.0;
            let h = 1e-3;
            let k = |r: f64| decaying_mode(n, r).0;
            let d2 = (k(r + h) - 2.0 * k(r) + k(r - h)) / (h * h);
            let d1 = decaying_mode(n, r).1;
            let res = d2 + (n as f64 - 1.0) / r * d1 - k(r);
            assert!(res.abs() < 1e-6 * k(r), "n={n} residual {res}");
        }
    }

    #[test]
    fn exact_sech_identities() {
        let prof = sech_profile();
        assert!(prof.nehari_residual().abs() < 1e-8);
        assert!(prof.pohozaev_residual().abs() < 1e-8);
        let m = prof.radial_moment(4.0, 0, 0).unwrap();
        assert!((m - 8.0 / 3.0).abs() < 1e-7, "{m}");
    }

    #[test]
    fn perturbed_profile_breaks_nehari() {
        let prof = sech_profile().scaled_values(1.01).unwrap();
        assert!(prof.nehari_residual().abs() > 1e-3);
    }

    #[test]
    fn divergent_moment_rejected() {
        let prof = sech_profile();
        assert!(matches!(
            prof.radial_moment(0.0, 0, 0),
            Err(GroundStateError::Divergent(_))
        ));
    }

    #[test]
    fn negative_radius_rejected() {
        let prof = sech_profile();
        assert!(prof.eval(-1.0).is_err());
        assert!(prof.eval_deriv(-0.5).is_err());
    }

    #[test]
    fn supercritical_rejected() {
        assert!(matches!(
            solve_ground_state(3, 5.0, 1e-8),
            Err(GroundStateError::Supercritical { .. })
        ));
        assert!(check_exponent(2, 11.0).is_ok());
    }
}
