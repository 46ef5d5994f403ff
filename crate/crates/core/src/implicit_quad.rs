//! High-order quadrature over `{ψ < 0} ∩ box` and over `{ψ = 0} ∩ box` for a smooth level set
//! with a known bound on its Hessian.
//!
//! The box is split as an octree. Cells where `ψ` provably keeps one sign get a tensor Gauss
//! rule (or are dropped). Cut cells are integrated with a height-function recursion: pick an
//! axis along which every active function is provably monotone, integrate exactly along that
//! axis between the roots, and continue in one dimension less, splitting the lower-dimensional
//! domain at the zero sets of the face restrictions so the reduced integrand stays smooth.
//! Cells where no monotone axis is found are subdivided until `max_depth`, after which a plain
//! indicator-weighted tensor rule is used and counted as a fallback.

use crate::gauss::{unit_rule, UnitRule};

/// Largest supported dimension.
pub const MAX_DIM: usize = 8;

/// A level set `ψ` with its gradient and a global bound on `‖∇²ψ‖₂`.
pub trait LevelSet {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    /// Value, writing the gradient into `grad`.
    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;
    fn hessian_bound(&self) -> f64;
}

#[derive(Debug, Clone, Copy)]
pub struct QuadSettings {
    /// Gauss points per direction.
    pub order: usize,
    /// Maximum subdivision depth inside a cut cell.
    pub max_depth: usize,
    /// Cells are split until their longest side is at most this.
    pub max_cell: f64,
    /// Cells within this distance of the origin are split further, down to `core_cell`.
    pub core_radius: f64,
    pub core_cell: f64,
}

impl Default for QuadSettings {
    fn default() -> Self {
        Self {
            order: 10,
            max_depth: 8,
            max_cell: 2.0,
            core_radius: 0.0,
            core_cell: f64::INFINITY,
        }
    }
}

/// Octree levels are bounded separately from cut-cell refinement.
const MAX_OCTREE_DEPTH: usize = 24;

fn origin_distance(lo: &[f64], hi: &[f64]) -> f64 {
    lo.iter()
        .zip(hi)
        .map(|(&l, &h)| if l > 0.0 { l * l } else if h < 0.0 { h * h } else { 0.0 })
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, Copy, Default)]
pub struct QuadStats {
    pub full_cells: usize,
    pub cut_cells: usize,
    pub fallback_cells: usize,
    pub skipped_cells: usize,
    /// Sum of the bounds reported for skipped cells.
    pub skipped_bound: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct QuadResult<const K: usize> {
    pub values: [f64; K],
    pub stats: QuadStats,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    /// Top level of a volume integral: the function carries the condition `ψ < 0`.
    Volume,
    /// Top level of a surface integral over `ψ = 0`.
    Surface,
    /// Lower levels: functions only split the domain.
    Split,
}

/// A face restriction of `ψ`: coordinates overridden by fixed values.
#[derive(Clone)]
struct Restriction {
    fixed: Vec<(usize, f64)>,
}

impl Restriction {
    fn apply(&self, x: &[f64], buf: &mut [f64; MAX_DIM]) {
        buf[..x.len()].copy_from_slice(x);
        for &(a, v) in &self.fixed {
            buf[a] = v;
        }
    }
}

struct Integrator<'a, const K: usize> {
    psi: &'a dyn LevelSet,
    dim: usize,
    settings: QuadSettings,
    rule: &'static UnitRule,
    hess: f64,
    stats: std::cell::Cell<QuadStats>,
}

type Field<'a, const K: usize> = dyn Fn(&mut [f64]) -> [f64; K] + 'a;

#[inline]
fn axpy<const K: usize>(acc: &mut [f64; K], w: f64, v: &[f64; K]) {
    for i in 0..K {
        acc[i] += w * v[i];
    }
}

impl<'a, const K: usize> Integrator<'a, K> {
    fn bump(&self, f: impl FnOnce(&mut QuadStats)) {
        let mut s = self.stats.get();
        f(&mut s);
        self.stats.set(s);
    }

    fn eval(&self, r: &Restriction, x: &[f64]) -> f64 {
        let mut buf = [0.0; MAX_DIM];
        r.apply(x, &mut buf);
        self.psi.value(&buf[..self.dim])
    }

    fn eval_grad(&self, r: &Restriction, x: &[f64], g: &mut [f64]) -> f64 {
        let mut buf = [0.0; MAX_DIM];
        r.apply(x, &mut buf);
        self.psi.value_grad(&buf[..self.dim], g)
    }

    /// Tensor Gauss rule of `f` over the free axes.
    fn tensor(&self, free: &[usize], lo: &[f64], hi: &[f64], x: &mut [f64], f: &Field<'_, K>) -> [f64; K] {
        let Some((&a, rest)) = free.split_first() else {
            return f(x);
        };
        let h = hi[a] - lo[a];
        let mut acc = [0.0; K];
        for (t, w) in self.rule.nodes.iter().zip(&self.rule.weights) {
            x[a] = lo[a] + h * t;
            let v = self.tensor(rest, lo, hi, x, f);
            axpy(&mut acc, w * h, &v);
        }
        acc
    }

    /// Indicator-weighted tensor rule, used only when no monotone axis is found at `max_depth`.
    fn fallback(&self, free: &[usize], lo: &[f64], hi: &[f64], x: &mut [f64], f: &Field<'_, K>, mode: Mode) -> [f64; K] {
        self.bump(|s| s.fallback_cells += 1);
        match mode {
            Mode::Volume => {
                let top = Restriction { fixed: Vec::new() };
                let g = |x: &mut [f64]| -> [f64; K] {
                    if self.eval(&top, x) < 0.0 {
                        f(x)
                    } else {
                        [0.0; K]
                    }
                };
                self.tensor(free, lo, hi, x, &g)
            }
            Mode::Split => self.tensor(free, lo, hi, x, f),
            // a surface cannot be resolved by a tensor rule; dropped and counted
            Mode::Surface => [0.0; K],
        }
    }

    /// Sign of `r` on the box if it is provably uniform.
    fn uniform_sign(&self, r: &Restriction, free: &[usize], lo: &[f64], hi: &[f64], x: &mut [f64]) -> Option<f64> {
        for &a in free {
            x[a] = 0.5 * (lo[a] + hi[a]);
        }
        let mut g = [0.0; MAX_DIM];
        let v = self.eval_grad(r, x, &mut g[..self.dim]);
        let mut lin = 0.0;
        let mut h2 = 0.0;
        for &a in free {
            let h = 0.5 * (hi[a] - lo[a]);
            lin += g[a].abs() * h;
            h2 += h * h;
        }
        let bound = lin + 0.5 * self.hess * h2;
        if v.abs() > bound {
            Some(v.signum())
        } else {
            None
        }
    }

    /// Root of `t ↦ r(x with x[axis] = t)` in `(a, b)` given a sign change.
    fn root(&self, r: &Restriction, x: &mut [f64], axis: usize, a: f64, b: f64, fa: f64, fb: f64) -> f64 {
        let (mut a, mut b, mut fa, mut fb) = (a, b, fa, fb);
        let mut side = 0i32;
        let mut c = a;
        for _ in 0..200 {
            c = (a * fb - b * fa) / (fb - fa);
            if !(c > a.min(b) && c < a.max(b)) {
                c = 0.5 * (a + b);
            }
            x[axis] = c;
            let fc = self.eval(r, x);
            if fc == 0.0 || (b - a).abs() <= 4.0 * f64::EPSILON * (1.0 + c.abs()) {
                break;
            }
            if fc.signum() == fb.signum() {
                b = c;
                fb = fc;
                if side == -1 {
                    fa *= 0.5;
                }
                side = -1;
            } else {
                a = c;
                fa = fc;
                if side == 1 {
                    fb *= 0.5;
                }
                side = 1;
            }
        }
        c
    }

    /// Integrates `f` over the free axes of the box, honouring the active functions.
    #[allow(clippy::too_many_arguments)]
    fn integrate(
        &self,
        free: &[usize],
        lo: &mut Vec<f64>,
        hi: &mut Vec<f64>,
        fns: &[Restriction],
        mode: Mode,
        x: &mut [f64],
        f: &Field<'_, K>,
        depth: usize,
    ) -> [f64; K] {
        // drop functions of uniform sign
        let mut active: Vec<Restriction> = Vec::with_capacity(fns.len());
        for r in fns {
            match self.uniform_sign(r, free, lo, hi, x) {
                Some(s) => match mode {
                    Mode::Volume if s > 0.0 => return [0.0; K],
                    Mode::Surface => return [0.0; K],
                    _ => {}
                },
                None => active.push(r.clone()),
            }
        }
        if active.is_empty() {
            return self.tensor(free, lo, hi, x, f);
        }

        // height axis: largest total normalized partial derivative at the centre
        for &a in free {
            x[a] = 0.5 * (lo[a] + hi[a]);
        }
        let mut grads = Vec::with_capacity(active.len());
        for r in &active {
            let mut g = [0.0; MAX_DIM];
            self.eval_grad(r, x, &mut g[..self.dim]);
            grads.push(g);
        }
        let radius = free
            .iter()
            .map(|&a| (0.5 * (hi[a] - lo[a])).powi(2))
            .sum::<f64>()
            .sqrt();
        let score = |a: usize| -> f64 {
            grads
                .iter()
                .map(|g| {
                    let n = free.iter().map(|&b| g[b] * g[b]).sum::<f64>().sqrt();
                    if n > 0.0 {
                        g[a].abs() / n
                    } else {
                        0.0
                    }
                })
                .fold(f64::INFINITY, f64::min)
        };
        let k = *free
            .iter()
            .max_by(|&&a, &&b| score(a).total_cmp(&score(b)))
            .expect("non-empty free set");
        let monotone = grads.iter().all(|g| g[k].abs() > self.hess * radius);

        if !monotone {
            if depth >= self.settings.max_depth {
                return self.fallback(free, lo, hi, x, f, mode);
            }
            return self.split(free, lo, hi, fns, mode, x, f, depth);
        }

        let (lo_k, hi_k) = (lo[k], hi[k]);
        let rule = self.rule;
        // reduced integrand over the remaining axes
        let reduced = |x: &mut [f64]| -> [f64; K] {
            match mode {
                Mode::Surface => {
                    let r = &active[0];
                    x[k] = lo_k;
                    let fa = self.eval(r, x);
                    x[k] = hi_k;
                    let fb = self.eval(r, x);
                    if fa.signum() == fb.signum() || fa == 0.0 || fb == 0.0 {
                        return [0.0; K];
                    }
                    let t = self.root(r, x, k, lo_k, hi_k, fa, fb);
                    x[k] = t;
                    let mut g = [0.0; MAX_DIM];
                    self.eval_grad(r, x, &mut g[..self.dim]);
                    let norm = g[..self.dim].iter().map(|v| v * v).sum::<f64>().sqrt();
                    let w = norm / g[k].abs();
                    let mut v = f(x);
                    for vi in v.iter_mut() {
                        *vi *= w;
                    }
                    v
                }
                Mode::Volume | Mode::Split => {
                    let mut cuts: [f64; 2 * MAX_DIM + 2] = [0.0; 2 * MAX_DIM + 2];
                    let mut ncut = 0;
                    cuts[ncut] = lo_k;
                    ncut += 1;
                    for r in active.iter() {
                        x[k] = lo_k;
                        let fa = self.eval(r, x);
                        x[k] = hi_k;
                        let fb = self.eval(r, x);
                        if fa != 0.0 && fb != 0.0 && fa.signum() != fb.signum() && ncut < cuts.len() - 1 {
                            cuts[ncut] = self.root(r, x, k, lo_k, hi_k, fa, fb);
                            ncut += 1;
                        }
                    }
                    cuts[ncut] = hi_k;
                    ncut += 1;
                    let cuts = &mut cuts[..ncut];
                    cuts.sort_by(f64::total_cmp);
                    let mut acc = [0.0; K];
                    for w in cuts.windows(2) {
                        let (a, b) = (w[0], w[1]);
                        if b <= a {
                            continue;
                        }
                        if mode == Mode::Volume {
                            x[k] = 0.5 * (a + b);
                            if self.eval(&active[0], x) >= 0.0 {
                                continue;
                            }
                        }
                        let h = b - a;
                        for (t, wt) in rule.nodes.iter().zip(&rule.weights) {
                            x[k] = a + h * t;
                            let v = f(x);
                            axpy(&mut acc, wt * h, &v);
                        }
                    }
                    acc
                }
            }
        };

        let sub_free: Vec<usize> = free.iter().copied().filter(|&a| a != k).collect();
        if sub_free.is_empty() {
            return reduced(x);
        }
        let mut sub_fns = Vec::with_capacity(2 * active.len());
        for r in &active {
            for v in [lo_k, hi_k] {
                let mut fixed = r.fixed.clone();
                fixed.push((k, v));
                sub_fns.push(Restriction { fixed });
            }
        }
        self.integrate(&sub_free, lo, hi, &sub_fns, Mode::Split, x, &reduced, depth)
    }

    #[allow(clippy::too_many_arguments)]
    fn split(
        &self,
        free: &[usize],
        lo: &mut Vec<f64>,
        hi: &mut Vec<f64>,
        fns: &[Restriction],
        mode: Mode,
        x: &mut [f64],
        f: &Field<'_, K>,
        depth: usize,
    ) -> [f64; K] {
        let (lo0, hi0) = (lo.clone(), hi.clone());
        let mut acc = [0.0; K];
        for child in 0..(1usize << free.len()) {
            for (bit, &a) in free.iter().enumerate() {
                let mid = 0.5 * (lo0[a] + hi0[a]);
                if child >> bit & 1 == 0 {
                    lo[a] = lo0[a];
                    hi[a] = mid;
                } else {
                    lo[a] = mid;
                    hi[a] = hi0[a];
                }
            }
            let v = self.integrate(free, lo, hi, fns, mode, x, f, depth + 1);
            for i in 0..K {
                acc[i] += v[i];
            }
        }
        lo.copy_from_slice(&lo0);
        hi.copy_from_slice(&hi0);
        acc
    }

    /// Octree over the top-level box.
    #[allow(clippy::too_many_arguments)]
    fn octree(
        &self,
        lo: &mut Vec<f64>,
        hi: &mut Vec<f64>,
        mode: Mode,
        x: &mut [f64],
        f: &Field<'_, K>,
        negligible: &dyn Fn(&[f64], &[f64]) -> Option<f64>,
        depth: usize,
        acc: &mut [f64; K],
    ) {
        if let Some(bound) = negligible(lo, hi) {
            self.bump(|s| {
                s.skipped_cells += 1;
                s.skipped_bound += bound;
            });
            return;
        }
        let free: Vec<usize> = (0..self.dim).collect();
        let top = Restriction { fixed: Vec::new() };
        let sign = self.uniform_sign(&top, &free, lo, hi, x);
        if sign == Some(1.0) {
            return;
        }
        if mode == Mode::Surface && sign.is_some() {
            return;
        }
        let longest = (0..self.dim).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
        let target = if origin_distance(lo, hi) < self.settings.core_radius {
            self.settings.max_cell.min(self.settings.core_cell)
        } else {
            self.settings.max_cell
        };
        if longest > target && depth < MAX_OCTREE_DEPTH {
            let (lo0, hi0) = (lo.clone(), hi.clone());
            for child in 0..(1usize << self.dim) {
                for a in 0..self.dim {
                    let mid = 0.5 * (lo0[a] + hi0[a]);
                    if child >> a & 1 == 0 {
                        lo[a] = lo0[a];
                        hi[a] = mid;
                    } else {
                        lo[a] = mid;
                        hi[a] = hi0[a];
                    }
                }
                self.octree(lo, hi, mode, x, f, negligible, depth + 1, acc);
            }
            lo.copy_from_slice(&lo0);
            hi.copy_from_slice(&hi0);
            return;
        }
        let v = if sign.is_some() {
            self.bump(|s| s.full_cells += 1);
            self.tensor(&free, lo, hi, x, f)
        } else {
            self.bump(|s| s.cut_cells += 1);
            self.integrate(&free, lo, hi, &[top], mode, x, f, 0)
        };
        for i in 0..K {
            acc[i] += v[i];
        }
    }
}

fn run<const K: usize>(
    psi: &dyn LevelSet,
    lo: &[f64],
    hi: &[f64],
    settings: QuadSettings,
    mode: Mode,
    f: &dyn Fn(&[f64]) -> [f64; K],
    negligible: &dyn Fn(&[f64], &[f64]) -> Option<f64>,
) -> QuadResult<K> {
    let dim = psi.dim();
    assert!(dim >= 1 && dim <= MAX_DIM, "dimension {dim} unsupported");
    assert!(lo.len() == dim && hi.len() == dim);
    let integrator = Integrator::<K> {
        psi,
        dim,
        settings,
        rule: unit_rule(settings.order),
        hess: psi.hessian_bound(),
        stats: std::cell::Cell::new(QuadStats::default()),
    };
    let field = |x: &mut [f64]| f(x);
    let mut lo = lo.to_vec();
    let mut hi = hi.to_vec();
    let mut x = vec![0.0; dim];
    let mut acc = [0.0; K];
    integrator.octree(&mut lo, &mut hi, mode, &mut x, &field, negligible, 0, &mut acc);
    QuadResult {
        values: acc,
        stats: integrator.stats.get(),
    }
}

/// `∫_{ψ<0 ∩ [lo,hi]} f`. `negligible(lo, hi)` may return a bound on a cell's contribution to
/// skip it.
pub fn integrate_volume<const K: usize>(
    psi: &dyn LevelSet,
    lo: &[f64],
    hi: &[f64],
    settings: QuadSettings,
    f: &dyn Fn(&[f64]) -> [f64; K],
    negligible: &dyn Fn(&[f64], &[f64]) -> Option<f64>,
) -> QuadResult<K> {
    run(psi, lo, hi, settings, Mode::Volume, f, negligible)
}

/// `∫_{ψ=0 ∩ [lo,hi]} f dS`.
pub fn integrate_surface<const K: usize>(
    psi: &dyn LevelSet,
    lo: &[f64],
    hi: &[f64],
    settings: QuadSettings,
    f: &dyn Fn(&[f64]) -> [f64; K],
    negligible: &dyn Fn(&[f64], &[f64]) -> Option<f64>,
) -> QuadResult<K> {
    run(psi, lo, hi, settings, Mode::Surface, f, negligible)
}
