//! Adaptive Dormand–Prince 5(4) integration for small fixed-size systems.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("step size underflow at t = {t} (h = {h:e}); last state {state:?}")]
    StepUnderflow { t: f64, h: f64, state: Vec<f64> },
    #[error("exceeded {max_steps} steps at t = {t}; last state {state:?}")]
    TooManySteps {
        t: f64,
        max_steps: usize,
        state: Vec<f64>,
    },
    #[error("non-finite state at t = {t}: {state:?}")]
    NonFinite { t: f64, state: Vec<f64> },
}

/// Whether integration should continue after an accepted step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Stop,
}

// Dormand–Prince coefficients.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Embedded Runge–Kutta integrator with standard step-size control.
#[derive(Debug, Clone)]
pub struct Dopri5 {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for Dopri5 {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-10,
            max_steps: 1_000_000,
        }
    }
}

fn lincomb<const D: usize>(y: &[f64; D], h: f64, terms: &[(f64, &[f64; D])]) -> [f64; D] {
    let mut out = *y;
    for (c, k) in terms {
        for i in 0..D {
            out[i] += h * c * k[i];
        }
    }
    out
}

impl Dopri5 {
    pub fn new(rtol: f64, atol: f64) -> Self {
        Self {
            rtol,
            atol,
            ..Self::default()
        }
    }

    /// One trial step; returns the 5th-order solution and the scaled error norm.
    fn trial<const D: usize, F>(&self, f: &F, t: f64, y: &[f64; D], h: f64) -> ([f64; D], f64)
    where
        F: Fn(f64, &[f64; D]) -> [f64; D],
    {
        let k1 = f(t, y);
        let k2 = f(t + C2 * h, &lincomb(y, h, &[(A21, &k1)]));
        let k3 = f(t + C3 * h, &lincomb(y, h, &[(A31, &k1), (A32, &k2)]));
        let k4 = f(
            t + C4 * h,
            &lincomb(y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]),
        );
        let k5 = f(
            t + C5 * h,
            &lincomb(y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
        );
        let k6 = f(
            t + h,
            &lincomb(
                y,
                h,
                &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
            ),
        );
        let y5 = lincomb(
            y,
            h,
            &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)],
        );
        let k7 = f(t + h, &y5);
        let mut err = 0.0f64;
        for i in 0..D {
            let e = h
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = self.atol + self.rtol * y[i].abs().max(y5[i].abs());
            err = err.max((e / sc).abs());
        }
        (y5, err)
    }

    /// Integrates from `t0` to `t_end` (either direction), calling `on_step` after every
    /// accepted step with `(t, y)`. Returns the final `(t, y, h)` where `h` is the step size
    /// suggested for continuing.
    pub fn integrate<const D: usize, F, S>(
        &self,
        f: &F,
        t0: f64,
        y0: [f64; D],
        t_end: f64,
        h0: f64,
        mut on_step: S,
    ) -> Result<(f64, [f64; D], f64), OdeError>
    where
        F: Fn(f64, &[f64; D]) -> [f64; D],
        S: FnMut(f64, &[f64; D]) -> Flow,
    {
        let dir = if t_end >= t0 { 1.0 } else { -1.0 };
        let mut t = t0;
        let mut y = y0;
        let mut h = h0.abs().max(1e-12) * dir;
        let mut steps = 0usize;
        while (t_end - t) * dir > 0.0 {
            if steps >= self.max_steps {
                return Err(OdeError::TooManySteps {
                    t,
                    max_steps: self.max_steps,
                    state: y.to_vec(),
                });
            }
            let remaining = t_end - t;
            let last = h.abs() >= remaining.abs();
            let h_try = if last { remaining } else { h };
            let (y_new, err) = self.trial(f, t, &y, h_try);
            if !err.is_finite() || y_new.iter().any(|v| !v.is_finite()) {
                h *= 0.25;
                if h.abs() <= 1e-14 * t.abs().max(1.0) {
                    return Err(OdeError::NonFinite {
                        t,
                        state: y.to_vec(),
                    });
                }
                continue;
            }
            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            if err <= 1.0 {
                t = if last { t_end } else { t + h_try };
                y = y_new;
                steps += 1;
                if !last || factor < 1.0 {
                    h = h_try * factor;
                }
                if on_step(t, &y) == Flow::Stop {
                    break;
                }
            } else {
                h = h_try * factor.min(0.9);
                if h.abs() <= 1e-14 * t.abs().max(1.0) {
                    return Err(OdeError::StepUnderflow {
                        t,
                        h,
                        state: y.to_vec(),
                    });
                }
            }
        }
        Ok((t, y, h))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_oscillator() {
        let f = |_t: f64, y: &[f64; 2]| [y[1], -y[0]];
        let ode = Dopri5::new(1e-12, 1e-12);
        let (t, y, _) = ode
            .integrate(&f, 0.0, [1.0, 0.0], 10.0, 0.1, |_, _| Flow::Continue)
            .unwrap();
        assert_eq!(t, 10.0);
        assert!((y[0] - 10f64.cos()).abs() < 1e-10);
        assert!((y[1] + 10f64.sin()).abs() < 1e-10);
    }

    #[test]
    fn backward_exponential() {
        let f = |_t: f64, y: &[f64; 1]| [y[0]];
        let ode = Dopri5::new(1e-12, 1e-14);
        let (_, y, _) = ode
            .integrate(&f, 2.0, [2f64.exp()], 0.0, 0.1, |_, _| Flow::Continue)
            .unwrap();
        assert!((y[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn stop_callback_halts() {
        let f = |_t: f64, _y: &[f64; 1]| [1.0];
        let ode = Dopri5::default();
        let (t, y, _) = ode
            .integrate(&f, 0.0, [0.0], 100.0, 0.5, |_, y| {
                if y[0] > 3.0 {
                    Flow::Stop
                } else {
                    Flow::Continue
                }
            })
            .unwrap();
        assert!(t < 100.0 && y[0] > 3.0);
    }

    #[test]
    fn singular_rhs_underflows() {
        let f = |t: f64, _y: &[f64; 1]| [1.0 / (1.0 - t).powi(3)];
        let ode = Dopri5::new(1e-10, 1e-10);
        let res = ode.integrate(&f, 0.0, [0.0], 2.0, 0.1, |_, _| Flow::Continue);
        assert!(res.is_err());
    }
}
