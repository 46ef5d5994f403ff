use spikelab_core::groundstate::{solve_ground_state, RadialProfile};

/// Classifies a shot of `u″ + (N−1)/r u′ − u + u^p = 0` from `u(0) = a` by fixed-step RK4:
/// `true` if `u` crosses zero (a too large), `false` if `u′` turns positive first.
fn overshoots(n: usize, p: f64, a: f64) -> bool {
    let k = n as f64 - 1.0;
    let rhs = |r: f64, u: f64, du: f64| u - u.abs().powf(p - 1.0) * u - k / r * du;
    let h = 1e-3;
    let mut r = 1e-6;
    // series start: u ≈ a + (a − a^p) r² / (2N)
    let c = (a - a.powf(p)) / (2.0 * n as f64);
    let (mut u, mut du) = (a + c * r * r, 2.0 * c * r);
    while r < 40.0 {
        let (k1u, k1v) = (du, rhs(r, u, du));
        let (k2u, k2v) = (du + 0.5 * h * k1v, rhs(r + 0.5 * h, u + 0.5 * h * k1u, du + 0.5 * h * k1v));
        let (k3u, k3v) = (du + 0.5 * h * k2v, rhs(r + 0.5 * h, u + 0.5 * h * k2u, du + 0.5 * h * k2v));
        let (k4u, k4v) = (du + h * k3v, rhs(r + h, u + h * k3u, du + h * k3v));
        u += h / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u);
        du += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
        r += h;
        if u < 0.0 {
            return true;
        }
        if du > 0.0 {
            return false;
        }
    }
    panic!("shot from {a} undecided at r = 40");
}

fn shooting_oracle(n: usize, p: f64) -> f64 {
    let (mut lo, mut hi) = (1.0 + 1e-9, 20.0);
    for _ in 0..45 {
        let mid = 0.5 * (lo + hi);
        if overshoots(n, p, mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn shooting_value_matches_rk4_bisection() {
    for (n, p) in [(3usize, 3.0), (2, 2.0)] {
        let prof = solve_ground_state(n, p, 1e-10).unwrap();
        let oracle = shooting_oracle(n, p);
        assert!(
            (prof.alpha() - oracle).abs() < 1e-6 * oracle,
            "N={n} p={p}: {} vs {oracle}",
            prof.alpha()
        );
    }
}

#[test]
fn profile_is_positive_and_decreasing() {
    let prof = solve_ground_state(3, 2.0, 1e-10).unwrap();
    let mut last = f64::INFINITY;
    for k in 0..400 {
        let (u, du) = prof.eval_both(0.05 * k as f64);
        assert!(u > 0.0 && u <= last && du <= 0.0, "r = {}", 0.05 * k as f64);
        last = u;
    }
}

#[test]
fn csv_round_trip() {
    let prof = solve_ground_state(3, 3.0, 1e-10).unwrap();
    let mut table = Vec::new();
    prof.write_csv(&mut table).unwrap();
    let read = RadialProfile::read(&prof.header(), table.as_slice()).unwrap();
    assert_eq!(read.radii().len(), prof.radii().len());
    for r in [0.0, 0.7, 3.1, 12.0] {
        let (a, b) = (prof.eval_both(r).0, read.eval_both(r).0);
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300), "r = {r}: {a} vs {b}");
    }
}

#[test]
fn supercritical_exponent_rejected() {
    assert!(solve_ground_state(3, 5.0, 1e-10).is_err());
    assert!(solve_ground_state(4, 3.5, 1e-10).is_err());
    assert!(solve_ground_state(3, 1.0, 1e-10).is_err());
}
