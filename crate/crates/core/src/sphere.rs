//! Angular constants for radial integrals in ℝᴺ.

use std::f64::consts::PI;

use statrs::function::gamma::gamma;

/// Surface area of the unit sphere Sⁿ⁻¹ ⊂ ℝⁿ (`n = 1` gives the two-point sphere, area 2).
pub fn sphere_area(n: usize) -> f64 {
    assert!(n >= 1, "sphere_area needs n >= 1");
    let half = n as f64 / 2.0;
    2.0 * PI.powf(half) / gamma(half)
}

/// `∫_{ω ∈ Sᴺ⁻¹, ω·ν ≤ 0} (ω·ν) dσ(ω)` for any unit ν. Always negative.
pub fn lower_hemisphere_normal_moment(n: usize) -> f64 {
    assert!(n >= 1, "dimension must be >= 1");
    if n == 1 {
        -1.0
    } else {
        -sphere_area(n - 1) / (n as f64 - 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn known_areas() {
        assert!((sphere_area(1) - 2.0).abs() < 1e-14);
        assert!((sphere_area(2) - 2.0 * PI).abs() < 1e-14);
        assert!((sphere_area(3) - 4.0 * PI).abs() < 1e-13);
        assert!((sphere_area(4) - 2.0 * PI * PI).abs() < 1e-13);
        assert!((lower_hemisphere_normal_moment(3) + PI).abs() < 1e-13);
        assert!((lower_hemisphere_normal_moment(2) + 2.0).abs() < 1e-14);
    }

    // Monte Carlo oracle: a_N = |S^{N-1}| · E[min(ω·ν, 0)] for ω uniform on the sphere.
    #[test]
    fn normal_moment_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 2..=5usize {
            let samples = if cfg!(debug_assertions) { 200_000 } else { 10_000_000 };
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for _ in 0..samples {
                // Gaussian direction via Box–Muller.
                let mut v = [0.0f64; 5];
                let mut norm = 0.0;
                for c in v.iter_mut().take(n) {
                    let u1: f64 = rng.gen::<f64>().max(1e-300);
                    let u2: f64 = rng.gen();
                    *c = (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos();
                    norm += *c * *c;
                }
                let x = (v[n - 1] / norm.sqrt()).min(0.0);
                sum += x;
                sum_sq += x * x;
            }
            let mean = sum / samples as f64;
            let sd = ((sum_sq / samples as f64 - mean * mean) / samples as f64).sqrt();
            let expected = lower_hemisphere_normal_moment(n) / sphere_area(n);
            assert!(
                (mean - expected).abs() < 3.0 * sd + 1e-12,
                "n={n}: mc {mean} vs {expected} (sd {sd})"
            );
        }
    }
}
