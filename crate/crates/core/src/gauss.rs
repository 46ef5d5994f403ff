//! Cached Gauss–Legendre rules mapped to the unit interval.

use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::legendre::GaussLegendre;

const MAX_CACHED: usize = 64;

/// Gauss–Legendre nodes and weights on `[0, 1]`.
#[derive(Debug, Clone)]
pub struct UnitRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl UnitRule {
    fn build(order: usize) -> Self {
        let rule = GaussLegendre::new(NonZeroUsize::new(order).expect("order > 0"));
        let mut pairs: Vec<(f64, f64)> = rule.as_node_weight_pairs().to_vec();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self {
            nodes: pairs.iter().map(|&(x, _)| 0.5 * (x + 1.0)).collect(),
            weights: pairs.iter().map(|&(_, w)| 0.5 * w).collect(),
        }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Integrates `f` over `[a, b]`.
    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let h = b - a;
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(a + h * t))
            .sum::<f64>()
            * h
    }
}

/// Returns the shared rule of the given order (1..=64).
pub fn unit_rule(order: usize) -> &'static UnitRule {
    static RULES: OnceLock<Vec<OnceLock<UnitRule>>> = OnceLock::new();
    assert!(
        (1..=MAX_CACHED).contains(&order),
        "Gauss rule order {order} outside 1..={MAX_CACHED}"
    );
    let table = RULES.get_or_init(|| (0..=MAX_CACHED).map(|_| OnceLock::new()).collect());
    table[order].get_or_init(|| UnitRule::build(order))
}

/// Composite Gauss–Legendre integration of `f` over `[a, b]` split into `panels` equal pieces.
pub fn composite(a: f64, b: f64, panels: usize, order: usize, mut f: impl FnMut(f64) -> f64) -> f64 {
    let rule = unit_rule(order);
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|i| {
            let lo = a + h * i as f64;
            rule.integrate(lo, lo + h, &mut f)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_for_polynomials() {
        let rule = unit_rule(5);
        // degree 9 is integrated exactly
        let v = rule.integrate(-1.0, 2.0, |x| x.powi(9));
        let exact = (2f64.powi(10) - 1.0) / 10.0;
        assert!((v - exact).abs() < 1e-11 * exact);
        assert!((rule.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn composite_matches_exponential() {
        let v = composite(0.0, 10.0, 20, 8, |x| (-x).exp());
        assert!((v - (1.0 - (-10f64).exp())).abs() < 1e-14);
    }
}
