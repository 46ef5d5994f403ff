//! Numerical tools for boundary spike layers of singularly perturbed Neumann problems
//! `−ε² div(J ∇u) + V u = uᵖ` in a bounded domain with zero normal derivative.

pub mod auxiliary;
pub mod expr;
pub mod gauss;
pub mod implicit_quad;
pub mod geometry;
pub mod groundstate;
pub mod ode;
pub mod potentials;
pub mod predictor;
pub mod scaled_state;
pub mod sphere;
pub mod verifier;
