//! Rank-one flow towers, their stage polynomials and generalized Riesz
//! products on the real line, with the numerical diagnostics used to probe
//! singularity, flatness and exponential-sum behaviour at desk scale.

mod dd;
pub mod criteria;
pub mod expsum;
pub mod fejerquad;
pub mod keyed;
pub mod riesz;
pub mod stochastic;
pub mod sum;
pub mod tower;
pub mod trigpoly;
