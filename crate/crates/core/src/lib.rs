//! Multi right-hand-side HISQ staggered Dslash with a bundled CG inverter,
//! stochastic trace estimation and an analytic roofline model.

pub mod algebra;
pub mod dslash;
pub mod fields;
pub mod lattice;
pub mod oracle;
pub mod perfmodel;
pub mod real;
pub mod rng;
pub mod solver;
pub mod traces;
