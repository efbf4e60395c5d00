//! Secure load-flow certificates for DC distribution networks.
//!
//! [`existence`] certifies that a load-flow solution satisfying voltage and
//! current limits exists by solving a convex relaxation and checking that it
//! is tight. [`uniqueness`] certifies that the Jacobian is nonsingular over
//! the security region, or finds a point where it is not.

pub mod cli;
pub mod cvxsolver;
pub mod existence;
pub mod loadflow;
pub mod netmodel;
pub mod uniqueness;
