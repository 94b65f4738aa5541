//! Estimation of a CES demand system with zero market shares.
//!
//! The crate covers the demand model itself ([`model`]), a two-stage
//! semiparametric estimator (a Klein-Spady single-index first stage in
//! [`firststage`] and a pairwise-differenced, kernel-weighted IV second
//! stage in [`secondstage`]), parametric benchmarks (Probit, Heckman,
//! logit with dropped or imputed zeros), a Monte Carlo market simulator
//! ([`sim`]), recovery of the extensive-margin error distribution
//! ([`density`]), CSV ingestion ([`io`]) and a command-line front end
//! ([`cli`]).

pub mod cli;
pub mod density;
pub mod error;
pub mod firststage;
pub mod io;
pub mod model;
pub mod numerics;
pub mod secondstage;
pub mod sim;

pub use error::{Error, Result};
