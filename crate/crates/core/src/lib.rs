//! Local POD reduced-order models of the 1D viscous Burgers equation, together with
//! regression surrogates that predict their error and basis dimension, and a greedy
//! decomposition of the viscosity domain into accuracy-certified intervals.

pub mod dataset;
pub mod decomposition;
pub mod error;
pub mod fom;
pub mod gp;
pub mod io;
pub mod linalg;
pub mod mlp;
pub mod optim;
pub mod pod;
pub mod standardize;
pub mod surrogate;

pub use error::{Error, Result};
