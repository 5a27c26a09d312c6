//! Randomly biased random walks on Galton-Watson trees in the slow
//! (boundary-case) regime.
//!
//! The crate is organised bottom-up:
//!
//! * [`law`] and [`env`] describe the branching random walk that generates
//!   the environment and grow the tree lazily;
//! * [`walker`] runs the quenched walk excursion by excursion;
//! * [`observables`] and [`quenched`] turn walks and environments into
//!   heavy-range counts, path functionals, barrier indicators and exact
//!   small-instance laws;
//! * [`spine`] implements the size-biased tree with a marked ray;
//! * [`rw1d`] is the one-dimensional random walk laboratory behind the
//!   limit constants;
//! * [`experiment`] wires everything into reproducible replicated runs.

pub mod env;
pub mod error;
pub mod experiment;
pub mod law;
pub mod observables;
pub mod quenched;
pub mod rw1d;
pub mod seed;
pub mod spine;
pub mod stats;
pub mod walker;

pub use env::{Environment, GenerationSizes, Node, NodeId};
pub use error::{Error, Result};
pub use law::{verify_boundary_case, BoundaryReport, LawSpec, OffspringLaw};
pub use seed::SimRng;
pub use stats::ConstantEstimate;
pub use walker::{run_excursion, run_n_excursions, StepCapPolicy, WalkRecord};
