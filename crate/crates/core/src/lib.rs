//! Distributed optimization over networks of double-integrator agents.
//!
//! Each agent `i` holds a private convex cost `fᵢ` and exchanges its position
//! with graph neighbors. The crate simulates a second-order primal-dual flow
//! that drives all agents to a minimizer of `Σᵢ fᵢ`, either with continuous
//! communication or with a dynamic event-triggered broadcast rule, and checks
//! the resulting trajectories against the convergence certificates.
//!
//! * [`graph`]: weighted undirected graphs, Laplacians, spectral data.
//! * [`cost`]: private costs, curvature bounds, the centralized minimizer.
//! * [`dynamics`]: continuous-communication dynamics and the RK4 integrator.
//! * [`event`]: broadcast caches, the dynamic triggering law, Zeno statistics.
//! * [`analysis`]: certificate constants, Lyapunov functions, rate fitting.
//! * [`harness`]: scenario configs, presets, runs, and file output.

pub mod analysis;
pub mod cost;
pub mod dynamics;
pub mod event;
pub mod exec;
pub mod graph;
pub mod harness;

pub use cost::{CostFunction, GlobalObjective};
pub use dynamics::{GainParams, SwarmState};
pub use exec::Execution;
pub use graph::{NetworkGraph, SpectralData};
