//! Engine for joint aging control and traffic offloading in mobile IoT
//! data collection.
//!
//! Devices move over a finite set of locations following a Markov chain and
//! decide, based on the age of their collected data and the upload price at
//! the current location, whether to upload now or defer. The crate solves the
//! per-device average-reward MDP, derives the resulting age-of-information
//! and traffic-flow distributions in closed form via taboo probabilities,
//! and searches for cost-minimizing per-location age thresholds with
//! simulated annealing, optionally accelerated by a graph-coloring
//! parallelization of the proposal step. Monte Carlo replay and brute-force
//! search provide independent validation oracles.

pub mod anneal;
pub mod aoi;
pub mod coloring;
pub mod io;
pub mod joac;
mod linalg;
pub mod mdp;
pub mod mobility;
pub mod sim;
pub mod testing;

pub use anneal::{AnnealConfig, AnnealTrace, NeighborhoodGraph, Schedule};
pub use aoi::{AggregateRates, UploadAnalytics};
pub use joac::{FeasibilityReport, JoacInstance};
pub use mdp::{AgingMdpInstance, DeterministicPolicy, MdpSolution, PriceLadder, ThresholdPolicy};
pub use mobility::{MobilityModel, TabooQuery};
pub use sim::SimResult;
