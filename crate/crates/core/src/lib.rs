//! Library for studying how an epidemic and the population's protective
//! behavior shape each other. The infection spreads over a contact network
//! while individuals imitate better-scoring peers over an information
//! network; perceived payoffs may distort small probabilities.
//!
//! The crate provides the coupled population-level dynamics, closed-form and
//! numeric steady states with stability certificates, a stochastic
//! individual-level simulation, a constrained parameter-adjustment optimizer
//! for steering the population toward targets, and estimation of the
//! probability-distortion exponent from choice data.

pub mod agent_sim;
pub mod config;
pub mod decision;
pub mod error;
pub mod estimation;
pub mod guidance;
pub mod mean_field;
pub mod params;
pub mod steady_state;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use estimation::{AlphaEstimate, Correlation, InsuranceResponse};
pub use guidance::{ConstraintTarget, GuidanceCost, InterventionVector, OptimizerConfig};
pub use params::{
    BehaviorSpec, DecisionParams, EpidemicParams, Mode, ModelParams, SystemState,
};
pub use steady_state::{CaseLabel, Stability, SteadyState};
