//! Microgrid power-dispatch optimization.
//!
//! This crate models a grid-connected microgrid with renewable generation and
//! a battery, and trains a double dueling Q-network to control battery
//! charging and discharging against market price, carbon intensity, peak-load
//! and degradation objectives. It ships three state schemes (prediction-based,
//! prediction-free and a current-only baseline), dynamic-programming and
//! exhaustive dispatch oracles for verification, and an evaluation harness for
//! rollouts, noise sweeps and objective ablations.

pub mod agent;
pub mod data;
pub mod env;
pub mod error;
pub mod eval;
pub mod net;
pub mod schemes;

pub use agent::{AgentConfig, Experience, ReplayMemory, TrainResult, UpdateRule};
pub use data::{ExogenousRecord, NoiseSpec, Scaler, ScenarioSeries, SyntheticProfile};
pub use env::{Action, BatteryState, MicrogridConfig, RewardComponents, StepOutcome};
pub use error::{Error, Result};
pub use eval::{EvalReport, RolloutOptions, SocGrid};
pub use net::{AdamState, Checkpoint, NetParams};
pub use schemes::{Scheme, StateSpec, StateVector};
