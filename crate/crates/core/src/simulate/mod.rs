//! Path generation: exact CTMC simulation (direct method and next reaction
//! method), the scaled process, and hybrid (PDMP) simulation with optional
//! sensitivity augmentation.

mod campaign;
mod ctmc;
mod pdmp;

pub use campaign::{ctmc_campaign, pdmp_campaign, sample_path_on_grid, CampaignResult, CtmcMethod};
pub use ctmc::{nrm_time_change, simulate_scaled, ssa_direct, ssa_on_grid, CtmcPath, GridPath};
pub use pdmp::{
    pdmp_path, pdmp_simulate, pdmp_simulate_augmented, AugmentSpec, Capture, PdmpOutcome, PdmpRun,
};

use thiserror::Error;

use crate::model::{ModelError, RateError};

/// Euler discretization and recording controls for hybrid simulation.
#[derive(Debug, Clone)]
pub struct StepConfig {
    pub dt: f64,
    pub record_grid: Vec<f64>,
    /// Cap on discrete firings (CTMC events or PDMP jumps).
    pub max_events: u64,
}

pub const DEFAULT_MAX_EVENTS: u64 = 100_000_000;

impl StepConfig {
    /// Default step `horizon / 50000`, empty record grid.
    pub fn with_default_dt(horizon: f64) -> Self {
        StepConfig {
            dt: horizon / 50_000.0,
            record_grid: Vec::new(),
            max_events: DEFAULT_MAX_EVENTS,
        }
    }

    pub fn new(dt: f64, record_grid: Vec<f64>) -> Self {
        StepConfig {
            dt,
            record_grid,
            max_events: DEFAULT_MAX_EVENTS,
        }
    }

    pub fn validate(&self, horizon: f64) -> Result<(), SimError> {
        if self.dt <= 0.0 || self.dt.is_nan() {
            return Err(SimError::BadConfig(format!("dt = {} must be > 0", self.dt)));
        }
        let mut prev = f64::NEG_INFINITY;
        for &g in &self.record_grid {
            if !(0.0..=horizon * (1.0 + 1e-12)).contains(&g) {
                return Err(SimError::BadConfig(format!(
                    "record grid time {g} outside [0, {horizon}]"
                )));
            }
            if g < prev {
                return Err(SimError::BadConfig("record grid must be sorted".into()));
            }
            prev = g;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Rate(#[from] RateError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("state became non-finite at t = {t}")]
    NonFiniteState { t: f64 },
    #[error("species {species} went negative at t = {t}")]
    NegativeCount { t: f64, species: usize },
    #[error("event budget exhausted at t = {t} after {events} events (partial path retained)")]
    MaxEventsExceeded {
        t: f64,
        events: u64,
        partial: Box<CtmcPath>,
    },
    #[error("firing budget exhausted at t = {t} after {events} jumps")]
    EventBudget { t: f64, events: u64 },
    #[error("invalid simulation configuration: {0}")]
    BadConfig(String),
}
