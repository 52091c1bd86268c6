//! Deterministic microgrid environment.
//!
//! Maps a discrete battery command to a feasible power flow, advances the
//! state of charge, splits the power balance into grid import and curtailment,
//! and computes the four-term reward (market profit, carbon benefit, peak-load
//! penalty, battery degradation).
//!
//! Sign convention: positive battery power discharges the battery, negative
//! power charges it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance (kW) applied when checking battery power feasibility.
pub const POWER_TOLERANCE_KW: f64 = 1e-9;

/// Physical and reward constants of the microgrid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MicrogridConfig {
    /// Total battery capacity (kWh).
    pub capacity_kwh: f64,
    /// Highest allowed state of charge (kWh).
    pub soc_max_kwh: f64,
    /// Lowest allowed state of charge (kWh).
    pub soc_min_kwh: f64,
    /// Maximum energy that can be moved to or from the battery in one
    /// interval (kWh).
    pub transfer_cap_kwh: f64,
    /// Charge/discharge efficiency, strictly inside (0, 1).
    pub efficiency: f64,
    /// Peak import limit from the grid (kW). Imports above it are penalized,
    /// not forbidden.
    pub peak_limit_kw: f64,
    /// Length of one control interval (h).
    pub dt_hours: f64,
    /// Constant standby loss rate while the battery idles (kW).
    pub standby_loss_kw: f64,
    /// Weight of the carbon benefit term.
    pub carbon_weight: f64,
    /// Weight of the peak-load penalty term.
    pub peak_weight: f64,
    /// Weight of the battery degradation term.
    pub degradation_weight: f64,
}

impl Default for MicrogridConfig {
    fn default() -> Self {
        Self {
            capacity_kwh: 1000.0,
            soc_max_kwh: 900.0,
            soc_min_kwh: 100.0,
            transfer_cap_kwh: 300.0,
            efficiency: 0.95,
            peak_limit_kw: 4450.0,
            dt_hours: 1.0,
            standby_loss_kw: 0.0,
            carbon_weight: 0.25,
            peak_weight: 1.5,
            degradation_weight: 0.02,
        }
    }
}

impl MicrogridConfig {
    /// Checks every documented constraint and reports the first violation
    /// with the offending field values.
    pub fn validate(&self) -> Result<()> {
        let c = |ok: bool, msg: String| if ok { Ok(()) } else { Err(Error::Config(msg)) };
        c(
            self.soc_min_kwh > 0.0 && self.soc_min_kwh < self.soc_max_kwh,
            format!(
                "soc bounds must satisfy 0 < soc_min < soc_max (got soc_min={}, soc_max={})",
                self.soc_min_kwh, self.soc_max_kwh
            ),
        )?;
        c(
            self.soc_max_kwh <= self.capacity_kwh,
            format!(
                "soc_max ({}) must not exceed capacity ({})",
                self.soc_max_kwh, self.capacity_kwh
            ),
        )?;
        c(
            self.efficiency > 0.0 && self.efficiency < 1.0,
            format!("efficiency must lie strictly in (0, 1), got {}", self.efficiency),
        )?;
        c(
            self.transfer_cap_kwh >= 0.0,
            format!("transfer_cap_kwh must be non-negative, got {}", self.transfer_cap_kwh),
        )?;
        c(
            self.standby_loss_kw >= 0.0,
            format!("standby_loss_kw must be non-negative, got {}", self.standby_loss_kw),
        )?;
        c(
            self.peak_limit_kw > 0.0,
            format!("peak_limit_kw must be positive, got {}", self.peak_limit_kw),
        )?;
        c(
            self.dt_hours > 0.0,
            format!("dt_hours must be positive, got {}", self.dt_hours),
        )?;
        // Objective weights keep their intended priority ordering:
        // peak penalty dominates, market profit outweighs carbon benefit,
        // degradation stays an order of magnitude below carbon.
        c(
            self.peak_weight > 1.0,
            format!("peak_weight must exceed 1 (got {})", self.peak_weight),
        )?;
        c(
            self.carbon_weight >= 0.0 && self.carbon_weight < 1.0,
            format!("carbon_weight must lie in [0, 1) (got {})", self.carbon_weight),
        )?;
        c(
            self.degradation_weight >= 0.0 && self.degradation_weight <= self.carbon_weight / 10.0,
            format!(
                "degradation_weight must lie in [0, carbon_weight/10] (got {}, carbon_weight={})",
                self.degradation_weight, self.carbon_weight
            ),
        )?;
        Ok(())
    }

    /// Midpoint of the allowed SOC band; the canonical deterministic start.
    pub fn mid_soc(&self) -> BatteryState {
        BatteryState { soc_kwh: 0.5 * (self.soc_min_kwh + self.soc_max_kwh) }
    }
}

/// One of the five discrete battery commands.
///
/// The index order (0..4) runs from maximum charge to maximum discharge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    FullCharge,
    HalfCharge,
    Idle,
    HalfDischarge,
    FullDischarge,
}

impl Action {
    /// Number of discrete commands.
    pub const COUNT: usize = 5;

    /// All commands in index order.
    pub const ALL: [Action; Action::COUNT] = [
        Action::FullCharge,
        Action::HalfCharge,
        Action::Idle,
        Action::HalfDischarge,
        Action::FullDischarge,
    ];

    /// Fraction of the transfer cap this command moves; positive discharges.
    pub fn level(self) -> f64 {
        match self {
            Action::FullCharge => -1.0,
            Action::HalfCharge => -0.5,
            Action::Idle => 0.0,
            Action::HalfDischarge => 0.5,
            Action::FullDischarge => 1.0,
        }
    }

    /// Position of this command in [`Action::ALL`].
    pub fn index(self) -> usize {
        match self {
            Action::FullCharge => 0,
            Action::HalfCharge => 1,
            Action::Idle => 2,
            Action::HalfDischarge => 3,
            Action::FullDischarge => 4,
        }
    }

    /// Inverse of [`Action::index`].
    pub fn from_index(index: usize) -> Result<Action> {
        Action::ALL
            .get(index)
            .copied()
            .ok_or_else(|| Error::ShapeMismatch(format!("action index {index} out of range 0..5")))
    }
}

/// Battery state of charge (kWh).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryState {
    pub soc_kwh: f64,
}

/// Exogenous values consumed by one environment step.
#[derive(Debug, Clone, Copy)]
pub struct StepInput {
    /// Market price, min-max scaled into [0, 1].
    pub price_scaled: f64,
    /// Carbon intensity, min-max scaled into [0, 1].
    pub carbon_scaled: f64,
    /// Unmet power demand minus renewable generation (kW); may be negative.
    pub unmet_kw: f64,
}

/// Signed contributions of the four reward terms.
///
/// `peak_penalty` is never positive; `degradation` is never negative and
/// enters the total with a minus sign.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardComponents {
    pub market: f64,
    pub carbon: f64,
    pub peak_penalty: f64,
    pub degradation: f64,
}

impl RewardComponents {
    /// Signed sum of the four terms.
    pub fn total(&self) -> f64 {
        self.market + self.carbon + self.peak_penalty - self.degradation
    }

    /// Elementwise accumulation.
    pub fn add(&mut self, other: &RewardComponents) {
        self.market += other.market;
        self.carbon += other.carbon;
        self.peak_penalty += other.peak_penalty;
        self.degradation += other.degradation;
    }
}

/// Everything one environment step produced.
#[derive(Debug, Clone, Copy)]
pub struct StepOutcome {
    /// Realized battery power after feasibility clipping (kW, + discharges).
    pub battery_kw: f64,
    /// Grid import (kW, never negative).
    pub grid_kw: f64,
    /// Surplus power that could not be used, stored or exported (kW, >= 0).
    pub curtailed_kw: f64,
    /// Total reward for the step.
    pub reward: f64,
    /// Signed reward terms; `reward == components.total()`.
    pub components: RewardComponents,
    /// State of charge after the step.
    pub next_soc: BatteryState,
    /// True when the commanded power had to be clipped to stay feasible.
    pub clipped: bool,
    /// True when grid import exceeded the peak limit.
    pub peak_violated: bool,
}

/// Feasible battery power interval `(lo, hi)` for the current state of
/// charge (kW). `lo <= 0` bounds charging, `hi >= 0` bounds discharging.
pub fn power_bounds(soc: BatteryState, cfg: &MicrogridConfig) -> (f64, f64) {
    let hi = (soc.soc_kwh - cfg.soc_min_kwh) * cfg.efficiency / cfg.dt_hours;
    let lo = (soc.soc_kwh - cfg.soc_max_kwh) / (cfg.efficiency * cfg.dt_hours);
    (lo.min(0.0), hi.max(0.0))
}

/// Converts a discrete command into the realized battery power (kW).
///
/// The commanded power `level * transfer_cap / dt` is clipped into the
/// feasible interval; infeasible commands are absorbed rather than rejected.
pub fn action_to_power(action: Action, soc: BatteryState, cfg: &MicrogridConfig) -> f64 {
    let commanded = action.level() * cfg.transfer_cap_kwh / cfg.dt_hours;
    let (lo, hi) = power_bounds(soc, cfg);
    commanded.clamp(lo, hi)
}

/// Advances the state of charge under a realized battery power.
///
/// The power must already respect the feasibility interval; anything beyond
/// [`POWER_TOLERANCE_KW`] outside it is a contract violation. Standby losses
/// while idling are floored at the minimum state of charge.
pub fn battery_step(soc: BatteryState, power_kw: f64, cfg: &MicrogridConfig) -> Result<BatteryState> {
    let (lo, hi) = power_bounds(soc, cfg);
    if power_kw < lo - POWER_TOLERANCE_KW || power_kw > hi + POWER_TOLERANCE_KW {
        return Err(Error::InfeasiblePower { power_kw, lo_kw: lo, hi_kw: hi });
    }
    let next = if power_kw > 0.0 {
        soc.soc_kwh - cfg.dt_hours * power_kw / cfg.efficiency
    } else if power_kw < 0.0 {
        soc.soc_kwh - cfg.dt_hours * power_kw * cfg.efficiency
    } else {
        (soc.soc_kwh - cfg.dt_hours * cfg.standby_loss_kw).max(cfg.soc_min_kwh)
    };
    Ok(BatteryState { soc_kwh: next })
}

/// Splits the post-battery power balance into grid import and curtailment.
///
/// Export to the grid is disallowed, so any surplus (renewables beyond demand,
/// or discharge beyond the unmet load) is curtailed.
pub fn grid_power(unmet_kw: f64, battery_kw: f64) -> (f64, f64) {
    let import = (unmet_kw - battery_kw).max(0.0);
    let curtailed = (battery_kw - unmet_kw).max(0.0);
    (import, curtailed)
}

/// Four-term reward for one interval.
///
/// Market profit and carbon benefit reward discharging when price and carbon
/// intensity are high; the peak term penalizes grid imports above the limit;
/// degradation charges the realized energy throughput.
pub fn reward(
    price_scaled: f64,
    carbon_scaled: f64,
    battery_kw: f64,
    unmet_kw: f64,
    cfg: &MicrogridConfig,
) -> (f64, RewardComponents) {
    let dt = cfg.dt_hours;
    let components = RewardComponents {
        market: price_scaled * battery_kw * dt,
        carbon: cfg.carbon_weight * carbon_scaled * battery_kw * dt,
        peak_penalty: cfg.peak_weight * (battery_kw + cfg.peak_limit_kw - unmet_kw).min(0.0) * dt,
        degradation: cfg.degradation_weight * battery_kw.abs() * dt,
    };
    (components.total(), components)
}

/// Runs one full environment step for a commanded action.
pub fn step(
    soc: BatteryState,
    action: Action,
    input: StepInput,
    cfg: &MicrogridConfig,
) -> Result<StepOutcome> {
    let commanded = action.level() * cfg.transfer_cap_kwh / cfg.dt_hours;
    let battery_kw = action_to_power(action, soc, cfg);
    let clipped = (battery_kw - commanded).abs() > POWER_TOLERANCE_KW;
    let (total, components) =
        reward(input.price_scaled, input.carbon_scaled, battery_kw, input.unmet_kw, cfg);
    let next_soc = battery_step(soc, battery_kw, cfg)?;
    let (grid_kw, curtailed_kw) = grid_power(input.unmet_kw, battery_kw);
    Ok(StepOutcome {
        battery_kw,
        grid_kw,
        curtailed_kw,
        reward: total,
        components,
        next_soc,
        clipped,
        peak_violated: components.peak_penalty < 0.0,
    })
}

/// Draws a uniformly random initial state of charge inside the allowed band.
pub fn reset<R: Rng + ?Sized>(cfg: &MicrogridConfig, rng: &mut R) -> BatteryState {
    BatteryState { soc_kwh: rng.random_range(cfg.soc_min_kwh..=cfg.soc_max_kwh) }
}
