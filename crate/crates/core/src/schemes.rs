//! MDP state construction under the three data-driven control schemes.
//!
//! The prediction-based scheme looks `T` steps ahead, the prediction-free
//! scheme looks `T` steps back, and the common baseline sees only the current
//! record. Feature layout is fixed: all price features, then all carbon
//! features, then all unmet-power features, then the state of charge.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Scaler, ScenarioSeries};
use crate::env::{BatteryState, MicrogridConfig};
use crate::error::{Error, Result};

/// Which data-driven control scheme builds the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Current plus `T` future values of each exogenous variable.
    #[serde(rename = "pb")]
    PredictionBased,
    /// Current plus `T` historical values of each exogenous variable.
    #[serde(rename = "pf")]
    PredictionFree,
    /// Only the current values; the baseline scheme.
    Common,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Scheme::PredictionBased => "pb",
            Scheme::PredictionFree => "pf",
            Scheme::Common => "common",
        };
        f.write_str(s)
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pb" => Ok(Scheme::PredictionBased),
            "pf" => Ok(Scheme::PredictionFree),
            "common" => Ok(Scheme::Common),
            other => Err(Error::Config(format!("unknown scheme {other:?}; expected pb, pf or common"))),
        }
    }
}

/// Scheme plus horizon; fully determines the state layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateSpec {
    pub scheme: Scheme,
    /// Number of steps looked ahead (pb) or back (pf). Ignored by `common`.
    pub horizon: usize,
}

impl StateSpec {
    pub fn new(scheme: Scheme, horizon: usize) -> Self {
        Self { scheme, horizon }
    }

    /// Length of the state vector: `3 (T + 1) + 1` for the windowed schemes,
    /// 4 for the common baseline.
    pub fn dim(&self) -> usize {
        match self.scheme {
            Scheme::PredictionBased | Scheme::PredictionFree => 3 * (self.horizon + 1) + 1,
            Scheme::Common => 4,
        }
    }
}

/// A fully assembled network input.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub scheme: Scheme,
    pub horizon: usize,
    pub features: Vec<f64>,
}

/// Assembles the state vector at time `t`.
///
/// Price and carbon intensity are min-max scaled and clamped into [0, 1];
/// unmet power is normalized by the peak import limit and the state of charge
/// by the battery capacity. The prediction-based scheme should be handed the
/// prediction series; the other schemes always consume actuals.
pub fn build_state(
    series: &ScenarioSeries,
    t: usize,
    soc: BatteryState,
    spec: &StateSpec,
    scaler: &Scaler,
    cfg: &MicrogridConfig,
) -> Result<StateVector> {
    let len = series.len();
    let horizon = spec.horizon;
    let (lo, hi): (i64, usize) = match spec.scheme {
        Scheme::PredictionBased => (t as i64, t + horizon),
        Scheme::PredictionFree => (t as i64 - horizon as i64, t),
        Scheme::Common => (t as i64, t),
    };
    if lo < 0 || hi >= len {
        return Err(Error::WindowOutOfRange { t, lo, hi, len });
    }
    let window = &series.records[lo as usize..=hi];

    let mut features = Vec::with_capacity(spec.dim());
    features.extend(window.iter().map(|r| scaler.price.scale_clamped(r.price)));
    features.extend(window.iter().map(|r| scaler.carbon.scale_clamped(r.carbon)));
    features.extend(window.iter().map(|r| r.unmet_kw / cfg.peak_limit_kw));
    features.push(soc.soc_kwh / cfg.capacity_kwh);
    debug_assert_eq!(features.len(), spec.dim());

    Ok(StateVector { scheme: spec.scheme, horizon, features })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ExogenousRecord, MinMax};
    use chrono::Utc;

    fn series_from(values: &[(f64, f64, f64)]) -> ScenarioSeries {
        let records = values
            .iter()
            .map(|&(price, carbon, unmet)| ExogenousRecord {
                hour: 0,
                price,
                carbon,
                demand_kw: unmet.max(0.0),
                res_kw: (-unmet).max(0.0),
                unmet_kw: unmet,
            })
            .collect();
        ScenarioSeries::from_records(Utc::now(), records)
    }

    fn unit_scaler() -> Scaler {
        Scaler { price: MinMax { min: 0.0, max: 1.0 }, carbon: MinMax { min: 0.0, max: 1.0 } }
    }

    #[test]
    fn state_dimensions_match_the_schemes() {
        assert_eq!(StateSpec::new(Scheme::PredictionBased, 24).dim(), 76);
        assert_eq!(StateSpec::new(Scheme::PredictionFree, 24).dim(), 76);
        assert_eq!(StateSpec::new(Scheme::Common, 24).dim(), 4);
    }

    #[test]
    fn prediction_free_layout_matches_the_documented_order() {
        // Two records; horizon 1; peak limit and capacity tuned so the raw
        // values pass through the normalization unchanged.
        let series = series_from(&[(0.2, 0.1, 0.5), (0.4, 0.3, 0.6)]);
        let mut cfg = MicrogridConfig::default();
        cfg.peak_limit_kw = 1.0;
        cfg.capacity_kwh = 1.0;
        let spec = StateSpec::new(Scheme::PredictionFree, 1);
        let s = build_state(&series, 1, BatteryState { soc_kwh: 0.5 }, &spec, &unit_scaler(), &cfg)
            .unwrap();
        assert_eq!(s.features, vec![0.2, 0.4, 0.1, 0.3, 0.5, 0.6, 0.5]);
    }

    #[test]
    fn prediction_based_looks_forward() {
        let series = series_from(&[(0.1, 0.2, 0.3), (0.4, 0.5, 0.6), (0.7, 0.8, 0.9)]);
        let mut cfg = MicrogridConfig::default();
        cfg.peak_limit_kw = 1.0;
        cfg.capacity_kwh = 1.0;
        let spec = StateSpec::new(Scheme::PredictionBased, 1);
        let s = build_state(&series, 1, BatteryState { soc_kwh: 0.25 }, &spec, &unit_scaler(), &cfg)
            .unwrap();
        assert_eq!(s.features, vec![0.4, 0.7, 0.5, 0.8, 0.6, 0.9, 0.25]);
    }

    #[test]
    fn common_scheme_sees_only_the_current_record() {
        let series = series_from(&[(0.1, 0.2, 445.0), (0.4, 0.5, 890.0)]);
        let cfg = MicrogridConfig::default(); // peak 4450, capacity 1000
        let spec = StateSpec::new(Scheme::Common, 24);
        let s = build_state(&series, 1, BatteryState { soc_kwh: 500.0 }, &spec, &unit_scaler(), &cfg)
            .unwrap();
        assert_eq!(s.features, vec![0.4, 0.5, 0.2, 0.5]);
    }

    #[test]
    fn scaled_features_are_clamped() {
        let series = series_from(&[(8.0, -3.0, 0.0)]);
        let scaler = Scaler {
            price: MinMax { min: 2.0, max: 6.0 },
            carbon: MinMax { min: 0.0, max: 1.0 },
        };
        let spec = StateSpec::new(Scheme::Common, 0);
        let cfg = MicrogridConfig::default();
        let s = build_state(&series, 0, BatteryState { soc_kwh: 500.0 }, &spec, &scaler, &cfg).unwrap();
        assert_eq!(s.features[0], 1.0);
        assert_eq!(s.features[1], 0.0);
    }

    #[test]
    fn windows_out_of_range_error() {
        let series = series_from(&[(0.1, 0.2, 0.3); 10]);
        let cfg = MicrogridConfig::default();
        let scaler = unit_scaler();
        let pf = StateSpec::new(Scheme::PredictionFree, 4);
        assert!(build_state(&series, 3, BatteryState { soc_kwh: 500.0 }, &pf, &scaler, &cfg).is_err());
        assert!(build_state(&series, 4, BatteryState { soc_kwh: 500.0 }, &pf, &scaler, &cfg).is_ok());
        let pb = StateSpec::new(Scheme::PredictionBased, 4);
        assert!(build_state(&series, 6, BatteryState { soc_kwh: 500.0 }, &pb, &scaler, &cfg).is_err());
        assert!(build_state(&series, 5, BatteryState { soc_kwh: 500.0 }, &pb, &scaler, &cfg).is_ok());
    }

    #[test]
    fn pb_and_pf_views_of_the_same_window_agree() {
        // The prediction-based state at t and the prediction-free state at
        // t + T read the same records in the same order.
        let series = series_from(&[
            (0.1, 0.9, 100.0),
            (0.2, 0.8, 200.0),
            (0.3, 0.7, 300.0),
            (0.4, 0.6, 400.0),
            (0.5, 0.5, 500.0),
        ]);
        let cfg = MicrogridConfig::default();
        let scaler = unit_scaler();
        let soc = BatteryState { soc_kwh: 300.0 };
        let t = 1;
        let horizon = 3;
        let pb = build_state(&series, t, soc, &StateSpec::new(Scheme::PredictionBased, horizon), &scaler, &cfg)
            .unwrap();
        let pf = build_state(
            &series,
            t + horizon,
            soc,
            &StateSpec::new(Scheme::PredictionFree, horizon),
            &scaler,
            &cfg,
        )
        .unwrap();
        assert_eq!(pb.features, pf.features);
    }

    #[test]
    fn scheme_strings_round_trip() {
        for s in [Scheme::PredictionBased, Scheme::PredictionFree, Scheme::Common] {
            assert_eq!(s.to_string().parse::<Scheme>().unwrap(), s);
        }
        assert!("pbx".parse::<Scheme>().is_err());
    }
}
