//! Reactor state types, core configurations and the physical constants
//! shared across the pipeline.

use chrono::{Datelike, NaiveDate, NaiveTime, TimeDelta};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Licensed full power of the reactor.
pub const FULL_POWER_W: f64 = 200_000.0;

/// Maximum control rod withdrawal.
pub const MAX_ROD_HEIGHT_IN: f64 = 24.0;

pub const ROD_COUNT: usize = 4;

/// Heights of rod 1, rod 2, rod 3 and the regulating rod, in inches.
pub type RodHeights = [f64; ROD_COUNT];

/// A stable reactor operating point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReactorState {
    power: f64,
    rod_heights: RodHeights,
}

impl ReactorState {
    pub fn new(power: f64, rod_heights: RodHeights) -> Result<Self> {
        if !(power.is_finite() && power > 0.0 && power <= FULL_POWER_W) {
            return Err(Error::InvalidState(format!(
                "power {power} W outside (0, {FULL_POWER_W}]"
            )));
        }
        if let Some(h) = rod_heights
            .iter()
            .find(|h| !(h.is_finite() && (0.0..=MAX_ROD_HEIGHT_IN).contains(*h)))
        {
            return Err(Error::InvalidState(format!(
                "rod height {h} in outside [0, {MAX_ROD_HEIGHT_IN}]"
            )));
        }
        Ok(Self { power, rod_heights })
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    pub fn rod_heights(&self) -> &RodHeights {
        &self.rod_heights
    }
}

/// Sign of a power change. Zero-change transients never get this far.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Increase,
    Decrease,
}

impl Direction {
    pub fn between(initial_power: f64, final_power: f64) -> Option<Self> {
        if final_power > initial_power {
            Some(Direction::Increase)
        } else if final_power < initial_power {
            Some(Direction::Decrease)
        } else {
            None
        }
    }

    pub fn sign(self) -> f64 {
        match self {
            Direction::Increase => 1.0,
            Direction::Decrease => -1.0,
        }
    }
}

/// One power change between two stable states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransientObservation {
    pub date: NaiveDate,
    pub start_time: NaiveTime,
    pub end_time: NaiveTime,
    pub initial: ReactorState,
    pub final_state: ReactorState,
}

impl TransientObservation {
    pub fn new(
        date: NaiveDate,
        start_time: NaiveTime,
        end_time: NaiveTime,
        initial: ReactorState,
        final_state: ReactorState,
    ) -> Result<Self> {
        if end_time < start_time {
            return Err(Error::InvalidState(format!(
                "end time {end_time} precedes start time {start_time}"
            )));
        }
        Ok(Self {
            date,
            start_time,
            end_time,
            initial,
            final_state,
        })
    }

    pub fn duration(&self) -> TimeDelta {
        self.end_time - self.start_time
    }

    pub fn direction(&self) -> Option<Direction> {
        Direction::between(self.initial.power(), self.final_state.power())
    }
}

/// Integral rod worths of one core loadout and the date it entered service.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoreConfiguration {
    pub id: u16,
    /// Integral worth of each rod in dollars (beta = 0.006 already applied).
    pub rod_worths: [f64; ROD_COUNT],
    pub start_date: NaiveDate,
}

impl CoreConfiguration {
    /// The four MSTR loadouts, ordered by start date. Configuration 120 has
    /// no recorded start and covers every earlier date.
    pub fn standard() -> Vec<CoreConfiguration> {
        let ymd = |y, m, d| NaiveDate::from_ymd_opt(y, m, d).expect("valid date");
        vec![
            CoreConfiguration {
                id: 120,
                rod_worths: [6.387, 5.380, 2.963, 0.488],
                start_date: NaiveDate::MIN,
            },
            CoreConfiguration {
                id: 121,
                rod_worths: [6.387, 5.380, 2.963, 0.488],
                start_date: ymd(2014, 1, 15),
            },
            CoreConfiguration {
                id: 122,
                rod_worths: [6.597, 5.398, 2.963, 0.387],
                start_date: ymd(2014, 10, 9),
            },
            CoreConfiguration {
                id: 123,
                rod_worths: [6.583, 5.267, 3.017, 0.433],
                start_date: ymd(2014, 10, 16),
            },
        ]
    }

    pub fn total_worth(&self) -> f64 {
        self.rod_worths.iter().sum()
    }
}

/// Proleptic Gregorian day number with 0001-01-01 as day 1.
pub fn ordinal_day(date: NaiveDate) -> i32 {
    date.num_days_from_ce()
}

/// Picks the configuration in service on `date`: the last one whose start
/// date is not after it. `configs` must be sorted by start date and the
/// first entry must start at or before any date queried.
pub fn config_for_date(date: NaiveDate, configs: &[CoreConfiguration]) -> &CoreConfiguration {
    let idx = configs.partition_point(|c| c.start_date <= date);
    &configs[idx.saturating_sub(1)]
}

/// Reactivity inserted by rod withdrawal, in dollars, treating each rod's
/// integral worth as spread linearly over its travel.
pub fn reactivity_of_state(state: &ReactorState, config: &CoreConfiguration) -> f64 {
    reactivity_of_heights(state.rod_heights(), config)
}

pub fn reactivity_of_heights(heights: &RodHeights, config: &CoreConfiguration) -> f64 {
    heights
        .iter()
        .zip(&config.rod_worths)
        .map(|(h, w)| h / MAX_ROD_HEIGHT_IN * w)
        .sum()
}

/// Upper edges of the final-power classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerClassBins {
    ceilings: Vec<f64>,
}

impl Default for PowerClassBins {
    fn default() -> Self {
        Self {
            ceilings: vec![90.0, 900.0, 9_000.0, 90_000.0, FULL_POWER_W],
        }
    }
}

impl PowerClassBins {
    pub fn new(ceilings: Vec<f64>) -> Result<Self> {
        if ceilings.is_empty() {
            return Err(Error::Config("power bins need at least one ceiling".into()));
        }
        if ceilings.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("power bin ceilings must strictly increase".into()));
        }
        if ceilings.last() != Some(&FULL_POWER_W) {
            return Err(Error::Config(format!(
                "last power bin ceiling must equal full power ({FULL_POWER_W} W)"
            )));
        }
        Ok(Self { ceilings })
    }

    pub fn ceilings(&self) -> &[f64] {
        &self.ceilings
    }

    pub fn len(&self) -> usize {
        self.ceilings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ceilings.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    #[test]
    fn config_lookup_boundaries() {
        let configs = CoreConfiguration::standard();
        let id = |d| config_for_date(d, &configs).id;
        assert_eq!(id(ymd(2013, 6, 1)), 120);
        assert_eq!(id(ymd(2014, 1, 14)), 120);
        assert_eq!(id(ymd(2014, 1, 15)), 121);
        assert_eq!(id(ymd(2014, 10, 8)), 121);
        assert_eq!(id(ymd(2014, 10, 9)), 122);
        assert_eq!(id(ymd(2014, 10, 15)), 122);
        assert_eq!(id(ymd(2014, 10, 16)), 123);
        assert_eq!(id(ymd(2020, 1, 1)), 123);
    }

    #[test]
    fn ordinal_matches_python_toordinal() {
        // date(2014, 1, 15).toordinal() == 735248
        assert_eq!(ordinal_day(ymd(2014, 1, 15)), 735_248);
        assert_eq!(ordinal_day(ymd(1, 1, 1)), 1);
    }

    #[test]
    fn reactivity_examples() {
        let configs = CoreConfiguration::standard();
        let zero = ReactorState::new(10.0, [0.0; 4]).unwrap();
        assert_eq!(reactivity_of_state(&zero, &configs[0]), 0.0);

        let full = ReactorState::new(10.0, [24.0; 4]).unwrap();
        let rho = reactivity_of_state(&full, &configs[0]);
        assert!((rho - 15.218).abs() < 1e-12);

        let half = ReactorState::new(10.0, [12.0, 0.0, 0.0, 0.0]).unwrap();
        let rho = reactivity_of_state(&half, &configs[2]);
        assert!((rho - 3.2985).abs() < 1e-12);
    }

    #[test]
    fn state_validation() {
        assert!(ReactorState::new(0.0, [1.0; 4]).is_err());
        assert!(ReactorState::new(200_000.1, [1.0; 4]).is_err());
        assert!(ReactorState::new(200_000.0, [24.0; 4]).is_ok());
        assert!(ReactorState::new(5.0, [24.01, 0.0, 0.0, 0.0]).is_err());
        assert!(ReactorState::new(5.0, [f64::NAN, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn bins_validation() {
        assert_eq!(PowerClassBins::default().len(), 5);
        assert!(PowerClassBins::new(vec![90.0, 90.0, FULL_POWER_W]).is_err());
        assert!(PowerClassBins::new(vec![90.0, 1000.0]).is_err());
        assert!(PowerClassBins::new(vec![FULL_POWER_W]).is_ok());
    }

    #[test]
    fn direction_sign() {
        assert_eq!(Direction::between(200.0, 2000.0), Some(Direction::Increase));
        assert_eq!(Direction::between(2000.0, 200.0).map(Direction::sign), Some(-1.0));
        assert_eq!(Direction::between(5.0, 5.0), None);
    }
}
