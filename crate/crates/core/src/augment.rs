//! Physics-guided oversampling: small random rod moves whose power effect
//! follows the power-ratio relation for small reactivity steps.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::{
    config_for_date, reactivity_of_heights, reactivity_of_state, CoreConfiguration, Direction,
    ReactorState, RodHeights, TransientObservation, FULL_POWER_W, MAX_ROD_HEIGHT_IN,
};
use crate::error::{Error, Result};
use crate::ingest::SHUTDOWN_POWER_W;
use crate::rng::{self, Stream};

/// Largest reactivity step for which the power-ratio relation holds.
pub const MAX_DELTA_RHO: f64 = 0.5;

/// Requested drift of the perturbation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Change {
    Up,
    Down,
    #[default]
    None,
}

impl Change {
    pub fn sign(self) -> f64 {
        match self {
            Change::Up => 1.0,
            Change::Down => -1.0,
            Change::None => 0.0,
        }
    }
}

impl FromStr for Change {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "up" | "+1" | "1" => Ok(Change::Up),
            "down" | "-1" => Ok(Change::Down),
            "none" | "0" => Ok(Change::None),
            _ => Err(Error::Unknown {
                kind: "change",
                value: s.to_string(),
                valid: "up, down, none".into(),
            }),
        }
    }
}

impl fmt::Display for Change {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Change::Up => "up",
            Change::Down => "down",
            Change::None => "none",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbationPolicy {
    /// Gaussian noise on every rod, inches.
    pub base_noise_sigma: f64,
    /// Shift of rods 1-3 in the requested direction, inches.
    pub directional_bias: f64,
    /// Multiplier on the regulating rod's noise.
    pub reg_rod_scale: f64,
    /// Per-state reactivity step limit, dollars.
    pub max_delta_rho: f64,
}

impl Default for PerturbationPolicy {
    fn default() -> Self {
        Self {
            base_noise_sigma: 0.15,
            directional_bias: 0.3,
            reg_rod_scale: 10.0,
            max_delta_rho: MAX_DELTA_RHO,
        }
    }
}

impl PerturbationPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_noise_sigma > 0.0 && self.base_noise_sigma.is_finite()) {
            return Err(Error::Config("base_noise_sigma must be positive".into()));
        }
        if !(self.max_delta_rho > 0.0) {
            return Err(Error::Config("max_delta_rho must be positive".into()));
        }
        if !(self.directional_bias.is_finite() && self.reg_rod_scale.is_finite()) {
            return Err(Error::Config("perturbation parameters must be finite".into()));
        }
        Ok(())
    }
}

/// `power * (1 - rho_f) / (1 - rho_i)`, valid for steps up to 0.5 $.
pub fn apply_power_ratio(power: f64, rho_i: f64, rho_f: f64) -> Result<f64> {
    power_ratio_within(power, rho_i, rho_f, MAX_DELTA_RHO)
}

fn power_ratio_within(power: f64, rho_i: f64, rho_f: f64, limit: f64) -> Result<f64> {
    let delta = rho_f - rho_i;
    if delta.abs() > limit {
        return Err(Error::ReactivityWindow { delta, limit });
    }
    let denom = 1.0 - rho_i;
    let ratio = (1.0 - rho_f) / denom;
    if denom == 0.0 || !(ratio > 0.0) || !ratio.is_finite() {
        return Err(Error::Singular { rho_i, rho_f });
    }
    let new_power = power * ratio;
    if new_power > FULL_POWER_W {
        return Err(Error::OverPower(new_power));
    }
    Ok(new_power)
}

/// Applies one random rod perturbation. On rejection the input state is
/// returned unchanged with `accepted == false`.
///
/// Always consumes exactly four normal draws from `rng`.
pub fn perturb_state<R: Rng + ?Sized>(
    state: &ReactorState,
    config: &CoreConfiguration,
    change: Change,
    policy: &PerturbationPolicy,
    rng: &mut R,
) -> (ReactorState, bool) {
    let noise = Normal::new(0.0, policy.base_noise_sigma).expect("validated sigma");
    let mut delta: [f64; 4] = std::array::from_fn(|_| noise.sample(rng));
    for d in &mut delta[..3] {
        *d += change.sign() * policy.directional_bias;
    }
    delta[3] *= policy.reg_rod_scale;

    let old: &RodHeights = state.rod_heights();
    let new: RodHeights = std::array::from_fn(|k| old[k] + delta[k]);
    if new.iter().any(|h| !(0.0..=MAX_ROD_HEIGHT_IN).contains(h)) {
        return (*state, false);
    }

    let rho_old = reactivity_of_state(state, config);
    let rho_new = reactivity_of_heights(&new, config);
    match power_ratio_within(state.power(), rho_old, rho_new, policy.max_delta_rho)
        .and_then(|p| ReactorState::new(p, new))
    {
        Ok(next) => (next, true),
        Err(_) => (*state, false),
    }
}

/// Attempts before the acceptance rate is checked.
const PROBE_WINDOW: usize = 10_000;
/// Minimum acceptance rate after the probe window (0.1 %).
const MIN_ACCEPTANCE: f64 = 1e-3;

/// Draws `n` perturbed copies of randomly chosen observations. Both the
/// initial and final states are perturbed; a draw is redone until both
/// perturbations are accepted and the result would survive the ingest
/// filter.
pub fn over_sample(
    dataset: &[TransientObservation],
    configs: &[CoreConfiguration],
    n: usize,
    change: Change,
    policy: &PerturbationPolicy,
    seed: u64,
) -> Result<Vec<TransientObservation>> {
    Ok(over_sample_indexed(dataset, configs, n, change, policy, seed)?
        .into_iter()
        .map(|(_, obs)| obs)
        .collect())
}

/// [`over_sample`], also returning the index of each sample's source
/// observation.
pub fn over_sample_indexed(
    dataset: &[TransientObservation],
    configs: &[CoreConfiguration],
    n: usize,
    change: Change,
    policy: &PerturbationPolicy,
    seed: u64,
) -> Result<Vec<(usize, TransientObservation)>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if dataset.is_empty() {
        return Err(Error::Empty("no observations to oversample".into()));
    }
    policy.validate()?;

    let mut rng = rng::stream(seed, Stream::Augment, change_index(change));
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while out.len() < n {
        attempts += 1;
        if attempts >= PROBE_WINDOW && (out.len() as f64) < MIN_ACCEPTANCE * attempts as f64 {
            return Err(Error::Progress {
                accepted: out.len(),
                attempts,
            });
        }
        let index = rng.random_range(0..dataset.len());
        let source = &dataset[index];
        let config = config_for_date(source.date, configs);
        let (initial, ok_i) = perturb_state(&source.initial, config, change, policy, &mut rng);
        let (final_state, ok_f) =
            perturb_state(&source.final_state, config, change, policy, &mut rng);
        if !(ok_i && ok_f)
            || final_state.power() < SHUTDOWN_POWER_W
            || Direction::between(initial.power(), final_state.power()).is_none()
        {
            continue;
        }
        out.push((
            index,
            TransientObservation {
                initial,
                final_state,
                ..source.clone()
            },
        ));
    }
    Ok(out)
}

fn change_index(change: Change) -> u64 {
    match change {
        Change::None => 0,
        Change::Up => 1,
        Change::Down => 2,
    }
}
