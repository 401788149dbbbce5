//! Transient-log CSV ingestion, exclusion filtering and synthetic corpus
//! generation.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{NaiveDate, NaiveTime, TimeDelta};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::{
    config_for_date, reactivity_of_heights, CoreConfiguration, PowerClassBins, ReactorState,
    RodHeights, TransientObservation, FULL_POWER_W, MAX_ROD_HEIGHT_IN, ROD_COUNT,
};
use crate::error::{Error, Result};
use crate::preprocess::classify_power;
use crate::rng::{self, Stream};

pub const LOG_HEADER: [&str; 13] = [
    "date",
    "start_time",
    "end_time",
    "initial_power_w",
    "final_power_w",
    "rod1_i",
    "rod2_i",
    "rod3_i",
    "reg_i",
    "rod1_f",
    "rod2_f",
    "rod3_f",
    "reg_f",
];

const TIME_FORMAT: &str = "%H:%M";

/// Final power below which a transient counts as a shutdown.
pub const SHUTDOWN_POWER_W: f64 = 1.0;

/// Longest transient kept by the filter.
pub const MAX_TRANSIENT_MINUTES: i64 = 60;

/// One parsed, field-validated line of a transient log.
#[derive(Clone, Debug, PartialEq)]
pub struct RawLogRow {
    /// 1-based data row index (the header is row 0).
    pub row: usize,
    pub date: NaiveDate,
    pub start_time: NaiveTime,
    pub end_time: NaiveTime,
    pub initial_power: f64,
    pub final_power: f64,
    pub initial_rods: RodHeights,
    pub final_rods: RodHeights,
}

impl RawLogRow {
    pub fn from_observation(row: usize, obs: &TransientObservation) -> Self {
        Self {
            row,
            date: obs.date,
            start_time: obs.start_time,
            end_time: obs.end_time,
            initial_power: obs.initial.power(),
            final_power: obs.final_state.power(),
            initial_rods: *obs.initial.rod_heights(),
            final_rods: *obs.final_state.rod_heights(),
        }
    }
}

pub fn parse_log<R: Read>(source: R) -> Result<Vec<RawLogRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);

    let header = reader.headers()?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::Empty("transient log has no header".into()));
    }
    if header.iter().ne(LOG_HEADER.iter().copied()) {
        return Err(Error::Parse {
            row: 0,
            field: "header",
            message: format!("expected `{}`", LOG_HEADER.join(",")),
        });
    }

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            field: "record",
            message: e.to_string(),
        })?;
        rows.push(parse_record(row, &record)?);
    }
    if rows.is_empty() {
        return Err(Error::Empty("transient log has no data rows".into()));
    }
    Ok(rows)
}

pub fn read_log_file(path: &Path) -> Result<Vec<RawLogRow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_log(file)
}

fn parse_record(row: usize, record: &csv::StringRecord) -> Result<RawLogRow> {
    let field = |idx: usize| record.get(idx).unwrap_or("");
    let parse_err = |name: &'static str, message: String| Error::Parse {
        row,
        field: name,
        message,
    };

    let date = NaiveDate::parse_from_str(field(0), "%Y-%m-%d")
        .map_err(|e| parse_err(LOG_HEADER[0], format!("`{}`: {e}", field(0))))?;
    let time = |idx: usize| {
        NaiveTime::parse_from_str(field(idx), TIME_FORMAT)
            .map_err(|e| parse_err(LOG_HEADER[idx], format!("`{}`: {e}", field(idx))))
    };
    let number = |idx: usize| -> Result<f64> {
        let v: f64 = field(idx)
            .parse()
            .map_err(|e| parse_err(LOG_HEADER[idx], format!("`{}`: {e}", field(idx))))?;
        if !v.is_finite() {
            return Err(parse_err(LOG_HEADER[idx], format!("`{}` is not finite", field(idx))));
        }
        Ok(v)
    };
    let power = |idx: usize| -> Result<f64> {
        let p = number(idx)?;
        if p <= 0.0 || p > FULL_POWER_W {
            return Err(parse_err(
                LOG_HEADER[idx],
                format!("power {p} W outside (0, {FULL_POWER_W}]"),
            ));
        }
        Ok(p)
    };
    let rods = |first: usize| -> Result<RodHeights> {
        let mut out = [0.0; ROD_COUNT];
        for (k, slot) in out.iter_mut().enumerate() {
            let h = number(first + k)?;
            if !(0.0..=MAX_ROD_HEIGHT_IN).contains(&h) {
                return Err(parse_err(
                    LOG_HEADER[first + k],
                    format!("rod height {h} in outside [0, {MAX_ROD_HEIGHT_IN}]"),
                ));
            }
            *slot = h;
        }
        Ok(out)
    };

    if record.len() != LOG_HEADER.len() {
        return Err(parse_err(
            "record",
            format!("expected {} fields, found {}", LOG_HEADER.len(), record.len()),
        ));
    }

    Ok(RawLogRow {
        row,
        date,
        start_time: time(1)?,
        end_time: time(2)?,
        initial_power: power(3)?,
        final_power: power(4)?,
        initial_rods: rods(5)?,
        final_rods: rods(9)?,
    })
}

/// Writes observations in the transient-log schema. Numbers use the
/// shortest representation that parses back to the same `f64`.
pub fn write_log<W: Write>(sink: W, observations: &[TransientObservation]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    writer.write_record(LOG_HEADER)?;
    for obs in observations {
        let mut record = Vec::with_capacity(LOG_HEADER.len());
        record.push(obs.date.format("%Y-%m-%d").to_string());
        record.push(obs.start_time.format(TIME_FORMAT).to_string());
        record.push(obs.end_time.format(TIME_FORMAT).to_string());
        record.push(obs.initial.power().to_string());
        record.push(obs.final_state.power().to_string());
        record.extend(obs.initial.rod_heights().iter().map(f64::to_string));
        record.extend(obs.final_state.rod_heights().iter().map(f64::to_string));
        writer.write_record(&record)?;
    }
    writer.flush().map_err(|e| Error::io("<csv sink>", e))?;
    Ok(())
}

pub fn write_log_file(path: &Path, observations: &[TransientObservation]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_log(std::io::BufWriter::new(file), observations)
}

/// Number of rows dropped by each exclusion rule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionCounts {
    pub too_long: usize,
    pub shutdown: usize,
    pub no_change: usize,
    /// End time before start time.
    pub invalid: usize,
}

impl ExclusionCounts {
    pub fn total(&self) -> usize {
        self.too_long + self.shutdown + self.no_change + self.invalid
    }
}

#[derive(Clone, Debug)]
pub struct FilterOutcome {
    pub observations: Vec<TransientObservation>,
    pub excluded: ExclusionCounts,
}

/// Drops long transients, shutdowns and zero-change rows.
pub fn filter_observations(rows: &[RawLogRow]) -> FilterOutcome {
    let mut excluded = ExclusionCounts::default();
    let mut observations = Vec::with_capacity(rows.len());
    for row in rows {
        if row.end_time < row.start_time {
            excluded.invalid += 1;
            continue;
        }
        if row.end_time - row.start_time > TimeDelta::minutes(MAX_TRANSIENT_MINUTES) {
            excluded.too_long += 1;
            continue;
        }
        if row.final_power < SHUTDOWN_POWER_W {
            excluded.shutdown += 1;
            continue;
        }
        if row.final_power == row.initial_power {
            excluded.no_change += 1;
            continue;
        }
        let states = ReactorState::new(row.initial_power, row.initial_rods).and_then(|i| {
            ReactorState::new(row.final_power, row.final_rods).map(|f| (i, f))
        });
        match states.and_then(|(i, f)| {
            TransientObservation::new(row.date, row.start_time, row.end_time, i, f)
        }) {
            Ok(obs) => observations.push(obs),
            Err(_) => excluded.invalid += 1,
        }
    }
    FilterOutcome {
        observations,
        excluded,
    }
}

/// How the synthetic corpus ties a power change to the rod move behind it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum CouplingLaw {
    /// Each decade of power change costs a fixed reactivity change.
    LogLinear { dollars_per_decade: f64 },
    /// `P_f / P_i = (1 - rho_f) / (1 - rho_i)`, with no cap on the step.
    PowerRatio,
}

impl Default for CouplingLaw {
    fn default() -> Self {
        CouplingLaw::LogLinear {
            dollars_per_decade: 1.0,
        }
    }
}

/// Parameters of the synthetic transient corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub n_observations: usize,
    pub seed: u64,
    /// Powers operators settle at, in watts.
    pub power_anchors: Vec<f64>,
    /// Standard deviation of post-hoc rod jitter, in inches.
    pub rod_noise_scale: f64,
    /// Log-normal scatter of powers around their anchor.
    pub power_log_sigma: f64,
    /// Spread of individual rods around the bank position, in inches.
    pub bank_spread: f64,
    pub coupling: CouplingLaw,
    /// Per-transient scatter, in decades, between the rod move and the
    /// power change it produced (feedback, xenon, reading error).
    pub coupling_noise: f64,
    pub first_date: NaiveDate,
    pub last_date: NaiveDate,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            n_observations: 5000,
            seed: 1,
            power_anchors: vec![2.0, 20.0, 200.0, 2_000.0, 20_000.0, 200_000.0],
            rod_noise_scale: 0.2,
            power_log_sigma: 0.1,
            bank_spread: 1.0,
            coupling: CouplingLaw::default(),
            coupling_noise: 0.2,
            first_date: NaiveDate::from_ymd_opt(2013, 1, 7).expect("valid date"),
            last_date: NaiveDate::from_ymd_opt(2015, 6, 30).expect("valid date"),
        }
    }
}

impl CorpusSpec {
    fn validate(&self) -> Result<()> {
        if self.n_observations == 0 {
            return Err(Error::Config("corpus needs at least one observation".into()));
        }
        if self.power_anchors.len() < 2 {
            return Err(Error::Config(
                "corpus needs at least two power anchors to form a transient".into(),
            ));
        }
        if let Some(a) = self
            .power_anchors
            .iter()
            .find(|a| !(a.is_finite() && **a > SHUTDOWN_POWER_W && **a <= FULL_POWER_W))
        {
            return Err(Error::Config(format!(
                "power anchor {a} W outside ({SHUTDOWN_POWER_W}, {FULL_POWER_W}]"
            )));
        }
        if ![
            self.rod_noise_scale,
            self.power_log_sigma,
            self.bank_spread,
            self.coupling_noise,
        ]
        .iter()
        .all(|v| *v >= 0.0)
        {
            return Err(Error::Config("noise scales must be non-negative".into()));
        }
        if self.last_date < self.first_date {
            return Err(Error::Config("corpus date range is empty".into()));
        }
        if let CouplingLaw::LogLinear { dollars_per_decade } = self.coupling {
            if !(dollars_per_decade > 0.0) {
                return Err(Error::Config("dollars_per_decade must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Reactivity kept clear of the fully inserted and fully withdrawn ends
/// when choosing target states.
const REACTIVITY_MARGIN: f64 = 1.0;
const MAX_ATTEMPTS_PER_OBSERVATION: usize = 10_000;

/// Generates a deterministic corpus of plausible transients.
///
/// Final powers are spread evenly over the power classes (each class gets
/// `n / classes` observations, up to rounding); each transient starts from
/// a different anchor than it ends at.
pub fn synthesize_corpus(
    spec: &CorpusSpec,
    configs: &[CoreConfiguration],
) -> Result<Vec<TransientObservation>> {
    spec.validate()?;
    if configs.is_empty() {
        return Err(Error::Config("no core configurations".into()));
    }
    let bins = PowerClassBins::default();
    let mut anchors_by_class: Vec<Vec<f64>> = vec![Vec::new(); bins.len()];
    for &a in &spec.power_anchors {
        anchors_by_class[classify_power(a, &bins)?].push(a);
    }
    if let Some(empty) = anchors_by_class.iter().position(Vec::is_empty) {
        return Err(Error::Config(format!(
            "no power anchor falls in class {empty}; every class needs one"
        )));
    }

    let mut rng = rng::stream(spec.seed, Stream::Corpus, 0);
    let day_span = (spec.last_date - spec.first_date).num_days();
    let power_noise = Normal::new(0.0, spec.power_log_sigma).map_err(config_err)?;
    let rod_noise = Normal::new(0.0, spec.rod_noise_scale).map_err(config_err)?;
    let bank_noise = Normal::new(0.0, spec.bank_spread).map_err(config_err)?;

    let mut out = Vec::with_capacity(spec.n_observations);
    for i in 0..spec.n_observations {
        let class = i % bins.len();
        let mut attempts = 0;
        let obs = loop {
            attempts += 1;
            if attempts > MAX_ATTEMPTS_PER_OBSERVATION {
                return Err(Error::Progress {
                    accepted: out.len(),
                    attempts: out.len() * MAX_ATTEMPTS_PER_OBSERVATION + attempts,
                });
            }
            let date = spec.first_date + TimeDelta::days(rng.random_range(0..=day_span));
            let config = config_for_date(date, configs);

            let final_anchor = *anchors_by_class[class].choose(&mut rng).expect("non-empty");
            let initial_anchor = loop {
                let a = *spec.power_anchors.choose(&mut rng).expect("non-empty");
                if a != final_anchor {
                    break a;
                }
            };
            let jitter_power = |anchor: f64, rng: &mut ChaCha8Rng| {
                let limit = 3.0 * spec.power_log_sigma;
                let mut eps: f64 = power_noise.sample(rng).clamp(-limit, limit);
                if anchor * eps.exp() > FULL_POWER_W {
                    eps = -eps.abs();
                }
                (anchor * eps.exp()).min(FULL_POWER_W)
            };
            let p_i = jitter_power(initial_anchor, &mut rng);
            let p_f = jitter_power(final_anchor, &mut rng);

            let Some((rho_i, rho_f)) = target_reactivities(spec, config, p_i, p_f, &mut rng)
            else {
                continue;
            };
            let (Some(rods_i), Some(rods_f)) = (
                rods_for_reactivity(rho_i, config, &bank_noise, &mut rng),
                rods_for_reactivity(rho_f, config, &bank_noise, &mut rng),
            ) else {
                continue;
            };
            let jitter = |rods: RodHeights, rng: &mut ChaCha8Rng| {
                rods.map(|h| (h + rod_noise.sample(rng)).clamp(0.0, MAX_ROD_HEIGHT_IN))
            };
            let rods_i = jitter(rods_i, &mut rng);
            let rods_f = jitter(rods_f, &mut rng);

            let start_minute = rng.random_range(8 * 60..17 * 60);
            let duration = rng.random_range(1..=MAX_TRANSIENT_MINUTES as u32);
            let start = NaiveTime::from_num_seconds_from_midnight_opt(start_minute * 60, 0)
                .expect("in range");
            let end = start + TimeDelta::minutes(duration as i64);

            let (Ok(initial), Ok(final_state)) = (
                ReactorState::new(p_i, rods_i),
                ReactorState::new(p_f, rods_f),
            ) else {
                continue;
            };
            break TransientObservation::new(date, start, end, initial, final_state)?;
        };
        out.push(obs);
    }
    Ok(out)
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

/// Chooses initial and final reactivities consistent with the coupling law,
/// or `None` when this draw cannot be realized.
fn target_reactivities(
    spec: &CorpusSpec,
    config: &CoreConfiguration,
    p_i: f64,
    p_f: f64,
    rng: &mut ChaCha8Rng,
) -> Option<(f64, f64)> {
    let lo = REACTIVITY_MARGIN;
    let hi = config.total_worth() - REACTIVITY_MARGIN;
    match spec.coupling {
        CouplingLaw::LogLinear { dollars_per_decade } => {
            let scatter = Normal::new(0.0, spec.coupling_noise).map_err(config_err).ok()?;
            let decades = (p_f / p_i).log10();
            let delta = dollars_per_decade * (decades + scatter.sample(rng));
            // Scatter never reverses the direction of the rod move.
            if delta * decades <= 0.0 {
                return None;
            }
            let from = lo.max(lo - delta);
            let to = hi.min(hi - delta);
            if from >= to {
                return None;
            }
            let rho_i = rng.random_range(from..to);
            Some((rho_i, rho_i + delta))
        }
        CouplingLaw::PowerRatio => {
            // Work above the singular point rho = 1, where withdrawal raises
            // power: (rho_f - 1) = r (rho_i - 1).
            let ratio = p_f / p_i;
            let span = hi - 1.0;
            let x_hi = span.min(span / ratio);
            let x_lo = x_hi * 1e-2;
            let x_i = (rng.random_range(x_lo.ln()..x_hi.ln())).exp();
            let (rho_i, rho_f) = (1.0 + x_i, 1.0 + ratio * x_i);
            (rho_f <= hi).then_some((rho_i, rho_f))
        }
    }
}

/// Banked rods 1-3 with per-rod scatter plus a freely placed regulating rod,
/// solved so the total reactivity equals `target`.
fn rods_for_reactivity(
    target: f64,
    config: &CoreConfiguration,
    bank_noise: &Normal<f64>,
    rng: &mut ChaCha8Rng,
) -> Option<RodHeights> {
    let reg = rng.random_range(0.0..=MAX_ROD_HEIGHT_IN);
    let offsets: [f64; 3] = std::array::from_fn(|_| bank_noise.sample(rng));
    let w = &config.rod_worths;
    let bank_worth = w[0] + w[1] + w[2];
    let fixed = reg / MAX_ROD_HEIGHT_IN * w[3]
        + offsets
            .iter()
            .zip(w)
            .map(|(o, w)| o / MAX_ROD_HEIGHT_IN * w)
            .sum::<f64>();
    let bank = (target - fixed) / bank_worth * MAX_ROD_HEIGHT_IN;
    let rods = [bank + offsets[0], bank + offsets[1], bank + offsets[2], reg];
    let ok = rods.iter().all(|h| (0.0..=MAX_ROD_HEIGHT_IN).contains(h));
    debug_assert!(!ok || (reactivity_of_heights(&rods, config) - target).abs() < 1e-9);
    ok.then_some(rods)
}
