//! Normalization, power classes, per-variant feature encoding and class
//! balancing.

use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{
    reactivity_of_state, CoreConfiguration, PowerClassBins, ReactorState, TransientObservation,
    FULL_POWER_W, MAX_ROD_HEIGHT_IN, ROD_COUNT,
};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Reactivity features are divided by this (just above the largest total
/// worth of any configuration) to land in [0, 1].
pub const REACTIVITY_SCALE: f64 = 16.0;

pub fn normalize_power(power: f64) -> Result<f64> {
    if !(power > 0.0) || !power.is_finite() {
        return Err(Error::Domain(format!("cannot take log of power {power} W")));
    }
    Ok(power.ln() / FULL_POWER_W.ln())
}

pub fn denormalize_power(power_norm: f64) -> f64 {
    (power_norm * FULL_POWER_W.ln()).exp()
}

pub fn normalize_rod(height: f64) -> f64 {
    height / MAX_ROD_HEIGHT_IN
}

pub fn denormalize_rod(height_norm: f64) -> f64 {
    height_norm * MAX_ROD_HEIGHT_IN
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizedState {
    pub power_norm: f64,
    pub rods_norm: [f64; ROD_COUNT],
}

impl NormalizedState {
    pub fn of(state: &ReactorState) -> Result<Self> {
        Ok(Self {
            power_norm: normalize_power(state.power())?,
            rods_norm: state.rod_heights().map(normalize_rod),
        })
    }
}

pub fn normalize(obs: &TransientObservation) -> Result<(NormalizedState, NormalizedState)> {
    Ok((
        NormalizedState::of(&obs.initial)?,
        NormalizedState::of(&obs.final_state)?,
    ))
}

/// Smallest class whose ceiling is at or above `power`.
pub fn classify_power(power: f64, bins: &PowerClassBins) -> Result<usize> {
    if !(power > 0.0) {
        return Err(Error::PowerRange(power));
    }
    bins.ceilings()
        .iter()
        .position(|&c| power <= c)
        .ok_or(Error::PowerRange(power))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantId {
    A1,
    B1,
    C1,
    D1,
    E1,
    F1,
    A2,
    B2,
    C2,
    D2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classifier,
    Regressor,
}

impl VariantId {
    pub const ALL: [VariantId; 10] = [
        VariantId::A1,
        VariantId::B1,
        VariantId::C1,
        VariantId::D1,
        VariantId::E1,
        VariantId::F1,
        VariantId::A2,
        VariantId::B2,
        VariantId::C2,
        VariantId::D2,
    ];
    pub const CLASSIFIERS: [VariantId; 6] = [
        VariantId::A1,
        VariantId::B1,
        VariantId::C1,
        VariantId::D1,
        VariantId::E1,
        VariantId::F1,
    ];
    pub const REGRESSORS: [VariantId; 4] =
        [VariantId::A2, VariantId::B2, VariantId::C2, VariantId::D2];

    pub fn as_str(self) -> &'static str {
        match self {
            VariantId::A1 => "a1",
            VariantId::B1 => "b1",
            VariantId::C1 => "c1",
            VariantId::D1 => "d1",
            VariantId::E1 => "e1",
            VariantId::F1 => "f1",
            VariantId::A2 => "a2",
            VariantId::B2 => "b2",
            VariantId::C2 => "c2",
            VariantId::D2 => "d2",
        }
    }

    pub fn task(self) -> Task {
        if Self::CLASSIFIERS.contains(&self) {
            Task::Classifier
        } else {
            Task::Regressor
        }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|v| *v == self).expect("listed")
    }
}

impl fmt::Display for VariantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VariantId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Unknown {
                kind: "variant",
                value: s.to_string(),
                valid: Self::ALL.map(VariantId::as_str).join(", "),
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    Separated,
    AllInOne,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RodFeature {
    Heights,
    Reactivity,
}

/// Which features a variant sees and how they are grouped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub variant_id: VariantId,
    pub input_mode: InputMode,
    pub rod_feature: RodFeature,
    pub uses_direction: bool,
}

impl FeatureLayout {
    pub fn for_variant(variant_id: VariantId) -> Self {
        use InputMode::*;
        use RodFeature::*;
        let (input_mode, rod_feature, uses_direction) = match variant_id {
            VariantId::A1 => (Separated, Reactivity, true),
            VariantId::B1 => (Separated, Heights, true),
            VariantId::C1 => (Separated, Reactivity, false),
            VariantId::D1 => (Separated, Heights, false),
            VariantId::E1 => (AllInOne, Reactivity, true),
            VariantId::F1 => (AllInOne, Heights, true),
            VariantId::A2 => (Separated, Heights, true),
            VariantId::B2 => (Separated, Reactivity, true),
            VariantId::C2 => (AllInOne, Heights, true),
            VariantId::D2 => (AllInOne, Reactivity, true),
        };
        Self {
            variant_id,
            input_mode,
            rod_feature,
            uses_direction,
        }
    }

    /// Features describing one rod configuration.
    fn rod_width(&self) -> usize {
        match self.rod_feature {
            RodFeature::Heights => ROD_COUNT,
            RodFeature::Reactivity => 1,
        }
    }

    /// Widths of the raw feature inputs, in model input order. Separated
    /// layouts give `[initial, final]` plus a direction scalar when used;
    /// all-in-one layouts give a single concatenated vector.
    pub fn input_widths(&self) -> Vec<usize> {
        let initial = 1 + self.rod_width();
        let fin = self.rod_width();
        let dir = usize::from(self.uses_direction);
        match self.input_mode {
            InputMode::Separated if self.uses_direction => vec![initial, fin, 1],
            InputMode::Separated => vec![initial, fin],
            InputMode::AllInOne => vec![initial + fin + dir],
        }
    }

    /// Raw feature inputs for `sample`, matching [`Self::input_widths`].
    pub fn inputs(&self, sample: &EncodedSample) -> Vec<Vec<f64>> {
        match self.input_mode {
            InputMode::Separated => {
                let mut v = vec![sample.initial_branch.clone(), sample.final_branch.clone()];
                if self.uses_direction {
                    v.push(vec![sample.direction]);
                }
                v
            }
            InputMode::AllInOne => vec![sample.initial_branch.clone()],
        }
    }

    /// True when both layouts read the same raw features, so one encoded
    /// sample can drive either.
    pub fn shares_features_with(&self, other: &FeatureLayout) -> bool {
        self.input_mode == other.input_mode
            && self.rod_feature == other.rod_feature
            && (self.input_mode == InputMode::Separated
                || self.uses_direction == other.uses_direction)
    }
}

/// Model-ready features and targets for one observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodedSample {
    pub variant_id: VariantId,
    pub initial_branch: Vec<f64>,
    /// Empty for all-in-one layouts, whose features all sit in
    /// `initial_branch`.
    pub final_branch: Vec<f64>,
    pub direction: f64,
    pub class_onehot: Vec<f64>,
    pub regression_target: f64,
}

impl EncodedSample {
    pub fn class_index(&self) -> usize {
        self.class_onehot
            .iter()
            .position(|&v| v == 1.0)
            .expect("one-hot class vector")
    }
}

/// Encodes `obs` for `layout`. `config` must be the configuration in
/// service on the observation's date.
pub fn encode(
    obs: &TransientObservation,
    layout: &FeatureLayout,
    config: &CoreConfiguration,
    bins: &PowerClassBins,
) -> Result<EncodedSample> {
    let (initial, fin) = normalize(obs)?;
    let direction = obs
        .direction()
        .ok_or_else(|| Error::Domain("transient has no power change".into()))?
        .sign();

    let mut initial_branch = vec![initial.power_norm];
    let mut final_branch = Vec::new();
    match layout.rod_feature {
        RodFeature::Heights => {
            initial_branch.extend_from_slice(&initial.rods_norm);
            final_branch.extend_from_slice(&fin.rods_norm);
        }
        RodFeature::Reactivity => {
            initial_branch.push(reactivity_of_state(&obs.initial, config) / REACTIVITY_SCALE);
            final_branch.push(reactivity_of_state(&obs.final_state, config) / REACTIVITY_SCALE);
        }
    }
    if layout.input_mode == InputMode::AllInOne {
        initial_branch.append(&mut final_branch);
        if layout.uses_direction {
            initial_branch.push(direction);
        }
    }

    let class = classify_power(obs.final_state.power(), bins)?;
    let mut class_onehot = vec![0.0; bins.len()];
    class_onehot[class] = 1.0;

    Ok(EncodedSample {
        variant_id: layout.variant_id,
        initial_branch,
        final_branch,
        direction,
        class_onehot,
        regression_target: fin.power_norm,
    })
}

/// Picks row indices so every class appears `min_count` times. The first
/// smallest class is taken verbatim; every other class is drawn uniformly
/// with replacement. Output is grouped by class.
pub fn undersample_indices(labels: &[usize], n_classes: usize, seed: u64) -> Result<Vec<usize>> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &c) in labels.iter().enumerate() {
        if c >= n_classes {
            return Err(Error::PowerRange(c as f64));
        }
        by_class[c].push(i);
    }
    if let Some(empty) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::EmptyClass(empty));
    }
    let size = by_class.iter().map(Vec::len).min().unwrap_or(0);
    let smallest = by_class
        .iter()
        .position(|c| c.len() == size)
        .expect("min exists");

    let mut rng = rng::stream(seed, Stream::Undersample, 0);
    let mut out = Vec::with_capacity(size * n_classes);
    for (c, members) in by_class.iter().enumerate() {
        if c == smallest {
            out.extend_from_slice(members);
        } else {
            out.extend((0..size).map(|_| members[rng.random_range(0..members.len())]));
        }
    }
    Ok(out)
}

pub fn undersample(samples: &[EncodedSample], seed: u64) -> Result<Vec<EncodedSample>> {
    let n_classes = samples
        .first()
        .map(|s| s.class_onehot.len())
        .ok_or_else(|| Error::Empty("nothing to undersample".into()))?;
    let labels: Vec<usize> = samples.iter().map(EncodedSample::class_index).collect();
    Ok(undersample_indices(&labels, n_classes, seed)?
        .into_iter()
        .map(|i| samples[i].clone())
        .collect())
}

/// On-disk form of an encoded data set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodedSet {
    pub layout: FeatureLayout,
    pub samples: Vec<EncodedSample>,
}

impl EncodedSet {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{reactivity_of_heights, CoreConfiguration};
    use chrono::{NaiveDate, NaiveTime};
    use proptest::prelude::*;

    fn obs(p_i: f64, p_f: f64, rods_i: [f64; 4], rods_f: [f64; 4]) -> TransientObservation {
        TransientObservation::new(
            NaiveDate::from_ymd_opt(2013, 6, 1).unwrap(),
            NaiveTime::from_hms_opt(9, 0, 0).unwrap(),
            NaiveTime::from_hms_opt(9, 20, 0).unwrap(),
            ReactorState::new(p_i, rods_i).unwrap(),
            ReactorState::new(p_f, rods_f).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_power(FULL_POWER_W).unwrap(), 1.0);
        assert!((normalize_power(90.0).unwrap() - 0.368_653_358).abs() < 1e-9);
        assert_eq!(normalize_rod(24.0), 1.0);
        assert_eq!(normalize_rod(0.0), 0.0);
        assert!(normalize_power(0.0).is_err());
        assert!(normalize_power(-3.0).is_err());
    }

    #[test]
    fn classify_examples() {
        let bins = PowerClassBins::default();
        assert_eq!(classify_power(500.0, &bins).unwrap(), 1);
        assert_eq!(classify_power(90.0, &bins).unwrap(), 0);
        assert_eq!(classify_power(90.000001, &bins).unwrap(), 1);
        assert_eq!(classify_power(FULL_POWER_W, &bins).unwrap(), 4);
        assert!(classify_power(200_001.0, &bins).is_err());
    }

    #[test]
    fn layout_flags() {
        let f = FeatureLayout::for_variant;
        assert_eq!(f(VariantId::A1).input_widths(), vec![2, 1, 1]);
        assert_eq!(f(VariantId::C1).input_widths(), vec![2, 1]);
        assert_eq!(f(VariantId::B1).input_widths(), vec![5, 4, 1]);
        assert_eq!(f(VariantId::F1).input_widths(), vec![10]);
        assert_eq!(f(VariantId::E1).input_widths(), vec![4]);
        for v in VariantId::REGRESSORS {
            assert!(f(v).uses_direction);
        }
    }

    #[test]
    fn encode_shapes_and_targets() {
        let configs = CoreConfiguration::standard();
        let bins = PowerClassBins::default();
        let o = obs(200.0, 2000.0, [10.0, 10.0, 10.0, 12.0], [12.0, 12.0, 12.0, 12.0]);
        for v in VariantId::ALL {
            let layout = FeatureLayout::for_variant(v);
            let s = encode(&o, &layout, &configs[0], &bins).unwrap();
            let widths: Vec<usize> = layout.inputs(&s).iter().map(Vec::len).collect();
            assert_eq!(widths, layout.input_widths(), "{v}");
            assert_eq!(s.direction, 1.0);
            assert_eq!(s.class_index(), 2);
            assert!((s.regression_target - normalize_power(2000.0).unwrap()).abs() < 1e-15);
        }
        let a1 = encode(&o, &FeatureLayout::for_variant(VariantId::A1), &configs[0], &bins)
            .unwrap();
        assert_eq!((a1.initial_branch.len(), a1.final_branch.len()), (2, 1));
        let expected = reactivity_of_heights(&[12.0, 12.0, 12.0, 12.0], &configs[0]) / 16.0;
        assert_eq!(a1.final_branch[0], expected);
    }

    #[test]
    fn undersample_table_counts() {
        let counts = [73, 94, 100, 126, 149];
        let labels: Vec<usize> = counts
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
            .collect();
        let idx = undersample_indices(&labels, 5, 3).unwrap();
        assert_eq!(idx.len(), 365);
        for c in 0..5 {
            assert_eq!(idx.iter().filter(|&&i| labels[i] == c).count(), 73);
        }
        // minority class copied verbatim, in order
        assert_eq!(&idx[..73], &(0..73).collect::<Vec<_>>()[..]);
    }

    #[test]
    fn undersample_balanced_and_empty() {
        let labels: Vec<usize> = (0..50).map(|i| i % 5).collect();
        let idx = undersample_indices(&labels, 5, 1).unwrap();
        assert_eq!(idx.len(), 50);
        let mut class0: Vec<usize> = idx.iter().copied().filter(|i| labels[*i] == 0).collect();
        class0.sort();
        assert_eq!(class0, (0..50).step_by(5).collect::<Vec<_>>());

        let missing = vec![0, 1, 2, 4];
        assert!(matches!(
            undersample_indices(&missing, 5, 1),
            Err(Error::EmptyClass(3))
        ));
    }

    proptest! {
        #[test]
        fn power_round_trip(p in 1.0f64..=FULL_POWER_W) {
            let back = denormalize_power(normalize_power(p).unwrap());
            prop_assert!(((back - p) / p).abs() <= 1e-9);
        }

        #[test]
        fn normalize_is_monotone(a in 1.0f64..1e5, f in 1.0001f64..2.0) {
            prop_assert!(normalize_power(a * f).unwrap() > normalize_power(a).unwrap());
        }

        #[test]
        fn classify_is_monotone(a in 0.5f64..1e5, f in 1.0f64..2.0) {
            let bins = PowerClassBins::default();
            let b = (a * f).min(FULL_POWER_W);
            prop_assert!(classify_power(b, &bins).unwrap() >= classify_power(a, &bins).unwrap());
        }

        #[test]
        fn undersample_output_is_uniform(labels in prop::collection::vec(0usize..5, 5..200), seed: u64) {
            let mut labels = labels;
            labels.extend(0..5);
            let idx = undersample_indices(&labels, 5, seed).unwrap();
            let counts: Vec<usize> = (0..5)
                .map(|c| idx.iter().filter(|&&i| labels[i] == c).count())
                .collect();
            prop_assert!(counts.iter().all(|&n| n == counts[0]));
        }

        #[test]
        fn reactivity_features_alias(shift in -2.0f64..2.0) {
            // Moving rod 1 out and rod 2 in by equal reactivity leaves the
            // reactivity encoding unchanged.
            let configs = CoreConfiguration::standard();
            let c = &configs[0];
            let bins = PowerClassBins::default();
            let layout = FeatureLayout::for_variant(VariantId::A1);
            let base = [10.0, 10.0, 10.0, 10.0];
            let d2 = -shift * c.rod_worths[0] / c.rod_worths[1];
            let moved = [10.0 + shift, 10.0 + d2, 10.0, 10.0];
            let a = encode(&obs(200.0, 2000.0, base, base), &layout, c, &bins).unwrap();
            let b = encode(&obs(200.0, 2000.0, moved, moved), &layout, c, &bins).unwrap();
            for (x, y) in a.initial_branch.iter().zip(&b.initial_branch) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            prop_assert!((a.final_branch[0] - b.final_branch[0]).abs() < 1e-12);
        }
    }
}
