//! Calibration and five-level quantization of heart rate and skin conductance.
//!
//! Heart rate drives arousal and therefore the beat rate `H`. Skin
//! conductance drives the valence axis through the carrier `f`: a higher
//! level means a higher carrier and a less pleasant feel. Both axes are cut
//! into five equal-width bins between a player's rest and stress anchors and
//! clamped outside that range.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::synth::HeartbeatParams;
use crate::DomainError;

/// Beat rates for arousal levels 1..=5, BPM.
pub const H_LEVELS: [f64; 5] = [60.0, 75.0, 90.0, 105.0, 120.0];
/// Carrier frequencies for valence levels 1..=5, Hz.
pub const F_LEVELS: [f64; 5] = [100.0, 150.0, 200.0, 250.0, 300.0];

pub const LEVELS: u8 = 5;

pub const HR_RANGE: (f64, f64) = (30.0, 220.0);
pub const EDA_RANGE: (f64, f64) = (0.01, 100.0);

/// Default hysteresis band, as a fraction of one bin width.
pub const DEFAULT_HYSTERESIS: f64 = 0.1;

/// One heart rate / skin conductance reading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiosignalSample {
    /// Milliseconds since the session epoch.
    pub t_ms: u64,
    pub hr_bpm: f64,
    /// Skin conductance, microsiemens.
    pub eda_us: f64,
}

impl BiosignalSample {
    pub fn new(t_ms: u64, hr_bpm: f64, eda_us: f64) -> Result<Self, DomainError> {
        let s = Self { t_ms, hr_bpm, eda_us };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if !(HR_RANGE.0..=HR_RANGE.1).contains(&self.hr_bpm) {
            return Err(DomainError::new(format!(
                "hr_bpm {} outside {}..={}",
                self.hr_bpm, HR_RANGE.0, HR_RANGE.1
            )));
        }
        if !(EDA_RANGE.0..=EDA_RANGE.1).contains(&self.eda_us) {
            return Err(DomainError::new(format!(
                "eda_us {} outside {}..={}",
                self.eda_us, EDA_RANGE.0, EDA_RANGE.1
            )));
        }
        Ok(())
    }
}

/// Rest and stress anchors of one player.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationProfile {
    pub hr_rest: f64,
    pub hr_stress: f64,
    pub eda_rest: f64,
    pub eda_stress: f64,
}

/// Used when no calibration was run: 60 to 120 BPM, 1 to 10 uS.
impl Default for CalibrationProfile {
    fn default() -> Self {
        Self {
            hr_rest: 60.0,
            hr_stress: 120.0,
            eda_rest: 1.0,
            eda_stress: 10.0,
        }
    }
}

pub const PROFILE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ProfileFileError {
    #[error("cannot access profile file")]
    Io(#[from] std::io::Error),
    #[error("malformed profile file")]
    Parse(#[from] toml::de::Error),
    #[error("unsupported profile format_version {0} (expected {PROFILE_FORMAT_VERSION})")]
    Version(u32),
    #[error("invalid profile")]
    Invalid(#[from] DomainError),
}

#[derive(Serialize, Deserialize)]
struct ProfileDocument {
    format_version: u32,
    #[serde(flatten)]
    profile: CalibrationProfile,
}

impl CalibrationProfile {
    pub fn new(hr_rest: f64, hr_stress: f64, eda_rest: f64, eda_stress: f64) -> Result<Self, DomainError> {
        let p = Self {
            hr_rest,
            hr_stress,
            eda_rest,
            eda_stress,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        let all = [self.hr_rest, self.hr_stress, self.eda_rest, self.eda_stress];
        if !all.iter().all(|v| v.is_finite()) {
            return Err(DomainError::new("profile anchors must be finite"));
        }
        if self.hr_rest >= self.hr_stress {
            return Err(DomainError::new(format!(
                "hr_rest {} must be below hr_stress {}",
                self.hr_rest, self.hr_stress
            )));
        }
        if self.eda_rest >= self.eda_stress {
            return Err(DomainError::new(format!(
                "eda_rest {} must be below eda_stress {}",
                self.eda_rest, self.eda_stress
            )));
        }
        Ok(())
    }

    /// TOML document with `format_version` and the four anchors.
    pub fn to_toml(&self) -> String {
        let doc = ProfileDocument {
            format_version: PROFILE_FORMAT_VERSION,
            profile: *self,
        };
        toml::to_string(&doc).expect("profile serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, ProfileFileError> {
        let doc: ProfileDocument = toml::from_str(text)?;
        if doc.format_version != PROFILE_FORMAT_VERSION {
            return Err(ProfileFileError::Version(doc.format_version));
        }
        doc.profile.validate()?;
        Ok(doc.profile)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProfileFileError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ProfileFileError> {
        std::fs::write(path, self.to_toml())?;
        Ok(())
    }
}

/// Partner state on the two affect axes, each in 1..=5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EmotionLevels {
    /// Drives the beat rate.
    pub arousal_level: u8,
    /// Drives the carrier; higher means less pleasant.
    pub valence_level: u8,
}

impl EmotionLevels {
    pub fn new(arousal_level: u8, valence_level: u8) -> Result<Self, DomainError> {
        check_level(arousal_level)?;
        check_level(valence_level)?;
        Ok(Self {
            arousal_level,
            valence_level,
        })
    }

    pub fn h_bpm(&self) -> f64 {
        H_LEVELS[usize::from(self.arousal_level) - 1]
    }

    pub fn f_hz(&self) -> f64 {
        F_LEVELS[usize::from(self.valence_level) - 1]
    }
}

fn check_level(level: u8) -> Result<(), DomainError> {
    if !(1..=LEVELS).contains(&level) {
        return Err(DomainError::new(format!("level must be 1..=5, got {level}")));
    }
    Ok(())
}

/// Five equal-width bins over `[lo, hi]`, lower edges inclusive, clamped.
pub fn quantize(value: f64, lo: f64, hi: f64) -> Result<u8, DomainError> {
    if !lo.is_finite() || !hi.is_finite() || lo >= hi {
        return Err(DomainError::new(format!("need lo < hi, got lo={lo} hi={hi}")));
    }
    if value.is_nan() {
        return Err(DomainError::new("cannot quantize NaN"));
    }
    if value <= lo {
        return Ok(1);
    }
    if value >= hi {
        return Ok(LEVELS);
    }
    let bin = ((value - lo) * f64::from(LEVELS) / (hi - lo)).floor() as u8;
    Ok((bin + 1).min(LEVELS))
}

pub fn map_sample(s: &BiosignalSample, c: &CalibrationProfile) -> Result<EmotionLevels, DomainError> {
    Ok(EmotionLevels {
        arousal_level: quantize(s.hr_bpm, c.hr_rest, c.hr_stress)?,
        valence_level: quantize(s.eda_us, c.eda_rest, c.eda_stress)?,
    })
}

/// `base` with `H` and `f` taken from the level tables.
pub fn levels_to_params(e: &EmotionLevels, base: &HeartbeatParams) -> HeartbeatParams {
    base.with_rate(e.h_bpm(), e.f_hz())
}

/// [`quantize`], except that a one-level step is refused while `value` stays
/// within `margin_fraction` of a bin width from the edge being crossed.
pub fn apply_hysteresis(prev_level: u8, value: f64, lo: f64, hi: f64, margin_fraction: f64) -> Result<u8, DomainError> {
    check_level(prev_level)?;
    if !(0.0..0.5).contains(&margin_fraction) {
        return Err(DomainError::new(format!(
            "hysteresis margin must be in [0, 0.5), got {margin_fraction}"
        )));
    }
    let level = quantize(value, lo, hi)?;
    if level.abs_diff(prev_level) != 1 {
        return Ok(level);
    }
    let width = (hi - lo) / f64::from(LEVELS);
    let edge = lo + width * f64::from(level.min(prev_level));
    if (value - edge).abs() <= margin_fraction * width {
        Ok(prev_level)
    } else {
        Ok(level)
    }
}

/// Per-stream mapper that remembers the previous levels for hysteresis.
#[derive(Debug, Clone)]
pub struct LevelTracker {
    margin_fraction: f64,
    last: Option<EmotionLevels>,
}

impl LevelTracker {
    pub fn new(margin_fraction: f64) -> Result<Self, DomainError> {
        if !(0.0..0.5).contains(&margin_fraction) {
            return Err(DomainError::new(format!(
                "hysteresis margin must be in [0, 0.5), got {margin_fraction}"
            )));
        }
        Ok(Self {
            margin_fraction,
            last: None,
        })
    }

    pub fn last(&self) -> Option<EmotionLevels> {
        self.last
    }

    pub fn update(&mut self, s: &BiosignalSample, c: &CalibrationProfile) -> Result<EmotionLevels, DomainError> {
        let levels = match self.last {
            None => map_sample(s, c)?,
            Some(prev) => EmotionLevels {
                arousal_level: apply_hysteresis(
                    prev.arousal_level,
                    s.hr_bpm,
                    c.hr_rest,
                    c.hr_stress,
                    self.margin_fraction,
                )?,
                valence_level: apply_hysteresis(
                    prev.valence_level,
                    s.eda_us,
                    c.eda_rest,
                    c.eda_stress,
                    self.margin_fraction,
                )?,
            },
        };
        self.last = Some(levels);
        Ok(levels)
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Medians of the rest and stress recordings become the anchors.
pub fn calibrate(rest: &[BiosignalSample], stress: &[BiosignalSample]) -> Result<CalibrationProfile, DomainError> {
    if rest.is_empty() || stress.is_empty() {
        return Err(DomainError::new("calibration needs rest and stress samples"));
    }
    let anchor = |samples: &[BiosignalSample], pick: fn(&BiosignalSample) -> f64| {
        let mut v: Vec<f64> = samples.iter().map(pick).collect();
        median(&mut v)
    };
    CalibrationProfile::new(
        anchor(rest, |s| s.hr_bpm),
        anchor(stress, |s| s.hr_bpm),
        anchor(rest, |s| s.eda_us),
        anchor(stress, |s| s.eda_us),
    )
}

/// Demonstration presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    /// Low arousal, pleasant: slow beat, low carrier.
    Sleepy,
    /// High arousal, pleasant: fast beat, low carrier.
    Delighted,
    /// High arousal, unpleasant: fast beat, high carrier.
    Angry,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Sleepy, Preset::Delighted, Preset::Angry];

    pub fn levels(self) -> EmotionLevels {
        let (arousal_level, valence_level) = match self {
            Preset::Sleepy => (1, 1),
            Preset::Delighted => (5, 1),
            Preset::Angry => (5, 5),
        };
        EmotionLevels {
            arousal_level,
            valence_level,
        }
    }

    pub fn params(self, base: &HeartbeatParams) -> HeartbeatParams {
        levels_to_params(&self.levels(), base)
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Sleepy => "sleepy",
            Preset::Delighted => "delighted",
            Preset::Angry => "angry",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| DomainError::new(format!("unknown preset {s:?} (sleepy, delighted, angry)")))
    }
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn range() -> impl Strategy<Value = (f64, f64)> {
        (-100.0f64..100.0, 0.01f64..100.0).prop_map(|(lo, w)| (lo, lo + w))
    }

    proptest! {
        #[test]
        fn quantize_monotone((lo, hi) in range(), x in -300.0f64..300.0, dx in 0.0f64..50.0) {
            prop_assert!(quantize(x, lo, hi).unwrap() <= quantize(x + dx, lo, hi).unwrap());
        }

        #[test]
        fn quantize_surjective((lo, hi) in range()) {
            let mut seen = [false; 5];
            for k in 0..=1000 {
                let v = lo + (hi - lo) * f64::from(k) / 1000.0;
                seen[usize::from(quantize(v, lo, hi).unwrap()) - 1] = true;
            }
            prop_assert!(seen.iter().all(|&s| s));
        }

        #[test]
        fn affect_direction(hr in 30.0f64..220.0, dhr in 0.0f64..50.0, eda in 0.01f64..100.0, deda in 0.0f64..20.0) {
            let c = CalibrationProfile::default();
            let base = HeartbeatParams::default();
            let lo = levels_to_params(&map_sample(&BiosignalSample { t_ms: 0, hr_bpm: hr, eda_us: eda }, &c).unwrap(), &base);
            let hi_sample = BiosignalSample { t_ms: 0, hr_bpm: (hr + dhr).min(220.0), eda_us: (eda + deda).min(100.0) };
            let hi = levels_to_params(&map_sample(&hi_sample, &c).unwrap(), &base);
            prop_assert!(hi.h_bpm >= lo.h_bpm);
            prop_assert!(hi.f_hz >= lo.f_hz);
        }

        #[test]
        fn hysteresis_holds_in_band(
            edge in 1u8..5,
            margin in 0.01f64..0.49,
            offsets in proptest::collection::vec(-1.0f64..1.0, 2..40),
        ) {
            let (lo, hi) = (60.0, 120.0);
            let width = (hi - lo) / 5.0;
            let edge_value = lo + width * f64::from(edge);
            let values: Vec<f64> = offsets.iter().map(|o| edge_value + o * margin * width * 0.999).collect();
            let mut level = quantize(values[0], lo, hi).unwrap();
            let first = level;
            for v in &values[1..] {
                level = apply_hysteresis(level, *v, lo, hi, margin).unwrap();
                prop_assert_eq!(level, first);
            }
        }

        #[test]
        fn calibration_idempotent(hr_rest in 30.0f64..100.0, dhr in 1.0f64..100.0, eda_rest in 0.01f64..10.0, deda in 0.1f64..50.0, n in 1usize..8) {
            let anchors = CalibrationProfile::new(hr_rest, hr_rest + dhr, eda_rest, eda_rest + deda).unwrap();
            let rest = vec![BiosignalSample { t_ms: 0, hr_bpm: anchors.hr_rest, eda_us: anchors.eda_rest }; n];
            let stress = vec![BiosignalSample { t_ms: 0, hr_bpm: anchors.hr_stress, eda_us: anchors.eda_stress }; n];
            prop_assert_eq!(calibrate(&rest, &stress).unwrap(), anchors);
        }
    }
}
