//! Simulated wearable: scenario generators and CSV trace replay.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::emotion::{BiosignalSample, EDA_RANGE, HR_RANGE};
use crate::DomainError;

pub const TRACE_HEADER: &str = "t_ms,hr_bpm,eda_us";
pub const DEFAULT_EMIT_INTERVAL_MS: u64 = 1000;

/// One linear piece of a scripted scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub duration_ms: u64,
    pub hr_from: f64,
    pub hr_to: f64,
    pub eda_from: f64,
    pub eda_to: f64,
}

impl Segment {
    pub fn hold(duration_ms: u64, hr: f64, eda: f64) -> Self {
        Self {
            duration_ms,
            hr_from: hr,
            hr_to: hr,
            eda_from: eda,
            eda_to: eda,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Scenario {
    Constant {
        hr: f64,
        eda: f64,
    },
    /// Linear from `*_from` to `*_to` over `ramp_ms`, then held.
    Ramp {
        hr_from: f64,
        hr_to: f64,
        eda_from: f64,
        eda_to: f64,
        ramp_ms: u64,
    },
    Sinusoid {
        hr_baseline: f64,
        hr_amplitude: f64,
        eda_baseline: f64,
        eda_amplitude: f64,
        period_ms: u64,
    },
    /// Piecewise-linear segments, last value held past the end.
    Script {
        segments: Vec<Segment>,
    },
    /// Replays a trace file as is; duration, interval and jitter are ignored.
    TraceFile {
        path: PathBuf,
    },
}

/// Gaussian noise added to generated values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    pub hr_sd: f64,
    pub eda_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    #[serde(flatten)]
    pub scenario: Scenario,
    #[serde(default = "default_interval")]
    pub emit_interval_ms: u64,
    pub total_duration_ms: u64,
    #[serde(default)]
    pub jitter: Option<Jitter>,
}

fn default_interval() -> u64 {
    DEFAULT_EMIT_INTERVAL_MS
}

impl ScenarioSpec {
    pub fn new(scenario: Scenario, total_duration_ms: u64) -> Self {
        Self {
            scenario,
            emit_interval_ms: DEFAULT_EMIT_INTERVAL_MS,
            total_duration_ms,
            jitter: None,
        }
    }

    pub fn constant(hr: f64, eda: f64, total_duration_ms: u64) -> Self {
        Self::new(Scenario::Constant { hr, eda }, total_duration_ms)
    }

    /// Ramp from one profile's rest anchors to its stress anchors across the
    /// whole duration.
    pub fn rest_to_stress(profile: &crate::CalibrationProfile, total_duration_ms: u64) -> Self {
        Self::new(
            Scenario::Ramp {
                hr_from: profile.hr_rest,
                hr_to: profile.hr_stress,
                eda_from: profile.eda_rest,
                eda_to: profile.eda_stress,
                ramp_ms: total_duration_ms,
            },
            total_duration_ms,
        )
    }

    pub fn with_interval(mut self, emit_interval_ms: u64) -> Self {
        self.emit_interval_ms = emit_interval_ms;
        self
    }

    pub fn with_jitter(mut self, jitter: Jitter) -> Self {
        self.jitter = Some(jitter);
        self
    }

    pub fn from_json(text: &str) -> Result<Self, DomainError> {
        let spec: Self = serde_json::from_str(text).map_err(|e| DomainError::new(format!("scenario: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if let Scenario::TraceFile { .. } = self.scenario {
            return Ok(());
        }
        if self.emit_interval_ms == 0 {
            return Err(DomainError::new("emit_interval_ms must be > 0"));
        }
        let finite = |vals: &[f64]| vals.iter().all(|v| v.is_finite());
        let ok = match &self.scenario {
            Scenario::Constant { hr, eda } => finite(&[*hr, *eda]),
            Scenario::Ramp {
                hr_from,
                hr_to,
                eda_from,
                eda_to,
                ..
            } => finite(&[*hr_from, *hr_to, *eda_from, *eda_to]),
            Scenario::Sinusoid {
                hr_baseline,
                hr_amplitude,
                eda_baseline,
                eda_amplitude,
                period_ms,
            } => {
                if *period_ms == 0 {
                    return Err(DomainError::new("sinusoid period_ms must be > 0"));
                }
                finite(&[*hr_baseline, *hr_amplitude, *eda_baseline, *eda_amplitude])
            }
            Scenario::Script { segments } => {
                if segments.is_empty() {
                    return Err(DomainError::new("script needs at least one segment"));
                }
                segments
                    .iter()
                    .all(|s| finite(&[s.hr_from, s.hr_to, s.eda_from, s.eda_to]))
            }
            Scenario::TraceFile { .. } => true,
        };
        if !ok {
            return Err(DomainError::new("scenario values must be finite"));
        }
        if let Some(j) = self.jitter {
            if !(j.hr_sd >= 0.0 && j.eda_sd >= 0.0 && j.hr_sd.is_finite() && j.eda_sd.is_finite()) {
                return Err(DomainError::new("jitter deviations must be finite and >= 0"));
            }
        }
        Ok(())
    }

    /// Noise-free `(hr, eda)` at time `t_ms`.
    fn value_at(&self, t_ms: u64) -> (f64, f64) {
        let lerp = |a: f64, b: f64, x: f64| a + (b - a) * x;
        match &self.scenario {
            Scenario::Constant { hr, eda } => (*hr, *eda),
            Scenario::Ramp {
                hr_from,
                hr_to,
                eda_from,
                eda_to,
                ramp_ms,
            } => {
                let x = if *ramp_ms == 0 {
                    1.0
                } else {
                    (t_ms as f64 / *ramp_ms as f64).min(1.0)
                };
                (lerp(*hr_from, *hr_to, x), lerp(*eda_from, *eda_to, x))
            }
            Scenario::Sinusoid {
                hr_baseline,
                hr_amplitude,
                eda_baseline,
                eda_amplitude,
                period_ms,
            } => {
                let s = (std::f64::consts::TAU * t_ms as f64 / *period_ms as f64).sin();
                (hr_baseline + hr_amplitude * s, eda_baseline + eda_amplitude * s)
            }
            Scenario::Script { segments } => {
                let mut start = 0u64;
                for seg in segments {
                    if t_ms < start + seg.duration_ms {
                        let x = (t_ms - start) as f64 / seg.duration_ms as f64;
                        return (lerp(seg.hr_from, seg.hr_to, x), lerp(seg.eda_from, seg.eda_to, x));
                    }
                    start += seg.duration_ms;
                }
                let last = segments.last().expect("validated non-empty");
                (last.hr_to, last.eda_to)
            }
            Scenario::TraceFile { .. } => unreachable!("trace files are replayed, not evaluated"),
        }
    }
}

/// Rounds to the three fractional digits carried on the wire.
pub fn round_milli(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

/// Deterministic sample sequence for `(spec, seed)`.
///
/// Samples are emitted at `0, interval, 2 * interval, ...` strictly before
/// `total_duration_ms`, clamped into the valid sensor ranges and rounded to
/// three decimals.
pub fn generate(spec: &ScenarioSpec, seed: u64) -> Result<Vec<BiosignalSample>, DomainError> {
    spec.validate()?;
    if let Scenario::TraceFile { path } = &spec.scenario {
        return load_trace(path).map_err(|e| match e {
            TraceError::Io(io) => DomainError::new(format!("cannot read trace {}: {io}", path.display())),
            other => DomainError::new(format!("{}: {other}", path.display())),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = match spec.jitter {
        Some(j) => Some((
            Normal::new(0.0, j.hr_sd).map_err(|e| DomainError::new(e.to_string()))?,
            Normal::new(0.0, j.eda_sd).map_err(|e| DomainError::new(e.to_string()))?,
        )),
        None => None,
    };
    let mut out = Vec::new();
    let mut t_ms = 0u64;
    while t_ms < spec.total_duration_ms {
        let (mut hr, mut eda) = spec.value_at(t_ms);
        if let Some((hr_noise, eda_noise)) = &noise {
            hr += hr_noise.sample(&mut rng);
            eda += eda_noise.sample(&mut rng);
        }
        let hr = round_milli(hr.clamp(HR_RANGE.0, HR_RANGE.1));
        let eda = round_milli(eda.clamp(EDA_RANGE.0, EDA_RANGE.1));
        out.push(BiosignalSample {
            t_ms,
            hr_bpm: hr,
            eda_us: eda,
        });
        t_ms += spec.emit_interval_ms;
    }
    Ok(out)
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("cannot read trace")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
}

/// Parses trace CSV text. The header line is optional.
pub fn parse_trace(text: &str) -> Result<Vec<BiosignalSample>, TraceError> {
    let mut out: Vec<BiosignalSample> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let row = raw.trim();
        if row.is_empty() || (line == 1 && row == TRACE_HEADER) {
            continue;
        }
        let err = |msg: String| TraceError::Line { line, msg };
        let fields: Vec<&str> = row.split(',').map(str::trim).collect();
        let [t, hr, eda] = fields[..] else {
            return Err(err(format!("expected 3 fields, found {}", fields.len())));
        };
        let t_ms: u64 = t.parse().map_err(|_| err(format!("bad t_ms {t:?}")))?;
        let hr_bpm: f64 = hr.parse().map_err(|_| err(format!("bad hr_bpm {hr:?}")))?;
        let eda_us: f64 = eda.parse().map_err(|_| err(format!("bad eda_us {eda:?}")))?;
        let sample = BiosignalSample::new(t_ms, hr_bpm, eda_us).map_err(|e| err(e.to_string()))?;
        if let Some(prev) = out.last() {
            if sample.t_ms < prev.t_ms {
                return Err(err(format!(
                    "t_ms {} goes backwards (previous {})",
                    sample.t_ms, prev.t_ms
                )));
            }
        }
        out.push(sample);
    }
    Ok(out)
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<Vec<BiosignalSample>, TraceError> {
    parse_trace(&std::fs::read_to_string(path)?)
}

pub fn format_trace(samples: &[BiosignalSample]) -> String {
    let mut out = String::with_capacity(24 * (samples.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for s in samples {
        let _ = writeln!(out, "{},{},{}", s.t_ms, s.hr_bpm, s.eda_us);
    }
    out
}

pub fn write_trace(path: impl AsRef<Path>, samples: &[BiosignalSample]) -> std::io::Result<()> {
    std::fs::write(path, format_trace(samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_three_samples() {
        let s = generate(&ScenarioSpec::constant(60.0, 1.0, 3000), 0).unwrap();
        let t: Vec<u64> = s.iter().map(|x| x.t_ms).collect();
        assert_eq!(t, vec![0, 1000, 2000]);
        assert!(s.iter().all(|x| x.hr_bpm == 60.0 && x.eda_us == 1.0));
    }

    #[test]
    fn ramp_midpoint() {
        let spec = ScenarioSpec::new(
            Scenario::Ramp {
                hr_from: 60.0,
                hr_to: 120.0,
                eda_from: 1.0,
                eda_to: 1.0,
                ramp_ms: 60_000,
            },
            61_000,
        );
        let s = generate(&spec, 0).unwrap();
        assert_eq!(s.len(), 61);
        assert_eq!(s[30].t_ms, 30_000);
        assert_eq!(s[30].hr_bpm, 90.0);
        assert_eq!(s[60].hr_bpm, 120.0);
    }

    #[test]
    fn deterministic_with_seed() {
        let spec = ScenarioSpec::constant(80.0, 3.0, 20_000).with_jitter(Jitter {
            hr_sd: 5.0,
            eda_sd: 0.5,
        });
        let a = generate(&spec, 7).unwrap();
        assert_eq!(a, generate(&spec, 7).unwrap());
        assert_ne!(a, generate(&spec, 8).unwrap());
    }

    #[test]
    fn generator_clamps() {
        let spec = ScenarioSpec::constant(400.0, 0.0, 2000);
        let s = generate(&spec, 0).unwrap();
        assert!(s.iter().all(|x| x.hr_bpm == 220.0 && x.eda_us == 0.01));
        let noisy = ScenarioSpec::constant(215.0, 0.02, 50_000).with_jitter(Jitter {
            hr_sd: 30.0,
            eda_sd: 5.0,
        });
        for x in generate(&noisy, 3).unwrap() {
            x.validate().unwrap();
        }
    }

    #[test]
    fn script_segments() {
        let spec = ScenarioSpec::new(
            Scenario::Script {
                segments: vec![
                    Segment::hold(2000, 60.0, 1.0),
                    Segment {
                        duration_ms: 2000,
                        hr_from: 60.0,
                        hr_to: 120.0,
                        eda_from: 1.0,
                        eda_to: 9.0,
                    },
                ],
            },
            6000,
        );
        let hr: Vec<f64> = generate(&spec, 0).unwrap().iter().map(|s| s.hr_bpm).collect();
        assert_eq!(hr, vec![60.0, 60.0, 60.0, 90.0, 120.0, 120.0]);
    }

    #[test]
    fn invalid_specs() {
        assert!(generate(&ScenarioSpec::constant(60.0, 1.0, 1000).with_interval(0), 0).is_err());
        assert!(generate(&ScenarioSpec::new(Scenario::Script { segments: vec![] }, 1000), 0).is_err());
        assert!(generate(&ScenarioSpec::constant(f64::NAN, 1.0, 1000), 0).is_err());
    }

    #[test]
    fn scenario_json() {
        let spec = ScenarioSpec::from_json(
            r#"{"kind":"sinusoid","hr_baseline":80,"hr_amplitude":10,"eda_baseline":3,"eda_amplitude":1,"period_ms":10000,"total_duration_ms":5000}"#,
        )
        .unwrap();
        assert_eq!(spec.emit_interval_ms, 1000);
        let s = generate(&spec, 0).unwrap();
        assert_eq!(s.len(), 5);
        assert_eq!(s[0].hr_bpm, 80.0);
        assert!(ScenarioSpec::from_json(r#"{"kind":"nope","total_duration_ms":5}"#).is_err());
    }

    #[test]
    fn trace_two_rows() {
        let s = parse_trace("0,60,1.0\n1000,62,1.1").unwrap();
        assert_eq!(
            s,
            vec![
                BiosignalSample {
                    t_ms: 0,
                    hr_bpm: 60.0,
                    eda_us: 1.0
                },
                BiosignalSample {
                    t_ms: 1000,
                    hr_bpm: 62.0,
                    eda_us: 1.1
                },
            ]
        );
        let with_header = parse_trace("t_ms,hr_bpm,eda_us\n0,60,1.0\n").unwrap();
        assert_eq!(with_header.len(), 1);
    }

    #[test]
    fn trace_errors_name_the_line() {
        let e = parse_trace("t_ms,hr_bpm,eda_us\n0,60,1\n2000,60,1\n1000,60,1\n").unwrap_err();
        assert!(matches!(e, TraceError::Line { line: 4, .. }), "{e}");
        let e = parse_trace("0,60,1\n1000,500,1\n").unwrap_err();
        assert!(matches!(e, TraceError::Line { line: 2, .. }), "{e}");
        assert!(e.to_string().starts_with("line 2:"));
        let e = parse_trace("0,60\n").unwrap_err();
        assert!(matches!(e, TraceError::Line { line: 1, .. }));
        let e = parse_trace("0,60,1\nx,60,1\n").unwrap_err();
        assert!(matches!(e, TraceError::Line { line: 2, .. }));
    }

    #[test]
    fn trace_file_scenario() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        std::fs::write(&path, "0,60,1.0\n1000,62,1.1\n").unwrap();
        let spec = ScenarioSpec::new(Scenario::TraceFile { path: path.clone() }, 0);
        assert_eq!(generate(&spec, 0).unwrap(), load_trace(&path).unwrap());
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn trace_round_trip(hr in 30.0f64..220.0, eda in 0.01f64..100.0, hr_sd in 0.0f64..20.0, eda_sd in 0.0f64..5.0, n in 0u64..50, seed: u64) {
            let spec = ScenarioSpec::constant(hr, eda, n * 500)
                .with_interval(500)
                .with_jitter(Jitter { hr_sd, eda_sd });
            let samples = generate(&spec, seed).unwrap();
            prop_assert!(samples.iter().all(|s| s.validate().is_ok()));
            prop_assert_eq!(parse_trace(&format_trace(&samples)).unwrap(), samples);
        }
    }
}
