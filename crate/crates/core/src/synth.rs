//! Heartbeat-like vibrotactile waveform.
//!
//! One beat lasts `60 / H` seconds and holds two decaying sinusoids sharing
//! the carrier `f`: the first heart sound starts at the beat onset, the second
//! starts `phi` seconds later scaled by `c`.
//!
//! ```text
//! s1(t') = a * exp(-b t') * sin(2 pi f t')
//! s2(t') = 0                  for t' < phi
//!        = c * s1(t' - phi)   otherwise
//! V(t)   = s1(t') + s2(t'),   t' = t mod (60 / H)
//! ```

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::DomainError;

/// Default output rate of rendered drive signals.
pub const DEFAULT_SAMPLE_RATE: u32 = 44_100;
/// Lowest sample rate accepted by the renderers.
pub const MIN_SAMPLE_RATE: u32 = 8_000;

/// Parameters of one heartbeat waveform.
///
/// `a`, `b`, `c` and `phi` default to hand-picked values (the original
/// constants were never published): S1 decays below 5% within 100 ms, S2 is
/// half as loud and lands 300 ms after S1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeartbeatParams {
    /// Initial amplitude of the first sound.
    pub a: f64,
    /// Decay rate, 1/s.
    pub b: f64,
    /// Second-to-first sound amplitude ratio.
    pub c: f64,
    /// Onset delay of the second sound, seconds.
    pub phi: f64,
    /// Heart rate, beats per minute.
    pub h_bpm: f64,
    /// Carrier frequency, Hz.
    pub f_hz: f64,
}

impl Default for HeartbeatParams {
    fn default() -> Self {
        Self {
            a: 1.0,
            b: 30.0,
            c: 0.5,
            phi: 0.3,
            h_bpm: 60.0,
            f_hz: 100.0,
        }
    }
}

impl HeartbeatParams {
    pub fn with_rate(self, h_bpm: f64, f_hz: f64) -> Self {
        Self { h_bpm, f_hz, ..self }
    }

    /// Beat period in seconds.
    pub fn period(&self) -> f64 {
        60.0 / self.h_bpm
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        let finite = [self.a, self.b, self.c, self.phi, self.h_bpm, self.f_hz]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(DomainError::new("heartbeat parameters must be finite"));
        }
        if self.a <= 0.0 {
            return Err(DomainError::new(format!("amplitude a must be > 0, got {}", self.a)));
        }
        if self.b <= 0.0 {
            return Err(DomainError::new(format!("decay b must be > 0, got {}", self.b)));
        }
        if self.c < 0.0 {
            return Err(DomainError::new(format!("ratio c must be >= 0, got {}", self.c)));
        }
        if self.h_bpm <= 0.0 {
            return Err(DomainError::new(format!("heart rate must be > 0, got {}", self.h_bpm)));
        }
        if self.f_hz <= 0.0 {
            return Err(DomainError::new(format!("carrier must be > 0, got {}", self.f_hz)));
        }
        if self.phi <= 0.0 || self.phi >= self.period() {
            return Err(DomainError::new(format!(
                "phi must lie in (0, {:.4}) s for {} BPM, got {}",
                self.period(),
                self.h_bpm,
                self.phi
            )));
        }
        Ok(())
    }
}

/// Reduces absolute time `t` to the time since the current beat onset.
///
/// The result lies in `[0, 60 / h_bpm)`. Values that land within rounding
/// distance below a full period are snapped to 0, so exact multiples of the
/// period never fold to the end of the previous beat.
pub fn phase_fold(t: f64, h_bpm: f64) -> Result<f64, DomainError> {
    if !h_bpm.is_finite() || h_bpm <= 0.0 {
        return Err(DomainError::new(format!("heart rate must be > 0, got {h_bpm}")));
    }
    if !t.is_finite() || t < 0.0 {
        return Err(DomainError::new(format!("time must be >= 0, got {t}")));
    }
    Ok(fold_unchecked(t, 60.0 / h_bpm))
}

#[inline]
fn fold_unchecked(t: f64, period: f64) -> f64 {
    let r = t - period * (t / period).floor();
    let tol = 16.0 * f64::EPSILON * t.max(period);
    if r <= 0.0 || period - r <= tol {
        0.0
    } else {
        r
    }
}

/// First heart sound at in-beat time `t_prime`.
#[inline]
pub fn s1(t_prime: f64, p: &HeartbeatParams) -> f64 {
    p.a * (-p.b * t_prime).exp() * (TAU * p.f_hz * t_prime).sin()
}

/// Second heart sound: silent before `phi`, then a scaled copy of `s1`.
#[inline]
pub fn s2(t_prime: f64, p: &HeartbeatParams) -> f64 {
    if t_prime < p.phi {
        0.0
    } else {
        p.c * s1(t_prime - p.phi, p)
    }
}

#[inline]
fn beat_value(t_prime: f64, p: &HeartbeatParams) -> f64 {
    s1(t_prime, p) + s2(t_prime, p)
}

/// Waveform value at absolute time `t >= 0`.
pub fn heartbeat_value(t: f64, p: &HeartbeatParams) -> Result<f64, DomainError> {
    let t_prime = phase_fold(t, p.h_bpm)?;
    Ok(beat_value(t_prime, p))
}

/// Mono samples at a fixed rate. Values are unclipped until encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub sample_rate: u32,
    pub samples: Vec<f64>,
}

impl AudioBuffer {
    pub fn new(sample_rate: u32) -> Result<Self, DomainError> {
        check_rate(sample_rate)?;
        Ok(Self {
            sample_rate,
            samples: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

fn check_rate(sample_rate: u32) -> Result<(), DomainError> {
    if sample_rate < MIN_SAMPLE_RATE {
        return Err(DomainError::new(format!(
            "sample rate must be >= {MIN_SAMPLE_RATE}, got {sample_rate}"
        )));
    }
    Ok(())
}

/// Renders `duration` seconds of the waveform; `ceil(duration * rate)` samples.
pub fn render(p: &HeartbeatParams, duration: f64, sample_rate: u32) -> Result<AudioBuffer, DomainError> {
    p.validate()?;
    check_rate(sample_rate)?;
    if !duration.is_finite() || duration <= 0.0 {
        return Err(DomainError::new(format!("duration must be > 0, got {duration}")));
    }
    let len = (duration * f64::from(sample_rate)).ceil() as usize;
    let renderer = BeatRenderer::new(sample_rate)?;
    let samples = (0..len).map(|i| renderer.value_at(i, p, 0.0)).collect();
    Ok(AudioBuffer { sample_rate, samples })
}

/// Renders `total_beats` beats, switching parameters only at beat onsets.
///
/// `schedule` holds `(first_beat_index, params)` pairs; entry `k` applies
/// from its beat index until the next entry's.
pub fn render_stream(
    schedule: &[(usize, HeartbeatParams)],
    total_beats: usize,
    sample_rate: u32,
) -> Result<AudioBuffer, DomainError> {
    let Some(&(first, _)) = schedule.first() else {
        return Err(DomainError::new("schedule must not be empty"));
    };
    if first != 0 {
        return Err(DomainError::new(format!("schedule must start at beat 0, got {first}")));
    }
    if schedule.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(DomainError::new("schedule beat indices must be strictly increasing"));
    }
    for (_, p) in schedule {
        p.validate()?;
    }

    let mut renderer = BeatRenderer::new(sample_rate)?;
    let mut out = Vec::new();
    let mut entry = 0;
    for beat in 0..total_beats {
        while entry + 1 < schedule.len() && schedule[entry + 1].0 <= beat {
            entry += 1;
        }
        renderer.render_beat(&schedule[entry].1, &mut out);
    }
    Ok(AudioBuffer {
        sample_rate,
        samples: out,
    })
}

/// Incremental beat-by-beat renderer.
///
/// Beats are laid end to end on a shared sample clock. While the parameters
/// stay the same the in-beat time is folded from the start of that run, so a
/// run rendered here matches [`render`] over the same span.
#[derive(Debug, Clone)]
pub struct BeatRenderer {
    sample_rate: u32,
    /// Start of the current run of identical parameters, seconds.
    run_start: f64,
    run_params: Option<HeartbeatParams>,
    beats_in_run: u64,
    samples_emitted: usize,
    beats: u64,
}

impl BeatRenderer {
    pub fn new(sample_rate: u32) -> Result<Self, DomainError> {
        check_rate(sample_rate)?;
        Ok(Self {
            sample_rate,
            run_start: 0.0,
            run_params: None,
            beats_in_run: 0,
            samples_emitted: 0,
            beats: 0,
        })
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Number of beats rendered so far.
    pub fn beats(&self) -> u64 {
        self.beats
    }

    /// Onset time of the next beat, seconds.
    pub fn next_onset(&self) -> f64 {
        match &self.run_params {
            Some(p) => self.run_start + self.beats_in_run as f64 * p.period(),
            None => self.run_start,
        }
    }

    pub fn samples_emitted(&self) -> usize {
        self.samples_emitted
    }

    #[inline]
    fn value_at(&self, index: usize, p: &HeartbeatParams, run_start: f64) -> f64 {
        let t = index as f64 / f64::from(self.sample_rate);
        let local = (t - run_start).max(0.0);
        beat_value(fold_unchecked(local, p.period()), p)
    }

    fn first_index_at(&self, time: f64) -> usize {
        let x = time * f64::from(self.sample_rate);
        (x - 1e-9).ceil().max(0.0) as usize
    }

    /// Appends one full beat with parameters `p` to `out`.
    ///
    /// `p` is expected to be valid; see [`HeartbeatParams::validate`].
    pub fn render_beat(&mut self, p: &HeartbeatParams, out: &mut Vec<f64>) {
        if self.run_params.as_ref() != Some(p) {
            self.run_start = self.next_onset();
            self.run_params = Some(*p);
            self.beats_in_run = 0;
        }
        self.beats_in_run += 1;
        let end = self.first_index_at(self.next_onset());
        let run_start = self.run_start;
        out.extend((self.samples_emitted..end).map(|i| self.value_at(i, p, run_start)));
        self.samples_emitted = self.samples_emitted.max(end);
        self.beats += 1;
    }
}
