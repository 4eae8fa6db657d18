//! One player's end of a session.
//!
//! The receiving side maps each partner sample through the partner's
//! calibration profile into five-level arousal/valence frames, and turns the
//! frames into a continuous heartbeat drive signal. Parameter changes take
//! effect at the next beat onset; between samples the last parameters are
//! held. The same [`FrameMapper`] and [`AudioScheduler`] back both the live
//! session and the offline pipeline, so a lossless live run and an offline
//! run over the received samples agree frame for frame and sample for sample.

use std::io::{self, Write};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::Serialize;
use tokio::time::sleep_until;
use tracing::{debug, info, warn};

use crate::emotion::{BiosignalSample, CalibrationProfile, EmotionLevels, LevelTracker, DEFAULT_HYSTERESIS};
use crate::relay::{
    ClientError, ErrorCode, PlayerId, RelayClient, RelayConfig, RelayServer, SessionCounters, WireMessage,
};
use crate::sensor::{generate, ScenarioSpec};
use crate::synth::{AudioBuffer, BeatRenderer, HeartbeatParams, DEFAULT_SAMPLE_RATE};
use crate::wav::{MemorySink, PcmSink};
use crate::DomainError;

pub const FRAME_HEADER: &str = "t_ms,arousal_level,valence_level,h_bpm,f_hz";

/// Hold applied after the final sample when the stream gives no spacing.
pub const DEFAULT_HOLD_MS: u64 = 1000;

/// Partner state at one instant, for display next to the vibration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct LevelFrame {
    pub t_ms: u64,
    pub arousal_level: u8,
    pub valence_level: u8,
    pub h_bpm: u32,
    pub f_hz: u32,
}

impl LevelFrame {
    pub fn new(t_ms: u64, levels: EmotionLevels) -> Self {
        Self {
            t_ms,
            arousal_level: levels.arousal_level,
            valence_level: levels.valence_level,
            h_bpm: levels.h_bpm() as u32,
            f_hz: levels.f_hz() as u32,
        }
    }

    pub fn levels(&self) -> EmotionLevels {
        EmotionLevels {
            arousal_level: self.arousal_level,
            valence_level: self.valence_level,
        }
    }

    pub fn params(&self, base: &HeartbeatParams) -> HeartbeatParams {
        base.with_rate(f64::from(self.h_bpm), f64::from(self.f_hz))
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.t_ms, self.arousal_level, self.valence_level, self.h_bpm, self.f_hz
        )
    }
}

/// Frame CSV writer. The header goes out with the first frame; every frame
/// is flushed immediately.
pub struct FrameWriter<W: Write> {
    inner: W,
    header_written: bool,
}

impl<W: Write> FrameWriter<W> {
    pub fn new(inner: W) -> Self {
        Self {
            inner,
            header_written: false,
        }
    }

    pub fn write(&mut self, frame: &LevelFrame) -> io::Result<()> {
        if !self.header_written {
            writeln!(self.inner, "{FRAME_HEADER}")?;
            self.header_written = true;
        }
        writeln!(self.inner, "{}", frame.csv_line())?;
        self.inner.flush()
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

pub fn emit_frames<W: Write>(sink: &mut FrameWriter<W>, frames: &[LevelFrame]) -> io::Result<()> {
    frames.iter().try_for_each(|f| sink.write(f))
}

/// Synthesis and mapping settings shared by live and offline runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSettings {
    /// Supplies `a`, `b`, `c` and `phi`; `H` and `f` come from the levels.
    pub base: HeartbeatParams,
    pub sample_rate: u32,
    /// Hysteresis band as a fraction of a bin width.
    pub hysteresis: f64,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self {
            base: HeartbeatParams::default(),
            sample_rate: DEFAULT_SAMPLE_RATE,
            hysteresis: DEFAULT_HYSTERESIS,
        }
    }
}

/// Partner samples to frames, through the partner's profile.
#[derive(Debug, Clone)]
pub struct FrameMapper {
    tracker: LevelTracker,
    profile: Option<CalibrationProfile>,
}

impl FrameMapper {
    pub fn new(hysteresis: f64) -> Result<Self, DomainError> {
        Ok(Self {
            tracker: LevelTracker::new(hysteresis)?,
            profile: None,
        })
    }

    pub fn with_profile(mut self, profile: CalibrationProfile) -> Self {
        self.profile = Some(profile);
        self
    }

    pub fn set_profile(&mut self, profile: CalibrationProfile) {
        self.profile = Some(profile);
    }

    /// The partner's profile, or the uncalibrated default.
    pub fn profile(&self) -> CalibrationProfile {
        self.profile.unwrap_or_default()
    }

    pub fn map(&mut self, sample: &BiosignalSample) -> Result<LevelFrame, DomainError> {
        let levels = self.tracker.update(sample, &self.profile())?;
        Ok(LevelFrame::new(sample.t_ms, levels))
    }
}

/// Turns a frame stream into beats, switching parameters at beat onsets.
///
/// The audio clock starts at the first frame. Each beat uses the latest frame
/// at or before its onset. [`finish`](Self::finish) keeps the last
/// parameters for one more sample spacing past the final frame.
pub struct AudioScheduler<S: PcmSink> {
    sink: S,
    renderer: BeatRenderer,
    base: HeartbeatParams,
    current: Option<HeartbeatParams>,
    origin_ms: u64,
    last_t: Option<u64>,
    hold_ms: u64,
    scratch: Vec<f64>,
}

impl<S: PcmSink> AudioScheduler<S> {
    pub fn new(sink: S, settings: &SynthSettings) -> Result<Self, DomainError> {
        settings.base.validate()?;
        Ok(Self {
            sink,
            renderer: BeatRenderer::new(settings.sample_rate)?,
            base: settings.base,
            current: None,
            origin_ms: 0,
            last_t: None,
            hold_ms: DEFAULT_HOLD_MS,
            scratch: Vec::new(),
        })
    }

    fn onset_ms(&self) -> f64 {
        self.origin_ms as f64 + self.renderer.next_onset() * 1000.0
    }

    fn render_until(&mut self, t_ms: u64) -> io::Result<()> {
        let Some(p) = self.current else {
            return Ok(());
        };
        while self.onset_ms() < t_ms as f64 - 1e-6 {
            self.scratch.clear();
            self.renderer.render_beat(&p, &mut self.scratch);
            self.sink.write_samples(&self.scratch)?;
        }
        Ok(())
    }

    pub fn push(&mut self, frame: &LevelFrame) -> io::Result<()> {
        match self.last_t {
            None => self.origin_ms = frame.t_ms,
            Some(prev) if frame.t_ms > prev => self.hold_ms = frame.t_ms - prev,
            Some(_) => {}
        }
        self.render_until(frame.t_ms)?;
        let p = frame.params(&self.base);
        p.validate()
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
        self.current = Some(p);
        self.last_t = Some(frame.t_ms.max(self.last_t.unwrap_or(0)));
        Ok(())
    }

    /// Renders the tail of the final frame and finalizes the sink.
    pub fn finish(mut self) -> io::Result<AudioStats> {
        if let Some(last) = self.last_t {
            self.render_until(last + self.hold_ms)?;
        }
        self.sink.finish()?;
        Ok(self.stats())
    }

    /// Writes `duration_ms` of silence instead of beats; for sessions that
    /// never heard from a partner.
    pub fn finish_silent(mut self, duration_ms: u64) -> io::Result<AudioStats> {
        let n = (duration_ms as f64 / 1000.0 * f64::from(self.renderer.sample_rate())).round() as usize;
        let chunk = vec![0.0; 4096];
        let mut left = n;
        while left > 0 {
            let k = left.min(chunk.len());
            self.sink.write_samples(&chunk[..k])?;
            left -= k;
        }
        self.sink.finish()?;
        Ok(AudioStats {
            beats: 0,
            samples: n as u64,
            seconds: n as f64 / f64::from(self.renderer.sample_rate()),
        })
    }

    pub fn stats(&self) -> AudioStats {
        let samples = self.renderer.samples_emitted() as u64;
        AudioStats {
            beats: self.renderer.beats(),
            samples,
            seconds: samples as f64 / f64::from(self.renderer.sample_rate()),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct AudioStats {
    pub beats: u64,
    pub samples: u64,
    pub seconds: f64,
}

/// Maps a recorded partner stream straight to audio and frames, without a
/// relay. Deterministic for identical inputs.
pub fn offline_pipeline(
    trace: &[BiosignalSample],
    calib: &CalibrationProfile,
    settings: &SynthSettings,
) -> Result<(AudioBuffer, Vec<LevelFrame>), DomainError> {
    let sink = MemorySink::new();
    let frames = offline_to_sinks(trace, calib, settings, sink.clone(), None::<&mut Vec<u8>>)?;
    Ok((
        AudioBuffer {
            sample_rate: settings.sample_rate,
            samples: sink.samples(),
        },
        frames,
    ))
}

/// [`offline_pipeline`] writing into caller-supplied sinks.
pub fn offline_to_sinks<S: PcmSink, W: Write>(
    trace: &[BiosignalSample],
    calib: &CalibrationProfile,
    settings: &SynthSettings,
    audio: S,
    frames_out: Option<W>,
) -> Result<Vec<LevelFrame>, DomainError> {
    calib.validate()?;
    let io_err = |e: io::Error| DomainError::new(format!("output: {e}"));
    let mut mapper = FrameMapper::new(settings.hysteresis)?.with_profile(*calib);
    let mut scheduler = AudioScheduler::new(audio, settings)?;
    let mut writer = frames_out.map(FrameWriter::new);
    let mut frames = Vec::with_capacity(trace.len());
    for sample in trace {
        sample.validate()?;
        let frame = mapper.map(sample)?;
        scheduler.push(&frame).map_err(io_err)?;
        if let Some(w) = writer.as_mut() {
            w.write(&frame).map_err(io_err)?;
        }
        frames.push(frame);
    }
    scheduler.finish().map_err(io_err)?;
    Ok(frames)
}

/// Number of frames whose levels differ from the frame before.
pub fn level_changes(frames: &[LevelFrame]) -> u64 {
    frames.windows(2).filter(|w| w[0].levels() != w[1].levels()).count() as u64
}

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub relay: String,
    pub session_id: String,
    pub player: PlayerId,
    pub scenario: ScenarioSpec,
    pub seed: u64,
    /// This player's own anchors, published to the partner.
    pub profile: CalibrationProfile,
    pub synth: SynthSettings,
    /// Wall-clock acceleration of the scenario; 1.0 is real time.
    pub time_scale: f64,
    /// How long to wait for a partner before publishing anyway.
    pub partner_wait: Duration,
    /// How long to keep receiving after publishing ends.
    pub linger: Duration,
    pub ping_interval: Duration,
}

impl SessionConfig {
    pub fn new(
        relay: impl Into<String>,
        session_id: impl Into<String>,
        player: PlayerId,
        scenario: ScenarioSpec,
    ) -> Self {
        Self {
            relay: relay.into(),
            session_id: session_id.into(),
            player,
            scenario,
            seed: 0,
            profile: CalibrationProfile::default(),
            synth: SynthSettings::default(),
            time_scale: 1.0,
            partner_wait: Duration::from_secs(30),
            linger: Duration::from_secs(5),
            ping_interval: Duration::from_secs(1),
        }
    }
}

/// Where a live session writes its audio and frames.
pub struct SessionOutputs {
    pub audio: Box<dyn PcmSink>,
    pub frames: Option<Box<dyn Write + Send>>,
}

impl SessionOutputs {
    pub fn discard() -> Self {
        Self {
            audio: Box::new(crate::wav::NullSink),
            frames: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LatencyStats {
    pub pings: u64,
    pub rtt_ms_mean: Option<f64>,
    pub rtt_ms_p95: Option<f64>,
    pub rtt_ms_max: Option<f64>,
    /// Half the mean round trip.
    pub one_way_ms_estimate: Option<f64>,
}

impl LatencyStats {
    pub fn from_rtts(rtts: &[Duration]) -> Self {
        if rtts.is_empty() {
            return Self::default();
        }
        let mut ms: Vec<f64> = rtts.iter().map(|d| d.as_secs_f64() * 1000.0).collect();
        ms.sort_by(f64::total_cmp);
        let mean = ms.iter().sum::<f64>() / ms.len() as f64;
        Self {
            pings: ms.len() as u64,
            rtt_ms_mean: Some(mean),
            rtt_ms_p95: Some(percentile(&ms, 0.95)),
            rtt_ms_max: ms.last().copied(),
            one_way_ms_estimate: Some(mean / 2.0),
        }
    }
}

/// Nearest-rank percentile of sorted values.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Summary of one live session, serialized as the JSON session report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionReport {
    pub session_id: String,
    pub player_id: PlayerId,
    pub partner_seen: bool,
    pub partner_profile_received: bool,
    pub samples_sent: u64,
    pub samples_received: u64,
    pub frames_emitted: u64,
    pub level_changes: u64,
    pub latency: LatencyStats,
    /// Session counters from the relay's last pong.
    pub relay_forwarded: Option<u64>,
    pub relay_dropped: Option<u64>,
    pub relay_errors: u64,
    pub rate_limited: u64,
    pub audio: AudioStats,
}

#[derive(Debug, Clone)]
pub struct SessionOutcome {
    pub report: SessionReport,
    pub sent: Vec<BiosignalSample>,
    pub received: Vec<BiosignalSample>,
    pub frames: Vec<LevelFrame>,
    pub partner_profile: Option<CalibrationProfile>,
    pub rtts: Vec<Duration>,
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("output")]
    Io(#[from] io::Error),
}

#[derive(Default)]
struct Received {
    samples: Vec<BiosignalSample>,
    frames: Vec<LevelFrame>,
    profile: Option<CalibrationProfile>,
    errors: u64,
    rate_limited: u64,
    partner_left: bool,
}

const PING_TIMEOUT: Duration = Duration::from_secs(2);

/// Runs one player's side of a session against a relay.
///
/// Publishes this player's profile and scenario samples, and maps whatever
/// the partner publishes into frames and audio until the partner leaves or
/// the linger time after publishing runs out.
pub async fn run_session(config: SessionConfig, outputs: SessionOutputs) -> Result<SessionOutcome, SessionError> {
    if !config.time_scale.is_finite() || config.time_scale <= 0.0 {
        return Err(DomainError::new("time_scale must be > 0").into());
    }
    let samples = generate(&config.scenario, config.seed)?;
    let mapper = FrameMapper::new(config.synth.hysteresis)?;
    let scheduler = AudioScheduler::new(outputs.audio, &config.synth)?;

    let client = RelayClient::connect(config.relay.as_str(), &config.session_id, config.player).await?;
    info!(session = %config.session_id, player = %config.player, partner = client.partner_present_at_join(), "joined relay");
    let (tx, mut rx) = client.into_split();

    // audio writer: frames in, beats out
    let (frame_tx, frame_rx) = std::sync::mpsc::channel::<LevelFrame>();
    let silent_ms = config.scenario.total_duration_ms;
    let audio = tokio::task::spawn_blocking(move || -> io::Result<AudioStats> {
        let mut scheduler = scheduler;
        let mut any = false;
        for frame in frame_rx {
            scheduler.push(&frame)?;
            any = true;
        }
        if any {
            scheduler.finish()
        } else {
            scheduler.finish_silent(silent_ms)
        }
    });

    // receiver/mapper
    let me = config.player;
    let mut frame_writer = outputs.frames.map(FrameWriter::new);
    let receiver = tokio::spawn(async move {
        let mut mapper = mapper;
        let mut got = Received::default();
        while let Some(msg) = rx.recv().await {
            match msg {
                WireMessage::Profile { player_id, profile, .. } if player_id != me => {
                    mapper.set_profile(profile);
                    got.profile = Some(profile);
                }
                WireMessage::Sample { player_id, sample, .. } if player_id != me => {
                    got.samples.push(sample);
                    let frame = mapper.map(&sample)?;
                    if let Some(w) = frame_writer.as_mut() {
                        w.write(&frame)?;
                    }
                    let _ = frame_tx.send(frame);
                    got.frames.push(frame);
                }
                WireMessage::Leave { player_id, .. } if player_id != me => {
                    got.partner_left = true;
                    break;
                }
                WireMessage::Error { code, text, .. } => {
                    warn!(%code, %text, "relay error");
                    got.errors += 1;
                    if code == ErrorCode::RateLimited {
                        got.rate_limited += 1;
                    }
                }
                _ => {}
            }
        }
        Ok::<_, SessionError>(got)
    });

    // pinger
    let rtts: Arc<Mutex<Vec<Duration>>> = Arc::default();
    let pinger = {
        let tx = tx.clone();
        let rtts = rtts.clone();
        let interval = config.ping_interval;
        tokio::spawn(async move {
            let mut ticker = tokio::time::interval(interval);
            ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
            loop {
                ticker.tick().await;
                match tx.ping(PING_TIMEOUT).await {
                    Ok(r) => rtts.lock().unwrap().push(r.rtt),
                    Err(ClientError::Timeout) => debug!("ping timed out"),
                    Err(_) => break,
                }
            }
        })
    };

    // publisher
    let partner_seen_before = tx.wait_for_partner(config.partner_wait).await;
    if !partner_seen_before {
        info!("no partner yet; publishing anyway");
    }
    tx.send_profile(&config.profile).await?;
    let start = tokio::time::Instant::now();
    let due = |t_ms: u64| start + Duration::from_secs_f64(t_ms as f64 / 1000.0 / config.time_scale);
    let mut sent = Vec::with_capacity(samples.len());
    for s in &samples {
        sleep_until(due(s.t_ms)).await;
        tx.send_sample(s).await?;
        sent.push(*s);
    }
    sleep_until(due(config.scenario.total_duration_ms)).await;
    tx.send_leave().await?;

    let partner_seen = partner_seen_before || tx.partner_present();
    let got = if partner_seen {
        let started = Instant::now();
        let mut receiver = receiver;
        match tokio::time::timeout(config.linger, &mut receiver).await {
            Ok(joined) => joined.map_err(|e| io::Error::other(e.to_string()))??,
            Err(_) => {
                warn!(waited = ?started.elapsed(), "partner did not finish; stopping");
                receiver.abort();
                Received::default()
            }
        }
    } else {
        receiver.abort();
        match receiver.await {
            Ok(r) => r?,
            Err(_) => Received::default(),
        }
    };

    pinger.abort();
    let final_ping = tx.ping(PING_TIMEOUT).await.ok();
    if let Some(r) = final_ping {
        rtts.lock().unwrap().push(r.rtt);
    }
    let _ = tx.close().await;

    let audio_stats = audio.await.map_err(|e| io::Error::other(e.to_string()))??;
    let rtts = rtts.lock().unwrap().clone();
    let report = SessionReport {
        session_id: config.session_id.clone(),
        player_id: config.player,
        partner_seen: partner_seen || !got.samples.is_empty(),
        partner_profile_received: got.profile.is_some(),
        samples_sent: sent.len() as u64,
        samples_received: got.samples.len() as u64,
        frames_emitted: got.frames.len() as u64,
        level_changes: level_changes(&got.frames),
        latency: LatencyStats::from_rtts(&rtts),
        relay_forwarded: final_ping.and_then(|r| r.forwarded),
        relay_dropped: final_ping.and_then(|r| r.dropped),
        relay_errors: got.errors,
        rate_limited: got.rate_limited,
        audio: audio_stats,
    };
    Ok(SessionOutcome {
        report,
        sent,
        received: got.samples,
        frames: got.frames,
        partner_profile: got.profile,
        rtts,
    })
}

#[derive(Debug, Clone)]
pub struct SimulationConfig {
    pub session_id: String,
    pub scenario_a: ScenarioSpec,
    pub scenario_b: ScenarioSpec,
    pub profile_a: CalibrationProfile,
    pub profile_b: CalibrationProfile,
    pub seed: u64,
    pub synth: SynthSettings,
    pub time_scale: f64,
    pub ping_interval: Duration,
    pub relay: RelayConfig,
}

impl SimulationConfig {
    pub fn new(scenario_a: ScenarioSpec, scenario_b: ScenarioSpec) -> Self {
        Self {
            session_id: "sim".into(),
            scenario_a,
            scenario_b,
            profile_a: CalibrationProfile::default(),
            profile_b: CalibrationProfile::default(),
            seed: 0,
            synth: SynthSettings::default(),
            time_scale: 1.0,
            ping_interval: Duration::from_millis(250),
            relay: RelayConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulationOutcome {
    pub a: SessionOutcome,
    pub b: SessionOutcome,
}

impl SimulationOutcome {
    /// Final relay counters as seen by whichever player asked last.
    pub fn relay_counters(&self) -> SessionCounters {
        let pick = |f: fn(&SessionReport) -> Option<u64>| {
            f(&self.a.report)
                .into_iter()
                .chain(f(&self.b.report))
                .max()
                .unwrap_or(0)
        };
        SessionCounters {
            forwarded: pick(|r| r.relay_forwarded),
            dropped: pick(|r| r.relay_dropped),
        }
    }
}

/// Runs a relay and both players in this process over loopback.
pub async fn simulate(
    config: SimulationConfig,
    outputs_a: SessionOutputs,
    outputs_b: SessionOutputs,
) -> Result<SimulationOutcome, SessionError> {
    let server = RelayServer::start("127.0.0.1:0", config.relay.clone()).await?;
    let addr = server.local_addr().to_string();
    let session = |player, scenario: &ScenarioSpec, profile, seed| {
        let mut c = SessionConfig::new(addr.clone(), config.session_id.clone(), player, scenario.clone());
        c.seed = seed;
        c.profile = profile;
        c.synth = config.synth;
        c.time_scale = config.time_scale;
        c.ping_interval = config.ping_interval;
        c.partner_wait = Duration::from_secs(10);
        c.linger = Duration::from_secs(10);
        c
    };
    let a = session(PlayerId::A, &config.scenario_a, config.profile_a, config.seed);
    let b = session(
        PlayerId::B,
        &config.scenario_b,
        config.profile_b,
        config.seed.wrapping_add(1),
    );
    let (a, b) = tokio::join!(run_session(a, outputs_a), run_session(b, outputs_b));
    server.shutdown().await?;
    Ok(SimulationOutcome { a: a?, b: b? })
}
