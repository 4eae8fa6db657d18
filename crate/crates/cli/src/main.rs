use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use heartlink_core::emotion::{calibrate, DEFAULT_HYSTERESIS};
use heartlink_core::relay::{serve, RelayConfig, DEFAULT_QUEUE_CAPACITY, DEFAULT_RATE_LIMIT};
use heartlink_core::sensor::load_trace;
use heartlink_core::session::{
    offline_to_sinks, run_session, simulate, SessionConfig, SessionOutputs, SimulationConfig, SynthSettings,
};
use heartlink_core::synth::{render, DEFAULT_SAMPLE_RATE};
use heartlink_core::wav::{NullSink, PcmSink, RawPcmWriter, WavWriter};
use heartlink_core::{CalibrationProfile, HeartbeatParams, PlayerId, Preset, ScenarioSpec};

const DEFAULT_RELAY: &str = "127.0.0.1:7878";

#[derive(Parser, Debug)]
#[command(
    name = "heartlink",
    version,
    about = "Mutual heartbeat vibration over a biosignal relay"
)]
struct Cli {
    /// Log filter, e.g. `info` or `heartlink_core=debug`; also read from RUST_LOG.
    #[arg(long, global = true, value_name = "FILTER")]
    log: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a heartbeat waveform to WAV (or raw PCM with `--out -`).
    Render(RenderArgs),
    /// List the emotion presets and their parameters.
    Presets,
    /// Run the relay.
    Serve(ServeArgs),
    /// Join a relay session as one player.
    Connect(ConnectArgs),
    /// Run a relay and both players in this process over loopback.
    Simulate(SimulateArgs),
    /// Map a recorded partner trace to audio and level frames.
    Offline(OfflineArgs),
    /// Build a calibration profile from rest and stress recordings.
    Calibrate(CalibrateArgs),
}

/// Waveform constants shared by every command that synthesizes audio.
#[derive(Args, Debug, Clone)]
struct SynthArgs {
    #[arg(long, default_value_t = DEFAULT_SAMPLE_RATE)]
    sample_rate: u32,
    /// Initial amplitude.
    #[arg(long, default_value_t = 1.0)]
    a: f64,
    /// Decay rate, 1/s.
    #[arg(long, default_value_t = 30.0)]
    b: f64,
    /// Second-sound amplitude ratio.
    #[arg(long, default_value_t = 0.5)]
    c: f64,
    /// Second-sound onset delay, s.
    #[arg(long, default_value_t = 0.3)]
    phi: f64,
    /// Hysteresis band as a fraction of a level bin.
    #[arg(long, default_value_t = DEFAULT_HYSTERESIS)]
    hysteresis: f64,
}

impl SynthArgs {
    fn settings(&self) -> SynthSettings {
        let base = HeartbeatParams {
            a: self.a,
            b: self.b,
            c: self.c,
            phi: self.phi,
            ..HeartbeatParams::default()
        };
        SynthSettings {
            base,
            sample_rate: self.sample_rate,
            hysteresis: self.hysteresis,
        }
    }
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[arg(long, conflicts_with_all = ["h_bpm", "f_hz"])]
    preset: Option<Preset>,
    /// Heart rate, BPM.
    #[arg(long, default_value_t = 60.0)]
    h_bpm: f64,
    /// Carrier frequency, Hz.
    #[arg(long, default_value_t = 100.0)]
    f_hz: f64,
    /// Seconds.
    #[arg(long, default_value_t = 3.0)]
    duration: f64,
    /// WAV path, or `-` for raw 16-bit PCM on stdout.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    synth: SynthArgs,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long, default_value = DEFAULT_RELAY)]
    bind: String,
    #[arg(long, default_value_t = DEFAULT_QUEUE_CAPACITY)]
    queue_capacity: usize,
    /// Samples plus profiles per player per second; 0 disables the limit.
    #[arg(long, default_value_t = DEFAULT_RATE_LIMIT)]
    rate_limit: u32,
}

/// How a player's own biosignals are produced.
#[derive(Args, Debug, Clone)]
struct ScenarioArgs {
    /// `rest`, `stress`, `rest-to-stress`, or a scenario JSON file.
    #[arg(long, default_value = "rest-to-stress")]
    scenario: String,
    /// Scenario length in seconds for the built-in scenarios.
    #[arg(long, default_value_t = 180.0)]
    duration: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Wall-clock acceleration; 1 is real time.
    #[arg(long, default_value_t = 1.0)]
    time_scale: f64,
}

#[derive(Args, Debug)]
struct ConnectArgs {
    #[arg(long, env = "HEARTLINK_RELAY", default_value = DEFAULT_RELAY)]
    relay: String,
    #[arg(long)]
    session: String,
    #[arg(long)]
    player: PlayerId,
    /// This player's calibration profile (TOML); defaults when omitted.
    #[arg(long)]
    profile: Option<PathBuf>,
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Partner audio as WAV, or `-` for raw PCM on stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Partner level frames as CSV.
    #[arg(long)]
    frames: Option<PathBuf>,
    /// Session report JSON; stdout when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Seconds to wait for a partner before publishing anyway.
    #[arg(long, default_value_t = 30.0)]
    partner_wait: f64,
    /// Seconds to keep receiving after publishing ends.
    #[arg(long, default_value_t = 5.0)]
    linger: f64,
    #[arg(long, default_value_t = 1.0)]
    ping_interval: f64,
    #[command(flatten)]
    synth: SynthArgs,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, default_value = "sim")]
    session: String,
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Scenario override for player A.
    #[arg(long)]
    scenario_a: Option<String>,
    /// Scenario override for player B.
    #[arg(long)]
    scenario_b: Option<String>,
    /// Calibration profile (TOML) for both players.
    #[arg(long)]
    profile: Option<PathBuf>,
    #[arg(long)]
    profile_a: Option<PathBuf>,
    #[arg(long)]
    profile_b: Option<PathBuf>,
    /// Directory for each player's WAV and frame CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.25)]
    ping_interval: f64,
    #[command(flatten)]
    synth: SynthArgs,
}

#[derive(Args, Debug)]
struct OfflineArgs {
    /// Partner trace CSV.
    #[arg(long)]
    trace: PathBuf,
    /// Partner calibration profile (TOML); defaults when omitted.
    #[arg(long)]
    profile: Option<PathBuf>,
    /// WAV path, or `-` for raw PCM on stdout.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    frames: Option<PathBuf>,
    #[command(flatten)]
    synth: SynthArgs,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    #[arg(long)]
    rest: PathBuf,
    #[arg(long)]
    stress: PathBuf,
    /// Profile TOML; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn is_stdout(path: &Path) -> bool {
    path.as_os_str() == "-"
}

fn audio_sink(path: Option<&Path>, sample_rate: u32) -> Result<Box<dyn PcmSink>> {
    Ok(match path {
        None => Box::new(NullSink),
        Some(p) if is_stdout(p) => Box::new(RawPcmWriter::new(BufWriter::new(io::stdout()))),
        Some(p) => {
            Box::new(WavWriter::create(p, sample_rate).with_context(|| format!("cannot create {}", p.display()))?)
        }
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
    ))
}

fn load_profile(path: Option<&Path>) -> Result<CalibrationProfile> {
    match path {
        None => Ok(CalibrationProfile::default()),
        Some(p) => CalibrationProfile::load(p).with_context(|| format!("profile {}", p.display())),
    }
}

fn scenario(name: &str, duration_s: f64, profile: &CalibrationProfile) -> Result<ScenarioSpec> {
    if !duration_s.is_finite() || duration_s <= 0.0 {
        bail!("duration must be > 0 seconds");
    }
    let ms = (duration_s * 1000.0).round() as u64;
    let spec = match name {
        "rest" => ScenarioSpec::constant(profile.hr_rest, profile.eda_rest, ms),
        "stress" => ScenarioSpec::constant(profile.hr_stress, profile.eda_stress, ms),
        "rest-to-stress" => ScenarioSpec::rest_to_stress(profile, ms),
        path => {
            let text = std::fs::read_to_string(path).with_context(|| format!("cannot read scenario {path}"))?;
            ScenarioSpec::from_json(&text).with_context(|| format!("scenario {path}"))?
        }
    };
    spec.validate()?;
    Ok(spec)
}

fn seconds(s: f64, what: &str) -> Result<Duration> {
    Duration::try_from_secs_f64(s).with_context(|| format!("{what} must be a non-negative number of seconds"))
}

fn cmd_render(args: RenderArgs) -> Result<()> {
    let settings = args.synth.settings();
    let params = match args.preset {
        Some(p) => p.params(&settings.base),
        None => settings.base.with_rate(args.h_bpm, args.f_hz),
    };
    let buf = render(&params, args.duration, settings.sample_rate)?;
    let mut sink = audio_sink(Some(&args.out), settings.sample_rate)?;
    sink.write_samples(&buf.samples)?;
    sink.finish()?;
    Ok(())
}

fn cmd_presets() -> Result<()> {
    let base = HeartbeatParams::default();
    let mut out = io::stdout().lock();
    writeln!(out, "preset,arousal_level,valence_level,h_bpm,f_hz")?;
    for preset in Preset::ALL {
        let l = preset.levels();
        let p = preset.params(&base);
        writeln!(
            out,
            "{preset},{},{},{},{}",
            l.arousal_level, l.valence_level, p.h_bpm, p.f_hz
        )?;
    }
    Ok(())
}

async fn cmd_serve(args: ServeArgs) -> Result<()> {
    if args.queue_capacity == 0 {
        bail!("queue capacity must be > 0");
    }
    let config = RelayConfig {
        queue_capacity: args.queue_capacity,
        rate_limit_per_s: (args.rate_limit > 0).then_some(args.rate_limit),
    };
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    serve(args.bind.as_str(), config, shutdown)
        .await
        .with_context(|| format!("relay on {}", args.bind))
}

fn write_json(path: Option<&Path>, value: &serde_json::Value, stdout_busy: bool) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => std::fs::write(p, text + "\n").with_context(|| format!("cannot write {}", p.display()))?,
        None if stdout_busy => eprintln!("{text}"),
        None => println!("{text}"),
    }
    Ok(())
}

async fn cmd_connect(args: ConnectArgs) -> Result<()> {
    let profile = load_profile(args.profile.as_deref())?;
    let spec = scenario(&args.scenario.scenario, args.scenario.duration, &profile)?;
    let mut config = SessionConfig::new(args.relay.clone(), args.session, args.player, spec);
    config.seed = args.scenario.seed;
    config.profile = profile;
    config.synth = args.synth.settings();
    config.time_scale = args.scenario.time_scale;
    config.partner_wait = seconds(args.partner_wait, "partner wait")?;
    config.linger = seconds(args.linger, "linger")?;
    config.ping_interval = seconds(args.ping_interval, "ping interval")?;
    if config.ping_interval.is_zero() {
        bail!("ping interval must be > 0");
    }
    let outputs = SessionOutputs {
        audio: audio_sink(args.out.as_deref(), config.synth.sample_rate)?,
        frames: match &args.frames {
            Some(p) => Some(Box::new(create(p)?)),
            None => None,
        },
    };
    let outcome = run_session(config, outputs)
        .await
        .with_context(|| format!("session via {}", args.relay))?;
    let stdout_busy = args.out.as_deref().is_some_and(is_stdout);
    write_json(
        args.report.as_deref(),
        &serde_json::to_value(&outcome.report)?,
        stdout_busy,
    )
}

async fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let shared = load_profile(args.profile.as_deref())?;
    let profile_a = match &args.profile_a {
        Some(p) => load_profile(Some(p))?,
        None => shared,
    };
    let profile_b = match &args.profile_b {
        Some(p) => load_profile(Some(p))?,
        None => shared,
    };
    let s = &args.scenario;
    let spec_a = scenario(
        args.scenario_a.as_deref().unwrap_or(&s.scenario),
        s.duration,
        &profile_a,
    )?;
    let spec_b = scenario(
        args.scenario_b.as_deref().unwrap_or(&s.scenario),
        s.duration,
        &profile_b,
    )?;
    let mut config = SimulationConfig::new(spec_a, spec_b);
    config.session_id = args.session;
    config.profile_a = profile_a;
    config.profile_b = profile_b;
    config.seed = s.seed;
    config.synth = args.synth.settings();
    config.time_scale = s.time_scale;
    config.ping_interval = seconds(args.ping_interval, "ping interval")?;
    if config.ping_interval.is_zero() {
        bail!("ping interval must be > 0");
    }
    let outputs = |player: &str| -> Result<SessionOutputs> {
        let Some(dir) = &args.out else {
            return Ok(SessionOutputs::discard());
        };
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        Ok(SessionOutputs {
            audio: audio_sink(
                Some(&dir.join(format!("player_{player}.wav"))),
                config.synth.sample_rate,
            )?,
            frames: Some(Box::new(create(&dir.join(format!("frames_{player}.csv")))?)),
        })
    };
    let (out_a, out_b) = (outputs("a")?, outputs("b")?);
    let sim = simulate(config, out_a, out_b).await?;
    let reports = serde_json::json!({ "a": sim.a.report, "b": sim.b.report });
    write_json(None, &reports, false)
}

fn cmd_offline(args: OfflineArgs) -> Result<()> {
    let trace = load_trace(&args.trace).with_context(|| format!("trace {}", args.trace.display()))?;
    let profile = load_profile(args.profile.as_deref())?;
    let settings = args.synth.settings();
    let audio = audio_sink(Some(&args.out), settings.sample_rate)?;
    let frames = match &args.frames {
        Some(p) => Some(create(p)?),
        None => None,
    };
    offline_to_sinks(&trace, &profile, &settings, audio, frames)?;
    Ok(())
}

fn cmd_calibrate(args: CalibrateArgs) -> Result<()> {
    let rest = load_trace(&args.rest).with_context(|| format!("rest trace {}", args.rest.display()))?;
    let stress = load_trace(&args.stress).with_context(|| format!("stress trace {}", args.stress.display()))?;
    let profile = calibrate(&rest, &stress)?;
    match &args.out {
        Some(p) => profile
            .save(p)
            .with_context(|| format!("cannot write {}", p.display()))?,
        None => print!("{}", profile.to_toml()),
    }
    Ok(())
}

fn init_logging(filter: Option<&str>) {
    use tracing_subscriber::EnvFilter;
    let filter = match filter {
        Some(f) => EnvFilter::new(f),
        None => EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")),
    };
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(io::stderr)
        .init();
}

fn run(cli: Cli) -> Result<()> {
    let runtime = || {
        tokio::runtime::Builder::new_multi_thread()
            .enable_all()
            .build()
            .context("cannot start async runtime")
    };
    match cli.command {
        Command::Render(args) => cmd_render(args),
        Command::Presets => cmd_presets(),
        Command::Serve(args) => runtime()?.block_on(cmd_serve(args)),
        Command::Connect(args) => runtime()?.block_on(cmd_connect(args)),
        Command::Simulate(args) => runtime()?.block_on(cmd_simulate(args)),
        Command::Offline(args) => cmd_offline(args),
        Command::Calibrate(args) => cmd_calibrate(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.log.as_deref());
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = io::stdout().flush();
            eprintln!("heartlink: {:#}", e);
            ExitCode::FAILURE
        }
    }
}
