use std::path::PathBuf;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use saratoga::netsim::SimLinkConfig;
use saratoga::rate::PacerConfig;
use saratoga::session::SessionConfig;
use saratoga::wire::WireConfig;

pub const DEFAULT_PORT: u16 = 7542;

#[derive(Debug, Parser)]
#[command(
    name = "saratoga",
    version,
    about = "Reliable bulk transfer over UDP with SNACK repair"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Wait for one inbound transfer (or fetch one with --from) and write it out.
    Recv(RecvArgs),
    /// Push a file or stream to a receiver, or serve one get request.
    Send(SendArgs),
    /// Simulated line-rate transfer against a TCP reference flow.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    File,
    Stream,
}

/// Protocol tunables shared by `send` and `recv`.
#[derive(Debug, Args)]
pub struct SessionOpts {
    /// line, fixed:<bits/s> or tfrc[:<max bits/s>]
    #[arg(long, env = "SARATOGA_PACER", default_value = "line")]
    pub pacer: PacerConfig,

    /// Maximum Data payload per datagram, bytes.
    #[arg(long, env = "SARATOGA_PAYLOAD", default_value_t = 1452,
          value_parser = clap::value_parser!(u64).range(1..=65_000))]
    pub payload: u64,

    #[arg(long, env = "SARATOGA_STATUS_INTERVAL_MS", default_value_t = 200,
          value_parser = clap::value_parser!(u64).range(1..))]
    pub status_interval_ms: u64,

    /// Give up after this long without hearing from the peer.
    #[arg(long, env = "SARATOGA_MAX_IDLE_MS", default_value_t = 5000,
          value_parser = clap::value_parser!(u64).range(1..))]
    pub max_idle_ms: u64,

    /// How long a finished receiver keeps answering the sender.
    #[arg(long, env = "SARATOGA_LINGER_MS", default_value_t = 1000,
          value_parser = clap::value_parser!(u64).range(1..))]
    pub linger_ms: u64,

    /// Stream repair window, bytes.
    #[arg(long, env = "SARATOGA_STREAM_WINDOW", default_value_t = 1 << 20,
          value_parser = clap::value_parser!(u64).range(1..))]
    pub stream_window: u64,
}

impl SessionOpts {
    pub fn session_config(&self) -> SessionConfig {
        SessionConfig {
            wire: WireConfig {
                max_payload: self.payload as usize,
                ..WireConfig::default()
            },
            pacer: self.pacer,
            status_interval: Duration::from_millis(self.status_interval_ms),
            max_idle: Duration::from_millis(self.max_idle_ms),
            linger: Duration::from_millis(self.linger_ms),
            stream_window: self.stream_window,
        }
    }
}

#[derive(Debug, Args)]
pub struct RecvArgs {
    #[arg(long, env = "SARATOGA_PORT", default_value_t = DEFAULT_PORT)]
    pub port: u16,

    /// Local address to listen on.
    #[arg(long, env = "SARATOGA_BIND", default_value = "0.0.0.0")]
    pub bind: String,

    /// Output file; `-` writes a stream to stdout. Defaults to the sender's
    /// file name inside --dir.
    #[arg(long, short, env = "SARATOGA_OUT")]
    pub out: Option<PathBuf>,

    #[arg(long, env = "SARATOGA_DIR", default_value = ".")]
    pub dir: PathBuf,

    /// Fetch PATH from a serving sender at this address instead of waiting.
    #[arg(long, env = "SARATOGA_FROM", requires = "path")]
    pub from: Option<String>,

    /// Remote path to request with --from.
    #[arg(long, env = "SARATOGA_PATH")]
    pub path: Option<String>,

    /// Give up if nothing arrives within this many milliseconds.
    #[arg(long, env = "SARATOGA_WAIT_MS", value_parser = clap::value_parser!(u64).range(1..))]
    pub wait_ms: Option<u64>,

    #[command(flatten)]
    pub session: SessionOpts,
}

#[derive(Debug, Args)]
pub struct SendArgs {
    /// File to send; `-` reads a stream from stdin.
    pub file: PathBuf,

    /// Receiver address, `host` or `host:port`. Omit with --serve.
    #[arg(required_unless_present = "serve", conflicts_with = "serve")]
    pub dest: Option<String>,

    #[arg(long, env = "SARATOGA_MODE", value_enum, default_value_t = Mode::File)]
    pub mode: Mode,

    /// Wait on --port for one get request instead of pushing.
    #[arg(long, env = "SARATOGA_SERVE")]
    pub serve: bool,

    #[arg(long, env = "SARATOGA_PORT", default_value_t = DEFAULT_PORT)]
    pub port: u16,

    #[arg(long, env = "SARATOGA_BIND", default_value = "0.0.0.0")]
    pub bind: String,

    /// Write `t_ns,bytes` for every datagram sent.
    #[arg(long, env = "SARATOGA_PACKET_LOG")]
    pub packet_log: Option<PathBuf>,

    /// Announce a wrong digest so the receiver rejects the transfer.
    #[arg(long, env = "SARATOGA_CORRUPT_DIGEST", hide = true)]
    pub corrupt_digest: bool,

    #[command(flatten)]
    pub session: SessionOpts,
}

/// Simulated link parameters.
#[derive(Debug, Args)]
pub struct SimOpts {
    /// Link rate, bits/s.
    #[arg(long, env = "SARATOGA_RATE", default_value_t = 128_000,
          value_parser = clap::value_parser!(u64).range(1..))]
    pub rate: u64,

    /// One-way propagation delay, seconds.
    #[arg(long, env = "SARATOGA_DELAY", default_value_t = 0.25)]
    pub delay: f64,

    /// Independent per-packet loss probability.
    #[arg(long, env = "SARATOGA_LOSS", default_value_t = 0.01)]
    pub loss: f64,

    /// Drop-tail queue length, packets.
    #[arg(long, env = "SARATOGA_QUEUE", default_value_t = 20,
          value_parser = clap::value_parser!(u64).range(1..))]
    pub queue: u64,

    #[arg(long, env = "SARATOGA_SEED", default_value_t = 1)]
    pub seed: u64,
}

impl SimOpts {
    pub fn link(&self) -> SimLinkConfig {
        SimLinkConfig {
            rate_bps: self.rate,
            one_way_delay_s: self.delay,
            loss_prob: self.loss,
            queue_len: self.queue as usize,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub sim: SimOpts,

    /// Size of the simulated file, bytes.
    #[arg(long, env = "SARATOGA_FILE_SIZE", default_value_t = 1 << 20,
          value_parser = clap::value_parser!(u64).range(1..))]
    pub file_size: u64,

    /// Simulated seconds for the TCP reference flow.
    #[arg(long, env = "SARATOGA_DURATION", default_value_t = 120.0)]
    pub duration: f64,

    /// Trace bin width, seconds.
    #[arg(long, env = "SARATOGA_BIN", default_value_t = 0.1)]
    pub bin: f64,

    /// Write the JSON report here instead of stdout.
    #[arg(long, env = "SARATOGA_OUTPUT")]
    pub output: Option<PathBuf>,

    /// Write the `time_s,flow,rate_bps,queue_pkts` trace here.
    #[arg(long, env = "SARATOGA_CSV")]
    pub csv: Option<PathBuf>,

    #[command(flatten)]
    pub session: SessionOpts,
}
