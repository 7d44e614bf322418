mod args;
mod net;
mod report;
mod sink;

use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use clap::Parser;
use saratoga::netsim::{run_comparison, ComparisonConfig, TcpRefConfig};
use saratoga::session::sim::TransferFailed;
use saratoga::session::{
    sha256_source, ByteSource, FileSource, MemSource, ReceiverSession, SenderSession,
    SessionConfig, TransferMode,
};
use saratoga::wire::{Body, Direction};
use socket2::{Domain, Protocol, Socket, Type};
use thiserror::Error;

use args::{BenchArgs, Cli, Command, Mode, RecvArgs, SendArgs, DEFAULT_PORT};
use net::{Driver, Endpoint, Outcome};
use report::{Role, RunReport};
use sink::Sink;

const EXIT_USAGE: u8 = 1;
const EXIT_TRANSFER: u8 = 2;

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{what}: {source}")]
    Io {
        what: String,
        #[source]
        source: io::Error,
    },
}

fn io_err(what: impl Into<String>) -> impl FnOnce(io::Error) -> CliError {
    let what = what.into();
    move |source| CliError::Io { what, source }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let run = match cli.command {
        Command::Recv(a) => recv(a),
        Command::Send(a) => send(a),
        Command::Bench(a) => bench(a),
    };
    match run {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_TRANSFER),
        Err(e) => {
            eprintln!("saratoga: {e}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

fn session_config(opts: &args::SessionOpts) -> Result<SessionConfig, CliError> {
    let cfg = opts.session_config();
    cfg.validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}

fn new_session_id() -> u32 {
    let t = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .unwrap_or_default();
    let id = (t.as_nanos() as u32) ^ std::process::id().rotate_left(16);
    id.max(1)
}

// Line-rate bursts overrun the default receive buffer long before the
// receiver falls behind on average.
const SOCKET_BUFFER: usize = 4 << 20;

fn bind(addr: &str, port: u16) -> Result<UdpSocket, CliError> {
    let what = || format!("cannot bind {addr}:{port}");
    let local = (addr, port)
        .to_socket_addrs()
        .map_err(io_err(what()))?
        .next()
        .ok_or_else(|| CliError::Config(what()))?;
    let socket = Socket::new(Domain::for_address(local), Type::DGRAM, Some(Protocol::UDP))
        .map_err(io_err(what()))?;
    // best effort: the kernel clamps to its own maximum
    let _ = socket.set_recv_buffer_size(SOCKET_BUFFER);
    let _ = socket.set_send_buffer_size(SOCKET_BUFFER);
    socket.bind(&local.into()).map_err(io_err(what()))?;
    Ok(socket.into())
}

/// Resolves `host` or `host:port`, preferring the socket's address family.
fn resolve(dest: &str, socket: &UdpSocket) -> Result<SocketAddr, CliError> {
    let addrs: Vec<SocketAddr> = match dest.to_socket_addrs() {
        Ok(a) => a.collect(),
        Err(_) => (dest, DEFAULT_PORT)
            .to_socket_addrs()
            .map_err(io_err(format!("cannot resolve {dest}")))?
            .collect(),
    };
    let v4 = socket.local_addr().map(|a| a.is_ipv4()).unwrap_or(true);
    addrs
        .iter()
        .find(|a| a.is_ipv4() == v4)
        .or(addrs.first())
        .copied()
        .ok_or_else(|| CliError::Config(format!("{dest} resolved to no addresses")))
}

fn finish(mut report: RunReport, to_stderr: bool) -> Result<bool, CliError> {
    let ok = report.ok;
    if report.transfer.as_ref().is_some_and(|t| !t.digest_ok) && report.mode == TransferMode::File {
        report.ok = false;
    }
    let res = if to_stderr {
        report.print(io::stderr().lock())
    } else {
        report.print(io::stdout().lock())
    };
    res.map_err(io_err("writing report"))?;
    Ok(ok && report.ok)
}

fn recv(a: RecvArgs) -> Result<bool, CliError> {
    let cfg = session_config(&a.session)?;
    let socket = bind(&a.bind, a.port)?;
    let to_stdout = a.out.as_deref() == Some(Path::new("-"));
    if !to_stdout {
        let dir = match &a.out {
            Some(p) => p
                .parent()
                .filter(|d| !d.as_os_str().is_empty())
                .unwrap_or(Path::new(".")),
            None => a.dir.as_path(),
        };
        if !dir.is_dir() {
            return Err(CliError::Config(format!(
                "output directory {} does not exist",
                dir.display()
            )));
        }
    }
    let mut sink = Some(if to_stdout {
        Sink::ordered(Box::new(BufWriter::new(io::stdout())))
    } else {
        Sink::file(a.dir.clone(), a.out.clone())
    });
    let wait = a.wait_ms.map(Duration::from_millis);
    let pacer = cfg.pacer.to_string();

    let writer = |ep: &Endpoint, offset: u128, bytes: &[u8]| {
        let r = ep.receiver().expect("receiver endpoint");
        sink.as_mut()
            .unwrap()
            .write(r.mode(), r.path(), offset, bytes)
    };
    let driver = match &a.from {
        Some(from) => {
            let peer = resolve(from, &socket)?;
            let path = a.path.clone().unwrap_or_default();
            let ep = Endpoint::Receiver(ReceiverSession::get(new_session_id(), path, cfg));
            Driver::connected(socket, cfg.wire, peer, ep)
        }
        None => Driver::listening(socket, cfg.wire, move |p| match &p.body {
            Body::Request(r) if r.direction == Direction::Get => None,
            Body::Status(_) => None,
            _ => Some(Endpoint::Receiver(ReceiverSession::put(
                p.header.session_id,
                cfg,
            ))),
        }),
    };
    let outcome = driver
        .on_write(writer)
        .first_packet_wait(wait)
        .run()
        .map_err(io_err("starting network threads"))?;

    let rs = outcome.endpoint.as_ref().and_then(Endpoint::receiver);
    let mode = rs.map(|r| r.mode()).unwrap_or(TransferMode::File);
    let remote = rs.and_then(|r| r.path()).map(str::to_string);
    let mut report = RunReport::from_outcome(Role::Receiver, mode, pacer, &outcome);
    report.path = remote.clone();

    let sink = sink.take().unwrap();
    if outcome.result.is_ok() {
        match sink.commit(remote.as_deref()) {
            Ok(Some(target)) => {
                report.digest = file_digest(&target);
                report.output = Some(target.display().to_string());
            }
            Ok(None) => report.output = Some("-".into()),
            Err(e) => {
                report.ok = false;
                report.error = Some(format!("publishing output failed: {e}"));
                report.error_kind = Some("output_error".into());
            }
        }
    } else {
        sink.discard();
    }
    finish(report, to_stdout)
}

fn file_digest(path: &Path) -> Option<String> {
    let mut src = FileSource::open(path).ok()?;
    sha256_source(&mut src).ok().map(hex::encode)
}

enum Input {
    File(Box<dyn ByteSource>),
    Stream(Box<dyn Read + Send>),
}

fn open_input(a: &SendArgs) -> Result<Input, CliError> {
    let stdin = a.file == Path::new("-");
    Ok(match (a.mode, stdin) {
        (Mode::Stream, true) => Input::Stream(Box::new(io::stdin())),
        (Mode::Stream, false) => {
            let f =
                File::open(&a.file).map_err(io_err(format!("cannot open {}", a.file.display())))?;
            Input::Stream(Box::new(f))
        }
        (Mode::File, true) => {
            let mut buf = Vec::new();
            io::stdin()
                .read_to_end(&mut buf)
                .map_err(io_err("reading stdin"))?;
            Input::File(Box::new(MemSource(buf)))
        }
        (Mode::File, false) => {
            let meta = std::fs::metadata(&a.file)
                .map_err(io_err(format!("cannot open {}", a.file.display())))?;
            if !meta.is_file() {
                return Err(CliError::Config(format!(
                    "{} is not a regular file",
                    a.file.display()
                )));
            }
            let src = FileSource::open(&a.file)
                .map_err(io_err(format!("cannot open {}", a.file.display())))?;
            Input::File(Box::new(src))
        }
    })
}

fn remote_name(file: &Path) -> String {
    file.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "stdin".into())
}

fn send(a: SendArgs) -> Result<bool, CliError> {
    let cfg = session_config(&a.session)?;
    if a.serve && a.mode == Mode::Stream {
        return Err(CliError::Config("--serve only works with file mode".into()));
    }
    let input = open_input(&a)?;
    let name = remote_name(&a.file);
    let pacer = cfg.pacer.to_string();

    let (digest, driver) = match input {
        Input::File(mut src) => {
            let mut digest = sha256_source(src.as_mut())
                .map_err(io_err(format!("reading {}", a.file.display())))?;
            let shown = hex::encode(digest);
            if a.corrupt_digest {
                digest[0] ^= 1;
            }
            let driver = if a.serve {
                let socket = bind(&a.bind, a.port)?;
                let mut src = Some(src);
                let name = name.clone();
                Driver::listening(socket, cfg.wire, move |p| match &p.body {
                    Body::Request(r) if r.direction == Direction::Get => src.take().map(|s| {
                        Endpoint::Sender(SenderSession::file(
                            p.header.session_id,
                            s,
                            digest,
                            name.clone(),
                            false,
                            cfg,
                        ))
                    }),
                    _ => None,
                })
            } else {
                let socket = bind(&a.bind, 0)?;
                let peer = resolve(a.dest.as_deref().unwrap_or_default(), &socket)?;
                let ep = Endpoint::Sender(SenderSession::file(
                    new_session_id(),
                    src,
                    digest,
                    name.clone(),
                    true,
                    cfg,
                ));
                Driver::connected(socket, cfg.wire, peer, ep)
            };
            (Some(shown), driver)
        }
        Input::Stream(r) => {
            let socket = bind(&a.bind, 0)?;
            let peer = resolve(a.dest.as_deref().unwrap_or_default(), &socket)?;
            let ep = Endpoint::Sender(SenderSession::stream(new_session_id(), name.clone(), cfg));
            let d =
                Driver::connected(socket, cfg.wire, peer, ep).stream_input(r, cfg.stream_window);
            (None, d)
        }
    };
    let mode = match a.mode {
        Mode::File => TransferMode::File,
        Mode::Stream => TransferMode::Stream,
    };

    let outcome = driver
        .log_packets(a.packet_log.is_some())
        .run()
        .map_err(io_err("starting network threads"))?;
    if let Some(path) = &a.packet_log {
        write_packet_log(path, &outcome).map_err(io_err(format!("writing {}", path.display())))?;
    }
    let mut report = RunReport::from_outcome(Role::Sender, mode, pacer, &outcome);
    report.path = Some(name);
    report.digest = digest;
    finish(report, false)
}

fn write_packet_log(path: &PathBuf, o: &Outcome) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "t_ns,bytes")?;
    for (t, n) in &o.packet_log {
        writeln!(w, "{t},{n}")?;
    }
    w.flush()
}

fn bench(a: BenchArgs) -> Result<bool, CliError> {
    let session = session_config(&a.session)?;
    if !(a.sim.delay.is_finite() && a.duration.is_finite() && a.duration > 0.0) {
        return Err(CliError::Config(
            "--duration must be positive and --delay finite".into(),
        ));
    }
    let cfg = ComparisonConfig {
        link: a.sim.link(),
        file_size: a.file_size,
        duration_s: a.duration,
        tcp: TcpRefConfig::default(),
        session,
        bin_s: a.bin,
    };
    let report = match run_comparison(&cfg) {
        Ok(r) => r,
        Err(TransferFailed::InvalidConfig(msg)) => return Err(CliError::Config(msg)),
        Err(e) => {
            eprintln!("saratoga: simulated transfer failed: {e}");
            return Ok(false);
        }
    };
    let json = serde_json::to_string_pretty(&report).expect("report serialises");
    match &a.output {
        Some(p) => {
            std::fs::write(p, json + "\n").map_err(io_err(format!("writing {}", p.display())))?
        }
        None => println!("{json}"),
    }
    if let Some(p) = &a.csv {
        let f = File::create(p).map_err(io_err(format!("writing {}", p.display())))?;
        let mut w = BufWriter::new(f);
        report
            .write_csv(&mut w)
            .and_then(|_| w.flush())
            .map_err(io_err(format!("writing {}", p.display())))?;
    }
    Ok(true)
}
