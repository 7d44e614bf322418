use std::io::{self, Write};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::rate::PacerConfig;
use crate::session::sim::{run_transfer_detailed, TransferConfig, TransferFailed};
use crate::session::{SessionConfig, SyntheticSource, TransferReport};

use super::{run_tcp_reference, SimLinkConfig, TcpRefConfig, TcpRefState};

/// Version of the JSON report layout.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonConfig {
    pub link: SimLinkConfig,
    /// Bytes in the Saratoga file transfer.
    pub file_size: u64,
    /// Simulated seconds the TCP reference flow runs.
    pub duration_s: f64,
    pub tcp: TcpRefConfig,
    pub session: SessionConfig,
    /// Width of the bins used for the Saratoga rate trace.
    pub bin_s: f64,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self {
            link: SimLinkConfig::default(),
            file_size: 1 << 20,
            duration_s: 120.0,
            tcp: TcpRefConfig::default(),
            session: SessionConfig {
                pacer: PacerConfig::Line,
                ..SessionConfig::default()
            },
            bin_s: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flow {
    Saratoga,
    Tcp,
}

impl Flow {
    fn as_str(self) -> &'static str {
        match self {
            Flow::Saratoga => "saratoga",
            Flow::Tcp => "tcp",
        }
    }
}

/// One point of a rate trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub time_s: f64,
    pub flow: Flow,
    pub rate_bps: f64,
    pub queue_pkts: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub schema_version: u32,
    pub config: ComparisonConfig,
    pub saratoga_utilization: f64,
    pub tcp_utilization: f64,
    pub saratoga: TransferReport,
    pub tcp_duration_s: f64,
    pub tcp_goodput_bps: f64,
    pub tcp_queue_drops: u64,
    pub tcp_random_losses: u64,
    /// Times the TCP send rate climbed above the link rate.
    pub tcp_peaks_above_link: usize,
    pub traces: Vec<TraceRow>,
}

impl ComparisonReport {
    /// TCP peaks above link rate per simulated minute.
    pub fn tcp_peaks_per_minute(&self) -> f64 {
        if self.tcp_duration_s <= 0.0 {
            return 0.0;
        }
        self.tcp_peaks_above_link as f64 * 60.0 / self.tcp_duration_s
    }

    /// Writes the traces as CSV with header `time_s,flow,rate_bps,queue_pkts`.
    pub fn write_csv(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "time_s,flow,rate_bps,queue_pkts")?;
        for r in &self.traces {
            writeln!(
                w,
                "{:.3},{},{:.1},{:.2}",
                r.time_s,
                r.flow.as_str(),
                r.rate_bps,
                r.queue_pkts
            )?;
        }
        Ok(())
    }
}

/// Runs a line-rate Saratoga transfer and the TCP reference flow over two
/// independently seeded copies of the same link.
pub fn run_comparison(cfg: &ComparisonConfig) -> Result<ComparisonReport, TransferFailed> {
    cfg.link
        .validate()
        .map_err(|e| TransferFailed::InvalidConfig(e.to_string()))?;
    if cfg.bin_s.is_nan() || cfg.bin_s <= 0.0 {
        return Err(TransferFailed::InvalidConfig(
            "trace bin width must be positive".into(),
        ));
    }
    let rate = cfg.link.rate_bps as f64;

    let tcfg = TransferConfig {
        session: cfg.session,
        max_duration: Duration::from_secs_f64((cfg.duration_s * 100.0).max(3600.0)),
        ..TransferConfig::default()
    };
    let source = SyntheticSource::new(cfg.file_size as u128, cfg.link.seed);
    let run = run_transfer_detailed(&cfg.link, Box::new(source), &tcfg);
    let saratoga = run.result?;
    let saratoga_utilization = if saratoga.duration_s > 0.0 {
        (saratoga.goodput_bps / rate).clamp(0.0, 1.0)
    } else {
        0.0
    };

    let tcp_link = cfg.link.with_seed(cfg.link.seed.wrapping_add(1));
    let tcp: TcpRefState = run_tcp_reference(&tcp_link, &cfg.tcp, cfg.duration_s)
        .map_err(|e| TransferFailed::InvalidConfig(e.to_string()))?;

    let mut traces = saratoga_trace(
        &run.arrivals,
        &run.occupancy,
        cfg.bin_s,
        saratoga.duration_s,
    );
    traces.extend(tcp.trace.iter().map(|s| TraceRow {
        time_s: s.time_s,
        flow: Flow::Tcp,
        rate_bps: s.send_rate_bps,
        queue_pkts: s.queue_pkts,
    }));

    Ok(ComparisonReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config: cfg.clone(),
        saratoga_utilization,
        tcp_utilization: tcp.utilization(&tcp_link),
        saratoga,
        tcp_duration_s: tcp.duration_s,
        tcp_goodput_bps: tcp.goodput_bytes * 8.0 / tcp.duration_s,
        tcp_queue_drops: tcp.queue_drops,
        tcp_random_losses: tcp.random_losses,
        tcp_peaks_above_link: tcp.peaks_above(rate),
        traces,
    })
}

/// Bins link arrivals into a rate series and samples interface occupancy.
fn saratoga_trace(
    arrivals: &[(crate::time::Timestamp, usize)],
    occupancy: &[(crate::time::Timestamp, usize)],
    bin_s: f64,
    until_s: f64,
) -> Vec<TraceRow> {
    let bins = (until_s / bin_s).ceil().max(0.0) as usize;
    let mut bytes = vec![0usize; bins];
    for &(t, n) in arrivals {
        let b = (t.as_secs_f64() / bin_s) as usize;
        if b < bins {
            bytes[b] += n;
        }
    }
    let mut occ = occupancy.iter().peekable();
    let mut last = 0usize;
    (0..bins)
        .map(|i| {
            let end = (i + 1) as f64 * bin_s;
            while let Some(&&(t, q)) = occ.peek() {
                if t.as_secs_f64() >= end {
                    break;
                }
                last = q;
                occ.next();
            }
            TraceRow {
                time_s: i as f64 * bin_s,
                flow: Flow::Saratoga,
                rate_bps: bytes[i] as f64 * 8.0 / bin_s,
                queue_pkts: last as f64,
            }
        })
        .collect()
}
