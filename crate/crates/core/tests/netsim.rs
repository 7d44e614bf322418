use saratoga::netsim::*;
use saratoga::time::Timestamp;

#[test]
fn delivered_fraction_matches_loss_probability() {
    let mut link = SimLink::new(SimLinkConfig {
        rate_bps: 1_000_000_000,
        one_way_delay_s: 0.0,
        loss_prob: 0.05,
        queue_len: 1,
        seed: 2024,
    })
    .unwrap();
    let n = 100_000u64;
    let mut now = Timestamp::ZERO;
    for _ in 0..n {
        // one packet at a time so nothing is tail-dropped
        now = link.ready_at(now);
        link.link_send(100, now);
    }
    let s = link.stats();
    assert_eq!(s.dropped, 0);
    let frac = s.delivered as f64 / n as f64;
    assert!((frac - 0.95).abs() <= 0.005, "{frac}");
}

#[test]
fn arrivals_respect_serialisation_and_delay() {
    let cfg = SimLinkConfig {
        rate_bps: 256_000,
        one_way_delay_s: 0.1,
        loss_prob: 0.0,
        queue_len: 5,
        seed: 1,
    };
    let mut link = SimLink::new(cfg).unwrap();
    let mut now = Timestamp::ZERO;
    let mut last_arrival = Timestamp::ZERO;
    for i in 0..200u64 {
        now = Timestamp(now.0 + (i % 7) * 3_000_000);
        let bytes = 100 + (i as usize * 37) % 1400;
        let floor = now.0 + link.serialization_ns(bytes) + 100_000_000;
        match link.link_send(bytes, now) {
            LinkOutcome::Delivered { arrival, .. } => {
                assert!(arrival.0 >= floor);
                assert!(arrival >= last_arrival);
                last_arrival = arrival;
            }
            LinkOutcome::Dropped => {}
            LinkOutcome::Lost { .. } => unreachable!(),
        }
        assert!(link.occupancy(now) <= cfg.queue_len);
    }
    assert!(link.stats().dropped > 0);
    assert!(link.stats().max_occupancy <= cfg.queue_len);
}

#[test]
fn events_pop_in_time_then_insertion_order() {
    let mut q = EventQueue::new();
    q.push(Timestamp(5), "b");
    q.push(Timestamp(1), "a");
    q.push(Timestamp(5), "c");
    let order: Vec<_> = std::iter::from_fn(|| q.pop().map(|(_, x)| x)).collect();
    assert_eq!(order, vec!["a", "b", "c"]);
}

fn quick(loss: f64) -> ComparisonConfig {
    ComparisonConfig {
        link: SimLinkConfig {
            loss_prob: loss,
            seed: 1,
            ..SimLinkConfig::default()
        },
        file_size: 256 * 1024,
        duration_s: 60.0,
        ..ComparisonConfig::default()
    }
}

#[test]
fn lossless_line_rate_fills_the_link() {
    let r = run_comparison(&quick(0.0)).unwrap();
    assert!(r.saratoga_utilization >= 0.95, "{}", r.saratoga_utilization);
    assert!((0.0..=1.0).contains(&r.tcp_utilization));
    assert_eq!(r.schema_version, REPORT_SCHEMA_VERSION);
}

#[test]
fn comparison_is_deterministic_and_exports_csv() {
    let a = run_comparison(&quick(0.01)).unwrap();
    let b = run_comparison(&quick(0.01)).unwrap();
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
    let mut csv = Vec::new();
    a.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("time_s,flow,rate_bps,queue_pkts"));
    assert!(text.contains(",saratoga,") && text.contains(",tcp,"));
}

#[test]
fn tcp_queue_overflow_saws_below_full_utilisation() {
    let link = SimLinkConfig::default();
    let st = run_tcp_reference(&link, &TcpRefConfig::default(), 300.0).unwrap();
    assert_eq!(st.random_losses, 0);
    assert!(st.queue_drops > 0);
    assert!(st.utilization(&link) < 1.0);
    assert!(st.peaks_above(link.rate_bps as f64) >= 2);
}

#[test]
fn invalid_links_are_rejected() {
    for cfg in [
        SimLinkConfig {
            rate_bps: 0,
            ..SimLinkConfig::default()
        },
        SimLinkConfig {
            loss_prob: 1.5,
            ..SimLinkConfig::default()
        },
        SimLinkConfig {
            queue_len: 0,
            ..SimLinkConfig::default()
        },
        SimLinkConfig {
            one_way_delay_s: -1.0,
            ..SimLinkConfig::default()
        },
    ] {
        assert!(SimLink::new(cfg).is_err());
        assert!(run_comparison(&ComparisonConfig {
            link: cfg,
            ..ComparisonConfig::default()
        })
        .is_err());
    }
}
