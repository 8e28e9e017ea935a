use b92sim::analytics::{error_budget, qber, rate_report, window_stats, DEFAULT_THETA};
use b92sim::bitsource::{runs, slice_window};
use b92sim::config::{parse_config, spec_to_text};
use b92sim::experiment::{run_histogram, run_simulation};
use b92sim::optics::Origin;
use b92sim::protocol::{read_record, run_session, sift, write_record, RunOptions};

#[test]
fn record_export_reproduces_every_statistic() {
    let spec = parse_config(
        "clock = 1e9\ncollection_time = 0.003\nseed = 21\nattack.enabled = true\nchannel.fiber_length = 2\n",
    )
    .unwrap();
    let record = run_session(&spec.session).unwrap();
    let mut buf = Vec::new();
    write_record(&record, &mut buf).unwrap();
    let back = read_record(buf.as_slice()).unwrap();
    assert_eq!(back.events, record.events);
    assert_eq!(back.config, record.config);
    for w in [0.3, 0.5, 0.98] {
        assert_eq!(sift(&back, w).unwrap(), sift(&record, w).unwrap());
        assert_eq!(
            rate_report(&back, w, 2.0, DEFAULT_THETA).unwrap(),
            rate_report(&record, w, 2.0, DEFAULT_THETA).unwrap()
        );
    }
    assert!(record.events.iter().any(|e| e.origin == Origin::EveResend));
}

#[test]
fn config_text_round_trips_through_a_run() {
    let spec = parse_config("sequence = prbs15\nprbs_seed = 77\nclock = 5e8\ncollection_time = 0.002\ndistances = 1, 3\nwindows = 0.4, 0.8\nseed = 3").unwrap();
    let again = parse_config(&spec_to_text(&spec)).unwrap();
    assert_eq!(again, spec);
    let a = run_simulation(&spec, RunOptions { parallel: false });
    let b = run_simulation(&again, RunOptions { parallel: true });
    let (a, b) = (a.unwrap(), b.unwrap());
    assert_eq!(a.record.events, b.record.events);
    assert_eq!(a.reports, b.reports);
}

#[test]
fn error_budget_partitions_incorrect_counts() {
    let spec =
        parse_config("clock = 1e9\ncollection_time = 0.2\nseed = 5\nextra_attenuation = 10\ndark_rate = 5e4").unwrap();
    let record = run_session(&spec.session).unwrap();
    for w in [0.2, 0.5, 0.9] {
        let b = error_budget(&record.events, record.period_ps(), w, record.duration).unwrap();
        let s = window_stats(&record, w).unwrap();
        let incorrect = s.c_incorrect as f64 / record.duration;
        assert!((b.total_error_rate() - incorrect).abs() < 1e-6 * incorrect.max(1.0));
        assert!((b.qber().unwrap() - qber(&s).unwrap()).abs() < 1e-12);
        assert!(b.r_dark > 0.0 && b.r_leak > 0.0);
    }
}

#[test]
fn prbs_histogram_follows_the_pattern() {
    let spec = parse_config(
        "sequence = prbs15\nclock = 1e9\ncollection_time = 60\nseed = 8\nexperiment.bin_width = 1e-9\nexperiment.analysis_start = 300\nexperiment.analysis_window = 64",
    )
    .unwrap();
    let h = run_histogram(&spec, RunOptions::default()).unwrap();
    assert_eq!(h.n_bins(), 64);
    let window = slice_window(&spec.session.sequence, 300, 64);
    for (start, len, bit) in runs(&window) {
        for i in start..start + len {
            let (on, off) = (h.counts[bit as usize][i], h.counts[1 - bit as usize][i]);
            assert!(on >= 20 && on > 5 * off, "bit {i}: {on} vs {off}");
        }
    }
}
