//! Figures of merit: timing histograms, raw/sifted/net rates, QBER, the
//! origin-resolved error budget and time-window optimization.

use std::io::Write;

use serde::Serialize;

use crate::optics::{db_to_transmittance, DetectionEvent, Origin, PhotonStatistics, PS_PER_S};
use crate::protocol::{check_window, gated, SessionConfig, SessionRecord};
use crate::{Error, Result};

/// Worst-case state separation assumed for privacy amplification, degrees.
pub const DEFAULT_THETA: f64 = 45.0;

/// Per-channel counts binned over one sync period (or a sub-range of it).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Histogram {
    /// Seconds.
    pub bin_width: f64,
    /// Sync period the timestamps were folded over, seconds.
    pub period: f64,
    /// Start of the first bin within the period, seconds.
    pub start: f64,
    pub counts: [Vec<u64>; 2],
    /// Seconds of data accumulated.
    pub collection_time: f64,
}

impl Histogram {
    pub fn n_bins(&self) -> usize {
        self.counts[0].len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Start of bin `i` within the period, seconds.
    pub fn bin_start(&self, i: usize) -> f64 {
        self.start + i as f64 * self.bin_width
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "bin_start_ps,ch0,ch1")?;
        for i in 0..self.n_bins() {
            writeln!(
                out,
                "{},{},{}",
                (self.bin_start(i) * PS_PER_S).round() as i64,
                self.counts[0][i],
                self.counts[1][i]
            )?;
        }
        Ok(())
    }
}

fn divides(span: f64, bin_width: f64) -> Option<usize> {
    if !(bin_width > 0.0 && span > 0.0) {
        return None;
    }
    let n = span / bin_width;
    let rounded = n.round();
    ((n - rounded).abs() <= 1e-6 * rounded.max(1.0) && rounded >= 1.0).then_some(rounded as usize)
}

/// Folds every event modulo `sync_period` into bins of `bin_width` per channel.
pub fn accumulate_histogram(
    events: &[DetectionEvent],
    sync_period: f64,
    bin_width: f64,
    collection_time: f64,
) -> Result<Histogram> {
    accumulate_histogram_range(events, sync_period, 0.0, sync_period, bin_width, collection_time)
}

/// As [`accumulate_histogram`], keeping only folded times in
/// `[start, start + span)` of the period. Used to look at a short stretch of a
/// long pattern at fine resolution.
pub fn accumulate_histogram_range(
    events: &[DetectionEvent],
    sync_period: f64,
    start: f64,
    span: f64,
    bin_width: f64,
    collection_time: f64,
) -> Result<Histogram> {
    if !(sync_period > 0.0) {
        return Err(Error::invalid("sync period must be positive"));
    }
    if !(start >= 0.0 && start + span <= sync_period * (1.0 + 1e-12)) {
        return Err(Error::invalid("histogram range must lie within one sync period"));
    }
    let n_bins = divides(span, bin_width).ok_or_else(|| {
        Error::invalid(format!(
            "bin width {bin_width:e} s does not divide the range {span:e} s"
        ))
    })?;
    let period_ps = sync_period * PS_PER_S;
    let start_ps = start * PS_PER_S;
    let bin_ps = bin_width * PS_PER_S;
    let mut counts = [vec![0u64; n_bins], vec![0u64; n_bins]];
    for e in events {
        let phase = (e.timestamp_ps as f64).rem_euclid(period_ps) - start_ps;
        if phase < 0.0 {
            continue;
        }
        let bin = (phase / bin_ps).floor() as usize;
        if bin < n_bins {
            counts[e.channel as usize][bin] += 1;
        }
    }
    Ok(Histogram {
        bin_width,
        period: sync_period,
        start,
        counts,
        collection_time,
    })
}

/// Default histogram bin: 1/1024 of the sync period.
pub fn default_bin_width(sync_period: f64) -> f64 {
    sync_period / 1024.0
}

/// Gated correct and incorrect counts of a record for one window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WindowStats {
    pub window_fraction: f64,
    pub c_correct: u64,
    pub c_incorrect: u64,
    pub n_slots: u64,
    /// Seconds.
    pub collection_time: f64,
}

/// Counts every gated click on either channel: correct when the channel
/// equals Alice's bit of the slot it landed in.
pub fn window_stats(record: &SessionRecord, window_fraction: f64) -> Result<WindowStats> {
    check_window(window_fraction)?;
    let period_ps = record.period_ps();
    let (mut c_correct, mut c_incorrect) = (0, 0);
    for e in record.events.iter().filter(|e| gated(e, period_ps, window_fraction)) {
        if e.channel == e.truth_bit {
            c_correct += 1;
        } else {
            c_incorrect += 1;
        }
    }
    Ok(WindowStats {
        window_fraction,
        c_correct,
        c_incorrect,
        n_slots: record.n_simulated_slots,
        collection_time: record.duration,
    })
}

/// `n_s n_f mu nu` with both transmittances given as losses in dB.
pub fn raw_rate(system_loss_db: f64, fiber_loss_db: f64, mu: f64, clock: f64) -> Result<f64> {
    if !(mu > 0.0 && clock > 0.0) {
        return Err(Error::invalid("mean photon number and clock must be positive"));
    }
    Ok(db_to_transmittance(system_loss_db) * db_to_transmittance(fiber_loss_db) * mu * clock)
}

/// Detector clicks per second in a record, both channels, no gating.
pub fn measured_raw_rate(record: &SessionRecord) -> f64 {
    record.events.len() as f64 / record.duration
}

/// Gated counts per second.
pub fn sift_rate(stats: &WindowStats) -> Result<f64> {
    if !(stats.collection_time > 0.0) {
        return Err(Error::invalid("collection time must be positive"));
    }
    Ok((stats.c_correct + stats.c_incorrect) as f64 / stats.collection_time)
}

/// Fraction of gated counts in the wrong channel.
pub fn qber(stats: &WindowStats) -> Result<f64> {
    let total = stats.c_correct + stats.c_incorrect;
    if total == 0 {
        return Err(Error::UndefinedStatistic(format!(
            "no gated counts at window {}",
            stats.window_fraction
        )));
    }
    Ok(stats.c_incorrect as f64 / total as f64)
}

/// Maximum information per bit available to an eavesdropper, `1 - cos theta`.
pub fn eavesdropper_info(theta: f64) -> Result<f64> {
    if !(0.0..=90.0).contains(&theta) {
        return Err(Error::invalid(format!("theta {theta} outside [0, 90] degrees")));
    }
    Ok(1.0 - theta.to_radians().cos())
}

/// Unclamped net-rate factor
/// `1 + q log2 q - 7/2 q - i_ae (1 - (1-q) log2(1-q) - 7/2 q)`.
pub fn net_rate_bracket(q: f64, i_ae: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&q) {
        return Err(Error::invalid(format!("QBER {q} outside [0, 1)")));
    }
    let q_log_q = if q > 0.0 { q * q.log2() } else { 0.0 };
    let p_log_p = (1.0 - q) * (1.0 - q).log2();
    Ok(1.0 + q_log_q - 3.5 * q - i_ae * (1.0 - p_log_p - 3.5 * q))
}

/// Estimated rate after error correction and privacy amplification, clamped at zero.
pub fn net_rate(q: f64, r_sift: f64, i_ae: f64) -> Result<f64> {
    Ok((net_rate_bracket(q, i_ae)? * r_sift).max(0.0))
}

/// Incorrect gated count rate split by physical cause.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ErrorBudget {
    /// PBS leakage, counts/s.
    pub r_leak: f64,
    /// Dark counts and afterpulses, counts/s.
    pub r_dark: f64,
    /// Photons that landed in a neighbouring slot of the other bit value
    /// (timing jitter, dispersion, NRZ edges), counts/s.
    pub r_v: f64,
    /// All gated counts, counts/s.
    pub r_sift: f64,
}

impl ErrorBudget {
    pub fn total_error_rate(&self) -> f64 {
        self.r_leak + self.r_dark + self.r_v
    }

    pub fn qber(&self) -> Result<f64> {
        if self.r_sift <= 0.0 {
            return Err(Error::UndefinedStatistic("no gated counts".into()));
        }
        Ok(self.total_error_rate() / self.r_sift)
    }
}

/// Partitions incorrect gated clicks by origin tag. `period_ps` is the bit
/// period and `collection_time` the seconds the events span.
pub fn error_budget(
    events: &[DetectionEvent],
    period_ps: f64,
    window_fraction: f64,
    collection_time: f64,
) -> Result<ErrorBudget> {
    check_window(window_fraction)?;
    if !(collection_time > 0.0) {
        return Err(Error::invalid("collection time must be positive"));
    }
    let mut counts = [0u64; 3];
    let mut gated_total = 0u64;
    for e in events.iter().filter(|e| gated(e, period_ps, window_fraction)) {
        if e.origin == Origin::Unknown {
            return Err(Error::invalid("error budget needs origin-tagged events"));
        }
        gated_total += 1;
        if e.channel == e.truth_bit {
            continue;
        }
        let i = match e.origin {
            Origin::Leakage => 0,
            Origin::Dark => 1,
            _ => 2,
        };
        counts[i] += 1;
    }
    Ok(ErrorBudget {
        r_leak: counts[0] as f64 / collection_time,
        r_dark: counts[1] as f64 / collection_time,
        r_v: counts[2] as f64 / collection_time,
        r_sift: gated_total as f64 / collection_time,
    })
}

/// [`error_budget`] over a whole record.
pub fn record_error_budget(record: &SessionRecord, window_fraction: f64) -> Result<ErrorBudget> {
    error_budget(&record.events, record.period_ps(), window_fraction, record.duration)
}

/// One row of a rate table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateReport {
    pub distance_km: f64,
    pub clock_hz: f64,
    pub window_fraction: f64,
    pub r_raw: f64,
    pub r_sift: f64,
    /// Zero when the estimate is negative; see `insecure`.
    pub r_net: f64,
    pub qber: f64,
    pub i_ae: f64,
    pub theta: f64,
    /// The net-rate estimate was negative: no secure key at this setting.
    pub insecure: bool,
}

/// Rates and QBER of a record at one window.
pub fn rate_report(record: &SessionRecord, window_fraction: f64, distance_km: f64, theta: f64) -> Result<RateReport> {
    let stats = window_stats(record, window_fraction)?;
    let q = qber(&stats)?;
    let r_sift = sift_rate(&stats)?;
    let i_ae = eavesdropper_info(theta)?;
    let bracket = net_rate_bracket(q.min(1.0 - f64::EPSILON), i_ae)?;
    Ok(RateReport {
        distance_km,
        clock_hz: record.clock(),
        window_fraction,
        r_raw: measured_raw_rate(record),
        r_sift,
        r_net: (bracket * r_sift).max(0.0),
        qber: q,
        i_ae,
        theta,
        insecure: bracket < 0.0,
    })
}

/// Window fractions 0.1, 0.2, ..., 0.9 and 0.98 of the bit width.
pub fn default_window_grid() -> Vec<f64> {
    let mut g: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
    g.push(0.98);
    g
}

/// Evaluates every grid window on the same record and returns the window with
/// the highest net rate (the wider window on ties) plus all reports.
pub fn optimize_window(record: &SessionRecord, grid: &[f64], theta: f64) -> Result<(f64, Vec<RateReport>)> {
    if grid.is_empty() {
        return Err(Error::invalid("window grid is empty"));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let reports = sorted
        .iter()
        .map(|&w| rate_report(record, w, record.config.channel.fiber_length, theta))
        .collect::<Result<Vec<_>>>()?;
    let best = reports
        .iter()
        .fold(&reports[0], |best, r| if r.r_net >= best.r_net { r } else { best });
    Ok((best.window_fraction, reports))
}

pub const RATE_CSV_HEADER: &str = "distance_km,clock_hz,window_fraction,r_raw,r_sift,r_net,qber_percent,insecure";

/// Rates as integers per second, QBER in percent with one decimal; the net
/// rate is left empty for insecure rows.
pub fn write_rate_csv<W: Write>(mut out: W, reports: &[RateReport]) -> std::io::Result<()> {
    writeln!(out, "{RATE_CSV_HEADER}")?;
    for r in reports {
        let net = if r.insecure {
            String::new()
        } else {
            format!("{:.0}", r.r_net)
        };
        writeln!(
            out,
            "{:.2},{:.0},{},{:.0},{:.0},{},{:.1},{}",
            r.distance_km,
            r.clock_hz,
            r.window_fraction,
            r.r_raw,
            r.r_sift,
            net,
            r.qber * 100.0,
            u8::from(r.insecure)
        )?;
    }
    Ok(())
}

/// Expected detector click rate (both channels) of a session, from the
/// product of loss factors, Poisson saturation per pulse, background counts
/// and non-paralyzable dead time.
pub fn expected_click_rate(config: &SessionConfig) -> f64 {
    let rx = &config.receiver;
    let clock = config.clock();
    let pattern = config.sequence.pattern();
    let ones = pattern.iter().filter(|&&b| b == 1).count() as f64 / pattern.len() as f64;
    let n_f = config.channel.transmittance();
    let mu = config.source.mean_photon_number;
    let mut total = 0.0;
    for c in 0..2u8 {
        let per_bit = |bit: u8| {
            let p = rx.click_probability(config.source.angle(bit), c) * n_f;
            match config.source.statistics {
                PhotonStatistics::Poisson => -(-mu * p).exp_m1(),
                PhotonStatistics::Single => p,
            }
        };
        let r = clock * ((1.0 - ones) * per_bit(0) + ones * per_bit(1)) + rx.background_rate(c);
        total += r / (1.0 + r * rx.detectors[c as usize].dead_time);
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::ChannelParams;
    use crate::protocol::run_session;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn stats(c: u64, i: u64) -> WindowStats {
        WindowStats {
            window_fraction: 0.5,
            c_correct: c,
            c_incorrect: i,
            n_slots: 0,
            collection_time: 60.0,
        }
    }

    fn ev(channel: u8, timestamp_ps: i64, origin: Origin, truth_bit: u8) -> DetectionEvent {
        DetectionEvent {
            channel,
            timestamp_ps,
            slot_index: (timestamp_ps / 1000) as u64,
            origin,
            truth_bit,
        }
    }

    #[test]
    fn eavesdropper_info_values() {
        assert_relative_eq!(eavesdropper_info(45.0).unwrap(), 0.292_893_2, epsilon = 1e-7);
        assert_eq!(eavesdropper_info(0.0).unwrap(), 0.0);
        assert_relative_eq!(eavesdropper_info(90.0).unwrap(), 1.0, epsilon = 1e-15);
        assert!(eavesdropper_info(91.0).is_err());
    }

    #[test]
    fn qber_and_sift_rate() {
        assert_relative_eq!(qber(&stats(996, 4)).unwrap(), 0.004);
        assert_eq!(qber(&stats(10, 0)).unwrap(), 0.0);
        assert!(matches!(qber(&stats(0, 0)), Err(Error::UndefinedStatistic(_))));
        let s = stats(1_009_000 * 60, 2_117 * 60);
        assert_relative_eq!(sift_rate(&s).unwrap(), 1_011_117.0);
        assert_eq!(sift_rate(&stats(0, 0)).unwrap(), 0.0);
    }

    #[test]
    fn raw_rate_examples() {
        let r = raw_rate(17.0, 0.0, 0.1, 1e9).unwrap();
        assert_relative_eq!(r, 1.995_262e6, epsilon = 1.0);
        assert!(raw_rate(17.0, 1e6, 0.1, 1e9).unwrap() < 1e-300);
        assert_eq!(
            raw_rate(17.0, 3.0, 0.1, 2e9).unwrap(),
            2.0 * raw_rate(17.0, 3.0, 0.1, 1e9).unwrap()
        );
    }

    #[test]
    fn net_rate_identities() {
        assert_eq!(net_rate_bracket(0.0, 0.0).unwrap(), 1.0);
        assert_eq!(net_rate(0.0, 1234.0, 0.0).unwrap(), 1234.0);
        assert_eq!(net_rate(0.3, 1000.0, 0.29).unwrap(), 0.0);
        assert!(net_rate(1.0, 1.0, 0.0).is_err());
        let i = eavesdropper_info(45.0).unwrap();
        let r = net_rate(0.004, 61_948.0, i).unwrap();
        assert!((r / 41_147.0 - 1.0).abs() < 0.025, "{r}");
    }

    #[test]
    fn histogram_folds_and_validates() {
        let events = vec![
            ev(0, 500, Origin::Signal, 0),
            ev(1, 16_500, Origin::Signal, 1),
            ev(1, 3_200, Origin::Dark, 1),
        ];
        let h = accumulate_histogram(&events, 16e-9, 1e-9, 1.0).unwrap();
        assert_eq!(h.n_bins(), 16);
        assert_eq!(h.counts[0][0], 1);
        assert_eq!(h.counts[1][0], 1);
        assert_eq!(h.counts[1][3], 1);
        assert_eq!(h.total(), 3);
        assert!(accumulate_histogram(&events, 16e-9, 3e-9, 1.0).is_err());
        let empty = accumulate_histogram(&[], 16e-9, 1e-9, 1.0).unwrap();
        assert_eq!(empty.total(), 0);
        let mut csv = Vec::new();
        h.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("bin_start_ps,ch0,ch1\n0,1,1\n1000,0,0\n"));
    }

    #[test]
    fn error_budget_partitions_incorrect_counts() {
        let events = vec![
            ev(0, 500, Origin::Signal, 0),
            ev(1, 1_500, Origin::Leakage, 0),
            ev(1, 2_500, Origin::Dark, 0),
            ev(0, 3_500, Origin::Signal, 1),
            ev(0, 4_500, Origin::EveResend, 1),
            ev(0, 5_500, Origin::Leakage, 0),
            ev(1, 6_100, Origin::Dark, 0),
        ];
        let b = error_budget(&events, 1000.0, 0.5, 2.0).unwrap();
        assert_eq!((b.r_leak, b.r_dark, b.r_v), (0.5, 0.5, 1.0));
        assert_eq!(b.r_sift, 3.0);
        let mut bad = events.clone();
        bad[0].origin = Origin::Unknown;
        assert!(error_budget(&bad, 1000.0, 0.5, 2.0).is_err());
    }

    #[test]
    fn rate_csv_formatting() {
        let r = RateReport {
            distance_km: 2.15,
            clock_hz: 1e8,
            window_fraction: 0.5,
            r_raw: 38_675.4,
            r_sift: 20_419.2,
            r_net: 12_930.6,
            qber: 0.0071,
            i_ae: 0.29,
            theta: 45.0,
            insecure: false,
        };
        let mut bad = r.clone();
        bad.insecure = true;
        bad.r_net = 0.0;
        let mut out = Vec::new();
        write_rate_csv(&mut out, &[r, bad]).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], RATE_CSV_HEADER);
        assert_eq!(lines[1], "2.15,100000000,0.5,38675,20419,12931,0.7,0");
        assert_eq!(lines[2], "2.15,100000000,0.5,38675,20419,,0.7,1");
    }

    #[test]
    fn session_statistics_consistent() {
        let mut c = SessionConfig::default();
        c.collection_time = 5e-3;
        c.seed = 3;
        let r = run_session(&c).unwrap();
        let grid = default_window_grid();
        let (_, reports) = optimize_window(&r, &grid, DEFAULT_THETA).unwrap();
        for w in reports.windows(2) {
            assert!(w[0].r_sift <= w[1].r_sift);
        }
        for rep in &reports {
            assert!(rep.r_sift <= rep.r_raw + 1e-9);
            assert!(rep.r_net <= rep.r_sift);
            let s = window_stats(&r, rep.window_fraction).unwrap();
            let q = qber(&s).unwrap();
            let correct = s.c_correct as f64 / (s.c_correct + s.c_incorrect) as f64;
            assert_eq!(q + correct, 1.0);
            let b = record_error_budget(&r, rep.window_fraction).unwrap();
            let incorrect_rate = s.c_incorrect as f64 / r.duration;
            assert_relative_eq!(b.total_error_rate(), incorrect_rate, max_relative = 1e-12);
            assert_relative_eq!(b.r_sift, rep.r_sift, max_relative = 1e-12);
        }
        let measured = measured_raw_rate(&r);
        let expected = expected_click_rate(&c);
        let sd = (expected * r.duration).sqrt() / r.duration;
        assert!((measured - expected).abs() < 4.0 * sd, "{measured} vs {expected}");
    }

    #[test]
    fn ideal_record_prefers_widest_window() {
        let mut c = SessionConfig::default();
        c.collection_time = 1e-3;
        c.source.statistics = PhotonStatistics::Single;
        c.source.pulse_timing_fwhm = 0.0;
        c.channel = ChannelParams {
            attenuation: 0.0,
            dispersion: 0.0,
            ..Default::default()
        };
        c.receiver = crate::optics::ReceiverParams::ideal();
        let r = run_session(&c).unwrap();
        let (best, _) = optimize_window(&r, &default_window_grid(), DEFAULT_THETA).unwrap();
        assert_eq!(best, 0.98);
        let key = crate::protocol::sift(&r, 1.0).unwrap();
        assert_eq!(key.errors(), 0);
    }

    proptest! {
        #[test]
        fn histogram_preserves_total(ts in proptest::collection::vec((0u8..2, 0i64..10_000_000), 0..200)) {
            let events: Vec<DetectionEvent> = ts.iter().map(|&(c, t)| ev(c, t, Origin::Signal, c)).collect();
            let h = accumulate_histogram(&events, 16e-9, 16e-9 / 1024.0, 1.0).unwrap();
            prop_assert_eq!(h.total(), events.len() as u64);
        }

        #[test]
        fn net_rate_continuous_and_bounded(q in 0.0f64..0.2, i in 0.0f64..1.0) {
            let r = net_rate(q, 1000.0, i).unwrap();
            prop_assert!((0.0..=1000.0).contains(&r));
            let r2 = net_rate(q + 1e-9, 1000.0, i).unwrap();
            prop_assert!((r - r2).abs() < 1e-3);
        }
    }
}
