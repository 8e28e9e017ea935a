//! Drivers behind the command line modes: sweeps, histograms, attack runs,
//! window optimization and the reproduction of the reference tables.

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::adversary::{detect_attack, expected_rate_ratio, AttackOutcome, Verdict};
use crate::analytics::{
    accumulate_histogram_range, default_window_grid, expected_click_rate, measured_raw_rate, qber, rate_report,
    record_error_budget, window_stats, ErrorBudget, Histogram, RateReport,
};
use crate::bitsource::{SequenceKind, DEFAULT_ANALYSIS_WINDOW};
use crate::config::{spec_pairs, DistanceMode, ExperimentSpec};
use crate::optics::FWHM_PER_SIGMA;
use crate::protocol::{run_session_with, sift, RunOptions, SessionConfig, SessionRecord, SlotSelection};
use crate::reference::{ReferenceRow, ReferenceTable};
use crate::{Error, Result, VERSION};

/// The session for one sweep distance.
pub fn session_at_distance(spec: &ExperimentSpec, distance_km: f64) -> SessionConfig {
    let mut s = spec.session.clone();
    match spec.distance_mode {
        DistanceMode::Attenuation => {
            s.channel.extra_attenuation += distance_km * s.channel.attenuation;
            s.channel.fiber_length = 0.0;
        }
        DistanceMode::Length => s.channel.fiber_length = distance_km,
    }
    s
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

fn map_maybe_parallel<T, R, F>(items: &[T], parallel: bool, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel {
        return items.par_iter().map(f).collect();
    }
    let _ = parallel;
    items.iter().map(f).collect()
}

/// One report per (distance, window), sorted by distance then window.
pub fn run_sweep(spec: &ExperimentSpec, options: RunOptions) -> Result<Vec<RateReport>> {
    spec.validate()?;
    let distances = sorted(&spec.distances);
    let windows = sorted(&spec.windows);
    let rows = map_maybe_parallel(&distances, options.parallel, |&d| -> Result<Vec<RateReport>> {
        let record = run_session_with(&session_at_distance(spec, d), options)?;
        windows
            .iter()
            .map(|&w| rate_report(&record, w, d, spec.privacy_theta))
            .collect()
    });
    Ok(rows
        .into_iter()
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect())
}

/// A single session with rate reports and error budgets for every window.
#[derive(Clone, Debug)]
pub struct Simulation {
    pub record: SessionRecord,
    pub reports: Vec<RateReport>,
    pub budgets: Vec<ErrorBudget>,
}

pub fn run_simulation(spec: &ExperimentSpec, options: RunOptions) -> Result<Simulation> {
    spec.validate()?;
    let distance = spec.distances[0];
    let record = run_session_with(&session_at_distance(spec, distance), options)?;
    let windows = sorted(&spec.windows);
    let reports = windows
        .iter()
        .map(|&w| rate_report(&record, w, distance, spec.privacy_theta))
        .collect::<Result<Vec<_>>>()?;
    let budgets = windows
        .iter()
        .map(|&w| record_error_budget(&record, w))
        .collect::<Result<Vec<_>>>()?;
    Ok(Simulation {
        record,
        reports,
        budgets,
    })
}

/// Slots to simulate on each side of a histogram window so that timing tails
/// from neighbouring bits are represented.
fn guard_slots(session: &SessionConfig) -> u64 {
    let rx = &session.receiver;
    let jitter = rx.detectors[0].jitter_fwhm.max(rx.detectors[1].jitter_fwhm) / FWHM_PER_SIGMA;
    let sigma =
        (jitter.powi(2) + session.source.timing_sigma().powi(2) + session.channel.dispersion_sigma().powi(2)).sqrt();
    (10.0 * sigma * session.clock()).ceil() as u64 + 2
}

/// Timing histogram of the first distance. For the 8-bit word the whole sync
/// period is binned; for longer patterns a window of `analysis_window` bits
/// (127 by default) starting at `analysis_start` is simulated and binned.
pub fn run_histogram(spec: &ExperimentSpec, options: RunOptions) -> Result<Histogram> {
    spec.validate()?;
    let mut session = session_at_distance(spec, spec.distances[0]);
    let divisor = session.sync_divisor;
    let window = match (spec.analysis_window, session.sequence.kind()) {
        (Some(w), _) => w.min(divisor),
        (None, SequenceKind::Word8) => divisor,
        (None, _) => DEFAULT_ANALYSIS_WINDOW as u64,
    };
    let start = spec.analysis_start % divisor;
    if start + window > divisor {
        return Err(Error::InvalidConfig(
            "histogram window runs past the sync period".into(),
        ));
    }
    if window < divisor {
        let guard = guard_slots(&session);
        let len = (window + 2 * guard).min(divisor);
        session.selection = SlotSelection::Periodic {
            period: divisor,
            offset: (start + divisor - guard.min(divisor)) % divisor,
            len,
        };
    }
    let record = run_session_with(&session, options)?;
    let width = session.bit_width();
    let span = window as f64 * width;
    let bin = spec.bin_width.unwrap_or(span / 1024.0);
    accumulate_histogram_range(
        &record.events,
        session.sync_period(),
        start as f64 * width,
        span,
        bin,
        record.duration,
    )
}

/// Attacked session compared against the same session without Eve.
#[derive(Clone, Debug, Serialize)]
pub struct AttackReport {
    pub window_fraction: f64,
    pub baseline_rate: f64,
    pub attacked_rate: f64,
    pub rate_ratio: f64,
    /// Single-photon many-pulse prediction of the ratio.
    pub expected_rate_ratio: f64,
    pub baseline_qber: f64,
    pub attacked_qber: f64,
    pub induced_qber_delta: f64,
    /// Standard error of the QBER difference.
    pub qber_delta_sigma: f64,
    /// Fraction of Bob's sifted key known to Eve.
    pub eve_information_fraction: Option<f64>,
    pub tolerance: f64,
    pub verdict: Verdict,
    pub outcome: AttackOutcome,
}

pub fn run_attack(spec: &ExperimentSpec, options: RunOptions) -> Result<AttackReport> {
    spec.validate()?;
    let window = spec.windows[0];
    let mut base = session_at_distance(spec, spec.distances[0]);
    base.attack.enabled = false;
    let mut attacked = base.clone();
    attacked.attack = spec.session.attack.clone();
    attacked.attack.enabled = true;

    let baseline = run_session_with(&base, options)?;
    let hit = run_session_with(&attacked, options)?;
    let (bs, hs) = (window_stats(&baseline, window)?, window_stats(&hit, window)?);
    let (qb, qa) = (qber(&bs)?, qber(&hs)?);
    let var = |q: f64, s: &crate::analytics::WindowStats| q * (1.0 - q) / (s.c_correct + s.c_incorrect) as f64;
    let baseline_rate = measured_raw_rate(&baseline);
    let attacked_rate = measured_raw_rate(&hit);
    let rate_ratio = attacked_rate / baseline_rate;
    let key = sift(&hit, window)?;
    let mut outcome = hit.attack.clone().unwrap_or_default();
    outcome.induced_qber_delta = Some(qa - qb);
    outcome.rate_ratio = Some(rate_ratio);
    Ok(AttackReport {
        window_fraction: window,
        baseline_rate,
        attacked_rate,
        rate_ratio,
        expected_rate_ratio: expected_rate_ratio(
            attacked.attack.theta,
            attacked.attack.substitute_channel_loss,
            base.channel.total_loss_db(),
        ),
        baseline_qber: qb,
        attacked_qber: qa,
        induced_qber_delta: qa - qb,
        qber_delta_sigma: (var(qb, &bs) + var(qa, &hs)).sqrt(),
        eve_information_fraction: outcome.information_fraction(&key),
        tolerance: spec.rate_tolerance,
        verdict: detect_attack(baseline_rate, attacked_rate, spec.rate_tolerance)?,
        outcome,
    })
}

/// Window scan of one session. Uses the configured windows when more than
/// one is given, otherwise 0.1 to 0.9 in steps of 0.1 plus 0.98.
pub fn run_optimize(spec: &ExperimentSpec, options: RunOptions) -> Result<(f64, Vec<RateReport>)> {
    spec.validate()?;
    let grid = if spec.windows.len() > 1 {
        sorted(&spec.windows)
    } else {
        default_window_grid()
    };
    let record = run_session_with(&session_at_distance(spec, spec.distances[0]), options)?;
    let (best, mut reports) = crate::analytics::optimize_window(&record, &grid, spec.privacy_theta)?;
    for r in &mut reports {
        r.distance_km = spec.distances[0];
    }
    Ok((best, reports))
}

/// Extra attenuation (dB, on a zero-length fiber) for which the expected
/// click rate of `session` equals `target_raw_rate`. Clamped to [0, 200] dB.
pub fn fit_extra_attenuation(session: &SessionConfig, target_raw_rate: f64) -> f64 {
    let rate_at = |loss: f64| {
        let mut s = session.clone();
        s.channel.fiber_length = 0.0;
        s.channel.extra_attenuation = loss;
        expected_click_rate(&s)
    };
    let (mut lo, mut hi) = (0.0, 200.0);
    if rate_at(lo) <= target_raw_rate {
        return lo;
    }
    if rate_at(hi) >= target_raw_rate {
        return hi;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if rate_at(mid) > target_raw_rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Counts targeted per table row when the duration is chosen automatically.
pub const TABLE_TARGET_COUNTS: f64 = 1e5;

/// Simulated counterpart of one reference row.
#[derive(Clone, Debug, Serialize)]
pub struct TableRowResult {
    pub distance_km: f64,
    pub fitted_loss_db: f64,
    /// Simulated seconds.
    pub duration: f64,
    pub simulated: Vec<RateReport>,
    #[serde(skip)]
    pub reference: ReferenceRow,
}

/// Session used for a reference row: defaults at the table's clock with the
/// fitted loss and a duration either scaled explicitly or chosen to collect
/// about [`TABLE_TARGET_COUNTS`] clicks.
pub fn table_session(
    table: &ReferenceTable,
    row: &ReferenceRow,
    base: &SessionConfig,
    duration_scale: Option<f64>,
) -> SessionConfig {
    let mut s = base.clone();
    s.source.clock_frequency = table.clock_hz;
    let loss = fit_extra_attenuation(&s, row.r_raw);
    s.channel.fiber_length = 0.0;
    s.channel.extra_attenuation = loss;
    s.duration_scale = match duration_scale {
        Some(f) => f,
        None => {
            let wanted = TABLE_TARGET_COUNTS / row.r_raw;
            (wanted / s.collection_time).min(1.0)
        }
    };
    s
}

pub fn run_table(
    table: &ReferenceTable,
    base: &SessionConfig,
    duration_scale: Option<f64>,
    privacy_theta: f64,
    options: RunOptions,
) -> Result<Vec<TableRowResult>> {
    let results = map_maybe_parallel(&table.rows, options.parallel, |row| -> Result<TableRowResult> {
        let s = table_session(table, row, base, duration_scale);
        let record = run_session_with(&s, options)?;
        let simulated = table
            .windows
            .iter()
            .map(|&w| rate_report(&record, w, row.distance_km, privacy_theta))
            .collect::<Result<Vec<_>>>()?;
        Ok(TableRowResult {
            distance_km: row.distance_km,
            fitted_loss_db: s.channel.extra_attenuation,
            duration: record.duration,
            simulated,
            reference: *row,
        })
    });
    results.into_iter().collect()
}

pub const TABLE_CSV_HEADER: &str = "table,distance_km,window_fraction,fitted_loss_db,r_raw_ref,r_raw_sim,r_sift_ref,r_sift_sim,r_net_ref,r_net_sim,qber_ref_percent,qber_sim_percent";

/// Simulated and reference values side by side, one line per (row, window).
pub fn write_table_csv<W: std::io::Write>(
    mut out: W,
    table: &ReferenceTable,
    rows: &[TableRowResult],
) -> std::io::Result<()> {
    for r in rows {
        for (i, sim) in r.simulated.iter().enumerate() {
            let net_ref = r.reference.r_net[i].map(|n| format!("{n:.0}")).unwrap_or_default();
            let net_sim = if sim.insecure {
                String::new()
            } else {
                format!("{:.0}", sim.r_net)
            };
            writeln!(
                out,
                "{},{:.2},{},{:.3},{:.0},{:.0},{:.0},{:.0},{},{},{:.1},{:.1}",
                table.name,
                r.distance_km,
                table.windows[i],
                r.fitted_loss_db,
                r.reference.r_raw,
                sim.r_raw,
                r.reference.r_sift[i],
                sim.r_sift,
                net_ref,
                net_sim,
                r.reference.qber_percent[i],
                sim.qber * 100.0
            )?;
        }
    }
    Ok(())
}

/// JSON envelope shared by all modes: command, version, seed and the full
/// configuration echo around a mode-specific `results` value.
pub fn json_report(command: &str, spec: &ExperimentSpec, results: Value) -> Value {
    json!({
        "command": command,
        "version": VERSION,
        "seed": spec.session.seed,
        "config": spec_pairs(spec),
        "results": results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;
    use crate::reference::{table_100mhz, table_1ghz};

    #[test]
    fn fitted_loss_reproduces_target_rate() {
        for table in [table_100mhz(), table_1ghz()] {
            let mut base = SessionConfig::default();
            base.source.clock_frequency = table.clock_hz;
            for row in &table.rows {
                let s = table_session(&table, row, &base, None);
                let rate = expected_click_rate(&s);
                assert!((rate / row.r_raw - 1.0).abs() < 1e-6, "{} km: {rate}", row.distance_km);
                assert!(s.duration() * row.r_raw >= TABLE_TARGET_COUNTS * 0.99 || s.duration_scale == 1.0);
            }
        }
    }

    #[test]
    fn sweep_has_one_row_per_cell_in_order() {
        let spec =
            parse_config("clock = 1e9\ncollection_time = 0.002\ndistances = 4, 0, 2\nwindows = 0.9, 0.5\nseed = 5")
                .unwrap();
        let rows = run_sweep(&spec, RunOptions::default()).unwrap();
        assert_eq!(rows.len(), 6);
        let keys: Vec<(f64, f64)> = rows.iter().map(|r| (r.distance_km, r.window_fraction)).collect();
        assert_eq!(
            keys,
            vec![(0.0, 0.5), (0.0, 0.9), (2.0, 0.5), (2.0, 0.9), (4.0, 0.5), (4.0, 0.9)]
        );
        assert!(rows[0].r_raw > rows[2].r_raw && rows[2].r_raw > rows[4].r_raw);
    }

    #[test]
    fn word8_histogram_alternates() {
        let spec = parse_config("clock = 1e9\ncollection_time = 0.01\nseed = 2\nexperiment.bin_width = 1e-9").unwrap();
        let h = run_histogram(&spec, RunOptions::default()).unwrap();
        assert_eq!(h.n_bins(), 16);
        // Bit 1 drives channel 1 in even slots of the 10101010 word.
        for i in 0..16 {
            let (hi, lo) = if i % 2 == 0 { (1, 0) } else { (0, 1) };
            assert!(h.counts[hi][i] > 5 * h.counts[lo][i], "bin {i}");
        }
    }

    #[test]
    fn prbs_histogram_window() {
        let spec = parse_config("sequence = prbs15\nclock = 1e9\ncollection_time = 0.5\nseed = 4").unwrap();
        let h = run_histogram(&spec, RunOptions::default()).unwrap();
        assert_eq!(h.n_bins(), 1024);
        assert!((h.bin_width * 1024.0 - 127e-9).abs() < 1e-15);
        assert!(h.total() > 0);
    }

    #[test]
    fn attack_report_on_lossless_single_photon_link() {
        let spec = parse_config(
            "clock = 1e8\ncollection_time = 0.01\nseed = 9\nstatistics = single\nchannel.attenuation = 0\ndead_time = 0\n",
        )
        .unwrap();
        let r = run_attack(&spec, RunOptions::default()).unwrap();
        assert!((r.rate_ratio - 0.293).abs() < 0.01, "{}", r.rate_ratio);
        assert!(r.induced_qber_delta.abs() < 4.0 * r.qber_delta_sigma);
        assert_eq!(r.verdict, Verdict::Suspect);
        assert_eq!(r.eve_information_fraction.map(|f| f > 0.99), Some(true));
    }
}
