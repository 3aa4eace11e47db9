//! Aggregate observables, trajectory recording and attractor diagnostics.
//!
//! `agg1` sums each compound over the network: `[B, N, M1, M2, C]`.
//! `agg2` folds organic pools together: `[B, N + M1 + M2, C]`.
//! `proj` keeps `[B, N, C]`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinetics::SystemState;

pub type Totals = [f64; 5];

pub fn agg1(state: &SystemState) -> Totals {
    let mut out = [0.0; 5];
    for s in &state.nodes {
        out[0] += s.b;
        out[1] += s.n;
        out[2] += s.m1;
        out[3] += s.m2;
        out[4] += s.c;
    }
    out
}

pub fn agg2(v: &Totals) -> [f64; 3] {
    [v[0], v[1] + v[2] + v[3], v[4]]
}

pub fn proj(v: &Totals) -> [f64; 3] {
    [v[0], v[1], v[4]]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    /// Days.
    pub t: f64,
    pub agg1: Totals,
    /// `|Σ agg1(t) − Σ agg1(0)| / Σ agg1(0)`.
    pub conservation_error: f64,
}

impl Record {
    pub fn total(&self) -> f64 {
        self.agg1.iter().sum()
    }
}

/// Time series of aggregated records, with optional full node snapshots.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub records: Vec<Record>,
    pub snapshots: Vec<SystemState>,
    /// Smallest compound mass seen at any step, not only at records.
    pub min_component: f64,
}

impl Trajectory {
    pub fn new() -> Self {
        Self {
            min_component: f64::INFINITY,
            ..Default::default()
        }
    }

    pub fn initial_total(&self) -> f64 {
        self.records.first().map_or(0.0, Record::total)
    }

    /// Appends a record for `state`; times must increase strictly.
    pub fn record(&mut self, state: &SystemState) -> Result<()> {
        let totals = agg1(state);
        let total: f64 = totals.iter().sum();
        let reference = if self.records.is_empty() {
            total
        } else {
            self.initial_total()
        };
        if let Some(last) = self.records.last() {
            if !(state.time > last.t) {
                return Err(Error::input(format!(
                    "record at t = {} does not follow t = {}",
                    state.time, last.t
                )));
            }
        }
        let conservation_error = if reference > 0.0 {
            (total - reference).abs() / reference
        } else {
            total.abs()
        };
        self.records.push(Record {
            t: state.time,
            agg1: totals,
            conservation_error,
        });
        self.min_component = self.min_component.min(state.min_component());
        Ok(())
    }

    pub fn last(&self) -> Option<&Record> {
        self.records.last()
    }

    /// One compound's column.
    pub fn column(&self, species: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.agg1[species]).collect()
    }
}

/// Largest relative drift of total carbon from the first record.
///
/// Fewer than two records means nothing to compare; the drift is 0.
pub fn conservation_audit(traj: &Trajectory) -> f64 {
    let Some(first) = traj.records.first() else {
        return 0.0;
    };
    let t0 = first.total();
    traj.records
        .iter()
        .map(|r| {
            let d = (r.total() - t0).abs();
            if t0 > 0.0 {
                d / t0
            } else {
                d
            }
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttractorOptions {
    /// Extinction threshold on total MB, as a fraction of initial total carbon.
    pub mb_threshold_fraction: f64,
    /// Trailing window in days.
    pub window: f64,
    /// Allowed MB increase between consecutive records in the window, as a
    /// fraction of initial total carbon.
    pub jitter: f64,
}

impl Default for AttractorOptions {
    fn default() -> Self {
        Self {
            mb_threshold_fraction: 1e-3,
            window: 90.0,
            jitter: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttractorReport {
    /// First record time with `B ≤ threshold`, if any.
    pub time_to_mb_extinction: Option<f64>,
    /// `agg2` of the last record.
    pub terminal_point: [f64; 3],
    /// Per-axis `[min, max]` of `agg2` over the trailing window.
    pub terminal_bounding_box: [[f64; 2]; 3],
    pub converged: bool,
    pub initial_total_carbon: f64,
    pub final_mb: f64,
    pub mb_threshold: f64,
    /// MB nonincreasing (within jitter) over the trailing window.
    pub mb_monotone_in_window: bool,
    /// CO₂ total never decreased between records.
    pub co2_nondecreasing: bool,
    pub window_records: usize,
}

pub fn attractor_report(traj: &Trajectory, opts: &AttractorOptions) -> Result<AttractorReport> {
    let (Some(first), Some(last)) = (traj.records.first(), traj.records.last()) else {
        return Err(Error::input("empty trajectory"));
    };
    if last.t - first.t < opts.window {
        return Err(Error::input(format!(
            "trajectory spans {} days, shorter than the {}-day window",
            last.t - first.t,
            opts.window
        )));
    }
    let total0 = first.total();
    let threshold = opts.mb_threshold_fraction * total0;
    let jitter = opts.jitter * total0;

    let time_to_mb_extinction = traj.records.iter().find(|r| r.agg1[0] <= threshold).map(|r| r.t);

    let start = last.t - opts.window;
    let window: Vec<&Record> = traj.records.iter().filter(|r| r.t >= start).collect();
    let mut bbox = [[f64::INFINITY, f64::NEG_INFINITY]; 3];
    for r in &window {
        let p = agg2(&r.agg1);
        for a in 0..3 {
            bbox[a][0] = bbox[a][0].min(p[a]);
            bbox[a][1] = bbox[a][1].max(p[a]);
        }
    }
    let mb_monotone_in_window = window.windows(2).all(|w| w[1].agg1[0] <= w[0].agg1[0] + jitter);
    let co2_nondecreasing = traj.records.windows(2).all(|w| w[1].agg1[4] >= w[0].agg1[4]);
    let final_mb = last.agg1[0];
    Ok(AttractorReport {
        time_to_mb_extinction,
        terminal_point: agg2(&last.agg1),
        terminal_bounding_box: bbox,
        converged: final_mb <= threshold && mb_monotone_in_window,
        initial_total_carbon: total0,
        final_mb,
        mb_threshold: threshold,
        mb_monotone_in_window,
        co2_nondecreasing,
        window_records: window.len(),
    })
}

pub const CSV_HEADER: &str = "t,B,N,M1,M2,C,conservation_error";

/// Writes records as CSV. Numbers use the shortest representation that
/// parses back to the same `f64`.
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in &traj.records {
        let [b, n, m1, m2, c] = r.agg1;
        writeln!(w, "{},{b},{n},{m1},{m2},{c},{}", r.t, r.conservation_error)?;
    }
    Ok(())
}

pub fn export_trajectory(traj: &Trajectory, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_trajectory_csv(traj, &mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn parse_trajectory_csv(text: &str) -> Result<Trajectory> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        other => return Err(Error::input(format!("unexpected CSV header {other:?}"))),
    }
    let mut traj = Trajectory::new();
    for (k, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let vals = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::input(format!("CSV row {}: {e}", k + 2)))?;
        if vals.len() != 7 {
            return Err(Error::input(format!("CSV row {} has {} fields", k + 2, vals.len())));
        }
        let agg1 = [vals[1], vals[2], vals[3], vals[4], vals[5]];
        if let Some(last) = traj.records.last() {
            if !(vals[0] > last.t) {
                return Err(Error::input(format!("CSV row {}: time not increasing", k + 2)));
            }
        }
        traj.min_component = traj
            .min_component
            .min(agg1.iter().copied().fold(f64::INFINITY, f64::min));
        traj.records.push(Record {
            t: vals[0],
            agg1,
            conservation_error: vals[6],
        });
    }
    Ok(traj)
}

pub fn import_trajectory(path: impl AsRef<Path>) -> Result<Trajectory> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trajectory_csv(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinetics::NodeState;
    use proptest::prelude::*;

    fn state(t: f64, nodes: &[[f64; 5]]) -> SystemState {
        SystemState::new(t, nodes.iter().map(|&a| NodeState::from_array(a)).collect())
    }

    #[test]
    fn agg1_examples() {
        assert_eq!(
            agg1(&state(0.0, &[[1.0, 2.0, 3.0, 4.0, 5.0]])),
            [1.0, 2.0, 3.0, 4.0, 5.0]
        );
        assert_eq!(
            agg1(&state(0.0, &[[1.0, 0.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0, 0.0]])),
            [1.0, 1.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn agg2_and_proj_examples() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(agg2(&v), [1.0, 9.0, 5.0]);
        assert_eq!(proj(&v), [1.0, 2.0, 5.0]);
        assert_eq!(agg2(&[0.0; 5]), [0.0; 3]);
        assert_eq!(proj(&[0.0; 5]), [0.0; 3]);
        assert_eq!(agg2(&[0.0, 7.0, 0.0, 0.0, 3.0]), [0.0, 7.0, 3.0]);
        let single = state(0.0, &[[0.1, 0.2, 0.3, 0.4, 0.5]]);
        assert_eq!(proj(&agg1(&single)), [0.1, 0.2, 0.5]);
    }

    proptest! {
        #[test]
        fn agg1_matches_node_loop(nodes in prop::collection::vec(prop::array::uniform5(0.0..10.0f64), 1..40)) {
            let s = state(0.0, &nodes);
            let got = agg1(&s);
            for k in 0..5 {
                let mut acc = 0.0;
                for node in &nodes {
                    acc += node[k];
                }
                prop_assert_eq!(got[k], acc);
            }
        }

        #[test]
        fn aggregations_are_linear(v in prop::array::uniform5(0.0..10.0f64), a in 0.0..100.0f64) {
            let scaled = v.map(|x| a * x);
            let (l, r) = (agg2(&scaled), agg2(&v).map(|x| a * x));
            for k in 0..3 {
                prop_assert!((l[k] - r[k]).abs() <= 1e-12 * r[k].abs().max(1.0));
            }
            prop_assert_eq!(proj(&scaled), proj(&v).map(|x| a * x));
        }
    }

    fn flat_trajectory(days: usize, node: [f64; 5]) -> Trajectory {
        let mut traj = Trajectory::new();
        for d in 0..=days {
            traj.record(&state(d as f64, &[node])).unwrap();
        }
        traj
    }

    #[test]
    fn audit_constant_and_corrupted() {
        let mut traj = flat_trajectory(5, [0.0, 1.0, 0.5, 0.0, 0.25]);
        assert_eq!(conservation_audit(&traj), 0.0);
        traj.records[3].agg1[1] += 1e-6;
        assert!(conservation_audit(&traj) > 5e-7);
    }

    #[test]
    fn equilibrium_trajectory_is_converged_from_start() {
        let traj = flat_trajectory(100, [0.0, 2.0, 0.0, 0.0, 1.0]);
        let rep = attractor_report(&traj, &AttractorOptions::default()).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.time_to_mb_extinction, Some(0.0));
        assert_eq!(rep.terminal_point[0], 0.0);
    }

    #[test]
    fn zero_state_converges_to_origin() {
        let traj = flat_trajectory(100, [0.0; 5]);
        let rep = attractor_report(&traj, &AttractorOptions::default()).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.terminal_point, [0.0; 3]);
    }

    #[test]
    fn growing_biomass_is_not_converged() {
        let mut traj = Trajectory::new();
        for d in 0..=100 {
            let b = 0.1 * d as f64 / 100.0;
            traj.record(&state(d as f64, &[[b, 1.0 - b, 0.0, 0.0, 0.0]])).unwrap();
        }
        let rep = attractor_report(&traj, &AttractorOptions::default()).unwrap();
        assert!(!rep.converged);
        assert!(!rep.mb_monotone_in_window);
    }

    #[test]
    fn short_trajectory_rejected() {
        let traj = flat_trajectory(10, [0.0; 5]);
        assert!(attractor_report(&traj, &AttractorOptions::default()).is_err());
    }

    #[test]
    fn times_must_increase() {
        let mut traj = flat_trajectory(1, [1.0; 5]);
        assert!(traj.record(&state(1.0, &[[1.0; 5]])).is_err());
    }

    #[test]
    fn csv_header_only_and_round_trip() {
        let empty = Trajectory::new();
        let mut buf = Vec::new();
        write_trajectory_csv(&empty, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{CSV_HEADER}\n"));

        let mut traj = Trajectory::new();
        for d in 0..20 {
            let x = (d as f64 * 0.37).sin().abs() * 1e-5 + 1.0 / 3.0;
            traj.record(&state(d as f64 * 0.01, &[[x, 2.0 * x, 1e-300, 0.1, x / 7.0]]))
                .unwrap();
        }
        let mut buf = Vec::new();
        write_trajectory_csv(&traj, &mut buf).unwrap();
        let back = parse_trajectory_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back.records, traj.records);
    }

    #[test]
    fn csv_rejects_garbage() {
        assert!(parse_trajectory_csv("a,b\n").is_err());
        assert!(parse_trajectory_csv(&format!("{CSV_HEADER}\n1,2,3\n")).is_err());
    }
}
