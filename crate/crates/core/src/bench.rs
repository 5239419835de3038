//! Comparative integrator benchmarks: trajectory accuracy against a
//! fine-step reference, cost in force evaluations, energy drift and stability.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::SimState;
use crate::model::{IntegratorKind, Particle, SimParams, SoftBody, Spring, SpringKind, Vec3};
use crate::model::Dimensionality;
use crate::stats::{compute_energy, memory_estimate};
use crate::topology::Scene;

/// Energy growth factor beyond which a run counts as unstable.
pub const DRIFT_LIMIT: f64 = 10.0;
/// Reference runs use rk4 with this fraction of the smallest benchmarked dt.
pub const ORACLE_REFINEMENT: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub scenario: String,
    pub integrator: IntegratorKind,
    pub dt: f64,
    pub horizon: f64,
    pub steps: u64,
    /// Max particle position error against the reference at the row's end time.
    pub global_error: f64,
    pub wall_time: f64,
    pub force_evaluations: u64,
    pub energy_drift: f64,
    pub stable: bool,
    pub memory_estimate_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BenchError {
    #[error("invalid benchmark argument: {0}")]
    InvalidArgument(String),
    #[error("reference trajectory diverged for scenario `{scenario}`")]
    OracleFailure { scenario: String },
    #[error("need at least 3 stable rows with distinct dt, got {usable}")]
    InsufficientData { usable: usize },
    #[error("dt range [{low}, {high}] does not bracket the stability limit ({detail})")]
    Bracket { low: f64, high: f64, detail: String },
}

/// Steps of size `dt` that fit in `horizon`, rounding down. A relative slack
/// of 1e-9 keeps e.g. `2.0 / 0.01` from truncating to 199.
pub fn step_count(horizon: f64, dt: f64) -> u64 {
    (horizon / dt * (1.0 + 1e-9)).floor() as u64
}

/// Outcome of one fixed-step run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub state: SimState,
    pub diverged: bool,
    pub wall_time: f64,
    pub energy_start: f64,
    pub energy_end: f64,
}

impl RunOutcome {
    /// |E_end - E_0| / |E_0|, or the absolute change when E_0 is zero.
    pub fn energy_drift(&self) -> f64 {
        let change = (self.energy_end - self.energy_start).abs();
        if self.energy_start == 0.0 {
            change
        } else {
            change / self.energy_start.abs()
        }
    }

    pub fn stable(&self) -> bool {
        !self.diverged && self.energy_drift() <= DRIFT_LIMIT
    }
}

/// Runs `scene` for `steps` steps of `dt` with `kind`, stopping early on divergence.
pub fn simulate(scene: &Scene, kind: IntegratorKind, dt: f64, steps: u64) -> RunOutcome {
    let params = SimParams {
        dt,
        integrator: kind,
        ..scene.params.clone()
    };
    let mut state = SimState::new(scene.body.clone(), params);
    let energy_start = compute_energy(&state.body, &state.params).total;
    let started = Instant::now();
    let mut diverged = false;
    for _ in 0..steps {
        match state.step() {
            Ok(report) if !report.diverged => {}
            _ => {
                diverged = true;
                break;
            }
        }
    }
    let wall_time = started.elapsed().as_secs_f64();
    let energy_end = compute_energy(&state.body, &state.params).total;
    RunOutcome {
        state,
        diverged,
        wall_time,
        energy_start,
        energy_end,
    }
}

fn max_position_error(a: &SoftBody, b: &SoftBody) -> f64 {
    a.particles
        .iter()
        .zip(&b.particles)
        .map(|(p, q)| (p.position - q.position).norm())
        .fold(0.0, f64::max)
}

fn check_inputs(integrators: &[IntegratorKind], dts: &[f64], horizon: f64) -> Result<(), BenchError> {
    if integrators.is_empty() {
        return Err(BenchError::InvalidArgument("no integrators given".into()));
    }
    if dts.is_empty() {
        return Err(BenchError::InvalidArgument("no dt values given".into()));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(BenchError::InvalidArgument(format!(
            "horizon must be > 0, got {horizon}"
        )));
    }
    for &dt in dts {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(BenchError::InvalidArgument(format!("dt must be > 0, got {dt}")));
        }
        if step_count(horizon, dt) == 0 {
            return Err(BenchError::InvalidArgument(format!(
                "dt {dt} exceeds the horizon {horizon}"
            )));
        }
    }
    Ok(())
}

/// One row per (integrator, dt), sorted by integrator then dt. Each row is
/// compared against rk4 at `min(dts) / 100`, refined so the reference lands
/// exactly on the row's end time (`steps * dt`).
pub fn run_comparison(
    scene: &Scene,
    integrators: &[IntegratorKind],
    dts: &[f64],
    horizon: f64,
) -> Result<Vec<BenchRow>, BenchError> {
    check_inputs(integrators, dts, horizon)?;
    let min_dt = dts.iter().copied().fold(f64::INFINITY, f64::min);
    let oracle_dt = min_dt / ORACLE_REFINEMENT;

    let mut end_times: BTreeMap<u64, f64> = BTreeMap::new();
    for &dt in dts {
        let t = step_count(horizon, dt) as f64 * dt;
        end_times.insert(t.to_bits(), t);
    }
    let oracles: BTreeMap<u64, SoftBody> = end_times
        .into_par_iter()
        .map(|(bits, t)| {
            let steps = (t / oracle_dt - 1e-9).ceil().max(1.0) as u64;
            let run = simulate(scene, IntegratorKind::Rk4, t / steps as f64, steps);
            if run.diverged {
                Err(BenchError::OracleFailure {
                    scenario: scene.name.clone(),
                })
            } else {
                Ok((bits, run.state.body))
            }
        })
        .collect::<Result<_, _>>()?;

    let mut jobs: Vec<(IntegratorKind, f64)> = integrators
        .iter()
        .flat_map(|&k| dts.iter().map(move |&dt| (k, dt)))
        .collect();
    jobs.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    jobs.dedup();

    if let Some(&(kind, dt)) = jobs.first() {
        // warmup
        let _ = simulate(scene, kind, dt, step_count(horizon, dt).min(1000));
    }

    let memory = memory_estimate(&scene.body);
    let rows = jobs
        .into_par_iter()
        .map(|(kind, dt)| {
            let steps = step_count(horizon, dt);
            let run = simulate(scene, kind, dt, steps);
            let end = (steps as f64 * dt).to_bits();
            let global_error = if run.diverged {
                f64::INFINITY
            } else {
                max_position_error(&run.state.body, &oracles[&end])
            };
            BenchRow {
                scenario: scene.name.clone(),
                integrator: kind,
                dt,
                horizon,
                steps,
                global_error,
                wall_time: run.wall_time,
                force_evaluations: run.state.counters.force_evaluations,
                energy_drift: run.energy_drift(),
                stable: run.stable(),
                memory_estimate_bytes: memory,
            }
        })
        .collect();
    Ok(rows)
}

/// Least-squares slope of ln(global_error) against ln(dt).
pub fn convergence_order(rows: &[BenchRow]) -> Result<f64, BenchError> {
    let mut points: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
    for r in rows {
        if r.stable && r.global_error.is_finite() && r.global_error > 0.0 {
            points.insert(r.dt.to_bits(), (r.dt.ln(), r.global_error.ln()));
        }
    }
    if points.len() < 3 {
        return Err(BenchError::InsufficientData {
            usable: points.len(),
        });
    }
    Ok(least_squares_slope(points.values().copied()))
}

pub fn least_squares_slope(points: impl IntoIterator<Item = (f64, f64)>) -> f64 {
    let pts: Vec<(f64, f64)> = points.into_iter().collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

pub fn is_stable(scene: &Scene, kind: IntegratorKind, dt: f64, horizon: f64) -> bool {
    simulate(scene, kind, dt, step_count(horizon, dt).max(1)).stable()
}

/// Largest stable dt in `[low, high]` by bisection on the stable flag, to
/// two significant digits. `low` must be stable and `high` unstable.
pub fn stability_scan(
    kind: IntegratorKind,
    scene: &Scene,
    low: f64,
    high: f64,
    horizon: f64,
) -> Result<f64, BenchError> {
    if !(low > 0.0 && high > low) {
        return Err(BenchError::InvalidArgument(format!(
            "need 0 < low < high, got [{low}, {high}]"
        )));
    }
    let bracket = |detail: &str| BenchError::Bracket {
        low,
        high,
        detail: detail.to_string(),
    };
    match (is_stable(scene, kind, low, horizon), is_stable(scene, kind, high, horizon)) {
        (true, false) => {}
        (true, true) => return Err(bracket("both ends stable")),
        (false, false) => return Err(bracket("both ends unstable")),
        (false, true) => return Err(bracket("low end unstable, high end stable")),
    }
    let (mut lo, mut hi) = (low, high);
    while (hi - lo) > 0.005 * lo {
        let mid = 0.5 * (lo + hi);
        if is_stable(scene, kind, mid, horizon) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

pub const REPORT_COLUMNS: [&str; 10] = [
    "scenario",
    "integrator",
    "dt",
    "horizon",
    "global_error",
    "wall_time",
    "force_evaluations",
    "energy_drift",
    "stable",
    "memory_estimate_bytes",
];

pub fn write_report<W: io::Write>(rows: &[BenchRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.scenario.clone(),
            r.integrator.to_string(),
            format!("{:e}", r.dt),
            r.horizon.to_string(),
            format!("{:e}", r.global_error),
            format!("{:e}", r.wall_time),
            r.force_evaluations.to_string(),
            format!("{:e}", r.energy_drift),
            r.stable.to_string(),
            r.memory_estimate_bytes.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_report_file(rows: &[BenchRow], path: &Path) -> csv::Result<()> {
    let file = std::fs::File::create(path)?;
    write_report(rows, file)
}

/// Ready-made scenarios with known analytic behavior.
pub mod scenarios {
    use super::*;

    fn free(id: usize, mass: f64, x: f64) -> Particle {
        Particle {
            id,
            mass,
            position: Vec3::new(x, 0.0, 0.0),
            velocity: Vec3::ZERO,
            pinned: false,
        }
    }

    fn quiet_params() -> SimParams {
        SimParams {
            gravity: Vec3::ZERO,
            drag_coeff: 0.0,
            ..SimParams::default()
        }
    }

    /// Two equal masses joined by an undamped spring, each displaced outward
    /// by `amplitude` and released. Each particle then oscillates about its
    /// rest position as `amplitude * cos(omega t)` with `omega = sqrt(2k/m)`.
    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct Oscillator {
        pub mass: f64,
        pub stiffness: f64,
        pub rest_length: f64,
        pub amplitude: f64,
    }

    impl Default for Oscillator {
        fn default() -> Self {
            // omega = 5 rad/s
            Self {
                mass: 1.0,
                stiffness: 12.5,
                rest_length: 1.0,
                amplitude: 0.1,
            }
        }
    }

    impl Oscillator {
        pub fn omega(&self) -> f64 {
            (2.0 * self.stiffness / self.mass).sqrt()
        }

        pub fn scene(&self) -> Scene {
            let half = 0.5 * self.rest_length + self.amplitude;
            Scene {
                name: "oscillator".into(),
                body: SoftBody {
                    particles: vec![free(0, self.mass, -half), free(1, self.mass, half)],
                    springs: vec![Spring {
                        id: 0,
                        a: 0,
                        b: 1,
                        rest_length: self.rest_length,
                        stiffness: self.stiffness,
                        damping: 0.0,
                        kind: SpringKind::Structural,
                    }],
                    faces: vec![],
                    dimensionality: Dimensionality::One,
                    lod: 0,
                    attachments: vec![],
                },
                params: quiet_params(),
            }
        }

        /// Exact x coordinates of both particles at time `t`.
        pub fn exact_positions(&self, t: f64) -> [f64; 2] {
            let x = 0.5 * self.rest_length + self.amplitude * (self.omega() * t).cos();
            [-x, x]
        }
    }

    /// One free particle on a spring to a pinned particle, `omega = sqrt(k/m)`,
    /// with linear drag `zeta * 2 * m * omega`. `zeta = 0` is undamped and
    /// `zeta = 1` critically damped.
    pub fn tethered_spring(omega: f64, zeta: f64, amplitude: f64) -> Scene {
        let mass = 1.0;
        let mut anchor = free(0, mass, 0.0);
        anchor.pinned = true;
        Scene {
            name: format!("tethered_w{omega}_z{zeta}"),
            body: SoftBody {
                particles: vec![anchor, free(1, mass, 1.0 + amplitude)],
                springs: vec![Spring {
                    id: 0,
                    a: 0,
                    b: 1,
                    rest_length: 1.0,
                    stiffness: mass * omega * omega,
                    damping: 0.0,
                    kind: SpringKind::Structural,
                }],
                faces: vec![],
                dimensionality: Dimensionality::One,
                lod: 0,
                attachments: vec![],
            },
            params: SimParams {
                drag_coeff: zeta * 2.0 * mass * omega,
                ..quiet_params()
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::scenarios::{tethered_spring, Oscillator};
    use super::*;

    #[test]
    fn step_count_rounds_down_with_slack() {
        assert_eq!(step_count(2.0, 0.01), 200);
        assert_eq!(step_count(2.0, 3e-3), 666);
        assert_eq!(step_count(2.0, 1e-3), 2000);
        assert_eq!(step_count(1.0, 3.0), 0);
    }

    #[test]
    fn rk4_at_reference_resolution_matches_reference() {
        let scene = Oscillator::default().scene();
        let rows = run_comparison(&scene, &[IntegratorKind::Rk4], &[1e-3], 0.5).unwrap();
        // the row runs at 1e-3, the reference at 1e-5: both are far below 1e-9
        assert!(rows[0].global_error < 1e-9, "{}", rows[0].global_error);
    }

    #[test]
    fn cost_rows_are_n_and_4n() {
        let scene = Oscillator::default().scene();
        let rows = run_comparison(
            &scene,
            &[IntegratorKind::Rk4, IntegratorKind::EulerExplicit],
            &[1e-2],
            1.0,
        )
        .unwrap();
        assert_eq!(rows[0].integrator, IntegratorKind::EulerExplicit);
        assert_eq!(rows[0].force_evaluations, 100);
        assert_eq!(rows[1].force_evaluations, 400);
    }

    #[test]
    fn stiff_explicit_euler_is_unstable() {
        // k/m = 1e6
        let osc = Oscillator {
            stiffness: 5e5,
            ..Oscillator::default()
        };
        let rows = run_comparison(&osc.scene(), &[IntegratorKind::EulerExplicit], &[1e-2], 1.0).unwrap();
        assert!(!rows[0].stable);
    }

    #[test]
    fn orders_from_reference_comparison() {
        let scene = Oscillator::default().scene();
        let dts = [1e-2, 3e-3, 1e-3];
        let rows = run_comparison(&scene, &IntegratorKind::ALL, &dts, 2.0).unwrap();
        let order = |k: IntegratorKind| {
            let subset: Vec<BenchRow> = rows.iter().filter(|r| r.integrator == k).cloned().collect();
            convergence_order(&subset).unwrap()
        };
        assert!((order(IntegratorKind::EulerExplicit) - 1.0).abs() <= 0.3);
        assert!((order(IntegratorKind::EulerSemiImplicit) - 1.0).abs() <= 0.3);
        assert!((order(IntegratorKind::Midpoint) - 2.0).abs() <= 0.3);
        assert!((order(IntegratorKind::Rk4) - 4.0).abs() <= 0.5);
    }

    #[test]
    fn error_ordering_at_common_dt() {
        let scene = Oscillator::default().scene();
        for dt in [1e-2, 3e-3] {
            let rows = run_comparison(
                &scene,
                &[IntegratorKind::EulerExplicit, IntegratorKind::Midpoint, IntegratorKind::Rk4],
                &[dt],
                2.0,
            )
            .unwrap();
            assert!(rows[2].global_error <= rows[1].global_error);
            assert!(rows[1].global_error <= rows[0].global_error);
        }
    }

    #[test]
    fn convergence_needs_three_points() {
        let scene = Oscillator::default().scene();
        let rows = run_comparison(&scene, &[IntegratorKind::Midpoint], &[1e-2, 1e-3], 1.0).unwrap();
        assert_eq!(
            convergence_order(&rows),
            Err(BenchError::InsufficientData { usable: 2 })
        );
    }

    #[test]
    fn both_stable_bracket_is_rejected() {
        let scene = tethered_spring(100.0, 1.0, 0.05);
        assert!(matches!(
            stability_scan(IntegratorKind::EulerExplicit, &scene, 1e-5, 2e-5, 1.0),
            Err(BenchError::Bracket { .. })
        ));
    }

    #[test]
    fn undamped_rk4_limit_is_near_imaginary_axis_bound() {
        // rk4 stability on the imaginary axis ends at omega * dt = 2 * sqrt(2)
        let scene = tethered_spring(100.0, 0.0, 0.05);
        let limit = stability_scan(IntegratorKind::Rk4, &scene, 0.01, 0.05, 1.0).unwrap();
        let bound = 2.0 * 2f64.sqrt() / 100.0;
        assert!(limit >= bound * 0.98 && limit <= bound * 1.25, "{limit}");
    }

    #[test]
    fn undamped_explicit_euler_has_no_two_over_omega_limit() {
        // on an undamped spring explicit Euler gains energy at every dt, so
        // the detected limit depends on the horizon and sits far below 2/omega
        let scene = tethered_spring(100.0, 0.0, 0.05);
        let limit = stability_scan(IntegratorKind::EulerExplicit, &scene, 1e-5, 0.05, 1.0).unwrap();
        assert!(limit < 0.002, "{limit}");
    }

    #[test]
    fn report_has_header_and_one_line_per_row() {
        let scene = Oscillator::default().scene();
        let rows = run_comparison(&scene, &IntegratorKind::ALL, &[1e-2, 5e-3], 0.2).unwrap();
        let mut buf = Vec::new();
        write_report(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 8);
        assert_eq!(text.lines().next().unwrap(), REPORT_COLUMNS.join(","));
    }
}
