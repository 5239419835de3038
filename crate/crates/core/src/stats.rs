//! Energy diagnostics and step-timing performance reports.

use std::collections::VecDeque;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::model::{AttachmentMode, SimParams, SoftBody};

/// Nominal bytes per particle record.
pub const P_BYTES: u64 = 80;
/// Nominal bytes per spring record.
pub const S_BYTES: u64 = 48;
/// Nominal bytes per face record.
pub const F_BYTES: u64 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyReport {
    pub kinetic: f64,
    pub spring_potential: f64,
    pub gravitational: f64,
    pub total: f64,
}

/// Kinetic, elastic and gravitational energy; the gravitational datum is the origin.
/// Elastic attachments count toward the spring potential.
pub fn compute_energy(body: &SoftBody, params: &SimParams) -> EnergyReport {
    let kinetic = body
        .particles
        .iter()
        .map(|p| 0.5 * p.mass * p.velocity.norm_squared())
        .sum::<f64>();
    let mut spring_potential = body
        .springs
        .iter()
        .map(|s| {
            let len = (body.particles[s.b].position - body.particles[s.a].position).norm();
            let ext = len - s.rest_length;
            0.5 * params.stiffness_scale * s.stiffness * ext * ext
        })
        .sum::<f64>();
    for a in &body.attachments {
        if let AttachmentMode::Elastic { stiffness, .. } = a.mode {
            let d = (a.anchor - body.particles[a.particle_id].position).norm();
            spring_potential += 0.5 * stiffness * d * d;
        }
    }
    let gravitational = body
        .particles
        .iter()
        .map(|p| -p.mass * params.gravity.dot(p.position))
        .sum::<f64>();
    EnergyReport {
        kinetic,
        spring_potential,
        gravitational,
        total: kinetic + spring_potential + gravitational,
    }
}

/// Analytic memory footprint from the nominal record sizes.
pub fn memory_estimate(body: &SoftBody) -> u64 {
    body.particles.len() as u64 * P_BYTES
        + body.springs.len() as u64 * S_BYTES
        + body.faces.len() as u64 * F_BYTES
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PerformanceReport {
    pub window_steps: u64,
    pub steps_per_second: f64,
    pub mean_step_time: f64,
    pub p95_step_time: f64,
    pub force_evaluations: u64,
    pub memory_estimate_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StatsError {
    #[error("no step timings in the requested window")]
    EmptyWindow,
}

/// Rolling store of per-step wall durations.
#[derive(Debug, Clone)]
pub struct PerformanceMonitor {
    samples: VecDeque<Duration>,
    capacity: usize,
}

impl Default for PerformanceMonitor {
    fn default() -> Self {
        Self::with_capacity(4096)
    }
}

impl PerformanceMonitor {
    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            samples: VecDeque::with_capacity(capacity.min(4096)),
            capacity: capacity.max(1),
        }
    }

    pub fn sample_step(&mut self, wall: Duration) {
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back(wall);
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn clear(&mut self) {
        self.samples.clear();
    }

    /// Aggregates the most recent `window` samples. `force_evaluations` is
    /// taken verbatim from the dynamics counters.
    pub fn report(
        &self,
        window: usize,
        force_evaluations: u64,
        body: &SoftBody,
    ) -> Result<PerformanceReport, StatsError> {
        let take = window.min(self.samples.len());
        if take == 0 {
            return Err(StatsError::EmptyWindow);
        }
        let mut secs: Vec<f64> = self
            .samples
            .iter()
            .skip(self.samples.len() - take)
            .map(Duration::as_secs_f64)
            .collect();
        let total: f64 = secs.iter().sum();
        let mean = total / take as f64;
        secs.sort_by(f64::total_cmp);
        // nearest-rank percentile
        let rank = ((0.95 * take as f64).ceil() as usize).clamp(1, take);
        Ok(PerformanceReport {
            window_steps: take as u64,
            steps_per_second: if total > 0.0 { take as f64 / total } else { 0.0 },
            mean_step_time: mean,
            p95_step_time: secs[rank - 1],
            force_evaluations,
            memory_estimate_bytes: memory_estimate(body),
        })
    }
}
