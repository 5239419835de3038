//! Force accumulation, fixed-step time integration and floor contact.
//!
//! Forces are accumulated in a fixed order (gravity, drag, springs by id,
//! attachments by particle id, pulls by particle id) so that a given state
//! always produces bit-identical results.

use serde::{Deserialize, Serialize};

pub use crate::model::IntegratorKind;
use crate::model::{AttachmentMode, ForceBreakdown, Particle, SimParams, SoftBody, Vec3};

/// Spring length below which the force direction is undefined.
pub const DEGENERATE_LENGTH: f64 = 1e-12;

/// Elastic pull toward a world-space target, used for pointer dragging.
/// Contributes `stiffness * (target - x)` to the attachment component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pull {
    pub particle_id: usize,
    pub target: Vec3,
    pub stiffness: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Forces {
    pub per_particle: Vec<ForceBreakdown>,
    /// Springs whose endpoints coincided during this evaluation.
    pub degenerate_springs: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegratorSwitch {
    /// Step index at which `to` became active.
    pub step: u64,
    pub from: IntegratorKind,
    pub to: IntegratorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StepCounters {
    pub steps: u64,
    pub force_evaluations: u64,
    pub diverged: bool,
    #[serde(default)]
    pub switches: Vec<IntegratorSwitch>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DynamicsError {
    #[error("simulation diverged at step {step}; reset or reload a snapshot")]
    Diverged { step: u64 },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParamError {
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("parameter `{field}` expects {expected}")]
    WrongType { field: String, expected: &'static str },
    #[error("parameter `{field}` rejected: {reason}")]
    Rejected { field: String, reason: String },
}

/// A value for [`set_param`]; JSON booleans, numbers, `[x, y, z]` arrays or strings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Bool(bool),
    Number(f64),
    Vector(Vec3),
    Text(String),
}

fn force_from(
    body: &SoftBody,
    params: &SimParams,
    pulls: &[Pull],
    x: &[Vec3],
    v: &[Vec3],
) -> Forces {
    let mut out = vec![ForceBreakdown::default(); body.particles.len()];
    let mut degenerate = Vec::new();

    for (i, p) in body.particles.iter().enumerate() {
        out[i].gravity = params.gravity * p.mass;
        out[i].drag = v[i] * -params.drag_coeff;
    }

    for s in &body.springs {
        let delta = x[s.b] - x[s.a];
        let len = delta.norm();
        if len < DEGENERATE_LENGTH {
            degenerate.push(s.id);
            continue;
        }
        let dir = delta / len;
        let magnitude = params.stiffness_scale * s.stiffness * (len - s.rest_length)
            + params.damping_scale * s.damping * (v[s.b] - v[s.a]).dot(dir);
        let f = dir * magnitude;
        out[s.a].spring += f;
        out[s.b].spring -= f;
    }

    let mut order: Vec<usize> = (0..body.attachments.len()).collect();
    order.sort_by_key(|&i| body.attachments[i].particle_id);
    for i in order {
        let a = &body.attachments[i];
        if let AttachmentMode::Elastic { stiffness, damping } = a.mode {
            let id = a.particle_id;
            let delta = a.anchor - x[id];
            let len = delta.norm();
            if len < DEGENERATE_LENGTH {
                continue;
            }
            let dir = delta / len;
            let magnitude = stiffness * len + damping * (-v[id]).dot(dir);
            out[id].attachment += dir * magnitude;
        }
    }

    let mut order: Vec<usize> = (0..pulls.len()).collect();
    order.sort_by_key(|&i| pulls[i].particle_id);
    for i in order {
        let pull = &pulls[i];
        if let Some(slot) = out.get_mut(pull.particle_id) {
            slot.attachment += (pull.target - x[pull.particle_id]) * pull.stiffness;
        }
    }

    for f in &mut out {
        f.finalize();
    }
    Forces {
        per_particle: out,
        degenerate_springs: degenerate,
    }
}

/// Per-particle force breakdown at the body's current state. The collision
/// component is always zero here; contact is resolved positionally.
pub fn accumulate_forces(body: &SoftBody, params: &SimParams, pulls: &[Pull]) -> Forces {
    let x: Vec<Vec3> = body.particles.iter().map(|p| p.position).collect();
    let v: Vec<Vec3> = body.particles.iter().map(|p| p.velocity).collect();
    force_from(body, params, pulls, &x, &v)
}

/// Projects a particle below the floor back onto it and reflects its normal
/// velocity. Returns the updated particle and the applied impulse divided by `dt`.
pub fn resolve_floor(particle: &Particle, params: &SimParams) -> (Particle, Vec3) {
    let mut p = particle.clone();
    if !params.floor_enabled || p.position.y >= params.floor_y {
        return (p, Vec3::ZERO);
    }
    p.position.y = params.floor_y;
    let before = p.velocity.y;
    if before < 0.0 {
        p.velocity.y = -params.restitution * before;
    }
    let impulse = p.mass * (p.velocity.y - before);
    (p, Vec3::new(0.0, impulse / params.dt, 0.0))
}

/// Returns `params` with one field replaced, or the reason it was refused.
pub fn set_param(
    params: &SimParams,
    field: &str,
    value: &ParamValue,
) -> Result<SimParams, ParamError> {
    fn number(field: &str, value: &ParamValue) -> Result<f64, ParamError> {
        match value {
            ParamValue::Number(v) => Ok(*v),
            _ => Err(ParamError::WrongType {
                field: field.into(),
                expected: "a number",
            }),
        }
    }

    let mut next = params.clone();
    match field {
        "dt" => next.dt = number(field, value)?,
        "drag_coeff" => next.drag_coeff = number(field, value)?,
        "stiffness_scale" => next.stiffness_scale = number(field, value)?,
        "damping_scale" => next.damping_scale = number(field, value)?,
        "floor_y" => next.floor_y = number(field, value)?,
        "restitution" => next.restitution = number(field, value)?,
        "gravity" => match value {
            ParamValue::Vector(v) => next.gravity = *v,
            _ => {
                return Err(ParamError::WrongType {
                    field: field.into(),
                    expected: "a vector [x, y, z]",
                })
            }
        },
        "floor_enabled" => match value {
            ParamValue::Bool(b) => next.floor_enabled = *b,
            _ => {
                return Err(ParamError::WrongType {
                    field: field.into(),
                    expected: "a boolean",
                })
            }
        },
        "integrator" => match value {
            ParamValue::Text(name) => {
                next.integrator = name.parse().map_err(|e: crate::model::UnknownIntegrator| {
                    ParamError::Rejected {
                        field: field.into(),
                        reason: e.to_string(),
                    }
                })?
            }
            _ => {
                return Err(ParamError::WrongType {
                    field: field.into(),
                    expected: "an integrator name",
                })
            }
        },
        other => return Err(ParamError::UnknownParameter(other.into())),
    }
    next.check().map_err(|reason| ParamError::Rejected {
        field: field.into(),
        reason,
    })?;
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepReport {
    /// Step index after the call.
    pub step_index: u64,
    pub degenerate_springs: Vec<usize>,
    /// True if this step produced a non-finite state and was discarded.
    pub diverged: bool,
}

/// A body, its parameters and run bookkeeping, owned by one stepping context.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub body: SoftBody,
    pub params: SimParams,
    pub counters: StepCounters,
    pub time: f64,
    /// Floor impulse / dt applied to each particle during the last step.
    pub collision: Vec<Vec3>,
    pub pulls: Vec<Pull>,
}

impl SimState {
    pub fn new(body: SoftBody, params: SimParams) -> Self {
        let n = body.particles.len();
        let mut body = body;
        body.snap_hard_pins();
        Self {
            body,
            params,
            counters: StepCounters::default(),
            time: 0.0,
            collision: vec![Vec3::ZERO; n],
            pulls: Vec::new(),
        }
    }

    pub fn step_index(&self) -> u64 {
        self.counters.steps
    }

    /// Swaps in a new body (e.g. after a level-of-detail change). Contact
    /// records reset; pulls on particles that no longer exist are dropped.
    pub fn replace_body(&mut self, body: SoftBody) {
        let n = body.particles.len();
        self.body = body;
        self.body.snap_hard_pins();
        self.collision = vec![Vec3::ZERO; n];
        self.pulls.retain(|p| p.particle_id < n);
    }

    /// Breakdown for the current state, including the last contact impulses.
    pub fn force_breakdown(&self) -> Forces {
        let mut forces = accumulate_forces(&self.body, &self.params, &self.pulls);
        for (f, c) in forces.per_particle.iter_mut().zip(&self.collision) {
            f.collision = *c;
            f.finalize();
        }
        forces
    }

    /// Selects the integrator used from the next step on.
    pub fn set_integrator(&mut self, next: IntegratorKind) -> IntegratorSwitch {
        let switch = IntegratorSwitch {
            step: self.counters.steps,
            from: self.params.integrator,
            to: next,
        };
        self.params.integrator = next;
        self.counters.switches.push(switch);
        switch
    }

    pub fn set_param(&mut self, field: &str, value: &ParamValue) -> Result<(), ParamError> {
        let next = set_param(&self.params, field, value)?;
        if next.integrator != self.params.integrator {
            self.set_integrator(next.integrator);
        }
        self.params = next;
        Ok(())
    }

    /// Sets or clears the pull on one particle.
    pub fn set_pull(&mut self, pull: Option<Pull>, particle_id: usize) {
        self.pulls.retain(|p| p.particle_id != particle_id);
        if let Some(p) = pull {
            self.pulls.push(p);
        }
    }

    /// Advances the state by exactly `params.dt`.
    pub fn step(&mut self) -> Result<StepReport, DynamicsError> {
        step(self)
    }

    pub fn run(&mut self, steps: u64) -> Result<(), DynamicsError> {
        for _ in 0..steps {
            if self.step()?.diverged {
                return Err(DynamicsError::Diverged {
                    step: self.counters.steps,
                });
            }
        }
        Ok(())
    }
}

struct Evaluator<'a> {
    body: &'a SoftBody,
    params: &'a SimParams,
    pulls: &'a [Pull],
    fixed: Vec<bool>,
    degenerate: Vec<usize>,
}

impl Evaluator<'_> {
    fn acceleration(&mut self, x: &[Vec3], v: &[Vec3]) -> Vec<Vec3> {
        let forces = force_from(self.body, self.params, self.pulls, x, v);
        for id in forces.degenerate_springs {
            if !self.degenerate.contains(&id) {
                self.degenerate.push(id);
            }
        }
        forces
            .per_particle
            .iter()
            .zip(&self.body.particles)
            .zip(&self.fixed)
            .map(|((f, p), &fixed)| if fixed { Vec3::ZERO } else { f.total / p.mass })
            .collect()
    }

    /// `base + rate * h` for free particles; fixed particles keep `base`.
    fn advance(&self, base: &[Vec3], rate: &[Vec3], h: f64) -> Vec<Vec3> {
        base.iter()
            .zip(rate)
            .zip(&self.fixed)
            .map(|((b, r), &fixed)| if fixed { *b } else { *b + *r * h })
            .collect()
    }
}

/// Advances `state` by one fixed step with its active integrator, resolves
/// floor contact and updates the counters. A step that yields a non-finite
/// state is discarded and latches `counters.diverged`.
pub fn step(state: &mut SimState) -> Result<StepReport, DynamicsError> {
    if state.counters.diverged {
        return Err(DynamicsError::Diverged {
            step: state.counters.steps,
        });
    }
    let dt = state.params.dt;
    let kind = state.params.integrator;
    let x0: Vec<Vec3> = state.body.particles.iter().map(|p| p.position).collect();
    let v0: Vec<Vec3> = state.body.particles.iter().map(|p| p.velocity).collect();

    let mut eval = Evaluator {
        body: &state.body,
        params: &state.params,
        pulls: &state.pulls,
        fixed: state.body.fixed_mask(),
        degenerate: Vec::new(),
    };

    let (x1, v1) = match kind {
        IntegratorKind::EulerExplicit => {
            let a = eval.acceleration(&x0, &v0);
            (eval.advance(&x0, &v0, dt), eval.advance(&v0, &a, dt))
        }
        IntegratorKind::EulerSemiImplicit => {
            let a = eval.acceleration(&x0, &v0);
            let v1 = eval.advance(&v0, &a, dt);
            (eval.advance(&x0, &v1, dt), v1)
        }
        IntegratorKind::Midpoint => {
            let a1 = eval.acceleration(&x0, &v0);
            let xm = eval.advance(&x0, &v0, 0.5 * dt);
            let vm = eval.advance(&v0, &a1, 0.5 * dt);
            let a2 = eval.acceleration(&xm, &vm);
            (eval.advance(&x0, &vm, dt), eval.advance(&v0, &a2, dt))
        }
        IntegratorKind::Rk4 => {
            let half = 0.5 * dt;
            let a1 = eval.acceleration(&x0, &v0);
            let x2 = eval.advance(&x0, &v0, half);
            let v2 = eval.advance(&v0, &a1, half);
            let a2 = eval.acceleration(&x2, &v2);
            let x3 = eval.advance(&x0, &v2, half);
            let v3 = eval.advance(&v0, &a2, half);
            let a3 = eval.acceleration(&x3, &v3);
            let x4 = eval.advance(&x0, &v3, dt);
            let v4 = eval.advance(&v0, &a3, dt);
            let a4 = eval.acceleration(&x4, &v4);
            let blend = |k1: &[Vec3], k2: &[Vec3], k3: &[Vec3], k4: &[Vec3]| -> Vec<Vec3> {
                (0..k1.len())
                    .map(|i| k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i])
                    .collect()
            };
            let dx = blend(&v0, &v2, &v3, &v4);
            let dv = blend(&a1, &a2, &a3, &a4);
            (
                eval.advance(&x0, &dx, dt / 6.0),
                eval.advance(&v0, &dv, dt / 6.0),
            )
        }
    };
    let degenerate = std::mem::take(&mut eval.degenerate);
    let fixed = std::mem::take(&mut eval.fixed);

    let finite = x1.iter().chain(&v1).all(|v| v.is_finite());
    if !finite {
        state.counters.diverged = true;
        return Ok(StepReport {
            step_index: state.counters.steps,
            degenerate_springs: degenerate,
            diverged: true,
        });
    }

    let mut collision = vec![Vec3::ZERO; x1.len()];
    for (i, p) in state.body.particles.iter_mut().enumerate() {
        if fixed[i] {
            continue;
        }
        p.position = x1[i];
        p.velocity = v1[i];
        if state.params.floor_enabled {
            let (resolved, impulse) = resolve_floor(p, &state.params);
            *p = resolved;
            collision[i] = impulse;
        }
    }
    state.body.snap_hard_pins();
    state.collision = collision;
    state.counters.steps += 1;
    state.counters.force_evaluations += kind.force_evaluations_per_step();
    state.time += dt;

    Ok(StepReport {
        step_index: state.counters.steps,
        degenerate_springs: degenerate,
        diverged: false,
    })
}
