//! Domain types for elastic bodies, simulation parameters and force accounting.
//!
//! Particle and spring ids are their indices in the owning [`SoftBody`]; this
//! keeps lookups trivial and makes serialized bodies self-describing.

use std::collections::BTreeSet;
use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

/// A 3-vector of `f64`, serialized as `[x, y, z]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(self, other: Vec3) -> Vec3 {
        Vec3::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Largest absolute component.
    pub fn max_abs(self) -> f64 {
        self.x.abs().max(self.y.abs()).max(self.z.abs())
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(v: [f64; 3]) -> Self {
        Vec3::new(v[0], v[1], v[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        v.to_array()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl SubAssign for Vec3 {
    fn sub_assign(&mut self, o: Vec3) {
        *self = *self - o;
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        v * self
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub id: usize,
    pub mass: f64,
    pub position: Vec3,
    pub velocity: Vec3,
    #[serde(default)]
    pub pinned: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpringKind {
    #[default]
    Structural,
    Radial,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spring {
    pub id: usize,
    pub a: usize,
    pub b: usize,
    pub rest_length: f64,
    pub stiffness: f64,
    pub damping: f64,
    #[serde(default)]
    pub kind: SpringKind,
}

/// Triangle, counterclockwise when viewed from outside. Serialized as `[v0, v1, v2]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[usize; 3]", into = "[usize; 3]")]
pub struct Face {
    pub v0: usize,
    pub v1: usize,
    pub v2: usize,
}

impl Face {
    pub const fn new(v0: usize, v1: usize, v2: usize) -> Self {
        Self { v0, v1, v2 }
    }

    pub fn vertices(self) -> [usize; 3] {
        [self.v0, self.v1, self.v2]
    }

    pub fn edges(self) -> [(usize, usize); 3] {
        [(self.v0, self.v1), (self.v1, self.v2), (self.v2, self.v0)]
    }
}

impl From<[usize; 3]> for Face {
    fn from(v: [usize; 3]) -> Self {
        Face::new(v[0], v[1], v[2])
    }
}

impl From<Face> for [usize; 3] {
    fn from(f: Face) -> Self {
        f.vertices()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimensionality {
    One,
    Two,
    Three,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttachmentMode {
    HardPin,
    Elastic { stiffness: f64, damping: f64 },
}

/// Tie between a particle and a world-space hardbody point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Attachment {
    pub particle_id: usize,
    pub anchor: Vec3,
    pub mode: AttachmentMode,
}

impl Attachment {
    pub fn is_hard_pin(&self) -> bool {
        matches!(self.mode, AttachmentMode::HardPin)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftBody {
    pub particles: Vec<Particle>,
    pub springs: Vec<Spring>,
    #[serde(default)]
    pub faces: Vec<Face>,
    pub dimensionality: Dimensionality,
    #[serde(default)]
    pub lod: u32,
    #[serde(default)]
    pub attachments: Vec<Attachment>,
}

impl SoftBody {
    pub fn total_mass(&self) -> f64 {
        self.particles.iter().map(|p| p.mass).sum()
    }

    /// Mass-weighted centroid.
    pub fn centroid(&self) -> Vec3 {
        let m = self.total_mass();
        self.particles
            .iter()
            .fold(Vec3::ZERO, |acc, p| acc + p.position * p.mass)
            / m
    }

    /// Mass-weighted mean velocity (momentum / mass).
    pub fn centroid_velocity(&self) -> Vec3 {
        let m = self.total_mass();
        self.particles
            .iter()
            .fold(Vec3::ZERO, |acc, p| acc + p.velocity * p.mass)
            / m
    }

    /// True when the particle is pinned or held by a hard-pin attachment.
    pub fn is_fixed(&self, id: usize) -> bool {
        self.particles.get(id).is_some_and(|p| p.pinned)
            || self
                .attachments
                .iter()
                .any(|a| a.particle_id == id && a.is_hard_pin())
    }

    /// Per-particle fixed flags, indexed by particle id.
    pub fn fixed_mask(&self) -> Vec<bool> {
        let mut mask: Vec<bool> = self.particles.iter().map(|p| p.pinned).collect();
        for a in &self.attachments {
            if a.is_hard_pin() {
                if let Some(slot) = mask.get_mut(a.particle_id) {
                    *slot = true;
                }
            }
        }
        mask
    }

    /// Moves hard-pinned particles onto their anchors and zeroes the velocity
    /// of every fixed particle.
    pub fn snap_hard_pins(&mut self) {
        for p in self.particles.iter_mut().filter(|p| p.pinned) {
            p.velocity = Vec3::ZERO;
        }
        for a in &self.attachments {
            if a.is_hard_pin() {
                if let Some(p) = self.particles.get_mut(a.particle_id) {
                    p.position = a.anchor;
                    p.velocity = Vec3::ZERO;
                }
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.particles
            .iter()
            .all(|p| p.position.is_finite() && p.velocity.is_finite())
    }
}

/// Integration scheme. Each kind has a fixed force-evaluation cost per step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegratorKind {
    EulerExplicit,
    EulerSemiImplicit,
    Midpoint,
    Rk4,
}

impl IntegratorKind {
    pub const ALL: [IntegratorKind; 4] = [
        IntegratorKind::EulerExplicit,
        IntegratorKind::EulerSemiImplicit,
        IntegratorKind::Midpoint,
        IntegratorKind::Rk4,
    ];

    pub fn force_evaluations_per_step(self) -> u64 {
        match self {
            IntegratorKind::EulerExplicit | IntegratorKind::EulerSemiImplicit => 1,
            IntegratorKind::Midpoint => 2,
            IntegratorKind::Rk4 => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            IntegratorKind::EulerExplicit => "euler_explicit",
            IntegratorKind::EulerSemiImplicit => "euler_semi_implicit",
            IntegratorKind::Midpoint => "midpoint",
            IntegratorKind::Rk4 => "rk4",
        }
    }
}

impl fmt::Display for IntegratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown integrator `{0}` (expected euler_explicit, euler_semi_implicit, midpoint or rk4)")]
pub struct UnknownIntegrator(pub String);

impl std::str::FromStr for IntegratorKind {
    type Err = UnknownIntegrator;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        IntegratorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| UnknownIntegrator(s.to_string()))
    }
}

/// Everything the user steers at runtime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    pub dt: f64,
    pub gravity: Vec3,
    pub drag_coeff: f64,
    pub stiffness_scale: f64,
    pub damping_scale: f64,
    pub floor_enabled: bool,
    pub floor_y: f64,
    pub restitution: f64,
    pub integrator: IntegratorKind,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            gravity: Vec3::new(0.0, -9.81, 0.0),
            drag_coeff: 0.0,
            stiffness_scale: 1.0,
            damping_scale: 1.0,
            floor_enabled: false,
            floor_y: 0.0,
            restitution: 0.5,
            integrator: IntegratorKind::EulerSemiImplicit,
        }
    }
}

impl SimParams {
    /// Parameters with gravity and drag switched off.
    pub fn zero_gravity() -> Self {
        Self {
            gravity: Vec3::ZERO,
            ..Self::default()
        }
    }

    /// Returns the first violated invariant, if any.
    pub fn check(&self) -> Result<(), String> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(format!("dt must be finite and > 0, got {}", self.dt));
        }
        if !self.gravity.is_finite() {
            return Err("gravity must be finite".into());
        }
        if !(self.drag_coeff.is_finite() && self.drag_coeff >= 0.0) {
            return Err(format!("drag_coeff must be >= 0, got {}", self.drag_coeff));
        }
        if !(self.stiffness_scale.is_finite() && self.stiffness_scale > 0.0) {
            return Err(format!(
                "stiffness_scale must be > 0, got {}",
                self.stiffness_scale
            ));
        }
        if !(self.damping_scale.is_finite() && self.damping_scale > 0.0) {
            return Err(format!(
                "damping_scale must be > 0, got {}",
                self.damping_scale
            ));
        }
        if !self.floor_y.is_finite() {
            return Err("floor_y must be finite".into());
        }
        if !(0.0..=1.0).contains(&self.restitution) {
            return Err(format!(
                "restitution must be in [0, 1], got {}",
                self.restitution
            ));
        }
        Ok(())
    }
}

/// Per-source decomposition of the net force on one particle.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ForceBreakdown {
    pub spring: Vec3,
    pub gravity: Vec3,
    pub drag: Vec3,
    pub collision: Vec3,
    pub attachment: Vec3,
    pub total: Vec3,
}

impl ForceBreakdown {
    pub fn sum_of_parts(&self) -> Vec3 {
        self.spring + self.gravity + self.drag + self.collision + self.attachment
    }

    /// Recomputes `total` from the parts.
    pub fn finalize(&mut self) {
        self.total = self.sum_of_parts();
    }
}

/// What a validation finding refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "id")]
pub enum Subject {
    Body,
    Particle(usize),
    Spring(usize),
    Face(usize),
    Attachment(usize),
}

impl fmt::Display for Subject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Subject::Body => write!(f, "body"),
            Subject::Particle(i) => write!(f, "particle {i}"),
            Subject::Spring(i) => write!(f, "spring {i}"),
            Subject::Face(i) => write!(f, "face {i}"),
            Subject::Attachment(i) => write!(f, "attachment {i}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub subject: Subject,
    pub reason: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.subject, self.reason)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, subject: Subject, reason: impl Into<String>) {
        self.violations.push(Violation {
            subject,
            reason: reason.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Collects every invariant violation of `body`. An empty report means valid.
pub fn validate(body: &SoftBody) -> ValidationReport {
    let mut report = ValidationReport::default();
    let n = body.particles.len();

    if n == 0 {
        report.push(Subject::Body, "body has no particles");
    }
    for (i, p) in body.particles.iter().enumerate() {
        if p.id != i {
            report.push(
                Subject::Particle(i),
                format!("particle id {} does not match its index {i}", p.id),
            );
        }
        if !(p.mass > 0.0 && p.mass.is_finite()) {
            report.push(Subject::Particle(i), "non-positive mass");
        }
        if !p.position.is_finite() || !p.velocity.is_finite() {
            report.push(Subject::Particle(i), "non-finite state");
        }
    }

    let mut pairs = BTreeSet::new();
    for (i, s) in body.springs.iter().enumerate() {
        let subject = Subject::Spring(i);
        if s.id != i {
            report.push(
                subject,
                format!("spring id {} does not match its index {i}", s.id),
            );
        }
        if s.a == s.b {
            report.push(subject, "degenerate spring");
        }
        for end in [s.a, s.b] {
            if end >= n {
                report.push(subject, format!("dangling spring endpoint {end}"));
            }
        }
        if !(s.rest_length > 0.0 && s.rest_length.is_finite()) {
            report.push(subject, "non-positive rest length");
        }
        if !(s.stiffness >= 0.0 && s.stiffness.is_finite()) {
            report.push(subject, "negative stiffness");
        }
        if !(s.damping >= 0.0 && s.damping.is_finite()) {
            report.push(subject, "negative damping");
        }
        if s.a != s.b && !pairs.insert((s.a.min(s.b), s.a.max(s.b))) {
            report.push(subject, format!("duplicate spring ({}, {})", s.a, s.b));
        }
    }

    let mut faces_ok = true;
    for (i, f) in body.faces.iter().enumerate() {
        let [a, b, c] = f.vertices();
        if a == b || b == c || a == c {
            report.push(Subject::Face(i), "face vertices not distinct");
            faces_ok = false;
        }
        if f.vertices().iter().any(|&v| v >= n) {
            report.push(Subject::Face(i), "dangling face vertex");
            faces_ok = false;
        }
    }

    if body.dimensionality == Dimensionality::Three && faces_ok {
        let vertices: BTreeSet<usize> = body.faces.iter().flat_map(|f| f.vertices()).collect();
        let edges: BTreeSet<(usize, usize)> = body
            .faces
            .iter()
            .flat_map(|f| f.edges())
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        let chi = vertices.len() as i64 - edges.len() as i64 + body.faces.len() as i64;
        if chi != 2 {
            report.push(
                Subject::Body,
                format!(
                    "surface is not closed: V - E + F = {chi} (V={}, E={}, F={})",
                    vertices.len(),
                    edges.len(),
                    body.faces.len()
                ),
            );
        }
    }

    for (i, a) in body.attachments.iter().enumerate() {
        if a.particle_id >= n {
            report.push(
                Subject::Attachment(i),
                format!("attachment to missing particle {}", a.particle_id),
            );
        }
        if !a.anchor.is_finite() {
            report.push(Subject::Attachment(i), "non-finite anchor");
        }
        if let AttachmentMode::Elastic { stiffness, damping } = a.mode {
            if !(stiffness > 0.0 && stiffness.is_finite()) {
                report.push(Subject::Attachment(i), "elastic attachment stiffness must be > 0");
            }
            if !(damping >= 0.0 && damping.is_finite()) {
                report.push(Subject::Attachment(i), "negative attachment damping");
            }
        }
    }

    report
}
