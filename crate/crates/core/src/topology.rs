//! Body builders (chain, ring, subdivided octahedron), runtime level-of-detail
//! changes and scene-file import.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::model::{
    validate, Attachment, Dimensionality, Face, Particle, SimParams, SoftBody, Spring, SpringKind,
    ValidationReport, Vec3,
};

/// Deepest octahedron subdivision accepted by the builders.
pub const MAX_LOD: u32 = 5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TopologyError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unsupported operation: {0}")]
    Unsupported(String),
}

fn particle(id: usize, mass: f64, position: Vec3) -> Particle {
    Particle {
        id,
        mass,
        position,
        velocity: Vec3::ZERO,
        pinned: false,
    }
}

fn check_positive(name: &str, v: f64) -> Result<(), TopologyError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(TopologyError::InvalidArgument(format!(
            "{name} must be > 0, got {v}"
        )))
    }
}

fn check_non_negative(name: &str, v: f64) -> Result<(), TopologyError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(TopologyError::InvalidArgument(format!(
            "{name} must be >= 0, got {v}"
        )))
    }
}

/// `n` particles along +x joined by `n - 1` structural springs at rest.
pub fn build_chain(
    n: usize,
    spacing: f64,
    mass: f64,
    stiffness: f64,
    damping: f64,
) -> Result<SoftBody, TopologyError> {
    if n < 2 {
        return Err(TopologyError::InvalidArgument(format!(
            "a chain needs at least 2 particles, got {n}"
        )));
    }
    check_positive("spacing", spacing)?;
    check_positive("mass", mass)?;
    check_non_negative("stiffness", stiffness)?;
    check_non_negative("damping", damping)?;

    let particles = (0..n)
        .map(|i| particle(i, mass, Vec3::new(i as f64 * spacing, 0.0, 0.0)))
        .collect();
    let springs = (0..n - 1)
        .map(|i| Spring {
            id: i,
            a: i,
            b: i + 1,
            rest_length: spacing,
            stiffness,
            damping,
            kind: SpringKind::Structural,
        })
        .collect();
    Ok(SoftBody {
        particles,
        springs,
        faces: Vec::new(),
        dimensionality: Dimensionality::One,
        lod: 0,
        attachments: Vec::new(),
    })
}

/// `n` particles on a circle in the xy-plane, optionally with a hub particle at
/// the center tied to every rim particle by a radial spring.
pub fn build_ring(
    n: usize,
    radius: f64,
    with_hub: bool,
    mass: f64,
    stiffness: f64,
    damping: f64,
) -> Result<SoftBody, TopologyError> {
    if n < 3 {
        return Err(TopologyError::InvalidArgument(format!(
            "a ring needs at least 3 particles, got {n}"
        )));
    }
    check_positive("radius", radius)?;
    check_positive("mass", mass)?;
    check_non_negative("stiffness", stiffness)?;
    check_non_negative("damping", damping)?;

    let mut particles: Vec<Particle> = (0..n)
        .map(|i| {
            let theta = std::f64::consts::TAU * i as f64 / n as f64;
            particle(i, mass, Vec3::new(radius * theta.cos(), radius * theta.sin(), 0.0))
        })
        .collect();
    let mut springs: Vec<Spring> = (0..n)
        .map(|i| {
            let j = (i + 1) % n;
            Spring {
                id: i,
                a: i,
                b: j,
                rest_length: (particles[j].position - particles[i].position).norm(),
                stiffness,
                damping,
                kind: SpringKind::Structural,
            }
        })
        .collect();
    if with_hub {
        let hub = n;
        particles.push(particle(hub, mass, Vec3::ZERO));
        for i in 0..n {
            springs.push(Spring {
                id: springs.len(),
                a: hub,
                b: i,
                rest_length: particles[i].position.norm(),
                stiffness,
                damping,
                kind: SpringKind::Radial,
            });
        }
    }
    Ok(SoftBody {
        particles,
        springs,
        faces: Vec::new(),
        dimensionality: Dimensionality::Two,
        lod: 0,
        attachments: Vec::new(),
    })
}

/// Unit-sphere vertices and faces of the octahedron after `lod` rounds of
/// midpoint subdivision. Vertices of level `L - 1` are a prefix of level `L`.
pub fn octahedron_mesh(lod: u32) -> (Vec<Vec3>, Vec<Face>) {
    let mut vertices = vec![
        Vec3::new(1.0, 0.0, 0.0),
        Vec3::new(-1.0, 0.0, 0.0),
        Vec3::new(0.0, 1.0, 0.0),
        Vec3::new(0.0, -1.0, 0.0),
        Vec3::new(0.0, 0.0, 1.0),
        Vec3::new(0.0, 0.0, -1.0),
    ];
    let mut faces = Vec::with_capacity(8);
    for (x, sx) in [(0usize, 1.0f64), (1, -1.0)] {
        for (y, sy) in [(2usize, 1.0f64), (3, -1.0)] {
            for (z, sz) in [(4usize, 1.0f64), (5, -1.0)] {
                if sx * sy * sz > 0.0 {
                    faces.push(Face::new(x, y, z));
                } else {
                    faces.push(Face::new(x, z, y));
                }
            }
        }
    }

    for _ in 0..lod {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Vec3>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                let m = (vertices[a] + vertices[b]) * 0.5;
                vertices.push(m / m.norm());
                vertices.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let ab = midpoint(f.v0, f.v1, &mut vertices);
            let bc = midpoint(f.v1, f.v2, &mut vertices);
            let ca = midpoint(f.v2, f.v0, &mut vertices);
            next.push(Face::new(f.v0, ab, ca));
            next.push(Face::new(f.v1, bc, ab));
            next.push(Face::new(f.v2, ca, bc));
            next.push(Face::new(ab, bc, ca));
        }
        faces = next;
    }
    (vertices, faces)
}

/// Undirected edges of a face list in first-seen order.
pub fn face_edges(faces: &[Face]) -> Vec<(usize, usize)> {
    let mut seen = std::collections::HashSet::new();
    let mut edges = Vec::new();
    for f in faces {
        for (a, b) in f.edges() {
            if seen.insert((a.min(b), a.max(b))) {
                edges.push((a.min(b), a.max(b)));
            }
        }
    }
    edges
}

/// Octahedron-based sphere body at a given level of detail.
///
/// `mass_total` is split evenly over all particles. With `with_hub` an extra
/// particle at the center carries internal springs to every surface vertex.
pub fn build_octahedron(
    lod: u32,
    radius: f64,
    mass_total: f64,
    stiffness: f64,
    damping: f64,
) -> Result<SoftBody, TopologyError> {
    build_octahedron_with(lod, radius, mass_total, stiffness, damping, false)
}

pub fn build_octahedron_with(
    lod: u32,
    radius: f64,
    mass_total: f64,
    stiffness: f64,
    damping: f64,
    with_hub: bool,
) -> Result<SoftBody, TopologyError> {
    if lod > MAX_LOD {
        return Err(TopologyError::InvalidArgument(format!(
            "lod must be in [0, {MAX_LOD}], got {lod}"
        )));
    }
    check_positive("radius", radius)?;
    check_positive("mass_total", mass_total)?;
    check_non_negative("stiffness", stiffness)?;
    check_non_negative("damping", damping)?;

    let (unit, faces) = octahedron_mesh(lod);
    let count = unit.len() + usize::from(with_hub);
    let mass = mass_total / count as f64;
    let mut particles: Vec<Particle> = unit
        .iter()
        .enumerate()
        .map(|(i, &u)| particle(i, mass, u * radius))
        .collect();
    let mut springs: Vec<Spring> = face_edges(&faces)
        .into_iter()
        .enumerate()
        .map(|(id, (a, b))| Spring {
            id,
            a,
            b,
            rest_length: (particles[b].position - particles[a].position).norm(),
            stiffness,
            damping,
            kind: SpringKind::Structural,
        })
        .collect();
    if with_hub {
        let hub = particles.len();
        particles.push(particle(hub, mass, Vec3::ZERO));
        for v in 0..hub {
            springs.push(Spring {
                id: springs.len(),
                a: hub,
                b: v,
                rest_length: particles[v].position.norm(),
                stiffness,
                damping,
                kind: SpringKind::Internal,
            });
        }
    }
    Ok(SoftBody {
        particles,
        springs,
        faces,
        dimensionality: Dimensionality::Three,
        lod,
        attachments: Vec::new(),
    })
}

/// Rebuilds a three-dimensional body at `new_lod`.
///
/// The new body keeps the old centroid, mean surface radius, total mass and
/// spring constants; every particle moves with the old centroid velocity.
/// Deformation detail is discarded. Attachments and pinned flags on surface
/// vertices that still exist carry over (low-lod vertex ids are a prefix of
/// high-lod ids); the hub keeps its role under its new id.
pub fn set_lod(body: &SoftBody, new_lod: u32) -> Result<SoftBody, TopologyError> {
    if body.dimensionality != Dimensionality::Three {
        return Err(TopologyError::Unsupported(format!(
            "level of detail applies to three-dimensional bodies, this one is {:?}",
            body.dimensionality
        )));
    }
    if new_lod > MAX_LOD {
        return Err(TopologyError::InvalidArgument(format!(
            "lod must be in [0, {MAX_LOD}], got {new_lod}"
        )));
    }

    let structural = body
        .springs
        .iter()
        .find(|s| s.kind == SpringKind::Structural)
        .ok_or_else(|| TopologyError::Unsupported("body has no structural springs".into()))?;
    let internal = body.springs.iter().find(|s| s.kind == SpringKind::Internal);
    let old_hub = internal.map(|s| s.a);

    let centroid = body.centroid();
    let velocity = body.centroid_velocity();
    let surface: Vec<&Particle> = body
        .particles
        .iter()
        .filter(|p| Some(p.id) != old_hub)
        .collect();
    let radius = surface
        .iter()
        .map(|p| (p.position - centroid).norm())
        .sum::<f64>()
        / surface.len() as f64;

    let mut rebuilt = build_octahedron_with(
        new_lod,
        radius,
        body.total_mass(),
        structural.stiffness,
        structural.damping,
        internal.is_some(),
    )?;
    if let Some(inner) = internal {
        for s in rebuilt
            .springs
            .iter_mut()
            .filter(|s| s.kind == SpringKind::Internal)
        {
            s.stiffness = inner.stiffness;
            s.damping = inner.damping;
        }
    }
    for p in &mut rebuilt.particles {
        p.position += centroid;
        p.velocity = velocity;
    }

    let new_surface = rebuilt.particles.len() - usize::from(internal.is_some());
    let new_hub = internal.map(|_| new_surface);
    let remap = |id: usize| -> Option<usize> {
        if Some(id) == old_hub {
            new_hub
        } else if id < new_surface {
            Some(id)
        } else {
            None
        }
    };
    for p in &body.particles {
        if p.pinned {
            if let Some(id) = remap(p.id) {
                rebuilt.particles[id].pinned = true;
            }
        }
    }
    rebuilt.attachments = body
        .attachments
        .iter()
        .filter_map(|a| {
            remap(a.particle_id).map(|particle_id| Attachment {
                particle_id,
                ..*a
            })
        })
        .collect();
    rebuilt.snap_hard_pins();
    Ok(rebuilt)
}

/// A body with its parameters, as loaded from a scene file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub name: String,
    pub body: SoftBody,
    pub params: SimParams,
}

#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error("cannot read scene {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scene at `{field}` (line {line}, column {column}): {message}")]
    Parse {
        field: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("scene builder rejected the parameters: {0}")]
    Build(#[from] TopologyError),
    #[error("invalid scene parameters: {0}")]
    Params(String),
    #[error("scene body failed validation:\n{0}")]
    Validation(ValidationReport),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
enum TopologyKind {
    Chain,
    Ring,
    Octahedron,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExplicitParticle {
    mass: f64,
    position: Vec3,
    #[serde(default)]
    velocity: Vec3,
    #[serde(default)]
    pinned: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExplicitSpring {
    a: usize,
    b: usize,
    /// Defaults to the initial endpoint distance.
    rest_length: Option<f64>,
    stiffness: f64,
    #[serde(default)]
    damping: f64,
    #[serde(default)]
    kind: SpringKind,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    params: SimParams,
    #[serde(default)]
    attachments: Vec<Attachment>,
    #[serde(default)]
    pinned: Vec<usize>,

    topology: Option<TopologyKind>,
    n: Option<usize>,
    spacing: Option<f64>,
    radius: Option<f64>,
    lod: Option<u32>,
    with_hub: Option<bool>,
    mass: Option<f64>,
    mass_total: Option<f64>,
    stiffness: Option<f64>,
    damping: Option<f64>,

    particles: Option<Vec<ExplicitParticle>>,
    springs: Option<Vec<ExplicitSpring>>,
    faces: Option<Vec<Face>>,
    dimensionality: Option<Dimensionality>,
}

const DEFAULT_STIFFNESS: f64 = 100.0;
const DEFAULT_DAMPING: f64 = 0.1;

impl SceneFile {
    fn build_body(&self) -> Result<SoftBody, SceneError> {
        let stiffness = self.stiffness.unwrap_or(DEFAULT_STIFFNESS);
        let damping = self.damping.unwrap_or(DEFAULT_DAMPING);
        match (self.topology, &self.particles) {
            (Some(_), Some(_)) => Err(SceneError::Parse {
                field: "topology".into(),
                line: 0,
                column: 0,
                message: "declare either `topology` or an explicit `particles` list, not both"
                    .into(),
            }),
            (Some(TopologyKind::Chain), None) => Ok(build_chain(
                self.n.unwrap_or(8),
                self.spacing.unwrap_or(1.0),
                self.mass.unwrap_or(1.0),
                stiffness,
                damping,
            )?),
            (Some(TopologyKind::Ring), None) => Ok(build_ring(
                self.n.unwrap_or(12),
                self.radius.unwrap_or(1.0),
                self.with_hub.unwrap_or(false),
                self.mass.unwrap_or(1.0),
                stiffness,
                damping,
            )?),
            (Some(TopologyKind::Octahedron), None) => Ok(build_octahedron_with(
                self.lod.unwrap_or(1),
                self.radius.unwrap_or(1.0),
                self.mass_total.unwrap_or(1.0),
                stiffness,
                damping,
                self.with_hub.unwrap_or(false),
            )?),
            (None, Some(particles)) => Ok(self.explicit_body(particles)),
            (None, None) => Err(SceneError::Parse {
                field: "topology".into(),
                line: 0,
                column: 0,
                message: "scene declares neither `topology` nor `particles`".into(),
            }),
        }
    }

    fn explicit_body(&self, list: &[ExplicitParticle]) -> SoftBody {
        let particles: Vec<Particle> = list
            .iter()
            .enumerate()
            .map(|(id, p)| Particle {
                id,
                mass: p.mass,
                position: p.position,
                velocity: p.velocity,
                pinned: p.pinned,
            })
            .collect();
        let springs = self
            .springs
            .iter()
            .flatten()
            .enumerate()
            .map(|(id, s)| {
                let rest_length = s.rest_length.unwrap_or_else(|| {
                    match (particles.get(s.a), particles.get(s.b)) {
                        (Some(a), Some(b)) => (b.position - a.position).norm(),
                        _ => 0.0,
                    }
                });
                Spring {
                    id,
                    a: s.a,
                    b: s.b,
                    rest_length,
                    stiffness: s.stiffness,
                    damping: s.damping,
                    kind: s.kind,
                }
            })
            .collect();
        let faces = self.faces.clone().unwrap_or_default();
        let dimensionality = self
            .dimensionality
            .unwrap_or_else(|| infer_dimensionality(&particles, &faces));
        SoftBody {
            particles,
            springs,
            faces,
            dimensionality,
            lod: 0,
            attachments: Vec::new(),
        }
    }
}

fn infer_dimensionality(particles: &[Particle], faces: &[Face]) -> Dimensionality {
    if !faces.is_empty() {
        return Dimensionality::Three;
    }
    let Some(first) = particles.first() else {
        return Dimensionality::One;
    };
    let on_x_axis = particles
        .iter()
        .all(|p| p.position.y == first.position.y && p.position.z == first.position.z);
    if on_x_axis {
        Dimensionality::One
    } else {
        Dimensionality::Two
    }
}

/// Parses scene JSON. `origin` names the scene when the file has no `name`.
pub fn parse_scene(text: &str, origin: &str) -> Result<Scene, SceneError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: SceneFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        SceneError::Parse {
            field,
            line: inner.line(),
            column: inner.column(),
            message: inner.to_string(),
        }
    })?;

    file.params.check().map_err(SceneError::Params)?;
    let mut body = file.build_body()?;
    for &id in &file.pinned {
        match body.particles.get_mut(id) {
            Some(p) => p.pinned = true,
            None => {
                return Err(SceneError::Parse {
                    field: "pinned".into(),
                    line: 0,
                    column: 0,
                    message: format!("pinned particle {id} does not exist"),
                })
            }
        }
    }
    body.attachments = file.attachments.clone();
    let report = validate(&body);
    if !report.is_valid() {
        return Err(SceneError::Validation(report));
    }
    body.snap_hard_pins();
    Ok(Scene {
        name: file.name.unwrap_or_else(|| origin.to_string()),
        body,
        params: file.params,
    })
}

/// Loads and validates a scene file.
pub fn import_scene(path: impl AsRef<Path>) -> Result<Scene, SceneError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| SceneError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let origin = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scene".into());
    parse_scene(&text, &origin)
}
