use proptest::prelude::*;
use softlab_core::dynamics::{accumulate_forces, Pull};
use softlab_core::model::{
    Attachment, AttachmentMode, Dimensionality, IntegratorKind, Particle, SimParams, SoftBody,
    Spring, SpringKind, Vec3,
};
use softlab_core::statepack::{restore, take_snapshot};
use softlab_core::dynamics::SimState;

fn vec3(range: f64) -> impl Strategy<Value = Vec3> {
    (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn random_body() -> impl Strategy<Value = SoftBody> {
    (2usize..8).prop_flat_map(|n| {
        let particles = proptest::collection::vec((0.1f64..5.0, vec3(2.0), vec3(1.0)), n);
        let springs = proptest::collection::vec(
            (0..n, 1..n, 0.1f64..2.0, 1.0f64..500.0, 0.0f64..2.0),
            1..12,
        );
        let elastic = proptest::option::of((0..n, vec3(2.0), 1.0f64..50.0, 0.0f64..1.0));
        (particles, springs, elastic).prop_map(move |(ps, ss, elastic)| {
            let particles = ps
                .into_iter()
                .enumerate()
                .map(|(id, (mass, position, velocity))| Particle {
                    id,
                    mass,
                    position,
                    velocity,
                    pinned: false,
                })
                .collect();
            let mut seen = std::collections::HashSet::new();
            let springs: Vec<Spring> = ss
                .into_iter()
                .filter(|&(a, off, ..)| {
                    let b = (a + off) % n;
                    seen.insert((a.min(b), a.max(b)))
                })
                .enumerate()
                .map(|(id, (a, off, rest_length, stiffness, damping))| Spring {
                    id,
                    a,
                    b: (a + off) % n,
                    rest_length,
                    stiffness,
                    damping,
                    kind: SpringKind::Structural,
                })
                .collect();
            let attachments = elastic
                .map(|(particle_id, anchor, stiffness, damping)| Attachment {
                    particle_id,
                    anchor,
                    mode: AttachmentMode::Elastic { stiffness, damping },
                })
                .into_iter()
                .collect();
            SoftBody {
                particles,
                springs,
                faces: vec![],
                dimensionality: Dimensionality::Two,
                lod: 0,
                attachments,
            }
        })
    })
}

fn random_params() -> impl Strategy<Value = SimParams> {
    (vec3(10.0), 0.0f64..1.0, 0.1f64..3.0, 0.0f64..3.0).prop_map(|(gravity, drag, ks, kd)| {
        SimParams {
            gravity,
            drag_coeff: drag,
            stiffness_scale: ks,
            damping_scale: kd,
            ..SimParams::default()
        }
    })
}

fn integrator() -> impl Strategy<Value = IntegratorKind> {
    proptest::sample::select(IntegratorKind::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn breakdown_parts_sum_to_total(body in random_body(), params in random_params(), pull in vec3(3.0)) {
        let pulls = [Pull { particle_id: 0, target: pull, stiffness: 50.0 }];
        let forces = accumulate_forces(&body, &params, &pulls);
        for f in &forces.per_particle {
            let parts = f.sum_of_parts();
            let scale = f.total.max_abs().max(1.0);
            prop_assert!((parts - f.total).max_abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn spring_forces_cancel(body in random_body(), params in random_params()) {
        let mut body = body;
        body.attachments.clear();
        let forces = accumulate_forces(&body, &params, &[]);
        let net = forces
            .per_particle
            .iter()
            .fold(Vec3::ZERO, |acc, f| acc + f.spring);
        prop_assert!(net.max_abs() <= 1e-9);
    }

    #[test]
    fn resuming_from_a_snapshot_matches_an_unbroken_run(
        body in random_body(),
        kind in integrator(),
        first in 1u64..40,
        second in 1u64..40,
    ) {
        let params = SimParams { dt: 1e-3, integrator: kind, ..SimParams::default() };
        let mut unbroken = SimState::new(body.clone(), params.clone());
        let mut split = SimState::new(body, params);
        let a = unbroken.run(first + second);
        let b = split.run(first);
        prop_assume!(a.is_ok() && b.is_ok());
        let json = serde_json::to_string(&take_snapshot(&split)).unwrap();
        let mut resumed = restore(&serde_json::from_str(&json).unwrap()).unwrap();
        resumed.run(second).unwrap();
        prop_assert_eq!(take_snapshot(&resumed), take_snapshot(&unbroken));
    }

    #[test]
    fn pinned_particles_never_move(body in random_body(), kind in integrator(), steps in 1u64..50) {
        let mut body = body;
        body.particles[0].pinned = true;
        let start = body.particles[0].position;
        let params = SimParams { integrator: kind, ..SimParams::default() };
        let mut state = SimState::new(body, params);
        let _ = state.run(steps);
        prop_assert_eq!(state.body.particles[0].position, start);
        prop_assert_eq!(state.body.particles[0].velocity, Vec3::ZERO);
    }
}
