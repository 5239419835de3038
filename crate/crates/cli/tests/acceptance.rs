//! One PASS/FAIL line per acceptance criterion. Criteria that have a CLI
//! surface drive the `softlab` binary; the rest call the library it links.

use std::io::{BufRead, BufReader};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use futures_util::{SinkExt, StreamExt};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use softlab_core::bench::scenarios::{tethered_spring, Oscillator};
use softlab_core::bench::{least_squares_slope, stability_scan};
use softlab_core::dynamics::{ParamValue, Pull, SimState};
use softlab_core::model::{
    validate, Attachment, AttachmentMode, Dimensionality, IntegratorKind, Particle, SimParams,
    SoftBody, Spring, SpringKind, Vec3,
};
use softlab_core::statepack::{take_snapshot, Snapshot};
use softlab_core::stats::{compute_energy, memory_estimate};
use softlab_core::topology::{build_octahedron, import_scene, Scene};
use softlab_service::engine::LogEntry;
use softlab_service::protocol::{
    encode_client, ClientMessage, Command as Ctl, FrameMessage, Hello, Role, ServerMessage,
};
use softlab_service::replay_log;
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

type Outcome = Result<String, String>;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn softlab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_softlab"))
}

fn run_cli(args: &[&str]) -> Result<String, String> {
    let out = softlab()
        .args(args)
        .output()
        .map_err(|e| format!("cannot start softlab: {e}"))?;
    if !out.status.success() {
        return Err(format!(
            "softlab {} exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn read_snapshot(path: &Path) -> Snapshot {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn ahp_priorities() -> Outcome {
    const VALUE: [f64; 9] = [0.34, 0.18, 0.18, 0.09, 0.09, 0.04, 0.04, 0.04, 0.02];
    const COST: [f64; 9] = [0.14, 0.07, 0.07, 0.08, 0.14, 0.16, 0.16, 0.08, 0.08];
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.csv");
    let data = root().join("data/ahp");
    let started = Instant::now();
    run_cli(&[
        "ahp",
        "--value",
        data.join("value.csv").to_str().unwrap(),
        "--cost",
        data.join("cost.csv").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ])?;
    let elapsed = started.elapsed();
    let text = std::fs::read_to_string(&out).unwrap();
    let rows: Vec<Vec<String>> = text
        .lines()
        .skip(1)
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    ensure(rows.len() == 9, || format!("report has {} rows", rows.len()))?;
    let mut worst: f64 = 0.0;
    for (i, row) in rows.iter().enumerate() {
        let value: f64 = row[1].parse::<f64>().unwrap() / 100.0;
        let cost: f64 = row[2].parse::<f64>().unwrap() / 100.0;
        worst = worst.max((value - VALUE[i]).abs()).max((cost - COST[i]).abs());
    }
    ensure(worst <= 0.01, || format!("largest weight deviation {worst:.4}"))?;
    let (v1, c1): (f64, f64) = (rows[0][1].parse().unwrap(), rows[0][2].parse().unwrap());
    ensure((v1 - 34.0).abs() <= 1.0 && (c1 - 14.0).abs() <= 1.0, || {
        format!("Req1 at cost {c1:.2}%, value {v1:.2}%")
    })?;
    ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "max deviation {worst:.4}, Req1 = (cost {c1:.2}%, value {v1:.2}%), {elapsed:.2?}"
    ))
}

fn convergence_orders() -> Outcome {
    let osc = Oscillator::default();
    let dts = [1e-2, 3e-3, 1e-3];
    let expected = [
        (IntegratorKind::EulerExplicit, 1.0, 0.3),
        (IntegratorKind::EulerSemiImplicit, 1.0, 0.3),
        (IntegratorKind::Midpoint, 2.0, 0.3),
        (IntegratorKind::Rk4, 4.0, 0.5),
    ];
    let scene = root().join("scenes/oscillator.json");
    let dir = tempfile::tempdir().unwrap();
    let started = Instant::now();
    let mut parts = Vec::new();
    let mut failures = Vec::new();
    for (kind, order, tol) in expected {
        let mut points = Vec::new();
        for dt in dts {
            let dump = dir.path().join(format!("{kind}_{dt}.json"));
            run_cli(&[
                "run",
                scene.to_str().unwrap(),
                "--seconds",
                "2",
                "--dt",
                &dt.to_string(),
                "--integrator",
                kind.name(),
                "--dump",
                dump.to_str().unwrap(),
            ])?;
            let snap = read_snapshot(&dump);
            let exact = osc.exact_positions(snap.step_index as f64 * dt);
            let err = snap
                .particles
                .iter()
                .zip(exact)
                .map(|(p, x)| {
                    (p.position - Vec3::new(x, 0.0, 0.0)).norm()
                })
                .fold(0.0, f64::max);
            points.push((dt.ln(), err.ln()));
        }
        let slope = least_squares_slope(points);
        parts.push(format!("{kind} {slope:.2}"));
        if (slope - order).abs() > tol {
            failures.push(format!("{kind} slope {slope:.3}, expected {order}±{tol}"));
        }
    }
    let elapsed = started.elapsed();
    if elapsed >= Duration::from_secs(30) {
        failures.push(format!("took {elapsed:?}"));
    }
    if failures.is_empty() {
        Ok(format!("{}, {elapsed:.2?}", parts.join(", ")))
    } else {
        Err(failures.join("; "))
    }
}

fn dump_reload_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let started = Instant::now();
    let mut cases = 0;
    for scene in ["chain8.json", "ring12_hub.json", "octa_lod1.json"] {
        let scene_path = root().join("scenes").join(scene);
        let scene_path = scene_path.to_str().unwrap();
        for kind in IntegratorKind::ALL {
            let p = |suffix: &str| {
                dir.path()
                    .join(format!("{scene}_{kind}_{suffix}.json"))
                    .to_string_lossy()
                    .into_owned()
            };
            let (half, resumed, straight) = (p("100"), p("resumed"), p("200"));
            run_cli(&["run", scene_path, "--steps", "100", "--integrator", kind.name(), "--dump", &half])?;
            run_cli(&["replay", &half, "--continue", "100", "--dump", &resumed])?;
            run_cli(&["run", scene_path, "--steps", "200", "--integrator", kind.name(), "--dump", &straight])?;
            let a = std::fs::read(&resumed).unwrap();
            let b = std::fs::read(&straight).unwrap();
            ensure(a == b, || format!("{scene} with {kind}: resumed dump differs"))?;
            ensure(read_snapshot(Path::new(&resumed)).step_index == 200, || {
                format!("{scene} with {kind}: wrong step")
            })?;
            cases += 1;
        }
    }
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("{cases} scene/integrator pairs byte-identical, {elapsed:.2?}"))
}

fn random_body(rng: &mut StdRng) -> (SoftBody, SimParams, Vec<Pull>) {
    let n = rng.random_range(2..10);
    let v = |rng: &mut StdRng, r: f64| {
        Vec3::new(rng.random_range(-r..r), rng.random_range(-r..r), rng.random_range(-r..r))
    };
    let particles: Vec<Particle> = (0..n)
        .map(|id| Particle {
            id,
            mass: rng.random_range(0.05..3.0),
            position: v(rng, 1.5),
            velocity: v(rng, 1.0),
            pinned: rng.random_bool(0.1),
        })
        .collect();
    let mut springs = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for _ in 0..rng.random_range(1..(3 * n)) {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a == b || !seen.insert((a.min(b), a.max(b))) {
            continue;
        }
        springs.push(Spring {
            id: springs.len(),
            a,
            b,
            rest_length: rng.random_range(0.1..2.0),
            stiffness: rng.random_range(1.0..400.0),
            damping: rng.random_range(0.0..1.5),
            kind: SpringKind::Structural,
        });
    }
    let mut attachments = Vec::new();
    if rng.random_bool(0.5) {
        let mode = if rng.random_bool(0.3) {
            AttachmentMode::HardPin
        } else {
            AttachmentMode::Elastic {
                stiffness: rng.random_range(1.0..80.0),
                damping: rng.random_range(0.0..1.0),
            }
        };
        attachments.push(Attachment {
            particle_id: rng.random_range(0..n),
            anchor: v(rng, 1.0),
            mode,
        });
    }
    let params = SimParams {
        dt: 1e-3,
        gravity: v(rng, 10.0),
        drag_coeff: rng.random_range(0.0..0.5),
        stiffness_scale: rng.random_range(0.5..2.0),
        damping_scale: rng.random_range(0.0..2.0),
        floor_enabled: rng.random_bool(0.5),
        floor_y: rng.random_range(-1.0..0.0),
        restitution: rng.random_range(0.0..1.0),
        integrator: IntegratorKind::ALL[rng.random_range(0..4)],
    };
    let pulls = if rng.random_bool(0.5) {
        vec![Pull {
            particle_id: rng.random_range(0..n),
            target: v(rng, 1.0),
            stiffness: 50.0,
        }]
    } else {
        Vec::new()
    };
    let body = SoftBody {
        particles,
        springs,
        faces: vec![],
        dimensionality: Dimensionality::Two,
        lod: 0,
        attachments,
    };
    (body, params, pulls)
}

fn snapshot_accounting() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0x5eed_0004);
    let mut worst_parts: f64 = 0.0;
    let mut worst_spring: f64 = 0.0;
    let mut contacts = 0usize;
    for i in 0..1000 {
        let (body, params, pulls) = random_body(&mut rng);
        ensure(validate(&body).is_valid(), || format!("generated body {i} is invalid"))?;
        let mut state = SimState::new(body, params);
        for p in pulls {
            state.set_pull(Some(p), p.particle_id);
        }
        let steps = rng.random_range(0..20);
        let _ = state.run(steps);
        let json = serde_json::to_string(&take_snapshot(&state)).unwrap();
        let snap: Snapshot = serde_json::from_str(&json).unwrap();
        let mut spring_sum = Vec3::ZERO;
        let mut spring_scale: f64 = 0.0;
        for p in &snap.particles {
            let f = &p.force_breakdown;
            let parts = [f.spring, f.gravity, f.drag, f.collision, f.attachment];
            let scale = parts.iter().map(|v| v.norm()).sum::<f64>().max(f.total.norm());
            if scale > 0.0 {
                worst_parts = worst_parts.max((f.sum_of_parts() - f.total).norm() / scale);
            }
            if f.collision != Vec3::ZERO {
                contacts += 1;
            }
            spring_sum = spring_sum + f.spring;
            spring_scale = spring_scale.max(f.spring.norm());
        }
        worst_spring = worst_spring.max(spring_sum.norm());
    }
    ensure(worst_parts <= 1e-12, || format!("parts deviate by {worst_parts:e} relative"))?;
    ensure(worst_spring <= 1e-9, || format!("net spring force {worst_spring:e}"))?;
    Ok(format!(
        "1000 bodies, worst relative parts error {worst_parts:.1e}, worst net spring force {worst_spring:.1e}, {contacts} contact breakdowns"
    ))
}

fn mesh_invariants() -> Outcome {
    let mut sizes = Vec::new();
    for lod in 0..=4u32 {
        let body = build_octahedron(lod, 1.0, 1.0, 100.0, 0.1).map_err(|e| e.to_string())?;
        let (v, e, f) = (
            body.particles.len() as i64,
            body.springs.len() as i64,
            body.faces.len() as i64,
        );
        let p = 4i64.pow(lod);
        ensure(v - e + f == 2, || format!("lod {lod}: V-E+F = {}", v - e + f))?;
        ensure(e == 12 * p, || format!("lod {lod}: E = {e}"))?;
        ensure(v == 4 * p + 2, || format!("lod {lod}: V = {v}"))?;
        ensure(validate(&body).is_valid(), || format!("lod {lod}: {}", validate(&body)))?;
        sizes.push(memory_estimate(&body));
    }
    ensure(sizes.windows(2).all(|w| w[0] < w[1]), || format!("memory {sizes:?}"))?;
    Ok(format!("lod 0..4 closed, memory {sizes:?} bytes"))
}

fn integrator_cost() -> Outcome {
    let body = build_octahedron(1, 0.5, 1.0, 300.0, 0.2).unwrap();
    let expected = [1u64, 1, 2, 4];
    for (kind, per) in IntegratorKind::ALL.into_iter().zip(expected) {
        let mut state = SimState::new(body.clone(), SimParams { integrator: kind, ..SimParams::default() });
        state.run(25).map_err(|e| e.to_string())?;
        ensure(state.counters.force_evaluations == 25 * per, || {
            format!("{kind}: {} evaluations in 25 steps", state.counters.force_evaluations)
        })?;
    }
    let mut state = SimState::new(
        body,
        SimParams { integrator: IntegratorKind::EulerExplicit, ..SimParams::default() },
    );
    state.run(10).unwrap();
    state.set_integrator(IntegratorKind::Rk4);
    state.run(10).unwrap();
    state
        .set_param("integrator", &ParamValue::Text("midpoint".into()))
        .unwrap();
    state.run(5).unwrap();
    let total = state.counters.force_evaluations;
    ensure(total == 60, || format!("mixed run counted {total}"))?;
    ensure(state.counters.switches.len() == 2, || "switches not recorded".into())?;
    Ok(format!("1/1/2/4 per step, mixed run {total} = 10·1 + 10·4 + 5·2"))
}

fn energy_properties() -> Outcome {
    let scene = Oscillator::default().scene();
    let track = |kind: IntegratorKind| -> Vec<f64> {
        let params = SimParams { dt: 1e-3, integrator: kind, ..scene.params.clone() };
        let mut state = SimState::new(scene.body.clone(), params);
        let mut energies = vec![compute_energy(&state.body, &state.params).total];
        for _ in 0..10_000 {
            state.step().unwrap();
            energies.push(compute_energy(&state.body, &state.params).total);
        }
        energies
    };
    let max_rel = |e: &[f64]| e.iter().map(|x| (x - e[0]).abs() / e[0]).fold(0.0, f64::max);
    let rk4 = max_rel(&track(IntegratorKind::Rk4));
    let semi = max_rel(&track(IntegratorKind::EulerSemiImplicit));
    let euler = track(IntegratorKind::EulerExplicit);
    ensure(rk4 <= 1e-3, || format!("rk4 drift {rk4:e}"))?;
    ensure(semi <= 0.02, || format!("semi-implicit drift {semi:e}"))?;
    let drops = euler.windows(2).filter(|w| w[1] <= w[0]).count();
    ensure(drops == 0, || format!("explicit Euler energy failed to increase {drops} times"))?;
    Ok(format!(
        "rk4 max drift {:.1e}%, semi-implicit {:.3}%, explicit Euler grew {:.2}% monotonically",
        100.0 * rk4,
        100.0 * semi,
        100.0 * (euler[10_000] / euler[0] - 1.0)
    ))
}

fn stability_bracket() -> Outcome {
    let scene = tethered_spring(100.0, 1.0, 0.05);
    let euler = stability_scan(IntegratorKind::EulerExplicit, &scene, 1e-3, 0.1, 1.0)
        .map_err(|e| e.to_string())?;
    let rk4 = stability_scan(IntegratorKind::Rk4, &scene, 1e-3, 0.1, 1.0).map_err(|e| e.to_string())?;
    ensure((0.01..=0.04).contains(&euler), || format!("explicit Euler limit {euler}"))?;
    ensure(rk4 > euler, || format!("rk4 limit {rk4} not above {euler}"))?;
    Ok(format!("omega = 100, explicit Euler max stable dt {euler:.4}, rk4 {rk4:.4}"))
}

struct Server {
    child: Child,
    address: String,
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn spawn_server(scene: &Path) -> Result<Server, String> {
    let mut child = softlab()
        .args(["serve", scene.to_str().unwrap(), "--port", "0", "--frame-rate", "60"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| e.to_string())?;
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .map_err(|e| e.to_string())?;
    let address = line
        .trim()
        .strip_prefix("listening on ")
        .ok_or_else(|| format!("unexpected serve output `{line}`"))?
        .to_string();
    Ok(Server { child, address })
}

struct Client {
    ws: WebSocketStream<MaybeTlsStream<TcpStream>>,
    seq: u64,
}

impl Client {
    async fn connect(url: &str, role: Role) -> Result<(Client, Role), String> {
        let (ws, _) = tokio_tungstenite::connect_async(url).await.map_err(|e| e.to_string())?;
        let mut c = Client { ws, seq: 0 };
        let seq = c.send(ClientMessage::Hello(Hello { role_request: role, scene: None })).await;
        match c.next().await? {
            ServerMessage::Welcome { seq: s, role, .. } if s == seq => Ok((c, role)),
            other => Err(format!("expected welcome, got {other:?}")),
        }
    }

    async fn send(&mut self, msg: ClientMessage) -> u64 {
        self.seq += 1;
        let text = encode_client(self.seq, &msg);
        self.ws.send(Message::Text(text.into())).await.unwrap();
        self.seq
    }

    async fn next(&mut self) -> Result<ServerMessage, String> {
        loop {
            let msg = tokio::time::timeout(Duration::from_secs(5), self.ws.next())
                .await
                .map_err(|_| "server went quiet".to_string())?
                .ok_or("stream ended")?
                .map_err(|e| e.to_string())?;
            if let Message::Text(t) = msg {
                return serde_json::from_str(&t).map_err(|e| e.to_string());
            }
        }
    }

    async fn command(&mut self, cmd: Ctl) -> Result<ServerMessage, String> {
        let seq = self.send(ClientMessage::Control(cmd)).await;
        loop {
            let msg = self.next().await?;
            if !matches!(msg, ServerMessage::Frame(_)) && msg.seq() == seq {
                return Ok(msg);
            }
        }
    }

    async fn frame_where(&mut self, pred: impl Fn(&FrameMessage) -> bool) -> Result<FrameMessage, String> {
        loop {
            if let ServerMessage::Frame(f) = self.next().await? {
                if pred(&f) {
                    return Ok(f);
                }
            }
        }
    }
}

fn acked(msg: ServerMessage) -> Result<u64, String> {
    match msg {
        ServerMessage::Ack { effective_step, .. } => Ok(effective_step),
        other => Err(format!("expected ack, got {other:?}")),
    }
}

fn positions(state: &SimState) -> Vec<Vec3> {
    state.body.particles.iter().map(|p| p.position).collect()
}

async fn protocol_session(url: &str, scene: &Scene) -> Outcome {
    let (mut control, role) = Client::connect(url, Role::Controller).await?;
    ensure(role == Role::Controller, || "first session was not granted control".into())?;
    let (mut viewer, role) = Client::connect(url, Role::Controller).await?;
    ensure(role == Role::Viewer, || "second controller request was not demoted".into())?;

    // viewer edit is refused and has no effect
    let reply = viewer
        .command(Ctl::SetParam { field: "dt".into(), value: ParamValue::Number(0.005) })
        .await?;
    match reply {
        ServerMessage::Warning { message, .. } if message == "insufficient permissions" => {}
        other => return Err(format!("viewer edit answered with {other:?}")),
    }
    let f = viewer.frame_where(|f| f.step_index > 0).await?;
    let mut fresh = SimState::new(scene.body.clone(), scene.params.clone());
    fresh.run(f.step_index).map_err(|e| e.to_string())?;
    ensure(f.params.dt == scene.params.dt && f.positions == positions(&fresh), || {
        "viewer edit changed the trajectory".into()
    })?;

    // controller integrator switch
    let at = acked(control.command(Ctl::SetIntegrator { kind: IntegratorKind::Rk4 }).await?)?;
    let f = control.frame_where(|f| f.step_index > at + 10).await?;
    let mut expected = SimState::new(scene.body.clone(), scene.params.clone());
    expected.run(at).map_err(|e| e.to_string())?;
    expected.set_integrator(IntegratorKind::Rk4);
    expected.run(f.step_index - at).map_err(|e| e.to_string())?;
    ensure(f.positions == positions(&expected), || {
        format!("trajectory after switch at step {at} differs")
    })?;

    // reset reproduces a fresh scene
    ensure(acked(control.command(Ctl::Reset).await?)? == 0, || "reset did not return to step 0".into())?;
    let f = control
        .frame_where(|f| f.step_index >= 30 && f.params.integrator == scene.params.integrator)
        .await?;
    let mut fresh = SimState::new(scene.body.clone(), scene.params.clone());
    fresh.run(f.step_index).map_err(|e| e.to_string())?;
    ensure(f.positions == positions(&fresh), || "post-reset trajectory differs".into())?;

    // a schedule of edits, reconstructed from the acks, replays bit-exactly
    let schedule = vec![
        Ctl::SetParam { field: "stiffness_scale".into(), value: ParamValue::Number(1.4) },
        Ctl::SetIntegrator { kind: IntegratorKind::Midpoint },
        Ctl::DragForce { particle_id: 1, target: Vec3::new(0.2, 0.8, 0.0), active: true },
        Ctl::Pause,
        Ctl::SetLod { level: 2 },
        Ctl::Resume,
        Ctl::DragForce { particle_id: 1, target: Vec3::ZERO, active: false },
    ];
    let mut log = Vec::new();
    for (i, cmd) in schedule.into_iter().enumerate() {
        let step = acked(control.command(cmd.clone()).await?)?;
        log.push(LogEntry { step, session: 1, seq: i as u64, command: cmd });
        if i % 2 == 0 {
            control.frame_where(|f| f.step_index >= step + 15 || f.paused).await?;
        }
    }
    let f = control
        .frame_where(|f| f.positions.len() == 66 && !f.paused && f.step_index >= log[6].step + 20)
        .await?;
    let replayed = replay_log(scene, &log, f.step_index).map_err(|e| e.to_string())?;
    ensure(positions(replayed.state()) == f.positions, || "logged schedule replay differs".into())?;
    ensure(replayed.topology_version() == f.topology_version, || "topology version differs".into())?;
    Ok(format!(
        "viewer warned, switch at step {at} continuous, reset and {}-command replay bit-exact at step {}",
        log.len(),
        f.step_index
    ))
}

fn service_protocol() -> Outcome {
    let scene_path = root().join("scenes/octa_lod1.json");
    let scene = import_scene(&scene_path).map_err(|e| e.to_string())?;
    let started = Instant::now();
    let server = spawn_server(&scene_path)?;
    let runtime = tokio::runtime::Runtime::new().unwrap();
    let result = runtime.block_on(protocol_session(&server.address, &scene));
    drop(server);
    let elapsed = started.elapsed();
    let detail = result?;
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("{detail}, {elapsed:.2?}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("AHP priority vectors and chart point", ahp_priorities),
        ("convergence orders against the analytic oscillator", convergence_orders),
        ("dump/reload determinism", dump_reload_determinism),
        ("snapshot force accounting", snapshot_accounting),
        ("octahedron mesh invariants", mesh_invariants),
        ("integrator cost contract", integrator_cost),
        ("energy behavior", energy_properties),
        ("stability scan", stability_bracket),
        ("service protocol over loopback", service_protocol),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panicked".into());
                Err(msg)
            });
        match outcome {
            Ok(detail) => println!("criterion {} PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
