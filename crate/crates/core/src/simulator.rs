//! Deterministic synthetic navigation: closed box rooms with landmark boxes,
//! a procedural per-surface feature field, a patch-center ray caster and
//! phase-structured trajectories with an oracle relevance schedule.
//!
//! World frame: x right, y down, z forward (the camera frame at zero yaw).

use nalgebra::{Point3, Vector3};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, PoseSE3};

pub type LabelId = u32;

/// Clearance kept between the camera and any wall or landmark.
const CLEARANCE: f64 = 0.2;
const HIT_EPS: f64 = 1e-9;

/// Relevance multiplier applied per phase after a label stops being active.
pub const RELEVANCE_DECAY: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseKind {
    Exploration,
    Cruising,
    Goal,
}

impl PhaseKind {
    pub fn name(self) -> &'static str {
        match self {
            PhaseKind::Exploration => "exploration",
            PhaseKind::Cruising => "cruising",
            PhaseKind::Goal => "goal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSpec {
    pub kind: PhaseKind,
    pub steps: usize,
    pub yaw_deg: f64,
    pub translation_m: f64,
    /// Landmark label the instruction focuses on during this phase.
    #[serde(default)]
    pub active_label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartPose {
    pub position: [f64; 3],
    #[serde(default)]
    pub yaw_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    pub start: StartPose,
    pub phases: Vec<PhaseSpec>,
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<()> {
        if self.phases.is_empty() {
            return Err(Error::Config("trajectory.phases must not be empty".into()));
        }
        for (i, p) in self.phases.iter().enumerate() {
            if p.steps < 1 {
                return Err(Error::Config(format!("trajectory.phases[{i}].steps must be >= 1")));
            }
            if !(p.yaw_deg.is_finite() && p.translation_m.is_finite()) {
                return Err(Error::Config(format!("trajectory.phases[{i}] motion must be finite")));
            }
        }
        if !self.start.position.iter().chain([&self.start.yaw_deg]).all(|v| v.is_finite()) {
            return Err(Error::Config("trajectory.start must be finite".into()));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.phases.iter().map(|p| p.steps).sum()
    }

    /// Phase index of every step.
    pub fn phase_of_step(&self) -> Vec<usize> {
        self.phases.iter().enumerate().flat_map(|(i, p)| std::iter::repeat_n(i, p.steps)).collect()
    }

    /// Camera pose at every step. Each step applies its phase's yaw, then moves
    /// forward along the new heading.
    pub fn poses(&self) -> Vec<PoseSE3> {
        let [x, y, z] = self.start.position;
        let mut yaw = self.start.yaw_deg.to_radians();
        let mut pos = Vector3::new(x, y, z);
        let mut out = Vec::with_capacity(self.total_steps());
        for phase in &self.phases {
            for _ in 0..phase.steps {
                yaw += phase.yaw_deg.to_radians();
                pos += Vector3::new(yaw.sin(), 0.0, yaw.cos()) * phase.translation_m;
                out.push(PoseSE3::from_yaw(yaw, pos));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AabbSpec {
    pub label: String,
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanelSpec {
    pub label: String,
    pub origin: [f64; 3],
    pub edge_u: [f64; 3],
    pub edge_v: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomSpec {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

/// Declarative scene: a closed room, landmark boxes and free-standing panels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub room: RoomSpec,
    #[serde(default)]
    pub boxes: Vec<AabbSpec>,
    #[serde(default)]
    pub panels: Vec<PanelSpec>,
}

#[derive(Debug, Clone, PartialEq)]
struct Pattern {
    rotation: f64,
    phases: Vec<f64>,
}

/// Finite rectangle `origin + a * edge_u + b * edge_v`, `a, b` in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Surface {
    pub origin: Point3<f64>,
    pub edge_u: Vector3<f64>,
    pub edge_v: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub label: LabelId,
    pattern: Pattern,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    /// Ray parameter; equals camera-frame depth for rays with unit z in the camera frame.
    pub distance: f64,
    pub point: Point3<f64>,
    pub surface: usize,
    /// Local surface coordinates in meters.
    pub uv: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
struct Aabb {
    min: Vector3<f64>,
    max: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub surfaces: Vec<Surface>,
    pub labels: Vec<String>,
    pub seed: u64,
    pub feature_dim: usize,
    /// Spatial frequency of the feature field, radians per meter.
    pub frequency: f64,
    room: Aabb,
    obstacles: Vec<Aabb>,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn mix(acc: u64, v: u64) -> u64 {
    splitmix(acc ^ splitmix(v))
}

impl Scene {
    pub fn build(spec: &SceneSpec, seed: u64, feature_dim: usize, frequency: f64) -> Result<Scene> {
        let v = |a: [f64; 3]| Vector3::new(a[0], a[1], a[2]);
        let room = Aabb { min: v(spec.room.min), max: v(spec.room.max) };
        if !(0..3).all(|k| room.min[k] < room.max[k]) {
            return Err(Error::Config("scene.room.min must be below scene.room.max on every axis".into()));
        }
        if !(frequency > 0.0 && frequency.is_finite()) {
            return Err(Error::Config(format!("feature_frequency = {frequency} must be positive")));
        }
        let mut scene = Scene {
            surfaces: Vec::new(),
            labels: Vec::new(),
            seed,
            feature_dim,
            frequency,
            room: room.clone(),
            obstacles: Vec::new(),
        };
        let names = ["wall_west", "wall_east", "ceiling", "floor", "wall_south", "wall_north"];
        scene.add_box_faces(&room, |axis, side| names[axis * 2 + side].to_string());
        for b in &spec.boxes {
            let bb = Aabb { min: v(b.min), max: v(b.max) };
            if !(0..3).all(|k| bb.min[k] < bb.max[k]) {
                return Err(Error::Config(format!("scene box '{}' has min not below max", b.label)));
            }
            scene.add_box_faces(&bb, |_, _| b.label.clone());
            scene.obstacles.push(bb);
        }
        for p in &spec.panels {
            let (eu, ev) = (v(p.edge_u), v(p.edge_v));
            if eu.norm() == 0.0 || ev.norm() == 0.0 || eu.dot(&ev).abs() > 1e-9 * eu.norm() * ev.norm() {
                return Err(Error::Config(format!("scene panel '{}' must be a non-degenerate rectangle", p.label)));
            }
            scene.add_surface(Point3::from(v(p.origin)), eu, ev, &p.label);
        }
        Ok(scene)
    }

    fn label_id(&mut self, name: &str) -> LabelId {
        match self.labels.iter().position(|l| l == name) {
            Some(i) => i as LabelId,
            None => {
                self.labels.push(name.to_string());
                (self.labels.len() - 1) as LabelId
            }
        }
    }

    pub fn find_label(&self, name: &str) -> Option<LabelId> {
        self.labels.iter().position(|l| l == name).map(|i| i as LabelId)
    }

    fn add_surface(&mut self, origin: Point3<f64>, edge_u: Vector3<f64>, edge_v: Vector3<f64>, label: &str) {
        let index = self.surfaces.len() as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed, 0x5EED));
        rng.set_stream(index);
        let pairs = (self.feature_dim / 2).max(1);
        let rotation = rng.random_range(0.0..std::f64::consts::PI / pairs as f64);
        let phases = (0..pairs).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
        let label = self.label_id(label);
        self.surfaces.push(Surface {
            origin,
            edge_u,
            edge_v,
            normal: edge_u.cross(&edge_v).normalize(),
            label,
            pattern: Pattern { rotation, phases },
        });
    }

    fn add_box_faces(&mut self, b: &Aabb, name: impl Fn(usize, usize) -> String) {
        for axis in 0..3 {
            let (a1, a2) = ((axis + 1) % 3, (axis + 2) % 3);
            for side in 0..2 {
                let mut origin = b.min;
                origin[axis] = if side == 0 { b.min[axis] } else { b.max[axis] };
                let mut eu = Vector3::zeros();
                eu[a1] = b.max[a1] - b.min[a1];
                let mut ev = Vector3::zeros();
                ev[a2] = b.max[a2] - b.min[a2];
                self.add_surface(Point3::from(origin), eu, ev, &name(axis, side));
            }
        }
    }

    /// Nearest surface hit along `origin + s * dir`, `s > 0`.
    pub fn cast_ray(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (index, s) in self.surfaces.iter().enumerate() {
            let denom = dir.dot(&s.normal);
            if denom.abs() < 1e-12 {
                continue;
            }
            let t = (s.origin - origin).dot(&s.normal) / denom;
            if t <= HIT_EPS || best.as_ref().is_some_and(|b| b.distance <= t) {
                continue;
            }
            let p = origin + dir * t;
            let rel = p - s.origin;
            let (lu, lv) = (s.edge_u.norm_squared(), s.edge_v.norm_squared());
            let a = rel.dot(&s.edge_u) / lu;
            let b = rel.dot(&s.edge_v) / lv;
            if (-HIT_EPS..=1.0 + HIT_EPS).contains(&a) && (-HIT_EPS..=1.0 + HIT_EPS).contains(&b) {
                best = Some(Hit { distance: t, point: p, surface: index, uv: (a * lu.sqrt(), b * lv.sqrt()) });
            }
        }
        best
    }

    /// Noise-free feature of a surface point: unit-norm sinusoids along evenly
    /// spaced in-plane directions, so similarity falls off isotropically with distance.
    pub fn feature_at(&self, surface: usize, uv: (f64, f64)) -> Vec<f64> {
        let s = &self.surfaces[surface];
        let pairs = s.pattern.phases.len();
        let norm = 1.0 / (pairs as f64).sqrt();
        let mut out = vec![0.0; self.feature_dim];
        for (k, phase) in s.pattern.phases.iter().enumerate() {
            if 2 * k >= self.feature_dim {
                break;
            }
            let theta = s.pattern.rotation + k as f64 * std::f64::consts::PI / pairs as f64;
            let arg = self.frequency * (theta.cos() * uv.0 + theta.sin() * uv.1) + phase;
            out[2 * k] = arg.cos() * norm;
            if 2 * k + 1 < self.feature_dim {
                out[2 * k + 1] = arg.sin() * norm;
            }
        }
        out
    }

    /// Whether a camera at `p` keeps its clearance from walls and landmarks.
    pub fn is_free(&self, p: &Point3<f64>) -> bool {
        let inside = (0..3).all(|k| p[k] > self.room.min[k] + CLEARANCE && p[k] < self.room.max[k] - CLEARANCE);
        inside
            && !self
                .obstacles
                .iter()
                .any(|b| (0..3).all(|k| p[k] > b.min[k] - CLEARANCE && p[k] < b.max[k] + CLEARANCE))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub features: Array2<f64>,
    /// Camera-frame depth (z) at each patch center.
    pub depth: Vec<f64>,
    pub pose: PoseSE3,
    pub labels: Vec<LabelId>,
    pub oracle_relevance: Vec<f64>,
    pub surfaces: Vec<usize>,
    pub points: Vec<Point3<f64>>,
    pub phase: usize,
    pub kind: PhaseKind,
}

/// Ray-cast every patch center from `pose`. `eta` is the relative magnitude of
/// the view-dependent feature perturbation.
pub fn render(scene: &Scene, pose: &PoseSE3, k: &Intrinsics, eta: f64) -> Result<Observation> {
    let grid = k.grid();
    let m = grid.len();
    let d = scene.feature_dim;
    let mut features = Array2::zeros((m, d));
    let mut depth = Vec::with_capacity(m);
    let mut labels = Vec::with_capacity(m);
    let mut surfaces = Vec::with_capacity(m);
    let mut points = Vec::with_capacity(m);
    let origin = Point3::from(pose.translation);
    let view_key = pose
        .rotation
        .iter()
        .chain(pose.translation.iter())
        .fold(scene.seed, |acc, v| mix(acc, v.to_bits()));
    for i in 0..m {
        let c = grid.center(i);
        let dir_cam = Vector3::new((c.x - k.cx) / k.fx, (c.y - k.cy) / k.fy, 1.0);
        let hit = scene.cast_ray(&origin, &pose.transform_vector(&dir_cam)).ok_or(Error::RenderHole { token: i })?;
        let mut f = scene.feature_at(hit.surface, hit.uv);
        if eta > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(view_key, i as u64));
            let scale = eta / (d as f64).sqrt();
            for v in f.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += z * scale;
            }
        }
        features.row_mut(i).assign(&ndarray::ArrayView1::from(&f));
        depth.push(hit.distance);
        labels.push(scene.surfaces[hit.surface].label);
        surfaces.push(hit.surface);
        points.push(hit.point);
    }
    Ok(Observation {
        features,
        depth,
        pose: *pose,
        labels,
        oracle_relevance: vec![0.0; m],
        surfaces,
        points,
        phase: 0,
        kind: PhaseKind::Exploration,
    })
}

/// Oracle relevance of `label` during phase `phase`: 1 while active, halved for
/// every phase since it was last active, 0 if never active so far.
pub fn oracle_relevance(active: &[Option<LabelId>], phase: usize, label: LabelId) -> f64 {
    (0..=phase)
        .rev()
        .find(|&q| active[q] == Some(label))
        .map_or(0.0, |q| RELEVANCE_DECAY.powi((phase - q) as i32))
}

pub fn resolve_labels(scene: &Scene, traj: &TrajectorySpec) -> Result<Vec<Option<LabelId>>> {
    traj.phases
        .iter()
        .enumerate()
        .map(|(i, p)| match &p.active_label {
            None => Ok(None),
            Some(name) => scene
                .find_label(name)
                .map(Some)
                .ok_or_else(|| Error::Config(format!("trajectory.phases[{i}].active_label '{name}' is not a scene label"))),
        })
        .collect()
}

pub fn run_episode(scene: &Scene, traj: &TrajectorySpec, k: &Intrinsics, eta: f64) -> Result<Vec<Observation>> {
    traj.validate()?;
    let active = resolve_labels(scene, traj)?;
    let phase_of = traj.phase_of_step();
    let [x, y, z] = traj.start.position;
    if !scene.is_free(&Point3::new(x, y, z)) {
        return Err(Error::TrajectoryOutOfBounds { step: 0 });
    }
    traj.poses()
        .iter()
        .enumerate()
        .map(|(step, pose)| {
            if !scene.is_free(&Point3::from(pose.translation)) {
                return Err(Error::TrajectoryOutOfBounds { step });
            }
            let mut obs = render(scene, pose, k, eta)?;
            let phase = phase_of[step];
            obs.phase = phase;
            obs.kind = traj.phases[phase].kind;
            obs.oracle_relevance = obs.labels.iter().map(|&l| oracle_relevance(&active, phase, l)).collect();
            Ok(obs)
        })
        .collect()
}

/// Named built-in environments.
pub const PRESETS: [(&str, &str); 3] = [
    ("corridor", "40 m corridor, scan turns, long straight cruise, goal approach"),
    ("two-room", "two rooms joined by a doorway, scan then cruise through the door"),
    ("turn-heavy", "10 m square room with repeated 15 degree scan turns"),
];

const HALF_HEIGHT: f64 = 1.5;

fn landmark(label: String, center: [f64; 2], half: f64, height: f64) -> AabbSpec {
    AabbSpec {
        label,
        min: [center[0] - half, HALF_HEIGHT - height, center[1] - half],
        max: [center[0] + half, HALF_HEIGHT, center[1] + half],
    }
}

fn phase(kind: PhaseKind, steps: usize, yaw_deg: f64, translation_m: f64, label: &str) -> PhaseSpec {
    PhaseSpec { kind, steps, yaw_deg, translation_m, active_label: Some(label.to_string()) }
}

/// Scene and trajectory of a named preset. The seed moves and resizes landmarks.
pub fn preset(name: &str, seed: u64) -> Result<(SceneSpec, TrajectorySpec)> {
    use PhaseKind::*;
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0xB0C5));
    let start = StartPose { position: [0.0, 0.0, 0.0], yaw_deg: 0.0 };
    match name {
        "corridor" => {
            let boxes = (0..4)
                .map(|i| {
                    let half = rng.random_range(0.25..0.4);
                    let side = if i % 2 == 0 { -1.0 } else { 1.0 };
                    let z = rng.random_range(4.0 + 6.0 * i as f64..8.0 + 6.0 * i as f64);
                    let height = rng.random_range(0.8..2.2);
                    landmark(format!("landmark_{i}"), [side * (2.0 - 0.1 - half), z], half, height)
                })
                .collect();
            let scene = SceneSpec {
                room: RoomSpec { min: [-2.0, -HALF_HEIGHT, -2.0], max: [2.0, HALF_HEIGHT, 40.0] },
                boxes,
                panels: vec![],
            };
            let traj = TrajectorySpec {
                start,
                phases: vec![
                    phase(Exploration, 4, 10.0, 0.0, "landmark_0"),
                    phase(Exploration, 4, -10.0, 0.0, "landmark_0"),
                    phase(Cruising, 16, 0.5, 0.4, "landmark_1"),
                    phase(Goal, 6, -8.0, 0.15, "landmark_2"),
                ],
            };
            Ok((scene, traj))
        }
        "turn-heavy" => {
            let boxes = (0..4)
                .map(|i| {
                    let half = rng.random_range(0.3..0.45);
                    let along = rng.random_range(-3.0..3.0);
                    let height = rng.random_range(0.8..2.4);
                    let off = 5.0 - 0.1 - half;
                    let center = match i {
                        0 => [off, along],
                        1 => [along, off],
                        2 => [-off, along],
                        _ => [along, -off],
                    };
                    landmark(format!("landmark_{i}"), center, half, height)
                })
                .collect();
            let scene = SceneSpec {
                room: RoomSpec { min: [-5.0, -HALF_HEIGHT, -5.0], max: [5.0, HALF_HEIGHT, 5.0] },
                boxes,
                panels: vec![],
            };
            let traj = TrajectorySpec {
                start,
                phases: vec![
                    phase(Exploration, 6, 15.0, 0.05, "landmark_0"),
                    phase(Exploration, 6, -15.0, 0.05, "landmark_0"),
                    phase(Cruising, 8, 1.0, 0.3, "landmark_1"),
                    phase(Exploration, 5, 15.0, 0.0, "landmark_2"),
                    phase(Goal, 5, -10.0, 0.1, "landmark_3"),
                ],
            };
            Ok((scene, traj))
        }
        "two-room" => {
            let boxes = (0..4)
                .map(|i| {
                    let half = rng.random_range(0.3..0.45);
                    let side = if i % 2 == 0 { -1.0 } else { 1.0 };
                    let z = if i < 2 { rng.random_range(-3.0..3.0) } else { rng.random_range(5.0..11.0) };
                    let height = rng.random_range(0.8..2.4);
                    landmark(format!("landmark_{i}"), [side * (4.0 - 0.1 - half), z], half, height)
                })
                .collect();
            let panel = |x0: f64, x1: f64| PanelSpec {
                label: "partition".into(),
                origin: [x0, -HALF_HEIGHT, 4.0],
                edge_u: [x1 - x0, 0.0, 0.0],
                edge_v: [0.0, 2.0 * HALF_HEIGHT, 0.0],
            };
            let scene = SceneSpec {
                room: RoomSpec { min: [-4.0, -HALF_HEIGHT, -4.0], max: [4.0, HALF_HEIGHT, 12.0] },
                boxes,
                panels: vec![panel(-4.0, -0.8), panel(0.8, 4.0)],
            };
            let traj = TrajectorySpec {
                start,
                phases: vec![
                    phase(Exploration, 5, 12.0, 0.0, "landmark_0"),
                    phase(Exploration, 5, -12.0, 0.0, "landmark_1"),
                    phase(Cruising, 14, 0.0, 0.6, "partition"),
                    phase(Goal, 5, 10.0, 0.15, "landmark_3"),
                ],
            };
            Ok((scene, traj))
        }
        other => Err(Error::Config(format!(
            "unknown scene preset '{other}' (available: {})",
            PRESETS.map(|p| p.0).join(", ")
        ))),
    }
}
