//! Deterministic synthetic scenes with ground truth.
//!
//! Objects are cuboids and upright cylinders sampled on their surfaces, in an
//! optional room with a floor and walls. Every point carries its object's
//! feature plus Gaussian noise. Frames are rendered by splatting points into a
//! z-buffer, and each visible object gets one mask per frame.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster_core::cosine_sim;
use crate::geometry::{to_f64, Aabb, Intrinsics, Pose, Vec3};
use crate::scene_io::{
    Bitmap, FeatureMatrix, FrameObservation, Instance, InstanceKind, InstanceSet, MaskEntry, SceneCloud,
};
use crate::PointId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid synthetic scene: {0}")]
    InvalidSpec(String),
    #[error("objects {0} and {1} have feature similarity {2:.3}, above the allowed {3}")]
    SimilarFeatures(usize, usize, f64, f64),
    #[error("could not draw {0} mutually dissimilar features in dimension {1}")]
    FeatureSampling(usize, usize),
}

/// Non-fatal issues found while generating.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SynthWarning {
    /// The ground-truth instance lies behind every camera and has no masks.
    DegenerateCamera { instance: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Cuboid,
    /// Upright cylinder; `size[0]` is the diameter and `size[2]` the height.
    Cylinder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthObject {
    pub shape: Shape,
    /// Centre of the bounding volume, metres.
    pub center: [f64; 3],
    /// Rotation about +z, radians.
    #[serde(default)]
    pub yaw: f64,
    pub size: [f64; 3],
    /// Drawn at random when absent.
    #[serde(default)]
    pub feature: Option<Vec<f32>>,
    #[serde(default)]
    pub color: Option<[f32; 3]>,
    /// Objects sharing a label form one ground-truth instance (as parts of it).
    #[serde(default)]
    pub instance: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub floor_min: [f64; 2],
    pub floor_max: [f64; 2],
    #[serde(default)]
    pub floor_z: f64,
    /// Walls along the floor edges; 0 means no walls.
    #[serde(default)]
    pub wall_height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCamera {
    pub position: [f64; 3],
    pub look_at: [f64; 3],
    #[serde(default = "default_up")]
    pub up: [f64; 3],
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default = "default_height")]
    pub height: usize,
    /// Focal length in pixels; defaults to 0.75 × width.
    #[serde(default)]
    pub focal: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Noise {
    #[serde(default = "default_feature_sigma")]
    pub feature_sigma: f64,
    #[serde(default = "default_position_sigma")]
    pub position_sigma: f64,
}

impl Default for Noise {
    fn default() -> Self {
        Noise { feature_sigma: default_feature_sigma(), position_sigma: default_position_sigma() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub objects: Vec<SynthObject>,
    #[serde(default)]
    pub room: Option<Room>,
    #[serde(default = "default_density")]
    pub points_per_m2: f64,
    #[serde(default)]
    pub cameras: Vec<SynthCamera>,
    #[serde(default)]
    pub noise: Noise,
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    #[serde(default = "default_footprint")]
    pub pixel_footprint: usize,
    /// Largest cosine similarity allowed between features of different instances.
    #[serde(default = "default_max_similarity")]
    pub max_feature_similarity: f64,
    /// How far, relative to unit length, parts of one instance stray from its base feature.
    #[serde(default = "default_part_variation")]
    pub part_variation: f64,
}

fn default_up() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}
fn default_width() -> usize {
    320
}
fn default_height() -> usize {
    240
}
fn default_feature_sigma() -> f64 {
    0.05
}
fn default_position_sigma() -> f64 {
    0.002
}
fn default_density() -> f64 {
    2500.0
}
fn default_feature_dim() -> usize {
    16
}
fn default_footprint() -> usize {
    3
}
fn default_max_similarity() -> f64 {
    0.5
}
fn default_part_variation() -> f64 {
    0.3
}

impl SynthSpec {
    pub fn new(seed: u64, objects: Vec<SynthObject>) -> Self {
        SynthSpec {
            seed,
            objects,
            room: None,
            points_per_m2: default_density(),
            cameras: Vec::new(),
            noise: Noise::default(),
            feature_dim: default_feature_dim(),
            pixel_footprint: default_footprint(),
            max_feature_similarity: default_max_similarity(),
            part_variation: default_part_variation(),
        }
    }

    /// A square room of side `side` metres with `n_objects` axis-aligned cuboids
    /// and cylinders standing on the floor in separate slots, and `n_cameras`
    /// cameras on a ring looking at the room centre. Objects are at least
    /// 0.3 m apart.
    pub fn random_room(seed: u64, n_objects: usize, n_cameras: usize, side: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f00d);
        let slots_per_side = ((n_objects as f64).sqrt().ceil() as usize).max(1);
        let slot = side / slots_per_side as f64;
        let mut free: Vec<usize> = (0..slots_per_side * slots_per_side).collect();
        let mut objects = Vec::with_capacity(n_objects);
        for _ in 0..n_objects {
            let pick = free.swap_remove(rng.random_range(0..free.len()));
            let (sx, sy) = ((pick % slots_per_side) as f64, (pick / slots_per_side) as f64);
            let max_xy = (slot - 0.3).clamp(0.1, 0.9);
            let size = [
                rng.random_range(0.5..=1.0) * max_xy,
                rng.random_range(0.5..=1.0) * max_xy,
                rng.random_range(0.3..=1.0),
            ];
            let shape = if rng.random_bool(0.3) { Shape::Cylinder } else { Shape::Cuboid };
            let half = size[0].max(size[1]) / 2.0;
            let wiggle = (slot / 2.0 - half - 0.15).max(0.0);
            let cx = -side / 2.0 + (sx + 0.5) * slot + rng.random_range(-1.0..=1.0) * wiggle;
            let cy = -side / 2.0 + (sy + 0.5) * slot + rng.random_range(-1.0..=1.0) * wiggle;
            objects.push(SynthObject {
                shape,
                center: [cx, cy, size[2] / 2.0],
                yaw: 0.0,
                size,
                feature: None,
                color: None,
                instance: None,
            });
        }
        let ring = side * 0.75;
        let cameras = (0..n_cameras)
            .map(|k| {
                let a = 2.0 * PI * k as f64 / n_cameras.max(1) as f64 + 0.3;
                SynthCamera {
                    position: [ring * a.cos(), ring * a.sin(), 1.8],
                    look_at: [0.0, 0.0, 0.2],
                    up: default_up(),
                    width: default_width(),
                    height: default_height(),
                    focal: Some(default_width() as f64 * 0.5),
                }
            })
            .collect();
        SynthSpec {
            room: Some(Room {
                floor_min: [-side / 2.0; 2],
                floor_max: [side / 2.0; 2],
                floor_z: 0.0,
                wall_height: 0.0,
            }),
            cameras,
            ..SynthSpec::new(seed, objects)
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.feature_dim < 2 {
            return bad("feature_dim must be at least 2".into());
        }
        if !(self.points_per_m2 > 0.0 && self.points_per_m2.is_finite()) {
            return bad("points_per_m2 must be positive".into());
        }
        if self.pixel_footprint == 0 {
            return bad("pixel_footprint must be positive".into());
        }
        if !(self.noise.feature_sigma >= 0.0 && self.noise.position_sigma >= 0.0) {
            return bad("noise must be non-negative".into());
        }
        if !(-1.0..=1.0).contains(&self.max_feature_similarity) {
            return bad("max_feature_similarity must lie in [-1, 1]".into());
        }
        for (k, o) in self.objects.iter().enumerate() {
            if o.size.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
                return bad(format!("object {k} has a non-positive size"));
            }
            if let Some(f) = &o.feature {
                if f.len() != self.feature_dim || f.iter().all(|&x| x == 0.0) || f.iter().any(|x| !x.is_finite()) {
                    return bad(format!("object {k} feature must be a finite non-zero {}-vector", self.feature_dim));
                }
            }
            if let Some(c) = o.color {
                if c.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                    return bad(format!("object {k} colour outside [0, 1]"));
                }
            }
        }
        if let Some(r) = &self.room {
            if !(r.floor_min[0] < r.floor_max[0] && r.floor_min[1] < r.floor_max[1]) || r.wall_height < 0.0 {
                return bad("room extents are empty".into());
            }
        }
        for (k, c) in self.cameras.iter().enumerate() {
            if c.width == 0 || c.height == 0 || c.focal.is_some_and(|f| !(f > 0.0)) {
                return bad(format!("camera {k} has an empty image or bad focal length"));
            }
        }
        Ok(())
    }
}

/// A generated scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub cloud: SceneCloud,
    pub ground_truth: InstanceSet,
    pub frames: Vec<FrameObservation>,
    /// Ground-truth instance of every point, `None` for room points.
    pub labels: Vec<Option<u32>>,
    pub warnings: Vec<SynthWarning>,
}

impl SynthScene {
    /// Tight box around each ground-truth instance, in instance order.
    pub fn gt_boxes(&self) -> Vec<Aabb> {
        self.ground_truth
            .instances
            .iter()
            .map(|i| Aabb::from_points(i.point_ids.iter().map(|&p| to_f64(self.cloud.positions[p as usize]))))
            .collect()
    }
}

struct Surface {
    origin: Vec3,
    u: Vec3,
    v: Vec3,
    normal: Vec3,
}

fn rotate_z(p: Vec3, yaw: f64) -> Vec3 {
    let (s, c) = yaw.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]]
}

fn cuboid_faces(size: [f64; 3]) -> Vec<Surface> {
    let h = [size[0] / 2.0, size[1] / 2.0, size[2] / 2.0];
    let mut faces = Vec::with_capacity(6);
    for axis in 0..3 {
        let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
        for sign in [-1.0, 1.0] {
            let mut origin = [0.0; 3];
            origin[axis] = sign * h[axis];
            origin[a] = -h[a];
            origin[b] = -h[b];
            let mut u = [0.0; 3];
            u[a] = size[a];
            let mut v = [0.0; 3];
            v[b] = size[b];
            let mut normal = [0.0; 3];
            normal[axis] = sign;
            faces.push(Surface { origin, u, v, normal });
        }
    }
    faces
}

fn sample_count(area: f64, density: f64) -> usize {
    ((area * density).round() as usize).max(1)
}

/// Surface samples of one object in its local frame, with outward normals.
fn sample_shape(shape: Shape, size: [f64; 3], density: f64, rng: &mut ChaCha8Rng) -> Vec<(Vec3, Vec3)> {
    let mut out = Vec::new();
    match shape {
        Shape::Cuboid => {
            for f in cuboid_faces(size) {
                let area = (f.u[0] + f.u[1] + f.u[2]) * (f.v[0] + f.v[1] + f.v[2]);
                for _ in 0..sample_count(area, density) {
                    let (s, t): (f64, f64) = (rng.random(), rng.random());
                    let p = std::array::from_fn(|k| f.origin[k] + s * f.u[k] + t * f.v[k]);
                    out.push((p, f.normal));
                }
            }
        }
        Shape::Cylinder => {
            let (r, h) = (size[0] / 2.0, size[2]);
            for _ in 0..sample_count(2.0 * PI * r * h, density) {
                let (a, z): (f64, f64) = (rng.random_range(0.0..2.0 * PI), rng.random_range(-h / 2.0..=h / 2.0));
                let (s, c) = a.sin_cos();
                out.push(([r * c, r * s, z], [c, s, 0.0]));
            }
            for sign in [-1.0, 1.0] {
                for _ in 0..sample_count(PI * r * r, density) {
                    let rho = r * rng.random::<f64>().sqrt();
                    let a = rng.random_range(0.0..2.0 * PI);
                    out.push(([rho * a.cos(), rho * a.sin(), sign * h / 2.0], [0.0, 0.0, sign]));
                }
            }
        }
    }
    out
}

fn footprint_contains(o: &SynthObject, x: f64, y: f64) -> bool {
    let local = rotate_z([x - o.center[0], y - o.center[1], 0.0], -o.yaw);
    match o.shape {
        Shape::Cuboid => local[0].abs() <= o.size[0] / 2.0 && local[1].abs() <= o.size[1] / 2.0,
        Shape::Cylinder => local[0].hypot(local[1]) <= o.size[0] / 2.0,
    }
}

fn touches_floor(o: &SynthObject, floor_z: f64) -> bool {
    (o.center[2] - o.size[2] / 2.0 - floor_z).abs() < 0.02
}

fn random_unit(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.iter().map(|x| (x / n) as f32).collect();
        }
    }
}

fn normalized(v: &[f64]) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / n) as f32).collect()
}

/// Draws unit features, each at most `max_sim` similar to every fixed one and
/// to every earlier draw.
fn dissimilar_features(
    fixed: &[Vec<f32>],
    count: usize,
    dim: usize,
    max_sim: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<f32>>, SynthError> {
    let mut out: Vec<Vec<f32>> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut found = None;
        for _ in 0..10_000 {
            let cand = random_unit(dim, rng);
            let ok = fixed.iter().chain(&out).all(|f| cosine_sim(&cand, f).map_or(true, |s| s <= max_sim));
            if ok {
                found = Some(cand);
                break;
            }
        }
        out.push(found.ok_or(SynthError::FeatureSampling(fixed.len() + count, dim))?);
    }
    Ok(out)
}

fn noisy(base: &[f32], sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    if sigma == 0.0 {
        return base.to_vec();
    }
    let n = Normal::new(0.0, sigma).expect("sigma validated");
    loop {
        let v: Vec<f32> = base.iter().map(|&b| b + n.sample(rng) as f32).collect();
        if v.iter().any(|&x| x != 0.0) {
            return v;
        }
    }
}

const BACKGROUND: u32 = u32::MAX;

/// Generates the cloud, ground truth and rendered frames for `spec`.
pub fn generate(spec: &SynthSpec) -> Result<SynthScene, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dim = spec.feature_dim;

    // instance index of every object, in order of first appearance
    let mut instance_labels: Vec<Option<u32>> = Vec::new();
    let object_instance: Vec<usize> = spec
        .objects
        .iter()
        .map(|o| match o.instance {
            Some(l) => match instance_labels.iter().position(|&x| x == Some(l)) {
                Some(k) => k,
                None => {
                    instance_labels.push(Some(l));
                    instance_labels.len() - 1
                }
            },
            None => {
                instance_labels.push(None);
                instance_labels.len() - 1
            }
        })
        .collect();
    let n_inst = instance_labels.len();

    for a in 0..spec.objects.len() {
        for b in a + 1..spec.objects.len() {
            if object_instance[a] == object_instance[b] {
                continue;
            }
            if let (Some(fa), Some(fb)) = (&spec.objects[a].feature, &spec.objects[b].feature) {
                let s = cosine_sim(fa, fb).unwrap_or(0.0);
                if s > spec.max_feature_similarity {
                    return Err(SynthError::SimilarFeatures(a, b, s, spec.max_feature_similarity));
                }
            }
        }
    }

    // one base feature per instance, plus floor and walls
    let fixed: Vec<Vec<f32>> = (0..n_inst)
        .filter_map(|i| {
            let members: Vec<usize> = (0..spec.objects.len()).filter(|&o| object_instance[o] == i).collect();
            spec.objects[members[0]].feature.clone().filter(|_| members.len() == 1)
        })
        .collect();
    let needs_base: Vec<usize> = (0..n_inst)
        .filter(|&i| {
            let members: Vec<usize> = (0..spec.objects.len()).filter(|&o| object_instance[o] == i).collect();
            !(members.len() == 1 && spec.objects[members[0]].feature.is_some())
        })
        .collect();
    let mut drawn =
        dissimilar_features(&fixed, needs_base.len() + 2, dim, spec.max_feature_similarity, &mut rng)?.into_iter();
    let mut base: Vec<Vec<f32>> = vec![Vec::new(); n_inst];
    for &i in &needs_base {
        base[i] = drawn.next().expect("drawn enough");
    }
    for (o, obj) in spec.objects.iter().enumerate() {
        let i = object_instance[o];
        if base[i].is_empty() {
            base[i] = obj.feature.clone().expect("fixed feature");
        }
    }
    let floor_feature = drawn.next().expect("drawn enough");
    let wall_feature = drawn.next().expect("drawn enough");

    let object_features: Vec<Vec<f32>> = spec
        .objects
        .iter()
        .enumerate()
        .map(|(o, obj)| {
            let i = object_instance[o];
            let shared = object_instance.iter().filter(|&&x| x == i).count() > 1;
            match (&obj.feature, shared) {
                (Some(f), _) => f.clone(),
                (None, false) => base[i].clone(),
                (None, true) => {
                    let jitter = random_unit(dim, &mut rng);
                    let v: Vec<f64> =
                        base[i].iter().zip(&jitter).map(|(&b, &j)| b as f64 + spec.part_variation * j as f64).collect();
                    normalized(&v)
                }
            }
        })
        .collect();
    let object_colors: Vec<[f32; 3]> = spec
        .objects
        .iter()
        .map(|o| o.color.unwrap_or_else(|| std::array::from_fn(|_| rng.random_range(0.2f32..0.9))))
        .collect();

    let mut positions: Vec<[f32; 3]> = Vec::new();
    let mut normals: Vec<[f32; 3]> = Vec::new();
    let mut colors: Vec<[f32; 3]> = Vec::new();
    let mut rows: Vec<f32> = Vec::new();
    let mut labels: Vec<Option<u32>> = Vec::new();
    let jitter = Normal::new(0.0, spec.noise.position_sigma.max(0.0)).expect("sigma validated");
    let mut push = |p: Vec3, n: Vec3, color: [f32; 3], feature: &[f32], label: Option<u32>, rng: &mut ChaCha8Rng| {
        let q: [f32; 3] = std::array::from_fn(|k| {
            (p[k] + if spec.noise.position_sigma > 0.0 { jitter.sample(rng) } else { 0.0 }) as f32
        });
        positions.push(q);
        normals.push(normalized(&n).try_into().expect("3-vector"));
        colors.push(color);
        rows.extend(noisy(feature, spec.noise.feature_sigma, rng));
        labels.push(label);
    };

    for (o, obj) in spec.objects.iter().enumerate() {
        for (p, n) in sample_shape(obj.shape, obj.size, spec.points_per_m2, &mut rng) {
            let w = rotate_z(p, obj.yaw);
            let world = [w[0] + obj.center[0], w[1] + obj.center[1], w[2] + obj.center[2]];
            let label = Some(object_instance[o] as u32);
            push(world, rotate_z(n, obj.yaw), object_colors[o], &object_features[o], label, &mut rng);
        }
    }

    if let Some(room) = &spec.room {
        let (x0, y0) = (room.floor_min[0], room.floor_min[1]);
        let (x1, y1) = (room.floor_max[0], room.floor_max[1]);
        let resting: Vec<&SynthObject> = spec.objects.iter().filter(|o| touches_floor(o, room.floor_z)).collect();
        let gray = [0.5f32, 0.5, 0.5];
        for _ in 0..sample_count((x1 - x0) * (y1 - y0), spec.points_per_m2) {
            let (x, y) = (rng.random_range(x0..=x1), rng.random_range(y0..=y1));
            // the floor under an object is hidden
            if resting.iter().any(|o| footprint_contains(o, x, y)) {
                continue;
            }
            push([x, y, room.floor_z], [0.0, 0.0, 1.0], gray, &floor_feature, None, &mut rng);
        }
        if room.wall_height > 0.0 {
            let walls = [
                ([x0, y0], [x1, y0], [0.0, 1.0]),
                ([x1, y0], [x1, y1], [-1.0, 0.0]),
                ([x1, y1], [x0, y1], [0.0, -1.0]),
                ([x0, y1], [x0, y0], [1.0, 0.0]),
            ];
            let beige = [0.8f32, 0.75, 0.65];
            for (a, b, n) in walls {
                let len = (b[0] - a[0]).hypot(b[1] - a[1]);
                for _ in 0..sample_count(len * room.wall_height, spec.points_per_m2) {
                    let s: f64 = rng.random();
                    let z = room.floor_z + rng.random_range(0.0..=room.wall_height);
                    let p = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1]), z];
                    push(p, [n[0], n[1], 0.0], beige, &wall_feature, None, &mut rng);
                }
            }
        }
    }

    let features =
        FeatureMatrix::new(positions.len(), dim, rows).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
    let cloud = SceneCloud::new(positions, Some(colors), Some(normals), Some(features))
        .map_err(|e| SynthError::InvalidSpec(e.to_string()))?;

    let mut gt_points: Vec<Vec<PointId>> = vec![Vec::new(); n_inst];
    for (p, l) in labels.iter().enumerate() {
        if let Some(l) = l {
            gt_points[*l as usize].push(p as PointId);
        }
    }
    let ground_truth =
        InstanceSet::new(gt_points.into_iter().map(|ids| Instance::new(ids, 1.0, InstanceKind::Object)).collect());

    let instance_features: Vec<Vec<f32>> = (0..n_inst)
        .map(|i| {
            let mut sum = vec![0.0f64; dim];
            for (o, f) in object_features.iter().enumerate() {
                if object_instance[o] == i {
                    sum.iter_mut().zip(f).for_each(|(s, &x)| *s += x as f64);
                }
            }
            normalized(&sum)
        })
        .collect();

    let mut frames = Vec::with_capacity(spec.cameras.len());
    let mut seen_in_front = vec![false; n_inst];
    for (k, cam) in spec.cameras.iter().enumerate() {
        let pose = Pose::look_at(cam.position, cam.look_at, cam.up)
            .ok_or_else(|| SynthError::InvalidSpec(format!("camera {k} has no well-defined orientation")))?;
        let focal = cam.focal.unwrap_or(0.75 * cam.width as f64);
        let intrinsics = Intrinsics { fx: focal, fy: focal, cx: cam.width as f64 / 2.0, cy: cam.height as f64 / 2.0 };
        let (depth, owner) =
            render(&cloud.positions, &labels, &pose, &intrinsics, cam.width, cam.height, spec.pixel_footprint);
        for (p, l) in labels.iter().enumerate() {
            if let Some(l) = l {
                if pose.world_to_camera(to_f64(cloud.positions[p]))[2] > 0.0 {
                    seen_in_front[*l as usize] = true;
                }
            }
        }
        let mut masks = Vec::new();
        for (i, feature) in instance_features.iter().enumerate() {
            let bits: Vec<bool> = owner.iter().map(|&o| o == i as u32).collect();
            if bits.iter().any(|&b| b) {
                let bitmap = Bitmap { width: cam.width, height: cam.height, bits };
                masks.push(MaskEntry { bitmap, feature: noisy(feature, spec.noise.feature_sigma, &mut rng) });
            }
        }
        frames.push(FrameObservation {
            frame_id: k as u32,
            intrinsics,
            width: cam.width,
            height: cam.height,
            extrinsics: pose,
            depth,
            masks,
        });
    }
    let mut warnings = Vec::new();
    if !spec.cameras.is_empty() {
        for (instance, seen) in seen_in_front.iter().enumerate() {
            if !seen {
                log::warn!("instance {instance} is behind every camera; it has no masks");
                warnings.push(SynthWarning::DegenerateCamera { instance });
            }
        }
    }

    Ok(SynthScene { cloud, ground_truth, frames, labels, warnings })
}

/// Splats every point as a `footprint` × `footprint` square into a z-buffer.
/// Returns the depth image (0 where nothing landed) and the label owning each pixel.
fn render(
    positions: &[[f32; 3]],
    labels: &[Option<u32>],
    pose: &Pose,
    intrinsics: &Intrinsics,
    width: usize,
    height: usize,
    footprint: usize,
) -> (Vec<f32>, Vec<u32>) {
    let mut depth = vec![f32::INFINITY; width * height];
    let mut owner = vec![BACKGROUND; width * height];
    let reach = (footprint as i64 - 1) / 2;
    for (p, &pos) in positions.iter().enumerate() {
        let pc = pose.world_to_camera(to_f64(pos));
        let Some((u, v)) = intrinsics.project(pc) else { continue };
        if !(u.is_finite() && v.is_finite()) {
            continue;
        }
        let (col, row) = (u.floor() as i64, v.floor() as i64);
        let z = pc[2] as f32;
        for r in row - reach..row - reach + footprint as i64 {
            for c in col - reach..col - reach + footprint as i64 {
                if r < 0 || c < 0 || r >= height as i64 || c >= width as i64 {
                    continue;
                }
                let k = r as usize * width + c as usize;
                if z < depth[k] {
                    depth[k] = z;
                    owner[k] = labels[p].unwrap_or(BACKGROUND);
                }
            }
        }
    }
    for d in &mut depth {
        if !d.is_finite() {
            *d = 0.0;
        }
    }
    (depth, owner)
}
