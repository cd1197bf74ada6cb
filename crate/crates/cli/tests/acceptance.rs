//! Acceptance checks for the library and the `p2o` binary. Prints one
//! PASS/FAIL line per check and exits non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use p2o_core::eval::{evaluate_at, standard_thresholds};
use p2o_core::geometry::{Aabb, Intrinsics, Pose};
use p2o_core::hierarchy::{
    candidate_pairs_with_stats, collect_objects, collect_parts, drop_largest_planar, initial_layer, run_hierarchy,
    run_layer, CollectedObjects, MergeParams, ObjectRule,
};
use p2o_core::objectness::{build_priors, match_adjacent, project_mask_points, propagate_sameness, MaskRef};
use p2o_core::scene_io::{
    load_scene, Bitmap, FeatureMatrix, FrameObservation, Instance, InstanceKind, InstanceSet, MaskEntry, SceneCloud,
};
use p2o_core::synth::{generate, Room, Shape, SynthCamera, SynthObject, SynthSpec};
use p2o_core::{build_superpoints, evaluate, fuse_feature, ClusterFeature, MatchParams, PointId, SuperpointParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Check = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() {
    let checks: [Check; 9] = [
        ("feature fusion matches direct evaluation", fusion_oracle),
        ("merge step matches brute-force enumeration", merge_oracle),
        ("layers and parts are partitions", partition_invariants),
        ("prior boxes keep objects apart", prior_efficacy),
        ("mask matching and track propagation match oracles", matching_oracle),
        ("mask projection recovers visible faces", projection_oracle),
        ("AP evaluator matches exhaustive matching", evaluator_oracle),
        ("end-to-end run is deterministic and fast", end_to_end_determinism),
        ("clustering a 500k-point scene is fast", performance_floor),
    ];
    let mut failures = 0;
    for (k, (name, run)) in checks.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {}. {name}: {detail} [{secs:.1}s]", k + 1),
            Err(detail) => {
                failures += 1;
                println!("FAIL {}. {name}: {detail} [{secs:.1}s]", k + 1);
            }
        }
    }
    println!("{} of {} acceptance checks passed", checks.len() - failures, checks.len());
    if failures > 0 {
        std::process::exit(1);
    }
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let na = a.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    let nb = b.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn random_vec(rng: &mut ChaCha8Rng, dim: usize, bias: f64) -> Vec<f32> {
    (0..dim).map(|_| (bias + rng.random_range(-1.0..1.0)) as f32).collect()
}

// ---------------------------------------------------------------------------

fn direct_fusion(rows: &[Vec<f32>]) -> Vec<f64> {
    let dim = rows[0].len();
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..dim).map(|d| rows.iter().map(|r| r[d] as f64).sum::<f64>() / n).collect();
    let mean_norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
    let weights: Vec<f64> = rows
        .iter()
        .map(|r| {
            let dot: f64 = r.iter().zip(&mean).map(|(&x, m)| x as f64 * m).sum();
            let norm = r.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
            (dot / (norm * mean_norm)).max(0.0)
        })
        .collect();
    let total: f64 = weights.iter().sum();
    (0..dim).map(|d| rows.iter().zip(&weights).map(|(r, w)| w * r[d] as f64).sum::<f64>() / total).collect()
}

fn fusion_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let dim = rng.random_range(2..=64);
        let n = rng.random_range(1..=200);
        let bias = if case % 2 == 0 { 0.0 } else { rng.random_range(0.0..1.0) };
        let rows: Vec<Vec<f32>> = (0..n).map(|_| random_vec(&mut rng, dim, bias)).collect();
        let refs: Vec<&[f32]> = rows.iter().map(Vec::as_slice).collect();
        let got = fuse_feature(&refs).map_err(|e| format!("case {case}: {e}"))?;
        let want = direct_fusion(&rows);
        let diff = got.vector.iter().zip(&want).map(|(&g, w)| (g as f64 - w).powi(2)).sum::<f64>().sqrt();
        let scale = want.iter().map(|w| w * w).sum::<f64>().sqrt();
        worst = worst.max(diff / scale);
    }
    let secs = start.elapsed().as_secs_f64();
    check(worst <= 1e-6 && secs < 5.0, format!("1000 cases, max relative error {worst:.2e}, {secs:.2}s"))
}

// ---------------------------------------------------------------------------

fn fraction_inside(ids: &[PointId], b: &Aabb, positions: &[[f32; 3]]) -> f64 {
    let inside = ids
        .iter()
        .filter(|&&p| {
            let q = positions[p as usize];
            (0..3).all(|a| q[a] as f64 >= b.min[a] && q[a] as f64 <= b.max[a])
        })
        .count();
    inside as f64 / ids.len() as f64
}

fn merge_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut accepted, mut vetoed) = (0, 0);
    for case in 0..200 {
        let n = rng.random_range(1..=12);
        let mut positions: Vec<[f32; 3]> = Vec::new();
        let mut parts: Vec<Vec<PointId>> = Vec::new();
        for _ in 0..n {
            let c: [f64; 3] = [rng.random_range(0.0..0.6), rng.random_range(0.0..0.6), rng.random_range(0.0..0.3)];
            let k = rng.random_range(1..=8);
            let ids = (0..k)
                .map(|_| {
                    positions.push([
                        (c[0] + rng.random_range(-0.06..0.06)) as f32,
                        (c[1] + rng.random_range(-0.06..0.06)) as f32,
                        (c[2] + rng.random_range(-0.06..0.06)) as f32,
                    ]);
                    (positions.len() - 1) as PointId
                })
                .collect();
            parts.push(ids);
        }
        let layer = initial_layer(&parts, positions.len()).map_err(|e| e.to_string())?;
        let mut features: Vec<Vec<f32>> = Vec::new();
        for i in 0..n {
            let f = if i > 0 && rng.random_bool(0.15) {
                features[rng.random_range(0..i)].clone()
            } else {
                random_vec(&mut rng, 4, 0.3)
            };
            features.push(f);
        }
        let cluster_features: Vec<ClusterFeature> =
            features.iter().map(|f| ClusterFeature { vector: f.clone() }).collect();
        let point_rows: Vec<f32> = (0..positions.len() * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let point_features = FeatureMatrix::new(positions.len(), 4, point_rows).map_err(|e| e.to_string())?;

        let mut boxes = Vec::new();
        for _ in 0..rng.random_range(0..=3) {
            let members: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.3)).collect();
            let pad = rng.random_range(-0.02..0.03);
            let b = if members.is_empty() {
                let lo: [f64; 3] = [rng.random_range(0.0..0.5), rng.random_range(0.0..0.5), rng.random_range(0.0..0.2)];
                Aabb::new(lo, [lo[0] + 0.2, lo[1] + 0.2, lo[2] + 0.2])
            } else {
                let tight = Aabb::from_points(
                    members.iter().flat_map(|&m| parts[m].iter().map(|&p| positions[p as usize].map(f64::from))),
                );
                Aabb::new(tight.min.map(|x| x - pad), tight.max.map(|x| x + pad))
            };
            boxes.push(b);
        }
        let k_tenths = rng.random_range(1..=10usize);
        let inside_frac = [0.9, 0.75, 1.0][rng.random_range(0..3)];
        let params = MergeParams {
            k_fraction: k_tenths as f64 / 10.0,
            t: rng.random_range(0.0..0.3),
            inside_frac,
            outside_frac: [0.1, 0.25, 0.0][rng.random_range(0..3)],
            ..MergeParams::default()
        };

        // brute force: every pair, exact closest-point distance
        let mut candidates = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let mut d = f64::INFINITY;
                for &a in &parts[i] {
                    for &b in &parts[j] {
                        let (pa, pb) = (positions[a as usize], positions[b as usize]);
                        let dd = (0..3).map(|k| (pa[k] as f64 - pb[k] as f64).powi(2)).sum::<f64>().sqrt();
                        d = d.min(dd);
                    }
                }
                if d <= params.t {
                    candidates.push((cosine(&features[i], &features[j]), i, j));
                }
            }
        }
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
        let keep = (k_tenths * candidates.len()).div_ceil(10);
        let stops = |i: usize, j: usize| {
            boxes.iter().any(|b| {
                let fa = fraction_inside(&parts[i], b, &positions);
                let fb = fraction_inside(&parts[j], b, &positions);
                (fa >= params.inside_frac && fb <= params.outside_frac)
                    || (fb >= params.inside_frac && fa <= params.outside_frac)
            })
        };
        let (want_acc, want_rej): (Vec<_>, Vec<_>) =
            candidates[..keep].iter().map(|&(_, i, j)| (i, j)).partition(|&(i, j)| !stops(i, j));

        let out = run_layer(&layer, &cluster_features, &positions, &point_features, &boxes, &params);
        let got_acc: BTreeSet<_> = out.log.accepted.iter().copied().collect();
        let got_rej: BTreeSet<_> = out.log.rejected.iter().copied().collect();
        if got_acc != want_acc.iter().copied().collect() || got_rej != want_rej.iter().copied().collect() {
            return Err(format!("case {case}: accepted {got_acc:?}, expected {want_acc:?}"));
        }
        accepted += want_acc.len();
        vetoed += want_rej.len();
    }
    check(true, format!("200 layers, {accepted} accepted and {vetoed} vetoed merges agree"))
}

// ---------------------------------------------------------------------------

fn partition_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut violations = Vec::new();
    let (mut layers_checked, mut parts_checked) = (0, 0);
    for s in 0..50u64 {
        let mut spec = SynthSpec::random_room(100 + s, rng.random_range(1..=5), 4, rng.random_range(1.8..3.0));
        spec.points_per_m2 = 1200.0;
        let scene = generate(&spec).map_err(|e| e.to_string())?;
        let cloud = &scene.cloud;
        let layer0 = build_superpoints(cloud, &SuperpointParams::default()).map_err(|e| e.to_string())?;
        let priors = build_priors(cloud, &scene.frames, &MatchParams::default()).map_err(|e| e.to_string())?;
        let boxes: Vec<Aabb> = priors.iter().map(|p| p.bbox()).collect();
        let params = MergeParams {
            k_fraction: rng.random_range(0.3..=1.0),
            object_rule: if s % 5 == 4 { ObjectRule::AnyLayer } else { ObjectRule::Terminal },
            ..MergeParams::default()
        };
        let h = run_hierarchy(&layer0, cloud, &boxes, &params).map_err(|e| e.to_string())?;

        for (l, layer) in h.layers.iter().enumerate() {
            let mut seen = vec![0u32; cloud.len()];
            for c in layer {
                for &p in &c.point_ids {
                    seen[p as usize] += 1;
                }
            }
            if let Some(p) = seen.iter().position(|&k| k != 1) {
                violations.push(format!("scene {s} layer {l}: point {p} covered {} times", seen[p]));
            }
            layers_checked += 1;
        }

        let objects = collect_objects(&h, &params);
        let mut owner: Vec<Option<usize>> = vec![None; cloud.len()];
        for (o, (&id, inst)) in objects.clusters.iter().zip(&objects.instances.instances).enumerate() {
            if params.object_rule == ObjectRule::Terminal {
                for &p in &inst.point_ids {
                    if owner[p as usize].replace(o).is_some() {
                        violations.push(format!("scene {s}: point {p} in two objects"));
                    }
                }
            }
            let single = CollectedObjects { clusters: vec![id], instances: InstanceSet::new(vec![inst.clone()]) };
            let mut covered: Vec<PointId> = Vec::new();
            for part in &collect_parts(&h, &single).instances {
                covered.extend(&part.point_ids);
                parts_checked += 1;
            }
            covered.sort_unstable();
            if covered != inst.point_ids {
                violations.push(format!("scene {s}: parts of object {o} do not partition it"));
            }
        }
    }
    check(
        violations.is_empty(),
        format!(
            "50 scenes, {layers_checked} layers, {parts_checked} parts, {} violations{}",
            violations.len(),
            violations.first().map(|v| format!(" (first: {v})")).unwrap_or_default()
        ),
    )
}

// ---------------------------------------------------------------------------

fn object(shape: Shape, center: [f64; 3], size: [f64; 3]) -> SynthObject {
    SynthObject { shape, center, yaw: 0.0, size, feature: None, color: None, instance: None }
}

/// Three objects on a 4 m x 4 m floor, seen by six cameras on a ring.
fn three_object_room() -> SynthSpec {
    let objects = vec![
        object(Shape::Cuboid, [-1.0, -0.8, 0.3], [0.6, 0.5, 0.6]),
        object(Shape::Cylinder, [0.9, -0.6, 0.4], [0.5, 0.5, 0.8]),
        object(Shape::Cuboid, [0.0, 1.0, 0.25], [0.8, 0.4, 0.5]),
    ];
    let cameras = (0..6)
        .map(|k| {
            let a = std::f64::consts::TAU * k as f64 / 6.0 + 0.3;
            SynthCamera {
                position: [2.5 * a.cos(), 2.5 * a.sin(), 1.8],
                look_at: [0.0, 0.0, 0.2],
                up: [0.0, 0.0, 1.0],
                width: 320,
                height: 240,
                focal: Some(160.0),
            }
        })
        .collect();
    SynthSpec {
        room: Some(Room { floor_min: [-2.0, -2.0], floor_max: [2.0, 2.0], floor_z: 0.0, wall_height: 0.0 }),
        cameras,
        ..SynthSpec::new(1, objects)
    }
}

fn prior_efficacy() -> Outcome {
    let scene = generate(&three_object_room()).map_err(|e| e.to_string())?;
    let cloud = &scene.cloud;
    let layer0 = build_superpoints(cloud, &SuperpointParams::default()).map_err(|e| e.to_string())?;
    let ap50 = |boxes: &[Aabb], params: MergeParams| -> Result<(f64, usize), String> {
        let h = run_hierarchy(&layer0, cloud, boxes, &params).map_err(|e| e.to_string())?;
        let mut objects = collect_objects(&h, &params);
        drop_largest_planar(&mut objects, &cloud.positions, 1);
        Ok((evaluate(&objects.instances, &scene.ground_truth).ap50, objects.instances.len()))
    };
    let (with, n_with) = ap50(&scene.gt_boxes(), MergeParams::default())?;
    let (without, n_without) = ap50(&[], MergeParams { k_fraction: 1.0, ..MergeParams::default() })?;
    check(
        with == 1.0 && without < 1.0,
        format!("with priors AP50 {with:.3} ({n_with} objects), without priors at K=1 AP50 {without:.3} ({n_without} objects)"),
    )
}

// ---------------------------------------------------------------------------

fn frame_with_features(frame_id: u32, features: Vec<Vec<f32>>) -> FrameObservation {
    FrameObservation {
        frame_id,
        intrinsics: Intrinsics { fx: 1.0, fy: 1.0, cx: 0.5, cy: 0.5 },
        width: 1,
        height: 1,
        extrinsics: Pose::identity(),
        depth: vec![1.0],
        masks: features.into_iter().map(|feature| MaskEntry { bitmap: Bitmap::new(1, 1), feature }).collect(),
    }
}

fn bfs_components(nodes: &[MaskRef], links: &[(MaskRef, MaskRef)]) -> BTreeSet<Vec<MaskRef>> {
    let mut adj: HashMap<MaskRef, Vec<MaskRef>> = HashMap::new();
    for &(a, b) in links {
        adj.entry(a).or_default().push(b);
        adj.entry(b).or_default().push(a);
    }
    let mut seen = BTreeSet::new();
    let mut out = BTreeSet::new();
    for &start in nodes {
        if !seen.insert(start) {
            continue;
        }
        let mut comp = vec![start];
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &v in adj.get(&u).map(Vec::as_slice).unwrap_or(&[]) {
                if seen.insert(v) {
                    comp.push(v);
                    queue.push_back(v);
                }
            }
        }
        comp.sort_unstable();
        out.insert(comp);
    }
    out
}

fn matching_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut total_links = 0;
    for g in 0..100 {
        let n_frames = rng.random_range(1..=6u32);
        let counts: Vec<(u32, usize)> = (0..n_frames).map(|f| (3 * f + 1, rng.random_range(0..=5))).collect();
        let mut links = Vec::new();
        for w in counts.windows(2) {
            let ((fa, na), (fb, nb)) = (w[0], w[1]);
            if nb == 0 {
                continue;
            }
            for i in 0..na {
                if rng.random_bool(0.6) {
                    links.push(((fa, i), (fb, rng.random_range(0..nb))));
                }
            }
        }
        let nodes: Vec<MaskRef> = counts.iter().flat_map(|&(f, n)| (0..n).map(move |m| (f, m))).collect();
        let tracks = propagate_sameness(&counts, &links);
        let got: BTreeSet<Vec<MaskRef>> = tracks
            .iter()
            .map(|t| {
                let mut m = t.members.clone();
                m.sort_unstable();
                m
            })
            .collect();
        if got != bfs_components(&nodes, &links) || got.len() != tracks.len() {
            return Err(format!("link graph {g}: components differ"));
        }
        let firsts: Vec<MaskRef> = tracks.iter().map(|t| *t.members.iter().min().expect("non-empty")).collect();
        if firsts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(format!("link graph {g}: tracks not ordered by smallest member"));
        }
        total_links += links.len();
    }

    let mut matched = 0;
    for case in 0..100 {
        let dim = rng.random_range(2..=8);
        let na = rng.random_range(0..=6);
        let nb = rng.random_range(0..=6);
        let fa: Vec<Vec<f32>> = (0..na).map(|_| random_vec(&mut rng, dim, 0.2)).collect();
        let mut fb: Vec<Vec<f32>> = Vec::new();
        for j in 0..nb {
            let f = if j > 0 && rng.random_bool(0.3) {
                fb[rng.random_range(0..j)].clone()
            } else if na > 0 && rng.random_bool(0.3) {
                fa[rng.random_range(0..na)].iter().map(|x| x * 2.0).collect()
            } else {
                random_vec(&mut rng, dim, 0.2)
            };
            fb.push(f);
        }
        let tau = rng.random_range(-0.2..0.8);
        let mut want = Vec::new();
        for (i, a) in fa.iter().enumerate() {
            let mut best: Option<(usize, f64)> = None;
            for (j, b) in fb.iter().enumerate() {
                let s = cosine(a, b);
                if best.is_none() || s > best.expect("set").1 {
                    best = Some((j, s));
                }
            }
            if let Some((j, s)) = best {
                if s > tau {
                    want.push((i, j));
                }
            }
        }
        let got = match_adjacent(&frame_with_features(0, fa), &frame_with_features(1, fb), tau);
        if got != want {
            return Err(format!("feature set {case}: got {got:?}, expected {want:?}"));
        }
        matched += got.len();
    }
    check(true, format!("100 link graphs ({total_links} links), 100 feature sets ({matched} matches) agree"))
}

// ---------------------------------------------------------------------------

const HALF: f64 = 0.5;

/// Entry distance along `dir` from `origin` into the cube `[-HALF, HALF]^3`.
fn cube_hit(origin: [f64; 3], dir: [f64; 3]) -> Option<f64> {
    let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
    for a in 0..3 {
        if dir[a].abs() < 1e-15 {
            if origin[a].abs() > HALF {
                return None;
            }
            continue;
        }
        let (ta, tb) = ((-HALF - origin[a]) / dir[a], (HALF - origin[a]) / dir[a]);
        t0 = t0.max(ta.min(tb));
        t1 = t1.min(ta.max(tb));
    }
    (t0 <= t1 && t0 > 0.0).then_some(t0)
}

fn camera_dir(pose: &Pose, ray: [f64; 3]) -> [f64; 3] {
    let w = pose.camera_to_world(ray);
    let e = pose.translation();
    [w[0] - e[0], w[1] - e[1], w[2] - e[2]]
}

fn projection_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut positions: Vec<[f32; 3]> = Vec::new();
    let mut face_normal: Vec<Option<[f64; 3]>> = Vec::new();
    for axis in 0..3 {
        for sign in [-1.0, 1.0] {
            for _ in 0..5000 {
                let mut p = [0.0; 3];
                p[axis] = sign * HALF;
                p[(axis + 1) % 3] = rng.random_range(-0.498..0.498);
                p[(axis + 2) % 3] = rng.random_range(-0.498..0.498);
                let mut n = [0.0; 3];
                n[axis] = sign;
                positions.push(p.map(|x| x as f32));
                face_normal.push(Some(n));
            }
        }
    }
    // interior and floating distractors
    for _ in 0..3000 {
        positions.push([0; 3].map(|_| rng.random_range(-0.45..0.45f32)));
        face_normal.push(None);
    }
    while face_normal.len() < 36_000 {
        let p: [f64; 3] = [0; 3].map(|_| rng.random_range(-1.5..1.5));
        if p.iter().any(|x| x.abs() > 0.6) {
            positions.push(p.map(|x| x as f32));
            face_normal.push(None);
        }
    }
    let cloud = SceneCloud::new(positions.clone(), None, None, None).map_err(|e| e.to_string())?;

    let depth_tol = MatchParams::default().depth_tol;
    let intrinsics = Intrinsics { fx: 900.0, fy: 900.0, cx: 640.0, cy: 480.0 };
    let (width, height) = (1280, 960);
    let eyes = [[2.5, 1.8, 1.6], [-2.2, 2.4, -1.2], [0.4, -3.0, 2.0], [-2.8, -0.9, 0.7]];
    let (mut visible, mut recovered, mut false_inclusions, mut distractors) = (0usize, 0usize, 0usize, 0usize);
    for (f, eye) in eyes.into_iter().enumerate() {
        let pose = Pose::look_at(eye, [0.0; 3], [0.0, 0.0, 1.0]).ok_or("degenerate camera")?;
        let mut depth = vec![0.0f32; width * height];
        let mut bitmap = Bitmap::new(width, height);
        for row in 0..height {
            for col in 0..width {
                let ray = intrinsics.ray_through_pixel_centre(col, row);
                if let Some(t) = cube_hit(eye, camera_dir(&pose, ray)) {
                    depth[row * width + col] = t as f32;
                    bitmap.set(col, row, true);
                }
            }
        }
        let frame = FrameObservation {
            frame_id: f as u32,
            intrinsics,
            width,
            height,
            extrinsics: pose,
            depth,
            masks: vec![MaskEntry { bitmap, feature: vec![1.0, 0.0] }],
        };
        let got: BTreeSet<PointId> = project_mask_points(&cloud, &frame, 0, depth_tol).into_iter().collect();

        for (p, n) in face_normal.iter().enumerate() {
            let Some(n) = n else { continue };
            let q = positions[p].map(f64::from);
            let facing: f64 = (0..3).map(|a| n[a] * (eye[a] - q[a])).sum();
            if facing > 0.0 {
                visible += 1;
                recovered += got.contains(&(p as PointId)) as usize;
            }
        }
        for &p in &got {
            let pc = pose.world_to_camera(positions[p as usize].map(f64::from));
            let (col, row) = (
                (intrinsics.fx * pc[0] / pc[2] + intrinsics.cx).floor(),
                (intrinsics.fy * pc[1] / pc[2] + intrinsics.cy).floor(),
            );
            let ray = intrinsics.ray_through_pixel_centre(col as usize, row as usize);
            let surface = cube_hit(eye, camera_dir(&pose, ray));
            if surface.is_none_or(|t| (pc[2] - t).abs() > depth_tol) {
                false_inclusions += 1;
            }
            distractors += face_normal[p as usize].is_none() as usize;
        }
    }
    let recall = recovered as f64 / visible as f64;
    check(
        recall >= 0.99 && false_inclusions == 0,
        format!(
            "recall {recall:.4} over {visible} visible face points, {false_inclusions} false inclusions, \
             {distractors} distractors on the surface within tolerance"
        ),
    )
}

// ---------------------------------------------------------------------------

fn set_iou(a: &BTreeSet<PointId>, b: &BTreeSet<PointId>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.union(b).count();
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Per ranked prediction: `Some((iou, gt))` when matched.
type Assignment = Vec<Option<(f64, usize)>>;

fn lex_better(a: &Assignment, b: &Assignment) -> bool {
    for (x, y) in a.iter().zip(b) {
        let key = |m: &Option<(f64, usize)>| m.map(|(iou, g)| (1, iou, std::cmp::Reverse(g)));
        match key(x).partial_cmp(&key(y)).expect("finite IoU") {
            std::cmp::Ordering::Greater => return true,
            std::cmp::Ordering::Less => return false,
            std::cmp::Ordering::Equal => {}
        }
    }
    false
}

/// Enumerates every one-to-one assignment allowed at `theta` and keeps the
/// lexicographically best in ranking order.
fn best_assignment(ious: &[Vec<f64>], theta: f64) -> Assignment {
    fn go(k: usize, ious: &[Vec<f64>], theta: f64, used: &mut Vec<bool>, cur: &mut Assignment, best: &mut Assignment) {
        if k == ious.len() {
            if best.len() != cur.len() || lex_better(cur, best) {
                *best = cur.clone();
            }
            return;
        }
        cur.push(None);
        go(k + 1, ious, theta, used, cur, best);
        cur.pop();
        for g in 0..used.len() {
            if !used[g] && ious[k][g] >= theta {
                used[g] = true;
                cur.push(Some((ious[k][g], g)));
                go(k + 1, ious, theta, used, cur, best);
                cur.pop();
                used[g] = false;
            }
        }
    }
    let n_gt = ious.first().map_or(0, Vec::len);
    let mut best = Vec::new();
    go(0, ious, theta, &mut vec![false; n_gt], &mut Vec::new(), &mut best);
    best
}

/// Area under the precision envelope, one recall step per true positive.
fn envelope_ap(tp: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut hits = 0;
    let precision: Vec<f64> = tp
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            hits += t as usize;
            hits as f64 / (k + 1) as f64
        })
        .collect();
    (0..tp.len()).filter(|&k| tp[k]).map(|k| precision[k..].iter().cloned().fold(0.0, f64::max) / n_gt as f64).sum()
}

fn evaluator_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let thresholds = standard_thresholds();
    let (mut cases, mut max_err, mut identity_ok, mut monotone_ok) = (0, 0.0f64, true, true);
    for case in 0..800 {
        let universe = 40u32;
        let n_gt = rng.random_range(0..=5usize);
        let mut label: Vec<usize> = (0..universe).map(|_| rng.random_range(0..=n_gt)).collect();
        for (g, l) in label.iter_mut().take(n_gt).enumerate() {
            *l = g;
        }
        let gt_sets: Vec<BTreeSet<PointId>> =
            (0..n_gt).map(|g| (0..universe).filter(|&p| label[p as usize] == g).collect()).collect();
        let gt = InstanceSet::new(
            gt_sets.iter().map(|s| Instance::new(s.iter().copied().collect(), 1.0, InstanceKind::Object)).collect(),
        );

        let n_pred = rng.random_range(0..=5usize);
        let mut preds = Vec::new();
        for _ in 0..n_pred {
            let mut s: BTreeSet<PointId> = if n_gt > 0 && rng.random_bool(0.7) {
                gt_sets[rng.random_range(0..n_gt)].clone()
            } else {
                BTreeSet::new()
            };
            for p in 0..universe {
                if rng.random_bool(0.15) && !s.remove(&p) {
                    s.insert(p);
                }
            }
            if s.is_empty() {
                s.insert(rng.random_range(0..universe));
            }
            let confidence = [0.2, 0.5, 0.5, 0.9, rng.random_range(0.0..1.0)][rng.random_range(0..5)];
            let kind = if rng.random_bool(0.1) { InstanceKind::Part } else { InstanceKind::Object };
            preds.push((s, confidence, kind));
        }
        let pred_set = InstanceSet::new(
            preds.iter().map(|(s, c, k)| Instance::new(s.iter().copied().collect(), *c, *k)).collect(),
        );

        let mut ranked: Vec<usize> = (0..preds.len()).filter(|&k| preds[k].2 == InstanceKind::Object).collect();
        ranked.sort_by(|&a, &b| {
            preds[b].1.total_cmp(&preds[a].1).then(preds[b].0.len().cmp(&preds[a].0.len())).then(a.cmp(&b))
        });
        let ious: Vec<Vec<f64>> =
            ranked.iter().map(|&k| gt_sets.iter().map(|g| set_iou(&preds[k].0, g)).collect()).collect();

        let results = evaluate_at(&[(&pred_set, &gt)], &thresholds);
        for (r, &theta) in results.iter().zip(&thresholds) {
            let assignment = best_assignment(&ious, theta);
            let tp: Vec<bool> = assignment.iter().map(Option::is_some).collect();
            let want = envelope_ap(&tp, n_gt);
            let matched: Vec<Option<usize>> = r.matches.iter().map(|m| m.gt).collect();
            let want_matched: Vec<Option<usize>> = assignment.iter().map(|a| a.map(|(_, g)| g)).collect();
            if matched != want_matched {
                return Err(format!("case {case} at {theta}: matches {matched:?}, expected {want_matched:?}"));
            }
            max_err = max_err.max((r.ap - want).abs());
        }
        let strict: Vec<f64> = results[1..].iter().map(|r| r.ap).collect();
        monotone_ok &= results[0].ap >= strict[0] && strict.windows(2).all(|w| w[0] >= w[1]);

        if n_gt > 0 {
            let report = evaluate(&gt, &gt);
            identity_ok &= report.ap25 == 1.0 && report.ap50 == 1.0 && report.map == 1.0;
        }
        cases += 1;
    }
    check(
        max_err <= 1e-12 && identity_ok && monotone_ok,
        format!("{cases} cases, max AP error {max_err:.1e}, identity {identity_ok}, monotone {monotone_ok}"),
    )
}

// ---------------------------------------------------------------------------

fn dir_contents(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).expect("readable output directory") {
            let path = entry.expect("directory entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).expect("under root").to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).expect("readable artifact"));
            }
        }
    }
    out
}

fn p2o(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_p2o")).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("p2o {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
    }
}

fn end_to_end_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = dir.path().join("spec.json");
    std::fs::write(&spec, serde_json::to_string(&three_object_room()).expect("spec serialises"))
        .map_err(|e| e.to_string())?;
    let scene = dir.path().join("scene");
    let path = |p: &Path| p.to_str().expect("utf-8 temp path").to_owned();
    p2o(&["synth", "--spec", &path(&spec), "--out", &path(&scene)])?;
    let n_points = load_scene(&scene).map_err(|e| e.to_string())?.len();

    let mut runs = Vec::new();
    let mut slowest = 0.0f64;
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let start = Instant::now();
        p2o(&["run", "--scene", &path(&scene), "--out", &path(&out)])?;
        slowest = slowest.max(start.elapsed().as_secs_f64());
        runs.push(dir_contents(&out));
    }
    let differing: Vec<&String> =
        runs[0].keys().chain(runs[1].keys()).filter(|k| runs[0].get(*k) != runs[1].get(*k)).collect();
    check(
        differing.is_empty() && !runs[0].is_empty() && slowest < 60.0 && (45_000..=60_000).contains(&n_points),
        format!(
            "{n_points} points, {} artifacts, {} differing, slowest run {slowest:.2}s",
            runs[0].len(),
            differing.len()
        ),
    )
}

// ---------------------------------------------------------------------------

fn performance_floor() -> Outcome {
    let mut spec = SynthSpec::random_room(9, 36, 0, 12.0);
    spec.points_per_m2 = 2300.0;
    let scene = generate(&spec).map_err(|e| e.to_string())?;
    let cloud = &scene.cloud;
    let sp_params = SuperpointParams { seed_resolution: 0.25, ..SuperpointParams::default() };

    let start = Instant::now();
    let layer0 = build_superpoints(cloud, &sp_params).map_err(|e| e.to_string())?;
    let superpoint_secs = start.elapsed().as_secs_f64();
    let h = run_hierarchy(&layer0, cloud, &[], &MergeParams::default()).map_err(|e| e.to_string())?;
    let total_secs = start.elapsed().as_secs_f64();

    let first = initial_layer(&layer0, cloud.len()).map_err(|e| e.to_string())?;
    let (_, stats) = candidate_pairs_with_stats(&first, &cloud.positions, MergeParams::default().t);
    let n = cloud.len() as f64;
    let squares: f64 = layer0.iter().map(|p| (p.len() as f64).powi(2)).sum();
    let brute_force = (n * n - squares) / 2.0;
    let evaluated = stats.point_distance_evaluations as f64;
    check(
        cloud.len() >= 450_000
            && (3_500..=7_000).contains(&layer0.len())
            && total_secs < 120.0
            && evaluated < 1e-3 * brute_force,
        format!(
            "{} points, {} super-points, {} layers, super-points {superpoint_secs:.1}s, total {total_secs:.1}s, \
             {evaluated:.2e} point distances vs {brute_force:.2e} brute force",
            cloud.len(),
            layer0.len(),
            h.layers.len()
        ),
    )
}
