//! Seeded synthetic worlds, two-robot traversals and constructed alignment instances.

use std::collections::BTreeSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rot_x, wrap_angle, PoseSE3, Vec3};
use crate::model::{dot, normalized, Segment, SourceId, Submap, DEFAULT_EMBEDDING_DIM};
use crate::submap::{SubmapManager, SubmapPolicy};
use crate::tracking::{voxelize, ObservationFrame, ObservationRecord, VoxelSet};

/// Ids at or above this value are robot-specific clutter.
pub const CLUTTER_ID_BASE: u64 = 1_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_objects: usize,
    pub world_extent: [f64; 3],
    pub embedding_dim: usize,
    pub n_semantic_classes: usize,
    pub centroid_noise_sigma: f64,
    /// Angle (radians) by which each robot's view of an embedding is rotated.
    pub embedding_noise: f64,
    /// Angle (radians) between an object's embedding and its class prototype.
    pub instance_spread: f64,
    /// Cosine between distinct class prototypes.
    pub class_similarity: f64,
    /// Log-normal sigma of per-robot shape perturbation.
    pub shape_noise: f64,
    pub dropout_rate: f64,
    /// Never-shared objects per robot, as a fraction of `n_objects`.
    pub clutter_rate: f64,
    /// Degrees between the two traversal directions.
    pub heading_offset: f64,
    pub min_separation: f64,
    pub sensor_range: f64,
    pub step: f64,
    pub robot_height: f64,
    pub tilt_noise_deg: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_objects: 100,
            world_extent: [60.0, 30.0, 4.0],
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            n_semantic_classes: 8,
            centroid_noise_sigma: 0.1,
            embedding_noise: 0.15,
            instance_spread: 0.32,
            class_similarity: 0.75,
            shape_noise: 0.1,
            dropout_rate: 0.2,
            clutter_rate: 0.3,
            heading_offset: 180.0,
            min_separation: 0.8,
            sensor_range: 15.0,
            step: 0.5,
            robot_height: 1.0,
            tilt_noise_deg: 2.0,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("scenario: {m}")));
        if !(0.0..=1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1]");
        }
        if !(self.clutter_rate >= 0.0) {
            return bad("clutter_rate must be >= 0");
        }
        if self.embedding_dim < 2 || self.n_semantic_classes == 0 {
            return bad("embedding_dim >= 2 and n_semantic_classes >= 1 required");
        }
        if self.world_extent.iter().any(|e| !(*e >= 0.0)) || !(self.step > 0.0) {
            return bad("world_extent must be nonnegative and step positive");
        }
        if !(-1.0..1.0).contains(&self.class_similarity) {
            return bad("class_similarity must lie in [-1, 1)");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldObject {
    pub id: u64,
    pub class: usize,
    #[serde(with = "crate::model::vec3_serde")]
    pub position: Vec3,
    pub shape: [f64; 4],
    /// Box dimensions used when voxelizing.
    #[serde(with = "crate::model::vec3_serde")]
    pub size: Vec3,
    pub embedding: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub objects: Vec<WorldObject>,
    pub prototypes: Vec<Vec<f64>>,
    /// Base shape vector and box size per class.
    pub classes: Vec<([f64; 4], Vec3)>,
    pub extent: Vec3,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn random_unit(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = crate::model::norm(&v);
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Unit vector at exactly `angle` from unit `e`, in a random direction.
pub fn perturb_embedding(rng: &mut impl Rng, e: &[f64], angle: f64) -> Vec<f64> {
    if angle == 0.0 {
        return e.to_vec();
    }
    loop {
        let w = random_unit(rng, e.len());
        let c = dot(&w, e);
        let ortho: Vec<f64> = w.iter().zip(e).map(|(x, y)| x - c * y).collect();
        let n = crate::model::norm(&ortho);
        if n > 1e-6 {
            return normalized(
                e.iter()
                    .zip(&ortho)
                    .map(|(x, o)| angle.cos() * x + angle.sin() * o / n)
                    .collect(),
            );
        }
    }
}

/// Unit vector whose cosine with unit `e` is exactly `cos`.
pub fn embedding_with_cosine(rng: &mut impl Rng, e: &[f64], cos: f64) -> Vec<f64> {
    perturb_embedding(rng, e, cos.clamp(-1.0, 1.0).acos())
}

fn log_normal(rng: &mut impl Rng, sigma: f64) -> f64 {
    if sigma <= 0.0 {
        return 1.0;
    }
    let z: f64 = StandardNormal.sample(rng);
    (sigma * z).exp()
}

fn gaussian_vec(rng: &mut impl Rng, sigma: f64) -> Vec3 {
    if sigma <= 0.0 {
        return Vec3::zeros();
    }
    let n = Normal::new(0.0, sigma).expect("positive sigma");
    Vec3::new(n.sample(rng), n.sample(rng), n.sample(rng))
}

fn uniform_in(rng: &mut impl Rng, extent: &Vec3) -> Vec3 {
    let mut c = |e: f64| if e > 0.0 { rng.random_range(0.0..e) } else { 0.0 };
    Vec3::new(c(extent.x), c(extent.y), c(extent.z))
}

/// Draws `n` positions with pairwise separation at least `min_sep`, also keeping clear of `avoid`.
fn place_points(rng: &mut impl Rng, n: usize, extent: &Vec3, min_sep: f64, avoid: &[Vec3]) -> Result<Vec<Vec3>> {
    let mut pts: Vec<Vec3> = Vec::with_capacity(n);
    let budget = 1000 * n.max(1);
    let mut tries = 0;
    while pts.len() < n {
        tries += 1;
        if tries > budget {
            return Err(Error::InfeasibleScenario(format!(
                "could not place {n} objects with separation {min_sep} m in {:?}",
                extent.as_slice()
            )));
        }
        let p = uniform_in(rng, extent);
        let clear = |q: &Vec3| (p - q).norm() >= min_sep;
        if pts.iter().all(clear) && avoid.iter().all(clear) {
            pts.push(p);
        }
    }
    Ok(pts)
}

fn class_prototypes(rng: &mut impl Rng, cfg: &ScenarioConfig) -> Vec<Vec<f64>> {
    let common = random_unit(rng, cfg.embedding_dim);
    let a = cfg.class_similarity.max(0.0).sqrt();
    let b = (1.0 - a * a).sqrt();
    (0..cfg.n_semantic_classes)
        .map(|_| {
            let u = random_unit(rng, cfg.embedding_dim);
            normalized(common.iter().zip(&u).map(|(c, x)| a * c + b * x).collect())
        })
        .collect()
}

fn class_shape(rng: &mut impl Rng) -> ([f64; 4], Vec3) {
    let side = rng.random_range(0.3..1.6);
    let size = Vec3::new(
        side * rng.random_range(0.5..2.0),
        side * rng.random_range(0.5..2.0),
        side * rng.random_range(0.5..2.0),
    );
    let vol = size.x * size.y * size.z;
    (
        [vol, rng.random_range(0.05..0.9), rng.random_range(0.05..0.9), rng.random_range(0.05..0.9)],
        size,
    )
}

fn make_object(
    rng: &mut impl Rng,
    id: u64,
    position: Vec3,
    cfg: &ScenarioConfig,
    prototypes: &[Vec<f64>],
    class_shapes: &[([f64; 4], Vec3)],
) -> WorldObject {
    let class = rng.random_range(0..prototypes.len());
    let (base, size) = class_shapes[class];
    let scale = log_normal(rng, 0.15);
    let shape = crate::model::floor_shape([
        base[0] * scale * scale * scale,
        base[1] * log_normal(rng, 0.15),
        base[2] * log_normal(rng, 0.15),
        base[3] * log_normal(rng, 0.15),
    ]);
    WorldObject {
        id,
        class,
        position,
        shape,
        size: size * scale,
        embedding: perturb_embedding(rng, &prototypes[class], cfg.instance_spread),
    }
}

/// Ground-truth objects uniform in the extent with the configured minimum separation.
pub fn generate_world(cfg: &ScenarioConfig) -> Result<World> {
    cfg.validate()?;
    let mut rng = rng_for(cfg.seed, 0);
    let extent = Vec3::from(cfg.world_extent);
    let prototypes = class_prototypes(&mut rng, cfg);
    let shapes: Vec<([f64; 4], Vec3)> = (0..cfg.n_semantic_classes).map(|_| class_shape(&mut rng)).collect();
    let positions = place_points(&mut rng, cfg.n_objects, &extent, cfg.min_separation, &[])?;
    let objects = positions
        .into_iter()
        .enumerate()
        .map(|(k, p)| make_object(&mut rng, k as u64, p, cfg, &prototypes, &shapes))
        .collect();
    Ok(World {
        objects,
        prototypes,
        classes: shapes,
        extent,
    })
}

/// What one robot mapped; segment centroids are in its odometry frame.
#[derive(Clone, Debug, PartialEq)]
pub struct RobotRun {
    pub robot_id: u32,
    pub world_from_odom: PoseSE3,
    /// Body poses in the odometry frame.
    pub poses: Vec<PoseSE3>,
    /// `(index of the first pose that observes it, segment)`, sorted by that index.
    pub segments: Vec<(usize, Segment)>,
    /// World objects (including clutter) this robot observes, for voxel streams.
    pub observed: Vec<ObservedObject>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObservedObject {
    pub id: u64,
    /// Noisy world-frame position as this robot perceives it.
    pub position: Vec3,
    pub size: Vec3,
    pub embedding: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraversalPair {
    pub runs: [RobotRun; 2],
}

/// Chord of the line through the world center with direction `angle`, clipped to the xy extent.
fn chord(extent: &Vec3, angle: f64) -> (Vec3, Vec3, f64) {
    let c = Vec3::new(extent.x / 2.0, extent.y / 2.0, 0.0);
    let d = Vec3::new(angle.cos(), angle.sin(), 0.0);
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for (ck, dk, ek) in [(c.x, d.x, extent.x), (c.y, d.y, extent.y)] {
        if dk.abs() > 1e-12 {
            let (a, b) = ((0.0 - ck) / dk, (ek - ck) / dk);
            lo = lo.max(a.min(b));
            hi = hi.min(a.max(b));
        }
    }
    if !lo.is_finite() || !hi.is_finite() || hi < lo {
        return (c, d, 0.0);
    }
    (c + d * lo, d, hi - lo)
}

fn simulate_robot(world: &World, cfg: &ScenarioConfig, robot: u32, yaw: f64) -> Result<RobotRun> {
    let mut rng = rng_for(cfg.seed, 1 + robot as u64);
    let (start, dir, length) = chord(&world.extent, yaw);
    let start = start + Vec3::new(0.0, 0.0, cfg.robot_height);
    let world_from_odom = PoseSE3::from_yaw(yaw, start);
    let odom_from_world = world_from_odom.inverse();
    let n_poses = (length / cfg.step).floor() as usize + 1;
    let tilt = Normal::new(0.0, cfg.tilt_noise_deg.max(0.0).to_radians() + 1e-300).expect("finite sigma");
    let world_poses: Vec<PoseSE3> = (0..n_poses)
        .map(|k| {
            let (p, r) = (tilt.sample(&mut rng), tilt.sample(&mut rng));
            PoseSE3::from_euler_zyx(yaw, p, r, start + dir * (k as f64 * cfg.step))
        })
        .collect();

    let n_clutter = (cfg.clutter_rate * cfg.n_objects as f64).round() as usize;
    let true_positions: Vec<Vec3> = world.objects.iter().map(|o| o.position).collect();
    let clutter_pos = place_points(&mut rng, n_clutter, &world.extent, cfg.min_separation, &true_positions)?;
    let base = CLUTTER_ID_BASE * (robot as u64 + 1);
    let clutter: Vec<WorldObject> = clutter_pos
        .into_iter()
        .enumerate()
        .map(|(k, p)| make_object(&mut rng, base + k as u64, p, cfg, &world.prototypes, &world.classes))
        .collect();

    let mut segments = Vec::new();
    let mut observed = Vec::new();
    for (k, obj) in world.objects.iter().chain(&clutter).enumerate() {
        let is_clutter = k >= world.objects.len();
        // Draw every variate so streams do not depend on visibility.
        let dropped = rng.random_bool(cfg.dropout_rate) && !is_clutter;
        let noisy = obj.position + gaussian_vec(&mut rng, cfg.centroid_noise_sigma);
        let emb = perturb_embedding(&mut rng, &obj.embedding, cfg.embedding_noise);
        let shape = [
            obj.shape[0] * log_normal(&mut rng, cfg.shape_noise),
            obj.shape[1] * log_normal(&mut rng, cfg.shape_noise),
            obj.shape[2] * log_normal(&mut rng, cfg.shape_noise),
            obj.shape[3] * log_normal(&mut rng, cfg.shape_noise),
        ];
        if dropped {
            continue;
        }
        let in_range: Vec<usize> = world_poses
            .iter()
            .enumerate()
            .filter(|(_, p)| (p.translation - obj.position).norm() <= cfg.sensor_range)
            .map(|(i, _)| i)
            .collect();
        let Some(&first) = in_range.first() else { continue };
        segments.push((
            first,
            Segment::new(obj.id, odom_from_world.transform_point(&noisy), shape, emb.clone(), in_range.len() as u32),
        ));
        observed.push(ObservedObject {
            id: obj.id,
            position: noisy,
            size: obj.size,
            embedding: emb,
        });
    }
    segments.sort_by_key(|(f, s)| (*f, s.id));
    Ok(RobotRun {
        robot_id: robot,
        world_from_odom,
        poses: world_poses.iter().map(|p| odom_from_world.compose(p)).collect(),
        segments,
        observed,
    })
}

/// Robot 0 drives along +x through the world center; robot 1 crosses it at `heading_offset`.
pub fn generate_traversal_pair(world: &World, cfg: &ScenarioConfig) -> Result<TraversalPair> {
    let a = simulate_robot(world, cfg, 0, 0.0)?;
    let b = simulate_robot(world, cfg, 1, cfg.heading_offset.to_radians())?;
    Ok(TraversalPair { runs: [a, b] })
}

/// Runs the submap policy over a robot's pose stream.
pub fn build_submaps(run: &RobotRun, policy: &SubmapPolicy) -> Result<Vec<Submap>> {
    let mut mgr = SubmapManager::new(policy.clone(), run.robot_id).with_world_from_odom(run.world_from_odom);
    let mut out = Vec::new();
    let mut visible: Vec<Segment> = Vec::new();
    let mut next = 0;
    for (k, pose) in run.poses.iter().enumerate() {
        while next < run.segments.len() && run.segments[next].0 <= k {
            visible.push(run.segments[next].1.clone());
            next += 1;
        }
        out.extend(mgr.process(pose, &visible)?);
    }
    out.extend(mgr.flush());
    out.sort_by_key(|s| s.source_id);
    Ok(out)
}

/// `T^{M_i}_{M_j}` from the odometry-to-world transforms of the two robots.
pub fn ground_truth_submap(si: &Submap, world_from_odom_i: &PoseSE3, sj: &Submap, world_from_odom_j: &PoseSE3) -> PoseSE3 {
    world_from_odom_i
        .compose(&si.frame_pose)
        .inverse()
        .compose(&world_from_odom_j.compose(&sj.frame_pose))
}

pub fn shared_objects(si: &Submap, sj: &Submap) -> usize {
    let ids: BTreeSet<u64> = si.segments.iter().map(|s| s.id).collect();
    sj.segments.iter().filter(|s| ids.contains(&s.id)).count()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotGroundTruth {
    pub robot_id: u32,
    pub world_from_odom: PoseSE3,
}

/// A full two-robot scenario reduced to submaps plus the ground truth needed to score them.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub world: World,
    pub pair: TraversalPair,
    pub submaps: [Vec<Submap>; 2],
}

impl Scenario {
    pub fn ground_truth(&self) -> [RobotGroundTruth; 2] {
        [0, 1].map(|r| RobotGroundTruth {
            robot_id: r as u32,
            world_from_odom: self.pair.runs[r].world_from_odom,
        })
    }
}

pub fn generate_scenario(cfg: &ScenarioConfig, policy: &SubmapPolicy) -> Result<Scenario> {
    let world = generate_world(cfg)?;
    let pair = generate_traversal_pair(&world, cfg)?;
    let submaps = [build_submaps(&pair.runs[0], policy)?, build_submaps(&pair.runs[1], policy)?];
    Ok(Scenario { world, pair, submaps })
}

/// Camera looking along body +x with image y pointing down.
pub fn camera_from_body() -> PoseSE3 {
    let r = nalgebra::Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
    PoseSE3::new(r, Vec3::zeros())
}

fn object_voxels(obj: &ObservedObject, odom_from_world: &PoseSE3, voxel_size: f64) -> VoxelSet {
    let half = obj.size / 2.0;
    let steps = |e: f64| ((e / (voxel_size * 0.5)).ceil() as i32).max(1);
    let (nx, ny, nz) = (steps(obj.size.x), steps(obj.size.y), steps(obj.size.z));
    let mut set = VoxelSet::new();
    for a in 0..=nx {
        for b in 0..=ny {
            for c in 0..=nz {
                let local = Vec3::new(
                    -half.x + obj.size.x * a as f64 / nx as f64,
                    -half.y + obj.size.y * b as f64 / ny as f64,
                    -half.z + obj.size.z * c as f64 / nz as f64,
                );
                set.insert(voxelize(&odom_from_world.transform_point(&(obj.position + local)), voxel_size));
            }
        }
    }
    set
}

/// Voxelized per-frame observations of a robot run, in its odometry frame.
///
/// Every `frame_stride`-th pose emits each object within `range`, with a random
/// `keep` fraction of its voxels and a small per-frame embedding perturbation.
pub fn observation_stream(
    run: &RobotRun,
    voxel_size: f64,
    range: f64,
    frame_stride: usize,
    keep: f64,
    seed: u64,
) -> Vec<ObservationFrame> {
    let mut rng = rng_for(seed, 100 + run.robot_id as u64);
    let odom_from_world = run.world_from_odom.inverse();
    let voxels: Vec<VoxelSet> = run
        .observed
        .iter()
        .map(|o| object_voxels(o, &odom_from_world, voxel_size))
        .collect();
    let positions: Vec<Vec3> = run.observed.iter().map(|o| odom_from_world.transform_point(&o.position)).collect();
    let mut frames = Vec::new();
    for (k, pose) in run.poses.iter().enumerate().step_by(frame_stride.max(1)) {
        let mut observations = Vec::new();
        for (o, obj) in run.observed.iter().enumerate() {
            if (positions[o] - pose.translation).norm() > range {
                continue;
            }
            let vox: Vec<[i32; 3]> = voxels[o].iter().copied().filter(|_| rng.random_bool(keep)).collect();
            if vox.is_empty() {
                continue;
            }
            observations.push(ObservationRecord {
                voxels: vox,
                embedding: perturb_embedding(&mut rng, &obj.embedding, 0.03),
            });
        }
        frames.push(ObservationFrame {
            frame_idx: k as u64,
            camera_pose: pose.compose(&camera_from_body()),
            observations,
        });
    }
    frames
}

/// Two submaps with known relative transform `gt` (maps submap-j coordinates into submap-i).
#[derive(Clone, Debug, PartialEq)]
pub struct ConstructedPair {
    pub submap_i: Submap,
    pub submap_j: Submap,
    pub gt: PoseSE3,
    /// Segment index pairs that are true matches.
    pub true_pairs: Vec<(usize, usize)>,
}

fn bare_submap(robot_id: u32, segments: Vec<Segment>) -> Submap {
    Submap {
        frame_pose: PoseSE3::identity(),
        segments,
        source_id: SourceId { robot_id, submap_idx: 0 },
        center_world: Vec3::zeros(),
    }
}

/// Vertical-structure scene with an upside-down congruent decoy.
///
/// Submap i holds a small group `A` of stacked objects and a larger group `B`.
/// Submap j holds a correct copy of `A` and a copy of `B` flipped 180° about a
/// horizontal axis. Every object shares one class and one shape, and all `B`
/// heights differ, so only the sign of vertical offsets separates the two.
pub fn mirror_scenario(dim: usize) -> ConstructedPair {
    let mut rng = rng_for(7, 0);
    let emb = random_unit(&mut rng, dim);
    let shape = [0.5, 0.4, 0.3, 0.2];
    // Columns form a scalene layout, column height sums differ and no object sits
    // near its column's mid-height, so no relabeling maps a group onto itself.
    let a: Vec<Vec3> = vec![
        Vec3::new(1.5, 2.0, 0.45),
        Vec3::new(1.5, 2.0, 1.2),
        Vec3::new(1.5, 2.0, 3.1),
        Vec3::new(4.8, 3.4, 0.9),
        Vec3::new(4.8, 3.4, 2.6),
    ];
    let b: Vec<Vec3> = vec![
        Vec3::new(2.0, 8.0, 0.35),
        Vec3::new(2.0, 8.0, 2.45),
        Vec3::new(4.0, 11.5, 0.7),
        Vec3::new(4.0, 11.5, 1.5),
        Vec3::new(4.0, 11.5, 3.4),
        Vec3::new(10.5, 8.5, 1.05),
        Vec3::new(10.5, 8.5, 3.05),
    ];
    let flip_center = Vec3::new(0.0, 13.0, 1.8);
    let flip = |p: &Vec3| rot_x(std::f64::consts::PI) * (p - flip_center) + flip_center;
    let gt = PoseSE3::from_yaw(30f64.to_radians(), Vec3::new(1.0, -2.0, 0.3));
    let to_j = gt.inverse();

    let seg = |id: u64, p: Vec3| Segment::new(id, p, shape, emb.clone(), 5);
    let seg_i: Vec<Segment> = a.iter().chain(&b).enumerate().map(|(k, p)| seg(k as u64, *p)).collect();
    let seg_j: Vec<Segment> = a
        .iter()
        .map(|p| to_j.transform_point(p))
        .chain(b.iter().map(|p| to_j.transform_point(&flip(p))))
        .enumerate()
        .map(|(k, p)| seg(100 + k as u64, p))
        .collect();
    ConstructedPair {
        submap_i: bare_submap(0, seg_i),
        submap_j: bare_submap(1, seg_j),
        gt,
        true_pairs: (0..a.len()).map(|k| (k, k)).collect(),
    }
}

/// Randomized instance mixing a true match set with two kinds of decoys.
///
/// * true group: 6 to 8 matches, centroid noise, descriptors degraded to a
///   segment similarity in `[0.35, 0.75]` (viewpoint change);
/// * repeated structure: 9 to 12 objects reproduced rigidly elsewhere in j but
///   with unrelated descriptors (similarity in `[0.05, 0.2]`);
/// * look-alikes: 2 or 3 near-identical objects forming a small rigid group;
/// * a few unmatched background objects on each side.
pub fn fusion_distractor_trial(seed: u64, dim: usize) -> ConstructedPair {
    let mut rng = rng_for(seed, 7);
    let shape_of = |rng: &mut ChaCha8Rng| {
        [
            rng.random_range(0.1..3.0),
            rng.random_range(0.05..0.9),
            rng.random_range(0.05..0.9),
            rng.random_range(0.05..0.9),
        ]
    };
    let gt = PoseSE3::from_yaw(
        rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
        Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-0.5..0.5)),
    );
    let to_j = gt.inverse();
    // Cosine that yields segment similarity `s` with equal shapes: sqrt((c - 0.85) / 0.1) = s.
    let cos_for = |s: f64| 0.85 + 0.1 * s * s;

    let mut seg_i = Vec::new();
    let mut seg_j = Vec::new();
    let mut true_pairs = Vec::new();
    let mut next_id = 0u64;

    let mut group = |rng: &mut ChaCha8Rng,
                     k: usize,
                     origin: Vec3,
                     decoy: Option<PoseSE3>,
                     sim: (f64, f64),
                     noise: f64,
                     seg_i: &mut Vec<Segment>,
                     seg_j: &mut Vec<Segment>,
                     true_pairs: &mut Vec<(usize, usize)>| {
        let pts = place_points(rng, k, &Vec3::new(10.0, 10.0, 3.0), 1.0, &[]).expect("sparse group");
        for p in pts {
            let p = p + origin;
            let e = random_unit(rng, dim);
            let shape = shape_of(rng);
            let target = rng.random_range(sim.0..sim.1);
            let ej = embedding_with_cosine(rng, &e, cos_for(target));
            let q = match decoy {
                Some(h) => h.transform_point(&p),
                None => p,
            } + gaussian_vec(rng, noise);
            if decoy.is_none() {
                true_pairs.push((seg_i.len(), seg_j.len()));
            }
            seg_i.push(Segment::new(next_id, p, shape, e, 3));
            seg_j.push(Segment::new(next_id + 10_000, to_j.transform_point(&q), shape, ej, 3));
            next_id += 1;
        }
    };

    let n_true = rng.random_range(6..=8);
    group(&mut rng, n_true, Vec3::new(-5.0, -5.0, 0.0), None, (0.35, 0.75), 0.08, &mut seg_i, &mut seg_j, &mut true_pairs);
    let n_rep = rng.random_range(9..=12);
    let rep = PoseSE3::from_yaw(rng.random_range(-3.0..3.0), Vec3::new(0.0, 40.0, 0.0));
    group(&mut rng, n_rep, Vec3::new(15.0, -5.0, 0.0), Some(rep), (0.05, 0.2), 0.03, &mut seg_i, &mut seg_j, &mut true_pairs);
    let n_look = rng.random_range(2..=3);
    let look = PoseSE3::from_yaw(rng.random_range(-3.0..3.0), Vec3::new(0.0, -40.0, 0.0));
    group(&mut rng, n_look, Vec3::new(-25.0, -5.0, 0.0), Some(look), (0.95, 1.0), 0.02, &mut seg_i, &mut seg_j, &mut true_pairs);

    for side in 0..2 {
        for _ in 0..4 {
            let p = Vec3::new(rng.random_range(-30.0..30.0), rng.random_range(20.0..30.0), rng.random_range(0.0..3.0));
            let s = Segment::new(50_000 + next_id, p, shape_of(&mut rng), random_unit(&mut rng, dim), 2);
            next_id += 1;
            if side == 0 {
                seg_i.push(s);
            } else {
                seg_j.push(s);
            }
        }
    }
    ConstructedPair {
        submap_i: bare_submap(0, seg_i),
        submap_j: bare_submap(1, seg_j),
        gt,
        true_pairs,
    }
}

/// Absolute relative heading of a transform in degrees, in `[0, 180]`.
pub fn heading_deg(t: &PoseSE3) -> f64 {
    wrap_angle(t.yaw()).abs().to_degrees()
}
