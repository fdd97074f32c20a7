//! Frame-to-frame segment tracking on voxelized observations.
//!
//! Tracks are matched to incoming observations by grid-aligned voxel IOU with a
//! global-nearest-neighbour (Hungarian) assignment, duplicates are merged, and a
//! finished track is summarized as a [`Segment`].

use std::collections::BTreeSet;

use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PoseSE3, Vec3};
use crate::model::{floor_shape, normalized, Segment, SHAPE_FLOOR};

pub type Voxel = [i32; 3];
pub type VoxelSet = BTreeSet<Voxel>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub voxel_size: f64,
    pub min_iou: f64,
    pub merge_iou_3d: f64,
    pub merge_iou_2d: f64,
    pub planarity_thresh: f64,
    pub extent_thresh: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            voxel_size: 0.2,
            min_iou: 0.25,
            merge_iou_3d: 0.5,
            merge_iou_2d: 0.8,
            planarity_thresh: 0.9,
            extent_thresh: 4.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentObservation {
    pub voxels: VoxelSet,
    pub embedding: Vec<f64>,
    pub frame_idx: u64,
    /// Camera-to-world pose; the optical axis is the camera +z axis.
    pub camera_pose: PoseSE3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentTrack {
    pub id: u64,
    pub voxels: VoxelSet,
    pub embedding: Vec<f64>,
    pub obs_count: u32,
    pub last_seen: u64,
}

impl SegmentTrack {
    pub fn from_observation(id: u64, obs: &SegmentObservation) -> Self {
        Self {
            id,
            voxels: obs.voxels.clone(),
            embedding: normalized(obs.embedding.clone()),
            obs_count: 1,
            last_seen: obs.frame_idx,
        }
    }
}

/// `|a ∩ b| / |a ∪ b|`.
pub fn voxel_iou(a: &VoxelSet, b: &VoxelSet) -> Result<f64> {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        return Err(Error::ContractViolation("IOU of two empty voxel sets".into()));
    }
    Ok(inter as f64 / union as f64)
}

fn iou_or_zero(a: &VoxelSet, b: &VoxelSet) -> f64 {
    voxel_iou(a, b).unwrap_or(0.0)
}

/// Rectangular min-cost assignment; `result[row] = Some(col)`.
///
/// Shortest augmenting path with dual potentials, `O(n² m)` for `n <= m`.
pub fn hungarian_min(cost: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = cost.len();
    if rows == 0 {
        return Vec::new();
    }
    let cols = cost[0].len();
    if cols == 0 {
        return vec![None; rows];
    }
    if rows > cols {
        let t: Vec<Vec<f64>> = (0..cols).map(|c| (0..rows).map(|r| cost[r][c]).collect()).collect();
        let by_col = hungarian_min(&t);
        let mut out = vec![None; rows];
        for (c, r) in by_col.into_iter().enumerate() {
            if let Some(r) = r {
                out[r] = Some(c);
            }
        }
        return out;
    }
    let (n, m) = (rows, cols);
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = Some(j - 1);
        }
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Assignment {
    /// `(track index, observation index)`.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_observations: Vec<usize>,
}

impl Assignment {
    pub fn total_iou(&self, tracks: &[SegmentTrack], obs: &[SegmentObservation]) -> f64 {
        self.matches
            .iter()
            .map(|&(t, o)| iou_or_zero(&tracks[t].voxels, &obs[o].voxels))
            .sum()
    }
}

/// One-to-one assignment maximizing total IOU over pairs with IOU >= `min_iou`.
pub fn associate(tracks: &[SegmentTrack], observations: &[SegmentObservation], min_iou: f64) -> Assignment {
    let iou: Vec<Vec<f64>> = tracks
        .iter()
        .map(|t| {
            observations
                .iter()
                .map(|o| {
                    let x = iou_or_zero(&t.voxels, &o.voxels);
                    if x >= min_iou && x > 0.0 {
                        x
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    // Gated pairs cost the same as leaving both sides unmatched.
    let cost: Vec<Vec<f64>> = iou.iter().map(|r| r.iter().map(|x| 1.0 - x).collect()).collect();
    let mut out = Assignment::default();
    let mut obs_used = vec![false; observations.len()];
    for (t, o) in hungarian_min(&cost).into_iter().enumerate() {
        match o {
            Some(o) if iou[t][o] > 0.0 => {
                out.matches.push((t, o));
                obs_used[o] = true;
            }
            _ => out.unmatched_tracks.push(t),
        }
    }
    out.unmatched_observations = (0..observations.len()).filter(|&o| !obs_used[o]).collect();
    out
}

/// Folds a matched observation into its track.
pub fn update_track(mut track: SegmentTrack, obs: &SegmentObservation) -> SegmentTrack {
    track.voxels.extend(obs.voxels.iter().copied());
    let w = track.obs_count as f64;
    let mean: Vec<f64> = track
        .embedding
        .iter()
        .zip(&obs.embedding)
        .map(|(e, o)| (w * e + o) / (w + 1.0))
        .collect();
    track.embedding = normalized(mean);
    track.obs_count += 1;
    track.last_seen = track.last_seen.max(obs.frame_idx);
    track
}

pub fn voxel_center(v: &Voxel, voxel_size: f64) -> Vec3 {
    Vec3::new(
        (v[0] as f64 + 0.5) * voxel_size,
        (v[1] as f64 + 0.5) * voxel_size,
        (v[2] as f64 + 0.5) * voxel_size,
    )
}

pub fn voxel_centers(voxels: &VoxelSet, voxel_size: f64) -> Vec<Vec3> {
    voxels.iter().map(|v| voxel_center(v, voxel_size)).collect()
}

pub fn voxelize(p: &Vec3, voxel_size: f64) -> Voxel {
    [
        (p.x / voxel_size).floor() as i32,
        (p.y / voxel_size).floor() as i32,
        (p.z / voxel_size).floor() as i32,
    ]
}

/// Axis-aligned box `[min, max]` of the projections onto the normalized image plane.
fn projected_box(points: &[Vec3], camera_pose: &PoseSE3) -> Option<[f64; 4]> {
    let to_cam = camera_pose.inverse();
    let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    let mut any = false;
    for p in points {
        let c = to_cam.transform_point(p);
        if c.z <= 1e-3 {
            continue;
        }
        let (x, y) = (c.x / c.z, c.y / c.z);
        b = [b[0].min(x), b[1].min(y), b[2].max(x), b[3].max(y)];
        any = true;
    }
    any.then_some(b)
}

fn box_iou(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let area = |r: &[f64; 4]| (r[2] - r[0]) * (r[3] - r[1]);
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// 2D IOU of the projected bounding boxes of two voxel sets.
pub fn projected_iou(a: &VoxelSet, b: &VoxelSet, voxel_size: f64, camera_pose: &PoseSE3) -> f64 {
    match (
        projected_box(&voxel_centers(a, voxel_size), camera_pose),
        projected_box(&voxel_centers(b, voxel_size), camera_pose),
    ) {
        (Some(x), Some(y)) => box_iou(&x, &y),
        _ => 0.0,
    }
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut r = x;
    while parent[r] != r {
        r = parent[r];
    }
    let mut c = x;
    while parent[c] != r {
        let next = parent[c];
        parent[c] = r;
        c = next;
    }
    r
}

fn combine(group: Vec<SegmentTrack>) -> SegmentTrack {
    let total: u32 = group.iter().map(|t| t.obs_count).sum();
    let dim = group[0].embedding.len();
    let mut emb = vec![0.0; dim];
    for t in &group {
        for (e, x) in emb.iter_mut().zip(&t.embedding) {
            *e += t.obs_count as f64 * x;
        }
    }
    let mut voxels = VoxelSet::new();
    for t in &group {
        voxels.extend(t.voxels.iter().copied());
    }
    SegmentTrack {
        id: group.iter().map(|t| t.id).min().unwrap_or(0),
        voxels,
        embedding: normalized(emb.into_iter().map(|x| x / total as f64).collect()),
        obs_count: total,
        last_seen: group.iter().map(|t| t.last_seen).max().unwrap_or(0),
    }
}

/// Merges tracks with high voxel IOU or high projected 2D IOU until nothing else merges.
pub fn merge_tracks(mut tracks: Vec<SegmentTrack>, cfg: &TrackerConfig, camera_pose: &PoseSE3) -> Vec<SegmentTrack> {
    loop {
        let n = tracks.len();
        let mut parent: Vec<usize> = (0..n).collect();
        let mut merged_any = false;
        for a in 0..n {
            for b in a + 1..n {
                let hit = iou_or_zero(&tracks[a].voxels, &tracks[b].voxels) > cfg.merge_iou_3d
                    || projected_iou(&tracks[a].voxels, &tracks[b].voxels, cfg.voxel_size, camera_pose) > cfg.merge_iou_2d;
                if hit {
                    let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                    if ra != rb {
                        parent[ra.max(rb)] = ra.min(rb);
                        merged_any = true;
                    }
                }
            }
        }
        if !merged_any {
            return tracks;
        }
        let mut groups: Vec<Vec<SegmentTrack>> = vec![Vec::new(); n];
        let roots: Vec<usize> = (0..n).map(|k| find(&mut parent, k)).collect();
        for (k, t) in tracks.into_iter().enumerate() {
            groups[roots[k]].push(t);
        }
        tracks = groups.into_iter().filter(|g| !g.is_empty()).map(combine).collect();
    }
}

/// `(bbox volume, linearity, planarity, scattering)` of a point set, floored.
///
/// With covariance eigenvalues `l1 >= l2 >= l3`: linearity `(l1 - l2) / l1`,
/// planarity `(l2 - l3) / l1`, scattering `l3 / l1`. The box spans point
/// extents, so voxel centers are not inflated by the voxel size.
pub fn compute_shape(points: &[Vec3]) -> [f64; 4] {
    if points.len() < 2 {
        return [SHAPE_FLOOR; 4];
    }
    let mut lo = points[0];
    let mut hi = points[0];
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let ext = hi - lo;
    let volume = ext.x * ext.y * ext.z;

    let n = points.len() as f64;
    let mean = points.iter().fold(Vec3::zeros(), |a, p| a + p) / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= n;
    let mut ev: Vec<f64> = SymmetricEigen::new(cov).eigenvalues.iter().map(|x| x.max(0.0)).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    let l1 = ev[0];
    if l1 <= 0.0 {
        return floor_shape([volume, 0.0, 0.0, 0.0]);
    }
    floor_shape([volume, (ev[0] - ev[1]) / l1, (ev[1] - ev[2]) / l1, ev[2] / l1])
}

/// Keep unless the observation looks like a large planar region (ground, walls).
pub fn filter_observation(obs: &SegmentObservation, cfg: &TrackerConfig) -> bool {
    let pts = voxel_centers(&obs.voxels, cfg.voxel_size);
    if pts.is_empty() {
        return false;
    }
    let f = compute_shape(&pts);
    let mut lo = pts[0];
    let mut hi = pts[0];
    for p in &pts {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let extent = (hi - lo).max();
    !(f[2] > cfg.planarity_thresh && extent > cfg.extent_thresh)
}

/// Low-data summary of a track with its centroid expressed in `map_frame`.
pub fn finalize_segment(track: &SegmentTrack, map_frame: &PoseSE3, voxel_size: f64) -> Segment {
    let pts = voxel_centers(&track.voxels, voxel_size);
    let world_centroid = if pts.is_empty() {
        Vec3::zeros()
    } else {
        pts.iter().fold(Vec3::zeros(), |a, p| a + p) / pts.len() as f64
    };
    Segment::new(
        track.id,
        map_frame.inverse().transform_point(&world_centroid),
        compute_shape(&pts),
        track.embedding.clone(),
        track.obs_count,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub voxels: Vec<Voxel>,
    pub embedding: Vec<f64>,
}

/// One line of the observation stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationFrame {
    pub frame_idx: u64,
    pub camera_pose: PoseSE3,
    pub observations: Vec<ObservationRecord>,
}

impl ObservationFrame {
    pub fn segment_observations(&self) -> Vec<SegmentObservation> {
        self.observations
            .iter()
            .filter(|o| !o.voxels.is_empty())
            .map(|o| SegmentObservation {
                voxels: o.voxels.iter().copied().collect(),
                embedding: normalized(o.embedding.clone()),
                frame_idx: self.frame_idx,
                camera_pose: self.camera_pose,
            })
            .collect()
    }
}

/// Single-owner stateful tracker; feed frames in order.
#[derive(Clone, Debug, Default)]
pub struct Tracker {
    cfg: TrackerConfig,
    tracks: Vec<SegmentTrack>,
    next_id: u64,
    observations_seen: usize,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Self {
        Self {
            cfg,
            ..Self::default()
        }
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn tracks(&self) -> &[SegmentTrack] {
        &self.tracks
    }

    pub fn observations_seen(&self) -> usize {
        self.observations_seen
    }

    pub fn process_frame(&mut self, frame: &ObservationFrame) {
        let obs: Vec<SegmentObservation> = frame
            .segment_observations()
            .into_iter()
            .filter(|o| filter_observation(o, &self.cfg))
            .collect();
        self.observations_seen += obs.len();
        let assignment = associate(&self.tracks, &obs, self.cfg.min_iou);
        let mut tracks = std::mem::take(&mut self.tracks);
        for &(t, o) in &assignment.matches {
            let track = std::mem::replace(&mut tracks[t], SegmentTrack::from_observation(0, &obs[o]));
            tracks[t] = update_track(track, &obs[o]);
        }
        for &o in &assignment.unmatched_observations {
            tracks.push(SegmentTrack::from_observation(self.next_id, &obs[o]));
            self.next_id += 1;
        }
        self.tracks = merge_tracks(tracks, &self.cfg, &frame.camera_pose);
    }

    /// Every current track as a world-frame segment.
    pub fn segments(&self) -> Vec<Segment> {
        self.tracks
            .iter()
            .map(|t| finalize_segment(t, &PoseSE3::identity(), self.cfg.voxel_size))
            .collect()
    }
}
