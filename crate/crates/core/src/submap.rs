//! Per-robot submap creation from a pose and segment stream.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{yaw_only, PoseSE3, Vec3};
use crate::model::{Segment, SourceId, Submap};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubmapPolicy {
    /// Odometry distance between consecutive submap instantiations.
    pub c_d: f64,
    /// Radius around the submap center.
    pub r: f64,
    /// Maximum number of segments kept per submap.
    #[serde(rename = "N")]
    pub max_segments: usize,
    pub tau: usize,
}

impl Default for SubmapPolicy {
    fn default() -> Self {
        Self {
            c_d: 10.0,
            r: 15.0,
            max_segments: 40,
            tau: 4,
        }
    }
}

impl SubmapPolicy {
    pub fn large() -> Self {
        Self {
            r: 25.0,
            max_segments: 60,
            ..Self::default()
        }
    }

    pub fn extra_large() -> Self {
        Self {
            r: 30.0,
            max_segments: 80,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c_d > 0.0) || !(self.r > 0.0) || self.max_segments == 0 || self.tau == 0 {
            return Err(Error::Config(format!("invalid submap policy {self:?}")));
        }
        Ok(())
    }
}

/// A submap still collecting segments; segment centroids are in the odometry frame.
#[derive(Clone, Debug, PartialEq)]
pub struct OpenSubmap {
    pub submap_idx: u32,
    pub frame_pose: PoseSE3,
    pub center: Vec3,
    pub segments: BTreeMap<u64, Segment>,
}

impl OpenSubmap {
    pub fn new(submap_idx: u32, pose: &PoseSE3) -> Result<Self> {
        let frame_pose = yaw_only(pose)?;
        Ok(Self {
            submap_idx,
            frame_pose,
            center: pose.translation,
            segments: BTreeMap::new(),
        })
    }
}

/// Adds (or refreshes) segments within `r` of the center; true once the robot has left the radius.
pub fn accumulate(open: &mut OpenSubmap, segments: &[Segment], pose: &PoseSE3, r: f64) -> bool {
    for s in segments {
        if (s.centroid - open.center).norm() <= r {
            open.segments.insert(s.id, s.clone());
        } else {
            open.segments.remove(&s.id);
        }
    }
    (pose.translation - open.center).norm() > r
}

/// Keeps the `N` segments nearest the center and expresses them in the submap frame.
pub fn finalize(open: &OpenSubmap, policy: &SubmapPolicy, robot_id: u32, world_from_odom: &PoseSE3) -> Submap {
    let mut kept: Vec<(f64, &Segment)> = open
        .segments
        .values()
        .map(|s| ((s.centroid - open.center).norm(), s))
        .collect();
    kept.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.id.cmp(&b.1.id)));
    kept.truncate(policy.max_segments);
    kept.sort_by_key(|(_, s)| s.id);
    let to_frame = open.frame_pose.inverse();
    Submap {
        frame_pose: open.frame_pose,
        segments: kept.into_iter().map(|(_, s)| s.transformed(&to_frame)).collect(),
        source_id: SourceId {
            robot_id,
            submap_idx: open.submap_idx,
        },
        center_world: world_from_odom.transform_point(&open.center),
    }
}

/// Single-robot submap bookkeeping; feed poses in stream order.
#[derive(Clone, Debug)]
pub struct SubmapManager {
    policy: SubmapPolicy,
    robot_id: u32,
    world_from_odom: PoseSE3,
    since_last: f64,
    last_position: Option<Vec3>,
    open: Vec<OpenSubmap>,
    next_idx: u32,
    started: bool,
}

impl SubmapManager {
    pub fn new(policy: SubmapPolicy, robot_id: u32) -> Self {
        Self {
            policy,
            robot_id,
            world_from_odom: PoseSE3::identity(),
            since_last: 0.0,
            last_position: None,
            open: Vec::new(),
            next_idx: 0,
            started: false,
        }
    }

    /// Ground-truth odometry-to-world transform, used only to record `center_world`.
    pub fn with_world_from_odom(mut self, t: PoseSE3) -> Self {
        self.world_from_odom = t;
        self
    }

    pub fn policy(&self) -> &SubmapPolicy {
        &self.policy
    }

    pub fn open_submaps(&self) -> &[OpenSubmap] {
        &self.open
    }

    /// Opens a new submap on the first pose or once more than `c_d` has been traveled since the last one.
    pub fn step(&mut self, pose: &PoseSE3, odom_dist_since_last: f64) -> Result<Option<u32>> {
        if self.started && odom_dist_since_last <= self.policy.c_d {
            return Ok(None);
        }
        let open = OpenSubmap::new(self.next_idx, pose)?;
        self.started = true;
        self.since_last = 0.0;
        self.next_idx += 1;
        self.open.push(open);
        Ok(Some(self.next_idx - 1))
    }

    /// Advances by one pose with the current world-frame (odometry) segment estimates.
    /// Returns submaps finalized by this step.
    pub fn process(&mut self, pose: &PoseSE3, segments: &[Segment]) -> Result<Vec<Submap>> {
        if let Some(prev) = self.last_position {
            self.since_last += (pose.translation - prev).norm();
        }
        self.last_position = Some(pose.translation);
        self.step(pose, self.since_last)?;
        let mut done = Vec::new();
        let mut still_open = Vec::new();
        for mut open in std::mem::take(&mut self.open) {
            if accumulate(&mut open, segments, pose, self.policy.r) {
                done.push(finalize(&open, &self.policy, self.robot_id, &self.world_from_odom));
            } else {
                still_open.push(open);
            }
        }
        self.open = still_open;
        Ok(done)
    }

    /// Finalizes everything still open.
    pub fn flush(&mut self) -> Vec<Submap> {
        std::mem::take(&mut self.open)
            .iter()
            .map(|o| finalize(o, &self.policy, self.robot_id, &self.world_from_odom))
            .collect()
    }
}
