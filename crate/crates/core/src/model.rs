//! Segments, submaps, associations and the JSON-lines submap interchange format.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PoseSE3, Vec3};

/// Lower bound applied to every shape attribute so ratios stay finite.
pub const SHAPE_FLOOR: f64 = 1e-6;

pub const DEFAULT_EMBEDDING_DIM: usize = 768;

/// A mapped open-set object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub id: u64,
    #[serde(with = "vec3_serde")]
    pub centroid: Vec3,
    /// `(bbox volume, linearity, planarity, scattering)`.
    pub shape: [f64; 4],
    pub embedding: Vec<f64>,
    pub obs_count: u32,
}

impl Segment {
    /// Builds a segment, normalizing the embedding and flooring the shape vector.
    pub fn new(id: u64, centroid: Vec3, shape: [f64; 4], embedding: Vec<f64>, obs_count: u32) -> Self {
        Self {
            id,
            centroid,
            shape: floor_shape(shape),
            embedding: normalized(embedding),
            obs_count: obs_count.max(1),
        }
    }

    pub fn embedding_norm(&self) -> f64 {
        norm(&self.embedding)
    }

    /// Same segment with its centroid mapped through `pose`.
    pub fn transformed(&self, pose: &PoseSE3) -> Segment {
        Segment {
            centroid: pose.transform_point(&self.centroid),
            ..self.clone()
        }
    }
}

pub fn floor_shape(shape: [f64; 4]) -> [f64; 4] {
    shape.map(|x| if x.is_finite() { x.max(SHAPE_FLOOR) } else { SHAPE_FLOOR })
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Unit-norm copy of `v`; a zero vector is returned unchanged.
pub fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let n = norm(&v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SourceId {
    pub robot_id: u32,
    pub submap_idx: u32,
}

/// Segments expressed in a gravity-aligned local frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Submap {
    /// Pose of the submap frame in the robot's odometry frame.
    pub frame_pose: PoseSE3,
    pub segments: Vec<Segment>,
    pub source_id: SourceId,
    /// Submap center in the world frame; only used for evaluation.
    pub center_world: Vec3,
}

impl Submap {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn centroids(&self) -> Vec<Vec3> {
        self.segments.iter().map(|s| s.centroid).collect()
    }

    /// Largest absolute pitch/roll entry of the frame rotation (zero for gravity-aligned frames).
    pub fn tilt_error(&self) -> f64 {
        let r = &self.frame_pose.rotation;
        [r[(0, 2)], r[(1, 2)], r[(2, 0)], r[(2, 1)], r[(2, 2)] - 1.0]
            .iter()
            .fold(0.0_f64, |m, x| m.max(x.abs()))
    }
}

#[derive(Serialize, Deserialize)]
struct SubmapRecord {
    robot_id: u32,
    submap_idx: u32,
    pose: PoseSE3,
    center_world: [f64; 3],
    segments: Vec<Segment>,
}

impl Serialize for Submap {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        SubmapRecord {
            robot_id: self.source_id.robot_id,
            submap_idx: self.source_id.submap_idx,
            pose: self.frame_pose,
            center_world: self.center_world.into(),
            segments: self.segments.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Submap {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = SubmapRecord::deserialize(d)?;
        Ok(Submap {
            frame_pose: r.pose,
            segments: r.segments,
            source_id: SourceId {
                robot_id: r.robot_id,
                submap_idx: r.submap_idx,
            },
            center_world: Vec3::from(r.center_world),
        })
    }
}

/// One putative or inlier pairing of `submap_i.segments[i_idx]` with `submap_j.segments[j_idx]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Association {
    pub i_idx: usize,
    pub j_idx: usize,
}

impl Association {
    pub fn new(i_idx: usize, j_idx: usize) -> Self {
        Self { i_idx, j_idx }
    }
}

/// Associations with one score each.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AssociationSet {
    pub pairs: Vec<Association>,
    pub scores: Vec<f64>,
}

impl AssociationSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: Vec<Association>) -> Self {
        let scores = vec![1.0; pairs.len()];
        Self { pairs, scores }
    }

    pub fn push(&mut self, a: Association, score: f64) {
        self.pairs.push(a);
        self.scores.push(score);
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Association> {
        self.pairs.iter()
    }

    /// Subset selected by a binary indicator over `self.pairs`.
    pub fn select(&self, selected: &[bool]) -> AssociationSet {
        let mut out = AssociationSet::new();
        for (k, (&a, &s)) in self.pairs.iter().zip(&self.scores).enumerate() {
            if selected.get(k).copied().unwrap_or(false) {
                out.push(a, s);
            }
        }
        out
    }

    /// Checks index ranges against submap sizes and rejects duplicates.
    pub fn validate(&self, m_i: usize, m_j: usize) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.pairs.len());
        for a in &self.pairs {
            if a.i_idx >= m_i || a.j_idx >= m_j {
                return Err(Error::ContractViolation(format!(
                    "association ({}, {}) out of range for sizes ({m_i}, {m_j})",
                    a.i_idx, a.j_idx
                )));
            }
            if !seen.insert(*a) {
                return Err(Error::ContractViolation(format!(
                    "duplicate association ({}, {})",
                    a.i_idx, a.j_idx
                )));
            }
        }
        Ok(())
    }
}

pub fn read_submaps<R: BufRead>(reader: R) -> Result<Vec<Submap>> {
    read_jsonl(reader)
}

pub fn write_submaps<W: Write>(mut writer: W, submaps: &[Submap]) -> Result<()> {
    for s in submaps {
        serde_json::to_writer(&mut writer, s)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_submaps_file(path: impl AsRef<std::path::Path>) -> Result<Vec<Submap>> {
    let f = std::fs::File::open(path)?;
    read_submaps(std::io::BufReader::new(f))
}

pub fn write_submaps_file(path: impl AsRef<std::path::Path>, submaps: &[Submap]) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_submaps(&mut w, submaps)?;
    w.flush()?;
    Ok(())
}

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<T: serde::de::DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line).map_err(|source| Error::Parse { line: n + 1, source })?;
        out.push(v);
    }
    Ok(out)
}

pub mod vec3_serde {
    use super::Vec3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Vec3, s: S) -> Result<S::Ok, S::Error> {
        [v.x, v.y, v.z].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec3, D::Error> {
        let a = <[f64; 3]>::deserialize(d)?;
        Ok(Vec3::from(a))
    }
}
