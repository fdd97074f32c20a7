//! Closed-form rigid fitting and the end-to-end submap alignment pipeline.

use std::time::Instant;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::affinity::{build_affinity, generate_putative, AffinityParams, PutativeMode};
use crate::error::{Error, Result};
use crate::geometry::{compose, PoseSE3, Vec3};
use crate::model::{AssociationSet, Submap};
use crate::solver::{solve_binary_topk, solve_densest, solve_ransac, SolverOptions, SolverResult};

/// Least-squares rigid transform `T` with `a_k ≈ T b_k` (centroid subtraction + SVD).
pub fn arun(points_a: &[Vec3], points_b: &[Vec3]) -> Result<PoseSE3> {
    let k = points_a.len();
    if k != points_b.len() {
        return Err(Error::ContractViolation(format!(
            "point sets differ in size: {k} vs {}",
            points_b.len()
        )));
    }
    if k < 3 {
        return Err(Error::InsufficientPoints { needed: 3, got: k });
    }
    let mean = |pts: &[Vec3]| pts.iter().fold(Vec3::zeros(), |acc, p| acc + p) / k as f64;
    let ca = mean(points_a);
    let cb = mean(points_b);
    let mut h = Matrix3::zeros();
    for (a, b) in points_a.iter().zip(points_b) {
        h += (b - cb) * (a - ca).transpose();
    }
    let svd = h.svd(true, true);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]));
    let s1 = svd.singular_values[order[0]];
    let s2 = svd.singular_values[order[1]];
    if !(s1 > 0.0) || s2 < 1e-12 * s1 {
        return Err(Error::DegenerateGeometry(format!(
            "cross-covariance singular values {s1:e}, {s2:e}"
        )));
    }
    let u = svd.u.expect("requested U");
    let v = svd.v_t.expect("requested V").transpose();
    // h = U S Vᵀ; R = V D Uᵀ with D fixing the determinant on the weakest direction.
    let mut d = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        d[(order[2], order[2])] = -1.0;
    }
    let r = v * d * u.transpose();
    Ok(PoseSE3::new(r, ca - r * cb))
}

/// True when the roll or pitch of `t` exceeds `tol_deg` (the estimate disagrees with gravity).
pub fn gravity_reject(t: &PoseSE3, tol_deg: f64) -> bool {
    let (_, pitch, roll) = t.euler_zyx();
    pitch.to_degrees().abs() > tol_deg || roll.to_degrees().abs() > tol_deg
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Method {
    /// Fused affinity over all-to-all putative associations, densest-subgraph inliers.
    Densest,
    /// Similarity-pruned putative set, geometry-only affinity, gravity check afterwards.
    Prune { threshold: f64 },
    /// Top-k similar candidates per segment with a binary affinity matrix.
    BinaryTopK { k: usize },
    /// RANSAC on centroids.
    Ransac { iters: usize, inlier_tol: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignParams {
    pub affinity: AffinityParams,
    pub solver: SolverOptions,
    pub method: Method,
    pub tau: usize,
    pub gravity_reject_tol_deg: f64,
}

impl Default for AlignParams {
    fn default() -> Self {
        Self {
            affinity: AffinityParams::default(),
            solver: SolverOptions::default(),
            method: Method::Densest,
            tau: 4,
            gravity_reject_tol_deg: 5.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    /// Maps submap-j frame coordinates into submap-i frame coordinates.
    pub transform_submap: Option<PoseSE3>,
    /// Maps robot-j odometry coordinates into robot-i odometry coordinates.
    pub transform_robot: Option<PoseSE3>,
    pub inliers: AssociationSet,
    pub count: usize,
    pub accepted: bool,
    /// Seconds.
    pub wall_time: f64,
}

/// `T^i_{M_i} · T^{M_i}_{M_j} · (T^j_{M_j})⁻¹`.
pub fn chain_to_robot(submap_i: &Submap, submap_j: &Submap, transform_submap: &PoseSE3) -> PoseSE3 {
    compose(
        &compose(&submap_i.frame_pose, transform_submap),
        &submap_j.frame_pose.inverse(),
    )
}

fn select_inliers(submap_i: &Submap, submap_j: &Submap, params: &AlignParams) -> Result<(AssociationSet, SolverResult)> {
    match params.method {
        Method::Densest => {
            let putative = generate_putative(submap_i, submap_j, PutativeMode::AllToAll, &params.affinity);
            solve_putative(submap_i, submap_j, &params.affinity, &params.solver, putative)
        }
        Method::Prune { threshold } => {
            // Similarity only prunes; the matrix itself is plain centroid geometry.
            let putative = generate_putative(submap_i, submap_j, PutativeMode::Prune(threshold), &params.affinity);
            let geometry = AffinityParams {
                use_gravity: false,
                use_semantic: false,
                use_shape: false,
                ..params.affinity.clone()
            };
            solve_putative(submap_i, submap_j, &geometry, &params.solver, putative)
        }
        Method::BinaryTopK { k } => solve_binary_topk(submap_i, submap_j, k, &params.affinity, &params.solver),
        Method::Ransac { iters, inlier_tol } => {
            if submap_i.len() < 3 || submap_j.len() < 3 {
                let n = submap_i.len() * submap_j.len();
                return Ok((
                    AssociationSet::new(),
                    SolverResult {
                        selected: vec![false; n],
                        density: 0.0,
                        iterations: 0,
                        wall_time: 0.0,
                    },
                ));
            }
            solve_ransac(submap_i, submap_j, iters, inlier_tol, params.solver.seed)
        }
    }
}

fn solve_putative(
    submap_i: &Submap,
    submap_j: &Submap,
    affinity: &AffinityParams,
    solver: &SolverOptions,
    putative: AssociationSet,
) -> Result<(AssociationSet, SolverResult)> {
    if putative.is_empty() {
        return Ok((
            putative,
            SolverResult {
                selected: Vec::new(),
                density: 0.0,
                iterations: 0,
                wall_time: 0.0,
            },
        ));
    }
    let prob = build_affinity(submap_i, submap_j, affinity, &putative)?;
    let res = solve_densest(&prob, solver)?;
    Ok((putative, res))
}

/// Associate, select inliers, fit the relative transform and chain it to the robot frames.
pub fn align_submaps(submap_i: &Submap, submap_j: &Submap, params: &AlignParams) -> Result<AlignmentResult> {
    let started = Instant::now();
    let (putative, res) = select_inliers(submap_i, submap_j, params)?;
    let inliers = putative.select(&res.selected);
    let count = inliers.len();

    let mut transform_submap = None;
    if count >= 3 {
        let a: Vec<Vec3> = inliers.iter().map(|x| submap_i.segments[x.i_idx].centroid).collect();
        let b: Vec<Vec3> = inliers.iter().map(|x| submap_j.segments[x.j_idx].centroid).collect();
        // Degenerate inlier geometry leaves the transform absent.
        transform_submap = arun(&a, &b).ok();
    }
    let mut accepted = count >= params.tau && transform_submap.is_some();
    if let (Method::Prune { .. }, Some(t)) = (params.method, transform_submap.as_ref()) {
        if gravity_reject(t, params.gravity_reject_tol_deg) {
            accepted = false;
        }
    }
    let transform_robot = transform_submap.as_ref().map(|t| chain_to_robot(submap_i, submap_j, t));
    Ok(AlignmentResult {
        transform_submap,
        transform_robot,
        inliers,
        count,
        accepted,
        wall_time: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rot_x, rot_z};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(rng: &mut impl Rng, k: usize) -> Vec<Vec3> {
        (0..k)
            .map(|_| Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)))
            .collect()
    }

    #[test]
    fn identity_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = random_points(&mut rng, 6);
        let t = arun(&pts, &pts).unwrap();
        assert!((t.rotation - Matrix3::identity()).abs().max() < 1e-12);
        assert!(t.translation.norm() < 1e-12);
    }

    #[test]
    fn recovers_constructed_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gt = PoseSE3::from_euler_zyx(0.7, -0.3, 1.1, Vec3::new(1.0, -4.0, 2.0));
        let a = random_points(&mut rng, 10);
        let b: Vec<Vec3> = a.iter().map(|p| gt.rotation.transpose() * (p - gt.translation)).collect();
        let t = arun(&a, &b).unwrap();
        assert!((t.rotation - gt.rotation).abs().max() < 1e-9);
        assert!((t.translation - gt.translation).norm() < 1e-9);
    }

    #[test]
    fn mirrored_set_yields_proper_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_points(&mut rng, 8);
        let b: Vec<Vec3> = a.iter().map(|p| Vec3::new(p.x, p.y, -p.z)).collect();
        let t = arun(&a, &b).unwrap();
        assert!((t.rotation.determinant() - 1.0).abs() < 1e-9);
        let residual: f64 = a.iter().zip(&b).map(|(x, y)| (x - t.transform_point(y)).norm_squared()).sum();
        assert!(residual > 1e-3);
    }

    #[test]
    fn collinear_is_degenerate() {
        let a: Vec<Vec3> = (0..5).map(|k| Vec3::new(k as f64, 0.0, 0.0)).collect();
        assert!(matches!(arun(&a, &a), Err(Error::DegenerateGeometry(_))));
        assert!(matches!(arun(&a[..2], &a[..2]), Err(Error::InsufficientPoints { .. })));
    }

    #[test]
    fn planar_set_is_fine() {
        let a = vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 2.0, 0.0)];
        let gt = PoseSE3::from_yaw(0.5, Vec3::new(3.0, 0.0, 1.0));
        let b: Vec<Vec3> = a.iter().map(|p| gt.inverse().transform_point(p)).collect();
        let t = arun(&a, &b).unwrap();
        assert!((t.rotation - gt.rotation).abs().max() < 1e-9);
    }

    #[test]
    fn gravity_reject_examples() {
        assert!(!gravity_reject(&PoseSE3::identity(), 5.0));
        assert!(!gravity_reject(&PoseSE3::new(rot_z(170f64.to_radians()), Vec3::zeros()), 5.0));
        assert!(gravity_reject(&PoseSE3::new(rot_x(10f64.to_radians()), Vec3::zeros()), 5.0));
    }
}
