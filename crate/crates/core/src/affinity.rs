//! Pairwise and per-association affinity scores and how they are fused into the
//! affinity matrix.
//!
//! Two associations `a_p = (p_i, p_j)` and `a_q = (q_i, q_j)` are scored by how
//! well the intra-submap geometry `p_i -> q_i` matches `p_j -> q_j`. Each single
//! association is scored by how similar its two segments look (shape and
//! semantics). The fusion method decides how the two kinds of score meet.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::model::{dot, Association, AssociationSet, Segment, Submap};
use crate::par;
use crate::problem::AffinityProblem;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    GeometricMean,
    Product,
    ArithmeticMean,
    DiagonalOnly,
}

impl std::str::FromStr for Fusion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "geometric_mean" | "gm" => Ok(Fusion::GeometricMean),
            "product" => Ok(Fusion::Product),
            "arithmetic_mean" | "am" => Ok(Fusion::ArithmeticMean),
            "diagonal_only" | "diagonal" => Ok(Fusion::DiagonalOnly),
            other => Err(Error::Config(format!("unknown fusion method '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AffinityParams {
    pub sigma: f64,
    pub epsilon: f64,
    pub phi_min: f64,
    pub phi_max: f64,
    pub use_gravity: bool,
    pub use_semantic: bool,
    pub use_shape: bool,
    pub fusion: Fusion,
    /// Largest affinity problem `build_affinity` accepts.
    pub n_max: usize,
    /// Build matrix rows on the rayon pool.
    pub parallel: bool,
}

impl Default for AffinityParams {
    fn default() -> Self {
        Self {
            sigma: 0.4,
            epsilon: 0.6,
            phi_min: 0.85,
            phi_max: 0.95,
            use_gravity: true,
            use_semantic: true,
            use_shape: true,
            fusion: Fusion::GeometricMean,
            n_max: 10_000,
            parallel: false,
        }
    }
}

impl AffinityParams {
    /// Plain centroid-distance consistency with no similarity terms.
    pub fn geometry_only() -> Self {
        Self {
            use_gravity: false,
            use_semantic: false,
            use_shape: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !(self.epsilon > 0.0) {
            return Err(Error::Config("sigma and epsilon must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.phi_min) || !(0.0..1.0).contains(&self.phi_max) || self.phi_min >= self.phi_max {
            return Err(Error::Config("need 0 <= phi_min < phi_max < 1".into()));
        }
        Ok(())
    }
}

/// `| ‖c(p_i) − c(q_i)‖ − ‖c(p_j) − c(q_j)‖ |`.
pub fn distance_difference(p_i: &Vec3, q_i: &Vec3, p_j: &Vec3, q_j: &Vec3) -> f64 {
    ((p_i - q_i).norm() - (p_j - q_j).norm()).abs()
}

/// Planar distance difference and signed vertical offset difference.
pub fn gravity_differences(p_i: &Vec3, q_i: &Vec3, p_j: &Vec3, q_j: &Vec3) -> (f64, f64) {
    let di = p_i - q_i;
    let dj = p_j - q_j;
    let d_xy = (di.xy().norm() - dj.xy().norm()).abs();
    let d_z = (di.z - dj.z).abs();
    (d_xy, d_z)
}

/// Isotropic kernel on the distance difference `d`, gated at `epsilon`.
pub fn standard_kernel(d: f64, params: &AffinityParams) -> f64 {
    if d > params.epsilon {
        0.0
    } else {
        (-0.5 * d * d / (params.sigma * params.sigma)).exp()
    }
}

/// Gravity-aware kernel; planar and vertical terms get 2/3 and 1/3 of the variance.
/// Gated when the exponent argument exceeds `epsilon² / sigma²`.
pub fn gravity_kernel(d_xy: f64, d_z: f64, params: &AffinityParams) -> f64 {
    let s2 = params.sigma * params.sigma;
    let arg = d_xy * d_xy / (2.0 / 3.0 * s2) + d_z * d_z / (s2 / 3.0);
    if arg > params.epsilon * params.epsilon / s2 {
        0.0
    } else {
        (-0.5 * arg).exp()
    }
}

pub fn pairwise_score_standard(p_i: &Segment, q_i: &Segment, p_j: &Segment, q_j: &Segment, params: &AffinityParams) -> f64 {
    standard_kernel(
        distance_difference(&p_i.centroid, &q_i.centroid, &p_j.centroid, &q_j.centroid),
        params,
    )
}

pub fn pairwise_score_gravity(p_i: &Segment, q_i: &Segment, p_j: &Segment, q_j: &Segment, params: &AffinityParams) -> f64 {
    let (d_xy, d_z) = gravity_differences(&p_i.centroid, &q_i.centroid, &p_j.centroid, &q_j.centroid);
    gravity_kernel(d_xy, d_z, params)
}

/// Dispatches on `params.use_gravity`.
pub fn pairwise_score(p_i: &Segment, q_i: &Segment, p_j: &Segment, q_j: &Segment, params: &AffinityParams) -> f64 {
    if params.use_gravity {
        pairwise_score_gravity(p_i, q_i, p_j, q_j, params)
    } else {
        pairwise_score_standard(p_i, q_i, p_j, q_j, params)
    }
}

/// Linear rescale of a cosine similarity onto `[0, 1]` between `phi_min` and `phi_max`.
pub fn rescale_cosine(cs: f64, params: &AffinityParams) -> f64 {
    if cs <= params.phi_min {
        0.0
    } else if cs >= params.phi_max {
        1.0
    } else {
        (cs - params.phi_min) / (params.phi_max - params.phi_min)
    }
}

pub fn semantic_similarity(p_i: &Segment, p_j: &Segment, params: &AffinityParams) -> f64 {
    rescale_cosine(dot(&p_i.embedding, &p_j.embedding), params)
}

pub fn shape_ratio_score(f_i: &[f64; 4], f_j: &[f64; 4]) -> f64 {
    let prod: f64 = f_i
        .iter()
        .zip(f_j)
        .map(|(&x, &y)| if x <= 0.0 || y <= 0.0 { 0.0 } else { (x / y).min(y / x) })
        .product();
    prod.powf(0.25)
}

pub fn shape_similarity(p_i: &Segment, p_j: &Segment) -> f64 {
    shape_ratio_score(&p_i.shape, &p_j.shape)
}

/// `s_o`: geometric mean of the enabled shape and semantic scores (1 when neither is enabled).
pub fn segment_similarity(p_i: &Segment, p_j: &Segment, params: &AffinityParams) -> f64 {
    match (params.use_shape, params.use_semantic) {
        (true, true) => (shape_similarity(p_i, p_j) * semantic_similarity(p_i, p_j, params)).sqrt(),
        (true, false) => shape_similarity(p_i, p_j),
        (false, true) => semantic_similarity(p_i, p_j, params),
        (false, false) => 1.0,
    }
}

/// Off-diagonal affinity entry from the pairwise score and both association scores.
pub fn fuse(s_a: f64, s_o_p: f64, s_o_q: f64, method: Fusion) -> f64 {
    if s_a == 0.0 {
        return 0.0;
    }
    // Fixed operand order keeps M bitwise symmetric.
    let (lo, hi) = if s_o_p <= s_o_q { (s_o_p, s_o_q) } else { (s_o_q, s_o_p) };
    match method {
        Fusion::GeometricMean => (s_a * lo * hi).cbrt(),
        Fusion::Product => s_a * lo * hi,
        Fusion::ArithmeticMean => (s_a + lo + hi) / 3.0,
        Fusion::DiagonalOnly => s_a,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PutativeMode {
    AllToAll,
    /// Keep pairs with `s_o >= threshold`.
    Prune(f64),
}

pub fn generate_putative(submap_i: &Submap, submap_j: &Submap, mode: PutativeMode, params: &AffinityParams) -> AssociationSet {
    let mut out = AssociationSet::new();
    for (a, p_i) in submap_i.segments.iter().enumerate() {
        for (b, p_j) in submap_j.segments.iter().enumerate() {
            let s_o = segment_similarity(p_i, p_j, params);
            let keep = match mode {
                PutativeMode::AllToAll => true,
                PutativeMode::Prune(threshold) => s_o >= threshold,
            };
            if keep {
                out.push(Association::new(a, b), s_o);
            }
        }
    }
    out
}

/// Intra-submap geometry cached once per submap.
struct Geometry {
    m: usize,
    dist: Vec<f64>,
    dxy: Vec<f64>,
    z: Vec<f64>,
}

impl Geometry {
    fn new(submap: &Submap) -> Self {
        let c = submap.centroids();
        let m = c.len();
        let mut dist = vec![0.0; m * m];
        let mut dxy = vec![0.0; m * m];
        for a in 0..m {
            for b in 0..m {
                let d = c[a] - c[b];
                dist[a * m + b] = d.norm();
                dxy[a * m + b] = d.xy().norm();
            }
        }
        let z = c.iter().map(|v| v.z).collect();
        Self { m, dist, dxy, z }
    }
}

/// Affinity matrix over `putative`, with the geometric gate defining the constraint mask.
///
/// Two associations that reuse a segment on either side are always masked, so a
/// selection is a one-to-one matching.
pub fn build_affinity(submap_i: &Submap, submap_j: &Submap, params: &AffinityParams, putative: &AssociationSet) -> Result<AffinityProblem> {
    let fusion = params.fusion;
    build_with(submap_i, submap_j, params, putative, |s_a, p, q| fuse(s_a, p, q, fusion), |s_o| match fusion {
        Fusion::DiagonalOnly => s_o,
        _ => 1.0,
    })
}

/// Unit weights wherever the geometric gate passes; similarity never enters the matrix.
pub fn build_binary_affinity(submap_i: &Submap, submap_j: &Submap, params: &AffinityParams, putative: &AssociationSet) -> Result<AffinityProblem> {
    let geometry = AffinityParams {
        use_semantic: false,
        use_shape: false,
        ..params.clone()
    };
    build_with(submap_i, submap_j, &geometry, putative, |_, _, _| 1.0, |_| 1.0)
}

fn build_with<F, D>(
    submap_i: &Submap,
    submap_j: &Submap,
    params: &AffinityParams,
    putative: &AssociationSet,
    off_diagonal: F,
    diagonal: D,
) -> Result<AffinityProblem>
where
    F: Fn(f64, f64, f64) -> f64 + Sync + Send,
    D: Fn(f64) -> f64,
{
    let n = putative.len();
    if n == 0 {
        return Err(Error::ContractViolation("no putative associations".into()));
    }
    if n > params.n_max {
        return Err(Error::ProblemTooLarge { n, limit: params.n_max });
    }
    let gi = Geometry::new(submap_i);
    let gj = Geometry::new(submap_j);
    let pairs = &putative.pairs;
    let s_o: Vec<f64> = pairs
        .iter()
        .map(|a| segment_similarity(&submap_i.segments[a.i_idx], &submap_j.segments[a.j_idx], params))
        .collect();

    let rows = par::map_range(n, params.parallel, |p| {
        let ap = pairs[p];
        let mut row = Vec::new();
        for (q, aq) in pairs.iter().enumerate() {
            if q == p || aq.i_idx == ap.i_idx || aq.j_idx == ap.j_idx {
                continue;
            }
            let ii = ap.i_idx * gi.m + aq.i_idx;
            let jj = ap.j_idx * gj.m + aq.j_idx;
            let s_a = if params.use_gravity {
                let d_xy = (gi.dxy[ii] - gj.dxy[jj]).abs();
                let d_z = ((gi.z[ap.i_idx] - gi.z[aq.i_idx]) - (gj.z[ap.j_idx] - gj.z[aq.j_idx])).abs();
                gravity_kernel(d_xy, d_z, params)
            } else {
                standard_kernel((gi.dist[ii] - gj.dist[jj]).abs(), params)
            };
            if s_a > 0.0 {
                row.push((q, off_diagonal(s_a, s_o[p], s_o[q])));
            }
        }
        row
    });

    let diag = s_o.iter().map(|&s| diagonal(s)).collect();
    Ok(AffinityProblem::from_rows(diag, rows))
}
