//! Inlier selection: pick the densest mutually consistent subset of putative
//! associations, plus an exhaustive oracle and two classical baselines.

use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::affinity::{build_binary_affinity, segment_similarity, AffinityParams};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::model::{Association, AssociationSet, Submap};
use crate::problem::AffinityProblem;
use crate::registration::arun;

pub const BRUTE_FORCE_LIMIT: usize = 20;

/// Greedy restarts seeded at the strongest relaxed nodes.
const RESTARTS: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Outer (penalty homotopy) iterations.
    pub max_iters: usize,
    /// Projected gradient steps per penalty value.
    pub max_inner: usize,
    pub tol: f64,
    pub homotopy_factor: f64,
    pub seed: u64,
    pub ransac_iters: usize,
    pub ransac_inlier_tol: f64,
    pub topk: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iters: 1000,
            max_inner: 200,
            tol: 1e-8,
            homotopy_factor: 1.4,
            seed: 0,
            ransac_iters: 100_000,
            ransac_inlier_tol: 0.5,
            topk: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverResult {
    pub selected: Vec<bool>,
    pub density: f64,
    pub iterations: usize,
    /// Seconds.
    pub wall_time: f64,
}

impl SolverResult {
    pub fn indices(&self) -> Vec<usize> {
        self.selected
            .iter()
            .enumerate()
            .filter_map(|(k, &s)| s.then_some(k))
            .collect()
    }

    pub fn count(&self) -> usize {
        self.selected.iter().filter(|&&s| s).count()
    }

    fn empty(n: usize, started: Instant) -> Self {
        Self {
            selected: vec![false; n],
            density: 0.0,
            iterations: 0,
            wall_time: started.elapsed().as_secs_f64(),
        }
    }
}

fn relative_tie(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

/// `uᵀ (M − d C̄) u` together with `M u` and `C̄ u`.
struct Workspace {
    mu: Vec<f64>,
    cu: Vec<f64>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Self {
            mu: vec![0.0; n],
            cu: vec![0.0; n],
        }
    }

    fn evaluate(&mut self, prob: &AffinityProblem, u: &[f64], d: f64) -> f64 {
        prob.matvec(u, &mut self.mu);
        prob.masked_sum(u, &mut self.cu);
        u.iter()
            .zip(self.mu.iter().zip(&self.cu))
            .map(|(x, (m, c))| x * (m - d * c))
            .sum()
    }
}

fn project_to_sphere(v: &mut [f64]) -> bool {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n <= 0.0 || !n.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= n);
    true
}

/// Nonnegative leading direction of `M + I` by power iteration.
fn initial_vector(prob: &AffinityProblem) -> Vec<f64> {
    let n = prob.n();
    let mut u = vec![1.0 / (n as f64).sqrt(); n];
    let mut next = vec![0.0; n];
    for _ in 0..30 {
        prob.matvec(&u, &mut next);
        next.iter_mut().zip(&u).for_each(|(x, y)| *x += y);
        if !project_to_sphere(&mut next) {
            break;
        }
        std::mem::swap(&mut u, &mut next);
    }
    u
}

fn support_feasible(prob: &AffinityProblem, u: &[f64]) -> bool {
    let umax = u.iter().cloned().fold(0.0, f64::max);
    let support: Vec<usize> = (0..u.len()).filter(|&p| u[p] > 1e-9 * umax).collect();
    prob.is_feasible(&support)
}

/// Densest feasible prefix of the nodes ordered by decreasing `u`.
fn round_sorted_prefix(prob: &AffinityProblem, u: &[f64]) -> (Vec<usize>, f64) {
    let mut order: Vec<usize> = (0..u.len()).collect();
    order.sort_by(|&a, &b| u[b].total_cmp(&u[a]).then(a.cmp(&b)));
    let mut chosen: Vec<usize> = Vec::new();
    let mut total = 0.0;
    let mut best = (0usize, f64::NEG_INFINITY);
    for &p in &order {
        if chosen.iter().any(|&q| !prob.consistent(p, q)) {
            break;
        }
        total += prob.diag()[p] + 2.0 * chosen.iter().map(|&q| prob.get(p, q)).sum::<f64>();
        chosen.push(p);
        let dens = total / chosen.len() as f64;
        if dens > best.1 || relative_tie(dens, best.1) {
            best = (chosen.len(), dens);
        }
    }
    chosen.truncate(best.0);
    chosen.sort_unstable();
    (chosen, best.1)
}

/// Single add/remove moves that raise the density while keeping the set feasible.
fn polish(prob: &AffinityProblem, chosen: Vec<usize>) -> Vec<usize> {
    let n = prob.n();
    let mut member = vec![false; n];
    let mut links = vec![0usize; n];
    let mut sums = vec![0.0; n];
    let mut total = 0.0;
    let mut k = 0usize;
    let toggle = |p: usize, member: &mut Vec<bool>, links: &mut Vec<usize>, sums: &mut Vec<f64>, total: &mut f64, k: &mut usize| {
        let sign = if member[p] { -1.0 } else { 1.0 };
        if member[p] {
            *total -= prob.diag()[p] + 2.0 * sums[p];
            *k -= 1;
        } else {
            *total += prob.diag()[p] + 2.0 * sums[p];
            *k += 1;
        }
        member[p] = !member[p];
        for (q, v) in prob.neighbors(p) {
            sums[q] += sign * v;
            if sign > 0.0 {
                links[q] += 1;
            } else {
                links[q] -= 1;
            }
        }
    };
    for &p in &chosen {
        toggle(p, &mut member, &mut links, &mut sums, &mut total, &mut k);
    }
    for _ in 0..4 * n {
        let current = total / k.max(1) as f64;
        let mut best: Option<(f64, usize)> = None;
        for p in 0..n {
            let cand = if member[p] {
                if k <= 1 {
                    continue;
                }
                (total - prob.diag()[p] - 2.0 * sums[p]) / (k - 1) as f64
            } else {
                if links[p] != k {
                    continue;
                }
                (total + prob.diag()[p] + 2.0 * sums[p]) / (k + 1) as f64
            };
            if cand > current && !relative_tie(cand, current) && best.is_none_or(|(b, _)| cand > b) {
                best = Some((cand, p));
            }
        }
        let Some((_, p)) = best else { break };
        toggle(p, &mut member, &mut links, &mut sums, &mut total, &mut k);
    }
    (0..n).filter(|&p| member[p]).collect()
}

/// Approximate maximizer of `uᵀMu / uᵀu` over binary `u` honouring the zero mask.
///
/// Relaxes `u` to the nonnegative unit sphere and runs projected gradient ascent
/// on `uᵀ(M − d·C̄)u`, where `C̄` is the indicator of masked pairs. The penalty
/// `d` starts at zero and grows geometrically until the support of `u` is
/// feasible. The relaxed vector is then rounded to its densest feasible prefix
/// and refined by greedy single-node moves.
pub fn solve_densest(prob: &AffinityProblem, opts: &SolverOptions) -> Result<SolverResult> {
    let started = Instant::now();
    let n = prob.n();
    if n == 0 {
        return Err(Error::ContractViolation("empty affinity problem".into()));
    }
    prob.check_symmetric(1e-12)?;
    if n == 1 {
        return Ok(SolverResult {
            selected: vec![true],
            density: prob.diag()[0],
            iterations: 0,
            wall_time: started.elapsed().as_secs_f64(),
        });
    }

    let original = prob;
    let peak = (0..n)
        .flat_map(|p| std::iter::once(prob.diag()[p].abs()).chain(prob.neighbors(p).map(|(_, v)| v.abs())))
        .fold(0.0, f64::max);
    let normalized;
    let prob = if peak > 0.0 && peak != 1.0 {
        normalized = prob.scaled(1.0 / peak);
        &normalized
    } else {
        prob
    };

    let mut ws = Workspace::new(n);
    let mut wt = Workspace::new(n);
    let mut u = initial_vector(prob);
    let mut trial = vec![0.0; n];
    let mut grad = vec![0.0; n];
    let mut d = 0.0;
    let mut step: f64 = 1.0;
    let mut iterations = 0;

    for _outer in 0..opts.max_iters.max(1) {
        iterations += 1;
        let mut f = ws.evaluate(prob, &u, d);
        for _inner in 0..opts.max_inner {
            grad.iter_mut()
                .zip(ws.mu.iter().zip(&ws.cu))
                .for_each(|(g, (m, c))| *g = 2.0 * (m - d * c));
            let mut alpha = (step * 2.0).min(1e6);
            let mut f_trial = None;
            while alpha > 1e-14 {
                trial.iter_mut().zip(u.iter().zip(&grad)).for_each(|(t, (x, g))| *t = x + alpha * g);
                if project_to_sphere(&mut trial) {
                    let ft = wt.evaluate(prob, &trial, d);
                    if ft > f {
                        f_trial = Some(ft);
                        break;
                    }
                }
                alpha *= 0.5;
            }
            let Some(f_new) = f_trial else { break };
            step = alpha;
            let moved = u.iter().zip(&trial).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            std::mem::swap(&mut u, &mut trial);
            std::mem::swap(&mut ws, &mut wt);
            let gain = f_new - f;
            f = f_new;
            if moved < opts.tol || gain < opts.tol * f.abs().max(1.0) {
                break;
            }
        }

        if support_feasible(prob, &u) {
            break;
        }
        // First penalty matches the scale of M u on violated nodes.
        if d == 0.0 {
            let ratios: Vec<f64> = (0..n)
                .filter(|&p| u[p] > 1e-12 && ws.cu[p] > 1e-12)
                .map(|p| (ws.mu[p] / ws.cu[p]).abs())
                .collect();
            d = if ratios.is_empty() {
                1.0
            } else {
                ratios.iter().sum::<f64>() / ratios.len() as f64
            };
            d = d.max(1e-6);
        } else {
            d *= opts.homotopy_factor;
        }
    }

    let (prefix, _) = round_sorted_prefix(prob, &u);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| u[b].total_cmp(&u[a]).then(a.cmp(&b)));
    let mut chosen = polish(prob, prefix);
    let mut best = prob.density(&chosen);
    for &p in order.iter().take(RESTARTS) {
        let cand = polish(prob, vec![p]);
        let d = prob.density(&cand);
        if d > best && !relative_tie(d, best) {
            (chosen, best) = (cand, d);
        }
    }
    let density = original.density(&chosen);
    let mut selected = vec![false; n];
    chosen.iter().for_each(|&p| selected[p] = true);
    Ok(SolverResult {
        selected,
        density,
        iterations,
        wall_time: started.elapsed().as_secs_f64(),
    })
}

/// Exhaustive maximizer of the discrete density over feasible subsets (`n <= 20`).
///
/// Ties prefer the larger subset, then the lexicographically smallest index set.
pub fn brute_force_densest(prob: &AffinityProblem) -> Result<SolverResult> {
    let started = Instant::now();
    let n = prob.n();
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLargeForBruteForce {
            n,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    if n == 0 {
        return Err(Error::ContractViolation("empty affinity problem".into()));
    }
    let dense = prob.to_dense();
    let mut best: (Vec<usize>, f64) = (Vec::new(), f64::NEG_INFINITY);
    let mut current = Vec::with_capacity(n);
    let mut visited = 0usize;

    fn better(cand: &[usize], dens: f64, best: &(Vec<usize>, f64)) -> bool {
        if relative_tie(dens, best.1) {
            cand.len() > best.0.len() || (cand.len() == best.0.len() && cand < best.0.as_slice())
        } else {
            dens > best.1
        }
    }

    fn recurse(
        start: usize,
        total: f64,
        current: &mut Vec<usize>,
        dense: &nalgebra::DMatrix<f64>,
        prob: &AffinityProblem,
        best: &mut (Vec<usize>, f64),
        visited: &mut usize,
    ) {
        for p in start..prob.n() {
            if current.iter().any(|&q| !prob.consistent(p, q)) {
                continue;
            }
            let add = dense[(p, p)] + 2.0 * current.iter().map(|&q| dense[(p, q)]).sum::<f64>();
            current.push(p);
            *visited += 1;
            let t = total + add;
            let dens = t / current.len() as f64;
            if better(current, dens, best) {
                *best = (current.clone(), dens);
            }
            recurse(p + 1, t, current, dense, prob, best, visited);
            current.pop();
        }
    }

    recurse(0, 0.0, &mut current, &dense, prob, &mut best, &mut visited);
    let mut selected = vec![false; n];
    best.0.iter().for_each(|&p| selected[p] = true);
    Ok(SolverResult {
        selected,
        density: best.1,
        iterations: visited,
        wall_time: started.elapsed().as_secs_f64(),
    })
}

/// For each segment of `submap_i`, its `k` most similar segments of `submap_j`.
pub fn topk_putative(submap_i: &Submap, submap_j: &Submap, k: usize, params: &AffinityParams) -> AssociationSet {
    let mut out = AssociationSet::new();
    for (a, p_i) in submap_i.segments.iter().enumerate() {
        let mut scored: Vec<(usize, f64)> = submap_j
            .segments
            .iter()
            .enumerate()
            .map(|(b, p_j)| (b, segment_similarity(p_i, p_j, params)))
            .collect();
        scored.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
        for &(b, s) in scored.iter().take(k) {
            out.push(Association::new(a, b), s);
        }
    }
    out
}

/// Top-k similarity candidates with a binary geometric-consistency matrix.
pub fn solve_binary_topk(
    submap_i: &Submap,
    submap_j: &Submap,
    k: usize,
    params: &AffinityParams,
    opts: &SolverOptions,
) -> Result<(AssociationSet, SolverResult)> {
    if k == 0 {
        return Err(Error::Config("top-k needs k >= 1".into()));
    }
    let started = Instant::now();
    let putative = topk_putative(submap_i, submap_j, k, params);
    if putative.is_empty() {
        return Ok((putative, SolverResult::empty(0, started)));
    }
    let prob = build_binary_affinity(submap_i, submap_j, params, &putative)?;
    let mut res = solve_densest(&prob, opts)?;
    res.wall_time = started.elapsed().as_secs_f64();
    Ok((putative, res))
}

/// One-to-one centroid matches under `pose`, greedily by distance.
fn consensus(ci: &[Vec3], cj: &[Vec3], pose: &crate::geometry::PoseSE3, tol: f64) -> Vec<Association> {
    let mut cands = Vec::new();
    for (b, pj) in cj.iter().enumerate() {
        let x = pose.transform_point(pj);
        for (a, pi) in ci.iter().enumerate() {
            let dist = (pi - x).norm();
            if dist < tol {
                cands.push((dist, a, b));
            }
        }
    }
    cands.sort_by(|x, y| x.0.total_cmp(&y.0).then((x.1, x.2).cmp(&(y.1, y.2))));
    let mut used_i = vec![false; ci.len()];
    let mut used_j = vec![false; cj.len()];
    let mut out = Vec::new();
    for (_, a, b) in cands {
        if !used_i[a] && !used_j[b] {
            used_i[a] = true;
            used_j[b] = true;
            out.push(Association::new(a, b));
        }
    }
    out.sort();
    out
}

fn quick_count(ci: &[Vec3], cj: &[Vec3], pose: &crate::geometry::PoseSE3, tol: f64) -> usize {
    let tol2 = tol * tol;
    cj.iter()
        .filter(|pj| {
            let x = pose.transform_point(pj);
            ci.iter().any(|pi| (pi - x).norm_squared() < tol2)
        })
        .count()
}

/// RANSAC over minimal three-association samples of the all-to-all putative set.
///
/// The returned indicator is over `m_i * m_j` putative pairs in row-major order.
pub fn solve_ransac(
    submap_i: &Submap,
    submap_j: &Submap,
    iters: usize,
    inlier_tol: f64,
    seed: u64,
) -> Result<(AssociationSet, SolverResult)> {
    let started = Instant::now();
    let (m_i, m_j) = (submap_i.len(), submap_j.len());
    if m_i < 3 || m_j < 3 {
        return Err(Error::InsufficientPoints {
            needed: 3,
            got: m_i.min(m_j),
        });
    }
    let putative = AssociationSet::from_pairs(
        (0..m_i)
            .flat_map(|a| (0..m_j).map(move |b| Association::new(a, b)))
            .collect(),
    );
    if iters == 0 {
        return Ok((putative, SolverResult::empty(m_i * m_j, started)));
    }
    let ci = submap_i.centroids();
    let cj = submap_j.centroids();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best_count = 0;
    let mut best_pose = None;
    for _ in 0..iters {
        let is = sample(&mut rng, m_i, 3);
        let js: Vec<usize> = sample(&mut rng, m_j, 3).into_iter().collect();
        let a: Vec<Vec3> = is.iter().map(|k| ci[k]).collect();
        let b: Vec<Vec3> = js.iter().map(|&k| cj[k]).collect();
        let Ok(pose) = arun(&a, &b) else { continue };
        // Cheap rejection: the sample itself has to be consistent.
        if a.iter().zip(&b).any(|(x, y)| (x - pose.transform_point(y)).norm() >= inlier_tol) {
            continue;
        }
        let c = quick_count(&ci, &cj, &pose, inlier_tol);
        if c > best_count {
            best_count = c;
            best_pose = Some(pose);
        }
        // Keeps the RNG stream independent of early exits.
        let _: u32 = rng.random();
    }
    let mut selected = vec![false; m_i * m_j];
    let mut count = 0;
    if let Some(pose) = best_pose {
        let mut inliers = consensus(&ci, &cj, &pose, inlier_tol);
        // One refit on the consensus set.
        if inliers.len() >= 3 {
            let a: Vec<Vec3> = inliers.iter().map(|x| ci[x.i_idx]).collect();
            let b: Vec<Vec3> = inliers.iter().map(|x| cj[x.j_idx]).collect();
            if let Ok(refit) = arun(&a, &b) {
                let again = consensus(&ci, &cj, &refit, inlier_tol);
                if again.len() >= inliers.len() {
                    inliers = again;
                }
            }
        }
        for x in &inliers {
            selected[x.i_idx * m_j + x.j_idx] = true;
        }
        count = inliers.len();
    }
    Ok((
        putative,
        SolverResult {
            selected,
            density: count as f64,
            iterations: iters,
            wall_time: started.elapsed().as_secs_f64(),
        },
    ))
}
