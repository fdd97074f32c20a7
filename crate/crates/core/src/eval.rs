//! Benchmark orchestration and metrics: pose success by heading bin, place
//! recognition precision/recall, ablations and CSV/JSON reports.

use std::collections::BTreeMap;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::affinity::Fusion;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::geometry::{transform_error, PoseSE3};
use crate::model::Submap;
use crate::par;
use crate::registration::{align_submaps, AlignParams};
use crate::sim::{generate_scenario, ground_truth_submap, heading_deg, shared_objects, RobotGroundTruth, ScenarioConfig};
use crate::submap::SubmapPolicy;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Submaps whose centers are at most this far apart are candidate pairs.
    pub overlap_radius: f64,
    pub success_trans_m: f64,
    pub success_rot_deg: f64,
    /// Candidate pairs must share at least this many objects.
    pub min_shared: usize,
    pub tau_sweep: Vec<usize>,
    pub place_recognition: bool,
    /// Number of scenario seeds, starting at `scenario.seed`.
    pub seeds: usize,
    /// Evaluate pairs on the rayon pool.
    pub parallel: bool,
    /// When false, `wall_time_ms` is written as 0 so reports are reproducible byte for byte.
    pub record_timing: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            overlap_radius: 10.0,
            success_trans_m: 1.0,
            success_rot_deg: 5.0,
            min_shared: 1,
            tau_sweep: (1..=30).collect(),
            place_recognition: true,
            seeds: 1,
            parallel: true,
            record_timing: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum HeadingBin {
    #[serde(rename = "0-60")]
    Low,
    #[serde(rename = "60-120")]
    Mid,
    #[serde(rename = "120-180")]
    High,
}

impl HeadingBin {
    pub const ALL: [HeadingBin; 3] = [HeadingBin::Low, HeadingBin::Mid, HeadingBin::High];

    pub fn label(self) -> &'static str {
        match self {
            HeadingBin::Low => "0-60",
            HeadingBin::Mid => "60-120",
            HeadingBin::High => "120-180",
        }
    }
}

/// `[0, 60)`, `[60, 120)`, `[120, 180]` degrees.
pub fn heading_bin(deg: f64) -> HeadingBin {
    let d = deg.abs();
    if d < 60.0 {
        HeadingBin::Low
    } else if d < 120.0 {
        HeadingBin::Mid
    } else {
        HeadingBin::High
    }
}

/// Strictly below both the translation and the rotation bound.
pub fn pose_success(est: &PoseSE3, gt: &PoseSE3, trans_m: f64, rot_deg: f64) -> bool {
    let (t, r) = transform_error(est, gt);
    t < trans_m && r < rot_deg
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaceMatch {
    /// Index into the database.
    pub index: usize,
    pub count: usize,
    pub success: bool,
}

/// Aligns `query` against every database submap and returns the one with the most inliers.
///
/// Ties go to the earliest database entry.
pub fn place_recognition(query: &Submap, database: &[Submap], params: &AlignParams, overlap_radius: f64) -> Result<PlaceMatch> {
    if database.is_empty() {
        return Err(Error::ContractViolation("empty place recognition database".into()));
    }
    let mut best: Option<(usize, usize)> = None;
    for (k, cand) in database.iter().enumerate() {
        let count = if query.is_empty() || cand.is_empty() {
            0
        } else {
            align_submaps(query, cand, params)?.count
        };
        if best.is_none_or(|(_, c)| count > c) {
            best = Some((k, count));
        }
    }
    let (index, count) = best.expect("non-empty database");
    Ok(PlaceMatch {
        index,
        count,
        success: (database[index].center_world - query.center_world).norm() <= overlap_radius,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrRecord {
    pub count: usize,
    /// The returned match really overlaps the query.
    pub correct: bool,
    /// Some database entry overlaps the query.
    pub has_match: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub tau: usize,
    pub precision: f64,
    pub recall: f64,
}

/// Precision/recall at each threshold and the trapezoid area under the curve.
///
/// A query is predicted positive when its count reaches `tau`. Precision is the
/// correct share of predictions (1 with no predictions); recall is correct
/// predictions over queries that have a true match. Points are ordered by
/// recall and anchored at recall 0 with the precision of the first point.
pub fn pr_auc(records: &[PrRecord], tau_sweep: &[usize]) -> (Vec<PrPoint>, f64) {
    let positives = records.iter().filter(|r| r.has_match).count();
    let mut taus = tau_sweep.to_vec();
    taus.sort_unstable_by(|a, b| b.cmp(a));
    taus.dedup();
    let mut points: Vec<PrPoint> = taus
        .iter()
        .map(|&tau| {
            let predicted: Vec<&PrRecord> = records.iter().filter(|r| r.count >= tau).collect();
            let tp = predicted.iter().filter(|r| r.correct && r.has_match).count();
            PrPoint {
                tau,
                precision: if predicted.is_empty() { 1.0 } else { tp as f64 / predicted.len() as f64 },
                recall: if positives == 0 { 0.0 } else { tp as f64 / positives as f64 },
            }
        })
        .collect();
    points.sort_by(|a, b| a.recall.total_cmp(&b.recall));
    let Some(first) = points.first() else {
        return (points, 0.0);
    };
    let mut prev = (0.0, first.precision);
    let mut auc = 0.0;
    for p in &points {
        auc += (p.recall - prev.0) * (p.precision + prev.1) / 2.0;
        prev = (p.recall, p.precision);
    }
    (points, auc.clamp(0.0, 1.0))
}

/// Parsed `--ablate` string: comma-separated `key=value` overrides.
///
/// Keys: `fusion`, `gravity`, `semantic`, `shape` (on/off), `sigma`, `epsilon`,
/// `variant` (`base`, `L`, `XL`), `method` (`densest`, `prune`, `topk`, `ransac`),
/// `tau`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Ablation {
    pub fusion: Option<Fusion>,
    pub use_gravity: Option<bool>,
    pub use_semantic: Option<bool>,
    pub use_shape: Option<bool>,
    pub sigma: Option<f64>,
    pub epsilon: Option<f64>,
    pub variant: Option<SubmapPolicy>,
    pub method: Option<String>,
    pub tau: Option<usize>,
}

fn parse_switch(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "on" | "true" | "1" | "yes" => Ok(true),
        "off" | "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("ablation '{key}' expects on/off, got '{v}'"))),
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("ablation '{key}' expects a number, got '{v}'")))
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut a = Ablation::default();
        let s = s.trim();
        if s.is_empty() || s.eq_ignore_ascii_case("none") {
            return Ok(a);
        }
        for item in s.split(',').map(str::trim).filter(|x| !x.is_empty()) {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("ablation item '{item}' is not key=value")))?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "fusion" => a.fusion = Some(v.parse()?),
                "gravity" => a.use_gravity = Some(parse_switch(k, v)?),
                "semantic" | "semantics" => a.use_semantic = Some(parse_switch(k, v)?),
                "shape" => a.use_shape = Some(parse_switch(k, v)?),
                "sigma" => a.sigma = Some(parse_num(k, v)?),
                "epsilon" => a.epsilon = Some(parse_num(k, v)?),
                "tau" => a.tau = Some(parse_num(k, v)?),
                "method" => a.method = Some(v.to_ascii_lowercase()),
                "variant" => {
                    a.variant = Some(match v.to_ascii_uppercase().as_str() {
                        "BASE" | "DEFAULT" => SubmapPolicy::default(),
                        "L" => SubmapPolicy::large(),
                        "XL" => SubmapPolicy::extra_large(),
                        _ => return Err(Error::Config(format!("unknown variant '{v}'"))),
                    })
                }
                _ => return Err(Error::Config(format!("unknown ablation key '{k}'"))),
            }
        }
        Ok(a)
    }
}

impl Ablation {
    pub fn apply(&self, cfg: &Config) -> Result<Config> {
        let mut c = cfg.clone();
        if let Some(f) = self.fusion {
            c.affinity.fusion = f;
        }
        if let Some(v) = self.use_gravity {
            c.affinity.use_gravity = v;
        }
        if let Some(v) = self.use_semantic {
            c.affinity.use_semantic = v;
        }
        if let Some(v) = self.use_shape {
            c.affinity.use_shape = v;
        }
        if let Some(v) = self.sigma {
            c.affinity.sigma = v;
        }
        if let Some(v) = self.epsilon {
            c.affinity.epsilon = v;
        }
        if let Some(p) = &self.variant {
            c.submap.r = p.r;
            c.submap.max_segments = p.max_segments;
        }
        if let Some(m) = &self.method {
            c.registration.method = m.clone();
        }
        if let Some(t) = self.tau {
            c.submap.tau = t;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub pair_id: String,
    pub seed: u64,
    pub submap_i: u32,
    pub submap_j: u32,
    pub heading_deg: f64,
    pub heading_bin: HeadingBin,
    pub shared: usize,
    pub count: usize,
    pub accepted: bool,
    pub trans_err_m: Option<f64>,
    pub rot_err_deg: Option<f64>,
    pub success: bool,
    pub wall_time_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinSummary {
    pub pairs: usize,
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pr_points: Vec<PrPoint>,
    pub auc: f64,
    pub success_by_bin: BTreeMap<String, BinSummary>,
    pub mean_success: f64,
    pub n_pairs: usize,
    pub mean_wall_time_ms: f64,
    pub max_wall_time_ms: f64,
    pub records: Vec<PairRecord>,
}

/// Two robots' submaps plus the odometry-to-world ground truth of each.
#[derive(Clone, Debug, PartialEq)]
pub struct SubmapSet {
    pub seed: u64,
    pub submaps: [Vec<Submap>; 2],
    pub ground_truth: [RobotGroundTruth; 2],
}

struct PairTask<'a> {
    seed: u64,
    a: &'a Submap,
    b: &'a Submap,
    gt: PoseSE3,
    shared: usize,
}

fn candidate_pairs<'a>(set: &'a SubmapSet, eval: &EvalConfig) -> Vec<PairTask<'a>> {
    let [ga, gb] = &set.ground_truth;
    let mut out = Vec::new();
    for a in &set.submaps[0] {
        for b in &set.submaps[1] {
            if (a.center_world - b.center_world).norm() > eval.overlap_radius || a.is_empty() || b.is_empty() {
                continue;
            }
            let shared = shared_objects(a, b);
            if shared < eval.min_shared {
                continue;
            }
            out.push(PairTask {
                seed: set.seed,
                a,
                b,
                gt: ground_truth_submap(a, &ga.world_from_odom, b, &gb.world_from_odom),
                shared,
            });
        }
    }
    out
}

fn evaluate_pair(t: &PairTask, params: &AlignParams, eval: &EvalConfig) -> Result<PairRecord> {
    let res = align_submaps(t.a, t.b, params)?;
    let errors = res.transform_submap.as_ref().map(|est| transform_error(est, &t.gt));
    let success = res.accepted
        && errors.is_some_and(|(e_t, e_r)| e_t < eval.success_trans_m && e_r < eval.success_rot_deg);
    let heading = heading_deg(&t.gt);
    Ok(PairRecord {
        pair_id: format!("{:04}-{:03}-{:03}", t.seed, t.a.source_id.submap_idx, t.b.source_id.submap_idx),
        seed: t.seed,
        submap_i: t.a.source_id.submap_idx,
        submap_j: t.b.source_id.submap_idx,
        heading_deg: heading,
        heading_bin: heading_bin(heading),
        shared: t.shared,
        count: res.count,
        accepted: res.accepted,
        trans_err_m: errors.map(|e| e.0),
        rot_err_deg: errors.map(|e| e.1),
        success,
        wall_time_ms: if eval.record_timing { res.wall_time * 1e3 } else { 0.0 },
    })
}

/// Place recognition records: every robot-1 submap queries the robot-0 submaps.
pub fn place_recognition_records(set: &SubmapSet, params: &AlignParams, eval: &EvalConfig) -> Result<Vec<PrRecord>> {
    let db = &set.submaps[0];
    if db.is_empty() {
        return Ok(Vec::new());
    }
    let queries: Vec<&Submap> = set.submaps[1].iter().collect();
    par::map_slice(&queries, eval.parallel, |q| {
        let m = place_recognition(q, db, params, eval.overlap_radius)?;
        let has_match = db
            .iter()
            .any(|d| (d.center_world - q.center_world).norm() <= eval.overlap_radius);
        Ok(PrRecord {
            count: m.count,
            correct: m.success,
            has_match,
        })
    })
    .into_iter()
    .collect()
}

/// Scores every candidate pair across the given submap sets.
pub fn evaluate_sets(sets: &[SubmapSet], params: &AlignParams, eval: &EvalConfig) -> Result<EvalReport> {
    let tasks: Vec<PairTask> = sets.iter().flat_map(|s| candidate_pairs(s, eval)).collect();
    let mut records: Vec<PairRecord> = par::map_slice(&tasks, eval.parallel, |t| evaluate_pair(t, params, eval))
        .into_iter()
        .collect::<Result<_>>()?;
    records.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));

    let mut pr = Vec::new();
    if eval.place_recognition {
        for s in sets {
            pr.extend(place_recognition_records(s, params, eval)?);
        }
    }
    let (pr_points, auc) = pr_auc(&pr, &eval.tau_sweep);
    Ok(summarize(records, pr_points, auc))
}

pub fn summarize(records: Vec<PairRecord>, pr_points: Vec<PrPoint>, auc: f64) -> EvalReport {
    let rate = |rs: &[&PairRecord]| {
        if rs.is_empty() {
            0.0
        } else {
            rs.iter().filter(|r| r.success).count() as f64 / rs.len() as f64
        }
    };
    let mut success_by_bin = BTreeMap::new();
    for bin in HeadingBin::ALL {
        let rs: Vec<&PairRecord> = records.iter().filter(|r| r.heading_bin == bin).collect();
        success_by_bin.insert(
            bin.label().to_string(),
            BinSummary {
                pairs: rs.len(),
                rate: rate(&rs),
            },
        );
    }
    let all: Vec<&PairRecord> = records.iter().collect();
    let times: Vec<f64> = records.iter().map(|r| r.wall_time_ms).collect();
    EvalReport {
        pr_points,
        auc,
        success_by_bin,
        mean_success: rate(&all),
        n_pairs: records.len(),
        mean_wall_time_ms: if times.is_empty() { 0.0 } else { times.iter().sum::<f64>() / times.len() as f64 },
        max_wall_time_ms: times.iter().cloned().fold(0.0, f64::max),
        records,
    }
}

/// Simulated submap sets for `eval.seeds` consecutive seeds.
pub fn simulate_sets(scenario: &ScenarioConfig, policy: &SubmapPolicy, seeds: usize, parallel: bool) -> Result<Vec<SubmapSet>> {
    par::map_range(seeds, parallel, |k| {
        let cfg = ScenarioConfig {
            seed: scenario.seed + k as u64,
            ..scenario.clone()
        };
        let s = generate_scenario(&cfg, policy)?;
        Ok(SubmapSet {
            seed: cfg.seed,
            ground_truth: s.ground_truth(),
            submaps: s.submaps,
        })
    })
    .into_iter()
    .collect()
}

/// Simulates the configured scenario over all seeds and evaluates it.
pub fn run_benchmark(cfg: &Config, ablation: &Ablation) -> Result<EvalReport> {
    let cfg = ablation.apply(cfg)?;
    let sets = simulate_sets(&cfg.scenario, &cfg.submap, cfg.eval.seeds.max(1), cfg.eval.parallel)?;
    evaluate_sets(&sets, &cfg.align_params()?, &cfg.eval)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "nan".to_string(), |v| format!("{v:.6}"))
}

pub const CSV_HEADER: &str = "pair_id,heading_bin,count,accepted,trans_err_m,rot_err_deg,success,wall_time_ms";

pub fn write_csv<W: Write>(mut w: W, records: &[PairRecord]) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{:.3}",
            r.pair_id,
            r.heading_bin.label(),
            r.count,
            r.accepted,
            fmt_opt(r.trans_err_m),
            fmt_opt(r.rot_err_deg),
            r.success,
            r.wall_time_ms
        )?;
    }
    Ok(())
}

pub fn write_json<W: Write>(w: W, report: &EvalReport) -> Result<()> {
    serde_json::to_writer_pretty(w, report)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rot_z, Vec3};
    use crate::model::{Segment, SourceId};

    #[test]
    fn pose_success_examples() {
        let gt = PoseSE3::identity();
        let est = |t: f64, deg: f64| PoseSE3::new(rot_z(deg.to_radians()), Vec3::new(t, 0.0, 0.0));
        assert!(pose_success(&est(0.5, 3.0), &gt, 1.0, 5.0));
        assert!(!pose_success(&est(1.5, 3.0), &gt, 1.0, 5.0));
        assert!(!pose_success(&est(0.5, 6.0), &gt, 1.0, 5.0));
        assert!(!pose_success(&est(1.0, 0.0), &gt, 1.0, 5.0));
    }

    #[test]
    fn heading_bins_partition() {
        assert_eq!(heading_bin(0.0), HeadingBin::Low);
        assert_eq!(heading_bin(59.999), HeadingBin::Low);
        assert_eq!(heading_bin(60.0), HeadingBin::Mid);
        assert_eq!(heading_bin(120.0), HeadingBin::High);
        assert_eq!(heading_bin(180.0), HeadingBin::High);
    }

    #[test]
    fn auc_trivial_cases() {
        let perfect: Vec<PrRecord> = (0..5)
            .map(|k| PrRecord {
                count: 5 + k,
                correct: true,
                has_match: true,
            })
            .collect();
        let taus: Vec<usize> = (1..=20).collect();
        assert!((pr_auc(&perfect, &taus).1 - 1.0).abs() < 1e-12);
        let never: Vec<PrRecord> = perfect.iter().map(|r| PrRecord { count: 0, ..*r }).collect();
        assert_eq!(pr_auc(&never, &taus).1, 0.0);
    }

    #[test]
    fn auc_hand_computed() {
        let r = |count, correct, has_match| PrRecord { count, correct, has_match };
        let recs = [r(10, true, true), r(6, true, true), r(8, false, true), r(3, false, false)];
        let (points, auc) = pr_auc(&recs, &[2, 5, 7, 9, 11]);
        // (0,1) -> (1/3,1) -> (1/3,1/2) -> (2/3,2/3) -> (2/3,1/2)
        let expected = 1.0 / 3.0 + (1.0 / 3.0) * (0.5 + 2.0 / 3.0) / 2.0;
        assert!((auc - expected).abs() < 1e-12);
        assert!((auc - 19.0 / 36.0).abs() < 1e-12);
        let recall: Vec<f64> = points.iter().map(|p| p.recall).collect();
        assert!(recall.windows(2).all(|w| w[0] <= w[1]));
    }

    fn submap(idx: u32, center: Vec3, pts: &[Vec3]) -> Submap {
        Submap {
            frame_pose: PoseSE3::identity(),
            segments: pts
                .iter()
                .enumerate()
                .map(|(k, p)| {
                    let mut e = vec![0.0; 8];
                    e[k % 8] = 1.0;
                    Segment::new(k as u64, *p, [1.0, 0.5, 0.3, 0.2], e, 1)
                })
                .collect(),
            source_id: SourceId { robot_id: 0, submap_idx: idx },
            center_world: center,
        }
    }

    fn pts(offset: f64) -> Vec<Vec3> {
        (0..8)
            .map(|k| {
                let a = k as f64;
                Vec3::new(offset + 3.0 * (a * 1.3).cos() * (1.0 + a / 3.0), 2.0 * (a * 0.7).sin() * a, 0.4 * a)
            })
            .collect()
    }

    #[test]
    fn place_recognition_examples() {
        let params = AlignParams::default();
        let q = submap(0, Vec3::zeros(), &pts(0.0));
        let far = submap(1, Vec3::new(100.0, 0.0, 0.0), &[Vec3::new(0.0, 0.0, 0.0), Vec3::new(50.0, 0.0, 0.0)]);
        let m = place_recognition(&q, &[far.clone(), q.clone()], &params, 10.0).unwrap();
        assert_eq!(m.index, 1);
        assert!(m.success);
        let tie = place_recognition(&q, &[q.clone(), q.clone()], &params, 10.0).unwrap();
        assert_eq!(tie.index, 0);
        let none = place_recognition(&q, &[far], &params, 10.0).unwrap();
        assert!(none.count < params.tau);
        assert!(place_recognition(&q, &[], &params, 10.0).is_err());
    }

    #[test]
    fn ablation_parsing() {
        let a: Ablation = "fusion=product, gravity=off,semantic=off,shape=on,sigma=0.3,epsilon=0.5,variant=XL,method=prune"
            .parse()
            .unwrap();
        assert_eq!(a.fusion, Some(Fusion::Product));
        assert_eq!(a.use_gravity, Some(false));
        let c = a.apply(&Config::default()).unwrap();
        assert_eq!(c.submap.r, 30.0);
        assert_eq!(c.submap.max_segments, 80);
        assert_eq!(c.registration.method, "prune");
        assert_eq!("none".parse::<Ablation>().unwrap(), Ablation::default());
        assert!("gravity=maybe".parse::<Ablation>().is_err());
        assert!("color=red".parse::<Ablation>().is_err());
        assert!("method=magic".parse::<Ablation>().unwrap().apply(&Config::default()).is_err());
    }

    #[test]
    fn csv_layout() {
        let rec = PairRecord {
            pair_id: "0000-001-002".into(),
            seed: 0,
            submap_i: 1,
            submap_j: 2,
            heading_deg: 170.0,
            heading_bin: HeadingBin::High,
            shared: 5,
            count: 7,
            accepted: true,
            trans_err_m: Some(0.25),
            rot_err_deg: None,
            success: false,
            wall_time_ms: 0.0,
        };
        let mut buf = Vec::new();
        write_csv(&mut buf, &[rec]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            format!("{CSV_HEADER}\n0000-001-002,120-180,7,true,0.250000,nan,false,0.000\n")
        );
    }
}
