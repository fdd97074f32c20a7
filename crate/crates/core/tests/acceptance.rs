//! Acceptance suite. Runs every criterion at its stated tolerance and prints one
//! PASS/FAIL line each; exits nonzero if any criterion fails.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use submap_align::affinity::{
    fuse, pairwise_score_gravity, pairwise_score_standard, rescale_cosine, shape_ratio_score, AffinityParams, Fusion,
};
use submap_align::config::Config;
use submap_align::eval::{pose_success, run_benchmark, write_csv, Ablation};
use submap_align::geometry::{rot_x, transform_error, wrap_angle, PoseSE3, Vec3};
use submap_align::model::{norm, Segment};
use submap_align::problem::AffinityProblem;
use submap_align::registration::{align_submaps, arun, AlignParams};
use submap_align::sim::{
    build_submaps, fusion_distractor_trial, generate_scenario, mirror_scenario, random_unit, ScenarioConfig,
};
use submap_align::solver::{brute_force_densest, solve_densest, SolverOptions};
use submap_align::submap::SubmapPolicy;
use submap_align::tracking::{associate, merge_tracks, update_track, SegmentObservation, SegmentTrack, TrackerConfig, VoxelSet};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_pose(rng: &mut impl Rng) -> PoseSE3 {
    PoseSE3::from_euler_zyx(
        rng.random_range(-3.1..3.1),
        rng.random_range(-1.5..1.5),
        rng.random_range(-3.1..3.1),
        Vec3::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)),
    )
}

fn random_problem(rng: &mut impl Rng, n: usize) -> AffinityProblem {
    let keep = rng.random_range(0.3..0.8);
    let mut m = DMatrix::zeros(n, n);
    let mut allowed = DMatrix::from_element(n, n, false);
    for p in 0..n {
        m[(p, p)] = 1.0;
        for q in p + 1..n {
            if rng.random_bool(keep) {
                let w = rng.random_range(0.0..1.0);
                m[(p, q)] = w;
                m[(q, p)] = w;
                allowed[(p, q)] = true;
                allowed[(q, p)] = true;
            }
        }
    }
    AffinityProblem::from_dense_with_mask(&m, |p, q| allowed[(p, q)])
}

fn planted_problem(rng: &mut impl Rng) -> (AffinityProblem, Vec<usize>) {
    let n = 12;
    let mut order: Vec<usize> = (0..n).collect();
    for k in (1..n).rev() {
        order.swap(k, rng.random_range(0..=k));
    }
    let planted: Vec<usize> = order[..6].to_vec();
    let mut m = DMatrix::identity(n, n);
    for &p in &planted {
        for &q in &planted {
            if p != q {
                m[(p, q)] = 0.9;
            }
        }
    }
    let mut sorted = planted;
    sorted.sort_unstable();
    (AffinityProblem::from_dense(&m), sorted)
}

fn c1_solver_vs_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let opts = SolverOptions::default();
    let mut good = 0;
    let mut worst = f64::INFINITY;
    for _ in 0..200 {
        let n = rng.random_range(1..=14);
        let prob = random_problem(&mut rng, n);
        let approx = solve_densest(&prob, &opts).expect("solver");
        let exact = brute_force_densest(&prob).expect("oracle");
        assert!(prob.is_feasible(&approx.indices()));
        let ratio = approx.density / exact.density;
        worst = worst.min(ratio);
        if ratio >= 0.95 {
            good += 1;
        }
    }
    let mut planted_ok = 0;
    for _ in 0..50 {
        let (prob, planted) = planted_problem(&mut rng);
        if solve_densest(&prob, &opts).expect("solver").indices() == planted {
            planted_ok += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    outcome(
        good >= 190 && planted_ok == 50 && secs < 5.0,
        format!("{good}/200 within 0.95x of the oracle (worst ratio {worst:.4}), planted {planted_ok}/50 exact, {secs:.2} s"),
    )
}

fn c2_arun_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut max_t, mut max_r) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let k = rng.random_range(3..=40);
        let gt = random_pose(&mut rng);
        let a: Vec<Vec3> = (0..k)
            .map(|_| Vec3::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)))
            .collect();
        let b: Vec<Vec3> = a.iter().map(|p| gt.rotation.transpose() * (p - gt.translation)).collect();
        let est = arun(&a, &b).expect("non-degenerate");
        max_t = max_t.max((est.translation - gt.translation).norm());
        // Chordal form; acos of the trace loses half the digits near the identity.
        let chord = (est.rotation - gt.rotation).norm() / (2.0 * 2f64.sqrt());
        max_r = max_r.max(2.0 * chord.min(1.0).asin());
    }
    outcome(
        max_t < 1e-9 && max_r < 1e-9,
        format!("max translation error {max_t:.2e} m, max rotation error {max_r:.2e} rad over 1000 instances"),
    )
}

fn c3_scalar_goldens() -> Outcome {
    let p = AffinityParams::default();
    let sem = rescale_cosine(0.90, &p);
    let sem_oracle = (0.90 - p.phi_min) / (p.phi_max - p.phi_min);
    let shape = shape_ratio_score(&[8.0, 0.5, 0.3, 0.2], &[1.0, 0.5, 0.3, 0.2]);
    let shape_oracle = (1.0f64 / 8.0).powf(0.25);
    let gm = fuse(0.60653, 0.9, 0.8, Fusion::GeometricMean);
    let gm_oracle = (0.60653f64 * 0.9 * 0.8).powf(1.0 / 3.0);
    let pass = (sem - 0.5).abs() < 1e-12
        && (sem - sem_oracle).abs() < 1e-12
        && (shape - 0.59460).abs() < 1e-5
        && (shape - shape_oracle).abs() < 1e-12
        && (gm - gm_oracle).abs() < 1e-5;
    outcome(
        pass,
        format!(
            "semantic {sem:.6} (oracle {sem_oracle:.6}), shape {shape:.6} (oracle {shape_oracle:.6}), \
             GM {gm:.6} (oracle {gm_oracle:.6}; the listed 0.75871 differs from the oracle by {:.1e})",
            (gm_oracle - 0.75871).abs()
        ),
    )
}

fn seg(rng: &mut impl Rng, dim: usize) -> Segment {
    Segment::new(
        0,
        Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(0.0..3.0)),
        [1.0, 0.5, 0.3, 0.2],
        random_unit(rng, dim),
        1,
    )
}

fn c4_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let params = AffinityParams::default();
    let mut worst_std = 0.0f64;
    let mut worst_grav = 0.0f64;
    for _ in 0..2000 {
        let (pi, qi) = (seg(&mut rng, 4), seg(&mut rng, 4));
        let d = Vec3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
        let pj = pi.clone();
        let qj = Segment { centroid: qi.centroid + d, ..qi.clone() };
        let base_std = pairwise_score_standard(&pi, &qi, &pj, &qj, &params);
        let base_grav = pairwise_score_gravity(&pi, &qi, &pj, &qj, &params);
        let g = random_pose(&mut rng);
        let y = PoseSE3::from_yaw(
            rng.random_range(-3.1..3.1),
            Vec3::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(-5.0..5.0)),
        );
        worst_std = worst_std
            .max((pairwise_score_standard(&pi, &qi, &pj.transformed(&g), &qj.transformed(&g), &params) - base_std).abs());
        worst_grav = worst_grav
            .max((pairwise_score_gravity(&pi, &qi, &pj.transformed(&y), &qj.transformed(&y), &params) - base_grav).abs());
    }
    // Two objects stacked 0.5 m apart; rolling submap j by 90° lays them flat.
    let mk = |p: Vec3| Segment::new(0, p, [1.0; 4], vec![1.0], 1);
    let (a, b) = (mk(Vec3::new(0.0, 0.0, 0.0)), mk(Vec3::new(0.0, 0.0, 0.5)));
    let roll = PoseSE3::new(rot_x(std::f64::consts::FRAC_PI_2), Vec3::zeros());
    let before = pairwise_score_gravity(&a, &b, &a, &b, &params);
    let after = pairwise_score_gravity(&a, &b, &a.transformed(&roll), &b.transformed(&roll), &params);
    let std_after = pairwise_score_standard(&a, &b, &a.transformed(&roll), &b.transformed(&roll), &params);

    // Whole-pipeline equivariance on simulated submap pairs.
    let cfg = ScenarioConfig { seed: 3, ..ScenarioConfig::default() };
    let sc = generate_scenario(&cfg, &SubmapPolicy::default()).expect("scenario");
    let ap = AlignParams::default();
    let mut worst_align = 0.0f64;
    let mut checked = 0;
    for si in sc.submaps[0].iter().take(3) {
        for sj in sc.submaps[1].iter().filter(|s| (s.center_world - si.center_world).norm() < 10.0) {
            let base = align_submaps(si, sj, &ap).expect("align");
            let Some(t0) = base.transform_robot else { continue };
            let g = PoseSE3::from_yaw(rng.random_range(-3.1..3.1), Vec3::new(rng.random_range(-9.0..9.0), rng.random_range(-9.0..9.0), rng.random_range(-1.0..1.0)));
            let mut moved = sj.clone();
            moved.segments = sj.segments.iter().map(|s| s.transformed(&g)).collect();
            moved.frame_pose = sj.frame_pose.compose(&g.inverse());
            let t1 = align_submaps(si, &moved, &ap).expect("align").transform_robot.expect("same inliers");
            let (et, er) = transform_error(&t1, &t0);
            worst_align = worst_align.max(et).max(er.to_radians());
            checked += 1;
        }
    }
    let pass = worst_std < 1e-12 && worst_grav < 1e-12 && (before - 1.0).abs() < 1e-12 && after < before - 0.5 && (std_after - 1.0).abs() < 1e-12 && worst_align < 1e-6 && checked > 0;
    outcome(
        pass,
        format!(
            "standard drift {worst_std:.1e}, gravity drift {worst_grav:.1e}, roll counterexample {before:.3} -> {after:.3} \
             (standard stays {std_after:.3}), alignment drift {worst_align:.1e} over {checked} pairs"
        ),
    )
}

fn c5_opposite_view_benchmark() -> Outcome {
    let mut cfg = Config::default();
    cfg.scenario = ScenarioConfig {
        n_objects: 100,
        centroid_noise_sigma: 0.1,
        clutter_rate: 0.3,
        dropout_rate: 0.2,
        heading_offset: 180.0,
        seed: 0,
        ..ScenarioConfig::default()
    };
    cfg.eval.seeds = 100;
    cfg.eval.place_recognition = false;
    let started = Instant::now();
    let report = run_benchmark(&cfg, &Ablation::default()).expect("benchmark");
    let mut per_seed = std::collections::BTreeMap::<u64, (usize, usize)>::new();
    for r in &report.records {
        let e = per_seed.entry(r.seed).or_default();
        e.0 += r.success as usize;
        e.1 += 1;
    }
    let seed_mean = per_seed.values().map(|(s, n)| *s as f64 / *n as f64).sum::<f64>() / per_seed.len().max(1) as f64;
    let pass = report.mean_success >= 0.90 && seed_mean >= 0.90 && report.max_wall_time_ms < 500.0 && report.n_pairs > 0;
    outcome(
        pass,
        format!(
            "{} pairs over {} seeds, mean success {:.3} (per-seed mean {seed_mean:.3}), alignment time mean {:.1} ms / max {:.1} ms, {:.1} s total",
            report.n_pairs,
            per_seed.len(),
            report.mean_success,
            report.mean_wall_time_ms,
            report.max_wall_time_ms,
            started.elapsed().as_secs_f64()
        ),
    )
}

fn c6_gravity_mirror() -> Outcome {
    let m = mirror_scenario(768);
    let run = |gravity: bool| {
        let mut p = AlignParams::default();
        p.affinity.use_gravity = gravity;
        let r = align_submaps(&m.submap_i, &m.submap_j, &p).expect("align");
        let t = r.transform_submap.expect("transform");
        let yaw_err = wrap_angle(t.yaw() - m.gt.yaw()).abs().to_degrees();
        (yaw_err, transform_error(&t, &m.gt).1, r.count)
    };
    let (g_yaw, g_rot, g_n) = run(true);
    let (n_yaw, n_rot, n_n) = run(false);
    outcome(
        g_yaw < 5.0 && g_rot < 5.0 && n_rot > 90.0,
        format!(
            "gravity: {g_n} inliers, yaw error {g_yaw:.2} deg, rotation error {g_rot:.2} deg; \
             no gravity: {n_n} inliers, yaw error {n_yaw:.2} deg, rotation error {n_rot:.2} deg"
        ),
    )
}

fn c7_fusion_ordering() -> Outcome {
    let methods = [Fusion::GeometricMean, Fusion::Product, Fusion::DiagonalOnly, Fusion::ArithmeticMean];
    let trials: Vec<_> = (0..200).map(|s| fusion_distractor_trial(s, 768)).collect();
    let rates: Vec<f64> = methods
        .iter()
        .map(|&f| {
            let mut p = AlignParams::default();
            p.affinity.fusion = f;
            trials
                .iter()
                .filter(|t| {
                    let r = align_submaps(&t.submap_i, &t.submap_j, &p).expect("align");
                    r.accepted && r.transform_submap.is_some_and(|e| pose_success(&e, &t.gt, 1.0, 5.0))
                })
                .count() as f64
                / trials.len() as f64
        })
        .collect();
    let gm = rates[0];
    let pass = rates[1..].iter().all(|&r| gm >= r - 0.02 && gm > r);
    outcome(
        pass,
        format!(
            "success GM {:.3}, Product {:.3}, DiagonalOnly {:.3}, ArithmeticMean {:.3}",
            rates[0], rates[1], rates[2], rates[3]
        ),
    )
}

fn interval(lo: i32, len: i32) -> VoxelSet {
    (lo..lo + len).map(|x| [x, 0, 0]).collect()
}

fn best_total(iou: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
    if row == iou.len() {
        return 0.0;
    }
    let mut best = best_total(iou, row + 1, used);
    for c in 0..used.len() {
        if !used[c] && iou[row][c] > 0.0 {
            used[c] = true;
            best = best.max(iou[row][c] + best_total(iou, row + 1, used));
            used[c] = false;
        }
    }
    best
}

fn c8_tracking() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let min_iou = 0.25;
    let obs = |v: VoxelSet, e: Vec<f64>| SegmentObservation {
        voxels: v,
        embedding: e,
        frame_idx: 0,
        camera_pose: PoseSE3::identity(),
    };
    let mut mismatches = 0;
    let mut problems = 0;
    for rows in 0..=5 {
        for cols in 0..=5 {
            for _ in 0..40 {
                let tracks: Vec<SegmentTrack> = (0..rows)
                    .map(|k| SegmentTrack::from_observation(k as u64, &obs(interval(rng.random_range(0..12), rng.random_range(2..8)), vec![1.0])))
                    .collect();
                let observations: Vec<SegmentObservation> = (0..cols)
                    .map(|_| obs(interval(rng.random_range(0..12), rng.random_range(2..8)), vec![1.0]))
                    .collect();
                let a = associate(&tracks, &observations, min_iou);
                let iou: Vec<Vec<f64>> = tracks
                    .iter()
                    .map(|t| {
                        observations
                            .iter()
                            .map(|o| {
                                let inter = t.voxels.intersection(&o.voxels).count() as f64;
                                let x = inter / ((t.voxels.len() + o.voxels.len()) as f64 - inter);
                                if x >= min_iou { x } else { 0.0 }
                            })
                            .collect()
                    })
                    .collect();
                let oracle = best_total(&iou, 0, &mut vec![false; cols]);
                let got: f64 = a.matches.iter().map(|&(t, o)| iou[t][o]).sum();
                let mut seen_t = vec![false; rows];
                let mut seen_o = vec![false; cols];
                let one_to_one = a.matches.iter().all(|&(t, o)| !std::mem::replace(&mut seen_t[t], true) && !std::mem::replace(&mut seen_o[o], true));
                if (got - oracle).abs() > 1e-12 || !one_to_one {
                    mismatches += 1;
                }
                problems += 1;
            }
        }
    }

    let dim = 16;
    let cfg = TrackerConfig::default();
    let mut worst_norm = 0.0f64;
    let mut tracks: Vec<SegmentTrack> = (0..6)
        .map(|k| SegmentTrack::from_observation(k, &obs(interval(10 * k as i32, 3), random_unit(&mut rng, dim))))
        .collect();
    let mut idempotent = true;
    for step in 0..1000 {
        let k = rng.random_range(0..tracks.len());
        let o = obs(interval(rng.random_range(0..60), rng.random_range(1..5)), random_unit(&mut rng, dim));
        let t = std::mem::replace(&mut tracks[k], SegmentTrack::from_observation(0, &o));
        tracks[k] = update_track(t, &o);
        if step % 10 == 0 {
            tracks = merge_tracks(tracks, &cfg, &PoseSE3::identity());
            let again = merge_tracks(tracks.clone(), &cfg, &PoseSE3::identity());
            idempotent &= again == tracks;
            if tracks.len() < 3 {
                tracks.push(SegmentTrack::from_observation(100 + step, &obs(interval(200 + step as i32 * 5, 2), random_unit(&mut rng, dim))));
            }
        }
        for t in &tracks {
            worst_norm = worst_norm.max((norm(&t.embedding) - 1.0).abs());
        }
    }
    outcome(
        mismatches == 0 && worst_norm < 1e-9 && idempotent,
        format!("assignment matches brute force on {}/{problems} problems up to 5x5, worst embedding norm drift {worst_norm:.1e}, merge idempotent: {idempotent}", problems - mismatches),
    )
}

fn c9_submap_policy() -> Outcome {
    let cfg = ScenarioConfig::default();
    let policy = SubmapPolicy::default();
    let world = submap_align::sim::generate_world(&cfg).expect("world");
    let pair = submap_align::sim::generate_traversal_pair(&world, &cfg).expect("traversal");
    let subs = build_submaps(&pair.runs[0], &policy).expect("submaps");
    let min_gap = subs
        .windows(2)
        .map(|w| (w[1].center_world - w[0].center_world).norm())
        .fold(f64::INFINITY, f64::min);
    let max_len = subs.iter().map(|s| s.len()).max().unwrap_or(0);
    let max_radius = subs
        .iter()
        .flat_map(|s| s.segments.iter().map(|x| x.centroid.norm()))
        .fold(0.0, f64::max);
    let max_tilt = subs.iter().map(|s| s.tilt_error()).fold(0.0, f64::max);
    outcome(
        subs.len() >= 2 && min_gap >= 10.0 && max_len <= 40 && max_radius <= 15.0 && max_tilt < 1e-12,
        format!(
            "{} submaps, min center gap {min_gap:.2} m, max size {max_len}, max centroid radius {max_radius:.2} m, max tilt {max_tilt:.1e}",
            subs.len()
        ),
    )
}

fn c10_determinism() -> Outcome {
    let csv = |parallel: bool| {
        let mut cfg = Config::default();
        cfg.scenario.seed = 42;
        cfg.eval.seeds = 3;
        cfg.eval.parallel = parallel;
        cfg.eval.record_timing = false;
        let report = run_benchmark(&cfg, &Ablation::default()).expect("benchmark");
        let mut buf = Vec::new();
        write_csv(&mut buf, &report.records).expect("csv");
        buf
    };
    let a = csv(true);
    let b = csv(true);
    let c = csv(false);
    let rows = a.iter().filter(|&&x| x == b'\n').count().saturating_sub(1);
    outcome(
        a == b && a == c && rows > 0,
        format!(
            "{rows} rows; repeat identical: {}, parallel == serial: {} (rayon available: {})",
            a == b,
            a == c,
            submap_align::par::PARALLEL_AVAILABLE
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("solver vs oracle", c1_solver_vs_oracle),
        ("arun exactness", c2_arun_exactness),
        ("scalar metric goldens", c3_scalar_goldens),
        ("invariance suite", c4_invariance),
        ("opposite-view benchmark", c5_opposite_view_benchmark),
        ("gravity mirror ablation", c6_gravity_mirror),
        ("fusion ordering", c7_fusion_ordering),
        ("tracking suite", c8_tracking),
        ("submap policy", c9_submap_policy),
        ("determinism", c10_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let id = k + 1;
        if !filter.is_empty() && !filter.iter().any(|x| x == &id.to_string()) {
            continue;
        }
        let started = Instant::now();
        let o = f();
        let status = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {id:>2} [{status}] {name}: {} ({:.1} s)", o.detail, started.elapsed().as_secs_f64());
        failed += (!o.pass) as usize;
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
