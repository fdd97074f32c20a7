use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use submap_align::config::Config;
use submap_align::eval::{evaluate_sets, simulate_sets, write_csv, write_json, Ablation, HeadingBin, SubmapSet};
use submap_align::model::{read_jsonl, read_submaps_file, write_submaps_file};
use submap_align::problem::AffinityProblem;
use submap_align::registration::align_submaps;
use submap_align::sim::{generate_traversal_pair, generate_world, observation_stream, RobotGroundTruth, ScenarioConfig};
use submap_align::solver::{brute_force_densest, solve_densest, SolverOptions, BRUTE_FORCE_LIMIT};

#[derive(Parser)]
#[command(name = "submap-align", version, about = "Align sparse object submaps between robots")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Align every submap of one robot against every submap of another.
    Align(AlignArgs),
    /// Write simulated submaps, observation streams and ground truth.
    Simulate(SimulateArgs),
    /// Run the seeded benchmark and write per-pair CSV plus a JSON summary.
    Evaluate(EvaluateArgs),
    /// Compare the relaxed solver against exhaustive search on random problems.
    OracleCheck(OracleArgs),
}

#[derive(Args)]
struct AlignArgs {
    submaps_i: PathBuf,
    submaps_j: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write JSON lines here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Only print accepted alignments.
    #[arg(long)]
    accepted_only: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Also write voxel observation streams.
    #[arg(long)]
    observations: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated overrides, e.g. `fusion=product,gravity=off`.
    #[arg(long, default_value = "")]
    ablate: String,
    #[arg(long)]
    out_csv: Option<PathBuf>,
    #[arg(long)]
    out_json: Option<PathBuf>,
    /// Evaluate a directory written by `simulate` instead of simulating.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Record 0 in the wall_time_ms column so repeated runs are byte-identical.
    #[arg(long)]
    no_timing: bool,
    /// Evaluate pairs on one thread.
    #[arg(long)]
    serial: bool,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 12)]
    n: usize,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Probability that a pair is consistent.
    #[arg(long, default_value_t = 0.5)]
    density: f64,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct GroundTruthRecord {
    seed: u64,
    robots: [RobotGroundTruth; 2],
}

fn load_config(path: &Option<PathBuf>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(Config::default()),
    }
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

#[derive(Serialize)]
struct AlignLine<'a> {
    submap_i: u32,
    submap_j: u32,
    robot_i: u32,
    robot_j: u32,
    #[serde(flatten)]
    result: &'a submap_align::registration::AlignmentResult,
}

fn cmd_align(args: &AlignArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let params = cfg.align_params()?;
    let a = read_submaps_file(&args.submaps_i).with_context(|| format!("reading {}", args.submaps_i.display()))?;
    let b = read_submaps_file(&args.submaps_j).with_context(|| format!("reading {}", args.submaps_j.display()))?;
    let mut out = output(&args.out)?;
    let mut accepted = 0;
    for si in &a {
        for sj in &b {
            let r = align_submaps(si, sj, &params)?;
            accepted += r.accepted as usize;
            if args.accepted_only && !r.accepted {
                continue;
            }
            let line = AlignLine {
                submap_i: si.source_id.submap_idx,
                submap_j: sj.source_id.submap_idx,
                robot_i: si.source_id.robot_id,
                robot_j: sj.source_id.robot_id,
                result: &r,
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()?;
    eprintln!("{accepted} of {} pairs accepted", a.len() * b.len());
    Ok(())
}

fn robot_file(dir: &Path, seed: u64, robot: usize) -> PathBuf {
    dir.join(format!("seed{seed:04}_robot{robot}.jsonl"))
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let cfg = load_config(&args.config)?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let sets = simulate_sets(&cfg.scenario, &cfg.submap, cfg.eval.seeds.max(1), cfg.eval.parallel)?;
    let mut gt = BufWriter::new(File::create(args.out.join("ground_truth.jsonl"))?);
    for set in &sets {
        for r in 0..2 {
            write_submaps_file(robot_file(&args.out, set.seed, r), &set.submaps[r])?;
        }
        serde_json::to_writer(
            &mut gt,
            &GroundTruthRecord {
                seed: set.seed,
                robots: set.ground_truth.clone(),
            },
        )?;
        gt.write_all(b"\n")?;
        if args.observations {
            let scenario = ScenarioConfig {
                seed: set.seed,
                ..cfg.scenario.clone()
            };
            let pair = generate_traversal_pair(&generate_world(&scenario)?, &scenario)?;
            for run in &pair.runs {
                let frames = observation_stream(run, cfg.tracking.voxel_size, scenario.sensor_range, 2, 0.8, set.seed);
                let path = args.out.join(format!("seed{:04}_robot{}_observations.jsonl", set.seed, run.robot_id));
                let mut w = BufWriter::new(File::create(path)?);
                for f in &frames {
                    serde_json::to_writer(&mut w, f)?;
                    w.write_all(b"\n")?;
                }
                w.flush()?;
            }
        }
    }
    gt.flush()?;
    let n: usize = sets.iter().map(|s| s.submaps[0].len() + s.submaps[1].len()).sum();
    eprintln!("wrote {n} submaps over {} seeds to {}", sets.len(), args.out.display());
    Ok(())
}

fn load_sets(dir: &Path) -> Result<Vec<SubmapSet>> {
    let f = File::open(dir.join("ground_truth.jsonl")).with_context(|| format!("no ground_truth.jsonl in {}", dir.display()))?;
    let records: Vec<GroundTruthRecord> = read_jsonl(std::io::BufReader::new(f))?;
    records
        .into_iter()
        .map(|g| {
            Ok(SubmapSet {
                seed: g.seed,
                submaps: [
                    read_submaps_file(robot_file(dir, g.seed, 0))?,
                    read_submaps_file(robot_file(dir, g.seed, 1))?,
                ],
                ground_truth: g.robots,
            })
        })
        .collect()
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let base = load_config(&args.config)?;
    let ablation: Ablation = args.ablate.parse()?;
    let mut cfg = ablation.apply(&base)?;
    if args.no_timing {
        cfg.eval.record_timing = false;
    }
    if args.serial {
        cfg.eval.parallel = false;
    }
    let sets = match &args.input {
        Some(dir) => load_sets(dir)?,
        None => simulate_sets(&cfg.scenario, &cfg.submap, cfg.eval.seeds.max(1), cfg.eval.parallel)?,
    };
    let report = evaluate_sets(&sets, &cfg.align_params()?, &cfg.eval)?;
    if let Some(p) = &args.out_csv {
        let mut w = BufWriter::new(File::create(p)?);
        write_csv(&mut w, &report.records)?;
        w.flush()?;
    }
    if let Some(p) = &args.out_json {
        let mut w = BufWriter::new(File::create(p)?);
        write_json(&mut w, &report)?;
        w.flush()?;
    }
    println!("pairs            {}", report.n_pairs);
    println!("mean success     {:.3}", report.mean_success);
    for bin in HeadingBin::ALL {
        if let Some(s) = report.success_by_bin.get(bin.label()) {
            println!("  heading {:<8} {:.3} ({} pairs)", bin.label(), s.rate, s.pairs);
        }
    }
    if cfg.eval.place_recognition {
        println!("PR AUC           {:.3}", report.auc);
    }
    if cfg.eval.record_timing {
        println!("alignment ms     mean {:.2} max {:.2}", report.mean_wall_time_ms, report.max_wall_time_ms);
    }
    Ok(())
}

fn random_problem(rng: &mut ChaCha8Rng, n: usize, density: f64) -> AffinityProblem {
    let mut diag = vec![1.0; n];
    diag.iter_mut().for_each(|d| *d = rng.random_range(0.5..1.0));
    let mut rows = vec![Vec::new(); n];
    for p in 0..n {
        for q in p + 1..n {
            if rng.random_bool(density) {
                let w = rng.random_range(0.0..1.0);
                rows[p].push((q, w));
                rows[q].push((p, w));
            }
        }
    }
    AffinityProblem::from_rows(diag, rows)
}

fn cmd_oracle(args: &OracleArgs) -> Result<bool> {
    if args.n == 0 || args.n > BRUTE_FORCE_LIMIT {
        bail!("--n must be in 1..={BRUTE_FORCE_LIMIT}");
    }
    if !(0.0..=1.0).contains(&args.density) {
        bail!("--density must be in [0, 1]");
    }
    let opts: SolverOptions = load_config(&args.config)?.solver;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut ratios = Vec::with_capacity(args.trials);
    let mut exact = 0;
    let started = std::time::Instant::now();
    for _ in 0..args.trials {
        let prob = random_problem(&mut rng, args.n, args.density);
        let got = solve_densest(&prob, &opts)?;
        let best = brute_force_densest(&prob)?;
        if !prob.is_feasible(&got.indices()) {
            bail!("solver returned an infeasible set");
        }
        exact += (got.selected == best.selected) as usize;
        ratios.push(got.density / best.density);
    }
    let within = ratios.iter().filter(|&&r| r >= 0.95).count();
    let worst = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    let mean = ratios.iter().sum::<f64>() / ratios.len().max(1) as f64;
    println!("trials           {}", args.trials);
    println!("exact recovery   {exact}");
    println!("within 0.95x     {within}");
    println!("ratio mean/worst {mean:.4} / {worst:.4}");
    println!("elapsed          {:.2} s", started.elapsed().as_secs_f64());
    Ok(args.trials == 0 || within as f64 >= 0.95 * args.trials as f64)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Align(a) => cmd_align(a).map(|_| true),
        Command::Simulate(a) => cmd_simulate(a).map(|_| true),
        Command::Evaluate(a) => cmd_evaluate(a).map(|_| true),
        Command::OracleCheck(a) => cmd_oracle(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
