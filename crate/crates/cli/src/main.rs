use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use drsp_core::ambiguity::{build_s0, partition, ResponseVector};
use drsp_core::datagen::{generate_instance, stream_rng, AuxMode, InstanceConfig, Stream};
use drsp_core::experiments::{
    all_partitions, run_experiment, write_csv, write_records, Grid, RunOptions,
};
use drsp_core::formulations::{
    build_maxmin_lp, build_multistage_mip, build_static_mip, posterior_value, solve_maxmin,
    solve_multistage, solve_static, FormulationError, MultiStagePolicy, NaMode,
    DEFAULT_SCENARIO_CAP,
};
use drsp_core::graph::{build_example1, GraphClass};
use drsp_core::instance;
use drsp_core::solver::MipOptions;
use drsp_core::verification::{resolve_all, simulate_walk, trace_json_lines};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "drsp",
    version,
    about = "Multistage distributionally robust shortest paths"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic instance and write it as JSON.
    Generate(GenerateArgs),
    /// Solve one model on an instance.
    Solve {
        #[arg(long, value_enum)]
        mode: SolveMode,
        #[arg(long)]
        instance: PathBuf,
        /// Use label-based non-anticipativity rows even on acyclic graphs.
        #[arg(long)]
        force_general: bool,
        /// Time limit per MIP in seconds.
        #[arg(long, default_value_t = 120.0)]
        time_limit: f64,
        /// Write the dynamic policy to this file.
        #[arg(long)]
        policy_out: Option<PathBuf>,
        /// Write the model in LP text format to this file.
        #[arg(long)]
        lp_out: Option<PathBuf>,
    },
    /// Verify the auxiliary constraints and follow a policy.
    Verify {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        /// Print one JSON line per constraint before the summary.
        #[arg(long)]
        trace: bool,
    },
    /// Run a replicated experiment grid.
    Experiment {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long, default_value_t = 20)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Aggregate CSV; per-instance records go next to it.
        #[arg(long)]
        out: PathBuf,
        /// Report zero times so that repeated runs give identical files.
        #[arg(long)]
        no_timing: bool,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Solve the built-in eight-node example.
    Example1,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolveMode {
    Static,
    Maxmin,
    Dynamic,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClassArg {
    Acyclic,
    General,
}

#[derive(Parser)]
struct GenerateArgs {
    /// Start from this JSON configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    h: Option<usize>,
    #[arg(long)]
    r: Option<usize>,
    #[arg(long, value_enum)]
    class: Option<ClassArg>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_verify: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    num_aux: Option<usize>,
    /// Generate probability constraints with this threshold.
    #[arg(long)]
    prob_threshold: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Generate(args) => generate(args),
        Command::Solve {
            mode,
            instance,
            force_general,
            time_limit,
            policy_out,
            lp_out,
        } => solve(
            mode,
            &instance,
            force_general,
            time_limit,
            policy_out,
            lp_out,
        ),
        Command::Verify {
            instance,
            policy,
            trace,
        } => verify(&instance, &policy, trace),
        Command::Experiment {
            grid,
            reps,
            seed,
            out,
            no_timing,
            workers,
        } => experiment(&grid, reps, seed, &out, no_timing, workers),
        Command::Example1 => example1(),
    }
}

fn generate(a: GenerateArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)
            .with_context(|| format!("reading {}", p.display()))?,
        None => InstanceConfig::default(),
    };
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = a.$f { cfg.$f = v; })* };
    }
    set!(h, r, kappa, n_train, n_verify, eta, gamma, sigma, num_aux, seed);
    if let Some(c) = a.class {
        cfg.class = match c {
            ClassArg::Acyclic => GraphClass::Acyclic,
            ClassArg::General => GraphClass::General,
        };
    }
    if let Some(threshold) = a.prob_threshold {
        cfg.aux_mode = AuxMode::Probability { threshold };
    }
    let inst = generate_instance(&cfg)?;
    match a.out {
        Some(p) => instance::write(&p, &inst)?,
        None => println!("{}", instance::to_json(&inst)),
    }
    Ok(())
}

fn mip_options(time_limit: f64) -> MipOptions {
    MipOptions {
        time_limit: Some(Duration::from_secs_f64(time_limit)),
        ..MipOptions::default()
    }
}

fn solve(
    mode: SolveMode,
    path: &Path,
    force_general: bool,
    time_limit: f64,
    policy_out: Option<PathBuf>,
    lp_out: Option<PathBuf>,
) -> Result<()> {
    let inst = instance::read(path)?;
    let s0 = build_s0(&inst.ambiguity)?;
    let opts = mip_options(time_limit);
    let report = match mode {
        SolveMode::Static => {
            if let Some(p) = &lp_out {
                std::fs::write(p, build_static_mip(&inst.graph, &s0).mip.to_lp_format())?;
            }
            let out = solve_static(&inst.graph, &s0, &opts)?;
            json!({
                "mode": "static",
                "status": format!("{:?}", out.status),
                "objective": out.objective,
                "path": out.path.map(|p| p.nodes(&inst.graph)),
                "time_s": out.elapsed.as_secs_f64(),
                "nodes": out.nodes,
            })
        }
        SolveMode::Maxmin => {
            if let Some(p) = &lp_out {
                std::fs::write(p, build_maxmin_lp(&inst.graph, &s0).lp.to_lp_format(None))?;
            }
            let t = Instant::now();
            let (value, costs) = solve_maxmin(&inst.graph, &s0)?;
            json!({
                "mode": "maxmin",
                "objective": value,
                "costs": costs,
                "time_s": t.elapsed().as_secs_f64(),
            })
        }
        SolveMode::Dynamic => {
            let parts = all_partitions(&s0, &inst, &inst.auxiliary)?;
            let na = NaMode::select(&inst.graph, force_general);
            if let Some(p) = &lp_out {
                let model = build_multistage_mip(
                    &inst.graph,
                    &parts,
                    &inst.auxiliary,
                    na,
                    DEFAULT_SCENARIO_CAP,
                )?;
                std::fs::write(p, model.mip.to_lp_format())?;
            }
            let out = solve_multistage(&inst.graph, &parts, &inst.auxiliary, na, &opts)?;
            if let (Some(p), Some(policy)) = (&policy_out, &out.policy) {
                std::fs::write(p, serde_json::to_string_pretty(policy)?)?;
            }
            json!({
                "mode": "dynamic",
                "na_mode": na,
                "status": format!("{:?}", out.status),
                "objective": out.policy.as_ref().map(|p| p.objective),
                "bound": out.bound,
                "paths": out.policy.as_ref().map(|p| p.paths.iter().map(|y| y.nodes(&inst.graph)).collect::<Vec<_>>()),
                "time_s": out.elapsed.as_secs_f64(),
                "nodes": out.nodes,
            })
        }
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn verify(path: &Path, policy_path: &Path, trace: bool) -> Result<()> {
    let inst = instance::read(path)?;
    let policy: MultiStagePolicy = serde_json::from_str(&std::fs::read_to_string(policy_path)?)
        .with_context(|| format!("reading {}", policy_path.display()))?;
    let mut coins = stream_rng(inst.config.seed, Stream::Coins);
    let (resolved, results) = resolve_all(
        &inst.auxiliary,
        &inst.ambiguity,
        &inst.verify,
        inst.config.gamma,
        &mut coins,
    );
    if trace {
        print!("{}", trace_json_lines(&inst.auxiliary, &resolved, &results));
    }
    let walk = simulate_walk(&policy, &inst.auxiliary, &resolved, &inst.graph)?;
    let s0 = build_s0(&inst.ambiguity)?;
    let sj = partition(&s0, &inst.ambiguity, &inst.auxiliary, &resolved.response())?;
    let posterior = match posterior_value(&walk.path, &sj) {
        Ok(v) => Some(v),
        Err(FormulationError::PosteriorInfeasible) => None,
        Err(e) => return Err(e.into()),
    };
    let summary = json!({
        "bits": resolved.bits,
        "provenance": resolved.provenance,
        "scenario": walk.scenario,
        "visited": walk.visited,
        "z_dynamic": policy.objective,
        "z_posterior": posterior,
    });
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

fn experiment(
    grid_path: &Path,
    reps: usize,
    seed: u64,
    out: &Path,
    no_timing: bool,
    workers: Option<usize>,
) -> Result<()> {
    let grid: Grid = serde_json::from_str(&std::fs::read_to_string(grid_path)?)
        .with_context(|| format!("reading {}", grid_path.display()))?;
    if reps == 0 {
        bail!("--reps must be positive");
    }
    let run = RunOptions {
        reps,
        seed,
        no_timing,
        workers,
    };
    let result = run_experiment(&grid, &run)?;
    write_csv(&grid, &result.rows, BufWriter::new(File::create(out)?))?;
    let records = out.with_extension("records.jsonl");
    write_records(
        &grid,
        &run,
        &result.records,
        BufWriter::new(File::create(&records)?),
    )?;
    eprintln!("wrote {} and {}", out.display(), records.display());
    Ok(())
}

fn example1() -> Result<()> {
    let start = Instant::now();
    let ex = build_example1();
    let s0 = build_s0(&ex.ambiguity)?;
    let opts = MipOptions::default();
    let z_static = solve_static(&ex.graph, &s0, &opts)?
        .objective
        .context("static model has no solution")?;
    let (z_lower, _) = solve_maxmin(&ex.graph, &s0)?;
    let parts = ResponseVector::all(ex.auxiliary.len())
        .iter()
        .map(|r| partition(&s0, &ex.ambiguity, &ex.auxiliary, r))
        .collect::<Result<Vec<_>, _>>()?;
    let out = solve_multistage(&ex.graph, &parts, &ex.auxiliary, NaMode::Acyclic, &opts)?;
    let policy = out.policy.context("multistage model has no solution")?;
    let report = json!({
        "z_static": z_static,
        "z_lower": z_lower,
        "z_dynamic": policy.objective,
        "paths": policy.paths.iter().map(|y| y.nodes(&ex.graph)).collect::<Vec<_>>(),
        "time_s": start.elapsed().as_secs_f64(),
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
