//! Gap metrics, per-instance evaluation and the replicated experiment grid.

use std::time::{Duration, Instant};

use drsp_solver::{MipOptions, MipStatus};
use log::{info, warn};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::ambiguity::{build_s0, partition, AmbiguityError, Polyhedron, ResponseVector};
use crate::datagen::{
    generate_instance, stream_rng, DataGenError, Instance, InstanceConfig, Stream,
};
use crate::formulations::{
    posterior_value, solve_maxmin, solve_multistage, solve_static, FormulationError, NaMode,
};
use crate::verification::{resolve_all, simulate_walk, Provenance, VerificationError};

/// Smallest admissible gap between the static value and the lower bound.
pub const DEGENERATE_TOL: f64 = 1e-9;
/// Regenerations tolerated per replication before giving up.
pub const MAX_REGENERATIONS: usize = 1000;
/// Default per-MIP time limit.
pub const DEFAULT_TIME_LIMIT_S: f64 = 120.0;
/// Environment variable capping the number of worker threads.
pub const WORKERS_ENV: &str = "DRSP_WORKERS";

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("static value and lower bound coincide ({0})")]
    DegenerateDenominator(f64),
    #[error("no non-degenerate instance after {0} regenerations")]
    RegenerationExhausted(usize),
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("static model stopped with status {0:?}")]
    StaticUnsolved(MipStatus),
    #[error(transparent)]
    DataGen(#[from] DataGenError),
    #[error(transparent)]
    Ambiguity(#[from] AmbiguityError),
    #[error(transparent)]
    Formulation(#[from] FormulationError),
    #[error(transparent)]
    Verification(#[from] VerificationError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Share of the static-to-floor gap closed by dynamic decisions, and the
/// further share explained by the identified partition, in percent.
pub fn compute_metrics(
    z_static: f64,
    z_lower: f64,
    z_dynamic: f64,
    z_posterior: Option<f64>,
) -> Result<(f64, Option<f64>), ExperimentError> {
    let gap = z_static - z_lower;
    if gap <= DEGENERATE_TOL {
        return Err(ExperimentError::DegenerateDenominator(gap));
    }
    let rho1 = 100.0 * (z_static - z_dynamic) / gap;
    let rho2 = z_posterior.map(|p| 100.0 * (z_dynamic - p) / gap);
    Ok((rho1, rho2))
}

/// Mean and mean absolute deviation about the mean; zeros when empty.
pub fn mean_mad(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let mad = values.iter().map(|v| (v - mean).abs()).sum::<f64>() / n;
    (mean, mad)
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub mip: MipOptions,
    pub force_general: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            mip: MipOptions {
                time_limit: Some(Duration::from_secs_f64(DEFAULT_TIME_LIMIT_S)),
                ..MipOptions::default()
            },
            force_general: false,
        }
    }
}

/// Outcome of one auxiliary-list length on one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub num_aux: usize,
    pub timed_out: bool,
    pub z_dynamic: Option<f64>,
    pub z_posterior: Option<f64>,
    pub rho1: Option<f64>,
    pub rho2: Option<f64>,
    pub time_s: f64,
    pub nodes: usize,
    pub scenario: Option<usize>,
    pub bits: Vec<bool>,
    pub provenance: Vec<Provenance>,
    pub empty_partitions: usize,
}

/// Everything measured on one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub cell: usize,
    pub rep: usize,
    pub seed: u64,
    pub regenerations: usize,
    pub z_static: f64,
    pub z_lower: f64,
    pub time_static_s: f64,
    pub time_lower_s: f64,
    pub levels: Vec<LevelRecord>,
}

/// Partitions of `s0` for every response vector of the list.
pub fn all_partitions(
    s0: &Polyhedron,
    inst: &Instance,
    list: &[crate::ambiguity::AuxiliaryConstraint],
) -> Result<Vec<Polyhedron>, AmbiguityError> {
    ResponseVector::all(list.len())
        .iter()
        .map(|r| partition(s0, &inst.ambiguity, list, r))
        .collect()
}

/// Static value, lower bound and their solve times.
pub struct Baseline {
    pub s0: Polyhedron,
    pub z_static: f64,
    pub z_lower: f64,
    pub time_static: Duration,
    pub time_lower: Duration,
}

pub fn baseline(inst: &Instance, opts: &EvalOptions) -> Result<Baseline, ExperimentError> {
    let s0 = build_s0(&inst.ambiguity)?;
    let st = solve_static(&inst.graph, &s0, &opts.mip)?;
    let z_static = match (st.status, st.objective) {
        (MipStatus::Optimal, Some(z)) => z,
        (status, _) => return Err(ExperimentError::StaticUnsolved(status)),
    };
    let t = Instant::now();
    let (z_lower, _) = solve_maxmin(&inst.graph, &s0)?;
    Ok(Baseline {
        s0,
        z_static,
        z_lower,
        time_static: st.elapsed,
        time_lower: t.elapsed(),
    })
}

/// Solves every list length in `levels` on prefixes of the instance's
/// auxiliary list. Responses are resolved once for the full list, so
/// shorter lists see a prefix of the same bits.
pub fn evaluate_levels(
    inst: &Instance,
    base: &Baseline,
    levels: &[usize],
    opts: &EvalOptions,
) -> Result<Vec<LevelRecord>, ExperimentError> {
    let mut coins = stream_rng(inst.config.seed, Stream::Coins);
    let (resolved, _) = resolve_all(
        &inst.auxiliary,
        &inst.ambiguity,
        &inst.verify,
        inst.config.gamma,
        &mut coins,
    );
    let mode = NaMode::select(&inst.graph, opts.force_general);
    let mut out = Vec::with_capacity(levels.len());
    for &k in levels {
        let k = k.min(inst.auxiliary.len());
        let list = &inst.auxiliary[..k];
        let parts = all_partitions(&base.s0, inst, list)?;
        let empty_partitions = parts
            .iter()
            .filter(|p| !p.is_feasible().unwrap_or(true))
            .count();
        let bits = resolved.bits[..k].to_vec();
        let provenance = resolved.provenance[..k].to_vec();
        let ms = solve_multistage(&inst.graph, &parts, list, mode, &opts.mip)?;
        let time_s = ms.elapsed.as_secs_f64();
        let policy = match (ms.status, ms.policy) {
            (MipStatus::Optimal, Some(p)) => p,
            (status, _) => {
                warn!(
                    "seed {}: multistage model with {k} constraints stopped with {status:?}",
                    inst.config.seed
                );
                out.push(LevelRecord {
                    num_aux: k,
                    timed_out: true,
                    z_dynamic: None,
                    z_posterior: None,
                    rho1: None,
                    rho2: None,
                    time_s,
                    nodes: ms.nodes,
                    scenario: None,
                    bits,
                    provenance,
                    empty_partitions,
                });
                continue;
            }
        };
        let prefix = crate::verification::ResolvedResponses {
            bits: bits.clone(),
            provenance: provenance.clone(),
        };
        let walk = simulate_walk(&policy, list, &prefix, &inst.graph)?;
        let z_posterior = match posterior_value(&walk.path, &parts[walk.scenario - 1]) {
            Ok(v) => Some(v),
            Err(FormulationError::PosteriorInfeasible) => None,
            Err(e) => return Err(e.into()),
        };
        let (rho1, rho2) =
            compute_metrics(base.z_static, base.z_lower, policy.objective, z_posterior)?;
        out.push(LevelRecord {
            num_aux: k,
            timed_out: false,
            z_dynamic: Some(policy.objective),
            z_posterior,
            rho1: Some(rho1),
            rho2,
            time_s,
            nodes: ms.nodes,
            scenario: Some(walk.scenario),
            bits,
            provenance,
            empty_partitions,
        });
    }
    Ok(out)
}

/// Generates the instance for `cfg`, moving to the next seed while the
/// static value and the lower bound coincide.
pub fn generate_nondegenerate(
    cfg: &InstanceConfig,
    opts: &EvalOptions,
) -> Result<(Instance, Baseline, usize), ExperimentError> {
    let mut cfg = cfg.clone();
    for regenerations in 0..=MAX_REGENERATIONS {
        let inst = generate_instance(&cfg)?;
        let base = baseline(&inst, opts)?;
        if base.z_static - base.z_lower > DEGENERATE_TOL {
            return Ok((inst, base, regenerations));
        }
        info!("seed {} is degenerate, regenerating", cfg.seed);
        cfg.seed = cfg.seed.wrapping_add(1);
    }
    Err(ExperimentError::RegenerationExhausted(MAX_REGENERATIONS))
}

/// Experiment grid: a base configuration, per-cell overrides and the list
/// lengths evaluated on each instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    #[serde(default)]
    pub base: Map<String, Value>,
    pub cells: Vec<Map<String, Value>>,
    pub levels: Vec<usize>,
    /// Prefix lists of one instance per replication (default) or a fresh
    /// instance per list length.
    #[serde(default = "default_true")]
    pub nested: bool,
    #[serde(default = "default_time_limit")]
    pub time_limit_s: f64,
    #[serde(default)]
    pub force_general: bool,
}

fn default_true() -> bool {
    true
}

fn default_time_limit() -> f64 {
    DEFAULT_TIME_LIMIT_S
}

impl Grid {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.cells.is_empty() {
            return Err(ExperimentError::Grid("no cells".into()));
        }
        if self.levels.is_empty() {
            return Err(ExperimentError::Grid("no list lengths".into()));
        }
        for k in ["seed", "num_aux"] {
            if self.base.contains_key(k) || self.cells.iter().any(|c| c.contains_key(k)) {
                return Err(ExperimentError::Grid(format!(
                    "`{k}` is set by the harness"
                )));
            }
        }
        for c in 0..self.cells.len() {
            self.cell_config(c)?;
        }
        Ok(())
    }

    /// Configuration of cell `c`: defaults, then the base, then the cell.
    pub fn cell_config(&self, c: usize) -> Result<InstanceConfig, ExperimentError> {
        let mut v = serde_json::to_value(InstanceConfig::default())?;
        let obj = v.as_object_mut().expect("config is an object");
        for (k, val) in self.base.iter().chain(self.cells[c].iter()) {
            if !obj.contains_key(k) {
                return Err(ExperimentError::Grid(format!(
                    "unknown configuration key `{k}`"
                )));
            }
            obj.insert(k.clone(), val.clone());
        }
        let cfg: InstanceConfig = serde_json::from_value(v)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Names of the keys that vary across cells, in first-seen order.
    pub fn group_keys(&self) -> Vec<String> {
        let mut keys: Vec<String> = Vec::new();
        for cell in &self.cells {
            for k in cell.keys() {
                if !keys.contains(k) {
                    keys.push(k.clone());
                }
            }
        }
        keys
    }
}

/// Aggregate over the instances of one cell and list length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub cell: usize,
    pub group: Vec<(String, String)>,
    pub num_aux: usize,
    pub mean_rho1: f64,
    pub mad_rho1: f64,
    pub mean_rho2: f64,
    pub mad_rho2: f64,
    pub mean_time_s: f64,
    pub mad_time_s: f64,
    pub n_instances: usize,
    pub n_timeouts: usize,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub reps: usize,
    pub seed: u64,
    /// Report zero times so that outputs depend only on the inputs.
    pub no_timing: bool,
    pub workers: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub rows: Vec<AggregateRow>,
    pub records: Vec<InstanceRecord>,
}

/// Instance seeds for one cell, independent of the other cells.
pub fn replication_seeds(root: u64, cell: usize, reps: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(1000 + cell as u64);
    (0..reps).map(|_| rng.next_u64()).collect()
}

fn run_one(
    grid: &Grid,
    cell: usize,
    rep: usize,
    seed: u64,
    opts: &EvalOptions,
) -> Result<InstanceRecord, ExperimentError> {
    let max_level = *grid.levels.iter().max().expect("levels nonempty");
    let mut cfg = grid.cell_config(cell)?;
    cfg.seed = seed;
    if grid.nested {
        cfg.num_aux = max_level;
        let (inst, base, regenerations) = generate_nondegenerate(&cfg, opts)?;
        let levels = evaluate_levels(&inst, &base, &grid.levels, opts)?;
        Ok(InstanceRecord {
            cell,
            rep,
            seed: inst.config.seed,
            regenerations,
            z_static: base.z_static,
            z_lower: base.z_lower,
            time_static_s: base.time_static.as_secs_f64(),
            time_lower_s: base.time_lower.as_secs_f64(),
            levels,
        })
    } else {
        let mut levels = Vec::new();
        let mut first: Option<(u64, usize, Baseline)> = None;
        for &k in &grid.levels {
            cfg.num_aux = k;
            let (inst, base, regen) = generate_nondegenerate(&cfg, opts)?;
            levels.extend(evaluate_levels(&inst, &base, &[k], opts)?);
            if first.is_none() {
                first = Some((inst.config.seed, regen, base));
            }
        }
        let (seed, regenerations, base) = first.expect("levels nonempty");
        Ok(InstanceRecord {
            cell,
            rep,
            seed,
            regenerations,
            z_static: base.z_static,
            z_lower: base.z_lower,
            time_static_s: base.time_static.as_secs_f64(),
            time_lower_s: base.time_lower.as_secs_f64(),
            levels,
        })
    }
}

fn worker_count(requested: Option<usize>) -> usize {
    let env = std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok());
    let avail = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    requested.or(env).unwrap_or(avail).max(1)
}

/// Runs every cell of the grid with `reps` replications.
pub fn run_experiment(grid: &Grid, run: &RunOptions) -> Result<ExperimentOutput, ExperimentError> {
    grid.validate()?;
    let opts = EvalOptions {
        mip: MipOptions {
            time_limit: Some(Duration::from_secs_f64(grid.time_limit_s)),
            ..MipOptions::default()
        },
        force_general: grid.force_general,
    };
    let tasks: Vec<(usize, usize, u64)> = (0..grid.cells.len())
        .flat_map(|c| {
            replication_seeds(run.seed, c, run.reps)
                .into_iter()
                .enumerate()
                .map(move |(r, s)| (c, r, s))
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count(run.workers))
        .build()
        .map_err(|e| ExperimentError::Grid(format!("thread pool: {e}")))?;
    let results: Vec<Result<InstanceRecord, ExperimentError>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(c, r, s)| run_one(grid, c, r, s, &opts))
            .collect()
    });
    let mut records = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    if run.no_timing {
        for rec in &mut records {
            rec.time_static_s = 0.0;
            rec.time_lower_s = 0.0;
            for l in &mut rec.levels {
                l.time_s = 0.0;
            }
        }
    }
    let rows = aggregate(grid, &records);
    Ok(ExperimentOutput { rows, records })
}

fn value_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Mean and MAD per cell and list length, over instances that finished.
pub fn aggregate(grid: &Grid, records: &[InstanceRecord]) -> Vec<AggregateRow> {
    let keys = grid.group_keys();
    let mut rows = Vec::new();
    for c in 0..grid.cells.len() {
        let group: Vec<(String, String)> = keys
            .iter()
            .map(|k| {
                let v = grid.cells[c]
                    .get(k)
                    .or_else(|| grid.base.get(k))
                    .map(value_text)
                    .unwrap_or_else(|| {
                        let d = serde_json::to_value(InstanceConfig::default())
                            .expect("config serializes");
                        d.get(k).map(value_text).unwrap_or_default()
                    });
                (k.clone(), v)
            })
            .collect();
        for &k in &grid.levels {
            let levels: Vec<&LevelRecord> = records
                .iter()
                .filter(|r| r.cell == c)
                .flat_map(|r| r.levels.iter().filter(|l| l.num_aux == k))
                .collect();
            let done: Vec<&&LevelRecord> = levels.iter().filter(|l| !l.timed_out).collect();
            let rho1: Vec<f64> = done.iter().filter_map(|l| l.rho1).collect();
            let rho2: Vec<f64> = done.iter().filter_map(|l| l.rho2).collect();
            let time: Vec<f64> = done.iter().map(|l| l.time_s).collect();
            let (mean_rho1, mad_rho1) = mean_mad(&rho1);
            let (mean_rho2, mad_rho2) = mean_mad(&rho2);
            let (mean_time_s, mad_time_s) = mean_mad(&time);
            rows.push(AggregateRow {
                cell: c,
                group: group.clone(),
                num_aux: k,
                mean_rho1,
                mad_rho1,
                mean_rho2,
                mad_rho2,
                mean_time_s,
                mad_time_s,
                n_instances: done.len(),
                n_timeouts: levels.len() - done.len(),
            });
        }
    }
    rows
}

/// CSV with the group keys, the list length and the aggregate columns.
pub fn write_csv<W: std::io::Write>(
    grid: &Grid,
    rows: &[AggregateRow],
    out: W,
) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = grid.group_keys();
    header.push("num_aux".into());
    for h in [
        "mean_rho1",
        "mad_rho1",
        "mean_rho2",
        "mad_rho2",
        "mean_time_s",
        "mad_time_s",
        "n_instances",
        "n_timeouts",
    ] {
        header.push(h.into());
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec: Vec<String> = r.group.iter().map(|(_, v)| v.clone()).collect();
        rec.push(r.num_aux.to_string());
        for v in [
            r.mean_rho1,
            r.mad_rho1,
            r.mean_rho2,
            r.mad_rho2,
            r.mean_time_s,
            r.mad_time_s,
        ] {
            let v = if v.abs() < 5e-7 { 0.0 } else { v };
            rec.push(format!("{v:.6}"));
        }
        rec.push(r.n_instances.to_string());
        rec.push(r.n_timeouts.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Header line echoing the run, then one JSON record per instance.
pub fn write_records<W: std::io::Write>(
    grid: &Grid,
    run: &RunOptions,
    records: &[InstanceRecord],
    mut out: W,
) -> Result<(), ExperimentError> {
    let echo = serde_json::json!({
        "grid": grid,
        "reps": run.reps,
        "seed": run.seed,
        "no_timing": run.no_timing,
        "mad": "mean absolute deviation about the mean",
    });
    writeln!(out, "{}", serde_json::to_string(&echo)?)?;
    for r in records {
        writeln!(out, "{}", serde_json::to_string(r)?)?;
    }
    Ok(())
}
