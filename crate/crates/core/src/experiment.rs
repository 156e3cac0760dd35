//! Config-driven experiment runners and their CSV artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::baselines::{riccati_recursion, PidGains, RiccatiSolution};
use crate::config::{ExperimentConfig, SolverKind};
use crate::error::{LpcError, Result};
use crate::plants::{tracking_error, PlantModel};
use crate::solver::{closed_loop, lpc_run, seed_pool, RunLog};

/// Seeds the run generator. Bench trials use stream `trial`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `{:.16e}` keeps 17 significant digits, enough to round-trip any f64.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

/// A CSV table kept in memory until the whole experiment succeeded.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: &'static str,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &'static str, header: &[&str]) -> Self {
        Table {
            name,
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| LpcError::Io(e.to_string());
        w.write_record(&self.header).map_err(io)?;
        for row in &self.rows {
            w.write_record(row).map_err(io)?;
        }
        w.into_inner().map_err(|e| LpcError::Io(e.to_string()))
    }
}

/// Writes every table into `dir`, creating it if needed.
pub fn write_tables(dir: &Path, tables: &[Table]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| LpcError::Io(format!("{}: {e}", dir.display())))?;
    tables
        .iter()
        .map(|t| {
            let path = dir.join(t.name);
            fs::write(&path, t.to_csv()?)
                .map_err(|e| LpcError::Io(format!("{}: {e}", path.display())))?;
            Ok(path)
        })
        .collect()
}

/// Runs the seeded pool plus the closed loop for `solver`.
pub fn simulate(cfg: &ExperimentConfig, solver: SolverKind, stream: u64) -> Result<RunLog> {
    let bases = cfg.bases()?;
    let lpc = cfg.lpc_config(solver)?;
    let mut rng = rng_for(cfg.seed, stream);
    let pool = seed_pool(
        &cfg.plant,
        cfg.pool_size,
        &cfg.state_box,
        &cfg.input_box,
        &mut rng,
    )?;
    lpc_run(
        &cfg.plant,
        &cfg.cost(),
        &bases,
        &lpc,
        &cfg.x0,
        cfg.steps,
        pool,
        &mut rng,
    )
}

fn trajectory_table(cfg: &ExperimentConfig, log: &RunLog) -> Result<Table> {
    let tracking = cfg.plant.is_tracking();
    let mut header = vec!["k", "x1", "x2", "u", "stage_cost"];
    if tracking {
        header.extend(["r1", "r2", "e1", "e2"]);
    }
    let mut t = Table::new("trajectory.csv", &header);
    for (k, x) in log.states.iter().enumerate() {
        let mut row = vec![k.to_string(), fmt_num(x[0]), fmt_num(x[1])];
        match (log.inputs.get(k), log.stage_costs.get(k)) {
            (Some(&u), Some(&c)) => row.extend([fmt_num(u), fmt_num(c)]),
            _ => row.extend([String::new(), String::new()]),
        }
        if tracking {
            let e = tracking_error(x)?;
            row.extend([x[2], x[3], e[0], e[1]].map(fmt_num));
        }
        t.rows.push(row);
    }
    Ok(t)
}

fn weights_table(log: &RunLog) -> Table {
    let first = &log.weights[0];
    let mut header: Vec<String> = vec!["k".into()];
    header.extend((0..first.critic[0].len()).map(|i| format!("wc{i}")));
    header.extend((0..first.actor[0].len()).map(|i| format!("wa{i}")));
    let mut t = Table {
        name: "weights.csv",
        header,
        rows: Vec::new(),
    };
    for (k, w) in log.weights.iter().enumerate() {
        let mut row = vec![k.to_string()];
        row.extend(w.critic[0].iter().map(|&v| fmt_num(v)));
        row.extend(w.actor[0].iter().map(|&v| fmt_num(v)));
        t.rows.push(row);
    }
    t
}

fn iterations_table(log: &RunLog) -> Table {
    let mut t = Table::new(
        "iterations.csv",
        &["k", "j", "network", "iterations", "final_loss"],
    );
    for f in &log.fits {
        t.rows.push(vec![
            f.k.to_string(),
            f.fit.stage.to_string(),
            f.fit.network.as_str().to_string(),
            f.fit.iterations.to_string(),
            fmt_num(f.fit.final_loss),
        ]);
    }
    t
}

/// Closed-loop run with the configured solver.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(RunLog, Vec<Table>)> {
    let log = simulate(cfg, cfg.solver, 0)?;
    let tables = vec![
        trajectory_table(cfg, &log)?,
        weights_table(&log),
        iterations_table(&log),
    ];
    Ok((log, tables))
}

/// Per-solver averages over bench trials.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub system: String,
    pub solver: SolverKind,
    pub mean_runtime_s: f64,
    pub mean_iterations: f64,
}

/// Runs each trial with both solvers from the same seed stream, so each
/// trial starts from an identical pool. Reported iterations are per-horizon
/// totals over every stage and network, averaged over the closed-loop steps
/// and then over trials; runtime is the mean wall-clock time per horizon.
pub fn bench_solvers(cfg: &ExperimentConfig, trials: usize) -> Result<(Vec<BenchRow>, Table)> {
    if trials == 0 {
        return Err(LpcError::config("trials", "must be >= 1"));
    }
    let mut rows = Vec::new();
    for solver in [SolverKind::Ocp, SolverKind::Gd] {
        let mut iters = 0.0;
        let mut secs = 0.0;
        for trial in 0..trials {
            let start = Instant::now();
            let log = simulate(cfg, solver, trial as u64)?;
            let elapsed = start.elapsed().as_secs_f64();
            let per_horizon = log.horizon_iterations();
            iters += per_horizon.iter().sum::<usize>() as f64 / per_horizon.len() as f64;
            secs += elapsed / per_horizon.len() as f64;
        }
        rows.push(BenchRow {
            system: cfg.plant.name().to_string(),
            solver,
            mean_runtime_s: secs / trials as f64,
            mean_iterations: iters / trials as f64,
        });
    }
    let mut t = Table::new(
        "bench.csv",
        &["system", "solver", "mean_runtime_s", "mean_iterations"],
    );
    for r in &rows {
        t.rows.push(vec![
            r.system.clone(),
            r.solver.as_str().to_string(),
            fmt_num(r.mean_runtime_s),
            fmt_num(r.mean_iterations),
        ]);
    }
    Ok((rows, t))
}

/// LPC and PID trajectories on the same reference.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingComparison {
    pub lpc: RunLog,
    pub pid_states: Vec<Vec<f64>>,
    pub pid_inputs: Vec<f64>,
}

impl TrackingComparison {
    /// Largest per-component error from step `from` on, for (LPC, PID).
    pub fn max_error_from(&self, from: usize) -> Result<(f64, f64)> {
        let worst = |states: &[Vec<f64>]| -> Result<f64> {
            states.iter().skip(from).try_fold(0.0f64, |m, x| {
                let e = tracking_error(x)?;
                Ok(m.max(e[0].abs()).max(e[1].abs()))
            })
        };
        Ok((worst(&self.lpc.states)?, worst(&self.pid_states)?))
    }
}

pub fn compare_tracking(cfg: &ExperimentConfig) -> Result<(TrackingComparison, Vec<Table>)> {
    if !cfg.plant.is_tracking() {
        return Err(LpcError::config(
            "plant",
            "tracking comparison needs `vdp-tracking`",
        ));
    }
    let (lpc, mut tables) = run_experiment(cfg)?;
    let mut pid = PidGains::new(cfg.pid_kp, cfg.pid_ki, cfg.pid_kd);
    let (pid_states, pid_inputs) = closed_loop(
        &cfg.plant,
        &cfg.x0,
        cfg.steps,
        cfg.divergence_bound,
        |_, x| Ok(pid.step(tracking_error(x)?)),
    )?;

    let mut t = Table::new(
        "tracking.csv",
        &[
            "k", "r1", "r2", "x1_lpc", "x2_lpc", "u_lpc", "x1_pid", "x2_pid", "u_pid", "e1_lpc",
            "e2_lpc", "e1_pid", "e2_pid",
        ],
    );
    let opt = |v: Option<&f64>| v.map(|&u| fmt_num(u)).unwrap_or_default();
    for (k, (xl, xp)) in lpc.states.iter().zip(&pid_states).enumerate() {
        let el = tracking_error(xl)?;
        let ep = tracking_error(xp)?;
        t.rows.push(vec![
            k.to_string(),
            fmt_num(xl[2]),
            fmt_num(xl[3]),
            fmt_num(xl[0]),
            fmt_num(xl[1]),
            opt(lpc.inputs.get(k)),
            fmt_num(xp[0]),
            fmt_num(xp[1]),
            opt(pid_inputs.get(k)),
            fmt_num(el[0]),
            fmt_num(el[1]),
            fmt_num(ep[0]),
            fmt_num(ep[1]),
        ]);
    }
    tables.push(t);
    Ok((
        TrackingComparison {
            lpc,
            pid_states,
            pid_inputs,
        },
        tables,
    ))
}

/// Finite-horizon Riccati solution for a linear plant's config.
pub fn riccati_for(cfg: &ExperimentConfig) -> Result<RiccatiSolution> {
    let PlantModel::Linear { a, b } = &cfg.plant else {
        return Err(LpcError::config(
            "plant",
            "riccati needs the `linear` plant",
        ));
    };
    let a = DMatrix::from_iterator(2, 2, a.iter().copied());
    let b = DMatrix::from_iterator(2, 1, b.iter().copied());
    riccati_recursion(&a, &b, &cfg.q, &cfg.r, &cfg.s, cfg.horizon)
}

/// Human-readable `P` and `K` of the first stage.
pub fn riccati_report(sol: &RiccatiSolution) -> String {
    let mut out = String::new();
    let p = sol.p0();
    out.push_str("P =\n");
    for i in 0..p.nrows() {
        let row: Vec<String> = p.row(i).iter().map(|v| format!("{v:.6}")).collect();
        out.push_str(&format!("  [{}]\n", row.join(", ")));
    }
    if let Some(k) = sol.k0() {
        let row: Vec<String> = k.iter().map(|v| format!("{v:.6}")).collect();
        out.push_str(&format!("K = [{}]\n", row.join(", ")));
    }
    out
}
