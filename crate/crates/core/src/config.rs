//! Flat `key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored. Matrices are either a scalar
//! (times identity) or rows separated by `;` with comma-separated entries.
//! Boxes are `lo:hi` intervals separated by commas; a single interval is
//! broadcast to every coordinate.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{LpcError, Result};
use crate::features::{build_basis, BasisKind, BasisRule};
use crate::ocp::{HessianRefresh, OcpConfig, OcpMode};
use crate::plants::{reference_at, PlantModel};
use crate::solver::{ActorObjective, Bases, CostSpec, FitSolver, LpcConfig, WarmStart};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Ocp,
    Gd,
}

impl SolverKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SolverKind::Ocp => "ocp",
            SolverKind::Gd => "gd",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub plant: PlantModel,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub horizon: usize,
    pub steps: usize,
    pub pool_size: usize,
    pub solver: SolverKind,
    pub rd_critic: f64,
    pub rd_actor: f64,
    pub lr: f64,
    pub gamma: f64,
    pub max_iters: usize,
    pub gd_max_iters: usize,
    pub ocp_mode: OcpMode,
    pub hessian_refresh: HessianRefresh,
    pub critic_basis: String,
    pub actor_basis: String,
    pub warm_start: WarmStart,
    pub actor_objective: ActorObjective,
    pub init_range: (f64, f64),
    pub seed: u64,
    pub x0: Vec<f64>,
    pub state_box: Vec<(f64, f64)>,
    pub input_box: Vec<(f64, f64)>,
    pub divergence_bound: f64,
    pub pid_kp: [f64; 2],
    pub pid_ki: [f64; 2],
    pub pid_kd: [f64; 2],
}

const KEYS: &[&str] = &[
    "plant",
    "q",
    "r",
    "s",
    "horizon",
    "steps",
    "pool_size",
    "solver",
    "rd_critic",
    "rd_actor",
    "lr",
    "gamma",
    "max_iters",
    "gd_max_iters",
    "ocp_mode",
    "hessian_refresh",
    "critic_basis",
    "actor_basis",
    "warm_start",
    "actor_objective",
    "init_range",
    "seed",
    "x0",
    "state_box",
    "input_box",
    "divergence_bound",
    "pid_kp",
    "pid_ki",
    "pid_kd",
];

struct Entries(BTreeMap<String, String>);

impl Entries {
    fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| LpcError::config(key, format!("cannot parse `{v}`"))),
        }
    }

    fn positive(&self, key: &str, default: f64) -> Result<f64> {
        let v: f64 = self.parsed(key, default)?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(LpcError::config(key, "must be a positive number"));
        }
        Ok(v)
    }

    fn count(&self, key: &str, default: usize) -> Result<usize> {
        let v: usize = self.parsed(key, default)?;
        if v == 0 {
            return Err(LpcError::config(key, "must be >= 1"));
        }
        Ok(v)
    }

    fn choice<T: Copy>(&self, key: &str, options: &[(&str, T)], default: T) -> Result<T> {
        let Some(v) = self.get(key) else {
            return Ok(default);
        };
        options
            .iter()
            .find(|(name, _)| *name == v)
            .map(|&(_, t)| t)
            .ok_or_else(|| {
                let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                LpcError::config(key, format!("`{v}` is not one of {}", names.join(", ")))
            })
    }
}

fn parse_list(key: &str, text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    LpcError::config(key, format!("`{}` is not a finite number", t.trim()))
                })
        })
        .collect()
}

fn parse_matrix(key: &str, text: &str, dim: usize) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = text
        .split(';')
        .map(|row| parse_list(key, row))
        .collect::<Result<_>>()?;
    if rows.len() == 1 && rows[0].len() == 1 {
        return Ok(DMatrix::identity(dim, dim) * rows[0][0]);
    }
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(LpcError::config(
            key,
            format!("expected a scalar or a {dim}x{dim} matrix"),
        ));
    }
    Ok(DMatrix::from_fn(dim, dim, |i, j| rows[i][j]))
}

fn parse_pair(key: &str, text: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || LpcError::config(key, format!("`{}` is not a `lo:hi` interval", text.trim()));
    if parts.len() != 2 {
        return Err(bad());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(bad());
    }
    Ok((lo, hi))
}

fn parse_box(key: &str, text: &str, dim: usize) -> Result<Vec<(f64, f64)>> {
    let items: Vec<(f64, f64)> = text
        .split(',')
        .map(|t| parse_pair(key, t))
        .collect::<Result<_>>()?;
    match items.len() {
        1 => Ok(vec![items[0]; dim]),
        n if n == dim => Ok(items),
        n => Err(LpcError::config(
            key,
            format!("expected 1 or {dim} intervals, got {n}"),
        )),
    }
}

fn parse_gains(e: &Entries, key: &str, default: [f64; 2]) -> Result<[f64; 2]> {
    match e.get(key) {
        None => Ok(default),
        Some(v) => {
            let vals = parse_list(key, v)?;
            if vals.len() != 2 {
                return Err(LpcError::config(key, "expected two comma-separated gains"));
            }
            Ok([vals[0], vals[1]])
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LpcError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                LpcError::config(format!("line {}", lineno + 1), "expected `key = value`")
            })?;
            let key = k.trim().to_string();
            if !KEYS.contains(&key.as_str()) {
                return Err(LpcError::config(key, "unknown key"));
            }
            if map.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(LpcError::config(key, "given more than once"));
            }
        }
        let e = Entries(map);

        let plant_name = e
            .get("plant")
            .ok_or_else(|| LpcError::config("plant", "missing required key"))?;
        let plant = PlantModel::by_name(plant_name)
            .map_err(|_| LpcError::config("plant", format!("unknown plant `{plant_name}`")))?;
        let n = plant.state_dim();
        let m = plant.input_dim();
        let cost_dim = if plant.is_tracking() { 2 } else { n };

        // presets only cover two states
        let (default_critic, default_actor) = if plant.state_dim() == 2 {
            ("lq6", "lin2")
        } else {
            ("poly2", "poly1")
        };
        let default_x0 = match &plant {
            PlantModel::Linear { .. } => "1, -0.5",
            PlantModel::PolyNonlinear => "0.9, -0.7",
            _ => "2, -1",
        };
        let mut x0 = parse_list("x0", e.get("x0").unwrap_or(default_x0))?;
        if plant.is_tracking() && x0.len() == 2 {
            x0.extend(reference_at(0));
        }
        if x0.len() != n {
            return Err(LpcError::config(
                "x0",
                format!("expected {n} entries, got {}", x0.len()),
            ));
        }

        let cfg = ExperimentConfig {
            q: parse_matrix("q", e.get("q").unwrap_or("5"), cost_dim)?,
            r: parse_matrix("r", e.get("r").unwrap_or("1"), m)?,
            s: parse_matrix("s", e.get("s").unwrap_or("5"), cost_dim)?,
            horizon: e.count("horizon", 10)?,
            steps: e.count("steps", 30)?,
            pool_size: e.count("pool_size", 30)?,
            solver: e.choice(
                "solver",
                &[("ocp", SolverKind::Ocp), ("gd", SolverKind::Gd)],
                SolverKind::Ocp,
            )?,
            rd_critic: e.positive("rd_critic", 0.1)?,
            rd_actor: e.positive("rd_actor", 0.1)?,
            lr: e.positive("lr", 0.05)?,
            gamma: e.positive("gamma", 1e-5)?,
            max_iters: e.count("max_iters", 100)?,
            gd_max_iters: e.count("gd_max_iters", 100_000)?,
            ocp_mode: e.choice(
                "ocp_mode",
                &[
                    ("interleaved", OcpMode::Interleaved),
                    ("inner_loop", OcpMode::InnerLoop),
                ],
                OcpMode::Interleaved,
            )?,
            hessian_refresh: e.choice(
                "hessian_refresh",
                &[
                    ("frozen", HessianRefresh::Frozen),
                    ("every_step", HessianRefresh::EveryStep),
                ],
                HessianRefresh::Frozen,
            )?,
            critic_basis: e.get("critic_basis").unwrap_or(default_critic).to_string(),
            actor_basis: e.get("actor_basis").unwrap_or(default_actor).to_string(),
            warm_start: e.choice(
                "warm_start",
                &[
                    ("per_stage", WarmStart::PerStage),
                    ("rerandomize_each_step", WarmStart::RerandomizeEachStep),
                ],
                WarmStart::PerStage,
            )?,
            actor_objective: e.choice(
                "actor_objective",
                &[
                    ("q_squared", ActorObjective::QSquared),
                    ("q_mean", ActorObjective::QMean),
                ],
                ActorObjective::QSquared,
            )?,
            init_range: parse_pair("init_range", e.get("init_range").unwrap_or("-1:1"))?,
            seed: e.parsed("seed", 0u64)?,
            x0,
            state_box: parse_box("state_box", e.get("state_box").unwrap_or("-1:1"), n)?,
            input_box: parse_box("input_box", e.get("input_box").unwrap_or("-1:1"), m)?,
            divergence_bound: e.positive("divergence_bound", 1e6)?,
            pid_kp: parse_gains(&e, "pid_kp", [0.9, 0.8])?,
            pid_ki: parse_gains(&e, "pid_ki", [0.5, 0.5])?,
            pid_kd: parse_gains(&e, "pid_kd", [0.01, 0.01])?,
            plant,
        };
        cfg.cost().validate()?;
        cfg.bases()?;
        Ok(cfg)
    }

    pub fn cost(&self) -> CostSpec {
        if self.plant.is_tracking() {
            CostSpec::tracking(self.q.clone(), self.r.clone(), self.s.clone())
        } else {
            CostSpec::new(self.q.clone(), self.r.clone(), self.s.clone())
        }
    }

    pub fn bases(&self) -> Result<Bases> {
        let n = self.plant.state_dim();
        let m = self.plant.input_dim();
        let build = |key: &str, name: &str, kind| {
            let rule = BasisRule::parse(name).map_err(|e| LpcError::config(key, e.to_string()))?;
            build_basis(&rule, n, m, kind).map_err(|e| LpcError::config(key, e.to_string()))
        };
        Ok(Bases {
            critic: build("critic_basis", &self.critic_basis, BasisKind::Critic)?,
            actor: build("actor_basis", &self.actor_basis, BasisKind::Actor)?,
        })
    }

    /// Learning settings for the given solver.
    pub fn lpc_config(&self, solver: SolverKind) -> Result<LpcConfig> {
        let bases = self.bases()?;
        let ocp = |len: usize, r: f64| {
            let mut c = OcpConfig::scaled_identity(len, r, self.max_iters, self.gamma);
            c.mode = self.ocp_mode;
            c.hessian_refresh = self.hessian_refresh;
            c
        };
        let fit = match solver {
            SolverKind::Ocp => FitSolver::Ocp {
                critic: ocp(bases.critic.len(), self.rd_critic),
                actor: ocp(bases.actor.len(), self.rd_actor),
            },
            SolverKind::Gd => FitSolver::GradientDescent {
                lr: self.lr,
                tol: self.gamma,
                max_iters: self.gd_max_iters,
            },
        };
        let cfg = LpcConfig {
            horizon: self.horizon,
            solver: fit,
            warm_start: self.warm_start,
            init_range: self.init_range,
            actor_objective: self.actor_objective,
            divergence_bound: self.divergence_bound,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
