//! Receding-horizon actor-critic fitting over a FIFO transition pool.
//!
//! At every time step the horizon is solved backwards: stage `N_p - 1`
//! regresses the critic onto stage cost plus terminal cost, every earlier
//! stage onto stage cost plus the successor critic evaluated at the
//! successor actor's input. Each critic fit is followed by an actor fit that
//! drives the stage Q-value down. Only the first stage's actor is applied.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::baselines::gd_minimize;
use crate::error::{LpcError, Result};
use crate::features::BasisSpec;
use crate::ocp::{ocp_minimize, LossOracle, OcpConfig, OcpTrace};
use crate::plants::PlantModel;

/// One observed transition.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPoint {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub x_next: Vec<f64>,
}

/// Bounded FIFO of transitions; pushing into a full pool evicts the oldest.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPool {
    capacity: usize,
    points: VecDeque<DataPoint>,
}

impl DataPool {
    pub fn new(capacity: usize) -> Self {
        DataPool {
            capacity,
            points: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Returns the evicted point, if any.
    pub fn push(&mut self, point: DataPoint) -> Option<DataPoint> {
        if self.capacity == 0 {
            return Some(point);
        }
        let evicted = if self.points.len() == self.capacity {
            self.points.pop_front()
        } else {
            None
        };
        self.points.push_back(point);
        evicted
    }

    /// Oldest first.
    pub fn iter(&self) -> impl ExactSizeIterator<Item = &DataPoint> {
        self.points.iter()
    }
}

/// Quadratic stage and terminal costs.
///
/// With an `error_map` `E`, costs are taken on `e = E x` instead of `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub error_map: Option<DMatrix<f64>>,
}

impl CostSpec {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>, s: DMatrix<f64>) -> Self {
        CostSpec {
            q,
            r,
            s,
            error_map: None,
        }
    }

    /// Tracking cost on `e = (x1 - r1, x2 - r2)` of the augmented state.
    pub fn tracking(q: DMatrix<f64>, r: DMatrix<f64>, s: DMatrix<f64>) -> Self {
        let e = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]);
        CostSpec {
            q,
            r,
            s,
            error_map: Some(e),
        }
    }

    /// Checks symmetry and definiteness: `Q`, `S` PSD and `R` PD.
    pub fn validate(&self) -> Result<()> {
        for (name, m, strict) in [
            ("q", &self.q, false),
            ("r", &self.r, true),
            ("s", &self.s, false),
        ] {
            if !m.is_square() || (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
                return Err(LpcError::config(name, "must be a symmetric matrix"));
            }
            let min = m.clone().symmetric_eigenvalues().min();
            if (strict && !(min > 0.0)) || (!strict && !(min >= -1e-12)) {
                let what = if strict {
                    "positive definite"
                } else {
                    "positive semidefinite"
                };
                return Err(LpcError::config(name, format!("must be {what}")));
            }
        }
        if self.s.shape() != self.q.shape() {
            return Err(LpcError::dim(
                "terminal weight",
                self.q.nrows(),
                self.s.nrows(),
            ));
        }
        Ok(())
    }

    fn mapped(&self, x: &[f64]) -> Result<DVector<f64>> {
        let x = DVector::from_column_slice(x);
        let e = match &self.error_map {
            Some(map) => {
                if map.ncols() != x.len() {
                    return Err(LpcError::dim("error map", map.ncols(), x.len()));
                }
                map * x
            }
            None => x,
        };
        if e.len() != self.q.nrows() {
            return Err(LpcError::dim("state cost", self.q.nrows(), e.len()));
        }
        Ok(e)
    }

    /// `U(x, u) = e'Q e + u'R u`.
    pub fn stage_cost(&self, x: &[f64], u: &[f64]) -> Result<f64> {
        let e = self.mapped(x)?;
        if u.len() != self.r.nrows() {
            return Err(LpcError::dim("input cost", self.r.nrows(), u.len()));
        }
        let u = DVector::from_column_slice(u);
        Ok(e.dot(&(&self.q * &e)) + u.dot(&(&self.r * &u)))
    }

    /// `P(x) = e'S e`.
    pub fn terminal_cost(&self, x: &[f64]) -> Result<f64> {
        let e = self.mapped(x)?;
        Ok(e.dot(&(&self.s * &e)))
    }
}

/// Critic and actor feature maps.
#[derive(Debug, Clone, PartialEq)]
pub struct Bases {
    pub critic: BasisSpec,
    pub actor: BasisSpec,
}

impl Bases {
    /// Actor output for a scalar input.
    pub fn policy(&self, actor_w: &DVector<f64>, x: &[f64]) -> Result<f64> {
        Ok(actor_w.dot(&self.actor.eval_state(x)?))
    }

    /// `W_c . phi(x, W_a . theta(x))`.
    pub fn q_at_policy(
        &self,
        critic_w: &DVector<f64>,
        actor_w: &DVector<f64>,
        x: &[f64],
    ) -> Result<f64> {
        let u = self.policy(actor_w, x)?;
        Ok(critic_w.dot(&self.critic.eval(x, &[u])?))
    }
}

/// Per-stage critic and actor weights, indexed by stage `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonWeights {
    pub critic: Vec<DVector<f64>>,
    pub actor: Vec<DVector<f64>>,
}

impl HorizonWeights {
    pub fn horizon(&self) -> usize {
        self.critic.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WarmStart {
    /// Start each stage from the previous time step's weights for that stage.
    #[default]
    PerStage,
    /// Draw fresh random last-stage weights at every time step.
    RerandomizeEachStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ActorObjective {
    /// Minimize the mean squared Q-value.
    #[default]
    QSquared,
    /// Minimize the mean Q-value.
    QMean,
}

/// Optimizer used for every critic/actor fit.
#[derive(Debug, Clone, PartialEq)]
pub enum FitSolver {
    Ocp { critic: OcpConfig, actor: OcpConfig },
    GradientDescent { lr: f64, tol: f64, max_iters: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpcConfig {
    pub horizon: usize,
    pub solver: FitSolver,
    pub warm_start: WarmStart,
    /// Interval for random initial weights.
    pub init_range: (f64, f64),
    pub actor_objective: ActorObjective,
    /// Closed-loop runs abort once `|x|_inf` exceeds this.
    pub divergence_bound: f64,
}

impl LpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(LpcError::config("horizon", "must be >= 1"));
        }
        let (lo, hi) = self.init_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(LpcError::config("init_range", "must be a finite interval"));
        }
        match &self.solver {
            FitSolver::Ocp { critic, actor } => {
                critic
                    .validate()
                    .map_err(|e| LpcError::config("rd_critic", e.to_string()))?;
                actor
                    .validate()
                    .map_err(|e| LpcError::config("rd_actor", e.to_string()))?;
            }
            FitSolver::GradientDescent { lr, tol, max_iters } => {
                if !(*lr > 0.0) {
                    return Err(LpcError::config("lr", "must be > 0"));
                }
                if !(*tol > 0.0) || *max_iters == 0 {
                    return Err(LpcError::config(
                        "gamma",
                        "tolerance and iteration cap must be positive",
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Network {
    Critic,
    Actor,
}

impl Network {
    pub fn as_str(self) -> &'static str {
        match self {
            Network::Critic => "critic",
            Network::Actor => "actor",
        }
    }
}

/// Outcome of one critic or actor fit.
#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    pub weights: DVector<f64>,
    pub iterations: usize,
    pub final_loss: f64,
    /// Present for the OCP solver.
    pub trace: Option<OcpTrace>,
}

/// Pool-averaged squared critic residual.
#[derive(Debug, Clone)]
pub struct CriticLoss {
    features: DMatrix<f64>,
    targets: DVector<f64>,
    hessian: DMatrix<f64>,
}

impl CriticLoss {
    pub fn new(pool: &DataPool, targets: &[f64], basis: &BasisSpec) -> Result<Self> {
        if pool.is_empty() {
            return Err(LpcError::PoolEmpty);
        }
        if targets.len() != pool.len() {
            return Err(LpcError::dim("critic targets", pool.len(), targets.len()));
        }
        let rows = pool
            .iter()
            .map(|dp| basis.eval(&dp.x, &dp.u).map(|phi| phi.transpose()))
            .collect::<Result<Vec<_>>>()?;
        let features = DMatrix::from_rows(&rows);
        let hessian = features.transpose() * &features * (2.0 / pool.len() as f64);
        Ok(CriticLoss {
            features,
            targets: DVector::from_column_slice(targets),
            hessian,
        })
    }

    fn residual(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.features * w - &self.targets
    }
}

impl LossOracle for CriticLoss {
    fn dim(&self) -> usize {
        self.features.ncols()
    }
    fn value(&self, w: &DVector<f64>) -> f64 {
        self.residual(w).norm_squared() / self.targets.len() as f64
    }
    fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        self.features.transpose() * self.residual(w) * (2.0 / self.targets.len() as f64)
    }
    fn hessian(&self, _w: &DVector<f64>) -> DMatrix<f64> {
        self.hessian.clone()
    }
}

/// Pool-averaged actor objective for a fixed critic.
#[derive(Debug, Clone)]
pub struct ActorLoss<'a> {
    bases: &'a Bases,
    critic_w: &'a DVector<f64>,
    states: Vec<&'a [f64]>,
    theta: Vec<DVector<f64>>,
    objective: ActorObjective,
}

struct ActorSample {
    q: f64,
    q_u: f64,
    q_uu: f64,
}

impl<'a> ActorLoss<'a> {
    pub fn new(
        pool: &'a DataPool,
        bases: &'a Bases,
        critic_w: &'a DVector<f64>,
        objective: ActorObjective,
    ) -> Result<Self> {
        if pool.is_empty() {
            return Err(LpcError::PoolEmpty);
        }
        if bases.critic.input_dim() != 1 {
            return Err(LpcError::dim("actor input", 1, bases.critic.input_dim()));
        }
        if critic_w.len() != bases.critic.len() {
            return Err(LpcError::dim(
                "critic weights",
                bases.critic.len(),
                critic_w.len(),
            ));
        }
        let states: Vec<&[f64]> = pool.iter().map(|dp| dp.x.as_slice()).collect();
        let theta = states
            .iter()
            .map(|x| bases.actor.eval_state(x))
            .collect::<Result<Vec<_>>>()?;
        Ok(ActorLoss {
            bases,
            critic_w,
            states,
            theta,
            objective,
        })
    }

    fn sample(&self, idx: usize, w: &DVector<f64>, order: u32) -> ActorSample {
        let x = self.states[idx];
        let u = w.dot(&self.theta[idx]);
        let critic = &self.bases.critic;
        // dimensions were checked at construction
        let q = self.critic_w.dot(&critic.eval(x, &[u]).expect("checked"));
        let q_u = if order >= 1 {
            self.critic_w.dot(&critic.grad_u(x, u).expect("checked"))
        } else {
            0.0
        };
        let q_uu = if order >= 2 {
            self.critic_w.dot(&critic.hess_u(x, u).expect("checked"))
        } else {
            0.0
        };
        ActorSample { q, q_u, q_uu }
    }
}

impl LossOracle for ActorLoss<'_> {
    fn dim(&self) -> usize {
        self.bases.actor.len()
    }

    fn value(&self, w: &DVector<f64>) -> f64 {
        let n = self.states.len() as f64;
        (0..self.states.len())
            .map(|i| {
                let s = self.sample(i, w, 0);
                match self.objective {
                    ActorObjective::QSquared => s.q * s.q,
                    ActorObjective::QMean => s.q,
                }
            })
            .sum::<f64>()
            / n
    }

    fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        let n = self.states.len() as f64;
        let mut g = DVector::zeros(self.dim());
        for (i, theta) in self.theta.iter().enumerate() {
            let s = self.sample(i, w, 1);
            let coef = match self.objective {
                ActorObjective::QSquared => 2.0 * s.q * s.q_u,
                ActorObjective::QMean => s.q_u,
            };
            g.axpy(coef / n, theta, 1.0);
        }
        g
    }

    fn hessian(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let n = self.states.len() as f64;
        let mut h = DMatrix::zeros(self.dim(), self.dim());
        for (i, theta) in self.theta.iter().enumerate() {
            let s = self.sample(i, w, 2);
            let coef = match self.objective {
                ActorObjective::QSquared => 2.0 * (s.q_u * s.q_u + s.q * s.q_uu),
                ActorObjective::QMean => s.q_uu,
            };
            h.ger(coef / n, theta, theta, 1.0);
        }
        h
    }
}

fn run_solver<L: LossOracle>(
    loss: &L,
    w0: &DVector<f64>,
    solver: &FitSolver,
    network: Network,
) -> Result<Fit> {
    match solver {
        FitSolver::Ocp { critic, actor } => {
            let cfg = match network {
                Network::Critic => critic,
                Network::Actor => actor,
            };
            let (weights, trace) = ocp_minimize(loss, w0, cfg)?;
            Ok(Fit {
                weights,
                iterations: trace.iterations(),
                final_loss: trace.final_loss(),
                trace: Some(trace),
            })
        }
        FitSolver::GradientDescent { lr, tol, max_iters } => {
            let res = gd_minimize(loss, w0, *lr, *tol, *max_iters)?;
            Ok(Fit {
                weights: res.w,
                iterations: res.iterations,
                final_loss: res.final_loss,
                trace: None,
            })
        }
    }
}

/// Regression target for stage `j` of an `horizon`-stage problem.
///
/// The last stage uses `U + P(x')`; earlier stages use
/// `U + W_c^{j+1} . phi(x', W_a^{j+1} . theta(x'))`.
pub fn critic_target(
    j: usize,
    horizon: usize,
    dp: &DataPoint,
    cost: &CostSpec,
    successor: Option<(&DVector<f64>, &DVector<f64>)>,
    bases: &Bases,
) -> Result<f64> {
    if j >= horizon {
        return Err(LpcError::InvalidArgument(format!(
            "stage {j} outside horizon {horizon}"
        )));
    }
    let stage = cost.stage_cost(&dp.x, &dp.u)?;
    if j + 1 == horizon {
        return Ok(stage + cost.terminal_cost(&dp.x_next)?);
    }
    let (critic_next, actor_next) = successor.ok_or(LpcError::MissingSuccessorWeights(j))?;
    Ok(stage + bases.q_at_policy(critic_next, actor_next, &dp.x_next)?)
}

/// Fits stage critic weights to `targets` by minimizing the mean squared residual.
pub fn fit_critic(
    pool: &DataPool,
    targets: &[f64],
    w0: &DVector<f64>,
    solver: &FitSolver,
    bases: &Bases,
) -> Result<Fit> {
    let loss = CriticLoss::new(pool, targets, &bases.critic)?;
    if w0.len() != loss.dim() {
        return Err(LpcError::dim("critic start", loss.dim(), w0.len()));
    }
    run_solver(&loss, w0, solver, Network::Critic)
}

/// Fits stage actor weights against a fixed stage critic.
pub fn fit_actor(
    pool: &DataPool,
    critic_w: &DVector<f64>,
    w0: &DVector<f64>,
    solver: &FitSolver,
    objective: ActorObjective,
    bases: &Bases,
) -> Result<Fit> {
    let loss = ActorLoss::new(pool, bases, critic_w, objective)?;
    if w0.len() != loss.dim() {
        return Err(LpcError::dim("actor start", loss.dim(), w0.len()));
    }
    run_solver(&loss, w0, solver, Network::Actor)
}

/// Iteration bookkeeping for one fit within a horizon solve.
#[derive(Debug, Clone, PartialEq)]
pub struct FitLog {
    pub stage: usize,
    pub network: Network,
    pub iterations: usize,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorizonSolution {
    pub weights: HorizonWeights,
    pub u: f64,
    pub fits: Vec<FitLog>,
}

impl HorizonSolution {
    pub fn total_iterations(&self) -> usize {
        self.fits.iter().map(|f| f.iterations).sum()
    }
}

fn random_weights<R: Rng>(len: usize, range: (f64, f64), rng: &mut R) -> DVector<f64> {
    DVector::from_fn(len, |_, _| {
        if range.0 == range.1 {
            range.0
        } else {
            rng.gen_range(range.0..range.1)
        }
    })
}

/// Solves the horizon backwards from stage `N_p - 1` to `0` and returns the
/// first-stage input at `x_k`.
///
/// With `prev`, every stage starts from the matching stage of `prev`;
/// otherwise the last stage starts from random weights and each earlier
/// stage from its successor's result.
pub fn solve_horizon<R: Rng>(
    x_k: &[f64],
    pool: &DataPool,
    cost: &CostSpec,
    bases: &Bases,
    cfg: &LpcConfig,
    prev: Option<&HorizonWeights>,
    rng: &mut R,
) -> Result<HorizonSolution> {
    if pool.is_empty() {
        return Err(LpcError::PoolEmpty);
    }
    let np = cfg.horizon;
    if let Some(p) = prev {
        if p.horizon() != np {
            return Err(LpcError::dim("previous horizon weights", np, p.horizon()));
        }
    }
    let mut critic: Vec<DVector<f64>> = vec![DVector::zeros(0); np];
    let mut actor: Vec<DVector<f64>> = vec![DVector::zeros(0); np];
    let mut fits = Vec::with_capacity(2 * np);

    for j in (0..np).rev() {
        let (c0, a0) = match prev {
            Some(p) => (p.critic[j].clone(), p.actor[j].clone()),
            None if j + 1 == np => (
                random_weights(bases.critic.len(), cfg.init_range, rng),
                random_weights(bases.actor.len(), cfg.init_range, rng),
            ),
            None => (critic[j + 1].clone(), actor[j + 1].clone()),
        };
        let successor = (j + 1 < np).then(|| (&critic[j + 1], &actor[j + 1]));
        let targets = pool
            .iter()
            .map(|dp| critic_target(j, np, dp, cost, successor, bases))
            .collect::<Result<Vec<_>>>()?;

        let cfit = fit_critic(pool, &targets, &c0, &cfg.solver, bases)?;
        fits.push(FitLog {
            stage: j,
            network: Network::Critic,
            iterations: cfit.iterations,
            final_loss: cfit.final_loss,
        });
        critic[j] = cfit.weights;

        let afit = fit_actor(
            pool,
            &critic[j],
            &a0,
            &cfg.solver,
            cfg.actor_objective,
            bases,
        )?;
        fits.push(FitLog {
            stage: j,
            network: Network::Actor,
            iterations: afit.iterations,
            final_loss: afit.final_loss,
        });
        actor[j] = afit.weights;
    }

    let u = bases.policy(&actor[0], x_k)?;
    if !u.is_finite() {
        return Err(LpcError::NonFinite("controller output".into()));
    }
    Ok(HorizonSolution {
        weights: HorizonWeights { critic, actor },
        u,
        fits,
    })
}

/// Axis-aligned sampling box, one interval per coordinate.
pub type SampleBox = Vec<(f64, f64)>;

fn sample_box<R: Rng>(b: &[(f64, f64)], rng: &mut R) -> Vec<f64> {
    b.iter()
        .map(|&(lo, hi)| if lo == hi { lo } else { rng.gen_range(lo..hi) })
        .collect()
}

/// Offline pool of `count` one-step transitions from uniformly sampled
/// states and inputs. The pool's capacity equals `count`.
pub fn seed_pool<R: Rng>(
    plant: &PlantModel,
    count: usize,
    state_box: &[(f64, f64)],
    input_box: &[(f64, f64)],
    rng: &mut R,
) -> Result<DataPool> {
    if state_box.len() != plant.state_dim() {
        return Err(LpcError::dim(
            "state sampling box",
            plant.state_dim(),
            state_box.len(),
        ));
    }
    if input_box.len() != plant.input_dim() {
        return Err(LpcError::dim(
            "input sampling box",
            plant.input_dim(),
            input_box.len(),
        ));
    }
    if state_box
        .iter()
        .chain(input_box)
        .any(|&(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo <= hi))
    {
        return Err(LpcError::InvalidArgument(
            "sampling box must be finite intervals".into(),
        ));
    }
    let mut pool = DataPool::new(count);
    for _ in 0..count {
        let x = sample_box(state_box, rng);
        let u = sample_box(input_box, rng);
        let x_next = plant.step(&x, &u, 0)?;
        pool.push(DataPoint { x, u, x_next });
    }
    Ok(pool)
}

/// Fit bookkeeping tagged with its time step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFitLog {
    pub k: usize,
    pub fit: FitLog,
}

/// Everything recorded by a closed-loop run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    /// `N + 1` states.
    pub states: Vec<Vec<f64>>,
    /// `N` inputs.
    pub inputs: Vec<f64>,
    pub stage_costs: Vec<f64>,
    pub total_cost: f64,
    pub fits: Vec<StepFitLog>,
    /// Horizon weights solved at each step.
    pub weights: Vec<HorizonWeights>,
}

impl RunLog {
    /// Sum of fit iterations per time step.
    pub fn horizon_iterations(&self) -> Vec<usize> {
        let mut out = vec![0; self.inputs.len()];
        for f in &self.fits {
            out[f.k] += f.fit.iterations;
        }
        out
    }
}

fn check_bound(x: &[f64], bound: f64, k: usize) -> Result<()> {
    let norm = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !norm.is_finite() || norm > bound {
        return Err(LpcError::NonFinite(format!(
            "closed-loop state left the divergence bound {bound:e} at step {k}"
        )));
    }
    Ok(())
}

/// Simulates `plant` under an arbitrary state-feedback `policy`.
pub fn closed_loop<F>(
    plant: &PlantModel,
    x0: &[f64],
    steps: usize,
    divergence_bound: f64,
    mut policy: F,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)>
where
    F: FnMut(usize, &[f64]) -> Result<f64>,
{
    let mut states = vec![x0.to_vec()];
    let mut inputs = Vec::with_capacity(steps);
    for k in 0..steps {
        let x = &states[k];
        let u = policy(k, x)?;
        let next = plant.step(x, &[u], k)?;
        check_bound(&next, divergence_bound, k + 1)?;
        inputs.push(u);
        states.push(next);
    }
    Ok((states, inputs))
}

/// Online receding-horizon loop: solve, apply the first input, record the
/// transition in the pool (evicting the oldest), repeat.
#[allow(clippy::too_many_arguments)]
pub fn lpc_run<R: Rng>(
    plant: &PlantModel,
    cost: &CostSpec,
    bases: &Bases,
    cfg: &LpcConfig,
    x0: &[f64],
    steps: usize,
    mut pool: DataPool,
    rng: &mut R,
) -> Result<RunLog> {
    cfg.validate()?;
    if pool.is_empty() {
        return Err(LpcError::PoolEmpty);
    }
    if steps == 0 {
        return Err(LpcError::InvalidArgument(
            "number of steps must be >= 1".into(),
        ));
    }
    if x0.len() != plant.state_dim() {
        return Err(LpcError::dim("initial state", plant.state_dim(), x0.len()));
    }
    let mut log = RunLog {
        states: vec![x0.to_vec()],
        inputs: Vec::with_capacity(steps),
        stage_costs: Vec::with_capacity(steps),
        total_cost: 0.0,
        fits: Vec::new(),
        weights: Vec::with_capacity(steps),
    };
    let mut prev: Option<HorizonWeights> = None;
    for k in 0..steps {
        let x = log.states[k].clone();
        let warm = match cfg.warm_start {
            WarmStart::PerStage => prev.as_ref(),
            WarmStart::RerandomizeEachStep => None,
        };
        let sol = solve_horizon(&x, &pool, cost, bases, cfg, warm, rng)?;
        let u = sol.u;
        let next = plant.step(&x, &[u], k)?;
        check_bound(&next, cfg.divergence_bound, k + 1)?;

        let stage = cost.stage_cost(&x, &[u])?;
        log.total_cost += stage;
        log.stage_costs.push(stage);
        log.inputs.push(u);
        log.fits
            .extend(sol.fits.into_iter().map(|fit| StepFitLog { k, fit }));
        pool.push(DataPoint {
            x,
            u: vec![u],
            x_next: next.clone(),
        });
        log.states.push(next);
        log.weights.push(sol.weights.clone());
        prev = Some(sol.weights);
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{build_basis, BasisKind, BasisRule};
    use crate::ocp::OcpConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bases(critic: &str, actor: &str) -> Bases {
        Bases {
            critic: build_basis(&BasisRule::parse(critic).unwrap(), 2, 1, BasisKind::Critic)
                .unwrap(),
            actor: build_basis(&BasisRule::parse(actor).unwrap(), 2, 1, BasisKind::Actor).unwrap(),
        }
    }

    fn scaled(v: f64, n: usize) -> DMatrix<f64> {
        DMatrix::identity(n, n) * v
    }

    fn cost() -> CostSpec {
        CostSpec::new(scaled(5.0, 2), scaled(1.0, 1), scaled(5.0, 2))
    }

    fn ocp(dim_c: usize, dim_a: usize) -> FitSolver {
        FitSolver::Ocp {
            critic: OcpConfig::scaled_identity(dim_c, 0.1, 100, 1e-10),
            actor: OcpConfig::scaled_identity(dim_a, 0.1, 100, 1e-10),
        }
    }

    fn lpc_cfg(horizon: usize) -> LpcConfig {
        LpcConfig {
            horizon,
            solver: ocp(6, 2),
            warm_start: WarmStart::PerStage,
            init_range: (-1.0, 1.0),
            actor_objective: ActorObjective::QSquared,
            divergence_bound: 1e6,
        }
    }

    fn point(x: [f64; 2], u: f64, x_next: [f64; 2]) -> DataPoint {
        DataPoint {
            x: x.to_vec(),
            u: vec![u],
            x_next: x_next.to_vec(),
        }
    }

    fn pool_of(points: Vec<DataPoint>) -> DataPool {
        let mut pool = DataPool::new(points.len());
        for p in points {
            pool.push(p);
        }
        pool
    }

    fn linear_pool(count: usize, seed: u64) -> DataPool {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        seed_pool(
            &PlantModel::benchmark_linear(),
            count,
            &[(-1.0, 1.0), (-1.0, 1.0)],
            &[(-1.0, 1.0)],
            &mut rng,
        )
        .unwrap()
    }

    #[test]
    fn stage_and_terminal_cost() {
        let c = cost();
        assert_eq!(c.stage_cost(&[1.0, -0.5], &[0.0]).unwrap(), 6.25);
        assert_eq!(c.stage_cost(&[0.0, 0.0], &[0.0]).unwrap(), 0.0);
        assert_eq!(c.terminal_cost(&[1.0, 0.0]).unwrap(), 5.0);
        assert!(matches!(
            c.stage_cost(&[1.0], &[0.0]),
            Err(LpcError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn last_stage_target() {
        let b = bases("lq6", "lin2");
        let dp = point([1.0, -0.5], 0.0, [-0.4, 1.075]);
        let t = critic_target(9, 10, &dp, &cost(), None, &b).unwrap();
        assert!((t - 12.828125).abs() < 1e-12);
    }

    #[test]
    fn earlier_stage_targets() {
        let b = bases("lq6", "lin2");
        let dp = point([1.0, -0.5], 0.0, [-0.4, 1.075]);
        let zc = DVector::zeros(6);
        let za = DVector::from_vec(vec![0.3, -0.2]);
        let t = critic_target(3, 10, &dp, &cost(), Some((&zc, &za)), &b).unwrap();
        assert_eq!(t, 6.25);
        let origin = point([0.0, 0.0], 0.0, [0.0, 0.0]);
        assert_eq!(
            critic_target(0, 10, &origin, &cost(), Some((&zc, &za)), &b).unwrap(),
            0.0
        );
        assert!(matches!(
            critic_target(0, 10, &dp, &cost(), None, &b),
            Err(LpcError::MissingSuccessorWeights(0))
        ));
        assert!(critic_target(10, 10, &dp, &cost(), None, &b).is_err());
    }

    #[test]
    fn critic_recovers_exact_weights() {
        let b = bases("lq6", "lin2");
        let pool = linear_pool(30, 3);
        let w_true = DVector::from_vec(vec![2.0, -1.0, 0.5, 3.0, -0.7, 1.5]);
        let targets: Vec<f64> = pool
            .iter()
            .map(|dp| w_true.dot(&b.critic.eval(&dp.x, &dp.u).unwrap()))
            .collect();
        let solver = FitSolver::Ocp {
            critic: OcpConfig::scaled_identity(6, 0.1, 5000, 1e-12),
            actor: OcpConfig::scaled_identity(2, 0.1, 100, 1e-10),
        };
        let fit = fit_critic(&pool, &targets, &DVector::zeros(6), &solver, &b).unwrap();
        assert!((&fit.weights - &w_true).amax() < 1e-6, "{}", fit.weights);
    }

    #[test]
    fn critic_trivial_fits() {
        let b = bases("lq6", "lin2");
        let pool = linear_pool(8, 1);
        let fit = fit_critic(&pool, &[0.0; 8], &DVector::zeros(6), &ocp(6, 2), &b).unwrap();
        assert_eq!(fit.weights, DVector::zeros(6));
        assert_eq!(fit.final_loss, 0.0);

        let single = pool_of(vec![point([0.6, -0.3], 0.4, [0.0, 0.0])]);
        let fit = fit_critic(&single, &[2.5], &DVector::zeros(6), &ocp(6, 2), &b).unwrap();
        let pred = fit
            .weights
            .dot(&b.critic.eval(&[0.6, -0.3], &[0.4]).unwrap());
        assert!((pred - 2.5).abs() < 1e-6, "{pred}");

        assert!(matches!(
            fit_critic(&DataPool::new(4), &[], &DVector::zeros(6), &ocp(6, 2), &b),
            Err(LpcError::PoolEmpty)
        ));
    }

    #[test]
    fn actor_trivial_fits() {
        let b = bases("lq6", "lin2");
        let pool = linear_pool(10, 2);
        let mut u_sq = DVector::zeros(6);
        u_sq[5] = 1.0;
        let w0 = DVector::from_vec(vec![0.8, -0.4]);
        let fit = fit_actor(&pool, &u_sq, &w0, &ocp(6, 2), ActorObjective::QMean, &b).unwrap();
        assert!(fit.weights.amax() < 1e-6, "{}", fit.weights);
        // mean u^4 is flat at the minimum, so only sublinear progress
        let fit = fit_actor(&pool, &u_sq, &w0, &ocp(6, 2), ActorObjective::QSquared, &b).unwrap();
        assert!(fit.weights.amax() < 0.2 * w0.amax(), "{}", fit.weights);

        let zero = DVector::zeros(6);
        let fit = fit_actor(&pool, &zero, &w0, &ocp(6, 2), ActorObjective::QSquared, &b).unwrap();
        assert_eq!(fit.weights, w0);
        assert_eq!(fit.iterations, 0);
    }

    #[test]
    fn single_stage_horizon() {
        let b = bases("lq6", "lin2");
        let pool = linear_pool(30, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sol = solve_horizon(
            &[1.0, -0.5],
            &pool,
            &cost(),
            &b,
            &lpc_cfg(1),
            None,
            &mut rng,
        )
        .unwrap();
        assert_eq!(sol.fits.len(), 2);
        assert_eq!(sol.fits[0].network, Network::Critic);
        assert_eq!(sol.fits[1].network, Network::Actor);
        assert_eq!(sol.weights.horizon(), 1);

        let sol =
            solve_horizon(&[0.0, 0.0], &pool, &cost(), &b, &lpc_cfg(3), None, &mut rng).unwrap();
        assert_eq!(sol.u, 0.0);
        assert_eq!(sol.fits.len(), 6);
        assert_eq!(
            sol.fits.iter().map(|f| f.stage).collect::<Vec<_>>(),
            [2, 2, 1, 1, 0, 0]
        );
    }

    #[test]
    fn pool_is_fifo() {
        let mut pool = DataPool::new(3);
        for i in 0..5 {
            let evicted = pool.push(point([i as f64, 0.0], 0.0, [0.0, 0.0]));
            assert_eq!(evicted.map(|p| p.x[0]), (i >= 3).then(|| (i - 3) as f64));
        }
        let xs: Vec<f64> = pool.iter().map(|p| p.x[0]).collect();
        assert_eq!(xs, [2.0, 3.0, 4.0]);
        let mut none = DataPool::new(0);
        assert!(none.push(point([1.0, 0.0], 0.0, [0.0, 0.0])).is_some());
        assert!(none.is_empty());
    }

    #[test]
    fn seeded_pool_is_deterministic() {
        assert_eq!(linear_pool(30, 9), linear_pool(30, 9));
        assert_ne!(linear_pool(30, 9), linear_pool(30, 10));
        assert_eq!(linear_pool(30, 9).len(), 30);
        assert!(linear_pool(0, 9).is_empty());
        let p = linear_pool(5, 9);
        let plant = PlantModel::benchmark_linear();
        for dp in p.iter() {
            assert_eq!(plant.step(&dp.x, &dp.u, 0).unwrap(), dp.x_next);
        }
    }

    #[test]
    fn open_loop_linear_plant_diverges() {
        let plant = PlantModel::benchmark_linear();
        let err = closed_loop(&plant, &[1.0, -0.5], 200, 1e6, |_, _| Ok(0.0)).unwrap_err();
        assert!(matches!(err, LpcError::NonFinite(_)));
    }

    #[test]
    fn linear_run_regulates() {
        let b = bases("lq6", "lin2");
        let pool = linear_pool(30, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let plant = PlantModel::benchmark_linear();
        let log = lpc_run(
            &plant,
            &cost(),
            &b,
            &lpc_cfg(10),
            &[1.0, -0.5],
            30,
            pool,
            &mut rng,
        )
        .unwrap();
        assert_eq!(log.states.len(), 31);
        assert_eq!(log.inputs.len(), 30);
        assert_eq!(log.weights.len(), 30);
        assert_eq!(log.horizon_iterations().len(), 30);
        let last = &log.states[30];
        assert!(last.iter().all(|v| v.abs() <= 0.01), "{last:?}");
        let sum: f64 = log.stage_costs.iter().sum();
        assert!((sum - log.total_cost).abs() < 1e-9);
    }
}
