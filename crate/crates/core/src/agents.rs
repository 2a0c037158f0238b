//! Per-agent state machines for the decentralized barycenter methods.
//!
//! Agents work in the transformed dual variables `lam_bar = sqrt(W) lam`, for
//! which every update needs only the agent's own gradient and the gradients
//! broadcast by its graph neighbors. Each round has two phases separated by a
//! barrier: `prepare_*` computes and returns the agent's outgoing message,
//! `absorb_*` consumes the neighbor inbox. The weighted sum
//! `sum_j W_ij g_j` is accumulated in increasing agent index.

use crate::apdsgd::Step;
use crate::dual::{EntropicDual, RegParam};
use crate::error::{Error, Result};
use crate::graph::Topology;
use crate::measures::{MeasureOracle, Point};
use crate::rng::rng_stream;

/// Default upper bound on the per-round batch size.
pub const DEFAULT_BATCH_CAP: usize = 10_000;

/// How agents estimate the gradient of their local conjugate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientMode {
    /// Mini-batch Monte Carlo estimate.
    Sampled,
    /// Exact finite sum; discrete measures only.
    Exact,
}

/// Which decentralized method to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Nonaccel,
    Accel,
}

/// Gradient broadcast by `sender` in `round`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMessage {
    pub sender: usize,
    pub round: usize,
    pub grad: Vec<f64>,
}

/// Read-only data shared by all agents during a run.
#[derive(Debug, Clone, Copy)]
pub struct AgentContext<'a> {
    pub dual: &'a EntropicDual,
    pub topology: &'a Topology,
    pub seed: u64,
    pub mode: GradientMode,
}

/// Parameters of the accelerated method.
#[derive(Debug, Clone, PartialEq)]
pub struct RunParams {
    pub gamma: RegParam,
    /// Target accuracy.
    pub epsilon: f64,
    /// `lambda_max(W) / gamma`.
    pub lipschitz: f64,
    pub batch_cap: usize,
    pub fixed_batch: Option<usize>,
    /// Bound on the norm of the dual solution, used only to derive the round count.
    pub radius: Option<f64>,
}

impl RunParams {
    /// `lambda_max = 0` (a single agent) falls back to `L = 1 / gamma`.
    pub fn new(gamma: RegParam, epsilon: f64, lambda_max: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::param("epsilon", format!("must be positive, got {epsilon}")));
        }
        if !(lambda_max >= 0.0 && lambda_max.is_finite()) {
            return Err(Error::param("lambda_max", format!("must be nonnegative, got {lambda_max}")));
        }
        let lmax = if lambda_max > 0.0 { lambda_max } else { 1.0 };
        Ok(RunParams {
            gamma,
            epsilon,
            lipschitz: lmax / gamma.get(),
            batch_cap: DEFAULT_BATCH_CAP,
            fixed_batch: None,
            radius: None,
        })
    }
}

/// Round count `ceil(sqrt(32 lambda_max R^2 / (epsilon gamma)))` that guarantees accuracy `epsilon`.
pub fn rounds_from_radius(lambda_max: f64, radius: f64, epsilon: f64, gamma: f64) -> Result<usize> {
    for (name, v) in [("lambda_max", lambda_max), ("radius", radius), ("epsilon", epsilon), ("gamma", gamma)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::param(name, format!("must be positive, got {v}")));
        }
    }
    Ok((32.0 * lambda_max * radius * radius / (epsilon * gamma)).sqrt().ceil() as usize)
}

/// Batch size of one round and whether the cap bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchSize {
    pub size: usize,
    pub clamped: bool,
}

/// `M_{k+1} = max(1, ceil(m gamma C_{k+1} / (alpha_{k+1} epsilon)))`, capped at `cap`,
/// or `fixed` when given.
pub fn batch_size(step: &Step, m: usize, gamma: f64, epsilon: f64, cap: usize, fixed: Option<usize>) -> BatchSize {
    if let Some(f) = fixed {
        return BatchSize {
            size: f.max(1),
            clamped: false,
        };
    }
    let ratio = step.c_next / step.alpha;
    let raw = (ratio * (m as f64 * gamma / epsilon)).ceil();
    let raw = if raw.is_finite() { raw.max(1.0) } else { f64::MAX };
    let cap = cap.max(1);
    if raw > cap as f64 {
        log::debug!("round {}: batch size {raw} clamped to cap {cap}", step.index);
        BatchSize { size: cap, clamped: true }
    } else {
        BatchSize {
            size: raw as usize,
            clamped: false,
        }
    }
}

/// One agent's local variables.
#[derive(Debug, Clone)]
pub struct AgentState {
    pub id: usize,
    pub measure: MeasureOracle,
    pub lam_bar: Vec<f64>,
    pub zeta_bar: Vec<f64>,
    pub eta_bar: Vec<f64>,
    pub p_hat: Vec<f64>,
    /// Gradient estimate broadcast in the current round.
    pub last_grad: Vec<f64>,
    /// Sample drawn in the current round of the non-accelerated method.
    pending_sample: Option<Point>,
    /// Number of completed rounds.
    pub round: usize,
}

impl AgentState {
    pub fn new(id: usize, measure: MeasureOracle, n: usize) -> Self {
        AgentState {
            id,
            measure,
            lam_bar: vec![0.0; n],
            zeta_bar: vec![0.0; n],
            eta_bar: vec![0.0; n],
            p_hat: vec![0.0; n],
            last_grad: vec![0.0; n],
            pending_sample: None,
            round: 0,
        }
    }

    fn check_inbox(&self, ctx: &AgentContext<'_>, inbox: &[&RoundMessage]) -> Result<()> {
        let neighbors = ctx.topology.neighbors(self.id)?;
        let violation = |reason: String| Error::Protocol { agent: self.id, reason };
        if inbox.len() != neighbors.len() {
            return Err(violation(format!(
                "expected {} neighbor messages, got {}",
                neighbors.len(),
                inbox.len()
            )));
        }
        for (msg, &j) in inbox.iter().zip(neighbors) {
            if msg.sender != j {
                return Err(violation(format!("message from {} where neighbor {j} was expected", msg.sender)));
            }
            if msg.round != self.round {
                return Err(violation(format!(
                    "message from {} is for round {}, current round is {}",
                    msg.sender, msg.round, self.round
                )));
            }
            if msg.grad.len() != self.lam_bar.len() {
                return Err(violation(format!("message from {} has wrong length {}", msg.sender, msg.grad.len())));
            }
        }
        Ok(())
    }

    /// `sum_j W_ij g_j` over this agent and its neighbors, in increasing index.
    fn laplacian_combination(&self, ctx: &AgentContext<'_>, inbox: &[&RoundMessage]) -> Vec<f64> {
        let n = self.lam_bar.len();
        let deg = ctx.topology.degree(self.id) as f64;
        let mut acc = vec![0.0; n];
        let mut own_done = false;
        let mut add = |w: f64, g: &[f64]| {
            for (a, v) in acc.iter_mut().zip(g) {
                *a += w * v;
            }
        };
        for msg in inbox {
            if !own_done && msg.sender > self.id {
                add(deg, &self.last_grad);
                own_done = true;
            }
            add(-1.0, &msg.grad);
        }
        if !own_done {
            add(deg, &self.last_grad);
        }
        acc
    }

    fn gradient(&self, ctx: &AgentContext<'_>, lam: &[f64], batch: usize, round: usize) -> Result<Vec<f64>> {
        match ctx.mode {
            GradientMode::Exact => ctx.dual.exact_grad(&self.measure, lam),
            GradientMode::Sampled => {
                let mut rng = rng_stream(ctx.seed, self.id, round as u64);
                ctx.dual.stochastic_grad(&self.measure, lam, batch, &mut rng)
            }
        }
    }

    fn message(&self) -> RoundMessage {
        RoundMessage {
            sender: self.id,
            round: self.round,
            grad: self.last_grad.clone(),
        }
    }

    /// Accelerated method, first phase: extrapolate and estimate the gradient at the new point.
    pub fn prepare_accel(&mut self, ctx: &AgentContext<'_>, step: &Step, batch: usize) -> Result<RoundMessage> {
        let (a, b) = (step.fresh_weight(), step.carry_weight());
        for ((l, z), e) in self.lam_bar.iter_mut().zip(&self.zeta_bar).zip(&self.eta_bar) {
            *l = a * z + b * e;
        }
        self.last_grad = self.gradient(ctx, &self.lam_bar, batch, self.round)?;
        Ok(self.message())
    }

    /// Accelerated method, second phase: dual step along the neighborhood combination,
    /// then the two running averages.
    pub fn absorb_accel(&mut self, ctx: &AgentContext<'_>, step: &Step, inbox: &[&RoundMessage]) -> Result<()> {
        self.check_inbox(ctx, inbox)?;
        let direction = self.laplacian_combination(ctx, inbox);
        for (z, d) in self.zeta_bar.iter_mut().zip(&direction) {
            *z -= step.alpha * d;
        }
        step.blend_into(&self.zeta_bar, &mut self.eta_bar);
        step.blend_into(&self.last_grad, &mut self.p_hat);
        self.round += 1;
        Ok(())
    }

    /// Non-accelerated method, first phase: one-sample gradient at the current point.
    pub fn prepare_nonaccel(&mut self, ctx: &AgentContext<'_>) -> Result<RoundMessage> {
        match ctx.mode {
            GradientMode::Exact => {
                self.last_grad = ctx.dual.exact_grad(&self.measure, &self.lam_bar)?;
                self.pending_sample = None;
            }
            GradientMode::Sampled => {
                let mut rng = rng_stream(ctx.seed, self.id, self.round as u64);
                let y = self.measure.sample(&mut rng);
                self.last_grad = ctx.dual.softmax_transport(&self.lam_bar, &y)?;
                self.pending_sample = Some(y);
            }
        }
        Ok(self.message())
    }

    /// Non-accelerated method, second phase: gradient step with `1 / L`, then adds
    /// `p(lam_bar_{k+1}, Y) / horizon` to the primal accumulator (same sample `Y`).
    pub fn absorb_nonaccel(
        &mut self,
        ctx: &AgentContext<'_>,
        lipschitz: f64,
        horizon: usize,
        inbox: &[&RoundMessage],
    ) -> Result<()> {
        self.check_inbox(ctx, inbox)?;
        let direction = self.laplacian_combination(ctx, inbox);
        let inv_l = 1.0 / lipschitz;
        for (l, d) in self.lam_bar.iter_mut().zip(&direction) {
            *l -= inv_l * d;
        }
        let p = match (ctx.mode, self.pending_sample.take()) {
            (GradientMode::Sampled, Some(y)) => ctx.dual.softmax_transport(&self.lam_bar, &y)?,
            (GradientMode::Sampled, None) => {
                return Err(Error::Protocol {
                    agent: self.id,
                    reason: "absorb without a prepared sample".into(),
                })
            }
            (GradientMode::Exact, _) => ctx.dual.exact_grad(&self.measure, &self.lam_bar)?,
        };
        let inv_n = 1.0 / horizon.max(1) as f64;
        for (ph, v) in self.p_hat.iter_mut().zip(&p) {
            *ph += inv_n * v;
        }
        self.round += 1;
        Ok(())
    }
}

/// Neighbor messages for agent `i`, in increasing sender index.
pub fn deliver<'a>(topology: &Topology, messages: &'a [RoundMessage], i: usize) -> Result<Vec<&'a RoundMessage>> {
    topology
        .neighbors(i)?
        .iter()
        .map(|&j| {
            messages
                .get(j)
                .filter(|m| m.sender == j)
                .ok_or_else(|| Error::Protocol {
                    agent: i,
                    reason: format!("no message from neighbor {j}"),
                })
        })
        .collect()
}

use crate::exec::{try_map_mut, Execution};

/// One bulk-synchronous round of the accelerated method for all agents.
pub fn accel_round(
    agents: &mut [AgentState],
    ctx: &AgentContext<'_>,
    step: &Step,
    batch: usize,
    exec: Execution,
) -> Result<Vec<RoundMessage>> {
    let messages = try_map_mut(exec, agents, |_, a| a.prepare_accel(ctx, step, batch))?;
    try_map_mut(exec, agents, |i, a| {
        let inbox = deliver(ctx.topology, &messages, i)?;
        a.absorb_accel(ctx, step, &inbox)
    })?;
    Ok(messages)
}

/// One bulk-synchronous round of the non-accelerated method for all agents.
pub fn nonaccel_round(
    agents: &mut [AgentState],
    ctx: &AgentContext<'_>,
    lipschitz: f64,
    horizon: usize,
    exec: Execution,
) -> Result<Vec<RoundMessage>> {
    let messages = try_map_mut(exec, agents, |_, a| a.prepare_nonaccel(ctx))?;
    try_map_mut(exec, agents, |i, a| {
        let inbox = deliver(ctx.topology, &messages, i)?;
        a.absorb_nonaccel(ctx, lipschitz, horizon, &inbox)
    })?;
    Ok(messages)
}
