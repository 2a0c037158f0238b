//! Synchronous round engine: builds agents from a [`RunConfig`], advances the
//! schedule, routes messages and records metrics.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use crate::agents::{accel_round, batch_size, nonaccel_round, rounds_from_radius, AgentContext, AgentState, Algorithm, GradientMode, RunParams};
use crate::apdsgd::StepSchedule;
use crate::config::{GradientChoice, RunConfig, SupportConfig, EXACT_SIZE_GUARD};
use crate::dual::{EntropicDual, RegParam};
use crate::error::{Error, Result};
use crate::exec::{try_map, with_workers, Execution};
use crate::graph::{Laplacian, Topology};
use crate::imageio::write_pgm;
use crate::measures::MeasureOracle;
use crate::rng::{stream_for, Purpose};

pub const TRACE_HEADER: &str = "round,dual_value,consensus,batch,wall_ms";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub round: usize,
    /// `sum_i W*_i(lam_bar_i)`.
    pub dual_value: f64,
    /// `||sqrt(W) p_hat||_2`.
    pub consensus: f64,
    /// Samples per agent drawn in this round; 0 for exact gradients and for round 0.
    pub batch: usize,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
    /// Final `p_hat` of every agent.
    pub p_hat: Vec<Vec<f64>>,
    pub rounds: usize,
    pub lambda_max: f64,
    pub lipschitz: f64,
    pub mode: GradientMode,
    /// Every deviation from the configured parameters (batch clamping, size guard).
    pub notes: Vec<String>,
}

impl Trace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRACE_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{}", r.round, r.dual_value, r.consensus, r.batch, r.wall_ms);
        }
        out
    }

    /// Across-agent mean of the final `p_hat`.
    pub fn mean_p_hat(&self) -> Vec<f64> {
        let m = self.p_hat.len().max(1) as f64;
        let n = self.p_hat.first().map_or(0, Vec::len);
        (0..n).map(|l| self.p_hat.iter().map(|p| p[l]).sum::<f64>() / m).collect()
    }

    /// One row per agent, then the mean row.
    pub fn barycenter_csv(&self) -> String {
        let mut out = String::new();
        for p in self.p_hat.iter().chain(std::iter::once(&self.mean_p_hat())) {
            let line: Vec<String> = p.iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

/// Metrics of a state: dual value at each `lam_bar` and consensus of the stacked `p_hat`.
///
/// Discrete measures are evaluated exactly when `exact` holds, otherwise with
/// `eval_batch` samples from the agent's metrics stream for `round`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_metrics(
    dual: &EntropicDual,
    laplacian: &Laplacian,
    measures: &[&MeasureOracle],
    lam_bar: &[&[f64]],
    p_hat: &[&[f64]],
    exact: bool,
    seed: u64,
    round: usize,
    eval_batch: usize,
    exec: Execution,
) -> Result<(f64, f64)> {
    let values = try_map(exec, measures, |i, mu| {
        if exact && mu.as_discrete().is_some() {
            dual.exact_dual_value(mu, lam_bar[i])
        } else {
            let mut rng = stream_for(seed, Purpose::Metrics, i, round as u64);
            dual.sampled_dual_value(mu, lam_bar[i], eval_batch, &mut rng)
        }
    })?;
    let stacked: Vec<f64> = p_hat.iter().flat_map(|p| p.iter().copied()).collect();
    let consensus = laplacian.consensus_norm(&stacked, dual.n())?;
    Ok((values.iter().sum(), consensus))
}

/// A configured run that can be advanced one round at a time.
pub struct Simulation {
    dual: EntropicDual,
    topology: Topology,
    laplacian: Laplacian,
    agents: Vec<AgentState>,
    params: RunParams,
    algorithm: Algorithm,
    mode: GradientMode,
    exact_metrics: bool,
    schedule: StepSchedule,
    rounds: usize,
    seed: u64,
    eval_batch: usize,
    exec: Execution,
    lambda_max: f64,
    notes: Vec<String>,
    clamped_rounds: usize,
    first_clamp: Option<usize>,
}

impl Simulation {
    pub fn new(config: &RunConfig, exec: Execution) -> Result<Self> {
        config.validate()?;
        let grid = config.support.build()?;
        let cost = config.cost.build(&grid)?;
        let gamma = RegParam::new(config.solver.gamma).map_err(|_| {
            Error::param("solver.gamma", format!("must be positive, got {}", config.solver.gamma))
        })?;
        let dual = EntropicDual::new(grid, cost, gamma);
        let n = dual.n();
        let space = config.support.space();
        let measures = config
            .measures
            .iter()
            .map(|s| s.build(space))
            .collect::<Result<Vec<_>>>()?;
        if let SupportConfig::Grid2d { rows, cols } = config.support {
            for (i, (spec, mu)) in config.measures.iter().zip(&measures).enumerate() {
                if let (crate::config::MeasureSpec::Image { .. }, Some(d)) = (spec, mu.as_discrete()) {
                    let outside = d.atoms().iter().any(|a| {
                        let c = a.coords();
                        c[0] > rows as f64 || c[1] > cols as f64
                    });
                    if outside {
                        return Err(Error::param(format!("measures[{i}]"), format!("image larger than the {rows}x{cols} support")));
                    }
                }
            }
        }

        let topology = config.topology()?;
        let laplacian = topology.laplacian();
        let lambda_max = laplacian.lambda_max()?;
        let mut params = RunParams::new(gamma, config.solver.epsilon, lambda_max)?;
        params.batch_cap = config.solver.batch_cap;
        params.fixed_batch = config.solver.fixed_batch;
        params.radius = config.solver.radius;

        let mut notes = Vec::new();
        if lambda_max == 0.0 {
            notes.push(format!("single agent: using L = 1/gamma = {}", params.lipschitz));
        }
        let rounds = match (config.solver.rounds, config.solver.radius) {
            (Some(r), _) => r,
            (None, Some(radius)) => {
                if lambda_max == 0.0 {
                    return Err(Error::param("solver.radius", "deriving the round count needs at least two agents"));
                }
                rounds_from_radius(lambda_max, radius, config.solver.epsilon, gamma.get())?
            }
            (None, None) => unreachable!("validated"),
        };

        let all_discrete = measures.iter().all(|m| m.as_discrete().is_some());
        let largest = measures
            .iter()
            .filter_map(|m| m.as_discrete().map(|d| d.len().saturating_mul(n)))
            .max()
            .unwrap_or(0);
        let within_guard = largest <= EXACT_SIZE_GUARD;
        let mode = match config.solver.gradient {
            GradientChoice::Sampled => GradientMode::Sampled,
            GradientChoice::Exact => {
                if !within_guard {
                    notes.push(format!(
                        "exact gradients requested with n * atoms = {largest} above the size guard {EXACT_SIZE_GUARD}; rounds will be slow"
                    ));
                }
                GradientMode::Exact
            }
            GradientChoice::Auto if all_discrete && within_guard => GradientMode::Exact,
            GradientChoice::Auto => {
                if all_discrete {
                    notes.push(format!(
                        "n * atoms = {largest} exceeds the size guard {EXACT_SIZE_GUARD}: exact gradients and exact dual values disabled, using sampled batches"
                    ));
                }
                GradientMode::Sampled
            }
        };
        let exact_metrics = within_guard || mode == GradientMode::Exact;

        let agents = measures
            .into_iter()
            .enumerate()
            .map(|(i, mu)| AgentState::new(i, mu, n))
            .collect();
        let schedule = StepSchedule::new(params.lipschitz)?;
        Ok(Simulation {
            dual,
            topology,
            laplacian,
            agents,
            params,
            algorithm: config.solver.algorithm,
            mode,
            exact_metrics,
            schedule,
            rounds,
            seed: config.seed,
            eval_batch: config.solver.dual_eval_batch,
            exec,
            lambda_max,
            notes,
            clamped_rounds: 0,
            first_clamp: None,
        })
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn dual(&self) -> &EntropicDual {
        &self.dual
    }

    pub fn laplacian(&self) -> &Laplacian {
        &self.laplacian
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn mode(&self) -> GradientMode {
        self.mode
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn params(&self) -> &RunParams {
        &self.params
    }

    pub fn exact_metrics(&self) -> bool {
        self.exact_metrics
    }

    /// Completed rounds.
    pub fn round(&self) -> usize {
        self.schedule.k()
    }

    /// Runs one round and returns the per-agent batch size used.
    pub fn step(&mut self) -> Result<usize> {
        let step = self.schedule.advance();
        let batch = match self.algorithm {
            Algorithm::Accel => {
                let b = batch_size(
                    &step,
                    self.agents.len(),
                    self.params.gamma.get(),
                    self.params.epsilon,
                    self.params.batch_cap,
                    self.params.fixed_batch,
                );
                if b.clamped && self.mode == GradientMode::Sampled {
                    self.clamped_rounds += 1;
                    self.first_clamp.get_or_insert(step.index);
                }
                let ctx = AgentContext {
                    dual: &self.dual,
                    topology: &self.topology,
                    seed: self.seed,
                    mode: self.mode,
                };
                accel_round(&mut self.agents, &ctx, &step, b.size, self.exec)?;
                b.size
            }
            Algorithm::Nonaccel => {
                let ctx = AgentContext {
                    dual: &self.dual,
                    topology: &self.topology,
                    seed: self.seed,
                    mode: self.mode,
                };
                nonaccel_round(&mut self.agents, &ctx, self.params.lipschitz, self.rounds, self.exec)?;
                1
            }
        };
        Ok(match self.mode {
            GradientMode::Exact => 0,
            GradientMode::Sampled => batch,
        })
    }

    /// Metrics of the current state.
    pub fn metrics(&self) -> Result<(f64, f64)> {
        let measures: Vec<&MeasureOracle> = self.agents.iter().map(|a| &a.measure).collect();
        let lam: Vec<&[f64]> = self.agents.iter().map(|a| a.lam_bar.as_slice()).collect();
        let p: Vec<&[f64]> = self.agents.iter().map(|a| a.p_hat.as_slice()).collect();
        evaluate_metrics(
            &self.dual,
            &self.laplacian,
            &measures,
            &lam,
            &p,
            self.exact_metrics,
            self.seed,
            self.round(),
            self.eval_batch,
            self.exec,
        )
    }

    /// Runs the remaining rounds, recording round 0, every `record_every`-th round and the last one.
    pub fn run(mut self, record_every: usize, wall_clock: bool) -> Result<Trace> {
        let record_every = record_every.max(1);
        let start = Instant::now();
        let elapsed = |on: bool| if on { start.elapsed().as_millis() as u64 } else { 0 };
        let mut rows = Vec::new();
        let (d, c) = self.metrics()?;
        rows.push(TraceRow {
            round: self.round(),
            dual_value: d,
            consensus: c,
            batch: 0,
            wall_ms: elapsed(wall_clock),
        });
        while self.round() < self.rounds {
            let batch = self.step()?;
            let k = self.round();
            if k.is_multiple_of(record_every) || k == self.rounds {
                let (d, c) = self.metrics()?;
                rows.push(TraceRow {
                    round: k,
                    dual_value: d,
                    consensus: c,
                    batch,
                    wall_ms: elapsed(wall_clock),
                });
            }
        }
        let mut notes = self.notes;
        if let Some(first) = self.first_clamp {
            let msg = format!(
                "batch size clamped to cap {} in {} of {} rounds (first at round {first})",
                self.params.batch_cap, self.clamped_rounds, self.rounds
            );
            log::warn!("{msg}");
            notes.push(msg);
        }
        Ok(Trace {
            rows,
            p_hat: self.agents.into_iter().map(|a| a.p_hat).collect(),
            rounds: self.rounds,
            lambda_max: self.lambda_max,
            lipschitz: self.params.lipschitz,
            mode: self.mode,
            notes,
        })
    }
}

/// Runs `config` with the default parallel backend.
pub fn run(config: &RunConfig) -> Result<Trace> {
    run_with(config, Execution::Parallel, None)
}

/// Runs `config` with an explicit backend and, optionally, a dedicated pool of `workers` threads.
pub fn run_with(config: &RunConfig, exec: Execution, workers: Option<usize>) -> Result<Trace> {
    let go = || {
        let sim = Simulation::new(config, exec)?;
        for note in &sim.notes {
            log::warn!("{note}");
        }
        sim.run(config.solver.record_every, config.output.wall_clock)
    };
    match workers {
        Some(w) => with_workers(w, go)?,
        None => go(),
    }
}

/// Writes the trace, the barycenter file and, for grid supports with `render_pgm`,
/// one PGM per agent plus `mean.pgm`. Returns the written paths.
pub fn write_outputs(config: &RunConfig, trace: &Trace) -> Result<Vec<PathBuf>> {
    let dir = &config.output.dir;
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let trace_path = dir.join(&config.output.trace_file);
    std::fs::write(&trace_path, trace.to_csv())?;
    written.push(trace_path);
    let bary_path = dir.join(&config.output.barycenter_file);
    std::fs::write(&bary_path, trace.barycenter_csv())?;
    written.push(bary_path);
    if let (true, SupportConfig::Grid2d { rows, cols }) = (config.output.render_pgm, &config.support) {
        for (i, p) in trace.p_hat.iter().enumerate() {
            let path = dir.join(format!("agent_{i}.pgm"));
            write_pgm(&path, *rows, *cols, p)?;
            written.push(path);
        }
        let path = dir.join("mean.pgm");
        write_pgm(&path, *rows, *cols, &trace.mean_p_hat())?;
        written.push(path);
    }
    Ok(written)
}
