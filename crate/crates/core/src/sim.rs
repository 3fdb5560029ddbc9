//! Closed-loop rendezvous runs, Monte Carlo batches, and the mean-square
//! disagreement bound.
//!
//! Each step runs four phases in a fixed order: every robot filters its new
//! measurement, every robot decides and publishes, every robot computes its
//! control from the registers, and every plant steps. The last step (`k = M`,
//! or the tolerance stop) only filters.

use nalgebra::{DMatrix, Vector2};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Mode, Scenario, TriggerAxes, TriggerSpec};
use crate::controller::{
    consensus_input, performance_index, predicted_cost, riccati_backward, trace_terms,
    ConsensusError, GainSchedule, NoiseTerms, StackedSystem, TraceTerms,
};
use crate::error::{Error, Result};
use crate::estimator::{self, CovarianceHistory, KalmanState};
use crate::linalg::{self, CompensatedSum};
use crate::model::{
    measure, step_dynamics, unicycle_wheel_speeds, AgentModel, GaussianSampler2, NoiseRole,
    NoiseSource, UnicyclePose, WheelCommand,
};
use crate::network::RegisterBank;
use crate::scheduler::{transmission_rate, TransmissionLog, TriggerKind};

/// Final true spread below which a run counts as a rendezvous.
pub const RENDEZVOUS_RADIUS: f64 = 0.05;

/// Source of the three noise sequences of every robot.
pub trait NoiseFeed {
    /// Deviation of the initial state from its mean.
    fn initial(&mut self, agent: usize) -> Vector2<f64>;
    fn measurement(&mut self, k: usize, agent: usize) -> Vector2<f64>;
    fn process(&mut self, k: usize, agent: usize) -> Vector2<f64>;
}

struct Stream {
    sampler: GaussianSampler2,
    source: NoiseSource,
}

impl Stream {
    fn draw(&mut self) -> Vector2<f64> {
        self.sampler.draw(&mut self.source)
    }
}

/// Seeded Gaussian noise, one independent stream per agent and role.
pub struct LiveNoise {
    streams: Vec<[Stream; 3]>,
}

impl LiveNoise {
    pub fn new(models: &[AgentModel], seed: u64, trial: u64) -> Result<Self> {
        let streams = models
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let mk = |cov, role| -> Result<Stream> {
                    Ok(Stream {
                        sampler: GaussianSampler2::new(cov)?,
                        source: NoiseSource::for_agent(seed, trial, i, role),
                    })
                };
                Ok([
                    mk(&m.x0_cov, NoiseRole::InitialState)?,
                    mk(&m.w, NoiseRole::Process)?,
                    mk(&m.v, NoiseRole::Measurement)?,
                ])
            })
            .collect::<Result<_>>()?;
        Ok(LiveNoise { streams })
    }
}

impl NoiseFeed for LiveNoise {
    fn initial(&mut self, agent: usize) -> Vector2<f64> {
        self.streams[agent][0].draw()
    }
    fn measurement(&mut self, _k: usize, agent: usize) -> Vector2<f64> {
        self.streams[agent][2].draw()
    }
    fn process(&mut self, _k: usize, agent: usize) -> Vector2<f64> {
        self.streams[agent][1].draw()
    }
}

/// Feeds back the draws recorded in a trace.
pub struct ReplayNoise<'a> {
    trace: &'a SimTrace,
}

impl<'a> ReplayNoise<'a> {
    pub fn new(trace: &'a SimTrace) -> Self {
        ReplayNoise { trace }
    }
}

impl NoiseFeed for ReplayNoise<'_> {
    fn initial(&mut self, agent: usize) -> Vector2<f64> {
        self.trace.initial_noise[agent]
    }
    fn measurement(&mut self, k: usize, agent: usize) -> Vector2<f64> {
        self.trace.steps[k].agents[agent].v
    }
    fn process(&mut self, k: usize, agent: usize) -> Vector2<f64> {
        self.trace.steps[k].agents[agent]
            .w
            .unwrap_or_else(Vector2::zeros)
    }
}

/// One robot at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentStep {
    pub x_true: Vector2<f64>,
    pub y: Vector2<f64>,
    /// Corrected estimate `x̂_{k|k}`.
    pub x_hat: Vector2<f64>,
    /// `x̂_{k|k} − x₀`.
    pub eps: Vector2<f64>,
    /// Transmission per axis (both equal for joint triggering).
    pub sigma: [bool; 2],
    /// Own register after this step's broadcasts.
    pub register: Vector2<f64>,
    /// `x̂_{k|k} − register`, the error the neighbours act on.
    pub trigger_error: Vector2<f64>,
    /// `None` at the last step.
    pub control: Option<Vector2<f64>>,
    pub wheels: Option<WheelCommand>,
    /// Unicycle pose at the start of the step, anchored to `x_true`.
    pub pose: UnicyclePose,
    pub v: Vector2<f64>,
    pub w: Option<Vector2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub agents: Vec<AgentStep>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub steps: Vec<StepRecord>,
    pub initial_noise: Vec<Vector2<f64>>,
    pub stopped_early: bool,
}

impl SimTrace {
    /// Number of control steps.
    pub fn horizon(&self) -> usize {
        self.steps.len().saturating_sub(1)
    }

    pub fn agents(&self) -> usize {
        self.initial_noise.len()
    }

    pub fn transmission_log(&self) -> TransmissionLog {
        let n = self.agents();
        let mut log = TransmissionLog::new(2 * n);
        for step in &self.steps[..self.horizon()] {
            for (i, a) in step.agents.iter().enumerate() {
                log.record(2 * i, a.sigma[0]);
                log.record(2 * i + 1, a.sigma[1]);
            }
        }
        log
    }
}

/// Largest pairwise distance between the given points.
pub fn max_pairwise_distance(points: impl Iterator<Item = Vector2<f64>> + Clone) -> f64 {
    let pts: Vec<_> = points.collect();
    let mut d: f64 = 0.0;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            d = d.max((pts[i] - pts[j]).norm());
        }
    }
    d
}

/// `Σ_i ‖p_i − p̄‖²`, the squared norm of the disagreement component.
pub fn disagreement_sq(points: &[Vector2<f64>]) -> f64 {
    let mean = points.iter().sum::<Vector2<f64>>() / points.len() as f64;
    points.iter().map(|p| (p - mean).norm_squared()).sum()
}

/// Scenario with its gain schedule and filter covariances precomputed.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub scenario: Scenario,
    pub system: StackedSystem,
    pub schedule: GainSchedule,
    pub covariance: Vec<CovarianceHistory>,
}

impl Prepared {
    pub fn new(scenario: Scenario) -> Result<Self> {
        let system = StackedSystem::new(&scenario.models, &scenario.graph);
        let schedule = riccati_backward(&scenario.weights, &system)?;
        let covariance = scenario
            .models
            .iter()
            .enumerate()
            .map(|(i, m)| {
                CovarianceHistory::compute(m, scenario.horizon())
                    .map_err(|e| e.with_context(format!("agent {i}")))
            })
            .collect::<Result<_>>()?;
        Ok(Prepared {
            scenario,
            system,
            schedule,
            covariance,
        })
    }

    pub fn run_trial(&self, trigger: &TriggerSpec, trial: u64) -> Result<SimTrace> {
        let mut feed = LiveNoise::new(&self.scenario.models, self.scenario.seed, trial)?;
        self.run(trigger, &mut feed)
    }

    pub fn run(&self, trigger: &TriggerSpec, feed: &mut dyn NoiseFeed) -> Result<SimTrace> {
        let sc = &self.scenario;
        let n = sc.agents();
        let m = sc.horizon();
        let initial_noise: Vec<_> = (0..n).map(|i| feed.initial(i)).collect();
        let mut x: Vec<_> = sc
            .models
            .iter()
            .zip(&initial_noise)
            .map(|(md, d)| md.x0_mean + d)
            .collect();
        let mut kf: Vec<_> = sc.models.iter().map(KalmanState::prior).collect();
        let mut policies = (0..n)
            .map(|_| trigger.policies())
            .collect::<Result<Vec<_>>>()?;
        let mut bank = RegisterBank::new(n);
        let mut u_prev = vec![Vector2::zeros(); n];
        let mut theta = sc.headings.clone();
        let mut steps = Vec::with_capacity(m + 1);
        let mut stopped_early = false;

        for k in 0..=m {
            let ctx = |e: Error| e.with_context(format!("step {k}"));
            // phase 1: filter
            let mut v = Vec::with_capacity(n);
            let mut y = Vec::with_capacity(n);
            for i in 0..n {
                let md = &sc.models[i];
                let vi = feed.measurement(k, i);
                let yi = measure(md, &x[i], &vi);
                kf[i] = estimator::step(&kf[i], md, k, &u_prev[i], &yi).map_err(ctx)?;
                v.push(vi);
                y.push(yi);
            }
            let last = k == m
                || (sc.mode == Mode::ToleranceStop
                    && k >= 1
                    && max_pairwise_distance(kf.iter().map(|s| s.x_corr)) < sc.tolerance);
            if last && k < m {
                stopped_early = true;
            }

            // phase 2: trigger and publish
            let mut sigma = vec![[false; 2]; n];
            if !last {
                for i in 0..n {
                    let xh = kf[i].x_corr;
                    sigma[i] = match trigger.axes {
                        TriggerAxes::Joint => {
                            let t = policies[i][0].decide(k, xh.as_slice()).map_err(ctx)?;
                            [t, t]
                        }
                        TriggerAxes::PerAxis => [
                            policies[i][0].decide(k, &[xh[0]]).map_err(ctx)?,
                            policies[i][1].decide(k, &[xh[1]]).map_err(ctx)?,
                        ],
                    };
                    bank.publish(i, xh, k, sigma[i]).map_err(ctx)?;
                }
            }

            // phase 3: controls and wheel commands
            let mut agents = Vec::with_capacity(n);
            let mut u_next = vec![Vector2::zeros(); n];
            for i in 0..n {
                let md = &sc.models[i];
                let pose = UnicyclePose {
                    x: x[i][0],
                    y: x[i][1],
                    theta: theta[i],
                    wheel_base: sc.unicycle.wheel_base,
                    wheel_radius: sc.unicycle.wheel_radius,
                };
                let (control, wheels) = if last {
                    (None, None)
                } else {
                    let gain = self.schedule.agent_gain(k, i);
                    let ui = consensus_input(
                        i,
                        &gain,
                        &bank.register(i),
                        &bank.read_neighbors(i, &sc.graph),
                        &sc.graph,
                    );
                    let velocity = md.b * ui / sc.dt;
                    let (cmd, next) =
                        unicycle_wheel_speeds(&pose, &velocity, sc.dt, sc.unicycle.omega_max)?;
                    theta[i] = next.theta;
                    u_next[i] = ui;
                    (Some(ui), Some(cmd))
                };
                let xh = kf[i].x_corr;
                agents.push(AgentStep {
                    x_true: x[i],
                    y: y[i],
                    x_hat: xh,
                    eps: xh - sc.reference,
                    sigma: sigma[i],
                    register: bank.register(i),
                    trigger_error: xh - bank.register(i),
                    control,
                    wheels,
                    pose,
                    v: v[i],
                    w: None,
                });
            }

            // phase 4: plants
            if !last {
                for i in 0..n {
                    let wi = feed.process(k, i);
                    x[i] = step_dynamics(&sc.models[i], &x[i], &u_next[i], &wi);
                    agents[i].w = Some(wi);
                }
                u_prev = u_next;
            }
            steps.push(StepRecord { k, agents });
            if last {
                break;
            }
        }
        Ok(SimTrace {
            steps,
            initial_noise,
            stopped_early,
        })
    }

    /// Per-run metrics of a trace produced from this scenario.
    pub fn summarize(&self, trace: &SimTrace) -> Result<TraceSummary> {
        let n = self.scenario.agents();
        let horizon = trace.horizon();
        let weights = self.scenario.weights.with_horizon(horizon);
        let log = trace.transmission_log();
        let mut cost = Vec::with_capacity(n);
        let mut cost_axes = Vec::with_capacity(n);
        let mut gamma = Vec::with_capacity(n);
        for i in 0..n {
            cost.push(performance_index(trace, &weights, i)?);
            cost_axes.push(axis_costs(trace, &weights, i));
            gamma.push([
                transmission_rate(&log, 2 * i)?,
                transmission_rate(&log, 2 * i + 1)?,
            ]);
        }
        let last = &trace.steps[horizon];
        Ok(TraceSummary {
            steps: horizon,
            cost,
            cost_axes,
            gamma,
            final_true_spread: max_pairwise_distance(last.agents.iter().map(|a| a.x_true)),
            final_estimated_spread: max_pairwise_distance(last.agents.iter().map(|a| a.x_hat)),
            stopped_early: trace.stopped_early,
        })
    }

    /// Closed-form expected total cost `Σ_i J^i` using the triggering-error
    /// moments measured by `mc`.
    pub fn predicted_cost(&self, mc: &MonteCarlo) -> Result<f64> {
        let sc = &self.scenario;
        let means: Vec<_> = sc.models.iter().map(|m| m.x0_mean).collect();
        let eps0 = ConsensusError::new(&means, sc.reference);
        let noise = NoiseTerms {
            models: &sc.models,
            covariance: &self.covariance,
            trigger_moment: Some(&mc.trigger_moment),
        };
        predicted_cost(&self.schedule, &self.system, &eps0, &noise)
    }
}

fn axis_costs(trace: &SimTrace, weights: &crate::controller::CostWeights, i: usize) -> [f64; 2] {
    let m = weights.horizon;
    let (q, qm, r) = (weights.q[i], weights.qm[i], weights.r[i]);
    let mut out = [CompensatedSum::default(), CompensatedSum::default()];
    for (k, step) in trace.steps[..=m].iter().enumerate() {
        let a = &step.agents[i];
        let (qe, ru) = if k == m {
            (qm * a.eps, Vector2::zeros())
        } else {
            let u = a.control.unwrap_or_else(Vector2::zeros);
            (q * a.eps, (r * u).component_mul(&u))
        };
        for d in 0..2 {
            out[d].add(a.eps[d] * qe[d] + ru[d]);
        }
    }
    [out[0].value(), out[1].value()]
}

/// Convenience: prepare the scenario and run trial 0 of its trigger.
pub fn run_scenario(scenario: &Scenario) -> Result<SimTrace> {
    let prep = Prepared::new(scenario.clone())?;
    prep.run_trial(&scenario.trigger, 0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceSummary {
    pub steps: usize,
    /// `J^i`.
    pub cost: Vec<f64>,
    /// `J^i` split into its x and y terms.
    pub cost_axes: Vec<[f64; 2]>,
    /// `Γ^i` per axis.
    pub gamma: Vec<[f64; 2]>,
    pub final_true_spread: f64,
    pub final_estimated_spread: f64,
    pub stopped_early: bool,
}

/// Sample mean with its standard error (absent for one sample).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: Option<f64>,
}

impl Estimate {
    pub fn from_samples(x: &[f64]) -> Self {
        let n = x.len() as f64;
        let mean = x.iter().copied().collect::<CompensatedSum>().value() / n;
        let std_error = (x.len() > 1).then(|| {
            let ss = x
                .iter()
                .map(|v| (v - mean) * (v - mean))
                .collect::<CompensatedSum>()
                .value();
            (ss / (n - 1.0) / n).sqrt()
        });
        Estimate { mean, std_error }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarlo {
    pub trials: usize,
    pub cost: Vec<Estimate>,
    pub cost_axes: Vec<[Estimate; 2]>,
    /// `Σ_i J^i`.
    pub total_cost: Estimate,
    pub gamma: Vec<[Estimate; 2]>,
    /// Γ averaged over robots and axes.
    pub mean_gamma: Estimate,
    pub final_true_spread: Estimate,
    /// Fraction of trials ending with every true pairwise distance below
    /// [`RENDEZVOUS_RADIUS`].
    pub rendezvous_fraction: f64,
    /// `E{Σ_i ‖x̂^i_{k|k} − mean_j x̂^j_{k|k}‖²}` per step.
    pub disagreement: Vec<f64>,
    /// Same for the true positions.
    pub true_disagreement: Vec<f64>,
    /// `E{ēᵀē}` per decision step, `ē` the stacked triggering error.
    pub trigger_moment: Vec<f64>,
    /// Largest `‖x̂‖²` and largest squared estimate component seen.
    pub max_estimate_sq: f64,
    pub max_component_sq: f64,
    #[serde(skip)]
    pub summaries: Vec<TraceSummary>,
}

struct Digest {
    summary: TraceSummary,
    disagreement: Vec<f64>,
    true_disagreement: Vec<f64>,
    trigger_sq: Vec<f64>,
    max_sq: f64,
    max_component_sq: f64,
}

fn digest(prep: &Prepared, trace: &SimTrace) -> Result<Digest> {
    let summary = prep.summarize(trace)?;
    let mut d = Digest {
        summary,
        disagreement: Vec::with_capacity(trace.steps.len()),
        true_disagreement: Vec::with_capacity(trace.steps.len()),
        trigger_sq: Vec::with_capacity(trace.horizon()),
        max_sq: 0.0,
        max_component_sq: 0.0,
    };
    for (k, step) in trace.steps.iter().enumerate() {
        let est: Vec<_> = step.agents.iter().map(|a| a.x_hat).collect();
        let tru: Vec<_> = step.agents.iter().map(|a| a.x_true).collect();
        d.disagreement.push(disagreement_sq(&est));
        d.true_disagreement.push(disagreement_sq(&tru));
        if k < trace.horizon() {
            d.trigger_sq.push(
                step.agents
                    .iter()
                    .map(|a| a.trigger_error.norm_squared())
                    .sum(),
            );
        }
        for x in &est {
            d.max_sq = d.max_sq.max(x.norm_squared());
            d.max_component_sq = d.max_component_sq.max(x[0] * x[0]).max(x[1] * x[1]);
        }
    }
    Ok(d)
}

/// Per-index average over the trials that reached that index.
fn ragged_mean(series: impl Iterator<Item = Vec<f64>> + Clone) -> Vec<f64> {
    let len = series.clone().map(|s| s.len()).max().unwrap_or(0);
    (0..len)
        .map(|k| {
            let (sum, count) = series.clone().filter_map(|s| s.get(k).copied()).fold(
                (CompensatedSum::default(), 0usize),
                |(mut acc, c), v| {
                    acc.add(v);
                    (acc, c + 1)
                },
            );
            sum.value() / count as f64
        })
        .collect()
}

/// Run `trials` independent trials of `trigger` in parallel. Trial `t` uses
/// the streams of `(seed, t)`, so different triggers see the same noise.
pub fn run_monte_carlo(
    prep: &Prepared,
    trigger: &TriggerSpec,
    trials: usize,
) -> Result<MonteCarlo> {
    if trials == 0 {
        return Err(Error::config("trials", "must be ≥ 1"));
    }
    let digests = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let trace = prep
                .run_trial(trigger, t)
                .map_err(|e| e.with_context(format!("trial {t}")))?;
            digest(prep, &trace)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = prep.scenario.agents();
    let per = |f: &dyn Fn(&TraceSummary) -> f64| {
        Estimate::from_samples(&digests.iter().map(|d| f(&d.summary)).collect::<Vec<_>>())
    };
    let cost = (0..n).map(|i| per(&|s| s.cost[i])).collect();
    let cost_axes = (0..n)
        .map(|i| [per(&|s| s.cost_axes[i][0]), per(&|s| s.cost_axes[i][1])])
        .collect();
    let gamma = (0..n)
        .map(|i| [per(&|s| s.gamma[i][0]), per(&|s| s.gamma[i][1])])
        .collect();
    let total_cost = per(&|s| s.cost.iter().copied().collect::<CompensatedSum>().value());
    let mean_gamma = per(&|s| s.gamma.iter().flatten().sum::<f64>() / (2 * n) as f64);
    let final_true_spread = per(&|s| s.final_true_spread);
    let hits = digests
        .iter()
        .filter(|d| d.summary.final_true_spread < RENDEZVOUS_RADIUS)
        .count();
    Ok(MonteCarlo {
        trials,
        cost,
        cost_axes,
        total_cost,
        gamma,
        mean_gamma,
        final_true_spread,
        rendezvous_fraction: hits as f64 / trials as f64,
        disagreement: ragged_mean(digests.iter().map(|d| d.disagreement.clone())),
        true_disagreement: ragged_mean(digests.iter().map(|d| d.true_disagreement.clone())),
        trigger_moment: ragged_mean(digests.iter().map(|d| d.trigger_sq.clone())),
        max_estimate_sq: digests.iter().map(|d| d.max_sq).fold(0.0, f64::max),
        max_component_sq: digests
            .iter()
            .map(|d| d.max_component_sq)
            .fold(0.0, f64::max),
        summaries: digests.into_iter().map(|d| d.summary).collect(),
    })
}

/// Upper bound on `E{ēᵀē}` from the complement of the trigger condition,
/// `Σ_i (α‖x̂‖²_max + β)` (per axis when the axes trigger separately).
/// `None` for the integral rule, whose complement does not bound a single
/// step.
pub fn analytic_trigger_bound(spec: &TriggerSpec, agents: usize, mc: &MonteCarlo) -> Option<f64> {
    let kinds = std::iter::once(spec.kind).chain(spec.schedule.iter().map(|c| c.kind));
    let (channels, x_sq) = match spec.axes {
        TriggerAxes::Joint => (agents, mc.max_estimate_sq),
        TriggerAxes::PerAxis => (2 * agents, mc.max_component_sq),
    };
    let mut worst: f64 = 0.0;
    for kind in kinds {
        let per = match kind {
            TriggerKind::TimeTriggered { period: 1 } => 0.0,
            TriggerKind::SendOnDelta { beta } => beta,
            TriggerKind::Relative { alpha } => alpha * x_sq,
            TriggerKind::Mixed { alpha, beta } => alpha * x_sq + beta,
            TriggerKind::TimeTriggered { .. } | TriggerKind::Integral { .. } => return None,
        };
        worst = worst.max(per);
    }
    Some(channels as f64 * worst)
}

/// Several triggers over the same trials (common random numbers).
pub fn compare_triggers(
    prep: &Prepared,
    triggers: &[TriggerSpec],
    trials: usize,
) -> Result<Vec<(TriggerSpec, MonteCarlo)>> {
    if triggers.len() < 2 {
        return Err(Error::config(
            "compare",
            "a comparison needs at least two triggers",
        ));
    }
    triggers
        .iter()
        .map(|t| Ok((t.clone(), run_monte_carlo(prep, t, trials)?)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Alpha,
    Beta,
    Gamma,
    Period,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Alpha => "alpha",
            SweepParam::Beta => "beta",
            SweepParam::Gamma => "gamma",
            SweepParam::Period => "period",
        }
    }

    /// `kind` with this parameter set to `value`.
    pub fn apply(self, kind: TriggerKind, value: f64) -> Result<TriggerKind> {
        let path = format!("trigger.{}", self.name());
        let out = match (self, kind) {
            (SweepParam::Alpha, TriggerKind::Relative { .. }) => {
                TriggerKind::Relative { alpha: value }
            }
            (SweepParam::Alpha, TriggerKind::Mixed { beta, .. }) => {
                TriggerKind::Mixed { alpha: value, beta }
            }
            (SweepParam::Beta, TriggerKind::SendOnDelta { .. }) => {
                TriggerKind::SendOnDelta { beta: value }
            }
            (SweepParam::Beta, TriggerKind::Mixed { alpha, .. }) => {
                TriggerKind::Mixed { alpha, beta: value }
            }
            (SweepParam::Gamma, TriggerKind::Integral { .. }) => {
                TriggerKind::Integral { gamma: value }
            }
            (SweepParam::Period, TriggerKind::TimeTriggered { .. }) => {
                if value.fract() != 0.0 || value < 1.0 {
                    return Err(Error::config(
                        path,
                        format!("period must be a positive integer, got {value}"),
                    ));
                }
                TriggerKind::TimeTriggered {
                    period: value as usize,
                }
            }
            _ => {
                return Err(Error::config(
                    path,
                    format!("{} triggers have no {} parameter", kind.name(), self.name()),
                ))
            }
        };
        out.validate()?;
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrontierPoint {
    pub value: f64,
    pub gamma: Estimate,
    pub cost: Estimate,
}

/// Γ and total J along a grid of one trigger parameter.
pub fn sweep(
    prep: &Prepared,
    base: &TriggerSpec,
    param: SweepParam,
    grid: &[f64],
    trials: usize,
) -> Result<Vec<FrontierPoint>> {
    if grid.len() < 2 {
        return Err(Error::config("grid", "a sweep needs at least two values"));
    }
    grid.iter()
        .map(|&value| {
            let spec = TriggerSpec {
                kind: param.apply(base.kind, value)?,
                schedule: Vec::new(),
                axes: base.axes,
            };
            let mc = run_monte_carlo(prep, &spec, trials)?;
            Ok(FrontierPoint {
                value,
                gamma: mc.mean_gamma,
                cost: mc.total_cost,
            })
        })
        .collect()
}

/// Mean-square disagreement bound and its ingredients.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    /// A decrease rate `ρ ≥ 10⁻⁶` was found.
    pub certified: bool,
    pub rho: Option<f64>,
    /// `μ_k` for `k = 0..M−1`.
    pub mu: Vec<f64>,
    /// The four contributions to each `μ_k`.
    pub mu_terms: Vec<TraceTerms>,
    pub mu_max: f64,
    /// Extreme eigenvalues of `Σ_k` on the disagreement subspace.
    pub kappa_max: f64,
    pub kappa_min: f64,
    /// Largest eigenvalue of each robot's `P_{k|k−1}` over the horizon.
    pub p_bar: Vec<f64>,
    pub initial_mean_square: f64,
    /// Monte Carlo `E‖ε̄_{k|k}‖²` on the disagreement subspace.
    pub empirical: Vec<f64>,
    /// Bound per step; empty when not certified.
    pub bound: Vec<f64>,
    /// Steps where the empirical value exceeds the bound.
    pub violations: Vec<usize>,
}

const RHO_TOLERANCE: f64 = 1e-6;

/// Largest `ρ ∈ (0, 1]` with `T_k ⪯ (1 − ρ) S_k` for every pair, by bisection.
pub fn largest_decrease_rate(pairs: &[(DMatrix<f64>, DMatrix<f64>)]) -> Option<f64> {
    let feasible = |rho: f64| {
        pairs.iter().all(|(s, t)| {
            let gap = s * (1.0 - rho) - t;
            linalg::min_eigenvalue(&linalg::symmetrize(&gap))
                >= -1e-12 * linalg::max_eigenvalue(s).abs()
        })
    };
    if !feasible(RHO_TOLERANCE) {
        return None;
    }
    if feasible(1.0) {
        return Some(1.0);
    }
    let (mut lo, mut hi) = (RHO_TOLERANCE, 1.0);
    while hi - lo > RHO_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(lo)
}

/// Evaluate the bound
/// `κ̄/κ̲ E‖ε̄_0‖² (1−ρ)^k + μ/κ̲ Σ_{m=0}^{k−1} (1−ρ)^m`
/// against the Monte Carlo disagreement of `mc`. This is what iterating
/// `E V_{k+1} ≤ (1−ρ) E V_k + μ` with `κ̲‖ε̄‖² ≤ V ≤ κ̄‖ε̄‖²` gives.
pub fn stability_bound(prep: &Prepared, mc: &MonteCarlo) -> Result<StabilityReport> {
    let sc = &prep.scenario;
    let n = sc.agents();
    if n < 2 {
        return Err(Error::config(
            "model.agent",
            "the disagreement bound needs at least two robots",
        ));
    }
    let m = prep.schedule.horizon();
    if mc.trigger_moment.len() < m || mc.disagreement.len() < m + 1 {
        return Err(Error::Logic(
            "Monte Carlo run is shorter than the horizon".into(),
        ));
    }
    let basis = linalg::disagreement_basis(n);
    let proj = linalg::disagreement_projector(n);
    let sigma = &prep.schedule.sigma;

    let restricted: Vec<_> = sigma
        .iter()
        .map(|s| linalg::symmetrize(&linalg::restrict(s, &basis)))
        .collect();
    let (mut kappa_max, mut kappa_min) = (f64::NEG_INFINITY, f64::INFINITY);
    for s in &restricted {
        kappa_max = kappa_max.max(linalg::max_eigenvalue(s));
        kappa_min = kappa_min.min(linalg::min_eigenvalue(s));
    }

    let noise = NoiseTerms {
        models: &sc.models,
        covariance: &prep.covariance,
        trigger_moment: Some(&mc.trigger_moment),
    };
    let stacked = noise.stacked();
    let mut pairs = Vec::with_capacity(m);
    let mut mu = Vec::with_capacity(m);
    let mut mu_terms = Vec::with_capacity(m);
    for k in 0..m {
        let next = &proj * &sigma[k + 1] * &proj;
        let dep = prep.system.deployed_closed_loop(&prep.schedule.gains[k]);
        let t = linalg::symmetrize(&linalg::restrict(&(dep.transpose() * &next * &dep), &basis));
        pairs.push((restricted[k].clone(), t));
        let terms = trace_terms(
            &next,
            &prep.system,
            &prep.schedule.gains[k],
            &stacked,
            &noise,
            mc.trigger_moment[k],
            k,
        );
        mu.push(terms.total().max(0.0));
        mu_terms.push(terms);
    }
    let mu_max = mu.iter().copied().fold(0.0, f64::max);
    let rho = if kappa_min > 0.0 {
        largest_decrease_rate(&pairs)
    } else {
        None
    };
    let p_bar = prep
        .covariance
        .iter()
        .map(|h| {
            h.p_pred
                .iter()
                .map(linalg::max_eigenvalue2)
                .fold(0.0, f64::max)
        })
        .collect();

    let empirical = mc.disagreement[..=m].to_vec();
    let initial = empirical[0];
    let mut bound = Vec::new();
    let mut violations = Vec::new();
    if let Some(r) = rho {
        let q = 1.0 - r;
        let mut tail = CompensatedSum::default();
        for (k, &e) in empirical.iter().enumerate() {
            if k >= 1 {
                tail.add(q.powi(k as i32 - 1));
            }
            let b = kappa_max / kappa_min * initial * q.powi(k as i32)
                + mu_max / kappa_min * tail.value();
            if e > b {
                violations.push(k);
            }
            bound.push(b);
        }
    }
    Ok(StabilityReport {
        certified: rho.is_some(),
        rho,
        mu,
        mu_terms,
        mu_max,
        kappa_max,
        kappa_min,
        p_bar,
        initial_mean_square: initial,
        empirical,
        bound,
        violations,
    })
}
