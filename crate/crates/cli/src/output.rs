//! File writers for traces, summaries, tables and plot data.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use etlqg::config::TriggerSpec;
use etlqg::sim::{
    self, FrontierPoint, MonteCarlo, Prepared, SimTrace, StabilityReport, SweepParam, TraceSummary,
};
use serde::Serialize;

use crate::Failure;

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn bit(b: bool) -> String {
    u8::from(b).to_string()
}

pub const TRACE_HEADER: [&str; 25] = [
    "step",
    "agent",
    "x",
    "y",
    "meas_x",
    "meas_y",
    "xhat_x",
    "xhat_y",
    "eps_x",
    "eps_y",
    "sigma_x",
    "sigma_y",
    "register_x",
    "register_y",
    "u_x",
    "u_y",
    "v_right",
    "v_left",
    "theta",
    "noise_v_x",
    "noise_v_y",
    "noise_w_x",
    "noise_w_y",
    "trigger_err_x",
    "trigger_err_y",
];

pub fn write_trace(path: &Path, trace: &SimTrace) -> Result<(), Failure> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(TRACE_HEADER)?;
    for step in &trace.steps {
        for (i, a) in step.agents.iter().enumerate() {
            let u = a.control;
            let w_noise = a.w;
            w.write_record([
                step.k.to_string(),
                i.to_string(),
                num(a.x_true[0]),
                num(a.x_true[1]),
                num(a.y[0]),
                num(a.y[1]),
                num(a.x_hat[0]),
                num(a.x_hat[1]),
                num(a.eps[0]),
                num(a.eps[1]),
                bit(a.sigma[0]),
                bit(a.sigma[1]),
                num(a.register[0]),
                num(a.register[1]),
                opt(u.map(|u| u[0])),
                opt(u.map(|u| u[1])),
                opt(a.wheels.map(|c| c.right)),
                opt(a.wheels.map(|c| c.left)),
                num(a.pose.theta),
                num(a.v[0]),
                num(a.v[1]),
                opt(w_noise.map(|w| w[0])),
                opt(w_noise.map(|w| w[1])),
                num(a.trigger_error[0]),
                num(a.trigger_error[1]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// positions.dat, wheels.dat and cost.dat: whitespace-separated columns
/// against time, one column group per robot.
pub fn write_plots(dir: &Path, prep: &Prepared, trace: &SimTrace) -> Result<(), Failure> {
    let sc = &prep.scenario;
    let n = trace.agents();
    let header = |names: &[&str]| {
        let mut h = String::from("# t");
        for i in 0..n {
            for name in names {
                h.push_str(&format!(" {name}_{i}"));
            }
        }
        h
    };

    let mut pos = create(&dir.join("positions.dat"))?;
    writeln!(pos, "{}", header(&["x", "y"]))?;
    for step in &trace.steps {
        write!(pos, "{}", num(step.k as f64 * sc.dt))?;
        for a in &step.agents {
            write!(pos, " {} {}", num(a.x_true[0]), num(a.x_true[1]))?;
        }
        writeln!(pos)?;
    }
    pos.flush()?;

    let mut wheels = create(&dir.join("wheels.dat"))?;
    writeln!(wheels, "{}", header(&["v_right", "v_left"]))?;
    for step in trace
        .steps
        .iter()
        .filter(|s| s.agents.iter().all(|a| a.wheels.is_some()))
    {
        write!(wheels, "{}", num(step.k as f64 * sc.dt))?;
        for a in &step.agents {
            let c = a.wheels.expect("filtered");
            write!(wheels, " {} {}", num(c.right), num(c.left))?;
        }
        writeln!(wheels)?;
    }
    wheels.flush()?;

    // running sum of the stage costs; the last row adds the terminal term
    let weights = sc.weights.with_horizon(trace.horizon());
    let mut cost = create(&dir.join("cost.dat"))?;
    writeln!(cost, "{}", header(&["J"]))?;
    let mut acc = vec![0.0; n];
    for (k, step) in trace.steps.iter().enumerate() {
        write!(cost, "{}", num(k as f64 * sc.dt))?;
        for (i, a) in step.agents.iter().enumerate() {
            let q = if k == trace.horizon() {
                weights.qm[i]
            } else {
                weights.q[i]
            };
            acc[i] += a.eps.dot(&(q * a.eps));
            if let Some(u) = a.control {
                acc[i] += u.dot(&(weights.r[i] * u));
            }
            write!(cost, " {}", num(acc[i]))?;
        }
        writeln!(cost)?;
    }
    cost.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct WeightsDoc {
    q: Vec<[[f64; 2]; 2]>,
    qm: Vec<[[f64; 2]; 2]>,
    r: Vec<[[f64; 2]; 2]>,
    horizon: usize,
}

fn rows(m: &nalgebra::Matrix2<f64>) -> [[f64; 2]; 2] {
    [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]]
}

#[derive(Serialize)]
struct MonteCarloDoc<'a> {
    trials: usize,
    cost: &'a [sim::Estimate],
    cost_axes: &'a [[sim::Estimate; 2]],
    total_cost: sim::Estimate,
    gamma: &'a [[sim::Estimate; 2]],
    mean_gamma: sim::Estimate,
    final_true_spread: sim::Estimate,
    rendezvous_fraction: f64,
    predicted_total_cost: f64,
    trigger_error_bound: Option<f64>,
    peak_trigger_moment: f64,
}

#[derive(Serialize)]
struct StabilityDoc {
    certified: bool,
    rho: Option<f64>,
    mu_max: f64,
    kappa_max: f64,
    kappa_min: f64,
    initial_mean_square: f64,
    violations: usize,
}

#[derive(Serialize)]
pub struct RunSummary<'a> {
    scenario: &'a str,
    seed: u64,
    trigger: String,
    agents: usize,
    dt: f64,
    reference: [f64; 2],
    rendezvous_radius: f64,
    weights: WeightsDoc,
    trace: &'a TraceSummary,
    monte_carlo: MonteCarloDoc<'a>,
    stability: Option<StabilityDoc>,
}

impl<'a> RunSummary<'a> {
    pub fn new(
        prep: &'a Prepared,
        trace: &'a TraceSummary,
        mc: &'a MonteCarlo,
    ) -> Result<Self, Failure> {
        let sc = &prep.scenario;
        let w = sc.weights.with_horizon(trace.steps);
        let stability = if sc.agents() >= 2 && !trace.stopped_early {
            let r = sim::stability_bound(prep, mc)?;
            Some(StabilityDoc {
                certified: r.certified,
                rho: r.rho,
                mu_max: r.mu_max,
                kappa_max: r.kappa_max,
                kappa_min: r.kappa_min,
                initial_mean_square: r.initial_mean_square,
                violations: r.violations.len(),
            })
        } else {
            None
        };
        Ok(RunSummary {
            scenario: &sc.name,
            seed: sc.seed,
            trigger: sc.trigger.label(),
            agents: sc.agents(),
            dt: sc.dt,
            reference: [sc.reference[0], sc.reference[1]],
            rendezvous_radius: sim::RENDEZVOUS_RADIUS,
            weights: WeightsDoc {
                q: w.q.iter().map(rows).collect(),
                qm: w.qm.iter().map(rows).collect(),
                r: w.r.iter().map(rows).collect(),
                horizon: w.horizon,
            },
            trace,
            monte_carlo: MonteCarloDoc {
                trials: mc.trials,
                cost: &mc.cost,
                cost_axes: &mc.cost_axes,
                total_cost: mc.total_cost,
                gamma: &mc.gamma,
                mean_gamma: mc.mean_gamma,
                final_true_spread: mc.final_true_spread,
                rendezvous_fraction: mc.rendezvous_fraction,
                predicted_total_cost: prep.predicted_cost(mc)?,
                trigger_error_bound: sim::analytic_trigger_bound(&sc.trigger, sc.agents(), mc),
                peak_trigger_moment: mc.trigger_moment.iter().copied().fold(0.0, f64::max),
            },
            stability,
        })
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let mut f = create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

fn robot_header(first: &str, n: usize, suffix: &[&str]) -> Vec<String> {
    let mut h = vec![first.to_string()];
    for s in suffix {
        h.extend((0..n).map(|i| format!("{s}{i}")));
    }
    h
}

/// Rows are triggers, columns robots.
pub fn write_gamma_table(
    path: &Path,
    rows: &[(TriggerSpec, MonteCarlo)],
    axis: usize,
) -> Result<(), Failure> {
    let n = rows[0].1.gamma.len();
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(robot_header("trigger", n, &["robot_", "stderr_"]))?;
    for (spec, mc) in rows {
        let mut rec = vec![spec.label()];
        rec.extend(mc.gamma.iter().map(|g| num(g[axis].mean)));
        rec.extend(mc.gamma.iter().map(|g| opt(g[axis].std_error)));
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_cost_table(path: &Path, rows: &[(TriggerSpec, MonteCarlo)]) -> Result<(), Failure> {
    let n = rows[0].1.cost.len();
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = robot_header("trigger", n, &["J_", "stderr_"]);
    header.extend(["total".to_string(), "total_stderr".to_string()]);
    w.write_record(header)?;
    for (spec, mc) in rows {
        let mut rec = vec![spec.label()];
        rec.extend(mc.cost.iter().map(|c| num(c.mean)));
        rec.extend(mc.cost.iter().map(|c| opt(c.std_error)));
        rec.push(num(mc.total_cost.mean));
        rec.push(opt(mc.total_cost.std_error));
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_frontier(
    path: &Path,
    param: SweepParam,
    points: &[FrontierPoint],
) -> Result<(), Failure> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record([param.name(), "gamma_mean", "cost_mean", "cost_stderr"])?;
    for p in points {
        w.write_record([
            num(p.value),
            num(p.gamma.mean),
            num(p.cost.mean),
            opt(p.cost.std_error),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_bound(path: &Path, report: &StabilityReport) -> Result<(), Failure> {
    let mut f = create(path)?;
    writeln!(f, "# k empirical bound")?;
    for (k, (e, b)) in report.empirical.iter().zip(&report.bound).enumerate() {
        writeln!(f, "{k} {} {}", num(*e), num(*b))?;
    }
    f.flush()?;
    Ok(())
}
