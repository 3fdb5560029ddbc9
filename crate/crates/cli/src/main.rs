use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use etlqg::config::{load_scenario, parse_trigger_spec, Scenario, TriggerSpec};
use etlqg::scheduler::TriggerKind;
use etlqg::sim::{self, Prepared, SweepParam};

mod output;

#[derive(Parser)]
#[command(
    name = "etlqg",
    version,
    about = "Event-triggered LQG rendezvous simulator"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Override the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the scenario trial count.
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Output directory (default: the scenario's out_dir, else ./out).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Also write plot data files.
    #[arg(long, global = true)]
    plots: bool,
    /// Validate the scenario and print it with defaults resolved.
    #[arg(long, global = true)]
    dry_run: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario: trace of trial 0 plus Monte Carlo summary.
    Run { scenario: PathBuf },
    /// Compare triggers on common random numbers.
    Compare {
        scenario: PathBuf,
        /// Trigger as `kind:key=value,...`; repeat. Defaults to the
        /// scenario's [[compare]] list.
        #[arg(long = "trigger")]
        triggers: Vec<String>,
    },
    /// Trace the Γ/J frontier along one trigger parameter.
    Sweep {
        scenario: PathBuf,
        #[arg(long, value_enum)]
        param: Param,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        grid: Vec<f64>,
        /// Base trigger; defaults to the scenario's trigger.
        #[arg(long)]
        trigger: Option<String>,
    },
    /// Check the mean-square disagreement bound by Monte Carlo.
    ValidateBound { scenario: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Param {
    Alpha,
    Beta,
    Gamma,
    Period,
}

impl From<Param> for SweepParam {
    fn from(p: Param) -> Self {
        match p {
            Param::Alpha => SweepParam::Alpha,
            Param::Beta => SweepParam::Beta,
            Param::Gamma => SweepParam::Gamma,
            Param::Period => SweepParam::Period,
        }
    }
}

#[derive(Debug)]
enum Failure {
    Lib(etlqg::Error),
    Io(String),
}

impl From<etlqg::Error> for Failure {
    fn from(e: etlqg::Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                etlqg::Error::Config { .. } => 2,
                etlqg::Error::Numerical { .. } => 3,
                etlqg::Error::Logic(_) => 1,
            })
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn load(path: &Path, g: &Global) -> Result<Scenario, Failure> {
    let mut sc = load_scenario(path)?;
    if let Some(seed) = g.seed {
        sc.seed = seed;
    }
    if let Some(trials) = g.trials {
        if trials == 0 {
            return Err(etlqg::Error::config("--trials", "must be ≥ 1").into());
        }
        sc.trials = trials;
    }
    if let Some(dir) = &g.out_dir {
        sc.out_dir = Some(dir.clone());
    }
    Ok(sc)
}

fn out_dir(sc: &Scenario) -> Result<PathBuf, Failure> {
    let dir = sc.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir).map_err(|e| Failure::Io(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn dispatch(cli: &Cli) -> Outcome {
    let g = &cli.global;
    let path = match &cli.command {
        Command::Run { scenario }
        | Command::Compare { scenario, .. }
        | Command::Sweep { scenario, .. }
        | Command::ValidateBound { scenario } => scenario,
    };
    let sc = load(path, g)?;
    // reject bad trigger arguments before anything runs
    let compare = match &cli.command {
        Command::Compare { triggers, .. } => Some(compare_list(&sc, triggers)?),
        _ => None,
    };
    let sweep_base = match &cli.command {
        Command::Sweep {
            grid,
            trigger,
            param,
            ..
        } => {
            if grid.len() < 2 {
                return Err(
                    etlqg::Error::config("--grid", "a sweep needs at least two values").into(),
                );
            }
            let base = match trigger {
                Some(t) => parse_trigger_spec(t, sc.trigger.axes)?,
                None => sc.trigger.clone(),
            };
            let p = SweepParam::from(*param);
            for &v in grid {
                p.apply(base.kind, v)?;
            }
            Some(base)
        }
        _ => None,
    };
    if g.dry_run {
        print!("{}", sc.to_toml());
        return Ok(());
    }
    let prep = Prepared::new(sc)?;
    match &cli.command {
        Command::Run { .. } => cmd_run(&prep, g.plots),
        Command::Compare { .. } => cmd_compare(&prep, &compare.unwrap_or_default()),
        Command::Sweep { param, grid, .. } => {
            cmd_sweep(&prep, &sweep_base.expect("checked"), (*param).into(), grid)
        }
        Command::ValidateBound { .. } => cmd_validate_bound(&prep),
    }
}

fn compare_list(sc: &Scenario, triggers: &[String]) -> Result<Vec<TriggerSpec>, Failure> {
    let list = if triggers.is_empty() {
        sc.compare.clone()
    } else {
        triggers
            .iter()
            .map(|t| parse_trigger_spec(t, sc.trigger.axes))
            .collect::<etlqg::Result<Vec<_>>>()?
    };
    if list.len() < 2 {
        return Err(
            etlqg::Error::config("compare", "a comparison needs at least two triggers").into(),
        );
    }
    Ok(list)
}

fn cmd_run(prep: &Prepared, plots: bool) -> Outcome {
    let sc = &prep.scenario;
    let dir = out_dir(sc)?;
    let trace = prep.run_trial(&sc.trigger, 0)?;
    let summary = prep.summarize(&trace)?;
    let mc = sim::run_monte_carlo(prep, &sc.trigger, sc.trials)?;
    output::write_trace(&dir.join("trace.csv"), &trace)?;
    if plots {
        output::write_plots(&dir, prep, &trace)?;
    }
    let doc = output::RunSummary::new(prep, &summary, &mc)?;
    output::write_json(&dir.join("summary.json"), &doc)?;
    println!(
        "{}: {} robots, {} steps, trigger {}",
        sc.name,
        sc.agents(),
        summary.steps,
        sc.trigger.label()
    );
    for i in 0..sc.agents() {
        println!(
            "  robot {i}: J = {:.6}  Γx = {:.3}  Γy = {:.3}",
            summary.cost[i], summary.gamma[i][0], summary.gamma[i][1]
        );
    }
    println!(
        "  final max pairwise distance: {:.4} m (true)",
        summary.final_true_spread
    );
    println!(
        "  {} trials: mean ΣJ = {:.6}, rendezvous in {:.0}% of trials",
        mc.trials,
        mc.total_cost.mean,
        100.0 * mc.rendezvous_fraction
    );
    Ok(())
}

fn cmd_compare(prep: &Prepared, triggers: &[TriggerSpec]) -> Outcome {
    let sc = &prep.scenario;
    let dir = out_dir(sc)?;
    let rows = sim::compare_triggers(prep, triggers, sc.trials)?;
    output::write_gamma_table(&dir.join("gamma_x.csv"), &rows, 0)?;
    output::write_gamma_table(&dir.join("gamma_y.csv"), &rows, 1)?;
    output::write_cost_table(&dir.join("cost.csv"), &rows)?;

    println!("{} trials per trigger, common random numbers", sc.trials);
    for (spec, mc) in &rows {
        let gx: Vec<String> = mc
            .gamma
            .iter()
            .map(|g| format!("{:.3}", g[0].mean))
            .collect();
        println!(
            "  {:<42} Γx [{}]  mean ΣJ {:.5}",
            spec.label(),
            gx.join(" "),
            mc.total_cost.mean
        );
    }
    let baseline = rows
        .iter()
        .find(|(s, _)| s.kind == TriggerKind::TimeTriggered { period: 1 });
    if let Some((_, base)) = baseline {
        let dominated = rows.iter().all(|(_, mc)| {
            mc.gamma
                .iter()
                .zip(&base.gamma)
                .all(|(g, b)| b[0].mean >= g[0].mean && b[1].mean >= g[1].mean)
        });
        println!(
            "Γ ordering: time-triggered ≥ every other trigger on both axes: {}",
            if dominated { "yes" } else { "no" }
        );
    }
    let mut order: Vec<_> = rows
        .iter()
        .map(|(s, mc)| (s.label(), mc.mean_gamma.mean))
        .collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let ranked: Vec<String> = order.iter().map(|(l, g)| format!("{l} ({g:.3})")).collect();
    println!("Γ ranking: {}", ranked.join(" > "));
    Ok(())
}

fn cmd_sweep(prep: &Prepared, base: &TriggerSpec, param: SweepParam, grid: &[f64]) -> Outcome {
    let sc = &prep.scenario;
    let dir = out_dir(sc)?;
    let points = sim::sweep(prep, base, param, grid, sc.trials)?;
    output::write_frontier(&dir.join("frontier.csv"), param, &points)?;
    println!(
        "{} sweep of {} ({} trials per point)",
        param.name(),
        base.kind.name(),
        sc.trials
    );
    for p in &points {
        println!(
            "  {:>12e}  Γ {:.4}  ΣJ {:.5}",
            p.value, p.gamma.mean, p.cost.mean
        );
    }
    Ok(())
}

fn cmd_validate_bound(prep: &Prepared) -> Outcome {
    let sc = &prep.scenario;
    if sc.trials < 50 {
        eprintln!(
            "warning: {} trials is few for a mean-square estimate (50 or more advised)",
            sc.trials
        );
    }
    let dir = out_dir(sc)?;
    let mc = sim::run_monte_carlo(prep, &sc.trigger, sc.trials)?;
    let report = sim::stability_bound(prep, &mc)?;
    output::write_json(&dir.join("stability.json"), &report)?;
    output::write_bound(&dir.join("bound.dat"), &report)?;
    if report.certified {
        println!(
            "CERTIFIED rho = {:.6}, mu = {:.4e}, {} of {} steps above the bound",
            report.rho.unwrap_or(0.0),
            report.mu_max,
            report.violations.len(),
            report.empirical.len()
        );
    } else {
        println!("NOT-CERTIFIED no decrease rate rho ≥ 1e-6 satisfies the Lyapunov condition");
    }
    Ok(())
}
