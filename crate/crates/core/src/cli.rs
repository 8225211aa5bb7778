//! `etlqg` command-line front end.
//!
//! Every subcommand loads a problem (`--config` or the Boeing-747 preset),
//! applies overrides and calls straight into the library. Files go to
//! `--out` and are never overwritten unless `--force` is given.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;

use crate::covariance::{build_tables, GramianTable};
use crate::error::{Error, Result};
use crate::lqg::solve_riccati;
use crate::milp::{build_milp, export_lp};
use crate::model::{load_problem, Penalty, Problem};
use crate::scheduler::{certify, ratio_bounds, solve_bnb, solve_enumerate, SolveResult};
use crate::sim::{
    aggregate, aggregate_csv, fmt_float, frequency_csv, run_seeds, summary_csv, sweep_p,
    trace_csv, AggregateStats, Policy, SimContext, SimOptions,
};

/// Environment variable that sets the default base seed.
pub const SEED_ENV: &str = "ETLQG_SEED0";
pub const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Parser)]
#[command(name = "etlqg", version, about = "Event-triggered LQG scheduling over erasure channels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Dump P, S, L, Γ and W for every step as CSV.
    Riccati(Common),
    /// Solve one planning window and report Θ*, J* and the certificate.
    Schedule(WindowArgs),
    /// Evaluate the one-step certificate for an innovation.
    Certify(WindowArgs),
    /// Write the window MILP as an LP file.
    ExportMilp(WindowArgs),
    /// Simulate one seed under one policy and write the per-step trace.
    Simulate(SimulateArgs),
    /// Aggregate statistics over a range of seeds.
    Montecarlo(BatchArgs),
    /// Aggregate statistics for both policies over a grid of p.
    SweepP(SweepArgs),
    /// Full Boeing-747 experiment: both policies, summary, aggregate and frequency CSVs.
    Bench747(BatchArgs),
    /// Lossy/lossless ratio bounds for one window.
    Bounds(WindowArgs),
    /// Write the Boeing-747 preset as a JSON config.
    Preset(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Problem config (JSON). Defaults to the Boeing-747 preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Override the channel success probability.
    #[arg(long)]
    p: Option<f64>,
    /// Override the per-attempt penalty.
    #[arg(long)]
    lambda: Option<f64>,
    /// Override the horizon T.
    #[arg(long)]
    horizon: Option<usize>,
    /// Overwrite existing output files.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct WindowArgs {
    #[command(flatten)]
    common: Common,
    /// Innovation e_s as comma-separated values (default: zero vector).
    #[arg(long, allow_hyphen_values = true)]
    es: Option<String>,
    /// Absolute start time of the window.
    #[arg(long, default_value_t = 0)]
    k: usize,
    /// Use exhaustive enumeration instead of branch and bound.
    #[arg(long)]
    enumerate: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PolicyArg {
    Mpc,
    Oneshot,
}

impl From<PolicyArg> for Policy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Mpc => Policy::Mpc,
            PolicyArg::Oneshot => Policy::OneShot,
        }
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "mpc")]
    policy: PolicyArg,
}

#[derive(Debug, Args)]
struct BatchArgs {
    #[command(flatten)]
    common: Common,
    /// Base seed; runs use seed..seed+seeds.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 100)]
    seeds: usize,
    /// Restrict to one policy (default: both).
    #[arg(long, value_enum)]
    policy: Option<PolicyArg>,
    /// Worker threads for independent runs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 100)]
    seeds: usize,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Comma-separated success probabilities.
    #[arg(long, default_value = "0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
    grid: String,
}

/// Run the CLI on `argv` (including the program name). Returns the exit code:
/// 0 on success, 2 on invalid input, 1 on any other failure.
pub fn run_cli(argv: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(report) => {
            print!("{report}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_user_error() {
                2
            } else {
                1
            }
        }
    }
}

fn dispatch(cmd: Command) -> Result<String> {
    match cmd {
        Command::Riccati(c) => cmd_riccati(&c),
        Command::Schedule(w) => cmd_schedule(&w),
        Command::Certify(w) => cmd_certify(&w),
        Command::ExportMilp(w) => cmd_export_milp(&w),
        Command::Simulate(s) => cmd_simulate(&s),
        Command::Montecarlo(b) => cmd_montecarlo(&b),
        Command::SweepP(s) => cmd_sweep(&s),
        Command::Bench747(b) => cmd_bench(&b),
        Command::Bounds(w) => cmd_bounds(&w),
        Command::Preset(c) => {
            let path = write_output(&c.out, "boeing747.json", &Problem::boeing747().to_json(), c.force)?;
            Ok(format!("wrote {}\n", path.display()))
        }
    }
}

fn base_seed(flag: Option<u64>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Validation(format!("{SEED_ENV} must be a non-negative integer"))),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

fn load(common: &Common) -> Result<Problem> {
    let mut prob = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::Validation(format!("config: cannot read {}: {e}", path.display()))
            })?;
            load_problem(&text)?
        }
        None => Problem::boeing747(),
    };
    if let Some(h) = common.horizon {
        prob = prob.with_horizon(h)?;
    }
    if let Some(p) = common.p {
        prob = prob.with_p(p)?;
    }
    if let Some(l) = common.lambda {
        prob = prob.with_penalty(Penalty::Single(l))?;
    }
    Ok(prob)
}

fn parse_vector(text: Option<&str>, n: usize) -> Result<DVector<f64>> {
    let Some(text) = text else {
        return Ok(DVector::zeros(n));
    };
    let values: std::result::Result<Vec<f64>, _> =
        text.split(',').map(|s| s.trim().parse::<f64>()).collect();
    let values = values.map_err(|_| Error::Validation(format!("es: cannot parse '{text}'")))?;
    if values.len() != n {
        return Err(Error::Validation(format!(
            "es: expected {n} values, got {}",
            values.len()
        )));
    }
    Ok(DVector::from_vec(values))
}

fn write_output(dir: &Path, name: &str, contents: &str, force: bool) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    if path.exists() && !force {
        return Err(Error::Validation(format!(
            "out: {} exists; pass --force to overwrite",
            path.display()
        )));
    }
    std::fs::write(&path, contents)?;
    Ok(path)
}

fn cmd_riccati(c: &Common) -> Result<String> {
    let prob = load(c)?;
    let sol = solve_riccati(&prob)?;
    let mut csv = String::from("k,matrix,row,col,value\n");
    let mut emit = |k: usize, name: &str, m: &nalgebra::DMatrix<f64>| {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let _ = writeln!(csv, "{k},{name},{i},{j},{}", fmt_float(m[(i, j)]));
            }
        }
    };
    for k in 0..=prob.horizon {
        emit(k, "P", &sol.p[k]);
        if k < prob.horizon {
            emit(k, "S", &sol.s[k]);
            emit(k, "L", &sol.l[k]);
            emit(k, "Gamma", &sol.gamma[k]);
            emit(k, "W", &sol.w[k]);
        }
    }
    let path = write_output(&c.out, "riccati.csv", &csv, c.force)?;
    Ok(format!("wrote {}\n", path.display()))
}

struct Window {
    prob: Problem,
    sol: crate::lqg::RiccatiSolution,
    e_s: DVector<f64>,
    table: GramianTable,
}

fn window(w: &WindowArgs) -> Result<Window> {
    let prob = load(&w.common)?;
    if w.k >= prob.horizon {
        return Err(Error::Validation(format!(
            "k: window start {} must be below T = {}",
            w.k, prob.horizon
        )));
    }
    let e_s = parse_vector(w.es.as_deref(), prob.n())?;
    let sol = solve_riccati(&prob)?;
    let table = build_tables(&prob, &sol, w.k, &e_s);
    Ok(Window {
        prob,
        sol,
        e_s,
        table,
    })
}

fn solve(table: &GramianTable, p: f64, enumerate: bool) -> Result<SolveResult> {
    if enumerate {
        solve_enumerate(table, p)
    } else {
        Ok(solve_bnb(table, p, None))
    }
}

fn certificate_report(win: &Window, k: usize) -> String {
    let c = certify(&win.e_s, &win.sol.gamma[k], &win.sol.w[k], win.prob.p, win.prob.lambda());
    format!(
        "decision={}\nattempt_stat={}\nskip_stat={}\nlambda={}\n",
        c.decision.as_str(),
        fmt_float(c.attempt_stat),
        fmt_float(c.skip_stat),
        fmt_float(c.lambda)
    )
}

fn cmd_schedule(w: &WindowArgs) -> Result<String> {
    let win = window(w)?;
    let res = solve(&win.table, win.prob.p, w.enumerate)?;
    let mut out = format!(
        "window_start={}\nwindow_len={}\nsolver={}\nschedule={}\ncost={}\nattempts={}\nnodes={}\n",
        w.k,
        win.table.len(),
        if w.enumerate { "enumerate" } else { "bnb" },
        res.schedule,
        fmt_float(res.cost),
        res.schedule.attempts(),
        res.nodes_explored,
    );
    out.push_str(&certificate_report(&win, w.k));
    Ok(out)
}

fn cmd_certify(w: &WindowArgs) -> Result<String> {
    let win = window(w)?;
    Ok(certificate_report(&win, w.k))
}

fn cmd_export_milp(w: &WindowArgs) -> Result<String> {
    let win = window(w)?;
    let model = build_milp(&win.table, win.prob.p, win.prob.lambda())?;
    let name = format!("milp_k{}.lp", w.k);
    let path = write_output(&w.common.out, &name, &export_lp(&model), w.common.force)?;
    Ok(format!(
        "wrote {} ({} variables, {} constraints)\n",
        path.display(),
        model.variables.len(),
        model.constraints.len()
    ))
}

fn cmd_bounds(w: &WindowArgs) -> Result<String> {
    let win = window(w)?;
    let p = win.prob.p;
    let lossless = solve(&win.table, 1.0, w.enumerate)?;
    let lossy = solve(&win.table, p, w.enumerate)?;
    let rb = ratio_bounds(&lossless.schedule, &lossy.schedule, &win.table, p);
    Ok(format!(
        "p={}\nj1_star={}\njp_star={}\nschedule_lossless={}\nschedule_lossy={}\nc_max={}\nlower={}\nratio={}\nupper={}\n",
        fmt_float(p),
        fmt_float(lossless.cost),
        fmt_float(lossy.cost),
        lossless.schedule,
        lossy.schedule,
        rb.c_max,
        fmt_float(rb.lower),
        fmt_float(rb.ratio),
        fmt_float(rb.upper),
    ))
}

fn file_tag(policy: Policy) -> &'static str {
    match policy {
        Policy::Mpc => "mpc",
        Policy::OneShot => "oneshot",
    }
}

fn cmd_simulate(s: &SimulateArgs) -> Result<String> {
    let prob = load(&s.common)?;
    let seed = base_seed(s.seed)?;
    let policy = Policy::from(s.policy);
    let ctx = SimContext::from_problem(&prob)?;
    let rec = ctx.run(policy, seed, SimOptions::default());
    let name = format!("trace_{}_seed{seed}.csv", file_tag(policy));
    let path = write_output(&s.common.out, &name, &trace_csv(&rec), s.common.force)?;
    Ok(format!("wrote {}\n{}", path.display(), summary_csv(&[&rec])))
}

fn policies(arg: Option<PolicyArg>) -> Vec<Policy> {
    match arg {
        Some(p) => vec![p.into()],
        None => vec![Policy::OneShot, Policy::Mpc],
    }
}

fn check_batch(seeds: usize, jobs: usize) -> Result<()> {
    if seeds == 0 {
        return Err(Error::Validation("seeds must be at least 1".into()));
    }
    if jobs == 0 {
        return Err(Error::Validation("jobs must be at least 1".into()));
    }
    Ok(())
}

fn cmd_montecarlo(b: &BatchArgs) -> Result<String> {
    check_batch(b.seeds, b.jobs)?;
    let prob = load(&b.common)?;
    let seed0 = base_seed(b.seed)?;
    let ctx = SimContext::from_problem(&prob)?;
    let stats: Vec<AggregateStats> = policies(b.policy)
        .into_iter()
        .map(|pol| {
            let runs = run_seeds(&ctx, pol, b.seeds, seed0, b.jobs, SimOptions::default());
            aggregate(prob.p, &runs)
        })
        .collect();
    let csv = aggregate_csv(&stats.iter().collect::<Vec<_>>());
    let path = write_output(&b.common.out, "montecarlo.csv", &csv, b.common.force)?;
    Ok(format!("wrote {}\n{csv}", path.display()))
}

fn cmd_sweep(s: &SweepArgs) -> Result<String> {
    check_batch(s.seeds, s.jobs)?;
    let prob = load(&s.common)?;
    let seed0 = base_seed(s.seed)?;
    let grid: std::result::Result<Vec<f64>, _> =
        s.grid.split(',').map(|v| v.trim().parse::<f64>()).collect();
    let grid = grid.map_err(|_| Error::Validation(format!("grid: cannot parse '{}'", s.grid)))?;
    let points = sweep_p(&prob, &grid, s.seeds, seed0, s.jobs)?;
    let rows: Vec<&AggregateStats> = points.iter().flat_map(|pt| [&pt.oneshot, &pt.mpc]).collect();
    let csv = aggregate_csv(&rows);
    let path = write_output(&s.common.out, "sweep_p.csv", &csv, s.common.force)?;
    Ok(format!("wrote {}\n{csv}", path.display()))
}

fn cmd_bench(b: &BatchArgs) -> Result<String> {
    check_batch(b.seeds, b.jobs)?;
    if b.policy.is_some() {
        return Err(Error::Validation("policy: bench747 always runs both policies".into()));
    }
    let prob = load(&b.common)?;
    let seed0 = base_seed(b.seed)?;
    let ctx = SimContext::from_problem(&prob)?;
    let opts = SimOptions::default();
    let oneshot_runs = run_seeds(&ctx, Policy::OneShot, b.seeds, seed0, b.jobs, opts);
    let mpc_runs = run_seeds(&ctx, Policy::Mpc, b.seeds, seed0, b.jobs, opts);
    let oneshot = aggregate(prob.p, &oneshot_runs);
    let mpc = aggregate(prob.p, &mpc_runs);

    let table1 = summary_csv(&[&oneshot_runs[0], &mpc_runs[0]]);
    let table2 = aggregate_csv(&[&oneshot, &mpc]);
    let wins = oneshot_runs
        .iter()
        .zip(&mpc_runs)
        .filter(|(o, m)| m.total < o.total)
        .count();
    let mut paired = String::from("seed,total_oneshot,total_mpc,mpc_wins\n");
    for (o, m) in oneshot_runs.iter().zip(&mpc_runs) {
        let _ = writeln!(
            paired,
            "{},{},{},{}",
            o.seed,
            fmt_float(o.total),
            fmt_float(m.total),
            u8::from(m.total < o.total)
        );
    }
    let out = &b.common.out;
    let force = b.common.force;
    let files = [
        ("table1.csv", table1.clone()),
        ("table2.csv", table2.clone()),
        ("attempt_freq.csv", frequency_csv(&oneshot, &mpc)),
        ("paired.csv", paired),
        ("trace_oneshot.csv", trace_csv(&oneshot_runs[0])),
        ("trace_mpc.csv", trace_csv(&mpc_runs[0])),
    ];
    // Check before writing so a refused run leaves no partial output.
    if !force {
        for (name, _) in &files {
            if out.join(name).exists() {
                return Err(Error::Validation(format!(
                    "out: {} exists; pass --force to overwrite",
                    out.join(name).display()
                )));
            }
        }
    }
    for (name, contents) in &files {
        write_output(out, name, contents, true)?;
    }
    Ok(format!(
        "wrote {} files to {}\n{table1}{table2}mpc_win_rate={}\n",
        files.len(),
        out.display(),
        fmt_float(wins as f64 / b.seeds as f64)
    ))
}
