use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use lanefree::capacity::{lanefree_capacity, signalized_capacity, CapacityError, CapacityResult, Regime, TerminalReason, SUMMARY_HEADER};
use lanefree::config::{ConfigError, ScenarioFile};
use lanefree::ocp::{solve_robust, validate_solution, write_summary_csv, write_trajectory_csv, OcpError, OcpSolution, OcpStatus, ScenarioError};
use lanefree::signalized::{demand_arrivals, family_arrivals, max_discharge_rate, simulate, write_queue_csv, write_vehicle_csv, Controller};
use lanefree::sweep::{run_sweep, write_fit_csv, write_svg, SweepGrid, SweepOptions};

#[derive(Parser)]
#[command(name = "lanefree", version, about = "Capacity of lane-free and signalised four-legged intersections")]
struct Cli {
    /// Worker threads for the parallel parts (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed of the signalised runs; overrides the scenario file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (for `init`, the file to write).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a scenario template.
    Init,
    /// Solve the listed vehicles as one crossing and validate the result.
    Solve(ScenarioArg),
    /// Capacity of one or more regimes.
    Capacity {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long, value_enum, default_values_t = [RegimeArg::LaneFree])]
        regime: Vec<RegimeArg>,
    },
    /// Simulate one signalised batch.
    SimulateSignal {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long, value_enum)]
        controller: Option<RegimeArg>,
        /// Batch size.
        #[arg(long, default_value_t = 20)]
        n: usize,
        /// Draw arrivals from the demand process instead of the queued family.
        #[arg(long)]
        demand: bool,
    },
    /// Sensitivity sweep over v_max, a_max and v_init.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long, value_delimiter = ',')]
        v_max: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        a_max: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        v_init: Option<Vec<f64>>,
        /// Regimes to sweep; `signalised` selects both controllers.
        #[arg(long, value_enum)]
        regime: Vec<SweepRegimeArg>,
        /// Keep only the first points in grid order.
        #[arg(long)]
        points: Option<usize>,
        /// Lane-free batch size per point.
        #[arg(long, default_value_t = 3)]
        n: usize,
        /// Full N_max search per lane-free point.
        #[arg(long)]
        full_search: bool,
        /// Also write an SVG plot.
        #[arg(long)]
        plot: bool,
        /// Relative tolerance of the plateau detection.
        #[arg(long, default_value_t = 0.01)]
        plateau_tol: f64,
    },
    /// Check a scenario file, and optionally a saved solution against it.
    Validate {
        #[command(flatten)]
        scenario: ScenarioArg,
        /// A `solution.json` written by `solve`.
        #[arg(long)]
        solution: Option<PathBuf>,
        #[arg(long)]
        dense_factor: Option<usize>,
    },
}

#[derive(Args)]
struct ScenarioArg {
    /// Scenario file (JSON).
    scenario: PathBuf,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum RegimeArg {
    LaneFree,
    Webster,
    MaxPressure,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum SweepRegimeArg {
    LaneFree,
    Webster,
    MaxPressure,
    Signalised,
}

impl From<RegimeArg> for Regime {
    fn from(r: RegimeArg) -> Self {
        match r {
            RegimeArg::LaneFree => Regime::LaneFree,
            RegimeArg::Webster => Regime::Webster,
            RegimeArg::MaxPressure => Regime::MaxPressure,
        }
    }
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(m: impl std::fmt::Display) -> Self {
        Self { code: 2, message: m.to_string() }
    }
    fn infeasible(m: impl std::fmt::Display) -> Self {
        Self { code: 3, message: m.to_string() }
    }
    fn validation(m: impl std::fmt::Display) -> Self {
        Self { code: 4, message: m.to_string() }
    }
    fn internal(m: impl std::fmt::Display) -> Self {
        Self { code: 5, message: m.to_string() }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::input(e)
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Overlap { .. } | ScenarioError::RoadOverlap { .. } => Failure::infeasible(e),
            _ => Failure::input(e),
        }
    }
}

impl From<OcpError> for Failure {
    fn from(e: OcpError) -> Self {
        match e {
            OcpError::Scenario(s) => s.into(),
            OcpError::Config(_) => Failure::input(e),
            _ => Failure::internal(e),
        }
    }
}

impl From<CapacityError> for Failure {
    fn from(e: CapacityError) -> Self {
        match e {
            CapacityError::Scenario { source, .. } => source.into(),
            CapacityError::Solve { source, .. } => source.into(),
            CapacityError::NothingPassed(_) => Failure::infeasible(e),
            CapacityError::Grid | CapacityError::Simulation { .. } => Failure::input(e),
            CapacityError::NonPositiveTime(_) => Failure::internal(e),
        }
    }
}

type Outcome = Result<(), Failure>;

fn out_dir(cli_out: &Option<PathBuf>) -> Result<PathBuf, Failure> {
    let dir = cli_out.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir).map_err(|e| Failure::internal(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| Failure::internal(format!("{}: {e}", path.display())))
}

fn io<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, Failure> {
    r.map_err(Failure::internal)
}

fn load(arg: &ScenarioArg, seed: Option<u64>) -> Result<ScenarioFile, Failure> {
    let mut file = ScenarioFile::load(&arg.scenario)?;
    if seed.is_some() {
        file.signal.seed = seed;
    }
    Ok(file)
}

fn init(out: &Option<PathBuf>) -> Outcome {
    let text = ScenarioFile::template().to_json();
    match out {
        Some(path) => io(fs::write(path, text)),
        None => io(std::io::stdout().write_all(text.as_bytes())),
    }
}

fn write_solution(dir: &Path, sol: &OcpSolution, report: Option<&lanefree::ocp::ValidationReport>) -> Outcome {
    io(write_trajectory_csv(sol, create(dir, "trajectory.csv")?))?;
    io(write_summary_csv(sol, report, create(dir, "summary.csv")?))?;
    io(serde_json::to_writer_pretty(create(dir, "solution.json")?, sol))?;
    if let Some(r) = report {
        io(serde_json::to_writer_pretty(create(dir, "validation.json")?, r))?;
    }
    Ok(())
}

fn solve(cli: &Cli, arg: &ScenarioArg) -> Outcome {
    let file = load(arg, cli.seed)?;
    let scn = file.crossing()?;
    let dir = out_dir(&cli.out)?;
    let deadline = file.time_limit().map(|d| Instant::now() + d);
    let out = solve_robust(&scn, &file.transcription(), None, &file.policy(), deadline)?;
    write_solution(&dir, &out.solution, out.report.as_ref())?;
    let sol = &out.solution;
    println!("status={} t_f={:.6} K={} iterations={}", sol.status, sol.t_f, sol.intervals, sol.iterations);
    match (&sol.status, &out.report) {
        (OcpStatus::Optimal, Some(r)) if r.passed => Ok(()),
        (OcpStatus::Optimal, Some(r)) => Err(Failure::validation(r.messages.join("; "))),
        (OcpStatus::Infeasible, _) => Err(Failure::infeasible("the crossing is locally infeasible")),
        (OcpStatus::Aborted, _) => {
            eprintln!("warning: time limit reached before convergence");
            Err(Failure::validation("no converged solution within the time limit"))
        }
        (status, _) => Err(Failure::validation(format!("solver ended with status {status}"))),
    }
}

fn signal_result(file: &ScenarioFile, controller: Controller) -> Result<CapacityResult, Failure> {
    let grid = &file.signal.n_grid;
    let fam = file.signal_family(grid.last().copied().unwrap_or(1));
    Ok(signalized_capacity(|n| Ok(family_arrivals(&fam, n)), &file.sim_config(controller), grid)?)
}

fn capacity(cli: &Cli, arg: &ScenarioArg, regimes: &[RegimeArg]) -> Outcome {
    let file = load(arg, cli.seed)?;
    let dir = out_dir(&cli.out)?;
    let mut regimes: Vec<Regime> = regimes.iter().map(|&r| r.into()).collect();
    regimes.dedup();
    let mut results = Vec::new();
    for regime in regimes {
        let res = match regime {
            Regime::LaneFree => {
                let mut opts = file.lanefree_options();
                opts.deadline = file.time_limit().map(|d| Instant::now() + d);
                let fam = file.family();
                let lf = lanefree_capacity(|n| fam.build(n), &file.transcription(), &opts)?;
                println!("lane-free t_f spread over passing N: {:.6} s", lf.t_f_spread);
                write_solution(&dir, &lf.solution, Some(&lf.report))?;
                lf.result
            }
            Regime::Webster => signal_result(&file, Controller::Webster)?,
            Regime::MaxPressure => signal_result(&file, Controller::MaxPressure)?,
        };
        io(res.write_curve_csv(create(&dir, &format!("capacity_{}.csv", res.regime))?))?;
        if res.terminal_reason == TerminalReason::Budget {
            eprintln!("warning: {} search stopped at the N budget before capacity was reached", res.regime);
        }
        results.push(res);
    }
    let mut summary = create(&dir, "capacity_summary.csv")?;
    io(writeln!(summary, "{SUMMARY_HEADER}"))?;
    println!("{SUMMARY_HEADER}");
    for r in &results {
        io(writeln!(summary, "{}", r.summary_line()))?;
        println!("{}", r.summary_line());
    }
    io(summary.flush())?;
    if let Some(lf) = results.iter().find(|r| r.regime == Regime::LaneFree) {
        let others: Vec<&CapacityResult> = results.iter().filter(|r| r.regime != Regime::LaneFree).collect();
        if !others.is_empty() {
            let mut cmp = create(&dir, "comparison.csv")?;
            io(writeln!(cmp, "signalised_regime,C_lane_free,C_signalised,improvement"))?;
            for s in others {
                let ratio = lf.c / s.c - 1.0;
                io(writeln!(cmp, "{},{:.3},{:.3},{:.6}", s.regime, lf.c, s.c, ratio))?;
                println!("improvement over {}: {:.1}%", s.regime, 100.0 * ratio);
            }
            io(cmp.flush())?;
        }
    }
    Ok(())
}

fn simulate_signal(cli: &Cli, arg: &ScenarioArg, controller: Option<RegimeArg>, n: usize, demand: bool) -> Outcome {
    let file = load(arg, cli.seed)?;
    let controller = match controller {
        None => file.signal.controller,
        Some(RegimeArg::Webster) => Controller::Webster,
        Some(RegimeArg::MaxPressure) => Controller::MaxPressure,
        Some(RegimeArg::LaneFree) => return Err(Failure::input("simulate-signal needs a signal controller")),
    };
    let arrivals = if demand {
        demand_arrivals(&file.signal.demand, n, file.signal.seed.unwrap_or(0)).map_err(Failure::input)?
    } else {
        family_arrivals(&file.signal_family(n), n)
    };
    let res = simulate(&file.sim_config(controller), &arrivals).map_err(Failure::input)?;
    let dir = out_dir(&cli.out)?;
    io(write_vehicle_csv(&res, create(&dir, "vehicles.csv")?))?;
    io(write_queue_csv(&res, create(&dir, "queues.csv")?))?;
    println!(
        "controller={} N={n} exited={} T_batch={} throughput={:.3} max_discharge={:.1}",
        res.controller,
        res.exited(),
        res.t_batch.map_or_else(|| "-".into(), |t| format!("{t:.3}")),
        res.throughput,
        max_discharge_rate(&res)
    );
    if res.gridlock {
        return Err(Failure::infeasible("gridlock: no movement while vehicles were waiting"));
    }
    if !res.completed() {
        eprintln!("warning: the batch did not clear within max_time");
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn sweep(
    cli: &Cli,
    arg: &ScenarioArg,
    v_max: &Option<Vec<f64>>,
    a_max: &Option<Vec<f64>>,
    v_init: &Option<Vec<f64>>,
    regimes: &[SweepRegimeArg],
    points: Option<usize>,
    n: usize,
    full_search: bool,
    plot: bool,
    plateau_tol: f64,
) -> Outcome {
    let file = load(arg, cli.seed)?;
    let mut grid = SweepGrid::default();
    if let Some(v) = v_max {
        grid.v_max = v.clone();
    }
    if let Some(a) = a_max {
        grid.a_max = a.clone();
    }
    if let Some(v) = v_init {
        grid.v_init = v.clone();
    }
    if !regimes.is_empty() {
        grid.regimes.clear();
        for r in regimes {
            let add: &[Regime] = match r {
                SweepRegimeArg::LaneFree => &[Regime::LaneFree],
                SweepRegimeArg::Webster => &[Regime::Webster],
                SweepRegimeArg::MaxPressure => &[Regime::MaxPressure],
                SweepRegimeArg::Signalised => &[Regime::Webster, Regime::MaxPressure],
            };
            for &x in add {
                if !grid.regimes.contains(&x) {
                    grid.regimes.push(x);
                }
            }
        }
    }
    let opts = SweepOptions {
        n,
        full_search,
        n_budget: file.capacity.n_max_budget,
        signal_grid: file.signal.n_grid.clone(),
        seed: file.signal.seed,
        turn_ratios: file.signal.demand.turn_ratios,
        policy: file.policy(),
        point_budget: file.time_limit(),
        max_points: points,
    };
    let table = run_sweep(&grid, &file.family(), &file.transcription(), &file.sim_config(file.signal.controller), &opts).map_err(Failure::input)?;
    let dir = out_dir(&cli.out)?;
    io(table.write_csv(create(&dir, "sweep.csv")?))?;
    io(write_fit_csv(&table.fits(plateau_tol), create(&dir, "sweep_fit.csv")?))?;
    if plot {
        io(write_svg(&table, create(&dir, "sweep.svg")?))?;
    }
    let gaps = table.rows.iter().filter(|r| r.c.is_none()).count();
    println!("{} rows, {gaps} gaps", table.rows.len());
    if gaps > 0 {
        eprintln!("warning: {gaps} grid points failed and are recorded as gap rows");
    }
    Ok(())
}

fn validate(cli: &Cli, arg: &ScenarioArg, solution: &Option<PathBuf>, dense_factor: Option<usize>) -> Outcome {
    let file = load(arg, cli.seed)?;
    let scn = file.crossing()?;
    println!("scenario ok: {} vehicles", scn.n_vehicles());
    let Some(path) = solution else {
        return Ok(());
    };
    let text = fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    let sol: OcpSolution = serde_json::from_str(&text).map_err(|e| Failure::input(ConfigError::from(e)))?;
    if sol.states.len() != scn.n_vehicles() {
        return Err(Failure::input(format!(
            "solution has {} vehicles, scenario has {}",
            sol.states.len(),
            scn.n_vehicles()
        )));
    }
    let report = validate_solution(&sol, &scn, dense_factor.unwrap_or(file.solver.dense_factor));
    println!(
        "worst pair margin {:?}, worst road margin {:?}, passed {}",
        report.worst_pair_margin, report.worst_road_margin, report.passed
    );
    if report.passed {
        Ok(())
    } else {
        Err(Failure::validation(report.messages.join("; ")))
    }
}

fn run(cli: &Cli) -> Outcome {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(Failure::internal)?;
    }
    match &cli.command {
        Command::Init => init(&cli.out),
        Command::Solve(a) => solve(cli, a),
        Command::Capacity { scenario, regime } => capacity(cli, scenario, regime),
        Command::SimulateSignal {
            scenario,
            controller,
            n,
            demand,
        } => simulate_signal(cli, scenario, *controller, *n, *demand),
        Command::Sweep {
            scenario,
            v_max,
            a_max,
            v_init,
            regime,
            points,
            n,
            full_search,
            plot,
            plateau_tol,
        } => sweep(cli, scenario, v_max, a_max, v_init, regime, *points, *n, *full_search, *plot, *plateau_tol),
        Command::Validate {
            scenario,
            solution,
            dense_factor,
        } => validate(cli, scenario, solution, *dense_factor),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
