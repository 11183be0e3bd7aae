//! balance-forge command line: design allocation, randomness metrics,
//! simulation sweeps, rate regression, permutation inference, exhaustive
//! search, collision-kernel checks and table/figure reproduction.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 computation error.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use balance_forge::balance::ObjectiveKind;
use balance_forge::designs::{DesignMethod, Designer, DEFAULT_RERAND_MAX_ATTEMPTS};
use balance_forge::inference::{permutation_inference, ExperimentData};
use balance_forge::kernels::{
    analytic_collision, analytic_conditional, collision_density, conditional_collision, Dist,
    Side,
};
use balance_forge::optimal::enumerate_optimal;
use balance_forge::randomness::{estimate_pair_probabilities, randomness_report, ProbMode};
use balance_forge::simharness::{
    fit_rate_regression, read_records, reproduce, run_grid, write_records, CovariateDist,
};
use balance_forge::{load_covariates, standardize, CovariateMatrix64, Error};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version through the error path too.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = init_threads(cli.threads) {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parse(_)
        | Error::Shape(_)
        | Error::DegenerateCovariate { .. }
        | Error::Domain(_)
        | Error::SingularCovariance(_)
        | Error::Csv(_)
        | Error::Io(_) => 2,
        Error::TooLarge(_)
        | Error::ThresholdNotMet { .. }
        | Error::Bracket(_)
        | Error::RankDeficient(_) => 3,
        Error::Replicate { source, .. } => exit_code(source),
    }
}

fn init_threads(flag: Option<usize>) -> Result<(), String> {
    let threads = match flag {
        Some(t) => Some(t),
        None => match std::env::var("BALANCE_FORGE_THREADS") {
            Ok(v) => Some(
                v.parse::<usize>()
                    .map_err(|_| format!("BALANCE_FORGE_THREADS={v:?} is not a thread count"))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(t) = threads {
        if t == 0 {
            return Err("thread count must be at least 1".into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

#[derive(Parser)]
#[command(
    name = "balance-forge",
    version,
    about = "Covariate-balanced two-arm experimental design"
)]
struct Cli {
    /// Cap on worker threads (default: all cores; env BALANCE_FORGE_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Produce one allocation with the chosen design method.
    Design(DesignArgs),
    /// Estimate pairwise randomness metrics for a design method.
    Metrics(MetricsArgs),
    /// Sweep (n, p) grids and record per-replicate balance outcomes.
    Simulate(SimulateArgs),
    /// Fit the balance-rate regression to recorded simulation output.
    Rates(RatesArgs),
    /// Permutation test and confidence interval for the treatment effect.
    Infer(InferArgs),
    /// Exhaustively enumerate all balanced allocations.
    Optimal(OptimalArgs),
    /// Collision-density kernels by quadrature against closed forms.
    Theory(TheoryArgs),
    /// Regenerate the data behind the headline tables and figures.
    Reproduce(ReproduceArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodFlag {
    Greedy,
    GreedyRestarts,
    GreedyRestricted,
    GreedyStratified,
    Matched,
    RerandBest,
    RerandThreshold,
    Random,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ObjectiveFlag {
    L1,
    WeightedL1,
    Mahalanobis,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeFlag {
    Redraw,
    Fixed,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DistFlag {
    Normal,
    Exponential,
    Uniform,
}

impl From<DistFlag> for CovariateDist {
    fn from(d: DistFlag) -> Self {
        match d {
            DistFlag::Normal => CovariateDist::Normal,
            DistFlag::Exponential => CovariateDist::Exponential,
            DistFlag::Uniform => CovariateDist::Uniform,
        }
    }
}

/// Method selection shared by design, metrics and simulate.
#[derive(Args, Clone)]
struct MethodArgs {
    /// Design method.
    #[arg(long, value_enum)]
    method: MethodFlag,

    /// Balance objective.
    #[arg(long, value_enum, default_value = "l1")]
    objective: ObjectiveFlag,

    /// Comma-separated positive weights (weighted-l1 only).
    #[arg(long, value_delimiter = ',')]
    weights: Vec<f64>,

    /// Restart count for greedy-restarts.
    #[arg(long, default_value_t = 20)]
    restarts: usize,

    /// Extreme-set coefficient for greedy-restricted.
    #[arg(long, default_value_t = 2.0)]
    b: f64,

    /// Group-sum difference threshold for greedy-restricted.
    #[arg(long = "c-thresh", default_value_t = 1.0)]
    c_thresh: f64,

    /// Acceptance threshold for rerand-threshold (default: the chi-square_p
    /// quantile with acceptance probability 0.01).
    #[arg(long)]
    threshold: Option<f64>,

    /// Attempt cap for rerand-threshold.
    #[arg(long = "max-attempts", default_value_t = DEFAULT_RERAND_MAX_ATTEMPTS)]
    max_attempts: usize,
}

impl MethodArgs {
    fn objective_kind(&self) -> ObjectiveKind<f64> {
        match self.objective {
            ObjectiveFlag::L1 => ObjectiveKind::L1,
            ObjectiveFlag::WeightedL1 => ObjectiveKind::WeightedL1 {
                weights: self.weights.clone(),
            },
            ObjectiveFlag::Mahalanobis => ObjectiveKind::Mahalanobis,
        }
    }

    /// `rerand_draws` comes in separately: `design`/`metrics`/`simulate`
    /// spell it --R, but `infer` reserves --R for the test resolution.
    fn build(&self, rerand_draws: usize) -> DesignMethod<f64> {
        let objective = self.objective_kind();
        match self.method {
            MethodFlag::Greedy => DesignMethod::Greedy { objective },
            MethodFlag::GreedyRestarts => DesignMethod::GreedyRestarts {
                objective,
                restarts: self.restarts,
            },
            MethodFlag::GreedyRestricted => DesignMethod::GreedyRestricted {
                b: self.b,
                c_thresh: self.c_thresh,
            },
            MethodFlag::GreedyStratified => DesignMethod::GreedyStratified { objective },
            MethodFlag::Matched => DesignMethod::MatchedPairs,
            MethodFlag::RerandBest => DesignMethod::RerandBest {
                objective,
                draws: rerand_draws,
            },
            MethodFlag::RerandThreshold => DesignMethod::RerandThreshold {
                objective,
                threshold: self.threshold,
                max_attempts: self.max_attempts,
            },
            MethodFlag::Random => DesignMethod::Random { objective },
        }
    }
}

fn seed_or_entropy(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(rand::random)
}

fn write_json<T: Serialize>(out: Option<&PathBuf>, value: &T) -> balance_forge::Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable output");
    match out {
        Some(path) => fs::write(path, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

#[derive(Args)]
struct DesignArgs {
    /// Covariate CSV (header x1..xp, optional stratum column).
    #[arg(long)]
    covariates: PathBuf,

    #[command(flatten)]
    method: MethodArgs,

    /// Number of complete randomizations for rerand-best.
    #[arg(long = "R", default_value_t = 100)]
    rerand_draws: usize,

    /// Master seed (default: OS entropy; echoed in the output).
    #[arg(long)]
    seed: Option<u64>,

    /// Output JSON path (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MetricsArgs {
    #[command(flatten)]
    method: MethodArgs,

    /// Number of complete randomizations for rerand-best.
    #[arg(long = "R", default_value_t = 100)]
    rerand_draws: usize,

    /// Arm size n (2n subjects per replicate).
    #[arg(long)]
    n: usize,

    /// Covariate dimension p.
    #[arg(long, default_value_t = 1)]
    p: usize,

    /// Covariate distribution.
    #[arg(long, value_enum, default_value = "normal")]
    dist: DistFlag,

    /// Number of design replicates.
    #[arg(long)]
    replicates: usize,

    /// Redraw covariates per replicate or hold one draw fixed.
    #[arg(long, value_enum, default_value = "redraw")]
    mode: ModeFlag,

    #[arg(long)]
    seed: Option<u64>,

    /// Subtract Monte Carlo estimation variance from the deviation metric.
    #[arg(long = "bias-correct")]
    bias_correct: bool,

    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Comma-separated arm sizes.
    #[arg(long = "n-grid", value_delimiter = ',', required = true)]
    n_grid: Vec<usize>,

    /// Comma-separated covariate dimensions.
    #[arg(long = "p-grid", value_delimiter = ',', default_value = "1")]
    p_grid: Vec<usize>,

    #[arg(long, value_enum, default_value = "normal")]
    dist: DistFlag,

    #[arg(long)]
    replicates: usize,

    #[command(flatten)]
    method: MethodArgs,

    /// Number of complete randomizations for rerand-best.
    #[arg(long = "R", default_value_t = 100)]
    rerand_draws: usize,

    #[arg(long)]
    seed: Option<u64>,

    /// Output CSV of per-replicate records.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RatesArgs {
    /// Input CSV produced by `simulate`.
    #[arg(long = "in")]
    input: PathBuf,

    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    covariates: PathBuf,

    /// Response CSV: a single column y in subject order.
    #[arg(long)]
    responses: PathBuf,

    /// design.json holding the allocation actually used.
    #[arg(long)]
    design: PathBuf,

    /// Resolution: number of null replicate designs.
    #[arg(long = "R", default_value_t = 999)]
    resolution: usize,

    /// Confidence level complement for the interval.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,

    /// Hypothesized additive effect under the sharp null.
    #[arg(long, default_value_t = 0.0)]
    beta0: f64,

    #[command(flatten)]
    method: MethodArgs,

    /// Number of complete randomizations when the designer is rerand-best
    /// (--R selects the test resolution here).
    #[arg(long = "rerand-draws", default_value_t = 100)]
    rerand_draws: usize,

    #[arg(long)]
    seed: Option<u64>,

    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OptimalArgs {
    #[arg(long)]
    covariates: PathBuf,

    /// Balance objective.
    #[arg(long, value_enum, default_value = "l1")]
    objective: ObjectiveFlag,

    /// Comma-separated positive weights (weighted-l1 only).
    #[arg(long, value_delimiter = ',')]
    weights: Vec<f64>,

    /// Worker count for the partitioned search (default: thread count).
    #[arg(long)]
    workers: Option<usize>,

    /// Enumerate the full space instead of fixing subject 1 to treatment.
    #[arg(long = "no-symmetry")]
    no_symmetry: bool,

    /// Override the 2n <= 30 instance guard.
    #[arg(long)]
    force: bool,

    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TheoryArgs {
    /// Distribution: uniform, exponential or normal.
    #[arg(long, value_enum)]
    dist: DistFlag,

    /// Grid start:step:stop for the separation c.
    #[arg(long = "c-grid", default_value = "0:0.1:2")]
    c_grid: String,

    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReproduceArgs {
    /// table1, table2, fig1, fig2, fig34 or table3.
    #[arg(long)]
    target: String,

    /// desk (shrunken replicates) or full (publication scale).
    #[arg(long, default_value = "desk")]
    scale: String,

    #[arg(long)]
    seed: Option<u64>,

    /// Directory for the emitted CSV files.
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
}

fn run(cli: Cli) -> balance_forge::Result<()> {
    match cli.command {
        Command::Design(args) => cmd_design(args),
        Command::Metrics(args) => cmd_metrics(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Rates(args) => cmd_rates(args),
        Command::Infer(args) => cmd_infer(args),
        Command::Optimal(args) => cmd_optimal(args),
        Command::Theory(args) => cmd_theory(args),
        Command::Reproduce(args) => cmd_reproduce(args),
    }
}

fn read_covariates(path: &PathBuf) -> balance_forge::Result<CovariateMatrix64> {
    let file = fs::File::open(path)?;
    load_covariates(file)
}

fn cmd_design(args: DesignArgs) -> balance_forge::Result<()> {
    let x = read_covariates(&args.covariates)?;
    let method = args.method.build(args.rerand_draws);
    let seed = seed_or_entropy(args.seed);
    let result = method.design(&x, seed)?;
    write_json(args.out.as_ref(), &result)
}

fn cmd_metrics(args: MetricsArgs) -> balance_forge::Result<()> {
    #[derive(Serialize)]
    struct MetricsOutput {
        method: String,
        n: usize,
        p: usize,
        dist: String,
        replicates: usize,
        mode: ProbMode,
        seed: u64,
        bias_correct: bool,
        entropy: f64,
        deviation: f64,
        bias_corrected_deviation: f64,
        reference: f64,
    }

    let method = args.method.build(args.rerand_draws);
    let seed = seed_or_entropy(args.seed);
    let mode = match args.mode {
        ModeFlag::Redraw => ProbMode::RedrawCovariates,
        ModeFlag::Fixed => ProbMode::FixedCovariates,
    };
    let dist: CovariateDist = args.dist.into();
    let est = estimate_pair_probabilities::<f64, _>(
        &method,
        args.n,
        args.p,
        dist,
        args.replicates,
        seed,
        mode,
    )?;
    let report = randomness_report::<f64>(&est)?;
    let deviation = if args.bias_correct {
        report.bias_corrected_deviation
    } else {
        report.deviation
    };
    write_json(
        args.out.as_ref(),
        &MetricsOutput {
            method: method.name().into(),
            n: args.n,
            p: args.p,
            dist: dist.to_string(),
            replicates: args.replicates,
            mode,
            seed,
            bias_correct: args.bias_correct,
            entropy: report.entropy,
            deviation,
            bias_corrected_deviation: report.bias_corrected_deviation,
            reference: report.reference,
        },
    )
}

fn cmd_simulate(args: SimulateArgs) -> balance_forge::Result<()> {
    let method = args.method.build(args.rerand_draws);
    let seed = seed_or_entropy(args.seed);
    let records = run_grid::<f64>(
        &args.n_grid,
        &args.p_grid,
        args.dist.into(),
        args.replicates,
        &method,
        seed,
    )?;
    write_records(&args.out, &records)?;
    eprintln!(
        "wrote {} records to {} (seed {seed})",
        records.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_rates(args: RatesArgs) -> balance_forge::Result<()> {
    let records = read_records::<f64>(&args.input)?;
    let fit = fit_rate_regression(&records)?;
    write_json(args.out.as_ref(), &fit)
}

fn read_responses(path: &PathBuf) -> balance_forge::Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if i == 0 && line == "y" {
            continue;
        }
        values.push(line.parse::<f64>().map_err(|_| {
            Error::Parse(format!("responses line {}: non-numeric {line:?}", i + 1))
        })?);
    }
    if values.is_empty() {
        return Err(Error::Parse("no responses found".into()));
    }
    Ok(values)
}

fn cmd_infer(args: InferArgs) -> balance_forge::Result<()> {
    #[derive(Serialize)]
    struct InferOutput {
        method: String,
        resolution: usize,
        alpha: f64,
        beta0: f64,
        seed: u64,
        estimate: f64,
        p_value: f64,
        ci: Option<(f64, f64)>,
        null_estimates: Vec<f64>,
    }

    let x = read_covariates(&args.covariates)?;
    let y = read_responses(&args.responses)?;
    let design: balance_forge::DesignResult64 =
        serde_json::from_str(&fs::read_to_string(&args.design)?)
            .map_err(|e| Error::Parse(format!("design.json: {e}")))?;
    let data = ExperimentData::new(x, y, design.allocation)?;
    let method = args.method.build(args.rerand_draws);
    let seed = seed_or_entropy(args.seed);
    if args.resolution < 19 {
        eprintln!(
            "warning: resolution {} is low; 19+ recommended for alpha = 0.05",
            args.resolution
        );
    }
    let result = permutation_inference(
        &data,
        args.resolution,
        &method,
        args.alpha,
        seed,
        args.beta0,
    )?;
    write_json(
        args.out.as_ref(),
        &InferOutput {
            method: method.name().into(),
            resolution: args.resolution,
            alpha: args.alpha,
            beta0: args.beta0,
            seed,
            estimate: result.estimate,
            p_value: result.p_value,
            ci: result.ci,
            null_estimates: result.null_estimates,
        },
    )
}

fn cmd_optimal(args: OptimalArgs) -> balance_forge::Result<()> {
    #[derive(Serialize)]
    struct OptimalOutput {
        objective: String,
        workers: usize,
        symmetry: bool,
        visited: u64,
        rank: u64,
        balance: f64,
        allocation: balance_forge::Allocation,
        wall_ms: u128,
    }

    let x = read_covariates(&args.covariates)?;
    let z = standardize(&x)?;
    let kind = match args.objective {
        ObjectiveFlag::L1 => ObjectiveKind::L1,
        ObjectiveFlag::WeightedL1 => ObjectiveKind::WeightedL1 {
            weights: args.weights.clone(),
        },
        ObjectiveFlag::Mahalanobis => ObjectiveKind::Mahalanobis,
    };
    let objective = kind.build(&z)?;
    let workers = args.workers.unwrap_or_else(rayon::current_num_threads);
    if args.force && x.rows() > balance_forge::optimal::ENUMERATION_GUARD {
        eprintln!(
            "warning: forcing enumeration of C({}, {}) allocations; this may take a very long time",
            x.rows(),
            x.arm_size()
        );
    }
    let start = Instant::now();
    let result = enumerate_optimal(&z, &objective, workers, !args.no_symmetry, args.force)?;
    let wall_ms = start.elapsed().as_millis();
    write_json(
        args.out.as_ref(),
        &OptimalOutput {
            objective: objective.tag().into(),
            workers,
            symmetry: !args.no_symmetry,
            visited: result.visited,
            rank: result.rank,
            balance: result.balance,
            allocation: result.allocation,
            wall_ms,
        },
    )
}

fn parse_c_grid(spec: &str) -> balance_forge::Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::Domain(format!(
            "c-grid must be start:step:stop, got {spec:?}"
        )));
    }
    let parse = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| Error::Domain(format!("c-grid component {s:?} is not a number")))
    };
    let (start, step, stop) = (parse(parts[0])?, parse(parts[1])?, parse(parts[2])?);
    if step <= 0.0 || stop < start || start < 0.0 {
        return Err(Error::Domain("need 0 <= start <= stop and step > 0".into()));
    }
    let mut grid = Vec::new();
    let mut k = 0usize;
    loop {
        let c = start + step * k as f64;
        if c > stop + 1e-12 {
            break;
        }
        grid.push(c);
        k += 1;
    }
    Ok(grid)
}

fn cmd_theory(args: TheoryArgs) -> balance_forge::Result<()> {
    let dist = match args.dist {
        DistFlag::Uniform => Dist::Uniform01,
        DistFlag::Exponential => Dist::Exponential1,
        DistFlag::Normal => Dist::StdNormal,
    };
    let grid = parse_c_grid(&args.c_grid)?;
    let mut w: csv::Writer<Box<dyn std::io::Write>> = match &args.out {
        Some(path) => csv::Writer::from_writer(Box::new(fs::File::create(path)?)),
        None => csv::Writer::from_writer(Box::new(std::io::stdout())),
    };
    w.write_record([
        "c",
        "p_quad",
        "p_analytic",
        "p_abs_err",
        "pplus_quad",
        "pplus_analytic",
        "pplus_abs_err",
        "pminus_quad",
        "pminus_analytic",
        "pminus_abs_err",
    ])?;
    for c in grid {
        let p = collision_density(dist, c)?;
        let pa = analytic_collision(dist, c);
        let mut row = vec![
            format!("{c}"),
            format!("{p:.12e}"),
            format!("{pa:.12e}"),
            format!("{:.3e}", (p - pa).abs()),
        ];
        for side in [Side::Plus, Side::Minus] {
            match (
                conditional_collision(dist, c, side),
                analytic_conditional(dist, c, side),
            ) {
                (Ok(q), Some(qa)) => {
                    row.push(format!("{q:.12e}"));
                    row.push(format!("{qa:.12e}"));
                    row.push(format!("{:.3e}", (q - qa).abs()));
                }
                _ => {
                    // Undefined where P(c) vanishes (uniform, c >= 1).
                    row.extend([String::new(), String::new(), String::new()]);
                }
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_reproduce(args: ReproduceArgs) -> balance_forge::Result<()> {
    let target = FromStr::from_str(&args.target)?;
    let scale = FromStr::from_str(&args.scale)?;
    let seed = seed_or_entropy(args.seed);
    let files = reproduce::<f64>(target, scale, seed, &args.out_dir)?;
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}
