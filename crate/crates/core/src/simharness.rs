//! Covariate generators, experiment grids, the balance-rate regression, and
//! reproduction of the headline tables and figures at desk or full scale.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::balance::ObjectiveKind;
use crate::data::CovariateMatrix;
use crate::designs::{DesignMethod, Designer};
use crate::error::{Error, Result};
use crate::linalg;
use crate::optimal::enumerate_optimal;
use crate::randomness::{deviation_metric, entropy_metric, estimate_pair_probabilities, ProbMode};
use crate::scalar::Real;
use crate::seeding::mix64;

/// Covariate sampling distributions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovariateDist {
    Normal,
    Exponential,
    Uniform,
}

impl CovariateDist {
    pub const ALL: [CovariateDist; 3] = [
        CovariateDist::Normal,
        CovariateDist::Exponential,
        CovariateDist::Uniform,
    ];
}

impl fmt::Display for CovariateDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CovariateDist::Normal => "normal",
            CovariateDist::Exponential => "exponential",
            CovariateDist::Uniform => "uniform",
        };
        f.write_str(s)
    }
}

impl FromStr for CovariateDist {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(CovariateDist::Normal),
            "exponential" => Ok(CovariateDist::Exponential),
            "uniform" => Ok(CovariateDist::Uniform),
            other => Err(Error::Domain(format!(
                "unknown distribution {other:?}; expected normal, exponential or uniform"
            ))),
        }
    }
}

/// Draws a fresh 2n-by-p covariate matrix, deterministic in the seed.
pub fn generate_covariates<F: Real>(
    dist: CovariateDist,
    n: usize,
    p: usize,
    seed: u64,
) -> Result<CovariateMatrix<F>> {
    if n == 0 || p == 0 {
        return Err(Error::Shape("need n >= 1 and p >= 1".into()));
    }
    let mut rng = crate::seeding::rng(seed);
    let values: Vec<F> = (0..2 * n * p)
        .map(|_| match dist {
            CovariateDist::Normal => F::sample_standard_normal(&mut rng),
            CovariateDist::Exponential => F::sample_standard_exponential(&mut rng),
            CovariateDist::Uniform => F::sample_unit_uniform(&mut rng),
        })
        .collect();
    CovariateMatrix::new(2 * n, p, values, None)
}

/// One simulation observation feeding the rate regression.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateRecord<F> {
    pub n: usize,
    pub p: usize,
    pub dist: String,
    pub replicate: usize,
    pub seed: u64,
    pub initial_balance: F,
    pub final_balance: F,
    pub switches: usize,
    pub method: String,
}

/// Runs `r` replicates of the design method on every (n, p) cell. Each
/// replicate draws fresh covariates and a fresh initialization from derived
/// seeds; records come back sorted by cell then replicate regardless of the
/// thread count.
pub fn run_grid<F: Real>(
    n_grid: &[usize],
    p_grid: &[usize],
    dist: CovariateDist,
    r: usize,
    method: &DesignMethod<F>,
    master_seed: u64,
) -> Result<Vec<RateRecord<F>>> {
    if n_grid.is_empty() || p_grid.is_empty() {
        return Err(Error::Domain("grids must be nonempty".into()));
    }
    if r == 0 {
        return Err(Error::Domain("replicate count must be at least 1".into()));
    }
    let cov_master = mix64(master_seed, 0xC0);
    let design_master = mix64(master_seed, 0xDE);
    let cells: Vec<(usize, usize)> = n_grid
        .iter()
        .flat_map(|&n| p_grid.iter().map(move |&p| (n, p)))
        .collect();
    let tasks: Vec<(usize, usize, usize, usize)> = cells
        .iter()
        .enumerate()
        .flat_map(|(ci, &(n, p))| (0..r).map(move |rep| (ci, n, p, rep)))
        .collect();
    tasks
        .into_par_iter()
        .map(|(ci, n, p, rep)| {
            let global = (ci * r + rep) as u64;
            let cov_seed = mix64(cov_master, global);
            let design_seed = mix64(design_master, global);
            let x = generate_covariates::<F>(dist, n, p, cov_seed)
                .map_err(|e| e.in_replicate(rep))?;
            let result = method.design(&x, design_seed).map_err(|e| e.in_replicate(rep))?;
            Ok(RateRecord {
                n,
                p,
                dist: dist.to_string(),
                replicate: rep,
                seed: design_seed,
                initial_balance: result.initial_balance,
                final_balance: result.final_balance,
                switches: result.switches,
                method: result.method,
            })
        })
        .collect()
}

/// One fitted coefficient.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Coef<F> {
    pub estimate: F,
    pub std_error: F,
}

/// Fit of `ln B` on `{1, 1/p, ln n, ln n / p}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RateFit<F> {
    pub intercept: Coef<F>,
    pub inv_p: Coef<F>,
    pub log_n: Coef<F>,
    pub log_n_inv_p: Coef<F>,
    pub r_squared: F,
    pub observations: usize,
    /// Records dropped because a zero final balance has no logarithm.
    pub dropped_zero_balance: usize,
}

/// Ordinary least squares of log final balance on log n crossed with
/// inverse p.
pub fn fit_rate_regression<F: Real>(records: &[RateRecord<F>]) -> Result<RateFit<F>> {
    let usable: Vec<&RateRecord<F>> = records
        .iter()
        .filter(|rec| rec.final_balance > F::zero())
        .collect();
    let dropped = records.len() - usable.len();
    let mut ns: Vec<usize> = usable.iter().map(|r| r.n).collect();
    ns.sort_unstable();
    ns.dedup();
    let mut ps: Vec<usize> = usable.iter().map(|r| r.p).collect();
    ps.sort_unstable();
    ps.dedup();
    if ns.len() < 2 || ps.len() < 2 {
        return Err(Error::RankDeficient(format!(
            "regression needs at least 2 distinct n and p values, got {} and {}",
            ns.len(),
            ps.len()
        )));
    }
    let mut x = Vec::with_capacity(usable.len() * 4);
    let mut y = Vec::with_capacity(usable.len());
    for rec in &usable {
        let ln_n = F::from_usize(rec.n).unwrap().ln();
        let inv_p = F::one() / F::from_usize(rec.p).unwrap();
        x.extend_from_slice(&[F::one(), inv_p, ln_n, ln_n * inv_p]);
        y.push(rec.final_balance.ln());
    }
    let fit = linalg::ols(&x, &y, 4)?;
    let coef = |i: usize| Coef {
        estimate: fit.coefficients[i],
        std_error: fit.standard_errors[i],
    };
    Ok(RateFit {
        intercept: coef(0),
        inv_p: coef(1),
        log_n: coef(2),
        log_n_inv_p: coef(3),
        r_squared: fit.r_squared,
        observations: y.len(),
        dropped_zero_balance: dropped,
    })
}

/// Mean of `log10` over the strictly positive values; returns the mean, how
/// many records were used and how many were dropped as zeros.
pub fn mean_log10<F: Real>(values: impl IntoIterator<Item = F>) -> (F, usize, usize) {
    let mut acc = F::zero();
    let mut used = 0usize;
    let mut dropped = 0usize;
    for v in values {
        if v > F::zero() {
            acc += v.log10();
            used += 1;
        } else {
            dropped += 1;
        }
    }
    let mean = if used > 0 {
        acc / F::from_usize(used).unwrap()
    } else {
        F::nan()
    };
    (mean, used, dropped)
}

/// Slope of `y` on `log10(n)` by least squares (used with y already on a
/// log10 scale).
pub fn log_log_slope<F: Real>(ns: &[usize], ys: &[F]) -> Result<F> {
    if ns.len() != ys.len() || ns.len() < 2 {
        return Err(Error::Shape("need matching xs/ys with at least 2 points".into()));
    }
    let mut x = Vec::with_capacity(ns.len() * 2);
    for &n in ns {
        x.extend_from_slice(&[F::one(), F::from_usize(n).unwrap().log10()]);
    }
    Ok(linalg::ols(&x, ys, 2)?.coefficients[1])
}

/// The sample-size grid 10^{1, 1.25, ..., 2.5}, rounded to integers.
pub fn decade_grid() -> Vec<usize> {
    vec![10, 18, 32, 56, 100, 178, 316]
}

/// The covariate-dimension grid used by the multi-covariate sweeps.
pub fn dimension_grid() -> Vec<usize> {
    vec![1, 2, 5, 10, 40]
}

/// Reproduction scale: `Desk` shrinks replicate counts to run on a laptop;
/// `Full` uses the publication-size 1000 (100 for the regression grid).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Scale {
    Desk,
    Full,
}

impl Scale {
    fn figure_reps(self) -> usize {
        match self {
            Scale::Desk => 100,
            Scale::Full => 1_000,
        }
    }

    fn regression_reps(self) -> usize {
        match self {
            Scale::Desk => 30,
            Scale::Full => 100,
        }
    }
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "full" => Ok(Scale::Full),
            other => Err(Error::Domain(format!("unknown scale {other:?}"))),
        }
    }
}

/// Reproduction targets; each emits CSV data files for one table or figure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ReproduceTarget {
    Table1,
    Table2,
    Fig1,
    Fig2,
    Fig34,
    Table3,
}

impl FromStr for ReproduceTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table1" => Ok(ReproduceTarget::Table1),
            "table2" => Ok(ReproduceTarget::Table2),
            "fig1" => Ok(ReproduceTarget::Fig1),
            "fig2" => Ok(ReproduceTarget::Fig2),
            "fig34" => Ok(ReproduceTarget::Fig34),
            "table3" => Ok(ReproduceTarget::Table3),
            other => Err(Error::Domain(format!("unknown target {other:?}"))),
        }
    }
}

fn greedy_l1<F: Real>() -> DesignMethod<F> {
    DesignMethod::Greedy {
        objective: ObjectiveKind::L1,
    }
}

fn write_manifest(
    out_dir: &Path,
    target: ReproduceTarget,
    scale: Scale,
    seed: u64,
    files: &[PathBuf],
) -> Result<PathBuf> {
    #[derive(Serialize)]
    struct Manifest<'a> {
        target: ReproduceTarget,
        scale: Scale,
        seed: u64,
        files: &'a [PathBuf],
    }
    let path = out_dir.join(format!("{}_manifest.json", target_stem(target)));
    let manifest = Manifest {
        target,
        scale,
        seed,
        files,
    };
    fs::write(
        &path,
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    Ok(path)
}

fn target_stem(target: ReproduceTarget) -> &'static str {
    match target {
        ReproduceTarget::Table1 => "table1",
        ReproduceTarget::Table2 => "table2",
        ReproduceTarget::Fig1 => "fig1",
        ReproduceTarget::Fig2 => "fig2",
        ReproduceTarget::Fig34 => "fig34",
        ReproduceTarget::Table3 => "table3",
    }
}

/// Emits the data behind one table or figure into `out_dir` and returns the
/// paths written (data files plus a manifest recording seed and config).
pub fn reproduce<F: Real>(
    target: ReproduceTarget,
    scale: Scale,
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut files = Vec::new();
    match target {
        ReproduceTarget::Table1 => {
            // Twenty greedy runs on one fixed n=50 standard-normal dataset,
            // ordered by final balance.
            let x = generate_covariates::<F>(CovariateDist::Normal, 50, 1, mix64(seed, 1))?;
            let method = greedy_l1::<F>();
            let mut rows: Vec<(F, usize, F)> = (0..20)
                .map(|i| {
                    let result = method.design(&x, mix64(seed, 100 + i))?;
                    Ok((result.initial_balance, result.switches, result.final_balance))
                })
                .collect::<Result<_>>()?;
            rows.sort_by(|a, b| a.2.partial_cmp(&b.2).unwrap());
            let path = out_dir.join("table1.csv");
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["initial_balance", "switches", "final_balance"])?;
            for (init, switches, fin) in rows {
                w.write_record([format!("{init}"), switches.to_string(), format!("{fin:e}")])?;
            }
            w.flush()?;
            files.push(path);
        }
        ReproduceTarget::Table2 => {
            // Five greedy runs plus the exhaustive optimum on one fixed
            // n=14 standard-normal dataset.
            let x = generate_covariates::<F>(CovariateDist::Normal, 14, 1, mix64(seed, 1))?;
            let z = crate::data::standardize(&x)?;
            let obj = crate::balance::BalanceObjective::l1();
            let method = greedy_l1::<F>();
            let mut rows: Vec<(F, usize, F)> = (0..5)
                .map(|i| {
                    let result = method.design(&x, mix64(seed, 100 + i))?;
                    Ok((result.initial_balance, result.switches, result.final_balance))
                })
                .collect::<Result<_>>()?;
            rows.sort_by(|a, b| a.2.partial_cmp(&b.2).unwrap());
            let workers = rayon::current_num_threads();
            let opt = enumerate_optimal(&z, &obj, workers, true, false)?;
            let path = out_dir.join("table2.csv");
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["kind", "initial_balance", "switches", "final_balance"])?;
            for (init, switches, fin) in rows {
                w.write_record([
                    "greedy".to_string(),
                    format!("{init}"),
                    switches.to_string(),
                    format!("{fin:e}"),
                ])?;
            }
            w.write_record([
                "optimal".to_string(),
                String::new(),
                String::new(),
                format!("{:e}", opt.balance),
            ])?;
            w.flush()?;
            files.push(path);
        }
        ReproduceTarget::Fig1 => {
            // Mean log10 balance by n for the three distributions, p = 1.
            let r = scale.figure_reps();
            let path = out_dir.join("fig1.csv");
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["dist", "n", "mean_log10_balance", "used", "dropped"])?;
            for (di, dist) in CovariateDist::ALL.iter().enumerate() {
                let records = run_grid::<F>(
                    &decade_grid(),
                    &[1],
                    *dist,
                    r,
                    &greedy_l1(),
                    mix64(seed, di as u64),
                )?;
                for &n in &decade_grid() {
                    let (mean, used, dropped) = mean_log10(
                        records
                            .iter()
                            .filter(|rec| rec.n == n)
                            .map(|rec| rec.final_balance),
                    );
                    w.write_record([
                        dist.to_string(),
                        n.to_string(),
                        format!("{mean}"),
                        used.to_string(),
                        dropped.to_string(),
                    ])?;
                }
            }
            w.flush()?;
            files.push(path);
        }
        ReproduceTarget::Fig2 => {
            // Balance and switch counts by n and p, normal covariates.
            let r = scale.figure_reps();
            let records = run_grid::<F>(
                &decade_grid(),
                &dimension_grid(),
                CovariateDist::Normal,
                r,
                &greedy_l1(),
                seed,
            )?;
            let path = out_dir.join("fig2.csv");
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["n", "p", "mean_log10_balance", "mean_switches", "used", "dropped"])?;
            for &n in &decade_grid() {
                for &p in &dimension_grid() {
                    let cell: Vec<&RateRecord<F>> = records
                        .iter()
                        .filter(|rec| rec.n == n && rec.p == p)
                        .collect();
                    let (mean, used, dropped) =
                        mean_log10(cell.iter().map(|rec| rec.final_balance));
                    let mean_switches = cell.iter().map(|rec| rec.switches).sum::<usize>()
                        as f64
                        / cell.len() as f64;
                    w.write_record([
                        n.to_string(),
                        p.to_string(),
                        format!("{mean}"),
                        format!("{mean_switches}"),
                        used.to_string(),
                        dropped.to_string(),
                    ])?;
                }
            }
            w.flush()?;
            files.push(path);
        }
        ReproduceTarget::Fig34 => {
            // Randomness metrics by n and p for greedy runs, with the
            // complete-randomization line alongside. One covariate
            // realization per cell with r starting points: with covariates
            // redrawn every replicate, subject slots are exchangeable and
            // every balanced method sits at p_s = s_n exactly, leaving no
            // signal. Desk scale shrinks the grids but not the replicate
            // count, since below r = 1000 the raw deviation metric is all
            // Monte Carlo floor.
            let r = 1_000;
            let (n_grid, p_grid): (Vec<usize>, Vec<usize>) = match scale {
                Scale::Desk => (vec![10, 18, 32, 56, 100], vec![1, 5]),
                Scale::Full => (decade_grid(), dimension_grid()),
            };
            let path = out_dir.join("fig34.csv");
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record([
                "method",
                "n",
                "p",
                "entropy",
                "deviation",
                "bias_corrected_deviation",
            ])?;
            for (mi, method) in [greedy_l1::<F>(), DesignMethod::Random {
                objective: ObjectiveKind::L1,
            }]
            .iter()
            .enumerate()
            {
                for (gi, &n) in n_grid.iter().enumerate() {
                    for (pi, &p) in p_grid.iter().enumerate() {
                        let est = estimate_pair_probabilities::<F, _>(
                            method,
                            n,
                            p,
                            CovariateDist::Normal,
                            r,
                            mix64(seed, (mi * 10_000 + gi * 100 + pi) as u64),
                            ProbMode::FixedCovariates,
                        )?;
                        let entropy: F = entropy_metric(&est);
                        let deviation: F = deviation_metric(&est, false)?;
                        let corrected: F = deviation_metric(&est, true)?;
                        w.write_record([
                            method.name().to_string(),
                            n.to_string(),
                            p.to_string(),
                            format!("{entropy}"),
                            format!("{deviation}"),
                            format!("{corrected}"),
                        ])?;
                    }
                }
            }
            w.flush()?;
            files.push(path);
        }
        ReproduceTarget::Table3 => {
            let r = scale.regression_reps();
            let records = run_grid::<F>(
                &decade_grid(),
                &dimension_grid(),
                CovariateDist::Normal,
                r,
                &greedy_l1(),
                seed,
            )?;
            let records_path = out_dir.join("table3_records.csv");
            write_records(&records_path, &records)?;
            files.push(records_path);

            let fit = fit_rate_regression(&records)?;
            let path = out_dir.join("table3.csv");
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["term", "estimate", "std_error"])?;
            for (term, coef) in [
                ("intercept", &fit.intercept),
                ("inv_p", &fit.inv_p),
                ("log_n", &fit.log_n),
                ("log_n_inv_p", &fit.log_n_inv_p),
            ] {
                w.write_record([
                    term.to_string(),
                    format!("{}", coef.estimate),
                    format!("{}", coef.std_error),
                ])?;
            }
            w.flush()?;
            files.push(path);

            let fit_path = out_dir.join("table3_fit.json");
            fs::write(&fit_path, serde_json::to_string_pretty(&fit).unwrap())?;
            files.push(fit_path);
        }
    }
    let manifest = write_manifest(out_dir, target, scale, seed, &files)?;
    files.push(manifest);
    Ok(files)
}

/// Writes rate records as CSV.
pub fn write_records<F: Real>(path: &Path, records: &[RateRecord<F>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for rec in records {
        w.serialize(rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads rate records back from CSV.
pub fn read_records<F: Real>(path: &Path) -> Result<Vec<RateRecord<F>>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut records = Vec::new();
    for row in reader.deserialize() {
        records.push(row?);
    }
    Ok(records)
}
