//! `blockrate`: run, sweep and verify two-block rate pricing markets.
//!
//! Exit codes: 0 success, 1 bad input or usage, 2 the market run did not
//! converge (iteration cap or divergence), 3 the centralized oracle did not
//! converge, 4 verification gaps exceeded tolerance.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use blockrate::export::{self, RunSummary, SweepRow};
use blockrate::market::{run_market, EquilibriumReport, IterationTrace, MarketError, RunConfig};
use blockrate::model::{demo_scenario, demo_scenario_json, parse_scenario, Scenario};
use blockrate::oracle::{
    brute_force_welfare, compare_equilibrium, compare_oracles, solve_welfare_centralized,
    Comparison, OracleError, Tolerance, MAX_GRID_DIMENSION,
};
use blockrate::social_welfare;
use clap::{Args, Parser, Subcommand};

const EXIT_INPUT: u8 = 1;
const EXIT_NOT_CONVERGED: u8 = 2;
const EXIT_ORACLE: u8 = 3;
const EXIT_VERIFY_FAILED: u8 = 4;

/// Step sizes of the built-in demonstration sweep.
const DEMO_GAMMAS: [f64; 3] = [0.01, 0.1, 0.3];

#[derive(Parser)]
#[command(
    name = "blockrate",
    version,
    about = "Demand-response market under two-block rate pricing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the distributed market to equilibrium and write its trace.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the market once per step size and tabulate convergence.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        /// Comma-separated step sizes.
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        gammas: Vec<f64>,
        #[arg(long, default_value_t = RunConfig::default().tol)]
        tol: f64,
        #[arg(long, default_value_t = RunConfig::default().max_iter)]
        max_iter: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the market equilibrium against the welfare oracles.
    Verify {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        grid_step: f64,
        #[arg(long)]
        no_grid: bool,
        #[arg(long, default_value_t = 0.1)]
        gamma: f64,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        #[arg(long, default_value_t = RunConfig::default().max_iter)]
        max_iter: usize,
        /// Shift the first customer's first-slot consumption by this amount
        /// before comparing (negative control).
        #[arg(long)]
        perturb: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep and verify the built-in two-customer scenario.
    Demo {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the built-in scenario document and exit.
        #[arg(long)]
        print_scenario: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value_t = RunConfig::default().gamma)]
    gamma: f64,
    #[arg(long, default_value_t = RunConfig::default().tol)]
    tol: f64,
    #[arg(long, default_value_t = RunConfig::default().max_iter)]
    max_iter: usize,
}

impl From<&RunArgs> for RunConfig {
    fn from(a: &RunArgs) -> Self {
        RunConfig {
            gamma: a.gamma,
            tol: a.tol,
            max_iter: a.max_iter,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(EXIT_INPUT);
        }
    };
    let result = match cli.command {
        Command::Run { scenario, run, out } => cmd_run(&scenario, &(&run).into(), &out),
        Command::Sweep {
            scenario,
            gammas,
            tol,
            max_iter,
            out,
        } => cmd_sweep(&scenario, &gammas, tol, max_iter, &out),
        Command::Verify {
            scenario,
            grid_step,
            no_grid,
            gamma,
            tol,
            max_iter,
            perturb,
            out,
        } => load(&scenario).and_then(|s| {
            let cfg = RunConfig {
                gamma,
                tol,
                max_iter,
            };
            verify(&s, &cfg, (!no_grid).then_some(grid_step), perturb, &out)
        }),
        Command::Demo {
            out,
            print_scenario,
        } => {
            if print_scenario {
                print!("{}", demo_scenario_json());
                Ok(0)
            } else {
                cmd_demo(out.as_deref())
            }
        }
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INPUT)
        }
    }
}

fn load(path: &Path) -> Result<Scenario> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    parse_scenario(&text).with_context(|| format!("in {}", path.display()))
}

/// Writes through a temporary file in the target directory so readers never
/// see a half-written file.
fn write_atomic(path: &Path, fill: impl FnOnce(&mut fs::File) -> Result<()>) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    fill(tmp.as_file_mut())?;
    tmp.as_file_mut().flush()?;
    tmp.persist(path)
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |f| {
        serde_json::to_writer_pretty(&mut *f, value)?;
        writeln!(f)?;
        Ok(())
    })
}

fn write_trace(path: &Path, trace: &IterationTrace, scenario: &Scenario) -> Result<()> {
    let ids: Vec<u32> = scenario.customers.iter().map(|c| c.id).collect();
    write_atomic(path, |f| Ok(export::write_trace_csv(trace, &ids, f)?))
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn cmd_run(scenario: &Path, cfg: &RunConfig, out: &Path) -> Result<u8> {
    let s = load(scenario)?;
    cfg.validate()?;
    prepare_out(out)?;
    match run_market(&s, cfg) {
        Ok((report, trace)) => {
            write_trace(&out.join("trace.csv"), &trace, &s)?;
            write_json(&out.join("summary.json"), &RunSummary::from(&report))?;
            println!(
                "converged={} iterations={} welfare={}",
                report.converged, report.iterations, report.welfare
            );
            Ok(if report.converged {
                0
            } else {
                EXIT_NOT_CONVERGED
            })
        }
        Err(e @ MarketError::Diverged { .. }) => {
            eprintln!("error: {e}");
            Ok(EXIT_NOT_CONVERGED)
        }
        Err(e) => Err(e.into()),
    }
}

fn sweep(
    s: &Scenario,
    gammas: &[f64],
    tol: f64,
    max_iter: usize,
    out: Option<&Path>,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(gammas.len());
    for &gamma in gammas {
        let cfg = RunConfig {
            gamma,
            tol,
            max_iter,
        };
        cfg.validate()?;
        let row = match run_market(s, &cfg) {
            Ok((report, trace)) => {
                if let Some(dir) = out {
                    write_trace(&dir.join(format!("trace_gamma_{gamma}.csv")), &trace, s)?;
                }
                SweepRow {
                    gamma,
                    iterations: report.iterations,
                    converged: report.converged,
                    welfare: report.welfare,
                }
            }
            Err(MarketError::Diverged { iteration }) => {
                eprintln!("gamma {gamma}: diverged at iteration {iteration}");
                SweepRow {
                    gamma,
                    iterations: iteration,
                    converged: false,
                    welfare: f64::NAN,
                }
            }
            Err(e) => return Err(e.into()),
        };
        println!(
            "gamma={} iterations={} converged={} welfare={}",
            row.gamma, row.iterations, row.converged, row.welfare
        );
        rows.push(row);
    }
    if let Some(dir) = out {
        write_atomic(&dir.join("sweep.csv"), |f| {
            Ok(export::write_sweep_csv(&rows, f)?)
        })?;
    }
    Ok(rows)
}

fn cmd_sweep(scenario: &Path, gammas: &[f64], tol: f64, max_iter: usize, out: &Path) -> Result<u8> {
    let s = load(scenario)?;
    prepare_out(out)?;
    sweep(&s, gammas, tol, max_iter, Some(out))?;
    Ok(0)
}

fn print_comparison(label: &str, c: &Comparison) {
    println!(
        "{label}: allocation_gap={} welfare_gap={} pass={} boundary_degenerate={}",
        c.allocation_gap, c.welfare_gap, c.pass, c.boundary_degenerate
    );
}

fn verify(
    s: &Scenario,
    cfg: &RunConfig,
    grid_step: Option<f64>,
    perturb: Option<f64>,
    out: &Path,
) -> Result<u8> {
    cfg.validate()?;
    prepare_out(out)?;
    let mut report: EquilibriumReport = match run_market(s, cfg) {
        Ok((report, _)) if report.converged => report,
        Ok((report, _)) => {
            eprintln!(
                "market did not converge within {} iterations",
                report.iterations
            );
            return Ok(EXIT_NOT_CONVERGED);
        }
        Err(e @ MarketError::Diverged { .. }) => {
            eprintln!("error: {e}");
            return Ok(EXIT_NOT_CONVERGED);
        }
        Err(e) => return Err(e.into()),
    };
    if let Some(delta) = perturb {
        let p = &mut report.allocation.profiles[0];
        p.x[0] = (p.x[0] + delta).max(0.0);
        *p = blockrate::CustomerProfile::from_consumption(&p.x, &s.blocks);
        report.welfare = social_welfare(&report.allocation, s);
    }

    let central = solve_welfare_centralized(s, 1e-9)?;
    let comparison = compare_equilibrium(&report, &central, Tolerance::default())?;
    write_json(&out.join("comparison.json"), &comparison)?;
    print_comparison("centralized", &comparison);
    if !central.converged {
        eprintln!(
            "centralized oracle did not converge (residual {}, {} iterations)",
            central.residual, central.iterations
        );
        return Ok(EXIT_ORACLE);
    }
    let mut pass = comparison.pass;

    if let Some(step) = grid_step {
        let dimension = s.num_customers() * s.num_slots;
        if dimension > MAX_GRID_DIMENSION {
            println!("notice: grid oracle skipped, N*T = {dimension} exceeds {MAX_GRID_DIMENSION}");
        } else {
            match brute_force_welfare(s, step) {
                Ok(grid) => {
                    let tol = Tolerance {
                        allocation: 2.0 * step,
                        welfare: f64::INFINITY,
                    };
                    let c = compare_oracles(&central, &grid, tol)?;
                    write_json(&out.join("grid_comparison.json"), &c)?;
                    print_comparison("grid", &c);
                    pass &= c.pass;
                }
                Err(e @ OracleError::GridTooLarge { .. }) => {
                    println!("notice: grid oracle skipped, {e}");
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
    Ok(if pass { 0 } else { EXIT_VERIFY_FAILED })
}

fn cmd_demo(out: Option<&Path>) -> Result<u8> {
    let s = demo_scenario();
    if let Some(dir) = out {
        prepare_out(dir)?;
        write_atomic(&dir.join("scenario.json"), |f| {
            Ok(f.write_all(demo_scenario_json().as_bytes())?)
        })?;
    }
    let base = RunConfig::default();
    let rows = sweep(&s, &DEMO_GAMMAS, base.tol, base.max_iter, out)?;
    let ordered = rows.windows(2).all(|w| w[1].iterations < w[0].iterations);
    println!("iterations strictly decrease with gamma: {ordered}");

    let scratch;
    let verify_dir = match out {
        Some(dir) => dir,
        None => {
            scratch = tempfile::tempdir()?;
            scratch.path()
        }
    };
    let code = verify(
        &s,
        &RunConfig { tol: 1e-9, ..base },
        Some(0.01),
        None,
        verify_dir,
    )?;
    let all_converged = rows.iter().all(|r| r.converged);
    Ok(if code != 0 {
        code
    } else if all_converged && ordered {
        0
    } else {
        EXIT_NOT_CONVERGED
    })
}
