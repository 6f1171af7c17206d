//! `inclusol`: scenario-driven front end.
//!
//! Usage:
//!
//! ```text
//! inclusol solve <scenario.txt> [--steps N] [--dims a,b,c] [--seed k] [--out dir]
//! ```
//!
//! Exit status: 0 when every declared check passed, 1 when at least one
//! check failed, 2 on usage, parse or validation errors.

use std::path::PathBuf;
use std::process::ExitCode;

use inclusol::runner::{run_scenario, RunOptions};
use inclusol::scenario::load_scenario;

const USAGE: &str = "\
inclusol - integro-differential inclusion and sweeping-process toolkit

USAGE:
  inclusol solve <SCENARIO> [OPTIONS]

OPTIONS:
  --steps N       override the scenario step count
  --dims a,b,c    override the cascade ranks
  --seed k        override the sampling / optimizer seed
  --out DIR       output directory (else INCLUSOL_OUT, else the scenario's)
";

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match run(&args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(msg) => {
            eprintln!("error: {msg}");
            eprint!("{USAGE}");
            ExitCode::from(2)
        }
    }
}

fn run(args: &[String]) -> Result<bool, String> {
    let mut it = args.iter();
    let sub = it.next().ok_or("missing subcommand")?;
    if sub == "--help" || sub == "-h" || sub == "help" {
        print!("{USAGE}");
        return Ok(true);
    }
    if sub != "solve" {
        return Err(format!("unknown subcommand '{sub}'"));
    }
    let mut scenario_path: Option<PathBuf> = None;
    let mut opts = RunOptions::default();
    while let Some(arg) = it.next() {
        match arg.as_str() {
            "--steps" => {
                let v = it.next().ok_or("--steps needs a value")?;
                opts.steps = Some(v.parse().map_err(|_| format!("bad step count '{v}'"))?);
            }
            "--dims" => {
                let v = it.next().ok_or("--dims needs a value")?;
                let dims: Result<Vec<usize>, _> =
                    v.split(',').map(|p| p.trim().parse::<usize>()).collect();
                opts.dims = Some(dims.map_err(|_| format!("bad dims '{v}'"))?);
            }
            "--seed" => {
                let v = it.next().ok_or("--seed needs a value")?;
                opts.seed = Some(v.parse().map_err(|_| format!("bad seed '{v}'"))?);
            }
            "--out" => {
                let v = it.next().ok_or("--out needs a value")?;
                opts.out_dir = Some(PathBuf::from(v));
            }
            flag if flag.starts_with('-') => return Err(format!("unknown flag '{flag}'")),
            path => {
                if scenario_path.is_some() {
                    return Err(format!("unexpected extra argument '{path}'"));
                }
                scenario_path = Some(PathBuf::from(path));
            }
        }
    }
    let path = scenario_path.ok_or("missing scenario file")?;
    let scenario = load_scenario(&path).map_err(|e| e.to_string())?;
    let report = run_scenario(&scenario, &opts).map_err(|e| e.to_string())?;

    println!(
        "scenario {} [{}] -> {}",
        report.scenario,
        report.command,
        report.out_dir.display()
    );
    for check in &report.checks {
        println!(
            "  {} {} (value {:e}, threshold {:e})",
            if check.pass { "PASS" } else { "FAIL" },
            check.name,
            check.value,
            check.threshold
        );
    }
    if !report.ok() {
        eprintln!("failed checks: {}", report.failed_checks().join(", "));
    }
    Ok(report.ok())
}
