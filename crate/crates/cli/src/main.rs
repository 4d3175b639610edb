//! Batch front end: analytic tables, the channel-access surface, single
//! simulation configurations and the full evaluation sweep.
//!
//! All options come from flags or a flat `key=value` configuration file
//! (flags win). Outputs are plain CSV files carrying full configuration
//! and seed metadata; re-running a subcommand with identical inputs
//! reproduces identical files.

mod opts;
mod report;
mod runner;

use std::process::ExitCode;

const USAGE: &str = "\
usage: dsme-capr <subcommand> [options]

subcommands:
  analytics   closed-form tables per mode (tau, waiting time, access time, dwell)
  surface     channel-access time over a CAP frequency/length grid
  simulate    run one configuration for a number of seeds
  sweep       run the full evaluation grid (modes x MO x delta x patterns)

common options:
  --config <file>        flat key=value option file; flags override it
  --so N --mo N|A..B --bo N --mode ncr|cr|acr|dcr
  --delta N|A..B         packets per second (or per burst)
  --pattern rate|burst   packet generation pattern (or `both` for sweep)
  --duration SECONDS     simulated seconds per run
  --runs N --seed N      replications and base seed
  --topology tree:N|FILE convergecast tree size or edge-list file
  --out DIR              output directory (default `out`)
  --be N --alpha X --qcap N --qgts N
  --denominator count|count-minus-one
                         backoff-average convention for the access model
  --acr-start-ncr        alternate parity: first interval unreduced
  --uniform-arrivals     spread arrivals inside each second
  --trace                write per-run raw traces
  --desk                 desk-scale profile: 31 nodes, 60 s, 5 runs
  --paper-grid           (sweep) modes x MO 4..7 x delta 1..4 x both patterns

environment:
  DSME_CAPR_THREADS      caps run-level parallelism
";

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some((cmd, rest)) = args.split_first() else {
        eprint!("{USAGE}");
        return ExitCode::FAILURE;
    };
    let result = match cmd.as_str() {
        "analytics" => opts::parse(rest).and_then(report::analytics),
        "surface" => opts::parse(rest).and_then(report::surface),
        "simulate" => opts::parse(rest).and_then(runner::simulate),
        "sweep" => opts::parse(rest).and_then(runner::sweep),
        "help" | "--help" | "-h" => {
            print!("{USAGE}");
            return ExitCode::SUCCESS;
        }
        other => Err(format!("unknown subcommand `{other}`")),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
