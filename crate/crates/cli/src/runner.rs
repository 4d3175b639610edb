//! Simulation execution: scenario construction, parallel seeded
//! replications with deterministic collation, and CSV reports.

use crate::opts::Options;
use crate::report::out_dir;
use dsme_capr::config::{Mode, ProtocolConfig};
use dsme_capr::metrics::{aggregate, reduce, MetricsRecord};
use dsme_capr::sim::{run, Scenario};
use dsme_capr::traffic::{build_binary_tree, parse_edge_list, Topology, TrafficConfig, TrafficPattern};
use std::fmt::Write as _;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Cell {
    mode: Mode,
    mo: u8,
    delta: u32,
    pattern: TrafficPattern,
}

impl Cell {
    fn key(&self, opts: &Options) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.mode,
            opts.so,
            self.mo,
            opts.bo,
            self.delta,
            self.pattern.as_str(),
            opts.duration_s,
            opts.alpha,
            opts.q_cap,
            opts.q_gts
        )
    }

    fn slug(&self) -> String {
        format!(
            "{}_mo{}_d{}_{}",
            self.mode,
            self.mo,
            self.delta,
            self.pattern.as_str()
        )
    }
}

const RUNS_HEADER: &str = "mode,so,mo,bo,delta,pattern,duration_s,alpha,qcap,qgts,seed,\
                           generated,delivered,dropped,residual,prr,dwell_ms,conversions,\
                           violations,trace_hash\n";

fn topology(opts: &Options) -> Result<Topology, String> {
    if let Some(n) = opts.topology.strip_prefix("tree:") {
        let n: usize = n.parse().map_err(|_| "bad tree size")?;
        build_binary_tree(n).map_err(|e| e.to_string())
    } else {
        let text = std::fs::read_to_string(&opts.topology)
            .map_err(|e| format!("cannot read topology `{}`: {e}", opts.topology))?;
        parse_edge_list(&text).map_err(|e| e.to_string())
    }
}

fn scenario(opts: &Options, cell: &Cell, topo: Topology) -> Result<Scenario, String> {
    let mut protocol =
        ProtocolConfig::new(opts.so, cell.mo, opts.bo, cell.mode).map_err(|e| e.to_string())?;
    protocol.be = opts.be;
    protocol.acr_cr_on_even = opts.acr_cr_on_even;
    let mut traffic = TrafficConfig::new(cell.pattern, cell.delta);
    traffic.uniform_placement = opts.uniform_arrivals;
    let mut sc = Scenario::new(protocol, traffic, topo);
    sc.duration_s = opts.duration_s;
    sc.q_cap = opts.q_cap;
    sc.q_gts = opts.q_gts;
    sc.scheduler.alpha = opts.alpha;
    sc.validate().map_err(|e| e.to_string())?;
    Ok(sc)
}

struct RunOutcome {
    seed: u64,
    metrics: MetricsRecord,
    trace_hash: u64,
    violations: u64,
}

fn worker_count(jobs: usize) -> usize {
    let configured = std::env::var("DSME_CAPR_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0);
    let available = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    configured.unwrap_or(available).min(jobs).max(1)
}

/// Run every seed of one cell, in parallel, collated by seed order.
fn run_cell(opts: &Options, cell: &Cell) -> Result<Vec<RunOutcome>, String> {
    let topo = topology(opts)?;
    let sc = scenario(opts, cell, topo)?;
    let seeds: Vec<u64> = (0..opts.runs as u64).map(|i| opts.seed + i).collect();
    let results: Mutex<Vec<Option<Result<RunOutcome, String>>>> =
        Mutex::new((0..seeds.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = worker_count(seeds.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&seed) = seeds.get(i) else { break };
                let outcome = run(&sc, seed)
                    .map_err(|e| e.to_string())
                    .and_then(|res| {
                        let metrics = reduce(&res.trace, &sc).map_err(|e| e.to_string())?;
                        if opts.trace {
                            let name = format!("trace_{}_s{seed}.csv", cell.slug());
                            std::fs::write(opts.out.join(&name), res.trace.to_csv())
                                .map_err(|e| format!("cannot write {name}: {e}"))?;
                        }
                        Ok(RunOutcome {
                            seed,
                            metrics,
                            trace_hash: res.trace_hash,
                            violations: res.violations,
                        })
                    });
                results.lock().unwrap()[i] = Some(outcome);
            });
        }
    });
    results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("worker filled every slot"))
        .collect()
}

fn append_runs_csv(opts: &Options, cell: &Cell, outcomes: &[RunOutcome]) -> Result<(), String> {
    let path = opts.out.join("runs.csv");
    let fresh = !path.exists();
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| format!("cannot open {}: {e}", path.display()))?;
    let mut buf = String::new();
    if fresh {
        buf.push_str(RUNS_HEADER);
    }
    for o in outcomes {
        writeln!(
            buf,
            "{},{},{},{},{},{},{},{:.6},{},{:016x}",
            cell.key(opts),
            o.seed,
            o.metrics.generated,
            o.metrics.delivered,
            o.metrics.dropped,
            o.metrics.residual,
            o.metrics.prr,
            o.metrics.dwell_overall.mean_ms,
            o.metrics.conversions,
            o.trace_hash
        )
        .map_err(|e| e.to_string())?;
        if o.violations > 0 {
            eprintln!(
                "warning: {} seed {} reported {} invariant violations",
                cell.slug(),
                o.seed,
                o.violations
            );
        }
    }
    f.write_all(buf.as_bytes()).map_err(|e| e.to_string())?;
    f.flush().map_err(|e| e.to_string())
}

fn cells(opts: &Options) -> Vec<Cell> {
    let (modes, mo_range, deltas, patterns) = if opts.paper_grid {
        (
            Mode::ALL.to_vec(),
            4..=7u8,
            1..=4u32,
            vec![TrafficPattern::Rate, TrafficPattern::Burst],
        )
    } else {
        (
            opts.modes.clone(),
            opts.mo_lo..=opts.mo_hi,
            opts.delta_lo..=opts.delta_hi,
            opts.patterns.clone(),
        )
    };
    let mut out = Vec::new();
    for mode in &modes {
        for mo in mo_range.clone() {
            for delta in deltas.clone() {
                for &pattern in &patterns {
                    out.push(Cell {
                        mode: *mode,
                        mo,
                        delta,
                        pattern,
                    });
                }
            }
        }
    }
    out
}

fn write_aggregates(
    opts: &Options,
    collected: &[(Cell, Vec<RunOutcome>)],
) -> Result<(), String> {
    let mut summary = String::from("mode,so,mo,bo,delta,pattern,duration_s,alpha,qcap,qgts,metric,hop,mean,ci_lo,ci_hi,n\n");
    let mut dwell = String::from("mode,so,mo,bo,delta,pattern,duration_s,alpha,qcap,qgts,class,mean_ms,ci_lo,ci_hi,n\n");
    let mut gts = String::from("mode,so,mo,bo,delta,pattern,duration_s,alpha,qcap,qgts,hop,max_gts_mean,ci_lo,ci_hi,n\n");
    for (cell, outcomes) in collected {
        if outcomes.len() < 2 {
            continue;
        }
        let records: Vec<MetricsRecord> = outcomes.iter().map(|o| o.metrics.clone()).collect();
        let rows = aggregate(&records, 0.95).map_err(|e| e.to_string())?;
        let key = cell.key(opts);
        for row in rows {
            let hop = row.hop.map(|h| h.to_string()).unwrap_or_default();
            let iv = row.interval;
            match row.metric.as_str() {
                m if m.starts_with("dwell_ms_") => writeln!(
                    dwell,
                    "{key},{},{:.6},{:.6},{:.6},{}",
                    &m["dwell_ms_".len()..],
                    iv.mean,
                    iv.ci_lo,
                    iv.ci_hi,
                    iv.n
                )
                .unwrap(),
                "max_gts" => writeln!(
                    gts,
                    "{key},{hop},{:.6},{:.6},{:.6},{}",
                    iv.mean, iv.ci_lo, iv.ci_hi, iv.n
                )
                .unwrap(),
                m => writeln!(
                    summary,
                    "{key},{m},{hop},{:.6},{:.6},{:.6},{}",
                    iv.mean, iv.ci_lo, iv.ci_hi, iv.n
                )
                .unwrap(),
            }
        }
    }
    for (name, content) in [
        ("summary.csv", summary),
        ("dwell.csv", dwell),
        ("gts.csv", gts),
    ] {
        let path = opts.out.join(name);
        std::fs::write(&path, content)
            .map_err(|e| format!("cannot write {}: {e}", path.display()))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn execute(opts: &Options, cells: Vec<Cell>) -> Result<(), String> {
    out_dir(opts)?;
    // A fresh invocation starts a fresh runs file; partial results from
    // earlier cells survive a later failure.
    let runs_path = opts.out.join("runs.csv");
    if runs_path.exists() {
        std::fs::remove_file(&runs_path).map_err(|e| e.to_string())?;
    }
    let mut collected = Vec::new();
    let total = cells.len();
    for (i, cell) in cells.into_iter().enumerate() {
        let outcomes = run_cell(opts, &cell)?;
        append_runs_csv(opts, &cell, &outcomes)?;
        println!(
            "[{}/{}] {} done ({} runs)",
            i + 1,
            total,
            cell.slug(),
            outcomes.len()
        );
        collected.push((cell, outcomes));
    }
    write_aggregates(opts, &collected)?;
    println!("wrote {}", runs_path.display());
    Ok(())
}

/// One configuration, `runs` seeds.
pub fn simulate(opts: Options) -> Result<(), String> {
    let cell = Cell {
        mode: opts.modes[0],
        mo: opts.mo_lo,
        delta: opts.delta_lo,
        pattern: opts.patterns[0],
    };
    execute(&opts, vec![cell])
}

/// The full grid (or the configured sub-grid).
pub fn sweep(opts: Options) -> Result<(), String> {
    let cells = cells(&opts);
    if cells.is_empty() {
        return Err("sweep grid is empty".into());
    }
    execute(&opts, cells)
}
