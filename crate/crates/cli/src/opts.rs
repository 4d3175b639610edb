//! Option parsing: flags layered over an optional flat `key=value`
//! configuration file.

use dsme_capr::analytic::BackoffMeanDenominator;
use dsme_capr::config::Mode;
use dsme_capr::traffic::TrafficPattern;
use std::collections::BTreeMap;
use std::path::PathBuf;

#[derive(Debug, Clone)]
pub struct Options {
    pub so: u8,
    pub mo_lo: u8,
    pub mo_hi: u8,
    pub bo: u8,
    pub modes: Vec<Mode>,
    pub delta_lo: u32,
    pub delta_hi: u32,
    pub patterns: Vec<TrafficPattern>,
    pub duration_s: u32,
    pub runs: u32,
    pub seed: u64,
    pub topology: String,
    pub out: PathBuf,
    pub be: u8,
    pub alpha: f64,
    pub q_cap: usize,
    pub q_gts: usize,
    pub denominator: BackoffMeanDenominator,
    pub acr_cr_on_even: bool,
    pub uniform_arrivals: bool,
    pub trace: bool,
    pub paper_grid: bool,
    pub n_cap_grid: (u32, u32),
    pub slots_per_cap_grid: (u32, u32),
}

impl Default for Options {
    fn default() -> Self {
        Options {
            so: 3,
            mo_lo: 7,
            mo_hi: 7,
            bo: 7,
            modes: vec![Mode::Dcr],
            delta_lo: 1,
            delta_hi: 1,
            patterns: vec![TrafficPattern::Rate],
            duration_s: 60,
            runs: 5,
            seed: 1,
            topology: "tree:31".into(),
            out: PathBuf::from("out"),
            be: 3,
            alpha: 0.1,
            q_cap: 8,
            q_gts: 22,
            denominator: BackoffMeanDenominator::SampleCount,
            acr_cr_on_even: true,
            uniform_arrivals: false,
            trace: false,
            paper_grid: false,
            n_cap_grid: (1, 16),
            slots_per_cap_grid: (1, 8),
        }
    }
}

fn parse_range(v: &str) -> Result<(u32, u32), String> {
    if let Some((a, b)) = v.split_once("..") {
        let lo = a.trim().parse().map_err(|_| format!("bad range `{v}`"))?;
        let hi = b
            .trim_start_matches('=')
            .trim()
            .parse()
            .map_err(|_| format!("bad range `{v}`"))?;
        if lo > hi {
            return Err(format!("empty range `{v}`"));
        }
        Ok((lo, hi))
    } else {
        let n = v.trim().parse().map_err(|_| format!("bad number `{v}`"))?;
        Ok((n, n))
    }
}

fn apply(opts: &mut Options, key: &str, value: &str) -> Result<(), String> {
    match key {
        "so" => opts.so = value.parse().map_err(|_| "bad --so")?,
        "mo" => {
            let (lo, hi) = parse_range(value)?;
            opts.mo_lo = lo as u8;
            opts.mo_hi = hi as u8;
        }
        "bo" => opts.bo = value.parse().map_err(|_| "bad --bo")?,
        "mode" => {
            if value == "all" {
                opts.modes = Mode::ALL.to_vec();
            } else {
                opts.modes = value
                    .split(',')
                    .map(|m| Mode::parse(m).ok_or_else(|| format!("unknown mode `{m}`")))
                    .collect::<Result<_, _>>()?;
            }
        }
        "delta" => {
            let (lo, hi) = parse_range(value)?;
            opts.delta_lo = lo;
            opts.delta_hi = hi;
        }
        "pattern" => {
            opts.patterns = if value == "both" {
                vec![TrafficPattern::Rate, TrafficPattern::Burst]
            } else {
                vec![TrafficPattern::parse(value)
                    .ok_or_else(|| format!("unknown pattern `{value}`"))?]
            };
        }
        "duration" => opts.duration_s = value.parse().map_err(|_| "bad --duration")?,
        "runs" => opts.runs = value.parse().map_err(|_| "bad --runs")?,
        "seed" => opts.seed = value.parse().map_err(|_| "bad --seed")?,
        "topology" => opts.topology = value.to_string(),
        "out" => opts.out = PathBuf::from(value),
        "be" => opts.be = value.parse().map_err(|_| "bad --be")?,
        "alpha" => opts.alpha = value.parse().map_err(|_| "bad --alpha")?,
        "qcap" => opts.q_cap = value.parse().map_err(|_| "bad --qcap")?,
        "qgts" => opts.q_gts = value.parse().map_err(|_| "bad --qgts")?,
        "denominator" => {
            opts.denominator = match value {
                "count" => BackoffMeanDenominator::SampleCount,
                "count-minus-one" => BackoffMeanDenominator::SampleCountMinusOne,
                _ => return Err(format!("unknown denominator `{value}`")),
            }
        }
        "n-cap" => opts.n_cap_grid = parse_range(value)?,
        "slots-per-cap" => opts.slots_per_cap_grid = parse_range(value)?,
        "acr-start-ncr" => opts.acr_cr_on_even = !bool_value(value)?,
        "uniform-arrivals" => opts.uniform_arrivals = bool_value(value)?,
        "trace" => opts.trace = bool_value(value)?,
        "paper-grid" => opts.paper_grid = bool_value(value)?,
        "desk" => {
            if bool_value(value)? {
                opts.topology = "tree:31".into();
                opts.duration_s = 60;
                opts.runs = 5;
            }
        }
        other => return Err(format!("unknown option `{other}`")),
    }
    Ok(())
}

fn bool_value(v: &str) -> Result<bool, String> {
    match v {
        "" | "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(format!("expected a boolean, got `{other}`")),
    }
}

const FLAG_ONLY: [&str; 6] = [
    "acr-start-ncr",
    "uniform-arrivals",
    "trace",
    "paper-grid",
    "desk",
    "help",
];

pub fn parse(args: &[String]) -> Result<Options, String> {
    // First pass: pick up a config file, then layer flags over it.
    let mut file_pairs: Vec<(String, String)> = Vec::new();
    let mut flag_pairs: Vec<(String, String)> = Vec::new();
    let mut it = args.iter().peekable();
    while let Some(arg) = it.next() {
        let Some(key) = arg.strip_prefix("--") else {
            return Err(format!("unexpected argument `{arg}`"));
        };
        let (key, value) = if let Some((k, v)) = key.split_once('=') {
            (k.to_string(), v.to_string())
        } else if FLAG_ONLY.contains(&key) {
            (key.to_string(), "true".to_string())
        } else {
            let v = it
                .next()
                .ok_or_else(|| format!("--{key} needs a value"))?
                .clone();
            (key.to_string(), v)
        };
        if key == "config" {
            let text = std::fs::read_to_string(&value)
                .map_err(|e| format!("cannot read config `{value}`: {e}"))?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| format!("{value}:{}: expected key=value", lineno + 1))?;
                file_pairs.push((k.trim().to_string(), v.trim().to_string()));
            }
        } else {
            flag_pairs.push((key, value));
        }
    }
    let mut opts = Options::default();
    // Deduplicate so later flags override earlier ones and every flag
    // overrides the file.
    let mut merged: BTreeMap<String, String> = BTreeMap::new();
    for (k, v) in file_pairs.into_iter().chain(flag_pairs) {
        merged.insert(k, v);
    }
    for (k, v) in merged {
        apply(&mut opts, &k, &v)?;
    }
    if opts.so > opts.mo_lo || opts.mo_hi > opts.bo {
        return Err("order constraint violated: need so <= mo <= bo".into());
    }
    if opts.runs == 0 {
        return Err("--runs must be at least 1".into());
    }
    Ok(opts)
}
