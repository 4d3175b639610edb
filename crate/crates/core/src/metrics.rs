//! Trace reduction to the reported quantities (packet reception ratio,
//! queue lengths, allocated GTS counts, command dwell times) with
//! hop-distance grouping, and Student-t aggregation across runs.

use std::collections::BTreeMap;

use crate::config::SYMBOL_DURATION_US;
use crate::frame::TimingTable;
use crate::sim::{RawTrace, Scenario, TraceRecord};
use crate::traffic::NodeId;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("trace is truncated (no run end marker)")]
    TruncatedTrace,
    #[error("packet conservation violated: {generated} generated vs {accounted} accounted")]
    ConservationBroken { generated: u64, accounted: u64 },
    #[error("aggregation needs at least two records per cell, got {0}")]
    TooFewRecords(usize),
    #[error("only the 0.95 confidence level is tabulated")]
    UnsupportedConfidence,
}

/// Dwell statistics for one command class.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DwellStats {
    pub samples: u64,
    pub mean_ms: f64,
    pub max_ms: f64,
}

/// The reduced quantities of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub generated: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub residual: u64,
    /// End-to-end delivered/generated.
    pub prr: f64,
    /// Mean GTS queue length over all schedule-boundary samples of all
    /// nodes in the hop group.
    pub mean_queue_by_hop: BTreeMap<u16, f64>,
    /// Largest usable allocation count observed per beacon interval in
    /// the hop group (parity pairs averaged for alternating reduction).
    pub max_gts_by_hop: BTreeMap<u16, f64>,
    pub dwell_by_class: BTreeMap<&'static str, DwellStats>,
    pub dwell_overall: DwellStats,
    pub conversions: u64,
    pub violations_in_trace: u64,
}

impl MetricsRecord {
    pub fn max_gts_network(&self) -> f64 {
        self.max_gts_by_hop.values().cloned().fold(0.0, f64::max)
    }
}

fn dwell_ms(sym: u64) -> f64 {
    (sym * SYMBOL_DURATION_US) as f64 / 1000.0
}

/// Reduce one complete trace.
pub fn reduce(trace: &RawTrace, scenario: &Scenario) -> Result<MetricsRecord, MetricsError> {
    if !trace.is_complete() {
        return Err(MetricsError::TruncatedTrace);
    }
    let timing = TimingTable::from_config(&scenario.protocol);
    let hops = &scenario.topology.hops;
    let acr = scenario.protocol.mode == crate::config::Mode::Acr;

    let mut generated = 0u64;
    let mut delivered = 0u64;
    let mut dropped = 0u64;
    let mut residual = 0u64;
    let mut conversions = 0u64;
    let mut violations = 0u64;

    let mut queue_sum: BTreeMap<u16, (f64, u64)> = BTreeMap::new();
    // node -> bi -> max usable sample
    let mut alloc_max: BTreeMap<NodeId, BTreeMap<u64, u16>> = BTreeMap::new();
    let mut dwell_sum: BTreeMap<&'static str, (u64, f64, f64)> = BTreeMap::new();

    for r in &trace.records {
        match *r {
            TraceRecord::Generated { .. } => generated += 1,
            TraceRecord::Delivered { .. } => delivered += 1,
            TraceRecord::Dropped { .. } => dropped += 1,
            TraceRecord::RunEnd { residual: res, .. } => residual = res as u64,
            TraceRecord::Converted { .. } => conversions += 1,
            TraceRecord::Violation { .. } => violations += 1,
            TraceRecord::QueueSample { node, gts_len, .. } => {
                let hop = hops[node as usize];
                let cell = queue_sum.entry(hop).or_insert((0.0, 0));
                cell.0 += gts_len as f64;
                cell.1 += 1;
            }
            TraceRecord::AllocSample { t, node, usable } => {
                let bi = t / timing.symbols_per_bi;
                let per_bi = alloc_max.entry(node).or_default();
                let m = per_bi.entry(bi).or_insert(0);
                *m = (*m).max(usable);
            }
            TraceRecord::CommandSent { class, dwell, .. } => {
                let cell = dwell_sum.entry(class.as_str()).or_insert((0, 0.0, 0.0));
                cell.0 += 1;
                cell.1 += dwell_ms(dwell);
                cell.2 = cell.2.max(dwell_ms(dwell));
            }
            _ => {}
        }
    }

    let accounted = delivered + dropped + residual;
    if generated != accounted {
        return Err(MetricsError::ConservationBroken {
            generated,
            accounted,
        });
    }

    let mean_queue_by_hop = queue_sum
        .into_iter()
        .map(|(hop, (sum, n))| (hop, if n == 0 { 0.0 } else { sum / n as f64 }))
        .collect();

    // Per node: the alternating mode averages adjacent interval pairs
    // (its schedule period spans two intervals); others take the plain
    // per-interval maximum.
    let mut max_gts_by_hop: BTreeMap<u16, f64> = BTreeMap::new();
    for (node, per_bi) in alloc_max {
        let node_max = if acr {
            let mut best: f64 = 0.0;
            for (&bi, &m) in &per_bi {
                if bi % 2 == 0 {
                    let partner = per_bi.get(&(bi + 1)).copied().unwrap_or(0);
                    best = best.max((m as f64 + partner as f64) / 2.0);
                }
            }
            best
        } else {
            per_bi.values().copied().max().unwrap_or(0) as f64
        };
        let hop = hops[node as usize];
        let cell = max_gts_by_hop.entry(hop).or_insert(0.0);
        *cell = cell.max(node_max);
    }

    let mut dwell_by_class = BTreeMap::new();
    let mut all = (0u64, 0.0f64, 0.0f64);
    for (class, (n, sum, max)) in dwell_sum {
        dwell_by_class.insert(
            class,
            DwellStats {
                samples: n,
                mean_ms: if n == 0 { 0.0 } else { sum / n as f64 },
                max_ms: max,
            },
        );
        all.0 += n;
        all.1 += sum;
        all.2 = all.2.max(max);
    }
    let dwell_overall = DwellStats {
        samples: all.0,
        mean_ms: if all.0 == 0 { 0.0 } else { all.1 / all.0 as f64 },
        max_ms: all.2,
    };

    Ok(MetricsRecord {
        generated,
        delivered,
        dropped,
        residual,
        prr: if generated == 0 {
            1.0
        } else {
            delivered as f64 / generated as f64
        },
        mean_queue_by_hop,
        max_gts_by_hop,
        dwell_by_class,
        dwell_overall,
        conversions,
        violations_in_trace: violations,
    })
}

/// Two-sided 0.975 Student-t quantiles for 1..=30 degrees of freedom.
const T_975: [f64; 30] = [
    12.7062, 4.3027, 3.1824, 2.7764, 2.5706, 2.4469, 2.3646, 2.3060, 2.2622, 2.2281, 2.2010,
    2.1788, 2.1604, 2.1448, 2.1314, 2.1199, 2.1098, 2.1009, 2.0930, 2.0860, 2.0796, 2.0739,
    2.0687, 2.0639, 2.0595, 2.0555, 2.0518, 2.0484, 2.0452, 2.0423,
];

pub fn t_quantile_975(dof: usize) -> f64 {
    if dof == 0 {
        f64::INFINITY
    } else if dof <= 30 {
        T_975[dof - 1]
    } else {
        1.96
    }
}

/// A mean with its confidence interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n: usize,
}

/// Student-t interval over independent run values.
pub fn t_interval(values: &[f64], confidence: f64) -> Result<Interval, MetricsError> {
    if (confidence - 0.95).abs() > 1e-9 {
        return Err(MetricsError::UnsupportedConfidence);
    }
    let n = values.len();
    if n < 2 {
        return Err(MetricsError::TooFewRecords(n));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    let half = t_quantile_975(n - 1) * (var / n as f64).sqrt();
    Ok(Interval {
        mean,
        ci_lo: mean - half,
        ci_hi: mean + half,
        n,
    })
}

/// One aggregated cell: a metric, optionally per hop group.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub metric: String,
    pub hop: Option<u16>,
    pub interval: Interval,
}

/// Aggregate per-run records into mean +- CI cells: reception ratio,
/// per-hop queue and allocation figures, and dwell means.
pub fn aggregate(records: &[MetricsRecord], confidence: f64) -> Result<Vec<SummaryRow>, MetricsError> {
    if records.len() < 2 {
        return Err(MetricsError::TooFewRecords(records.len()));
    }
    let mut rows = Vec::new();
    let prr: Vec<f64> = records.iter().map(|r| r.prr).collect();
    rows.push(SummaryRow {
        metric: "prr".into(),
        hop: None,
        interval: t_interval(&prr, confidence)?,
    });
    let dwell: Vec<f64> = records.iter().map(|r| r.dwell_overall.mean_ms).collect();
    rows.push(SummaryRow {
        metric: "dwell_ms".into(),
        hop: None,
        interval: t_interval(&dwell, confidence)?,
    });
    for class in ["request", "response", "notify"] {
        let vals: Vec<f64> = records
            .iter()
            .map(|r| r.dwell_by_class.get(class).map(|d| d.mean_ms).unwrap_or(0.0))
            .collect();
        rows.push(SummaryRow {
            metric: format!("dwell_ms_{class}"),
            hop: None,
            interval: t_interval(&vals, confidence)?,
        });
    }
    let hops: Vec<u16> = records
        .iter()
        .flat_map(|r| r.mean_queue_by_hop.keys().copied())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    for hop in hops {
        let q: Vec<f64> = records
            .iter()
            .map(|r| r.mean_queue_by_hop.get(&hop).copied().unwrap_or(0.0))
            .collect();
        rows.push(SummaryRow {
            metric: "mean_queue".into(),
            hop: Some(hop),
            interval: t_interval(&q, confidence)?,
        });
        let g: Vec<f64> = records
            .iter()
            .map(|r| r.max_gts_by_hop.get(&hop).copied().unwrap_or(0.0))
            .collect();
        rows.push(SummaryRow {
            metric: "max_gts".into(),
            hop: Some(hop),
            interval: t_interval(&g, confidence)?,
        });
    }
    Ok(rows)
}
