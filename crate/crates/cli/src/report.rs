//! Analytic reports: the per-mode closed-form table and the
//! channel-access surface, as plot-ready CSV.

use crate::opts::Options;
use dsme_capr::analytic::{
    access_time_surface, analytics_notes, expected_cap_wait_slots, fraction_tau,
    mode_channel_access, theoretical_dwell_ms,
};
use dsme_capr::config::Mode;
use dsme_capr::rational::Ratio;
use std::fmt::Write as _;

pub fn out_dir(opts: &Options) -> Result<(), String> {
    std::fs::create_dir_all(&opts.out)
        .map_err(|e| format!("cannot create {}: {e}", opts.out.display()))
}

fn write_file(opts: &Options, name: &str, content: &str) -> Result<(), String> {
    let path = opts.out.join(name);
    std::fs::write(&path, content).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Closed-form table: one row per (mode, mo).
pub fn analytics(opts: Options) -> Result<(), String> {
    out_dir(&opts)?;
    let mut csv = String::from("mode,so,mo,tau,wait_slots,access_time_slots,dwell_ms\n");
    for mo in opts.mo_lo..=opts.mo_hi {
        for mode in Mode::ALL {
            let tau = fraction_tau(mode, opts.so, mo).map_err(|e| e.to_string())?;
            let wait = expected_cap_wait_slots(mode, opts.so, mo).map_err(|e| e.to_string())?;
            let access = mode_channel_access(mode, opts.so, mo, opts.be, opts.denominator)
                .map_err(|e| e.to_string())?;
            let dwell = theoretical_dwell_ms(mode, opts.so, mo).map_err(|e| e.to_string())?;
            writeln!(
                csv,
                "{mode},{},{mo},{},{},{},{}",
                opts.so,
                tau.render(6),
                wait.render(6),
                access.render(4),
                dwell.render(3),
            )
            .unwrap();
        }
    }
    write_file(&opts, "analytics.csv", &csv)?;
    let mut notes = String::new();
    for n in analytics_notes() {
        notes.push_str(&n);
        notes.push('\n');
    }
    write_file(&opts, "analytics_notes.txt", &notes)
}

/// Channel-access surface over the configured grids.
pub fn surface(opts: Options) -> Result<(), String> {
    out_dir(&opts)?;
    let n_cap: Vec<Ratio> = (opts.n_cap_grid.0..=opts.n_cap_grid.1)
        .map(|v| Ratio::from_int(v as i128))
        .collect();
    let slots: Vec<Ratio> = (opts.slots_per_cap_grid.0..=opts.slots_per_cap_grid.1)
        .map(|v| Ratio::from_int(v as i128))
        .collect();
    if n_cap.is_empty() || slots.is_empty() {
        return Err("surface grids must be non-empty".into());
    }
    let rows = access_time_surface(opts.so, opts.mo_hi, opts.be, opts.denominator, &n_cap, &slots)
        .map_err(|e| e.to_string())?;
    let mut csv = String::from("n_cap,slots_per_cap,access_time_slots\n");
    for r in rows {
        writeln!(
            csv,
            "{},{},{:.6}",
            r.n_cap.to_f64(),
            r.slots_per_cap.to_f64(),
            r.access_time_slots.to_f64()
        )
        .unwrap();
    }
    write_file(&opts, "surface.csv", &csv)
}
