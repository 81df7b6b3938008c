//! CSV and JSON renderings of a cost ledger.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{CostLedger, Counters};
use crate::error::Result;

fn header_lines(header: Option<&str>) -> String {
    header.map(|h| format!("{h}\n")).unwrap_or_default()
}

/// Per frame and core counters, then one summary row per frame.
pub fn cost_csv(ledger: &CostLedger, header: Option<&str>) -> String {
    let mut s = header_lines(header);
    let _ = writeln!(
        s,
        "frame,core,{},busy_us,sync_us,completion_us,energy_uj",
        Counters::NAMES.join(",")
    );
    for f in &ledger.frames {
        for c in &f.cores {
            let counts: Vec<String> = c.counters.values().iter().map(u64::to_string).collect();
            let _ = writeln!(
                s,
                "{},{},{},{:.6},{:.6},{:.6},{:.6}",
                f.frame,
                c.core,
                counts.join(","),
                c.busy_us,
                c.sync_us,
                c.completion_us,
                c.energy_uj
            );
        }
    }
    let _ = writeln!(s, "\nframe,latency_us,total_time_us,energy_uj");
    for f in &ledger.frames {
        let _ = writeln!(
            s,
            "{},{:.6},{:.6},{:.6}",
            f.frame, f.latency_us, f.total_time_us, f.energy_uj
        );
    }
    s
}

pub fn write_cost_csv(ledger: &CostLedger, header: Option<&str>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, cost_csv(ledger, header))?;
    Ok(())
}

/// Full ledger, busy intervals included.
pub fn write_cost_json(ledger: &CostLedger, header: Option<&str>, path: impl AsRef<Path>) -> Result<()> {
    let body = serde_json::to_value(ledger)?;
    let doc = match header {
        Some(h) => serde_json::json!({ "header": h, "ledger": body }),
        None => body,
    };
    fs::write(path, serde_json::to_string_pretty(&doc)? + "\n")?;
    Ok(())
}

/// Busy intervals as `frame,core,start_us,end_us,phase`.
pub fn timeline_csv(ledger: &CostLedger, header: Option<&str>) -> String {
    let mut s = header_lines(header);
    s.push_str("frame,core,start_us,end_us,phase\n");
    for f in &ledger.frames {
        for c in &f.cores {
            for i in &c.busy {
                let phase = match i.phase {
                    crate::dfengine::Phase::Forward => "forward",
                    crate::dfengine::Phase::Recurrent => "recurrent",
                };
                let _ = writeln!(
                    s,
                    "{},{},{:.6},{:.6},{phase}",
                    f.frame, c.core, i.start_us, i.end_us
                );
            }
        }
    }
    s
}

pub fn write_timeline_csv(ledger: &CostLedger, header: Option<&str>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, timeline_csv(ledger, header))?;
    Ok(())
}
